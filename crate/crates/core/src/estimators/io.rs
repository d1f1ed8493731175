//! CSV encoding of batches: `u,y,z` for hard batches, `p_0,…,p_{K−1},y,z` for soft ones.

use std::io::{Read, Write};

use super::{SampleBatch, SoftBatch};
use crate::error::{Error, Result};

/// A batch read from CSV, hard or soft depending on the header.
#[derive(Clone, Debug, PartialEq)]
pub enum Batch {
    Hard(SampleBatch),
    Soft(SoftBatch),
}

fn parse_index(field: &str, row: usize, col: &str) -> Result<usize> {
    field.trim().parse::<usize>().map_err(|_| {
        Error::Parse(format!(
            "row {row}: column {col}: expected a category index, got {field:?}"
        ))
    })
}

fn parse_prob(field: &str, row: usize, col: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        Error::Parse(format!(
            "row {row}: column {col}: expected a probability, got {field:?}"
        ))
    })
}

/// Reads either layout, deciding from the header.
pub fn read_batch<R: Read>(reader: R) -> Result<Batch> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let pos = |name: &str| header.iter().position(|h| h == name);
    let (iy, iz) = match (pos("y"), pos("z")) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Parse("header must contain y and z columns".into())),
    };
    let mut p_cols: Vec<(usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.strip_prefix("p_")
                .and_then(|k| k.parse::<usize>().ok())
                .map(|k| (k, i))
        })
        .collect();
    p_cols.sort_unstable();
    let hard_col = pos("u");

    let (mut u, mut y, mut z, mut probs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        // header is line 1
        let row = r + 2;
        let rec = rec.map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
        let field = |i: usize| {
            rec.get(i)
                .ok_or_else(|| Error::Parse(format!("row {row}: missing field {i}")))
        };
        y.push(parse_index(field(iy)?, row, "y")?);
        z.push(parse_index(field(iz)?, row, "z")?);
        if let Some(iu) = hard_col {
            u.push(parse_index(field(iu)?, row, "u")?);
        } else {
            for &(k, i) in &p_cols {
                probs.push(parse_prob(field(i)?, row, &format!("p_{k}"))?);
            }
        }
    }
    if y.is_empty() {
        return Err(Error::Empty("batch file has no data rows".into()));
    }
    let k_of = |c: &[usize]| c.iter().max().map_or(1, |m| m + 1);
    let (ky, kz) = (k_of(&y).max(1), k_of(&z).max(1));
    if hard_col.is_some() {
        return Ok(Batch::Hard(SampleBatch::new(k_of(&u), ky, kz, u, y, z)?));
    }
    if p_cols.is_empty() {
        return Err(Error::Parse(
            "header needs a u column or p_0..p_K columns".into(),
        ));
    }
    if p_cols.iter().enumerate().any(|(i, &(k, _))| i != k) {
        return Err(Error::Parse(
            "posterior columns must be p_0..p_{K-1} without gaps".into(),
        ));
    }
    Ok(Batch::Soft(SoftBatch::new(
        p_cols.len(),
        ky,
        kz,
        probs,
        y,
        z,
    )?))
}

pub fn write_hard<W: Write>(batch: &SampleBatch, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["u", "y", "z"])?;
    for i in 0..batch.len() {
        w.write_record([
            batch.u()[i].to_string(),
            batch.y()[i].to_string(),
            batch.z()[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_soft<W: Write>(batch: &SoftBatch, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let k = batch.width();
    let mut header: Vec<String> = (0..k).map(|i| format!("p_{i}")).collect();
    header.extend(["y".to_string(), "z".to_string()]);
    w.write_record(&header)?;
    for (i, row) in batch.probs().chunks(k).enumerate() {
        let mut rec: Vec<String> = row.iter().map(|p| p.to_string()).collect();
        rec.push(batch.y()[i].to_string());
        rec.push(batch.z()[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
