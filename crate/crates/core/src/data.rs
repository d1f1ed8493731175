//! Tabular datasets: schema-driven CSV ingestion, synthetic generators with a known
//! latent joint, and leak-free per-fold encoding.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::finite_dist::JointPmf3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Feature,
    Target,
    Sensitive,
    Ignore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: ColumnRole,
    /// Declared category order; values outside it are missing for target and sensitive columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Schema = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        for role in [ColumnRole::Target, ColumnRole::Sensitive] {
            let n = self.columns.iter().filter(|c| c.role == role).count();
            if n != 1 {
                return Err(Error::Parse(
                    format!("schema needs exactly one {role:?} column, found {n}").to_lowercase(),
                ));
            }
        }
        let mut names = BTreeSet::new();
        if let Some(c) = self.columns.iter().find(|c| !names.insert(c.name.as_str())) {
            return Err(Error::Parse(format!(
                "duplicate column {:?} in schema",
                c.name
            )));
        }
        Ok(())
    }

    pub fn column(&self, role: ColumnRole) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.role == role)
    }

    pub fn features(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns
            .iter()
            .filter(|c| c.role == ColumnRole::Feature)
    }
}

/// One source column and the encoded columns it occupies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: ColumnKind,
    /// One-hot order for categorical columns; empty for numeric ones.
    pub categories: Vec<String>,
    /// Takes a single value on every row.
    pub constant: bool,
}

impl FeatureColumn {
    pub fn width(&self) -> usize {
        match self.kind {
            ColumnKind::Numeric => 1,
            ColumnKind::Categorical => self.categories.len(),
        }
    }
}

/// Encoded features with label and group indices.
///
/// Numeric columns hold raw values with `NaN` marking a missing cell; imputation and
/// standardization happen per fold in [`encode_splits`].
#[derive(Clone, Debug)]
pub struct TabularDataset {
    features: Array2<f64>,
    columns: Vec<FeatureColumn>,
    y: Vec<usize>,
    z: Vec<usize>,
    y_name: String,
    z_name: String,
    y_labels: Vec<String>,
    z_labels: Vec<String>,
}

impl PartialEq for TabularDataset {
    fn eq(&self, o: &Self) -> bool {
        self.features.dim() == o.features.dim()
            && self
                .features
                .iter()
                .zip(o.features.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.columns == o.columns
            && self.y == o.y
            && self.z == o.z
            && self.y_name == o.y_name
            && self.z_name == o.z_name
            && self.y_labels == o.y_labels
            && self.z_labels == o.z_labels
    }
}

/// What ingestion dropped or noticed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub dropped_rows: usize,
    pub constant_columns: Vec<String>,
}

impl TabularDataset {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        features: Array2<f64>,
        columns: Vec<FeatureColumn>,
        y: Vec<usize>,
        z: Vec<usize>,
        y_name: &str,
        z_name: &str,
        y_labels: Vec<String>,
        z_labels: Vec<String>,
    ) -> Result<Self> {
        let width: usize = columns.iter().map(FeatureColumn::width).sum();
        if features.ncols() != width || features.nrows() != y.len() || y.len() != z.len() {
            return Err(Error::DimensionMismatch(
                "feature matrix, columns and labels disagree".into(),
            ));
        }
        if y_labels.len() < 2 || z_labels.len() < 2 {
            return Err(Error::Domain(
                "target and sensitive attribute need at least two categories".into(),
            ));
        }
        if y.iter().any(|&v| v >= y_labels.len()) || z.iter().any(|&v| v >= z_labels.len()) {
            return Err(Error::DimensionMismatch(
                "label index beyond its category list".into(),
            ));
        }
        Ok(Self {
            features,
            columns,
            y,
            z,
            y_name: y_name.to_owned(),
            z_name: z_name.to_owned(),
            y_labels,
            z_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn columns(&self) -> &[FeatureColumn] {
        &self.columns
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn z(&self) -> &[usize] {
        &self.z
    }

    pub fn k_y(&self) -> usize {
        self.y_labels.len()
    }

    pub fn k_z(&self) -> usize {
        self.z_labels.len()
    }

    pub fn y_labels(&self) -> &[String] {
        &self.y_labels
    }

    pub fn z_labels(&self) -> &[String] {
        &self.z_labels
    }

    /// Whether each encoded column is numeric.
    pub fn numeric_mask(&self) -> Vec<bool> {
        self.columns
            .iter()
            .flat_map(|c| std::iter::repeat_n(c.kind == ColumnKind::Numeric, c.width()))
            .collect()
    }

    /// Encoded column names, `name=category` for one-hot columns.
    pub fn encoded_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .flat_map(|c| match c.kind {
                ColumnKind::Numeric => vec![c.name.clone()],
                ColumnKind::Categorical => c
                    .categories
                    .iter()
                    .map(|k| format!("{}={k}", c.name))
                    .collect(),
            })
            .collect()
    }

    /// Schema under which [`write_csv`](Self::write_csv) output loads back to `self`.
    pub fn schema(&self) -> Schema {
        let mut columns: Vec<ColumnSpec> = self
            .columns
            .iter()
            .map(|c| ColumnSpec {
                name: c.name.clone(),
                kind: c.kind,
                role: ColumnRole::Feature,
                categories: (c.kind == ColumnKind::Categorical).then(|| c.categories.clone()),
            })
            .collect();
        for (name, role, labels) in [
            (&self.y_name, ColumnRole::Target, &self.y_labels),
            (&self.z_name, ColumnRole::Sensitive, &self.z_labels),
        ] {
            columns.push(ColumnSpec {
                name: name.clone(),
                kind: ColumnKind::Categorical,
                role,
                categories: Some(labels.clone()),
            });
        }
        Schema { columns }
    }

    /// Rows `idx` in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> TabularDataset {
        TabularDataset {
            features: self.features.select(ndarray::Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            z: idx.iter().map(|&i| self.z[i]).collect(),
            ..self.clone()
        }
    }

    /// Source-column form: categories by name, missing cells empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        header.extend([self.y_name.as_str(), self.z_name.as_str()]);
        w.write_record(&header)?;
        for (i, row) in self.features.rows().into_iter().enumerate() {
            let mut rec = Vec::with_capacity(header.len());
            let mut off = 0;
            for c in &self.columns {
                rec.push(match c.kind {
                    ColumnKind::Numeric if row[off].is_nan() => String::new(),
                    ColumnKind::Numeric => row[off].to_string(),
                    ColumnKind::Categorical => (0..c.width())
                        .find(|&j| row[off + j] == 1.0)
                        .map_or_else(String::new, |j| c.categories[j].clone()),
                });
                off += c.width();
            }
            rec.push(self.y_labels[self.y[i]].clone());
            rec.push(self.z_labels[self.z[i]].clone());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// SHA-256 of the canonical CSV form, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        Sha256::digest(&buf)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "?" | "NA" | "NaN" | "nan")
}

/// Reads a CSV according to `schema`, one-hot encoding categorical features.
pub fn load_csv<R: Read>(reader: R, schema: &Schema) -> Result<(TabularDataset, LoadReport)> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let pos: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| *h == c.name)
                .ok_or_else(|| Error::Parse(format!("column {:?} not found in header", c.name)))
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<csv::StringRecord> = Vec::new();
    let mut report = LoadReport::default();
    let target = schema.column(ColumnRole::Target).expect("validated");
    let sensitive = schema.column(ColumnRole::Sensitive).expect("validated");
    let ti = schema
        .columns
        .iter()
        .position(|c| c.role == ColumnRole::Target)
        .expect("validated");
    let si = schema
        .columns
        .iter()
        .position(|c| c.role == ColumnRole::Sensitive)
        .expect("validated");
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("row {}: {e}", r + 2)))?;
        report.rows_read += 1;
        let usable = |spec: &ColumnSpec, idx: usize| {
            let cell = rec.get(pos[idx]).unwrap_or("");
            !is_missing(cell)
                && spec
                    .categories
                    .as_ref()
                    .is_none_or(|cats| cats.iter().any(|c| c == cell))
        };
        if usable(target, ti) && usable(sensitive, si) {
            rows.push(rec);
        } else {
            report.dropped_rows += 1;
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty("no usable rows".into()));
    }

    let categories = |idx: usize| -> Vec<String> {
        let spec = &schema.columns[idx];
        spec.categories.clone().unwrap_or_else(|| {
            rows.iter()
                .map(|r| r.get(pos[idx]).unwrap_or(""))
                .filter(|c| !is_missing(c))
                .map(str::to_owned)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        })
    };
    let index_of = |labels: &[String], cell: &str| labels.iter().position(|l| l == cell);

    let y_labels = categories(ti);
    let z_labels = categories(si);
    let y: Vec<usize> = rows
        .iter()
        .map(|r| index_of(&y_labels, &r[pos[ti]]).expect("filtered"))
        .collect();
    let z: Vec<usize> = rows
        .iter()
        .map(|r| index_of(&z_labels, &r[pos[si]]).expect("filtered"))
        .collect();

    let mut columns = Vec::new();
    let mut blocks: Vec<Vec<f64>> = Vec::new();
    for (idx, spec) in schema.columns.iter().enumerate() {
        if spec.role != ColumnRole::Feature {
            continue;
        }
        let (col, block) = match spec.kind {
            ColumnKind::Numeric => {
                let mut vals = Vec::with_capacity(rows.len());
                for (r, rec) in rows.iter().enumerate() {
                    let cell = &rec[pos[idx]];
                    vals.push(if is_missing(cell) {
                        f64::NAN
                    } else {
                        cell.parse::<f64>().map_err(|_| {
                            Error::Parse(format!(
                                "column {}: cannot parse {cell:?} as a number (data row {})",
                                spec.name,
                                r + 1
                            ))
                        })?
                    });
                }
                let distinct: BTreeSet<u64> = vals
                    .iter()
                    .filter(|v| !v.is_nan())
                    .map(|v| v.to_bits())
                    .collect();
                let col = FeatureColumn {
                    name: spec.name.clone(),
                    kind: ColumnKind::Numeric,
                    categories: Vec::new(),
                    constant: distinct.len() <= 1,
                };
                (col, vals)
            }
            ColumnKind::Categorical => {
                let cats = categories(idx);
                let w = cats.len();
                let mut block = vec![0.0; rows.len() * w];
                let mut seen = BTreeSet::new();
                for (r, rec) in rows.iter().enumerate() {
                    let cell = &rec[pos[idx]];
                    if is_missing(cell) {
                        continue;
                    }
                    let j = index_of(&cats, cell).ok_or_else(|| {
                        Error::Parse(format!(
                            "column {}: undeclared category {cell:?} (data row {})",
                            spec.name,
                            r + 1
                        ))
                    })?;
                    seen.insert(j);
                    block[r * w + j] = 1.0;
                }
                let col = FeatureColumn {
                    name: spec.name.clone(),
                    kind: ColumnKind::Categorical,
                    categories: cats,
                    constant: seen.len() <= 1,
                };
                (col, block)
            }
        };
        if col.constant {
            report.constant_columns.push(col.name.clone());
        }
        columns.push(col);
        blocks.push(block);
    }

    let width: usize = columns.iter().map(FeatureColumn::width).sum();
    let mut features = Array2::zeros((rows.len(), width));
    let mut off = 0;
    for (col, block) in columns.iter().zip(&blocks) {
        let w = col.width();
        for r in 0..rows.len() {
            for j in 0..w {
                features[[r, off + j]] = block[r * w + j];
            }
        }
        off += w;
    }
    let ds = TabularDataset::new(
        features,
        columns,
        y,
        z,
        &target.name,
        &sensitive.name,
        y_labels,
        z_labels,
    )?;
    Ok((ds, report))
}

pub fn load_csv_path(
    path: impl AsRef<Path>,
    schema: &Schema,
) -> Result<(TabularDataset, LoadReport)> {
    load_csv(std::fs::File::open(path)?, schema)
}

/// Recipe for a dataset drawn from a latent `(x, y, z)` joint.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub joint: JointPmf3,
    pub n: usize,
    /// Feature mean per latent `x` category; all of equal length.
    pub means: Vec<Vec<f64>>,
    /// Standard deviation of the isotropic Gaussian noise around each mean.
    pub noise_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Means `2·e_x` in `card_x` dimensions.
    pub fn standard(joint: JointPmf3, n: usize, noise_scale: f64, seed: u64) -> Self {
        let kx = joint.card()[0];
        let means = (0..kx)
            .map(|x| (0..kx).map(|j| if j == x { 2.0 } else { 0.0 }).collect())
            .collect();
        Self {
            joint,
            n,
            means,
            noise_scale,
            seed,
        }
    }
}

/// A synthetic draw with its latent categories and generating law.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub dataset: TabularDataset,
    pub joint: JointPmf3,
    pub x: Vec<usize>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let [kx, ky, kz] = spec.joint.card();
    if spec.n == 0 {
        return Err(Error::Domain("sample count must be positive".into()));
    }
    if spec.means.len() != kx {
        return Err(Error::DimensionMismatch(format!(
            "{} mean vectors for {kx} x categories",
            spec.means.len()
        )));
    }
    let d = spec.means[0].len();
    if spec.means.iter().any(|m| m.len() != d) || !(spec.noise_scale >= 0.0) {
        return Err(Error::Domain(
            "means must share a dimension and noise must be non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cells = WeightedIndex::new(spec.joint.probs())
        .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
    let mut features = Array2::zeros((spec.n, d));
    let (mut xs, mut y, mut z) = (
        Vec::with_capacity(spec.n),
        Vec::with_capacity(spec.n),
        Vec::with_capacity(spec.n),
    );
    for i in 0..spec.n {
        let c = cells.sample(&mut rng);
        let x = c / (ky * kz);
        xs.push(x);
        y.push((c / kz) % ky);
        z.push(c % kz);
        for j in 0..d {
            let e: f64 = StandardNormal.sample(&mut rng);
            features[[i, j]] = spec.means[x][j] + spec.noise_scale * e;
        }
    }
    let columns = (0..d)
        .map(|j| FeatureColumn {
            name: format!("f{j}"),
            kind: ColumnKind::Numeric,
            categories: Vec::new(),
            constant: false,
        })
        .collect();
    let labels = |k: usize| (0..k).map(|v| v.to_string()).collect();
    let dataset = TabularDataset::new(features, columns, y, z, "y", "z", labels(ky), labels(kz))?;
    Ok(SyntheticData {
        dataset,
        joint: spec.joint.clone(),
        x: xs,
    })
}

/// Train-fold statistics of one encoded column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub numeric: bool,
    pub median: f64,
    pub mean: f64,
    pub sd: f64,
}

/// Median imputation then standardization of numeric columns; one-hot columns pass through.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub columns: Vec<ColumnStats>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>, numeric: &[bool]) -> Self {
        let columns = x
            .columns()
            .into_iter()
            .zip(numeric)
            .map(|(col, &is_num)| {
                if !is_num {
                    return ColumnStats {
                        numeric: false,
                        median: 0.0,
                        mean: 0.0,
                        sd: 1.0,
                    };
                }
                let mut present: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
                present.sort_by(f64::total_cmp);
                let median = match present.len() {
                    0 => 0.0,
                    n if n % 2 == 1 => present[n / 2],
                    n => 0.5 * (present[n / 2 - 1] + present[n / 2]),
                };
                let n = col.len().max(1) as f64;
                let filled = || col.iter().map(|&v| if v.is_nan() { median } else { v });
                let mean = filled().sum::<f64>() / n;
                let var = filled().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let sd = if var > 1e-24 { var.sqrt() } else { 1.0 };
                ColumnStats {
                    numeric: true,
                    median,
                    mean,
                    sd,
                }
            })
            .collect();
        Self { columns }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (mut col, s) in out.columns_mut().into_iter().zip(&self.columns) {
            if s.numeric {
                col.mapv_inplace(|v| (if v.is_nan() { s.median } else { v } - s.mean) / s.sd);
            }
        }
        out
    }
}

/// Encoded rows of one role within a fold.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitView {
    pub rows: Vec<usize>,
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub z: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: SplitView,
    pub val: SplitView,
    pub test: SplitView,
    pub stats: Standardizer,
}

/// Test fold `i`, validation fold `(i + 1) mod k`, training on the rest.
pub fn encode_splits(ds: &TabularDataset, folds: &[usize], k: usize) -> Result<Vec<FoldSplit>> {
    if k < 3 {
        return Err(Error::Domain(format!(
            "k = {k}: a validation fold needs k >= 3"
        )));
    }
    if folds.len() != ds.len() {
        return Err(Error::DimensionMismatch(
            "fold assignment length differs from dataset".into(),
        ));
    }
    if let Some(&f) = folds.iter().find(|&&f| f >= k) {
        return Err(Error::DimensionMismatch(format!(
            "fold index {f} not below {k}"
        )));
    }
    let numeric = ds.numeric_mask();
    (0..k)
        .map(|i| {
            let val_fold = (i + 1) % k;
            let pick = |pred: &dyn Fn(usize) -> bool| {
                (0..ds.len())
                    .filter(|&r| pred(folds[r]))
                    .collect::<Vec<_>>()
            };
            let train_rows = pick(&|f| f != i && f != val_fold);
            let stats = Standardizer::fit(
                ds.features.select(ndarray::Axis(0), &train_rows).view(),
                &numeric,
            );
            let view = |rows: Vec<usize>| SplitView {
                x: stats.apply(ds.features.select(ndarray::Axis(0), &rows).view()),
                y: rows.iter().map(|&r| ds.y[r]).collect(),
                z: rows.iter().map(|&r| ds.z[r]).collect(),
                rows,
            };
            Ok(FoldSplit {
                fold: i,
                train: view(train_rows),
                val: view(pick(&|f| f == val_fold)),
                test: view(pick(&|f| f == i)),
                stats: stats.clone(),
            })
        })
        .collect()
}
