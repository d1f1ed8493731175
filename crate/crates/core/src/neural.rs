//! A small multilayer perceptron with hand-written reverse-mode gradients.
//!
//! Rows of every matrix are samples. The model splits into a feature extractor
//! (the first `split` layers, output `h`) and a classifier head producing logits.

use ndarray::{Array1, Array2, ArrayView2, Axis as NdAxis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::soft_cmi_raw;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu if pre <= 0.0 => 0.0,
            _ => 1.0,
        }
    }
}

/// Dense layer computing `act(x W + b)`; `w` is `fan_in × fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    split: usize,
}

/// Widths and activation of a fully connected network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Number of leading layers forming the feature extractor.
    pub split: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            split: 2,
        }
    }
}

impl MlpModel {
    pub fn from_layers(layers: Vec<Layer>, split: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::DimensionMismatch(
                "model needs at least one layer".into(),
            ));
        }
        if split >= layers.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "split {split} beyond {} layers",
                layers.len()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} outputs {} but layer {} takes {}",
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                )));
            }
        }
        if let Some(i) = layers.iter().position(|l| l.b.len() != l.fan_out()) {
            return Err(Error::DimensionMismatch(format!(
                "layer {i} bias length differs from width"
            )));
        }
        Ok(Self { layers, split })
    }

    /// Glorot-uniform weights and zero biases; the last layer is linear.
    pub fn init(
        input: usize,
        outputs: usize,
        arch: &Architecture,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend(&arch.hidden);
        dims.push(outputs);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fi, fo) = (dims[i], dims[i + 1]);
                let limit = (6.0 / (fi + fo) as f64).sqrt();
                let w = Array2::from_shape_fn((fi, fo), |_| rng.random_range(-limit..=limit));
                let act = if i + 1 == n {
                    Activation::Identity
                } else {
                    arch.activation
                };
                Layer {
                    w,
                    b: Array1::zeros(fo),
                    act,
                }
            })
            .collect();
        Self::from_layers(layers, arch.split.min(n - 1))
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").fan_out()
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Layer::fan_out));
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters flattened layer by layer, weights row-major then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a model with {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut()
                .for_each(|w| *w = it.next().expect("length checked"));
            l.b.iter_mut()
                .for_each(|b| *b = it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn forward(&self, inputs: ArrayView2<f64>) -> Result<ForwardTrace> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input width {} but model expects {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let x = acts.last().map_or(inputs, |a| a.view());
            let z = x.dot(&l.w) + &l.b;
            acts.push(z.mapv(|v| l.act.apply(v)));
            pre.push(z);
        }
        if acts
            .last()
            .expect("nonempty")
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(Error::Numeric("non-finite logits in forward pass".into()));
        }
        Ok(ForwardTrace {
            inputs: inputs.to_owned(),
            pre,
            acts,
            split: self.split,
        })
    }

    /// Propagates `grad` (at the output of layer `to − 1`) back to the output of layer
    /// `from − 1`, accumulating parameter gradients into `param_grads` when given.
    fn backprop(
        &self,
        trace: &ForwardTrace,
        grad: &Array2<f64>,
        from: usize,
        to: usize,
        mut param_grads: Option<&mut [f64]>,
    ) -> Array2<f64> {
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.w.len() + l.b.len();
                Some(o)
            })
            .collect();
        let mut delta = grad.clone();
        for i in (from..to).rev() {
            let l = &self.layers[i];
            let mut dpre = delta;
            if l.act != Activation::Identity {
                dpre.zip_mut_with(&trace.pre[i], |d, &p| *d *= l.act.derivative(p));
            }
            if let Some(out) = param_grads.as_deref_mut() {
                let input = if i == 0 {
                    trace.inputs.view()
                } else {
                    trace.acts[i - 1].view()
                };
                let dw = input.t().dot(&dpre);
                let db = dpre.sum_axis(NdAxis(0));
                let o = offsets[i];
                for (dst, src) in out[o..o + dw.len()].iter_mut().zip(dw.iter()) {
                    *dst += src;
                }
                for (dst, src) in out[o + dw.len()..o + dw.len() + db.len()]
                    .iter_mut()
                    .zip(db.iter())
                {
                    *dst += src;
                }
            }
            delta = dpre.dot(&l.w.t());
        }
        delta
    }

    /// Exact gradient of a loss with respect to every parameter, in [`flat_params`](Self::flat_params) order.
    pub fn backward(&self, trace: &ForwardTrace, grad_logits: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.check_grad_shape(trace, grad_logits)?;
        let mut out = vec![0.0; self.param_count()];
        self.backprop(
            trace,
            &grad_logits.to_owned(),
            0,
            self.layers.len(),
            Some(&mut out),
        );
        Ok(out)
    }

    /// Gradient of a loss with respect to the features `h`, one row per sample.
    pub fn backward_to_features(
        &self,
        trace: &ForwardTrace,
        grad_logits: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        self.check_grad_shape(trace, grad_logits)?;
        Ok(self.backprop(
            trace,
            &grad_logits.to_owned(),
            self.split,
            self.layers.len(),
            None,
        ))
    }

    fn check_grad_shape(&self, trace: &ForwardTrace, g: ArrayView2<f64>) -> Result<()> {
        let logits = trace.logits();
        if g.dim() != logits.dim() || trace.acts.len() != self.layers.len() {
            return Err(Error::DimensionMismatch(
                "gradient does not match the forward trace".into(),
            ));
        }
        Ok(())
    }
}

/// Pre-activations and activations of every layer for one mini-batch.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    inputs: Array2<f64>,
    pre: Vec<Array2<f64>>,
    acts: Vec<Array2<f64>>,
    split: usize,
}

impl ForwardTrace {
    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }

    pub fn activations(&self) -> &[Array2<f64>] {
        &self.acts
    }

    /// Output of the feature extractor.
    pub fn features(&self) -> ArrayView2<'_, f64> {
        if self.split == 0 {
            self.inputs.view()
        } else {
            self.acts[self.split - 1].view()
        }
    }

    pub fn logits(&self) -> ArrayView2<'_, f64> {
        self.acts.last().expect("nonempty").view()
    }
}

/// Appends the one-hot encoding of `z` to each row of `x` when `sensitive` is set.
pub fn compose_input(
    x: ArrayView2<f64>,
    z: &[usize],
    k_z: usize,
    sensitive: bool,
) -> Result<Array2<f64>> {
    if !sensitive {
        return Ok(x.to_owned());
    }
    if z.len() != x.nrows() {
        return Err(Error::DimensionMismatch(
            "z length differs from row count".into(),
        ));
    }
    let d = x.ncols();
    let mut out = Array2::zeros((x.nrows(), d + k_z));
    out.slice_mut(ndarray::s![.., ..d]).assign(&x);
    for (i, &zi) in z.iter().enumerate() {
        if zi >= k_z {
            return Err(Error::DimensionMismatch(format!(
                "z[{i}] = {zi} not below {k_z}"
            )));
        }
        out[[i, d + zi]] = 1.0;
    }
    Ok(out)
}

/// Row-wise softmax.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut p = logits.to_owned();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

fn check_labels(logits: ArrayView2<f64>, labels: &[usize], name: &str) -> Result<()> {
    if labels.len() != logits.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{name} length differs from batch size"
        )));
    }
    if logits.nrows() == 0 {
        return Err(Error::Empty("empty batch".into()));
    }
    Ok(())
}

/// Mean cross-entropy and its gradient `(softmax − onehot)/|B|`.
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    check_labels(logits, labels, "labels")?;
    let k = logits.ncols();
    if let Some(i) = labels.iter().position(|&y| y >= k) {
        return Err(Error::DimensionMismatch(format!(
            "label {} at row {i} not below {k}",
            labels[i]
        )));
    }
    let n = logits.nrows() as f64;
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[labels[i]];
        grad[[i, labels[i]]] -= 1.0;
    }
    grad.mapv_inplace(|g| g / n);
    Ok((loss / n, grad))
}

/// Soft plug-in CMI of `softmax(logits)` and its gradient with respect to the logits.
pub fn soft_cmi_loss(
    logits: ArrayView2<f64>,
    y: &[usize],
    z: &[usize],
    k_y: usize,
    k_z: usize,
) -> Result<(f64, Array2<f64>)> {
    check_labels(logits, y, "y")?;
    check_labels(logits, z, "z")?;
    if y.iter().any(|&v| v >= k_y) || z.iter().any(|&v| v >= k_z) {
        return Err(Error::DimensionMismatch(
            "y or z index beyond its cardinality".into(),
        ));
    }
    let p = softmax(logits);
    let k = p.ncols();
    let flat = p.as_standard_layout();
    let flat = flat.as_slice().expect("standard layout");
    let mut gp = vec![0.0; flat.len()];
    let value = soft_cmi_raw(flat, k, y, z, k_y, k_z, Some(&mut gp));
    let mut grad = Array2::zeros(p.dim());
    for i in 0..p.nrows() {
        let row = &gp[i * k..(i + 1) * k];
        let dot: f64 = (0..k).map(|j| p[[i, j]] * row[j]).sum();
        for j in 0..k {
            grad[[i, j]] = p[[i, j]] * (row[j] - dot);
        }
    }
    Ok((value, grad))
}

/// Mean over samples of `‖∂L/∂h_i‖₂` for the task and CMI losses.
pub fn feature_grad_norms(
    model: &MlpModel,
    trace: &ForwardTrace,
    grad_task: ArrayView2<f64>,
    grad_cmi: ArrayView2<f64>,
) -> Result<(f64, f64)> {
    let mean_norm = |g: Array2<f64>| {
        let n = g.nrows().max(1) as f64;
        g.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / n
    };
    Ok((
        mean_norm(model.backward_to_features(trace, grad_task)?),
        mean_norm(model.backward_to_features(trace, grad_cmi)?),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalancedLossConfig {
    pub lambda: f64,
    pub eps: f64,
}

impl BalancedLossConfig {
    pub fn new(lambda: f64, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Domain(format!("lambda = {lambda} outside [0, 1]")));
        }
        if eps.is_nan() || eps < 0.0 {
            return Err(Error::Domain(format!("eps = {eps} must be non-negative")));
        }
        Ok(Self { lambda, eps })
    }
}

/// Value and term weights of `(1−λ) L_task/(n_task+ε) + λ Î/(n_cmi+ε)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BalancedLoss {
    pub value: f64,
    pub task_weight: f64,
    pub cmi_weight: f64,
}

impl BalancedLoss {
    /// Gradient of the balanced objective given the two loss gradients; norms are constants.
    pub fn combine(&self, grad_task: ArrayView2<f64>, grad_cmi: ArrayView2<f64>) -> Array2<f64> {
        let mut g = grad_task.mapv(|v| v * self.task_weight);
        if self.cmi_weight != 0.0 {
            g.scaled_add(self.cmi_weight, &grad_cmi);
        }
        g
    }
}

pub fn balanced_objective(
    task_loss: f64,
    cmi_loss: f64,
    norms: (f64, f64),
    cfg: BalancedLossConfig,
) -> BalancedLoss {
    let weight = |share: f64, norm: f64| {
        if share == 0.0 {
            0.0
        } else {
            share / (norm + cfg.eps)
        }
    };
    let task_weight = weight(1.0 - cfg.lambda, norms.0);
    let cmi_weight = weight(cfg.lambda, norms.1);
    BalancedLoss {
        value: task_weight * task_loss + cmi_weight * cmi_loss,
        task_weight,
        cmi_weight,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
}

/// Step size and decay rates of Adam.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
        }
    }
}

impl AdamState {
    pub fn new(params: usize, cfg: AdamConfig) -> Self {
        Self {
            m: vec![0.0; params],
            v: vec![0.0; params],
            step: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps_opt: cfg.eps_opt,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch(
                "Adam state, parameters and gradients differ in length".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps_opt);
        }
        Ok(())
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializable snapshot of a model, its optimizer and the training RNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub split: usize,
    pub params: Vec<f64>,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn capture(
        model: &MlpModel,
        rng_seed: u64,
        rng: &ChaCha8Rng,
        adam: Option<&AdamState>,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            dims: model.dims(),
            activations: model.layers.iter().map(|l| l.act).collect(),
            split: model.split,
            params: model.flat_params(),
            rng_seed,
            rng_word_pos: rng.get_word_pos(),
            adam: adam.cloned(),
        }
    }

    pub fn model(&self) -> Result<MlpModel> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        if self.dims.len() != self.activations.len() + 1 {
            return Err(Error::Parse(
                "checkpoint dims and activations disagree".into(),
            ));
        }
        let layers = self
            .activations
            .iter()
            .enumerate()
            .map(|(i, &act)| Layer {
                w: Array2::zeros((self.dims[i], self.dims[i + 1])),
                b: Array1::zeros(self.dims[i + 1]),
                act,
            })
            .collect();
        let mut m = MlpModel::from_layers(layers, self.split)?;
        m.set_flat_params(&self.params)?;
        Ok(m)
    }

    /// The RNG positioned where it was captured.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.rng_seed);
        r.set_word_pos(self.rng_word_pos);
        r
    }
}
