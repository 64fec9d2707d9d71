//! Dense-network numerics shared by the Q-network and the cloned policy:
//! forward pass, reverse-mode gradients, Adam, input normalization, and a
//! binary checkpoint format. Everything is 64-bit so gradient checks can use
//! tight tolerances; the networks are small enough that this costs little.

use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Output-layer behavior.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadKind {
    /// Raw affine outputs (Q-values).
    Linear,
    /// Elementwise logistic squashed to `[0, scale_k]` per output (bounded
    /// continuous actions).
    Squashed { scales: Vec<f64> },
}

impl HeadKind {
    fn code(&self) -> u8 {
        match self {
            HeadKind::Linear => 0,
            HeadKind::Squashed { .. } => 1,
        }
    }

    fn kind_name(code: u8) -> &'static str {
        match code {
            0 => "linear",
            1 => "squashed",
            _ => "unknown",
        }
    }
}

/// Weights and biases of a rectifier MLP, stored layer by layer.
///
/// Weight matrices are `[fan_in, fan_out]`; activations flow left to right
/// as row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub head: HeadKind,
}

impl MlpParams {
    /// He-style initialization: weights uniform on ±sqrt(6/fan_in)
    /// (variance 2/fan_in), biases zero. Deterministic per seed.
    pub fn init(layer_sizes: &[usize], head: HeadKind, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid_argument(format!(
                "need at least input and output layers, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid_argument(format!(
                "zero-width layer in {layer_sizes:?}"
            )));
        }
        if let HeadKind::Squashed { scales } = &head {
            let out = *layer_sizes.last().unwrap();
            if scales.len() != out {
                return Err(Error::invalid_argument(format!(
                    "{} squash scales for {out} outputs",
                    scales.len()
                )));
            }
            if scales.iter().any(|&s| !s.is_finite() || s <= 0.0) {
                return Err(Error::invalid_argument("squash scales must be positive"));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            head,
        })
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// Checks the dimension chain and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.layer_sizes.len() - 1
            || self.biases.len() != self.weights.len()
        {
            return Err(Error::invalid_argument("layer count mismatch"));
        }
        for (l, pair) in self.layer_sizes.windows(2).enumerate() {
            if self.weights[l].shape() != [pair[0], pair[1]] {
                return Err(Error::invalid_argument(format!(
                    "layer {l} weights shaped {:?}, expected {pair:?}",
                    self.weights[l].shape()
                )));
            }
            if self.biases[l].len() != pair[1] {
                return Err(Error::invalid_argument(format!("layer {l} bias length")));
            }
        }
        let finite = self
            .weights
            .iter()
            .all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::invalid_argument("non-finite parameter"));
        }
        Ok(())
    }

    fn apply_head_scalar(&self, z: f64, k: usize) -> f64 {
        match &self.head {
            HeadKind::Linear => z,
            HeadKind::Squashed { scales } => scales[k] * sigmoid(z),
        }
    }

    /// Forward pass for a single input, written as plain loops. This is the
    /// hot path for per-step action selection and doubles as an independent
    /// recomputation route for testing the batched pass.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_size() {
            return Err(Error::invalid_argument(format!(
                "input length {} != {}",
                x.len(),
                self.input_size()
            )));
        }
        let last = self.num_layers() - 1;
        let mut act = x.to_vec();
        for l in 0..=last {
            let w = &self.weights[l];
            let b = &self.biases[l];
            let out_n = b.len();
            let mut next = b.to_vec();
            let w_slice = w.as_slice().expect("weights are standard layout");
            for (i, &xi) in act.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &w_slice[i * out_n..(i + 1) * out_n];
                for (nj, &wij) in next.iter_mut().zip(row) {
                    *nj += xi * wij;
                }
            }
            if l < last {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            } else {
                for (k, v) in next.iter_mut().enumerate() {
                    *v = self.apply_head_scalar(*v, k);
                }
            }
            act = next;
        }
        Ok(act)
    }

    /// Batched forward pass; rows of `x` are independent inputs.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.output)
    }

    fn forward_cached(&self, x: &Array2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_size() {
            return Err(Error::invalid_argument(format!(
                "input width {} != {}",
                x.ncols(),
                self.input_size()
            )));
        }
        let last = self.num_layers() - 1;
        // activations[l] feeds layer l; pre[l] is layer l's affine output.
        let mut activations: Vec<Array2<f64>> = vec![x.clone()];
        let mut pre: Vec<Array2<f64>> = Vec::with_capacity(self.num_layers());
        for l in 0..=last {
            let z = activations[l].dot(&self.weights[l]) + &self.biases[l];
            if l < last {
                activations.push(z.mapv(|v| v.max(0.0)));
            }
            pre.push(z);
        }
        let z_out = pre.last().unwrap();
        let output = match &self.head {
            HeadKind::Linear => z_out.clone(),
            HeadKind::Squashed { scales } => {
                let mut out = z_out.mapv(sigmoid);
                for (mut col, &s) in out.columns_mut().into_iter().zip(scales) {
                    col *= s;
                }
                out
            }
        };
        Ok(ForwardCache {
            activations,
            pre,
            output,
        })
    }

    /// Mean-over-batch squared error (summed over output components) and its
    /// gradient with respect to every weight and bias.
    ///
    /// Callers that want per-component masking (Q-learning's taken-action
    /// regression) encode it by setting the target equal to the current
    /// output on masked components, which zeroes their error and gradient.
    pub fn loss_and_grad(
        &self,
        inputs: &Array2<f64>,
        targets: &Array2<f64>,
    ) -> Result<(f64, Gradients)> {
        let batch = inputs.nrows();
        if batch == 0 {
            return Err(Error::invalid_argument("empty batch"));
        }
        if targets.nrows() != batch || targets.ncols() != self.output_size() {
            return Err(Error::invalid_argument(format!(
                "targets shaped {:?}, expected [{batch}, {}]",
                targets.shape(),
                self.output_size()
            )));
        }
        let cache = self.forward_cached(inputs)?;
        Ok(self.backward_from_cache(&cache, targets))
    }

    /// One gradient step's worth of regression toward per-sample scalar
    /// targets on a single output component each (Q-learning's taken-action
    /// update): components other than `action_cols[i]` regress onto the
    /// current output, so their error and gradient vanish without a second
    /// forward pass.
    pub fn masked_loss_and_grad(
        &self,
        inputs: &Array2<f64>,
        action_cols: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Gradients)> {
        let batch = inputs.nrows();
        if batch == 0 {
            return Err(Error::invalid_argument("empty batch"));
        }
        if action_cols.len() != batch || targets.len() != batch {
            return Err(Error::invalid_argument(format!(
                "{} action columns and {} targets for batch {batch}",
                action_cols.len(),
                targets.len()
            )));
        }
        if let Some(&c) = action_cols.iter().find(|&&c| c >= self.output_size()) {
            return Err(Error::invalid_argument(format!(
                "action column {c} out of range for {} outputs",
                self.output_size()
            )));
        }
        let cache = self.forward_cached(inputs)?;
        let mut t = cache.output.clone();
        for (i, (&c, &y)) in action_cols.iter().zip(targets).enumerate() {
            t[[i, c]] = y;
        }
        Ok(self.backward_from_cache(&cache, &t))
    }

    // Backpropagation from an already-computed forward pass; `targets` must
    // match the cached output's shape.
    fn backward_from_cache(&self, cache: &ForwardCache, targets: &Array2<f64>) -> (f64, Gradients) {
        let batch = cache.output.nrows();
        let diff = &cache.output - targets;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / batch as f64;

        // d loss / d output, then through the head to the last pre-activation.
        let dout = diff.mapv(|d| 2.0 * d / batch as f64);
        let last = self.num_layers() - 1;
        let mut delta = match &self.head {
            HeadKind::Linear => dout,
            HeadKind::Squashed { scales } => {
                let mut d = dout;
                let sig = cache.pre[last].mapv(sigmoid);
                for ((mut col, sig_col), &s) in d
                    .columns_mut()
                    .into_iter()
                    .zip(sig.columns())
                    .zip(scales)
                {
                    for (dv, &sv) in col.iter_mut().zip(sig_col) {
                        *dv *= s * sv * (1.0 - sv);
                    }
                }
                d
            }
        };

        let mut grads = Gradients::zeros_like(self);
        for l in (0..=last).rev() {
            grads.weights[l] = cache.activations[l].t().dot(&delta);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l].t());
                // Rectifier gate: zero where the pre-activation was <= 0.
                back.zip_mut_with(&cache.pre[l - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        (loss, grads)
    }

    /// Loss only (no gradients); the finite-difference oracle leans on this.
    pub fn loss(&self, inputs: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
        let out = self.forward_batch(inputs)?;
        if targets.shape() != out.shape() {
            return Err(Error::invalid_argument("target shape mismatch"));
        }
        let batch = inputs.nrows().max(1);
        Ok((&out - targets).iter().map(|d| d * d).sum::<f64>() / batch as f64)
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

struct ForwardCache {
    activations: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

/// Parameter-shaped gradient (or moment) storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Gradients {
            weights: params.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: params.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }
}

/// Adam with bias correction; moments are shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(params: &MlpParams, learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
        }
    }

    /// One Adam update in place; advances the step counter.
    pub fn update(&mut self, params: &mut MlpParams, grads: &Gradients) -> Result<()> {
        if grads.weights.len() != params.weights.len() {
            return Err(Error::invalid_argument("gradient layer count mismatch"));
        }
        for (g, w) in grads.weights.iter().zip(&params.weights) {
            if g.shape() != w.shape() {
                return Err(Error::invalid_argument("gradient shape mismatch"));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.learning_rate);
        let apply = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for l in 0..params.weights.len() {
            let (pw, mw, vw, gw) = (
                &mut params.weights[l],
                &mut self.m.weights[l],
                &mut self.v.weights[l],
                &grads.weights[l],
            );
            for ((p, (m, v)), &g) in pw
                .iter_mut()
                .zip(mw.iter_mut().zip(vw.iter_mut()))
                .zip(gw.iter())
            {
                apply(p, m, v, g);
            }
            let (pb, mb, vb, gb) = (
                &mut params.biases[l],
                &mut self.m.biases[l],
                &mut self.v.biases[l],
                &grads.biases[l],
            );
            for ((p, (m, v)), &g) in pb
                .iter_mut()
                .zip(mb.iter_mut().zip(vb.iter_mut()))
                .zip(gb.iter())
            {
                apply(p, m, v, g);
            }
        }
        Ok(())
    }
}

/// Fixed per-feature affine transform `(x - offset) / scale` applied to
/// network inputs. Constants are fit once from sampled data and frozen into
/// the checkpoint so training and inference always agree.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    offset: Vec<f64>,
    scale: Vec<f64>,
}

impl Normalizer {
    pub fn new(offset: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if offset.len() != scale.len() {
            return Err(Error::invalid_argument("offset/scale length mismatch"));
        }
        if scale.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(Error::invalid_argument("scales must be positive"));
        }
        if offset.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid_argument("offsets must be finite"));
        }
        Ok(Normalizer { offset, scale })
    }

    /// Pass-through transform of the given width.
    pub fn identity(n: usize) -> Self {
        Normalizer {
            offset: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Fits mean/standard deviation per feature. Features with (numerically)
    /// zero spread keep scale 1 so constants map to exactly zero.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows
            .first()
            .ok_or_else(|| Error::invalid_argument("no rows to fit"))?
            .len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid_argument("ragged rows"));
        }
        let count = rows.len() as f64;
        let mut mean = vec![0.0; n];
        for row in rows {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= count;
        }
        let mut var = vec![0.0; n];
        for row in rows {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .map(|&s| {
                let sd = (s / count).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Normalizer::new(mean, scale)
    }

    pub fn len(&self) -> usize {
        self.offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offset.is_empty()
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.offset.len() || out.len() != self.offset.len() {
            return Err(Error::invalid_argument(format!(
                "normalizer width {} vs input {}",
                self.offset.len(),
                x.len()
            )));
        }
        for i in 0..x.len() {
            out[i] = (x[i] - self.offset[i]) / self.scale[i];
        }
        Ok(())
    }

    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.normalize_into(x, &mut out)?;
        Ok(out)
    }

    pub fn normalize_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.offset.len() {
            return Err(Error::invalid_argument("normalizer width mismatch"));
        }
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = (*v - self.offset[i]) / self.scale[i];
            }
        }
        Ok(out)
    }
}

/// Everything a trained model needs to run later: parameters, the input
/// transform, and free-form key=value provenance strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub normalizer: Normalizer,
    pub metadata: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn metadata_value(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

const CHECKPOINT_MAGIC: &[u8; 5] = b"AGPL1";
const CHECKPOINT_VERSION: u8 = 1;

// Layout, all integers and floats little-endian:
//   magic "AGPL1" | version u8 | head-kind u8
//   [if squashed head] u32 scale count, then that many f64 scales
//   u32 layer-size count, then that many u32 sizes
//   per layer: fan_in*fan_out f64 weights (row-major), fan_out f64 biases
//   u32 feature count, then offsets f64s, then scales f64s
//   u32 metadata byte length, then UTF-8 "key=value" lines
//
// No timestamps or other ambient values: equal inputs give equal bytes.

/// Serializes a checkpoint to bytes.
pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.params.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.push(ckpt.params.head.code());
    if let HeadKind::Squashed { scales } = &ckpt.params.head {
        out.extend_from_slice(&(scales.len() as u32).to_le_bytes());
        for s in scales {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
    out.extend_from_slice(&(ckpt.params.layer_sizes.len() as u32).to_le_bytes());
    for &s in &ckpt.params.layer_sizes {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    for l in 0..ckpt.params.num_layers() {
        for v in ckpt.params.weights[l].iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in ckpt.params.biases[l].iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(ckpt.normalizer.offset.len() as u32).to_le_bytes());
    for v in &ckpt.normalizer.offset {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &ckpt.normalizer.scale {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut meta = String::new();
    for (k, v) in &ckpt.metadata {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::invalid_argument(format!(
                "metadata key/value may not contain '=' in key or newlines: {k}"
            )));
        }
        meta.push_str(k);
        meta.push('=');
        meta.push_str(v);
        meta.push('\n');
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    Ok(out)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(ckpt)?)?;
    Ok(())
}

struct ByteReader<'a> {
    data: &'a [u8],
}

impl ByteReader<'_> {
    // Truncation surfaces as an io-error, matching what a streaming reader
    // would report.
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.data.len() < n {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "checkpoint truncated",
            )));
        }
        let (head, rest) = self.data.split_at(n);
        self.data = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Deserializes a checkpoint from bytes.
pub fn checkpoint_from_bytes(data: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader { data };
    if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(Error::format("bad checkpoint magic"));
    }
    let version = r.u8()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let head_code = r.u8()?;
    let head = match head_code {
        0 => HeadKind::Linear,
        1 => {
            let n = r.u32()? as usize;
            HeadKind::Squashed { scales: r.f64s(n)? }
        }
        other => return Err(Error::format(format!("unknown head kind {other}"))),
    };
    let n_sizes = r.u32()? as usize;
    if n_sizes < 2 {
        return Err(Error::format("layer size list too short"));
    }
    let mut layer_sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        layer_sizes.push(r.u32()? as usize);
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let w = r.f64s(fan_in * fan_out)?;
        weights.push(
            Array2::from_shape_vec((fan_in, fan_out), w)
                .map_err(|e| Error::format(format!("weight block: {e}")))?,
        );
        biases.push(Array1::from_vec(r.f64s(fan_out)?));
    }
    let n_features = r.u32()? as usize;
    let offset = r.f64s(n_features)?;
    let scale = r.f64s(n_features)?;
    let normalizer =
        Normalizer::new(offset, scale).map_err(|e| Error::format(format!("normalizer: {e}")))?;
    let meta_len = r.u32()? as usize;
    let meta_bytes = r.take(meta_len)?;
    let meta_text = std::str::from_utf8(meta_bytes)
        .map_err(|_| Error::format("metadata is not UTF-8"))?;
    let mut metadata = Vec::new();
    for line in meta_text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("metadata line without '=': {line}")))?;
        metadata.push((k.to_string(), v.to_string()));
    }
    let params = MlpParams {
        layer_sizes,
        weights,
        biases,
        head,
    };
    params
        .validate()
        .map_err(|e| Error::format(format!("invalid parameters: {e}")))?;
    Ok(Checkpoint {
        params,
        normalizer,
        metadata,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    checkpoint_from_bytes(&data)
}

/// Loads a checkpoint and insists on a particular head kind, so a Q-network
/// file cannot be silently used where a squashed policy is expected.
pub fn load_checkpoint_expecting(path: &Path, expected: u8) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let got = ckpt.params.head.code();
    if got != expected {
        return Err(Error::format(format!(
            "checkpoint has a {} head where a {} head was expected",
            HeadKind::kind_name(got),
            HeadKind::kind_name(expected)
        )));
    }
    Ok(ckpt)
}

/// Head code for a linear (Q-value) network.
pub const HEAD_LINEAR: u8 = 0;
/// Head code for a squashed (bounded-action) network.
pub const HEAD_SQUASHED: u8 = 1;

/// Compares analytic gradients against central finite differences and
/// returns the largest relative error over all parameters.
///
/// Uses the symmetric relative error |a - n| / max(|a| + |n|, 1e-8); keep the
/// probe network small (a few layers, <= 16 units) or this is slow.
pub fn gradient_check(
    params: &MlpParams,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    eps: f64,
) -> Result<f64> {
    let (_, grads) = params.loss_and_grad(inputs, targets)?;
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for l in 0..params.num_layers() {
        let (rows, cols) = params.weights[l].dim();
        for i in 0..rows {
            for j in 0..cols {
                let analytic = grads.weights[l][[i, j]];
                let orig = probe.weights[l][[i, j]];
                probe.weights[l][[i, j]] = orig + eps;
                let up = probe.loss(inputs, targets)?;
                probe.weights[l][[i, j]] = orig - eps;
                let down = probe.loss(inputs, targets)?;
                probe.weights[l][[i, j]] = orig;
                let numeric = (up - down) / (2.0 * eps);
                worst = worst.max(relative_error(analytic, numeric));
            }
        }
        for j in 0..params.biases[l].len() {
            let analytic = grads.biases[l][j];
            let orig = probe.biases[l][j];
            probe.biases[l][j] = orig + eps;
            let up = probe.loss(inputs, targets)?;
            probe.biases[l][j] = orig - eps;
            let down = probe.loss(inputs, targets)?;
            probe.biases[l][j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(worst)
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

/// Smallest |pre-activation| reached in any hidden layer: finite-difference
/// probes are only valid when this clears the probe step, since the
/// rectifier's kink breaks the two-sided estimate.
fn min_abs_preactivation(p: &MlpParams, x: &Array2<f64>) -> f64 {
    let mut min_abs = f64::INFINITY;
    let mut act = x.clone();
    for l in 0..p.num_layers() - 1 {
        let z = act.dot(&p.weights[l]) + &p.biases[l];
        for &v in z.iter() {
            min_abs = min_abs.min(v.abs());
        }
        act = z.mapv(|v| v.max(0.0));
    }
    min_abs
}

/// Runs [`gradient_check`] on `n_nets` randomly shaped small networks
/// (alternating linear and squashed heads, random widths and batches) and
/// returns the worst relative error seen. Inputs are re-drawn while any
/// hidden pre-activation sits within the finite-difference step of zero.
pub fn gradient_check_suite(n_nets: usize, seed: u64, eps: f64) -> Result<f64> {
    if n_nets == 0 {
        return Err(Error::invalid_argument("need at least one probe network"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..n_nets {
        let n_in = rng.random_range(2..=6);
        let n_out = rng.random_range(2..=4);
        let mut sizes = vec![n_in];
        for _ in 0..rng.random_range(1..=2) {
            sizes.push(rng.random_range(3..=8));
        }
        sizes.push(n_out);
        let head = if k % 2 == 0 {
            HeadKind::Linear
        } else {
            HeadKind::Squashed {
                scales: (0..n_out).map(|_| rng.random_range(1.0..50.0)).collect(),
            }
        };
        let params = MlpParams::init(&sizes, head, rng.random())?;
        let batch = rng.random_range(2..=5);
        let (x, t) = loop {
            let x = Array2::from_shape_fn((batch, n_in), |_| rng.random_range(-2.0..2.0));
            let t = Array2::from_shape_fn((batch, n_out), |_| rng.random_range(-1.0..1.0));
            if min_abs_preactivation(&params, &x) > 1e-3 {
                break (x, t);
            }
        };
        worst = worst.max(gradient_check(&params, &x, &t, eps)?);
    }
    Ok(worst)
}
