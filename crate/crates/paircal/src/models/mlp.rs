//! Residual MLP pair predictor for scalar inputs.
//!
//! The backbone embeds a scalar through an elementwise layer, runs a
//! narrow residual stream through LayerNorm/wide-ReLU blocks, and feeds a
//! head that emits a valid pair joint: either the binary `(mu, rho)` form
//! or a symmetric softmax over all `K x K` cells. A single-probability
//! sigmoid head is also provided for the ensemble/naive baselines.
//!
//! All math is explicit f64 with reverse-mode gradients accumulated by
//! hand; matrix products go through `ndarray` so batches are one GEMM
//! per layer.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dist::{BinaryPairParams, JointPairDistribution};
use crate::linalg::sym_eigen;
use crate::models::ModelError;

const LN_EPS: f64 = 1e-6;

/// Output head of the pair predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    /// Two logits: `mu = sigma(o[0])`, `rho = sigma(o[1])`; the joint is
    /// the binary closed form, PSD by construction.
    BinaryMuRho,
    /// `K^2` logits reshaped to `K x K`, symmetrized as `L + L^T`, then a
    /// softmax over all cells. Symmetric by construction; PSD only with
    /// the eigenvalue penalty.
    SymmetricSoftmax { k: usize },
    /// One logit, `p = sigma(o[0])`. Not a pair model; used by ensemble
    /// and naive baselines.
    SingleSigmoid,
}

impl HeadKind {
    pub fn output_dim(self) -> usize {
        match self {
            HeadKind::BinaryMuRho => 2,
            HeadKind::SymmetricSoftmax { k } => k * k,
            HeadKind::SingleSigmoid => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Wide ReLU width (512 in the reference setup).
    pub hidden_width: usize,
    /// Residual stream width (128 in the reference setup).
    pub stream_width: usize,
    /// Number of residual blocks (3 in the reference setup).
    pub blocks: usize,
    pub head: HeadKind,
    /// Weight on the squared-negative-eigenvalue penalty
    /// (symmetric-softmax head only).
    pub eigen_penalty_weight: f64,
}

impl MlpConfig {
    pub fn reference(head: HeadKind) -> Self {
        Self {
            hidden_width: 512,
            stream_width: 128,
            blocks: 3,
            head,
            eigen_penalty_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Block {
    ln_g: Array1<f64>,
    ln_b: Array1<f64>,
    /// stream -> hidden
    wa: Array2<f64>,
    ba: Array1<f64>,
    /// hidden -> stream
    wb: Array2<f64>,
    bb: Array1<f64>,
}

/// The full parameter set. Also used as the gradient container, since the
/// two have identical shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpPairModel {
    pub config: MlpConfig,
    /// Elementwise input embedding: `v0 = w0a * (x + b0a)`.
    w0a: Array1<f64>,
    b0a: Array1<f64>,
    /// hidden -> stream
    w0b: Array2<f64>,
    b0b: Array1<f64>,
    blocks: Vec<Block>,
    ln_out_g: Array1<f64>,
    ln_out_b: Array1<f64>,
    /// stream -> hidden
    w_out_a: Array2<f64>,
    b_out_a: Array1<f64>,
    /// hidden -> output
    w_out_b: Array2<f64>,
    b_out_b: Array1<f64>,
}

impl MlpPairModel {
    /// Fan-in-scaled normal init for weights; biases zero except the input
    /// embedding offsets, which are spread so the first-layer ReLU kinks
    /// cover the data range instead of all sitting at the origin.
    pub fn init(config: MlpConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_width;
        let s = config.stream_width;
        let d = config.head.output_dim();
        let mut normal = |n: usize, scale: f64| -> Array1<f64> {
            Array1::from_iter((0..n).map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            }))
        };
        let matrix = |rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng| {
            let scale = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
        };
        let w0a = normal(h, 1.0);
        let b0a = normal(h, 1.5);
        let mut rng2 = rng;
        let w0b = matrix(s, h, h, &mut rng2);
        let blocks = (0..config.blocks)
            .map(|_| Block {
                ln_g: Array1::ones(s),
                ln_b: Array1::zeros(s),
                wa: matrix(h, s, s, &mut rng2),
                ba: Array1::zeros(h),
                wb: matrix(s, h, h, &mut rng2),
                bb: Array1::zeros(s),
            })
            .collect();
        let w_out_a = matrix(h, s, s, &mut rng2);
        let w_out_b = matrix(d, h, h, &mut rng2);
        Self {
            config,
            w0a,
            b0a,
            w0b,
            b0b: Array1::zeros(s),
            blocks,
            ln_out_g: Array1::ones(s),
            ln_out_b: Array1::zeros(s),
            w_out_a,
            b_out_a: Array1::zeros(h),
            w_out_b,
            b_out_b: Array1::zeros(d),
        }
    }

    /// Zero-valued gradient/optimizer-state container with this model's shapes.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// All parameter tensors as mutable flat slices, in a fixed order.
    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.w0a.as_slice_mut().expect("contiguous"),
            self.b0a.as_slice_mut().expect("contiguous"),
            self.w0b.as_slice_mut().expect("contiguous"),
            self.b0b.as_slice_mut().expect("contiguous"),
        ];
        for b in &mut self.blocks {
            out.push(b.ln_g.as_slice_mut().expect("contiguous"));
            out.push(b.ln_b.as_slice_mut().expect("contiguous"));
            out.push(b.wa.as_slice_mut().expect("contiguous"));
            out.push(b.ba.as_slice_mut().expect("contiguous"));
            out.push(b.wb.as_slice_mut().expect("contiguous"));
            out.push(b.bb.as_slice_mut().expect("contiguous"));
        }
        out.push(self.ln_out_g.as_slice_mut().expect("contiguous"));
        out.push(self.ln_out_b.as_slice_mut().expect("contiguous"));
        out.push(self.w_out_a.as_slice_mut().expect("contiguous"));
        out.push(self.b_out_a.as_slice_mut().expect("contiguous"));
        out.push(self.w_out_b.as_slice_mut().expect("contiguous"));
        out.push(self.b_out_b.as_slice_mut().expect("contiguous"));
        out
    }

    /// All parameter tensors as flat slices, in the same fixed order as
    /// [`Self::tensors_mut`].
    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.w0a.as_slice().expect("contiguous"),
            self.b0a.as_slice().expect("contiguous"),
            self.w0b.as_slice().expect("contiguous"),
            self.b0b.as_slice().expect("contiguous"),
        ];
        for b in &self.blocks {
            out.push(b.ln_g.as_slice().expect("contiguous"));
            out.push(b.ln_b.as_slice().expect("contiguous"));
            out.push(b.wa.as_slice().expect("contiguous"));
            out.push(b.ba.as_slice().expect("contiguous"));
            out.push(b.wb.as_slice().expect("contiguous"));
            out.push(b.bb.as_slice().expect("contiguous"));
        }
        out.push(self.ln_out_g.as_slice().expect("contiguous"));
        out.push(self.ln_out_b.as_slice().expect("contiguous"));
        out.push(self.w_out_a.as_slice().expect("contiguous"));
        out.push(self.b_out_a.as_slice().expect("contiguous"));
        out.push(self.w_out_b.as_slice().expect("contiguous"));
        out.push(self.b_out_b.as_slice().expect("contiguous"));
        out
    }

    /// Number of parameter tensors; with [`Self::tensor_len`],
    /// [`Self::tensor_get`], and [`Self::tensor_add`] this supports
    /// external finite-difference probing of single parameters.
    pub fn tensor_count(&self) -> usize {
        self.tensors().len()
    }

    pub fn tensor_len(&self, tensor: usize) -> usize {
        self.tensors()[tensor].len()
    }

    pub fn tensor_get(&self, tensor: usize, index: usize) -> f64 {
        self.tensors()[tensor][index]
    }

    pub fn tensor_add(&mut self, tensor: usize, index: usize, delta: f64) {
        self.tensors_mut()[tensor][index] += delta;
    }

    /// Whether weight decay applies to each tensor in [`Self::tensors_mut`]
    /// order (decay on matrices, none on biases or LayerNorm parameters).
    pub(crate) fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![true, false, true, false];
        for _ in &self.blocks {
            mask.extend_from_slice(&[false, false, true, false, true, false]);
        }
        mask.extend_from_slice(&[false, false, true, false, true, false]);
        mask
    }

    pub fn parameter_count(&self) -> usize {
        let mut me = self.clone();
        me.tensors_mut().iter().map(|t| t.len()).sum()
    }

    /// Raw head outputs for a batch of scalar inputs, with the cache
    /// needed for the backward pass. Hidden activations are stored
    /// post-ReLU; the ReLU mask is recoverable as `activation > 0`.
    pub fn forward_batch(&self, xs: &[f64]) -> Result<(Array2<f64>, ForwardCache), ModelError> {
        let b = xs.len();
        let h = self.config.hidden_width;
        // relu0[b, h] = relu(w0a * (x + b0a))
        let mut relu0 = Array2::zeros((b, h));
        for (mut row, &x) in relu0.axis_iter_mut(Axis(0)).zip(xs) {
            for (i, cell) in row.iter_mut().enumerate() {
                *cell = (self.w0a[i] * (x + self.b0a[i])).max(0.0);
            }
        }
        let r0 = relu0.dot(&self.w0b.t()) + &self.b0b;
        let mut rs = vec![r0];
        let mut us = Vec::with_capacity(self.blocks.len() + 1);
        let mut relus = Vec::with_capacity(self.blocks.len() + 1);
        for blk in &self.blocks {
            let r = rs.last().expect("stream initialized");
            let u = layer_norm(r, &blk.ln_g, &blk.ln_b);
            let mut v = u.dot(&blk.wa.t());
            relu_add_bias_inplace(&mut v, &blk.ba);
            let r_next = r + &(v.dot(&blk.wb.t()) + &blk.bb);
            us.push(u);
            relus.push(v);
            rs.push(r_next);
        }
        let r_last = rs.last().expect("stream initialized");
        let u_out = layer_norm(r_last, &self.ln_out_g, &self.ln_out_b);
        let mut v_out = u_out.dot(&self.w_out_a.t());
        relu_add_bias_inplace(&mut v_out, &self.b_out_a);
        let logits = v_out.dot(&self.w_out_b.t()) + &self.b_out_b;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteActivation);
        }
        us.push(u_out);
        relus.push(v_out);
        Ok((logits, ForwardCache { xs: xs.to_vec(), relu0, rs, us, relus }))
    }

    /// Pair joint for one input. Valid by head construction.
    pub fn forward(&self, x: f64) -> Result<JointPairDistribution, ModelError> {
        if !x.is_finite() {
            return Err(ModelError::NonFiniteActivation);
        }
        let (logits, _) = self.forward_batch(&[x])?;
        let row: Vec<f64> = logits.row(0).to_vec();
        match self.config.head {
            HeadKind::BinaryMuRho => {
                let params = BinaryPairParams::new(sigmoid(row[0]), sigmoid(row[1]))
                    .expect("sigmoid output is in [0, 1]");
                Ok(params.to_joint())
            }
            HeadKind::SymmetricSoftmax { k } => {
                Ok(symmetric_softmax(&row, k))
            }
            HeadKind::SingleSigmoid => Err(ModelError::NotAPairHead { head: "single_sigmoid" }),
        }
    }

    /// `(mu, rho)` for the binary head without building the joint.
    pub fn forward_binary(&self, x: f64) -> Result<BinaryPairParams, ModelError> {
        match self.config.head {
            HeadKind::BinaryMuRho => {
                let (logits, _) = self.forward_batch(&[x])?;
                Ok(BinaryPairParams::new(sigmoid(logits[(0, 0)]), sigmoid(logits[(0, 1)]))
                    .expect("sigmoid output is in [0, 1]"))
            }
            _ => Err(ModelError::NotAPairHead { head: "non-binary" }),
        }
    }

    /// Batched `(mu, rho)` (binary head).
    pub fn forward_binary_batch(&self, xs: &[f64]) -> Result<Vec<BinaryPairParams>, ModelError> {
        match self.config.head {
            HeadKind::BinaryMuRho => {
                let (logits, _) = self.forward_batch(xs)?;
                Ok(logits
                    .axis_iter(Axis(0))
                    .map(|row| {
                        BinaryPairParams::new(sigmoid(row[0]), sigmoid(row[1]))
                            .expect("sigmoid output is in [0, 1]")
                    })
                    .collect())
            }
            _ => Err(ModelError::NotAPairHead { head: "non-binary" }),
        }
    }

    /// `p = sigma(o)` for the single-probability head.
    pub fn predict_prob(&self, x: f64) -> Result<f64, ModelError> {
        match self.config.head {
            HeadKind::SingleSigmoid => {
                let (logits, _) = self.forward_batch(&[x])?;
                Ok(sigmoid(logits[(0, 0)]))
            }
            _ => Err(ModelError::NotAPairHead { head: "pair head has no single prob" }),
        }
    }

    /// Mean pair NLL (plus eigenvalue penalty where applicable) and the
    /// full parameter gradient for a batch.
    pub fn pair_nll_loss(
        &self,
        xs: &[f64],
        y1s: &[usize],
        y2s: &[usize],
    ) -> Result<LossReport, ModelError> {
        if xs.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let (logits, cache) = self.forward_batch(xs)?;
        let (loss, penalty, d_logits) = self.head_loss_grad(&logits, y1s, y2s)?;
        let grads = self.backward(&cache, &d_logits);
        Ok(LossReport { loss, penalty, grads })
    }

    /// Head-specific loss and gradient w.r.t. the raw logits. Loss terms
    /// are averaged over the batch.
    fn head_loss_grad(
        &self,
        logits: &Array2<f64>,
        y1s: &[usize],
        y2s: &[usize],
    ) -> Result<(f64, f64, Array2<f64>), ModelError> {
        let b = logits.nrows();
        let scale = 1.0 / b as f64;
        let mut d_logits = Array2::zeros(logits.raw_dim());
        let mut loss = 0.0;
        let mut penalty = 0.0;
        match self.config.head {
            HeadKind::BinaryMuRho => {
                for i in 0..b {
                    let (y1, y2) = (y1s[i], y2s[i]);
                    let mu = sigmoid(logits[(i, 0)]);
                    let rho = sigmoid(logits[(i, 1)]);
                    let q1 = if y1 == 1 { mu } else { 1.0 - mu };
                    let q2 = if y2 == 1 { mu } else { 1.0 - mu };
                    let diag = if y1 == y2 { q1 } else { 0.0 };
                    let p = rho * diag + (1.0 - rho) * q1 * q2;
                    if p < 1e-300 {
                        return Err(ModelError::ZeroProbabilityTarget { y1, y2 });
                    }
                    loss -= scale * p.ln();
                    let dq1 = if y1 == 1 { 1.0 } else { -1.0 };
                    let dq2 = if y2 == 1 { 1.0 } else { -1.0 };
                    let ddiag = if y1 == y2 { dq1 } else { 0.0 };
                    let dp_dmu = rho * ddiag + (1.0 - rho) * (dq1 * q2 + q1 * dq2);
                    let dp_drho = diag - q1 * q2;
                    let dl_dp = -scale / p;
                    d_logits[(i, 0)] = dl_dp * dp_dmu * mu * (1.0 - mu);
                    d_logits[(i, 1)] = dl_dp * dp_drho * rho * (1.0 - rho);
                }
            }
            HeadKind::SymmetricSoftmax { k } => {
                let w_pen = self.config.eigen_penalty_weight;
                for i in 0..b {
                    let (y1, y2) = (y1s[i], y2s[i]);
                    if y1 >= k || y2 >= k {
                        return Err(ModelError::LabelOutOfRange { index: y1.max(y2), k });
                    }
                    let row: Vec<f64> = logits.row(i).to_vec();
                    let (m, z_max) = sym_softmax_probs(&row, k);
                    let _ = z_max;
                    let p = m[y1 * k + y2];
                    if p < 1e-300 {
                        return Err(ModelError::ZeroProbabilityTarget { y1, y2 });
                    }
                    loss -= scale * p.ln();
                    // dloss/dz = m - onehot (softmax cross-entropy).
                    let mut dz: Vec<f64> = m.iter().map(|&v| scale * v).collect();
                    dz[y1 * k + y2] -= scale;
                    if w_pen > 0.0 {
                        let eig = sym_eigen(&m, k);
                        let mut g = vec![0.0; k * k];
                        let mut pen_i = 0.0;
                        for (lam, vec) in eig.values.iter().zip(&eig.vectors) {
                            if *lam < 0.0 {
                                pen_i += lam * lam;
                                for a in 0..k {
                                    for c in 0..k {
                                        g[a * k + c] += 2.0 * lam * vec[a] * vec[c];
                                    }
                                }
                            }
                        }
                        penalty += scale * w_pen * pen_i;
                        // Through the softmax: dz += m .* (g - <g, m>).
                        let inner: f64 = g.iter().zip(&m).map(|(g, m)| g * m).sum();
                        for idx in 0..k * k {
                            dz[idx] += scale * w_pen * m[idx] * (g[idx] - inner);
                        }
                    }
                    // z = L + L^T, so dL[a,c] = dz[a,c] + dz[c,a].
                    for a in 0..k {
                        for c in 0..k {
                            d_logits[(i, a * k + c)] = dz[a * k + c] + dz[c * k + a];
                        }
                    }
                }
            }
            HeadKind::SingleSigmoid => {
                // Trains on both labels of the pair as independent targets.
                for i in 0..b {
                    let p = sigmoid(logits[(i, 0)]);
                    for &y in &[y1s[i], y2s[i]] {
                        let target = if y == 1 { p } else { 1.0 - p };
                        if target < 1e-300 {
                            return Err(ModelError::ZeroProbabilityTarget { y1: y, y2: y });
                        }
                        loss -= 0.5 * scale * target.ln();
                        d_logits[(i, 0)] += 0.5 * scale * (p - if y == 1 { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        Ok((loss + penalty, penalty, d_logits))
    }

    /// Reverse pass: gradients for every parameter given logits gradients.
    fn backward(&self, cache: &ForwardCache, d_logits: &Array2<f64>) -> MlpPairModel {
        let mut g = self.zeros_like();
        let n_blocks = self.blocks.len();

        // Output head.
        let relu_out = &cache.relus[n_blocks];
        let u_out = &cache.us[n_blocks];
        g.w_out_b = d_logits.t().dot(relu_out);
        g.b_out_b = d_logits.sum_axis(Axis(0));
        let mut dv = d_logits.dot(&self.w_out_b);
        mask_inplace(&mut dv, relu_out);
        g.w_out_a = dv.t().dot(u_out);
        g.b_out_a = dv.sum_axis(Axis(0));
        let du = dv.dot(&self.w_out_a);
        let (mut dr, g_ln_g, g_ln_b) =
            layer_norm_backward(&du, &cache.rs[n_blocks], &self.ln_out_g);
        g.ln_out_g = g_ln_g;
        g.ln_out_b = g_ln_b;

        // Residual blocks, in reverse.
        for bi in (0..n_blocks).rev() {
            let blk = &self.blocks[bi];
            let relu_v = &cache.relus[bi];
            let u = &cache.us[bi];
            g.blocks[bi].wb = dr.t().dot(relu_v);
            g.blocks[bi].bb = dr.sum_axis(Axis(0));
            let mut dv = dr.dot(&blk.wb);
            mask_inplace(&mut dv, relu_v);
            g.blocks[bi].wa = dv.t().dot(u);
            g.blocks[bi].ba = dv.sum_axis(Axis(0));
            let du = dv.dot(&blk.wa);
            let (dr_ln, g_ln_g, g_ln_b) = layer_norm_backward(&du, &cache.rs[bi], &blk.ln_g);
            g.blocks[bi].ln_g = g_ln_g;
            g.blocks[bi].ln_b = g_ln_b;
            dr += &dr_ln;
        }

        // Input layers.
        g.w0b = dr.t().dot(&cache.relu0);
        g.b0b = dr.sum_axis(Axis(0));
        let mut dv0 = dr.dot(&self.w0b);
        mask_inplace(&mut dv0, &cache.relu0);
        for (&x, drow) in cache.xs.iter().zip(dv0.axis_iter(Axis(0))) {
            for (i, &d) in drow.iter().enumerate() {
                g.w0a[i] += d * (x + self.b0a[i]);
                g.b0a[i] += d * self.w0a[i];
            }
        }
        g
    }
}

/// Activations retained from the forward pass for backpropagation.
pub struct ForwardCache {
    xs: Vec<f64>,
    relu0: Array2<f64>,
    rs: Vec<Array2<f64>>,
    us: Vec<Array2<f64>>,
    /// Post-ReLU hidden activations per block (plus the head).
    relus: Vec<Array2<f64>>,
}

/// Loss value, its penalty component, and the parameter gradient.
pub struct LossReport {
    pub loss: f64,
    pub penalty: f64,
    pub grads: MlpPairModel,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `a := relu(a + bias)` row-wise.
fn relu_add_bias_inplace(a: &mut Array2<f64>, bias: &Array1<f64>) {
    for mut row in a.axis_iter_mut(Axis(0)) {
        for (cell, b) in row.iter_mut().zip(bias) {
            *cell = (*cell + b).max(0.0);
        }
    }
}

/// Zeroes `grad` where the matching post-ReLU activation is zero.
fn mask_inplace(grad: &mut Array2<f64>, relu_out: &Array2<f64>) {
    for (g, r) in grad.iter_mut().zip(relu_out.iter()) {
        if *r <= 0.0 {
            *g = 0.0;
        }
    }
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let n = x.ncols() as f64;
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (i, cell) in row.iter_mut().enumerate() {
            *cell = (*cell - mean) * inv * g[i] + b[i];
        }
    }
    out
}

/// Backward through LayerNorm. Returns `(dx, d_gain, d_bias)`.
fn layer_norm_backward(
    dy: &Array2<f64>,
    x: &Array2<f64>,
    gain: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let n = x.ncols() as f64;
    let mut dx = Array2::zeros(x.raw_dim());
    let mut d_gain = Array1::zeros(x.ncols());
    let mut d_bias = Array1::zeros(x.ncols());
    for ((x_row, dy_row), mut dx_row) in x
        .axis_iter(Axis(0))
        .zip(dy.axis_iter(Axis(0)))
        .zip(dx.axis_iter_mut(Axis(0)))
    {
        let mean = x_row.sum() / n;
        let var = x_row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        let xn: Vec<f64> = x_row.iter().map(|v| (v - mean) * inv).collect();
        let dxn: Vec<f64> = dy_row.iter().zip(gain).map(|(d, g)| d * g).collect();
        let mean_dxn = dxn.iter().sum::<f64>() / n;
        let mean_dxn_xn = dxn.iter().zip(&xn).map(|(a, b)| a * b).sum::<f64>() / n;
        for i in 0..x.ncols() {
            dx_row[i] = (dxn[i] - mean_dxn - xn[i] * mean_dxn_xn) * inv;
            d_gain[i] += dy_row[i] * xn[i];
            d_bias[i] += dy_row[i];
        }
    }
    (dx, d_gain, d_bias)
}

/// Softmax over all cells of `L + L^T`. Returns the flat matrix and the
/// max logit used for stabilization.
fn sym_softmax_probs(logits: &[f64], k: usize) -> (Vec<f64>, f64) {
    let mut z = vec![0.0; k * k];
    for a in 0..k {
        for c in 0..k {
            z[a * k + c] = logits[a * k + c] + logits[c * k + a];
        }
    }
    let z_max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - z_max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
    (z, z_max)
}

fn symmetric_softmax(logits: &[f64], k: usize) -> JointPairDistribution {
    let (m, _) = sym_softmax_probs(logits, k);
    JointPairDistribution::from_matrix(m, k).expect("softmax output is a distribution")
}
