//! Decoupled-weight-decay Adam with linear warmup and cosine decay.
//!
//! Training is single-threaded and bit-reproducible: batch indices come
//! from a seeded stream and every floating-point operation has a fixed
//! order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::models::mlp::MlpPairModel;
use crate::models::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub max_learning_rate: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Record a trace point every this many steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    /// Mirrors the 1D experiment: 10,000 iterations at batch 512 with a
    /// 100-step warmup to 0.002 and cosine decay.
    fn default() -> Self {
        Self {
            iterations: 10_000,
            batch_size: 512,
            max_learning_rate: 2e-3,
            warmup_steps: 100,
            weight_decay: 1e-4,
            seed: 0,
            log_every: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub loss: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: MlpPairModel,
    pub trace: Vec<TracePoint>,
}

/// Learning rate at 1-based step `t`.
pub fn learning_rate(config: &TrainConfig, step: usize) -> f64 {
    let max = config.max_learning_rate;
    if step <= config.warmup_steps {
        max * step as f64 / config.warmup_steps as f64
    } else {
        let span = (config.iterations - config.warmup_steps).max(1) as f64;
        let progress = (step - config.warmup_steps) as f64 / span;
        max * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Trains a pair model on `(x, y1, y2)` triples, sampling batches with
/// replacement. Returns the trained model and a loss trace.
pub fn train(
    model: MlpPairModel,
    data: &[(f64, usize, usize)],
    config: &TrainConfig,
) -> Result<TrainResult, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut model = model;
    let mut m = model.zeros_like();
    let mut v = model.zeros_like();
    let decay_mask = model.decay_mask();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e_5f72_6e67);
    let mut trace = Vec::new();
    let mut xs = vec![0.0; config.batch_size];
    let mut y1s = vec![0usize; config.batch_size];
    let mut y2s = vec![0usize; config.batch_size];

    for step in 1..=config.iterations {
        for i in 0..config.batch_size {
            let (x, y1, y2) = data[rng.gen_range(0..data.len())];
            xs[i] = x;
            y1s[i] = y1;
            y2s[i] = y2;
        }
        let report = model.pair_nll_loss(&xs, &y1s, &y2s)?;
        if !report.loss.is_finite() {
            return Err(ModelError::DivergedLoss { step });
        }
        let lr = learning_rate(config, step);
        let bc1 = 1.0 - BETA1.powi(step as i32);
        let bc2 = 1.0 - BETA2.powi(step as i32);
        let mut grads = report.grads;
        let g_tensors = grads.tensors_mut();
        let mut m_tensors = m.tensors_mut();
        let mut v_tensors = v.tensors_mut();
        let mut p_tensors = model.tensors_mut();
        for (ti, g_t) in g_tensors.into_iter().enumerate() {
            let decay = if decay_mask[ti] { config.weight_decay } else { 0.0 };
            let m_t = &mut m_tensors[ti];
            let v_t = &mut v_tensors[ti];
            let p_t = &mut p_tensors[ti];
            for i in 0..g_t.len() {
                let g = g_t[i];
                m_t[i] = BETA1 * m_t[i] + (1.0 - BETA1) * g;
                v_t[i] = BETA2 * v_t[i] + (1.0 - BETA2) * g * g;
                let m_hat = m_t[i] / bc1;
                let v_hat = v_t[i] / bc2;
                p_t[i] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + decay * p_t[i]);
            }
        }
        if step.is_multiple_of(config.log_every) || step == config.iterations {
            trace.push(TracePoint { step, loss: report.loss, penalty: report.penalty });
        }
    }
    Ok(TrainResult { model, trace })
}

/// Loss trace as CSV (`step,loss,penalty`).
pub fn trace_csv(trace: &[TracePoint]) -> String {
    let mut out = String::from("step,loss,penalty\n");
    for p in trace {
        out.push_str(&format!("{},{},{}\n", p.step, p.loss, p.penalty));
    }
    out
}
