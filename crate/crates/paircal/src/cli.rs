//! Experiment driver behind the `paircal` binary.
//!
//! Every stage reads and writes files under the run's output directory,
//! is deterministic given its config and seed, and keeps wall-clock
//! timestamps out of data artifacts (they live only in `run_meta.json`).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decode::{self, CheatScoredModel, DecodePolicy, ThresholdMode};
use crate::distfree;
use crate::eval;
use crate::eval::ranking::{self, ConfidenceTransform, RankedSample};
use crate::models::baselines;
use crate::models::mlp::{HeadKind, MlpConfig, MlpPairModel};
use crate::models::train::{self, TrainConfig};
use crate::report::{self, Series};
use crate::tasks::{lake, pcfg, pi, sin1d, PairedExample};
use crate::util::substream_seed;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit code: 2 for config problems, 3 for runtime/model
    /// problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 3,
        }
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io { path: path.to_path_buf(), source }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub n: usize,
    /// Lake only: fraction of examples with the patch hidden.
    pub hidden_fraction: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self { n: 25_000, hidden_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct ModelSpec {
    /// `mlp` (trained) or `binned_oracle` (analytic quantile-bin mixture).
    pub kind: String,
    pub hidden_width: usize,
    pub stream_width: usize,
    pub blocks: usize,
    pub n_bins: usize,
    pub nodes_per_bin: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: "mlp".into(),
            hidden_width: 512,
            stream_width: 128,
            blocks: 3,
            n_bins: 100,
            nodes_per_bin: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub bins: usize,
    pub betas: Vec<f64>,
    pub n_eval: usize,
    /// Digit task: samples per offset for ranking curves.
    pub ranking_samples_per_offset: usize,
    pub max_ranking_offset: u32,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            bins: 100,
            betas: vec![0.05, 0.1, 0.25],
            n_eval: 100_000,
            ranking_samples_per_offset: 20,
            max_ranking_offset: 3_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSpec {
    pub epsilon: f64,
    pub alpha: f64,
    pub n: usize,
    pub beta: f64,
}

impl Default for BoundSpec {
    /// The reference configuration: `N = 10^6`, `eps = 0.02^2`,
    /// `alpha = 0.05`.
    fn default() -> Self {
        Self { epsilon: 0.02 * 0.02, alpha: 0.05, n: 1_000_000, beta: 0.05 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSpec {
    /// `rejection`, `filter`, or `top1`.
    pub policy: String,
    pub beta: f64,
    /// `one_sided` or `absolute`.
    pub mode: String,
    pub n_queries: usize,
    pub max_attempts: u32,
    pub candidate_budget: u32,
}

impl Default for DecodeSpec {
    fn default() -> Self {
        Self {
            policy: "rejection".into(),
            beta: 0.05,
            mode: "absolute".into(),
            n_queries: 1_000,
            max_attempts: 1_000,
            candidate_budget: 6_400,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: String,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub bound: BoundSpec,
    #[serde(default)]
    pub decode: DecodeSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: "sin1d".into(),
            seed: 0,
            out: PathBuf::from("paircal-out"),
            data: DataSpec::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            eval: EvalSpec::default(),
            bound: BoundSpec::default(),
            decode: DecodeSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !crate::tasks::TASK_NAMES.contains(&self.task.as_str()) {
            return Err(CliError::Config(format!(
                "unknown task {:?}; expected one of {:?}",
                self.task,
                crate::tasks::TASK_NAMES
            )));
        }
        if self.data.n == 0 {
            return Err(CliError::Config("data.n must be positive".into()));
        }
        if self.bound.epsilon.is_nan() || self.bound.epsilon <= 0.0 {
            return Err(CliError::Config("bound.epsilon must be positive".into()));
        }
        for (name, v) in [
            ("bound.alpha", self.bound.alpha),
            ("bound.beta", self.bound.beta),
            ("decode.beta", self.decode.beta),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(CliError::Config(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        Ok(())
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Applies a `--set dotted.path=value` override to a JSON config tree.
/// The value is parsed as JSON when possible, else taken as a string.
pub fn apply_override(root: &mut serde_json::Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not of form path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("{} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        node = obj
            .entry((*part).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}

/// Loads a config: file (when given), then `--set` overrides, then
/// task/seed/out flag overrides.
pub fn load_config(
    path: Option<&Path>,
    sets: &[String],
    task: Option<&str>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<RunConfig, CliError> {
    let mut value = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(CliError::io(p))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{p:?}: {e}")))?
        }
        None => serde_json::to_value(RunConfig::default()).expect("default config serializes"),
    };
    for s in sets {
        apply_override(&mut value, s)?;
    }
    if let Some(t) = task {
        apply_override(&mut value, &format!("task={t}"))?;
    }
    if let Some(s) = seed {
        apply_override(&mut value, &format!("seed={s}"))?;
    }
    if let Some(o) = out {
        apply_override(&mut value, &format!("out=\"{}\"", o.display()))?;
    }
    let config: RunConfig =
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    fs::write(path, contents).map_err(CliError::io(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Appends a record of this invocation; the only artifact allowed to
/// carry a timestamp.
fn write_meta(config: &RunConfig, command: &str) -> Result<(), CliError> {
    let path = config.artifact("run_meta.json");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    let meta = serde_json::json!({
        "command": command,
        "config": config,
        "unix_time": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(CliError::io(&path))?;
    let mut line = serde_json::to_string(&meta).map_err(runtime)?;
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(CliError::io(&path))
}

/// Serializes records as JSONL with a leading header record carrying the
/// schema name, count, seed, and a checksum of the data lines.
fn write_jsonl_dataset(
    path: &Path,
    task: &str,
    seed: u64,
    records: &[PairedExample],
) -> Result<(), CliError> {
    let mut body = String::new();
    for r in records {
        body.push_str(&serde_json::to_string(r).map_err(runtime)?);
        body.push('\n');
    }
    let mut hasher = Sha256::new();
    hasher.update(body.as_bytes());
    let header = serde_json::json!({
        "schema": "paircal.paired_example.v1",
        "task": task,
        "n": records.len(),
        "seed": seed,
        "sha256": format!("{:x}", hasher.finalize()),
    });
    let text = format!("{}\n{body}", serde_json::to_string(&header).map_err(runtime)?);
    write_file(path, text.as_bytes())
}

/// Reads a JSONL dataset, verifying the header checksum.
pub fn read_jsonl_dataset(path: &Path) -> Result<Vec<PairedExample>, CliError> {
    let text = fs::read_to_string(path).map_err(|_| CliError::MissingArtifact(path.into()))?;
    let Some((first, body)) = text.split_once('\n') else {
        return Err(CliError::Runtime(format!("{path:?} is empty")));
    };
    let header: serde_json::Value = serde_json::from_str(first).map_err(runtime)?;
    let mut hasher = Sha256::new();
    hasher.update(body.as_bytes());
    let sum = format!("{:x}", hasher.finalize());
    if header["sha256"] != serde_json::Value::String(sum) {
        return Err(CliError::Runtime(format!("{path:?}: checksum mismatch")));
    }
    body.lines()
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str(l).map_err(runtime))
        .collect()
}

/// `gen-data`: writes `dataset.jsonl` for the configured task.
pub fn gen_data(config: &RunConfig) -> Result<PathBuf, CliError> {
    config.validate()?;
    write_meta(config, "gen-data")?;
    let records: Vec<PairedExample> = match config.task.as_str() {
        "sin1d" => sin1d::dataset(config.data.n, config.seed)
            .into_iter()
            .map(|e| PairedExample::Sin1d { x: e.x, y1: e.y1, y2: e.y2 })
            .collect(),
        "pi" => crate::util::parallel_map_indexed(config.data.n, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(config.seed, i as u64));
            let offset = pi::sample_offset(&mut rng);
            let digit = pi::digit(offset);
            // Both responses share the digit (the latent the pair shares
            // is the offset itself).
            let y1 = pcfg::sample(digit, &mut rng).expect("digit in range");
            let y2 = pcfg::sample(digit, &mut rng).expect("digit in range");
            PairedExample::Pi { offset, digit, y1, y2 }
        }),
        "lake" => {
            let oracle = lake::LakePairOracle::new().map_err(runtime)?;
            lake::dataset(&oracle, config.data.n, config.data.hidden_fraction, config.seed)
                .into_iter()
                .map(|e| PairedExample::Lake {
                    hidden: e.hidden,
                    y1: e.y1.tokens(),
                    y2: e.y2.tokens(),
                    patch_index: e.patch_index,
                })
                .collect()
        }
        other => return Err(CliError::Config(format!("unknown task {other:?}"))),
    };
    let path = config.artifact("dataset.jsonl");
    write_jsonl_dataset(&path, &config.task, config.seed, &records)?;
    Ok(path)
}

/// `train`: fits the binary-head MLP on a sin1d dataset.
pub fn train_cmd(config: &RunConfig) -> Result<PathBuf, CliError> {
    config.validate()?;
    if config.task != "sin1d" {
        return Err(CliError::Config(format!(
            "train supports the sin1d task (pi/lake use exact tabular oracles); got {:?}",
            config.task
        )));
    }
    write_meta(config, "train")?;
    let data_path = config.artifact("dataset.jsonl");
    let records = read_jsonl_dataset(&data_path)?;
    let triples: Vec<(f64, usize, usize)> = records
        .iter()
        .map(|r| match r {
            PairedExample::Sin1d { x, y1, y2 } => Ok((*x, *y1 as usize, *y2 as usize)),
            other => Err(CliError::Runtime(format!("non-sin1d record {other:?} in dataset"))),
        })
        .collect::<Result<_, _>>()?;
    let arch = MlpConfig {
        hidden_width: config.model.hidden_width,
        stream_width: config.model.stream_width,
        blocks: config.model.blocks,
        head: HeadKind::BinaryMuRho,
        eigen_penalty_weight: 0.0,
    };
    let mut train_config = config.train;
    train_config.seed = config.seed;
    let model = MlpPairModel::init(arch, config.seed);
    let result = train::train(model, &triples, &train_config).map_err(runtime)?;
    let model_path = config.artifact("model.json");
    write_json(&model_path, &result.model)?;
    write_file(
        &config.artifact("loss_trace.csv"),
        train::trace_csv(&result.trace).as_bytes(),
    )?;
    Ok(model_path)
}

fn load_model(config: &RunConfig) -> Result<MlpPairModel, CliError> {
    let path = config.artifact("model.json");
    let text = fs::read_to_string(&path).map_err(|_| CliError::MissingArtifact(path.clone()))?;
    serde_json::from_str(&text).map_err(runtime)
}

/// A boxed binary predictor mapping `x` to `(p_hat, v_hat)`.
pub type BinaryPredictor = Box<dyn Fn(f64) -> (f64, f64) + Sync>;

/// Binary predictor chosen by the model spec.
fn sin1d_predictor(config: &RunConfig) -> Result<BinaryPredictor, CliError> {
    match config.model.kind.as_str() {
        "mlp" => {
            let model = load_model(config)?;
            Ok(Box::new(move |x: f64| {
                let params = model.forward_binary(x).expect("binary head");
                (params.mu, params.v_cheat_one())
            }))
        }
        "binned_oracle" => {
            let oracle = sin1d::BinnedSin1dOracle::new(config.model.n_bins, config.model.nodes_per_bin);
            Ok(Box::new(move |x: f64| oracle.predict(x)))
        }
        other => Err(CliError::Config(format!("unknown model.kind {other:?}"))),
    }
}

/// `eval`: task-specific metric artifacts.
pub fn eval_cmd(config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    write_meta(config, "eval")?;
    match config.task.as_str() {
        "sin1d" => eval_sin1d(config),
        "pi" => eval_pi(config),
        "lake" => eval_lake(config),
        other => Err(CliError::Config(format!("unknown task {other:?}"))),
    }
}

fn eval_sin1d(config: &RunConfig) -> Result<(), CliError> {
    let predict = sin1d_predictor(config)?;
    // Profile over a fixed grid for the variance-vs-gap figure.
    let mut profile = String::from("x,p_true,p_hat,v_cheat,naive_v,sq_err\n");
    let grid: Vec<f64> = (0..=6000).map(|i| -3.0 + i as f64 * 0.001).collect();
    for &x in &grid {
        let (p_hat, v) = predict(x);
        let p = sin1d::prob(x);
        profile.push_str(&format!(
            "{x},{p},{p_hat},{v},{},{}\n",
            baselines::naive_variance(p_hat),
            (p_hat - p) * (p_hat - p)
        ));
    }
    write_file(&config.artifact("profile.csv"), profile.as_bytes())?;

    // Fresh-sample calibration metrics for the cheat model and the naive
    // baseline.
    let xs = sin1d::sample_inputs(config.eval.n_eval, substream_seed(config.seed, 0xe7a1));
    let preds: Vec<(f64, f64)> = xs.iter().map(|&x| predict(x)).collect();
    let cheat_records: Vec<(f64, f64)> = xs
        .iter()
        .zip(&preds)
        .map(|(&x, &(p_hat, v))| {
            let d = p_hat - sin1d::prob(x);
            (v, d * d)
        })
        .collect();
    let naive_records: Vec<(f64, f64)> = xs
        .iter()
        .zip(&preds)
        .map(|(&x, &(p_hat, _))| {
            let d = p_hat - sin1d::prob(x);
            (baselines::naive_variance(p_hat), d * d)
        })
        .collect();
    let ece1_records: Vec<(f64, f64)> = {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(config.seed, 0xe7a2));
        xs.iter()
            .zip(&preds)
            .map(|(&x, &(p_hat, _))| {
                (p_hat, f64::from(rng.gen::<f64>() < sin1d::prob(x)))
            })
            .collect()
    };
    let (ece2_cheat, bins_cheat) =
        eval::ece2(&cheat_records, config.eval.bins, 1).map_err(runtime)?;
    let (ece2_naive, _) = eval::ece2(&naive_records, config.eval.bins, 1).map_err(runtime)?;
    let (ece1_value, _) = eval::ece1(&ece1_records, config.eval.bins, 1).map_err(runtime)?;
    write_file(&config.artifact("ece2_bins.csv"), bins_cheat.csv().as_bytes())?;
    write_json(
        &config.artifact("summary.json"),
        &serde_json::json!({
            "task": "sin1d",
            "model_kind": config.model.kind,
            "n_eval": config.eval.n_eval,
            "ece1": ece1_value,
            "ece2_cheat": ece2_cheat,
            "ece2_naive": ece2_naive,
        }),
    )
}

fn eval_pi(config: &RunConfig) -> Result<(), CliError> {
    let model = pi::PiPairModel::new(pi::OffsetBuckets::default());
    // Confidence-vs-hallucination reliability for the exact oracle model.
    let scored: Vec<(u32, crate::metrics::CheatScore, bool)> =
        crate::util::parallel_map_indexed(config.eval.n_eval, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(config.seed, i as u64));
            let offset = pi::sample_offset(&mut rng);
            let group = model.group_of(offset);
            let y = model.sample(group, &mut rng);
            let score = model.score(group, &y);
            let truth = pcfg::inside_prob(pi::digit(offset), &y).expect("digit in range");
            (offset, score, truth == 0.0)
        });
    let samples: Vec<(f64, bool)> =
        scored.iter().map(|(_, s, h)| (s.confidence, *h)).collect();
    let reliability = eval::confidence_vs_hallucination(&samples, 10).map_err(runtime)?;
    write_file(&config.artifact("confidence_bins.csv"), reliability.csv().as_bytes())?;

    // Per-response score table (capped).
    let mut scores_csv = String::from(crate::metrics::CheatScore::csv_header());
    scores_csv.push('\n');
    for (i, (offset, score, _)) in scored.iter().take(2_000).enumerate() {
        scores_csv.push_str(&score.csv_row(&format!("offset{offset}-{i}")));
        scores_csv.push('\n');
    }
    write_file(&config.artifact("scores.csv"), scores_csv.as_bytes())?;
    write_json(&config.artifact("grammar.json"), &pcfg::grammar_spec())?;

    // Ranking comparison on the perturbed model, offsets swept uniformly.
    let curves = pi_ranking_curves(
        config.seed,
        config.eval.max_ranking_offset,
        config.eval.ranking_samples_per_offset,
    )?;
    for curve in &curves {
        write_file(
            &config.artifact(&format!("ranking_{}.csv", curve.strategy)),
            curve.csv().as_bytes(),
        )?;
    }
    let hallucination_rate =
        samples.iter().filter(|(_, h)| *h).count() as f64 / samples.len() as f64;
    write_json(
        &config.artifact("summary.json"),
        &serde_json::json!({
            "task": "pi",
            "n_eval": config.eval.n_eval,
            "hallucination_rate": hallucination_rate,
            "strategies": curves.iter().map(|c| c.strategy.clone()).collect::<Vec<_>>(),
        }),
    )
}

/// All ranking strategies on the perturbed digit model.
pub fn pi_ranking_curves(
    seed: u64,
    max_offset: u32,
    samples_per_offset: usize,
) -> Result<Vec<ranking::RankingCurve>, CliError> {
    let base = pi::PiPairModel::new(pi::OffsetBuckets::default());
    let perturbed = pi::PerturbedPiModel::new(base, substream_seed(seed, 0x9e));
    let mut samples: Vec<RankedSample> = Vec::new();
    let mut keys = Vec::new();
    for offset in 1..=max_offset {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, 0x7000_0000 + offset as u64));
        let group = perturbed.base.group_of(offset);
        let digit = pi::digit(offset);
        for _ in 0..samples_per_offset {
            let y = perturbed.sample(group, &mut rng);
            let score = perturbed.score(group, &y);
            let p = score.p_marginal.max(1e-300);
            let tokens = y.split_whitespace().count().max(1);
            let is_hallucination = pcfg::inside_prob(digit, &y).expect("digit in range") == 0.0;
            let mut scores = vec![
                ("total_lp".to_string(), p.ln()),
                ("avg_token_lp".to_string(), p.ln() / tokens as f64),
            ];
            for t in [
                ConfidenceTransform::OneMinus,
                ConfidenceTransform::AbsOneMinus,
                ConfidenceTransform::OneMinusMinWithOne,
                ConfidenceTransform::OneMinusMinWithInverse,
            ] {
                scores.push((t.name().to_string(), t.score(score.confidence)));
            }
            keys.push(pcfg::semantic_key(&y));
            samples.push(RankedSample { sentence: y, scores, is_hallucination });
        }
    }
    for (name, group_size) in [("cluster_10", 10usize), ("cluster_120", 120usize)] {
        let scores = ranking::cluster_scores(&keys, group_size);
        for (s, c) in samples.iter_mut().zip(&scores) {
            s.scores.push((name.to_string(), *c));
        }
    }
    let strategies: Vec<String> = samples[0].scores.iter().map(|(n, _)| n.clone()).collect();
    ranking::ranking_comparison(&samples, &strategies, substream_seed(seed, 0x9f))
        .map_err(runtime)
}

fn eval_lake(config: &RunConfig) -> Result<(), CliError> {
    let oracle = lake::LakePairOracle::new().map_err(runtime)?;
    let mut csv = String::from("view,confidence,crosses_lake\n");
    let mut hidden_cross_high_conf = 0usize;
    let n = config.eval.n_eval.min(20_000);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(config.seed, i as u64));
        let hidden = i % 2 == 0;
        let view = if hidden {
            lake::View::Hidden
        } else {
            lake::View::Full { patch_index: rng.gen_range(0..9) }
        };
        let traj = oracle.sample_marginal(view, &mut rng);
        let score = oracle.score(view, &traj).map_err(runtime)?;
        if hidden && traj.crosses_lake() && score.confidence > 0.95 {
            hidden_cross_high_conf += 1;
        }
        csv.push_str(&format!(
            "{},{},{}\n",
            if hidden { "hidden" } else { "full" },
            score.confidence,
            u8::from(traj.crosses_lake())
        ));
    }
    write_file(&config.artifact("lake_confidences.csv"), csv.as_bytes())?;
    write_json(
        &config.artifact("summary.json"),
        &serde_json::json!({
            "task": "lake",
            "n_eval": n,
            "hidden_crossings_with_high_confidence": hidden_cross_high_conf,
        }),
    )
}

/// `bound`: Algorithm-1 adjustment from a paired calibration set, plus
/// oracle-checked intervals on fresh inputs.
pub fn bound_cmd(config: &RunConfig) -> Result<distfree::BoundReport, CliError> {
    config.validate()?;
    if config.task != "sin1d" {
        return Err(CliError::Config("bound requires the binary sin1d task".into()));
    }
    write_meta(config, "bound")?;
    let predict = sin1d_predictor(config)?;

    // Consume the calibration set, generating it first when absent.
    let calib_path = config.artifact("calib.jsonl");
    if !calib_path.exists() {
        let records: Vec<PairedExample> =
            sin1d::dataset(config.bound.n, substream_seed(config.seed, 0xca11b))
                .into_iter()
                .map(|e| PairedExample::Sin1d { x: e.x, y1: e.y1, y2: e.y2 })
                .collect();
        write_jsonl_dataset(&calib_path, "sin1d", config.seed, &records)?;
    }
    let calib = read_jsonl_dataset(&calib_path)?;
    let triples: Vec<(f64, u8, u8)> = calib
        .iter()
        .map(|r| match r {
            PairedExample::Sin1d { x, y1, y2 } => Ok((*x, *y1, *y2)),
            other => Err(CliError::Runtime(format!("non-sin1d record {other:?}"))),
        })
        .collect::<Result<_, _>>()?;
    let report = distfree::adjust_with_model(
        &triples,
        |x| predict(*x),
        config.bound.epsilon,
        config.bound.alpha,
    )
    .map_err(runtime)?;
    write_json(&config.artifact("bound.json"), &report)?;

    // Interval CSV on fresh X with oracle coverage labels.
    let xs = sin1d::sample_inputs(config.eval.n_eval, substream_seed(config.seed, 0xf2e5));
    let mut csv = String::from("x,p_hat,v_hat,lo,hi,covered\n");
    let mut covered = 0usize;
    for &x in &xs {
        let (p_hat, v_hat) = predict(x);
        let iv = distfree::adjusted_interval(p_hat, v_hat, &report, config.bound.beta)
            .map_err(runtime)?;
        let p = sin1d::prob(x);
        let inside = iv.contains(p);
        covered += usize::from(inside);
        csv.push_str(&format!(
            "{x},{p_hat},{v_hat},{},{},{}\n",
            iv.lo,
            iv.hi,
            u8::from(inside)
        ));
    }
    write_file(&config.artifact("intervals.csv"), csv.as_bytes())?;

    // Coverage at each configured beta, for the coverage-vs-beta figure.
    let mut coverage_csv = String::from("beta,coverage\n");
    for &beta in &config.eval.betas {
        let mut hit = 0usize;
        for &x in &xs {
            let (p_hat, v_hat) = predict(x);
            let iv = distfree::adjusted_interval(p_hat, v_hat, &report, beta).map_err(runtime)?;
            hit += usize::from(iv.contains(sin1d::prob(x)));
        }
        coverage_csv.push_str(&format!("{beta},{}\n", hit as f64 / xs.len() as f64));
    }
    write_file(&config.artifact("coverage.csv"), coverage_csv.as_bytes())?;
    write_json(
        &config.artifact("bound_summary.json"),
        &serde_json::json!({
            "gamma_plus": report.gamma_plus,
            "mean_s": report.mean_s,
            "n": report.n,
            "epsilon": report.epsilon,
            "alpha": report.alpha,
            "beta": config.bound.beta,
            "coverage": covered as f64 / xs.len() as f64,
        }),
    )?;
    Ok(report)
}

/// `decode`: runs the configured decoder over sampled queries and writes
/// one JSON line per decision.
pub fn decode_cmd(config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    write_meta(config, "decode")?;
    let mode = match config.decode.mode.as_str() {
        "one_sided" => ThresholdMode::OneSided,
        "absolute" => ThresholdMode::Absolute,
        other => return Err(CliError::Config(format!("unknown threshold mode {other:?}"))),
    };
    let policy = DecodePolicy {
        beta: config.decode.beta,
        mode,
        max_attempts: config.decode.max_attempts,
        candidate_budget: config.decode.candidate_budget,
    };
    let lines: Vec<String> = match config.task.as_str() {
        "pi" => {
            let model = pi::PiPairModel::new(pi::OffsetBuckets::default());
            crate::util::parallel_map_indexed(config.decode.n_queries, |i| {
                let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(config.seed, i as u64));
                let offset = pi::sample_offset(&mut rng);
                let query = model.at_group(model.group_of(offset));
                let outcome = run_policy(&query, &config.decode.policy, &policy, &mut rng);
                decision_line(&format!("digit {offset} of pi"), &outcome)
            })
        }
        "lake" => {
            let oracle = lake::LakePairOracle::new().map_err(runtime)?;
            crate::util::parallel_map_indexed(config.decode.n_queries, |i| {
                let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(config.seed, i as u64));
                let hidden = rng.gen::<f64>() < 0.5;
                let view = if hidden {
                    lake::View::Hidden
                } else {
                    lake::View::Full { patch_index: rng.gen_range(0..9) }
                };
                let query = oracle.at_view(view);
                let outcome = run_policy(&query, &config.decode.policy, &policy, &mut rng);
                decision_line(
                    &format!("lake view {}", if hidden { "hidden" } else { "full" }),
                    &outcome,
                )
            })
        }
        other => {
            return Err(CliError::Config(format!(
                "decode supports pi and lake tasks, got {other:?}"
            )))
        }
    };
    let mut text = lines.join("\n");
    text.push('\n');
    write_file(&config.artifact("decisions.jsonl"), text.as_bytes())
}

/// Uniform string-labelled decode outcome, for serialization.
struct LabelledOutcome {
    decision: &'static str,
    y: Option<String>,
    confidence: Option<f64>,
    attempts: u32,
}

fn run_policy<M: CheatScoredModel>(
    model: &M,
    policy_name: &str,
    policy: &DecodePolicy,
    rng: &mut ChaCha8Rng,
) -> LabelledOutcome {
    let outcome = match policy_name {
        "filter" => {
            let y = model.sample_response(rng);
            decode::selective_filter(model, y, policy)
        }
        "top1" => decode::top1_search(model, policy, rng),
        _ => decode::rejection_sample(model, policy, rng),
    };
    match outcome {
        decode::Decoded::Respond(r) => LabelledOutcome {
            decision: "respond",
            y: Some(model.label(&r.y)),
            confidence: Some(r.score.confidence),
            attempts: r.attempts,
        },
        decode::Decoded::Abstain { last_score } => LabelledOutcome {
            decision: "abstain",
            y: None,
            confidence: last_score.map(|s| s.confidence),
            attempts: 1,
        },
        decode::Decoded::Exhausted { attempts } => LabelledOutcome {
            decision: "exhausted",
            y: None,
            confidence: None,
            attempts,
        },
    }
}

fn decision_line(x: &str, outcome: &LabelledOutcome) -> String {
    serde_json::json!({
        "x": x,
        "decision": outcome.decision,
        "y": outcome.y,
        "confidence": outcome.confidence,
        "attempts": outcome.attempts,
    })
    .to_string()
}

/// `report`: renders SVG plots from whatever result CSVs are present.
pub fn report_cmd(config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    write_meta(config, "report")?;
    let mut written = Vec::new();

    let profile = config.artifact("profile.csv");
    if profile.exists() {
        let text = fs::read_to_string(&profile).map_err(CliError::io(&profile))?;
        let (_, rows) = report::read_simple_csv(&text);
        let take = |col: usize| -> Vec<(f64, f64)> {
            rows.iter()
                .map(|r| (r[0].parse().unwrap_or(0.0), r[col].parse().unwrap_or(0.0)))
                .collect()
        };
        let svg = report::svg_line_plot(
            "Epistemic variance vs actual squared error",
            "x",
            "variance",
            &[
                Series { name: "v_cheat".into(), points: take(3) },
                Series { name: "naive".into(), points: take(4) },
                Series { name: "(p_hat - p)^2".into(), points: take(5) },
            ],
        );
        let path = config.artifact("variance_profile.svg");
        write_file(&path, svg.as_bytes())?;
        written.push(path);
    }

    let coverage = config.artifact("coverage.csv");
    if coverage.exists() {
        let text = fs::read_to_string(&coverage).map_err(CliError::io(&coverage))?;
        let (_, rows) = report::read_simple_csv(&text);
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r[0].parse().unwrap_or(0.0), r[1].parse().unwrap_or(0.0)))
            .collect();
        let target: Vec<(f64, f64)> = pts.iter().map(|(b, _)| (*b, 1.0 - b)).collect();
        let svg = report::svg_line_plot(
            "Interval coverage vs beta",
            "beta",
            "coverage",
            &[
                Series { name: "achieved".into(), points: pts },
                Series { name: "1 - beta".into(), points: target },
            ],
        );
        let path = config.artifact("coverage_vs_beta.svg");
        write_file(&path, svg.as_bytes())?;
        written.push(path);
    }

    let conf = config.artifact("confidence_bins.csv");
    if conf.exists() {
        let text = fs::read_to_string(&conf).map_err(CliError::io(&conf))?;
        let (_, rows) = report::read_simple_csv(&text);
        let mut rate = Vec::new();
        let mut bound = Vec::new();
        for r in &rows {
            let lo: f64 = r[1].parse().unwrap_or(0.0);
            let count: usize = r[3].parse().unwrap_or(0);
            if count == 0 {
                continue;
            }
            rate.push((lo, r[5].parse().unwrap_or(0.0)));
            bound.push((lo, 1.0 - lo));
        }
        let svg = report::svg_line_plot(
            "Hallucination rate vs confidence bin",
            "confidence bin lower edge",
            "hallucination rate",
            &[
                Series { name: "observed".into(), points: rate },
                Series { name: "1 - C bound".into(), points: bound },
            ],
        );
        let path = config.artifact("hallucination_vs_confidence.svg");
        write_file(&path, svg.as_bytes())?;
        written.push(path);
    }

    let mut ranking_series = Vec::new();
    for entry in fs::read_dir(&config.out).map_err(CliError::io(&config.out))? {
        let entry = entry.map_err(CliError::io(&config.out))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(strategy) = name.strip_prefix("ranking_").and_then(|n| n.strip_suffix(".csv")) {
            let text = fs::read_to_string(entry.path()).map_err(CliError::io(&config.out))?;
            let (_, rows) = report::read_simple_csv(&text);
            let pts = rows
                .iter()
                .map(|r| (r[3].parse().unwrap_or(0.0), r[4].parse().unwrap_or(0.0)))
                .collect();
            ranking_series.push(Series { name: strategy.to_string(), points: pts });
        }
    }
    if !ranking_series.is_empty() {
        ranking_series.sort_by(|a, b| a.name.cmp(&b.name));
        let svg = report::svg_line_plot(
            "Hallucination rate vs response rate",
            "response rate",
            "hallucination rate",
            &ranking_series,
        );
        let path = config.artifact("ranking_curves.svg");
        write_file(&path, svg.as_bytes())?;
        written.push(path);
    }

    if written.is_empty() {
        return Err(CliError::MissingArtifact(config.artifact("*.csv")));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_follow_dotted_paths() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        apply_override(&mut v, "train.iterations=50").unwrap();
        apply_override(&mut v, "task=pi").unwrap();
        apply_override(&mut v, "bound.epsilon=0.01").unwrap();
        let config: RunConfig = serde_json::from_value(v).unwrap();
        assert_eq!(config.train.iterations, 50);
        assert_eq!(config.task, "pi");
        assert!((config.bound.epsilon - 0.01).abs() < 1e-15);
    }

    #[test]
    fn bad_override_is_a_config_error() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        let err = apply_override(&mut v, "no-equals-sign").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_task_fails_validation() {
        let config = RunConfig { task: "checkers".into(), ..Default::default() };
        assert!(config.validate().is_err());
    }

    #[test]
    fn default_bound_spec_is_the_reference_configuration() {
        let spec = BoundSpec::default();
        assert_eq!(spec.n, 1_000_000);
        assert!((spec.epsilon - 0.0004).abs() < 1e-15);
        assert!((spec.alpha - 0.05).abs() < 1e-15);
    }
}
