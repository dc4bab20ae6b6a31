//! End-to-end experiment orchestration.
//!
//! An experiment trains one model on one dataset, runs the estimator
//! schedules on a fixed probe batch after every epoch, and persists the
//! run: metrics.csv, summary.json, a checkpoint, optional attack results,
//! and a manifest tying them together. Estimation happens on a post-epoch
//! snapshot, so instrumentation never perturbs training numerics.
//!
//! All artifacts are written atomically. Given identical config, seed,
//! and dataset bytes, metrics.csv and summary.json are byte-identical
//! across runs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::autodiff::Graph;
use crate::data::{self, Dataset, DatasetName, Split};
use crate::dof::{self, EstimatorConfig};
use crate::error::{Error, Result};
use crate::jrank;
use crate::metrics::{self, LayerSummary, MetricKind, MetricSeries};
use crate::mia::{self, AttackConfig, AttackResult, CorrelationPair};
use crate::model::{Model, ModelKind};
use crate::optim::{Optimizer, OptimizerKind};
use crate::synth;

fn default_probe_batch() -> usize {
    256
}
fn default_tau() -> f64 {
    dof::DEFAULT_TAU
}
fn default_projection_factor() -> f64 {
    0.1
}
fn default_estimators() -> Vec<String> {
    vec!["dof".to_string(), "rank".to_string()]
}
fn default_synth_train() -> usize {
    2000
}
fn default_synth_test() -> usize {
    500
}
fn default_momentum() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_enabled() -> bool {
    true
}
fn default_attack_epochs() -> usize {
    100
}
fn default_attack_batch() -> usize {
    64
}
fn default_attack_lr() -> f64 {
    1e-4
}
fn default_attack_hidden() -> usize {
    128
}

/// Where the dataset lives and whether to fabricate it on first use.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub dir: PathBuf,
    /// Write a synthetic dataset into `dir` when the files are absent.
    #[serde(default)]
    pub synthesize: bool,
    #[serde(default = "default_synth_train")]
    pub synth_train: usize,
    #[serde(default = "default_synth_test")]
    pub synth_test: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: String,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiaConfig {
    #[serde(default = "default_enabled")]
    pub enabled: bool,
    /// Members and non-members drawn per class of the attack.
    pub n_per_class: usize,
    #[serde(default = "default_attack_epochs")]
    pub attack_epochs: usize,
    #[serde(default = "default_attack_batch")]
    pub attack_batch_size: usize,
    #[serde(default = "default_attack_lr")]
    pub attack_learning_rate: f64,
    #[serde(default = "default_attack_hidden")]
    pub attack_hidden: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauOverride {
    pub layer: String,
    pub tau: f64,
}

/// Full description of one run. A persisted config plus the dataset bytes
/// reproduce the run bit-for-bit.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_probe_batch")]
    pub probe_batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub tau_overrides: Vec<TauOverride>,
    #[serde(default = "default_projection_factor")]
    pub projection_factor: f64,
    /// 0 keeps every training sample.
    #[serde(default)]
    pub limit_train: usize,
    /// 0 keeps every test sample.
    #[serde(default)]
    pub limit_test: usize,
    /// Probe layers to estimate on; empty means every probe point.
    #[serde(default)]
    pub layers: Vec<String>,
    /// Which estimators run per epoch: any subset of "dof" and "rank".
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    pub dataset: DatasetConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub mia: Option<MiaConfig>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("bad config: {}", e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("config serialization failed: {}", e)))
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        ModelKind::parse(&self.model)
    }

    pub fn dataset_name(&self) -> Result<DatasetName> {
        DatasetName::parse(&self.dataset.name)
    }

    pub fn optimizer_kind(&self) -> Result<OptimizerKind> {
        let o = &self.optimizer;
        match o.kind.as_str() {
            "sgd" => Ok(OptimizerKind::SgdMomentum {
                learning_rate: o.learning_rate,
                momentum: o.momentum,
            }),
            "adam" => Ok(OptimizerKind::Adam {
                learning_rate: o.learning_rate,
                beta1: o.momentum,
                beta2: o.beta2,
                epsilon: o.epsilon,
            }),
            other => Err(Error::config(format!(
                "unknown optimizer '{}', expected sgd or adam",
                other
            ))),
        }
    }

    pub fn wants(&self, kind: MetricKind) -> bool {
        self.estimators.iter().any(|e| e == kind.as_str())
    }

    /// Probe layers of this run in model order: the configured subset, or
    /// every probe point when none are named.
    pub fn resolve_layers(&self, model: &Model) -> Result<Vec<String>> {
        if self.layers.is_empty() {
            return Ok(model.probe_points().iter().map(|p| p.name.clone()).collect());
        }
        for name in &self.layers {
            if model.probe_point(name).is_none() {
                return Err(Error::config(format!(
                    "unknown probe layer '{}' for model {}",
                    name,
                    model.kind.name()
                )));
            }
        }
        Ok(self.layers.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.model_kind()?;
        let name = self.dataset_name()?;
        self.optimizer_kind()?;
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1".to_string()));
        }
        if self.batch_size == 0 || self.probe_batch_size == 0 {
            return Err(Error::config("batch sizes must be at least 1".to_string()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        for o in &self.tau_overrides {
            if !(o.tau > 0.0 && o.tau < 1.0) {
                return Err(Error::config(format!(
                    "tau override for {} must lie in (0, 1), got {}",
                    o.layer, o.tau
                )));
            }
        }
        if !(self.projection_factor > 0.0 && self.projection_factor.is_finite()) {
            return Err(Error::config(format!(
                "projection_factor must be positive, got {}",
                self.projection_factor
            )));
        }
        if self.optimizer.learning_rate <= 0.0 {
            return Err(Error::config(format!(
                "learning_rate must be positive, got {}",
                self.optimizer.learning_rate
            )));
        }
        for e in &self.estimators {
            if e != "dof" && e != "rank" {
                return Err(Error::config(format!(
                    "unknown estimator '{}', expected dof or rank",
                    e
                )));
            }
        }
        if let Some(m) = &self.mia {
            if m.enabled && m.n_per_class < 2 {
                return Err(Error::config(
                    "mia.n_per_class must be at least 2".to_string(),
                ));
            }
        }
        // Layer names and tau override targets are checked against the
        // model's probe points; parameters are thrown away.
        let classes = name.num_classes();
        let model = Model::build(kind, classes, 0)?;
        self.resolve_layers(&model)?;
        for o in &self.tau_overrides {
            if model.probe_point(&o.layer).is_none() {
                return Err(Error::config(format!(
                    "tau override names unknown layer '{}'",
                    o.layer
                )));
            }
        }
        Ok(())
    }
}

/// Train/test quality after one epoch; test fields are absent when the
/// test split is empty.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct Artifacts {
    pub metrics_csv: Option<String>,
    pub summary_json: Option<String>,
    pub checkpoint: Option<String>,
    pub attack_results_json: Option<String>,
    pub correlation_json: Option<String>,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct Timing {
    pub train_seconds: f64,
    pub estimate_seconds: f64,
    pub mia_seconds: f64,
    pub total_seconds: f64,
}

/// What a finished (or aborted) run left behind. Artifact paths are file
/// names relative to the run directory, recorded only once the file
/// exists.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub num_classes: usize,
    pub parameter_total: usize,
    pub layers: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub artifacts: Artifacts,
    pub timing: Timing,
    pub complete: bool,
}

pub const MANIFEST_NAME: &str = "manifest.json";
pub const METRICS_NAME: &str = "metrics.csv";
pub const SUMMARY_NAME: &str = "summary.json";
pub const CHECKPOINT_NAME: &str = "model.ckpt";
pub const ATTACK_NAME: &str = "attack_results.json";
pub const CORRELATION_NAME: &str = "correlation.json";

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::numerical(format!("serialization failed: {}", e)))?;
    let mut bytes = json.into_bytes();
    bytes.push(b'\n');
    crate::write_atomic(path, &bytes)
}

pub fn load_manifest(out_dir: &Path) -> Result<RunManifest> {
    let path = out_dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("bad manifest {}: {}", path.display(), e)))
}

fn phase<T>(result: Result<T>, what: &str) -> Result<T> {
    result.map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {}", what, m)),
        Error::Format(m) => Error::Format(format!("{}: {}", what, m)),
        Error::Numerical(m) => Error::Numerical(format!("{}: {}", what, m)),
        Error::Contract(m) => Error::Contract(format!("{}: {}", what, m)),
        Error::Io(e) => Error::Io(e),
    })
}

/// Write the configured synthetic dataset into its directory unless the
/// files are already present.
pub fn ensure_dataset(cfg: &ExperimentConfig) -> Result<()> {
    if !cfg.dataset.synthesize {
        return Ok(());
    }
    let name = cfg.dataset_name()?;
    let dir = &cfg.dataset.dir;
    let marker = match name {
        DatasetName::Mnist => dir.join("train-images-idx3-ubyte"),
        DatasetName::Cifar10 => dir.join("data_batch_1.bin"),
        DatasetName::Cifar100 => dir.join("train.bin"),
    };
    if marker.exists() {
        return Ok(());
    }
    let (n_train, n_test) = (cfg.dataset.synth_train, cfg.dataset.synth_test);
    match name {
        DatasetName::Mnist => synth::write_synthetic_mnist(dir, n_train, n_test, cfg.seed),
        DatasetName::Cifar10 => synth::write_synthetic_cifar10(dir, n_train, n_test, cfg.seed),
        DatasetName::Cifar100 => synth::write_synthetic_cifar100(dir, n_train, n_test, cfg.seed),
    }
}

fn load_split(cfg: &ExperimentConfig, split: Split, limit: usize) -> Result<Dataset> {
    let mut ds = data::load_dataset(cfg.dataset_name()?, &cfg.dataset.dir, split)?;
    ds.truncate(limit);
    Ok(ds)
}

/// Mean loss and accuracy over a dataset, in bounded-memory chunks.
/// `None` when the dataset is empty.
pub fn evaluate(model: &Model, data: &Dataset, chunk: usize) -> Result<Option<(f64, f64)>> {
    let n = data.len();
    if n == 0 {
        return Ok(None);
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut done = 0;
    while done < n {
        let take = chunk.min(n - done);
        let rows: Vec<usize> = (done..done + take).collect();
        let (imgs, labels) = data.gather(&rows)?;
        let mut g = Graph::new();
        let (pass, loss) = model.forward_loss(&mut g, &imgs, &labels)?;
        loss_sum += g.value(loss).data[0] * take as f64;
        let preds = Model::predictions(g.value(pass.logits));
        correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        done += take;
    }
    Ok(Some((loss_sum / n as f64, correct as f64 / n as f64)))
}

/// Run one experiment end to end and leave all artifacts in `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    let total_start = Instant::now();
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;

    phase(ensure_dataset(cfg), "while preparing the dataset")?;
    let train = phase(
        load_split(cfg, Split::Train, cfg.limit_train),
        "while loading the training split",
    )?;
    let test = phase(
        load_split(cfg, Split::Test, cfg.limit_test),
        "while loading the test split",
    )?;
    if train.len() < cfg.batch_size {
        return Err(Error::config(format!(
            "batch size {} exceeds the {} available training samples",
            cfg.batch_size,
            train.len()
        )));
    }

    let mut model = Model::build(cfg.model_kind()?, train.num_classes(), cfg.seed)?;
    let layers = cfg.resolve_layers(&model)?;
    let mut manifest = RunManifest {
        config: cfg.clone(),
        num_classes: model.num_classes,
        parameter_total: model.param_count(),
        layers: layers.clone(),
        epochs: Vec::new(),
        artifacts: Artifacts::default(),
        timing: Timing::default(),
        complete: false,
    };
    // A stub manifest marks the run in progress; success overwrites it.
    write_json(&out_dir.join(MANIFEST_NAME), &manifest)?;

    let mut optimizer = Optimizer::new(cfg.optimizer_kind()?, &model.params);
    let est_cfg = EstimatorConfig {
        tau: cfg.tau,
        tau_overrides: cfg
            .tau_overrides
            .iter()
            .map(|o| (o.layer.clone(), o.tau))
            .collect(),
        projection_factor: cfg.projection_factor,
        seed: cfg.seed,
    };

    // The probe batch is drawn once and reused for every epoch.
    let probe_m = cfg.probe_batch_size.min(train.len());
    let probe_rows = data::probe_indices(train.len(), probe_m, cfg.seed)?;
    let (probe_images, _) = train.gather(&probe_rows)?;

    let per_layer_params: HashMap<String, usize> = model
        .probe_points()
        .iter()
        .map(|p| (p.name.clone(), p.param_count))
        .collect();

    let mut series_values: HashMap<(String, MetricKind), Vec<i64>> = HashMap::new();
    let mut train_seconds = 0.0;
    let mut estimate_seconds = 0.0;

    for epoch in 1..=cfg.epochs {
        let train_start = Instant::now();
        let plan = data::BatchPlan::new(train.len(), cfg.batch_size, cfg.seed, epoch)?;
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut correct = 0usize;
        for batch in plan.batches() {
            let (imgs, labels) = train.gather(batch)?;
            let mut g = Graph::new();
            let (pass, loss) = model.forward_loss(&mut g, &imgs, &labels)?;
            let loss_value = g.value(loss).data[0];
            if !loss_value.is_finite() {
                return Err(Error::numerical(format!(
                    "training loss became non-finite at epoch {}",
                    epoch
                )));
            }
            loss_sum += loss_value * batch.len() as f64;
            seen += batch.len();
            let preds = Model::predictions(g.value(pass.logits));
            correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
            let mut grads = g.backward(loss)?;
            let grad_list = model.extract_param_grads(&pass, &mut grads)?;
            optimizer.step(&mut model.params, &grad_list)?;
        }
        train_seconds += train_start.elapsed().as_secs_f64();

        let est_start = Instant::now();
        let mut g = Graph::new();
        let pass = phase(
            model.forward(&mut g, &probe_images),
            "while estimating on the probe batch",
        )?;
        if cfg.wants(MetricKind::Dof) {
            let estimates = phase(
                dof::run_dof_schedule(&g, &pass, &model, &layers, epoch, &est_cfg),
                "while estimating degrees of freedom",
            )?;
            for e in estimates {
                series_values
                    .entry((e.layer.clone(), MetricKind::Dof))
                    .or_default()
                    .push(e.dof as i64);
            }
        }
        if cfg.wants(MetricKind::Rank) {
            let estimates = phase(
                jrank::run_rank_schedule(&g, &pass, &model, &layers, epoch, &est_cfg),
                "while estimating rank",
            )?;
            for e in estimates {
                series_values
                    .entry((e.layer.clone(), MetricKind::Rank))
                    .or_default()
                    .push(e.rank as i64);
            }
        }
        estimate_seconds += est_start.elapsed().as_secs_f64();

        let test_stats = phase(evaluate(&model, &test, 256), "while evaluating")?;
        manifest.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            test_loss: test_stats.map(|s| s.0),
            test_accuracy: test_stats.map(|s| s.1),
        });
    }

    let mut series: Vec<MetricSeries> = Vec::new();
    for kind in [MetricKind::Dof, MetricKind::Rank] {
        if !cfg.wants(kind) {
            continue;
        }
        for layer in &layers {
            let values = series_values
                .remove(&(layer.clone(), kind))
                .expect("every scheduled series has one value per epoch");
            series.push(MetricSeries {
                layer: layer.clone(),
                kind,
                values,
            });
        }
    }

    // MIA runs on the final model so summaries can carry attack columns.
    let mia_start = Instant::now();
    let mut attack_results: Vec<AttackResult> = Vec::new();
    if let Some(mc) = &cfg.mia {
        if mc.enabled {
            attack_results = attack_layers(&model, &train, &test, &layers, mc, cfg.seed)?;
        }
    }
    let attack_by_layer: HashMap<&str, f64> = attack_results
        .iter()
        .map(|r| (r.layer.as_str(), r.test_accuracy))
        .collect();
    let mia_seconds = mia_start.elapsed().as_secs_f64();

    let mut summaries: Vec<LayerSummary> = Vec::new();
    for s in &series {
        let params = per_layer_params[&s.layer];
        let attack = attack_by_layer.get(s.layer.as_str()).map(|a| 100.0 * a);
        summaries.push(metrics::summarize(s, params, attack, cfg.epochs)?);
    }

    let metrics_path = out_dir.join(METRICS_NAME);
    metrics::write_metrics_csv(&metrics_path, &series)?;
    manifest.artifacts.metrics_csv = Some(METRICS_NAME.to_string());

    let summary_path = out_dir.join(SUMMARY_NAME);
    metrics::write_summary_json(&summary_path, &summaries)?;
    manifest.artifacts.summary_json = Some(SUMMARY_NAME.to_string());

    model.save(&out_dir.join(CHECKPOINT_NAME))?;
    manifest.artifacts.checkpoint = Some(CHECKPOINT_NAME.to_string());

    if !attack_results.is_empty() {
        write_json(&out_dir.join(ATTACK_NAME), &attack_results)?;
        manifest.artifacts.attack_results_json = Some(ATTACK_NAME.to_string());
        manifest.artifacts.correlation_json = write_correlation(out_dir, &summaries)?;
    }

    manifest.timing = Timing {
        train_seconds,
        estimate_seconds,
        mia_seconds,
        total_seconds: total_start.elapsed().as_secs_f64(),
    };
    manifest.complete = true;
    write_json(&out_dir.join(MANIFEST_NAME), &manifest)?;
    Ok(manifest)
}

/// Attack every probe layer of a trained model and collect the results.
fn attack_layers(
    model: &Model,
    train: &Dataset,
    test: &Dataset,
    layers: &[String],
    mc: &MiaConfig,
    seed: u64,
) -> Result<Vec<AttackResult>> {
    if mc.n_per_class > train.len() || mc.n_per_class > test.len() {
        return Err(Error::config(format!(
            "mia.n_per_class {} exceeds the {} training / {} test samples",
            mc.n_per_class,
            train.len(),
            test.len()
        )));
    }
    let attack_cfg = AttackConfig {
        epochs: mc.attack_epochs,
        batch_size: mc.attack_batch_size,
        learning_rate: mc.attack_learning_rate,
        hidden: mc.attack_hidden,
    };
    let mut results = Vec::with_capacity(layers.len());
    for layer in layers {
        let ds = phase(
            mia::build_attack_dataset(model, train, test, layer, mc.n_per_class, seed),
            "while building the attack set",
        )?;
        let result = phase(
            mia::train_attack(&ds, &attack_cfg, seed),
            "while training the attack",
        )?;
        results.push(result);
    }
    Ok(results)
}

/// Derive (final MCR, attack accuracy) pairs from summary rows and write
/// the correlation report when at least 3 layers qualify. Returns the
/// artifact name when written.
fn write_correlation(out_dir: &Path, summaries: &[LayerSummary]) -> Result<Option<String>> {
    let mut pairs: Vec<CorrelationPair> = Vec::new();
    for s in summaries {
        if s.kind != MetricKind::Dof {
            continue;
        }
        if let (Some(mcr), Some(acc)) = (s.final_mcr_percent, s.attack_accuracy_percent) {
            pairs.push(CorrelationPair {
                layer: s.layer_id.clone(),
                mcr_percent: mcr,
                attack_accuracy: acc,
            });
        }
    }
    if pairs.len() < 3 {
        return Ok(None);
    }
    let report = mia::correlate(&pairs)?;
    write_json(&out_dir.join(CORRELATION_NAME), &report)?;
    Ok(Some(CORRELATION_NAME.to_string()))
}

/// Attack a finished run in place: loads the checkpoint and datasets named
/// by `cfg`, attacks every probed layer, rewrites attack_results.json and
/// the summary attack columns, and refreshes correlation and manifest.
/// The config's mia section supplies the attack parameters; its `enabled`
/// flag is ignored because calling this IS the explicit request.
pub fn run_mia(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<AttackResult>> {
    cfg.validate()?;
    let mc = cfg
        .mia
        .as_ref()
        .ok_or_else(|| Error::config("config has no mia section".to_string()))?;
    let mut manifest = load_manifest(out_dir)?;
    let checkpoint = manifest.artifacts.checkpoint.as_deref().ok_or_else(|| {
        Error::contract("manifest lists no checkpoint; run the experiment first".to_string())
    })?;
    let summary_name = manifest.artifacts.summary_json.clone().ok_or_else(|| {
        Error::contract("manifest lists no summary artifact; run the experiment first".to_string())
    })?;
    let model = Model::load(&out_dir.join(checkpoint))?;

    let mia_start = Instant::now();
    let train = phase(
        load_split(cfg, Split::Train, cfg.limit_train),
        "while loading the training split",
    )?;
    let test = phase(
        load_split(cfg, Split::Test, cfg.limit_test),
        "while loading the test split",
    )?;
    let results = attack_layers(&model, &train, &test, &manifest.layers, mc, cfg.seed)?;
    write_json(&out_dir.join(ATTACK_NAME), &results)?;

    let attack_by_layer: HashMap<&str, f64> = results
        .iter()
        .map(|r| (r.layer.as_str(), r.test_accuracy))
        .collect();
    let text = std::fs::read_to_string(out_dir.join(&summary_name))?;
    let mut rows: Vec<LayerSummary> =
        serde_json::from_str(&text).map_err(|e| Error::format(format!("bad summary: {}", e)))?;
    for row in &mut rows {
        row.attack_accuracy_percent = attack_by_layer
            .get(row.layer_id.as_str())
            .map(|a| 100.0 * a);
    }
    metrics::write_summary_json(&out_dir.join(&summary_name), &rows)?;

    manifest.artifacts.attack_results_json = Some(ATTACK_NAME.to_string());
    manifest.artifacts.correlation_json = write_correlation(out_dir, &rows)?;
    manifest.timing.mia_seconds = mia_start.elapsed().as_secs_f64();
    write_json(&out_dir.join(MANIFEST_NAME), &manifest)?;
    Ok(results)
}

/// Render the two run tables: peak compression per layer and final
/// memorization ratios, each with attack accuracy when one ran. Missing
/// metrics render as blank cells.
pub fn emit_tables(out_dir: &Path, manifest: &RunManifest) -> Result<String> {
    let summary_name = manifest.artifacts.summary_json.as_deref().ok_or_else(|| {
        Error::contract("manifest lists no summary artifact; run the experiment first".to_string())
    })?;
    let text = std::fs::read_to_string(out_dir.join(summary_name))?;
    let rows: Vec<LayerSummary> =
        serde_json::from_str(&text).map_err(|e| Error::format(format!("bad summary: {}", e)))?;

    let find = |layer: &str, kind: MetricKind| -> Option<&LayerSummary> {
        rows.iter().find(|r| r.layer_id == layer && r.kind == kind)
    };
    let attack_cell = |layer: &str| -> String {
        rows.iter()
            .find(|r| r.layer_id == layer)
            .and_then(|r| r.attack_accuracy_percent)
            .map(|a| format!("{:.2}%", a))
            .unwrap_or_else(|| "-".to_string())
    };

    let mut cv_rows: Vec<[String; 5]> = Vec::new();
    let mut mcr_rows: Vec<[String; 5]> = Vec::new();
    for layer in &manifest.layers {
        let params = rows
            .iter()
            .find(|r| r.layer_id == *layer)
            .map(|r| r.parameter_amount.to_string())
            .unwrap_or_default();
        let cv = |kind| {
            find(layer, kind)
                .map(|r| metrics::format_cv(r.max_cv, r.max_cv_minus_final))
                .unwrap_or_default()
        };
        let mcr = |kind| {
            find(layer, kind)
                .map(|r| metrics::format_mcr(r.final_mcr_percent))
                .unwrap_or_default()
        };
        cv_rows.push([
            layer.clone(),
            params.clone(),
            cv(MetricKind::Dof),
            cv(MetricKind::Rank),
            attack_cell(layer),
        ]);
        mcr_rows.push([
            layer.clone(),
            params,
            mcr(MetricKind::Dof),
            mcr(MetricKind::Rank),
            attack_cell(layer),
        ]);
    }

    let mut out = String::new();
    out.push_str(&render_table(
        "CV and attack accuracy",
        ["Layer", "Params", "CV dof", "CV rank", "Attack"],
        &cv_rows,
    ));
    out.push('\n');
    out.push_str(&render_table(
        "MCR and attack accuracy",
        ["Layer", "Params", "MCR dof", "MCR rank", "Attack"],
        &mcr_rows,
    ));
    Ok(out)
}

fn render_table(title: &str, header: [&str; 5], rows: &[[String; 5]]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = format!("{}\n", title);
    let mut line = String::new();
    for (i, h) in header.iter().enumerate() {
        line.push_str(&format!("{:<width$}  ", h, width = widths[i]));
    }
    out.push_str(line.trim_end());
    out.push('\n');
    for row in rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            line.push_str(&format!("{:<width$}  ", cell, width = widths[i]));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Write one tab-separated series file per (figure kind, layer) under
/// `out_dir/plots`: raw values, compression values, and ratio series when
/// defined. Returns the files written.
pub fn emit_plot_data(out_dir: &Path, manifest: &RunManifest) -> Result<Vec<PathBuf>> {
    let metrics_name = manifest.artifacts.metrics_csv.as_deref().ok_or_else(|| {
        Error::contract("manifest lists no metrics artifact; run the experiment first".to_string())
    })?;
    let series = metrics::read_metrics_csv(&out_dir.join(metrics_name))?;
    let plots = out_dir.join("plots");
    std::fs::create_dir_all(&plots)?;

    let mut written = Vec::new();
    let mut emit = |name: String, header: &str, lines: Vec<String>| -> Result<()> {
        let path = plots.join(name);
        let mut text = format!("epoch\t{}\n", header);
        for l in lines {
            text.push_str(&l);
            text.push('\n');
        }
        crate::write_atomic(&path, text.as_bytes())?;
        written.push(path);
        Ok(())
    };

    for s in &series {
        let kind = s.kind.as_str();
        emit(
            format!("{}_{}.tsv", kind, s.layer),
            "value",
            s.values
                .iter()
                .enumerate()
                .map(|(t, v)| format!("{}\t{}", t + 1, v))
                .collect(),
        )?;
        let cv = metrics::compute_cv(&s.values)?;
        emit(
            format!("cv_{}_{}.tsv", kind, s.layer),
            "cv",
            cv.iter()
                .enumerate()
                .map(|(t, v)| format!("{}\t{}", t + 1, v))
                .collect(),
        )?;
        if let Some(mcr) = metrics::compute_mcr(&s.values)? {
            emit(
                format!("mcr_{}_{}.tsv", kind, s.layer),
                "mcr_percent",
                mcr.iter()
                    .enumerate()
                    .map(|(t, v)| format!("{}\t{:.2}", t + 1, v))
                    .collect(),
            )?;
        }
    }
    Ok(written)
}
