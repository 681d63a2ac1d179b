//! End-to-end experiment pipeline: generate data, train each arm, evaluate.
//!
//! Everything is driven by an [`ExperimentConfig`] read from TOML. Unknown
//! keys are rejected. Output layout under `output_dir`:
//!
//! ```text
//! data/signals.f64, data/labels.txt, data/manifest.json
//! density.tsv                    training-label density on the grid
//! arms/<name>/checkpoint.json    trained model, config echo, seed, log
//! arms/<name>/train_log.tsv      one row per epoch
//! report.json                    deterministic machine-readable report
//! metadata.json                  wall-clock timestamp of the evaluation
//! table.txt, metrics.tsv         comparison table, flat metric rows
//! plots/<name>_hist.tsv          per-bin label and prediction counts
//! plots/<name>_scatter.tsv       label, prediction, corrected prediction
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::calibration::{assign_subgroups, correct, fit_residuals, ResidualFit, SubgroupCounts, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::label_distribution::{
    estimate_density, few_shot_region, silverman_bandwidth, Bandwidth, LabelDensity, LabelSpace, RegionMask,
};
use crate::loss::{BaseMetric, LossConfig};
use crate::metrics::{bin_counts, evaluate, EvalReport, Region, TSV_HEADER};
use crate::nn::{predict, Net1DLite, NetConfig};
use crate::synth::{self, Dataset, SynthConfig};
use crate::train::{train, EpochLog, TrainConfig, EPOCH_LOG_HEADER};

pub const TOOLKIT: &str = "distreg";
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
const CHECKPOINT_FORMAT: &str = "distreg-checkpoint-1";
const PREDICT_BATCH: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelSpaceConfig {
    pub bin_width: f64,
    pub bandwidth: Bandwidth,
    /// Grid ends; default to `synth.label_range`.
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Default for LabelSpaceConfig {
    fn default() -> Self {
        Self { bin_width: 1.0, bandwidth: Bandwidth::Auto, lo: None, hi: None }
    }
}

/// Optimizer settings shared by every arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { batch_size: t.batch_size, epochs: t.epochs, lr: t.lr, weight_decay: t.weight_decay, seed: t.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub name: String,
    pub lambda: f64,
    #[serde(default)]
    pub base_metric: BaseMetric,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    LossConfig::default().epsilon
}

impl ArmConfig {
    pub fn loss(&self) -> LossConfig {
        LossConfig { lambda: self.lambda, base_metric: self.base_metric, epsilon: self.epsilon }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub threshold: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub synth: SynthConfig,
    pub label_space: LabelSpaceConfig,
    pub model: NetConfig,
    pub train: TrainSettings,
    pub arms: Vec<ArmConfig>,
    pub calibration: CalibrationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/experiment"),
            synth: SynthConfig::default(),
            label_space: LabelSpaceConfig::default(),
            model: NetConfig::default(),
            train: TrainSettings::default(),
            arms: vec![
                ArmConfig { name: "plain".into(), lambda: 0.0, base_metric: BaseMetric::Mae, epsilon: 1.0 },
                ArmConfig { name: "dist".into(), lambda: 1.0, base_metric: BaseMetric::Mae, epsilon: 1.0 },
            ],
            calibration: CalibrationConfig::default(),
        }
    }
}

fn valid_arm_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl ExperimentConfig {
    /// Parses TOML, fills in the grid ends and validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn resolve(&mut self) {
        let [lo, hi] = self.synth.label_range;
        self.label_space.lo.get_or_insert(lo);
        self.label_space.hi.get_or_insert(hi);
    }

    /// Applies command-line overrides. A seed override replaces both the
    /// data seed and the training seed.
    pub fn with_overrides(mut self, seed: Option<u64>, output_dir: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.synth.seed = s;
            self.train.seed = s;
        }
        if let Some(dir) = output_dir {
            self.output_dir = dir;
        }
        self
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.synth.validate()?;
        self.model.validate()?;
        if self.model.input_len != self.synth.length {
            return bad(format!(
                "model.input_len ({}) must equal synth.length ({})",
                self.model.input_len, self.synth.length
            ));
        }
        self.label_space()?;
        if self.arms.is_empty() {
            return bad("at least one [[arms]] entry is required".into());
        }
        let mut seen = HashSet::new();
        for arm in &self.arms {
            if !valid_arm_name(&arm.name) {
                return bad(format!("arm name {:?} must be non-empty ASCII letters, digits, '-' or '_'", arm.name));
            }
            if !seen.insert(arm.name.as_str()) {
                return bad(format!("duplicate arm name {:?}", arm.name));
            }
            self.train_config(arm).validate()?;
        }
        if !(self.calibration.threshold > 0.0 && self.calibration.threshold.is_finite()) {
            return bad(format!("calibration.threshold must be positive, got {}", self.calibration.threshold));
        }
        Ok(())
    }

    pub fn label_space(&self) -> Result<LabelSpace> {
        let [lo, hi] = self.synth.label_range;
        let ls = &self.label_space;
        if !(ls.bin_width > 0.0 && ls.bin_width.is_finite()) {
            return Err(Error::InvalidConfig(format!("label_space.bin_width must be positive, got {}", ls.bin_width)));
        }
        LabelSpace::from_range(ls.lo.unwrap_or(lo), ls.hi.unwrap_or(hi), ls.bin_width)
            .map_err(|e| Error::InvalidConfig(format!("label_space: {e}")))
    }

    pub fn train_config(&self, arm: &ArmConfig) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            epochs: t.epochs,
            lr: t.lr,
            weight_decay: t.weight_decay,
            seed: t.seed,
            loss: arm.loss(),
        }
    }

    pub fn arm(&self, name: &str) -> Result<&ArmConfig> {
        self.arms
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::InvalidConfig(format!("no arm named {name:?}")))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.output_dir.join("data")
    }

    pub fn arm_dir(&self, name: &str) -> PathBuf {
        self.output_dir.join("arms").join(name)
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.arm_dir(name).join("checkpoint.json")
    }

    pub fn report_path(&self) -> PathBuf {
        self.output_dir.join("report.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub arm: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub model: Net1DLite,
    pub train_log: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Malformed { path: path.to_path_buf(), reason: e.to_string() })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("unsupported checkpoint format {:?}", ck.format),
            });
        }
        Ok(ck)
    }
}

/// Loads the dataset and checks it was generated from `cfg.synth`.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dir = cfg.data_dir();
    if !dir.join(synth::MANIFEST_FILE).is_file() {
        return Err(Error::MissingDataset(dir));
    }
    let (data, manifest) = synth::read_dataset(&dir)?;
    if manifest.config != cfg.synth {
        return Err(Error::Stale {
            path: dir.join(synth::MANIFEST_FILE),
            reason: "the dataset was generated from different synth settings; rerun generate".into(),
        });
    }
    Ok(data)
}

/// Training-label density on the configured grid.
pub fn training_density(cfg: &ExperimentConfig, train_labels: &[f64]) -> Result<LabelDensity> {
    estimate_density(train_labels, &cfg.label_space()?, cfg.label_space.bandwidth)
}

pub fn run_generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let data = synth::generate(&cfg.synth)?;
    synth::write_dataset(&data, &cfg.synth, &cfg.data_dir())?;
    let (train_set, _) = data.partition();
    training_density(cfg, &train_set.labels)?.write_tsv(&cfg.output_dir.join("density.tsv"))?;
    Ok(data)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
    (m, if sd > 0.0 { sd } else { 1.0 })
}

/// Trains one arm on the training split and returns its checkpoint.
pub fn train_arm(cfg: &ExperimentConfig, arm: &ArmConfig, train_set: &Dataset, density: &LabelDensity) -> Result<Checkpoint> {
    let tc = cfg.train_config(arm);
    let mut model = Net1DLite::new(cfg.model, tc.seed)?;
    let (shift, scale) = mean_sd(&train_set.labels);
    model.set_output_scaling(shift, scale);
    let log = train(&mut model, &train_set.signals, &train_set.labels, &tc, density)?;
    Ok(Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        arm: arm.name.clone(),
        seed: tc.seed,
        config: cfg.clone(),
        model,
        train_log: log,
    })
}

fn write_train_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut s = String::from(EPOCH_LOG_HEADER);
    s.push('\n');
    for row in log {
        s.push_str(&row.tsv_row());
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Trains the selected arm, or all arms, writing a checkpoint and a training
/// log for each. With `parallel` the arms train on separate threads.
pub fn run_train(cfg: &ExperimentConfig, arm: Option<&str>, parallel: bool) -> Result<Vec<Checkpoint>> {
    cfg.validate()?;
    let arms: Vec<&ArmConfig> = match arm {
        Some(name) => vec![cfg.arm(name)?],
        None => cfg.arms.iter().collect(),
    };
    let data = load_dataset(cfg)?;
    let (train_set, _) = data.partition();
    let density = training_density(cfg, &train_set.labels)?;

    let results: Vec<Result<Checkpoint>> = if parallel && arms.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> =
                arms.iter().map(|a| s.spawn(|| train_arm(cfg, a, &train_set, &density))).collect();
            handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
        })
    } else {
        arms.iter().map(|a| train_arm(cfg, a, &train_set, &density)).collect()
    };

    let mut out = Vec::with_capacity(results.len());
    for r in results {
        let ck = r?;
        let dir = cfg.arm_dir(&ck.arm);
        fs::create_dir_all(&dir)?;
        ck.save(&cfg.checkpoint_path(&ck.arm))?;
        write_train_log(&dir.join("train_log.tsv"), &ck.train_log)?;
        out.push(ck);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub bandwidth: f64,
    pub bins: usize,
    pub few_shot_bins: usize,
    pub few_shot_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub loss: LossConfig,
    /// Overall, few-shot and many-shot; empty regions are left out.
    pub regions: Vec<EvalReport>,
    pub calibration: ResidualFit,
    pub subgroups: SubgroupCounts,
    pub train_log: Vec<EpochLog>,
}

impl ArmReport {
    pub fn region(&self, region: Region) -> Option<&EvalReport> {
        self.regions.iter().find(|r| r.region == region)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub toolkit: String,
    pub toolkit_version: String,
    pub synth_seed: u64,
    pub train_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub density: DensitySummary,
    pub arms: Vec<ArmReport>,
    pub config: ExperimentConfig,
}

impl ExperimentReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.name == name)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed { path: path.to_path_buf(), reason: e.to_string() })
    }
}

fn density_summary(cfg: &ExperimentConfig, train_labels: &[f64], mask: &RegionMask) -> Result<DensitySummary> {
    let bandwidth = match cfg.label_space.bandwidth {
        Bandwidth::Auto => silverman_bandwidth(train_labels)?,
        Bandwidth::Fixed(h) => h,
    };
    Ok(DensitySummary {
        bandwidth,
        bins: mask.space().len(),
        few_shot_bins: mask.few_shot().iter().filter(|f| **f).count(),
        few_shot_threshold: mask.threshold(),
    })
}

/// Evaluates every arm on the test split. The residual correction of each
/// arm is fitted on its training-split predictions and applied to the test
/// predictions.
pub fn run_evaluate(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    for arm in &cfg.arms {
        let path = cfg.checkpoint_path(&arm.name);
        if !path.is_file() {
            return Err(Error::MissingCheckpoint { arm: arm.name.clone(), path });
        }
    }
    let data = load_dataset(cfg)?;
    let (train_set, test_set) = data.partition();
    let density = training_density(cfg, &train_set.labels)?;
    let mask = few_shot_region(&density);
    let plots = cfg.output_dir.join("plots");
    fs::create_dir_all(&plots)?;

    let mut arms = Vec::with_capacity(cfg.arms.len());
    for arm in &cfg.arms {
        let path = cfg.checkpoint_path(&arm.name);
        let ck = Checkpoint::load(&path)?;
        if ck.config != *cfg || ck.arm != arm.name {
            return Err(Error::Stale { path, reason: "checkpoint was trained with a different configuration".into() });
        }
        let preds = predict(&ck.model, &test_set.signals, PREDICT_BATCH)?;
        let train_preds = predict(&ck.model, &train_set.signals, PREDICT_BATCH)?;
        let regions = evaluate(&test_set.labels, &preds, &density, &mask)?;
        let fit = fit_residuals(&train_set.labels, &train_preds)?;
        let corrected = correct(&preds, &test_set.labels, &fit)?;
        let subgroups = assign_subgroups(&test_set.labels, &corrected, cfg.calibration.threshold)?.counts;
        write_plot_data(&plots, &arm.name, density.space(), &test_set.labels, &preds, &corrected)?;
        arms.push(ArmReport {
            name: arm.name.clone(),
            loss: arm.loss(),
            regions,
            calibration: fit,
            subgroups,
            train_log: ck.train_log,
        });
    }

    let report = ExperimentReport {
        toolkit: TOOLKIT.into(),
        toolkit_version: TOOLKIT_VERSION.into(),
        synth_seed: cfg.synth.seed,
        train_seed: cfg.train.seed,
        n_train: train_set.len(),
        n_test: test_set.len(),
        density: density_summary(cfg, &train_set.labels, &mask)?,
        arms,
        config: cfg.clone(),
    };
    fs::write(cfg.report_path(), serde_json::to_string_pretty(&report)? + "\n")?;
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let metadata = serde_json::json!({
        "created_unix_seconds": created,
        "toolkit_version": TOOLKIT_VERSION,
    });
    fs::write(cfg.output_dir.join("metadata.json"), serde_json::to_string_pretty(&metadata)? + "\n")?;
    write_tables(cfg, &report)?;
    Ok(report)
}

fn write_plot_data(
    dir: &Path,
    arm: &str,
    space: &LabelSpace,
    labels: &[f64],
    preds: &[f64],
    corrected: &[f64],
) -> Result<()> {
    let (lc, pc) = (bin_counts(labels, space), bin_counts(preds, space));
    let mut hist = String::from("value\tlabel_count\tprediction_count\n");
    for ((v, a), b) in space.values().iter().zip(&lc).zip(&pc) {
        let _ = writeln!(hist, "{v}\t{a}\t{b}");
    }
    fs::write(dir.join(format!("{arm}_hist.tsv")), hist)?;
    let mut scatter = String::from("label\tprediction\tcorrected\n");
    for ((y, p), c) in labels.iter().zip(preds).zip(corrected) {
        let _ = writeln!(scatter, "{y}\t{p}\t{c}");
    }
    fs::write(dir.join(format!("{arm}_scatter.tsv")), scatter)?;
    Ok(())
}

/// Writes `table.txt` and `metrics.tsv` from a report.
pub fn write_tables(cfg: &ExperimentConfig, report: &ExperimentReport) -> Result<()> {
    fs::write(cfg.output_dir.join("table.txt"), render_table(report))?;
    let mut tsv = format!("arm\t{TSV_HEADER}\n");
    for arm in &report.arms {
        for r in &arm.regions {
            let _ = writeln!(tsv, "{}\t{}", arm.name, r.tsv_row());
        }
    }
    fs::write(cfg.output_dir.join("metrics.tsv"), tsv)?;
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

/// Comparison table grouped by region, one row per arm, followed by the
/// calibration summary.
pub fn render_table(report: &ExperimentReport) -> String {
    let name_w = report.arms.iter().map(|a| a.name.len()).max().unwrap_or(3).max(3);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<name_w$}  {:<9}  {:>6}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}  {:>8}  {:>8}",
        "arm", "region", "n", "r", "MAE", "RMSE", "wMAE", "wRMSE", "OR", "MAE/OR", "RMSE/OR"
    );
    for region in Region::ALL {
        for arm in &report.arms {
            let Some(r) = arm.region(region) else { continue };
            let _ = writeln!(
                s,
                "{:<name_w$}  {:<9}  {:>6}  {:>7}  {:>7.3}  {:>7.3}  {:>7.3}  {:>7.3}  {:>7.3}  {:>8}  {:>8}",
                arm.name,
                region.as_str(),
                r.n,
                cell(r.pearson_r),
                r.mae,
                r.rmse,
                r.weighted_mae,
                r.weighted_rmse,
                r.overlap_ratio,
                cell(r.mae_over_or),
                cell(r.rmse_over_or),
            );
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<name_w$}  {:>9}  {:>7}  {:>7}  {:>7}  {:>7}",
        "arm", "intercept", "slope", "younger", "neutral", "older"
    );
    for arm in &report.arms {
        let (c, g) = (&arm.calibration, &arm.subgroups);
        let _ = writeln!(
            s,
            "{:<name_w$}  {:>9.3}  {:>7.4}  {:>7}  {:>7}  {:>7}",
            arm.name, c.intercept, c.slope, g.younger, g.neutral, g.older
        );
    }
    s
}
