//! Experiment orchestration: data preparation, per-depth train / certify /
//! attack jobs, and the report stage. Every stage reads and writes plain
//! files in the output directory so stages can be run separately.
//!
//! Depth accounting: `depth` counts hidden layers. With the default
//! Leaky-ReLU output node the certified cascade has `N = depth + 1` layers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{evaluate_dataset, AttackConfig, EvaluationSummary};
use crate::data::{self, Dataset, Preprocessor};
use crate::error::{Error, Result};
use crate::model::{check_slope, MlpModel, OutputActivation};
use crate::par::{self, ExecMode};
use crate::passivity::{certify, BoundPolicy, CertificateReport};
use crate::report::{box_plot_svg, histogram, histogram_svg, BoxSeries, FiveNumberSummary};
use crate::training::{self, AdamConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        #[serde(default = "default_samples")]
        n_samples: usize,
        #[serde(default = "default_features")]
        features: usize,
        #[serde(default = "default_noise")]
        noise_std: f64,
    },
    Csv {
        path: PathBuf,
        target_column: String,
    },
}

fn default_samples() -> usize {
    2000
}
fn default_features() -> usize {
    10
}
fn default_noise() -> f64 {
    0.05
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            n_samples: default_samples(),
            features: default_features(),
            noise_std: default_noise(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSettings {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub penalty_rescale: bool,
    pub penalty_weight: f64,
    pub adam: AdamConfig,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            penalty_rescale: t.penalty_rescale,
            penalty_weight: t.penalty_weight,
            adam: t.adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Hidden-layer counts, one independent job each.
    pub depths: Vec<usize>,
    pub slope_a: f64,
    pub nu_target: f64,
    pub output_activation: OutputActivation,
    pub epsilon_attack: f64,
    pub coarse_grid_points: usize,
    pub refine_iterations: usize,
    pub beta: f64,
    pub epsilon_design: Option<f64>,
    pub pca_components: usize,
    pub split: [f64; 3],
    pub seed: u64,
    pub out_dir: PathBuf,
    pub training: TrainingSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let attack = AttackConfig::default();
        Self {
            dataset: DatasetSource::default(),
            depths: vec![2, 6, 12],
            slope_a: 0.5,
            nu_target: 1.0,
            output_activation: OutputActivation::LeakyRelu,
            epsilon_attack: attack.epsilon_attack,
            coarse_grid_points: attack.coarse_grid_points,
            refine_iterations: attack.refine_iterations,
            beta: 1.0,
            epsilon_design: None,
            pca_components: 10,
            split: [0.6, 0.2, 0.2],
            seed: 0,
            out_dir: PathBuf::from("out"),
            training: TrainingSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { location, message } => Error::Parse {
                location: format!("{}: {location}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every field before any work starts.
    pub fn validate(&self) -> Result<()> {
        check_slope(self.slope_a).map_err(|_| {
            Error::config(format!("slope_a must lie in (0, 1), got {}", self.slope_a))
        })?;
        if self.depths.is_empty() {
            return Err(Error::config("depths must not be empty"));
        }
        let min_depth = match self.output_activation {
            OutputActivation::LeakyRelu => 2,
            OutputActivation::Linear => 3,
        };
        if let Some(d) = self.depths.iter().find(|&&d| d < min_depth) {
            return Err(Error::config(format!(
                "depth {d} gives fewer than 3 certified layers; use depth >= {min_depth}"
            )));
        }
        let mut sorted = self.depths.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.depths.len() {
            return Err(Error::config("depths must be distinct"));
        }
        if self.pca_components == 0 {
            return Err(Error::config("pca_components must be at least 1"));
        }
        if let DatasetSource::Synthetic {
            n_samples,
            features,
            noise_std,
        } = &self.dataset
        {
            if *n_samples < 50 || *features == 0 || !(*noise_std >= 0.0) {
                return Err(Error::config(
                    "synthetic dataset needs n_samples >= 50, features >= 1, noise_std >= 0",
                ));
            }
        }
        if self.split.iter().any(|f| !(*f > 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split fractions must be positive and sum to 1, got {:?}",
                self.split
            )));
        }
        self.attack_config().validate()?;
        let policy = self.policy();
        if !(policy.beta > 0.0 && policy.beta.is_finite()) {
            return Err(Error::config(format!("beta must be > 0, got {}", policy.beta)));
        }
        if let Some(e) = policy.epsilon_design {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::config(format!("epsilon_design must be > 0, got {e}")));
            }
        }
        self.train_config(self.depths[0]).validate()
    }

    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            epsilon_attack: self.epsilon_attack,
            coarse_grid_points: self.coarse_grid_points,
            refine_iterations: self.refine_iterations,
        }
    }

    pub fn policy(&self) -> BoundPolicy {
        BoundPolicy {
            beta: self.beta,
            epsilon_design: self.epsilon_design,
        }
    }

    pub fn train_config(&self, depth: usize) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            nu_target: self.nu_target,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: job_seed(self.seed, depth, 1),
            penalty_rescale: t.penalty_rescale,
            penalty_weight: t.penalty_weight,
            adam: t.adam,
        }
    }

    pub fn widths(&self, input_dim: usize, depth: usize) -> Vec<usize> {
        let mut w = vec![input_dim; depth + 1];
        w.push(1);
        w
    }
}

fn job_seed(seed: u64, depth: usize, stream: u64) -> u64 {
    seed ^ (depth as u64)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn model_path(dir: &Path, depth: usize) -> PathBuf {
    dir.join(format!("model_d{depth}.json"))
}
pub fn train_log_path(dir: &Path, depth: usize) -> PathBuf {
    dir.join(format!("train_log_d{depth}.csv"))
}
pub fn certificate_path(dir: &Path, depth: usize) -> PathBuf {
    dir.join(format!("certificate_d{depth}.json"))
}
pub fn evaluation_path(dir: &Path, depth: usize) -> PathBuf {
    dir.join(format!("evaluation_d{depth}.csv"))
}
pub fn evaluation_summary_path(dir: &Path, depth: usize) -> PathBuf {
    dir.join(format!("evaluation_d{depth}.json"))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Preprocessed splits. The preprocessor is fitted on the training split only.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub preprocessor: Preprocessor,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let raw = match &cfg.dataset {
        DatasetSource::Synthetic {
            n_samples,
            features,
            noise_std,
        } => data::synthetic_regression_with_noise(*n_samples, *features, job_seed(cfg.seed, 0, 2), *noise_std)?,
        DatasetSource::Csv {
            path,
            target_column,
        } => data::load_csv(path, target_column)?,
    };
    let splits = data::split(&raw, cfg.split, job_seed(cfg.seed, 0, 3))?;
    let preprocessor = data::fit_preprocessor(&splits.train, cfg.pca_components)?;
    Ok(PreparedData {
        train: preprocessor.apply(&splits.train)?,
        validation: preprocessor.apply(&splits.validation)?,
        test: preprocessor.apply(&splits.test)?,
        preprocessor,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub depth: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub initial_penalty: f64,
    pub final_penalty: f64,
}

pub fn train_depth(cfg: &ExperimentConfig, data: &PreparedData, depth: usize) -> Result<TrainSummary> {
    let widths = cfg.widths(data.train.dim(), depth);
    let init = training::initialize(
        &widths,
        cfg.slope_a,
        cfg.nu_target,
        cfg.output_activation,
        job_seed(cfg.seed, depth, 0),
    )?;
    let tcfg = cfg.train_config(depth);
    let outcome = training::train(init, &data.train.rows(), &data.validation.rows(), &tcfg)?;
    let best = &outcome.log[outcome.best_epoch - 1];
    let final_penalty = training::iifp_penalty(&outcome.model, &tcfg.nu_targets(outcome.model.depth()))?.value;
    write(&model_path(&cfg.out_dir, depth), &outcome.model.to_json())?;
    write(&train_log_path(&cfg.out_dir, depth), &training::log_to_csv(&outcome.log))?;
    log::info!(
        "depth {depth}: {} epochs, best epoch {} (val mse {:.6}), penalty {} -> {}",
        outcome.log.len(),
        outcome.best_epoch,
        best.val_mse,
        outcome.initial_penalty,
        final_penalty
    );
    Ok(TrainSummary {
        depth,
        epochs_run: outcome.log.len(),
        best_epoch: outcome.best_epoch,
        best_val_mse: best.val_mse,
        initial_penalty: outcome.initial_penalty,
        final_penalty,
    })
}

pub fn load_model(dir: &Path, depth: usize) -> Result<MlpModel> {
    let path = model_path(dir, depth);
    MlpModel::from_json(&read(&path)?).map_err(|e| with_file(e, &path))
}

pub fn load_certificate(dir: &Path, depth: usize) -> Result<CertificateReport> {
    let path = certificate_path(dir, depth);
    CertificateReport::from_json(&read(&path)?).map_err(|e| with_file(e, &path))
}

fn with_file(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    }
}

pub fn certify_depth(cfg: &ExperimentConfig, depth: usize) -> Result<CertificateReport> {
    let model = load_model(&cfg.out_dir, depth)?;
    let report = certify(&model, cfg.nu_target, &cfg.policy())?;
    if !report.certified {
        log::warn!(
            "depth {depth}: not certified, layers {:?} have extracted nu <= 0",
            report.uncertified_layers
        );
    }
    write(&certificate_path(&cfg.out_dir, depth), &report.to_json())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthEvaluation {
    pub depth: usize,
    pub cascade_layers: usize,
    pub summary: EvaluationSummary,
}

pub fn attack_depth(cfg: &ExperimentConfig, data: &PreparedData, depth: usize) -> Result<DepthEvaluation> {
    let model = load_model(&cfg.out_dir, depth)?;
    let cert = load_certificate(&cfg.out_dir, depth)?;
    let eval = evaluate_dataset(&model, &cert, &data.test.inputs(), &cfg.attack_config())?;
    write(&evaluation_path(&cfg.out_dir, depth), &eval.to_csv())?;
    let result = DepthEvaluation {
        depth,
        cascade_layers: cert.cascade_layers,
        summary: eval.summary,
    };
    write(
        &evaluation_summary_path(&cfg.out_dir, depth),
        &serde_json::to_string_pretty(&result).expect("summary serializes"),
    )?;
    if result.summary.violations > 0 {
        log::warn!("depth {depth}: {}", result.summary.status);
    }
    Ok(result)
}

/// Runs `job` for every configured depth, collecting results in depth order.
fn per_depth<T: Send>(
    cfg: &ExperimentConfig,
    mode: ExecMode,
    job: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    par::map_slice(mode, &cfg.depths, |&d| job(d)).into_iter().collect()
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<TrainSummary>> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    per_depth(cfg, ExecMode::default(), |d| train_depth(cfg, &data, d))
}

pub fn cmd_certify(cfg: &ExperimentConfig) -> Result<Vec<CertificateReport>> {
    cfg.validate()?;
    per_depth(cfg, ExecMode::Sequential, |d| certify_depth(cfg, d))
}

pub fn cmd_attack(cfg: &ExperimentConfig) -> Result<Vec<DepthEvaluation>> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    per_depth(cfg, ExecMode::Sequential, |d| attack_depth(cfg, &data, d))
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub depth: usize,
    pub points: usize,
    pub certified: bool,
    pub rho: Option<f64>,
    pub bound_ratio: Option<f64>,
    pub ratios: Option<FiveNumberSummary>,
    pub violations: usize,
    pub nu_extracted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub policy: String,
    pub rows: Vec<ReportRow>,
    pub total_violations: usize,
}

/// Ratios and the bound read back from an evaluation CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationTable {
    pub ratios: Vec<f64>,
    pub bound_ratio: Option<f64>,
    pub violations: usize,
}

pub fn read_evaluation_csv(path: &Path) -> Result<EvaluationTable> {
    let text = read(path)?;
    parse_evaluation_csv(&text, &path.display().to_string())
}

pub fn parse_evaluation_csv(text: &str, source: &str) -> Result<EvaluationTable> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(format!("{source}: header"), e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::parse(format!("{source}: header"), format!("missing column {name:?}"))
        })
    };
    let (ratio_c, bound_c, viol_c) = (col("ratio")?, col("bound_ratio")?, col("violated")?);
    let mut table = EvaluationTable {
        ratios: Vec::new(),
        bound_ratio: None,
        violations: 0,
    };
    for (i, rec) in rdr.records().enumerate() {
        let at = |c: usize| format!("{source}: row {} column {:?}", i + 1, &headers[c]);
        let rec = rec.map_err(|e| Error::parse(format!("{source}: row {}", i + 1), e.to_string()))?;
        let ratio: f64 = rec[ratio_c]
            .parse()
            .map_err(|_| Error::parse(at(ratio_c), format!("bad number {:?}", &rec[ratio_c])))?;
        table.ratios.push(ratio);
        if !rec[bound_c].is_empty() {
            let b: f64 = rec[bound_c]
                .parse()
                .map_err(|_| Error::parse(at(bound_c), format!("bad number {:?}", &rec[bound_c])))?;
            table.bound_ratio = Some(b);
        }
        match &rec[viol_c] {
            "0" => {}
            "1" => table.violations += 1,
            other => return Err(Error::parse(at(viol_c), format!("expected 0 or 1, got {other:?}"))),
        }
    }
    Ok(table)
}

/// Builds `summary.csv`, `summary.json`, `ratios_boxplot.svg` and
/// `nu_histogram.svg` from the per-depth evaluation CSVs and certificates.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let dir = &cfg.out_dir;
    let mut rows = Vec::new();
    for &depth in &cfg.depths {
        let table = read_evaluation_csv(&evaluation_path(dir, depth))?;
        let cert = load_certificate(dir, depth)?;
        rows.push(ReportRow {
            depth,
            points: table.ratios.len(),
            certified: cert.certified,
            rho: cert.rho,
            bound_ratio: table.bound_ratio.or(cert.bound_ratio),
            ratios: FiveNumberSummary::from_values(&table.ratios),
            violations: table.violations,
            nu_extracted: cert.per_layer.iter().map(|c| c.nu_extracted).collect(),
        });
    }

    let mut csv_out = String::from(
        "depth,points,certified,rho,bound_ratio,ratio_min,ratio_q1,ratio_median,ratio_q3,ratio_max,violations\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &rows {
        let q = r.ratios;
        csv_out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.depth,
            r.points,
            u8::from(r.certified),
            opt(r.rho),
            opt(r.bound_ratio),
            opt(q.map(|q| q.min)),
            opt(q.map(|q| q.q1)),
            opt(q.map(|q| q.median)),
            opt(q.map(|q| q.q3)),
            opt(q.map(|q| q.max)),
            r.violations
        ));
    }
    write(&dir.join("summary.csv"), &csv_out)?;

    let series: Vec<BoxSeries> = rows
        .iter()
        .filter_map(|r| {
            r.ratios.map(|stats| BoxSeries {
                label: format!("depth {}", r.depth),
                stats,
                bound: r.bound_ratio,
            })
        })
        .collect();
    write(
        &dir.join("ratios_boxplot.svg"),
        &box_plot_svg("Output/input deviation ratio under constant perturbation", &series),
    )?;

    let nus: Vec<f64> = rows.iter().flat_map(|r| r.nu_extracted.iter().copied()).collect();
    let bins = histogram(&nus, 20)?;
    write(
        &dir.join("nu_histogram.svg"),
        &histogram_svg("Extracted layer nu", &bins, Some(cfg.nu_target)),
    )?;

    let report = Report {
        policy: cfg.policy().describe(),
        total_violations: rows.iter().map(|r| r.violations).sum(),
        rows,
    };
    write(
        &dir.join("summary.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(report)
}

/// Full pipeline. Depth jobs run in parallel; each job is internally ordered
/// and writes only its own files.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Report> {
    run_all_with(cfg, ExecMode::default())
}

pub fn run_all_with(cfg: &ExperimentConfig, mode: ExecMode) -> Result<Report> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    write(&cfg.out_dir.join("config.json"), &cfg.to_json())?;
    per_depth(cfg, mode, |d| {
        train_depth(cfg, &data, d)?;
        certify_depth(cfg, d)?;
        attack_depth(cfg, &data, d)
    })?;
    cmd_report(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_slope_is_config_error() {
        let cfg = ExperimentConfig {
            slope_a: 1.2,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn shallow_depths_rejected() {
        let cfg = ExperimentConfig {
            depths: vec![1],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let linear = ExperimentConfig {
            depths: vec![2],
            output_activation: OutputActivation::Linear,
            ..Default::default()
        };
        assert!(linear.validate().is_err());
    }

    #[test]
    fn config_json_roundtrip_and_partial() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let partial = ExperimentConfig::from_json(r#"{"depths": [3], "seed": 7}"#).unwrap();
        assert_eq!(partial.depths, vec![3]);
        assert_eq!(partial.slope_a, 0.5);
        let csv = ExperimentConfig::from_json(
            r#"{"dataset": {"kind": "csv", "path": "x.csv", "target_column": "y"}}"#,
        )
        .unwrap();
        assert!(matches!(csv.dataset, DatasetSource::Csv { .. }));
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"dept": [3]}"#),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn widths_follow_depth() {
        assert_eq!(ExperimentConfig::default().widths(10, 2), vec![10, 10, 10, 1]);
    }

    #[test]
    fn evaluation_csv_parsing() {
        let t = parse_evaluation_csv(
            "point_index,delta_star,ratio,bound_ratio,violated,dev_sq_1\n0,0.1,0.1,0.5,0,1\n1,0.1,0.3,0.5,0,1\n",
            "t",
        )
        .unwrap();
        assert_eq!(t.ratios, vec![0.1, 0.3]);
        assert_eq!(t.bound_ratio, Some(0.5));
        let bad = parse_evaluation_csv("point_index,ratio,bound_ratio,violated\n0,abc,,0\n", "t");
        assert!(matches!(bad, Err(Error::Parse { location, .. }) if location.contains("row 1")));
        assert!(parse_evaluation_csv("a,b\n1,2\n", "t").is_err());
    }
}
