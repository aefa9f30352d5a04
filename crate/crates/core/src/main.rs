use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use passivity_cert::harness::{self, DatasetSource, ExperimentConfig};
use passivity_cert::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_VIOLATION: u8 = 2;

#[derive(Parser)]
#[command(version, about = "Train, certify and attack passivity-regularized regression networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per depth and save it with its training log.
    Train(Overrides),
    /// Compute certificates for saved models.
    Certify(Overrides),
    /// Attack every test point of saved, certified models.
    Attack(Overrides),
    /// Summarize evaluations into CSV and SVG reports.
    Report(Overrides),
    /// Train, certify, attack and report in one go.
    RunAll(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden-layer count(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    depth: Option<Vec<usize>>,
    /// CSV file, or `synthetic`.
    #[arg(long)]
    dataset: Option<String>,
    /// Target column name for CSV datasets.
    #[arg(long)]
    target_col: Option<String>,
    #[arg(long)]
    epsilon_attack: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epsilon_design: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Overrides {
    fn resolve(self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(depths) = self.depth {
            cfg.depths = depths;
        }
        match (self.dataset.as_deref(), self.target_col) {
            (Some("synthetic"), None) => {
                if !matches!(cfg.dataset, DatasetSource::Synthetic { .. }) {
                    cfg.dataset = DatasetSource::default();
                }
            }
            (Some("synthetic"), Some(_)) => {
                return Err(Error::Config("--target-col applies only to CSV datasets".into()))
            }
            (Some(path), Some(target_column)) => {
                cfg.dataset = DatasetSource::Csv {
                    path: path.into(),
                    target_column,
                }
            }
            (Some(path), None) => match &cfg.dataset {
                DatasetSource::Csv { target_column, .. } => {
                    cfg.dataset = DatasetSource::Csv {
                        path: path.into(),
                        target_column: target_column.clone(),
                    }
                }
                DatasetSource::Synthetic { .. } => {
                    return Err(Error::Config("a CSV dataset needs --target-col".into()))
                }
            },
            (None, Some(target)) => match &mut cfg.dataset {
                DatasetSource::Csv { target_column, .. } => *target_column = target,
                DatasetSource::Synthetic { .. } => {
                    return Err(Error::Config("--target-col given without a CSV dataset".into()))
                }
            },
            (None, None) => {}
        }
        if let Some(e) = self.epsilon_attack {
            cfg.epsilon_attack = e;
        }
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        if let Some(e) = self.epsilon_design {
            cfg.epsilon_design = Some(e);
        }
        if let Some(dir) = self.out_dir {
            cfg.out_dir = dir;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(command: Command) -> Result<u8, Error> {
    let violations = match command {
        Command::Train(o) => {
            for s in harness::cmd_train(&o.resolve()?)? {
                println!(
                    "depth {}: best epoch {}/{} val_mse {} penalty {} -> {}",
                    s.depth, s.best_epoch, s.epochs_run, s.best_val_mse, s.initial_penalty, s.final_penalty
                );
            }
            0
        }
        Command::Certify(o) => {
            for c in harness::cmd_certify(&o.resolve()?)? {
                let nus: Vec<String> = c.per_layer.iter().map(|l| format!("{:.4}", l.nu_extracted)).collect();
                match c.bound_ratio {
                    Some(b) => println!(
                        "N={} certified rho={} bound={} nu=[{}]",
                        c.cascade_layers,
                        c.rho.unwrap_or(f64::NAN),
                        b,
                        nus.join(", ")
                    ),
                    None => println!(
                        "N={} NOT certified (layers {:?}) nu=[{}]",
                        c.cascade_layers,
                        c.uncertified_layers,
                        nus.join(", ")
                    ),
                }
            }
            0
        }
        Command::Attack(o) => {
            let evals = harness::cmd_attack(&o.resolve()?)?;
            for e in &evals {
                println!(
                    "depth {}: {} points, max ratio {:?}, bound {:?}: {}",
                    e.depth, e.summary.points, e.summary.max_ratio, e.summary.bound_ratio, e.summary.status
                );
            }
            evals.iter().map(|e| e.summary.violations).sum()
        }
        Command::Report(o) => report(harness::cmd_report(&o.resolve()?)?),
        Command::RunAll(o) => report(harness::run_all(&o.resolve()?)?),
    };
    Ok(if violations > 0 { EXIT_VIOLATION } else { 0 })
}

fn report(r: harness::Report) -> usize {
    println!("policy: {}", r.policy);
    for row in &r.rows {
        println!(
            "depth {}: {} points, median ratio {:?}, bound {:?}, violations {}",
            row.depth,
            row.points,
            row.ratios.map(|q| q.median),
            row.bound_ratio,
            row.violations
        );
    }
    if r.total_violations > 0 {
        eprintln!("BOUND VIOLATED on {} point(s)", r.total_violations);
    }
    r.total_violations
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
