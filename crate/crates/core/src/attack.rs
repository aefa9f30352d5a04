//! Constant-entry adversary: `Δ = δ·1` inside an L2 ball of radius ε, with the
//! single degree of freedom `δ` chosen by a coarse grid followed by a
//! golden-section refinement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm_sq, sub};
use crate::model::{ForwardTrace, MlpModel};
use crate::par::{self, ExecMode};
use crate::passivity::{tight_bound_from_deviations, CertificateReport, TightBoundCheck};
use crate::report::FiveNumberSummary;
use crate::search::golden_section_maximize;

const BALL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub epsilon_attack: f64,
    pub coarse_grid_points: usize,
    pub refine_iterations: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon_attack: 0.5,
            coarse_grid_points: 201,
            refine_iterations: 60,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_attack > 0.0) || !self.epsilon_attack.is_finite() {
            return Err(Error::config(format!(
                "epsilon_attack must be > 0, got {}",
                self.epsilon_attack
            )));
        }
        if self.coarse_grid_points < 2 {
            return Err(Error::config("coarse_grid_points must be at least 2"));
        }
        Ok(())
    }

    /// Largest admissible `|δ|` for inputs of width `n`.
    pub fn max_delta(&self, n: usize) -> f64 {
        self.epsilon_attack / (n as f64).sqrt()
    }
}

pub fn perturbation_vector(delta: f64, n: usize) -> Vec<f64> {
    vec![delta; n]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub delta_star: f64,
    pub input_dev_sq: f64,
    pub output_dev_sq: f64,
    pub ratio: f64,
    /// `‖Δ^{(l)}‖²` for every layer's activation, `l = 1..N`.
    pub per_layer_dev_sq: Vec<f64>,
}

/// Deviation ratio of one test point, with the clean forward pass cached.
pub struct RatioObjective<'a> {
    model: &'a MlpModel,
    input: &'a [f64],
    base: ForwardTrace,
    max_delta: f64,
}

impl<'a> RatioObjective<'a> {
    pub fn new(model: &'a MlpModel, input: &'a [f64], cfg: &AttackConfig) -> Result<Self> {
        cfg.validate()?;
        let base = model.forward(input)?;
        Ok(Self {
            model,
            input,
            base,
            max_delta: cfg.max_delta(input.len()),
        })
    }

    pub fn max_delta(&self) -> f64 {
        self.max_delta
    }

    pub fn evaluate(&self, delta: f64) -> Result<AttackResult> {
        if delta == 0.0 {
            return Err(Error::contract("delta = 0 leaves the ratio undefined"));
        }
        let n = self.input.len();
        if delta.abs() * (n as f64).sqrt() > self.max_delta * (n as f64).sqrt() + BALL_TOL {
            return Err(Error::contract(format!(
                "delta {delta} leaves the attack ball (|delta| <= {})",
                self.max_delta
            )));
        }
        let perturbed: Vec<f64> = self.input.iter().map(|u| u + delta).collect();
        let trace = self.model.forward(&perturbed)?;
        let per_layer_dev_sq: Vec<f64> = trace
            .activations
            .iter()
            .zip(&self.base.activations)
            .map(|(p, q)| norm_sq(&sub(p, q)))
            .collect();
        let input_dev_sq = delta * delta * n as f64;
        let output_dev_sq = *per_layer_dev_sq.last().expect("model has layers");
        Ok(AttackResult {
            delta_star: delta,
            input_dev_sq,
            output_dev_sq,
            ratio: output_dev_sq / input_dev_sq,
            per_layer_dev_sq,
        })
    }

    /// Ratio only; `delta` must be a nonzero in-ball value.
    pub fn ratio(&self, delta: f64) -> f64 {
        self.evaluate(delta).map(|r| r.ratio).unwrap_or(f64::NEG_INFINITY)
    }
}

pub fn ratio_objective(
    model: &MlpModel,
    input: &[f64],
    delta: f64,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    RatioObjective::new(model, input, cfg)?.evaluate(delta)
}

/// Maximizes the deviation ratio over `δ ∈ [−ε/√n, ε/√n] \ {0}`.
pub fn hill_climb(model: &MlpModel, input: &[f64], cfg: &AttackConfig) -> Result<AttackResult> {
    let objective = RatioObjective::new(model, input, cfg)?;
    let r = objective.max_delta();
    let g = cfg.coarse_grid_points;
    let grid = |k: usize| -r + 2.0 * r * k as f64 / (g - 1) as f64;

    let mut best: Option<(usize, f64, f64)> = None;
    for k in 0..g {
        let x = grid(k);
        // The origin is skipped: 0/0 there.
        if x.abs() <= r * 1e-12 {
            continue;
        }
        let v = objective.ratio(x);
        if best.is_none_or(|(_, _, bv)| v > bv) {
            best = Some((k, x, v));
        }
    }
    let (k, mut x_best, mut v_best) = best.expect("grid has a nonzero point");

    let mut lo = if k == 0 { -r } else { grid(k - 1) };
    let mut hi = if k + 1 == g { r } else { grid(k + 1) };
    if lo < 0.0 && hi > 0.0 {
        let tiny = r * 1e-9;
        if x_best > 0.0 {
            lo = tiny;
        } else {
            hi = -tiny;
        }
    }
    let (x, v) = golden_section_maximize(|t| objective.ratio(t), lo, hi, cfg.refine_iterations);
    if v > v_best {
        x_best = x;
        v_best = v;
    }
    let result = objective.evaluate(x_best)?;
    debug_assert_eq!(result.ratio, v_best);
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub point_index: usize,
    pub attack: AttackResult,
    pub bound_ratio: Option<f64>,
    pub violated: bool,
    pub tight: Option<TightBoundCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub points: usize,
    pub certified: bool,
    pub bound_ratio: Option<f64>,
    pub max_ratio: Option<f64>,
    pub violations: usize,
    pub tight_violations: usize,
    pub quartiles: Option<FiveNumberSummary>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<EvaluationRow>,
    pub summary: EvaluationSummary,
    pub layers: usize,
}

impl Evaluation {
    /// `point_index,delta_star,ratio,bound_ratio,violated,dev_sq_1..dev_sq_N`.
    /// An uncertified model leaves `bound_ratio` empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("point_index,delta_star,ratio,bound_ratio,violated");
        for l in 1..=self.layers {
            out.push_str(&format!(",dev_sq_{l}"));
        }
        out.push('\n');
        for row in &self.rows {
            let bound = row.bound_ratio.map(|b| b.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}",
                row.point_index,
                row.attack.delta_star,
                row.attack.ratio,
                bound,
                u8::from(row.violated)
            ));
            for d in &row.attack.per_layer_dev_sq {
                out.push_str(&format!(",{d}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Attacks every test point and compares each ratio with the certified bound
/// (and the layerwise bound). An uncertified report yields ratios only.
pub fn evaluate_dataset(
    model: &MlpModel,
    cert: &CertificateReport,
    points: &[Vec<f64>],
    cfg: &AttackConfig,
) -> Result<Evaluation> {
    evaluate_dataset_with(model, cert, points, cfg, ExecMode::default())
}

pub fn evaluate_dataset_with(
    model: &MlpModel,
    cert: &CertificateReport,
    points: &[Vec<f64>],
    cfg: &AttackConfig,
    mode: ExecMode,
) -> Result<Evaluation> {
    cfg.validate()?;
    let cascade = cert.cascade.as_ref().filter(|_| cert.certified);
    if let Some(c) = cascade {
        if c.cascade_len() != model.activated_layers() {
            return Err(Error::contract(format!(
                "certificate covers {} layers, model cascade has {}",
                c.cascade_len(),
                model.activated_layers()
            )));
        }
    }
    let attacks = par::map_slice(mode, points, |p| hill_climb(model, p, cfg));

    let mut rows = Vec::with_capacity(points.len());
    for (point_index, attack) in attacks.into_iter().enumerate() {
        let attack = attack?;
        let (bound_ratio, violated, tight) = match cascade {
            Some(c) => {
                let last = c.cascade_len() - 1;
                let cascade_ratio = attack.per_layer_dev_sq[last] / attack.input_dev_sq;
                let tight =
                    tight_bound_from_deviations(attack.input_dev_sq, &attack.per_layer_dev_sq, c)?;
                (Some(c.bound_ratio), cascade_ratio > c.bound_ratio, Some(tight))
            }
            None => (None, false, None),
        };
        rows.push(EvaluationRow {
            point_index,
            attack,
            bound_ratio,
            violated,
            tight,
        });
    }

    let ratios: Vec<f64> = rows.iter().map(|r| r.attack.ratio).collect();
    let violations = rows.iter().filter(|r| r.violated).count();
    let tight_violations = rows
        .iter()
        .filter(|r| r.tight.is_some_and(|t| !t.satisfied))
        .count();
    let status = match (cascade.is_some(), violations) {
        (false, _) => "uncertified: bound comparison skipped".to_string(),
        (true, 0) => "certified: no bound violations".to_string(),
        (true, v) => format!("certified: {v} BOUND VIOLATIONS"),
    };
    let summary = EvaluationSummary {
        points: rows.len(),
        certified: cascade.is_some(),
        bound_ratio: cascade.map(|c| c.bound_ratio),
        max_ratio: ratios.iter().copied().reduce(f64::max),
        violations,
        tight_violations,
        quartiles: FiveNumberSummary::from_values(&ratios),
        status,
    };
    Ok(Evaluation {
        rows,
        summary,
        layers: model.depth(),
    })
}
