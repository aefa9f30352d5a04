//! Adam training of the MSE plus incremental-passivity penalty
//! `Σ_l max(n_{l-1}·ν_l/a − Σ_ij w^l_ij, 0)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{check_slope, Gradients, LayerParams, MlpModel, OutputActivation};
use crate::par::ExecMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Target input-passivity index, shared by every cascade layer.
    pub nu_target: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Rescale the penalty per batch so its magnitude equals the MSE.
    pub penalty_rescale: bool,
    /// Constant penalty weight used when `penalty_rescale` is off.
    pub penalty_weight: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            nu_target: 1.0,
            batch_size: 32,
            max_epochs: 500,
            patience: 20,
            seed: 0,
            penalty_rescale: true,
            penalty_weight: 1.0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu_target > 0.0) {
            return Err(Error::config(format!("nu_target must be > 0, got {}", self.nu_target)));
        }
        if self.patience < 1 {
            return Err(Error::config("patience must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be > 0"));
        }
        Ok(())
    }

    pub fn nu_targets(&self, layers: usize) -> Vec<f64> {
        vec![self.nu_target; layers]
    }
}

/// Penalty value with its per-layer terms. Only the layers that pass through
/// the Leaky ReLU are penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub value: f64,
    pub layer_terms: Vec<f64>,
}

impl Penalty {
    /// Subgradient of the penalty: −1 on every weight of a violating layer.
    pub fn gradient(&self, model: &MlpModel) -> Gradients {
        let mut g = Gradients::zeros_like(model);
        for (lg, &term) in g.layers.iter_mut().zip(&self.layer_terms) {
            if term > 0.0 {
                lg.weights.as_mut_slice().fill(-1.0);
            }
        }
        g
    }
}

/// The constant `n_{l-1}·ν/a` a layer's weight sum has to exceed.
pub fn constant_term(n_in: usize, nu: f64, a: f64) -> f64 {
    n_in as f64 * nu / a
}

pub fn iifp_penalty(model: &MlpModel, nu_targets: &[f64]) -> Result<Penalty> {
    let cascade = model.activated_layers();
    if nu_targets.len() < cascade {
        return Err(Error::contract(format!(
            "{} nu targets for {cascade} cascade layers",
            nu_targets.len()
        )));
    }
    let layer_terms: Vec<f64> = model.layers()[..cascade]
        .iter()
        .zip(nu_targets)
        .map(|(l, &nu)| (constant_term(l.n_in(), nu, model.slope()) - l.weight_sum()).max(0.0))
        .collect();
    Ok(Penalty {
        value: layer_terms.iter().sum(),
        layer_terms,
    })
}

/// Penalty weight: MSE/penalty when rescaling and the penalty is active,
/// otherwise the configured constant. Treated as a constant when
/// differentiating.
pub fn penalty_lambda(mse: f64, penalty: f64, cfg: &TrainConfig) -> f64 {
    if cfg.penalty_rescale && penalty > 0.0 {
        mse / penalty.max(1e-12)
    } else {
        cfg.penalty_weight
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub mse: f64,
    pub penalty: f64,
    pub lambda: f64,
    pub total: f64,
}

pub fn combine_loss(mse: f64, penalty: f64, cfg: &TrainConfig) -> LossBreakdown {
    let lambda = penalty_lambda(mse, penalty, cfg);
    LossBreakdown {
        mse,
        penalty,
        lambda,
        total: mse + lambda * penalty,
    }
}

pub fn total_loss(
    model: &MlpModel,
    batch: &[(&[f64], f64)],
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let mse = model.mse(batch, ExecMode::default())?;
    let penalty = iifp_penalty(model, &cfg.nu_targets(model.depth()))?.value;
    Ok(combine_loss(mse, penalty, cfg))
}

/// Adam moments mirroring the model's parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(model: &MlpModel, config: AdamConfig) -> Self {
        Self {
            first_moment: Gradients::zeros_like(model),
            second_moment: Gradients::zeros_like(model),
            step_count: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &mut AdamState, model: &mut MlpModel, grads: &Gradients) -> Result<()> {
    if grads.layers.len() != model.depth() || state.first_moment.layers.len() != model.depth() {
        return Err(Error::contract("gradient / moment shapes do not mirror the model"));
    }
    state.step_count += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step_count as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);

    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    };

    for (l, layer) in model.layers_mut().iter_mut().enumerate() {
        let g = &grads.layers[l];
        let m = &mut state.first_moment.layers[l];
        let v = &mut state.second_moment.layers[l];
        if g.weights.as_slice().len() != layer.weights.as_slice().len() || g.bias.len() != layer.bias.len() {
            return Err(Error::contract(format!("gradient shape mismatch at layer {l}")));
        }
        for (((p, &gi), mi), vi) in layer
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(g.weights.as_slice())
            .zip(m.weights.as_mut_slice())
            .zip(v.weights.as_mut_slice())
        {
            update(p, gi, mi, vi);
        }
        for (((p, &gi), mi), vi) in layer
            .bias
            .iter_mut()
            .zip(&g.bias)
            .zip(m.bias.iter_mut())
            .zip(v.bias.iter_mut())
        {
            update(p, gi, mi, vi);
        }
    }
    Ok(())
}

/// Glorot-uniform weights shifted by `ν/(a·n_in)` per entry on cascade
/// layers. For square layers the expected weight sum then sits on the
/// `n_in·ν/a` boundary. Biases start at zero.
pub fn initialize(
    widths: &[usize],
    slope: f64,
    nu_target: f64,
    output_activation: OutputActivation,
    seed: u64,
) -> Result<MlpModel> {
    check_slope(slope)?;
    if widths.len() < 4 {
        return Err(Error::UnsupportedDepth(widths.len().saturating_sub(1)));
    }
    if widths.contains(&0) {
        return Err(Error::config("layer widths must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_layers = widths.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    for (l, pair) in widths.windows(2).enumerate() {
        let (n_in, n_out) = (pair[0], pair[1]);
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let in_cascade = output_activation == OutputActivation::LeakyRelu || l + 1 < n_layers;
        let shift = if in_cascade {
            nu_target / (slope * n_in as f64)
        } else {
            0.0
        };
        let data = (0..n_in * n_out)
            .map(|_| rng.random_range(-limit..limit) + shift)
            .collect();
        layers.push(LayerParams::new(Matrix::new(n_out, n_in, data)?, vec![0.0; n_out])?);
    }
    MlpModel::new(layers, slope, output_activation)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub penalty: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub initial_penalty: f64,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_mse,val_mse,penalty,lambda\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.train_mse, e.val_mse, e.penalty, e.lambda
        ));
    }
    out
}

/// Trains from `init`, keeping the parameters of the epoch with the lowest
/// validation MSE. Stops at `max_epochs` or after `patience` epochs without
/// validation improvement.
pub fn train(
    init: MlpModel,
    train_rows: &[(&[f64], f64)],
    val_rows: &[(&[f64], f64)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_rows.is_empty() || val_rows.is_empty() {
        return Err(Error::contract("training and validation splits must be non-empty"));
    }
    let mode = ExecMode::default();
    let nus = cfg.nu_targets(init.depth());
    let initial_penalty = iifp_penalty(&init, &nus)?.value;

    let mut model = init;
    let mut adam = AdamState::new(&model, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    let mut batch: Vec<(&[f64], f64)> = Vec::with_capacity(cfg.batch_size);

    let mut log = Vec::new();
    let mut best: Option<(f64, usize, MlpModel)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut lambda_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| train_rows[i]));
            let (mse, mut grads) = model.gradients(&batch, mode)?;
            let penalty = iifp_penalty(&model, &nus)?;
            let loss = combine_loss(mse, penalty.value, cfg);
            if !loss.total.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    detail: format!(
                        "batch loss {} (mse {}, penalty {}); lower the learning rate or check the data",
                        loss.total, mse, penalty.value
                    ),
                });
            }
            if penalty.value > 0.0 {
                let mut pg = penalty.gradient(&model);
                for lg in &mut pg.layers {
                    for w in lg.weights.as_mut_slice() {
                        *w *= loss.lambda;
                    }
                }
                grads.add_assign(&pg);
            }
            adam_step(&mut adam, &mut model, &grads)?;
            lambda_sum += loss.lambda;
            batches += 1;
        }

        let train_mse = model.mse(train_rows, mode)?;
        let val_mse = model.mse(val_rows, mode)?;
        let penalty = iifp_penalty(&model, &nus)?.value;
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                detail: format!("train mse {train_mse}, validation mse {val_mse}"),
            });
        }
        log.push(EpochLog {
            epoch,
            train_mse,
            val_mse,
            penalty,
            lambda: lambda_sum / batches as f64,
        });

        let improved = best.as_ref().is_none_or(|(b, _, _)| val_mse < *b);
        if improved {
            best = Some((val_mse, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let (_, best_epoch, model) = best.ok_or_else(|| Error::config("max_epochs must be at least 1"))?;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        initial_penalty,
    })
}
