//! Passivity certificates read off trained weights.
//!
//! Each Leaky-ReLU layer is incrementally input feed-forward passive for
//! constant-entry increments with index `ν_l = a·Σw/n_{l-1}`. A cascade of
//! `N > 2` such layers is output feedback passive with any
//! `ρ > cos(π/(N+1))^{N+1} / Πν_l`, which gives the bound
//! `‖Δ_out‖² ≤ β‖Δ_in‖² / (2(ε − ρ − 1/(2β)))` and its layerwise
//! refinement. The secant criterion and a brute-force search for a diagonal
//! Lyapunov scaling are both provided so they can be cross-checked.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{check_slope, ForwardTrace, LayerParams, MlpModel};
use crate::par::{self, ExecMode};
use crate::training::constant_term;

/// Relative slack added to the infimum of ρ to make the inequality strict.
pub const RHO_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCertificate {
    pub layer_index: usize,
    pub weight_sum: f64,
    /// `n_{l-1}·ν_target/a`.
    pub constant_term: f64,
    pub nu_extracted: f64,
    pub satisfied: bool,
}

/// Largest ν for which the layer's weight sum meets `n_{l-1}·ν/a`. A value
/// `≤ 0` means the layer has no passivity certificate.
pub fn extract_nu(layer: &LayerParams, a: f64) -> Result<f64> {
    check_slope(a)?;
    if layer.n_in() == 0 {
        return Err(Error::contract("layer has no inputs"));
    }
    Ok(a * layer.weight_sum() / layer.n_in() as f64)
}

pub fn layer_certificate(
    layer: &LayerParams,
    layer_index: usize,
    a: f64,
    nu_target: f64,
) -> Result<LayerCertificate> {
    let weight_sum = layer.weight_sum();
    let constant = constant_term(layer.n_in(), nu_target, a);
    Ok(LayerCertificate {
        layer_index,
        weight_sum,
        constant_term: constant,
        nu_extracted: extract_nu(layer, a)?,
        satisfied: weight_sum > constant,
    })
}

/// `cos(π/(N+1))^{N+1} / Π ν_l` with `N = nus.len()`.
pub fn rho_min(nus: &[f64]) -> Result<f64> {
    let n = nus.len();
    if n <= 2 {
        return Err(Error::UnsupportedDepth(n));
    }
    if let Some(l) = nus.iter().position(|&nu| !(nu > 0.0)) {
        return Err(Error::CertificateUnavailable(format!(
            "layer {l} has input-passivity index {} <= 0",
            nus[l]
        )));
    }
    let m = (n + 1) as f64;
    let product: f64 = nus.iter().product();
    Ok((PI / m).cos().powf(m) / product)
}

/// `β / (2(ε − ρ − 1/(2β)))`, the certified ceiling on `‖Δ_out‖²/‖Δ_in‖²`.
pub fn bound_ratio(epsilon_design: f64, beta: f64, rho: f64) -> Result<f64> {
    let denominator = bound_denominator(epsilon_design, beta, rho)?;
    Ok(beta / (2.0 * denominator))
}

fn bound_denominator(epsilon_design: f64, beta: f64, rho: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameters(format!("beta must be > 0, got {beta}")));
    }
    if !(epsilon_design > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "epsilon must be > 0, got {epsilon_design}"
        )));
    }
    let denominator = epsilon_design - rho - 1.0 / (2.0 * beta);
    if !(denominator > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "need epsilon - rho - 1/(2 beta) > 0, got {epsilon_design} - {rho} - {} = {denominator}",
            1.0 / (2.0 * beta)
        )));
    }
    Ok(denominator)
}

/// How ε and β are chosen for the bound. With no fixed ε the policy uses
/// `ε = 2(ρ + 1/(2β))`, which keeps the denominator positive for any ρ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPolicy {
    pub beta: f64,
    pub epsilon_design: Option<f64>,
}

impl Default for BoundPolicy {
    fn default() -> Self {
        Self {
            beta: 1.0,
            epsilon_design: None,
        }
    }
}

impl BoundPolicy {
    pub fn epsilon_for(&self, rho: f64) -> f64 {
        self.epsilon_design
            .unwrap_or(2.0 * (rho + 1.0 / (2.0 * self.beta)))
    }

    pub fn describe(&self) -> String {
        match self.epsilon_design {
            Some(e) => format!("fixed: epsilon = {e}, beta = {}", self.beta),
            None => format!("default: epsilon = 2(rho + 1/(2 beta)), beta = {}", self.beta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeCertificate {
    pub nus: Vec<f64>,
    pub rho: f64,
    pub epsilon_design: f64,
    pub beta: f64,
    pub denominator: f64,
    pub bound_ratio: f64,
}

impl CascadeCertificate {
    pub fn from_nus(nus: &[f64], policy: &BoundPolicy) -> Result<Self> {
        let rho = rho_min(nus)? * (1.0 + RHO_SLACK);
        let epsilon_design = policy.epsilon_for(rho);
        let denominator = bound_denominator(epsilon_design, policy.beta, rho)?;
        Ok(Self {
            nus: nus.to_vec(),
            rho,
            epsilon_design,
            beta: policy.beta,
            denominator,
            bound_ratio: policy.beta / (2.0 * denominator),
        })
    }

    pub fn cascade_len(&self) -> usize {
        self.nus.len()
    }
}

/// Per-layer certificates plus the cascade bound when every layer has a
/// positive index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub per_layer: Vec<LayerCertificate>,
    pub nu_target: f64,
    pub slope_a: f64,
    /// Layers that form the passivity cascade (the output layer is included
    /// unless it is linear).
    pub cascade_layers: usize,
    pub certified: bool,
    /// Layers whose extracted ν is not positive.
    pub uncertified_layers: Vec<usize>,
    pub rho: Option<f64>,
    pub epsilon: Option<f64>,
    pub beta: f64,
    pub bound_ratio: Option<f64>,
    pub policy: String,
    pub cascade: Option<CascadeCertificate>,
}

impl CertificateReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })
    }
}

/// Certifies a model. The cascade uses `min(ν_target, ν_extracted)` per layer;
/// any layer with `ν_extracted ≤ 0` withholds the bound.
pub fn certify(model: &MlpModel, nu_target: f64, policy: &BoundPolicy) -> Result<CertificateReport> {
    if !(nu_target > 0.0) {
        return Err(Error::config(format!("nu_target must be > 0, got {nu_target}")));
    }
    let a = model.slope();
    let cascade_layers = model.activated_layers();
    let per_layer = model.layers()[..cascade_layers]
        .iter()
        .enumerate()
        .map(|(l, layer)| layer_certificate(layer, l, a, nu_target))
        .collect::<Result<Vec<_>>>()?;
    let uncertified_layers: Vec<usize> = per_layer
        .iter()
        .filter(|c| !(c.nu_extracted > 0.0))
        .map(|c| c.layer_index)
        .collect();

    let cascade = if uncertified_layers.is_empty() {
        let nus: Vec<f64> = per_layer
            .iter()
            .map(|c| c.nu_extracted.min(nu_target))
            .collect();
        Some(CascadeCertificate::from_nus(&nus, policy)?)
    } else {
        None
    };

    Ok(CertificateReport {
        per_layer,
        nu_target,
        slope_a: a,
        cascade_layers,
        certified: cascade.is_some(),
        uncertified_layers,
        rho: cascade.as_ref().map(|c| c.rho),
        epsilon: cascade.as_ref().map(|c| c.epsilon_design),
        beta: policy.beta,
        bound_ratio: cascade.as_ref().map(|c| c.bound_ratio),
        policy: policy.describe(),
        cascade,
    })
}

/// Both sides of `ε Σ_{i=2}^{N-1} ‖Δ^{(i)}‖² + (ε − ρ − 1/(2β)) ‖Δ^{(N)}‖² ≤ β‖Δ^{(1)}‖²/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TightBoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// Evaluates the layerwise bound from the squared input deviation and the
/// squared activation deviations of the cascade layers (`layer_dev_sq[i-1]`
/// is layer `i`).
pub fn tight_bound_from_deviations(
    input_dev_sq: f64,
    layer_dev_sq: &[f64],
    cert: &CascadeCertificate,
) -> Result<TightBoundCheck> {
    let n = cert.cascade_len();
    if layer_dev_sq.len() < n {
        return Err(Error::contract(format!(
            "{} layer deviations for a {n}-layer cascade",
            layer_dev_sq.len()
        )));
    }
    let hidden: f64 = layer_dev_sq[1..n - 1].iter().sum();
    let lhs = cert.epsilon_design * hidden + cert.denominator * layer_dev_sq[n - 1];
    let rhs = cert.beta * input_dev_sq / 2.0;
    Ok(TightBoundCheck {
        lhs,
        rhs,
        satisfied: lhs <= rhs,
    })
}

pub fn tight_bound_check(
    input1: &[f64],
    trace1: &ForwardTrace,
    input2: &[f64],
    trace2: &ForwardTrace,
    cert: &CascadeCertificate,
) -> Result<TightBoundCheck> {
    if input1.len() != input2.len() || trace1.activations.len() != trace2.activations.len() {
        return Err(Error::contract("traces come from differently shaped inputs or models"));
    }
    let mut devs = Vec::with_capacity(trace1.activations.len());
    for (a, b) in trace1.activations.iter().zip(&trace2.activations) {
        if a.len() != b.len() {
            return Err(Error::contract("trace layer widths differ"));
        }
        devs.push(linalg::norm_sq(&linalg::sub(b, a)));
    }
    let input_dev_sq = linalg::norm_sq(&linalg::sub(input2, input1));
    tight_bound_from_deviations(input_dev_sq, &devs, cert)
}

/// The cyclic matrix with `-α_i` on the diagonal, `β_1..β_{N-1}` on the
/// subdiagonal and `-β_N` in the top-right corner.
pub fn cyclic_matrix(alphas: &[f64], betas: &[f64]) -> Result<Matrix> {
    check_cyclic(alphas, betas)?;
    let n = alphas.len();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = -alphas[i];
        if i > 0 {
            a[(i, i - 1)] = betas[i - 1];
        }
    }
    a[(0, n - 1)] = -betas[n - 1];
    Ok(a)
}

fn check_cyclic(alphas: &[f64], betas: &[f64]) -> Result<()> {
    if alphas.len() != betas.len() {
        return Err(Error::contract("alphas and betas differ in length"));
    }
    if alphas.len() <= 2 {
        return Err(Error::UnsupportedDepth(alphas.len()));
    }
    if alphas.iter().chain(betas).any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::contract("alphas and betas must be finite and positive"));
    }
    Ok(())
}

/// The `(N+1)×(N+1)` interconnection matrix of the cascade: diagonal
/// `(-ν_1, …, -ν_N, -1)`, unit subdiagonal, `-1/ρ` in the corner.
pub fn build_cascade_matrix(nus: &[f64], rho: f64) -> Result<Matrix> {
    if nus.len() <= 2 {
        return Err(Error::UnsupportedDepth(nus.len()));
    }
    if !(rho > 0.0) {
        return Err(Error::contract(format!("rho must be > 0, got {rho}")));
    }
    let (alphas, betas) = cascade_cyclic_parameters(nus, rho);
    cyclic_matrix(&alphas, &betas)
}

/// `(α, β)` of the cascade matrix written in cyclic form.
pub fn cascade_cyclic_parameters(nus: &[f64], rho: f64) -> (Vec<f64>, Vec<f64>) {
    let mut alphas = nus.to_vec();
    alphas.push(1.0);
    let mut betas = vec![1.0; nus.len()];
    betas.push(1.0 / rho);
    (alphas, betas)
}

/// Secant criterion: `Πβ_i / Πα_i < sec(π/N)^N`.
pub fn secant_check(alphas: &[f64], betas: &[f64]) -> Result<bool> {
    Ok(secant_ratio(alphas, betas)? < 1.0)
}

/// `(Πβ_i / Πα_i) · cos(π/N)^N`; below 1 iff the secant criterion holds.
pub fn secant_ratio(alphas: &[f64], betas: &[f64]) -> Result<f64> {
    check_cyclic(alphas, betas)?;
    let n = alphas.len() as f64;
    let ratio: f64 = betas.iter().zip(alphas).map(|(b, a)| b / a).product();
    Ok(ratio * (PI / n).cos().powf(n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub starts: usize,
    /// Cap on descent iterations per start.
    pub max_iterations: usize,
    pub seed: u64,
    /// `found` requires the best max-eigenvalue to be below `-threshold`.
    pub threshold: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            starts: 64,
            max_iterations: 2000,
            seed: 0x5eed,
            threshold: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub found: bool,
    /// Best diagonal found, normalized to unit geometric mean. `Some` only
    /// when `found`.
    pub d: Option<Vec<f64>>,
    /// Largest eigenvalue of `sym(DA)` at the best diagonal.
    pub best_max_eigenvalue: f64,
    pub best_start: usize,
}

/// Searches for a positive diagonal `D` with `DA + AᵀD < 0`.
///
/// One-sided: `found = false` means the search failed, not that no such `D`
/// exists.
pub fn diagonal_stability_oracle(a: &Matrix) -> Result<OracleResult> {
    diagonal_stability_oracle_with(a, &OracleConfig::default(), ExecMode::default())
}

/// Starts are run in fixed-size rounds; a round's winner is the lowest max
/// eigenvalue with ties broken by start index, so the result does not depend
/// on scheduling.
pub fn diagonal_stability_oracle_with(
    a: &Matrix,
    cfg: &OracleConfig,
    mode: ExecMode,
) -> Result<OracleResult> {
    const ROUND: usize = 8;
    if !a.is_square() {
        return Err(Error::contract("oracle needs a square matrix"));
    }
    if a.rows() > 8 {
        return Err(Error::contract(format!(
            "oracle supports at most 8x8 matrices, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut start = 0;
    while start < cfg.starts {
        let end = (start + ROUND).min(cfg.starts);
        let results = par::map_range(mode, end - start, |k| {
            let s = start + k;
            let (value, x) = search_from_start(a, cfg, s);
            (value, s, x)
        });
        for (value, s, x) in results {
            let better = best.as_ref().is_none_or(|(bv, _, _)| value < *bv);
            if better {
                best = Some((value, s, x));
            }
        }
        if best.as_ref().is_some_and(|(v, _, _)| *v < -cfg.threshold) {
            break;
        }
        start = end;
    }
    let (value, best_start, x) = best.ok_or_else(|| Error::config("oracle needs at least one start"))?;
    let found = value < -cfg.threshold;
    Ok(OracleResult {
        found,
        d: found.then(|| x.iter().map(|v| v.exp()).collect()),
        best_max_eigenvalue: value,
        best_start,
    })
}

fn centered(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

fn sym_scaled(a: &Matrix, x: &[f64]) -> Matrix {
    let d: Vec<f64> = centered(x).iter().map(|v| v.exp()).collect();
    a.scale_rows(&d).symmetric_part()
}

fn max_eig_at(a: &Matrix, x: &[f64]) -> f64 {
    linalg::jacobi_eigenvalues(&sym_scaled(a, x))
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Soft maximum `τ·log Σ exp(λ_k/τ)` of the eigenvalues of `sym(DA)`,
/// `D = diag(exp(x − mean x))`, with its gradient in `x` when requested.
fn soft_max_eig(a: &Matrix, x: &[f64], tau: f64, want_grad: bool) -> (f64, f64, Vec<f64>) {
    let s = sym_scaled(a, x);
    if !want_grad {
        let eig = linalg::jacobi_eigenvalues(&s);
        let top = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let soft = top + tau * eig.iter().map(|l| ((l - top) / tau).exp()).sum::<f64>().ln();
        return (soft, top, Vec::new());
    }
    let e = linalg::sym_eigen(&s).expect("symmetric part is symmetric");
    let top = e.values[0];
    let weights: Vec<f64> = e.values.iter().map(|l| ((l - top) / tau).exp()).collect();
    let total: f64 = weights.iter().sum();
    let soft = top + tau * total.ln();

    let n = a.rows();
    let d: Vec<f64> = centered(x).iter().map(|v| v.exp()).collect();
    let mut grad = vec![0.0; n];
    for (k, w) in weights.iter().enumerate() {
        if *w < 1e-300 {
            continue;
        }
        let v = e.vectors.column(k);
        let av = linalg::matvec(a, &v).expect("square");
        for i in 0..n {
            // ∂λ_k/∂d_i = v_i (A v)_i, chained through d_i = exp(x_i − mean x).
            grad[i] += w / total * v[i] * av[i] * d[i];
        }
    }
    (soft, top, centered(&grad))
}

/// Descent on the log-diagonal of a soft maximum of the eigenvalues, with
/// Armijo backtracking and a temperature that drops each time the smoothed
/// problem stops improving. `λ_max(sym(DA))` is convex in `D`, so the search
/// only has to follow the smoothed surface down.
fn search_from_start(a: &Matrix, cfg: &OracleConfig, start: usize) -> (f64, Vec<f64>) {
    let n = a.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(start as u64));
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let scale = a.frobenius_norm().max(1e-300);
    let tau_min = 1e-12 * scale;
    let mut tau = 0.1 * scale;
    let mut step = 1.0;
    let mut best = (max_eig_at(a, &x), x.clone());

    for _ in 0..cfg.max_iterations {
        let (f, _, grad) = soft_max_eig(a, &x, tau, true);
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        let mut accepted = None;
        if g2 > 0.0 {
            let mut t = step;
            while t > 1e-20 {
                let y: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - t * gi).collect();
                let (fy, top, _) = soft_max_eig(a, &y, tau, false);
                if fy <= f - 1e-4 * t * g2 {
                    accepted = Some((y, fy, top, t));
                    break;
                }
                t *= 0.5;
            }
        }
        let stalled = match accepted {
            Some((y, fy, top, t)) => {
                x = y;
                step = (t * 2.0).min(1e6);
                if top < best.0 {
                    best = (top, x.clone());
                }
                f - fy < 1e-5 * tau
            }
            None => true,
        };
        if best.0 < -cfg.threshold {
            break;
        }
        if stalled {
            if tau <= tau_min {
                break;
            }
            tau = (tau * 0.3).max(tau_min);
        }
    }
    (best.0, centered(&best.1))
}

/// Supply rate `Δᵀ(y₂ − y₁) − ν‖Δ‖²` of one layer for the constant-entry
/// increment `Δ = δ·1`, with the output zero-padded (or truncated) to the
/// input width.
pub fn supply_rate(layer: &LayerParams, a: f64, input: &[f64], delta: f64, nu: f64) -> Result<f64> {
    let perturbed: Vec<f64> = input.iter().map(|u| u + delta).collect();
    let y1 = layer.activate(input, a)?;
    let y2 = layer.activate(&perturbed, a)?;
    let coupling: f64 = y2
        .iter()
        .zip(&y1)
        .take(input.len())
        .map(|(p, q)| delta * (p - q))
        .sum();
    Ok(coupling - nu * delta * delta * input.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OutputActivation;
    use proptest::prelude::*;

    fn uniform_layer(n_in: usize, n_out: usize, w: f64) -> LayerParams {
        LayerParams::new(Matrix::new(n_out, n_in, vec![w; n_in * n_out]).unwrap(), vec![0.0; n_out]).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn nu_extraction() {
        assert!(close(extract_nu(&uniform_layer(10, 10, 0.4), 0.5).unwrap(), 2.0, 1e-12));
        assert!(close(extract_nu(&uniform_layer(10, 10, 0.2), 0.5).unwrap(), 1.0, 1e-12));
        assert!(extract_nu(&uniform_layer(10, 10, -0.03), 0.5).unwrap() < 0.0);
        assert!(extract_nu(&uniform_layer(2, 2, 1.0), 1.0).is_err());

        let c = layer_certificate(&uniform_layer(10, 10, 0.25), 0, 0.5, 1.0).unwrap();
        assert!(c.satisfied && c.nu_extracted > 1.0 && c.constant_term == 20.0);
    }

    #[test]
    fn rho_closed_form() {
        assert!(close(rho_min(&[1.0; 3]).unwrap(), 0.25, 1e-12));
        assert!(close(rho_min(&[2.0, 1.0, 1.0]).unwrap(), 0.125, 1e-12));
        let c7 = (std::f64::consts::PI / 7.0).cos();
        assert!(close(rho_min(&[1.0; 6]).unwrap(), c7 * c7 * c7 * c7 * c7 * c7 * c7, 1e-12));
        // Evaluated separately in double precision.
        assert!((rho_min(&[1.0; 6]).unwrap() - 0.4819128340102522).abs() < 1e-12);
        assert!(matches!(rho_min(&[1.0, 1.0]), Err(Error::UnsupportedDepth(2))));
        assert!(matches!(
            rho_min(&[1.0, 0.0, 1.0]),
            Err(Error::CertificateUnavailable(_))
        ));
    }

    #[test]
    fn rho_grows_with_depth_at_unit_nu() {
        let r: Vec<f64> = [3, 6, 12].iter().map(|&n| rho_min(&vec![1.0; n]).unwrap()).collect();
        assert!(r[0] < r[1] && r[1] < r[2]);
    }

    #[test]
    fn bound_ratio_examples() {
        assert!(close(bound_ratio(1.0, 1.0, 0.25).unwrap(), 2.0, 1e-12));
        assert!(matches!(bound_ratio(0.75, 1.0, 0.25), Err(Error::InvalidParameters(_))));
        assert!(matches!(bound_ratio(1.0, 0.0, 0.25), Err(Error::InvalidParameters(_))));
        let c = CascadeCertificate::from_nus(&[1.0; 3], &BoundPolicy::default()).unwrap();
        assert!(close(c.denominator, 0.75, 1e-8));
        assert!(close(c.bound_ratio, 2.0 / 3.0, 1e-8));
        assert!(c.rho > 0.25);
    }

    #[test]
    fn fixed_epsilon_policy_can_be_infeasible() {
        let p = BoundPolicy {
            beta: 1.0,
            epsilon_design: Some(0.5),
        };
        assert!(CascadeCertificate::from_nus(&[1.0; 3], &p).is_err());
        assert!(p.describe().starts_with("fixed"));
    }

    fn model(weights: &[f64]) -> MlpModel {
        let layers = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| uniform_layer(if i == 0 { 3 } else { 2 }, if i + 1 == weights.len() { 1 } else { 2 }, w))
            .collect();
        MlpModel::new(layers, 0.5, OutputActivation::LeakyRelu).unwrap()
    }

    #[test]
    fn certify_positive_model() {
        let r = certify(&model(&[2.0, 2.0, 2.0]), 1.0, &BoundPolicy::default()).unwrap();
        assert!(r.certified);
        assert_eq!(r.cascade_layers, 3);
        assert!(r.uncertified_layers.is_empty());
        // min(target, extracted) caps every ν at 1, so the default bound is 2/3.
        assert!(close(r.bound_ratio.unwrap(), 2.0 / 3.0, 1e-8));
        assert_eq!(CertificateReport::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn certify_names_negative_layer() {
        let r = certify(&model(&[1.0, -2.0, 1.0]), 1.0, &BoundPolicy::default()).unwrap();
        assert!(!r.certified);
        assert_eq!(r.uncertified_layers, vec![1]);
        assert!(r.bound_ratio.is_none() && r.cascade.is_none());
    }

    #[test]
    fn tight_check_identical_inputs() {
        let m = model(&[1.0, 1.0, 1.0]);
        let cert = CascadeCertificate::from_nus(&[1.0; 3], &BoundPolicy::default()).unwrap();
        let x = [0.1, -0.2, 0.3];
        let t = m.forward(&x).unwrap();
        let check = tight_bound_check(&x, &t, &x, &t, &cert).unwrap();
        assert_eq!((check.lhs, check.rhs), (0.0, 0.0));
        assert!(check.satisfied);

        let other = model(&[1.0, 1.0, 1.0, 1.0]);
        let t2 = other.forward(&x).unwrap();
        assert!(matches!(tight_bound_check(&x, &t, &x, &t2, &cert), Err(Error::Contract(_))));
    }

    #[test]
    fn tight_check_arithmetic() {
        let cert = CascadeCertificate::from_nus(&[1.0; 4], &BoundPolicy::default()).unwrap();
        // Layers 2 and 3 enter with ε, layer 4 with the denominator.
        let c = tight_bound_from_deviations(4.0, &[100.0, 1.0, 2.0, 3.0], &cert).unwrap();
        let lhs = cert.epsilon_design * 3.0 + cert.denominator * 3.0;
        assert!(close(c.lhs, lhs, 1e-15));
        assert_eq!(c.rhs, 2.0);
        assert!(tight_bound_from_deviations(4.0, &[1.0], &cert).is_err());
    }

    #[test]
    fn cascade_matrix_structure() {
        let a = build_cascade_matrix(&[1.0; 3], 0.5).unwrap();
        let expected = Matrix::from_rows(&[
            vec![-1.0, 0.0, 0.0, -2.0],
            vec![1.0, -1.0, 0.0, 0.0],
            vec![0.0, 1.0, -1.0, 0.0],
            vec![0.0, 0.0, 1.0, -1.0],
        ])
        .unwrap();
        assert_eq!(a, expected);
        let far = build_cascade_matrix(&[1.0; 3], 1e300).unwrap();
        assert!(far[(0, 3)].abs() < 1e-299);
        assert!(build_cascade_matrix(&[1.0; 2], 0.5).is_err());
        assert!(build_cascade_matrix(&[1.0; 3], 0.0).is_err());
    }

    #[test]
    fn secant_examples() {
        assert!(secant_check(&[1.0; 3], &[1.0; 3]).unwrap());
        // Product ratio exactly 8 = sec(π/3)³.
        assert!(!secant_check(&[1.0; 3], &[2.0; 3]).unwrap());
        assert!(!secant_check(&[1.0; 4], &[2.0; 4]).unwrap());
        assert!(secant_check(&[1.0; 2], &[1.0; 2]).is_err());
        assert!(secant_check(&[1.0, -1.0, 1.0], &[1.0; 3]).is_err());
    }

    #[test]
    fn secant_on_cascade_matches_rho_condition() {
        for n in 3..=7 {
            let nus: Vec<f64> = (0..n).map(|i| 0.6 + 0.2 * i as f64).collect();
            let rho = rho_min(&nus).unwrap();
            for (scale, expect) in [(1.001, true), (0.999, false)] {
                let (al, be) = cascade_cyclic_parameters(&nus, rho * scale);
                assert_eq!(secant_check(&al, &be).unwrap(), expect, "n={n} scale={scale}");
            }
        }
    }

    #[test]
    fn oracle_on_identity() {
        let neg = diagonal_stability_oracle(&Matrix::from_diag(&[-1.0; 4])).unwrap();
        assert!(neg.found);
        let d = neg.d.unwrap();
        let dmat = Matrix::from_diag(&d);
        let a = Matrix::from_diag(&[-1.0; 4]);
        assert!(linalg::is_negative_definite(&dmat.matmul(&a).unwrap().symmetric_part()).unwrap());

        let pos = diagonal_stability_oracle(&Matrix::identity(4)).unwrap();
        assert!(!pos.found && pos.d.is_none());
        assert!(pos.best_max_eigenvalue > 0.0);
    }

    #[test]
    fn oracle_finds_scaling_just_above_rho_min() {
        let a = build_cascade_matrix(&[1.0; 3], 0.26).unwrap();
        let r = diagonal_stability_oracle(&a).unwrap();
        assert!(r.found);
        let d = Matrix::from_diag(r.d.as_ref().unwrap());
        let s = d.matmul(&a).unwrap().symmetric_part();
        assert!(linalg::sym_eigen(&s).unwrap().values.iter().all(|&v| v < 0.0));
        let below = build_cascade_matrix(&[1.0; 3], 0.24).unwrap();
        assert!(!diagonal_stability_oracle(&below).unwrap().found);
    }

    #[test]
    fn oracle_modes_agree() {
        let a = build_cascade_matrix(&[1.2, 0.8, 1.0, 1.1], 0.5).unwrap();
        let cfg = OracleConfig::default();
        let s = diagonal_stability_oracle_with(&a, &cfg, ExecMode::Sequential).unwrap();
        let p = diagonal_stability_oracle_with(&a, &cfg, ExecMode::Parallel).unwrap();
        assert_eq!(s, p);
    }

    #[test]
    fn oracle_rejects_large_or_rectangular() {
        assert!(diagonal_stability_oracle(&Matrix::identity(9)).is_err());
        assert!(diagonal_stability_oracle(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn supply_rate_uniform_positive_layer() {
        // All-positive weights, positive input: y2 − y1 = δ·W·1 exactly.
        let layer = uniform_layer(3, 3, 1.0);
        let w = supply_rate(&layer, 0.5, &[1.0, 2.0, 3.0], 0.1, 1.0).unwrap();
        // Δᵀ(y2−y1) = 3·0.1·0.3 = 0.09; ν‖Δ‖² = 0.03.
        assert!(close(w, 0.06, 1e-12));
    }

    /// A row whose weights sum to a negative value can make the supply rate
    /// negative even when the layer's total weight sum meets the constant.
    #[test]
    fn supply_rate_can_be_negative_with_a_negative_row() {
        let w = Matrix::from_rows(&[vec![5.0, 5.0], vec![-3.0, -3.0]]).unwrap();
        let layer = LayerParams::new(w, vec![0.0, 0.0]).unwrap();
        // Σw = 4 ≥ n_in·ν/a = 2·0.5/0.5 = 2, so the layer condition holds.
        assert!(layer.weight_sum() >= constant_term(2, 0.5, 0.5));
        // Row 1 is in its negative regime (slope a), row 2 in its positive one.
        let omega = supply_rate(&layer, 0.5, &[-1.0, -1.0], 0.01, 0.5).unwrap();
        // Δᵀ(y2−y1) = 0.01·(0.5·10·0.01 − 6·0.01) = −1e-4; ν‖Δ‖² = 1e-4.
        assert!(close(omega, -2e-4, 1e-9), "{omega}");
    }

    proptest! {
        #[test]
        fn rho_decreases_in_each_nu(
            nus in proptest::collection::vec(0.1f64..5.0, 3..8),
            idx in 0usize..8,
            bump in 1e-3f64..1.0,
        ) {
            let i = idx % nus.len();
            let mut up = nus.clone();
            up[i] += bump;
            prop_assert!(rho_min(&up).unwrap() < rho_min(&nus).unwrap());
        }

        #[test]
        fn bound_decreases_in_epsilon(rho in 0.01f64..2.0, beta in 0.1f64..5.0, extra in 0.01f64..3.0, step in 1e-3f64..1.0) {
            let eps = rho + 1.0 / (2.0 * beta) + extra;
            prop_assert!(bound_ratio(eps + step, beta, rho).unwrap() < bound_ratio(eps, beta, rho).unwrap());
        }

        #[test]
        fn analytic_beta_minimizes_bound(rho in 0.01f64..2.0, gap in 0.01f64..3.0, t in 0.0f64..1.0) {
            let eps = rho + gap;
            let beta_star = 1.0 / (eps - rho);
            let lo = 1.0 / (2.0 * (eps - rho));
            let beta = lo * (1.0 + 1e-6) + t * 50.0 * lo;
            prop_assert!(bound_ratio(eps, beta_star, rho).unwrap() <= bound_ratio(eps, beta, rho).unwrap() * (1.0 + 1e-12));
        }

        #[test]
        fn certified_flag_tracks_sign_of_nu(ws in proptest::collection::vec(-2.0f64..2.0, 3)) {
            let m = model(&ws);
            let r = certify(&m, 1.0, &BoundPolicy::default()).unwrap();
            prop_assert_eq!(r.certified, ws.iter().all(|&w| w > 0.0));
            for c in &r.per_layer {
                prop_assert_eq!(c.satisfied, c.weight_sum > c.constant_term);
                prop_assert_eq!(c.satisfied, c.nu_extracted > 1.0);
            }
        }
    }
}
