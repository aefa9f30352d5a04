//! Feed-forward Leaky-ReLU network `y_l = f_l(W_l u_{l-1} + b_l)` with full
//! per-layer traces, backpropagated MSE gradients and a JSON model file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matvec, Matrix};
use crate::par::{self, ExecMode};

pub const MODEL_FORMAT_VERSION: &str = "1";

/// Batch rows handled by one gradient task. Fixed so the summation order does
/// not depend on the number of threads.
const GRADIENT_CHUNK: usize = 64;

/// Elementwise `max(x, a·x)`.
pub fn leaky_relu(v: &[f64], a: f64) -> Result<Vec<f64>> {
    check_slope(a)?;
    Ok(v.iter().map(|&x| leaky(x, a)).collect())
}

pub(crate) fn check_slope(a: f64) -> Result<()> {
    if a > 0.0 && a < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "Leaky-ReLU slope must lie in (0, 1), got {a}"
        )))
    }
}

#[inline]
fn leaky(x: f64, a: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        a * x
    }
}

/// Derivative with slope 1 at the kink.
#[inline]
fn leaky_grad(x: f64, a: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        a
    }
}

/// Whether the output layer goes through the Leaky ReLU like every hidden
/// layer (the default) or stays affine. With `Linear`, the output layer is
/// left out of the passivity cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    LeakyRelu,
    Linear,
}

impl std::str::FromStr for OutputActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leaky_relu" => Ok(Self::LeakyRelu),
            "linear" => Ok(Self::Linear),
            other => Err(Error::config(format!(
                "output activation must be leaky_relu or linear, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::contract(format!(
                "bias length {} does not match {} weight rows",
                bias.len(),
                weights.rows()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::contract("non-finite bias entry"));
        }
        Ok(Self { weights, bias })
    }

    pub fn n_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.rows()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.sum()
    }

    pub fn pre_activation(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut z = matvec(&self.weights, input)?;
        for (zi, b) in z.iter_mut().zip(&self.bias) {
            *zi += b;
        }
        Ok(z)
    }

    /// `leaky_relu(W u + b)`.
    pub fn activate(&self, input: &[f64], a: f64) -> Result<Vec<f64>> {
        let z = self.pre_activation(input)?;
        leaky_relu(&z, a)
    }
}

/// Per-layer pre-activations and activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<LayerParams>,
    slope: f64,
    output_activation: OutputActivation,
}

impl MlpModel {
    pub fn new(
        layers: Vec<LayerParams>,
        slope: f64,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        check_slope(slope)?;
        if layers.len() < 3 {
            return Err(Error::UnsupportedDepth(layers.len()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].n_in() != pair[0].n_out() {
                return Err(Error::contract(format!(
                    "layer {} expects {} inputs but layer {} produces {}",
                    l + 1,
                    pair[1].n_in(),
                    l,
                    pair[0].n_out()
                )));
            }
        }
        Ok(Self {
            layers,
            slope,
            output_activation,
        })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    /// Layer widths including the input: `[n_0, n_1, ..., n_N]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(LayerParams::n_out))
            .collect()
    }

    /// Number of leading layers that pass through the Leaky ReLU.
    pub fn activated_layers(&self) -> usize {
        match self.output_activation {
            OutputActivation::LeakyRelu => self.layers.len(),
            OutputActivation::Linear => self.layers.len() - 1,
        }
    }

    fn is_activated(&self, l: usize) -> bool {
        l < self.activated_layers()
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardTrace> {
        if input.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "input has length {}, model expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let n = self.layers.len();
        let mut pre_activations = Vec::with_capacity(n);
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (l, layer) in self.layers.iter().enumerate() {
            let u = if l == 0 { input } else { &activations[l - 1] };
            let z = layer.pre_activation(u)?;
            let y = if self.is_activated(l) {
                z.iter().map(|&x| leaky(x, self.slope)).collect()
            } else {
                z.clone()
            };
            pre_activations.push(z);
            activations.push(y);
        }
        Ok(ForwardTrace {
            pre_activations,
            activations,
        })
    }

    /// Scalar network output. Only meaningful for single-output models.
    pub fn predict(&self, input: &[f64]) -> Result<f64> {
        if self.output_dim() != 1 {
            return Err(Error::contract(format!(
                "predict needs a single-output model, this one has {} outputs",
                self.output_dim()
            )));
        }
        Ok(self.forward(input)?.output()[0])
    }

    /// Mean squared error over `(input, target)` rows.
    pub fn mse(&self, batch: &[(&[f64], f64)], mode: ExecMode) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::contract("mse of an empty batch"));
        }
        let errs = par::map_slice(mode, batch, |&(x, t)| self.predict(x).map(|y| (y - t).powi(2)));
        let mut total = 0.0;
        for e in errs {
            total += e?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Batch-mean squared error and its gradient with respect to every
    /// weight and bias.
    pub fn gradients(&self, batch: &[(&[f64], f64)], mode: ExecMode) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::contract("gradients of an empty batch"));
        }
        if self.output_dim() != 1 {
            return Err(Error::contract("gradients need a single-output model"));
        }
        let chunks: Vec<&[(&[f64], f64)]> = batch.chunks(GRADIENT_CHUNK).collect();
        let scale = 1.0 / batch.len() as f64;
        let partials = par::map_slice(mode, &chunks, |chunk| self.chunk_gradients(chunk, scale));
        let mut loss = 0.0;
        let mut grads = Gradients::zeros_like(self);
        for part in partials {
            let (l, g) = part?;
            loss += l;
            grads.add_assign(&g);
        }
        Ok((loss, grads))
    }

    fn chunk_gradients(&self, chunk: &[(&[f64], f64)], scale: f64) -> Result<(f64, Gradients)> {
        let mut grads = Gradients::zeros_like(self);
        let mut loss = 0.0;
        for &(input, target) in chunk {
            let trace = self.forward(input)?;
            let err = trace.output()[0] - target;
            loss += err * err * scale;
            let mut upstream = vec![2.0 * err * scale];
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let dz: Vec<f64> = if self.is_activated(l) {
                    upstream
                        .iter()
                        .zip(&trace.pre_activations[l])
                        .map(|(g, &z)| g * leaky_grad(z, self.slope))
                        .collect()
                } else {
                    upstream
                };
                let u = if l == 0 { input } else { &trace.activations[l - 1] };
                let gw = grads.layers[l].weights.as_mut_slice();
                let n_in = layer.n_in();
                for (r, &d) in dz.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (g, &x) in gw[r * n_in..(r + 1) * n_in].iter_mut().zip(u) {
                        *g += d * x;
                    }
                }
                for (gb, &d) in grads.layers[l].bias.iter_mut().zip(&dz) {
                    *gb += d;
                }
                upstream = if l > 0 {
                    crate::linalg::matvec_transpose(&layer.weights, &dz)?
                } else {
                    Vec::new()
                };
            }
        }
        Ok((loss, grads))
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDocument {
            version: MODEL_FORMAT_VERSION.to_string(),
            slope_a: self.slope,
            output_activation: self.output_activation,
            layers: self
                .layers
                .iter()
                .map(|l| LayerDocument {
                    rows: l.n_out(),
                    cols: l.n_in(),
                    weights: l.weights.as_slice().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| {
            Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::parse(
                "version",
                format!("unsupported model format version {:?}", doc.version),
            ));
        }
        check_slope(doc.slope_a)?;
        if doc.layers.is_empty() {
            return Err(Error::parse("layers", "layer list is empty"));
        }
        let mut layers = Vec::with_capacity(doc.layers.len());
        for (i, l) in doc.layers.into_iter().enumerate() {
            let at = format!("layers[{i}]");
            if l.weights.len() != l.rows * l.cols {
                return Err(Error::parse(
                    at,
                    format!(
                        "weights has {} entries, expected rows*cols = {}",
                        l.weights.len(),
                        l.rows * l.cols
                    ),
                ));
            }
            if l.bias.len() != l.rows {
                return Err(Error::parse(
                    at,
                    format!("bias has {} entries, expected {}", l.bias.len(), l.rows),
                ));
            }
            let weights =
                Matrix::new(l.rows, l.cols, l.weights).map_err(|e| Error::parse(&at, e.to_string()))?;
            layers.push(LayerParams::new(weights, l.bias).map_err(|e| Error::parse(&at, e.to_string()))?);
        }
        if let Some(i) = layers
            .windows(2)
            .position(|p| p[1].n_in() != p[0].n_out())
        {
            return Err(Error::parse(
                format!("layers[{}]", i + 1),
                format!(
                    "cols {} does not match previous layer rows {}",
                    layers[i + 1].n_in(),
                    layers[i].n_out()
                ),
            ));
        }
        Self::new(layers, doc.slope_a, doc.output_activation)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    version: String,
    slope_a: f64,
    #[serde(default)]
    output_activation: OutputActivation,
    layers: Vec<LayerDocument>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerDocument {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Values shaped like the model's parameters: gradients, or Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Matrix::zeros(l.n_out(), l.n_in()),
                    bias: vec![0.0; l.n_out()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.as_slice().iter().all(|x| x.is_finite()) && l.bias.iter().all(|x| x.is_finite())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(weight: f64, a: f64) -> MlpModel {
        let layer = || LayerParams::new(Matrix::new(1, 1, vec![weight]).unwrap(), vec![0.0]).unwrap();
        MlpModel::new(vec![layer(), layer(), layer()], a, OutputActivation::LeakyRelu).unwrap()
    }

    #[test]
    fn leaky_relu_examples() {
        assert_eq!(leaky_relu(&[3.0, -2.0], 0.5).unwrap(), vec![3.0, -1.0]);
        assert_eq!(leaky_relu(&[0.0, 0.0], 0.5).unwrap(), vec![0.0, 0.0]);
        assert!((leaky_relu(&[-1.0], 0.9).unwrap()[0] + 0.9).abs() < 1e-15);
        assert!(matches!(leaky_relu(&[1.0], 1.0), Err(Error::Config(_))));
        assert!(matches!(leaky_relu(&[1.0], 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn forward_examples() {
        let zero = MlpModel::new(
            vec![
                LayerParams::new(Matrix::zeros(4, 3), vec![0.0; 4]).unwrap(),
                LayerParams::new(Matrix::zeros(4, 4), vec![0.0; 4]).unwrap(),
                LayerParams::new(Matrix::zeros(1, 4), vec![0.0]).unwrap(),
            ],
            0.5,
            OutputActivation::LeakyRelu,
        )
        .unwrap();
        let t = zero.forward(&[1.0, -2.0, 3.0]).unwrap();
        assert!(t.activations.iter().flatten().all(|&x| x == 0.0));

        let id = chain(1.0, 0.5);
        assert_eq!(id.forward(&[2.0]).unwrap().output(), &[2.0]);
        // −2 → −1 → −0.5 → −0.25
        assert_eq!(id.forward(&[-2.0]).unwrap().output(), &[-0.25]);
        assert!(id.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn linear_output_skips_activation() {
        let layer = || LayerParams::new(Matrix::new(1, 1, vec![1.0]).unwrap(), vec![0.0]).unwrap();
        let m = MlpModel::new(vec![layer(), layer(), layer()], 0.5, OutputActivation::Linear).unwrap();
        // −2 → −1 → −0.5 → −0.5
        assert_eq!(m.forward(&[-2.0]).unwrap().output(), &[-0.5]);
        assert_eq!(m.activated_layers(), 2);
    }

    #[test]
    fn rejects_shallow_and_mismatched_models() {
        let l = LayerParams::new(Matrix::zeros(2, 2), vec![0.0; 2]).unwrap();
        assert!(matches!(
            MlpModel::new(vec![l.clone(), l.clone()], 0.5, OutputActivation::LeakyRelu),
            Err(Error::UnsupportedDepth(2))
        ));
        let bad = LayerParams::new(Matrix::zeros(1, 3), vec![0.0]).unwrap();
        assert!(MlpModel::new(vec![l.clone(), l, bad], 0.5, OutputActivation::LeakyRelu).is_err());
    }

    #[test]
    fn exact_fit_has_zero_gradient() {
        let m = chain(1.0, 0.5);
        let x = [0.7];
        let batch = [(&x[..], 0.7)];
        let (loss, g) = m.gradients(&batch, ExecMode::Sequential).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.layers.iter().all(|l| l.weights.as_slice().iter().all(|&v| v == 0.0)));
        assert!(m.gradients(&[], ExecMode::Sequential).is_err());
    }

    #[test]
    fn positive_chain_matches_linear_regression_gradient() {
        // Weights 1, inputs positive: output = w3·w2·w1·x, so d/dw1 = 2(ŷ−t)·x.
        let m = chain(1.0, 0.5);
        let xs = [[0.5], [2.0]];
        let ts = [1.0, 1.5];
        let batch: Vec<(&[f64], f64)> = xs.iter().map(|x| &x[..]).zip(ts).collect();
        let (_, g) = m.gradients(&batch, ExecMode::Sequential).unwrap();
        let expected = ((0.5 - 1.0) * 2.0 * 0.5 + (2.0 - 1.5) * 2.0 * 2.0) / 2.0;
        assert!((g.layers[0].weights[(0, 0)] - expected).abs() < 1e-15);
        // Last layer sees the same input value because the chain is the identity.
        assert!((g.layers[2].weights[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn json_errors() {
        assert!(matches!(
            MlpModel::from_json(r#"{"version":"1","slope_a":0.5,"layers":[]}"#),
            Err(Error::Parse { .. })
        ));
        let m = chain(1.0, 0.5);
        let bad = m.to_json().replace("\"slope_a\": 0.5", "\"slope_a\": 1.5");
        assert!(matches!(MlpModel::from_json(&bad), Err(Error::Config(_))));
        match MlpModel::from_json("{\"version\": \"1\",\n \"slope_a\": oops}") {
            Err(Error::Parse { location, .. }) => assert!(location.starts_with("line 2")),
            other => panic!("expected parse error, got {other:?}"),
        }
        let ragged = m.to_json().replacen("\"rows\": 1", "\"rows\": 2", 1);
        match MlpModel::from_json(&ragged) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "layers[0]"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
