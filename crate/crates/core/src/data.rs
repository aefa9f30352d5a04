//! Regression data: CSV ingestion, seeded splits, and preprocessing fitted on
//! the training split only (standardization, PCA projection, target min-max
//! scaling). Also a synthetic generator for offline runs.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Matrix};

const MISSING: &[&str] = &["", "na", "nan", "?", "null", "none"];
const TARGET_GUARD: (f64, f64) = (-0.5, 1.5);

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub targets: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Matrix, targets: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        if features.rows() != targets.len() {
            return Err(Error::contract(format!(
                "{} feature rows but {} targets",
                features.rows(),
                targets.len()
            )));
        }
        if feature_names.len() != features.cols() {
            return Err(Error::contract("feature name count does not match columns"));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::contract("non-finite target"));
        }
        Ok(Self {
            features,
            targets,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// `(input, target)` pairs borrowing from the dataset.
    pub fn rows(&self) -> Vec<(&[f64], f64)> {
        (0..self.len())
            .map(|i| (self.features.row(i), self.targets[i]))
            .collect()
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.features.row(i).to_vec()).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        Dataset {
            features: Matrix::new(indices.len(), d, data).expect("rows copied from a valid matrix"),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim().to_ascii_lowercase();
    MISSING.contains(&c.as_str())
}

/// Loads a comma-separated file with a header row. Feature columns with any
/// missing cell are dropped; every other cell must parse as a finite number.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, target_column, &path.display().to_string())
}

pub fn read_csv<R: Read>(reader: R, target_column: &str, source: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::parse(format!("{source}: header"), e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| {
            Error::parse(
                format!("{source}: header"),
                format!("target column {target_column:?} not found"),
            )
        })?;

    let mut records: Vec<Vec<String>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(format!("{source}: row {}", i + 1), e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(Error::parse(
                format!("{source}: row {} (line {})", i + 1, i + 2),
                format!("{} fields, header has {}", rec.len(), headers.len()),
            ));
        }
        records.push(rec.iter().map(str::to_string).collect());
    }
    if records.is_empty() {
        return Err(Error::parse(source, "no data rows"));
    }

    let kept: Vec<usize> = (0..headers.len())
        .filter(|&c| c != target_idx && !records.iter().any(|r| is_missing(&r[c])))
        .collect();
    let dropped = headers.len() - 1 - kept.len();
    if dropped > 0 {
        log::warn!("{source}: dropped {dropped} column(s) containing missing values");
    }

    let parse_cell = |row: usize, col: usize, cell: &str| -> Result<f64> {
        match cell.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::parse(
                format!("{source}: row {} (line {}), column {:?}", row + 1, row + 2, headers[col]),
                format!("cannot parse {cell:?} as a finite number"),
            )),
        }
    };

    let mut data = Vec::with_capacity(records.len() * kept.len());
    let mut targets = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        targets.push(parse_cell(i, target_idx, &r[target_idx])?);
        for &c in &kept {
            data.push(parse_cell(i, c, &r[c])?);
        }
    }
    Dataset::new(
        Matrix::new(records.len(), kept.len(), data)?,
        targets,
        kept.iter().map(|&c| headers[c].clone()).collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Seeded shuffle, then contiguous train / validation / test slices.
pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    let n = dataset.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::config(format!(
            "split of {n} rows by {fractions:?} leaves an empty split ({n_train}/{n_val}/{n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Splits {
        train: dataset.subset(&order[..n_train]),
        validation: dataset.subset(&order[n_train..n_train + n_val]),
        test: dataset.subset(&order[n_train + n_val..]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k × d`, one principal direction per row.
    pub components: Matrix,
    pub eigenvalues: Vec<f64>,
}

/// Preprocessing state fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    /// Input columns kept after dropping zero-variance features.
    pub kept_columns: Vec<usize>,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub pca: Pca,
    pub target_min: f64,
    pub target_max: f64,
}

/// Fits standardization, a `k`-component PCA projection (no whitening) and
/// target min-max scaling on `train`.
pub fn fit_preprocessor(train: &Dataset, k: usize) -> Result<Preprocessor> {
    let (n, d) = (train.len(), train.dim());
    if k == 0 {
        return Err(Error::config("PCA needs at least one component"));
    }
    if n < 2 {
        return Err(Error::contract("preprocessing needs at least two training rows"));
    }

    let mut kept_columns = Vec::new();
    let mut feature_means = Vec::new();
    let mut feature_stds = Vec::new();
    for c in 0..d {
        let col = train.features.column(c);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if std > 1e-12 * mean.abs().max(1.0) {
            kept_columns.push(c);
            feature_means.push(mean);
            feature_stds.push(std);
        } else {
            log::warn!("dropping zero-variance feature {:?}", train.feature_names[c]);
        }
    }
    let dk = kept_columns.len();
    if dk == 0 {
        return Err(Error::config("every feature has zero variance"));
    }
    let k = if dk < k {
        log::warn!("only {dk} usable features; reducing PCA components from {k} to {dk}");
        dk
    } else {
        k
    };
    if n <= k {
        return Err(Error::contract(format!(
            "PCA with {k} components needs more than {k} training rows, got {n}"
        )));
    }

    let standardized = standardize(&train.features, &kept_columns, &feature_means, &feature_stds);
    let mut cov = Matrix::zeros(dk, dk);
    for r in 0..n {
        let row = standardized.row(r);
        for i in 0..dk {
            for j in i..dk {
                cov[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..dk {
        for j in i..dk {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = sym_eigen(&cov)?;
    let mut components = Matrix::zeros(k, dk);
    for c in 0..k {
        let mut v = eig.vectors.column(c);
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for (j, x) in v.into_iter().enumerate() {
            components[(c, j)] = x;
        }
    }

    let target_min = train.targets.iter().copied().fold(f64::INFINITY, f64::min);
    let target_max = train.targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(target_max > target_min) {
        return Err(Error::config("training targets are constant; cannot scale to [0, 1]"));
    }

    Ok(Preprocessor {
        kept_columns,
        feature_means,
        feature_stds,
        pca: Pca {
            mean: vec![0.0; dk],
            components,
            eigenvalues: eig.values[..k].to_vec(),
        },
        target_min,
        target_max,
    })
}

fn standardize(features: &Matrix, kept: &[usize], means: &[f64], stds: &[f64]) -> Matrix {
    let n = features.rows();
    let mut data = Vec::with_capacity(n * kept.len());
    for r in 0..n {
        let row = features.row(r);
        for (j, &c) in kept.iter().enumerate() {
            data.push((row[c] - means[j]) / stds[j]);
        }
    }
    Matrix::new(n, kept.len(), data).expect("finite standardized data")
}

impl Preprocessor {
    pub fn output_dim(&self) -> usize {
        self.pca.components.rows()
    }

    /// Projects features and rescales targets. Scaled targets outside the
    /// training range are clipped to `[-0.5, 1.5]`.
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        let needed = self.kept_columns.iter().max().map_or(0, |m| m + 1);
        if dataset.dim() < needed {
            return Err(Error::contract(format!(
                "dataset has {} columns, preprocessor needs {needed}",
                dataset.dim()
            )));
        }
        let z = standardize(
            &dataset.features,
            &self.kept_columns,
            &self.feature_means,
            &self.feature_stds,
        );
        let k = self.output_dim();
        let mut data = Vec::with_capacity(dataset.len() * k);
        for r in 0..z.rows() {
            let centered: Vec<f64> = z.row(r).iter().zip(&self.pca.mean).map(|(x, m)| x - m).collect();
            data.extend(crate::linalg::matvec(&self.pca.components, &centered)?);
        }
        let targets = dataset
            .targets
            .iter()
            .map(|&t| self.scale_target(t).clamp(TARGET_GUARD.0, TARGET_GUARD.1))
            .collect();
        Dataset::new(
            Matrix::new(dataset.len(), k, data)?,
            targets,
            (1..=k).map(|i| format!("pc{i}")).collect(),
        )
    }

    pub fn scale_target(&self, t: f64) -> f64 {
        (t - self.target_min) / (self.target_max - self.target_min)
    }

    pub fn inverse_target(&self, y: f64) -> f64 {
        self.target_min + y * (self.target_max - self.target_min)
    }
}

/// Standard-normal features; target `sigmoid(w·x) + noise`, clipped to
/// `[0, 1]`, with `w ~ N(0, 1/d)` and noise standard deviation 0.05.
pub fn synthetic_regression(n_samples: usize, d: usize, seed: u64) -> Result<Dataset> {
    synthetic_regression_with_noise(n_samples, d, seed, 0.05)
}

pub fn synthetic_regression_with_noise(
    n_samples: usize,
    d: usize,
    seed: u64,
    noise_std: f64,
) -> Result<Dataset> {
    if n_samples < 50 {
        return Err(Error::config(format!(
            "synthetic data needs at least 50 samples, got {n_samples}"
        )));
    }
    if d == 0 {
        return Err(Error::config("synthetic data needs at least one feature"));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::config("noise standard deviation must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z / (d as f64).sqrt()
        })
        .collect();
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut data = Vec::with_capacity(n_samples * d);
    let mut targets = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
        let eps = if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        targets.push((1.0 / (1.0 + (-z).exp()) + eps).clamp(0.0, 1.0));
        data.extend(x);
    }
    Dataset::new(
        Matrix::new(n_samples, d, data)?,
        targets,
        (0..d).map(|i| format!("x{i}")).collect(),
    )
}
