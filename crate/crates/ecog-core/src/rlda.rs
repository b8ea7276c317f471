//! Regularized linear discriminant analysis with a shared, shrinkage-
//! regularized covariance.
//!
//! Class-conditional densities are Gaussians with per-class means and one
//! pooled covariance, shrunk toward a scaled identity:
//! `Σ_λ = (1−λ)·Σ + λ·(trace(Σ)/d)·I`. Class-trials enter as binned
//! time-domain amplitudes (40 ms bins by default); the feature-matrix API
//! is also used directly by the filter-bank CSP decoder.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ClassTrial;

#[derive(Debug, Error)]
pub enum RldaError {
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("class {class} has {count} trials, need at least 2")]
    ClassTooSmall { class: u8, count: usize },
    #[error("non-finite feature value encountered")]
    NonFinite,
    #[error("shrunk covariance is singular (lambda = {lambda})")]
    SingularCovariance { lambda: f64 },
    #[error("no usable lambda in the grid")]
    NoUsableLambda,
    #[error("feature dimension mismatch: model has {model}, input has {input}")]
    DimensionMismatch { model: usize, input: usize },
}

/// Temporal binning of class-trials into feature vectors.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RldaFeatureConfig {
    /// Bin width in ms; must divide the 1 s epoch into whole bins of whole
    /// samples.
    pub bin_ms: f64,
}

impl Default for RldaFeatureConfig {
    fn default() -> Self {
        RldaFeatureConfig { bin_ms: 40.0 }
    }
}

impl RldaFeatureConfig {
    /// (samples per bin, bins per epoch) for an epoch of `n_samples`.
    pub fn bin_layout(&self, n_samples: usize) -> Result<(usize, usize), RldaError> {
        let bin = self.bin_ms * n_samples as f64 / 1000.0;
        if bin.fract() != 0.0 || bin < 1.0 {
            return Err(RldaError::InvalidConfig(format!(
                "bin width {} ms is not a whole sample count for a 1 s epoch of {} samples",
                self.bin_ms, n_samples
            )));
        }
        let bin = bin as usize;
        if n_samples % bin != 0 {
            return Err(RldaError::InvalidConfig(format!(
                "bin width {} ms does not divide the 1 s epoch evenly",
                self.bin_ms
            )));
        }
        Ok((bin, n_samples / bin))
    }
}

/// Mean amplitude per consecutive bin, concatenated channel-major.
pub fn extract_features(trial: &ClassTrial, cfg: &RldaFeatureConfig) -> Result<Array1<f64>, RldaError> {
    let n_samples = trial.samples.ncols();
    let (bin, n_bins) = cfg.bin_layout(n_samples)?;
    let n_ch = trial.samples.nrows();
    let mut out = Array1::zeros(n_ch * n_bins);
    for ch in 0..n_ch {
        let row = trial.samples.row(ch);
        for b in 0..n_bins {
            let sum: f64 = row.slice(ndarray::s![b * bin..(b + 1) * bin]).sum();
            out[ch * n_bins + b] = sum / bin as f64;
        }
    }
    Ok(out)
}

fn feature_matrix(
    trials: &[ClassTrial],
    cfg: &RldaFeatureConfig,
) -> Result<(Array2<f64>, Vec<u8>), RldaError> {
    let first = extract_features(&trials[0], cfg)?;
    let d = first.len();
    let mut x = Array2::zeros((trials.len(), d));
    x.row_mut(0).assign(&first);
    let mut labels = vec![trials[0].label];
    for (i, t) in trials.iter().enumerate().skip(1) {
        x.row_mut(i).assign(&extract_features(t, cfg)?);
        labels.push(t.label);
    }
    Ok((x, labels))
}

/// Fitted rLDA state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RldaModel {
    pub n_classes: u8,
    /// `[class][feature]`.
    pub class_means: Vec<Vec<f64>>,
    /// Pooled within-class covariance (before shrinkage), `[d][d]`.
    pub pooled_covariance: Vec<Vec<f64>>,
    pub shrinkage_lambda: f64,
    pub class_priors: Vec<f64>,
    pub feature_cfg: RldaFeatureConfig,
    /// Discriminant weights `Σ_λ^{-1} μ_k`, derived at fit time.
    weights: Vec<Vec<f64>>,
    /// Discriminant offsets `-μ_k' Σ_λ^{-1} μ_k / 2 + ln π_k`.
    biases: Vec<f64>,
}

impl RldaModel {
    /// Fit from a feature matrix (`[trial][feature]`) and 1-based labels.
    ///
    /// The pooled covariance divides by the total trial count, which keeps
    /// the fit invariant under duplicating the training set.
    pub fn fit_features(
        x: ArrayView2<f64>,
        labels: &[u8],
        n_classes: u8,
        lambda: f64,
        feature_cfg: RldaFeatureConfig,
    ) -> Result<Self, RldaError> {
        let n = x.nrows();
        let d = x.ncols();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(RldaError::NonFinite);
        }
        let mut class_counts = vec![0usize; n_classes as usize];
        for &l in labels {
            class_counts[l as usize - 1] += 1;
        }
        for (k, &count) in class_counts.iter().enumerate() {
            if count < 2 {
                return Err(RldaError::ClassTooSmall {
                    class: k as u8 + 1,
                    count,
                });
            }
        }

        let mut means = Array2::<f64>::zeros((n_classes as usize, d));
        for (row, &l) in labels.iter().enumerate() {
            let mut m = means.row_mut(l as usize - 1);
            m += &x.row(row);
        }
        for (k, &count) in class_counts.iter().enumerate() {
            let mut m = means.row_mut(k);
            m /= count as f64;
        }

        // Pooled within-class scatter via one centered GEMM.
        let mut centered = x.to_owned();
        for (row, &l) in labels.iter().enumerate() {
            let mut r = centered.row_mut(row);
            r -= &means.row(l as usize - 1);
        }
        let cov = centered.t().dot(&centered) / n as f64;

        let priors: Vec<f64> = class_counts.iter().map(|&c| c as f64 / n as f64).collect();

        let mut model = RldaModel {
            n_classes,
            class_means: means.rows().into_iter().map(|r| r.to_vec()).collect(),
            pooled_covariance: cov.rows().into_iter().map(|r| r.to_vec()).collect(),
            shrinkage_lambda: lambda,
            class_priors: priors,
            feature_cfg,
            weights: Vec::new(),
            biases: Vec::new(),
        };
        model.solve_discriminants()?;
        Ok(model)
    }

    /// Fit from cleaned class-trials (bad trials already excluded).
    pub fn fit(
        trials: &[ClassTrial],
        n_classes: u8,
        lambda: f64,
        cfg: &RldaFeatureConfig,
    ) -> Result<Self, RldaError> {
        if trials.is_empty() {
            return Err(RldaError::ClassTooSmall { class: 1, count: 0 });
        }
        let (x, labels) = feature_matrix(trials, cfg)?;
        Self::fit_features(x.view(), &labels, n_classes, lambda, *cfg)
    }

    pub fn dim(&self) -> usize {
        self.class_means.first().map_or(0, Vec::len)
    }

    fn solve_discriminants(&mut self) -> Result<(), RldaError> {
        let d = self.dim();
        let lambda = self.shrinkage_lambda;
        let mut sigma = nalgebra::DMatrix::<f64>::zeros(d, d);
        let mut trace = 0.0;
        for i in 0..d {
            trace += self.pooled_covariance[i][i];
        }
        let ridge = lambda * trace / d as f64;
        for i in 0..d {
            for j in 0..d {
                sigma[(i, j)] = (1.0 - lambda) * self.pooled_covariance[i][j];
            }
            sigma[(i, i)] += ridge;
        }
        let chol = nalgebra::Cholesky::new(sigma)
            .ok_or(RldaError::SingularCovariance { lambda })?;
        self.weights.clear();
        self.biases.clear();
        for (k, mean) in self.class_means.iter().enumerate() {
            let mu = nalgebra::DVector::from_column_slice(mean);
            let w = chol.solve(&mu);
            let bias = -0.5 * mu.dot(&w) + self.class_priors[k].ln();
            self.weights.push(w.iter().copied().collect());
            self.biases.push(bias);
        }
        Ok(())
    }

    /// Rebuild derived discriminants (after deserialization).
    pub fn rebuild(&mut self) -> Result<(), RldaError> {
        self.solve_discriminants()
    }

    /// Linear discriminant scores per class for one feature vector.
    pub fn scores(&self, x: ArrayView1<f64>) -> Result<Vec<f64>, RldaError> {
        if x.len() != self.dim() {
            return Err(RldaError::DimensionMismatch {
                model: self.dim(),
                input: x.len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| x.iter().zip(w).map(|(xi, wi)| xi * wi).sum::<f64>() + b)
            .collect())
    }

    /// Predicted 1-based label plus per-class scores; ties break to the
    /// lowest class id.
    pub fn predict_features(&self, x: ArrayView1<f64>) -> Result<(u8, Vec<f64>), RldaError> {
        let scores = self.scores(x)?;
        Ok((argmax_lowest(&scores) as u8 + 1, scores))
    }

    pub fn predict(&self, trial: &ClassTrial) -> Result<(u8, Vec<f64>), RldaError> {
        let x = extract_features(trial, &self.feature_cfg)?;
        self.predict_features(x.view())
    }
}

/// First index of the maximal value (deterministic tie-breaking).
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub const DEFAULT_LAMBDA_GRID: [f64; 8] = [0.0, 0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 1.0];

/// Pick the shrinkage value maximizing validation accuracy, feature-level.
/// Candidates whose covariance is singular are skipped; ties go to the
/// smallest lambda.
pub fn select_lambda_features(
    x_train: ArrayView2<f64>,
    y_train: &[u8],
    x_val: ArrayView2<f64>,
    y_val: &[u8],
    n_classes: u8,
    grid: &[f64],
    feature_cfg: RldaFeatureConfig,
) -> Result<(f64, f64), RldaError> {
    let mut best: Option<(f64, f64)> = None;
    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &lambda in &sorted {
        let Ok(model) = RldaModel::fit_features(x_train, y_train, n_classes, lambda, feature_cfg)
        else {
            continue;
        };
        let mut correct = 0usize;
        for (row, &label) in y_val.iter().enumerate() {
            let (pred, _) = model.predict_features(x_val.row(row))?;
            if pred == label {
                correct += 1;
            }
        }
        let da = correct as f64 / y_val.len().max(1) as f64;
        if best.map_or(true, |(_, best_da)| da > best_da) {
            best = Some((lambda, da));
        }
    }
    best.ok_or(RldaError::NoUsableLambda)
}

/// Trial-level lambda selection: extract features once, then sweep the grid.
pub fn select_lambda(
    train: &[ClassTrial],
    validation: &[ClassTrial],
    n_classes: u8,
    grid: &[f64],
    cfg: &RldaFeatureConfig,
) -> Result<(f64, f64), RldaError> {
    let (x_train, y_train) = feature_matrix(train, cfg)?;
    let (x_val, y_val) = feature_matrix(validation, cfg)?;
    select_lambda_features(
        x_train.view(),
        &y_train,
        x_val.view(),
        &y_val,
        n_classes,
        grid,
        *cfg,
    )
}

/// Mean accuracy of a fitted model on labeled trials.
pub fn accuracy(model: &RldaModel, trials: &[ClassTrial]) -> Result<f64, RldaError> {
    let mut correct = 0usize;
    for t in trials {
        if model.predict(t)?.0 == t.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / trials.len().max(1) as f64)
}
