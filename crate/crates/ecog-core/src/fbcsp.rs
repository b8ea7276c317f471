//! Filter-bank common spatial patterns decoding.
//!
//! Per frequency band, CSP filters come from the generalized eigenproblem
//! `Σ_A w = λ (Σ_A + Σ_B) w` over trace-normalized average trial
//! covariances; log-variance of the spatially filtered trials forms the
//! feature vector, classified with rLDA. Three-class decoding runs
//! one-vs-rest. Since `var(w'X) = w' C w` for the centered per-trial
//! covariance `C`, trials are band-filtered exactly once and reduced to
//! per-band covariances for both fitting and feature extraction.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ClassTrial;
use crate::filter::{design_bandpass, BiquadCascade, FilterError};
use crate::rlda::{
    argmax_lowest, RldaError, RldaFeatureConfig, RldaModel,
    DEFAULT_LAMBDA_GRID,
};

#[derive(Debug, Error)]
pub enum CspError {
    #[error("invalid filter bank: {0}")]
    InvalidBank(String),
    #[error("class {class} has {count} trials, need at least 2")]
    ClassTooSmall { class: u8, count: usize },
    #[error("need m >= 1 filter pairs with 2m <= {n_channels} channels, got m = {m}")]
    BadFilterCount { m: usize, n_channels: usize },
    #[error("composite covariance not positive definite even after regularization")]
    DegenerateCovariance,
    #[error("no usable hyperparameter candidate")]
    NoUsableCandidate,
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Classifier(#[from] RldaError),
}

/// Frequency bands of the filter bank, each realized as a highpass+lowpass
/// Butterworth cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub bands: Vec<(f64, f64)>,
}

impl Default for FilterBank {
    fn default() -> Self {
        FilterBank {
            bands: vec![
                (0.5, 4.0),
                (4.0, 8.0),
                (8.0, 13.0),
                (13.0, 30.0),
                (30.0, 50.0),
                (50.0, 70.0),
                (70.0, 90.0),
                (90.0, 120.0),
            ],
        }
    }
}

impl FilterBank {
    pub fn validate(&self, fs_hz: f64) -> Result<(), CspError> {
        if self.bands.is_empty() {
            return Err(CspError::InvalidBank("empty band list".into()));
        }
        for &(lo, hi) in &self.bands {
            if !(lo > 0.0 && lo < hi && hi < fs_hz / 2.0) {
                return Err(CspError::InvalidBank(format!(
                    "band ({lo}, {hi}) outside (0, {})",
                    fs_hz / 2.0
                )));
            }
        }
        let mut sorted = self.bands.clone();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in sorted.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(CspError::InvalidBank(format!(
                    "bands ({}, {}) and ({}, {}) overlap",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Ok(())
    }

    pub fn cascades(&self, order: usize, fs_hz: f64) -> Result<Vec<BiquadCascade>, CspError> {
        self.validate(fs_hz)?;
        Ok(self
            .bands
            .iter()
            .map(|&(lo, hi)| design_bandpass(lo, hi, order, fs_hz))
            .collect::<Result<_, _>>()?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FbcspConfig {
    pub bank: FilterBank,
    /// Candidate filter-pair counts, selected on validation accuracy.
    pub m_grid: Vec<usize>,
    /// Shrinkage grid of the terminal rLDA.
    pub lambda_grid: Vec<f64>,
    /// Butterworth order per band edge.
    pub filter_order: usize,
}

impl Default for FbcspConfig {
    fn default() -> Self {
        FbcspConfig {
            bank: FilterBank::default(),
            m_grid: vec![2, 3, 4],
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            filter_order: 2,
        }
    }
}

/// Centered covariance of one band-filtered trial: `X̂ X̂' / T`.
fn trial_covariance(filtered: &Array2<f64>) -> Array2<f64> {
    let t = filtered.ncols() as f64;
    let mut centered = filtered.clone();
    for mut row in centered.rows_mut() {
        let mean = row.sum() / t;
        row -= mean;
    }
    centered.dot(&centered.t()) / t
}

/// Per-band centered covariances of one trial.
fn band_covariances(trial: &ClassTrial, cascades: &[BiquadCascade]) -> Vec<Array2<f64>> {
    cascades
        .iter()
        .map(|cascade| {
            let mut filtered = trial.samples.clone();
            for mut row in filtered.rows_mut() {
                cascade.filter_in_place(row.as_slice_mut().expect("contiguous row"));
            }
            trial_covariance(&filtered)
        })
        .collect()
}

/// Result of fitting one band's spatial filters.
#[derive(Debug, Clone)]
pub struct CspFilters {
    /// `[2m][n_channels]`: top-m eigenvectors (descending λ), then bottom-m
    /// (ascending λ).
    pub w: Array2<f64>,
    /// All generalized eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Whether the composite covariance needed a ridge to factorize.
    pub regularized: bool,
}

fn mean_normalized(covs: &[&Array2<f64>]) -> Array2<f64> {
    let n_ch = covs[0].nrows();
    let mut acc = Array2::<f64>::zeros((n_ch, n_ch));
    for c in covs {
        let trace: f64 = c.diag().sum();
        if trace > 0.0 {
            acc += &(*c / trace);
        }
    }
    acc / covs.len() as f64
}

/// Solve the generalized CSP eigenproblem for two classes of per-trial
/// covariances (already centered, not yet trace-normalized).
pub fn fit_csp_from_covariances(
    covs_a: &[&Array2<f64>],
    covs_b: &[&Array2<f64>],
    m: usize,
) -> Result<CspFilters, CspError> {
    let n_ch = covs_a[0].nrows();
    if m == 0 || 2 * m > n_ch {
        return Err(CspError::BadFilterCount { m, n_channels: n_ch });
    }
    let sigma_a = mean_normalized(covs_a);
    let sigma_b = mean_normalized(covs_b);
    let composite = &sigma_a + &sigma_b;

    let to_na = |a: &Array2<f64>| {
        nalgebra::DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
    };
    let mut r = to_na(&composite);
    let mut regularized = false;
    let chol = match nalgebra::Cholesky::new(r.clone()) {
        Some(c) => c,
        None => {
            regularized = true;
            let ridge = 1e-9 * r.trace().max(1e-30);
            for i in 0..n_ch {
                r[(i, i)] += ridge;
            }
            nalgebra::Cholesky::new(r).ok_or(CspError::DegenerateCovariance)?
        }
    };

    // Reduce to a standard symmetric problem: M = L^{-1} Σ_A L^{-T}.
    let l = chol.l();
    let a_na = to_na(&sigma_a);
    let tmp = l.clone().solve_lower_triangular(&a_na).ok_or(CspError::DegenerateCovariance)?;
    let m_mat = l
        .clone()
        .solve_lower_triangular(&tmp.transpose())
        .ok_or(CspError::DegenerateCovariance)?
        .transpose();
    // enforce symmetry against rounding
    let m_sym = (&m_mat + &m_mat.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(m_sym);

    let mut order: Vec<usize> = (0..n_ch).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap()
    });

    // Map back: w = L^{-T} v, with a deterministic sign convention.
    let lt = l.transpose();
    let mut w = Array2::<f64>::zeros((2 * m, n_ch));
    let mut pick = Vec::with_capacity(2 * m);
    pick.extend_from_slice(&order[..m]);
    pick.extend(order[n_ch - m..].iter().rev().copied());
    for (row, &idx) in pick.iter().enumerate() {
        let v = eig.eigenvectors.column(idx).into_owned();
        let wi = lt
            .clone()
            .solve_upper_triangular(&v)
            .ok_or(CspError::DegenerateCovariance)?;
        let mut max_abs = 0.0;
        let mut sign = 1.0;
        for &c in wi.iter() {
            if c.abs() > max_abs {
                max_abs = c.abs();
                sign = if c >= 0.0 { 1.0 } else { -1.0 };
            }
        }
        for (col, &c) in wi.iter().enumerate() {
            w[[row, col]] = sign * c;
        }
    }

    Ok(CspFilters {
        w,
        eigenvalues: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        regularized,
    })
}

/// Fit CSP filters from band-filtered trials (convenience over the
/// covariance route; both classes must share the channel count).
pub fn fit_csp(
    trials_a: &[Array2<f64>],
    trials_b: &[Array2<f64>],
    m: usize,
) -> Result<CspFilters, CspError> {
    if trials_a.len() < 2 {
        return Err(CspError::ClassTooSmall {
            class: 1,
            count: trials_a.len(),
        });
    }
    if trials_b.len() < 2 {
        return Err(CspError::ClassTooSmall {
            class: 2,
            count: trials_b.len(),
        });
    }
    let covs_a: Vec<Array2<f64>> = trials_a.iter().map(trial_covariance).collect();
    let covs_b: Vec<Array2<f64>> = trials_b.iter().map(trial_covariance).collect();
    fit_csp_from_covariances(
        &covs_a.iter().collect::<Vec<_>>(),
        &covs_b.iter().collect::<Vec<_>>(),
        m,
    )
}

const VARIANCE_FLOOR: f64 = 1e-12;

/// Log-variance features of one trial from its per-band covariances:
/// per band, `ln(diag(W C W'))` floored at 1e-12, concatenated.
pub fn logvar_from_covariances(covs: &[Array2<f64>], per_band_w: &[Array2<f64>]) -> Array1<f64> {
    let m2 = per_band_w[0].nrows();
    let mut out = Array1::zeros(per_band_w.len() * m2);
    for (band, (c, w)) in covs.iter().zip(per_band_w).enumerate() {
        let proj = w.dot(c).dot(&w.t());
        for i in 0..m2 {
            out[band * m2 + i] = proj[[i, i]].max(VARIANCE_FLOOR).ln();
        }
    }
    out
}

/// Log-variance features of one raw trial through the filter bank.
pub fn logvar_features(
    trial: &ClassTrial,
    per_band_w: &[Array2<f64>],
    bank: &FilterBank,
    filter_order: usize,
    fs_hz: f64,
) -> Result<Array1<f64>, CspError> {
    let cascades = bank.cascades(filter_order, fs_hz)?;
    let covs = band_covariances(trial, &cascades);
    Ok(logvar_from_covariances(&covs, per_band_w))
}

/// One one-vs-rest unit: CSP filters per band plus the terminal classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OneVsRest {
    /// The "one" class this unit scores (for 2-class models: class 1, and
    /// the classifier separates class 1 from class 2 directly).
    pub class: u8,
    /// Per band, `[2m][n_channels]` rows.
    pub band_filters: Vec<Vec<Vec<f64>>>,
    pub classifier: RldaModel,
}

impl OneVsRest {
    fn w_arrays(&self) -> Vec<Array2<f64>> {
        self.band_filters
            .iter()
            .map(|w| {
                let rows = w.len();
                let cols = w[0].len();
                Array2::from_shape_fn((rows, cols), |(i, j)| w[i][j])
            })
            .collect()
    }
}

/// Fitted FBCSP model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CspModel {
    pub n_classes: u8,
    pub m: usize,
    pub lambda: f64,
    pub config: FbcspConfig,
    pub fs_hz: f64,
    pub units: Vec<OneVsRest>,
}

fn split_by_class(labels: &[u8], class: u8) -> (Vec<usize>, Vec<usize>) {
    let mut one = Vec::new();
    let mut rest = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == class {
            one.push(i);
        } else {
            rest.push(i);
        }
    }
    (one, rest)
}

fn fit_units(
    covs: &[Vec<Array2<f64>>],
    labels: &[u8],
    n_classes: u8,
    m: usize,
) -> Result<Vec<(u8, Vec<Array2<f64>>)>, CspError> {
    let n_bands = covs[0].len();
    let classes: Vec<u8> = if n_classes == 2 {
        vec![1]
    } else {
        (1..=n_classes).collect()
    };
    let mut units = Vec::new();
    for class in classes {
        let (one, rest) = split_by_class(labels, class);
        if one.len() < 2 {
            return Err(CspError::ClassTooSmall {
                class,
                count: one.len(),
            });
        }
        if rest.len() < 2 {
            return Err(CspError::ClassTooSmall {
                class: if class == 1 { 2 } else { 1 },
                count: rest.len(),
            });
        }
        let mut per_band = Vec::with_capacity(n_bands);
        for band in 0..n_bands {
            let covs_one: Vec<&Array2<f64>> = one.iter().map(|&i| &covs[i][band]).collect();
            let covs_rest: Vec<&Array2<f64>> = rest.iter().map(|&i| &covs[i][band]).collect();
            per_band.push(fit_csp_from_covariances(&covs_one, &covs_rest, m)?.w);
        }
        units.push((class, per_band));
    }
    Ok(units)
}

fn unit_features(
    covs: &[Vec<Array2<f64>>],
    per_band_w: &[Array2<f64>],
) -> Array2<f64> {
    let n = covs.len();
    let d = per_band_w.len() * per_band_w[0].nrows();
    let mut x = Array2::zeros((n, d));
    for (i, trial_covs) in covs.iter().enumerate() {
        x.row_mut(i)
            .assign(&logvar_from_covariances(trial_covs, per_band_w));
    }
    x
}

fn one_vs_rest_labels(labels: &[u8], class: u8) -> Vec<u8> {
    labels.iter().map(|&l| if l == class { 1 } else { 2 }).collect()
}

/// Fit FBCSP with validation-based selection of (m, lambda).
///
/// Candidates are scored by validation accuracy of the full multi-class
/// predictor; ties prefer smaller m, then smaller lambda. The final model is
/// refit on train+validation with the selected hyperparameters.
pub fn fit_fbcsp(
    train: &[ClassTrial],
    validation: &[ClassTrial],
    n_classes: u8,
    cfg: &FbcspConfig,
    fs_hz: f64,
) -> Result<CspModel, CspError> {
    let cascades = cfg.bank.cascades(cfg.filter_order, fs_hz)?;
    let covs_train: Vec<Vec<Array2<f64>>> =
        train.iter().map(|t| band_covariances(t, &cascades)).collect();
    let covs_val: Vec<Vec<Array2<f64>>> = validation
        .iter()
        .map(|t| band_covariances(t, &cascades))
        .collect();
    let y_train: Vec<u8> = train.iter().map(|t| t.label).collect();
    let y_val: Vec<u8> = validation.iter().map(|t| t.label).collect();

    let feature_cfg = RldaFeatureConfig::default();
    let mut m_grid = cfg.m_grid.clone();
    m_grid.sort_unstable();
    let mut best: Option<(usize, f64, f64)> = None; // (m, lambda, da)
    for &m in &m_grid {
        let Ok(units) = fit_units(&covs_train, &y_train, n_classes, m) else {
            continue;
        };
        // Select lambda on the one-vs-rest ensemble as a whole: score each
        // lambda by multi-class validation accuracy.
        for &lambda in &cfg.lambda_grid {
            let mut classifiers = Vec::new();
            let mut ok = true;
            for (class, per_band_w) in &units {
                let x = unit_features(&covs_train, per_band_w);
                let y = one_vs_rest_labels(&y_train, *class);
                match RldaModel::fit_features(x.view(), &y, 2, lambda, feature_cfg) {
                    Ok(c) => classifiers.push(c),
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            let mut correct = 0usize;
            for (i, &label) in y_val.iter().enumerate() {
                let pred = predict_from_covs(&covs_val[i], &units, &classifiers, n_classes)?;
                if pred.0 == label {
                    correct += 1;
                }
            }
            let da = correct as f64 / y_val.len().max(1) as f64;
            if best.map_or(true, |(_, _, best_da)| da > best_da) {
                best = Some((m, lambda, da));
            }
        }
    }
    let (m, lambda, _) = best.ok_or(CspError::NoUsableCandidate)?;

    // Refit on train + validation with the selected hyperparameters.
    let mut covs_all = covs_train;
    covs_all.extend(covs_val);
    let mut y_all = y_train;
    y_all.extend(y_val);
    let units = fit_units(&covs_all, &y_all, n_classes, m)?;
    let mut out_units = Vec::new();
    for (class, per_band_w) in &units {
        let x = unit_features(&covs_all, per_band_w);
        let y = one_vs_rest_labels(&y_all, *class);
        let classifier = RldaModel::fit_features(x.view(), &y, 2, lambda, feature_cfg)?;
        out_units.push(OneVsRest {
            class: *class,
            band_filters: per_band_w
                .iter()
                .map(|w| w.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
            classifier,
        });
    }
    Ok(CspModel {
        n_classes,
        m,
        lambda,
        config: cfg.clone(),
        fs_hz,
        units: out_units,
    })
}

fn predict_from_covs(
    covs: &[Array2<f64>],
    units: &[(u8, Vec<Array2<f64>>)],
    classifiers: &[RldaModel],
    n_classes: u8,
) -> Result<(u8, Vec<f64>), CspError> {
    if n_classes == 2 {
        let x = logvar_from_covariances(covs, &units[0].1);
        let (label, scores) = classifiers[0].predict_features(x.view())?;
        return Ok((label, scores));
    }
    let mut scores = Vec::with_capacity(units.len());
    for ((_, per_band_w), classifier) in units.iter().zip(classifiers) {
        let x = logvar_from_covariances(covs, per_band_w);
        let s = classifier.scores(x.view())?;
        // probability of "this class" from the one-vs-rest log odds
        let p = 1.0 / (1.0 + (s[1] - s[0]).exp());
        scores.push(p);
    }
    Ok((argmax_lowest(&scores) as u8 + 1, scores))
}

impl CspModel {
    /// Predicted 1-based label and per-class scores (for 2-class models,
    /// the two discriminant scores; otherwise one-vs-rest probabilities).
    pub fn predict(&self, trial: &ClassTrial) -> Result<(u8, Vec<f64>), CspError> {
        let cascades = self.config.bank.cascades(self.config.filter_order, self.fs_hz)?;
        let covs = band_covariances(trial, &cascades);
        let units: Vec<(u8, Vec<Array2<f64>>)> = self
            .units
            .iter()
            .map(|u| (u.class, u.w_arrays()))
            .collect();
        let classifiers: Vec<RldaModel> =
            self.units.iter().map(|u| u.classifier.clone()).collect();
        predict_from_covs(&covs, &units, &classifiers, self.n_classes)
    }
}
