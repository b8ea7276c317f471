//! Preprocessing chain: common-average re-referencing, noisy-channel
//! exclusion, a second re-referencing pass over the remaining contacts,
//! Butterworth filtering and bad-trial flagging.
//!
//! The order is fixed: CAR over all contacts → noisy-contact detection →
//! CAR over the remaining contacts → 0.5 Hz highpass → (decoding path only)
//! 120 Hz lowpass. Epoching always runs after filtering.

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassTrial, Recording};
use crate::filter::{design_butterworth, BiquadCascade, FilterError, FilterKind};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("common average reference needs >= 2 usable channels, found {0}")]
    TooFewChannels(usize),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("invalid preprocessing config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// A channel is excluded when more than this fraction of its samples
    /// exceeds the amplitude threshold.
    pub noisy_fraction: f64,
    pub amplitude_threshold_uv: f64,
    pub hp_cutoff_hz: f64,
    pub lp_cutoff_hz: f64,
    pub filter_order: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            noisy_fraction: 0.20,
            amplitude_threshold_uv: 800.0,
            hp_cutoff_hz: 0.5,
            lp_cutoff_hz: 120.0,
            filter_order: 2,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self, fs_hz: f64) -> Result<(), PreprocessError> {
        if !(self.noisy_fraction > 0.0 && self.noisy_fraction < 1.0) {
            return Err(PreprocessError::InvalidConfig(format!(
                "noisy_fraction must be in (0, 1), got {}",
                self.noisy_fraction
            )));
        }
        if !(self.hp_cutoff_hz > 0.0 && self.hp_cutoff_hz < self.lp_cutoff_hz
            && self.lp_cutoff_hz < fs_hz / 2.0)
        {
            return Err(PreprocessError::InvalidConfig(format!(
                "need 0 < hp ({}) < lp ({}) < fs/2 ({})",
                self.hp_cutoff_hz,
                self.lp_cutoff_hz,
                fs_hz / 2.0
            )));
        }
        if self.filter_order == 0 {
            return Err(PreprocessError::InvalidConfig(
                "filter_order must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Which end of the §-fixed chain to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterPath {
    /// Highpass only: overview and spectral-power computation.
    Overview,
    /// Highpass then lowpass: input to the decoders.
    Decoding,
}

/// Subtract the per-sample mean over non-excluded channels from every
/// non-excluded channel. Excluded channels are left untouched.
pub fn common_average_reference(rec: &Recording) -> Result<Recording, PreprocessError> {
    let included = rec.included_channels();
    if included.len() < 2 {
        return Err(PreprocessError::TooFewChannels(included.len()));
    }
    let mut out = rec.clone();
    let n = rec.n_samples();
    let mut mean = Array1::<f64>::zeros(n);
    for &ch in &included {
        mean += &rec.samples.row(ch);
    }
    mean /= included.len() as f64;
    for &ch in &included {
        let mut row = out.samples.row_mut(ch);
        row -= &mean;
    }
    Ok(out)
}

/// Flag channels whose fraction of samples with |x| above the threshold is
/// strictly greater than `noisy_fraction`. Applies to the first-pass
/// re-referenced recording.
pub fn detect_noisy_channels(rec: &Recording, cfg: &PreprocessConfig) -> Vec<bool> {
    let n = rec.n_samples() as f64;
    (0..rec.n_channels())
        .map(|ch| {
            let over = rec
                .samples
                .row(ch)
                .iter()
                .filter(|v| v.abs() > cfg.amplitude_threshold_uv)
                .count();
            over as f64 / n > cfg.noisy_fraction
        })
        .collect()
}

/// Causal forward filtering, zero initial state, per channel. Excluded
/// channels are not filtered. State is reset for every channel of every call
/// (filtering precedes epoching, so state spans a whole recording).
pub fn apply_filter(rec: &Recording, filt: &BiquadCascade) -> Result<Recording, PreprocessError> {
    if filt.fs_hz() != rec.fs_hz {
        return Err(FilterError::SampleRateMismatch {
            design_fs_hz: filt.fs_hz(),
            data_fs_hz: rec.fs_hz,
        }
        .into());
    }
    let mut out = rec.clone();
    for ch in rec.included_channels() {
        let mut row = out.samples.row_mut(ch);
        let slice = row.as_slice_mut().expect("contiguous row");
        filt.filter_in_place(slice);
    }
    Ok(out)
}

/// Outcome of the full preprocessing chain.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub recording: Recording,
    /// Per-channel exclusion mask from noisy-contact detection.
    pub excluded: Vec<bool>,
}

/// Run the fixed chain on a raw recording.
pub fn preprocess_recording(
    rec: &Recording,
    cfg: &PreprocessConfig,
    path: FilterPath,
) -> Result<Preprocessed, PreprocessError> {
    cfg.validate(rec.fs_hz)?;
    // First pass: CAR over all contacts, then detect noisy ones.
    let first = common_average_reference(rec)?;
    let excluded = detect_noisy_channels(&first, cfg);
    // Second pass re-references the *raw* data of the remaining contacts.
    let mut remaining = rec.clone();
    for (ch, &flag) in excluded.iter().enumerate() {
        remaining.channels[ch].excluded = flag;
    }
    let rereferenced = common_average_reference(&remaining)?;
    let hp = design_butterworth(
        FilterKind::Highpass,
        cfg.hp_cutoff_hz,
        cfg.filter_order,
        rec.fs_hz,
    )?;
    let mut filtered = apply_filter(&rereferenced, &hp)?;
    if path == FilterPath::Decoding {
        let lp = design_butterworth(
            FilterKind::Lowpass,
            cfg.lp_cutoff_hz,
            cfg.filter_order,
            rec.fs_hz,
        )?;
        filtered = apply_filter(&filtered, &lp)?;
    }
    Ok(Preprocessed {
        recording: filtered,
        excluded,
    })
}

/// Flag class-trials containing any sample with |x| strictly above the
/// threshold. Trials are flagged, never dropped — the split layer decides
/// retention (bad trials stay in the test set).
pub fn flag_bad_trials(mut trials: Vec<ClassTrial>, threshold_uv: f64) -> Vec<ClassTrial> {
    for trial in &mut trials {
        trial.bad = trial.samples.iter().any(|v| v.abs() > threshold_uv);
    }
    trials
}
