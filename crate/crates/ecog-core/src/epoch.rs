//! Segmentation of preprocessed recordings into 5 s stimulus trials and
//! labeled 1 s class-trials.
//!
//! Each stimulus trial spans 1 s before onset, 3 s of stimulation and 1 s
//! after offset. A class scheme maps the five 1 s epochs to labels: the
//! 2-class scheme labels the pre-stimulus and post-offset seconds
//! "no stimulus" (class 1) and the three stimulation seconds "stimulus"
//! (class 2); the 3-class scheme labels the three post-onset seconds
//! Response 1, 2 and 3 and drops the rest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassTrial, Recording, StimulusTrial};

#[derive(Debug, Error)]
pub enum EpochError {
    #[error("invalid class scheme: {0}")]
    InvalidScheme(String),
}

/// Epochs per stimulus trial (1 s each at the 5 s trial structure).
pub const EPOCHS_PER_TRIAL: usize = 5;

/// Assignment of the five 1 s epochs to class labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassScheme {
    pub n_classes: u8,
    /// Label for epochs 1..=5 (index 0 = epoch 1); `None` drops the epoch.
    pub epoch_to_label: [Option<u8>; EPOCHS_PER_TRIAL],
}

impl ClassScheme {
    /// Stimulus detection: epochs 1 and 5 → class 1 (no stimulus),
    /// epochs 2–4 → class 2 (stimulus).
    pub fn two_class() -> Self {
        ClassScheme {
            n_classes: 2,
            epoch_to_label: [Some(1), Some(2), Some(2), Some(2), Some(1)],
        }
    }

    /// Response phases: epoch 2 → Response 1, epoch 3 → Response 2,
    /// epoch 4 → Response 3; pre-stimulus and post-offset epochs dropped.
    pub fn three_class() -> Self {
        ClassScheme {
            n_classes: 3,
            epoch_to_label: [None, Some(1), Some(2), Some(3), None],
        }
    }

    pub fn for_classes(n: u8) -> Result<Self, EpochError> {
        match n {
            2 => Ok(Self::two_class()),
            3 => Ok(Self::three_class()),
            other => Err(EpochError::InvalidScheme(format!(
                "unsupported class count {other} (supported: 2, 3)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), EpochError> {
        if self.n_classes == 0 {
            return Err(EpochError::InvalidScheme("n_classes must be >= 1".into()));
        }
        for label in self.epoch_to_label.iter().flatten() {
            if *label == 0 || *label > self.n_classes {
                return Err(EpochError::InvalidScheme(format!(
                    "label {label} outside 1..={}",
                    self.n_classes
                )));
            }
        }
        for class in 1..=self.n_classes {
            if !self.epoch_to_label.contains(&Some(class)) {
                return Err(EpochError::InvalidScheme(format!(
                    "class {class} is produced by no epoch"
                )));
            }
        }
        Ok(())
    }

    /// The chance level reported alongside decoding accuracies.
    pub fn chance_level(&self) -> f64 {
        1.0 / self.n_classes as f64
    }
}

/// Cut one 5 s stimulus trial per trigger. Only non-excluded channels are
/// carried into the trials; their metadata rides along for topography.
pub fn segment_trials(rec: &Recording) -> Vec<StimulusTrial> {
    let fs = rec.fs();
    let included = rec.included_channels();
    rec.triggers
        .iter()
        .map(|&t| {
            let mut samples = ndarray::Array2::zeros((included.len(), 5 * fs));
            for (row, &ch) in included.iter().enumerate() {
                samples
                    .row_mut(row)
                    .assign(&rec.samples.row(ch).slice(ndarray::s![t - fs..t + 4 * fs]));
            }
            StimulusTrial {
                samples,
                channels: included.iter().map(|&ch| rec.channels[ch]).collect(),
                trigger_offset: fs,
                fs_hz: rec.fs_hz,
            }
        })
        .collect()
}

/// Cut stimulus trials into labeled 1 s class-trials, in chronological order
/// (trial order, then epoch order within each trial).
///
/// The scheme is a precondition (see [`ClassScheme::validate`]); unlabeled
/// epochs are dropped, so a scheme with no labeled epoch yields no output.
pub fn make_class_trials(trials: &[StimulusTrial], scheme: &ClassScheme) -> Vec<ClassTrial> {
    let mut out = Vec::new();
    for (trial_idx, trial) in trials.iter().enumerate() {
        let fs = trial.fs();
        for (epoch_zero, label) in scheme.epoch_to_label.iter().enumerate() {
            let Some(label) = label else { continue };
            let start = epoch_zero * fs;
            out.push(ClassTrial {
                samples: trial
                    .samples
                    .slice(ndarray::s![.., start..start + fs])
                    .to_owned(),
                label: *label,
                epoch_index: (epoch_zero + 1) as u8,
                source_trial: trial_idx,
                bad: false,
            });
        }
    }
    out
}
