//! Core library of the μECoG auditory decoding workbench.
//!
//! The pipeline mirrors a chronic auditory-evoked-potential experiment at
//! desk scale: synthetic multichannel recordings with stimulus triggers are
//! preprocessed (common-average reference, channel rejection, Butterworth
//! filtering), segmented into labeled one-second class-trials, and decoded
//! with regularized LDA and filter-bank CSP. Spectral analysis (sliding-FFT
//! relative power, evoked-potential averaging, topographic maps) and the
//! evaluation layer (chronological splits, confusion matrices, rank-sum
//! statistics) live here as well. The convolutional decoder has its own
//! crate, `ecog-convnet`.

pub mod dataset;
pub mod epoch;
pub mod eval;
pub mod fbcsp;
pub mod filter;
pub mod preprocess;
pub mod rlda;
pub mod spectral;
pub mod synth;

pub use dataset::{ChannelMeta, ClassTrial, Condition, Recording, StimulusTrial};
