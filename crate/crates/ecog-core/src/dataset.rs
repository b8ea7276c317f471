//! Core data types and the on-disk dataset format.
//!
//! A dataset directory holds one experiment day: `manifest.json` with the
//! recording metadata and `samples.f32` with the raw samples as little-endian
//! IEEE-754 32-bit floats, channel-major, in microvolts. Samples are promoted
//! to f64 in memory; writers quantize to f32, so a loaded recording
//! round-trips bit-exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";
const SAMPLES_FILE: &str = "samples.f32";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    MalformedManifest {
        path: String,
        source: serde_json::Error,
    },
    #[error("unsupported manifest version {0} (supported: {MANIFEST_VERSION})")]
    UnsupportedVersion(u32),
    #[error("sample file length mismatch: expected {expected_bytes} bytes ({n_channels} channels x {n_samples} samples x 4), found {actual_bytes}")]
    LengthMismatch {
        expected_bytes: u64,
        actual_bytes: u64,
        n_channels: usize,
        n_samples: usize,
    },
    #[error("invariant violation: {0}")]
    Invariant(String),
}

/// Recording condition on an experiment day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Awake,
    Anesthesia,
}

/// Metadata for one electrode contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMeta {
    /// 0-based contact id; equals the channel's row in the sample array.
    pub index: usize,
    /// Position in the electrode grid, used for topographic maps.
    pub grid_row: usize,
    pub grid_col: usize,
    /// Set by noisy-channel detection; never persisted.
    #[serde(skip)]
    pub excluded: bool,
}

/// A continuous multichannel recording of one experiment day.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub fs_hz: f64,
    pub channels: Vec<ChannelMeta>,
    /// `[channel][time]`, microvolts.
    pub samples: Array2<f64>,
    /// Stimulus-onset sample indices.
    pub triggers: Vec<usize>,
    pub condition: Condition,
    pub day_id: u32,
}

impl Recording {
    /// Build a recording, validating every invariant.
    pub fn new(
        fs_hz: f64,
        channels: Vec<ChannelMeta>,
        samples: Array2<f64>,
        triggers: Vec<usize>,
        condition: Condition,
        day_id: u32,
    ) -> Result<Self, DatasetError> {
        let rec = Recording {
            fs_hz,
            channels,
            samples,
            triggers,
            condition,
            day_id,
        };
        rec.validate()?;
        Ok(rec)
    }

    /// Samples per second as an exact count. The trial structure (1 s
    /// pre-stimulus, 3 s stimulus, 1 s post) needs an integral rate.
    pub fn fs(&self) -> usize {
        self.fs_hz as usize
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    /// Channels not excluded by noisy-channel detection.
    pub fn included_channels(&self) -> Vec<usize> {
        self.channels
            .iter()
            .filter(|c| !c.excluded)
            .map(|c| c.index)
            .collect()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.fs_hz > 0.0) || !self.fs_hz.is_finite() {
            return Err(DatasetError::Invariant(format!(
                "fs_hz must be positive, got {}",
                self.fs_hz
            )));
        }
        if self.fs_hz.fract() != 0.0 {
            return Err(DatasetError::Invariant(format!(
                "fs_hz must be integral, got {}",
                self.fs_hz
            )));
        }
        if self.channels.len() != self.samples.nrows() {
            return Err(DatasetError::Invariant(format!(
                "{} channel entries for {} sample rows",
                self.channels.len(),
                self.samples.nrows()
            )));
        }
        if self.channels.is_empty() {
            return Err(DatasetError::Invariant("no channels".into()));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if c.index != i {
                return Err(DatasetError::Invariant(format!(
                    "channel at position {i} has index {}",
                    c.index
                )));
            }
        }
        let mut grid: Vec<(usize, usize)> =
            self.channels.iter().map(|c| (c.grid_row, c.grid_col)).collect();
        grid.sort_unstable();
        if grid.windows(2).any(|w| w[0] == w[1]) {
            return Err(DatasetError::Invariant(
                "duplicate (grid_row, grid_col) positions".into(),
            ));
        }
        let fs = self.fs();
        let n = self.n_samples();
        for &t in &self.triggers {
            if t < fs {
                return Err(DatasetError::Invariant(format!(
                    "trigger at sample {t} leaves less than 1 s ({fs} samples) of pre-stimulus data"
                )));
            }
            if t + 4 * fs > n {
                return Err(DatasetError::Invariant(format!(
                    "trigger at sample {t} leaves less than 4 s of post-onset data ({n} samples total)"
                )));
            }
        }
        Ok(())
    }
}

/// One segmented 5 s stimulus trial (1 s pre + 3 s stimulus + 1 s post).
///
/// Carries only the channels that survived exclusion, with their metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusTrial {
    /// `[channel][sample]`, exactly `5 * fs` columns.
    pub samples: Array2<f64>,
    pub channels: Vec<ChannelMeta>,
    /// Stimulus onset within the trial; equals `fs`.
    pub trigger_offset: usize,
    pub fs_hz: f64,
}

impl StimulusTrial {
    pub fn fs(&self) -> usize {
        self.fs_hz as usize
    }
}

/// One labeled 1 s epoch — the unit fed to the decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTrial {
    /// `[channel][sample]`, exactly `fs` columns.
    pub samples: Array2<f64>,
    /// Class id in `1..=n_classes`.
    pub label: u8,
    /// Which of the five 1 s epochs (1..=5) this came from.
    pub epoch_index: u8,
    /// Index of the stimulus trial this epoch was cut from.
    pub source_trial: usize,
    /// Any sample magnitude above the amplitude threshold.
    pub bad: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    fs_hz: f64,
    n_channels: usize,
    n_samples: usize,
    channels: Vec<ChannelMeta>,
    triggers: Vec<usize>,
    condition: Condition,
    day_id: u32,
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write a recording as `manifest.json` + `samples.f32` under `dir`.
///
/// Samples are stored as f32; callers that need bit-exact round-trips keep
/// their in-memory data f32-quantized (the synthetic generator does).
pub fn write_dataset(recording: &Recording, dir: &Path) -> Result<(), DatasetError> {
    recording.validate()?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        fs_hz: recording.fs_hz,
        n_channels: recording.n_channels(),
        n_samples: recording.n_samples(),
        channels: recording.channels.clone(),
        triggers: recording.triggers.clone(),
        condition: recording.condition,
        day_id: recording.day_id,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json).map_err(|e| io_err(&manifest_path, e))?;

    let samples_path = dir.join(SAMPLES_FILE);
    let mut buf = Vec::with_capacity(recording.samples.len() * 4);
    for row in recording.samples.rows() {
        for &v in row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = fs::File::create(&samples_path).map_err(|e| io_err(&samples_path, e))?;
    file.write_all(&buf).map_err(|e| io_err(&samples_path, e))?;
    Ok(())
}

/// Read a recording from a dataset directory, validating all invariants.
pub fn read_dataset(dir: &Path) -> Result<Recording, DatasetError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&json).map_err(|e| DatasetError::MalformedManifest {
            path: manifest_path.display().to_string(),
            source: e,
        })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(DatasetError::UnsupportedVersion(manifest.version));
    }
    if manifest.channels.len() != manifest.n_channels {
        return Err(DatasetError::Invariant(format!(
            "manifest lists {} channels but n_channels = {}",
            manifest.channels.len(),
            manifest.n_channels
        )));
    }

    let samples_path = dir.join(SAMPLES_FILE);
    let mut file = fs::File::open(&samples_path).map_err(|e| io_err(&samples_path, e))?;
    let expected_bytes = (manifest.n_channels * manifest.n_samples * 4) as u64;
    let actual_bytes = file
        .metadata()
        .map_err(|e| io_err(&samples_path, e))?
        .len();
    if actual_bytes != expected_bytes {
        return Err(DatasetError::LengthMismatch {
            expected_bytes,
            actual_bytes,
            n_channels: manifest.n_channels,
            n_samples: manifest.n_samples,
        });
    }
    let mut buf = Vec::with_capacity(expected_bytes as usize);
    file.read_to_end(&mut buf).map_err(|e| io_err(&samples_path, e))?;

    let mut samples = Array2::zeros((manifest.n_channels, manifest.n_samples));
    for (i, chunk) in buf.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        samples[[i / manifest.n_samples, i % manifest.n_samples]] = v as f64;
    }

    Recording::new(
        manifest.fs_hz,
        manifest.channels,
        samples,
        manifest.triggers,
        manifest.condition,
        manifest.day_id,
    )
}

/// Standard 4x4 grid metadata for `n` contacts in row-major order.
pub fn grid_channels(n: usize) -> Vec<ChannelMeta> {
    let cols = (n as f64).sqrt().ceil() as usize;
    (0..n)
        .map(|i| ChannelMeta {
            index: i,
            grid_row: i / cols,
            grid_col: i % cols,
            excluded: false,
        })
        .collect()
}
