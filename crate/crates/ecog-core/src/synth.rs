//! Deterministic generator of auditory-evoked synthetic μECoG recordings.
//!
//! Each day is a pure function of (config, day_id): background 1/f-shaped
//! noise carries, per stimulus trial, (i) a damped-oscillation evoked
//! transient in the 20–200 ms window after onset with a smooth spatial gain
//! profile over the 4x4 grid, (ii) a 5–40 Hz band-limited amplitude increase
//! during the 3 s stimulus and (iii) a 50–150 Hz increase in the 1 s after
//! stimulus offset. Anesthesia days attenuate all evoked components.
//! Optional artifact bursts exceed the 800 μV rejection threshold.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, Condition, DatasetError, Recording};
use crate::filter::{self, BiquadCoeffs};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Generator configuration. Defaults mirror the experimental layout the
/// pipeline expects: 15 days of 261 five-second trials at 900 Hz on a
/// 16-contact grid, with the last two days recorded under anesthesia.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_days: u32,
    pub trials_per_day: usize,
    pub anesthesia_days: BTreeSet<u32>,
    pub seed: u64,
    /// Evoked-to-background amplitude ratio; scales all evoked components.
    pub snr: f64,
    /// Probability per trial of an >800 μV artifact burst.
    pub artifact_rate: f64,
    pub fs_hz: usize,
    pub n_channels: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_days: 15,
            trials_per_day: 261,
            anesthesia_days: BTreeSet::from([14, 15]),
            seed: 0,
            snr: 1.0,
            artifact_rate: 0.02,
            fs_hz: 900,
            n_channels: 16,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_days == 0 {
            return Err(SynthError::InvalidConfig("n_days must be >= 1".into()));
        }
        if self.trials_per_day == 0 {
            return Err(SynthError::InvalidConfig(
                "trials_per_day must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.artifact_rate) {
            return Err(SynthError::InvalidConfig(format!(
                "artifact_rate must be in [0, 1], got {}",
                self.artifact_rate
            )));
        }
        if !(self.snr >= 0.0) {
            return Err(SynthError::InvalidConfig(format!(
                "snr must be >= 0, got {}",
                self.snr
            )));
        }
        if self.fs_hz == 0 {
            return Err(SynthError::InvalidConfig("fs_hz must be > 0".into()));
        }
        if self.n_channels < 2 {
            return Err(SynthError::InvalidConfig(
                "n_channels must be >= 2".into(),
            ));
        }
        Ok(())
    }
}

// --- Signal-model constants (calibration targets, see tests) ---

/// Background noise RMS per channel, μV.
const BACKGROUND_RMS_UV: f64 = 50.0;
/// Evoked-transient base amplitude, μV (scaled by gain profile and snr).
const AEP_AMPLITUDE_UV: f64 = 150.0;
/// Onset latency of the evoked transient, s.
const AEP_LATENCY_S: f64 = 0.020;
/// Decay constants of the two damped oscillations, s. Chosen so >95% of the
/// transient energy falls inside 20–200 ms post onset.
const AEP_DECAY_SLOW_S: f64 = 0.050;
const AEP_DECAY_FAST_S: f64 = 0.030;
const AEP_FREQ_SLOW_HZ: f64 = 8.0;
const AEP_FREQ_FAST_HZ: f64 = 25.0;

/// Phase-locked tones of the sustained stimulus response. All integer Hz so
/// every post-onset second carries the identical deterministic waveform.
const STIM_TONES_HZ: [f64; 5] = [6.0, 9.0, 14.0, 21.0, 30.0];
/// The sustained response starts after the evoked transient so the 20–200 ms
/// topography window sees the transient alone.
const STIM_DELAY_S: f64 = 0.25;
/// Deterministic stimulus-component amplitude (per-tone scale = value/sqrt(n)).
const STIM_TONE_AMPLITUDE_UV: f64 = 45.0;
/// RMS of the stochastic 5–40 Hz component during stimulation, μV.
const STIM_NOISE_RMS_UV: f64 = 22.0;

/// Tones of the post-offset high-band response.
const POST_TONES_HZ: [f64; 4] = [55.0, 70.0, 90.0, 110.0];
const POST_TONE_AMPLITUDE_UV: f64 = 35.0;
/// RMS of the stochastic 50–150 Hz component after stimulus offset, μV.
const POST_NOISE_RMS_UV: f64 = 22.0;

/// Attenuation applied to all evoked components on anesthesia days.
const ANESTHESIA_ATTENUATION: f64 = 0.3;

/// On/off ramp of the sustained components, s.
const RAMP_S: f64 = 0.050;
/// Artifact burst: raised-cosine bump, peak amplitude and duration.
const ARTIFACT_AMPLITUDE_UV: f64 = 1200.0;
const ARTIFACT_LEN_S: f64 = 0.045;

/// Smooth spatial gain of the evoked transient over the electrode grid.
/// Exposed so topographic-map recovery can be checked against it.
pub fn aep_spatial_gain(grid_row: usize, grid_col: usize) -> f64 {
    let dr = grid_row as f64 - 1.3;
    let dc = grid_col as f64 - 2.2;
    (-(dr * dr + dc * dc) / (2.0 * 1.3 * 1.3)).exp()
}

/// Milder spatial profile of the sustained band-limited components.
fn band_spatial_gain(grid_row: usize, grid_col: usize) -> f64 {
    let dr = grid_row as f64 - 2.5;
    let dc = grid_col as f64 - 1.0;
    0.6 + 0.4 * (-(dr * dr + dc * dc) / (2.0 * 1.5 * 1.5)).exp()
}

/// First-order pole/zero cascade approximating a 1/f power spectrum
/// (alternating poles and zeros, sqrt(10) apart, ~-10 dB/decade).
fn pink_cascade(fs: f64) -> Vec<BiquadCoeffs> {
    const POLES_HZ: [f64; 3] = [0.4, 4.0, 40.0];
    POLES_HZ
        .iter()
        .map(|&fp| {
            let fz = fp * 10f64.sqrt();
            BiquadCoeffs {
                b0: 1.0,
                b1: -(-2.0 * std::f64::consts::PI * fz / fs).exp(),
                b2: 0.0,
                a1: -(-2.0 * std::f64::consts::PI * fp / fs).exp(),
                a2: 0.0,
            }
        })
        .collect()
}

fn apply_sections(sections: &[BiquadCoeffs], data: &mut [f64]) {
    for s in sections {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for x in data.iter_mut() {
            let y = s.b0 * *x + s1;
            s1 = s.b1 * *x - s.a1 * y + s2;
            s2 = s.b2 * *x - s.a2 * y;
            *x = y;
        }
    }
}

fn normalize_rms(data: &mut [f64], target: f64) {
    let ms = data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64;
    if ms > 0.0 {
        let scale = target / ms.sqrt();
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Raised-cosine on/off mask over [start, end) seconds, zero outside.
fn window_mask(tau: f64, start: f64, end: f64) -> f64 {
    if tau < start || tau >= end {
        return 0.0;
    }
    let up = (tau - start) / RAMP_S;
    let down = (end - tau) / RAMP_S;
    let mut g = 1.0;
    if up < 1.0 {
        g *= 0.5 * (1.0 - (std::f64::consts::PI * up).cos());
    }
    if down < 1.0 {
        g *= 0.5 * (1.0 - (std::f64::consts::PI * down).cos());
    }
    g
}

fn evoked_transient(tau: f64) -> f64 {
    if tau < AEP_LATENCY_S {
        return 0.0;
    }
    let t = tau - AEP_LATENCY_S;
    let slow = (2.0 * std::f64::consts::PI * AEP_FREQ_SLOW_HZ * t).sin() * (-t / AEP_DECAY_SLOW_S).exp();
    let fast = (2.0 * std::f64::consts::PI * AEP_FREQ_FAST_HZ * t).sin() * (-t / AEP_DECAY_FAST_S).exp();
    slow + 0.8 * fast
}

/// Generate one experiment day. Pure function of (config, day_id).
pub fn generate_day(config: &SynthConfig, day_id: u32) -> Result<Recording, SynthError> {
    config.validate()?;
    if day_id == 0 || day_id > config.n_days {
        return Err(SynthError::InvalidConfig(format!(
            "day_id {day_id} outside 1..={}",
            config.n_days
        )));
    }

    let fs = config.fs_hz;
    let fsf = fs as f64;
    let n_ch = config.n_channels;
    let n_trials = config.trials_per_day;
    let n = 5 * fs * n_trials;
    let triggers: Vec<usize> = (0..n_trials).map(|i| fs + 5 * fs * i).collect();
    let anesthesia = config.anesthesia_days.contains(&day_id);
    let condition = if anesthesia {
        Condition::Anesthesia
    } else {
        Condition::Awake
    };
    let evoked_scale = config.snr * if anesthesia { ANESTHESIA_ATTENUATION } else { 1.0 };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(day_id as u64);

    let channels = dataset::grid_channels(n_ch);

    // Per-channel tone phases, fixed for the day. Independent phases keep the
    // sustained components from cancelling under common-average referencing.
    let stim_phases: Vec<Vec<f64>> = (0..n_ch)
        .map(|_| {
            (0..STIM_TONES_HZ.len())
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect()
        })
        .collect();
    let post_phases: Vec<Vec<f64>> = (0..n_ch)
        .map(|_| {
            (0..POST_TONES_HZ.len())
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect()
        })
        .collect();

    let pink = pink_cascade(fsf);
    let stim_band = filter::design_bandpass(5.0, 40.0, 2, fsf).expect("valid band");
    let post_band = filter::design_bandpass(50.0, 150.0, 2, fsf).expect("valid band");
    let warmup = 5 * fs;

    let mut samples = Array2::<f64>::zeros((n_ch, n));
    for ch in 0..n_ch {
        // 1/f background, normalized to the target RMS over the day.
        let mut bg: Vec<f64> = (0..n + warmup)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        apply_sections(&pink, &mut bg);
        bg.drain(..warmup);
        normalize_rms(&mut bg, BACKGROUND_RMS_UV);

        // Continuous band-limited noise carriers, unit RMS; windowed per trial.
        let mut stim_noise: Vec<f64> = (0..n + warmup)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        stim_band.filter_in_place(&mut stim_noise);
        stim_noise.drain(..warmup);
        normalize_rms(&mut stim_noise, 1.0);

        let mut post_noise: Vec<f64> = (0..n + warmup)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        post_band.filter_in_place(&mut post_noise);
        post_noise.drain(..warmup);
        normalize_rms(&mut post_noise, 1.0);

        let row = samples.row_mut(ch);
        let row = row.into_slice().expect("contiguous row");
        row.copy_from_slice(&bg);

        let meta = &channels[ch];
        let g_aep = aep_spatial_gain(meta.grid_row, meta.grid_col) * evoked_scale;
        let g_band = band_spatial_gain(meta.grid_row, meta.grid_col) * evoked_scale;
        let tone_scale = (STIM_TONES_HZ.len() as f64).sqrt().recip();
        let post_tone_scale = (POST_TONES_HZ.len() as f64).sqrt().recip();

        for &t0 in &triggers {
            // Evoked transient: 20–200 ms after onset.
            let transient_len = (0.35 * fsf) as usize;
            for i in 0..transient_len {
                let tau = i as f64 / fsf;
                row[t0 + i] += AEP_AMPLITUDE_UV * g_aep * evoked_transient(tau);
            }
            // Sustained 5–40 Hz component across the 3 s stimulus.
            for i in 0..4 * fs {
                let tau = i as f64 / fsf;
                let m_stim = window_mask(tau, STIM_DELAY_S, 3.0);
                let m_post = window_mask(tau, 3.0, 4.0);
                if m_stim > 0.0 {
                    let mut det = 0.0;
                    for (j, &f) in STIM_TONES_HZ.iter().enumerate() {
                        det += (std::f64::consts::TAU * f * tau + stim_phases[ch][j]).sin();
                    }
                    row[t0 + i] += m_stim
                        * g_band
                        * (STIM_TONE_AMPLITUDE_UV * tone_scale * det
                            + STIM_NOISE_RMS_UV * stim_noise[t0 + i]);
                }
                if m_post > 0.0 {
                    let mut det = 0.0;
                    for (j, &f) in POST_TONES_HZ.iter().enumerate() {
                        det += (std::f64::consts::TAU * f * tau + post_phases[ch][j]).sin();
                    }
                    row[t0 + i] += m_post
                        * g_band
                        * (POST_TONE_AMPLITUDE_UV * post_tone_scale * det
                            + POST_NOISE_RMS_UV * post_noise[t0 + i]);
                }
            }
        }
    }

    // Artifacts are drawn last so the signal streams do not depend on the rate.
    let burst_len = (ARTIFACT_LEN_S * fsf) as usize;
    for &t0 in &triggers {
        let u: f64 = rng.random();
        if u < config.artifact_rate {
            let ch = rng.random_range(0..n_ch);
            let start = t0 - fs + rng.random_range(0..5 * fs - burst_len);
            for i in 0..burst_len {
                let phase = i as f64 / burst_len as f64;
                let env = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * phase).cos());
                samples[[ch, start + i]] += ARTIFACT_AMPLITUDE_UV * env;
            }
        }
    }

    // Quantize to f32 so the on-disk format round-trips bit-exactly.
    samples.mapv_inplace(|v| v as f32 as f64);

    Ok(Recording::new(
        fsf,
        channels,
        samples,
        triggers,
        condition,
        day_id,
    )?)
}

/// Generate all days of a dataset under `out`, one `dayNN/` directory each.
pub fn generate_dataset(config: &SynthConfig, out: &std::path::Path) -> Result<(), SynthError> {
    config.validate()?;
    for day_id in 1..=config.n_days {
        let rec = generate_day(config, day_id)?;
        dataset::write_dataset(&rec, &out.join(format!("day{day_id:02}")))?;
    }
    Ok(())
}
