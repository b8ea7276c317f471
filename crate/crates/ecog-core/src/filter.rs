//! IIR Butterworth filters realized as cascaded biquad sections.
//!
//! Designs come from the analog Butterworth prototype mapped through the
//! bilinear transform with frequency pre-warping, so the −3.01 dB point
//! lands exactly on the requested cutoff. Filtering is causal, forward-only,
//! with zero initial state.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("cutoff frequency {cutoff_hz} Hz out of range (0, {nyquist_hz}) for fs {fs_hz} Hz")]
    CutoffOutOfRange {
        cutoff_hz: f64,
        nyquist_hz: f64,
        fs_hz: f64,
    },
    #[error("filter order must be >= 1, got {0}")]
    InvalidOrder(usize),
    #[error("filter designed for fs {design_fs_hz} Hz applied to data at fs {data_fs_hz} Hz")]
    SampleRateMismatch { design_fs_hz: f64, data_fs_hz: f64 },
}

/// Filter response kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterKind {
    Highpass,
    Lowpass,
}

/// One second-order section. Denominator is normalized to a0 = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadCoeffs {
    /// Stability of 1 + a1 z^-1 + a2 z^-2: poles strictly inside the unit
    /// circle iff |a2| < 1 and |a1| < 1 + a2.
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }
}

/// A cascade of biquad sections designed for one sampling rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiquadCascade {
    sections: Vec<BiquadCoeffs>,
    fs_hz: f64,
}

impl BiquadCascade {
    pub fn sections(&self) -> &[BiquadCoeffs] {
        &self.sections
    }

    pub fn fs_hz(&self) -> f64 {
        self.fs_hz
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(BiquadCoeffs::is_stable)
    }

    /// Complex frequency response H(e^{jω}) at `freq_hz`.
    pub fn response_at(&self, freq_hz: f64) -> (f64, f64) {
        let omega = 2.0 * PI * freq_hz / self.fs_hz;
        // z^-1 = e^{-jω}
        let (zr, zi) = (omega.cos(), -omega.sin());
        let (z2r, z2i) = (zr * zr - zi * zi, 2.0 * zr * zi);
        let mut hr = 1.0;
        let mut hi = 0.0;
        for s in &self.sections {
            let nr = s.b0 + s.b1 * zr + s.b2 * z2r;
            let ni = s.b1 * zi + s.b2 * z2i;
            let dr = 1.0 + s.a1 * zr + s.a2 * z2r;
            let di = s.a1 * zi + s.a2 * z2i;
            let dmag = dr * dr + di * di;
            let qr = (nr * dr + ni * di) / dmag;
            let qi = (ni * dr - nr * di) / dmag;
            let (tr, ti) = (hr * qr - hi * qi, hr * qi + hi * qr);
            hr = tr;
            hi = ti;
        }
        (hr, hi)
    }

    /// Magnitude response |H| at `freq_hz`.
    pub fn magnitude_at(&self, freq_hz: f64) -> f64 {
        let (re, im) = self.response_at(freq_hz);
        (re * re + im * im).sqrt()
    }

    /// Magnitude response in dB at `freq_hz`.
    pub fn magnitude_db_at(&self, freq_hz: f64) -> f64 {
        20.0 * self.magnitude_at(freq_hz).log10()
    }

    /// Filter one channel causally with zero initial state.
    pub fn filter_signal(&self, input: &[f64]) -> Vec<f64> {
        let mut out = input.to_vec();
        self.filter_in_place(&mut out);
        out
    }

    /// In-place variant of [`BiquadCascade::filter_signal`].
    pub fn filter_in_place(&self, data: &mut [f64]) {
        for s in &self.sections {
            // Direct form II transposed, per section.
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
}

/// Design a Butterworth high- or lowpass as a biquad cascade.
///
/// Odd orders contribute one first-order section (realized as a degenerate
/// biquad with b2 = a2 = 0).
pub fn design_butterworth(
    kind: FilterKind,
    cutoff_hz: f64,
    order: usize,
    fs_hz: f64,
) -> Result<BiquadCascade, FilterError> {
    if order == 0 {
        return Err(FilterError::InvalidOrder(order));
    }
    let nyquist = fs_hz / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(FilterError::CutoffOutOfRange {
            cutoff_hz,
            nyquist_hz: nyquist,
            fs_hz,
        });
    }

    // Pre-warped bilinear constant: s = k (1 - z^-1)/(1 + z^-1) maps the
    // digital cutoff onto the prototype's unit cutoff.
    let k = 1.0 / (PI * cutoff_hz / fs_hz).tan();
    let k2 = k * k;

    let mut sections = Vec::with_capacity(order.div_ceil(2));
    // Conjugate pole pairs of the normalized prototype: pole angles
    // θ = π(2i + order + 1)/(2·order); each pair gives s² + α s + 1 with
    // α = 2 cos(π(2i+1)/(2·order)) ... expressed via -2·Re(pole).
    let n_pairs = order / 2;
    for i in 0..n_pairs {
        let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
        let alpha = -2.0 * theta.cos();
        let d = k2 + alpha * k + 1.0;
        let (b0, b1, b2) = match kind {
            FilterKind::Lowpass => (1.0 / d, 2.0 / d, 1.0 / d),
            FilterKind::Highpass => (k2 / d, -2.0 * k2 / d, k2 / d),
        };
        sections.push(BiquadCoeffs {
            b0,
            b1,
            b2,
            a1: 2.0 * (1.0 - k2) / d,
            a2: (k2 - alpha * k + 1.0) / d,
        });
    }
    if order % 2 == 1 {
        // Real pole at s = -1.
        let d = k + 1.0;
        let (b0, b1) = match kind {
            FilterKind::Lowpass => (1.0 / d, 1.0 / d),
            FilterKind::Highpass => (k / d, -k / d),
        };
        sections.push(BiquadCoeffs {
            b0,
            b1,
            b2: 0.0,
            a1: (1.0 - k) / d,
            a2: 0.0,
        });
    }

    Ok(BiquadCascade { sections, fs_hz })
}

/// Bandpass as a highpass/lowpass cascade, `order` applying to each edge.
pub fn design_bandpass(
    low_hz: f64,
    high_hz: f64,
    order: usize,
    fs_hz: f64,
) -> Result<BiquadCascade, FilterError> {
    let hp = design_butterworth(FilterKind::Highpass, low_hz, order, fs_hz)?;
    let lp = design_butterworth(FilterKind::Lowpass, high_hz, order, fs_hz)?;
    let mut sections = hp.sections;
    sections.extend(lp.sections);
    Ok(BiquadCascade { sections, fs_hz })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn highpass_cutoff_is_minus_3db() {
        let f = design_butterworth(FilterKind::Highpass, 0.5, 2, 900.0).unwrap();
        assert_abs_diff_eq!(f.magnitude_db_at(0.5), -3.0103, epsilon = 0.1);
        assert!(f.is_stable());
    }

    #[test]
    fn lowpass_cutoff_is_minus_3db() {
        let f = design_butterworth(FilterKind::Lowpass, 120.0, 2, 900.0).unwrap();
        assert_abs_diff_eq!(f.magnitude_db_at(120.0), -3.0103, epsilon = 0.1);
        assert!(f.is_stable());
    }

    #[test]
    fn lowpass_passband_is_flat() {
        let f = design_butterworth(FilterKind::Lowpass, 120.0, 2, 900.0).unwrap();
        assert!(f.magnitude_db_at(10.0).abs() < 0.05);
    }

    #[test]
    fn matches_reference_coefficients() {
        // Cross-checked against an independent filter-design implementation.
        let f = design_butterworth(FilterKind::Highpass, 0.5, 2, 900.0).unwrap();
        let s = f.sections()[0];
        assert_abs_diff_eq!(s.b0, 0.9975347753658895, epsilon = 1e-12);
        assert_abs_diff_eq!(s.b1, -1.995069550731779, epsilon = 1e-12);
        assert_abs_diff_eq!(s.a1, -1.9950634733900485, epsilon = 1e-12);
        assert_abs_diff_eq!(s.a2, 0.9950756280735088, epsilon = 1e-12);

        let f = design_butterworth(FilterKind::Lowpass, 120.0, 2, 900.0).unwrap();
        let s = f.sections()[0];
        assert_abs_diff_eq!(s.b0, 0.108447438890226, epsilon = 1e-12);
        assert_abs_diff_eq!(s.a1, -0.8772706323073945, epsilon = 1e-12);
        assert_abs_diff_eq!(s.a2, 0.31106038786829865, epsilon = 1e-12);
    }

    #[test]
    fn designed_cascades_are_stable() {
        for order in 1..=8 {
            for &(kind, fc) in &[
                (FilterKind::Highpass, 0.5),
                (FilterKind::Highpass, 4.0),
                (FilterKind::Lowpass, 120.0),
                (FilterKind::Lowpass, 440.0),
            ] {
                let f = design_butterworth(kind, fc, order, 900.0).unwrap();
                assert!(f.is_stable(), "unstable: {kind:?} {fc} order {order}");
            }
        }
    }

    #[test]
    fn step_response_of_highpass_decays() {
        let f = design_butterworth(FilterKind::Highpass, 0.5, 2, 900.0).unwrap();
        let x = vec![100.0; 10 * 900];
        let y = f.filter_signal(&x);
        assert!(y[y.len() - 1].abs() < 1.0, "residual {}", y[y.len() - 1]);
    }

    #[test]
    fn sine_passes_highpass_nearly_untouched() {
        // 100 Hz through the 0.5 Hz highpass; amplitude from RMS over whole
        // periods (peak sampling at 9 samples/cycle undershoots).
        let f = design_butterworth(FilterKind::Highpass, 0.5, 2, 900.0).unwrap();
        let fs = 900.0;
        let n = 20 * 900;
        let x: Vec<f64> = (0..n)
            .map(|t| (2.0 * PI * 100.0 * t as f64 / fs).sin())
            .collect();
        let y = f.filter_signal(&x);
        // last 2 s = 200 whole periods
        let tail = &y[n - 1800..];
        let rms = (tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64).sqrt();
        let amplitude = rms * 2f64.sqrt();
        assert!((amplitude - 1.0).abs() < 0.005, "amplitude {amplitude}");
    }

    #[test]
    fn zero_in_zero_out() {
        let f = design_butterworth(FilterKind::Lowpass, 120.0, 2, 900.0).unwrap();
        let y = f.filter_signal(&vec![0.0; 500]);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn filtering_is_linear() {
        use rand::prelude::*;
        let f = design_bandpass(8.0, 13.0, 2, 900.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b) = (2.5, -0.75);
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let fm = f.filter_signal(&mixed);
        let fx = f.filter_signal(&x);
        let fy = f.filter_signal(&y);
        for i in 0..2000 {
            let expect = a * fx[i] + b * fy[i];
            let scale = expect.abs().max(1.0);
            assert!((fm[i] - expect).abs() / scale < 1e-9);
        }
    }

    #[test]
    fn cutoff_out_of_range_rejected() {
        assert!(design_butterworth(FilterKind::Lowpass, 0.0, 2, 900.0).is_err());
        assert!(design_butterworth(FilterKind::Lowpass, 450.0, 2, 900.0).is_err());
        assert!(design_butterworth(FilterKind::Highpass, -1.0, 2, 900.0).is_err());
    }
}
