//! End-to-end checks of the classic pipeline on generated data: spectral
//! calibration of the generator, topography recovery, artifact bookkeeping
//! and decoder sanity on one synthetic day.

use ecog_core::epoch::{make_class_trials, segment_trials, ClassScheme};
use ecog_core::eval::chronological_split;
use ecog_core::fbcsp::{fit_fbcsp, FbcspConfig};
use ecog_core::preprocess::{
    flag_bad_trials, preprocess_recording, FilterPath, PreprocessConfig,
};
use ecog_core::rlda::{self, RldaFeatureConfig, RldaModel};
use ecog_core::spectral::{
    average_aep, prewhiten, relative_spectral_power, stft_power, topographic_map, SpectralConfig,
};
use ecog_core::synth::{aep_spatial_gain, generate_day, SynthConfig};
use ecog_core::ClassTrial;

fn default_day(seed: u64, day: u32) -> ecog_core::Recording {
    let cfg = SynthConfig {
        seed,
        ..Default::default()
    };
    generate_day(&cfg, day).unwrap()
}

#[test]
fn relsp_shows_band_power_increases() {
    let rec = default_day(42, 1);
    let pre = preprocess_recording(&rec, &PreprocessConfig::default(), FilterPath::Overview)
        .unwrap();
    let trials = segment_trials(&pre.recording);
    let spec_cfg = SpectralConfig::default();

    let n_ch = trials[0].samples.nrows();
    let mut sum_stim = 0.0;
    let mut sum_post = 0.0;
    let mut n_stim = 0usize;
    let mut n_post = 0usize;
    for trial in &trials {
        let whitened = prewhiten(trial, &spec_cfg);
        let map = stft_power(&whitened, &spec_cfg).unwrap();
        let (rel, _) = relative_spectral_power(&map, &spec_cfg, 1.0).unwrap();
        let stim_band = rel.band_bins(5.0, 40.0);
        let post_band = rel.band_bins(50.0, 150.0);
        let stim_bins = rel.time_bins_within(1.0, 4.0);
        let post_bins = rel.time_bins_within(4.0, 5.0);
        for ch in 0..n_ch {
            for &k in &stim_band {
                for &t in &stim_bins {
                    sum_stim += rel.values[[ch, k, t]];
                    n_stim += 1;
                }
            }
            for &k in &post_band {
                for &t in &post_bins {
                    sum_post += rel.values[[ch, k, t]];
                    n_post += 1;
                }
            }
        }
    }
    let mean_stim = sum_stim / n_stim as f64;
    let mean_post = sum_post / n_post as f64;
    println!("mean relSP: stimulus 5-40 Hz = {mean_stim:.3}, post 50-150 Hz = {mean_post:.3}");
    assert!(mean_stim > 1.2, "stimulus-band relSP {mean_stim}");
    assert!(mean_post > 1.2, "post-band relSP {mean_post}");
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in order.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    };
    ecog_core::eval::pearson_correlation(&rank(a), &rank(b))
}

#[test]
fn topography_recovers_generator_gain_profile() {
    let rec = default_day(7, 1);
    let pre = preprocess_recording(&rec, &PreprocessConfig::default(), FilterPath::Overview)
        .unwrap();
    let trials = segment_trials(&pre.recording);
    let aep = average_aep(&trials).unwrap();
    let grid = topographic_map(&aep, &trials[0].channels, 900, 900.0, (4, 4));

    let mut measured = Vec::new();
    let mut injected = Vec::new();
    for r in 0..4 {
        for c in 0..4 {
            let v = grid[[r, c]];
            assert!(v.is_finite());
            measured.push(v);
            injected.push(aep_spatial_gain(r, c));
        }
    }
    let rho = spearman(&measured, &injected);
    println!("topography rank correlation = {rho:.3}");
    assert!(rho > 0.8, "rank correlation {rho}");
}

fn class_trials_for_day(seed: u64, scheme: &ClassScheme) -> Vec<ClassTrial> {
    let rec = default_day(seed, 1);
    let pre = preprocess_recording(&rec, &PreprocessConfig::default(), FilterPath::Decoding)
        .unwrap();
    let trials = segment_trials(&pre.recording);
    let class_trials = make_class_trials(&trials, scheme);
    flag_bad_trials(class_trials, 800.0)
}

#[test]
fn flagged_fraction_stays_low_at_default_artifact_rate() {
    let trials = class_trials_for_day(42, &ClassScheme::two_class());
    let flagged = trials.iter().filter(|t| t.bad).count();
    let fraction = flagged as f64 / trials.len() as f64;
    println!("flagged {flagged}/{} = {fraction:.4}", trials.len());
    assert!(fraction <= 0.10, "flagged fraction {fraction}");
}

#[test]
fn rlda_beats_chance_on_a_synthetic_day() {
    let trials = class_trials_for_day(42, &ClassScheme::two_class());
    let split = chronological_split(&trials, (0.64, 0.16, 0.20)).unwrap();
    let train: Vec<ClassTrial> = split.train.iter().map(|&i| trials[i].clone()).collect();
    let val: Vec<ClassTrial> = split.validation.iter().map(|&i| trials[i].clone()).collect();
    let test: Vec<ClassTrial> = split.test.iter().map(|&i| trials[i].clone()).collect();

    let cfg = RldaFeatureConfig::default();
    let (lambda, _) =
        rlda::select_lambda(&train, &val, 2, &rlda::DEFAULT_LAMBDA_GRID, &cfg).unwrap();
    let mut fit_set = train;
    fit_set.extend(val);
    let model = RldaModel::fit(&fit_set, 2, lambda, &cfg).unwrap();
    let da = rlda::accuracy(&model, &test).unwrap();
    println!("rlda 2-class day DA = {da:.3} (lambda = {lambda})");
    assert!(da > 0.70, "rlda DA {da}");
}

#[test]
fn fbcsp_beats_chance_on_a_synthetic_day() {
    let trials = class_trials_for_day(42, &ClassScheme::two_class());
    let split = chronological_split(&trials, (0.64, 0.16, 0.20)).unwrap();
    let train: Vec<ClassTrial> = split.train.iter().map(|&i| trials[i].clone()).collect();
    let val: Vec<ClassTrial> = split.validation.iter().map(|&i| trials[i].clone()).collect();
    let test: Vec<ClassTrial> = split.test.iter().map(|&i| trials[i].clone()).collect();

    let model = fit_fbcsp(&train, &val, 2, &FbcspConfig::default(), 900.0).unwrap();
    let mut correct = 0usize;
    for t in &test {
        if model.predict(t).unwrap().0 == t.label {
            correct += 1;
        }
    }
    let da = correct as f64 / test.len() as f64;
    println!("fbcsp 2-class day DA = {da:.3} (m = {}, lambda = {})", model.m, model.lambda);
    assert!(da > 0.70, "fbcsp DA {da}");
}

#[test]
fn three_class_decoding_favors_response_one() {
    let trials = class_trials_for_day(42, &ClassScheme::three_class());
    let split = chronological_split(&trials, (0.64, 0.16, 0.20)).unwrap();
    let train: Vec<ClassTrial> = split.train.iter().map(|&i| trials[i].clone()).collect();
    let val: Vec<ClassTrial> = split.validation.iter().map(|&i| trials[i].clone()).collect();
    let test: Vec<ClassTrial> = split.test.iter().map(|&i| trials[i].clone()).collect();

    let cfg = RldaFeatureConfig::default();
    let (lambda, _) =
        rlda::select_lambda(&train, &val, 3, &rlda::DEFAULT_LAMBDA_GRID, &cfg).unwrap();
    let mut fit_set = train;
    fit_set.extend(val);
    let model = RldaModel::fit(&fit_set, 3, lambda, &cfg).unwrap();

    let mut actual = Vec::new();
    let mut predicted = Vec::new();
    for t in &test {
        actual.push(t.label);
        predicted.push(model.predict(t).unwrap().0);
    }
    let rep = ecog_core::eval::confusion_matrix(&actual, &predicted, 3).unwrap();
    let da = rep.overall_da();
    println!(
        "rlda 3-class day DA = {da:.3}, per-class = {:.3}/{:.3}/{:.3}",
        rep.per_class_da(1),
        rep.per_class_da(2),
        rep.per_class_da(3)
    );
    assert!(da > 0.40, "3-class DA {da}");
    assert!(rep.per_class_da(1) >= rep.per_class_da(2));
    assert!(rep.per_class_da(1) >= rep.per_class_da(3));
}
