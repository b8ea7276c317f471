//! Manual throughput probe for the full-size architecture
//! (run with `cargo test -p ecog-convnet --test speed -- --ignored --nocapture`).

use ecog_core::dataset::ClassTrial;
use ecog_convnet::{fit_convnet, TrainConfig};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn trial(label: u8, seed: u64) -> ClassTrial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = Array2::from_shape_fn((16, 900), |(_, t)| {
        let base: f64 = rng.random_range(-50.0..50.0);
        if label == 2 {
            base + 30.0 * (t as f64 * 0.06).sin()
        } else {
            base
        }
    });
    ClassTrial {
        samples,
        label,
        epoch_index: 1,
        source_trial: 0,
        bad: false,
    }
}

#[test]
#[ignore]
fn epoch_throughput() {
    let train: Vec<ClassTrial> = (0..835).map(|i| trial((i % 2) as u8 + 1, i as u64)).collect();
    let val: Vec<ClassTrial> = (0..209)
        .map(|i| trial((i % 2) as u8 + 1, 10_000 + i as u64))
        .collect();
    let cfg = TrainConfig {
        max_epochs: 3,
        patience: 3,
        seed: 1,
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let model = fit_convnet(&train, &val, 2, None, &cfg).unwrap();
    let elapsed = start.elapsed();
    let n_epochs = model.log.len();
    println!(
        "{n_epochs} epochs in {:.2}s -> {:.2}s/epoch",
        elapsed.as_secs_f64(),
        elapsed.as_secs_f64() / n_epochs as f64
    );
}
