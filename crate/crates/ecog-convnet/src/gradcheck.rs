//! Finite-difference verification of the gradient engine.
//!
//! Central differences of the training-mode loss (dropout disabled) are
//! compared against the analytic gradients for every parameter and every
//! input element. The checked network contains every layer type: temporal
//! and spatial convolution, batch norm, ELU, max-pooling, dense and the
//! softmax cross-entropy head.

use ndarray::Array3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::layers::Float;
use crate::net::{ConvNet, ConvNetConfig, ConvNetError};

/// A small architecture exercising all four blocks on short inputs.
pub fn micro_config() -> ConvNetConfig {
    ConvNetConfig {
        n_channels: 2,
        n_samples: 64,
        n_classes: 2,
        n_filters: [2, 2, 3, 3],
        kernel_len: 4,
        pool_len: 2,
        pool_stride: 2,
        dropout_p: 0.0,
    }
}

fn loss_only<F: Float>(
    net: &mut ConvNet<F>,
    x: &Array3<F>,
    labels: &[usize],
) -> Result<f64, ConvNetError> {
    // dropout is disabled, so the rng is never consulted
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let logits = net.forward_train(x, &mut rng)?;
    let probs = crate::layers::softmax(&logits);
    let (loss, _) = crate::layers::cross_entropy(&probs, labels);
    Ok(loss)
}

/// Result of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over all parameter gradients.
    pub max_param_error: f64,
    /// Worst relative error over all input gradients.
    pub max_input_error: f64,
    pub n_params_checked: usize,
    pub n_inputs_checked: usize,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.max_param_error.max(self.max_input_error)
    }
}

/// Run the finite-difference check in f64 on a two-sample batch.
///
/// `step` is the central-difference step (1e-5 is appropriate in f64);
/// relative error uses the symmetric normalization
/// `|a - fd| / (|a| + |fd| + 1e-8)`.
pub fn run(seed: u64, step: f64) -> Result<GradCheckReport, ConvNetError> {
    let cfg = micro_config();
    let mut net = ConvNet::<f64>::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = Array3::from_shape_fn((2, 2, 64), |_| rng.random_range(-1.0..1.0));
    let labels = vec![0usize, 1usize];

    // Analytic pass.
    net.zero_grads();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(0);
    let logits = net.forward_train(&x, &mut dropout_rng)?;
    let (_, dx_analytic) = net.backward(&logits, &labels)?;
    let analytic: Vec<ndarray::Array2<f64>> = net
        .params()
        .into_iter()
        .map(|(_, grad)| grad.clone())
        .collect();

    let rel = |a: f64, fd: f64| (a - fd).abs() / (a.abs() + fd.abs() + 1e-8);

    let mut max_param_error = 0.0f64;
    let mut n_params_checked = 0usize;
    let n_params = analytic.len();
    for p in 0..n_params {
        let dim = analytic[p].raw_dim();
        for i in 0..dim[0] {
            for j in 0..dim[1] {
                {
                    let (value, _) = &mut net.params()[p];
                    value[[i, j]] += step;
                }
                let loss_plus = loss_only(&mut net, &x, &labels)?;
                {
                    let (value, _) = &mut net.params()[p];
                    value[[i, j]] -= 2.0 * step;
                }
                let loss_minus = loss_only(&mut net, &x, &labels)?;
                {
                    let (value, _) = &mut net.params()[p];
                    value[[i, j]] += step;
                }
                let fd = (loss_plus - loss_minus) / (2.0 * step);
                max_param_error = max_param_error.max(rel(analytic[p][[i, j]], fd));
                n_params_checked += 1;
            }
        }
    }

    let mut max_input_error = 0.0f64;
    let mut n_inputs_checked = 0usize;
    let mut x_pert = x.clone();
    for b in 0..2 {
        for c in 0..2 {
            for t in 0..64 {
                x_pert[[b, c, t]] += step;
                let loss_plus = loss_only(&mut net, &x_pert, &labels)?;
                x_pert[[b, c, t]] -= 2.0 * step;
                let loss_minus = loss_only(&mut net, &x_pert, &labels)?;
                x_pert[[b, c, t]] += step;
                let fd = (loss_plus - loss_minus) / (2.0 * step);
                max_input_error = max_input_error.max(rel(dx_analytic[[b, c, t]], fd));
                n_inputs_checked += 1;
            }
        }
    }

    Ok(GradCheckReport {
        max_param_error,
        max_input_error,
        n_params_checked,
        n_inputs_checked,
    })
}
