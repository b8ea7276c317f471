//! The four-block Conv-Pool architecture.
//!
//! Block 1 splits the input convolution into a temporal convolution per
//! channel followed by a spatial convolution across all channels, then batch
//! norm, ELU and max-pooling. Blocks 2–4 are dropout + temporal convolution
//! + batch norm + ELU + max-pooling with growing filter counts. A dense
//! softmax head closes the network. For the standard 16x900 input the length
//! chain is 891→297→288→96→87→29→20→6, i.e. 1200 dense inputs.

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::{
    cross_entropy, fd, featmap_to_rows, ff, rows_to_featmap, softmax, BatchNorm, Dense, Dropout,
    Elu, Float, InputConvBlock, MaxPool, TemporalConv,
};

#[derive(Debug, Error)]
pub enum ConvNetError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("input shape {got:?} does not match the architecture's ({expected:?})")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("validation set is empty")]
    EmptyValidationSet,
    #[error("label {label} outside 1..={n_classes}")]
    LabelOutOfRange { label: u8, n_classes: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvNetConfig {
    pub n_channels: usize,
    pub n_samples: usize,
    pub n_classes: usize,
    /// Filters of the four Conv-Pool blocks.
    pub n_filters: [usize; 4],
    pub kernel_len: usize,
    pub pool_len: usize,
    pub pool_stride: usize,
    /// Dropout probability on the input of each convolution after block 1.
    pub dropout_p: f64,
}

impl ConvNetConfig {
    pub fn standard(n_channels: usize, n_samples: usize, n_classes: usize) -> Self {
        ConvNetConfig {
            n_channels,
            n_samples,
            n_classes,
            n_filters: [25, 50, 100, 200],
            kernel_len: 10,
            pool_len: 3,
            pool_stride: 3,
            dropout_p: 0.5,
        }
    }
}

/// Feature/length pairs after every stage of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeChain {
    /// (features, length) after each block's convolution and pooling:
    /// `[(f1, conv1), (f1, pool1), (f2, conv2), (f2, pool2), ...]`.
    pub stages: Vec<(usize, usize)>,
    pub dense_inputs: usize,
}

impl ConvNetConfig {
    pub fn shape_chain(&self) -> Result<ShapeChain, ConvNetError> {
        if self.n_classes < 2 {
            return Err(ConvNetError::InvalidArchitecture(
                "need at least 2 classes".into(),
            ));
        }
        if self.kernel_len < 1 || self.pool_len < 1 || self.pool_stride < 1 {
            return Err(ConvNetError::InvalidArchitecture(
                "kernel and pool sizes must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(ConvNetError::InvalidArchitecture(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_p
            )));
        }
        let mut stages = Vec::with_capacity(8);
        let mut len = self.n_samples;
        for (i, &f) in self.n_filters.iter().enumerate() {
            if len < self.kernel_len {
                return Err(ConvNetError::InvalidArchitecture(format!(
                    "block {} input length {len} shorter than kernel {}",
                    i + 1,
                    self.kernel_len
                )));
            }
            len = len - self.kernel_len + 1;
            stages.push((f, len));
            if len < self.pool_len {
                return Err(ConvNetError::InvalidArchitecture(format!(
                    "block {} pooling input length {len} shorter than pool {}",
                    i + 1,
                    self.pool_len
                )));
            }
            len = (len - self.pool_len) / self.pool_stride + 1;
            stages.push((f, len));
        }
        Ok(ShapeChain {
            dense_inputs: self.n_filters[3] * len,
            stages,
        })
    }
}

#[derive(Debug, Clone)]
struct DeepBlock<F> {
    dropout: Dropout<F>,
    conv: TemporalConv<F>,
    bn: BatchNorm<F>,
    elu: Elu<F>,
    pool: MaxPool<F>,
}

/// The assembled network.
#[derive(Debug, Clone)]
pub struct ConvNet<F> {
    pub cfg: ConvNetConfig,
    input_conv: InputConvBlock<F>,
    bn1: BatchNorm<F>,
    elu1: Elu<F>,
    pool1: MaxPool<F>,
    blocks: Vec<DeepBlock<F>>,
    dense: Dense<F>,
}

impl<F: Float> ConvNet<F> {
    /// Build with Glorot-uniform weights drawn from `seed`.
    pub fn new(cfg: ConvNetConfig, seed: u64) -> Result<Self, ConvNetError> {
        let chain = cfg.shape_chain()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let [f1, f2, f3, f4] = cfg.n_filters;
        let input_conv = InputConvBlock::new(&mut rng, f1, f1, cfg.n_channels, cfg.kernel_len);
        let bn1 = BatchNorm::new(f1);
        let pool1 = MaxPool::new(cfg.pool_len, cfg.pool_stride);
        let mut blocks = Vec::new();
        for (f_out, f_in) in [(f2, f1), (f3, f2), (f4, f3)] {
            blocks.push(DeepBlock {
                dropout: Dropout::new(cfg.dropout_p),
                conv: TemporalConv::new(&mut rng, f_out, f_in, cfg.kernel_len),
                bn: BatchNorm::new(f_out),
                elu: Elu::new(),
                pool: MaxPool::new(cfg.pool_len, cfg.pool_stride),
            });
        }
        let dense = Dense::new(&mut rng, cfg.n_classes, chain.dense_inputs);
        Ok(ConvNet {
            cfg,
            input_conv,
            bn1,
            elu1: Elu::new(),
            pool1,
            blocks,
            dense,
        })
    }

    fn check_input(&self, x: &Array3<F>) -> Result<(), ConvNetError> {
        let (_, c, t) = x.dim();
        if (c, t) != (self.cfg.n_channels, self.cfg.n_samples) {
            return Err(ConvNetError::ShapeMismatch {
                expected: (self.cfg.n_channels, self.cfg.n_samples),
                got: (c, t),
            });
        }
        Ok(())
    }

    /// Training-mode forward pass; caches activations for `backward`.
    /// Returns the logits.
    pub fn forward_train(
        &mut self,
        x: &Array3<F>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<F>, ConvNetError> {
        self.check_input(x)?;
        let batch = x.dim().0;
        let a = self.input_conv.forward_train(x);
        let a = self.bn1.forward_train(&a);
        let a = self.elu1.forward_train(&a);
        let mut a = self.pool1.forward_train(&a, batch);
        for block in &mut self.blocks {
            let d = block.dropout.forward_train(&a, rng);
            let c = block.conv.forward_train(&d, batch);
            let b = block.bn.forward_train(&c);
            let e = block.elu.forward_train(&b);
            a = block.pool.forward_train(&e, batch);
        }
        let flat = featmap_to_rows(&a, batch);
        Ok(self.dense.forward_train(flat))
    }

    /// Eval-mode forward: running batch-norm statistics, no dropout, no
    /// caching. Returns class probabilities.
    pub fn forward_eval(&self, x: &Array3<F>) -> Result<Array2<F>, ConvNetError> {
        self.check_input(x)?;
        let batch = x.dim().0;
        let a = self.input_conv.forward_eval(x);
        let a = self.bn1.forward_eval(&a);
        let a = self.elu1.forward_eval(&a);
        let mut a = self.pool1.forward_eval(&a, batch);
        for block in &self.blocks {
            let d = block.dropout.forward_eval(&a);
            let c = block.conv.forward_eval(&d, batch);
            let b = block.bn.forward_eval(&c);
            let e = block.elu.forward_eval(&b);
            a = block.pool.forward_eval(&e, batch);
        }
        let flat = featmap_to_rows(&a, batch);
        Ok(softmax(&self.dense.forward_eval(&flat)))
    }

    /// Loss and gradient accumulation for one cached forward pass.
    /// `labels` are 0-based class indices. Returns (mean loss, input grad).
    pub fn backward(
        &mut self,
        logits: &Array2<F>,
        labels: &[usize],
    ) -> Result<(f64, Array3<F>), ConvNetError> {
        let probs = softmax(logits);
        let (loss, dlogits) = cross_entropy(&probs, labels);
        let dflat = self.dense.backward(&dlogits);
        let chain = self.cfg.shape_chain().expect("validated at construction");
        let (f, _) = *chain.stages.last().expect("stages");
        let mut da = rows_to_featmap(&dflat, f);
        for block in self.blocks.iter_mut().rev() {
            let de = block.pool.backward(&da);
            let db = block.elu.backward(&de);
            let dc = block.bn.backward(&db);
            let dd = block.conv.backward(&dc);
            da = block.dropout.backward(&dd);
        }
        let da = self.pool1.backward(&da);
        let da = self.elu1.backward(&da);
        let da = self.bn1.backward(&da);
        let dx = self.input_conv.backward(&da);
        Ok((loss, dx))
    }

    /// All trainable parameters in a fixed order, paired with their
    /// gradient buffers.
    pub fn params(&mut self) -> Vec<(&mut Array2<F>, &mut Array2<F>)> {
        let mut out: Vec<(&mut Array2<F>, &mut Array2<F>)> = vec![
            (&mut self.input_conv.w_time.value, &mut self.input_conv.w_time.grad),
            (&mut self.input_conv.w_spat.value, &mut self.input_conv.w_spat.grad),
            (&mut self.bn1.gamma.value, &mut self.bn1.gamma.grad),
            (&mut self.bn1.beta.value, &mut self.bn1.beta.grad),
        ];
        for block in &mut self.blocks {
            out.push((&mut block.conv.w.value, &mut block.conv.w.grad));
            out.push((&mut block.bn.gamma.value, &mut block.bn.gamma.grad));
            out.push((&mut block.bn.beta.value, &mut block.bn.beta.grad));
        }
        out.push((&mut self.dense.w.value, &mut self.dense.w.grad));
        out.push((&mut self.dense.bias.value, &mut self.dense.bias.grad));
        out
    }

    pub fn zero_grads(&mut self) {
        for (_, grad) in self.params() {
            grad.fill(F::zero());
        }
    }

    /// Snapshot of all parameter values (for early-stopping restores).
    pub fn snapshot(&mut self) -> Vec<Array2<F>> {
        self.params().into_iter().map(|(v, _)| v.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Array2<F>]) {
        for ((value, _), saved) in self.params().into_iter().zip(snapshot) {
            value.assign(saved);
        }
    }

    /// Named parameter and state arrays for checkpointing: every trainable
    /// tensor plus the batch-norm running statistics.
    pub fn state_arrays(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mat = |name: &str, a: &Array2<F>| {
            (
                name.to_string(),
                vec![a.nrows(), a.ncols()],
                a.iter().map(|&v| fd(v)).collect::<Vec<f64>>(),
            )
        };
        let vec1 = |name: &str, a: &ndarray::Array1<F>| {
            (
                name.to_string(),
                vec![a.len()],
                a.iter().map(|&v| fd(v)).collect::<Vec<f64>>(),
            )
        };
        let mut out = vec![
            mat("conv_time.w", &self.input_conv.w_time.value),
            mat("conv_spat.w", &self.input_conv.w_spat.value),
            mat("bn1.gamma", &self.bn1.gamma.value),
            mat("bn1.beta", &self.bn1.beta.value),
            vec1("bn1.running_mean", &self.bn1.running_mean),
            vec1("bn1.running_var", &self.bn1.running_var),
        ];
        for (i, block) in self.blocks.iter().enumerate() {
            let n = i + 2;
            out.push(mat(&format!("block{n}.conv.w"), &block.conv.w.value));
            out.push(mat(&format!("block{n}.bn.gamma"), &block.bn.gamma.value));
            out.push(mat(&format!("block{n}.bn.beta"), &block.bn.beta.value));
            out.push(vec1(
                &format!("block{n}.bn.running_mean"),
                &block.bn.running_mean,
            ));
            out.push(vec1(
                &format!("block{n}.bn.running_var"),
                &block.bn.running_var,
            ));
        }
        out.push(mat("dense.w", &self.dense.w.value));
        out.push(mat("dense.bias", &self.dense.bias.value));
        out
    }

    /// Load state arrays produced by [`ConvNet::state_arrays`].
    pub fn load_state_arrays(
        &mut self,
        arrays: &[(String, Vec<usize>, Vec<f64>)],
    ) -> Result<(), ConvNetError> {
        use std::collections::HashMap;
        let map: HashMap<&str, &(String, Vec<usize>, Vec<f64>)> =
            arrays.iter().map(|e| (e.0.as_str(), e)).collect();
        let get = |name: &str| {
            map.get(name)
                .copied()
                .ok_or_else(|| ConvNetError::MalformedCheckpoint(format!("missing array {name}")))
        };
        fn fill2<F: Float>(
            target: &mut Array2<F>,
            entry: &(String, Vec<usize>, Vec<f64>),
        ) -> Result<(), ConvNetError> {
            if entry.1 != vec![target.nrows(), target.ncols()] {
                return Err(ConvNetError::MalformedCheckpoint(format!(
                    "array {} has shape {:?}, expected {:?}",
                    entry.0,
                    entry.1,
                    [target.nrows(), target.ncols()]
                )));
            }
            for (t, &v) in target.iter_mut().zip(&entry.2) {
                *t = ff(v);
            }
            Ok(())
        }
        fn fill1<F: Float>(
            target: &mut ndarray::Array1<F>,
            entry: &(String, Vec<usize>, Vec<f64>),
        ) -> Result<(), ConvNetError> {
            if entry.1 != vec![target.len()] {
                return Err(ConvNetError::MalformedCheckpoint(format!(
                    "array {} has shape {:?}, expected [{}]",
                    entry.0,
                    entry.1,
                    target.len()
                )));
            }
            for (t, &v) in target.iter_mut().zip(&entry.2) {
                *t = ff(v);
            }
            Ok(())
        }
        fill2(&mut self.input_conv.w_time.value, get("conv_time.w")?)?;
        fill2(&mut self.input_conv.w_spat.value, get("conv_spat.w")?)?;
        fill2(&mut self.bn1.gamma.value, get("bn1.gamma")?)?;
        fill2(&mut self.bn1.beta.value, get("bn1.beta")?)?;
        fill1(&mut self.bn1.running_mean, get("bn1.running_mean")?)?;
        fill1(&mut self.bn1.running_var, get("bn1.running_var")?)?;
        for i in 0..self.blocks.len() {
            let n = i + 2;
            let block = &mut self.blocks[i];
            fill2(&mut block.conv.w.value, get(&format!("block{n}.conv.w"))?)?;
            fill2(&mut block.bn.gamma.value, get(&format!("block{n}.bn.gamma"))?)?;
            fill2(&mut block.bn.beta.value, get(&format!("block{n}.bn.beta"))?)?;
            fill1(
                &mut block.bn.running_mean,
                get(&format!("block{n}.bn.running_mean"))?,
            )?;
            fill1(
                &mut block.bn.running_var,
                get(&format!("block{n}.bn.running_var"))?,
            )?;
        }
        fill2(&mut self.dense.w.value, get("dense.w")?)?;
        fill2(&mut self.dense.bias.value, get("dense.bias")?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    #[test]
    fn standard_shape_chain() {
        let cfg = ConvNetConfig::standard(16, 900, 2);
        let chain = cfg.shape_chain().unwrap();
        assert_eq!(
            chain.stages,
            vec![
                (25, 891),
                (25, 297),
                (50, 288),
                (50, 96),
                (100, 87),
                (100, 29),
                (200, 20),
                (200, 6),
            ]
        );
        assert_eq!(chain.dense_inputs, 1200);
    }

    #[test]
    fn too_short_input_rejected() {
        let mut cfg = ConvNetConfig::standard(4, 100, 2);
        assert!(cfg.shape_chain().is_err());
        cfg.n_samples = 900;
        assert!(cfg.shape_chain().is_ok());
    }

    fn micro_cfg() -> ConvNetConfig {
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

    #[test]
    fn eval_probabilities_sum_to_one() {
        let net = ConvNet::<f64>::new(micro_cfg(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array3::from_shape_fn((3, 2, 64), |_| rng.random_range(-1.0..1.0));
        let p = net.forward_eval(&x).unwrap();
        assert_eq!(p.dim(), (3, 2));
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_is_repeatable() {
        let net = ConvNet::<f64>::new(micro_cfg(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array3::from_shape_fn((2, 2, 64), |_| rng.random_range(-1.0..1.0));
        let a = net.forward_eval(&x).unwrap();
        let b = net.forward_eval(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let net = ConvNet::<f64>::new(micro_cfg(), 7).unwrap();
        let x = Array3::<f64>::zeros((1, 3, 64));
        assert!(matches!(
            net.forward_eval(&x),
            Err(ConvNetError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn state_arrays_round_trip() {
        let mut net = ConvNet::<f64>::new(micro_cfg(), 7).unwrap();
        let arrays = net.state_arrays();
        let mut other = ConvNet::<f64>::new(micro_cfg(), 99).unwrap();
        other.load_state_arrays(&arrays).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array3::from_shape_fn((2, 2, 64), |_| rng.random_range(-1.0..1.0));
        assert_eq!(net.forward_eval(&x).unwrap(), other.forward_eval(&x).unwrap());
        let _ = net.params();
    }
}

