//! Neural layers: dilated temporal convolution (TDNN), bidirectional LSTM,
//! dense layers, batch normalization, and the statistical-pooling head.
//!
//! Layers do not own their parameters; they hold [`ParamId`] handles into a
//! [`ParamStore`] so that the optimizer can swap in updated leaf tensors
//! without the layers noticing.

use rand::Rng;
use rand_distr::StandardNormal;
use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Variance floor inside the statistical-pooling standard deviation.
pub const STD_EPS: f64 = 1e-10;
/// Batch-normalization variance epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Batch-normalization running-statistics update rate.
pub const BN_MOMENTUM: f64 = 0.1;

/// Forward-pass mode. Train mode normalizes with batch statistics and
/// updates running statistics; eval mode is a frozen affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a named trainable tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered registry of named trainable tensors. Registration order is the
/// canonical order for serialization and optimizer state.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a trainable tensor under a unique name.
    pub fn register(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let tensor = Tensor::parameter(shape, values)?;
        self.entries.push((name, tensor));
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    /// Swap in a replacement leaf (the optimizer's functional update).
    pub fn replace(&mut self, id: ParamId, tensor: Tensor) -> Result<()> {
        let (name, old) = &self.entries[id.0];
        if tensor.shape() != old.shape() {
            return Err(Error::Dimension(format!(
                "replacement for parameter {name:?} has shape {:?}, expected {:?}",
                tensor.shape(),
                old.shape()
            )));
        }
        self.entries[id.0].1 = tensor;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }
}

// ── Initializers ────────────────────────────────────────────────────

pub mod init {
    use super::*;

    pub fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    }

    /// Kaiming-uniform fan-in scaling for ReLU stacks: U(−√(6/fan_in), √(6/fan_in)).
    pub fn kaiming_uniform<R: Rng>(rng: &mut R, fan_in: usize, n: usize) -> Vec<f64> {
        let bound = (6.0 / fan_in as f64).sqrt();
        uniform(rng, -bound, bound, n)
    }

    /// Random orthogonal n×n matrix via modified Gram-Schmidt on a Gaussian
    /// draw, row-major.
    pub fn orthogonal<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
        let mut m: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                for k in 0..n {
                    m[i * n + k] -= dot * m[j * n + k];
                }
            }
            let norm: f64 = (0..n).map(|k| m[i * n + k] * m[i * n + k]).sum::<f64>().sqrt();
            // A Gaussian draw is almost surely full rank; resample the row if
            // numerical cancellation ever collapses it.
            if norm < 1e-12 {
                for k in 0..n {
                    m[i * n + k] = rng.sample(StandardNormal);
                }
                let norm2: f64 =
                    (0..n).map(|k| m[i * n + k] * m[i * n + k]).sum::<f64>().sqrt();
                for k in 0..n {
                    m[i * n + k] /= norm2;
                }
                continue;
            }
            for k in 0..n {
                m[i * n + k] /= norm;
            }
        }
        m
    }
}

// ── Dense ───────────────────────────────────────────────────────────

/// Fully connected layer applied per row: `y = x · W + b` with `W: [in × out]`.
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Dense> {
        let w = store.register(
            format!("{prefix}.w"),
            vec![in_dim, out_dim],
            init::kaiming_uniform(rng, in_dim, in_dim * out_dim),
        )?;
        let b = store.register(format!("{prefix}.b"), vec![out_dim], vec![0.0; out_dim])?;
        Ok(Dense { w, b, in_dim, out_dim })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        x.matmul(store.get(self.w))?.add_row(store.get(self.b))
    }
}

// ── TDNN ────────────────────────────────────────────────────────────

/// Dilated 1-D convolution over frames ("valid" padding). Output frame `t`
/// is an affine map of input frames `t, t+dilation, …, t+(window−1)·dilation`.
///
/// Weights are stored `[in_dim·window × out_dim]` so the unfolded input can
/// be multiplied directly; block `i` of the rows corresponds to frame offset
/// `i·dilation`.
pub struct TdnnLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub window: usize,
    pub dilation: usize,
}

impl TdnnLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        window: usize,
        dilation: usize,
    ) -> Result<TdnnLayer> {
        if window < 1 || dilation < 1 {
            return Err(Error::Config(format!(
                "{prefix}: window and dilation must be ≥ 1 (got {window}, {dilation})"
            )));
        }
        let fan_in = in_dim * window;
        let w = store.register(
            format!("{prefix}.w"),
            vec![fan_in, out_dim],
            init::kaiming_uniform(rng, fan_in, fan_in * out_dim),
        )?;
        let b = store.register(format!("{prefix}.b"), vec![out_dim], vec![0.0; out_dim])?;
        Ok(TdnnLayer { w, b, in_dim, out_dim, window, dilation })
    }

    /// Frames consumed by the receptive field; inputs must be strictly longer.
    pub fn context(&self) -> usize {
        (self.window - 1) * self.dilation
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[1] != self.in_dim {
            return Err(Error::Dimension(format!(
                "tdnn expects [T × {}], got {:?}",
                self.in_dim,
                x.shape()
            )));
        }
        let frames = x.shape()[0];
        let context = self.context();
        if frames <= context {
            return Err(Error::DegenerateInput(format!(
                "utterance of {frames} frames is shorter than the receptive field; \
                 need at least {} frames",
                context + 1
            )));
        }
        let out_frames = frames - context;
        let unfolded = if self.window == 1 {
            x.clone()
        } else {
            let slices: Vec<Tensor> = (0..self.window)
                .map(|i| x.slice_rows(i * self.dilation, out_frames))
                .collect::<Result<_>>()?;
            Tensor::concat(&slices, 1)?
        };
        unfolded.matmul(store.get(self.w))?.add_row(store.get(self.b))
    }
}

// ── Batch normalization ─────────────────────────────────────────────

struct Running {
    mean: Vec<f64>,
    var: Vec<f64>,
}

/// Per-feature batch normalization over the rows of an `[r × d]` input.
///
/// At frame level the rows are the frames of one utterance; at utterance
/// level they are the samples of one mini-batch. Train mode normalizes by
/// the row statistics of the current input and folds them into the running
/// estimates; eval mode applies the frozen running statistics only.
pub struct BatchNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub dim: usize,
    pub momentum: f64,
    pub eps: f64,
    running: RefCell<Running>,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<BatchNorm> {
        let scale = store.register(format!("{prefix}.scale"), vec![dim], vec![1.0; dim])?;
        let shift = store.register(format!("{prefix}.shift"), vec![dim], vec![0.0; dim])?;
        Ok(BatchNorm {
            scale,
            shift,
            dim,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            running: RefCell::new(Running { mean: vec![0.0; dim], var: vec![1.0; dim] }),
        })
    }

    pub fn running_mean(&self) -> Vec<f64> {
        self.running.borrow().mean.clone()
    }

    pub fn running_var(&self) -> Vec<f64> {
        self.running.borrow().var.clone()
    }

    /// Restore running statistics (checkpoint load).
    pub fn set_running(&self, mean: Vec<f64>, var: Vec<f64>) -> Result<()> {
        if mean.len() != self.dim || var.len() != self.dim {
            return Err(Error::Dimension(format!(
                "running stats of length {}/{} for BatchNorm of dim {}",
                mean.len(),
                var.len(),
                self.dim
            )));
        }
        *self.running.borrow_mut() = Running { mean, var };
        Ok(())
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[1] != self.dim {
            return Err(Error::Dimension(format!(
                "batchnorm expects [r × {}], got {:?}",
                self.dim,
                x.shape()
            )));
        }
        let eps = Tensor::scalar(self.eps)?;
        let (mean, inv_std) = match mode {
            Mode::Train => {
                let bm = x.mean(0)?;
                let bv = x.var(0)?;
                {
                    let mut run = self.running.borrow_mut();
                    for (r, &b) in run.mean.iter_mut().zip(bm.values()) {
                        *r = (1.0 - self.momentum) * *r + self.momentum * b;
                    }
                    for (r, &b) in run.var.iter_mut().zip(bv.values()) {
                        *r = (1.0 - self.momentum) * *r + self.momentum * b;
                    }
                }
                (bm, bv.add(&eps)?.sqrt()?.recip()?)
            }
            Mode::Eval => {
                let run = self.running.borrow();
                let rm = Tensor::from_values(vec![self.dim], run.mean.clone())?;
                let inv: Vec<f64> =
                    run.var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                (rm, Tensor::from_values(vec![self.dim], inv)?)
            }
        };
        x.add_row(&mean.scale(-1.0)?)?
            .mul_row(&inv_std)?
            .mul_row(store.get(self.scale))?
            .add_row(store.get(self.shift))
    }
}

// ── Bidirectional LSTM ──────────────────────────────────────────────

/// One direction's gate parameters. Gate order: input, forget, cell, output.
pub struct LstmDirection {
    pub w: [ParamId; 4],
    pub r: [ParamId; 4],
    pub b: [ParamId; 4],
    pub in_dim: usize,
    pub hidden: usize,
}

impl LstmDirection {
    fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Result<LstmDirection> {
        let gates = ["i", "f", "g", "o"];
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut w = Vec::new();
        let mut r = Vec::new();
        let mut b = Vec::new();
        for gate in gates {
            w.push(store.register(
                format!("{prefix}.w{gate}"),
                vec![in_dim, hidden],
                init::uniform(rng, -bound, bound, in_dim * hidden),
            )?);
        }
        for gate in gates {
            r.push(store.register(
                format!("{prefix}.r{gate}"),
                vec![hidden, hidden],
                init::orthogonal(rng, hidden),
            )?);
        }
        for gate in gates {
            // Forget-gate bias starts at 1.0 so early training does not wipe
            // the cell state.
            let fill = if gate == "f" { 1.0 } else { 0.0 };
            b.push(store.register(
                format!("{prefix}.b{gate}"),
                vec![hidden],
                vec![fill; hidden],
            )?);
        }
        Ok(LstmDirection {
            w: [w[0], w[1], w[2], w[3]],
            r: [r[0], r[1], r[2], r[3]],
            b: [b[0], b[1], b[2], b[3]],
            in_dim,
            hidden,
        })
    }

    /// Run the recurrence over frames in the order given by `frame_order`,
    /// returning per-frame hidden states aligned to the *original* frame
    /// indices.
    fn run(
        &self,
        store: &ParamStore,
        x: &Tensor,
        frame_order: impl Iterator<Item = usize>,
    ) -> Result<Vec<Tensor>> {
        let frames = x.shape()[0];
        let mut h = Tensor::zeros(vec![1, self.hidden]);
        let mut c = Tensor::zeros(vec![1, self.hidden]);
        let mut out: Vec<Option<Tensor>> = vec![None; frames];
        for t in frame_order {
            let xt = x.slice_rows(t, 1)?;
            let pre = |gate: usize| -> Result<Tensor> {
                xt.matmul(store.get(self.w[gate]))?
                    .add(&h.matmul(store.get(self.r[gate]))?)?
                    .add_row(store.get(self.b[gate]))
            };
            let i = pre(0)?.sigmoid()?;
            let f = pre(1)?.sigmoid()?;
            let g = pre(2)?.tanh()?;
            let o = pre(3)?.sigmoid()?;
            c = f.mul(&c)?.add(&i.mul(&g)?)?;
            h = o.mul(&c.tanh()?)?;
            out[t] = Some(h.clone());
        }
        Ok(out.into_iter().map(|t| t.expect("all frames visited")).collect())
    }
}

/// Bidirectional LSTM over a `[T × in]` frame sequence, producing
/// `[T × 2·hidden]` (forward ⧺ backward per frame).
pub struct BlstmLayer {
    pub fwd: LstmDirection,
    pub bwd: LstmDirection,
    pub in_dim: usize,
    pub hidden: usize,
}

impl BlstmLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Result<BlstmLayer> {
        let fwd = LstmDirection::new(store, rng, &format!("{prefix}.fwd"), in_dim, hidden)?;
        let bwd = LstmDirection::new(store, rng, &format!("{prefix}.bwd"), in_dim, hidden)?;
        Ok(BlstmLayer { fwd, bwd, in_dim, hidden })
    }

    pub fn out_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[1] != self.in_dim {
            return Err(Error::Dimension(format!(
                "blstm expects [T × {}], got {:?}",
                self.in_dim,
                x.shape()
            )));
        }
        let frames = x.shape()[0];
        if frames == 0 {
            return Err(Error::DegenerateInput("blstm on empty sequence".into()));
        }
        let f_states = self.fwd.run(store, x, 0..frames)?;
        let b_states = self.bwd.run(store, x, (0..frames).rev())?;
        let f_stack = Tensor::concat(&f_states, 0)?;
        let b_stack = Tensor::concat(&b_states, 0)?;
        Tensor::concat(&[f_stack, b_stack], 1)
    }
}

// ── Statistical pooling ─────────────────────────────────────────────

/// Map `[T × d]` frames to a fixed `[2d]` vector: per-dimension mean over
/// frames followed by the per-dimension standard deviation
/// `sqrt(population variance + STD_EPS)`.
pub fn stats_pool(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::Dimension(format!(
            "stats_pool expects [T × d], got {:?}",
            x.shape()
        )));
    }
    if x.shape()[0] == 0 {
        return Err(Error::DegenerateInput("stats_pool over zero frames".into()));
    }
    let mean = x.mean(0)?;
    let std = x.var(0)?.add(&Tensor::scalar(STD_EPS)?)?.sqrt()?;
    Tensor::concat(&[mean, std], 0)
}

// ── Pooling head ────────────────────────────────────────────────────

/// Two frame-wise fully connected layers (each ReLU + BatchNorm) followed by
/// statistical pooling; output dimension is `2·h2`.
pub struct PoolingHead {
    pub fc1: Dense,
    pub bn1: BatchNorm,
    pub fc2: Dense,
    pub bn2: BatchNorm,
}

impl PoolingHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        in_dim: usize,
        h1: usize,
        h2: usize,
    ) -> Result<PoolingHead> {
        let fc1 = Dense::new(store, rng, &format!("{prefix}.fc1"), in_dim, h1)?;
        let bn1 = BatchNorm::new(store, &format!("{prefix}.bn1"), h1)?;
        let fc2 = Dense::new(store, rng, &format!("{prefix}.fc2"), h1, h2)?;
        let bn2 = BatchNorm::new(store, &format!("{prefix}.bn2"), h2)?;
        Ok(PoolingHead { fc1, bn1, fc2, bn2 })
    }

    pub fn out_dim(&self) -> usize {
        2 * self.fc2.out_dim
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let a = self.bn1.forward(store, &self.fc1.forward(store, x)?.relu()?, mode)?;
        let b = self.bn2.forward(store, &self.fc2.forward(store, &a)?.relu()?, mode)?;
        stats_pool(&b)
    }
}
