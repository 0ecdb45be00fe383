//! Training: regularized cross-entropy loss, SGD with momentum, the chunked
//! training loop, and checkpoint serialization.
//!
//! The loss over a batch is the mean of
//! `softmax cross-entropy at the true class + λ·‖z_i‖₂`, where `z_i` is the
//! pre-activation embedding row. With λ = 0 the regularizer term is skipped
//! entirely, recovering plain cross-entropy bit for bit.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::path::Path;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelGraph};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Checkpoint container magic.
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MLPC";

/// Loss hyperparameters. Batch reduction is fixed to the mean so λ keeps its
/// meaning independent of batch size.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub lambda: f64,
}

impl LossConfig {
    pub fn new(lambda: f64) -> Result<LossConfig> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be finite and ≥ 0, got {lambda}")));
        }
        Ok(LossConfig { lambda })
    }
}

/// Mean over the batch of per-sample cross-entropy plus λ times the
/// per-sample embedding norm. `logits: [M × N]`, `z: [M × embedding_dim]`.
pub fn loss(logits: &Tensor, labels: &[usize], z: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    if logits.rank() != 2 || z.rank() != 2 || logits.shape()[0] != z.shape()[0] {
        return Err(Error::Dimension(format!(
            "loss expects [M × N] logits and [M × d] z, got {:?} and {:?}",
            logits.shape(),
            z.shape()
        )));
    }
    if labels.len() != logits.shape()[0] {
        return Err(Error::Contract(format!(
            "{} labels for a batch of {}",
            labels.len(),
            logits.shape()[0]
        )));
    }
    let ce = logits.row_softmax_cross_entropy(labels)?.mean(0)?;
    if cfg.lambda == 0.0 {
        return Ok(ce);
    }
    let reg = z.row_l2norm()?.mean(0)?.scale(cfg.lambda)?;
    ce.add(&reg)
}

/// Stochastic gradient descent with momentum:
/// `v ← μ·v + g`, `p ← p − lr·v`, gradients cleared by the update.
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Sgd> {
        if !lr.is_finite() || lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Sgd { lr, momentum, velocity: Vec::new() })
    }

    /// Restore optimizer state (checkpoint load). Velocity buffers must be
    /// in parameter-registry order.
    pub fn with_velocity(lr: f64, momentum: f64, velocity: Vec<Vec<f64>>) -> Result<Sgd> {
        let mut opt = Sgd::new(lr, momentum)?;
        opt.velocity = velocity;
        Ok(opt)
    }

    /// Velocity buffers in registry order, materializing zeros for
    /// parameters that have not been stepped yet.
    pub fn velocity_or_zeros(&self, params: &ParamStore) -> Vec<Vec<f64>> {
        params
            .ids()
            .enumerate()
            .map(|(i, id)| {
                self.velocity
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| vec![0.0; params.get(id).numel()])
            })
            .collect()
    }

    /// Apply one update to every parameter in the store. Every parameter
    /// must carry a gradient from a preceding `backward`.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.ids().map(|id| vec![0.0; params.get(id).numel()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer holds {} velocity buffers for {} parameters",
                self.velocity.len(),
                params.len()
            )));
        }
        let ids: Vec<_> = params.ids().collect();
        for (id, vel) in ids.into_iter().zip(self.velocity.iter_mut()) {
            let tensor = params.get(id);
            let grad = tensor.grad().ok_or_else(|| {
                Error::Contract(format!("missing gradient on parameter {:?}", params.name(id)))
            })?;
            let mut new_vals = tensor.values().to_vec();
            for ((v, g), p) in vel.iter_mut().zip(&grad).zip(new_vals.iter_mut()) {
                *v = self.momentum * *v + g;
                *p -= self.lr * *v;
            }
            let shape = tensor.shape().to_vec();
            params.replace(id, Tensor::parameter(shape, new_vals)?)?;
        }
        Ok(())
    }
}

/// One training batch: fixed-length feature chunks with speaker labels.
pub struct Batch {
    pub chunks: Vec<Tensor>,
    pub labels: Vec<usize>,
}

/// An utterance available to the training loop, with its class index.
pub struct TrainUtterance {
    pub speaker: usize,
    pub frames: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

/// Step-decay learning-rate schedule: multiply by `factor` every
/// `every_epochs` epochs.
#[derive(Debug, Clone, Copy)]
pub struct LrDecay {
    pub every_epochs: usize,
    pub factor: f64,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub chunk_len: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lambda: f64,
    pub lr_decay: Option<LrDecay>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            chunk_len: 200,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            lambda: 0.0,
            lr_decay: None,
            seed: 0,
        }
    }
}

/// Per-step progress record; the training log writes one line per event.
#[derive(Debug, Clone, Copy)]
pub struct StepEvent {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub mean_z_norm: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub steps: usize,
    pub final_epoch_loss: f64,
    pub skipped_utterances: usize,
}

/// Chunked training: per epoch, shuffle the eligible utterances, sample one
/// fixed-length chunk per utterance at a uniformly random offset, batch, and
/// step. Utterances shorter than `chunk_len` are skipped with a logged
/// warning. Fully deterministic for a fixed seed.
pub fn train_loop(
    model: &mut ModelGraph,
    opt: &mut Sgd,
    dataset: &[TrainUtterance],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepEvent),
    mut on_epoch_end: impl FnMut(usize, &ModelGraph, &Sgd) -> Result<()>,
) -> Result<TrainSummary> {
    if cfg.chunk_len < model.config().min_frames() {
        return Err(Error::Config(format!(
            "chunk_len {} is below the model's receptive field ({} frames)",
            cfg.chunk_len,
            model.config().min_frames()
        )));
    }
    let loss_cfg = LossConfig::new(cfg.lambda)?;
    let num_speakers = model.config().num_speakers;
    for utt in dataset {
        if utt.speaker >= num_speakers {
            return Err(Error::Contract(format!(
                "utterance label {} out of range for {num_speakers} speakers",
                utt.speaker
            )));
        }
    }
    let eligible: Vec<usize> =
        (0..dataset.len()).filter(|&i| dataset[i].frames >= cfg.chunk_len).collect();
    let skipped = dataset.len() - eligible.len();
    if skipped > 0 {
        log::warn!(
            "skipping {skipped} utterance(s) shorter than chunk_len {}",
            cfg.chunk_len
        );
    }
    if eligible.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "empty epoch: no utterance reaches chunk_len {}",
            cfg.chunk_len
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    model.set_mode(crate::nn::Mode::Train);
    let mut steps = 0usize;
    let mut final_epoch_loss = f64::NAN;
    for epoch in 1..=cfg.epochs {
        if let Some(decay) = cfg.lr_decay {
            let drops = (epoch - 1) / decay.every_epochs;
            opt.lr = cfg.lr * decay.factor.powi(drops as i32);
        }
        let mut order = eligible.clone();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for batch_ids in order.chunks(cfg.batch_size) {
            let batch = make_batch(dataset, batch_ids, cfg.chunk_len, &mut rng)?;
            let out = model.forward_batch(&batch.chunks)?;
            let loss_t = loss(&out.logits, &batch.labels, &out.z, &loss_cfg)?;
            model.params().zero_grads();
            loss_t.backward()?;
            opt.step(model.params_mut())?;
            steps += 1;
            epoch_batches += 1;
            let loss_v = loss_t.item();
            epoch_loss += loss_v;
            let mean_z_norm = mean_row_norm(out.z.values(), out.z.shape()[1]);
            on_step(&StepEvent { epoch, step: steps, loss: loss_v, mean_z_norm });
        }
        final_epoch_loss = epoch_loss / epoch_batches as f64;
        on_epoch_end(epoch, model, opt)?;
    }
    Ok(TrainSummary {
        epochs_run: cfg.epochs,
        steps,
        final_epoch_loss,
        skipped_utterances: skipped,
    })
}

fn make_batch<R: Rng>(
    dataset: &[TrainUtterance],
    ids: &[usize],
    chunk_len: usize,
    rng: &mut R,
) -> Result<Batch> {
    let mut chunks = Vec::with_capacity(ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    for &i in ids {
        let utt = &dataset[i];
        let start = rng.random_range(0..=utt.frames - chunk_len);
        let slice = utt.values[start * utt.dim..(start + chunk_len) * utt.dim].to_vec();
        chunks.push(Tensor::from_values(vec![chunk_len, utt.dim], slice)?);
        labels.push(utt.speaker);
    }
    Ok(Batch { chunks, labels })
}

/// Mean Euclidean norm of the rows of a flat `[rows × dim]` buffer.
pub fn mean_row_norm(values: &[f64], dim: usize) -> f64 {
    let rows = values.len() / dim;
    values
        .chunks_exact(dim)
        .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / rows as f64
}

// ── Checkpoints ─────────────────────────────────────────────────────

/// Serialize the model (config, parameters, batch-norm running statistics),
/// the optimizer state, and the step counter.
pub fn save_checkpoint(model: &ModelGraph, opt: &Sgd, step: u64, path: &Path) -> Result<()> {
    let mut c = Container::new(CHECKPOINT_MAGIC);
    c.push_text("config", model.config().to_text());
    c.push_text("step", step.to_string());
    c.push_tensor("opt.lr", vec![], vec![opt.lr]);
    c.push_tensor("opt.momentum", vec![], vec![opt.momentum]);
    for (name, tensor) in model.params().iter() {
        c.push_tensor(format!("param.{name}"), tensor.shape().to_vec(), tensor.values().to_vec());
    }
    for (prefix, bn) in model.batchnorms() {
        let dim = bn.dim;
        c.push_tensor(format!("bn.{prefix}.running_mean"), vec![dim], bn.running_mean());
        c.push_tensor(format!("bn.{prefix}.running_var"), vec![dim], bn.running_var());
    }
    let velocity = opt.velocity_or_zeros(model.params());
    for ((name, tensor), vel) in model.params().iter().zip(velocity) {
        c.push_tensor(format!("opt.v.{name}"), tensor.shape().to_vec(), vel);
    }
    c.write_to(path)
}

/// Rebuild a model, optimizer, and step counter from a checkpoint file.
/// Every tensor is restored bit-exactly; a checkpoint whose config does not
/// match its tensors fails naming the first mismatched tensor.
pub fn load_checkpoint(path: &Path) -> Result<(ModelGraph, Sgd, u64)> {
    let c = Container::read_from(path, CHECKPOINT_MAGIC)?;
    let config = ModelConfig::parse(c.get_text("config")?)?;
    let step: u64 = c
        .get_text("step")?
        .parse()
        .map_err(|_| Error::Config("checkpoint step counter is not an integer".into()))?;
    let mut model = ModelGraph::build(config, 0)?;
    restore_model(&mut model, &c)?;
    let lr = c.get_tensor("opt.lr")?.1[0];
    let momentum = c.get_tensor("opt.momentum")?.1[0];
    let mut velocity = Vec::new();
    for (name, tensor) in model.params().iter() {
        let (shape, vals) = c.get_tensor(&format!("opt.v.{name}"))?;
        if shape != tensor.shape() {
            return Err(Error::Dimension(format!(
                "velocity for {name:?} has shape {shape:?}, expected {:?}",
                tensor.shape()
            )));
        }
        velocity.push(vals.to_vec());
    }
    let opt = Sgd::with_velocity(lr, momentum, velocity)?;
    Ok((model, opt, step))
}

fn restore_model(model: &mut ModelGraph, c: &Container) -> Result<()> {
    let names: Vec<String> = model.params().iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let (shape, vals) = c
            .get_tensor(&format!("param.{name}"))
            .map_err(|_| Error::Config(format!("checkpoint is missing tensor {name:?}")))?;
        let shape = shape.to_vec();
        let vals = vals.to_vec();
        model.set_param(&name, &shape, vals)?;
    }
    for (prefix, bn) in model.batchnorms() {
        let (_, mean) = c.get_tensor(&format!("bn.{prefix}.running_mean"))?;
        let (_, var) = c.get_tensor(&format!("bn.{prefix}.running_var"))?;
        bn.set_running(mean.to_vec(), var.to_vec())?;
    }
    Ok(())
}
