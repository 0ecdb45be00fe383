//! Model assembly: the four experimental topologies (`x-vector`, `A`, `B`,
//! `MP`), batched forward passes, and speaker-embedding extraction.
//!
//! Frame-level stack: a chain of TDNN blocks (each ReLU + BatchNorm),
//! optionally followed by a bidirectional LSTM. Pooling heads hang off
//! configured tap points and their outputs are concatenated into one
//! utterance vector. Utterance-level stack: dense → (z tap) → ReLU + BN →
//! dense → ReLU + BN → (x tap) → dense classifier.
//!
//! The embedding `z` is the pre-activation output of the first utterance
//! dense layer: no ReLU and no batch normalization applied.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, BlstmLayer, Dense, Mode, ParamStore, PoolingHead, TdnnLayer};
use crate::tensor::Tensor;

/// One TDNN block spec: filters × window × dilation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TdnnSpec {
    pub filters: usize,
    pub window: usize,
    pub dilation: usize,
}

/// Where a pooling head taps the frame-level stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tap {
    /// After the k-th TDNN block (1-based).
    AfterTdnn(usize),
    /// After the bidirectional LSTM.
    AfterLstm,
}

impl std::fmt::Display for Tap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tap::AfterTdnn(k) => write!(f, "tdnn{k}"),
            Tap::AfterLstm => write!(f, "lstm"),
        }
    }
}

/// Declarative model topology. The four presets share a concatenated pooled
/// dimension of 3000 under default widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub name: String,
    pub input_dim: usize,
    pub tdnn: Vec<TdnnSpec>,
    /// Hidden width *per direction*; output frames carry 2× this.
    pub lstm_hidden: Option<usize>,
    pub taps: Vec<Tap>,
    /// Width of the first dense layer inside every pooling head.
    pub head_hidden: usize,
    /// Width of the second dense layer, one entry per tap; pooled output per
    /// head is twice this.
    pub head_h2: Vec<usize>,
    pub embedding_dim: usize,
    pub fc2_dim: usize,
    pub num_speakers: usize,
}

/// Default TDNN stack: (512,5,1), (512,3,2), (512,3,3).
pub fn default_tdnn() -> Vec<TdnnSpec> {
    vec![
        TdnnSpec { filters: 512, window: 5, dilation: 1 },
        TdnnSpec { filters: 512, window: 3, dilation: 2 },
        TdnnSpec { filters: 512, window: 3, dilation: 3 },
    ]
}

impl ModelConfig {
    /// Build one of the four named presets.
    ///
    /// Pooling-head widths keep the concatenated pooled output at 3000 for
    /// every preset: `x-vector` 1500, `A` 500 per tap, `B` 1500, `MP` 750
    /// per tap. For `B` a single pooling at width 500 is also a published
    /// reading; pass an explicit `head_h2` override to use it.
    pub fn preset(name: &str, num_speakers: usize) -> Result<ModelConfig> {
        let (taps, lstm, h2): (Vec<Tap>, Option<usize>, Vec<usize>) = match name {
            "x-vector" => (vec![Tap::AfterTdnn(3)], None, vec![1500]),
            "A" => (
                vec![Tap::AfterTdnn(1), Tap::AfterTdnn(2), Tap::AfterTdnn(3)],
                None,
                vec![500, 500, 500],
            ),
            "B" => (vec![Tap::AfterLstm], Some(512), vec![1500]),
            "MP" => (vec![Tap::AfterTdnn(3), Tap::AfterLstm], Some(512), vec![750, 750]),
            other => {
                return Err(Error::Config(format!(
                    "unknown model name {other:?}; valid names: x-vector, A, B, MP"
                )))
            }
        };
        let cfg = ModelConfig {
            name: name.to_string(),
            input_dim: 43,
            tdnn: default_tdnn(),
            lstm_hidden: lstm,
            taps,
            head_hidden: 512,
            head_h2: h2,
            embedding_dim: 256,
            fc2_dim: 256,
            num_speakers,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Total concatenated pooling output dimension (2·h2 per tap).
    pub fn pooled_dim(&self) -> usize {
        self.head_h2.iter().map(|h| 2 * h).sum()
    }

    /// Frames consumed by the TDNN receptive field; inputs must be longer.
    pub fn context(&self) -> usize {
        self.tdnn.iter().map(|s| (s.window - 1) * s.dilation).sum()
    }

    /// Minimum number of input frames forward will accept.
    pub fn min_frames(&self) -> usize {
        self.context() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.tdnn.is_empty() {
            return Err(Error::Config("at least one TDNN block required".into()));
        }
        for (i, s) in self.tdnn.iter().enumerate() {
            if s.filters == 0 || s.window == 0 || s.dilation == 0 {
                return Err(Error::Config(format!(
                    "tdnn{}: filters/window/dilation must be positive, got {s:?}",
                    i + 1
                )));
            }
        }
        if self.taps.is_empty() {
            return Err(Error::Config("at least one pooling tap required".into()));
        }
        for (i, t) in self.taps.iter().enumerate() {
            match t {
                Tap::AfterTdnn(k) => {
                    if *k == 0 || *k > self.tdnn.len() {
                        return Err(Error::Config(format!(
                            "tap {} refers to tdnn{k}, but the stack has {} blocks",
                            i + 1,
                            self.tdnn.len()
                        )));
                    }
                }
                Tap::AfterLstm => {
                    if self.lstm_hidden.is_none() {
                        return Err(Error::Config(format!(
                            "tap {} pools after the LSTM, but no lstm_hidden is configured",
                            i + 1
                        )));
                    }
                }
            }
            if self.taps[..i].contains(t) {
                return Err(Error::Config(format!("duplicate tap {t}")));
            }
        }
        if self.head_h2.len() != self.taps.len() {
            return Err(Error::Config(format!(
                "head_h2 has {} entries for {} taps",
                self.head_h2.len(),
                self.taps.len()
            )));
        }
        if self.head_hidden == 0 || self.head_h2.iter().any(|&h| h == 0) {
            return Err(Error::Config("pooling-head widths must be positive".into()));
        }
        if let Some(h) = self.lstm_hidden {
            if h == 0 {
                return Err(Error::Config("lstm_hidden must be positive".into()));
            }
        }
        if self.embedding_dim == 0 || self.fc2_dim == 0 {
            return Err(Error::Config("utterance layer widths must be positive".into()));
        }
        if self.num_speakers < 2 {
            return Err(Error::Config(format!(
                "num_speakers must be at least 2, got {}",
                self.num_speakers
            )));
        }
        Ok(())
    }

    // ── Flat key-value text format ──────────────────────────────────
    //
    //   # comments and blank lines ignored
    //   name = MP
    //   input_dim = 43
    //   tdnn = 512,5,1; 512,3,2; 512,3,3
    //   lstm_hidden = 512            (or: none)
    //   taps = tdnn3, lstm
    //   head_hidden = 512
    //   head_h2 = 750, 750
    //   embedding_dim = 256
    //   fc2_dim = 256
    //   num_speakers = 100

    pub fn to_text(&self) -> String {
        let tdnn = self
            .tdnn
            .iter()
            .map(|s| format!("{},{},{}", s.filters, s.window, s.dilation))
            .collect::<Vec<_>>()
            .join("; ");
        let taps = self.taps.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(", ");
        let h2 = self.head_h2.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(", ");
        let lstm = match self.lstm_hidden {
            Some(h) => h.to_string(),
            None => "none".to_string(),
        };
        format!(
            "name = {}\ninput_dim = {}\ntdnn = {}\nlstm_hidden = {}\ntaps = {}\n\
             head_hidden = {}\nhead_h2 = {}\nembedding_dim = {}\nfc2_dim = {}\n\
             num_speakers = {}\n",
            self.name,
            self.input_dim,
            tdnn,
            lstm,
            taps,
            self.head_hidden,
            h2,
            self.embedding_dim,
            self.fc2_dim,
            self.num_speakers
        )
    }

    /// Parse the `tdnn` field grammar: `filters,window,dilation` blocks
    /// separated by semicolons.
    pub fn parse_tdnn_field(text: &str) -> Result<Vec<TdnnSpec>> {
        let mut tdnn = Vec::new();
        for part in text.split(';') {
            let nums: Vec<&str> = part.split(',').map(str::trim).collect();
            if nums.len() != 3 {
                return Err(Error::Config(format!(
                    "tdnn block {part:?} is not filters,window,dilation"
                )));
            }
            let p = |s: &str| -> Result<usize> {
                s.parse().map_err(|_| Error::Config(format!("tdnn: bad integer {s:?}")))
            };
            tdnn.push(TdnnSpec {
                filters: p(nums[0])?,
                window: p(nums[1])?,
                dilation: p(nums[2])?,
            });
        }
        Ok(tdnn)
    }

    /// Parse the `taps` field grammar: comma-separated `tdnnK` / `lstm`.
    pub fn parse_taps_field(text: &str) -> Result<Vec<Tap>> {
        let mut taps = Vec::new();
        for part in text.split(',').map(str::trim) {
            if part == "lstm" {
                taps.push(Tap::AfterLstm);
            } else if let Some(k) = part.strip_prefix("tdnn") {
                taps.push(Tap::AfterTdnn(
                    k.parse().map_err(|_| Error::Config(format!("bad tap {part:?}")))?,
                ));
            } else {
                return Err(Error::Config(format!("bad tap {part:?}; expected tdnnK or lstm")));
            }
        }
        Ok(taps)
    }

    /// Parse the `head_h2` field grammar: comma-separated widths.
    pub fn parse_h2_field(text: &str) -> Result<Vec<usize>> {
        text.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("head_h2: bad integer {s:?}")))
            })
            .collect()
    }

    pub fn parse(text: &str) -> Result<ModelConfig> {
        let mut fields: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: i + 1,
                msg: format!("expected 'key = value', got {line:?}"),
            })?;
            let key = key.trim().to_string();
            if fields.iter().any(|(_, k, _)| *k == key) {
                return Err(Error::Parse { line: i + 1, msg: format!("duplicate key {key:?}") });
            }
            fields.push((i + 1, key, value.trim().to_string()));
        }
        for (line, key, _) in &fields {
            const KNOWN: [&str; 10] = [
                "name", "input_dim", "tdnn", "lstm_hidden", "taps", "head_hidden", "head_h2",
                "embedding_dim", "fc2_dim", "num_speakers",
            ];
            if !KNOWN.contains(&key.as_str()) {
                return Err(Error::Parse { line: *line, msg: format!("unknown key {key:?}") });
            }
        }
        let lookup = |key: &str| -> Result<(usize, String)> {
            fields
                .iter()
                .find(|(_, k, _)| k == key)
                .map(|(l, _, v)| (*l, v.clone()))
                .ok_or_else(|| Error::Config(format!("missing config key {key:?}")))
        };
        let parse_usize = |key: &str| -> Result<usize> {
            let (line, v) = lookup(key)?;
            v.parse().map_err(|_| Error::Parse { line, msg: format!("{key}: bad integer {v:?}") })
        };

        let (_, name) = lookup("name")?;
        let (tdnn_line, tdnn_text) = lookup("tdnn")?;
        let mut tdnn = Vec::new();
        for part in tdnn_text.split(';') {
            let nums: Vec<&str> = part.split(',').map(str::trim).collect();
            if nums.len() != 3 {
                return Err(Error::Parse {
                    line: tdnn_line,
                    msg: format!("tdnn block {part:?} is not filters,window,dilation"),
                });
            }
            let p = |s: &str| -> Result<usize> {
                s.parse().map_err(|_| Error::Parse {
                    line: tdnn_line,
                    msg: format!("tdnn: bad integer {s:?}"),
                })
            };
            tdnn.push(TdnnSpec {
                filters: p(nums[0])?,
                window: p(nums[1])?,
                dilation: p(nums[2])?,
            });
        }
        let (lstm_line, lstm_text) = lookup("lstm_hidden")?;
        let lstm_hidden = if lstm_text == "none" {
            None
        } else {
            Some(lstm_text.parse().map_err(|_| Error::Parse {
                line: lstm_line,
                msg: format!("lstm_hidden: bad integer {lstm_text:?}"),
            })?)
        };
        let (taps_line, taps_text) = lookup("taps")?;
        let mut taps = Vec::new();
        for part in taps_text.split(',').map(str::trim) {
            if part == "lstm" {
                taps.push(Tap::AfterLstm);
            } else if let Some(k) = part.strip_prefix("tdnn") {
                taps.push(Tap::AfterTdnn(k.parse().map_err(|_| Error::Parse {
                    line: taps_line,
                    msg: format!("bad tap {part:?}"),
                })?));
            } else {
                return Err(Error::Parse {
                    line: taps_line,
                    msg: format!("bad tap {part:?}; expected tdnnK or lstm"),
                });
            }
        }
        let (h2_line, h2_text) = lookup("head_h2")?;
        let head_h2 = h2_text
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|_| Error::Parse {
                    line: h2_line,
                    msg: format!("head_h2: bad integer {s:?}"),
                })
            })
            .collect::<Result<Vec<usize>>>()?;

        let cfg = ModelConfig {
            name,
            input_dim: parse_usize("input_dim")?,
            tdnn,
            lstm_hidden,
            taps,
            head_hidden: parse_usize("head_hidden")?,
            head_h2,
            embedding_dim: parse_usize("embedding_dim")?,
            fc2_dim: parse_usize("fc2_dim")?,
            num_speakers: parse_usize("num_speakers")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A fixed-dimension utterance-level speaker vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub utterance_id: String,
    pub vector: Vec<f64>,
}

/// Output of a batched forward pass. Rows are batch samples.
pub struct BatchForward {
    /// `[M × num_speakers]` classifier logits.
    pub logits: Tensor,
    /// `[M × embedding_dim]` pre-activation first-layer outputs (the
    /// speaker embeddings).
    pub z: Tensor,
    /// `[M × fc2_dim]` classifier inputs.
    pub x: Tensor,
}

/// An instantiated, parameterized network.
pub struct ModelGraph {
    config: ModelConfig,
    params: ParamStore,
    tdnn_blocks: Vec<(TdnnLayer, BatchNorm)>,
    lstm: Option<BlstmLayer>,
    heads: Vec<PoolingHead>,
    utt_fc1: Dense,
    utt_bn1: BatchNorm,
    utt_fc2: Dense,
    utt_bn2: BatchNorm,
    classifier: Dense,
    mode: Mode,
}

impl ModelGraph {
    /// Instantiate all layers with seeded random initialization.
    pub fn build(config: ModelConfig, seed: u64) -> Result<ModelGraph> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();

        let mut tdnn_blocks = Vec::new();
        let mut dim = config.input_dim;
        for (i, spec) in config.tdnn.iter().enumerate() {
            let prefix = format!("tdnn{}", i + 1);
            let layer = TdnnLayer::new(
                &mut params,
                &mut rng,
                &prefix,
                dim,
                spec.filters,
                spec.window,
                spec.dilation,
            )?;
            let bn = BatchNorm::new(&mut params, &format!("{prefix}.bn"), spec.filters)?;
            dim = spec.filters;
            tdnn_blocks.push((layer, bn));
        }
        let lstm = match config.lstm_hidden {
            Some(h) => Some(BlstmLayer::new(&mut params, &mut rng, "lstm", dim, h)?),
            None => None,
        };

        let mut heads = Vec::new();
        for (i, (tap, &h2)) in config.taps.iter().zip(&config.head_h2).enumerate() {
            let tap_dim = match tap {
                Tap::AfterTdnn(k) => config.tdnn[k - 1].filters,
                Tap::AfterLstm => 2 * config.lstm_hidden.expect("validated"),
            };
            heads.push(PoolingHead::new(
                &mut params,
                &mut rng,
                &format!("head{}", i + 1),
                tap_dim,
                config.head_hidden,
                h2,
            )?);
        }

        let pooled = config.pooled_dim();
        let utt_fc1 = Dense::new(&mut params, &mut rng, "utt.fc1", pooled, config.embedding_dim)?;
        let utt_bn1 = BatchNorm::new(&mut params, "utt.bn1", config.embedding_dim)?;
        let utt_fc2 =
            Dense::new(&mut params, &mut rng, "utt.fc2", config.embedding_dim, config.fc2_dim)?;
        let utt_bn2 = BatchNorm::new(&mut params, "utt.bn2", config.fc2_dim)?;
        let classifier =
            Dense::new(&mut params, &mut rng, "cls", config.fc2_dim, config.num_speakers)?;

        Ok(ModelGraph {
            config,
            params,
            tdnn_blocks,
            lstm,
            heads,
            utt_fc1,
            utt_bn1,
            utt_fc2,
            utt_bn2,
            classifier,
            mode: Mode::Train,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// All batch-normalization layers with their registry prefixes, in
    /// stable order (for running-statistics serialization).
    pub fn batchnorms(&self) -> Vec<(String, &BatchNorm)> {
        let mut out = Vec::new();
        for (i, (_, bn)) in self.tdnn_blocks.iter().enumerate() {
            out.push((format!("tdnn{}.bn", i + 1), bn));
        }
        for (i, head) in self.heads.iter().enumerate() {
            out.push((format!("head{}.bn1", i + 1), &head.bn1));
            out.push((format!("head{}.bn2", i + 1), &head.bn2));
        }
        out.push(("utt.bn1".to_string(), &self.utt_bn1));
        out.push(("utt.bn2".to_string(), &self.utt_bn2));
        out
    }

    /// Overwrite a parameter with stored values (checkpoint restore).
    pub fn set_param(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<()> {
        let id = self
            .params
            .find(name)
            .ok_or_else(|| Error::Config(format!("no parameter named {name:?} in this model")))?;
        if self.params.get(id).shape() != shape {
            return Err(Error::Dimension(format!(
                "parameter {name:?} has shape {:?}, stored tensor has {shape:?}",
                self.params.get(id).shape()
            )));
        }
        self.params.replace(id, Tensor::parameter(shape.to_vec(), values)?)
    }

    fn taps(&self) -> &[Tap] {
        &self.config.taps
    }

    /// Frame-level stack for a single utterance, returning each configured
    /// tap's pooled output in tap order.
    fn pooled_taps(&self, features: &Tensor) -> Result<Vec<Tensor>> {
        if features.rank() != 2 || features.shape()[1] != self.config.input_dim {
            return Err(Error::Dimension(format!(
                "features must be [T × {}], got {:?}",
                self.config.input_dim,
                features.shape()
            )));
        }
        if features.shape()[0] < self.config.min_frames() {
            return Err(Error::DegenerateInput(format!(
                "utterance of {} frames is below the receptive field; need at least {} frames",
                features.shape()[0],
                self.config.min_frames()
            )));
        }
        let mut tap_outputs: Vec<Option<Tensor>> = vec![None; self.taps().len()];
        let mut h = features.clone();
        for (i, (tdnn, bn)) in self.tdnn_blocks.iter().enumerate() {
            h = bn.forward(&self.params, &tdnn.forward(&self.params, &h)?.relu()?, self.mode)?;
            for (slot, tap) in tap_outputs.iter_mut().zip(self.taps()) {
                if *tap == Tap::AfterTdnn(i + 1) {
                    *slot = Some(h.clone());
                }
            }
        }
        if let Some(lstm) = &self.lstm {
            let l = lstm.forward(&self.params, &h)?;
            for (slot, tap) in tap_outputs.iter_mut().zip(self.taps()) {
                if *tap == Tap::AfterLstm {
                    *slot = Some(l.clone());
                }
            }
        }
        let mut pooled = Vec::new();
        for ((tap_out, head), tap) in tap_outputs.into_iter().zip(&self.heads).zip(self.taps()) {
            let tap_out = tap_out.ok_or_else(|| {
                Error::Config(format!("tap {tap} produced no output; invalid topology"))
            })?;
            pooled.push(head.forward(&self.params, &tap_out, self.mode)?);
        }
        Ok(pooled)
    }

    /// Batched forward pass. Each sample runs the frame-level stack
    /// independently; the utterance-level stack (and its batch
    /// normalization) runs over the stacked pooled rows. Train-mode batch
    /// normalization is degenerate on a single-sample batch, so training
    /// uses M ≥ 2.
    pub fn forward_batch(&self, features: &[Tensor]) -> Result<BatchForward> {
        if features.is_empty() {
            return Err(Error::DegenerateInput("forward_batch over empty batch".into()));
        }
        let mut rows = Vec::with_capacity(features.len());
        for f in features {
            let pooled = self.pooled_taps(f)?;
            let joined = Tensor::concat(&pooled, 0)?;
            let dim = joined.numel();
            rows.push(joined.reshape(vec![1, dim])?);
        }
        let batch = Tensor::concat(&rows, 0)?;
        let z = self.utt_fc1.forward(&self.params, &batch)?;
        let a1 = self.utt_bn1.forward(&self.params, &z.relu()?, self.mode)?;
        let u2 = self.utt_fc2.forward(&self.params, &a1)?;
        let x = self.utt_bn2.forward(&self.params, &u2.relu()?, self.mode)?;
        let logits = self.classifier.forward(&self.params, &x)?;
        Ok(BatchForward { logits, z, x })
    }

    /// Single-utterance forward pass: classifier logits `[N]` plus the
    /// intermediate tensors `z` `[embedding_dim]` and `x` `[fc2_dim]`.
    pub fn forward(&self, features: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let out = self.forward_batch(std::slice::from_ref(features))?;
        Ok((
            out.logits.reshape(vec![self.config.num_speakers])?,
            out.z.reshape(vec![self.config.embedding_dim])?,
            out.x.reshape(vec![self.config.fc2_dim])?,
        ))
    }

    /// Extract the speaker embedding for a full utterance: the
    /// pre-activation output of the first utterance-level dense layer.
    /// Requires eval mode so batch normalization uses running statistics.
    pub fn extract_embedding(&self, features: &Tensor) -> Result<Vec<f64>> {
        if self.mode != Mode::Eval {
            return Err(Error::Contract(
                "extract_embedding requires eval mode; call set_mode(Mode::Eval) first".into(),
            ));
        }
        let (_, z, _) = self.forward(features)?;
        Ok(z.values().to_vec())
    }
}
