//! `mlpool`: batch pipeline for deep speaker-embedding experiments.
//!
//! Subcommand per stage: `gen-data`, `make-trials`, `train`, `extract`,
//! `backend-train`, `adapt`, `score`, `eval`. Every run writes a resolved
//! configuration snapshot next to its primary output, and primary outputs
//! are written atomically (temp file + rename).

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use mlpool_core::backend::{
    read_embeddings_binary, read_embeddings_text, write_embeddings_binary, write_embeddings_text,
    AdaptationConfig, Backend, EMBEDDING_MAGIC,
};
use mlpool_core::container::atomic_write;
use mlpool_core::data::{
    energy_vad, generate_synthetic, make_trials, mean_normalize, to_train_utterances,
    write_dataset, FeatureMatrix, Manifest, SyntheticSpec, TrialSet,
};
use mlpool_core::metrics::{
    join_scores_with_key, load_scores, write_scores, DcfParams, MetricReport,
};
use mlpool_core::model::{Embedding, ModelConfig, ModelGraph};
use mlpool_core::nn::Mode;
use mlpool_core::train::{
    load_checkpoint, save_checkpoint, LrDecay, Sgd, TrainConfig, TrainUtterance,
};

#[derive(Parser)]
#[command(name = "mlpool", version, about = "Deep speaker-embedding pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic speaker dataset (feature files + manifest).
    GenData(GenDataArgs),
    /// Build a trial list from a manifest with disjoint enroll/test pools.
    MakeTrials(MakeTrialsArgs),
    /// Train a speaker-embedding model.
    Train(Box<TrainArgs>),
    /// Extract one embedding per manifest utterance from a checkpoint.
    Extract(ExtractArgs),
    /// Train the LDA + PLDA scoring backend on labeled embeddings.
    BackendTrain(BackendTrainArgs),
    /// Adapt a trained backend on unlabeled embeddings.
    Adapt(AdaptArgs),
    /// Score trials with a backend.
    Score(ScoreArgs),
    /// Evaluate scores against a trial key (EER, minDCF).
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory (must exist unless --create is given).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    speakers: usize,
    /// Utterances per speaker.
    #[arg(long)]
    utts: usize,
    /// Frames per utterance.
    #[arg(long)]
    frames: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 43)]
    dim: usize,
    /// Speaker-separation scale (std of speaker means).
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    /// AR(1) temporal correlation in [0, 1).
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Per-frame noise scale.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Create the output directory if missing.
    #[arg(long)]
    create: bool,
}

#[derive(Args)]
struct MakeTrialsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fraction of each speaker's utterances held out as the test pool.
    #[arg(long, default_value_t = 0.5)]
    heldout: f64,
    #[arg(long)]
    targets: usize,
    #[arg(long)]
    nontargets: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Apply energy VAD using this feature column.
    #[arg(long)]
    vad_col: Option<usize>,
    /// VAD margin (threshold = mean − margin·std).
    #[arg(long, default_value_t = 0.5)]
    vad_margin: f64,
    /// Sliding-window mean normalization with this window (frames).
    #[arg(long)]
    mean_norm: Option<usize>,
}

impl PreprocessArgs {
    fn apply(&self, f: FeatureMatrix) -> anyhow::Result<FeatureMatrix> {
        let f = match self.vad_col {
            Some(col) => energy_vad(&f, col, self.vad_margin)?,
            None => f,
        };
        Ok(match self.mean_norm {
            Some(window) => mean_normalize(&f, window)?,
            None => f,
        })
    }

    fn snapshot(&self, out: &mut Vec<(String, String)>) {
        if let Some(col) = self.vad_col {
            out.push(("vad_col".into(), col.to_string()));
            out.push(("vad_margin".into(), self.vad_margin.to_string()));
        }
        if let Some(w) = self.mean_norm {
            out.push(("mean_norm".into(), w.to_string()));
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for checkpoints, the training log, and snapshots.
    #[arg(long)]
    out: PathBuf,
    /// Model topology preset.
    #[arg(long, default_value = "MP", value_parser = ["x-vector", "A", "B", "MP"])]
    model: String,
    /// Model configuration file (overrides --model and topology flags).
    #[arg(long, env = "MLPOOL_CONFIG")]
    config: Option<PathBuf>,
    /// Embedding-norm regularization weight of the training loss.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Training chunk length in frames.
    #[arg(long, default_value_t = 200)]
    chunk: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Multiply the learning rate by --lr-decay-factor every N epochs.
    #[arg(long)]
    lr_decay_every: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    lr_decay_factor: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Save an intermediate checkpoint every N epochs.
    #[arg(long)]
    ckpt_every: Option<usize>,
    // Topology overrides (applied on top of the preset or --config).
    #[arg(long)]
    input_dim: Option<usize>,
    /// TDNN stack as `filters,window,dilation;...`.
    #[arg(long)]
    tdnn: Option<String>,
    /// LSTM width per direction, or `none`.
    #[arg(long)]
    lstm_hidden: Option<String>,
    /// Pooling taps as `tdnnK,lstm,...`.
    #[arg(long)]
    taps: Option<String>,
    #[arg(long)]
    head_hidden: Option<usize>,
    /// Per-tap pooling widths as `a,b,...`.
    #[arg(long)]
    head_h2: Option<String>,
    #[arg(long)]
    emb_dim: Option<usize>,
    #[arg(long)]
    fc2_dim: Option<usize>,
    #[command(flatten)]
    preprocess: PreprocessArgs,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Output embedding file (text by default).
    #[arg(long)]
    out: PathBuf,
    /// Write the binary embedding archive instead of text.
    #[arg(long)]
    binary: bool,
    #[command(flatten)]
    preprocess: PreprocessArgs,
}

#[derive(Args)]
struct BackendTrainArgs {
    /// Embedding file (text or binary, detected by magic).
    #[arg(long)]
    embeddings: PathBuf,
    /// Manifest providing speaker labels for the embeddings.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// LDA output dimension.
    #[arg(long, default_value_t = 150)]
    lda_dim: usize,
    #[arg(long, default_value_t = 10)]
    plda_iters: usize,
    /// Disable length normalization after LDA.
    #[arg(long)]
    no_length_norm: bool,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    backend: PathBuf,
    /// Unlabeled embeddings for adaptation.
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.75)]
    alpha_w: f64,
    #[arg(long, default_value_t = 0.25)]
    alpha_b: f64,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    backend: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    trials: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scores: PathBuf,
    /// Trial key with target/nontarget labels.
    #[arg(long)]
    key: PathBuf,
    /// Operating points (repeatable).
    #[arg(long = "p-target", default_values_t = [0.01, 0.005])]
    p_targets: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    c_miss: f64,
    #[arg(long, default_value_t = 1.0)]
    c_fa: f64,
    /// Write the machine-readable report here (printed to stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::MakeTrials(args) => cmd_make_trials(args),
        Command::Train(args) => cmd_train(*args),
        Command::Extract(args) => cmd_extract(args),
        Command::BackendTrain(args) => cmd_backend_train(args),
        Command::Adapt(args) => cmd_adapt(args),
        Command::Score(args) => cmd_score(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

/// Write the resolved-configuration snapshot for a run.
fn write_snapshot(path: &Path, command: &str, entries: &[(String, String)]) -> anyhow::Result<()> {
    let mut text = format!("command = {command}\n");
    for (k, v) in entries {
        text.push_str(&format!("{k} = {v}\n"));
    }
    atomic_write(path, text.as_bytes())?;
    Ok(())
}

/// Snapshot path for a file-valued primary output.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.push_str(suffix);
    path.with_file_name(name)
}

fn cmd_gen_data(args: GenDataArgs) -> anyhow::Result<()> {
    if !args.out.exists() {
        if args.create {
            std::fs::create_dir_all(&args.out)
                .with_context(|| format!("creating {}", args.out.display()))?;
        } else {
            bail!(
                "output directory {} does not exist (pass --create to make it)",
                args.out.display()
            );
        }
    }
    let spec = SyntheticSpec {
        num_speakers: args.speakers,
        utts_per_speaker: args.utts,
        frames: args.frames,
        dim: args.dim,
        separation: args.separation,
        rho: args.rho,
        noise: args.noise,
        seed: args.seed,
    };
    let utts = generate_synthetic(&spec)?;
    write_dataset(&utts, &args.out)?;
    write_snapshot(
        &args.out.join("run-config.txt"),
        "gen-data",
        &[
            ("out".into(), args.out.display().to_string()),
            ("speakers".into(), args.speakers.to_string()),
            ("utts".into(), args.utts.to_string()),
            ("frames".into(), args.frames.to_string()),
            ("dim".into(), args.dim.to_string()),
            ("separation".into(), args.separation.to_string()),
            ("rho".into(), args.rho.to_string()),
            ("noise".into(), args.noise.to_string()),
            ("seed".into(), args.seed.to_string()),
        ],
    )?;
    println!(
        "wrote {} utterances ({} speakers × {}) to {}",
        utts.len(),
        args.speakers,
        args.utts,
        args.out.display()
    );
    Ok(())
}

fn cmd_make_trials(args: MakeTrialsArgs) -> anyhow::Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let trials = make_trials(&manifest, args.heldout, args.targets, args.nontargets, args.seed)?;
    trials.write(&args.out)?;
    write_snapshot(
        &sidecar(&args.out, ".config"),
        "make-trials",
        &[
            ("manifest".into(), args.manifest.display().to_string()),
            ("out".into(), args.out.display().to_string()),
            ("heldout".into(), args.heldout.to_string()),
            ("targets".into(), args.targets.to_string()),
            ("nontargets".into(), args.nontargets.to_string()),
            ("seed".into(), args.seed.to_string()),
        ],
    )?;
    println!("wrote {} trials to {}", trials.trials.len(), args.out.display());
    Ok(())
}

fn resolve_model_config(args: &TrainArgs, num_speakers: usize) -> anyhow::Result<ModelConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            ModelConfig::parse(&text)?
        }
        None => ModelConfig::preset(&args.model, num_speakers)?,
    };
    cfg.num_speakers = num_speakers;
    if let Some(d) = args.input_dim {
        cfg.input_dim = d;
    }
    if let Some(t) = &args.tdnn {
        cfg.tdnn = ModelConfig::parse_tdnn_field(t)?;
    }
    if let Some(l) = &args.lstm_hidden {
        cfg.lstm_hidden = if l == "none" {
            None
        } else {
            Some(l.parse().map_err(|_| anyhow::anyhow!("bad --lstm-hidden {l:?}"))?)
        };
    }
    if let Some(t) = &args.taps {
        cfg.taps = ModelConfig::parse_taps_field(t)?;
    }
    if let Some(h) = args.head_hidden {
        cfg.head_hidden = h;
    }
    if let Some(h) = &args.head_h2 {
        cfg.head_h2 = ModelConfig::parse_h2_field(h)?;
    }
    if let Some(d) = args.emb_dim {
        cfg.embedding_dim = d;
    }
    if let Some(d) = args.fc2_dim {
        cfg.fc2_dim = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let manifest = Manifest::load(&args.manifest)?;
    let speakers = manifest.speakers();
    if speakers.len() < 2 {
        bail!("training needs at least 2 speakers, manifest has {}", speakers.len());
    }
    let features = manifest.load_features()?;
    let features: Vec<(String, FeatureMatrix)> = features
        .into_iter()
        .map(|(spk, f)| Ok((spk, args.preprocess.apply(f)?)))
        .collect::<anyhow::Result<_>>()?;
    let dataset: Vec<TrainUtterance> = to_train_utterances(&features, &speakers)?;

    let model_cfg = resolve_model_config(&args, speakers.len())?;
    if let Some(first) = dataset.first() {
        if first.dim != model_cfg.input_dim {
            bail!(
                "manifest features have dimension {}, model expects {} (use --input-dim)",
                first.dim,
                model_cfg.input_dim
            );
        }
    }
    let train_cfg = TrainConfig {
        epochs: args.epochs,
        chunk_len: args.chunk,
        batch_size: args.batch,
        lr: args.lr,
        momentum: args.momentum,
        lambda: args.lambda,
        lr_decay: args
            .lr_decay_every
            .map(|every| LrDecay { every_epochs: every, factor: args.lr_decay_factor }),
        seed: args.seed,
    };

    let mut snapshot: Vec<(String, String)> = vec![
        ("manifest".into(), args.manifest.display().to_string()),
        ("out".into(), args.out.display().to_string()),
        ("lambda".into(), args.lambda.to_string()),
        ("epochs".into(), args.epochs.to_string()),
        ("batch".into(), args.batch.to_string()),
        ("chunk".into(), args.chunk.to_string()),
        ("lr".into(), args.lr.to_string()),
        ("momentum".into(), args.momentum.to_string()),
        ("seed".into(), args.seed.to_string()),
        ("num_speakers".into(), speakers.len().to_string()),
    ];
    if let Some(every) = args.lr_decay_every {
        snapshot.push(("lr_decay_every".into(), every.to_string()));
        snapshot.push(("lr_decay_factor".into(), args.lr_decay_factor.to_string()));
    }
    args.preprocess.snapshot(&mut snapshot);
    for line in model_cfg.to_text().lines() {
        let (k, v) = line.split_once('=').expect("config lines are key = value");
        snapshot.push((format!("model.{}", k.trim()), v.trim().to_string()));
    }
    write_snapshot(&args.out.join("run-config.txt"), "train", &snapshot)?;

    let mut model = ModelGraph::build(model_cfg, args.seed)?;
    let mut opt = Sgd::new(args.lr, args.momentum)?;
    let mut log_lines = String::new();
    let ckpt_every = args.ckpt_every;
    let out_dir = args.out.clone();
    let summary = mlpool_core::train::train_loop(
        &mut model,
        &mut opt,
        &dataset,
        &train_cfg,
        |ev| {
            let line = format!(
                "epoch={} step={} loss={} mean_z_norm={}",
                ev.epoch, ev.step, ev.loss, ev.mean_z_norm
            );
            println!("{line}");
            log_lines.push_str(&line);
            log_lines.push('\n');
        },
        |epoch, model, opt| {
            if let Some(every) = ckpt_every {
                if epoch % every == 0 {
                    save_checkpoint(model, opt, epoch as u64, &out_dir.join(format!("epoch{epoch}.ckpt")))?;
                }
            }
            Ok(())
        },
    )?;
    save_checkpoint(&model, &opt, summary.steps as u64, &args.out.join("final.ckpt"))?;
    atomic_write(&args.out.join("train.log"), log_lines.as_bytes())?;
    println!(
        "trained {} epochs ({} steps), final epoch loss {}",
        summary.epochs_run, summary.steps, summary.final_epoch_loss
    );
    Ok(())
}

fn cmd_extract(args: ExtractArgs) -> anyhow::Result<()> {
    let (mut model, _, _) = load_checkpoint(&args.checkpoint)?;
    model.set_mode(Mode::Eval);
    let manifest = Manifest::load(&args.manifest)?;
    let min_frames = model.config().min_frames();

    let mut embeddings = Vec::new();
    let mut skipped = String::new();
    for record in &manifest.records {
        let feat = mlpool_core::data::read_features(&record.path, record.utterance_id.clone())?;
        let feat = args.preprocess.apply(feat)?;
        if feat.frames < min_frames {
            log::warn!(
                "skipping utterance {:?}: {} frames after preprocessing, need {min_frames}",
                record.utterance_id,
                feat.frames
            );
            skipped.push_str(&format!(
                "{} {} frames, need {min_frames}\n",
                record.utterance_id, feat.frames
            ));
            continue;
        }
        let vector = model.extract_embedding(&feat.to_tensor()?)?;
        embeddings.push(Embedding { utterance_id: record.utterance_id.clone(), vector });
    }
    if args.binary {
        write_embeddings_binary(&embeddings, &args.out)?;
    } else {
        write_embeddings_text(&embeddings, &args.out)?;
    }
    atomic_write(&sidecar(&args.out, ".skipped"), skipped.as_bytes())?;
    let mut snapshot = vec![
        ("checkpoint".into(), args.checkpoint.display().to_string()),
        ("manifest".into(), args.manifest.display().to_string()),
        ("out".into(), args.out.display().to_string()),
        ("binary".into(), args.binary.to_string()),
    ];
    args.preprocess.snapshot(&mut snapshot);
    write_snapshot(&sidecar(&args.out, ".config"), "extract", &snapshot)?;
    println!(
        "extracted {} embeddings to {} ({} skipped)",
        embeddings.len(),
        args.out.display(),
        skipped.lines().count()
    );
    Ok(())
}

/// Load embeddings from either format, detected by the container magic.
fn load_embeddings(path: &Path) -> anyhow::Result<Vec<Embedding>> {
    let mut head = [0u8; 4];
    {
        use std::io::Read;
        let mut f = std::fs::File::open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        let n = f.read(&mut head)?;
        if n < 4 {
            bail!("embedding file {} is too short", path.display());
        }
    }
    if head == EMBEDDING_MAGIC {
        Ok(read_embeddings_binary(path)?)
    } else {
        Ok(read_embeddings_text(path)?)
    }
}

fn cmd_backend_train(args: BackendTrainArgs) -> anyhow::Result<()> {
    let embeddings = load_embeddings(&args.embeddings)?;
    let manifest = Manifest::load(&args.manifest)?;
    let speakers = manifest.speakers();
    let mut labeled = Vec::with_capacity(embeddings.len());
    for e in &embeddings {
        let record = manifest
            .records
            .iter()
            .find(|r| r.utterance_id == e.utterance_id)
            .ok_or_else(|| {
                anyhow::anyhow!("embedding {:?} is not in the manifest", e.utterance_id)
            })?;
        let class = speakers.iter().position(|s| *s == record.speaker_id).expect("speaker known");
        labeled.push((e.vector.clone(), class));
    }
    let backend = Backend::train(&labeled, args.lda_dim, args.plda_iters, !args.no_length_norm)?;
    backend.save(&args.out)?;
    write_snapshot(
        &sidecar(&args.out, ".config"),
        "backend-train",
        &[
            ("embeddings".into(), args.embeddings.display().to_string()),
            ("manifest".into(), args.manifest.display().to_string()),
            ("out".into(), args.out.display().to_string()),
            ("lda_dim".into(), args.lda_dim.to_string()),
            ("plda_iters".into(), args.plda_iters.to_string()),
            ("length_norm".into(), (!args.no_length_norm).to_string()),
        ],
    )?;
    println!(
        "trained backend on {} embeddings from {} speakers; wrote {}",
        labeled.len(),
        speakers.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_adapt(args: AdaptArgs) -> anyhow::Result<()> {
    let backend = Backend::load(&args.backend)?;
    let embeddings = load_embeddings(&args.embeddings)?;
    let vectors: Vec<Vec<f64>> = embeddings.into_iter().map(|e| e.vector).collect();
    let cfg = AdaptationConfig { within_scale: args.alpha_w, between_scale: args.alpha_b };
    let adapted = backend.adapt(&vectors, &cfg)?;
    adapted.save(&args.out)?;
    write_snapshot(
        &sidecar(&args.out, ".config"),
        "adapt",
        &[
            ("backend".into(), args.backend.display().to_string()),
            ("embeddings".into(), args.embeddings.display().to_string()),
            ("out".into(), args.out.display().to_string()),
            ("alpha_w".into(), args.alpha_w.to_string()),
            ("alpha_b".into(), args.alpha_b.to_string()),
        ],
    )?;
    println!("adapted backend on {} vectors; wrote {}", vectors.len(), args.out.display());
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> anyhow::Result<()> {
    let backend = Backend::load(&args.backend)?;
    let embeddings = load_embeddings(&args.embeddings)?;
    let trials = TrialSet::load(&args.trials)?;
    let known: HashSet<String> = embeddings.iter().map(|e| e.utterance_id.clone()).collect();
    trials.validate_against(&known)?;

    // Project every embedding once.
    let mut prepared: Vec<(String, Vec<f64>)> = Vec::with_capacity(embeddings.len());
    for e in &embeddings {
        prepared.push((e.utterance_id.clone(), backend.prepare(&e.vector)?));
    }
    let lookup = |id: &str| -> &Vec<f64> {
        &prepared.iter().find(|(u, _)| u == id).expect("validated above").1
    };
    let scorer = backend.plda.scorer()?;
    let mut records = Vec::with_capacity(trials.trials.len());
    for t in &trials.trials {
        let s = scorer.score(lookup(&t.enroll), lookup(&t.test))?;
        records.push((t.enroll.clone(), t.test.clone(), s));
    }
    write_scores(&records, &args.out)?;
    write_snapshot(
        &sidecar(&args.out, ".config"),
        "score",
        &[
            ("backend".into(), args.backend.display().to_string()),
            ("embeddings".into(), args.embeddings.display().to_string()),
            ("trials".into(), args.trials.display().to_string()),
            ("out".into(), args.out.display().to_string()),
        ],
    )?;
    println!("scored {} trials to {}", records.len(), args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let scores = load_scores(&args.scores)?;
    let key = TrialSet::load(&args.key)?;
    let set = join_scores_with_key(&scores, &key)?;
    let params = args
        .p_targets
        .iter()
        .map(|&p| DcfParams::new(p, args.c_miss, args.c_fa))
        .collect::<mlpool_core::Result<Vec<_>>>()?;
    let report = MetricReport::compute(&set, &params);
    print!("{}", report.human());
    if let Some(out) = &args.out {
        atomic_write(out, report.key_values().as_bytes())?;
        write_snapshot(
            &sidecar(out, ".config"),
            "eval",
            &[
                ("scores".into(), args.scores.display().to_string()),
                ("key".into(), args.key.display().to_string()),
                (
                    "p_targets".into(),
                    args.p_targets.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
                ),
                ("c_miss".into(), args.c_miss.to_string()),
                ("c_fa".into(), args.c_fa.to_string()),
                ("out".into(), out.display().to_string()),
            ],
        )?;
    } else {
        print!("{}", report.key_values());
    }
    Ok(())
}
