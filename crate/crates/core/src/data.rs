//! Feature ingestion, energy VAD, sliding-window mean normalization,
//! synthetic speaker-data generation, manifests, and trial lists.
//!
//! Feature container layout (little endian):
//!
//! ```text
//! magic "EMBK"   4 bytes
//! version        u32
//! frames (T)     u32
//! dim (d)        u32
//! values         T·d f32, row-major
//! checksum       u64 FNV-1a over every preceding byte
//! ```
//!
//! Values are stored at 32-bit precision and promoted to 64 bits in memory.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::container::{atomic_write, fnv1a64};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::TrainUtterance;

pub const FEATURE_MAGIC: [u8; 4] = *b"EMBK";
pub const FEATURE_VERSION: u32 = 1;
/// Frame period metadata; features are assumed to be 10 ms hop.
pub const FRAME_PERIOD_MS: u32 = 10;

/// One utterance's acoustic features: a `T × d` real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub utterance_id: String,
    pub frames: usize,
    pub dim: usize,
    pub values: Vec<f64>,
    pub frame_period_ms: u32,
}

impl FeatureMatrix {
    pub fn new(
        utterance_id: impl Into<String>,
        frames: usize,
        dim: usize,
        values: Vec<f64>,
    ) -> Result<FeatureMatrix> {
        if frames == 0 || dim == 0 {
            return Err(Error::DegenerateInput("feature matrix must be at least 1×1".into()));
        }
        if values.len() != frames * dim {
            return Err(Error::Dimension(format!(
                "feature matrix {frames}×{dim} needs {} values, got {}",
                frames * dim,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite feature value {v}")));
        }
        Ok(FeatureMatrix {
            utterance_id: utterance_id.into(),
            frames,
            dim,
            values,
            frame_period_ms: FRAME_PERIOD_MS,
        })
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_values(vec![self.frames, self.dim], self.values.clone())
    }

    /// Serialize to the binary feature container (32-bit storage).
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(16 + 4 * self.values.len() + 8);
        out.extend_from_slice(&FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for &v in &self.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let checksum = fnv1a64(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        atomic_write(path, &out)
    }
}

/// Load a feature container, assigning the given utterance id.
pub fn read_features(path: &Path, utterance_id: impl Into<String>) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 + 8 {
        return Err(Error::Truncated(format!(
            "feature file {} holds only {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    if bytes[..4] != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            expected: FEATURE_MAGIC,
            found: [bytes[0], bytes[1], bytes[2], bytes[3]],
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FEATURE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let frames = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let expected_len = 16 + 4 * frames * dim + 8;
    if bytes.len() < expected_len {
        return Err(Error::Truncated(format!(
            "feature file declares {frames}×{dim} but holds {} of {expected_len} bytes",
            bytes.len()
        )));
    }
    let body = expected_len - 8;
    let stored = u64::from_le_bytes(bytes[body..expected_len].try_into().expect("8 bytes"));
    let computed = fnv1a64(&bytes[..body]);
    if stored != computed || bytes.len() != expected_len {
        return Err(Error::Checksum { stored, computed });
    }
    let mut values = Vec::with_capacity(frames * dim);
    for chunk in bytes[16..body].chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64);
    }
    FeatureMatrix::new(utterance_id, frames, dim, values)
}

// ── Preprocessing ───────────────────────────────────────────────────

/// Energy-based voice activity detection: keep frames whose energy column
/// is at least `mean − margin·std` (population std) of the utterance.
/// Ties with the threshold are kept; frame order is preserved.
pub fn energy_vad(f: &FeatureMatrix, energy_col: usize, margin: f64) -> Result<FeatureMatrix> {
    if energy_col >= f.dim {
        return Err(Error::Dimension(format!(
            "energy column {energy_col} out of range for dim {}",
            f.dim
        )));
    }
    let energies: Vec<f64> = (0..f.frames).map(|t| f.row(t)[energy_col]).collect();
    let mean = energies.iter().sum::<f64>() / f.frames as f64;
    let var = energies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / f.frames as f64;
    let threshold = mean - margin * var.sqrt();
    let kept: Vec<usize> = (0..f.frames).filter(|&t| energies[t] >= threshold).collect();
    if kept.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "energy VAD removed every frame (threshold {threshold})"
        )));
    }
    let mut values = Vec::with_capacity(kept.len() * f.dim);
    for &t in &kept {
        values.extend_from_slice(f.row(t));
    }
    FeatureMatrix::new(f.utterance_id.clone(), kept.len(), f.dim, values)
}

/// Per-utterance sliding-window mean normalization. Each frame subtracts the
/// mean of a centered window of up to `window` frames; at the edges the
/// window shifts inward so it always spans `min(window, T)` frames.
pub fn mean_normalize(f: &FeatureMatrix, window: usize) -> Result<FeatureMatrix> {
    if window == 0 {
        return Err(Error::Config("mean normalization window must be ≥ 1".into()));
    }
    let span = window.min(f.frames);
    let mut values = Vec::with_capacity(f.values.len());
    for t in 0..f.frames {
        let lo = t.saturating_sub(window / 2).min(f.frames - span);
        let hi = lo + span;
        let mut mean = vec![0.0; f.dim];
        for row in lo..hi {
            for (m, &v) in mean.iter_mut().zip(f.row(row)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= span as f64;
        }
        for (d, &v) in f.row(t).iter().enumerate() {
            values.push(v - mean[d]);
        }
    }
    FeatureMatrix::new(f.utterance_id.clone(), f.frames, f.dim, values)
}

// ── Synthetic data ──────────────────────────────────────────────────

/// Parameters for the synthetic speaker generator. Speaker `s` draws a mean
/// `m_s ~ N(0, separation²·I)`; utterance frames follow the AR(1) process
/// `x_t = m_s + rho·(x_{t−1} − m_s) + noise·η_t` with `x_{−1} = m_s`.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    pub frames: usize,
    pub dim: usize,
    pub separation: f64,
    pub rho: f64,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers == 0 || self.utts_per_speaker == 0 || self.frames == 0 || self.dim == 0
        {
            return Err(Error::Config("synthetic spec counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must be in [0, 1), got {}", self.rho)));
        }
        if self.separation < 0.0 || self.noise < 0.0 {
            return Err(Error::Config("separation and noise must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn speaker_id(s: usize) -> String {
    format!("spk{s:04}")
}

pub fn utterance_id(s: usize, u: usize) -> String {
    format!("spk{s:04}_utt{u:04}")
}

/// Generate the full synthetic dataset in memory, deterministically for a
/// fixed seed. Returns `(speaker_id, features)` pairs in generation order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<(String, FeatureMatrix)>> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.num_speakers * spec.utts_per_speaker);
    for s in 0..spec.num_speakers {
        let mean: Vec<f64> =
            (0..spec.dim).map(|_| spec.separation * rng.sample::<f64, _>(StandardNormal)).collect();
        for u in 0..spec.utts_per_speaker {
            let mut values = Vec::with_capacity(spec.frames * spec.dim);
            let mut prev: Vec<f64> = mean.clone();
            for _ in 0..spec.frames {
                let mut frame = Vec::with_capacity(spec.dim);
                for d in 0..spec.dim {
                    let eta: f64 = rng.sample(StandardNormal);
                    let x = mean[d] + spec.rho * (prev[d] - mean[d]) + spec.noise * eta;
                    frame.push(x);
                }
                values.extend_from_slice(&frame);
                prev = frame;
            }
            out.push((
                speaker_id(s),
                FeatureMatrix::new(utterance_id(s, u), spec.frames, spec.dim, values)?,
            ));
        }
    }
    Ok(out)
}

// ── Manifest ────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub path: PathBuf,
}

/// Text manifest: one `utterance-id speaker-id path` line per utterance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn push(&mut self, utterance_id: String, speaker_id: String, path: PathBuf) -> Result<()> {
        if self.records.iter().any(|r| r.utterance_id == utterance_id) {
            return Err(Error::Config(format!("duplicate utterance id {utterance_id:?}")));
        }
        self.records.push(ManifestRecord { utterance_id, speaker_id, path });
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!("{} {} {}\n", r.utterance_id, r.speaker_id, r.path.display()));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_text().as_bytes())
    }

    /// Parse a manifest and verify that every feature path resolves.
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut manifest = Manifest::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (utt, spk, p) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(u), Some(s), Some(p), None) => (u, s, p),
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("expected 'utterance-id speaker-id path', got {line:?}"),
                    })
                }
            };
            let feature_path = {
                let p = PathBuf::from(p);
                if p.is_absolute() {
                    p
                } else {
                    base.join(p)
                }
            };
            if !feature_path.exists() {
                return Err(Error::Reference(format!(
                    "feature file {} (utterance {utt:?}) does not exist",
                    feature_path.display()
                )));
            }
            manifest
                .push(utt.to_string(), spk.to_string(), feature_path)
                .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        }
        Ok(manifest)
    }

    /// Unique speaker ids in sorted order; the index in this list is the
    /// training class label.
    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self
            .records
            .iter()
            .map(|r| r.speaker_id.clone())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        s.sort();
        s
    }

    /// Load every feature file named by the manifest.
    pub fn load_features(&self) -> Result<Vec<(String, FeatureMatrix)>> {
        self.records
            .iter()
            .map(|r| {
                Ok((r.speaker_id.clone(), read_features(&r.path, r.utterance_id.clone())?))
            })
            .collect()
    }
}

/// Write a dataset to disk: one feature container per utterance plus a
/// manifest ("manifest.txt") naming them, all under `dir`.
pub fn write_dataset(utts: &[(String, FeatureMatrix)], dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Manifest::default();
    for (speaker, feat) in utts {
        let file = format!("{}.feat", feat.utterance_id);
        let path = dir.join(&file);
        feat.write(&path)?;
        manifest.push(feat.utterance_id.clone(), speaker.clone(), PathBuf::from(file))?;
    }
    manifest.write(&dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// Convert loaded features into training utterances, mapping speaker ids to
/// class indices by sorted order.
pub fn to_train_utterances(
    items: &[(String, FeatureMatrix)],
    speakers: &[String],
) -> Result<Vec<TrainUtterance>> {
    items
        .iter()
        .map(|(spk, feat)| {
            let speaker = speakers
                .iter()
                .position(|s| s == spk)
                .ok_or_else(|| Error::Reference(format!("unknown speaker id {spk:?}")))?;
            Ok(TrainUtterance {
                speaker,
                frames: feat.frames,
                dim: feat.dim,
                values: feat.values.clone(),
            })
        })
        .collect()
}

// ── Trials ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub target: bool,
}

/// Enrollment–test pairs with target/nontarget labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
}

impl TrialSet {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.trials {
            let label = if t.target { "target" } else { "nontarget" };
            out.push_str(&format!("{} {} {}\n", t.enroll, t.test, label));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<TrialSet> {
        let text = std::fs::read_to_string(path)?;
        let mut trials = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(e), Some(t), Some("target"), None) => {
                    trials.push(Trial { enroll: e.into(), test: t.into(), target: true })
                }
                (Some(e), Some(t), Some("nontarget"), None) => {
                    trials.push(Trial { enroll: e.into(), test: t.into(), target: false })
                }
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!(
                            "expected 'enroll-id test-id target|nontarget', got {line:?}"
                        ),
                    })
                }
            }
        }
        Ok(TrialSet { trials })
    }

    /// Verify every referenced utterance id is known.
    pub fn validate_against(&self, known: &HashSet<String>) -> Result<()> {
        for t in &self.trials {
            for id in [&t.enroll, &t.test] {
                if !known.contains(id) {
                    return Err(Error::Reference(format!(
                        "trial references unknown utterance id {id:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Build a trial set from a manifest. Each speaker's utterances are split
/// into a disjoint enrollment pool and test pool (`heldout_split` is the
/// test-pool fraction), so no utterance is ever paired with itself. Target
/// and nontarget pairs are sampled without replacement.
pub fn make_trials(
    manifest: &Manifest,
    heldout_split: f64,
    num_targets: usize,
    num_nontargets: usize,
    seed: u64,
) -> Result<TrialSet> {
    if heldout_split <= 0.0 || heldout_split >= 1.0 {
        return Err(Error::Config(format!(
            "heldout split must be in (0, 1), got {heldout_split}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let speakers = manifest.speakers();
    // Per-speaker utterance lists in manifest order.
    let mut per_speaker: Vec<Vec<&str>> = vec![Vec::new(); speakers.len()];
    for r in &manifest.records {
        let idx = speakers.iter().position(|s| *s == r.speaker_id).expect("speaker present");
        per_speaker[idx].push(&r.utterance_id);
    }
    let mut enroll_pools: Vec<Vec<&str>> = Vec::new();
    let mut test_pools: Vec<Vec<&str>> = Vec::new();
    for utts in per_speaker.iter_mut() {
        if utts.len() < 2 {
            // A single-utterance speaker cannot form a disjoint pair.
            enroll_pools.push(Vec::new());
            test_pools.push(Vec::new());
            continue;
        }
        utts.shuffle(&mut rng);
        let n_test = ((utts.len() as f64 * heldout_split).round() as usize)
            .clamp(1, utts.len() - 1);
        test_pools.push(utts[..n_test].to_vec());
        enroll_pools.push(utts[n_test..].to_vec());
    }

    let mut target_pairs = Vec::new();
    for s in 0..speakers.len() {
        for &e in &enroll_pools[s] {
            for &t in &test_pools[s] {
                target_pairs.push((e, t));
            }
        }
    }
    let mut nontarget_pairs = Vec::new();
    for s_e in 0..speakers.len() {
        for s_t in 0..speakers.len() {
            if s_e == s_t {
                continue;
            }
            for &e in &enroll_pools[s_e] {
                for &t in &test_pools[s_t] {
                    nontarget_pairs.push((e, t));
                }
            }
        }
    }
    if target_pairs.len() < num_targets {
        return Err(Error::DegenerateInput(format!(
            "requested {num_targets} target trials but only {} pairs exist",
            target_pairs.len()
        )));
    }
    if nontarget_pairs.len() < num_nontargets {
        return Err(Error::DegenerateInput(format!(
            "requested {num_nontargets} nontarget trials but only {} pairs exist",
            nontarget_pairs.len()
        )));
    }
    target_pairs.shuffle(&mut rng);
    nontarget_pairs.shuffle(&mut rng);
    let mut trials = Vec::with_capacity(num_targets + num_nontargets);
    for &(e, t) in &target_pairs[..num_targets] {
        trials.push(Trial { enroll: e.into(), test: t.into(), target: true });
    }
    for &(e, t) in &nontarget_pairs[..num_nontargets] {
        trials.push(Trial { enroll: e.into(), test: t.into(), target: false });
    }
    Ok(TrialSet { trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_features(seed: u64, frames: usize, dim: usize) -> FeatureMatrix {
        let mut r = ChaCha12Rng::seed_from_u64(seed);
        let values = (0..frames * dim).map(|_| r.random_range(-5.0..5.0)).collect();
        FeatureMatrix::new("utt", frames, dim, values).unwrap()
    }

    #[test]
    fn feature_round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.feat");
        let f = random_features(1, 100, 43);
        f.write(&path).unwrap();
        let g = read_features(&path, "utt").unwrap();
        assert_eq!(g.frames, 100);
        assert_eq!(g.dim, 43);
        for (a, b) in f.values.iter().zip(&g.values) {
            assert_eq!(*a as f32, *b as f32);
            assert_eq!(*b, (*a as f32) as f64); // promoted exactly
        }
        // Writing the loaded copy reproduces the file byte for byte.
        let path2 = dir.path().join("b.feat");
        g.write(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn feature_minimal_and_error_surfaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.feat");
        let f = FeatureMatrix::new("one", 1, 1, vec![0.25]).unwrap();
        f.write(&path).unwrap();
        assert_eq!(read_features(&path, "one").unwrap().values, vec![0.25]);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(read_features(&path, "one"), Err(Error::Truncated(_))));

        let mut corrupt = bytes.clone();
        corrupt[17] ^= 0x40;
        std::fs::write(&path, &corrupt).unwrap();
        assert!(matches!(read_features(&path, "one"), Err(Error::Checksum { .. })));

        let mut badmagic = bytes.clone();
        badmagic[0] = b'X';
        std::fs::write(&path, &badmagic).unwrap();
        assert!(matches!(read_features(&path, "one"), Err(Error::BadMagic { .. })));

        let mut badver = bytes;
        badver[4] = 9;
        std::fs::write(&path, &badver).unwrap();
        assert!(matches!(read_features(&path, "one"), Err(Error::UnsupportedVersion(9))));
    }

    #[test]
    fn vad_keeps_all_frames_at_zero_variance() {
        let f = FeatureMatrix::new("u", 4, 2, vec![1.0, 3.0, 2.0, 3.0, 3.0, 3.0, 4.0, 3.0])
            .unwrap();
        let kept = energy_vad(&f, 1, 0.5).unwrap();
        assert_eq!(kept.frames, 4);
        assert_eq!(kept.values, f.values);
    }

    #[test]
    fn vad_bimodal_keeps_high_half() {
        let mut values = Vec::new();
        for t in 0..8 {
            values.push(t as f64);
            values.push(if t % 2 == 0 { 10.0 } else { 0.0 });
        }
        let f = FeatureMatrix::new("u", 8, 2, values).unwrap();
        let kept = energy_vad(&f, 1, 0.0).unwrap();
        assert_eq!(kept.frames, 4);
        for t in 0..4 {
            assert_eq!(kept.row(t)[1], 10.0);
            assert_eq!(kept.row(t)[0] % 2.0, 0.0); // order preserved
        }
    }

    #[test]
    fn vad_matches_direct_filter_oracle() {
        let f = random_features(2, 50, 3);
        let margin = 0.5;
        let col = 2;
        let kept = energy_vad(&f, col, margin).unwrap();
        let energies: Vec<f64> = (0..50).map(|t| f.row(t)[col]).collect();
        let mean = energies.iter().sum::<f64>() / 50.0;
        let sd = (energies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 50.0).sqrt();
        let threshold = mean - margin * sd;
        let expected: Vec<usize> = (0..50).filter(|&t| energies[t] >= threshold).collect();
        assert_eq!(kept.frames, expected.len());
        for (out_t, &src_t) in expected.iter().enumerate() {
            assert_eq!(kept.row(out_t), f.row(src_t));
        }
    }

    #[test]
    fn vad_can_remove_everything_with_negative_margin() {
        let f = random_features(3, 10, 2);
        assert!(matches!(energy_vad(&f, 0, -100.0), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn mean_normalize_centers_short_utterance_exactly() {
        // window ≥ T: every frame subtracts the global mean.
        let f = random_features(4, 20, 3);
        let n = mean_normalize(&f, 300).unwrap();
        for d in 0..3 {
            let col_mean: f64 = (0..20).map(|t| n.row(t)[d]).sum::<f64>() / 20.0;
            assert!(col_mean.abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_deterministic_and_ar_structure() {
        let spec = SyntheticSpec {
            num_speakers: 3,
            utts_per_speaker: 2,
            frames: 400,
            dim: 4,
            separation: 1.0,
            rho: 0.0,
            noise: 0.5,
            seed: 9,
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, b);

        // With rho = 0 the per-utterance frame mean approaches the speaker
        // mean: both utterances of one speaker should agree within
        // 3·noise/√T per dimension of twice that bound.
        let bound = 2.0 * 3.0 * spec.noise / (spec.frames as f64).sqrt();
        let mean_of = |f: &FeatureMatrix| -> Vec<f64> {
            let mut m = vec![0.0; f.dim];
            for t in 0..f.frames {
                for (mm, &v) in m.iter_mut().zip(f.row(t)) {
                    *mm += v;
                }
            }
            m.iter().map(|v| v / f.frames as f64).collect()
        };
        let m0 = mean_of(&a[0].1);
        let m1 = mean_of(&a[1].1);
        for (x, y) in m0.iter().zip(&m1) {
            assert!((x - y).abs() < bound, "{x} vs {y} (bound {bound})");
        }
    }

    #[test]
    fn synthetic_files_are_byte_identical_across_runs() {
        let spec = SyntheticSpec {
            num_speakers: 2,
            utts_per_speaker: 2,
            frames: 30,
            dim: 5,
            separation: 1.0,
            rho: 0.5,
            noise: 1.0,
            seed: 4,
        };
        let dir = tempfile::tempdir().unwrap();
        let d1 = dir.path().join("run1");
        let d2 = dir.path().join("run2");
        write_dataset(&generate_synthetic(&spec).unwrap(), &d1).unwrap();
        write_dataset(&generate_synthetic(&spec).unwrap(), &d2).unwrap();
        for entry in std::fs::read_dir(&d1).unwrap() {
            let name = entry.unwrap().file_name();
            let x = std::fs::read(d1.join(&name)).unwrap();
            let y = std::fs::read(d2.join(&name)).unwrap();
            assert_eq!(x, y, "{name:?} differs");
        }
    }

    #[test]
    fn manifest_round_trip_and_missing_path() {
        let spec = SyntheticSpec {
            num_speakers: 2,
            utts_per_speaker: 1,
            frames: 10,
            dim: 2,
            separation: 1.0,
            rho: 0.0,
            noise: 1.0,
            seed: 1,
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&generate_synthetic(&spec).unwrap(), dir.path()).unwrap();
        let loaded = Manifest::load(&dir.path().join("manifest.txt")).unwrap();
        assert_eq!(loaded.records.len(), manifest.records.len());
        assert_eq!(loaded.speakers(), vec!["spk0000".to_string(), "spk0001".to_string()]);

        std::fs::remove_file(&loaded.records[0].path).unwrap();
        assert!(matches!(
            Manifest::load(&dir.path().join("manifest.txt")),
            Err(Error::Reference(_))
        ));
    }

    #[test]
    fn trial_parse_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.txt");
        std::fs::write(&path, "u1 u2 target\nu1 u3 nontarget\n").unwrap();
        let t = TrialSet::load(&path).unwrap();
        assert_eq!(t.trials.len(), 2);
        assert!(t.trials[0].target);
        assert!(!t.trials[1].target);

        let out = dir.path().join("copy.txt");
        t.write(&out).unwrap();
        assert_eq!(TrialSet::load(&out).unwrap(), t);

        std::fs::write(&path, "u1 u2 target\nu1 bogus\n").unwrap();
        match TrialSet::load(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error on line 2, got {other:?}"),
        }
    }

    #[test]
    fn make_trials_two_by_two() {
        let spec = SyntheticSpec {
            num_speakers: 2,
            utts_per_speaker: 2,
            frames: 5,
            dim: 2,
            separation: 1.0,
            rho: 0.0,
            noise: 1.0,
            seed: 2,
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&generate_synthetic(&spec).unwrap(), dir.path()).unwrap();
        let trials = make_trials(&manifest, 0.5, 2, 2, 11).unwrap();
        assert_eq!(trials.trials.len(), 4);
        let spk = |utt: &str| utt.split('_').next().unwrap().to_string();
        for t in &trials.trials {
            assert_ne!(t.enroll, t.test);
            assert_eq!(t.target, spk(&t.enroll) == spk(&t.test));
        }
        // Oversampling is a degenerate-input error.
        assert!(matches!(make_trials(&manifest, 0.5, 3, 2, 11), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn trials_validate_against_known_ids() {
        let t = TrialSet {
            trials: vec![Trial { enroll: "a".into(), test: "b".into(), target: true }],
        };
        let known: HashSet<String> = ["a".to_string(), "b".to_string()].into_iter().collect();
        t.validate_against(&known).unwrap();
        let partial: HashSet<String> = ["a".to_string()].into_iter().collect();
        match t.validate_against(&partial) {
            Err(Error::Reference(msg)) => assert!(msg.contains('b')),
            other => panic!("expected reference error, got {other:?}"),
        }
    }
}
