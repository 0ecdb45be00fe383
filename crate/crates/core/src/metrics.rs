//! Detection metrics: DET-curve points, equal error rate, and minimum
//! normalized detection cost.
//!
//! Convention: a trial is *accepted* when its score is ≥ the threshold.
//! Scores are re-oriented at construction so targets tend higher: if the
//! rank statistic P(target score > nontarget score) (ties counted half) is
//! below one half, all scores are negated. Every metric is computed on the
//! oriented scores. Because the statistic is rank-based, the orientation —
//! and hence EER and minDCF — is exactly invariant under strictly
//! increasing score transforms and symmetric under a global sign flip.

use std::collections::HashMap;
use std::path::Path;

use crate::container::atomic_write;
use crate::error::{Error, Result};

/// Labeled scores for a set of trials.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    /// (score, is_target), re-oriented so targets tend higher.
    entries: Vec<(f64, bool)>,
    reoriented: bool,
}

impl ScoreSet {
    /// Build from (score, is_target) pairs. Requires at least one target and
    /// one nontarget and finite scores.
    pub fn new(entries: Vec<(f64, bool)>) -> Result<ScoreSet> {
        let targets = entries.iter().filter(|(_, t)| *t).count();
        let nontargets = entries.len() - targets;
        if targets == 0 || nontargets == 0 {
            return Err(Error::DegenerateInput(format!(
                "score set needs both classes: {targets} targets, {nontargets} nontargets"
            )));
        }
        if let Some((s, _)) = entries.iter().find(|(s, _)| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite score {s}")));
        }
        let reoriented = rank_auc(&entries) < 0.5;
        let entries = if reoriented {
            entries.into_iter().map(|(s, t)| (-s, t)).collect()
        } else {
            entries
        };
        Ok(ScoreSet { entries, reoriented })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Whether construction flipped the score signs to orient targets higher.
    pub fn reoriented(&self) -> bool {
        self.reoriented
    }

    pub fn num_targets(&self) -> usize {
        self.entries.iter().filter(|(_, t)| *t).count()
    }

    pub fn num_nontargets(&self) -> usize {
        self.entries.len() - self.num_targets()
    }
}

/// Mann-Whitney statistic P(target > nontarget) with ties counted half,
/// computed via midranks. Purely rank-based, so strictly increasing score
/// transforms leave it unchanged and negation maps it to its complement.
fn rank_auc(entries: &[(f64, bool)]) -> f64 {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| entries[a].0.partial_cmp(&entries[b].0).expect("finite scores"));
    let mut rank_sum = 0.0; // sum of target midranks (1-based)
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && entries[order[j]].0 == entries[order[i]].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            if entries[k].1 {
                rank_sum += midrank;
            }
        }
        i = j;
    }
    let n_t = entries.iter().filter(|(_, t)| *t).count() as f64;
    let n_n = entries.len() as f64 - n_t;
    (rank_sum - n_t * (n_t + 1.0) / 2.0) / (n_t * n_n)
}

/// Detection-cost parameters.
#[derive(Debug, Clone, Copy)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl DcfParams {
    pub fn new(p_target: f64, c_miss: f64, c_fa: f64) -> Result<DcfParams> {
        if !(0.0 < p_target && p_target < 1.0) {
            return Err(Error::Config(format!("p_target must be in (0,1), got {p_target}")));
        }
        if c_miss <= 0.0 || c_fa <= 0.0 {
            return Err(Error::Config("detection costs must be positive".into()));
        }
        Ok(DcfParams { p_target, c_miss, c_fa })
    }

    /// Unit costs at the given operating point.
    pub fn at(p_target: f64) -> Result<DcfParams> {
        DcfParams::new(p_target, 1.0, 1.0)
    }
}

/// One DET-curve operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
}

/// Sweep every distinct score as a threshold (plus a reject-all point above
/// the maximum): `p_miss` = fraction of targets scoring below the threshold,
/// `p_fa` = fraction of nontargets scoring at or above it. Points are in
/// ascending threshold order, so `p_miss` is non-decreasing and `p_fa`
/// non-increasing.
pub fn det_points(scores: &ScoreSet) -> Vec<DetPoint> {
    let mut sorted = scores.entries.clone();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));
    let total_targets = scores.num_targets() as f64;
    let total_nontargets = scores.num_nontargets() as f64;

    let mut points = Vec::new();
    let mut targets_below = 0usize;
    let mut nontargets_below = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        // Everything strictly below the threshold has been consumed.
        points.push(DetPoint {
            threshold,
            p_miss: targets_below as f64 / total_targets,
            p_fa: 1.0 - nontargets_below as f64 / total_nontargets,
        });
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                targets_below += 1;
            } else {
                nontargets_below += 1;
            }
            i += 1;
        }
    }
    // Reject-everything operating point.
    let last = sorted.last().expect("non-empty").0;
    points.push(DetPoint {
        threshold: last + 1.0,
        p_miss: 1.0,
        p_fa: 0.0,
    });
    points
}

/// Equal error rate: the value where `p_miss` = `p_fa`, linearly
/// interpolated between the two adjacent DET points that bracket the
/// crossing.
pub fn eer(scores: &ScoreSet) -> f64 {
    let points = det_points(scores);
    // diff = p_miss − p_fa is non-decreasing from −1 toward +1.
    let mut prev = &points[0];
    if prev.p_miss >= prev.p_fa {
        return prev.p_miss.max(prev.p_fa).min(prev.p_miss);
    }
    for point in &points[1..] {
        let d = point.p_miss - point.p_fa;
        if d >= 0.0 {
            let d_prev = prev.p_miss - prev.p_fa;
            let denom = d - d_prev;
            if denom.abs() < f64::EPSILON {
                return point.p_miss;
            }
            let t = -d_prev / denom;
            return prev.p_miss + t * (point.p_miss - prev.p_miss);
        }
        prev = point;
    }
    // diff never crossed zero; the reject-all point (1, 0) makes this
    // unreachable for a valid score set.
    unreachable!("DET sweep always ends at p_miss=1, p_fa=0");
}

/// Minimum normalized detection cost over all thresholds:
/// `min_θ (c_miss·p_target·p_miss + c_fa·(1−p_target)·p_fa)`, divided by the
/// better of the two trivial systems.
pub fn min_dcf(scores: &ScoreSet, params: &DcfParams) -> f64 {
    let miss_weight = params.c_miss * params.p_target;
    let fa_weight = params.c_fa * (1.0 - params.p_target);
    let best = det_points(scores)
        .iter()
        .map(|p| miss_weight * p.p_miss + fa_weight * p.p_fa)
        .fold(f64::INFINITY, f64::min);
    best / miss_weight.min(fa_weight)
}

// ── Score files and reports ─────────────────────────────────────────

/// Write a score file: `enroll-id test-id score` lines.
pub fn write_scores(records: &[(String, String, f64)], path: &Path) -> Result<()> {
    let mut out = String::new();
    for (e, t, s) in records {
        out.push_str(&format!("{e} {t} {s}\n"));
    }
    atomic_write(path, out.as_bytes())
}

/// Parse a score file into `(enroll, test) → score`.
pub fn load_scores(path: &Path) -> Result<Vec<(String, String, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(e), Some(t), Some(s), None) => {
                let score: f64 = s.parse().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("bad score {s:?}"),
                })?;
                out.push((e.to_string(), t.to_string(), score));
            }
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected 'enroll-id test-id score', got {line:?}"),
                })
            }
        }
    }
    Ok(out)
}

/// Join scores with a trial key into a [`ScoreSet`]. Every keyed trial must
/// have a score; extra scored pairs absent from the key are an error.
pub fn join_scores_with_key(
    scores: &[(String, String, f64)],
    key: &crate::data::TrialSet,
) -> Result<ScoreSet> {
    let mut by_pair: HashMap<(&str, &str), f64> = HashMap::new();
    for (e, t, s) in scores {
        if by_pair.insert((e.as_str(), t.as_str()), *s).is_some() {
            return Err(Error::Contract(format!("duplicate score for trial {e} {t}")));
        }
    }
    let mut entries = Vec::with_capacity(key.trials.len());
    for trial in &key.trials {
        let s = by_pair
            .remove(&(trial.enroll.as_str(), trial.test.as_str()))
            .ok_or_else(|| {
                Error::Reference(format!("no score for trial {} {}", trial.enroll, trial.test))
            })?;
        entries.push((s, trial.target));
    }
    if !by_pair.is_empty() {
        let ((e, t), _) = by_pair.iter().next().expect("non-empty");
        return Err(Error::Reference(format!("scored pair {e} {t} is not in the trial key")));
    }
    ScoreSet::new(entries)
}

/// A full metric report: EER plus minDCF at each configured operating point.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub trials: usize,
    pub targets: usize,
    pub nontargets: usize,
    pub eer: f64,
    /// (p_target, min_dcf), in configuration order.
    pub min_dcfs: Vec<(f64, f64)>,
}

impl MetricReport {
    pub fn compute(scores: &ScoreSet, operating_points: &[DcfParams]) -> MetricReport {
        MetricReport {
            trials: scores.len(),
            targets: scores.num_targets(),
            nontargets: scores.num_nontargets(),
            eer: eer(scores),
            min_dcfs: operating_points
                .iter()
                .map(|p| (p.p_target, min_dcf(scores, p)))
                .collect(),
        }
    }

    /// Human-readable summary.
    pub fn human(&self) -> String {
        let mut out = format!(
            "trials: {} ({} target / {} nontarget)\nEER: {:.4}%\n",
            self.trials,
            self.targets,
            self.nontargets,
            100.0 * self.eer
        );
        for (p, dcf) in &self.min_dcfs {
            out.push_str(&format!("minDCF (p_target={p}): {dcf:.4}\n"));
        }
        out
    }

    /// Machine-readable key=value lines.
    pub fn key_values(&self) -> String {
        let mut out = format!(
            "trials={}\ntargets={}\nnontargets={}\neer={}\n",
            self.trials, self.targets, self.nontargets, self.eer
        );
        for (p, dcf) in &self.min_dcfs {
            out.push_str(&format!("min_dcf_p{p}={dcf}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn set(targets: &[f64], nontargets: &[f64]) -> ScoreSet {
        let mut entries: Vec<(f64, bool)> = targets.iter().map(|&s| (s, true)).collect();
        entries.extend(nontargets.iter().map(|&s| (s, false)));
        ScoreSet::new(entries).unwrap()
    }

    /// O(n²) oracle: for every candidate threshold, count misses and false
    /// alarms directly with the same accept-on-ties convention.
    fn det_oracle(entries: &[(f64, bool)]) -> Vec<(f64, f64, f64)> {
        let targets: Vec<f64> = entries.iter().filter(|(_, t)| *t).map(|(s, _)| *s).collect();
        let nontargets: Vec<f64> = entries.iter().filter(|(_, t)| !*t).map(|(s, _)| *s).collect();
        let mut thresholds: Vec<f64> = entries.iter().map(|(s, _)| *s).collect();
        thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        thresholds.dedup();
        thresholds.push(thresholds.last().unwrap() + 1.0);
        thresholds
            .into_iter()
            .map(|th| {
                let p_miss =
                    targets.iter().filter(|&&s| s < th).count() as f64 / targets.len() as f64;
                let p_fa = nontargets.iter().filter(|&&s| s >= th).count() as f64
                    / nontargets.len() as f64;
                (th, p_miss, p_fa)
            })
            .collect()
    }

    #[test]
    fn separable_scores_have_zero_error_point() {
        let s = set(&[1.0], &[0.0]);
        let points = det_points(&s);
        assert!(points.iter().any(|p| p.p_miss == 0.0 && p.p_fa == 0.0));
        assert_eq!(eer(&s), 0.0);
        assert_eq!(min_dcf(&s, &DcfParams::at(0.01).unwrap()), 0.0);
    }

    #[test]
    fn all_tied_scores_degenerate() {
        let s = set(&[1.0, 1.0], &[1.0, 1.0, 1.0]);
        let points = det_points(&s);
        // Only the accept-everything side of the tie and the reject-all point.
        assert_eq!(points.len(), 2);
        assert_eq!((points[0].p_miss, points[0].p_fa), (0.0, 1.0));
        assert_eq!((points[1].p_miss, points[1].p_fa), (1.0, 0.0));
        // Forced to accept or reject everything: normalized cost is 1.
        assert!((min_dcf(&s, &DcfParams::at(0.01).unwrap()) - 1.0).abs() < 1e-12);
        assert!((eer(&s) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn det_points_match_brute_force_on_random_sets() {
        let mut r = ChaCha12Rng::seed_from_u64(50);
        for _ in 0..50 {
            let n = r.random_range(4..60);
            let entries: Vec<(f64, bool)> = (0..n)
                .map(|_| {
                    // Quantized scores so ties actually occur.
                    (r.random_range(-4..4) as f64 / 2.0, r.random_bool(0.5))
                })
                .collect();
            let Ok(s) = ScoreSet::new(entries.clone()) else { continue };
            // Oracle runs on the oriented entries (same convention).
            let oriented: Vec<(f64, bool)> = if s.reoriented() {
                entries.iter().map(|&(v, t)| (-v, t)).collect()
            } else {
                entries.clone()
            };
            let got = det_points(&s);
            let want = det_oracle(&oriented);
            assert_eq!(got.len(), want.len());
            for (g, (th, pm, pf)) in got.iter().zip(&want) {
                assert_eq!(g.threshold, *th);
                assert!((g.p_miss - pm).abs() < 1e-12);
                assert!((g.p_fa - pf).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn monotone_sweep_property() {
        let mut r = ChaCha12Rng::seed_from_u64(51);
        let entries: Vec<(f64, bool)> =
            (0..100).map(|_| (r.random_range(-1.0..1.0), r.random_bool(0.4))).collect();
        let s = ScoreSet::new(entries).unwrap();
        let points = det_points(&s);
        for w in points.windows(2) {
            assert!(w[1].p_miss >= w[0].p_miss);
            assert!(w[1].p_fa <= w[0].p_fa);
            assert!(w[1].threshold > w[0].threshold);
        }
    }

    /// Brute-force EER oracle: walk the oracle DET points and interpolate
    /// the crossing, coded independently of the production sweep.
    fn eer_oracle(entries: &[(f64, bool)]) -> f64 {
        let pts = det_oracle(entries);
        let mut prev = pts[0];
        if prev.1 >= prev.2 {
            return prev.1;
        }
        for p in &pts[1..] {
            if p.1 - p.2 >= 0.0 {
                let d0 = prev.1 - prev.2;
                let d1 = p.1 - p.2;
                if (d1 - d0).abs() < f64::EPSILON {
                    return p.1;
                }
                let t = -d0 / (d1 - d0);
                return prev.1 + t * (p.1 - prev.1);
            }
            prev = *p;
        }
        unreachable!()
    }

    #[test]
    fn eer_matches_brute_force_oracle_to_1e12() {
        let mut r = ChaCha12Rng::seed_from_u64(52);
        for _ in 0..100 {
            let n = r.random_range(6..40);
            let entries: Vec<(f64, bool)> = (0..n)
                .map(|i| (r.random_range(-8..8) as f64 / 4.0, i % 3 == 0))
                .collect();
            let s = ScoreSet::new(entries.clone()).unwrap();
            let oriented: Vec<(f64, bool)> = if s.reoriented() {
                entries.iter().map(|&(v, t)| (-v, t)).collect()
            } else {
                entries
            };
            assert!((eer(&s) - eer_oracle(&oriented)).abs() < 1e-12);
        }
    }

    #[test]
    fn eer_twenty_score_hand_set() {
        // 10 targets mostly high, 10 nontargets mostly low, 2 swapped.
        let targets = [0.9, 0.8, 0.7, 0.65, 0.6, 0.55, 0.5, 0.45, 0.2, 0.1];
        let nontargets = [0.85, 0.75, 0.4, 0.35, 0.3, 0.25, 0.15, 0.05, 0.0, -0.1];
        let s = set(&targets, &nontargets);
        let mut entries: Vec<(f64, bool)> = targets.iter().map(|&v| (v, true)).collect();
        entries.extend(nontargets.iter().map(|&v| (v, false)));
        assert!((eer(&s) - eer_oracle(&entries)).abs() < 1e-12);
        assert!(eer(&s) > 0.0 && eer(&s) < 0.5);
    }

    #[test]
    fn interleaved_identical_distributions_give_half() {
        // Same score multiset for both classes.
        let vals: Vec<f64> = (0..20).map(|i| i as f64 / 10.0).collect();
        let s = set(&vals, &vals);
        assert!((eer(&s) - 0.5).abs() < 0.05);
    }

    #[test]
    fn min_dcf_matches_brute_force_at_p01() {
        let mut r = ChaCha12Rng::seed_from_u64(53);
        let params = DcfParams::at(0.01).unwrap();
        for _ in 0..100 {
            let entries: Vec<(f64, bool)> = (0..100)
                .map(|i| (r.random_range(-16..16) as f64 / 8.0, i % 4 == 0))
                .collect();
            let s = ScoreSet::new(entries.clone()).unwrap();
            let oriented: Vec<(f64, bool)> = if s.reoriented() {
                entries.iter().map(|&(v, t)| (-v, t)).collect()
            } else {
                entries
            };
            let oracle = det_oracle(&oriented)
                .iter()
                .map(|(_, pm, pf)| 1.0 * 0.01 * pm + 1.0 * 0.99 * pf)
                .fold(f64::INFINITY, f64::min)
                / (0.01f64).min(0.99);
            assert!((min_dcf(&s, &params) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_invariant_under_strictly_increasing_transforms() {
        let mut r = ChaCha12Rng::seed_from_u64(54);
        let params = [DcfParams::at(0.01).unwrap(), DcfParams::at(0.005).unwrap()];
        for _ in 0..50 {
            let entries: Vec<(f64, bool)> =
                (0..40).map(|i| (r.random_range(-2.0..2.0), i % 3 != 0)).collect();
            let s = ScoreSet::new(entries.clone()).unwrap();
            // Affine and cubic strictly increasing maps.
            let affine: Vec<(f64, bool)> =
                entries.iter().map(|&(v, t)| (3.0 * v + 7.0, t)).collect();
            let cubic: Vec<(f64, bool)> =
                entries.iter().map(|&(v, t)| (v.powi(3) + v, t)).collect();
            for mapped in [affine, cubic] {
                let m = ScoreSet::new(mapped).unwrap();
                assert_eq!(eer(&s), eer(&m));
                for p in &params {
                    assert_eq!(min_dcf(&s, p), min_dcf(&m, p));
                }
            }
        }
    }

    #[test]
    fn sign_flip_symmetry_via_reorientation() {
        let mut r = ChaCha12Rng::seed_from_u64(55);
        let entries: Vec<(f64, bool)> =
            (0..30).map(|i| (r.random_range(-1.0..3.0) + if i % 2 == 0 { 1.0 } else { 0.0 }, i % 2 == 0)).collect();
        let flipped: Vec<(f64, bool)> = entries.iter().map(|&(v, t)| (-v, t)).collect();
        let a = ScoreSet::new(entries).unwrap();
        let b = ScoreSet::new(flipped).unwrap();
        assert_eq!(eer(&a), eer(&b));
        assert_eq!(
            min_dcf(&a, &DcfParams::at(0.01).unwrap()),
            min_dcf(&b, &DcfParams::at(0.01).unwrap())
        );
    }

    #[test]
    fn normalized_min_dcf_bounded_by_one() {
        let mut r = ChaCha12Rng::seed_from_u64(56);
        for _ in 0..50 {
            let entries: Vec<(f64, bool)> =
                (0..30).map(|_| (r.random_range(-1.0..1.0), r.random_bool(0.5))).collect();
            let Ok(s) = ScoreSet::new(entries) else { continue };
            let v = min_dcf(&s, &DcfParams::at(0.01).unwrap());
            assert!((0.0..=1.0 + 1e-12).contains(&v), "{v}");
        }
    }

    #[test]
    fn min_dcf_at_eer_threshold_is_lower_bounded_by_min() {
        let mut r = ChaCha12Rng::seed_from_u64(57);
        let params = DcfParams::at(0.05).unwrap();
        let entries: Vec<(f64, bool)> =
            (0..60).map(|i| (r.random_range(-1.0..1.0) + if i % 2 == 0 { 0.8 } else { 0.0 }, i % 2 == 0)).collect();
        let s = ScoreSet::new(entries).unwrap();
        let e = eer(&s);
        // Cost of operating exactly at the EER point.
        let cost_at_eer = (params.c_miss * params.p_target * e
            + params.c_fa * (1.0 - params.p_target) * e)
            / (params.c_miss * params.p_target).min(params.c_fa * (1.0 - params.p_target));
        assert!(min_dcf(&s, &params) <= cost_at_eer + 1e-12);
    }

    #[test]
    fn score_file_round_trip_and_key_join() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.txt");
        let records = vec![
            ("e1".to_string(), "t1".to_string(), 1.25),
            ("e1".to_string(), "t2".to_string(), -0.5),
        ];
        write_scores(&records, &path).unwrap();
        assert_eq!(load_scores(&path).unwrap(), records);

        let key = crate::data::TrialSet {
            trials: vec![
                crate::data::Trial { enroll: "e1".into(), test: "t1".into(), target: true },
                crate::data::Trial { enroll: "e1".into(), test: "t2".into(), target: false },
            ],
        };
        let s = join_scores_with_key(&records, &key).unwrap();
        assert_eq!(s.len(), 2);

        let missing_key = crate::data::TrialSet {
            trials: vec![crate::data::Trial {
                enroll: "e9".into(),
                test: "t9".into(),
                target: true,
            }],
        };
        assert!(matches!(
            join_scores_with_key(&records, &missing_key),
            Err(Error::Reference(_))
        ));
    }

    #[test]
    fn report_formats() {
        let s = set(&[1.0, 0.9], &[0.0, 0.1]);
        let report = MetricReport::compute(
            &s,
            &[DcfParams::at(0.01).unwrap(), DcfParams::at(0.005).unwrap()],
        );
        let kv = report.key_values();
        assert!(kv.contains("eer=0"));
        assert!(kv.contains("min_dcf_p0.01=0"));
        assert!(kv.contains("min_dcf_p0.005=0"));
        assert!(report.human().contains("EER"));
    }
}
