//! Property tests for cross-cutting invariants.

use mlpool_core::data::FeatureMatrix;
use mlpool_core::metrics::{eer, min_dcf, DcfParams, ScoreSet};
use mlpool_core::nn::stats_pool;
use mlpool_core::tensor::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Feature files round-trip losslessly at 32-bit precision for any shape.
    #[test]
    fn feature_round_trip_any_shape(
        frames in 1usize..500,
        dim in 1usize..80,
        seed in any::<u32>(),
    ) {
        let mut state = seed as u64 | 1;
        let mut next = || {
            // xorshift; values in roughly [-8, 8)
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 4096) as f64 / 256.0 - 8.0
        };
        let values: Vec<f64> = (0..frames * dim).map(|_| next()).collect();
        let f = FeatureMatrix::new("u", frames, dim, values.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.feat");
        f.write(&path).unwrap();
        let g = mlpool_core::data::read_features(&path, "u").unwrap();
        prop_assert_eq!(g.frames, frames);
        prop_assert_eq!(g.dim, dim);
        for (a, b) in values.iter().zip(&g.values) {
            prop_assert_eq!(*a as f32, *b as f32);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// stats_pool is exactly invariant under frame permutations.
    #[test]
    fn stats_pool_frame_permutation_invariance(
        vals in proptest::collection::vec(-3.0f64..3.0, 6*4),
        perm_seed in any::<u64>(),
    ) {
        let (t, d) = (6usize, 4usize);
        let x = Tensor::from_values(vec![t, d], vals.clone()).unwrap();
        // Fisher-Yates with a tiny xorshift.
        let mut order: Vec<usize> = (0..t).collect();
        let mut s = perm_seed | 1;
        for i in (1..t).rev() {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            order.swap(i, (s as usize) % (i + 1));
        }
        let mut shuffled = Vec::with_capacity(t * d);
        for &row in &order {
            shuffled.extend_from_slice(&vals[row * d..(row + 1) * d]);
        }
        let y = Tensor::from_values(vec![t, d], shuffled).unwrap();
        let px = stats_pool(&x).unwrap();
        let py = stats_pool(&y).unwrap();
        prop_assert_eq!(px.values(), py.values());
    }

    /// Splitting a concat gradient routes each slice back unchanged: the
    /// gradient of sum(concat(a, b)) on each input is all ones.
    #[test]
    fn concat_gradient_routing_conservation(
        a_rows in 1usize..5,
        b_rows in 1usize..5,
        cols in 1usize..5,
    ) {
        let a = Tensor::parameter(vec![a_rows, cols], vec![0.5; a_rows * cols]).unwrap();
        let b = Tensor::parameter(vec![b_rows, cols], vec![-0.25; b_rows * cols]).unwrap();
        let joined = Tensor::concat(&[a.clone(), b.clone()], 0).unwrap();
        joined.sum_all().unwrap().backward().unwrap();
        prop_assert!(a.grad().unwrap().iter().all(|&g| g == 1.0));
        prop_assert!(b.grad().unwrap().iter().all(|&g| g == 1.0));
    }

    /// Population variance is never negative, and constant tensors give
    /// exact zero.
    #[test]
    fn variance_non_negative(vals in proptest::collection::vec(-1e6f64..1e6, 2..40)) {
        let n = vals.len();
        let x = Tensor::from_values(vec![n], vals).unwrap();
        prop_assert!(x.var(0).unwrap().item() >= 0.0);
        let c = Tensor::from_values(vec![n], vec![123.456; n]).unwrap();
        prop_assert_eq!(c.var(0).unwrap().item(), 0.0);
    }

    /// EER and minDCF are exactly invariant under strictly increasing score
    /// transforms.
    #[test]
    fn metric_monotone_transform_invariance(
        scores in proptest::collection::vec((-4.0f64..4.0, any::<bool>()), 8..60),
    ) {
        let targets = scores.iter().filter(|(_, t)| *t).count();
        prop_assume!(targets >= 1 && targets < scores.len());
        let s = ScoreSet::new(scores.clone()).unwrap();
        let mapped: Vec<(f64, bool)> =
            scores.iter().map(|&(v, t)| (v.powi(3) + 2.0 * v + 1.0, t)).collect();
        let m = ScoreSet::new(mapped).unwrap();
        let p = DcfParams::at(0.01).unwrap();
        prop_assert_eq!(eer(&s), eer(&m));
        prop_assert_eq!(min_dcf(&s, &p), min_dcf(&m, &p));
    }

    /// VAD output is a subsequence of its input.
    #[test]
    fn vad_output_is_subsequence(
        vals in proptest::collection::vec(-5.0f64..5.0, 3*10),
        margin in -0.5f64..2.0,
    ) {
        let f = FeatureMatrix::new("u", 10, 3, vals).unwrap();
        if let Ok(kept) = mlpool_core::data::energy_vad(&f, 0, margin) {
            let mut src = 0usize;
            for t in 0..kept.frames {
                let row = kept.row(t);
                while src < f.frames && f.row(src) != row {
                    src += 1;
                }
                prop_assert!(src < f.frames, "kept frame {t} not found in order");
                src += 1;
            }
        }
    }
}
