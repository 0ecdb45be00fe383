//! Central finite differences vs analytic gradients, per op and per layer.
//!
//! The finite-difference side never touches `backward`; it only re-runs the
//! forward computation at perturbed inputs.

use mlpool_core::gradcheck::{finite_difference, max_rel_err, DEFAULT_STEP};
use mlpool_core::nn::{BatchNorm, BlstmLayer, Dense, Mode, ParamId, ParamStore, PoolingHead, TdnnLayer};
use mlpool_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

const OP_TOL: f64 = 1e-6;
const BPTT_TOL: f64 = 1e-5;

fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn random_vals<R: Rng>(r: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-2.0..2.0)).collect()
}

/// Check d(scalar)/d(input) for a pure tensor computation.
fn check_input_grad(shape: &[usize], x0: &[f64], build: impl Fn(&Tensor) -> Tensor, tol: f64) {
    let x = Tensor::parameter(shape.to_vec(), x0.to_vec()).unwrap();
    let y = build(&x);
    y.backward().unwrap();
    let analytic = x.grad().unwrap();
    let numeric = finite_difference(
        |v| {
            let xt = Tensor::from_values(shape.to_vec(), v.to_vec()).unwrap();
            build(&xt).item()
        },
        x0,
        DEFAULT_STEP,
    );
    let err = max_rel_err(&analytic, &numeric);
    assert!(err < tol, "gradient mismatch: max rel err {err:.3e}");
}

#[test]
fn matmul_grad_wrt_both_operands() {
    let mut r = rng(100);
    let a0 = random_vals(&mut r, 12);
    let b0 = random_vals(&mut r, 8);
    let b = Tensor::from_values(vec![4, 2], b0.clone()).unwrap();
    check_input_grad(&[3, 4], &a0, |a| a.matmul(&b).unwrap().sum_all().unwrap(), OP_TOL);
    let a = Tensor::from_values(vec![3, 4], a0).unwrap();
    check_input_grad(&[4, 2], &b0, |bb| a.matmul(bb).unwrap().sum_all().unwrap(), OP_TOL);
}

#[test]
fn elementwise_grads() {
    let mut r = rng(101);
    let x0 = random_vals(&mut r, 9);
    let y = Tensor::from_values(vec![9], random_vals(&mut r, 9)).unwrap();
    check_input_grad(&[9], &x0, |x| x.add(&y).unwrap().sum_all().unwrap(), OP_TOL);
    check_input_grad(&[9], &x0, |x| x.sub(&y).unwrap().sum_all().unwrap(), OP_TOL);
    check_input_grad(&[9], &x0, |x| x.mul(&y).unwrap().sum_all().unwrap(), OP_TOL);
    check_input_grad(&[9], &x0, |x| x.scale(-1.7).unwrap().sum_all().unwrap(), OP_TOL);
    check_input_grad(&[9], &x0, |x| x.relu().unwrap().sum_all().unwrap(), OP_TOL);
    check_input_grad(&[9], &x0, |x| x.sigmoid().unwrap().sum_all().unwrap(), OP_TOL);
}

#[test]
fn tanh_grad_at_17_random_points() {
    let mut r = rng(102);
    let x0 = random_vals(&mut r, 17);
    check_input_grad(&[17], &x0, |x| x.tanh().unwrap().sum_all().unwrap(), OP_TOL);
}

#[test]
fn scalar_broadcast_grads() {
    let mut r = rng(103);
    let x0 = random_vals(&mut r, 6);
    let c0 = [0.7];
    let c = Tensor::scalar(0.7).unwrap();
    check_input_grad(&[6], &x0, |x| x.mul(&c).unwrap().sum_all().unwrap(), OP_TOL);
    // Gradient with respect to the broadcast scalar itself.
    let x = Tensor::from_values(vec![6], x0).unwrap();
    check_input_grad(&[], &c0, |cc| x.mul(cc).unwrap().sum_all().unwrap(), OP_TOL);
}

#[test]
fn sqrt_and_recip_grads() {
    let mut r = rng(104);
    let x0: Vec<f64> = (0..8).map(|_| r.random_range(0.3..2.0)).collect();
    check_input_grad(&[8], &x0, |x| x.sqrt().unwrap().sum_all().unwrap(), OP_TOL);
    check_input_grad(&[8], &x0, |x| x.recip().unwrap().sum_all().unwrap(), OP_TOL);
}

#[test]
fn reduction_grads() {
    let mut r = rng(105);
    let x0 = random_vals(&mut r, 12);
    for axis in 0..2 {
        check_input_grad(&[3, 4], &x0, |x| x.sum(axis).unwrap().sum_all().unwrap(), OP_TOL);
        check_input_grad(&[3, 4], &x0, |x| x.mean(axis).unwrap().sum_all().unwrap(), OP_TOL);
        check_input_grad(&[3, 4], &x0, |x| x.var(axis).unwrap().sum_all().unwrap(), OP_TOL);
    }
    // The spec's named case: var backward on a random 5-vector.
    let v0 = random_vals(&mut r, 5);
    check_input_grad(&[5], &v0, |x| x.var(0).unwrap().sum_all().unwrap(), OP_TOL);
}

#[test]
fn structural_op_grads() {
    let mut r = rng(106);
    let x0 = random_vals(&mut r, 10);
    let other = Tensor::from_values(vec![5, 3], random_vals(&mut r, 15)).unwrap();
    check_input_grad(
        &[5, 2],
        &x0,
        |x| {
            Tensor::concat(&[x.clone(), other.clone()], 1)
                .unwrap()
                .sum_all()
                .unwrap()
        },
        OP_TOL,
    );
    check_input_grad(&[5, 2], &x0, |x| x.slice_rows(1, 3).unwrap().sum_all().unwrap(), OP_TOL);
    check_input_grad(&[5, 2], &x0, |x| x.reshape(vec![2, 5]).unwrap().sum_all().unwrap(), OP_TOL);
}

#[test]
fn rowwise_op_grads() {
    let mut r = rng(107);
    let x0 = random_vals(&mut r, 12);
    let v0 = random_vals(&mut r, 4);
    let v = Tensor::from_values(vec![4], v0.clone()).unwrap();
    check_input_grad(&[3, 4], &x0, |x| x.add_row(&v).unwrap().sum_all().unwrap(), OP_TOL);
    check_input_grad(&[3, 4], &x0, |x| x.mul_row(&v).unwrap().sum_all().unwrap(), OP_TOL);
    let x = Tensor::from_values(vec![3, 4], x0).unwrap();
    check_input_grad(&[4], &v0, |vv| x.add_row(vv).unwrap().sum_all().unwrap(), OP_TOL);
    check_input_grad(&[4], &v0, |vv| x.mul_row(vv).unwrap().sum_all().unwrap(), OP_TOL);
}

#[test]
fn norm_and_loss_building_block_grads() {
    let mut r = rng(108);
    // The spec's named case: l2norm gradient at a random 8-vector.
    let x0 = random_vals(&mut r, 8);
    check_input_grad(&[8], &x0, |x| x.l2norm().unwrap(), OP_TOL);

    let m0 = random_vals(&mut r, 12);
    check_input_grad(&[3, 4], &m0, |x| x.row_l2norm().unwrap().sum_all().unwrap(), OP_TOL);
    check_input_grad(&[3, 4], &m0, |x| x.row_log_sum_exp().unwrap().sum_all().unwrap(), OP_TOL);
    let labels = [2usize, 0, 3];
    check_input_grad(
        &[3, 4],
        &m0,
        |x| x.gather_rows(&labels).unwrap().sum_all().unwrap(),
        OP_TOL,
    );
    check_input_grad(
        &[3, 4],
        &m0,
        |x| x.row_softmax_cross_entropy(&labels).unwrap().sum_all().unwrap(),
        OP_TOL,
    );
}

// ── Layer-level checks ──────────────────────────────────────────────

/// Finite-difference gradient of `eval` with respect to one stored parameter.
fn fd_param(
    store: &mut ParamStore,
    id: ParamId,
    mut eval: impl FnMut(&ParamStore) -> f64,
    h: f64,
) -> Vec<f64> {
    let base = store.get(id).values().to_vec();
    let shape = store.get(id).shape().to_vec();
    let mut grad = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut v = base.clone();
        v[i] = base[i] + h;
        store.replace(id, Tensor::parameter(shape.clone(), v.clone()).unwrap()).unwrap();
        let fp = eval(store);
        v[i] = base[i] - h;
        store.replace(id, Tensor::parameter(shape.clone(), v).unwrap()).unwrap();
        let fm = eval(store);
        grad[i] = (fp - fm) / (2.0 * h);
    }
    store.replace(id, Tensor::parameter(shape, base).unwrap()).unwrap();
    grad
}

/// Run one analytic backward, then finite-difference every parameter.
fn check_all_params(
    store: &mut ParamStore,
    forward: impl Fn(&ParamStore) -> Tensor,
    tol: f64,
) {
    store.zero_grads();
    let loss = forward(store);
    loss.backward().unwrap();
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let analytic = store
            .get(id)
            .grad()
            .unwrap_or_else(|| panic!("no gradient on {}", store.name(id)));
        let numeric = fd_param(store, id, |s| forward(s).item(), DEFAULT_STEP);
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < tol, "{}: max rel err {err:.3e}", store.name(id));
    }
}

#[test]
fn dense_layer_gradcheck() {
    let mut store = ParamStore::new();
    let mut r = rng(200);
    let layer = Dense::new(&mut store, &mut r, "d", 4, 3).unwrap();
    let x = Tensor::from_values(vec![5, 4], random_vals(&mut r, 20)).unwrap();
    check_all_params(
        &mut store,
        |s| layer.forward(s, &x).unwrap().tanh().unwrap().sum_all().unwrap(),
        OP_TOL,
    );
}

#[test]
fn tdnn_layer_gradcheck() {
    let mut store = ParamStore::new();
    let mut r = rng(201);
    let layer = TdnnLayer::new(&mut store, &mut r, "t", 3, 4, 3, 2).unwrap();
    let x0 = random_vals(&mut r, 30);
    let x = Tensor::from_values(vec![10, 3], x0.clone()).unwrap();
    check_all_params(
        &mut store,
        |s| layer.forward(s, &x).unwrap().tanh().unwrap().sum_all().unwrap(),
        OP_TOL,
    );
    // Input gradient too.
    check_input_grad(
        &[10, 3],
        &x0,
        |xx| layer.forward(&store, xx).unwrap().tanh().unwrap().sum_all().unwrap(),
        OP_TOL,
    );
}

#[test]
fn batchnorm_train_mode_gradcheck() {
    let mut store = ParamStore::new();
    let mut r = rng(202);
    let bn = BatchNorm::new(&mut store, "bn", 3).unwrap();
    let x0 = random_vals(&mut r, 12);
    let x = Tensor::from_values(vec![4, 3], x0.clone()).unwrap();
    check_all_params(
        &mut store,
        |s| bn.forward(s, &x, Mode::Train).unwrap().tanh().unwrap().sum_all().unwrap(),
        OP_TOL,
    );
    check_input_grad(
        &[4, 3],
        &x0,
        |xx| bn.forward(&store, xx, Mode::Train).unwrap().tanh().unwrap().sum_all().unwrap(),
        OP_TOL,
    );
}

#[test]
fn stats_pool_gradcheck() {
    let mut r = rng(203);
    let x0 = random_vals(&mut r, 15);
    check_input_grad(
        &[5, 3],
        &x0,
        |x| mlpool_core::nn::stats_pool(x).unwrap().sum_all().unwrap(),
        OP_TOL,
    );
}

#[test]
fn pooling_head_gradcheck() {
    let mut store = ParamStore::new();
    let mut r = rng(204);
    let head = PoolingHead::new(&mut store, &mut r, "h", 3, 4, 3).unwrap();
    let x = Tensor::from_values(vec![6, 3], random_vals(&mut r, 18)).unwrap();
    check_all_params(
        &mut store,
        |s| head.forward(s, &x, Mode::Train).unwrap().sum_all().unwrap(),
        OP_TOL,
    );
}

#[test]
fn blstm_bptt_gradcheck() {
    // T=5, hidden=3: backpropagation through time in both directions.
    let mut store = ParamStore::new();
    let mut r = rng(205);
    let layer = BlstmLayer::new(&mut store, &mut r, "l", 2, 3).unwrap();
    let x0 = random_vals(&mut r, 10);
    let x = Tensor::from_values(vec![5, 2], x0.clone()).unwrap();
    check_all_params(
        &mut store,
        |s| layer.forward(s, &x).unwrap().sum_all().unwrap(),
        BPTT_TOL,
    );
    check_input_grad(
        &[5, 2],
        &x0,
        |xx| layer.forward(&store, xx).unwrap().sum_all().unwrap(),
        BPTT_TOL,
    );
}
