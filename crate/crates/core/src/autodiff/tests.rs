use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn store_with(shapes: &[&[usize]], seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (i, shape) in shapes.iter().enumerate() {
        let t = random_tensor(shape, &mut rng);
        store.register(format!("p{i}"), t);
    }
    store
}

#[test]
fn kl_matches_hand_computed_values() {
    let p = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]);
    let log_q = Tensor::from_vec(&[1, 2], vec![0.25f64.ln(), 0.75f64.ln()]);
    assert!((val::kl_rows(&p, &log_q) - 0.14384).abs() < 1e-5);

    // One-sided distribution exercises the 0 ln 0 := 0 convention.
    let p = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]);
    let log_q = Tensor::from_vec(&[1, 2], vec![0.5f64.ln(), 0.5f64.ln()]);
    assert!((val::kl_rows(&p, &log_q) - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn entropy_of_uniform_is_log_k() {
    let p = Tensor::from_vec(&[1, 4], vec![0.25; 4]);
    assert!((val::entropy_rows(&p) - 4.0f64.ln()).abs() < 1e-12);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(&[2, 4], vec![3.7; 8]));
    let s = tape.softmax_rows(x).unwrap();
    for v in tape.value(s).data() {
        assert!((v - 0.25).abs() < 1e-12);
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let x = random_tensor(&[3, 5], &mut rng);
        let s = val::softmax_rows(&x);
        for i in 0..3 {
            let sum: f64 = s.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn log_softmax_agrees_with_log_of_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_tensor(&[4, 6], &mut rng);
    let a = val::log_softmax_rows(&x);
    let b = val::softmax_rows(&x);
    for (la, sv) in a.data().iter().zip(b.data()) {
        assert!((la - sv.ln()).abs() < 1e-12);
    }
}

#[test]
fn mse_of_identical_tensors_is_zero() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
    let b = tape.constant(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
    let l = tape.mse(a, b).unwrap();
    assert_eq!(tape.value(l).value(), 0.0);
}

#[test]
fn shared_input_gradients_accumulate() {
    let mut store = ParamStore::new();
    let id = store.register("x", Tensor::from_vec(&[1, 2], vec![1.0, 2.0]));
    let mut tape = Tape::new();
    let x = tape.param(0, &store, id);
    let y = tape.add(x, x).unwrap();
    let target = tape.constant(Tensor::zeros(&[1, 2]));
    let l = tape.mse(y, target).unwrap();
    let grads = tape.backward(l).unwrap();
    // d/dx mean((2x)^2) = 4x
    let g = grads.get(0, id).unwrap();
    assert!((g.data()[0] - 4.0).abs() < 1e-12);
    assert!((g.data()[1] - 8.0).abs() < 1e-12);
}

#[test]
fn detach_blocks_gradient_flow() {
    let mut store = store_with(&[&[1, 3]], 3);
    let id = ParamId(0);
    let mut tape = Tape::new();
    let x = tape.param(0, &store, id);
    let cut = tape.detach(x);
    let target = tape.constant(Tensor::zeros(&[1, 3]));
    let l = tape.mse(cut, target).unwrap();
    let grads = tape.backward(l).unwrap();
    assert!(grads.get(0, id).is_none());
    store.absorb(0, &grads);
    assert!(store.get(id).grad.data().iter().all(|&g| g == 0.0));
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 2]));
    let y = tape.relu(x);
    assert!(matches!(tape.backward(y), Err(DiffError::NotScalar)));
}

#[test]
fn entropy_rejects_non_distribution() {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::from_vec(&[1, 2], vec![0.9, 0.3]));
    assert!(matches!(tape.entropy_rows(p), Err(DiffError::NotADistribution { .. })));
    let neg = tape.constant(Tensor::from_vec(&[1, 2], vec![1.5, -0.5]));
    assert!(matches!(tape.entropy_rows(neg), Err(DiffError::NotADistribution { .. })));
}

#[test]
fn matmul_shape_mismatch_is_rejected() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4, 2]));
    assert!(matches!(tape.matmul(a, b), Err(DiffError::ShapeMismatch(_))));
}

#[test]
fn grads_accumulate_across_backward_calls_until_zeroed() {
    let mut store = store_with(&[&[2, 2]], 4);
    let id = ParamId(0);
    let run = |store: &ParamStore| {
        let mut tape = Tape::new();
        let x = tape.param(0, store, id);
        let t = tape.constant(Tensor::zeros(&[2, 2]));
        let l = tape.mse(x, t).unwrap();
        tape.backward(l).unwrap()
    };
    let g1 = run(&store);
    store.absorb(0, &g1);
    let once = store.get(id).grad.clone();
    let g2 = run(&store);
    store.absorb(0, &g2);
    for (a, b) in store.get(id).grad.data().iter().zip(once.data()) {
        assert!((a - 2.0 * b).abs() < 1e-15);
    }
    store.zero_grads();
    assert!(store.get(id).grad.data().iter().all(|&g| g == 0.0));
}

#[test]
fn adamw_first_step_moves_by_about_lr() {
    let mut store = ParamStore::new();
    let id = store.register("w", Tensor::from_vec(&[2, 2], vec![0.3; 4]));
    store.get_mut(id).grad.fill(1.0);
    let cfg = AdamwConfig { weight_decay: 0.0, ..AdamwConfig::default() };
    store.adamw_step(1e-3, &cfg);
    // Bias correction makes the first update almost exactly lr.
    for &v in store.value(id).data() {
        assert!((v - (0.3 - 1e-3)).abs() < 1e-9);
    }
}

#[test]
fn adamw_zero_grad_zero_decay_is_identity() {
    let mut store = store_with(&[&[3, 3], &[3]], 5);
    let before: Vec<Vec<f64>> = store.params().map(|p| p.value.data().to_vec()).collect();
    let cfg = AdamwConfig { weight_decay: 0.0, ..AdamwConfig::default() };
    store.adamw_step(1e-3, &cfg);
    let after: Vec<Vec<f64>> = store.params().map(|p| p.value.data().to_vec()).collect();
    assert_eq!(before, after);
}

#[test]
fn adamw_decay_shrinks_weights_without_gradient() {
    let mut store = ParamStore::new();
    let id = store.register("w", Tensor::from_vec(&[2], vec![1.0, -1.0]));
    let cfg = AdamwConfig { weight_decay: 0.1, ..AdamwConfig::default() };
    store.adamw_step(1e-2, &cfg);
    let v = store.value(id).data();
    assert!((v[0] - (1.0 - 1e-2 * 0.1)).abs() < 1e-12);
    assert!((v[1] + (1.0 - 1e-2 * 0.1)).abs() < 1e-12);
}

/// Gradient check for one op wired into a scalar head. Each closure builds
/// the graph from parameter leaves already registered in the store.
fn check_graph<F>(shapes: &[&[usize]], seed: u64, build: F) -> f64
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId, DiffError>,
{
    let mut store = store_with(shapes, seed);
    grad_check(&mut store, 0, 1e-4, 16, seed ^ 0x5eed, |s| {
        let mut tape = Tape::new();
        let leaves: Vec<NodeId> = s.ids().map(|id| tape.param(0, s, id)).collect();
        let loss = build(&mut tape, &leaves)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).value(), grads))
    })
    .unwrap()
}

#[test]
fn gradients_match_finite_differences_per_op() {
    for seed in 0..3u64 {
        let tol = 1e-3;

        let e = check_graph(&[&[2, 3], &[3, 4], &[4]], seed, |t, p| {
            let y = t.linear(p[0], p[1], p[2])?;
            let z = t.constant(Tensor::zeros(&[2, 4]));
            t.mse(y, z)
        });
        assert!(e < tol, "linear: {e}");

        let e = check_graph(&[&[2, 3], &[3, 2]], seed, |t, p| {
            let y = t.matmul(p[0], p[1])?;
            let z = t.constant(Tensor::zeros(&[2, 2]));
            t.mse(y, z)
        });
        assert!(e < tol, "matmul: {e}");

        let e = check_graph(&[&[2, 3], &[4, 3]], seed, |t, p| {
            let y = t.matmul_nt(p[0], p[1])?;
            let z = t.constant(Tensor::zeros(&[2, 4]));
            t.mse(y, z)
        });
        assert!(e < tol, "matmul_nt: {e}");

        let e = check_graph(&[&[3, 4]], seed, |t, p| {
            let y = t.relu(p[0]);
            let z = t.constant(Tensor::zeros(&[3, 4]));
            t.mse(y, z)
        });
        assert!(e < tol, "relu: {e}");

        let e = check_graph(&[&[3, 4]], seed, |t, p| {
            let y = t.sigmoid(p[0]);
            let z = t.constant(Tensor::zeros(&[3, 4]));
            t.mse(y, z)
        });
        assert!(e < tol, "sigmoid: {e}");

        let e = check_graph(&[&[3, 4]], seed, |t, p| {
            let y = t.softmax_rows(p[0])?;
            let z = t.constant(Tensor::zeros(&[3, 4]));
            t.mse(y, z)
        });
        assert!(e < tol, "softmax_rows: {e}");

        let e = check_graph(&[&[3, 4]], seed, |t, p| {
            let y = t.log_softmax_rows(p[0])?;
            let z = t.constant(Tensor::zeros(&[3, 4]));
            t.mse(y, z)
        });
        assert!(e < tol, "log_softmax_rows: {e}");

        let e = check_graph(&[&[3, 4]], seed, |t, p| {
            let y = t.l2_normalize_rows(p[0])?;
            let z = t.constant(Tensor::zeros(&[3, 4]));
            t.mse(y, z)
        });
        assert!(e < tol, "l2_normalize_rows: {e}");

        // Distribution-valued ops are probed through softmax so finite
        // difference perturbations stay on the simplex feasible set.
        let e = check_graph(&[&[3, 4]], seed, |t, p| {
            let s = t.softmax_rows(p[0])?;
            t.entropy_rows(s)
        });
        assert!(e < tol, "entropy_rows: {e}");

        let e = check_graph(&[&[3, 4], &[3, 4]], seed, |t, p| {
            let s = t.softmax_rows(p[0])?;
            let lq = t.log_softmax_rows(p[1])?;
            t.kl_rows(s, lq)
        });
        assert!(e < tol, "kl_rows: {e}");

        let e = check_graph(&[&[3, 4]], seed, |t, p| {
            let lp = t.log_softmax_rows(p[0])?;
            t.nll_rows(lp, &[1, 3, 0])
        });
        assert!(e < tol, "nll_rows: {e}");

        let e = check_graph(&[&[2, 3], &[2, 3]], seed, |t, p| {
            let y = t.add(p[0], p[1])?;
            let s = t.scale(y, -1.7);
            let z = t.constant(Tensor::zeros(&[2, 3]));
            t.mse(s, z)
        });
        assert!(e < tol, "add/scale: {e}");

        let e = check_graph(&[&[2, 4], &[2, 4]], seed, |t, p| t.mse(p[0], p[1]));
        assert!(e < tol, "mse: {e}");
    }
}
