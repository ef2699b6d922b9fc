use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::ParamStore;
use super::tape::GradMap;
use super::DiffError;

/// Floor inside the relative-error denominator; keeps the ratio meaningful
/// when both gradients are near zero.
const REL_FLOOR: f64 = 1e-8;

/// Compares tape gradients against central finite differences.
///
/// `f` evaluates the loss on the given store and returns the scalar value
/// plus the gradient map of one backward pass; it must be deterministic in
/// the store contents. Each parameter is probed on at most
/// `coords_per_param` coordinates (all of them when the tensor is small),
/// chosen by `seed`. Returns the maximum of
/// `|g_tape - g_fd| / max(1e-8, |g_tape| + |g_fd|)` over probed coordinates.
pub fn grad_check<F>(
    store: &mut ParamStore,
    slot: usize,
    eps: f64,
    coords_per_param: usize,
    seed: u64,
    f: F,
) -> Result<f64, DiffError>
where
    F: Fn(&ParamStore) -> Result<(f64, GradMap), DiffError>,
{
    let (_, grads) = f(store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;

    for id in store.ids().collect::<Vec<_>>() {
        let len = store.value(id).len();
        let coords: Vec<usize> = if len <= coords_per_param {
            (0..len).collect()
        } else {
            sample(&mut rng, len, coords_per_param).into_vec()
        };
        for c in coords {
            let orig = store.value(id).data()[c];
            store.get_mut(id).value.data_mut()[c] = orig + eps;
            let up = f(store)?.0;
            store.get_mut(id).value.data_mut()[c] = orig - eps;
            let down = f(store)?.0;
            store.get_mut(id).value.data_mut()[c] = orig;

            let fd = (up - down) / (2.0 * eps);
            let tape = grads.get(slot, id).map_or(0.0, |g| g.data()[c]);
            let rel = (tape - fd).abs() / REL_FLOOR.max(tape.abs() + fd.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
