//! Central-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Max over `coords` of [`relative_error`].
/// where `numeric` is the central difference of `f` around `params`.
pub fn finite_difference_check<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    coords: &[usize],
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(eps > 0.0 && eps <= 1e-2, "eps must lie in (0, 1e-2]");
    assert_eq!(params.len(), analytic.len());
    let mut x = params.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x);
        x[i] = orig - eps;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Denominator floor of [`relative_error`]. Central differences with
/// `eps = 1e-5` on an O(1) loss cannot resolve gradients below ~1e-10.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + RELATIVE_ERROR_FLOOR)
}

/// Up to `max` distinct coordinates of `0..n`, sorted, seeded.
pub fn sample_coords(n: usize, max: usize, seed: u64) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = sample(&mut rng, n, max).into_vec();
    v.sort_unstable();
    v
}

/// Outcome of checking a set of stored parameters.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub coords_checked: usize,
}

/// Checks the tape gradient of `loss` against central differences for the
/// given parameters, sampling at most `max_coords` coordinates of each.
pub fn check_store_gradients<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    eps: f64,
    max_coords: usize,
    seed: u64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let root = loss(store, &mut tape)?;
    let grads = tape.backward(root)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        coords_checked: 0,
    };
    for (k, &id) in ids.iter().enumerate() {
        let n = store.get(id).len();
        let analytic = grads
            .param(id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; n]);
        let base = store.get(id).data().to_vec();
        for i in sample_coords(n, max_coords, seed.wrapping_add(k as u64)) {
            let mut eval = |store: &mut ParamStore, v: f64| -> Result<f64> {
                store.get_mut(id).data_mut()[i] = v;
                let mut t = Tape::new();
                let r = loss(store, &mut t)?;
                Ok(t.scalar(r))
            };
            let up = eval(store, base[i] + eps)?;
            let down = eval(store, base[i] - eps)?;
            store.get_mut(id).data_mut()[i] = base[i];
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(analytic[i], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = store.name(id).to_string();
                report.worst_coord = i;
            }
        }
    }
    Ok(report)
}
