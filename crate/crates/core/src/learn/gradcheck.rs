use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParameterStore, Tensor};
use crate::Result;

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares reverse-mode gradients with central differences of step `h` on
/// `probes` randomly chosen coordinates (all of them if there are fewer).
///
/// `f` returns the loss and one gradient per parameter of the store it is
/// given.
pub fn gradient_check<F>(
    store: &ParameterStore,
    f: F,
    probes: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParameterStore) -> Result<(f64, Vec<Tensor>)>,
{
    let (_, analytic) = f(store)?;
    let coords: Vec<(usize, usize)> = store
        .iter()
        .enumerate()
        .flat_map(|(p, (_, _, t))| (0..t.len()).map(move |i| (p, i)))
        .collect();
    let chosen: Vec<usize> = if probes >= coords.len() {
        (0..coords.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = rand::seq::index::sample(&mut rng, coords.len(), probes).into_vec();
        v.sort_unstable();
        v
    };

    let ids: Vec<_> = store.ids().collect();
    let mut report = GradCheckReport {
        probes: chosen.len(),
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    let mut work = store.clone();
    for c in chosen {
        let (p, i) = coords[c];
        let id = ids[p];
        let orig = store.get(id).data()[i];
        work.get_mut(id).data_mut()[i] = orig + h;
        let (up, _) = f(&work)?;
        work.get_mut(id).data_mut()[i] = orig - h;
        let (down, _) = f(&work)?;
        work.get_mut(id).data_mut()[i] = orig;

        let numeric = (up - down) / (2.0 * h);
        let a = analytic[p].data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err;
            report.worst = Some((store.name(id).to_string(), i));
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}
