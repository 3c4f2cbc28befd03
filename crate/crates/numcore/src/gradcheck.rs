use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Grads, Graph, ParamId, ParamStore, Result, Var};

/// Denominator floor for relative errors, so that gradients that are zero up
/// to floating-point noise compare as equal.
const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub mismatches: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    /// Names of parameters with at least one failing entry.
    pub fn offending_params(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.mismatches.iter().map(|m| m.param.as_str()).collect();
        names.dedup();
        names
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Compares reverse-mode gradients of `loss` against central differences
/// with step `h` on a random `fraction` of all scalar parameters (at least
/// one entry).
pub fn grad_check<F>(store: &ParamStore, loss: F, h: f64, tolerance: f64, fraction: f64, seed: u64) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Graph<'a>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let root = loss(&mut g)?;
        g.backward(root)?
    };
    grad_check_against(store, &analytic, loss, h, tolerance, fraction, seed)
}

/// Same as [`grad_check`] but checks a caller-supplied gradient.
pub fn grad_check_against<F>(
    store: &ParamStore,
    analytic: &Grads,
    loss: F,
    h: f64,
    tolerance: f64,
    fraction: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Graph<'a>) -> Result<Var>,
{
    let offsets: Vec<(ParamId, usize)> = store.iter().flat_map(|(id, _, t)| (0..t.len()).map(move |j| (id, j))).collect();
    let n = offsets.len();
    let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = sample(&mut rng, n, k).into_vec();
    picks.sort_unstable();

    let mut work = store.clone();
    let eval = |work: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(work);
        let root = loss(&mut g)?;
        Ok(g.item(root))
    };

    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, tolerance, mismatches: Vec::new() };
    for pick in picks {
        let (id, j) = offsets[pick];
        let orig = work.get(id).data()[j];
        work.get_mut(id).data_mut()[j] = orig + h;
        let plus = eval(&work)?;
        work.get_mut(id).data_mut()[j] = orig - h;
        let minus = eval(&work)?;
        work.get_mut(id).data_mut()[j] = orig;

        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.get(id).map_or(0.0, |g| g[j]);
        let rel = relative_error(a, numeric);
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(rel);
        if rel.is_nan() || rel > tolerance {
            report.mismatches.push(GradMismatch {
                param: store.name(id).to_string(),
                index: j,
                analytic: a,
                numeric,
                rel_err: rel,
            });
        }
    }
    Ok(report)
}
