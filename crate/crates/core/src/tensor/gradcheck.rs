use crate::error::Result;

use super::graph::{Graph, Var};
use super::params::{Gradients, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Distance of the evaluation point from the nearest ReLU kink. Central
    /// differences are only meaningful when this is well above `h`.
    pub kink_margin: f64,
}

fn evaluate<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    g.value(out).item()
}

/// Compares reverse-mode gradients of the scalar `f` with central
/// differences `(f(x+h) − f(x−h)) / 2h` over every parameter coordinate.
/// Relative error uses `max(|a|, |b|, 1e-8)` as denominator.
pub fn gradcheck<F>(store: &ParamStore, f: F, h: f64, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let analytic = g.backward(out)?;
    gradcheck_against(store, f, &analytic, h, tol)
}

/// As [`gradcheck`], but with caller-supplied analytic gradients.
pub fn gradcheck_against<F>(
    store: &ParamStore,
    f: F,
    analytic: &Gradients,
    h: f64,
    tol: f64,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut base = Graph::new();
    f(&mut base, store)?;
    let kink_margin = base.relu_margin();
    let mut probe = store.clone();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    for id in store.ids() {
        for k in 0..store.value(id).numel() {
            let x0 = store.value(id).data()[k];
            probe.value_mut(id).data_mut()[k] = x0 + h;
            let fp = evaluate(&probe, &f)?;
            probe.value_mut(id).data_mut()[k] = x0 - h;
            let fm = evaluate(&probe, &f)?;
            probe.value_mut(id).data_mut()[k] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.get(id).map_or(0.0, |t| t.data()[k]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            checked += 1;
            if rel > max_rel {
                max_rel = rel;
                worst = Some((store.name(id).to_string(), k));
            }
        }
    }
    Ok(GradcheckReport {
        passed: max_rel <= tol,
        max_rel_error: max_rel,
        worst,
        checked,
        kink_margin,
    })
}
