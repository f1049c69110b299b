//! Central finite-difference checks for graph gradients.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    /// Smallest denominator for the relative error, so exactly-zero
    /// gradients compare by absolute difference. Raised per run to
    /// `ROUNDOFF_MULTIPLE · ε·|L|/step`, the size of the rounding error in
    /// a central difference of a loss of magnitude `|L|`.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub const ROUNDOFF_MULTIPLE: f64 = 1e5;

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient of `loss` against central differences
/// for every scalar of every parameter in `store`.
pub fn check_gradients<F>(store: &mut ParamStore, loss: F, cfg: GradCheck) -> Result<GradReport>
where
    F: Fn(&ParamStore) -> Result<(Graph, Var)>,
{
    store.zero_grad();
    let (graph, out) = loss(store)?;
    graph.backward(out, store)?;
    let floor = cfg
        .floor
        .max(ROUNDOFF_MULTIPLE * f64::EPSILON * graph.value(out).item().abs() / cfg.step);

    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let (g, v) = loss(s)?;
        Ok(g.value(v).item())
    };
    for name in names {
        let analytic = store.grad(&name)?.clone();
        for i in 0..analytic.numel() {
            let orig = store.get(&name)?.data()[i];
            store.value_mut(&name).expect("known name").data_mut()[i] = orig + cfg.step;
            let up = eval(store)?;
            store.value_mut(&name).expect("known name").data_mut()[i] = orig - cfg.step;
            let down = eval(store)?;
            store.value_mut(&name).expect("known name").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic.data()[i];
            let e = rel_err(a, numeric, floor);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((name.clone(), i));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    store.zero_grad();
    Ok(report)
}
