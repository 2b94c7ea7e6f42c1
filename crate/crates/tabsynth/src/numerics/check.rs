//! Gradient verification against central finite differences.

use super::{Graph, NodeId, NumericsError, ParamSet};

/// Outcome of a finite-difference sweep over every parameter coordinate.
#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub max_rel_err: f64,
    pub pass: bool,
    /// Parameter name and flat coordinate of the worst disagreement.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// Compares the analytic gradient of a scalar `root` with central
/// differences `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate, over
/// every parameter in the set. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check(
    graph: &mut Graph,
    root: NodeId,
    params: &mut ParamSet,
    h: f64,
    tol: f64,
) -> Result<FiniteDiffReport, NumericsError> {
    if h <= 0.0 {
        return Err(NumericsError::Contract("step h must be positive".into()));
    }
    graph.forward(params)?;
    graph.backward(root, params)?;
    let analytic: Vec<Vec<f64>> = params
        .ids()
        .map(|id| params.grad(id).data().to_vec())
        .collect();

    let mut max_rel_err: f64 = 0.0;
    let mut worst = None;
    let mut coords_checked = 0;
    let ids: Vec<_> = params.ids().collect();
    for (pi, &id) in ids.iter().enumerate() {
        for coord in 0..params.value(id).len() {
            let orig = params.value(id).data()[coord];

            params.value_mut(id).data_mut()[coord] = orig + h;
            graph.forward(params)?;
            let f_plus = graph.value(root).item();

            params.value_mut(id).data_mut()[coord] = orig - h;
            graph.forward(params)?;
            let f_minus = graph.value(root).item();

            params.value_mut(id).data_mut()[coord] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[pi][coord];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            coords_checked += 1;
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = Some((params.get(id).name.clone(), coord));
            }
        }
    }
    // leave the graph evaluated at the unperturbed point
    graph.forward(params)?;
    Ok(FiniteDiffReport {
        max_rel_err,
        pass: max_rel_err <= tol,
        worst,
        coords_checked,
    })
}
