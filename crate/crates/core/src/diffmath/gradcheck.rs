use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Relative error with a `1e-6` floor on the denominator, so gradients that
/// are both near zero compare on absolute terms.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(parameter, element, analytic, numeric)` at the largest error.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares tape gradients of every parameter element with central
/// differences of step `eps`. The store is restored before returning.
pub fn check_gradients<F>(store: &mut ParamStore, eps: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let l = loss(store, &mut tape)?;
    let grads = tape.backward(l)?.param_grads(store);
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = loss(s, &mut t)?;
        Ok(t.scalar(l))
    };
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let up = eval(store);
            store.get_mut(id).data_mut()[i] = orig - eps;
            let down = eval(store);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up? - down?) / (2.0 * eps);
            let analytic = grads.get(id)[i];
            let err = rel_err(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((store.name(id).to_string(), i, analytic, numeric));
            }
        }
    }
    Ok(report)
}
