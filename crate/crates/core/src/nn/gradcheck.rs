//! Central finite-difference gradient checks.

use super::params::{Grads, ParamSet};
use super::tape::{Tape, Var};

/// Keeps tensors whose true gradient is zero (e.g. attention key biases,
/// which softmax cancels) from dividing finite-difference noise by ~0.
pub const DENOM_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    /// `|analytic - numeric| / max(|analytic| + |numeric|, DENOM_FLOOR)` over
    /// the whole tensor (L2 norms).
    pub rel_error: f64,
    pub analytic_norm: f64,
}

/// Compares backprop gradients of the scalar built by `f` against central
/// differences for every tensor whose name passes `filter`.
pub fn check_gradients(
    params: &mut ParamSet,
    eps: f64,
    filter: &dyn Fn(&str) -> bool,
    f: &dyn Fn(&mut Tape) -> Var,
) -> Vec<TensorCheck> {
    let mut grads = Grads::for_params(params);
    {
        let mut tape = Tape::new(params);
        let out = f(&mut tape);
        tape.backward(out, &mut grads);
    }
    let eval = |p: &ParamSet| {
        let mut tape = Tape::new(p);
        let out = f(&mut tape);
        tape.value(out).data[0]
    };
    let ids: Vec<_> = params.ids().collect();
    let mut report = Vec::new();
    for id in ids {
        if !filter(params.name(id)) {
            continue;
        }
        let analytic = grads.dense(id);
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for i in 0..analytic.len() {
            let orig = params.get(id).data[i];
            params.get_mut(id).data[i] = orig + eps;
            let up = eval(params);
            params.get_mut(id).data[i] = orig - eps;
            let down = eval(params);
            params.get_mut(id).data[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            diff2 += (analytic[i] - numeric).powi(2);
            a2 += analytic[i].powi(2);
            n2 += numeric.powi(2);
        }
        let rel_error = diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(DENOM_FLOOR);
        report.push(TensorCheck {
            name: params.name(id).to_string(),
            rel_error,
            analytic_norm: a2.sqrt(),
        });
    }
    report
}
