//! Central finite-difference gradient checks.

use super::{ParamStore, Tape, Var};

pub const STEP: f64 = 1e-5;

/// Central differences of `build` w.r.t. every parameter entry, in
/// parameter order.
pub fn numeric_gradients(params: &ParamStore, build: &dyn Fn(&mut Tape) -> Var) -> Vec<Vec<f64>> {
    let eval = |p: &ParamStore| {
        let mut tape = Tape::new(p);
        let out = build(&mut tape);
        tape.scalar(out)
    };
    let mut work = params.clone();
    let mut result = Vec::new();
    for id in params.ids() {
        let mut g = vec![0.0; params.get(id).len()];
        for (j, slot) in g.iter_mut().enumerate() {
            let orig = work.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + STEP;
            let up = eval(&work);
            work.get_mut(id).data_mut()[j] = orig - STEP;
            let down = eval(&work);
            work.get_mut(id).data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * STEP);
        }
        result.push(g);
    }
    result
}

/// Largest `|a - n| / max(|a|, |n|, 1e-6)` between the tape's gradients and
/// finite differences.
pub fn max_relative_error(params: &ParamStore, build: &dyn Fn(&mut Tape) -> Var) -> f64 {
    let analytic = {
        let mut tape = Tape::new(params);
        let out = build(&mut tape);
        tape.backward(out).expect("scalar loss")
    };
    let numeric = numeric_gradients(params, build);
    let mut worst: f64 = 0.0;
    for id in params.ids() {
        for (a, n) in analytic.get(id).data().iter().zip(&numeric[id.index()]) {
            let denom = a.abs().max(n.abs()).max(1e-6);
            worst = worst.max((a - n).abs() / denom);
        }
    }
    worst
}
