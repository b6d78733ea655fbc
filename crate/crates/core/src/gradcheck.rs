//! Central-difference gradient checking.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::params::{BoundParams, Params};
use crate::tape::{Tape, Value};

/// Compare the tape's analytic gradients against central finite differences.
///
/// `f` builds a scalar loss from freshly bound parameters; it is evaluated
/// `1 + 2n` times for `n` trainable coordinates. Returns the maximum over
/// coordinates of `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(params: &Params, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&Rc<Tape>, &BoundParams) -> Value,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }

    let tape = Tape::new();
    let bound = params.bind(&tape);
    let loss = f(&tape, &bound);
    if !loss.item().is_finite() {
        return Err(Error::NonFinite("grad_check: loss at base point".into()));
    }
    let grads = tape.backward(&loss)?;
    let analytic = bound.grads(&grads);

    let eval = |p: &Params| -> Result<f64> {
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let v = f(&tape, &bound).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check: loss at perturbed point".into()));
        }
        Ok(v)
    };

    let mut worst: f64 = 0.0;
    let mut scratch = params.clone();
    let names: Vec<String> = params
        .iter()
        .filter(|(_, t)| t.requires_grad())
        .map(|(k, _)| k.to_string())
        .collect();
    for name in &names {
        let n = params.get(name).len();
        for i in 0..n {
            let orig = params.get(name).data()[i];
            scratch.get_mut(name).data_mut()[i] = orig + eps;
            let up = eval(&scratch)?;
            scratch.get_mut(name).data_mut()[i] = orig - eps;
            let down = eval(&scratch)?;
            scratch.get_mut(name).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[name].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn square_function_checks_tightly() {
        // f(x) = x^2 at x = 3
        let mut p = Params::new();
        p.insert("x", Tensor::scalar(3.0));
        let err = grad_check(&p, 1e-5, |_tape, b| {
            let x = b.get("x");
            x.mul(x).sum()
        })
        .unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn rejects_eps_out_of_range() {
        let mut p = Params::new();
        p.insert("x", Tensor::scalar(1.0));
        assert!(grad_check(&p, 1e-2, |_t, b| b.get("x").sum()).is_err());
    }

    #[test]
    fn logsumexp_gradient_is_softmax() {
        let mut p = Params::new();
        p.insert("z", Tensor::vector(vec![0.3, -1.2, 2.0]));
        let err = grad_check(&p, 1e-5, |_t, b| b.get("z").logsumexp()).unwrap();
        assert!(err < 1e-9, "relative error {err}");

        // And the analytic gradient itself equals softmax(z).
        let tape = Tape::new();
        let b = p.bind(&tape);
        let z = b.get("z");
        let loss = z.logsumexp();
        let g = tape.backward(&loss).unwrap();
        let grad = g.get(z);
        let sm = z.softmax().data();
        for (a, s) in grad.data().iter().zip(&sm) {
            assert!((a - s).abs() < 1e-12);
        }
    }
}
