use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor for relative errors, so near-zero gradients are judged
/// on absolute error instead.
pub const ABS_FLOOR: f64 = 1e-6;

/// `|analytic − numeric| / max(|analytic|, |numeric|, ABS_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(ABS_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the tape gradient of `f` at `x` with central differences
/// `(f(x+eps·eᵢ) − f(x−eps·eᵢ)) / 2eps` over every element of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "grad_check eps must lie in (0, 1e-2], got {eps}"
        )));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let loss = f(&mut tape, xv)?;
    tape.backward(loss)?;
    let analytic = tape
        .grad(xv)
        .ok_or_else(|| Error::Backward("no gradient for probe input".into()))?
        .into_data();

    let eval = |probe: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(probe, false);
        let out = f(&mut tape, v)?;
        tape.value(out).item()
    };

    let mut numeric = Vec::with_capacity(x.numel());
    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let d = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let err = relative_error(analytic[i], d);
        if err > max_rel_error {
            max_rel_error = err;
            worst_index = i;
        }
        numeric.push(d);
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor::scalar(3.0);
        let report = grad_check(|t, v| t.mul(v, v), &x, 1e-5).unwrap();
        assert_eq!(report.analytic, vec![6.0]);
        assert!(report.max_rel_error < 1e-8, "{}", report.max_rel_error);
    }

    #[test]
    fn rejects_bad_eps() {
        let x = Tensor::scalar(1.0);
        assert!(grad_check(|t, v| t.mul(v, v), &x, 0.0).is_err());
        assert!(grad_check(|t, v| t.mul(v, v), &x, 0.1).is_err());
    }

    #[test]
    fn floor_applies_to_tiny_gradients() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 2e-9) - 1e-3).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
