use alloc::format;
use alloc::vec::Vec;

use super::{NumError, Scalar, Tape, Tensor, Var};

/// A scalar function of a list of parameter tensors that can be recorded
/// at any precision.
pub trait Differentiable {
    /// Records the function on `tape` given one leaf per parameter, in
    /// order, and returns the scalar output.
    fn record<S: Scalar>(&self, tape: &mut Tape<S>, params: &[Var]) -> Result<Var, NumError>;
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter index, element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

/// Compares tape gradients of `f` at `params` (computed in `T`) against
/// central finite differences at every coordinate.
///
/// The finite differences are always evaluated in `f64` with the
/// fourth-order stencil `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`,
/// `h = fd_step * max(1, |x|)`. With a plain two-point difference the
/// reference itself is off by `O(h^2)`, which dominates the relative error
/// at coordinates whose gradient is close to zero. The error at a coordinate
/// is `|analytic - fd| / max(|analytic|, |fd|, 1e-8)`.
pub fn grad_check<T, F>(
    params: &[Tensor<T>],
    fd_step: f64,
    f: &F,
) -> Result<GradCheckReport, NumError>
where
    T: Scalar,
    F: Differentiable + ?Sized,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let loss = f.record(&mut tape, &vars)?;
    check_finite(tape.value(loss)?.data()[0].as_f64(), "loss")?;
    let grads = tape.backward(loss)?;
    drop(tape);

    let eval = |ps: &[Tensor<f64>]| -> Result<f64, NumError> {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.leaf(p.clone(), false)).collect();
        let l = f.record(&mut t, &vs)?;
        let v = t.value(l)?.data()[0];
        check_finite(v, "perturbed loss")?;
        Ok(v)
    };

    let mut work: Vec<Tensor<f64>> = params.iter().map(Tensor::cast).collect();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (pi, var) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(*var) {
            Some(g) => g.iter().map(|v| v.as_f64()).collect(),
            None => alloc::vec![0.0; params[pi].len()],
        };
        for (j, &a) in analytic.iter().enumerate() {
            check_finite(a, "analytic gradient")?;
            let x = work[pi].data()[j];
            let h = fd_step * x.abs().max(1.0);
            let mut at = |offset: f64| -> Result<f64, NumError> {
                work[pi].data_mut()[j] = x + offset;
                eval(&work)
            };
            let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
            work[pi].data_mut()[j] = x;
            let fd = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((pi, j));
            }
        }
    }
    Ok(report)
}

fn check_finite(v: f64, context: &str) -> Result<(), NumError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(NumError::NonFiniteValue {
            context: format!("{context}: {v}"),
        })
    }
}
