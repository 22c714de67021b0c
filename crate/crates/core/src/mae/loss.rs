use alloc::format;

use super::{LossScope, MaeError};
use crate::numcore::{NumError, Scalar, Tape, Tensor, Var};

/// Floor applied to each patch norm in the cosine denominator.
pub const COSINE_EPS: f64 = 1e-8;

/// Mean of `1 - cos` over patches (the last axis) of two equally shaped
/// tensors, computed in `f64`.
pub fn cosine_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64, MaeError> {
    if pred.shape() != target.shape() {
        return Err(NumError::ShapeMismatch {
            op: "cosine_loss",
            detail: format!("{:?} vs {:?}", pred.shape(), target.shape()),
        }
        .into());
    }
    let p = *pred.shape().last().expect("tensors have rank >= 1");
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in pred.data().chunks(p).zip(target.data().chunks(p)) {
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for (&x, &y) in a.iter().zip(b) {
            let (x, y) = (x.as_f64(), y.as_f64());
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
        let cos = ab / (libm::sqrt(aa).max(COSINE_EPS) * libm::sqrt(bb).max(COSINE_EPS));
        total += 1.0 - cos;
        count += 1;
    }
    Ok(total / count as f64)
}

/// Records the cosine loss between `pred` and `target` (both
/// `[targets, seq_len, patch]`) on the tape.
///
/// With [`LossScope::Masked`] only the positions in `masked` count; when
/// nothing is masked the scope falls back to all positions.
pub fn cosine_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    target: Var,
    scope: LossScope,
    masked: &[usize],
) -> Result<Var, NumError> {
    let ab = tape.mul(pred, target)?;
    let ab = tape.sum_last(ab)?;
    let aa = tape.mul(pred, pred)?;
    let aa = tape.sum_last(aa)?;
    let na = tape.sqrt(aa)?;
    let bb = tape.mul(target, target)?;
    let bb = tape.sum_last(bb)?;
    let nb = tape.sqrt(bb)?;
    let cos = tape.div_eps(ab, na, COSINE_EPS)?;
    let cos = tape.div_eps(cos, nb, COSINE_EPS)?;
    let cos = match scope {
        LossScope::Masked if !masked.is_empty() => {
            // [targets, seq] -> [seq, targets] so positions are rows.
            let by_pos = tape.transpose(cos)?;
            tape.gather_rows(by_pos, masked)?
        }
        _ => cos,
    };
    let mean = tape.mean(cos)?;
    let neg = tape.scale(mean, -1.0)?;
    let one = tape.constant(Tensor::scalar(T::one()));
    tape.add(neg, one)
}
