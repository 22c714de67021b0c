use alloc::vec::Vec;

use super::{NormParams, SIGMA_FLOOR};

/// Per-epoch z-score. The standard deviation (population form) is floored
/// at [`SIGMA_FLOOR`].
pub fn normalize_epoch(samples: &[f32]) -> (Vec<f32>, NormParams) {
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = samples
        .iter()
        .map(|&v| (v as f64 - mean) * (v as f64 - mean))
        .sum::<f64>()
        / n;
    let std = libm::sqrt(var).max(SIGMA_FLOOR);
    let out = samples
        .iter()
        .map(|&v| ((v as f64 - mean) / std) as f32)
        .collect();
    (out, NormParams { mean, std })
}

/// Inverse of [`normalize_epoch`].
pub fn denormalize(normalized: &[f32], params: NormParams) -> Vec<f32> {
    normalized
        .iter()
        .map(|&z| (z as f64 * params.std + params.mean) as f32)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_epoch_hits_sigma_floor() {
        let (z, p) = normalize_epoch(&[5.0; 3000]);
        assert!(z.iter().all(|&v| v == 0.0));
        assert_eq!(p.mean, 5.0);
        assert_eq!(p.std, SIGMA_FLOOR);
    }

    #[test]
    fn standardized_input_is_fixed_point() {
        // ±1 alternating: mean 0, population std 1.
        let x: Vec<f32> = (0..3000)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let (z, _) = normalize_epoch(&x);
        for (a, b) in z.iter().zip(&x) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn denormalize_inverts(x in proptest::collection::vec(-500.0f32..500.0, 3000)) {
            let (z, p) = normalize_epoch(&x);
            let back = denormalize(&z, p);
            let scale = x.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-3);
            for (a, b) in back.iter().zip(&x) {
                prop_assert!((a - b).abs() <= 1e-4 * scale);
            }
        }
    }
}
