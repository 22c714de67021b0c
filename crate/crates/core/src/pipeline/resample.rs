use alloc::vec::Vec;

use super::PipelineError;

/// Linear-interpolation resampler.
///
/// Output length is `round(len * to_hz / from_hz)`. Output sample `i` sits at
/// source position `i * from_hz / to_hz`; positions past the last source
/// sample hold the final value.
pub fn resample_linear(
    samples: &[f32],
    from_hz: f64,
    to_hz: f64,
) -> Result<Vec<f32>, PipelineError> {
    if samples.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    for rate in [from_hz, to_hz] {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(PipelineError::InvalidRate(rate));
        }
    }
    if from_hz == to_hz {
        return Ok(samples.to_vec());
    }
    let out_len = libm::round(samples.len() as f64 * to_hz / from_hz) as usize;
    let last = samples.len() - 1;
    Ok((0..out_len)
        .map(|i| {
            let pos = i as f64 * from_hz / to_hz;
            let j = libm::floor(pos) as usize;
            if j >= last {
                return samples[last];
            }
            let frac = pos - j as f64;
            let (a, b) = (samples[j] as f64, samples[j + 1] as f64);
            (a + (b - a) * frac) as f32
        })
        .collect())
}
