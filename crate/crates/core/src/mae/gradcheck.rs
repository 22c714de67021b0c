use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{make_mask, MaeConfig, MaeError, MaeModel, MaskPlan};
use crate::numcore::{
    grad_check, Differentiable, GradCheckReport, NumError, Scalar, Tape, Tensor, Var,
};

/// Finite-difference step used by [`tiny_grad_check`], scaled by
/// `max(1, |x|)` per coordinate.
pub const TINY_FD_STEP: f64 = 1e-3;

/// Loss of one fixed example as a function of all model parameters.
struct ExampleLoss {
    model: MaeModel<f64>,
    input: Vec<f32>,
    targets: Vec<Vec<f32>>,
    plan: MaskPlan,
}

impl Differentiable for ExampleLoss {
    fn record<S: Scalar>(&self, tape: &mut Tape<S>, params: &[Var]) -> Result<Var, NumError> {
        let model = self.model.cast::<S>();
        let targets: Vec<&[f32]> = self.targets.iter().map(Vec::as_slice).collect();
        let mut run = || -> Result<Var, MaeError> {
            let bound = model.bind_vars(tape, params)?;
            Ok(model
                .record_example(tape, &bound, &self.input, &targets, &self.plan)?
                .loss)
        };
        run().map_err(|e| match e {
            MaeError::Num(n) => n,
            other => NumError::ShapeMismatch {
                op: "mae",
                detail: alloc::format!("{other}"),
            },
        })
    }
}

/// Checks the full loss gradient of a freshly initialized tiny model at
/// precision `T` (two targets, standard-normal data, half the tokens
/// masked) against finite differences of the same loss.
pub fn tiny_grad_check<T: Scalar>(seed: u64) -> Result<GradCheckReport, MaeError> {
    let config = MaeConfig::tiny(alloc::vec!["target_a".into(), "target_b".into()]);
    let model = MaeModel::<f64>::init(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut signal = |n: usize| -> Vec<f32> {
        (0..n)
            .map(|_| StandardNormal.sample(&mut rng))
            .map(|v: f64| v as f32)
            .collect()
    };
    let n = config.epoch_len();
    let input = signal(n);
    let targets = alloc::vec![signal(n), signal(n)];
    let plan = make_mask(config.seq_len, config.mask_ratio, &mut rng);

    let params: Vec<Tensor<T>> = model.params.iter().map(Tensor::cast).collect();
    let f = ExampleLoss {
        model,
        input,
        targets,
        plan,
    };
    Ok(grad_check(&params, TINY_FD_STEP, &f)?)
}
