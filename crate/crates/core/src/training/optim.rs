use serde::{Deserialize, Serialize};

use super::params::{GroupHyper, Gradients, ModelParams, PerGroup};
use super::TrainError;
use crate::classifier::ParamGroup;

/// Rescale each group's active gradient so its L2 norm is at most `tau`.
/// Returns the pre-clip norm of every group.
pub fn clip_gradients(grads: &mut Gradients, tau: f64) -> Result<PerGroup<f64>, TrainError> {
    let mut norms = PerGroup::uniform(0.0);
    for group in ParamGroup::ALL {
        let norm = grads.group_norm(group);
        if !norm.is_finite() {
            return Err(TrainError::NonFiniteGradient(group));
        }
        match group {
            ParamGroup::Upward => norms.upward = norm,
            ParamGroup::Downward => norms.downward = norm,
            ParamGroup::Features => norms.features = norm,
            ParamGroup::Classification => norms.classification = norm,
        }
        if norm > tau {
            let s = tau / norm;
            let mode = grads.mode;
            for (kind, values) in grads.values.tensors_mut() {
                if mode.is_active(kind) && kind.group() == group {
                    values.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
    }
    Ok(norms)
}

/// Per-coordinate squared-gradient accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub accum: ModelParams,
    pub eps: f64,
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, eps: f64) -> Self {
        OptimizerState {
            accum: params.zeros_like(),
            eps,
            steps: 0,
        }
    }
}

/// One AdaGrad update over the active coordinates:
/// `acc += g^2; theta -= eta * g / sqrt(acc + eps)`.
pub fn adagrad_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    hyper: &PerGroup<GroupHyper>,
) -> Result<(), TrainError> {
    if !params.same_shape(&grads.values) || !params.same_shape(&state.accum) {
        return Err(TrainError::ShapeMismatch);
    }
    let eps = state.eps;
    let mode = grads.mode;
    for (((kind, theta), (_, g)), (_, acc)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.values.tensors())
        .zip(state.accum.tensors_mut())
    {
        if !mode.is_active(kind) {
            continue;
        }
        let eta = hyper.get(kind.group()).eta;
        for ((t, &gi), a) in theta.iter_mut().zip(g).zip(acc.iter_mut()) {
            if gi == 0.0 {
                continue;
            }
            *a += gi * gi;
            *t -= eta * gi / (*a + eps).sqrt();
        }
    }
    state.steps += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ModelMode;

    fn hyper(eta: f64) -> PerGroup<GroupHyper> {
        PerGroup::uniform(GroupHyper { lambda: 0.0, eta })
    }

    #[test]
    fn first_step_moves_by_eta() {
        let mut p = ModelParams::zeros(1, 1, 1);
        let mut g = Gradients::zeros_like(&p, ModelMode::SurfaceOnly);
        g.values.classifier.bias[0] = 4.0;
        g.values.classifier.beta[[0, 0]] = -0.5;
        let mut st = OptimizerState::new(&p, 1e-8);
        adagrad_step(&mut p, &g, &mut st, &hyper(0.1)).unwrap();
        assert!((p.classifier.bias[0] + 0.1).abs() < 1e-9);
        assert!((p.classifier.beta[[0, 0]] - 0.1).abs() < 1e-7);
        assert_eq!(st.accum.classifier.bias[0], 16.0);
        // second identical step: 0.1 * 4 / sqrt(32)
        let first = p.classifier.bias[0];
        adagrad_step(&mut p, &g, &mut st, &hyper(0.1)).unwrap();
        let expect = first - 0.4 / (32.0f64 + 1e-8).sqrt();
        assert!((p.classifier.bias[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn repeated_gradient_shrinks_step() {
        let mut p = ModelParams::zeros(1, 1, 1);
        let mut g = Gradients::zeros_like(&p, ModelMode::SurfaceOnly);
        g.values.classifier.bias[0] = 1.0;
        let mut st = OptimizerState::new(&p, 1e-8);
        adagrad_step(&mut p, &g, &mut st, &hyper(0.1)).unwrap();
        let first = -p.classifier.bias[0];
        adagrad_step(&mut p, &g, &mut st, &hyper(0.1)).unwrap();
        let second = -p.classifier.bias[0] - first;
        assert!((second / first - 0.5f64.sqrt()).abs() < 1e-7);
        // zero gradient: nothing moves
        let before = (p.clone(), st.accum.clone());
        let zero = Gradients::zeros_like(&p, ModelMode::SurfaceOnly);
        adagrad_step(&mut p, &zero, &mut st, &hyper(0.1)).unwrap();
        assert_eq!((p, st.accum), before);
    }

    #[test]
    fn inactive_parameters_untouched() {
        let mut p = ModelParams::zeros(2, 2, 1);
        let mut g = Gradients::zeros_like(&p, ModelMode::SurfaceOnly);
        g.values.composition.up.fill(1.0);
        let before = p.clone();
        let mut st = OptimizerState::new(&p, 1e-8);
        adagrad_step(&mut p, &g, &mut st, &hyper(0.5)).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn clipping_per_group() {
        let p = ModelParams::zeros(1, 2, 1);
        let mut g = Gradients::zeros_like(&p, ModelMode::Full);
        g.values.composition.up.fill(3.0);
        g.values.composition.up[[0, 1]] = 4.0;
        g.values.classifier.bias[0] = 1.0;
        let norms = clip_gradients(&mut g, 2.5).unwrap();
        assert_eq!(norms.upward, 5.0);
        assert_eq!(norms.classification, 1.0);
        assert!((g.group_norm(ParamGroup::Upward) - 2.5).abs() < 1e-12);
        assert_eq!(g.values.classifier.bias[0], 1.0);
    }

    #[test]
    fn non_finite_rejected() {
        let p = ModelParams::zeros(1, 2, 1);
        let mut g = Gradients::zeros_like(&p, ModelMode::Full);
        g.values.classifier.beta[[0, 0]] = f64::NAN;
        assert!(matches!(
            clip_gradients(&mut g, 5.0),
            Err(TrainError::NonFiniteGradient(ParamGroup::Features))
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = ModelParams::zeros(2, 2, 1);
        let g = Gradients::zeros_like(&ModelParams::zeros(3, 2, 1), ModelMode::Full);
        let mut st = OptimizerState::new(&p, 1e-8);
        assert!(matches!(adagrad_step(&mut p, &g, &mut st, &hyper(0.1)), Err(TrainError::ShapeMismatch)));
    }
}
