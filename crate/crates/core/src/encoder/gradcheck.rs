//! Finite-difference verification of the backpropagated gradients.

use super::model::EncoderParams;
use super::train::{example_loss, regression_loss, EncodedExample, VadExample};
use crate::error::Result;
use crate::labelspace::{AnnotationKind, LabelSpace};

pub const STEP: f64 = 1e-5;
/// Below this magnitude on both sides the absolute difference is reported.
pub const ABS_FALLBACK: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ABS_FALLBACK {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn check<F>(params: &EncoderParams, analytic: &EncoderParams, loss: F) -> Result<f64>
where
    F: Fn(&EncoderParams) -> Result<f64>,
{
    let mut probe = params.clone();
    let analytic = analytic.tensors();
    let mut worst: f64 = 0.0;
    let n_tensors = analytic.len();
    for t in 0..n_tensors {
        for j in 0..analytic[t].len() {
            let orig = probe.tensors()[t][j];
            probe.tensors_mut()[t][j] = orig + STEP;
            let plus = loss(&probe)?;
            probe.tensors_mut()[t][j] = orig - STEP;
            let minus = loss(&probe)?;
            probe.tensors_mut()[t][j] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[t][j], numeric));
        }
    }
    Ok(worst)
}

/// Max relative error between the analytic gradient of the EMD objective and
/// central differences, over every parameter.
pub fn grad_check(
    params: &EncoderParams,
    example: &EncodedExample,
    space: &LabelSpace,
    kind: AnnotationKind,
) -> Result<f64> {
    let mut analytic = params.zeros_like();
    example_loss(params, example, space, kind, Some(&mut analytic))?;
    check(params, &analytic, |p| {
        example_loss(p, example, space, kind, None)
    })
}

/// Same check for the stage-two regression objective.
pub fn grad_check_regression(
    params: &EncoderParams,
    example: &VadExample,
    kind: AnnotationKind,
) -> Result<f64> {
    let mut analytic = params.zeros_like();
    regression_loss(params, example, kind, Some(&mut analytic))?;
    check(params, &analytic, |p| {
        regression_loss(p, example, kind, None)
    })
}
