//! Central finite-difference check of analytic gradients.

use crate::error::Result;
use crate::tensor::Tensor;

/// A model whose loss on a fixed input can be evaluated and differentiated.
///
/// `parameters_mut` lists the tensors to check; `gradients` must return one
/// tensor per entry, in the same order.
pub trait Differentiable {
    type Input;
    type Loss;

    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    fn loss(&mut self, input: &Self::Input, loss: &Self::Loss) -> Result<f64>;

    fn gradients(&mut self, input: &Self::Input, loss: &Self::Loss) -> Result<Vec<Tensor>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    /// `(parameter index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

pub fn finite_diff_gradcheck<M: Differentiable>(
    model: &mut M,
    input: &M::Input,
    loss: &M::Loss,
    epsilon: f64,
) -> Result<GradcheckReport> {
    finite_diff_gradcheck_strided(model, input, loss, epsilon, 1)
}

/// Like [`finite_diff_gradcheck`] but only probes every `stride`-th element of
/// each parameter tensor (the first element is always probed).
pub fn finite_diff_gradcheck_strided<M: Differentiable>(
    model: &mut M,
    input: &M::Input,
    loss: &M::Loss,
    epsilon: f64,
    stride: usize,
) -> Result<GradcheckReport> {
    finite_diff_gradcheck_steps(model, input, loss, &[epsilon], stride, 0.0)
}

/// Probes each element with `steps` in order and keeps the smallest error,
/// stopping at the first step whose error is below `settle`.
///
/// A central difference is wrong when its interval straddles a ReLU kink or
/// when the step is small enough for rounding to dominate; a wrong analytic
/// gradient disagrees at every step, so it still surfaces.
pub fn finite_diff_gradcheck_steps<M: Differentiable>(
    model: &mut M,
    input: &M::Input,
    loss: &M::Loss,
    steps: &[f64],
    stride: usize,
    settle: f64,
) -> Result<GradcheckReport> {
    assert!(!steps.is_empty() && steps.iter().all(|h| *h > 0.0), "steps must be positive");
    let stride = stride.max(1);
    let analytic = model.gradients(input, loss)?;
    let mut report = GradcheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    let n_params = model.parameters_mut().len();
    assert_eq!(n_params, analytic.len(), "one gradient per checked parameter");

    for p in 0..n_params {
        let len = analytic[p].len();
        for i in (0..len).step_by(stride) {
            let original = model.parameters_mut()[p].data()[i];
            let mut err = f64::INFINITY;
            for &h in steps {
                model.parameters_mut()[p].data_mut()[i] = original + h;
                let plus = model.loss(input, loss)?;
                model.parameters_mut()[p].data_mut()[i] = original - h;
                let minus = model.loss(input, loss)?;
                model.parameters_mut()[p].data_mut()[i] = original;
                err = err.min(relative_error(analytic[p].data()[i], (plus - minus) / (2.0 * h)));
                if err < settle {
                    break;
                }
            }
            report.checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((p, i));
            }
        }
    }
    Ok(report)
}
