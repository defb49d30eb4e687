//! Central finite-difference check of [`Mlp::grad`].

use super::Mlp;
use crate::error::Result;

/// Denominator floor of the relative error, so coordinates whose gradient is
/// essentially zero are judged on absolute error instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_param_rel_error: f64,
    pub max_input_rel_error: f64,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.max_param_rel_error.max(self.max_input_rel_error)
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares both vector-Jacobian products against central differences of
/// `upstream · net(input)` with step `h`.
pub fn finite_difference_check(
    net: &Mlp,
    input: &[f64],
    upstream: &[f64],
    h: f64,
) -> Result<GradCheck> {
    let (param_grad, input_grad) = net.grad(input, upstream)?;
    let scalar = |net: &Mlp, x: &[f64]| -> Result<f64> {
        Ok(net
            .forward(x)?
            .iter()
            .zip(upstream)
            .map(|(y, g)| y * g)
            .sum())
    };

    let mut probe = net.clone();
    let mut max_param_rel_error = 0.0f64;
    for (i, &analytic) in param_grad.iter().enumerate() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let plus = scalar(&probe, input)?;
        probe.params[i] = orig - h;
        let minus = scalar(&probe, input)?;
        probe.params[i] = orig;
        max_param_rel_error =
            max_param_rel_error.max(rel_error(analytic, (plus - minus) / (2.0 * h)));
    }

    let mut x = input.to_vec();
    let mut max_input_rel_error = 0.0f64;
    for (i, &analytic) in input_grad.iter().enumerate() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = scalar(net, &x)?;
        x[i] = orig - h;
        let minus = scalar(net, &x)?;
        x[i] = orig;
        max_input_rel_error =
            max_input_rel_error.max(rel_error(analytic, (plus - minus) / (2.0 * h)));
    }
    Ok(GradCheck {
        max_param_rel_error,
        max_input_rel_error,
    })
}
