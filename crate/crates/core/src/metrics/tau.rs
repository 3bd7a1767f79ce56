use crate::error::{NlcError, Result};
use crate::net::{ActivationConfig, ResolvedActivation};
use crate::tensor::quadrature::{gaussian_expectation, gaussian_expectations, HALF_WIDTH};

fn resolve(cfg: &ActivationConfig) -> Result<(ResolvedActivation, Vec<f64>)> {
    let act = cfg.resolve()?;
    let kinks = act.kinks(-HALF_WIDTH, HALF_WIDTH);
    Ok((act, kinks))
}

/// Mean and centred variance of `tau(s)`, `s ~ N(0, 1)`, in two passes.
fn mean_and_variance(act: &ResolvedActivation, kinks: &[f64]) -> (f64, f64) {
    let mean = gaussian_expectation(|s| act.eval(s), kinks);
    let var = gaussian_expectation(|s| (act.eval(s) - mean).powi(2), kinks);
    (mean, var)
}

/// `sqrt(E tau'(s)^2 / Var tau(s))` under a standard normal `s`.
pub fn nlc_tau(cfg: &ActivationConfig) -> Result<f64> {
    let (act, kinks) = resolve(cfg)?;
    let (_, var) = mean_and_variance(&act, &kinks);
    let grad_sq = gaussian_expectation(|s| act.grad(s).powi(2), &kinks);
    if !(var > 1e-300) {
        return Err(NlcError::DegenerateActivation(format!(
            "{} has zero variance under N(0, 1)",
            cfg.base
        )));
    }
    Ok((grad_sq / var).sqrt())
}

/// Residual power of the best affine fit over the power of the fit.
pub fn linear_approx_error(cfg: &ActivationConfig) -> Result<f64> {
    let (act, kinks) = resolve(cfg)?;
    let (mean, _) = mean_and_variance(&act, &kinks);
    let slope = gaussian_expectation(|s| act.eval(s) * s, &kinks);
    let [resid, fit] = gaussian_expectations(
        |s| {
            let f = mean + slope * s;
            [(act.eval(s) - f).powi(2), f * f]
        },
        &kinks,
    );
    if !(fit > 0.0) {
        return Err(NlcError::Degenerate(format!(
            "best affine fit to {} is identically zero",
            cfg.base
        )));
    }
    Ok(resid / fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_linear() {
        let id = ActivationConfig::plain("identity");
        assert!((nlc_tau(&id).unwrap() - 1.0).abs() < 1e-12);
        assert!(linear_approx_error(&id).unwrap().abs() < 1e-12);
    }

    #[test]
    fn relu_closed_form() {
        // E relu'^2 = 1/2, Var relu = 1/2 - 1/(2 pi).
        let pi = std::f64::consts::PI;
        let want = (0.5 / (0.5 - 0.5 / pi)).sqrt();
        let got = nlc_tau(&ActivationConfig::plain("relu")).unwrap();
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn square_closed_form() {
        // E (2s)^2 = 4, Var s^2 = 2; best fit is the constant 1, residual 2.
        let sq = ActivationConfig::plain("square");
        assert!((nlc_tau(&sq).unwrap() - 2f64.sqrt()).abs() < 1e-10);
        assert!((linear_approx_error(&sq).unwrap() - 2.0).abs() < 1e-10);
    }
}
