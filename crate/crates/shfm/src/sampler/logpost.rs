use statrs::function::gamma::ln_gamma;

use crate::error::{Result, ShfmError};
use crate::model::{observational_loglik, ParamState};
use crate::sampler::context::{CorrelationCache, FitContext};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Unnormalized log posterior of a state under the given fit context.
///
/// All density normalization constants that depend on parameters are
/// included; constants that depend only on the data are too, so the value is
/// directly comparable across states of the same problem.
pub fn log_posterior(
    state: &ParamState,
    ctx: &FitContext,
    hcache: &CorrelationCache,
) -> Result<f64> {
    state.validate(&ctx.spec)?;
    let spec = &ctx.spec;
    let hyper = &ctx.hyper;
    let n_cities = ctx.n_cities();

    // Observational level. Aggregated variants regress the city means
    // directly on theta.
    let mut lp = if spec.aggregated() {
        let mut ll = 0.0;
        for (i, y) in ctx.data.cities.iter().enumerate() {
            for k in 0..ctx.n_indicators() {
                let r = y[(0, k)] - state.mu[k] - state.beta[k] * state.theta[i];
                let s2 = state.sigma2[k];
                ll -= 0.5 * (LN_2PI + s2.ln() + r * r / s2);
            }
        }
        ll
    } else {
        observational_loglik(state, &ctx.data)?
    };

    // f | theta, f_tilde, omega.
    if spec.uses_tract_factors() {
        for i in 0..n_cities {
            let omega = state.omega[i];
            let half_log = 0.5 * (LN_2PI + omega.ln());
            for j in 0..state.f[i].len() {
                let r = state.f[i][j] - state.theta[i] - state.f_tilde[i][j];
                lp -= half_log + 0.5 * r * r / omega;
            }
        }
    }

    // f_tilde | tau2, phi (CAR).
    if spec.uses_car() {
        let cars = ctx.cars.as_ref().expect("CAR variant has structures");
        for (i, car) in cars.iter().enumerate() {
            let n = car.n_tracts() as f64;
            let tau2 = state.tau2[i];
            lp += -0.5 * n * (LN_2PI + tau2.ln()) + 0.5 * car.logdet_prec_shape()
                - 0.5 * car.quad_form_prec(&state.f_tilde[i]) / tau2;
        }
    }

    // theta | theta0, delta2, lambda1.
    if spec.uses_theta() {
        let q = state.theta.map(|t| t - state.theta0);
        let quad = hcache.quad(&q, &q);
        lp += -0.5 * n_cities as f64 * (LN_2PI + state.delta2.ln()) - 0.5 * hcache.logdet
            - 0.5 * quad / state.delta2;

        // theta0 prior.
        lp += ln_normal(state.theta0, hyper.t0, hyper.v0);
        // Improper delta2 prior.
        lp -= state.delta2.ln();
        if spec.uses_matern() {
            lp += ln_inv_gamma(state.lambda1, 2.0, hyper.lambda1_scale);
        }
    }

    // Remaining priors.
    for k in 0..ctx.n_indicators() {
        lp += ln_normal(state.mu[k], hyper.mu0[k], hyper.c_mu);
        if k != spec.anchor {
            lp += ln_normal(state.beta[k], hyper.beta0, hyper.c0);
        }
        let (a, b) = hyper.sigma2_ig[k];
        lp += ln_inv_gamma(state.sigma2[k], a, b);
    }
    if spec.uses_tract_factors() {
        for i in 0..n_cities {
            let (g, h) = hyper.omega_ig[i];
            lp += ln_inv_gamma(state.omega[i], g, h);
        }
    }
    if spec.uses_car() {
        for i in 0..n_cities {
            let (c, d) = hyper.tau2_ig[i];
            lp += ln_inv_gamma(state.tau2[i], c, d);
        }
    }

    if !lp.is_finite() {
        return Err(ShfmError::Numerical("non-finite log posterior".into()));
    }
    Ok(lp)
}

pub(crate) fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}

pub(crate) fn ln_inv_gamma(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}
