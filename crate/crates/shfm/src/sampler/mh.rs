use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::model::ParamState;
use crate::sampler::context::{CorrelationCache, FitContext};
use crate::sampler::logpost::ln_inv_gamma;

/// Random-walk Metropolis–Hastings update of the Matérn range `lambda1` on
/// the log scale (with the change-of-variables correction).
///
/// Only the terms that involve `H(lambda1)` enter the acceptance ratio: the
/// `theta` density and the `lambda1` prior. A proposal whose correlation
/// matrix fails to factorize is rejected and counted like any other
/// rejection. On acceptance the correlation cache is replaced.
pub fn mh_update_lambda1<R: Rng>(
    state: &mut ParamState,
    ctx: &FitContext,
    hcache: &mut CorrelationCache,
    step_scale: f64,
    rng: &mut R,
) -> Result<bool> {
    let z: f64 = StandardNormal.sample(rng);
    let proposal = (state.lambda1.ln() + step_scale * z).exp();
    // Draw the acceptance uniform unconditionally to keep the random stream
    // aligned whether or not the proposal factorizes.
    let u: f64 = rng.gen();

    let cand = match CorrelationCache::matern(
        &ctx.geometry.city_centroids,
        proposal,
        ctx.spec.lambda2,
    ) {
        Ok(c) => c,
        Err(_) => return Ok(false),
    };

    let q: DVector<f64> = state.theta.map(|t| t - state.theta0);
    let log_target = |cache: &CorrelationCache, lambda1: f64| {
        -0.5 * cache.logdet - 0.5 * cache.quad(&q, &q) / state.delta2
            + ln_inv_gamma(lambda1, 2.0, ctx.hyper.lambda1_scale)
    };
    let log_ratio = log_target(&cand, proposal) - log_target(hcache, state.lambda1)
        + proposal.ln()
        - state.lambda1.ln();

    if u.ln() < log_ratio {
        state.lambda1 = proposal;
        *hcache = cand;
        Ok(true)
    } else {
        Ok(false)
    }
}
