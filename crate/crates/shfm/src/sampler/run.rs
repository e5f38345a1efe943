use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShfmError};
use crate::kernels::Geometry;
use crate::model::{HyperPriors, IndicatorPanel, ModelSpec, ParamState};
use crate::sampler::blocks::gibbs_sweep;
use crate::sampler::context::FitContext;
use crate::sampler::init::initial_state;
use crate::sampler::logpost::log_posterior;

/// MCMC protocol settings. Defaults follow the 30k / 10k burn-in / thin-5 /
/// two-chain protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Initial random-walk scale for the log-lambda1 proposal; adapted
    /// during burn-in toward 30-45% acceptance, frozen afterwards.
    pub mh_step_scale: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_iter: 30_000,
            burn_in: 10_000,
            thin: 5,
            n_chains: 2,
            seed: 0,
            mh_step_scale: 0.3,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(ShfmError::InvalidInput(format!(
                "burn_in ({}) must be less than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(ShfmError::InvalidInput("thin must be >= 1".into()));
        }
        if self.n_chains == 0 {
            return Err(ShfmError::InvalidInput("n_chains must be >= 1".into()));
        }
        if !(self.mh_step_scale > 0.0) {
            return Err(ShfmError::InvalidInput("mh_step_scale must be positive".into()));
        }
        Ok(())
    }

    /// Number of stored draws per chain.
    pub fn n_stored(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

/// Thinned post-burn-in draws of one chain plus its log-posterior trace.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<ParamState>,
    /// Unnormalized log posterior at every iteration (including burn-in).
    pub logpost_trace: Vec<f64>,
    /// Post-burn-in acceptance rate of the lambda1 MH step; `None` for
    /// variants without the step.
    pub acceptance_rate_lambda1: Option<f64>,
    pub chain_id: usize,
}

/// Runs a single chain. Fully reproducible from `(config.seed, chain_id)`.
pub fn run_chain(
    panel: &IndicatorPanel,
    spec: &ModelSpec,
    hyper: &HyperPriors,
    geometry: &Geometry,
    config: &McmcConfig,
    chain_id: usize,
) -> Result<ChainOutput> {
    let ctx = FitContext::new(panel, spec, hyper, geometry)?;
    run_chain_ctx(&ctx, config, chain_id)
}

/// Runs a single chain against a prebuilt context.
pub fn run_chain_ctx(ctx: &FitContext, config: &McmcConfig, chain_id: usize) -> Result<ChainOutput> {
    config.validate()?;
    if ctx.spec.uses_theta() && ctx.n_cities() < 3 {
        return Err(ShfmError::InvalidInput(format!(
            "{} needs at least 3 cities: the improper delta2 prior has no proper posterior below that",
            ctx.spec.variant.name()
        )));
    }
    let mut rng = chain_rng(config.seed, chain_id);
    let mut state = initial_state(ctx, chain_id, &mut rng);
    let mut hcache = ctx.correlation_cache(&state)?;

    let mut step_scale = config.mh_step_scale;
    let mut window_accepts = 0usize;
    let mut window_proposals = 0usize;
    let mut accepts = 0usize;
    let mut proposals = 0usize;

    let mut draws = Vec::with_capacity(config.n_stored());
    let mut logpost_trace = Vec::with_capacity(config.n_iter);

    for t in 0..config.n_iter {
        let accepted = gibbs_sweep(&mut state, ctx, &mut hcache, step_scale, &mut rng)
            .map_err(|e| ShfmError::Numerical(format!("iteration {t}: {e}")))?;
        if let Some(acc) = accepted {
            if t < config.burn_in {
                window_proposals += 1;
                window_accepts += acc as usize;
                // Adapt toward 30-45% acceptance during burn-in only.
                if window_proposals == 100 {
                    let rate = window_accepts as f64 / 100.0;
                    if rate > 0.45 {
                        step_scale *= 1.2;
                    } else if rate < 0.30 {
                        step_scale /= 1.2;
                    }
                    window_proposals = 0;
                    window_accepts = 0;
                }
            } else {
                proposals += 1;
                accepts += acc as usize;
            }
        }
        logpost_trace.push(
            log_posterior(&state, ctx, &hcache)
                .map_err(|e| ShfmError::Numerical(format!("iteration {t}: {e}")))?,
        );
        let done = t + 1;
        if done > config.burn_in && (done - config.burn_in) % config.thin == 0 {
            draws.push(state.clone());
        }
    }

    Ok(ChainOutput {
        draws,
        logpost_trace,
        acceptance_rate_lambda1: if ctx.spec.uses_matern() {
            Some(if proposals > 0 {
                accepts as f64 / proposals as f64
            } else {
                0.0
            })
        } else {
            None
        },
        chain_id,
    })
}

/// Runs `config.n_chains` chains in parallel with independent random
/// streams derived from `(seed, chain_id)`.
pub fn run_chains(
    panel: &IndicatorPanel,
    spec: &ModelSpec,
    hyper: &HyperPriors,
    geometry: &Geometry,
    config: &McmcConfig,
) -> Result<Vec<ChainOutput>> {
    config.validate()?;
    let ctx = FitContext::new(panel, spec, hyper, geometry)?;
    (0..config.n_chains)
        .into_par_iter()
        .map(|chain_id| run_chain_ctx(&ctx, config, chain_id))
        .collect()
}

fn chain_rng(seed: u64, chain_id: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_add((chain_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
    )
}
