//! Full conditionals of the blocked Gibbs sweep.
//!
//! Each `fc_*` function returns the analytic full-conditional distribution
//! of its block given everything else, so the sweep samples from it and the
//! test suite can check slice proportionality against the joint log
//! posterior. Sweep order: mu, beta, sigma2, f, f_tilde, theta, theta0,
//! delta2, tau2, omega, lambda1 (MH).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Result, ShfmError};
use crate::kernels::CarStructure;
use crate::model::ParamState;
use crate::sampler::context::{CorrelationCache, FitContext};
use crate::sampler::logpost::{ln_inv_gamma, ln_normal, LN_2PI};
use crate::sampler::mh::mh_update_lambda1;

/// Scalar Gaussian full conditional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarGaussian {
    pub mean: f64,
    pub var: f64,
}

impl ScalarGaussian {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean + self.var.sqrt() * z
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        ln_normal(x, self.mean, self.var)
    }
}

/// Scalar inverse-gamma full conditional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarInvGamma {
    pub shape: f64,
    pub scale: f64,
}

impl ScalarInvGamma {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let g = Gamma::new(self.shape, 1.0).expect("positive shape");
        // Improper variance priors put a density spike at zero; floor the
        // draw so a chain wandering into the spike underflows to a tiny
        // positive value instead of an invalid exact zero.
        (self.scale / g.sample(rng)).max(1e-300)
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        ln_inv_gamma(x, self.shape, self.scale)
    }
}

/// Joint Gaussian full conditional for the within-city field, diagonal in
/// the CAR eigenbasis: precision `Q = V diag(dq) V'`.
#[derive(Debug, Clone)]
pub struct FTildeFc<'a> {
    pub mean: DVector<f64>,
    /// Precision eigenvalues in the basis of `car.eigvecs`.
    pub dq: DVector<f64>,
    car: &'a CarStructure,
}

impl FTildeFc<'_> {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_iterator(
            self.dq.len(),
            (0..self.dq.len()).map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                v
            }),
        );
        let scaled = z.zip_map(&self.dq, |zi, qi| zi / qi.sqrt());
        &self.mean + &self.car.eigvecs * scaled
    }

    pub fn logpdf(&self, x: &DVector<f64>) -> f64 {
        let r = self.car.eigvecs.transpose() * (x - &self.mean);
        let quad = r.zip_map(&self.dq, |ri, qi| ri * ri * qi).sum();
        let logdet = self.dq.iter().map(|q| q.ln()).sum::<f64>();
        0.5 * (logdet - self.dq.len() as f64 * LN_2PI) - 0.5 * quad
    }
}

/// Joint Gaussian full conditional for the city factors, parameterized by
/// its precision matrix.
#[derive(Debug, Clone)]
pub struct ThetaFc {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl ThetaFc {
    fn new(precision: DMatrix<f64>, lin: DVector<f64>) -> Result<Self> {
        let chol = Cholesky::new(precision.clone())
            .ok_or_else(|| ShfmError::Numerical("theta block precision not PD".into()))?;
        let mean = chol.solve(&lin);
        Ok(Self {
            mean,
            precision,
            chol,
        })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.mean.len();
        let z = DVector::from_iterator(n, (0..n).map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v
        }));
        // x = mean + L^{-T} z has covariance (L L')^{-1}.
        let l = self.chol.l();
        let x = l.transpose().solve_upper_triangular(&z).expect("L is nonsingular");
        &self.mean + x
    }

    pub fn logpdf(&self, x: &DVector<f64>) -> f64 {
        let r = x - &self.mean;
        let quad = r.dot(&(&self.precision * &r));
        let logdet = 2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        0.5 * (logdet - x.len() as f64 * LN_2PI) - 0.5 * quad
    }
}

/// Per-city likelihood factor: `f_i` for tract-level variants, `[theta_i]`
/// for aggregated ones.
fn likelihood_factor<'a>(state: &'a ParamState, ctx: &FitContext, i: usize) -> DVector<f64> {
    if ctx.spec.aggregated() {
        DVector::from_element(1, state.theta[i])
    } else {
        state.f[i].clone()
    }
}

/// Full conditional of each `mu_k`.
pub fn fc_mu(state: &ParamState, ctx: &FitContext) -> Vec<ScalarGaussian> {
    let p = ctx.n_indicators();
    let n_tot: usize = ctx.data.total_tracts();
    (0..p)
        .map(|k| {
            let s2 = state.sigma2[k];
            let mut lin = ctx.hyper.mu0[k] / ctx.hyper.c_mu;
            for (i, y) in ctx.data.cities.iter().enumerate() {
                let f = likelihood_factor(state, ctx, i);
                for j in 0..y.nrows() {
                    lin += (y[(j, k)] - state.beta[k] * f[j]) / s2;
                }
            }
            let prec = 1.0 / ctx.hyper.c_mu + n_tot as f64 / s2;
            ScalarGaussian {
                mean: lin / prec,
                var: 1.0 / prec,
            }
        })
        .collect()
}

/// Full conditional of a free loading `beta_k` (`k != anchor`).
pub fn fc_beta(state: &ParamState, ctx: &FitContext, k: usize) -> ScalarGaussian {
    debug_assert_ne!(k, ctx.spec.anchor);
    let s2 = state.sigma2[k];
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, y) in ctx.data.cities.iter().enumerate() {
        let f = likelihood_factor(state, ctx, i);
        for j in 0..y.nrows() {
            sxx += f[j] * f[j];
            sxy += f[j] * (y[(j, k)] - state.mu[k]);
        }
    }
    let prec = 1.0 / ctx.hyper.c0 + sxx / s2;
    let lin = ctx.hyper.beta0 / ctx.hyper.c0 + sxy / s2;
    ScalarGaussian {
        mean: lin / prec,
        var: 1.0 / prec,
    }
}

/// Full conditional of `sigma2_k`.
pub fn fc_sigma2(state: &ParamState, ctx: &FitContext, k: usize) -> ScalarInvGamma {
    let (a, b) = ctx.hyper.sigma2_ig[k];
    let mut ss = 0.0;
    let mut n = 0usize;
    for (i, y) in ctx.data.cities.iter().enumerate() {
        let f = likelihood_factor(state, ctx, i);
        for j in 0..y.nrows() {
            let r = y[(j, k)] - state.mu[k] - state.beta[k] * f[j];
            ss += r * r;
            n += 1;
        }
    }
    ScalarInvGamma {
        shape: a + n as f64 / 2.0,
        scale: b + 0.5 * ss,
    }
}

/// Full conditional of the tract factors of city `i` (diagonal: one
/// independent Gaussian per tract).
pub fn fc_f(state: &ParamState, ctx: &FitContext, i: usize) -> Vec<ScalarGaussian> {
    debug_assert!(ctx.spec.uses_tract_factors());
    let y = &ctx.data.cities[i];
    let omega = state.omega[i];
    let like_prec: f64 = (0..ctx.n_indicators())
        .map(|k| state.beta[k] * state.beta[k] / state.sigma2[k])
        .sum();
    let prec = 1.0 / omega + like_prec;
    (0..y.nrows())
        .map(|j| {
            let prior_mean = state.theta[i] + state.f_tilde[i][j];
            let mut lin = prior_mean / omega;
            for k in 0..ctx.n_indicators() {
                lin += state.beta[k] * (y[(j, k)] - state.mu[k]) / state.sigma2[k];
            }
            ScalarGaussian {
                mean: lin / prec,
                var: 1.0 / prec,
            }
        })
        .collect()
}

/// Joint full conditional of the within-city spatial field of city `i`.
pub fn fc_f_tilde<'a>(state: &ParamState, ctx: &'a FitContext, i: usize) -> FTildeFc<'a> {
    let car = &ctx.cars.as_ref().expect("CAR variant")[i];
    let omega = state.omega[i];
    let tau2 = state.tau2[i];
    let phi = car.phi;
    // Q = (1/omega) I + (1/tau2)(I + phi M) is diagonal in M's eigenbasis.
    let dq = car
        .eigvals
        .map(|ev| 1.0 / omega + (1.0 + phi * ev) / tau2);
    let resid = state.f[i].map(|fj| (fj - state.theta[i]) / omega);
    // mean = Q^{-1} resid
    let r = car.eigvecs.transpose() * resid;
    let scaled = r.zip_map(&dq, |ri, qi| ri / qi);
    let mean = &car.eigvecs * scaled;
    FTildeFc { mean, dq, car }
}

/// Joint full conditional of the city factors `theta`.
pub fn fc_theta(
    state: &ParamState,
    ctx: &FitContext,
    hcache: &CorrelationCache,
) -> Result<ThetaFc> {
    debug_assert!(ctx.spec.uses_theta());
    let n_cities = ctx.n_cities();
    let ones = DVector::from_element(n_cities, 1.0);
    let mut precision = hcache.chol.inverse() / state.delta2;
    let mut lin = hcache.solve(&ones) * (state.theta0 / state.delta2);
    if ctx.spec.aggregated() {
        let like_prec: f64 = (0..ctx.n_indicators())
            .map(|k| state.beta[k] * state.beta[k] / state.sigma2[k])
            .sum();
        for i in 0..n_cities {
            precision[(i, i)] += like_prec;
            let y = &ctx.data.cities[i];
            for k in 0..ctx.n_indicators() {
                lin[i] += state.beta[k] * (y[(0, k)] - state.mu[k]) / state.sigma2[k];
            }
        }
    } else {
        for i in 0..n_cities {
            let n_i = state.f[i].len() as f64;
            precision[(i, i)] += n_i / state.omega[i];
            let s: f64 = (0..state.f[i].len())
                .map(|j| state.f[i][j] - state.f_tilde[i][j])
                .sum();
            lin[i] += s / state.omega[i];
        }
    }
    ThetaFc::new(precision, lin)
}

/// Full conditional of the baseline `theta0`.
pub fn fc_theta0(
    state: &ParamState,
    ctx: &FitContext,
    hcache: &CorrelationCache,
) -> ScalarGaussian {
    let n_cities = ctx.n_cities();
    let ones = DVector::from_element(n_cities, 1.0);
    let hinv_ones = hcache.solve(&ones);
    let prec = 1.0 / ctx.hyper.v0 + ones.dot(&hinv_ones) / state.delta2;
    let lin = ctx.hyper.t0 / ctx.hyper.v0 + state.theta.dot(&hinv_ones) / state.delta2;
    ScalarGaussian {
        mean: lin / prec,
        var: 1.0 / prec,
    }
}

/// Full conditional of `delta2` under the improper `1/delta2` prior.
pub fn fc_delta2(state: &ParamState, ctx: &FitContext, hcache: &CorrelationCache) -> ScalarInvGamma {
    let q = state.theta.map(|t| t - state.theta0);
    ScalarInvGamma {
        shape: ctx.n_cities() as f64 / 2.0,
        scale: 0.5 * hcache.quad(&q, &q),
    }
}

/// Full conditional of `tau2_i`.
pub fn fc_tau2(state: &ParamState, ctx: &FitContext, i: usize) -> ScalarInvGamma {
    let car = &ctx.cars.as_ref().expect("CAR variant")[i];
    let (c, d) = ctx.hyper.tau2_ig[i];
    ScalarInvGamma {
        shape: c + car.n_tracts() as f64 / 2.0,
        scale: d + 0.5 * car.quad_form_prec(&state.f_tilde[i]),
    }
}

/// Full conditional of `omega_i`.
pub fn fc_omega(state: &ParamState, ctx: &FitContext, i: usize) -> ScalarInvGamma {
    let (g, h) = ctx.hyper.omega_ig[i];
    let n = state.f[i].len();
    let ss: f64 = (0..n)
        .map(|j| {
            let r = state.f[i][j] - state.theta[i] - state.f_tilde[i][j];
            r * r
        })
        .sum();
    ScalarInvGamma {
        shape: g + n as f64 / 2.0,
        scale: h + 0.5 * ss,
    }
}

/// Conditional of the joint level shift `c` in the translation move
/// `mu_k -> mu_k - beta_k c`, `f -> f + c`, `theta -> theta + c`,
/// `theta0 -> theta0 + c`. The likelihood and every latent-level density are
/// invariant under the shift, so only the `mu` and `theta0` priors constrain
/// `c`; sampling it from that Gaussian and applying the shift is a
/// generalized Gibbs move that decorrelates the `mu`/`theta0` level ridge.
pub fn fc_level_shift(state: &ParamState, ctx: &FitContext) -> ScalarGaussian {
    let h = &ctx.hyper;
    let mut prec = 1.0 / h.v0;
    let mut lin = -(state.theta0 - h.t0) / h.v0;
    for k in 0..ctx.n_indicators() {
        prec += state.beta[k] * state.beta[k] / h.c_mu;
        lin += state.beta[k] * (state.mu[k] - h.mu0[k]) / h.c_mu;
    }
    ScalarGaussian {
        mean: lin / prec,
        var: 1.0 / prec,
    }
}

/// Applies the translation move of [`fc_level_shift`] by `c`.
pub fn apply_level_shift(state: &mut ParamState, c: f64) {
    for k in 0..state.mu.len() {
        state.mu[k] -= state.beta[k] * c;
    }
    state.theta0 += c;
    for i in 0..state.theta.len() {
        state.theta[i] += c;
        for v in state.f[i].iter_mut() {
            *v += c;
        }
    }
}

/// One full Gibbs scan over every block the variant uses. Returns whether
/// the Matérn-range MH proposal was accepted (`None` when the variant has no
/// MH step).
pub fn gibbs_sweep<R: Rng>(
    state: &mut ParamState,
    ctx: &FitContext,
    hcache: &mut CorrelationCache,
    mh_step_scale: f64,
    rng: &mut R,
) -> Result<Option<bool>> {
    let spec = &ctx.spec;
    let p = ctx.n_indicators();
    let n_cities = ctx.n_cities();

    for (k, fc) in fc_mu(state, ctx).into_iter().enumerate() {
        state.mu[k] = fc.sample(rng);
    }
    for k in 0..p {
        if k != spec.anchor {
            state.beta[k] = fc_beta(state, ctx, k).sample(rng);
        }
    }
    for k in 0..p {
        state.sigma2[k] = fc_sigma2(state, ctx, k).sample(rng);
    }
    if spec.uses_tract_factors() {
        for i in 0..n_cities {
            for (j, fc) in fc_f(state, ctx, i).into_iter().enumerate() {
                state.f[i][j] = fc.sample(rng);
            }
        }
    }
    if spec.uses_car() {
        for i in 0..n_cities {
            state.f_tilde[i] = fc_f_tilde(state, ctx, i).sample(rng);
        }
    }
    if spec.uses_theta() {
        state.theta = fc_theta(state, ctx, hcache)?.sample(rng);
        if spec.aggregated() {
            for i in 0..n_cities {
                state.f[i][0] = state.theta[i];
            }
        }
        state.theta0 = fc_theta0(state, ctx, hcache).sample(rng);
        state.delta2 = fc_delta2(state, ctx, hcache).sample(rng);
        let c = fc_level_shift(state, ctx).sample(rng);
        apply_level_shift(state, c);
    }
    if spec.uses_car() {
        for i in 0..n_cities {
            state.tau2[i] = fc_tau2(state, ctx, i).sample(rng);
        }
    }
    if spec.uses_tract_factors() {
        for i in 0..n_cities {
            state.omega[i] = fc_omega(state, ctx, i).sample(rng);
        }
    }
    let accepted = if spec.uses_matern() {
        Some(mh_update_lambda1(state, ctx, hcache, mh_step_scale, rng)?)
    } else {
        None
    };
    Ok(accepted)
}
