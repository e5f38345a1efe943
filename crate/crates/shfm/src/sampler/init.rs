use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::ParamState;
use crate::sampler::context::FitContext;

const VAR_FLOOR: f64 = 1e-3;

/// Initial state for a chain.
///
/// Chain 0 starts at data-driven values: column means for `mu`, the centered
/// anchor indicator as the factor field, least-squares loadings, and
/// method-of-moments variances. Later chains start at an overdispersed
/// random perturbation of those values (locations shifted by `N(0, 4)`,
/// variances multiplied by `exp(N(0, 1))`), which is what the PSRF
/// diagnostic needs.
pub fn initial_state<R: Rng>(ctx: &FitContext, chain_id: usize, rng: &mut R) -> ParamState {
    let mut state = data_driven_state(ctx);
    if chain_id > 0 {
        overdisperse(&mut state, ctx, rng);
    }
    state
}

fn data_driven_state(ctx: &FitContext) -> ParamState {
    let spec = &ctx.spec;
    let p = ctx.n_indicators();
    let n_cities = ctx.n_cities();
    let anchor = spec.anchor;
    let mut state = ctx.blank_state();

    let n_tot: usize = ctx.data.total_tracts();
    // Column means.
    for k in 0..p {
        let s: f64 = ctx.data.cities.iter().map(|y| y.column(k).sum()).sum();
        state.mu[k] = s / n_tot as f64;
    }
    // Centered anchor column as the factor field.
    let mut f: Vec<DVector<f64>> = Vec::with_capacity(n_cities);
    for y in &ctx.data.cities {
        f.push(DVector::from_iterator(
            y.nrows(),
            (0..y.nrows()).map(|j| y[(j, anchor)] - state.mu[anchor]),
        ));
    }
    // Least-squares loadings of each column on the factor field.
    let sxx: f64 = f.iter().map(|v| v.dot(v)).sum();
    for k in 0..p {
        if k == anchor {
            state.beta[k] = 1.0;
            continue;
        }
        if sxx > 0.0 {
            let sxy: f64 = ctx
                .data
                .cities
                .iter()
                .zip(&f)
                .map(|(y, fi)| {
                    (0..y.nrows())
                        .map(|j| fi[j] * (y[(j, k)] - state.mu[k]))
                        .sum::<f64>()
                })
                .sum();
            state.beta[k] = sxy / sxx;
        } else {
            state.beta[k] = ctx.hyper.beta0;
        }
    }
    // Residual variances.
    for k in 0..p {
        let ss: f64 = ctx
            .data
            .cities
            .iter()
            .zip(&f)
            .map(|(y, fi)| {
                (0..y.nrows())
                    .map(|j| {
                        let r = y[(j, k)] - state.mu[k] - state.beta[k] * fi[j];
                        r * r
                    })
                    .sum::<f64>()
            })
            .sum();
        state.sigma2[k] = (ss / n_tot as f64).max(VAR_FLOOR);
    }

    let theta: DVector<f64> = DVector::from_iterator(n_cities, f.iter().map(|v| v.mean()));
    if spec.uses_theta() {
        state.theta = theta.clone();
        state.theta0 = theta.mean();
        let dv = theta.map(|t| t - state.theta0);
        state.delta2 = (dv.dot(&dv) / n_cities as f64).max(1e-2);
    }
    if spec.uses_tract_factors() {
        state.f = f.clone();
        for i in 0..n_cities {
            let r = f[i].map(|v| v - theta[i]);
            state.omega[i] = (r.dot(&r) / f[i].len() as f64).max(1e-2);
        }
    } else {
        // Aggregated variants identify the tract factor with theta.
        for i in 0..n_cities {
            state.f[i][0] = state.theta[i];
        }
    }
    if spec.uses_car() {
        state.tau2 = DVector::from_element(n_cities, 1.0);
    }
    if spec.uses_matern() {
        state.lambda1 = ctx.hyper.lambda1_scale;
    }
    state
}

fn overdisperse<R: Rng>(state: &mut ParamState, ctx: &FitContext, rng: &mut R) {
    let spec = &ctx.spec;
    let mut shift = |v: &mut f64| {
        let z: f64 = StandardNormal.sample(rng);
        *v += 2.0 * z;
    };
    for k in 0..state.mu.len() {
        shift(&mut state.mu[k]);
    }
    for k in 0..state.beta.len() {
        if k != spec.anchor {
            shift(&mut state.beta[k]);
        }
    }
    if spec.uses_theta() {
        shift(&mut state.theta0);
        for i in 0..state.theta.len() {
            shift(&mut state.theta[i]);
        }
        if spec.aggregated() {
            for i in 0..state.theta.len() {
                state.f[i][0] = state.theta[i];
            }
        }
    }
    let mut scale = |v: &mut f64| {
        let z: f64 = StandardNormal.sample(rng);
        *v *= z.exp();
    };
    for k in 0..state.sigma2.len() {
        scale(&mut state.sigma2[k]);
    }
    if spec.uses_tract_factors() {
        for i in 0..state.omega.len() {
            scale(&mut state.omega[i]);
        }
    }
    if spec.uses_car() {
        for i in 0..state.tau2.len() {
            scale(&mut state.tau2[i]);
        }
    }
    if spec.uses_theta() {
        scale(&mut state.delta2);
    }
    if spec.uses_matern() {
        scale(&mut state.lambda1);
    }
}
