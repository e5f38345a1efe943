//! Spatial prediction of the city factor at unmeasured locations and
//! posterior rankings of cities.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Result, ShfmError};
use crate::kernels::{matern_correlation, CarStructure, MaternParams};
use crate::model::{standardize_field, ModelSpec, ParamState};
use crate::sampler::ChainOutput;

/// Conditional Gaussian moments of the city factor at `new_centroids` given
/// one posterior draw.
///
/// The joint correlation over observed and new sites is partitioned as
/// `[[H_gg, H_gu], [H_ug, H_uu]]`; the conditional is
/// `N(1 theta0 + H_ug H_gg^{-1} (theta - 1 theta0),
///    delta2 (H_uu - H_ug H_gg^{-1} H_gu))`.
/// Without a Matérn structure all cross-correlations vanish and the
/// conditional reverts to the prior `N(1 theta0, delta2 I)`.
pub fn conditional_theta_moments(
    draw: &ParamState,
    spec: &ModelSpec,
    observed_centroids: &[[f64; 2]],
    new_centroids: &[[f64; 2]],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !spec.uses_theta() {
        return Err(ShfmError::InvalidInput(format!(
            "{} has no city factor to predict",
            spec.variant.name()
        )));
    }
    let n_obs = observed_centroids.len();
    let n_new = new_centroids.len();
    if draw.theta.len() != n_obs {
        return Err(ShfmError::DimensionMismatch(format!(
            "draw has {} cities, {} observed centroids given",
            draw.theta.len(),
            n_obs
        )));
    }
    let prior_mean = DVector::from_element(n_new, draw.theta0);
    if !spec.uses_matern() || n_new == 0 {
        return Ok((prior_mean, DMatrix::identity(n_new, n_new) * draw.delta2));
    }

    let params = MaternParams {
        lambda1: draw.lambda1,
        lambda2: spec.lambda2,
    };
    let corr = |a: [f64; 2], b: [f64; 2]| {
        let d = (a[0] - b[0]).hypot(a[1] - b[1]);
        matern_correlation(d, &params)
    };
    let mut h_gg = DMatrix::zeros(n_obs, n_obs);
    for r in 0..n_obs {
        for c in 0..n_obs {
            h_gg[(r, c)] = corr(observed_centroids[r], observed_centroids[c])?;
        }
    }
    let chol = Cholesky::new(h_gg).ok_or_else(|| singular_error(observed_centroids))?;

    let mut h_ug = DMatrix::zeros(n_new, n_obs);
    for r in 0..n_new {
        for c in 0..n_obs {
            h_ug[(r, c)] = corr(new_centroids[r], observed_centroids[c])?;
        }
    }
    let mut h_uu = DMatrix::zeros(n_new, n_new);
    for r in 0..n_new {
        for c in 0..n_new {
            h_uu[(r, c)] = corr(new_centroids[r], new_centroids[c])?;
        }
    }

    let resid = draw.theta.map(|t| t - draw.theta0);
    let mean = prior_mean + &h_ug * chol.solve(&resid);
    let cov = (h_uu - &h_ug * chol.solve(&h_ug.transpose())) * draw.delta2;
    Ok((mean, cov))
}

fn singular_error(centroids: &[[f64; 2]]) -> ShfmError {
    let mut best = (0usize, 0usize, f64::INFINITY);
    for a in 0..centroids.len() {
        for b in (a + 1)..centroids.len() {
            let d = (centroids[a][0] - centroids[b][0]).hypot(centroids[a][1] - centroids[b][1]);
            if d < best.2 {
                best = (a, b, d);
            }
        }
    }
    ShfmError::Numerical(format!(
        "observed correlation matrix is singular; closest centroid pair is ({}, {}) at distance {:.3e}",
        best.0, best.1, best.2
    ))
}

/// Per-draw samples of the city factor at unmeasured centroids.
#[derive(Debug, Clone)]
pub struct ThetaPrediction {
    /// One vector (length `new_centroids.len()`) per stored draw.
    pub draws: Vec<DVector<f64>>,
    pub new_centroids: Vec<[f64; 2]>,
}

impl ThetaPrediction {
    /// Posterior mean and SD per new site.
    pub fn summaries(&self) -> Vec<(f64, f64)> {
        let n = self.new_centroids.len();
        let nd = self.draws.len() as f64;
        (0..n)
            .map(|u| {
                let m = self.draws.iter().map(|d| d[u]).sum::<f64>() / nd;
                let v = self.draws.iter().map(|d| (d[u] - m).powi(2)).sum::<f64>()
                    / (nd - 1.0).max(1.0);
                (m, v.sqrt())
            })
            .collect()
    }
}

/// Samples the city factor at `new_centroids` once per stored draw by
/// Gaussian conditioning on that draw's `(theta, theta0, delta2, lambda1)`.
///
/// With zero new centroids this is a no-op returning empty per-draw vectors.
pub fn predict_theta<R: Rng>(
    chains: &[ChainOutput],
    spec: &ModelSpec,
    observed_centroids: &[[f64; 2]],
    new_centroids: &[[f64; 2]],
    rng: &mut R,
) -> Result<ThetaPrediction> {
    let stored: Vec<&ParamState> = chains.iter().flat_map(|c| c.draws.iter()).collect();
    if stored.is_empty() {
        return Err(ShfmError::InvalidInput("no stored draws".into()));
    }
    for (u, a) in new_centroids.iter().enumerate() {
        for (g, b) in observed_centroids.iter().enumerate() {
            if a == b {
                return Err(ShfmError::InvalidInput(format!(
                    "new centroid {u} coincides with observed centroid {g}"
                )));
            }
        }
    }
    let n_new = new_centroids.len();
    let mut draws = Vec::with_capacity(stored.len());
    for draw in stored {
        if n_new == 0 {
            draws.push(DVector::zeros(0));
            continue;
        }
        let (mean, cov) = conditional_theta_moments(draw, spec, observed_centroids, new_centroids)?;
        draws.push(sample_mvn(&mean, &cov, rng)?);
    }
    Ok(ThetaPrediction {
        draws,
        new_centroids: new_centroids.to_vec(),
    })
}

/// Draws from `N(mean, cov)`. The conditional covariance can be numerically
/// semidefinite, so a tiny diagonal jitter is tried before giving up.
fn sample_mvn<R: Rng>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n = mean.len();
    let chol = Cholesky::new(cov.clone()).or_else(|| {
        let jitter = 1e-12 * cov.diagonal().amax().max(1e-300);
        Cholesky::new(cov + DMatrix::identity(n, n) * jitter)
    });
    let chol = chol.ok_or_else(|| {
        ShfmError::Numerical("conditional covariance is not positive semidefinite".into())
    })?;
    let z = DVector::from_fn(n, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        v
    });
    Ok(mean + chol.l() * z)
}

/// What the cities are ranked by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RankTarget {
    /// The city factor `theta_i`.
    Theta,
    /// The within-city mean of the tract factors `f_i`.
    CityMeanF,
}

/// Per-city posterior rank distributions. Rank 1 is the smallest target
/// value; exact ties within a draw share the minimum rank.
#[derive(Debug, Clone, Serialize)]
pub struct RankSummary {
    /// `histograms[i][r - 1]` counts draws where city `i` had rank `r`.
    pub histograms: Vec<Vec<usize>>,
    pub mean_rank: Vec<f64>,
    /// 95% posterior interval of the rank, as `(lo, hi)` ranks.
    pub interval: Vec<(usize, usize)>,
    pub n_draws: usize,
}

impl RankSummary {
    /// Average of the per-city mean ranks, computed from the integer
    /// histogram counts so the `(I + 1) / 2` identity holds exactly when no
    /// draw has ties.
    pub fn average_mean_rank(&self) -> f64 {
        let total: u64 = self
            .histograms
            .iter()
            .flat_map(|h| h.iter().enumerate().map(|(r, &c)| (r as u64 + 1) * c as u64))
            .sum();
        total as f64 / (self.n_draws as u64 * self.histograms.len() as u64) as f64
    }
}

pub fn posterior_ranks(chains: &[ChainOutput], target: RankTarget) -> Result<RankSummary> {
    let stored: Vec<&ParamState> = chains.iter().flat_map(|c| c.draws.iter()).collect();
    if stored.is_empty() {
        return Err(ShfmError::InvalidInput("no stored draws".into()));
    }
    let n_cities = stored[0].theta.len();
    if n_cities < 2 {
        return Err(ShfmError::InvalidInput("ranking needs at least 2 cities".into()));
    }
    let mut histograms = vec![vec![0usize; n_cities]; n_cities];
    for draw in &stored {
        let values: Vec<f64> = match target {
            RankTarget::Theta => draw.theta.iter().cloned().collect(),
            RankTarget::CityMeanF => draw.f.iter().map(|fi| fi.mean()).collect(),
        };
        for i in 0..n_cities {
            let rank = 1 + values.iter().filter(|&&v| v < values[i]).count();
            histograms[i][rank - 1] += 1;
        }
    }
    let n_draws = stored.len();
    let mean_rank: Vec<f64> = histograms
        .iter()
        .map(|h| {
            h.iter()
                .enumerate()
                .map(|(r, &c)| (r + 1) as f64 * c as f64)
                .sum::<f64>()
                / n_draws as f64
        })
        .collect();
    // lo/hi are the smallest ranks whose CDF reaches 2.5% and 97.5%.
    let interval: Vec<(usize, usize)> = histograms
        .iter()
        .map(|h| {
            let lo_target = 0.025 * n_draws as f64;
            let hi_target = 0.975 * n_draws as f64;
            let mut cum = 0usize;
            let mut lo = None;
            let mut hi = None;
            for (r, &c) in h.iter().enumerate() {
                cum += c;
                if lo.is_none() && cum as f64 >= lo_target {
                    lo = Some(r + 1);
                }
                if hi.is_none() && cum as f64 >= hi_target {
                    hi = Some(r + 1);
                }
            }
            (lo.expect("counts sum to n_draws"), hi.expect("counts sum to n_draws"))
        })
        .collect();
    Ok(RankSummary {
        histograms,
        mean_rank,
        interval,
        n_draws,
    })
}

/// How the displayed city factor is standardized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaStandardize {
    /// Per-draw z-score across cities.
    Zscore,
    /// Per-draw min-max to `[0, 1]`.
    MinMax,
    None,
}

impl ThetaStandardize {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "zscore" => Ok(Self::Zscore),
            "minmax" => Ok(Self::MinMax),
            "none" => Ok(Self::None),
            other => Err(ShfmError::InvalidInput(format!(
                "unknown standardization {other:?} (expected zscore, minmax, or none)"
            ))),
        }
    }
}

/// Posterior mean, SD, and central 95% interval of one scalar.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SummaryRow {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Per-city and per-tract posterior summaries of the fitted index.
#[derive(Debug, Clone, Serialize)]
pub struct IndexSummary {
    /// Per-city summaries of the (standardized) city factor.
    pub theta: Vec<SummaryRow>,
    /// Per-city, per-tract summaries of the raw tract factor.
    pub f: Vec<Vec<SummaryRow>>,
    /// Per-city, per-tract summaries of the min-max index
    /// `kappa_ij = (f_ij - min f) / (max f - min f)`, standardized per draw.
    pub kappa: Vec<Vec<SummaryRow>>,
    /// Posterior mean share of each indicator's variance explained by the
    /// factor, averaged over the tracts of each city: `pi[i][k]`.
    pub pi: Vec<Vec<f64>>,
    /// Posterior mean unexplained share of the factor variance per city.
    pub pi_tilde: Vec<f64>,
    pub standardization: ThetaStandardize,
}

fn summarize(samples: &mut Vec<f64>) -> SummaryRow {
    let n = samples.len();
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = if n > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)
    } else {
        0.0
    };
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    SummaryRow {
        mean,
        sd: var.sqrt(),
        lo: percentile(samples, 0.025),
        hi: percentile(samples, 0.975),
    }
}

/// Linear-interpolation percentile of a sorted slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Builds the full posterior summary tables for the fitted index.
pub fn summarize_index(
    chains: &[ChainOutput],
    spec: &ModelSpec,
    cars: Option<&[CarStructure]>,
    standardization: ThetaStandardize,
) -> Result<IndexSummary> {
    let stored: Vec<&ParamState> = chains.iter().flat_map(|c| c.draws.iter()).collect();
    if stored.is_empty() {
        return Err(ShfmError::InvalidInput("no stored draws".into()));
    }
    let n_cities = stored[0].theta.len();
    let counts: Vec<usize> = stored[0].f.iter().map(|v| v.len()).collect();
    let nd = stored.len();

    // theta, standardized per draw.
    let mut theta_samples = vec![Vec::with_capacity(nd); n_cities];
    for draw in &stored {
        let t = standardize_theta(&draw.theta, standardization)?;
        for i in 0..n_cities {
            theta_samples[i].push(t[i]);
        }
    }
    let theta = theta_samples.iter_mut().map(summarize).collect();

    // Raw f and per-draw min-max kappa.
    let mut f_samples: Vec<Vec<Vec<f64>>> = counts
        .iter()
        .map(|&n| vec![Vec::with_capacity(nd); n])
        .collect();
    let mut kappa_samples = f_samples.clone();
    for draw in &stored {
        let kappa = standardize_field(&draw.f)?;
        for i in 0..n_cities {
            for j in 0..counts[i] {
                f_samples[i][j].push(draw.f[i][j]);
                kappa_samples[i][j].push(kappa[i][j]);
            }
        }
    }
    let f = f_samples
        .iter_mut()
        .map(|city| city.iter_mut().map(summarize).collect())
        .collect();
    let kappa = kappa_samples
        .iter_mut()
        .map(|city| city.iter_mut().map(summarize).collect())
        .collect();

    // Variance shares at each draw, averaged.
    let p = stored[0].mu.len();
    let mut pi = vec![vec![0.0; p]; n_cities];
    let mut pi_tilde = vec![0.0; n_cities];
    for draw in &stored {
        for i in 0..n_cities {
            for k in 0..p {
                pi[i][k] +=
                    crate::model::variance_explained_city_avg(draw, cars, i, k) / nd as f64;
            }
            if spec.uses_tract_factors() {
                pi_tilde[i] +=
                    crate::model::unexplained_fraction_city_avg(draw, cars, i) / nd as f64;
            }
        }
    }

    Ok(IndexSummary {
        theta,
        f,
        kappa,
        pi,
        pi_tilde,
        standardization,
    })
}

fn standardize_theta(theta: &DVector<f64>, mode: ThetaStandardize) -> Result<DVector<f64>> {
    match mode {
        ThetaStandardize::None => Ok(theta.clone()),
        ThetaStandardize::Zscore => {
            let n = theta.len() as f64;
            let m = theta.mean();
            let sd = (theta.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            if !(sd > 0.0) {
                return Err(ShfmError::Degenerate("constant theta draw".into()));
            }
            Ok(theta.map(|t| (t - m) / sd))
        }
        ThetaStandardize::MinMax => {
            let lo = theta.min();
            let hi = theta.max();
            if !(hi > lo) {
                return Err(ShfmError::Degenerate("constant theta draw".into()));
            }
            Ok(theta.map(|t| (t - lo) / (hi - lo)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelVariant, ParamState};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain_of(draws: Vec<ParamState>) -> ChainOutput {
        ChainOutput {
            logpost_trace: vec![0.0; draws.len()],
            draws,
            acceptance_rate_lambda1: None,
            chain_id: 0,
        }
    }

    fn theta_draw(theta: &[f64]) -> ParamState {
        let n = theta.len();
        let mut s = ParamState::zeros(1, &vec![1; n]);
        for (i, &t) in theta.iter().enumerate() {
            s.theta[i] = t;
            s.f[i][0] = t;
        }
        s
    }

    #[test]
    fn far_new_city_reverts_to_the_prior() {
        let spec = ModelSpec::new(ModelVariant::Asfm, None).unwrap();
        let mut draw = theta_draw(&[0.4, -0.2, 0.9]);
        draw.theta0 = 0.3;
        draw.delta2 = 1.7;
        draw.lambda1 = 0.5;
        let observed = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let (mean, cov) =
            conditional_theta_moments(&draw, &spec, &observed, &[[1e6, 1e6]]).unwrap();
        assert_relative_eq!(mean[0], 0.3, epsilon = 1e-10);
        assert_relative_eq!(cov[(0, 0)], 1.7, epsilon = 1e-10);
    }

    #[test]
    fn bivariate_conditioning_closed_form() {
        let spec = ModelSpec::new(ModelVariant::Asfm, None).unwrap();
        let mut draw = theta_draw(&[1.5]);
        draw.theta0 = 0.5;
        draw.delta2 = 2.0;
        draw.lambda1 = 3.0;
        let observed = [[0.0, 0.0]];
        let new = [[2.0, 0.0]];
        let r = matern_correlation(2.0, &MaternParams::new(3.0, 1.0).unwrap()).unwrap();
        let (mean, cov) = conditional_theta_moments(&draw, &spec, &observed, &new).unwrap();
        assert_relative_eq!(mean[0], 0.5 + r * (1.5 - 0.5), epsilon = 1e-12);
        assert_relative_eq!(cov[(0, 0)], 2.0 * (1.0 - r * r), epsilon = 1e-12);
    }

    #[test]
    fn moments_match_dense_joint_conditioning() {
        let spec = ModelSpec::new(ModelVariant::Asfm, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let obs: Vec<[f64; 2]> = (0..3)
                .map(|_| [rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0)])
                .collect();
            let new: Vec<[f64; 2]> = (0..2)
                .map(|_| [rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0)])
                .collect();
            let mut draw = theta_draw(&[
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]);
            draw.theta0 = rng.gen_range(-1.0..1.0);
            draw.delta2 = rng.gen_range(0.2..2.0);
            draw.lambda1 = rng.gen_range(0.5..3.0);

            // Dense oracle: build the full 5x5 joint and condition directly.
            let params = MaternParams::new(draw.lambda1, 1.0).unwrap();
            let all: Vec<[f64; 2]> = obs.iter().chain(new.iter()).cloned().collect();
            let mut h = DMatrix::zeros(5, 5);
            for a in 0..5 {
                for b in 0..5 {
                    let d = (all[a][0] - all[b][0]).hypot(all[a][1] - all[b][1]);
                    h[(a, b)] = matern_correlation(d, &params).unwrap();
                }
            }
            let hgg = h.view((0, 0), (3, 3)).into_owned();
            let hug = h.view((3, 0), (2, 3)).into_owned();
            let huu = h.view((3, 3), (2, 2)).into_owned();
            let inv = hgg.try_inverse().unwrap();
            let resid = draw.theta.map(|t| t - draw.theta0);
            let want_mean = DVector::from_element(2, draw.theta0) + &hug * &inv * resid;
            let want_cov = (huu - &hug * inv * hug.transpose()) * draw.delta2;

            let (mean, cov) = conditional_theta_moments(&draw, &spec, &obs, &new).unwrap();
            assert!((mean - want_mean).amax() < 1e-10);
            assert!((cov - want_cov).amax() < 1e-10);
        }
    }

    #[test]
    fn unstructured_variants_predict_from_the_prior() {
        let spec = ModelSpec::new(ModelVariant::Uhfm, None).unwrap();
        let mut draw = theta_draw(&[2.0, -2.0]);
        draw.theta0 = 0.1;
        draw.delta2 = 0.8;
        let (mean, cov) =
            conditional_theta_moments(&draw, &spec, &[[0.0, 0.0], [1.0, 1.0]], &[[0.5, 0.5]])
                .unwrap();
        assert_eq!(mean[0], 0.1);
        assert_eq!(cov[(0, 0)], 0.8);
    }

    #[test]
    fn zero_new_cities_is_a_no_op() {
        let spec = ModelSpec::new(ModelVariant::Asfm, None).unwrap();
        let chain = chain_of(vec![theta_draw(&[0.0, 1.0])]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = predict_theta(&[chain], &spec, &[[0.0, 0.0], [1.0, 0.0]], &[], &mut rng).unwrap();
        assert_eq!(out.draws.len(), 1);
        assert_eq!(out.draws[0].len(), 0);
    }

    #[test]
    fn duplicate_new_centroid_is_rejected_and_singular_h_named() {
        let spec = ModelSpec::new(ModelVariant::Asfm, None).unwrap();
        let chain = chain_of(vec![theta_draw(&[0.0, 1.0])]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let err = predict_theta(
            &[chain],
            &spec,
            &[[0.0, 0.0], [1.0, 0.0]],
            &[[1.0, 0.0]],
            &mut rng,
        )
        .unwrap_err();
        assert!(err.to_string().contains("coincides"));

        // Near-duplicate observed centroids make H_gg singular; the error
        // names the offending pair.
        let mut draw = theta_draw(&[0.0, 1.0, 2.0]);
        draw.lambda1 = 1.0;
        let obs = [[0.0, 0.0], [0.0, 1e-13], [3.0, 0.0]];
        let err = conditional_theta_moments(&draw, &spec, &obs, &[[5.0, 5.0]]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(0, 1)"), "unexpected message: {msg}");
    }

    #[test]
    fn rank_point_mass_when_one_city_always_lowest() {
        let draws: Vec<ParamState> = (0..50)
            .map(|t| theta_draw(&[-10.0, (t % 7) as f64, (t % 5) as f64 + 0.1]))
            .collect();
        let summary = posterior_ranks(&[chain_of(draws)], RankTarget::Theta).unwrap();
        assert_eq!(summary.histograms[0], vec![50, 0, 0]);
        assert_eq!(summary.mean_rank[0], 1.0);
        assert_eq!(summary.interval[0], (1, 1));
    }

    #[test]
    fn exchangeable_cities_split_ranks_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<ParamState> = (0..4000)
            .map(|_| theta_draw(&[rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]))
            .collect();
        let summary = posterior_ranks(&[chain_of(draws)], RankTarget::Theta).unwrap();
        for i in 0..2 {
            let frac = summary.histograms[i][0] as f64 / 4000.0;
            assert!((frac - 0.5).abs() < 0.05, "rank-1 share {frac}");
        }
    }

    #[test]
    fn mean_ranks_average_to_the_exact_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n_cities = 7;
        let draws: Vec<ParamState> = (0..200)
            .map(|_| {
                let v: Vec<f64> = (0..n_cities).map(|_| rng.gen_range(-2.0..2.0)).collect();
                theta_draw(&v)
            })
            .collect();
        let summary = posterior_ranks(&[chain_of(draws)], RankTarget::Theta).unwrap();
        assert_eq!(summary.average_mean_rank(), (n_cities as f64 + 1.0) / 2.0);
        let float_avg = summary.mean_rank.iter().sum::<f64>() / n_cities as f64;
        assert!((float_avg - (n_cities as f64 + 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ranks_invariant_under_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let a: Vec<ParamState> = base.iter().map(|v| theta_draw(v)).collect();
        let b: Vec<ParamState> = base
            .iter()
            .map(|v| {
                let t: Vec<f64> = v.iter().map(|x| (3.0 * x).exp() + 5.0).collect();
                theta_draw(&t)
            })
            .collect();
        let sa = posterior_ranks(&[chain_of(a)], RankTarget::Theta).unwrap();
        let sb = posterior_ranks(&[chain_of(b)], RankTarget::Theta).unwrap();
        assert_eq!(sa.histograms, sb.histograms);
    }

    #[test]
    fn ties_share_the_minimum_rank() {
        let draws = vec![theta_draw(&[1.0, 1.0, 2.0])];
        let summary = posterior_ranks(&[chain_of(draws)], RankTarget::Theta).unwrap();
        assert_eq!(summary.histograms[0][0], 1);
        assert_eq!(summary.histograms[1][0], 1);
        assert_eq!(summary.histograms[2][2], 1);
    }

    #[test]
    fn constant_chains_summarize_with_zero_sd() {
        let spec = ModelSpec::new(ModelVariant::Uhfm, None).unwrap();
        let draw = {
            let mut s = theta_draw(&[0.0, 1.0, 3.0]);
            s.f[0][0] = -1.0;
            s.f[1][0] = 0.5;
            s.f[2][0] = 2.0;
            s
        };
        let chains = [chain_of(vec![draw.clone(), draw])];
        let out = summarize_index(&chains, &spec, None, ThetaStandardize::MinMax).unwrap();
        for row in &out.theta {
            assert_eq!(row.sd, 0.0);
            assert_eq!(row.lo, row.hi);
        }
        // Min-max standardized theta spans [0, 1].
        assert_eq!(out.theta[0].mean, 0.0);
        assert_eq!(out.theta[2].mean, 1.0);
        assert_eq!(out.kappa[0][0].mean, 0.0);
        assert_eq!(out.kappa[2][0].mean, 1.0);
    }

    #[test]
    fn summaries_match_direct_percentiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut values: Vec<f64> = (0..501).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let draws: Vec<ParamState> = values
            .iter()
            .map(|&v| theta_draw(&[v, v + 1.0]))
            .collect();
        let spec = ModelSpec::new(ModelVariant::Uhfm, None).unwrap();
        let out = summarize_index(&[chain_of(draws)], &spec, None, ThetaStandardize::None).unwrap();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(out.theta[0].lo, percentile(&values, 0.025), epsilon = 1e-12);
        assert_relative_eq!(out.theta[0].hi, percentile(&values, 0.975), epsilon = 1e-12);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert_relative_eq!(out.theta[0].mean, mean, epsilon = 1e-12);
        assert!(out.theta[0].lo <= out.theta[0].mean && out.theta[0].mean <= out.theta[0].hi);
    }

    #[test]
    fn standardization_mode_names_round_trip() {
        assert_eq!(ThetaStandardize::from_name("zscore").unwrap(), ThetaStandardize::Zscore);
        assert_eq!(ThetaStandardize::from_name("minmax").unwrap(), ThetaStandardize::MinMax);
        assert_eq!(ThetaStandardize::from_name("none").unwrap(), ThetaStandardize::None);
        assert!(ThetaStandardize::from_name("robust").is_err());
    }
}
