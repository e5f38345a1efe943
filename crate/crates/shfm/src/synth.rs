//! Forward simulation from every model variant with known parameters,
//! random geometry generation, and the aggregation-distortion study that
//! contrasts tract-level and city-mean fits on the same simulated data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, ShfmError};
use crate::kernels::{CarStructure, Geometry};
use crate::model::{HyperPriors, IndicatorPanel, ModelSpec, ModelVariant, ParamState};
use crate::predict::{posterior_ranks, RankTarget};
use crate::sampler::{run_chain_ctx, CorrelationCache, FitContext, McmcConfig};

/// Simulates a tract-level panel from the variant's generative model.
///
/// Returns the panel together with a copy of `truth` whose latent fields
/// (`theta`, `f_tilde`, `f`) hold the values actually drawn, for scoring.
/// Variants without a component keep it at its degenerate value (`theta = 0`
/// without city factors, `f_tilde = 0` without the CAR field, `f_ij =
/// theta_i` for aggregated variants).
pub fn simulate_dataset<R: Rng>(
    spec: &ModelSpec,
    truth: &ParamState,
    geometry: &Geometry,
    rng: &mut R,
) -> Result<(IndicatorPanel, ParamState)> {
    spec.validate()?;
    geometry.validate()?;
    truth.validate(spec)?;
    let counts = geometry.tract_counts();
    if truth.theta.len() != counts.len() {
        return Err(ShfmError::DimensionMismatch(format!(
            "truth has {} cities, geometry has {}",
            truth.theta.len(),
            counts.len()
        )));
    }
    let n_cities = counts.len();
    let p = truth.mu.len();
    let mut latent = truth.clone();
    latent.f = counts.iter().map(|&n| DVector::zeros(n)).collect();
    latent.f_tilde = counts.iter().map(|&n| DVector::zeros(n)).collect();

    if spec.uses_theta() {
        let cache = if spec.uses_matern() {
            CorrelationCache::matern(&geometry.city_centroids, truth.lambda1, spec.lambda2)?
        } else {
            CorrelationCache::identity(n_cities)
        };
        let z = DVector::from_fn(n_cities, |_, _| {
            let v: f64 = StandardNormal.sample(rng);
            v
        });
        latent.theta =
            DVector::from_element(n_cities, truth.theta0) + cache.chol.l() * z * truth.delta2.sqrt();
    } else {
        latent.theta = DVector::zeros(n_cities);
    }

    if spec.uses_car() {
        let phi = spec.phi.expect("validated");
        for i in 0..n_cities {
            let car = CarStructure::build(
                &geometry.adjacency[i],
                &geometry.tract_centroids[i],
                phi,
            )?;
            // f_tilde ~ N(0, tau2 P) with P = V diag(1/(1+phi lam)) V'.
            let z = DVector::from_fn(counts[i], |j, _| {
                let v: f64 = StandardNormal.sample(rng);
                v * (truth.tau2[i] / (1.0 + phi * car.eigvals[j])).sqrt()
            });
            latent.f_tilde[i] = &car.eigvecs * z;
        }
    }

    for i in 0..n_cities {
        if spec.uses_tract_factors() {
            let sd = truth.omega[i].sqrt();
            for j in 0..counts[i] {
                let u: f64 = StandardNormal.sample(rng);
                latent.f[i][j] = latent.theta[i] + latent.f_tilde[i][j] + sd * u;
            }
        } else {
            latent.f[i] = DVector::from_element(counts[i], latent.theta[i]);
        }
    }

    let cities: Vec<DMatrix<f64>> = (0..n_cities)
        .map(|i| {
            DMatrix::from_fn(counts[i], p, |j, k| {
                let e: f64 = StandardNormal.sample(rng);
                truth.mu[k] + truth.beta[k] * latent.f[i][j] + truth.sigma2[k].sqrt() * e
            })
        })
        .collect();
    let panel = IndicatorPanel::new(
        cities,
        (0..p).map(|k| format!("ind{k}")).collect(),
        (0..n_cities).map(|i| format!("city{i}")).collect(),
    )?;
    Ok((panel, latent))
}

/// Random geometry with the given per-city tract counts: city centroids
/// uniform in a `[0, 10]^2` square, tract centroids jittered around their
/// city, adjacency from symmetrized 4-nearest-neighbor graphs.
pub fn random_geometry_with_counts<R: Rng>(counts: &[usize], rng: &mut R) -> Result<Geometry> {
    if counts.is_empty() {
        return Err(ShfmError::InvalidInput("need at least one city".into()));
    }
    if counts.iter().any(|&n| n == 0) {
        return Err(ShfmError::InvalidInput("every city needs a tract".into()));
    }
    let city_centroids: Vec<[f64; 2]> = (0..counts.len())
        .map(|_| [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)])
        .collect();
    let tract_centroids: Vec<Vec<[f64; 2]>> = counts
        .iter()
        .zip(&city_centroids)
        .map(|(&n, c)| {
            (0..n)
                .map(|_| {
                    let dx: f64 = StandardNormal.sample(rng);
                    let dy: f64 = StandardNormal.sample(rng);
                    [c[0] + 0.5 * dx, c[1] + 0.5 * dy]
                })
                .collect()
        })
        .collect();
    let adjacency = tract_centroids.iter().map(|tc| knn_edges(tc, 4)).collect();
    let geometry = Geometry {
        city_centroids,
        tract_centroids,
        adjacency,
    };
    geometry.validate()?;
    Ok(geometry)
}

/// Random geometry with `n_cities` cities and per-city tract counts drawn
/// uniformly from `tracts_per_city` (inclusive).
pub fn random_geometry<R: Rng>(
    n_cities: usize,
    tracts_per_city: (usize, usize),
    rng: &mut R,
) -> Result<Geometry> {
    let (lo, hi) = tracts_per_city;
    if lo == 0 || hi < lo {
        return Err(ShfmError::InvalidInput(format!(
            "invalid tract count range [{lo}, {hi}]"
        )));
    }
    let counts: Vec<usize> = (0..n_cities).map(|_| rng.gen_range(lo..=hi)).collect();
    random_geometry_with_counts(&counts, rng)
}

/// Symmetrized k-nearest-neighbor edge list over a centroid set.
fn knn_edges(centroids: &[[f64; 2]], k: usize) -> Vec<(usize, usize)> {
    let n = centroids.len();
    let mut edges = Vec::new();
    for j in 0..n {
        let mut dists: Vec<(usize, f64)> = (0..n)
            .filter(|&l| l != j)
            .map(|l| {
                let dx = centroids[j][0] - centroids[l][0];
                let dy = centroids[j][1] - centroids[l][1];
                (l, (dx * dx + dy * dy).sqrt())
            })
            .collect();
        dists.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        for &(l, _) in dists.iter().take(k) {
            let e = (j.min(l), j.max(l));
            if !edges.contains(&e) {
                edges.push(e);
            }
        }
    }
    edges.sort_unstable();
    edges
}

/// Ground-truth scenarios for the simulation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Strong spatial structure at both levels: SHFM with phi = 5,
    /// tau2 = 1, delta2 = 1.
    SpatialStrong,
    /// No within-city structure (tau2 = 0): the UHFM generative model.
    Independent,
}

impl Preset {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "spatial-strong" => Ok(Preset::SpatialStrong),
            "independent" => Ok(Preset::Independent),
            other => Err(ShfmError::InvalidInput(format!(
                "unknown preset {other:?} (expected spatial-strong or independent)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::SpatialStrong => "spatial-strong",
            Preset::Independent => "independent",
        }
    }

    /// The generative model of the preset.
    pub fn spec(&self) -> ModelSpec {
        match self {
            Preset::SpatialStrong => ModelSpec::shfm(5.0).expect("valid"),
            Preset::Independent => ModelSpec::new(ModelVariant::Uhfm, None).expect("valid"),
        }
    }

    /// True parameters for a problem of the given shape. Loadings alternate
    /// in sign and magnitude around the pinned anchor; `lambda1` is set so
    /// the Matérn correlation is appreciable across the square.
    pub fn true_params(&self, p: usize, tract_counts: &[usize], d_max: f64) -> ParamState {
        let mut s = ParamState::zeros(p, tract_counts);
        let pattern = [1.0, 0.8, -0.6, 1.2, -0.9, 0.5, -1.1, 0.7];
        for k in 0..p {
            s.mu[k] = 0.3 * k as f64;
            s.beta[k] = pattern[k % pattern.len()];
            s.sigma2[k] = 0.5;
        }
        s.beta[0] = 1.0;
        let n_cities = tract_counts.len();
        s.theta0 = 0.5;
        s.delta2 = 1.0;
        s.omega = DVector::from_element(n_cities, 0.5);
        s.lambda1 = (d_max / 6.0).max(0.1);
        s.tau2 = match self {
            Preset::SpatialStrong => DVector::from_element(n_cities, 1.0),
            Preset::Independent => DVector::zeros(n_cities),
        };
        s
    }
}

/// Tract counts of the default study shape: `n_cities - 1` cities with 5 to
/// 40 tracts plus one deliberately huge city, mimicking a panel where one
/// city has two orders of magnitude more tracts than the rest.
pub fn unbalanced_counts<R: Rng>(n_cities: usize, huge: usize, rng: &mut R) -> Vec<usize> {
    let mut counts: Vec<usize> = (0..n_cities.saturating_sub(1))
        .map(|_| rng.gen_range(5..=40))
        .collect();
    counts.push(huge);
    counts
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(ShfmError::InvalidInput(
            "spearman needs two equal-length series of length >= 2".into(),
        ));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sxy += (x - ma) * (y - mb);
        sxx += (x - ma) * (x - ma);
        syy += (y - mb) * (y - mb);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(ShfmError::Degenerate("constant series has no rank order".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut s = 0;
    while s < n {
        let mut e = s;
        while e + 1 < n && x[idx[e + 1]] == x[idx[s]] {
            e += 1;
        }
        let avg = (s + e) as f64 / 2.0 + 1.0;
        for &i in &idx[s..=e] {
            ranks[i] = avg;
        }
        s = e + 1;
    }
    ranks
}

/// Settings for [`aggregation_distortion_study`].
#[derive(Debug, Clone, Serialize)]
pub struct StudyConfig {
    pub preset: Preset,
    pub n_cities: usize,
    /// Tract count of the oversized city; the rest draw from 5..=40.
    pub huge_city_tracts: usize,
    pub n_indicators: usize,
    /// Value of phi used when fitting the tract-level model.
    pub fit_phi: f64,
    /// Multiplies the preset's tract-level noise (sigma2 and omega) in the
    /// simulation truth. Larger values make the city means noisier in the
    /// small cities, which is what the aggregated fit cannot account for.
    pub tract_noise_scale: f64,
    pub mcmc: McmcConfig,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            preset: Preset::SpatialStrong,
            n_cities: 10,
            huge_city_tracts: 200,
            n_indicators: 2,
            fit_phi: 5.0,
            tract_noise_scale: 1.0,
            mcmc: McmcConfig {
                n_iter: 6000,
                burn_in: 2000,
                thin: 4,
                n_chains: 2,
                seed: 0,
                mh_step_scale: 0.3,
            },
            replicates: 20,
            seed: 9,
        }
    }
}

/// One replicate of the study: rank agreement with the truth and rank
/// interval widths for the tract-level and the aggregated fit.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub spearman_shfm: f64,
    pub spearman_asfm: f64,
    /// Per-city 95% rank interval widths.
    pub rank_widths_shfm: Vec<f64>,
    pub rank_widths_asfm: Vec<f64>,
    pub tract_counts: Vec<usize>,
}

/// Aggregate result of the study.
#[derive(Debug, Clone, Serialize)]
pub struct StudySummary {
    pub config: StudyConfig,
    pub outcomes: Vec<ReplicateOutcome>,
    /// Replicates that failed, with their error messages.
    pub failures: Vec<(usize, String)>,
    pub mean_spearman_shfm: f64,
    pub mean_spearman_asfm: f64,
    /// Replicates where the tract-level fit ordered the cities better.
    pub shfm_wins: usize,
    /// Coefficient of variation of rank interval widths across cities,
    /// averaged over replicates.
    pub width_cv_shfm: f64,
    pub width_cv_asfm: f64,
}

/// Simulates unequal-tract-count data from the preset, fits the tract-level
/// model and the city-means model to each replicate, and summarizes how well
/// each recovers the true city ordering.
pub fn aggregation_distortion_study(config: &StudyConfig) -> Result<StudySummary> {
    if config.replicates == 0 {
        return Err(ShfmError::InvalidInput("need at least one replicate".into()));
    }
    let results: Vec<(usize, Result<ReplicateOutcome>)> = (0..config.replicates)
        .into_par_iter()
        .map(|r| (r, run_replicate(config, r)))
        .collect();

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results {
        match res {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    if outcomes.is_empty() {
        return Err(ShfmError::Numerical(format!(
            "every replicate failed; first error: {}",
            failures[0].1
        )));
    }
    let n = outcomes.len() as f64;
    let mean_spearman_shfm = outcomes.iter().map(|o| o.spearman_shfm).sum::<f64>() / n;
    let mean_spearman_asfm = outcomes.iter().map(|o| o.spearman_asfm).sum::<f64>() / n;
    let shfm_wins = outcomes
        .iter()
        .filter(|o| o.spearman_shfm > o.spearman_asfm)
        .count();
    let width_cv_shfm =
        outcomes.iter().map(|o| cv(&o.rank_widths_shfm)).sum::<f64>() / n;
    let width_cv_asfm =
        outcomes.iter().map(|o| cv(&o.rank_widths_asfm)).sum::<f64>() / n;
    Ok(StudySummary {
        config: config.clone(),
        outcomes,
        failures,
        mean_spearman_shfm,
        mean_spearman_asfm,
        shfm_wins,
        width_cv_shfm,
        width_cv_asfm,
    })
}

fn run_replicate(config: &StudyConfig, replicate: usize) -> Result<ReplicateOutcome> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(config.seed ^ (replicate as u64).wrapping_mul(0xA076_1D64_78BD_642F));
    let counts = unbalanced_counts(config.n_cities, config.huge_city_tracts, &mut rng);
    let geometry = random_geometry_with_counts(&counts, &mut rng)?;
    let mut truth = config.preset.true_params(
        config.n_indicators,
        &counts,
        geometry.max_city_distance(),
    );
    truth.sigma2 *= config.tract_noise_scale;
    truth.omega *= config.tract_noise_scale;
    let (panel, latent) =
        simulate_dataset(&config.preset.spec(), &truth, &geometry, &mut rng)?;

    let hyper = HyperPriors::vague(
        config.n_indicators,
        config.n_cities,
        geometry.max_city_distance(),
    );
    let mut mcmc = config.mcmc;
    mcmc.seed = config.seed ^ (replicate as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);

    let fit = |spec: &ModelSpec| -> Result<(f64, Vec<f64>)> {
        let ctx = FitContext::new(&panel, spec, &hyper, &geometry)?;
        let chains: Result<Vec<_>> = (0..mcmc.n_chains)
            .map(|c| run_chain_ctx(&ctx, &mcmc, c))
            .collect();
        let chains = chains?;
        let ranks = posterior_ranks(&chains, RankTarget::Theta)?;
        let rho = spearman(latent.theta.as_slice(), &ranks.mean_rank)?;
        let widths = ranks
            .interval
            .iter()
            .map(|&(lo, hi)| (hi - lo) as f64)
            .collect();
        Ok((rho, widths))
    };

    let (spearman_shfm, rank_widths_shfm) = fit(&ModelSpec::shfm(config.fit_phi)?)?;
    let (spearman_asfm, rank_widths_asfm) =
        fit(&ModelSpec::new(ModelVariant::Asfm, None)?)?;
    Ok(ReplicateOutcome {
        replicate,
        spearman_shfm,
        spearman_asfm,
        rank_widths_shfm,
        rank_widths_asfm,
        tract_counts: counts,
    })
}

fn cv(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if m == 0.0 {
        return 0.0;
    }
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    v.sqrt() / m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn single_city_single_tract_has_empty_adjacency() {
        let g = random_geometry(1, (1, 1), &mut rng(1)).unwrap();
        assert_eq!(g.n_cities(), 1);
        assert!(g.adjacency[0].is_empty());
    }

    #[test]
    fn knn_adjacency_matches_brute_force() {
        let mut r = rng(2);
        let g = random_geometry(3, (2, 12), &mut r).unwrap();
        for (tc, adj) in g.tract_centroids.iter().zip(&g.adjacency) {
            let n = tc.len();
            let k = 4;
            let mut want = Vec::new();
            for j in 0..n {
                let mut d: Vec<(usize, f64)> = (0..n)
                    .filter(|&l| l != j)
                    .map(|l| {
                        let dx = tc[j][0] - tc[l][0];
                        let dy = tc[j][1] - tc[l][1];
                        (l, dx.hypot(dy))
                    })
                    .collect();
                d.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
                for &(l, _) in d.iter().take(k) {
                    let e = (j.min(l), j.max(l));
                    if !want.contains(&e) {
                        want.push(e);
                    }
                }
            }
            want.sort_unstable();
            assert_eq!(adj, &want);
        }
    }

    #[test]
    fn adjacency_is_symmetric_edge_list() {
        let g = random_geometry(2, (5, 20), &mut rng(3)).unwrap();
        for adj in &g.adjacency {
            for &(a, b) in adj {
                assert!(a < b);
            }
            let mut dedup = adj.clone();
            dedup.dedup();
            assert_eq!(&dedup, adj);
        }
    }

    #[test]
    fn same_seed_reproduces_the_dataset() {
        let g = random_geometry(3, (2, 5), &mut rng(4)).unwrap();
        let spec = Preset::SpatialStrong.spec();
        let truth = Preset::SpatialStrong.true_params(3, &g.tract_counts(), g.max_city_distance());
        let (p1, l1) = simulate_dataset(&spec, &truth, &g, &mut rng(9)).unwrap();
        let (p2, l2) = simulate_dataset(&spec, &truth, &g, &mut rng(9)).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn zero_noise_reduces_to_the_mean_structure() {
        let g = random_geometry(2, (2, 4), &mut rng(5)).unwrap();
        let spec = Preset::SpatialStrong.spec();
        let mut truth = Preset::SpatialStrong.true_params(2, &g.tract_counts(), 1.0);
        truth.sigma2 = DVector::from_element(2, 1e-30);
        let (panel, latent) = simulate_dataset(&spec, &truth, &g, &mut rng(6)).unwrap();
        for (i, y) in panel.cities.iter().enumerate() {
            for j in 0..y.nrows() {
                for k in 0..2 {
                    let want = truth.mu[k] + truth.beta[k] * latent.f[i][j];
                    assert_relative_eq!(y[(j, k)], want, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn tiny_tau2_matches_the_unstructured_law() {
        // tau2 -> 0 degenerates the CAR field to zero.
        let g = random_geometry(3, (2, 4), &mut rng(7)).unwrap();
        let spec = ModelSpec::shfm(5.0).unwrap();
        let mut truth = Preset::SpatialStrong.true_params(2, &g.tract_counts(), 1.0);
        truth.tau2 = DVector::from_element(3, 1e-30);
        let (_, latent) = simulate_dataset(&spec, &truth, &g, &mut rng(8)).unwrap();
        for ft in &latent.f_tilde {
            assert!(ft.amax() < 1e-10);
        }
    }

    #[test]
    fn marginal_moments_match_the_analytic_values() {
        // One city, one tract, p = 2: y_k has mean mu_k + beta_k theta0 and
        // covariance beta_k beta_k' nu^2 + diag(sigma2), with
        // nu^2 = delta2 + tau2 + omega (P_jj = 1 for an isolated tract).
        let g = Geometry {
            city_centroids: vec![[0.0, 0.0]],
            tract_centroids: vec![vec![[0.0, 0.0]]],
            adjacency: vec![vec![]],
        };
        let spec = ModelSpec::shfm(5.0).unwrap();
        let mut truth = ParamState::zeros(2, &[1]);
        truth.mu = DVector::from_vec(vec![0.4, -0.2]);
        truth.beta = DVector::from_vec(vec![1.0, -0.8]);
        truth.sigma2 = DVector::from_vec(vec![0.3, 0.6]);
        truth.theta0 = 0.7;
        truth.delta2 = 0.5;
        truth.tau2 = DVector::from_element(1, 0.9);
        truth.omega = DVector::from_element(1, 0.4);
        let nu2 = 0.5 + 0.9 + 0.4;

        let n = 40_000;
        let mut r = rng(11);
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        let mut cross = 0.0;
        for _ in 0..n {
            let (panel, _) = simulate_dataset(&spec, &truth, &g, &mut r).unwrap();
            let y0 = panel.cities[0][(0, 0)];
            let y1 = panel.cities[0][(0, 1)];
            sum[0] += y0;
            sum[1] += y1;
            sq[0] += y0 * y0;
            sq[1] += y1 * y1;
            cross += y0 * y1;
        }
        let nf = n as f64;
        let mean = [sum[0] / nf, sum[1] / nf];
        let var = [sq[0] / nf - mean[0] * mean[0], sq[1] / nf - mean[1] * mean[1]];
        let cov = cross / nf - mean[0] * mean[1];

        let want_mean = [0.4 + 0.7, -0.2 - 0.8 * 0.7];
        let want_var = [nu2 + 0.3, 0.64 * nu2 + 0.6];
        let want_cov = -0.8 * nu2;
        // 4 standard errors of the Monte Carlo estimates.
        for k in 0..2 {
            let se = (want_var[k] / nf).sqrt();
            assert!((mean[k] - want_mean[k]).abs() < 4.0 * se);
            let se_var = want_var[k] * (2.0 / nf).sqrt();
            assert!((var[k] - want_var[k]).abs() < 4.0 * se_var);
        }
        let se_cov = ((want_var[0] * want_var[1] + want_cov * want_cov) / nf).sqrt();
        assert!((cov - want_cov).abs() < 4.0 * se_cov);
    }

    #[test]
    fn simulated_data_has_finite_posterior() {
        let mut r = rng(12);
        let g = random_geometry(3, (2, 6), &mut r).unwrap();
        let spec = Preset::SpatialStrong.spec();
        let truth = Preset::SpatialStrong.true_params(4, &g.tract_counts(), g.max_city_distance());
        let (panel, latent) = simulate_dataset(&spec, &truth, &g, &mut r).unwrap();
        let hyper = HyperPriors::vague(4, 3, g.max_city_distance());
        let ctx = FitContext::new(&panel, &spec, &hyper, &g).unwrap();
        let hc = ctx.correlation_cache(&latent).unwrap();
        let lp = crate::sampler::log_posterior(&latent, &ctx, &hc).unwrap();
        assert!(lp.is_finite());
    }

    #[test]
    fn spearman_matches_direct_rank_then_correlate() {
        let a = [3.0, 1.0, 4.0, 1.5, 9.0];
        let b = [2.0, 0.5, 5.0, 1.0, 7.0];
        // Same order in both: rho = 1.
        assert_relative_eq!(spearman(&a, &b).unwrap(), 1.0);
        let rev: Vec<f64> = b.iter().map(|x| -x).collect();
        assert_relative_eq!(spearman(&a, &rev).unwrap(), -1.0);

        let c = [1.0, 2.0, 3.0, 4.0, 5.0];
        let d = [1.0, 3.0, 2.0, 5.0, 4.0];
        // Hand-computed: ranks differ by 1 in two adjacent swaps.
        let want = 1.0 - 6.0 * (1.0 + 1.0 + 1.0 + 1.0) / (5.0 * 24.0);
        assert_relative_eq!(spearman(&c, &d).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn spearman_handles_ties_with_average_ranks() {
        let a = [1.0, 1.0, 2.0];
        assert_eq!(average_ranks(&a), vec![1.5, 1.5, 3.0]);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn unbalanced_counts_have_one_huge_city() {
        let counts = unbalanced_counts(10, 200, &mut rng(13));
        assert_eq!(counts.len(), 10);
        assert_eq!(counts[9], 200);
        assert!(counts[..9].iter().all(|&n| (5..=40).contains(&n)));
    }

    #[test]
    fn preset_round_trip_and_shapes() {
        assert_eq!(Preset::from_name("spatial-strong").unwrap(), Preset::SpatialStrong);
        assert_eq!(Preset::from_name("independent").unwrap(), Preset::Independent);
        assert!(Preset::from_name("bogus").is_err());

        let t = Preset::Independent.true_params(5, &[2, 3], 10.0);
        assert!(t.validate(&Preset::Independent.spec()).is_ok());
        assert_eq!(t.beta[0], 1.0);
        assert_eq!(t.tau2.amax(), 0.0);
    }
}
