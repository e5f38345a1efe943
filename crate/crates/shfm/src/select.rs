//! Model comparison criteria: DIC, the Gelfand–Ghosh posterior predictive
//! loss (EPD), CRPS, MAE, and MSE, plus the comparison table across fitted
//! models. All five criteria are lower-is-better.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Result, ShfmError};
use crate::model::{aggregate_to_panel, observational_loglik, IndicatorPanel, ModelSpec, ParamState};
use crate::sampler::ChainOutput;

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// All five criteria for one fitted model, with the conventions used.
#[derive(Debug, Clone, Serialize)]
pub struct CriteriaReport {
    pub model: String,
    pub dic: f64,
    pub p_d: f64,
    /// DIC's effective-parameter count can go negative in pathological
    /// fits; flagged rather than treated as an error.
    pub negative_p_d: bool,
    pub epd: f64,
    /// Goodness-of-fit term of EPD.
    pub epd_g: f64,
    /// Predictive-variance penalty term of EPD.
    pub epd_p: f64,
    pub crps: f64,
    pub mae: f64,
    pub mse: f64,
    /// Aggregation conventions, stated so numbers are comparable.
    pub conventions: String,
}

fn stored_draws<'a>(chains: &'a [ChainOutput]) -> Result<Vec<&'a ParamState>> {
    let draws: Vec<&ParamState> = chains.iter().flat_map(|c| c.draws.iter()).collect();
    if draws.is_empty() {
        return Err(ShfmError::InvalidInput("no stored draws".into()));
    }
    Ok(draws)
}

fn effective_panel(panel: &IndicatorPanel, spec: &ModelSpec) -> IndicatorPanel {
    if spec.aggregated() {
        aggregate_to_panel(panel)
    } else {
        panel.clone()
    }
}

/// Deviance `D = -2 log p(y | mu, beta, sigma2, f)`: the likelihood is
/// conditional on the tract factors, which count as parameters.
pub fn deviance(state: &ParamState, data: &IndicatorPanel) -> Result<f64> {
    Ok(-2.0 * observational_loglik(state, data)?)
}

/// DIC with the conditional-on-f deviance focus: `mean(D) + p_D` where
/// `p_D = mean(D) - D(posterior mean of the parameters)`.
pub fn dic(chains: &[ChainOutput], panel: &IndicatorPanel, spec: &ModelSpec) -> Result<(f64, f64)> {
    let draws = stored_draws(chains)?;
    let data = effective_panel(panel, spec);
    let nd = draws.len() as f64;

    let mut mean_dev = 0.0;
    for d in &draws {
        mean_dev += deviance(d, &data)? / nd;
    }

    // Posterior mean of every quantity the deviance depends on.
    let mut mean_state = draws[0].clone();
    mean_state.mu = DVector::zeros(mean_state.mu.len());
    mean_state.beta = DVector::zeros(mean_state.beta.len());
    mean_state.sigma2 = DVector::zeros(mean_state.sigma2.len());
    for f in mean_state.f.iter_mut() {
        f.fill(0.0);
    }
    for d in &draws {
        mean_state.mu += &d.mu / nd;
        mean_state.beta += &d.beta / nd;
        mean_state.sigma2 += &d.sigma2 / nd;
        for (acc, f) in mean_state.f.iter_mut().zip(&d.f) {
            *acc += f / nd;
        }
    }
    let dev_at_mean = deviance(&mean_state, &data)?;
    let p_d = mean_dev - dev_at_mean;
    Ok((mean_dev + p_d, p_d))
}

/// Gelfand–Ghosh posterior predictive loss under quadratic loss:
/// `G = sum (y - E[y_rep])^2`, `P = sum Var[y_rep]`, `EPD = G + P`, with
/// predictive moments estimated from one replicate draw per stored draw.
/// Returns `(g, p, epd)`.
pub fn epd<R: Rng>(
    chains: &[ChainOutput],
    panel: &IndicatorPanel,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<(f64, f64, f64)> {
    let reps = predictive_replicates(chains, panel, spec, rng)?;
    let data = effective_panel(panel, spec);
    let mut g = 0.0;
    let mut p = 0.0;
    let mut cell = 0usize;
    for y in &data.cities {
        for j in 0..y.nrows() {
            for k in 0..y.ncols() {
                let xs = &reps[cell];
                let n = xs.len() as f64;
                let m = xs.iter().sum::<f64>() / n;
                let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
                g += (y[(j, k)] - m).powi(2);
                p += v;
                cell += 1;
            }
        }
    }
    Ok((g, p, g + p))
}

/// One posterior predictive replicate per stored draw for every observation
/// cell, in row-major (city, tract, indicator) order.
fn predictive_replicates<R: Rng>(
    chains: &[ChainOutput],
    panel: &IndicatorPanel,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let draws = stored_draws(chains)?;
    let data = effective_panel(panel, spec);
    let p = data.n_indicators();
    let n_cells = data.total_tracts() * p;
    let mut reps = vec![Vec::with_capacity(draws.len()); n_cells];
    for d in &draws {
        let mut cell = 0usize;
        for (i, y) in data.cities.iter().enumerate() {
            if d.f[i].len() != y.nrows() {
                return Err(ShfmError::DimensionMismatch(format!(
                    "city {i}: draw has {} factors, panel has {} rows",
                    d.f[i].len(),
                    y.nrows()
                )));
            }
            for j in 0..y.nrows() {
                for k in 0..p {
                    let e: f64 = StandardNormal.sample(rng);
                    let rep = d.mu[k] + d.beta[k] * d.f[i][j] + d.sigma2[k].sqrt() * e;
                    reps[cell].push(rep);
                    cell += 1;
                }
            }
        }
    }
    Ok(reps)
}

/// Closed-form CRPS of a Gaussian forecast `N(mean, sd^2)` against an
/// observation: `sd [z(2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi)]` with
/// `z = (y - mean)/sd`. The `sd = 0` limit is `|y - mean|`.
pub fn crps_gaussian(mean: f64, sd: f64, y: f64) -> Result<f64> {
    if !(sd >= 0.0) {
        return Err(ShfmError::InvalidInput(format!("negative sd {sd}")));
    }
    if sd == 0.0 {
        return Ok((y - mean).abs());
    }
    let z = (y - mean) / sd;
    let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = 0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2));
    Ok(sd * (z * (2.0 * cdf - 1.0) + 2.0 * phi - 1.0 / SQRT_PI))
}

fn erf(x: f64) -> f64 {
    statrs::function::erf::erf(x)
}

/// Sample CRPS `E|X - y| - E|X - X'| / 2` over predictive draws, using the
/// sorted-sample identity for the second term.
pub fn crps_sample(draws: &[f64], y: f64) -> Result<f64> {
    let n = draws.len();
    if n == 0 {
        return Err(ShfmError::InvalidInput("no predictive draws".into()));
    }
    let nf = n as f64;
    let term1 = draws.iter().map(|x| (x - y).abs()).sum::<f64>() / nf;
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // E|X - X'| = (2 / n^2) sum_i (2i - n - 1) x_(i), i one-based.
    let pair: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * (i as f64 + 1.0) - nf - 1.0) * x)
        .sum::<f64>()
        / (nf * nf);
    Ok(term1 - pair)
}

/// Total sample CRPS over all observation cells, using one predictive
/// replicate per stored draw.
pub fn crps_total<R: Rng>(
    chains: &[ChainOutput],
    panel: &IndicatorPanel,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<f64> {
    let reps = predictive_replicates(chains, panel, spec, rng)?;
    let data = effective_panel(panel, spec);
    let mut total = 0.0;
    let mut cell = 0usize;
    for y in &data.cities {
        for j in 0..y.nrows() {
            for k in 0..y.ncols() {
                total += crps_sample(&reps[cell], y[(j, k)])?;
                cell += 1;
            }
        }
    }
    Ok(total)
}

/// Total absolute and squared errors of the posterior predictive mean
/// `E[mu_k + beta_k f_ij]` against the observed cells. Returns `(mae, mse)`
/// under the totals convention (sums, not averages).
pub fn mae_mse(
    chains: &[ChainOutput],
    panel: &IndicatorPanel,
    spec: &ModelSpec,
) -> Result<(f64, f64)> {
    let draws = stored_draws(chains)?;
    let data = effective_panel(panel, spec);
    let p = data.n_indicators();
    let nd = draws.len() as f64;
    let mut mae = 0.0;
    let mut mse = 0.0;
    for (i, y) in data.cities.iter().enumerate() {
        for j in 0..y.nrows() {
            for k in 0..p {
                let m = draws
                    .iter()
                    .map(|d| d.mu[k] + d.beta[k] * d.f[i][j])
                    .sum::<f64>()
                    / nd;
                let r = y[(j, k)] - m;
                mae += r.abs();
                mse += r * r;
            }
        }
    }
    Ok((mae, mse))
}

/// Builds the full criteria report for one fitted model.
pub fn criteria_report<R: Rng>(
    chains: &[ChainOutput],
    panel: &IndicatorPanel,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<CriteriaReport> {
    let (dic_value, p_d) = dic(chains, panel, spec)?;
    let (epd_g, epd_p, epd_value) = epd(chains, panel, spec, rng)?;
    let crps = crps_total(chains, panel, spec, rng)?;
    let (mae, mse) = mae_mse(chains, panel, spec)?;
    let model = match spec.phi {
        Some(phi) => format!("{} (phi = {phi})", spec.variant.name()),
        None => spec.variant.name().to_string(),
    };
    Ok(CriteriaReport {
        model,
        dic: dic_value,
        p_d,
        negative_p_d: p_d < 0.0,
        epd: epd_value,
        epd_g,
        epd_p,
        crps,
        mae,
        mse,
        conventions: "DIC focus: likelihood conditional on tract factors; \
                      EPD: quadratic loss, unit weight; CRPS/MAE/MSE: totals over cells"
            .into(),
    })
}

/// One row of the comparison table: the criteria plus per-criterion best
/// flags in the order `[dic, epd, crps, mae, mse]`.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub model: String,
    pub dic: f64,
    pub epd: f64,
    pub crps: f64,
    pub mae: f64,
    pub mse: f64,
    pub best: [bool; 5],
}

/// Ranked comparison across fitted models.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    /// Model(s) flagged best by every criterion, when any.
    pub best_overall: Vec<String>,
    /// Criteria (by name) where two or more models tie at the minimum.
    pub ties: Vec<&'static str>,
}

/// Marks the per-criterion minima (ties all flagged) and the models best
/// under all five criteria at once.
pub fn compare(reports: &[CriteriaReport]) -> Result<ComparisonTable> {
    if reports.len() < 2 {
        return Err(ShfmError::InvalidInput(
            "comparison needs at least 2 models".into(),
        ));
    }
    const NAMES: [&str; 5] = ["dic", "epd", "crps", "mae", "mse"];
    let values: Vec<[f64; 5]> = reports
        .iter()
        .map(|r| [r.dic, r.epd, r.crps, r.mae, r.mse])
        .collect();
    let mut ties = Vec::new();
    let mut best = vec![[false; 5]; reports.len()];
    for c in 0..5 {
        let min = values
            .iter()
            .map(|v| v[c])
            .fold(f64::INFINITY, f64::min);
        let winners: Vec<usize> = (0..reports.len())
            .filter(|&i| values[i][c] == min)
            .collect();
        if winners.len() > 1 {
            ties.push(NAMES[c]);
        }
        for i in winners {
            best[i][c] = true;
        }
    }
    let rows: Vec<ComparisonRow> = reports
        .iter()
        .zip(&best)
        .map(|(r, &b)| ComparisonRow {
            model: r.model.clone(),
            dic: r.dic,
            epd: r.epd,
            crps: r.crps,
            mae: r.mae,
            mse: r.mse,
            best: b,
        })
        .collect();
    let best_overall = rows
        .iter()
        .filter(|r| r.best.iter().all(|&b| b))
        .map(|r| r.model.clone())
        .collect();
    Ok(ComparisonTable {
        rows,
        best_overall,
        ties,
    })
}
