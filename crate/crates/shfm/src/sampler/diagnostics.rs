use nalgebra::DVector;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, ShfmError};
use crate::model::{aggregate_to_panel, IndicatorPanel, ModelSpec, ParamState};
use crate::sampler::run::ChainOutput;

/// Potential scale reduction factor for one scalar, with the Brooks–Gelman
/// sampling-variability (degrees-of-freedom) correction. Clamped below at 1.
pub fn gelman_rubin<F>(chains: &[ChainOutput], extract: F) -> Result<f64>
where
    F: Fn(&ParamState) -> f64,
{
    let series: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| c.draws.iter().map(&extract).collect())
        .collect();
    gelman_rubin_scalar(&series)
}

/// PSRF over raw scalar series (one per chain).
pub fn gelman_rubin_scalar(series: &[Vec<f64>]) -> Result<f64> {
    let m = series.len();
    if m < 2 {
        return Err(ShfmError::InvalidInput(
            "PSRF needs at least 2 chains".into(),
        ));
    }
    let n = series.iter().map(|s| s.len()).min().unwrap();
    if n < 10 {
        return Err(ShfmError::InvalidInput(format!(
            "PSRF needs chains of length >= 10, got {n}"
        )));
    }
    let mf = m as f64;
    let nf = n as f64;

    let means: Vec<f64> = series
        .iter()
        .map(|s| s[..n].iter().sum::<f64>() / nf)
        .collect();
    let vars: Vec<f64> = series
        .iter()
        .zip(&means)
        .map(|(s, &mu)| s[..n].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .collect();

    let w = vars.iter().sum::<f64>() / mf;
    if w == 0.0 {
        return Err(ShfmError::Degenerate(
            "zero within-chain variance".into(),
        ));
    }
    let grand = means.iter().sum::<f64>() / mf;
    let b_over_n = means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (mf - 1.0);
    let b = nf * b_over_n;

    let sigma2_plus = (nf - 1.0) / nf * w + b_over_n;
    let v_hat = sigma2_plus + b_over_n / mf;

    // Sampling variance of V-hat (Gelman & Rubin 1992), used for the
    // Brooks-Gelman df correction.
    let var_s2 = sample_var(&vars);
    let means2: Vec<f64> = means.iter().map(|x| x * x).collect();
    let cov_s2_m2 = sample_cov(&vars, &means2);
    let cov_s2_m = sample_cov(&vars, &means);
    let var_v = ((nf - 1.0) / nf).powi(2) / mf * var_s2
        + ((mf + 1.0) / (mf * nf)).powi(2) * 2.0 / (mf - 1.0) * b * b
        + 2.0 * (mf + 1.0) * (nf - 1.0) / (mf * nf * nf)
            * (nf / mf)
            * (cov_s2_m2 - 2.0 * grand * cov_s2_m);

    let r = v_hat / w;
    let psrf = if var_v > 0.0 && v_hat > 0.0 {
        let d = 2.0 * v_hat * v_hat / var_v;
        ((d + 3.0) / (d + 1.0) * r).sqrt()
    } else {
        r.sqrt()
    };
    Ok(psrf.max(1.0))
}

fn sample_var(x: &[f64]) -> f64 {
    sample_cov(x, x)
}

fn sample_cov(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (n - 1.0)
}

/// PSRF of one monitored parameter.
#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub psrf: f64,
    pub converged: bool,
}

/// Convergence report over the default monitored set (`mu`, free `beta`,
/// `sigma2`, and `theta0` where the variant has it).
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub params: Vec<ParamSummary>,
    pub threshold: f64,
    pub all_converged: bool,
}

pub fn convergence_report(chains: &[ChainOutput], spec: &ModelSpec) -> Result<ConvergenceReport> {
    let threshold = 1.1;
    if chains.is_empty() || chains[0].draws.is_empty() {
        return Err(ShfmError::InvalidInput("no draws".into()));
    }
    let p = chains[0].draws[0].mu.len();
    let mut params = Vec::new();
    let mut push = |name: String, psrf: f64| {
        params.push(ParamSummary {
            name,
            psrf,
            converged: psrf <= threshold,
        });
    };
    for k in 0..p {
        push(format!("mu[{k}]"), gelman_rubin(chains, |s| s.mu[k])?);
    }
    for k in 0..p {
        if k != spec.anchor {
            push(format!("beta[{k}]"), gelman_rubin(chains, |s| s.beta[k])?);
        }
    }
    for k in 0..p {
        push(
            format!("sigma2[{k}]"),
            gelman_rubin(chains, |s| s.sigma2[k])?,
        );
    }
    if spec.uses_theta() {
        push("theta0".into(), gelman_rubin(chains, |s| s.theta0)?);
    }
    let all_converged = params.iter().all(|p| p.converged);
    Ok(ConvergenceReport {
        params,
        threshold,
        all_converged,
    })
}

/// Standardized residuals at posterior means plus theoretical-vs-empirical
/// normal quantile pairs.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub residuals: Vec<f64>,
    /// `(theoretical, empirical)` quantile pairs, both ascending.
    pub qq: Vec<(f64, f64)>,
    pub mean: f64,
    pub sd: f64,
}

/// `(y_ijk - mu_k - beta_k f_ij) / sigma_k` evaluated at posterior means of
/// the parameters, over all observation cells of the effective panel.
pub fn standardized_residuals(
    chains: &[ChainOutput],
    panel: &IndicatorPanel,
    spec: &ModelSpec,
) -> Result<ResidualReport> {
    let draws: Vec<&ParamState> = chains.iter().flat_map(|c| c.draws.iter()).collect();
    if draws.is_empty() {
        return Err(ShfmError::InvalidInput("no draws".into()));
    }
    let data = if spec.aggregated() {
        aggregate_to_panel(panel)
    } else {
        panel.clone()
    };
    let p = data.n_indicators();
    let nd = draws.len() as f64;

    let mut mu = DVector::zeros(p);
    let mut beta = DVector::zeros(p);
    let mut sigma2 = DVector::zeros(p);
    for d in &draws {
        mu += &d.mu;
        beta += &d.beta;
        sigma2 += &d.sigma2;
    }
    mu /= nd;
    beta /= nd;
    sigma2 /= nd;
    let f_mean: Vec<DVector<f64>> = (0..data.n_cities())
        .map(|i| {
            let mut acc = DVector::zeros(draws[0].f[i].len());
            for d in &draws {
                acc += &d.f[i];
            }
            acc / nd
        })
        .collect();

    let mut residuals = Vec::with_capacity(data.total_tracts() * p);
    for (i, y) in data.cities.iter().enumerate() {
        for j in 0..y.nrows() {
            for k in 0..p {
                let r = (y[(j, k)] - mu[k] - beta[k] * f_mean[i][j]) / sigma2[k].sqrt();
                residuals.push(r);
            }
        }
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let sd = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();

    let mut sorted = residuals.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let qq = sorted
        .iter()
        .enumerate()
        .map(|(i, &emp)| {
            let q = (i as f64 + 0.5) / n;
            (std_normal.inverse_cdf(q), emp)
        })
        .collect();

    Ok(ResidualReport {
        residuals,
        qq,
        mean,
        sd,
    })
}
