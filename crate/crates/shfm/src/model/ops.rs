use nalgebra::{DMatrix, DVector};

use crate::error::{Result, ShfmError};
use crate::kernels::CarStructure;
use crate::model::types::{IndicatorPanel, ParamState};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gaussian observational log-likelihood
/// `sum_{i,j,k} log N(y_ijk | mu_k + beta_k f_ij, sigma_k^2)`.
pub fn observational_loglik(state: &ParamState, panel: &IndicatorPanel) -> Result<f64> {
    let p = panel.n_indicators();
    if state.mu.len() != p || state.f.len() != panel.n_cities() {
        return Err(ShfmError::DimensionMismatch(format!(
            "state is sized for p = {}, I = {}; panel has p = {p}, I = {}",
            state.mu.len(),
            state.f.len(),
            panel.n_cities()
        )));
    }
    let mut ll = 0.0;
    for (i, y) in panel.cities.iter().enumerate() {
        let f = &state.f[i];
        if f.len() != y.nrows() {
            return Err(ShfmError::DimensionMismatch(format!(
                "city {i}: {} factors vs {} tracts",
                f.len(),
                y.nrows()
            )));
        }
        for k in 0..p {
            let (mu_k, beta_k, s2) = (state.mu[k], state.beta[k], state.sigma2[k]);
            let half_log = 0.5 * (LN_2PI + s2.ln());
            for j in 0..y.nrows() {
                let r = y[(j, k)] - mu_k - beta_k * f[j];
                ll -= half_log + 0.5 * r * r / s2;
            }
        }
    }
    Ok(ll)
}

/// Marginal variance of the tract factor,
/// `nu_ij^2 = delta2 + tau2_i P_{i,jj} + omega_i`.
///
/// `cars` is `None` for variants without a within-city CAR field (the
/// `tau2` term is then zero).
pub fn factor_variance(
    state: &ParamState,
    cars: Option<&[CarStructure]>,
    i: usize,
    j: usize,
) -> f64 {
    let car_term = cars.map_or(0.0, |c| state.tau2[i] * c[i].p_diag(j));
    state.delta2 + car_term + state.omega[i]
}

/// Fraction of indicator `k`'s variance explained by the common factor:
/// `pi_ijk = (1 + sigma_k^2 / (beta_k^2 nu_ij^2))^{-1}`.
pub fn variance_explained(
    state: &ParamState,
    cars: Option<&[CarStructure]>,
    i: usize,
    j: usize,
    k: usize,
) -> f64 {
    let nu2 = factor_variance(state, cars, i, j);
    1.0 / (1.0 + state.sigma2[k] / (state.beta[k] * state.beta[k] * nu2))
}

/// `pi_ijk` averaged across the tracts of city `i`.
pub fn variance_explained_city_avg(
    state: &ParamState,
    cars: Option<&[CarStructure]>,
    i: usize,
    k: usize,
) -> f64 {
    let n = state.f[i].len();
    (0..n)
        .map(|j| variance_explained(state, cars, i, j, k))
        .sum::<f64>()
        / n as f64
}

/// Fraction of the factor variance left unexplained by the city and tract
/// components: `pi~_ij = (1 + (delta2 + tau2_i P_{i,jj}) / omega_i)^{-1}`.
pub fn unexplained_fraction(
    state: &ParamState,
    cars: Option<&[CarStructure]>,
    i: usize,
    j: usize,
) -> f64 {
    let car_term = cars.map_or(0.0, |c| state.tau2[i] * c[i].p_diag(j));
    1.0 / (1.0 + (state.delta2 + car_term) / state.omega[i])
}

/// `1 - pi~_ij` averaged across the tracts of city `i` (the explained share
/// of the factor variance).
pub fn unexplained_fraction_city_avg(
    state: &ParamState,
    cars: Option<&[CarStructure]>,
    i: usize,
) -> f64 {
    let n = state.f[i].len();
    (0..n)
        .map(|j| unexplained_fraction(state, cars, i, j))
        .sum::<f64>()
        / n as f64
}

/// How posterior draws are reduced before min–max standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StandardizeMode {
    /// Standardize each draw, then average the standardized fields.
    PerDraw,
    /// Standardize the posterior-mean field.
    MeanField,
}

/// Global min–max normalization `kappa_ij = (f_ij - min) / (max - min)` of a
/// single per-city field.
pub fn standardize_field(field: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in field {
        for &x in v.iter() {
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    if !(hi > lo) {
        return Err(ShfmError::Degenerate(
            "cannot min-max standardize a constant field".into(),
        ));
    }
    let span = hi - lo;
    Ok(field.iter().map(|v| v.map(|x| (x - lo) / span)).collect())
}

/// Standardized index over posterior draws of the tract factors.
pub fn standardize_index(
    f_draws: &[Vec<DVector<f64>>],
    mode: StandardizeMode,
) -> Result<Vec<DVector<f64>>> {
    if f_draws.is_empty() {
        return Err(ShfmError::InvalidInput("no draws".into()));
    }
    match mode {
        StandardizeMode::MeanField => {
            let mean = mean_field(f_draws);
            standardize_field(&mean)
        }
        StandardizeMode::PerDraw => {
            let mut acc: Vec<DVector<f64>> = f_draws[0]
                .iter()
                .map(|v| DVector::zeros(v.len()))
                .collect();
            for draw in f_draws {
                let std = standardize_field(draw)?;
                for (a, s) in acc.iter_mut().zip(std) {
                    *a += s;
                }
            }
            let n = f_draws.len() as f64;
            Ok(acc.into_iter().map(|v| v / n).collect())
        }
    }
}

/// Mean over draws of a per-city field.
pub fn mean_field(draws: &[Vec<DVector<f64>>]) -> Vec<DVector<f64>> {
    let mut acc: Vec<DVector<f64>> = draws[0].iter().map(|v| DVector::zeros(v.len())).collect();
    for draw in draws {
        for (a, v) in acc.iter_mut().zip(draw) {
            *a += v;
        }
    }
    let n = draws.len() as f64;
    acc.into_iter().map(|v| v / n).collect()
}

/// City-level means `ybar_ik = n_i^{-1} sum_j y_ijk` as an `I x p` matrix.
pub fn aggregate_panel(panel: &IndicatorPanel) -> DMatrix<f64> {
    let p = panel.n_indicators();
    let n_cities = panel.n_cities();
    let mut out = DMatrix::zeros(n_cities, p);
    for (i, y) in panel.cities.iter().enumerate() {
        let n = y.nrows() as f64;
        for k in 0..p {
            out[(i, k)] = y.column(k).sum() / n;
        }
    }
    out
}

/// An aggregated panel as a one-tract-per-city [`IndicatorPanel`].
pub fn aggregate_to_panel(panel: &IndicatorPanel) -> IndicatorPanel {
    let means = aggregate_panel(panel);
    IndicatorPanel {
        cities: (0..panel.n_cities())
            .map(|i| DMatrix::from_row_slice(1, panel.n_indicators(), means.row(i).transpose().as_slice()))
            .collect(),
        indicator_names: panel.indicator_names.clone(),
        city_names: panel.city_names.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tiny_panel() -> IndicatorPanel {
        IndicatorPanel::new(
            vec![
                DMatrix::from_row_slice(2, 2, &[0.1, -0.2, 1.3, 0.4]),
                DMatrix::from_row_slice(3, 2, &[0.0, 0.5, -1.0, 0.2, 0.7, -0.3]),
            ],
            vec!["a".into(), "b".into()],
            vec!["c0".into(), "c1".into()],
        )
        .unwrap()
    }

    #[test]
    fn loglik_single_cell_at_mean() {
        let panel = IndicatorPanel::new(
            vec![DMatrix::from_row_slice(1, 1, &[0.7])],
            vec!["a".into()],
            vec!["c".into()],
        )
        .unwrap();
        let mut state = ParamState::zeros(1, &[1]);
        state.mu[0] = 0.7;
        let ll = observational_loglik(&state, &panel).unwrap();
        assert!((ll + 0.5 * LN_2PI).abs() < 1e-14);
    }

    #[test]
    fn loglik_adds_over_independent_tracts() {
        let panel = tiny_panel();
        let state = ParamState::zeros(2, &[2, 3]);
        let total = observational_loglik(&state, &panel).unwrap();
        let mut parts = 0.0;
        for (i, city) in panel.cities.iter().enumerate() {
            for j in 0..city.nrows() {
                let sub = IndicatorPanel::new(
                    vec![DMatrix::from_row_slice(
                        1,
                        2,
                        city.row(j).transpose().as_slice(),
                    )],
                    panel.indicator_names.clone(),
                    vec![format!("{i}-{j}")],
                )
                .unwrap();
                let mut s = ParamState::zeros(2, &[1]);
                s.f[0][0] = state.f[i][j];
                parts += observational_loglik(&s, &sub).unwrap();
            }
        }
        assert!((total - parts).abs() < 1e-12);
    }

    #[test]
    fn loglik_matches_elementwise_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let panel = tiny_panel();
        let mut state = ParamState::zeros(2, &[2, 3]);
        state.mu = DVector::from_vec(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        state.beta[1] = rng.gen_range(-2.0..2.0);
        state.sigma2 = DVector::from_vec(vec![0.5, 1.7]);
        for f in state.f.iter_mut() {
            for v in f.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let got = observational_loglik(&state, &panel).unwrap();
        let mut want = 0.0;
        for (i, y) in panel.cities.iter().enumerate() {
            for j in 0..y.nrows() {
                for k in 0..2 {
                    let m = state.mu[k] + state.beta[k] * state.f[i][j];
                    let s2 = state.sigma2[k];
                    want += -0.5 * ((y[(j, k)] - m).powi(2) / s2 + s2.ln() + LN_2PI);
                }
            }
        }
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn loglik_rejects_mismatch() {
        let panel = tiny_panel();
        let state = ParamState::zeros(3, &[2, 3]);
        assert!(observational_loglik(&state, &panel).is_err());
    }

    #[test]
    fn variance_explained_half_when_balanced() {
        // nu2 = 1 (delta2 = 0.5, omega = 0.5, no CAR), sigma = beta => 0.5.
        let mut state = ParamState::zeros(1, &[1]);
        state.delta2 = 0.5;
        state.omega[0] = 0.5;
        state.sigma2[0] = 4.0;
        state.beta[0] = 2.0;
        assert!((variance_explained(&state, None, 0, 0, 0) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn variance_explained_unit_variance_illustration() {
        // nu2 = 1, sigma = 2, beta = 1 => 1/(1+4) = 0.2.
        let mut state = ParamState::zeros(1, &[1]);
        state.delta2 = 0.5;
        state.omega[0] = 0.5;
        state.sigma2[0] = 4.0;
        state.beta[0] = 1.0;
        assert!((variance_explained(&state, None, 0, 0, 0) - 0.2).abs() < 1e-14);
    }

    #[test]
    fn variance_explained_algebraic_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut state = ParamState::zeros(2, &[2]);
        state.delta2 = rng.gen_range(0.1..2.0);
        state.omega[0] = rng.gen_range(0.1..2.0);
        state.sigma2[1] = rng.gen_range(0.1..2.0);
        state.beta[1] = rng.gen_range(-2.0..-0.1);
        let nu2 = factor_variance(&state, None, 0, 0);
        let s2 = state.sigma2[1];
        let b2 = state.beta[1] * state.beta[1];
        let want = 1.0 - s2 / (s2 + b2 * nu2);
        let got = variance_explained(&state, None, 0, 0, 1);
        assert!((got - want).abs() < 1e-14);
        // Complement identity is exact.
        assert!((got + s2 / (s2 + b2 * nu2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unexplained_fraction_balanced_thirds() {
        let car = CarStructure::build(&[], &[[0.0, 0.0]], 0.0).unwrap();
        let mut state = ParamState::zeros(1, &[1]);
        state.delta2 = 0.7;
        state.tau2[0] = 0.7; // P_jj = 1 with empty adjacency
        state.omega[0] = 0.7;
        let got = unexplained_fraction(&state, Some(std::slice::from_ref(&car)), 0, 0);
        assert!((got - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn unexplained_fraction_limits_and_identity() {
        let mut state = ParamState::zeros(1, &[1]);
        state.delta2 = 0.3;
        state.omega[0] = 1e9;
        assert!(unexplained_fraction(&state, None, 0, 0) > 0.999_999);

        state.omega[0] = 0.9;
        let nu2 = factor_variance(&state, None, 0, 0);
        let got = unexplained_fraction(&state, None, 0, 0);
        assert!((got - state.omega[0] / nu2).abs() < 1e-14);
    }

    #[test]
    fn uhfm_reduction() {
        // With tau2 = 0 the fraction reduces to (1 + delta2/omega)^{-1}.
        let mut state = ParamState::zeros(1, &[1]);
        state.delta2 = 1.4;
        state.omega[0] = 0.6;
        let want = 1.0 / (1.0 + state.delta2 / state.omega[0]);
        assert!((unexplained_fraction(&state, None, 0, 0) - want).abs() < 1e-14);
    }

    #[test]
    fn standardize_three_values() {
        let field = vec![DVector::from_vec(vec![0.0, 5.0, 10.0])];
        let out = standardize_field(&field).unwrap();
        assert_eq!(out[0].as_slice(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn standardize_affine_invariance_and_constant_error() {
        let field = vec![
            DVector::from_vec(vec![1.0, -0.5]),
            DVector::from_vec(vec![2.5]),
        ];
        let base = standardize_field(&field).unwrap();
        let scaled: Vec<DVector<f64>> = field.iter().map(|v| v.map(|x| 3.0 * x - 7.0)).collect();
        let again = standardize_field(&scaled).unwrap();
        for (a, b) in base.iter().zip(&again) {
            assert!((a - b).abs().max() < 1e-14);
        }
        let constant = vec![DVector::from_element(4, 2.0)];
        assert!(standardize_field(&constant).is_err());
    }

    #[test]
    fn aggregate_examples() {
        // City of identical rows aggregates to that row.
        let panel = IndicatorPanel::new(
            vec![DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0])],
            vec!["a".into(), "b".into()],
            vec!["c".into()],
        )
        .unwrap();
        let m = aggregate_panel(&panel);
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(0, 1)], 2.0);

        let two = IndicatorPanel::new(
            vec![DMatrix::from_row_slice(2, 1, &[0.0, 2.0])],
            vec!["a".into()],
            vec!["c".into()],
        )
        .unwrap();
        assert_eq!(aggregate_panel(&two)[(0, 0)], 1.0);
    }

    #[test]
    fn aggregate_large_city_matches_direct_average() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 1031;
        let p = 11;
        let data: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = DMatrix::from_row_slice(n, p, &data);
        let panel = IndicatorPanel::new(
            vec![y.clone()],
            (0..p).map(|k| format!("v{k}")).collect(),
            vec!["big".into()],
        )
        .unwrap();
        let m = aggregate_panel(&panel);
        assert_eq!(m.nrows(), 1);
        for k in 0..p {
            let want: f64 = (0..n).map(|j| y[(j, k)]).sum::<f64>() / n as f64;
            assert!((m[(0, k)] - want).abs() < 1e-12);
        }
    }
}
