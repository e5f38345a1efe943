use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShfmError};
use crate::kernels::Geometry;

/// Multi-indicator panel: one `n_i x p` matrix per city (rows are census
/// tracts, columns are indicators).
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorPanel {
    pub cities: Vec<DMatrix<f64>>,
    pub indicator_names: Vec<String>,
    pub city_names: Vec<String>,
}

impl IndicatorPanel {
    pub fn new(
        cities: Vec<DMatrix<f64>>,
        indicator_names: Vec<String>,
        city_names: Vec<String>,
    ) -> Result<Self> {
        let panel = Self {
            cities,
            indicator_names,
            city_names,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cities.is_empty() {
            return Err(ShfmError::InvalidInput("panel has no cities".into()));
        }
        let p = self.cities[0].ncols();
        if self.indicator_names.len() != p {
            return Err(ShfmError::DimensionMismatch(format!(
                "{} indicator names for {} columns",
                self.indicator_names.len(),
                p
            )));
        }
        if self.city_names.len() != self.cities.len() {
            return Err(ShfmError::DimensionMismatch(format!(
                "{} city names for {} cities",
                self.city_names.len(),
                self.cities.len()
            )));
        }
        for (i, y) in self.cities.iter().enumerate() {
            if y.ncols() != p {
                return Err(ShfmError::DimensionMismatch(format!(
                    "city {i} has {} indicator columns, expected {p}",
                    y.ncols()
                )));
            }
            if y.nrows() == 0 {
                return Err(ShfmError::InvalidInput(format!("city {i} has no tracts")));
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(ShfmError::InvalidInput(format!(
                    "city {i} contains a non-finite value"
                )));
            }
        }
        Ok(())
    }

    pub fn n_cities(&self) -> usize {
        self.cities.len()
    }

    pub fn n_indicators(&self) -> usize {
        self.cities[0].ncols()
    }

    pub fn tract_counts(&self) -> Vec<usize> {
        self.cities.iter().map(|y| y.nrows()).collect()
    }

    pub fn total_tracts(&self) -> usize {
        self.cities.iter().map(|y| y.nrows()).sum()
    }

    /// Checks that the panel and geometry agree on city count and tract
    /// counts.
    pub fn check_geometry(&self, geometry: &Geometry) -> Result<()> {
        if geometry.n_cities() != self.n_cities() {
            return Err(ShfmError::DimensionMismatch(format!(
                "panel has {} cities, geometry has {}",
                self.n_cities(),
                geometry.n_cities()
            )));
        }
        for (i, (y, t)) in self
            .cities
            .iter()
            .zip(geometry.tract_centroids.iter())
            .enumerate()
        {
            if y.nrows() != t.len() {
                return Err(ShfmError::DimensionMismatch(format!(
                    "city {i}: {} panel rows vs {} tract centroids",
                    y.nrows(),
                    t.len()
                )));
            }
        }
        Ok(())
    }
}

/// Which model is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// Spatially hierarchical factor model: CAR within cities, Matérn
    /// between cities.
    Shfm,
    /// Unstructured hierarchical factor model with the city factor pinned
    /// at zero.
    UhfmTheta0,
    /// Unstructured hierarchical factor model.
    Uhfm,
    /// Aggregated spatial factor model (city means, Matérn between cities).
    Asfm,
    /// Simple aggregated factor model (city means, independent cities).
    Afm,
}

impl ModelVariant {
    pub fn name(&self) -> &'static str {
        match self {
            ModelVariant::Shfm => "SHFM",
            ModelVariant::UhfmTheta0 => "UHFM(theta=0)",
            ModelVariant::Uhfm => "UHFM",
            ModelVariant::Asfm => "ASFM",
            ModelVariant::Afm => "AFM",
        }
    }
}

/// Model variant plus its fixed settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: ModelVariant,
    /// CAR strength; present iff `variant == Shfm`.
    pub phi: Option<f64>,
    /// Matérn smoothness, fixed (not sampled).
    pub lambda2: f64,
    /// Index of the indicator whose loading is pinned to 1.
    pub anchor: usize,
}

impl ModelSpec {
    pub fn new(variant: ModelVariant, phi: Option<f64>) -> Result<Self> {
        let spec = Self {
            variant,
            phi,
            lambda2: 1.0,
            anchor: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn shfm(phi: f64) -> Result<Self> {
        Self::new(ModelVariant::Shfm, Some(phi))
    }

    pub fn validate(&self) -> Result<()> {
        match (self.variant, self.phi) {
            (ModelVariant::Shfm, None) => {
                return Err(ShfmError::InvalidInput("SHFM requires phi".into()))
            }
            (ModelVariant::Shfm, Some(phi)) if !(phi >= 0.0) => {
                return Err(ShfmError::InvalidInput(format!(
                    "phi must be nonnegative, got {phi}"
                )))
            }
            (ModelVariant::Shfm, _) => {}
            (_, Some(_)) => {
                return Err(ShfmError::InvalidInput(format!(
                    "phi is only meaningful for SHFM, not {}",
                    self.variant.name()
                )))
            }
            _ => {}
        }
        if !(self.lambda2 > 0.0) {
            return Err(ShfmError::InvalidInput("lambda2 must be positive".into()));
        }
        Ok(())
    }

    /// Does the variant carry the within-city CAR field?
    pub fn uses_car(&self) -> bool {
        self.variant == ModelVariant::Shfm
    }

    /// Does the variant carry city factors `theta` (and `theta0`, `delta2`)?
    pub fn uses_theta(&self) -> bool {
        self.variant != ModelVariant::UhfmTheta0
    }

    /// Is the between-city correlation a Matérn (so `lambda1` is sampled)?
    pub fn uses_matern(&self) -> bool {
        matches!(self.variant, ModelVariant::Shfm | ModelVariant::Asfm)
    }

    /// Does the variant operate on city-level means only?
    pub fn aggregated(&self) -> bool {
        matches!(self.variant, ModelVariant::Asfm | ModelVariant::Afm)
    }

    /// Does the variant carry tract factors `f` with idiosyncratic variance
    /// `omega` (aggregated variants identify `f` with `theta`)?
    pub fn uses_tract_factors(&self) -> bool {
        !self.aggregated()
    }
}

/// One complete draw of every unknown in the posterior.
///
/// Noise terms are integrated out; fields that a variant does not use stay
/// at fixed neutral values (`f_tilde = 0`, `tau2 = 0`, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    /// Indicator means, length p.
    pub mu: DVector<f64>,
    /// Factor loadings, length p; the anchor entry is pinned to 1.
    pub beta: DVector<f64>,
    /// Idiosyncratic indicator variances, length p.
    pub sigma2: DVector<f64>,
    /// Tract factors, one vector per city. Aggregated variants keep a
    /// single entry per city equal to `theta_i`.
    pub f: Vec<DVector<f64>>,
    /// Within-city spatial factors; identically zero unless SHFM.
    pub f_tilde: Vec<DVector<f64>>,
    /// City factors, length I.
    pub theta: DVector<f64>,
    /// Baseline city factor.
    pub theta0: f64,
    /// Between-city variance.
    pub delta2: f64,
    /// Within-city CAR scales, length I; zero unless SHFM.
    pub tau2: DVector<f64>,
    /// Idiosyncratic tract-factor variances, length I.
    pub omega: DVector<f64>,
    /// Matérn range.
    pub lambda1: f64,
}

impl ParamState {
    /// A neutral state with the right shapes: unit variances, zero
    /// locations, unit loadings.
    pub fn zeros(p: usize, tract_counts: &[usize]) -> Self {
        let n_cities = tract_counts.len();
        Self {
            mu: DVector::zeros(p),
            beta: DVector::from_element(p, 1.0),
            sigma2: DVector::from_element(p, 1.0),
            f: tract_counts.iter().map(|&n| DVector::zeros(n)).collect(),
            f_tilde: tract_counts.iter().map(|&n| DVector::zeros(n)).collect(),
            theta: DVector::zeros(n_cities),
            theta0: 0.0,
            delta2: 1.0,
            tau2: DVector::zeros(n_cities),
            omega: DVector::from_element(n_cities, 1.0),
            lambda1: 1.0,
        }
    }

    pub fn n_cities(&self) -> usize {
        self.theta.len()
    }

    /// Checks the structural invariants for the given spec.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let p = self.mu.len();
        if self.beta.len() != p || self.sigma2.len() != p {
            return Err(ShfmError::DimensionMismatch(
                "mu/beta/sigma2 length mismatch".into(),
            ));
        }
        if spec.anchor >= p {
            return Err(ShfmError::InvalidInput(format!(
                "anchor column {} out of range for p = {p}",
                spec.anchor
            )));
        }
        if self.beta[spec.anchor] != 1.0 {
            return Err(ShfmError::InvalidInput(format!(
                "anchor loading must be 1, got {}",
                self.beta[spec.anchor]
            )));
        }
        if self.sigma2.iter().any(|&v| !(v > 0.0)) {
            return Err(ShfmError::InvalidInput("nonpositive sigma2".into()));
        }
        if spec.uses_tract_factors() && self.omega.iter().any(|&v| !(v > 0.0)) {
            return Err(ShfmError::InvalidInput("nonpositive omega".into()));
        }
        if spec.uses_car() && self.tau2.iter().any(|&v| !(v > 0.0)) {
            return Err(ShfmError::InvalidInput("nonpositive tau2".into()));
        }
        if spec.uses_theta() && !(self.delta2 > 0.0) {
            return Err(ShfmError::InvalidInput("nonpositive delta2".into()));
        }
        if spec.uses_matern() && !(self.lambda1 > 0.0) {
            return Err(ShfmError::InvalidInput("nonpositive lambda1".into()));
        }
        if self.f.len() != self.theta.len() || self.f_tilde.len() != self.theta.len() {
            return Err(ShfmError::DimensionMismatch(
                "per-city field count mismatch".into(),
            ));
        }
        Ok(())
    }
}

/// Hyperprior settings. Defaults are vague but proper; the Matérn range
/// scale `h` is tied to the maximum distance between city centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPriors {
    /// Gaussian prior mean for `mu` (per indicator).
    pub mu0: Vec<f64>,
    /// Common prior variance for each component of `mu`.
    pub c_mu: f64,
    /// Gaussian prior mean for each free loading.
    pub beta0: f64,
    /// Prior variance for each free loading.
    pub c0: f64,
    /// Inverse-gamma (shape, scale) for each `sigma2_k`.
    pub sigma2_ig: Vec<(f64, f64)>,
    /// Inverse-gamma (shape, scale) for each `omega_i`.
    pub omega_ig: Vec<(f64, f64)>,
    /// Inverse-gamma (shape, scale) for each `tau2_i`.
    pub tau2_ig: Vec<(f64, f64)>,
    /// Gaussian prior mean for `theta0`.
    pub t0: f64,
    /// Prior variance for `theta0`.
    pub v0: f64,
    /// Inverse-gamma scale `h` for `lambda1` (shape fixed at 2),
    /// `h = d_max / (-2 log 0.05)`.
    pub lambda1_scale: f64,
}

impl HyperPriors {
    /// Default vague hyperpriors for a problem of size `(p, I)` with maximum
    /// city-centroid distance `d_max`.
    pub fn vague(p: usize, n_cities: usize, d_max: f64) -> Self {
        let ig = (2.1, 1.1);
        Self {
            mu0: vec![0.0; p],
            c_mu: 100.0,
            beta0: 0.0,
            c0: 100.0,
            sigma2_ig: vec![ig; p],
            omega_ig: vec![ig; n_cities],
            tau2_ig: vec![ig; n_cities],
            t0: 0.0,
            v0: 100.0,
            lambda1_scale: lambda1_scale_from_dmax(d_max),
        }
    }

    pub fn validate(&self, p: usize, n_cities: usize) -> Result<()> {
        if self.mu0.len() != p || self.sigma2_ig.len() != p {
            return Err(ShfmError::DimensionMismatch(
                "hyperprior length does not match p".into(),
            ));
        }
        if self.omega_ig.len() != n_cities || self.tau2_ig.len() != n_cities {
            return Err(ShfmError::DimensionMismatch(
                "hyperprior length does not match city count".into(),
            ));
        }
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.c_mu) || !pos(self.c0) || !pos(self.v0) || !pos(self.lambda1_scale) {
            return Err(ShfmError::InvalidInput(
                "prior variances and scales must be positive".into(),
            ));
        }
        for &(a, b) in self
            .sigma2_ig
            .iter()
            .chain(&self.omega_ig)
            .chain(&self.tau2_ig)
        {
            if !pos(a) || !pos(b) {
                return Err(ShfmError::InvalidInput(
                    "inverse-gamma shapes and scales must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// `h = d_max / (-2 log 0.05)`: the prior median-ish range puts correlation
/// 0.05 at the maximum observed distance.
pub fn lambda1_scale_from_dmax(d_max: f64) -> f64 {
    let denom = -2.0 * 0.05_f64.ln();
    if d_max > 0.0 {
        d_max / denom
    } else {
        1.0
    }
}
