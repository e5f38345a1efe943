use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, ShfmError};
use crate::kernels::{correlation_from_centroids, CarStructure, Geometry, MaternParams};
use crate::model::{aggregate_to_panel, HyperPriors, IndicatorPanel, ModelSpec, ParamState};

/// Immutable precomputed quantities shared by every sweep (and across
/// chains): the effective data panel, CAR structures, and hyperpriors.
#[derive(Debug, Clone)]
pub struct FitContext {
    pub spec: ModelSpec,
    pub hyper: HyperPriors,
    /// Effective panel: the input panel for tract-level variants, the
    /// city-means panel (one row per city) for aggregated ones.
    pub data: IndicatorPanel,
    pub geometry: Geometry,
    /// One CAR structure per city; present iff the variant uses the
    /// within-city field.
    pub cars: Option<Vec<CarStructure>>,
}

impl FitContext {
    pub fn new(
        panel: &IndicatorPanel,
        spec: &ModelSpec,
        hyper: &HyperPriors,
        geometry: &Geometry,
    ) -> Result<Self> {
        spec.validate()?;
        panel.validate()?;
        geometry.validate()?;
        panel.check_geometry(geometry)?;
        hyper.validate(panel.n_indicators(), panel.n_cities())?;
        let cars = if spec.uses_car() {
            let phi = spec.phi.expect("validated");
            let built: Result<Vec<_>> = geometry
                .adjacency
                .iter()
                .zip(&geometry.tract_centroids)
                .map(|(adj, tc)| CarStructure::build(adj, tc, phi))
                .collect();
            Some(built?)
        } else {
            None
        };
        let data = if spec.aggregated() {
            aggregate_to_panel(panel)
        } else {
            panel.clone()
        };
        Ok(Self {
            spec: spec.clone(),
            hyper: hyper.clone(),
            data,
            geometry: geometry.clone(),
            cars,
        })
    }

    pub fn n_cities(&self) -> usize {
        self.data.n_cities()
    }

    pub fn n_indicators(&self) -> usize {
        self.data.n_indicators()
    }

    /// Tract counts of the effective panel (all ones when aggregated).
    pub fn tract_counts(&self) -> Vec<usize> {
        self.data.tract_counts()
    }

    /// Builds the between-city correlation cache for the given state's
    /// Matérn range (identity for unstructured variants).
    pub fn correlation_cache(&self, state: &ParamState) -> Result<CorrelationCache> {
        if self.spec.uses_matern() {
            CorrelationCache::matern(
                &self.geometry.city_centroids,
                state.lambda1,
                self.spec.lambda2,
            )
        } else {
            Ok(CorrelationCache::identity(self.n_cities()))
        }
    }

    /// A state with this problem's shapes and neutral values.
    pub fn blank_state(&self) -> ParamState {
        ParamState::zeros(self.n_indicators(), &self.tract_counts())
    }
}

/// Between-city correlation matrix `H` with its Cholesky factor and
/// log-determinant, rebuilt only when the Matérn range moves.
#[derive(Debug, Clone)]
pub struct CorrelationCache {
    pub h: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub logdet: f64,
}

impl CorrelationCache {
    pub fn identity(n: usize) -> Self {
        let h = DMatrix::identity(n, n);
        let chol = Cholesky::new(h.clone()).expect("identity is positive definite");
        Self {
            h,
            chol,
            logdet: 0.0,
        }
    }

    pub fn matern(centroids: &[[f64; 2]], lambda1: f64, lambda2: f64) -> Result<Self> {
        let params = MaternParams::new(lambda1, lambda2)?;
        let h = correlation_from_centroids(centroids, &params)?;
        let chol = Cholesky::new(h.clone()).ok_or_else(|| {
            ShfmError::Numerical(format!(
                "between-city correlation not positive definite at lambda1 = {lambda1}"
            ))
        })?;
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { h, chol, logdet })
    }

    /// `H^{-1} x`.
    pub fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(x)
    }

    /// `x' H^{-1} y`.
    pub fn quad(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&self.chol.solve(y))
    }
}
