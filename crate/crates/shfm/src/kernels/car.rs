use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, ShfmError};

/// Proper CAR structure for one city's tracts.
///
/// `W` carries inverse-distance weights `w_jl = 1/d_jl` for neighboring
/// tracts, `D = diag(row sums)`, `M = D - W` (a weighted graph Laplacian) and
/// `P = (I + phi M)^{-1}`. The spectral decomposition `M = V diag(evals) V'`
/// is retained: it yields `P`, log-determinants and quadratic forms of
/// `I + phi M` for any nonnegative `phi` at matrix-vector cost, and is what
/// the sampler uses for joint draws of the within-city field.
#[derive(Debug, Clone)]
pub struct CarStructure {
    pub w: DMatrix<f64>,
    pub d: DVector<f64>,
    pub m: DMatrix<f64>,
    pub phi: f64,
    pub p: DMatrix<f64>,
    /// Orthonormal eigenvectors of `M`.
    pub eigvecs: DMatrix<f64>,
    /// Eigenvalues of `M` (all `>= 0` up to roundoff).
    pub eigvals: DVector<f64>,
}

impl CarStructure {
    /// Builds the CAR structure from a symmetric edge list over `n` tracts.
    pub fn build(
        adjacency: &[(usize, usize)],
        tract_centroids: &[[f64; 2]],
        phi: f64,
    ) -> Result<Self> {
        let n = tract_centroids.len();
        if n == 0 {
            return Err(ShfmError::InvalidInput("no tracts".into()));
        }
        if !(phi >= 0.0) {
            return Err(ShfmError::InvalidInput(format!(
                "phi must be nonnegative, got {phi}"
            )));
        }
        let mut w = DMatrix::zeros(n, n);
        for &(a, b) in adjacency {
            if a == b || a >= n || b >= n {
                return Err(ShfmError::InvalidInput(format!(
                    "invalid adjacency pair ({a},{b}) for {n} tracts"
                )));
            }
            let dx = tract_centroids[a][0] - tract_centroids[b][0];
            let dy = tract_centroids[a][1] - tract_centroids[b][1];
            let dist = (dx * dx + dy * dy).sqrt();
            if dist == 0.0 {
                return Err(ShfmError::InvalidInput(format!(
                    "neighboring tracts {a} and {b} share a centroid"
                )));
            }
            w[(a, b)] = 1.0 / dist;
            w[(b, a)] = 1.0 / dist;
        }
        let d = DVector::from_iterator(n, w.row_iter().map(|r| r.sum()));
        let m = DMatrix::from_diagonal(&d) - &w;

        let eig = SymmetricEigen::new(m.clone());
        // M is a weighted Laplacian: clamp the tiny negative roundoff.
        let eigvals = eig.eigenvalues.map(|v| v.max(0.0));
        let eigvecs = eig.eigenvectors;
        for &ev in eigvals.iter() {
            if 1.0 + phi * ev <= 0.0 {
                return Err(ShfmError::Numerical(format!(
                    "I + phi*M not positive definite (eigenvalue {ev})"
                )));
            }
        }
        // P = V diag(1/(1 + phi ev)) V'
        let inv = DVector::from_iterator(n, eigvals.iter().map(|&ev| 1.0 / (1.0 + phi * ev)));
        let p = &eigvecs * DMatrix::from_diagonal(&inv) * eigvecs.transpose();

        Ok(Self {
            w,
            d,
            m,
            phi,
            p,
            eigvecs,
            eigvals,
        })
    }

    pub fn n_tracts(&self) -> usize {
        self.d.len()
    }

    /// `log det(I + phi M)` (so `log det P = -` this).
    pub fn logdet_prec_shape(&self) -> f64 {
        self.eigvals.iter().map(|&ev| (1.0 + self.phi * ev).ln()).sum()
    }

    /// Quadratic form `x' (I + phi M) x`.
    pub fn quad_form_prec(&self, x: &DVector<f64>) -> f64 {
        x.dot(x) + self.phi * x.dot(&(&self.m * x))
    }

    /// Diagonal entry `P_jj`, the marginal shape of tract `j`'s variance.
    pub fn p_diag(&self, j: usize) -> f64 {
        self.p[(j, j)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_zero_gives_identity() {
        let c = CarStructure::build(&[(0, 1)], &[[0.0, 0.0], [2.0, 0.0]], 0.0).unwrap();
        assert!((c.p.clone() - DMatrix::identity(2, 2)).abs().max() < 1e-14);
    }

    #[test]
    fn two_tract_analytic() {
        // d = 2 => w = 1/2; M = [[.5,-.5],[-.5,.5]]; phi = 1:
        // I + M = [[1.5,-.5],[-.5,1.5]], inverse = [[.75,.25],[.25,.75]].
        let c = CarStructure::build(&[(0, 1)], &[[0.0, 0.0], [2.0, 0.0]], 1.0).unwrap();
        assert!((c.w[(0, 1)] - 0.5).abs() < 1e-15);
        assert!((c.m[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((c.m[(0, 1)] + 0.5).abs() < 1e-15);
        let want = DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]);
        assert!((c.p.clone() - want).abs().max() < 1e-12);
    }

    #[test]
    fn inverse_relation_on_random_geometry() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 20;
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)])
            .collect();
        let mut adj = Vec::new();
        for j in 0..n {
            adj.push((j, (j + 1) % n));
            if rng.gen_bool(0.3) {
                adj.push((j, (j + 3) % n));
            }
        }
        let c = CarStructure::build(&adj, &pts, 5.0).unwrap();
        let prec = DMatrix::identity(n, n) + 5.0 * &c.m;
        let prod = &c.p * prec;
        assert!((prod - DMatrix::identity(n, n)).abs().max() < 1e-10);
    }

    #[test]
    fn row_sums_of_m_vanish() {
        let c = CarStructure::build(
            &[(0, 1), (1, 2)],
            &[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
            2.0,
        )
        .unwrap();
        for r in c.m.row_iter() {
            assert!(r.sum().abs() < 1e-14);
        }
    }

    #[test]
    fn isolated_tract_has_unit_variance_shape() {
        // A tract with no neighbors has a zero row in M, so P_jj = 1.
        let c = CarStructure::build(&[(0, 1)], &[[0.0, 0.0], [1.0, 0.0], [9.0, 9.0]], 5.0).unwrap();
        assert!((c.p_diag(2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_distance_neighbors_rejected() {
        let err = CarStructure::build(&[(0, 1)], &[[1.0, 1.0], [1.0, 1.0]], 1.0).unwrap_err();
        assert!(err.to_string().contains("share a centroid"));
    }

    #[test]
    fn logdet_and_quadform_match_dense() {
        let c = CarStructure::build(
            &[(0, 1), (1, 2), (0, 2)],
            &[[0.0, 0.0], [1.5, 0.0], [0.5, 1.0]],
            3.0,
        )
        .unwrap();
        let prec = DMatrix::identity(3, 3) + 3.0 * &c.m;
        let want_logdet = prec.clone().determinant().ln();
        assert!((c.logdet_prec_shape() - want_logdet).abs() < 1e-10);
        let x = DVector::from_vec(vec![0.3, -1.2, 0.7]);
        let want_q = x.dot(&(&prec * &x));
        assert!((c.quad_form_prec(&x) - want_q).abs() < 1e-10);
    }
}
