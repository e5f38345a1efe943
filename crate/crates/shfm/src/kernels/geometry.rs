use nalgebra::DMatrix;

use crate::error::{Result, ShfmError};

/// Spatial layout of the study region: city centroids, per-city tract
/// centroids and the within-city neighbor relation over tracts.
///
/// Coordinates are projected planar units (e.g. km); all distances are
/// Euclidean.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub city_centroids: Vec<[f64; 2]>,
    /// One list of tract centroids per city.
    pub tract_centroids: Vec<Vec<[f64; 2]>>,
    /// One symmetric edge list per city; pairs are unordered tract indices.
    pub adjacency: Vec<Vec<(usize, usize)>>,
}

impl Geometry {
    /// Validates invariants: finite coordinates, in-range irreflexive
    /// adjacency, consistent per-city lengths.
    pub fn validate(&self) -> Result<()> {
        let n_cities = self.city_centroids.len();
        if n_cities == 0 {
            return Err(ShfmError::InvalidInput("no cities".into()));
        }
        if self.tract_centroids.len() != n_cities || self.adjacency.len() != n_cities {
            return Err(ShfmError::DimensionMismatch(format!(
                "{} cities but {} tract centroid lists and {} adjacency lists",
                n_cities,
                self.tract_centroids.len(),
                self.adjacency.len()
            )));
        }
        for (i, c) in self.city_centroids.iter().enumerate() {
            if !c[0].is_finite() || !c[1].is_finite() {
                return Err(ShfmError::InvalidInput(format!(
                    "non-finite centroid for city {i}"
                )));
            }
        }
        for (i, tracts) in self.tract_centroids.iter().enumerate() {
            if tracts.is_empty() {
                return Err(ShfmError::InvalidInput(format!("city {i} has no tracts")));
            }
            for (j, c) in tracts.iter().enumerate() {
                if !c[0].is_finite() || !c[1].is_finite() {
                    return Err(ShfmError::InvalidInput(format!(
                        "non-finite centroid for tract {j} of city {i}"
                    )));
                }
            }
            for &(a, b) in &self.adjacency[i] {
                if a == b {
                    return Err(ShfmError::InvalidInput(format!(
                        "self-neighbor {a} in city {i}"
                    )));
                }
                if a >= tracts.len() || b >= tracts.len() {
                    return Err(ShfmError::InvalidInput(format!(
                        "adjacency pair ({a},{b}) out of range for city {i} with {} tracts",
                        tracts.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_cities(&self) -> usize {
        self.city_centroids.len()
    }

    /// Tract counts per city.
    pub fn tract_counts(&self) -> Vec<usize> {
        self.tract_centroids.iter().map(|t| t.len()).collect()
    }

    /// Maximum pairwise distance between city centroids.
    pub fn max_city_distance(&self) -> f64 {
        let d = distance_matrix(&self.city_centroids).unwrap_or_else(|_| DMatrix::zeros(0, 0));
        d.iter().cloned().fold(0.0, f64::max)
    }
}

/// Pairwise Euclidean distances: entry `(i, j)` is `||s_i - s_j||`.
pub fn distance_matrix(points: &[[f64; 2]]) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(ShfmError::InvalidInput("no points".into()));
    }
    for (i, p) in points.iter().enumerate() {
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(ShfmError::InvalidInput(format!(
                "non-finite coordinate at point {i}"
            )));
        }
    }
    let n = points.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            let dist = (dx * dx + dy * dy).sqrt();
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn single_point() {
        let d = distance_matrix(&[[0.0, 0.0]]).unwrap();
        assert_eq!(d, DMatrix::from_element(1, 1, 0.0));
    }

    #[test]
    fn three_four_five() {
        let d = distance_matrix(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        assert_eq!(d[(0, 1)], 5.0);
        assert_eq!(d[(1, 0)], 5.0);
        assert_eq!(d[(0, 0)], 0.0);
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<[f64; 2]> = (0..10)
            .map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])
            .collect();
        let d = distance_matrix(&pts).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let want =
                    ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
                assert!((d[(i, j)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(distance_matrix(&[[f64::NAN, 0.0]]).is_err());
    }

    #[test]
    fn validates_adjacency() {
        let g = Geometry {
            city_centroids: vec![[0.0, 0.0]],
            tract_centroids: vec![vec![[0.0, 0.0], [1.0, 0.0]]],
            adjacency: vec![vec![(0, 1)]],
        };
        assert!(g.validate().is_ok());

        let bad = Geometry {
            adjacency: vec![vec![(0, 2)]],
            ..g.clone()
        };
        assert!(bad.validate().is_err());

        let refl = Geometry {
            adjacency: vec![vec![(1, 1)]],
            ..g
        };
        assert!(refl.validate().is_err());
    }
}
