//! Covariance structures: the proper CAR precision within cities and the
//! Matérn correlation between cities, plus the distance utilities and special
//! functions they need.

pub mod bessel;
mod car;
mod geometry;
mod matern;

pub use car::CarStructure;
pub use geometry::{distance_matrix, Geometry};
pub use matern::{
    build_between_city_correlation, correlation_from_centroids, matern_correlation, MaternParams,
};
