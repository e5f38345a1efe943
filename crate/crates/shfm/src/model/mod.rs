//! Model variants, the observational likelihood, data aggregation, and the
//! variance-decomposition / index-standardization formulas.

mod ops;
mod types;

pub use ops::{
    aggregate_panel, aggregate_to_panel, factor_variance, mean_field, observational_loglik,
    standardize_field, standardize_index, unexplained_fraction, unexplained_fraction_city_avg,
    variance_explained, variance_explained_city_avg, StandardizeMode,
};
pub use types::{HyperPriors, IndicatorPanel, ModelSpec, ModelVariant, ParamState};
