//! The sparse inverse problem: polar image-source grid, the dictionary
//! operator, LASSO, the LiDAR-prior constrained LASSO and the shared
//! horizontal-response estimator.

mod dictionary;
mod grid;
mod horizontal;
mod lasso;
mod prior;

pub use dictionary::{build_dictionary, Dictionary, Gram};
pub use grid::{ImageSourceMap, PolarGrid};
pub use horizontal::{
    estimate_horizontal_response, expected_sample, horizontal_weights, subtract_horizontal, HorizontalEstimate,
    SampleReference,
};
pub use lasso::{kkt_residual, solve_lasso, LassoOptions, LassoSolution, LeastSquares};
pub use prior::{
    build_prior_weight, solve_lasso_with_prior, solve_lasso_with_prior_from, Prior, PriorOptions, PriorSolution,
    WeightVector,
};
