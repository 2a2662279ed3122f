//! Losses of the SSL and supervised objectives, their gradients, and the
//! supervised margin problem.

mod batch;
mod encoder;
mod linear;
mod losses;
mod margin;

pub use batch::{alignment_regularizer, infonce_batch, mean_cosine_distance, simsiam_batch, softmax_batch};
pub use encoder::LinearEncoder;
pub use linear::{
    draw_views, linear_ssl_gradient, linear_ssl_loss_expected, linear_ssl_loss_stochastic,
    linear_ssl_views_loss_grad, reconstruction_objective,
};
pub use losses::{
    cosine_distance, cosine_distance_grad, infonce_loss, simsiam_grad, simsiam_loss, DEFAULT_TEMPERATURE,
};
pub use margin::{
    feature_correlation, margin_problem_solve, min_norm_factorize, FactorPair, MarginConfig, MarginSolution,
};
