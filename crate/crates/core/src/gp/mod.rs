//! Gaussian-process classification over the concatenated duel space.

mod dataset;
mod hyper;
mod kernel;
mod laplace;
mod quadrature;

pub use dataset::DuelDataset;
pub use hyper::{
    log_marginal_and_grad, optimize_hyperparams, HyperBounds, HyperFit, HyperStatus,
    ModelRefitter, REFIT_EVERY, REFIT_EVERY_UNTIL,
};
pub use kernel::{kernel_eval, KernelParams, DEFAULT_JITTER};
pub use laplace::{
    fit_laplace, fit_laplace_warm, fit_preference_model, predict_latent, predict_preference,
    LaplacePosterior, PreferencePrediction, BatchPredictor, MAX_NEWTON_ITERS, MODE_TOL,
};
pub use quadrature::{gauss_hermite, sigmoid_mean, sigmoid_moments};
