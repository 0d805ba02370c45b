//! Preferential Bayesian optimization.
//!
//! A latent objective `g` is only observed through duels `[x, x']` whose
//! binary outcome says whether `x` beat `x'`. The engine models the duel
//! reward `f([x, x']) = g(x') - g(x)` with a Gaussian-process classifier,
//! estimates the soft-Copeland score of every candidate, and proposes new
//! duels with one of three acquisition policies (pure exploration, Copeland
//! expected improvement, dueling-Thompson sampling). Random and Sparring
//! baselines plus an experiment harness round out the crate.

pub mod acquisition;
pub mod baselines;
pub mod bench;
pub mod copeland;
pub mod error;
pub mod gp;
pub mod harness;
pub mod rng;
pub mod thompson;

pub use acquisition::{AcquisitionChoice, Policy};
pub use bench::{Benchmark, Domain, Duel, DuelOutcome, Point};
pub use copeland::{CopelandEstimate, LandmarkSet, PreferenceFunction};
pub use error::{PboError, Result};
pub use gp::{DuelDataset, KernelParams, LaplacePosterior, PreferencePrediction};
