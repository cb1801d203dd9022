//! Contextual runtime monitors for ensembles of black-box controllers.
//!
//! A monitor holds one logistic model per controller that predicts the
//! probability of a specification violation given the current context. At
//! runtime it hands control to the controller with the lowest predicted
//! violation, or to a fail-safe when even that controller is not trusted
//! enough. Monitors are learned actively: each round the learner evaluates
//! the `(context, controller)` pair whose outcome it is most uncertain about.

pub mod cli;
pub mod domain;
pub mod envsim;
pub mod error;
pub mod eval;
pub mod learner;
pub mod logistic;
pub mod policy;
pub mod uncertainty;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use domain::{
    Choice, ContextSchema, ContextSpace, ContextVector, ControllerId, Dataset, MonitorModel, Observation,
    PolicyDecision,
};
pub use error::{Error, Result};

/// Independent random stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
