//! Recurrent embedding dialogue policy with LSTM classifier baselines, a
//! simulated user for slot-filling tasks, and the experiment harness.

pub mod baseline;
pub mod bundle;
pub mod corpus;
mod error;
pub mod featurize;
pub mod harness;
mod nn;
pub mod redp;
pub mod simuser;
pub mod train;

pub use error::{Error, Result};
pub use nn::{argmax, chrono_biases};
