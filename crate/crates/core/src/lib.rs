//! Spiked tensor-free models with general entrywise observation channels:
//! Fisher-score preprocessing, spectral estimators, approximate message
//! passing and their asymptotic predictions.

pub mod amp;
pub mod asymptotics;
pub mod channels;
pub mod ensemble;
pub mod error;
pub mod priors;
pub mod quadrature;
pub mod rng;
pub mod spectral;

pub use channels::{Channel, ChannelSpec, FisherInfo};
pub use error::{Error, Result};
pub use priors::{DiscretePrior, PriorSpec};
