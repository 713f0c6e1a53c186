//! Certified sampling-based verification of approximate Bayesian Nash
//! equilibria in sealed-bid auctions.
//!
//! The crate estimates an agent's utility loss from a dataset of observations,
//! valuations and bids by grid search, and adds high-probability error terms
//! (pseudo-dimension concentration, dispersion of discontinuities, Hoeffding and
//! total-variation terms) to obtain a certified bound.

pub mod bounds;
pub mod error;
pub mod estimator;
pub mod mechanisms;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod priors;
pub mod run;
pub mod strategies;

pub use error::{Error, Result};
pub use mechanisms::{MechanismSpec, Outcome};
pub use model::{Dataset, GameConfig, Grid, Partition, SampleRecord};
pub use numeric::Execution;
