//! Coupled Brownian sampling on dyadic grids, censoring sets with exact
//! interval measure, and Monte Carlo experiments on the stability of local
//! maxima under resampling of the increments off a set.
//!
//! The crate is organised bottom-up:
//!
//! * [`stats_report`]: estimates, Wilson intervals, ladder trends, KS test.
//! * [`path_engine`]: grids, exact path sampling, bridge refinement, maxima.
//! * [`censor_sets`]: elementary sets, Cantor sets, subordinator ranges,
//!   complements, density certification.
//! * [`coupling_lab`]: the joint draw `(W, W', 1_E W, W_E)`, match
//!   estimators, time change, set classification.
//! * [`sign_field`]: signs on maxima, conditional copies, the second-moment
//!   identity and its exact random-walk oracle.
//! * [`spectral_pruning`]: random atom pruning on dyadic towers.
//!
//! Replica loops go through [`exec`], which uses rayon when the `parallel`
//! feature is on and a plain loop otherwise. Results do not depend on the
//! execution mode.

pub mod censor_sets;
pub mod coupling_lab;
pub mod exec;
pub mod path_engine;
pub mod rng;
pub mod sign_field;
pub mod spectral_pruning;
pub mod stats_report;
