//! Generalized relation discovery: cluster unlabeled relation instances into
//! pre-defined and novel relations, and describe each cluster with words.

pub mod collab;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod hungarian;
pub mod index_space;
pub mod math;
pub mod optim;
pub mod rng;
pub mod semantic;
pub mod semifactual;
pub mod synth;

pub use error::{Error, Result};
