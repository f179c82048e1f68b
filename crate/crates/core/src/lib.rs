//! Loss-landscape toolkit: jump-and-retrain sampling around trained optima,
//! PHATE embeddings of the sampled parameters, and sublevel-set persistent
//! homology of the resulting kNN graphs.

pub mod error;
pub mod io;
pub mod numkit;
pub mod phate;
pub mod sampler;
pub mod studies;
pub mod topo;
pub mod trainer;

pub use error::{Error, Result};
