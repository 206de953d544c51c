pub mod bench;
pub mod chain;
pub mod distributions;
pub mod error;
pub mod gibbs;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod rng;
pub mod special;
pub mod stiefel;
pub mod synth;

pub use error::{Error, Result};
pub use rng::ChainRng;
