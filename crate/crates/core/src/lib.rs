pub mod codec;
pub mod datapipe;
pub mod error;
pub mod flowmatch;
pub mod interleave;
pub mod numerics;
pub mod orchestrator;
pub mod rvq;
pub mod signal;

pub use error::{Error, Result};
