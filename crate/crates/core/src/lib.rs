pub mod base_ranker;
pub mod checkpoint;
pub mod data;
pub mod dte;
pub mod error;
pub mod eval;
pub mod idm;
pub mod model;
pub mod numerics;
pub mod pipeline;

pub use error::{RaiseError, Result};
