pub mod corpus;
pub mod decode;
pub mod error;
pub mod grpo;
pub mod metrics;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod rvq;

pub use error::{DimoError, Result};
