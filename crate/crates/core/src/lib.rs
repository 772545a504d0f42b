//! Shared-nothing parallelization of stateful network functions via RSS.

pub mod error;
pub mod packet;
pub mod model;
pub mod rss;
pub mod corpus;
pub mod sharding;
pub mod keygen;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};
