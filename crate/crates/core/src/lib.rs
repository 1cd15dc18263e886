//! Max-min computation-efficiency resource allocation for wireless-powered
//! mobile edge computing.

pub mod binary;
pub mod convex;
pub mod error;
pub mod experiment;
pub mod fractional;
pub mod kkt;
pub mod lp;
pub mod model;
pub mod nomasca;
pub mod oracle;

pub use error::{Error, Result};
