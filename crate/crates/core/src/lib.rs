pub mod camv;
pub mod cfu;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod layers;
pub mod imageio;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod viewgen;

pub use error::{Error, Result};
