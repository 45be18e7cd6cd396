pub mod bitstream;
pub mod drl;
pub mod envs;
pub mod error;
pub mod harness;
pub mod ref_network;
pub mod sc_network;
pub mod sc_units;
pub mod seed;

pub use error::{Error, Result};
