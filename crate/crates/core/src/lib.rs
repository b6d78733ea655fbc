//! Energy-based structured prediction with amortized inference networks.
//!
//! The crate is organized around a small reverse-mode autodiff tape
//! ([`tape`]), on top of which sit feature/inference networks ([`nets`]),
//! relaxed energy functions ([`energy`]), discretization operators
//! ([`relaxop`]), inference procedures ([`infer`]), margin-based joint
//! training ([`train`]), dataset utilities ([`data`]) and the experiment
//! harness ([`harness`]) that backs the CLI.

pub mod data;
pub mod energy;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod infer;
pub mod nets;
pub mod params;
pub mod relaxop;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::Params;
pub use tape::{Tape, Value};
pub use tensor::Tensor;
