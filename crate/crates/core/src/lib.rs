//! Block classical shadows.
//!
//! Randomized measurements with independent Cliffords on contiguous k-qubit
//! blocks, the estimators built on them, exact variance analytics, greedy
//! derandomization, Pauli-noise mitigation and shadow kernels for kernel PCA.

pub mod analytics;
pub mod clifford;
pub mod derandomize;
pub mod error;
pub mod io;
pub mod ml;
pub mod noise;
pub mod pauli;
pub mod rng;
pub mod shadow;
pub mod state;
pub mod stats;

pub use error::{Error, Result};
pub use pauli::{BlockLayout, ObservableSum, PauliString};
