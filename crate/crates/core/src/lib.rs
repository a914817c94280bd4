//! Quantum reservoir computing for chaotic systems: reservoir models,
//! closed-loop Jacobians and Lyapunov/CLV stability analysis.
//!
//! The crate is `no_std` with `alloc`.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod quantum;
pub mod reservoir;
pub mod rng;
pub mod stability;
pub mod tangent;

pub use error::{Error, Result};
