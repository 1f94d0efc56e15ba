//! Phase-field brittle fracture on linear tetrahedral meshes.
//!
//! The core is `no_std` with `alloc`; the `parallel` feature pulls in `std`
//! and rayon for element-level parallelism.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod assembly;
pub mod kernels;
pub mod linsolve;
pub mod materials;
pub mod mesh;
pub mod postprocess;
pub mod scenarios;
pub mod solvers;
pub mod sparse;
