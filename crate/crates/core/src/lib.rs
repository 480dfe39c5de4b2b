//! Parallel basis-update & Galerkin (BUG) integrators for dynamical low-rank
//! approximation of matrix, Tucker-tensor and tree-tensor-network ODEs.
//!
//! - [`tensor`]: dense complex tensors, matricization, QR/SVD helpers and the
//!   Runge–Kutta driver shared by every flow.
//! - [`lowrank`]: the modified parallel integrator and the rank-adaptive
//!   baseline for matrix problems `dA/dt = F(A)`.
//! - [`tucker`]: the same pair of integrators for Tucker-format tensors.
//! - [`ttn`]: the tree tensor network data model, orthonormalization,
//!   prolongation/restriction frames, operator reductions and snapshots.
//! - [`ttn_integrator`]: network time steps (all subflows concurrent), rank
//!   truncation and step rejection.
//! - [`models`]: spin-chain and kinetic-transport right-hand sides in
//!   sum-of-products form, with their reference oracles.

pub mod lowrank;
pub mod models;
pub mod tensor;
pub mod tucker;
pub mod ttn;
pub mod ttn_integrator;

pub use lowrank::LowRankMatrix;
pub use tensor::{DenseTensor, Error, Result};
pub use ttn::{SumOfProductsOperator, Tree, TreeTensorNetwork, TtnField};
pub use ttn_integrator::{IntegratorMode, StepConfig};
pub use tucker::TuckerTensor;

/// Complex double-precision scalar used throughout the crate.
pub type C64 = num_complex::Complex64;
/// Dynamically sized complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dynamically sized complex column vector.
pub type CVec = nalgebra::DVector<C64>;
