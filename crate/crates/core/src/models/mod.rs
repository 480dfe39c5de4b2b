//! Problem right-hand sides in sum-of-products form, together with their
//! reference oracles: a long-range interacting spin model with exact
//! diagonalization, and a 1D kinetic transport benchmark with uncertain
//! scattering solved by collocation.

pub mod ising;
pub mod planesource;

pub use ising::{
    all_up_state, dense_hamiltonian, exact_evolve, ising_field, ising_operator, IsingParams,
};
pub use planesource::{
    collocation_reference, gauss_legendre, planesource_field, planesource_initial,
    planesource_operator, planesource_tree, scalar_flux_stats, Boundary, PlanesourceParams,
};
