//! Long-range interacting Ising chain: Schrödinger dynamics
//! `i ∂_t ψ = H ψ` with
//! `H = Ω Σ_k σ_x^(k) + Δ Σ_k n^(k) + V Σ_{k<h} |k-h|^{-α} n^(k) n^(h)`,
//! where `n` projects onto the excited state. The exact-diagonalization
//! propagator serves as the convergence oracle.

use crate::tensor::{Error, Result};
use crate::ttn::{SumOfProductsOperator, Tree, TreeTensorNetwork, TtnField};
use crate::{C64, CMat, DenseTensor};
use nalgebra::linalg::SymmetricEigen;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct IsingParams {
    /// Number of spins d (leaf ids 0..d-1).
    pub sites: usize,
    /// Rabi frequency Ω.
    pub omega: f64,
    /// Detuning Δ.
    pub delta: f64,
    /// Interaction strength V.
    pub coupling: f64,
    /// Interaction decay exponent α ≥ 0 (α = 0 is all-to-all).
    pub alpha: f64,
}

impl IsingParams {
    pub fn new(sites: usize) -> Self {
        IsingParams {
            sites,
            omega: 1.0,
            delta: 1.0,
            coupling: 1.0,
            alpha: 1.0,
        }
    }
}

pub fn pauli_x() -> CMat {
    CMat::from_vec(
        2,
        2,
        vec![
            C64::new(0.0, 0.0),
            C64::new(1.0, 0.0),
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
        ],
    )
}

/// Projector onto the excited state.
pub fn excited_projector() -> CMat {
    CMat::from_vec(
        2,
        2,
        vec![
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
        ],
    )
}

/// The Hamiltonian as a sum of Kronecker products: d single-site σ_x terms,
/// d single-site n terms, and d(d-1)/2 two-site n⊗n terms with coefficients
/// `V/|k-h|^α` per unordered pair.
pub fn ising_operator(p: &IsingParams) -> SumOfProductsOperator {
    assert!(p.sites >= 2, "need at least two spins");
    assert!(p.alpha >= 0.0);
    let dims: BTreeMap<usize, usize> = (0..p.sites).map(|k| (k, 2)).collect();
    let mut op = SumOfProductsOperator::new(dims);
    let sx = pauli_x();
    let n = excited_projector();
    for k in 0..p.sites {
        op.add_term(C64::new(p.omega, 0.0), BTreeMap::from([(k, sx.clone())]))
            .expect("dims fixed");
        op.add_term(C64::new(p.delta, 0.0), BTreeMap::from([(k, n.clone())]))
            .expect("dims fixed");
    }
    for k in 0..p.sites {
        for h in k + 1..p.sites {
            let coeff = p.coupling / ((h - k) as f64).powf(p.alpha);
            op.add_term(
                C64::new(coeff, 0.0),
                BTreeMap::from([(k, n.clone()), (h, n.clone())]),
            )
            .expect("dims fixed");
        }
    }
    op
}

/// Schrödinger right-hand side `F(ψ) = -i H ψ` as a network field.
pub fn ising_field(p: &IsingParams) -> TtnField {
    TtnField::Sop(ising_operator(p).scaled(C64::new(0.0, -1.0)))
}

/// Dense `2^d × 2^d` Hamiltonian matrix (spin 0 is the fastest index).
pub fn dense_hamiltonian(p: &IsingParams) -> Result<CMat> {
    let order: Vec<usize> = (0..p.sites).collect();
    ising_operator(p).dense_matrix(&order)
}

/// Exact propagation `ψ(T) = exp(-i H T) ψ0` by Hermitian eigendecomposition.
/// Guarded to `2^d <= 2^14`.
pub fn exact_evolve(p: &IsingParams, psi0: &DenseTensor, t: f64) -> Result<DenseTensor> {
    let dim = 1usize << p.sites;
    if dim > 1 << 14 {
        return Err(Error::SizeGuard {
            size: dim,
            limit: 1 << 14,
        });
    }
    if psi0.len() != dim {
        return Err(Error::ShapeMismatch(format!(
            "state has {} entries for {} spins",
            psi0.len(),
            p.sites
        )));
    }
    let h = dense_hamiltonian(p)?;
    // symmetrize against roundoff before the Hermitian eigendecomposition
    let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    let v = &eig.eigenvectors;
    let psi_vec = CMat::from_vec(dim, 1, psi0.data().to_vec());
    let coeff = v.adjoint() * psi_vec;
    let mut evolved = coeff;
    for k in 0..dim {
        let phase = C64::new(0.0, -eig.eigenvalues[k] * t).exp();
        evolved[(k, 0)] *= phase;
    }
    let out = v * evolved;
    DenseTensor::from_parts(psi0.shape().to_vec(), out.as_slice().to_vec())
}

/// Rank-1 orthonormal network representing the all-spins-up product state
/// over a tree with 2-dimensional leaves.
pub fn all_up_state(tree: &Tree) -> Result<TreeTensorNetwork> {
    for dim in tree.leaf_dims() {
        if dim != 2 {
            return Err(Error::InvalidArgument(
                "all-up state needs 2-dimensional leaves".into(),
            ));
        }
    }
    let up = {
        let mut m = CMat::zeros(2, 1);
        m[(0, 0)] = C64::new(1.0, 0.0);
        m
    };
    TreeTensorNetwork::rank_one(tree, &|_| up.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::kron;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn term_count_and_pair_coefficient() {
        let p = IsingParams::new(2);
        let op = ising_operator(&p);
        assert_eq!(op.num_terms(), 5);
        // the pair term coefficient is V/|1-2|^alpha = 1
        let pair = op
            .terms()
            .iter()
            .find(|t| t.factors.len() == 2)
            .expect("pair term");
        assert_eq!(pair.coefficient, c(1.0, 0.0));
    }

    #[test]
    fn alpha_zero_is_all_to_all() {
        let p = IsingParams {
            alpha: 0.0,
            coupling: 0.7,
            ..IsingParams::new(5)
        };
        let op = ising_operator(&p);
        for t in op.terms().iter().filter(|t| t.factors.len() == 2) {
            assert_eq!(t.coefficient, c(0.7, 0.0));
        }
        assert_eq!(
            op.terms().iter().filter(|t| t.factors.len() == 2).count(),
            10
        );
    }

    #[test]
    fn dense_matches_hand_assembled_kronecker() {
        let p = IsingParams::new(2);
        let h = dense_hamiltonian(&p).unwrap();
        let id = CMat::identity(2, 2);
        let sx = pauli_x();
        let n = excited_projector();
        // spin 0 fastest: sigma^{(0)} = kron(I, sx)
        let expect = kron(&id, &sx)
            + kron(&sx, &id)
            + kron(&id, &n)
            + kron(&n, &id)
            + kron(&n, &n);
        assert!((h - expect).norm() < 1e-14);
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        let p = IsingParams::new(4);
        let h = dense_hamiltonian(&p).unwrap();
        assert!((h.adjoint() - &h).norm() < 1e-13);
    }

    #[test]
    fn exact_evolve_identity_at_t0_and_unitary() {
        let p = IsingParams::new(3);
        let psi0 = DenseTensor::from_fn(&[2, 2, 2], |idx| {
            c(
                (idx[0] + 2 * idx[1]) as f64 * 0.3 + 0.1,
                idx[2] as f64 - 0.4,
            )
        });
        let at0 = exact_evolve(&p, &psi0, 0.0).unwrap();
        assert!(at0.sub(&psi0).unwrap().norm() < 1e-12);
        let at_t = exact_evolve(&p, &psi0, 1.7).unwrap();
        assert!((at_t.norm() - psi0.norm()).abs() < 1e-12);
    }

    #[test]
    fn diagonal_hamiltonian_gives_pure_phases() {
        // Ω = 0 leaves H diagonal in the computational basis
        let p = IsingParams {
            omega: 0.0,
            ..IsingParams::new(2)
        };
        let mut psi0 = DenseTensor::zeros(&[2, 2]);
        psi0.set(&[0, 0], c(1.0, 0.0)); // both excited
        let t = 0.9;
        let out = exact_evolve(&p, &psi0, t).unwrap();
        // energy of |ee>: 2Δ + V = 3
        let expect = c(0.0, -3.0 * t).exp();
        assert!((out.get(&[0, 0]) - expect).norm() < 1e-12);
    }

    #[test]
    fn all_up_state_is_unit_product_state() {
        let tree = Tree::balanced_binary(&[2; 5]);
        let y = all_up_state(&tree).unwrap();
        let x = y.contract_full().unwrap();
        assert!((x.get(&[0, 0, 0, 0, 0]) - c(1.0, 0.0)).norm() < 1e-14);
        assert!((x.norm() - 1.0).abs() < 1e-14);
        // padded version represents the same tensor
        let padded = y.pad_ranks(2, 0.0).unwrap();
        let xp = padded.contract_full().unwrap();
        assert!(xp.sub(&x).unwrap().norm() < 1e-13);
    }

    #[test]
    fn field_matches_dense_schrodinger_rhs() {
        let p = IsingParams::new(3);
        let field = ising_field(&p);
        let psi = DenseTensor::from_fn(&[2, 2, 2], |idx| {
            c(idx[0] as f64 - 0.2, (idx[1] * idx[2]) as f64 * 0.5)
        });
        let f = field.apply_dense(&psi, &[0, 1, 2]).unwrap();
        let h = dense_hamiltonian(&p).unwrap();
        let v = CMat::from_vec(8, 1, psi.data().to_vec());
        let expect = h * v * c(0.0, -1.0);
        for (i, z) in f.data().iter().enumerate() {
            assert!((expect[(i, 0)] - z).norm() < 1e-13);
        }
    }
}
