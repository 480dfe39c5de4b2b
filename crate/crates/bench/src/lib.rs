//! Shared fixtures for the benchmark suite.

use dlra::lowrank::LowRankMatrix;
use dlra::models::{all_up_state, ising_field, IsingParams};
use dlra::tensor::qr_orthonormal;
use dlra::ttn::{Tree, TreeTensorNetwork, TtnField};
use dlra::tucker::TuckerTensor;
use dlra::{C64, CMat, DenseTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    })
}

pub fn random_low_rank(seed: u64, m: usize, n: usize, r: usize) -> LowRankMatrix {
    let mut rng = rng(seed);
    let (u, _) = qr_orthonormal(&random_matrix(&mut rng, m, r));
    let (v, _) = qr_orthonormal(&random_matrix(&mut rng, n, r));
    let s = random_matrix(&mut rng, r, r);
    LowRankMatrix::new(u, s, v).unwrap()
}

pub fn random_tucker(seed: u64, dims: &[usize], ranks: &[usize]) -> TuckerTensor {
    let mut rng = rng(seed);
    let bases: Vec<CMat> = dims
        .iter()
        .zip(ranks)
        .map(|(&n, &r)| qr_orthonormal(&random_matrix(&mut rng, n, r)).0)
        .collect();
    let core = DenseTensor::from_fn(ranks, |_| {
        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    });
    TuckerTensor::new(core, bases).unwrap()
}

/// Spin-chain state and field used by the network benchmarks.
pub fn spin_fixture(sites: usize, rank: usize) -> (TreeTensorNetwork, TtnField) {
    let p = IsingParams::new(sites);
    let tree = Tree::balanced_binary(&vec![2; sites]);
    let y0 = all_up_state(&tree)
        .unwrap()
        .pad_ranks(rank, 1e-10)
        .unwrap()
        .orthonormalize()
        .unwrap();
    (y0, ising_field(&p))
}
