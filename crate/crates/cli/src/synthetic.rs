//! Seeded random problem generators for the synthetic models. ChaCha-based so
//! the same seed reproduces the same problem on every platform.

use dlra::lowrank::LowRankMatrix;
use dlra::tensor::qr_orthonormal;
use dlra::tucker::TuckerTensor;
use dlra::{C64, CMat, DenseTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(stream))
}

pub fn random_matrix(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    })
}

pub fn random_tensor(rng: &mut ChaCha12Rng, shape: &[usize]) -> DenseTensor {
    DenseTensor::from_fn(shape, |_| {
        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    })
}

pub fn random_low_rank(seed: u64, rows: usize, cols: usize, rank: usize) -> LowRankMatrix {
    let mut rng = rng_for(seed, 1);
    let (u, _) = qr_orthonormal(&random_matrix(&mut rng, rows, rank));
    let (v, _) = qr_orthonormal(&random_matrix(&mut rng, cols, rank));
    let s = random_matrix(&mut rng, rank, rank);
    LowRankMatrix::new(u, s, v).expect("consistent dims")
}

pub fn random_tucker(seed: u64, dims: &[usize], ranks: &[usize]) -> TuckerTensor {
    let mut rng = rng_for(seed, 2);
    let bases: Vec<CMat> = dims
        .iter()
        .zip(ranks)
        .map(|(&n, &r)| qr_orthonormal(&random_matrix(&mut rng, n, r.min(n))).0)
        .collect();
    let shape: Vec<usize> = bases.iter().map(|b| b.ncols()).collect();
    TuckerTensor::new(random_tensor(&mut rng, &shape), bases).expect("consistent dims")
}

/// Generator matrix for the linear synthetic field `F(A) = M A`, scaled to a
/// moderate spectral size.
pub fn linear_generator(seed: u64, rows: usize) -> CMat {
    let mut rng = rng_for(seed, 3);
    random_matrix(&mut rng, rows, rows) * C64::new(2.0 / (rows as f64).sqrt(), 0.0)
}

/// Per-mode generator matrices for the synthetic Tucker field
/// `F(Y) = Σ_i Y ×_i M_i`.
pub fn mode_generators(seed: u64, dims: &[usize]) -> Vec<CMat> {
    let mut rng = rng_for(seed, 4);
    dims.iter()
        .map(|&n| random_matrix(&mut rng, n, n) * C64::new(1.0 / (n as f64).sqrt(), 0.0))
        .collect()
}
