//! Global convergence of the parallel Tucker integrator on a 3-spin chain,
//! measured against exact diagonalization.

use dlra::models::{dense_hamiltonian, exact_evolve, ising_operator, IsingParams};
use dlra::tensor::qr_orthonormal;
use dlra::tucker::{parallel_tucker_step, rank_adaptive_tucker_step, TensorField, TuckerStepOptions, TuckerTensor};
use dlra::{C64, CMat, DenseTensor};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn all_up_tucker(d: usize, pad: usize) -> TuckerTensor {
    // |0...0> padded with orthonormal complement directions of zero weight
    let mut basis = CMat::zeros(2, pad.min(2));
    basis[(0, 0)] = c(1.0, 0.0);
    if pad >= 2 {
        basis[(1, 1)] = c(1.0, 0.0);
    }
    let (q, _) = qr_orthonormal(&basis);
    let ranks = vec![q.ncols(); d];
    let mut core = DenseTensor::zeros(&ranks);
    core.set(&vec![0; d], c(1.0, 0.0));
    TuckerTensor::new(core, vec![q; d]).unwrap()
}

fn slope(rows: &[(f64, f64)]) -> f64 {
    let n = rows.len() as f64;
    let (sx, sy, sxy, sxx) = rows.iter().fold((0.0, 0.0, 0.0, 0.0), |acc, &(h, e)| {
        let x = h.ln();
        let y = e.ln();
        (acc.0 + x, acc.1 + y, acc.2 + x * y, acc.3 + x * x)
    });
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[test]
fn three_spin_chain_first_order_slope() {
    let d = 3;
    let p = IsingParams::new(d);
    let field = TensorField::Sop(ising_operator(&p).scaled(c(0.0, -1.0)));
    let y0 = all_up_tucker(d, 2);
    let t_end = 1.0;
    let psi0 = y0.to_dense().unwrap();
    let exact = exact_evolve(&p, &psi0, t_end).unwrap();
    let opts = TuckerStepOptions {
        tolerance: 1e-8,
        substeps: 8,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for &h in &[0.1f64, 0.05, 0.025, 0.0125] {
        let steps = (t_end / h).round() as usize;
        let mut y = y0.clone();
        for k in 0..steps {
            let ta = k as f64 * h;
            let (y1, _) = parallel_tucker_step(&y, &field, ta, ta + h, &opts).unwrap();
            y = y1;
        }
        assert!(y.orthonormality_residual() <= 1e-10 * 8.0);
        let err = y.to_dense().unwrap().sub(&exact).unwrap().norm();
        rows.push((h, err));
    }
    let s = slope(&rows);
    assert!(s >= 0.8, "slope {s}, rows {rows:?}");
}

#[test]
fn three_spin_rank_adaptive_is_more_accurate() {
    let d = 3;
    let p = IsingParams::new(d);
    let field = TensorField::Sop(ising_operator(&p).scaled(c(0.0, -1.0)));
    let y0 = all_up_tucker(d, 2);
    let t_end = 0.5;
    let exact = exact_evolve(&p, &y0.to_dense().unwrap(), t_end).unwrap();
    let opts = TuckerStepOptions {
        tolerance: 1e-10,
        substeps: 8,
        ..Default::default()
    };
    let h = 0.05;
    let steps = (t_end / h).round() as usize;
    let (mut yp, mut yr) = (y0.clone(), y0.clone());
    for k in 0..steps {
        let ta = k as f64 * h;
        yp = parallel_tucker_step(&yp, &field, ta, ta + h, &opts).unwrap().0;
        yr = rank_adaptive_tucker_step(&yr, &field, ta, ta + h, &opts)
            .unwrap()
            .0;
    }
    let ep = yp.to_dense().unwrap().sub(&exact).unwrap().norm();
    let er = yr.to_dense().unwrap().sub(&exact).unwrap().norm();
    assert!(er <= ep, "parallel {ep}, rank-adaptive {er}");
}

#[test]
fn dense_hamiltonian_guard() {
    let p = IsingParams::new(15);
    let psi0 = DenseTensor::zeros(&[2; 15]);
    assert!(matches!(
        exact_evolve(&p, &psi0, 1.0),
        Err(dlra::Error::SizeGuard { .. })
    ));
    assert!(dense_hamiltonian(&IsingParams::new(4)).is_ok());
}
