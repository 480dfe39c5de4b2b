//! Prolongation/restriction frames for one parent-child edge.
//!
//! For a connecting tensor `C` and child `i`, the frame is built from the QR
//! factorization `Mat_{i+1}(C)^T = Q R`. Prolongation embeds an element of the
//! child's reduced space isometrically into the parent's space; restriction is
//! its adjoint. Neither ever materializes the frame as one big matrix: both
//! work through the rank-space tensor `Ten_{i+1}(Q^T)` and the sibling
//! unfoldings.

use crate::tensor::{qr_orthonormal, Error, Result};
use crate::{CMat, DenseTensor};

/// Frame for the edge between a parent core and its `child_index`-th child.
#[derive(Debug, Clone)]
pub struct SubtreeFrame {
    /// Orthonormal factor of `Mat_{mode}(core)^T`; the effective frame rank is
    /// its column count (smaller than the child bond only in degenerate
    /// cases, where the reduced QR is used).
    pub q: CMat,
    /// Triangular factor; maps the parent data onto the reduced space.
    pub r: CMat,
    /// Tensor mode of the child inside the parent core (`child_index + 1`).
    pub mode: usize,
    /// Rank-space tensor `Ten_mode(Q^T)`.
    pub q_tensor: DenseTensor,
    /// Dense unfoldings of the parent's children; entry `mode` is unused for
    /// this frame, the others act as the sibling factors.
    pub child_unfoldings: Vec<CMat>,
}

impl SubtreeFrame {
    pub fn effective_rank(&self) -> usize {
        self.q.ncols()
    }
}

/// Build the frame for child `i` of a connecting tensor. `child_unfoldings`
/// holds the dense unfolding of every child subtree of the parent, in order.
pub fn subtree_frame(
    core: &DenseTensor,
    i: usize,
    child_unfoldings: &[CMat],
) -> Result<SubtreeFrame> {
    let m = core.order() - 1;
    if i >= m || child_unfoldings.len() != m {
        return Err(Error::InvalidArgument(format!(
            "frame child index {i} with {m} children and {} unfoldings",
            child_unfoldings.len()
        )));
    }
    let mode = i + 1;
    let mat_t = core.matricize(mode)?.transpose();
    let (q, r) = qr_orthonormal(&mat_t);
    let mut shape = core.shape().to_vec();
    shape[mode] = q.ncols();
    let q_tensor = DenseTensor::tensorize(&q.transpose(), mode, &shape)?;
    Ok(SubtreeFrame {
        q,
        r,
        mode,
        q_tensor,
        child_unfoldings: child_unfoldings.to_vec(),
    })
}

/// Prolongation: embed `y` (mode 0 = effective frame rank, remaining modes
/// carrying the child's physical dimension) into the parent space.
pub fn prolongate(y: &DenseTensor, frame: &SubtreeFrame) -> Result<DenseTensor> {
    let m0 = y.matricize(0)?;
    if m0.nrows() != frame.effective_rank() {
        return Err(Error::ShapeMismatch(format!(
            "prolongate: bond {} vs frame rank {}",
            m0.nrows(),
            frame.effective_rank()
        )));
    }
    // contract the child bond first (everything still rank-sized), then
    // expand the sibling modes
    let mut t = frame.q_tensor.mode_product(&m0.transpose(), frame.mode)?;
    for (j, u) in frame.child_unfoldings.iter().enumerate() {
        let mode = j + 1;
        if mode != frame.mode {
            t = t.mode_product(u, mode)?;
        }
    }
    Ok(t)
}

/// Restriction (adjoint of [`prolongate`]): project `z` from the parent space
/// onto the child's reduced space. Returns an order-2 tensor
/// `(effective rank, child physical dim)`; callers reshape deeper structure.
pub fn restrict(z: &DenseTensor, frame: &SubtreeFrame) -> Result<DenseTensor> {
    let mut t = z.clone();
    for (j, u) in frame.child_unfoldings.iter().enumerate() {
        let mode = j + 1;
        if mode != frame.mode {
            t = t.mode_product(&u.adjoint(), mode)?;
        }
    }
    let zi = t.matricize(frame.mode)?;
    let di = frame.q_tensor.matricize(frame.mode)?;
    let out = di.conjugate() * zi.transpose();
    Ok(DenseTensor::from_matrix(&out))
}

/// Reduced problem for one edge: the frame plus the reduced initial data in
/// effective-core form (the child's connecting tensor, or leaf basis
/// transpose, premultiplied on mode 0 by the frame's R factor).
#[derive(Debug, Clone)]
pub struct ReducedProblem {
    pub frame: SubtreeFrame,
    /// `Y_{child}^0` with mode 0 the (effective) child bond.
    pub initial: DenseTensor,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::inner;
    use crate::C64;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn seeded_tensor(shape: &[usize], seed: u64) -> DenseTensor {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(17);
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / (1u64 << 53) as f64 - 0.5
        };
        DenseTensor::from_fn(shape, |_| c(next(), next()))
    }

    fn seeded_orthonormal(rows: usize, cols: usize, seed: u64) -> CMat {
        let t = seeded_tensor(&[rows, cols], seed);
        let (q, _) = qr_orthonormal(&t.to_matrix().unwrap());
        q
    }

    fn test_frame(seed: u64) -> (DenseTensor, Vec<CMat>, SubtreeFrame) {
        // parent core (r_tau=2, r_1=2, r_2=3), children with dims 4 and 5
        let core = seeded_tensor(&[2, 2, 3], seed);
        let u1 = seeded_orthonormal(4, 2, seed + 1);
        let u2 = seeded_orthonormal(5, 3, seed + 2);
        let unf = vec![u1, u2];
        let frame = subtree_frame(&core, 0, &unf).unwrap();
        (core, unf, frame)
    }

    #[test]
    fn frame_isometry_on_dense_instantiation() {
        let (_, _, frame) = test_frame(5);
        // dense W = Mat_mode(Theta); V = W^H must have orthonormal columns
        let mut theta = frame.q_tensor.clone();
        for (j, u) in frame.child_unfoldings.iter().enumerate() {
            if j + 1 != frame.mode {
                theta = theta.mode_product(u, j + 1).unwrap();
            }
        }
        let w = theta.matricize(frame.mode).unwrap();
        let gram = &w * w.adjoint();
        let r = frame.effective_rank();
        assert!((gram - CMat::identity(r, r)).norm() < 1e-12);
    }

    #[test]
    fn orthonormal_mode_matricization_gives_identity_r() {
        // core whose mode-1 matricization transpose is already orthonormal
        let q = seeded_orthonormal(6, 2, 7);
        let core = DenseTensor::tensorize(&q.transpose(), 1, &[2, 2, 3]).unwrap();
        let u1 = seeded_orthonormal(4, 2, 8);
        let u2 = seeded_orthonormal(5, 3, 9);
        let frame = subtree_frame(&core, 0, &[u1, u2]).unwrap();
        assert!((&frame.q - &q).norm() < 1e-12);
        assert!((&frame.r - CMat::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn restrict_after_prolongate_is_identity() {
        let (_, _, frame) = test_frame(11);
        let y = seeded_tensor(&[frame.effective_rank(), 4], 13);
        let up = prolongate(&y, &frame).unwrap();
        assert_eq!(up.shape(), &[2, 4, 5]);
        let back = restrict(&up, &frame).unwrap();
        assert_eq!(back.shape(), y.shape());
        let diff = back.sub(&y).unwrap().norm();
        assert!(diff < 1e-12, "round trip residual {diff}");
    }

    #[test]
    fn prolongate_zero_is_zero() {
        let (_, _, frame) = test_frame(17);
        let y = DenseTensor::zeros(&[frame.effective_rank(), 4]);
        let up = prolongate(&y, &frame).unwrap();
        assert_eq!(up.norm(), 0.0);
        let down = restrict(&DenseTensor::zeros(&[2, 4, 5]), &frame).unwrap();
        assert_eq!(down.norm(), 0.0);
    }

    #[test]
    fn adjoint_identity() {
        let (_, _, frame) = test_frame(19);
        let y = seeded_tensor(&[frame.effective_rank(), 4], 23);
        let z = seeded_tensor(&[2, 4, 5], 29);
        let lhs = inner(&prolongate(&y, &frame).unwrap(), &z);
        let rhs = inner(&y, &restrict(&z, &frame).unwrap());
        assert!((lhs - rhs).norm() < 1e-12, "adjoint mismatch {lhs} vs {rhs}");
    }
}
