//! Dense complex tensors and the shared linear-algebra substrate.
//!
//! Tensors are stored flat with the first mode fastest (column-major in the
//! mode index), so an entry with multi-index `(i_0, ..., i_{d-1})` lives at
//! `i_0 + n_0*(i_1 + n_1*(i_2 + ...))`. Matricization along mode `k` keeps the
//! remaining modes in ascending order with the same first-fastest layout; this
//! fixes the co-mode ordering once for the whole crate and every integrator
//! relies on it.

use crate::{C64, CMat};
use nalgebra::linalg::{SVD, QR};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("mode {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("ODE solution diverged (non-finite values)")]
    Divergence,
    #[error("dense size guard exceeded: {size} > {limit}")]
    SizeGuard { size: usize, limit: usize },
    #[error("numerical factorization failed: {0}")]
    Factorization(String),
    #[error("rank growth insufficient: step rejected {0} times")]
    RetriesExhausted(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Dense tensor of complex scalars with first-mode-fastest linearization.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<C64>,
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        DenseTensor {
            shape: shape.to_vec(),
            data: vec![C64::new(0.0, 0.0); len],
        }
    }

    pub fn from_parts(shape: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} implies {} entries, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> C64) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for flat in 0..t.data.len() {
            t.data[flat] = f(&idx);
            for (k, i) in idx.iter_mut().enumerate() {
                *i += 1;
                if *i < shape[k] {
                    break;
                }
                *i = 0;
            }
        }
        t
    }

    /// Order-0 tensor holding a single scalar.
    pub fn scalar(value: C64) -> Self {
        DenseTensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut flat = 0;
        let mut stride = 1;
        for (k, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.shape[k]);
            flat += i * stride;
            stride *= self.shape[k];
        }
        flat
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        self.data[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: C64) {
        let flat = self.flat_index(idx);
        self.data[flat] = value;
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&self, c: C64) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Mode-`mode` matricization: rows index the chosen mode, columns run over
    /// the remaining modes in ascending order, first co-mode fastest.
    pub fn matricize(&self, mode: usize) -> Result<CMat> {
        let d = self.order();
        if mode >= d {
            return Err(Error::ModeOutOfRange { mode, order: d });
        }
        let rows = self.shape[mode];
        let below: usize = self.shape[..mode].iter().product();
        let above: usize = self.shape[mode + 1..].iter().product();
        let cols = below * above;
        let mut out = vec![C64::new(0.0, 0.0); rows * cols];
        for a in 0..above {
            for r in 0..rows {
                let src = below * (r + rows * a);
                for b in 0..below {
                    out[r + rows * (b + below * a)] = self.data[b + src];
                }
            }
        }
        Ok(CMat::from_vec(rows, cols, out))
    }

    /// Inverse of [`matricize`] for the same mode and co-mode ordering.
    pub fn tensorize(m: &CMat, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
        let d = shape.len();
        if mode >= d {
            return Err(Error::ModeOutOfRange { mode, order: d });
        }
        let rows = shape[mode];
        let below: usize = shape[..mode].iter().product();
        let above: usize = shape[mode + 1..].iter().product();
        if m.nrows() != rows || m.ncols() != below * above {
            return Err(Error::ShapeMismatch(format!(
                "tensorize: matrix {}x{} does not match shape {:?} at mode {}",
                m.nrows(),
                m.ncols(),
                shape,
                mode
            )));
        }
        let src = m.as_slice();
        let mut data = vec![C64::new(0.0, 0.0); rows * below * above];
        for a in 0..above {
            for r in 0..rows {
                let dst = below * (r + rows * a);
                for b in 0..below {
                    data[dst + b] = src[r + rows * (b + below * a)];
                }
            }
        }
        Ok(DenseTensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Mode product `T ×_mode M`: contracts `M` (p×n_mode) against mode
    /// `mode`, replacing that dimension by p.
    pub fn mode_product(&self, m: &CMat, mode: usize) -> Result<DenseTensor> {
        let d = self.order();
        if mode >= d {
            return Err(Error::ModeOutOfRange { mode, order: d });
        }
        if m.ncols() != self.shape[mode] {
            return Err(Error::ShapeMismatch(format!(
                "mode_product: matrix has {} cols, mode {} has dim {}",
                m.ncols(),
                mode,
                self.shape[mode]
            )));
        }
        let mat = self.matricize(mode)?;
        let prod = m * mat;
        let mut new_shape = self.shape.clone();
        new_shape[mode] = m.nrows();
        Self::tensorize(&prod, mode, &new_shape)
    }

    /// View an order-1 or order-2 tensor as a matrix (order-1 becomes a column).
    pub fn to_matrix(&self) -> Result<CMat> {
        match self.order() {
            1 => Ok(CMat::from_vec(self.shape[0], 1, self.data.clone())),
            2 => Ok(CMat::from_vec(self.shape[0], self.shape[1], self.data.clone())),
            d => Err(Error::ShapeMismatch(format!(
                "to_matrix: tensor has order {d}"
            ))),
        }
    }

    pub fn from_matrix(m: &CMat) -> DenseTensor {
        DenseTensor {
            shape: vec![m.nrows(), m.ncols()],
            data: m.as_slice().to_vec(),
        }
    }

    /// Zero-pad into a larger tensor, origin-aligned: entry `(i_0, ..)` of
    /// `self` lands at the same multi-index of the result.
    pub fn embedded(&self, shape: &[usize]) -> Result<DenseTensor> {
        if shape.len() != self.order()
            || shape.iter().zip(&self.shape).any(|(n, o)| n < o)
        {
            return Err(Error::ShapeMismatch(format!(
                "embed {:?} into {:?}",
                self.shape, shape
            )));
        }
        let mut out = DenseTensor::zeros(shape);
        if self.is_empty() {
            return Ok(out);
        }
        let mut idx = vec![0usize; self.order()];
        for flat in 0..self.data.len() {
            let dst = out.flat_index(&idx);
            out.data[dst] = self.data[flat];
            for (k, i) in idx.iter_mut().enumerate() {
                *i += 1;
                if *i < self.shape[k] {
                    break;
                }
                *i = 0;
            }
        }
        Ok(out)
    }

    /// Reinterpret the flat data under a new shape with the same length.
    pub fn reshape(&self, shape: &[usize]) -> Result<DenseTensor> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "reshape: {:?} -> {:?}",
                self.shape, shape
            )));
        }
        Ok(DenseTensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }
}

/// Frobenius inner product `<a, b> = sum conj(a_i) b_i`.
pub fn inner(a: &DenseTensor, b: &DenseTensor) -> C64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| x.conj() * y)
        .sum()
}

/// Reduced QR with a deterministic sign convention: the diagonal of R is real
/// and non-negative. Rank-deficient input is permitted; R may be singular.
pub fn qr_orthonormal(m: &CMat) -> (CMat, CMat) {
    let qr = QR::new(m.clone());
    let mut q = qr.q();
    let mut r = qr.r();
    let k = r.nrows().min(r.ncols());
    for j in 0..k {
        let d = r[(j, j)];
        if d.norm() > 0.0 {
            let phase = d / C64::new(d.norm(), 0.0);
            let conj = phase.conj();
            for c in 0..r.ncols() {
                r[(j, c)] *= conj;
            }
            for row in 0..q.nrows() {
                q[(row, j)] *= phase;
            }
        }
    }
    (q, r)
}

/// Truncated SVD: factors restricted to the kept rank.
#[derive(Debug, Clone)]
pub struct SvdTruncation {
    /// Left singular vectors, one column per kept direction.
    pub left: CMat,
    /// Kept singular values, non-increasing.
    pub singular_values: Vec<f64>,
    /// Right singular vectors, one column per kept direction.
    pub right: CMat,
    pub kept_rank: usize,
    /// Frobenius norm of the discarded singular-value tail.
    pub tail_norm: f64,
}

fn full_svd(m: &CMat) -> Result<(CMat, Vec<f64>, CMat)> {
    let svd = SVD::try_new(m.clone(), true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Factorization("SVD did not converge".into()))?;
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let sigma: Vec<f64> = svd.singular_values.as_slice().to_vec();
    // Stable descending sort; nalgebra already sorts but we pin determinism
    // and tie-breaking (earlier index wins) here.
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap().then(a.cmp(&b)));
    let u_sorted = CMat::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
    let v_sorted = CMat::from_fn(vt.ncols(), order.len(), |i, j| vt[(order[j], i)].conj());
    let s_sorted: Vec<f64> = order.iter().map(|&k| sigma[k]).collect();
    Ok((u_sorted, s_sorted, v_sorted))
}

/// Tail-norm rank selection: smallest r with `sqrt(sum_{k>r} s_k^2) <= tol`,
/// clamped to `[min_rank, max_rank]`.
pub fn select_rank(sigma: &[f64], tolerance: f64, max_rank: usize, min_rank: usize) -> usize {
    let n = sigma.len();
    let mut tail_sq = 0.0;
    let mut r = n;
    // walk from the back: find the smallest r whose tail is within tolerance
    for k in (0..n).rev() {
        let t_sq = tail_sq + sigma[k] * sigma[k];
        if t_sq.sqrt() <= tolerance {
            tail_sq = t_sq;
            r = k;
        } else {
            break;
        }
    }
    r.clamp(min_rank, max_rank)
}

/// SVD truncation with the tail-norm rule.
pub fn svd_truncate(
    m: &CMat,
    tolerance: f64,
    max_rank: usize,
    min_rank: usize,
) -> Result<SvdTruncation> {
    assert!(tolerance >= 0.0, "tolerance must be non-negative");
    assert!(
        (1..=max_rank).contains(&min_rank),
        "need 1 <= min_rank <= max_rank"
    );
    let (u, sigma, v) = full_svd(m)?;
    // min_rank cannot exceed the number of available singular directions
    let kept = select_rank(&sigma, tolerance, max_rank, min_rank).min(sigma.len());
    let tail_norm = sigma[kept..].iter().map(|s| s * s).sum::<f64>().sqrt();
    let left = u.columns(0, kept).into_owned();
    let right = v.columns(0, kept).into_owned();
    Ok(SvdTruncation {
        left,
        singular_values: sigma[..kept].to_vec(),
        right,
        kept_rank: kept,
        tail_norm,
    })
}

/// Prefix-preserving orthonormal basis union: returns `(U0, ~U1)` whose range
/// contains `range(U0) ∪ range(K1)`. The first `cols(U0)` columns equal `U0`
/// exactly; directions of `K1` already represented (numerically) in the
/// current basis are dropped rather than zero-padded.
pub fn orthonormal_basis_union(u0: &CMat, k1: &CMat) -> Result<CMat> {
    if u0.nrows() != k1.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "basis union: {} vs {} rows",
            u0.nrows(),
            k1.nrows()
        )));
    }
    let n = u0.nrows();
    let mut cols: Vec<CVecOwned> = Vec::with_capacity(u0.ncols() + k1.ncols());
    for j in 0..u0.ncols() {
        cols.push(u0.column(j).into_owned());
    }
    let base = u0.ncols();
    for j in 0..k1.ncols() {
        let orig = k1.column(j).into_owned();
        let scale = orig.norm();
        let mut v = orig;
        // two rounds of modified Gram-Schmidt for numerical orthogonality
        for _ in 0..2 {
            for q in &cols {
                let coeff: C64 = q.dotc(&v);
                v.axpy(-coeff, q, C64::new(1.0, 0.0));
            }
        }
        let nv = v.norm();
        if nv > 1e-10 * scale.max(f64::MIN_POSITIVE) && nv > 0.0 {
            cols.push(v / C64::new(nv, 0.0));
        }
    }
    let mut out = CMat::zeros(n, cols.len());
    for (j, col) in cols.iter().enumerate() {
        out.set_column(j, col);
    }
    // exact prefix preservation
    debug_assert!(out.ncols() >= base);
    Ok(out)
}

type CVecOwned = nalgebra::DVector<C64>;

/// State that can be advanced by the Runge–Kutta driver.
pub trait OdeState: Clone {
    fn add_scaled(&mut self, c: f64, other: &Self);
    fn all_finite(&self) -> bool;
}

impl OdeState for DenseTensor {
    fn add_scaled(&mut self, c: f64, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * C64::new(c, 0.0);
        }
    }
    fn all_finite(&self) -> bool {
        DenseTensor::all_finite(self)
    }
}

impl OdeState for CMat {
    fn add_scaled(&mut self, c: f64, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        let s = C64::new(c, 0.0);
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b * s;
        }
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Classical fourth-order Runge–Kutta with `substeps` uniform steps on
/// `[t0, t1]`. Returns `Error::Divergence` when the right-hand side or the
/// state stops being finite.
pub fn rk4_solve<T: OdeState>(
    f: impl Fn(f64, &T) -> T,
    y0: &T,
    t0: f64,
    t1: f64,
    substeps: usize,
) -> Result<T> {
    assert!(substeps >= 1, "substeps must be >= 1");
    let h = (t1 - t0) / substeps as f64;
    let mut y = y0.clone();
    let mut t = t0;
    for _ in 0..substeps {
        let k1 = f(t, &y);
        let mut y2 = y.clone();
        y2.add_scaled(h / 2.0, &k1);
        let k2 = f(t + h / 2.0, &y2);
        let mut y3 = y.clone();
        y3.add_scaled(h / 2.0, &k2);
        let k3 = f(t + h / 2.0, &y3);
        let mut y4 = y.clone();
        y4.add_scaled(h, &k3);
        let k4 = f(t + h, &y4);
        y.add_scaled(h / 6.0, &k1);
        y.add_scaled(h / 3.0, &k2);
        y.add_scaled(h / 3.0, &k3);
        y.add_scaled(h / 6.0, &k4);
        t += h;
        if !y.all_finite() {
            return Err(Error::Divergence);
        }
    }
    Ok(y)
}

/// Kronecker product with the second factor fastest, matching the crate's
/// first-mode-fastest tensor layout: `kron(a, b)` applies `b` to the fast
/// index when acting on flattened two-mode tensors `(fast, slow)` = `(b, a)`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = CMat::zeros(ra * rb, ca * cb);
    for ja in 0..ca {
        for ia in 0..ra {
            let f = a[(ia, ja)];
            for jb in 0..cb {
                for ib in 0..rb {
                    out[(ia * rb + ib, ja * cb + jb)] = f * b[(ib, jb)];
                }
            }
        }
    }
    out
}
