//! Parallel basis-update & Galerkin integrator for Tucker-format tensor ODEs,
//! plus the sequential rank-adaptive baseline.
//!
//! One step runs d basis flows (one per mode) and the core Galerkin flow
//! concurrently from time-t0 data, augments each mode basis with the new
//! directions, embeds the first-order coupling blocks into an enlarged core
//! with structured zeros, and truncates every mode by SVD.

use crate::tensor::{
    orthonormal_basis_union, qr_orthonormal, rk4_solve, svd_truncate, Error,
    OdeState, Result,
};
use crate::ttn::SumOfProductsOperator;
use crate::{C64, CMat, DenseTensor};
use std::time::Instant;

/// Tucker factorization `Y = C ×_0 U_0 ⋯ ×_{d-1} U_{d-1}` with orthonormal
/// mode bases.
#[derive(Debug, Clone)]
pub struct TuckerTensor {
    pub core: DenseTensor,
    pub bases: Vec<CMat>,
}

impl TuckerTensor {
    pub fn new(core: DenseTensor, bases: Vec<CMat>) -> Result<Self> {
        if core.order() != bases.len() {
            return Err(Error::ShapeMismatch(format!(
                "core order {} with {} bases",
                core.order(),
                bases.len()
            )));
        }
        for (i, u) in bases.iter().enumerate() {
            if u.ncols() != core.shape()[i] {
                return Err(Error::ShapeMismatch(format!(
                    "mode {i}: basis {}x{} vs core dim {}",
                    u.nrows(),
                    u.ncols(),
                    core.shape()[i]
                )));
            }
        }
        Ok(TuckerTensor { core, bases })
    }

    pub fn order(&self) -> usize {
        self.bases.len()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.core.shape().to_vec()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.bases.iter().map(|u| u.nrows()).collect()
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        let mut t = self.core.clone();
        for (i, u) in self.bases.iter().enumerate() {
            t = t.mode_product(u, i)?;
        }
        Ok(t)
    }

    /// Maximum orthonormality residual over the mode bases.
    pub fn orthonormality_residual(&self) -> f64 {
        self.bases
            .iter()
            .map(|u| {
                let r = u.ncols();
                (u.adjoint() * u - CMat::identity(r, r)).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// Right-hand side of the Tucker tensor ODE; modes are leaves `0..d-1` of the
/// structured operator.
pub enum TensorField {
    Sop(SumOfProductsOperator),
    Dense(Box<dyn Fn(&DenseTensor) -> DenseTensor + Send + Sync>),
}

/// Guard for dense fallback evaluations.
const DENSE_FALLBACK_GUARD: usize = 1 << 24;

impl TensorField {
    pub fn apply_dense(&self, y: &DenseTensor) -> Result<DenseTensor> {
        if y.len() > DENSE_FALLBACK_GUARD {
            return Err(Error::SizeGuard {
                size: y.len(),
                limit: DENSE_FALLBACK_GUARD,
            });
        }
        match self {
            TensorField::Sop(op) => {
                let order: Vec<usize> = (0..y.order()).collect();
                op.apply_dense(y, &order)
            }
            TensorField::Dense(f) => Ok(f(y)),
        }
    }
}

/// Mode environments `E_q = U^* B_q U` for one basis pair (bra, ket).
fn mode_environments(
    op: &SumOfProductsOperator,
    mode: usize,
    bra: &CMat,
    ket: &CMat,
) -> Vec<CMat> {
    (0..op.num_terms())
        .map(|q| match op.factor(q, mode) {
            Some(b) => bra.adjoint() * b * ket,
            None => bra.adjoint() * ket,
        })
        .collect()
}

/// Shared per-step configuration.
#[derive(Debug, Clone)]
pub struct TuckerStepOptions {
    pub tolerance: f64,
    pub substeps: usize,
    pub min_rank: usize,
    pub max_rank: usize,
}

impl Default for TuckerStepOptions {
    fn default() -> Self {
        TuckerStepOptions {
            tolerance: 1e-8,
            substeps: 1,
            min_rank: 1,
            max_rank: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TuckerStepReport {
    pub old_ranks: Vec<usize>,
    pub augmented_ranks: Vec<usize>,
    pub truncated_ranks: Vec<usize>,
    pub basis_flow_seconds: f64,
    pub core_flow_seconds: f64,
    pub augment_seconds: f64,
    pub truncate_seconds: f64,
}

/// Basis flow for one mode: factorize `Mat_i(C^0)^T = Q_i S_i^T`, integrate
/// the `n_i × r_i` flow `dK/dt = F_i(K V_i^{0,*}) V_i^0`, `K(t0) = U_i^0 S_i^0`,
/// and return `(K(t1), Û_i)` with `Û_i` the prefix-preserving union of the old
/// basis and the new directions.
pub fn ki_step(
    y0: &TuckerTensor,
    field: &TensorField,
    i: usize,
    t0: f64,
    t1: f64,
    substeps: usize,
) -> Result<(CMat, CMat)> {
    let d = y0.order();
    if i >= d {
        return Err(Error::ModeOutOfRange { mode: i, order: d });
    }
    let mat_t = y0.core.matricize(i)?.transpose();
    let (q, r) = qr_orthonormal(&mat_t);
    // S_i^T = R, so K(t0) = U_i^0 S_i^0 = U_i^0 R^T
    let k0 = &y0.bases[i] * r.transpose();
    let mut dshape = y0.core.shape().to_vec();
    dshape[i] = q.ncols();
    let d_tensor = DenseTensor::tensorize(&q.transpose(), i, &dshape)?;

    let k1 = match field {
        TensorField::Sop(op) => {
            // dK/dt = sum_q c_q B_q^(i) K Omega_q with
            // Omega_q = Mat_i(D ×_{j≠i} E_qj) Mat_i(D)^*
            let di = d_tensor.matricize(i)?;
            let mut omegas = Vec::with_capacity(op.num_terms());
            for q_idx in 0..op.num_terms() {
                let mut dp = d_tensor.clone();
                for j in 0..d {
                    if j != i {
                        let e = match op.factor(q_idx, j) {
                            Some(b) => y0.bases[j].adjoint() * b * &y0.bases[j],
                            None => {
                                let r = y0.bases[j].ncols();
                                CMat::identity(r, r)
                            }
                        };
                        dp = dp.mode_product(&e, j)?;
                    }
                }
                omegas.push(dp.matricize(i)? * di.adjoint());
            }
            let rhs = |_: f64, k: &CMat| {
                let mut out = CMat::zeros(k.nrows(), k.ncols());
                for (q_idx, term) in op.terms().iter().enumerate() {
                    let kk = match op.factor(q_idx, i) {
                        Some(b) => b * k * &omegas[q_idx],
                        None => k * &omegas[q_idx],
                    };
                    out += kk * term.coefficient;
                }
                out
            };
            rk4_solve(rhs, &k0, t0, t1, substeps)?
        }
        TensorField::Dense(_) => {
            let di = d_tensor.matricize(i)?;
            let rhs = |_: f64, k: &CMat| -> CMat {
                let mut y = d_tensor.mode_product(k, i).expect("expand");
                for j in 0..d {
                    if j != i {
                        y = y.mode_product(&y0.bases[j], j).expect("expand");
                    }
                }
                let f = field.apply_dense(&y).expect("field eval");
                let mut g = f;
                for j in 0..d {
                    if j != i {
                        g = g
                            .mode_product(&y0.bases[j].adjoint(), j)
                            .expect("project");
                    }
                }
                g.matricize(i).expect("matricize") * di.adjoint()
            };
            rk4_solve(rhs, &k0, t0, t1, substeps)?
        }
    };
    let u_hat = orthonormal_basis_union(&y0.bases[i], &k1)?;
    Ok((k1, u_hat))
}

/// Core Galerkin flow at the old ranks:
/// `dC/dt = F(C ×_l U_l^0) ×_j U_j^{0,*}`, `C(t0) = C^0`.
pub fn c_step(
    y0: &TuckerTensor,
    field: &TensorField,
    t0: f64,
    t1: f64,
    substeps: usize,
) -> Result<DenseTensor> {
    galerkin_core_flow(&y0.core, &y0.bases, field, t0, t1, substeps)
}

fn galerkin_core_flow(
    c0: &DenseTensor,
    bases: &[CMat],
    field: &TensorField,
    t0: f64,
    t1: f64,
    substeps: usize,
) -> Result<DenseTensor> {
    match field {
        TensorField::Sop(op) => {
            let envs: Vec<Vec<CMat>> = (0..bases.len())
                .map(|j| mode_environments(op, j, &bases[j], &bases[j]))
                .collect();
            let rhs = |_: f64, cten: &DenseTensor| {
                let mut out = DenseTensor::zeros(cten.shape());
                for (q_idx, term) in op.terms().iter().enumerate() {
                    let mut t = cten.clone();
                    for (j, env) in envs.iter().enumerate() {
                        t = t.mode_product(&env[q_idx], j).expect("env product");
                    }
                    out = out.add(&t.scale(term.coefficient)).expect("accumulate");
                }
                out
            };
            rk4_solve(rhs, c0, t0, t1, substeps)
        }
        TensorField::Dense(_) => {
            let rhs = |_: f64, cten: &DenseTensor| {
                let mut y = cten.clone();
                for (j, u) in bases.iter().enumerate() {
                    y = y.mode_product(u, j).expect("expand");
                }
                let mut f = field.apply_dense(&y).expect("field eval");
                for (j, u) in bases.iter().enumerate() {
                    f = f.mode_product(&u.adjoint(), j).expect("project");
                }
                f
            };
            rk4_solve(rhs, c0, t0, t1, substeps)
        }
    }
}

/// First-order coupling block for mode `i`:
/// `~C_i = h · F(Y^0) ×_{j≠i} U_j^{0,*} ×_i ~U_i^{1,*}`, where `~U_i^1` holds
/// the new columns of the augmented basis.
pub fn coupling_core(
    y0: &TuckerTensor,
    field: &TensorField,
    i: usize,
    u_tilde: &CMat,
    h: f64,
) -> Result<DenseTensor> {
    let d = y0.order();
    let mut shape = y0.ranks();
    shape[i] = u_tilde.ncols();
    if u_tilde.ncols() == 0 || h == 0.0 {
        return Ok(DenseTensor::zeros(&shape));
    }
    match field {
        TensorField::Sop(op) => {
            let mut out = DenseTensor::zeros(&shape);
            for (q_idx, term) in op.terms().iter().enumerate() {
                let mut t = y0.core.clone();
                for j in 0..d {
                    let env = if j == i {
                        match op.factor(q_idx, j) {
                            Some(b) => u_tilde.adjoint() * b * &y0.bases[j],
                            None => u_tilde.adjoint() * &y0.bases[j],
                        }
                    } else {
                        match op.factor(q_idx, j) {
                            Some(b) => y0.bases[j].adjoint() * b * &y0.bases[j],
                            None => {
                                let r = y0.bases[j].ncols();
                                CMat::identity(r, r)
                            }
                        }
                    };
                    t = t.mode_product(&env, j)?;
                }
                out = out.add(&t.scale(term.coefficient * C64::new(h, 0.0)))?;
            }
            Ok(out)
        }
        TensorField::Dense(_) => {
            let f = field.apply_dense(&y0.to_dense()?)?;
            let mut t = f;
            for j in 0..d {
                if j == i {
                    t = t.mode_product(&u_tilde.adjoint(), j)?;
                } else {
                    t = t.mode_product(&y0.bases[j].adjoint(), j)?;
                }
            }
            Ok(t.scale(C64::new(h, 0.0)))
        }
    }
}

/// Augmented core: old-index block equal to `C(t1)`, the mode-i new-index
/// block equal to `~C_i`, zeros wherever two or more modes carry new indices.
/// Implemented by the sequential per-mode stacking loop.
pub fn assemble_augmented_core(
    c1: &DenseTensor,
    blocks: &[DenseTensor],
) -> Result<DenseTensor> {
    let d = c1.order();
    if blocks.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "{} coupling blocks for order-{d} core",
            blocks.len()
        )));
    }
    let mut out = c1.clone();
    for (i, b) in blocks.iter().enumerate() {
        let new_i = b.shape()[i];
        if new_i == 0 {
            continue;
        }
        for (j, (&bs, &os)) in b.shape().iter().zip(c1.shape()).enumerate() {
            if j != i && bs != os {
                return Err(Error::ShapeMismatch(format!(
                    "block {i} mode {j}: {bs} vs {os}"
                )));
            }
        }
        // zero-extend the block into modes already augmented, then stack
        let mut target = out.shape().to_vec();
        target[i] = new_i;
        let bpad = b.embedded(&target)?;
        let top = out.matricize(i)?;
        let bot = bpad.matricize(i)?;
        let mut stacked = CMat::zeros(top.nrows() + bot.nrows(), top.ncols());
        stacked.view_mut((0, 0), top.shape()).copy_from(&top);
        stacked
            .view_mut((top.nrows(), 0), bot.shape())
            .copy_from(&bot);
        let mut new_shape = out.shape().to_vec();
        new_shape[i] += new_i;
        out = DenseTensor::tensorize(&stacked, i, &new_shape)?;
    }
    Ok(out)
}

/// Per-mode SVD truncation of the augmented core with the tail-norm rule.
pub fn truncate_tucker(
    c_hat: &DenseTensor,
    u_hats: &[CMat],
    opts: &TuckerStepOptions,
) -> Result<TuckerTensor> {
    let d = c_hat.order();
    let mut core = c_hat.clone();
    let mut bases = Vec::with_capacity(d);
    let mut projectors = Vec::with_capacity(d);
    for i in 0..d {
        let t = svd_truncate(&c_hat.matricize(i)?, opts.tolerance, opts.max_rank, opts.min_rank)?;
        projectors.push(t.left);
    }
    for (i, p) in projectors.iter().enumerate() {
        core = core.mode_product(&p.adjoint(), i)?;
        bases.push(&u_hats[i] * p);
    }
    TuckerTensor::new(core, bases)
}

enum TuckerStepKind {
    Parallel,
    RankAdaptive,
}

/// One step of the parallel Tucker integrator: all mode flows and the core
/// flow run concurrently from time-t0 data.
pub fn parallel_tucker_step(
    y0: &TuckerTensor,
    field: &TensorField,
    t0: f64,
    t1: f64,
    opts: &TuckerStepOptions,
) -> Result<(TuckerTensor, TuckerStepReport)> {
    tucker_step(y0, field, t0, t1, opts, TuckerStepKind::Parallel)
}

/// Rank-adaptive baseline: same mode flows, then a Galerkin core update in the
/// augmented bases (dimension up to 2r per mode) from the zero-padded core.
pub fn rank_adaptive_tucker_step(
    y0: &TuckerTensor,
    field: &TensorField,
    t0: f64,
    t1: f64,
    opts: &TuckerStepOptions,
) -> Result<(TuckerTensor, TuckerStepReport)> {
    tucker_step(y0, field, t0, t1, opts, TuckerStepKind::RankAdaptive)
}

fn tucker_step(
    y0: &TuckerTensor,
    field: &TensorField,
    t0: f64,
    t1: f64,
    opts: &TuckerStepOptions,
    kind: TuckerStepKind,
) -> Result<(TuckerTensor, TuckerStepReport)> {
    let d = y0.order();
    let h = t1 - t0;
    let mut report = TuckerStepReport {
        old_ranks: y0.ranks(),
        ..Default::default()
    };

    // mode flows and (for the parallel variant) the core flow, all in parallel
    let t_basis = Instant::now();
    let mut flows: Vec<Option<Result<(CMat, CMat)>>> = (0..d).map(|_| None).collect();
    let mut core_out: Option<Result<DenseTensor>> = None;
    let run_core = matches!(kind, TuckerStepKind::Parallel);
    rayon::scope(|s| {
        for (i, slot) in flows.iter_mut().enumerate() {
            s.spawn(move |_| {
                *slot = Some(ki_step(y0, field, i, t0, t1, opts.substeps));
            });
        }
        if run_core {
            s.spawn(|_| {
                core_out = Some(c_step(y0, field, t0, t1, opts.substeps));
            });
        }
    });
    report.basis_flow_seconds = t_basis.elapsed().as_secs_f64();

    let mut u_hats = Vec::with_capacity(d);
    let mut u_tildes = Vec::with_capacity(d);
    for flow in flows {
        let (_, u_hat) = flow.expect("spawned")?;
        let r = y0.ranks();
        let _ = r;
        u_tildes.push(
            u_hat
                .columns(y0.core.shape()[u_hats.len()], u_hat.ncols() - y0.core.shape()[u_hats.len()])
                .into_owned(),
        );
        u_hats.push(u_hat);
    }
    report.augmented_ranks = u_hats.iter().map(|u| u.ncols()).collect();

    let t_aug = Instant::now();
    let c_hat = match kind {
        TuckerStepKind::Parallel => {
            let c1 = core_out.expect("core flow spawned")?;
            let blocks: Result<Vec<DenseTensor>> = (0..d)
                .map(|i| coupling_core(y0, field, i, &u_tildes[i], h))
                .collect();
            assemble_augmented_core(&c1, &blocks?)?
        }
        TuckerStepKind::RankAdaptive => {
            let t_core = Instant::now();
            let hat_shape: Vec<usize> = u_hats.iter().map(|u| u.ncols()).collect();
            let c0_pad = y0.core.embedded(&hat_shape)?;
            let out = galerkin_core_flow(&c0_pad, &u_hats, field, t0, t1, opts.substeps)?;
            report.core_flow_seconds = t_core.elapsed().as_secs_f64();
            out
        }
    };
    report.augment_seconds = t_aug.elapsed().as_secs_f64();

    let t_trunc = Instant::now();
    let y1 = truncate_tucker(&c_hat, &u_hats, opts)?;
    report.truncate_seconds = t_trunc.elapsed().as_secs_f64();
    report.truncated_ranks = y1.ranks();
    Ok((y1, report))
}

impl OdeState for Vec<DenseTensor> {
    fn add_scaled(&mut self, c: f64, other: &Self) {
        for (a, b) in self.iter_mut().zip(other) {
            a.add_scaled(c, b);
        }
    }
    fn all_finite(&self) -> bool {
        self.iter().all(DenseTensor::all_finite)
    }
}
