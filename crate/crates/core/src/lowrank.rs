//! Modified parallel basis-update & Galerkin integrator for matrix ODEs
//! `dA/dt = F(A)`, plus the sequential rank-adaptive baseline.
//!
//! One step advances a factorization `Y = U S V^*` by integrating the K-, L-
//! and S-step ODEs from time-t0 data only (so they may run concurrently),
//! augmenting the bases with the new K/L directions, assembling the augmented
//! coefficient matrix from first-order coupling blocks, and truncating by SVD.

use crate::tensor::{orthonormal_basis_union, rk4_solve, svd_truncate, Error, Result};
use crate::{C64, CMat};
use std::time::Instant;

/// Rank-r factorization `Y = U S V^*` with orthonormal `U`, `V`.
#[derive(Debug, Clone)]
pub struct LowRankMatrix {
    pub u: CMat,
    pub s: CMat,
    pub v: CMat,
}

impl LowRankMatrix {
    pub fn new(u: CMat, s: CMat, v: CMat) -> Result<Self> {
        if u.ncols() != s.nrows() || s.ncols() != v.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "low-rank factors: U {}x{}, S {}x{}, V {}x{}",
                u.nrows(),
                u.ncols(),
                s.nrows(),
                s.ncols(),
                v.nrows(),
                v.ncols()
            )));
        }
        Ok(LowRankMatrix { u, s, v })
    }

    pub fn rank(&self) -> usize {
        self.s.nrows()
    }

    pub fn to_dense(&self) -> CMat {
        &self.u * &self.s * self.v.adjoint()
    }

    /// Truncated SVD of a dense matrix.
    pub fn from_dense(a: &CMat, tolerance: f64, max_rank: usize) -> Result<Self> {
        let t = svd_truncate(a, tolerance, max_rank, 1)?;
        let mut s = CMat::zeros(t.kept_rank, t.kept_rank);
        for (k, &sv) in t.singular_values.iter().enumerate() {
            s[(k, k)] = C64::new(sv, 0.0);
        }
        LowRankMatrix::new(t.left, s, t.right)
    }

    /// `(‖U*U - I‖_F, ‖V*V - I‖_F)`.
    pub fn orthonormality_residuals(&self) -> (f64, f64) {
        let r = self.rank();
        let id = CMat::identity(r, r);
        (
            (self.u.adjoint() * &self.u - &id).norm(),
            (self.v.adjoint() * &self.v - &id).norm(),
        )
    }
}

/// Right-hand side of the matrix ODE. The projected evaluations have dense
/// defaults; structured fields override them to avoid m×n intermediates.
pub trait MatrixField: Sync {
    fn eval(&self, a: &CMat) -> CMat;

    /// `F(K V0^*) V0` for the K-step.
    fn eval_k_rhs(&self, k: &CMat, v0: &CMat) -> CMat {
        self.eval(&(k * v0.adjoint())) * v0
    }

    /// `F(U0 L^*)^* U0` for the L-step.
    fn eval_l_rhs(&self, l: &CMat, u0: &CMat) -> CMat {
        self.eval(&(u0 * l.adjoint())).adjoint() * u0
    }

    /// `U0^* F(U0 S V0^*) V0` for the Galerkin S-step.
    fn eval_s_rhs(&self, s: &CMat, u0: &CMat, v0: &CMat) -> CMat {
        u0.adjoint() * self.eval(&(u0 * s * v0.adjoint())) * v0
    }
}

/// Field defined by a plain closure on dense matrices.
pub struct FnField<F: Fn(&CMat) -> CMat + Sync>(pub F);

impl<F: Fn(&CMat) -> CMat + Sync> MatrixField for FnField<F> {
    fn eval(&self, a: &CMat) -> CMat {
        (self.0)(a)
    }
}

/// `F(A) = M A` with the structured projections evaluated at low rank.
pub struct LeftMultiplyField(pub CMat);

impl MatrixField for LeftMultiplyField {
    fn eval(&self, a: &CMat) -> CMat {
        &self.0 * a
    }
    fn eval_k_rhs(&self, k: &CMat, _v0: &CMat) -> CMat {
        &self.0 * k
    }
    fn eval_l_rhs(&self, l: &CMat, u0: &CMat) -> CMat {
        l * (u0.adjoint() * &self.0 * u0).transpose().conjugate()
    }
    fn eval_s_rhs(&self, s: &CMat, u0: &CMat, _v0: &CMat) -> CMat {
        u0.adjoint() * &self.0 * u0 * s
    }
}

/// Sum of two-factor product terms: `F(A) = Σ_q c_q B_q^{(0)} A B_q^{(1)T}`.
/// This is the matrix specialization of a Kronecker sum-of-products operator
/// acting on the flattened two-mode tensor.
pub struct TwoSidedProductField {
    pub terms: Vec<(C64, CMat, CMat)>,
}

impl MatrixField for TwoSidedProductField {
    fn eval(&self, a: &CMat) -> CMat {
        let mut out = CMat::zeros(a.nrows(), a.ncols());
        for (c, b0, b1) in &self.terms {
            out += b0 * a * b1.transpose() * *c;
        }
        out
    }
}

/// Interpretation of the truncation tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToleranceMode {
    Absolute,
    /// Tolerance scaled by the Frobenius norm of the singular values.
    Relative,
}

/// Per-step configuration shared by both matrix integrators.
#[derive(Debug, Clone)]
pub struct StepOptions {
    pub tolerance: f64,
    pub tolerance_mode: ToleranceMode,
    pub substeps: usize,
    pub min_rank: usize,
    pub max_rank: usize,
    /// Step rejection at the matrix level (off by default).
    pub rejection: Option<RejectionOptions>,
}

#[derive(Debug, Clone)]
pub struct RejectionOptions {
    /// Threshold factor c in `h·η > c·ϑ`.
    pub factor: f64,
    pub max_retries: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            tolerance: 1e-8,
            tolerance_mode: ToleranceMode::Absolute,
            substeps: 1,
            min_rank: 1,
            max_rank: usize::MAX,
            rejection: None,
        }
    }
}

impl StepOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        StepOptions {
            tolerance,
            ..Default::default()
        }
    }

    fn effective_tolerance(&self, sigma: &[f64]) -> f64 {
        match self.tolerance_mode {
            ToleranceMode::Absolute => self.tolerance,
            ToleranceMode::Relative => {
                self.tolerance * sigma.iter().map(|s| s * s).sum::<f64>().sqrt()
            }
        }
    }
}

/// Wall-clock seconds spent in each subflow of one step.
#[derive(Debug, Clone, Default)]
pub struct SubflowTimes {
    pub k_step: f64,
    pub l_step: f64,
    pub s_step: f64,
    pub augment: f64,
    pub truncate: f64,
}

/// Outcome of one integrator step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub state: LowRankMatrix,
    /// Estimate `η = ‖~U1^* F(Y0) ~V1‖` of the model error.
    pub eta: f64,
    pub old_rank: usize,
    pub augmented_rank: usize,
    pub truncated_rank: usize,
    /// All singular values fell below the truncation floor.
    pub degenerate_truncation: bool,
    pub rejected_attempts: usize,
    pub wall_times: SubflowTimes,
}

/// K-step: integrate `dK/dt = F(K V0^*) V0`, `K(t0) = U0 S0`.
pub fn k_step(
    y0: &LowRankMatrix,
    field: &dyn MatrixField,
    t0: f64,
    t1: f64,
    substeps: usize,
) -> Result<CMat> {
    let k0 = &y0.u * &y0.s;
    rk4_solve(|_, k: &CMat| field.eval_k_rhs(k, &y0.v), &k0, t0, t1, substeps)
}

/// L-step: integrate `dL/dt = F(U0 L^*)^* U0`, `L(t0) = V0 S0^*`.
pub fn l_step(
    y0: &LowRankMatrix,
    field: &dyn MatrixField,
    t0: f64,
    t1: f64,
    substeps: usize,
) -> Result<CMat> {
    let l0 = &y0.v * y0.s.adjoint();
    rk4_solve(|_, l: &CMat| field.eval_l_rhs(l, &y0.u), &l0, t0, t1, substeps)
}

/// S-step: integrate `dS/dt = U0^* F(U0 S V0^*) V0`, `S(t0) = S0` — at rank r,
/// not 2r.
pub fn s_step(
    y0: &LowRankMatrix,
    field: &dyn MatrixField,
    t0: f64,
    t1: f64,
    substeps: usize,
) -> Result<CMat> {
    rk4_solve(
        |_, s: &CMat| field.eval_s_rhs(s, &y0.u, &y0.v),
        &y0.s,
        t0,
        t1,
        substeps,
    )
}

/// First-order coupling blocks `~S_K = h ~U1^* F(Y0) V0` and
/// `~S_L = h U0^* F(Y0) ~V1`, where `~U1`, `~V1` are the non-prefix columns of
/// the augmented bases.
pub fn coupling_blocks(
    y0: &LowRankMatrix,
    field: &dyn MatrixField,
    u_hat: &CMat,
    v_hat: &CMat,
    h: f64,
) -> (CMat, CMat) {
    let f_y0 = field.eval(&y0.to_dense());
    coupling_blocks_with(&f_y0, y0, u_hat, v_hat, h)
}

fn coupling_blocks_with(
    f_y0: &CMat,
    y0: &LowRankMatrix,
    u_hat: &CMat,
    v_hat: &CMat,
    h: f64,
) -> (CMat, CMat) {
    let r = y0.rank();
    let u_new = u_hat.columns(r, u_hat.ncols() - r);
    let v_new = v_hat.columns(r, v_hat.ncols() - r);
    let hk = C64::new(h, 0.0);
    let sk = u_new.adjoint() * f_y0 * &y0.v * hk;
    let sl = y0.u.adjoint() * f_y0 * v_new * hk;
    (sk, sl)
}

/// Augmented coefficient matrix `[[S1, ~S_L], [~S_K, 0]]`; zero-extent blocks
/// collapse to `S1`.
pub fn assemble_augmented_s(s1: &CMat, sk: &CMat, sl: &CMat) -> Result<CMat> {
    let r_u_new = sk.nrows();
    let r_v_new = sl.ncols();
    if sk.ncols() != s1.ncols() || sl.nrows() != s1.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "augmented S blocks: S1 {}x{}, SK {}x{}, SL {}x{}",
            s1.nrows(),
            s1.ncols(),
            sk.nrows(),
            sk.ncols(),
            sl.nrows(),
            sl.ncols()
        )));
    }
    let mut out = CMat::zeros(s1.nrows() + r_u_new, s1.ncols() + r_v_new);
    out.view_mut((0, 0), s1.shape()).copy_from(s1);
    out.view_mut((s1.nrows(), 0), sk.shape()).copy_from(sk);
    out.view_mut((0, s1.ncols()), sl.shape()).copy_from(sl);
    Ok(out)
}

fn truncate_augmented(
    s_hat: &CMat,
    u_hat: &CMat,
    v_hat: &CMat,
    opts: &StepOptions,
) -> Result<(LowRankMatrix, bool)> {
    let probe = svd_truncate(s_hat, 0.0, usize::MAX, 1)?;
    let tol = opts.effective_tolerance(&probe.singular_values);
    let t = svd_truncate(s_hat, tol, opts.max_rank, opts.min_rank)?;
    let degenerate = t
        .singular_values
        .iter()
        .all(|&s| s * s <= tol * tol / (t.kept_rank.max(1) as f64));
    let p = &t.left;
    let q = &t.right;
    let u1 = u_hat * p;
    let v1 = v_hat * q;
    let s1 = p.adjoint() * s_hat * q;
    Ok((LowRankMatrix::new(u1, s1, v1)?, degenerate))
}

enum StepKind {
    Parallel,
    RankAdaptive,
}

/// One step of the modified parallel integrator, with the K-, L- and S-flows
/// evaluated concurrently.
pub fn parallel_step(
    y0: &LowRankMatrix,
    field: &dyn MatrixField,
    t0: f64,
    t1: f64,
    opts: &StepOptions,
) -> Result<StepReport> {
    step_with_rejection(y0, field, t0, t1, opts, StepKind::Parallel)
}

/// One step of the sequential rank-adaptive BUG baseline: same K/L flows, but
/// the Galerkin update runs in the augmented bases at rank up to 2r.
pub fn rank_adaptive_step(
    y0: &LowRankMatrix,
    field: &dyn MatrixField,
    t0: f64,
    t1: f64,
    opts: &StepOptions,
) -> Result<StepReport> {
    step_with_rejection(y0, field, t0, t1, opts, StepKind::RankAdaptive)
}

fn step_with_rejection(
    y0: &LowRankMatrix,
    field: &dyn MatrixField,
    t0: f64,
    t1: f64,
    opts: &StepOptions,
    kind: StepKind,
) -> Result<StepReport> {
    let max_retries = opts.rejection.as_ref().map_or(0, |r| r.max_retries);
    let mut attempt_state = y0.clone();
    let mut attempts = 0;
    loop {
        let mut report = step_once(&attempt_state, field, t0, t1, opts, &kind)?;
        report.old_rank = y0.rank();
        report.rejected_attempts = attempts;
        let reject = match &opts.rejection {
            Some(rej) => {
                let h = t1 - t0;
                h * report.eta > rej.factor * opts.tolerance && attempts < rej.max_retries
            }
            None => false,
        };
        if !reject {
            return Ok(report);
        }
        attempts += 1;
        if attempts > max_retries {
            return Err(Error::RetriesExhausted(attempts));
        }
        // retry from the augmented bases: pad S with zeros into the spans
        // gathered during the failed attempt
        let (u_hat, v_hat) = augmented_bases(&attempt_state, field, t0, t1, opts)?;
        let r = attempt_state.rank();
        let mut s_pad = CMat::zeros(u_hat.ncols(), v_hat.ncols());
        s_pad.view_mut((0, 0), (r, r)).copy_from(&attempt_state.s);
        attempt_state = LowRankMatrix::new(u_hat, s_pad, v_hat)?;
    }
}

fn augmented_bases(
    y0: &LowRankMatrix,
    field: &dyn MatrixField,
    t0: f64,
    t1: f64,
    opts: &StepOptions,
) -> Result<(CMat, CMat)> {
    let (k1, l1) = rayon::join(
        || k_step(y0, field, t0, t1, opts.substeps),
        || l_step(y0, field, t0, t1, opts.substeps),
    );
    let u_hat = orthonormal_basis_union(&y0.u, &k1?)?;
    let v_hat = orthonormal_basis_union(&y0.v, &l1?)?;
    Ok((u_hat, v_hat))
}

fn step_once(
    y0: &LowRankMatrix,
    field: &dyn MatrixField,
    t0: f64,
    t1: f64,
    opts: &StepOptions,
    kind: &StepKind,
) -> Result<StepReport> {
    let h = t1 - t0;
    let mut times = SubflowTimes::default();

    // K-, L- and S-steps depend only on time-t0 data; run them concurrently.
    let ((k1, tk), ((l1, tl), (s1, ts))) = rayon::join(
        || {
            let t = Instant::now();
            let k = k_step(y0, field, t0, t1, opts.substeps);
            (k, t.elapsed().as_secs_f64())
        },
        || {
            rayon::join(
                || {
                    let t = Instant::now();
                    let l = l_step(y0, field, t0, t1, opts.substeps);
                    (l, t.elapsed().as_secs_f64())
                },
                || {
                    let t = Instant::now();
                    let s = match kind {
                        StepKind::Parallel => s_step(y0, field, t0, t1, opts.substeps),
                        // the rank-adaptive Galerkin flow runs after the
                        // bases are augmented; nothing to do here
                        StepKind::RankAdaptive => Ok(y0.s.clone()),
                    };
                    (s, t.elapsed().as_secs_f64())
                },
            )
        },
    );
    times.k_step = tk;
    times.l_step = tl;
    times.s_step = ts;
    let (k1, l1, s1) = (k1?, l1?, s1?);

    let t_aug = Instant::now();
    let u_hat = orthonormal_basis_union(&y0.u, &k1)?;
    let v_hat = orthonormal_basis_union(&y0.v, &l1)?;
    let f_y0 = field.eval(&y0.to_dense());
    let r = y0.rank();
    let u_new = u_hat.columns(r, u_hat.ncols() - r).into_owned();
    let v_new = v_hat.columns(r, v_hat.ncols() - r).into_owned();
    let eta = (&u_new.adjoint() * &f_y0 * &v_new).norm();

    let s_hat = match kind {
        StepKind::Parallel => {
            let (sk, sl) = coupling_blocks_with(&f_y0, y0, &u_hat, &v_hat, h);
            assemble_augmented_s(&s1, &sk, &sl)?
        }
        StepKind::RankAdaptive => {
            // Galerkin update in the augmented bases with initial value
            // U_hat^* Y0 V_hat, which is S0 padded with zeros because the new
            // directions are orthogonal to the old ones.
            let mut s0_pad = CMat::zeros(u_hat.ncols(), v_hat.ncols());
            s0_pad.view_mut((0, 0), (r, r)).copy_from(&y0.s);
            rk4_solve(
                |_, s: &CMat| field.eval_s_rhs(s, &u_hat, &v_hat),
                &s0_pad,
                t0,
                t1,
                opts.substeps,
            )?
        }
    };
    times.augment = t_aug.elapsed().as_secs_f64();
    let augmented_rank = s_hat.nrows().min(s_hat.ncols());

    let t_trunc = Instant::now();
    let (state, degenerate) = truncate_augmented(&s_hat, &u_hat, &v_hat, opts)?;
    times.truncate = t_trunc.elapsed().as_secs_f64();

    let truncated_rank = state.rank();
    Ok(StepReport {
        state,
        eta,
        old_rank: r,
        augmented_rank,
        truncated_rank,
        degenerate_truncation: degenerate,
        rejected_attempts: 0,
        wall_times: times,
    })
}

/// Integrate from `t0` to `t_end` with constant step `h`, returning the final
/// state and the per-step reports.
pub fn integrate(
    y0: &LowRankMatrix,
    field: &dyn MatrixField,
    t0: f64,
    t_end: f64,
    h: f64,
    opts: &StepOptions,
    rank_adaptive: bool,
) -> Result<(LowRankMatrix, Vec<StepReport>)> {
    let steps = ((t_end - t0) / h).round() as usize;
    let mut y = y0.clone();
    let mut reports = Vec::with_capacity(steps);
    for k in 0..steps {
        let ta = t0 + k as f64 * h;
        let tb = ta + h;
        let rep = if rank_adaptive {
            rank_adaptive_step(&y, field, ta, tb, opts)?
        } else {
            parallel_step(&y, field, ta, tb, opts)?
        };
        y = rep.state.clone();
        reports.push(rep);
    }
    Ok((y, reports))
}
