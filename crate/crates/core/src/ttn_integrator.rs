//! Parallel basis-update & Galerkin time integration of tree tensor networks,
//! with the sequential rank-adaptive baseline, rank truncation and step
//! rejection.
//!
//! One parallel step dispatches an independent flow for every node of the
//! tree — a basis flow per leaf and a Galerkin connecting-tensor flow per
//! internal node, all reading only time-t0 data — then augments the network
//! bottom-up with the new directions and first-order coupling blocks, checks
//! the rejection conditions, and truncates every bond by SVD.
//!
//! The rank-adaptive baseline shares the basis flows, the 0-mode augmentation
//! and the truncation; only the Galerkin flows differ: they run level by
//! level from the leaves to the root in the already-augmented child bases.

use crate::tensor::{
    orthonormal_basis_union, rk4_solve, svd_truncate, Error, Result,
};
use crate::ttn::{
    NodePath, Payload, ReductionCache, SumOfProductsOperator, TreeTensorNetwork, TtnField,
};
use crate::{C64, CMat, DenseTensor};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegratorMode {
    Parallel,
    RankAdaptive,
}

/// Step-rejection policy.
#[derive(Debug, Clone)]
pub struct RejectionConfig {
    pub enabled: bool,
    /// Threshold factor c in `h·η > c·ϑ`.
    pub factor: f64,
    pub max_retries: usize,
    /// Allow the rejection check on non-binary nodes; the number of mixed
    /// products it evaluates grows geometrically with the child count.
    pub allow_mary: bool,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        RejectionConfig {
            enabled: false,
            factor: 10.0,
            max_retries: 3,
            allow_mary: false,
        }
    }
}

/// Per-step configuration.
#[derive(Debug, Clone)]
pub struct StepConfig {
    /// Truncation tolerance ϑ.
    pub tolerance: f64,
    pub min_rank: usize,
    pub max_rank: usize,
    /// Inner Runge–Kutta substeps per flow.
    pub substeps: usize,
    pub mode: IntegratorMode,
    pub rejection: RejectionConfig,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            tolerance: 1e-8,
            min_rank: 1,
            max_rank: usize::MAX,
            substeps: 1,
            mode: IntegratorMode::Parallel,
            rejection: RejectionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectionReason {
    RankSaturation,
    EtaThreshold,
}

impl std::fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectionReason::RankSaturation => write!(f, "rank-saturation"),
            RejectionReason::EtaThreshold => write!(f, "eta-threshold"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RejectionEvent {
    pub attempt: usize,
    pub reason: RejectionReason,
    pub node: NodePath,
}

#[derive(Debug, Clone)]
pub struct NodeRankReport {
    pub path: NodePath,
    pub before: usize,
    pub augmented: usize,
    pub after: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TtnTimings {
    pub subflow_seconds: f64,
    pub augment_seconds: f64,
    pub rejection_seconds: f64,
    pub truncate_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TtnStepReport {
    pub node_ranks: Vec<NodeRankReport>,
    /// Model-error estimate per internal node.
    pub eta: Vec<(NodePath, f64)>,
    pub rejections: Vec<RejectionEvent>,
    pub warnings: Vec<String>,
    pub timings: TtnTimings,
}

impl TtnStepReport {
    pub fn max_eta(&self) -> f64 {
        self.eta.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
    pub fn max_rank(&self) -> usize {
        self.node_ranks.iter().map(|r| r.after).max().unwrap_or(0)
    }
}

/// Intermediate products of one step attempt, before truncation: the
/// augmented network together with the per-node rank bookkeeping and the
/// η estimates the rejection check consumes.
pub struct AugmentedStep {
    /// Augmented pre-truncation network.
    pub y_hat: TreeTensorNetwork,
    /// Per-node bond count before / after augmentation.
    pub before: Vec<usize>,
    pub augmented: Vec<usize>,
    /// η per internal node index (`None` at leaves).
    pub eta: Vec<Option<f64>>,
    /// Edges whose reduced QR was rank-deficient (effective frame rank below
    /// the bond dimension).
    pub degenerate_frames: Vec<NodePath>,
}

/// One step of the parallel integrator (Φ and Ψ flows for all nodes run
/// concurrently).
pub fn parallel_ttn_step(
    y0: &TreeTensorNetwork,
    field: &TtnField,
    t0: f64,
    t1: f64,
    config: &StepConfig,
) -> Result<(TreeTensorNetwork, TtnStepReport)> {
    let cfg = StepConfig {
        mode: IntegratorMode::Parallel,
        ..config.clone()
    };
    step(y0, field, t0, t1, &cfg)
}

/// One step of the sequential rank-adaptive baseline.
pub fn rank_adaptive_ttn_step(
    y0: &TreeTensorNetwork,
    field: &TtnField,
    t0: f64,
    t1: f64,
    config: &StepConfig,
) -> Result<(TreeTensorNetwork, TtnStepReport)> {
    let cfg = StepConfig {
        mode: IntegratorMode::RankAdaptive,
        ..config.clone()
    };
    step(y0, field, t0, t1, &cfg)
}

/// One integrator step with internal retry handling.
pub fn step(
    y0: &TreeTensorNetwork,
    field: &TtnField,
    t0: f64,
    t1: f64,
    config: &StepConfig,
) -> Result<(TreeTensorNetwork, TtnStepReport)> {
    let mut report = TtnStepReport::default();
    let mut attempt_state = y0.orthonormalize()?;
    let original_ranks: Vec<usize> =
        (0..y0.node_count()).map(|i| y0.rank(i)).collect();
    let mut attempt = 0;
    loop {
        let t_sub = Instant::now();
        let augmented = run_attempt(&attempt_state, field, t0, t1, config)?;
        report.timings.subflow_seconds += t_sub.elapsed().as_secs_f64();
        for path in &augmented.degenerate_frames {
            report
                .warnings
                .push(format!("node {path}: rank-deficient edge frame (reduced QR)"));
        }

        let t_rej = Instant::now();
        let rejection = if config.rejection.enabled {
            let (event, warnings) = rejection_check(&augmented, &attempt_state, t1 - t0, config);
            report.warnings.extend(warnings);
            event
        } else {
            None
        };
        report.timings.rejection_seconds += t_rej.elapsed().as_secs_f64();

        match rejection {
            Some(event) if attempt < config.rejection.max_retries => {
                report.rejections.push(RejectionEvent {
                    attempt,
                    ..event
                });
                attempt += 1;
                attempt_state = retry_state(&attempt_state, &augmented)?;
                continue;
            }
            Some(_) => {
                return Err(Error::RetriesExhausted(attempt + 1));
            }
            None => {
                let t_trunc = Instant::now();
                let y1 = truncate_ttn(
                    &augmented.y_hat,
                    config.tolerance,
                    config.min_rank,
                    config.max_rank,
                )?;
                report.timings.truncate_seconds += t_trunc.elapsed().as_secs_f64();
                for idx in 0..y1.node_count() {
                    report.node_ranks.push(NodeRankReport {
                        path: y1.node(idx).path.clone(),
                        before: original_ranks[idx],
                        augmented: augmented.augmented[idx],
                        after: y1.rank(idx),
                    });
                    if let Some(e) = augmented.eta[idx] {
                        report
                            .eta
                            .push((y1.node(idx).path.clone(), e));
                    }
                }
                return Ok((y1, report));
            }
        }
    }
}

/// Subflows plus bottom-up augmentation for one step attempt: the basis flow
/// on every leaf, the Galerkin flow on every connecting tensor, the recursive
/// construction of the augmented bases and coupling blocks, and the η
/// estimates. Expects an orthonormal input network.
pub fn run_attempt(
    y0: &TreeTensorNetwork,
    field: &TtnField,
    t0: f64,
    t1: f64,
    config: &StepConfig,
) -> Result<AugmentedStep> {
    let cache = ReductionCache::build(y0, field)?;
    let n = y0.node_count();
    let h = t1 - t0;
    let substeps = config.substeps;

    // ---- subflows -------------------------------------------------------
    // Basis flows on every leaf; in the parallel mode also the Galerkin flow
    // on every connecting tensor. All read only the time-t0 cache.
    let mut leaf_hat: Vec<Option<Result<CMat>>> = (0..n).map(|_| None).collect();
    let mut psi_bar: Vec<Option<Result<DenseTensor>>> = (0..n).map(|_| None).collect();
    let run_psi = config.mode == IntegratorMode::Parallel;
    {
        let cache_ref = &cache;
        type FlowSlots<'s> = (
            usize,
            &'s mut Option<Result<CMat>>,
            &'s mut Option<Result<DenseTensor>>,
        );
        let jobs: Vec<FlowSlots> = leaf_hat
                .iter_mut()
                .zip(psi_bar.iter_mut())
                .enumerate()
                .map(|(i, (a, b))| (i, a, b))
                .collect();
        rayon::scope(|s| {
            for (idx, leaf_slot, psi_slot) in jobs {
                if y0.is_leaf(idx) {
                    s.spawn(move |_| {
                        *leaf_slot = Some(phi_leaf_flow(y0, cache_ref, idx, t0, t1, substeps));
                    });
                } else if run_psi {
                    s.spawn(move |_| {
                        *psi_slot = Some(rk4_solve(
                            |_, c: &DenseTensor| {
                                cache_ref.connecting_rhs(idx, c).expect("psi rhs")
                            },
                            cache_ref.reduced_core(idx),
                            t0,
                            t1,
                            substeps,
                        ));
                    });
                }
            }
        });
    }

    // ---- bottom-up augmentation -----------------------------------------
    let sop = field.sop();
    let nt = sop.map_or(0, |op| op.num_terms());
    // augmented basis structure per node
    let mut hat_core: Vec<Option<DenseTensor>> = (0..n).map(|_| None).collect();
    let mut hat_leaf: Vec<Option<CMat>> = (0..n).map(|_| None).collect();
    let mut new_count: Vec<usize> = vec![0; n];
    // mixed environments (augmented bra, original ket) per node per term
    let mut env_hat: Vec<Vec<CMat>> = vec![Vec::new(); n];
    // fully augmented environments (rank-adaptive flows) per node per term
    let mut env_full: Vec<Vec<CMat>> = vec![Vec::new(); n];
    // dense-path unfoldings of the augmented and new-direction networks
    let mut hat_unfold: Vec<Option<CMat>> = (0..n).map(|_| None).collect();
    // assembled augmented connecting tensors
    let mut assembled: Vec<Option<DenseTensor>> = (0..n).map(|_| None).collect();
    let mut eta: Vec<Option<f64>> = vec![None; n];

    for idx in (0..n).rev() {
        if y0.is_leaf(idx) {
            let u0 = y0.leaf_basis(idx);
            let u_hat = leaf_hat[idx].take().expect("leaf flow ran")?;
            new_count[idx] = u_hat.ncols() - u0.ncols();
            if let Some(op) = sop {
                let leaf_id = y0.leaf_id(idx);
                env_hat[idx] = (0..nt)
                    .map(|q| match op.factor(q, leaf_id) {
                        Some(b) => u_hat.adjoint() * b * u0,
                        None => u_hat.adjoint() * u0,
                    })
                    .collect();
                env_full[idx] = (0..nt)
                    .map(|q| match op.factor(q, leaf_id) {
                        Some(b) => u_hat.adjoint() * b * &u_hat,
                        None => u_hat.adjoint() * &u_hat,
                    })
                    .collect();
            } else {
                hat_unfold[idx] = Some(u_hat.clone());
            }
            hat_leaf[idx] = Some(u_hat);
            continue;
        }

        let children = y0.children(idx).to_vec();
        let hat_child_ranks: Vec<usize> = children
            .iter()
            .map(|&c| y0.rank(c) + new_count[c])
            .collect();

        // connecting-tensor update at this node
        let bar_c = match config.mode {
            IntegratorMode::Parallel => psi_bar[idx].take().expect("psi flow ran")?,
            IntegratorMode::RankAdaptive => {
                // Galerkin flow in the augmented child bases, level-sequential
                // (children of this node are already augmented here)
                let mut shape = vec![cache.reduced_core(idx).shape()[0]];
                shape.extend(&hat_child_ranks);
                let c0_pad = cache.reduced_core(idx).embedded(&shape)?;
                match sop {
                    Some(op) => {
                        let envs: Vec<&Vec<CMat>> =
                            children.iter().map(|&c| &env_full[c]).collect();
                        let g = cache.env_g(idx);
                        rk4_solve(
                            |_, c: &DenseTensor| {
                                let mut out = DenseTensor::zeros(c.shape());
                                for (q, term) in op.terms().iter().enumerate() {
                                    let mut t =
                                        c.mode_product(&g[q], 0).expect("mode product");
                                    for (i, env) in envs.iter().enumerate() {
                                        t = t
                                            .mode_product(&env[q], i + 1)
                                            .expect("mode product");
                                    }
                                    out = out
                                        .add(&t.scale(term.coefficient))
                                        .expect("accumulate");
                                }
                                out
                            },
                            &c0_pad,
                            t0,
                            t1,
                            substeps,
                        )?
                    }
                    None => {
                        let unfolds: Vec<&CMat> = children
                            .iter()
                            .map(|&c| hat_unfold[c].as_ref().expect("unfold"))
                            .collect();
                        rk4_solve(
                            |_, c: &DenseTensor| {
                                let mut z = c.clone();
                                for (i, u) in unfolds.iter().enumerate() {
                                    z = z.mode_product(u, i + 1).expect("expand");
                                }
                                let f = cache.eval_dense_at(idx, &z).expect("field");
                                let mut back = f;
                                for (i, u) in unfolds.iter().enumerate() {
                                    back = back
                                        .mode_product(&u.adjoint(), i + 1)
                                        .expect("project");
                                }
                                back
                            },
                            &c0_pad,
                            t0,
                            t1,
                            substeps,
                        )?
                    }
                }
            }
        };

        // coupling blocks and η from the shared time-t0 field evaluation;
        // the rank-adaptive flow already ran at augmented child ranks and
        // needs no coupling blocks
        let need_blocks = config.mode == IntegratorMode::Parallel;
        let f0_dense = if sop.is_none() {
            Some(cache.field_at_initial_dense(idx)?)
        } else {
            None
        };
        let mut blocks: Vec<DenseTensor> = Vec::with_capacity(children.len());
        for (i, &ch) in children.iter().enumerate() {
            if !need_blocks {
                break;
            }
            let block = match sop {
                Some(op) => {
                    let mut shape = cache.reduced_core(idx).shape().to_vec();
                    shape[i + 1] = new_count[ch];
                    let mut out = DenseTensor::zeros(&shape);
                    if new_count[ch] > 0 {
                        let r_ch = y0.rank(ch);
                        for (q, term) in op.terms().iter().enumerate() {
                            let mut t = cache
                                .reduced_core(idx)
                                .mode_product(&cache.env_g(idx)[q], 0)?;
                            for (j, &sib) in children.iter().enumerate() {
                                let env = if j == i {
                                    // new-direction rows of the mixed environment
                                    env_hat[ch][q]
                                        .rows(r_ch, new_count[ch])
                                        .into_owned()
                                } else {
                                    cache.env_e(sib)[q].clone()
                                };
                                t = t.mode_product(&env, j + 1)?;
                            }
                            out = out
                                .add(&t.scale(term.coefficient * C64::new(h, 0.0)))?;
                        }
                    }
                    out
                }
                None => {
                    let f0 = f0_dense.as_ref().unwrap();
                    let r_ch = y0.rank(ch);
                    let mut t = f0.clone();
                    for (j, &sib) in children.iter().enumerate() {
                        let u = if j == i {
                            let hu = hat_unfold[sib].as_ref().expect("unfold");
                            hu.columns(r_ch, new_count[sib]).into_owned()
                        } else {
                            y0.subtree_unfolding(sib)?
                        };
                        t = t.mode_product(&u.adjoint(), j + 1)?;
                    }
                    t.scale(C64::new(h, 0.0))
                }
            };
            blocks.push(block);
        }

        // η: norm of the field component outside the old bases in two or more
        // child directions simultaneously
        eta[idx] = Some(eta_at_node(
            y0,
            &cache,
            idx,
            &children,
            &new_count,
            &env_hat,
            &hat_unfold,
            f0_dense.as_ref(),
            config,
        )?);

        let c_hat = if need_blocks {
            assemble_connecting(&bar_c, &blocks)?
        } else {
            bar_c
        };

        if idx == 0 {
            assembled[idx] = Some(c_hat);
            continue;
        }

        // 0-mode augmentation: orthonormal union of the zero-padded original
        // isometry with the assembled update
        let orig_core = y0.core(idx);
        let mut padded_shape = vec![orig_core.shape()[0]];
        padded_shape.extend(&hat_child_ranks);
        let c0_pad = orig_core.embedded(&padded_shape)?;
        let prefix = c0_pad.matricize(0)?.transpose();
        let update = c_hat.matricize(0)?.transpose();
        let q_hat = orthonormal_basis_union(&prefix, &update)?;
        let r_hat = q_hat.ncols();
        new_count[idx] = r_hat - orig_core.shape()[0];
        let mut hat_shape = vec![r_hat];
        hat_shape.extend(&hat_child_ranks);
        let q_tensor = DenseTensor::tensorize(&q_hat.transpose(), 0, &hat_shape)?;

        // environments of the augmented subtree against the original one
        if let Some(op) = sop {
            let mut env_h = Vec::with_capacity(nt);
            let mut env_f = Vec::with_capacity(nt);
            for q in 0..nt {
                let mut mixed = y0.core(idx).clone();
                let mut full = q_tensor.clone();
                for (i, &ch) in children.iter().enumerate() {
                    mixed = mixed.mode_product(&env_hat[ch][q], i + 1)?;
                    full = full.mode_product(&env_full[ch][q], i + 1)?;
                }
                let q0 = q_tensor.matricize(0)?;
                env_h.push(q0.conjugate() * mixed.matricize(0)?.transpose());
                env_f.push(q0.conjugate() * full.matricize(0)?.transpose());
                let _ = op;
            }
            env_hat[idx] = env_h;
            env_full[idx] = env_f;
        } else {
            // dense unfolding of the augmented subtree
            let mut x = q_tensor.clone();
            for (i, &ch) in children.iter().enumerate() {
                let u = match &y0.node(ch).payload {
                    Payload::Leaf { .. } => hat_leaf[ch].clone().expect("leaf basis"),
                    Payload::Core(_) => hat_unfold[ch].clone().expect("unfold"),
                };
                x = x.mode_product(&u, i + 1)?;
            }
            hat_unfold[idx] = Some(x.matricize(0)?.transpose());
        }
        hat_core[idx] = Some(q_tensor);
        assembled[idx] = Some(c_hat);
    }

    // ---- final augmented network ----------------------------------------
    let mut y_hat = y0.clone();
    for idx in 0..n {
        match &y0.node(idx).payload {
            Payload::Leaf { id, .. } => {
                let id = *id;
                y_hat.node_mut(idx).payload = Payload::Leaf {
                    id,
                    basis: hat_leaf[idx].clone().expect("leaf basis"),
                };
            }
            Payload::Core(_) => {
                let core = if idx == 0 {
                    assembled[idx].clone().expect("root assembled")
                } else {
                    hat_core[idx].clone().expect("hat core")
                };
                y_hat.node_mut(idx).payload = Payload::Core(core);
            }
        }
    }
    y_hat.validate()?;

    let before: Vec<usize> = (0..n).map(|i| y0.rank(i)).collect();
    let augmented: Vec<usize> = (0..n).map(|i| y_hat.rank(i)).collect();
    let degenerate_frames: Vec<NodePath> = (1..n)
        .filter(|&i| matches!(cache.frame_rank(i), Some(r) if r < y0.rank(i)))
        .map(|i| y0.node(i).path.clone())
        .collect();
    Ok(AugmentedStep {
        y_hat,
        before,
        augmented,
        eta,
        degenerate_frames,
    })
}

/// Basis flow at one leaf: integrate `dY/dt = F_l(Y)` from the reduced
/// initial data and return the prefix-preserving union of the old basis with
/// the transposed endpoint.
pub fn phi_leaf_flow(
    y0: &TreeTensorNetwork,
    cache: &ReductionCache,
    idx: usize,
    t0: f64,
    t1: f64,
    substeps: usize,
) -> Result<CMat> {
    let y_init = cache.leaf_initial(idx).clone();
    let y_end = rk4_solve(
        |_, y: &DenseTensor| cache.leaf_rhs(idx, y).expect("leaf rhs"),
        &y_init,
        t0,
        t1,
        substeps,
    )?;
    let k1 = y_end.matricize(0)?.transpose();
    orthonormal_basis_union(y0.leaf_basis(idx), &k1)
}

/// Sequential per-mode assembly of the augmented connecting tensor from the
/// updated tensor and the per-child coupling blocks.
fn assemble_connecting(bar_c: &DenseTensor, blocks: &[DenseTensor]) -> Result<DenseTensor> {
    let mut out = bar_c.clone();
    for (i, b) in blocks.iter().enumerate() {
        let mode = i + 1;
        let new_i = b.shape()[mode];
        if new_i == 0 {
            continue;
        }
        let mut target = out.shape().to_vec();
        target[mode] = new_i;
        let bpad = b.embedded(&target)?;
        let top = out.matricize(mode)?;
        let bot = bpad.matricize(mode)?;
        let mut stacked = CMat::zeros(top.nrows() + bot.nrows(), top.ncols());
        stacked.view_mut((0, 0), top.shape()).copy_from(&top);
        stacked
            .view_mut((top.nrows(), 0), bot.shape())
            .copy_from(&bot);
        let mut new_shape = out.shape().to_vec();
        new_shape[mode] += new_i;
        out = DenseTensor::tensorize(&stacked, mode, &new_shape)?;
    }
    Ok(out)
}

/// η at an internal node: the norm of the time-t0 field component carried by
/// new directions in at least two children simultaneously. Binary nodes have
/// exactly one such product; m-ary nodes enumerate the subsets behind the
/// `allow_mary` flag.
#[allow(clippy::too_many_arguments)]
fn eta_at_node(
    y0: &TreeTensorNetwork,
    cache: &ReductionCache,
    idx: usize,
    children: &[usize],
    new_count: &[usize],
    env_hat: &[Vec<CMat>],
    hat_unfold: &[Option<CMat>],
    f0_dense: Option<&DenseTensor>,
    config: &StepConfig,
) -> Result<f64> {
    let m = children.len();
    if m > 2 && config.rejection.enabled && !config.rejection.allow_mary {
        return Err(Error::InvalidArgument(
            "step rejection on non-binary nodes requires the m-ary flag".into(),
        ));
    }
    let subsets: Vec<Vec<usize>> = if m == 2 {
        vec![vec![0, 1]]
    } else {
        // all child subsets of size >= 2
        let mut subs = Vec::new();
        for mask in 0..(1usize << m) {
            if mask.count_ones() >= 2 {
                subs.push((0..m).filter(|j| mask & (1 << j) != 0).collect());
            }
        }
        subs
    };
    let mut best: f64 = 0.0;
    for subset in subsets {
        if subset
            .iter()
            .any(|&j| new_count[children[j]] == 0)
        {
            continue;
        }
        let norm = match f0_dense {
            Some(f0) => {
                let mut t = f0.clone();
                for (j, &ch) in children.iter().enumerate() {
                    let u = if subset.contains(&j) {
                        let hu = hat_unfold[ch].as_ref().expect("unfold");
                        hu.columns(y0.rank(ch), new_count[ch]).into_owned()
                    } else {
                        y0.subtree_unfolding(ch)?
                    };
                    t = t.mode_product(&u.adjoint(), j + 1)?;
                }
                t.norm()
            }
            None => {
                let op = cache.field.sop().expect("sop field");
                let mut acc =
                    DenseTensor::zeros(&eta_shape(cache, idx, children, new_count, &subset));
                for (q, term) in op.terms().iter().enumerate() {
                    let mut t = cache
                        .reduced_core(idx)
                        .mode_product(&cache.env_g(idx)[q], 0)?;
                    for (j, &ch) in children.iter().enumerate() {
                        let env = if subset.contains(&j) {
                            env_hat[ch][q]
                                .rows(y0.rank(ch), new_count[ch])
                                .into_owned()
                        } else {
                            cache.env_e(ch)[q].clone()
                        };
                        t = t.mode_product(&env, j + 1)?;
                    }
                    acc = acc.add(&t.scale(term.coefficient))?;
                }
                acc.norm()
            }
        };
        best = best.max(norm);
    }
    Ok(best)
}

fn eta_shape(
    cache: &ReductionCache,
    idx: usize,
    children: &[usize],
    new_count: &[usize],
    subset: &[usize],
) -> Vec<usize> {
    let mut shape = cache.reduced_core(idx).shape().to_vec();
    for (j, &ch) in children.iter().enumerate() {
        if subset.contains(&j) {
            shape[j + 1] = new_count[ch];
        }
    }
    shape
}

/// Rejection conditions on the augmented pre-truncation network: (1) some
/// non-root bond saturated its doubled budget, (2) `h·η > c·ϑ` at some node
/// (strict inequality; the boundary accepts). Saturation at a bond already at
/// the rank cap downgrades to a warning instead of rejecting.
pub fn rejection_check(
    augmented: &AugmentedStep,
    y0: &TreeTensorNetwork,
    h: f64,
    config: &StepConfig,
) -> (Option<RejectionEvent>, Vec<String>) {
    let mut warnings = Vec::new();
    for idx in 1..y0.node_count() {
        let r0 = augmented.before[idx];
        let r_hat = augmented.augmented[idx];
        if r_hat == 2 * r0 {
            if 2 * r0 > config.max_rank {
                warnings.push(format!(
                    "node {}: rank saturated at the cap ({} = 2*{}), not rejecting",
                    y0.node(idx).path,
                    r_hat,
                    r0
                ));
            } else {
                return (
                    Some(RejectionEvent {
                        attempt: 0,
                        reason: RejectionReason::RankSaturation,
                        node: y0.node(idx).path.clone(),
                    }),
                    warnings,
                );
            }
        }
    }
    for idx in 0..y0.node_count() {
        if let Some(e) = augmented.eta[idx] {
            if h * e > config.rejection.factor * config.tolerance {
                return (
                    Some(RejectionEvent {
                        attempt: 0,
                        reason: RejectionReason::EtaThreshold,
                        node: y0.node(idx).path.clone(),
                    }),
                    warnings,
                );
            }
        }
    }
    (None, warnings)
}

/// Initial state for a retried step: the augmented bases of the failed
/// attempt with the original data embedded (zero-padded connecting tensors).
/// Represents exactly the same tensor as the attempt's initial state.
pub fn retry_state(
    y0: &TreeTensorNetwork,
    augmented: &AugmentedStep,
) -> Result<TreeTensorNetwork> {
    let mut out = augmented.y_hat.clone();
    let root_children: Vec<usize> = out.children(0).to_vec();
    let mut shape = vec![1usize];
    shape.extend(root_children.iter().map(|&c| out.rank(c)));
    let padded_root = y0.core(0).embedded(&shape)?;
    out.node_mut(0).payload = Payload::Core(padded_root);
    out.validate()?;
    Ok(out)
}

/// Rank truncation Θ: root-to-leaves orthonormalized SVD truncation of every
/// bond with the tail-norm rule. Each edge discards at most `tolerance` of
/// the (orthogonally weighted) mass, so the total error is bounded by the
/// number of edges times the tolerance.
pub fn truncate_ttn(
    y_hat: &TreeTensorNetwork,
    tolerance: f64,
    min_rank: usize,
    max_rank: usize,
) -> Result<TreeTensorNetwork> {
    let mut out = y_hat.orthonormalize()?;
    let root_weight = vec![1.0f64];
    truncate_node(&mut out, 0, &root_weight, tolerance, min_rank, max_rank)?;
    // restore exact gauges after the projections
    out.validate()?;
    out.orthonormalize()
}

fn truncate_node(
    out: &mut TreeTensorNetwork,
    idx: usize,
    weight: &[f64],
    tolerance: f64,
    min_rank: usize,
    max_rank: usize,
) -> Result<()> {
    let children = out.children(idx).to_vec();
    let mut core = out.core(idx).clone();
    let w = CMat::from_fn(weight.len(), weight.len(), |i, j| {
        if i == j {
            C64::new(weight[i], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let mut core_w = core.mode_product(&w, 0)?;
    let mut child_weights: Vec<Option<Vec<f64>>> = vec![None; children.len()];
    for (i, &ch) in children.iter().enumerate() {
        let mode = i + 1;
        let m = core_w.matricize(mode)?;
        let t = svd_truncate(&m, tolerance, max_rank, min_rank)?;
        let p = &t.left;
        core = core.mode_product(&p.adjoint(), mode)?;
        core_w = core_w.mode_product(&p.adjoint(), mode)?;
        match &out.node(ch).payload {
            Payload::Leaf { id, basis } => {
                let id = *id;
                let new_basis = basis * p;
                out.node_mut(ch).payload = Payload::Leaf {
                    id,
                    basis: new_basis,
                };
            }
            Payload::Core(child_core) => {
                let new_child = child_core.mode_product(&p.transpose(), 0)?;
                out.node_mut(ch).payload = Payload::Core(new_child);
                child_weights[i] = Some(t.singular_values.clone());
            }
        }
    }
    out.node_mut(idx).payload = Payload::Core(core);
    for (i, &ch) in children.iter().enumerate() {
        if let Some(wts) = child_weights[i].take() {
            truncate_node(out, ch, &wts, tolerance, min_rank, max_rank)?;
        }
    }
    Ok(())
}

/// Integrate from `t0` to `t_end` with constant step `h`.
pub fn integrate(
    y0: &TreeTensorNetwork,
    field: &TtnField,
    t0: f64,
    t_end: f64,
    h: f64,
    config: &StepConfig,
) -> Result<(TreeTensorNetwork, Vec<TtnStepReport>)> {
    let steps = ((t_end - t0) / h).round().max(1.0) as usize;
    let mut y = y0.clone();
    let mut reports = Vec::with_capacity(steps);
    for k in 0..steps {
        let ta = t0 + k as f64 * h;
        let tb = if k + 1 == steps { t_end } else { ta + h };
        let (y1, rep) = step(&y, field, ta, tb, config)?;
        y = y1;
        reports.push(rep);
    }
    Ok((y, reports))
}

/// Convenience: dense sum-of-products field.
pub fn sop_field(op: SumOfProductsOperator) -> TtnField {
    TtnField::Sop(op)
}
