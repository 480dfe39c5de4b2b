//! Reduced functions and reduced initial data for every node of a network.
//!
//! For sum-of-products operators the reduction is computed term-wise through
//! two sweeps of small contractions: a bottom-up sweep building the child-side
//! environments `E_q^σ = U_σ^* A_q^σ U_σ` and a top-down sweep building the
//! parent-side mode-0 factors `G_q^τ`. The reduced field at a node τ with
//! children σ_1..σ_m then acts on rank-space tensors as
//! `Z ↦ Σ_q c_q · Z ×_0 G_q^τ ×_i E_q^{σ_i}`, which is what the connecting
//! tensor flows integrate. Leaves get the analogous `Y ↦ Σ_q c_q G_q^l Y B_q^T`.
//!
//! A dense fallback composes prolongations and restrictions literally; it is
//! guarded by the network size and exists as the oracle path.

use super::frame::{prolongate, restrict, subtree_frame, ReducedProblem, SubtreeFrame};
use super::{Payload, SumOfProductsOperator, TreeTensorNetwork, DENSE_GUARD};
use crate::tensor::{Error, Result};
use crate::{CMat, DenseTensor};

/// Right-hand side of a network ODE.
pub enum TtnField {
    /// Structured operator; enables the efficient term-wise reduction.
    Sop(SumOfProductsOperator),
    /// Arbitrary map on the dense leaf-resolved tensor (modes in tree order).
    /// Reduction falls back to literal prolong/restrict composition and is
    /// size-guarded.
    Dense(Box<dyn Fn(&DenseTensor) -> DenseTensor + Send + Sync>),
}

impl TtnField {
    pub fn is_sop(&self) -> bool {
        matches!(self, TtnField::Sop(_))
    }

    pub fn sop(&self) -> Option<&SumOfProductsOperator> {
        match self {
            TtnField::Sop(op) => Some(op),
            TtnField::Dense(_) => None,
        }
    }

    /// Apply to the dense leaf-resolved tensor.
    pub fn apply_dense(&self, y: &DenseTensor, leaf_order: &[usize]) -> Result<DenseTensor> {
        match self {
            TtnField::Sop(op) => op.apply_dense(y, leaf_order),
            TtnField::Dense(f) => Ok(f(y)),
        }
    }
}

/// Step-local cache of reduced problems for every node, built once from the
/// immutable time-t0 network and shared read-only afterwards.
pub struct ReductionCache<'a> {
    pub network: &'a TreeTensorNetwork,
    pub field: &'a TtnField,
    /// Effective connecting tensor of the reduced data at each internal node
    /// (original core with the accumulated frame R folded into mode 0; at the
    /// root the original core). `None` at leaves.
    reduced_core: Vec<Option<DenseTensor>>,
    /// Reduced initial data at each leaf: `R U^T` as an order-2 tensor.
    leaf_initial: Vec<Option<DenseTensor>>,
    /// Frame for the edge above each non-root node.
    frames: Vec<Option<EdgeFrame>>,
    /// Sum-of-products sweeps (empty for dense fields).
    env_e: Vec<Vec<CMat>>,
    env_g: Vec<Vec<CMat>>,
    /// Dense path: per-node frame carrying dense sibling unfoldings.
    dense_frames: Vec<Option<SubtreeFrame>>,
    /// Dense path: leaf ids in tree order for full evaluations.
    leaf_order: Vec<usize>,
}

/// Rank-space part of an edge frame (no sibling unfoldings).
#[derive(Debug, Clone)]
struct EdgeFrame {
    q_tensor: DenseTensor,
    mode: usize,
}

impl<'a> ReductionCache<'a> {
    pub fn build(network: &'a TreeTensorNetwork, field: &'a TtnField) -> Result<Self> {
        let n = network.node_count();
        let mut cache = ReductionCache {
            network,
            field,
            reduced_core: vec![None; n],
            leaf_initial: vec![None; n],
            frames: (0..n).map(|_| None).collect(),
            env_e: vec![Vec::new(); n],
            env_g: vec![Vec::new(); n],
            dense_frames: (0..n).map(|_| None).collect(),
            leaf_order: network.tree().leaf_ids(),
        };
        cache.build_reduced_data()?;
        match field {
            TtnField::Sop(op) => cache.build_sop_environments(op)?,
            TtnField::Dense(_) => cache.build_dense_frames()?,
        }
        Ok(cache)
    }

    /// Top-down sweep: reduced cores, edge frames and leaf initial data.
    fn build_reduced_data(&mut self) -> Result<()> {
        let net = self.network;
        self.reduced_core[0] = Some(net.core(0).clone());
        for idx in net.topo_order() {
            if net.is_leaf(idx) {
                continue;
            }
            let parent_core = self.reduced_core[idx]
                .as_ref()
                .expect("parent visited first")
                .clone();
            for (i, &ch) in net.children(idx).iter().enumerate() {
                let mode = i + 1;
                let mat_t = parent_core.matricize(mode)?.transpose();
                let (q, r) = crate::tensor::qr_orthonormal(&mat_t);
                let mut shape = parent_core.shape().to_vec();
                shape[mode] = q.ncols();
                let q_tensor = DenseTensor::tensorize(&q.transpose(), mode, &shape)?;
                match &net.node(ch).payload {
                    Payload::Leaf { basis, .. } => {
                        let y0 = &r * basis.transpose();
                        self.leaf_initial[ch] = Some(DenseTensor::from_matrix(&y0));
                    }
                    Payload::Core(core) => {
                        self.reduced_core[ch] = Some(core.mode_product(&r, 0)?);
                    }
                }
                self.frames[ch] = Some(EdgeFrame { q_tensor, mode });
            }
        }
        Ok(())
    }

    fn build_sop_environments(&mut self, op: &SumOfProductsOperator) -> Result<()> {
        let net = self.network;
        let nt = op.num_terms();
        // bottom-up: E_q = U^* A_q U per node
        for idx in (0..net.node_count()).rev() {
            let envs: Result<Vec<CMat>> = (0..nt)
                .map(|q| match &net.node(idx).payload {
                    Payload::Leaf { id, basis } => Ok(match op.factor(q, *id) {
                        Some(b) => basis.adjoint() * b * basis,
                        None => basis.adjoint() * basis,
                    }),
                    Payload::Core(core) => {
                        let mut t = core.clone();
                        for (i, &ch) in net.children(idx).iter().enumerate() {
                            t = t.mode_product(&self.env_e[ch][q], i + 1)?;
                        }
                        let c0 = core.matricize(0)?;
                        let t0 = t.matricize(0)?;
                        Ok(c0.conjugate() * t0.transpose())
                    }
                })
                .collect();
            self.env_e[idx] = envs?;
        }
        // top-down: G_q per node (mode-0 factor of the reduced operator)
        self.env_g[0] = (0..nt).map(|_| CMat::identity(1, 1)).collect();
        for idx in net.topo_order() {
            if net.is_leaf(idx) {
                continue;
            }
            let children: Vec<usize> = net.children(idx).to_vec();
            for (i, &ch) in children.iter().enumerate() {
                let frame = self.frames[ch].as_ref().expect("frame built");
                let d = &frame.q_tensor;
                let di = d.matricize(frame.mode)?;
                let mut gs = Vec::with_capacity(nt);
                for q in 0..nt {
                    let mut dp = d.mode_product(&self.env_g[idx][q], 0)?;
                    for (j, &sib) in children.iter().enumerate() {
                        if j != i {
                            dp = dp.mode_product(&self.env_e[sib][q], j + 1)?;
                        }
                    }
                    let g = (dp.matricize(frame.mode)? * di.adjoint()).transpose();
                    gs.push(g);
                }
                self.env_g[ch] = gs;
            }
        }
        Ok(())
    }

    fn build_dense_frames(&mut self) -> Result<()> {
        let net = self.network;
        let size: usize = net.tree().leaf_dims().iter().product();
        if size > DENSE_GUARD {
            return Err(Error::SizeGuard {
                size,
                limit: DENSE_GUARD,
            });
        }
        for idx in net.topo_order() {
            if net.is_leaf(idx) {
                continue;
            }
            let children = net.children(idx).to_vec();
            let unfoldings: Result<Vec<CMat>> = children
                .iter()
                .map(|&c| net.subtree_unfolding(c))
                .collect();
            let unfoldings = unfoldings?;
            let parent_core = self.reduced_core[idx].as_ref().unwrap().clone();
            for (i, &ch) in children.iter().enumerate() {
                self.dense_frames[ch] = Some(subtree_frame(&parent_core, i, &unfoldings)?);
            }
        }
        Ok(())
    }

    pub fn term_count(&self) -> usize {
        self.env_e.first().map_or(0, |_| {
            self.field.sop().map_or(0, |op| op.num_terms())
        })
    }

    /// Effective connecting tensor of the reduced data at an internal node.
    pub fn reduced_core(&self, idx: usize) -> &DenseTensor {
        self.reduced_core[idx].as_ref().expect("internal node")
    }

    /// Reduced initial data at a leaf, as `(bond, n_l)`.
    pub fn leaf_initial(&self, idx: usize) -> &DenseTensor {
        self.leaf_initial[idx].as_ref().expect("leaf node")
    }

    /// Effective rank of the frame above a non-root node; smaller than the
    /// node's bond only when the reduced QR was degenerate.
    pub fn frame_rank(&self, idx: usize) -> Option<usize> {
        self.frames[idx]
            .as_ref()
            .map(|f| f.q_tensor.shape()[f.mode])
    }

    /// Child-side environment matrices (per term) for a node.
    pub fn env_e(&self, idx: usize) -> &[CMat] {
        &self.env_e[idx]
    }

    /// Parent-side mode-0 factors (per term) for a node.
    pub fn env_g(&self, idx: usize) -> &[CMat] {
        &self.env_g[idx]
    }

    /// The V-space element represented by a rank-space connecting tensor at
    /// `idx`: contract every child mode with the child's dense unfolding.
    /// Dense-path helper, size-guarded through `subtree_unfolding`.
    pub fn to_node_space(&self, idx: usize, c: &DenseTensor) -> Result<DenseTensor> {
        let mut t = c.clone();
        for (i, &ch) in self.network.children(idx).iter().enumerate() {
            let u = self.network.subtree_unfolding(ch)?;
            t = t.mode_product(&u, i + 1)?;
        }
        Ok(t)
    }

    /// Evaluate the reduced field at node `idx` on an element of that node's
    /// V-space (dense path).
    pub fn eval_dense_at(&self, idx: usize, z: &DenseTensor) -> Result<DenseTensor> {
        if idx == self.network.root() {
            // root space: modes are the composite child dims; the dense field
            // acts on the leaf-resolved tensor
            let dims = self.network.tree().leaf_dims();
            let mut shape = vec![1usize];
            shape.extend(dims.iter());
            let leaf_view = z.reshape(&dims)?;
            let f = self.field.apply_dense(&leaf_view, &self.leaf_order)?;
            return f.reshape(z.shape());
        }
        let frame = self.dense_frames[idx].as_ref().expect("dense frame");
        let parent = self.network.node(idx).parent.expect("non-root");
        let up = prolongate(z, frame)?;
        let fup = self.eval_dense_at(parent, &up)?;
        let down = restrict(&fup, frame)?;
        down.reshape(z.shape())
    }

    /// Right-hand side of the connecting-tensor Galerkin flow at node `idx`:
    /// `F_τ(C ×_i U_i^0) ×_i U_i^{0,*}` evaluated in rank space.
    pub fn connecting_rhs(&self, idx: usize, c: &DenseTensor) -> Result<DenseTensor> {
        match self.field {
            TtnField::Sop(op) => {
                let mut out = DenseTensor::zeros(c.shape());
                let children = self.network.children(idx);
                for (q, term) in op.terms().iter().enumerate() {
                    let mut t = c.mode_product(&self.env_g[idx][q], 0)?;
                    for (i, &ch) in children.iter().enumerate() {
                        t = t.mode_product(&self.env_e[ch][q], i + 1)?;
                    }
                    out = out.add(&t.scale(term.coefficient))?;
                }
                Ok(out)
            }
            TtnField::Dense(_) => {
                let z = self.to_node_space(idx, c)?;
                let f = self.eval_dense_at(idx, &z)?;
                let mut back = f;
                for (i, &ch) in self.network.children(idx).iter().enumerate() {
                    let u = self.network.subtree_unfolding(ch)?;
                    back = back.mode_product(&u.adjoint(), i + 1)?;
                }
                Ok(back)
            }
        }
    }

    /// Right-hand side of the leaf basis flow at leaf node `idx`:
    /// `F_l(Y)` for `Y` of shape `(bond, n_l)`.
    pub fn leaf_rhs(&self, idx: usize, y: &DenseTensor) -> Result<DenseTensor> {
        match self.field {
            TtnField::Sop(op) => {
                let leaf_id = self.network.leaf_id(idx);
                let mut out = DenseTensor::zeros(y.shape());
                for (q, term) in op.terms().iter().enumerate() {
                    let mut t = y.mode_product(&self.env_g[idx][q], 0)?;
                    if let Some(b) = op.factor(q, leaf_id) {
                        t = t.mode_product(b, 1)?;
                    }
                    out = out.add(&t.scale(term.coefficient))?;
                }
                Ok(out)
            }
            TtnField::Dense(_) => self.eval_dense_at(idx, y),
        }
    }

    /// `F_τ(Y_τ^0)` in the node's V-space (dense path helper for couplings).
    pub fn field_at_initial_dense(&self, idx: usize) -> Result<DenseTensor> {
        let z0 = self.to_node_space(idx, self.reduced_core(idx))?;
        self.eval_dense_at(idx, &z0)
    }
}

/// One-level reduction of a field and initial data onto child `i` of the node
/// at `parent_idx`, exposed with the literal frame machinery. The returned
/// initial data is the effective core of the child (internal: connecting
/// tensor with R on mode 0; leaf: `R U^T`).
pub fn reduce_problem(
    network: &TreeTensorNetwork,
    parent_idx: usize,
    i: usize,
    parent_effective_core: &DenseTensor,
) -> Result<ReducedProblem> {
    let children = network.children(parent_idx).to_vec();
    if i >= children.len() {
        return Err(Error::InvalidArgument(format!(
            "child index {i} of node {parent_idx}"
        )));
    }
    let unfoldings: Result<Vec<CMat>> = children
        .iter()
        .map(|&c| network.subtree_unfolding(c))
        .collect();
    let frame = subtree_frame(parent_effective_core, i, &unfoldings?)?;
    let ch = children[i];
    let initial = match &network.node(ch).payload {
        Payload::Leaf { basis, .. } => {
            DenseTensor::from_matrix(&(&frame.r * basis.transpose()))
        }
        Payload::Core(core) => core.mode_product(&frame.r, 0)?,
    };
    Ok(ReducedProblem { frame, initial })
}
