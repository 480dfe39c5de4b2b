//! Tree tensor networks: tree topology, network data model, orthonormalization,
//! dense contraction, prolongation/restriction frames and operator reduction.
//!
//! A network stores one basis matrix per leaf and one connecting tensor per
//! internal node. Connecting tensors carry the parent bond as mode 0 (the root
//! has bond dimension 1) and one mode per child in order. The represented
//! tensor is obtained by recursively contracting each child's unfolding into
//! its parent's connecting tensor.

mod frame;
mod io;
mod ops;
mod reduction;

pub use frame::{prolongate, restrict, subtree_frame, ReducedProblem, SubtreeFrame};
pub use io::{read_snapshot, write_snapshot};
pub use ops::{ProductTerm, SumOfProductsOperator};
pub use reduction::{reduce_problem, ReductionCache, TtnField};

use crate::tensor::{inner, qr_orthonormal, Error, Result};
use crate::{C64, CMat, DenseTensor};

/// Guard for dense materialization of a whole network.
pub const DENSE_GUARD: usize = 1 << 24;

/// Tree topology: leaves carry a unique id and a physical dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tree {
    Leaf { id: usize, dim: usize },
    Node(Vec<Tree>),
}

impl Tree {
    /// Balanced binary tree over the given leaf dimensions; leaf ids are the
    /// positions 0..d-1 in order.
    pub fn balanced_binary(dims: &[usize]) -> Tree {
        fn build(lo: usize, hi: usize, dims: &[usize]) -> Tree {
            if hi - lo == 1 {
                Tree::Leaf {
                    id: lo,
                    dim: dims[lo],
                }
            } else {
                let mid = lo + (hi - lo).div_ceil(2);
                Tree::Node(vec![build(lo, mid, dims), build(mid, hi, dims)])
            }
        }
        assert!(!dims.is_empty());
        build(0, dims.len(), dims)
    }

    /// Leaf ids in tree (left-to-right) order.
    pub fn leaf_ids(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            Tree::Leaf { id, .. } => out.push(*id),
            Tree::Node(children) => {
                for ch in children {
                    ch.collect_leaves(out);
                }
            }
        }
    }

    /// Leaf dimensions in tree order.
    pub fn leaf_dims(&self) -> Vec<usize> {
        let mut out = Vec::new();
        match self {
            Tree::Leaf { dim, .. } => out.push(*dim),
            Tree::Node(children) => {
                for ch in children {
                    out.extend(ch.leaf_dims());
                }
            }
        }
        out
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Tree::Leaf { .. } => 1,
            Tree::Node(children) => children.iter().map(Tree::leaf_count).sum(),
        }
    }

    /// Total number of nodes (leaves and internal nodes).
    pub fn node_count(&self) -> usize {
        match self {
            Tree::Leaf { .. } => 1,
            Tree::Node(children) => 1 + children.iter().map(Tree::node_count).sum::<usize>(),
        }
    }

    /// Subtree partial order: is `other` a subtree of `self`?
    pub fn contains(&self, other: &Tree) -> bool {
        if self == other {
            return true;
        }
        match self {
            Tree::Leaf { .. } => false,
            Tree::Node(children) => children.iter().any(|c| c.contains(other)),
        }
    }

    /// All leaf ids unique and sibling subtrees disjoint.
    pub fn validate(&self) -> Result<()> {
        let ids = self.leaf_ids();
        let mut seen = std::collections::BTreeSet::new();
        for id in ids {
            if !seen.insert(id) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate leaf id {id} in tree"
                )));
            }
        }
        Ok(())
    }
}

/// Structural identity of a node: the child-index path from the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodePath(pub Vec<usize>);

impl std::fmt::Display for NodePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_empty() {
            write!(f, "root")
        } else {
            let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
            write!(f, "{}", parts.join("."))
        }
    }
}

/// Payload stored at a node of the network.
#[derive(Debug, Clone)]
pub enum Payload {
    /// Leaf basis matrix, `n_l × r_l`.
    Leaf { id: usize, basis: CMat },
    /// Connecting tensor with the parent bond as mode 0.
    Core(DenseTensor),
}

#[derive(Debug, Clone)]
pub struct Node {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub payload: Payload,
    pub path: NodePath,
}

/// Recursive description used to build (and serialize) networks.
#[derive(Debug, Clone)]
pub enum TtnNodeDef {
    Leaf { id: usize, basis: CMat },
    Internal { core: DenseTensor, children: Vec<TtnNodeDef> },
}

/// Tree tensor network in flat arena form; node 0 is the root and children
/// always have larger indices than their parent (depth-first order).
#[derive(Debug, Clone)]
pub struct TreeTensorNetwork {
    nodes: Vec<Node>,
}

impl TreeTensorNetwork {
    pub fn from_def(def: TtnNodeDef) -> Result<Self> {
        let mut nodes = Vec::new();
        fn add(
            def: TtnNodeDef,
            parent: Option<usize>,
            path: Vec<usize>,
            nodes: &mut Vec<Node>,
        ) -> usize {
            let idx = nodes.len();
            match def {
                TtnNodeDef::Leaf { id, basis } => {
                    nodes.push(Node {
                        parent,
                        children: Vec::new(),
                        payload: Payload::Leaf { id, basis },
                        path: NodePath(path),
                    });
                }
                TtnNodeDef::Internal { core, children } => {
                    nodes.push(Node {
                        parent,
                        children: Vec::new(),
                        payload: Payload::Core(core),
                        path: NodePath(path.clone()),
                    });
                    let mut child_ids = Vec::with_capacity(children.len());
                    for (i, ch) in children.into_iter().enumerate() {
                        let mut p = path.clone();
                        p.push(i);
                        child_ids.push(add(ch, Some(idx), p, nodes));
                    }
                    nodes[idx].children = child_ids;
                }
            }
            idx
        }
        add(def, None, Vec::new(), &mut nodes);
        let ttn = TreeTensorNetwork { nodes };
        ttn.validate()?;
        Ok(ttn)
    }

    pub fn to_def(&self) -> TtnNodeDef {
        fn build(ttn: &TreeTensorNetwork, idx: usize) -> TtnNodeDef {
            let node = &ttn.nodes[idx];
            match &node.payload {
                Payload::Leaf { id, basis } => TtnNodeDef::Leaf {
                    id: *id,
                    basis: basis.clone(),
                },
                Payload::Core(core) => TtnNodeDef::Internal {
                    core: core.clone(),
                    children: node.children.iter().map(|&c| build(ttn, c)).collect(),
                },
            }
        }
        build(self, 0)
    }

    /// Rank-1 network over `tree` from one unit-norm column per leaf (keyed by
    /// leaf id); all connecting tensors are the scalar 1.
    pub fn rank_one(tree: &Tree, leaf_columns: &dyn Fn(usize) -> CMat) -> Result<Self> {
        fn build(tree: &Tree, cols: &dyn Fn(usize) -> CMat) -> TtnNodeDef {
            match tree {
                Tree::Leaf { id, .. } => TtnNodeDef::Leaf {
                    id: *id,
                    basis: cols(*id),
                },
                Tree::Node(children) => TtnNodeDef::Internal {
                    core: DenseTensor::from_parts(
                        vec![1; children.len() + 1],
                        vec![C64::new(1.0, 0.0)],
                    )
                    .expect("rank-1 core"),
                    children: children.iter().map(|c| build(c, cols)).collect(),
                },
            }
        }
        TreeTensorNetwork::from_def(build(tree, leaf_columns))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub(crate) fn node_mut(&mut self, idx: usize) -> &mut Node {
        &mut self.nodes[idx]
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn is_leaf(&self, idx: usize) -> bool {
        matches!(self.nodes[idx].payload, Payload::Leaf { .. })
    }

    pub fn children(&self, idx: usize) -> &[usize] {
        &self.nodes[idx].children
    }

    /// Node indices in depth-first order (parents before children).
    pub fn topo_order(&self) -> Vec<usize> {
        (0..self.nodes.len()).collect()
    }

    pub fn core(&self, idx: usize) -> &DenseTensor {
        match &self.nodes[idx].payload {
            Payload::Core(c) => c,
            Payload::Leaf { .. } => panic!("node {idx} is a leaf"),
        }
    }

    pub fn leaf_basis(&self, idx: usize) -> &CMat {
        match &self.nodes[idx].payload {
            Payload::Leaf { basis, .. } => basis,
            Payload::Core(_) => panic!("node {idx} is internal"),
        }
    }

    pub fn leaf_id(&self, idx: usize) -> usize {
        match &self.nodes[idx].payload {
            Payload::Leaf { id, .. } => *id,
            Payload::Core(_) => panic!("node {idx} is internal"),
        }
    }

    /// Bond dimension of the edge from `idx` toward its parent (1 at the root).
    pub fn rank(&self, idx: usize) -> usize {
        match &self.nodes[idx].payload {
            Payload::Leaf { basis, .. } => basis.ncols(),
            Payload::Core(core) => core.shape()[0],
        }
    }

    /// Physical dimension carried by the subtree at `idx`.
    pub fn subtree_dim(&self, idx: usize) -> usize {
        match &self.nodes[idx].payload {
            Payload::Leaf { basis, .. } => basis.nrows(),
            Payload::Core(_) => self.nodes[idx]
                .children
                .iter()
                .map(|&c| self.subtree_dim(c))
                .product(),
        }
    }

    /// Tree topology of the network.
    pub fn tree(&self) -> Tree {
        fn build(ttn: &TreeTensorNetwork, idx: usize) -> Tree {
            match &ttn.nodes[idx].payload {
                Payload::Leaf { id, basis } => Tree::Leaf {
                    id: *id,
                    dim: basis.nrows(),
                },
                Payload::Core(_) => Tree::Node(
                    ttn.nodes[idx]
                        .children
                        .iter()
                        .map(|&c| build(ttn, c))
                        .collect(),
                ),
            }
        }
        build(self, 0)
    }

    /// `(path, rank)` for every non-root node plus the root (rank 1),
    /// in depth-first order.
    pub fn ranks(&self) -> Vec<(NodePath, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.path.clone(), self.rank(i)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidArgument("empty network".into()));
        }
        self.tree().validate()?;
        match &self.nodes[0].payload {
            Payload::Core(core) => {
                if core.shape()[0] != 1 {
                    return Err(Error::ShapeMismatch(format!(
                        "root bond dimension must be 1, got {}",
                        core.shape()[0]
                    )));
                }
            }
            Payload::Leaf { .. } => {
                return Err(Error::InvalidArgument(
                    "root must be an internal node".into(),
                ))
            }
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Payload::Core(core) = &node.payload {
                if core.order() != node.children.len() + 1 {
                    return Err(Error::ShapeMismatch(format!(
                        "node {idx}: core order {} for {} children",
                        core.order(),
                        node.children.len()
                    )));
                }
                if node.children.len() < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "internal node {idx} must have at least 2 children"
                    )));
                }
                for (i, &ch) in node.children.iter().enumerate() {
                    if core.shape()[i + 1] != self.rank(ch) {
                        return Err(Error::ShapeMismatch(format!(
                            "node {idx}: mode {} dim {} != child rank {}",
                            i + 1,
                            core.shape()[i + 1],
                            self.rank(ch)
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// The unfolding `U_τ` (`n_τ × r_τ`) of the subtree at `idx`: columns are
    /// the subtree's basis tensors, flattened leaf-major in tree order.
    pub fn subtree_unfolding(&self, idx: usize) -> Result<CMat> {
        let size = self.subtree_dim(idx) * self.rank(idx);
        if size > DENSE_GUARD {
            return Err(Error::SizeGuard {
                size,
                limit: DENSE_GUARD,
            });
        }
        match &self.nodes[idx].payload {
            Payload::Leaf { basis, .. } => Ok(basis.clone()),
            Payload::Core(core) => {
                // X = core ×_i U_child, then unfold mode 0
                let mut x = core.clone();
                for (i, &ch) in self.nodes[idx].children.iter().enumerate() {
                    let u = self.subtree_unfolding(ch)?;
                    x = x.mode_product(&u, i + 1)?;
                }
                Ok(x.matricize(0)?.transpose())
            }
        }
    }

    /// Dense tensor represented by the network, with one mode per leaf in
    /// tree order. Guarded by [`DENSE_GUARD`].
    pub fn contract_full(&self) -> Result<DenseTensor> {
        let dims = self.tree().leaf_dims();
        let size: usize = dims.iter().product();
        if size > DENSE_GUARD {
            return Err(Error::SizeGuard {
                size,
                limit: DENSE_GUARD,
            });
        }
        let u_root = self.subtree_unfolding(0)?;
        debug_assert_eq!(u_root.ncols(), 1);
        DenseTensor::from_parts(dims, u_root.as_slice().to_vec())
    }

    /// Orthonormalize by pushing QR factors from the leaves toward the root.
    /// The represented tensor is unchanged; afterwards every non-root subtree
    /// unfolding has orthonormal columns.
    pub fn orthonormalize(&self) -> Result<TreeTensorNetwork> {
        let mut out = self.clone();
        // bottom-up: children before parents (reverse depth-first order)
        let order: Vec<usize> = (0..out.nodes.len()).rev().collect();
        let mut pushed: Vec<Option<CMat>> = vec![None; out.nodes.len()];
        for idx in order {
            // absorb child factors into the core first
            if !out.is_leaf(idx) {
                let children = out.nodes[idx].children.clone();
                let mut core = out.core(idx).clone();
                for (i, &ch) in children.iter().enumerate() {
                    if let Some(r) = pushed[ch].take() {
                        core = core.mode_product(&r, i + 1)?;
                    }
                }
                out.nodes[idx].payload = Payload::Core(core);
            }
            if idx == 0 {
                break;
            }
            match &out.nodes[idx].payload {
                Payload::Leaf { id, basis } => {
                    let (q, r) = qr_orthonormal(basis);
                    let id = *id;
                    out.nodes[idx].payload = Payload::Leaf { id, basis: q };
                    pushed[idx] = Some(r);
                }
                Payload::Core(core) => {
                    let m0t = core.matricize(0)?.transpose();
                    let (q, r) = qr_orthonormal(&m0t);
                    let mut shape = core.shape().to_vec();
                    shape[0] = q.ncols();
                    let new_core = DenseTensor::tensorize(&q.transpose(), 0, &shape)?;
                    out.nodes[idx].payload = Payload::Core(new_core);
                    pushed[idx] = Some(r);
                }
            }
        }
        Ok(out)
    }

    /// Gram-recursion orthonormality check: `‖U_τ^* U_τ − I‖_F` per non-root
    /// node, computed without densifying any unfolding.
    pub fn gram_residuals(&self) -> Vec<(NodePath, f64)> {
        let grams = self.subtree_grams();
        let mut out = Vec::new();
        for idx in 1..self.nodes.len() {
            let g = &grams[idx];
            let r = g.nrows();
            let resid = (g - CMat::identity(r, r)).norm();
            out.push((self.nodes[idx].path.clone(), resid));
        }
        out
    }

    /// `U_τ^* U_τ` for every node (identity-sized at the root's bond).
    pub(crate) fn subtree_grams(&self) -> Vec<CMat> {
        let mut grams: Vec<CMat> = vec![CMat::zeros(0, 0); self.nodes.len()];
        for idx in (0..self.nodes.len()).rev() {
            grams[idx] = match &self.nodes[idx].payload {
                Payload::Leaf { basis, .. } => basis.adjoint() * basis,
                Payload::Core(core) => {
                    let mut t = core.clone();
                    for (i, &ch) in self.nodes[idx].children.iter().enumerate() {
                        t = t
                            .mode_product(&grams[ch], i + 1)
                            .expect("gram contraction");
                    }
                    // G[a,b] = <core[a,..], t[b,..]> over all child modes
                    let ca = core.matricize(0).expect("matricize");
                    let ta = t.matricize(0).expect("matricize");
                    let g = ta * ca.adjoint();
                    g.transpose()
                }
            };
        }
        grams
    }

    /// Frobenius norm of the represented tensor, via the Gram recursion (no
    /// densification). For an orthonormal network this equals the root core
    /// norm.
    pub fn norm(&self) -> f64 {
        let grams = self.subtree_grams();
        let root_core = self.core(0);
        let mut t = root_core.clone();
        for (i, &ch) in self.nodes[0].children.iter().enumerate() {
            t = t.mode_product(&grams[ch], i + 1).expect("norm contraction");
        }
        inner(root_core, &t).re.max(0.0).sqrt()
    }

    /// Scale the represented tensor by `factor` (absorbed by the root core;
    /// orthonormality of the non-root gauges is untouched).
    pub fn scale(&self, factor: C64) -> TreeTensorNetwork {
        let mut out = self.clone();
        let scaled = out.core(0).scale(factor);
        out.nodes[0].payload = Payload::Core(scaled);
        out
    }

    /// Pad every bond to `target_rank` (capped by what the dimensions admit).
    /// Leaf bases gain orthonormal complement columns, internal cores stay
    /// isometric, and the new root-level directions receive singular weight
    /// `sigma` (exactly zero weight when `sigma == 0`, leaving the represented
    /// tensor unchanged).
    pub fn pad_ranks(&self, target_rank: usize, sigma: f64) -> Result<TreeTensorNetwork> {
        let mut out = self.clone();
        // bottom-up, non-root nodes
        for idx in (1..out.nodes.len()).rev() {
            let old_rank = out.rank(idx);
            let max_rank = padded_rank_cap(&out, idx);
            let new_rank = target_rank.clamp(old_rank, max_rank);
            match &out.nodes[idx].payload {
                Payload::Leaf { id, basis } => {
                    if new_rank > old_rank {
                        let grown = extend_orthonormal(basis, new_rank)?;
                        let id = *id;
                        out.nodes[idx].payload = Payload::Leaf { id, basis: grown };
                    }
                }
                Payload::Core(core) => {
                    // children were already padded; zero-fill their new slots
                    let children = out.nodes[idx].children.clone();
                    let child_ranks: Vec<usize> =
                        children.iter().map(|&c| out.rank(c)).collect();
                    let padded = pad_core(core, &child_ranks, new_rank)?;
                    out.nodes[idx].payload = Payload::Core(padded);
                }
            }
        }
        // root: zero-fill child slots, then place sigma on fresh directions
        let children = out.nodes[0].children.clone();
        let child_ranks: Vec<usize> = children.iter().map(|&c| out.rank(c)).collect();
        let root_core = out.core(0).clone();
        let mut padded = pad_core(&root_core, &child_ranks, 1)?;
        if sigma != 0.0 {
            let old_shape = root_core.shape().to_vec();
            let new_shape = padded.shape().to_vec();
            // one weight per fresh multi-index along the padded diagonal
            let extra = new_shape
                .iter()
                .zip(&old_shape)
                .skip(1)
                .map(|(n, o)| n - o)
                .max()
                .unwrap_or(0);
            for k in 0..extra {
                let mut idx_vec = vec![0usize; new_shape.len()];
                let mut fresh = false;
                for (m, i) in idx_vec.iter_mut().enumerate().skip(1) {
                    if old_shape[m] + k < new_shape[m] {
                        *i = old_shape[m] + k;
                        fresh = true;
                    } else {
                        *i = new_shape[m] - 1;
                    }
                }
                if fresh {
                    padded.set(&idx_vec, C64::new(sigma, 0.0));
                }
            }
        }
        out.nodes[0].payload = Payload::Core(padded);
        out.validate()?;
        Ok(out)
    }
}

/// Largest admissible padded rank for the edge above `idx`: the subtree
/// dimension below, and for internal nodes also the product of the (already
/// padded) child ranks so the unfolding can stay isometric.
fn padded_rank_cap(ttn: &TreeTensorNetwork, idx: usize) -> usize {
    match &ttn.nodes[idx].payload {
        Payload::Leaf { basis, .. } => basis.nrows(),
        Payload::Core(_) => {
            let child_prod: usize = ttn.nodes[idx]
                .children
                .iter()
                .map(|&c| ttn.rank(c))
                .product();
            child_prod.min(ttn.subtree_dim(idx)).min(1 << 20)
        }
    }
}

/// Extend an orthonormal basis with deterministic complement columns.
fn extend_orthonormal(basis: &CMat, target: usize) -> Result<CMat> {
    let n = basis.nrows();
    let target = target.min(n);
    if target <= basis.ncols() {
        return Ok(basis.clone());
    }
    let mut current = basis.clone();
    for j in 0..n {
        if current.ncols() >= target {
            break;
        }
        let mut e = CMat::zeros(n, 1);
        e[(j, 0)] = C64::new(1.0, 0.0);
        let grown = crate::tensor::orthonormal_basis_union(&current, &e)?;
        current = grown;
    }
    if current.ncols() < target {
        return Err(Error::InvalidArgument(format!(
            "cannot extend basis to rank {target}"
        )));
    }
    Ok(current.columns(0, target).into_owned())
}

/// Zero-pad a connecting tensor to new child ranks and (for non-root nodes)
/// extend the mode-0 isometry with unit columns routed through fresh child
/// indices.
fn pad_core(
    core: &DenseTensor,
    new_child_ranks: &[usize],
    new_rank0: usize,
) -> Result<DenseTensor> {
    let old_shape = core.shape().to_vec();
    let mut new_shape = vec![old_shape[0].max(new_rank0)];
    new_shape.extend_from_slice(new_child_ranks);
    let mut out = DenseTensor::zeros(&new_shape);
    // copy the old block
    let mut idx = vec![0usize; old_shape.len()];
    for flat in 0..core.len() {
        out.set(&idx, core.data()[flat]);
        for (k, i) in idx.iter_mut().enumerate() {
            *i += 1;
            if *i < old_shape[k] {
                break;
            }
            *i = 0;
        }
    }
    // fresh mode-0 columns: unit entries at multi-indices with at least one
    // new child coordinate, keeping the unfolding isometric. Combinations
    // touching more new child indices come first so the fresh directions of
    // every child edge receive weight from above.
    let extra0 = new_shape[0] - old_shape[0];
    if extra0 > 0 {
        let mut candidates: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut cursor = vec![0usize; new_child_ranks.len()];
        'outer: loop {
            let new_coords = cursor
                .iter()
                .zip(old_shape.iter().skip(1))
                .filter(|(c, o)| *c >= *o)
                .count();
            if new_coords > 0 {
                candidates.push((new_coords, cursor.clone()));
            }
            let mut k = 0;
            loop {
                cursor[k] += 1;
                if cursor[k] < new_child_ranks[k] {
                    break;
                }
                cursor[k] = 0;
                k += 1;
                if k == cursor.len() {
                    break 'outer;
                }
            }
        }
        candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        if candidates.len() < extra0 {
            return Err(Error::InvalidArgument(
                "not enough fresh directions to pad the bond".into(),
            ));
        }
        for (k, (_, combo)) in candidates.iter().take(extra0).enumerate() {
            let mut idx_vec = vec![old_shape[0] + k];
            idx_vec.extend_from_slice(combo);
            out.set(&idx_vec, C64::new(1.0, 0.0));
        }
    }
    DenseTensor::from_parts(new_shape, out.data().to_vec())
}
