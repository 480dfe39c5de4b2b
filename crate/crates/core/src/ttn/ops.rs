//! Linear operators in sum-of-Kronecker-products form: each term carries one
//! square factor per leaf (identity where absent) and a scalar coefficient.

use crate::tensor::{Error, Result};
use crate::{C64, CMat, DenseTensor};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct ProductTerm {
    pub coefficient: C64,
    /// Per-leaf square factors keyed by leaf id; leaves without an entry act
    /// as identity.
    pub factors: BTreeMap<usize, CMat>,
}

#[derive(Debug, Clone)]
pub struct SumOfProductsOperator {
    leaf_dims: BTreeMap<usize, usize>,
    terms: Vec<ProductTerm>,
}

impl SumOfProductsOperator {
    pub fn new(leaf_dims: BTreeMap<usize, usize>) -> Self {
        SumOfProductsOperator {
            leaf_dims,
            terms: Vec::new(),
        }
    }

    pub fn leaf_dims(&self) -> &BTreeMap<usize, usize> {
        &self.leaf_dims
    }

    pub fn terms(&self) -> &[ProductTerm] {
        &self.terms
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn add_term(
        &mut self,
        coefficient: C64,
        factors: BTreeMap<usize, CMat>,
    ) -> Result<()> {
        for (leaf, m) in &factors {
            let dim = self.leaf_dims.get(leaf).ok_or_else(|| {
                Error::InvalidArgument(format!("unknown leaf id {leaf} in operator term"))
            })?;
            if m.nrows() != *dim || m.ncols() != *dim {
                return Err(Error::ShapeMismatch(format!(
                    "factor for leaf {leaf} is {}x{}, expected {dim}x{dim}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        self.terms.push(ProductTerm {
            coefficient,
            factors,
        });
        Ok(())
    }

    /// Factor of term `q` at `leaf`, or `None` when the term acts as identity
    /// there.
    pub fn factor(&self, q: usize, leaf: usize) -> Option<&CMat> {
        self.terms[q].factors.get(&leaf)
    }

    /// Scale every term coefficient by `c`.
    pub fn scaled(&self, c: C64) -> SumOfProductsOperator {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.coefficient *= c;
        }
        out
    }

    /// Apply to a dense tensor whose modes are the leaves listed in
    /// `leaf_order` (mode k holds leaf `leaf_order[k]`).
    pub fn apply_dense(&self, y: &DenseTensor, leaf_order: &[usize]) -> Result<DenseTensor> {
        if leaf_order.len() != y.order() {
            return Err(Error::ShapeMismatch(format!(
                "operator application: {} leaf modes for order-{} tensor",
                leaf_order.len(),
                y.order()
            )));
        }
        let mut out = DenseTensor::zeros(y.shape());
        for term in &self.terms {
            let mut t = y.clone();
            for (mode, leaf) in leaf_order.iter().enumerate() {
                if let Some(f) = term.factors.get(leaf) {
                    t = t.mode_product(f, mode)?;
                }
            }
            out = out.add(&t.scale(term.coefficient))?;
        }
        Ok(out)
    }

    /// Dense matrix of the whole operator with the first leaf in `leaf_order`
    /// as the fastest index. Test/oracle use only; guarded by the total size.
    pub fn dense_matrix(&self, leaf_order: &[usize]) -> Result<CMat> {
        let total: usize = leaf_order
            .iter()
            .map(|l| self.leaf_dims[l])
            .product();
        if total > 1 << 14 {
            return Err(Error::SizeGuard {
                size: total,
                limit: 1 << 14,
            });
        }
        let mut out = CMat::zeros(total, total);
        for term in &self.terms {
            // kron with the later (slower) leaf as the left factor
            let mut acc = CMat::identity(1, 1);
            for leaf in leaf_order.iter().rev() {
                let dim = self.leaf_dims[leaf];
                let f = term
                    .factors
                    .get(leaf)
                    .cloned()
                    .unwrap_or_else(|| CMat::identity(dim, dim));
                acc = crate::tensor::kron(&acc, &f);
            }
            out += acc * term.coefficient;
        }
        Ok(out)
    }
}
