//! Network snapshots: a self-describing JSON format recording the tree shape,
//! ranks and factor data. Finite f64 values round-trip exactly through the
//! shortest-representation encoder, so snapshots are bit-faithful.

use super::{TreeTensorNetwork, TtnNodeDef};
use crate::tensor::{Error, Result};
use crate::{C64, CMat, DenseTensor};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const SNAPSHOT_FORMAT: &str = "ttn-snapshot-v1";

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorRepr {
    shape: Vec<usize>,
    re: Vec<f64>,
    im: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum NodeRepr {
    Leaf {
        id: usize,
        basis: MatrixRepr,
    },
    Internal {
        core: TensorRepr,
        children: Vec<NodeRepr>,
    },
}

#[derive(Serialize, Deserialize)]
struct SnapshotRepr {
    format: String,
    root: NodeRepr,
}

fn matrix_repr(m: &CMat) -> MatrixRepr {
    MatrixRepr {
        rows: m.nrows(),
        cols: m.ncols(),
        re: m.iter().map(|z| z.re).collect(),
        im: m.iter().map(|z| z.im).collect(),
    }
}

fn matrix_from(r: &MatrixRepr) -> Result<CMat> {
    if r.re.len() != r.rows * r.cols || r.im.len() != r.re.len() {
        return Err(Error::ShapeMismatch("snapshot matrix length".into()));
    }
    let data: Vec<C64> = r
        .re
        .iter()
        .zip(&r.im)
        .map(|(&re, &im)| C64::new(re, im))
        .collect();
    Ok(CMat::from_vec(r.rows, r.cols, data))
}

fn tensor_repr(t: &DenseTensor) -> TensorRepr {
    TensorRepr {
        shape: t.shape().to_vec(),
        re: t.data().iter().map(|z| z.re).collect(),
        im: t.data().iter().map(|z| z.im).collect(),
    }
}

fn tensor_from(r: &TensorRepr) -> Result<DenseTensor> {
    let data: Vec<C64> = r
        .re
        .iter()
        .zip(&r.im)
        .map(|(&re, &im)| C64::new(re, im))
        .collect();
    DenseTensor::from_parts(r.shape.clone(), data)
}

fn node_repr(def: &TtnNodeDef) -> NodeRepr {
    match def {
        TtnNodeDef::Leaf { id, basis } => NodeRepr::Leaf {
            id: *id,
            basis: matrix_repr(basis),
        },
        TtnNodeDef::Internal { core, children } => NodeRepr::Internal {
            core: tensor_repr(core),
            children: children.iter().map(node_repr).collect(),
        },
    }
}

fn node_from(r: &NodeRepr) -> Result<TtnNodeDef> {
    Ok(match r {
        NodeRepr::Leaf { id, basis } => TtnNodeDef::Leaf {
            id: *id,
            basis: matrix_from(basis)?,
        },
        NodeRepr::Internal { core, children } => TtnNodeDef::Internal {
            core: tensor_from(core)?,
            children: children
                .iter()
                .map(node_from)
                .collect::<Result<Vec<_>>>()?,
        },
    })
}

/// Serialize a network into the snapshot format.
pub fn write_snapshot(ttn: &TreeTensorNetwork, w: impl Write) -> Result<()> {
    let repr = SnapshotRepr {
        format: SNAPSHOT_FORMAT.to_string(),
        root: node_repr(&ttn.to_def()),
    };
    serde_json::to_writer(w, &repr)
        .map_err(|e| Error::InvalidArgument(format!("snapshot write: {e}")))
}

/// Read a network back from the snapshot format.
pub fn read_snapshot(r: impl Read) -> Result<TreeTensorNetwork> {
    let repr: SnapshotRepr = serde_json::from_reader(r)
        .map_err(|e| Error::InvalidArgument(format!("snapshot read: {e}")))?;
    if repr.format != SNAPSHOT_FORMAT {
        return Err(Error::InvalidArgument(format!(
            "unsupported snapshot format {:?}",
            repr.format
        )));
    }
    TreeTensorNetwork::from_def(node_from(&repr.root)?)
}
