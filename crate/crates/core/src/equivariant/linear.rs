use std::sync::Arc;

use super::basis::{block_bases, Matrix};
use crate::diff::{FieldTensor, Graph, ParamId, ParamStore, SparseMap, Var};
use crate::error::Result;
use crate::group::Representation;

/// `W = Σ c_i B_i` over an orthonormal basis of equivariant maps, plus a bias
/// restricted to the invariant vectors of `rep_out`.
#[derive(Debug, Clone)]
pub struct EquivariantLinear {
    pub rep_in: Representation,
    pub rep_out: Representation,
    weight_map: Arc<SparseMap>,
    bias_map: Option<Arc<SparseMap>>,
    coef: ParamId,
    bias_coef: Option<ParamId>,
}

fn sparse_from_blocks(
    blocks: &[(usize, usize, Vec<Matrix>)],
    out_cols: usize,
    out_len: usize,
) -> (SparseMap, usize) {
    let mut entries = Vec::new();
    let mut k = 0;
    for (o_off, i_off, basis) in blocks {
        for b in basis {
            for r in 0..b.rows {
                for c in 0..b.cols {
                    let v = b.get(r, c);
                    if v != 0.0 {
                        entries.push(((o_off + r) * out_cols + i_off + c, k, v));
                    }
                }
            }
            k += 1;
        }
    }
    (
        SparseMap {
            out_len,
            in_len: k,
            entries,
        },
        k,
    )
}

impl EquivariantLinear {
    /// `gain` scales the initial weight variance (2 before a ReLU, 1 otherwise).
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        rep_in: Representation,
        rep_out: Representation,
        gain: f64,
    ) -> Result<Self> {
        let (din, dout) = (rep_in.dimension, rep_out.dimension);
        let blocks = block_bases(&rep_in, &rep_out)?;
        let (weight_map, k) = sparse_from_blocks(&blocks, din, din * dout);
        // average per-entry variance of W becomes gain / d_in
        let std = if k > 0 {
            (gain / din as f64 * (din * dout) as f64 / k as f64).sqrt()
        } else {
            0.0
        };
        let coef = store.add_normal(format!("{name}.coef"), vec![k], std);

        let triv = Representation::trivial(rep_out.group);
        let bias_blocks = block_bases(&triv, &rep_out)?;
        let (bias_map, kb) = sparse_from_blocks(&bias_blocks, 1, dout);
        let (bias_map, bias_coef) = if kb > 0 {
            let id = store.add_constant(format!("{name}.bias"), vec![kb], 0.0);
            (Some(Arc::new(bias_map)), Some(id))
        } else {
            (None, None)
        };
        Ok(Self {
            rep_in,
            rep_out,
            weight_map: Arc::new(weight_map),
            bias_map,
            coef,
            bias_coef,
        })
    }

    pub fn num_coefficients(&self) -> usize {
        self.weight_map.in_len
    }

    /// Realized weight matrix `[d_out, d_in]`.
    pub fn weight(&self, store: &ParamStore) -> FieldTensor {
        let c = &store.value(self.coef).values;
        let mut w = vec![0.0; self.weight_map.out_len];
        for &(r, k, v) in &self.weight_map.entries {
            w[r] += v * c[k];
        }
        FieldTensor::new(vec![self.rep_out.dimension, self.rep_in.dimension], w).expect("sized")
    }

    pub fn bias(&self, store: &ParamStore) -> Vec<f64> {
        let mut b = vec![0.0; self.rep_out.dimension];
        if let (Some(map), Some(id)) = (&self.bias_map, self.bias_coef) {
            let c = &store.value(id).values;
            for &(r, k, v) in &map.entries {
                b[r] += v * c[k];
            }
        }
        b
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (din, dout) = (self.rep_in.dimension, self.rep_out.dimension);
        let c = g.param(store, self.coef);
        let w = g.sparse(c, self.weight_map.clone(), vec![dout, din])?;
        let b = match (&self.bias_map, self.bias_coef) {
            (Some(map), Some(id)) => {
                let bc = g.param(store, id);
                g.sparse(bc, map.clone(), vec![dout])?
            }
            _ => g.input(FieldTensor::zeros(vec![dout])),
        };
        g.affine(x, w, b)
    }
}

/// Unconstrained fully connected layer.
#[derive(Debug, Clone)]
pub struct Dense {
    pub d_in: usize,
    pub d_out: usize,
    w: ParamId,
    b: ParamId,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, gain: f64) -> Self {
        let w = store.add_normal(format!("{name}.w"), vec![d_out, d_in], (gain / d_in as f64).sqrt());
        let b = store.add_constant(format!("{name}.b"), vec![d_out], 0.0);
        Self { d_in, d_out, w, b }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.affine(x, w, b)
    }
}
