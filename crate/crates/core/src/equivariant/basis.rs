//! Numerical bases of equivariant linear maps.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::group::Representation;

/// Relative singular-value cutoff for the nullspace.
pub const NULLSPACE_TOLERANCE: f64 = 1e-8;

/// Dense `rows x cols` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn frobenius_dot(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Stacked constraint matrix `ρ_out(g) W - W ρ_in(g) = 0` over the
/// generators, acting on row-major `vec(W)` (`W` is `d_out x d_in`).
pub fn constraint_matrix(rep_in: &Representation, rep_out: &Representation) -> Result<(Vec<i64>, usize, usize)> {
    if rep_in.group != rep_out.group {
        return Err(Error::GroupMismatch(
            rep_in.group.to_string(),
            rep_out.group.to_string(),
        ));
    }
    let (di, dout) = (rep_in.dimension, rep_out.dimension);
    let n = di * dout;
    let gens = rep_in.group.generators();
    let rows = gens.len() * n;
    let mut c = vec![0i64; rows * n];
    for (gi, g) in gens.iter().enumerate() {
        let ri = rep_in.rep_matrix(*g)?;
        let ro = rep_out.rep_matrix(*g)?;
        for o in 0..dout {
            for i in 0..di {
                let row = gi * n + o * di + i;
                // (ρ_out W)[o,i] = Σ_a ρ_out[o,a] W[a,i]
                for a in 0..dout {
                    c[row * n + a * di + i] += ro.get(o, a) as i64;
                }
                // (W ρ_in)[o,i] = Σ_b W[o,b] ρ_in[b,i]
                for b in 0..di {
                    c[row * n + o * di + b] -= ri.get(b, i) as i64;
                }
            }
        }
    }
    Ok((c, rows, n))
}

/// Orthonormal basis (Frobenius inner product) of
/// `{W : ρ_out(g) W = W ρ_in(g) for all g}`, from the right singular vectors
/// of the stacked constraints. Each basis matrix has its first significant
/// entry positive.
pub fn solve_equivariant_basis(rep_in: &Representation, rep_out: &Representation) -> Result<Vec<Matrix>> {
    let (c, rows, n) = constraint_matrix(rep_in, rep_out)?;
    if c.iter().all(|&v| v == 0) {
        // every map commutes; use the standard basis
        return Ok((0..n)
            .map(|k| {
                let mut data = vec![0.0; n];
                data[k] = 1.0;
                Matrix {
                    rows: rep_out.dimension,
                    cols: rep_in.dimension,
                    data,
                }
            })
            .collect());
    }
    let mat = DMatrix::from_fn(rows, n, |r, col| c[r * n + col] as f64);
    let svd = mat.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = NULLSPACE_TOLERANCE * smax;
    let mut basis = Vec::new();
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            continue;
        }
        let mut data: Vec<f64> = v_t.row(k).iter().copied().collect();
        if let Some(&lead) = data.iter().find(|v| v.abs() > 1e-9) {
            if lead < 0.0 {
                data.iter_mut().for_each(|v| *v = -*v);
            }
        }
        // snap round-off so exact zeros stay zero
        data.iter_mut().for_each(|v| {
            if v.abs() < 1e-13 {
                *v = 0.0
            }
        });
        basis.push(Matrix {
            rows: rep_out.dimension,
            cols: rep_in.dimension,
            data,
        });
    }
    Ok(basis)
}

/// Equivariant maps between two direct sums, solved block by block over
/// pairs of summands. Returns `(out_offset, in_offset, basis)` per block.
pub(crate) fn block_bases(
    rep_in: &Representation,
    rep_out: &Representation,
) -> Result<Vec<(usize, usize, Vec<Matrix>)>> {
    let mut cache: Vec<(Representation, Representation, Vec<Matrix>)> = Vec::new();
    let mut out = Vec::new();
    let mut o_off = 0;
    for so in rep_out.summands() {
        let mut i_off = 0;
        for si in rep_in.summands() {
            let hit = cache.iter().find(|(a, b, _)| a == si && b == so).map(|(_, _, m)| m.clone());
            let basis = match hit {
                Some(b) => b,
                None => {
                    let b = solve_equivariant_basis(si, so)?;
                    cache.push((si.clone(), so.clone(), b.clone()));
                    b
                }
            };
            if !basis.is_empty() {
                out.push((o_off, i_off, basis));
            }
            i_off += si.dimension;
        }
        o_off += so.dimension;
    }
    Ok(out)
}
