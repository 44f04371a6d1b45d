//! Exact 1-Wasserstein distance between uniformly weighted point clouds.
//!
//! The transportation problem is solved with the transportation simplex
//! (network simplex on the complete bipartite graph). Masses are scaled to
//! integers, `m` units per source and `n` per sink, so every pivot is exact.

use std::collections::VecDeque;

use crate::assignment::FrameBuffer;
use crate::equivariant::ObsBatch;
use crate::error::{Error, Result};
use crate::policy::PolicyBundle;

/// Rows `X_i` with uniform weights `1/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCloud {
    pub n: usize,
    pub dim: usize,
    pub points: Vec<f64>,
}

impl FeatureCloud {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("feature cloud"))?;
        let dim = first.len();
        let mut points = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::Shape("cloud rows differ in length".into()));
            }
            points.extend_from_slice(r);
        }
        Self::from_flat(rows.len(), dim, points)
    }

    pub fn from_flat(n: usize, dim: usize, points: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("feature cloud"));
        }
        if points.len() != n * dim {
            return Err(Error::Shape(format!("{} values for {n} points of dimension {dim}", points.len())));
        }
        if !points.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature cloud"));
        }
        Ok(Self { n, dim, points })
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

/// Optimal plan `γ_plan` (row-major `n x m`) and its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub n: usize,
    pub m: usize,
    pub plan: Vec<f64>,
    pub cost: f64,
}

/// `M[i][l] = ‖X_i − Y_l‖₂`, row-major.
pub fn cost_matrix(x: &FeatureCloud, y: &FeatureCloud) -> Result<Vec<f64>> {
    if x.dim != y.dim {
        return Err(Error::Shape(format!("feature dimensions {} and {}", x.dim, y.dim)));
    }
    let mut out = Vec::with_capacity(x.n * y.n);
    for i in 0..x.n {
        let a = x.point(i);
        for l in 0..y.n {
            let b = y.point(l);
            out.push(a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt());
        }
    }
    Ok(out)
}

pub fn w1_distance(x: &FeatureCloud, y: &FeatureCloud) -> Result<(f64, TransportPlan)> {
    let cost = cost_matrix(x, y)?;
    let (n, m) = (x.n, y.n);
    let flow = transportation_simplex(n, m, &vec![m as u64; n], &vec![n as u64; m], &cost);
    let total = (n * m) as f64;
    let plan: Vec<f64> = flow.iter().map(|&f| f as f64 / total).collect();
    let value = plan.iter().zip(&cost).map(|(p, c)| p * c).sum::<f64>().max(0.0);
    Ok((
        value,
        TransportPlan {
            n,
            m,
            plan,
            cost: value,
        },
    ))
}

/// After this many consecutive degenerate pivots the entering rule switches
/// from most-negative reduced cost to the first eligible cell.
const DEGENERATE_LIMIT: usize = 50;

/// Minimum-cost integer flow for balanced `supply`/`demand`; returns the
/// row-major flow matrix.
pub fn transportation_simplex(n: usize, m: usize, supply: &[u64], demand: &[u64], cost: &[f64]) -> Vec<u64> {
    debug_assert_eq!(supply.iter().sum::<u64>(), demand.iter().sum::<u64>());
    let mut flow = vec![0u64; n * m];
    let mut basic = vec![false; n * m];
    // north-west corner start: n + m - 1 basic cells forming a spanning tree
    let (mut s, mut d) = (supply.to_vec(), demand.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let q = s[i].min(d[j]);
        flow[i * m + j] = q;
        basic[i * m + j] = true;
        s[i] -= q;
        d[j] -= q;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if s[i] == 0 && i < n - 1 {
            i += 1;
        } else {
            j += 1;
        }
    }

    let scale = cost.iter().fold(1.0f64, |a, &c| a.max(c.abs()));
    let tol = 1e-12 * scale;
    let mut degenerate_run = 0;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    loop {
        potentials(n, m, &basic, cost, &mut u, &mut v);
        let bland = degenerate_run >= DEGENERATE_LIMIT;
        let mut enter = None;
        let mut best = -tol;
        'scan: for a in 0..n {
            for b in 0..m {
                let e = a * m + b;
                if basic[e] {
                    continue;
                }
                let r = cost[e] - u[a] - v[b];
                if r < best {
                    enter = Some(e);
                    if bland {
                        break 'scan;
                    }
                    best = r;
                }
            }
        }
        let Some(e) = enter else { break };
        let cycle = tree_path(n, m, &basic, e / m, e % m);
        // cycle[0] is the entering cell (+); signs alternate along it
        let mut leave = None;
        let mut theta = u64::MAX;
        for (k, &c) in cycle.iter().enumerate() {
            if k % 2 == 1 && (flow[c] < theta || (flow[c] == theta && leave.is_some_and(|l| c < l))) {
                theta = flow[c];
                leave = Some(c);
            }
        }
        let leave = leave.expect("cycle has a minus cell");
        for (k, &c) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                flow[c] += theta;
            } else {
                flow[c] -= theta;
            }
        }
        basic[e] = true;
        basic[leave] = false;
        degenerate_run = if theta == 0 { degenerate_run + 1 } else { 0 };
    }
    flow
}

/// Solves `u_i + v_j = c_ij` over the basis tree with `u_0 = 0`.
fn potentials(n: usize, m: usize, basic: &[bool], cost: &[f64], u: &mut [f64], v: &mut [f64]) {
    let mut seen_r = vec![false; n];
    let mut seen_c = vec![false; m];
    seen_r[0] = true;
    u[0] = 0.0;
    // nodes 0..n are rows, n..n+m columns
    let mut queue = VecDeque::from([0usize]);
    while let Some(node) = queue.pop_front() {
        if node < n {
            for b in 0..m {
                if basic[node * m + b] && !seen_c[b] {
                    seen_c[b] = true;
                    v[b] = cost[node * m + b] - u[node];
                    queue.push_back(n + b);
                }
            }
        } else {
            let b = node - n;
            for a in 0..n {
                if basic[a * m + b] && !seen_r[a] {
                    seen_r[a] = true;
                    u[a] = cost[a * m + b] - v[b];
                    queue.push_back(a);
                }
            }
        }
    }
}

/// Cells of the cycle closed by entering `(r, c)`: the entering cell, then
/// the tree path from column `c` back to row `r`.
fn tree_path(n: usize, m: usize, basic: &[bool], r: usize, c: usize) -> Vec<usize> {
    let total = n + m;
    let mut prev = vec![usize::MAX; total];
    let start = n + c;
    prev[start] = start;
    let mut queue = VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == r {
            break;
        }
        if node < n {
            for b in 0..m {
                if basic[node * m + b] && prev[n + b] == usize::MAX {
                    prev[n + b] = node;
                    queue.push_back(n + b);
                }
            }
        } else {
            let b = node - n;
            for a in 0..n {
                if basic[a * m + b] && prev[a] == usize::MAX {
                    prev[a] = node;
                    queue.push_back(a);
                }
            }
        }
    }
    let mut cells = vec![r * m + c];
    let mut node = r;
    while node != start {
        let p = prev[node];
        let (row, col) = if node < n { (node, p - n) } else { (p, node - n) };
        cells.push(row * m + col);
        node = p;
    }
    cells
}

/// `d^W(O, B)` through `bundle`'s own extractor and group pooling.
pub fn buffer_distance(o: &FrameBuffer, b: &FrameBuffer, bundle: &PolicyBundle) -> Result<f64> {
    if o.is_empty() || b.is_empty() {
        return Err(Error::Empty("frame buffer"));
    }
    let x = invariant_cloud(o, bundle)?;
    let y = invariant_cloud(b, bundle)?;
    Ok(w1_distance(&x, &y)?.0)
}

pub fn invariant_cloud(frames: &FrameBuffer, bundle: &PolicyBundle) -> Result<FeatureCloud> {
    let batch = ObsBatch::new(&frames.frames().collect::<Vec<_>>())?;
    let rows = bundle.extractor().invariant_features(&bundle.store, &batch, bundle.group)?;
    FeatureCloud::new(&rows)
}
