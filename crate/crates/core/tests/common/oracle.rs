use covers_core::equivariant::solve_equivariant_basis;
use covers_core::group::{GroupSpec, Representation};
use covers_core::transport::{w1_distance, FeatureCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rank by Gaussian elimination with partial pivoting.
pub fn rank(mut a: Vec<Vec<f64>>) -> usize {
    let cols = a.first().map_or(0, Vec::len);
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..a.len()).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())) else {
            break;
        };
        if a[p][c].abs() < 1e-9 {
            continue;
        }
        a.swap(r, p);
        for i in 0..a.len() {
            if i != r {
                let f = a[i][c] / a[r][c];
                for k in c..cols {
                    a[i][k] -= f * a[r][k];
                }
            }
        }
        r += 1;
    }
    r
}

fn matrix(rep: &Representation, el: usize) -> Vec<Vec<f64>> {
    let g = rep.group.element(el).unwrap();
    let m = rep.rep_matrix(g).unwrap();
    (0..rep.dimension).map(|r| (0..rep.dimension).map(|c| m.get(r, c) as f64).collect()).collect()
}

/// `dim Hom_G` as `d_in·d_out` minus the rank of `ρ_out(g)W − Wρ_in(g) = 0`
/// stacked over every group element.
pub fn brute_force_dim(rin: &Representation, rout: &Representation) -> usize {
    let (di, dout) = (rin.dimension, rout.dimension);
    let n = di * dout;
    let mut rows = Vec::new();
    for el in 0..rin.group.order() {
        let (a, b) = (matrix(rout, el), matrix(rin, el));
        for o in 0..dout {
            for i in 0..di {
                let mut row = vec![0.0; n];
                for k in 0..dout {
                    row[k * di + i] += a[o][k];
                }
                for k in 0..di {
                    row[o * di + k] -= b[k][i];
                }
                rows.push(row);
            }
        }
    }
    n - rank(rows)
}

/// The 16 irrep pairs of D2 first, then regular/trivial/mixed combinations.
pub fn basis_cases() -> Vec<(Representation, Representation)> {
    let g = GroupSpec::d2();
    let irreps = Representation::characters(g);
    let mut pairs = Vec::new();
    for a in &irreps {
        for b in &irreps {
            pairs.push((a.clone(), b.clone()));
        }
    }
    let reg = Representation::regular(g);
    let triv = Representation::trivial(g);
    let mixed = Representation::direct_sum(vec![irreps[1].clone(), reg.clone(), irreps[3].clone()]).unwrap();
    pairs.push((reg.clone(), reg.clone()));
    pairs.push((triv.clone(), reg.clone()));
    pairs.push((reg.clone(), triv));
    pairs.push((mixed.clone(), reg.repeat(2).unwrap()));
    pairs.push((reg, mixed));
    pairs
}

/// Checks every basis case against the brute-force dimension, that each
/// returned matrix commutes with the group, and that the set is
/// independent. Returns the number of cases checked.
pub fn check_bases() -> Result<usize, String> {
    let cases = basis_cases();
    for (i, (rin, rout)) in cases.iter().enumerate() {
        let basis = solve_equivariant_basis(rin, rout).map_err(|e| e.to_string())?;
        let want = brute_force_dim(rin, rout);
        if basis.len() != want {
            return Err(format!("pair {i}: {} basis matrices, brute force says {want}", basis.len()));
        }
        if i < 16 && want != usize::from(i / 4 == i % 4) {
            return Err(format!("irrep pair {i} has intertwiner dimension {want}"));
        }
        for w in &basis {
            for el in 0..rin.group.order() {
                let (a, b) = (matrix(rout, el), matrix(rin, el));
                for o in 0..rout.dimension {
                    for c in 0..rin.dimension {
                        let lhs: f64 = (0..rout.dimension).map(|k| a[o][k] * w.get(k, c)).sum();
                        let rhs: f64 = (0..rin.dimension).map(|k| w.get(o, k) * b[k][c]).sum();
                        if (lhs - rhs).abs() > 1e-9 {
                            return Err(format!("pair {i}: basis matrix does not commute with element {el}"));
                        }
                    }
                }
            }
        }
        if rank(basis.iter().map(|m| m.data.clone()).collect()) != basis.len() {
            return Err(format!("pair {i}: basis is not independent"));
        }
    }
    let reg = Representation::regular(GroupSpec::d2());
    let n = solve_equivariant_basis(&reg, &reg).map_err(|e| e.to_string())?.len();
    if n != 4 {
        return Err(format!("regular to regular has {n} basis matrices"));
    }
    Ok(cases.len())
}

/// Exact W1 by enumerating the vertices of the transportation polytope:
/// every vertex is the unique feasible point of some spanning-tree support.
pub fn w1_by_vertices(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let (n, m) = (x.len(), y.len());
    let cost: Vec<f64> = x
        .iter()
        .flat_map(|a| y.iter().map(move |b| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()))
        .collect();
    let cells = n * m;
    let k = n + m - 1;
    let mut best = f64::INFINITY;
    let mut support = Vec::with_capacity(k);
    fn choose(start: usize, cells: usize, k: usize, support: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if support.len() == k {
            visit(support);
            return;
        }
        for c in start..cells {
            if cells - c < k - support.len() {
                break;
            }
            support.push(c);
            choose(c + 1, cells, k, support, visit);
            support.pop();
        }
    }
    choose(0, cells, k, &mut support, &mut |s| {
        if let Some(flow) = basic_solution(n, m, s) {
            if flow.iter().all(|&f| f >= -1e-12) {
                best = best.min(s.iter().zip(&flow).map(|(&e, f)| f * cost[e]).sum());
            }
        }
    });
    best
}

/// Unique solution of the marginal equations restricted to `support`, if
/// the support columns are independent and the system is consistent.
fn basic_solution(n: usize, m: usize, support: &[usize]) -> Option<Vec<f64>> {
    let k = support.len();
    // rows: n source marginals then m sink marginals; last column is the rhs
    let mut a: Vec<Vec<f64>> = (0..n + m)
        .map(|r| {
            let mut row: Vec<f64> = support
                .iter()
                .map(|&e| f64::from(u8::from(if r < n { e / m == r } else { e % m == r - n })))
                .collect();
            row.push(if r < n { 1.0 / n as f64 } else { 1.0 / m as f64 });
            row
        })
        .collect();
    let mut piv = 0;
    for c in 0..k {
        let p = (piv..a.len()).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(piv, p);
        let lead = a[piv][c];
        for v in a[piv].iter_mut() {
            *v /= lead;
        }
        for i in 0..a.len() {
            if i != piv && a[i][c] != 0.0 {
                let f = a[i][c];
                for col in 0..=k {
                    a[i][col] -= f * a[piv][col];
                }
            }
        }
        piv += 1;
    }
    if a[piv..].iter().any(|r| r[k].abs() > 1e-12) {
        return None;
    }
    Some((0..k).map(|i| a[i][k]).collect())
}

pub fn cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

pub fn w1(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    w1_distance(&FeatureCloud::new(x).unwrap(), &FeatureCloud::new(y).unwrap()).unwrap().0
}

/// Largest gap between the simplex and vertex enumeration over random
/// clouds with up to 4 points each.
pub fn simplex_vs_vertices(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=4);
        let d = rng.random_range(1..=3);
        let (x, y) = (cloud(&mut rng, n, d), cloud(&mut rng, m, d));
        worst = worst.max((w1(&x, &y) - w1_by_vertices(&x, &y)).abs());
    }
    worst
}

/// Largest violation of identity, symmetry, non-negativity or the triangle
/// inequality over random triples of clouds.
pub fn metric_axiom_violation(triples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..triples {
        let d = rng.random_range(1..=4);
        let sizes: Vec<usize> = (0..3).map(|_| rng.random_range(1..=6)).collect();
        let (a, b, c) = (cloud(&mut rng, sizes[0], d), cloud(&mut rng, sizes[1], d), cloud(&mut rng, sizes[2], d));
        let (ab, ba, bc, ac) = (w1(&a, &b), w1(&b, &a), w1(&b, &c), w1(&a, &c));
        worst = worst.max(w1(&a, &a).abs()).max((ab - ba).abs()).max(-ab).max(ac - ab - bc);
    }
    worst
}
