//! Independent oracles: brute-force constraint ranks for the equivariant
//! basis solver, and transportation-polytope vertex enumeration for W1.

mod common;

use common::oracle::{check_bases, cloud, metric_axiom_violation, simplex_vs_vertices, w1};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn basis_dimensions_match_brute_force() {
    assert_eq!(check_bases(), Ok(21));
}

#[test]
fn simplex_matches_vertex_enumeration() {
    let gap = simplex_vs_vertices(100);
    assert!(gap < 1e-9, "largest gap {gap:e}");
}

#[test]
fn metric_axioms() {
    let v = metric_axiom_violation(100);
    assert!(v < 1e-9, "violation {v:e}");
}

#[test]
fn duplicated_points_do_not_change_the_distance() {
    // a cloud and the same cloud listed twice describe one distribution
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = cloud(&mut rng, 3, 2);
    let b = cloud(&mut rng, 4, 2);
    let aa: Vec<_> = a.iter().chain(&a).cloned().collect();
    assert!((w1(&a, &b) - w1(&aa, &b)).abs() < 1e-9);
    assert!(w1(&a, &aa).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scales_and_translates(
        pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 2..7),
        split in 1usize..6,
        s in 0.1f64..5.0,
        shift in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let split = split.min(pts.len() - 1);
        let (x, y) = pts.split_at(split);
        let base = w1(x, y);
        let scale = |c: &[Vec<f64>]| c.iter().map(|p| p.iter().map(|v| v * s).collect()).collect::<Vec<Vec<f64>>>();
        let move_ = |c: &[Vec<f64>]| c.iter().map(|p| p.iter().zip(&shift).map(|(v, t)| v + t).collect()).collect::<Vec<Vec<f64>>>();
        prop_assert!((w1(&scale(x), &scale(y)) - s * base).abs() < 1e-9 * (1.0 + s * base));
        prop_assert!((w1(&move_(x), &move_(y)) - base).abs() < 1e-9 * (1.0 + base));
    }

    #[test]
    fn bounded_by_mean_shift_and_pairwise_costs(
        x in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..6),
        y in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..6),
    ) {
        let d = w1(&x, &y);
        let mean = |c: &[Vec<f64>]| (0..3).map(|k| c.iter().map(|p| p[k]).sum::<f64>() / c.len() as f64).collect::<Vec<_>>();
        let (mx, my) = (mean(&x), mean(&y));
        let gap = mx.iter().zip(&my).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        // Jensen lower bound and the independent-coupling upper bound
        let indep: f64 = x.iter().flat_map(|a| y.iter().map(move |b| {
            a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
        })).sum::<f64>() / (x.len() * y.len()) as f64;
        prop_assert!(d >= gap - 1e-9);
        prop_assert!(d <= indep + 1e-9);
    }
}
