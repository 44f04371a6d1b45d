use std::sync::Arc;

use covers_core::diff::{FieldTensor, Graph, ParamId, ParamStore, SparseMap, Var};
use covers_core::Result;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEEDS: u64 = 100;
const STEP: f64 = 1e-5;

type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

/// Sum of the op output weighted by a fixed random tensor, so every output
/// element matters.
fn loss(store: &ParamStore, ids: &[ParamId], weights: &mut Option<Vec<f64>>, build: &Build) -> (Graph, Var, Vec<Var>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = ids.iter().map(|&id| g.param(store, id)).collect();
    let out = build(&mut g, &vars).unwrap();
    let shape = g.shape(out).to_vec();
    let n = g.value(out).numel();
    let w = weights
        .get_or_insert_with(|| (0..n).map(|i| 0.5 + ((i * 7919) % 13) as f64 / 13.0).collect())
        .clone();
    let wv = g.input(FieldTensor::new(shape, w).unwrap());
    let prod = g.mul(out, wv).unwrap();
    let root = g.sum(prod);
    (g, root, vars)
}

/// Norm-relative error between the analytic and numeric gradients.
fn check(inputs: Vec<FieldTensor>, build: &Build) -> f64 {
    let mut store = ParamStore::new(0);
    let ids: Vec<ParamId> = inputs.into_iter().enumerate().map(|(i, t)| store.add(format!("p{i}"), t)).collect();
    let mut weights = None;
    let (g, root, vars) = loss(&store, &ids, &mut weights, build);
    let grads = g.backward(root).unwrap();
    let (mut diff, mut norm) = (0.0f64, 0.0f64);
    for (&id, &v) in ids.iter().zip(&vars) {
        let n = store.value(id).numel();
        let analytic = grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for e in 0..n {
            let orig = store.value(id).values[e];
            store.value_mut(id).values[e] = orig + STEP;
            let (gp, rp, _) = loss(&store, &ids, &mut weights, build);
            store.value_mut(id).values[e] = orig - STEP;
            let (gm, rm, _) = loss(&store, &ids, &mut weights, build);
            store.value_mut(id).values[e] = orig;
            let numeric = (gp.value(rp).item() - gm.value(rm).item()) / (2.0 * STEP);
            diff += (analytic[e] - numeric).powi(2);
            norm += analytic[e].powi(2) + numeric.powi(2);
        }
    }
    diff.sqrt() / norm.sqrt().max(1e-12)
}

fn t(shape: &[usize], v: Vec<f64>) -> FieldTensor {
    FieldTensor::new(shape.to_vec(), v).unwrap()
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> FieldTensor {
    let n = shape.iter().product();
    t(shape, (0..n).map(|_| rng.random_range(-1.5..1.5)).collect())
}

/// Values kept at least `gap` away from every point in `kinks`.
fn away(rng: &mut ChaCha8Rng, shape: &[usize], kinks: &[f64], gap: f64) -> FieldTensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| loop {
            let x: f64 = rng.random_range(-1.5..1.5);
            if kinks.iter().all(|k| (x - k).abs() > gap) {
                break x;
            }
        })
        .collect();
    t(shape, v)
}

/// Distinct values, spaced so no maximum is tied within the FD step.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> FieldTensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 + rng.random_range(0.0..0.05)).collect();
    v.shuffle(rng);
    t(shape, v)
}

/// Worst relative error seen across the checks of one group.
#[derive(Debug, Default, Clone, Copy)]
pub struct Worst(pub f64);

impl Worst {
    fn note(&mut self, inputs: Vec<FieldTensor>, build: &Build) {
        self.0 = self.0.max(check(inputs, build));
    }
}

fn for_seeds(mut f: impl FnMut(&mut ChaCha8Rng, &mut Worst)) -> f64 {
    let mut worst = Worst::default();
    for seed in 0..SEEDS {
        f(&mut ChaCha8Rng::seed_from_u64(seed), &mut worst);
    }
    worst.0
}

pub fn elementwise_unary_ops() -> f64 {
    for_seeds(|r, worst| {
        worst.note(vec![away(r, &[3, 4], &[0.0], 1e-3)], &|g, v| Ok(g.relu(v[0])));
        worst.note(vec![normal(r, &[3, 4])], &|g, v| Ok(g.tanh(v[0])));
        worst.note(vec![normal(r, &[5])], &|g, v| Ok(g.exp(v[0])));
        worst.note(vec![normal(r, &[2, 3])], &|g, v| Ok(g.square(v[0])));
        worst.note(vec![normal(r, &[4])], &|g, v| Ok(g.scale(v[0], -2.5)));
        worst.note(vec![normal(r, &[4])], &|g, v| Ok(g.add_scalar(v[0], 0.7)));
        worst.note(vec![away(r, &[3, 3], &[-0.8, 0.8], 1e-3)], &|g, v| Ok(g.clamp(v[0], -0.8, 0.8)));
    })
}

pub fn elementwise_binary_ops() -> f64 {
    for_seeds(|r, worst| {
        worst.note(vec![normal(r, &[2, 3]), normal(r, &[2, 3])], &|g, v| g.add(v[0], v[1]));
        worst.note(vec![normal(r, &[2, 3]), normal(r, &[2, 3])], &|g, v| g.sub(v[0], v[1]));
        worst.note(vec![normal(r, &[2, 3]), normal(r, &[2, 3])], &|g, v| g.mul(v[0], v[1]));
        let a = normal(r, &[6]);
        let b = t(
            &[6],
            a.values.iter().map(|x| x + if r.random::<bool>() { 1.0 } else { -1.0 } * r.random_range(0.01..1.0)).collect(),
        );
        worst.note(vec![a, b], &|g, v| g.min(v[0], v[1]));
    })
}

pub fn reductions_and_layout_ops() -> f64 {
    for_seeds(|r, worst| {
        worst.note(vec![normal(r, &[3, 2])], &|g, v| Ok(g.sum(v[0])));
        worst.note(vec![normal(r, &[3, 2])], &|g, v| g.mean(v[0]));
        worst.note(vec![distinct(r, &[2, 4, 3])], &|g, v| g.max_over_axis(v[0], 1));
        worst.note(vec![distinct(r, &[3, 4])], &|g, v| g.max_over_axis(v[0], 1));
        worst.note(vec![normal(r, &[2, 3]), normal(r, &[2, 2])], &|g, v| g.concat(&[v[0], v[1]], 1));
        worst.note(vec![normal(r, &[1, 3]), normal(r, &[2, 3])], &|g, v| g.concat(&[v[0], v[1]], 0));
        worst.note(vec![normal(r, &[2, 5, 2])], &|g, v| g.slice(v[0], 1, 1, 3));
        worst.note(vec![normal(r, &[2, 6])], &|g, v| g.reshape(v[0], vec![3, 4]));
        worst.note(vec![normal(r, &[2, 3, 4]), normal(r, &[3])], &|g, v| g.add_bias(v[0], v[1], 1));
    })
}

pub fn linear_maps() -> f64 {
    for_seeds(|r, worst| {
        worst.note(vec![normal(r, &[3, 5]), normal(r, &[4, 5]), normal(r, &[4])], &|g, v| {
            g.affine(v[0], v[1], v[2])
        });
        worst.note(vec![normal(r, &[2, 3, 5]), normal(r, &[2, 5]), normal(r, &[2])], &|g, v| {
            g.affine(v[0], v[1], v[2])
        });
        let index: Arc<Vec<usize>> = Arc::new((0..10).map(|_| r.random_range(0..6)).collect());
        worst.note(vec![normal(r, &[6])], &move |g, v| g.gather(v[0], index.clone(), vec![2, 5]));
        let map = Arc::new(SparseMap {
            out_len: 6,
            in_len: 4,
            entries: (0..12).map(|_| (r.random_range(0..6), r.random_range(0..4), r.random_range(-1.0..1.0))).collect(),
        });
        worst.note(vec![normal(r, &[4])], &move |g, v| g.sparse(v[0], map.clone(), vec![2, 3]));
        let maps: Arc<Vec<f64>> = Arc::new((0..2 * 9).map(|_| r.random_range(-1.0..1.0)).collect());
        worst.note(vec![normal(r, &[2, 3, 3, 3])], &move |g, v| {
            g.spatial_project(v[0], maps.clone(), 2)
        });
    })
}

pub fn convolutions() -> f64 {
    for_seeds(|r, worst| {
        worst.note(vec![normal(r, &[2, 3, 5, 5]), normal(r, &[2, 3, 3, 3])], &|g, v| {
            g.conv2d(v[0], v[1], 1, 1)
        });
        worst.note(vec![normal(r, &[1, 2, 6, 6]), normal(r, &[3, 2, 4, 4])], &|g, v| {
            g.conv2d(v[0], v[1], 2, 1)
        });
        worst.note(vec![normal(r, &[2, 4, 4]), normal(r, &[2, 2, 2, 2])], &|g, v| {
            g.conv2d(v[0], v[1], 1, 0)
        });
    })
}

pub fn gaussian_log_density() -> f64 {
    for_seeds(|r, worst| {
        let action: Vec<f64> = (0..12).map(|_| r.random_range(-2.0..2.0)).collect();
        worst.note(vec![normal(r, &[3, 4]), normal(r, &[4])], &move |g, v| {
            g.gaussian_logprob(v[0], v[1], &action)
        });
    })
}

pub fn composite_chain() -> f64 {
    // a small two-layer network with a squashing head
    for_seeds(|r, worst| {
        worst.note(
            vec![normal(r, &[4, 3]), normal(r, &[5, 3]), normal(r, &[5]), normal(r, &[2, 5]), normal(r, &[2])],
            &|g, v| {
                let h = g.affine(v[0], v[1], v[2])?;
                let h = g.tanh(h);
                let o = g.affine(h, v[3], v[4])?;
                let e = g.exp(o);
                g.mean(e)
            },
        );
    })
}

/// Every op group, by name.
pub fn all() -> Vec<(&'static str, f64)> {
    vec![
        ("unary", elementwise_unary_ops()),
        ("binary", elementwise_binary_ops()),
        ("reductions", reductions_and_layout_ops()),
        ("linear maps", linear_maps()),
        ("convolutions", convolutions()),
        ("gaussian log density", gaussian_log_density()),
        ("composite", composite_chain()),
    ]
}
