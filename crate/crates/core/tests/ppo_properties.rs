//! Properties of the clipped-surrogate update on small real rollouts.

use covers_core::diff::{FieldTensor, Graph, Var};
use covers_core::env::{EnvConfig, TaskGroup, TaskInstance};
use covers_core::equivariant::ObsBatch;
use covers_core::group::GroupSpec;
use covers_core::policy::{batch_logprob, Architecture, PolicyBundle, PolicyConfig};
use covers_core::ppo::{clip_loss, update, PpoConfig, RolloutBuffer};
use covers_core::rollout::{run_episode, ActionMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bundle(seed: u64) -> PolicyBundle {
    PolicyBundle::new(0, GroupSpec::d2(), Architecture::Equivariant, &PolicyConfig::default(), seed).unwrap()
}

/// Two short episodes of reach, finalized.
fn buffer(b: &PolicyBundle, seed: u64) -> RolloutBuffer {
    let env = EnvConfig {
        horizon: 40,
        ..EnvConfig::default()
    };
    let task = TaskInstance::base(TaskGroup::Reach, GroupSpec::d2(), env.grid);
    let mut buf = RolloutBuffer::new();
    for s in 0..2 {
        buf.extend(run_episode(b, &env, &task, seed + s, 1, ActionMode::Sample).unwrap().transitions);
    }
    let cfg = PpoConfig::default();
    buf.finalize(cfg.gamma, cfg.lambda, cfg.reward_scale).unwrap();
    buf
}

/// Flattened parameter gradient of a scalar built on a fresh graph.
fn grad_of(b: &mut PolicyBundle, build: impl FnOnce(&mut Graph, &PolicyBundle) -> Var) -> Vec<f64> {
    let mut g = Graph::new();
    let root = build(&mut g, b);
    let grads = g.backward(root).unwrap();
    b.store.zero_grad();
    g.accumulate_param_grads(&grads, &mut b.store);
    b.store.flat_grads()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn batch_logprobs(b: &PolicyBundle, buf: &RolloutBuffer) -> Vec<f64> {
    let obs: Vec<_> = buf.transitions.iter().map(|t| &t.obs).collect();
    let mut g = Graph::new();
    let heads = b.forward(&mut g, &ObsBatch::new(&obs).unwrap()).unwrap();
    let u: Vec<f64> = buf.transitions.iter().flat_map(|t| t.pre_tanh).collect();
    let lp = batch_logprob(&mut g, &heads, &u).unwrap();
    g.value(lp).values.clone()
}

#[test]
fn surrogate_at_old_parameters_is_mean_advantage() {
    let b = bundle(1);
    let mut buf = buffer(&b, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // arbitrary advantages so the mean is not the normalized zero
    buf.advantages = (0..buf.len()).map(|_| rng.random_range(-2.0..3.0)).collect();
    let idx: Vec<usize> = (0..buf.len()).collect();
    let mut g = Graph::new();
    let parts = clip_loss(&mut g, &b, &buf, &idx, &PpoConfig::default()).unwrap();
    let mean = buf.advantages.iter().sum::<f64>() / buf.len() as f64;
    assert!((g.value(parts.surrogate).item() - mean).abs() < 1e-12);
    assert!(g.value(parts.ratio).values.iter().all(|r| (r - 1.0).abs() < 1e-12));
}

#[test]
fn unclipped_gradient_is_the_policy_gradient() {
    let mut b = bundle(2);
    let buf = buffer(&b, 20);
    // move away from the sampling parameters so the ratios differ from 1
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for id in b.store.ids().collect::<Vec<_>>() {
        for v in &mut b.store.value_mut(id).values {
            *v += rng.random_range(-1e-4..1e-4);
        }
    }
    let cfg = PpoConfig {
        clip: 1e9,
        entropy_coef: 0.0,
        value_coef: 0.0,
        ..PpoConfig::default()
    };
    let idx: Vec<usize> = (0..buf.len()).collect();
    let ppo = grad_of(&mut b, |g, b| clip_loss(g, b, &buf, &idx, &cfg).unwrap().total);
    let vanilla = grad_of(&mut b, |g, b| {
        let obs: Vec<_> = buf.transitions.iter().map(|t| &t.obs).collect();
        let heads = b.forward(g, &ObsBatch::new(&obs).unwrap()).unwrap();
        let u: Vec<f64> = buf.transitions.iter().flat_map(|t| t.pre_tanh).collect();
        let lp = batch_logprob(g, &heads, &u).unwrap();
        let adv = g.input(FieldTensor::new(vec![buf.len()], buf.advantages.clone()).unwrap());
        let w = g.mul(lp, adv).unwrap();
        let m = g.mean(w).unwrap();
        g.scale(m, -1.0)
    });
    let c = cosine(&ppo, &vanilla);
    assert!(c > 0.999, "cosine {c}");
}

#[test]
fn positive_advantage_raises_the_action_log_probability() {
    let mut b = bundle(3);
    let mut buf = buffer(&b, 30);
    buf.transitions.truncate(1);
    buf.finalize(0.99, 0.95, 1.0).unwrap();
    buf.advantages = vec![1.0];
    let before = batch_logprobs(&b, &buf)[0];
    let cfg = PpoConfig {
        epochs: 1,
        value_coef: 0.0,
        entropy_coef: 0.0,
        ..PpoConfig::default()
    };
    update(&mut b, &buf, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let after = batch_logprobs(&b, &buf)[0];
    assert!(after > before, "{before} -> {after}");
}

#[test]
fn large_learning_rate_trips_the_kl_stop() {
    let b = bundle(4);
    let buf = buffer(&b, 40);
    let base = PpoConfig::default();
    let run = |lr: f64| {
        let mut b = b.clone();
        let cfg = PpoConfig { lr, ..base.clone() };
        update(&mut b, &buf, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    };
    let calm = run(base.lr);
    let hot = run(base.lr * 100.0);
    assert!(!calm.early_stopped, "{calm:?}");
    assert!(hot.early_stopped, "{hot:?}");
    assert!(hot.approx_kl > base.max_kl);
    assert!(hot.epochs_completed < base.epochs);
}

#[test]
fn updates_are_reproducible() {
    let b = bundle(5);
    let buf = buffer(&b, 50);
    let run = || {
        let mut b = b.clone();
        let s = update(&mut b, &buf, &PpoConfig::default(), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        (s, b.store.flat_values())
    };
    assert_eq!(run(), run());
}
