//! Clipped-surrogate PPO with generalized advantage estimation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{FieldTensor, Graph, Var};
use crate::env::{Observation, ACTION_DIM};
use crate::equivariant::ObsBatch;
use crate::error::{Error, Result};
use crate::policy::{batch_logprob, PolicyBundle};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_kl: f64,
    pub rollout_steps: usize,
    /// Multiplies rewards before advantage and return targets are formed.
    /// Raw returns sit around -100; unscaled value targets that large drag
    /// the shared extractor's feature scale up and with it every distance
    /// used for assignment.
    pub reward_scale: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            epochs: 8,
            batch_size: 64,
            lr: 3e-4,
            entropy_coef: 0.001,
            value_coef: 0.5,
            max_kl: 0.05,
            rollout_steps: 1000,
            reward_scale: 0.05,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.rollout_steps == 0 {
            return bad("epochs, batch_size and rollout_steps must be positive");
        }
        if !(self.lr > 0.0) || !(self.max_kl > 0.0) || !(self.reward_scale > 0.0) {
            return bad("lr, max_kl and reward_scale must be positive");
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("loss coefficients must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Observation,
    /// Pre-squash sample; the environment saw `tanh` of it.
    pub pre_tanh: [f64; ACTION_DIM],
    pub reward: f64,
    pub log_prob_old: f64,
    pub value_old: f64,
    /// Episode ended after this step (success or horizon).
    pub done: bool,
    pub step: usize,
}

/// `δ_t = r_t + γ V_{t+1} (1 − done_t) − V_t`, `Â_t = δ_t + γλ (1 − done_t) Â_{t+1}`.
/// `values` has one more entry than `rewards` (bootstrap for a cut-off tail).
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = rewards.len();
    if values.len() != t + 1 || dones.len() != t {
        return Err(Error::Shape(format!(
            "gae over {t} rewards needs {} values and {t} done flags, got {} and {}",
            t + 1,
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; t];
    let mut next = 0.0;
    for i in (0..t).rev() {
        let live = if dones[i] { 0.0 } else { 1.0 };
        let delta = rewards[i] + gamma * values[i + 1] * live - values[i];
        next = delta + gamma * lambda * live * next;
        adv[i] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Per-sample clipped surrogate `min(ρ Â, clip(ρ, 1 − ε, 1 + ε) Â)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    finalized: bool,
}

impl RolloutBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        self.finalized = false;
        self.transitions.push(t);
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) {
        self.finalized = false;
        self.transitions.extend(ts);
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Re-scores the stored samples under `bundle`, for data gathered by a
    /// different policy than the one about to be updated.
    pub fn refresh(&mut self, bundle: &PolicyBundle) -> Result<()> {
        for chunk in self.transitions.chunks_mut(256) {
            let batch = ObsBatch::new(&chunk.iter().map(|t| &t.obs).collect::<Vec<_>>())?;
            let mut g = Graph::new();
            let heads = bundle.forward(&mut g, &batch)?;
            let u: Vec<f64> = chunk.iter().flat_map(|t| t.pre_tanh).collect();
            let lp = batch_logprob(&mut g, &heads, &u)?;
            for (i, t) in chunk.iter_mut().enumerate() {
                t.log_prob_old = g.value(lp).values[i];
                t.value_old = g.value(heads.value).values[i];
            }
        }
        self.finalized = false;
        Ok(())
    }

    /// Computes advantages and returns, then normalizes advantages to mean 0
    /// and standard deviation 1. A trailing unfinished episode is cut off
    /// with a zero bootstrap. Rewards are multiplied by `reward_scale`.
    pub fn finalize(&mut self, gamma: f64, lambda: f64, reward_scale: f64) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::Empty("rollout buffer"));
        }
        let rewards: Vec<f64> = self.transitions.iter().map(|t| t.reward * reward_scale).collect();
        let mut values: Vec<f64> = self.transitions.iter().map(|t| t.value_old).collect();
        values.push(0.0);
        let mut dones: Vec<bool> = self.transitions.iter().map(|t| t.done).collect();
        *dones.last_mut().expect("non-empty") = true;
        let (mut adv, returns) = compute_gae(&rewards, &values, &dones, gamma, lambda)?;
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        for a in &mut adv {
            *a = if std > 1e-12 { (*a - mean) / std } else { *a - mean };
        }
        self.advantages = adv;
        self.returns = returns;
        self.finalized = true;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub samples: usize,
    pub epochs_completed: usize,
    pub minibatches: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub explained_variance: f64,
    pub early_stopped: bool,
}

/// Loss graph for one minibatch.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub surrogate: Var,
    pub value_loss: Var,
    pub entropy: Var,
    pub ratio: Var,
}

/// Builds `−mean(surrogate) − c_ent·entropy + c_v·mean((V − R)²)` on `g`.
pub fn clip_loss(
    g: &mut Graph,
    bundle: &PolicyBundle,
    buffer: &RolloutBuffer,
    idx: &[usize],
    cfg: &PpoConfig,
) -> Result<LossParts> {
    if !buffer.is_finalized() {
        return Err(Error::Config("rollout buffer must be finalized before computing the loss".into()));
    }
    let ts = &buffer.transitions;
    let batch = ObsBatch::new(&idx.iter().map(|&i| &ts[i].obs).collect::<Vec<_>>())?;
    let heads = bundle.forward(g, &batch)?;
    let u: Vec<f64> = idx.iter().flat_map(|&i| ts[i].pre_tanh).collect();
    let b = idx.len();
    let lp = batch_logprob(g, &heads, &u)?;
    let old = g.input(FieldTensor::new(vec![b], idx.iter().map(|&i| ts[i].log_prob_old).collect())?);
    let diff = g.sub(lp, old)?;
    let ratio = g.exp(diff);
    if !g.value(ratio).is_finite() {
        return Err(Error::NonFinite("importance ratios"));
    }
    let adv = g.input(FieldTensor::new(vec![b], idx.iter().map(|&i| buffer.advantages[i]).collect())?);
    let s1 = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let s2 = g.mul(clipped, adv)?;
    let surr = g.min(s1, s2)?;
    let surrogate = g.mean(surr)?;
    let ret = g.input(FieldTensor::new(vec![b], idx.iter().map(|&i| buffer.returns[i]).collect())?);
    let err = g.sub(heads.value, ret)?;
    let sq = g.square(err);
    let value_loss = g.mean(sq)?;
    let ls = g.sum(heads.log_std);
    let entropy = g.add_scalar(ls, 0.5 * (1.0 + LN_2PI) * ACTION_DIM as f64);
    let a = g.scale(surrogate, -1.0);
    let e = g.scale(entropy, -cfg.entropy_coef);
    let v = g.scale(value_loss, cfg.value_coef);
    let ae = g.add(a, e)?;
    let total = g.add(ae, v)?;
    Ok(LossParts {
        total,
        surrogate,
        value_loss,
        entropy,
        ratio,
    })
}

/// Runs up to `cfg.epochs` passes of shuffled minibatches. Before each
/// optimizer step the KL estimate `mean((ρ − 1) − ln ρ)` is checked and the
/// update stops once it exceeds `cfg.max_kl`.
pub fn update(bundle: &mut PolicyBundle, buffer: &RolloutBuffer, cfg: &PpoConfig, rng: &mut impl Rng) -> Result<UpdateStats> {
    if buffer.is_empty() {
        return Err(Error::Empty("rollout buffer"));
    }
    cfg.validate()?;
    bundle.optimizer.lr = cfg.lr;
    let n = buffer.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats {
        samples: n,
        ..UpdateStats::default()
    };
    let (mut pl, mut vl, mut ent, mut kl, mut cf) = (0.0, 0.0, 0.0, 0.0, 0.0);
    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let parts = clip_loss(&mut g, bundle, buffer, idx, cfg)?;
            let ratios = &g.value(parts.ratio).values;
            let approx_kl = ratios.iter().map(|r| (r - 1.0) - r.ln()).sum::<f64>() / ratios.len() as f64;
            if approx_kl > cfg.max_kl {
                stats.early_stopped = true;
                kl = approx_kl;
                break 'epochs;
            }
            let clipped = ratios.iter().filter(|r| (*r - 1.0).abs() > cfg.clip).count();
            let grads = g.backward(parts.total)?;
            bundle.store.zero_grad();
            g.accumulate_param_grads(&grads, &mut bundle.store);
            bundle.optimizer.step(&mut bundle.store)?;
            stats.minibatches += 1;
            pl = -g.value(parts.surrogate).item();
            vl = g.value(parts.value_loss).item();
            ent = g.value(parts.entropy).item();
            kl = approx_kl;
            cf = clipped as f64 / ratios.len() as f64;
        }
        stats.epochs_completed += 1;
    }
    stats.policy_loss = pl;
    stats.value_loss = vl;
    stats.entropy = ent;
    stats.approx_kl = kl;
    stats.clip_fraction = cf;
    stats.explained_variance = explained_variance(
        &buffer.transitions.iter().map(|t| t.value_old).collect::<Vec<_>>(),
        &buffer.returns,
    );
    Ok(stats)
}

/// `1 − Var(R − V) / Var(R)`; zero when the returns are constant.
pub fn explained_variance(values: &[f64], returns: &[f64]) -> f64 {
    let var = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
    };
    if returns.is_empty() {
        return 0.0;
    }
    let vr = var(returns);
    if vr < 1e-12 {
        return 0.0;
    }
    let resid: Vec<f64> = returns.iter().zip(values).map(|(r, v)| r - v).collect();
    1.0 - var(&resid) / vr
}
