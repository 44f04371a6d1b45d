//! Actor-critic bundles: equivariant action mean, invariant value and a
//! state-independent diagonal Gaussian squashed by `tanh`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diff::{Adam, FieldTensor, Graph, ParamId, ParamStore, Var};
use crate::env::{Observation, ACTION_DIM};
use crate::equivariant::{Dense, EquivariantLinear, Extractor, ExtractorConfig, Features, ObsBatch};
use crate::error::{Error, Result};
use crate::group::{GroupSpec, Representation};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Equivariant,
    Cnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub extractor: ExtractorConfig,
    /// Regular fields in the hidden layer of the policy head.
    pub head_fields: usize,
    pub value_hidden: usize,
    pub init_log_std: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            extractor: ExtractorConfig::default(),
            head_fields: 8,
            value_hidden: 64,
            init_log_std: -0.5,
        }
    }
}

/// Four action channels: Δx (`ρ_x`), Δy (`ρ_y`), Δz and gripper (trivial),
/// each bounded to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpec {
    pub representation: Representation,
    pub low: [f64; ACTION_DIM],
    pub high: [f64; ACTION_DIM],
}

impl ActionSpec {
    pub fn new(group: GroupSpec) -> Result<Self> {
        let t = Representation::trivial(group);
        Ok(Self {
            representation: Representation::direct_sum(vec![
                Representation::coord_x(group)?,
                Representation::coord_y(group)?,
                t.clone(),
                t,
            ])?,
            low: [-1.0; ACTION_DIM],
            high: [1.0; ACTION_DIM],
        })
    }
}

#[derive(Debug, Clone)]
enum PolicyHead {
    Equivariant(EquivariantLinear, EquivariantLinear),
    Dense(Dense, Dense),
}

/// Graph handles of one batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Heads {
    pub features: Features,
    /// Pre-squash action mean `[B, 4]`.
    pub mean: Var,
    pub log_std: Var,
    /// `[B]`.
    pub value: Var,
}

/// A sampled action together with everything PPO needs to score it later.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    /// Squashed action sent to the environment.
    pub action: [f64; ACTION_DIM],
    /// Gaussian sample before `tanh`.
    pub pre_tanh: [f64; ACTION_DIM],
    /// Log density of `action`, including the `tanh` Jacobian.
    pub log_prob: f64,
    pub value: f64,
}

/// `ln(1 - tanh(u)^2)`, computed without cancellation.
pub fn tanh_log_jacobian(u: f64) -> f64 {
    // 2 (ln 2 - u - softplus(-2u))
    let x = -2.0 * u;
    let softplus = if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    2.0 * (std::f64::consts::LN_2 - u - softplus)
}

/// Diagonal Gaussian log density of `u`, plain slices.
pub fn gaussian_logprob_values(mean: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(u)
        .map(|((m, s), x)| {
            let z = (x - m) * (-s).exp();
            -0.5 * z * z - s - 0.5 * LN_2PI
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct PolicyBundle {
    pub id: usize,
    pub group: GroupSpec,
    pub architecture: Architecture,
    pub config: PolicyConfig,
    pub store: ParamStore,
    pub optimizer: Adam,
    /// Frame buffer paired with this bundle in the policy collection.
    pub buffer_id: Option<usize>,
    pub action_spec: ActionSpec,
    extractor: Extractor,
    head: PolicyHead,
    value_hidden: Dense,
    value_out: Dense,
    log_std: ParamId,
}

impl PolicyBundle {
    pub fn new(id: usize, group: GroupSpec, architecture: Architecture, config: &PolicyConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(seed);
        let extractor = match architecture {
            Architecture::Equivariant => Extractor::equivariant(&mut store, group, &config.extractor)?,
            Architecture::Cnn => Extractor::cnn(&mut store, group, &config.extractor)?,
        };
        let action_spec = ActionSpec::new(group)?;
        let feat = extractor.feature_dim(group);
        let head = match architecture {
            Architecture::Equivariant => {
                let reg = Representation::regular(group);
                let feat_rep = reg.repeat(feat / group.order())?;
                let hidden = reg.repeat(config.head_fields)?;
                PolicyHead::Equivariant(
                    EquivariantLinear::new(&mut store, "policy.hidden", feat_rep, hidden.clone(), 2.0)?,
                    // small initial means keep early exploration near zero
                    EquivariantLinear::new(&mut store, "policy.mean", hidden, action_spec.representation.clone(), 1e-4)?,
                )
            }
            Architecture::Cnn => {
                let hidden = config.head_fields * group.order();
                PolicyHead::Dense(
                    Dense::new(&mut store, "policy.hidden", feat, hidden, 2.0),
                    Dense::new(&mut store, "policy.mean", hidden, ACTION_DIM, 1e-4),
                )
            }
        };
        let inv = feat / group.order();
        let value_hidden = Dense::new(&mut store, "value.hidden", inv, config.value_hidden, 2.0);
        let value_out = Dense::new(&mut store, "value.out", config.value_hidden, 1, 1.0);
        let log_std = store.add_constant("log_std", vec![ACTION_DIM], config.init_log_std);
        Ok(Self {
            id,
            group,
            architecture,
            config: config.clone(),
            store,
            optimizer: Adam::new(3e-4, (0.9, 0.999), 1e-8),
            buffer_id: None,
            action_spec,
            extractor,
            head,
            value_hidden,
            value_out,
            log_std,
        })
    }

    pub fn extractor(&self) -> &Extractor {
        &self.extractor
    }

    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    pub fn log_std(&self) -> [f64; ACTION_DIM] {
        let v = &self.store.value(self.log_std).values;
        [v[0], v[1], v[2], v[3]]
    }

    /// Builds the actor-critic on `g` for a batch of observations.
    pub fn forward(&self, g: &mut Graph, batch: &ObsBatch) -> Result<Heads> {
        let store = &self.store;
        let features = self.extractor.forward(g, store, batch, self.group)?;
        let mean = match &self.head {
            PolicyHead::Equivariant(a, b) => {
                let h = a.forward(g, store, features.equi)?;
                let h = g.relu(h);
                b.forward(g, store, h)?
            }
            PolicyHead::Dense(a, b) => {
                let h = a.forward(g, store, features.equi)?;
                let h = g.relu(h);
                b.forward(g, store, h)?
            }
        };
        let h = self.value_hidden.forward(g, store, features.inv)?;
        let h = g.relu(h);
        let v = self.value_out.forward(g, store, h)?;
        let value = g.reshape(v, vec![batch.batch])?;
        let log_std = g.param(store, self.log_std);
        Ok(Heads {
            features,
            mean,
            log_std,
            value,
        })
    }

    /// Pre-squash mean and standard deviation for one observation.
    pub fn action_dist(&self, obs: &Observation) -> Result<([f64; ACTION_DIM], [f64; ACTION_DIM])> {
        let mut g = Graph::new();
        let h = self.forward(&mut g, &ObsBatch::new(&[obs])?)?;
        let m = g.value(h.mean);
        if !m.is_finite() {
            return Err(Error::NonFinite("policy mean"));
        }
        let mean = [m.values[0], m.values[1], m.values[2], m.values[3]];
        Ok((mean, self.log_std().map(f64::exp)))
    }

    pub fn value(&self, obs: &Observation) -> Result<f64> {
        self.values(&[obs])?.pop().ok_or(Error::Empty("value batch"))
    }

    pub fn values(&self, obs: &[&Observation]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let h = self.forward(&mut g, &ObsBatch::new(obs)?)?;
        Ok(g.value(h.value).values.clone())
    }

    /// `tanh(mean)`, the noise-free action.
    pub fn mean_action(&self, obs: &Observation) -> Result<[f64; ACTION_DIM]> {
        Ok(self.action_dist(obs)?.0.map(f64::tanh))
    }

    /// Samples `tanh(mean + std·ξ)` with `ξ ~ N(0, I)`.
    pub fn sample_action(&self, obs: &Observation, rng: &mut impl Rng) -> Result<SampledAction> {
        let xi = [0; ACTION_DIM].map(|_| StandardNormal.sample(rng));
        self.sample_with_noise(obs, &xi)
    }

    pub fn sample_with_noise(&self, obs: &Observation, xi: &[f64; ACTION_DIM]) -> Result<SampledAction> {
        let mut g = Graph::new();
        let h = self.forward(&mut g, &ObsBatch::new(&[obs])?)?;
        let m = g.value(h.mean);
        if !m.is_finite() {
            return Err(Error::NonFinite("policy mean"));
        }
        let mean = [m.values[0], m.values[1], m.values[2], m.values[3]];
        let log_std = self.log_std();
        let mut u = [0.0; ACTION_DIM];
        for i in 0..ACTION_DIM {
            u[i] = mean[i] + log_std[i].exp() * xi[i];
        }
        Ok(SampledAction {
            action: u.map(f64::tanh),
            pre_tanh: u,
            log_prob: squashed_logprob(&mean, &log_std, &u),
            value: g.value(h.value).values[0],
        })
    }

    /// Entropy of the pre-squash Gaussian.
    pub fn entropy(&self) -> f64 {
        self.log_std().iter().map(|s| s + 0.5 * (1.0 + LN_2PI)).sum()
    }

    /// Writes parameters plus enough metadata to rebuild the bundle.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut meta = serde_json::Map::new();
        meta.insert("bundle_id".into(), self.id.into());
        meta.insert("buffer_id".into(), serde_json::to_value(self.buffer_id)?);
        meta.insert("architecture".into(), serde_json::to_value(self.architecture)?);
        meta.insert("group".into(), serde_json::to_value(self.group)?);
        meta.insert("config".into(), serde_json::to_value(&self.config)?);
        self.store.save(dir, meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (stored, meta) = ParamStore::load(dir)?;
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("manifest lacks `{k}`")))
        };
        let id: usize = serde_json::from_value(field("bundle_id")?)?;
        let architecture: Architecture = serde_json::from_value(field("architecture")?)?;
        let group: GroupSpec = serde_json::from_value(field("group")?)?;
        let config: PolicyConfig = serde_json::from_value(field("config")?)?;
        let mut bundle = Self::new(id, group, architecture, &config, stored.seed())?;
        bundle.store.copy_values_from(&stored)?;
        bundle.buffer_id = serde_json::from_value(field("buffer_id")?)?;
        Ok(bundle)
    }
}

/// Log density of `tanh(u)` when `u ~ N(mean, exp(log_std)²)`.
pub fn squashed_logprob(mean: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
    gaussian_logprob_values(mean, log_std, u) - u.iter().map(|&x| tanh_log_jacobian(x)).sum::<f64>()
}

/// Differentiable squashed log-prob of stored pre-squash samples `u [B, 4]`.
pub fn batch_logprob(g: &mut Graph, heads: &Heads, u: &[f64]) -> Result<Var> {
    let lp = g.gaussian_logprob(heads.mean, heads.log_std, u)?;
    let rows = u.len() / ACTION_DIM;
    let corr: Vec<f64> = u
        .chunks(ACTION_DIM)
        .map(|r| r.iter().map(|&x| tanh_log_jacobian(x)).sum())
        .collect();
    let c = g.input(FieldTensor::new(vec![rows], corr)?);
    g.sub(lp, c)
}
