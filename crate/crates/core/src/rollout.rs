//! Episode collection, optionally spread over worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{Env, EnvConfig, Observation, TaskGroup, TaskInstance};
use crate::error::Result;
use crate::policy::PolicyBundle;
use crate::ppo::Transition;

/// Environment variable holding the rollout worker count.
pub const WORKERS_VAR: &str = "COVERS_WORKERS";

pub fn worker_count() -> usize {
    std::env::var(WORKERS_VAR)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or(1)
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    /// `tanh(mean)`, no noise.
    Mean,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub task: TaskInstance,
    pub seed: u64,
    pub transitions: Vec<Transition>,
    /// Observations `s_0 .. s_{k-1}`.
    pub first_frames: Vec<Observation>,
    pub total_reward: f64,
    pub success: bool,
    pub steps: usize,
    /// Ground-truth label from the environment's info channel.
    pub group: TaskGroup,
}

/// Plays one episode of `task` under `bundle`. Reset layout and action noise
/// both derive from `seed`.
pub fn run_episode(
    bundle: &PolicyBundle,
    env_config: &EnvConfig,
    task: &TaskInstance,
    seed: u64,
    k: usize,
    mode: ActionMode,
) -> Result<Episode> {
    let mut env = Env::new(env_config.clone(), *task)?;
    let mut obs = env.reset(task, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));
    let mut ep = Episode {
        task: *task,
        seed,
        transitions: Vec::new(),
        first_frames: Vec::new(),
        total_reward: 0.0,
        success: false,
        steps: 0,
        group: task.group,
    };
    loop {
        if ep.first_frames.len() < k {
            ep.first_frames.push(obs.clone());
        }
        let s = match mode {
            ActionMode::Sample => bundle.sample_action(&obs, &mut rng)?,
            ActionMode::Mean => bundle.sample_with_noise(&obs, &[0.0; 4])?,
        };
        let r = env.step(&s.action)?;
        ep.total_reward += r.reward;
        ep.group = r.info.group;
        ep.success = r.info.success;
        ep.transitions.push(Transition {
            obs,
            pre_tanh: s.pre_tanh,
            reward: r.reward,
            log_prob_old: s.log_prob,
            value_old: s.value,
            done: r.done,
            step: ep.steps,
        });
        ep.steps += 1;
        obs = r.obs;
        if r.done {
            break;
        }
    }
    Ok(ep)
}

/// Runs independent episodes on up to `workers` threads; results come back
/// in input order, so the outcome does not depend on the worker count.
pub fn run_episodes(
    bundle: &PolicyBundle,
    env_config: &EnvConfig,
    jobs: &[(TaskInstance, u64)],
    k: usize,
    mode: ActionMode,
    workers: usize,
) -> Result<Vec<Episode>> {
    let workers = workers.max(1).min(jobs.len().max(1));
    if workers == 1 {
        return jobs
            .iter()
            .map(|(t, s)| run_episode(bundle, env_config, t, *s, k, mode))
            .collect();
    }
    let chunk = jobs.len().div_ceil(workers);
    let results: Vec<Result<Vec<Episode>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|(t, s)| run_episode(bundle, env_config, t, *s, k, mode))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("rollout worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(jobs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Success rate of the noise-free policy over `seeds`.
pub fn evaluate(bundle: &PolicyBundle, env_config: &EnvConfig, task: &TaskInstance, seeds: &[u64]) -> Result<f64> {
    if seeds.is_empty() {
        return Ok(0.0);
    }
    let jobs: Vec<_> = seeds.iter().map(|&s| (*task, s)).collect();
    let eps = run_episodes(bundle, env_config, &jobs, 0, ActionMode::Mean, worker_count())?;
    Ok(eps.iter().filter(|e| e.success).count() as f64 / seeds.len() as f64)
}
