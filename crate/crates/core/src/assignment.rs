//! Task-free policy assignment: every `N_u` episodes the controller rolls out
//! the current policy, compares the first frames of those episodes with each
//! stored policy's frame buffer, and recalls the closest policy or spawns a
//! new one.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, Observation, TaskGroup, TaskInstance};
use crate::error::{Error, Result};
use crate::group::GroupSpec;
use crate::policy::{Architecture, PolicyBundle, PolicyConfig};
use crate::ppo::{self, PpoConfig, RolloutBuffer, UpdateStats};
use crate::rollout::{mix_seed, run_episodes, worker_count, ActionMode, Episode};
use crate::transport::{buffer_distance, invariant_cloud, w1_distance, FeatureCloud};

/// Observation frames with FIFO eviction.
#[derive(Debug, Clone)]
pub struct FrameBuffer {
    capacity: usize,
    frames: VecDeque<Observation>,
}

impl FrameBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            frames: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn push(&mut self, obs: Observation) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(obs);
    }

    pub fn extend(&mut self, other: &FrameBuffer) {
        for f in &other.frames {
            self.push(f.clone());
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = &Observation> {
        self.frames.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalUnit {
    Episodes,
    Steps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// `d_ε`.
    pub threshold: f64,
    /// `k`, frames kept from the start of each rollout episode. Later frames
    /// depend on the behaviour policy, which is often not the policy that
    /// filled the buffer being compared against, so only the reset frame is
    /// kept by default.
    pub initial_frames: usize,
    /// `N_u`.
    pub update_interval: usize,
    pub interval_unit: IntervalUnit,
    pub buffer_capacity: usize,
    /// Drop the rollout episodes before a detected group change inside a
    /// trigger rollout, so `O` holds frames of one group only.
    pub split_rollouts: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            initial_frames: 1,
            update_interval: 10,
            interval_unit: IntervalUnit::Episodes,
            buffer_capacity: 512,
            split_rollouts: true,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::Config("threshold must be positive".into()));
        }
        if self.initial_frames == 0 || self.update_interval == 0 || self.buffer_capacity == 0 {
            return Err(Error::Config(
                "initial_frames, update_interval and buffer_capacity must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// How the controller picks a policy at each trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignMode {
    /// Wasserstein distances between invariant features.
    Wasserstein,
    /// Ground-truth group labels (the upper-bound baseline).
    GroundTruth,
    /// One policy for everything, no assignment.
    Single,
}

#[derive(Debug, Clone)]
pub struct PolicyEntry {
    pub bundle: PolicyBundle,
    pub buffer: FrameBuffer,
    pub created_episode: usize,
    /// Ground-truth label bound to this entry in ground-truth mode.
    pub label: Option<TaskGroup>,
}

/// `Π`. Entry 0 is the initial random policy with an empty buffer.
#[derive(Debug, Clone)]
pub struct PolicyCollection {
    pub entries: Vec<PolicyEntry>,
    pub current: usize,
}

impl PolicyCollection {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Policies created by spawning; the initial placeholder is not counted.
    pub fn spawned(&self) -> usize {
        self.entries.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentDecision {
    /// Episode counter `n` at the trigger.
    pub episode: usize,
    /// `None` stands for an empty buffer (infinite distance).
    pub distances: Vec<Option<f64>>,
    pub chosen: usize,
    pub spawned: bool,
    /// Leading rollout episodes left out of `O` because the rollout crossed
    /// a group change.
    #[serde(default)]
    pub dropped: usize,
    /// Frames in `O` after the split.
    #[serde(default)]
    pub observed: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub phase: usize,
    pub group: TaskGroup,
    pub orbit: String,
    pub policy: usize,
    pub reward: f64,
    pub success: bool,
    pub steps: usize,
    pub num_policies: usize,
}

#[derive(Debug, Clone)]
pub enum Event {
    Episode(EpisodeRecord),
    Decision(AssignmentDecision),
    Update { policy: usize, stats: UpdateStats },
}

/// Ordered episode tasks with their schedule phase.
#[derive(Debug, Clone)]
pub struct TaskStream {
    tasks: Vec<(usize, TaskInstance)>,
    next: usize,
}

impl TaskStream {
    pub fn new(tasks: Vec<(usize, TaskInstance)>) -> Self {
        Self { tasks, next: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.tasks.len() - self.next
    }

    pub fn consumed(&self) -> usize {
        self.next
    }

    fn peek(&self, offset: usize) -> Option<(usize, TaskInstance)> {
        self.tasks.get(self.next + offset).copied()
    }
}

/// Argmin with ties going to the lowest index; `None` counts as `+∞`.
pub fn argmin_distance(distances: &[Option<f64>]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, d) in distances.iter().enumerate() {
        let d = d.unwrap_or(f64::INFINITY);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best
}

pub struct Controller {
    pub config: ControllerConfig,
    pub ppo: PpoConfig,
    pub policy_config: PolicyConfig,
    pub env_config: EnvConfig,
    pub architecture: Architecture,
    pub mode: AssignMode,
    pub group: GroupSpec,
    pub collection: PolicyCollection,
    pub rollout: RolloutBuffer,
    seed: u64,
    /// Loop counter `n` of the assignment algorithm.
    n: usize,
    steps_since_trigger: usize,
    rng: ChaCha8Rng,
    trace: Vec<(usize, usize)>,
    decisions: Vec<AssignmentDecision>,
    started: Instant,
    workers: usize,
}

impl Controller {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        config: ControllerConfig,
        ppo: PpoConfig,
        policy_config: PolicyConfig,
        env_config: EnvConfig,
        architecture: Architecture,
        mode: AssignMode,
        group: GroupSpec,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        ppo.validate()?;
        env_config.validate()?;
        if policy_config.extractor.grid != env_config.grid {
            return Err(Error::Config(format!(
                "extractor grid {} differs from environment grid {}",
                policy_config.extractor.grid, env_config.grid
            )));
        }
        let initial = PolicyBundle::new(0, group, architecture, &policy_config, mix_seed(seed, 1000))?;
        let capacity = config.buffer_capacity;
        Ok(Self {
            config,
            ppo,
            policy_config,
            env_config,
            architecture,
            mode,
            group,
            collection: PolicyCollection {
                entries: vec![PolicyEntry {
                    bundle: initial,
                    buffer: FrameBuffer::new(capacity),
                    created_episode: 0,
                    label: None,
                }],
                current: 0,
            },
            rollout: RolloutBuffer::new(),
            seed,
            n: 0,
            steps_since_trigger: 0,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, 2000)),
            trace: Vec::new(),
            decisions: Vec::new(),
            started: Instant::now(),
            workers: worker_count(),
        })
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    /// `(episode counter, chosen policy)` for every trigger so far.
    pub fn assignment_trace(&self) -> &[(usize, usize)] {
        &self.trace
    }

    pub fn decisions(&self) -> &[AssignmentDecision] {
        &self.decisions
    }

    pub fn current(&self) -> &PolicyBundle {
        &self.collection.entries[self.collection.current].bundle
    }

    fn episode_seed(&self, index: usize) -> u64 {
        mix_seed(self.seed, 1 << 32 | index as u64)
    }

    fn record(&self, ep: &Episode, index: usize, phase: usize) -> EpisodeRecord {
        EpisodeRecord {
            episode: index,
            phase,
            group: ep.group,
            orbit: ep.task.element.name(),
            policy: self.collection.current,
            reward: ep.total_reward,
            success: ep.success,
            steps: ep.steps,
            num_policies: match self.mode {
                AssignMode::Single => 1,
                _ => self.collection.spawned(),
            },
        }
    }

    fn is_trigger(&self) -> bool {
        match self.config.interval_unit {
            IntervalUnit::Episodes => self.n % self.config.update_interval == 0,
            IntervalUnit::Steps => self.steps_since_trigger >= self.config.update_interval,
        }
    }

    /// One pass of the main loop. Returns `false` once the stream is empty.
    pub fn iterate(&mut self, stream: &mut TaskStream, sink: &mut dyn FnMut(Event) -> Result<()>) -> Result<bool> {
        if stream.remaining() == 0 {
            return Ok(false);
        }
        self.n += 1;
        if self.is_trigger() {
            self.trigger(stream, sink)?;
            self.steps_since_trigger = 0;
        } else {
            let (phase, task) = stream.peek(0).expect("checked remaining");
            let index = stream.consumed();
            let seed = self.episode_seed(index);
            let ep = run_episodes(self.current(), &self.env_config, &[(task, seed)], 0, ActionMode::Sample, 1)?
                .pop()
                .expect("one job");
            stream.next += 1;
            sink(Event::Episode(self.record(&ep, index, phase)))?;
            self.steps_since_trigger += ep.steps;
            self.rollout.extend(ep.transitions);
        }
        Ok(true)
    }

    /// Runs the controller until the stream is exhausted.
    pub fn run(&mut self, stream: &mut TaskStream, sink: &mut dyn FnMut(Event) -> Result<()>) -> Result<()> {
        while self.iterate(stream, sink)? {}
        Ok(())
    }

    /// Rolls out at least `N_s` steps (whole episodes) under the current
    /// policy, or until the stream runs dry.
    fn trigger_rollout(&mut self, stream: &mut TaskStream) -> Result<Vec<(usize, usize, Episode)>> {
        let mut out = Vec::new();
        let mut steps = 0;
        while steps < self.ppo.rollout_steps && stream.remaining() > 0 {
            let wave = self.workers.min(stream.remaining());
            let jobs: Vec<_> = (0..wave)
                .map(|o| {
                    let (_, t) = stream.peek(o).expect("within remaining");
                    (t, self.episode_seed(stream.consumed() + o))
                })
                .collect();
            let eps = run_episodes(self.current(), &self.env_config, &jobs, self.config.initial_frames, ActionMode::Sample, self.workers)?;
            for ep in eps {
                if steps >= self.ppo.rollout_steps {
                    break;
                }
                let (phase, _) = stream.peek(0).expect("job came from the stream");
                steps += ep.steps;
                out.push((stream.consumed(), phase, ep));
                stream.next += 1;
            }
        }
        Ok(out)
    }

    fn trigger(&mut self, stream: &mut TaskStream, sink: &mut dyn FnMut(Event) -> Result<()>) -> Result<()> {
        let episodes = self.trigger_rollout(stream)?;
        if episodes.is_empty() {
            return Ok(());
        }
        let mut labels: BTreeMap<TaskGroup, usize> = BTreeMap::new();
        for (index, phase, ep) in &episodes {
            sink(Event::Episode(self.record(ep, *index, *phase)))?;
            *labels.entry(ep.group).or_default() += 1;
        }
        let dropped = match self.mode {
            AssignMode::Wasserstein if self.config.split_rollouts => self.change_point(&episodes)?.unwrap_or(0),
            _ => 0,
        };
        let mut frames = FrameBuffer::new(self.config.buffer_capacity);
        for (_, _, ep) in &episodes[dropped..] {
            for f in &ep.first_frames {
                frames.push(f.clone());
            }
        }
        let observed = frames.len();
        let steps: usize = episodes.iter().map(|(_, _, ep)| ep.steps).sum();
        for (_, _, ep) in episodes {
            self.rollout.extend(ep.transitions);
        }

        // a rollout cut short by the end of the stream holds too few frames
        // to judge and no episode follows it, so π_cur stays
        let truncated = steps < self.ppo.rollout_steps && self.collection.spawned() > 0;
        match self.mode {
            AssignMode::Single => {}
            _ if truncated => {}
            AssignMode::Wasserstein => {
                let mut distances = Vec::with_capacity(self.collection.len());
                for e in &self.collection.entries {
                    distances.push(if e.buffer.is_empty() {
                        None
                    } else {
                        Some(buffer_distance(&frames, &e.buffer, &e.bundle)?)
                    });
                }
                let (j, dj) = argmin_distance(&distances).expect("collection is never empty");
                let spawned = dj > self.config.threshold;
                let chosen = if spawned { self.spawn(frames, None)? } else { self.recall(j, &frames) };
                self.log_decision(distances, chosen, spawned, (dropped, observed), sink)?;
            }
            AssignMode::GroundTruth => {
                // majority label of the rollout; ties go to the later group
                let label = labels
                    .iter()
                    .max_by_key(|(g, c)| (**c, **g))
                    .map(|(g, _)| *g)
                    .expect("non-empty rollout");
                let found = self.collection.entries.iter().position(|e| e.label == Some(label));
                let distances = self
                    .collection
                    .entries
                    .iter()
                    .map(|e| match e.label {
                        Some(l) if l == label => Some(0.0),
                        _ => None,
                    })
                    .collect();
                let (chosen, spawned) = match found {
                    Some(j) => (self.recall(j, &frames), false),
                    None => (self.spawn(frames, Some(label))?, true),
                };
                self.log_decision(distances, chosen, spawned, (0, observed), sink)?;
            }
        }

        let cur = self.collection.current;
        let bundle = &mut self.collection.entries[cur].bundle;
        self.rollout.refresh(bundle)?;
        self.rollout.finalize(self.ppo.gamma, self.ppo.lambda, self.ppo.reward_scale)?;
        let stats = ppo::update(bundle, &self.rollout, &self.ppo, &mut self.rng)?;
        self.rollout.clear();
        sink(Event::Update { policy: cur, stats })
    }

    /// Index of the first rollout episode after a group change, if the
    /// rollout's first frames split into a head and a tail that differ by
    /// more than `d_ε` under the current extractor. The split score is
    /// W1(head, tail) minus the mean distance between frames on the same
    /// side. Without that correction a one-episode segment against the rest
    /// scores about the within-group spread and fires on single-group
    /// rollouts. The best-scoring cut wins.
    fn change_point(&self, episodes: &[(usize, usize, Episode)]) -> Result<Option<usize>> {
        if episodes.len() < 2 {
            return Ok(None);
        }
        let total: usize = episodes.iter().map(|(_, _, e)| e.first_frames.len()).sum();
        let mut all = FrameBuffer::new(total);
        for (_, _, ep) in episodes {
            for f in &ep.first_frames {
                all.push(f.clone());
            }
        }
        let cloud = invariant_cloud(&all, self.current())?;
        let dim = cloud.dim;
        let point = |i: usize| &cloud.points[i * dim..(i + 1) * dim];
        let mut pair = vec![0.0; total * total];
        for i in 0..total {
            for j in 0..i {
                let d = point(i).iter().zip(point(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                pair[i * total + j] = d;
                pair[j * total + i] = d;
            }
        }
        let part = |a: usize, b: usize| FeatureCloud::from_flat(b - a, dim, cloud.points[a * dim..b * dim].to_vec());
        let mut best: Option<(usize, f64)> = None;
        let mut cut = 0;
        for (c, (_, _, ep)) in episodes.iter().enumerate().take(episodes.len() - 1) {
            cut += ep.first_frames.len();
            let (mut within, mut pairs) = (0.0, 0usize);
            for i in 0..total {
                for j in 0..i {
                    if (i < cut) == (j < cut) {
                        within += pair[i * total + j];
                        pairs += 1;
                    }
                }
            }
            let spread = if pairs == 0 { 0.0 } else { within / pairs as f64 };
            let score = w1_distance(&part(0, cut)?, &part(cut, total)?)?.0 - spread;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((c + 1, score));
            }
        }
        Ok(best.filter(|&(_, d)| d > self.config.threshold).map(|(c, _)| c))
    }

    fn spawn(&mut self, frames: FrameBuffer, label: Option<TaskGroup>) -> Result<usize> {
        let id = self.collection.len();
        let bundle = PolicyBundle::new(
            id,
            self.group,
            self.architecture,
            &self.policy_config,
            mix_seed(self.seed, 1000 + id as u64),
        )?;
        let mut entry = PolicyEntry {
            bundle,
            buffer: frames,
            created_episode: self.n,
            label,
        };
        entry.bundle.buffer_id = Some(id);
        self.collection.entries.push(entry);
        self.collection.current = id;
        Ok(id)
    }

    fn recall(&mut self, j: usize, frames: &FrameBuffer) -> usize {
        self.collection.entries[j].buffer.extend(frames);
        self.collection.current = j;
        j
    }

    fn log_decision(
        &mut self,
        distances: Vec<Option<f64>>,
        chosen: usize,
        spawned: bool,
        (dropped, observed): (usize, usize),
        sink: &mut dyn FnMut(Event) -> Result<()>,
    ) -> Result<()> {
        let d = AssignmentDecision {
            episode: self.n,
            distances,
            chosen,
            spawned,
            dropped,
            observed,
            wall_time: self.started.elapsed().as_secs_f64(),
        };
        self.trace.push((self.n, chosen));
        self.decisions.push(d.clone());
        sink(Event::Decision(d))
    }
}

/// Appends one decision as a JSON line.
pub fn write_decision(out: &mut impl Write, d: &AssignmentDecision) -> Result<()> {
    serde_json::to_writer(&mut *out, d)?;
    out.write_all(b"\n").map_err(|e| Error::io("decision log", e))
}
