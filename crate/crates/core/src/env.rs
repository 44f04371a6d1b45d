//! Planar grid-world manipulation suite.
//!
//! Four task groups (reach, press, close, slide), each the orbit of a base
//! layout under a lattice symmetry group. Dynamics live on integer cells, so
//! transforming a state, an action and the next state by the same element
//! commutes with `step` exactly.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{GroupElement, GroupSpec, SpatialAction};

pub const PLANES: usize = 4;
pub const PLANE_AGENT: usize = 0;
pub const PLANE_OBJECT: usize = 1;
pub const PLANE_GOAL: usize = 2;
pub const PLANE_STATIC: usize = 3;
pub const ACTION_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskGroup {
    Reach,
    Press,
    Close,
    Slide,
}

impl TaskGroup {
    pub const ALL: [TaskGroup; 4] = [TaskGroup::Reach, TaskGroup::Press, TaskGroup::Close, TaskGroup::Slide];

    pub fn name(&self) -> &'static str {
        match self {
            TaskGroup::Reach => "reach",
            TaskGroup::Press => "press",
            TaskGroup::Close => "close",
            TaskGroup::Slide => "slide",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Schedule(format!("unknown task group `{s}`")))
    }
}

impl fmt::Display for TaskGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    fn offset(self, d: (i64, i64), grid: usize) -> Option<Cell> {
        let r = self.row as i64 + d.1;
        let c = self.col as i64 + d.0;
        let n = grid as i64;
        (0..n).contains(&r).then_some(())?;
        (0..n).contains(&c).then_some(())?;
        Some(Cell::new(r as usize, c as usize))
    }

    /// Euclidean distance in cells.
    pub fn dist(self, o: Cell) -> f64 {
        let dr = self.row as f64 - o.row as f64;
        let dc = self.col as f64 - o.col as f64;
        (dr * dr + dc * dc).sqrt()
    }

    pub fn chebyshev(self, o: Cell) -> usize {
        self.row.abs_diff(o.row).max(self.col.abs_diff(o.col))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub grid: usize,
    pub horizon: usize,
    /// Dense shaping coefficient.
    pub alpha: f64,
    pub success_bonus: f64,
    /// Agent start jitter in cells (per axis, uniform in `[-j, j]`).
    pub jitter: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            grid: 16,
            horizon: 100,
            alpha: 0.1,
            success_bonus: 10.0,
            jitter: 1,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 8 {
            return Err(Error::Config(format!("grid must be at least 8, got {}", self.grid)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if !(self.alpha.is_finite() && self.success_bonus.is_finite()) {
            return Err(Error::Config("reward coefficients must be finite".into()));
        }
        Ok(())
    }
}

/// One member of a task group's orbit. `object` is the button, drawer handle
/// or plate; `goal` is the reach target, drawer closed cell or plate target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskInstance {
    pub group: TaskGroup,
    pub element: GroupElement,
    pub grid: usize,
    pub agent_start: Cell,
    pub object: Option<Cell>,
    pub goal: Option<Cell>,
}

fn scaled(r: usize, c: usize, grid: usize) -> Cell {
    Cell::new(r * grid / 16, c * grid / 16)
}

impl TaskInstance {
    /// Base layout of `group` (orbit element `e`).
    pub fn base(group: TaskGroup, symmetry: GroupSpec, grid: usize) -> Self {
        let (object, goal) = match group {
            TaskGroup::Reach => (None, Some(scaled(3, 5, grid))),
            TaskGroup::Press => (Some(scaled(4, 3, grid)), None),
            TaskGroup::Close => (Some(scaled(3, 9, grid)), Some(scaled(3, 4, grid))),
            TaskGroup::Slide => (Some(scaled(6, 6, grid)), Some(scaled(2, 3, grid))),
        };
        Self {
            group,
            element: symmetry.identity(),
            grid,
            agent_start: scaled(11, 11, grid),
            object,
            goal,
        }
    }

    pub fn new(group: TaskGroup, g: GroupElement, grid: usize) -> Result<Self> {
        transform_task(&Self::base(group, g.group, grid), g)
    }

    pub fn symmetry(&self) -> GroupSpec {
        self.element.group
    }
}

/// Orbit sibling `L_g[τ]`.
pub fn transform_task(task: &TaskInstance, g: GroupElement) -> Result<TaskInstance> {
    let action = SpatialAction::new(task.symmetry(), task.grid, task.grid)?;
    let map = |c: Cell| {
        let (r, c) = action.map_cell(g, c.row, c.col);
        Cell::new(r, c)
    };
    Ok(TaskInstance {
        group: task.group,
        element: g.compose(&task.element)?,
        grid: task.grid,
        agent_start: map(task.agent_start),
        object: task.object.map(map),
        goal: task.goal.map(map),
    })
}

/// Full mutable state of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub agent: Cell,
    pub object: Option<Cell>,
    pub gripper: f64,
    pub steps: usize,
    pub success: bool,
}

/// Agent-facing observation. It carries no task-group label.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub grid: usize,
    pub planes: usize,
    /// `planes x grid x grid`.
    pub image: Vec<f64>,
    pub initial_image: Vec<f64>,
    /// Normalized `(x, y, z, gripper)`.
    pub state: [f64; 4],
    /// Goal `(x, y, z)` for reach, zero otherwise.
    pub aux: [f64; 3],
}

/// Harness-only information returned by `step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub group: TaskGroup,
    pub success: bool,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

fn coord(i: usize, n: usize) -> f64 {
    (2.0 * i as f64 - (n - 1) as f64) / (n - 1) as f64
}

fn apply_plane(m: [[i32; 2]; 2], v: (f64, f64)) -> (f64, f64) {
    (
        m[0][0] as f64 * v.0 + m[0][1] as f64 * v.1,
        m[1][0] as f64 * v.0 + m[1][1] as f64 * v.1,
    )
}

/// Discrete displacement `(dx, dy)` of an action; `f64::round` is odd, so
/// negating an action component negates the move.
pub fn action_move(action: &[f64; ACTION_DIM]) -> (i64, i64) {
    let q = |a: f64| if a.is_finite() { a.clamp(-1.0, 1.0).round() as i64 } else { 0 };
    (q(action[0]), q(action[1]))
}

fn clip_action(action: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
    action.map(|a| if a.is_finite() { a.clamp(-1.0, 1.0) } else { 0.0 })
}

fn sign(v: i64) -> i64 {
    v.signum()
}

#[derive(Debug, Clone)]
pub struct Env {
    pub config: EnvConfig,
    task: TaskInstance,
    spatial: SpatialAction,
    state: EnvState,
    initial_image: Vec<f64>,
}

impl Env {
    pub fn new(config: EnvConfig, task: TaskInstance) -> Result<Self> {
        config.validate()?;
        if task.grid != config.grid {
            return Err(Error::Config(format!(
                "task laid out on a {} grid, environment is {}",
                task.grid, config.grid
            )));
        }
        let spatial = SpatialAction::new(task.symmetry(), config.grid, config.grid)?;
        let state = EnvState {
            agent: task.agent_start,
            object: task.object,
            gripper: 1.0,
            steps: 0,
            success: false,
        };
        let mut env = Self {
            config,
            task,
            spatial,
            state,
            initial_image: Vec::new(),
        };
        env.initial_image = env.render_planes();
        Ok(env)
    }

    pub fn task(&self) -> &TaskInstance {
        &self.task
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn spatial(&self) -> &SpatialAction {
        &self.spatial
    }

    /// Deterministic start for `(task, seed)`; the jitter is drawn in the
    /// base frame and carried along by the task's orbit element.
    pub fn reset(&mut self, task: &TaskInstance, seed: u64) -> Result<Observation> {
        if task.grid != self.config.grid {
            return Err(Error::Config("task grid does not match the environment".into()));
        }
        if task.symmetry() != self.spatial.group {
            self.spatial = SpatialAction::new(task.symmetry(), task.grid, task.grid)?;
        }
        self.task = *task;
        let j = self.config.jitter as i64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = (rng.random_range(-j..=j), rng.random_range(-j..=j));
        let m = self.spatial.plane_matrix(task.element);
        let d = (
            m[0][0] as i64 * base.0 + m[0][1] as i64 * base.1,
            m[1][0] as i64 * base.0 + m[1][1] as i64 * base.1,
        );
        let agent = task
            .agent_start
            .offset(d, task.grid)
            .filter(|c| Some(*c) != task.object && Some(*c) != task.goal)
            .unwrap_or(task.agent_start);
        self.state = EnvState {
            agent,
            object: task.object,
            gripper: 1.0,
            steps: 0,
            success: false,
        };
        self.initial_image = self.render_planes();
        Ok(self.observe())
    }

    /// Replaces the state, for oracles that need arbitrary configurations.
    pub fn set_state(&mut self, state: EnvState, initial_image: Vec<f64>) -> Result<()> {
        if initial_image.len() != PLANES * self.config.grid * self.config.grid {
            return Err(Error::Shape("initial image has the wrong size".into()));
        }
        self.state = state;
        self.initial_image = initial_image;
        Ok(())
    }

    pub fn initial_image(&self) -> &[f64] {
        &self.initial_image
    }

    fn relevant_distance(&self, s: &EnvState) -> f64 {
        match self.task.group {
            TaskGroup::Reach => s.agent.dist(self.task.goal.expect("reach has a goal")),
            TaskGroup::Press => s.agent.dist(self.task.object.expect("press has a button")),
            TaskGroup::Close | TaskGroup::Slide => {
                let obj = s.object.expect("object present");
                s.agent.dist(obj) + obj.dist(self.task.goal.expect("goal present"))
            }
        }
    }

    fn is_success(&self, s: &EnvState) -> bool {
        match self.task.group {
            TaskGroup::Reach => Some(s.agent) == self.task.goal,
            TaskGroup::Press => Some(s.agent) == self.task.object && s.gripper <= 0.0,
            TaskGroup::Close | TaskGroup::Slide => s.object == self.task.goal,
        }
    }

    /// Reward for the state reached after a step.
    pub fn reward(&self, s: &EnvState) -> f64 {
        let bonus = if self.is_success(s) { self.config.success_bonus } else { 0.0 };
        -self.config.alpha * self.relevant_distance(s) + bonus
    }

    /// Pure transition function used by `step`.
    pub fn transition(&self, s: &EnvState, action: &[f64; ACTION_DIM]) -> EnvState {
        let a = clip_action(action);
        let (dx, dy) = action_move(&a);
        let grid = self.config.grid;
        let mut next = s.clone();
        next.gripper = a[3];
        next.steps += 1;
        if let Some(target) = s.agent.offset((dx, dy), grid) {
            match (self.task.group, s.object) {
                (TaskGroup::Close, Some(handle)) if target == handle => {
                    let closed = self.task.goal.expect("drawer has a closed cell");
                    // the handle slides one cell along its rail towards the
                    // closed cell when the push has a component that way
                    let axis = (sign(closed.col as i64 - handle.col as i64), sign(closed.row as i64 - handle.row as i64));
                    let along = dx * axis.0 + dy * axis.1;
                    if along > 0 && handle != closed {
                        next.object = handle.offset(axis, grid);
                        next.agent = target;
                    }
                }
                (TaskGroup::Slide, Some(plate)) if target == plate => {
                    if let Some(moved) = plate.offset((dx, dy), grid) {
                        next.object = Some(moved);
                        next.agent = target;
                    }
                }
                _ => next.agent = target,
            }
        }
        next.success = s.success || self.is_success(&next);
        next
    }

    pub fn step(&mut self, action: &[f64; ACTION_DIM]) -> Result<StepResult> {
        if self.state.success || self.state.steps >= self.config.horizon {
            return Err(Error::Config("step called on a finished episode".into()));
        }
        let next = self.transition(&self.state, action);
        let reward = self.reward(&next);
        self.state = next;
        let done = self.state.success || self.state.steps >= self.config.horizon;
        Ok(StepResult {
            obs: self.observe(),
            reward,
            done,
            info: StepInfo {
                group: self.task.group,
                success: self.state.success,
            },
        })
    }

    fn render_planes(&self) -> Vec<f64> {
        render(&self.task, &self.state)
    }

    pub fn observe(&self) -> Observation {
        let n = self.config.grid;
        let s = &self.state;
        let aux = match (self.task.group, self.task.goal) {
            (TaskGroup::Reach, Some(goal)) => [coord(goal.col, n), coord(goal.row, n), 0.0],
            _ => [0.0; 3],
        };
        Observation {
            grid: n,
            planes: PLANES,
            image: self.render_planes(),
            initial_image: self.initial_image.clone(),
            state: [coord(s.agent.col, n), coord(s.agent.row, n), 0.0, s.gripper],
            aux,
        }
    }

    /// Writes the current frame as a plain-text grayscale PGM.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let n = self.config.grid;
        let planes = self.render_planes();
        let mut out = format!("P2\n{n} {n}\n255\n");
        for r in 0..n {
            let row: Vec<String> = (0..n)
                .map(|c| {
                    let p = r * n + c;
                    let level = [(PLANE_AGENT, 255), (PLANE_OBJECT, 170), (PLANE_GOAL, 110), (PLANE_STATIC, 60)]
                        .iter()
                        .find(|(pl, _)| planes[pl * n * n + p] > 0.0)
                        .map_or(0, |&(_, v)| v);
                    level.to_string()
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn render(task: &TaskInstance, s: &EnvState) -> Vec<f64> {
    let n = task.grid;
    let plane = n * n;
    let mut img = vec![0.0; PLANES * plane];
    let mut set = |p: usize, c: Cell| img[p * plane + c.row * n + c.col] = 1.0;
    set(PLANE_AGENT, s.agent);
    match task.group {
        TaskGroup::Reach => {}
        TaskGroup::Press => {
            let b = task.object.expect("button");
            set(PLANE_OBJECT, b);
            set(PLANE_STATIC, b);
        }
        TaskGroup::Close => {
            let closed = task.goal.expect("closed cell");
            let open = task.object.expect("handle");
            let h = s.object.expect("handle");
            // rail spans the drawer's travel
            let (r0, r1) = (closed.row.min(open.row), closed.row.max(open.row));
            let (c0, c1) = (closed.col.min(open.col), closed.col.max(open.col));
            for r in r0..=r1 {
                for c in c0..=c1 {
                    set(PLANE_STATIC, Cell::new(r, c));
                }
            }
            set(PLANE_OBJECT, h);
        }
        TaskGroup::Slide => {
            set(PLANE_OBJECT, s.object.expect("plate"));
            set(PLANE_GOAL, task.goal.expect("plate goal"));
        }
    }
    img
}

/// Joint action of `g` on an observation: pixel permutation on both frames,
/// plane action on the (x, y) pairs of state and goal.
pub fn transform_observation(spatial: &SpatialAction, g: GroupElement, obs: &Observation) -> Result<Observation> {
    let m = spatial.plane_matrix(g);
    let (x, y) = apply_plane(m, (obs.state[0], obs.state[1]));
    let (ax, ay) = apply_plane(m, (obs.aux[0], obs.aux[1]));
    Ok(Observation {
        grid: obs.grid,
        planes: obs.planes,
        image: spatial.act_image(g, &obs.image, obs.planes)?,
        initial_image: spatial.act_image(g, &obs.initial_image, obs.planes)?,
        state: [x, y, obs.state[2], obs.state[3]],
        aux: [ax, ay, obs.aux[2]],
    })
}

/// `K_g` on actions: plane action on `(Δx, Δy)`, identity on `Δz` and gripper.
pub fn transform_action(spatial: &SpatialAction, g: GroupElement, a: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
    let (x, y) = apply_plane(spatial.plane_matrix(g), (a[0], a[1]));
    [x, y, a[2], a[3]]
}

pub fn transform_state(spatial: &SpatialAction, g: GroupElement, s: &EnvState) -> EnvState {
    let map = |c: Cell| {
        let (r, c) = spatial.map_cell(g, c.row, c.col);
        Cell::new(r, c)
    };
    EnvState {
        agent: map(s.agent),
        object: s.object.map(map),
        gripper: s.gripper,
        steps: s.steps,
        success: s.success,
    }
}

/// Shortest 8-connected path avoiding `blocked`; returns the first move.
fn first_move(grid: usize, from: Cell, to: Cell, blocked: Option<Cell>) -> Option<(i64, i64)> {
    if from == to {
        return Some((0, 0));
    }
    let idx = |c: Cell| c.row * grid + c.col;
    let mut prev: Vec<Option<Cell>> = vec![None; grid * grid];
    let mut seen = vec![false; grid * grid];
    seen[idx(from)] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(c) = queue.pop_front() {
        if c == to {
            let mut cur = c;
            while let Some(p) = prev[idx(cur)] {
                if p == from {
                    return Some((cur.col as i64 - p.col as i64, cur.row as i64 - p.row as i64));
                }
                cur = p;
            }
        }
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(nc) = c.offset((dx, dy), grid) {
                    if !seen[idx(nc)] && Some(nc) != blocked {
                        seen[idx(nc)] = true;
                        prev[idx(nc)] = Some(c);
                        queue.push_back(nc);
                    }
                }
            }
        }
    }
    None
}

/// Scripted expert used as an oracle that every variant is solvable.
pub fn expert_action(env: &Env) -> [f64; ACTION_DIM] {
    let task = env.task();
    let s = env.state();
    let grid = task.grid;
    let mv = |d: (i64, i64), grip: f64| [d.0 as f64, d.1 as f64, 0.0, grip];
    match task.group {
        TaskGroup::Reach => {
            let goal = task.goal.expect("goal");
            mv(first_move(grid, s.agent, goal, None).unwrap_or((0, 0)), 1.0)
        }
        TaskGroup::Press => {
            let b = task.object.expect("button");
            mv(first_move(grid, s.agent, b, None).unwrap_or((0, 0)), -1.0)
        }
        TaskGroup::Close | TaskGroup::Slide => {
            let obj = s.object.expect("object");
            let goal = task.goal.expect("goal");
            let push = (
                sign(goal.col as i64 - obj.col as i64),
                sign(goal.row as i64 - obj.row as i64),
            );
            let behind = obj.offset((-push.0, -push.1), grid);
            match behind {
                Some(b) if s.agent == b => mv(push, 1.0),
                Some(b) => mv(first_move(grid, s.agent, b, Some(obj)).unwrap_or((0, 0)), 1.0),
                None => mv((0, 0), 1.0),
            }
        }
    }
}

/// One phase of a task schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub group: TaskGroup,
    /// Orbit element name (`e`, `m_x`, `m_y`, `r180` for D2) or `random`
    /// for a fresh element every episode.
    pub orbit: String,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub phases: Vec<Phase>,
}

impl Schedule {
    /// Four group phases, then the same groups again under different orbit
    /// elements.
    pub fn default_cycles(episodes_per_phase: usize, cycles: usize) -> Self {
        let orbits = ["e", "r180", "m_x", "m_y"];
        let mut phases = Vec::new();
        for c in 0..cycles {
            for (i, g) in TaskGroup::ALL.into_iter().enumerate() {
                phases.push(Phase {
                    group: g,
                    orbit: orbits[(i + c) % orbits.len()].to_string(),
                    episodes: episodes_per_phase,
                });
            }
        }
        Self { phases }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schedule(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self, symmetry: GroupSpec) -> Result<()> {
        for p in &self.phases {
            if p.orbit != "random" {
                symmetry.element_by_name(&p.orbit).map_err(|e| Error::Schedule(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn total_episodes(&self) -> usize {
        self.phases.iter().map(|p| p.episodes).sum()
    }

    /// Phase boundaries as cumulative episode counts, starting at 0.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut out = vec![0];
        for p in &self.phases {
            out.push(out.last().unwrap() + p.episodes);
        }
        out
    }

    /// Task of every episode; random orbit elements come from `rng`.
    pub fn expand(&self, symmetry: GroupSpec, grid: usize, rng: &mut impl Rng) -> Result<Vec<(usize, TaskInstance)>> {
        self.validate(symmetry)?;
        let mut out = Vec::with_capacity(self.total_episodes());
        for (i, p) in self.phases.iter().enumerate() {
            for _ in 0..p.episodes {
                let g = if p.orbit == "random" {
                    symmetry.element(rng.random_range(0..symmetry.order()))?
                } else {
                    symmetry.element_by_name(&p.orbit)?
                };
                out.push((i, TaskInstance::new(p.group, g, grid)?));
            }
        }
        Ok(out)
    }
}
