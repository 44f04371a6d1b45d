use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{RunConfig, ScheduleSource};
use crate::assignment::{write_decision, Controller, EpisodeRecord, Event, TaskStream};
use crate::error::{Error, Result};
use crate::rollout::mix_seed;

pub const METRICS_FILE: &str = "metrics.csv";
pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const UPDATES_FILE: &str = "updates.jsonl";
pub const RUN_FILE: &str = "run.json";

pub const METRICS_HEADER: &str = "episode,phase,group,orbit,policy,reward,success,steps,num_policies";

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

pub fn metrics_row(r: &EpisodeRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.episode,
        r.phase,
        r.group,
        r.orbit,
        r.policy,
        r.reward,
        u8::from(r.success),
        r.steps,
        r.num_policies
    )
}

#[derive(Debug, Clone, Serialize)]
struct UpdateLine<'a> {
    policy: usize,
    #[serde(flatten)]
    stats: &'a crate::ppo::UpdateStats,
}

/// Outcome of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub episodes: usize,
    pub policies: usize,
    pub trace: Vec<(usize, usize)>,
}

/// Trains every seed of `config` and writes the run directory. The config
/// is validated before anything is written.
pub fn run(config: &RunConfig, out: &Path) -> Result<Vec<SeedResult>> {
    config.validate()?;
    let mut resolved = config.clone();
    resolved.schedule = Some(ScheduleSource::Inline(config.schedule()?));
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let run_file = out.join(RUN_FILE);
    fs::write(&run_file, serde_json::to_string_pretty(&resolved)?).map_err(|e| Error::io(&run_file, e))?;
    config.seeds.iter().map(|&s| run_seed(&resolved, out, s)).collect()
}

pub fn run_seed(config: &RunConfig, out: &Path, seed: u64) -> Result<SeedResult> {
    let (arch, mode) = config.method.setup()?;
    let schedule = config.schedule()?;
    let dir = seed_dir(out, seed);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let mut orbit_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 3000));
    let tasks = schedule.expand(config.group, config.env.grid, &mut orbit_rng)?;
    let mut stream = TaskStream::new(tasks);
    let mut controller = Controller::new(
        config.controller.clone(),
        config.ppo.clone(),
        config.policy.clone(),
        config.env.clone(),
        arch,
        mode,
        config.group,
        seed,
    )?;

    let create = |name: &str| -> Result<BufWriter<File>> {
        let p = dir.join(name);
        Ok(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?))
    };
    let mut metrics = create(METRICS_FILE)?;
    let mut decisions = create(DECISIONS_FILE)?;
    let mut updates = create(UPDATES_FILE)?;
    writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&dir, e))?;

    let mut episodes = 0;
    controller.run(&mut stream, &mut |event| {
        match event {
            Event::Episode(r) => {
                episodes += 1;
                writeln!(metrics, "{}", metrics_row(&r)).map_err(|e| Error::io(METRICS_FILE, e))
            }
            Event::Decision(d) => write_decision(&mut decisions, &d),
            Event::Update { policy, stats } => {
                serde_json::to_writer(&mut updates, &UpdateLine { policy, stats: &stats })?;
                updates.write_all(b"\n").map_err(|e| Error::io(UPDATES_FILE, e))
            }
        }
    })?;
    for w in [&mut metrics, &mut decisions, &mut updates] {
        w.flush().map_err(|e| Error::io(&dir, e))?;
    }

    if config.checkpoints {
        for (i, e) in controller.collection.entries.iter().enumerate() {
            e.bundle.save(&dir.join("checkpoints").join(format!("policy_{i}")))?;
        }
    }
    Ok(SeedResult {
        seed,
        episodes,
        policies: controller.collection.spawned(),
        trace: controller.assignment_trace().to_vec(),
    })
}

/// Parses a metrics file written by [`run_seed`].
pub fn read_metrics(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let text = fs::read_to_string(path).map_err(|_| Error::MissingMetrics(path.to_path_buf()))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Config(format!("{}: unexpected header", path.display())));
    }
    let bad = |n: usize| Error::Config(format!("{}: malformed row {n}", path.display()));
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad(n + 1));
        }
        let num = |i: usize| f[i].parse::<usize>().map_err(|_| bad(n + 1));
        out.push(EpisodeRecord {
            episode: num(0)?,
            phase: num(1)?,
            group: crate::env::TaskGroup::parse(f[2]).map_err(|_| bad(n + 1))?,
            orbit: f[3].to_string(),
            policy: num(4)?,
            reward: f[5].parse().map_err(|_| bad(n + 1))?,
            success: f[6] == "1",
            steps: num(7)?,
            num_policies: num(8)?,
        });
    }
    Ok(out)
}
