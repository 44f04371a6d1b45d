use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::runner::{read_metrics, seed_dir, METRICS_FILE, RUN_FILE};
use crate::assignment::EpisodeRecord;
use crate::env::{Schedule, TaskGroup};
use crate::error::{Error, Result};

/// Fraction of each phase, counted from its end, that enters the score.
pub const SCORE_WINDOW: f64 = 0.2;

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Standard error over seeds; zero for a single seed.
    pub se: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let se = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub group: TaskGroup,
    pub success: Stat,
    pub reward: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub seeds: Vec<u64>,
    pub groups: Vec<GroupScore>,
    /// Mean over groups, then over seeds.
    pub success: Stat,
    pub reward: Stat,
    /// Only for methods that assign policies.
    pub assignment_accuracy: Option<Stat>,
    pub policies_per_seed: Vec<usize>,
}

/// Per-group success and reward of one seed, averaged over the last
/// [`SCORE_WINDOW`] of every phase of that group.
pub fn window_scores(records: &[EpisodeRecord], schedule: &Schedule) -> Vec<(TaskGroup, f64, f64)> {
    let mut per_group: Vec<(TaskGroup, Vec<&EpisodeRecord>)> = Vec::new();
    for (p, phase) in schedule.phases.iter().enumerate() {
        let mut recs: Vec<&EpisodeRecord> = records.iter().filter(|r| r.phase == p).collect();
        recs.sort_by_key(|r| r.episode);
        let take = ((recs.len() as f64 * SCORE_WINDOW).ceil() as usize).min(recs.len());
        let tail = &recs[recs.len() - take..];
        match per_group.iter_mut().find(|(g, _)| *g == phase.group) {
            Some((_, v)) => v.extend_from_slice(tail),
            None => per_group.push((phase.group, tail.to_vec())),
        }
    }
    per_group.sort_by_key(|(g, _)| *g);
    per_group
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(g, v)| {
            let n = v.len() as f64;
            let succ = v.iter().filter(|r| r.success).count() as f64 / n;
            let rew = v.iter().map(|r| r.reward).sum::<f64>() / n;
            (g, succ, rew)
        })
        .collect()
}

/// First episode index after every scheduled group has had a phase.
pub fn first_cycle_end(schedule: &Schedule) -> usize {
    let bounds = schedule.boundaries();
    let mut seen: Vec<TaskGroup> = Vec::new();
    let all: usize = {
        let mut gs: Vec<TaskGroup> = schedule.phases.iter().map(|p| p.group).collect();
        gs.sort();
        gs.dedup();
        gs.len()
    };
    for (i, p) in schedule.phases.iter().enumerate() {
        if !seen.contains(&p.group) {
            seen.push(p.group);
        }
        if seen.len() == all {
            return bounds[i + 1];
        }
    }
    bounds.last().copied().unwrap_or(0)
}

/// Fraction of episodes whose policy agrees with the best injective
/// group-to-policy map, or `None` when no episodes qualify.
pub fn assignment_accuracy(records: &[EpisodeRecord], from_episode: usize) -> Option<f64> {
    let recs: Vec<&EpisodeRecord> = records.iter().filter(|r| r.episode >= from_episode).collect();
    if recs.is_empty() {
        return None;
    }
    let n_pol = recs.iter().map(|r| r.policy).max().unwrap_or(0) + 1;
    let mut counts = vec![vec![0usize; n_pol]; TaskGroup::ALL.len()];
    for r in &recs {
        counts[r.group.index()][r.policy] += 1;
    }
    let best = best_injective(&counts, 0, &mut vec![false; n_pol]);
    Some(best as f64 / recs.len() as f64)
}

fn best_injective(counts: &[Vec<usize>], g: usize, used: &mut Vec<bool>) -> usize {
    if g == counts.len() {
        return 0;
    }
    // a group may also stay unmatched
    let mut best = best_injective(counts, g + 1, used);
    for p in 0..used.len() {
        if !used[p] && counts[g][p] > 0 {
            used[p] = true;
            best = best.max(counts[g][p] + best_injective(counts, g + 1, used));
            used[p] = false;
        }
    }
    best
}

/// Reads every seed's metrics under `dir` and writes `summary.json`.
pub fn score(dir: &Path) -> Result<Summary> {
    let run_file = dir.join(RUN_FILE);
    if !run_file.exists() {
        return Err(Error::MissingMetrics(run_file));
    }
    let config = RunConfig::load(&run_file)?;
    let schedule = config.schedule()?;
    let cycle_end = first_cycle_end(&schedule);

    let mut per_seed = Vec::new();
    let mut accuracies = Vec::new();
    let mut policies = Vec::new();
    for &seed in &config.seeds {
        let records = read_metrics(&seed_dir(dir, seed).join(METRICS_FILE))?;
        per_seed.push(window_scores(&records, &schedule));
        if config.method.uses_assignment() {
            if let Some(a) = assignment_accuracy(&records, cycle_end) {
                accuracies.push(a);
            }
        }
        policies.push(records.last().map_or(0, |r| r.num_policies));
    }

    let mut groups = Vec::new();
    for g in TaskGroup::ALL {
        let (s, r): (Vec<f64>, Vec<f64>) = per_seed
            .iter()
            .filter_map(|v| v.iter().find(|(gg, _, _)| *gg == g).map(|&(_, s, r)| (s, r)))
            .unzip();
        if !s.is_empty() {
            groups.push(GroupScore {
                group: g,
                success: Stat::of(&s),
                reward: Stat::of(&r),
            });
        }
    }
    let avg = |f: fn(&(TaskGroup, f64, f64)) -> f64| -> Vec<f64> {
        per_seed
            .iter()
            .filter(|v| !v.is_empty())
            .map(|v| v.iter().map(f).sum::<f64>() / v.len() as f64)
            .collect()
    };
    let summary = Summary {
        method: config.method.to_string(),
        seeds: config.seeds.clone(),
        groups,
        success: Stat::of(&avg(|t| t.1)),
        reward: Stat::of(&avg(|t| t.2)),
        assignment_accuracy: (!accuracies.is_empty()).then(|| Stat::of(&accuracies)),
        policies_per_seed: policies,
    };
    let out = dir.join(SUMMARY_FILE);
    std::fs::write(&out, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&out, e))?;
    Ok(summary)
}

pub fn render(summary: &Summary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "method {}  seeds {:?}", summary.method, summary.seeds);
    let _ = writeln!(s, "{:<8} {:>16} {:>18}", "group", "success", "reward");
    for g in &summary.groups {
        let _ = writeln!(
            s,
            "{:<8} {:>7.3} ± {:<6.3} {:>8.2} ± {:<7.2}",
            g.group.name(),
            g.success.mean,
            g.success.se,
            g.reward.mean,
            g.reward.se
        );
    }
    let _ = writeln!(
        s,
        "{:<8} {:>7.3} ± {:<6.3} {:>8.2} ± {:<7.2}",
        "all", summary.success.mean, summary.success.se, summary.reward.mean, summary.reward.se
    );
    if let Some(a) = summary.assignment_accuracy {
        let _ = writeln!(s, "assignment accuracy {:.3} ± {:.3}", a.mean, a.se);
    }
    let _ = writeln!(s, "policies per seed {:?}", summary.policies_per_seed);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Phase;

    fn rec(episode: usize, phase: usize, group: TaskGroup, policy: usize, success: bool) -> EpisodeRecord {
        EpisodeRecord {
            episode,
            phase,
            group,
            orbit: "e".into(),
            policy,
            reward: if success { 1.0 } else { 0.0 },
            success,
            steps: 1,
            num_policies: 1,
        }
    }

    #[test]
    fn window_uses_phase_tails() {
        let schedule = Schedule {
            phases: vec![Phase { group: TaskGroup::Reach, orbit: "e".into(), episodes: 10 }],
        };
        let recs: Vec<_> = (0..10).map(|i| rec(i, 0, TaskGroup::Reach, 0, i >= 9)).collect();
        let s = window_scores(&recs, &schedule);
        assert_eq!(s, vec![(TaskGroup::Reach, 0.5, 0.5)]);
    }

    #[test]
    fn accuracy_picks_best_injective_map() {
        let mut recs = Vec::new();
        for i in 0..6 {
            recs.push(rec(i, 0, TaskGroup::Reach, 1, false));
        }
        for i in 6..10 {
            recs.push(rec(i, 1, TaskGroup::Press, 1, false));
        }
        // both groups on one policy: at most one group can claim it
        assert_eq!(assignment_accuracy(&recs, 0), Some(0.6));
        assert_eq!(assignment_accuracy(&recs, 100), None);
    }

    #[test]
    fn standard_error() {
        let s = Stat::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.se - 1.0).abs() < 1e-12);
        assert_eq!(Stat::of(&[4.0]).se, 0.0);
    }

    #[test]
    fn cycle_end_waits_for_every_group() {
        let s = Schedule::default_cycles(5, 2);
        assert_eq!(first_cycle_end(&s), 20);
    }
}
