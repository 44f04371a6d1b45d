//! Run directories, scoring and plotting on tiny schedules.

use covers_core::env::{EnvConfig, Phase, Schedule, TaskGroup};
use covers_core::error::Error;
use covers_core::harness::{
    assignment_accuracy, read_metrics, render_svg as render, run, score, seed_dir, Method, RunConfig, ScheduleSource,
    METRICS_FILE, METRICS_HEADER,
};
use covers_core::ppo::PpoConfig;

fn tiny(method: Method, episodes: usize) -> RunConfig {
    RunConfig {
        method,
        schedule: Some(ScheduleSource::Inline(Schedule {
            phases: TaskGroup::ALL
                .into_iter()
                .map(|group| Phase {
                    group,
                    orbit: "e".into(),
                    episodes,
                })
                .collect(),
        })),
        seeds: vec![7],
        env: EnvConfig {
            horizon: 20,
            ..EnvConfig::default()
        },
        ppo: PpoConfig {
            epochs: 1,
            rollout_steps: 100,
            ..PpoConfig::default()
        },
        checkpoints: false,
        ..RunConfig::default()
    }
}

#[test]
fn zero_episode_schedule_writes_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&tiny(Method::Covers, 0), dir.path()).unwrap();
    assert_eq!(res[0].episodes, 0);
    let text = std::fs::read_to_string(seed_dir(dir.path(), 7).join(METRICS_FILE)).unwrap();
    assert_eq!(text.trim_end(), METRICS_HEADER);
}

#[test]
fn ground_truth_assignment_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&tiny(Method::CoversGt, 40), dir.path()).unwrap();
    assert_eq!(res[0].policies, 4);
    let records = read_metrics(&seed_dir(dir.path(), 7).join(METRICS_FILE)).unwrap();
    assert_eq!(records.len(), 160);
    // the first trigger of a phase runs under the previous policy, so
    // only the settled second half of each phase is scored
    let settled: Vec<_> = records.into_iter().filter(|r| r.episode % 40 >= 20).collect();
    assert_eq!(assignment_accuracy(&settled, 0), Some(1.0));
    let summary = score(dir.path()).unwrap();
    assert_eq!(summary.policies_per_seed, vec![4]);
    assert_eq!(summary.groups.len(), 4);
}

#[test]
fn scoring_without_metrics_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(score(dir.path()), Err(Error::MissingMetrics(_))));
    assert!(matches!(
        read_metrics(&dir.path().join(METRICS_FILE)),
        Err(Error::MissingMetrics(_))
    ));
}

#[test]
fn empty_run_plots_empty_axes() {
    let dir = tempfile::tempdir().unwrap();
    run(&tiny(Method::Equi, 0), dir.path()).unwrap();
    let svg = render(&[dir.path()]).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("<rect"));
    assert!(svg.lines().filter(|l| l.starts_with("<polyline")).all(|l| l.contains("points=\"\"")));
}

#[test]
fn invalid_configs_fail_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut bad = tiny(Method::Covers, 5);
    if let Some(ScheduleSource::Inline(s)) = &mut bad.schedule {
        s.phases[1].orbit = "r90".into();
    }
    assert!(matches!(run(&bad, &out), Err(Error::Schedule(_))));
    for m in [Method::ThreeRl, Method::Clear] {
        assert!(matches!(run(&tiny(m, 5), &out), Err(Error::NotImplemented(_))));
    }
    assert!(!out.exists());
}
