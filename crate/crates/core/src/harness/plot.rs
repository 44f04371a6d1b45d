use std::fmt::Write as _;
use std::path::Path;

use super::config::RunConfig;
use super::runner::{read_metrics, seed_dir, METRICS_FILE, RUN_FILE};
use crate::assignment::EpisodeRecord;
use crate::env::TaskGroup;
use crate::error::{Error, Result};

const WIDTH: f64 = 900.0;
const PANEL: f64 = 260.0;
const MARGIN: f64 = 50.0;
const CURVE_COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn band_color(g: TaskGroup) -> &'static str {
    match g {
        TaskGroup::Reach => "#e8f0fb",
        TaskGroup::Press => "#fbeee8",
        TaskGroup::Close => "#eaf7e8",
        TaskGroup::Slide => "#f4ecf8",
    }
}

struct Series {
    label: String,
    reward: Vec<f64>,
    /// Policy per episode of the first seed.
    policy: Vec<usize>,
}

fn load(dir: &Path) -> Result<(RunConfig, Series)> {
    let run_file = dir.join(RUN_FILE);
    if !run_file.exists() {
        return Err(Error::MissingMetrics(run_file));
    }
    let config = RunConfig::load(&run_file)?;
    let mut runs: Vec<Vec<EpisodeRecord>> = Vec::new();
    for &s in &config.seeds {
        let mut r = read_metrics(&seed_dir(dir, s).join(METRICS_FILE))?;
        r.sort_by_key(|e| e.episode);
        runs.push(r);
    }
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    let reward: Vec<f64> = (0..len)
        .map(|i| runs.iter().map(|r| r[i].reward).sum::<f64>() / runs.len() as f64)
        .collect();
    let policy = runs.first().map(|r| r.iter().map(|e| e.policy).collect()).unwrap_or_default();
    let label = dir.file_name().map_or_else(|| config.method.to_string(), |n| format!("{} ({})", n.to_string_lossy(), config.method));
    Ok((config, Series { label, reward, policy }))
}

fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = i.saturating_sub(w - 1);
            xs[lo..=i].iter().sum::<f64>() / (i - lo + 1) as f64
        })
        .collect()
}

fn polyline(points: &[(f64, f64)], color: &str) -> String {
    let mut s = String::new();
    for (x, y) in points {
        let _ = write!(s, "{x:.1},{y:.1} ");
    }
    format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n", s.trim_end())
}

/// Reward curves (mean over seeds, moving average) over schedule bands, and
/// the first seed's policy index per episode. Returns the SVG text.
pub fn render(dirs: &[&Path]) -> Result<String> {
    let mut loaded = Vec::new();
    for d in dirs {
        loaded.push(load(d)?);
    }
    let Some((config, _)) = loaded.first() else {
        return Err(Error::Config("no run directories given".into()));
    };
    let schedule = config.schedule()?;
    let total = schedule.total_episodes().max(1) as f64;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let x_of = |e: f64| MARGIN + plot_w * e / total;
    let height = 2.0 * PANEL + 3.0 * MARGIN;

    let curves: Vec<Vec<f64>> = loaded.iter().map(|(_, s)| smooth(&s.reward, (total as usize / 50).max(1))).collect();
    let (mut lo, mut hi) = curves
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let top1 = MARGIN;
    let y1 = |v: f64| top1 + PANEL * (1.0 - (v - lo) / (hi - lo));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let bounds = schedule.boundaries();
    let top2 = 2.0 * MARGIN + PANEL;
    for (i, p) in schedule.phases.iter().enumerate() {
        let (a, b) = (x_of(bounds[i] as f64), x_of(bounds[i + 1] as f64));
        for top in [top1, top2] {
            let _ = writeln!(
                svg,
                "<rect x=\"{a:.1}\" y=\"{top:.1}\" width=\"{:.1}\" height=\"{PANEL}\" fill=\"{}\"/>",
                b - a,
                band_color(p.group)
            );
        }
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\">{} {}</text>", a + 2.0, top1 + 12.0, p.group, p.orbit);
    }
    let _ = writeln!(svg, "<text x=\"{MARGIN}\" y=\"{:.1}\">reward (lo {lo:.1}, hi {hi:.1})</text>", top1 - 8.0);
    for (k, c) in curves.iter().enumerate() {
        let pts: Vec<_> = c.iter().enumerate().map(|(e, &v)| (x_of(e as f64 + 0.5), y1(v))).collect();
        let color = CURVE_COLORS[k % CURVE_COLORS.len()];
        svg.push_str(&polyline(&pts, color));
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{}</text>",
            WIDTH - MARGIN - 200.0,
            top1 + 28.0 + 14.0 * k as f64,
            loaded[k].1.label
        );
    }

    let max_pol = loaded.iter().flat_map(|(_, s)| s.policy.iter()).copied().max().unwrap_or(0).max(1) as f64;
    let y2 = |p: f64| top2 + PANEL * (1.0 - p / max_pol);
    let _ = writeln!(svg, "<text x=\"{MARGIN}\" y=\"{:.1}\">policy index (first seed, 0..{max_pol})</text>", top2 - 8.0);
    for (k, (_, s)) in loaded.iter().enumerate() {
        let mut pts = Vec::new();
        for (e, &p) in s.policy.iter().enumerate() {
            let y = y2(p as f64);
            if let Some(&(_, prev)) = pts.last() {
                pts.push((x_of(e as f64), prev));
            }
            pts.push((x_of(e as f64), y));
        }
        if let Some(&(_, y)) = pts.last() {
            pts.push((x_of(s.policy.len() as f64), y));
        }
        svg.push_str(&polyline(&pts, CURVE_COLORS[k % CURVE_COLORS.len()]));
    }
    for top in [top1, top2] {
        let _ = writeln!(
            svg,
            "<rect x=\"{MARGIN}\" y=\"{top:.1}\" width=\"{plot_w}\" height=\"{PANEL}\" fill=\"none\" stroke=\"#444\"/>"
        );
    }
    let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\">episode (0..{total})</text>", WIDTH / 2.0 - 30.0, height - 15.0);
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn plot(dirs: &[&Path], out: &Path) -> Result<()> {
    let svg = render(dirs)?;
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}
