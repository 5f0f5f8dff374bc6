//! Trend reports over run artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use scpl_core::evaluator::MetricsRecord;
use walkdir::WalkDir;

use crate::formats::{read_metrics, Manifest, RunStatus, MANIFEST_FILE, METRICS_FILE, METRICS_HEADER};

/// Slopes smaller than this in magnitude count as flat.
pub const FLAT_SLOPE: f64 = 1e-3;

/// Least-squares slope of `y` on `x`; zero for fewer than two distinct `x`.
pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 0.0;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Increasing,
    Decreasing,
    Flat,
}

impl Trend {
    pub fn of_slope(slope: f64) -> Trend {
        if slope.abs() < FLAT_SLOPE {
            Trend::Flat
        } else if slope > 0.0 {
            Trend::Increasing
        } else {
            Trend::Decreasing
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Trend::Increasing => "increasing",
            Trend::Decreasing => "decreasing",
            Trend::Flat => "flat",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricTrend {
    pub metric: &'static str,
    /// `(generation, mean over runs)`.
    pub trajectory: Vec<(u32, f64)>,
    pub slope: f64,
    pub trend: Trend,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettingReport {
    pub sweep: String,
    pub experiment: String,
    pub seeds: Vec<u64>,
    pub incomplete: Vec<u64>,
    pub trends: Vec<MetricTrend>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub root: PathBuf,
    pub settings: Vec<SettingReport>,
}

fn metric(r: &MetricsRecord, name: &str) -> Option<f64> {
    match name {
        "preference_bias" => r.preference_bias,
        "generation_quality" => r.generation_quality,
        "pass1_a" => r.pass1_a,
        "pass1_d" => r.pass1_d,
        "disparate_bias" => r.disparate_bias,
        "similarity" => r.similarity,
        "dataset_ratio" => Some(r.dataset_ratio),
        _ => None,
    }
}

fn trends(histories: &[Vec<MetricsRecord>]) -> Vec<MetricTrend> {
    let len = histories.iter().map(Vec::len).min().unwrap_or(0);
    let mut out = Vec::new();
    for &name in &METRICS_HEADER[1..] {
        let mut trajectory = Vec::with_capacity(len);
        for t in 0..len {
            let values: Option<Vec<f64>> = histories.iter().map(|h| metric(&h[t], name)).collect();
            if let Some(v) = values {
                trajectory.push((histories[0][t].generation, v.iter().sum::<f64>() / v.len() as f64));
            }
        }
        if trajectory.is_empty() {
            continue;
        }
        let points: Vec<(f64, f64)> = trajectory.iter().map(|&(g, y)| (g as f64, y)).collect();
        let slope = least_squares_slope(&points);
        out.push(MetricTrend {
            metric: name,
            trajectory,
            slope,
            trend: Trend::of_slope(slope),
        });
    }
    out
}

/// Collect every run under `dir` and summarize metric trends per setting.
pub fn build_report(dir: &Path) -> Result<Report> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let mut groups: BTreeMap<(String, String), Vec<(Manifest, Vec<MetricsRecord>)>> = BTreeMap::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry?;
        if entry.file_name() != MANIFEST_FILE || !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let manifest: Manifest =
            serde_json::from_str(&text).with_context(|| format!("corrupt manifest {}", path.display()))?;
        let metrics_path = path.with_file_name(METRICS_FILE);
        let file = File::open(&metrics_path).with_context(|| format!("missing metrics {}", metrics_path.display()))?;
        let history = read_metrics(file).with_context(|| format!("corrupt metrics {}", metrics_path.display()))?;
        groups
            .entry((manifest.sweep.clone(), manifest.experiment.clone()))
            .or_default()
            .push((manifest, history));
    }
    if groups.is_empty() {
        bail!("no {MANIFEST_FILE} found under {}", dir.display());
    }

    let settings = groups
        .into_iter()
        .map(|((sweep, experiment), mut runs)| {
            runs.sort_by_key(|(m, _)| m.seed);
            let incomplete = runs
                .iter()
                .filter(|(m, _)| m.status != RunStatus::Complete)
                .map(|(m, _)| m.seed)
                .collect();
            let histories: Vec<Vec<MetricsRecord>> = runs.iter().map(|(_, h)| h.clone()).collect();
            SettingReport {
                sweep,
                experiment,
                seeds: runs.iter().map(|(m, _)| m.seed).collect(),
                incomplete,
                trends: trends(&histories),
            }
        })
        .collect();
    Ok(Report {
        root: dir.to_path_buf(),
        settings,
    })
}

impl Report {
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# Report for {}\n", self.root.display()).unwrap();
        for s in &self.settings {
            let seeds: Vec<String> = s.seeds.iter().map(u64::to_string).collect();
            writeln!(out, "## {}/{}\n", s.sweep, s.experiment).unwrap();
            writeln!(out, "seeds: {}", seeds.join(", ")).unwrap();
            if !s.incomplete.is_empty() {
                let bad: Vec<String> = s.incomplete.iter().map(u64::to_string).collect();
                writeln!(out, "incomplete seeds: {}", bad.join(", ")).unwrap();
            }
            out.push('\n');

            let names: Vec<&str> = s.trends.iter().map(|m| m.metric).collect();
            writeln!(out, "| generation | {} |", names.join(" | ")).unwrap();
            writeln!(out, "|---|{}", "---|".repeat(names.len())).unwrap();
            let mut rows: BTreeMap<u32, Vec<String>> = BTreeMap::new();
            for (i, m) in s.trends.iter().enumerate() {
                for &(g, y) in &m.trajectory {
                    let row = rows.entry(g).or_insert_with(|| vec![String::new(); names.len()]);
                    row[i] = format!("{y:.4}");
                }
            }
            for (g, cells) in rows {
                writeln!(out, "| {g} | {} |", cells.join(" | ")).unwrap();
            }
            out.push('\n');
            for m in &s.trends {
                writeln!(out, "- {}: {} (slope {:+.4})", m.metric, m.trend.as_str(), m.slope).unwrap();
            }
            out.push('\n');
        }
        out
    }
}
