//! Sweep execution and artifact layout.
//!
//! ```text
//! <out>/<sweep>/sweep.toml
//! <out>/<sweep>/comparison.csv
//! <out>/<sweep>/<experiment>/seed-<s>/{config.toml, manifest.json, metrics.csv,
//!                                      sampling.jsonl, curation.jsonl,
//!                                      models/gen-NNN.model, datasets/gen-NNN.jsonl}
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context as _, Result};
use scpl_core::evaluator::MetricsRecord;
use scpl_core::simulation::run_loop_with;

use crate::config::{ExperimentSpec, SweepSpec};
use crate::formats::{
    self, dataset_file, model_file, sha256_hex, write_dataset, write_jsonl, CurationRow, Manifest, MetricsWriter,
    RunStatus, SamplingRow, CONFIG_FILE, CURATION_FILE, DATASETS_DIR, MANIFEST_FILE, METRICS_FILE, MODELS_DIR,
    SAMPLING_FILE,
};

pub const SWEEP_FILE: &str = "sweep.toml";
pub const COMPARISON_FILE: &str = "comparison.csv";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_root: PathBuf,
    pub jobs: usize,
    /// Write per-generation model and dataset snapshots.
    pub snapshots: bool,
    /// Print one line to stderr as each run finishes.
    pub progress: bool,
}

impl RunOptions {
    pub fn new(out_root: impl Into<PathBuf>) -> Self {
        Self {
            out_root: out_root.into(),
            jobs: 1,
            snapshots: true,
            progress: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("output directory {path} is not writable: {source}")]
    Unwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug)]
pub struct RunResult {
    pub experiment: String,
    pub seed: u64,
    pub dir: PathBuf,
    /// Metrics history, or the error that stopped the run.
    pub outcome: std::result::Result<Vec<MetricsRecord>, String>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub sweep_dir: PathBuf,
    /// One entry per (experiment, seed), experiments in document order.
    pub runs: Vec<RunResult>,
}

impl SweepOutcome {
    pub fn failures(&self) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(|r| r.outcome.is_err())
    }

    pub fn is_success(&self) -> bool {
        self.failures().next().is_none()
    }
}

pub fn run_dir(sweep_dir: &Path, experiment: &str, seed: u64) -> PathBuf {
    sweep_dir.join(experiment).join(format!("seed-{seed}"))
}

fn check_writable(dir: &Path) -> std::result::Result<(), RunError> {
    let err = |source| RunError::Unwritable {
        path: dir.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(err)?;
    let probe = dir.join(".write-check");
    File::create(&probe).and_then(|mut f| f.write_all(b"ok")).map_err(err)?;
    fs::remove_file(&probe).map_err(err)
}

/// Run every (experiment, seed) pair of the sweep. Runs that fail keep their
/// partial artifacts and are reported in the outcome; the comparison table
/// covers experiments whose runs all completed.
pub fn run_sweep(spec: &SweepSpec, opts: &RunOptions) -> std::result::Result<SweepOutcome, RunError> {
    let sweep_dir = opts.out_root.join(&spec.name);
    check_writable(&sweep_dir)?;
    let sweep_file = sweep_dir.join(SWEEP_FILE);
    fs::write(&sweep_file, spec.to_toml()).map_err(|source| RunError::Write {
        path: sweep_file,
        source,
    })?;

    let tasks: Vec<(&ExperimentSpec, u64)> = spec
        .experiments
        .iter()
        .flat_map(|e| e.seeds().map(move |s| (e, s)))
        .collect();
    let slots: Mutex<Vec<Option<RunResult>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = opts.jobs.clamp(1, tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(exp, seed)) = tasks.get(i) else { break };
                let dir = run_dir(&sweep_dir, &exp.name, seed);
                let outcome = run_one(spec, exp, seed, &dir, opts.snapshots).map_err(|e| format!("{e:#}"));
                if opts.progress {
                    match &outcome {
                        Ok(_) => eprintln!("done   {} seed {seed}", exp.name),
                        Err(e) => eprintln!("FAILED {} seed {seed}: {e}", exp.name),
                    }
                }
                slots.lock().unwrap()[i] = Some(RunResult {
                    experiment: exp.name.clone(),
                    seed,
                    dir,
                    outcome,
                });
            });
        }
    });
    let runs: Vec<RunResult> = slots.into_inner().unwrap().into_iter().map(|r| r.expect("every task ran")).collect();

    let table = comparison_csv(spec, &runs);
    let path = sweep_dir.join(COMPARISON_FILE);
    fs::write(&path, table).map_err(|source| RunError::Write { path, source })?;
    Ok(SweepOutcome { sweep_dir, runs })
}

struct RunFiles {
    metrics: MetricsWriter<BufWriter<File>>,
    sampling: BufWriter<File>,
    curation: BufWriter<File>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

/// Execute one run into `dir`, writing artifacts as each generation finishes.
pub fn run_one(spec: &SweepSpec, exp: &ExperimentSpec, seed: u64, dir: &Path, snapshots: bool) -> Result<Vec<MetricsRecord>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if snapshots {
        fs::create_dir_all(dir.join(MODELS_DIR))?;
        fs::create_dir_all(dir.join(DATASETS_DIR))?;
    }
    let config_text = spec.run_document(exp, seed);
    fs::write(dir.join(CONFIG_FILE), &config_text)?;
    let mut manifest = Manifest {
        format: 1,
        sweep: spec.name.clone(),
        experiment: exp.name.clone(),
        seed,
        world_seed: spec.world_seed,
        config_sha256: sha256_hex(config_text.as_bytes()),
        generations: spec.generations,
        completed_generations: 0,
        status: RunStatus::Running,
        error: None,
    };
    write_manifest(dir, &manifest)?;

    let mut files = RunFiles {
        metrics: MetricsWriter::new(create(&dir.join(METRICS_FILE))?)?,
        sampling: create(&dir.join(SAMPLING_FILE))?,
        curation: create(&dir.join(CURATION_FILE))?,
    };
    let mut written = 0u32;
    let mut io_error = None;
    let result = run_loop_with(exp.with_seed(seed), |sim, report| {
        let t = sim.state().t;
        let mut step = || -> Result<()> {
            if snapshots {
                fs::write(dir.join(MODELS_DIR).join(model_file(t)), formats::model_to_string(sim.model()))?;
                let mut w = create(&dir.join(DATASETS_DIR).join(dataset_file(t)))?;
                write_dataset(&mut w, sim.state().current())?;
                w.flush()?;
            }
            if let Some(report) = report {
                write_jsonl(&mut files.sampling, [SamplingRow::from(&report.sampling)])?;
                write_jsonl(&mut files.curation, report.curation.iter().map(|r| CurationRow::new(t, r)))?;
                files.sampling.flush()?;
                files.curation.flush()?;
            }
            files.metrics.write(sim.history().last().expect("history is never empty"))?;
            Ok(())
        };
        match step() {
            Ok(()) => {
                written += 1;
                Ok(())
            }
            Err(e) => {
                io_error = Some(e);
                Err(scpl_core::Error::InvalidArgument("artifact write failed".into()))
            }
        }
    });

    manifest.completed_generations = written;
    let outcome = match (result, io_error) {
        (Ok(history), None) => {
            manifest.status = RunStatus::Complete;
            Ok(history)
        }
        (_, Some(e)) => Err(e),
        (Err(e), None) => Err(anyhow::Error::new(e)),
    };
    if let Err(e) = &outcome {
        manifest.status = RunStatus::Failed;
        manifest.error = Some(format!("{e:#}"));
    }
    write_manifest(dir, &manifest)?;
    outcome.with_context(|| format!("experiment {:?} seed {seed}", exp.name))
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut n = 0usize;
    let mut total = 0.0;
    for v in values {
        let v = v?;
        total += v;
        n += 1;
    }
    (n > 0).then(|| total / n as f64)
}

fn metric(r: &MetricsRecord, i: usize) -> Option<f64> {
    match i {
        0 => r.preference_bias,
        1 => r.generation_quality,
        2 => r.pass1_a,
        3 => r.pass1_d,
        4 => r.disparate_bias,
        5 => r.similarity,
        _ => Some(r.dataset_ratio),
    }
}

/// Wide table: one row per generation, one column per (metric, experiment),
/// each cell the mean over repeats. Experiments with a failed run are left out.
pub fn comparison_csv(spec: &SweepSpec, runs: &[RunResult]) -> String {
    let complete: Vec<(&str, Vec<&Vec<MetricsRecord>>)> = spec
        .experiments
        .iter()
        .filter_map(|e| {
            let histories: Option<Vec<_>> = runs
                .iter()
                .filter(|r| r.experiment == e.name)
                .map(|r| r.outcome.as_ref().ok())
                .collect();
            histories.filter(|h| !h.is_empty()).map(|h| (e.name.as_str(), h))
        })
        .collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["generation".to_string()];
    for m in &formats::METRICS_HEADER[1..] {
        for (name, _) in &complete {
            header.push(format!("{m}[{name}]"));
        }
    }
    w.write_record(&header).expect("in-memory csv");
    for t in 0..=spec.generations {
        let mut row = vec![t.to_string()];
        for i in 0..formats::METRICS_HEADER.len() - 1 {
            for (_, histories) in &complete {
                let cell = mean(histories.iter().map(|h| h.get(t as usize).and_then(|r| metric(r, i))));
                row.push(cell.map(|v| v.to_string()).unwrap_or_default());
            }
        }
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_skips_nothing() {
        assert_eq!(mean([Some(1.0), Some(2.0)].into_iter()), Some(1.5));
        assert_eq!(mean([Some(1.0), None].into_iter()), None);
        assert_eq!(mean(std::iter::empty()), None);
    }

    #[test]
    fn run_dirs_are_per_seed() {
        assert_eq!(run_dir(Path::new("out/s"), "syn", 3), PathBuf::from("out/s/syn/seed-3"));
    }
}
