//! Sweep configuration documents (TOML).
//!
//! A document names one world and a list of experiments that share it:
//!
//! ```toml
//! name = "bias"
//! seed = 0
//! repeats = 10
//! generations = 3
//!
//! [world]
//! kind = "preference"
//! seed = 1234
//! vocab_size = 32
//! lexicon_overlap = 0.0
//!
//! [defaults]
//! dataset_size = 2000
//!
//! [[experiments]]
//! name = "syn-dynamic"
//!
//! [[experiments]]
//! name = "real-dynamic"
//! data_source = "real"
//! ```
//!
//! Keys in `[defaults]` apply to every experiment unless the experiment sets
//! them itself. A document without `[[experiments]]` describes a single
//! experiment called `default`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use scpl_core::curation::{CurationStrategy, RewardSpec};
use scpl_core::evaluator::Pass1Mode;
use scpl_core::generator::{ModelKind, Smoothing};
use scpl_core::sampler::{RatioSchedule, ScheduleKind};
use scpl_core::simulation::{
    CurationConfig, Cycle, DataSource, EvalConfig, EvalDecoding, LoopConfig, RegimeKind, TrainingConfig, WorldSpec,
};
use scpl_core::world::PreferenceParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum WorldKindKey {
    Preference,
    Skill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RegimeKey {
    Retrain,
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CycleKey {
    FullSynthetic,
    Accumulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SourceKey {
    Synthetic,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ScheduleKey {
    Linear,
    Fixed,
    NonDynamic,
    Feedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CurationKey {
    None,
    Vrs,
    Tpp,
    Top,
    Reweight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModelKey {
    Count,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SmoothingKey {
    Additive,
    Backoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DecodingKey {
    Sampled,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Pass1Key {
    Expected,
    Greedy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldDoc {
    kind: Option<WorldKindKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    vocab_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lexicon_overlap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stickiness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    zipf_exponent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    response_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_easy: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_hard: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    easy_answer_space: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hard_answer_space: Option<usize>,
}

/// Per-experiment keys. Every field is optional so the same table serves
/// `[defaults]` and `[[experiments]]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Settings {
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    heldout_per_group: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    regime: Option<RegimeKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cycle: Option<CycleKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    data_source: Option<SourceKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    schedule: Option<ScheduleKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    feedback_gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    curation: Option<CurationKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    similarity_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    external_mix_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<ModelKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    smoothing: Option<SmoothingKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eval_decoding: Option<DecodingKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pass1: Option<Pass1Key>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_per_group: Option<usize>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),*) => {
        Settings { $($field: $top.$field.clone().or_else(|| $base.$field.clone()),)* }
    };
}

impl Settings {
    fn overlay(&self, top: &Settings) -> Settings {
        overlay!(
            self, top, name, dataset_size, heldout_per_group, regime, cycle, data_source, schedule, r_start, r_end,
            feedback_gain, curation, k, alpha1, alpha2, similarity_threshold, external_mix_ratio, model, eta, epochs,
            lambda, smoothing, temperature, eval_decoding, pass1, reference_per_group
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    repeats: Option<u32>,
    generations: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    world: WorldDoc,
    #[serde(skip_serializing_if = "Option::is_none")]
    defaults: Option<Settings>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    experiments: Vec<Settings>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    /// Configuration of the first repeat; repeat `i` runs with seed `loop_config.seed + i`.
    pub loop_config: LoopConfig,
    pub repeats: u32,
}

impl ExperimentSpec {
    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repeats as u64).map(|i| self.loop_config.seed + i)
    }

    pub fn with_seed(&self, seed: u64) -> LoopConfig {
        LoopConfig { seed, ..self.loop_config }
    }
}

/// A validated sweep: experiments over one shared world.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub name: String,
    pub seed: u64,
    pub repeats: u32,
    pub generations: u32,
    pub world: WorldSpec,
    pub world_seed: u64,
    /// Output root requested by the document, if any.
    pub out: Option<PathBuf>,
    pub experiments: Vec<ExperimentSpec>,
}

const DEFAULT_NAME: &str = "default";
/// TOML integers are signed 64-bit.
const MAX_SEED: u64 = i64::MAX as u64;

fn check_name(what: &str, name: &str) -> Result<(), ConfigError> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(invalid(format!("{what} name {name:?} must be non-empty and use only [A-Za-z0-9._-]")))
    }
}

fn world_spec(doc: &WorldDoc) -> Result<WorldSpec, ConfigError> {
    let kind = doc.kind.ok_or_else(|| invalid("world.kind is required"))?;
    match kind {
        WorldKindKey::Preference => {
            let stray = [
                ("n_easy", doc.n_easy),
                ("n_hard", doc.n_hard),
                ("easy_answer_space", doc.easy_answer_space),
                ("hard_answer_space", doc.hard_answer_space),
            ];
            if let Some((key, _)) = stray.iter().find(|(_, v)| v.is_some()) {
                return Err(invalid(format!("world.{key} does not apply to a preference world")));
            }
            let base = PreferenceParams::new(
                doc.vocab_size.ok_or_else(|| invalid("world.vocab_size is required"))?,
                doc.lexicon_overlap.unwrap_or(0.0),
            );
            Ok(WorldSpec::Preference(PreferenceParams {
                stickiness: doc.stickiness.unwrap_or(base.stickiness),
                zipf_exponent: doc.zipf_exponent.unwrap_or(base.zipf_exponent),
                prompt_len: doc.prompt_len.unwrap_or(base.prompt_len),
                response_len: doc.response_len.unwrap_or(base.response_len),
                ..base
            }))
        }
        WorldKindKey::Skill => {
            let stray = [
                ("vocab_size", doc.vocab_size.is_some()),
                ("lexicon_overlap", doc.lexicon_overlap.is_some()),
                ("stickiness", doc.stickiness.is_some()),
                ("zipf_exponent", doc.zipf_exponent.is_some()),
                ("prompt_len", doc.prompt_len.is_some()),
                ("response_len", doc.response_len.is_some()),
            ];
            if let Some((key, _)) = stray.iter().find(|(_, set)| *set) {
                return Err(invalid(format!("world.{key} does not apply to a skill world")));
            }
            let need = |v: Option<usize>, key: &str| v.ok_or_else(|| invalid(format!("world.{key} is required")));
            Ok(WorldSpec::Skill {
                n_easy: need(doc.n_easy, "n_easy")?,
                n_hard: need(doc.n_hard, "n_hard")?,
                easy_answer_space: need(doc.easy_answer_space, "easy_answer_space")?,
                hard_answer_space: need(doc.hard_answer_space, "hard_answer_space")?,
            })
        }
    }
}

fn world_doc(world: &WorldSpec, seed: u64) -> WorldDoc {
    match *world {
        WorldSpec::Preference(p) => WorldDoc {
            kind: Some(WorldKindKey::Preference),
            seed: Some(seed),
            vocab_size: Some(p.vocab_size),
            lexicon_overlap: Some(p.lexicon_overlap),
            stickiness: Some(p.stickiness),
            zipf_exponent: Some(p.zipf_exponent),
            prompt_len: Some(p.prompt_len),
            response_len: Some(p.response_len),
            ..WorldDoc::default()
        },
        WorldSpec::Skill {
            n_easy,
            n_hard,
            easy_answer_space,
            hard_answer_space,
        } => WorldDoc {
            kind: Some(WorldKindKey::Skill),
            seed: Some(seed),
            n_easy: Some(n_easy),
            n_hard: Some(n_hard),
            easy_answer_space: Some(easy_answer_space),
            hard_answer_space: Some(hard_answer_space),
            ..WorldDoc::default()
        },
    }
}

fn loop_config(s: &Settings, world: WorldSpec, world_seed: u64, generations: u32, seed: u64) -> LoopConfig {
    let base = LoopConfig::new(world, generations);
    let training = TrainingConfig::default();
    let curation = CurationConfig::default();
    let evaluation = EvalConfig::default();

    let kind = match s.schedule.unwrap_or(ScheduleKey::Linear) {
        ScheduleKey::Linear => ScheduleKind::LinearControlled,
        ScheduleKey::Fixed => ScheduleKind::FixedRatio,
        ScheduleKey::NonDynamic => ScheduleKind::NonDynamic,
        ScheduleKey::Feedback => ScheduleKind::Feedback,
    };
    let r_start = s.r_start.unwrap_or(base.schedule.r_start);
    let r_end = s.r_end.unwrap_or(match kind {
        ScheduleKind::LinearControlled => base.schedule.r_end,
        _ => r_start,
    });
    let schedule = RatioSchedule {
        kind,
        r_start,
        r_end,
        total_generations: generations,
        feedback_gain: s.feedback_gain.unwrap_or(0.0),
    };

    LoopConfig {
        world_seed,
        seed,
        dataset_size: s.dataset_size.unwrap_or(base.dataset_size),
        heldout_per_group: s.heldout_per_group.unwrap_or(base.heldout_per_group),
        regime: match s.regime {
            Some(RegimeKey::Retrain) => RegimeKind::Retrain,
            Some(RegimeKey::Incremental) => RegimeKind::Incremental,
            None => base.regime,
        },
        cycle: match s.cycle {
            Some(CycleKey::FullSynthetic) => Cycle::FullSynthetic,
            Some(CycleKey::Accumulation) => Cycle::Accumulation,
            None => base.cycle,
        },
        data_source: match s.data_source {
            Some(SourceKey::Synthetic) => DataSource::Synthetic,
            Some(SourceKey::Real) => DataSource::Real,
            None => base.data_source,
        },
        schedule,
        curation: CurationConfig {
            strategy: match s.curation {
                Some(CurationKey::None) | None => curation.strategy,
                Some(CurationKey::Vrs) => CurationStrategy::Vrs,
                Some(CurationKey::Tpp) => CurationStrategy::Tpp,
                Some(CurationKey::Top) => CurationStrategy::Top,
                Some(CurationKey::Reweight) => CurationStrategy::Reweight,
            },
            k: s.k.unwrap_or(curation.k),
            reward: RewardSpec {
                alpha1: s.alpha1.unwrap_or(curation.reward.alpha1),
                alpha2: s.alpha2.unwrap_or(curation.reward.alpha2),
                similarity_threshold: s.similarity_threshold.unwrap_or(curation.reward.similarity_threshold),
            },
        },
        external_mix_ratio: s.external_mix_ratio.unwrap_or(base.external_mix_ratio),
        training: TrainingConfig {
            model: match s.model {
                Some(ModelKey::Count) | None => training.model,
                Some(ModelKey::Softmax) => ModelKind::SoftmaxUnigram,
            },
            eta: s.eta.unwrap_or(training.eta),
            epochs: s.epochs.unwrap_or(training.epochs),
            lambda: s.lambda.unwrap_or(training.lambda),
            smoothing: match s.smoothing {
                Some(SmoothingKey::Additive) => Smoothing::Additive,
                Some(SmoothingKey::Backoff) => Smoothing::UnigramBackoff,
                None => training.smoothing,
            },
            temperature: s.temperature.unwrap_or(training.temperature),
        },
        evaluation: EvalConfig {
            decoding: match s.eval_decoding {
                Some(DecodingKey::Sampled) => EvalDecoding::Sampled,
                Some(DecodingKey::Greedy) => EvalDecoding::Greedy,
                None => evaluation.decoding,
            },
            pass1: match s.pass1 {
                Some(Pass1Key::Expected) => Pass1Mode::Expected,
                Some(Pass1Key::Greedy) => Pass1Mode::Greedy,
                None => evaluation.pass1,
            },
            reference_per_group: s.reference_per_group.unwrap_or(evaluation.reference_per_group),
        },
        ..base
    }
}

fn settings(name: &str, c: &LoopConfig) -> Settings {
    Settings {
        name: Some(name.to_string()),
        dataset_size: Some(c.dataset_size),
        heldout_per_group: Some(c.heldout_per_group),
        regime: Some(match c.regime {
            RegimeKind::Retrain => RegimeKey::Retrain,
            RegimeKind::Incremental => RegimeKey::Incremental,
        }),
        cycle: Some(match c.cycle {
            Cycle::FullSynthetic => CycleKey::FullSynthetic,
            Cycle::Accumulation => CycleKey::Accumulation,
        }),
        data_source: Some(match c.data_source {
            DataSource::Synthetic => SourceKey::Synthetic,
            DataSource::Real => SourceKey::Real,
        }),
        schedule: Some(match c.schedule.kind {
            ScheduleKind::LinearControlled => ScheduleKey::Linear,
            ScheduleKind::FixedRatio => ScheduleKey::Fixed,
            ScheduleKind::NonDynamic => ScheduleKey::NonDynamic,
            ScheduleKind::Feedback => ScheduleKey::Feedback,
        }),
        r_start: Some(c.schedule.r_start),
        r_end: Some(c.schedule.r_end),
        feedback_gain: Some(c.schedule.feedback_gain),
        curation: Some(match c.curation.strategy {
            CurationStrategy::None => CurationKey::None,
            CurationStrategy::Vrs => CurationKey::Vrs,
            CurationStrategy::Tpp => CurationKey::Tpp,
            CurationStrategy::Top => CurationKey::Top,
            CurationStrategy::Reweight => CurationKey::Reweight,
        }),
        k: Some(c.curation.k),
        alpha1: Some(c.curation.reward.alpha1),
        alpha2: Some(c.curation.reward.alpha2),
        similarity_threshold: Some(c.curation.reward.similarity_threshold),
        external_mix_ratio: Some(c.external_mix_ratio),
        model: Some(match c.training.model {
            ModelKind::CountNgram => ModelKey::Count,
            ModelKind::SoftmaxUnigram => ModelKey::Softmax,
        }),
        eta: Some(c.training.eta),
        epochs: Some(c.training.epochs),
        lambda: Some(c.training.lambda),
        smoothing: Some(match c.training.smoothing {
            Smoothing::Additive => SmoothingKey::Additive,
            Smoothing::UnigramBackoff => SmoothingKey::Backoff,
        }),
        temperature: Some(c.training.temperature),
        eval_decoding: Some(match c.evaluation.decoding {
            EvalDecoding::Sampled => DecodingKey::Sampled,
            EvalDecoding::Greedy => DecodingKey::Greedy,
        }),
        pass1: Some(match c.evaluation.pass1 {
            Pass1Mode::Expected => Pass1Key::Expected,
            Pass1Mode::Greedy => Pass1Key::Greedy,
        }),
        reference_per_group: Some(c.evaluation.reference_per_group),
    }
}

/// Parse and validate a sweep document, filling every default.
pub fn parse_config(text: &str) -> Result<SweepSpec, ConfigError> {
    let doc: Document = toml::from_str(text)?;
    let name = doc.name.clone().unwrap_or_else(|| DEFAULT_NAME.to_string());
    check_name("sweep", &name)?;
    let seed = doc.seed.unwrap_or(0);
    let repeats = doc.repeats.unwrap_or(1);
    let world = world_spec(&doc.world)?;
    let world_seed = doc.world.seed.unwrap_or(0);

    let defaults = doc.defaults.clone().unwrap_or_default();
    if defaults.name.is_some() {
        return Err(invalid("defaults.name is not allowed; name each experiment instead"));
    }
    let tables = if doc.experiments.is_empty() {
        vec![Settings {
            name: Some(DEFAULT_NAME.to_string()),
            ..Settings::default()
        }]
    } else {
        doc.experiments.clone()
    };

    let mut experiments = Vec::with_capacity(tables.len());
    for (i, table) in tables.iter().enumerate() {
        let merged = defaults.overlay(table);
        let exp_name = merged
            .name
            .clone()
            .ok_or_else(|| invalid(format!("experiments[{i}] has no name")))?;
        experiments.push(ExperimentSpec {
            loop_config: loop_config(&merged, world, world_seed, doc.generations, seed),
            name: exp_name,
            repeats,
        });
    }
    let spec = SweepSpec {
        name,
        seed,
        repeats,
        generations: doc.generations,
        world,
        world_seed,
        out: doc.out,
        experiments,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn load_config(path: &Path) -> Result<SweepSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_name("sweep", &self.name)?;
        if self.repeats == 0 {
            return Err(invalid("repeats must be at least 1"));
        }
        if self.experiments.is_empty() {
            return Err(invalid("a sweep needs at least one experiment"));
        }
        if self.world_seed > MAX_SEED {
            return Err(invalid(format!("world seed must not exceed {MAX_SEED}")));
        }
        match self.seed.checked_add(self.repeats as u64 - 1) {
            Some(last) if last <= MAX_SEED => {}
            _ => return Err(invalid(format!("seed + repeats - 1 must not exceed {MAX_SEED}"))),
        }
        let mut names = BTreeSet::new();
        for e in &self.experiments {
            check_name("experiment", &e.name)?;
            if !names.insert(e.name.as_str()) {
                return Err(invalid(format!("experiment name {:?} is used twice", e.name)));
            }
            let c = &e.loop_config;
            if c.world != self.world || c.world_seed != self.world_seed {
                return Err(invalid(format!("experiment {:?} does not share the sweep world", e.name)));
            }
            if c.generations != self.generations || c.seed != self.seed || e.repeats != self.repeats {
                return Err(invalid(format!(
                    "experiment {:?} disagrees with the sweep on generations, seed or repeats",
                    e.name
                )));
            }
            c.validate()
                .map_err(|err| invalid(format!("experiment {:?}: {}", e.name, reason(&err))))?;
        }
        Ok(())
    }

    /// Replace the master seed of every experiment.
    pub fn set_seed(&mut self, seed: u64) -> Result<(), ConfigError> {
        self.seed = seed;
        for e in &mut self.experiments {
            e.loop_config.seed = seed;
        }
        self.validate()
    }

    pub fn set_repeats(&mut self, repeats: u32) -> Result<(), ConfigError> {
        self.repeats = repeats;
        for e in &mut self.experiments {
            e.repeats = repeats;
        }
        self.validate()
    }

    pub fn experiment(&self, name: &str) -> Option<&ExperimentSpec> {
        self.experiments.iter().find(|e| e.name == name)
    }

    fn document(&self, experiments: Vec<Settings>, seed: u64, repeats: u32) -> Document {
        Document {
            name: Some(self.name.clone()),
            seed: Some(seed),
            repeats: Some(repeats),
            generations: self.generations,
            out: self.out.clone(),
            world: world_doc(&self.world, self.world_seed),
            defaults: None,
            experiments,
        }
    }

    /// Fully explicit TOML; `parse_config` of the result equals `self`.
    pub fn to_toml(&self) -> String {
        let experiments = self
            .experiments
            .iter()
            .map(|e| settings(&e.name, &e.loop_config))
            .collect();
        toml::to_string(&self.document(experiments, self.seed, self.repeats)).expect("sweep documents serialize")
    }

    /// Document describing exactly one run: one experiment, one seed.
    pub fn run_document(&self, experiment: &ExperimentSpec, seed: u64) -> String {
        let mut doc = self.document(vec![settings(&experiment.name, &experiment.loop_config)], seed, 1);
        doc.out = None;
        toml::to_string(&doc).expect("run documents serialize")
    }
}

/// Core errors carry an "invalid argument: " prefix that reads poorly here.
fn reason(err: &scpl_core::Error) -> String {
    match err {
        scpl_core::Error::InvalidArgument(msg) => msg.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "generations = 3\n[world]\nkind = \"preference\"\nvocab_size = 32\n";

    #[test]
    fn minimal_document_fills_defaults() {
        let spec = parse_config(MINIMAL).unwrap();
        assert_eq!(spec.name, "default");
        assert_eq!(spec.repeats, 1);
        assert_eq!(spec.experiments.len(), 1);
        let c = spec.experiments[0].loop_config;
        assert_eq!(c.training.eta, 0.7);
        assert_eq!(c.training.epochs, 5);
        assert_eq!(c.training.temperature, 1.0);
        assert_eq!(c.curation.k, 4);
        assert_eq!(c.curation.reward.alpha1, 1.0);
        assert_eq!(c.curation.reward.alpha2, 3.0);
        assert_eq!(c.schedule, RatioSchedule::linear(0.4, 0.22, 3));
        let expected = LoopConfig::new(WorldSpec::Preference(PreferenceParams::new(32, 0.0)), 3);
        assert_eq!(c, expected);
    }

    #[test]
    fn ratio_out_of_range_is_named() {
        let text = format!("{MINIMAL}[defaults]\nr_start = 1.2\n");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
        assert!(err.to_string().contains("ratio out of [0,1]"), "{err}");
    }

    #[test]
    fn parse_errors_carry_positions() {
        let err = parse_config("generations = 3\n[world]\nkind = \"preference\"\nvocab_sise = 32\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ConfigError::Parse(_)));
        assert!(msg.contains("vocab_sise") && msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn experiments_overlay_defaults() {
        let text = format!(
            "{MINIMAL}[defaults]\ndataset_size = 500\n[[experiments]]\nname = \"a\"\n[[experiments]]\nname = \"b\"\ndataset_size = 100\ncycle = \"accumulation\"\n"
        );
        let spec = parse_config(&text).unwrap();
        assert_eq!(spec.experiments[0].loop_config.dataset_size, 500);
        assert_eq!(spec.experiments[1].loop_config.dataset_size, 100);
        assert_eq!(spec.experiments[1].loop_config.cycle, Cycle::Accumulation);
    }

    #[test]
    fn duplicate_names_and_stray_world_keys_are_rejected() {
        let dup = format!("{MINIMAL}[[experiments]]\nname = \"a\"\n[[experiments]]\nname = \"a\"\n");
        assert!(parse_config(&dup).unwrap_err().to_string().contains("used twice"));
        let stray = format!("{MINIMAL}n_easy = 4\n");
        assert!(parse_config(&stray).unwrap_err().to_string().contains("n_easy"));
        let slash = format!("{MINIMAL}[[experiments]]\nname = \"a/b\"\n");
        assert!(parse_config(&slash).is_err());
    }

    #[test]
    fn fixed_schedule_ends_where_it_starts() {
        let text = format!("{MINIMAL}[defaults]\nschedule = \"fixed\"\nr_start = 0.3\n");
        let c = parse_config(&text).unwrap().experiments[0].loop_config;
        assert_eq!(c.schedule, RatioSchedule::fixed(0.3, 3));
    }

    #[test]
    fn skill_world_round_trips() {
        let text = "generations = 5\n[world]\nkind = \"skill\"\nseed = 42\nn_easy = 10\nn_hard = 20\neasy_answer_space = 5\nhard_answer_space = 50\n";
        let spec = parse_config(text).unwrap();
        assert_eq!(parse_config(&spec.to_toml()).unwrap(), spec);
    }

    #[test]
    fn seed_override_reaches_every_experiment() {
        let mut spec = parse_config(&format!("{MINIMAL}[[experiments]]\nname = \"a\"\n[[experiments]]\nname = \"b\"\n")).unwrap();
        spec.set_seed(9).unwrap();
        assert!(spec.experiments.iter().all(|e| e.loop_config.seed == 9));
        assert!(spec.set_seed(u64::MAX).is_err());
    }
}
