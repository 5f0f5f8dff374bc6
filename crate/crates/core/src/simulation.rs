//! The generation loop: sample, curate, mix, accumulate, train, evaluate.

use alloc::vec::Vec;

use rand::seq::index;

use crate::curation::{curate, CurationContext, CurationRecord, CurationStrategy, RewardSpec};
use crate::error::{invalid, Result};
use crate::evaluator::{Decoding, Evaluator, EvaluatorSpec, MetricsRecord, Pass1Mode};
use crate::generator::{
    finetune, uniform_counts, Context, CountSpec, ModelKind, ModelParams, Smoothing, SoftmaxModel, TrainingRegime,
};
use crate::rng::{domain, stream};
use crate::sampler::{plan_sampling, respond, RatioSchedule, SamplingRecord, SamplingStep, ScoreKind};
use crate::world::{
    draw_candidate_prompts_for, draw_heldout, draw_initial_dataset, GroupedDataset, Origin, PoolPrompt,
    PreferenceParams, Sample, World, WorldKind,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WorldSpec {
    Preference(PreferenceParams),
    Skill {
        n_easy: usize,
        n_hard: usize,
        easy_answer_space: usize,
        hard_answer_space: usize,
    },
}

impl WorldSpec {
    pub fn build(&self, seed: u64) -> Result<World> {
        match *self {
            WorldSpec::Preference(p) => World::preference(p, seed),
            WorldSpec::Skill {
                n_easy,
                n_hard,
                easy_answer_space,
                hard_answer_space,
            } => World::skill(n_easy, n_hard, easy_answer_space, hard_answer_space, seed),
        }
    }

    pub fn kind(&self) -> WorldKind {
        match self {
            WorldSpec::Preference(_) => WorldKind::Preference,
            WorldSpec::Skill { .. } => WorldKind::Skill,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegimeKind {
    Retrain,
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cycle {
    FullSynthetic,
    Accumulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataSource {
    Synthetic,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub model: ModelKind,
    pub eta: f64,
    pub epochs: u32,
    pub lambda: f64,
    pub smoothing: Smoothing,
    pub temperature: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::CountNgram,
            eta: 0.7,
            epochs: 5,
            lambda: 0.5,
            smoothing: Smoothing::UnigramBackoff,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurationConfig {
    pub strategy: CurationStrategy,
    pub k: usize,
    pub reward: RewardSpec,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            strategy: CurationStrategy::None,
            k: 4,
            reward: RewardSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalDecoding {
    Greedy,
    /// Temperature-1 sampling with one fixed stream per held-out prompt.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub decoding: EvalDecoding,
    pub pass1: Pass1Mode,
    /// World samples per group behind the classifier and quality references.
    pub reference_per_group: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            decoding: EvalDecoding::Sampled,
            pass1: Pass1Mode::Expected,
            reference_per_group: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConfig {
    pub world: WorldSpec,
    /// Seed of the world, its held-out set and its metric references.
    pub world_seed: u64,
    pub generations: u32,
    pub dataset_size: usize,
    pub heldout_per_group: usize,
    pub regime: RegimeKind,
    pub cycle: Cycle,
    pub data_source: DataSource,
    pub schedule: RatioSchedule,
    pub curation: CurationConfig,
    /// Share of each generation's samples answered by a frozen external model.
    pub external_mix_ratio: f64,
    pub training: TrainingConfig,
    pub evaluation: EvalConfig,
    /// Master seed of everything that is not part of the world.
    pub seed: u64,
}

impl LoopConfig {
    /// Synthetic-data, incremental, full-synthetic loop with a linear
    /// 0.4 → 0.22 schedule.
    pub fn new(world: WorldSpec, generations: u32) -> Self {
        Self {
            world,
            world_seed: 0,
            generations,
            dataset_size: 2000,
            heldout_per_group: 500,
            regime: RegimeKind::Incremental,
            cycle: Cycle::FullSynthetic,
            data_source: DataSource::Synthetic,
            schedule: RatioSchedule::linear(0.4, 0.22, generations),
            curation: CurationConfig::default(),
            external_mix_ratio: 0.0,
            training: TrainingConfig::default(),
            evaluation: EvalConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.schedule.total_generations != self.generations {
            return Err(invalid("schedule length differs from the number of generations"));
        }
        if self.dataset_size == 0 {
            return Err(invalid("dataset_size must be at least 1"));
        }
        if self.heldout_per_group == 0 {
            return Err(invalid("heldout_per_group must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.external_mix_ratio) {
            return Err(invalid("external_mix_ratio out of [0,1]"));
        }
        let tr = &self.training;
        if !(0.0..=1.0).contains(&tr.eta) {
            return Err(invalid("eta out of [0,1]"));
        }
        if !(tr.lambda > 0.0 && tr.lambda.is_finite()) {
            return Err(invalid("lambda must be positive"));
        }
        if !(tr.temperature > 0.0 && tr.temperature.is_finite()) {
            return Err(invalid("temperature must be positive"));
        }
        if tr.model == ModelKind::SoftmaxUnigram && self.world.kind() == WorldKind::Skill {
            return Err(invalid("the softmax model cannot condition on skill-world prompts"));
        }
        self.curation.reward.validate()?;
        if self.curation.k == 0 {
            return Err(invalid("curation k must be at least 1"));
        }
        if self.curation.strategy != CurationStrategy::None {
            if self.data_source == DataSource::Real {
                return Err(invalid("curation applies to synthetic data only"));
            }
            if self.world.kind() != WorldKind::Preference {
                return Err(invalid("curation needs a preference world"));
            }
        }
        if self.evaluation.reference_per_group == 0 {
            return Err(invalid("reference_per_group must be at least 1"));
        }
        Ok(())
    }
}

/// What one generation produced besides the model itself.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub sampling: SamplingRecord,
    pub curation: Vec<CurationRecord>,
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopState {
    pub t: u32,
    pub model: ModelParams,
    /// `D_0, …, D_t` (only the last one under the full-synthetic cycle).
    pub datasets: Vec<GroupedDataset>,
    /// Prompts behind the latest dataset.
    pub prompts: Vec<PoolPrompt>,
    pub ratio: f64,
    pub history: Vec<MetricsRecord>,
    /// Size of the last training set.
    pub training_size: usize,
}

impl LoopState {
    pub fn current(&self) -> &GroupedDataset {
        self.datasets.last().expect("D_0 always exists")
    }
}

pub struct Simulation {
    config: LoopConfig,
    world: World,
    heldout: GroupedDataset,
    evaluator: Evaluator,
    regime: TrainingRegime,
    external: Option<ModelParams>,
    state: LoopState,
}

fn prior(config: &LoopConfig, world: &World) -> Result<ModelParams> {
    match config.training.model {
        ModelKind::CountNgram => {
            let context = match world.kind() {
                WorldKind::Preference => Context::Bigram,
                WorldKind::Skill => Context::Prompt,
            };
            uniform_counts(CountSpec::new(context, config.training.smoothing, config.training.lambda, world.vocab_size()))
        }
        ModelKind::SoftmaxUnigram => Ok(ModelParams::SoftmaxUnigram(SoftmaxModel::zeros(world.vocab_size())?)),
    }
}

fn as_prompts(data: &GroupedDataset) -> Vec<PoolPrompt> {
    data.samples
        .iter()
        .enumerate()
        .map(|(i, s)| PoolPrompt {
            id: i as u64,
            prompt: s.prompt.clone(),
            group: s.group,
            ground_truth: s.ground_truth.clone().unwrap_or_else(|| s.response.clone()),
        })
        .collect()
}

impl Simulation {
    /// Build the world, draw `D_0`, train `M_0` and record its metrics.
    pub fn initialize(config: LoopConfig) -> Result<Self> {
        config.validate()?;
        let world = config.world.build(config.world_seed)?;
        let heldout = draw_heldout(&world, config.heldout_per_group, config.world_seed)?;
        let decoding = match config.evaluation.decoding {
            EvalDecoding::Greedy => Decoding::Greedy,
            EvalDecoding::Sampled => Decoding::Sampled {
                seed: config.seed,
                temperature: 1.0,
            },
        };
        let eval_spec = EvaluatorSpec {
            reference_per_group: config.evaluation.reference_per_group,
            lambda: config.training.lambda,
            decoding,
            pass1_mode: config.evaluation.pass1,
        };
        let evaluator = Evaluator::for_world(&world, &eval_spec, config.world_seed)?;

        let r0 = config.schedule.ratio(0)?;
        let d0 = draw_initial_dataset(&world, config.dataset_size, r0, config.seed)?;
        let tr = config.training;
        let prior = prior(&config, &world)?;
        let m0 = finetune(&prior, &d0, tr.eta, tr.epochs)?;
        let regime = match config.regime {
            RegimeKind::Retrain => TrainingRegime::Retrain(m0.clone()),
            RegimeKind::Incremental => TrainingRegime::Incremental,
        };
        let external = if config.external_mix_ratio > 0.0 {
            let d = world.draw_dataset(config.dataset_size, 0.5, config.seed, domain::EXTERNAL, 0)?;
            Some(finetune(&prior, &d, tr.eta, tr.epochs)?)
        } else {
            None
        };
        let metrics = evaluator.evaluate(&m0, &heldout, 0, d0.disadvantaged_ratio())?;
        let state = LoopState {
            t: 0,
            model: m0,
            prompts: as_prompts(&d0),
            training_size: d0.len(),
            datasets: alloc::vec![d0],
            ratio: r0,
            history: alloc::vec![metrics],
        };
        Ok(Self {
            config,
            world,
            heldout,
            evaluator,
            regime,
            external,
            state,
        })
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn heldout(&self) -> &GroupedDataset {
        &self.heldout
    }

    pub fn evaluator(&self) -> &Evaluator {
        &self.evaluator
    }

    pub fn state(&self) -> &LoopState {
        &self.state
    }

    pub fn model(&self) -> &ModelParams {
        &self.state.model
    }

    pub fn history(&self) -> &[MetricsRecord] {
        &self.state.history
    }

    pub fn is_finished(&self) -> bool {
        self.state.t >= self.config.generations
    }

    fn score_kind(&self) -> ScoreKind {
        match self.world.kind() {
            WorldKind::Preference => ScoreKind::LogLikelihood,
            WorldKind::Skill => ScoreKind::Pass1(self.config.evaluation.pass1),
        }
    }

    /// Replace `round(n·mix)` uniformly chosen responses with external-model output.
    fn mix_external(&self, samples: &mut [Sample], t: u32) -> Result<()> {
        let Some(ext) = &self.external else {
            return Ok(());
        };
        let m = crate::world::disadvantaged_count(samples.len(), self.config.external_mix_ratio);
        let mut rng = stream(self.config.seed, domain::EXTERNAL, t as u64, u64::MAX);
        let mut picks = index::sample(&mut rng, samples.len(), m).into_vec();
        picks.sort_unstable();
        let prompts: Vec<PoolPrompt> = picks
            .iter()
            .map(|&i| PoolPrompt {
                id: i as u64,
                prompt: samples[i].prompt.clone(),
                group: samples[i].group,
                ground_truth: samples[i].ground_truth.clone().unwrap_or_default(),
            })
            .collect();
        let len = self.world.response_len();
        let answers = respond(ext, &prompts, len, self.config.training.temperature, self.config.seed, domain::EXTERNAL, t, Origin::External)?;
        for (&i, a) in picks.iter().zip(answers) {
            samples[i].response = a.response;
            samples[i].origin = Origin::External;
        }
        Ok(())
    }

    /// Run generation `t = state.t + 1`.
    pub fn step(&mut self) -> Result<StepReport> {
        let t = self.state.t + 1;
        if t > self.config.generations {
            return Err(crate::error::Error::GenerationOutOfRange {
                t,
                total: self.config.generations,
            });
        }
        let cfg = &self.config;
        let n = cfg.dataset_size;
        let mut pool = draw_candidate_prompts_for(&self.world, n, n, cfg.seed, t);
        if self.world.kind() == WorldKind::Preference {
            pool.exclude(&self.heldout);
        }
        let step = SamplingStep {
            schedule: &cfg.schedule,
            t,
            n,
            temperature: cfg.training.temperature,
            score_kind: self.score_kind(),
            previous_ratio: self.state.ratio,
            previous_prompts: Some(&self.state.prompts),
            seed: cfg.seed,
        };
        let plan = plan_sampling(&self.state.model, &pool, &self.heldout, &step)?;
        let response_len = self.world.response_len();

        let mut curation_log = Vec::new();
        let mut samples = match (cfg.data_source, cfg.curation.strategy) {
            (DataSource::Real, _) => plan
                .prompts
                .iter()
                .map(|p| Sample {
                    prompt: p.prompt.clone(),
                    response: p.ground_truth.clone(),
                    group: p.group,
                    ground_truth: Some(p.ground_truth.clone()),
                    origin: Origin::Real,
                })
                .collect(),
            (DataSource::Synthetic, CurationStrategy::None) => respond(
                &self.state.model,
                &plan.prompts,
                response_len,
                cfg.training.temperature,
                cfg.seed,
                domain::GENERATE,
                t,
                Origin::Synthetic,
            )?,
            (DataSource::Synthetic, strategy) => {
                let ctx = CurationContext {
                    model: &self.state.model,
                    spec: &cfg.curation.reward,
                    scorer: self.evaluator.quality().ok_or_else(|| invalid("curation needs a quality scorer"))?,
                    classifier: self.evaluator.classifier().ok_or_else(|| invalid("curation needs a classifier"))?,
                    extensions: &[],
                    response_len,
                    temperature: cfg.training.temperature,
                    seed: cfg.seed,
                    generation: t,
                };
                let curated = curate(strategy, &ctx, &plan.prompts, n, cfg.curation.k)?;
                curation_log = curated.records;
                curated.samples
            }
        };
        self.mix_external(&mut samples, t)?;
        let provenance = GroupedDataset::infer_provenance(&samples);
        let d_t = GroupedDataset::new(samples, provenance, t);
        let sampling = SamplingRecord {
            n_a: d_t.count(crate::world::GroupLabel::Advantaged),
            n_d: d_t.count(crate::world::GroupLabel::Disadvantaged),
            ..plan.record(&step)
        };

        if cfg.cycle == Cycle::FullSynthetic {
            self.state.datasets.clear();
        }
        self.state.datasets.push(d_t);
        let training = match cfg.cycle {
            Cycle::FullSynthetic => self.state.current().clone(),
            Cycle::Accumulation => GroupedDataset::union(&self.state.datasets, t),
        };
        let model = self
            .regime
            .train(&self.state.model, &training, cfg.training.eta, cfg.training.epochs)?;
        let ratio = self.state.current().disadvantaged_ratio();
        let metrics = self.evaluator.evaluate(&model, &self.heldout, t, ratio)?;

        self.state.t = t;
        self.state.model = model;
        self.state.prompts = plan.prompts;
        self.state.ratio = plan.r_d;
        self.state.training_size = training.len();
        self.state.history.push(metrics.clone());
        Ok(StepReport {
            sampling,
            curation: curation_log,
            metrics,
        })
    }
}

/// Run all generations, handing each finished step to `observe`.
pub fn run_loop_with<F>(config: LoopConfig, mut observe: F) -> Result<Vec<MetricsRecord>>
where
    F: FnMut(&Simulation, Option<&StepReport>) -> Result<()>,
{
    let mut sim = Simulation::initialize(config)?;
    observe(&sim, None)?;
    while !sim.is_finished() {
        let report = sim.step()?;
        observe(&sim, Some(&report))?;
    }
    Ok(sim.state.history)
}

pub fn run_loop(config: LoopConfig) -> Result<Vec<MetricsRecord>> {
    run_loop_with(config, |_, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::ScheduleKind;
    use crate::world::{GroupLabel, Provenance};

    fn small(generations: u32) -> LoopConfig {
        let mut c = LoopConfig::new(WorldSpec::Preference(PreferenceParams::new(16, 0.0)), generations);
        c.dataset_size = 200;
        c.heldout_per_group = 40;
        c.evaluation.reference_per_group = 200;
        c
    }

    #[test]
    fn zero_generations_records_only_m0() {
        let h = run_loop(small(0)).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].generation, 0);
    }

    #[test]
    fn initial_dataset_and_determinism() {
        let mut c = small(1);
        c.dataset_size = 5000;
        let a = Simulation::initialize(c).unwrap();
        assert_eq!(a.state().current().count(GroupLabel::Disadvantaged), 2000);
        let b = Simulation::initialize(c).unwrap();
        assert_eq!(a.model(), b.model());
    }

    #[test]
    fn dataset_ratios_follow_the_schedule() {
        let h = run_loop(small(3)).unwrap();
        let ratios: Vec<f64> = h.iter().map(|r| r.dataset_ratio).collect();
        assert_eq!(ratios, vec![0.40, 0.34, 0.28, 0.22]);
        assert!(h.windows(2).all(|w| w[1].generation == w[0].generation + 1));
        assert_eq!(run_loop(small(3)).unwrap(), h);
    }

    #[test]
    fn accumulation_grows_the_training_set() {
        let mut c = small(3);
        c.cycle = Cycle::Accumulation;
        let mut sizes = Vec::new();
        run_loop_with(c, |sim, _| {
            sizes.push(sim.state().training_size);
            Ok(())
        })
        .unwrap();
        assert_eq!(sizes, vec![200, 400, 600, 800]);
        let mut full = Vec::new();
        run_loop_with(small(3), |sim, _| {
            full.push(sim.state().training_size);
            Ok(())
        })
        .unwrap();
        assert_eq!(full, vec![200; 4]);
    }

    #[test]
    fn external_mixing_marks_provenance() {
        let mut c = small(1);
        c.external_mix_ratio = 0.5;
        let mut sim = Simulation::initialize(c).unwrap();
        sim.step().unwrap();
        let d = sim.state().current();
        assert_eq!(d.samples.iter().filter(|s| s.origin == Origin::External).count(), 100);
        assert_eq!(d.provenance, Provenance::Mixed);
    }

    #[test]
    fn non_dynamic_reuses_prompts() {
        let mut c = small(2);
        c.schedule = RatioSchedule::non_dynamic(0.4, 2);
        let mut sim = Simulation::initialize(c).unwrap();
        let p0: Vec<_> = sim.state().current().prompts().map(|p| p.to_vec()).collect();
        sim.step().unwrap();
        let p1: Vec<_> = sim.state().current().prompts().map(|p| p.to_vec()).collect();
        sim.step().unwrap();
        let p2: Vec<_> = sim.state().current().prompts().map(|p| p.to_vec()).collect();
        assert_eq!(p0, p1);
        assert_eq!(p1, p2);
        assert_eq!(sim.config().schedule.kind, ScheduleKind::NonDynamic);
    }

    #[test]
    fn real_source_keeps_real_provenance() {
        let mut c = small(1);
        c.data_source = DataSource::Real;
        let mut sim = Simulation::initialize(c).unwrap();
        sim.step().unwrap();
        assert_eq!(sim.state().current().provenance, Provenance::Real);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = small(2);
        c.schedule.r_start = 1.2;
        assert!(Simulation::initialize(c).is_err());
        let mut c = small(2);
        c.curation.strategy = CurationStrategy::Tpp;
        c.data_source = DataSource::Real;
        assert!(c.validate().is_err());
        let mut c = small(2);
        c.schedule.total_generations = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn step_past_the_end_fails() {
        let mut sim = Simulation::initialize(small(0)).unwrap();
        assert!(sim.step().is_err());
    }
}
