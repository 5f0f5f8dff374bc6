//! Performative sampling: score the previous model per group, move the
//! disadvantaged ratio, pick prompts and generate the next dataset.

use alloc::vec::Vec;

use rand::seq::index;

use crate::error::{invalid, Error, Result};
use crate::evaluator::{pass1_scores, Pass1Mode};
use crate::generator::{generate, log_likelihood, ModelParams};
use crate::rng::{domain, stream, SimRng};
use crate::world::{disadvantaged_count, GroupLabel, GroupedDataset, Origin, PoolPrompt, PromptPool, Provenance, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    LinearControlled,
    FixedRatio,
    /// Fixed ratio, and every generation reuses the previous prompts.
    NonDynamic,
    Feedback,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::LinearControlled => "linear",
            ScheduleKind::FixedRatio => "fixed",
            ScheduleKind::NonDynamic => "non_dynamic",
            ScheduleKind::Feedback => "feedback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioSchedule {
    pub kind: ScheduleKind,
    pub r_start: f64,
    pub r_end: f64,
    pub total_generations: u32,
    pub feedback_gain: f64,
}

fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

impl RatioSchedule {
    pub fn linear(r_start: f64, r_end: f64, total_generations: u32) -> Self {
        Self {
            kind: ScheduleKind::LinearControlled,
            r_start,
            r_end,
            total_generations,
            feedback_gain: 0.0,
        }
    }

    pub fn fixed(r: f64, total_generations: u32) -> Self {
        Self {
            kind: ScheduleKind::FixedRatio,
            r_end: r,
            ..Self::linear(r, r, total_generations)
        }
    }

    pub fn non_dynamic(r: f64, total_generations: u32) -> Self {
        Self {
            kind: ScheduleKind::NonDynamic,
            ..Self::fixed(r, total_generations)
        }
    }

    pub fn feedback(r_start: f64, gain: f64, total_generations: u32) -> Self {
        Self {
            kind: ScheduleKind::Feedback,
            feedback_gain: gain,
            ..Self::fixed(r_start, total_generations)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.r_start, self.r_end] {
            if !(0.0..=1.0).contains(&r) {
                return Err(invalid("ratio out of [0,1]"));
            }
        }
        if !self.feedback_gain.is_finite() {
            return Err(invalid("feedback gain must be finite"));
        }
        Ok(())
    }

    pub fn reuses_prompts(&self) -> bool {
        self.kind == ScheduleKind::NonDynamic
    }

    /// Scheduled ratio at generation `t`, ignoring feedback.
    pub fn ratio(&self, t: u32) -> Result<f64> {
        let total = self.total_generations;
        if t > total {
            return Err(Error::GenerationOutOfRange { t, total });
        }
        Ok(match self.kind {
            ScheduleKind::LinearControlled if t == total && total > 0 => clip01(self.r_end),
            ScheduleKind::LinearControlled if t > 0 => {
                clip01(self.r_start + (self.r_end - self.r_start) * t as f64 / total as f64)
            }
            _ => clip01(self.r_start),
        })
    }
}

/// Per-group performance of the previous model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackScores {
    pub s_advantaged: f64,
    pub s_disadvantaged: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Mean log-likelihood of the held-out responses.
    LogLikelihood,
    /// Mean pass@1 on the held-out problems.
    Pass1(Pass1Mode),
}

pub fn performance_scores(model: &ModelParams, heldout: &GroupedDataset, kind: ScoreKind) -> Result<FeedbackScores> {
    for g in GroupLabel::BOTH {
        if heldout.count(g) == 0 {
            return Err(Error::MissingGroup(g));
        }
    }
    let per_sample: Vec<f64> = match kind {
        ScoreKind::LogLikelihood => heldout
            .samples
            .iter()
            .map(|s| log_likelihood(model, s))
            .collect::<Result<_>>()?,
        ScoreKind::Pass1(mode) => pass1_scores(model, heldout, mode)?,
    };
    let mut sum = [0.0; 2];
    let mut count = [0.0; 2];
    for (s, x) in heldout.samples.iter().zip(per_sample) {
        sum[s.group.index()] += x;
        count[s.group.index()] += 1.0;
    }
    Ok(FeedbackScores {
        s_advantaged: sum[0] / count[0],
        s_disadvantaged: sum[1] / count[1],
    })
}

/// Ratio for generation `t`. `previous` is only read by the feedback schedule.
pub fn update_ratio(schedule: &RatioSchedule, t: u32, scores: &FeedbackScores, previous: f64) -> Result<f64> {
    let r = schedule.ratio(t)?;
    if schedule.kind != ScheduleKind::Feedback {
        return Ok(r);
    }
    if !(scores.s_advantaged.is_finite() && scores.s_disadvantaged.is_finite()) {
        return Err(invalid("feedback scores must be finite"));
    }
    if t == 0 {
        return Ok(r);
    }
    let next = previous * (1.0 + schedule.feedback_gain * (scores.s_disadvantaged - scores.s_advantaged));
    Ok(if next.is_nan() { 0.0 } else { clip01(next) })
}

/// `round(n·r_d)` disadvantaged and the rest advantaged prompts, without
/// replacement. With `reuse_previous` the previous prompts come back verbatim.
pub fn select_prompts(
    pool: &PromptPool,
    r_d: f64,
    n: usize,
    reuse_previous: bool,
    previous: Option<&[PoolPrompt]>,
    rng: &mut SimRng,
) -> Result<Vec<PoolPrompt>> {
    if reuse_previous {
        return previous.map(<[PoolPrompt]>::to_vec).ok_or(Error::NoPreviousPrompts);
    }
    if !(0.0..=1.0).contains(&r_d) {
        return Err(invalid("ratio out of [0,1]"));
    }
    let n_d = disadvantaged_count(n, r_d);
    let mut out = Vec::with_capacity(n);
    for (group, want) in [(GroupLabel::Advantaged, n - n_d), (GroupLabel::Disadvantaged, n_d)] {
        let list = pool.group(group);
        if want > list.len() {
            return Err(Error::pool(group, want, list.len()));
        }
        let mut picks = index::sample(rng, list.len(), want).into_vec();
        picks.sort_unstable();
        out.extend(picks.into_iter().map(|i| list[i].clone()));
    }
    Ok(out)
}

/// One generation's sampling decision.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingRecord {
    pub t: u32,
    pub s_a: f64,
    pub s_d: f64,
    pub r_d: f64,
    pub n_a: usize,
    pub n_d: usize,
    pub mode: &'static str,
}

/// Inputs of one performative sampling step.
#[derive(Debug, Clone, Copy)]
pub struct SamplingStep<'a> {
    pub schedule: &'a RatioSchedule,
    pub t: u32,
    pub n: usize,
    pub temperature: f64,
    pub score_kind: ScoreKind,
    /// Ratio used at `t − 1`.
    pub previous_ratio: f64,
    /// Prompts of `D_{t−1}`.
    pub previous_prompts: Option<&'a [PoolPrompt]>,
    pub seed: u64,
}

/// Scores, ratio and prompts for generation `t`, before any response exists.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub scores: FeedbackScores,
    pub r_d: f64,
    pub prompts: Vec<PoolPrompt>,
}

impl SamplingPlan {
    pub fn record(&self, step: &SamplingStep<'_>) -> SamplingRecord {
        let n_d = self.prompts.iter().filter(|p| p.group == GroupLabel::Disadvantaged).count();
        SamplingRecord {
            t: step.t,
            s_a: self.scores.s_advantaged,
            s_d: self.scores.s_disadvantaged,
            r_d: self.r_d,
            n_a: self.prompts.len() - n_d,
            n_d,
            mode: step.schedule.kind.as_str(),
        }
    }
}

pub fn plan_sampling(model: &ModelParams, pool: &PromptPool, heldout: &GroupedDataset, step: &SamplingStep<'_>) -> Result<SamplingPlan> {
    let scores = performance_scores(model, heldout, step.score_kind)?;
    let r_d = update_ratio(step.schedule, step.t, &scores, step.previous_ratio)?;
    let mut rng = stream(step.seed, domain::SELECT, step.t as u64, 0);
    let prompts = select_prompts(pool, r_d, step.n, step.schedule.reuses_prompts(), step.previous_prompts, &mut rng)?;
    Ok(SamplingPlan { scores, r_d, prompts })
}

/// One response per prompt; prompt `i` of generation `t` uses its own stream.
pub fn respond(
    model: &ModelParams,
    prompts: &[PoolPrompt],
    length: usize,
    temperature: f64,
    seed: u64,
    seed_domain: u64,
    t: u32,
    origin: Origin,
) -> Result<Vec<Sample>> {
    prompts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = stream(seed, seed_domain, t as u64, i as u64);
            Ok(Sample {
                prompt: p.prompt.clone(),
                response: generate(model, &p.prompt, length, temperature, &mut rng)?,
                group: p.group,
                ground_truth: Some(p.ground_truth.clone()),
                origin,
            })
        })
        .collect()
}

/// Score, update the ratio, select prompts and generate `D_t`.
pub fn performative_sample(
    model: &ModelParams,
    pool: &PromptPool,
    heldout: &GroupedDataset,
    step: &SamplingStep<'_>,
    response_len: usize,
) -> Result<(GroupedDataset, SamplingPlan)> {
    let plan = plan_sampling(model, pool, heldout, step)?;
    let samples = respond(model, &plan.prompts, response_len, step.temperature, step.seed, domain::GENERATE, step.t, Origin::Synthetic)?;
    Ok((GroupedDataset::new(samples, Provenance::Synthetic, step.t), plan))
}
