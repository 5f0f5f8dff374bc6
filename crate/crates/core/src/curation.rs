//! Reward composition and data-curation strategies.
//!
//! The reward of a candidate response is `α₁·r₁ + α₂·r₂ + Σr₃`, where `r₁` is
//! the quality bin scaled to `[0, 1]`, `r₂` is `±1` depending on whether the
//! response is close enough to the reference continuation, and the `r₃` terms
//! come from optional unweighted extensions.

use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::evaluator::{rouge_l, GroupClassifier, QualityScorer};
use crate::generator::{generate, ModelParams};
use crate::rng::{domain, stream, SimRng};
use crate::world::{GroupLabel, Origin, PoolPrompt, Sample, Token};

/// Unweighted extra reward term.
pub trait RewardExtension {
    fn score(&self, prompt: &[Token], response: &[Token]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSpec {
    pub alpha1: f64,
    pub alpha2: f64,
    /// Minimum ROUGE-L against the reference for `r₂ = +1`.
    pub similarity_threshold: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 3.0,
            similarity_threshold: 0.5,
        }
    }
}

/// The three reward terms of one candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTerms {
    /// Quality in `[0, 1]`.
    pub r1: f64,
    /// Consistency with the reference, `±1`.
    pub r2: f64,
    /// Sum of extension terms.
    pub r3: f64,
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1.is_finite() && self.alpha2.is_finite()) {
            return Err(invalid("reward weights must be finite"));
        }
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return Err(invalid("similarity threshold must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn combine(&self, terms: &RewardTerms) -> f64 {
        self.alpha1 * terms.r1 + self.alpha2 * terms.r2 + terms.r3
    }

    pub fn consistency(&self, response: &[Token], reference: &[Token]) -> f64 {
        if rouge_l(response, reference) >= self.similarity_threshold {
            1.0
        } else {
            -1.0
        }
    }

    pub fn terms(
        &self,
        scorer: &QualityScorer,
        prompt: &[Token],
        response: &[Token],
        reference: Option<&[Token]>,
        extensions: &[&dyn RewardExtension],
    ) -> Result<RewardTerms> {
        let reference = reference.ok_or(Error::MissingGroundTruth)?;
        Ok(RewardTerms {
            r1: scorer.score(prompt, response)? as f64 / 3.0,
            r2: self.consistency(response, reference),
            r3: extensions.iter().map(|e| e.score(prompt, response)).sum(),
        })
    }
}

pub fn reward(
    spec: &RewardSpec,
    scorer: &QualityScorer,
    prompt: &[Token],
    response: &[Token],
    reference: Option<&[Token]>,
    extensions: &[&dyn RewardExtension],
) -> Result<f64> {
    Ok(spec.combine(&spec.terms(scorer, prompt, response, reference, extensions)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub response: Vec<Token>,
    pub reward: f64,
    /// Sum of the ±1 acceptance criteria used by VRS.
    pub criteria: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub prompt: PoolPrompt,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn rewards(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.reward).collect()
    }

    fn sample(&self, j: usize) -> Sample {
        Sample {
            prompt: self.prompt.prompt.clone(),
            response: self.candidates[j].response.clone(),
            group: self.prompt.group,
            ground_truth: Some(self.prompt.ground_truth.clone()),
            origin: Origin::Synthetic,
        }
    }
}

/// Uniform among candidates whose criteria sum is positive, or among all
/// candidates when none qualifies.
pub fn vrs(cands: &CandidateSet, rng: &mut SimRng) -> usize {
    vrs_index(&cands.candidates.iter().map(|c| c.criteria).collect::<Vec<_>>(), rng)
}

pub fn vrs_index(criteria: &[f64], rng: &mut SimRng) -> usize {
    let ok: Vec<usize> = (0..criteria.len()).filter(|&j| criteria[j] > 0.0).collect();
    if ok.is_empty() {
        rng.gen_range(0..criteria.len())
    } else {
        ok[rng.gen_range(0..ok.len())]
    }
}

/// Highest reward; the lowest index wins ties.
pub fn tpp(cands: &CandidateSet) -> usize {
    argmax(&cands.rewards())
}

pub fn argmax(rewards: &[f64]) -> usize {
    let mut best = 0;
    for (j, &r) in rewards.iter().enumerate() {
        if r > rewards[best] {
            best = j;
        }
    }
    best
}

/// Global top `n` `(set, candidate)` pairs by reward, ties broken by set
/// index then candidate index.
pub fn top(rewards: &[Vec<f64>], n: usize) -> Result<Vec<(usize, usize)>> {
    let mut all: Vec<(usize, usize)> = rewards
        .iter()
        .enumerate()
        .flat_map(|(i, r)| (0..r.len()).map(move |j| (i, j)))
        .collect();
    if n > all.len() {
        return Err(Error::InsufficientCandidates {
            requested: n,
            available: all.len(),
        });
    }
    all.sort_by(|a, b| rewards[b.0][b.1].total_cmp(&rewards[a.0][a.1]).then(a.cmp(b)));
    all.truncate(n);
    Ok(all)
}

/// Sizes used by reward-based reweighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReweightPlan {
    pub l_a: usize,
    pub l_d: usize,
    pub k_a: usize,
    pub k_d: usize,
    /// Full best-remaining rounds over the disadvantaged prompts.
    pub rounds: usize,
    /// Slots filled uniformly after the full rounds.
    pub remainder: usize,
}

pub fn reweight_plan(n_adv: usize, n_dis: usize, size_target: usize, k: usize) -> Result<ReweightPlan> {
    if n_adv == 0 {
        return Err(Error::EmptyGroup(GroupLabel::Advantaged));
    }
    if n_dis == 0 {
        return Err(Error::EmptyGroup(GroupLabel::Disadvantaged));
    }
    if size_target == 0 {
        return Err(Error::ZeroSizeTarget);
    }
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let l_a = (n_adv / 4 + n_dis).min(size_target).min(n_adv);
    let l_d = size_target - l_a;
    Ok(ReweightPlan {
        l_a,
        l_d,
        k_a: k,
        k_d: l_d / n_dis + 1 + k,
        rounds: l_d / n_dis,
        remainder: l_d % n_dis,
    })
}

/// One chosen candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pick {
    pub group: GroupLabel,
    /// Index into the group's reward table.
    pub prompt: usize,
    pub candidate: usize,
    pub round: usize,
}

/// Stable descending order of one prompt's candidates.
fn ranked(rewards: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rewards.len()).collect();
    order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
    order
}

/// Reweighting selection on fixed reward tables: best-of-`k_a` for a uniform
/// subset of `l_a` advantaged prompts, then best-remaining rounds over every
/// disadvantaged prompt and a uniform fill from the leftovers.
pub fn reweight_select(plan: &ReweightPlan, adv: &[Vec<f64>], dis: &[Vec<f64>], rng: &mut SimRng) -> Result<Vec<Pick>> {
    if adv.iter().any(|r| r.len() != plan.k_a) || dis.iter().any(|r| r.len() != plan.k_d) {
        return Err(invalid("reward tables do not match the plan"));
    }
    let mut picks = Vec::with_capacity(plan.l_a + plan.l_d);
    let mut chosen = index::sample(rng, adv.len(), plan.l_a).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        picks.push(Pick {
            group: GroupLabel::Advantaged,
            prompt: i,
            candidate: argmax(&adv[i]),
            round: 0,
        });
    }
    let orders: Vec<Vec<usize>> = dis.iter().map(|r| ranked(r)).collect();
    for round in 0..plan.rounds {
        for (i, order) in orders.iter().enumerate() {
            picks.push(Pick {
                group: GroupLabel::Disadvantaged,
                prompt: i,
                candidate: order[round],
                round,
            });
        }
    }
    if plan.remainder > 0 {
        let leftovers: Vec<(usize, usize)> = orders
            .iter()
            .enumerate()
            .flat_map(|(i, o)| o[plan.rounds..].iter().map(move |&j| (i, j)))
            .collect();
        let mut fill = index::sample(rng, leftovers.len(), plan.remainder).into_vec();
        fill.sort_unstable();
        for f in fill {
            let (i, j) = leftovers[f];
            picks.push(Pick {
                group: GroupLabel::Disadvantaged,
                prompt: i,
                candidate: j,
                round: plan.rounds,
            });
        }
    }
    Ok(picks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurationStrategy {
    None,
    Vrs,
    Tpp,
    Top,
    Reweight,
}

impl CurationStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            CurationStrategy::None => "none",
            CurationStrategy::Vrs => "vrs",
            CurationStrategy::Tpp => "tpp",
            CurationStrategy::Top => "top",
            CurationStrategy::Reweight => "reweight",
        }
    }
}

/// Audit entry for one selected sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CurationRecord {
    pub prompt_id: u64,
    pub group: GroupLabel,
    pub reward: f64,
    pub strategy: CurationStrategy,
    pub round: usize,
}

/// Everything needed to generate and score candidates in one generation.
#[derive(Clone, Copy)]
pub struct CurationContext<'a> {
    pub model: &'a ModelParams,
    pub spec: &'a RewardSpec,
    pub scorer: &'a QualityScorer,
    pub classifier: &'a GroupClassifier,
    pub extensions: &'a [&'a dyn RewardExtension],
    pub response_len: usize,
    pub temperature: f64,
    pub seed: u64,
    pub generation: u32,
}

impl CurationContext<'_> {
    /// Reward and criteria sum of one response.
    pub fn judge(&self, prompt: &PoolPrompt, response: Vec<Token>) -> Result<Candidate> {
        let terms = self
            .spec
            .terms(self.scorer, &prompt.prompt, &response, Some(&prompt.ground_truth), self.extensions)?;
        let clean = if terms.r1 >= 2.0 / 3.0 { 1.0 } else { -1.0 };
        let consistent = if self.classifier.classify(&response)?.0 == prompt.group { 1.0 } else { -1.0 };
        Ok(Candidate {
            reward: self.spec.combine(&terms),
            criteria: clean + terms.r2 + consistent,
            response,
        })
    }

    /// `k` scored candidates for prompt `i`; each candidate has its own stream.
    pub fn candidates(&self, i: usize, prompt: &PoolPrompt, k: usize) -> Result<CandidateSet> {
        let candidates = (0..k)
            .map(|j| {
                let a = (self.generation as u64) << 32 | j as u64;
                let mut rng = stream(self.seed, domain::CURATION, a, i as u64);
                let response = generate(self.model, &prompt.prompt, self.response_len, self.temperature, &mut rng)?;
                self.judge(prompt, response)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CandidateSet {
            prompt: prompt.clone(),
            candidates,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curated {
    pub samples: Vec<Sample>,
    pub records: Vec<CurationRecord>,
}

impl Curated {
    fn push(&mut self, set: &CandidateSet, j: usize, strategy: CurationStrategy, round: usize) {
        self.samples.push(set.sample(j));
        self.records.push(CurationRecord {
            prompt_id: set.prompt.id,
            group: set.prompt.group,
            reward: set.candidates[j].reward,
            strategy,
            round,
        });
    }
}

/// Build the curated dataset for `prompts` with the given strategy.
pub fn curate(
    strategy: CurationStrategy,
    ctx: &CurationContext<'_>,
    prompts: &[PoolPrompt],
    size_target: usize,
    k: usize,
) -> Result<Curated> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let mut rng = stream(ctx.seed, domain::CURATION, ctx.generation as u64, u64::MAX);
    let mut out = Curated {
        samples: Vec::with_capacity(size_target),
        records: Vec::with_capacity(size_target),
    };
    match strategy {
        CurationStrategy::None => return Err(invalid("no curation strategy selected")),
        CurationStrategy::Vrs | CurationStrategy::Tpp => {
            for (i, p) in prompts.iter().enumerate() {
                let set = ctx.candidates(i, p, k)?;
                let j = if strategy == CurationStrategy::Vrs { vrs(&set, &mut rng) } else { tpp(&set) };
                out.push(&set, j, strategy, 0);
            }
        }
        CurationStrategy::Top => {
            let sets = prompts
                .iter()
                .enumerate()
                .map(|(i, p)| ctx.candidates(i, p, k))
                .collect::<Result<Vec<_>>>()?;
            let rewards: Vec<Vec<f64>> = sets.iter().map(CandidateSet::rewards).collect();
            for (i, j) in top(&rewards, size_target)? {
                out.push(&sets[i], j, strategy, 0);
            }
        }
        CurationStrategy::Reweight => {
            let (adv, dis): (Vec<(usize, &PoolPrompt)>, Vec<(usize, &PoolPrompt)>) =
                prompts.iter().enumerate().partition(|(_, p)| p.group == GroupLabel::Advantaged);
            let plan = reweight_plan(adv.len(), dis.len(), size_target, k)?;
            let adv_sets = adv
                .iter()
                .map(|&(i, p)| ctx.candidates(i, p, plan.k_a))
                .collect::<Result<Vec<_>>>()?;
            let dis_sets = dis
                .iter()
                .map(|&(i, p)| ctx.candidates(i, p, plan.k_d))
                .collect::<Result<Vec<_>>>()?;
            let adv_r: Vec<Vec<f64>> = adv_sets.iter().map(CandidateSet::rewards).collect();
            let dis_r: Vec<Vec<f64>> = dis_sets.iter().map(CandidateSet::rewards).collect();
            for pick in reweight_select(&plan, &adv_r, &dis_r, &mut rng)? {
                let set = match pick.group {
                    GroupLabel::Advantaged => &adv_sets[pick.prompt],
                    GroupLabel::Disadvantaged => &dis_sets[pick.prompt],
                };
                out.push(set, pick.candidate, strategy, pick.round);
            }
        }
    }
    Ok(out)
}

/// Reward-based reweighting on `prompts` (the disadvantaged and advantaged
/// prompts selected for this generation).
pub fn reweight_sample(ctx: &CurationContext<'_>, prompts: &[PoolPrompt], size_target: usize, k: usize) -> Result<Curated> {
    curate(CurationStrategy::Reweight, ctx, prompts, size_target, k)
}
