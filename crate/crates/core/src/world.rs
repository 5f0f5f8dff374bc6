//! Synthetic task environments and grouped datasets.
//!
//! Two world kinds are provided. A *preference* world has two group-specific
//! token distributions over a shared vocabulary, with a tunable amount of
//! shared probability mass, and emits prompt/continuation pairs from a
//! per-group Markov chain. A *skill* world holds a fixed set of modular
//! arithmetic problems; easy problems (advantaged) have a small answer space
//! and hard problems (disadvantaged) a large one.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::rng::{domain, stream, SimRng};

pub type Token = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupLabel {
    Advantaged,
    Disadvantaged,
}

impl GroupLabel {
    pub const BOTH: [GroupLabel; 2] = [GroupLabel::Advantaged, GroupLabel::Disadvantaged];

    pub fn index(self) -> usize {
        match self {
            GroupLabel::Advantaged => 0,
            GroupLabel::Disadvantaged => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GroupLabel::Advantaged => "advantaged",
            GroupLabel::Disadvantaged => "disadvantaged",
        }
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a single sample's response came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    /// Drawn from the world itself (human data).
    Real,
    /// Generated by the model being trained.
    Synthetic,
    /// Generated by a frozen external model.
    External,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Real => "real",
            Origin::Synthetic => "synthetic",
            Origin::External => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sample {
    pub prompt: Vec<Token>,
    pub response: Vec<Token>,
    pub group: GroupLabel,
    /// Reference continuation (preference world) or correct answer (skill world).
    pub ground_truth: Option<Vec<Token>>,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Real,
    Synthetic,
    Mixed,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Synthetic => "synthetic",
            Provenance::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    pub samples: Vec<Sample>,
    pub provenance: Provenance,
    pub generation: u32,
}

impl GroupedDataset {
    pub fn new(samples: Vec<Sample>, provenance: Provenance, generation: u32) -> Self {
        Self {
            samples,
            provenance,
            generation,
        }
    }

    /// Provenance inferred from the per-sample origins.
    pub fn infer_provenance(samples: &[Sample]) -> Provenance {
        let real = samples.iter().filter(|s| s.origin == Origin::Real).count();
        if real == samples.len() {
            Provenance::Real
        } else if real == 0 && samples.iter().all(|s| s.origin == Origin::Synthetic) {
            Provenance::Synthetic
        } else {
            Provenance::Mixed
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, group: GroupLabel) -> usize {
        self.samples.iter().filter(|s| s.group == group).count()
    }

    /// Share of disadvantaged samples; 0 for an empty dataset.
    pub fn disadvantaged_ratio(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.count(GroupLabel::Disadvantaged) as f64 / self.samples.len() as f64
    }

    pub fn group(&self, group: GroupLabel) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.group == group)
    }

    pub fn prompts(&self) -> impl Iterator<Item = &[Token]> {
        self.samples.iter().map(|s| s.prompt.as_slice())
    }

    /// Union of several datasets in order, as used by the accumulation cycle.
    pub fn union<'a>(parts: impl IntoIterator<Item = &'a GroupedDataset>, generation: u32) -> Self {
        let mut samples = Vec::new();
        for part in parts {
            samples.extend(part.samples.iter().cloned());
        }
        let provenance = Self::infer_provenance(&samples);
        Self::new(samples, provenance, generation)
    }
}

/// Round-half-to-even count of disadvantaged items out of `n`.
pub fn disadvantaged_count(n: usize, ratio: f64) -> usize {
    let c = libm::rint(n as f64 * ratio);
    if c <= 0.0 {
        0
    } else {
        (c as usize).min(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorldKind {
    Preference,
    Skill,
}

/// Tunables of a preference world beyond the three required arguments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceParams {
    pub vocab_size: usize,
    pub lexicon_overlap: f64,
    /// Probability of following the group's phrase successor instead of an
    /// independent draw.
    pub stickiness: f64,
    pub zipf_exponent: f64,
    pub prompt_len: usize,
    pub response_len: usize,
}

impl PreferenceParams {
    pub fn new(vocab_size: usize, lexicon_overlap: f64) -> Self {
        Self {
            vocab_size,
            lexicon_overlap,
            stickiness: 0.5,
            zipf_exponent: 1.0,
            prompt_len: 16,
            response_len: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PreferenceBody {
    params: PreferenceParams,
    /// Emission distribution per group, indexed by `GroupLabel::index`.
    emission: [Vec<f64>; 2],
    /// Phrase successor per group; `None` for tokens outside the group's support.
    successor: [Vec<Option<Token>>; 2],
    shared: Vec<Token>,
    lexicons: [Vec<Token>; 2],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub prompt: Vec<Token>,
    pub answer: Token,
    pub group: GroupLabel,
}

#[derive(Debug, Clone, PartialEq)]
struct SkillBody {
    answer_space: [usize; 2],
    problems: [Vec<Problem>; 2],
}

#[derive(Debug, Clone, PartialEq)]
enum Body {
    Preference(PreferenceBody),
    Skill(SkillBody),
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    vocab_size: usize,
    seed: u64,
    body: Body,
}

/// Operand range of skill-world problems.
const OPERAND_DIGITS: usize = 3;
const OPERAND_LIMIT: u32 = 1000;

/// A candidate prompt with its reference continuation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolPrompt {
    /// Unique within one pool.
    pub id: u64,
    pub prompt: Vec<Token>,
    pub group: GroupLabel,
    pub ground_truth: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PromptPool {
    pub advantaged: Vec<PoolPrompt>,
    pub disadvantaged: Vec<PoolPrompt>,
}

impl PromptPool {
    pub fn group(&self, group: GroupLabel) -> &[PoolPrompt] {
        match group {
            GroupLabel::Advantaged => &self.advantaged,
            GroupLabel::Disadvantaged => &self.disadvantaged,
        }
    }

    pub fn len(&self) -> usize {
        self.advantaged.len() + self.disadvantaged.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop every prompt that also appears in `heldout`.
    pub fn exclude(&mut self, heldout: &GroupedDataset) {
        let seen: BTreeSet<&[Token]> = heldout.prompts().collect();
        self.advantaged.retain(|p| !seen.contains(p.prompt.as_slice()));
        self.disadvantaged.retain(|p| !seen.contains(p.prompt.as_slice()));
    }
}

fn zipf_weights(n: usize, exponent: f64, rng: &mut SimRng) -> Vec<f64> {
    let mut w: Vec<f64> = (1..=n).map(|r| 1.0 / libm::pow(r as f64, exponent)).collect();
    w.shuffle(rng);
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

pub(crate) fn sample_categorical(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` slightly below 1: take the last token with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Build a preference world with default stickiness, Zipf exponent and
/// sequence lengths.
pub fn build_preference_world(vocab_size: usize, lexicon_overlap: f64, seed: u64) -> Result<World> {
    World::preference(PreferenceParams::new(vocab_size, lexicon_overlap), seed)
}

pub fn build_skill_world(
    n_easy: usize,
    n_hard: usize,
    easy_answer_space: usize,
    hard_answer_space: usize,
    seed: u64,
) -> Result<World> {
    World::skill(n_easy, n_hard, easy_answer_space, hard_answer_space, seed)
}

impl World {
    pub fn preference(params: PreferenceParams, seed: u64) -> Result<World> {
        let v = params.vocab_size;
        let o = params.lexicon_overlap;
        if v < 4 {
            return Err(invalid("vocab_size must be at least 4"));
        }
        if !(0.0..1.0).contains(&o) {
            return Err(invalid("lexicon_overlap must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&params.stickiness) {
            return Err(invalid("stickiness must lie in [0, 1]"));
        }
        if !(params.zipf_exponent >= 0.0 && params.zipf_exponent.is_finite()) {
            return Err(invalid("zipf_exponent must be finite and non-negative"));
        }
        if params.prompt_len == 0 || params.response_len == 0 {
            return Err(invalid("prompt and response lengths must be positive"));
        }

        let mut shared_len = libm::rint(o * v as f64) as usize;
        if o > 0.0 {
            shared_len = shared_len.clamp(1, v - 2);
        }
        let own = v - shared_len;
        let adv_len = own.div_ceil(2);
        let adv: Vec<Token> = (0..adv_len as Token).collect();
        let dis: Vec<Token> = (adv_len as Token..own as Token).collect();
        let shared: Vec<Token> = (own as Token..v as Token).collect();

        let mut rng = stream(seed, domain::WORLD, 0, 0);
        let shared_w = zipf_weights(shared.len(), params.zipf_exponent, &mut rng);
        let lexicons = [adv, dis];
        let mut emission = [alloc::vec![0.0; v], alloc::vec![0.0; v]];
        let mut successor = [alloc::vec![None; v], alloc::vec![None; v]];
        for g in 0..2 {
            let own_w = zipf_weights(lexicons[g].len(), params.zipf_exponent, &mut rng);
            for (t, w) in lexicons[g].iter().zip(&own_w) {
                emission[g][*t as usize] = (1.0 - o) * w;
            }
            for (t, w) in shared.iter().zip(&shared_w) {
                emission[g][*t as usize] = o * w;
            }
            // One phrase cycle through the group's support.
            let mut support: Vec<Token> = lexicons[g].iter().chain(&shared).copied().collect();
            support.shuffle(&mut rng);
            for i in 0..support.len() {
                let next = support[(i + 1) % support.len()];
                successor[g][support[i] as usize] = Some(next);
            }
        }

        Ok(World {
            vocab_size: v,
            seed,
            body: Body::Preference(PreferenceBody {
                params,
                emission,
                successor,
                shared,
                lexicons,
            }),
        })
    }

    pub fn skill(
        n_easy: usize,
        n_hard: usize,
        easy_answer_space: usize,
        hard_answer_space: usize,
        seed: u64,
    ) -> Result<World> {
        if easy_answer_space < 2 || hard_answer_space < 2 {
            return Err(invalid("answer spaces must be at least 2"));
        }
        if hard_answer_space <= easy_answer_space {
            return Err(invalid("hard_answer_space must exceed easy_answer_space"));
        }
        if n_easy == 0 || n_hard == 0 {
            return Err(invalid("each group needs at least one problem"));
        }
        let limit = (OPERAND_LIMIT as usize) * (OPERAND_LIMIT as usize);
        if n_easy > limit || n_hard > limit {
            return Err(invalid("too many problems for the operand range"));
        }
        let layout = SkillLayout::new(hard_answer_space);
        let mut rng = stream(seed, domain::WORLD, 1, 0);
        let spaces = [easy_answer_space, hard_answer_space];
        let counts = [n_easy, n_hard];
        let mut problems: [Vec<Problem>; 2] = [Vec::new(), Vec::new()];
        for g in GroupLabel::BOTH {
            let mut seen = BTreeSet::new();
            let gi = g.index();
            while problems[gi].len() < counts[gi] {
                let a = rng.gen_range(0..OPERAND_LIMIT);
                let b = rng.gen_range(0..OPERAND_LIMIT);
                if !seen.insert((a, b)) {
                    continue;
                }
                problems[gi].push(Problem {
                    prompt: layout.encode(g, a, b),
                    answer: (a + b) % spaces[gi] as u32,
                    group: g,
                });
            }
        }
        Ok(World {
            vocab_size: layout.vocab_size(),
            seed,
            body: Body::Skill(SkillBody {
                answer_space: spaces,
                problems,
            }),
        })
    }

    pub fn kind(&self) -> WorldKind {
        match self.body {
            Body::Preference(_) => WorldKind::Preference,
            Body::Skill(_) => WorldKind::Skill,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn prompt_len(&self) -> usize {
        match &self.body {
            Body::Preference(p) => p.params.prompt_len,
            Body::Skill(_) => 2 + 2 * OPERAND_DIGITS,
        }
    }

    pub fn response_len(&self) -> usize {
        match &self.body {
            Body::Preference(p) => p.params.response_len,
            Body::Skill(_) => 1,
        }
    }

    /// Emission distribution of a preference-world group; `None` for skill worlds.
    pub fn group_distribution(&self, group: GroupLabel) -> Option<&[f64]> {
        match &self.body {
            Body::Preference(p) => Some(&p.emission[group.index()]),
            Body::Skill(_) => None,
        }
    }

    /// Tokens exclusive to a group (preference worlds).
    pub fn lexicon(&self, group: GroupLabel) -> &[Token] {
        match &self.body {
            Body::Preference(p) => &p.lexicons[group.index()],
            Body::Skill(_) => &[],
        }
    }

    pub fn shared_tokens(&self) -> &[Token] {
        match &self.body {
            Body::Preference(p) => &p.shared,
            Body::Skill(_) => &[],
        }
    }

    /// Skill-world answer space per group.
    pub fn answer_space(&self, group: GroupLabel) -> Option<usize> {
        match &self.body {
            Body::Skill(s) => Some(s.answer_space[group.index()]),
            Body::Preference(_) => None,
        }
    }

    pub fn problems(&self, group: GroupLabel) -> &[Problem] {
        match &self.body {
            Body::Skill(s) => &s.problems[group.index()],
            Body::Preference(_) => &[],
        }
    }

    /// Total-variation distance between the two group distributions
    /// (preference worlds; 0 for skill worlds).
    pub fn total_variation(&self) -> f64 {
        match &self.body {
            Body::Preference(p) => {
                p.emission[0]
                    .iter()
                    .zip(&p.emission[1])
                    .map(|(a, d)| libm::fabs(a - d))
                    .sum::<f64>()
                    / 2.0
            }
            Body::Skill(_) => 0.0,
        }
    }

    /// Draw one real `(prompt, continuation)` pair for `group`.
    pub fn draw_pair(&self, group: GroupLabel, rng: &mut SimRng) -> (Vec<Token>, Vec<Token>) {
        match &self.body {
            Body::Preference(p) => {
                let g = group.index();
                let total = p.params.prompt_len + p.params.response_len;
                let mut seq = Vec::with_capacity(total);
                let mut cur = sample_categorical(&p.emission[g], rng) as Token;
                seq.push(cur);
                while seq.len() < total {
                    cur = match p.successor[g][cur as usize] {
                        Some(next) if rng.gen::<f64>() < p.params.stickiness => next,
                        _ => sample_categorical(&p.emission[g], rng) as Token,
                    };
                    seq.push(cur);
                }
                let response = seq.split_off(p.params.prompt_len);
                (seq, response)
            }
            Body::Skill(s) => {
                let problems = &s.problems[group.index()];
                let pr = &problems[rng.gen_range(0..problems.len())];
                (pr.prompt.clone(), alloc::vec![pr.answer])
            }
        }
    }

    fn real_sample(&self, group: GroupLabel, rng: &mut SimRng) -> Sample {
        let (prompt, response) = self.draw_pair(group, rng);
        Sample {
            prompt,
            ground_truth: Some(response.clone()),
            response,
            group,
            origin: Origin::Real,
        }
    }

    /// Draw `n` real samples of which `round(n * r_d)` are disadvantaged.
    pub fn draw_dataset(&self, n: usize, r_d: f64, seed: u64, seed_domain: u64, generation: u32) -> Result<GroupedDataset> {
        if !(0.0..=1.0).contains(&r_d) {
            return Err(invalid("r_d must lie in [0, 1]"));
        }
        if n == 0 {
            return Err(invalid("n must be at least 1"));
        }
        let n_d = disadvantaged_count(n, r_d);
        let mut rng = stream(seed, seed_domain, generation as u64, 0);
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n - n_d {
            samples.push(self.real_sample(GroupLabel::Advantaged, &mut rng));
        }
        for _ in 0..n_d {
            samples.push(self.real_sample(GroupLabel::Disadvantaged, &mut rng));
        }
        samples.shuffle(&mut rng);
        Ok(GroupedDataset::new(samples, Provenance::Real, generation))
    }
}

/// D_0: real data with `round(n * r_d)` disadvantaged samples.
pub fn draw_initial_dataset(world: &World, n: usize, r_d: f64, seed: u64) -> Result<GroupedDataset> {
    world.draw_dataset(n, r_d, seed, domain::INITIAL, 0)
}

/// Balanced held-out set with `n_per_group` samples from each group.
///
/// Skill-world problems are drawn without replacement while the group's
/// problem set lasts.
pub fn draw_heldout(world: &World, n_per_group: usize, seed: u64) -> Result<GroupedDataset> {
    if n_per_group == 0 {
        return Err(invalid("n_per_group must be at least 1"));
    }
    let mut rng = stream(seed, domain::HELDOUT, 0, 0);
    let mut samples = Vec::with_capacity(2 * n_per_group);
    for g in GroupLabel::BOTH {
        match &world.body {
            Body::Preference(_) => {
                for _ in 0..n_per_group {
                    samples.push(world.real_sample(g, &mut rng));
                }
            }
            Body::Skill(s) => {
                let problems = &s.problems[g.index()];
                let mut order: Vec<usize> = (0..problems.len()).collect();
                let mut taken = 0;
                while taken < n_per_group {
                    order.shuffle(&mut rng);
                    for &i in order.iter().take(n_per_group - taken) {
                        let p = &problems[i];
                        samples.push(Sample {
                            prompt: p.prompt.clone(),
                            response: alloc::vec![p.answer],
                            group: g,
                            ground_truth: Some(alloc::vec![p.answer]),
                            origin: Origin::Real,
                        });
                        taken += 1;
                    }
                }
            }
        }
    }
    Ok(GroupedDataset::new(samples, Provenance::Real, 0))
}

/// Fresh candidate prompts per group. Ids are `0..n_a` for the advantaged
/// list and `n_a..n_a + n_d` for the disadvantaged one.
pub fn draw_candidate_prompts(world: &World, n_a: usize, n_d: usize, seed: u64) -> PromptPool {
    draw_candidate_prompts_for(world, n_a, n_d, seed, 0)
}

pub(crate) fn draw_candidate_prompts_for(world: &World, n_a: usize, n_d: usize, seed: u64, generation: u32) -> PromptPool {
    let mut rng = stream(seed, domain::CANDIDATES, generation as u64, 0);
    let mut pool = PromptPool::default();
    let mut next_id = 0u64;
    for (group, n) in [(GroupLabel::Advantaged, n_a), (GroupLabel::Disadvantaged, n_d)] {
        let list = match group {
            GroupLabel::Advantaged => &mut pool.advantaged,
            GroupLabel::Disadvantaged => &mut pool.disadvantaged,
        };
        list.reserve(n);
        for _ in 0..n {
            let (prompt, ground_truth) = world.draw_pair(group, &mut rng);
            list.push(PoolPrompt {
                id: next_id,
                prompt,
                group,
                ground_truth,
            });
            next_id += 1;
        }
    }
    pool
}

/// Token layout of skill-world prompts: answers occupy `0..hard_space`,
/// followed by ten digit tokens, a plus sign and one marker per group.
#[derive(Debug, Clone, Copy)]
struct SkillLayout {
    digits: Token,
}

impl SkillLayout {
    fn new(hard_space: usize) -> Self {
        Self {
            digits: hard_space as Token,
        }
    }

    fn plus(&self) -> Token {
        self.digits + 10
    }

    fn marker(&self, group: GroupLabel) -> Token {
        self.digits + 11 + group.index() as Token
    }

    fn vocab_size(&self) -> usize {
        self.digits as usize + 13
    }

    fn push_operand(&self, out: &mut Vec<Token>, mut x: u32) {
        let start = out.len();
        for _ in 0..OPERAND_DIGITS {
            out.push(self.digits + x % 10);
            x /= 10;
        }
        out[start..].reverse();
    }

    fn encode(&self, group: GroupLabel, a: u32, b: u32) -> Vec<Token> {
        let mut out = Vec::with_capacity(2 + 2 * OPERAND_DIGITS);
        out.push(self.marker(group));
        self.push_operand(&mut out, a);
        out.push(self.plus());
        self.push_operand(&mut out, b);
        out
    }
}

impl Error {
    pub(crate) fn pool(group: GroupLabel, requested: usize, available: usize) -> Error {
        Error::PoolExhausted {
            group,
            requested,
            available,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_overlap_gives_disjoint_support() {
        let w = build_preference_world(20, 0.0, 7).unwrap();
        let a = w.group_distribution(GroupLabel::Advantaged).unwrap();
        let d = w.group_distribution(GroupLabel::Disadvantaged).unwrap();
        assert!(a.iter().zip(d).all(|(x, y)| *x == 0.0 || *y == 0.0));
        assert!((w.total_variation() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn preference_world_is_deterministic() {
        let a = build_preference_world(20, 0.3, 7).unwrap();
        let b = build_preference_world(20, 0.3, 7).unwrap();
        assert_eq!(a, b);
        let c = build_preference_world(20, 0.3, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn half_overlap_total_variation_by_brute_force() {
        let w = build_preference_world(20, 0.5, 7).unwrap();
        let a = w.group_distribution(GroupLabel::Advantaged).unwrap();
        let d = w.group_distribution(GroupLabel::Disadvantaged).unwrap();
        let mut tv = 0.0;
        for t in 0..20 {
            tv += (a[t] - d[t]).abs() / 2.0;
        }
        assert!((tv - 0.5).abs() <= 0.05, "tv = {tv}");
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn preference_world_rejects_bad_arguments() {
        assert!(matches!(build_preference_world(3, 0.0, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_preference_world(10, 1.0, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_preference_world(10, -0.1, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn skill_world_construction() {
        let w = build_skill_world(100, 100, 5, 50, 3).unwrap();
        let easy = w.problems(GroupLabel::Advantaged);
        let hard = w.problems(GroupLabel::Disadvantaged);
        assert_eq!(easy.len() + hard.len(), 200);
        assert!(easy.iter().all(|p| (p.answer as usize) < 5));
        assert!(hard.iter().all(|p| (p.answer as usize) < 50));
        let prompts: BTreeSet<_> = easy.iter().chain(hard).map(|p| p.prompt.clone()).collect();
        assert_eq!(prompts.len(), 200);
        assert!(matches!(build_skill_world(10, 10, 5, 5, 3), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_skill_world(10, 10, 1, 5, 3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn skill_answers_match_the_encoded_sum() {
        let w = build_skill_world(20, 20, 5, 50, 9).unwrap();
        for p in w.problems(GroupLabel::Disadvantaged) {
            let digits = 50;
            let operand = |s: &[Token]| s.iter().fold(0u32, |acc, t| acc * 10 + (t - digits));
            let a = operand(&p.prompt[1..4]);
            let b = operand(&p.prompt[5..8]);
            assert_eq!(p.answer, (a + b) % 50);
        }
    }

    #[test]
    fn initial_dataset_group_counts() {
        let w = build_preference_world(16, 0.2, 1).unwrap();
        let d = draw_initial_dataset(&w, 5000, 0.4, 11).unwrap();
        assert_eq!(d.count(GroupLabel::Disadvantaged), 2000);
        assert_eq!(d.count(GroupLabel::Advantaged), 3000);
        assert_eq!(d.provenance, Provenance::Real);
        assert_eq!(d.generation, 0);
        let d = draw_initial_dataset(&w, 2000, 0.2, 11).unwrap();
        assert_eq!(d.count(GroupLabel::Disadvantaged), 400);
        let d = draw_initial_dataset(&w, 10, 0.0, 11).unwrap();
        assert_eq!(d.count(GroupLabel::Disadvantaged), 0);
        assert!(d.samples.iter().all(|s| s.prompt.len() == 16 && s.response.len() == 32));
    }

    #[test]
    fn rounding_is_half_to_even() {
        assert_eq!(disadvantaged_count(10, 0.25), 2);
        assert_eq!(disadvantaged_count(10, 0.35), 4);
        assert_eq!(disadvantaged_count(10, 0.3), 3);
        assert_eq!(disadvantaged_count(5000, 0.4 + (0.22 - 0.4) / 3.0), 1700);
    }

    #[test]
    fn heldout_is_balanced() {
        let w = build_preference_world(16, 0.2, 1).unwrap();
        let h = draw_heldout(&w, 500, 3).unwrap();
        assert_eq!(h.len(), 1000);
        assert_eq!(h.disadvantaged_ratio(), 0.5);
        let h1 = draw_heldout(&w, 1, 3).unwrap();
        assert_eq!(h1.len(), 2);
        assert_eq!(draw_heldout(&w, 500, 3).unwrap(), h);
        let s = build_skill_world(10, 30, 5, 50, 1).unwrap();
        let h = draw_heldout(&s, 25, 3).unwrap();
        assert_eq!(h.disadvantaged_ratio(), 0.5);
        assert_eq!(h.len(), 50);
    }

    #[test]
    fn candidate_pools() {
        let w = build_preference_world(16, 0.2, 1).unwrap();
        let p = draw_candidate_prompts(&w, 0, 5, 1);
        assert!(p.advantaged.is_empty());
        assert_eq!(p.disadvantaged.len(), 5);
        let q = draw_candidate_prompts(&w, 50, 50, 2);
        let r = draw_candidate_prompts(&w, 50, 50, 3);
        let collisions = q
            .advantaged
            .iter()
            .zip(&r.advantaged)
            .filter(|(a, b)| a.prompt == b.prompt)
            .count();
        assert_eq!(collisions, 0);
        let ids: BTreeSet<u64> = q.advantaged.iter().chain(&q.disadvantaged).map(|p| p.id).collect();
        assert_eq!(ids.len(), 100);
    }

    #[test]
    fn pool_exclusion_removes_heldout_prompts() {
        let w = build_skill_world(5, 5, 2, 3, 1).unwrap();
        let h = draw_heldout(&w, 5, 1).unwrap();
        let mut p = draw_candidate_prompts(&w, 20, 20, 4);
        p.exclude(&h);
        assert!(p.is_empty());
    }
}
