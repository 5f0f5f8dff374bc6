//! Bias, quality, accuracy and similarity metrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::generator::{
    fit_counts, generate, greedy, sequence_log_prob, Context, CountSpec, ModelParams, Smoothing,
};
use crate::rng::{domain, stream};
use crate::world::{GroupLabel, GroupedDataset, Provenance, Token, World, WorldKind};

/// Likelihood-ratio test between two per-group unigram references.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupClassifier {
    log_a: Vec<f64>,
    log_d: Vec<f64>,
    threshold: f64,
}

impl GroupClassifier {
    /// Build from per-group token distributions.
    pub fn from_distributions(p_a: &[f64], p_d: &[f64], threshold: f64) -> Result<Self> {
        if p_a.len() != p_d.len() || p_a.is_empty() {
            return Err(invalid("reference distributions must share a nonempty vocabulary"));
        }
        Ok(Self {
            log_a: p_a.iter().map(|p| libm::log(*p)).collect(),
            log_d: p_d.iter().map(|p| libm::log(*p)).collect(),
            threshold,
        })
    }

    /// Build from two unigram count models.
    pub fn from_models(a: &ModelParams, d: &ModelParams, threshold: f64) -> Result<Self> {
        let row = |m: &ModelParams| -> Result<Vec<f64>> {
            match m.as_count() {
                Some(c) if c.spec().context == Context::Unigram => Ok(c.row(&[], 0).to_vec()),
                _ => Err(Error::VariantMismatch("unigram count")),
            }
        };
        Self::from_distributions(&row(a)?, &row(d)?, threshold)
    }

    /// Fit both references on `n_per_group` fresh world samples per group.
    pub fn fit(world: &World, n_per_group: usize, lambda: f64, seed: u64) -> Result<Self> {
        let data = reference_data(world, n_per_group, seed, domain::REFERENCE)?;
        let spec = CountSpec::new(Context::Unigram, Smoothing::Additive, lambda, world.vocab_size());
        let fit_group = |g: GroupLabel| {
            let part = GroupedDataset::new(data.group(g).cloned().collect(), Provenance::Real, 0);
            fit_counts(spec, &part)
        };
        Self::from_models(&fit_group(GroupLabel::Advantaged)?, &fit_group(GroupLabel::Disadvantaged)?, 0.0)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// `log p_a(response) − log p_d(response)`.
    pub fn margin(&self, response: &[Token]) -> Result<f64> {
        if response.is_empty() {
            return Err(invalid("response must be nonempty"));
        }
        let v = self.log_a.len();
        let mut m = 0.0;
        for &t in response {
            if t as usize >= v {
                return Err(Error::UnknownToken { token: t, vocab_size: v });
            }
            m += self.log_a[t as usize] - self.log_d[t as usize];
        }
        Ok(m)
    }

    /// Advantaged iff the margin strictly exceeds the threshold.
    pub fn classify(&self, response: &[Token]) -> Result<(GroupLabel, f64)> {
        let m = self.margin(response)?;
        let label = if m > self.threshold {
            GroupLabel::Advantaged
        } else {
            GroupLabel::Disadvantaged
        };
        Ok((label, m))
    }
}

pub fn classify_group(clf: &GroupClassifier, response: &[Token]) -> Result<(GroupLabel, f64)> {
    clf.classify(response)
}

fn reference_data(world: &World, n_per_group: usize, seed: u64, seed_domain: u64) -> Result<GroupedDataset> {
    if n_per_group == 0 {
        return Err(invalid("reference size must be positive"));
    }
    world.draw_dataset(2 * n_per_group, 0.5, seed, seed_domain, 0)
}

/// How evaluation continuations are decoded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    Greedy,
    /// Prompt `i` of the held-out set always uses the same stream.
    Sampled { seed: u64, temperature: f64 },
}

/// One continuation per held-out sample, as long as its reference response.
pub fn continuations(model: &ModelParams, heldout: &GroupedDataset, decoding: Decoding) -> Result<Vec<Vec<Token>>> {
    heldout
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let len = s.ground_truth.as_ref().map_or(s.response.len(), |g| g.len());
            match decoding {
                Decoding::Greedy => greedy(model, &s.prompt, len),
                Decoding::Sampled { seed, temperature } => {
                    generate(model, &s.prompt, len, temperature, &mut stream(seed, domain::EVAL, 0, i as u64))
                }
            }
        })
        .collect()
}

/// Fraction of labels equal to `Advantaged`.
pub fn advantaged_fraction(labels: &[GroupLabel]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|l| **l == GroupLabel::Advantaged).count() as f64 / labels.len() as f64
}

fn check_balanced(heldout: &GroupedDataset) -> Result<()> {
    if heldout.is_empty() {
        return Err(Error::EmptyHeldout);
    }
    let r = heldout.disadvantaged_ratio();
    if r != 0.5 {
        return Err(Error::UnbalancedHeldout(r));
    }
    Ok(())
}

/// Share of classified-advantaged continuations among already decoded outputs.
pub fn bias_of(clf: &GroupClassifier, outputs: &[Vec<Token>]) -> Result<f64> {
    let labels = outputs
        .iter()
        .map(|o| clf.classify(o).map(|(l, _)| l))
        .collect::<Result<Vec<_>>>()?;
    Ok(advantaged_fraction(&labels))
}

/// Fraction of continuations of held-out prompts classified as advantaged.
pub fn preference_bias(clf: &GroupClassifier, model: &ModelParams, heldout: &GroupedDataset, decoding: Decoding) -> Result<f64> {
    check_balanced(heldout)?;
    bias_of(clf, &continuations(model, heldout, decoding)?)
}

/// Perplexity-binned fluency score on a 0 to 3 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityScorer {
    reference: ModelParams,
    thresholds: [f64; 3],
}

/// Default calibration quantiles for the 3 / 2 / 1 bin edges.
pub const QUALITY_QUANTILES: [f64; 3] = [0.65, 0.95, 0.995];

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl QualityScorer {
    pub fn new(reference: ModelParams, thresholds: [f64; 3]) -> Result<Self> {
        if !(thresholds[0] < thresholds[1] && thresholds[1] < thresholds[2]) {
            return Err(invalid("quality thresholds must be strictly increasing"));
        }
        Ok(Self { reference, thresholds })
    }

    /// Place the bin edges at perplexity quantiles of `calibration`.
    pub fn calibrate(reference: ModelParams, calibration: &GroupedDataset, quantiles: [f64; 3]) -> Result<Self> {
        if calibration.is_empty() {
            return Err(invalid("calibration set is empty"));
        }
        let mut ppl = Vec::with_capacity(calibration.len());
        for s in &calibration.samples {
            ppl.push(perplexity(&reference, &s.prompt, &s.response)?);
        }
        ppl.sort_by(f64::total_cmp);
        let mut t = quantiles.map(|q| quantile(&ppl, q));
        // Keep the edges strictly increasing on degenerate calibration sets.
        for i in 1..3 {
            if t[i] <= t[i - 1] {
                t[i] = t[i - 1] * (1.0 + 1e-12) + f64::MIN_POSITIVE;
            }
        }
        Self::new(reference, t)
    }

    /// Balanced bigram reference and calibration drawn from the world.
    pub fn for_world(world: &World, n_per_group: usize, lambda: f64, seed: u64) -> Result<Self> {
        let data = reference_data(world, n_per_group, seed, domain::REFERENCE)?;
        let spec = CountSpec::new(Context::Bigram, Smoothing::UnigramBackoff, lambda, world.vocab_size());
        let reference = fit_counts(spec, &data)?;
        let calibration = reference_data(world, n_per_group, seed, domain::CALIBRATION)?;
        Self::calibrate(reference, &calibration, QUALITY_QUANTILES)
    }

    pub fn reference(&self) -> &ModelParams {
        &self.reference
    }

    pub fn thresholds(&self) -> [f64; 3] {
        self.thresholds
    }

    pub fn bin(&self, ppl: f64) -> u8 {
        match self.thresholds.iter().position(|&t| ppl < t) {
            Some(i) => 3 - i as u8,
            None => 0,
        }
    }

    pub fn score(&self, prompt: &[Token], response: &[Token]) -> Result<u8> {
        Ok(self.bin(perplexity(&self.reference, prompt, response)?))
    }
}

/// Per-token perplexity of `response` after `prompt`.
pub fn perplexity(model: &ModelParams, prompt: &[Token], response: &[Token]) -> Result<f64> {
    if response.is_empty() {
        return Err(invalid("response must be nonempty"));
    }
    let ll = sequence_log_prob(model, prompt, response)?;
    Ok(libm::exp(-ll / response.len() as f64))
}

/// Mean quality bin over `(prompt, response)` pairs.
pub fn generation_quality<'a>(
    scorer: &QualityScorer,
    pairs: impl IntoIterator<Item = (&'a [Token], &'a [Token])>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, r) in pairs {
        total += scorer.score(p, r)? as f64;
        n += 1;
    }
    if n == 0 {
        return Err(invalid("no responses to score"));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass1Mode {
    /// Exact match of the greedy answer.
    Greedy,
    /// Probability that one sample at temperature 1 equals the answer.
    Expected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pass1 {
    pub advantaged: Option<f64>,
    pub disadvantaged: Option<f64>,
}

impl Pass1 {
    pub fn get(&self, g: GroupLabel) -> Option<f64> {
        match g {
            GroupLabel::Advantaged => self.advantaged,
            GroupLabel::Disadvantaged => self.disadvantaged,
        }
    }
}

/// Per-sample correctness (0/1 for greedy, a probability for expected).
pub fn pass1_scores(model: &ModelParams, testset: &GroupedDataset, mode: Pass1Mode) -> Result<Vec<f64>> {
    testset
        .samples
        .iter()
        .map(|s| {
            let truth = s.ground_truth.as_ref().ok_or(Error::MissingGroundTruth)?;
            match mode {
                Pass1Mode::Greedy => Ok((greedy(model, &s.prompt, truth.len())? == *truth) as u8 as f64),
                Pass1Mode::Expected => Ok(libm::exp(sequence_log_prob(model, &s.prompt, truth)?)),
            }
        })
        .collect()
}

/// Per-group pass@1; a group absent from `testset` reports `None`.
pub fn pass1_accuracy(model: &ModelParams, testset: &GroupedDataset, mode: Pass1Mode) -> Result<Pass1> {
    let scores = pass1_scores(model, testset, mode)?;
    let mut sum = [0.0; 2];
    let mut count = [0usize; 2];
    for (s, x) in testset.samples.iter().zip(&scores) {
        sum[s.group.index()] += x;
        count[s.group.index()] += 1;
    }
    let mean = |i: usize| (count[i] > 0).then(|| sum[i] / count[i] as f64);
    Ok(Pass1 {
        advantaged: mean(0),
        disadvantaged: mean(1),
    })
}

pub fn disparate_bias(acc_a: f64, acc_d: f64) -> f64 {
    acc_a - acc_d
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[Token], b: &[Token]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for &x in a {
        let mut diag = 0;
        for (j, &y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

fn f_measure(overlap: f64, cand: usize, reference: usize) -> f64 {
    if overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / cand as f64;
    let r = overlap / reference as f64;
    2.0 * p * r / (p + r)
}

/// LCS-based F-measure.
pub fn rouge_l(candidate: &[Token], reference: &[Token]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    f_measure(lcs_len(candidate, reference) as f64, candidate.len(), reference.len())
}

/// F1 of the multiset token overlap.
pub fn token_f1(candidate: &[Token], reference: &[Token]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut a = candidate.to_vec();
    let mut b = reference.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let (mut i, mut j, mut overlap) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                overlap += 1;
                i += 1;
                j += 1;
            }
        }
    }
    f_measure(overlap as f64, a.len(), b.len())
}

/// `rouge_l + token_f1`, in `[0, 2]`.
pub fn similarity(candidate: &[Token], reference: &[Token]) -> f64 {
    rouge_l(candidate, reference) + token_f1(candidate, reference)
}

/// Metrics of one generation's model on the frozen held-out set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub generation: u32,
    pub preference_bias: Option<f64>,
    pub generation_quality: Option<f64>,
    pub pass1_a: Option<f64>,
    pub pass1_d: Option<f64>,
    pub disparate_bias: Option<f64>,
    pub similarity: Option<f64>,
    /// Disadvantaged share of the data the model was trained on.
    pub dataset_ratio: f64,
}

/// Frozen metric machinery for one world.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluator {
    kind: WorldKind,
    classifier: Option<GroupClassifier>,
    quality: Option<QualityScorer>,
    pub decoding: Decoding,
    pub pass1_mode: Pass1Mode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluatorSpec {
    /// World samples per group for the reference models and for calibration.
    pub reference_per_group: usize,
    pub lambda: f64,
    pub decoding: Decoding,
    pub pass1_mode: Pass1Mode,
}

impl EvaluatorSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            reference_per_group: 2000,
            lambda: 0.5,
            decoding: Decoding::Sampled { seed, temperature: 1.0 },
            pass1_mode: Pass1Mode::Expected,
        }
    }
}

impl Evaluator {
    pub fn for_world(world: &World, spec: &EvaluatorSpec, seed: u64) -> Result<Self> {
        let (classifier, quality) = match world.kind() {
            WorldKind::Preference => (
                Some(GroupClassifier::fit(world, spec.reference_per_group, spec.lambda, seed)?),
                Some(QualityScorer::for_world(world, spec.reference_per_group, spec.lambda, seed)?),
            ),
            WorldKind::Skill => (None, None),
        };
        Ok(Self {
            kind: world.kind(),
            classifier,
            quality,
            decoding: spec.decoding,
            pass1_mode: spec.pass1_mode,
        })
    }

    pub fn classifier(&self) -> Option<&GroupClassifier> {
        self.classifier.as_ref()
    }

    pub fn quality(&self) -> Option<&QualityScorer> {
        self.quality.as_ref()
    }

    pub fn evaluate(&self, model: &ModelParams, heldout: &GroupedDataset, generation: u32, dataset_ratio: f64) -> Result<MetricsRecord> {
        check_balanced(heldout)?;
        let outputs = continuations(model, heldout, self.decoding)?;
        let mut sim = 0.0;
        for (s, o) in heldout.samples.iter().zip(&outputs) {
            let truth = s.ground_truth.as_ref().unwrap_or(&s.response);
            sim += similarity(o, truth);
        }
        let mut record = MetricsRecord {
            generation,
            preference_bias: None,
            generation_quality: None,
            pass1_a: None,
            pass1_d: None,
            disparate_bias: None,
            similarity: Some(sim / heldout.len() as f64),
            dataset_ratio,
        };
        match self.kind {
            WorldKind::Preference => {
                if let Some(clf) = &self.classifier {
                    record.preference_bias = Some(bias_of(clf, &outputs)?);
                }
                if let Some(q) = &self.quality {
                    let pairs = heldout.samples.iter().zip(&outputs).map(|(s, o)| (s.prompt.as_slice(), o.as_slice()));
                    record.generation_quality = Some(generation_quality(q, pairs)?);
                }
            }
            WorldKind::Skill => {
                let p = pass1_accuracy(model, heldout, self.pass1_mode)?;
                record.pass1_a = p.advantaged;
                record.pass1_d = p.disadvantaged;
                if let (Some(a), Some(d)) = (p.advantaged, p.disadvantaged) {
                    record.disparate_bias = Some(disparate_bias(a, d));
                }
            }
        }
        Ok(record)
    }
}
