//! Trainable generators: smoothed count tables and a softmax model.
//!
//! Count models fine-tune by moving each conditional distribution a step
//! `η` toward the smoothed maximum-likelihood table of the new data, once per
//! epoch. The softmax model fine-tunes by full-batch gradient descent on the
//! mean per-sample negative log-likelihood.

mod count;
mod softmax;

use alloc::borrow::Cow;
use alloc::vec::Vec;

use rand::Rng;

pub use count::{Context, CountModel, CountSpec, Smoothing};
pub use softmax::SoftmaxModel;

use count::check_tokens;
use crate::error::{invalid, Error, Result};
use crate::rng::SimRng;
use crate::world::{sample_categorical, GroupedDataset, Sample, Token};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    CountNgram(CountModel),
    SoftmaxUnigram(SoftmaxModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    CountNgram,
    SoftmaxUnigram,
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::CountNgram(_) => ModelKind::CountNgram,
            ModelParams::SoftmaxUnigram(_) => ModelKind::SoftmaxUnigram,
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            ModelParams::CountNgram(m) => m.vocab_size(),
            ModelParams::SoftmaxUnigram(m) => m.vocab_size(),
        }
    }

    pub fn as_count(&self) -> Option<&CountModel> {
        match self {
            ModelParams::CountNgram(m) => Some(m),
            ModelParams::SoftmaxUnigram(_) => None,
        }
    }

    pub fn as_softmax(&self) -> Option<&SoftmaxModel> {
        match self {
            ModelParams::SoftmaxUnigram(m) => Some(m),
            ModelParams::CountNgram(_) => None,
        }
    }

    /// Distribution of the next token given the prompt and previous token.
    pub fn conditional(&self, prompt: &[Token], prev: Token) -> Cow<'_, [f64]> {
        match self {
            ModelParams::CountNgram(m) => Cow::Borrowed(m.row(prompt, prev)),
            ModelParams::SoftmaxUnigram(m) => Cow::Owned(m.row(prev)),
        }
    }

    fn check_prompt(&self, prompt: &[Token]) -> Result<Token> {
        let last = *prompt.last().ok_or_else(|| invalid("prompt must be nonempty"))?;
        check_tokens(prompt, self.vocab_size())?;
        Ok(last)
    }
}

/// Where each generation's training starts from.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainingRegime {
    /// Always start from the frozen base parameters.
    Retrain(ModelParams),
    /// Continue from the previous generation's parameters.
    Incremental,
}

impl TrainingRegime {
    pub fn train(&self, previous: &ModelParams, data: &GroupedDataset, eta: f64, epochs: u32) -> Result<ModelParams> {
        match self {
            TrainingRegime::Retrain(base) => finetune(base, data, eta, epochs),
            TrainingRegime::Incremental => finetune(previous, data, eta, epochs),
        }
    }
}

/// Additively smoothed maximum-likelihood count model of order 1 or 2.
pub fn fit_mle(corpus: &GroupedDataset, vocab_size: usize, order: u32, lambda: f64) -> Result<ModelParams> {
    let spec = CountSpec::new(Context::from_order(order)?, Smoothing::Additive, lambda, vocab_size);
    Ok(ModelParams::CountNgram(CountModel::fit(spec, corpus)?))
}

pub fn fit_counts(spec: CountSpec, corpus: &GroupedDataset) -> Result<ModelParams> {
    Ok(ModelParams::CountNgram(CountModel::fit(spec, corpus)?))
}

pub fn uniform_counts(spec: CountSpec) -> Result<ModelParams> {
    Ok(ModelParams::CountNgram(CountModel::uniform(spec)?))
}

pub fn finetune(params: &ModelParams, data: &GroupedDataset, eta: f64, epochs: u32) -> Result<ModelParams> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(invalid("eta must lie in [0, 1]"));
    }
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    match params {
        ModelParams::CountNgram(m) => {
            let target = CountModel::fit(*m.spec(), data).map_err(|e| match e {
                Error::EmptyCorpus => Error::EmptyData,
                other => other,
            })?;
            let mut out = m.clone();
            for _ in 0..epochs {
                out.blend(&target, eta);
            }
            Ok(ModelParams::CountNgram(out))
        }
        ModelParams::SoftmaxUnigram(m) => {
            let mut out = m.clone();
            out.descend(data, eta, epochs)?;
            Ok(ModelParams::SoftmaxUnigram(out))
        }
    }
}

fn pick(row: &[f64], temperature: f64, rng: &mut SimRng) -> Token {
    if temperature == 1.0 {
        return sample_categorical(row, rng) as Token;
    }
    let max = row.iter().cloned().fold(0.0, f64::max);
    let lmax = libm::log(max);
    let w: Vec<f64> = row
        .iter()
        .map(|&p| if p > 0.0 { libm::exp((libm::log(p) - lmax) / temperature) } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, x) in w.iter().enumerate() {
        acc += x;
        if u < acc {
            return i as Token;
        }
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0) as Token
}

fn argmax(row: &[f64]) -> Token {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = i;
        }
    }
    best as Token
}

/// Sample `length` tokens autoregressively at `temperature`.
pub fn generate(params: &ModelParams, prompt: &[Token], length: usize, temperature: f64, rng: &mut SimRng) -> Result<Vec<Token>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(invalid("temperature must be positive and finite"));
    }
    let mut prev = params.check_prompt(prompt)?;
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        prev = pick(&params.conditional(prompt, prev), temperature, rng);
        out.push(prev);
    }
    Ok(out)
}

/// Greedy continuation; the lowest token id wins ties.
pub fn greedy(params: &ModelParams, prompt: &[Token], length: usize) -> Result<Vec<Token>> {
    let mut prev = params.check_prompt(prompt)?;
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        prev = argmax(&params.conditional(prompt, prev));
        out.push(prev);
    }
    Ok(out)
}

/// Log-probability of `response` given `prompt`.
pub fn sequence_log_prob(params: &ModelParams, prompt: &[Token], response: &[Token]) -> Result<f64> {
    let mut prev = params.check_prompt(prompt)?;
    check_tokens(response, params.vocab_size())?;
    let mut total = 0.0;
    for &t in response {
        total += libm::log(params.conditional(prompt, prev)[t as usize]);
        prev = t;
    }
    Ok(total)
}

/// Sum of log-probabilities of the sample's response tokens.
pub fn log_likelihood(params: &ModelParams, sample: &Sample) -> Result<f64> {
    sequence_log_prob(params, &sample.prompt, &sample.response)
}

/// Gradient of the mean negative log-likelihood for a softmax model.
pub fn gradient(params: &ModelParams, batch: &GroupedDataset) -> Result<Vec<f64>> {
    match params {
        ModelParams::SoftmaxUnigram(m) => m.gradient(batch),
        ModelParams::CountNgram(_) => Err(Error::VariantMismatch("gradient needs a softmax model")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::world::{GroupLabel, Origin, Provenance};
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    fn sample(prompt: &[Token], response: &[Token]) -> Sample {
        Sample {
            prompt: prompt.to_vec(),
            response: response.to_vec(),
            group: GroupLabel::Advantaged,
            ground_truth: None,
            origin: Origin::Real,
        }
    }

    fn dataset(samples: Vec<Sample>) -> GroupedDataset {
        GroupedDataset::new(samples, Provenance::Real, 0)
    }

    fn unigram_row(m: &ModelParams) -> Vec<f64> {
        m.conditional(&[0], 0).into_owned()
    }

    #[test]
    fn unigram_counting_and_laplace() {
        let d = dataset(vec![sample(&[0], &[0, 0, 1])]);
        let tiny = fit_mle(&d, 2, 1, 1e-12).unwrap();
        let r = unigram_row(&tiny);
        assert!((r[0] - 2.0 / 3.0).abs() < 1e-9 && (r[1] - 1.0 / 3.0).abs() < 1e-9);
        let lap = fit_mle(&d, 2, 1, 1.0).unwrap();
        assert_eq!(unigram_row(&lap), vec![3.0 / 5.0, 2.0 / 5.0]);
        assert!(matches!(fit_mle(&dataset(vec![]), 2, 1, 1.0), Err(Error::EmptyCorpus)));
        assert!(matches!(fit_mle(&d, 2, 3, 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn backoff_rows_lean_toward_the_pooled_unigram() {
        let d = dataset(vec![sample(&[0], &[1, 1, 1, 2])]);
        let spec = CountSpec::new(Context::Bigram, Smoothing::UnigramBackoff, 0.5, 3);
        let m = fit_counts(spec, &d).unwrap();
        // Token 0 never appears as a context: its row is the smoothed unigram.
        let u: Vec<f64> = [0.0, 3.0, 1.0].iter().map(|c| (c + 0.5) / (4.0 + 1.5)).collect();
        let row = m.conditional(&[0], 2);
        for j in 0..3 {
            assert!((row[j] - u[j]).abs() < 1e-12);
        }
        let row1 = m.conditional(&[0], 1);
        assert!((row1[1] - (2.0 + 1.5 * u[1]) / (3.0 + 1.5)).abs() < 1e-12);
    }

    fn nll(m: &CountModel, d: &GroupedDataset) -> f64 {
        let p = ModelParams::CountNgram(m.clone());
        -d.samples.iter().map(|s| log_likelihood(&p, s).unwrap()).sum::<f64>()
    }

    #[test]
    fn bigram_mle_beats_perturbed_tables() {
        let v = 4;
        let mut rng = stream(5, 0, 0, 0);
        let samples = (0..40)
            .map(|_| {
                let p = [rng.gen_range(0..v as Token)];
                let r: Vec<Token> = (0..6).map(|_| rng.gen_range(0..v as Token)).collect();
                sample(&p, &r)
            })
            .collect();
        let d = dataset(samples);
        let spec = CountSpec::new(Context::Bigram, Smoothing::Additive, 1e-9, v);
        let m = CountModel::fit(spec, &d).unwrap();
        let base = nll(&m, &d);
        for _ in 0..10 {
            let mut t = m.dense().unwrap().to_vec();
            for row in t.chunks_mut(v) {
                row.iter_mut().for_each(|x| *x *= libm::exp(rng.gen_range(-0.3..0.3)));
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= s);
            }
            let perturbed = CountModel::from_dense(spec, t).unwrap();
            assert!(base <= nll(&perturbed, &d) + 1e-9);
        }
    }

    #[test]
    fn finetune_endpoints_and_unrolled_recurrence() {
        let spec = CountSpec::new(Context::Unigram, Smoothing::Additive, 0.5, 2);
        let p0 = uniform_counts(spec).unwrap();
        let d = dataset(vec![sample(&[0], &[0, 0, 0, 1])]);
        let mle = fit_counts(spec, &d).unwrap();
        assert_eq!(finetune(&p0, &d, 1.0, 1).unwrap(), mle);
        assert_eq!(finetune(&p0, &d, 0.0, 3).unwrap(), p0);
        let two = unigram_row(&finetune(&p0, &d, 0.5, 2).unwrap());
        let (a, b) = (unigram_row(&p0), unigram_row(&mle));
        for j in 0..2 {
            assert!((two[j] - (0.25 * a[j] + 0.75 * b[j])).abs() < 1e-15);
        }
        assert!(matches!(finetune(&p0, &dataset(vec![]), 0.5, 1), Err(Error::EmptyData)));
    }

    #[test]
    fn keyed_blend_covers_unseen_prompts() {
        let spec = CountSpec::new(Context::Prompt, Smoothing::UnigramBackoff, 0.5, 3);
        let p0 = uniform_counts(spec).unwrap();
        let d1 = dataset(vec![sample(&[7 % 3, 1], &[2])]);
        let d2 = dataset(vec![sample(&[0, 0], &[1])]);
        let m1 = finetune(&p0, &d1, 0.7, 1).unwrap();
        let m2 = finetune(&m1, &d2, 0.7, 1).unwrap();
        let t2 = fit_counts(spec, &d2).unwrap();
        // A prompt seen only in the first round blends with the second target's fallback row.
        let seen = m1.conditional(&[1, 1], 0);
        let fallback = t2.conditional(&[9, 9], 0);
        let got = m2.conditional(&[1, 1], 0);
        for j in 0..3 {
            assert!((got[j] - (0.3 * seen[j] + 0.7 * fallback[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn regimes_agree_at_full_step() {
        let spec = CountSpec::new(Context::Bigram, Smoothing::UnigramBackoff, 0.5, 4);
        let base = uniform_counts(spec).unwrap();
        let d_old = dataset(vec![sample(&[1], &[2, 3, 3])]);
        let previous = finetune(&base, &d_old, 0.7, 5).unwrap();
        let d = dataset(vec![sample(&[0], &[1, 2, 1])]);
        let retrain = TrainingRegime::Retrain(base).train(&previous, &d, 1.0, 1).unwrap();
        let incremental = TrainingRegime::Incremental.train(&previous, &d, 1.0, 1).unwrap();
        assert_eq!(retrain, incremental);
    }

    #[test]
    fn log_likelihood_oracles() {
        let spec = CountSpec::new(Context::Bigram, Smoothing::Additive, 1.0, 4);
        let u = uniform_counts(spec).unwrap();
        let ll = log_likelihood(&u, &sample(&[0], &[1, 2, 3])).unwrap();
        assert!((ll - 3.0 * libm::log(0.25)).abs() < 1e-12);

        let mut table = vec![0.0; 16];
        for i in 0..4 {
            table[i * 4 + (i + 1) % 4] = 1.0;
        }
        let det = ModelParams::CountNgram(CountModel::from_dense(spec, table).unwrap());
        assert_eq!(log_likelihood(&det, &sample(&[0], &[1, 2, 3, 0])).unwrap(), 0.0);

        let d = dataset(vec![sample(&[3], &[0, 1, 1, 2, 0, 3])]);
        let m = fit_counts(spec, &d).unwrap();
        let s = sample(&[2], &[0, 3, 1, 1, 2]);
        let mut product = 1.0;
        let mut prev = 2;
        for &t in &s.response {
            product *= m.as_count().unwrap().dense().unwrap()[prev * 4 + t as usize];
            prev = t as usize;
        }
        assert!((log_likelihood(&m, &s).unwrap() - libm::log(product)).abs() < 1e-12);
        assert!(matches!(
            log_likelihood(&m, &sample(&[0], &[9])),
            Err(Error::UnknownToken { token: 9, vocab_size: 4 })
        ));
    }

    #[test]
    fn generation_is_deterministic_and_cold_sampling_is_greedy() {
        let spec = CountSpec::new(Context::Bigram, Smoothing::UnigramBackoff, 0.5, 5);
        let d = dataset(vec![sample(&[0], &[1, 2, 3, 4, 1, 2, 2, 2])]);
        let m = fit_counts(spec, &d).unwrap();
        let a = generate(&m, &[0], 20, 1.0, &mut stream(1, 2, 3, 4)).unwrap();
        let b = generate(&m, &[0], 20, 1.0, &mut stream(1, 2, 3, 4)).unwrap();
        assert_eq!(a, b);
        let cold = generate(&m, &[0], 20, 1e-4, &mut stream(1, 2, 3, 4)).unwrap();
        assert_eq!(cold, greedy(&m, &[0], 20).unwrap());
        assert!(generate(&m, &[0], 3, 0.0, &mut stream(1, 2, 3, 4)).is_err());
    }

    #[test]
    fn greedy_ties_go_to_the_lowest_token() {
        let spec = CountSpec::new(Context::Unigram, Smoothing::Additive, 1.0, 3);
        let m = uniform_counts(spec).unwrap();
        assert_eq!(greedy(&m, &[2], 4).unwrap(), vec![0, 0, 0, 0]);
    }

    #[test]
    fn sampled_frequencies_match_conditionals() {
        let spec = CountSpec::new(Context::Unigram, Smoothing::Additive, 0.5, 4);
        let d = dataset(vec![sample(&[0], &[0, 0, 0, 1, 1, 2])]);
        let m = fit_counts(spec, &d).unwrap();
        let p = unigram_row(&m);
        let n = 100_000;
        let draws = generate(&m, &[0], n, 1.0, &mut stream(9, 0, 0, 0)).unwrap();
        for j in 0..4 {
            let c = draws.iter().filter(|&&t| t == j as Token).count() as f64;
            let sd = (n as f64 * p[j] * (1.0 - p[j])).sqrt();
            assert!((c - n as f64 * p[j]).abs() <= 3.0 * sd, "token {j}");
        }
    }

    fn random_softmax(v: usize, rng: &mut SimRng) -> SoftmaxModel {
        let w = (0..(v + 1) * v).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SoftmaxModel::from_weights(v, w).unwrap()
    }

    fn random_batch(v: usize, n: usize, rng: &mut SimRng) -> GroupedDataset {
        dataset(
            (0..n)
                .map(|_| {
                    let p = [rng.gen_range(0..v as Token)];
                    let r: Vec<Token> = (0..4).map(|_| rng.gen_range(0..v as Token)).collect();
                    sample(&p, &r)
                })
                .collect(),
        )
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut rng = stream(21, 0, 0, 0);
        for _ in 0..3 {
            let v = 5;
            let m = random_softmax(v, &mut rng);
            let batch = random_batch(v, 6, &mut rng);
            let g = m.gradient(&batch).unwrap();
            let h = 1e-5;
            for i in 0..g.len() {
                let mut plus = m.clone();
                plus.weights_mut()[i] += h;
                let mut minus = m.clone();
                minus.weights_mut()[i] -= h;
                let fd = (plus.mean_nll(&batch).unwrap() - minus.mean_nll(&batch).unwrap()) / (2.0 * h);
                let denom = g[i].abs().max(fd.abs()).max(1e-8);
                assert!((g[i] - fd).abs() / denom < 1e-4 || (g[i] - fd).abs() < 1e-9, "coord {i}");
            }
        }
    }

    #[test]
    fn softmax_gradient_vanishes_at_the_empirical_distribution() {
        let m = SoftmaxModel::zeros(2).unwrap();
        // Each context sees both tokens once: uniform model output is the empirical fit.
        let batch = dataset(vec![sample(&[0], &[0, 1]), sample(&[1], &[1, 0])]);
        let g = gradient(&ModelParams::SoftmaxUnigram(m), &batch).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn duplicated_batch_keeps_the_gradient() {
        let mut rng = stream(3, 0, 0, 0);
        let m = random_softmax(4, &mut rng);
        let batch = random_batch(4, 5, &mut rng);
        let mut doubled = batch.clone();
        doubled.samples.extend(batch.samples.iter().cloned());
        let a = m.gradient(&batch).unwrap();
        let b = m.gradient(&doubled).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn softmax_nll_does_not_increase_for_small_steps() {
        let mut rng = stream(4, 0, 0, 0);
        let batch = random_batch(4, 20, &mut rng);
        let mut m = ModelParams::SoftmaxUnigram(random_softmax(4, &mut rng));
        let mut last = m.as_softmax().unwrap().mean_nll(&batch).unwrap();
        for _ in 0..20 {
            m = finetune(&m, &batch, 0.05, 1).unwrap();
            let now = m.as_softmax().unwrap().mean_nll(&batch).unwrap();
            assert!(now <= last + 1e-12);
            last = now;
        }
    }

    fn arb_data(v: u32) -> impl Strategy<Value = GroupedDataset> {
        prop::collection::vec(
            (prop::collection::vec(0..v, 1..4), prop::collection::vec(0..v, 0..6)),
            1..8,
        )
        .prop_map(|pairs| dataset(pairs.into_iter().map(|(p, r)| sample(&p, &r)).collect()))
    }

    fn arb_spec() -> impl Strategy<Value = CountSpec> {
        (
            prop_oneof![Just(Context::Unigram), Just(Context::Bigram), Just(Context::Prompt)],
            prop_oneof![Just(Smoothing::Additive), Just(Smoothing::UnigramBackoff)],
            0.01f64..2.0,
        )
            .prop_map(|(c, s, l)| CountSpec::new(c, s, l, 5))
    }

    proptest! {
        #[test]
        fn rows_stay_normalized_with_full_support(
            spec in arb_spec(),
            d1 in arb_data(5),
            d2 in arb_data(5),
            eta in 0.0f64..=1.0,
            epochs in 0u32..6,
        ) {
            let m = fit_counts(spec, &d1).unwrap();
            let m = finetune(&m, &d2, eta, epochs).unwrap();
            for row in m.as_count().unwrap().rows() {
                let s: f64 = row.iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-9);
                prop_assert!(row.iter().all(|&p| p > 0.0));
            }
            for s in d1.samples.iter().chain(&d2.samples) {
                prop_assert!(log_likelihood(&m, s).unwrap().is_finite());
            }
        }

        #[test]
        fn regimes_match_at_unit_step(spec in arb_spec(), d0 in arb_data(5), d in arb_data(5)) {
            let base = uniform_counts(spec).unwrap();
            let prev = finetune(&base, &d0, 0.7, 5).unwrap();
            let a = TrainingRegime::Retrain(base).train(&prev, &d, 1.0, 1).unwrap();
            let b = TrainingRegime::Incremental.train(&prev, &d, 1.0, 1).unwrap();
            let unseen = vec![4, 4, 4, 4, 4];
            for prompt in d0.prompts().chain(d.prompts()).chain([unseen.as_slice()]) {
                for prev in 0..5 {
                    prop_assert_eq!(a.conditional(prompt, prev), b.conditional(prompt, prev));
                }
            }
        }
    }
}
