//! Smoothed count n-gram tables.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::world::{GroupedDataset, Token};

/// What a count model conditions each response token on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Context {
    /// No conditioning.
    Unigram,
    /// The previous token; the first response token sees the last prompt token.
    Bigram,
    /// The whole prompt, as a memorization table.
    Prompt,
}

impl Context {
    pub fn from_order(order: u32) -> Result<Context> {
        match order {
            1 => Ok(Context::Unigram),
            2 => Ok(Context::Bigram),
            _ => Err(invalid("order must be 1 or 2")),
        }
    }

    /// 1 for unigram, 2 for bigram, 0 for a prompt-keyed table.
    pub fn order(self) -> u32 {
        match self {
            Context::Unigram => 1,
            Context::Bigram => 2,
            Context::Prompt => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Context::Unigram => "unigram",
            Context::Bigram => "bigram",
            Context::Prompt => "prompt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Smoothing {
    /// `(c + λ) / (Σc + λ·V)`.
    Additive,
    /// `(c + λ·V·u) / (Σc + λ·V)` where `u` is the additively smoothed
    /// unigram of all response tokens. Identical to `Additive` for a
    /// unigram context.
    UnigramBackoff,
}

impl Smoothing {
    pub fn as_str(self) -> &'static str {
        match self {
            Smoothing::Additive => "additive",
            Smoothing::UnigramBackoff => "backoff",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountSpec {
    pub context: Context,
    pub smoothing: Smoothing,
    pub lambda: f64,
    pub vocab_size: usize,
}

impl CountSpec {
    pub fn new(context: Context, smoothing: Smoothing, lambda: f64, vocab_size: usize) -> Self {
        Self {
            context,
            smoothing,
            lambda,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid("smoothing constant must be positive and finite"));
        }
        if self.vocab_size == 0 {
            return Err(invalid("vocab_size must be positive"));
        }
        Ok(())
    }

    fn dense_rows(&self) -> usize {
        match self.context {
            Context::Unigram => 1,
            _ => self.vocab_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Table {
    /// Row-major `rows × V`.
    Dense(Vec<f64>),
    Keyed {
        rows: BTreeMap<Vec<Token>, Vec<f64>>,
        default: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountModel {
    spec: CountSpec,
    table: Table,
}

pub(crate) fn check_tokens(tokens: &[Token], vocab_size: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t as usize >= vocab_size) {
        Some(&token) => Err(Error::UnknownToken { token, vocab_size }),
        None => Ok(()),
    }
}

fn check_row(row: &[f64], v: usize) -> Result<()> {
    if row.len() != v {
        return Err(invalid("row length differs from vocab_size"));
    }
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(invalid("probabilities must be finite and non-negative"));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(invalid("row does not sum to 1"));
    }
    Ok(())
}

impl CountModel {
    /// Every conditional uniform.
    pub fn uniform(spec: CountSpec) -> Result<Self> {
        spec.validate()?;
        let v = spec.vocab_size;
        let row = vec![1.0 / v as f64; v];
        let table = match spec.context {
            Context::Prompt => Table::Keyed {
                rows: BTreeMap::new(),
                default: row,
            },
            _ => Table::Dense(row.repeat(spec.dense_rows())),
        };
        Ok(Self { spec, table })
    }

    /// Smoothed maximum-likelihood table for `data`.
    pub fn fit(spec: CountSpec, data: &GroupedDataset) -> Result<Self> {
        spec.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let v = spec.vocab_size;
        let mut column = vec![0.0; v];
        let mut dense = match spec.context {
            Context::Prompt => Vec::new(),
            _ => vec![0.0; spec.dense_rows() * v],
        };
        let mut keyed: BTreeMap<Vec<Token>, Vec<f64>> = BTreeMap::new();
        for s in &data.samples {
            check_tokens(&s.response, v)?;
            if spec.context != Context::Unigram {
                check_tokens(&s.prompt, v)?;
            }
            match spec.context {
                Context::Unigram => {
                    for &t in &s.response {
                        dense[t as usize] += 1.0;
                    }
                }
                Context::Bigram => {
                    let mut prev = *s.prompt.last().ok_or_else(|| invalid("empty prompt"))?;
                    for &t in &s.response {
                        dense[prev as usize * v + t as usize] += 1.0;
                        prev = t;
                    }
                }
                Context::Prompt => {
                    let row = keyed.entry(s.prompt.clone()).or_insert_with(|| vec![0.0; v]);
                    for &t in &s.response {
                        row[t as usize] += 1.0;
                    }
                }
            }
            for &t in &s.response {
                column[t as usize] += 1.0;
            }
        }

        let lam = spec.lambda;
        let lv = lam * v as f64;
        let base: Vec<f64> = match (spec.smoothing, spec.context) {
            (Smoothing::UnigramBackoff, Context::Bigram | Context::Prompt) => {
                let n: f64 = column.iter().sum();
                column.iter().map(|c| (c + lam) / (n + lv)).collect()
            }
            _ => vec![1.0 / v as f64; v],
        };
        let smooth = |row: &mut [f64]| {
            let total: f64 = row.iter().sum();
            for (p, u) in row.iter_mut().zip(&base) {
                *p = (*p + lv * u) / (total + lv);
            }
        };
        let table = match spec.context {
            Context::Prompt => {
                keyed.values_mut().for_each(|r| smooth(r));
                Table::Keyed {
                    rows: keyed,
                    default: base.clone(),
                }
            }
            _ => {
                dense.chunks_mut(v).for_each(smooth);
                Table::Dense(dense)
            }
        };
        Ok(Self { spec, table })
    }

    pub fn from_dense(spec: CountSpec, table: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if spec.context == Context::Prompt {
            return Err(invalid("prompt-keyed models need keyed rows"));
        }
        if table.len() != spec.dense_rows() * spec.vocab_size {
            return Err(invalid("table size does not match context and vocab_size"));
        }
        for row in table.chunks(spec.vocab_size) {
            check_row(row, spec.vocab_size)?;
        }
        Ok(Self {
            spec,
            table: Table::Dense(table),
        })
    }

    pub fn from_keyed(spec: CountSpec, rows: BTreeMap<Vec<Token>, Vec<f64>>, default: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if spec.context != Context::Prompt {
            return Err(invalid("keyed rows require a prompt context"));
        }
        check_row(&default, spec.vocab_size)?;
        for row in rows.values() {
            check_row(row, spec.vocab_size)?;
        }
        Ok(Self {
            spec,
            table: Table::Keyed { rows, default },
        })
    }

    pub fn spec(&self) -> &CountSpec {
        &self.spec
    }

    pub fn vocab_size(&self) -> usize {
        self.spec.vocab_size
    }

    /// Dense payload for unigram and bigram contexts.
    pub fn dense(&self) -> Option<&[f64]> {
        match &self.table {
            Table::Dense(t) => Some(t),
            Table::Keyed { .. } => None,
        }
    }

    /// Keyed payload and fallback row for prompt contexts.
    pub fn keyed(&self) -> Option<(&BTreeMap<Vec<Token>, Vec<f64>>, &[f64])> {
        match &self.table {
            Table::Keyed { rows, default } => Some((rows, default)),
            Table::Dense(_) => None,
        }
    }

    /// Conditional distribution given the prompt and the previous token.
    pub fn row(&self, prompt: &[Token], prev: Token) -> &[f64] {
        let v = self.spec.vocab_size;
        match &self.table {
            Table::Dense(t) => match self.spec.context {
                Context::Unigram => t,
                _ => &t[prev as usize * v..(prev as usize + 1) * v],
            },
            Table::Keyed { rows, default } => rows.get(prompt).map_or(default.as_slice(), |r| r.as_slice()),
        }
    }

    /// `self ← (1 − η)·self + η·target`, row by row over the union of keys.
    pub(crate) fn blend(&mut self, target: &CountModel, eta: f64) {
        let keep = 1.0 - eta;
        let mix = |a: &mut [f64], b: &[f64]| {
            for (x, y) in a.iter_mut().zip(b) {
                *x = keep * *x + eta * y;
            }
        };
        match (&mut self.table, &target.table) {
            (Table::Dense(a), Table::Dense(b)) => mix(a, b),
            (
                Table::Keyed { rows, default },
                Table::Keyed {
                    rows: t_rows,
                    default: t_default,
                },
            ) => {
                for (key, row) in rows.iter_mut() {
                    mix(row, t_rows.get(key).unwrap_or(t_default));
                }
                for (key, t_row) in t_rows {
                    if !rows.contains_key(key) {
                        let mut row = default.clone();
                        mix(&mut row, t_row);
                        rows.insert(key.clone(), row);
                    }
                }
                mix(default, t_default);
            }
            _ => unreachable!("blend between models of different context"),
        }
    }

    /// Every conditional distribution, including the fallback row.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        let v = self.spec.vocab_size;
        let (dense, keyed, default): (&[f64], Option<&BTreeMap<Vec<Token>, Vec<f64>>>, &[f64]) = match &self.table {
            Table::Dense(t) => (t, None, &[]),
            Table::Keyed { rows, default } => (&[], Some(rows), default),
        };
        dense
            .chunks(v)
            .chain(keyed.into_iter().flat_map(|m| m.values().map(|r| r.as_slice())))
            .chain(core::iter::once(default).filter(|d| !d.is_empty()))
    }
}
