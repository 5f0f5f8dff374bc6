//! Softmax model over a one-hot previous-token feature plus a bias.

use alloc::vec;
use alloc::vec::Vec;

use super::count::check_tokens;
use crate::error::{invalid, Error, Result};
use crate::world::{GroupedDataset, Token};

/// Weights are `(V + 1) × V`, feature-major. Feature `i < V` is "previous
/// token is `i`"; feature `V` is always on.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel {
    vocab_size: usize,
    weights: Vec<f64>,
}

pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = libm::exp(*l - max);
        total += *l;
    }
    logits.iter_mut().for_each(|l| *l /= total);
}

impl SoftmaxModel {
    /// All-zero weights: every conditional is uniform.
    pub fn zeros(vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(invalid("vocab_size must be positive"));
        }
        Ok(Self {
            vocab_size,
            weights: vec![0.0; (vocab_size + 1) * vocab_size],
        })
    }

    pub fn from_weights(vocab_size: usize, weights: Vec<f64>) -> Result<Self> {
        if vocab_size == 0 || weights.len() != (vocab_size + 1) * vocab_size {
            return Err(invalid("weight matrix must be (V + 1) x V"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("weights must be finite"));
        }
        Ok(Self { vocab_size, weights })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn features(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn feature_row(&self, f: usize) -> &[f64] {
        &self.weights[f * self.vocab_size..(f + 1) * self.vocab_size]
    }

    /// Conditional distribution after `prev`.
    pub fn row(&self, prev: Token) -> Vec<f64> {
        let mut logits: Vec<f64> = self
            .feature_row(prev as usize)
            .iter()
            .zip(self.feature_row(self.vocab_size))
            .map(|(a, b)| a + b)
            .collect();
        softmax_in_place(&mut logits);
        logits
    }

    fn check(&self, data: &GroupedDataset) -> Result<()> {
        if data.is_empty() {
            return Err(Error::EmptyData);
        }
        for s in &data.samples {
            check_tokens(&s.response, self.vocab_size)?;
            let last = s.prompt.last().ok_or_else(|| invalid("empty prompt"))?;
            check_tokens(core::slice::from_ref(last), self.vocab_size)?;
        }
        Ok(())
    }

    /// Gradient of the mean per-sample negative log-likelihood.
    pub fn gradient(&self, batch: &GroupedDataset) -> Result<Vec<f64>> {
        self.check(batch)?;
        let v = self.vocab_size;
        let mut grad = vec![0.0; self.weights.len()];
        let scale = 1.0 / batch.len() as f64;
        for s in &batch.samples {
            let mut prev = *s.prompt.last().expect("checked");
            for &t in &s.response {
                let mut p = self.row(prev);
                p[t as usize] -= 1.0;
                let (pf, bf) = (prev as usize * v, v * v);
                for j in 0..v {
                    grad[pf + j] += scale * p[j];
                    grad[bf + j] += scale * p[j];
                }
                prev = t;
            }
        }
        Ok(grad)
    }

    /// Mean per-sample negative log-likelihood.
    pub fn mean_nll(&self, batch: &GroupedDataset) -> Result<f64> {
        self.check(batch)?;
        let mut total = 0.0;
        for s in &batch.samples {
            let mut prev = *s.prompt.last().expect("checked");
            for &t in &s.response {
                total -= libm::log(self.row(prev)[t as usize]);
                prev = t;
            }
        }
        Ok(total / batch.len() as f64)
    }

    /// `epochs` full-batch gradient steps of size `eta`.
    pub(crate) fn descend(&mut self, batch: &GroupedDataset, eta: f64, epochs: u32) -> Result<()> {
        for _ in 0..epochs {
            let g = self.gradient(batch)?;
            for (w, d) in self.weights.iter_mut().zip(g) {
                *w -= eta * d;
            }
        }
        Ok(())
    }
}
