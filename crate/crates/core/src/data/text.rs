use serde::{Deserialize, Serialize};

use super::{Example, Splits};
use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Half-open token id range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRange {
    pub start: usize,
    pub end: usize,
}

impl TokenRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, id: usize) -> bool {
        (self.start..self.end).contains(&id)
    }

    fn overlaps(&self, other: &TokenRange) -> bool {
        self.start < other.end && other.start < self.end
    }

    fn sample(&self, rng: &mut Rng) -> usize {
        self.start + rng.below(self.len())
    }
}

/// Planted-rationale text corpus: label-specific signal spans inside neutral
/// filler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextGenSpec {
    pub vocab_size: usize,
    pub neutral: TokenRange,
    /// Signal tokens that appear only in label-1 documents.
    pub positive: TokenRange,
    /// Signal tokens that appear only in label-0 documents.
    pub negative: TokenRange,
    pub doc_len: usize,
    pub span_len: usize,
    pub num_spans: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for TextGenSpec {
    fn default() -> Self {
        Self {
            vocab_size: 100,
            neutral: TokenRange::new(0, 80),
            positive: TokenRange::new(80, 90),
            negative: TokenRange::new(90, 100),
            doc_len: 40,
            span_len: 4,
            num_spans: 2,
            train_size: 2000,
            dev_size: 500,
            test_size: 500,
            seed: 1,
        }
    }
}

impl TextGenSpec {
    pub fn validate(&self) -> Result<()> {
        let ranges = [("neutral", self.neutral), ("positive", self.positive), ("negative", self.negative)];
        for (name, r) in ranges {
            if r.is_empty() {
                return Err(Error::Config(format!("{name} token range is empty")));
            }
            if r.end > self.vocab_size {
                return Err(Error::Config(format!(
                    "{name} token range ends at {} beyond vocab_size {}",
                    r.end, self.vocab_size
                )));
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                if ranges[i].1.overlaps(&ranges[j].1) {
                    return Err(Error::Config(format!(
                        "{} and {} token ranges overlap",
                        ranges[i].0, ranges[j].0
                    )));
                }
            }
        }
        if self.span_len == 0 || self.num_spans == 0 {
            return Err(Error::Config("span_len and num_spans must be positive".into()));
        }
        if self.num_spans * self.span_len > self.doc_len {
            return Err(Error::Config(format!(
                "num_spans * span_len = {} exceeds doc_len = {}",
                self.num_spans * self.span_len,
                self.doc_len
            )));
        }
        Ok(())
    }

    /// Fraction of positions covered by gold spans.
    pub fn gold_sparsity(&self) -> f64 {
        (self.num_spans * self.span_len) as f64 / self.doc_len as f64
    }

    fn document(&self, label: usize, rng: &mut Rng) -> Example {
        let (l, k, spans) = (self.doc_len, self.span_len, self.num_spans);
        // Sorted draws with replacement from 0..=l-spans*k, shifted by i*k,
        // enumerate non-overlapping placements uniformly.
        let mut slots: Vec<usize> = (0..spans).map(|_| rng.below(l - spans * k + 1)).collect();
        slots.sort_unstable();
        let mut rationale = vec![false; l];
        for (i, s) in slots.iter().enumerate() {
            let start = s + i * k;
            rationale[start..start + k].iter_mut().for_each(|r| *r = true);
        }
        let signal = if label == 1 { self.positive } else { self.negative };
        let tokens = rationale
            .iter()
            .map(|&gold| if gold { signal.sample(rng) } else { self.neutral.sample(rng) })
            .collect();
        Example {
            input: super::Input::Text { tokens },
            label,
            rationale: Some(rationale),
        }
    }

    fn split(&self, stream: u64, size: usize) -> Vec<Example> {
        let base = Rng::with_stream(self.seed, stream);
        let mut out: Vec<Example> = (0..size)
            .map(|i| self.document(i % 2, &mut base.split(i as u64)))
            .collect();
        base.split(u64::MAX).shuffle(&mut out);
        out
    }
}

/// Generates balanced train/dev/test splits.
pub fn gen_text(spec: &TextGenSpec) -> Result<Splits> {
    spec.validate()?;
    Ok(Splits {
        train: spec.split(0, spec.train_size),
        dev: spec.split(1, spec.dev_size),
        test: spec.split(2, spec.test_size),
    })
}
