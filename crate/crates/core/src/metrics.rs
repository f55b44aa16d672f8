//! Answer normalization and corpus-level BLEU / Rouge-L.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{hypotheses} hypotheses but {references} reference sets")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("max n-gram order must be at least 1")]
    Order,
}

/// Rouge-L recall weight `beta^2`.
pub const ROUGE_BETA_SQ: f64 = 1.2;

/// Lowercases, drops one terminal full stop and collapses whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.trim().to_lowercase();
    let stripped = lower.strip_suffix('.').unwrap_or(&lower);
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalized whitespace tokens.
pub fn answer_tokens(text: &str) -> Vec<String> {
    normalize_answer(text).split_whitespace().map(str::to_string).collect()
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn check(h: usize, r: usize) -> Result<(), MetricError> {
    if h != r {
        return Err(MetricError::LengthMismatch {
            hypotheses: h,
            references: r,
        });
    }
    Ok(())
}

/// Corpus BLEU with clipped n-gram precision (max count over references),
/// uniform weights over orders `1..=max_n`, and brevity penalty against the
/// closest reference length (shorter on ties). No smoothing; an order with no
/// hypothesis n-grams anywhere in the corpus is left out of the mean.
pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<Vec<String>>], max_n: usize) -> Result<f64, MetricError> {
    check(hypotheses.len(), references.len())?;
    if max_n == 0 {
        return Err(MetricError::Order);
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (hyp, refs) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(hyp.len()), l))
            .unwrap_or(0);
        for n in 1..=max_n {
            let counts = ngrams(hyp, n);
            let ref_counts: Vec<_> = refs.iter().map(|r| ngrams(r, n)).collect();
            for (gram, c) in counts {
                let cap = ref_counts.iter().map(|m| m.get(gram).copied().unwrap_or(0)).max().unwrap_or(0);
                matched[n - 1] += c.min(cap);
                total[n - 1] += c;
            }
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..max_n {
        if total[n] == 0 {
            continue;
        }
        if matched[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
        orders += 1;
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * (log_sum / orders as f64).exp())
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Rouge-L F-measure of one hypothesis against one reference.
pub fn rouge_l_pair(hyp: &[String], reference: &[String]) -> f64 {
    let lcs = lcs_len(hyp, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / hyp.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    (1.0 + ROUGE_BETA_SQ) * p * r / (r + ROUGE_BETA_SQ * p)
}

/// Mean over examples of the best Rouge-L F against any reference.
pub fn rouge_l(hypotheses: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64, MetricError> {
    check(hypotheses.len(), references.len())?;
    if hypotheses.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = hypotheses
        .iter()
        .zip(references)
        .map(|(h, refs)| refs.iter().map(|r| rouge_l_pair(h, r)).fold(0.0, f64::max))
        .sum();
    Ok(sum / hypotheses.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub count: usize,
}

impl MetricReport {
    /// Scores raw answer strings after normalization.
    pub fn from_text(hypotheses: &[String], references: &[Vec<String>]) -> Result<Self, MetricError> {
        let hyps: Vec<Vec<String>> = hypotheses.iter().map(|h| answer_tokens(h)).collect();
        let refs: Vec<Vec<Vec<String>>> = references.iter().map(|rs| rs.iter().map(|r| answer_tokens(r)).collect()).collect();
        Self::from_tokens(&hyps, &refs)
    }

    pub fn from_tokens(hypotheses: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<Self, MetricError> {
        Ok(MetricReport {
            bleu1: bleu(hypotheses, references, 1)?,
            bleu4: bleu(hypotheses, references, 4)?,
            rouge_l: rouge_l(hypotheses, references)?,
            count: hypotheses.len(),
        })
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8} {:>8} {:>8}", "examples", "BLEU-1", "BLEU-4", "Rouge-L")?;
        write!(
            f,
            "{:<10} {:>8.2} {:>8.2} {:>8.2}",
            self.count,
            100.0 * self.bleu1,
            100.0 * self.bleu4,
            100.0 * self.rouge_l
        )
    }
}
