//! Scoring functions.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::format::is_well_formed_decomposition;
use crate::pipeline::{cosine, Embedder};

pub const BLEU_MAX_N: usize = 4;
pub const BLEU_SMOOTHING: &str = "add-one on n-gram precisions for n >= 2";

fn ngram_counts<'a, 'b>(tokens: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU over whitespace tokens with clipped n-gram counts, the
/// brevity penalty against the closest reference length (shorter on ties),
/// and add-one smoothing of the precisions for `n >= 2`. An empty candidate
/// scores 0.
pub fn bleu<S: AsRef<str>>(candidate: &str, references: &[S], max_n: usize) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Contract("BLEU needs at least one reference".into()));
    }
    if max_n == 0 {
        return Err(Error::Contract("BLEU needs max_n >= 1".into()));
    }
    let cand: Vec<&str> = candidate.split_whitespace().collect();
    if cand.is_empty() {
        return Ok(0.0);
    }
    let refs: Vec<Vec<&str>> = references.iter().map(|r| r.as_ref().split_whitespace().collect()).collect();
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let counts = ngram_counts(&cand, n);
        let mut max_ref: HashMap<&[&str], usize> = HashMap::new();
        for r in &refs {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let matched: usize = counts.iter().map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0))).sum();
        let total = cand.len().saturating_sub(n - 1);
        let p = if n == 1 {
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln();
    }
    let c = cand.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&l| (l.abs_diff(c), l))
        .expect("references nonempty");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok((bp * (log_sum / max_n as f64).exp()).clamp(0.0, 1.0))
}

/// Fraction of outputs that split into at least two sub-tasks separated by
/// exactly one blank line, with no repairs needed.
pub fn format_correctness_rate<S: AsRef<str>>(outputs: &[S]) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::Contract("format correctness needs at least one output".into()));
    }
    let ok = outputs.iter().filter(|o| is_well_formed_decomposition(o.as_ref())).count();
    Ok(ok as f64 / outputs.len() as f64)
}

fn binomial(n: u64, k: u64) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = acc.checked_mul(u128::from(n - i))? / u128::from(i + 1);
    }
    Some(acc)
}

/// Unbiased pass@k, `1 - C(n-c, k) / C(n, k)`. Exact integer arithmetic is
/// used while the binomials are exactly representable, otherwise a
/// numerically stable product.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    if c > n {
        return Err(Error::Contract(format!("c = {c} exceeds n = {n}")));
    }
    if k == 0 || k > n {
        return Err(Error::Contract(format!("k must lie in 1..={n}, got {k}")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    const EXACT: u128 = 1 << 53;
    if let (Some(all), Some(fail)) = (binomial(n as u64, k as u64), binomial((n - c) as u64, k as u64)) {
        if all <= EXACT {
            return Ok((all - fail) as f64 / all as f64);
        }
    }
    let mut prod = 1.0;
    for i in (n - c + 1)..=n {
        prod *= 1.0 - k as f64 / i as f64;
    }
    Ok(1.0 - prod)
}

/// Fraction of samples passing every test.
pub fn pass_rate(n: usize, c: usize) -> Result<f64> {
    if n == 0 || c > n {
        return Err(Error::Contract(format!("invalid pass counts c = {c}, n = {n}")));
    }
    Ok(c as f64 / n as f64)
}

/// Cosine similarity of the two embeddings, mapped through `(1 + cos) / 2`
/// unless the embedder is nonnegative.
pub fn code_embedding_similarity(candidate: &str, reference: &str, embedder: &dyn Embedder) -> Result<f64> {
    let a = embedder.embed(candidate)?;
    let b = embedder.embed(reference)?;
    let c = cosine(&a, &b)?;
    Ok(if embedder.nonnegative() { c.clamp(0.0, 1.0) } else { (1.0 + c) / 2.0 })
}
