//! Corpus-level BLEU-4 and token-level metrics for synthetic tasks.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuReport {
    pub bleu: f64,
    /// Clipped n-gram precisions, n = 1..4.
    pub precisions: [f64; 4],
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub brevity_penalty: f64,
    pub candidate_length: usize,
    pub reference_length: usize,
}

impl BleuReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<18}{:>10.4}\n", "BLEU", self.bleu));
        for n in 0..4 {
            s.push_str(&format!(
                "{:<18}{:>10.4}  ({}/{})\n",
                format!("precision-{}", n + 1),
                self.precisions[n],
                self.matches[n],
                self.totals[n]
            ));
        }
        s.push_str(&format!(
            "{:<18}{:>10.4}\n",
            "brevity penalty", self.brevity_penalty
        ));
        s.push_str(&format!(
            "{:<18}{:>10}\n",
            "candidate length", self.candidate_length
        ));
        s.push_str(&format!(
            "{:<18}{:>10}\n",
            "reference length", self.reference_length
        ));
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn lower(s: &[String]) -> Vec<String> {
    s.iter().map(|w| w.to_lowercase()).collect()
}

/// Case-insensitive corpus BLEU-4 with counts clipped by the per-reference
/// maximum and the closest reference length (shorter on ties) for the
/// brevity penalty. No smoothing: any zero precision gives 0.
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<BleuReport> {
    if candidates.is_empty() {
        return Err(Error::Empty("BLEU candidate set"));
    }
    if candidates.len() != references.len() {
        return Err(Error::shape(
            "bleu",
            &[candidates.len()],
            &[references.len()],
        ));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::Empty("reference set of a sentence"));
        }
        let cand = lower(cand);
        let refs: Vec<Vec<String>> = refs.iter().map(|r| lower(r)).collect();
        c_len += cand.len();
        r_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .expect("non-empty references");
        for n in 1..=4 {
            let counts = ngram_counts(&cand, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in counts {
                matches[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    let precisions: [f64; 4] = std::array::from_fn(|n| {
        if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        }
    });
    let bp = if c_len == 0 {
        0.0
    } else if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    let bleu = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        bp * (precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        matches,
        totals,
        brevity_penalty: bp,
        candidate_length: c_len,
        reference_length: r_len,
    })
}

/// Positions matching over each pair's common prefix, divided by the
/// longer of the two lengths, summed over the corpus.
pub fn token_accuracy(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Empty("token accuracy input"));
    }
    if candidates.len() != references.len() {
        return Err(Error::shape(
            "token_accuracy",
            &[candidates.len()],
            &[references.len()],
        ));
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        hit += c.iter().zip(r).filter(|(a, b)| a == b).count();
        total += c.len().max(r.len());
    }
    Ok(if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    })
}

/// `(hits, positions)` over reference positions holding a word of `rare`:
/// a hit is the same word at the same candidate position.
pub fn rare_word_hits(
    candidates: &[Vec<String>],
    references: &[Vec<String>],
    rare: &BTreeSet<String>,
) -> (usize, usize) {
    let (mut hits, mut total) = (0, 0);
    for (c, r) in candidates.iter().zip(references) {
        for (k, w) in r.iter().enumerate() {
            if rare.contains(w) {
                total += 1;
                if c.get(k) == Some(w) {
                    hits += 1;
                }
            }
        }
    }
    (hits, total)
}
