//! IBM Model 1 lexical translation probabilities trained by EM.

use std::collections::HashMap;

use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};

use super::Interner;

/// Conditioning id reserved for the empty (NULL) source word.
pub const NULL: u32 = u32::MAX;

/// Directional table `t(target | source)`, source NULL included.
#[derive(Debug, Clone)]
pub struct Ibm1 {
    pub source: Interner,
    pub target: Interner,
    t: HashMap<(u32, u32), f64>,
    /// Corpus log-likelihood before each EM update and after the last one.
    pub log_likelihood: Vec<f64>,
}

impl Ibm1 {
    /// `t(tgt | src)`; `src = None` is the NULL word.
    pub fn prob(&self, src: Option<&str>, tgt: &str) -> f64 {
        let s = match src {
            Some(w) => match self.source.get(w) {
                Some(id) => id,
                None => return 0.0,
            },
            None => NULL,
        };
        self.target
            .get(tgt)
            .and_then(|t| self.t.get(&(s, t)))
            .copied()
            .unwrap_or(0.0)
    }

    pub(crate) fn prob_ids(&self, src: u32, tgt: u32) -> f64 {
        self.t.get(&(src, tgt)).copied().unwrap_or(0.0)
    }

    /// Entries `(src, tgt, t)` excluding the NULL row.
    pub(crate) fn entries(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.t
            .iter()
            .filter(|((s, _), _)| *s != NULL)
            .map(|(&(s, t), &p)| (s, t, p))
    }

    /// Best source position for each target word; `None` means NULL.
    /// Ties keep the earliest candidate, NULL first.
    pub(crate) fn viterbi(&self, src: &[u32], tgt: &[u32]) -> Vec<Option<usize>> {
        tgt.iter()
            .map(|&y| {
                let mut best = (self.prob_ids(NULL, y), None);
                for (i, &x) in src.iter().enumerate() {
                    let p = self.prob_ids(x, y);
                    if p > best.0 {
                        best = (p, Some(i));
                    }
                }
                best.1
            })
            .collect()
    }
}

fn log_likelihood(t: &HashMap<(u32, u32), f64>, data: &[(Vec<u32>, Vec<u32>)]) -> f64 {
    let mut ll = 0.0;
    for (src, tgt) in data {
        let norm = (src.len() + 1) as f64;
        for &y in tgt {
            let z: f64 = std::iter::once(NULL)
                .chain(src.iter().copied())
                .map(|x| t[&(x, y)])
                .sum();
            ll += (z / norm).ln();
        }
    }
    ll
}

/// Runs `iters` EM iterations from a uniform start.
pub fn train_ibm1(corpus: &ParallelCorpus, iters: usize) -> Result<Ibm1> {
    if iters == 0 {
        return Err(Error::Invalid("IBM1 needs at least one iteration".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Empty("IBM1 training corpus"));
    }
    let mut source = Interner::default();
    let mut target = Interner::default();
    let data: Vec<(Vec<u32>, Vec<u32>)> = corpus
        .pairs()
        .iter()
        .map(|p| {
            (
                p.source.iter().map(|w| source.intern(w)).collect(),
                p.target.iter().map(|w| target.intern(w)).collect(),
            )
        })
        .collect();

    let uniform = 1.0 / target.len() as f64;
    let mut t: HashMap<(u32, u32), f64> = HashMap::new();
    for (src, tgt) in &data {
        for &y in tgt {
            for x in std::iter::once(NULL).chain(src.iter().copied()) {
                t.insert((x, y), uniform);
            }
        }
    }

    let mut lls = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let mut counts: HashMap<(u32, u32), f64> = HashMap::with_capacity(t.len());
        let mut totals: HashMap<u32, f64> = HashMap::new();
        let mut ll = 0.0;
        for (src, tgt) in &data {
            let norm = (src.len() + 1) as f64;
            for &y in tgt {
                let z: f64 = std::iter::once(NULL)
                    .chain(src.iter().copied())
                    .map(|x| t[&(x, y)])
                    .sum();
                ll += (z / norm).ln();
                for x in std::iter::once(NULL).chain(src.iter().copied()) {
                    let delta = t[&(x, y)] / z;
                    *counts.entry((x, y)).or_insert(0.0) += delta;
                    *totals.entry(x).or_insert(0.0) += delta;
                }
            }
        }
        lls.push(ll);
        for (k, v) in t.iter_mut() {
            *v = counts[k] / totals[&k.0];
        }
    }
    lls.push(log_likelihood(&t, &data));
    Ok(Ibm1 {
        source,
        target,
        t,
        log_likelihood: lls,
    })
}
