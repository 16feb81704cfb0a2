//! Bidirectional word translation and lexical tables.

use std::collections::{BTreeMap, HashMap};

use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};

use super::ibm1::{train_ibm1, Ibm1};
use super::Interner;

/// Four sparse conditional tables, all keyed by `(source id, target id)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LexTables {
    /// `p(tgt | src)` from intersected Viterbi alignments.
    pub p_fwd: HashMap<(u32, u32), f64>,
    /// `p(src | tgt)` from intersected Viterbi alignments.
    pub p_bwd: HashMap<(u32, u32), f64>,
    /// IBM1 `t(tgt | src)`.
    pub lex_fwd: HashMap<(u32, u32), f64>,
    /// IBM1 `t(src | tgt)`.
    pub lex_bwd: HashMap<(u32, u32), f64>,
}

impl LexTables {
    /// `[p_fwd, p_bwd, lex_fwd, lex_bwd]`, zero where absent.
    pub fn probs(&self, src: u32, tgt: u32) -> [f64; 4] {
        let k = (src, tgt);
        [&self.p_fwd, &self.p_bwd, &self.lex_fwd, &self.lex_bwd]
            .map(|t| t.get(&k).copied().unwrap_or(0.0))
    }

    /// Largest deviation from 1 over every conditional distribution.
    pub fn max_normalization_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (table, by_src) in [
            (&self.p_fwd, true),
            (&self.p_bwd, false),
            (&self.lex_fwd, true),
            (&self.lex_bwd, false),
        ] {
            let mut sums: HashMap<u32, f64> = HashMap::new();
            for (&(s, t), &p) in table {
                *sums.entry(if by_src { s } else { t }).or_insert(0.0) += p;
            }
            for v in sums.values() {
                worst = worst.max((v - 1.0).abs());
            }
        }
        worst
    }

    fn keys(&self) -> Vec<(u32, u32)> {
        let mut keys: Vec<(u32, u32)> = self
            .p_fwd
            .keys()
            .chain(self.p_bwd.keys())
            .chain(self.lex_fwd.keys())
            .chain(self.lex_bwd.keys())
            .copied()
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys
    }

    /// `src\ttgt\tp_fwd\tp_bwd\tlex_fwd\tlex_bwd` lines sorted by word pair.
    pub fn to_text(&self, source: &Interner, target: &Interner) -> String {
        let mut rows: BTreeMap<(&str, &str), [f64; 4]> = BTreeMap::new();
        for (s, t) in self.keys() {
            rows.insert((source.word(s), target.word(t)), self.probs(s, t));
        }
        let mut out = String::new();
        for ((s, t), p) in rows {
            out.push_str(&format!(
                "{s}\t{t}\t{}\t{}\t{}\t{}\n",
                p[0], p[1], p[2], p[3]
            ));
        }
        out
    }

    /// Parses [`LexTables::to_text`] output, interning words as they appear.
    pub fn from_text(text: &str, source: &mut Interner, target: &mut Interner) -> Result<Self> {
        let mut tables = LexTables::default();
        for (n, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(Error::Format(format!(
                    "table line {}: expected 6 columns",
                    n + 1
                )));
            }
            let key = (source.intern(cols[0]), target.intern(cols[1]));
            let slots = [
                &mut tables.p_fwd,
                &mut tables.p_bwd,
                &mut tables.lex_fwd,
                &mut tables.lex_bwd,
            ];
            for (slot, raw) in slots.into_iter().zip(&cols[2..]) {
                let v: f64 = raw.parse().map_err(|_| {
                    Error::Format(format!("table line {}: bad number {raw}", n + 1))
                })?;
                if v > 0.0 {
                    slot.insert(key, v);
                }
            }
        }
        Ok(tables)
    }
}

/// Trains both IBM1 directions and derives the four tables over the ids of
/// `source` / `target`.
pub fn build_lex_tables(
    corpus: &ParallelCorpus,
    iters: usize,
    source: &mut Interner,
    target: &mut Interner,
) -> Result<LexTables> {
    let fwd = train_ibm1(corpus, iters)?;
    let bwd = train_ibm1(&corpus.swapped(), iters)?;
    Ok(tables_from_models(corpus, &fwd, &bwd, source, target))
}

fn tables_from_models(
    corpus: &ParallelCorpus,
    fwd: &Ibm1,
    bwd: &Ibm1,
    source: &mut Interner,
    target: &mut Interner,
) -> LexTables {
    let mut tables = LexTables::default();
    for (s, t, p) in fwd.entries() {
        let key = (
            source.intern(fwd.source.word(s)),
            target.intern(fwd.target.word(t)),
        );
        tables.lex_fwd.insert(key, p);
    }
    for (t, s, p) in bwd.entries() {
        let key = (
            source.intern(bwd.target.word(s)),
            target.intern(bwd.source.word(t)),
        );
        tables.lex_bwd.insert(key, p);
    }

    let mut counts: HashMap<(u32, u32), f64> = HashMap::new();
    for pair in corpus.pairs() {
        let f_src: Vec<u32> = pair
            .source
            .iter()
            .map(|w| fwd.source.get(w).expect("seen"))
            .collect();
        let f_tgt: Vec<u32> = pair
            .target
            .iter()
            .map(|w| fwd.target.get(w).expect("seen"))
            .collect();
        // In the backward model the roles swap: target words condition.
        let b_src: Vec<u32> = pair
            .target
            .iter()
            .map(|w| bwd.source.get(w).expect("seen"))
            .collect();
        let b_tgt: Vec<u32> = pair
            .source
            .iter()
            .map(|w| bwd.target.get(w).expect("seen"))
            .collect();
        let tgt_to_src = fwd.viterbi(&f_src, &f_tgt);
        let src_to_tgt = bwd.viterbi(&b_src, &b_tgt);
        for (j, a) in tgt_to_src.iter().enumerate() {
            if let Some(i) = *a {
                if src_to_tgt[i] == Some(j) {
                    let key = (
                        source.intern(&pair.source[i]),
                        target.intern(&pair.target[j]),
                    );
                    *counts.entry(key).or_insert(0.0) += 1.0;
                }
            }
        }
    }
    let mut by_src: HashMap<u32, f64> = HashMap::new();
    let mut by_tgt: HashMap<u32, f64> = HashMap::new();
    for (&(s, t), &c) in &counts {
        *by_src.entry(s).or_insert(0.0) += c;
        *by_tgt.entry(t).or_insert(0.0) += c;
    }
    for (&(s, t), &c) in &counts {
        tables.p_fwd.insert((s, t), c / by_src[&s]);
        tables.p_bwd.insert((s, t), c / by_tgt[&t]);
    }
    tables
}
