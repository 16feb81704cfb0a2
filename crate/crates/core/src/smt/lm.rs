//! Interpolated (Jelinek-Mercer) n-gram language model.
//!
//! Sentences are left-padded with `<s>`; there is no end-of-sentence event.
//! The distribution is over every seen type plus `<unk>`, and the unigram
//! level mixes in a uniform floor so unseen words keep non-zero mass.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, BOS_TOKEN, UNK_TOKEN};
use crate::error::{Error, Result};

use super::Interner;

const UNK_ID: u32 = 0;
const BOS_ID: u32 = 1;

#[derive(Debug, Clone)]
pub struct NGramLm {
    order: usize,
    /// Highest order first.
    weights: Vec<f64>,
    floor: f64,
    words: Interner,
    /// Restricts the word set; anything outside maps to `<unk>`.
    restrict: Option<HashSet<String>>,
    /// `counts[k]` holds (k+1)-grams.
    counts: Vec<HashMap<Box<[u32]>, u32>>,
    /// `history[k]` holds counts of k-word histories followed by any word.
    history: Vec<HashMap<Box<[u32]>, u32>>,
    total: u64,
}

#[derive(Serialize, Deserialize)]
struct LmFile {
    order: usize,
    weights: Vec<f64>,
    floor: f64,
    words: Vec<String>,
    restrict: Option<Vec<String>>,
    ngrams: Vec<(Vec<u32>, u32)>,
}

impl NGramLm {
    /// Counts n-grams of `sentences`. With `vocab`, tokens outside it are
    /// replaced by `<unk>` before counting and at query time.
    pub fn train<'a, I>(
        sentences: I,
        order: usize,
        weights: &[f64],
        floor: f64,
        vocab: Option<&Vocabulary>,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Vec<String>>,
    {
        if order == 0 {
            return Err(Error::Invalid("language model order must be >= 1".into()));
        }
        if weights.len() != order
            || weights.iter().any(|w| !(*w >= 0.0))
            || weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Invalid(format!(
                "need {order} non-negative interpolation weights, got {weights:?}"
            )));
        }
        if !(0.0..1.0).contains(&floor) {
            return Err(Error::Invalid(format!(
                "floor must be in [0,1), got {floor}"
            )));
        }
        let mut lm = NGramLm {
            order,
            weights: weights.to_vec(),
            floor,
            words: Interner::with_reserved(&[UNK_TOKEN, BOS_TOKEN]),
            restrict: vocab.map(|v| v.tokens().iter().cloned().collect()),
            counts: vec![HashMap::new(); order],
            history: vec![HashMap::new(); order],
            total: 0,
        };
        let mut any = false;
        for sent in sentences {
            any = true;
            let ids: Vec<u32> = sent.iter().map(|w| lm.intern(w)).collect();
            lm.count_sentence(&ids);
        }
        if !any || lm.total == 0 {
            return Err(Error::Empty("language model training data"));
        }
        Ok(lm)
    }

    fn map<'w>(&self, w: &'w str) -> &'w str {
        match &self.restrict {
            Some(v) if !v.contains(w) => UNK_TOKEN,
            _ => w,
        }
    }

    fn intern(&mut self, w: &str) -> u32 {
        let w = self.map(w).to_string();
        if w == BOS_TOKEN {
            return UNK_ID;
        }
        self.words.intern(&w)
    }

    fn count_sentence(&mut self, ids: &[u32]) {
        let pad = self.order - 1;
        let mut seq = vec![BOS_ID; pad];
        seq.extend_from_slice(ids);
        for pos in pad..seq.len() {
            for k in 0..self.order {
                let gram: Box<[u32]> = seq[pos - k..=pos].into();
                let hist: Box<[u32]> = seq[pos - k..pos].into();
                *self.counts[k].entry(gram).or_insert(0) += 1;
                *self.history[k].entry(hist).or_insert(0) += 1;
            }
            self.total += 1;
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of predictable words (`<unk>` plus seen types).
    pub fn vocab_size(&self) -> usize {
        self.words.len() - 1
    }

    /// Predictable words, `<unk>` first.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        (0..self.words.len() as u32)
            .filter(|&i| i != BOS_ID)
            .map(|i| self.words.word(i))
    }

    /// Id used for queries; unseen or restricted-out words map to `<unk>`.
    pub fn id(&self, w: &str) -> u32 {
        if w == BOS_TOKEN {
            return BOS_ID;
        }
        self.words.get(self.map(w)).unwrap_or(UNK_ID)
    }

    /// Trailing `order - 1` ids of `prefix`, left-padded with `<s>`.
    pub fn context(&self, prefix: &[String]) -> Vec<u32> {
        let need = self.order - 1;
        let tail = &prefix[prefix.len().saturating_sub(need)..];
        let mut ctx = vec![BOS_ID; need - tail.len()];
        ctx.extend(tail.iter().map(|w| self.id(w)));
        ctx
    }

    /// `p(w | context)` where `context` has exactly `order - 1` ids.
    pub fn prob_ids(&self, context: &[u32], w: u32) -> f64 {
        debug_assert_eq!(context.len(), self.order - 1);
        let unigram = (1.0 - self.floor)
            * self.counts[0].get(&[w][..]).copied().unwrap_or(0) as f64
            / self.total as f64
            + self.floor / self.vocab_size() as f64;
        let mut mass = self.weights[self.order - 1] * unigram;
        let mut norm = self.weights[self.order - 1];
        let mut gram: Vec<u32> = Vec::with_capacity(self.order);
        for k in 1..self.order {
            let hist = &context[context.len() - k..];
            let Some(&h) = self.history[k].get(hist) else {
                break;
            };
            gram.clear();
            gram.extend_from_slice(hist);
            gram.push(w);
            let c = self.counts[k].get(gram.as_slice()).copied().unwrap_or(0);
            let lambda = self.weights[self.order - 1 - k];
            mass += lambda * c as f64 / h as f64;
            norm += lambda;
        }
        mass / norm
    }

    pub fn logprob_ids(&self, context: &[u32], w: u32) -> f64 {
        self.prob_ids(context, w).ln()
    }

    pub fn prob(&self, prefix: &[String], w: &str) -> f64 {
        self.prob_ids(&self.context(prefix), self.id(w))
    }

    /// Per-token perplexity over `sentences`.
    pub fn perplexity<'a, I>(&self, sentences: I) -> f64
    where
        I: IntoIterator<Item = &'a Vec<String>>,
    {
        let (mut nll, mut n) = (0.0, 0usize);
        for s in sentences {
            for i in 0..s.len() {
                nll -= self.prob(&s[..i], &s[i]).ln();
                n += 1;
            }
        }
        (nll / n.max(1) as f64).exp()
    }

    /// Up to `n` seen words by descending unigram count (ties by word),
    /// skipping `<unk>` and anything `exclude` rejects.
    pub fn frequent_words(&self, n: usize, exclude: impl Fn(&str) -> bool) -> Vec<String> {
        let mut words: Vec<(u32, &str)> = self.counts[0]
            .iter()
            .map(|(k, &c)| (c, self.words.word(k[0])))
            .filter(|&(_, w)| w != UNK_TOKEN && !exclude(w))
            .collect();
        words.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
        words
            .into_iter()
            .take(n)
            .map(|(_, w)| w.to_string())
            .collect()
    }

    pub fn to_text(&self) -> Result<String> {
        let mut ngrams: Vec<(Vec<u32>, u32)> = self
            .counts
            .iter()
            .flat_map(|m| m.iter().map(|(k, v)| (k.to_vec(), *v)))
            .collect();
        ngrams.sort();
        let mut restrict: Option<Vec<String>> =
            self.restrict.as_ref().map(|r| r.iter().cloned().collect());
        if let Some(r) = restrict.as_mut() {
            r.sort();
        }
        let file = LmFile {
            order: self.order,
            weights: self.weights.clone(),
            floor: self.floor,
            words: (0..self.words.len() as u32)
                .map(|i| self.words.word(i).to_string())
                .collect(),
            restrict,
            ngrams,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let file: LmFile = serde_json::from_str(text)?;
        if file.order == 0 || file.weights.len() != file.order {
            return Err(Error::Format("language model header".into()));
        }
        let mut words = Interner::default();
        for w in &file.words {
            words.intern(w);
        }
        let mut counts = vec![HashMap::new(); file.order];
        let mut history = vec![HashMap::new(); file.order];
        let mut total = 0u64;
        for (gram, c) in file.ngrams {
            let k = gram.len().checked_sub(1).filter(|&k| k < file.order);
            let Some(k) = k else {
                return Err(Error::Format("n-gram longer than model order".into()));
            };
            *history[k].entry(gram[..k].into()).or_insert(0) += c;
            if k == 0 {
                total += c as u64;
            }
            counts[k].insert(gram.into_boxed_slice(), c);
        }
        Ok(NGramLm {
            order: file.order,
            weights: file.weights,
            floor: file.floor,
            words,
            restrict: file.restrict.map(|r| r.into_iter().collect()),
            counts,
            history,
            total,
        })
    }
}
