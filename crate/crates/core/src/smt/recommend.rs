//! Per-step word recommendations from uncovered source positions.

use std::cmp::Ordering;

use crate::corpus::UNK_TOKEN;
use crate::error::{Error, Result};

use super::{LmChoice, SmtModel};

/// Which source positions the advisor considers translated. Bits only go
/// from 0 to 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CoverageVector {
    bits: Vec<bool>,
}

impl CoverageVector {
    pub fn new(len: usize) -> Self {
        CoverageVector {
            bits: vec![false; len],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_covered(&self, pos: usize) -> bool {
        self.bits[pos]
    }

    pub fn cover(&mut self, pos: usize) {
        self.bits[pos] = true;
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn all_covered(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }
}

/// Feature order: forward translation, backward translation, forward
/// lexical, backward lexical, language model, reordering.
pub const NUM_FEATURES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub word: String,
    /// 0-based source index this word translates.
    pub src_pos: usize,
    pub features: [f64; NUM_FEATURES],
    pub score: f64,
}

/// Distance reordering cost between consecutive aligned source positions.
pub fn reorder_cost_hard(sp_t: usize, sp_prev: usize) -> f64 {
    -(sp_t as f64 - sp_prev as f64 - 1.0).abs()
}

/// Reordering cost against the previous step's attention: positions are
/// 1-based, `alpha_prev[j - 1]` weights source position `j`.
pub fn reorder_cost_soft(sp_t: usize, alpha_prev: &[f64]) -> Result<f64> {
    let total: f64 = alpha_prev.iter().sum();
    if (total - 1.0).abs() > 1e-6 || alpha_prev.iter().any(|a| *a < 0.0) {
        return Err(Error::Invalid(format!(
            "attention weights must form a distribution (sum {total})"
        )));
    }
    Ok(-alpha_prev
        .iter()
        .enumerate()
        .map(|(i, a)| a * (sp_t as f64 - (i + 1) as f64 - 1.0).abs())
        .sum::<f64>())
}

/// Ordering used for top-N selection: score descending, then source
/// position ascending, then word.
pub fn rank_order(a: &Recommendation, b: &Recommendation) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.src_pos.cmp(&b.src_pos))
        .then_with(|| a.word.cmp(&b.word))
}

impl SmtModel {
    /// Scores every candidate translation of every uncovered source word
    /// (stop words removed) and returns the best `n_rec`.
    ///
    /// `alpha_prev` is the attention of the previous decoder step; with
    /// `None` (first step) the reordering feature is 0.
    pub fn recommend(
        &self,
        src: &[String],
        prefix: &[String],
        alpha_prev: Option<&[f64]>,
        cv: &CoverageVector,
        lm: LmChoice,
    ) -> Result<Vec<Recommendation>> {
        if cv.len() != src.len() {
            return Err(Error::shape(
                "recommend(coverage)",
                &[cv.len()],
                &[src.len()],
            ));
        }
        if let Some(a) = alpha_prev {
            if a.len() != src.len() {
                return Err(Error::shape(
                    "recommend(attention)",
                    &[a.len()],
                    &[src.len()],
                ));
            }
        }
        let model = self.lm(lm);
        let ctx = model.context(prefix);
        let w = self.config.weights.as_array();
        let mut scored: Vec<(f64, usize, u32, [f64; NUM_FEATURES])> = Vec::new();
        for (pos, word) in src.iter().enumerate() {
            if cv.is_covered(pos) {
                continue;
            }
            let Some(sid) = self.source.get(word) else {
                continue;
            };
            let reorder = match alpha_prev {
                Some(a) => reorder_cost_soft(pos + 1, a)?,
                None => 0.0,
            };
            for cand in &self.candidates[sid as usize] {
                if self.is_stop_id(cand.target) {
                    continue;
                }
                let lm_id = self.lm_id(lm, cand.target);
                let h = [
                    cand.log_probs[0],
                    cand.log_probs[1],
                    cand.log_probs[2],
                    cand.log_probs[3],
                    model.logprob_ids(&ctx, lm_id),
                    reorder,
                ];
                let score = h.iter().zip(&w).map(|(a, b)| a * b).sum();
                scored.push((score, pos, cand.target, h));
            }
        }
        let mut recs: Vec<Recommendation> = scored
            .into_iter()
            .map(|(score, src_pos, t, features)| Recommendation {
                word: self.target.word(t).to_string(),
                src_pos,
                features,
                score,
            })
            .collect();
        recs.sort_by(rank_order);
        recs.truncate(self.config.n_rec);
        Ok(recs)
    }
}

/// Marks the source position of the best recommendation matching the
/// emitted word. `emitted` is the word as the neural model sees it, so an
/// out-of-vocabulary emission arrives as `<unk>` and changes nothing.
pub fn update_coverage(
    cv: &CoverageVector,
    emitted: &str,
    recs: &[Recommendation],
) -> CoverageVector {
    let mut next = cv.clone();
    if emitted == UNK_TOKEN {
        return next;
    }
    if let Some(best) = recs
        .iter()
        .filter(|r| r.word == emitted)
        .min_by(|a, b| rank_order(a, b))
    {
        next.cover(best.src_pos);
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(word: &str, pos: usize, score: f64) -> Recommendation {
        Recommendation {
            word: word.into(),
            src_pos: pos,
            features: [0.0; NUM_FEATURES],
            score,
        }
    }

    #[test]
    fn hard_cost_examples() {
        assert_eq!(reorder_cost_hard(4, 3), 0.0);
        assert_eq!(reorder_cost_hard(2, 5), -4.0);
        assert_eq!(reorder_cost_hard(7, 3), -3.0);
    }

    #[test]
    fn soft_cost_examples() {
        let mut onehot = vec![0.0; 5];
        onehot[2] = 1.0; // position 3
        assert_eq!(reorder_cost_soft(4, &onehot).unwrap(), 0.0);
        assert_eq!(reorder_cost_soft(3, &[0.5, 0.5]).unwrap(), -0.5);
        assert!(reorder_cost_soft(3, &[0.5, 0.6]).is_err());
    }

    proptest! {
        #[test]
        fn soft_equals_hard_on_one_hot(len in 1usize..30, prev in 0usize..30, sp in 1usize..31) {
            prop_assume!(prev < len);
            let mut a = vec![0.0; len];
            a[prev] = 1.0;
            prop_assert_eq!(reorder_cost_soft(sp, &a).unwrap(), reorder_cost_hard(sp, prev + 1));
        }

        #[test]
        fn soft_cost_is_bounded(raw in proptest::collection::vec(0.01f64..1.0, 1..20), sp_seed in any::<usize>()) {
            let total: f64 = raw.iter().sum();
            let a: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let sp = sp_seed % a.len() + 1;
            let d = reorder_cost_soft(sp, &a).unwrap();
            prop_assert!(d <= 0.0 && d >= -(a.len() as f64));
        }
    }

    #[test]
    fn coverage_updates() {
        let cv = CoverageVector::new(5);
        let recs = vec![rec("x", 3, -1.0), rec("y", 1, -2.0), rec("x", 0, -3.0)];
        assert_eq!(update_coverage(&cv, "z", &recs), cv);
        let after = update_coverage(&cv, "x", &recs);
        assert_eq!(after.bits(), &[false, false, false, true, false]);
        assert_eq!(
            update_coverage(&cv, UNK_TOKEN, &[rec(UNK_TOKEN, 2, 0.0)]),
            cv
        );
    }

    #[test]
    fn ranking_tie_break() {
        let mut v = vec![
            rec("b", 2, -1.0),
            rec("a", 2, -1.0),
            rec("c", 1, -1.0),
            rec("d", 5, 0.0),
        ];
        v.sort_by(rank_order);
        let words: Vec<&str> = v.iter().map(|r| r.word.as_str()).collect();
        assert_eq!(words, ["d", "c", "a", "b"]);
    }
}
