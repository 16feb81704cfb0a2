//! Scoring of SMT recommendations, the fusion gate and the interpolation of
//! the two output distributions.

use std::collections::HashSet;

use crate::corpus::{Vocabulary, UNK};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nmt::Nmt;
use crate::params::{ParamId, ParamStore};
use crate::rng::Prng;
use crate::scalar::Scalar;
use crate::smt::Recommendation;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdvisorConfig {
    pub hidden1: usize,
    pub hidden2: usize,
    pub init_scale: f64,
}

impl Default for AdvisorConfig {
    fn default() -> Self {
        AdvisorConfig {
            hidden1: 32,
            hidden2: 16,
            init_scale: 0.1,
        }
    }
}

/// A two-hidden-layer tanh network. The first layer is split into a block
/// for the decoder query `[s_t ; emb(y_prev) ; c_t]` and, for the
/// classifier, a block for the candidate embedding.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub w1q: ParamId,
    pub w1c: Option<ParamId>,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
}

impl Mlp {
    fn names(prefix: &str) -> [String; 7] {
        ["w1q", "w1c", "b1", "w2", "b2", "w3", "b3"].map(|p| format!("{prefix}.{p}"))
    }

    fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        query: usize,
        cand: Option<usize>,
        cfg: &AdvisorConfig,
        rng: &mut Prng,
    ) -> Result<Self> {
        let n = Self::names(prefix);
        let s = cfg.init_scale;
        let (h1, h2) = (cfg.hidden1, cfg.hidden2);
        Ok(Mlp {
            w1q: store.uniform(&n[0], query, h1, s, rng)?,
            w1c: cand
                .map(|e| store.uniform(&n[1], e, h1, s, rng))
                .transpose()?,
            b1: store.zeros(&n[2], 1, h1)?,
            w2: store.uniform(&n[3], h1, h2, s, rng)?,
            b2: store.zeros(&n[4], 1, h2)?,
            w3: store.uniform(&n[5], h2, 1, s, rng)?,
            b3: store.zeros(&n[6], 1, 1)?,
        })
    }

    fn lookup<T: Scalar>(store: &ParamStore<T>, prefix: &str, with_cand: bool) -> Result<Self> {
        let n = Self::names(prefix);
        let get = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))
        };
        Ok(Mlp {
            w1q: get(&n[0])?,
            w1c: if with_cand { Some(get(&n[1])?) } else { None },
            b1: get(&n[2])?,
            w2: get(&n[3])?,
            b2: get(&n[4])?,
            w3: get(&n[5])?,
            b3: get(&n[6])?,
        })
    }

    /// Output column `k x 1` for `k` candidate rows (`k = 1` without a
    /// candidate block).
    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        query: NodeId,
        cand: Option<NodeId>,
    ) -> Result<NodeId> {
        let w1q = g.param(store, self.w1q);
        let b1 = g.param(store, self.b1);
        let shared = g.affine(query, w1q, Some(b1))?;
        let pre1 = match (cand, self.w1c) {
            (Some(c), Some(w1c)) => {
                let k = g.shape(c)[0];
                let w = g.param(store, w1c);
                let per = g.affine(c, w, None)?;
                let bcast = g.rows(shared, &vec![0; k])?;
                g.add(per, bcast)?
            }
            (None, None) => shared,
            _ => return Err(Error::Invalid("candidate block mismatch".into())),
        };
        let h1 = g.tanh(pre1)?;
        let w2 = g.param(store, self.w2);
        let b2 = g.param(store, self.b2);
        let pre2 = g.affine(h1, w2, Some(b2))?;
        let h2 = g.tanh(pre2)?;
        let w3 = g.param(store, self.w3);
        let b3 = g.param(store, self.b3);
        g.affine(h2, w3, Some(b3))
    }
}

/// Recommendation classifier and gate parameters.
#[derive(Debug, Clone)]
pub struct Advisor {
    pub config: AdvisorConfig,
    pub classifier: Mlp,
    pub gate: Mlp,
}

/// Distinct recommendation words of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepVocab {
    pub words: Vec<String>,
    /// Neural target ids; out-of-vocabulary words use `<unk>`.
    pub ids: Vec<usize>,
    pub src_pos: Vec<usize>,
    pub scores: Vec<f64>,
}

impl StepVocab {
    /// Keeps the first (best-ranked) occurrence of every word.
    pub fn new(recs: &[Recommendation], vocab: &Vocabulary) -> Self {
        let mut seen = HashSet::new();
        let mut sv = StepVocab {
            words: Vec::new(),
            ids: Vec::new(),
            src_pos: Vec::new(),
            scores: Vec::new(),
        };
        for r in recs {
            if seen.insert(r.word.as_str()) {
                sv.words.push(r.word.clone());
                sv.ids.push(vocab.encode(&r.word));
                sv.src_pos.push(r.src_pos);
                sv.scores.push(r.score);
            }
        }
        sv
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn is_oov(&self, k: usize) -> bool {
        self.ids[k] == UNK
    }
}

impl Advisor {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        nmt: &Nmt,
        config: &AdvisorConfig,
        rng: &mut Prng,
    ) -> Result<Self> {
        if config.hidden1 == 0 || config.hidden2 == 0 {
            return Err(Error::Config("advisor hidden sizes must be >= 1".into()));
        }
        let q = nmt.query_dim();
        Ok(Advisor {
            config: config.clone(),
            classifier: Mlp::register(store, "cls", q, Some(nmt.config.emb), config, rng)?,
            gate: Mlp::register(store, "gate", q, None, config, rng)?,
        })
    }

    pub fn lookup<T: Scalar>(store: &ParamStore<T>, config: &AdvisorConfig) -> Result<Self> {
        Ok(Advisor {
            config: config.clone(),
            classifier: Mlp::lookup(store, "cls", true)?,
            gate: Mlp::lookup(store, "gate", false)?,
        })
    }

    /// `1 x K` softmax over the step's candidates. Candidate embeddings come
    /// from the shared target embedding matrix.
    pub fn score_recs<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        nmt: &Nmt,
        query: NodeId,
        recs: &StepVocab,
    ) -> Result<NodeId> {
        if recs.is_empty() {
            return Err(Error::Empty("recommendation list"));
        }
        let cand = nmt.embed_target(g, store, &recs.ids)?;
        let scores = self.classifier.forward(g, store, query, Some(cand))?;
        let row = g.reshape(scores, 1, recs.len())?;
        g.softmax_rows(row)
    }

    /// `1 x 1` gate value in `(0, 1)`.
    pub fn gate<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        query: NodeId,
    ) -> Result<NodeId> {
        let logit = self.gate.forward(g, store, query, None)?;
        g.sigmoid(logit)
    }
}

/// `(1 − α) p_nmt + α p_smt`, with each candidate's mass added at its
/// neural id (out-of-vocabulary candidates all land on `<unk>`).
pub fn combine(p_nmt: &[f64], p_smt: &[f64], ids: &[usize], alpha: f64) -> Vec<f64> {
    let mut p: Vec<f64> = p_nmt.iter().map(|v| (1.0 - alpha) * v).collect();
    for (&q, &id) in p_smt.iter().zip(ids) {
        p[id] += alpha * q;
    }
    p
}

/// Fused probability of `target` as a `1 x 1` graph node:
/// `p_nmt[y] + α (p_smt[y] − p_nmt[y])`.
pub fn fused_prob<T: Scalar>(
    g: &mut Graph<T>,
    p_nmt: NodeId,
    p_smt: NodeId,
    ids: &[usize],
    alpha: NodeId,
    target: usize,
) -> Result<NodeId> {
    let pn = g.cols(p_nmt, &[target])?;
    let sel: Vec<T> = ids
        .iter()
        .map(|&i| if i == target { T::one() } else { T::zero() })
        .collect();
    let sel = g.constant(Tensor::matrix(ids.len(), 1, sel)?);
    let ps = g.affine(p_smt, sel, None)?;
    let diff = g.sub(ps, pn)?;
    let shift = g.mul(alpha, diff)?;
    g.add(pn, shift)
}
