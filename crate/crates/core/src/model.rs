//! The hybrid translation model: encoder-decoder parameters, the optional
//! advisor networks, vocabularies, and the teacher-forced forward pass.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::advisor::{fused_prob, Advisor, AdvisorConfig, StepVocab};
use crate::checkpoint::Checkpoint;
use crate::corpus::{Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nmt::{DecoderStep, Nmt, NmtConfig};
use crate::params::ParamStore;
use crate::rng::{seeded, Prng};
use crate::scalar::Scalar;
use crate::smt::{update_coverage, CoverageVector, LmChoice, Recommendation, SmtModel};
use crate::tensor::Tensor;

/// How the fusion weight is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateMode {
    Learned,
    /// Pins the gate to a constant in `[0, 1]`.
    Fixed(f64),
}

/// Replaces SMT recommendations with random frequent target words.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoRecs {
    pub pool: Vec<String>,
    pub per_step: usize,
}

impl PseudoRecs {
    /// Pool of the `pool_size` most frequent non-stop target words.
    pub fn from_smt(smt: &SmtModel, pool_size: usize) -> Self {
        PseudoRecs {
            pool: smt
                .lm(LmChoice::Original)
                .frequent_words(pool_size, |w| smt.is_stop(w)),
            per_step: smt.config.n_rec,
        }
    }

    /// Draws distinct words from the pool, each tied to a random uncovered
    /// position. Empty when every position is covered.
    pub fn sample(&self, cv: &CoverageVector, rng: &mut Prng) -> Vec<Recommendation> {
        let open: Vec<usize> = (0..cv.len()).filter(|&j| !cv.is_covered(j)).collect();
        if open.is_empty() || self.pool.is_empty() {
            return Vec::new();
        }
        let n = self.per_step.min(self.pool.len());
        self.pool
            .choose_multiple(rng, n)
            .map(|w| Recommendation {
                word: w.clone(),
                src_pos: open[rng.random_range(0..open.len())],
                features: [0.0; crate::smt::NUM_FEATURES],
                score: 0.0,
            })
            .collect()
    }
}

/// Source of per-step recommendations and the gate used with them.
#[derive(Debug, Clone, Copy)]
pub struct Fusion<'a> {
    pub smt: &'a SmtModel,
    pub gate: GateMode,
    pub pseudo: Option<&'a PseudoRecs>,
}

impl<'a> Fusion<'a> {
    pub fn learned(smt: &'a SmtModel) -> Self {
        Fusion {
            smt,
            gate: GateMode::Learned,
            pseudo: None,
        }
    }

    /// Recommendations for the next target word.
    pub fn recommend(
        &self,
        src: &[String],
        prefix: &[String],
        alpha_prev: Option<&[f64]>,
        cv: &CoverageVector,
        rng: &mut Prng,
    ) -> Result<Vec<Recommendation>> {
        match self.pseudo {
            Some(p) => Ok(p.sample(cv, rng)),
            None => self
                .smt
                .recommend(src, prefix, alpha_prev, cv, LmChoice::UnkMapped),
        }
    }
}

/// Candidate distribution and gate of one fused step.
#[derive(Debug, Clone)]
pub struct Advice {
    pub vocab: StepVocab,
    /// `1 x K`.
    pub p_smt: NodeId,
    /// `1 x 1`.
    pub gate: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub nmt: NmtConfig,
    pub advisor: AdvisorConfig,
}

impl ModelConfig {
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let n = &self.nmt;
        let a = &self.advisor;
        [
            ("src_vocab", n.src_vocab.to_string()),
            ("tgt_vocab", n.tgt_vocab.to_string()),
            ("emb", n.emb.to_string()),
            ("hidden", n.hidden.to_string()),
            ("att", n.att.to_string()),
            ("out_hidden", n.out_hidden.to_string()),
            ("init_scale", n.init_scale.to_string()),
            ("dropout", n.dropout.to_string()),
            ("cls_hidden1", a.hidden1.to_string()),
            ("cls_hidden2", a.hidden2.to_string()),
            ("cls_init_scale", a.init_scale.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("model.{k}"), v))
        .collect()
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        fn get<V: std::str::FromStr>(map: &BTreeMap<String, String>, k: &str) -> Result<V> {
            map.get(&format!("model.{k}"))
                .ok_or_else(|| Error::Format(format!("checkpoint config lacks model.{k}")))?
                .parse()
                .map_err(|_| Error::Format(format!("bad model.{k}")))
        }
        Ok(ModelConfig {
            nmt: NmtConfig {
                src_vocab: get(map, "src_vocab")?,
                tgt_vocab: get(map, "tgt_vocab")?,
                emb: get(map, "emb")?,
                hidden: get(map, "hidden")?,
                att: get(map, "att")?,
                out_hidden: get(map, "out_hidden")?,
                init_scale: get(map, "init_scale")?,
                dropout: get(map, "dropout")?,
            },
            advisor: AdvisorConfig {
                hidden1: get(map, "cls_hidden1")?,
                hidden2: get(map, "cls_hidden2")?,
                init_scale: get(map, "cls_init_scale")?,
            },
        })
    }
}

#[derive(Debug, Clone)]
pub struct HybridModel<T> {
    pub store: ParamStore<T>,
    pub nmt: Nmt,
    /// `None` for a pure encoder-decoder (pre-training phase).
    pub advisor: Option<Advisor>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub config: ModelConfig,
    pub seed: u64,
}

impl<T: Scalar> HybridModel<T> {
    /// Fresh encoder-decoder sized to the vocabularies.
    pub fn new_nmt(
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
        mut config: ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        config.nmt.src_vocab = src_vocab.len();
        config.nmt.tgt_vocab = tgt_vocab.len();
        let mut store = ParamStore::new();
        let nmt = Nmt::register(&mut store, &config.nmt, &mut seeded(seed))?;
        Ok(HybridModel {
            store,
            nmt,
            advisor: None,
            src_vocab,
            tgt_vocab,
            config,
            seed,
        })
    }

    /// Adds randomly initialized classifier and gate parameters.
    pub fn attach_advisor(&mut self, seed: u64) -> Result<()> {
        if self.advisor.is_some() {
            return Err(Error::Invalid("model already has an advisor".into()));
        }
        let mut rng = seeded(seed);
        self.advisor = Some(Advisor::register(
            &mut self.store,
            &self.nmt,
            &self.config.advisor,
            &mut rng,
        )?);
        self.seed = seed;
        Ok(())
    }

    pub fn is_hybrid(&self) -> bool {
        self.advisor.is_some()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_store(&self.store, self.seed);
        ck.config = self.config.to_map();
        ck.config.insert(
            "phase".into(),
            if self.is_hybrid() { "hybrid" } else { "nmt" }.into(),
        );
        ck.blobs
            .insert("src_vocab".into(), self.src_vocab.to_text());
        ck.blobs
            .insert("tgt_vocab".into(), self.tgt_vocab.to_text());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_map(&ck.config)?;
        let blob = |k: &str| {
            ck.blobs
                .get(k)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {k}")))
        };
        let src_vocab = Vocabulary::from_text(blob("src_vocab")?)?;
        let tgt_vocab = Vocabulary::from_text(blob("tgt_vocab")?)?;
        if src_vocab.len() != config.nmt.src_vocab || tgt_vocab.len() != config.nmt.tgt_vocab {
            return Err(Error::Format(
                "vocabulary size disagrees with model config".into(),
            ));
        }
        let store = ck.to_store()?;
        let nmt = Nmt::lookup(&store, &config.nmt)?;
        let advisor = match ck.config.get("phase").map(String::as_str) {
            Some("hybrid") => Some(Advisor::lookup(&store, &config.advisor)?),
            Some("nmt") => None,
            other => return Err(Error::Format(format!("unknown model phase {other:?}"))),
        };
        Ok(HybridModel {
            store,
            nmt,
            advisor,
            src_vocab,
            tgt_vocab,
            config,
            seed: ck.seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Classifier distribution and gate for a decoder step, or `None` when
    /// there is nothing to fuse (no recommendations, or no advisor and a
    /// learned gate).
    pub fn advise(
        &self,
        g: &mut Graph<T>,
        step: &DecoderStep,
        recs: &[Recommendation],
        gate: GateMode,
    ) -> Result<Option<Advice>> {
        self.advise_with(g, &self.store, step, recs, gate)
    }

    /// `advise` reading parameters from `store` instead of `self.store`.
    pub fn advise_with(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        step: &DecoderStep,
        recs: &[Recommendation],
        gate: GateMode,
    ) -> Result<Option<Advice>> {
        let vocab = StepVocab::new(recs, &self.tgt_vocab);
        if vocab.is_empty() {
            return Ok(None);
        }
        let adv = match &self.advisor {
            Some(a) => a,
            None => return Ok(None),
        };
        let p_smt = adv.score_recs(g, store, &self.nmt, step.query, &vocab)?;
        let gate = match gate {
            GateMode::Learned => adv.gate(g, store, step.query)?,
            GateMode::Fixed(v) => {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!(
                        "fixed gate must be in [0,1], got {v}"
                    )));
                }
                g.constant(Tensor::scalar(T::of(v)))
            }
        };
        Ok(Some(Advice { vocab, p_smt, gate }))
    }

    /// Teacher-forced negative log-likelihood of one sentence pair as a
    /// `1 x 1` node. With `fusion`, each step's probability is the fused
    /// one and the coverage vector follows the gold tokens.
    pub fn sentence_nll(
        &self,
        g: &mut Graph<T>,
        src: &[String],
        tgt: &[String],
        fusion: Option<Fusion<'_>>,
        rng: &mut Prng,
        dropout: bool,
    ) -> Result<NodeId> {
        self.sentence_nll_with(g, &self.store, src, tgt, fusion, rng, dropout)
    }

    /// `sentence_nll` over the parameters in `store`, which must have the
    /// layout of `self.store` (used for finite-difference checks).
    #[allow(clippy::too_many_arguments)]
    pub fn sentence_nll_with(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        src: &[String],
        tgt: &[String],
        fusion: Option<Fusion<'_>>,
        rng: &mut Prng,
        dropout: bool,
    ) -> Result<NodeId> {
        let src_ids = self.src_vocab.encode_all(src);
        let mut tgt_ids = vec![BOS];
        tgt_ids.extend(self.tgt_vocab.encode_all(tgt));
        tgt_ids.push(EOS);

        let enc = self.nmt.encode(g, store, &src_ids)?;
        let mut s = self.nmt.init_state(g, store, &enc)?;
        let mut c = self.nmt.init_context(g)?;
        let mut cv = CoverageVector::new(src.len());
        let mut alpha_prev: Option<Vec<f64>> = None;
        let mut gold_probs = Vec::with_capacity(tgt_ids.len() - 1);
        for t in 0..tgt_ids.len() - 1 {
            let (y_prev, gold) = (tgt_ids[t], tgt_ids[t + 1]);
            let step = self.nmt.decode_step(
                g,
                store,
                &enc,
                s,
                c,
                y_prev,
                None,
                if dropout { Some(&mut *rng) } else { None },
            )?;
            let p = match &fusion {
                Some(f) => {
                    let recs = f.recommend(src, &tgt[..t], alpha_prev.as_deref(), &cv, rng)?;
                    let p = match self.advise_with(g, store, &step, &recs, f.gate)? {
                        Some(a) => fused_prob(g, step.probs, a.p_smt, &a.vocab.ids, a.gate, gold)?,
                        None => g.cols(step.probs, &[gold])?,
                    };
                    cv = update_coverage(&cv, self.tgt_vocab.decode(gold), &recs);
                    alpha_prev = Some(
                        g.values(step.attention)
                            .iter()
                            .map(|v| v.as_f64())
                            .collect(),
                    );
                    p
                }
                None => g.cols(step.probs, &[gold])?,
            };
            gold_probs.push(p);
            s = step.state;
            c = step.context;
        }
        let all = g.concat_cols(&gold_probs)?;
        let logs = g.ln(all)?;
        let total = g.sum(logs)?;
        g.scale(total, -T::one())
    }
}
