//! Shared end-to-end setup: synthetic data, pre-trained encoder-decoder,
//! SMT model and hybrid.

#![allow(dead_code)]

use hybrid_mt::corpus::{
    gen_synthetic, ParallelCorpus, SyntheticData, SyntheticSpec, SyntheticTask, Vocabulary,
};
use hybrid_mt::error::Result;
use hybrid_mt::model::ModelConfig;
use hybrid_mt::nmt::NmtConfig;
use hybrid_mt::smt::{SmtConfig, SmtModel, StopList};
use hybrid_mt::training::{pretrain, train_hybrid, Phase, TrainConfig, TrainReport};
use hybrid_mt::HybridModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cap {
    /// Common types only: rare words become `<unk>`.
    CommonOnly,
    AllTypes,
}

#[derive(Debug, Clone)]
pub struct Recipe {
    pub task: SyntheticTask,
    pub pairs: usize,
    pub dev_pairs: usize,
    pub types: Option<usize>,
    pub src_cap: Cap,
    pub tgt_cap: Cap,
    pub emb: usize,
    pub hidden: usize,
    pub pre_epochs: usize,
    pub hybrid_epochs: usize,
    pub seed: u64,
}

impl Recipe {
    pub fn new(task: SyntheticTask, pairs: usize, seed: u64) -> Self {
        Recipe {
            task,
            pairs,
            dev_pairs: 200,
            types: None,
            src_cap: Cap::CommonOnly,
            tgt_cap: Cap::CommonOnly,
            emb: 16,
            hidden: 16,
            pre_epochs: 10,
            hybrid_epochs: 5,
            seed,
        }
    }

    pub fn spec(&self) -> SyntheticSpec {
        let mut spec = SyntheticSpec::new(self.task, self.pairs + self.dev_pairs, self.seed);
        if let Some(t) = self.types {
            spec.types = t;
        }
        spec
    }
}

pub struct Pipeline {
    pub data: SyntheticData,
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    pub nmt: HybridModel,
    pub nmt_report: TrainReport,
    pub smt: SmtModel,
    /// Present when the recipe asks for hybrid epochs.
    pub hybrid: Option<(HybridModel, TrainReport)>,
}

impl Pipeline {
    pub fn sources(&self) -> Vec<Vec<String>> {
        self.dev.sources().cloned().collect()
    }

    pub fn references(&self) -> Vec<Vec<String>> {
        self.dev.targets().cloned().collect()
    }

    pub fn hybrid(&self) -> &HybridModel {
        &self.hybrid.as_ref().expect("recipe trained a hybrid").0
    }
}

fn cap(spec: &SyntheticSpec, c: Cap) -> usize {
    match c {
        Cap::CommonOnly => spec.vocab_cap(),
        Cap::AllTypes => spec.types + 3,
    }
}

pub fn pretrain_only(r: &Recipe) -> Result<Pipeline> {
    build(r, false)
}

pub fn run(r: &Recipe) -> Result<Pipeline> {
    build(r, true)
}

fn build(r: &Recipe, hybrid: bool) -> Result<Pipeline> {
    let spec = r.spec();
    let data = gen_synthetic(&spec)?;
    let (train, dev) = data.corpus.split_at(r.pairs);
    let sv = Vocabulary::build(train.sources(), cap(&spec, r.src_cap))?;
    let tv = Vocabulary::build(train.targets(), cap(&spec, r.tgt_cap))?;
    let cfg = ModelConfig {
        nmt: NmtConfig::new(0, 0, r.emb, r.hidden),
        advisor: Default::default(),
    };
    let mut nmt = HybridModel::new_nmt(sv, tv.clone(), cfg, r.seed)?;
    let mut tc = TrainConfig {
        max_epochs: r.pre_epochs,
        seed: r.seed,
        ..TrainConfig::default()
    };
    let nmt_report = pretrain(&mut nmt, &train, &dev, &tc, |_| {})?;
    let smt = SmtModel::train(&train, &tv, StopList::english(), SmtConfig::default())?;
    let hybrid = if hybrid && r.hybrid_epochs > 0 {
        let mut h = nmt.clone();
        tc.phase = Phase::Hybrid;
        tc.max_epochs = r.hybrid_epochs;
        let rep = train_hybrid(&mut h, &smt, &train, &dev, &tc, |_| {})?;
        Some((h, rep))
    } else {
        None
    };
    Ok(Pipeline {
        data,
        train,
        dev,
        nmt,
        nmt_report,
        smt,
        hybrid,
    })
}
