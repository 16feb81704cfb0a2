//! Gradient-check suite: every differentiable op on random small shapes,
//! plus the complete hybrid loss at tiny dimensions.

use rand::Rng;
use serde::Serialize;

use crate::advisor::AdvisorConfig;
use crate::corpus::{gen_synthetic, SyntheticSpec, SyntheticTask, Vocabulary};
use crate::error::Result;
use crate::gradcheck::{
    analytic_gradients, compare_with_finite_differences, finite_diff_check, GradCheckReport,
};
use crate::graph::{Graph, NodeId};
use crate::model::{Fusion, HybridModel, ModelConfig};
use crate::nmt::NmtConfig;
use crate::params::{ParamId, ParamStore};
use crate::rng::{derived, seeded, Prng};
use crate::scalar::Scalar;
use crate::smt::{SmtConfig, SmtModel, StopList};
use crate::tensor::Tensor;
use crate::wide::DoubleDouble;

pub const STEP: f64 = 1e-5;
/// Step for checks evaluated in double-double, where a smaller step no
/// longer costs cancellation.
pub const WIDE_STEP: f64 = 1e-7;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

fn random(rng: &mut Prng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let v = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::matrix(rows, cols, v).expect("consistent shape")
}

/// Contracts `out` with fixed random weights so no coordinate cancels.
fn weighted_sum(g: &mut Graph<f64>, out: NodeId, rng: &mut Prng) -> Result<NodeId> {
    let shape = g.shape(out).to_vec();
    let w = g.constant(random(rng, shape[0], shape[1], -1.0, 1.0));
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

type OpFn = fn(&mut Graph<f64>, &[NodeId], &OpShape) -> Result<NodeId>;

#[derive(Debug, Clone)]
struct OpShape {
    rows: usize,
    cols: usize,
    inner: usize,
    idx: Vec<usize>,
    mask: Vec<bool>,
}

fn ops() -> Vec<(&'static str, usize, OpFn)> {
    vec![
        ("affine", 3, |g, p, _| g.affine(p[0], p[1], Some(p[2]))),
        ("affine_no_bias", 2, |g, p, _| g.affine(p[0], p[1], None)),
        ("sigmoid", 1, |g, p, _| g.sigmoid(p[0])),
        ("tanh", 1, |g, p, _| g.tanh(p[0])),
        ("ln", 1, |g, p, _| g.ln(p[0])),
        ("add", 2, |g, p, _| g.add(p[0], p[1])),
        ("sub", 2, |g, p, _| g.sub(p[0], p[1])),
        ("mul", 2, |g, p, _| g.mul(p[0], p[1])),
        ("scale", 1, |g, p, _| g.scale(p[0], -1.7)),
        ("softmax_rows", 1, |g, p, _| g.softmax_rows(p[0])),
        ("softmax_masked", 1, |g, p, s| {
            let row = g.rows(p[0], &[0])?;
            g.softmax_masked(row, Some(&s.mask))
        }),
        ("concat_cols", 2, |g, p, _| g.concat_cols(&[p[0], p[1]])),
        ("concat_rows", 2, |g, p, _| g.concat_rows(&[p[0], p[1]])),
        ("rows", 1, |g, p, s| g.rows(p[0], &s.idx)),
        ("cols", 1, |g, p, s| {
            let t = g.cols(p[0], &[s.cols - 1, 0])?;
            Ok(t)
        }),
        ("reshape", 1, |g, p, s| g.reshape(p[0], 1, s.rows * s.cols)),
        ("sum", 1, |g, p, _| g.sum(p[0])),
        ("reused_param", 1, |g, p, _| {
            let t = g.tanh(p[0])?;
            g.mul(t, p[0])
        }),
    ]
}

fn op_params(name: &str, arity: usize, s: &OpShape, rng: &mut Prng) -> Result<ParamStore<f64>> {
    let mut store = ParamStore::new();
    let shapes: Vec<(usize, usize)> = match name {
        "affine" => vec![(s.rows, s.inner), (s.inner, s.cols), (1, s.cols)],
        "affine_no_bias" => vec![(s.rows, s.inner), (s.inner, s.cols)],
        "concat_rows" => vec![(s.rows, s.cols), (s.inner, s.cols)],
        "concat_cols" => vec![(s.rows, s.cols), (s.rows, s.inner)],
        _ => vec![(s.rows, s.cols); arity],
    };
    let (lo, hi) = if name == "ln" {
        (0.5, 2.0)
    } else {
        (-1.5, 1.5)
    };
    for (i, (r, c)) in shapes.into_iter().enumerate() {
        store.insert(&format!("p{i}"), random(rng, r, c, lo, hi))?;
    }
    Ok(store)
}

/// Finite-difference check of every op for one seed.
pub fn op_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (k, (name, arity, op)) in ops().into_iter().enumerate() {
        let mut rng = derived(seed, k as u64);
        let rows = rng.random_range(1..4);
        let cols = rng.random_range(2..5);
        let mut mask: Vec<bool> = (0..cols).map(|_| rng.random_bool(0.7)).collect();
        mask[rng.random_range(0..cols)] = true;
        let shape = OpShape {
            rows,
            cols,
            inner: rng.random_range(1..4),
            idx: (0..rng.random_range(1..5))
                .map(|_| rng.random_range(0..rows))
                .collect(),
            mask,
        };
        let mut store = op_params(name, arity, &shape, &mut rng)?;
        let ids: Vec<ParamId> = store.ids().collect();
        let weight_seed: u64 = rng.random();
        let f = |s: &ParamStore<f64>, g: &mut Graph<f64>| {
            let p: Vec<NodeId> = ids.iter().map(|&id| g.param(s, id)).collect();
            let y = op(g, &p, &shape)?;
            weighted_sum(g, y, &mut seeded(weight_seed))
        };
        let report = finite_diff_check(&mut store, f, STEP, TOLERANCE)?;
        out.push(CheckResult {
            name: name.to_string(),
            seed,
            report,
        });
    }
    Ok(out)
}

/// Tiny hybrid model (embedding 4, state 6, sources of at most 5 words)
/// with its SMT side, for whole-model checks.
pub fn tiny_hybrid(
    seed: u64,
) -> Result<(HybridModel<f64>, SmtModel, Vec<(Vec<String>, Vec<String>)>)> {
    let spec = SyntheticSpec {
        types: 12,
        min_len: 2,
        max_len: 5,
        ..SyntheticSpec::new(SyntheticTask::LexiconRareSwap, 60, seed)
    };
    let data = gen_synthetic(&spec)?;
    let sv = Vocabulary::build(data.corpus.sources(), spec.vocab_cap())?;
    let tv = Vocabulary::build(data.corpus.targets(), spec.types + 3)?;
    let smt = SmtModel::train(&data.corpus, &tv, StopList::empty(), SmtConfig::default())?;
    let cfg = ModelConfig {
        nmt: NmtConfig {
            init_scale: 0.5,
            ..NmtConfig::new(0, 0, 4, 6)
        },
        advisor: AdvisorConfig {
            hidden1: 5,
            hidden2: 3,
            init_scale: 0.5,
        },
    };
    let mut m = HybridModel::new_nmt(sv, tv, cfg, seed.wrapping_mul(3) + 1)?;
    m.attach_advisor(seed.wrapping_mul(3) + 2)?;
    let pairs = data
        .corpus
        .pairs()
        .iter()
        .take(2)
        .map(|p| (p.source.clone(), p.target.clone()))
        .collect();
    Ok((m, smt, pairs))
}

fn summed_nll<T: Scalar>(
    model: &HybridModel<T>,
    store: &ParamStore<T>,
    g: &mut Graph<T>,
    smt: &SmtModel,
    pairs: &[(Vec<String>, Vec<String>)],
) -> Result<NodeId> {
    let mut rng = seeded(0);
    let mut total: Option<NodeId> = None;
    for (src, tgt) in pairs {
        let l = model.sentence_nll_with(
            g,
            store,
            src,
            tgt,
            Some(Fusion::learned(smt)),
            &mut rng,
            false,
        )?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    total.ok_or(crate::error::Error::Empty("sentence pairs"))
}

/// Reverse-mode gradients of the summed hybrid NLL of two sentence pairs,
/// computed in `f64`, against central differences of the same loss
/// evaluated in double-double precision, over every parameter.
pub fn hybrid_check(seed: u64) -> Result<GradCheckReport> {
    let (mut model, smt, pairs) = tiny_hybrid(seed)?;
    let analytic = {
        let mut store = std::mem::take(&mut model.store);
        let grads = analytic_gradients(&mut store, |s, g| summed_nll(&model, s, g, &smt, &pairs))?;
        model.store = store;
        grads
    };
    let mut wide = HybridModel::<DoubleDouble>::from_checkpoint(&model.to_checkpoint())?;
    let mut store = std::mem::take(&mut wide.store);
    compare_with_finite_differences(
        &mut store,
        &analytic,
        |s, g| summed_nll(&wide, s, g, &smt, &pairs),
        WIDE_STEP,
        TOLERANCE,
        1,
    )
}

/// Op suite for `seeds` seeds followed by whole-model checks.
pub fn run(seeds: u64) -> Result<Vec<CheckResult>> {
    let mut all = Vec::new();
    for seed in 0..seeds {
        all.extend(op_suite(seed)?);
    }
    for seed in 0..seeds {
        all.push(CheckResult {
            name: "hybrid_model".into(),
            seed,
            report: hybrid_check(seed)?,
        });
    }
    Ok(all)
}
