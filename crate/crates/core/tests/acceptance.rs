//! Acceptance criteria A1-A9. Runs without the libtest harness so the
//! criteria execute one after another (wall-clock budgets are measured
//! without competing threads) and print one PASS/FAIL line each.
//!
//! `cargo test -p hybrid-mt --test acceptance -- A4 A5` runs a subset.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::Rng;

use common::{Cap, Pipeline, Recipe};
use hybrid_mt::ablation::{run_ablation, AblationRow, Variant};
use hybrid_mt::advisor::combine;
use hybrid_mt::corpus::{tokenize, SyntheticTask, EOS, UNK_TOKEN};
use hybrid_mt::decoder::{translate_all, DecodeOptions};
use hybrid_mt::error::Result;
use hybrid_mt::eval::{bleu, rare_word_hits, token_accuracy};
use hybrid_mt::graph::Graph;
use hybrid_mt::model::{Fusion, GateMode};
use hybrid_mt::rng::seeded;
use hybrid_mt::selftest::{hybrid_check, TOLERANCE};
use hybrid_mt::smt::ibm1::train_ibm1;
use hybrid_mt::smt::{
    rank_order, reorder_cost_hard, reorder_cost_soft, update_coverage, CoverageVector, LmChoice,
    Recommendation, SmtConfig, SmtModel, StopList,
};
use hybrid_mt::HybridModel;

type Outcome = std::result::Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn e2s<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| format!("error: {e}"))
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// A1 ------------------------------------------------------------------------

fn a1() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut failed = Vec::new();
    let mut coords = 0;
    for seed in 0..20 {
        let r = e2s(hybrid_check(seed))?;
        coords += r.checked;
        if r.max_rel_error > worst.0 {
            let w = r
                .worst
                .as_ref()
                .map(|c| c.param.clone())
                .unwrap_or_default();
            worst = (r.max_rel_error, format!("{w}, seed {seed}"));
        }
        if !r.passed || r.max_rel_error > TOLERANCE {
            failed.push(seed);
        }
    }
    let took = start.elapsed();
    check(
        failed.is_empty() && took < Duration::from_secs(120),
        format!(
            "20 seeds, {coords} coordinates, max rel err {:.2e} ({}), tol {TOLERANCE:e}, failed seeds {failed:?}, {}",
            worst.0,
            worst.1,
            secs(took)
        ),
    )
}

// A2 ------------------------------------------------------------------------

fn small_pipeline(seed: u64) -> Result<Pipeline> {
    common::run(&Recipe {
        pairs: 400,
        dev_pairs: 100,
        types: Some(20),
        tgt_cap: Cap::AllTypes,
        emb: 8,
        hidden: 8,
        pre_epochs: 4,
        hybrid_epochs: 2,
        ..Recipe::new(SyntheticTask::LexiconRareSwap, 400, seed)
    })
}

/// Samples decode paths from the fused distribution and checks, at every
/// step, normalization under the learned gate and the identity at gate 0.
fn fused_steps(
    model: &HybridModel,
    smt: &SmtModel,
    sources: &[Vec<String>],
    steps: usize,
) -> Result<(usize, usize, f64, f64)> {
    let fusion = Fusion::learned(smt);
    let mut rng = seeded(99);
    let (mut done, mut fused, mut worst_sum, mut worst_zero) = (0, 0, 0.0f64, 0.0f64);
    let mut k = 0;
    while done < steps {
        let src = &sources[k % sources.len()];
        k += 1;
        let mut g = Graph::new();
        let enc = model
            .nmt
            .encode(&mut g, &model.store, &model.src_vocab.encode_all(src))?;
        let (mut s, mut c) = (
            model.nmt.init_state(&mut g, &model.store, &enc)?,
            model.nmt.init_context(&mut g)?,
        );
        let (mut y, mut words, mut att, mut cv) = (
            hybrid_mt::corpus::BOS,
            Vec::<String>::new(),
            None::<Vec<f64>>,
            CoverageVector::new(src.len()),
        );
        for _ in 0..2 * src.len() + 5 {
            if done == steps {
                break;
            }
            let step = model
                .nmt
                .decode_step(&mut g, &model.store, &enc, s, c, y, None, None)?;
            let pn: Vec<f64> = g.values(step.probs).to_vec();
            let recs = fusion.recommend(src, &words, att.as_deref(), &cv, &mut rng)?;
            let p = match model.advise(&mut g, &step, &recs, GateMode::Learned)? {
                Some(a) => {
                    fused += 1;
                    let ps = g.values(a.p_smt).to_vec();
                    let zero = model
                        .advise(&mut g, &step, &recs, GateMode::Fixed(0.0))?
                        .expect("same recommendations");
                    let p0 = combine(
                        &pn,
                        g.values(zero.p_smt),
                        &zero.vocab.ids,
                        g.values(zero.gate)[0],
                    );
                    let d = p0
                        .iter()
                        .zip(&pn)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    worst_zero = worst_zero.max(d);
                    combine(&pn, &ps, &a.vocab.ids, g.values(a.gate)[0])
                }
                None => pn,
            };
            worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
            done += 1;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let tok = p.iter().position(|&q| {
                acc += q;
                acc > u
            });
            let tok = tok.unwrap_or(p.len() - 1);
            if tok == EOS {
                break;
            }
            let w = model.tgt_vocab.decode(tok).to_string();
            cv = update_coverage(&cv, &w, &recs);
            words.push(w);
            att = Some(g.values(step.attention).to_vec());
            (s, c, y) = (step.state, step.context, tok);
        }
    }
    Ok((done, fused, worst_sum, worst_zero))
}

fn a2() -> Outcome {
    let pl = e2s(small_pipeline(7))?;
    let hybrid = pl.hybrid();
    let sources = pl.sources();

    let (steps, fused, worst_sum, worst_zero) = e2s(fused_steps(hybrid, &pl.smt, &sources, 1000))?;

    let base = DecodeOptions {
        unk_replace: false,
        ..DecodeOptions::default()
    };
    let gated = e2s(translate_all(
        hybrid,
        Some(&pl.smt),
        &sources,
        &DecodeOptions {
            gate: GateMode::Fixed(0.0),
            ..base.clone()
        },
    ))?;
    let pure = e2s(translate_all(hybrid, None, &sources, &base))?;
    let identical = gated
        .iter()
        .zip(&pure)
        .filter(|(a, b)| a.tokens == b.tokens)
        .count();

    let mut reorder_mismatch = 0;
    let mut reorder_cases = 0;
    for len in 1..=12 {
        for prev in 1..=len {
            let mut one_hot = vec![0.0; len];
            one_hot[prev - 1] = 1.0;
            for sp in 1..=len {
                reorder_cases += 1;
                let soft = e2s(reorder_cost_soft(sp, &one_hot))?;
                if soft.to_bits() != reorder_cost_hard(sp, prev).to_bits() {
                    reorder_mismatch += 1;
                }
            }
        }
    }

    check(
        worst_zero <= 1e-12
            && identical == sources.len()
            && reorder_mismatch == 0
            && worst_sum <= 1e-9
            && fused > 0,
        format!(
            "(i) gate 0: max |p - p_nmt| {worst_zero:.1e}, beam outputs identical {identical}/{}; \
             (ii) one-hot soft == hard reorder in {}/{reorder_cases} cases; \
             (iii) {steps} steps ({fused} fused), max |sum - 1| {worst_sum:.1e}",
            sources.len(),
            reorder_cases - reorder_mismatch
        ),
    )
}

// A3 ------------------------------------------------------------------------

fn a3() -> Outcome {
    let start = Instant::now();
    let recipe = Recipe {
        types: Some(47),
        src_cap: Cap::AllTypes,
        tgt_cap: Cap::AllTypes,
        pre_epochs: 30,
        hybrid_epochs: 0,
        ..Recipe::new(SyntheticTask::Lexicon, 2000, 1)
    };
    let pl = e2s(common::pretrain_only(&recipe))?;
    let opts = DecodeOptions {
        unk_replace: false,
        ..DecodeOptions::default()
    };
    let out = e2s(translate_all(&pl.nmt, None, &pl.sources(), &opts))?;
    let hyps: Vec<Vec<String>> = out.into_iter().map(|t| t.output).collect();
    let acc = e2s(token_accuracy(&hyps, &pl.references()))?;
    let took = start.elapsed();
    check(
        acc >= 0.95 && took < Duration::from_secs(600),
        format!(
            "lexicon 2000 pairs, vocab {}/{}, e=d=16: dev token accuracy {acc:.4} (>= 0.95) after best epoch {} of 30, {}",
            pl.nmt.src_vocab.len(),
            pl.nmt.tgt_vocab.len(),
            pl.nmt_report.best_epoch,
            secs(took)
        ),
    )
}

// A4 ------------------------------------------------------------------------

fn row(rows: &[AblationRow], v: Variant) -> &AblationRow {
    rows.iter()
        .find(|r| r.variant == v)
        .expect("every variant is decoded")
}

fn a4() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 1..=3 {
        let recipe = Recipe {
            tgt_cap: Cap::AllTypes,
            pre_epochs: 10,
            hybrid_epochs: 10,
            ..Recipe::new(SyntheticTask::LexiconRareSwap, 5000, seed)
        };
        let pl = e2s(common::run(&recipe))?;
        let base = DecodeOptions::default();
        let rows = e2s(run_ablation(
            &pl.nmt,
            pl.hybrid(),
            &pl.smt,
            &pl.sources(),
            &pl.references(),
            &base,
        ))?;
        let b = |v| row(&rows, v).bleu;
        let (nmt, hyb, zero, pseudo) = (
            b(Variant::Baseline),
            b(Variant::SmtRec),
            b(Variant::GateZero),
            b(Variant::PseudoRecs),
        );
        let pass = hyb >= nmt && hyb - zero > 0.0 && hyb - pseudo > 0.0;
        ok &= pass;
        lines.push(format!(
            "seed {seed}: nmt {nmt:.4} hybrid {hyb:.4} alpha=0 {zero:.4} pseudo {pseudo:.4} [{}]",
            if pass { "ok" } else { "violated" }
        ));
    }
    check(
        ok,
        format!("{}; {}", lines.join("; "), secs(start.elapsed())),
    )
}

// A5 ------------------------------------------------------------------------

fn a5() -> Outcome {
    let recipe = Recipe {
        pre_epochs: 10,
        hybrid_epochs: 5,
        ..Recipe::new(SyntheticTask::LexiconRare, 3000, 1)
    };
    let pl = e2s(common::run(&recipe))?;
    let refs = pl.references();
    let rows = e2s(run_ablation(
        &pl.nmt,
        pl.hybrid(),
        &pl.smt,
        &pl.sources(),
        &refs,
        &DecodeOptions::default(),
    ))?;
    let rec = row(&rows, Variant::SmtRec);
    let rep = row(&rows, Variant::UnkReplace);
    let rare: BTreeSet<String> = pl.data.rare_targets();
    let (hits, total) = rare_word_hits(&rep.outputs, &refs, &rare);
    let frac = hits as f64 / total.max(1) as f64;
    let unks_left: usize = rep
        .outputs
        .iter()
        .flatten()
        .filter(|w| *w == UNK_TOKEN)
        .count();
    check(
        rep.token_accuracy > rec.token_accuracy && total > 0 && frac >= 0.8,
        format!(
            "token accuracy +SMT rec {:.4} -> +UNK-replace {:.4}; rare positions correct {hits}/{total} ({:.1}%); {unks_left} <unk> left",
            rec.token_accuracy,
            rep.token_accuracy,
            100.0 * frac
        ),
    )
}

// A6 ------------------------------------------------------------------------

/// Enumerate-and-sort scorer rebuilt from the raw tables.
fn brute_force(
    smt: &SmtModel,
    src: &[String],
    prefix: &[String],
    att: Option<&[f64]>,
    cv: &CoverageVector,
    lm: LmChoice,
) -> Vec<Recommendation> {
    let cfg = &smt.config;
    let w = cfg.weights.as_array();
    let mut all = Vec::new();
    for (pos, word) in src.iter().enumerate() {
        if cv.is_covered(pos) {
            continue;
        }
        let Some(sid) = smt.source.get(word) else {
            continue;
        };
        let mut targets: Vec<u32> = (0..smt.target.len() as u32)
            .filter(|&t| {
                let k = (sid, t);
                let tb = &smt.tables;
                tb.p_fwd.contains_key(&k)
                    || tb.p_bwd.contains_key(&k)
                    || tb.lex_fwd.contains_key(&k)
                    || tb.lex_bwd.contains_key(&k)
            })
            .collect();
        let trans = |t: u32| -> f64 {
            smt.tables
                .probs(sid, t)
                .iter()
                .zip(&w[..4])
                .map(|(a, b)| a * b)
                .sum()
        };
        targets.sort_by(|&a, &b| {
            trans(b)
                .total_cmp(&trans(a))
                .then_with(|| smt.target.word(a).cmp(smt.target.word(b)))
        });
        targets.truncate(cfg.n_tm);
        let reorder = att.map_or(0.0, |a| {
            -a.iter()
                .enumerate()
                .map(|(j, p)| p * ((pos + 1) as f64 - (j + 1) as f64 - 1.0).abs())
                .sum::<f64>()
        });
        for t in targets {
            let tw = smt.target.word(t);
            if smt.is_stop(tw) {
                continue;
            }
            let p = smt.tables.probs(sid, t);
            let h = [
                p[0].max(cfg.prob_floor).ln(),
                p[1].max(cfg.prob_floor).ln(),
                p[2].max(cfg.prob_floor).ln(),
                p[3].max(cfg.prob_floor).ln(),
                smt.lm(lm).prob(prefix, tw).ln(),
                reorder,
            ];
            all.push(Recommendation {
                word: tw.to_string(),
                src_pos: pos,
                features: h,
                score: h.iter().zip(&w).map(|(a, b)| a * b).sum(),
            });
        }
    }
    all.sort_by(rank_order);
    all.truncate(cfg.n_rec);
    all
}

fn a6() -> Outcome {
    let spec_pl = e2s(hybrid_mt::corpus::gen_synthetic(
        &hybrid_mt::corpus::SyntheticSpec {
            types: 15,
            ..hybrid_mt::corpus::SyntheticSpec::new(SyntheticTask::LexiconRareSwap, 300, 5)
        },
    ))?;
    let corpus = spec_pl.corpus;
    let tv = e2s(hybrid_mt::corpus::Vocabulary::build(corpus.targets(), 12))?;
    let cfg = SmtConfig {
        n_tm: 3,
        n_rec: 7,
        ..SmtConfig::default()
    };
    let smt = e2s(SmtModel::train(
        &corpus,
        &tv,
        StopList::from_words(["t2", "t5"]),
        cfg,
    ))?;
    let src_words: Vec<String> = smt_words(&smt, true);
    let tgt_words: Vec<String> = smt_words(&smt, false);
    let mut rng = seeded(2024);
    let (mut equal, mut nonempty, mut max_len) = (0, 0, 0);
    for _ in 0..200 {
        let n = rng.random_range(1..9);
        let src: Vec<String> = (0..n)
            .map(|_| {
                if rng.random_bool(0.1) {
                    "unseen".to_string()
                } else {
                    src_words[rng.random_range(0..src_words.len())].clone()
                }
            })
            .collect();
        let prefix: Vec<String> = (0..rng.random_range(0..5))
            .map(|_| tgt_words[rng.random_range(0..tgt_words.len())].clone())
            .collect();
        let mut cv = CoverageVector::new(n);
        for j in 0..n {
            if rng.random_bool(0.3) {
                cv.cover(j);
            }
        }
        let att: Option<Vec<f64>> = rng.random_bool(0.8).then(|| {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let z: f64 = raw.iter().sum();
            raw.iter().map(|v| v / z).collect()
        });
        let lm = if rng.random_bool(0.5) {
            LmChoice::UnkMapped
        } else {
            LmChoice::Original
        };
        let got = e2s(smt.recommend(&src, &prefix, att.as_deref(), &cv, lm))?;
        let want = brute_force(&smt, &src, &prefix, att.as_deref(), &cv, lm);
        let same = got.len() == want.len()
            && got.iter().zip(&want).all(|(a, b)| {
                a.word == b.word
                    && a.src_pos == b.src_pos
                    && (a.score - b.score).abs() <= 1e-12 * b.score.abs().max(1.0)
            });
        equal += usize::from(same);
        nonempty += usize::from(!want.is_empty());
        max_len = max_len.max(want.len());
    }
    check(
        equal == 200,
        format!("{equal}/200 states match the brute-force scorer ({nonempty} non-empty, longest list {max_len})"),
    )
}

fn smt_words(smt: &SmtModel, source: bool) -> Vec<String> {
    let i = if source { &smt.source } else { &smt.target };
    (0..i.len() as u32).map(|k| i.word(k).to_string()).collect()
}

// A7 ------------------------------------------------------------------------

fn a7() -> Outcome {
    let corpus = e2s(hybrid_mt::corpus::ParallelCorpus::from_lines(
        "a\na b\n", "x\nx y\n",
    ))?;
    // Plain-Python EM with a NULL source word, uniform start.
    const ORACLE_10: (f64, f64) = (0.9490356112177925, 0.9909382114293968);
    const ORACLE_20: (f64, f64) = (0.9795928365251418, 0.9999771052247391);
    let mut first_above = None;
    for iters in 1..=20 {
        let m = e2s(train_ibm1(&corpus, iters))?;
        if first_above.is_none() && m.prob(Some("a"), "x") > 0.9 && m.prob(Some("b"), "y") > 0.9 {
            first_above = Some(iters);
        }
    }
    let m10 = e2s(train_ibm1(&corpus, 10))?;
    let m = e2s(train_ibm1(&corpus, 20))?;
    let (tx, ty) = (m.prob(Some("a"), "x"), m.prob(Some("b"), "y"));
    let oracle_err = [
        (m10.prob(Some("a"), "x") - ORACLE_10.0).abs(),
        (m10.prob(Some("b"), "y") - ORACLE_10.1).abs(),
        (tx - ORACLE_20.0).abs(),
        (ty - ORACLE_20.1).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let monotone = m.log_likelihood.windows(2).all(|w| w[1] >= w[0]);
    check(
        first_above.is_some() && tx > 0.9 && ty > 0.9 && monotone && oracle_err < 1e-12,
        format!(
            "t(x|a) {tx:.6}, t(y|b) {ty:.6} after 20 iterations; both > 0.9 from iteration {:?}; \
             log-likelihood {:.4} -> {:.4} non-decreasing: {monotone}; max deviation from EM oracle {oracle_err:.1e}",
            first_above,
            m.log_likelihood[0],
            m.log_likelihood.last().copied().unwrap_or(f64::NAN),
        ),
    )
}

// A8 ------------------------------------------------------------------------

fn a8() -> Outcome {
    let t = |s: &str| tokenize(s);
    let mut fails = Vec::new();
    let one = |c: &str, r: &str| bleu(&[t(c)], &[vec![t(r)]]);

    let id = e2s(one(
        "the cat sat on the mat today",
        "the cat sat on the mat today",
    ))?;
    if id.bleu != 1.0 {
        fails.push(format!("identity gave {}", id.bleu));
    }
    let clip = e2s(one("the the the the the the the", "the cat is on the mat"))?;
    if clip.matches[0] != 2 || clip.totals[0] != 7 || (clip.precisions[0] - 2.0 / 7.0).abs() > 1e-15
    {
        fails.push(format!(
            "clipped precision {}/{}",
            clip.matches[0], clip.totals[0]
        ));
    }
    let zero = e2s(one("a b c d e", "a b c x d e"))?;
    if zero.bleu != 0.0 || zero.matches[3] != 0 {
        fails.push(format!("zero 4-gram gave {}", zero.bleu));
    }
    let corpus = e2s(bleu(
        &[t("a b c d"), t("x y z w v")],
        &[vec![t("a b c d")], vec![t("x y z q v")]],
    ))?;
    let expect =
        ((8.0f64 / 9.0).ln() + (5.0f64 / 7.0).ln() + (3.0f64 / 5.0).ln() + (1.0f64 / 3.0).ln())
            / 4.0;
    if (corpus.bleu - expect.exp()).abs() > 1e-12 {
        fails.push(format!(
            "hand-computed corpus {} vs {}",
            corpus.bleu,
            expect.exp()
        ));
    }
    let bp = e2s(bleu(
        &[t("a b c d e f")],
        &[vec![t("a b c d e f g h i j"), t("a b c d e f g")]],
    ))?;
    if bp.reference_length != 7 {
        fails.push("closest reference length".into());
    }
    let case = e2s(one("The Cat Sat On The Mat", "the cat sat on the mat"))?;
    if case.bleu != 1.0 {
        fails.push("case folding".into());
    }
    check(
        fails.is_empty(),
        if fails.is_empty() {
            format!(
                "identity 1.0, clipped 1-gram 2/7, zero 4-gram -> 0, hand-computed corpus {:.6}, closest-ref BP {:.6}, case folded",
                corpus.bleu, bp.brevity_penalty
            )
        } else {
            fails.join("; ")
        },
    )
}

// A9 ------------------------------------------------------------------------

struct Artifacts {
    nmt: Vec<u8>,
    hybrid: Vec<u8>,
    smt_files: Vec<Vec<u8>>,
    logs: Vec<String>,
    outputs: Vec<Vec<Vec<String>>>,
    traces: Vec<String>,
}

fn artifacts(seed: u64) -> Result<Artifacts> {
    let pl = small_pipeline(seed)?;
    let dir = tempfile::tempdir()?;
    pl.smt.save(dir.path())?;
    let smt_files = ["tables.tsv", "stoplist.txt", "smt.ckpt"]
        .iter()
        .map(|f| std::fs::read(dir.path().join(f)))
        .collect::<std::io::Result<_>>()?;
    let strip = |r: &hybrid_mt::training::TrainReport| -> String {
        r.log
            .iter()
            .map(|e| {
                format!(
                    "{} {} {}\n",
                    e.epoch,
                    e.train_nll.to_bits(),
                    e.dev_nll.to_bits()
                )
            })
            .collect()
    };
    let (hybrid, hrep) = pl.hybrid.as_ref().expect("hybrid trained");
    let base = DecodeOptions {
        trace: true,
        ..DecodeOptions::default()
    };
    let mut outputs = Vec::new();
    let mut traces = Vec::new();
    for v in Variant::ALL {
        let (m, smt) = if v == Variant::Baseline {
            (&pl.nmt, None)
        } else {
            (hybrid, Some(&pl.smt))
        };
        let out = translate_all(m, smt, &pl.sources(), &v.options(&base))?;
        traces.push(hybrid_mt::decoder::trace_lines(&out)?);
        outputs.push(out.into_iter().map(|t| t.output).collect());
    }
    Ok(Artifacts {
        nmt: pl.nmt.to_checkpoint().to_bytes()?,
        hybrid: hybrid.to_checkpoint().to_bytes()?,
        smt_files,
        logs: vec![strip(&pl.nmt_report), strip(hrep)],
        outputs,
        traces,
    })
}

fn a9() -> Outcome {
    let a = e2s(artifacts(11))?;
    let b = e2s(artifacts(11))?;
    let c = e2s(artifacts(12))?;
    let same = [
        ("nmt checkpoint", a.nmt == b.nmt),
        ("hybrid checkpoint", a.hybrid == b.hybrid),
        ("smt files", a.smt_files == b.smt_files),
        ("training logs", a.logs == b.logs),
        ("outputs", a.outputs == b.outputs),
        ("traces", a.traces == b.traces),
    ];
    let differing: Vec<&str> = same.iter().filter(|(_, s)| !s).map(|(n, _)| *n).collect();
    let seed_matters = a.hybrid != c.hybrid;
    check(
        differing.is_empty() && seed_matters,
        format!(
            "two runs: {} checkpoint bytes + {} hybrid bytes, 3 SMT files, 6 decoded variants; differing: {differing:?}; another seed changes the hybrid: {seed_matters}",
            a.nmt.len(),
            a.hybrid.len()
        ),
    )
}

// -------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 9] = [
        ("A1", "gradient integrity", a1),
        ("A2", "fusion identities", a2),
        ("A3", "trainability", a3),
        ("A4", "ablation ordering", a4),
        ("A5", "UNK replacement", a5),
        ("A6", "SMT oracle equivalence", a6),
        ("A7", "EM correctness", a7),
        ("A8", "metric correctness", a8),
        ("A9", "determinism", a9),
    ];
    let wanted: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failures = 0;
    for (id, name, f) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| w.eq_ignore_ascii_case(id)) {
            continue;
        }
        let start = Instant::now();
        let (status, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("{id} {status} {name} ({}): {detail}", secs(start.elapsed()));
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
