//! Left-to-right beam search over the fused output distribution, with a
//! coverage vector per hypothesis and post-hoc UNK replacement.

use std::cmp::Ordering;

use serde::Serialize;

use crate::advisor::combine;
use crate::corpus::{BOS, EOS, UNK, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{Fusion, GateMode, HybridModel, PseudoRecs};
use crate::rng::derived;
use crate::scalar::Scalar;
use crate::smt::{update_coverage, CoverageVector, LmChoice, SmtModel};

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOptions {
    pub beam: usize,
    /// Output length bound; `None` means `2 * source + 5`.
    pub max_len: Option<usize>,
    pub gate: GateMode,
    pub pseudo_recs: bool,
    pub unk_replace: bool,
    /// Keep full per-step records (recommendation lists, coverage).
    pub trace: bool,
    pub seed: u64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            beam: 10,
            max_len: None,
            gate: GateMode::Learned,
            pseudo_recs: false,
            unk_replace: true,
            trace: false,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRec {
    pub word: String,
    pub src_pos: usize,
    pub score: f64,
}

/// What happened at one output position of a hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    /// Token as the neural model sees it.
    pub token: String,
    pub logprob: f64,
    /// Gate value, absent when the step fell back to the neural
    /// distribution alone.
    pub gate: Option<f64>,
    /// Best recommendation under the surface-form LM, recorded when the
    /// step emitted `<unk>`.
    pub unk_replacement: Option<TraceRec>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub recs: Vec<TraceRec>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub coverage: Vec<bool>,
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<usize>,
    /// Neural-view words (no `<s>` / `</s>`).
    words: Vec<String>,
    /// Words with earlier `<unk>`s replaced.
    surface: Vec<String>,
    logprob: f64,
    state: NodeId,
    context: NodeId,
    attention: Option<Vec<f64>>,
    cv: CoverageVector,
    steps: Vec<StepRecord>,
}

/// Final result for one source sentence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Translation {
    /// Neural-view output tokens without `</s>`.
    pub tokens: Vec<String>,
    /// Output after UNK replacement (equal to `tokens` when disabled).
    pub output: Vec<String>,
    /// Sum of per-step log-probabilities, `</s>` included unless forced.
    pub logprob: f64,
    /// The length bound was hit before `</s>`.
    pub forced_eos: bool,
    /// `<unk>` tokens left in `output`.
    pub unk_left: usize,
    pub steps: Vec<StepRecord>,
}

impl Translation {
    pub fn text(&self) -> String {
        self.output.join(" ")
    }

    /// Coverage popcount after every non-final step (trace mode only).
    pub fn coverage_counts(&self) -> Vec<usize> {
        self.steps
            .iter()
            .filter(|s| !s.coverage.is_empty())
            .map(|s| s.coverage.iter().filter(|&&b| b).count())
            .collect()
    }
}

struct Candidate {
    parent: usize,
    token: usize,
    logprob: f64,
    step_lp: f64,
    gate: Option<f64>,
    rec_index: usize,
}

fn top_k(p: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Beam search for one sentence. `smt` enables recommendations when the
/// model carries an advisor.
pub fn beam_search<T: Scalar>(
    model: &HybridModel<T>,
    smt: Option<&SmtModel>,
    src: &[String],
    opts: &DecodeOptions,
    stream: u64,
) -> Result<Translation> {
    if opts.beam == 0 {
        return Err(Error::Config("beam size must be >= 1".into()));
    }
    if src.is_empty() {
        return Err(Error::Empty("source sentence"));
    }
    let pseudo = match (opts.pseudo_recs, smt) {
        (true, Some(s)) => Some(PseudoRecs::from_smt(s, 50)),
        _ => None,
    };
    let fusion = smt.filter(|_| model.is_hybrid()).map(|s| Fusion {
        smt: s,
        gate: opts.gate,
        pseudo: pseudo.as_ref(),
    });
    let mut rng = derived(opts.seed, stream);
    let max_len = opts.max_len.unwrap_or(2 * src.len() + 5).max(1);

    let mut g: Graph<T> = Graph::new();
    let src_ids = model.src_vocab.encode_all(src);
    let enc = model.nmt.encode(&mut g, &model.store, &src_ids)?;
    let s0 = model.nmt.init_state(&mut g, &model.store, &enc)?;
    let c0 = model.nmt.init_context(&mut g)?;
    let mut live = vec![Hyp {
        tokens: vec![BOS],
        words: Vec::new(),
        surface: Vec::new(),
        logprob: 0.0,
        state: s0,
        context: c0,
        attention: None,
        cv: CoverageVector::new(src.len()),
        steps: Vec::new(),
    }];
    let mut finished: Vec<(Hyp, bool)> = Vec::new();

    for _ in 0..max_len {
        let slots = opts.beam - finished.len();
        let mut cands: Vec<Candidate> = Vec::new();
        let mut expansions = Vec::with_capacity(live.len());
        for (hi, h) in live.iter().enumerate() {
            let y_prev = *h.tokens.last().expect("hypothesis starts with <s>");
            let step = model.nmt.decode_step(
                &mut g,
                &model.store,
                &enc,
                h.state,
                h.context,
                y_prev,
                None,
                None,
            )?;
            let p_nmt: Vec<f64> = g.values(step.probs).iter().map(|v| v.as_f64()).collect();
            let (p, gate, recs) = match &fusion {
                Some(f) => {
                    let recs =
                        f.recommend(src, &h.words, h.attention.as_deref(), &h.cv, &mut rng)?;
                    match model.advise(&mut g, &step, &recs, f.gate)? {
                        Some(a) => {
                            let ps: Vec<f64> =
                                g.values(a.p_smt).iter().map(|v| v.as_f64()).collect();
                            let alpha = g.values(a.gate)[0].as_f64();
                            (combine(&p_nmt, &ps, &a.vocab.ids, alpha), Some(alpha), recs)
                        }
                        None => (p_nmt, None, recs),
                    }
                }
                None => (p_nmt, None, Vec::new()),
            };
            let sum: f64 = p.iter().sum();
            if !sum.is_finite() || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::NonFinite(format!(
                    "output distribution sums to {sum}"
                )));
            }
            for tok in top_k(&p, slots) {
                let lp = p[tok].ln();
                cands.push(Candidate {
                    parent: hi,
                    token: tok,
                    logprob: h.logprob + lp,
                    step_lp: lp,
                    gate,
                    rec_index: expansions.len(),
                });
            }
            let attention: Vec<f64> = g
                .values(step.attention)
                .iter()
                .map(|v| v.as_f64())
                .collect();
            expansions.push((step, recs, attention));
        }
        cands.sort_by(|a, b| {
            b.logprob
                .total_cmp(&a.logprob)
                .then(a.parent.cmp(&b.parent))
                .then(a.token.cmp(&b.token))
        });
        cands.truncate(slots);

        let mut next = Vec::new();
        for c in cands {
            let parent = &live[c.parent];
            let (step, recs, attention) = &expansions[c.rec_index];
            let word = model.tgt_vocab.decode(c.token).to_string();
            let mut h = Hyp {
                tokens: parent.tokens.clone(),
                words: parent.words.clone(),
                surface: parent.surface.clone(),
                logprob: c.logprob,
                state: step.state,
                context: step.context,
                attention: Some(attention.clone()),
                cv: parent.cv.clone(),
                steps: parent.steps.clone(),
            };
            h.tokens.push(c.token);
            let mut record = StepRecord {
                token: word.clone(),
                logprob: c.step_lp,
                gate: c.gate,
                unk_replacement: None,
                recs: Vec::new(),
                coverage: Vec::new(),
            };
            if c.token == EOS {
                h.steps.push(record);
                finished.push((h, false));
                continue;
            }
            let mut surface = word.clone();
            if c.token == UNK {
                if let Some(s) = smt {
                    let orig = s.recommend(
                        src,
                        &parent.surface,
                        parent.attention.as_deref(),
                        &parent.cv,
                        LmChoice::Original,
                    )?;
                    if let Some(best) = orig.first() {
                        surface = best.word.clone();
                        record.unk_replacement = Some(TraceRec {
                            word: best.word.clone(),
                            src_pos: best.src_pos,
                            score: best.score,
                        });
                    }
                }
            }
            h.cv = update_coverage(&parent.cv, &word, recs);
            if opts.trace {
                record.recs = recs
                    .iter()
                    .map(|r| TraceRec {
                        word: r.word.clone(),
                        src_pos: r.src_pos,
                        score: r.score,
                    })
                    .collect();
                record.coverage = h.cv.bits().to_vec();
            }
            h.words.push(word);
            h.surface.push(surface);
            h.steps.push(record);
            next.push(h);
        }
        live = next;
        let best_done = finished
            .iter()
            .map(|(h, _)| h.logprob)
            .fold(f64::NEG_INFINITY, f64::max);
        let best_live = live
            .iter()
            .map(|h| h.logprob)
            .fold(f64::NEG_INFINITY, f64::max);
        if live.is_empty() || finished.len() >= opts.beam || best_done >= best_live {
            break;
        }
    }
    if finished.is_empty() {
        finished.extend(live.into_iter().map(|h| (h, true)));
    }
    let (best, forced) = finished
        .into_iter()
        .min_by(|a, b| match b.0.logprob.total_cmp(&a.0.logprob) {
            Ordering::Equal => a.0.tokens.cmp(&b.0.tokens),
            o => o,
        })
        .expect("at least one hypothesis");
    let output = if opts.unk_replace {
        best.surface.clone()
    } else {
        best.words.clone()
    };
    let unk_left = output.iter().filter(|w| *w == UNK_TOKEN).count();
    Ok(Translation {
        tokens: best.words,
        output,
        logprob: best.logprob,
        forced_eos: forced,
        unk_left,
        steps: best.steps,
    })
}

/// Applies recorded replacements to a neural-view token sequence. Steps
/// without a record keep `<unk>`.
pub fn replace_unks(tokens: &[String], steps: &[StepRecord]) -> Vec<String> {
    tokens
        .iter()
        .zip(steps)
        .map(|(t, s)| match (&s.unk_replacement, t.as_str()) {
            (Some(r), UNK_TOKEN) => r.word.clone(),
            _ => t.clone(),
        })
        .collect()
}

/// Translates each sentence independently; sentence `i` uses PRNG stream
/// `i`.
pub fn translate_all<T: Scalar>(
    model: &HybridModel<T>,
    smt: Option<&SmtModel>,
    sources: &[Vec<String>],
    opts: &DecodeOptions,
) -> Result<Vec<Translation>> {
    sources
        .iter()
        .enumerate()
        .map(|(i, s)| beam_search(model, smt, s, opts, i as u64))
        .collect()
}

/// One JSON object per line.
pub fn trace_lines(translations: &[Translation]) -> Result<String> {
    let mut out = String::new();
    for (i, t) in translations.iter().enumerate() {
        let v = serde_json::json!({
            "sentence": i,
            "logprob": t.logprob,
            "forced_eos": t.forced_eos,
            "unk_left": t.unk_left,
            "output": t.text(),
            "steps": t.steps,
        });
        out.push_str(&serde_json::to_string(&v)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advisor::AdvisorConfig;
    use crate::corpus::{gen_synthetic, SyntheticSpec, SyntheticTask, Vocabulary};
    use crate::model::ModelConfig;
    use crate::nmt::NmtConfig;
    use crate::smt::{SmtConfig, StopList};

    fn setup() -> (HybridModel<f64>, SmtModel, crate::corpus::SyntheticData) {
        let spec = SyntheticSpec {
            types: 10,
            min_len: 2,
            max_len: 5,
            ..SyntheticSpec::new(SyntheticTask::LexiconRare, 120, 6)
        };
        let data = gen_synthetic(&spec).unwrap();
        let sv =
            Vocabulary::build(data.corpus.sources().collect::<Vec<_>>(), spec.vocab_cap()).unwrap();
        let tv =
            Vocabulary::build(data.corpus.targets().collect::<Vec<_>>(), spec.vocab_cap()).unwrap();
        let smt =
            SmtModel::train(&data.corpus, &tv, StopList::empty(), SmtConfig::default()).unwrap();
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
        let mut m = HybridModel::new_nmt(sv, tv, cfg, 1).unwrap();
        m.attach_advisor(2).unwrap();
        (m, smt, data)
    }

    fn greedy(model: &HybridModel<f64>, smt: &SmtModel, src: &[String]) -> Vec<String> {
        let mut g = Graph::new();
        let enc = model
            .nmt
            .encode(&mut g, &model.store, &model.src_vocab.encode_all(src))
            .unwrap();
        let mut s = model.nmt.init_state(&mut g, &model.store, &enc).unwrap();
        let mut c = model.nmt.init_context(&mut g).unwrap();
        let mut cv = CoverageVector::new(src.len());
        let (mut y, mut words, mut att): (usize, Vec<String>, Option<Vec<f64>>) =
            (BOS, vec![], None);
        for _ in 0..2 * src.len() + 5 {
            let st = model
                .nmt
                .decode_step(&mut g, &model.store, &enc, s, c, y, None, None)
                .unwrap();
            let recs = smt
                .recommend(src, &words, att.as_deref(), &cv, LmChoice::UnkMapped)
                .unwrap();
            let pn = g.values(st.probs).to_vec();
            let p = match model.advise(&mut g, &st, &recs, GateMode::Learned).unwrap() {
                Some(a) => combine(&pn, g.values(a.p_smt), &a.vocab.ids, g.values(a.gate)[0]),
                None => pn,
            };
            y = top_k(&p, 1)[0];
            if y == EOS {
                break;
            }
            let w = model.tgt_vocab.decode(y).to_string();
            cv = update_coverage(&cv, &w, &recs);
            words.push(w);
            att = Some(g.values(st.attention).to_vec());
            s = st.state;
            c = st.context;
        }
        words
    }

    #[test]
    fn beam_one_is_greedy() {
        let (m, smt, data) = setup();
        let opts = DecodeOptions {
            beam: 1,
            unk_replace: false,
            ..Default::default()
        };
        for p in data.corpus.pairs().iter().take(15) {
            let t = beam_search(&m, Some(&smt), &p.source, &opts, 0).unwrap();
            assert_eq!(t.tokens, greedy(&m, &smt, &p.source));
        }
    }

    #[test]
    fn zero_gate_matches_plain_decoder() {
        let (m, smt, data) = setup();
        let mut plain = m.clone();
        plain.advisor = None;
        let zero = DecodeOptions {
            gate: GateMode::Fixed(0.0),
            unk_replace: false,
            ..Default::default()
        };
        for p in data.corpus.pairs().iter().take(15) {
            let a = beam_search(&m, Some(&smt), &p.source, &zero, 0).unwrap();
            let b = beam_search(&plain, None, &p.source, &zero, 0).unwrap();
            assert_eq!(a.tokens, b.tokens);
            assert_eq!(a.logprob.to_bits(), b.logprob.to_bits());
        }
    }

    #[test]
    fn replay_reproduces_hypothesis_score() {
        let (m, smt, data) = setup();
        let opts = DecodeOptions {
            beam: 4,
            ..Default::default()
        };
        for p in data.corpus.pairs().iter().take(15) {
            let t = beam_search(&m, Some(&smt), &p.source, &opts, 0).unwrap();
            if t.forced_eos {
                continue;
            }
            let mut g = Graph::new();
            let nll = m
                .sentence_nll(
                    &mut g,
                    &p.source,
                    &t.tokens,
                    Some(Fusion::learned(&smt)),
                    &mut derived(0, 0),
                    false,
                )
                .unwrap();
            assert!((g.values(nll)[0] + t.logprob).abs() < 1e-9);
        }
    }

    #[test]
    fn trace_coverage_is_monotone() {
        let (m, smt, data) = setup();
        let opts = DecodeOptions {
            trace: true,
            ..Default::default()
        };
        let sources: Vec<Vec<String>> = data.corpus.sources().take(10).cloned().collect();
        let ts = translate_all(&m, Some(&smt), &sources, &opts).unwrap();
        for t in &ts {
            let c = t.coverage_counts();
            assert!(c.windows(2).all(|w| w[0] <= w[1]));
        }
        let lines = trace_lines(&ts).unwrap();
        assert_eq!(lines.lines().count(), 10);
        for l in lines.lines() {
            serde_json::from_str::<serde_json::Value>(l).unwrap();
        }
    }

    #[test]
    fn replacement_helper() {
        let toks: Vec<String> = ["a", UNK_TOKEN, UNK_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut steps = vec![
            StepRecord {
                token: "a".into(),
                logprob: 0.0,
                gate: None,
                unk_replacement: None,
                recs: vec![],
                coverage: vec![]
            };
            3
        ];
        steps[1].unk_replacement = Some(TraceRec {
            word: "w".into(),
            src_pos: 0,
            score: 0.0,
        });
        assert_eq!(replace_unks(&toks, &steps), ["a", "w", UNK_TOKEN]);
        assert_eq!(replace_unks(&toks[..1], &steps[..1]), ["a"]);
    }
}
