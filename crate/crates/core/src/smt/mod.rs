//! Word-level statistical translation advisor.
//!
//! Trained once from the parallel corpus (IBM1 in both directions,
//! intersected Viterbi alignments, two n-gram LMs), then queried at every
//! decoder step for scored next-word recommendations.

pub mod ibm1;
pub mod lm;
pub mod recommend;
pub mod tables;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::corpus::{ParallelCorpus, Vocabulary};
use crate::error::{Error, Result};

pub use lm::NGramLm;
pub use recommend::{
    rank_order, reorder_cost_hard, reorder_cost_soft, update_coverage, CoverageVector,
    Recommendation, NUM_FEATURES,
};
pub use tables::{build_lex_tables, LexTables};

/// String interner with dense `u32` ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Interner {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn with_reserved(words: &[&str]) -> Self {
        let mut i = Interner::default();
        for w in words {
            i.intern(w);
        }
        i
    }

    pub fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.index.get(w) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(w.to_string());
        self.index.insert(w.to_string(), id);
        id
    }

    pub fn get(&self, w: &str) -> Option<u32> {
        self.index.get(w).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Log-linear weights of the six recommendation features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureWeights {
    pub fwd_trans: f64,
    pub bwd_trans: f64,
    pub fwd_lex: f64,
    pub bwd_lex: f64,
    pub lm: f64,
    pub reorder: f64,
}

impl Default for FeatureWeights {
    fn default() -> Self {
        FeatureWeights {
            fwd_trans: 1.0,
            bwd_trans: 1.0,
            fwd_lex: 1.0,
            bwd_lex: 1.0,
            lm: 1.0,
            // Boosted ten times over the base weight.
            reorder: 10.0,
        }
    }
}

impl FeatureWeights {
    pub fn as_array(&self) -> [f64; NUM_FEATURES] {
        [
            self.fwd_trans,
            self.bwd_trans,
            self.fwd_lex,
            self.bwd_lex,
            self.lm,
            self.reorder,
        ]
    }

    pub fn from_array(a: [f64; NUM_FEATURES]) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("feature weights must be finite".into()));
        }
        Ok(FeatureWeights {
            fwd_trans: a[0],
            bwd_trans: a[1],
            fwd_lex: a[2],
            bwd_lex: a[3],
            lm: a[4],
            reorder: a[5],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmtConfig {
    /// Translations kept per source word.
    pub n_tm: usize,
    /// Recommendations returned per step.
    pub n_rec: usize,
    pub ibm_iters: usize,
    pub lm_order: usize,
    /// Interpolation weights, highest order first.
    pub lm_weights: Vec<f64>,
    pub lm_floor: f64,
    /// Probabilities are clamped to at least this before taking logs.
    pub prob_floor: f64,
    pub weights: FeatureWeights,
}

impl Default for SmtConfig {
    fn default() -> Self {
        SmtConfig {
            n_tm: 5,
            n_rec: 25,
            ibm_iters: 10,
            lm_order: 4,
            lm_weights: vec![0.5, 0.3, 0.15, 0.05],
            lm_floor: 0.01,
            prob_floor: 1e-7,
            weights: FeatureWeights::default(),
        }
    }
}

impl SmtConfig {
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let w = self.weights.as_array();
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        [
            ("n_tm", self.n_tm.to_string()),
            ("n_rec", self.n_rec.to_string()),
            ("ibm_iters", self.ibm_iters.to_string()),
            ("lm_order", self.lm_order.to_string()),
            ("lm_weights", join(&self.lm_weights)),
            ("lm_floor", self.lm_floor.to_string()),
            ("prob_floor", self.prob_floor.to_string()),
            ("feature_weights", join(&w)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            map.get(k)
                .ok_or_else(|| Error::Format(format!("missing {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad {k}")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad {k}")))
        };
        let list = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split(',')
                .map(|v| v.parse().map_err(|_| Error::Format(format!("bad {k}"))))
                .collect()
        };
        let w = list("feature_weights")?;
        let w: [f64; NUM_FEATURES] = w
            .try_into()
            .map_err(|_| Error::Format("feature_weights needs 6 values".into()))?;
        Ok(SmtConfig {
            n_tm: int("n_tm")?,
            n_rec: int("n_rec")?,
            ibm_iters: int("ibm_iters")?,
            lm_order: int("lm_order")?,
            lm_weights: list("lm_weights")?,
            lm_floor: num("lm_floor")?,
            prob_floor: num("prob_floor")?,
            weights: FeatureWeights::from_array(w)?,
        })
    }
}

/// Target words never offered as recommendations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StopList {
    words: HashSet<String>,
}

/// English function words and punctuation. Numerals are deliberately absent.
const DEFAULT_STOP_WORDS: &str =
    "a an the and or but nor so yet if then else of in on at to from by with \
without for about above below over under into onto out up down off through during before after \
between among against within along across behind beyond near is am are was were be been being \
have has had having do does did doing will would shall should can could may might must \
i me my mine myself you your yours yourself he him his himself she her hers herself it its itself \
we us our ours ourselves they them their theirs themselves this that these those who whom whose \
which what where when why how all any both each few more most other some such no not only own same \
than too very just there here as because while until again further once also ' ` \" , . ; : ! ? \
- -- ( ) [ ] { } / \\ & % $ # @ * + = < > ... 's n't";

impl StopList {
    pub fn english() -> Self {
        Self::from_words(DEFAULT_STOP_WORDS.split_whitespace())
    }

    pub fn empty() -> Self {
        StopList::default()
    }

    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        StopList {
            words: words.into_iter().map(str::to_string).collect(),
        }
    }

    /// One token per line; blank lines ignored.
    pub fn from_text(text: &str) -> Self {
        Self::from_words(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn to_text(&self) -> String {
        let mut w: Vec<&str> = self.words.iter().map(String::as_str).collect();
        w.sort_unstable();
        w.iter().map(|s| format!("{s}\n")).collect()
    }

    pub fn contains(&self, w: &str) -> bool {
        self.words.contains(w)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Which LM scores the recommendation prefix: the one trained with
/// out-of-vocabulary words collapsed to `<unk>` (used while the neural
/// model decodes) or the surface-form one (used to pick UNK replacements).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmChoice {
    UnkMapped,
    Original,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub target: u32,
    /// Floored log of `[p_fwd, p_bwd, lex_fwd, lex_bwd]`.
    pub log_probs: [f64; 4],
    /// Weighted sum of the four probabilities; ranks the candidate list.
    pub trans_score: f64,
}

#[derive(Debug, Clone)]
pub struct SmtModel {
    pub source: Interner,
    pub target: Interner,
    pub tables: LexTables,
    /// Top-`n_tm` translations per source id.
    pub candidates: Vec<Vec<Candidate>>,
    pub lm_unk: NGramLm,
    pub lm_orig: NGramLm,
    pub stop: StopList,
    pub config: SmtConfig,
    lm_ids: [Vec<u32>; 2],
    stop_ids: Vec<bool>,
}

impl SmtModel {
    /// `nmt_vocab` is the neural target vocabulary; it defines which words
    /// the UNK-mapped LM collapses.
    pub fn train(
        corpus: &ParallelCorpus,
        nmt_vocab: &Vocabulary,
        stop: StopList,
        config: SmtConfig,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Empty("SMT training corpus"));
        }
        let mut source = Interner::default();
        let mut target = Interner::default();
        let tables = build_lex_tables(corpus, config.ibm_iters, &mut source, &mut target)?;
        let targets: Vec<&Vec<String>> = corpus.targets().collect();
        let lm_unk = NGramLm::train(
            targets.iter().copied(),
            config.lm_order,
            &config.lm_weights,
            config.lm_floor,
            Some(nmt_vocab),
        )?;
        let lm_orig = NGramLm::train(
            targets.iter().copied(),
            config.lm_order,
            &config.lm_weights,
            config.lm_floor,
            None,
        )?;
        Ok(Self::assemble(
            source, target, tables, lm_unk, lm_orig, stop, config,
        ))
    }

    fn assemble(
        source: Interner,
        target: Interner,
        tables: LexTables,
        lm_unk: NGramLm,
        lm_orig: NGramLm,
        stop: StopList,
        config: SmtConfig,
    ) -> Self {
        let candidates = build_candidates(&tables, &source, &target, &config);
        let lm_ids = [
            (0..target.len() as u32)
                .map(|t| lm_unk.id(target.word(t)))
                .collect(),
            (0..target.len() as u32)
                .map(|t| lm_orig.id(target.word(t)))
                .collect(),
        ];
        let stop_ids = (0..target.len() as u32)
            .map(|t| stop.contains(target.word(t)))
            .collect();
        SmtModel {
            source,
            target,
            tables,
            candidates,
            lm_unk,
            lm_orig,
            stop,
            config,
            lm_ids,
            stop_ids,
        }
    }

    /// Recomputes the candidate table after `config` changed.
    pub fn rebuild_candidates(&mut self) {
        self.candidates = build_candidates(&self.tables, &self.source, &self.target, &self.config);
    }

    pub fn lm(&self, which: LmChoice) -> &NGramLm {
        match which {
            LmChoice::UnkMapped => &self.lm_unk,
            LmChoice::Original => &self.lm_orig,
        }
    }

    fn lm_id(&self, which: LmChoice, target: u32) -> u32 {
        self.lm_ids[which as usize][target as usize]
    }

    fn is_stop_id(&self, target: u32) -> bool {
        self.stop_ids[target as usize]
    }

    pub fn is_stop(&self, word: &str) -> bool {
        self.stop.contains(word)
    }

    /// Candidate target words for a source word, best first.
    pub fn candidates_for(&self, src: &str) -> Vec<(&str, &Candidate)> {
        self.source
            .get(src)
            .map(|s| {
                self.candidates[s as usize]
                    .iter()
                    .map(|c| (self.target.word(c.target), c))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Writes `tables.tsv`, `stoplist.txt` and `smt.ckpt` (config echo and
    /// both LMs) into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("tables.tsv"),
            self.tables.to_text(&self.source, &self.target),
        )?;
        fs::write(dir.join("stoplist.txt"), self.stop.to_text())?;
        let mut ck = Checkpoint {
            config: self.config.to_map(),
            ..Default::default()
        };
        ck.blobs.insert("lm_unk".into(), self.lm_unk.to_text()?);
        ck.blobs.insert("lm_orig".into(), self.lm_orig.to_text()?);
        ck.save(dir.join("smt.ckpt"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let ck = Checkpoint::load(dir.join("smt.ckpt"))?;
        let config = SmtConfig::from_map(&ck.config)?;
        let blob = |k: &str| {
            ck.blobs
                .get(k)
                .ok_or_else(|| Error::Format(format!("SMT checkpoint lacks {k}")))
        };
        let lm_unk = NGramLm::from_text(blob("lm_unk")?)?;
        let lm_orig = NGramLm::from_text(blob("lm_orig")?)?;
        let mut source = Interner::default();
        let mut target = Interner::default();
        let tables = LexTables::from_text(
            &fs::read_to_string(dir.join("tables.tsv"))?,
            &mut source,
            &mut target,
        )?;
        let stop = StopList::from_text(&fs::read_to_string(dir.join("stoplist.txt"))?);
        Ok(Self::assemble(
            source, target, tables, lm_unk, lm_orig, stop, config,
        ))
    }
}

fn build_candidates(
    tables: &LexTables,
    source: &Interner,
    target: &Interner,
    config: &SmtConfig,
) -> Vec<Vec<Candidate>> {
    let mut per_src: Vec<HashSet<u32>> = vec![HashSet::new(); source.len()];
    for &(s, t) in tables
        .p_fwd
        .keys()
        .chain(tables.p_bwd.keys())
        .chain(tables.lex_fwd.keys())
        .chain(tables.lex_bwd.keys())
    {
        per_src[s as usize].insert(t);
    }
    let w = config.weights.as_array();
    per_src
        .into_iter()
        .enumerate()
        .map(|(s, targets)| {
            let mut cands: Vec<Candidate> = targets
                .into_iter()
                .map(|t| {
                    let p = tables.probs(s as u32, t);
                    Candidate {
                        target: t,
                        log_probs: p.map(|v| v.max(config.prob_floor).ln()),
                        trans_score: p.iter().zip(&w[..4]).map(|(a, b)| a * b).sum(),
                    }
                })
                .collect();
            cands.sort_by(|a, b| {
                b.trans_score
                    .total_cmp(&a.trans_score)
                    .then_with(|| target.word(a.target).cmp(target.word(b.target)))
            });
            cands.truncate(config.n_tm);
            cands
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_synthetic, SyntheticSpec, SyntheticTask};

    fn toy() -> (SmtModel, crate::corpus::SyntheticData) {
        let data = gen_synthetic(&SyntheticSpec {
            types: 10,
            ..SyntheticSpec::new(SyntheticTask::Lexicon, 300, 7)
        })
        .unwrap();
        let vocab = Vocabulary::build(data.corpus.targets().collect::<Vec<_>>(), 50).unwrap();
        let model = SmtModel::train(
            &data.corpus,
            &vocab,
            StopList::english(),
            SmtConfig::default(),
        )
        .unwrap();
        (model, data)
    }

    #[test]
    fn candidate_table_is_capped_and_sorted() {
        let (model, data) = toy();
        for src in data.dictionary.keys() {
            let c = model.candidates_for(src);
            assert!(!c.is_empty() && c.len() <= model.config.n_tm);
            for w in c.windows(2) {
                assert!(w[0].1.trans_score >= w[1].1.trans_score);
            }
            assert_eq!(c[0].0, data.dictionary[src]);
        }
    }

    #[test]
    fn fully_covered_source_gives_nothing() {
        let (model, data) = toy();
        let src: Vec<String> = data.corpus.pairs()[0].source.clone();
        let mut cv = CoverageVector::new(src.len());
        (0..src.len()).for_each(|i| cv.cover(i));
        assert!(model
            .recommend(&src, &[], None, &cv, LmChoice::UnkMapped)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn save_load_preserves_recommendations() {
        let (model, data) = toy();
        let dir = std::env::temp_dir().join(format!("hmt-smt-{}", std::process::id()));
        model.save(&dir).unwrap();
        let back = SmtModel::load(&dir).unwrap();
        for p in data.corpus.pairs().iter().take(20) {
            let cv = CoverageVector::new(p.source.len());
            let a = model
                .recommend(&p.source, &p.target[..1], None, &cv, LmChoice::UnkMapped)
                .unwrap();
            let b = back
                .recommend(&p.source, &p.target[..1], None, &cv, LmChoice::UnkMapped)
                .unwrap();
            assert_eq!(a, b);
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn stop_list_has_no_numerals() {
        let s = StopList::english();
        assert!(s.contains("the") && s.contains(","));
        for n in ["0", "1", "2", "10", "one", "two"] {
            assert!(!s.contains(n), "{n}");
        }
        assert_eq!(StopList::from_text(&s.to_text()), s);
    }

    #[test]
    fn config_map_round_trip() {
        let c = SmtConfig::default();
        assert_eq!(SmtConfig::from_map(&c.to_map()).unwrap(), c);
    }
}
