//! Parallel corpora, vocabularies, batching and synthetic tasks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{seeded, Prng};

pub const UNK: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
const RESERVED: [&str; 3] = [UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];

/// Frequency-capped token/id map with reserved `<unk>`, `<s>`, `</s>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `cap - 3` most frequent tokens; ties go to the token seen first.
    pub fn build<'a, I, S>(sentences: I, cap: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        if cap < 4 {
            return Err(Error::Invalid(format!(
                "vocabulary cap must be >= 4, got {cap}"
            )));
        }
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut order = 0;
        for sent in sentences {
            for tok in sent.as_ref() {
                if RESERVED.contains(&tok.as_str()) {
                    continue;
                }
                let e = counts.entry(tok.as_str()).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                e.0 += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Empty("vocabulary corpus"));
        }
        let mut ranked: Vec<(&str, usize, usize)> =
            counts.into_iter().map(|(t, (c, o))| (t, c, o)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(
                ranked
                    .into_iter()
                    .take(cap - 3)
                    .map(|(t, _, _)| t.to_string()),
            )
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn encode_all(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.encode(t)).collect()
    }

    pub fn decode(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK_TOKEN, String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Fraction of running tokens that are in the vocabulary.
    pub fn coverage<'a, I>(&self, sentences: I) -> f64
    where
        I: IntoIterator<Item = &'a Vec<String>>,
    {
        let (mut hit, mut total) = (0usize, 0usize);
        for s in sentences {
            total += s.len();
            hit += s.iter().filter(|t| self.contains(t)).count();
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }

    /// One token per line, id order.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < 3 || tokens[..3] != RESERVED {
            return Err(Error::Format(
                "vocabulary must start with reserved tokens".into(),
            ));
        }
        let v = Self::from_tokens(tokens);
        if v.index.len() != v.tokens.len() {
            return Err(Error::Format("duplicate vocabulary entry".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParallelCorpus {
    pairs: Vec<SentencePair>,
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<SentencePair>) -> Result<Self> {
        if let Some(i) = pairs
            .iter()
            .position(|p| p.source.is_empty() || p.target.is_empty())
        {
            return Err(Error::Invalid(format!("empty sentence in pair {i}")));
        }
        Ok(ParallelCorpus { pairs })
    }

    pub fn from_lines(source: &str, target: &str) -> Result<Self> {
        let src: Vec<&str> = source.lines().collect();
        let tgt: Vec<&str> = target.lines().collect();
        if src.len() != tgt.len() {
            return Err(Error::Format(format!(
                "parallel files differ in length: {} vs {}",
                src.len(),
                tgt.len()
            )));
        }
        Self::new(
            src.iter()
                .zip(&tgt)
                .map(|(s, t)| SentencePair {
                    source: tokenize(s),
                    target: tokenize(t),
                })
                .collect(),
        )
    }

    pub fn read(source: impl AsRef<Path>, target: impl AsRef<Path>) -> Result<Self> {
        Self::from_lines(&fs::read_to_string(source)?, &fs::read_to_string(target)?)
    }

    pub fn write(&self, source: impl AsRef<Path>, target: impl AsRef<Path>) -> Result<()> {
        let join = |f: fn(&SentencePair) -> &Vec<String>| {
            self.pairs
                .iter()
                .map(|p| f(p).join(" ") + "\n")
                .collect::<String>()
        };
        fs::write(source, join(|p| &p.source))?;
        fs::write(target, join(|p| &p.target))?;
        Ok(())
    }

    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &Vec<String>> {
        self.pairs.iter().map(|p| &p.source)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Vec<String>> {
        self.pairs.iter().map(|p| &p.target)
    }

    /// Splits off the first `head` pairs.
    /// Same pairs with source and target exchanged.
    pub fn swapped(&self) -> ParallelCorpus {
        ParallelCorpus {
            pairs: self
                .pairs
                .iter()
                .map(|p| SentencePair {
                    source: p.target.clone(),
                    target: p.source.clone(),
                })
                .collect(),
        }
    }

    pub fn split_at(&self, head: usize) -> (ParallelCorpus, ParallelCorpus) {
        let head = head.min(self.pairs.len());
        (
            ParallelCorpus {
                pairs: self.pairs[..head].to_vec(),
            },
            ParallelCorpus {
                pairs: self.pairs[head..].to_vec(),
            },
        )
    }
}

/// Padded id matrices for a group of sentence pairs.
///
/// Targets are wrapped as `<s> ... </s>`. Padding uses id 0 and is marked
/// `false` in the masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub src: Vec<Vec<usize>>,
    pub src_lens: Vec<usize>,
    pub tgt: Vec<Vec<usize>>,
    pub tgt_lens: Vec<usize>,
    pub src_mask: Vec<Vec<bool>>,
    pub tgt_mask: Vec<Vec<bool>>,
    /// Index of each row's pair in the originating corpus.
    pub pair_index: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn src_ids(&self, row: usize) -> &[usize] {
        &self.src[row][..self.src_lens[row]]
    }

    pub fn tgt_ids(&self, row: usize) -> &[usize] {
        &self.tgt[row][..self.tgt_lens[row]]
    }

    pub fn num_tokens(&self) -> usize {
        self.src_lens.iter().sum::<usize>() + self.tgt_lens.iter().sum::<usize>()
    }
}

fn pad(rows: &[Vec<usize>]) -> (Vec<Vec<usize>>, Vec<usize>, Vec<Vec<bool>>) {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    let lens = rows.iter().map(Vec::len).collect();
    let mask = rows
        .iter()
        .map(|r| (0..width).map(|j| j < r.len()).collect())
        .collect();
    let padded = rows
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.resize(width, UNK);
            r
        })
        .collect();
    (padded, lens, mask)
}

/// Groups pairs into batches.
///
/// With `max_len`, pairs where either side is longer are dropped (training
/// data only). With an RNG the pair order is shuffled first.
pub fn make_batches(
    corpus: &ParallelCorpus,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    batch_size: usize,
    max_len: Option<usize>,
    rng: Option<&mut Prng>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Invalid("batch size must be >= 1".into()));
    }
    let mut keep: Vec<usize> = corpus
        .pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| max_len.is_none_or(|m| p.source.len() <= m && p.target.len() <= m))
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::Empty("all sentence pairs were filtered out"));
    }
    if let Some(rng) = rng {
        keep.shuffle(rng);
    }
    Ok(keep
        .chunks(batch_size)
        .map(|chunk| {
            let srcs: Vec<Vec<usize>> = chunk
                .iter()
                .map(|&i| src_vocab.encode_all(&corpus.pairs[i].source))
                .collect();
            let tgts: Vec<Vec<usize>> = chunk
                .iter()
                .map(|&i| {
                    let mut t = vec![BOS];
                    t.extend(tgt_vocab.encode_all(&corpus.pairs[i].target));
                    t.push(EOS);
                    t
                })
                .collect();
            let (src, src_lens, src_mask) = pad(&srcs);
            let (tgt, tgt_lens, tgt_mask) = pad(&tgts);
            Batch {
                src,
                src_lens,
                tgt,
                tgt_lens,
                src_mask,
                tgt_mask,
                pair_index: chunk.to_vec(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticTask {
    /// target = source.
    Copy,
    /// target[i] = D(source[i]) for a fixed bijection D.
    Lexicon,
    /// Lexicon where some source types are rare enough to fall outside the
    /// neural vocabulary.
    LexiconRare,
    /// Lexicon, then adjacent pairs swapped at even positions.
    Swap,
    /// Rare-word lexicon with the swap reordering.
    LexiconRareSwap,
}

impl SyntheticTask {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "copy" => SyntheticTask::Copy,
            "lexicon" => SyntheticTask::Lexicon,
            "lexicon_rare" => SyntheticTask::LexiconRare,
            "swap" => SyntheticTask::Swap,
            "lexicon_rare_swap" | "lexicon_rare+swap" => SyntheticTask::LexiconRareSwap,
            other => return Err(Error::Invalid(format!("unknown synthetic task {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SyntheticTask::Copy => "copy",
            SyntheticTask::Lexicon => "lexicon",
            SyntheticTask::LexiconRare => "lexicon_rare",
            SyntheticTask::Swap => "swap",
            SyntheticTask::LexiconRareSwap => "lexicon_rare_swap",
        }
    }

    fn has_rare(self) -> bool {
        matches!(
            self,
            SyntheticTask::LexiconRare | SyntheticTask::LexiconRareSwap
        )
    }

    fn swaps(self) -> bool {
        matches!(self, SyntheticTask::Swap | SyntheticTask::LexiconRareSwap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub task: SyntheticTask,
    pub n: usize,
    pub seed: u64,
    /// Total number of source word types.
    pub types: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of types that are rare (rare tasks only).
    pub rare_fraction: f64,
    /// Probability that a sentence carries one rare word (rare tasks only).
    pub rare_rate: f64,
}

impl SyntheticSpec {
    pub fn new(task: SyntheticTask, n: usize, seed: u64) -> Self {
        SyntheticSpec {
            task,
            n,
            seed,
            types: 47,
            min_len: 3,
            max_len: 8,
            rare_fraction: 0.1,
            rare_rate: 0.3,
        }
    }

    pub fn rare_types(&self) -> usize {
        if self.task.has_rare() {
            ((self.types as f64 * self.rare_fraction).round() as usize).max(1)
        } else {
            0
        }
    }

    pub fn common_types(&self) -> usize {
        self.types - self.rare_types()
    }

    /// Vocabulary cap that admits every common type and no rare one.
    pub fn vocab_cap(&self) -> usize {
        self.common_types() + 3
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub corpus: ParallelCorpus,
    /// Source word to target word.
    pub dictionary: BTreeMap<String, String>,
    pub rare_sources: BTreeSet<String>,
}

impl SyntheticData {
    /// Target-side translations of the rare source types.
    pub fn rare_targets(&self) -> BTreeSet<String> {
        self.rare_sources
            .iter()
            .map(|s| self.dictionary[s].clone())
            .collect()
    }
}

/// Applies the task's target rule to a source sentence.
pub fn translate_synthetic(
    task: SyntheticTask,
    dictionary: &BTreeMap<String, String>,
    source: &[String],
) -> Vec<String> {
    let mut out: Vec<String> = source.iter().map(|w| dictionary[w].clone()).collect();
    if task.swaps() {
        for pair in out.chunks_mut(2) {
            if pair.len() == 2 {
                pair.swap(0, 1);
            }
        }
    }
    out
}

/// Deterministic synthetic parallel corpus.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.n == 0 {
        return Err(Error::Invalid("synthetic corpus size must be >= 1".into()));
    }
    if spec.types < 2 || spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::Invalid("bad synthetic spec".into()));
    }
    let mut rng = seeded(spec.seed);
    let sources: Vec<String> = (0..spec.types).map(|i| format!("s{i}")).collect();
    let dictionary: BTreeMap<String, String> = if spec.task == SyntheticTask::Copy {
        sources.iter().map(|s| (s.clone(), s.clone())).collect()
    } else {
        let mut perm: Vec<usize> = (0..spec.types).collect();
        perm.shuffle(&mut rng);
        sources
            .iter()
            .zip(perm)
            .map(|(s, j)| (s.clone(), format!("t{j}")))
            .collect()
    };
    let common = spec.common_types();
    let rare_sources: BTreeSet<String> = sources[common..].iter().cloned().collect();
    let mut pairs = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mut src: Vec<String> = (0..len)
            .map(|_| sources[rng.random_range(0..common)].clone())
            .collect();
        if !rare_sources.is_empty() && rng.random_bool(spec.rare_rate) {
            let pos = rng.random_range(0..len);
            src[pos] = sources[rng.random_range(common..spec.types)].clone();
        }
        let tgt = translate_synthetic(spec.task, &dictionary, &src);
        pairs.push(SentencePair {
            source: src,
            target: tgt,
        });
    }
    Ok(SyntheticData {
        corpus: ParallelCorpus::new(pairs)?,
        dictionary,
        rare_sources,
    })
}
