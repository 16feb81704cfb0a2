mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hybrid_mt::ablation::{format_table, run_ablation};
use hybrid_mt::corpus::{gen_synthetic, tokenize, ParallelCorpus, SyntheticSpec, SyntheticTask, Vocabulary};
use hybrid_mt::decoder::{trace_lines, translate_all, DecodeOptions};
use hybrid_mt::error::Error;
use hybrid_mt::eval::{bleu, token_accuracy};
use hybrid_mt::model::{GateMode, ModelConfig};
use hybrid_mt::nmt::NmtConfig;
use hybrid_mt::smt::{SmtConfig, SmtModel, StopList};
use hybrid_mt::training::{pretrain, train_hybrid, Phase, TrainConfig, TrainReport};
use hybrid_mt::{selftest, HybridModel};

use manifest::{beside, RunManifest};

/// Vocabulary cap meaning "keep every type".
const ALL_TYPES: usize = usize::MAX / 2;

#[derive(Parser)]
#[command(name = "hybrid-mt", version, about = "Neural translation advised by word-level SMT recommendations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic parallel corpus with train/dev splits.
    GenData(GenData),
    /// Train IBM-1 lexical tables and n-gram language models.
    TrainSmt(TrainSmt),
    /// Train the attention encoder-decoder alone.
    Pretrain(Pretrain),
    /// Attach the advisor to a pre-trained model and train everything.
    TrainHybrid(TrainHybrid),
    /// Beam-search translate a file, one sentence per line.
    Translate(Translate),
    /// Corpus BLEU (and token accuracy with a single reference).
    Evaluate(Evaluate),
    /// Decode a test set under every ablation configuration.
    Ablate(Ablate),
    /// Finite-difference gradient checks of every op and the full model.
    Selftest(Selftest),
}

#[derive(Args, Serialize)]
struct GenData {
    /// copy, lexicon, lexicon_rare, swap or lexicon_rare_swap.
    #[arg(long, default_value = "lexicon")]
    task: String,
    #[arg(long, default_value_t = 2000)]
    pairs: usize,
    #[arg(long, default_value_t = 200)]
    dev_pairs: usize,
    /// Number of source word types.
    #[arg(long)]
    types: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    rare_fraction: Option<f64>,
    #[arg(long)]
    rare_rate: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainSmt {
    /// Directory holding train.src and train.tgt.
    #[arg(long)]
    data: PathBuf,
    /// Take the neural target vocabulary from this checkpoint.
    #[arg(long, conflicts_with = "tgt_vocab")]
    model: Option<PathBuf>,
    /// Otherwise rebuild it from the training targets with this cap.
    #[arg(long)]
    tgt_vocab: Option<usize>,
    /// `english`, `none`, or a file with one word per line.
    #[arg(long, default_value = "english")]
    stoplist: String,
    #[arg(long)]
    ibm_iters: Option<usize>,
    #[arg(long)]
    n_tm: Option<usize>,
    #[arg(long)]
    n_rec: Option<usize>,
    #[arg(long)]
    lm_order: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainFlags {
    /// `key = value` training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write a checkpoint every N epochs into <out>.epochs/.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args, Serialize)]
struct Pretrain {
    /// Directory holding train.* and dev.*.
    #[arg(long)]
    data: PathBuf,
    /// Source vocabulary cap including the three reserved tokens.
    #[arg(long)]
    src_vocab: Option<usize>,
    #[arg(long)]
    tgt_vocab: Option<usize>,
    #[arg(long, default_value_t = 16)]
    emb: usize,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    init_scale: f64,
    #[command(flatten)]
    train: TrainFlags,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainHybrid {
    #[arg(long)]
    data: PathBuf,
    /// Pre-trained checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// SMT directory from train-smt.
    #[arg(long)]
    smt: PathBuf,
    #[arg(long)]
    cls_hidden1: Option<usize>,
    #[arg(long)]
    cls_hidden2: Option<usize>,
    #[arg(long)]
    n_tm: Option<usize>,
    #[arg(long)]
    n_rec: Option<usize>,
    /// Train with the gate pinned to this value.
    #[arg(long, value_parser = parse_gate)]
    fixed_gate: Option<f64>,
    /// Train with random frequent words in place of recommendations.
    #[arg(long)]
    pseudo_recs: bool,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct DecodeFlags {
    #[arg(long, default_value_t = 10)]
    beam: usize,
    /// Output length bound (default 2 * source length + 5).
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct Translate {
    #[arg(long)]
    model: PathBuf,
    /// SMT directory; without it a hybrid model decodes as its encoder-decoder alone.
    #[arg(long)]
    smt: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Pin the gate to this value.
    #[arg(long, value_parser = parse_gate)]
    fixed_gate: Option<f64>,
    #[arg(long)]
    pseudo_recs: bool,
    #[arg(long)]
    no_unk_replace: bool,
    /// Write per-step JSON lines (gate, recommendations, coverage) here.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeFlags,
}

#[derive(Args, Serialize)]
struct Evaluate {
    /// System output, one sentence per line.
    #[arg(long)]
    hyp: PathBuf,
    /// Reference file; repeat for multiple references.
    #[arg(long = "ref", required = true)]
    refs: Vec<PathBuf>,
    #[arg(long)]
    json: bool,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct Ablate {
    /// Pre-trained encoder-decoder (baseline row).
    #[arg(long)]
    nmt: PathBuf,
    #[arg(long)]
    hybrid: PathBuf,
    #[arg(long)]
    smt: PathBuf,
    /// Source side of the test set.
    #[arg(long)]
    src: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[command(flatten)]
    decode: DecodeFlags,
    /// Write the table here (JSON rows go to <out>.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct Selftest {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_gate(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("gate must lie in [0, 1], got {v}"))
    }
}

enum Failure {
    Core(Error),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

type Outcome = Result<(), Failure>;

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(Error::Config(_)) => 1,
            Failure::Core(Error::NonFinite(_)) | Failure::Numeric(_) => 3,
            Failure::Core(_) => 2,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e) => e.to_string(),
            Failure::Numeric(m) => m.clone(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainSmt(a) => train_smt(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::TrainHybrid(a) => train_hybrid_cmd(a),
        Command::Translate(a) => translate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => ablate(a),
        Command::Selftest(a) => selftest_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

fn data_file(dir: &Path, split: &str, side: &str) -> PathBuf {
    dir.join(format!("{split}.{side}"))
}

fn read_split(dir: &Path, split: &str) -> Result<ParallelCorpus, Error> {
    ParallelCorpus::read(data_file(dir, split, "src"), data_file(dir, split, "tgt"))
}

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>, Error> {
    Ok(fs::read_to_string(path)?.lines().map(tokenize).collect())
}

fn gen_data(a: GenData) -> Outcome {
    let mut m = RunManifest::start("gen-data", &a, a.seed)?;
    let task = SyntheticTask::parse(&a.task).map_err(|e| Error::Config(e.to_string()))?;
    if a.pairs == 0 || a.dev_pairs == 0 {
        return Err(Error::Config("--pairs and --dev-pairs must be >= 1".into()).into());
    }
    let mut spec = SyntheticSpec::new(task, a.pairs + a.dev_pairs, a.seed);
    if let Some(v) = a.types {
        spec.types = v;
    }
    if let Some(v) = a.min_len {
        spec.min_len = v;
    }
    if let Some(v) = a.max_len {
        spec.max_len = v;
    }
    if let Some(v) = a.rare_fraction {
        spec.rare_fraction = v;
    }
    if let Some(v) = a.rare_rate {
        spec.rare_rate = v;
    }
    let data = gen_synthetic(&spec).map_err(|e| Error::Config(e.to_string()))?;
    let (train, dev) = data.corpus.split_at(a.pairs);
    fs::create_dir_all(&a.out)?;
    for (split, c) in [("train", &train), ("dev", &dev)] {
        let (s, t) = (data_file(&a.out, split, "src"), data_file(&a.out, split, "tgt"));
        c.write(&s, &t)?;
        m.output(&s);
        m.output(&t);
    }
    let dict: String = data.dictionary.iter().map(|(s, t)| format!("{s}\t{t}\n")).collect();
    let rare: String = data.rare_targets().iter().map(|w| format!("{w}\n")).collect();
    for (name, body) in [("dictionary.tsv", dict), ("rare.txt", rare)] {
        let p = a.out.join(name);
        fs::write(&p, body)?;
        m.output(&p);
    }
    eprintln!(
        "{} train / {} dev pairs; {} source types, {} common (cap {} keeps only common types)",
        train.len(),
        dev.len(),
        spec.types,
        spec.common_types(),
        spec.vocab_cap()
    );
    m.write(&a.out.join("manifest.json"))?;
    Ok(())
}

fn load_stoplist(s: &str) -> Result<StopList, Error> {
    Ok(match s {
        "english" => StopList::english(),
        "none" => StopList::empty(),
        path => StopList::from_text(&fs::read_to_string(path)?),
    })
}

fn train_smt(a: TrainSmt) -> Outcome {
    let mut m = RunManifest::start("train-smt", &a, 0)?;
    let train = read_split(&a.data, "train")?;
    m.input(&data_file(&a.data, "train", "src"))?;
    m.input(&data_file(&a.data, "train", "tgt"))?;
    let tv = match &a.model {
        Some(p) => {
            m.input(p)?;
            HybridModel::load(p)?.tgt_vocab
        }
        None => Vocabulary::build(train.targets(), a.tgt_vocab.unwrap_or(ALL_TYPES))?,
    };
    let stop = load_stoplist(&a.stoplist)?;
    if !matches!(a.stoplist.as_str(), "english" | "none") {
        m.input(Path::new(&a.stoplist))?;
    }
    let mut cfg = SmtConfig::default();
    if let Some(v) = a.ibm_iters {
        cfg.ibm_iters = v;
    }
    if let Some(v) = a.n_tm {
        cfg.n_tm = v;
    }
    if let Some(v) = a.n_rec {
        cfg.n_rec = v;
    }
    if let Some(v) = a.lm_order {
        cfg.lm_order = v;
        cfg.lm_weights = vec![1.0 / v as f64; v];
    }
    let smt = SmtModel::train(&train, &tv, stop, cfg)?;
    smt.save(&a.out)?;
    for f in ["tables.tsv", "stoplist.txt", "smt.ckpt"] {
        m.output(&a.out.join(f));
    }
    m.write(&a.out.join("manifest.json"))?;
    Ok(())
}

fn train_config(flags: &TrainFlags, phase: Phase, out: &Path, m: &mut RunManifest) -> Result<TrainConfig, Error> {
    let mut cfg = match &flags.config {
        Some(p) => {
            m.input(p)?;
            TrainConfig::from_text(&fs::read_to_string(p)?)?
        }
        None => TrainConfig::default(),
    };
    cfg.phase = phase;
    if let Some(v) = flags.epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = flags.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.patience {
        cfg.patience = Some(v);
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.checkpoint_every {
        cfg.checkpoint_every = v;
        let mut dir = out.as_os_str().to_owned();
        dir.push(".epochs");
        cfg.checkpoint_dir = Some(dir.into());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolved(cfg: &TrainConfig, args: &impl Serialize) -> Result<serde_json::Value, Error> {
    Ok(serde_json::json!({ "flags": args, "train": cfg.to_map() }))
}

fn finish_training(
    model: &HybridModel,
    report: &TrainReport,
    out: &Path,
    mut m: RunManifest,
) -> Outcome {
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    model.save(out)?;
    let mut log = out.as_os_str().to_owned();
    log.push(".log.csv");
    let log = PathBuf::from(log);
    fs::write(&log, report.log_text())?;
    m.output(out);
    m.output(&log);
    eprintln!("best epoch {} (dev NLL {:.6})", report.best_epoch, report.best_dev_nll);
    m.write(&beside(out))?;
    Ok(())
}

fn print_epoch(r: &hybrid_mt::training::EpochRecord) {
    eprintln!("epoch {r}");
}

fn pretrain_cmd(a: Pretrain) -> Outcome {
    let mut m = RunManifest::start("pretrain", &a, 0)?;
    let cfg = train_config(&a.train, Phase::Pretrain, &a.out, &mut m)?;
    m.seed = cfg.seed;
    m.config = resolved(&cfg, &a)?;
    let train = read_split(&a.data, "train")?;
    let dev = read_split(&a.data, "dev")?;
    for split in ["train", "dev"] {
        for side in ["src", "tgt"] {
            m.input(&data_file(&a.data, split, side))?;
        }
    }
    let sv = Vocabulary::build(train.sources(), a.src_vocab.unwrap_or(ALL_TYPES))?;
    let tv = Vocabulary::build(train.targets(), a.tgt_vocab.unwrap_or(ALL_TYPES))?;
    if a.emb == 0 || a.hidden == 0 {
        return Err(Error::Config("--emb and --hidden must be >= 1".into()).into());
    }
    let mc = ModelConfig {
        nmt: NmtConfig {
            init_scale: a.init_scale,
            ..NmtConfig::new(0, 0, a.emb, a.hidden)
        },
        advisor: Default::default(),
    };
    let mut model = HybridModel::new_nmt(sv, tv, mc, cfg.seed)?;
    let report = pretrain(&mut model, &train, &dev, &cfg, print_epoch)?;
    finish_training(&model, &report, &a.out, m)
}

fn train_hybrid_cmd(a: TrainHybrid) -> Outcome {
    let mut m = RunManifest::start("train-hybrid", &a, 0)?;
    let mut cfg = train_config(&a.train, Phase::Hybrid, &a.out, &mut m)?;
    if let Some(v) = a.n_tm {
        cfg.n_tm = v;
    }
    if let Some(v) = a.n_rec {
        cfg.n_rec = v;
    }
    if a.fixed_gate.is_some() {
        cfg.fixed_gate = a.fixed_gate;
    }
    cfg.pseudo_recs |= a.pseudo_recs;
    cfg.validate()?;
    m.seed = cfg.seed;
    m.config = resolved(&cfg, &a)?;
    let train = read_split(&a.data, "train")?;
    let dev = read_split(&a.data, "dev")?;
    for split in ["train", "dev"] {
        for side in ["src", "tgt"] {
            m.input(&data_file(&a.data, split, side))?;
        }
    }
    m.input(&a.model)?;
    m.input(&a.smt)?;
    let mut model = HybridModel::load(&a.model)?;
    if model.is_hybrid() {
        return Err(Error::Config("--model must be a pre-trained encoder-decoder".into()).into());
    }
    if let Some(v) = a.cls_hidden1 {
        model.config.advisor.hidden1 = v;
    }
    if let Some(v) = a.cls_hidden2 {
        model.config.advisor.hidden2 = v;
    }
    let smt = SmtModel::load(&a.smt)?;
    let report = train_hybrid(&mut model, &smt, &train, &dev, &cfg, print_epoch)?;
    finish_training(&model, &report, &a.out, m)
}

fn decode_options(d: &DecodeFlags) -> Result<DecodeOptions, Error> {
    if d.beam == 0 {
        return Err(Error::Config("--beam must be >= 1".into()));
    }
    Ok(DecodeOptions {
        beam: d.beam,
        max_len: d.max_len,
        seed: d.seed,
        ..DecodeOptions::default()
    })
}

fn translate(a: Translate) -> Outcome {
    let mut m = RunManifest::start("translate", &a, a.decode.seed)?;
    m.input(&a.model)?;
    m.input(&a.input)?;
    let model = HybridModel::load(&a.model)?;
    let smt = match &a.smt {
        Some(p) => {
            m.input(p)?;
            Some(SmtModel::load(p)?)
        }
        None => None,
    };
    let mut opts = decode_options(&a.decode)?;
    opts.gate = a.fixed_gate.map_or(GateMode::Learned, GateMode::Fixed);
    opts.pseudo_recs = a.pseudo_recs;
    opts.unk_replace = !a.no_unk_replace;
    opts.trace = a.trace.is_some();
    let lines = read_lines(&a.input)?;
    let (idx, sources): (Vec<usize>, Vec<Vec<String>>) =
        lines.iter().enumerate().filter(|(_, l)| !l.is_empty()).map(|(i, l)| (i, l.clone())).unzip();
    let out = translate_all(&model, smt.as_ref(), &sources, &opts)?;
    let mut text = vec![String::new(); lines.len()];
    for (i, t) in idx.iter().zip(&out) {
        text[*i] = t.text();
    }
    fs::write(&a.output, text.iter().map(|l| format!("{l}\n")).collect::<String>())?;
    m.output(&a.output);
    if let Some(p) = &a.trace {
        fs::write(p, trace_lines(&out)?)?;
        m.output(p);
    }
    let forced = out.iter().filter(|t| t.forced_eos).count();
    if forced > 0 {
        eprintln!("{forced} sentence(s) hit the length bound");
    }
    m.write(&beside(&a.output))?;
    Ok(())
}

fn evaluate(a: Evaluate) -> Outcome {
    let mut m = RunManifest::start("evaluate", &a, 0)?;
    let hyp = read_lines(&a.hyp)?;
    m.input(&a.hyp)?;
    let mut refs: Vec<Vec<Vec<String>>> = vec![Vec::new(); hyp.len()];
    for p in &a.refs {
        m.input(p)?;
        let r = read_lines(p)?;
        if r.len() != hyp.len() {
            return Err(Error::Format(format!(
                "{} has {} lines, hypothesis has {}",
                p.display(),
                r.len(),
                hyp.len()
            ))
            .into());
        }
        for (slot, s) in refs.iter_mut().zip(r) {
            slot.push(s);
        }
    }
    let report = bleu(&hyp, &refs)?;
    let accuracy = if a.refs.len() == 1 {
        let single: Vec<Vec<String>> = refs.iter().map(|r| r[0].clone()).collect();
        Some(token_accuracy(&hyp, &single)?)
    } else {
        None
    };
    let body = if a.json {
        let mut v = serde_json::to_value(&report).map_err(Error::from)?;
        v["token_accuracy"] = serde_json::json!(accuracy);
        serde_json::to_string_pretty(&v).map_err(Error::from)? + "\n"
    } else {
        let mut s = report.to_table();
        if let Some(acc) = accuracy {
            s.push_str(&format!("{:<18}{:>10.4}\n", "token accuracy", acc));
        }
        s
    };
    print!("{body}");
    if let Some(p) = &a.out {
        fs::write(p, &body)?;
        m.output(p);
        m.write(&beside(p))?;
    }
    Ok(())
}

fn ablate(a: Ablate) -> Outcome {
    let mut m = RunManifest::start("ablate", &a, a.decode.seed)?;
    for p in [&a.nmt, &a.hybrid, &a.smt, &a.src, &a.reference] {
        m.input(p)?;
    }
    let nmt = HybridModel::load(&a.nmt)?;
    let hybrid = HybridModel::load(&a.hybrid)?;
    let smt = SmtModel::load(&a.smt)?;
    let sources = read_lines(&a.src)?;
    let references = read_lines(&a.reference)?;
    if sources.len() != references.len() {
        return Err(Error::Format("source and reference differ in line count".into()).into());
    }
    let opts = decode_options(&a.decode)?;
    let rows = run_ablation(&nmt, &hybrid, &smt, &sources, &references, &opts)?;
    let table = format_table(&rows);
    print!("{table}");
    if let Some(p) = &a.out {
        fs::write(p, &table)?;
        let mut json = p.as_os_str().to_owned();
        json.push(".json");
        let json = PathBuf::from(json);
        fs::write(&json, serde_json::to_string_pretty(&rows).map_err(Error::from)? + "\n")?;
        m.output(p);
        m.output(&json);
        m.write(&beside(p))?;
    }
    Ok(())
}

fn selftest_cmd(a: Selftest) -> Outcome {
    let mut m = RunManifest::start("selftest", &a, 0)?;
    if a.seeds == 0 {
        return Err(Error::Config("--seeds must be >= 1".into()).into());
    }
    let results = selftest::run(a.seeds)?;
    let mut by_name: BTreeMap<&str, (usize, usize, f64)> = BTreeMap::new();
    for r in &results {
        let e = by_name.entry(&r.name).or_insert((0, 0, 0.0));
        e.0 += 1;
        e.1 += usize::from(r.report.passed);
        e.2 = e.2.max(r.report.max_rel_error);
    }
    println!("{:<16}{:>8}{:>16}", "check", "passed", "max_rel_error");
    for (name, (n, ok, worst)) in &by_name {
        println!("{name:<16}{:>8}{worst:>16.3e}", format!("{ok}/{n}"));
    }
    if let Some(p) = &a.out {
        fs::write(p, serde_json::to_string_pretty(&results).map_err(Error::from)? + "\n")?;
        m.output(p);
        m.write(&beside(p))?;
    }
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.report.passed)
        .map(|r| format!("{} (seed {})", r.name, r.seed))
        .collect();
    if failed.is_empty() {
        println!("all {} checks passed (tolerance {:e})", results.len(), selftest::TOLERANCE);
        Ok(())
    } else {
        Err(Failure::Numeric(format!("gradient check failed: {}", failed.join(", "))))
    }
}
