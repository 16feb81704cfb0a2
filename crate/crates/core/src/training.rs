//! Teacher-forced negative log-likelihood training with Adadelta.
//!
//! Two phases share one loop: pre-training the encoder-decoder alone, then
//! training every parameter of the hybrid with per-step recommendations.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{Fusion, GateMode, HybridModel, PseudoRecs};
use crate::params::ParamStore;
use crate::rng::{derived, Prng};
use crate::scalar::Scalar;
use crate::smt::SmtModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Hybrid,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Phase::Pretrain),
            "hybrid" => Ok(Phase::Hybrid),
            _ => Err(Error::Config(format!("unknown phase {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub phase: Phase,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without a dev improvement.
    pub patience: Option<usize>,
    /// Training pairs longer than this on either side are skipped.
    pub max_len: Option<usize>,
    /// Write `epoch-N.ckpt` every this many epochs (0 = never).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub n_tm: usize,
    pub n_rec: usize,
    pub fixed_gate: Option<f64>,
    pub pseudo_recs: bool,
    pub dropout: bool,
    pub rho: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            phase: Phase::Pretrain,
            batch_size: 16,
            max_epochs: 30,
            seed: 1,
            patience: None,
            max_len: None,
            checkpoint_every: 0,
            checkpoint_dir: None,
            n_tm: 5,
            n_rec: 25,
            fixed_gate: None,
            pseudo_recs: false,
            dropout: false,
            rho: 0.95,
            eps: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch_size and max_epochs must be >= 1".into(),
            ));
        }
        if self.n_tm == 0 || self.n_rec == 0 {
            return Err(Error::Config("n_tm and n_rec must be >= 1".into()));
        }
        if let Some(a) = self.fixed_gate {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!(
                    "fixed_gate must be in [0,1], got {a}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.rho) || self.eps <= 0.0 {
            return Err(Error::Config("need 0 <= rho < 1 and eps > 0".into()));
        }
        Ok(())
    }

    /// Parses flat `key = value` lines; `#` starts a comment. Unknown keys
    /// are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: {v:?}")))
        }
        let opt_usize = |v: &str| -> Result<Option<usize>> {
            if v == "none" {
                Ok(None)
            } else {
                p(key, v).map(Some)
            }
        };
        match key {
            "phase" => self.phase = Phase::parse(value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "max_epochs" => self.max_epochs = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "patience" => self.patience = opt_usize(value)?,
            "max_len" => self.max_len = opt_usize(value)?,
            "checkpoint_every" => self.checkpoint_every = p(key, value)?,
            "checkpoint_dir" => {
                self.checkpoint_dir = if value == "none" {
                    None
                } else {
                    Some(value.into())
                }
            }
            "n_tm" => self.n_tm = p(key, value)?,
            "n_rec" => self.n_rec = p(key, value)?,
            "fixed_gate" => {
                self.fixed_gate = if value == "none" {
                    None
                } else {
                    Some(p(key, value)?)
                }
            }
            "pseudo_recs" => self.pseudo_recs = p(key, value)?,
            "dropout" => self.dropout = p(key, value)?,
            "rho" => self.rho = p(key, value)?,
            "eps" => self.eps = p(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        [
            ("phase", self.phase.name().to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("patience", opt(self.patience.map(|v| v.to_string()))),
            ("max_len", opt(self.max_len.map(|v| v.to_string()))),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            (
                "checkpoint_dir",
                opt(self
                    .checkpoint_dir
                    .as_ref()
                    .map(|p| p.display().to_string())),
            ),
            ("n_tm", self.n_tm.to_string()),
            ("n_rec", self.n_rec.to_string()),
            ("fixed_gate", opt(self.fixed_gate.map(|v| v.to_string()))),
            ("pseudo_recs", self.pseudo_recs.to_string()),
            ("dropout", self.dropout.to_string()),
            ("rho", self.rho.to_string()),
            ("eps", self.eps.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn to_text(&self) -> String {
        self.to_map()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// Per-parameter running averages of squared gradients and updates.
#[derive(Debug, Clone)]
pub struct Adadelta {
    pub rho: f64,
    pub eps: f64,
    pub sq_grad: Vec<Vec<f64>>,
    pub sq_delta: Vec<Vec<f64>>,
}

impl Adadelta {
    pub fn new<T: Scalar>(store: &ParamStore<T>, rho: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adadelta {
            rho,
            eps,
            sq_grad: zeros.clone(),
            sq_delta: zeros,
        }
    }

    /// Applies one update from the gradients held in `store`, then clears
    /// them.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        if ids.len() != self.sq_grad.len() {
            return Err(Error::shape(
                "adadelta",
                &[ids.len()],
                &[self.sq_grad.len()],
            ));
        }
        let (rho, eps) = (self.rho, self.eps);
        for (k, id) in ids.into_iter().enumerate() {
            let t = store.get_mut(id);
            if t.len() != self.sq_grad[k].len() {
                return Err(Error::shape(
                    "adadelta",
                    t.shape(),
                    &[self.sq_grad[k].len()],
                ));
            }
            let grads: Vec<f64> = t
                .grad()
                .ok_or(Error::Empty("parameter gradient"))?
                .iter()
                .map(|g| g.as_f64())
                .collect();
            let eg = &mut self.sq_grad[k];
            let ed = &mut self.sq_delta[k];
            for (i, (x, g)) in t.values_mut().iter_mut().zip(grads).enumerate() {
                eg[i] = rho * eg[i] + (1.0 - rho) * g * g;
                let dx = -((ed[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * g;
                ed[i] = rho * ed[i] + (1.0 - rho) * dx * dx;
                *x += T::of(dx);
            }
            t.zero_grad();
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub dev_nll: f64,
    pub wallclock: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}, {:.6}, {:.6}, {:.3}",
            self.epoch, self.train_nll, self.dev_nll, self.wallclock
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Epoch 0 is the untrained model (train NLL not measured, reported as
    /// NaN).
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_nll: f64,
}

impl TrainReport {
    pub fn log_text(&self) -> String {
        let mut s = String::from("epoch, train_nll, dev_nll, wallclock\n");
        for r in &self.log {
            s.push_str(&format!("{r}\n"));
        }
        s
    }
}

/// Recommendation source for a training phase.
pub struct FusionSpec<'a> {
    pub smt: &'a SmtModel,
    pub gate: GateMode,
    pub pseudo: Option<PseudoRecs>,
}

impl<'a> FusionSpec<'a> {
    pub fn from_config(smt: &'a SmtModel, cfg: &TrainConfig) -> Self {
        FusionSpec {
            smt,
            gate: cfg.fixed_gate.map_or(GateMode::Learned, GateMode::Fixed),
            pseudo: cfg.pseudo_recs.then(|| PseudoRecs::from_smt(smt, 50)),
        }
    }

    pub fn fusion(&self) -> Fusion<'_> {
        Fusion {
            smt: self.smt,
            gate: self.gate,
            pseudo: self.pseudo.as_ref(),
        }
    }
}

/// Teacher-forced NLL of each listed pair, as plain numbers.
pub fn sentence_losses<T: Scalar>(
    model: &HybridModel<T>,
    corpus: &ParallelCorpus,
    indices: &[usize],
    fusion: Option<Fusion<'_>>,
    seed: u64,
) -> Result<Vec<f64>> {
    indices
        .iter()
        .map(|&i| {
            let p = &corpus.pairs()[i];
            let mut g = Graph::new();
            let mut rng = derived(seed, i as u64);
            let loss = model.sentence_nll(&mut g, &p.source, &p.target, fusion, &mut rng, false)?;
            Ok(g.values(loss)[0].as_f64())
        })
        .collect()
}

/// Mean over sentences of the per-sentence NLL.
pub fn nll_loss<T: Scalar>(
    model: &HybridModel<T>,
    corpus: &ParallelCorpus,
    indices: &[usize],
    fusion: Option<Fusion<'_>>,
    seed: u64,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Empty("loss over no sentences"));
    }
    let losses = sentence_losses(model, corpus, indices, fusion, seed)?;
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss over {} sentences",
            indices.len()
        )));
    }
    Ok(mean)
}

/// Accumulates `∇ mean NLL` of the batch into the store's gradient slots
/// and returns the batch mean.
pub fn accumulate_batch<T: Scalar>(
    model: &mut HybridModel<T>,
    corpus: &ParallelCorpus,
    batch: &[usize],
    fusion: Option<Fusion<'_>>,
    rng: &mut Prng,
    dropout: bool,
) -> Result<f64> {
    let scale = T::of(1.0 / batch.len() as f64);
    let mut total = 0.0;
    for &i in batch {
        let p = &corpus.pairs()[i];
        let mut g = Graph::new();
        let loss = model.sentence_nll(&mut g, &p.source, &p.target, fusion, rng, dropout)?;
        let v = g.values(loss)[0].as_f64();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("training loss of pair {i}")));
        }
        total += v;
        let scaled = g.scale(loss, scale)?;
        g.backward(scaled, &mut model.store)?;
    }
    Ok(total / batch.len() as f64)
}

fn trainable_indices(corpus: &ParallelCorpus, max_len: Option<usize>) -> Vec<usize> {
    corpus
        .pairs()
        .iter()
        .enumerate()
        .filter(|(_, p)| max_len.is_none_or(|m| p.source.len() <= m && p.target.len() <= m))
        .map(|(i, _)| i)
        .collect()
}

/// Shared epoch loop. Keeps the parameters with the lowest dev NLL
/// (including the starting point) and restores them at the end.
pub fn train<T: Scalar>(
    model: &mut HybridModel<T>,
    train_set: &ParallelCorpus,
    dev_set: &ParallelCorpus,
    cfg: &TrainConfig,
    fusion: Option<&FusionSpec<'_>>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if dev_set.is_empty() {
        return Err(Error::Empty("dev set"));
    }
    let start = Instant::now();
    let mut order = trainable_indices(train_set, cfg.max_len);
    if order.is_empty() {
        return Err(Error::Empty("training pairs after length filtering"));
    }
    let dev_idx: Vec<usize> = (0..dev_set.len()).collect();
    let dev_seed = cfg.seed ^ 0xDEF;
    let dev_loss =
        |m: &HybridModel<T>| nll_loss(m, dev_set, &dev_idx, fusion.map(|f| f.fusion()), dev_seed);

    let initial = dev_loss(model)?;
    let first = EpochRecord {
        epoch: 0,
        train_nll: f64::NAN,
        dev_nll: initial,
        wallclock: start.elapsed().as_secs_f64(),
    };
    on_epoch(&first);
    let mut log = vec![first];
    let mut best = (0, initial, model.store.clone());
    let mut opt = Adadelta::new(&model.store, cfg.rho, cfg.eps);
    model.store.zero_grads();

    for epoch in 1..=cfg.max_epochs {
        let mut rng = derived(cfg.seed, epoch as u64);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mean = accumulate_batch(
                model,
                train_set,
                batch,
                fusion.map(|f| f.fusion()),
                &mut rng,
                cfg.dropout,
            )?;
            sum += mean * batch.len() as f64;
            opt.step(&mut model.store)?;
        }
        let dev = dev_loss(model)?;
        let rec = EpochRecord {
            epoch,
            train_nll: sum / order.len() as f64,
            dev_nll: dev,
            wallclock: start.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        log.push(rec);
        if dev < best.1 {
            best = (epoch, dev, model.store.clone());
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                std::fs::create_dir_all(dir)?;
                model.save(dir.join(format!("epoch-{epoch}.ckpt")))?;
            }
        }
        if cfg.patience.is_some_and(|p| epoch - best.0 >= p) {
            break;
        }
    }
    model.store = best.2;
    Ok(TrainReport {
        log,
        best_epoch: best.0,
        best_dev_nll: best.1,
    })
}

/// Trains the encoder-decoder alone.
pub fn pretrain<T: Scalar>(
    model: &mut HybridModel<T>,
    train_set: &ParallelCorpus,
    dev_set: &ParallelCorpus,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    if model.is_hybrid() {
        return Err(Error::Config(
            "pre-training expects a model without advisor".into(),
        ));
    }
    train(model, train_set, dev_set, cfg, None, on_epoch)
}

/// Attaches a freshly initialized advisor to a pre-trained model and trains
/// all parameters with recommendations from `smt`.
pub fn train_hybrid<T: Scalar>(
    model: &mut HybridModel<T>,
    smt: &SmtModel,
    train_set: &ParallelCorpus,
    dev_set: &ParallelCorpus,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    if !model.is_hybrid() {
        model.attach_advisor(cfg.seed)?;
    }
    let mut smt = smt.clone();
    smt.config.n_rec = cfg.n_rec;
    if smt.config.n_tm != cfg.n_tm {
        smt.config.n_tm = cfg.n_tm;
        smt.rebuild_candidates();
    }
    let spec = FusionSpec::from_config(&smt, cfg);
    train(model, train_set, dev_set, cfg, Some(&spec), on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_synthetic, SyntheticSpec, SyntheticTask, Vocabulary};
    use crate::model::ModelConfig;
    use crate::nmt::NmtConfig;
    use crate::params::ParamStore;
    use crate::tensor::Tensor;

    #[test]
    fn adadelta_zero_gradient_is_noop() {
        let mut store = ParamStore::<f64>::new();
        store
            .insert("w", Tensor::row(vec![1.0, -2.0]).unwrap())
            .unwrap();
        let mut opt = Adadelta::new(&store, 0.95, 1e-6);
        opt.step(&mut store).unwrap();
        assert_eq!(store.get(store.id("w").unwrap()).values(), &[1.0, -2.0]);
    }

    #[test]
    fn adadelta_first_step() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", Tensor::row(vec![0.0]).unwrap()).unwrap();
        store.get_mut(id).grad_mut().unwrap()[0] = 1.0;
        let mut opt = Adadelta::new(&store, 0.95, 1e-6);
        opt.step(&mut store).unwrap();
        let expect = -(1e-6f64).sqrt() / (0.05f64 + 1e-6).sqrt();
        assert!((store.get(id).values()[0] - expect).abs() < 1e-15);
        assert_eq!(store.get(id).grad().unwrap(), &[0.0]);
    }

    #[test]
    fn adadelta_descends_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .insert("w", Tensor::row(vec![3.0, -2.0, 0.5]).unwrap())
            .unwrap();
        let mut opt = Adadelta::new(&store, 0.95, 1e-6);
        let loss = |s: &ParamStore<f64>| s.get(id).values().iter().map(|v| v * v).sum::<f64>();
        let start = loss(&store);
        for _ in 0..100 {
            let g: Vec<f64> = store.get(id).values().iter().map(|v| 2.0 * v).collect();
            store.get_mut(id).grad_mut().unwrap().copy_from_slice(&g);
            opt.step(&mut store).unwrap();
        }
        assert!(loss(&store) < start);
    }

    fn tiny() -> (HybridModel<f64>, ParallelCorpus) {
        let spec = SyntheticSpec {
            types: 8,
            min_len: 2,
            max_len: 4,
            ..SyntheticSpec::new(SyntheticTask::Lexicon, 40, 2)
        };
        let data = gen_synthetic(&spec).unwrap();
        let sv = Vocabulary::build(data.corpus.sources().collect::<Vec<_>>(), 20).unwrap();
        let tv = Vocabulary::build(data.corpus.targets().collect::<Vec<_>>(), 20).unwrap();
        let cfg = ModelConfig {
            nmt: NmtConfig::new(0, 0, 4, 5),
            advisor: Default::default(),
        };
        (HybridModel::new_nmt(sv, tv, cfg, 3).unwrap(), data.corpus)
    }

    #[test]
    fn uniform_output_costs_log_v() {
        let (mut m, corpus) = tiny();
        for id in [m.nmt.logit_w, m.nmt.logit_b] {
            m.store
                .get_mut(id)
                .values_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let v = m.tgt_vocab.len() as f64;
        let p = &corpus.pairs()[0];
        let loss = nll_loss(&m, &corpus, &[0], None, 0).unwrap();
        let steps = (p.target.len() + 1) as f64;
        assert!((loss / steps - v.ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_loss_is_mean_of_sentence_losses() {
        let (m, corpus) = tiny();
        let idx: Vec<usize> = (0..10).collect();
        let each = sentence_losses(&m, &corpus, &idx, None, 0).unwrap();
        let batch = nll_loss(&m, &corpus, &idx, None, 0).unwrap();
        assert!((batch - each.iter().sum::<f64>() / 10.0).abs() < 1e-10);
        let mut rev = idx.clone();
        rev.reverse();
        assert!((nll_loss(&m, &corpus, &rev, None, 0).unwrap() - batch).abs() < 1e-10);
    }

    #[test]
    fn config_text_round_trip() {
        let mut c = TrainConfig {
            fixed_gate: Some(0.2),
            patience: Some(3),
            ..Default::default()
        };
        c.phase = Phase::Hybrid;
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
        assert!(TrainConfig::from_text("bogus = 1").is_err());
        assert!(TrainConfig::from_text("n_rec = 0").is_err());
        assert!(
            TrainConfig::from_text("# comment\nseed = 9 # trailing\n")
                .unwrap()
                .seed
                == 9
        );
    }

    #[test]
    fn pretraining_is_deterministic_and_never_worse() {
        let (m0, corpus) = tiny();
        let (train_set, dev_set) = corpus.split_at(30);
        let cfg = TrainConfig {
            max_epochs: 3,
            batch_size: 8,
            ..Default::default()
        };
        let run = || {
            let mut m = m0.clone();
            let r = pretrain(&mut m, &train_set, &dev_set, &cfg, |_| {}).unwrap();
            (m.to_checkpoint().to_bytes().unwrap(), r)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(
            ra.log
                .iter()
                .map(|r| r.dev_nll.to_bits())
                .collect::<Vec<_>>(),
            rb.log
                .iter()
                .map(|r| r.dev_nll.to_bits())
                .collect::<Vec<_>>()
        );
        assert!(ra.best_dev_nll <= ra.log[0].dev_nll);
    }
}
