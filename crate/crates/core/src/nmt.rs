//! Attention encoder-decoder: bidirectional GRU encoder, additive attention
//! fed with the previous context, GRU decoder and a one-hidden-layer tanh
//! output classifier over the target vocabulary.
//!
//! Every function builds onto a caller-owned [`Graph`], so the same code
//! serves teacher-forced training and beam-search inference.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use crate::rng::Prng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct NmtConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    /// Embedding width `e`.
    pub emb: usize,
    /// Recurrent state width `d`; annotations have width `2d`.
    pub hidden: usize,
    /// Attention MLP width.
    pub att: usize,
    /// Output-layer hidden width.
    pub out_hidden: usize,
    /// Uniform initialization half-width.
    pub init_scale: f64,
    /// Dropout rate on the output hidden layer (training only, 0 = off).
    pub dropout: f64,
}

impl NmtConfig {
    pub fn new(src_vocab: usize, tgt_vocab: usize, emb: usize, hidden: usize) -> Self {
        NmtConfig {
            src_vocab,
            tgt_vocab,
            emb,
            hidden,
            att: hidden,
            out_hidden: emb,
            init_scale: 0.1,
            dropout: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            self.src_vocab,
            self.tgt_vocab,
            self.emb,
            self.hidden,
            self.att,
            self.out_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("all model dimensions must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Gated recurrent unit with fused input/recurrent projections.
#[derive(Debug, Clone, Copy)]
pub struct Gru {
    /// `in x 3d`: update, reset and candidate blocks.
    pub w: ParamId,
    pub b: ParamId,
    /// `d x 2d`: recurrent update and reset blocks.
    pub u_zr: ParamId,
    /// `d x d`: recurrent candidate block.
    pub u_h: ParamId,
    pub dim: usize,
}

impl Gru {
    fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        dim: usize,
        scale: f64,
        rng: &mut Prng,
    ) -> Result<Self> {
        Ok(Gru {
            w: store.uniform(&format!("{name}.w"), input, 3 * dim, scale, rng)?,
            b: store.zeros(&format!("{name}.b"), 1, 3 * dim)?,
            u_zr: store.uniform(&format!("{name}.u_zr"), dim, 2 * dim, scale, rng)?,
            u_h: store.uniform(&format!("{name}.u_h"), dim, dim, scale, rng)?,
            dim,
        })
    }

    fn lookup<T: Scalar>(
        store: &ParamStore<T>,
        name: &str,
        input: usize,
        dim: usize,
    ) -> Result<Self> {
        Ok(Gru {
            w: expect(store, &format!("{name}.w"), input, 3 * dim)?,
            b: expect(store, &format!("{name}.b"), 1, 3 * dim)?,
            u_zr: expect(store, &format!("{name}.u_zr"), dim, 2 * dim)?,
            u_h: expect(store, &format!("{name}.u_h"), dim, dim)?,
            dim,
        })
    }

    /// Input projections `x W + b` for every row of `x` at once.
    pub fn project<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: NodeId,
    ) -> Result<NodeId> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.affine(x, w, Some(b))
    }

    /// One step from a projected input row `gx` (`1 x 3d`):
    /// `z = σ(..)`, `r = σ(..)`, `h~ = tanh(gx_h + (r∘h) U_h)`,
    /// `h' = h + z∘(h~ − h)`.
    pub fn step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        gx: NodeId,
        h: NodeId,
    ) -> Result<NodeId> {
        let d = self.dim;
        let u_zr = g.param(store, self.u_zr);
        let u_h = g.param(store, self.u_h);
        let gh = g.affine(h, u_zr, None)?;
        let zr_x = g.cols(gx, &(0..2 * d).collect::<Vec<_>>())?;
        let zr_pre = g.add(zr_x, gh)?;
        let zr = g.sigmoid(zr_pre)?;
        let z = g.cols(zr, &(0..d).collect::<Vec<_>>())?;
        let r = g.cols(zr, &(d..2 * d).collect::<Vec<_>>())?;
        let rh = g.mul(r, h)?;
        let cand_x = g.cols(gx, &(2 * d..3 * d).collect::<Vec<_>>())?;
        let cand_h = g.affine(rh, u_h, None)?;
        let cand_pre = g.add(cand_x, cand_h)?;
        let cand = g.tanh(cand_pre)?;
        let delta = g.sub(cand, h)?;
        let upd = g.mul(z, delta)?;
        g.add(h, upd)
    }
}

/// Parameter handles of the encoder-decoder.
#[derive(Debug, Clone)]
pub struct Nmt {
    pub config: NmtConfig,
    pub src_emb: ParamId,
    /// Shared with the recommendation classifier.
    pub tgt_emb: ParamId,
    pub enc_fwd: Gru,
    pub enc_bwd: Gru,
    pub w_init: ParamId,
    pub att_w: ParamId,
    pub att_u: ParamId,
    pub att_c: ParamId,
    pub att_v: ParamId,
    pub dec: Gru,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub logit_w: ParamId,
    pub logit_b: ParamId,
}

/// Encoder result for one source sentence.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `T x 2d` rows `[fwd_j ; bwd_j]`.
    pub annotations: NodeId,
    /// `T x att` precomputed `h_j U` attention term.
    pub keys: NodeId,
    /// Backward state at the first source position.
    pub bwd_first: NodeId,
    pub len: usize,
}

/// Result of one decoder step.
#[derive(Debug, Clone, Copy)]
pub struct DecoderStep {
    /// `1 x T` attention weights.
    pub attention: NodeId,
    /// `1 x 2d`.
    pub context: NodeId,
    /// `1 x d`.
    pub state: NodeId,
    /// `1 x (d + e + 2d)` row `[s_t ; emb(y_prev) ; c_t]`.
    pub query: NodeId,
    /// `1 x V` output distribution.
    pub probs: NodeId,
}

fn expect<T: Scalar>(
    store: &ParamStore<T>,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<ParamId> {
    let id = store
        .id(name)
        .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
    let t = store.get(id);
    if t.rows() != rows || t.cols() != cols {
        return Err(Error::Format(format!(
            "parameter {name} has shape {:?}, expected [{rows}, {cols}]",
            t.shape()
        )));
    }
    Ok(id)
}

impl Nmt {
    /// Registers freshly initialized parameters (biases start at zero).
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        config: &NmtConfig,
        rng: &mut Prng,
    ) -> Result<Self> {
        config.validate()?;
        let c = config;
        let s = c.init_scale;
        let (e, d) = (c.emb, c.hidden);
        Ok(Nmt {
            config: c.clone(),
            src_emb: store.uniform("src_emb", c.src_vocab, e, s, rng)?,
            tgt_emb: store.uniform("tgt_emb", c.tgt_vocab, e, s, rng)?,
            enc_fwd: Gru::register(store, "enc_fwd", e, d, s, rng)?,
            enc_bwd: Gru::register(store, "enc_bwd", e, d, s, rng)?,
            w_init: store.uniform("dec_init", d, d, s, rng)?,
            att_w: store.uniform("att_w", d, c.att, s, rng)?,
            att_u: store.uniform("att_u", 2 * d, c.att, s, rng)?,
            att_c: store.uniform("att_c", 2 * d, c.att, s, rng)?,
            att_v: store.uniform("att_v", c.att, 1, s, rng)?,
            dec: Gru::register(store, "dec", e + 2 * d, d, s, rng)?,
            out_w: store.uniform("out_w", d + e + 2 * d, c.out_hidden, s, rng)?,
            out_b: store.zeros("out_b", 1, c.out_hidden)?,
            logit_w: store.uniform("logit_w", c.out_hidden, c.tgt_vocab, s, rng)?,
            logit_b: store.zeros("logit_b", 1, c.tgt_vocab)?,
        })
    }

    /// Resolves handles in a loaded store, checking every shape.
    pub fn lookup<T: Scalar>(store: &ParamStore<T>, config: &NmtConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let (e, d) = (c.emb, c.hidden);
        Ok(Nmt {
            config: c.clone(),
            src_emb: expect(store, "src_emb", c.src_vocab, e)?,
            tgt_emb: expect(store, "tgt_emb", c.tgt_vocab, e)?,
            enc_fwd: Gru::lookup(store, "enc_fwd", e, d)?,
            enc_bwd: Gru::lookup(store, "enc_bwd", e, d)?,
            w_init: expect(store, "dec_init", d, d)?,
            att_w: expect(store, "att_w", d, c.att)?,
            att_u: expect(store, "att_u", 2 * d, c.att)?,
            att_c: expect(store, "att_c", 2 * d, c.att)?,
            att_v: expect(store, "att_v", c.att, 1)?,
            dec: Gru::lookup(store, "dec", e + 2 * d, d)?,
            out_w: expect(store, "out_w", d + e + 2 * d, c.out_hidden)?,
            out_b: expect(store, "out_b", 1, c.out_hidden)?,
            logit_w: expect(store, "logit_w", c.out_hidden, c.tgt_vocab)?,
            logit_b: expect(store, "logit_b", 1, c.tgt_vocab)?,
        })
    }

    fn check_ids(ids: &[usize], size: usize, what: &'static str) -> Result<()> {
        match ids.iter().find(|&&i| i >= size) {
            Some(&bad) => Err(Error::OutOfRange {
                what,
                index: bad,
                size,
            }),
            None => Ok(()),
        }
    }

    /// Target embedding rows for `ids`.
    pub fn embed_target<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        ids: &[usize],
    ) -> Result<NodeId> {
        Self::check_ids(ids, self.config.tgt_vocab, "target id")?;
        let emb = g.param(store, self.tgt_emb);
        g.rows(emb, ids)
    }

    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        src: &[usize],
    ) -> Result<Encoded> {
        if src.is_empty() {
            return Err(Error::Empty("source sentence"));
        }
        Self::check_ids(src, self.config.src_vocab, "source id")?;
        let d = self.config.hidden;
        let emb = g.param(store, self.src_emb);
        let x = g.rows(emb, src)?;
        let gx_f = self.enc_fwd.project(g, store, x)?;
        let gx_b = self.enc_bwd.project(g, store, x)?;
        let n = src.len();
        let mut fwd = Vec::with_capacity(n);
        let mut h = g.zeros(1, d)?;
        for j in 0..n {
            let row = g.rows(gx_f, &[j])?;
            h = self.enc_fwd.step(g, store, row, h)?;
            fwd.push(h);
        }
        let mut bwd = vec![h; n];
        let mut h = g.zeros(1, d)?;
        for j in (0..n).rev() {
            let row = g.rows(gx_b, &[j])?;
            h = self.enc_bwd.step(g, store, row, h)?;
            bwd[j] = h;
        }
        let f = g.concat_rows(&fwd)?;
        let b = g.concat_rows(&bwd)?;
        let annotations = g.concat_cols(&[f, b])?;
        let att_u = g.param(store, self.att_u);
        let keys = g.affine(annotations, att_u, None)?;
        Ok(Encoded {
            annotations,
            keys,
            bwd_first: bwd[0],
            len: n,
        })
    }

    /// `s_0 = tanh(bwd_1 W_init)`.
    pub fn init_state<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        enc: &Encoded,
    ) -> Result<NodeId> {
        let w = g.param(store, self.w_init);
        let pre = g.affine(enc.bwd_first, w, None)?;
        g.tanh(pre)
    }

    /// Zero context used before the first step.
    pub fn init_context<T: Scalar>(&self, g: &mut Graph<T>) -> Result<NodeId> {
        g.zeros(1, 2 * self.config.hidden)
    }

    /// `e_j = v·tanh(s_prev W + h_j U + c_prev C)`, `α = softmax(e)` over
    /// unmasked positions, `c = Σ α_j h_j`.
    pub fn attend<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        enc: &Encoded,
        s_prev: NodeId,
        c_prev: NodeId,
        mask: Option<&[bool]>,
    ) -> Result<(NodeId, NodeId)> {
        let w = g.param(store, self.att_w);
        let c = g.param(store, self.att_c);
        let v = g.param(store, self.att_v);
        let qs = g.affine(s_prev, w, None)?;
        let qc = g.affine(c_prev, c, None)?;
        let q = g.add(qs, qc)?;
        let q = g.rows(q, &vec![0; enc.len])?;
        let pre = g.add(q, enc.keys)?;
        let act = g.tanh(pre)?;
        let energy = g.affine(act, v, None)?;
        let energy = g.reshape(energy, 1, enc.len)?;
        let alpha = g.softmax_masked(energy, mask)?;
        let ctx = g.affine(alpha, enc.annotations, None)?;
        Ok((alpha, ctx))
    }

    /// Attention, recurrent update and output distribution for one target
    /// position. `dropout` supplies the RNG for training-time dropout.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        enc: &Encoded,
        s_prev: NodeId,
        c_prev: NodeId,
        y_prev: usize,
        mask: Option<&[bool]>,
        dropout: Option<&mut Prng>,
    ) -> Result<DecoderStep> {
        let (attention, context) = self.attend(g, store, enc, s_prev, c_prev, mask)?;
        let emb = self.embed_target(g, store, &[y_prev])?;
        let input = g.concat_cols(&[emb, context])?;
        let gx = self.dec.project(g, store, input)?;
        let state = self.dec.step(g, store, gx, s_prev)?;
        let query = g.concat_cols(&[state, emb, context])?;
        let ow = g.param(store, self.out_w);
        let ob = g.param(store, self.out_b);
        let pre = g.affine(query, ow, Some(ob))?;
        let mut hid = g.tanh(pre)?;
        if let Some(rng) = dropout {
            let p = self.config.dropout;
            if p > 0.0 {
                let keep = T::of(1.0 / (1.0 - p));
                let mask: Vec<T> = (0..self.config.out_hidden)
                    .map(|_| if rng.random_bool(p) { T::zero() } else { keep })
                    .collect();
                let m = g.constant(Tensor::row(mask)?);
                hid = g.mul(hid, m)?;
            }
        }
        let lw = g.param(store, self.logit_w);
        let lb = g.param(store, self.logit_b);
        let logits = g.affine(hid, lw, Some(lb))?;
        let probs = g.softmax_rows(logits)?;
        Ok(DecoderStep {
            attention,
            context,
            state,
            query,
            probs,
        })
    }

    /// Width of [`DecoderStep::query`].
    pub fn query_dim(&self) -> usize {
        3 * self.config.hidden + self.config.emb
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn tiny() -> (ParamStore<f64>, Nmt) {
        let mut store = ParamStore::new();
        let cfg = NmtConfig {
            init_scale: 0.5,
            ..NmtConfig::new(7, 9, 4, 6)
        };
        let nmt = Nmt::register(&mut store, &cfg, &mut seeded(1)).unwrap();
        (store, nmt)
    }

    fn rowv(g: &Graph<f64>, n: NodeId) -> Vec<f64> {
        g.values(n).to_vec()
    }

    #[test]
    fn single_token_source() {
        let (store, nmt) = tiny();
        let mut g = Graph::new();
        let enc = nmt.encode(&mut g, &store, &[3]).unwrap();
        assert_eq!(g.shape(enc.annotations), &[1, 12]);
        let s0 = nmt.init_state(&mut g, &store, &enc).unwrap();
        assert_eq!(g.shape(s0), &[1, 6]);
        let c0 = nmt.init_context(&mut g).unwrap();
        let (a, c) = nmt.attend(&mut g, &store, &enc, s0, c0, None).unwrap();
        assert_eq!(rowv(&g, a), vec![1.0]);
        assert_eq!(rowv(&g, c), rowv(&g, enc.annotations));
    }

    #[test]
    fn zero_weights_give_zero_annotations() {
        let (mut store, nmt) = tiny();
        for id in store.ids().collect::<Vec<_>>() {
            store
                .get_mut(id)
                .values_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let enc = nmt.encode(&mut g, &store, &[1, 2, 3]).unwrap();
        assert!(g.values(enc.annotations).iter().all(|&v| v == 0.0));
        let s0 = nmt.init_state(&mut g, &store, &enc).unwrap();
        assert!(g.values(s0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_sweep_mirrors_forward_sweep() {
        let (store, nmt) = tiny();
        let mut swapped = store.clone();
        for part in ["w", "b", "u_zr", "u_h"] {
            let f = store
                .get(store.id(&format!("enc_fwd.{part}")).unwrap())
                .clone();
            let b = store
                .get(store.id(&format!("enc_bwd.{part}")).unwrap())
                .clone();
            *swapped.get_mut(swapped.id(&format!("enc_fwd.{part}")).unwrap()) = b;
            *swapped.get_mut(swapped.id(&format!("enc_bwd.{part}")).unwrap()) = f;
        }
        let src = [1, 4, 2, 6, 5];
        let rev: Vec<usize> = src.iter().rev().copied().collect();
        // Parameter leaves are cached per graph, so each store needs its own.
        let (mut g1, mut g2) = (Graph::new(), Graph::new());
        let a = nmt.encode(&mut g1, &store, &src).unwrap();
        let b = nmt.encode(&mut g2, &swapped, &rev).unwrap();
        let (av, bv) = (
            g1.value(a.annotations).clone(),
            g2.value(b.annotations).clone(),
        );
        for j in 0..5 {
            let fwd_x = &av.row_slice(j)[..6];
            let bwd_rev = &bv.row_slice(4 - j)[6..];
            for (p, q) in fwd_x.iter().zip(bwd_rev) {
                assert!((p - q).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_annotations_give_uniform_attention() {
        let (store, nmt) = tiny();
        let mut g = Graph::new();
        // The same token everywhere does not make annotations identical
        // (recurrence), so build the encoder output by hand.
        let row: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let ann: Vec<f64> = (0..4).flat_map(|_| row.clone()).collect();
        let annotations = g.constant(Tensor::matrix(4, 12, ann).unwrap());
        let u = g.param(&store, nmt.att_u);
        let keys = g.affine(annotations, u, None).unwrap();
        let enc = Encoded {
            annotations,
            keys,
            bwd_first: annotations,
            len: 4,
        };
        let s = g.constant_row(vec![0.3; 6]).unwrap();
        let c = g.constant_row(vec![0.1; 12]).unwrap();
        let (a, _) = nmt.attend(&mut g, &store, &enc, s, c, None).unwrap();
        for v in g.values(a) {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn context_matches_explicit_sum_and_masking() {
        let (store, nmt) = tiny();
        let mut g = Graph::new();
        let enc = nmt.encode(&mut g, &store, &[1, 2, 3, 4]).unwrap();
        let s0 = nmt.init_state(&mut g, &store, &enc).unwrap();
        let c0 = nmt.init_context(&mut g).unwrap();
        let mask = [true, true, true, false];
        let (a, c) = nmt
            .attend(&mut g, &store, &enc, s0, c0, Some(&mask))
            .unwrap();
        let alpha = rowv(&g, a);
        assert_eq!(alpha[3], 0.0);
        assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let ann = g.value(enc.annotations).clone();
        let mut expect = vec![0.0; 12];
        for (j, w) in alpha.iter().enumerate() {
            for (k, e) in expect.iter_mut().enumerate() {
                *e += w * ann.at(j, k);
            }
        }
        for (x, y) in rowv(&g, c).iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(nmt
            .attend(&mut g, &store, &enc, s0, c0, Some(&[false; 4]))
            .is_err());
    }

    #[test]
    fn decode_step_distribution_normalizes() {
        let (store, nmt) = tiny();
        let mut g = Graph::new();
        let enc = nmt.encode(&mut g, &store, &[5, 2]).unwrap();
        let mut s = nmt.init_state(&mut g, &store, &enc).unwrap();
        let mut c = nmt.init_context(&mut g).unwrap();
        for y in [1, 4, 8] {
            let step = nmt
                .decode_step(&mut g, &store, &enc, s, c, y, None, None)
                .unwrap();
            assert_eq!(g.shape(step.probs), &[1, 9]);
            assert!((g.values(step.probs).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(g.shape(step.query), &[1, nmt.query_dim()]);
            s = step.state;
            c = step.context;
        }
    }

    #[test]
    fn init_state_is_pure() {
        let (store, nmt) = tiny();
        let run = || {
            let mut g = Graph::new();
            let enc = nmt.encode(&mut g, &store, &[1, 2]).unwrap();
            let s = nmt.init_state(&mut g, &store, &enc).unwrap();
            g.values(s).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_bad_ids_and_shapes() {
        let (store, nmt) = tiny();
        let mut g = Graph::new();
        assert!(nmt.encode(&mut g, &store, &[]).is_err());
        assert!(nmt.encode(&mut g, &store, &[7]).is_err());
        let mut other = nmt.config.clone();
        other.hidden = 5;
        assert!(Nmt::lookup(&store, &other).is_err());
        assert!(Nmt::lookup(&store, &nmt.config).is_ok());
    }

    #[test]
    fn runs_in_single_precision() {
        let mut store = ParamStore::<f32>::new();
        let nmt = Nmt::register(&mut store, &NmtConfig::new(5, 5, 3, 4), &mut seeded(2)).unwrap();
        let mut g = Graph::new();
        let enc = nmt.encode(&mut g, &store, &[1, 2, 3]).unwrap();
        let s = nmt.init_state(&mut g, &store, &enc).unwrap();
        let c = nmt.init_context(&mut g).unwrap();
        let step = nmt
            .decode_step(&mut g, &store, &enc, s, c, 1, None, None)
            .unwrap();
        assert!((g.values(step.probs).iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
}
