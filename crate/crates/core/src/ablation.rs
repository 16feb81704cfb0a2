//! The six decoding configurations compared in the ablation table.

use std::fmt::Write as _;

use serde::Serialize;

use crate::decoder::{translate_all, DecodeOptions};
use crate::error::{Error, Result};
use crate::eval::{bleu, token_accuracy};
use crate::model::{GateMode, HybridModel};
use crate::scalar::Scalar;
use crate::smt::SmtModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    /// Pre-trained encoder-decoder alone.
    Baseline,
    /// Hybrid with learned gate.
    SmtRec,
    /// Hybrid with the gate pinned to 0.
    GateZero,
    /// Hybrid with the gate pinned to 0.20.
    GateTwenty,
    /// Hybrid fed random frequent words instead of recommendations.
    PseudoRecs,
    /// Hybrid with learned gate and UNK replacement.
    UnkReplace,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Baseline,
        Variant::SmtRec,
        Variant::GateZero,
        Variant::GateTwenty,
        Variant::PseudoRecs,
        Variant::UnkReplace,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::SmtRec => "+SMT rec",
            Variant::GateZero => "alpha=0",
            Variant::GateTwenty => "alpha=0.20",
            Variant::PseudoRecs => "pseudo-recs",
            Variant::UnkReplace => "+UNK-replace",
        }
    }

    /// Decoding options derived from `base` (beam, seed, length bound).
    pub fn options(self, base: &DecodeOptions) -> DecodeOptions {
        let mut o = base.clone();
        o.gate = GateMode::Learned;
        o.pseudo_recs = false;
        o.unk_replace = false;
        match self {
            Variant::Baseline | Variant::SmtRec => {}
            Variant::GateZero => o.gate = GateMode::Fixed(0.0),
            Variant::GateTwenty => o.gate = GateMode::Fixed(0.20),
            Variant::PseudoRecs => o.pseudo_recs = true,
            Variant::UnkReplace => o.unk_replace = true,
        }
        o
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: String,
    pub bleu: f64,
    pub token_accuracy: f64,
    pub outputs: Vec<Vec<String>>,
}

/// Decodes `sources` under every variant. The baseline uses `nmt`, the rest
/// use `hybrid` with `smt`.
pub fn run_ablation<T: Scalar>(
    nmt: &HybridModel<T>,
    hybrid: &HybridModel<T>,
    smt: &SmtModel,
    sources: &[Vec<String>],
    references: &[Vec<String>],
    base: &DecodeOptions,
) -> Result<Vec<AblationRow>> {
    if !hybrid.is_hybrid() {
        return Err(Error::Config("ablation needs a hybrid model".into()));
    }
    let refs: Vec<Vec<Vec<String>>> = references.iter().map(|r| vec![r.clone()]).collect();
    Variant::ALL
        .iter()
        .map(|&v| {
            let opts = v.options(base);
            let out = match v {
                Variant::Baseline => translate_all(nmt, None, sources, &opts)?,
                _ => translate_all(hybrid, Some(smt), sources, &opts)?,
            };
            let outputs: Vec<Vec<String>> = out.into_iter().map(|t| t.output).collect();
            Ok(AblationRow {
                variant: v,
                label: v.label().to_string(),
                bleu: bleu(&outputs, &refs)?.bleu,
                token_accuracy: token_accuracy(&outputs, references)?,
                outputs,
            })
        })
        .collect()
}

/// Aligned text table, one row per variant.
pub fn format_table(rows: &[AblationRow]) -> String {
    let mut s = format!("{:<14}{:>10}{:>16}\n", "system", "BLEU", "token_accuracy");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<14}{:>10.4}{:>16.4}",
            r.label, r.bleu, r.token_accuracy
        );
    }
    s
}
