use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::report::{TokenEntry, TokenizedReport};
use crate::vocab::{Vocab, CLASS_OFFSET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskAction {
    Mask,
    /// Replace with the vocab token of this id.
    Random(usize),
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskTarget {
    pub position: usize,
    pub action: MaskAction,
    /// Output class of the original token.
    pub target: usize,
}

/// Positions held out for masked-token prediction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub targets: Vec<MaskTarget>,
    /// Other positions carrying a selected token's string; always masked,
    /// never scored.
    pub propagated: Vec<usize>,
}

impl MaskPlan {
    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Model input with the plan applied.
    pub fn apply(&self, report: &TokenizedReport, vocab: &Vocab) -> TokenizedReport {
        let mut out = report.clone();
        let entries = out.entries_mut();
        for t in &self.targets {
            match t.action {
                MaskAction::Mask => entries[t.position] = TokenEntry::Mask,
                MaskAction::Random(id) => {
                    entries[t.position] = TokenEntry::Plain(vocab.token(id).expect("random id in vocab").to_string())
                }
                MaskAction::Keep => {}
            }
        }
        for &p in &self.propagated {
            entries[p] = TokenEntry::Mask;
        }
        out
    }
}

/// Probabilities of the MASK / RANDOM / KEEP actions for a selected token.
pub const ACTION_MASK: f64 = 0.8;
pub const ACTION_RANDOM: f64 = 0.1;

/// Selects each in-vocab plain-token position independently with
/// probability `rate`.
///
/// The first selected occurrence of a token string becomes the target;
/// every other occurrence of that string, selected or not, is force-masked.
/// `force_mask` replaces the 80/10/10 action draw with MASK (evaluation).
pub fn select_mask_targets<R: Rng + ?Sized>(
    report: &TokenizedReport,
    rate: f64,
    vocab: &Vocab,
    force_mask: bool,
    rng: &mut R,
) -> MaskPlan {
    let entries = report.entries();
    let mut plan = MaskPlan::default();
    if rate <= 0.0 || vocab.is_empty() {
        return plan;
    }
    let mut chosen: HashSet<&str> = HashSet::new();
    for (p, e) in entries.iter().enumerate() {
        let Some(tok) = e.as_plain() else { continue };
        if !rng.random_bool(rate.min(1.0)) || chosen.contains(tok) {
            continue;
        }
        let Some(id) = vocab.id(tok) else { continue };
        let u: f64 = rng.random();
        let action = if force_mask || u < ACTION_MASK {
            MaskAction::Mask
        } else if u < ACTION_MASK + ACTION_RANDOM {
            MaskAction::Random(rng.random_range(0..vocab.len()))
        } else {
            MaskAction::Keep
        };
        chosen.insert(tok);
        plan.targets.push(MaskTarget { position: p, action, target: id + CLASS_OFFSET });
    }
    let targeted: HashSet<usize> = plan.targets.iter().map(|t| t.position).collect();
    plan.propagated = entries
        .iter()
        .enumerate()
        .filter(|(p, e)| !targeted.contains(p) && e.as_plain().is_some_and(|t| chosen.contains(t)))
        .map(|(p, _)| p)
        .collect();
    plan
}
