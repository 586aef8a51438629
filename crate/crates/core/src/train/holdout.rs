use rand::seq::IndexedRandom;
use rand::Rng;

use super::TrainError;
use crate::report::{TokenEntry, TokenizedReport};
use crate::vocab::Vocab;

/// AVs whose slot holds a label or a benign verdict.
pub fn eligible_avs(report: &TokenizedReport) -> Vec<usize> {
    (0..report.n_avs())
        .filter(|&av| matches!(report.slot(av).get(1), Some(TokenEntry::Plain(_)) | Some(TokenEntry::Ben)))
        .collect()
}

/// Uniform draw over non-abstaining AVs.
pub fn select_label_holdout<R: Rng + ?Sized>(report: &TokenizedReport, rng: &mut R) -> Result<usize, TrainError> {
    eligible_avs(report).choose(rng).copied().ok_or(TrainError::NoEligibleAv)
}

/// Decoder target for AV `av`: the slot's tokens after SOS up to and
/// including EOS (`[BEN, EOS]` for a benign verdict).
pub fn holdout_target(report: &TokenizedReport, av: usize) -> Vec<TokenEntry> {
    let mut out = Vec::new();
    for e in &report.slot(av)[1..] {
        out.push(e.clone());
        if *e == TokenEntry::Eos {
            break;
        }
    }
    out
}

/// Target as output classes; `None` if any token is out of vocabulary.
pub fn holdout_classes(report: &TokenizedReport, av: usize, vocab: &Vocab) -> Option<Vec<usize>> {
    holdout_target(report, av).iter().map(|e| vocab.class_of(e)).collect()
}

/// Input with every entry of AV `av`'s slot after SOS replaced by ABS.
pub fn apply_holdout(report: &TokenizedReport, av: usize) -> TokenizedReport {
    let mut out = report.clone();
    let range = out.slot_range(av);
    for e in &mut out.entries_mut()[range.start + 1..range.end] {
        *e = TokenEntry::Abs;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::TokenEntry::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(s: &str) -> TokenEntry {
        Plain(s.into())
    }

    fn report(slots: [[TokenEntry; 4]; 3]) -> TokenizedReport {
        let mut e = vec![Cls];
        for (i, s) in slots.into_iter().enumerate() {
            e.push(Sos(i));
            e.extend(s);
        }
        TokenizedReport::from_entries(3, 5, e)
    }

    #[test]
    fn single_detector_always_chosen() {
        let r = report([
            [Abs, Eos, Pad, Pad],
            [p("wanna"), p("cry"), Eos, Pad],
            [Abs, Eos, Pad, Pad],
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(select_label_holdout(&r, &mut rng).unwrap(), 1);
        }
        assert_eq!(holdout_target(&r, 1), [p("wanna"), p("cry"), Eos]);
        let applied = apply_holdout(&r, 1);
        assert_eq!(applied.slot(1), &[Sos(1), Abs, Abs, Abs, Abs]);
        assert_eq!(applied.slot(0), r.slot(0));
    }

    #[test]
    fn all_abstain_has_no_eligible_av() {
        let r = report([[Abs, Eos, Pad, Pad], [Abs, Eos, Pad, Pad], [Abs, Eos, Pad, Pad]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(select_label_holdout(&r, &mut rng), Err(TrainError::NoEligibleAv)));
    }

    #[test]
    fn benign_target_is_ben_eos() {
        let r = report([[Ben, Eos, Pad, Pad], [Abs, Eos, Pad, Pad], [p("x"), Eos, Pad, Pad]]);
        assert_eq!(eligible_avs(&r), [0, 2]);
        assert_eq!(holdout_target(&r, 0), [Ben, Eos]);
        let v = Vocab::from_tokens(vec!["x".into()]).unwrap();
        assert_eq!(holdout_classes(&r, 0, &v), Some(vec![1, 0]));
        assert_eq!(holdout_classes(&r, 2, &v), Some(vec![2, 0]));
    }

    #[test]
    fn uniform_over_eligible() {
        // oracle: each of 3 eligible AVs is a Binomial(n, 1/3) count
        let r = report([[p("a"), Eos, Pad, Pad], [Ben, Eos, Pad, Pad], [p("b"), p("c"), Eos, Pad]]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[select_label_holdout(&r, &mut rng).unwrap()] += 1;
        }
        let mean = n as f64 / 3.0;
        let sd = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sd, "{counts:?}");
        }
    }
}
