//! Prediction-target vocabulary and the adaptive-softmax cluster layout.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::{tokenize_report, AvRoster, ReportError, ScanReport, TokenEntry, TokenizedReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VocabError {
    #[error("cutoff fractions must be strictly increasing in (0, 1): {0:?}")]
    BadFractions(Vec<f64>),
    #[error("adaptive softmax size must be positive")]
    EmptyOutput,
    #[error("bad adaptive spec: {0}")]
    BadSpec(String),
    #[error("duplicate token {0:?} in vocab file")]
    DuplicateToken(String),
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// Occurrence counts of plain tokens over a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenFrequencyTable {
    counts: BTreeMap<String, u64>,
}

impl TokenFrequencyTable {
    pub fn add_report(&mut self, report: &TokenizedReport) {
        for tok in report.entries().iter().filter_map(TokenEntry::as_plain) {
            *self.counts.entry(tok.to_string()).or_default() += 1;
        }
    }

    /// Associative merge of two shards.
    pub fn merge(mut self, other: TokenFrequencyTable) -> TokenFrequencyTable {
        for (tok, n) in other.counts {
            *self.counts.entry(tok).or_default() += n;
        }
        self
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl FromIterator<(String, u64)> for TokenFrequencyTable {
    fn from_iter<I: IntoIterator<Item = (String, u64)>>(iter: I) -> Self {
        let mut t = TokenFrequencyTable::default();
        for (tok, n) in iter {
            if n > 0 {
                *t.counts.entry(tok).or_default() += n;
            }
        }
        t
    }
}

pub fn count_tokens<'a, I>(corpus: I) -> TokenFrequencyTable
where
    I: IntoIterator<Item = &'a TokenizedReport>,
{
    let mut t = TokenFrequencyTable::default();
    for r in corpus {
        t.add_report(r);
    }
    t
}

/// Counts tokens straight from parsed reports, tokenizing against `roster`.
pub fn count_report_tokens(
    reports: &[ScanReport],
    roster: &AvRoster,
    slot_len: usize,
) -> Result<TokenFrequencyTable, VocabError> {
    use rayon::prelude::*;
    reports
        .par_chunks(256)
        .map(|chunk| {
            let mut t = TokenFrequencyTable::default();
            for r in chunk {
                t.add_report(&tokenize_report(r, roster, slot_len)?);
            }
            Ok(t)
        })
        .try_reduce(TokenFrequencyTable::default, |a, b| Ok(a.merge(b)))
}

/// Output class of the end-of-label marker.
pub const CLASS_EOS: usize = 0;
/// Output class of the benign marker.
pub const CLASS_BEN: usize = 1;
/// Vocab id `i` is output class `i + CLASS_OFFSET`.
pub const CLASS_OFFSET: usize = 2;

/// Top-V plain tokens ordered by (count desc, token asc).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn build(freq: &TokenFrequencyTable, max_size: usize) -> Vocab {
        let mut ranked: Vec<(&str, u64)> = freq.iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size);
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()).collect())
            .expect("frequency table keys are unique")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocab, VocabError> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(VocabError::DuplicateToken(t.clone()));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Number of prediction classes: the vocab plus EOS and BEN.
    pub fn n_classes(&self) -> usize {
        self.tokens.len() + CLASS_OFFSET
    }

    /// Prediction class for a slot entry, if it is a legal target.
    pub fn class_of(&self, entry: &TokenEntry) -> Option<usize> {
        match entry {
            TokenEntry::Eos => Some(CLASS_EOS),
            TokenEntry::Ben => Some(CLASS_BEN),
            TokenEntry::Plain(t) => self.id(t).map(|i| i + CLASS_OFFSET),
            _ => None,
        }
    }

    pub fn entry_of_class(&self, class: usize) -> Option<TokenEntry> {
        match class {
            CLASS_EOS => Some(TokenEntry::Eos),
            CLASS_BEN => Some(TokenEntry::Ben),
            c => self.token(c - CLASS_OFFSET).map(|t| TokenEntry::Plain(t.to_string())),
        }
    }

    /// One token per line; line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Vocab, VocabError> {
        Self::from_tokens(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
    }
}

pub const DEFAULT_VOCAB_SIZE: usize = 50_000;
pub const DEFAULT_CUTOFF_FRACTIONS: [f64; 2] = [0.05, 0.25];
pub const DEFAULT_TAIL_DIVISOR: usize = 4;

/// Cluster boundaries of an adaptive softmax over `size` classes.
///
/// Class ids `[0, cutoffs[0])` form the head; tail cluster `i` holds
/// `[cutoffs[i], cutoffs[i+1])`. The last cutoff always equals `size`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptiveSoftmaxSpec {
    #[serde(rename = "V")]
    pub size: usize,
    pub cutoffs: Vec<usize>,
    /// Tail cluster `i` (1-based) projects to `dim / tail_divisor^i`.
    #[serde(default = "default_divisor")]
    pub tail_divisor: usize,
}

fn default_divisor() -> usize {
    DEFAULT_TAIL_DIVISOR
}

impl AdaptiveSoftmaxSpec {
    pub fn head_size(&self) -> usize {
        self.cutoffs[0]
    }

    pub fn n_tails(&self) -> usize {
        self.cutoffs.len() - 1
    }

    /// `(start, end)` of tail `i` (0-based).
    pub fn tail_range(&self, i: usize) -> (usize, usize) {
        (self.cutoffs[i], self.cutoffs[i + 1])
    }

    /// Projection width of tail `i` for hidden size `dim`, at least 1.
    pub fn tail_dim(&self, dim: usize, i: usize) -> usize {
        let div = self.tail_divisor.max(1).saturating_pow(i as u32 + 1);
        (dim / div).max(1)
    }

    /// Cluster of `class`: `None` for the head, `Some(i)` for tail `i`.
    pub fn cluster_of(&self, class: usize) -> Option<usize> {
        if class < self.cutoffs[0] {
            return None;
        }
        (0..self.n_tails()).find(|&i| class < self.cutoffs[i + 1])
    }

    pub fn validate(&self) -> Result<(), VocabError> {
        if self.size == 0 {
            return Err(VocabError::EmptyOutput);
        }
        if self.cutoffs.last() != Some(&self.size) {
            return Err(VocabError::BadSpec("last cutoff must equal V".into()));
        }
        if self.cutoffs.windows(2).any(|w| w[0] >= w[1]) || self.cutoffs[0] == 0 {
            return Err(VocabError::BadSpec("cutoffs must be strictly increasing and positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| VocabError::BadSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Cutoffs at `round(fraction · size)`, clamped to `[1, size)` and
/// deduplicated, followed by `size` itself.
pub fn make_adaptive_spec(size: usize, fractions: &[f64]) -> Result<AdaptiveSoftmaxSpec, VocabError> {
    if size == 0 {
        return Err(VocabError::EmptyOutput);
    }
    let in_range = fractions.iter().all(|&f| f > 0.0 && f < 1.0);
    let increasing = fractions.windows(2).all(|w| w[0] < w[1]);
    if !in_range || !increasing {
        return Err(VocabError::BadFractions(fractions.to_vec()));
    }
    let mut cutoffs: Vec<usize> = Vec::with_capacity(fractions.len() + 1);
    if size > 1 {
        for &f in fractions {
            let c = ((f * size as f64).round() as usize).clamp(1, size - 1);
            if cutoffs.last() != Some(&c) {
                cutoffs.push(c);
            }
        }
    }
    cutoffs.push(size);
    Ok(AdaptiveSoftmaxSpec { size, cutoffs, tail_divisor: DEFAULT_TAIL_DIVISOR })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(pairs: &[(&str, u64)]) -> TokenFrequencyTable {
        pairs.iter().map(|(t, n)| (t.to_string(), *n)).collect()
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = Vocab::build(&table(&[("c", 1), ("b", 5), ("a", 5)]), 2);
        assert_eq!(v.tokens(), ["a", "b"]);
    }

    #[test]
    fn undersized_corpus() {
        let v = Vocab::build(&table(&[("x", 9)]), 10);
        assert_eq!(v.tokens(), ["x"]);
        assert_eq!(v.n_classes(), 3);
    }

    #[test]
    fn class_mapping() {
        let v = Vocab::build(&table(&[("wanna", 3), ("cry", 2)]), 10);
        assert_eq!(v.class_of(&TokenEntry::Eos), Some(CLASS_EOS));
        assert_eq!(v.class_of(&TokenEntry::Ben), Some(CLASS_BEN));
        assert_eq!(v.class_of(&TokenEntry::Plain("cry".into())), Some(3));
        assert_eq!(v.class_of(&TokenEntry::Plain("zzz".into())), None);
        assert_eq!(v.class_of(&TokenEntry::Pad), None);
        assert_eq!(v.entry_of_class(2), Some(TokenEntry::Plain("wanna".into())));
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = Vocab::build(&table(&[("b", 2), ("a", 2), ("z", 7)]), 10);
        assert_eq!(v.to_text(), "z\na\nb\n");
        assert_eq!(Vocab::parse(&v.to_text()).unwrap(), v);
        assert!(matches!(Vocab::parse("a\na\n"), Err(VocabError::DuplicateToken(_))));
    }

    #[test]
    fn adaptive_cutoffs() {
        assert_eq!(make_adaptive_spec(1000, &[0.05, 0.25]).unwrap().cutoffs, [50, 250, 1000]);
        assert_eq!(make_adaptive_spec(10, &[0.05]).unwrap().cutoffs, [1, 10]);
        assert!(matches!(make_adaptive_spec(100, &[0.5, 0.5]), Err(VocabError::BadFractions(_))));
        assert!(matches!(make_adaptive_spec(100, &[0.0]), Err(VocabError::BadFractions(_))));
        assert_eq!(make_adaptive_spec(4, &[]).unwrap().cutoffs, [4]);
        assert_eq!(make_adaptive_spec(1, &[0.5]).unwrap().cutoffs, [1]);
        // 0.31 and 0.34 of 3 both round to 1
        assert_eq!(make_adaptive_spec(3, &[0.31, 0.34]).unwrap().cutoffs, [1, 3]);
    }

    #[test]
    fn spec_json_round_trip() {
        let s = make_adaptive_spec(1000, &[0.05, 0.25]).unwrap();
        let json = s.to_json();
        assert!(json.contains("\"V\": 1000"));
        assert_eq!(AdaptiveSoftmaxSpec::from_json(&json).unwrap(), s);
        assert_eq!(s.cluster_of(49), None);
        assert_eq!(s.cluster_of(50), Some(0));
        assert_eq!(s.cluster_of(999), Some(1));
        assert_eq!(s.tail_dim(64, 0), 16);
        assert_eq!(s.tail_dim(64, 1), 4);
    }

    proptest! {
        #[test]
        fn vocab_is_bijective_and_order_stable(
            pairs in proptest::collection::btree_map("[a-z]{1,4}", 1u64..20, 0..60),
            v in 1usize..80,
        ) {
            let t: TokenFrequencyTable = pairs.clone().into_iter().collect();
            let a = Vocab::build(&t, v);
            let shuffled: TokenFrequencyTable = pairs.into_iter().rev().collect();
            let b = Vocab::build(&shuffled, v);
            prop_assert_eq!(a.to_text(), b.to_text());
            prop_assert_eq!(a.len(), v.min(t.len()));
            for id in 0..a.len() {
                prop_assert_eq!(a.id(a.token(id).unwrap()), Some(id));
            }
            for w in a.tokens().windows(2) {
                let (c0, c1) = (t.count(&w[0]), t.count(&w[1]));
                prop_assert!(c0 > c1 || (c0 == c1 && w[0] < w[1]));
            }
        }
    }
}
