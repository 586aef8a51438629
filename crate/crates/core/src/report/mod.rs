//! Scan report ingestion: label normalization, slot layout, character
//! encoding and the JSON Lines wire format.

mod label;
mod layout;
mod tokens;
mod wire;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

pub use label::{normalize_label, LabelTokens, MAX_LABEL_TOKENS};
pub use layout::{segment_index, tokenize_report, TokenizedReport, Triple};
pub use tokens::{
    build_token_slot, char_vocab_size, encode_token_chars, CharEncoding, TokenEntry, TokenSlot, CHAR_BEN,
    CHAR_EOW, CHAR_PAD, CHAR_SOW, DEFAULT_SLOT_LEN, MAX_CHARS, MAX_TOKEN_CHARS,
};
pub use wire::{parse_report_line, read_reports, serialize_report, write_reports};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReportError {
    #[error("label {0:?} contains no alphanumeric characters")]
    EmptyLabel(String),
    #[error("AV {0:?} is not in the roster")]
    UnknownAv(String),
    #[error("duplicate AV {0:?} in roster")]
    DuplicateAv(String),
    #[error("malformed report line: {0}")]
    MalformedLine(String),
    #[error("report is missing field `{0}`")]
    MissingField(&'static str),
    #[error("bad scan date {0:?}")]
    BadDate(String),
    #[error("AV index {index} out of range for roster of {size}")]
    AvIndexOutOfRange { index: usize, size: usize },
    #[error("{0}")]
    Io(String),
}

/// One AV product's verdict on a file.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Outcome {
    Label(String),
    Benign,
    Abstain,
}

impl Outcome {
    pub fn is_detection(&self) -> bool {
        matches!(self, Outcome::Label(_))
    }
}

/// Per-file collection of AV verdicts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanReport {
    pub id: String,
    pub date: NaiveDate,
    pub results: BTreeMap<String, Outcome>,
}

impl ScanReport {
    pub fn detections(&self) -> usize {
        self.results.values().filter(|o| o.is_detection()).count()
    }

    /// Reports need at least two detections to be used for training.
    pub fn is_training_eligible(&self) -> bool {
        self.detections() >= 2
    }

    /// Outcome for `av`; AVs missing from the report abstained.
    pub fn outcome(&self, av: &str) -> &Outcome {
        self.results.get(av).unwrap_or(&Outcome::Abstain)
    }
}

/// Ordered AV product list. The order fixes the slot layout of every
/// tokenized report built against it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvRoster {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl AvRoster {
    pub fn new<I, S>(names: I) -> Result<Self, ReportError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out = AvRoster { names: Vec::new(), index: HashMap::new() };
        for name in names {
            let name = name.into();
            if out.index.contains_key(&name) {
                return Err(ReportError::DuplicateAv(name));
            }
            out.index.insert(name.clone(), out.names.len());
            out.names.push(name);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    /// Parses a roster file: one AV name per line, blank lines ignored.
    pub fn parse(text: &str) -> Result<Self, ReportError> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn to_text(&self) -> String {
        let mut s = self.names.join("\n");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ReportError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roster_rejects_duplicates() {
        assert_eq!(
            AvRoster::new(["a", "b", "a"]).unwrap_err(),
            ReportError::DuplicateAv("a".into())
        );
    }

    #[test]
    fn roster_text_round_trip() {
        let r = AvRoster::new(["Alpha", "Beta", "Gamma"]).unwrap();
        let back = AvRoster::parse(&r.to_text()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.index_of("Gamma"), Some(2));
    }

    #[test]
    fn missing_av_is_abstain() {
        let r = ScanReport {
            id: "x".into(),
            date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            results: BTreeMap::from([("A".to_string(), Outcome::Benign)]),
        };
        assert_eq!(r.outcome("B"), &Outcome::Abstain);
        assert!(!r.is_training_eligible());
    }
}
