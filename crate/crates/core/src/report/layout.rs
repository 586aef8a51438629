use super::tokens::{build_token_slot, encode_token_chars, CharEncoding, TokenEntry};
use super::{AvRoster, ReportError, ScanReport};

/// Model input triple for one sequence position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub chars: CharEncoding,
    pub position: usize,
    pub segment: usize,
}

/// `<CLS>` followed by one fixed-width slot per roster AV, `A·L + 1`
/// positions in total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedReport {
    n_avs: usize,
    slot_len: usize,
    entries: Vec<TokenEntry>,
}

impl TokenizedReport {
    /// Assembles a sequence from explicit entries; `entries.len()` must be
    /// `n_avs * slot_len + 1`.
    pub fn from_entries(n_avs: usize, slot_len: usize, entries: Vec<TokenEntry>) -> Self {
        assert_eq!(entries.len(), n_avs * slot_len + 1, "sequence length must be A*L+1");
        TokenizedReport { n_avs, slot_len, entries }
    }

    pub fn n_avs(&self) -> usize {
        self.n_avs
    }

    pub fn slot_len(&self) -> usize {
        self.slot_len
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TokenEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [TokenEntry] {
        &mut self.entries
    }

    /// Positions `1 + i·L .. 1 + (i+1)·L` belong to AV `i`.
    pub fn slot_range(&self, av_index: usize) -> std::ops::Range<usize> {
        let start = 1 + av_index * self.slot_len;
        start..start + self.slot_len
    }

    pub fn slot(&self, av_index: usize) -> &[TokenEntry] {
        &self.entries[self.slot_range(av_index)]
    }

    pub fn segment_of(&self, position: usize) -> usize {
        segment_index(position, self.slot_len)
    }

    pub fn char_encodings(&self) -> Vec<CharEncoding> {
        self.entries.iter().map(encode_token_chars).collect()
    }

    pub fn triples(&self) -> Vec<Triple> {
        self.entries
            .iter()
            .enumerate()
            .map(|(position, e)| Triple {
                chars: encode_token_chars(e),
                position,
                segment: segment_index(position, self.slot_len),
            })
            .collect()
    }
}

/// Segment 0 is `<CLS>`; AV `i` is segment `i + 1`.
pub fn segment_index(position: usize, slot_len: usize) -> usize {
    if position == 0 {
        0
    } else {
        1 + (position - 1) / slot_len
    }
}

/// Lays a report out against `roster`. AVs missing from the report are
/// encoded as abstaining.
pub fn tokenize_report(
    report: &ScanReport,
    roster: &AvRoster,
    slot_len: usize,
) -> Result<TokenizedReport, ReportError> {
    if let Some(unknown) = report.results.keys().find(|av| roster.index_of(av).is_none()) {
        return Err(ReportError::UnknownAv(unknown.clone()));
    }
    let n_avs = roster.len();
    let mut entries = Vec::with_capacity(n_avs * slot_len + 1);
    entries.push(TokenEntry::Cls);
    for (i, av) in roster.names().iter().enumerate() {
        let slot = build_token_slot(report.outcome(av), i, n_avs, slot_len)?;
        entries.extend(slot.0);
    }
    Ok(TokenizedReport { n_avs, slot_len, entries })
}
