use std::fmt;

use super::{Outcome, ReportError};

/// Default number of entries per AV slot: SOS, up to five label tokens, EOS.
pub const DEFAULT_SLOT_LEN: usize = 7;
/// Character positions per token encoding: SOW + 20 characters + EOW.
pub const MAX_CHARS: usize = 22;
pub const MAX_TOKEN_CHARS: usize = 20;

pub const CHAR_PAD: u16 = 0;
pub const CHAR_SOW: u16 = 1;
pub const CHAR_EOW: u16 = 2;
const CHAR_A: u16 = 3;
const CHAR_0: u16 = 29;
pub const CHAR_OTHER: u16 = 39;
const CHAR_TOK_PAD: u16 = 40;
const CHAR_CLS: u16 = 41;
const CHAR_MASK: u16 = 42;
const CHAR_ABS: u16 = 43;
pub const CHAR_BEN: u16 = 44;
const CHAR_EOS: u16 = 45;
const CHAR_SOS_BASE: u16 = 46;

/// Size of the character-id table for a roster of `n_avs` products.
pub fn char_vocab_size(n_avs: usize) -> usize {
    CHAR_SOS_BASE as usize + n_avs
}

/// One position of the model input sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TokenEntry {
    Cls,
    Sos(usize),
    Plain(String),
    Abs,
    Ben,
    Eos,
    Pad,
    Mask,
}

impl TokenEntry {
    pub fn is_plain(&self) -> bool {
        matches!(self, TokenEntry::Plain(_))
    }

    pub fn as_plain(&self) -> Option<&str> {
        match self {
            TokenEntry::Plain(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for TokenEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenEntry::Cls => f.write_str("<CLS>"),
            TokenEntry::Sos(i) => write!(f, "<SOS_{i}>"),
            TokenEntry::Plain(s) => f.write_str(s),
            TokenEntry::Abs => f.write_str("<ABS>"),
            TokenEntry::Ben => f.write_str("<BEN>"),
            TokenEntry::Eos => f.write_str("<EOS>"),
            TokenEntry::Pad => f.write_str("<PAD>"),
            TokenEntry::Mask => f.write_str("<MASK>"),
        }
    }
}

/// The `L` entries contributed by one AV product.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSlot(pub Vec<TokenEntry>);

impl TokenSlot {
    pub fn entries(&self) -> &[TokenEntry] {
        &self.0
    }
}

/// Builds the slot for one AV verdict: `SOS t1..tk EOS PAD..` for a label,
/// `SOS BEN EOS PAD..` for benign and `SOS ABS EOS PAD..` for abstain.
///
/// `slot_len` must be at least 3 and at least `k + 2`; labels longer than
/// `slot_len - 2` tokens are truncated.
pub fn build_token_slot(
    outcome: &Outcome,
    av_index: usize,
    n_avs: usize,
    slot_len: usize,
) -> Result<TokenSlot, ReportError> {
    if av_index >= n_avs {
        return Err(ReportError::AvIndexOutOfRange { index: av_index, size: n_avs });
    }
    let mut slot = Vec::with_capacity(slot_len);
    slot.push(TokenEntry::Sos(av_index));
    match outcome {
        Outcome::Label(raw) => {
            let tokens = super::normalize_label(raw)?;
            slot.extend(
                tokens.tokens().iter().take(slot_len.saturating_sub(2)).cloned().map(TokenEntry::Plain),
            );
        }
        Outcome::Benign => slot.push(TokenEntry::Ben),
        Outcome::Abstain => slot.push(TokenEntry::Abs),
    }
    slot.push(TokenEntry::Eos);
    slot.resize(slot_len.max(slot.len()), TokenEntry::Pad);
    Ok(TokenSlot(slot))
}

/// Fixed-width character-id encoding of one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CharEncoding(pub [u16; MAX_CHARS]);

impl CharEncoding {
    pub fn ids(&self) -> &[u16; MAX_CHARS] {
        &self.0
    }
}

fn char_id(c: char) -> u16 {
    match c {
        'a'..='z' => CHAR_A + (c as u16 - 'a' as u16),
        '0'..='9' => CHAR_0 + (c as u16 - '0' as u16),
        _ => CHAR_OTHER,
    }
}

/// Character encoding of a slot entry. Plain tokens become
/// `SOW c1..c20 EOW PAD..`; special tokens occupy position 0 alone.
pub fn encode_token_chars(entry: &TokenEntry) -> CharEncoding {
    let mut ids = [CHAR_PAD; MAX_CHARS];
    match entry {
        TokenEntry::Plain(s) => {
            ids[0] = CHAR_SOW;
            let mut n = 0;
            for c in s.chars().take(MAX_TOKEN_CHARS) {
                n += 1;
                ids[n] = char_id(c);
            }
            ids[n + 1] = CHAR_EOW;
        }
        TokenEntry::Pad => ids[0] = CHAR_TOK_PAD,
        TokenEntry::Cls => ids[0] = CHAR_CLS,
        TokenEntry::Mask => ids[0] = CHAR_MASK,
        TokenEntry::Abs => ids[0] = CHAR_ABS,
        TokenEntry::Ben => ids[0] = CHAR_BEN,
        TokenEntry::Eos => ids[0] = CHAR_EOS,
        TokenEntry::Sos(av) => ids[0] = CHAR_SOS_BASE + *av as u16,
    }
    CharEncoding(ids)
}
