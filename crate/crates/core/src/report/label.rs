use super::ReportError;

pub const MAX_LABEL_TOKENS: usize = 5;

/// Normalized label: at most five non-empty `[a-z0-9]+` tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelTokens(Vec<String>);

impl LabelTokens {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Splits `raw` on every character outside `[A-Za-z0-9]`, lowercases the
/// pieces and keeps the first five. Non-ASCII characters act as separators.
pub fn normalize_label(raw: &str) -> Result<LabelTokens, ReportError> {
    let tokens: Vec<String> = raw
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .take(MAX_LABEL_TOKENS)
        .map(str::to_ascii_lowercase)
        .collect();
    if tokens.is_empty() {
        return Err(ReportError::EmptyLabel(raw.to_string()));
    }
    Ok(LabelTokens(tokens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(raw: &str) -> Vec<String> {
        normalize_label(raw).unwrap().tokens().to_vec()
    }

    #[test]
    fn wannacry_example() {
        assert_eq!(toks("Ransom.Win32.Wanna.xyz!gen"), ["ransom", "win32", "wanna", "xyz", "gen"]);
    }

    #[test]
    fn lowercases() {
        assert_eq!(toks("WANNACRY"), ["wannacry"]);
    }

    #[test]
    fn truncates_to_five() {
        assert_eq!(toks("a.b.c.d.e.f.g"), ["a", "b", "c", "d", "e"]);
    }

    #[test]
    fn unicode_splits() {
        assert_eq!(toks("Troj\u{e9}an.W32"), ["troj", "an", "w32"]);
    }

    #[test]
    fn no_alphanumerics_is_empty_label() {
        assert!(matches!(normalize_label("!!!"), Err(ReportError::EmptyLabel(_))));
        assert!(matches!(normalize_label(""), Err(ReportError::EmptyLabel(_))));
    }

    proptest! {
        #[test]
        fn tokens_are_lower_alnum(raw in "\\PC{0,60}") {
            if let Ok(t) = normalize_label(&raw) {
                prop_assert!(t.len() <= MAX_LABEL_TOKENS);
                for tok in t.tokens() {
                    prop_assert!(!tok.is_empty());
                    prop_assert!(tok.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()));
                }
            } else {
                prop_assert!(!raw.chars().any(|c| c.is_ascii_alphanumeric()));
            }
        }
    }
}
