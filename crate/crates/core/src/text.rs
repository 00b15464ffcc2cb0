//! Text normalization shared by ingestion, exact dedup and fuzzy matching.

use unicode_normalization::UnicodeNormalization;

/// Canonical document text: NFC, control characters stripped, horizontal
/// whitespace runs collapsed to one space, and any run containing a line
/// break collapsed to a single `\n`. Leading and trailing whitespace removed.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending: Option<char> = None;
    let visible = text
        .chars()
        .filter(|ch| !ch.is_control() || ch.is_whitespace());
    for ch in visible.nfc() {
        if ch == '\n' || ch == '\r' || ch == '\u{2028}' || ch == '\u{2029}' {
            pending = Some('\n');
        } else if ch.is_whitespace() {
            if pending.is_none() {
                pending = Some(' ');
            }
        } else {
            if let Some(ws) = pending.take() {
                if !out.is_empty() {
                    out.push(ws);
                }
            }
            out.push(ch);
        }
    }
    out
}

/// Comparison key for exact and fuzzy deduplication: lowercase with every
/// whitespace run collapsed to one space.
pub fn fold_key(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    for word in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn collapses_and_strips() {
        assert_eq!(normalize("  a \t b\u{0007}c \n\n d  "), "a bc\nd");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("e\u{301}"), "\u{e9}");
    }

    #[test]
    fn fold_key_ignores_case_and_spacing() {
        assert_eq!(fold_key("Digital  Twin\nIS"), "digital twin is");
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}|[ a\\n\\t\u{0301}e\u{0007}]{0,30}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once);
        }
    }
}
