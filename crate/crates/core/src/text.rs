//! Whitespace tokenization and string normalization.
//!
//! Tokens are maximal runs of non-whitespace (Unicode whitespace). Truncation
//! counts these raw tokens; lexical scoring and matching additionally strip
//! leading and trailing punctuation and case-fold.

/// Raw whitespace tokens of `text`.
pub fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

pub fn token_count(text: &str) -> usize {
    tokens(text).count()
}

/// Keeps the first `limit` tokens of `text`.
///
/// Text with at most `limit` tokens is returned unchanged; otherwise the
/// result is the prefix of `text` ending at the last kept token, so the
/// operation is prefix-preserving and idempotent.
pub fn truncate_tokens(text: &str, limit: usize) -> &str {
    if tokens(text).nth(limit).is_none() {
        return text;
    }
    let mut seen = 0;
    let mut in_token = false;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if in_token {
                in_token = false;
                if seen == limit {
                    return &text[..i];
                }
            }
        } else if !in_token {
            in_token = true;
            seen += 1;
            if seen > limit {
                // limit == 0: nothing may be kept.
                return "";
            }
        }
    }
    text
}

fn is_edge_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// A token with surrounding punctuation removed and case folded.
pub fn term(token: &str) -> String {
    token.trim_matches(is_edge_punct).to_lowercase()
}

/// Normalized, non-empty scoring terms of `text`.
pub fn terms(text: &str) -> impl Iterator<Item = String> + '_ {
    tokens(text).map(term).filter(|t| !t.is_empty())
}

/// Collapses every whitespace run to one space and trims the ends.
pub fn collapse_whitespace(text: &str) -> String {
    tokens(text).collect::<Vec<_>>().join(" ")
}

/// Entity-name identity key: case-folded with whitespace collapsed.
pub fn normalize_name(name: &str) -> String {
    collapse_whitespace(name).to_lowercase()
}

/// Answer/passage normalization for metrics: case fold, collapse whitespace,
/// strip leading and trailing punctuation.
pub fn normalize_answer(text: &str) -> String {
    let collapsed = collapse_whitespace(&text.to_lowercase());
    collapsed.trim_matches(is_edge_punct).to_string()
}
