//! Small text utilities shared by the compilers, the embedder and the router.

/// Whitespace token count. This is the token unit used for all offline
/// accounting.
pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Truncate `text` to at most `max_tokens` whitespace tokens.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    text.split_whitespace()
        .take(max_tokens)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Unification key for term surfaces: lowercase, whitespace-collapsed, one
/// trailing plural `s` stripped.
pub fn term_key(surface: &str) -> String {
    let mut key = collapse_whitespace(&surface.to_lowercase());
    if key.len() > 1 && key.ends_with('s') && !key.ends_with("ss") {
        key.pop();
    }
    key
}

/// Lowercased alphanumeric word tokens.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// True when the trimmed text parses as a number, optionally signed, with an
/// optional trailing unit-free percent sign.
pub fn is_numeric(text: &str) -> bool {
    let t = text.trim().trim_end_matches('%').trim();
    !t.is_empty() && t.replace(',', "").parse::<f64>().is_ok()
}

/// The first sentence of `text`: everything up to and including the first
/// `.`, `!` or `?` that is followed by whitespace or the end of the text.
pub fn first_sentence(text: &str) -> &str {
    let trimmed = text.trim();
    let bytes = trimmed.as_bytes();
    for (i, b) in bytes.iter().enumerate() {
        if matches!(b, b'.' | b'!' | b'?') {
            let next = bytes.get(i + 1);
            if next.is_none() || next.is_some_and(|n| n.is_ascii_whitespace()) {
                return &trimmed[..=i];
            }
        }
    }
    trimmed
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_key_rules() {
        assert_eq!(term_key("  SSB "), "ssb");
        assert_eq!(term_key("Resource  Blocks"), "resource block");
        assert_eq!(term_key("Access"), "access");
    }

    #[test]
    fn sentence_split() {
        assert_eq!(first_sentence("HARQ is a scheme. It retries."), "HARQ is a scheme.");
        assert_eq!(first_sentence("Version 1.2 applies"), "Version 1.2 applies");
        assert_eq!(first_sentence("HARQ"), "HARQ");
    }

    #[test]
    fn numeric_detection() {
        assert!(is_numeric("4"));
        assert!(is_numeric("-3.5"));
        assert!(is_numeric("1,000"));
        assert!(is_numeric("20%"));
        assert!(!is_numeric("16QAM"));
        assert!(!is_numeric(""));
    }
}
