//! Tokenization helpers shared by the mock embedder, lexical scorers and
//! extraction normalizers.

use std::collections::HashMap;

/// Fixed stopword list used by the mock embedder and mock keyword picker.
pub const STOPWORDS: [&str; 30] = [
    "a", "an", "the", "and", "or", "but", "of", "to", "in", "on", "at", "for", "with", "by",
    "from", "is", "are", "was", "were", "be", "been", "it", "this", "that", "i", "you", "he",
    "she", "we", "they",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Lowercase and split on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// `tokenize` with stopwords removed.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokenize(text).into_iter().filter(|t| !is_stopword(t)).collect()
}

/// FNV-1a, 64 bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Rough token estimate: ceil(chars / 4).
pub fn estimate_tokens(text: &str) -> u64 {
    let chars = text.chars().count() as u64;
    chars.div_ceil(4)
}

/// First sentence of `text`: everything up to and including the first `.`,
/// `!` or `?` that is followed by whitespace or the end of input.
pub fn first_sentence(text: &str) -> &str {
    let trimmed = text.trim();
    let mut iter = trimmed.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if matches!(c, '.' | '!' | '?') {
            match iter.peek() {
                None => return trimmed,
                Some((_, next)) if next.is_whitespace() => return &trimmed[..i + c.len_utf8()],
                _ => {}
            }
        }
    }
    trimmed
}

/// Truncate to at most `max_chars` characters on a char boundary.
pub fn truncate_chars(text: &str, max_chars: usize) -> &str {
    match text.char_indices().nth(max_chars) {
        Some((idx, _)) => &text[..idx],
        None => text,
    }
}

/// Last `n` characters of `text`.
pub fn tail_chars(text: &str, n: usize) -> &str {
    let total = text.chars().count();
    if total <= n {
        return text;
    }
    let skip = total - n;
    let idx = text.char_indices().nth(skip).map(|(i, _)| i).unwrap_or(0);
    &text[idx..]
}

/// The `n` most frequent non-stopword tokens; ties broken by first occurrence.
pub fn top_keywords(text: &str, n: usize) -> Vec<String> {
    let tokens = content_tokens(text);
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (pos, tok) in tokens.iter().enumerate() {
        counts.entry(tok.as_str()).or_insert((0, pos)).0 += 1;
    }
    let mut ranked: Vec<(&str, usize, usize)> =
        counts.into_iter().map(|(t, (c, p))| (t, c, p)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.into_iter().take(n).map(|(t, _, _)| t.to_string()).collect()
}

/// Locate the outermost JSON object in free-form model output, tolerating
/// code fences and surrounding prose.
pub fn find_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_on_punctuation() {
        assert_eq!(tokenize("Alice's cat, Miso!"), vec!["alice", "s", "cat", "miso"]);
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn first_sentence_rules() {
        assert_eq!(first_sentence("I moved. Then I left."), "I moved.");
        assert_eq!(first_sentence("No terminator here"), "No terminator here");
        assert_eq!(first_sentence("v1.2 is out! yes"), "v1.2 is out!");
        assert_eq!(first_sentence("a.; b."), "a.; b.");
    }

    #[test]
    fn token_estimate_is_ceil_quarter() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("x"), 1);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
        assert_eq!(estimate_tokens(&"a".repeat(400)), 100);
    }

    #[test]
    fn keywords_frequency_then_position() {
        let kws = top_keywords("I adopted a golden retriever named Max", 5);
        assert_eq!(kws, vec!["adopted", "golden", "retriever", "named", "max"]);
        let kws = top_keywords("cat dog cat bird dog cat", 2);
        assert_eq!(kws, vec!["cat", "dog"]);
    }

    #[test]
    fn tails_and_truncation_respect_chars() {
        assert_eq!(tail_chars("héllo", 3), "llo");
        assert_eq!(truncate_chars("héllo", 2), "hé");
        assert_eq!(find_json_object("```json\n{\"a\":1}\n```"), Some("{\"a\":1}"));
    }
}
