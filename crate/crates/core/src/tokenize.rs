//! Social-media-aware tokenizer.
//!
//! Rules, applied per whitespace-delimited chunk of NFC-normalized text:
//! known emoticons are kept whole; URL-like chunks are dropped; everything
//! else has leading/trailing punctuation stripped, except a `#` or `@`
//! directly before the first word character. Internal punctuation
//! (apostrophes in contractions, hyphens) is untouched. Tokens are
//! lowercased.

use unicode_normalization::UnicodeNormalization;

use crate::ingest::is_url_token;

pub const EMOTICONS: [&str; 10] = [":)", ":(", ":d", ";)", "<3", ":-)", ":-(", ":/", ":p", "xd"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenStream {
    pub source_message_id: String,
    pub tokens: Vec<String>,
}

impl TokenStream {
    pub fn new(source_message_id: impl Into<String>, text: &str) -> Self {
        TokenStream { source_message_id: source_message_id.into(), tokens: tokenize(text) }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn emoticon(chunk: &str) -> Option<&'static str> {
    let lower = chunk.to_lowercase();
    let bare = lower.trim_end_matches(['.', ',', '!', '?']);
    EMOTICONS.iter().copied().find(|e| *e == lower || *e == bare)
}

fn clean_chunk(chunk: &str) -> Option<String> {
    if let Some(e) = emoticon(chunk) {
        return Some(e.to_string());
    }
    if is_url_token(chunk) {
        return None;
    }
    let start = chunk.find(is_word_char)?;
    let end = chunk.rfind(is_word_char).map(|i| i + chunk[i..].chars().next().unwrap().len_utf8())?;
    let mut begin = start;
    if let Some(prev) = chunk[..start].chars().next_back() {
        if prev == '#' || prev == '@' {
            begin = start - prev.len_utf8();
        }
    }
    Some(chunk[begin..end].to_lowercase())
}

/// Tokenize one message. Deterministic and total; empty text yields no tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().map(|c| if c == '\u{2019}' { '\'' } else { c }).collect();
    normalized.split_whitespace().filter_map(clean_chunk).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn contractions_and_emoticons() {
        assert_eq!(tokenize("I'm SO happy :)"), ["i'm", "so", "happy", ":)"]);
        assert_eq!(tokenize("don\u{2019}t :D <3 XD"), ["don't", ":d", "<3", "xd"]);
    }

    #[test]
    fn hashtags_and_mentions() {
        assert_eq!(tokenize("#blessed @friend"), ["#blessed", "@friend"]);
        assert_eq!(tokenize("(#tag), @user: ##twice"), ["#tag", "@user", "#twice"]);
    }

    #[test]
    fn punctuation_stripped() {
        assert_eq!(tokenize("Hello, world!!! ... well-being 'quoted'"), ["hello", "world", "well-being", "quoted"]);
    }

    #[test]
    fn empty_and_url() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   ").is_empty());
        assert_eq!(tokenize("see https://t.co/x now"), ["see", "now"]);
    }

    #[test]
    fn nfc_normalization() {
        // "e" + combining acute vs precomposed
        assert_eq!(tokenize("cafe\u{301}"), tokenize("caf\u{e9}"));
    }

    proptest! {
        #[test]
        fn ascii_case_insensitive(s in "[ -~]{0,60}") {
            prop_assert_eq!(tokenize(&s.to_lowercase()), tokenize(&s));
        }

        #[test]
        fn concatenation_safe(a in "\\PC{0,40}", b in "\\PC{0,40}") {
            let mut joined = tokenize(&a);
            joined.extend(tokenize(&b));
            prop_assert_eq!(tokenize(&format!("{a} {b}")), joined);
        }

        #[test]
        fn tokens_nonempty_no_whitespace_no_urls(s in "\\PC{0,80}") {
            for t in tokenize(&s) {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.chars().any(char::is_whitespace));
                prop_assert!(!is_url_token(&t));
            }
        }
    }
}
