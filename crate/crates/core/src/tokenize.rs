//! Text tokenization shared by BM25 retrieval and the hashing encoder.

use std::fmt::Debug;

pub trait Tokenizer: Send + Sync + Debug {
    fn tokenize(&self, text: &str) -> Vec<String>;

    /// Name persisted alongside artifacts built with this tokenizer.
    fn name(&self) -> &str;
}

/// Lowercases, splits on anything that is not alphanumeric, and emits a
/// unigram per CJK codepoint in addition to the CJK run itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultTokenizer;

pub const DEFAULT_TOKENIZER_NAME: &str = "default-v1";

pub(crate) fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2CEAF
        | 0x3040..=0x30FF
        | 0xAC00..=0xD7AF)
}

impl Tokenizer for DefaultTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for word in text.split(|c: char| !c.is_alphanumeric()) {
            if word.is_empty() {
                continue;
            }
            let lower = word.to_lowercase();
            let has_cjk = lower.chars().any(is_cjk);
            out.push(lower.clone());
            if has_cjk && lower.chars().count() > 1 {
                out.extend(lower.chars().filter(|c| is_cjk(*c)).map(String::from));
            }
        }
        out
    }

    fn name(&self) -> &str {
        DEFAULT_TOKENIZER_NAME
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation_and_lowercases() {
        let t = DefaultTokenizer.tokenize("Cough, Phlegm;fever  (acute)");
        assert_eq!(t, ["cough", "phlegm", "fever", "acute"]);
    }

    #[test]
    fn cjk_runs_also_emit_characters() {
        let t = DefaultTokenizer.tokenize("软组织风湿 pain");
        assert_eq!(t[0], "软组织风湿");
        assert_eq!(&t[1..6], ["软", "组", "织", "风", "湿"]);
        assert_eq!(t[6], "pain");
    }

    #[test]
    fn empty_text_yields_nothing() {
        assert!(DefaultTokenizer.tokenize(" ,; ").is_empty());
    }
}
