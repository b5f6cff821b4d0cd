use std::collections::HashMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Lowercased word and punctuation tokens. The separator string is kept as a
/// single token and maps to the reserved separator id.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    separator: String,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    pattern: Regex,
}

#[derive(Serialize, Deserialize)]
struct Saved {
    separator: String,
    vocab: Vec<String>,
}

fn pattern_for(separator: &str) -> Regex {
    let sep = regex::escape(separator);
    Regex::new(&format!(r"{sep}|[\p{{L}}\p{{N}}_]+|[^\s\p{{L}}\p{{N}}_]")).expect("token pattern")
}

impl Tokenizer {
    /// Vocabulary from the training texts: reserved ids first, then tokens
    /// by descending frequency, ties in lexicographic order.
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>, separator: &str) -> Self {
        let pattern = pattern_for(separator);
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in split(&pattern, separator, text) {
                if tok != separator {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let vocab = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_vocab(vocab, separator)
    }

    fn from_vocab(vocab: Vec<String>, separator: &str) -> Self {
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self {
            separator: separator.to_string(),
            vocab,
            index,
            pattern: pattern_for(separator),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn separator(&self) -> &str {
        &self.separator
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        split(&self.pattern, &self.separator, text)
    }

    /// Token ids without the class token.
    pub fn ids(&self, text: &str) -> Vec<usize> {
        self.tokenize(text)
            .into_iter()
            .map(|t| {
                if t == self.separator {
                    SEP
                } else {
                    self.index.get(&t).copied().unwrap_or(UNK)
                }
            })
            .collect()
    }

    /// `[CLS]` followed by the text's ids, truncated or padded with `[PAD]`
    /// to exactly `seq_len`.
    pub fn encode(&self, text: &str, seq_len: usize) -> Vec<usize> {
        let mut ids = Vec::with_capacity(seq_len);
        ids.push(CLS);
        ids.extend(self.ids(text).into_iter().take(seq_len.saturating_sub(1)));
        ids.resize(seq_len, PAD);
        ids
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Saved {
            separator: self.separator.clone(),
            vocab: self.vocab.clone(),
        })
        .expect("tokenizer serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let saved: Saved = serde_json::from_str(s).map_err(|e| Error::parse("tokenizer", e))?;
        if saved.vocab.len() < RESERVED.len() || saved.vocab[..RESERVED.len()] != RESERVED {
            return Err(Error::parse("tokenizer", "reserved tokens missing"));
        }
        Ok(Self::from_vocab(saved.vocab, &saved.separator))
    }
}

fn split(pattern: &Regex, separator: &str, text: &str) -> Vec<String> {
    pattern
        .find_iter(text)
        .map(|m| {
            let s = m.as_str();
            if s == separator {
                s.to_string()
            } else {
                s.to_lowercase()
            }
        })
        .collect()
}

/// Rounded-up mean token count (class token excluded) over the training
/// inputs.
pub fn compute_max_length<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    tokenizer: &Tokenizer,
) -> Result<usize> {
    let (mut n, mut total) = (0usize, 0usize);
    for t in texts {
        n += 1;
        total += tokenizer.tokenize(t).len();
    }
    if n == 0 {
        return Err(Error::Model("cannot compute max length of an empty training set".into()));
    }
    Ok(total.div_ceil(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_words_punctuation_and_separator() {
        let tok = Tokenizer::fit(["x"], "[SEP]");
        assert_eq!(
            tok.tokenize("Vote Trump! [SEP] 0-man has 11-eye."),
            ["vote", "trump", "!", "[SEP]", "0", "-", "man", "has", "11", "-", "eye", "."]
        );
    }

    #[test]
    fn vocabulary_order_and_unknowns() {
        let tok = Tokenizer::fit(["b a b", "c b a"], "[SEP]");
        assert_eq!(&tok.vocab()[4..], ["b", "a", "c"]);
        assert_eq!(tok.ids("a zzz [SEP] b"), vec![5, UNK, SEP, 4]);
        assert_eq!(tok.encode("a b c a", 3), vec![CLS, 5, 4]);
        assert_eq!(tok.encode("a", 4), vec![CLS, 5, PAD, PAD]);
    }

    #[test]
    fn max_length_examples() {
        let tok = Tokenizer::fit(["x"], "[SEP]");
        assert_eq!(compute_max_length(["a b c d", "a b c d e f"], &tok).unwrap(), 5);
        assert_eq!(compute_max_length(["a b c", "a b c d"], &tok).unwrap(), 4);
        assert_eq!(compute_max_length(["a b c d e f g"], &tok).unwrap(), 7);
        assert!(compute_max_length(std::iter::empty::<&str>(), &tok).is_err());
    }

    #[test]
    fn json_round_trip() {
        let tok = Tokenizer::fit(["hello there", "there"], "<s>");
        let back = Tokenizer::from_json(&tok.to_json()).unwrap();
        assert_eq!(back.vocab(), tok.vocab());
        assert_eq!(back.ids("there <s> hello"), tok.ids("there <s> hello"));
    }
}
