use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::Transcript;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Word-level vocabulary; ids 0..4 are reserved for PAD, UNK, CLS, SEP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    words: Vec<String>,
}

impl From<VocabFile> for Vocab {
    fn from(f: VocabFile) -> Self {
        Vocab::from_words(f.words)
    }
}

impl From<Vocab> for VocabFile {
    fn from(v: Vocab) -> Self {
        VocabFile { words: v.words }
    }
}

impl Vocab {
    /// Vocabulary whose content words get ids 4, 5, ... in the given order.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in words {
            let w = w.into();
            if !v.index.contains_key(&w) && !RESERVED.contains(&w.as_str()) {
                v.index.insert(w.clone(), (RESERVED.len() + v.words.len()) as u32);
                v.words.push(w);
            }
        }
        v
    }

    /// Build from training texts: most frequent first, ties alphabetical,
    /// dropping words seen fewer than `min_count` times.
    pub fn build<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        min_count: usize,
        max_words: Option<usize>,
    ) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for w in split_words(t) {
                *counts.entry(w.to_string()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(max) = max_words {
            ranked.truncate(max);
        }
        Self::from_words(ranked.into_iter().map(|(w, _)| w))
    }

    pub fn size(&self) -> usize {
        RESERVED.len() + self.words.len()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        let id = id as usize;
        if id < RESERVED.len() {
            Some(RESERVED[id])
        } else {
            self.words.get(id - RESERVED.len()).map(String::as_str)
        }
    }
}

/// Split on whitespace and sentence punctuation; punctuation is dropped.
pub fn split_words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| c.is_whitespace() || matches!(c, '.' | '?' | '!' | ','))
        .filter(|w| !w.is_empty())
}

/// Fixed-length id sequence with its attention mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub vocab_size: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Validate the structural invariants (CLS first, PAD under mask 0, ids
    /// in range).
    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.attention_mask.len() {
            return Err(invalid("ids and mask lengths differ"));
        }
        if self.ids.first() != Some(&CLS) {
            return Err(invalid("token sequence must start with CLS"));
        }
        for (&id, &m) in self.ids.iter().zip(&self.attention_mask) {
            if id as usize >= self.vocab_size {
                return Err(invalid(format!(
                    "token id {id} outside vocabulary of {}",
                    self.vocab_size
                )));
            }
            if m == 0 && id != PAD {
                return Err(invalid("masked position holds a non-PAD id"));
            }
        }
        Ok(())
    }
}

/// `[CLS] words… [SEP] PAD…`, truncated so that SEP always closes the
/// sequence.
pub fn tokenize_text(text: &str, vocab: &Vocab, max_len: usize) -> Result<TokenSequence> {
    if max_len < 2 {
        return Err(invalid("max_len must be at least 2"));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(split_words(text).take(max_len - 2).map(|w| vocab.id(w)));
    ids.push(SEP);
    let used = ids.len();
    ids.resize(max_len, PAD);
    let mut attention_mask = vec![1u8; used];
    attention_mask.resize(max_len, 0);
    Ok(TokenSequence {
        ids,
        attention_mask,
        vocab_size: vocab.size(),
    })
}

pub fn tokenize(transcript: &Transcript, vocab: &Vocab, max_len: usize) -> Result<TokenSequence> {
    tokenize_text(&transcript.joined_text(), vocab, max_len)
}

/// Content words of a sequence (UNK rendered as `[UNK]`), specials dropped.
pub fn detokenize(seq: &TokenSequence, vocab: &Vocab) -> Vec<String> {
    seq.ids
        .iter()
        .zip(&seq.attention_mask)
        .filter(|(&id, &m)| m == 1 && !matches!(id, PAD | CLS | SEP))
        .map(|(&id, _)| vocab.word(id).unwrap_or("[UNK]").to_string())
        .collect()
}

/// One line of `tokens.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub id: String,
    pub text: String,
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn empty_text() {
        let v = Vocab::from_words(["a"]);
        let s = tokenize_text("", &v, 5).unwrap();
        assert_eq!(s.ids, vec![CLS, SEP, PAD, PAD, PAD]);
        assert_eq!(s.attention_mask, vec![1, 1, 0, 0, 0]);
    }

    #[test]
    fn mapped_words() {
        let v = Vocab::from_words(["the", "boy", "falls"]);
        assert_eq!(v.id("the"), 4);
        let s = tokenize_text("the boy falls", &v, 6).unwrap();
        assert_eq!(s.ids, vec![2, 4, 5, 6, 3, 0]);
        assert_eq!(s.attention_mask, vec![1, 1, 1, 1, 1, 0]);
        s.validate().unwrap();
    }

    #[test]
    fn punctuation_and_unknowns() {
        let v = Vocab::from_words(["cookie", "jar"]);
        let s = tokenize_text("cookie jar. falls!", &v, 8).unwrap();
        assert_eq!(&s.ids[..5], &[CLS, 4, 5, UNK, SEP]);
    }

    #[test]
    fn max_len_too_small() {
        assert!(tokenize_text("a", &Vocab::from_words(["a"]), 1).is_err());
    }

    #[test]
    fn build_orders_by_frequency() {
        let v = Vocab::build(["b a b", "c b a ."], 1, None);
        assert_eq!((v.id("b"), v.id("a"), v.id("c")), (4, 5, 6));
        let capped = Vocab::build(["b a b", "c b a ."], 2, None);
        assert_eq!(capped.id("c"), UNK);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }

    proptest! {
        #[test]
        fn mask_count_and_round_trip(words in prop::collection::vec("[a-e]{1,3}", 0..20), max_len in 2usize..16) {
            let text = words.join(" ");
            let vocab = Vocab::build([text.as_str()], 1, None);
            let s = tokenize_text(&text, &vocab, max_len).unwrap();
            let ones = s.attention_mask.iter().filter(|&&m| m == 1).count();
            prop_assert_eq!(ones, max_len.min(words.len() + 2));
            prop_assert_eq!(s.ids.len(), max_len);
            s.validate().unwrap();
            let back = detokenize(&s, &vocab);
            prop_assert_eq!(&back[..], &words[..back.len()]);
            prop_assert_eq!(back.len(), words.len().min(max_len - 2));
        }
    }
}
