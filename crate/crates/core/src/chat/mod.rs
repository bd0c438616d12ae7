//! CHAT (`.cha`) transcripts → cleaned utterances → token id sequences.

mod clean;
mod parse;
mod tokenize;

pub use clean::clean_utterance;
pub use parse::{parse_chat, Transcript, Utterance};
pub use tokenize::{
    detokenize, split_words, tokenize, tokenize_text, TokenRecord, TokenSequence, Vocab, CLS, PAD,
    SEP, UNK,
};
