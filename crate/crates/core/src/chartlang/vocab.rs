//! The fixed ChartLang token vocabulary.
//!
//! Ids are contiguous from zero and grouped by role. The layout below is part
//! of the checkpoint format (it is hashed into every checkpoint header), so any
//! change to it must bump [`VOCAB_VERSION`].

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

pub const VOCAB_VERSION: u32 = 1;

/// A token id in the fixed vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Token(pub u16);

impl Token {
    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn as_str(self) -> &'static str {
        TOKENS[self.id()]
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const TOKENS: &[&str] = &[
    // framing
    "<TASK>", "<GEN>", "<EOT>", "<THINK>", "</THINK>", "<CODE>", "</CODE>", "<FB_OK>", "<FB_ERR>",
    // error codes
    "E_PARSE", "E_INDEX", "E_DUP", "E_NODATA",
    // keywords
    "LAYOUT", "SUBPLOT", "TYPE", "COLOR", "TITLE", "GRID", "LEGEND", "DATA", "END",
    // thinking-trace words
    "plan", "fix",
    // digits
    "0", "1", "2", "3", "4", "5", "6", "7", "8",
    // chart types
    "bar", "line", "scatter", "pie",
    // palette
    "red", "green", "blue", "orange", "purple", "cyan", "magenta", "yellow", "black", "gray",
    "brown", "navy",
    // title words
    "sales", "revenue", "growth", "profit", "cost", "users", "traffic", "energy", "rainfall",
    "temperature", "score", "share", "output", "demand", "price", "volume",
    // quantized values
    "0.0", "0.5", "1.0", "1.5", "2.0", "2.5", "3.0", "3.5", "4.0", "4.5", "5.0", "5.5", "6.0",
    "6.5", "7.0", "7.5", "8.0", "8.5", "9.0", "9.5",
];

pub const TASK: Token = Token(0);
pub const GEN: Token = Token(1);
pub const EOT: Token = Token(2);
pub const THINK_OPEN: Token = Token(3);
pub const THINK_CLOSE: Token = Token(4);
pub const CODE_OPEN: Token = Token(5);
pub const CODE_CLOSE: Token = Token(6);
pub const FB_OK: Token = Token(7);
pub const FB_ERR: Token = Token(8);
pub const E_PARSE: Token = Token(9);
pub const E_INDEX: Token = Token(10);
pub const E_DUP: Token = Token(11);
pub const E_NODATA: Token = Token(12);
pub const LAYOUT: Token = Token(13);
pub const SUBPLOT: Token = Token(14);
pub const TYPE: Token = Token(15);
pub const COLOR: Token = Token(16);
pub const TITLE: Token = Token(17);
pub const GRID: Token = Token(18);
pub const LEGEND: Token = Token(19);
pub const DATA: Token = Token(20);
pub const END: Token = Token(21);
pub const PLAN: Token = Token(22);
pub const FIX: Token = Token(23);

pub(crate) const DIGIT_BASE: u16 = 24;
pub(crate) const TYPE_BASE: u16 = 33;
pub(crate) const COLOR_BASE: u16 = 37;
pub(crate) const WORD_BASE: u16 = 49;
pub(crate) const VALUE_BASE: u16 = 65;

pub const NUM_DIGITS: u16 = 9;
pub const NUM_TYPES: u16 = 4;
pub const NUM_COLORS: u16 = 12;
pub const NUM_WORDS: u16 = 16;
pub const NUM_VALUES: u16 = 20;

pub const VOCAB_SIZE: usize = TOKENS.len();

const _: () = assert!(VALUE_BASE as usize + NUM_VALUES as usize == VOCAB_SIZE);

pub fn digit(d: u8) -> Token {
    debug_assert!((d as u16) < NUM_DIGITS);
    Token(DIGIT_BASE + d as u16)
}

pub fn as_digit(t: Token) -> Option<u8> {
    (t.0 >= DIGIT_BASE && t.0 < DIGIT_BASE + NUM_DIGITS).then(|| (t.0 - DIGIT_BASE) as u8)
}

/// Token ↔ id lookup.
pub struct Vocabulary {
    index: HashMap<&'static str, Token>,
}

impl Vocabulary {
    pub fn get() -> &'static Vocabulary {
        static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
        VOCAB.get_or_init(|| Vocabulary {
            index: TOKENS
                .iter()
                .enumerate()
                .map(|(i, s)| (*s, Token(i as u16)))
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        VOCAB_SIZE
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lookup(&self, s: &str) -> Option<Token> {
        self.index.get(s).copied()
    }

    /// Stable fingerprint of the token list, recorded in checkpoints.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in TOKENS {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown token {token:?} at position {position}")]
pub struct UnknownToken {
    pub token: String,
    pub position: usize,
}

/// Splits whitespace-separated text into tokens.
pub fn tokenize(text: &str) -> Result<Vec<Token>, UnknownToken> {
    let vocab = Vocabulary::get();
    text.split_whitespace()
        .enumerate()
        .map(|(position, s)| {
            vocab.lookup(s).ok_or_else(|| UnknownToken {
                token: s.to_string(),
                position,
            })
        })
        .collect()
}

pub fn detokenize(tokens: &[Token]) -> String {
    let mut out = String::with_capacity(tokens.len() * 6);
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_str());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_contiguous_and_distinct() {
        let v = Vocabulary::get();
        for (i, s) in TOKENS.iter().enumerate() {
            assert_eq!(v.lookup(s), Some(Token(i as u16)));
        }
        assert_eq!(v.index.len(), VOCAB_SIZE);
        assert_eq!(VOCAB_SIZE, 85);
    }

    #[test]
    fn group_bases_line_up() {
        assert_eq!(digit(0).as_str(), "0");
        assert_eq!(digit(8).as_str(), "8");
        assert_eq!(Token(TYPE_BASE).as_str(), "bar");
        assert_eq!(Token(COLOR_BASE).as_str(), "red");
        assert_eq!(Token(COLOR_BASE + 11).as_str(), "navy");
        assert_eq!(Token(WORD_BASE).as_str(), "sales");
        assert_eq!(Token(VALUE_BASE).as_str(), "0.0");
        assert_eq!(Token(VALUE_BASE + 19).as_str(), "9.5");
        assert_eq!(FIX.as_str(), "fix");
        assert_eq!(END.as_str(), "END");
    }

    #[test]
    fn tokenize_round_trip() {
        let text = "LAYOUT 1 1 SUBPLOT 0 TYPE bar COLOR red DATA 1.0 2.0 END";
        let toks = tokenize(text).unwrap();
        assert_eq!(detokenize(&toks), text);
        let err = tokenize("LAYOUT 1 x").unwrap_err();
        assert_eq!(err.position, 2);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(Vocabulary::get().hash(), Vocabulary::get().hash());
        assert_eq!(Vocabulary::get().hash().len(), 16);
    }
}
