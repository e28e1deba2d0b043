//! Tokenization, rule-based head extraction and locative-term detection.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_LEXICON: &str = include_str!("../resources/lexicon.json");

/// Multi-hot location code. Slot order: left, right, top, bottom, h-center, v-center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SpatialVector(pub [u8; 6]);

impl SpatialVector {
    pub const LEFT: usize = 0;
    pub const RIGHT: usize = 1;
    pub const TOP: usize = 2;
    pub const BOTTOM: usize = 3;
    pub const H_CENTER: usize = 4;
    pub const V_CENTER: usize = 5;

    pub fn zeros() -> Self {
        SpatialVector([0; 6])
    }

    pub fn set(&mut self, slot: usize) {
        self.0[slot] = 1;
    }

    pub fn get(&self, slot: usize) -> bool {
        self.0[slot] != 0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&s| s == 0)
    }

    pub fn dot(&self, other: &SpatialVector) -> u32 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| u32::from(a) * u32::from(b))
            .sum()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpatialTerms {
    left: Vec<String>,
    right: Vec<String>,
    top: Vec<String>,
    bottom: Vec<String>,
    h_center: Vec<String>,
    v_center: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    spatial: SpatialTerms,
    head_stoplist: Vec<String>,
}

/// Locative lexicon (one term set per spatial slot) and the head-extraction stoplist.
#[derive(Debug, Clone)]
pub struct Lexicon {
    slots: [HashSet<String>; 6],
    stoplist: HashSet<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::from_json(DEFAULT_LEXICON).expect("bundled lexicon parses")
    }
}

impl Lexicon {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: LexiconFile =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("lexicon: {e}")))?;
        let set = |v: Vec<String>| v.into_iter().map(|s| s.to_lowercase()).collect();
        let s = file.spatial;
        Ok(Lexicon {
            slots: [
                set(s.left),
                set(s.right),
                set(s.top),
                set(s.bottom),
                set(s.h_center),
                set(s.v_center),
            ],
            stoplist: set(file.head_stoplist),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Lexicon::from_json(&text)
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stoplist.contains(token)
    }

    /// Rightmost token outside the stoplist, else the last token.
    pub fn extract_head<'a>(&self, tokens: &'a [String]) -> Result<&'a str> {
        let last = tokens
            .last()
            .ok_or_else(|| Error::Argument("cannot extract the head of an empty phrase".into()))?;
        Ok(tokens
            .iter()
            .rev()
            .find(|t| !self.is_stopword(t))
            .unwrap_or(last))
    }

    pub fn extract_spatial_terms(&self, tokens: &[String]) -> SpatialVector {
        let mut v = SpatialVector::zeros();
        for t in tokens {
            for (slot, terms) in self.slots.iter().enumerate() {
                if terms.contains(t.as_str()) {
                    v.set(slot);
                }
            }
        }
        v
    }

    /// Resolves head and spatial code. A precomputed head wins over the heuristic.
    pub fn analyze(&self, tokens: &[String], precomputed_head: Option<&str>) -> Result<AnalyzedPhrase> {
        let head = match precomputed_head {
            Some(h) if !h.is_empty() => h.to_lowercase(),
            _ => self.extract_head(tokens)?.to_string(),
        };
        Ok(AnalyzedPhrase {
            tokens: tokens.to_vec(),
            head,
            s_t: self.extract_spatial_terms(tokens),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzedPhrase {
    pub tokens: Vec<String>,
    pub head: String,
    pub s_t: SpatialVector,
}

/// Lowercases, strips punctuation (keeping inner hyphens) and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let kept: String = raw
                .chars()
                .filter(|c| c.is_alphanumeric() || *c == '-')
                .flat_map(char::to_lowercase)
                .collect();
            let trimmed = kept.trim_matches('-');
            (!trimmed.is_empty()).then(|| trimmed.to_string())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn tokenizer_cases() {
        assert_eq!(tokenize("The woman on the left"), toks("the woman on the left"));
        assert_eq!(tokenize("blue-shirted man!"), toks("blue-shirted man"));
        assert!(tokenize("").is_empty());
        assert!(tokenize(" ... ").is_empty());
    }

    #[test]
    fn head_heuristic() {
        let lex = Lexicon::default();
        assert_eq!(lex.extract_head(&toks("the woman on the left")).unwrap(), "woman");
        assert_eq!(lex.extract_head(&toks("a red car")).unwrap(), "car");
        assert_eq!(lex.extract_head(&toks("left")).unwrap(), "left");
        assert!(lex.extract_head(&[]).is_err());
    }

    #[test]
    fn precomputed_head_wins() {
        let lex = Lexicon::default();
        let a = lex.analyze(&toks("a man in a blue shirt"), Some("man")).unwrap();
        assert_eq!(a.head, "man");
        let b = lex.analyze(&toks("a man in a blue shirt"), None).unwrap();
        assert_eq!(b.head, "shirt");
    }

    #[test]
    fn spatial_terms() {
        let lex = Lexicon::default();
        assert_eq!(
            lex.extract_spatial_terms(&toks("the woman on the left")),
            SpatialVector([1, 0, 0, 0, 0, 0])
        );
        assert!(lex.extract_spatial_terms(&toks("a red car")).is_zero());
        assert_eq!(
            lex.extract_spatial_terms(&toks("upper middle window")),
            SpatialVector([0, 0, 1, 0, 1, 1])
        );
    }

    #[test]
    fn custom_lexicon_rejects_unknown_keys() {
        assert!(Lexicon::from_json(r#"{"spatial":{},"head_stoplist":[],"x":1}"#).is_err());
    }

    proptest! {
        #[test]
        fn non_locative_tokens_never_change_spatial_code(
            words in prop::collection::vec("[a-z]{1,8}", 1..6),
            extra in "[a-z]{1,8}",
        ) {
            let lex = Lexicon::default();
            let tokens: Vec<String> = words;
            let base = lex.extract_spatial_terms(&tokens);
            if lex.extract_spatial_terms(std::slice::from_ref(&extra)).is_zero() {
                let mut more = tokens.clone();
                more.push(extra);
                prop_assert_eq!(lex.extract_spatial_terms(&more), base);
            }
            // head extraction is total on non-empty input
            prop_assert!(lex.extract_head(&tokens).is_ok());
        }
    }
}
