use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{contract_err, index_err, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: usize = 4;

/// Character-level vocabulary. Reserved tokens take ids `0..4`; every other
/// symbol follows in codepoint order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    symbols: String,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_symbols(r.symbols.chars().collect())
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            symbols: v.symbols.iter().collect(),
        }
    }
}

/// Builds the vocabulary covering every character of every document.
pub fn build_vocab(corpora: &[&Corpus]) -> Result<Vocab> {
    Vocab::from_texts(corpora.iter().flat_map(|c| c.documents().iter().map(String::as_str)))
}

impl Vocab {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut any = false;
        for t in texts {
            any = true;
            seen.extend(t.chars());
        }
        if !any {
            return contract_err("cannot build a vocabulary from zero documents");
        }
        Ok(Self::from_symbols(seen.into_iter().collect()))
    }

    fn from_symbols(symbols: Vec<char>) -> Self {
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i + RESERVED))
            .collect();
        Vocab { symbols, index }
    }

    pub fn size(&self) -> usize {
        self.symbols.len() + RESERVED
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    /// Token ids without BOS/EOS.
    pub fn encode_raw(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// `[BOS] + ids + [EOS]`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::with_capacity(text.len() + 2);
        ids.push(BOS);
        ids.extend(text.chars().map(|c| self.id(c)));
        ids.push(EOS);
        ids
    }

    /// Maps ids back to text. PAD/BOS/EOS are dropped and UNK becomes U+FFFD.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::with_capacity(ids.len());
        for &id in ids {
            match id {
                PAD | BOS | EOS => {}
                UNK => out.push('\u{FFFD}'),
                _ if id < self.size() => out.push(self.symbols[id - RESERVED]),
                _ => return index_err(format!("token id {id} outside vocabulary of {}", self.size())),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CorpusRole;
    use proptest::prelude::*;

    fn corpus(docs: &[&str]) -> Corpus {
        Corpus::new("t", CorpusRole::Public, docs.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn size_counts_reserved_plus_distinct_chars() {
        let v = build_vocab(&[&corpus(&["ab", "ba"])]).unwrap();
        assert_eq!(v.size(), 6);
        assert_eq!(v.id('a'), 4);
        assert_eq!(v.id('b'), 5);
    }

    #[test]
    fn duplicates_do_not_change_the_vocabulary() {
        let once = build_vocab(&[&corpus(&["a"])]).unwrap();
        let twice = build_vocab(&[&corpus(&["a", "a"])]).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn multibyte_characters_are_single_symbols() {
        let v = build_vocab(&[&corpus(&["aé"])]).unwrap();
        let expected: BTreeSet<char> = "aé".chars().collect();
        assert_eq!(v.size(), RESERVED + expected.len());
        assert_eq!(v.encode_raw("é").len(), 1);
    }

    #[test]
    fn encode_and_decode_edges() {
        let v = Vocab::from_texts(["ab"]).unwrap();
        assert_eq!(v.encode(""), vec![BOS, EOS]);
        assert_eq!(v.decode(&v.encode("")).unwrap(), "");
        assert_eq!(v.encode("ab"), vec![1, 4, 5, 2]);
        assert_eq!(v.encode("ax"), vec![BOS, 4, UNK, EOS]);
        assert!(v.decode(&[99]).is_err());
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(Vocab::from_texts(std::iter::empty()).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocab::from_texts(["hello, wörld"]).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }

    proptest! {
        #[test]
        fn decode_inverts_encode_on_in_vocab_text(s in "[a-zA-Z0-9 .,@éß-]{0,64}") {
            let v = Vocab::from_texts(["abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .,@éß-"]).unwrap();
            prop_assert_eq!(v.decode(&v.encode(&s)).unwrap(), s);
        }
    }
}
