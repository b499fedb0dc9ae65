//! Whitespace-and-punctuation tokenizer with byte fallback.
//!
//! Text is cut into pieces: runs of word characters, single punctuation
//! characters and whitespace runs, where one space directly before a word or
//! punctuation piece is folded into it (`" signal"`). Pieces found in the
//! vocabulary map to one id; anything else falls back to one id per UTF-8
//! byte, so every string round-trips.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: usize = 0;
pub const SEP: usize = 1;
pub const EOS: usize = 2;
const SPECIALS: [&str; 3] = ["<|bos|>", "<|sep|>", "<|eos|>"];
const BYTE_BASE: usize = SPECIALS.len();
const FIRST_PIECE: usize = BYTE_BASE + 256;

/// Token ids for a piece of text.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        TokenSequence { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.pieces.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pieces = Vec::<String>::deserialize(d)?;
        Vocabulary::from_pieces(pieces).map_err(serde::de::Error::custom)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Cuts text into pieces; concatenating the pieces gives back the input.
pub fn split_pieces(text: &str) -> Vec<&str> {
    let mut raw: Vec<&str> = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let end = if c.is_whitespace() {
            let mut e = i + c.len_utf8();
            while let Some(&(j, d)) = chars.peek() {
                if !d.is_whitespace() {
                    break;
                }
                e = j + d.len_utf8();
                chars.next();
            }
            e
        } else if is_word_char(c) {
            let mut e = i + c.len_utf8();
            while let Some(&(j, d)) = chars.peek() {
                if !is_word_char(d) {
                    break;
                }
                e = j + d.len_utf8();
                chars.next();
            }
            e
        } else {
            i + c.len_utf8()
        };
        debug_assert_eq!(start, i);
        raw.push(&text[i..end]);
        start = end;
    }
    debug_assert_eq!(start, text.len());

    // Fold a trailing single space of a whitespace run into the next piece.
    let mut out = Vec::with_capacity(raw.len());
    let mut offset = 0;
    let mut k = 0;
    while k < raw.len() {
        let piece = raw[k];
        let is_ws = piece.chars().next().is_some_and(char::is_whitespace);
        if is_ws && piece.ends_with(' ') && k + 1 < raw.len() {
            let head = piece.len() - 1;
            if head > 0 {
                out.push(&text[offset..offset + head]);
            }
            let next = raw[k + 1];
            out.push(&text[offset + head..offset + piece.len() + next.len()]);
            offset += piece.len() + next.len();
            k += 2;
        } else {
            out.push(piece);
            offset += piece.len();
            k += 1;
        }
    }
    out
}

impl Vocabulary {
    /// Vocabulary of specials and bytes only.
    pub fn bytes_only() -> Self {
        Vocabulary::from_pieces(Vec::new()).expect("empty piece list is valid")
    }

    /// `pieces` are the multi-byte entries after the specials and bytes.
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::Config("vocabulary piece is empty".into()));
            }
            if index.insert(p.clone(), FIRST_PIECE + i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary piece {p:?}")));
            }
        }
        Ok(Vocabulary { pieces, index })
    }

    /// Builds a vocabulary from the pieces of `texts` occurring at least
    /// `min_count` times, most frequent first, capped at `max_pieces`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize, max_pieces: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in texts {
            for p in split_pieces(t) {
                if p.len() > 1 {
                    *counts.entry(p).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_pieces);
        let pieces = ranked.into_iter().map(|(p, _)| p.to_string()).collect();
        Vocabulary::from_pieces(pieces).expect("pieces are unique and nonempty")
    }

    pub fn len(&self) -> usize {
        FIRST_PIECE + self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let mut ids = Vec::new();
        for p in split_pieces(text) {
            match self.index.get(p) {
                Some(&id) => ids.push(id),
                None => ids.extend(p.bytes().map(|b| BYTE_BASE + b as usize)),
            }
        }
        TokenSequence { ids }
    }

    /// Inverse of [`tokenize`](Self::tokenize). Special tokens render as
    /// nothing; byte runs that are not valid UTF-8 are replaced lossily.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            if id < BYTE_BASE {
                continue;
            } else if id < FIRST_PIECE {
                bytes.push((id - BYTE_BASE) as u8);
            } else if let Some(p) = self.pieces.get(id - FIRST_PIECE) {
                bytes.extend_from_slice(p.as_bytes());
            }
        }
        String::from_utf8(bytes).unwrap_or_else(|e| String::from_utf8_lossy(e.as_bytes()).into_owned())
    }

    pub fn token_text(&self, id: usize) -> String {
        if id < BYTE_BASE {
            SPECIALS[id].to_string()
        } else {
            self.detokenize(&[id])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pieces_concatenate_back() {
        let text = "Detect R-peaks  in\n\nsignal (numpy.ndarray): x";
        let pieces = split_pieces(text);
        assert_eq!(pieces.concat(), text);
        assert!(pieces.contains(&" in"));
        assert!(pieces.contains(&"signal"));
        assert!(pieces.contains(&" x"));
        assert!(pieces.contains(&"\n\n"));
    }

    #[test]
    fn empty_round_trip() {
        let v = Vocabulary::bytes_only();
        let t = v.tokenize("");
        assert!(t.is_empty());
        assert_eq!(v.detokenize(&t.ids), "");
    }

    #[test]
    fn known_pieces_use_single_ids() {
        let v = Vocabulary::build(["ab ab"], 1, 100);
        let t = v.tokenize("ab ab");
        assert_eq!(t.len(), 2);
        assert_eq!(v.detokenize(&t.ids), "ab ab");
        let unknown = v.tokenize("zz");
        assert_eq!(unknown.len(), 2);
    }

    #[test]
    fn build_is_deterministic_and_ranked() {
        let v = Vocabulary::build(["b b b b a a c"], 2, 10);
        assert_eq!(v.pieces(), &[" b".to_string(), " a".to_string()]);
    }

    #[test]
    fn rejects_duplicate_pieces() {
        assert!(Vocabulary::from_pieces(vec!["ab".into(), "ab".into()]).is_err());
    }

    proptest! {
        #[test]
        fn round_trips_any_utf8(s in "\\PC{0,1024}", extra in "[ a-z\\n]{0,64}") {
            let v = Vocabulary::build([extra.as_str(), "a the\n\nsignal"], 1, 64);
            let text = format!("{s}{extra}");
            let ids = v.tokenize(&text);
            prop_assert_eq!(v.detokenize(&ids.ids), text);
        }
    }
}
