//! Byte-level tokenisation: identity bytes for toy models, GPT-2 style
//! byte-pair encoding for real checkpoints.

use std::collections::HashMap;
use std::path::Path;

use fancy_regex::Regex;
use loopscope_core::TokenId;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fsutil::read_to_string;

const PRETOKENIZE: &str = r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

/// GPT-2's reversible byte → printable character table.
fn byte_alphabet() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut next = 256u32;
    for b in 0..=255u8 {
        let printable = matches!(b, b'!'..=b'~' | 0xA1..=0xAC | 0xAE..=0xFF);
        table[b as usize] = if printable {
            char::from(b)
        } else {
            let c = char::from_u32(next).expect("below the surrogate range");
            next += 1;
            c
        };
    }
    table
}

#[derive(Debug)]
pub struct Bpe {
    vocab: HashMap<String, TokenId>,
    tokens: Vec<Option<String>>,
    ranks: HashMap<(String, String), usize>,
    added: Vec<(String, TokenId)>,
    ignore_merges: bool,
    pattern: Regex,
    to_char: [char; 256],
    to_byte: HashMap<char, u8>,
}

#[derive(Debug)]
pub enum Tokenizer {
    /// Token id = byte value.
    Bytes,
    Bpe(Box<Bpe>),
}

#[derive(Deserialize)]
struct TokenizerJson {
    model: JsonModel,
    #[serde(default)]
    added_tokens: Vec<JsonAdded>,
}

#[derive(Deserialize)]
struct JsonModel {
    #[serde(rename = "type")]
    kind: Option<String>,
    vocab: HashMap<String, TokenId>,
    merges: Vec<JsonMerge>,
    #[serde(default)]
    ignore_merges: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonMerge {
    Joined(String),
    Pair([String; 2]),
}

#[derive(Deserialize)]
struct JsonAdded {
    id: TokenId,
    content: String,
}

fn split_merge(line: &str) -> Option<(String, String)> {
    let mut parts = line.split(' ');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => Some((a.to_string(), b.to_string())),
        _ => None,
    }
}

impl Tokenizer {
    /// `tokenizer.json`, else `vocab.json` + `merges.txt`, else byte mode.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let json = dir.join("tokenizer.json");
        if json.is_file() {
            return Self::from_tokenizer_json(&json);
        }
        let (vocab, merges) = (dir.join("vocab.json"), dir.join("merges.txt"));
        if vocab.is_file() && merges.is_file() {
            return Self::from_vocab_merges(&vocab, &merges);
        }
        Ok(Tokenizer::Bytes)
    }

    pub fn from_vocab_merges(vocab_path: &Path, merges_path: &Path) -> Result<Self> {
        let vocab: HashMap<String, TokenId> =
            serde_json::from_str(&read_to_string(vocab_path)?).map_err(|e| Error::format(vocab_path, e))?;
        let text = read_to_string(merges_path)?;
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if (i == 0 && line.starts_with("#version")) || line.is_empty() {
                continue;
            }
            let pair = split_merge(line).ok_or_else(|| Error::Parse {
                path: merges_path.to_path_buf(),
                line: i + 1,
                message: format!("expected two space-separated symbols, found `{line}`"),
            })?;
            merges.push(pair);
        }
        Bpe::new(vocab, merges, Vec::new(), false).map(|b| Tokenizer::Bpe(Box::new(b)))
    }

    pub fn from_tokenizer_json(path: &Path) -> Result<Self> {
        let doc: TokenizerJson = serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::format(path, e))?;
        if doc.model.kind.as_deref().is_some_and(|k| k != "BPE") {
            return Err(Error::format(path, format!("unsupported tokenizer model {:?}", doc.model.kind)));
        }
        let mut merges = Vec::with_capacity(doc.model.merges.len());
        for (i, m) in doc.model.merges.into_iter().enumerate() {
            let pair = match m {
                JsonMerge::Joined(s) => split_merge(&s),
                JsonMerge::Pair([a, b]) => Some((a, b)),
            };
            merges.push(pair.ok_or_else(|| Error::format(path, format!("malformed merge #{i}")))?);
        }
        let added = doc.added_tokens.into_iter().map(|a| (a.content, a.id)).collect();
        Bpe::new(doc.model.vocab, merges, added, doc.model.ignore_merges).map(|b| Tokenizer::Bpe(Box::new(b)))
    }

    pub fn is_bytes(&self) -> bool {
        matches!(self, Tokenizer::Bytes)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        match self {
            Tokenizer::Bytes => Ok(text.bytes().map(TokenId::from).collect()),
            Tokenizer::Bpe(b) => b.encode(text),
        }
    }

    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        match self {
            Tokenizer::Bytes => ids
                .iter()
                .map(|&id| u8::try_from(id).map_err(|_| Error::Tokenizer(format!("id {id} is not a byte"))))
                .collect(),
            Tokenizer::Bpe(b) => b.decode_bytes(ids),
        }
    }

    /// Decoded text; invalid UTF-8 is replaced.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    /// Number of ids the tokenizer can emit (`max id + 1`).
    pub fn id_bound(&self) -> usize {
        match self {
            Tokenizer::Bytes => 256,
            Tokenizer::Bpe(b) => b.tokens.len(),
        }
    }
}

impl Bpe {
    fn new(
        vocab: HashMap<String, TokenId>,
        merges: Vec<(String, String)>,
        mut added: Vec<(String, TokenId)>,
        ignore_merges: bool,
    ) -> Result<Self> {
        let bound = vocab.values().chain(added.iter().map(|(_, id)| id)).map(|&id| id as usize + 1).max().unwrap_or(0);
        let mut tokens = vec![None; bound];
        for (s, &id) in &vocab {
            tokens[id as usize] = Some(s.clone());
        }
        let ranks = merges.into_iter().enumerate().map(|(i, p)| (p, i)).collect();
        // longest first so overlapping added tokens match greedily
        added.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
        added.retain(|(s, _)| !s.is_empty());
        let to_char = byte_alphabet();
        let to_byte = to_char.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        let pattern = Regex::new(PRETOKENIZE).map_err(|e| Error::Tokenizer(e.to_string()))?;
        Ok(Self { vocab, tokens, ranks, added, ignore_merges, pattern, to_char, to_byte })
    }

    fn merge_word(&self, word: &str) -> Result<Vec<TokenId>> {
        if self.ignore_merges {
            if let Some(&id) = self.vocab.get(word) {
                return Ok(vec![id]);
            }
        }
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w[0].clone(), w[1].clone())))
                .min_by_key(|(r, _, _)| *r);
            let Some((_, a, b)) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
                    merged.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
            .iter()
            .map(|s| {
                self.vocab
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::Tokenizer(format!("symbol `{s}` is not in the vocabulary")))
            })
            .collect()
    }

    fn encode_plain(&self, text: &str, out: &mut Vec<TokenId>) -> Result<()> {
        for m in self.pattern.find_iter(text) {
            let piece = m.map_err(|e| Error::Tokenizer(e.to_string()))?.as_str();
            let mapped: String = piece.bytes().map(|b| self.to_char[b as usize]).collect();
            out.extend(self.merge_word(&mapped)?);
        }
        Ok(())
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            let next = self
                .added
                .iter()
                .filter_map(|(s, id)| rest.find(s.as_str()).map(|pos| (pos, s.len(), *id)))
                .min_by_key(|&(pos, len, _)| (pos, std::cmp::Reverse(len)));
            match next {
                Some((pos, len, id)) => {
                    self.encode_plain(&rest[..pos], &mut out)?;
                    out.push(id);
                    rest = &rest[pos + len..];
                }
                None => {
                    self.encode_plain(rest, &mut out)?;
                    break;
                }
            }
        }
        Ok(out)
    }

    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            if let Some((s, _)) = self.added.iter().find(|(_, a)| *a == id) {
                out.extend_from_slice(s.as_bytes());
                continue;
            }
            let token = self
                .tokens
                .get(id as usize)
                .and_then(Option::as_ref)
                .ok_or_else(|| Error::Tokenizer(format!("id {id} is outside the vocabulary")))?;
            for c in token.chars() {
                out.push(
                    *self
                        .to_byte
                        .get(&c)
                        .ok_or_else(|| Error::Tokenizer(format!("token {id} has non-byte symbol `{c}`")))?,
                );
            }
        }
        Ok(out)
    }
}

/// The first `n` Unicode scalar values of `text`.
pub fn truncate_chars(text: &str, n: usize) -> &str {
    match text.char_indices().nth(n) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabet_is_a_bijection() {
        let t = byte_alphabet();
        let mut seen: Vec<char> = t.to_vec();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 256);
        assert_eq!(t[b' ' as usize], 'Ġ');
        assert_eq!(t[b'\n' as usize], 'Ċ');
    }

    #[test]
    fn byte_mode() {
        let t = Tokenizer::Bytes;
        assert_eq!(t.encode("ab").unwrap(), vec![97, 98]);
        assert_eq!(t.decode(&[97, 98]).unwrap(), "ab");
        assert!(t.decode(&[300]).is_err());
    }

    #[test]
    fn truncation_counts_scalars() {
        assert_eq!(truncate_chars("naïve café", 4), "naïv");
        assert_eq!(truncate_chars("ab", 50), "ab");
        assert_eq!(truncate_chars("東京タワー", 2), "東京");
    }
}
