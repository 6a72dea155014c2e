//! Frequency-based vocabulary with fixed special-token layout, plus
//! whitespace/punctuation tokenization.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as IoWrite};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const NUM_SPECIALS: usize = 5;

const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from raw texts: lowercase, split on whitespace,
    /// detach leading/trailing ASCII punctuation, keep tokens with frequency
    /// >= min_freq ordered by descending frequency (ties lexicographic),
    /// truncated to max_size - 5 non-special slots.
    pub fn build(texts: &[&str], max_size: usize, min_freq: usize) -> Result<Self> {
        if max_size < NUM_SPECIALS + 1 {
            return Err(Error::config(format!(
                "vocab max_size {max_size} leaves no room for regular tokens (need at least {})",
                NUM_SPECIALS + 1
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - NUM_SPECIALS);

        let mut id_to_token: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(ranked.into_iter().map(|(t, _)| t));
        Ok(Self::from_tokens(id_to_token))
    }

    fn from_tokens(id_to_token: Vec<String>) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.id_to_token[id as usize]
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Encodes text to ids; unknown tokens map to UNK, specials are never
    /// produced (special names are uppercase and inputs are lowercased).
    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text)
            .into_iter()
            .map(|tok| match self.token_to_id.get(&tok) {
                Some(&id) if id as usize >= NUM_SPECIALS => id,
                _ => UNK,
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let toks: Vec<&str> = ids.iter().map(|&id| self.token(id)).collect();
        toks.join(" ")
    }

    /// Serialized form: one `token<TAB>id` line per token, specials first.
    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        for (i, tok) in self.id_to_token.iter().enumerate() {
            out.push_str(tok);
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        out.into_bytes()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_file_bytes())
            .map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut tokens = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let (tok, id_str) = line.split_once('\t').ok_or_else(|| {
                Error::malformed(path, lineno + 1, "expected token<TAB>id")
            })?;
            let id: usize = id_str
                .parse()
                .map_err(|_| Error::malformed(path, lineno + 1, format!("bad id '{id_str}'")))?;
            if id != tokens.len() {
                return Err(Error::malformed(
                    path,
                    lineno + 1,
                    format!("ids must be dense and ascending, expected {}", tokens.len()),
                ));
            }
            tokens.push(tok.to_string());
        }
        Self::from_token_list(tokens).map_err(|e| match e {
            Error::Data(msg) => Error::malformed(path, 1, msg),
            other => other,
        })
    }

    /// Validates the special layout and bijectivity, then builds the maps.
    pub fn from_token_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIALS + 1 {
            return Err(Error::data(format!(
                "vocabulary has {} entries, need at least {}",
                tokens.len(),
                NUM_SPECIALS + 1
            )));
        }
        for (i, name) in SPECIAL_NAMES.iter().enumerate() {
            if tokens[i] != *name {
                return Err(Error::data(format!(
                    "special token at id {i} is '{}', expected '{name}'",
                    tokens[i]
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for t in &tokens {
            if !seen.insert(t.as_str()) {
                return Err(Error::data(format!("duplicate token '{t}'")));
            }
        }
        Ok(Self::from_tokens(tokens))
    }

    /// SHA-256 of the serialized vocabulary, hex-encoded. Stored in
    /// checkpoints so a model is never run against the wrong token ids.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_file_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Lowercases, splits on whitespace, and detaches leading/trailing ASCII
/// punctuation as separate tokens ("hello," -> ["hello", ","]); internal
/// punctuation stays put ("don't" -> ["don't"]).
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let lower = word.to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        let mut start = 0;
        let mut end = chars.len();
        while start < end && chars[start].is_ascii_punctuation() {
            start += 1;
        }
        while end > start && chars[end - 1].is_ascii_punctuation() {
            end -= 1;
        }
        for &c in &chars[..start] {
            out.push(c.to_string());
        }
        if start < end {
            out.push(chars[start..end].iter().collect());
        }
        for &c in &chars[end..] {
            out.push(c.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_detaches_edge_punctuation() {
        assert_eq!(tokenize("Hello, world!"), vec!["hello", ",", "world", "!"]);
        assert_eq!(tokenize("((x))"), vec!["(", "(", "x", ")", ")"]);
        assert_eq!(tokenize("don't stop"), vec!["don't", "stop"]);
        assert_eq!(tokenize("  "), Vec::<String>::new());
        assert_eq!(tokenize("..."), vec![".", ".", "."]);
    }

    #[test]
    fn build_orders_by_frequency_then_lexicographic() {
        let v = Vocabulary::build(&["a b a"], 100, 1).unwrap();
        assert_eq!(v.len(), NUM_SPECIALS + 2);
        assert_eq!(v.id_of("a"), Some(5));
        assert_eq!(v.id_of("b"), Some(6));
    }

    #[test]
    fn min_freq_excludes_rare_tokens() {
        let v = Vocabulary::build(&["x y", "x"], 100, 2).unwrap();
        assert_eq!(v.id_of("x"), Some(5));
        assert_eq!(v.id_of("y"), None);
        assert_eq!(v.encode("x y"), vec![5, UNK]);
    }

    #[test]
    fn max_size_below_six_is_rejected() {
        assert!(Vocabulary::build(&["a"], 5, 1).is_err());
        assert!(Vocabulary::build(&["a"], 6, 1).is_ok());
    }

    #[test]
    fn build_matches_counting_oracle() {
        // Corpus built by arithmetic: word wNN appears (40 - NN) times, so
        // expected ranking and cutoffs are known without running build().
        let mut sentences = Vec::new();
        for i in 0..40usize {
            for _ in 0..(40 - i) {
                sentences.push(format!("w{i:02}"));
            }
        }
        // Tie pair at frequency 40: "aaa" and "zzz" straddle w00 lexically.
        for _ in 0..40 {
            sentences.push("zzz aaa".to_string());
        }
        let texts: Vec<&str> = sentences.iter().map(|s| s.as_str()).collect();

        let v = Vocabulary::build(&texts, 1000, 3).unwrap();
        // freq-40 block in lexicographic order: aaa, w00, zzz.
        assert_eq!(v.id_of("aaa"), Some(5));
        assert_eq!(v.id_of("w00"), Some(6));
        assert_eq!(v.id_of("zzz"), Some(7));
        assert_eq!(v.id_of("w01"), Some(8));
        // min_freq 3 cuts w38 (freq 2) and w39 (freq 1).
        assert_eq!(v.id_of("w37"), Some(8 + 36));
        assert_eq!(v.id_of("w38"), None);
        assert_eq!(v.id_of("w39"), None);
        assert_eq!(v.len(), NUM_SPECIALS + 3 + 37);

        // Truncation keeps the highest-frequency prefix.
        let small = Vocabulary::build(&texts, NUM_SPECIALS + 4, 1).unwrap();
        assert_eq!(small.len(), NUM_SPECIALS + 4);
        assert_eq!(small.id_of("w01"), Some(8));
        assert_eq!(small.id_of("w02"), None);
    }

    #[test]
    fn encode_never_emits_specials() {
        let v = Vocabulary::build(&["[pad] hello [cls]"], 100, 1).unwrap();
        // "[pad]" tokenizes to "[", "pad", "]" so bracket pieces are regular
        // tokens; the uppercase special names can never collide.
        let ids = v.encode("hello [PAD] [MASK]");
        assert!(ids
            .iter()
            .all(|&id| id == UNK || id as usize >= NUM_SPECIALS));
        assert!(v.encode("").is_empty());
    }

    #[test]
    fn single_oov_maps_to_unk_in_place() {
        let v = Vocabulary::build(&["alpha beta gamma"], 100, 1).unwrap();
        let ids = v.encode("alpha zebra gamma");
        assert_eq!(ids.len(), 3);
        assert_eq!(ids[1], UNK);
        assert_ne!(ids[0], UNK);
        assert_ne!(ids[2], UNK);
    }

    #[test]
    fn file_roundtrip_and_validation() {
        let v = Vocabulary::build(&["a b c a b a"], 100, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(v, loaded);
        assert_eq!(v.content_hash(), loaded.content_hash());

        // Corrupt the special layout: loader must reject it.
        let text = std::fs::read_to_string(&path).unwrap();
        let bad = text.replace("[CLS]\t2", "[XXX]\t2");
        std::fs::write(&path, bad).unwrap();
        assert!(Vocabulary::load(&path).is_err());
    }

    #[test]
    fn content_hash_tracks_content() {
        let a = Vocabulary::build(&["a b"], 100, 1).unwrap();
        let b = Vocabulary::build(&["a c"], 100, 1).unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash().len(), 64);
    }

    proptest! {
        #[test]
        fn roundtrip_known_text(words in proptest::collection::vec("[a-z]{1,8}", 1..10)) {
            let text = words.join(" ");
            let v = Vocabulary::build(&[text.as_str()], 1000, 1).unwrap();
            let ids = v.encode(&text);
            prop_assert!(ids.iter().all(|&id| (id as usize) < v.len()));
            prop_assert!(ids.iter().all(|&id| id as usize >= NUM_SPECIALS));
            prop_assert_eq!(v.decode(&ids), text);
        }

        #[test]
        fn encode_ids_always_in_range(text in ".{0,60}") {
            let v = Vocabulary::build(&["fixed small vocab"], 16, 1).unwrap();
            for id in v.encode(&text) {
                prop_assert!((id as usize) < v.len());
                prop_assert!(id == UNK || id as usize >= NUM_SPECIALS);
            }
        }
    }
}
