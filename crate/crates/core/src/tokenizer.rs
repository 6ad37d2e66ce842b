//! Word-level vocabulary with hashed out-of-vocabulary buckets.
//!
//! Id layout: `0` is padding, `[1, 1 + oov_buckets)` are OOV buckets and
//! in-vocabulary words follow from `1 + oov_buckets` in frequency order.
//! With a single bucket, words start at id 2.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const OOV_BASE_ID: u32 = 1;

pub const DEFAULT_QUERY_LEN: usize = 64;
pub const DEFAULT_DOC_LEN: usize = 512;

/// Lowercased words with every non-alphanumeric character removed.
/// Words that become empty are dropped. Shared with BM25.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(|w| {
        let cleaned: String = w
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        (!cleaned.is_empty()).then_some(cleaned)
    })
}

/// FNV-1a, 64 bit, over the UTF-8 bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    oov_buckets: u32,
}

impl Vocab {
    /// Builds from the top `max_vocab` words of the corpus by frequency,
    /// ties broken lexicographically.
    pub fn build(corpus: &Corpus, max_vocab: usize, oov_buckets: u32) -> Result<Self> {
        Self::build_from_texts(corpus.iter().map(|d| d.full_text()), max_vocab, oov_buckets)
    }

    pub fn build_from_texts<I, S>(texts: I, max_vocab: usize, oov_buckets: u32) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if max_vocab == 0 {
            return Err(Error::InvalidArgument("max_vocab must be >= 1".into()));
        }
        if oov_buckets == 0 {
            return Err(Error::InvalidArgument("oov_buckets must be >= 1".into()));
        }
        let mut freq: HashMap<String, u64> = HashMap::new();
        for t in texts {
            for w in words(t.as_ref()) {
                *freq.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_vocab);
        let first = 1 + oov_buckets;
        let token_to_id = ranked
            .into_iter()
            .enumerate()
            .map(|(i, (w, _))| (w, first + i as u32))
            .collect();
        Ok(Vocab {
            token_to_id,
            oov_buckets,
        })
    }

    /// Total id space: padding, OOV buckets and words.
    pub fn size(&self) -> usize {
        1 + self.oov_buckets as usize + self.token_to_id.len()
    }

    pub fn num_words(&self) -> usize {
        self.token_to_id.len()
    }

    pub fn oov_buckets(&self) -> u32 {
        self.oov_buckets
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.token_to_id.get(word).copied()
    }

    pub fn token_id(&self, word: &str) -> u32 {
        self.id(word).unwrap_or_else(|| {
            OOV_BASE_ID + (fnv1a64(word.as_bytes()) % u64::from(self.oov_buckets)) as u32
        })
    }

    pub fn encode(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        if max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be >= 1".into()));
        }
        let mut ids: Vec<u32> = words(text).take(max_len).map(|w| self.token_id(&w)).collect();
        let length = ids.len();
        ids.resize(max_len, PAD_ID);
        Ok(TokenSequence { ids, length })
    }

    /// Header `gtr-vocab<TAB>num_words<TAB>oov_buckets`, then `token<TAB>id`
    /// lines in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(out, "gtr-vocab\t{}\t{}", self.token_to_id.len(), self.oov_buckets).map_err(io)?;
        let mut entries: Vec<(&String, &u32)> = self.token_to_id.iter().collect();
        entries.sort_by_key(|(_, id)| **id);
        for (w, id) in entries {
            writeln!(out, "{w}\t{id}").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let bad = |line: usize, reason: &str| Error::Malformed {
            path: path.to_path_buf(),
            line,
            reason: reason.to_string(),
        };
        let header = lines
            .next()
            .ok_or_else(|| bad(1, "missing header"))?
            .map_err(|e| Error::io(path, e))?;
        let h: Vec<&str> = header.split('\t').collect();
        let (n, oov_buckets) = match h.as_slice() {
            ["gtr-vocab", n, b] => (
                n.parse::<usize>().map_err(|_| bad(1, "bad word count"))?,
                b.parse::<u32>().map_err(|_| bad(1, "bad oov bucket count"))?,
            ),
            _ => return Err(bad(1, "bad header")),
        };
        if oov_buckets == 0 {
            return Err(bad(1, "oov_buckets must be >= 1"));
        }
        let mut token_to_id = HashMap::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let (w, id) = line.split_once('\t').ok_or_else(|| bad(i + 2, "expected token<TAB>id"))?;
            let id: u32 = id.parse().map_err(|_| bad(i + 2, "bad id"))?;
            if id < 1 + oov_buckets || id as usize >= 1 + oov_buckets as usize + n {
                return Err(bad(i + 2, "id out of range"));
            }
            if token_to_id.insert(w.to_string(), id).is_some() {
                return Err(bad(i + 2, "duplicate token"));
            }
        }
        if token_to_id.len() != n {
            return Err(bad(1, "word count does not match header"));
        }
        Ok(Vocab {
            token_to_id,
            oov_buckets,
        })
    }
}

/// Token ids right-padded to a fixed length. Non-pad ids form a prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<u32>,
    length: usize,
}

impl TokenSequence {
    /// Wraps raw ids; everything from the first PAD on must be PAD.
    pub fn from_ids(ids: Vec<u32>) -> Result<Self> {
        let length = ids.iter().position(|&i| i == PAD_ID).unwrap_or(ids.len());
        if ids[length..].iter().any(|&i| i != PAD_ID) {
            return Err(Error::InvalidArgument("padding must be a suffix".into()));
        }
        Ok(TokenSequence { ids, length })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// The non-pad prefix.
    pub fn tokens(&self) -> &[u32] {
        &self.ids[..self.length]
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use proptest::prelude::*;

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::from_documents(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Document::new(format!("d{i}"), "", *t)),
        )
        .unwrap()
    }

    #[test]
    fn frequency_and_ties() {
        let v = Vocab::build(&corpus(&["a a b"]), 1, 1).unwrap();
        assert!(v.id("a").is_some());
        assert!(v.id("b").is_none());
        let v = Vocab::build(&corpus(&["b a"]), 1, 1).unwrap();
        assert_eq!(v.id("a"), Some(2));
        assert_eq!(v.id("b"), None);
    }

    #[test]
    fn rebuild_is_identical() {
        let c = corpus(&["the cat sat", "on the mat, the end!"]);
        assert_eq!(Vocab::build(&c, 10, 4).unwrap(), Vocab::build(&c, 10, 4).unwrap());
    }

    #[test]
    fn encode_lowercases_and_pads() {
        let v = Vocab::build(&corpus(&["a"]), 10, 1).unwrap();
        let a = v.id("a").unwrap();
        let s = v.encode("A a", 4).unwrap();
        assert_eq!(s.ids(), &[a, a, 0, 0]);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn truncation_and_empty() {
        let v = Vocab::build(&corpus(&["w"]), 10, 1).unwrap();
        let text = vec!["w"; 600].join(" ");
        assert_eq!(v.encode(&text, 512).unwrap().len(), 512);
        let e = v.encode("", 8).unwrap();
        assert!(e.is_empty());
        assert!(e.ids().iter().all(|&i| i == PAD_ID));
    }

    #[test]
    fn oov_hash_is_fnv1a() {
        // reference values of 64-bit FNV-1a
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
        let v = Vocab::build(&corpus(&["known"]), 10, 7).unwrap();
        let id = v.token_id("zebra");
        assert_eq!(id, 1 + (fnv1a64(b"zebra") % 7) as u32);
        assert!((1..8).contains(&id));
        assert_eq!(v.token_id("known"), 8);
    }

    #[test]
    fn punctuation_stripped() {
        let w: Vec<String> = words("Hello, World!! -- it's").collect();
        assert_eq!(w, ["hello", "world", "its"]);
    }

    #[test]
    fn save_load_round_trip() {
        let v = Vocab::build(&corpus(&["x y z z", "y q"]), 3, 5).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        v.save(f.path()).unwrap();
        assert_eq!(Vocab::load(f.path()).unwrap(), v);
    }

    proptest! {
        #[test]
        fn encode_invariants(text in "[a-zA-Z ,.!]{0,80}", max_len in 1usize..16) {
            let v = Vocab::build(&corpus(&["a b c d e f"]), 4, 3).unwrap();
            let s = v.encode(&text, max_len).unwrap();
            prop_assert_eq!(s.ids().len(), max_len);
            prop_assert!(s.len() <= max_len);
            prop_assert!(s.ids()[s.len()..].iter().all(|&i| i == PAD_ID));
            prop_assert!(s.tokens().iter().all(|&i| i != PAD_ID && (i as usize) < v.size()));
            prop_assert_eq!(&s, &v.encode(&text, max_len).unwrap());
        }
    }
}
