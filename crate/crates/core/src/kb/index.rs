//! Exact-match hash index over tokenized surface forms, with a prefix set so
//! that longest-match extension can stop as soon as no stored key continues.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use serde::Serialize;

use super::KnowledgeRecord;
use crate::binio::*;
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::tokenizer::{tokenize_unbounded, SubwordVocabulary, TokenId};

const MAGIC: &[u8; 8] = b"KBAIDX\0\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeEntry {
    pub surface: String,
    pub key: Vec<TokenId>,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BuildStats {
    pub input: usize,
    pub stored: usize,
    /// Entries whose key was already taken by an earlier entry.
    pub collisions: usize,
    /// Entries whose key was empty or contained special/unknown tokens.
    pub dropped: usize,
}

#[derive(Debug, Clone)]
pub struct KnowledgeIndex {
    dim: usize,
    vocab: Fingerprint,
    entries: Vec<KnowledgeEntry>,
    exact: HashMap<Box<[TokenId]>, u32>,
    prefixes: HashSet<Box<[TokenId]>>,
    stats: BuildStats,
    fingerprint: Fingerprint,
}

impl KnowledgeIndex {
    pub fn empty(dim: usize, vocab: Fingerprint) -> Self {
        Self::from_entries(dim, vocab, Vec::new(), BuildStats::default())
    }

    /// Tokenizes every surface with `vocab` and indexes the resulting keys.
    ///
    /// Duplicate keys keep the first entry. Keys that are empty or contain a
    /// special token (including `[UNK]`) are dropped.
    pub fn build(records: &[KnowledgeRecord], vocab: &SubwordVocabulary) -> Result<Self> {
        let dim = records
            .first()
            .map(|r| r.vector.len())
            .ok_or_else(|| Error::InvalidInput("no knowledge entries to index".into()))?;
        let mut stats = BuildStats {
            input: records.len(),
            ..Default::default()
        };
        let mut seen: HashSet<Vec<TokenId>> = HashSet::with_capacity(records.len());
        let mut entries = Vec::with_capacity(records.len());
        for r in records {
            if r.vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.vector.len(),
                    context: format!("knowledge entry {:?}", r.label),
                });
            }
            let key = tokenize_unbounded(&r.surface, vocab).ids;
            if key.is_empty() || key.iter().any(|&id| vocab.is_special(id)) {
                stats.dropped += 1;
                continue;
            }
            if !seen.insert(key.clone()) {
                stats.collisions += 1;
                continue;
            }
            entries.push(KnowledgeEntry {
                surface: r.surface.clone(),
                key,
                vector: r.vector.clone(),
            });
        }
        if stats.dropped > 0 {
            warn!("{} knowledge entries dropped: empty or unknown-token keys", stats.dropped);
        }
        if stats.collisions > 0 {
            warn!("{} knowledge entries collide with an earlier key", stats.collisions);
        }
        stats.stored = entries.len();
        Ok(Self::from_entries(dim, vocab.fingerprint(), entries, stats))
    }

    fn from_entries(dim: usize, vocab: Fingerprint, entries: Vec<KnowledgeEntry>, stats: BuildStats) -> Self {
        let mut exact = HashMap::with_capacity(entries.len());
        let mut prefixes = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            exact.insert(e.key.clone().into_boxed_slice(), i as u32);
            for l in 1..e.key.len() {
                prefixes.insert(e.key[..l].to_vec().into_boxed_slice());
            }
        }
        let fingerprint = Self::compute_fingerprint(dim, &vocab, &entries);
        KnowledgeIndex {
            dim,
            vocab,
            entries,
            exact,
            prefixes,
            stats,
            fingerprint,
        }
    }

    fn compute_fingerprint(dim: usize, vocab: &Fingerprint, entries: &[KnowledgeEntry]) -> Fingerprint {
        let mut b = Fingerprint::builder().str("kb-index").u64(dim as u64).fingerprint(vocab);
        for e in entries {
            b = b.str(&e.surface);
            let key: Vec<u8> = e.key.iter().flat_map(|k| k.to_le_bytes()).collect();
            b = b.bytes(&key);
            let vec: Vec<u8> = e.vector.iter().flat_map(|x| x.to_le_bytes()).collect();
            b = b.bytes(&vec);
        }
        b.finish()
    }

    /// A new index holding only the entries accepted by `keep`.
    pub fn retain(&self, mut keep: impl FnMut(&KnowledgeEntry) -> bool) -> KnowledgeIndex {
        let entries: Vec<KnowledgeEntry> = self.entries.iter().filter(|e| keep(e)).cloned().collect();
        let stats = BuildStats {
            stored: entries.len(),
            ..self.stats
        };
        Self::from_entries(self.dim, self.vocab, entries, stats)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn entry(&self, id: u32) -> &KnowledgeEntry {
        &self.entries[id as usize]
    }

    pub fn stats(&self) -> BuildStats {
        self.stats
    }

    pub fn vocab_fingerprint(&self) -> Fingerprint {
        self.vocab
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn prefix_count(&self) -> usize {
        self.prefixes.len()
    }

    pub fn get(&self, key: &[TokenId]) -> Option<&KnowledgeEntry> {
        self.lookup(key).map(|i| self.entry(i))
    }

    pub fn lookup(&self, key: &[TokenId]) -> Option<u32> {
        self.exact.get(key).copied()
    }

    pub fn is_proper_prefix(&self, key: &[TokenId]) -> bool {
        self.prefixes.contains(key)
    }

    /// Longest stored key starting at `start`, as (length, entry id).
    pub fn longest_match_at(&self, tokens: &[TokenId], start: usize) -> Result<Option<(usize, u32)>> {
        if start >= tokens.len() {
            return Err(Error::OutOfRange {
                position: start,
                len: tokens.len(),
            });
        }
        Ok(self.longest_match_unchecked(tokens, start))
    }

    pub(crate) fn longest_match_unchecked(&self, tokens: &[TokenId], start: usize) -> Option<(usize, u32)> {
        let mut best = None;
        for end in start + 1..=tokens.len() {
            let window = &tokens[start..end];
            if let Some(&id) = self.exact.get(window) {
                best = Some((end - start, id));
            }
            if !self.prefixes.contains(window) {
                break;
            }
        }
        best
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        write_u32(w, VERSION)?;
        write_u32(w, self.dim as u32)?;
        w.write_all(&self.vocab.0)?;
        for v in [self.stats.input, self.stats.collisions, self.stats.dropped] {
            write_u64(w, v as u64)?;
        }
        write_u64(w, self.entries.len() as u64)?;
        for e in &self.entries {
            write_bytes(w, e.surface.as_bytes())?;
            write_u32(w, e.key.len() as u32)?;
            for &k in &e.key {
                write_u32(w, k)?;
            }
            for &x in &e.vector {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        let mut prefixes: Vec<&Box<[TokenId]>> = self.prefixes.iter().collect();
        prefixes.sort();
        write_u64(w, prefixes.len() as u64)?;
        for p in prefixes {
            write_u32(w, p.len() as u32)?;
            for &k in p.iter() {
                write_u32(w, k)?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let format_err = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let index = Self::read_from(&mut r).map_err(|e| format_err(e.to_string()))?;
        Ok(index)
    }

    fn read_from(r: &mut impl Read) -> io::Result<Self> {
        let invalid = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        read_magic(r, MAGIC)?;
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(invalid(&format!("unsupported index version {version}")));
        }
        let dim = read_u32(r)? as usize;
        let mut vocab = [0u8; 32];
        r.read_exact(&mut vocab)?;
        let input = read_u64(r)? as usize;
        let collisions = read_u64(r)? as usize;
        let dropped = read_u64(r)? as usize;
        let count = read_u64(r)? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            let surface = String::from_utf8(read_bytes(r, 1 << 20)?).map_err(|_| invalid("surface is not UTF-8"))?;
            let klen = read_u32(r)? as usize;
            let key = (0..klen).map(|_| read_u32(r)).collect::<io::Result<Vec<_>>>()?;
            let vector = (0..dim).map(|_| read_f32(r)).collect::<io::Result<Vec<_>>>()?;
            entries.push(KnowledgeEntry { surface, key, vector });
        }
        let pcount = read_u64(r)? as usize;
        let mut stored_prefixes = HashSet::with_capacity(pcount.min(1 << 24));
        for _ in 0..pcount {
            let plen = read_u32(r)? as usize;
            let p = (0..plen).map(|_| read_u32(r)).collect::<io::Result<Vec<_>>>()?;
            stored_prefixes.insert(p.into_boxed_slice());
        }
        let stats = BuildStats {
            input,
            stored: entries.len(),
            collisions,
            dropped,
        };
        let index = Self::from_entries(dim, Fingerprint(vocab), entries, stats);
        if index.prefixes != stored_prefixes {
            return Err(invalid("prefix table does not match entry keys"));
        }
        if index.exact.len() != index.entries.len() {
            return Err(invalid("duplicate keys in entry table"));
        }
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{PAD, UNK};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vocab(words: &[&str]) -> SubwordVocabulary {
        let mut all = vec![PAD, UNK];
        all.extend_from_slice(words);
        SubwordVocabulary::from_tokens(all).unwrap()
    }

    fn rec(s: &str) -> KnowledgeRecord {
        KnowledgeRecord::new(s.replace(' ', "_"), vec![1.0, 2.0])
    }

    #[test]
    fn healthy_food_key_and_prefix() {
        let v = vocab(&["healthy", "food"]);
        let idx = KnowledgeIndex::build(&[rec("healthy food")], &v).unwrap();
        let key = vec![v.id("healthy").unwrap(), v.id("food").unwrap()];
        assert_eq!(idx.get(&key).unwrap().surface, "healthy food");
        assert!(idx.is_proper_prefix(&key[..1]));
        assert!(!idx.is_proper_prefix(&key));
        assert!(idx.get(&key[..1]).is_none());
    }

    #[test]
    fn collision_first_wins() {
        let v = vocab(&["food"]);
        let recs = vec![
            KnowledgeRecord::new("Food", vec![1.0]),
            KnowledgeRecord::new("food", vec![2.0]),
        ];
        let idx = KnowledgeIndex::build(&recs, &v).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.stats().collisions, 1);
        assert_eq!(idx.entries()[0].vector, vec![1.0]);
    }

    #[test]
    fn unknown_keys_dropped_and_dims_checked() {
        let v = vocab(&["food"]);
        let recs = vec![
            KnowledgeRecord::new("zzz", vec![1.0]),
            KnowledgeRecord::new("zzz_food", vec![1.0]),
            KnowledgeRecord::new("food", vec![1.0]),
        ];
        let idx = KnowledgeIndex::build(&recs, &v).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.stats().dropped, 2);

        let bad = vec![KnowledgeRecord::new("food", vec![1.0]), KnowledgeRecord::new("x", vec![1.0, 2.0])];
        assert!(matches!(KnowledgeIndex::build(&bad, &v), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn longest_match_examples() {
        let v = vocab(&["play", "video", "game", "vitamin"]);
        let idx = KnowledgeIndex::build(&[rec("video"), rec("video game"), rec("vitamin")], &v).unwrap();
        let toks = tokenize_unbounded("play video game", &v).ids;
        let (len, id) = idx.longest_match_at(&toks, 1).unwrap().unwrap();
        assert_eq!(len, 2);
        assert_eq!(idx.entry(id).surface, "video game");
        assert_eq!(idx.longest_match_at(&toks, 0).unwrap(), None);
        assert!(matches!(idx.longest_match_at(&toks, 3), Err(Error::OutOfRange { .. })));

        let toks = tokenize_unbounded("vitamin", &v).ids;
        assert_eq!(idx.longest_match_at(&toks, 0).unwrap().unwrap().0, 1);

        let empty = KnowledgeIndex::empty(2, v.fingerprint());
        assert_eq!(empty.longest_match_at(&toks, 0).unwrap(), None);
    }

    fn brute_longest(entries: &[Vec<TokenId>], tokens: &[TokenId], start: usize) -> Option<usize> {
        (1..=tokens.len() - start)
            .rev()
            .find(|&l| entries.iter().any(|k| k.as_slice() == &tokens[start..start + l]))
    }

    #[test]
    fn longest_match_agrees_with_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let vocab_size = rng.gen_range(3..12u32);
            let n_keys = rng.gen_range(0..15);
            let keys: Vec<Vec<TokenId>> = (0..n_keys)
                .map(|_| (0..rng.gen_range(1..4)).map(|_| rng.gen_range(2..vocab_size)).collect())
                .collect();
            let mut seen = HashSet::new();
            let entries: Vec<KnowledgeEntry> = keys
                .iter()
                .filter(|k| seen.insert((*k).clone()))
                .map(|k| KnowledgeEntry { surface: format!("{k:?}"), key: k.clone(), vector: vec![0.0] })
                .collect();
            let idx = KnowledgeIndex::from_entries(1, Fingerprint::ZERO, entries, BuildStats::default());
            let tokens: Vec<TokenId> = (0..rng.gen_range(1..20)).map(|_| rng.gen_range(2..vocab_size)).collect();
            for start in 0..tokens.len() {
                let got = idx.longest_match_at(&tokens, start).unwrap().map(|(l, _)| l);
                assert_eq!(got, brute_longest(&keys, &tokens, start));
            }
        }
    }

    #[test]
    fn membership_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        while entries.len() < 10_000 {
            let key: Vec<TokenId> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(2..500)).collect();
            if seen.insert(key.clone()) {
                entries.push(KnowledgeEntry { surface: String::new(), key, vector: vec![0.0] });
            }
        }
        let idx = KnowledgeIndex::from_entries(1, Fingerprint::ZERO, entries.clone(), BuildStats::default());
        let scan = |k: &[TokenId]| entries.iter().position(|e| e.key == k);
        for (i, e) in entries.iter().enumerate().step_by(7) {
            assert_eq!(idx.lookup(&e.key), Some(i as u32));
            assert_eq!(scan(&e.key), Some(i));
        }
        let mut absent = 0;
        while absent < 10_000 {
            let key: Vec<TokenId> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(2..500)).collect();
            if seen.contains(&key) {
                continue;
            }
            absent += 1;
            assert_eq!(idx.lookup(&key), None);
            if absent % 50 == 0 {
                assert_eq!(scan(&key), None);
            }
        }
    }

    #[test]
    fn prefix_closure_invariant() {
        let v = vocab(&["a", "b", "c"]);
        let idx = KnowledgeIndex::build(&[rec("a b c"), rec("b"), rec("c a")], &v).unwrap();
        for e in idx.entries() {
            for l in 1..e.key.len() {
                assert!(idx.is_proper_prefix(&e.key[..l]));
            }
        }
        assert_eq!(idx.prefix_count(), 3);
    }

    #[test]
    fn save_load_roundtrip() {
        let v = vocab(&["healthy", "food", "video", "game"]);
        let idx = KnowledgeIndex::build(&[rec("healthy food"), rec("video game"), rec("food")], &v).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("kb.idx");
        idx.save(&p).unwrap();
        let back = KnowledgeIndex::load(&p).unwrap();
        assert_eq!(back.entries(), idx.entries());
        assert_eq!(back.fingerprint(), idx.fingerprint());
        assert_eq!(back.stats(), idx.stats());

        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(KnowledgeIndex::load(&p), Err(Error::Format { .. })));
    }
}
