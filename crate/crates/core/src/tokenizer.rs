//! WordPiece-style subword tokenizer.
//!
//! Text is NFC-normalized and lowercased, split on whitespace with punctuation
//! characters standing as words of their own, and each word is segmented by
//! greedy longest-prefix matching against the vocabulary. Non-initial pieces
//! carry the continuation prefix. A word that cannot be fully segmented becomes
//! a single unknown token.
//!
//! Training text and knowledge-base surface forms go through the same code path,
//! which is what lets the matcher compare token ids exactly.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

pub const DEFAULT_CONTINUATION_PREFIX: &str = "##";
pub const DEFAULT_MAX_LEN: usize = 20;
/// Words longer than this many characters map straight to the unknown token.
pub const MAX_WORD_CHARS: usize = 100;

pub type TokenId = u32;

#[derive(Debug, Clone)]
pub struct SubwordVocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
    continuation_prefix: String,
    pad: TokenId,
    unk: TokenId,
    cls: Option<TokenId>,
    sep: Option<TokenId>,
    mask: Option<TokenId>,
    fingerprint: Fingerprint,
}

impl SubwordVocabulary {
    /// Builds a vocabulary where the position of each token is its id.
    ///
    /// `[PAD]` and `[UNK]` are required; `[CLS]`, `[SEP]` and `[MASK]` are
    /// registered when present.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list = Vec::new();
        let mut ids = HashMap::new();
        for (line, tok) in tokens.into_iter().enumerate() {
            let tok = tok.into();
            if ids.contains_key(&tok) {
                return Err(Error::DuplicateToken {
                    token: tok,
                    line: line + 1,
                });
            }
            ids.insert(tok.clone(), list.len() as TokenId);
            list.push(tok);
        }

        let missing: Vec<&str> = [PAD, UNK]
            .into_iter()
            .filter(|t| !ids.contains_key(*t))
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingSpecialTokens(missing.join(", ")));
        }

        let fingerprint = list
            .iter()
            .fold(Fingerprint::builder().str("vocab"), |b, t| b.str(t))
            .finish();

        Ok(SubwordVocabulary {
            pad: ids[PAD],
            unk: ids[UNK],
            cls: ids.get(CLS).copied(),
            sep: ids.get(SEP).copied(),
            mask: ids.get(MASK).copied(),
            tokens: list,
            ids,
            continuation_prefix: DEFAULT_CONTINUATION_PREFIX.to_string(),
            fingerprint,
        })
    }

    /// Loads a line-oriented vocabulary file: one token per line, line index = id.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(|l| l.trim_end_matches('\r')))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = self.tokens.join("\n");
        out.push('\n');
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn continuation_prefix(&self) -> &str {
        &self.continuation_prefix
    }

    pub fn pad(&self) -> TokenId {
        self.pad
    }

    pub fn unk(&self) -> TokenId {
        self.unk
    }

    pub fn cls(&self) -> Option<TokenId> {
        self.cls
    }

    pub fn sep(&self) -> Option<TokenId> {
        self.sep
    }

    pub fn mask(&self) -> Option<TokenId> {
        self.mask
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id == self.pad
            || id == self.unk
            || Some(id) == self.cls
            || Some(id) == self.sep
            || Some(id) == self.mask
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }
}

/// Token ids for one piece of text, with character offsets into the normalized text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    /// Normalized (NFC, lowercased) form of the originating text.
    pub text: String,
    /// Half-open character span of each token in `text`.
    pub offsets: Vec<(usize, usize)>,
    /// Fingerprint of the vocabulary that produced the ids.
    pub vocab: Fingerprint,
}

impl TokenSequence {
    pub fn from_ids(ids: Vec<TokenId>, vocab: &SubwordVocabulary) -> Self {
        TokenSequence {
            offsets: vec![(0, 0); ids.len()],
            ids,
            text: String::new(),
            vocab: vocab.fingerprint(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn normalize(text: &str) -> String {
    let lowered: String = text.nfc().flat_map(char::to_lowercase).collect();
    lowered.nfc().collect()
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

/// Splits normalized text into words, returning (start, end) char offsets.
fn split_words(chars: &[char]) -> Vec<(usize, usize)> {
    let mut words = Vec::new();
    let mut start = None;
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() || c.is_control() {
            if let Some(s) = start.take() {
                words.push((s, i));
            }
        } else if is_punctuation(c) {
            if let Some(s) = start.take() {
                words.push((s, i));
            }
            words.push((i, i + 1));
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        words.push((s, chars.len()));
    }
    words
}

/// Greedy longest-prefix segmentation of one word. `None` when some suffix
/// of the word has no matching vocabulary piece.
fn segment_word(
    chars: &[char],
    vocab: &SubwordVocabulary,
    buf: &mut String,
) -> Option<Vec<(TokenId, usize, usize)>> {
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut found = None;
        let mut end = chars.len();
        while end > start {
            buf.clear();
            if start > 0 {
                buf.push_str(&vocab.continuation_prefix);
            }
            buf.extend(&chars[start..end]);
            if let Some(id) = vocab.id(buf) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        let id = found?;
        pieces.push((id, start, end));
        start = end;
    }
    Some(pieces)
}

/// Tokenizes `text`, keeping at most `max_len` tokens (the earliest ones).
pub fn tokenize(text: &str, vocab: &SubwordVocabulary, max_len: usize) -> TokenSequence {
    let normalized = normalize(text);
    let chars: Vec<char> = normalized.chars().collect();
    let mut ids = Vec::new();
    let mut offsets = Vec::new();
    let mut buf = String::new();

    'words: for (ws, we) in split_words(&chars) {
        let word = &chars[ws..we];
        let pieces = if word.len() > MAX_WORD_CHARS {
            None
        } else {
            segment_word(word, vocab, &mut buf)
        };
        match pieces {
            Some(pieces) => {
                for (id, s, e) in pieces {
                    if ids.len() >= max_len {
                        break 'words;
                    }
                    ids.push(id);
                    offsets.push((ws + s, ws + e));
                }
            }
            None => {
                if ids.len() >= max_len {
                    break;
                }
                ids.push(vocab.unk);
                offsets.push((ws, we));
            }
        }
        if ids.len() >= max_len {
            break;
        }
    }

    TokenSequence {
        ids,
        text: normalized,
        offsets,
        vocab: vocab.fingerprint,
    }
}

/// Tokenizes without a length cap. Used for knowledge-base surface forms.
pub fn tokenize_unbounded(text: &str, vocab: &SubwordVocabulary) -> TokenSequence {
    tokenize(text, vocab, usize::MAX)
}

/// Rejoins pieces into text: continuation pieces attach to the previous piece,
/// everything else is separated by a single space.
pub fn detokenize(ids: &[TokenId], vocab: &SubwordVocabulary) -> Result<String> {
    let mut out = String::new();
    for (i, &id) in ids.iter().enumerate() {
        let tok = vocab.token(id).ok_or(Error::IdOutOfRange {
            id,
            size: vocab.len(),
        })?;
        match tok.strip_prefix(vocab.continuation_prefix.as_str()) {
            Some(rest) if i > 0 && !rest.is_empty() => out.push_str(rest),
            _ => {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(words: &[&str]) -> SubwordVocabulary {
        let mut all = vec![PAD, UNK];
        all.extend_from_slice(words);
        SubwordVocabulary::from_tokens(all).unwrap()
    }

    #[test]
    fn load_four_line_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        fs::write(&path, "[PAD]\n[UNK]\nhello\n##s\n").unwrap();
        let v = SubwordVocabulary::load(&path).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("hello"), Some(2));
        assert_eq!(v.token(3), Some("##s"));
        assert_eq!(v.mask(), None);
    }

    #[test]
    fn empty_file_is_missing_specials() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        fs::write(&path, "").unwrap();
        let err = SubwordVocabulary::load(&path).unwrap_err();
        assert!(err.to_string().contains("missing required special tokens"));
    }

    #[test]
    fn duplicate_token_rejected() {
        let err = SubwordVocabulary::from_tokens(["[PAD]", "[UNK]", "hello", "hello"]).unwrap_err();
        assert!(matches!(err, Error::DuplicateToken { line: 4, .. }));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = SubwordVocabulary::load("/nonexistent/vocab.txt").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn greedy_longest_prefix() {
        let v = vocab(&["hello", "##s", "hell", "##o"]);
        let seq = tokenize("hellos", &v, 20);
        assert_eq!(seq.ids, vec![v.id("hello").unwrap(), v.id("##s").unwrap()]);
        assert_eq!(seq.offsets, vec![(0, 5), (5, 6)]);
    }

    #[test]
    fn empty_text() {
        let v = vocab(&["a"]);
        assert!(tokenize("", &v, 20).is_empty());
        assert!(tokenize("   \t ", &v, 20).is_empty());
    }

    #[test]
    fn unsegmentable_word_is_unknown() {
        let v = vocab(&["hello"]);
        let seq = tokenize("hello helloz", &v, 20);
        assert_eq!(seq.ids, vec![v.id("hello").unwrap(), v.unk()]);
        assert_eq!(seq.offsets[1], (6, 12));
    }

    #[test]
    fn long_word_is_unknown() {
        let v = vocab(&["a", "##a"]);
        let word = "a".repeat(MAX_WORD_CHARS + 1);
        assert_eq!(tokenize(&word, &v, 20).ids, vec![v.unk()]);
        let word = "a".repeat(MAX_WORD_CHARS);
        assert_eq!(tokenize(&word, &v, 200).len(), MAX_WORD_CHARS);
    }

    #[test]
    fn truncation_keeps_earliest() {
        let v = vocab(&["a", "b", "c"]);
        let seq = tokenize("a b c a b c", &v, 4);
        let ids: Vec<_> = ["a", "b", "c", "a"].iter().map(|t| v.id(t).unwrap()).collect();
        assert_eq!(seq.ids, ids);
    }

    #[test]
    fn lowercase_nfc_and_punctuation() {
        let v = vocab(&["café", "?", "hello"]);
        // decomposed e + combining acute
        let seq = tokenize("CAFE\u{301}? Hello", &v, 20);
        assert_eq!(
            seq.ids,
            vec![v.id("café").unwrap(), v.id("?").unwrap(), v.id("hello").unwrap()]
        );
        assert_eq!(seq.text, "café? hello");
    }

    #[test]
    fn detokenize_examples() {
        let v = vocab(&["hello", "##s"]);
        assert_eq!(detokenize(&[2, 3], &v).unwrap(), "hellos");
        assert_eq!(detokenize(&[v.unk()], &v).unwrap(), UNK);
        assert!(matches!(
            detokenize(&[9], &v),
            Err(Error::IdOutOfRange { id: 9, .. })
        ));
    }

    /// Reference segmentation: for each position try every vocabulary entry by
    /// linear scan and keep the longest one that matches.
    fn oracle_word(word: &str, words: &[String]) -> Option<Vec<String>> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            let rest: String = chars[pos..].iter().collect();
            let mut best: Option<&String> = None;
            for w in words {
                let body = if pos == 0 {
                    if w.starts_with("##") {
                        continue;
                    }
                    w.as_str()
                } else {
                    match w.strip_prefix("##") {
                        Some(b) => b,
                        None => continue,
                    }
                };
                if !body.is_empty()
                    && rest.starts_with(body)
                    && best.map_or(true, |b| body.chars().count() > b.trim_start_matches("##").chars().count())
                {
                    best = Some(w);
                }
            }
            let b = best?;
            pos += b.trim_start_matches("##").chars().count();
            out.push(b.clone());
        }
        Some(out)
    }

    fn piece_strategy() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(("[abc]{1,3}", any::<bool>()), 1..12).prop_map(|v| {
            let mut seen = std::collections::BTreeSet::new();
            v.into_iter()
                .map(|(s, cont)| if cont { format!("##{s}") } else { s })
                .filter(|s| seen.insert(s.clone()))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn matches_bruteforce_oracle(pieces in piece_strategy(), words in prop::collection::vec("[abc]{1,6}", 0..6)) {
            let mut all = vec![PAD.to_string(), UNK.to_string()];
            all.extend(pieces.iter().cloned());
            let v = SubwordVocabulary::from_tokens(all).unwrap();
            let text = words.join(" ");
            let seq = tokenize(&text, &v, usize::MAX);
            let mut expected = Vec::new();
            for w in &words {
                match oracle_word(w, &pieces) {
                    Some(ps) => expected.extend(ps.iter().map(|p| v.id(p).unwrap())),
                    None => expected.push(v.unk()),
                }
            }
            prop_assert_eq!(seq.ids, expected);
            for pair in seq.offsets.windows(2) {
                prop_assert!(pair[0].1 <= pair[1].0);
            }
        }

        #[test]
        fn roundtrip_on_covered_words(pieces in piece_strategy(), words in prop::collection::vec("[abc]{1,6}", 1..6)) {
            let mut all = vec![PAD.to_string(), UNK.to_string()];
            all.extend(pieces.iter().cloned());
            let v = SubwordVocabulary::from_tokens(all).unwrap();
            let covered: Vec<&String> = words.iter().filter(|w| oracle_word(w, &pieces).is_some()).collect();
            prop_assume!(!covered.is_empty());
            let text = covered.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" ");
            let seq = tokenize(&text, &v, usize::MAX);
            prop_assert_eq!(detokenize(&seq.ids, &v).unwrap(), text);
        }
    }
}
