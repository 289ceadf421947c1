//! Greedy longest-match extraction of knowledge-rich expressions.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kb::{KnowledgeEntry, KnowledgeIndex};
use crate::tokenizer::{TokenId, TokenSequence};

/// Half-open token interval `[start, end)` matched to an index entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct MatchSpan {
    pub start: usize,
    pub end: usize,
    pub entry: u32,
}

impl MatchSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn entry<'a>(&self, index: &'a KnowledgeIndex) -> &'a KnowledgeEntry {
        index.entry(self.entry)
    }
}

/// Scans left to right, taking the longest match at each position and resuming
/// after it. Fails if `tokens` came from a different vocabulary than the index.
pub fn find_knowledge_expressions(tokens: &TokenSequence, index: &KnowledgeIndex) -> Result<Vec<MatchSpan>> {
    if tokens.vocab != index.vocab_fingerprint() {
        return Err(Error::FingerprintMismatch(format!(
            "tokens produced by vocabulary {} but index built with {}",
            tokens.vocab.short(),
            index.vocab_fingerprint().short()
        )));
    }
    Ok(match_ids(&tokens.ids, index))
}

/// Same scan over raw ids, without the vocabulary check.
pub fn match_ids(ids: &[TokenId], index: &KnowledgeIndex) -> Vec<MatchSpan> {
    let mut spans = Vec::new();
    if index.is_empty() {
        return spans;
    }
    let mut pos = 0;
    while pos < ids.len() {
        match index.longest_match_unchecked(ids, pos) {
            Some((len, entry)) => {
                spans.push(MatchSpan {
                    start: pos,
                    end: pos + len,
                    entry,
                });
                pos += len;
            }
            None => pos += 1,
        }
    }
    spans
}

/// Matches many sentences in parallel; output order follows input order.
pub fn match_corpus(sentences: &[TokenSequence], index: &KnowledgeIndex) -> Result<Vec<Vec<MatchSpan>>> {
    sentences
        .par_iter()
        .map(|s| find_knowledge_expressions(s, index))
        .collect()
}
