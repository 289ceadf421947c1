//! Training inputs: a tokenized pretraining corpus, a labeled task set, and a
//! cache of matcher output keyed by fingerprints.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::kb::KnowledgeIndex;
use crate::matcher::{match_corpus, MatchSpan};
use crate::model::HeadKind;
use crate::tensor::Matrix;
use crate::tokenizer::{tokenize, SubwordVocabulary, TokenId, TokenSequence};

/// Vocabulary facts the masked-token objective needs.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskingVocab {
    pub pad: TokenId,
    /// Replacement id for masked positions; `[UNK]` when there is no `[MASK]`.
    pub mask: TokenId,
    /// Non-special ids, used for random replacement.
    pub regular: Vec<TokenId>,
    pub special: Vec<bool>,
}

impl MaskingVocab {
    pub fn new(vocab: &SubwordVocabulary) -> Self {
        let special: Vec<bool> = (0..vocab.len() as TokenId).map(|id| vocab.is_special(id)).collect();
        MaskingVocab {
            pad: vocab.pad(),
            mask: vocab.mask().unwrap_or(vocab.unk()),
            regular: (0..vocab.len() as TokenId).filter(|&id| !special[id as usize]).collect(),
            special,
        }
    }
}

fn sequences_fingerprint(tag: &str, vocab: Fingerprint, max_len: usize, seqs: &[TokenSequence]) -> Fingerprint {
    let mut b = Fingerprint::builder().str(tag).fingerprint(&vocab).u64(max_len as u64).u64(seqs.len() as u64);
    for s in seqs {
        b = b.u64(s.ids.len() as u64);
        for &id in &s.ids {
            b = b.u64(id as u64);
        }
    }
    b.finish()
}

/// Tokenized pretraining sentences.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub sentences: Vec<TokenSequence>,
    pub masking: MaskingVocab,
    fingerprint: Fingerprint,
}

impl Corpus {
    /// One sentence per non-blank line.
    pub fn from_lines<I, S>(lines: I, vocab: &SubwordVocabulary, max_len: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let sentences: Vec<TokenSequence> = lines
            .into_iter()
            .filter(|l| !l.as_ref().trim().is_empty())
            .map(|l| tokenize(l.as_ref(), vocab, max_len))
            .filter(|s| !s.is_empty())
            .collect();
        let fingerprint = sequences_fingerprint("corpus", vocab.fingerprint(), max_len, &sentences);
        Corpus {
            sentences,
            masking: MaskingVocab::new(vocab),
            fingerprint,
        }
    }

    pub fn load(path: impl AsRef<Path>, vocab: &SubwordVocabulary, max_len: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_lines(text.lines(), vocab, max_len))
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn vocab_fingerprint(&self) -> Option<Fingerprint> {
        self.sentences.first().map(|s| s.vocab)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// One line of a task file (JSON Lines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExample {
    pub text: String,
    pub answer: String,
    #[serde(default)]
    pub split: Split,
    /// Optional tag for per-group accuracy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Optional visual feature rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual: Option<Vec<Vec<f64>>>,
}

/// A tokenized, labeled task set.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub examples: Vec<TaskExample>,
    pub tokens: Vec<TokenSequence>,
    pub labels: Vec<usize>,
    pub visual: Vec<Option<Matrix>>,
    /// Answer strings in label order.
    pub answers: Vec<String>,
    pub head: HeadKind,
    fingerprint: Fingerprint,
}

impl TaskData {
    pub fn new(examples: Vec<TaskExample>, vocab: &SubwordVocabulary, max_len: usize, head: HeadKind) -> Result<Self> {
        let answers: Vec<String> = match head {
            HeadKind::Classification => examples
                .iter()
                .map(|e| e.answer.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            HeadKind::Binary => vec!["0".into(), "1".into()],
            HeadKind::MaskedToken => {
                return Err(Error::InvalidConfig("task head must be classification or binary".into()))
            }
        };
        let labels = examples
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let a = match (head, e.answer.as_str()) {
                    (HeadKind::Binary, "true") => "1",
                    (HeadKind::Binary, "false") => "0",
                    (_, a) => a,
                };
                answers
                    .iter()
                    .position(|x| x == a)
                    .ok_or_else(|| Error::InvalidInput(format!("example {i}: answer {:?} is not a binary label", e.answer)))
            })
            .collect::<Result<Vec<_>>>()?;
        let visual = examples
            .iter()
            .enumerate()
            .map(|(i, e)| {
                e.visual
                    .as_ref()
                    .map(|rows| {
                        let width = rows.first().map_or(0, Vec::len);
                        if rows.iter().any(|r| r.len() != width) {
                            return Err(Error::InvalidInput(format!("example {i}: ragged visual features")));
                        }
                        Ok(Matrix::from_rows(rows))
                    })
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        let tokens: Vec<TokenSequence> = examples.iter().map(|e| tokenize(&e.text, vocab, max_len)).collect();

        let mut b = Fingerprint::builder()
            .fingerprint(&sequences_fingerprint("task", vocab.fingerprint(), max_len, &tokens))
            .str(&format!("{head:?}"));
        for (e, l) in examples.iter().zip(&labels) {
            b = b.u64(*l as u64).str(&format!("{:?}/{:?}", e.split, e.group));
            if let Some(v) = &e.visual {
                b = b.bytes(&serde_json::to_vec(v)?);
            }
        }
        Ok(TaskData {
            examples,
            tokens,
            labels,
            visual,
            answers,
            head,
            fingerprint: b.finish(),
        })
    }

    pub fn load(path: impl AsRef<Path>, vocab: &SubwordVocabulary, max_len: usize, head: HeadKind) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut examples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            examples.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?);
        }
        Self::new(examples, vocab, max_len, head)
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.examples[i].split == split).collect()
    }
}

type CacheKey = (Fingerprint, Fingerprint, Fingerprint);

/// Matcher output memoized by (sequences, index, vocabulary) fingerprints.
#[derive(Debug, Default)]
pub struct MatchCache {
    entries: Mutex<HashMap<CacheKey, Arc<Vec<Vec<MatchSpan>>>>>,
}

impl MatchCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_match(
        &self,
        sequences_fp: Fingerprint,
        sequences: &[TokenSequence],
        index: &KnowledgeIndex,
    ) -> Result<Arc<Vec<Vec<MatchSpan>>>> {
        let key = (sequences_fp, index.fingerprint(), index.vocab_fingerprint());
        if let Some(hit) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let spans = Arc::new(match_corpus(sequences, index)?);
        self.entries.lock().expect("cache lock").insert(key, Arc::clone(&spans));
        Ok(spans)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
