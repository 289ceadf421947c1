//! Seeded generator for the toy knowledge-injection dataset.
//!
//! Entities are pseudo-words with one color each. Some entities are two-word
//! names ending in a shared keyword (`fruit` by default) so they can be removed
//! from the knowledge base as a group. The pretraining corpus mentions every
//! entity in neutral contexts only; the question-answering task asks for an
//! entity's color, and test-split entities never occur in task training text.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::KnowledgeGraph;
use crate::trainer::{Split, TaskExample};
use crate::tokenizer::{CLS, MASK, PAD, SEP, UNK};

pub const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "purple", "orange", "white", "black"];
pub const RELATION: &str = "has_color";
pub const AFFECTED: &str = "affected";
pub const UNAFFECTED: &str = "unaffected";

const CORPUS_TEMPLATES: [&str; 8] = [
    "i saw the {} yesterday",
    "there is a {} near the house",
    "we talked about the {} today",
    "my friend found a {} in the garden",
    "the {} was on the table",
    "she bought the {} at the market",
    "a {} is in the box",
    "he wrote about the {} again",
];

const QUESTION_TEMPLATES: [&str; 5] = [
    "what color is the {} ?",
    "the {} has which color ?",
    "tell me the color of the {} .",
    "which color does the {} have ?",
    "name the color of the {} .",
];

const FILLER: [&str; 24] = [
    "i", "saw", "the", "a", "we", "talked", "about", "today", "my", "friend", "found", "in", "garden", "was", "on", "table",
    "she", "bought", "at", "market", "is", "box", "he", "wrote",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub entities: usize,
    /// Entities whose name carries the ablation keyword.
    pub affected: usize,
    /// Entities whose questions go into the task training split.
    pub train_entities: usize,
    pub corpus_per_entity: usize,
    pub questions_per_entity: usize,
    pub keyword: String,
    pub wc_targets: usize,
    pub probe_sentences: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            entities: 200,
            affected: 60,
            train_entities: 80,
            corpus_per_entity: 4,
            questions_per_entity: 5,
            keyword: "fruit".into(),
            wc_targets: 8,
            probe_sentences: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEntity {
    /// Surface form, words separated by spaces.
    pub name: String,
    pub color: String,
    pub affected: bool,
    pub split: Split,
}

/// Labeled sentence for the probing tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeExample {
    pub text: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub entities: Vec<SynthEntity>,
    pub vocab: Vec<String>,
    pub graph: KnowledgeGraph,
    pub corpus: Vec<String>,
    pub task: Vec<TaskExample>,
    /// Same-color single-word entity pairs.
    pub synonym_pairs: Vec<(String, String)>,
    /// Word-content probe: which target entity occurs in the sentence.
    pub probe_wc: Vec<ProbeExample>,
    pub wc_targets: Vec<String>,
    /// Sentence-length probe: length bucket of the sentence.
    pub probe_length: Vec<ProbeExample>,
}

fn pseudo_words(rng: &mut ChaCha8Rng, n: usize, reserved: &BTreeSet<&str>) -> Vec<String> {
    const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    const CODAS: [&str; 4] = ["", "n", "k", "x"];
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut w = String::new();
        for _ in 0..2 {
            w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
        }
        w.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
        if !reserved.contains(w.as_str()) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    if config.entities == 0 || config.affected > config.entities || config.train_entities >= config.entities {
        return Err(Error::InvalidConfig(
            "need 0 < entities, affected <= entities and train_entities < entities".into(),
        ));
    }
    if config.keyword.is_empty() || config.keyword.contains(char::is_whitespace) {
        return Err(Error::InvalidConfig("keyword must be a single word".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut fixed: BTreeSet<&str> = FILLER.iter().copied().collect();
    for t in CORPUS_TEMPLATES.iter().chain(&QUESTION_TEMPLATES) {
        fixed.extend(t.split(' ').filter(|w| *w != "{}"));
    }
    fixed.extend(COLORS);
    fixed.insert(config.keyword.as_str());

    let words = pseudo_words(&mut rng, config.entities, &fixed);
    let mut order: Vec<usize> = (0..config.entities).collect();
    order.shuffle(&mut rng);
    let mut affected = vec![false; config.entities];
    for &i in &order[..config.affected] {
        affected[i] = true;
    }
    order.shuffle(&mut rng);
    let mut split = vec![Split::Test; config.entities];
    for &i in &order[..config.train_entities] {
        split[i] = Split::Train;
    }
    order.shuffle(&mut rng);
    let mut color = vec![0; config.entities];
    for (k, &i) in order.iter().enumerate() {
        color[i] = k % COLORS.len();
    }
    let entities: Vec<SynthEntity> = (0..config.entities)
        .map(|i| SynthEntity {
            name: if affected[i] { format!("{} {}", words[i], config.keyword) } else { words[i].clone() },
            color: COLORS[color[i]].to_string(),
            affected: affected[i],
            split: split[i],
        })
        .collect();

    let graph = KnowledgeGraph::new(
        entities
            .iter()
            .map(|e| (e.name.replace(' ', "_"), RELATION.to_string(), e.color.clone())),
    );

    let mut corpus = Vec::with_capacity(config.entities * config.corpus_per_entity);
    for e in &entities {
        let mut templates: Vec<&str> = CORPUS_TEMPLATES.to_vec();
        templates.shuffle(&mut rng);
        for k in 0..config.corpus_per_entity {
            corpus.push(templates[k % templates.len()].replace("{}", &e.name));
        }
    }
    corpus.shuffle(&mut rng);

    let mut task = Vec::with_capacity(config.entities * config.questions_per_entity);
    for e in &entities {
        for k in 0..config.questions_per_entity {
            task.push(TaskExample {
                text: QUESTION_TEMPLATES[k % QUESTION_TEMPLATES.len()].replace("{}", &e.name),
                answer: e.color.clone(),
                split: e.split,
                group: Some(if e.affected { AFFECTED } else { UNAFFECTED }.to_string()),
                visual: None,
            });
        }
    }

    let mut synonym_pairs = Vec::new();
    for c in COLORS {
        let group: Vec<&SynthEntity> = entities.iter().filter(|e| !e.affected && e.color == c).collect();
        for pair in group.chunks_exact(2) {
            synonym_pairs.push((pair[0].name.clone(), pair[1].name.clone()));
        }
    }

    let singles: Vec<&SynthEntity> = entities.iter().filter(|e| !e.affected).collect();
    let wc_targets: Vec<String> = singles.iter().take(config.wc_targets.max(2)).map(|e| e.name.clone()).collect();
    let filler = |rng: &mut ChaCha8Rng, n: usize| -> Vec<&str> { (0..n).map(|_| FILLER[rng.gen_range(0..FILLER.len())]).collect() };
    let probe_wc = (0..config.probe_sentences)
        .map(|k| {
            let label = k % wc_targets.len();
            let n = rng.gen_range(3..8);
            let mut words = filler(&mut rng, n);
            let at = rng.gen_range(0..=words.len());
            words.insert(at, &wc_targets[label]);
            ProbeExample { text: words.join(" "), label }
        })
        .collect();
    let probe_length = (0..config.probe_sentences)
        .map(|k| {
            let label = k % 4;
            let n = 3 + 3 * label + rng.gen_range(0..3);
            ProbeExample { text: filler(&mut rng, n).join(" "), label }
        })
        .collect();

    let mut vocab: Vec<String> = [PAD, UNK, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect();
    let mut regular: BTreeSet<String> = fixed.iter().map(|s| s.to_string()).collect();
    regular.extend(["?", "."].map(String::from));
    regular.extend(words.iter().cloned());
    vocab.extend(regular);

    Ok(SynthDataset {
        config: config.clone(),
        entities,
        vocab,
        graph,
        corpus,
        task,
        synonym_pairs,
        probe_wc,
        wc_targets,
        probe_length,
    })
}

fn write_lines<S: AsRef<str>>(path: &Path, lines: impl IntoIterator<Item = S>) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(l.as_ref());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let lines = items.iter().map(serde_json::to_string).collect::<std::result::Result<Vec<_>, _>>()?;
    write_lines(path, lines)
}

/// File names used by [`SynthDataset::write`].
pub mod files {
    pub const VOCAB: &str = "vocab.txt";
    pub const TRIPLES: &str = "triples.tsv";
    pub const CORPUS: &str = "corpus.txt";
    pub const TASK: &str = "task.jsonl";
    pub const KEYWORDS: &str = "keywords.txt";
    pub const PAIRS: &str = "pairs.tsv";
    pub const PROBE_WC: &str = "probe_wc.jsonl";
    pub const PROBE_LENGTH: &str = "probe_length.jsonl";
    pub const ENTITIES: &str = "entities.jsonl";
    pub const STOPWORDS: &str = "stopwords.txt";
}

/// Stopword list shipped with the dataset for knowledge-base filtering.
pub const STOPWORDS: [&str; 12] = ["a", "about", "at", "he", "i", "in", "is", "my", "on", "she", "the", "we"];

impl SynthDataset {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_lines(&dir.join(files::VOCAB), &self.vocab)?;
        self.graph.save(dir.join(files::TRIPLES))?;
        write_lines(&dir.join(files::CORPUS), &self.corpus)?;
        write_jsonl(&dir.join(files::TASK), &self.task)?;
        write_lines(&dir.join(files::KEYWORDS), [&self.config.keyword])?;
        write_lines(&dir.join(files::PAIRS), self.synonym_pairs.iter().map(|(a, b)| format!("{a}\t{b}")))?;
        write_jsonl(&dir.join(files::PROBE_WC), &self.probe_wc)?;
        write_jsonl(&dir.join(files::PROBE_LENGTH), &self.probe_length)?;
        write_jsonl(&dir.join(files::ENTITIES), &self.entities)?;
        write_lines(&dir.join(files::STOPWORDS), STOPWORDS)?;
        Ok(())
    }
}
