use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenizer::tokenize;
use crate::error::{Error, Result};

/// Ordered set of emotion label names, optionally with a neutral class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionLabelSet {
    labels: Vec<String>,
    neutral_index: Option<usize>,
}

impl EmotionLabelSet {
    pub fn new(labels: Vec<String>, neutral_index: Option<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Validation("label set is empty".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::Validation(format!("duplicate label {l}")));
            }
        }
        if let Some(n) = neutral_index {
            if n >= labels.len() {
                return Err(Error::Validation(format!(
                    "neutral index {n} outside {} labels",
                    labels.len()
                )));
            }
        }
        Ok(Self {
            labels,
            neutral_index,
        })
    }

    fn from_names(names: &[&str]) -> Self {
        let labels: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let neutral_index = labels.iter().position(|l| l == "neutral");
        Self {
            labels,
            neutral_index,
        }
    }

    /// MELD and DailyDialog share these seven classes.
    pub fn meld() -> Self {
        Self::from_names(&[
            "neutral",
            "happiness",
            "surprise",
            "sadness",
            "anger",
            "disgust",
            "fear",
        ])
    }

    pub fn iemocap() -> Self {
        Self::from_names(&[
            "neutral",
            "happiness",
            "sadness",
            "anger",
            "frustrated",
            "excited",
        ])
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "meld" | "dailydialog" => Ok(Self::meld()),
            "iemocap" => Ok(Self::iemocap()),
            other => Err(Error::Config(format!("unknown label set {other}"))),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn neutral_index(&self) -> Option<usize> {
        self.neutral_index
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.labels[idx]
    }
}

/// One speaker turn.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub utterance_id: String,
    pub speaker: String,
    pub text: String,
    /// Index into the corpus label set.
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conversation {
    pub dialogue_id: String,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

pub fn utterance_id(dialogue_id: &str, index: usize) -> String {
    format!("{dialogue_id}:{index}")
}

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    speaker: String,
    text: String,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct DialogueRecord {
    dialogue_id: String,
    utterances: Vec<UtteranceRecord>,
}

/// Parses one JSONL line into a validated conversation.
pub fn parse_dialogue_line(line: &str, lineno: usize, labels: &EmotionLabelSet) -> Result<Conversation> {
    let rec: DialogueRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: lineno,
        msg: e.to_string(),
    })?;
    if rec.utterances.is_empty() {
        return Err(Error::Validation(format!(
            "line {lineno}: dialogue {} has no utterances",
            rec.dialogue_id
        )));
    }
    let mut utterances = Vec::with_capacity(rec.utterances.len());
    for (i, u) in rec.utterances.into_iter().enumerate() {
        let label = labels.index_of(&u.label).ok_or_else(|| {
            Error::Validation(format!(
                "line {lineno}: label {:?} is not in the label set",
                u.label
            ))
        })?;
        if tokenize(&u.text).is_empty() {
            return Err(Error::Validation(format!(
                "line {lineno}: utterance {i} has no tokens"
            )));
        }
        utterances.push(Utterance {
            utterance_id: utterance_id(&rec.dialogue_id, i),
            speaker: u.speaker,
            text: u.text,
            label,
        });
    }
    Ok(Conversation {
        dialogue_id: rec.dialogue_id,
        utterances,
    })
}

/// Reads one dialogue per line. Blank lines are skipped.
pub fn load_corpus(path: &Path, labels: &EmotionLabelSet) -> Result<Vec<Conversation>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_dialogue_line(&line, i + 1, labels)?);
    }
    let mut ids: Vec<&str> = out.iter().map(|c| c.dialogue_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Validation(format!("duplicate dialogue id {}", w[0])));
    }
    Ok(out)
}

/// Canonical single-line JSON form of a conversation.
pub fn dialogue_to_line(conv: &Conversation, labels: &EmotionLabelSet) -> String {
    let rec = DialogueRecord {
        dialogue_id: conv.dialogue_id.clone(),
        utterances: conv
            .utterances
            .iter()
            .map(|u| UtteranceRecord {
                speaker: u.speaker.clone(),
                text: u.text.clone(),
                label: labels.name(u.label).to_string(),
            })
            .collect(),
    };
    serde_json::to_string(&rec).expect("dialogue records always serialize")
}

pub fn save_corpus(path: &Path, convs: &[Conversation], labels: &EmotionLabelSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in convs {
        writeln!(w, "{}", dialogue_to_line(c, labels))?;
    }
    w.flush()?;
    Ok(())
}

/// Train/dev/test conversations sharing one label set.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSplits {
    pub labels: EmotionLabelSet,
    pub train: Vec<Conversation>,
    pub dev: Vec<Conversation>,
    pub test: Vec<Conversation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "valid" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other}"))),
        }
    }
}

impl CorpusSplits {
    pub fn split(&self, s: Split) -> &[Conversation] {
        match s {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &Conversation> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    pub fn num_utterances(&self) -> usize {
        self.all().map(Conversation::len).sum()
    }

    /// Loads `train.jsonl`, `dev.jsonl` and `test.jsonl` from a directory.
    pub fn load_dir(dir: &Path, labels: EmotionLabelSet) -> Result<Self> {
        let train = load_corpus(&dir.join("train.jsonl"), &labels)?;
        let dev = load_corpus(&dir.join("dev.jsonl"), &labels)?;
        let test = load_corpus(&dir.join("test.jsonl"), &labels)?;
        Ok(Self {
            labels,
            train,
            dev,
            test,
        })
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_corpus(&dir.join("train.jsonl"), &self.train, &self.labels)?;
        save_corpus(&dir.join("dev.jsonl"), &self.dev, &self.labels)?;
        save_corpus(&dir.join("test.jsonl"), &self.test, &self.labels)?;
        Ok(())
    }
}
