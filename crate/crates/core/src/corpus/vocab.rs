use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::data::{Conversation, EmotionLabelSet};
use super::gloss::GlossTable;
use super::tokenizer::tokenize;
use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const MASK: &str = "<mask>";
pub const SEP: &str = "<sep>";
/// Marker placed around the target utterance.
pub const STAR: &str = "<*>";
pub const UNK_SPEAKER: &str = "<spk:?>";

const SPECIALS: [&str; 8] = [PAD, UNK, BOS, EOS, MASK, SEP, STAR, UNK_SPEAKER];

/// Plain words the prompts need regardless of corpus content.
pub const PROMPT_WORDS: [&str; 3] = ["feels", "may", "feel"];

pub type TokenId = usize;

/// Dense token ↔ id map. Ids `0..8` are the special tokens in a fixed order,
/// followed by speaker tokens, label tokens and sorted words.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

pub fn speaker_token(name: &str) -> String {
    format!("<spk:{}>", name.trim().to_lowercase())
}

pub fn label_token(label: &str) -> String {
    format!("<lbl:{label}>")
}

impl Vocabulary {
    /// Builds from training conversations plus the gloss table; the result
    /// does not depend on dialogue order.
    pub fn build(train: &[Conversation], labels: &EmotionLabelSet, glosses: &GlossTable) -> Result<Self> {
        let mut speakers = BTreeSet::new();
        let mut words = BTreeSet::new();
        for c in train {
            for u in &c.utterances {
                speakers.insert(speaker_token(&u.speaker));
                words.extend(tokenize(&u.text));
            }
        }
        for e in glosses.for_labels(labels)? {
            words.insert(e.adjective.clone());
            words.extend(e.gloss.iter().cloned());
        }
        words.extend(PROMPT_WORDS.iter().map(|w| w.to_string()));
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(speakers);
        tokens.extend(labels.labels().iter().map(|l| label_token(l)));
        tokens.extend(words);
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Format("vocabulary must start with the special tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate token {t}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub(crate) fn rebuild_index(&mut self) -> Result<()> {
        *self = Self::from_tokens(std::mem::take(&mut self.tokens))?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.get(token).unwrap_or(self.unk())
    }

    pub fn encode_text(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn speaker(&self, name: &str) -> TokenId {
        self.get(&speaker_token(name)).unwrap_or(self.special(UNK_SPEAKER))
    }

    fn special(&self, s: &str) -> TokenId {
        SPECIALS.iter().position(|x| *x == s).expect("known special")
    }

    pub fn pad(&self) -> TokenId {
        0
    }
    pub fn unk(&self) -> TokenId {
        1
    }
    pub fn bos(&self) -> TokenId {
        2
    }
    pub fn eos(&self) -> TokenId {
        3
    }
    pub fn mask(&self) -> TokenId {
        4
    }
    pub fn sep(&self) -> TokenId {
        5
    }
    pub fn star(&self) -> TokenId {
        6
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id < SPECIALS.len()
    }
}
