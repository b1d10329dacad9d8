use std::collections::BTreeMap;

use crate::corpus::{vocab::label_token, Conversation, CorpusSplits, GlossTable, Split, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::model::DialogueTokens;

use super::config::ParaphraseTarget;

pub const SPLITS: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

/// One target utterance: dialogue index within its split and turn index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Example {
    pub split: Split,
    pub dialogue: usize,
    pub t: usize,
}

/// Corpus plus its vocabulary and token ids, encoded once.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub splits: CorpusSplits,
    pub vocab: Vocabulary,
    pub glosses: GlossTable,
    tokens: [Vec<DialogueTokens>; 3],
}

fn split_index(s: Split) -> usize {
    match s {
        Split::Train => 0,
        Split::Dev => 1,
        Split::Test => 2,
    }
}

impl Prepared {
    /// Builds the vocabulary from the training split only.
    pub fn new(splits: CorpusSplits, glosses: GlossTable) -> Result<Self> {
        let vocab = Vocabulary::build(&splits.train, &splits.labels, &glosses)?;
        Ok(Self::with_vocab(splits, glosses, vocab))
    }

    pub fn with_vocab(splits: CorpusSplits, glosses: GlossTable, vocab: Vocabulary) -> Self {
        let encode = |convs: &[Conversation]| -> Vec<DialogueTokens> {
            convs.iter().map(|c| DialogueTokens::encode(c, &vocab)).collect()
        };
        let tokens = [encode(&splits.train), encode(&splits.dev), encode(&splits.test)];
        Self {
            splits,
            vocab,
            glosses,
            tokens,
        }
    }

    pub fn dialogues(&self, split: Split) -> &[DialogueTokens] {
        &self.tokens[split_index(split)]
    }

    pub fn conversations(&self, split: Split) -> &[Conversation] {
        self.splits.split(split)
    }

    pub fn examples(&self, split: Split) -> Vec<Example> {
        self.conversations(split)
            .iter()
            .enumerate()
            .flat_map(|(dialogue, c)| (0..c.len()).map(move |t| Example { split, dialogue, t }))
            .collect()
    }

    pub fn gold(&self, ex: Example) -> usize {
        self.conversations(ex.split)[ex.dialogue].utterances[ex.t].label
    }

    pub fn utterance_id(&self, ex: Example) -> &str {
        &self.conversations(ex.split)[ex.dialogue].utterances[ex.t].utterance_id
    }

    pub fn tokens(&self, ex: Example) -> &DialogueTokens {
        &self.dialogues(ex.split)[ex.dialogue]
    }

    /// Gold labels of the training utterances, the only ones retrieval may return.
    pub fn train_labels(&self) -> BTreeMap<String, usize> {
        self.splits
            .train
            .iter()
            .flat_map(|c| c.utterances.iter().map(|u| (u.utterance_id.clone(), u.label)))
            .collect()
    }

    /// Token sequence generated for each label under `target`.
    pub fn paraphrase_targets(&self, target: ParaphraseTarget) -> Result<Vec<Vec<TokenId>>> {
        let labels = &self.splits.labels;
        let entries = self
            .glosses
            .for_labels(labels)
            .map_err(|e| Error::Config(format!("label paraphrasing needs a gloss per label: {e}")))?;
        let out: Vec<Vec<TokenId>> = entries
            .iter()
            .map(|e| match target {
                ParaphraseTarget::Gloss => e.gloss.iter().map(|w| self.vocab.id(w)).collect(),
                ParaphraseTarget::Adjective => vec![self.vocab.id(&e.adjective)],
                ParaphraseTarget::SpecialToken => vec![self.vocab.id(&label_token(&e.label))],
            })
            .collect();
        if let Some(i) = out.iter().position(|t| t.is_empty() || t.contains(&self.vocab.unk())) {
            return Err(Error::Config(format!(
                "paraphrase target for {} is empty or outside the vocabulary",
                labels.name(i)
            )));
        }
        Ok(out)
    }
}
