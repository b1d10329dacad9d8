use crate::corpus::{Conversation, TokenId, Vocabulary};
use crate::error::{contract, Result};
use crate::numerics::Var;

/// Position of `[mask]` in the decoder prompt `[s_t, feels, [mask]]`.
pub const MASK_POSITION: usize = 2;

/// One encoder position: a vocabulary row or a vector injected in its place.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Slot {
    Token(TokenId),
    Injected(Var),
}

/// Encoder input mixing token embeddings with soft vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncodedInput {
    pub slots: Vec<Slot>,
    /// `false` marks padding that no position may attend to.
    pub attention: Vec<bool>,
}

impl EncodedInput {
    pub fn from_tokens(tokens: &[TokenId], pad: TokenId) -> Self {
        let mut e = Self::default();
        e.push_tokens(tokens, pad);
        e
    }

    pub fn push_tokens(&mut self, tokens: &[TokenId], pad: TokenId) {
        for &t in tokens {
            self.slots.push(Slot::Token(t));
            self.attention.push(t != pad);
        }
    }

    pub fn push_injected(&mut self, v: Var) {
        self.slots.push(Slot::Injected(v));
        self.attention.push(true);
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Token ids of one conversation, encoded once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialogueTokens {
    pub speakers: Vec<TokenId>,
    pub texts: Vec<Vec<TokenId>>,
}

impl DialogueTokens {
    pub fn encode(conv: &Conversation, vocab: &Vocabulary) -> Self {
        Self {
            speakers: conv
                .utterances
                .iter()
                .map(|u| vocab.speaker(&u.speaker))
                .collect(),
            texts: conv
                .utterances
                .iter()
                .map(|u| vocab.encode_text(&u.text))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }
}

/// `[s_{t-m}, u_{t-m}, ..., *, s_t, u_t, *]` within `budget` tokens.
///
/// Whole history tokens are dropped from the left first; if the starred
/// target alone exceeds the budget its text is cut from the right so both
/// markers survive.
pub fn context_tokens(
    dialogue: &DialogueTokens,
    t: usize,
    window: usize,
    vocab: &Vocabulary,
    budget: usize,
) -> Result<Vec<TokenId>> {
    contract!(t < dialogue.len(), "target {t} outside dialogue of {}", dialogue.len());
    contract!(budget >= 4, "context budget {budget} cannot hold the starred target");
    let mut target = vec![vocab.star(), dialogue.speakers[t]];
    let keep = dialogue.texts[t].len().min(budget - 3);
    target.extend_from_slice(&dialogue.texts[t][..keep]);
    target.push(vocab.star());

    let mut history = Vec::new();
    for i in t.saturating_sub(window)..t {
        history.push(dialogue.speakers[i]);
        history.extend_from_slice(&dialogue.texts[i]);
    }
    let room = budget - target.len();
    let drop = history.len().saturating_sub(room);
    let mut out = history.split_off(drop);
    out.extend(target);
    Ok(out)
}

/// `[s_t, feels, [mask]]`
pub fn decoder_prompt(dialogue: &DialogueTokens, t: usize, vocab: &Vocabulary) -> Vec<TokenId> {
    vec![dialogue.speakers[t], vocab.id("feels"), vocab.mask()]
}

/// `[s_t, may, feel]`, the text part of both soft prompts.
pub fn soft_prompt_prefix(dialogue: &DialogueTokens, t: usize, vocab: &Vocabulary) -> Vec<TokenId> {
    vec![dialogue.speakers[t], vocab.id("may"), vocab.id("feel")]
}

/// `[s_t, feels] ++ target ++ [</s>]`
pub fn paraphrase_sequence(
    dialogue: &DialogueTokens,
    t: usize,
    target: &[TokenId],
    vocab: &Vocabulary,
) -> Vec<TokenId> {
    let mut seq = vec![dialogue.speakers[t], vocab.id("feels")];
    seq.extend_from_slice(target);
    seq.push(vocab.eos());
    seq
}

/// Encoder context `C_t` and decoder prompt `P_t` of the first stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stage1Input {
    pub context: Vec<TokenId>,
    pub prompt: Vec<TokenId>,
}

pub fn build_stage1_input(
    dialogue: &DialogueTokens,
    t: usize,
    window: usize,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Stage1Input> {
    Ok(Stage1Input {
        context: context_tokens(dialogue, t, window, vocab, max_len)?,
        prompt: decoder_prompt(dialogue, t, vocab),
    })
}
