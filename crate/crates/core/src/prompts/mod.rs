//! History- and experience-oriented soft prompts built from frozen
//! first-stage representations.
//!
//! Each prompt is the text `[s_t, may, feel]` followed by one injected
//! vector. Cached vectors enter the tape as constants, so training never
//! writes back into the [`RepresentationCache`].

mod cache;
mod experience;
mod history;

pub use cache::RepresentationCache;
pub use experience::{build_experience_vector, experience_attention, ExperiencePromptParams};
pub use history::{
    bilstm_states, build_history_vector, contextualize, history_attention, relation_aware_transform,
    HistoryPromptParams, LstmCell,
};

use crate::corpus::TokenId;
use crate::error::Result;
use crate::model::{EncodedInput, ParamBuilder};
use crate::numerics::{ParamId, Var};

/// Both prompt parameter groups; created together at the start of stage 2.
#[derive(Clone, Copy, Debug)]
pub struct PromptParams {
    pub hist: HistoryPromptParams,
    pub exp: ExperiencePromptParams,
}

impl PromptParams {
    pub fn build(pb: &mut ParamBuilder, d: usize) -> Result<Self> {
        Ok(Self {
            hist: HistoryPromptParams::build(pb, d)?,
            exp: ExperiencePromptParams::build(pb, d)?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.hist.param_ids();
        ids.push(self.exp.score);
        ids
    }
}

/// Appends `prefix` tokens and then `vector` in the mask slot.
pub fn push_soft_prompt(input: &mut EncodedInput, prefix: &[TokenId], vector: Var, pad: TokenId) {
    input.push_tokens(prefix, pad);
    input.push_injected(vector);
}

#[cfg(test)]
mod tests;
