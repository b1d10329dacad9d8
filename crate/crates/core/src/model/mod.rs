//! Small encoder-decoder transformer with soft-embedding injection, a
//! classification head and a tied language-model head.

mod config;
mod input;
mod layers;
mod net;
mod state;

pub use config::ModelConfig;
pub use config::MODEL_KEYS;
pub use input::{
    build_stage1_input, context_tokens, decoder_prompt, paraphrase_sequence, soft_prompt_prefix,
    DialogueTokens, EncodedInput, Slot, Stage1Input, MASK_POSITION,
};
pub use layers::{Attention, ClassifierHead, Dropout, FeedForward, Init, LayerNorm, Linear, ParamBuilder};
pub use net::{Encoded, Seq2Seq};
pub use state::{classify, ModelState};

#[cfg(test)]
mod tests;
