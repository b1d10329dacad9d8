//! Conversations, tokenization, vocabulary, label glosses, ERC metrics and
//! the synthetic corpus generator.

mod data;
mod gloss;
pub mod metrics;
pub mod synth;
mod tokenizer;
pub mod vocab;

pub use data::{
    dialogue_to_line, load_corpus, parse_dialogue_line, save_corpus, utterance_id, Conversation,
    CorpusSplits, EmotionLabelSet, Split, Utterance,
};
pub use gloss::{GlossEntry, GlossTable};
pub use metrics::{micro_f1_excluding_neutral, weighted_f1, ConfusionMatrix};
pub use synth::{
    check_purity, generate_synthetic_corpus, GeneratorSpec, PurityReport, Signal, SignalRecord,
    SyntheticCorpus,
};
pub use tokenizer::tokenize;
pub use vocab::{TokenId, Vocabulary};
