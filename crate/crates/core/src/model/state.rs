use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::input::{build_stage1_input, DialogueTokens, Stage1Input};
use super::layers::{ClassifierHead, Dropout, ParamBuilder};
use super::net::Seq2Seq;
use crate::corpus::{EmotionLabelSet, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{argmax, ParamStore, Tape, Tensor, Var};

const CHECKPOINT_FORMAT: &str = "mplp-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Logits `[1, |Y|]` and the predicted class for `h [1, d]`.
pub fn classify(tape: &mut Tape, store: &ParamStore, head: &ClassifierHead, h: Var) -> Result<(Var, usize)> {
    let logits = head.logits(tape, store, h)?;
    let pred = argmax(tape.value(logits));
    Ok((logits, pred))
}

/// Network, parameters and the vocabulary they were trained against.
///
/// The store may hold more than the network's own parameters (prompt
/// machinery added at stage 2); all of them are saved together.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: ModelConfig,
    pub labels: EmotionLabelSet,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub net: Seq2Seq,
    /// Free-form provenance, e.g. `"stage1"`.
    pub tag: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    tag: String,
    config: ModelConfig,
    labels: EmotionLabelSet,
    vocab: Vocabulary,
    params: Vec<(String, Tensor)>,
}

impl ModelState {
    pub fn new(config: ModelConfig, labels: EmotionLabelSet, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Seq2Seq::build(
            &mut ParamBuilder::Create {
                store: &mut store,
                rng: &mut rng,
            },
            &config,
            vocab.len(),
            labels.len(),
        )?;
        Ok(Self {
            config,
            labels,
            vocab,
            store,
            net,
            tag: String::new(),
        })
    }

    pub fn stage1_input(&self, dialogue: &DialogueTokens, t: usize) -> Result<Stage1Input> {
        build_stage1_input(
            dialogue,
            t,
            self.config.context_window,
            &self.vocab,
            self.config.max_len,
        )
    }

    /// Mask-position vector `h_t` with dropout off.
    pub fn mask_vector(&self, dialogue: &DialogueTokens, t: usize) -> Result<Vec<f64>> {
        let input = self.stage1_input(dialogue, t)?;
        let mut tape = Tape::new();
        let (_, h) = self.net.forward_stage1(
            &mut tape,
            &self.store,
            &input,
            self.vocab.pad(),
            &mut Dropout::off(),
        )?;
        Ok(tape.value(h).to_vec())
    }

    /// FNV-1a digest of every parameter name and bit pattern.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (_, name, t) in self.store.iter() {
            eat(name.as_bytes());
            for x in t.data() {
                eat(&x.to_bits().to_le_bytes());
            }
        }
        format!("{h:016x}")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            tag: self.tag.clone(),
            config: self.config.clone(),
            labels: self.labels.clone(),
            vocab: self.vocab.clone(),
            params: self.store.to_named(),
        };
        fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_slice(&fs::read(path)?)?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "{}: not a version {CHECKPOINT_VERSION} checkpoint",
                path.display()
            )));
        }
        let mut vocab = file.vocab;
        vocab.rebuild_index()?;
        let mut store = ParamStore::new();
        for (name, t) in file.params {
            store.insert(name, t)?;
        }
        let net = Seq2Seq::build(
            &mut ParamBuilder::Bind { store: &store },
            &file.config,
            vocab.len(),
            file.labels.len(),
        )?;
        Ok(Self {
            config: file.config,
            labels: file.labels,
            vocab,
            store,
            net,
            tag: file.tag,
        })
    }
}
