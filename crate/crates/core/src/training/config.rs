use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::KvConfig;
use crate::retrieval::{RetrieverKind, DEFAULT_B, DEFAULT_K1};

/// How the history and experience vectors reach the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Injected as soft prompts into the encoder input.
    Prompt,
    /// Added to the decoder's mask vector.
    Add,
    /// Concatenated to the mask vector before a wider classifier head.
    Concat,
}

/// What the paraphrasing pass generates for a label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParaphraseTarget {
    Gloss,
    Adjective,
    SpecialToken,
}

macro_rules! string_enum {
    ($t:ty, $what:literal, $($v:ident => $s:literal),+) => {
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$v),)+
                    _ => Err(Error::Config(format!(concat!("unknown ", $what, " {:?}"), s))),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$v => $s,)+ })
            }
        }
    };
}

string_enum!(FusionMode, "fusion mode", Prompt => "prompt", Add => "add", Concat => "concat");
string_enum!(ParaphraseTarget, "paraphrase target", Gloss => "gloss", Adjective => "adjective", SpecialToken => "special_token");

/// Optimisation, ablation and retrieval settings for both stages.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Falls back to `learning_rate` when unset.
    pub stage2_learning_rate: Option<f64>,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub max_grad_norm: f64,
    pub alpha: f64,
    pub k: usize,
    pub retriever: RetrieverKind,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub use_hist_prompt: bool,
    pub use_exp_prompt: bool,
    pub use_label_para: bool,
    /// Put `[sep]` between the prompts and the dialogue context.
    pub use_sep_prefix: bool,
    pub fusion_mode: FusionMode,
    pub paraphrase_target: ParaphraseTarget,
    /// Extra stage-2 epochs given to the wider head of `fusion_mode = concat`.
    pub concat_extra_epochs: usize,
    /// Recompute cached vectors and neighbours from the current weights each stage-2 epoch.
    pub refresh_cache_every_epoch: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_epochs: 3,
            stage2_epochs: 1,
            batch_size: 8,
            learning_rate: 2e-5,
            stage2_learning_rate: None,
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            max_grad_norm: 1.0,
            alpha: 0.5,
            k: 3,
            retriever: RetrieverKind::Bm25,
            bm25_k1: DEFAULT_K1,
            bm25_b: DEFAULT_B,
            use_hist_prompt: true,
            use_exp_prompt: true,
            use_label_para: true,
            use_sep_prefix: true,
            fusion_mode: FusionMode::Prompt,
            paraphrase_target: ParaphraseTarget::Gloss,
            concat_extra_epochs: 1,
            refresh_cache_every_epoch: false,
            seed: 0,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "stage1_epochs",
    "stage2_epochs",
    "batch_size",
    "learning_rate",
    "stage2_learning_rate",
    "warmup_fraction",
    "weight_decay",
    "max_grad_norm",
    "alpha",
    "k",
    "retriever",
    "bm25_k1",
    "bm25_b",
    "use_hist_prompt",
    "use_exp_prompt",
    "use_label_para",
    "use_sep_prefix",
    "fusion_mode",
    "paraphrase_target",
    "concat_extra_epochs",
    "refresh_cache_every_epoch",
    "seed",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(1..=10).contains(&self.k) {
            return Err(Error::Config(format!("k must lie in 1..=10, got {}", self.k)));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1)".into()));
        }
        let lrs = [Some(self.learning_rate), self.stage2_learning_rate];
        if lrs.iter().flatten().any(|lr| *lr <= 0.0 || !lr.is_finite()) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    pub fn stage2_lr(&self) -> f64 {
        self.stage2_learning_rate.unwrap_or(self.learning_rate)
    }

    pub fn read_kv(&mut self, kv: &KvConfig) -> Result<()> {
        kv.read("stage1_epochs", &mut self.stage1_epochs)?;
        kv.read("stage2_epochs", &mut self.stage2_epochs)?;
        kv.read("batch_size", &mut self.batch_size)?;
        kv.read("learning_rate", &mut self.learning_rate)?;
        if kv.get_str("stage2_learning_rate").is_some() {
            let mut lr = 0.0;
            kv.read("stage2_learning_rate", &mut lr)?;
            self.stage2_learning_rate = Some(lr);
        }
        kv.read("warmup_fraction", &mut self.warmup_fraction)?;
        kv.read("weight_decay", &mut self.weight_decay)?;
        kv.read("max_grad_norm", &mut self.max_grad_norm)?;
        kv.read("alpha", &mut self.alpha)?;
        kv.read("k", &mut self.k)?;
        kv.read("retriever", &mut self.retriever)?;
        kv.read("bm25_k1", &mut self.bm25_k1)?;
        kv.read("bm25_b", &mut self.bm25_b)?;
        kv.read("use_hist_prompt", &mut self.use_hist_prompt)?;
        kv.read("use_exp_prompt", &mut self.use_exp_prompt)?;
        kv.read("use_label_para", &mut self.use_label_para)?;
        kv.read("use_sep_prefix", &mut self.use_sep_prefix)?;
        kv.read("fusion_mode", &mut self.fusion_mode)?;
        kv.read("paraphrase_target", &mut self.paraphrase_target)?;
        kv.read("concat_extra_epochs", &mut self.concat_extra_epochs)?;
        kv.read("refresh_cache_every_epoch", &mut self.refresh_cache_every_epoch)?;
        kv.read("seed", &mut self.seed)?;
        self.validate()
    }

    pub fn write_kv(&self, kv: &mut KvConfig) {
        kv.set("stage1_epochs", self.stage1_epochs);
        kv.set("stage2_epochs", self.stage2_epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("learning_rate", self.learning_rate);
        if let Some(lr) = self.stage2_learning_rate {
            kv.set("stage2_learning_rate", lr);
        }
        kv.set("warmup_fraction", self.warmup_fraction);
        kv.set("weight_decay", self.weight_decay);
        kv.set("max_grad_norm", self.max_grad_norm);
        kv.set("alpha", self.alpha);
        kv.set("k", self.k);
        kv.set("retriever", self.retriever);
        kv.set("bm25_k1", self.bm25_k1);
        kv.set("bm25_b", self.bm25_b);
        kv.set("use_hist_prompt", self.use_hist_prompt);
        kv.set("use_exp_prompt", self.use_exp_prompt);
        kv.set("use_label_para", self.use_label_para);
        kv.set("use_sep_prefix", self.use_sep_prefix);
        kv.set("fusion_mode", self.fusion_mode);
        kv.set("paraphrase_target", self.paraphrase_target);
        kv.set("concat_extra_epochs", self.concat_extra_epochs);
        kv.set("refresh_cache_every_epoch", self.refresh_cache_every_epoch);
        kv.set("seed", self.seed);
    }
}
