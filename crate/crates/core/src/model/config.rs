use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::KvConfig;

/// Shape of the encoder-decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Position budget of both encoder and decoder inputs.
    pub max_len: usize,
    /// Number of preceding utterances packed into the encoder context.
    pub context_window: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            d_ff: 128,
            max_len: 160,
            context_window: 4,
            dropout: 0.1,
        }
    }
}

pub const MODEL_KEYS: &[&str] = &[
    "d_model",
    "n_layers",
    "n_heads",
    "d_ff",
    "max_len",
    "context_window",
    "dropout",
];

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_ff == 0 || self.max_len < 8 {
            return Err(Error::Config("d_ff must be positive and max_len >= 8".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn read_kv(&mut self, kv: &KvConfig) -> Result<()> {
        kv.read("d_model", &mut self.d_model)?;
        kv.read("n_layers", &mut self.n_layers)?;
        kv.read("n_heads", &mut self.n_heads)?;
        kv.read("d_ff", &mut self.d_ff)?;
        kv.read("max_len", &mut self.max_len)?;
        kv.read("context_window", &mut self.context_window)?;
        kv.read("dropout", &mut self.dropout)?;
        self.validate()
    }

    pub fn write_kv(&self, kv: &mut KvConfig) {
        kv.set("d_model", self.d_model);
        kv.set("n_layers", self.n_layers);
        kv.set("n_heads", self.n_heads);
        kv.set("d_ff", self.d_ff);
        kv.set("max_len", self.max_len);
        kv.set("context_window", self.context_window);
        kv.set("dropout", self.dropout);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heads_must_divide_width() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
