use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    /// Relation tokens per kind (m), shared across all three kinds.
    pub num_relation_tokens: usize,
    pub dropout_rate: f64,
    /// Tie the MLM output projection to the word embeddings.
    pub tie_mlm_weights: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 2000,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 256,
            max_len: 64,
            num_relation_tokens: 3,
            dropout_rate: 0.0,
            tie_mlm_weights: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 6 {
            return Err(Error::config(format!(
                "vocab_size {} below the 5 specials + 1 token minimum",
                self.vocab_size
            )));
        }
        if self.num_heads == 0 || self.hidden_dim == 0 {
            return Err(Error::config("hidden_dim and num_heads must be positive"));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::config(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.max_len < self.num_relation_tokens + 4 {
            return Err(Error::config(format!(
                "max_len {} too small for m={} relation tokens plus CLS/SEP and text",
                self.max_len, self.num_relation_tokens
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.ffn_dim == 0 {
            return Err(Error::config("ffn_dim must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        EncoderConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = EncoderConfig::default();
        c.hidden_dim = 65;
        assert!(c.validate().is_err());

        let mut c = EncoderConfig::default();
        c.max_len = 6;
        assert!(c.validate().is_err());

        let mut c = EncoderConfig::default();
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());

        let mut c = EncoderConfig::default();
        c.vocab_size = 5;
        assert!(c.validate().is_err());
    }
}
