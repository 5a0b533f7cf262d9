use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Error, Result};

pub const LN_EPS: f64 = 1e-5;
pub const ROPE_BASE: f64 = 10_000.0;

/// Sublayer conventions.
///
/// - `A`: post-norm, learned positions, GELU MLP.
/// - `B`: pre-norm, learned positions, GELU MLP, final norm.
/// - `C`: pre-norm, rotary positions, gated SiLU MLP, final norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "arch-A")]
    A,
    #[serde(rename = "arch-B")]
    B,
    #[serde(rename = "arch-C")]
    C,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::A, Architecture::B, Architecture::C];

    pub fn pre_norm(self) -> bool {
        !matches!(self, Architecture::A)
    }

    pub fn learned_positions(self) -> bool {
        !matches!(self, Architecture::C)
    }

    pub fn gated_mlp(self) -> bool {
        matches!(self, Architecture::C)
    }

    pub fn tag(self) -> &'static str {
        match self {
            Architecture::A => "arch-A",
            Architecture::B => "arch-B",
            Architecture::C => "arch-C",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arch-A" | "A" | "a" => Ok(Architecture::A),
            "arch-B" | "B" | "b" => Ok(Architecture::B),
            "arch-C" | "C" | "c" => Ok(Architecture::C),
            _ => contract_err(format!("unknown architecture tag '{s}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub architecture: Architecture,
}

impl ModelConfig {
    /// 12 layers, width 64, 4 heads, MLP 256, 160 positions.
    pub fn desk_default(vocab_size: usize, architecture: Architecture) -> Self {
        ModelConfig {
            n_layers: 12,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            vocab_size,
            max_seq_len: 160,
            architecture,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_dims(
            self.n_layers,
            self.d_model,
            self.n_heads,
            self.d_ff,
            self.vocab_size,
            self.max_seq_len,
            self.architecture,
        )
    }
}

fn validate_dims(
    n_layers: usize,
    d_model: usize,
    n_heads: usize,
    d_ff: usize,
    vocab_size: usize,
    max_seq_len: usize,
    arch: Architecture,
) -> Result<()> {
    if n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0 {
        return contract_err("model dimensions must be positive");
    }
    if d_model % n_heads != 0 {
        return contract_err(format!("d_model {d_model} is not divisible by n_heads {n_heads}"));
    }
    if arch == Architecture::C && (d_model / n_heads) % 2 != 0 {
        return contract_err("rotary positions need an even head width");
    }
    if max_seq_len < 2 {
        return contract_err(format!("max_seq_len must be at least 2, got {max_seq_len}"));
    }
    Ok(())
}

/// Attack model shape. Width must equal the victim activation width; the
/// input is an activation sequence, never token ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub architecture: Architecture,
}

impl AttackModelConfig {
    /// Same width, heads, MLP size, vocabulary and architecture as `victim`.
    pub fn matching(victim: &ModelConfig, n_layers: usize) -> Self {
        AttackModelConfig {
            n_layers,
            d_model: victim.d_model,
            n_heads: victim.n_heads,
            d_ff: victim.d_ff,
            vocab_size: victim.vocab_size,
            max_seq_len: victim.max_seq_len,
            architecture: victim.architecture,
        }
    }

    pub fn with_architecture(mut self, architecture: Architecture) -> Self {
        self.architecture = architecture;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_dims(
            self.n_layers,
            self.d_model,
            self.n_heads,
            self.d_ff,
            self.vocab_size,
            self.max_seq_len,
            self.architecture,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indivisible_heads_are_rejected() {
        let mut c = ModelConfig::desk_default(10, Architecture::B);
        c.d_model = 7;
        c.n_heads = 2;
        assert!(matches!(c.validate(), Err(Error::Contract(_))));
    }

    #[test]
    fn short_context_is_rejected() {
        let mut c = ModelConfig::desk_default(10, Architecture::A);
        c.max_seq_len = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn tags_round_trip_through_serde() {
        for a in Architecture::ALL {
            let s = serde_json::to_string(&a).unwrap();
            assert_eq!(s, format!("\"{}\"", a.tag()));
            assert_eq!(a.tag().parse::<Architecture>().unwrap(), a);
        }
    }
}
