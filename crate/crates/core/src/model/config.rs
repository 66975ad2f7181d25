use crate::cqi::{num_subbands, CqiMode};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModulationMode {
    /// Learned distribution over a discrete constellation.
    #[default]
    Jcm,
    /// Power-normalized continuous symbols.
    Analog,
}

impl std::fmt::Display for ModulationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModulationMode::Jcm => "jcm",
            ModulationMode::Analog => "analog",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstellationKind {
    #[default]
    Psk,
    Qam,
}

/// How a hard symbol is picked from the modulator distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HardDecision {
    #[default]
    Argmax,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_t: usize,
    pub n_c: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Complex channel uses `M` per feedback.
    pub channel_uses: usize,
    pub constellation: ConstellationKind,
    /// Number of constellation points `K`.
    pub constellation_order: usize,
    pub cqi_mode: CqiMode,
    /// Needed to align subband CQI with the subcarrier tokens.
    pub subcarriers_per_subband: usize,
    pub modulation: ModulationMode,
    pub tau_start: f64,
    pub tau_end: f64,
    pub anneal_steps: u64,
    /// Train with hard one-hot forward values and soft gradients.
    pub straight_through: bool,
    pub hard_decision: HardDecision,
    pub layernorm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_t: 32,
            n_c: 52,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            channel_uses: 104,
            constellation: ConstellationKind::Psk,
            constellation_order: 4,
            cqi_mode: CqiMode::Subband,
            subcarriers_per_subband: 4,
            modulation: ModulationMode::Jcm,
            tau_start: 1.0,
            tau_end: 0.1,
            anneal_steps: 5000,
            straight_through: false,
            hard_decision: HardDecision::Argmax,
            layernorm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// `N_t = 4, N_c = 8, N_embed = 16, depth 2, M = 8, K = 4`.
    pub fn toy() -> Self {
        ModelConfig {
            n_t: 4,
            n_c: 8,
            embed_dim: 16,
            depth: 2,
            heads: 4,
            channel_uses: 8,
            subcarriers_per_subband: 2,
            ..Default::default()
        }
    }

    /// Tokens per sequence; one per subcarrier.
    pub fn tokens(&self) -> usize {
        self.n_c
    }

    /// `γ = M / (N_t · N_c)`.
    pub fn compression_ratio(&self) -> f64 {
        self.channel_uses as f64 / (self.n_t * self.n_c) as f64
    }

    /// Channel uses for a target compression ratio (rounded to nearest).
    pub fn channel_uses_for(n_t: usize, n_c: usize, ratio: f64) -> usize {
        ((n_t * n_c) as f64 * ratio).round().max(1.0) as usize
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// Gumbel-softmax temperature at `step`, linear from `tau_start` to `tau_end`.
    pub fn tau_at(&self, step: u64) -> f64 {
        if self.anneal_steps == 0 || step >= self.anneal_steps {
            return self.tau_end;
        }
        let frac = step as f64 / self.anneal_steps as f64;
        self.tau_start + (self.tau_end - self.tau_start) * frac
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("model: {m}")));
        if self.n_t == 0 || self.n_c == 0 || self.embed_dim == 0 {
            return bad("n_t, n_c and embed_dim must be positive");
        }
        if self.channel_uses == 0 {
            return bad("channel_uses must be ≥ 1");
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad("embed_dim must be divisible by heads");
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be ≥ 1");
        }
        if self.constellation_order < 2 {
            return bad("constellation_order must be ≥ 2");
        }
        if !(self.tau_start > 0.0 && self.tau_end > 0.0) {
            return bad("temperatures must be positive");
        }
        if self.layernorm_eps <= 0.0 {
            return bad("layernorm_eps must be positive");
        }
        if self.cqi_mode == CqiMode::Subband {
            num_subbands(self.n_c, self.subcarriers_per_subband)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compression_ratio_accounting() {
        let cfg = ModelConfig::default();
        assert_eq!(ModelConfig::channel_uses_for(32, 52, 1.0 / 16.0), 104);
        assert_eq!(cfg.compression_ratio(), 1.0 / 16.0);
        assert_eq!(ModelConfig::toy().compression_ratio(), 0.25);
    }

    #[test]
    fn temperature_schedule() {
        let cfg = ModelConfig {
            anneal_steps: 100,
            ..ModelConfig::toy()
        };
        assert_eq!(cfg.tau_at(0), 1.0);
        assert!((cfg.tau_at(50) - 0.55).abs() < 1e-12);
        assert_eq!(cfg.tau_at(100), 0.1);
        assert_eq!(cfg.tau_at(1_000), 0.1);
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::toy().validate().is_ok());
        let c = ModelConfig {
            heads: 3,
            ..ModelConfig::toy()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            subcarriers_per_subband: 3,
            ..ModelConfig::toy()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            channel_uses: 0,
            ..ModelConfig::toy()
        };
        assert!(c.validate().is_err());
    }
}
