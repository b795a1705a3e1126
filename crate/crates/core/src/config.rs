//! Model hyperparameters, their defaults, and structural validation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Every architectural hyperparameter of the model.
///
/// `input_dim` has no meaningful default (it is fixed by whatever feature
/// extractor produced the stream) and must be supplied.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub history_len: usize,
    pub trend_len: usize,
    pub num_windows: usize,
    pub history_dim: usize,
    pub trend_dim: usize,
    pub num_stages: usize,
    pub stage_reduction: Vec<usize>,
    pub msa_heads: usize,
    pub mtsm_heads: usize,
    pub global_sa_layers: usize,
    pub trend_sa_layers: usize,
    pub trend_ca_modules: usize,
    pub cascade_sa_layers: usize,
    pub cascade_stages: usize,
    pub decoder_swin_layers: Vec<usize>,
    pub decoder_expansion: Vec<usize>,
    pub decoder_window_size: usize,
    /// Includes the background class at index 0.
    pub num_actions: usize,
    pub loss_weights: [f64; 3],
    pub ffn_expansion: usize,
    pub seed: u64,
    /// Renormalize the cascade shortcut with a softmax instead of the
    /// mass-preserving L1 rescale.
    pub cascade_softmax: bool,
    /// Materialize decoder weights for the segmentation branch.
    pub oas_decoder: bool,
}

/// Defaults for a stream of `input_dim`-channel features.
pub fn default_config(input_dim: usize) -> ModelConfig {
    ModelConfig {
        input_dim,
        history_len: 512,
        trend_len: 32,
        num_windows: 16,
        history_dim: 256,
        trend_dim: 1024,
        num_stages: 2,
        stage_reduction: vec![4, 4],
        msa_heads: 4,
        mtsm_heads: 8,
        global_sa_layers: 3,
        trend_sa_layers: 2,
        trend_ca_modules: 2,
        cascade_sa_layers: 2,
        cascade_stages: 1,
        decoder_swin_layers: vec![4, 8, 4, 2],
        decoder_expansion: vec![2, 4, 4],
        decoder_window_size: 8,
        num_actions: 21,
        loss_weights: [0.2, 0.7, 0.4],
        ffn_expansion: 4,
        seed: 0,
        cascade_softmax: false,
        oas_decoder: false,
    }
}

/// One broken structural invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    /// Stable short name of the rule.
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)
    }
}

/// Failure to apply a `key = value` setting.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: &'static str },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
}

impl ModelConfig {
    /// History window size `w = m_L / N_w`.
    pub fn window_size(&self) -> usize {
        if self.num_windows == 0 {
            0
        } else {
            self.history_len / self.num_windows
        }
    }

    /// Channel width entering encoder stage `s`.
    pub fn stage_channels(&self, s: usize) -> usize {
        self.history_dim << s
    }

    /// Width of a window summary after all stages.
    pub fn summary_dim(&self) -> usize {
        self.stage_channels(self.num_stages)
    }

    /// Tokens entering encoder stage `s` (stage `M` is the pooled remainder).
    pub fn stage_tokens(&self, s: usize) -> usize {
        self.stage_reduction[..s].iter().fold(self.window_size(), |n, r| n / r.max(&1))
    }

    /// Token count at each decoder stage, starting from the bank.
    pub fn decoder_tokens(&self) -> Vec<usize> {
        let mut counts = vec![self.num_windows];
        for r in &self.decoder_expansion {
            counts.push(counts.last().unwrap() * r);
        }
        counts
    }

    /// Heads used by the cascade, whose attention runs directly over class
    /// probabilities.
    pub fn cascade_heads(&self) -> usize {
        if self.num_actions >= 4 && self.num_actions % 2 == 0 {
            2
        } else {
            1
        }
    }

    /// Every violated invariant; empty means the config is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let mut bad = |rule: &'static str, detail: String| v.push(Violation { rule, detail });

        for (name, value) in [
            ("input_dim", self.input_dim),
            ("history_len", self.history_len),
            ("trend_len", self.trend_len),
            ("num_windows", self.num_windows),
            ("history_dim", self.history_dim),
            ("trend_dim", self.trend_dim),
            ("msa_heads", self.msa_heads),
            ("mtsm_heads", self.mtsm_heads),
            ("ffn_expansion", self.ffn_expansion),
            ("decoder_window_size", self.decoder_window_size),
        ] {
            if value == 0 {
                bad("nonzero size", format!("{name} must be at least 1"));
            }
        }

        if self.num_windows > 0 && self.history_len % self.num_windows != 0 {
            bad("m_L mod N_w", format!("history_len {} is not a multiple of num_windows {}", self.history_len, self.num_windows));
        }

        let w = self.window_size();
        if self.stage_reduction.len() != self.num_stages {
            bad("stage count", format!("{} reductions listed for {} stages", self.stage_reduction.len(), self.num_stages));
        }
        if self.stage_reduction.iter().any(|&r| r == 0) {
            bad("stage count", "reduction rates must be at least 1".to_string());
        } else {
            let product: usize = self.stage_reduction.iter().product();
            if w > 0 && product > w {
                bad("window exhausted before pooling", format!("reductions multiply to {product} but the window holds {w} tokens"));
            } else if w > 0 && w % product != 0 {
                bad("reduction divides window", format!("reductions multiply to {product}, which does not divide window size {w}"));
            }
        }

        if self.msa_heads > 0 && self.mtsm_heads > 0 {
            for s in 0..=self.num_stages.min(16) {
                let c = self.stage_channels(s);
                if c % self.msa_heads != 0 {
                    bad("msa heads divide channels", format!("stage {s} width {c} not divisible by msa_heads {}", self.msa_heads));
                }
                if s < self.num_stages {
                    if c % self.mtsm_heads != 0 {
                        bad("mtsm heads divide channels", format!("stage {s} width {c} not divisible by mtsm_heads {}", self.mtsm_heads));
                    }
                    if c < 4 {
                        bad("slimming bottleneck", format!("stage {s} width {c} leaves an empty bottleneck"));
                    }
                }
            }
            if self.trend_dim % self.msa_heads != 0 {
                bad("msa heads divide channels", format!("trend_dim {} not divisible by msa_heads {}", self.trend_dim, self.msa_heads));
            }
            if self.oas_decoder && (self.trend_dim % self.mtsm_heads != 0 || self.trend_dim < 4) {
                bad("mtsm heads divide channels", format!("decoder width {} not divisible by mtsm_heads {}", self.trend_dim, self.mtsm_heads));
            }
        }
        if self.num_stages < 16 && self.summary_dim() != self.trend_dim {
            bad("bank width", format!("history_dim*2^M = {} must equal trend_dim {}", self.summary_dim(), self.trend_dim));
        }
        if self.trend_dim % 2 != 0 {
            bad("even trend width", format!("trend_dim {} must be even for sinusoidal positions", self.trend_dim));
        }

        if self.decoder_expansion.len() != self.num_stages + 1 {
            bad("decoder expansion count", format!("{} expansion rates for {} stages", self.decoder_expansion.len(), self.num_stages + 1));
        }
        if self.decoder_swin_layers.len() != self.num_stages + 2 {
            bad("decoder layer plan", format!("{} layer counts, expected {}", self.decoder_swin_layers.len(), self.num_stages + 2));
        }
        if self.decoder_expansion.iter().any(|&r| r == 0) {
            bad("decoder expansion count", "expansion rates must be at least 1".to_string());
        } else {
            let product: usize = self.decoder_expansion.iter().product();
            // Pooling leaves one token per window.
            if product * self.num_windows != self.history_len {
                bad("decoder restores history", format!("{} windows x expansion {product} != history_len {}", self.num_windows, self.history_len));
            }
            if self.decoder_window_size > 0 {
                for n in self.decoder_tokens() {
                    if n % self.decoder_window_size != 0 {
                        bad("decoder window divides tokens", format!("window {} does not divide {n} tokens", self.decoder_window_size));
                    }
                }
            }
        }

        if self.loss_weights.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            bad("loss weights", "lambda values must be finite and nonnegative".to_string());
        }
        if self.num_actions < 2 {
            bad("num_actions", format!("need background plus at least one action, got {}", self.num_actions));
        }
        v
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let count = |reason| -> Result<usize, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue { key: key.to_string(), value: value.to_string(), reason })
        };
        let list = || -> Result<Vec<usize>, ConfigError> {
            value
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse())
                .collect::<Result<_, _>>()
                .map_err(|_| ConfigError::BadValue { key: key.to_string(), value: value.to_string(), reason: "expected comma-separated counts" })
        };
        let flag = || match value {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            _ => Err(ConfigError::BadValue { key: key.to_string(), value: value.to_string(), reason: "expected true or false" }),
        };
        let c = "expected a nonnegative integer";
        match key {
            "input_dim" => self.input_dim = count(c)?,
            "history_len" => self.history_len = count(c)?,
            "trend_len" => self.trend_len = count(c)?,
            "num_windows" => self.num_windows = count(c)?,
            "history_dim" => self.history_dim = count(c)?,
            "trend_dim" => self.trend_dim = count(c)?,
            "num_stages" => self.num_stages = count(c)?,
            "stage_reduction" => self.stage_reduction = list()?,
            "msa_heads" => self.msa_heads = count(c)?,
            "mtsm_heads" => self.mtsm_heads = count(c)?,
            "global_sa_layers" => self.global_sa_layers = count(c)?,
            "trend_sa_layers" => self.trend_sa_layers = count(c)?,
            "trend_ca_modules" => self.trend_ca_modules = count(c)?,
            "cascade_sa_layers" => self.cascade_sa_layers = count(c)?,
            "cascade_stages" => self.cascade_stages = count(c)?,
            "decoder_swin_layers" => self.decoder_swin_layers = list()?,
            "decoder_expansion" => self.decoder_expansion = list()?,
            "decoder_window_size" => self.decoder_window_size = count(c)?,
            "num_actions" => self.num_actions = count(c)?,
            "ffn_expansion" => self.ffn_expansion = count(c)?,
            "seed" => self.seed = value.parse().map_err(|_| ConfigError::BadValue { key: key.to_string(), value: value.to_string(), reason: c })?,
            "cascade_softmax" => self.cascade_softmax = flag()?,
            "oas_decoder" => self.oas_decoder = flag()?,
            "loss_weights" => {
                let parts: Result<Vec<f64>, _> = value.split(',').map(|s| s.trim().parse::<f64>()).collect();
                match parts {
                    Ok(p) if p.len() == 3 => self.loss_weights = [p[0], p[1], p[2]],
                    _ => {
                        return Err(ConfigError::BadValue { key: key.to_string(), value: value.to_string(), reason: "expected three comma-separated reals" })
                    }
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// All settings as `(key, value)` text pairs, in a fixed order that
    /// [`ModelConfig::set`] accepts back.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("input_dim", self.input_dim.to_string()),
            ("history_len", self.history_len.to_string()),
            ("trend_len", self.trend_len.to_string()),
            ("num_windows", self.num_windows.to_string()),
            ("history_dim", self.history_dim.to_string()),
            ("trend_dim", self.trend_dim.to_string()),
            ("num_stages", self.num_stages.to_string()),
            ("stage_reduction", list(&self.stage_reduction)),
            ("msa_heads", self.msa_heads.to_string()),
            ("mtsm_heads", self.mtsm_heads.to_string()),
            ("global_sa_layers", self.global_sa_layers.to_string()),
            ("trend_sa_layers", self.trend_sa_layers.to_string()),
            ("trend_ca_modules", self.trend_ca_modules.to_string()),
            ("cascade_sa_layers", self.cascade_sa_layers.to_string()),
            ("cascade_stages", self.cascade_stages.to_string()),
            ("decoder_swin_layers", list(&self.decoder_swin_layers)),
            ("decoder_expansion", list(&self.decoder_expansion)),
            ("decoder_window_size", self.decoder_window_size.to_string()),
            ("num_actions", self.num_actions.to_string()),
            ("loss_weights", format!("{},{},{}", self.loss_weights[0], self.loss_weights[1], self.loss_weights[2])),
            ("ffn_expansion", self.ffn_expansion.to_string()),
            ("seed", self.seed.to_string()),
            ("cascade_softmax", self.cascade_softmax.to_string()),
            ("oas_decoder", self.oas_decoder.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules(c: &ModelConfig) -> Vec<&'static str> {
        c.validate().into_iter().map(|v| v.rule).collect()
    }

    #[test]
    fn defaults_are_valid_and_match_reported_settings() {
        let c = default_config(2048);
        assert!(c.validate().is_empty(), "{:?}", c.validate());
        assert_eq!(c.window_size(), 32);
        assert_eq!(c.stage_reduction, vec![4, 4]);
        assert_eq!(c.decoder_expansion, vec![2, 4, 4]);
        assert_eq!(c.decoder_swin_layers, vec![4, 8, 4, 2]);
        assert_eq!((c.history_dim, c.trend_dim, c.msa_heads, c.mtsm_heads), (256, 1024, 4, 8));
        assert_eq!(c.loss_weights, [0.2, 0.7, 0.4]);
        assert_eq!(c.summary_dim(), 1024);
        assert_eq!(c.decoder_tokens(), vec![16, 32, 128, 512]);
    }

    #[test]
    fn uneven_window_split_is_reported() {
        let mut c = default_config(64);
        c.num_windows = 15;
        assert!(rules(&c).contains(&"m_L mod N_w"));
    }

    #[test]
    fn oversized_reduction_exhausts_window() {
        let mut c = default_config(64);
        c.stage_reduction = vec![8, 8];
        assert!(rules(&c).contains(&"window exhausted before pooling"));
    }

    #[test]
    fn other_rules_fire() {
        let mut c = default_config(0);
        c.num_actions = 1;
        c.loss_weights[1] = -0.5;
        c.decoder_window_size = 5;
        let r = rules(&c);
        for want in ["nonzero size", "num_actions", "loss weights", "decoder window divides tokens"] {
            assert!(r.contains(&want), "{want} missing from {r:?}");
        }
    }

    #[test]
    fn pairs_roundtrip_through_set() {
        let mut c = default_config(7);
        c.cascade_softmax = true;
        c.seed = 99;
        let mut back = default_config(1);
        for (k, v) in c.to_pairs() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, c);
        assert_eq!(back.set("bogus", "1"), Err(ConfigError::UnknownKey("bogus".into())));
        assert!(matches!(back.set("trend_len", "x"), Err(ConfigError::BadValue { .. })));
    }
}
