//! Symbolic multiply-accumulate counts from config shapes alone.

use crate::config::ModelConfig;

/// Residual attention block over `n` tokens of width `c`, attending `m`
/// memory rows (`m == n` for self-attention).
fn attention_macs(n: u64, m: u64, c: u64) -> u64 {
    // q from n rows, k and v from m rows, scores, weighted sum, output.
    n * c * c + 2 * m * c * c + 2 * n * m * c + n * c * c
}

fn ffn_macs(n: u64, c: u64, expansion: u64) -> u64 {
    2 * n * c * c * expansion
}

fn block_macs(n: u64, c: u64, expansion: u64) -> u64 {
    attention_macs(n, n, c) + ffn_macs(n, c, expansion)
}

/// Token slimmer: `n` tokens of `c_in` to `tokens_out` tokens of `c_out`.
fn slimmer_macs(n: u64, c_in: u64, c_out: u64, heads: u64, tokens_out: u64) -> u64 {
    let bottleneck = c_in / 4;
    // Head projections, shared bottleneck, token scores, mixing, output.
    n * c_in * c_out + n * c_out * bottleneck + heads * tokens_out * bottleneck * n + tokens_out * n * c_out + tokens_out * c_out * c_out
}

/// Cost breakdown of one inference step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepCost {
    pub projection: u64,
    pub window_encoder: u64,
    pub bank_attention: u64,
    pub trend: u64,
    pub cascade: u64,
}

impl StepCost {
    pub fn total(&self) -> u64 {
        self.projection + self.window_encoder + self.bank_attention + self.trend + self.cascade
    }
}

/// Multiply-accumulates to compress one history window.
pub fn window_encode_macs(c: &ModelConfig) -> u64 {
    let e = c.ffn_expansion as u64;
    (0..c.num_stages)
        .map(|s| {
            let (n, ch) = (c.stage_tokens(s) as u64, c.stage_channels(s) as u64);
            let out = c.stage_tokens(s + 1) as u64;
            block_macs(n, ch, e) + slimmer_macs(n, ch, 2 * ch, c.mtsm_heads as u64, out)
        })
        .sum()
}

/// One steady-state step that re-encodes `windows_encoded` history windows.
pub fn step_macs(c: &ModelConfig, windows_encoded: u64) -> StepCost {
    let e = c.ffn_expansion as u64;
    let (d, dl, ds, na) = (c.input_dim as u64, c.history_dim as u64, c.trend_dim as u64, c.num_actions as u64);
    let (m, nw) = (c.trend_len as u64, c.num_windows as u64);
    let bank = c.global_sa_layers as u64 * block_macs(nw, c.summary_dim() as u64, e);
    let trend = c.trend_sa_layers as u64 * block_macs(m, ds, e)
        + c.trend_ca_modules as u64 * (attention_macs(m, m, ds) + attention_macs(m, nw, ds))
        + m * ds * na;
    let cascade = c.cascade_stages as u64 * (c.cascade_sa_layers as u64 * block_macs(m, na, e) + m * na * na);
    StepCost {
        projection: d * ds + d * dl,
        window_encoder: windows_encoded * window_encode_macs(c),
        bank_attention: bank,
        trend,
        cascade,
    }
}

/// Circular updating: one window per step.
pub fn circular_step_macs(c: &ModelConfig) -> StepCost {
    step_macs(c, 1)
}

/// Sliding baseline: every window per step.
pub fn sliding_step_macs(c: &ModelConfig) -> StepCost {
    step_macs(c, c.num_windows as u64)
}
