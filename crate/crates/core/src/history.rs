//! Circular window-based history encoder.
//!
//! A history window of `w` projected frames is compressed to one summary
//! vector: each of `M` stages applies one window self-attention layer and a
//! multi-head token slimmer (halving nothing, doubling channels, dividing the
//! token count by the stage's reduction rate), and the surviving tokens are
//! mean pooled. No positional signal enters anywhere, so a summary depends
//! only on the multiset of frames in the window, not on their slot order.
//! The `N_w` summaries form the bank, which a few unmasked self-attention
//! layers then mix globally.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::error::ModelError;
use crate::nn::{AttentionBlock, Linear, TokenSlimmer};
use crate::tensor::{mean_pool_rows, AttentionMask, Matrix};
use crate::weights::WeightStore;

/// `w × d_L` projected frames of one history window.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryWindow {
    tokens: Matrix,
}

impl HistoryWindow {
    pub fn new(tokens: Matrix) -> Self {
        Self { tokens }
    }

    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }
}

/// The `N_w` window summaries attended by the trend.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedBank {
    summaries: Matrix,
    valid: Vec<bool>,
}

impl CompressedBank {
    /// All rows zero and flagged invalid.
    pub fn empty(windows: usize, width: usize) -> Self {
        Self { summaries: Matrix::zeros(windows, width), valid: vec![false; windows] }
    }

    /// Every row valid.
    pub fn from_summaries(summaries: Matrix) -> Self {
        let valid = vec![true; summaries.rows()];
        Self { summaries, valid }
    }

    pub fn summaries(&self) -> &Matrix {
        &self.summaries
    }

    pub fn windows(&self) -> usize {
        self.summaries.rows()
    }

    pub fn width(&self) -> usize {
        self.summaries.cols()
    }

    pub fn is_valid(&self, n: usize) -> bool {
        self.valid[n]
    }

    pub fn set(&mut self, n: usize, summary: &[f32]) {
        self.summaries.row_mut(n).copy_from_slice(summary);
        self.valid[n] = true;
    }

    /// Row `n` for in-place edits; the row stays flagged as it was.
    pub fn row_mut(&mut self, n: usize) -> &mut [f32] {
        self.summaries.row_mut(n)
    }

    /// Cyclically moves row `n` to `n + k` (mod `N_w`).
    pub fn rotated(&self, k: usize) -> Self {
        let n = self.windows();
        let mut out = self.clone();
        for i in 0..n {
            let to = (i + k) % n;
            out.summaries.row_mut(to).copy_from_slice(self.summaries.row(i));
            out.valid[to] = self.valid[i];
        }
        out
    }
}

#[derive(Clone, Debug)]
struct EncoderStage {
    msa: AttentionBlock,
    mtsm: TokenSlimmer,
    reduction: usize,
}

/// History projection, hierarchical window encoder and global bank attention.
#[derive(Clone, Debug)]
pub struct HistoryEncoder {
    proj: Linear,
    stages: Vec<EncoderStage>,
    global: Vec<AttentionBlock>,
    window: usize,
    input_dim: usize,
    history_dim: usize,
    summary_dim: usize,
}

impl HistoryEncoder {
    pub(crate) fn load(store: &WeightStore, c: &ModelConfig) -> Result<Self, ModelError> {
        let proj = Linear::load_projection(store, "cwhe.proj_hist", c.input_dim, c.history_dim)?;
        let mut stages = Vec::with_capacity(c.num_stages);
        for s in 0..c.num_stages {
            let ch = c.stage_channels(s);
            stages.push(EncoderStage {
                msa: AttentionBlock::load(store, &format!("cwhe.stage{s}.msa"), ch, c.msa_heads, c.ffn_expansion)?,
                mtsm: TokenSlimmer::load(store, &format!("cwhe.stage{s}.mtsm"), ch, 2 * ch, c.mtsm_heads, c.stage_tokens(s + 1))?,
                reduction: c.stage_reduction[s],
            });
        }
        let global = (0..c.global_sa_layers)
            .map(|g| AttentionBlock::load(store, &format!("cwhe.global{g}"), c.summary_dim(), c.msa_heads, c.ffn_expansion))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            proj,
            stages,
            global,
            window: c.window_size(),
            input_dim: c.input_dim,
            history_dim: c.history_dim,
            summary_dim: c.summary_dim(),
        })
    }

    pub fn window_size(&self) -> usize {
        self.window
    }

    pub fn summary_dim(&self) -> usize {
        self.summary_dim
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// `e = W_L · x`.
    pub fn project_history(&self, x: &[f32]) -> Result<Vec<f32>, ModelError> {
        if x.len() != self.input_dim {
            return Err(ModelError::Dimension { what: "history feature", expected: self.input_dim, found: x.len() });
        }
        Ok(self.proj.forward(&Matrix::from_vec(1, x.len(), x.to_vec())).into_vec())
    }

    /// Row-wise `W_L · x` for a batch of raw features.
    pub fn project_history_rows(&self, x: &Matrix) -> Result<Matrix, ModelError> {
        if x.cols() != self.input_dim {
            return Err(ModelError::Dimension { what: "history feature", expected: self.input_dim, found: x.cols() });
        }
        Ok(self.proj.forward(x))
    }

    /// Stage `s` window self-attention layer (no positions, optional mask).
    pub fn window_msa(&self, stage: usize, tokens: &Matrix, mask: Option<&AttentionMask>) -> Matrix {
        self.stages[stage].msa.forward(tokens, mask)
    }

    /// Stage `s` token slimmer: `n × c` to `(n / r) × 2c`.
    pub fn mtsm_reduce(&self, stage: usize, tokens: &Matrix) -> Matrix {
        self.mtsm_reduce_grouped(stage, tokens, 1)
    }

    fn mtsm_reduce_grouped(&self, stage: usize, tokens: &Matrix, groups: usize) -> Matrix {
        let st = &self.stages[stage];
        assert_eq!(
            tokens.rows(),
            groups * st.mtsm.tokens_out() * st.reduction,
            "mtsm_reduce: {} tokens do not reduce by {} to {}",
            tokens.rows() / groups.max(1),
            st.reduction,
            st.mtsm.tokens_out()
        );
        st.mtsm.forward_grouped(tokens, groups)
    }

    pub fn slimmer(&self, stage: usize) -> &TokenSlimmer {
        &self.stages[stage].mtsm
    }

    /// Compresses one window to its summary vector.
    pub fn encode_window(&self, window: &HistoryWindow) -> Vec<f32> {
        self.encode_traced(window.tokens(), |_| {})
    }

    /// As [`Self::encode_window`], reporting the token matrix shape entering
    /// each stage and after the last one.
    pub fn encode_traced(&self, tokens: &Matrix, trace: impl FnMut((usize, usize))) -> Vec<f32> {
        self.encode_stacked(tokens, 1, trace).into_vec()
    }

    /// Summaries of `count` windows stacked row-wise in `tokens`, one row
    /// each. Every summary equals what [`Self::encode_window`] gives for its
    /// window alone.
    pub fn encode_windows(&self, tokens: &Matrix, count: usize) -> Matrix {
        self.encode_stacked(tokens, count, |_| {})
    }

    fn encode_stacked(&self, tokens: &Matrix, count: usize, mut trace: impl FnMut((usize, usize))) -> Matrix {
        assert_eq!(
            tokens.shape(),
            (count * self.window, self.history_dim),
            "encode_window: expected {count} windows of {}x{}",
            self.window,
            self.history_dim
        );
        let mut x = tokens.clone();
        trace((x.rows() / count, x.cols()));
        for s in 0..self.stages.len() {
            x = self.stages[s].msa.forward_grouped(&x, None, count);
            x = self.mtsm_reduce_grouped(s, &x, count);
            trace((x.rows() / count, x.cols()));
        }
        let n = x.rows() / count;
        let pooled: Vec<Vec<f32>> = (0..count).map(|g| mean_pool_rows(&x.row_range(g * n, n))).collect();
        Matrix::from_rows(&pooled)
    }

    /// Global self-attention over the bank rows; no masks, no positions.
    pub fn global_bank_attention(&self, bank: &CompressedBank) -> CompressedBank {
        CompressedBank { summaries: self.global_attention_stacked(&bank.summaries, 1), valid: bank.valid.clone() }
    }

    /// Global attention over `count` banks stacked row-wise, each attending
    /// only its own rows.
    pub fn global_attention_stacked(&self, banks: &Matrix, count: usize) -> Matrix {
        let mut x = banks.clone();
        for layer in &self.global {
            x = layer.forward_grouped(&x, None, count);
        }
        x
    }
}
