//! Shifted-window history decoder for the segmentation branch.
//!
//! Expands the bank back to one token per history frame. Each stage runs a
//! few shifted-window attention layers, expands the token count with a
//! global token slimmer, and aligns with one more unshifted window layer.
//! A last group of window layers without expansion closes the stack.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::error::ModelError;
use crate::history::CompressedBank;
use crate::nn::{AttentionBlock, LayerNorm, TokenSlimmer};
use crate::tensor::Matrix;
use crate::weights::WeightStore;

/// Rotates `tokens` up by `shift` rows, runs `block` on each group of
/// `window` consecutive rows, and rotates back.
pub fn swin_block(block: &AttentionBlock, tokens: &Matrix, window: usize, shift: usize) -> Matrix {
    let n = tokens.rows();
    assert!(window > 0 && n % window == 0, "swin_block: window {window} does not divide {n} tokens");
    assert!(shift < window, "swin_block: shift {shift} not below window {window}");
    let mut out = Matrix::zeros(n, tokens.cols());
    for g in 0..n / window {
        let rows: Vec<&[f32]> = (0..window).map(|i| tokens.row((g * window + i + shift) % n)).collect();
        let y = block.forward(&Matrix::from_rows(&rows), None);
        for i in 0..window {
            out.row_mut((g * window + i + shift) % n).copy_from_slice(y.row(i));
        }
    }
    out
}

/// Token expansion `n × c` to `(n·k) × c`, every output row a mixture of
/// all input tokens.
pub fn mtsm_expand(slimmer: &TokenSlimmer, tokens: &Matrix, expansion: usize) -> Matrix {
    assert_eq!(
        slimmer.tokens_out(),
        tokens.rows() * expansion,
        "mtsm_expand: {} tokens times {expansion}",
        tokens.rows()
    );
    slimmer.forward(tokens)
}

#[derive(Clone, Debug)]
struct DecoderStage {
    swin: Vec<AttentionBlock>,
    expand: TokenSlimmer,
    expansion: usize,
    align: AttentionBlock,
}

#[derive(Clone, Debug)]
pub struct HistoryDecoder {
    stages: Vec<DecoderStage>,
    last: Vec<AttentionBlock>,
    norm_out: LayerNorm,
    window: usize,
    width: usize,
}

impl HistoryDecoder {
    pub(crate) fn load(store: &WeightStore, c: &ModelConfig) -> Result<Self, ModelError> {
        let ds = c.trend_dim;
        let block = |name: String| AttentionBlock::load(store, &name, ds, c.msa_heads, c.ffn_expansion);
        let tokens = c.decoder_tokens();
        let mut stages = Vec::with_capacity(c.decoder_expansion.len());
        for (s, &r) in c.decoder_expansion.iter().enumerate() {
            stages.push(DecoderStage {
                swin: (0..c.decoder_swin_layers[s]).map(|i| block(format!("swhd.stage{s}.swin{i}"))).collect::<Result<_, _>>()?,
                expand: TokenSlimmer::load(store, &format!("swhd.stage{s}.expand"), ds, ds, c.mtsm_heads, tokens[s] * r)?,
                expansion: r,
                align: block(format!("swhd.stage{s}.align"))?,
            });
        }
        let last_count = *c.decoder_swin_layers.last().unwrap_or(&0);
        Ok(Self {
            stages,
            last: (0..last_count).map(|i| block(format!("swhd.final.swin{i}"))).collect::<Result<_, _>>()?,
            norm_out: LayerNorm::load(store, "swhd.norm_out", ds)?,
            window: c.decoder_window_size,
            width: ds,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    fn swin_stack(&self, blocks: &[AttentionBlock], mut x: Matrix) -> Matrix {
        for (i, b) in blocks.iter().enumerate() {
            let shift = if i % 2 == 1 { self.window / 2 } else { 0 };
            x = swin_block(b, &x, self.window, shift);
        }
        x
    }

    /// Bank rows to `m_L × d_S` per-frame features, with the token count
    /// after each stage passed to `trace`.
    pub fn decode_traced(&self, bank: &CompressedBank, mut trace: impl FnMut(usize)) -> Result<Matrix, ModelError> {
        if bank.width() != self.width {
            return Err(ModelError::Dimension { what: "bank width", expected: self.width, found: bank.width() });
        }
        let mut x = bank.summaries().clone();
        trace(x.rows());
        for st in &self.stages {
            x = self.swin_stack(&st.swin, x);
            x = mtsm_expand(&st.expand, &x, st.expansion);
            x = swin_block(&st.align, &x, self.window, 0);
            trace(x.rows());
        }
        x = self.swin_stack(&self.last, x);
        Ok(self.norm_out.forward(&x))
    }

    pub fn decode(&self, bank: &CompressedBank) -> Result<Matrix, ModelError> {
        self.decode_traced(bank, |_| {})
    }
}
