//! Current-window encoder: causal self-attention over the most recent frames
//! at full width, cross-attention into the history bank, and the shared
//! linear action classifier.

use alloc::format;
use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::error::ModelError;
use crate::history::{CompressedBank, HistoryEncoder, HistoryWindow};
use crate::nn::{AttentionBlock, LayerNorm, Linear, MultiHeadAttention};
use crate::tensor::{masked_row_softmax, sinusoidal_positions, AttentionMask, Matrix};
use crate::weights::WeightStore;

/// `m_S × d_S` trend tokens (projected, positions added).
#[derive(Clone, Debug, PartialEq)]
pub struct TrendWindow {
    tokens: Matrix,
}

impl TrendWindow {
    pub fn new(tokens: Matrix) -> Self {
        Self { tokens }
    }

    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }

    pub fn into_tokens(self) -> Matrix {
        self.tokens
    }
}

/// Per-frame class distributions, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilitySequence {
    probs: Matrix,
}

impl ProbabilitySequence {
    /// Wraps rows the caller guarantees to be distributions.
    pub fn new(probs: Matrix) -> Self {
        Self { probs }
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.rows() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.probs.row(i)
    }

    pub fn last(&self) -> &[f32] {
        self.probs.row(self.probs.rows() - 1)
    }

    /// Every row nonnegative and summing to one within `tol`.
    pub fn is_distribution(&self, tol: f32) -> bool {
        (0..self.len()).all(|i| {
            let r = self.row(i);
            r.iter().all(|&p| p >= 0.0 && p.is_finite()) && (r.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs() <= tol as f64
        })
    }
}

#[derive(Clone, Debug)]
struct CrossModule {
    self_attn: MultiHeadAttention,
    cross_attn: MultiHeadAttention,
}

#[derive(Clone, Debug)]
pub struct TrendEncoder {
    proj: Linear,
    positions: Matrix,
    causal: Vec<AttentionBlock>,
    cross: Vec<CrossModule>,
    norm_out: LayerNorm,
    input_dim: usize,
    width: usize,
}

impl TrendEncoder {
    pub(crate) fn load(store: &WeightStore, c: &ModelConfig) -> Result<Self, ModelError> {
        let ds = c.trend_dim;
        let causal = (0..c.trend_sa_layers)
            .map(|i| AttentionBlock::load(store, &format!("cwe.causal{i}"), ds, c.msa_heads, c.ffn_expansion))
            .collect::<Result<_, _>>()?;
        let cross = (0..c.trend_ca_modules)
            .map(|i| {
                Ok(CrossModule {
                    self_attn: MultiHeadAttention::load(store, &format!("cwe.cross{i}.self"), "norm1", ds, c.msa_heads)?,
                    cross_attn: MultiHeadAttention::load(store, &format!("cwe.cross{i}.cross"), "norm1", ds, c.msa_heads)?,
                })
            })
            .collect::<Result<_, ModelError>>()?;
        Ok(Self {
            proj: Linear::load_projection(store, "cwe.proj_trend", c.input_dim, ds)?,
            positions: sinusoidal_positions(c.trend_len, ds),
            causal,
            cross,
            norm_out: LayerNorm::load(store, "cwe.norm_out", ds)?,
            input_dim: c.input_dim,
            width: ds,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn trend_len(&self) -> usize {
        self.positions.rows()
    }

    /// `e = W_S · x`.
    pub fn project_trend(&self, x: &[f32]) -> Result<Vec<f32>, ModelError> {
        if x.len() != self.input_dim {
            return Err(ModelError::Dimension { what: "trend feature", expected: self.input_dim, found: x.len() });
        }
        Ok(self.proj.forward(&Matrix::from_vec(1, x.len(), x.to_vec())).into_vec())
    }

    pub fn project_trend_rows(&self, x: &Matrix) -> Result<Matrix, ModelError> {
        if x.cols() != self.input_dim {
            return Err(ModelError::Dimension { what: "trend feature", expected: self.input_dim, found: x.cols() });
        }
        Ok(self.proj.forward(x))
    }

    /// Adds positions `0..n` to `n ≤ m_S` projected rows.
    pub fn embed(&self, projected: &Matrix) -> TrendWindow {
        self.embed_stacked(projected, 1)
    }

    fn embed_stacked(&self, projected: &Matrix, count: usize) -> TrendWindow {
        let n = projected.rows() / count;
        assert!(n * count == projected.rows() && n <= self.positions.rows(), "embed: more rows than trend positions");
        assert_eq!(projected.cols(), self.width, "embed: width");
        let mut t = projected.clone();
        for g in 0..count {
            for i in 0..n {
                for (v, p) in t.row_mut(g * n + i).iter_mut().zip(self.positions.row(i)) {
                    *v += p;
                }
            }
        }
        TrendWindow { tokens: t }
    }

    /// The stack of causal residual self-attention layers.
    pub fn causal_self_attention(&self, trend: &TrendWindow) -> TrendWindow {
        self.causal_stacked(trend, 1)
    }

    fn causal_stacked(&self, trend: &TrendWindow, count: usize) -> TrendWindow {
        let mask = AttentionMask::causal(trend.tokens.rows() / count);
        let mut x = trend.tokens.clone();
        for layer in &self.causal {
            x = layer.forward_grouped(&x, Some(&mask), count);
        }
        TrendWindow { tokens: x }
    }

    /// Cross-attention modules: each is a causal self-attention sublayer
    /// followed by attention from the trend into the bank rows.
    pub fn cross_attend_bank(&self, trend: &TrendWindow, bank: &CompressedBank) -> Result<TrendWindow, ModelError> {
        self.cross_stacked(trend, bank.summaries(), 1)
    }

    fn cross_stacked(&self, trend: &TrendWindow, banks: &Matrix, count: usize) -> Result<TrendWindow, ModelError> {
        if banks.cols() != self.width {
            return Err(ModelError::Dimension { what: "bank width", expected: self.width, found: banks.cols() });
        }
        let mask = AttentionMask::causal(trend.tokens.rows() / count);
        let mut x = trend.tokens.clone();
        for m in &self.cross {
            x = m.self_attn.self_attend(&x, Some(&mask), count);
            x = m.cross_attn.cross_attend(&x, banks, count);
        }
        Ok(TrendWindow { tokens: x })
    }

    /// Final normalization ahead of the classifier.
    pub fn features(&self, trend: &TrendWindow) -> Matrix {
        self.norm_out.forward(&trend.tokens)
    }

    /// Projected rows through positions, causal layers, cross-attention and
    /// the output norm.
    pub fn encode(&self, projected: &Matrix, bank: &CompressedBank) -> Result<Matrix, ModelError> {
        self.encode_stacked(projected, bank.summaries(), 1)
    }

    /// [`Self::encode`] for `count` trends stacked row-wise against `count`
    /// globally attended banks stacked the same way.
    pub fn encode_stacked(&self, projected: &Matrix, banks: &Matrix, count: usize) -> Result<Matrix, ModelError> {
        if count == 0 || projected.rows() % count != 0 || banks.rows() % count != 0 {
            return Err(ModelError::Dimension { what: "stacked trend groups", expected: count, found: projected.rows() });
        }
        let t = self.embed_stacked(projected, count);
        let t = self.causal_stacked(&t, count);
        let t = self.cross_stacked(&t, banks, count)?;
        Ok(self.features(&t))
    }
}

/// Linear action classifier shared by the detection and segmentation branches.
#[derive(Clone, Debug)]
pub struct Classifier {
    linear: Linear,
}

impl Classifier {
    pub(crate) fn load(store: &WeightStore, c: &ModelConfig) -> Result<Self, ModelError> {
        Ok(Self { linear: Linear::load(store, "cls", c.trend_dim, c.num_actions)? })
    }

    pub fn num_classes(&self) -> usize {
        self.linear.out_dim()
    }

    /// Row softmax of `features · W_φ + b_φ`.
    pub fn classify(&self, features: &Matrix) -> Result<ProbabilitySequence, ModelError> {
        if features.cols() != self.linear.in_dim() {
            return Err(ModelError::Dimension { what: "classifier input", expected: self.linear.in_dim(), found: features.cols() });
        }
        Ok(ProbabilitySequence::new(masked_row_softmax(&self.linear.forward(features), None, 1.0)))
    }
}

/// Bank built from a temporally ordered history (`m_L × d_L`, oldest first)
/// whose window boundaries sit `shift` frames early, wrapping circularly:
/// window `n` holds ordered frames `n·w - shift .. (n+1)·w - shift` (mod m_L).
/// A streaming engine whose write cursor is `a·w + shift` partitions its ring
/// this way, up to a rotation of the bank rows by `a`.
pub fn build_shifted_banks(encoder: &HistoryEncoder, history: &Matrix, shift: usize) -> Result<CompressedBank, ModelError> {
    let w = encoder.window_size();
    if shift >= w {
        return Err(ModelError::Shift { shift, window: w });
    }
    let len = history.rows();
    if len % w != 0 || len == 0 {
        return Err(ModelError::Dimension { what: "ordered history length", expected: w * (len / w).max(1), found: len });
    }
    let windows = len / w;
    let mut bank = CompressedBank::empty(windows, encoder.summary_dim());
    for n in 0..windows {
        let rows: Vec<&[f32]> = (0..w).map(|i| history.row((n * w + i + len - shift) % len)).collect();
        let summary = encoder.encode_window(&HistoryWindow::new(Matrix::from_rows(&rows)));
        bank.set(n, &summary);
    }
    Ok(encoder.global_bank_attention(&bank))
}
