//! All model parts assembled from one weight store.

use alloc::vec::Vec;

use crate::cascade::{CascadeInput, CascadeRefiner};
use crate::config::ModelConfig;
use crate::decoder::HistoryDecoder;
use crate::error::ModelError;
use crate::history::{CompressedBank, HistoryEncoder};
use crate::tensor::{AttentionMask, Matrix};
use crate::trend::{Classifier, ProbabilitySequence, TrendEncoder};
use crate::weights::WeightStore;

/// Coarse classifier output and its cascade refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub coarse: ProbabilitySequence,
    pub refined: ProbabilitySequence,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    history: HistoryEncoder,
    trend: TrendEncoder,
    classifier: Classifier,
    cascade: CascadeRefiner,
    decoder: Option<HistoryDecoder>,
}

impl Model {
    /// Validates `config` and loads every part; the decoder only when the
    /// config asks for it.
    pub fn from_store(config: &ModelConfig, store: &WeightStore) -> Result<Self, ModelError> {
        let violations = config.validate();
        if !violations.is_empty() {
            return Err(ModelError::InvalidConfig(violations));
        }
        if config.summary_dim() != config.trend_dim {
            return Err(ModelError::Dimension { what: "bank width", expected: config.trend_dim, found: config.summary_dim() });
        }
        Ok(Self {
            config: config.clone(),
            history: HistoryEncoder::load(store, config)?,
            trend: TrendEncoder::load(store, config)?,
            classifier: Classifier::load(store, config)?,
            cascade: CascadeRefiner::load(store, config)?,
            decoder: if config.oas_decoder { Some(HistoryDecoder::load(store, config)?) } else { None },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn history(&self) -> &HistoryEncoder {
        &self.history
    }

    pub fn trend(&self) -> &TrendEncoder {
        &self.trend
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn cascade(&self) -> &CascadeRefiner {
        &self.cascade
    }

    pub fn decoder(&self) -> Option<&HistoryDecoder> {
        self.decoder.as_ref()
    }

    /// Trend rows (projected, oldest first, at most `m_S`) against a globally
    /// attended bank.
    pub fn predict_trend(&self, projected: &Matrix, bank: &CompressedBank) -> Result<Predictions, ModelError> {
        let features = self.trend.encode(projected, bank)?;
        let coarse = self.classifier.classify(&features)?;
        let refined = self.cascade.refine(&CascadeInput::causal(coarse.clone()));
        Ok(Predictions { coarse, refined })
    }

    /// [`Self::predict_trend`] for `count` equal-length trends and banks,
    /// each stacked row-wise.
    pub fn predict_trend_stacked(&self, projected: &Matrix, banks: &Matrix, count: usize) -> Result<Vec<Predictions>, ModelError> {
        let features = self.trend.encode_stacked(projected, banks, count)?;
        let coarse = self.classifier.classify(&features)?;
        let n = coarse.len() / count;
        let refined = self.cascade.refine_grouped(&coarse, &AttentionMask::causal(n), count);
        Ok((0..count)
            .map(|g| Predictions {
                coarse: ProbabilitySequence::new(coarse.probs().row_range(g * n, n)),
                refined: ProbabilitySequence::new(refined.probs().row_range(g * n, n)),
            })
            .collect())
    }

    /// Per-history-frame predictions through the decoder, refined one
    /// history window at a time.
    pub fn predict_history(&self, bank: &CompressedBank) -> Result<Predictions, ModelError> {
        let decoder = self.decoder.as_ref().ok_or(ModelError::NoDecoder)?;
        let coarse = self.classifier.classify(&decoder.decode(bank)?)?;
        let refined = self.cascade.refine_windowed(&coarse, self.config.window_size());
        Ok(Predictions { coarse, refined })
    }

    /// Front-pads `rows` to `m_S` by repeating the earliest one.
    pub fn pad_trend(&self, rows: &[Vec<f32>]) -> Matrix {
        let m = self.config.trend_len;
        assert!(!rows.is_empty() && rows.len() <= m, "pad_trend: {} rows for {m} slots", rows.len());
        let pad = m - rows.len();
        let all: Vec<&[f32]> = (0..m).map(|i| rows[i.saturating_sub(pad)].as_slice()).collect();
        Matrix::from_rows(&all)
    }
}
