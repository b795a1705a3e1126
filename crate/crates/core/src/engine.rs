//! Streaming inference over a circular history ring.
//!
//! The ring has `m_L` slots split into `N_w` fixed windows; window `n` owns
//! slots `n·w .. (n+1)·w`. A frame leaving the trend queue is re-projected
//! from its raw feature into the slot under the write cursor, so exactly one
//! window changes per step and only that window's summary is recomputed.
//! [`batch_forward`] recomputes everything from a snapshot and is the oracle
//! the cached path is checked against. [`SlidingBaseline`] re-encodes every
//! window of a temporally ordered queue each step, for cost comparison.

use alloc::collections::VecDeque;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::ModelError;
use crate::history::{CompressedBank, HistoryWindow};
use crate::model::{Model, Predictions};
use crate::tensor::Matrix;

/// Monotone work counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub window_encodes: u64,
    pub bank_attentions: u64,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    /// Refined distribution for the newest frame.
    pub refined: Vec<f32>,
    /// Classifier distribution for the newest frame.
    pub coarse: Vec<f32>,
    pub counters: Counters,
}

/// The last `m_S` raw features and their trend projections.
#[derive(Clone, Debug)]
struct TrendQueue {
    raw: VecDeque<Vec<f32>>,
    projected: VecDeque<Vec<f32>>,
    capacity: usize,
}

impl TrendQueue {
    fn new(capacity: usize) -> Self {
        Self { raw: VecDeque::with_capacity(capacity + 1), projected: VecDeque::with_capacity(capacity + 1), capacity }
    }

    /// Appends a frame and returns the raw feature it pushed out, if any.
    fn push(&mut self, model: &Model, x: &[f32]) -> Result<Option<Vec<f32>>, ModelError> {
        let e = model.trend().project_trend(x)?;
        self.raw.push_back(x.to_vec());
        self.projected.push_back(e);
        if self.raw.len() > self.capacity {
            self.projected.pop_front();
            Ok(self.raw.pop_front())
        } else {
            Ok(None)
        }
    }

    fn padded(&self, model: &Model) -> Matrix {
        let rows: Vec<Vec<f32>> = self.projected.iter().cloned().collect();
        model.pad_trend(&rows)
    }

    fn raw_matrix(&self) -> Matrix {
        let rows: Vec<&[f32]> = self.raw.iter().map(|r| r.as_slice()).collect();
        Matrix::from_rows(&rows)
    }
}

fn last_rows(p: &Predictions, counters: Counters) -> StepResult {
    StepResult { refined: p.refined.last().to_vec(), coarse: p.coarse.last().to_vec(), counters }
}

fn window_of(slots: &Matrix, n: usize, w: usize) -> HistoryWindow {
    HistoryWindow::new(slots.row_range(n * w, w))
}

/// A coherent copy of the ring: slot contents, raw trend features (oldest
/// first), write cursor and the cached per-window summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct RingSnapshot {
    pub slots: Matrix,
    pub trend: Matrix,
    pub cursor: usize,
    pub summaries: Matrix,
}

impl RingSnapshot {
    /// Relabels slots by `k` whole windows: slot `p` moves to `p + k·w`.
    pub fn rotated(&self, k: usize) -> Self {
        let (slots_n, windows) = (self.slots.rows(), self.summaries.rows());
        let w = slots_n / windows;
        let shift = (k % windows) * w;
        let mut slots = Matrix::zeros(slots_n, self.slots.cols());
        for p in 0..slots_n {
            slots.row_mut((p + shift) % slots_n).copy_from_slice(self.slots.row(p));
        }
        let bank = CompressedBank::from_summaries(self.summaries.clone()).rotated(k % windows);
        Self {
            slots,
            trend: self.trend.clone(),
            cursor: (self.cursor + shift) % slots_n,
            summaries: bank.summaries().clone(),
        }
    }
}

/// Output of a full recomputation.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutput {
    /// Predictions for every trend position.
    pub trend: Predictions,
    /// Per-history-frame predictions, when requested and a decoder exists.
    pub history: Option<Predictions>,
    /// Globally attended bank the trend saw.
    pub bank: CompressedBank,
    pub window_encodes: u64,
}

/// Recomputes every window summary from the snapshot's slots, re-projects
/// the trend from raw features, and runs the downstream pipeline.
pub fn batch_forward(model: &Model, snapshot: &RingSnapshot, with_history: bool) -> Result<BatchOutput, ModelError> {
    Ok(batch_forward_many(model, core::slice::from_ref(snapshot), with_history)?.remove(0))
}

/// [`batch_forward`] over several snapshots at once. Each output equals the
/// single-snapshot result; stacking only lets the products run taller.
pub fn batch_forward_many(model: &Model, snapshots: &[RingSnapshot], with_history: bool) -> Result<Vec<BatchOutput>, ModelError> {
    let c = model.config();
    let count = snapshots.len();
    if count == 0 {
        return Ok(Vec::new());
    }
    for s in snapshots {
        if s.slots.shape() != (c.history_len, c.history_dim) {
            return Err(ModelError::Snapshot("slot matrix shape"));
        }
        if s.trend.rows() == 0 || s.trend.rows() > c.trend_len {
            return Err(ModelError::Snapshot("trend length"));
        }
        if s.cursor >= c.history_len {
            return Err(ModelError::Snapshot("cursor out of range"));
        }
    }
    let slots: Vec<Matrix> = snapshots.iter().map(|s| s.slots.clone()).collect();
    let summaries = model.history().encode_windows(&Matrix::vstack(&slots), count * c.num_windows);
    let banks = model.history().global_attention_stacked(&summaries, count);

    let raw: Vec<Matrix> = snapshots.iter().map(|s| s.trend.clone()).collect();
    let projected = model.trend().project_trend_rows(&Matrix::vstack(&raw))?;
    let mut padded = Vec::with_capacity(count);
    let mut at = 0;
    for s in snapshots {
        let rows: Vec<Vec<f32>> = (at..at + s.trend.rows()).map(|i| projected.row(i).to_vec()).collect();
        padded.push(model.pad_trend(&rows));
        at += s.trend.rows();
    }
    let trends = model.predict_trend_stacked(&Matrix::vstack(&padded), &banks, count)?;

    let nw = c.num_windows;
    trends
        .into_iter()
        .enumerate()
        .map(|(g, trend)| {
            let bank = CompressedBank::from_summaries(banks.row_range(g * nw, nw));
            let history = if with_history { Some(model.predict_history(&bank)?) } else { None };
            Ok(BatchOutput { trend, history, bank, window_encodes: nw as u64 })
        })
        .collect()
}

/// Circular-window streaming engine.
#[derive(Clone, Debug)]
pub struct Engine {
    model: Arc<Model>,
    slots: Matrix,
    trend: TrendQueue,
    cursor: usize,
    summaries: CompressedBank,
    dirty: Vec<bool>,
    counters: Counters,
}

impl Engine {
    /// Zero history, empty trend; every window summary is computed once
    /// from the zero padding.
    pub fn new(model: Arc<Model>) -> Self {
        let c = model.config().clone();
        let mut engine = Self {
            slots: Matrix::zeros(c.history_len, c.history_dim),
            trend: TrendQueue::new(c.trend_len),
            cursor: 0,
            summaries: CompressedBank::empty(c.num_windows, c.summary_dim()),
            dirty: vec![true; c.num_windows],
            counters: Counters::default(),
            model,
        };
        engine.refresh_dirty();
        engine
    }

    /// Rebuilds an engine from a snapshot, trusting its cached summaries.
    pub fn from_snapshot(model: Arc<Model>, snapshot: &RingSnapshot) -> Result<Self, ModelError> {
        let c = model.config().clone();
        if snapshot.slots.shape() != (c.history_len, c.history_dim) {
            return Err(ModelError::Snapshot("slot matrix shape"));
        }
        if snapshot.summaries.shape() != (c.num_windows, c.summary_dim()) {
            return Err(ModelError::Snapshot("summary matrix shape"));
        }
        if snapshot.trend.rows() > c.trend_len || (snapshot.trend.rows() > 0 && snapshot.trend.cols() != c.input_dim) {
            return Err(ModelError::Snapshot("trend matrix shape"));
        }
        if snapshot.cursor >= c.history_len {
            return Err(ModelError::Snapshot("cursor out of range"));
        }
        let mut trend = TrendQueue::new(c.trend_len);
        for i in 0..snapshot.trend.rows() {
            trend.push(&model, snapshot.trend.row(i))?;
        }
        Ok(Self {
            slots: snapshot.slots.clone(),
            trend,
            cursor: snapshot.cursor,
            summaries: CompressedBank::from_summaries(snapshot.summaries.clone()),
            dirty: vec![false; c.num_windows],
            counters: Counters::default(),
            model,
        })
    }

    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn slots(&self) -> &Matrix {
        &self.slots
    }

    /// Cached per-window summaries, before global attention.
    pub fn summaries(&self) -> &CompressedBank {
        &self.summaries
    }

    pub fn trend_len(&self) -> usize {
        self.trend.raw.len()
    }

    fn refresh_dirty(&mut self) {
        let w = self.model.history().window_size();
        for n in 0..self.dirty.len() {
            if self.dirty[n] {
                let s = self.model.history().encode_window(&window_of(&self.slots, n, w));
                self.summaries.set(n, &s);
                self.dirty[n] = false;
                self.counters.window_encodes += 1;
            }
        }
    }

    /// Consumes one frame and predicts it.
    pub fn step(&mut self, x: &[f32]) -> Result<StepResult, ModelError> {
        let model = Arc::clone(&self.model);
        if let Some(old) = self.trend.push(&model, x)? {
            let e = model.history().project_history(&old)?;
            self.slots.row_mut(self.cursor).copy_from_slice(&e);
            self.dirty[self.cursor / model.history().window_size()] = true;
            self.cursor = (self.cursor + 1) % self.slots.rows();
        }
        self.refresh_dirty();
        let bank = model.history().global_bank_attention(&self.summaries);
        self.counters.bank_attentions += 1;
        let p = model.predict_trend(&self.trend.padded(&model), &bank)?;
        self.counters.steps += 1;
        Ok(last_rows(&p, self.counters))
    }

    pub fn snapshot(&self) -> RingSnapshot {
        RingSnapshot {
            slots: self.slots.clone(),
            trend: self.trend.raw_matrix(),
            cursor: self.cursor,
            summaries: self.summaries.summaries().clone(),
        }
    }

    /// Adds `delta` to every entry of cached summary `window` without
    /// marking it dirty. Debugging aid for fault-injection runs.
    pub fn corrupt_summary(&mut self, window: usize, delta: f32) {
        for v in self.summaries.row_mut(window) {
            *v += delta;
        }
    }

    /// Max-abs gap between each cached summary and a fresh encode of its
    /// window. Does not touch the counters.
    pub fn audit_cache(&self) -> Vec<f32> {
        let w = self.model.history().window_size();
        (0..self.dirty.len())
            .map(|n| {
                let fresh = self.model.history().encode_window(&window_of(&self.slots, n, w));
                fresh
                    .iter()
                    .zip(self.summaries.summaries().row(n))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f32::max)
            })
            .collect()
    }
}

/// Re-encodes every window of a temporally ordered history queue each step.
#[derive(Clone, Debug)]
pub struct SlidingBaseline {
    model: Arc<Model>,
    history: VecDeque<Vec<f32>>,
    trend: TrendQueue,
    counters: Counters,
}

impl SlidingBaseline {
    pub fn new(model: Arc<Model>) -> Self {
        let c = model.config();
        Self {
            history: (0..c.history_len).map(|_| vec![0.0; c.history_dim]).collect(),
            trend: TrendQueue::new(c.trend_len),
            counters: Counters::default(),
            model,
        }
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    /// History rows, oldest first.
    pub fn ordered_history(&self) -> Matrix {
        let rows: Vec<&[f32]> = self.history.iter().map(|r| r.as_slice()).collect();
        Matrix::from_rows(&rows)
    }

    pub fn step(&mut self, x: &[f32]) -> Result<StepResult, ModelError> {
        let model = Arc::clone(&self.model);
        if let Some(old) = self.trend.push(&model, x)? {
            self.history.pop_front();
            self.history.push_back(model.history().project_history(&old)?);
        }
        let windows = model.config().num_windows;
        let summaries = model.history().encode_windows(&self.ordered_history(), windows);
        self.counters.window_encodes += windows as u64;
        let bank = model.history().global_bank_attention(&CompressedBank::from_summaries(summaries));
        self.counters.bank_attentions += 1;
        let p = model.predict_trend(&self.trend.padded(&model), &bank)?;
        self.counters.steps += 1;
        Ok(last_rows(&p, self.counters))
    }
}
