//! Window-based cascade refinement in probability space.
//!
//! Each cascade stage runs a small causal self-attention stack directly over
//! the `N_a`-dimensional probability rows, maps the result through a linear
//! head, and adds it to its input as a shortcut. The sum is pulled back onto
//! the simplex by clamping at [`PROB_FLOOR`] and rescaling each row to the
//! mass its input row had, which makes an all-zero head an exact identity.

use alloc::format;
use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::error::ModelError;
use crate::nn::{AttentionBlock, Linear};
use crate::tensor::{softmax_rows_in_place, AttentionMask, Matrix};
use crate::trend::ProbabilitySequence;
use crate::weights::WeightStore;

pub const PROB_FLOOR: f32 = 1e-8;

/// Coarse probabilities plus the causal mask they are refined under.
#[derive(Clone, Debug)]
pub struct CascadeInput {
    pub coarse: ProbabilitySequence,
    pub mask: AttentionMask,
}

impl CascadeInput {
    pub fn causal(coarse: ProbabilitySequence) -> Self {
        let mask = AttentionMask::causal(coarse.len());
        Self { coarse, mask }
    }
}

#[derive(Clone, Debug)]
struct CascadeStage {
    blocks: Vec<AttentionBlock>,
    head: Linear,
}

#[derive(Clone, Debug)]
pub struct CascadeRefiner {
    stages: Vec<CascadeStage>,
    softmax: bool,
    classes: usize,
}

impl CascadeRefiner {
    pub(crate) fn load(store: &WeightStore, c: &ModelConfig) -> Result<Self, ModelError> {
        let na = c.num_actions;
        let stages = (0..c.cascade_stages)
            .map(|k| {
                let blocks = (0..c.cascade_sa_layers)
                    .map(|i| AttentionBlock::load(store, &format!("wcr.stage{k}.block{i}"), na, c.cascade_heads(), c.ffn_expansion))
                    .collect::<Result<_, _>>()?;
                Ok(CascadeStage { blocks, head: Linear::load(store, &format!("wcr.stage{k}.head"), na, na)? })
            })
            .collect::<Result<_, ModelError>>()?;
        Ok(Self { stages, softmax: c.cascade_softmax, classes: na })
    }

    /// Runs every cascade stage over `input.coarse`.
    pub fn refine(&self, input: &CascadeInput) -> ProbabilitySequence {
        self.refine_grouped(&input.coarse, &input.mask, 1)
    }

    /// Refines `groups` stacked sequences independently, each under `mask`.
    pub fn refine_grouped(&self, coarse: &ProbabilitySequence, mask: &AttentionMask, groups: usize) -> ProbabilitySequence {
        let coarse = coarse.probs();
        assert_eq!(coarse.cols(), self.classes, "refine: class count");
        assert!(groups > 0 && coarse.rows() == groups * mask.rows(), "refine: mask shape");
        let mut p = coarse.clone();
        for stage in &self.stages {
            let mut h = p.clone();
            for block in &stage.blocks {
                h = block.forward_grouped(&h, Some(mask), groups);
            }
            let residual = stage.head.forward(&h);
            let mut out = p.clone();
            out.add_assign(&residual);
            if self.softmax {
                softmax_rows_in_place(&mut out, None, 1.0);
            } else {
                restore_mass(&mut out, &p);
            }
            p = out;
        }
        ProbabilitySequence::new(p)
    }

    /// Refines each history window on its own under a `w × w` causal mask,
    /// with the same parameters as the trend path.
    pub fn refine_history_windows(&self, windows: &[ProbabilitySequence]) -> Vec<ProbabilitySequence> {
        windows.iter().map(|win| self.refine(&CascadeInput::causal(win.clone()))).collect()
    }

    /// Splits an `N_w·w`-row sequence into windows of `w` and refines each
    /// on its own, keeping row order.
    pub fn refine_windowed(&self, seq: &ProbabilitySequence, window: usize) -> ProbabilitySequence {
        assert!(window > 0 && seq.len() % window == 0, "refine_windowed: {} rows by window {window}", seq.len());
        self.refine_grouped(seq, &AttentionMask::causal(window), seq.len() / window)
    }
}

/// Clamps `out` at the floor and rescales each row to the mass of the
/// matching `reference` row.
fn restore_mass(out: &mut Matrix, reference: &Matrix) {
    for i in 0..out.rows() {
        let target: f64 = reference.row(i).iter().map(|&v| v as f64).sum();
        let row = out.row_mut(i);
        for v in row.iter_mut() {
            *v = v.max(PROB_FLOOR);
        }
        let mass: f64 = row.iter().map(|&v| v as f64).sum();
        let ratio = target / mass;
        for v in row.iter_mut() {
            *v = (*v as f64 * ratio) as f32;
        }
    }
}
