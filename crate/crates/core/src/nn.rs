//! Layer building blocks assembled from a [`WeightStore`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::ModelError;
use crate::tensor::{
    layer_normalize, matmul_packed, matmul_transposed, relu_in_place, softmax_rows_in_place, AttentionMask, Matrix,
    PackedMatrix,
};
use crate::weights::WeightStore;

pub const LAYER_NORM_EPS: f32 = 1e-5;

/// `y = x · W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    weight: PackedMatrix,
    bias: Option<Vec<f32>>,
}

impl Linear {
    pub fn load(store: &WeightStore, prefix: &str, fan_in: usize, fan_out: usize) -> Result<Self, ModelError> {
        let w = store.expect(&format!("{prefix}.weight"), &[fan_in, fan_out])?;
        let b = store.expect(&format!("{prefix}.bias"), &[fan_out])?;
        Ok(Self { weight: PackedMatrix::pack(fan_in, fan_out, w.data()), bias: Some(b.data().to_vec()) })
    }

    /// Bias-free map from a weight stored `out × in`, applied as `W · x`.
    pub fn load_projection(store: &WeightStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self, ModelError> {
        let w = store.expect(name, &[fan_out, fan_in])?;
        Ok(Self { weight: PackedMatrix::pack_transposed(fan_out, fan_in, w.data()), bias: None })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = matmul_packed(x, &self.weight);
        if let Some(b) = &self.bias {
            y.add_row_vector(b);
        }
        y
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gain: Vec<f32>,
    bias: Vec<f32>,
}

impl LayerNorm {
    pub fn load(store: &WeightStore, prefix: &str, width: usize) -> Result<Self, ModelError> {
        Ok(Self {
            gain: store.expect(&format!("{prefix}.gain"), &[width])?.data().to_vec(),
            bias: store.expect(&format!("{prefix}.bias"), &[width])?.data().to_vec(),
        })
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        layer_normalize(x, &self.gain, &self.bias, LAYER_NORM_EPS)
    }
}

/// Pre-norm multi-head attention sublayer with per-head query/key/value maps
/// and an output projection. Head maps are fused column-wise so each head's
/// columns are computed exactly as a separate product would compute them.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    norm: LayerNorm,
    wq: PackedMatrix,
    wk: PackedMatrix,
    wv: PackedMatrix,
    out: Linear,
    heads: usize,
    head_dim: usize,
}

impl MultiHeadAttention {
    pub fn load(store: &WeightStore, prefix: &str, norm: &str, width: usize, heads: usize) -> Result<Self, ModelError> {
        let head_dim = width / heads;
        let fuse = |w: &str| -> Result<PackedMatrix, ModelError> {
            let parts = (0..heads)
                .map(|h| store.expect(&format!("{prefix}.head{h}.{w}"), &[width, head_dim]).map(|t| t.to_matrix()))
                .collect::<Result<Vec<_>, _>>()?;
            let fused = Matrix::hstack(&parts);
            Ok(PackedMatrix::pack(width, heads * head_dim, fused.data()))
        };
        Ok(Self {
            norm: LayerNorm::load(store, &format!("{prefix}.{norm}"), width)?,
            wq: fuse("wq")?,
            wk: fuse("wk")?,
            wv: fuse("wv")?,
            out: Linear::load(store, &format!("{prefix}.out"), width, width)?,
            heads,
            head_dim,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// `x + MSA(LN(x))` with keys and values from `LN(x)` itself. `x` holds
    /// `groups` equal row groups that attend only within themselves, each
    /// under `mask`.
    pub fn self_attend(&self, x: &Matrix, mask: Option<&AttentionMask>, groups: usize) -> Matrix {
        let normed = self.norm.forward(x);
        let mut y = self.attend(&normed, &normed, mask, groups);
        y.add_assign(x);
        y
    }

    /// `x + MSA(LN(x), memory)`: queries from the normalized input, keys and
    /// values from `memory` as given. Query group `g` sees memory group `g`.
    pub fn cross_attend(&self, x: &Matrix, memory: &Matrix, groups: usize) -> Matrix {
        let normed = self.norm.forward(x);
        let mut y = self.attend(&normed, memory, None, groups);
        y.add_assign(x);
        y
    }

    /// Attention proper: per head `softmax(Q Kᵀ / sqrt(d_k)) V`, heads
    /// concatenated and passed through the output projection.
    pub fn attend(&self, queries: &Matrix, memory: &Matrix, mask: Option<&AttentionMask>, groups: usize) -> Matrix {
        assert!(
            groups > 0 && queries.rows() % groups == 0 && memory.rows() % groups == 0,
            "attend: {} queries and {} keys in {groups} groups",
            queries.rows(),
            memory.rows()
        );
        let (nq, nk) = (queries.rows() / groups, memory.rows() / groups);
        if let Some(m) = mask {
            assert_eq!((m.rows(), m.cols()), (nq, nk), "attend: mask shape");
        }
        let q = matmul_packed(queries, &self.wq);
        let k = matmul_packed(memory, &self.wk);
        let v = matmul_packed(memory, &self.wv);
        let scale = libm::sqrtf(self.head_dim as f32);
        let mut concat = Matrix::zeros(queries.rows(), self.heads * self.head_dim);
        let mut mixed = Matrix::zeros(nq, self.heads * self.head_dim);
        for g in 0..groups {
            let (qg, kg, vg) = (q.row_range(g * nq, nq), k.row_range(g * nk, nk), v.row_range(g * nk, nk));
            for h in 0..self.heads {
                let c0 = h * self.head_dim;
                let (qh, kh, vh) =
                    (qg.columns(c0, self.head_dim), kg.columns(c0, self.head_dim), vg.columns(c0, self.head_dim));
                let mut scores = matmul_transposed(&qh, &kh);
                softmax_rows_in_place(&mut scores, mask, scale);
                weighted_rows_into(&scores, &vh, &mut mixed, c0);
            }
            for i in 0..nq {
                concat.row_mut(g * nq + i).copy_from_slice(mixed.row(i));
            }
        }
        self.out.forward(&concat)
    }
}

/// `out[i, offset..offset+width] = Σ_j weights[i, j] · values[j]`, summing
/// `j` in index order in f64 and skipping exactly-zero weights (masked keys).
/// Products of two f32 values are exact in f64, so the rounded result barely
/// depends on key order.
pub(crate) fn weighted_rows_into(weights: &Matrix, values: &Matrix, out: &mut Matrix, offset: usize) {
    assert_eq!(weights.cols(), values.rows(), "weighted_rows: key count");
    let width = values.cols();
    let mut acc = vec![0f64; width];
    for i in 0..weights.rows() {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (j, &w) in weights.row(i).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let w = w as f64;
            for (a, &v) in acc.iter_mut().zip(values.row(j)) {
                *a += w * v as f64;
            }
        }
        for (o, a) in out.row_mut(i)[offset..offset + width].iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    }
}

/// Pre-norm position-wise MLP sublayer: `x + W2 · relu(W1 · LN(x))`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    norm: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl FeedForward {
    pub fn load(store: &WeightStore, prefix: &str, width: usize, hidden: usize) -> Result<Self, ModelError> {
        Ok(Self {
            norm: LayerNorm::load(store, &format!("{prefix}.norm2"), width)?,
            fc1: Linear::load(store, &format!("{prefix}.fc1"), width, hidden)?,
            fc2: Linear::load(store, &format!("{prefix}.fc2"), hidden, width)?,
        })
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut h = self.fc1.forward(&self.norm.forward(x));
        relu_in_place(&mut h);
        let mut y = self.fc2.forward(&h);
        y.add_assign(x);
        y
    }
}

/// One transformer encoder layer: attention sublayer then MLP sublayer.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    attn: MultiHeadAttention,
    ffn: FeedForward,
}

impl AttentionBlock {
    pub fn load(store: &WeightStore, prefix: &str, width: usize, heads: usize, ffn: usize) -> Result<Self, ModelError> {
        Ok(Self {
            attn: MultiHeadAttention::load(store, prefix, "norm1", width, heads)?,
            ffn: FeedForward::load(store, prefix, width, width * ffn)?,
        })
    }

    pub fn forward(&self, x: &Matrix, mask: Option<&AttentionMask>) -> Matrix {
        self.forward_grouped(x, mask, 1)
    }

    /// As [`Self::forward`] over `groups` stacked, mutually invisible row groups.
    pub fn forward_grouped(&self, x: &Matrix, mask: Option<&AttentionMask>, groups: usize) -> Matrix {
        self.ffn.forward(&self.attn.self_attend(x, mask, groups))
    }
}

/// Multi-head token slimming: each head projects the tokens, scores them
/// through a shared ReLU bottleneck and a learned token-query matrix, and
/// forms `tokens_out` convex combinations of its projected tokens.
#[derive(Clone, Debug)]
pub struct TokenSlimmer {
    wh: PackedMatrix,
    wc: PackedMatrix,
    wr: Matrix,
    out: Linear,
    heads: usize,
    head_dim: usize,
}

impl TokenSlimmer {
    pub fn load(
        store: &WeightStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        heads: usize,
        tokens_out: usize,
    ) -> Result<Self, ModelError> {
        let head_dim = c_out / heads;
        let bottleneck = c_in / 4;
        let parts = (0..heads)
            .map(|h| store.expect(&format!("{prefix}.head{h}.wh"), &[c_in, head_dim]).map(|t| t.to_matrix()))
            .collect::<Result<Vec<_>, _>>()?;
        let wh = Matrix::hstack(&parts);
        let wc = store.expect(&format!("{prefix}.wc"), &[head_dim, bottleneck])?;
        Ok(Self {
            wh: PackedMatrix::pack(c_in, heads * head_dim, wh.data()),
            wc: PackedMatrix::pack(head_dim, bottleneck, wc.data()),
            wr: store.expect(&format!("{prefix}.wr"), &[tokens_out, bottleneck])?.to_matrix(),
            out: Linear::load(store, &format!("{prefix}.out"), c_out, c_out)?,
            heads,
            head_dim,
        })
    }

    pub fn tokens_out(&self) -> usize {
        self.wr.rows()
    }

    /// Per-head projected tokens `T^i` and slimming matrices `A^i`
    /// (`tokens_out × n`, rows on the simplex).
    pub fn head_terms(&self, x: &Matrix) -> Vec<(Matrix, Matrix)> {
        let t = matmul_packed(x, &self.wh);
        (0..self.heads)
            .map(|h| {
                let th = t.columns(h * self.head_dim, self.head_dim);
                let a = self.slimming(&th);
                (th, a)
            })
            .collect()
    }

    fn slimming(&self, th: &Matrix) -> Matrix {
        let mut g = matmul_packed(th, &self.wc);
        relu_in_place(&mut g);
        let mut a = matmul_transposed(&self.wr, &g);
        softmax_rows_in_place(&mut a, None, 1.0);
        a
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        self.forward_grouped(x, 1)
    }

    /// Slims each of `groups` stacked token sets on its own; output groups
    /// of `tokens_out` rows follow input order.
    pub fn forward_grouped(&self, x: &Matrix, groups: usize) -> Matrix {
        assert!(groups > 0 && x.rows() % groups == 0, "slimmer: {} rows in {groups} groups", x.rows());
        let n = x.rows() / groups;
        let out_rows = self.tokens_out();
        let t = matmul_packed(x, &self.wh);
        let mut concat = Matrix::zeros(groups * out_rows, self.heads * self.head_dim);
        let mut mixed = Matrix::zeros(out_rows, self.heads * self.head_dim);
        for h in 0..self.heads {
            let th_all = t.columns(h * self.head_dim, self.head_dim);
            let mut g_all = matmul_packed(&th_all, &self.wc);
            relu_in_place(&mut g_all);
            for g in 0..groups {
                let mut a = matmul_transposed(&self.wr, &g_all.row_range(g * n, n));
                softmax_rows_in_place(&mut a, None, 1.0);
                weighted_rows_into(&a, &th_all.row_range(g * n, n), &mut mixed, 0);
                for i in 0..out_rows {
                    concat.row_mut(g * out_rows + i)[h * self.head_dim..(h + 1) * self.head_dim]
                        .copy_from_slice(&mixed.row(i)[..self.head_dim]);
                }
            }
        }
        self.out.forward(&concat)
    }
}
