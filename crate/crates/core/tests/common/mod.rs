#![allow(dead_code)]

use std::sync::Arc;

use cwct_core::{default_config, init_weights, Matrix, Model, ModelConfig, WeightStore};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Tiny but structurally complete config: 4 windows of 4 frames, two
/// halving stages (8 -> 16 -> 32 channels), decoder on.
pub fn small_config() -> ModelConfig {
    let mut c = default_config(12);
    c.history_len = 16;
    c.trend_len = 4;
    c.num_windows = 4;
    c.history_dim = 8;
    c.trend_dim = 32;
    c.stage_reduction = vec![2, 2];
    c.msa_heads = 2;
    c.mtsm_heads = 2;
    c.num_actions = 5;
    c.decoder_expansion = vec![2, 1, 2];
    c.decoder_swin_layers = vec![1, 2, 1, 2];
    c.decoder_window_size = 4;
    c.oas_decoder = true;
    c
}

pub fn small_model(seed: u64) -> (WeightStore, Arc<Model>) {
    let c = small_config();
    let store = init_weights(&c, seed).unwrap();
    let model = Arc::new(Model::from_store(&c, &store).unwrap());
    (store, model)
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut StdRng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0f32..1.0))
}

pub fn random_vec(rng: &mut StdRng, len: usize) -> Vec<f32> {
    (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Rows drawn uniformly-ish from the simplex.
pub fn random_simplex(rng: &mut StdRng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::from_fn(rows, cols, |_, _| rng.random_range(0.01f32..1.0));
    for i in 0..rows {
        let s: f32 = m.row(i).iter().sum();
        m.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    m
}

pub fn max_abs(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

// ---- f64 oracle, transcribed directly from the layer equations ----

pub type M64 = Vec<Vec<f64>>;

pub fn to64(m: &Matrix) -> M64 {
    (0..m.rows()).map(|i| m.row(i).iter().map(|&v| v as f64).collect()).collect()
}

pub fn tensor(store: &WeightStore, name: &str) -> M64 {
    let t = store.get(name).unwrap_or_else(|| panic!("missing {name}"));
    let cols = *t.shape().last().unwrap();
    t.data().chunks(cols).map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

pub fn vector(store: &WeightStore, name: &str) -> Vec<f64> {
    store.get(name).unwrap().data().iter().map(|&v| v as f64).collect()
}

pub fn mm(a: &M64, b: &M64) -> M64 {
    a.iter()
        .map(|row| (0..b[0].len()).map(|j| row.iter().enumerate().map(|(p, &x)| x * b[p][j]).sum()).collect())
        .collect()
}

pub fn transpose(a: &M64) -> M64 {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &M64, b: &M64) -> M64 {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn linear(store: &WeightStore, prefix: &str, x: &M64) -> M64 {
    let w = tensor(store, &format!("{prefix}.weight"));
    let b = vector(store, &format!("{prefix}.bias"));
    mm(x, &w).into_iter().map(|r| r.iter().zip(&b).map(|(v, c)| v + c).collect()).collect()
}

pub fn layer_norm(store: &WeightStore, prefix: &str, x: &M64) -> M64 {
    let g = vector(store, &format!("{prefix}.gain"));
    let b = vector(store, &format!("{prefix}.bias"));
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            r.iter().enumerate().map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * g[j] + b[j]).collect()
        })
        .collect()
}

pub fn softmax_row(r: &[f64], allowed: impl Fn(usize) -> bool) -> Vec<f64> {
    let m = r.iter().enumerate().filter(|(j, _)| allowed(*j)).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = r.iter().enumerate().map(|(j, &v)| if allowed(j) { (v - m).exp() } else { 0.0 }).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Multi-head attention of `q_in` over `kv_in`; heads concatenated then `out`.
pub fn attention(store: &WeightStore, prefix: &str, heads: usize, q_in: &M64, kv_in: &M64, causal: bool) -> M64 {
    let mut concat: M64 = vec![Vec::new(); q_in.len()];
    for h in 0..heads {
        let q = mm(q_in, &tensor(store, &format!("{prefix}.head{h}.wq")));
        let k = mm(kv_in, &tensor(store, &format!("{prefix}.head{h}.wk")));
        let v = mm(kv_in, &tensor(store, &format!("{prefix}.head{h}.wv")));
        let dk = q[0].len() as f64;
        let scores = mm(&q, &transpose(&k));
        for (i, s) in scores.iter().enumerate() {
            let scaled: Vec<f64> = s.iter().map(|x| x / dk.sqrt()).collect();
            let a = softmax_row(&scaled, |j| !causal || j <= i);
            let row: Vec<f64> = (0..v[0].len()).map(|c| a.iter().zip(&v).map(|(w, vr)| w * vr[c]).sum()).collect();
            concat[i].extend(row);
        }
    }
    linear(store, &format!("{prefix}.out"), &concat)
}

pub fn self_attention_sublayer(store: &WeightStore, prefix: &str, heads: usize, x: &M64, causal: bool) -> M64 {
    let n = layer_norm(store, &format!("{prefix}.norm1"), x);
    add(x, &attention(store, prefix, heads, &n, &n, causal))
}

pub fn block(store: &WeightStore, prefix: &str, heads: usize, x: &M64, causal: bool) -> M64 {
    let y = self_attention_sublayer(store, prefix, heads, x, causal);
    let n = layer_norm(store, &format!("{prefix}.norm2"), &y);
    let h: M64 = linear(store, &format!("{prefix}.fc1"), &n).into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
    add(&y, &linear(store, &format!("{prefix}.fc2"), &h))
}

/// Token slimming: per head `T = X W_h`, `A = softmax(W_r relu(T W_c)ᵀ)`,
/// output `f'(concat_i A^i T^i)`.
pub fn slimmer(store: &WeightStore, prefix: &str, heads: usize, x: &M64) -> M64 {
    let wc = tensor(store, &format!("{prefix}.wc"));
    let wr = tensor(store, &format!("{prefix}.wr"));
    let mut concat: M64 = vec![Vec::new(); wr.len()];
    for h in 0..heads {
        let t = mm(x, &tensor(store, &format!("{prefix}.head{h}.wh")));
        let g: M64 = mm(&t, &wc).into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
        let logits = mm(&wr, &transpose(&g));
        for (o, l) in logits.iter().enumerate() {
            let a = softmax_row(l, |_| true);
            concat[o].extend((0..t[0].len()).map(|c| a.iter().zip(&t).map(|(w, tr)| w * tr[c]).sum::<f64>()));
        }
    }
    linear(store, &format!("{prefix}.out"), &concat)
}

pub fn encode_window(store: &WeightStore, c: &ModelConfig, x: &M64) -> Vec<f64> {
    let mut x = x.clone();
    for s in 0..c.num_stages {
        x = block(store, &format!("cwhe.stage{s}.msa"), c.msa_heads, &x, false);
        x = slimmer(store, &format!("cwhe.stage{s}.mtsm"), c.mtsm_heads, &x);
    }
    (0..x[0].len()).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / x.len() as f64).collect()
}

pub fn max_abs64(a: &M64, b: &Matrix) -> f64 {
    let mut m: f64 = 0.0;
    for (i, r) in a.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            m = m.max((v - b.get(i, j) as f64).abs());
        }
    }
    m
}
