//! Named parameter tensors, the canonical parameter layout, and seeded
//! initialization.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::config::ModelConfig;
use crate::error::ModelError;
use crate::tensor::Matrix;

/// Dense `f32` tensor of arbitrary rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "Tensor::new: shape {shape:?} needs {n} values, got {}", data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Rank-2 view; rank 0 and 1 become a single row.
    pub fn to_matrix(&self) -> Matrix {
        match self.shape.as_slice() {
            [r, c] => Matrix::from_vec(*r, *c, self.data.clone()),
            [c] => Matrix::from_vec(1, *c, self.data.clone()),
            [] => Matrix::from_vec(1, 1, self.data.clone()),
            _ => {
                let c = *self.shape.last().unwrap();
                Matrix::from_vec(self.data.len() / c.max(1), c, self.data.clone())
            }
        }
    }
}

impl From<Matrix> for Tensor {
    fn from(m: Matrix) -> Self {
        let (r, c) = m.shape();
        Self { shape: vec![r, c], data: m.into_vec() }
    }
}

/// Name-addressed tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    entries: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), ModelError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(ModelError::DuplicateTensor(name));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Some(&mut self.entries[i].1),
            None => None,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Tensor by name with an exact expected shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor, ModelError> {
        let t = self.get(name).ok_or_else(|| ModelError::MissingTensor(name.into()))?;
        if t.shape() != shape {
            return Err(ModelError::ShapeMismatch { name: name.into(), expected: shape.to_vec(), found: t.shape().to_vec() });
        }
        Ok(t)
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.data.len()).sum()
    }
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Accumulates the parameter layout in a fixed order.
#[derive(Default)]
pub(crate) struct Layout {
    pub specs: Vec<ParamSpec>,
}

impl Layout {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.specs.push(ParamSpec { name, shape, init });
    }

    /// `in × out` weight used as `x · W`.
    pub fn weight(&mut self, name: String, fan_in: usize, fan_out: usize) {
        self.push(name, vec![fan_in, fan_out], Init::Xavier { fan_in, fan_out });
    }

    pub fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.weight(format!("{prefix}.weight"), fan_in, fan_out);
        self.push(format!("{prefix}.bias"), vec![fan_out], Init::Zeros);
    }

    pub fn norm(&mut self, prefix: &str, width: usize) {
        self.push(format!("{prefix}.gain"), vec![width], Init::Ones);
        self.push(format!("{prefix}.bias"), vec![width], Init::Zeros);
    }

    /// Pre-norm multi-head attention sublayer; `norm` names its LayerNorm.
    pub fn attention(&mut self, prefix: &str, norm: &str, width: usize, heads: usize) {
        let dk = width / heads;
        self.norm(&format!("{prefix}.{norm}"), width);
        for h in 0..heads {
            for w in ["wq", "wk", "wv"] {
                self.weight(format!("{prefix}.head{h}.{w}"), width, dk);
            }
        }
        self.linear(&format!("{prefix}.out"), width, width);
    }

    pub fn feed_forward(&mut self, prefix: &str, width: usize, hidden: usize) {
        self.norm(&format!("{prefix}.norm2"), width);
        self.linear(&format!("{prefix}.fc1"), width, hidden);
        self.linear(&format!("{prefix}.fc2"), hidden, width);
    }

    /// Attention sublayer followed by a feed-forward sublayer.
    pub fn block(&mut self, prefix: &str, width: usize, heads: usize, ffn: usize) {
        self.attention(prefix, "norm1", width, heads);
        self.feed_forward(prefix, width, width * ffn);
    }

    /// Multi-head token slimming: `c_in` channels in, `c_out` out, `tokens_out` rows out.
    pub fn slimmer(&mut self, prefix: &str, c_in: usize, c_out: usize, heads: usize, tokens_out: usize) {
        let hw = c_out / heads;
        let bottleneck = c_in / 4;
        for h in 0..heads {
            self.weight(format!("{prefix}.head{h}.wh"), c_in, hw);
        }
        self.weight(format!("{prefix}.wc"), hw, bottleneck);
        // Left operand of the score product, so stored tokens_out × bottleneck.
        self.push(
            format!("{prefix}.wr"),
            vec![tokens_out, bottleneck],
            Init::Xavier { fan_in: bottleneck, fan_out: tokens_out },
        );
        self.linear(&format!("{prefix}.out"), c_out, c_out);
    }
}

/// The full parameter layout for `config`, in initialization order.
pub fn parameter_layout(config: &ModelConfig) -> Vec<ParamSpec> {
    let c = config;
    let mut l = Layout::default();
    let (d, dl, ds, na) = (c.input_dim, c.history_dim, c.trend_dim, c.num_actions);

    l.push("cwhe.proj_hist".into(), vec![dl, d], Init::Xavier { fan_in: d, fan_out: dl });
    for s in 0..c.num_stages {
        let ch = c.stage_channels(s);
        l.block(&format!("cwhe.stage{s}.msa"), ch, c.msa_heads, c.ffn_expansion);
        let tokens_out = c.stage_tokens(s + 1);
        l.slimmer(&format!("cwhe.stage{s}.mtsm"), ch, 2 * ch, c.mtsm_heads, tokens_out);
    }
    let width = c.summary_dim();
    for g in 0..c.global_sa_layers {
        l.block(&format!("cwhe.global{g}"), width, c.msa_heads, c.ffn_expansion);
    }

    l.push("cwe.proj_trend".into(), vec![ds, d], Init::Xavier { fan_in: d, fan_out: ds });
    for i in 0..c.trend_sa_layers {
        l.block(&format!("cwe.causal{i}"), ds, c.msa_heads, c.ffn_expansion);
    }
    for i in 0..c.trend_ca_modules {
        l.attention(&format!("cwe.cross{i}.self"), "norm1", ds, c.msa_heads);
        l.attention(&format!("cwe.cross{i}.cross"), "norm1", ds, c.msa_heads);
    }
    l.norm("cwe.norm_out", ds);
    l.linear("cls", ds, na);

    let hc = c.cascade_heads();
    for k in 0..c.cascade_stages {
        for i in 0..c.cascade_sa_layers {
            l.block(&format!("wcr.stage{k}.block{i}"), na, hc, c.ffn_expansion);
        }
        l.linear(&format!("wcr.stage{k}.head"), na, na);
    }

    if c.oas_decoder {
        let tokens = c.decoder_tokens();
        for (s, &r) in c.decoder_expansion.iter().enumerate() {
            for i in 0..c.decoder_swin_layers[s] {
                l.block(&format!("swhd.stage{s}.swin{i}"), ds, c.msa_heads, c.ffn_expansion);
            }
            l.slimmer(&format!("swhd.stage{s}.expand"), ds, ds, c.mtsm_heads, tokens[s] * r);
            l.block(&format!("swhd.stage{s}.align"), ds, c.msa_heads, c.ffn_expansion);
        }
        for i in 0..*c.decoder_swin_layers.last().unwrap_or(&0) {
            l.block(&format!("swhd.final.swin{i}"), ds, c.msa_heads, c.ffn_expansion);
        }
        l.norm("swhd.norm_out", ds);
    }
    l.specs
}

/// Seeded deterministic initialization of every parameter in the layout.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<WeightStore, ModelError> {
    let violations = config.validate();
    if !violations.is_empty() {
        return Err(ModelError::InvalidConfig(violations));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for spec in parameter_layout(config) {
        let n: usize = spec.shape.iter().product();
        let data = match spec.init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Xavier { fan_in, fan_out } => {
                let limit = libm::sqrtf(6.0 / (fan_in + fan_out) as f32);
                (0..n).map(|_| (2.0 * unit_interval(&mut rng) - 1.0) * limit).collect()
            }
        };
        store.insert(spec.name, Tensor::new(spec.shape, data))?;
    }
    Ok(store)
}

/// Uniform draw in `[0, 1)` with 24 bits of resolution.
pub(crate) fn unit_interval(rng: &mut impl RngCore) -> f32 {
    (rng.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32)
}
