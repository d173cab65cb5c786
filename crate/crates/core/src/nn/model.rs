//! The relevance classifier: transformer encoder over abstract tokens,
//! dense branches over averaged code embeddings, and an MLP head.

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParameterStore};
use super::tape::{logistic, Graph, Var};
use crate::rng::seeded;
use crate::textenc::{TokenSequence, PAD_ID};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub feed_forward: usize,
    pub seq_len: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { layers: 6, heads: 8, hidden: 512, feed_forward: 2048, seq_len: 128, dropout: 0.1 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.feed_forward == 0 {
            return Err(Error::InvalidConfig("encoder sizes must be positive".into()));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.seq_len < 2 {
            return Err(Error::InvalidConfig("sequence length must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Which feature branches feed the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    #[default]
    Combined,
    TextOnly,
    CodesOnly,
}

impl ModelVariant {
    pub fn uses_text(self) -> bool {
        self != ModelVariant::CodesOnly
    }

    pub fn uses_codes(self) -> bool {
        self != ModelVariant::TextOnly
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combined" => Ok(ModelVariant::Combined),
            "text-only" => Ok(ModelVariant::TextOnly),
            "codes-only" => Ok(ModelVariant::CodesOnly),
            other => Err(Error::InvalidInput(format!("unknown model variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Dimension of the pretrained code embeddings.
    pub code_dim: usize,
    pub cpc_out: usize,
    pub ipc_out: usize,
    pub uspc_out: usize,
    pub head_hidden: usize,
    pub variant: ModelVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            code_dim: 128,
            cpc_out: 256,
            ipc_out: 128,
            uspc_out: 128,
            head_hidden: 256,
            variant: ModelVariant::Combined,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if [self.code_dim, self.cpc_out, self.ipc_out, self.uspc_out, self.head_hidden].contains(&0) {
            return Err(Error::InvalidConfig("branch and head sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn code_out(&self) -> usize {
        self.cpc_out + self.ipc_out + self.uspc_out
    }

    pub fn head_input(&self) -> usize {
        let text = if self.variant.uses_text() { self.encoder.hidden } else { 0 };
        let codes = if self.variant.uses_codes() { self.code_out() } else { 0 };
        text + codes
    }
}

/// Averaged code embeddings of one patent.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeInputs {
    pub cpc: Array1<f64>,
    pub ipc: Array1<f64>,
    pub uspc: Array1<f64>,
}

impl CodeInputs {
    pub fn zeros(dim: usize) -> Self {
        CodeInputs { cpc: Array1::zeros(dim), ipc: Array1::zeros(dim), uspc: Array1::zeros(dim) }
    }
}

/// A model-ready record.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: TokenSequence,
    pub codes: CodeInputs,
    pub label: f64,
}

/// Inverted dropout with its own random stream.
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout { rate, rng: seeded(seed, &[0xD80F]) }
    }

    fn apply(&mut self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let (r, c) = g.shape(x);
        let mask = Array2::from_shape_simple_fn((r, c), || if self.rng.gen::<f64>() < self.rate { 0.0 } else { keep });
        g.mul_const(x, mask)
    }
}

fn maybe_drop(d: &mut Option<&mut Dropout>, g: &mut Graph<'_>, x: Var) -> Result<Var> {
    match d {
        Some(d) => d.apply(g, x),
        None => Ok(x),
    }
}

/// Sinusoidal position encodings, `len × dim`.
pub fn positional_encoding(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(pos, i)| {
        let angle = pos as f64 / 10_000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    scale: ParamId,
    shift: ParamId,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    query: Dense,
    key: Dense,
    value: Dense,
    output: Dense,
    norm1: Norm,
    ff_in: Dense,
    ff_out: Dense,
    norm2: Norm,
}

#[derive(Debug, Clone)]
struct ModelIds {
    token_embedding: Option<ParamId>,
    layers: Vec<EncoderLayer>,
    branches: Option<[Dense; 3]>,
    head_hidden: Dense,
    head_out: Dense,
}

pub const TOKEN_EMBEDDING: &str = "token_embedding";

/// Parameter names and shapes for `config` with a vocabulary of
/// `vocab_size` rows.
pub fn parameter_layout(config: &ModelConfig, vocab_size: usize) -> Vec<(String, (usize, usize))> {
    let mut out = Vec::new();
    let dense = |out: &mut Vec<_>, name: String, i: usize, o: usize| {
        out.push((format!("{name}.weight"), (i, o)));
        out.push((format!("{name}.bias"), (1, o)));
    };
    let e = &config.encoder;
    if config.variant.uses_text() {
        out.push((TOKEN_EMBEDDING.to_string(), (vocab_size, e.hidden)));
        for l in 0..e.layers {
            for p in ["query", "key", "value", "output"] {
                dense(&mut out, format!("encoder.{l}.attention.{p}"), e.hidden, e.hidden);
            }
            out.push((format!("encoder.{l}.norm1.scale"), (1, e.hidden)));
            out.push((format!("encoder.{l}.norm1.shift"), (1, e.hidden)));
            dense(&mut out, format!("encoder.{l}.ff.in"), e.hidden, e.feed_forward);
            dense(&mut out, format!("encoder.{l}.ff.out"), e.feed_forward, e.hidden);
            out.push((format!("encoder.{l}.norm2.scale"), (1, e.hidden)));
            out.push((format!("encoder.{l}.norm2.shift"), (1, e.hidden)));
        }
    }
    if config.variant.uses_codes() {
        dense(&mut out, "branch.cpc".into(), config.code_dim, config.cpc_out);
        dense(&mut out, "branch.ipc".into(), config.code_dim, config.ipc_out);
        dense(&mut out, "branch.uspc".into(), config.code_dim, config.uspc_out);
    }
    dense(&mut out, "head.hidden".into(), config.head_input(), config.head_hidden);
    dense(&mut out, "head.out".into(), config.head_hidden, 1);
    out
}

/// The full classifier: configuration plus parameters.
#[derive(Debug, Clone)]
pub struct Classifier {
    config: ModelConfig,
    params: ParameterStore,
    ids: ModelIds,
    positions: Array2<f64>,
}

impl Classifier {
    /// Fresh model. Dense weights use Glorot-uniform initialization, biases
    /// and layer-norm shifts start at zero, layer-norm scales at one, and the
    /// token table is uniform in `[-0.5/d, 0.5/d]` with a zero `[PAD]` row.
    pub fn new(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed, &[0x1A17]);
        let mut params = ParameterStore::new();
        for (name, (r, c)) in parameter_layout(&config, vocab_size) {
            let value = if name == TOKEN_EMBEDDING {
                let half = 0.5 / c as f64;
                Array2::from_shape_simple_fn((r, c), || rng.gen_range(-half..=half))
            } else if name.ends_with(".scale") {
                Array2::ones((r, c))
            } else if name.ends_with(".weight") {
                let limit = (6.0 / (r + c) as f64).sqrt();
                Array2::from_shape_simple_fn((r, c), || rng.gen_range(-limit..=limit))
            } else {
                Array2::zeros((r, c))
            };
            params.insert(&name, value);
        }
        Self::from_params(config, params)
    }

    /// Wraps an existing parameter store, checking names and shapes.
    /// The `[PAD]` row of the token table is pinned at zero.
    pub fn from_params(config: ModelConfig, mut params: ParameterStore) -> Result<Self> {
        config.validate()?;
        let vocab = params.get(TOKEN_EMBEDDING).map_or(0, |t| t.nrows());
        for (name, shape) in parameter_layout(&config, vocab) {
            match params.get(&name) {
                Some(v) if v.dim() == shape => {}
                Some(v) => {
                    return Err(Error::ShapeMismatch(format!(
                        "parameter `{name}` is {:?}, expected {shape:?}",
                        v.dim()
                    )))
                }
                None => return Err(Error::ShapeMismatch(format!("missing parameter `{name}`"))),
            }
        }
        if let Some(id) = params.id(TOKEN_EMBEDDING) {
            params.pin_zero_row(id, PAD_ID as usize);
        }
        let id = |n: &str| params.id(n).expect("layout checked");
        let dense = |n: &str| Dense { weight: id(&format!("{n}.weight")), bias: id(&format!("{n}.bias")) };
        let norm = |n: &str| Norm { scale: id(&format!("{n}.scale")), shift: id(&format!("{n}.shift")) };
        let text = config.variant.uses_text();
        let layers = if text {
            (0..config.encoder.layers)
                .map(|l| EncoderLayer {
                    query: dense(&format!("encoder.{l}.attention.query")),
                    key: dense(&format!("encoder.{l}.attention.key")),
                    value: dense(&format!("encoder.{l}.attention.value")),
                    output: dense(&format!("encoder.{l}.attention.output")),
                    norm1: norm(&format!("encoder.{l}.norm1")),
                    ff_in: dense(&format!("encoder.{l}.ff.in")),
                    ff_out: dense(&format!("encoder.{l}.ff.out")),
                    norm2: norm(&format!("encoder.{l}.norm2")),
                })
                .collect()
        } else {
            Vec::new()
        };
        let ids = ModelIds {
            token_embedding: text.then(|| id(TOKEN_EMBEDDING)),
            layers,
            branches: config
                .variant
                .uses_codes()
                .then(|| [dense("branch.cpc"), dense("branch.ipc"), dense("branch.uspc")]),
            head_hidden: dense("head.hidden"),
            head_out: dense("head.out"),
        };
        let positions = positional_encoding(config.encoder.seq_len, config.encoder.hidden);
        Ok(Classifier { config, params, ids, positions })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParameterStore {
        self.params
    }

    /// Overwrites the token table with pretrained vectors (rows follow the
    /// vocabulary ids). The `[PAD]` row stays zero.
    pub fn load_token_embeddings(&mut self, vectors: &Array2<f64>) -> Result<()> {
        let id = self.ids.token_embedding.ok_or_else(|| Error::InvalidInput("model has no text branch".into()))?;
        let target = self.params.value_mut(id);
        if target.dim() != vectors.dim() {
            return Err(Error::ShapeMismatch(format!("token table {:?} vs model {:?}", vectors.dim(), target.dim())));
        }
        target.assign(vectors);
        target.row_mut(PAD_ID as usize).fill(0.0);
        Ok(())
    }

    pub fn set_token_embeddings_frozen(&mut self, frozen: bool) {
        if let Some(id) = self.ids.token_embedding {
            self.params.set_frozen(id, frozen);
        }
    }

    fn dense(&self, g: &mut Graph<'_>, d: Dense, x: Var) -> Result<Var> {
        let (w, b) = (g.param(d.weight), g.param(d.bias));
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    fn norm(&self, g: &mut Graph<'_>, n: Norm, x: Var) -> Result<Var> {
        let (scale, shift) = (g.param(n.scale), g.param(n.shift));
        g.layer_norm(x, scale, shift)
    }

    /// Runs the encoder blocks over already-embedded rows `x` (`len × hidden`).
    /// Columns flagged in `mask` are never attended to.
    pub fn encode_embedded(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        mask: Option<&[bool]>,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let e = &self.config.encoder;
        if g.shape(x).1 != e.hidden {
            return Err(Error::ShapeMismatch(format!("encoder input {:?}", g.shape(x))));
        }
        let dk = e.head_dim();
        let mut x = maybe_drop(&mut dropout, g, x)?;
        for layer in &self.ids.layers {
            let q = self.dense(g, layer.query, x)?;
            let k = self.dense(g, layer.key, x)?;
            let v = self.dense(g, layer.value, x)?;
            let mut heads = Vec::with_capacity(e.heads);
            for h in 0..e.heads {
                let (lo, hi) = (h * dk, (h + 1) * dk);
                let (qh, kh, vh) = (g.slice_cols(q, lo, hi), g.slice_cols(k, lo, hi), g.slice_cols(v, lo, hi));
                heads.push(attention(g, qh, kh, vh, mask)?);
            }
            let joined = if heads.len() == 1 { heads[0] } else { g.concat(&heads)? };
            let attended = self.dense(g, layer.output, joined)?;
            let attended = maybe_drop(&mut dropout, g, attended)?;
            let residual = g.add(x, attended)?;
            let x1 = self.norm(g, layer.norm1, residual)?;
            let inner = self.dense(g, layer.ff_in, x1)?;
            let inner = g.relu(inner);
            let ff = self.dense(g, layer.ff_out, inner)?;
            let ff = maybe_drop(&mut dropout, g, ff)?;
            let residual = g.add(x1, ff)?;
            x = self.norm(g, layer.norm2, residual)?;
        }
        Ok(x)
    }

    /// Embeds `ids` (token lookup scaled by √hidden, plus position encodings)
    /// and encodes them.
    pub fn encode_ids(
        &self,
        g: &mut Graph<'_>,
        ids: &[u32],
        mask: Option<&[bool]>,
        dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let table = self.ids.token_embedding.ok_or_else(|| Error::InvalidInput("model has no text branch".into()))?;
        if ids.is_empty() || ids.len() > self.config.encoder.seq_len {
            return Err(Error::ShapeMismatch(format!("{} token ids", ids.len())));
        }
        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let tokens = g.gather(table, &rows)?;
        let tokens = g.scale(tokens, (self.config.encoder.hidden as f64).sqrt());
        let pos = g.leaf(self.positions.slice(s![..ids.len(), ..]).to_owned());
        let x = g.add(tokens, pos)?;
        self.encode_embedded(g, x, mask, dropout)
    }

    /// `[CLS]` representation (`1 × hidden`) of a token sequence, encoding
    /// only the real tokens. Padding never reaches attention, so this equals
    /// row 0 of [`Classifier::encoder_forward`].
    pub fn cls(&self, g: &mut Graph<'_>, tokens: &TokenSequence, dropout: Option<&mut Dropout>) -> Result<Var> {
        let hidden = self.encode_ids(g, tokens.real_ids(), None, dropout)?;
        Ok(g.row(hidden, 0))
    }

    /// Full-length encoding: all `seq_len` hidden states with pad positions
    /// masked out of attention, plus the `[CLS]` vector.
    pub fn encoder_forward(&self, tokens: &TokenSequence) -> Result<(Array2<f64>, Array1<f64>)> {
        if tokens.ids.len() != self.config.encoder.seq_len {
            return Err(Error::ShapeMismatch(format!(
                "sequence of {} ids for seq_len {}",
                tokens.ids.len(),
                self.config.encoder.seq_len
            )));
        }
        let mask: Vec<bool> = (0..tokens.ids.len()).map(|i| i >= tokens.true_length).collect();
        let mut g = Graph::new(&self.params);
        let h = self.encode_ids(&mut g, &tokens.ids, Some(&mask), None)?;
        let states = g.value(h).clone();
        let cls = states.row(0).to_owned();
        Ok((states, cls))
    }

    /// Dense + ReLU on each averaged code vector, concatenated CPC‖IPC‖USPC.
    pub fn code_branch(&self, g: &mut Graph<'_>, codes: &CodeInputs) -> Result<Var> {
        let branches = self.ids.branches.ok_or_else(|| Error::InvalidInput("model has no code branch".into()))?;
        let mut outs = Vec::with_capacity(3);
        for (input, dense) in [&codes.cpc, &codes.ipc, &codes.uspc].into_iter().zip(branches) {
            if input.len() != self.config.code_dim {
                return Err(Error::ShapeMismatch(format!(
                    "code vector of {} for code_dim {}",
                    input.len(),
                    self.config.code_dim
                )));
            }
            let x = g.leaf(input.clone().insert_axis(ndarray::Axis(0)));
            let y = self.dense(g, dense, x)?;
            outs.push(g.relu(y));
        }
        g.concat(&outs)
    }

    pub fn code_branch_forward(&self, codes: &CodeInputs) -> Result<Array1<f64>> {
        let mut g = Graph::new(&self.params);
        let v = self.code_branch(&mut g, codes)?;
        Ok(g.value(v).row(0).to_owned())
    }

    /// Head logit from a `1 × head_input` feature row.
    pub fn head(&self, g: &mut Graph<'_>, features: Var) -> Result<Var> {
        let h = self.dense(g, self.ids.head_hidden, features)?;
        let h = g.relu(h);
        self.dense(g, self.ids.head_out, h)
    }

    /// Probability from a `[CLS]` vector and a code-branch vector; either is
    /// ignored when the variant does not use it.
    pub fn head_forward(&self, cls: &Array1<f64>, code: &Array1<f64>) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let mut parts = Vec::new();
        if self.config.variant.uses_text() {
            parts.push(g.leaf(cls.clone().insert_axis(ndarray::Axis(0))));
        }
        if self.config.variant.uses_codes() {
            parts.push(g.leaf(code.clone().insert_axis(ndarray::Axis(0))));
        }
        let features = if parts.len() == 1 { parts[0] } else { g.concat(&parts)? };
        let logit = self.head(&mut g, features)?;
        Ok(logistic(g.value(logit)[[0, 0]]))
    }

    /// Logit of one example.
    pub fn logit(&self, g: &mut Graph<'_>, ex: &Example, dropout: Option<&mut Dropout>) -> Result<Var> {
        let mut parts = Vec::with_capacity(2);
        if self.config.variant.uses_text() {
            parts.push(self.cls(g, &ex.tokens, dropout)?);
        }
        if self.config.variant.uses_codes() {
            parts.push(self.code_branch(g, &ex.codes)?);
        }
        let features = if parts.len() == 1 { parts[0] } else { g.concat(&parts)? };
        self.head(g, features)
    }

    /// Scalar loss node: weighted cross-entropy of the example's label.
    pub fn loss(&self, g: &mut Graph<'_>, ex: &Example, pos_weight: f64, dropout: Option<&mut Dropout>) -> Result<Var> {
        let logit = self.logit(g, ex, dropout)?;
        let weight = if ex.label > 0.5 { pos_weight } else { 1.0 };
        g.sigmoid_bce(logit, ex.label, weight)
    }

    /// Probability that the example is a valid patent.
    pub fn predict(&self, ex: &Example) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let logit = self.logit(&mut g, ex, None)?;
        Ok(logistic(g.value(logit)[[0, 0]]))
    }
}

/// `softmax(q kᵀ / √d_k) v` on the tape.
pub fn attention(g: &mut Graph<'_>, q: Var, k: Var, v: Var, mask: Option<&[bool]>) -> Result<Var> {
    let dk = g.shape(q).1;
    if dk == 0 {
        return Err(Error::ShapeMismatch("attention with zero key dimension".into()));
    }
    if g.shape(k).0 != g.shape(v).0 {
        return Err(Error::ShapeMismatch(format!("keys {:?} vs values {:?}", g.shape(k), g.shape(v))));
    }
    let scores = g.matmul_t(q, k)?;
    let scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
    let weights = g.softmax_rows(scores, mask)?;
    g.matmul(weights, v)
}

fn attention_inputs(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, mask: Option<&[bool]>) -> Result<()> {
    if q.ncols() != k.ncols() || k.nrows() != v.nrows() {
        return Err(Error::ShapeMismatch(format!("attention shapes q {:?} k {:?} v {:?}", q.dim(), k.dim(), v.dim())));
    }
    if mask.is_some_and(|m| m.len() != k.nrows()) {
        return Err(Error::ShapeMismatch("mask length differs from key count".into()));
    }
    Ok(())
}

/// Scaled dot-product attention on plain matrices.
pub fn scaled_dot_attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    pad_mask: Option<&[bool]>,
) -> Result<Array2<f64>> {
    attention_inputs(q, k, v, pad_mask)?;
    let store = ParameterStore::new();
    let mut g = Graph::new(&store);
    let (qv, kv, vv) = (g.leaf(q.clone()), g.leaf(k.clone()), g.leaf(v.clone()));
    let out = attention(&mut g, qv, kv, vv, pad_mask)?;
    Ok(g.value(out).clone())
}

/// The attention weight matrix `softmax(q kᵀ / √d_k)` with masking.
pub fn attention_weights(q: &Array2<f64>, k: &Array2<f64>, pad_mask: Option<&[bool]>) -> Result<Array2<f64>> {
    attention_inputs(q, k, k, pad_mask)?;
    let store = ParameterStore::new();
    let mut g = Graph::new(&store);
    let (qv, kv) = (g.leaf(q.clone()), g.leaf(k.clone()));
    let scores = g.matmul_t(qv, kv)?;
    let scores = g.scale(scores, 1.0 / (q.ncols() as f64).sqrt());
    let w = g.softmax_rows(scores, pad_mask)?;
    Ok(g.value(w).clone())
}
