//! Layers shared by the encoders and decoders.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const NEG_LARGE: f64 = -1e30;

/// Anything that owns named trainable tensors.
pub trait Module {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>);

    fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.collect_params(prefix, &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.named_params("").iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `y = x W + b` with `W` stored as `(in, out)`.
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = (1.0 / input as f64).sqrt();
        Linear {
            weight: Tensor::uniform(&[input, output], bound, rng).into_param(),
            bias: Tensor::zeros(&[output]).into_param(),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[input, output]).into_param(),
            bias: Tensor::zeros(&[output]).into_param(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Linear {
            weight: Tensor::eye(n).into_param(),
            bias: Tensor::zeros(&[n]).into_param(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Applies to a `(rows, in)` matrix.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}

impl Module for Linear {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Tensor::ones(&[dim]).into_param(),
            bias: Tensor::zeros(&[dim]).into_param(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(1e-5).mul(&self.gain)?.add(&self.bias)
    }
}

impl Module for LayerNorm {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "gain"), self.gain.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x.clone(),
        }
    }
}

/// Additive attention mask: `0` where attention is allowed, a large negative
/// number elsewhere. `None` when nothing is masked.
pub fn attention_mask(len: usize, causal: bool, key_mask: Option<&[bool]>) -> Option<Tensor> {
    let masked_keys = key_mask.is_some_and(|m| m.iter().any(|&k| !k));
    if !causal && !masked_keys {
        return None;
    }
    let mut data = vec![0.0; len * len];
    for q in 0..len {
        for k in 0..len {
            let blocked_causal = causal && k > q;
            let blocked_pad = key_mask.is_some_and(|m| !m[k]);
            if blocked_causal || blocked_pad {
                data[q * len + k] = NEG_LARGE;
            }
        }
    }
    Some(Tensor::new(data, &[len, len]).expect("square mask"))
}

/// Pre-norm transformer block: multi-head self-attention followed by a
/// position-wise feed-forward layer, each with a residual connection.
pub struct AttentionBlock {
    heads: usize,
    ln1: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

impl AttentionBlock {
    pub fn new(dim: usize, heads: usize, ff_mult: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model width {dim} not divisible by {heads} heads"
            )));
        }
        Ok(AttentionBlock {
            heads,
            ln1: LayerNorm::new(dim),
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            out: Linear::new(dim, dim, rng),
            ln2: LayerNorm::new(dim),
            ff1: Linear::new(dim, dim * ff_mult, rng),
            ff2: Linear::new(dim * ff_mult, dim, rng),
        })
    }

    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let dim = x.shape()[1];
        let head_dim = dim / self.heads;
        let h = self.ln1.forward(x)?;
        let (q, k, v) = (
            self.query.forward(&h)?,
            self.key.forward(&h)?,
            self.value.forward(&h)?,
        );
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let (lo, hi) = (head * head_dim, (head + 1) * head_dim);
            let (qh, kh, vh) = if self.heads == 1 {
                (q.clone(), k.clone(), v.clone())
            } else {
                (
                    q.slice(1, lo, hi)?,
                    k.slice(1, lo, hi)?,
                    v.slice(1, lo, hi)?,
                )
            };
            let mut scores = qh.matmul(&kh.t()?)?.scale(scale);
            if let Some(m) = mask {
                scores = scores.add(m)?;
            }
            outputs.push(scores.softmax().matmul(&vh)?);
        }
        let attended = if outputs.len() == 1 {
            outputs.pop().expect("one head")
        } else {
            Tensor::concat(&outputs, 1)?
        };
        let x = x.add(&self.out.forward(&attended)?)?;
        let h = self.ln2.forward(&x)?;
        let ff = self.ff2.forward(&self.ff1.forward(&h)?.relu())?;
        x.add(&ff)
    }
}

impl Module for AttentionBlock {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.ln1.collect_params(&join(prefix, "ln1"), out);
        self.query.collect_params(&join(prefix, "query"), out);
        self.key.collect_params(&join(prefix, "key"), out);
        self.value.collect_params(&join(prefix, "value"), out);
        self.out.collect_params(&join(prefix, "out"), out);
        self.ln2.collect_params(&join(prefix, "ln2"), out);
        self.ff1.collect_params(&join(prefix, "ff1"), out);
        self.ff2.collect_params(&join(prefix, "ff2"), out);
    }
}

/// Elman recurrence `h_t = tanh(x_t W + h_{t-1} U + b)`.
pub struct Recurrence {
    input: Linear,
    hidden: Tensor,
}

impl Recurrence {
    pub fn new(dim: usize, rng: &mut Rng) -> Self {
        let bound = (1.0 / dim as f64).sqrt();
        Recurrence {
            input: Linear::new(dim, dim, rng),
            hidden: Tensor::uniform(&[dim, dim], bound, rng).into_param(),
        }
    }

    /// Runs over the rows of `x` in order (or reversed), returning the hidden
    /// state at every row in the original row order.
    pub fn forward(&self, x: &Tensor, reverse: bool) -> Result<Tensor> {
        let len = x.shape()[0];
        let pre = self.input.forward(x)?;
        let mut states: Vec<Option<Tensor>> = vec![None; len];
        let mut h: Option<Tensor> = None;
        let order: Vec<usize> = if reverse {
            (0..len).rev().collect()
        } else {
            (0..len).collect()
        };
        for t in order {
            let mut a = pre.slice(0, t, t + 1)?;
            if let Some(prev) = &h {
                a = a.add(&prev.matmul(&self.hidden)?)?;
            }
            let next = a.tanh();
            states[t] = Some(next.clone());
            h = Some(next);
        }
        let states: Vec<Tensor> = states
            .into_iter()
            .map(|s| s.expect("every row visited"))
            .collect();
        Tensor::concat(&states, 0)
    }
}

impl Module for Recurrence {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.input.collect_params(&join(prefix, "input"), out);
        out.push((join(prefix, "hidden"), self.hidden.clone()));
    }
}

/// Residual recurrent block; the bidirectional variant sums both directions.
pub struct RecurrentBlock {
    ln: LayerNorm,
    forward_rnn: Recurrence,
    backward_rnn: Option<Recurrence>,
}

impl RecurrentBlock {
    pub fn new(dim: usize, bidirectional: bool, rng: &mut Rng) -> Self {
        RecurrentBlock {
            ln: LayerNorm::new(dim),
            forward_rnn: Recurrence::new(dim, rng),
            backward_rnn: bidirectional.then(|| Recurrence::new(dim, rng)),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.ln.forward(x)?;
        let mut y = self.forward_rnn.forward(&h, false)?;
        if let Some(b) = &self.backward_rnn {
            y = y.add(&b.forward(&h, true)?)?;
        }
        x.add(&y)
    }
}

impl Module for RecurrentBlock {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.ln.collect_params(&join(prefix, "ln"), out);
        self.forward_rnn.collect_params(&join(prefix, "fwd"), out);
        if let Some(b) = &self.backward_rnn {
            b.collect_params(&join(prefix, "bwd"), out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MixerKind {
    #[default]
    Attention,
    Recurrent,
}

enum Block {
    Attention(AttentionBlock),
    Recurrent(RecurrentBlock),
}

/// A stack of context-mixing blocks with a final layer norm.
pub struct MixerStack {
    kind: MixerKind,
    causal: bool,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
}

#[derive(Debug, Clone, Copy)]
pub struct MixerSpec {
    pub kind: MixerKind,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub ff_mult: usize,
    /// Causal attention (attention kind) / forward-only recurrence.
    pub causal: bool,
    /// Recurrent kind only: also run right-to-left.
    pub bidirectional: bool,
}

impl MixerStack {
    pub fn new(spec: MixerSpec, rng: &mut Rng) -> Result<Self> {
        let blocks = (0..spec.depth)
            .map(|_| match spec.kind {
                MixerKind::Attention => {
                    AttentionBlock::new(spec.dim, spec.heads, spec.ff_mult, rng)
                        .map(Block::Attention)
                }
                MixerKind::Recurrent => Ok(Block::Recurrent(RecurrentBlock::new(
                    spec.dim,
                    spec.bidirectional && !spec.causal,
                    rng,
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MixerStack {
            kind: spec.kind,
            causal: spec.causal,
            blocks,
            final_ln: LayerNorm::new(spec.dim),
        })
    }

    pub fn kind(&self) -> MixerKind {
        self.kind
    }

    /// `x` is `(len, dim)`; `key_mask` marks real (non-pad) rows.
    pub fn forward(&self, x: &Tensor, key_mask: Option<&[bool]>) -> Result<Tensor> {
        let len = x.shape()[0];
        let mask = match self.kind {
            MixerKind::Attention => attention_mask(len, self.causal, key_mask),
            MixerKind::Recurrent => None,
        };
        let mut h = x.clone();
        for b in &self.blocks {
            h = match b {
                Block::Attention(a) => a.forward(&h, mask.as_ref())?,
                Block::Recurrent(r) => r.forward(&h)?,
            };
        }
        self.final_ln.forward(&h)
    }
}

/// Per-layer cache for incremental decoding with [`MixerStack::step`].
#[derive(Debug, Clone, Default)]
pub struct StepState {
    layers: Vec<LayerState>,
    position: usize,
}

#[derive(Debug, Clone)]
enum LayerState {
    Attention {
        keys: Vec<Vec<f64>>,
        values: Vec<Vec<f64>>,
    },
    Recurrent(Option<Vec<f64>>),
}

impl StepState {
    pub fn position(&self) -> usize {
        self.position
    }
}

fn linear_row(l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = l.weight.data();
    let mut out = l.bias.to_vec();
    let n = out.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(&w[i * n..(i + 1) * n]) {
            *o += xi * wij;
        }
    }
    out
}

fn layer_norm_row(ln: &LayerNorm, x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let is = 1.0 / (var + 1e-5).sqrt();
    let (g, b) = (ln.gain.data(), ln.bias.data());
    x.iter()
        .enumerate()
        .map(|(j, &v)| (v - mu) * is * g[j] + b[j])
        .collect()
}

fn add_into(x: &mut [f64], y: &[f64]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

impl AttentionBlock {
    fn step(&self, x: &[f64], keys: &mut Vec<Vec<f64>>, values: &mut Vec<Vec<f64>>) -> Vec<f64> {
        let dim = x.len();
        let head_dim = dim / self.heads;
        let h = layer_norm_row(&self.ln1, x);
        let q = linear_row(&self.query, &h);
        keys.push(linear_row(&self.key, &h));
        values.push(linear_row(&self.value, &h));
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut attended = vec![0.0; dim];
        for head in 0..self.heads {
            let r = head * head_dim..(head + 1) * head_dim;
            let mut scores: Vec<f64> = keys
                .iter()
                .map(|k| {
                    q[r.clone()]
                        .iter()
                        .zip(&k[r.clone()])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        * scale
                })
                .collect();
            crate::tensor::softmax_in_place(&mut scores);
            for (p, v) in scores.iter().zip(values.iter()) {
                for j in r.clone() {
                    attended[j] += p * v[j];
                }
            }
        }
        let mut y = x.to_vec();
        add_into(&mut y, &linear_row(&self.out, &attended));
        let h = layer_norm_row(&self.ln2, &y);
        let mut f = linear_row(&self.ff1, &h);
        f.iter_mut().for_each(|v| *v = v.max(0.0));
        add_into(&mut y, &linear_row(&self.ff2, &f));
        y
    }
}

impl Recurrence {
    fn step(&self, x: &[f64], prev: Option<&[f64]>) -> Vec<f64> {
        let mut a = linear_row(&self.input, x);
        if let Some(p) = prev {
            let u = self.hidden.data();
            let n = a.len();
            for (i, &pi) in p.iter().enumerate() {
                for (o, &uij) in a.iter_mut().zip(&u[i * n..(i + 1) * n]) {
                    *o += pi * uij;
                }
            }
        }
        a.iter().map(|v| v.tanh()).collect()
    }
}

impl MixerStack {
    pub fn new_state(&self) -> StepState {
        StepState {
            layers: self
                .blocks
                .iter()
                .map(|b| match b {
                    Block::Attention(_) => LayerState::Attention {
                        keys: Vec::new(),
                        values: Vec::new(),
                    },
                    Block::Recurrent(_) => LayerState::Recurrent(None),
                })
                .collect(),
            position: 0,
        }
    }

    /// Output row for the next position given only its input row, reusing
    /// the cached context. Matches the corresponding row of
    /// [`MixerStack::forward`] for causal stacks.
    pub fn step(&self, x: &[f64], state: &mut StepState) -> Result<Vec<f64>> {
        if !self.causal {
            return Err(Error::invalid("incremental decoding needs a causal stack"));
        }
        let mut h = x.to_vec();
        for (b, s) in self.blocks.iter().zip(state.layers.iter_mut()) {
            h = match (b, s) {
                (Block::Attention(a), LayerState::Attention { keys, values }) => {
                    a.step(&h, keys, values)
                }
                (Block::Recurrent(r), LayerState::Recurrent(prev)) => {
                    let n = layer_norm_row(&r.ln, &h);
                    let y = r.forward_rnn.step(&n, prev.as_deref());
                    let mut out = h.clone();
                    add_into(&mut out, &y);
                    *prev = Some(y);
                    out
                }
                _ => return Err(Error::invalid("step state does not belong to this stack")),
            };
        }
        state.position += 1;
        Ok(layer_norm_row(&self.final_ln, &h))
    }
}

impl Module for MixerStack {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            match b {
                Block::Attention(a) => a.collect_params(&p, out),
                Block::Recurrent(r) => r.collect_params(&p, out),
            }
        }
        self.final_ln.collect_params(&join(prefix, "final_ln"), out);
    }
}

/// Stacks equally sized 1-D tensors into a `(n, dim)` matrix.
pub fn stack_rows(rows: &[Tensor]) -> Result<Tensor> {
    let reshaped = rows
        .iter()
        .map(|r| {
            let d = r.numel();
            r.reshape(&[1, d])
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat(&reshaped, 0)
}

/// Copies values from `src` into same-named parameters of `dst`.
pub fn load_params(dst: &[(String, Tensor)], src: &dyn Fn(&str) -> Option<Tensor>) -> Result<()> {
    for (name, t) in dst {
        let s = src(name).ok_or_else(|| Error::MissingTensor(name.clone()))?;
        if s.shape() != t.shape() {
            return Err(Error::shape("load_params", t.shape(), s.shape()));
        }
        t.data_mut().copy_from_slice(&s.data());
    }
    Ok(())
}

/// Order-sensitive checksum over parameter values (bit patterns).
pub fn param_checksum(params: &[(String, Tensor)]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for (name, t) in params {
        for b in name.bytes() {
            h = (h ^ b as u64).wrapping_mul(0x100000001b3);
        }
        for v in t.data().iter() {
            h = (h ^ v.to_bits()).wrapping_mul(0x100000001b3);
        }
    }
    h
}
