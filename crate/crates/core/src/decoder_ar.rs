//! Conditional autoregressive protein decoder.
//!
//! The decoder reads `[CLS] x_1 .. x_n` and predicts `x_1 .. x_n [SEP]`; the
//! projected condition is added to every input position. Generation works
//! against the [`StepModel`] trait so the search procedures can be exercised
//! on hand-built toy models as well.

use rand::Rng as _;

use crate::clap::{check_finite, TrainTrace};
use crate::config::{ArConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{join, Linear, MixerKind, MixerSpec, MixerStack, Module, Rng, StepState};
use crate::optim::{AdamW, AdamWConfig};
use crate::tensor::{log_softmax_in_place, no_grad, softmax_in_place, Tensor};
use crate::tokenizer::{residue_ids, TokenSequence, CLS, PROTEIN_VOCAB_SIZE, SEP};

pub struct ArDecoder {
    max_len: usize,
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub cond: Linear,
    mixer: MixerStack,
    pub out: Linear,
}

impl ArDecoder {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let d = cfg.d_model;
        let spec = MixerSpec {
            kind: MixerKind::Attention,
            dim: d,
            depth: cfg.depth,
            heads: cfg.heads,
            ff_mult: cfg.ff_mult,
            causal: true,
            bidirectional: false,
        };
        Ok(ArDecoder {
            max_len: cfg.max_protein_len,
            tok_emb: Tensor::randn(&[PROTEIN_VOCAB_SIZE, d], 0.5, rng).into_param(),
            pos_emb: Tensor::randn(&[cfg.max_protein_len + 1, d], 0.1, rng).into_param(),
            cond: Linear::new(cfg.d_latent, d, rng),
            mixer: MixerStack::new(spec, rng)?,
            out: Linear::new(d, PROTEIN_VOCAB_SIZE, rng),
        })
    }

    /// Longest residue sequence the decoder can read or emit.
    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn d_latent(&self) -> usize {
        self.cond.in_dim()
    }

    fn cond_row(&self, cond: &[f64]) -> Result<Tensor> {
        if cond.len() != self.d_latent() {
            return Err(Error::shape(
                "decoder condition",
                &[cond.len()],
                &[self.d_latent()],
            ));
        }
        let c = Tensor::new(cond.to_vec(), &[1, cond.len()])?;
        self.cond.forward(&c)?.reshape(&[self.tok_emb.shape()[1]])
    }

    /// Teacher-forced logits `(n + 1, 30)` for residue ids `residues`.
    pub fn logits(&self, cond: &[f64], residues: &[usize]) -> Result<Tensor> {
        if residues.len() > self.max_len {
            return Err(Error::TooLong {
                len: residues.len(),
                max: self.max_len,
            });
        }
        if let Some(&bad) = residues.iter().find(|&&i| i >= PROTEIN_VOCAB_SIZE) {
            return Err(Error::TokenOutOfRange {
                id: bad,
                size: PROTEIN_VOCAB_SIZE,
            });
        }
        let mut input = Vec::with_capacity(residues.len() + 1);
        input.push(CLS);
        input.extend_from_slice(residues);
        let x = self
            .tok_emb
            .embedding(&input)?
            .add(&self.pos_emb.slice(0, 0, input.len())?)?
            .add(&self.cond_row(cond)?)?;
        let h = self.mixer.forward(&x, None)?;
        self.out.forward(&h)
    }

    /// Summed next-token negative log-likelihood and the number of predicted
    /// tokens (residues plus the closing `[SEP]`).
    pub fn sequence_nll(&self, cond: &[f64], residues: &[usize]) -> Result<(Tensor, usize)> {
        let mut target = residues.to_vec();
        target.push(SEP);
        let logits = self.logits(cond, residues)?;
        let n = target.len();
        Ok((logits.cross_entropy(&target, None)?.scale(n as f64), n))
    }

    /// Step model bound to one condition, for search and sampling.
    pub fn conditioned(&self, cond: &[f64]) -> Result<Conditioned<'_>> {
        let cond_row = no_grad(|| self.cond_row(cond))?.to_vec();
        let mut allowed = vec![false; PROTEIN_VOCAB_SIZE];
        for id in residue_ids() {
            allowed[id] = true;
        }
        allowed[SEP] = true;
        Ok(Conditioned {
            decoder: self,
            cond_row,
            allowed,
            min_len: 1,
        })
    }
}

impl Module for ArDecoder {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "tok_emb"), self.tok_emb.clone()));
        out.push((join(prefix, "pos_emb"), self.pos_emb.clone()));
        self.cond.collect_params(&join(prefix, "cond"), out);
        self.mixer.collect_params(&join(prefix, "mixer"), out);
        self.out.collect_params(&join(prefix, "out"), out);
    }
}

/// Mean next-token loss over every predicted token of the batch.
pub fn ar_loss(decoder: &ArDecoder, batch: &[(&[f64], &[usize])]) -> Result<Tensor> {
    if batch.is_empty() {
        return Err(Error::invalid("empty decoder batch"));
    }
    let mut total: Option<Tensor> = None;
    let mut count = 0;
    for (cond, residues) in batch {
        let (nll, n) = decoder.sequence_nll(cond, residues)?;
        count += n;
        total = Some(match total {
            Some(t) => t.add(&nll)?,
            None => nll,
        });
    }
    Ok(total.expect("non-empty batch").scale(1.0 / count as f64))
}

/// Teacher-forced training on `(condition, residue ids)` pairs.
pub fn train_ar(
    decoder: &ArDecoder,
    data: &[(Vec<f64>, Vec<usize>)],
    cfg: &ArConfig,
    rng: &mut Rng,
) -> Result<TrainTrace> {
    use rand::seq::SliceRandom;
    if data.is_empty() {
        return Err(Error::invalid("decoder training set is empty"));
    }
    let mut opt = AdamW::with_params(AdamWConfig::with_lr(cfg.lr), decoder.named_params("ar"));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = TrainTrace::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<(&[f64], &[usize])> = chunk
                .iter()
                .map(|&i| {
                    (
                        data[i].0.as_slice(),
                        &data[i].1[..data[i].1.len().min(decoder.max_len)],
                    )
                })
                .collect();
            opt.zero_grad();
            let loss = ar_loss(decoder, &batch)?;
            let value = loss.item();
            check_finite("autoregressive decoder", trace.losses.len(), value)?;
            loss.backward()?;
            opt.clip_grad_norm(5.0);
            opt.step()?;
            trace.losses.push(value);
        }
    }
    Ok(trace)
}

/// Next-token distribution of a left-to-right model.
pub trait StepModel {
    type State: Clone;
    /// State before any token is emitted.
    fn start(&self) -> Result<Self::State>;
    /// Log-probabilities of the next token; `-inf` marks forbidden tokens.
    fn log_probs(&self, state: &Self::State) -> Result<Vec<f64>>;
    fn advance(&self, state: &mut Self::State, token: usize) -> Result<()>;
    fn eos(&self) -> usize;
}

pub struct Conditioned<'a> {
    decoder: &'a ArDecoder,
    cond_row: Vec<f64>,
    allowed: Vec<bool>,
    /// The end token is forbidden until this many residues were emitted.
    min_len: usize,
}

#[derive(Clone)]
pub struct ArState {
    mixer: StepState,
    log_probs: Vec<f64>,
}

impl Conditioned<'_> {
    fn feed(&self, state: &mut StepState, token: usize) -> Result<Vec<f64>> {
        let pos = state.position();
        if pos > self.decoder.max_len {
            return Err(Error::TooLong {
                len: pos,
                max: self.decoder.max_len,
            });
        }
        let d = self.cond_row.len();
        let (te, pe) = (self.decoder.tok_emb.data(), self.decoder.pos_emb.data());
        let x: Vec<f64> = (0..d)
            .map(|j| te[token * d + j] + pe[pos * d + j] + self.cond_row[j])
            .collect();
        drop((te, pe));
        let h = self.decoder.mixer.step(&x, state)?;
        let w = self.decoder.out.weight.data();
        let mut logits = self.decoder.out.bias.to_vec();
        for (i, &hi) in h.iter().enumerate() {
            for (o, &wij) in logits
                .iter_mut()
                .zip(&w[i * PROTEIN_VOCAB_SIZE..(i + 1) * PROTEIN_VOCAB_SIZE])
            {
                *o += hi * wij;
            }
        }
        for (l, &ok) in logits.iter_mut().zip(&self.allowed) {
            if !ok {
                *l = f64::NEG_INFINITY;
            }
        }
        if pos < self.min_len {
            logits[SEP] = f64::NEG_INFINITY;
        }
        log_softmax_in_place(&mut logits);
        Ok(logits)
    }
}

impl StepModel for Conditioned<'_> {
    type State = ArState;

    fn start(&self) -> Result<ArState> {
        let mut mixer = self.decoder.mixer.new_state();
        let log_probs = self.feed(&mut mixer, CLS)?;
        Ok(ArState { mixer, log_probs })
    }

    fn log_probs(&self, state: &ArState) -> Result<Vec<f64>> {
        Ok(state.log_probs.clone())
    }

    fn advance(&self, state: &mut ArState, token: usize) -> Result<()> {
        state.log_probs = self.feed(&mut state.mixer, token)?;
        Ok(())
    }

    fn eos(&self) -> usize {
        SEP
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens, without the end token.
    pub tokens: Vec<usize>,
    /// Sum of the chosen per-step log-probabilities, end token included.
    pub log_prob: f64,
    /// Ended with the end token rather than at the length cap.
    pub finished: bool,
}

fn argmax_lowest(lp: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in lp.iter().enumerate() {
        if v == f64::NEG_INFINITY || v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| v > lp[b]) {
            best = Some(i);
        }
    }
    best
}

/// Argmax decoding; ties go to the lowest token id. Stops at the end token
/// or after `max_len` emitted tokens.
pub fn greedy<M: StepModel>(model: &M, max_len: usize) -> Result<Hypothesis> {
    let mut state = model.start()?;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while hyp.tokens.len() < max_len {
        let lp = model.log_probs(&state)?;
        let tok = argmax_lowest(&lp).ok_or_else(|| Error::invalid("model forbids every token"))?;
        hyp.log_prob += lp[tok];
        if tok == model.eos() {
            hyp.finished = true;
            return Ok(hyp);
        }
        hyp.tokens.push(tok);
        if hyp.tokens.len() < max_len {
            model.advance(&mut state, tok)?;
        }
    }
    Ok(hyp)
}

/// Beam search without length normalization. Each round the pool of
/// completed hypotheses and fresh expansions is cut to the `width` best;
/// search ends once every kept hypothesis is complete (end token or length
/// cap). Width 1 reproduces [`greedy`].
pub fn beam<M: StepModel>(model: &M, width: usize, max_len: usize) -> Result<Hypothesis> {
    if width == 0 {
        return Err(Error::invalid("beam width must be at least 1"));
    }
    let root = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    // (hypothesis, stopped, state after its last token)
    let mut kept: Vec<(Hypothesis, bool, Option<M::State>)> =
        vec![(root, max_len == 0, Some(model.start()?))];
    while kept.iter().any(|(_, stopped, _)| !stopped) {
        // (hypothesis, stopped, parent index, appended token)
        let mut pool: Vec<(Hypothesis, bool, Option<usize>, Option<usize>)> = Vec::new();
        for (idx, (h, stopped, state)) in kept.iter().enumerate() {
            let Some(state) = state.as_ref().filter(|_| !stopped) else {
                pool.push((h.clone(), true, None, None));
                continue;
            };
            let lp = model.log_probs(state)?;
            for (tok, &v) in lp.iter().enumerate() {
                if v == f64::NEG_INFINITY || v.is_nan() {
                    continue;
                }
                let mut next = h.clone();
                next.log_prob += v;
                if tok == model.eos() {
                    next.finished = true;
                    pool.push((next, true, None, None));
                } else {
                    next.tokens.push(tok);
                    let capped = next.tokens.len() >= max_len;
                    pool.push((next, capped, Some(idx), Some(tok)));
                }
            }
        }
        // stable sort keeps expansion order (lowest token id first) on ties
        pool.sort_by(|a, b| b.0.log_prob.total_cmp(&a.0.log_prob));
        pool.truncate(width);
        let mut next_kept = Vec::with_capacity(pool.len());
        for (h, stopped, parent, tok) in pool {
            let state = match (parent, tok) {
                (Some(p), Some(t)) if !stopped => {
                    let mut s = kept[p].2.clone().expect("open parent carries state");
                    model.advance(&mut s, t)?;
                    Some(s)
                }
                _ => None,
            };
            next_kept.push((h, stopped, state));
        }
        kept = next_kept;
    }
    kept.into_iter()
        .map(|(h, _, _)| h)
        .reduce(|a, b| if b.log_prob > a.log_prob { b } else { a })
        .ok_or_else(|| Error::invalid("beam emptied"))
}

/// Ancestral sampling from `softmax(log_probs / temperature)`.
pub fn sample<M: StepModel>(
    model: &M,
    max_len: usize,
    temperature: f64,
    rng: &mut Rng,
) -> Result<Hypothesis> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!(
            "sampling temperature must be positive, got {temperature}"
        )));
    }
    let mut state = model.start()?;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while hyp.tokens.len() < max_len {
        let lp = model.log_probs(&state)?;
        let mut p: Vec<f64> = lp.iter().map(|&v| v / temperature).collect();
        softmax_in_place(&mut p);
        let tok = draw(&p, rng);
        hyp.log_prob += lp[tok];
        if tok == model.eos() {
            hyp.finished = true;
            return Ok(hyp);
        }
        hyp.tokens.push(tok);
        if hyp.tokens.len() < max_len {
            model.advance(&mut state, tok)?;
        }
    }
    Ok(hyp)
}

/// Index drawn from a probability vector by inverse CDF; zero-probability
/// entries are never chosen.
pub fn draw(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi <= 0.0 {
            continue;
        }
        acc += pi;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Log-probability a step model assigns to `tokens`, optionally followed by
/// the end token.
pub fn sequence_log_prob<M: StepModel>(model: &M, tokens: &[usize], with_eos: bool) -> Result<f64> {
    let mut state = model.start()?;
    let mut total = 0.0;
    for (i, &t) in tokens.iter().enumerate() {
        total += model.log_probs(&state)?[t];
        if i + 1 < tokens.len() || with_eos {
            model.advance(&mut state, t)?;
        }
    }
    if with_eos {
        total += model.log_probs(&state)?[model.eos()];
    }
    Ok(total)
}

fn to_sequence(h: Hypothesis) -> TokenSequence {
    TokenSequence::new(h.tokens)
}

pub fn generate_greedy(decoder: &ArDecoder, cond: &[f64], max_len: usize) -> Result<TokenSequence> {
    Ok(to_sequence(greedy(
        &decoder.conditioned(cond)?,
        max_len.min(decoder.max_len),
    )?))
}

pub fn generate_beam(
    decoder: &ArDecoder,
    cond: &[f64],
    width: usize,
    max_len: usize,
) -> Result<TokenSequence> {
    Ok(to_sequence(beam(
        &decoder.conditioned(cond)?,
        width,
        max_len.min(decoder.max_len),
    )?))
}

pub fn sample_temperature(
    decoder: &ArDecoder,
    cond: &[f64],
    max_len: usize,
    temperature: f64,
    rng: &mut Rng,
) -> Result<TokenSequence> {
    Ok(to_sequence(sample(
        &decoder.conditioned(cond)?,
        max_len.min(decoder.max_len),
        temperature,
        rng,
    )?))
}
