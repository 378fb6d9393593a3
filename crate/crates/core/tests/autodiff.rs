//! Central finite differences against reverse-mode gradients for every
//! differentiable operation and for the composite network blocks.

#![allow(clippy::needless_range_loop)]

use rand::Rng as _;
use seqdesign::clap::{ebm_nce_loss, infonce_loss};
use seqdesign::nn::{
    seeded_rng, AttentionBlock, Linear, MixerKind, MixerSpec, MixerStack, Module, RecurrentBlock,
    Rng,
};
use seqdesign::tensor::no_grad;
use seqdesign::{Result, Tensor};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 50;

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= TOL * analytic.abs().max(numeric.abs()).max(1.0)
}

/// Values in `[-2, 2]` kept at least `gap` away from zero so that kinks
/// and poles stay outside the difference stencil.
fn values(rng: &mut Rng, n: usize, gap: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(-2.0..2.0);
            if v.abs() < gap {
                gap.copysign(v) + v
            } else {
                v
            }
        })
        .collect()
}

fn dims(rng: &mut Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..=4)).collect()
}

/// Reduces any output to a scalar through a fixed random projection so
/// that every Jacobian entry contributes.
fn project(out: &Tensor, weights: &[f64]) -> Result<Tensor> {
    let w = Tensor::new(weights[..out.numel()].to_vec(), out.shape())?;
    Ok(out.mul(&w)?.sum())
}

fn check<F>(name: &str, inputs: &[(Vec<f64>, Vec<usize>)], f: F, rng: &mut Rng)
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let weights: Vec<f64> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
    let params: Vec<Tensor> = inputs
        .iter()
        .map(|(d, s)| Tensor::param(d.clone(), s).unwrap())
        .collect();
    let loss = project(&f(&params).unwrap(), &weights).unwrap();
    loss.backward().unwrap();
    let value = |ts: &[Tensor]| no_grad(|| project(&f(ts).unwrap(), &weights).unwrap().item());
    for (k, (data, shape)) in inputs.iter().enumerate() {
        let grad = params[k].grad().unwrap_or_else(|| vec![0.0; data.len()]);
        for j in 0..data.len() {
            let probe = |delta: f64| {
                let ts: Vec<Tensor> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, (d, s))| {
                        let mut d = d.clone();
                        if i == k {
                            d[j] += delta;
                        }
                        Tensor::new(d, s).unwrap()
                    })
                    .collect();
                value(&ts)
            };
            let numeric = (probe(H) - probe(-H)) / (2.0 * H);
            assert!(
                close(grad[j], numeric),
                "{name}: input {k} entry {j} shape {shape:?}: analytic {} vs numeric {numeric}",
                grad[j]
            );
        }
    }
}

fn unary(name: &str, gap: f64, positive: bool, f: fn(&Tensor) -> Result<Tensor>) {
    for seed in 0..SEEDS {
        let mut rng = seeded_rng(seed);
        let rank = rng.random_range(1..=3);
        let shape = dims(&mut rng, rank);
        let n: usize = shape.iter().product();
        let mut x = values(&mut rng, n, gap);
        if positive {
            x.iter_mut().for_each(|v| *v = v.abs() + 0.1);
        }
        check(name, &[(x, shape)], |t| f(&t[0]), &mut rng);
    }
}

pub fn elementwise_unary() {
    unary("neg", 0.0, false, |x| Ok(x.neg()));
    unary("scale", 0.0, false, |x| Ok(x.scale(-1.7)));
    unary("add_scalar", 0.0, false, |x| Ok(x.add_scalar(0.3)));
    unary("exp", 0.0, false, |x| Ok(x.exp()));
    unary("log", 0.0, true, |x| x.log());
    unary("sigmoid", 0.0, false, |x| Ok(x.sigmoid()));
    unary("log_sigmoid", 0.0, false, |x| Ok(x.log_sigmoid()));
    unary("tanh", 0.0, false, |x| Ok(x.tanh()));
    unary("relu", 1e-2, false, |x| Ok(x.relu()));
    unary("square", 0.0, false, |x| Ok(x.square()));
}

pub fn reductions_and_normalizations() {
    unary("sum", 0.0, false, |x| Ok(x.sum()));
    unary("mean", 0.0, false, |x| Ok(x.mean()));
    unary("sq_norm", 0.0, false, |x| Ok(x.sq_norm()));
    unary("softmax", 0.0, false, |x| Ok(x.softmax()));
    unary("log_softmax", 0.0, false, |x| Ok(x.log_softmax()));
    for seed in 0..SEEDS {
        let mut rng = seeded_rng(1000 + seed);
        let shape = vec![rng.random_range(1..=4), rng.random_range(2..=5)];
        let x = values(&mut rng, shape[0] * shape[1], 0.0);
        check(
            "layer_norm",
            &[(x.clone(), shape.clone())],
            |t| Ok(t[0].layer_norm(1e-5)),
            &mut rng,
        );
        let axis = rng.random_range(0..2);
        check(
            "sum_axis",
            &[(x.clone(), shape.clone())],
            |t| t[0].sum_axis(axis),
            &mut rng,
        );
        check(
            "mean_axis",
            &[(x.clone(), shape.clone())],
            |t| t[0].mean_axis(axis),
            &mut rng,
        );
        let lead = rng.random_range(1..=3);
        let target = [vec![lead], shape.clone()].concat();
        check(
            "broadcast_to",
            &[(x, shape)],
            |t| t[0].broadcast_to(&target),
            &mut rng,
        );
    }
}

pub fn binary_with_broadcasting() {
    for seed in 0..SEEDS {
        let mut rng = seeded_rng(2000 + seed);
        let rank = rng.random_range(1..=3);
        let shape = dims(&mut rng, rank);
        let n: usize = shape.iter().product();
        // a suffix of `shape` broadcasts over the leading axes
        let cut = rng.random_range(0..rank);
        let suffix = shape[cut..].to_vec();
        let m: usize = suffix.iter().product();
        let a = values(&mut rng, n, 0.0);
        let b = values(&mut rng, m, 0.3);
        let ins = [(a.clone(), shape.clone()), (b.clone(), suffix.clone())];
        check("add", &ins, |t| t[0].add(&t[1]), &mut rng);
        check("sub", &ins, |t| t[0].sub(&t[1]), &mut rng);
        check("mul", &ins, |t| t[0].mul(&t[1]), &mut rng);
        check("div", &ins, |t| t[0].div(&t[1]), &mut rng);
        let rev = [(b, suffix), (a, shape)];
        check("sub (lhs broadcast)", &rev, |t| t[0].sub(&t[1]), &mut rng);
    }
}

pub fn products_and_similarities() {
    for seed in 0..SEEDS {
        let mut rng = seeded_rng(3000 + seed);
        let (m, k, n) = (
            rng.random_range(1..=4),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        );
        let a = values(&mut rng, m * k, 0.0);
        let b = values(&mut rng, k * n, 0.0);
        check(
            "matmul",
            &[(a.clone(), vec![m, k]), (b, vec![k, n])],
            |t| t[0].matmul(&t[1]),
            &mut rng,
        );
        check("t", &[(a, vec![m, k])], |t| t[0].t(), &mut rng);
        let len = rng.random_range(2..=6);
        let u = values(&mut rng, len, 0.1);
        let v = values(&mut rng, len, 0.1);
        let ins = [(u, vec![len]), (v, vec![len])];
        check("dot", &ins, |t| t[0].dot(&t[1]), &mut rng);
        check(
            "cosine_similarity",
            &ins,
            |t| t[0].cosine_similarity(&t[1]),
            &mut rng,
        );
    }
}

pub fn shape_and_indexing_ops() {
    for seed in 0..SEEDS {
        let mut rng = seeded_rng(4000 + seed);
        let (r, c) = (rng.random_range(2..=4), rng.random_range(2..=4));
        let x = values(&mut rng, r * c, 0.0);
        let y = values(&mut rng, r * c, 0.0);
        let shape = vec![r, c];
        check(
            "reshape",
            &[(x.clone(), shape.clone())],
            |t| t[0].reshape(&[c, r]),
            &mut rng,
        );
        let axis = rng.random_range(0..2);
        check(
            "concat",
            &[(x.clone(), shape.clone()), (y, shape.clone())],
            |t| Tensor::concat(&[t[0].clone(), t[1].clone()], axis),
            &mut rng,
        );
        let end = shape[axis];
        let start = rng.random_range(0..end);
        check(
            "slice",
            &[(x.clone(), shape.clone())],
            |t| t[0].slice(axis, start, end),
            &mut rng,
        );
        let ids: Vec<usize> = (0..5).map(|_| rng.random_range(0..r)).collect();
        check(
            "embedding",
            &[(x.clone(), shape.clone())],
            |t| t[0].embedding(&ids),
            &mut rng,
        );
        let cols: Vec<usize> = (0..r).map(|_| rng.random_range(0..c)).collect();
        check(
            "gather_cols",
            &[(x.clone(), shape.clone())],
            |t| t[0].gather_cols(&cols),
            &mut rng,
        );
        let mut targets: Vec<usize> = (0..r).map(|_| rng.random_range(0..c)).collect();
        check(
            "cross_entropy",
            &[(x.clone(), shape.clone())],
            |t| t[0].cross_entropy(&targets, None),
            &mut rng,
        );
        targets[0] = c + 1;
        check(
            "cross_entropy (ignored row)",
            &[(x, shape)],
            |t| t[0].cross_entropy(&targets, Some(c + 1)),
            &mut rng,
        );
    }
}

pub fn contrastive_losses() {
    for seed in 0..SEEDS {
        let mut rng = seeded_rng(5000 + seed);
        let (b, d) = (rng.random_range(2..=4), rng.random_range(1..=4));
        let zt = values(&mut rng, b * d, 0.0);
        let zp = values(&mut rng, b * d, 0.0);
        let ins = [(zt, vec![b, d]), (zp, vec![b, d])];
        let tau = if seed % 2 == 0 { 0.5 } else { 0.0 };
        check(
            "ebm_nce",
            &ins,
            |t| ebm_nce_loss(&t[0], &t[1], tau),
            &mut rng,
        );
        check(
            "infonce",
            &ins,
            |t| infonce_loss(&t[0], &t[1], tau),
            &mut rng,
        );
    }
}

/// Checks the gradient of every parameter of `module` under `loss`.
fn check_module(name: &str, module: &dyn Module, loss: &dyn Fn() -> Result<Tensor>) {
    let params = module.named_params(name);
    for (_, p) in &params {
        p.zero_grad();
    }
    loss().unwrap().backward().unwrap();
    for (pname, p) in &params {
        let grad = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        for j in 0..p.numel() {
            let orig = p.data()[j];
            p.data_mut()[j] = orig + H;
            let up = no_grad(|| loss().unwrap().item());
            p.data_mut()[j] = orig - H;
            let down = no_grad(|| loss().unwrap().item());
            p.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * H);
            assert!(
                close(grad[j], numeric),
                "{pname}[{j}]: analytic {} vs numeric {numeric}",
                grad[j]
            );
        }
    }
}

pub fn network_blocks() {
    for seed in 0..10 {
        let mut rng = seeded_rng(6000 + seed);
        let len = rng.random_range(2..=4);
        let x = Tensor::new(values(&mut rng, len * 4, 0.0), &[len, 4]).unwrap();
        let w = Tensor::new(values(&mut rng, len * 4, 0.0), &[len, 4]).unwrap();

        let lin = Linear::new(4, 4, &mut rng);
        check_module("linear", &lin, &|| {
            Ok(lin.forward(&x)?.tanh().mul(&w)?.sum())
        });

        let attn = AttentionBlock::new(4, 2, 2, &mut rng).unwrap();
        let mask = seqdesign::nn::attention_mask(len, seed % 2 == 0, None);
        check_module("attention", &attn, &|| {
            Ok(attn.forward(&x, mask.as_ref())?.mul(&w)?.sum())
        });

        let rec = RecurrentBlock::new(4, seed % 2 == 1, &mut rng);
        check_module("recurrent", &rec, &|| Ok(rec.forward(&x)?.mul(&w)?.sum()));

        let kind = if seed % 2 == 0 {
            MixerKind::Attention
        } else {
            MixerKind::Recurrent
        };
        let stack = MixerStack::new(
            MixerSpec {
                kind,
                dim: 4,
                depth: 2,
                heads: 2,
                ff_mult: 2,
                causal: seed % 3 == 0,
                bidirectional: true,
            },
            &mut rng,
        )
        .unwrap();
        check_module("stack", &stack, &|| {
            Ok(stack.forward(&x, None)?.mul(&w)?.sum())
        });
    }
}

mod cases {
    #[test]
    fn elementwise_unary() {
        super::elementwise_unary()
    }

    #[test]
    fn reductions_and_normalizations() {
        super::reductions_and_normalizations()
    }

    #[test]
    fn binary_with_broadcasting() {
        super::binary_with_broadcasting()
    }

    #[test]
    fn products_and_similarities() {
        super::products_and_similarities()
    }

    #[test]
    fn shape_and_indexing_ops() {
        super::shape_and_indexing_ops()
    }

    #[test]
    fn contrastive_losses() {
        super::contrastive_losses()
    }

    #[test]
    fn network_blocks() {
        super::network_blocks()
    }
}
