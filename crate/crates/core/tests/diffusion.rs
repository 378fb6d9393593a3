//! Absorbing-state diffusion: closed forms against brute-force Markov chain
//! algebra, and sampler behaviour against exact chain enumeration.

#![allow(clippy::needless_range_loop)]

use rand::Rng as _;
use seqdesign::config::ModelConfig;
use seqdesign::diffusion::{
    diffusion_loss, sample_simplified, sample_weighted, Denoiser, TransitionNetwork,
};
use seqdesign::nn::{seeded_rng, MixerKind, Rng};
use seqdesign::tokenizer::{encode_protein, MASK, PROTEIN_VOCAB_SIZE};
use seqdesign::{Result, Schedule};

type Matrix = Vec<Vec<f64>>;

/// One forward step built straight from its definition: keep the token
/// with probability `1 - beta`, jump to the mask otherwise.
fn step_matrix(beta: f64, vocab: usize, mask: usize) -> Matrix {
    (0..vocab)
        .map(|i| {
            (0..vocab)
                .map(|j| {
                    let stay = if i == j { 1.0 - beta } else { 0.0 };
                    let absorb = if j == mask { beta } else { 0.0 };
                    stay + absorb
                })
                .collect()
        })
        .collect()
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

fn identity(n: usize) -> Matrix {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn random_schedule(rng: &mut Rng, max_steps: usize, max_vocab: usize) -> (Vec<f64>, usize, usize) {
    let steps = rng.random_range(1..=max_steps);
    let vocab = rng.random_range(2..=max_vocab);
    let mask = rng.random_range(0..vocab);
    let mut betas: Vec<f64> = (0..steps).map(|_| rng.random_range(0.01..1.0)).collect();
    betas.sort_by(f64::total_cmp);
    (betas, vocab, mask)
}

pub fn cumulative_matches_iterated_product() {
    let mut rng = seeded_rng(0);
    for _ in 0..100 {
        let (betas, vocab, mask) = random_schedule(&mut rng, 12, 7);
        let s = Schedule::new(betas.clone(), vocab, mask).unwrap();
        let mut product = identity(vocab);
        for i in 0..vocab {
            for j in 0..vocab {
                assert_eq!(s.q_bar(0, i, j).unwrap(), product[i][j]);
            }
        }
        for t in 1..=betas.len() {
            product = matmul(&product, &step_matrix(betas[t - 1], vocab, mask));
            let closed = s.cumulative_transition(t).unwrap();
            for i in 0..vocab {
                for j in 0..vocab {
                    assert!(
                        (closed[i][j] - product[i][j]).abs() < 1e-12,
                        "t={t} ({i},{j})"
                    );
                    assert_eq!(s.q_bar(t, i, j).unwrap(), closed[i][j]);
                }
            }
        }
    }
}

/// `p(x_t = k | x_{t+1} = j, x_0)` by summing over every trajectory
/// `x_1 .. x_{t+1}` of the chain.
fn bayes_posterior(
    betas: &[f64],
    vocab: usize,
    mask: usize,
    x0: usize,
    t: usize,
    j: usize,
) -> Option<Vec<f64>> {
    let steps: Vec<Matrix> = betas.iter().map(|&b| step_matrix(b, vocab, mask)).collect();
    let mut joint = vec![0.0; vocab];
    let mut path = vec![0usize; t + 1];
    let paths = vocab.pow(t as u32 + 1);
    for code in 0..paths {
        let mut c = code;
        for p in path.iter_mut() {
            *p = c % vocab;
            c /= vocab;
        }
        // path[s] is x_{s+1}
        if path[t] != j {
            continue;
        }
        let mut prob = 1.0;
        let mut prev = x0;
        for (s, &x) in path.iter().enumerate() {
            prob *= steps[s][prev][x];
            prev = x;
        }
        let x_t = if t == 0 { x0 } else { path[t - 1] };
        joint[x_t] += prob;
    }
    let z: f64 = joint.iter().sum();
    (z > 0.0).then(|| joint.iter().map(|v| v / z).collect())
}

pub fn posterior_matches_exhaustive_bayes() {
    let mut rng = seeded_rng(1);
    let mut checked = 0;
    for _ in 0..40 {
        let (betas, vocab, mask) = random_schedule(&mut rng, 4, 5);
        let s = Schedule::new(betas.clone(), vocab, mask).unwrap();
        for t in 0..betas.len() {
            for x0 in 0..vocab {
                for j in 0..vocab {
                    match bayes_posterior(&betas, vocab, mask, x0, t, j) {
                        Some(oracle) => {
                            let got = s.posterior(j, x0, t).unwrap();
                            for k in 0..vocab {
                                assert!(
                                    (got[k] - oracle[k]).abs() < 1e-10,
                                    "x0={x0} t={t} j={j} k={k}"
                                );
                            }
                            checked += 1;
                        }
                        None => assert!(s.posterior(j, x0, t).is_err()),
                    }
                }
            }
        }
    }
    assert!(checked > 500);
}

#[test]
fn unmask_and_stay_probabilities() {
    let s = Schedule::linear(5, 4, 3).unwrap();
    for t in 0..5 {
        let p = s.posterior(3, 1, t).unwrap();
        let (ab_t, ab_next) = (s.alpha_bar(t).unwrap(), s.alpha_bar(t + 1).unwrap());
        let beta = s.beta(t + 1).unwrap();
        assert!((p[1] - beta * ab_t / (1.0 - ab_next)).abs() < 1e-12);
        assert!((p[3] - (1.0 - ab_t) / (1.0 - ab_next)).abs() < 1e-12);
    }
    assert_eq!(s.posterior(3, 1, 0).unwrap()[1], 1.0);
}

struct Table {
    /// `rows[t]` is the clean-token distribution predicted at time `t`.
    rows: Vec<Vec<f64>>,
}

impl Denoiser for Table {
    fn predict(&self, x_t: &[usize], t: usize) -> Result<Vec<Vec<f64>>> {
        Ok(vec![self.rows[t].clone(); x_t.len()])
    }
}

pub fn samplers_finish_mask_free_in_t_steps() {
    let cfg = ModelConfig {
        d_model: 8,
        d_latent: 4,
        depth: 1,
        heads: 2,
        max_protein_len: 8,
        ..Default::default()
    };
    let steps = 6;
    let schedule = Schedule::linear(steps, PROTEIN_VOCAB_SIZE, MASK).unwrap();
    let mut rng = seeded_rng(2);
    let net = TransitionNetwork::new(&cfg, steps, MixerKind::Attention, &mut rng).unwrap();
    let cond = [0.3, -0.2, 0.1, 0.9];
    let denoiser = net.conditioned(&cond);
    for run in 0..1000u64 {
        let mut rng = seeded_rng(run);
        let len = 1 + (run as usize % 6);
        for trace in [
            sample_simplified(&denoiser, &schedule, len, &mut rng).unwrap(),
            sample_weighted(&denoiser, &schedule, len, &mut rng).unwrap(),
        ] {
            assert_eq!(trace.steps, steps);
            assert_eq!(trace.filled.len(), steps);
            assert_eq!(trace.tokens.len(), len);
            assert!(!trace.tokens.contains(&MASK));
            assert_eq!(trace.filled.iter().sum::<usize>(), len);
        }
    }
}

/// Exact distribution of the weighted sampler's output for one position,
/// by forward dynamic programming over `{clean tokens, mask}`.
fn weighted_chain(betas: &[f64], vocab: usize, mask: usize, table: &Table) -> Vec<f64> {
    let steps = betas.len();
    let step_mats: Vec<Matrix> = betas.iter().map(|&b| step_matrix(b, vocab, mask)).collect();
    let mut cum = vec![identity(vocab)];
    for m in &step_mats {
        let next = matmul(cum.last().unwrap(), m);
        cum.push(next);
    }
    let mut dist = vec![0.0; vocab];
    dist[mask] = 1.0;
    for t in (0..steps).rev() {
        let mut next = vec![0.0; vocab];
        for (k, &p) in dist.iter().enumerate() {
            if k != mask {
                next[k] += p;
            }
        }
        let p_x0 = &table.rows[t + 1];
        let mut mix = vec![0.0; vocab];
        let mut mass = 0.0;
        for (x0, &w) in p_x0.iter().enumerate() {
            if x0 == mask || w == 0.0 {
                continue;
            }
            let joint: Vec<f64> = (0..vocab)
                .map(|k| cum[t][x0][k] * step_mats[t][k][mask])
                .collect();
            let z: f64 = joint.iter().sum();
            mass += w;
            for k in 0..vocab {
                mix[k] += w * joint[k] / z;
            }
        }
        for k in 0..vocab {
            next[k] += dist[mask] * mix[k] / mass;
        }
        dist = next;
    }
    dist
}

pub fn weighted_sampler_matches_chain_enumeration() {
    let (vocab, mask) = (3, 2);
    let betas = vec![0.3, 0.5, 0.6, 1.0];
    let schedule = Schedule::new(betas.clone(), vocab, mask).unwrap();
    let table = Table {
        rows: vec![
            vec![0.5, 0.5, 0.0],
            vec![0.9, 0.1, 0.0],
            vec![0.2, 0.8, 0.0],
            vec![0.6, 0.4, 0.0],
            vec![0.35, 0.65, 0.0],
        ],
    };
    let exact = weighted_chain(&betas, vocab, mask, &table);
    assert!((exact.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(exact[mask], 0.0);
    let n = 100_000;
    let mut counts = [0usize; 3];
    let mut rng = seeded_rng(3);
    for _ in 0..n {
        counts[sample_weighted(&table, &schedule, 1, &mut rng)
            .unwrap()
            .tokens[0]] += 1;
    }
    for k in 0..2 {
        let freq = counts[k] as f64 / n as f64;
        let sigma = (exact[k] * (1.0 - exact[k]) / n as f64).sqrt();
        assert!(
            (freq - exact[k]).abs() <= 3.0 * sigma,
            "token {k}: {freq} vs {}",
            exact[k]
        );
    }
}

pub fn uniform_logits_cost_ln_30_per_masked_token() {
    let cfg = ModelConfig {
        d_model: 8,
        d_latent: 4,
        depth: 1,
        heads: 2,
        max_protein_len: 16,
        ..Default::default()
    };
    let mut rng = seeded_rng(4);
    let net = TransitionNetwork::new(&cfg, 10, MixerKind::Recurrent, &mut rng).unwrap();
    net.out.weight.data_mut().fill(0.0);
    net.out.bias.data_mut().fill(0.0);
    let schedule = Schedule::linear(10, PROTEIN_VOCAB_SIZE, MASK).unwrap();
    let x0 = encode_protein("MKVLAAGHWY", None, false).unwrap().ids;
    let cond = [0.1; 4];
    let batch: Vec<(&[f64], &[usize])> = vec![(&cond, &x0); 8];
    let (loss, masked) = diffusion_loss(&net, &batch, &schedule, &mut rng).unwrap();
    assert!(masked > 0);
    assert!((loss.item() - 30f64.ln()).abs() < 1e-9);
}

mod cases {
    #[test]
    fn cumulative_matches_iterated_product() {
        super::cumulative_matches_iterated_product()
    }

    #[test]
    fn posterior_matches_exhaustive_bayes() {
        super::posterior_matches_exhaustive_bayes()
    }

    #[test]
    fn samplers_finish_mask_free_in_t_steps() {
        super::samplers_finish_mask_free_in_t_steps()
    }

    #[test]
    fn weighted_sampler_matches_chain_enumeration() {
        super::weighted_sampler_matches_chain_enumeration()
    }

    #[test]
    fn uniform_logits_cost_ln_30_per_masked_token() {
        super::uniform_logits_cost_ln_30_per_masked_token()
    }
}
