//! Contrastive objectives against direct scalar evaluations.

#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use seqdesign::clap::{ebm_nce_from_energies, energy, energy_matrix, infonce_from_energies};
use seqdesign::config::ModelConfig;
use seqdesign::decoder_ar::{ar_loss, ArDecoder};
use seqdesign::nn::seeded_rng;
use seqdesign::tokenizer::encode_protein;
use seqdesign::Tensor;

fn ln_sigmoid(x: f64) -> f64 {
    -(1.0 + (-x).exp()).ln()
}

fn naive_ebm_nce(e: &[Vec<f64>]) -> f64 {
    let b = e.len();
    let mut pos = 0.0;
    let mut neg = 0.0;
    for i in 0..b {
        pos += ln_sigmoid(e[i][i]);
        for j in 0..b {
            if i != j {
                neg += ln_sigmoid(-e[i][j]);
            }
        }
    }
    let pos = pos / b as f64;
    let neg = neg / (b * (b - 1)) as f64;
    -(pos + neg)
}

fn naive_infonce(e: &[Vec<f64>]) -> f64 {
    let b = e.len();
    let lse = |v: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = v.collect();
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    };
    let mut rows = 0.0;
    let mut cols = 0.0;
    for i in 0..b {
        rows += lse(&mut (0..b).map(|j| e[i][j])) - e[i][i];
        cols += lse(&mut (0..b).map(|j| e[j][i])) - e[i][i];
    }
    (rows + cols) / (2.0 * b as f64)
}

fn to_tensor(e: &[Vec<f64>]) -> Tensor {
    let b = e.len();
    Tensor::new(e.concat(), &[b, b]).unwrap()
}

fn matrix(b: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-6.0..6.0f64, b), b)
}

pub fn zero_energies_give_reference_values() {
    for b in 2..10 {
        let zeros = vec![vec![0.0; b]; b];
        let e = to_tensor(&zeros);
        assert!((ebm_nce_from_energies(&e).unwrap().item() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((infonce_from_energies(&e).unwrap().item() - (b as f64).ln()).abs() < 1e-12);
    }
}

pub fn uniform_decoder_logits_cost_ln_30_per_token() {
    let cfg = ModelConfig {
        d_model: 8,
        d_latent: 4,
        depth: 1,
        heads: 2,
        max_protein_len: 16,
        ..Default::default()
    };
    let dec = ArDecoder::new(&cfg, &mut seeded_rng(8)).unwrap();
    dec.out.weight.data_mut().fill(0.0);
    dec.out.bias.data_mut().fill(0.0);
    let a = encode_protein("MKVLA", None, false).unwrap().ids;
    let b = encode_protein("WWCCHHM", None, false).unwrap().ids;
    let (ca, cb) = ([0.5; 4], [-1.0; 4]);
    let batch: Vec<(&[f64], &[usize])> = vec![(&ca, &a), (&cb, &b)];
    assert!((ar_loss(&dec, &batch).unwrap().item() - 30f64.ln()).abs() < 1e-9);
}

#[test]
fn single_pair_batches_are_rejected() {
    let e = to_tensor(&[vec![1.0]]);
    assert!(ebm_nce_from_energies(&e).is_err());
    assert!(infonce_from_energies(&e).is_err());
}

proptest! {
    #[test]
    fn ebm_nce_matches_direct_sum(e in (2usize..7).prop_flat_map(matrix)) {
        let got = ebm_nce_from_energies(&to_tensor(&e)).unwrap().item();
        prop_assert!((got - naive_ebm_nce(&e)).abs() < 1e-10);
    }

    #[test]
    fn infonce_matches_direct_sum(e in (2usize..7).prop_flat_map(matrix)) {
        let got = infonce_from_energies(&to_tensor(&e)).unwrap().item();
        prop_assert!((got - naive_infonce(&e)).abs() < 1e-10);
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn energy_is_a_scaled_inner_product(
        pair in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 1..12),
        tau in prop_oneof![Just(0.0), 0.05..2.0f64],
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pair.into_iter().unzip();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let want = if tau == 0.0 { dot } else { dot / tau };
        let got = energy(&Tensor::from_vec(a.clone()), &Tensor::from_vec(b.clone()), tau).unwrap().item();
        prop_assert!((got - want).abs() < 1e-9 * want.abs().max(1.0));
        let d = a.len();
        let m = energy_matrix(&Tensor::new(a.repeat(2), &[2, d]).unwrap(), &Tensor::new(b.repeat(2), &[2, d]).unwrap(), tau).unwrap();
        for v in m.to_vec() {
            prop_assert!((v - want).abs() < 1e-9 * want.abs().max(1.0));
        }
    }
}

mod cases {
    #[test]
    fn zero_energies_give_reference_values() {
        super::zero_energies_give_reference_values()
    }

    #[test]
    fn uniform_decoder_logits_cost_ln_30_per_token() {
        super::uniform_decoder_logits_cost_ln_30_per_token()
    }
}
