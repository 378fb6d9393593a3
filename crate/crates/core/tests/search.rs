//! Beam search against exhaustive enumeration on small toy models.

use proptest::prelude::*;
use rand::Rng as _;
use seqdesign::decoder_ar::{beam, greedy, sequence_log_prob, StepModel};
use seqdesign::nn::seeded_rng;
use seqdesign::Result;

const VOCAB: usize = 4;
const EOS: usize = 3;
const MAX_LEN: usize = 3;

/// Next-token distribution is a fixed random function of the prefix.
struct Toy {
    seed: u64,
}

impl StepModel for Toy {
    type State = Vec<usize>;

    fn start(&self) -> Result<Vec<usize>> {
        Ok(Vec::new())
    }

    fn log_probs(&self, prefix: &Vec<usize>) -> Result<Vec<f64>> {
        let key = prefix
            .iter()
            .fold(self.seed.wrapping_mul(31).wrapping_add(7), |h, &t| {
                h.wrapping_mul(5).wrapping_add(t as u64 + 1)
            });
        let mut rng = seeded_rng(key);
        let w: Vec<f64> = (0..VOCAB).map(|_| rng.random_range(0.05..1.0)).collect();
        let z: f64 = w.iter().sum();
        Ok(w.iter().map(|v| (v / z).ln()).collect())
    }

    fn advance(&self, prefix: &mut Vec<usize>, token: usize) -> Result<()> {
        prefix.push(token);
        Ok(())
    }

    fn eos(&self) -> usize {
        EOS
    }
}

/// Every complete output: `s + EOS` for `|s| < MAX_LEN`, and capped `s`
/// with `|s| = MAX_LEN`, where `s` ranges over non-end tokens.
fn enumerate(model: &Toy) -> Vec<(Vec<usize>, f64, bool)> {
    let mut out = Vec::new();
    let mut frontier = vec![Vec::new()];
    for len in 0..=MAX_LEN {
        let mut next = Vec::new();
        for s in frontier {
            if len < MAX_LEN {
                out.push((s.clone(), sequence_log_prob(model, &s, true).unwrap(), true));
                for t in 0..VOCAB {
                    if t != EOS {
                        let mut c: Vec<usize> = s.clone();
                        c.push(t);
                        next.push(c);
                    }
                }
            } else {
                out.push((
                    s.clone(),
                    sequence_log_prob(model, &s, false).unwrap(),
                    false,
                ));
            }
        }
        frontier = next;
    }
    out
}

pub fn wide_beam_finds_the_exhaustive_argmax() {
    for seed in 0..500 {
        let model = Toy { seed };
        let all = enumerate(&model);
        assert_eq!(all.len(), 1 + 3 + 9 + 27);
        let best = all.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        let got = beam(&model, 64, MAX_LEN).unwrap();
        assert!(
            (got.log_prob - best).abs() < 1e-12,
            "seed {seed}: {} vs {best}",
            got.log_prob
        );
        let matching = all
            .iter()
            .find(|c| c.0 == got.tokens && c.2 == got.finished)
            .unwrap();
        assert!((matching.1 - got.log_prob).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn beam_score_never_drops_as_width_grows(seed in any::<u64>()) {
        let model = Toy { seed };
        let narrow = beam(&model, 1, MAX_LEN).unwrap();
        let wide = beam(&model, 64, MAX_LEN).unwrap();
        prop_assert!(wide.log_prob >= narrow.log_prob - 1e-12);
        let g = greedy(&model, MAX_LEN).unwrap();
        prop_assert_eq!(narrow.tokens, g.tokens);
        prop_assert!((narrow.log_prob - g.log_prob).abs() < 1e-12);
    }
}

mod cases {
    #[test]
    fn wide_beam_finds_the_exhaustive_argmax() {
        super::wide_beam_finds_the_exhaustive_argmax()
    }
}
