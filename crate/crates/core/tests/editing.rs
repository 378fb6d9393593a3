//! Spherical interpolation geometry and the latent objective's closed-form
//! minimizer.

use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use seqdesign::editing::{optimize_latent, slerp};
use seqdesign::nn::seeded_rng;
use seqdesign::Tensor;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn angle(a: &[f64], b: &[f64]) -> f64 {
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm(a) * norm(b));
    c.clamp(-1.0, 1.0).acos()
}

fn vector(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, d).prop_filter("non-zero", |v| norm(v) > 1e-3)
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..10)
        .prop_flat_map(|d| (vector(d), vector(d)))
        .prop_filter("not antipodal or parallel", |(a, b)| {
            let w = angle(a, b);
            w > 1e-3 && std::f64::consts::PI - w > 1e-3
        })
}

proptest! {
    #[test]
    fn endpoints_are_exact((a, b) in pair()) {
        prop_assert_eq!(slerp(&a, &b, 0.0).unwrap(), a.clone());
        prop_assert_eq!(slerp(&a, &b, 1.0).unwrap(), b);
    }

    #[test]
    fn swapping_ends_mirrors_theta((a, b) in pair(), theta in 0.0..=1.0f64) {
        let fwd = slerp(&a, &b, theta).unwrap();
        let back = slerp(&b, &a, 1.0 - theta).unwrap();
        for (x, y) in fwd.iter().zip(&back) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn equal_norm_inputs_stay_on_the_sphere((a, b) in pair(), theta in 0.0..=1.0f64) {
        let r = norm(&a);
        let b: Vec<f64> = b.iter().map(|x| x * r / norm(&b)).collect();
        let out = slerp(&a, &b, theta).unwrap();
        prop_assert!((norm(&out) - r).abs() < 1e-9 * r.max(1.0));
        let omega = angle(&a, &b);
        prop_assert!((angle(&a, &out) - theta * omega).abs() < 1e-6);
        prop_assert!((angle(&out, &b) - (1.0 - theta) * omega).abs() < 1e-6);
    }

    #[test]
    fn coefficient_outside_unit_interval_is_rejected((a, b) in pair(), theta in prop_oneof![-5.0..-1e-9f64, 1.0 + 1e-9..5.0f64]) {
        prop_assert!(slerp(&a, &b, theta).is_err());
    }
}

#[test]
fn antipodal_and_zero_inputs_are_rejected() {
    assert!(slerp(&[1.0, 0.0], &[-1.0, 0.0], 0.5).is_err());
    assert!(slerp(&[0.0, 0.0], &[1.0, 0.0], 0.5).is_err());
    assert!(slerp(&[1.0], &[1.0, 0.0], 0.5).is_err());
}

pub fn pooled_latent_converges_to_the_weighted_anchor() {
    let mut rng = seeded_rng(5);
    let (len, d) = (12, 8);
    let gauss = |rng: &mut seqdesign::nn::Rng, n: usize| -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    };
    let init = Tensor::new(gauss(&mut rng, len * d), &[len, d]).unwrap();
    let z_t = gauss(&mut rng, d);
    let z_p = gauss(&mut rng, d);
    for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let r = optimize_latent(&init, &z_t, &z_p, lambda, 3000, 0.05).unwrap();
        for k in 0..d {
            let want = lambda * z_t[k] + (1.0 - lambda) * z_p[k];
            assert!((r.pooled[k] - want).abs() < 1e-3, "lambda={lambda} k={k}");
        }
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        let floor = lambda
            * (1.0 - lambda)
            * z_t
                .iter()
                .zip(&z_p)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
        assert!((r.trace.last().unwrap() - floor).abs() < 1e-5);
    }
    assert!(optimize_latent(&init, &z_t, &z_p, 1.5, 10, 0.05).is_err());
}

mod cases {
    #[test]
    fn pooled_latent_converges_to_the_weighted_anchor() {
        super::pooled_latent_converges_to_the_weighted_anchor()
    }
}
