use proptest::prelude::*;

use imvu::accountant::{fisher_info, rdp_to_dp};
use imvu::mechanism::{clip, decode, scale_input, softmax};
use imvu::oracle::{exact_max_divergence, exact_renyi};
use imvu::{ClipConfig, NormKind};

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|w| {
        let z: f64 = w.iter().sum();
        w.into_iter().map(|v| v / z).collect()
    })
}

proptest! {
    #[test]
    fn renyi_is_monotone_and_below_max_divergence(
        (p, q) in (2usize..6).prop_flat_map(|n| (distribution(n), distribution(n))),
        a in 1.01f64..20.0,
        b in 1.01f64..20.0,
    ) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let d_lo = exact_renyi(&p, &q, lo).unwrap();
        let d_hi = exact_renyi(&p, &q, hi).unwrap();
        prop_assert!(d_lo <= d_hi + 1e-12);
        prop_assert!(d_hi <= exact_max_divergence(&p, &q).unwrap() + 1e-12);
    }

    #[test]
    fn clipping_bounds_the_norm(
        u in prop::collection::vec(-10.0f64..10.0, 1..20),
        c in 0.01f64..5.0,
        l1 in any::<bool>(),
    ) {
        let norm = if l1 { NormKind::L1 } else { NormKind::L2 };
        let cfg = ClipConfig::new(norm, c).unwrap();
        let v = clip(&u, &cfg);
        prop_assert!(norm.norm(&v) <= c * (1.0 + 1e-12));
        if norm.norm(&u) <= c {
            prop_assert_eq!(v, u);
        }
    }

    #[test]
    fn decode_inverts_scaling(u in -5.0f64..5.0, c in 0.1f64..3.0, beta in 0.1f64..4.0) {
        let back = decode(scale_input(u, c, beta), c, beta);
        prop_assert!((back - u).abs() <= 1e-12 * (1.0 + u.abs()) * (c / beta).max(1.0));
    }

    #[test]
    fn softmax_is_a_distribution(eta in prop::collection::vec(-700.0f64..700.0, 1..10)) {
        let p = softmax(&eta);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn fisher_information_is_symmetric_for_anadromic_pairs(
        eta1 in prop::collection::vec(-3.0f64..3.0, 2..6),
        x in -3.0f64..4.0,
    ) {
        let eta2: Vec<f64> = eta1.iter().rev().copied().collect();
        let a = fisher_info(&eta1, &eta2, x);
        let b = fisher_info(&eta1, &eta2, 1.0 - x);
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn conversion_decreases_with_delta(e in 0.0f64..10.0, d1 in 1e-9f64..1e-2, d2 in 1e-9f64..1e-2) {
        let alphas = [1.5, 2.0, 4.0, 16.0];
        let costs: Vec<f64> = alphas.iter().map(|a| a * e).collect();
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(rdp_to_dp(&costs, &alphas, hi).unwrap().0 <= rdp_to_dp(&costs, &alphas, lo).unwrap().0 + 1e-12);
    }
}
