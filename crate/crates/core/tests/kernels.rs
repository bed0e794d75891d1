use dspa::kernels::{
    philox4x32_10, prox_group_l21, prox_nonneg, prox_poisson, sample_poisson, NoiseSource, Stream,
};
use proptest::prelude::*;

proptest! {
    #[test]
    fn poisson_prox_satisfies_first_order_condition(q in -20.0f64..40.0, y in 0u32..80, eta in 0.01f64..5.0) {
        let y = f64::from(y);
        let z = prox_poisson(q, y, eta);
        prop_assert!(z >= 0.0);
        if y > 0.0 {
            prop_assert!(z > 0.0);
            let residual = eta * (1.0 - y / z) + z - q;
            prop_assert!(residual.abs() <= 1e-9 * (1.0 + q.abs() + eta * y / z));
        } else {
            prop_assert_eq!(z, (q - eta).max(0.0));
        }
    }

    #[test]
    fn group_prox_shrinks_along_the_input(a in -10.0f64..10.0, b in -10.0f64..10.0, w in 0.0f64..8.0) {
        let mut p = [a, b];
        prox_group_l21(&mut p, w);
        let (nq, np) = (a.hypot(b), p[0].hypot(p[1]));
        prop_assert!((np - (nq - w).max(0.0)).abs() <= 1e-12);
        prop_assert!(p[0] * b - p[1] * a == 0.0 || (p[0] * b - p[1] * a).abs() <= 1e-12);
    }

    #[test]
    fn nonneg_prox_is_idempotent(q in -5.0f64..5.0) {
        let x = prox_nonneg(q);
        prop_assert_eq!(prox_nonneg(x), x);
        prop_assert!(x >= 0.0 && (x == q || x == 0.0));
    }

    #[test]
    fn normals_do_not_depend_on_visit_order(seed in any::<u64>(), t in 0u64..1000, n in 1u64..64) {
        let src = NoiseSource::new(seed);
        let mut forward = src.normals(Stream::X, 0, t);
        let a: Vec<f64> = (0..n).map(|e| forward.get(e)).collect();
        let mut backward = src.normals(Stream::X, 0, t);
        let mut b: Vec<f64> = (0..n).rev().map(|e| backward.get(e)).collect();
        b.reverse();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.iter().zip(0..).all(|(v, e)| *v == src.normal(Stream::X, 0, e, t)));
    }
}

#[test]
fn philox_known_answers() {
    assert_eq!(
        philox4x32_10([0; 4], [0; 2]),
        [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8]
    );
    assert_eq!(
        philox4x32_10([u32::MAX; 4], [u32::MAX; 2]),
        [0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd]
    );
}

#[test]
fn streams_are_distinct() {
    let src = NoiseSource::new(1);
    let x = src.normal(Stream::X, 0, 5, 3);
    assert_ne!(x, src.normal(Stream::Z, 0, 5, 3));
    assert_ne!(x, src.normal(Stream::X, 1, 5, 3));
    assert_ne!(x, src.normal(Stream::X, 0, 5, 4));
    assert_ne!(x, NoiseSource::new(2).normal(Stream::X, 0, 5, 3));
}

#[test]
fn poisson_draws_have_the_right_mean() {
    let src = NoiseSource::new(9);
    for mean in [0.5, 4.0, 30.0, 250.0] {
        let n = 20_000u64;
        let draws: Vec<f64> = (0..n)
            .map(|e| sample_poisson(mean, &src, e) as f64)
            .collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(
            (m - mean).abs() < 4.0 * (mean / n as f64).sqrt(),
            "mean {m} for {mean}"
        );
        assert!((v / mean - 1.0).abs() < 0.06, "variance {v} for {mean}");
    }
}
