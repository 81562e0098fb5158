use pinrefine_core::loss::{combine, cross_entropy, finite_diff_check, StreamLosses, DEFAULT_LAMBDA_CTC};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..60 {
        let positions = rng.gen_range(1..=5);
        let v = rng.gen_range(2..=6);
        let targets: Vec<u32> = (0..positions).map(|_| rng.gen_range(0..v as u32)).collect();
        let logits: Vec<f64> = (0..positions * v).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let f = |x: &[f64]| {
            let ce = cross_entropy(x, v, &targets).unwrap();
            (ce.loss, ce.grad)
        };
        let err = finite_diff_check(f, &logits, 1e-5).unwrap();
        assert!(err <= 1e-4, "{err}");
    }
}

fn stream() -> impl Strategy<Value = StreamLosses> {
    (0.0..20.0f64, 0.0..20.0f64).prop_map(|(ctc, ce)| StreamLosses { ctc, ce })
}

proptest! {
    #[test]
    fn combine_identities(lambda in 0.0..=1.0f64, alpha in 0.0..=1.0f64, c in stream(), p in stream()) {
        let b = combine(lambda, alpha, c, p).unwrap();
        prop_assert_eq!(b.l_char, lambda * c.ctc + (1.0 - lambda) * c.ce);
        prop_assert_eq!(b.l_py, lambda * p.ctc + (1.0 - lambda) * p.ce);
        prop_assert_eq!(b.l_total, alpha * b.l_char + (1.0 - alpha) * b.l_py);
    }

    #[test]
    fn balanced_streams_are_interchangeable(c in stream(), p in stream()) {
        let a = combine(DEFAULT_LAMBDA_CTC, 0.5, c, p).unwrap();
        let b = combine(DEFAULT_LAMBDA_CTC, 0.5, p, c).unwrap();
        prop_assert_eq!(a.l_total, b.l_total);
    }

    #[test]
    fn endpoints_select_one_stream(c in stream(), p in stream()) {
        prop_assert_eq!(combine(0.3, 1.0, c, p).unwrap().l_total, 0.3 * c.ctc + 0.7 * c.ce);
        prop_assert_eq!(combine(1.0, 0.5, c, p).unwrap().l_char, c.ctc);
        prop_assert_eq!(combine(0.0, 0.5, c, p).unwrap().l_char, c.ce);
    }
}
