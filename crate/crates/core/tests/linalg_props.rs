use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relucert_core::linalg::{dot, induced_norm, matvec, vec_qnorm};
use relucert_core::{Matrix, NormOrder};

fn norm_order() -> impl Strategy<Value = NormOrder> {
    prop_oneof![
        Just(NormOrder::L1),
        Just(NormOrder::L2),
        Just(NormOrder::Inf)
    ]
}

fn vec_pair(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_len).prop_flat_map(|n| {
        (
            prop::collection::vec(-1e3..1e3f64, n),
            prop::collection::vec(-1e3..1e3f64, n),
        )
    })
}

fn matrix(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0..5.0f64, r * c)
            .prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn triangle_inequality((a, b) in vec_pair(20), p in norm_order()) {
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs = vec_qnorm(&sum, p);
        let rhs = vec_qnorm(&a, p) + vec_qnorm(&b, p);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
    }

    #[test]
    fn absolute_homogeneity((a, _) in vec_pair(20), t in -100.0..100.0f64, p in norm_order()) {
        let scaled: Vec<f64> = a.iter().map(|x| t * x).collect();
        let lhs = vec_qnorm(&scaled, p);
        let rhs = t.abs() * vec_qnorm(&a, p);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn holder((a, b) in vec_pair(20), p in norm_order()) {
        let lhs = dot(&a, &b).abs();
        let rhs = vec_qnorm(&a, p) * vec_qnorm(&b, p.dual());
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
    }

    #[test]
    fn induced_norm_dominates(w in matrix(8), seed in any::<u64>(), p in norm_order()) {
        let n = induced_norm(&w, p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let x: Vec<f64> = (0..w.cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let xn = vec_qnorm(&x, p);
            if xn == 0.0 {
                continue;
            }
            let ratio = vec_qnorm(&matvec(&w, &x).unwrap(), p) / xn;
            prop_assert!(ratio <= n * (1.0 + 1e-9), "{ratio} > {n}");
        }
    }
}

#[test]
fn spectral_norm_matches_closed_form_2x2() {
    // σ_max of [[a, b], [c, d]] from the eigenvalues of WᵀW
    for (a, b, c, d) in [
        (1.0, 2.0, 3.0, 4.0),
        (0.5, -1.0, 2.0, 0.0),
        (1.0, 1.0, 1.0, 1.0),
    ] {
        let w = Matrix::from_rows(&[[a, b], [c, d]]).unwrap();
        let (p, q, r) = (a * a + c * c, a * b + c * d, b * b + d * d);
        let lam = 0.5 * (p + r) + (0.25 * (p - r) * (p - r) + q * q).sqrt();
        let s = induced_norm(&w, NormOrder::L2).unwrap();
        assert!(
            (s - lam.sqrt()).abs() <= 1e-12 * lam.sqrt(),
            "{s} vs {}",
            lam.sqrt()
        );
    }
}
