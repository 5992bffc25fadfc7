use evprune_core::rope::{rope_matrix, RopeTable};
use evprune_core::GridPos;
use ndarray::Array1;
use proptest::prelude::*;

fn dim() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![4usize, 8, 16, 64])
}

fn vec_of(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, d)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn preserves_norm((d, v) in dim().prop_flat_map(|d| (Just(d), vec_of(d))), i in 0usize..40, j in 0usize..40) {
        let t = RopeTable::build(40, 40, d).unwrap();
        let out = t.apply(GridPos::new(i, j), &v).unwrap();
        prop_assert!((dot(&out, &out).sqrt() - dot(&v, &v).sqrt()).abs() <= 1e-9);
    }

    #[test]
    fn inner_product_depends_on_offset_only(
        (d, q, k) in dim().prop_flat_map(|d| (Just(d), vec_of(d), vec_of(d))),
        a in (0usize..20, 0usize..20), b in (0usize..20, 0usize..20), shift in (0usize..20, 0usize..20),
    ) {
        let t = RopeTable::build(40, 40, d).unwrap();
        let before = dot(
            &t.apply(GridPos::new(a.0, a.1), &q).unwrap(),
            &t.apply(GridPos::new(b.0, b.1), &k).unwrap(),
        );
        let after = dot(
            &t.apply(GridPos::new(a.0 + shift.0, a.1 + shift.1), &q).unwrap(),
            &t.apply(GridPos::new(b.0 + shift.0, b.1 + shift.1), &k).unwrap(),
        );
        prop_assert!((before - after).abs() <= 1e-9, "{} vs {}", before, after);
    }

    #[test]
    fn matrices_compose(d in dim(), i1 in 0usize..30, j1 in 0usize..30, i2 in 0usize..30, j2 in 0usize..30) {
        let lhs = rope_matrix(i1 + i2, j1 + j2, d).unwrap();
        let rhs = rope_matrix(i1, j1, d).unwrap().dot(&rope_matrix(i2, j2, d).unwrap());
        let err = (&lhs - &rhs).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        prop_assert!(err <= 1e-12, "{}", err);
    }

    #[test]
    fn fast_path_matches_matrix((d, v) in dim().prop_flat_map(|d| (Just(d), vec_of(d))), i in 0usize..32, j in 0usize..32) {
        let t = RopeTable::build(32, 32, d).unwrap();
        let fast = t.apply(GridPos::new(i, j), &v).unwrap();
        let slow = rope_matrix(i, j, d).unwrap().dot(&Array1::from(v));
        for (a, b) in fast.iter().zip(slow.iter()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
