use evprune_core::event::EventFrame;
use evprune_core::saliency::{patch_scores, quantile_mask, Granularity, SaliencyMap};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

/// Per-pixel double loop over the floor-divided grid.
fn brute_scores(frame: &EventFrame, p: usize) -> Vec<f64> {
    let rows = frame.height / p;
    let cols = frame.width / p;
    let mut out = Vec::new();
    for u in 0..rows {
        for v in 0..cols {
            let mut s = 0.0;
            for y in 0..frame.height {
                for x in 0..frame.width {
                    if y / p == u && x / p == v && y < rows * p && x < cols * p {
                        s += frame.get(x, y).abs();
                    }
                }
            }
            out.push(s);
        }
    }
    out
}

/// Indices of the top `k` after a full sort by (score desc, index asc).
fn brute_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut top = idx[..k].to_vec();
    top.sort_unstable();
    top
}

#[test]
fn scores_match_brute_force_9x7() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);
    let counts: Vec<f64> = (0..63).map(|_| f64::from(rng.random_range(0u32..9))).collect();
    let frame = EventFrame::from_counts(9, 7, counts).unwrap();
    let s = patch_scores(&frame, 2).unwrap();
    assert_eq!((s.rows, s.cols), (3, 4));
    assert_eq!(s.scores, brute_scores(&frame, 2));
}

#[test]
fn mask_matches_full_sort_8x8() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(11);
    let scores: Vec<f64> = (0..64).map(|_| f64::from(rng.random_range(0u32..10))).collect();
    let map = SaliencyMap::from_scores(8, 8, 1, scores.clone()).unwrap();
    let mask = quantile_mask(&map, 0.3, Granularity::Patch).unwrap();
    assert_eq!(mask.retained(), 20);
    assert_eq!(mask.retained_indices().collect::<Vec<_>>(), brute_top_k(&scores, 20));
}

#[test]
fn sum_of_scores_bounded_by_frame_total() {
    let frame = EventFrame::from_counts(5, 5, vec![1.0; 25]).unwrap();
    let s = patch_scores(&frame, 2).unwrap();
    assert_eq!(s.scores.iter().sum::<f64>(), 16.0);
    let s = patch_scores(&EventFrame::from_counts(4, 6, vec![2.0; 24]).unwrap(), 2).unwrap();
    assert_eq!(s.scores.iter().sum::<f64>(), 48.0);
}

fn arb_map() -> impl Strategy<Value = SaliencyMap> {
    (1usize..10, 1usize..10).prop_flat_map(|(r, c)| {
        prop::collection::vec(0u8..6, r * c).prop_map(move |v| {
            SaliencyMap::from_scores(r, c, 1, v.into_iter().map(f64::from).collect()).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn exact_cardinality(map in arb_map(), tau in 0.0f64..=1.0) {
        let m = quantile_mask(&map, tau, Granularity::Patch).unwrap();
        let n = map.scores.len();
        let expected = (tau * n as f64).ceil() as usize;
        prop_assert_eq!(m.retained(), expected);
    }

    #[test]
    fn nested_in_tau(map in arb_map(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = quantile_mask(&map, lo, Granularity::Patch).unwrap();
        let big = quantile_mask(&map, hi, Granularity::Patch).unwrap();
        for (s, b) in small.bits().iter().zip(big.bits()) {
            prop_assert!(!s || *b);
        }
    }

    #[test]
    fn threshold_consistent(map in arb_map(), tau in 0.0f64..=1.0) {
        let m = quantile_mask(&map, tau, Granularity::Patch).unwrap();
        let kept = map.scores.iter().zip(m.bits()).filter(|(_, &b)| b).map(|(s, _)| *s);
        let dropped = map.scores.iter().zip(m.bits()).filter(|(_, &b)| !b).map(|(s, _)| *s);
        let min_kept = kept.fold(f64::INFINITY, f64::min);
        let max_dropped = dropped.fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min_kept >= max_dropped);
    }

    #[test]
    fn scale_invariant(map in arb_map(), tau in 0.0f64..=1.0, c in 0.01f64..100.0) {
        let scaled = SaliencyMap::from_scores(
            map.rows, map.cols, 1, map.scores.iter().map(|s| s * c).collect()).unwrap();
        let a = quantile_mask(&map, tau, Granularity::Patch).unwrap();
        let b = quantile_mask(&scaled, tau, Granularity::Patch).unwrap();
        prop_assert_eq!(a.bits(), b.bits());
    }

    #[test]
    fn merge_group_matches_cell_sort(
        cells_r in 1usize..5, cells_c in 1usize..5, m in 1usize..4,
        seed in any::<u64>(), tau in 0.0f64..=1.0,
    ) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let (rows, cols) = (cells_r * m, cells_c * m);
        let scores: Vec<f64> = (0..rows * cols).map(|_| f64::from(rng.random_range(0u32..4))).collect();
        let map = SaliencyMap::from_scores(rows, cols, 1, scores.clone()).unwrap();
        let mask = quantile_mask(&map, tau, Granularity::MergeGroup(m)).unwrap();

        let mut cell_scores = vec![0.0; cells_r * cells_c];
        for r in 0..rows {
            for c in 0..cols {
                cell_scores[(r / m) * cells_c + c / m] += scores[r * cols + c];
            }
        }
        let k = evprune_core::ceil_fraction(tau, cell_scores.len());
        let top = brute_top_k(&cell_scores, k);
        for r in 0..rows {
            for c in 0..cols {
                let cell = (r / m) * cells_c + c / m;
                prop_assert_eq!(mask.get(r, c), top.contains(&cell));
            }
        }
    }
}

#[test]
fn constant_map_takes_raster_prefix() {
    let map = SaliencyMap::from_scores(3, 3, 1, vec![0.0; 9]).unwrap();
    for (tau, k) in [(0.0, 0), (0.2, 2), (0.5, 5), (1.0, 9)] {
        let m = quantile_mask(&map, tau, Granularity::Patch).unwrap();
        assert_eq!(m.retained_indices().collect::<Vec<_>>(), (0..k).collect::<Vec<_>>());
    }
}
