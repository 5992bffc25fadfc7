use evprune_core::pack::{
    coordinate_grid, mask_of, pack_patches, pack_positions, unpack_scatter, zero_fill,
};
use evprune_core::rope::RopeTable;
use evprune_core::saliency::{quantile_mask, Granularity, PatchMask, SaliencyMap};
use evprune_core::GridPos;
use ndarray::Array2;
use proptest::prelude::*;

fn arb_case() -> impl Strategy<Value = (usize, usize, Array2<f64>, Vec<bool>)> {
    (1usize..9, 1usize..9, 1usize..5).prop_flat_map(|(r, c, d)| {
        (
            Just(r),
            Just(c),
            prop::collection::vec(-5.0f64..5.0, r * c * d)
                .prop_map(move |v| Array2::from_shape_vec((r * c, d), v).unwrap()),
            prop::collection::vec(any::<bool>(), r * c),
        )
    })
}

proptest! {
    #[test]
    fn pack_equals_filter_loop((rows, cols, x, bits) in arb_case()) {
        let mask = PatchMask::from_bits(rows, cols, 0.5, bits.clone()).unwrap();
        let packed = pack_patches(&x, &mask).unwrap();

        let mut expected_rows = Vec::new();
        let mut expected_kept = Vec::new();
        for idx in 0..rows * cols {
            if bits[idx] {
                expected_rows.extend(x.row(idx).iter().copied());
                expected_kept.push(GridPos::new(idx / cols, idx % cols));
            }
        }
        let expected = Array2::from_shape_vec((expected_kept.len(), x.ncols()), expected_rows).unwrap();
        prop_assert_eq!(&packed.tokens, &expected);
        prop_assert_eq!(&packed.kept, &expected_kept);
        prop_assert!(packed.kept.windows(2).all(|w| w[0].raster_index(cols) < w[1].raster_index(cols)));
    }

    #[test]
    fn positions_agree_with_packed_coordinates((rows, cols, _x, bits) in arb_case()) {
        let mask = PatchMask::from_bits(rows, cols, 0.5, bits).unwrap();
        let rope = RopeTable::build(rows, cols, 8).unwrap();
        let positions = pack_positions(&rope, &mask).unwrap();
        let coords = pack_patches(&coordinate_grid(rows, cols), &mask).unwrap();
        prop_assert_eq!(&positions, &coords.kept);
        // The coordinate payload of each packed row names its own position.
        for (row, pos) in coords.tokens.rows().into_iter().zip(&positions) {
            prop_assert_eq!((row[0] as usize, row[1] as usize), (pos.row, pos.col));
        }
    }

    #[test]
    fn scatter_is_a_section((rows, cols, x, bits) in arb_case()) {
        let mask = PatchMask::from_bits(rows, cols, 0.5, bits).unwrap();
        let packed = pack_patches(&x, &mask).unwrap();
        let dense = unpack_scatter(&packed, zero_fill(x.ncols()).view()).unwrap();
        let again = pack_patches(&dense, &mask_of(&packed).unwrap()).unwrap();
        prop_assert_eq!(again, packed);
    }

    #[test]
    fn quantile_masks_pack_to_ceil_tau_n(scores in prop::collection::vec(0u8..9, 36), tau in 0.0f64..=1.0) {
        let map = SaliencyMap::from_scores(6, 6, 1, scores.into_iter().map(f64::from).collect()).unwrap();
        let mask = quantile_mask(&map, tau, Granularity::Patch).unwrap();
        let packed = pack_patches(&Array2::zeros((36, 3)), &mask).unwrap();
        prop_assert_eq!(packed.len(), (tau * 36.0).ceil() as usize);
    }
}
