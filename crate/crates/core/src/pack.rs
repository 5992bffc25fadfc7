//! Gathers retained patches under a mask while keeping their original grid
//! coordinates.
//!
//! Patch rows and rotary positions are selected through the same `kept` list,
//! so `tokens[r]` always pairs with the rotary factors of `kept[r]`.

use ndarray::{Array1, Array2, ArrayView1};

use crate::rope::RopeTable;
use crate::saliency::PatchMask;
use crate::{Error, GridPos, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PackedSequence {
    pub tokens: Array2<f64>,
    /// Original coordinates of each row of `tokens`, strictly raster-increasing.
    pub kept: Vec<GridPos>,
    /// `(rows, cols)` of the dense grid.
    pub origin_grid: (usize, usize),
}

impl PackedSequence {
    /// Checks the invariants for a hand-built sequence.
    pub fn new(tokens: Array2<f64>, kept: Vec<GridPos>, origin_grid: (usize, usize)) -> Result<Self> {
        if tokens.nrows() != kept.len() {
            return Err(Error::shape(format!(
                "{} token rows for {} positions",
                tokens.nrows(),
                kept.len()
            )));
        }
        let (rows, cols) = origin_grid;
        if let Some(p) = kept.iter().find(|p| p.row >= rows || p.col >= cols) {
            return Err(Error::validation(format!(
                "kept position ({}, {}) outside {rows}x{cols} grid",
                p.row, p.col
            )));
        }
        for w in kept.windows(2) {
            let (a, b) = (w[0].raster_index(cols), w[1].raster_index(cols));
            if a == b {
                return Err(Error::validation(format!("duplicate kept index {a}")));
            }
            if a > b {
                return Err(Error::validation("kept positions not in raster order"));
            }
        }
        Ok(PackedSequence {
            tokens,
            kept,
            origin_grid,
        })
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }
}

/// Positions of retained patches in raster order.
pub fn mask_positions(mask: &PatchMask) -> Vec<GridPos> {
    mask.retained_indices()
        .map(|idx| GridPos::new(idx / mask.cols, idx % mask.cols))
        .collect()
}

/// Keeps the rows of `patches` whose mask bit is set.
pub fn pack_patches(patches: &Array2<f64>, mask: &PatchMask) -> Result<PackedSequence> {
    if patches.nrows() != mask.len() {
        return Err(Error::shape(format!(
            "{} patch rows for a {}x{} mask",
            patches.nrows(),
            mask.rows,
            mask.cols
        )));
    }
    let kept = mask_positions(mask);
    let mut tokens = Array2::zeros((kept.len(), patches.ncols()));
    for (dst, pos) in kept.iter().enumerate() {
        tokens
            .row_mut(dst)
            .assign(&patches.row(pos.raster_index(mask.cols)));
    }
    Ok(PackedSequence {
        tokens,
        kept,
        origin_grid: (mask.rows, mask.cols),
    })
}

/// Rotary positions consumed by the packed tokens.
pub fn pack_positions(rope: &RopeTable, mask: &PatchMask) -> Result<Vec<GridPos>> {
    if (rope.rows(), rope.cols()) != (mask.rows, mask.cols) {
        return Err(Error::shape(format!(
            "rotary table {}x{} vs mask {}x{}",
            rope.rows(),
            rope.cols(),
            mask.rows,
            mask.cols
        )));
    }
    Ok(mask_positions(mask))
}

/// Dense `rows·cols × D` matrix with packed rows at their original indices
/// and `fill` everywhere else.
pub fn unpack_scatter(packed: &PackedSequence, fill: ArrayView1<f64>) -> Result<Array2<f64>> {
    let (rows, cols) = packed.origin_grid;
    let dim = packed.tokens.ncols();
    if fill.len() != dim {
        return Err(Error::shape(format!("fill of length {} for D = {dim}", fill.len())));
    }
    let mut out = Array2::zeros((rows * cols, dim));
    for mut row in out.rows_mut() {
        row.assign(&fill);
    }
    let mut seen = vec![false; rows * cols];
    for (src, pos) in packed.kept.iter().enumerate() {
        if pos.row >= rows || pos.col >= cols {
            return Err(Error::validation(format!(
                "kept position ({}, {}) outside {rows}x{cols} grid",
                pos.row, pos.col
            )));
        }
        let idx = pos.raster_index(cols);
        if std::mem::replace(&mut seen[idx], true) {
            return Err(Error::validation(format!("duplicate kept index {idx}")));
        }
        out.row_mut(idx).assign(&packed.tokens.row(src));
    }
    Ok(out)
}

/// Mask with a bit set at each kept position of `packed`.
pub fn mask_of(packed: &PackedSequence) -> Result<PatchMask> {
    let (rows, cols) = packed.origin_grid;
    let mut bits = vec![false; rows * cols];
    for pos in &packed.kept {
        bits[pos.raster_index(cols)] = true;
    }
    let tau = if rows * cols == 0 {
        0.0
    } else {
        packed.len() as f64 / (rows * cols) as f64
    };
    PatchMask::from_bits(rows, cols, tau, bits)
}

/// Dense grid of `(row, col)` coordinates, one row per patch.
pub fn coordinate_grid(rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows * cols, 2), |(idx, k)| {
        if k == 0 {
            (idx / cols) as f64
        } else {
            (idx % cols) as f64
        }
    })
}

pub fn zero_fill(dim: usize) -> Array1<f64> {
    Array1::zeros(dim)
}

#[cfg(test)]
mod tests {
    use ndarray::{arr2, Array1};

    use super::*;

    #[test]
    fn all_ones_is_identity() {
        let x = Array2::from_shape_fn((6, 3), |(r, c)| (r * 3 + c) as f64);
        let p = pack_patches(&x, &PatchMask::all(2, 3, true)).unwrap();
        assert_eq!(p.tokens, x);
        assert_eq!(p.kept, (0..6).map(|i| GridPos::new(i / 3, i % 3)).collect::<Vec<_>>());
        assert_eq!(unpack_scatter(&p, zero_fill(3).view()).unwrap(), x);
    }

    #[test]
    fn selection_1x4() {
        let x = arr2(&[[1.0], [2.0], [3.0], [4.0]]);
        let mask = PatchMask::from_bits(1, 4, 0.5, vec![true, false, true, false]).unwrap();
        let p = pack_patches(&x, &mask).unwrap();
        assert_eq!(p.tokens, arr2(&[[1.0], [3.0]]));
        assert_eq!(p.kept, vec![GridPos::new(0, 0), GridPos::new(0, 2)]);
    }

    #[test]
    fn all_zeros_is_empty() {
        let x = Array2::<f64>::ones((4, 2));
        let p = pack_patches(&x, &PatchMask::all(2, 2, false)).unwrap();
        assert!(p.is_empty());
        assert_eq!(p.tokens.dim(), (0, 2));
        let fill = Array1::from(vec![7.0, -1.0]);
        let dense = unpack_scatter(&p, fill.view()).unwrap();
        assert!(dense.rows().into_iter().all(|r| r == fill));
    }

    #[test]
    fn positions_anti_diagonal() {
        let rope = RopeTable::build(2, 2, 4).unwrap();
        let mask = PatchMask::from_bits(2, 2, 0.5, vec![true, false, false, true]).unwrap();
        assert_eq!(
            pack_positions(&rope, &mask).unwrap(),
            vec![GridPos::new(0, 0), GridPos::new(1, 1)]
        );
        let wrong = RopeTable::build(2, 3, 4).unwrap();
        assert!(pack_positions(&wrong, &mask).is_err());
    }

    #[test]
    fn length_mismatch() {
        let x = Array2::<f64>::zeros((5, 2));
        assert!(pack_patches(&x, &PatchMask::all(2, 2, true)).is_err());
    }

    #[test]
    fn scatter_rejects_duplicates() {
        let p = PackedSequence {
            tokens: Array2::zeros((2, 1)),
            kept: vec![GridPos::new(0, 1), GridPos::new(0, 1)],
            origin_grid: (1, 2),
        };
        assert!(unpack_scatter(&p, zero_fill(1).view()).is_err());
        assert!(PackedSequence::new(p.tokens.clone(), p.kept.clone(), (1, 2)).is_err());
    }
}
