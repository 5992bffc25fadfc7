//! Event-guided visual token pruning for ViT front-ends.
//!
//! The pipeline runs in this order:
//!
//! 1. [`event`] ingests DVS events and accumulates them over a time window into
//!    a per-pixel event frame.
//! 2. [`saliency`] sums the frame per `p×p` patch to get motion scores. It then
//!    keeps the top `⌈τ·N⌉` patches, or the top whole merge cells.
//! 3. [`pack`] gathers the retained patch rows together with their original
//!    grid coordinates. Positional factors are looked up through one shared
//!    index list.
//! 4. [`encoder`] is a small ViT with 2D rotary embeddings ([`rope`]). It runs
//!    in dense mode, in packed-sparse mode, or in masked-dense mode as an
//!    oracle, and ends with a merge-and-project MLP.
//! 5. [`flops`] is an analytic matmul cost model for the visual encoder and the
//!    LLM that consumes its tokens.

pub mod encoder;
pub mod error;
pub mod event;
pub mod features;
pub mod flops;
pub mod image;
pub mod kv;
pub mod pack;
pub mod rope;
pub mod saliency;

pub use error::{Error, Result};

/// Patch-grid coordinate: `row` is the patch row `i`, `col` the patch column `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct GridPos {
    pub row: usize,
    pub col: usize,
}

impl GridPos {
    pub fn new(row: usize, col: usize) -> Self {
        GridPos { row, col }
    }

    pub fn raster_index(self, cols: usize) -> usize {
        self.row * cols + self.col
    }
}

/// `⌈fraction · n⌉`, clamped to `[0, n]`.
///
/// A small slack absorbs binary rounding so that e.g. `0.7 · 10` yields 7 and not 8.
pub fn ceil_fraction(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let k = (raw - 1e-9 * (n.max(1) as f64)).ceil();
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(n)
    }
}

#[cfg(test)]
mod tests {
    use super::ceil_fraction;

    #[test]
    fn ceil_fraction_exact_products() {
        assert_eq!(ceil_fraction(0.7, 10), 7);
        assert_eq!(ceil_fraction(0.3, 64), 20);
        assert_eq!(ceil_fraction(0.5, 4), 2);
        assert_eq!(ceil_fraction(0.0, 9), 0);
        assert_eq!(ceil_fraction(1.0, 9), 9);
        assert_eq!(ceil_fraction(0.01, 9), 1);
        assert_eq!(ceil_fraction(0.5, 0), 0);
    }
}
