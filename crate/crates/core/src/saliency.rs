//! Per-patch motion scores and exact-k retention masks.
//!
//! Scores are ℓ1 sums of the event frame over `p×p` patches. Masks keep the
//! `⌈τ·N⌉` highest-scoring units, where a unit is one patch or one merge cell.
//! Units are ranked by score (descending), then by raster index (ascending).
//! The ranking is a single total order, so masks for increasing `τ` are nested.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::event::EventFrame;
use crate::image::RgbImage;
use crate::{ceil_fraction, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub rows: usize,
    pub cols: usize,
    pub patch_size: usize,
    /// Row-major, `rows * cols` entries.
    pub scores: Vec<f64>,
}

impl SaliencyMap {
    pub fn from_scores(rows: usize, cols: usize, patch_size: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} scores for a {rows}x{cols} grid",
                scores.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan() || *s < 0.0) {
            return Err(Error::validation("saliency scores must be non-negative"));
        }
        Ok(SaliencyMap {
            rows,
            cols,
            patch_size,
            scores,
        })
    }

    pub fn score(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.cols + col]
    }
}

/// Sums `|E(x, y)|` over each full `p×p` patch. Trailing pixels outside
/// the `⌊H/p⌋ × ⌊W/p⌋` grid are ignored.
pub fn patch_scores(frame: &EventFrame, patch_size: usize) -> Result<SaliencyMap> {
    if patch_size == 0 {
        return Err(Error::validation("patch size must be >= 1"));
    }
    if patch_size > frame.width || patch_size > frame.height {
        return Err(Error::validation(format!(
            "patch size {patch_size} exceeds {}x{} frame",
            frame.width, frame.height
        )));
    }
    let rows = frame.height / patch_size;
    let cols = frame.width / patch_size;
    let mut scores = vec![0.0; rows * cols];
    for y in 0..rows * patch_size {
        let u = y / patch_size;
        let row = &frame.counts[y * frame.width..y * frame.width + cols * patch_size];
        for (v, chunk) in row.chunks_exact(patch_size).enumerate() {
            scores[u * cols + v] += chunk.iter().map(|c| c.abs()).sum::<f64>();
        }
    }
    Ok(SaliencyMap {
        rows,
        cols,
        patch_size,
        scores,
    })
}

/// What a retention decision applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    Patch,
    /// Whole `M×M` cells of patches; a cell's score is the sum of its members.
    MergeGroup(usize),
}

impl Granularity {
    /// `MergeGroup(m)` for `m > 1`, else `Patch`.
    pub fn for_merge_size(merge_size: usize) -> Self {
        if merge_size > 1 {
            Granularity::MergeGroup(merge_size)
        } else {
            Granularity::Patch
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchMask {
    pub rows: usize,
    pub cols: usize,
    /// Retained fraction this mask was built for.
    pub tau: f64,
    bits: Vec<bool>,
}

impl PatchMask {
    pub fn from_bits(rows: usize, cols: usize, tau: f64, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} mask bits for a {rows}x{cols} grid",
                bits.len()
            )));
        }
        Ok(PatchMask {
            rows,
            cols,
            tau,
            bits,
        })
    }

    pub fn all(rows: usize, cols: usize, keep: bool) -> Self {
        PatchMask {
            rows,
            cols,
            tau: if keep { 1.0 } else { 0.0 },
            bits: vec![keep; rows * cols],
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Number of retained patches.
    pub fn retained(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Raster indices of retained patches, ascending.
    pub fn retained_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    /// Text form: `rows cols tau`, then one line of space-separated 0/1 digits per row.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.rows, self.cols, self.tau);
        for row in self.bits.chunks(self.cols.max(1)).take(self.rows) {
            let line: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, head) = lines.next().ok_or_else(|| Error::parse(1, "empty mask file"))?;
        let head: Vec<&str> = head.split_whitespace().collect();
        let [rows, cols, tau] = head[..] else {
            return Err(Error::parse(1, "expected `rows cols tau`"));
        };
        let rows: usize = rows.parse().map_err(|_| Error::parse(1, "bad row count"))?;
        let cols: usize = cols.parse().map_err(|_| Error::parse(1, "bad column count"))?;
        let tau: f64 = tau.parse().map_err(|_| Error::parse(1, "bad tau"))?;
        let mut bits = Vec::with_capacity(rows * cols);
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let before = bits.len();
            for tok in line.split_whitespace() {
                match tok {
                    "0" => bits.push(false),
                    "1" => bits.push(true),
                    _ => return Err(Error::parse(idx + 1, format!("mask digit {tok:?}"))),
                }
            }
            if bits.len() - before != cols {
                return Err(Error::parse(idx + 1, format!("expected {cols} digits")));
            }
        }
        if bits.len() != rows * cols {
            return Err(Error::validation(format!(
                "mask has {} rows, header says {rows}",
                bits.len() / cols.max(1)
            )));
        }
        PatchMask::from_bits(rows, cols, tau, bits)
    }
}

/// Keeps exactly `⌈τ·units⌉` units.
pub fn quantile_mask(map: &SaliencyMap, tau: f64, granularity: Granularity) -> Result<PatchMask> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::validation(format!("tau must lie in [0, 1], got {tau}")));
    }
    let merge = match granularity {
        Granularity::Patch => 1,
        Granularity::MergeGroup(m) => m,
    };
    if merge == 0 {
        return Err(Error::validation("merge size must be >= 1"));
    }
    if !map.rows.is_multiple_of(merge) || !map.cols.is_multiple_of(merge) {
        return Err(Error::validation(format!(
            "{}x{} patch grid is not divisible by merge size {merge}",
            map.rows, map.cols
        )));
    }
    let cell_rows = map.rows / merge;
    let cell_cols = map.cols / merge;
    let mut unit_scores = vec![0.0; cell_rows * cell_cols];
    for r in 0..map.rows {
        for c in 0..map.cols {
            unit_scores[(r / merge) * cell_cols + c / merge] += map.score(r, c);
        }
    }

    let keep = ceil_fraction(tau, unit_scores.len());
    let mut order: Vec<usize> = (0..unit_scores.len()).collect();
    order.sort_by(|&a, &b| {
        unit_scores[b]
            .partial_cmp(&unit_scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut bits = vec![false; map.rows * map.cols];
    for &unit in &order[..keep] {
        let (cr, cc) = (unit / cell_cols, unit % cell_cols);
        for r in cr * merge..(cr + 1) * merge {
            for c in cc * merge..(cc + 1) * merge {
                bits[r * map.cols + c] = true;
            }
        }
    }
    PatchMask::from_bits(map.rows, map.cols, tau, bits)
}

/// Replaces every dropped patch with `fill`. Retained patches and pixels
/// outside the patch grid are left untouched.
pub fn apply_mask_to_image(
    image: &RgbImage,
    mask: &PatchMask,
    patch_size: usize,
    fill: [u8; 3],
) -> Result<RgbImage> {
    if image.width < mask.cols * patch_size || image.height < mask.rows * patch_size {
        return Err(Error::shape(format!(
            "{}x{} image cannot hold a {}x{} grid of {patch_size}px patches",
            image.width, image.height, mask.cols, mask.rows
        )));
    }
    let mut out = image.clone();
    for r in 0..mask.rows {
        for c in 0..mask.cols {
            if mask.get(r, c) {
                continue;
            }
            for y in r * patch_size..(r + 1) * patch_size {
                for x in c * patch_size..(c + 1) * patch_size {
                    out.set_pixel(x, y, fill);
                }
            }
        }
    }
    Ok(out)
}
