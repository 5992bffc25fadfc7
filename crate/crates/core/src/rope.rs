//! 2D rotary position embedding.
//!
//! A `d`-vector is split into `d/4` consecutive blocks of four components.
//! In block `m` (1-based), components `(4m−4, 4m−3)` are rotated by `i·θ_m`
//! and `(4m−2, 4m−1)` by `j·θ_m`, where `(i, j)` is the patch row and column
//! and `θ_m = 10000^(−2m/d)`.

use ndarray::Array2;

use crate::{Error, GridPos, Result};

const BASE: f64 = 10000.0;

/// `θ_m` for `m = 1..=d/4`.
pub fn thetas(dim: usize) -> Result<Vec<f64>> {
    check_dim(dim)?;
    Ok((1..=dim / 4)
        .map(|m| BASE.powf(-2.0 * m as f64 / dim as f64))
        .collect())
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || !dim.is_multiple_of(4) {
        return Err(Error::validation(format!(
            "rotary dimension must be a positive multiple of 4, got {dim}"
        )));
    }
    Ok(())
}

/// Cached `cos`/`sin` of `i·θ_m` and `j·θ_m`, stored per coordinate value.
#[derive(Debug, Clone)]
pub struct RopeTable {
    rows: usize,
    cols: usize,
    dim: usize,
    thetas: Vec<f64>,
    // [coord * blocks + m]
    row_cos: Vec<f64>,
    row_sin: Vec<f64>,
    col_cos: Vec<f64>,
    col_sin: Vec<f64>,
}

fn angle_table(extent: usize, thetas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut cos = Vec::with_capacity(extent * thetas.len());
    let mut sin = Vec::with_capacity(extent * thetas.len());
    for k in 0..extent {
        for &theta in thetas {
            let (s, c) = (k as f64 * theta).sin_cos();
            cos.push(c);
            sin.push(s);
        }
    }
    (cos, sin)
}

impl RopeTable {
    pub fn build(rows: usize, cols: usize, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        if rows == 0 || cols == 0 {
            return Err(Error::validation(format!("empty rotary grid {rows}x{cols}")));
        }
        let thetas = thetas(dim)?;
        let (row_cos, row_sin) = angle_table(rows, &thetas);
        let (col_cos, col_sin) = angle_table(cols, &thetas);
        Ok(RopeTable {
            rows,
            cols,
            dim,
            thetas,
            row_cos,
            row_sin,
            col_cos,
            col_sin,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    fn blocks(&self) -> usize {
        self.dim / 4
    }

    /// `(cos iθ_m, sin iθ_m, cos jθ_m, sin jθ_m)` for 0-based block index `m`.
    pub fn factors(&self, pos: GridPos, m: usize) -> [f64; 4] {
        let b = self.blocks();
        let ri = pos.row * b + m;
        let ci = pos.col * b + m;
        [self.row_cos[ri], self.row_sin[ri], self.col_cos[ci], self.col_sin[ci]]
    }

    fn check(&self, pos: GridPos, len: usize) -> Result<()> {
        if pos.row >= self.rows || pos.col >= self.cols {
            return Err(Error::shape(format!(
                "position ({}, {}) outside {}x{} rotary table",
                pos.row, pos.col, self.rows, self.cols
            )));
        }
        if len != self.dim {
            return Err(Error::shape(format!(
                "vector of length {len} for rotary dimension {}",
                self.dim
            )));
        }
        Ok(())
    }

    pub fn rotate_in_place(&self, pos: GridPos, v: &mut [f64]) -> Result<()> {
        self.check(pos, v.len())?;
        for (m, block) in v.chunks_exact_mut(4).enumerate() {
            let [ci, si, cj, sj] = self.factors(pos, m);
            let (a, b) = (block[0], block[1]);
            block[0] = ci * a - si * b;
            block[1] = si * a + ci * b;
            let (a, b) = (block[2], block[3]);
            block[2] = cj * a - sj * b;
            block[3] = sj * a + cj * b;
        }
        Ok(())
    }

    pub fn apply(&self, pos: GridPos, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = v.to_vec();
        self.rotate_in_place(pos, &mut out)?;
        Ok(out)
    }
}

/// Dense `R_(i,j)` as a `d×d` block-diagonal matrix. Reference form for tests.
pub fn rope_matrix(i: usize, j: usize, dim: usize) -> Result<Array2<f64>> {
    let thetas = thetas(dim)?;
    let mut r = Array2::zeros((dim, dim));
    for (m, theta) in thetas.iter().enumerate() {
        let o = 4 * m;
        let (si, ci) = (i as f64 * theta).sin_cos();
        let (sj, cj) = (j as f64 * theta).sin_cos();
        r[[o, o]] = ci;
        r[[o, o + 1]] = -si;
        r[[o + 1, o]] = si;
        r[[o + 1, o + 1]] = ci;
        r[[o + 2, o + 2]] = cj;
        r[[o + 2, o + 3]] = -sj;
        r[[o + 3, o + 2]] = sj;
        r[[o + 3, o + 3]] = cj;
    }
    Ok(r)
}
