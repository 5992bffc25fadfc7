//! Feature dump: `u32` LE row count, `u32` LE dimension, then row-major `f32` LE values.

use ndarray::Array2;

use crate::{Error, Result};

pub fn write_features(tokens: &Array2<f64>) -> Result<Vec<u8>> {
    let (n, d) = tokens.dim();
    let n32 = u32::try_from(n).map_err(|_| Error::validation("too many feature rows"))?;
    let d32 = u32::try_from(d).map_err(|_| Error::validation("feature dimension too large"))?;
    let mut out = Vec::with_capacity(8 + 4 * n * d);
    out.extend_from_slice(&n32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for v in tokens.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Values are widened back to `f64`; `write_features(&read_features(b)?)` reproduces `b`.
pub fn read_features(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 8 {
        return Err(Error::format("feature dump shorter than its 8-byte header"));
    }
    let n = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let need = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| Error::format("feature dump header overflows"))?;
    let body = &bytes[8..];
    if body.len() != need {
        return Err(Error::format(format!(
            "feature dump declares {n}x{d} ({need} bytes), body has {}",
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Array2::from_shape_vec((n, d), values).map_err(|e| Error::format(e.to_string()))
}
