//! Flat binary weight files.
//!
//! Layout: a header of two little-endian `u32` values (`input_dim`,
//! `hidden_dim`), followed by the matrices in the order Wz, Wr, Wh, Uz, Ur,
//! Uh, bz, br, bh, row-major, as little-endian `f64`.

use crate::gru::{GruDims, GruError, GruParams, Matrix};
use std::io::{self, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed weight file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Gru(#[from] GruError),
}

pub fn write_params<W: Write>(params: &GruParams, mut w: W) -> Result<(), WeightsError> {
    params.validate()?;
    let d = params.dims();
    w.write_all(&(d.input as u32).to_le_bytes())?;
    w.write_all(&(d.hidden as u32).to_le_bytes())?;
    for m in [&params.wz, &params.wr, &params.wh, &params.uz, &params.ur, &params.uh] {
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for b in [&params.bz, &params.br, &params.bh] {
        for v in b {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_params<R: Read>(mut r: R) -> Result<GruParams, WeightsError> {
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)
        .map_err(|_| WeightsError::Malformed("truncated header".into()))?;
    let input = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)
        .map_err(|_| WeightsError::Malformed("truncated header".into()))?;
    let hidden = u32::from_le_bytes(u32buf) as usize;
    if input == 0 || hidden == 0 {
        return Err(WeightsError::Malformed(format!(
            "dimensions must be >= 1, got input={input} hidden={hidden}"
        )));
    }

    let mut read_vec = |n: usize| -> Result<Vec<f64>, WeightsError> {
        let mut out = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| WeightsError::Malformed("truncated payload".into()))?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    };

    let wz = Matrix::from_vec(hidden, input, read_vec(hidden * input)?)?;
    let wr = Matrix::from_vec(hidden, input, read_vec(hidden * input)?)?;
    let wh = Matrix::from_vec(hidden, input, read_vec(hidden * input)?)?;
    let uz = Matrix::from_vec(hidden, hidden, read_vec(hidden * hidden)?)?;
    let ur = Matrix::from_vec(hidden, hidden, read_vec(hidden * hidden)?)?;
    let uh = Matrix::from_vec(hidden, hidden, read_vec(hidden * hidden)?)?;
    let bz = read_vec(hidden)?;
    let br = read_vec(hidden)?;
    let bh = read_vec(hidden)?;

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(WeightsError::Malformed("trailing bytes after payload".into()));
    }

    let params = GruParams {
        wz,
        wr,
        wh,
        uz,
        ur,
        uh,
        bz,
        br,
        bh,
    };
    params.validate()?;
    debug_assert_eq!(params.dims(), GruDims { input, hidden });
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gru::generate_params;

    #[test]
    fn round_trip_is_lossless() {
        let p = generate_params(7, GruDims { input: 5, hidden: 3 });
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 8 * (3 * 3 * 5 + 3 * 3 * 3 + 3 * 3));
        let q = read_params(buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn header_is_little_endian_u32() {
        let p = generate_params(1, GruDims { input: 258, hidden: 2 });
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        assert_eq!(&buf[0..4], &[2, 1, 0, 0]); // 258
        assert_eq!(&buf[4..8], &[2, 0, 0, 0]);
    }

    #[test]
    fn truncated_file_rejected() {
        let p = generate_params(2, GruDims { input: 2, hidden: 2 });
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_params(buf.as_slice()), Err(WeightsError::Malformed(_))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let p = generate_params(2, GruDims { input: 2, hidden: 2 });
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        buf.push(0);
        assert!(matches!(read_params(buf.as_slice()), Err(WeightsError::Malformed(_))));
    }
}
