//! `ATLF` feature corpus and basis files.
//!
//! Corpus: `"ATLF"`, `u32 version`, `u32 count`, `u32 dim`, then
//! `count·dim` little-endian f32 values, row-major.
//!
//! Basis: the same header with `count = 1 + N_c`, the mean row followed by
//! the component rows, then a trailer `{u64 samples_seen, u32 normalization,
//! N_c f32 singular values}`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{CodecError, FeatureVector, Normalization, PcaBasis};
use crate::binio::{FormatError, Reader, Writer};

pub const CORPUS_MAGIC: &[u8; 4] = b"ATLF";
pub const CORPUS_VERSION: u32 = 1;

fn header(w: &mut Writer, count: usize, dim: usize) {
    w.bytes(CORPUS_MAGIC);
    w.u32(CORPUS_VERSION);
    w.u32(count as u32);
    w.u32(dim as u32);
}

pub(crate) fn read_header(r: &mut Reader<'_>) -> Result<(usize, usize), FormatError> {
    r.magic(CORPUS_MAGIC)?;
    r.version(CORPUS_VERSION)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    Ok((count, dim))
}

/// Encodes rows of equal length as an `ATLF` buffer.
pub fn encode_rows(rows: &[&[f64]], dim: usize) -> Vec<u8> {
    let mut w = Writer::new();
    header(&mut w, rows.len(), dim);
    for row in rows {
        debug_assert_eq!(row.len(), dim);
        for &v in *row {
            w.f32(v as f32);
        }
    }
    w.into_inner()
}

/// Decodes an `ATLF` buffer into `(dim, rows)`.
pub fn decode_rows(bytes: &[u8]) -> Result<(usize, Vec<Vec<f32>>), FormatError> {
    let mut r = Reader::new(bytes);
    let (count, dim) = read_header(&mut r)?;
    let flat = r.f32_vec(count * dim)?;
    let rows = if dim == 0 {
        vec![Vec::new(); count]
    } else {
        flat.chunks_exact(dim).map(|c| c.to_vec()).collect()
    };
    Ok((dim, rows))
}

pub fn write_corpus(path: &Path, features: &[FeatureVector]) -> Result<(), CodecError> {
    let dim = features.first().map(|f| f.len()).unwrap_or(0);
    for f in features {
        if f.len() != dim {
            return Err(CodecError::Dimension {
                expected: dim,
                got: f.len(),
            });
        }
    }
    let rows: Vec<&[f64]> = features.iter().map(|f| f.as_slice()).collect();
    fs::write(path, encode_rows(&rows, dim)).map_err(FormatError::from)?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Vec<FeatureVector>, CodecError> {
    let bytes = fs::read(path).map_err(FormatError::from)?;
    let (_, rows) = decode_rows(&bytes)?;
    rows.into_iter()
        .map(|r| FeatureVector::new(r.into_iter().map(f64::from).collect()))
        .collect()
}

pub fn write_basis(path: &Path, basis: &PcaBasis) -> Result<(), CodecError> {
    let n_c = basis.n_components();
    let n_f = basis.n_features();
    let mut w = Writer::new();
    header(&mut w, 1 + n_c, n_f);
    for &v in basis.mean().iter() {
        w.f32(v as f32);
    }
    for k in 0..n_c {
        for j in 0..n_f {
            w.f32(basis.components()[(k, j)] as f32);
        }
    }
    w.u64(basis.samples_seen());
    w.u32(match basis.normalization() {
        Normalization::Unit => 1,
        Normalization::None => 0,
    });
    for &s in basis.singular_values().iter() {
        w.f32(s as f32);
    }
    fs::write(path, w.into_inner()).map_err(FormatError::from)?;
    Ok(())
}

pub fn read_basis(path: &Path) -> Result<PcaBasis, CodecError> {
    let bytes = fs::read(path).map_err(FormatError::from)?;
    let mut r = Reader::new(&bytes);
    let (count, n_f) = read_header(&mut r)?;
    if count < 2 {
        return Err(FormatError::Malformed("basis needs a mean row and ≥1 component".into()).into());
    }
    let n_c = count - 1;
    let mean = r.f32_vec(n_f)?;
    let comps = r.f32_vec(n_c * n_f)?;
    let samples_seen = r.u64()?;
    let normalization = match r.u32()? {
        0 => Normalization::None,
        1 => Normalization::Unit,
        other => {
            return Err(FormatError::Malformed(format!("unknown normalization {other}")).into())
        }
    };
    let sv = r.f32_vec(n_c)?;
    // Re-orthonormalize: the f32 payload perturbs the rows by ~1e-7.
    let comps = DMatrix::from_row_iterator(n_c, n_f, comps.into_iter().map(f64::from));
    let comps = orthonormalize_rows(comps);
    PcaBasis::from_parts(
        DVector::from_iterator(n_f, mean.into_iter().map(f64::from)),
        comps,
        DVector::from_iterator(n_c, sv.into_iter().map(f64::from)),
        samples_seen,
        normalization,
    )
}

/// Modified Gram-Schmidt on the rows.
fn orthonormalize_rows(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for i in 0..m.nrows() {
        for j in 0..i {
            let proj = m.row(i).dot(&m.row(j));
            let rj = m.row(j).clone_owned();
            let mut ri = m.row_mut(i);
            ri -= rj * proj;
        }
        let n = m.row(i).norm();
        if n > 0.0 {
            let mut ri = m.row_mut(i);
            ri /= n;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.atlf");
        let feats = vec![
            FeatureVector::new(vec![1.0, 2.5, -3.0]).unwrap(),
            FeatureVector::new(vec![0.0, 0.5, 8.0]).unwrap(),
        ];
        write_corpus(&p, &feats).unwrap();
        assert_eq!(read_corpus(&p).unwrap(), feats);

        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"ATLF");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 16 + 2 * 3 * 4);
    }

    #[test]
    fn truncated_corpus_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.atlf");
        let feats = vec![FeatureVector::new(vec![1.0; 16]).unwrap()];
        write_corpus(&p, &feats).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            read_corpus(&p),
            Err(CodecError::Format(FormatError::Truncated { .. }))
        ));
    }

    #[test]
    fn version_mismatch_is_an_error() {
        let mut bytes = encode_rows(&[&[1.0, 2.0]], 2);
        bytes[4] = 9;
        assert!(matches!(
            decode_rows(&bytes),
            Err(FormatError::Version { found: 9, .. })
        ));
    }
}
