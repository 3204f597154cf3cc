//! Binary embedding matrix format.
//!
//! Layout: magic `FAIREMB1` (8 bytes) | `u32` n | `u32` dim | n*dim
//! little-endian `f32`, row-major. Sample ids live in a sidecar text file next
//! to the matrix (same path with the extension replaced by `.ids`), one id per
//! line in row order. The split keeps the payload memory-mappable and the ids
//! greppable.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::DataError;
use crate::binio;
use crate::matrix::DenseMatrix;

pub const EMBEDDINGS_MAGIC: &[u8; 8] = b"FAIREMB1";

/// Frozen encoder output: one row of activations per sample.
///
/// Entries are `f64` in memory but quantized to `f32` (the on-disk precision),
/// so write-after-read round-trips are exact.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    data: DenseMatrix,
}

impl EmbeddingMatrix {
    /// Validates uniqueness of ids and finiteness of every entry.
    pub fn new(ids: Vec<String>, data: DenseMatrix) -> Result<Self, DataError> {
        if ids.len() != data.n_rows() {
            return Err(DataError::IdCountMismatch {
                ids: ids.len(),
                rows: data.n_rows(),
            });
        }
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(DataError::DuplicateId { id: id.clone() });
            }
        }
        if let Some((row, col)) = data.find_non_finite() {
            return Err(DataError::NonFiniteValue { row, col });
        }
        Ok(EmbeddingMatrix { ids, data })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn n_samples(&self) -> usize {
        self.data.n_rows()
    }

    pub fn dim(&self) -> usize {
        self.data.n_cols()
    }

    pub fn data(&self) -> &DenseMatrix {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.data.row(i)
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("ids")
}

/// Reads an embedding matrix and its id sidecar.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix, DataError> {
    let file = fs::File::open(path)?;
    let mut reader = BufReader::new(file);

    let magic = binio::read_magic(&mut reader)?;
    if &magic != EMBEDDINGS_MAGIC {
        return Err(DataError::BadMagic {
            expected: String::from_utf8_lossy(EMBEDDINGS_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let n = binio::read_u32(&mut reader)? as usize;
    let dim = binio::read_u32(&mut reader)? as usize;

    let expected = n * dim * 4;
    let mut payload = Vec::with_capacity(expected);
    reader.read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(DataError::TruncatedFile {
            expected,
            got: payload.len(),
        });
    }
    let mut data = Vec::with_capacity(n * dim);
    for chunk in payload[..expected].chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
    }
    let data = DenseMatrix::from_vec(n, dim, data);
    if let Some((row, col)) = data.find_non_finite() {
        return Err(DataError::NonFiniteValue { row, col });
    }

    let ids_file = fs::File::open(sidecar_path(path))?;
    let mut ids = Vec::with_capacity(n);
    for line in BufReader::new(ids_file).lines() {
        let line = line?;
        if !line.is_empty() {
            ids.push(line);
        }
    }
    if ids.len() != n {
        return Err(DataError::IdCountMismatch { ids: ids.len(), rows: n });
    }
    EmbeddingMatrix::new(ids, data)
}

/// Writes the matrix and its id sidecar. Byte-for-byte inverse of
/// [`read_embeddings`].
pub fn write_embeddings(m: &EmbeddingMatrix, path: &Path) -> Result<(), DataError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(EMBEDDINGS_MAGIC)?;
    binio::write_u32(&mut w, m.n_samples() as u32)?;
    binio::write_u32(&mut w, m.dim() as u32)?;
    for v in m.data.as_slice() {
        binio::write_f32(&mut w, *v as f32)?;
    }
    w.flush()?;

    let ids_file = fs::File::create(sidecar_path(path))?;
    let mut w = BufWriter::new(ids_file);
    for id in &m.ids {
        writeln!(w, "{id}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_raw(path: &Path, magic: &[u8], n: u32, dim: u32, payload: &[f32]) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(magic);
        bytes.extend_from_slice(&n.to_le_bytes());
        bytes.extend_from_slice(&dim.to_le_bytes());
        for v in payload {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).unwrap();
        fs::write(sidecar_path(path), (0..n).map(|i| format!("p{i}\n")).collect::<String>())
            .unwrap();
    }

    #[test]
    fn decodes_header_and_payload() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.femb");
        write_raw(&path, EMBEDDINGS_MAGIC, 2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let m = read_embeddings(&path).unwrap();
        assert_eq!(m.n_samples(), 2);
        assert_eq!(m.dim(), 3);
        assert_eq!(m.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(m.ids(), &["p0".to_string(), "p1".to_string()]);
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.femb");
        write_raw(&path, EMBEDDINGS_MAGIC, 2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        match read_embeddings(&path) {
            Err(DataError::TruncatedFile { expected: 24, got: 20 }) => {}
            other => panic!("expected TruncatedFile, got {other:?}"),
        }
    }

    #[test]
    fn wrong_magic_is_an_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.femb");
        write_raw(&path, b"FAIREMB9", 1, 1, &[1.0]);
        assert!(matches!(read_embeddings(&path), Err(DataError::BadMagic { .. })));
    }

    #[test]
    fn non_finite_entry_reports_position() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.femb");
        write_raw(&path, EMBEDDINGS_MAGIC, 2, 2, &[1.0, 2.0, f32::NAN, 4.0]);
        match read_embeddings(&path) {
            Err(DataError::NonFiniteValue { row: 1, col: 0 }) => {}
            other => panic!("expected NonFiniteValue at (1,0), got {other:?}"),
        }
    }

    #[test]
    fn write_after_read_is_byte_identical() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.femb");
        write_raw(&path, EMBEDDINGS_MAGIC, 2, 2, &[0.25, -1.5, 3.75, 0.0]);
        let m = read_embeddings(&path).unwrap();
        let copy = dir.path().join("copy.femb");
        write_embeddings(&m, &copy).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&copy).unwrap());
        assert_eq!(
            fs::read(sidecar_path(&path)).unwrap(),
            fs::read(sidecar_path(&copy)).unwrap()
        );
    }

    #[test]
    fn duplicate_ids_rejected() {
        let data = DenseMatrix::zeros(2, 1);
        let err = EmbeddingMatrix::new(vec!["a".into(), "a".into()], data).unwrap_err();
        assert!(matches!(err, DataError::DuplicateId { .. }));
    }
}
