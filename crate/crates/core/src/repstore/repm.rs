//! Binary on-disk format for representation matrices.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic bytes "REPM"
//! 4       4     format version (u32, currently 1)
//! 8       8     rows (u64)
//! 16      8     dims (u64)
//! 24      1     element type: 1 = f32, 2 = f64
//! 25      ...   payload: rows * dims elements, row-major, little-endian
//! ```
//!
//! The payload must contain exactly `rows * dims` elements and nothing
//! after them; a short or long file is rejected. Every element must be
//! finite. Files are hashed (SHA-256 over the complete file, header
//! included) as they are written, and the hex digest is returned so callers
//! can record it in a manifest without a second pass.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: [u8; 4] = *b"REPM";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;
const HEADER_LEN: usize = 25;

/// Elements per read/write chunk; keeps buffers small on large files.
const CHUNK_ELEMS: usize = 16_384;

fn header_bytes(rows: u64, dims: u64, dtype: u8) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(&MAGIC);
    h[4..8].copy_from_slice(&VERSION.to_le_bytes());
    h[8..16].copy_from_slice(&rows.to_le_bytes());
    h[16..24].copy_from_slice(&dims.to_le_bytes());
    h[24] = dtype;
    h
}

/// Writer that hashes everything it passes through.
struct HashingWriter<W: Write> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> HashingWriter<W> {
    fn new(inner: W) -> Self {
        HashingWriter {
            inner,
            hasher: Sha256::new(),
        }
    }

    fn write_all(&mut self, buf: &[u8]) -> std::io::Result<()> {
        self.inner.write_all(buf)?;
        self.hasher.update(buf);
        Ok(())
    }

    fn finish(mut self) -> std::io::Result<String> {
        self.inner.flush()?;
        Ok(hex::encode(self.hasher.finalize()))
    }
}

fn write_payload<T, F>(
    path: &Path,
    rows: usize,
    dims: usize,
    data: &[T],
    dtype: u8,
    is_finite: impl Fn(&T) -> bool,
    to_bytes: F,
) -> Result<String>
where
    F: Fn(&T, &mut Vec<u8>),
{
    let count = rows
        .checked_mul(dims)
        .ok_or_else(|| Error::InvalidArgument("matrix size overflows usize".into()))?;
    if count == 0 {
        return Err(Error::InvalidArgument(
            "refusing to write an empty matrix (rows and dims must be > 0)".into(),
        ));
    }
    if data.len() != count {
        return Err(Error::InvalidArgument(format!(
            "payload has {} elements, header promises {rows} x {dims}",
            data.len()
        )));
    }
    for (i, v) in data.iter().enumerate() {
        if !is_finite(v) {
            return Err(Error::NonFinite {
                context: path.display().to_string(),
                row: i / dims,
                col: i % dims,
            });
        }
    }

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = HashingWriter::new(BufWriter::new(file));
    w.write_all(&header_bytes(rows as u64, dims as u64, dtype))
        .map_err(|e| Error::io(path, e))?;

    let mut buf = Vec::with_capacity(CHUNK_ELEMS * 8);
    for chunk in data.chunks(CHUNK_ELEMS) {
        buf.clear();
        for v in chunk {
            to_bytes(v, &mut buf);
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    w.finish().map_err(|e| Error::io(path, e))
}

/// Write an `f32` matrix; returns the SHA-256 hex digest of the file.
pub fn write_f32(path: &Path, rows: usize, dims: usize, data: &[f32]) -> Result<String> {
    write_payload(
        path,
        rows,
        dims,
        data,
        DTYPE_F32,
        |v| v.is_finite(),
        |v, buf| buf.extend_from_slice(&v.to_le_bytes()),
    )
}

/// Write an `f64` matrix; returns the SHA-256 hex digest of the file.
pub fn write_f64(path: &Path, rows: usize, dims: usize, data: &[f64]) -> Result<String> {
    write_payload(
        path,
        rows,
        dims,
        data,
        DTYPE_F64,
        |v| v.is_finite(),
        |v, buf| buf.extend_from_slice(&v.to_le_bytes()),
    )
}

struct Header {
    rows: usize,
    dims: usize,
    dtype: u8,
}

fn read_header(path: &Path, r: &mut impl Read) -> Result<Header> {
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format {
                path: path.to_path_buf(),
                detail: "file shorter than the 25-byte header".into(),
            }
        } else {
            Error::io(path, e)
        }
    })?;
    if h[0..4] != MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("bad magic bytes {:02x?}", &h[0..4]),
        });
    }
    let version = u32::from_le_bytes(h[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("unsupported format version {version}"),
        });
    }
    let rows = u64::from_le_bytes(h[8..16].try_into().unwrap());
    let dims = u64::from_le_bytes(h[16..24].try_into().unwrap());
    let dtype = h[24];
    if dtype != DTYPE_F32 && dtype != DTYPE_F64 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("unknown element type tag {dtype}"),
        });
    }
    let rows = usize::try_from(rows).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        detail: format!("row count {rows} does not fit in usize"),
    })?;
    let dims = usize::try_from(dims).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        detail: format!("dim count {dims} does not fit in usize"),
    })?;
    if rows == 0 || dims == 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("degenerate shape {rows} x {dims}"),
        });
    }
    rows.checked_mul(dims).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        detail: format!("shape {rows} x {dims} overflows usize"),
    })?;
    Ok(Header { rows, dims, dtype })
}

fn read_elems<T: Copy + Default, const W: usize>(
    path: &Path,
    r: &mut impl Read,
    count: usize,
    from_bytes: impl Fn([u8; W]) -> T,
    is_finite: impl Fn(T) -> bool,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(count);
    let mut buf = vec![0u8; CHUNK_ELEMS * W];
    let mut remaining = count;
    while remaining > 0 {
        let take = remaining.min(CHUNK_ELEMS);
        let bytes = &mut buf[..take * W];
        r.read_exact(bytes).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format {
                    path: path.to_path_buf(),
                    detail: format!(
                        "payload truncated: header promises {count} elements, file ends early"
                    ),
                }
            } else {
                Error::io(path, e)
            }
        })?;
        for chunk in bytes.chunks_exact(W) {
            let v = from_bytes(chunk.try_into().unwrap());
            if !is_finite(v) {
                let i = out.len();
                return Err(Error::NonFinite {
                    context: path.display().to_string(),
                    row: 0, // fixed up by caller, which knows dims
                    col: i,
                });
            }
            out.push(v);
        }
        remaining -= take;
    }
    // Reject trailing bytes: the payload must be exactly rows * dims elements.
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(out),
        Ok(_) => Err(Error::Format {
            path: path.to_path_buf(),
            detail: "trailing bytes after the declared payload".into(),
        }),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn fixup_nonfinite(err: Error, dims: usize) -> Error {
    match err {
        Error::NonFinite { context, col, .. } => Error::NonFinite {
            context,
            row: col / dims,
            col: col % dims,
        },
        e => e,
    }
}

/// Read an `f32` matrix. Errors if the file holds `f64` data.
pub fn read_f32(path: &Path) -> Result<Matrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = read_header(path, &mut r)?;
    if header.dtype != DTYPE_F32 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: "expected f32 elements, file holds f64".into(),
        });
    }
    let count = header.rows * header.dims;
    let data = read_elems::<f32, 4>(path, &mut r, count, f32::from_le_bytes, |v| v.is_finite())
        .map_err(|e| fixup_nonfinite(e, header.dims))?;
    Matrix::new(header.rows, header.dims, data)
}

/// Read an `f64` matrix as `(rows, dims, data)`. Errors if the file holds
/// `f32` data.
pub fn read_f64(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = read_header(path, &mut r)?;
    if header.dtype != DTYPE_F64 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: "expected f64 elements, file holds f32".into(),
        });
    }
    let count = header.rows * header.dims;
    let data = read_elems::<f64, 8>(path, &mut r, count, f64::from_le_bytes, |v| v.is_finite())
        .map_err(|e| fixup_nonfinite(e, header.dims))?;
    Ok((header.rows, header.dims, data))
}

/// SHA-256 hex digest of an arbitrary file.
pub fn sha256_file(path: &Path) -> Result<String> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65_536];
    loop {
        let n = r.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn f32_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.repm");
        let data: Vec<f32> = vec![0.0, -1.5, 3.25e-7, 1.0e30, -0.0, 42.0];
        let digest = write_f32(&path, 2, 3, &data).unwrap();
        assert_eq!(digest, sha256_file(&path).unwrap());

        let m = read_f32(&path).unwrap();
        assert_eq!((m.rows(), m.dims()), (2, 3));
        // Bit-exact, including the sign of -0.0.
        for (a, b) in m.data().iter().zip(&data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.repm");
        let data: Vec<f64> = vec![std::f64::consts::E, 1.0, -2.0, 0.125];
        write_f64(&path, 4, 1, &data).unwrap();
        let (rows, dims, back) = read_f64(&path).unwrap();
        assert_eq!((rows, dims), (4, 1));
        for (a, b) in back.iter().zip(&data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_layout_is_stable() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.repm");
        write_f32(&path, 1, 2, &[1.0, 2.0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"REPM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(bytes[24], 1);
        assert_eq!(bytes.len(), 25 + 2 * 4);
        assert_eq!(&bytes[25..29], &1.0f32.to_le_bytes());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.repm");
        write_f32(&path, 1, 1, &[1.0]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        match read_f32(&path) {
            Err(Error::Format { detail, .. }) => assert!(detail.contains("magic")),
            other => panic!("expected Format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_and_padded_payloads_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.repm");
        write_f32(&path, 2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        match read_f32(&path) {
            Err(Error::Format { detail, .. }) => assert!(detail.contains("truncated")),
            other => panic!("expected Format error, got {other:?}"),
        }

        let mut padded = bytes.clone();
        padded.push(0);
        std::fs::write(&path, &padded).unwrap();
        match read_f32(&path) {
            Err(Error::Format { detail, .. }) => assert!(detail.contains("trailing")),
            other => panic!("expected Format error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_values_are_rejected_on_both_paths() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.repm");
        assert!(matches!(
            write_f32(&path, 1, 2, &[1.0, f32::NAN]),
            Err(Error::NonFinite { .. })
        ));

        // Write a valid file, then corrupt one element into an infinity.
        write_f32(&path, 2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[25 + 2 * 4..25 + 3 * 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match read_f32(&path) {
            Err(Error::NonFinite { row, col, .. }) => assert_eq!((row, col), (1, 0)),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.repm");
        write_f64(&path, 1, 1, &[1.0]).unwrap();
        assert!(matches!(read_f32(&path), Err(Error::Format { .. })));
        write_f32(&path, 1, 1, &[1.0]).unwrap();
        assert!(matches!(read_f64(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn empty_matrices_are_refused() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.repm");
        assert!(write_f32(&path, 0, 3, &[]).is_err());
        assert!(write_f32(&path, 3, 0, &[]).is_err());
    }
}
