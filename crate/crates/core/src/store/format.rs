//! On-disk formats.
//!
//! Embedding file (all integers little-endian):
//!
//! ```text
//! 0..8    magic "SVLEMB1\0"
//! 8..12   format version (u32, = 1)
//! 12..16  rows (u32)
//! 16..20  cols (u32)
//! 20      dtype (1 = f32)
//! 21..24  zero padding
//! 24..    rows * cols f32, row-major
//! ```
//!
//! An optional metadata trailer may follow the payload: magic "SVLMETA\0",
//! a u32 byte length, then that many bytes of UTF-8 `key=value` lines.
//! Files without metadata end exactly at the payload.
//!
//! Label file: magic "SVLLAB1\0", version u32, count u32, then `count` u32
//! class indices. Class-name file: UTF-8, one name per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::numerics::Matrix;

pub const EMBEDDING_MAGIC: [u8; 8] = *b"SVLEMB1\0";
pub const LABEL_MAGIC: [u8; 8] = *b"SVLLAB1\0";
pub const METADATA_MAGIC: [u8; 8] = *b"SVLMETA\0";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
pub const EMBEDDING_HEADER_LEN: usize = 24;
pub const LABEL_HEADER_LEN: usize = 16;

/// Provenance carried alongside an embedding matrix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatrixMetadata {
    pub encoder_id: Option<String>,
    pub normalized: bool,
    pub dataset: Option<String>,
}

impl MatrixMetadata {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    fn encode(&self) -> Vec<u8> {
        let mut text = String::new();
        if let Some(enc) = &self.encoder_id {
            text.push_str(&format!("encoder={enc}\n"));
        }
        text.push_str(&format!("normalized={}\n", self.normalized));
        if let Some(ds) = &self.dataset {
            text.push_str(&format!("dataset={ds}\n"));
        }
        text.into_bytes()
    }

    fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let text = std::str::from_utf8(bytes).map_err(|e| FormatError::Metadata(e.to_string()))?;
        let mut meta = MatrixMetadata::default();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| FormatError::Metadata(format!("line without '=': {line:?}")))?;
            match key {
                "encoder" => meta.encoder_id = Some(value.to_string()),
                "dataset" => meta.dataset = Some(value.to_string()),
                "normalized" => {
                    meta.normalized = value
                        .parse()
                        .map_err(|_| FormatError::Metadata(format!("bad normalized flag {value:?}")))?
                }
                other => return Err(FormatError::Metadata(format!("unknown key {other:?}"))),
            }
        }
        Ok(meta)
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn check_magic(bytes: &[u8], magic: &[u8; 8], header_len: usize) -> Result<(), FormatError> {
    let head = &bytes[..bytes.len().min(8)];
    if head != &magic[..head.len()] {
        return Err(FormatError::BadMagic {
            expected: *magic,
            found: head.to_vec(),
        });
    }
    if bytes.len() < header_len {
        return Err(FormatError::Truncated {
            needed: header_len,
            got: bytes.len(),
        });
    }
    Ok(())
}

fn check_version(bytes: &[u8]) -> Result<(), FormatError> {
    let found = read_u32(bytes, 8);
    if found != FORMAT_VERSION {
        return Err(FormatError::VersionMismatch {
            expected: FORMAT_VERSION,
            found,
        });
    }
    Ok(())
}

fn dim_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidInput(format!("{what} {n} does not fit in u32")))
}

pub fn encode_matrix(matrix: &Matrix<f32>, metadata: &MatrixMetadata) -> Result<Vec<u8>> {
    matrix.ensure_finite("embedding matrix")?;
    let rows = dim_u32(matrix.rows(), "row count")?;
    let cols = dim_u32(matrix.cols(), "column count")?;
    let mut out = Vec::with_capacity(EMBEDDING_HEADER_LEN + 4 * matrix.as_slice().len());
    out.extend_from_slice(&EMBEDDING_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    out.push(DTYPE_F32);
    out.extend_from_slice(&[0, 0, 0]);
    for v in matrix.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if !metadata.is_empty() {
        let meta = metadata.encode();
        out.extend_from_slice(&METADATA_MAGIC);
        out.extend_from_slice(&dim_u32(meta.len(), "metadata length")?.to_le_bytes());
        out.extend_from_slice(&meta);
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<(Matrix<f32>, MatrixMetadata), FormatError> {
    check_magic(bytes, &EMBEDDING_MAGIC, EMBEDDING_HEADER_LEN)?;
    check_version(bytes)?;
    let rows = read_u32(bytes, 12) as usize;
    let cols = read_u32(bytes, 16) as usize;
    if bytes[20] != DTYPE_F32 {
        return Err(FormatError::UnknownDtype(bytes[20]));
    }
    if bytes[21..24] != [0, 0, 0] {
        return Err(FormatError::BadPadding);
    }
    let payload_len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or(FormatError::Truncated {
            needed: usize::MAX,
            got: bytes.len(),
        })?;
    let end = EMBEDDING_HEADER_LEN + payload_len;
    if bytes.len() < end {
        return Err(FormatError::Truncated {
            needed: end,
            got: bytes.len(),
        });
    }
    let data: Vec<f32> = bytes[EMBEDDING_HEADER_LEN..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite(i));
    }

    let rest = &bytes[end..];
    let metadata = if rest.is_empty() {
        MatrixMetadata::default()
    } else {
        if rest.len() < 12 || rest[..8] != METADATA_MAGIC {
            return Err(FormatError::TrailingBytes(rest.len()));
        }
        let len = read_u32(rest, 8) as usize;
        let body = &rest[12..];
        if body.len() < len {
            return Err(FormatError::Truncated {
                needed: end + 12 + len,
                got: bytes.len(),
            });
        }
        if body.len() > len {
            return Err(FormatError::TrailingBytes(body.len() - len));
        }
        MatrixMetadata::decode(body)?
    };
    let matrix = Matrix::new(rows, cols, data).expect("payload length checked");
    Ok((matrix, metadata))
}

pub fn encode_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(LABEL_HEADER_LEN + 4 * labels.len());
    out.extend_from_slice(&LABEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim_u32(labels.len(), "label count")?.to_le_bytes());
    for &l in labels {
        out.extend_from_slice(&dim_u32(l, "label")?.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<usize>, FormatError> {
    check_magic(bytes, &LABEL_MAGIC, LABEL_HEADER_LEN)?;
    check_version(bytes)?;
    let count = read_u32(bytes, 12) as usize;
    let end = LABEL_HEADER_LEN + 4 * count;
    if bytes.len() < end {
        return Err(FormatError::Truncated {
            needed: end,
            got: bytes.len(),
        });
    }
    if bytes.len() > end {
        return Err(FormatError::TrailingBytes(bytes.len() - end));
    }
    Ok(bytes[LABEL_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect())
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_matrix(path: impl AsRef<Path>, matrix: &Matrix<f32>, metadata: &MatrixMetadata) -> Result<()> {
    write_atomic(path.as_ref(), &encode_matrix(matrix, metadata)?)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<(Matrix<f32>, MatrixMetadata)> {
    let path = path.as_ref();
    decode_matrix(&read_bytes(path)?).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    write_atomic(path.as_ref(), &encode_labels(labels)?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    decode_labels(&read_bytes(path)?).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_class_names(path: impl AsRef<Path>, names: &[String]) -> Result<()> {
    let mut text = String::new();
    for n in names {
        if n.contains('\n') {
            return Err(Error::InvalidInput(format!("class name {n:?} contains a newline")));
        }
        text.push_str(n);
        text.push('\n');
    }
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn read_class_names(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
        .collect())
}
