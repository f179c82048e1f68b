//! On-disk formats: key-value text documents, the binary trajectory
//! container and FNV-1a content hashes.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numkit::DenseMatrix;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn fnv1a_file(path: &Path) -> Result<u64> {
    Ok(fnv1a(&fs::read(path)?))
}

/// Ordered `key = value` document. `[section]` headers prefix the keys that
/// follow with `section.`; `#` starts a comment line.
#[derive(Clone, Debug, Default)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
    // source line of each parsed entry, 0 for entries set in code
    lines: Vec<usize>,
}

impl PartialEq for KvDoc {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Eq for KvDoc {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KvParseError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for KvParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for KvParseError {}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> std::result::Result<Self, KvParseError> {
        let mut doc = Self::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |message: String| KvParseError { line: i + 1, message };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header `{line}`")))?
                    .trim();
                if name.is_empty() || name.contains(char::is_whitespace) {
                    return Err(err(format!("invalid section name `{name}`")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(err(format!("invalid key `{key}`")));
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            if doc.get(&full).is_some() {
                return Err(err(format!("duplicate key `{full}`")));
            }
            doc.entries.push((full, value.trim().to_string()));
            doc.lines.push(i + 1);
        }
        Ok(doc)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Inserts or replaces, keeping first-insertion order.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => {
                self.entries.push((key, value));
                self.lines.push(0);
            }
        }
    }

    /// Line the key was parsed from, if it came from text.
    pub fn line(&self, key: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|(k, _)| k == key)
            .map(|i| self.lines[i])
            .filter(|&l| l > 0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Flat `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"LLTK";
pub const TRAJECTORY_VERSION: u8 = 0x01;

/// One record of the binary trajectory container.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub params: Vec<f64>,
}

/// Encodes records: magic, version byte, little-endian `u32` record count
/// and parameter dimension, then per record `u32` epoch, four `f64` metrics
/// and the parameters.
pub fn encode_records(records: &[RawRecord]) -> Result<Vec<u8>> {
    let dim = records.first().map_or(0, |r| r.params.len());
    if let Some(r) = records.iter().find(|r| r.params.len() != dim) {
        return Err(Error::Shape(format!(
            "record at epoch {} has {} parameters, expected {dim}",
            r.epoch,
            r.params.len()
        )));
    }
    let mut out = Vec::with_capacity(13 + records.len() * (36 + 8 * dim));
    out.extend_from_slice(TRAJECTORY_MAGIC);
    out.push(TRAJECTORY_VERSION);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.epoch.to_le_bytes());
        for v in [r.train_loss, r.train_acc, r.test_loss, r.test_acc] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &r.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_records(bytes: &[u8], origin: &Path) -> Result<Vec<RawRecord>> {
    let bad = |reason: &str| Error::Format {
        path: origin.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut cur = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(bad("truncated"));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    if take(4)? != TRAJECTORY_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = take(1)?[0];
    if version != TRAJECTORY_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let f64_at = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8 bytes"));
    let n = u32_at(take(4)?) as usize;
    let dim = u32_at(take(4)?) as usize;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let epoch = u32_at(take(4)?);
        let m = take(32)?;
        let metrics: Vec<f64> = m.chunks_exact(8).map(f64_at).collect();
        let params = take(8 * dim)?.chunks_exact(8).map(f64_at).collect();
        records.push(RawRecord {
            epoch,
            train_loss: metrics[0],
            train_acc: metrics[1],
            test_loss: metrics[2],
            test_acc: metrics[3],
            params,
        });
    }
    if !cur.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(records)
}

/// Sidecar path: same basename with a `.meta` suffix.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

/// Writes the container and its `.meta` sidecar.
pub fn write_trajectory_file(path: &Path, records: &[RawRecord], meta: &KvDoc) -> Result<()> {
    let bytes = encode_records(records)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    meta.write(&meta_path(path))?;
    Ok(())
}

pub fn read_trajectory_file(path: &Path) -> Result<(Vec<RawRecord>, KvDoc)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let records = decode_records(&bytes, path)?;
    let meta = KvDoc::read(&meta_path(path))?;
    Ok((records, meta))
}

pub const MATRIX_MAGIC: &[u8; 4] = b"LLTM";

/// Dense matrix container: magic, version byte, little-endian `u32` rows
/// and columns, then row-major `f64` values.
pub fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut out = Vec::with_capacity(13 + 8 * m.as_slice().len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.push(TRAJECTORY_VERSION);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    let bytes = fs::read(path)?;
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 13 || &bytes[..4] != MATRIX_MAGIC {
        return Err(bad("bad magic"));
    }
    if bytes[4] != TRAJECTORY_VERSION {
        return Err(bad("unsupported version"));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
    let body = &bytes[13..];
    if body.len() != 8 * rows * cols {
        return Err(bad("size does not match the header"));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    DenseMatrix::from_vec(rows, cols, data)
}

/// Shortest text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Fixed 17-significant-digit scientific notation.
pub fn fmt_f64_17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn kv_sections_and_errors() {
        let doc = KvDoc::parse("# c\nname = x\n[train]\nepochs = 3\nlr= 0.1 \n").unwrap();
        assert_eq!(doc.get("name"), Some("x"));
        assert_eq!(doc.get("train.epochs"), Some("3"));
        assert_eq!(doc.get("train.lr"), Some("0.1"));
        assert_eq!(doc.line("train.lr"), Some(5));
        let e = KvDoc::parse("a = 1\n\njunk line\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = KvDoc::parse("a = 1\na = 2\n").unwrap_err();
        assert_eq!(e.line, 2);
    }

    #[test]
    fn container_layout() {
        let recs = vec![RawRecord {
            epoch: 7,
            train_loss: 0.5,
            train_acc: 1.0,
            test_loss: 0.25,
            test_acc: 0.75,
            params: vec![1.0, -2.0],
        }];
        let bytes = encode_records(&recs).unwrap();
        assert_eq!(&bytes[..5], b"LLTK\x01");
        assert_eq!(&bytes[5..9], &1u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &2u32.to_le_bytes());
        assert_eq!(&bytes[13..17], &7u32.to_le_bytes());
        assert_eq!(bytes.len(), 13 + 4 + 32 + 16);
        assert!(decode_records(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
    }

    #[test]
    fn matrix_round_trip() {
        let dir = std::env::temp_dir().join(format!("lltk-matrix-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let m = DenseMatrix::from_vec(2, 3, vec![1.0, -0.5, 3.25, 1e-300, f64::MAX, 0.0]).unwrap();
        let path = dir.join("m.bin");
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
        fs::write(&path, b"LLTM\x01\x01\0\0\0").unwrap();
        assert!(read_matrix(&path).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }

    proptest! {
        #[test]
        fn container_round_trips(
            params in proptest::collection::vec(proptest::collection::vec(-1e6f64..1e6, 3), 0..5),
            loss in 0f64..10.0,
        ) {
            let recs: Vec<RawRecord> = params.into_iter().enumerate().map(|(i, p)| RawRecord {
                epoch: i as u32, train_loss: loss, train_acc: 0.5, test_loss: loss * 2.0,
                test_acc: 0.25, params: p,
            }).collect();
            let bytes = encode_records(&recs).unwrap();
            prop_assert_eq!(decode_records(&bytes, Path::new("x")).unwrap(), recs);
        }

        #[test]
        fn seventeen_digits_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL) {
            prop_assert_eq!(fmt_f64_17(v).parse::<f64>().unwrap(), v);
            prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
