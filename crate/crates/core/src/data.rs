//! Dataset manifest (JSON Lines) and the `CCVF` binary feature format.
//!
//! A dataset directory holds `manifest.jsonl`, `appearance.ccvf` and
//! `gait.ccvf`. Row `i` of both feature files belongs to manifest line `i`;
//! there is no id-based join.
//!
//! `CCVF` layout, all little-endian:
//!
//! | offset | size | content                      |
//! |--------|------|------------------------------|
//! | 0      | 4    | magic `b"CCVF"`              |
//! | 4      | 4    | version, `u32`, always 1     |
//! | 8      | 4    | rows, `u32`                  |
//! | 12     | 4    | dim, `u32`                   |
//! | 16     | 4·rows·dim | `f32` payload, row-major |

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const APPEARANCE_FILE: &str = "appearance.ccvf";
pub const GAIT_FILE: &str = "gait.ccvf";

pub const CCVF_MAGIC: [u8; 4] = *b"CCVF";
pub const CCVF_VERSION: u32 = 1;
pub const CCVF_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

/// One tracked video sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceRecord {
    pub seq_id: String,
    pub person_id: i64,
    /// Only meaningful together with `person_id`.
    pub clothes_id: i64,
    pub camera_id: i64,
    pub split: Split,
    pub n_frames: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<SequenceRecord>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Indices of records in `split`, in manifest order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::Manifest {
                line: line_no,
                reason: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SequenceRecord =
                serde_json::from_str(&line).map_err(|e| Error::Manifest {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            if record.n_frames == 0 {
                return Err(Error::Manifest {
                    line: line_no,
                    reason: "n_frames must be at least 1".into(),
                });
            }
            if !seen.insert(record.seq_id.clone()) {
                return Err(Error::Manifest {
                    line: line_no,
                    reason: format!("duplicate seq_id {:?}", record.seq_id),
                });
            }
            records.push(record);
        }
        Ok(Self { records })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            // a derived Serialize on plain fields cannot fail
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Manifest::parse(file)
}

pub fn save_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_jsonl()).map_err(|e| Error::io(path, e))
}

/// Serializes a matrix to `CCVF` bytes. Entries are narrowed to `f32`.
pub fn encode_features(matrix: &Matrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(matrix.rows())
        .map_err(|_| Error::Shape(format!("{} rows exceed u32", matrix.rows())))?;
    let dim = u32::try_from(matrix.cols())
        .map_err(|_| Error::Shape(format!("{} columns exceed u32", matrix.cols())))?;
    let mut out = Vec::with_capacity(CCVF_HEADER_LEN + 4 * matrix.as_slice().len());
    out.extend_from_slice(&CCVF_MAGIC);
    out.extend_from_slice(&CCVF_VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for (i, row) in matrix.iter_rows().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let narrow = v as f32;
            if !narrow.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
            out.extend_from_slice(&narrow.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes one `CCVF` blob from the front of `bytes`, returning the matrix
/// and the number of bytes consumed.
pub fn decode_features_prefix(bytes: &[u8]) -> Result<(Matrix, usize)> {
    if bytes.len() < CCVF_HEADER_LEN {
        return Err(Error::Truncated {
            needed: CCVF_HEADER_LEN,
            available: bytes.len(),
        });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != CCVF_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = word(4);
    if version != CCVF_VERSION {
        return Err(Error::BadVersion(version));
    }
    let rows = word(8) as usize;
    let dim = word(12) as usize;
    let needed = CCVF_HEADER_LEN + rows * dim * 4;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(rows * dim);
    for (p, chunk) in bytes[CCVF_HEADER_LEN..needed].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite {
                row: p / dim,
                col: p % dim,
            });
        }
        data.push(f64::from(v));
    }
    Ok((Matrix::from_vec(rows, dim, data)?, needed))
}

/// Decodes a complete `CCVF` buffer and checks its row count.
pub fn decode_features(bytes: &[u8], expected_rows: usize) -> Result<Matrix> {
    let (m, _) = decode_features_prefix(bytes)?;
    if m.rows() != expected_rows {
        return Err(Error::RowMismatch {
            expected: expected_rows,
            found: m.rows(),
        });
    }
    Ok(m)
}

pub fn read_features(path: impl AsRef<Path>, expected_rows: usize) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, expected_rows)
}

pub fn write_features(matrix: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_features(matrix)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Appearance and gait embeddings, row-aligned to a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub appearance: Matrix,
    pub gait: Matrix,
}

impl FeatureStore {
    pub fn new(appearance: Matrix, gait: Matrix) -> Result<Self> {
        if appearance.rows() != gait.rows() {
            return Err(Error::Shape(format!(
                "appearance has {} rows, gait has {}",
                appearance.rows(),
                gait.rows()
            )));
        }
        if appearance.cols() == 0 || gait.cols() == 0 {
            return Err(Error::Shape("feature dimensions must be at least 1".into()));
        }
        appearance.ensure_finite()?;
        gait.ensure_finite()?;
        Ok(Self { appearance, gait })
    }

    pub fn rows(&self) -> usize {
        self.appearance.rows()
    }
}

/// A manifest together with its feature store.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub features: FeatureStore,
}

impl Dataset {
    pub fn new(manifest: Manifest, features: FeatureStore) -> Result<Self> {
        if manifest.len() != features.rows() {
            return Err(Error::RowMismatch {
                expected: manifest.len(),
                found: features.rows(),
            });
        }
        Ok(Self { manifest, features })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = load_manifest(dir.join(MANIFEST_FILE))?;
        let appearance = read_features(dir.join(APPEARANCE_FILE), manifest.len())?;
        let gait = read_features(dir.join(GAIT_FILE), manifest.len())?;
        Self::new(manifest, FeatureStore::new(appearance, gait)?)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_manifest(&self.manifest, dir.join(MANIFEST_FILE))?;
        write_features(&self.features.appearance, dir.join(APPEARANCE_FILE))?;
        write_features(&self.features.gait, dir.join(GAIT_FILE))
    }
}
