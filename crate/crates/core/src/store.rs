//! Embedding sets and run logs on disk.
//!
//! An embedding file is a fixed 12-byte header followed by a row-major
//! `f32` little-endian payload:
//!
//! ```text
//! b"EMB1" | u32 LE record count N | u32 LE dimension D | N*D f32 LE
//! ```
//!
//! Per-record identity lives in a sidecar `<basename>.manifest.json` whose
//! `records` array is in payload row order. Run logs are JSON lines, one
//! [`EpochRecord`] per line.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extractor {
    Midlevel,
    Highlevel,
}

/// One image's embedding plus its identity tags.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub image_id: String,
    pub class_id: u32,
    pub domain: Domain,
    pub extractor: Extractor,
    pub vector: Vec<f32>,
}

impl FeatureRecord {
    pub fn vector_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&v| f64::from(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub dataset_tag: String,
    pub domain: Domain,
    pub extractor: Extractor,
    pub dim: usize,
    pub num_classes: u32,
    pub records: Vec<FeatureRecord>,
}

impl EmbeddingSet {
    /// Checks every structural invariant of the set.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Manifest("dimension must be positive".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Manifest("num_classes must be positive".into()));
        }
        if self.records.is_empty() {
            return Err(Error::Manifest("embedding set has no records".into()));
        }
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if r.vector.len() != self.dim {
                return Err(Error::Dimension(format!(
                    "record {} has dimension {}, set declares {}",
                    r.image_id,
                    r.vector.len(),
                    self.dim
                )));
            }
            if r.class_id >= self.num_classes {
                return Err(Error::Manifest(format!(
                    "record {} has class_id {} >= num_classes {}",
                    r.image_id, r.class_id, self.num_classes
                )));
            }
            if r.domain != self.domain || r.extractor != self.extractor {
                return Err(Error::Manifest(format!(
                    "record {} domain/extractor tags disagree with its set",
                    r.image_id
                )));
            }
            if let Some(i) = r.vector.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "record {} has non-finite component at {i}",
                    r.image_id
                )));
            }
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate image_id {}",
                    r.image_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&FeatureRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    pub fn class_records(&self, class_id: u32) -> impl Iterator<Item = &FeatureRecord> {
        self.records.iter().filter(move |r| r.class_id == class_id)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    dataset_tag: String,
    domain: Domain,
    extractor: Extractor,
    num_classes: u32,
    records: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    image_id: String,
    class_id: u32,
}

/// Sidecar manifest location: `feat.emb` -> `feat.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

pub fn encode_payload(set: &EmbeddingSet) -> Result<Vec<u8>> {
    let count = u32::try_from(set.records.len())
        .map_err(|_| Error::Manifest("too many records for u32 header".into()))?;
    let dim = u32::try_from(set.dim)
        .map_err(|_| Error::Manifest("dimension does not fit u32 header".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + set.records.len() * set.dim * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for r in &set.records {
        for v in &r.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses the binary payload. Returns `(count, dim, rows)`.
pub fn decode_payload(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<f32>>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:02x?}, expected {:02x?}",
            &bytes[..4],
            MAGIC
        )));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as u64;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
    if dim == 0 {
        return Err(Error::Corruption("header declares dimension 0".into()));
    }
    let payload = (bytes.len() - HEADER_LEN) as u64;
    let expected = count * dim * 4;
    if payload != expected {
        return Err(Error::Corruption(format!(
            "header declares {count}x{dim} values ({expected} bytes) but payload has {payload} bytes"
        )));
    }
    let (count, dim) = (count as usize, dim as usize);
    let rows = bytes[HEADER_LEN..]
        .chunks_exact(dim * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok((count, dim, rows))
}

/// Writes the payload to `path` and the manifest beside it.
pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    set.validate()?;
    let payload = encode_payload(set)?;
    let manifest = Manifest {
        dataset_tag: set.dataset_tag.clone(),
        domain: set.domain,
        extractor: set.extractor,
        num_classes: set.num_classes,
        records: set
            .records
            .iter()
            .map(|r| ManifestEntry {
                image_id: r.image_id.clone(),
                class_id: r.class_id,
            })
            .collect(),
    };
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}

pub fn ingest_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let mbytes = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_slice(&mbytes)
        .map_err(|e| Error::Manifest(format!("{}: {e}", mpath.display())))?;
    assemble(&bytes, manifest)
}

/// Ingests from in-memory payload and manifest JSON.
pub fn ingest_bytes(payload: &[u8], manifest_json: &[u8]) -> Result<EmbeddingSet> {
    let manifest: Manifest =
        serde_json::from_slice(manifest_json).map_err(|e| Error::Manifest(e.to_string()))?;
    assemble(payload, manifest)
}

fn assemble(payload: &[u8], manifest: Manifest) -> Result<EmbeddingSet> {
    let (count, dim, rows) = decode_payload(payload)?;
    if manifest.records.len() != count {
        return Err(Error::Corruption(format!(
            "header declares {count} records, manifest lists {}",
            manifest.records.len()
        )));
    }
    let records = manifest
        .records
        .into_iter()
        .zip(rows)
        .map(|(entry, vector)| FeatureRecord {
            image_id: entry.image_id,
            class_id: entry.class_id,
            domain: manifest.domain,
            extractor: manifest.extractor,
            vector,
        })
        .collect();
    let set = EmbeddingSet {
        dataset_tag: manifest.dataset_tag,
        domain: manifest.domain,
        extractor: manifest.extractor,
        dim,
        num_classes: manifest.num_classes,
        records,
    };
    set.validate()?;
    Ok(set)
}

/// One epoch of a bandit training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub arm_index: usize,
    pub val_accuracy: f64,
    /// Absent until every arm has been counted once.
    pub ucb_values: Option<Vec<f64>>,
    pub counts: Vec<u64>,
    pub rewards: Vec<f64>,
}

impl EpochRecord {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.val_accuracy) {
            return Err(Error::Validation(format!(
                "epoch {} accuracy {} outside [0, 1]",
                self.epoch, self.val_accuracy
            )));
        }
        let total: u64 = self.counts.iter().sum();
        if total != self.epoch + 1 {
            return Err(Error::Validation(format!(
                "epoch {} counts sum to {total}, expected {}",
                self.epoch,
                self.epoch + 1
            )));
        }
        if self.rewards.len() != self.counts.len() || self.arm_index >= self.counts.len() {
            return Err(Error::Validation(format!(
                "epoch {} arm vectors are inconsistent",
                self.epoch
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends in memory under the same sequencing rule as [`append_run_log`].
    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        let expected = self.records.len() as u64;
        if record.epoch != expected {
            return Err(Error::Sequencing {
                expected,
                got: record.epoch,
            });
        }
        record.validate()?;
        self.records.push(record);
        Ok(())
    }
}

fn count_lines(path: &Path) -> Result<u64> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut n = 0;
    for line in BufReader::new(file).lines() {
        if !line.map_err(|e| Error::io(path, e))?.trim().is_empty() {
            n += 1;
        }
    }
    Ok(n)
}

pub fn append_run_log(log_path: &Path, record: &EpochRecord) -> Result<()> {
    let expected = count_lines(log_path)?;
    if record.epoch != expected {
        return Err(Error::Sequencing {
            expected,
            got: record.epoch,
        });
    }
    record.validate()?;
    let mut line = serde_json::to_string(record)?;
    line.push('\n');
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(log_path)
        .map_err(|e| Error::io(log_path, e))?;
    file.write_all(line.as_bytes())
        .map_err(|e| Error::io(log_path, e))?;
    Ok(())
}

pub fn read_run_log(log_path: &Path) -> Result<RunLog> {
    let file = File::open(log_path).map_err(|e| Error::io(log_path, e))?;
    let mut log = RunLog::default();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(log_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EpochRecord = serde_json::from_str(&line)?;
        log.push(record)?;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, dim: usize) -> EmbeddingSet {
        EmbeddingSet {
            dataset_tag: "toy".into(),
            domain: Domain::Synthetic,
            extractor: Extractor::Midlevel,
            dim,
            num_classes: 2,
            records: (0..n)
                .map(|i| FeatureRecord {
                    image_id: format!("img{i}"),
                    class_id: (i % 2) as u32,
                    domain: Domain::Synthetic,
                    extractor: Extractor::Midlevel,
                    vector: (0..dim).map(|j| (i * dim + j) as f32 * 0.5).collect(),
                })
                .collect(),
        }
    }

    fn record(epoch: u64, counts: Vec<u64>) -> EpochRecord {
        let rewards = counts.iter().map(|&c| c as f64 * 0.5).collect();
        EpochRecord {
            epoch,
            arm_index: 0,
            val_accuracy: 0.5,
            ucb_values: None,
            counts,
            rewards,
        }
    }

    #[test]
    fn minimal_file_ingests() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.emb");
        write_embeddings(&toy(2, 3), &path).unwrap();
        assert_eq!(fs::read(&path).unwrap().len(), HEADER_LEN + 6 * 4);
        let set = ingest_embeddings(&path).unwrap();
        assert_eq!(set.records.len(), 2);
        assert!(dir.path().join("toy.manifest.json").exists());
    }

    #[test]
    fn extra_payload_row_is_corruption() {
        let set = toy(2, 3);
        let mut bytes = encode_payload(&set).unwrap();
        bytes.extend_from_slice(&[0u8; 12]);
        let manifest = r#"{"dataset_tag":"t","domain":"synthetic","extractor":"midlevel",
            "num_classes":2,"records":[{"image_id":"a","class_id":0},{"image_id":"b","class_id":1}]}"#;
        assert!(matches!(
            ingest_bytes(&bytes, manifest.as_bytes()),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn bad_magic_and_bad_class() {
        let set = toy(2, 3);
        let mut bytes = encode_payload(&set).unwrap();
        let manifest = r#"{"dataset_tag":"t","domain":"synthetic","extractor":"midlevel",
            "num_classes":2,"records":[{"image_id":"a","class_id":0},{"image_id":"b","class_id":2}]}"#;
        assert!(matches!(
            ingest_bytes(&bytes, manifest.as_bytes()),
            Err(Error::Manifest(_))
        ));
        bytes[0] = b'X';
        assert!(matches!(
            ingest_bytes(&bytes, manifest.as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut set = toy(2, 1);
        set.records[1].image_id = "img0".into();
        assert!(matches!(set.validate(), Err(Error::Manifest(_))));
    }

    #[test]
    fn empty_set_refused_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = toy(1, 1);
        set.records.clear();
        let path = dir.path().join("e.emb");
        assert!(matches!(write_embeddings(&set, &path), Err(Error::Manifest(_))));
        assert!(!path.exists());
    }

    #[test]
    fn single_zero_value_is_four_payload_bytes() {
        let mut set = toy(1, 1);
        set.records[0].vector = vec![0.0];
        let bytes = encode_payload(&set).unwrap();
        assert_eq!(bytes.len() - HEADER_LEN, 4);
        assert_eq!(&bytes[HEADER_LEN..], &[0, 0, 0, 0]);
    }

    #[test]
    fn non_finite_rejected() {
        let mut set = toy(2, 2);
        set.records[0].vector[1] = f32::NAN;
        assert!(matches!(set.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn run_log_sequencing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        append_run_log(&path, &record(0, vec![1, 0])).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1);
        let err = append_run_log(&path, &record(2, vec![2, 1])).unwrap_err();
        assert!(matches!(err, Error::Sequencing { expected: 1, got: 2 }));
        assert_eq!(read_run_log(&path).unwrap().len(), 1);
    }

    #[test]
    fn run_log_counts_must_match_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        assert!(matches!(
            append_run_log(&path, &record(0, vec![1, 1])),
            Err(Error::Validation(_))
        ));
    }
}
