//! On-disk formats: binary feature and loss-matrix containers and the
//! delimited score-table reader.
//!
//! Both binary formats are little-endian with a fixed magic and version,
//! and a file is valid only if its byte length matches the header exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranking::{Orientation, ScoreTable};
use crate::types::{FeatureSequence, LossMatrix};

const FEATURE_MAGIC: [u8; 4] = *b"PQSF";
const LOSS_MAGIC: [u8; 4] = *b"PQLM";
const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u32 = 1;

/// Companion JSON written next to a feature file (same filename plus
/// `.json`), carrying the dataset name and free-form provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

/// Path of the sidecar belonging to a feature file.
pub fn sidecar_path(feature_path: &Path) -> PathBuf {
    let mut os = feature_path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

impl FeatureSidecar {
    pub fn save(&self, feature_path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        Ok(fs::write(sidecar_path(feature_path), text)?)
    }

    /// Loads the sidecar if one exists; a missing sidecar is not an error.
    pub fn load(feature_path: &Path) -> Result<Option<Self>> {
        let path = sidecar_path(feature_path);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(path)?;
        Ok(Some(serde_json::from_str(&text)?))
    }
}

/// Writes a feature sequence as a binary container: header, `N*d` f32
/// features row-major, then `N` u32 labels. The dataset name travels in the
/// optional sidecar, not the binary.
pub fn write_feature_file(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let mut bytes = Vec::with_capacity(28 + 4 * seq.features_flat().len() + 4 * seq.len());
    bytes.extend_from_slice(&FEATURE_MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(seq.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    bytes.extend_from_slice(&seq.n_classes().to_le_bytes());
    bytes.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for &v in seq.features_flat() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for &label in seq.labels() {
        bytes.extend_from_slice(&label.to_le_bytes());
    }
    Ok(fs::write(path, bytes)?)
}

/// Reads a binary feature file. The byte length must match the header
/// exactly; the dataset name comes from the sidecar when present, else the
/// file stem.
pub fn read_feature_file(path: &Path) -> Result<FeatureSequence> {
    let bytes = fs::read(path)?;
    let name = match FeatureSidecar::load(path)? {
        Some(sidecar) => sidecar.name,
        None => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "features".to_string()),
    };
    parse_feature_bytes(&bytes, name)
}

fn parse_feature_bytes(bytes: &[u8], name: String) -> Result<FeatureSequence> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4, "magic")?;
    if magic != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"PQSF\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported feature file version {version}")));
    }
    let n = cur.u64("row count")?;
    let dim = cur.u32("feature dimension")?;
    let n_classes = cur.u32("class count")?;
    let dtype = cur.u32("dtype tag")?;
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype tag {dtype}")));
    }
    let expected = 28u128 + 4 * (n as u128) * (dim as u128) + 4 * (n as u128);
    if bytes.len() as u128 != expected {
        return Err(Error::Format(format!(
            "feature file is {} bytes, header implies exactly {expected}",
            bytes.len()
        )));
    }
    let n = n as usize;
    let dim = dim as usize;
    let features = cur
        .take(4 * n * dim, "feature payload")?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = cur
        .take(4 * n, "label payload")?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    cur.finish()?;
    FeatureSequence::new(features, labels, dim, n_classes, name)
}

/// Writes a loss matrix as a binary container: header, `K` length-prefixed
/// UTF-8 expert names, then `N*K` f64 losses step-major.
pub fn write_loss_matrix(path: &Path, matrix: &LossMatrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(20 + 8 * matrix.losses_flat().len());
    bytes.extend_from_slice(&LOSS_MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(matrix.n_steps() as u64).to_le_bytes());
    bytes.extend_from_slice(&(matrix.n_experts() as u32).to_le_bytes());
    for expert_name in matrix.expert_names() {
        bytes.extend_from_slice(&(expert_name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(expert_name.as_bytes());
    }
    for &loss in matrix.losses_flat() {
        bytes.extend_from_slice(&loss.to_le_bytes());
    }
    Ok(fs::write(path, bytes)?)
}

/// Reads a binary loss matrix, re-validating that every loss is finite and
/// nonnegative.
pub fn read_loss_matrix(path: &Path) -> Result<LossMatrix> {
    parse_loss_bytes(&fs::read(path)?)
}

fn parse_loss_bytes(bytes: &[u8]) -> Result<LossMatrix> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4, "magic")?;
    if magic != LOSS_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"PQLM\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported loss file version {version}")));
    }
    let n = cur.u64("step count")? as usize;
    let k = cur.u32("expert count")? as usize;
    let mut expert_names = Vec::with_capacity(k);
    for i in 0..k {
        let len = cur.u32("name length")? as usize;
        let raw = cur.take(len, "expert name")?;
        let text = std::str::from_utf8(raw)
            .map_err(|_| Error::Format(format!("expert name {i} is not valid UTF-8")))?;
        expert_names.push(text.to_string());
    }
    let count = n
        .checked_mul(k)
        .ok_or_else(|| Error::Format("loss matrix dimensions overflow".into()))?;
    let losses = cur
        .take(8 * count, "loss payload")?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    cur.finish()?;
    LossMatrix::new(losses, k, expert_names)
}

/// Reads a delimited score table: a header row (corner label plus one name
/// per representation) followed by one row per dataset (name plus scores).
/// Cells are separated by tabs, commas, or whitespace; `#` lines and blank
/// lines are skipped. Every row must have the same number of cells.
pub fn read_score_table(path: &Path, orientation: Orientation) -> Result<ScoreTable> {
    parse_score_table(&fs::read_to_string(path)?, orientation)
}

/// Parses score-table text; see [`read_score_table`] for the format.
pub fn parse_score_table(text: &str, orientation: Orientation) -> Result<ScoreTable> {
    let rows: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.trim()))
        .filter(|(_, line)| !line.is_empty() && !line.starts_with('#'))
        .collect();
    let Some(&(_, header)) = rows.first() else {
        return Err(Error::Format("score table is empty".into()));
    };
    let split = |line: &str| -> Vec<String> {
        if line.contains('\t') {
            line.split('\t').map(|c| c.trim().to_string()).collect()
        } else if line.contains(',') {
            line.split(',').map(|c| c.trim().to_string()).collect()
        } else {
            line.split_whitespace().map(|c| c.to_string()).collect()
        }
    };
    let header_cells = split(header);
    let width = header_cells.len();
    if width < 3 {
        return Err(Error::Format(
            "score table header needs a corner label and at least 2 representation names".into(),
        ));
    }
    let representation_names: Vec<String> = header_cells[1..].to_vec();
    let mut dataset_names = Vec::new();
    let mut scores = Vec::new();
    for &(line_no, line) in &rows[1..] {
        let cells = split(line);
        if cells.len() != width {
            return Err(Error::Format(format!(
                "line {line_no}: {} cells, expected {width}",
                cells.len()
            )));
        }
        dataset_names.push(cells[0].clone());
        for cell in &cells[1..] {
            let value: f64 = cell.parse().map_err(|_| {
                Error::Format(format!("line {line_no}: cannot parse {cell:?} as a number"))
            })?;
            scores.push(value);
        }
    }
    if dataset_names.is_empty() {
        return Err(Error::Format("score table has a header but no dataset rows".into()));
    }
    ScoreTable::new(scores, orientation, dataset_names, representation_names)
}

/// Byte-slice reader that errors on truncation and leftover bytes.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        };
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn finish(self) -> Result<()> {
        let extra = self.bytes.len() - self.pos;
        if extra > 0 {
            return Err(Error::Format(format!("{extra} trailing bytes after payload")));
        }
        Ok(())
    }
}
