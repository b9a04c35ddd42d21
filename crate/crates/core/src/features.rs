//! Feature matrices, their on-disk formats, and clip-level feature
//! extraction from a frozen encoder.
//!
//! Matrix files: magic `ESNDMAT1`, `u32` rows, `u32` cols (little-endian),
//! then `rows * cols` little-endian `f32` values, row-major. Sample ids
//! travel in a CSV with columns `sample_id,label,fold`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{self, split_pair};
use crate::dsp::{sample_patches, MelExtractor, MelFilterbank, MelPatch, MelSpectrogram};
use crate::encoder::{EncoderModel, InputKind};
use crate::error::{Error, Result};
use crate::manifest::LabeledClips;
use crate::seed;

pub const MATRIX_MAGIC: &[u8; 8] = b"ESNDMAT1";

/// Rows of features, one per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub sample_ids: Vec<String>,
    /// Encoder branch that produced the rows; `None` for fused or
    /// external features.
    pub branch: Option<InputKind>,
}

impl FeatureMatrix {
    pub fn new(values: Vec<f64>, rows: usize, cols: usize, sample_ids: Vec<String>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if sample_ids.len() != rows {
            return Err(Error::Shape(format!("{} sample ids for {rows} rows", sample_ids.len())));
        }
        Ok(Self {
            values,
            rows,
            cols,
            sample_ids,
            branch: None,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, sample_ids: Vec<String>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("rows have unequal lengths".into()));
        }
        let n = rows.len();
        Self::new(rows.concat(), n, cols, sample_ids)
    }

    pub fn with_branch(mut self, branch: InputKind) -> Self {
        self.branch = Some(branch);
        self
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            values: idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            rows: idx.len(),
            cols: self.cols,
            sample_ids: idx.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            branch: self.branch,
        }
    }

    /// Error naming the first position where the two id lists disagree.
    pub fn check_aligned(&self, other: &Self) -> Result<()> {
        if self.rows != other.rows {
            return Err(Error::Alignment(format!(
                "{} rows vs {} rows",
                self.rows, other.rows
            )));
        }
        match self.sample_ids.iter().zip(&other.sample_ids).position(|(a, b)| a != b) {
            Some(i) => Err(Error::Alignment(format!(
                "sample ids differ at row {i}: `{}` vs `{}`",
                self.sample_ids[i], other.sample_ids[i]
            ))),
            None => Ok(()),
        }
    }
}

pub fn encode_matrix(rows: usize, cols: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != rows * cols {
        return Err(Error::Shape(format!("{} values for a {rows}x{cols} matrix", values.len())));
    }
    let (r, c) = (u32::try_from(rows), u32::try_from(cols));
    let (Ok(r), Ok(c)) = (r, c) else {
        return Err(Error::Shape("matrix too large for the file format".into()));
    };
    let mut out = Vec::with_capacity(16 + 4 * values.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&r.to_le_bytes());
    out.extend_from_slice(&c.to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < 16 || &bytes[..8] != MATRIX_MAGIC {
        return Err(Error::Format("not a feature matrix file (bad magic)".into()));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != 4 * rows * cols {
        return Err(Error::Format(format!(
            "matrix header says {rows}x{cols} but body holds {} bytes",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok((rows, cols, values))
}

pub fn write_matrix(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    std::fs::write(path, encode_matrix(rows, cols, values)?).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    decode_matrix(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// A mel spectrogram as a `n_mels x n_frames` matrix file.
pub fn write_spectrogram(path: &Path, spec: &MelSpectrogram) -> Result<()> {
    write_matrix(path, spec.n_mels, spec.n_frames, &spec.values)
}

pub fn write_patch(path: &Path, patch: &MelPatch) -> Result<()> {
    write_matrix(path, patch.n_mels, patch.n_frames, &patch.values)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub label: String,
    pub fold: u32,
}

pub fn write_sample_ids(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sample_ids(path: &Path) -> Result<Vec<SampleRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn sample_records(data: &LabeledClips) -> Vec<SampleRecord> {
    data.clips
        .iter()
        .zip(&data.labels)
        .zip(&data.folds)
        .map(|((c, &l), &fold)| SampleRecord {
            sample_id: c.source_id.clone(),
            label: data.class_names[l].clone(),
            fold,
        })
        .collect()
}

/// Write `<stem>.mat` and `<stem>.ids.csv`.
pub fn save_features(stem: &Path, features: &FeatureMatrix, records: &[SampleRecord]) -> Result<()> {
    if records.len() != features.rows
        || records.iter().zip(&features.sample_ids).any(|(r, id)| &r.sample_id != id)
    {
        return Err(Error::Alignment("sample records do not match the matrix rows".into()));
    }
    write_matrix(&stem.with_extension("mat"), features.rows, features.cols, &features.values)?;
    write_sample_ids(&stem.with_extension("ids.csv"), records)
}

pub fn load_features(matrix: &Path, ids: &Path) -> Result<(FeatureMatrix, Vec<SampleRecord>)> {
    let (rows, cols, values) = read_matrix(matrix)?;
    let records = read_sample_ids(ids)?;
    if records.len() != rows {
        return Err(Error::Alignment(format!(
            "{} has {rows} rows but {} lists {} samples",
            matrix.display(),
            ids.display(),
            records.len()
        )));
    }
    let fm = FeatureMatrix::new(values, rows, cols, records.iter().map(|r| r.sample_id.clone()).collect())?;
    Ok((fm, records))
}

/// Clips per forward pass during extraction.
const EXTRACT_CHUNK: usize = 16;

/// One representation `h` per clip from a frozen encoder. Waveform input
/// averages `h` over the two normalized halves; patch input encodes the
/// patches of both halves together.
pub fn extract_features(
    model: &EncoderModel,
    data: &LabeledClips,
    patches_per_segment: usize,
    seed: u64,
) -> Result<FeatureMatrix> {
    let kind = model.config.input_kind;
    let dim = model.config.representation_dim();
    let mut values = Vec::with_capacity(data.len() * dim);
    match kind {
        InputKind::Waveform => {
            for clip in &data.clips {
                let pair = split_pair(clip)?;
                let a = audio::normalize(&pair.first)?.clip.samples;
                let b = audio::normalize(&pair.second)?.clip.samples;
                let reps = model.represent_waveforms(&[&a, &b])?;
                values.extend(reps[0].h.iter().zip(&reps[1].h).map(|(x, y)| 0.5 * (x + y)));
            }
        }
        InputKind::Spectrogram => {
            let Some(rate) = data.clips.first().map(|c| c.sample_rate) else {
                return Err(Error::EmptyDataset("no clips to extract".into()));
            };
            let ex = MelExtractor::new(MelFilterbank::standard(rate)?);
            let frames = model.config.patch_frames;
            for (chunk_no, chunk) in data.clips.chunks(EXTRACT_CHUNK).enumerate() {
                let mut inputs = Vec::with_capacity(chunk.len());
                for (j, clip) in chunk.iter().enumerate() {
                    if clip.sample_rate != rate {
                        return Err(Error::Contract("clips have mixed sample rates".into()));
                    }
                    let idx = (chunk_no * EXTRACT_CHUNK + j) as u64;
                    let pair = split_pair(clip)?;
                    let mut patches = Vec::new();
                    for (h, half) in [pair.first, pair.second].iter().enumerate() {
                        let s = seed::derive(seed, seed::PATCHES, &[1, idx, h as u64]);
                        patches.extend(sample_patches(&ex.spectrogram(half)?, patches_per_segment, frames, s)?.patches);
                    }
                    inputs.push(patches);
                }
                let refs: Vec<&[MelPatch]> = inputs.iter().map(Vec::as_slice).collect();
                for r in model.represent_patches(&refs)? {
                    values.extend(r.h);
                }
            }
        }
    }
    let ids = data.clips.iter().map(|c| c.source_id.clone()).collect();
    Ok(FeatureMatrix::new(values, data.len(), dim, ids)?.with_branch(kind))
}
