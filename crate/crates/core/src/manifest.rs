//! Dataset manifests for the UrbanSound8K and ESC-50 metadata layouts and
//! for plain `<root>/<label>/*.wav` trees, plus in-memory labelled clip
//! sets built from them.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{self, AudioClip};
use crate::error::{Error, Result};

/// Number of folds assigned round-robin (per class) to flat-dir datasets.
pub const FLAT_DIR_FOLDS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManifestFormat {
    #[serde(rename = "urbansound8k-csv")]
    UrbanSound8kCsv,
    #[serde(rename = "esc50-csv")]
    Esc50Csv,
    FlatDirs,
}

impl std::str::FromStr for ManifestFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "urbansound8k-csv" => Ok(Self::UrbanSound8kCsv),
            "esc50-csv" => Ok(Self::Esc50Csv),
            "flat-dirs" => Ok(Self::FlatDirs),
            other => Err(Error::config(format!("unknown dataset format `{other}`"))),
        }
    }
}

/// Metadata CSV column names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvColumns {
    pub file: String,
    pub fold: String,
    pub label: String,
}

impl CsvColumns {
    pub fn for_format(format: ManifestFormat) -> Self {
        let (file, fold, label) = match format {
            ManifestFormat::UrbanSound8kCsv => ("slice_file_name", "fold", "class"),
            ManifestFormat::Esc50Csv | ManifestFormat::FlatDirs => ("filename", "fold", "category"),
        };
        Self {
            file: file.into(),
            fold: fold.into(),
            label: label.into(),
        }
    }
}

/// Where to find a dataset and how to read its metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSource {
    pub root: PathBuf,
    pub format: ManifestFormat,
    /// Metadata CSV path, relative to `root` unless absolute. Defaults to
    /// `metadata/UrbanSound8K.csv` or `meta/esc50.csv`.
    #[serde(default)]
    pub metadata: Option<PathBuf>,
    #[serde(default)]
    pub columns: Option<CsvColumns>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub fold: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Sorted, unique.
    pub class_names: Vec<String>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyDataset("manifest has no entries".into()));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.path.as_path()) {
                return Err(Error::Format(format!("duplicate file path {}", e.path.display())));
            }
        }
        let class_names = entries
            .iter()
            .map(|e| e.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Self {
            entries,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_names.binary_search_by(|c| c.as_str().cmp(label)).ok()
    }

    /// Class index of every entry, in entry order.
    pub fn label_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .map(|e| self.class_index(&e.label).expect("label listed in class_names"))
            .collect()
    }

    /// Sub-manifest keeping entries whose fold satisfies `keep`. The class
    /// list of the parent is preserved so indices stay comparable.
    pub fn filter_folds(&self, keep: impl Fn(u32) -> bool) -> Result<Self> {
        let entries: Vec<_> = self.entries.iter().filter(|e| keep(e.fold)).cloned().collect();
        if entries.is_empty() {
            return Err(Error::EmptyDataset("no entries left after fold filtering".into()));
        }
        Ok(Self {
            entries,
            class_names: self.class_names.clone(),
        })
    }
}

fn read_csv_manifest(
    root: &Path,
    metadata: &Path,
    columns: &CsvColumns,
    audio_path: impl Fn(&str, &str) -> PathBuf,
) -> Result<DatasetManifest> {
    let meta_path = if metadata.is_absolute() {
        metadata.to_path_buf()
    } else {
        root.join(metadata)
    };
    if !meta_path.is_file() {
        return Err(Error::Format(format!(
            "metadata file {} not found",
            meta_path.display()
        )));
    }
    let mut reader = csv::Reader::from_path(&meta_path)
        .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?
        .clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Format(format!("{}: missing column `{name}`", meta_path.display()))
        })
    };
    let (file_col, fold_col, label_col) =
        (column(&columns.file)?, column(&columns.fold)?, column(&columns.label)?);

    let mut entries = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
        let field = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        let (file, fold_str, label) = (field(file_col), field(fold_col), field(label_col));
        let fold = fold_str.parse::<u32>().map_err(|_| {
            Error::Format(format!(
                "{} row {}: fold `{fold_str}` is not an integer",
                meta_path.display(),
                row + 2
            ))
        })?;
        entries.push(ManifestEntry {
            path: audio_path(&file, &fold_str),
            label,
            fold,
        });
    }
    DatasetManifest::new(entries)
}

fn read_flat_dirs(root: &Path) -> Result<DatasetManifest> {
    let read_dir = |p: &Path| -> Result<Vec<PathBuf>> {
        let mut v = std::fs::read_dir(p)
            .map_err(|e| Error::io(p, e))?
            .map(|d| d.map(|d| d.path()).map_err(|e| Error::io(p, e)))
            .collect::<Result<Vec<_>>>()?;
        v.sort();
        Ok(v)
    };
    let mut entries = Vec::new();
    for dir in read_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let label = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let wavs = read_dir(&dir)?.into_iter().filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        });
        for (i, path) in wavs.enumerate() {
            entries.push(ManifestEntry {
                path,
                label: label.clone(),
                fold: (i as u32 % FLAT_DIR_FOLDS) + 1,
            });
        }
    }
    DatasetManifest::new(entries)
}

/// Enumerate a dataset. Flat-dir datasets take their label from the parent
/// directory and are assigned folds 1..=5 round-robin within each class.
pub fn load_manifest(source: &ManifestSource) -> Result<DatasetManifest> {
    let root = &source.root;
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let columns = source
        .columns
        .clone()
        .unwrap_or_else(|| CsvColumns::for_format(source.format));
    match source.format {
        ManifestFormat::UrbanSound8kCsv => {
            let meta = source
                .metadata
                .clone()
                .unwrap_or_else(|| PathBuf::from("metadata/UrbanSound8K.csv"));
            read_csv_manifest(root, &meta, &columns, |file, fold| {
                root.join("audio").join(format!("fold{fold}")).join(file)
            })
        }
        ManifestFormat::Esc50Csv => {
            let meta = source
                .metadata
                .clone()
                .unwrap_or_else(|| PathBuf::from("meta/esc50.csv"));
            read_csv_manifest(root, &meta, &columns, |file, _| root.join("audio").join(file))
        }
        ManifestFormat::FlatDirs => read_flat_dirs(root),
    }
}

/// Decoded clips with class indices, resampled to one rate.
#[derive(Debug, Clone)]
pub struct LabeledClips {
    pub clips: Vec<AudioClip>,
    pub labels: Vec<usize>,
    pub folds: Vec<u32>,
    pub class_names: Vec<String>,
}

impl LabeledClips {
    pub fn new(
        clips: Vec<AudioClip>,
        labels: Vec<usize>,
        folds: Vec<u32>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::EmptyDataset("no clips".into()));
        }
        if clips.len() != labels.len() || clips.len() != folds.len() {
            return Err(Error::Shape(format!(
                "{} clips but {} labels and {} folds",
                clips.len(),
                labels.len(),
                folds.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Parameter(format!(
                "label index {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(Self {
            clips,
            labels,
            folds,
            class_names,
        })
    }

    /// Decode every entry and bring it to `sample_rate`.
    pub fn load(manifest: &DatasetManifest, sample_rate: u32) -> Result<Self> {
        let clips = manifest
            .entries
            .iter()
            .map(|e| {
                let clip = audio::load_wav(&e.path)?;
                Ok(audio::resample(&clip, sample_rate)?.with_label(e.label.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            clips,
            manifest.label_indices(),
            manifest.entries.iter().map(|e| e.fold).collect(),
            manifest.class_names.clone(),
        )
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subset(&self, keep: impl Fn(usize) -> bool) -> Result<Self> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        Self::new(
            idx.iter().map(|&i| self.clips[i].clone()).collect(),
            idx.iter().map(|&i| self.labels[i]).collect(),
            idx.iter().map(|&i| self.folds[i]).collect(),
            self.class_names.clone(),
        )
    }

    /// Split into (rows whose fold is not in `test_folds`, rows whose fold is).
    pub fn split_folds(&self, test_folds: &[u32]) -> Result<(Self, Self)> {
        let train = self.subset(|i| !test_folds.contains(&self.folds[i]))?;
        let test = self.subset(|i| test_folds.contains(&self.folds[i]))?;
        Ok((train, test))
    }
}
