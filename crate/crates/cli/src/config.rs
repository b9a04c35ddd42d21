//! Run configuration: one TOML file, overridable by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use envsound::cca::CcaConfig;
use envsound::contrastive::TrainConfig;
use envsound::encoder::{ConvLayerConfig, EncoderConfig, InputKind, ProjectionConfig};
use envsound::manifest::{CsvColumns, ManifestFormat, ManifestSource};
use envsound::probe::ProbeConfig;
use envsound::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub root: PathBuf,
    pub format: ManifestFormat,
    #[serde(default)]
    pub metadata: Option<PathBuf>,
    #[serde(default)]
    pub columns: Option<CsvColumns>,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
}

fn default_rate() -> u32 {
    envsound::audio::CANONICAL_SAMPLE_RATE
}

impl DatasetConfig {
    pub fn source(&self) -> ManifestSource {
        ManifestSource {
            root: self.root.clone(),
            format: self.format,
            metadata: self.metadata.clone(),
            columns: self.columns.clone(),
        }
    }
}

/// Encoder settings; `depth` picks a preset and the other keys override it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub depth: usize,
    pub layers: Option<Vec<ConvLayerConfig>>,
    pub projection: Option<ProjectionConfig>,
    pub patch_embed_dim: Option<usize>,
    pub dropout_p: Option<f64>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            depth: 4,
            layers: None,
            projection: None,
            patch_embed_dim: None,
            dropout_p: None,
        }
    }
}

impl EncoderSection {
    pub fn build(&self, kind: InputKind) -> Result<EncoderConfig> {
        let mut cfg = EncoderConfig::with_depth(self.depth, kind)?;
        if let Some(l) = &self.layers {
            cfg.layers.clone_from(l);
        }
        if let Some(p) = self.projection {
            cfg.projection = p;
        }
        if let Some(d) = self.patch_embed_dim {
            cfg.patch_embed_dim = d;
        }
        if let Some(p) = self.dropout_p {
            cfg.dropout_p = p;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<DatasetConfig>,
    pub encoder: EncoderSection,
    /// `train.seed` is ignored; the top-level `seed` drives every stream.
    pub train: TrainConfig,
    pub fusion: CcaConfig,
    pub probe: ProbeConfig,
    /// Folds held out from pretraining, fusion fitting and probe training,
    /// and used for evaluation.
    pub test_folds: Vec<u32>,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            encoder: EncoderSection::default(),
            train: TrainConfig::default(),
            fusion: CcaConfig::default(),
            probe: ProbeConfig::default(),
            test_folds: Vec::new(),
            output_dir: None,
            seed: 0,
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub steps: Option<usize>,
    pub test_folds: Option<Vec<u32>>,
}

impl RunConfig {
    /// Read a TOML config, or the `config` object of a JSON run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            let cfg = v.get("config").cloned().unwrap_or(v);
            return serde_json::from_value(cfg).map_err(|e| Error::config(format!("{}: {e}", path.display())));
        }
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.output {
            self.output_dir = Some(p.clone());
        }
        if let Some(s) = o.steps {
            self.train.steps = s;
        }
        if let Some(f) = &o.test_folds {
            self.test_folds.clone_from(f);
        }
        self.train.seed = self.seed;
        self
    }

    /// Every violated constraint. `kind` selects which encoder to check;
    /// `needs_dataset` requires a readable dataset section.
    pub fn violations(&self, kind: Option<InputKind>, needs_dataset: bool) -> Vec<String> {
        let mut v = Vec::new();
        for k in kind.into_iter() {
            match self.encoder.build(k) {
                Ok(cfg) => v.extend(cfg.violations()),
                Err(Error::Config(msgs)) => v.extend(msgs.into_iter().map(|m| format!("encoder.depth: {m}"))),
                Err(e) => v.push(e.to_string()),
            }
        }
        v.extend(self.train.violations());
        v.extend(self.fusion.violations());
        v.extend(self.probe.violations());
        if self.output_dir.is_none() {
            v.push("output_dir: not set (use --output or output_dir)".into());
        }
        match (&self.dataset, needs_dataset) {
            (None, true) => v.push("dataset: section missing".into()),
            (Some(d), _) => {
                if !d.root.is_dir() {
                    v.push(format!("dataset.root: `{}` is not a directory", d.root.display()));
                }
                if let Some(m) = &d.metadata {
                    let p = if m.is_absolute() { m.clone() } else { d.root.join(m) };
                    if !p.is_file() {
                        v.push(format!("dataset.metadata: `{}` does not exist", p.display()));
                    }
                }
                if d.sample_rate == 0 {
                    v.push("dataset.sample_rate must be >= 1".into());
                }
            }
            (None, false) => {}
        }
        v
    }

    pub fn validate(&self, kind: Option<InputKind>, needs_dataset: bool) -> Result<()> {
        let v = self.violations(kind, needs_dataset);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn output_dir(&self) -> &Path {
        self.output_dir.as_deref().expect("validated")
    }
}
