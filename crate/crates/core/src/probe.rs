//! Linear probe (one affine layer + softmax) on frozen features, and
//! accuracy / confusion-matrix reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, DiffTensor, Tape};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::seed;

pub const PROBE_FORMAT: &str = "envsound-probe/1";
pub const REPORT_FORMAT: &str = "envsound-eval/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Rows per update; `None` trains full-batch.
    pub batch_size: Option<usize>,
    /// Scale features to zero mean / unit variance with training-set
    /// statistics before the affine layer.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.01,
            batch_size: None,
            standardize: true,
        }
    }
}

impl ProbeConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            v.push(format!("probe.lr must be positive, got {}", self.lr));
        }
        if self.batch_size == Some(0) {
            v.push("probe.batch_size must be >= 1".into());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub format: String,
    pub num_classes: usize,
    pub dim: usize,
    /// `[num_classes, dim]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub class_names: Vec<String>,
    pub warnings: Vec<String>,
}

impl ProbeModel {
    /// Zero weights and bias, identity standardization.
    pub fn zeros(num_classes: usize, dim: usize, class_names: Vec<String>) -> Self {
        Self {
            format: PROBE_FORMAT.into(),
            num_classes,
            dim,
            weight: vec![0.0; num_classes * dim],
            bias: vec![0.0; num_classes],
            feature_mean: vec![0.0; dim],
            feature_scale: vec![1.0; dim],
            class_names,
            warnings: Vec::new(),
        }
    }

    fn standardized(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let x = self.standardized(x);
        (0..self.num_classes)
            .map(|c| {
                let w = &self.weight[c * self.dim..(c + 1) * self.dim];
                self.bias[c] + w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Argmax of the logits; ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&s).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if m.format != PROBE_FORMAT {
            return Err(Error::Format(format!("unsupported probe format `{}`", m.format)));
        }
        if m.weight.len() != m.num_classes * m.dim || m.bias.len() != m.num_classes {
            return Err(Error::Format("probe parameter shapes are inconsistent".into()));
        }
        Ok(m)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_inputs(features: &FeatureMatrix, labels: &[usize], num_classes: usize) -> Result<()> {
    if labels.len() != features.rows {
        return Err(Error::Shape(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.rows
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Parameter(format!("label {bad} out of range for {num_classes} classes")));
    }
    if features.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("features contain non-finite values".into()));
    }
    Ok(())
}

/// Train a softmax-regression probe with Adam from zero initialization.
pub fn train_probe(
    features: &FeatureMatrix,
    labels: &[usize],
    class_names: &[String],
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeModel> {
    let num_classes = class_names.len();
    check_inputs(features, labels, num_classes)?;
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    if features.rows == 0 {
        return Err(Error::EmptyDataset("no training rows for the probe".into()));
    }
    let (n, dim) = (features.rows, features.cols);
    let mut model = ProbeModel::zeros(num_classes, dim, class_names.to_vec());
    for c in 0..num_classes {
        if !labels.contains(&c) {
            model.warnings.push(format!("class `{}` is absent from the probe training labels", class_names[c]));
        }
    }
    if cfg.standardize {
        for j in 0..dim {
            let col = (0..n).map(|i| features.values[i * dim + j]);
            let mean = col.clone().sum::<f64>() / n as f64;
            let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            model.feature_mean[j] = mean;
            model.feature_scale[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
    }
    let x: Vec<f64> = (0..n).flat_map(|i| model.standardized(features.row(i))).collect();
    let mut w = DiffTensor::param(vec![num_classes, dim], model.weight.clone())?;
    let mut b = DiffTensor::param(vec![num_classes], model.bias.clone())?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new();
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        if batch < n {
            order.shuffle(&mut seed::rng(seed, seed::PROBE, &[epoch as u64]));
        }
        for rows in order.chunks(batch) {
            let xb: Vec<f64> = rows.iter().flat_map(|&i| x[i * dim..(i + 1) * dim].iter().copied()).collect();
            let yb: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let (wv, bv) = (tape.leaf(&w), tape.leaf(&b));
            let xv = tape.constant(vec![rows.len(), dim], xb)?;
            let logits = tape.dense(xv, wv, Some(bv))?;
            let loss = tape.softmax_xent(logits, &yb, false)?;
            tape.backward(loss)?;
            tape.write_grad(wv, &mut w);
            tape.write_grad(bv, &mut b);
            adam_step(&mut [&mut w, &mut b], &mut state, &adam)?;
        }
    }
    model.weight = w.values;
    model.bias = b.values;
    Ok(model)
}

/// Mean softmax cross-entropy of the probe on labelled features.
pub fn probe_loss(probe: &ProbeModel, features: &FeatureMatrix, labels: &[usize]) -> Result<f64> {
    check_inputs(features, labels, probe.num_classes)?;
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let l = probe.logits(features.row(i));
        let mx = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + l.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        total += lse - l[y];
    }
    Ok(total / labels.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub accuracy: f64,
    pub n_samples: usize,
    pub class_names: Vec<String>,
    /// Per-class recall; `null` for classes with no samples.
    pub per_class_accuracy: BTreeMap<String, Option<f64>>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn class_accuracy(&self, class: usize) -> Option<f64> {
        let row = &self.confusion[class];
        let total: u64 = row.iter().sum();
        (total > 0).then(|| row[class] as f64 / total as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for c in &self.class_names {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (c, row) in self.class_names.iter().zip(&self.confusion) {
            s.push_str(c);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Write the JSON report and the confusion-matrix CSV.
    pub fn save(&self, json: &Path, csv: &Path) -> Result<()> {
        std::fs::write(json, self.to_json()?).map_err(|e| Error::io(json, e))?;
        std::fs::write(csv, self.confusion_csv()).map_err(|e| Error::io(csv, e))
    }
}

/// Report from predicted and true class indices.
pub fn report_from_predictions(
    predicted: &[usize],
    labels: &[usize],
    class_names: &[String],
    warnings: Vec<String>,
) -> Result<EvalReport> {
    let k = class_names.len();
    if predicted.len() != labels.len() {
        return Err(Error::Shape("prediction and label counts differ".into()));
    }
    if predicted.iter().chain(labels).any(|&c| c >= k) {
        return Err(Error::Parameter(format!("class index out of range for {k} classes")));
    }
    let mut confusion = vec![vec![0u64; k]; k];
    for (&p, &t) in predicted.iter().zip(labels) {
        confusion[t][p] += 1;
    }
    let n = labels.len();
    let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();
    let mut report = EvalReport {
        format: REPORT_FORMAT.into(),
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        n_samples: n,
        class_names: class_names.to_vec(),
        per_class_accuracy: BTreeMap::new(),
        confusion,
        warnings,
    };
    report.per_class_accuracy = (0..k).map(|c| (class_names[c].clone(), report.class_accuracy(c))).collect();
    Ok(report)
}

pub fn evaluate(probe: &ProbeModel, features: &FeatureMatrix, labels: &[usize]) -> Result<EvalReport> {
    check_inputs(features, labels, probe.num_classes)?;
    if features.cols != probe.dim {
        return Err(Error::Shape(format!(
            "probe expects {} features, matrix has {}",
            probe.dim, features.cols
        )));
    }
    let predicted: Vec<usize> = (0..features.rows).map(|i| probe.predict(features.row(i))).collect();
    report_from_predictions(&predicted, labels, &probe.class_names, probe.warnings.clone())
}
