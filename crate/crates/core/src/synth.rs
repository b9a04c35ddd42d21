//! Synthetic labelled tone datasets: one sine frequency per class plus
//! uniform noise, random phase and amplitude per clip.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;

use crate::audio::{self, AudioClip, CANONICAL_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::manifest::LabeledClips;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ToneDataset {
    pub frequencies: Vec<f64>,
    pub clips_per_class: Vec<usize>,
    pub duration_secs: f64,
    pub sample_rate: u32,
    /// Noise peak relative to the tone's peak.
    pub noise: f64,
    pub folds: u32,
    pub seed: u64,
}

impl ToneDataset {
    /// Four classes at 440/880/1320/1760 Hz, 100 one-second clips each.
    pub fn four_tones(seed: u64) -> Self {
        Self {
            frequencies: vec![440.0, 880.0, 1320.0, 1760.0],
            clips_per_class: vec![100; 4],
            duration_secs: 1.0,
            sample_rate: CANONICAL_SAMPLE_RATE,
            noise: 0.1,
            folds: 5,
            seed,
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        self.frequencies.iter().map(|f| format!("tone{f:.0}")).collect()
    }

    /// Clip `j` of each class lands in fold `1 + j % folds`.
    pub fn generate(&self) -> Result<LabeledClips> {
        if self.frequencies.len() != self.clips_per_class.len() || self.frequencies.is_empty() {
            return Err(Error::Parameter("need one clip count per frequency".into()));
        }
        if self.folds == 0 {
            return Err(Error::Parameter("folds must be >= 1".into()));
        }
        let n = (self.duration_secs * f64::from(self.sample_rate)).round() as usize;
        let names = self.class_names();
        let (mut clips, mut labels, mut folds) = (Vec::new(), Vec::new(), Vec::new());
        for (c, (&f, &count)) in self.frequencies.iter().zip(&self.clips_per_class).enumerate() {
            for j in 0..count {
                let mut rng = seed::rng(self.seed, "synth", &[c as u64, j as u64]);
                let phase = rng.random_range(0.0..TAU);
                let amp = rng.random_range(0.5..0.9);
                let w = TAU * f / f64::from(self.sample_rate);
                let samples = (0..n)
                    .map(|t| amp * ((w * t as f64 + phase).sin() + self.noise * rng.random_range(-1.0..1.0)))
                    .collect();
                let id = format!("{}-{j:04}", names[c]);
                clips.push(AudioClip::new(samples, self.sample_rate, id)?.with_label(names[c].clone()));
                labels.push(c);
                folds.push(1 + (j as u32 % self.folds));
            }
        }
        LabeledClips::new(clips, labels, folds, names)
    }
}

/// Write clips as `<root>/<label>/<source_id>.wav` (16-bit PCM), the
/// layout the flat-directory manifest reader expects.
pub fn write_flat_dirs(root: &Path, data: &LabeledClips) -> Result<()> {
    for (clip, &l) in data.clips.iter().zip(&data.labels) {
        let dir = root.join(&data.class_names[l]);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        audio::write_wav_pcm16(&dir.join(format!("{}.wav", clip.source_id)), &clip.samples, clip.sample_rate)?;
    }
    Ok(())
}
