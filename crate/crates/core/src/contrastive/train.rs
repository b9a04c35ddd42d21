use std::fmt::Write as _;
use std::path::Path;
use std::sync::mpsc::{sync_channel, Receiver};

use serde::{Deserialize, Serialize};

use super::loss::ntxent_on_tape;
use super::sampler::{plan_batches, BatchPlan, PlannedBatch};
use crate::audio::{self, split_pair};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape};
use crate::dsp::{sample_patches, MelExtractor, MelFilterbank};
use crate::encoder::{init_encoder, EncoderConfig, EncoderModel, InputKind, Mode};
use crate::error::{Error, Result};
use crate::manifest::LabeledClips;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Clips per batch `M`; each contributes two views.
    pub batch_size: usize,
    pub temperature: f64,
    /// Optimizer steps.
    pub steps: usize,
    pub lr: f64,
    pub balanced: bool,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    pub patches_per_segment: usize,
    /// Batch-preparation threads.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            temperature: 0.1,
            steps: 400,
            lr: 1e-3,
            balanced: false,
            seed: 0,
            checkpoint_every: 0,
            patches_per_segment: crate::dsp::DEFAULT_PATCHES_PER_SEGMENT,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.batch_size < 2 {
            v.push(format!("train.batch_size must be >= 2, got {}", self.batch_size));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            v.push(format!("train.temperature must be positive, got {}", self.temperature));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            v.push(format!("train.lr must be positive, got {}", self.lr));
        }
        if self.patches_per_segment == 0 {
            v.push("train.patches_per_segment must be >= 1".into());
        }
        if self.workers == 0 {
            v.push("train.workers must be >= 1".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: EncoderModel,
    pub losses: Vec<f64>,
    pub optimizer: AdamState,
    /// Clips left out because one of their halves is constant.
    pub excluded: Vec<usize>,
}

/// Model inputs for one step, built off the optimizer thread.
enum Prepared {
    /// `[2M, 1, len]` normalized segments, siblings adjacent.
    Waveform { values: Vec<f64>, len: usize },
    /// Per-view patch sums, siblings adjacent.
    Patches { sums: Vec<Vec<f64>> },
}

struct Preparer<'a> {
    data: &'a LabeledClips,
    kind: InputKind,
    extractor: Option<MelExtractor>,
    patches: usize,
    n_mels: usize,
    frames: usize,
    seed: u64,
}

impl Preparer<'_> {
    fn prepare(&self, step: usize, batch: &PlannedBatch) -> Result<Prepared> {
        match self.kind {
            InputKind::Waveform => {
                let mut segs = Vec::with_capacity(2 * batch.clips.len());
                for &c in &batch.clips {
                    let pair = split_pair(&self.data.clips[c])?;
                    segs.push(audio::normalize(&pair.first)?.clip.samples);
                    segs.push(audio::normalize(&pair.second)?.clip.samples);
                }
                let len = segs.iter().map(Vec::len).min().unwrap_or(0);
                let values = segs.iter().flat_map(|s| s[..len].iter().copied()).collect();
                Ok(Prepared::Waveform { values, len })
            }
            InputKind::Spectrogram => {
                let ex = self.extractor.as_ref().expect("extractor exists for patch input");
                let mut sums = Vec::with_capacity(2 * batch.clips.len());
                for (slot, &c) in batch.clips.iter().enumerate() {
                    let pair = split_pair(&self.data.clips[c])?;
                    for (h, half) in [pair.first, pair.second].iter().enumerate() {
                        let spec = ex.spectrogram(half)?;
                        let s = seed::derive(self.seed, seed::PATCHES, &[0, step as u64, slot as u64, h as u64]);
                        let sample = sample_patches(&spec, self.patches, self.frames, s)?;
                        let mut sum = vec![0.0; self.n_mels * self.frames];
                        for p in &sample.patches {
                            sum.iter_mut().zip(&p.values).for_each(|(a, v)| *a += v);
                        }
                        sums.push(sum);
                    }
                }
                Ok(Prepared::Patches { sums })
            }
        }
    }
}

/// Parameters, optimizer moments and loss history of a run in progress.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: EncoderModel,
    pub optimizer: AdamState,
    pub losses: Vec<f64>,
}

impl TrainState {
    fn optimize(&mut self, cfg: &TrainConfig, step: usize, input: Prepared) -> Result<f64> {
        let model = &mut self.model;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let x = match input {
            Prepared::Waveform { values, len } => {
                tape.constant(vec![values.len() / len.max(1), 1, len], values)?
            }
            Prepared::Patches { sums } => model.embed(&mut tape, &bound, &sums)?,
        };
        let mode = Mode::Train {
            dropout_seed: seed::derive(cfg.seed, seed::DROPOUT, &[step as u64]),
        };
        let (_, z) = model.encode(&mut tape, &bound, x, mode)?;
        let loss = ntxent_on_tape(&mut tape, z, cfg.temperature)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Numerical(format!("loss is {value}")));
        }
        tape.backward(loss)?;
        model.collect_grads(&tape, &bound);
        adam_step(&mut model.params_mut(), &mut self.optimizer, &cfg.adam())?;
        model.params_mut().into_iter().for_each(|p| p.grad = None);
        Ok(value)
    }
}

/// One pretraining run: data, batch plan and training state.
pub struct Trainer<'a> {
    preparer: Preparer<'a>,
    plan: BatchPlan,
    cfg: TrainConfig,
    pub state: TrainState,
    /// Clips left out because one of their halves is constant.
    pub excluded: Vec<usize>,
}

fn has_constant_half(clip: &audio::AudioClip) -> Result<bool> {
    let pair = split_pair(clip)?;
    Ok([&pair.first, &pair.second]
        .iter()
        .any(|h| audio::moments(&h.samples).1 < audio::CONSTANT_VARIANCE))
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a LabeledClips, encoder: &EncoderConfig, cfg: &TrainConfig) -> Result<Self> {
        let mut violations = encoder.violations();
        violations.extend(cfg.violations());
        if !violations.is_empty() {
            return Err(Error::Config(violations));
        }
        if data.is_empty() {
            return Err(Error::EmptyDataset("no clips to pretrain on".into()));
        }
        let mut usable = Vec::with_capacity(data.len());
        let mut excluded = Vec::new();
        for (i, clip) in data.clips.iter().enumerate() {
            if has_constant_half(clip)? {
                excluded.push(i);
            } else {
                usable.push(i);
            }
        }
        if usable.is_empty() {
            return Err(Error::EmptyDataset("every clip has a constant half".into()));
        }
        let labels: Vec<usize> = usable.iter().map(|&i| data.labels[i]).collect();
        let mut plan = plan_batches(&labels, data.num_classes(), cfg)?;
        for b in &mut plan.batches {
            b.clips.iter_mut().for_each(|c| *c = usable[*c]);
        }
        let extractor = match encoder.input_kind {
            InputKind::Waveform => None,
            InputKind::Spectrogram => {
                let rate = data.clips[0].sample_rate;
                if data.clips.iter().any(|c| c.sample_rate != rate) {
                    return Err(Error::Contract("clips have mixed sample rates".into()));
                }
                Some(MelExtractor::new(MelFilterbank::standard(rate)?))
            }
        };
        Ok(Self {
            preparer: Preparer {
                data,
                kind: encoder.input_kind,
                extractor,
                patches: cfg.patches_per_segment,
                n_mels: encoder.n_mels,
                frames: encoder.patch_frames,
                seed: cfg.seed,
            },
            plan,
            cfg: cfg.clone(),
            state: TrainState {
                model: init_encoder(encoder, cfg.seed)?,
                optimizer: AdamState::new(),
                losses: Vec::new(),
            },
            excluded,
        })
    }

    pub fn plan(&self) -> &BatchPlan {
        &self.plan
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_done(&self) -> usize {
        self.state.losses.len()
    }

    /// Run every remaining step; `on_step` sees the state after each
    /// update. Batches are prepared on worker threads, worker `w` owning
    /// the steps congruent to `w`, and are consumed in step order, so
    /// results do not depend on the worker count.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepReport, &TrainState) -> Result<()>) -> Result<()> {
        let start = self.steps_done();
        let total = self.plan.batches.len();
        if start == total {
            return Ok(());
        }
        let workers = self.cfg.workers.min(total - start);
        let (preparer, batches, cfg, state) = (&self.preparer, &self.plan.batches, &self.cfg, &mut self.state);
        std::thread::scope(|scope| {
            let receivers: Vec<Receiver<Result<Prepared>>> = (0..workers)
                .map(|w| {
                    let (tx, rx) = sync_channel(2);
                    scope.spawn(move || {
                        for s in (start..total).filter(|s| s % workers == w) {
                            let item = preparer.prepare(s, &batches[s]);
                            if tx.send(item).is_err() {
                                break;
                            }
                        }
                    });
                    rx
                })
                .collect();
            for s in start..total {
                let input = receivers[s % workers]
                    .recv()
                    .map_err(|_| Error::Contract("batch worker stopped early".into()).at_step(s))?
                    .map_err(|e| e.at_step(s))?;
                let loss = state.optimize(cfg, s, input).map_err(|e| e.at_step(s))?;
                state.losses.push(loss);
                on_step(&StepReport { step: s, loss }, state)?;
            }
            Ok(())
        })
    }
}

/// Pretrain an encoder from scratch. With `checkpoint_dir` set and
/// `checkpoint_every > 0`, writes `step-NNNNNN.ckpt` files as it goes.
pub fn pretrain(
    data: &LabeledClips,
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<PretrainOutcome> {
    let mut trainer = Trainer::new(data, encoder, cfg)?;
    let adam = cfg.adam();
    trainer.run(|report, state| {
        let every = cfg.checkpoint_every;
        if let Some(dir) = checkpoint_dir {
            if every > 0 && (report.step + 1) % every == 0 {
                let path = dir.join(format!("step-{:06}.ckpt", report.step + 1));
                state.model.to_container(Some((&state.optimizer, &adam))).write(&path)?;
            }
        }
        Ok(())
    })?;
    let TrainState {
        model,
        optimizer,
        losses,
    } = trainer.state;
    Ok(PretrainOutcome {
        model,
        losses,
        optimizer,
        excluded: trainer.excluded,
    })
}

pub fn format_loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{i},{l}");
    }
    s
}

pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    std::fs::write(path, format_loss_csv(losses)).map_err(|e| Error::io(path, e))
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let step: usize = rec.get(0).unwrap_or("").parse().map_err(|_| Error::Format(format!("bad step on row {i}")))?;
        if step != i {
            return Err(Error::Format(format!("row {i} records step {step}")));
        }
        let loss = rec.get(1).unwrap_or("").parse().map_err(|_| Error::Format(format!("bad loss on row {i}")))?;
        out.push(loss);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::ToneDataset;

    fn tones(per_class: usize, secs: f64) -> LabeledClips {
        ToneDataset {
            clips_per_class: vec![per_class; 4],
            duration_secs: secs,
            ..ToneDataset::four_tones(11)
        }
        .generate()
        .unwrap()
    }

    fn cfg(m: usize, steps: usize) -> TrainConfig {
        TrainConfig {
            batch_size: m,
            steps,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_returns_the_initial_model() {
        let data = tones(4, 0.2);
        let enc = EncoderConfig::default();
        let out = pretrain(&data, &enc, &cfg(4, 0), None).unwrap();
        assert_eq!(out.model, init_encoder(&enc, 5).unwrap());
        assert!(out.losses.is_empty());
    }

    #[test]
    fn deterministic_and_worker_count_independent() {
        let data = tones(4, 0.2);
        let enc = EncoderConfig::for_input(InputKind::Spectrogram);
        let a = pretrain(&data, &enc, &cfg(4, 4), None).unwrap();
        let b = pretrain(&data, &enc, &cfg(4, 4), None).unwrap();
        let c = pretrain(&data, &enc, &TrainConfig { workers: 3, ..cfg(4, 4) }, None).unwrap();
        assert_eq!(format_loss_csv(&a.losses), format_loss_csv(&b.losses));
        assert_eq!(a.losses, c.losses);
        assert_eq!(a.model, c.model);
        let w = pretrain(&data, &EncoderConfig::default(), &cfg(4, 2), None).unwrap();
        let w2 = pretrain(&data, &EncoderConfig::default(), &TrainConfig { workers: 2, ..cfg(4, 2) }, None).unwrap();
        assert_eq!(w.losses, w2.losses);
    }

    #[test]
    fn initial_loss_is_near_uniform_for_m64() {
        let data = tones(16, 0.2);
        for enc in [EncoderConfig::for_input(InputKind::Spectrogram), EncoderConfig::default()] {
            let out = pretrain(&data, &enc, &cfg(64, 1), None).unwrap();
            let uniform = 127f64.ln();
            assert!(
                (0.5 * uniform..=1.5 * uniform).contains(&out.losses[0]),
                "{:?}: {}",
                enc.input_kind,
                out.losses[0]
            );
        }
    }

    #[test]
    fn constant_clips_are_excluded() {
        let mut data = tones(2, 0.2);
        data.clips[3].samples.fill(0.25);
        let out = pretrain(&data, &EncoderConfig::default(), &cfg(4, 1), None).unwrap();
        assert_eq!(out.excluded, vec![3]);
    }

    #[test]
    fn checkpoints_and_loss_csv() {
        let dir = tempfile::tempdir().unwrap();
        let data = tones(2, 0.2);
        let enc = EncoderConfig::for_input(InputKind::Spectrogram);
        let train = TrainConfig {
            checkpoint_every: 2,
            ..cfg(4, 4)
        };
        let out = pretrain(&data, &enc, &train, Some(dir.path())).unwrap();
        let last = crate::autodiff::checkpoint::Container::read(&dir.path().join("step-000004.ckpt")).unwrap();
        let (model, opt) = EncoderModel::from_container(&last).unwrap();
        assert_eq!(model, out.model);
        assert_eq!(opt.unwrap().0.step, 4);
        assert!(dir.path().join("step-000002.ckpt").exists());
        let csv = dir.path().join("loss.csv");
        write_loss_csv(&csv, &out.losses).unwrap();
        assert_eq!(read_loss_csv(&csv).unwrap(), out.losses);
    }

    #[test]
    fn invalid_config_lists_all_problems() {
        let data = tones(2, 0.2);
        let bad = TrainConfig {
            batch_size: 1,
            temperature: 0.0,
            lr: -1.0,
            ..cfg(4, 1)
        };
        let Error::Config(v) = Trainer::new(&data, &EncoderConfig::default(), &bad).err().unwrap() else {
            panic!()
        };
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn too_short_clips_report_the_step() {
        let data = tones(2, 0.01);
        let err = pretrain(&data, &EncoderConfig::default(), &cfg(4, 1), None).unwrap_err();
        assert_eq!(err.category(), "shape");
        assert!(err.to_string().contains("step 0"), "{err}");
    }
}
