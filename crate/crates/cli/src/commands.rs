use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde_json::json;

use envsound::autodiff::checkpoint::Container;
use envsound::cca::{fit_cca, fuse as cca_fuse};
use envsound::contrastive::{write_loss_csv, Trainer};
use envsound::encoder::{EncoderModel, InputKind};
use envsound::features::{extract_features, load_features, sample_records, save_features, SampleRecord};
use envsound::manifest::{load_manifest, LabeledClips};
use envsound::probe::{evaluate, train_probe, ProbeModel};
use envsound::{Error, Result};

use crate::config::{Overrides, RunConfig};
use crate::run_manifest::{RunManifest, Status};
use crate::Common;

fn prepare(common: &Common, kind: Option<InputKind>, needs_dataset: bool, steps: Option<usize>) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = cfg.apply(&Overrides {
        seed: common.seed,
        output: common.output.clone(),
        steps,
        test_folds: common.test_folds.clone(),
    });
    cfg.validate(kind, needs_dataset)?;
    let out = cfg.output_dir();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(cfg)
}

/// Decode the configured dataset; sample ids are paths relative to its root.
fn load_data(cfg: &RunConfig) -> Result<LabeledClips> {
    let d = cfg.dataset.as_ref().expect("validated");
    let manifest = load_manifest(&d.source())?;
    let mut data = LabeledClips::load(&manifest, d.sample_rate)?;
    for (clip, entry) in data.clips.iter_mut().zip(&manifest.entries) {
        let rel = entry.path.strip_prefix(&d.root).unwrap_or(&entry.path);
        clip.source_id = rel.to_string_lossy().replace('\\', "/");
    }
    Ok(data)
}

fn is_test(cfg: &RunConfig, fold: u32) -> bool {
    cfg.test_folds.contains(&fold)
}

fn ids_path(matrix: &Path) -> PathBuf {
    matrix.with_extension("ids.csv")
}

fn stem_name(p: &Path) -> String {
    p.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

/// Write the manifest whether or not `result` succeeded.
fn finish(mut manifest: RunManifest, path: &Path, result: Result<()>) -> Result<()> {
    if let Err(e) = &result {
        manifest.status = Status::Partial;
        manifest.error = Some(format!("error[{}]: {e}", e.category()));
    }
    manifest.write(path)?;
    result
}

pub fn pretrain(common: &Common, kind: InputKind, steps: Option<usize>) -> Result<()> {
    let cfg = prepare(common, Some(kind), true, steps)?;
    let out = cfg.output_dir().to_path_buf();
    let data = load_data(&cfg)?;
    let train = data.subset(|i| !is_test(&cfg, data.folds[i]))?;
    let enc = cfg.encoder.build(kind)?;
    let mut manifest = RunManifest::new("pretrain", &cfg, json!({ "input": kind }))?;
    let manifest_path = out.join(format!("pretrain-{kind}.manifest.json"));
    let loss_path = out.join(format!("loss-{kind}.csv"));
    let ckpt_path = out.join(format!("encoder-{kind}.ckpt"));
    let ckpt_dir = out.join(format!("checkpoints-{kind}"));
    let adam = cfg.train.adam();
    let every = cfg.train.checkpoint_every;

    let mut trainer = match Trainer::new(&train, &enc, &cfg.train) {
        Ok(t) => t,
        Err(e) => return finish(manifest, &manifest_path, Err(e)),
    };
    if every > 0 {
        std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    }
    let mut written = Vec::new();
    let result = trainer.run(|report, state| {
        if every > 0 && (report.step + 1) % every == 0 {
            let p = ckpt_dir.join(format!("step-{:06}.ckpt", report.step + 1));
            state.model.to_container(Some((&state.optimizer, &adam))).write(&p)?;
            written.push(p);
        }
        Ok(())
    });
    manifest.steps_completed = Some(trainer.steps_done());
    let result = result.and_then(|()| write_loss_csv(&loss_path, &trainer.state.losses));
    manifest.outputs.push(loss_path.clone());
    let result = match result {
        Ok(()) => {
            manifest.outputs.push(ckpt_path.clone());
            trainer
                .state
                .model
                .to_container(Some((&trainer.state.optimizer, &adam)))
                .write(&ckpt_path)
        }
        Err(e) => {
            // keep whatever history exists
            let _ = write_loss_csv(&loss_path, &trainer.state.losses);
            Err(e)
        }
    };
    manifest.outputs.extend(written);
    if !trainer.excluded.is_empty() {
        manifest.args["excluded_constant_clips"] = json!(trainer.excluded.len());
    }
    finish(manifest, &manifest_path, result)
}

pub fn extract(common: &Common, checkpoint: &Path, kind: Option<InputKind>) -> Result<()> {
    let cfg = prepare(common, None, true, None)?;
    let (model, _) = EncoderModel::from_container(&Container::read(checkpoint)?)?;
    let trained = model.config.input_kind;
    if let Some(k) = kind {
        if k != trained {
            return Err(Error::config(format!(
                "checkpoint {} was trained on {trained} input but --input is {k}",
                checkpoint.display()
            )));
        }
    }
    let out = cfg.output_dir().to_path_buf();
    let mut manifest = RunManifest::new(
        "extract",
        &cfg,
        json!({ "input": trained, "checkpoint": checkpoint }),
    )?;
    let manifest_path = out.join(format!("extract-{trained}.manifest.json"));
    let result = (|| {
        let data = load_data(&cfg)?;
        let features = extract_features(&model, &data, cfg.train.patches_per_segment, cfg.seed)?;
        let stem = out.join(format!("features-{trained}"));
        save_features(&stem, &features, &sample_records(&data))?;
        manifest.outputs.push(stem.with_extension("mat"));
        manifest.outputs.push(ids_path(&stem.with_extension("mat")));
        Ok(())
    })();
    finish(manifest, &manifest_path, result)
}

pub fn fuse(common: &Common, waveform: &Path, spectrogram: &Path) -> Result<()> {
    let cfg = prepare(common, None, false, None)?;
    let out = cfg.output_dir().to_path_buf();
    let mut manifest = RunManifest::new(
        "fuse",
        &cfg,
        json!({ "waveform": waveform, "spectrogram": spectrogram }),
    )?;
    let manifest_path = out.join("fuse.manifest.json");
    let result = (|| {
        let (r, recs) = load_features(waveform, &ids_path(waveform))?;
        let (z, _) = load_features(spectrogram, &ids_path(spectrogram))?;
        r.check_aligned(&z)?;
        let fit_rows: Vec<usize> = (0..r.rows).filter(|&i| !is_test(&cfg, recs[i].fold)).collect();
        let model = fit_cca(&r.select_rows(&fit_rows), &z.select_rows(&fit_rows), &cfg.fusion)?;
        let fused = cca_fuse(&model, &r, &z)?;
        let stem = out.join("features-fused");
        save_features(&stem, &fused, &recs)?;
        let report = out.join("cca-report.json");
        let model_path = out.join("cca-model.json");
        write_json(&report, &model.report(fit_rows.len()))?;
        write_json(&model_path, &model)?;
        manifest.outputs.extend([stem.with_extension("mat"), ids_path(&stem.with_extension("mat")), report, model_path]);
        Ok(())
    })();
    finish(manifest, &manifest_path, result)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn label_indices(recs: &[SampleRecord], classes: &[String]) -> Result<Vec<usize>> {
    recs.iter()
        .map(|r| {
            classes
                .iter()
                .position(|c| c == &r.label)
                .ok_or_else(|| Error::Parameter(format!("label `{}` of `{}` is unknown to the probe", r.label, r.sample_id)))
        })
        .collect()
}

pub fn probe(common: &Common, features: &Path) -> Result<()> {
    let cfg = prepare(common, None, false, None)?;
    let out = cfg.output_dir().to_path_buf();
    let name = stem_name(features);
    let mut manifest = RunManifest::new("probe", &cfg, json!({ "features": features }))?;
    let manifest_path = out.join(format!("probe-{name}.manifest.json"));
    let result = (|| {
        let (f, recs) = load_features(features, &ids_path(features))?;
        let classes: Vec<String> = recs.iter().map(|r| r.label.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let labels = label_indices(&recs, &classes)?;
        let rows: Vec<usize> = (0..f.rows).filter(|&i| !is_test(&cfg, recs[i].fold)).collect();
        if rows.is_empty() {
            return Err(Error::EmptyDataset("every row is in a test fold".into()));
        }
        let y: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
        let model = train_probe(&f.select_rows(&rows), &y, &classes, &cfg.probe, cfg.seed)?;
        let path = out.join(format!("probe-{name}.json"));
        model.save(&path)?;
        manifest.outputs.push(path);
        Ok(())
    })();
    finish(manifest, &manifest_path, result)
}

pub fn eval(common: &Common, features: &Path, probe_path: &Path) -> Result<()> {
    let cfg = prepare(common, None, false, None)?;
    let out = cfg.output_dir().to_path_buf();
    let name = stem_name(features);
    let mut manifest = RunManifest::new(
        "eval",
        &cfg,
        json!({ "features": features, "probe": probe_path }),
    )?;
    let manifest_path = out.join(format!("eval-{name}.manifest.json"));
    let result = (|| {
        let probe = ProbeModel::load(probe_path)?;
        let (f, recs) = load_features(features, &ids_path(features))?;
        let rows: Vec<usize> = if cfg.test_folds.is_empty() {
            (0..f.rows).collect()
        } else {
            (0..f.rows).filter(|&i| is_test(&cfg, recs[i].fold)).collect()
        };
        let sel: Vec<SampleRecord> = rows.iter().map(|&i| recs[i].clone()).collect();
        let labels = label_indices(&sel, &probe.class_names)?;
        let report = evaluate(&probe, &f.select_rows(&rows), &labels)?;
        let json = out.join(format!("eval-{name}.json"));
        let csv = out.join(format!("eval-{name}.confusion.csv"));
        report.save(&json, &csv)?;
        println!("accuracy {:.4} on {} samples", report.accuracy, report.n_samples);
        manifest.outputs.extend([json, csv]);
        Ok(())
    })();
    finish(manifest, &manifest_path, result)
}
