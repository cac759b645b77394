use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use birdsong::corpus::{load_manifest, split_train_val, CorpusManifest};
use birdsong::dsp::FeatureExtractor;
use birdsong::infer::{
    average_precision, ensemble_average, map_score, predict_corpus, rank_classes, read_judgments, read_predictions,
    write_predictions, MapMode, Prediction, RelevanceJudgment,
};
use birdsong::net::{init_params, NetworkConfig};
use birdsong::train::{
    check_mask_names, load_checkpoint, load_segment_bank, log_line, mask_path, save_checkpoint, segment_entry,
    train_epoch, Checkpoint, TrainingData, LOG_HEADER,
};
use birdsong::RandomSource;
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{RunConfig, TrainSplit};
use crate::{EvaluateArgs, PredictArgs, PreprocessArgs, TrainArgs, Usage};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

fn required(cli: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    cli.or_else(|| fallback.clone())
        .ok_or_else(|| Usage(format!("no {what} given on the command line or in the config")).into())
}

/// Checkpoint file name for a number of completed epochs.
pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn preprocess(cfg: &RunConfig, args: PreprocessArgs) -> Result<()> {
    let manifest_path = required(args.manifest, &cfg.paths.manifest, "manifest")?;
    let out = required(args.out, &cfg.paths.cache_dir, "cache directory")?;
    let manifest = load_manifest(&manifest_path)?;
    check_mask_names(&manifest)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let results: Vec<_> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let seg = segment_entry(e, &cfg.segmentation, cfg.sample_rate)?;
            seg.write(mask_path(&out, &e.recording_id))?;
            Ok(seg)
        })
        .collect::<Vec<birdsong::Result<_>>>();

    let mut summary = String::from("recording_id,samples,sound_samples,noise_samples,sound_threshold\n");
    let mut failures = String::from("recording_id,error\n");
    let mut failed = 0;
    for (e, r) in manifest.entries.iter().zip(&results) {
        match r {
            Ok(seg) => summary.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&e.recording_id),
                seg.len(),
                seg.sound_count(),
                seg.noise_count(),
                seg.sound_threshold_used
            )),
            Err(err) => {
                failed += 1;
                warn!("skipping `{}`: {err}", e.recording_id);
                let stale = mask_path(&out, &e.recording_id);
                if stale.exists() {
                    fs::remove_file(&stale).with_context(|| format!("removing {}", stale.display()))?;
                }
                failures.push_str(&format!("{},{}\n", csv_field(&e.recording_id), csv_field(&err.to_string())));
            }
        }
    }
    write_file(&out.join(SUMMARY_FILE), &summary)?;
    write_file(&out.join(FAILURES_FILE), &failures)?;
    let ok = manifest.len() - failed;
    println!("preprocessed {ok} of {} recordings ({failed} failed)", manifest.len());
    if ok == 0 {
        bail!("no recording could be processed; see {}", out.join(FAILURES_FILE).display());
    }
    Ok(())
}

fn judgments_from(manifest: &CorpusManifest) -> Vec<RelevanceJudgment> {
    manifest
        .entries
        .iter()
        .map(|e| RelevanceJudgment {
            recording_id: e.recording_id.clone(),
            main_species: e.species_id(),
            background_species: Default::default(),
        })
        .collect()
}

pub fn train(cfg: &RunConfig, args: TrainArgs) -> Result<()> {
    let manifest_path = required(args.manifest, &cfg.paths.manifest, "manifest")?;
    let cache = required(args.cache, &cfg.paths.cache_dir, "cache directory")?;
    let out = required(args.out, &cfg.paths.output_dir, "output directory")?;
    let split = match args.train_split {
        Some(s) => s,
        None => cfg.split()?,
    };
    let epochs = args.epochs.unwrap_or(cfg.training.epochs);
    let training = &cfg.training;

    let resume = args.resume.as_deref().map(load_checkpoint).transpose()?;
    let manifest = load_manifest(&manifest_path)?;
    let (train_set, val_set) = match split {
        TrainSplit::Full => (manifest.clone(), None),
        TrainSplit::Fraction(_) => {
            let (t, v) = split_train_val(&manifest, split.validation_fraction(), cfg.seed)?;
            (t, Some(v).filter(|v| !v.is_empty()))
        }
    };

    let network = NetworkConfig {
        num_classes: manifest.num_species,
        ..cfg.network.clone()
    };
    let (mut params, start) = match resume {
        Some(ck) => {
            ck.ensure_classes(manifest.num_species)?;
            let (f, s) = (ck.training.fft_window, ck.training.segment_samples);
            if (f, s) != (training.fft_window, training.segment_samples) {
                return Err(birdsong::Error::CheckpointMismatch(format!(
                    "checkpoint uses fft_window {f} / segment_samples {s}, configuration {} / {}",
                    training.fft_window, training.segment_samples
                ))
                .into());
            }
            if ck.params.config() != &network {
                return Err(birdsong::Error::CheckpointMismatch(
                    "network architecture differs from the configuration".into(),
                )
                .into());
            }
            if ck.seed != cfg.seed {
                warn!("checkpoint was trained with seed {}, continuing with {}", ck.seed, cfg.seed);
            }
            (ck.params, ck.epoch)
        }
        None => {
            let mut rng = RandomSource::derive(cfg.seed, u64::MAX);
            (init_params(network, &mut rng)?, 0)
        }
    };

    let bank = load_segment_bank(&train_set, &cache, cfg.sample_rate)?;
    let data = TrainingData::new(&train_set, &bank, training.fft_window, cfg.sample_rate)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let log_path = out.join(TRAIN_LOG_FILE);
    let append = start > 0 && log_path.exists();
    let mut log = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    if !append {
        writeln!(log, "{LOG_HEADER}")?;
    }

    info!(
        "training on {} recordings ({} held out), epochs {}..{}",
        train_set.len(),
        val_set.as_ref().map_or(0, CorpusManifest::len),
        start + 1,
        start + epochs
    );
    let clock = Instant::now();
    let end = start + epochs;
    for epoch in start..end {
        let summary = train_epoch(&mut params, &data, &cfg.augment, training, epoch)?;
        let completed = epoch + 1;
        let val_map = match &val_set {
            Some(v) => {
                let preds = predict_corpus(v, &params, data.extractor(), training.segment_samples, cfg.seed)?;
                Some(map_score(&preds, &judgments_from(v), MapMode::MainOnly)?)
            }
            None => None,
        };
        let line = log_line(completed, summary.mean_loss, val_map, clock.elapsed().as_secs_f64());
        writeln!(log, "{line}")?;
        log.flush()?;
        info!("epoch {line}");
        if completed % training.checkpoint_interval == 0 || completed == end {
            let path = out.join(checkpoint_name(completed));
            save_checkpoint(
                &Checkpoint {
                    params: params.clone(),
                    training: training.clone(),
                    epoch: completed,
                    seed: cfg.seed,
                },
                &path,
            )?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

pub fn predict(cfg: &RunConfig, args: PredictArgs) -> Result<()> {
    let manifest_path = required(args.manifest, &cfg.paths.manifest, "manifest")?;
    let manifest = load_manifest(&manifest_path)?;
    let checkpoints = args
        .checkpoints
        .iter()
        .map(|p| load_checkpoint(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let classes = checkpoints[0].params.config().num_classes;
    for (ck, path) in checkpoints.iter().zip(&args.checkpoints) {
        if ck.params.config().num_classes != classes {
            return Err(birdsong::Error::CheckpointMismatch(format!(
                "{} predicts {} classes, {} predicts {classes}",
                path.display(),
                ck.params.config().num_classes,
                args.checkpoints[0].display()
            ))
            .into());
        }
    }
    if manifest.num_species > classes {
        return Err(birdsong::Error::CheckpointMismatch(format!(
            "manifest has {} species but the checkpoints predict {classes}",
            manifest.num_species
        ))
        .into());
    }

    let sets = checkpoints
        .iter()
        .map(|ck| {
            let extractor = FeatureExtractor::new(ck.training.fft_window, cfg.sample_rate)?;
            predict_corpus(&manifest, &ck.params, &extractor, ck.training.segment_samples, cfg.seed)
        })
        .collect::<birdsong::Result<Vec<Vec<Prediction>>>>()?;
    let predictions = if sets.len() == 1 {
        sets.into_iter().next().expect("one set")
    } else {
        ensemble_average(&sets)?
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_predictions(&args.out, &predictions)?;
    println!(
        "wrote {} predictions over {classes} classes to {}",
        predictions.len(),
        args.out.display()
    );
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, args: EvaluateArgs) -> Result<()> {
    let mode = match &args.mode {
        Some(m) => m.parse::<MapMode>()?,
        None => cfg.map_mode()?,
    };
    let predictions = read_predictions(&args.predictions)?;
    let judgments = read_judgments(&args.judgments)?;
    let map = map_score(&predictions, &judgments, mode)?;
    if let Some(out) = &args.out {
        let lookup: std::collections::HashMap<&str, &Prediction> =
            predictions.iter().map(|p| (p.recording_id.as_str(), p)).collect();
        let mut text = String::from("recording_id,average_precision\n");
        for j in &judgments {
            // map_score has already checked coverage
            let p = lookup[j.recording_id.as_str()];
            let ap = average_precision(&rank_classes(&p.probabilities), &j.relevant(mode))?;
            text.push_str(&format!("{},{ap}\n", csv_field(&j.recording_id)));
        }
        write_file(out, &text)?;
    }
    println!("MAP={map:.4}");
    Ok(())
}
