//! One training run end to end: dataset assembly (cached), model seeding,
//! the epoch loop with early stopping, and the artifact directory. A
//! completed run directory holds the config echo, the metrics CSV, the best
//! checkpoint, and the summary JSON; a sentinel file marks runs that did
//! not finish.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{restore_checkpoint, save_checkpoint};
use crate::config::{DatasetSpec, RunConfig, SourceSpec};
use crate::data::cache::overlay_cache;
use crate::data::glyphs::glyph_set;
use crate::data::idx::load_idx;
use crate::data::overlay::{LabeledImages, OverlayDataset};
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate, validation_objective, EarlyStopState, EvalReport, LossRatioTrace, MetricsWriter,
    StopDecision,
};
use crate::model::MultitaskModel;
use crate::objective::MultitaskObjective;
use crate::quadratic::QuadraticTaskSet;
use crate::trainer::train_step;

/// Marks a run directory whose training did not complete.
pub const SENTINEL_FILE: &str = "INCOMPLETE";
pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "best.ckpt";

/// What a finished run reports, persisted as the summary JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Canonical config echo; re-parses to the run's configuration.
    pub config: String,
    /// Last epoch that ran (the stopping epoch).
    pub stopping_epoch: usize,
    /// Epoch whose validation objective was best; None for runs without
    /// validation (quadratic datasets).
    pub best_epoch: Option<usize>,
    pub wall_time_seconds: f64,
    /// Final reports on every split, computed with the best parameters.
    pub evals: Vec<EvalReport>,
    /// Mean |task-0 loss share - 1/tasks| before the probe updates.
    pub ratio_pre_deviation: Option<f64>,
    /// The same deviation measured after the probe updates, when the
    /// trainer takes them.
    pub ratio_post_deviation: Option<f64>,
}

/// Runs training to completion under `out`, reading or building the dataset
/// cache under `cache_root`. `resume` permits restarting over a directory
/// whose previous run was interrupted, provided the config matches.
pub fn run_train(
    config: &RunConfig,
    out: &Path,
    cache_root: &Path,
    resume: bool,
) -> Result<RunSummary> {
    config.validate()?;
    let paths = prepare_out_dir(config, out, resume)?;
    let started = Instant::now();
    let result = match &config.dataset {
        DatasetSpec::Overlay { .. } => train_overlay(config, &paths, cache_root),
        DatasetSpec::Quadratic { curvatures, theta0 } => {
            train_quadratic(config, &paths, curvatures, theta0)
        }
    };
    let mut summary = result?;
    summary.wall_time_seconds = started.elapsed().as_secs_f64();
    std::fs::write(
        paths.out.join(SUMMARY_FILE),
        serde_json::to_vec_pretty(&summary)?,
    )?;
    std::fs::remove_file(paths.out.join(SENTINEL_FILE))?;
    Ok(summary)
}

struct RunPaths {
    out: PathBuf,
}

fn prepare_out_dir(config: &RunConfig, out: &Path, resume: bool) -> Result<RunPaths> {
    std::fs::create_dir_all(out)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", out.display())))?;
    let sentinel = out.join(SENTINEL_FILE);
    let config_path = out.join(CONFIG_FILE);
    if out.join(SUMMARY_FILE).exists() && !sentinel.exists() {
        return Err(Error::Config(format!(
            "{} already holds a completed run; choose a new directory",
            out.display()
        )));
    }
    if sentinel.exists() {
        if !resume {
            return Err(Error::Config(format!(
                "{} holds an interrupted run; pass --resume to restart it or choose a new directory",
                out.display()
            )));
        }
        let previous = std::fs::read_to_string(&config_path).unwrap_or_default();
        if previous != config.to_text() {
            return Err(Error::Config(
                "--resume refused: the directory's config does not match this run".to_string(),
            ));
        }
    }
    std::fs::write(&sentinel, b"")?;
    std::fs::write(&config_path, config.to_text())?;
    Ok(RunPaths {
        out: out.to_path_buf(),
    })
}

fn load_source(
    spec: &SourceSpec,
    glyphs_per_class: usize,
    seed: u64,
) -> Result<(String, LabeledImages)> {
    match spec {
        SourceSpec::Glyphs => Ok(("glyphs".to_string(), glyph_set(glyphs_per_class, seed)?)),
        SourceSpec::Idx { images, labels } => {
            let name = images
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "idx".to_string());
            let source = LabeledImages::from_idx(&load_idx(images)?, &load_idx(labels)?)?;
            Ok((name, source))
        }
    }
}

/// Builds (or loads) the overlay dataset a config describes.
pub fn assemble_dataset(config: &RunConfig, cache_root: &Path) -> Result<OverlayDataset> {
    let DatasetSpec::Overlay {
        source_a,
        source_b,
        train,
        val,
        test,
        glyphs_per_class,
    } = &config.dataset
    else {
        return Err(Error::Config(
            "this operation needs an overlay dataset".to_string(),
        ));
    };
    let seed = config.trainer.seed;
    let (name_a, images_a) = load_source(source_a, *glyphs_per_class, seed)?;
    let (name_b, images_b) = if source_b == source_a {
        (name_a.clone(), images_a.clone())
    } else {
        load_source(source_b, *glyphs_per_class, seed)?
    };
    overlay_cache(
        cache_root,
        (&name_a, &images_a),
        (&name_b, &images_b),
        (*train, *val, *test),
        seed,
    )
}

/// Fresh reference model for a config, deterministic under the seed.
pub fn seeded_model(config: &RunConfig) -> Result<MultitaskModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.trainer.seed);
    MultitaskModel::reference(config.task_count(), crate::data::batch::CLASSES, &mut rng)
}

fn train_overlay(config: &RunConfig, paths: &RunPaths, cache_root: &Path) -> Result<RunSummary> {
    let data = assemble_dataset(config, cache_root)?;
    let mut model = seeded_model(config)?;
    // The shuffle stream is separate from the init stream so batch order
    // does not depend on how many parameters the model drew.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.trainer.seed.wrapping_add(1));
    let mut metrics = MetricsWriter::create(&paths.out.join(METRICS_FILE))?;
    let mut trace = LossRatioTrace::new();
    let mut early = EarlyStopState::new(config.patience);
    let checkpoint = paths.out.join(CHECKPOINT_FILE);
    let batch_size = config.trainer.batch_size;
    let mut step = 0usize;
    let mut stopping_epoch = 0;
    let mut indices: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=config.epochs {
        indices.shuffle(&mut shuffle_rng);
        for chunk in indices.chunks(batch_size) {
            let batch = data.train.batch(chunk)?;
            let outcome = match train_step(&mut model, &batch, &config.trainer) {
                Ok(outcome) => outcome,
                Err(e) => {
                    // Keep the rows written so far: a diverged run's trace
                    // is part of its diagnosis.
                    let _ = metrics.finish();
                    return Err(e);
                }
            };
            metrics.write_step(step, epoch, &outcome)?;
            trace.record_step(step, &outcome)?;
            step += 1;
        }
        stopping_epoch = epoch;
        let val_report = evaluate(&model, &data.val, "val", batch_size)?;
        match early.update(epoch, validation_objective(&val_report)) {
            StopDecision::Improved => save_checkpoint(&checkpoint, &model.named_params())?,
            StopDecision::Wait => {}
            StopDecision::Stop => break,
        }
    }
    metrics.finish()?;
    if checkpoint.exists() {
        restore_checkpoint(&checkpoint, model.named_params_mut())?;
    } else {
        // Every epoch's objective was non-finite; keep the last parameters
        // so the report reflects what training produced.
        save_checkpoint(&checkpoint, &model.named_params())?;
    }
    let evals = vec![
        evaluate(&model, &data.train, "train", batch_size)?,
        evaluate(&model, &data.val, "val", batch_size)?,
        evaluate(&model, &data.test, "test", batch_size)?,
    ];
    let target = 1.0 / config.task_count() as f64;
    Ok(RunSummary {
        config: config.to_text(),
        stopping_epoch,
        best_epoch: early.best_epoch(),
        wall_time_seconds: 0.0,
        evals,
        ratio_pre_deviation: trace.mean_pre_deviation(target),
        ratio_post_deviation: trace.mean_post_deviation(target),
    })
}

fn train_quadratic(
    config: &RunConfig,
    paths: &RunPaths,
    curvatures: &[f64],
    theta0: &[f64],
) -> Result<RunSummary> {
    let optima = vec![vec![0.0; theta0.len()]; curvatures.len()];
    let mut tasks = QuadraticTaskSet::new(curvatures.to_vec(), optima, theta0.to_vec())?;
    let mut metrics = MetricsWriter::create(&paths.out.join(METRICS_FILE))?;
    let mut trace = LossRatioTrace::new();
    let mut stopping_epoch = 0;
    for epoch in 1..=config.epochs {
        let outcome = match train_step(&mut tasks, &(), &config.trainer) {
            Ok(outcome) => outcome,
            Err(e) => {
                let _ = metrics.finish();
                return Err(e);
            }
        };
        metrics.write_step(epoch - 1, epoch, &outcome)?;
        if tasks.task_count() >= 2 {
            trace.record_step(epoch - 1, &outcome)?;
        }
        stopping_epoch = epoch;
    }
    metrics.finish()?;
    save_checkpoint(
        &paths.out.join(CHECKPOINT_FILE),
        &MultitaskObjective::all_params(&tasks),
    )?;
    let target = 1.0 / tasks.task_count() as f64;
    Ok(RunSummary {
        config: config.to_text(),
        stopping_epoch,
        best_epoch: None,
        wall_time_seconds: 0.0,
        evals: Vec::new(),
        ratio_pre_deviation: trace.mean_pre_deviation(target),
        ratio_post_deviation: trace.mean_post_deviation(target),
    })
}
