use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::checkpoint::Checkpoint;
use super::step::{train_step, MetricsRow, TrainConfig};
use crate::data::{make_batch, trainable, Dataset};
use crate::error::{io_err, PadError, Result};
use crate::models::{EnergyModel, PadConfig, PadModel};
use crate::nn::AdamW;

pub const PLANNER_KIND: &str = "planner";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LATEST_CHECKPOINT: &str = "planner.padck";

/// Rows produced by this call and the checkpoint of the final state.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub checkpoint: Checkpoint,
}

pub fn planner_checkpoint(model: &PadModel, optimizer: Option<&AdamW>, config: &TrainConfig, step: u64) -> Result<Checkpoint> {
    Ok(Checkpoint {
        kind: PLANNER_KIND.into(),
        config: serde_json::to_value(&model.config)?,
        train: serde_json::to_value(config)?,
        step,
        seed: config.seed,
        params: model.params().named(),
        optimizer: optimizer.cloned(),
    })
}

/// Rebuilds the planner (and its optimizer state, if stored).
pub fn restore_planner(ckpt: &Checkpoint) -> Result<(PadModel, Option<AdamW>)> {
    if ckpt.kind != PLANNER_KIND {
        return Err(PadError::ConfigMismatch {
            stored: format!("kind {}", ckpt.kind),
            expected: format!("kind {PLANNER_KIND}"),
        });
    }
    let config: PadConfig = serde_json::from_value(ckpt.config.clone())?;
    let mut model = PadModel::new(config, ckpt.seed)?;
    model.params_mut().restore(&ckpt.params)?;
    Ok((model, ckpt.optimizer.clone()))
}

fn metrics_meta(config: &TrainConfig) -> Value {
    json!({
        "use_projector": config.use_projector,
        "first_order_only": config.first_order_only,
        "refine_steps": config.refine_steps,
        "seed": config.seed,
    })
}

/// Keeps the header and the rows up to and including `step`.
fn truncate_metrics(path: &Path, step: u64) -> Result<()> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0 || line.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= step);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(io_err(path))
}

fn checkpoint_dir(dir: &Path) -> PathBuf {
    dir.join("checkpoints")
}

fn save_checkpoints(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    let cdir = checkpoint_dir(dir);
    fs::create_dir_all(&cdir).map_err(io_err(&cdir))?;
    ckpt.save(&cdir.join(format!("step_{:06}.padck", ckpt.step)))?;
    ckpt.save(&dir.join(LATEST_CHECKPOINT))
}

/// Trains for `config.steps` optimisation steps.
///
/// With a run directory, metrics are appended to `metrics.csv`, checkpoints
/// land in `checkpoints/` and `planner.padck`, and an existing
/// `planner.padck` is resumed from (its configuration must match).
/// `stop_after` ends the session early without a final checkpoint, as an
/// interruption would.
pub fn train_loop(
    model: &mut PadModel,
    dataset: &Dataset,
    config: &TrainConfig,
    dir: Option<&Path>,
    stop_after: Option<u64>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if trainable(dataset, model.config.past_len, model.config.horizon).is_empty() {
        return Err(PadError::Data(format!(
            "no trajectory reaches length P_max + H = {}",
            model.config.past_len + model.config.horizon
        )));
    }
    let mut optimizer = AdamW::new(config.optimizer, model.params());
    let mut start = 0;
    let mut metrics_file = None;
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let latest = dir.join(LATEST_CHECKPOINT);
        let metrics = dir.join(METRICS_FILE);
        if latest.exists() {
            let ckpt = Checkpoint::load(&latest)?;
            ckpt.check_config(PLANNER_KIND, &serde_json::to_value(&model.config)?)?;
            let mut resumable = config.clone();
            if let Ok(stored) = serde_json::from_value::<TrainConfig>(ckpt.train.clone()) {
                resumable.steps = stored.steps;
            }
            if ckpt.train != serde_json::to_value(&resumable)? {
                return Err(PadError::ConfigMismatch {
                    stored: ckpt.train.to_string(),
                    expected: serde_json::to_string(config)?,
                });
            }
            let (restored, opt) = restore_planner(&ckpt)?;
            *model = restored;
            optimizer = opt.ok_or_else(|| PadError::Data("checkpoint lacks optimizer state".into()))?;
            start = ckpt.step;
            if metrics.exists() {
                truncate_metrics(&metrics, start)?;
            }
        }
        if !metrics.exists() {
            fs::write(&metrics, format!("{}\n", MetricsRow::header(config.refine_steps))).map_err(io_err(&metrics))?;
        }
        let meta = dir.join("metrics.meta.json");
        fs::write(&meta, serde_json::to_string_pretty(&metrics_meta(config))?).map_err(io_err(&meta))?;
        metrics_file = Some(OpenOptions::new().append(true).open(&metrics).map_err(io_err(&metrics))?);
    }

    let end = stop_after.map_or(config.steps, |s| s.min(config.steps));
    let mut rows = Vec::new();
    for step in start..end {
        let batch = make_batch(dataset, &model.config, config.batch_size, config.seed, step)?;
        let (row, _) = train_step(model, &mut optimizer, &batch, config, step)?;
        if let (Some(f), Some(dir)) = (metrics_file.as_mut(), dir) {
            writeln!(f, "{}", row.to_csv()).map_err(io_err(dir.join(METRICS_FILE)))?;
        }
        rows.push(row);
        let done = step + 1;
        if let Some(dir) = dir {
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.steps {
                save_checkpoints(dir, &planner_checkpoint(model, Some(&optimizer), config, done)?)?;
            }
        }
    }
    let checkpoint = planner_checkpoint(model, Some(&optimizer), config, end)?;
    if let Some(dir) = dir {
        if end == config.steps {
            save_checkpoints(dir, &checkpoint)?;
        }
    }
    Ok(TrainOutcome { metrics: rows, checkpoint })
}
