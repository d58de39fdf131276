//! The training loop, its log and resumable state.
//!
//! Iterations are numbered from 1; iteration `i` belongs to epoch
//! `(i − 1) / iters_per_epoch + 1` and draws its batch from
//! [`batch_rng`]`(seed, i)`. Together with the saved velocity this makes a
//! resumed run continue exactly where an uninterrupted one would be.
//!
//! Output directory layout:
//!
//! ```text
//! config.txt                 resolved configuration
//! train_log.csv              epoch,iteration,lr,total,charbonnier,gdl
//! timing.csv                 iteration,elapsed_s (kept apart so the log is reproducible)
//! checkpoints/epoch_NNNN.lpsr, epoch_NNNN.lpso
//! model.lpsr, model.lpso     final parameters and optimizer state
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::TrainConfig;
use crate::error::{CheckpointError, Error, Result};
use crate::imaging::{batch_rng, CorpusManifest, PatchSampler};
use crate::loss::total_loss;
use crate::model::{
    forward_graph, load_checkpoint, save_checkpoint, ByteReader, ModelParams, RecordCodec,
};
use crate::tensor::{Graph, SgdMomentum, Tensor};

pub const OPTIMIZER_MAGIC: &[u8; 4] = b"LPSO";
const OPTIMIZER_VERSION: u16 = 1;
pub const LOG_HEADER: &str = "epoch,iteration,lr,total,charbonnier,gdl";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: u64,
    pub iteration: u64,
    pub lr: f64,
    pub total: f64,
    pub charbonnier: f64,
    pub gdl: f64,
}

/// Per-iteration losses plus wall-clock seconds since the (re)start.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub elapsed: Vec<f64>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{LOG_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.iteration, r.lr, r.total, r.charbonnier, r.gdl
            ));
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("iteration,elapsed_s\n");
        for (r, t) in self.rows.iter().zip(&self.elapsed) {
            out.push_str(&format!("{},{t:.3}\n", r.iteration));
        }
        out
    }

    /// Reads rows written by [`TrainLog::to_csv`] (timings are not restored).
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(LOG_HEADER) {
            return Err(Error::Config(
                "training log has an unexpected header".into(),
            ));
        }
        let bad = |line: &str| Error::Config(format!("malformed training log row `{line}`"));
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 6 {
                    return Err(bad(line));
                }
                let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(line));
                let int = |i: usize| f[i].parse::<u64>().map_err(|_| bad(line));
                Ok(LogRow {
                    epoch: int(0)?,
                    iteration: int(1)?,
                    lr: num(2)?,
                    total: num(3)?,
                    charbonnier: num(4)?,
                    gdl: num(5)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainLog {
            elapsed: vec![0.0; rows.len()],
            rows,
        })
    }
}

/// Everything needed to continue a run after `iteration`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub velocity: Vec<Vec<f32>>,
    pub iteration: u64,
}

impl TrainState {
    /// Loads `path` and the optimizer state stored beside it (`.lpso`).
    pub fn load(checkpoint: impl AsRef<Path>) -> Result<Self> {
        let checkpoint = checkpoint.as_ref();
        let params: ModelParams = load_checkpoint(checkpoint)?;
        let opt_path = checkpoint.with_extension("lpso");
        let bytes = fs::read(&opt_path).map_err(|e| Error::io(&opt_path, e))?;
        let (iteration, velocity) = decode_optimizer_state(&bytes, &params)?;
        Ok(TrainState {
            params,
            velocity,
            iteration,
        })
    }

    pub fn save(&self, checkpoint: impl AsRef<Path>) -> Result<()> {
        let checkpoint = checkpoint.as_ref();
        save_checkpoint(&self.params, checkpoint)?;
        let opt_path = checkpoint.with_extension("lpso");
        let bytes = encode_optimizer_state(self.iteration, &self.params, &self.velocity);
        fs::write(&opt_path, bytes).map_err(|e| Error::io(&opt_path, e))
    }
}

fn encode_optimizer_state(iteration: u64, params: &ModelParams, velocity: &[Vec<f32>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(OPTIMIZER_MAGIC);
    out.extend_from_slice(&OPTIMIZER_VERSION.to_le_bytes());
    out.extend_from_slice(&iteration.to_le_bytes());
    out.extend_from_slice(&(velocity.len() as u32).to_le_bytes());
    for ((name, p), v) in params.iter().zip(velocity) {
        let t = Tensor::from_vec(p.shape(), v.clone()).expect("velocity matches its parameter");
        RecordCodec::write(&mut out, name, &t);
    }
    out
}

fn decode_optimizer_state(bytes: &[u8], params: &ModelParams) -> Result<(u64, Vec<Vec<f32>>)> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != OPTIMIZER_MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = r.u16()?;
    if version != OPTIMIZER_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: OPTIMIZER_VERSION,
        }
        .into());
    }
    let iteration = r.u64()?;
    let count = r.u32()? as usize;
    if count != params.len() {
        return Err(CheckpointError::ShapeTable(format!(
            "optimizer state has {count} buffers, model has {}",
            params.len()
        ))
        .into());
    }
    let mut velocity = Vec::with_capacity(count);
    for (name, p) in params.iter() {
        let (n, t) = RecordCodec::read::<f32>(&mut r)?;
        if n != name || t.shape() != p.shape() {
            return Err(CheckpointError::ShapeTable(format!(
                "velocity `{n}` does not match parameter `{name}`"
            ))
            .into());
        }
        velocity.push(t.into_data());
    }
    if !r.is_empty() {
        return Err(CheckpointError::TrailingData.into());
    }
    Ok((iteration, velocity))
}

/// Result of [`train`]: the final state and the rows logged by this call.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: TrainLog,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs (or continues) training. With `out_dir`, writes the config echo,
/// log, checkpoints and final model there.
pub fn train(
    config: &TrainConfig,
    sampler: &PatchSampler,
    resume: Option<TrainState>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if sampler.patch() != config.patch {
        return Err(Error::Config(format!(
            "sampler patch {} differs from configured patch {}",
            sampler.patch(),
            config.patch
        )));
    }
    let (mut params, velocity, start) = match resume {
        Some(s) => {
            if *s.params.config() != config.model {
                return Err(Error::Config(
                    "checkpoint model does not match the configured model".into(),
                ));
            }
            (s.params, Some(s.velocity), s.iteration)
        }
        None => (ModelParams::build(config.model, config.seed)?, None, 0),
    };
    let mut opt = SgdMomentum::new(
        params.tensors(),
        config.lr,
        config.momentum,
        config.weight_decay,
    )?;
    if let Some(v) = velocity {
        opt.set_velocity(v)?;
    }

    let mut previous = TrainLog::default();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("config.txt"), &config.to_text())?;
        let log_path = dir.join("train_log.csv");
        if start > 0 && log_path.exists() {
            let text = fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
            previous = TrainLog::parse_csv(&text)?;
            previous.rows.retain(|r| r.iteration <= start);
            previous.elapsed.truncate(previous.rows.len());
        }
    }

    let ipe = config.iters_per_epoch as u64;
    let levels = config.model.levels();
    let clock = Instant::now();
    let mut log = TrainLog::default();
    for iteration in start + 1..=config.total_iterations() {
        let epoch = (iteration - 1) / ipe + 1;
        let lr = config.lr_at_epoch(epoch as usize);
        let batch =
            sampler.sample_batch::<f32>(config.batch, &mut batch_rng(config.seed, iteration))?;

        let mut graph = Graph::new();
        let bound = params.bind(&mut graph, true);
        let x = graph.constant(batch.lr);
        let outputs = forward_graph(&config.model, &mut graph, &bound, x, levels)?;
        let targets: Vec<_> = batch
            .targets
            .into_iter()
            .map(|t| graph.constant(t))
            .collect();
        let terms = total_loss(
            &mut graph,
            &outputs.images,
            &targets,
            &config.loss,
            config.batch,
        )?;
        let value = |v| f64::from(graph.value(v).item());
        let row = LogRow {
            epoch,
            iteration,
            lr,
            total: value(terms.total),
            charbonnier: value(terms.charbonnier),
            gdl: value(terms.gdl),
        };
        if !row.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                epoch,
                value: row.total,
            });
        }
        graph.backward(terms.total)?;
        params.collect_grads(&mut graph, &bound)?;
        opt.learning_rate = lr;
        opt.step(params.iter_mut())?;
        if !params.all_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                epoch,
                value: f64::NAN,
            });
        }

        log.rows.push(row);
        log.elapsed.push(clock.elapsed().as_secs_f64());
        if iteration % 10 == 0 || iteration == start + 1 {
            log::info!(
                "epoch {epoch} iter {iteration}: loss {:.6} (charbonnier {:.6}, gdl {:.6}), lr {lr}",
                row.total,
                row.charbonnier,
                row.gdl
            );
        }

        let epoch_done = iteration % ipe == 0;
        if let (Some(dir), true) = (out_dir, epoch_done && config.checkpoint_every > 0) {
            if epoch.is_multiple_of(config.checkpoint_every as u64) {
                let state = TrainState {
                    params: params.clone(),
                    velocity: opt.velocity().to_vec(),
                    iteration,
                };
                state.save(checkpoint_path(dir, epoch))?;
                write_logs(dir, &previous, &log)?;
            }
        }
    }

    let state = TrainState {
        params,
        velocity: opt.velocity().to_vec(),
        iteration: config.total_iterations().max(start),
    };
    if let Some(dir) = out_dir {
        state.save(dir.join("model.lpsr"))?;
        write_logs(dir, &previous, &log)?;
    }
    Ok(TrainOutcome { state, log })
}

fn write_logs(dir: &Path, previous: &TrainLog, log: &TrainLog) -> Result<()> {
    let mut all = previous.clone();
    all.rows.extend_from_slice(&log.rows);
    all.elapsed.extend_from_slice(&log.elapsed);
    write_file(&dir.join("train_log.csv"), &all.to_csv())?;
    write_file(&dir.join("timing.csv"), &log.timing_csv())
}

/// Location of the checkpoint written after `epoch`.
pub fn checkpoint_path(out_dir: &Path, epoch: u64) -> PathBuf {
    out_dir
        .join("checkpoints")
        .join(format!("epoch_{epoch:04}.lpsr"))
}

/// [`train`] on the train split of `manifest`, optionally resuming from a
/// checkpoint written by an earlier run.
pub fn train_on_manifest(
    config: &TrainConfig,
    manifest: &CorpusManifest,
    resume: Option<&Path>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let sampler = PatchSampler::from_manifest(
        manifest,
        config.augment.clone(),
        config.model.scale,
        config.patch,
    )?;
    let state = resume.map(TrainState::load).transpose()?;
    train(config, &sampler, state, out_dir)
}
