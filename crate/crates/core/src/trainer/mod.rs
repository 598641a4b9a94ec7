//! Consistency-regularized training, optimizer and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod optim;
pub mod step;

use rand::seq::SliceRandom;
use std::io::Write;
use std::path::{Path, PathBuf};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{apply_override, load_layered, Precision, ScheduleConfig, TrainConfig};
pub use optim::AdamW;
pub use step::{compute_loss, geometry_to_model, image_to_model, maps_to_model, training_step, LossBreakdown, LossGraph, PreparedBatch};

use crate::dataset::{assemble_training_sample, TrainingSample, ViewSource};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::seed::{rng_for, streams};

pub const LOSS_CSV_HEADER: &str = "step,l_pbr,l_cons,l_total";

/// Losses of one optimization step (`step` counts from 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    pub lr: f64,
}

impl StepLog {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{}", self.step, self.loss.l_pbr, self.loss.l_cons, self.loss.l_total)
    }
}

pub struct Trainer {
    cfg: TrainConfig,
    schedule: NoiseSchedule,
    model: Denoiser,
    opt: AdamW,
    step: usize,
    epoch_cache: Option<(usize, Vec<usize>)>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule.build()?;
        let model = Denoiser::new(cfg.effective_model(), cfg.precision.dtype(), &mut rng_for(cfg.seed, streams::INIT))?;
        let opt = AdamW::new(cfg.learning_rate, cfg.warmup_steps, cfg.weight_decay, cfg.grad_clip);
        Ok(Trainer { cfg, schedule, model, opt, step: 0, epoch_cache: None })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        Ok(Trainer {
            cfg: ckpt.config.clone(),
            schedule: ckpt.schedule.clone(),
            model: ckpt.denoiser()?,
            opt: ckpt.optimizer(),
            step: ckpt.step,
            epoch_cache: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Changes the run length, e.g. to extend a resumed run.
    pub fn set_total_steps(&mut self, steps: usize) {
        self.cfg.steps = steps;
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn model(&self) -> &Denoiser {
        &self.model
    }

    /// Completed steps.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            config: self.cfg.clone(),
            schedule: self.schedule.clone(),
            step: self.step,
            params: self.model.params().deep_clone()?,
            adam_t: self.opt.t,
            adam_m: self.opt.m.clone(),
            adam_v: self.opt.v.clone(),
        })
    }

    fn epoch_order(&mut self, scenes: &[usize], epoch: usize) -> &[usize] {
        if self.epoch_cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut order = scenes.to_vec();
            order.shuffle(&mut rng_for(self.cfg.seed, streams::SHUFFLE + epoch as u64));
            self.epoch_cache = Some((epoch, order));
        }
        &self.epoch_cache.as_ref().unwrap().1
    }

    /// Samples for the next step. Scenes are visited in a fresh shuffled order
    /// each epoch; everything random is keyed by (seed, step).
    pub fn next_batch<S: ViewSource + ?Sized>(&mut self, source: &S, scenes: &[usize]) -> Result<(Vec<TrainingSample>, PreparedBatch)> {
        if scenes.is_empty() {
            return Err(Error::invalid("no training scenes"));
        }
        let b = self.cfg.batch_size;
        let mut rng = rng_for(self.cfg.seed, streams::TRAIN_STEP + self.step as u64);
        let mut samples = Vec::with_capacity(b);
        for i in 0..b {
            let g = self.step * b + i;
            let scene = self.epoch_order(scenes, g / scenes.len())[g % scenes.len()];
            samples.push(assemble_training_sample(source, scene, &self.cfg.pairs, &mut rng)?);
        }
        let batch = PreparedBatch::prepare(&samples, &self.schedule, self.model.dtype(), &mut rng)?;
        Ok((samples, batch))
    }

    pub fn train_step<S: ViewSource + ?Sized>(&mut self, source: &S, scenes: &[usize]) -> Result<StepLog> {
        let (_, batch) = self.next_batch(source, scenes)?;
        let lr = self.opt.current_lr();
        let (loss, grads) = training_step(&self.model, &batch, &self.schedule, self.cfg.effective_lambda(), self.step + 1)?;
        let grad_norm = self.opt.step(self.model.params(), &grads)?;
        if !grad_norm.is_finite() {
            return Err(Error::TrainingDivergence {
                step: self.step + 1,
                detail: format!("non-finite gradient norm {grad_norm}"),
            });
        }
        self.step += 1;
        Ok(StepLog { step: self.step, loss, grad_norm, lr })
    }

    /// Trains until `cfg.steps` completed steps, calling `on_step` after each.
    pub fn run<S: ViewSource + ?Sized>(
        &mut self,
        source: &S,
        scenes: &[usize],
        mut on_step: impl FnMut(&StepLog, &Trainer) -> Result<()>,
    ) -> Result<Vec<StepLog>> {
        let mut logs = Vec::new();
        while self.step < self.cfg.steps {
            let log = self.train_step(source, scenes)?;
            on_step(&log, self)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("step_{step:06}.ckpt"))
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LOSS_CSV: &str = "loss.csv";

/// Summary of a run written to disk.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub logs: Vec<StepLog>,
    pub final_checkpoint: PathBuf,
    pub loss_csv: PathBuf,
}

/// Trains into `out`: `loss.csv`, `config.toml`, periodic checkpoints under
/// `checkpoints/`, and `final.ckpt`. When resuming, loss rows after the
/// checkpoint step are discarded before appending.
pub fn train_to_dir<S: ViewSource + ?Sized>(source: &S, scenes: &[usize], mut trainer: Trainer, out: &Path) -> Result<TrainRun> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, trainer.config().to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
    let csv_path = out.join(LOSS_CSV);
    let mut kept = vec![LOSS_CSV_HEADER.to_string()];
    if trainer.step() > 0 {
        if let Ok(text) = std::fs::read_to_string(&csv_path) {
            for line in text.lines().skip(1) {
                match line.split(',').next().and_then(|s| s.parse::<usize>().ok()) {
                    Some(s) if s <= trainer.step() => kept.push(line.to_string()),
                    _ => {}
                }
            }
        }
    }
    let mut csv = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    writeln!(csv, "{}", kept.join("\n")).map_err(|e| Error::io(&csv_path, e))?;
    let every = trainer.config().checkpoint_every;
    let logs = trainer.run(source, scenes, |log, tr| {
        writeln!(csv, "{}", log.csv_line()).map_err(|e| Error::io(&csv_path, e))?;
        if log.step % 50 == 0 || log.step == 1 {
            log::info!(
                "step {} l_pbr {:.5} l_cons {:.5} l_total {:.5} lr {:.2e}",
                log.step,
                log.loss.l_pbr,
                log.loss.l_cons,
                log.loss.l_total,
                log.lr
            );
        }
        if every > 0 && log.step % every == 0 {
            save_checkpoint(&checkpoint_path(out, log.step), &tr.checkpoint()?)?;
        }
        Ok(())
    })?;
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_checkpoint, &trainer.checkpoint()?)?;
    Ok(TrainRun { logs, final_checkpoint, loss_csv: csv_path })
}
