//! The training loop.

use std::fmt::Write as _;

use log::{error, info};
use rayon::prelude::*;

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::RunConfig;
use super::optim::{global_norm, learning_rate, Momentum};
use crate::data::{curriculum_iter, BatchOptions, LoadedSample, TrainingSample};
use crate::error::{Error, Result};
use crate::head::LossBreakdown;
use crate::model::Detector;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub learning_rate: f64,
    /// Batch means.
    pub loss: LossBreakdown,
    pub grad_norm: f64,
}

pub struct Trainer {
    pub config: RunConfig,
    pub model: Detector,
    pub optimizer: Momentum,
    /// Iterations completed.
    pub iteration: usize,
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let model = Detector::new(&config.model, config.seed)?;
        let optimizer = Momentum::new(&model.store, config.optimizer.momentum);
        Ok(Self {
            config: config.clone(),
            model,
            optimizer,
            iteration: 0,
        })
    }

    pub fn resume(config: &RunConfig, ckpt: Checkpoint) -> Result<Self> {
        if ckpt.model.config != config.model {
            return Err(Error::Checkpoint("checkpoint model differs from the run config".into()));
        }
        let mut optimizer = Momentum::new(&ckpt.model.store, config.optimizer.momentum);
        if !ckpt.velocity.is_empty() {
            optimizer.velocity = ckpt.velocity;
        }
        Ok(Self {
            config: config.clone(),
            model: ckpt.model,
            optimizer,
            iteration: ckpt.iteration,
        })
    }

    pub fn batch_options(&self) -> BatchOptions {
        BatchOptions {
            batch_size: self.config.batch_size,
            seed: self.config.data_seed,
            stride: self.config.model.output_stride(),
            shrink: self.config.shrink,
        }
    }

    pub fn current_lr(&self) -> f64 {
        let o = &self.config.optimizer;
        learning_rate(o.learning_rate, self.iteration, o.decay_steps, o.decay_factor)
    }

    /// One optimisation step on the curriculum batch for the current iteration.
    pub fn step(&mut self, corpus: &[LoadedSample]) -> Result<IterationLog> {
        let batch = curriculum_iter(&self.config.curriculum, corpus, self.iteration, &self.batch_options())?;
        let model = &self.model;
        let cfg = &self.config;
        let results: Vec<Result<(LossBreakdown, Vec<Tensor>)>> = batch
            .par_iter()
            .map(|s| model.loss_and_gradients(&s.image, &s.targets, &cfg.loss, cfg.score_loss))
            .collect();
        let lr = self.current_lr();
        let n = batch.len() as f64;
        let mut mean = LossBreakdown::default();
        let mut grads: Option<Vec<Tensor>> = None;
        let mut parts = Vec::with_capacity(batch.len());
        let mut failure = None;
        for r in results {
            match r {
                Ok((l, g)) => {
                    parts.push(Some(l));
                    mean.score += l.score / n;
                    mean.rbox += l.rbox / n;
                    mean.quad += l.quad / n;
                    mean.total += l.total / n;
                    match grads.as_mut() {
                        None => grads = Some(g),
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
                    }
                }
                Err(e @ (Error::Numerical(_) | Error::NonFinite(_))) => {
                    parts.push(None);
                    failure.get_or_insert(e);
                }
                Err(e) => return Err(e),
            }
        }
        let mut grads = grads.unwrap_or_default();
        grads.iter_mut().for_each(|g| g.scale_assign(1.0 / n));
        let norm = global_norm(&grads);
        if failure.is_none() && !norm.is_finite() {
            failure = Some(Error::Numerical(format!("non-finite gradient norm {norm}")));
        }
        if let Some(e) = failure {
            self.dump(corpus, &batch, &parts, lr, &e);
            return Err(e);
        }
        let clip = cfg.optimizer.grad_clip;
        if clip > 0.0 && norm > clip {
            grads.iter_mut().for_each(|g| g.scale_assign(clip / norm));
        }
        self.optimizer.step(&mut self.model.store, &grads, lr)?;
        let log = IterationLog {
            iteration: self.iteration,
            learning_rate: lr,
            loss: mean,
            grad_norm: norm,
        };
        self.iteration += 1;
        Ok(log)
    }

    fn dump(&self, corpus: &[LoadedSample], batch: &[TrainingSample], parts: &[Option<LossBreakdown>], lr: f64, e: &Error) {
        let mut text = format!("iteration {}\nlearning_rate {lr}\nerror {e}\n", self.iteration);
        for (s, p) in batch.iter().zip(parts) {
            let _ = writeln!(
                text,
                "sample {} image {} gt {} loss {:?}",
                s.index,
                corpus[s.index].record.image_path.display(),
                corpus[s.index].record.gt_path.display(),
                p
            );
        }
        let path = self.config.out_dir.join(format!("nan_dump_{}.txt", self.iteration));
        let written = std::fs::create_dir_all(&self.config.out_dir).and_then(|_| std::fs::write(&path, &text));
        match written {
            Ok(()) => error!("numerical failure at iteration {}; batch dumped to {}", self.iteration, path.display()),
            Err(_) => error!("numerical failure at iteration {}:\n{text}", self.iteration),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        save_checkpoint(path, &self.model, self.iteration, &self.optimizer.velocity)
    }
}

/// Run `config.iterations` steps, calling `on_log` after each; periodic
/// checkpoints go to `out_dir` when `checkpoint_every > 0`.
pub fn train(config: &RunConfig, corpus: &[LoadedSample], mut on_log: impl FnMut(&IterationLog)) -> Result<Trainer> {
    let mut trainer = Trainer::new(config)?;
    while trainer.iteration < config.iterations {
        let log = trainer.step(corpus)?;
        if config.log_every > 0 && log.iteration % config.log_every == 0 {
            info!(
                "iter {} lr {:.2e} loss {:.4} (score {:.4} rbox {:.4} quad {:.4}) |g| {:.3}",
                log.iteration, log.learning_rate, log.loss.total, log.loss.score, log.loss.rbox, log.loss.quad, log.grad_norm
            );
        }
        on_log(&log);
        if config.checkpoint_every > 0 && trainer.iteration % config.checkpoint_every == 0 {
            std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
            trainer.save(&config.out_dir.join(format!("ckpt_{:06}.bin", trainer.iteration)))?;
        }
    }
    Ok(trainer)
}
