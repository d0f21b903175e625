//! The training loop: sample a batch, run the objective, step Adam.
//!
//! Every random draw of iteration `t` comes from streams keyed by `t`, so a
//! run resumed from a checkpoint at `t` continues exactly as if it had never
//! stopped.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::FactorDataset;
use crate::error::{Error, Result};
use crate::model::{LossBreakdown, Model};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::RngStreams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub adam: AdamConfig,
    /// Pressures ramp linearly from 0 to their configured values over this
    /// many iterations; 0 trains on the plain objective from the start.
    pub kl_warmup: u64,
}

impl TrainConfig {
    /// Multiplier applied to every pressure at 0-based iteration `t`.
    pub fn kl_scale(&self, t: u64) -> f64 {
        if t >= self.kl_warmup {
            1.0
        } else {
            t as f64 / self.kl_warmup as f64
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch: 64, adam: AdamConfig::default(), kl_warmup: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based index of the completed iteration.
    pub iteration: u64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model,
    adam: AdamState,
    cfg: TrainConfig,
    streams: RngStreams,
    iteration: u64,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig, seed: u64) -> Result<Self> {
        let adam = AdamState::new(model.params());
        Self::resume(model, adam, cfg, seed)
    }

    /// Continue from a saved model and optimizer state; the iteration count is `adam.step`.
    pub fn resume(model: Model, adam: AdamState, cfg: TrainConfig, seed: u64) -> Result<Self> {
        if cfg.batch == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(cfg.adam.lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        let shapes_match = adam.m.len() == model.params().len()
            && adam
                .m
                .iter()
                .zip(&adam.v)
                .zip(model.params())
                .all(|((m, v), p)| m.shape() == p.shape() && v.shape() == p.shape());
        if !shapes_match {
            return Err(Error::data("optimizer state does not match the model"));
        }
        let iteration = adam.step;
        Ok(Trainer { model, adam, cfg, streams: RngStreams::new(seed), iteration })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn into_parts(self) -> (Model, AdamState) {
        (self.model, self.adam)
    }

    /// Batch rows of iteration `t`, drawn uniformly with replacement.
    pub fn batch_rows(&self, t: u64, len: usize) -> Vec<usize> {
        let mut rng = self.streams.stream("data", t);
        (0..self.cfg.batch).map(|_| rng.random_range(0..len)).collect()
    }

    /// Run one iteration.
    pub fn step(&mut self, dataset: &FactorDataset) -> Result<StepRecord> {
        if dataset.is_empty() {
            return Err(Error::data("empty dataset"));
        }
        let t = self.iteration;
        let it = t + 1;
        let rows = self.batch_rows(t, dataset.len());
        let x = dataset.batch(&rows);
        let noise = self.model.draw_noise(self.cfg.batch, &mut self.streams.stream("noise", t));
        let taped = self.model.forward_loss_scaled(&x, &noise, self.cfg.kl_scale(t)).map_err(|e| e.at_iteration(it))?;
        let grads = taped.param_grads().map_err(|e| e.at_iteration(it))?;
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::numerical(format!("gradient of {}", self.model.param_names()[i])).at_iteration(it));
        }
        adam_step(self.model.params_mut(), &grads, &mut self.adam, &self.cfg.adam)?;
        if let Some(i) = self.model.params().iter().position(|p| !p.is_finite()) {
            return Err(Error::numerical(format!("parameter {}", self.model.param_names()[i])).at_iteration(it));
        }
        self.iteration = it;
        Ok(StepRecord { iteration: it, loss: taped.breakdown })
    }

    /// Loss of the current model on iteration `t`'s batch and noise, without updating.
    pub fn probe(&self, dataset: &FactorDataset, t: u64) -> Result<LossBreakdown> {
        let rows = self.batch_rows(t, dataset.len());
        let noise: Vec<Tensor> = self.model.draw_noise(self.cfg.batch, &mut self.streams.stream("noise", t));
        Ok(self.model.forward_loss_scaled(&dataset.batch(&rows), &noise, self.cfg.kl_scale(t))?.breakdown)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{desk_specs, generate_dataset};
    use crate::latent::HierarchyConfig;
    use crate::model::{ArchitectureConfig, ModelConfig, ModelVariant};

    fn trainer(seed: u64) -> (Trainer, FactorDataset) {
        let ds = generate_dataset(&desk_specs(), 16, 0).unwrap();
        let cfg = ModelConfig::new(
            ModelVariant::DeVAE,
            ArchitectureConfig::mlp(16, alloc::vec![16]),
            HierarchyConfig::new(alloc::vec![1.0, 40.0]).unwrap(),
        )
        .unwrap();
        let model = Model::new(cfg, &mut RngStreams::new(seed).stream("init", 0)).unwrap();
        let tc = TrainConfig { batch: 8, adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() }, kl_warmup: 4 };
        (Trainer::new(model, tc, seed).unwrap(), ds)
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let (mut a, ds) = trainer(3);
        let mut trace_a = Vec::new();
        for _ in 0..6 {
            trace_a.push(a.step(&ds).unwrap().loss.total);
        }
        let (mut b, _) = trainer(3);
        let mut trace_b = Vec::new();
        for _ in 0..3 {
            trace_b.push(b.step(&ds).unwrap().loss.total);
        }
        let (model, adam) = b.into_parts();
        let mut c = Trainer::resume(model, adam, a.cfg, 3).unwrap();
        assert_eq!(c.iteration(), 3);
        for _ in 0..3 {
            trace_b.push(c.step(&ds).unwrap().loss.total);
        }
        assert_eq!(
            trace_a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            trace_b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rejects_zero_batch() {
        let (t, _) = trainer(1);
        let (m, a) = t.into_parts();
        let cfg = TrainConfig { batch: 0, ..TrainConfig::default() };
        assert!(matches!(Trainer::resume(m, a, cfg, 1), Err(Error::Config(_))));
    }
}
