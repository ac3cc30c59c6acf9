use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, LearnError, Mlp, OptimizerKind, OptimizerState, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, batch_size: 32, learning_rate: 1e-3, seed: 0, optimizer: OptimizerKind::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        if self.batch_size == 0 {
            return Err(LearnError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(LearnError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// A batch objective over a group of networks trained jointly. Returns the
/// batch loss and one gradient set per network.
pub trait Objective<F> {
    fn batch_loss(
        &mut self,
        models: &[Mlp<F>],
        batch: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<Gradients<F>>), LearnError>;
}

impl<F, T> Objective<F> for T
where
    T: FnMut(&[Mlp<F>], &[usize], &mut ChaCha8Rng) -> Result<(f64, Vec<Gradients<F>>), LearnError>,
{
    fn batch_loss(
        &mut self,
        models: &[Mlp<F>],
        batch: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<Gradients<F>>), LearnError> {
        self(models, batch, rng)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub models: Vec<Mlp<F>>,
    /// Mean loss per epoch.
    pub trace: Vec<f64>,
}

/// Mini-batch training over sample indices `0..n_samples`. The inputs are left
/// untouched; the trained copies are returned. Shuffling and any sampling
/// inside the objective draw from one RNG seeded by `cfg.seed`.
pub fn train<F: Real, O: Objective<F> + ?Sized>(
    models: &[Mlp<F>],
    n_samples: usize,
    cfg: &TrainConfig,
    objective: &mut O,
) -> Result<TrainOutcome<F>, LearnError> {
    cfg.validate()?;
    let mut models = models.to_vec();
    let mut trace = Vec::with_capacity(cfg.epochs);
    if n_samples == 0 || cfg.epochs == 0 {
        return Ok(TrainOutcome { models, trace });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(cfg.optimizer, &models);
    let mut order: Vec<usize> = (0..n_samples).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = objective.batch_loss(&models, batch, &mut rng)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(LearnError::Divergence { epoch, value: loss });
            }
            total += loss * batch.len() as f64;
            opt.apply(&mut models, &grads, cfg.learning_rate);
        }
        let mean = total / n_samples as f64;
        if !mean.is_finite() || models.iter().any(|m| !m.is_finite()) {
            return Err(LearnError::Divergence { epoch, value: mean });
        }
        trace.push(mean);
    }
    Ok(TrainOutcome { models, trace })
}
