use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AdamHyper, AdamState, Gradients, Graph, ParameterSet, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise_ratio: f64,
}

fn default_noise() -> f64 {
    0.6
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, batch_size: 8, epochs: 10, grad_clip_norm: Some(1.0), seed: 42, noise_ratio: 0.6 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.noise_ratio) {
            return Err(Error::Config(format!("noise_ratio must be in [0, 1), got {}", self.noise_ratio)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip_norm must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// RNG for one example in one epoch; independent of batch layout and
/// thread scheduling.
pub fn example_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean example loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Mini-batch Adam training. Per-example gradients run in parallel and are
/// summed in example order, so results do not depend on the thread count.
pub fn train_loop<E, F>(
    params: &mut ParameterSet,
    examples: &[E],
    cfg: &TrainConfig,
    loss_fn: F,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport>
where
    E: Sync,
    F: Fn(&ParameterSet, &E, &mut ChaCha8Rng, &mut Graph) -> Result<Var> + Sync,
{
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Invalid("no training examples".into()));
    }
    let mut hyper = AdamHyper::new(cfg.learning_rate);
    hyper.clip_norm = cfg.grad_clip_norm;
    let mut state = AdamState::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0000_0000_0000);
        shuffle_rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let snapshot = &*params;
            let results: Vec<Result<(f64, Gradients)>> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = example_rng(cfg.seed, epoch, i);
                    let mut g = Graph::new();
                    let loss = loss_fn(snapshot, &examples[i], &mut rng, &mut g)?;
                    let value = g.value(loss).data()[0];
                    Ok((value, g.backward(loss)?))
                })
                .collect();
            let mut sum = Gradients::default();
            for r in results {
                let (l, grads) = r?;
                total += l;
                sum.accumulate(&grads);
            }
            sum.scale(1.0 / batch.len() as f64);
            state.step(params, &sum, &hyper)?;
        }
        let mean = total / examples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Invalid(format!("training loss diverged at epoch {epoch}")));
        }
        on_epoch(epoch, mean);
        report.epoch_losses.push(mean);
    }
    report.steps = state.step;
    Ok(report)
}
