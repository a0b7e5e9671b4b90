//! CycleGAN training with GP pseudo-label supervision.

mod losses;
mod trainer;

pub use losses::{adversarial_losses, identity_loss, l1, l1_grad, lsgan_terms, LossBreakdown};
pub use trainer::{
    build_epoch_banks, evaluate, CycleGan, EpochRecord, GpStats, Trainer, METRICS_HEADER,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the pseudo-label losses in the total objective.
    pub lambda_p: f64,
    /// Nearest neighbors used to condition each GP query.
    pub n_neighbors: usize,
    pub lr: f64,
    pub lr_halve_every: u64,
    pub epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub dgp_enabled: bool,
    /// Also backpropagate the pseudo loss into `s̃` through the kernel.
    pub grad_through_kernel: bool,
    /// Set the first kernel layer's length scale each epoch to the median
    /// pairwise `s` distance of the bank being queried.
    pub median_length_scale: bool,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub residual: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_p: 0.03,
            n_neighbors: 32,
            lr: 2e-4,
            lr_halve_every: 30,
            epochs: 30,
            batch_size: 2,
            seed: 0,
            kernel: KernelSpec::default(),
            dgp_enabled: true,
            grad_through_kernel: false,
            median_length_scale: true,
            gen_hidden: vec![128, 64, 32, 128],
            disc_hidden: vec![64],
            residual: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lambda_p >= 0.0 && self.lambda_p.is_finite()) {
            return bad("lambda_p must be non-negative");
        }
        if self.n_neighbors == 0 {
            return bad("n_neighbors must be at least 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be non-negative");
        }
        if self.lr_halve_every == 0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("lr_halve_every, epochs and batch_size must be positive");
        }
        if self.gen_hidden.len() != 4 {
            return bad("gen_hidden must list exactly four stage widths");
        }
        Ok(())
    }

    /// Effective pseudo-loss weight: zero whenever the GP path is disabled.
    pub fn effective_lambda(&self) -> f64 {
        if self.dgp_enabled {
            self.lambda_p
        } else {
            0.0
        }
    }
}

/// Step schedule: halves the base rate every `lr_halve_every` epochs.
pub fn lr_at(epoch: u64, config: &TrainConfig) -> f64 {
    config.lr * 0.5f64.powi((epoch / config.lr_halve_every) as i32)
}
