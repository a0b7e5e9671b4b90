//! Complete training runs and one-axis hyperparameter sweeps.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::data::{DatasetSpec, UnpairedDataset};
use crate::error::{Error, Result};
use crate::train::{EpochRecord, TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub train: TrainConfig,
    pub data: DatasetSpec,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<EpochRecord>,
}

impl RunResult {
    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("at least one epoch")
    }

    /// Mean of the per-epoch posterior variance over `range` of epochs.
    pub fn mean_variance(&self, range: std::ops::Range<usize>) -> Option<f64> {
        let v: Vec<f64> = self
            .records
            .get(range)?
            .iter()
            .map(|r| r.mean_variance)
            .collect::<Option<_>>()?;
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Trains for `spec.train.epochs` epochs, calling `on_epoch` after each.
pub fn run_training(
    spec: &RunSpec,
    mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
) -> Result<RunResult> {
    let data = UnpairedDataset::generate(&spec.data)?;
    let mut trainer = Trainer::new(spec.train.clone(), spec.data.width * spec.data.height)?;
    let mut records = Vec::with_capacity(spec.train.epochs as usize);
    for _ in 0..spec.train.epochs {
        let record = trainer.run_epoch(&data)?;
        if !record.losses.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "non-finite loss at epoch {}",
                record.epoch
            )));
        }
        on_epoch(&trainer, &record)?;
        records.push(record);
    }
    Ok(RunResult { records })
}

/// A swept hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Number of kernel layers.
    Depth,
    /// Nearest neighbors per GP query.
    Neighbors,
    /// Pseudo-loss weight.
    Lambda,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Depth, Axis::Neighbors, Axis::Lambda];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Depth => "depth",
            Axis::Neighbors => "neighbors",
            Axis::Lambda => "lambda",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            Axis::Depth => vec![1.0, 2.0, 3.0, 4.0],
            Axis::Neighbors => vec![16.0, 32.0, 64.0],
            Axis::Lambda => vec![0.3, 0.03, 0.003],
        }
    }

    /// Copy of `config` with this axis set to `value`.
    pub fn apply(self, config: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut c = config.clone();
        let count = || {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::InvalidConfig(format!(
                    "{} must be a positive integer, got {value}",
                    self.name()
                )))
            }
        };
        match self {
            Axis::Depth => {
                let depth = count()?;
                let last = *c
                    .kernel
                    .layers
                    .last()
                    .ok_or_else(|| Error::InvalidKernel("empty kernel".into()))?;
                c.kernel.layers.resize(depth, last);
            }
            Axis::Neighbors => c.n_neighbors = count()?,
            Axis::Lambda => c.lambda_p = value,
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown sweep axis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub mean_sigma2: Option<f64>,
}

pub const SUMMARY_HEADER: &str = "axis,value,psnr,ssim,mean_sigma2";

impl SweepRow {
    pub fn from_run(axis: Axis, value: f64, run: &RunResult) -> Self {
        let last = run.last();
        SweepRow {
            axis,
            value,
            psnr: last.psnr,
            ssim: last.ssim,
            mean_sigma2: last.mean_variance,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.axis,
            self.value,
            self.psnr,
            self.ssim,
            self.mean_sigma2.map(|v| v.to_string()).unwrap_or_default()
        )
    }
}

/// One full run per value, in order.
pub fn sweep(base: &RunSpec, axis: Axis, values: &[f64]) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&v| {
            let spec = RunSpec {
                train: axis.apply(&base.train, v)?,
                data: base.data.clone(),
            };
            let run = run_training(&spec, |_, _| Ok(()))?;
            Ok(SweepRow::from_run(axis, v, &run))
        })
        .collect()
}

/// Writes `summary_<axis>.csv` into `dir`.
pub fn write_summary(dir: &Path, axis: Axis, rows: &[SweepRow]) -> Result<()> {
    let mut f = std::fs::File::create(dir.join(format!("summary_{axis}.csv")))?;
    writeln!(f, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(f, "{}", r.csv_row())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_application() {
        let c = TrainConfig::default();
        assert_eq!(Axis::Depth.apply(&c, 2.0).unwrap().kernel.depth(), 2);
        assert_eq!(Axis::Depth.apply(&c, 6.0).unwrap().kernel.depth(), 6);
        assert_eq!(Axis::Neighbors.apply(&c, 16.0).unwrap().n_neighbors, 16);
        assert_eq!(Axis::Lambda.apply(&c, 0.3).unwrap().lambda_p, 0.3);
        assert!(Axis::Neighbors.apply(&c, 1.5).is_err());
        assert!(Axis::Lambda.apply(&c, -1.0).is_err());
        assert_eq!("neighbors".parse::<Axis>().unwrap(), Axis::Neighbors);
        assert!("width".parse::<Axis>().is_err());
    }

    #[test]
    fn tiny_sweep_rows() {
        let base = RunSpec {
            train: TrainConfig {
                epochs: 1,
                gen_hidden: vec![8, 6, 4, 8],
                disc_hidden: vec![4],
                ..TrainConfig::default()
            },
            data: DatasetSpec {
                train_per_domain: 6,
                test_pairs: 2,
                width: 12,
                height: 12,
                ..DatasetSpec::default()
            },
        };
        let rows = sweep(&base, Axis::Lambda, &[0.3, 0.0]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].value, 0.3);
        assert!(rows[1].psnr.is_finite());
        let dir = tempfile::tempdir().unwrap();
        write_summary(dir.path(), Axis::Lambda, &rows).unwrap();
        let text = std::fs::read_to_string(dir.path().join("summary_lambda.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with(SUMMARY_HEADER));
    }
}
