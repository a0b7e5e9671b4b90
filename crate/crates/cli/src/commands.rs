use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};

use dgp_core::data::{Domain, Patch, UnpairedDataset};
use dgp_core::experiment::{run_training, sweep, write_summary, Axis};
use dgp_core::nets::checkpoint::Checkpoint;
use dgp_core::pgm::{read_manifest, read_pgm, write_pgm};
use dgp_core::train::{evaluate, METRICS_HEADER};
use dgp_core::verify::{self, Faults};

use crate::config::{self, ConfigError, RunConfig, SEED_ENV};

/// Test hook: `pseudo-grad-sign` flips the analytic pseudo-loss gradient.
const FAULT_ENV: &str = "DGP_VERIFY_FAULT";

fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let pairs = config::parse_overrides(overrides)?;
    Ok(config::load(path, &pairs, std::env::var(SEED_ENV).ok())?)
}

pub fn verify(suites: &[String]) -> Result<ExitCode> {
    let faults = Faults {
        flip_pseudo_grad_sign: std::env::var(FAULT_ENV).is_ok_and(|v| v == "pseudo-grad-sign"),
    };
    let names: Vec<&str> = suites.iter().map(String::as_str).collect();
    let reports = verify::run(&names, faults).map_err(|bad| {
        ConfigError::Invalid(format!(
            "unknown suite `{bad}`; expected one of {:?}",
            verify::SUITES
        ))
    })?;
    let mut failed = Vec::new();
    for r in &reports {
        print!("{r}");
        if !r.passed() {
            failed.push(r.suite);
        }
    }
    if failed.is_empty() {
        println!("all {} suites passed", reports.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("failed suites: {}", failed.join(", "));
        Ok(ExitCode::FAILURE)
    }
}

/// Input, restoration and target side by side.
fn triptych(input: &Patch, restored: &Patch, target: &Patch) -> Patch {
    let (w, h) = (input.width, input.height);
    let mut pixels = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        for p in [input, restored, target] {
            pixels.extend_from_slice(&p.pixels[y * w..(y + 1) * w]);
        }
    }
    Patch::from_clamped(3 * w, h, &pixels, Domain::Clean)
}

pub fn train(config_path: &Path, overrides: &[String]) -> Result<ExitCode> {
    let cfg = load_config(config_path, overrides)?;
    let spec = cfg.run_spec()?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let test = UnpairedDataset::generate(&spec.data)?;
    let mut csv = fs::File::create(out.join("metrics.csv"))?;
    writeln!(csv, "{METRICS_HEADER}")?;
    let last_epoch = spec.train.epochs - 1;
    let run = run_training(&spec, |trainer, record| {
        writeln!(csv, "{}", record.csv_row())?;
        println!(
            "epoch {:>3}  total {:.4}  psnr {:.3}  ssim {:.4}",
            record.epoch, record.losses.total, record.psnr, record.ssim
        );
        if (record.epoch + 1) % cfg.eval_every == 0 || record.epoch == last_epoch {
            trainer
                .model
                .to_checkpoint()
                .save(&out.join(format!("ckpt_{}.bin", record.epoch)))?;
            for (i, (w, c)) in test
                .test_weather
                .iter()
                .zip(&test.test_clean)
                .take(cfg.samples)
                .enumerate()
            {
                let y = trainer.model.fwd.forward(&w.pixels)?.y;
                let restored = Patch::from_clamped(w.width, w.height, &y, Domain::Clean);
                write_pgm(
                    &out.join(format!("sample_{}_{i}.pgm", record.epoch)),
                    &triptych(w, &restored, c),
                )?;
            }
        }
        Ok(())
    })?;
    let last = run.last();
    println!("final psnr {:.3} ssim {:.4}", last.psnr, last.ssim);
    Ok(ExitCode::SUCCESS)
}

pub fn eval(
    config_path: &Path,
    ckpt: &Path,
    manifest: Option<&Path>,
    overrides: &[String],
) -> Result<ExitCode> {
    let cfg = load_config(config_path, overrides)?;
    let checkpoint = Checkpoint::load(ckpt)?;
    let fwd = checkpoint
        .generator(0)
        .with_context(|| format!("{} holds no generator", ckpt.display()))?;
    let (weather, clean) = match manifest {
        Some(m) => {
            let entries = read_manifest(m)?;
            let load = |d: Domain| -> Result<Vec<Patch>> {
                entries
                    .iter()
                    .filter(|e| e.domain == d)
                    .map(|e| Ok(read_pgm(&e.path, d)?))
                    .collect()
            };
            (load(Domain::Weather)?, load(Domain::Clean)?)
        }
        None => {
            let data = UnpairedDataset::generate(&cfg.run_spec()?.data)?;
            (data.test_weather, data.test_clean)
        }
    };
    anyhow::ensure!(
        !weather.is_empty() && weather.len() == clean.len(),
        "need equally many weather and clean images, got {} and {}",
        weather.len(),
        clean.len()
    );
    let (psnr, ssim) = evaluate(fwd, &weather, &clean)?;
    println!("pairs {} psnr {psnr:.4} ssim {ssim:.4}", weather.len());
    Ok(ExitCode::SUCCESS)
}

pub fn ablate(config_path: &Path, axis: &str, overrides: &[String]) -> Result<ExitCode> {
    let cfg = load_config(config_path, overrides)?;
    let spec = cfg.run_spec()?;
    let axes = if axis == "all" {
        Axis::ALL.to_vec()
    } else {
        vec![axis
            .parse::<Axis>()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?]
    };
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    for axis in axes {
        let values = match axis {
            Axis::Depth => &cfg.sweep_depth,
            Axis::Neighbors => &cfg.sweep_neighbors,
            Axis::Lambda => &cfg.sweep_lambda,
        };
        let rows = sweep(&spec, axis, values)?;
        for r in &rows {
            println!(
                "{axis:<9} {:<8} psnr {:.3} ssim {:.4}",
                r.value, r.psnr, r.ssim
            );
        }
        write_summary(&cfg.out_dir, axis, &rows)?;
    }
    Ok(ExitCode::SUCCESS)
}
