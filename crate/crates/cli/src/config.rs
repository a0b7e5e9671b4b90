//! Run configuration: one flat TOML table, overridable by `--key value` flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::{Table, Value};

use dgp_core::data::{DatasetSpec, DegradeSpec};
use dgp_core::experiment::RunSpec;
use dgp_core::kernels::{KernelFamily, KernelSpec};
use dgp_core::train::TrainConfig;

/// Configuration problems. These exit with status 2.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("missing config key `{0}`")]
    Missing(String),
    #[error("unknown config key `{0}`")]
    Unknown(String),
    #[error("flag `{0}` needs a value")]
    NoValue(String),
    #[error("expected `--key value`, got `{0}`")]
    NotAFlag(String),
    #[error("cannot read config {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Keys every run config must define, in documentation order.
pub const REQUIRED_KEYS: [&str; 27] = [
    "lambda_p",
    "n_neighbors",
    "gp_depth",
    "kernel_inner",
    "kernel_beta",
    "kernel_gamma",
    "noise_var",
    "median_length_scale",
    "grad_through_kernel",
    "lr",
    "lr_halve_every",
    "epochs",
    "batch_size",
    "dgp",
    "gen_hidden",
    "disc_hidden",
    "train_per_domain",
    "test_pairs",
    "patch_size",
    "data_seed",
    "streak_count",
    "streak_amplitude",
    "streak_angle",
    "streak_width",
    "out_dir",
    "eval_every",
    "samples",
];

/// Keys that may be omitted.
pub const OPTIONAL_KEYS: [&str; 4] = ["seed", "sweep_depth", "sweep_neighbors", "sweep_lambda"];

/// Environment fallback for `seed`.
pub const SEED_ENV: &str = "DGP_SEED";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lambda_p: f64,
    pub n_neighbors: usize,
    pub gp_depth: usize,
    pub kernel_inner: KernelFamily,
    pub kernel_beta: f64,
    pub kernel_gamma: f64,
    pub noise_var: f64,
    pub median_length_scale: bool,
    pub grad_through_kernel: bool,
    pub lr: f64,
    pub lr_halve_every: u64,
    pub epochs: u64,
    pub batch_size: usize,
    pub dgp: bool,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub train_per_domain: usize,
    pub test_pairs: usize,
    pub patch_size: usize,
    pub data_seed: u64,
    pub streak_count: usize,
    pub streak_amplitude: f64,
    pub streak_angle: f64,
    pub streak_width: f64,
    pub out_dir: PathBuf,
    pub eval_every: u64,
    pub samples: usize,
    pub seed: u64,
    #[serde(default = "default_depths")]
    pub sweep_depth: Vec<f64>,
    #[serde(default = "default_neighbors")]
    pub sweep_neighbors: Vec<f64>,
    #[serde(default = "default_lambdas")]
    pub sweep_lambda: Vec<f64>,
}

fn default_depths() -> Vec<f64> {
    vec![1.0, 2.0, 3.0, 4.0]
}

fn default_neighbors() -> Vec<f64> {
    vec![16.0, 32.0, 64.0]
}

fn default_lambdas() -> Vec<f64> {
    vec![0.3, 0.03, 0.003]
}

/// Splits `--key value` pairs. `--dgp` accepts `on`/`off`.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, Value)>, ConfigError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .filter(|k| !k.is_empty())
            .ok_or_else(|| ConfigError::NotAFlag(flag.clone()))?
            .replace('-', "_");
        let raw = it
            .next()
            .ok_or_else(|| ConfigError::NoValue(flag.clone()))?;
        out.push((key, parse_value(raw)));
    }
    Ok(out)
}

fn parse_value(raw: &str) -> Value {
    match raw {
        "on" => return Value::Boolean(true),
        "off" => return Value::Boolean(false),
        _ => {}
    }
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Loads `path`, applies overrides (flags win), fills `seed` from the
/// environment when absent, and checks the key set.
pub fn load(
    path: &Path,
    overrides: &[(String, Value)],
    env_seed: Option<String>,
) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Read {
            path: path.to_path_buf(),
            reason: e.message().to_string(),
        })?;
    resolve(table, overrides, env_seed)
}

pub fn resolve(
    mut table: Table,
    overrides: &[(String, Value)],
    env_seed: Option<String>,
) -> Result<RunConfig, ConfigError> {
    for (k, v) in overrides {
        table.insert(k.clone(), v.clone());
    }
    if let Some(k) = table
        .keys()
        .find(|k| !REQUIRED_KEYS.contains(&k.as_str()) && !OPTIONAL_KEYS.contains(&k.as_str()))
    {
        return Err(ConfigError::Unknown(k.clone()));
    }
    if let Some(k) = REQUIRED_KEYS.iter().find(|k| !table.contains_key(**k)) {
        return Err(ConfigError::Missing(k.to_string()));
    }
    if !table.contains_key("seed") {
        let raw = env_seed.ok_or_else(|| ConfigError::Missing("seed".into()))?;
        let seed: i64 = raw
            .trim()
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("{SEED_ENV}=`{raw}` is not an integer")))?;
        table.insert("seed".into(), Value::Integer(seed));
    }
    let config: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))?;
    config.run_spec()?;
    Ok(config)
}

impl RunConfig {
    pub fn run_spec(&self) -> Result<RunSpec, ConfigError> {
        let train = TrainConfig {
            lambda_p: self.lambda_p,
            n_neighbors: self.n_neighbors,
            lr: self.lr,
            lr_halve_every: self.lr_halve_every,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            kernel: KernelSpec::composed(self.kernel_inner, self.gp_depth, 1.0, self.noise_var)
                .with_scales(self.kernel_beta, self.kernel_gamma),
            dgp_enabled: self.dgp,
            grad_through_kernel: self.grad_through_kernel,
            median_length_scale: self.median_length_scale,
            gen_hidden: self.gen_hidden.clone(),
            disc_hidden: self.disc_hidden.clone(),
            residual: true,
        };
        train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.eval_every == 0 {
            return Err(ConfigError::Invalid("eval_every must be positive".into()));
        }
        let data = DatasetSpec {
            train_per_domain: self.train_per_domain,
            test_pairs: self.test_pairs,
            width: self.patch_size,
            height: self.patch_size,
            seed: self.data_seed,
            degrade: DegradeSpec {
                streak_count: self.streak_count,
                streak_amplitude: self.streak_amplitude,
                streak_angle: self.streak_angle,
                streak_width: self.streak_width,
                seed: 0,
            },
        };
        if data.train_per_domain == 0 || data.test_pairs == 0 {
            return Err(ConfigError::Invalid(
                "train_per_domain and test_pairs must be positive".into(),
            ));
        }
        Ok(RunSpec { train, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> Table {
        include_str!("../../../configs/desk.toml").parse().unwrap()
    }

    #[test]
    fn sample_config_parses() {
        let c = resolve(sample(), &[], None).unwrap();
        let spec = c.run_spec().unwrap();
        assert_eq!(spec.train.kernel.depth(), 4);
        assert_eq!(spec.train.lambda_p, 0.03);
        assert_eq!(spec.data.width, 32);
    }

    #[test]
    fn flags_override_and_dgp_switch() {
        let args: Vec<String> = [
            "--seed",
            "7",
            "--dgp",
            "off",
            "--lr",
            "0.001",
            "--sweep-lambda",
            "[0.1]",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let c = resolve(sample(), &parse_overrides(&args).unwrap(), None).unwrap();
        assert_eq!(c.seed, 7);
        assert!(!c.dgp);
        assert_eq!(c.lr, 0.001);
        assert_eq!(c.sweep_lambda, vec![0.1]);
        assert_eq!(c.run_spec().unwrap().train.effective_lambda(), 0.0);
    }

    #[test]
    fn missing_and_unknown_keys() {
        let mut t = sample();
        t.remove("lr");
        assert!(matches!(resolve(t, &[], None), Err(ConfigError::Missing(k)) if k == "lr"));
        let mut t = sample();
        t.insert("colour".into(), Value::Integer(1));
        assert!(matches!(resolve(t, &[], None), Err(ConfigError::Unknown(k)) if k == "colour"));
    }

    #[test]
    fn seed_falls_back_to_environment() {
        let mut t = sample();
        t.remove("seed");
        assert!(
            matches!(resolve(t.clone(), &[], None), Err(ConfigError::Missing(k)) if k == "seed")
        );
        assert_eq!(resolve(t.clone(), &[], Some("12".into())).unwrap().seed, 12);
        assert!(resolve(t, &[], Some("x".into())).is_err());
    }

    #[test]
    fn malformed_flags() {
        let one = vec!["--seed".to_string()];
        assert!(matches!(
            parse_overrides(&one),
            Err(ConfigError::NoValue(_))
        ));
        let bare = vec!["seed".to_string(), "1".to_string()];
        assert!(matches!(
            parse_overrides(&bare),
            Err(ConfigError::NotAFlag(_))
        ));
    }
}
