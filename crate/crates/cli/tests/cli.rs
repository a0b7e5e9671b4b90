use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SAMPLE: &str = include_str!("../../../configs/desk.toml");

fn dgp() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dgp"));
    c.env_remove("DGP_SEED").env_remove("DGP_VERIFY_FAULT");
    c
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes the sample config, minus `drop` keys, into `dir`.
fn write_config(dir: &Path, drop: &[&str]) -> PathBuf {
    let text: String = SAMPLE
        .lines()
        .filter(|l| !drop.iter().any(|k| l.starts_with(&format!("{k} "))))
        .map(|l| format!("{l}\n"))
        .collect();
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn tiny(out: &Path) -> Vec<String> {
    [
        "--epochs",
        "2",
        "--train-per-domain",
        "6",
        "--test-pairs",
        "2",
        "--patch-size",
        "12",
        "--gen-hidden",
        "[8, 6, 4, 8]",
        "--disc-hidden",
        "[4]",
        "--n-neighbors",
        "4",
        "--eval-every",
        "1",
        "--samples",
        "1",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain(["--out-dir".to_string(), out.display().to_string()])
    .collect()
}

fn train(config: &Path, out: &Path, extra: &[&str], env_seed: Option<&str>) -> Output {
    let mut c = dgp();
    c.arg("train")
        .arg("--config")
        .arg(config)
        .args(tiny(out))
        .args(extra);
    if let Some(s) = env_seed {
        c.env("DGP_SEED", s);
    }
    c.output().unwrap()
}

#[test]
fn verify_passes_all_suites() {
    let o = dgp().arg("verify").output().unwrap();
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("all 5 suites passed"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn verify_runs_only_the_requested_suite() {
    let o = dgp().args(["verify", "--suite", "gp"]).output().unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("all 1 suites passed"));
    assert!(text.contains("joint Gaussian"));
    assert!(!text.contains("pseudo-loss gradient"));
}

#[test]
fn injected_gradient_fault_is_reported() {
    let o = dgp()
        .args(["verify", "--suite", "grad"])
        .env("DGP_VERIFY_FAULT", "pseudo-grad-sign")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("failed suites: grad"));
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let o = dgp().args(["verify", "--suite", "nope"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"));
}

#[test]
fn seeded_training_is_reproducible_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &[]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = train(&config, out, &["--seed", "7"], None);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.join("metrics.csv")).unwrap());
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("epoch,lr,"));
    for f in ["ckpt_0.bin", "ckpt_1.bin", "sample_1_0.pgm"] {
        assert!(a.join(f).exists(), "{f}");
    }

    let o = dgp()
        .arg("eval")
        .arg("--config")
        .arg(&config)
        .arg("--checkpoint")
        .arg(a.join("ckpt_1.bin"))
        .args(tiny(&a))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("pairs 2 psnr "));
}

#[test]
fn seed_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let with_seed = write_config(dir.path(), &[]);
    let flag = dir.path().join("flag");
    assert!(train(&with_seed, &flag, &["--seed", "7"], None)
        .status
        .success());

    let seedless = dir.path().join("seedless");
    fs::create_dir(&seedless).unwrap();
    let config = write_config(&seedless, &["seed"]);
    let env = dir.path().join("env");
    let o = train(&config, &env, &[], Some("7"));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(flag.join("metrics.csv")).unwrap(),
        fs::read_to_string(env.join("metrics.csv")).unwrap()
    );

    let o = train(&config, &env, &[], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing config key `seed`"));
}

#[test]
fn missing_or_unknown_keys_exit_with_status_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &["lr"]);
    let o = train(&config, &dir.path().join("out"), &[], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing config key `lr`"));

    let config = write_config(dir.path(), &[]);
    let o = train(&config, &dir.path().join("out"), &["--colour", "1"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown config key `colour`"));
}

#[test]
fn dgp_off_drops_the_variance_column() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &[]);
    let out = dir.path().join("plain");
    assert!(train(&config, &out, &["--dgp", "off"], None)
        .status
        .success());
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "mean_sigma2").unwrap();
    for row in csv.lines().skip(1) {
        assert_eq!(row.split(',').nth(col), Some(""));
    }
}

#[test]
fn single_point_ablation_matches_training() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &[]);
    let trained = dir.path().join("train");
    assert!(train(&config, &trained, &[], None).status.success());
    let last = fs::read_to_string(trained.join("metrics.csv")).unwrap();
    let last: Vec<String> = last
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(String::from)
        .collect();

    let ablated = dir.path().join("ablate");
    let o = dgp()
        .arg("ablate")
        .arg("--config")
        .arg(&config)
        .args(["--axis", "lambda"])
        .args(tiny(&ablated))
        .args(["--sweep-lambda", "[0.03]"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(ablated.join("summary_lambda.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "lambda");
    let n = last.len();
    assert_eq!(row[2], last[n - 2], "psnr");
    assert_eq!(row[3], last[n - 1], "ssim");
    assert_eq!(row[4], last[n - 3], "mean_sigma2");
}
