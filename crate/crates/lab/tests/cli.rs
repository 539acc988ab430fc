use std::path::{Path, PathBuf};
use std::process::Command;

use diffpace::results::{read_csv, ResultRow, ShiftRow, SummaryRow};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_diffpace"))
}

const SMALL: &str = r#"
seed = 21
[dataset]
samples = 80
[experiment]
snr_db = [0.0, 10.0]
trials = 2
methods = ["ls", "omp", "amp", "mmse", "diffpace", "diffpace-oracle"]
alpha_grid = [0.4, 0.8]
steps_grid = [4, 8]
[solver]
steps = 8
[train]
epochs = 1
batch_size = 16
levels = 10
hidden = 4
embed = 4
[gridsearch]
lambda = [0.1, 1.0]
beta = [1.0]
trials = 2
[shift]
azimuth_deg = [-30.0, 30.0]
samples = 4
"#;

struct Run {
    _dir: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

fn setup(extra: &str) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = dir.path().join("c.toml");
    std::fs::write(&config, format!("{SMALL}\n{extra}")).unwrap();
    Run {
        _dir: dir,
        config,
        out,
    }
}

impl Run {
    fn exec(&self, args: &[&str]) -> (i32, String) {
        let o = bin()
            .arg("--config")
            .arg(&self.config)
            .arg("--out")
            .arg(&self.out)
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        (
            o.status.code().unwrap(),
            String::from_utf8_lossy(&o.stderr).into_owned(),
        )
    }

    fn ok(&self, args: &[&str]) {
        let (code, err) = self.exec(args);
        assert_eq!(code, 0, "{args:?}: {err}");
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn overwrite_needs_force() {
    let r = setup("");
    r.ok(&["gen-dataset"]);
    let first = read(&r.out.join("dataset.bin"));
    let (code, err) = r.exec(&["gen-dataset"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("--force"));
    r.ok(&["gen-dataset", "--force"]);
    assert_eq!(read(&r.out.join("dataset.bin")), first);
}

#[test]
fn missing_artifacts_exit_3() {
    let r = setup("");
    let (code, err) = r.exec(&["benchmark"]);
    assert_eq!(code, 3, "{err}");
    r.ok(&["gen-dataset"]);
    let (code, err) = r.exec(&["estimate"]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("checkpoint"), "{err}");
}

#[test]
fn corrupt_dataset_exits_3() {
    let r = setup("");
    r.ok(&["gen-dataset"]);
    let p = r.out.join("dataset.bin");
    let mut bytes = read(&p);
    bytes[0] = b'X';
    std::fs::write(&p, bytes).unwrap();
    let (code, err) = r.exec(&["benchmark"]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("magic"), "{err}");
}

#[test]
fn bad_config_exits_2() {
    let r = setup("[pilots]\nalpah = 0.5\n");
    let (code, err) = r.exec(&["gen-dataset"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("alpah"), "{err}");
    let r = setup("[pilots]\nalpha = 1.5\n");
    assert_eq!(r.exec(&["gen-dataset"]).0, 2);
}

#[test]
fn dataset_from_other_scenario_is_rejected() {
    let r = setup("");
    r.ok(&["gen-dataset"]);
    let text = std::fs::read_to_string(&r.config).unwrap() + "[scenario]\npower_decay_db = 9.0\n";
    std::fs::write(&r.config, text).unwrap();
    let (code, err) = r.exec(&["benchmark"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("regenerate"), "{err}");
}

#[test]
fn benchmark_rows_and_thread_independence() {
    let r = setup("");
    r.ok(&["gen-dataset"]);
    r.ok(&["train"]);
    r.ok(&["benchmark", "--threads", "1"]);
    let dir = r.out.join("benchmark");
    let rows: Vec<ResultRow> = read_csv(&dir.join("results.csv")).unwrap();
    // 6 methods x 2 SNRs x 2 trials
    assert_eq!(rows.len(), 24);
    assert!(rows
        .iter()
        .all(|x| x.nmse_db.is_finite() && x.wall_ms == 0.0));
    assert!(rows
        .iter()
        .filter(|x| x.method.starts_with("diffpace"))
        .all(|x| x.k == 8));
    assert!(rows
        .iter()
        .filter(|x| !x.method.starts_with("diffpace"))
        .all(|x| x.k == 0));
    let summary: Vec<SummaryRow> = read_csv(&dir.join("summary.csv")).unwrap();
    assert_eq!(summary.len(), 12);
    let single = read(&dir.join("results.csv"));
    r.ok(&["benchmark", "--force"]);
    assert_eq!(read(&dir.join("results.csv")), single);
    assert!(dir.join("manifest.toml").exists());
}

#[test]
fn sweeps_and_gridsearch_shapes() {
    let r = setup("");
    r.ok(&["gen-dataset"]);
    r.ok(&["train"]);
    r.ok(&["sweep", "alpha"]);
    let rows: Vec<ResultRow> = read_csv(&r.out.join("sweep-alpha/results.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 6 * 2);
    r.ok(&["sweep", "steps", "--verbose"]);
    let rows: Vec<ResultRow> = read_csv(&r.out.join("sweep-steps/results.csv")).unwrap();
    // two diffusion methods x two K x two SNRs x two trials
    assert_eq!(rows.len(), 16);
    assert!(r.out.join("sweep-steps/steps.csv").exists());
    r.ok(&["sweep", "shift"]);
    let rows: Vec<ShiftRow> = read_csv(&r.out.join("sweep-shift/shift.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 6 * 2);
    assert!(rows
        .iter()
        .filter(|x| x.set == "base")
        .all(|x| x.delta_db == 0.0));
    r.ok(&["gridsearch"]);
    let best = std::fs::read_to_string(r.out.join("gridsearch/best.csv")).unwrap();
    assert_eq!(best.lines().count(), 2 + 2);
}
