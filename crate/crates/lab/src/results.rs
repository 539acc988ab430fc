//! Result tables. Every CSV file starts with a `# <schema>/<version>` line
//! followed by a fixed header; readers reject any other schema line.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const RESULTS_SCHEMA: &str = "diffpace-results/1";
pub const SUMMARY_SCHEMA: &str = "diffpace-summary/1";
pub const GRID_SCHEMA: &str = "diffpace-grid/1";
pub const GRID_BEST_SCHEMA: &str = "diffpace-grid-best/1";
pub const SHIFT_SCHEMA: &str = "diffpace-shift/1";
pub const STEPS_SCHEMA: &str = "diffpace-steps/1";
pub const HISTORY_SCHEMA: &str = "diffpace-train/1";

/// One estimate. `K` is the solver step count for diffusion methods and 0
/// for the others; `wall_ms` is 0 unless timing is enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub snr_db: f64,
    pub alpha: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub trial: usize,
    pub nmse_db: f64,
    pub wall_ms: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub snr_db: f64,
    pub alpha: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub trials: usize,
    /// `10 log10` of the mean linear NMSE.
    pub mean_nmse_db: f64,
    /// Standard deviation of the per-trial dB values.
    pub std_nmse_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub lambda: f64,
    pub beta: f64,
    pub snr_db: f64,
    pub trials: usize,
    pub mean_nmse_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridBestRow {
    pub snr_db: f64,
    pub lambda: f64,
    pub beta: f64,
    pub mean_nmse_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    /// `base` or `shifted`.
    pub set: String,
    pub method: String,
    pub snr_db: f64,
    pub trials: usize,
    pub mean_nmse_db: f64,
    /// Shifted minus base mean NMSE, dB; 0 on base rows.
    pub delta_db: f64,
}

/// Per-step solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub method: String,
    pub snr_db: f64,
    pub trial: usize,
    pub i: usize,
    pub sigma: f64,
    pub rho: f64,
    pub residual: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

/// A CSV table with a versioned schema and a fixed column order.
pub trait Table: Serialize + DeserializeOwned {
    const SCHEMA: &'static str;
    const COLUMNS: &'static [&'static str];
}

macro_rules! table {
    ($t:ty, $schema:expr, [$($col:literal),+ $(,)?]) => {
        impl Table for $t {
            const SCHEMA: &'static str = $schema;
            const COLUMNS: &'static [&'static str] = &[$($col),+];
        }
    };
}

table!(
    ResultRow,
    RESULTS_SCHEMA,
    ["method", "snr_db", "alpha", "K", "trial", "nmse_db", "wall_ms", "seed"]
);
table!(
    SummaryRow,
    SUMMARY_SCHEMA,
    [
        "method",
        "snr_db",
        "alpha",
        "K",
        "trials",
        "mean_nmse_db",
        "std_nmse_db"
    ]
);
table!(
    GridRow,
    GRID_SCHEMA,
    ["lambda", "beta", "snr_db", "trials", "mean_nmse_db"]
);
table!(
    GridBestRow,
    GRID_BEST_SCHEMA,
    ["snr_db", "lambda", "beta", "mean_nmse_db"]
);
table!(
    ShiftRow,
    SHIFT_SCHEMA,
    [
        "set",
        "method",
        "snr_db",
        "trials",
        "mean_nmse_db",
        "delta_db"
    ]
);
table!(
    StepRow,
    STEPS_SCHEMA,
    [
        "method",
        "snr_db",
        "trial",
        "i",
        "sigma",
        "rho",
        "residual",
        "step_norm"
    ]
);
table!(
    HistoryRow,
    HISTORY_SCHEMA,
    ["epoch", "train_loss", "test_loss"]
);

pub fn to_csv<T: Table>(rows: &[T]) -> Vec<u8> {
    let mut out = format!("# {}\n", T::SCHEMA).into_bytes();
    {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(&mut out);
        w.write_record(T::COLUMNS).expect("in-memory write");
        for r in rows {
            w.serialize(r).expect("rows serialize");
        }
        w.flush().expect("in-memory write");
    }
    out
}

pub fn write_csv<T: Table>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    f.write_all(&to_csv(rows))
        .map_err(|e| LabError::io(path, e))
}

pub fn from_csv<T: Table>(bytes: &[u8]) -> std::result::Result<Vec<T>, String> {
    let mut reader = std::io::BufReader::new(bytes);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| e.to_string())?;
    let got = first.trim_end().strip_prefix("# ").unwrap_or("");
    if got != T::SCHEMA {
        return Err(format!(
            "schema line {:?}, expected \"# {}\"",
            first.trim_end(),
            T::SCHEMA
        ));
    }
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = r.headers().map_err(|e| e.to_string())?.clone();
    if !headers.iter().eq(T::COLUMNS.iter().copied()) {
        return Err(format!(
            "header {:?}, expected {:?}",
            headers.iter().collect::<Vec<_>>(),
            T::COLUMNS
        ));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| e.to_string()))
        .collect()
}

pub fn read_csv<T: Table>(path: &Path) -> Result<Vec<T>> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => LabError::Missing(path.to_path_buf()),
        _ => LabError::io(path, e),
    })?;
    from_csv(&bytes).map_err(|m| LabError::format(path, m))
}

/// `10 log10(mean(10^{x/10}))`: the dB value of the mean linear NMSE.
pub fn mean_nmse_db(values_db: &[f64]) -> f64 {
    let lin: f64 =
        values_db.iter().map(|v| 10f64.powf(v / 10.0)).sum::<f64>() / values_db.len() as f64;
    10.0 * lin.log10()
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Groups rows by `(method, snr, alpha, K)`, in first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, u64, u64, usize)> = Vec::new();
    let mut groups: BTreeMap<(String, u64, u64, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = (r.method.clone(), r.snr_db.to_bits(), r.alpha.to_bits(), r.k);
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r.nmse_db);
    }
    order
        .into_iter()
        .map(|key| {
            let v = &groups[&key];
            SummaryRow {
                method: key.0.clone(),
                snr_db: f64::from_bits(key.1),
                alpha: f64::from_bits(key.2),
                k: key.3,
                trials: v.len(),
                mean_nmse_db: mean_nmse_db(v),
                std_nmse_db: std_dev(v),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, snr: f64, trial: usize, nmse: f64) -> ResultRow {
        ResultRow {
            method: method.into(),
            snr_db: snr,
            alpha: 0.8,
            k: 100,
            trial,
            nmse_db: nmse,
            wall_ms: 0.0,
            seed: 9,
        }
    }

    #[test]
    fn results_csv_header_and_round_trip() {
        let rows = vec![row("ls", 10.0, 0, -3.5), row("omp", -5.0, 1, 1.25)];
        let bytes = to_csv(&rows);
        let text = String::from_utf8(bytes.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# diffpace-results/1"));
        assert_eq!(
            lines.next(),
            Some("method,snr_db,alpha,K,trial,nmse_db,wall_ms,seed")
        );
        assert_eq!(from_csv::<ResultRow>(&bytes).unwrap(), rows);
        let empty = to_csv::<ResultRow>(&[]);
        assert!(from_csv::<ResultRow>(&empty).unwrap().is_empty());
    }

    #[test]
    fn unknown_schema_versions_are_rejected() {
        let bytes = to_csv(&[row("ls", 0.0, 0, 0.0)]);
        let text = String::from_utf8(bytes)
            .unwrap()
            .replace("results/1", "results/2");
        assert!(from_csv::<ResultRow>(text.as_bytes()).is_err());
        let headerless = "method,snr_db\nls,0\n";
        assert!(from_csv::<ResultRow>(headerless.as_bytes()).is_err());
        let reordered = "# diffpace-results/1\nsnr_db,method,alpha,K,trial,nmse_db,wall_ms,seed\n";
        assert!(from_csv::<ResultRow>(reordered.as_bytes()).is_err());
    }

    #[test]
    fn mean_is_taken_in_the_linear_domain() {
        assert!((mean_nmse_db(&[-10.0, -10.0]) + 10.0).abs() < 1e-12);
        // 0.1 and 0.001 average to 0.0505
        assert!((mean_nmse_db(&[-10.0, -30.0]) - 10.0 * 0.0505f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn summary_groups_cells() {
        let rows = vec![
            row("ls", 10.0, 0, -10.0),
            row("omp", 10.0, 0, -20.0),
            row("ls", 10.0, 1, -10.0),
            row("ls", 20.0, 0, -30.0),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 3);
        assert_eq!((s[0].method.as_str(), s[0].trials), ("ls", 2));
        assert!((s[0].mean_nmse_db + 10.0).abs() < 1e-12);
        assert_eq!(s[0].std_nmse_db, 0.0);
        assert_eq!(s[1].method, "omp");
        assert_eq!(s[2].snr_db, 20.0);
    }
}
