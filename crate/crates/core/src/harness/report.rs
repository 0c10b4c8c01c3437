//! Result rows, CSV emission and aggregate metrics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One acquisition's outcome. Every field needed to interpret the row is in
/// the row itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub policy: String,
    /// Sweep point index (0 for pixel and scan runs).
    pub point: usize,
    pub x: Option<usize>,
    pub y: Option<usize>,
    pub ambient_flux: f64,
    pub signal_flux: f64,
    pub sbr: f64,
    pub dead_time_ns: f64,
    pub budget_us: f64,
    pub seed_index: usize,
    pub seed: u64,
    pub true_depth_bin: usize,
    pub true_depth_m: f64,
    pub est_depth_bin: Option<usize>,
    pub est_depth_subbin: f64,
    pub est_depth_m: f64,
    pub abs_error_bins: f64,
    pub loss01: f64,
    pub termination: f64,
    pub entropy: f64,
    pub background_est: f64,
    pub cycles: usize,
    pub detections: usize,
    pub true_bin_detections: usize,
    pub exposure_us: f64,
    pub status: String,
    pub failure: String,
}

pub const STATUS_OK: &str = "ok";
pub const STATUS_FAILED: &str = "failed";

/// Column names, in output order.
pub const RESULT_HEADER: [&str; 28] = [
    "experiment_id",
    "policy",
    "point",
    "x",
    "y",
    "ambient_flux",
    "signal_flux",
    "sbr",
    "dead_time_ns",
    "budget_us",
    "seed_index",
    "seed",
    "true_depth_bin",
    "true_depth_m",
    "est_depth_bin",
    "est_depth_subbin",
    "est_depth_m",
    "abs_error_bins",
    "loss01",
    "termination",
    "entropy",
    "background_est",
    "cycles",
    "detections",
    "true_bin_detections",
    "exposure_us",
    "status",
    "failure",
];

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    fn to_record(&self) -> Vec<String> {
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        vec![
            self.experiment_id.clone(),
            self.policy.clone(),
            self.point.to_string(),
            opt(self.x),
            opt(self.y),
            format_sig(self.ambient_flux),
            format_sig(self.signal_flux),
            format_sig(self.sbr),
            format_sig(self.dead_time_ns),
            format_sig(self.budget_us),
            self.seed_index.to_string(),
            self.seed.to_string(),
            self.true_depth_bin.to_string(),
            format_sig(self.true_depth_m),
            opt(self.est_depth_bin),
            format_sig(self.est_depth_subbin),
            format_sig(self.est_depth_m),
            format_sig(self.abs_error_bins),
            format_sig(self.loss01),
            format_sig(self.termination),
            format_sig(self.entropy),
            format_sig(self.background_est),
            self.cycles.to_string(),
            self.detections.to_string(),
            self.true_bin_detections.to_string(),
            format_sig(self.exposure_us),
            self.status.clone(),
            self.failure.clone(),
        ]
    }

    fn from_record(rec: &csv::StringRecord) -> std::result::Result<Self, String> {
        if rec.len() != RESULT_HEADER.len() {
            return Err(format!("expected {} fields, found {}", RESULT_HEADER.len(), rec.len()));
        }
        let f = |i: usize| -> std::result::Result<f64, String> {
            parse_float(&rec[i]).ok_or_else(|| format!("{}: invalid number '{}'", RESULT_HEADER[i], &rec[i]))
        };
        let u = |i: usize| -> std::result::Result<usize, String> {
            rec[i]
                .parse()
                .map_err(|_| format!("{}: invalid count '{}'", RESULT_HEADER[i], &rec[i]))
        };
        let opt = |i: usize| -> std::result::Result<Option<usize>, String> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                u(i).map(Some)
            }
        };
        Ok(Self {
            experiment_id: rec[0].to_string(),
            policy: rec[1].to_string(),
            point: u(2)?,
            x: opt(3)?,
            y: opt(4)?,
            ambient_flux: f(5)?,
            signal_flux: f(6)?,
            sbr: f(7)?,
            dead_time_ns: f(8)?,
            budget_us: f(9)?,
            seed_index: u(10)?,
            seed: rec[11].parse().map_err(|_| format!("seed: invalid '{}'", &rec[11]))?,
            true_depth_bin: u(12)?,
            true_depth_m: f(13)?,
            est_depth_bin: opt(14)?,
            est_depth_subbin: f(15)?,
            est_depth_m: f(16)?,
            abs_error_bins: f(17)?,
            loss01: f(18)?,
            termination: f(19)?,
            entropy: f(20)?,
            background_est: f(21)?,
            cycles: u(22)?,
            detections: u(23)?,
            true_bin_detections: u(24)?,
            exposure_us: f(25)?,
            status: rec[26].to_string(),
            failure: rec[27].to_string(),
        })
    }
}

/// Formats with 9 significant digits, `%.9g` style: fixed notation for
/// exponents in `[−5, 9)`, scientific otherwise, trailing zeros removed.
pub fn format_sig(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn parse_float(s: &str) -> Option<f64> {
    match s {
        "NaN" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })
}

fn write_table(path: &Path, header: &[&str], records: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_err)?;
    for rec in records {
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes rows with the [`RESULT_HEADER`] columns.
pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    write_table(path, &RESULT_HEADER, rows.iter().map(ResultRow::to_record))
}

/// Reads a file written by [`emit_csv`].
pub fn load_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::ReaderBuilder::new().from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    let header = r.headers().map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    if header.iter().ne(RESULT_HEADER.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            column: 1,
            message: "unexpected header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        rows.push(ResultRow::from_record(&rec).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            column: 1,
            message,
        })?);
    }
    Ok(rows)
}

/// Summary statistics over a set of rows. Failed rows are counted but do not
/// enter the statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub rows: usize,
    pub failed: usize,
    pub rmse_m: f64,
    pub rmse_bins: f64,
    pub mean_loss: f64,
    pub median_abs_error_bins: f64,
    pub mean_exposure_us: f64,
    pub mean_cycles: f64,
    pub mean_termination: f64,
    pub mean_entropy: f64,
    pub mean_true_bin_detections: f64,
}

/// Stats for one (sweep point, policy) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub point: usize,
    pub policy: String,
    pub ambient_flux: f64,
    pub signal_flux: f64,
    pub sbr: f64,
    pub dead_time_ns: f64,
    pub budget_us: f64,
    pub stats: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: Stats,
    pub groups: Vec<GroupReport>,
}

fn stats(rows: &[&ResultRow]) -> Stats {
    let ok: Vec<&&ResultRow> = rows.iter().filter(|r| r.is_ok()).collect();
    let n = ok.len() as f64;
    // summation follows the order of `rows`, which callers keep sorted
    let mean = |f: &dyn Fn(&ResultRow) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / n;
    let mut abs_err: Vec<f64> = ok.iter().map(|r| r.abs_error_bins).collect();
    abs_err.sort_by(f64::total_cmp);
    let median = match abs_err.len() {
        0 => f64::NAN,
        k if k % 2 == 1 => abs_err[k / 2],
        k => 0.5 * (abs_err[k / 2 - 1] + abs_err[k / 2]),
    };
    Stats {
        rows: rows.len(),
        failed: rows.len() - ok.len(),
        rmse_m: mean(&|r| (r.est_depth_m - r.true_depth_m).powi(2)).sqrt(),
        rmse_bins: mean(&|r| r.abs_error_bins.powi(2)).sqrt(),
        mean_loss: mean(&|r| r.loss01),
        median_abs_error_bins: median,
        mean_exposure_us: mean(&|r| r.exposure_us),
        mean_cycles: mean(&|r| r.cycles as f64),
        mean_termination: mean(&|r| r.termination),
        mean_entropy: mean(&|r| r.entropy),
        mean_true_bin_detections: mean(&|r| r.true_bin_detections as f64),
    }
}

/// RMSE (meters and bins), mean 0-1 loss, median absolute error and
/// per-(point, policy) breakdowns. Rows are aggregated in sorted
/// (point, policy, seed, pixel) order so the result does not depend on the
/// order rows were produced in.
pub fn compute_metrics(rows: &[ResultRow]) -> Result<MetricsReport> {
    if rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (a.point, &a.policy, a.seed_index, a.y, a.x).cmp(&(b.point, &b.policy, b.seed_index, b.y, b.x))
    });
    let mut groups: BTreeMap<(usize, &str), Vec<&ResultRow>> = BTreeMap::new();
    for r in &sorted {
        groups.entry((r.point, r.policy.as_str())).or_default().push(r);
    }
    let groups = groups
        .into_iter()
        .map(|((point, policy), rs)| GroupReport {
            point,
            policy: policy.to_string(),
            ambient_flux: rs[0].ambient_flux,
            signal_flux: rs[0].signal_flux,
            sbr: rs[0].sbr,
            dead_time_ns: rs[0].dead_time_ns,
            budget_us: rs[0].budget_us,
            stats: stats(&rs),
        })
        .collect();
    Ok(MetricsReport {
        overall: stats(&sorted),
        groups,
    })
}

pub const SUMMARY_HEADER: [&str; 18] = [
    "point",
    "policy",
    "ambient_flux",
    "signal_flux",
    "sbr",
    "dead_time_ns",
    "budget_us",
    "rows",
    "failed",
    "rmse_m",
    "rmse_bins",
    "mean_loss01",
    "median_abs_error_bins",
    "mean_exposure_us",
    "mean_cycles",
    "mean_termination",
    "mean_entropy",
    "mean_true_bin_detections",
];

/// Writes one line per group.
pub fn emit_summary_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let records = report.groups.iter().map(|g| {
        let s = &g.stats;
        vec![
            g.point.to_string(),
            g.policy.clone(),
            format_sig(g.ambient_flux),
            format_sig(g.signal_flux),
            format_sig(g.sbr),
            format_sig(g.dead_time_ns),
            format_sig(g.budget_us),
            s.rows.to_string(),
            s.failed.to_string(),
            format_sig(s.rmse_m),
            format_sig(s.rmse_bins),
            format_sig(s.mean_loss),
            format_sig(s.median_abs_error_bins),
            format_sig(s.mean_exposure_us),
            format_sig(s.mean_cycles),
            format_sig(s.mean_termination),
            format_sig(s.mean_entropy),
            format_sig(s.mean_true_bin_detections),
        ]
    });
    write_table(path, &SUMMARY_HEADER, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn row(err_bins: usize) -> ResultRow {
        let bin_m = crate::model::SpadConfig::default().bin_depth_m();
        ResultRow {
            experiment_id: "t".into(),
            policy: "adaptive".into(),
            point: 0,
            x: None,
            y: None,
            ambient_flux: 0.02,
            signal_flux: 0.04,
            sbr: 2.0,
            dead_time_ns: 81.0,
            budget_us: 100.0,
            seed_index: 0,
            seed: 1,
            true_depth_bin: 100,
            true_depth_m: 100.0 * bin_m,
            est_depth_bin: Some(100 + err_bins),
            est_depth_subbin: (100 + err_bins) as f64,
            est_depth_m: (100 + err_bins) as f64 * bin_m,
            abs_error_bins: err_bins as f64,
            loss01: if err_bins == 0 { 0.0 } else { 1.0 },
            termination: 0.1,
            entropy: 0.3,
            background_est: 0.0201,
            cycles: 700,
            detections: 650,
            true_bin_detections: 40,
            exposure_us: 100.0,
            status: STATUS_OK.into(),
            failure: String::new(),
        }
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(1.0), "1");
        assert_eq!(format_sig(0.1), "0.1");
        assert_eq!(format_sig(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig(2.0 / 3.0 * 1e6), "666666.667");
        assert_eq!(format_sig(123456789012.0), "1.23456789e11");
        assert_eq!(format_sig(1.5e-7), "1.5e-7");
        assert_eq!(format_sig(-0.014989622900000001), "-0.0149896229");
        assert_eq!(format_sig(99999999.96), "100000000");
        assert_eq!(format_sig(999999999.6), "1e9");
        assert_eq!(format_sig(f64::NAN), "NaN");
    }

    #[test]
    fn metric_examples() {
        let one = compute_metrics(&[row(1)]).unwrap();
        assert_abs_diff_eq!(one.overall.rmse_m, 0.014989622900000001, epsilon = 1e-12);
        assert_eq!(format!("{:.1}", one.overall.rmse_m * 100.0), "1.5");
        let ok = compute_metrics(&[row(0), row(0)]).unwrap();
        assert_eq!(ok.overall.rmse_m, 0.0);
        assert_eq!(ok.overall.mean_loss, 0.0);
        let two = compute_metrics(&[row(0), row(2)]).unwrap();
        assert_abs_diff_eq!(two.overall.rmse_bins, 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(two.overall.rmse_m * 100.0, 2.1199, epsilon = 1e-4);
        assert_eq!(two.overall.median_abs_error_bins, 1.0);
        assert!(matches!(compute_metrics(&[]), Err(Error::EmptyReport)));
    }

    #[test]
    fn failed_rows_are_excluded_and_counted() {
        let mut bad = row(30);
        bad.status = STATUS_FAILED.into();
        let rep = compute_metrics(&[row(0), bad]).unwrap();
        assert_eq!(rep.overall.failed, 1);
        assert_eq!(rep.overall.rmse_m, 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        emit_csv(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{}\n", RESULT_HEADER.join(",")));
        assert!(load_csv(&path).unwrap().is_empty());

        let mut a = row(1);
        a.x = Some(3);
        a.y = Some(4);
        a.failure = "gate 3, \"quoted\"".into();
        let mut b = row(0);
        b.est_depth_bin = None;
        b.entropy = f64::NAN;
        emit_csv(&[a.clone(), b.clone()], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
        let back = load_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].failure, a.failure);
        assert_eq!(back[0].x, Some(3));
        assert_eq!(back[1].est_depth_bin, None);
        assert!(back[1].entropy.is_nan());
        let rel = |x: f64, y: f64| ((x - y) / y).abs();
        assert!(rel(back[0].true_depth_m, a.true_depth_m) < 1e-8);
        assert!(rel(back[0].est_depth_m, a.est_depth_m) < 1e-8);
        // emitting the loaded rows reproduces the file byte for byte
        let path2 = dir.path().join("rows2.csv");
        emit_csv(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}
