//! File formats: trajectory CSV with a parameter sidecar, windowed and
//! scored-label CSVs, results/summary/report CSVs and the TOML experiment
//! manifest.
//!
//! Writers are deterministic and locale independent; readers reject
//! malformed input with the offending line number.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::drift::{AlarmRecord, PhParams};
use crate::error::{FglError, Result};
use crate::fgl::TrainConfig;
use crate::mackey_glass::{MgParams, SplitSpec, Trajectory};
use crate::metrics::ScoredLabels;
use crate::neural::checkpoint::hex_digest;
use crate::neural::ModelConfig;
use crate::quantizer::{BinSpec, Readout};

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> FglError {
    FglError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| FglError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| FglError::io(path, e))?;
    f.write_all(contents).map_err(|e| FglError::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| FglError::io(path, e))
}

/// Numbers with six significant digits in scientific notation.
pub fn fmt_sig6(v: f64) -> String {
    format!("{v:.5e}")
}

/// A body row with its 1-based line number.
type NumberedRow = (u64, Vec<String>);

/// Header and body rows of a CSV file, header checked.
fn csv_rows(path: &Path, text: &str, expected_header: Option<&[&str]>) -> Result<(Vec<String>, Vec<NumberedRow>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header: Vec<String> = match records.next() {
        None => return Err(FglError::EmptyDataset(format!("{} has no header", path.display()))),
        Some(r) => r
            .map_err(|e| parse_err(path, 1, e.to_string()))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect(),
    };
    if let Some(expected) = expected_header {
        if header != expected {
            return Err(parse_err(
                path,
                1,
                format!("expected header {}, found {}", expected.join(","), header.join(",")),
            ));
        }
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| parse_err(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        rows.push((line, rec.iter().map(|s| s.trim().to_string()).collect()));
    }
    Ok((header, rows))
}

fn parse_f64(path: &Path, line: u64, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| parse_err(path, line, format!("not a number: {cell:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value {cell:?}")));
    }
    Ok(v)
}

fn parse_int<T: std::str::FromStr>(path: &Path, line: u64, cell: &str) -> Result<T> {
    cell.parse()
        .map_err(|_| parse_err(path, line, format!("not an integer: {cell:?}")))
}

// ---------------------------------------------------------------- trajectory

/// Sidecar holding the generator parameters next to a trajectory CSV.
pub fn params_sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".params.toml");
    PathBuf::from(name)
}

/// Values are written with round-trip precision.
pub fn write_trajectory(path: &Path, trajectory: &Trajectory, params: &MgParams) -> Result<()> {
    let mut out = String::with_capacity(trajectory.values.len() * 20 + 6);
    out.push_str("value\n");
    for v in &trajectory.values {
        out.push_str(&format!("{v:?}\n"));
    }
    write_file(path, out.as_bytes())?;
    let sidecar = toml::to_string(params).map_err(|e| FglError::config(e.to_string()))?;
    write_file(&params_sidecar(path), sidecar.as_bytes())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<f64>> {
    let text = read_file(path)?;
    let (_, rows) = csv_rows(path, &text, Some(&["value"]))?;
    let values: Vec<f64> = rows
        .iter()
        .map(|(line, r)| parse_f64(path, *line, &r[0]))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(FglError::EmptyDataset(format!("{} has no values", path.display())));
    }
    Ok(values)
}

pub fn read_params_sidecar(path: &Path) -> Result<MgParams> {
    let sidecar = params_sidecar(path);
    toml::from_str(&read_file(&sidecar)?).map_err(|e| parse_err(&sidecar, 0, e.to_string()))
}

/// SHA-256 of the little-endian bytes of a series.
pub fn series_hash(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    hex_digest(&bytes)
}

// ------------------------------------------------------------------ windowed

/// Fixed-length feature rows with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindows {
    pub lookback: usize,
    /// Row-major features.
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
}

impl LabeledWindows {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.lookback..(i + 1) * self.lookback]
    }
}

fn windowed_header(lookback: usize) -> Vec<String> {
    (0..lookback)
        .map(|i| format!("f{i}"))
        .chain(["label".to_string()])
        .collect()
}

pub fn write_windowed_csv(path: &Path, data: &LabeledWindows) -> Result<()> {
    let mut out = windowed_header(data.lookback).join(",");
    out.push('\n');
    for i in 0..data.len() {
        for v in data.row(i) {
            out.push_str(&format!("{v:?},"));
        }
        out.push_str(&format!("{}\n", data.labels[i]));
    }
    write_file(path, out.as_bytes())
}

pub fn load_windowed_csv(path: &Path) -> Result<LabeledWindows> {
    let text = read_file(path)?;
    if text.trim().is_empty() {
        return Err(FglError::EmptyDataset(format!("{} is empty", path.display())));
    }
    let (header, rows) = csv_rows(path, &text, None)?;
    let lookback = header.len().saturating_sub(1);
    if lookback == 0 || header != windowed_header(lookback) {
        return Err(parse_err(
            path,
            1,
            format!("expected header f0,...,f{{L-1}},label, found {}", header.join(",")),
        ));
    }
    if rows.is_empty() {
        return Err(FglError::EmptyDataset(format!("{} has no rows", path.display())));
    }
    let mut inputs = Vec::with_capacity(rows.len() * lookback);
    let mut labels = Vec::with_capacity(rows.len());
    for (line, r) in &rows {
        for cell in &r[..lookback] {
            inputs.push(parse_f64(path, *line, cell)?);
        }
        labels.push(parse_int(path, *line, &r[lookback])?);
    }
    Ok(LabeledWindows {
        lookback,
        inputs,
        labels,
    })
}

// ------------------------------------------------------------- scored labels

/// Reads `score,label` rows with labels 0 or 1.
pub fn load_scored_labels(path: &Path) -> Result<ScoredLabels> {
    let text = read_file(path)?;
    let (_, rows) = csv_rows(path, &text, Some(&["score", "label"]))?;
    let mut scores = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (line, r) in &rows {
        scores.push(parse_f64(path, *line, &r[0])?);
        labels.push(match r[1].as_str() {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(path, *line, format!("label must be 0 or 1, found {other:?}"))),
        });
    }
    if scores.is_empty() {
        return Err(FglError::EmptyDataset(format!("{} has no rows", path.display())));
    }
    ScoredLabels::new(scores, labels)
}

// ------------------------------------------------------------------- results

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub run_id: String,
    pub alpha: f64,
    pub horizon: usize,
    pub bins: usize,
    pub seed: u64,
    pub readout: Readout,
    pub split: String,
    pub mse: f64,
}

pub const RESULTS_HEADER: [&str; 8] = ["run_id", "alpha", "horizon", "bins", "seed", "readout", "split", "mse"];

impl ResultRow {
    fn sort_key(&self) -> (&str, usize, u64, usize, Readout, &str) {
        (
            &self.run_id,
            self.horizon,
            self.seed,
            self.bins,
            self.readout,
            &self.split,
        )
    }

    fn cells(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.run_id,
            self.alpha,
            self.horizon,
            self.bins,
            self.seed,
            self.readout.as_str(),
            self.split,
            fmt_sig6(self.mse)
        )
    }

    fn parse(path: &Path, line: u64, r: &[String]) -> Result<Self> {
        Ok(Self {
            run_id: r[0].clone(),
            alpha: parse_f64(path, line, &r[1])?,
            horizon: parse_int(path, line, &r[2])?,
            bins: parse_int(path, line, &r[3])?,
            seed: parse_int(path, line, &r[4])?,
            readout: r[5]
                .parse()
                .map_err(|e: FglError| parse_err(path, line, e.to_string()))?,
            split: r[6].clone(),
            mse: parse_f64(path, line, &r[7])?,
        })
    }
}

fn sorted<T: Clone>(rows: &[T], key: impl Fn(&T, &T) -> std::cmp::Ordering) -> Vec<T> {
    let mut v = rows.to_vec();
    v.sort_by(key);
    v
}

/// Canonical bytes of a results file: sorted by run id, horizon and seed.
pub fn results_csv_string(rows: &[ResultRow]) -> String {
    let mut out = RESULTS_HEADER.join(",");
    out.push('\n');
    for r in sorted(rows, |a, b| a.sort_key().cmp(&b.sort_key())) {
        out.push_str(&r.cells());
        out.push('\n');
    }
    out
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    write_file(path, results_csv_string(rows).as_bytes())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let text = read_file(path)?;
    let (_, rows) = csv_rows(path, &text, Some(&RESULTS_HEADER))?;
    rows.iter().map(|(line, r)| ResultRow::parse(path, *line, r)).collect()
}

/// A results row before or after drift adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedRow {
    pub row: ResultRow,
    pub adapted: bool,
}

pub fn write_adapted_csv(path: &Path, rows: &[AdaptedRow]) -> Result<()> {
    let mut out = RESULTS_HEADER.join(",");
    out.push_str(",adapted\n");
    for r in sorted(rows, |a, b| {
        (a.row.sort_key(), a.adapted).cmp(&(b.row.sort_key(), b.adapted))
    }) {
        out.push_str(&format!("{},{}\n", r.row.cells(), r.adapted));
    }
    write_file(path, out.as_bytes())
}

pub fn read_adapted_csv(path: &Path) -> Result<Vec<AdaptedRow>> {
    let text = read_file(path)?;
    let header: Vec<&str> = RESULTS_HEADER.iter().copied().chain(["adapted"]).collect();
    let (_, rows) = csv_rows(path, &text, Some(&header))?;
    rows.iter()
        .map(|(line, r)| {
            let adapted = match r[8].as_str() {
                "true" => true,
                "false" => false,
                other => {
                    return Err(parse_err(
                        path,
                        *line,
                        format!("adapted must be true or false, found {other:?}"),
                    ))
                }
            };
            Ok(AdaptedRow {
                row: ResultRow::parse(path, *line, &r[..8])?,
                adapted,
            })
        })
        .collect()
}

/// Per-cell percent change of MSE after online adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeRow {
    pub run_id: String,
    pub horizon: usize,
    pub bins: usize,
    pub seed: u64,
    pub readout: Readout,
    pub mse_before: f64,
    pub mse_after: f64,
    pub alarms: usize,
}

impl ChangeRow {
    pub fn percent_change(&self) -> f64 {
        100.0 * (self.mse_after - self.mse_before) / self.mse_before
    }
}

pub fn write_change_report(path: &Path, rows: &[ChangeRow]) -> Result<()> {
    let mut out = String::from("run_id,horizon,bins,seed,readout,mse_before,mse_after,pct_change,alarms\n");
    let key = |r: &ChangeRow| (r.run_id.clone(), r.horizon, r.seed, r.bins, r.readout);
    for r in sorted(rows, |a, b| key(a).cmp(&key(b))) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.run_id,
            r.horizon,
            r.bins,
            r.seed,
            r.readout.as_str(),
            fmt_sig6(r.mse_before),
            fmt_sig6(r.mse_after),
            fmt_sig6(r.percent_change()),
            r.alarms
        ));
    }
    write_file(path, out.as_bytes())
}

pub fn write_alarm_log(path: &Path, alarms: &[AlarmRecord]) -> Result<()> {
    let mut out = String::from("stream_index,S,S_min,action\n");
    for a in alarms {
        out.push_str(&format!(
            "{},{},{},{}\n",
            a.stream_index,
            fmt_sig6(a.s),
            fmt_sig6(a.s_min),
            a.action.as_str()
        ));
    }
    write_file(path, out.as_bytes())
}

/// Mean and sample standard deviation of one cell over seeds; `horizon` is
/// `None` for the per-variant average row.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub run_id: String,
    pub alpha: f64,
    pub bins: usize,
    pub horizon: Option<usize>,
    pub readout: Readout,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub n: usize,
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut out = String::from("run_id,alpha,bins,horizon,readout,mean_mse,std_mse,n\n");
    // per-horizon rows first, the Avg row last within each variant
    let key = |r: &SummaryRow| (r.run_id.clone(), r.readout, r.horizon.is_none(), r.horizon);
    for r in sorted(rows, |a, b| key(a).cmp(&key(b))) {
        let horizon = r.horizon.map_or_else(|| "Avg".to_string(), |h| h.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.run_id,
            r.alpha,
            r.bins,
            horizon,
            r.readout.as_str(),
            fmt_sig6(r.mean_mse),
            fmt_sig6(r.std_mse),
            r.n
        ));
    }
    write_file(path, out.as_bytes())
}

// ------------------------------------------------------------------ manifest

/// Page–Hinkley thresholds for one bin count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhThreshold {
    pub bins: usize,
    pub delta: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSection {
    pub window_len: usize,
    pub retrain_epochs: usize,
    pub retrain_window: usize,
    pub continuous_window: bool,
    pub thresholds: Vec<PhThreshold>,
}

impl Default for DriftSection {
    fn default() -> Self {
        let base = PhParams::for_bins(25);
        Self {
            window_len: base.window_len,
            retrain_epochs: base.retrain_epochs,
            retrain_window: base.retrain_window,
            continuous_window: base.continuous_window,
            thresholds: [25, 50]
                .into_iter()
                .map(|b| {
                    let p = PhParams::for_bins(b);
                    PhThreshold {
                        bins: b,
                        delta: p.delta,
                        lambda: p.lambda,
                    }
                })
                .collect(),
        }
    }
}

impl DriftSection {
    pub fn params_for(&self, bins: usize) -> PhParams {
        let (delta, lambda) = self.thresholds.iter().find(|t| t.bins == bins).map_or_else(
            || {
                let p = PhParams::for_bins(bins);
                (p.delta, p.lambda)
            },
            |t| (t.delta, t.lambda),
        );
        PhParams {
            delta,
            lambda,
            window_len: self.window_len,
            retrain_epochs: self.retrain_epochs,
            retrain_window: self.retrain_window,
            continuous_window: self.continuous_window,
        }
    }
}

/// Everything needed to replay an experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub version: String,
    pub lookback: usize,
    pub temperature: f64,
    /// Distillation weights of the FGL variants.
    pub alphas: Vec<f64>,
    /// Whether to train the teacher-free baseline.
    pub include_baseline: bool,
    pub bins: Vec<usize>,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub readouts: Vec<Readout>,
    /// Worker threads for the grid; absent means all cores.
    #[serde(default)]
    pub threads: Option<usize>,
    /// SHA-256 of the generated series; filled in on first run and checked
    /// on replays.
    #[serde(default)]
    pub data_hash: Option<String>,
    pub mg: MgParams,
    pub split: SplitSpec,
    /// `bins` is overridden per grid cell.
    pub model: ModelConfig,
    /// `seed` is overridden per grid cell.
    pub train: TrainConfig,
    pub drift: DriftSection,
    /// Bin edges fitted on the training split; recorded for reference.
    #[serde(default)]
    pub bin_specs: Vec<BinSpec>,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        Self {
            version: crate::VERSION.to_string(),
            lookback: 8,
            temperature: 4.0,
            alphas: vec![0.0, 0.5],
            include_baseline: true,
            bins: vec![25, 50],
            horizons: vec![2, 5, 10, 15],
            seeds: vec![0, 1, 2],
            readouts: Readout::ALL.to_vec(),
            threads: None,
            data_hash: None,
            mg: MgParams::default(),
            split: SplitSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            drift: DriftSection::default(),
            bin_specs: Vec::new(),
        }
    }
}

impl ExperimentManifest {
    /// A grid sized for a single desktop CPU core: 25 and 50 bins, horizons
    /// 2, 5, 10 and 15, three seeds, a 64-unit backbone trained for at most
    /// 30 epochs at learning rate 3e-4, and distillation temperature 2.
    pub fn desk_scale() -> Self {
        let mut m = Self::default();
        m.model.hidden = 64;
        m.train.epochs = 30;
        m.train.lr = 3e-4;
        m.temperature = 2.0;
        m
    }

    pub fn validate(&self) -> Result<()> {
        self.mg.validate()?;
        self.split.validate()?;
        self.train.validate()?;
        self.model.validate()?;
        if self.lookback == 0 {
            return Err(FglError::config("lookback must be positive"));
        }
        if self.bins.is_empty() || self.horizons.is_empty() || self.seeds.is_empty() || self.readouts.is_empty() {
            return Err(FglError::config("bins, horizons, seeds and readouts must be non-empty"));
        }
        if self.alphas.is_empty() && !self.include_baseline {
            return Err(FglError::config("manifest has no variants"));
        }
        if let Some(h) = self.horizons.iter().find(|h| **h < 2) {
            return Err(FglError::config(format!("student horizon {h} must be at least 2")));
        }
        for a in &self.alphas {
            crate::fgl::FglConfig::new(*a, self.temperature, 2)?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| FglError::config(format!("cannot serialize manifest: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| FglError::config(format!("invalid manifest: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_toml()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        toml::from_str(&text).map_err(|e| parse_err(path, 0, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::AlarmAction;

    fn row(run: &str, h: usize, seed: u64, mse: f64) -> ResultRow {
        ResultRow {
            run_id: run.into(),
            alpha: 0.5,
            horizon: h,
            bins: 25,
            seed,
            readout: Readout::Argmax,
            split: "test".into(),
            mse,
        }
    }

    #[test]
    fn results_canonical_order_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            row("b", 5, 1, 1.25),
            row("a", 10, 0, 3.0),
            row("a", 2, 2, 0.5),
            row("a", 2, 0, 2.0e-7),
        ];
        let mut shuffled = rows.clone();
        shuffled.reverse();
        let (p1, p2) = (dir.path().join("r1.csv"), dir.path().join("r2.csv"));
        write_results_csv(&p1, &rows).unwrap();
        write_results_csv(&p2, &shuffled).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        let back = read_results_csv(&p1).unwrap();
        let mut expect = rows.clone();
        expect.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        assert_eq!(back, expect);
        assert_eq!(back[0].run_id, "a");
        assert_eq!((back[0].horizon, back[0].seed), (2, 0));
    }

    #[test]
    fn results_six_significant_digits() {
        assert_eq!(fmt_sig6(1.2345678), "1.23457e0");
        assert_eq!(fmt_sig6(0.000123456789), "1.23457e-4");
        assert_eq!(
            results_csv_string(&[]),
            "run_id,alpha,horizon,bins,seed,readout,split,mse\n"
        );
    }

    #[test]
    fn windowed_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        fs::write(&p, "f0,f1,f2,label\n0.1,0.2,0.3,1\n1,2,3,0\n").unwrap();
        let d = load_windowed_csv(&p).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.row(1), &[1.0, 2.0, 3.0]);
        assert_eq!(d.labels, vec![1, 0]);
        let q = dir.path().join("w2.csv");
        write_windowed_csv(&q, &d).unwrap();
        assert_eq!(load_windowed_csv(&q).unwrap(), d);

        fs::write(&p, "f0,f1,f2,label\n0.1,0.2,0.3,1\n1,2,0\n").unwrap();
        match load_windowed_csv(&p) {
            Err(FglError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&p, "f0,f1,label\n0.1,x,1\n").unwrap();
        assert!(matches!(load_windowed_csv(&p), Err(FglError::Parse { line: 2, .. })));
        fs::write(&p, "0.1,0.2,1\n").unwrap();
        assert!(matches!(load_windowed_csv(&p), Err(FglError::Parse { line: 1, .. })));
        fs::write(&p, "").unwrap();
        assert!(matches!(load_windowed_csv(&p), Err(FglError::EmptyDataset(_))));
    }

    #[test]
    fn trajectory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mg.csv");
        let t = Trajectory {
            values: vec![0.9, 0.1 + 0.2, 1e-300],
            dt: 1.0,
        };
        let params = MgParams::default();
        write_trajectory(&p, &t, &params).unwrap();
        assert_eq!(read_trajectory(&p).unwrap(), t.values);
        assert_eq!(read_params_sidecar(&p).unwrap(), params);
        assert!(fs::read_to_string(&p).unwrap().starts_with("value\n0.9\n"));
    }

    #[test]
    fn scored_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "score,label\n0.1,0\n0.4,0\n0.35,1\n0.8,1\n").unwrap();
        let d = load_scored_labels(&p).unwrap();
        assert_eq!(crate::metrics::auc_roc(&d).unwrap(), 0.75);
        fs::write(&p, "score,label\n0.1,2\n").unwrap();
        assert!(matches!(load_scored_labels(&p), Err(FglError::Parse { line: 2, .. })));
    }

    #[test]
    fn adapted_and_alarm_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let rows = vec![
            AdaptedRow {
                row: row("a", 2, 0, 1.0),
                adapted: true,
            },
            AdaptedRow {
                row: row("a", 2, 0, 2.0),
                adapted: false,
            },
        ];
        write_adapted_csv(&p, &rows).unwrap();
        let back = read_adapted_csv(&p).unwrap();
        assert_eq!(back, vec![rows[1].clone(), rows[0].clone()]);

        let log = dir.path().join("alarms.csv");
        write_alarm_log(
            &log,
            &[AlarmRecord {
                stream_index: 7,
                s: 3.5,
                s_min: -1.0,
                action: AlarmAction::Retrain,
            }],
        )
        .unwrap();
        assert_eq!(
            fs::read_to_string(&log).unwrap(),
            "stream_index,S,S_min,action\n7,3.50000e0,-1.00000e0,retrain\n"
        );
    }

    #[test]
    fn manifest_roundtrip() {
        let mut m = ExperimentManifest::default();
        m.bin_specs.push(BinSpec::new(25, 0.2, 1.4).unwrap());
        m.data_hash = Some("abc".into());
        m.drift.thresholds[0].lambda = f64::INFINITY;
        let text = m.to_toml().unwrap();
        assert_eq!(ExperimentManifest::from_toml(&text).unwrap(), m);
        m.validate().unwrap();
        assert_eq!(m.drift.params_for(25).lambda, f64::INFINITY);
        assert_eq!(m.drift.params_for(50).delta, 5.78);
        let bad = ExperimentManifest {
            horizons: vec![1],
            ..ExperimentManifest::default()
        };
        assert!(bad.validate().is_err());
    }
}
