//! The experiment grid: for every bin count, student horizon, variant and
//! seed, generate and split the series, fit bins on the training split,
//! train the next-step teacher (shared per bin count and seed), train the
//! student and evaluate its test MSE under each readout. The drift
//! experiment replays the test stream of every trained student through the
//! Page–Hinkley protocol.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::dataio::{self, AdaptedRow, ChangeRow, ExperimentManifest, ResultRow, SummaryRow};
use crate::drift::{drift_run, AlarmRecord, Stream};
use crate::error::{FglError, Result};
use crate::fgl::{
    build_paired_dataset, evaluate_mse, train_student, train_teacher, FglConfig, PairedDataset, StudentData,
    TrainConfig,
};
use crate::mackey_glass::{generate, make_windows, split, Splits};
use crate::metrics::mean_std;
use crate::neural::{ForecastModel, ModelConfig};
use crate::parallel::{map_items, with_pool};
use crate::quantizer::{fit_bins, BinSpec, Readout};

/// A student training recipe within the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    /// Cross-entropy only, no teacher forward pass.
    Baseline,
    Fgl {
        alpha: f64,
    },
}

impl Variant {
    pub fn alpha(self) -> f64 {
        match self {
            Variant::Baseline => 1.0,
            Variant::Fgl { alpha } => alpha,
        }
    }

    pub fn run_id(self, bins: usize) -> String {
        match self {
            Variant::Baseline => format!("b{bins}-baseline"),
            Variant::Fgl { alpha } => format!("b{bins}-fgl-a{alpha}"),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Baseline => write!(f, "baseline"),
            Variant::Fgl { alpha } => write!(f, "fgl(alpha={alpha})"),
        }
    }
}

pub fn variants(manifest: &ExperimentManifest) -> Vec<Variant> {
    let mut v = Vec::new();
    if manifest.include_baseline {
        v.push(Variant::Baseline);
    }
    v.extend(manifest.alphas.iter().map(|&alpha| Variant::Fgl { alpha }));
    v
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the teacher for one (bins, seed) pair.
pub fn teacher_seed(bins: usize, seed: u64) -> u64 {
    mix(seed, bins as u64)
}

/// Seed of a student; it does not depend on the variant, so a student with
/// `alpha = 1` replays the baseline exactly.
pub fn student_seed(bins: usize, horizon: usize, seed: u64) -> u64 {
    mix(mix(seed, bins as u64), 1000 + horizon as u64)
}

/// The generated series and its chronological splits.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub series: Vec<f64>,
    pub splits: Splits,
    pub data_hash: String,
}

/// Generates the series and checks it against the manifest's recorded hash.
pub fn prepare_data(manifest: &ExperimentManifest) -> Result<PreparedData> {
    manifest.validate()?;
    let series = generate(&manifest.mg)?.values;
    let data_hash = dataio::series_hash(&series);
    if let Some(expected) = &manifest.data_hash {
        if *expected != data_hash {
            return Err(FglError::config(format!(
                "generated series hash {data_hash} does not match manifest hash {expected}"
            )));
        }
    }
    let splits = split(&series, &manifest.split)?;
    Ok(PreparedData {
        series,
        splits,
        data_hash,
    })
}

/// Fits the bin spec for `bins` and checks it against any recorded spec.
pub fn bin_spec_for(manifest: &ExperimentManifest, data: &PreparedData, bins: usize) -> Result<BinSpec> {
    let spec = fit_bins(&data.splits.train, bins)?;
    if let Some(recorded) = manifest.bin_specs.iter().find(|b| b.bins == bins) {
        if *recorded != spec {
            return Err(FglError::config(format!(
                "fitted bins {spec:?} differ from manifest {recorded:?}"
            )));
        }
    }
    Ok(spec)
}

/// A trained student and where it sits in the grid.
#[derive(Debug, Clone)]
pub struct CellModel {
    pub variant: Variant,
    pub bins: BinSpec,
    pub horizon: usize,
    pub seed: u64,
    pub model: ForecastModel,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub run_id: String,
    pub bins: usize,
    pub horizon: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct GridOutput {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
    pub cells: Vec<CellModel>,
    /// The manifest with data hash and bin specs filled in.
    pub manifest: ExperimentManifest,
}

#[derive(Debug, Clone, Copy)]
struct CellKey {
    variant: Variant,
    bins: usize,
    horizon: usize,
    seed: u64,
}

struct HorizonData {
    horizon: usize,
    train: PairedDataset,
    val: PairedDataset,
    test: PairedDataset,
}

fn horizon_data(data: &PreparedData, lookback: usize, horizon: usize) -> Result<HorizonData> {
    Ok(HorizonData {
        horizon,
        train: build_paired_dataset(&data.splits.train, lookback, horizon)?,
        val: build_paired_dataset(&data.splits.val, lookback, horizon)?,
        test: build_paired_dataset(&data.splits.test, lookback, horizon)?,
    })
}

fn model_config(manifest: &ExperimentManifest, bins: usize) -> ModelConfig {
    ModelConfig { bins, ..manifest.model }
}

fn train_config(manifest: &ExperimentManifest, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..manifest.train }
}

fn test_rows(cell: &CellModel, test: &PairedDataset, readouts: &[Readout], run_id: &str) -> Result<Vec<ResultRow>> {
    let inputs = ndarray::ArrayView2::from_shape((test.len(), test.lookback), &test.student_inputs)
        .map_err(|e| FglError::config(e.to_string()))?;
    readouts
        .iter()
        .map(|&readout| {
            Ok(ResultRow {
                run_id: run_id.to_string(),
                alpha: cell.variant.alpha(),
                horizon: cell.horizon,
                bins: cell.bins.bins,
                seed: cell.seed,
                readout,
                split: "test".into(),
                mse: evaluate_mse(&cell.model, inputs, &test.targets, &cell.bins, readout)?,
            })
        })
        .collect()
}

/// Trains and evaluates the full grid. Cell failures are recorded and the
/// rest of the grid still runs.
pub fn run_experiment(manifest: &ExperimentManifest) -> Result<GridOutput> {
    let data = prepare_data(manifest)?;
    with_pool(manifest.threads, || run_grid(manifest, &data))
}

fn run_grid(manifest: &ExperimentManifest, data: &PreparedData) -> Result<GridOutput> {
    let specs: Vec<BinSpec> = manifest
        .bins
        .iter()
        .map(|&b| bin_spec_for(manifest, data, b))
        .collect::<Result<_>>()?;
    let lookback = manifest.lookback;
    let teacher_train = make_windows(&data.splits.train, lookback, 1)?;
    let teacher_val = make_windows(&data.splits.val, lookback, 1)?;
    let per_horizon: Vec<HorizonData> = manifest
        .horizons
        .iter()
        .map(|&h| horizon_data(data, lookback, h))
        .collect::<Result<_>>()?;
    let variants = variants(manifest);
    let needs_teacher = variants.iter().any(|v| matches!(v, Variant::Fgl { .. }));

    // teachers, one per (bins, seed)
    let teacher_keys: Vec<(BinSpec, u64)> = specs
        .iter()
        .flat_map(|s| manifest.seeds.iter().map(move |&seed| (*s, seed)))
        .collect();
    let teachers: BTreeMap<(usize, u64), std::result::Result<ForecastModel, String>> = if needs_teacher {
        let trained = map_items(teacher_keys.clone(), |(spec, seed)| {
            train_teacher(
                &teacher_train,
                &teacher_val,
                &spec,
                &model_config(manifest, spec.bins),
                &train_config(manifest, teacher_seed(spec.bins, seed)),
            )
            .map(|o| o.model)
            .map_err(|e| format!("teacher: {e}"))
        });
        teacher_keys
            .iter()
            .map(|(s, seed)| (s.bins, *seed))
            .zip(trained)
            .collect()
    } else {
        BTreeMap::new()
    };

    let mut keys = Vec::new();
    for &bins in &manifest.bins {
        for &horizon in &manifest.horizons {
            for &variant in &variants {
                for &seed in &manifest.seeds {
                    keys.push(CellKey {
                        variant,
                        bins,
                        horizon,
                        seed,
                    });
                }
            }
        }
    }

    let results = map_items(
        keys.clone(),
        |key| -> std::result::Result<(CellModel, Vec<ResultRow>), String> {
            let spec = specs
                .iter()
                .find(|s| s.bins == key.bins)
                .expect("spec fitted for every bin count");
            let hd = per_horizon
                .iter()
                .find(|h| h.horizon == key.horizon)
                .expect("data built for every horizon");
            let teacher = match key.variant {
                Variant::Baseline => None,
                Variant::Fgl { .. } => Some(teachers[&(key.bins, key.seed)].as_ref().map_err(Clone::clone)?),
            };
            let fgl =
                FglConfig::new(key.variant.alpha(), manifest.temperature, key.horizon).map_err(|e| e.to_string())?;
            let outcome = train_student(
                StudentData {
                    train: &hd.train,
                    val: &hd.val,
                    bins: spec,
                },
                teacher,
                &fgl,
                &model_config(manifest, key.bins),
                &train_config(manifest, student_seed(key.bins, key.horizon, key.seed)),
            )
            .map_err(|e| e.to_string())?;
            let cell = CellModel {
                variant: key.variant,
                bins: *spec,
                horizon: key.horizon,
                seed: key.seed,
                model: outcome.model,
                best_epoch: outcome.best_epoch,
            };
            let rows = test_rows(&cell, &hd.test, &manifest.readouts, &key.variant.run_id(key.bins))
                .map_err(|e| e.to_string())?;
            Ok((cell, rows))
        },
    );

    let mut out = GridOutput {
        rows: Vec::new(),
        failures: Vec::new(),
        cells: Vec::new(),
        manifest: ExperimentManifest {
            data_hash: Some(data.data_hash.clone()),
            bin_specs: specs.clone(),
            ..manifest.clone()
        },
    };
    for (key, res) in keys.into_iter().zip(results) {
        match res {
            Ok((cell, rows)) => {
                out.rows.extend(rows);
                out.cells.push(cell);
            }
            Err(message) => out.failures.push(CellFailure {
                run_id: key.variant.run_id(key.bins),
                bins: key.bins,
                horizon: key.horizon,
                seed: key.seed,
                message,
            }),
        }
    }
    Ok(out)
}

/// Mean and standard deviation over seeds for every (variant, bins,
/// horizon, readout), plus one `Avg` row per variant and readout: the mean
/// of the per-horizon means, with the standard deviation of the per-seed
/// horizon averages.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    type CellKey = (String, usize, Readout, usize);
    type VariantKey = (String, usize, Readout);
    // alpha and (seed, mse) pairs per cell
    let mut cells: BTreeMap<CellKey, (f64, Vec<(u64, f64)>)> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.run_id.clone(), r.bins, r.readout, r.horizon))
            .or_insert_with(|| (r.alpha, Vec::new()))
            .1
            .push((r.seed, r.mse));
    }
    let mut out = Vec::new();
    // alpha, per-horizon means and per-seed MSEs per variant
    #[allow(clippy::type_complexity)]
    let mut per_variant: BTreeMap<VariantKey, (f64, Vec<f64>, BTreeMap<u64, Vec<f64>>)> = BTreeMap::new();
    for ((run_id, bins, readout, horizon), (alpha, values)) in &cells {
        let mses: Vec<f64> = values.iter().map(|v| v.1).collect();
        let (mean, std) = mean_std(&mses);
        out.push(SummaryRow {
            run_id: run_id.clone(),
            alpha: *alpha,
            bins: *bins,
            horizon: Some(*horizon),
            readout: *readout,
            mean_mse: mean,
            std_mse: std,
            n: mses.len(),
        });
        let entry = per_variant
            .entry((run_id.clone(), *bins, *readout))
            .or_insert_with(|| (*alpha, Vec::new(), BTreeMap::new()));
        entry.1.push(mean);
        for (seed, mse) in values {
            entry.2.entry(*seed).or_default().push(*mse);
        }
    }
    for ((run_id, bins, readout), (alpha, means, by_seed)) in per_variant {
        let avg = means.iter().sum::<f64>() / means.len() as f64;
        let seed_avgs: Vec<f64> = by_seed
            .values()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .collect();
        out.push(SummaryRow {
            run_id,
            alpha,
            bins,
            horizon: None,
            readout,
            mean_mse: avg,
            std_mse: mean_std(&seed_avgs).1,
            n: seed_avgs.len(),
        });
    }
    out
}

/// Writes `results.csv`, `summary.csv`, the completed `manifest.toml` and,
/// when cells failed, `failures.csv`.
pub fn write_grid(out_dir: &Path, grid: &GridOutput) -> Result<()> {
    dataio::write_results_csv(&out_dir.join("results.csv"), &grid.rows)?;
    dataio::write_summary_csv(&out_dir.join("summary.csv"), &summarize(&grid.rows))?;
    grid.manifest.save(&out_dir.join("manifest.toml"))?;
    if !grid.failures.is_empty() {
        let mut text = String::from("run_id,bins,horizon,seed,message\n");
        for f in &grid.failures {
            text.push_str(&format!(
                "{},{},{},{},\"{}\"\n",
                f.run_id,
                f.bins,
                f.horizon,
                f.seed,
                f.message.replace('"', "'")
            ));
        }
        std::fs::write(out_dir.join("failures.csv"), text)
            .map_err(|e| FglError::io(out_dir.join("failures.csv"), e))?;
    }
    Ok(())
}

/// Drift adaptation results for one trained student and readout.
#[derive(Debug, Clone)]
pub struct DriftCell {
    pub run_id: String,
    pub variant: Variant,
    pub bins: usize,
    pub horizon: usize,
    pub seed: u64,
    pub readout: Readout,
    pub mse_before: f64,
    pub mse_after: f64,
    pub alarms: Vec<AlarmRecord>,
}

impl DriftCell {
    pub fn log_name(&self) -> String {
        format!(
            "{}-h{}-s{}-{}.csv",
            self.run_id,
            self.horizon,
            self.seed,
            self.readout.as_str()
        )
    }
}

#[derive(Debug, Clone)]
pub struct DriftOutput {
    pub cells: Vec<DriftCell>,
    pub failures: Vec<CellFailure>,
}

impl DriftOutput {
    pub fn adapted_rows(&self) -> Vec<AdaptedRow> {
        self.cells
            .iter()
            .flat_map(|c| {
                [(false, c.mse_before), (true, c.mse_after)].map(|(adapted, mse)| AdaptedRow {
                    row: ResultRow {
                        run_id: c.run_id.clone(),
                        alpha: c.variant.alpha(),
                        horizon: c.horizon,
                        bins: c.bins,
                        seed: c.seed,
                        readout: c.readout,
                        split: "test".into(),
                        mse,
                    },
                    adapted,
                })
            })
            .collect()
    }

    pub fn change_rows(&self) -> Vec<ChangeRow> {
        self.cells
            .iter()
            .map(|c| ChangeRow {
                run_id: c.run_id.clone(),
                horizon: c.horizon,
                bins: c.bins,
                seed: c.seed,
                readout: c.readout,
                mse_before: c.mse_before,
                mse_after: c.mse_after,
                alarms: c.alarms.len(),
            })
            .collect()
    }
}

/// Runs the same Page–Hinkley protocol over the test stream of every
/// trained student.
pub fn run_drift_experiment(manifest: &ExperimentManifest, grid: &GridOutput) -> Result<DriftOutput> {
    let data = prepare_data(manifest)?;
    with_pool(manifest.threads, || {
        let mut jobs = Vec::new();
        for cell in &grid.cells {
            for &readout in &manifest.readouts {
                jobs.push((cell, readout));
            }
        }
        let results = map_items(jobs.clone(), |(cell, readout)| -> Result<DriftCell> {
            let test = build_paired_dataset(&data.splits.test, manifest.lookback, cell.horizon)?;
            let inputs = ndarray::ArrayView2::from_shape((test.len(), test.lookback), &test.student_inputs)
                .map_err(|e| FglError::config(e.to_string()))?;
            let stream = Stream {
                inputs,
                targets: &test.targets,
                bins: &cell.bins,
                readout,
            };
            let ph = manifest.drift.params_for(cell.bins.bins);
            let cfg = train_config(manifest, student_seed(cell.bins.bins, cell.horizon, cell.seed));
            let outcome = drift_run(&cell.model, &stream, &ph, &cfg)?;
            Ok(DriftCell {
                run_id: cell.variant.run_id(cell.bins.bins),
                variant: cell.variant,
                bins: cell.bins.bins,
                horizon: cell.horizon,
                seed: cell.seed,
                readout,
                mse_before: outcome.mse_before,
                mse_after: outcome.mse_after,
                alarms: outcome.alarms,
            })
        });
        let mut out = DriftOutput {
            cells: Vec::new(),
            failures: Vec::new(),
        };
        for ((cell, _), res) in jobs.into_iter().zip(results) {
            match res {
                Ok(c) => out.cells.push(c),
                Err(e) => out.failures.push(CellFailure {
                    run_id: cell.variant.run_id(cell.bins.bins),
                    bins: cell.bins.bins,
                    horizon: cell.horizon,
                    seed: cell.seed,
                    message: e.to_string(),
                }),
            }
        }
        Ok(out)
    })
}

/// Writes `adapted_results.csv`, `percent_change.csv` and one alarm log per
/// cell under `alarms/`.
pub fn write_drift(out_dir: &Path, drift: &DriftOutput) -> Result<()> {
    dataio::write_adapted_csv(&out_dir.join("adapted_results.csv"), &drift.adapted_rows())?;
    dataio::write_change_report(&out_dir.join("percent_change.csv"), &drift.change_rows())?;
    for c in &drift.cells {
        dataio::write_alarm_log(&out_dir.join("alarms").join(c.log_name()), &c.alarms)?;
    }
    Ok(())
}

/// Per-horizon mean MSE over seeds for one variant, bin count and readout.
pub fn horizon_means(rows: &[ResultRow], run_id: &str, readout: Readout) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.run_id == run_id && r.readout == readout) {
        acc.entry(r.horizon).or_default().push(r.mse);
    }
    acc.into_iter()
        .map(|(h, v)| (h, v.iter().sum::<f64>() / v.len() as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_manifest() -> ExperimentManifest {
        let mut m = ExperimentManifest::default();
        m.mg.length = 600;
        m.model.hidden = 6;
        m.model.layers = 1;
        m.train.epochs = 2;
        m.train.batch_size = 64;
        m.train.lr = 1e-3;
        m.bins = vec![5];
        m.horizons = vec![2, 3];
        m.seeds = vec![0, 1];
        m.alphas = vec![0.0, 1.0];
        m
    }

    #[test]
    fn grid_shape_and_alpha_one_matches_baseline() {
        let m = tiny_manifest();
        let grid = run_experiment(&m).unwrap();
        assert!(grid.failures.is_empty());
        // bins x horizons x variants x seeds x readouts
        assert_eq!(grid.rows.len(), 2 * 3 * 2 * 2);
        let base: Vec<_> = grid.rows.iter().filter(|r| r.run_id == "b5-baseline").collect();
        let smoke: Vec<_> = grid.rows.iter().filter(|r| r.run_id == "b5-fgl-a1").collect();
        assert_eq!(base.len(), smoke.len());
        for (a, b) in base.iter().zip(&smoke) {
            assert_eq!(
                (a.horizon, a.seed, a.readout, a.alpha),
                (b.horizon, b.seed, b.readout, b.alpha)
            );
            assert_eq!(a.mse.to_bits(), b.mse.to_bits());
        }
        let summary = summarize(&grid.rows);
        // 3 variants x 2 readouts x (2 horizons + Avg)
        assert_eq!(summary.len(), 3 * 2 * 3);
        assert_eq!(grid.manifest.bin_specs.len(), 1);
    }

    #[test]
    fn manifest_hash_mismatch_is_rejected() {
        let mut m = tiny_manifest();
        m.data_hash = Some("0".repeat(64));
        assert!(matches!(run_experiment(&m), Err(FglError::Config(_))));
    }

    #[test]
    fn infinite_threshold_leaves_forecasts_unchanged() {
        let mut m = tiny_manifest();
        m.alphas = vec![0.5];
        m.seeds = vec![0];
        m.horizons = vec![2];
        for t in &mut m.drift.thresholds {
            t.lambda = f64::INFINITY;
        }
        m.drift.thresholds.push(dataio::PhThreshold {
            bins: 5,
            delta: 0.1,
            lambda: f64::INFINITY,
        });
        let grid = run_experiment(&m).unwrap();
        let drift = run_drift_experiment(&m, &grid).unwrap();
        assert_eq!(drift.cells.len(), 2 * 2);
        for row in drift.change_rows() {
            assert_eq!(row.percent_change(), 0.0);
            assert_eq!(row.alarms, 0);
        }
    }

    #[test]
    fn summary_avg_row() {
        let row = |h: usize, seed: u64, mse: f64| ResultRow {
            run_id: "x".into(),
            alpha: 0.5,
            horizon: h,
            bins: 25,
            seed,
            readout: Readout::Argmax,
            split: "test".into(),
            mse,
        };
        let rows = vec![row(2, 0, 1.0), row(2, 1, 3.0), row(5, 0, 5.0), row(5, 1, 7.0)];
        let s = summarize(&rows);
        let avg = s.iter().find(|r| r.horizon.is_none()).unwrap();
        assert_eq!(avg.mean_mse, 4.0);
        // per-seed averages 3 and 5
        assert!((avg.std_mse - 2f64.sqrt()).abs() < 1e-12);
        let h2 = s.iter().find(|r| r.horizon == Some(2)).unwrap();
        assert_eq!((h2.mean_mse, h2.n), (2.0, 2));
    }
}
