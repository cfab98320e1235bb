//! Command-line front end for the forecasting toolkit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fgl_core::dataio::{self, ExperimentManifest, ResultRow};
use fgl_core::fgl::{build_paired_dataset, train_student, train_teacher, FglConfig, StudentData};
use fgl_core::harness::{self, GridOutput};
use fgl_core::mackey_glass::{generate, make_windows, split, Splits};
use fgl_core::metrics;
use fgl_core::neural::checkpoint;
use fgl_core::neural::ModelConfig;
use fgl_core::pcoding::{self, Generative, PcModel};
use fgl_core::quantizer::{fit_bins, BinSpec, Readout};
use fgl_core::{FglError, Result};

#[derive(Parser)]
#[command(
    name = "fgl",
    version,
    about = "Future-guided learning for chaotic time-series forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a Mackey–Glass trajectory and write it as CSV.
    Generate {
        #[command(flatten)]
        opts: Opts,
    },
    /// Train the next-step teacher and save its checkpoint.
    TrainTeacher {
        #[command(flatten)]
        opts: Opts,
        /// Trajectory CSV to train on instead of a freshly generated series.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train one student (or the baseline when no teacher is given).
    TrainStudent {
        #[command(flatten)]
        opts: Opts,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Teacher checkpoint; without it the student is the baseline.
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Train students over a list of alphas and report test MSE.
    Sweep {
        #[command(flatten)]
        opts: Opts,
    },
    /// Summarize a results CSV, or score a `score,label` CSV.
    Evaluate {
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train the grid, then replay every test stream with Page–Hinkley retraining.
    Drift {
        #[command(flatten)]
        opts: Opts,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Simulate a scalar predictive-coding node and print its relaxation trace.
    PcSim(PcArgs),
    /// Train and evaluate the full experiment grid.
    Run {
        #[command(flatten)]
        opts: Opts,
    },
}

/// Settings shared by the training commands. Values given here override
/// the manifest.
#[derive(Args, Clone, Default)]
struct Opts {
    /// Experiment manifest (TOML); defaults apply when absent.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Start from the reduced single-machine preset (hidden 64, 30 epochs,
    /// lr 3e-4, temperature 2) instead of the full-scale defaults.
    #[arg(long, conflicts_with = "manifest")]
    desk: bool,
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    bins: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    horizon: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Readout used for point forecasts (default: both).
    #[arg(long)]
    readout: Option<Readout>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Series length.
    #[arg(long)]
    length: Option<usize>,
    /// Worker threads for the grid.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PcArgs {
    #[arg(long, default_value_t = 1.0)]
    v_p: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_p: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_u: f64,
    #[arg(long, default_value_t = 0.0)]
    phi: f64,
    #[arg(long, default_value_t = 2.0)]
    u: f64,
    /// Gain `a` of `g(phi) = a * phi`; identity when absent.
    #[arg(long)]
    gain: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    /// Write the trace here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Opts {
    fn manifest(&self) -> Result<ExperimentManifest> {
        let mut m = match &self.manifest {
            Some(p) => ExperimentManifest::load(p)?,
            None if self.desk => ExperimentManifest::desk_scale(),
            None => ExperimentManifest::default(),
        };
        let overridden = !self.bins.is_empty() || self.length.is_some();
        if !self.seed.is_empty() {
            m.seeds = self.seed.clone();
        }
        if !self.bins.is_empty() {
            m.bins = self.bins.clone();
        }
        if !self.horizon.is_empty() {
            m.horizons = self.horizon.clone();
        }
        if !self.alpha.is_empty() {
            m.alphas = self.alpha.clone();
        }
        if let Some(t) = self.temperature {
            m.temperature = t;
        }
        if let Some(r) = self.readout {
            m.readouts = vec![r];
        }
        if let Some(e) = self.epochs {
            m.train.epochs = e;
        }
        if let Some(h) = self.hidden {
            m.model.hidden = h;
        }
        if let Some(lr) = self.lr {
            m.train.lr = lr;
        }
        if let Some(n) = self.length {
            m.mg.length = n;
        }
        if self.threads.is_some() {
            m.threads = self.threads;
        }
        if overridden {
            // recorded data no longer applies
            m.data_hash = None;
            m.bin_specs.clear();
        }
        m.validate()?;
        Ok(m)
    }
}

fn series(manifest: &ExperimentManifest, data: Option<&Path>) -> Result<Splits> {
    let values = match data {
        Some(p) => dataio::read_trajectory(p)?,
        None => generate(&manifest.mg)?.values,
    };
    split(&values, &manifest.split)
}

fn model_config(m: &ExperimentManifest, bins: usize) -> ModelConfig {
    ModelConfig { bins, ..m.model }
}

fn single<T: Copy + std::fmt::Debug>(values: &[T], what: &str) -> Result<T> {
    match values {
        [v] => Ok(*v),
        _ => Err(FglError::Config(format!("expected exactly one {what}, got {values:?}"))),
    }
}

fn save_bins(path: &Path, spec: &BinSpec) -> Result<()> {
    let text = toml::to_string(spec).map_err(|e| FglError::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| FglError::Io {
        path: path.into(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| FglError::Io {
        path: dir.into(),
        source: e,
    })
}

fn cmd_generate(opts: &Opts) -> Result<()> {
    let m = opts.manifest()?;
    create_dir(&opts.out)?;
    let traj = generate(&m.mg)?;
    let path = opts.out.join("mackey_glass.csv");
    dataio::write_trajectory(&path, &traj, &m.mg)?;
    println!("wrote {} values to {}", traj.len(), path.display());
    Ok(())
}

fn cmd_train_teacher(opts: &Opts, data: Option<&Path>) -> Result<()> {
    let m = opts.manifest()?;
    let bins = single(&m.bins, "bin count")?;
    let seed = single(&m.seeds, "seed")?;
    let splits = series(&m, data)?;
    let spec = fit_bins(&splits.train, bins)?;
    let train = make_windows(&splits.train, m.lookback, 1)?;
    let val = make_windows(&splits.val, m.lookback, 1)?;
    let cfg = fgl_core::fgl::TrainConfig {
        seed: harness::teacher_seed(bins, seed),
        ..m.train
    };
    let outcome = train_teacher(&train, &val, &spec, &model_config(&m, bins), &cfg)?;
    create_dir(&opts.out)?;
    let path = opts.out.join(format!("teacher-b{bins}-s{seed}.ckpt"));
    checkpoint::save(&outcome.model, &path)?;
    save_bins(&opts.out.join(format!("bins-b{bins}.toml")), &spec)?;
    println!(
        "teacher saved to {} (best epoch {}, val CE {:.6})",
        path.display(),
        outcome.best_epoch,
        outcome.best_val_loss
    );
    Ok(())
}

fn cmd_train_student(opts: &Opts, data: Option<&Path>, teacher: Option<&Path>) -> Result<()> {
    let m = opts.manifest()?;
    let bins = single(&m.bins, "bin count")?;
    let seed = single(&m.seeds, "seed")?;
    let horizon = single(&m.horizons, "horizon")?;
    let teacher = teacher.map(checkpoint::load).transpose()?;
    let alpha = match (&teacher, m.alphas.as_slice()) {
        (None, _) => 1.0,
        (Some(_), [a]) => *a,
        (Some(_), other) => return Err(FglError::Config(format!("expected exactly one alpha, got {other:?}"))),
    };
    let splits = series(&m, data)?;
    let spec = fit_bins(&splits.train, bins)?;
    let train = build_paired_dataset(&splits.train, m.lookback, horizon)?;
    let val = build_paired_dataset(&splits.val, m.lookback, horizon)?;
    let test = build_paired_dataset(&splits.test, m.lookback, horizon)?;
    let fgl = FglConfig::new(alpha, m.temperature, horizon)?;
    let cfg = fgl_core::fgl::TrainConfig {
        seed: harness::student_seed(bins, horizon, seed),
        ..m.train
    };
    let outcome = train_student(
        StudentData {
            train: &train,
            val: &val,
            bins: &spec,
        },
        teacher.as_ref(),
        &fgl,
        &model_config(&m, bins),
        &cfg,
    )?;
    let variant = if teacher.is_some() {
        harness::Variant::Fgl { alpha }
    } else {
        harness::Variant::Baseline
    };
    let run_id = variant.run_id(bins);
    create_dir(&opts.out)?;
    let path = opts.out.join(format!("{run_id}-h{horizon}-s{seed}.ckpt"));
    checkpoint::save(&outcome.model, &path)?;
    let inputs = ndarray::ArrayView2::from_shape((test.len(), test.lookback), &test.student_inputs)
        .map_err(|e| FglError::Config(e.to_string()))?;
    let rows: Vec<ResultRow> = m
        .readouts
        .iter()
        .map(|&readout| {
            Ok(ResultRow {
                run_id: run_id.clone(),
                alpha,
                horizon,
                bins,
                seed,
                readout,
                split: "test".into(),
                mse: fgl_core::fgl::evaluate_mse(&outcome.model, inputs, &test.targets, &spec, readout)?,
            })
        })
        .collect::<Result<_>>()?;
    dataio::write_results_csv(&opts.out.join(format!("{run_id}-h{horizon}-s{seed}.csv")), &rows)?;
    for r in &rows {
        println!(
            "{} h={} seed={} {} test MSE {}",
            r.run_id,
            r.horizon,
            r.seed,
            r.readout.as_str(),
            dataio::fmt_sig6(r.mse)
        );
    }
    Ok(())
}

fn report_grid(out: &Path, grid: &GridOutput) -> Result<bool> {
    create_dir(out)?;
    harness::write_grid(out, grid)?;
    for s in harness::summarize(&grid.rows).iter().filter(|s| s.horizon.is_none()) {
        println!(
            "{:<20} {:<12} avg test MSE {} (std {})",
            s.run_id,
            s.readout.as_str(),
            dataio::fmt_sig6(s.mean_mse),
            dataio::fmt_sig6(s.std_mse)
        );
    }
    for f in &grid.failures {
        eprintln!(
            "cell {} h={} seed={} failed: {}",
            f.run_id, f.horizon, f.seed, f.message
        );
    }
    println!("results written to {}", out.display());
    Ok(grid.failures.is_empty())
}

fn cmd_run(opts: &Opts) -> Result<bool> {
    let m = opts.manifest()?;
    let grid = harness::run_experiment(&m)?;
    report_grid(&opts.out, &grid)
}

fn cmd_sweep(opts: &Opts) -> Result<bool> {
    let mut m = opts.manifest()?;
    if opts.alpha.is_empty() {
        m.alphas = vec![0.0, 0.25, 0.5, 0.75, 1.0];
    }
    let grid = harness::run_experiment(&m)?;
    report_grid(&opts.out, &grid)
}

fn cmd_drift(opts: &Opts, delta: Option<f64>, lambda: Option<f64>) -> Result<bool> {
    let mut m = opts.manifest()?;
    for t in &mut m.drift.thresholds {
        t.delta = delta.unwrap_or(t.delta);
        t.lambda = lambda.unwrap_or(t.lambda);
    }
    for &b in &m.bins {
        if !m.drift.thresholds.iter().any(|t| t.bins == b) {
            let p = m.drift.params_for(b);
            m.drift.thresholds.push(dataio::PhThreshold {
                bins: b,
                delta: delta.unwrap_or(p.delta),
                lambda: lambda.unwrap_or(p.lambda),
            });
        }
    }
    let grid = harness::run_experiment(&m)?;
    let ok = report_grid(&opts.out, &grid)?;
    let drift = harness::run_drift_experiment(&m, &grid)?;
    harness::write_drift(&opts.out, &drift)?;
    for c in drift.change_rows() {
        println!(
            "{:<20} h={:<3} seed={} {:<12} MSE {} -> {} ({:+.2}%, {} alarms)",
            c.run_id,
            c.horizon,
            c.seed,
            c.readout.as_str(),
            dataio::fmt_sig6(c.mse_before),
            dataio::fmt_sig6(c.mse_after),
            c.percent_change(),
            c.alarms
        );
    }
    for f in &drift.failures {
        eprintln!(
            "drift cell {} h={} seed={} failed: {}",
            f.run_id, f.horizon, f.seed, f.message
        );
    }
    Ok(ok && drift.failures.is_empty())
}

fn cmd_evaluate(results: Option<&Path>, scores: Option<&Path>, out: &Path) -> Result<()> {
    if results.is_none() && scores.is_none() {
        return Err(FglError::Config("give --results and/or --scores".into()));
    }
    if let Some(path) = results {
        let rows = dataio::read_results_csv(path)?;
        create_dir(out)?;
        let dest = out.join("summary.csv");
        dataio::write_summary_csv(&dest, &harness::summarize(&rows))?;
        println!("summary of {} rows written to {}", rows.len(), dest.display());
    }
    if let Some(path) = scores {
        let data = dataio::load_scored_labels(path)?;
        let auc = metrics::auc_roc(&data)?;
        let op = metrics::youden_threshold(&data)?;
        println!("auc,threshold,sensitivity,fpr,youden_j");
        println!("{auc},{},{},{},{}", op.threshold, op.sensitivity, op.fpr, op.youden_j());
    }
    Ok(())
}

fn cmd_pc_sim(a: &PcArgs) -> Result<()> {
    let g = a.gain.map_or(Generative::Identity, Generative::Gain);
    let model = PcModel::new(a.v_p, a.sigma_p, a.sigma_u, a.phi, g)?;
    let (_, trace) = pcoding::relax_trace(&model, a.u, a.step, a.iters)?;
    let mut text = String::from("iteration,phi,eps_p,eps_u,free_energy\n");
    for s in &trace {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            s.iteration, s.phi, s.eps_p, s.eps_u, s.free_energy
        ));
    }
    match &a.out {
        Some(p) => std::fs::write(p, text).map_err(|e| FglError::Io {
            path: p.clone(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate { opts } => cmd_generate(opts).map(|_| true),
        Command::TrainTeacher { opts, data } => cmd_train_teacher(opts, data.as_deref()).map(|_| true),
        Command::TrainStudent { opts, data, teacher } => {
            cmd_train_student(opts, data.as_deref(), teacher.as_deref()).map(|_| true)
        }
        Command::Sweep { opts } => cmd_sweep(opts),
        Command::Evaluate { results, scores, out } => {
            cmd_evaluate(results.as_deref(), scores.as_deref(), out).map(|_| true)
        }
        Command::Drift { opts, delta, lambda } => cmd_drift(opts, *delta, *lambda),
        Command::PcSim(args) => cmd_pc_sim(args).map(|_| true),
        Command::Run { opts } => cmd_run(opts),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
