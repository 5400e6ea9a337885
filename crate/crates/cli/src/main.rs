mod overrides;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mrloc::archive::{load_model, save_model, Dataset};
use mrloc::dds::embedding_csv;
use mrloc::harness::{
    evaluate_dataset, evaluate_rmse, generate_dataset, predictions_csv, read_predictions_csv, run_sequential,
    run_sweep, spearman, train_dds, train_mrl, Method, ScenarioConfig, SweepAxis,
};
use mrloc::io::{read_pair_wav, write_rir_binary, write_rir_wav};
use mrloc::room::{schroeder_t60, simulate_rir};
use mrloc::rtf::extract_rtf;
use mrloc::Error;

/// Semi-supervised sound source localization experiments on simulated rooms.
#[derive(Debug, Parser)]
#[command(name = "mrloc", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario config (TOML); built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set room.t60=0.45`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Run seed; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// N = 400, T = 120, 3 s sources, and 50 rotations for sweeps.
    #[arg(long, global = true)]
    paper_scale: bool,
    /// Output directory.
    #[arg(long, global = true, env = "MRLOC_OUT_DIR", default_value = "mrloc-out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the impulse responses from one source azimuth to both microphones.
    SimulateRir {
        /// Source azimuth in degrees; the middle of the configured range by default.
        #[arg(long)]
        azimuth: Option<f64>,
    },
    /// Simulate a scenario and store its feature archive.
    GenDataset,
    /// Fit MRL on the training rows of a dataset and store the model.
    Train {
        /// Archive to train on; generated from the config when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Localize with a stored MRL model.
    Localize {
        #[arg(long)]
        model: PathBuf,
        /// The archive the model was trained on.
        #[arg(long)]
        dataset: PathBuf,
        /// Two-channel WAV to localize instead of the archive's test rows.
        #[arg(long)]
        pair: Option<PathBuf>,
    },
    /// Rotation-averaged RMSE over a T60 or SNR axis.
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values: milliseconds for t60, dB for snr.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
        /// Constellation rotations per value; 5, or 50 with --paper-scale.
        #[arg(long)]
        rotations: Option<usize>,
    },
    /// Sequential adaptation: localize a batch, adapt on it, repeat.
    Sequential {
        #[arg(long, default_value_t = 5)]
        cycles: usize,
        #[arg(long, default_value_t = 30)]
        batch: usize,
        /// 0°–180° with 19 labelled samples and no initial unlabelled pool.
        #[arg(long)]
        wide: bool,
        /// Initial unlabelled pool size; overrides `samples.train`.
        #[arg(long)]
        pool: Option<usize>,
    },
    /// Run every configured method on a dataset, or recompute RMSE from a
    /// stored predictions file.
    Evaluate {
        #[arg(long, conflicts_with = "predictions")]
        dataset: Option<PathBuf>,
        /// predictions.csv from an earlier run.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// report.json to check the recomputed RMSE against; defaults to the
        /// one beside the predictions file, if present.
        #[arg(long, requires = "predictions")]
        report: Option<PathBuf>,
    },
    /// Diffusion embedding of the training rows with their true azimuths.
    ExportEmbedding {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

/// Invalid invocation or configuration; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", &e.to_string(), 2),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<Usage>() {
                return fail("usage", &u.0, 2);
            }
            match e.downcast_ref::<Error>() {
                Some(Error::Config(msg)) => fail("config", msg, 2),
                Some(err) => fail(kind(err), &format!("{e:#}"), 1),
                None => fail("failure", &format!("{e:#}"), 1),
            }
        }
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!(
        "{}",
        json!({ "error": kind, "message": message.trim_end(), "exit_code": code })
    );
    ExitCode::from(code)
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Geometry(_) => "geometry",
        Error::InvalidParameter(_) => "invalid_parameter",
        Error::SampleRateMismatch(..) => "sample_rate_mismatch",
        Error::ZeroEnergy => "zero_energy",
        Error::SignalTooShort { .. } => "signal_too_short",
        Error::DegenerateBins { .. } => "degenerate_bins",
        Error::BandMismatch => "band_mismatch",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::Disconnected { .. } => "disconnected_graph",
        Error::ZeroDegree(_) => "zero_degree",
        Error::IllConditioned { .. } => "ill_conditioned",
        Error::VanishingEigenvalue { .. } => "vanishing_eigenvalue",
        Error::NoAffinity => "no_affinity",
        Error::NoPeak { .. } => "no_peak",
        Error::Empty(_) => "empty_input",
        Error::Format(_) => "format",
        Error::Config(_) => "config",
        Error::AtAzimuth { source, .. } => kind(source),
        Error::Io(_) => "io",
        Error::Wav(_) => "wav",
    }
}

/// Defaults, then the config file, then presets and the seed, then `--set`.
fn resolve_config(common: &Common) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ScenarioConfig::from_toml(&text)?
        }
        None => ScenarioConfig::default(),
    };
    if common.paper_scale {
        cfg = cfg.full_scale();
    }
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    Ok(overrides::apply(&cfg, &common.set)?)
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Output { dir: dir.to_path_buf() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn text(&self, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    fn json(&self, name: &str, value: &serde_json::Value) -> anyhow::Result<PathBuf> {
        self.text(name, &format!("{}\n", serde_json::to_string_pretty(value)?))
    }

    fn config(&self, cfg: &ScenarioConfig) -> anyhow::Result<PathBuf> {
        self.text("config.toml", &cfg.to_toml()?)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve_config(&cli.common)?;
    let out = Output::new(&cli.common.out)?;
    out.config(&cfg)?;
    let start = Instant::now();
    // a recomputation must not overwrite the report it is checked against
    let report_name = match &cli.command {
        Command::Evaluate {
            predictions: Some(_), ..
        } => "recomputed.json",
        _ => "report.json",
    };
    let summary = match cli.command {
        Command::SimulateRir { azimuth } => simulate(&cfg, azimuth, &out)?,
        Command::GenDataset => {
            let ds = generate_dataset(&cfg)?;
            let hash = ds.save(&out.path("dataset.bin"))?;
            out.text("dataset.csv", &ds.to_csv())?;
            json!({
                "command": "gen-dataset",
                "dataset_hash": hash,
                "config_hash": cfg.hash(),
                "train": ds.train_count(),
                "labelled": ds.labelled_count(),
                "test": ds.test().count(),
                "source": ds.metadata.source,
                "config": cfg,
            })
        }
        Command::Train { dataset } => train(&cfg, dataset.as_deref(), &out)?,
        Command::Localize { model, dataset, pair } => localize(&cfg, &model, &dataset, pair.as_deref(), &out)?,
        Command::Sweep {
            axis,
            values,
            rotations,
        } => {
            let rotations = rotations.unwrap_or(if cli.common.paper_scale { 50 } else { 5 });
            let values: Vec<f64> = match axis {
                SweepAxis::T60 => values.iter().map(|ms| ms / 1000.0).collect(),
                SweepAxis::Snr => values,
            };
            let report = run_sweep(&cfg, axis, &values, rotations)?;
            out.text("sweep.csv", &report.to_csv())?;
            out.text("sweep.dat", &report.to_gnuplot())?;
            out.json("sweep.json", &serde_json::to_value(&report)?)?;
            let failed: usize = report.rows.iter().map(|r| r.failed_cells).sum();
            json!({
                "command": "sweep",
                "config_hash": report.config_hash,
                "axis": axis,
                "values": report.values,
                "rotations": report.rotations,
                "rows": report.rows,
                "failed_cells": failed,
                "seconds": report.seconds,
                "config": cfg,
            })
        }
        Command::Sequential {
            cycles,
            batch,
            wide,
            pool,
        } => {
            let mut cfg = cfg;
            if wide {
                cfg = cfg.wide_range();
                cfg.samples.train = cfg.samples.labelled;
            }
            if let Some(pool) = pool {
                cfg.samples.train = cfg.samples.labelled + pool;
            }
            let report = run_sequential(&cfg, cycles, batch)?;
            out.text("sequential.csv", &report.to_csv())?;
            out.text("sequential.dat", &report.to_gnuplot())?;
            out.config(&cfg)?;
            json!({
                "command": "sequential",
                "config_hash": report.config_hash,
                "rmse": report.rmse,
                "training_sizes": report.training_sizes,
                "kernel": report.kernel,
                "params": report.params,
                "error": report.error,
                "config": cfg,
            })
        }
        Command::Evaluate {
            predictions: Some(path),
            report,
            ..
        } => recompute(&path, report.as_deref())?,
        Command::Evaluate { dataset, .. } => {
            let ds = load_or_generate(&cfg, dataset.as_deref())?;
            let report = evaluate_dataset(&cfg, &ds)?;
            report.verify()?;
            out.text("predictions.csv", &predictions_csv(&report))?;
            let mut rows = String::from("method,rmse,failures\n");
            for (m, r) in &report.methods {
                rows.push_str(&format!("{},{},{}\n", m.name(), r.rmse, r.failures));
            }
            out.text("rmse.csv", &rows)?;
            let mut s = report.summary();
            s["command"] = json!("evaluate");
            s
        }
        Command::ExportEmbedding { dataset } => {
            let ds = load_or_generate(&cfg, dataset.as_deref())?;
            let model = train_dds(&cfg, &ds)?;
            let azimuths: Vec<f64> = ds.train().map(|r| r.azimuth).collect();
            out.text("embedding.csv", &embedding_csv(&model.embedding, &azimuths))?;
            let mut dat = String::from("# azimuth_deg coordinate_1 labelled\n");
            for (i, r) in ds.train().enumerate() {
                dat.push_str(&format!(
                    "{} {} {}\n",
                    r.azimuth,
                    model.embedding.coordinates[(i, 0)],
                    r.labelled as u8
                ));
            }
            out.text("embedding.dat", &dat)?;
            let first: Vec<f64> = model.embedding.coordinates.column(0).iter().copied().collect();
            json!({
                "command": "export-embedding",
                "dataset_hash": ds.hash()?,
                "config_hash": cfg.hash(),
                "dimension": model.embedding.dimension(),
                "eigenvalues": model.embedding.eigenvalues,
                "spearman_first_coordinate": spearman(&azimuths, &first)?,
                "config": cfg,
            })
        }
    };
    let mut summary = summary;
    summary["wall_seconds"] = json!(start.elapsed().as_secs_f64());
    let path = out.json(report_name, &summary)?;
    println!("{}", path.display());
    Ok(())
}

fn load_or_generate(cfg: &ScenarioConfig, path: Option<&Path>) -> anyhow::Result<Dataset> {
    match path {
        Some(p) => Dataset::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(generate_dataset(cfg)?),
    }
}

fn simulate(cfg: &ScenarioConfig, azimuth: Option<f64>, out: &Output) -> anyhow::Result<serde_json::Value> {
    let room = cfg.room_spec()?;
    let cons = cfg.constellation();
    cons.validate_in(&room)?;
    let [lo, hi] = cons.azimuth_range;
    let azimuth = azimuth.unwrap_or(0.5 * (lo + hi));
    let source = cons.azimuth_to_position(&room, azimuth)?;
    let mut mics = Vec::new();
    for (name, mic) in [("mic1", cons.mic1), ("mic2", cons.mic2_rotated())] {
        let rir = simulate_rir(&room, &source, &mic)?;
        write_rir_wav(&out.path(&format!("rir_{name}.wav")), &rir)?;
        write_rir_binary(&out.path(&format!("rir_{name}.bin")), &rir)?;
        mics.push(json!({
            "name": name,
            "position": mic,
            "taps": rir.len(),
            "energy": rir.energy(),
            "schroeder_t60": schroeder_t60(&rir.taps, rir.sample_rate),
        }));
    }
    Ok(json!({
        "command": "simulate-rir",
        "azimuth": azimuth,
        "source": source,
        "reflection": room.reflection,
        "target_t60": cfg.room.t60,
        "microphones": mics,
        "config": cfg,
    }))
}

fn train(cfg: &ScenarioConfig, dataset: Option<&Path>, out: &Output) -> anyhow::Result<serde_json::Value> {
    let (ds, dataset_path) = match dataset {
        Some(p) => (load_or_generate(cfg, Some(p))?, p.to_path_buf()),
        None => {
            let ds = generate_dataset(cfg)?;
            let p = out.path("dataset.bin");
            ds.save(&p)?;
            (ds, p)
        }
    };
    let hash = ds.hash()?;
    let trained = train_mrl(cfg, &ds)?;
    save_model(&out.path("model.bin"), &trained.model, &hash, &trained.indices)?;
    Ok(json!({
        "command": "train",
        "dataset": dataset_path,
        "dataset_hash": hash,
        "config_hash": cfg.hash(),
        "kernel": trained.kernel,
        "params": trained.model.params,
        "cv_rmse": trained.cv_rmse,
        "label_offset": trained.model.label_offset,
        "condition": trained.model.diagnostics.condition,
        "config": cfg,
    }))
}

fn localize(
    cfg: &ScenarioConfig,
    model_path: &Path,
    dataset_path: &Path,
    pair: Option<&Path>,
    out: &Output,
) -> anyhow::Result<serde_json::Value> {
    let ds = Dataset::load(dataset_path).with_context(|| format!("loading {}", dataset_path.display()))?;
    let model = load_model(model_path, &ds)?;
    if let Some(pair) = pair {
        let signals = read_pair_wav(pair)?;
        let rtf = extract_rtf(&signals, &cfg.features.welch(), &cfg.features.band())?;
        let azimuth = model.predict(&rtf)?;
        return Ok(json!({ "command": "localize", "pair": pair, "azimuth": azimuth }));
    }
    let tests: Vec<_> = ds.test().collect();
    if tests.is_empty() {
        bail!(Usage(format!(
            "{} has no test rows; pass --pair",
            dataset_path.display()
        )));
    }
    let mut csv = String::from("index,method,truth,prediction,error\n");
    let (mut predictions, mut truths) = (Vec::new(), Vec::new());
    for (i, r) in tests.iter().enumerate() {
        let p = model.predict(&r.rtf)?;
        csv.push_str(&format!("{i},mrl,{},{p},{}\n", r.azimuth, p - r.azimuth));
        predictions.push(p);
        truths.push(r.azimuth);
    }
    out.text("predictions.csv", &csv)?;
    Ok(json!({
        "command": "localize",
        "dataset_hash": ds.hash()?,
        "methods": { "mrl": { "rmse": evaluate_rmse(&predictions, &truths)? } },
    }))
}

/// RMSE per method from a predictions file, checked against a stored report.
fn recompute(path: &Path, report: Option<&Path>) -> anyhow::Result<serde_json::Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = read_predictions_csv(&text)?;
    let mut by_method: std::collections::BTreeMap<Method, (Vec<f64>, Vec<f64>)> = Default::default();
    for r in rows {
        if (r.prediction - r.truth - r.error).abs() > 1e-9 * (1.0 + r.error.abs()) {
            return Err(Error::Format(format!(
                "row {} of {}: error column disagrees",
                r.index,
                r.method.name()
            ))
            .into());
        }
        let e = by_method.entry(r.method).or_default();
        e.0.push(r.prediction);
        e.1.push(r.truth);
    }
    let report = report
        .map(Path::to_path_buf)
        .or_else(|| Some(path.with_file_name("report.json")).filter(|p| p.exists()));
    let stored: Option<serde_json::Value> = match &report {
        Some(p) => Some(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => None,
    };
    let mut methods = serde_json::Map::new();
    for (m, (p, t)) in &by_method {
        let rmse = evaluate_rmse(p, t)?;
        let expected = stored.as_ref().and_then(|s| s["methods"][m.name()]["rmse"].as_f64());
        if let Some(x) = expected {
            if (x - rmse).abs() > 1e-9 * x.max(1.0) {
                return Err(Error::Format(format!("{} RMSE {rmse} disagrees with stored {x}", m.name())).into());
            }
        }
        methods.insert(
            m.name().into(),
            json!({ "rmse": rmse, "samples": p.len(), "stored_rmse": expected }),
        );
    }
    Ok(json!({
        "command": "evaluate",
        "predictions": path,
        "checked_against": report,
        "methods": methods,
    }))
}
