use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use winforge::data::{gen_dataset, GeneratorSpec};
use winforge::io::{load_dataset, load_model, save_dataset, save_model, write_atomic, Provenance, RunManifest};
use winforge::job::{run_job, write_job, RunConfig, ScratchConfig};
use winforge::metrics::{
    discrepancy, hybrid_scan, rmse, suffix_lipschitz, Estimator, PowerConfig, ProbeConfig,
};
use winforge::sweep::{run_sweep, SweepConfig};
use winforge::win::{train_scratch, train_teacher};
use winforge::{Error, Network};

#[derive(Parser)]
#[command(name = "winforge", version, about = "Wide-then-narrow training for mean-field networks")]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for sweeps (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output directory; WINFORGE_OUT takes precedence.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample train/test datasets from a generator spec.
    GenData {
        #[arg(long, value_enum, default_value_t = DataFormat::Csv)]
        format: DataFormat,
    },
    /// Train only the wide teacher of a run config.
    TrainTeacher,
    /// Run the full pipeline: teacher, warm start, fine-tune, merge.
    Win,
    /// Train the thin network directly on the task.
    Scratch,
    /// RMSE of a model on a dataset, and optionally its discrepancy to another.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        against: Option<PathBuf>,
    },
    /// Hybrid-network error decomposition of a student against its teacher.
    HybridScan(ScanArgs),
    /// Suffix Lipschitz estimates of a network.
    Lipschitz {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = EstimatorKind::Pairs)]
        estimator: EstimatorKind,
    },
    /// Run a grid of jobs; finished cells are reused.
    Sweep,
    /// Check every artifact of a run directory against its manifest.
    Verify {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    student: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataFormat {
    Csv,
    Wfd,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorKind {
    Pairs,
    Jacobian,
}

enum Failure {
    Usage(String),
    Job(Error),
    /// Some sweep cells failed; carries the summary.
    Partial(Value),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Job(e)
    }
}

type Outcome = Result<Value, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("json"));
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("{}", json!({ "error": "usage", "message": msg }));
            ExitCode::from(2)
        }
        Err(Failure::Partial(summary)) => {
            eprintln!("{}", json!({ "error": "cells_failed", "summary": summary }));
            ExitCode::from(1)
        }
        Err(Failure::Job(e)) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(1)
        }
    }
}

fn out_dir(cli: &Cli) -> Result<PathBuf, Failure> {
    std::env::var_os("WINFORGE_OUT")
        .map(PathBuf::from)
        .or_else(|| cli.out.clone())
        .ok_or_else(|| Failure::Usage("--out (or WINFORGE_OUT) is required".into()))
}

fn read_config<T: DeserializeOwned>(cli: &Cli) -> Result<T, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config is required".into()))?;
    let bytes = std::fs::read(path).map_err(Error::from)?;
    Ok(serde_json::from_slice(&bytes).map_err(Error::from)?)
}

fn provenance(cli: &Cli, cfg: &impl serde::Serialize) -> (RunManifest, Provenance) {
    let value = json!({ "config": cfg, "seed": cli.seed });
    let manifest = RunManifest::new(cli.seed, value);
    let prov = Provenance::new(cli.seed, manifest.config_hash.clone());
    (manifest, prov)
}

fn dispatch(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::GenData { format } => gen_data(cli, *format),
        Command::TrainTeacher => teacher(cli),
        Command::Win => win(cli),
        Command::Scratch => scratch(cli),
        Command::Eval { model, data, against } => eval(model, data, against.as_deref()),
        Command::HybridScan(args) => scan(cli, args),
        Command::Lipschitz { model, data, estimator } => lipschitz(cli, model, data, *estimator),
        Command::Sweep => sweep(cli),
        Command::Verify { dir } => {
            let dir = match dir {
                Some(d) => d.clone(),
                None => out_dir(cli)?,
            };
            let manifest = RunManifest::load(&dir)?;
            manifest.verify(&dir)?;
            Ok(json!({ "ok": true, "artifacts": manifest.artifacts.len() }))
        }
    }
}

fn gen_data(cli: &Cli, format: DataFormat) -> Outcome {
    let spec: GeneratorSpec = read_config(cli)?;
    let out = out_dir(cli)?;
    std::fs::create_dir_all(&out).map_err(Error::from)?;
    let (train, test) = gen_dataset(&spec)?;
    let ext = match format {
        DataFormat::Csv => "csv",
        DataFormat::Wfd => "wfd",
    };
    let (mut manifest, _) = provenance(cli, &spec);
    for (name, data) in [("train", &train), ("test", &test)] {
        let rel = format!("{name}.{ext}");
        save_dataset(data, &out.join(&rel))?;
        manifest.record(&out, name, &rel)?;
    }
    manifest.save(&out)?;
    Ok(json!({ "train": train.len(), "test": test.len(), "out": out }))
}

fn teacher(cli: &Cli) -> Outcome {
    let cfg: RunConfig = read_config(cli)?;
    cfg.validate()?;
    let out = out_dir(cli)?;
    std::fs::create_dir_all(out.join("traces")).map_err(Error::from)?;
    let (train, test) = gen_dataset(&cfg.data)?;
    let (net, trace) = train_teacher(&cfg.thin, &train, &cfg.win, cli.seed)?;
    let (mut manifest, prov) = provenance(cli, &cfg);
    save_model(&net, &prov, &out.join("teacher.json"))?;
    manifest.record(&out, "teacher", "teacher.json")?;
    save_trace(&out, &mut manifest, "teacher", &trace)?;
    manifest.save(&out)?;
    Ok(json!({ "test_rmse": rmse(&net, &test)?, "final_loss": trace.final_loss }))
}

fn save_trace(
    out: &Path,
    manifest: &mut RunManifest,
    stem: &str,
    trace: &winforge::train::TrainTrace,
) -> Result<(), Failure> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    let rel = format!("traces/{stem}.csv");
    write_atomic(&out.join(&rel), &buf)?;
    manifest.record(out, &format!("trace:{stem}"), &rel)?;
    Ok(())
}

fn win(cli: &Cli) -> Outcome {
    let cfg: RunConfig = read_config(cli)?;
    let out = out_dir(cli)?;
    let (result, art) = run_job(&cfg, cli.seed)?;
    write_job(&out, &cfg, cli.seed, &result, &art)?;
    Ok(serde_json::to_value(&result).map_err(Error::from)?)
}

fn scratch(cli: &Cli) -> Outcome {
    let cfg: RunConfig = read_config(cli)?;
    cfg.validate()?;
    let out = out_dir(cli)?;
    std::fs::create_dir_all(out.join("traces")).map_err(Error::from)?;
    let sc = cfg.scratch.clone().unwrap_or(ScratchConfig {
        train: cfg.win.finetune.clone(),
        matched_budget: true,
        init: None,
    });
    let mut tc = sc.train.clone();
    if sc.matched_budget {
        tc.steps = cfg.win.step_budget(cfg.thin.depth);
    }
    let (train, test) = gen_dataset(&cfg.data)?;
    let init = sc.init.as_ref().unwrap_or(&cfg.win.student_init);
    let (net, trace) = train_scratch(&cfg.thin, &train, init, &tc, cli.seed)?;
    let (mut manifest, prov) = provenance(cli, &cfg);
    save_model(&net, &prov, &out.join("scratch.json"))?;
    manifest.record(&out, "scratch", "scratch.json")?;
    save_trace(&out, &mut manifest, "scratch", &trace)?;
    manifest.save(&out)?;
    Ok(json!({ "steps": tc.steps, "test_rmse": rmse(&net, &test)?, "final_loss": trace.final_loss }))
}

fn eval(model: &Path, data: &Path, against: Option<&Path>) -> Outcome {
    let net = load_model(model)?;
    let data = load_dataset(data)?;
    let mut value = json!({ "n": data.len(), "rmse": rmse(&net, &data)? });
    if let Some(other) = against {
        let reference = load_model(other)?;
        value["discrepancy"] = json!(discrepancy(&net, &reference, &data.points())?);
    }
    Ok(value)
}

fn scan(cli: &Cli, args: &ScanArgs) -> Outcome {
    let teacher = load_model(&args.teacher)?;
    let student = load_model(&args.student)?;
    let data = load_dataset(&args.data)?;
    let scan = hybrid_scan(&teacher, &student, &data.points())?;
    let value = serde_json::to_value(&scan).map_err(Error::from)?;
    if let Some(out) = std::env::var_os("WINFORGE_OUT").map(PathBuf::from).or(cli.out.clone()) {
        std::fs::create_dir_all(&out).map_err(Error::from)?;
        let mut report = winforge::io::Report::default();
        let (n, big_m) = depth_width(&teacher);
        report.push_scan(n, depth_width(&student).1, big_m, cli.seed, &scan);
        winforge::io::write_report(&report, &out.join("scan.csv"), winforge::io::ReportFormat::Csv)?;
        write_atomic(&out.join("scan.json"), value.to_string().as_bytes())?;
    }
    Ok(value)
}

/// Mean-field depth and widest layer.
fn depth_width(net: &Network) -> (usize, usize) {
    let widths: Vec<usize> = net.blocks().iter().filter_map(|b| b.as_mean_field().map(|l| l.width())).collect();
    (widths.len(), widths.iter().copied().max().unwrap_or(0))
}

fn lipschitz(cli: &Cli, model: &Path, data: &Path, kind: EstimatorKind) -> Outcome {
    let net = load_model(model)?;
    let data = load_dataset(data)?;
    let estimator = match kind {
        EstimatorKind::Pairs => Estimator::Pairs(ProbeConfig { seed: cli.seed, ..ProbeConfig::default() }),
        EstimatorKind::Jacobian => Estimator::Jacobian(PowerConfig { seed: cli.seed, ..PowerConfig::default() }),
    };
    let report = suffix_lipschitz(&net, &data.points(), &estimator)?;
    Ok(serde_json::to_value(&report).map_err(Error::from)?)
}

fn sweep(cli: &Cli) -> Outcome {
    let cfg: SweepConfig = read_config(cli)?;
    let out = out_dir(cli)?;
    std::fs::create_dir_all(&out).map_err(Error::from)?;
    let outcome = run_sweep(&cfg, Some(&out), cli.threads)?;
    let failures: Vec<Value> = outcome
        .cells
        .iter()
        .filter_map(|c| c.error.as_ref().map(|e| json!({ "cell": c.cell.index, "error": e })))
        .collect();
    let summary = json!({
        "cells": outcome.cells.len(),
        "reused": outcome.reused(),
        "failed": failures,
        "bound": outcome.bound,
        "out": out,
    });
    if outcome.failures() > 0 {
        return Err(Failure::Partial(summary));
    }
    Ok(summary)
}
