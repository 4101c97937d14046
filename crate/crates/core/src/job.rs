//! One fully specified experiment: data, WIN run, optional scratch baseline
//! and evaluation, plus the files it leaves behind.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{gen_dataset, Dataset, GeneratorSpec};
use crate::error::Result;
use crate::io::{config_hash, save_model_as, write_atomic, ModelFormat, Provenance, RunManifest};
use crate::merge::merge_pass;
use crate::metrics::{discrepancy, hybrid_scan, rmse, suffix_lipschitz, Estimator, HybridScan, ProbeConfig};
use crate::net::Network;
use crate::train::{InitSpec, TrainConfig, TrainTrace};
use crate::win::{train_scratch, win_run, ThinSpec, WinArtifacts, WinConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScratchConfig {
    pub train: TrainConfig,
    /// Replace `train.steps` with the WIN run's total step budget.
    #[serde(default = "yes")]
    pub matched_budget: bool,
    /// Defaults to the WIN student initialization.
    #[serde(default)]
    pub init: Option<InitSpec>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Teacher suffix Lipschitz estimator; skipped when absent.
    #[serde(default)]
    pub lipschitz: Option<Estimator>,
    #[serde(default = "yes")]
    pub hybrid_scan: bool,
    /// Use only the first this many test points.
    #[serde(default)]
    pub eval_points: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            lipschitz: Some(Estimator::Pairs(ProbeConfig::default())),
            hybrid_scan: true,
            eval_points: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: GeneratorSpec,
    pub thin: ThinSpec,
    pub win: WinConfig,
    #[serde(default)]
    pub scratch: Option<ScratchConfig>,
    #[serde(default)]
    pub evaluation: EvalConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.win.validate(&self.thin)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Hash identifying a `(config, seed)` job.
    pub fn job_hash(&self, seed: u64) -> String {
        config_hash(&serde_json::json!({ "config": self.to_json(), "seed": seed }))
    }
}

/// Scalar outcomes of a job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "M")]
    pub big_m: usize,
    pub seed: u64,
    pub step_budget: usize,
    pub teacher_rmse: f64,
    pub win_rmse: f64,
    /// `D[S_WIN, B]` on the evaluation points.
    pub win_d: f64,
    /// `D` of the warmed student (before fine-tuning) against the teacher.
    pub warm_d: f64,
    pub scratch_rmse: Option<f64>,
    /// `D[S_GD, B]`.
    pub scratch_d: Option<f64>,
    pub ell_hat: Option<f64>,
    pub scan: Option<HybridScan>,
    pub imitation_losses: Vec<f64>,
    pub finetune_initial_loss: f64,
    pub finetune_final_loss: f64,
}

pub struct JobArtifacts {
    pub train: Dataset,
    pub test: Dataset,
    pub win: WinArtifacts,
    pub scratch: Option<(Network, TrainTrace)>,
}

/// Generate the data and run everything the config asks for.
pub fn run_job(cfg: &RunConfig, seed: u64) -> Result<(JobResult, JobArtifacts)> {
    cfg.validate()?;
    let (train, test) = gen_dataset(&cfg.data)?;
    let win = win_run(&cfg.thin, &train, &cfg.win, seed)?;
    let budget = cfg.win.step_budget(cfg.thin.depth);
    let scratch = match &cfg.scratch {
        Some(s) => {
            let mut tc = s.train.clone();
            if s.matched_budget {
                tc.steps = budget;
            }
            let init = s.init.as_ref().unwrap_or(&cfg.win.student_init);
            Some(train_scratch(&cfg.thin, &train, init, &tc, seed).map_err(|e| e.in_stage("scratch"))?)
        }
        None => None,
    };
    let eval = match cfg.evaluation.eval_points {
        Some(k) => test.head(k)?,
        None => test.clone(),
    };
    let xs = eval.points();
    let teacher = &win.teacher;
    let warmed = merge_pass(&win.warmed)?.0;
    // The fine-tuned student still carries any linear pairs, so its handoffs
    // live in the teacher's spaces; merging does not change its function.
    let scan = if cfg.evaluation.hybrid_scan {
        Some(hybrid_scan(teacher, &win.finetuned, &xs)?)
    } else {
        None
    };
    let ell_hat = match &cfg.evaluation.lipschitz {
        Some(est) => Some(suffix_lipschitz(teacher, &xs, est)?.ell_b),
        None => None,
    };
    let result = JobResult {
        n: cfg.thin.depth,
        m: cfg.thin.width,
        big_m: cfg.thin.width * cfg.win.widen_factor,
        seed,
        step_budget: budget,
        teacher_rmse: rmse(teacher, &eval)?,
        win_rmse: rmse(&win.merged, &eval)?,
        win_d: discrepancy(&win.merged, teacher, &xs)?,
        warm_d: discrepancy(&warmed, teacher, &xs)?,
        scratch_rmse: scratch.as_ref().map(|(n, _)| rmse(n, &eval)).transpose()?,
        scratch_d: scratch.as_ref().map(|(n, _)| discrepancy(n, teacher, &xs)).transpose()?,
        ell_hat,
        scan,
        imitation_losses: win.imitation.iter().map(|r| r.loss).collect(),
        finetune_initial_loss: win.finetune_trace.initial_loss,
        finetune_final_loss: win.finetune_trace.final_loss,
    };
    Ok((
        result,
        JobArtifacts {
            train,
            test,
            win,
            scratch,
        },
    ))
}

fn model_name(stem: &str, net: &Network) -> (String, ModelFormat) {
    match ModelFormat::for_path(Path::new(stem), net.num_params()) {
        ModelFormat::Binary => (format!("{stem}.wfm"), ModelFormat::Binary),
        ModelFormat::Json => (format!("{stem}.json"), ModelFormat::Json),
    }
}

fn trace_bytes(trace: &TrainTrace) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    Ok(buf)
}

fn pretty(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Write models, traces, events, the result and a manifest into `dir`.
/// The manifest goes last, so its presence marks a finished job.
pub fn write_job(dir: &Path, cfg: &RunConfig, seed: u64, result: &JobResult, art: &JobArtifacts) -> Result<RunManifest> {
    std::fs::create_dir_all(dir.join("traces"))?;
    let mut manifest = RunManifest::new(seed, serde_json::json!({ "config": cfg.to_json(), "seed": seed }));
    let provenance = Provenance::new(seed, manifest.config_hash.clone());
    let mut models: Vec<(&str, &Network)> = vec![
        ("teacher", &art.win.teacher),
        ("warmed", &art.win.warmed),
        ("merged", &art.win.merged),
    ];
    if let Some((net, _)) = &art.scratch {
        models.push(("scratch", net));
    }
    for (stem, net) in models {
        let (name, format) = model_name(stem, net);
        save_model_as(net, &provenance, &dir.join(&name), format)?;
        manifest.record(dir, stem, &name)?;
    }
    let mut traces = vec![
        ("teacher".to_string(), &art.win.teacher_trace),
        ("finetune".to_string(), &art.win.finetune_trace),
    ];
    for r in &art.win.imitation {
        traces.push((format!("imitation-{}", r.block), &r.trace));
    }
    if let Some((_, t)) = &art.scratch {
        traces.push(("scratch".to_string(), t));
    }
    for (stem, trace) in traces {
        let rel = format!("traces/{stem}.csv");
        write_atomic(&dir.join(&rel), &trace_bytes(trace)?)?;
        manifest.record(dir, &format!("trace:{stem}"), &rel)?;
    }
    let events: String = art.win.events.iter().map(|e| e.to_json_line() + "\n").collect();
    write_atomic(&dir.join("events.jsonl"), events.as_bytes())?;
    manifest.record(dir, "events", "events.jsonl")?;
    write_atomic(&dir.join("merge_plan.json"), &pretty(&art.win.merge_plan)?)?;
    manifest.record(dir, "merge_plan", "merge_plan.json")?;
    write_atomic(&dir.join("result.json"), &pretty(result)?)?;
    manifest.record(dir, "result", "result.json")?;
    manifest.save(dir)?;
    Ok(manifest)
}

/// A finished job in `dir` for this `(cfg, seed)`, if its files are intact.
pub fn load_finished(dir: &Path, cfg: &RunConfig, seed: u64) -> Option<JobResult> {
    let manifest = RunManifest::load(dir).ok()?;
    if manifest.config_hash != cfg.job_hash(seed) || manifest.verify(dir).is_err() {
        return None;
    }
    serde_json::from_slice(&std::fs::read(dir.join("result.json")).ok()?).ok()
}
