//! Grids of independent jobs with resumable outputs and an aggregate
//! scaling report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_atomic, write_report, Report, ReportFormat};
use crate::job::{load_finished, run_job, write_job, JobResult, RunConfig};
use crate::metrics::{bound_report, BoundReport, RunRow};
use crate::seed::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub master_seed: u64,
    pub base: RunConfig,
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    /// Teacher width multipliers; defaults to the base config's.
    #[serde(default)]
    pub widen_factors: Vec<usize>,
    /// Fixed teacher width `M` instead of multipliers (`M / m` must be whole).
    #[serde(default)]
    pub wide_width: Option<usize>,
    pub replicates: usize,
    /// Draw a fresh dataset per replicate instead of sharing the base one.
    #[serde(default)]
    pub vary_data: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub replicate: usize,
    pub seed: u64,
}

/// Seed of cell `index`: `derive(master, [CELL, index])`.
pub fn cell_seed(master: u64, index: usize) -> u64 {
    seed::derive(master, &[tag::CELL, index as u64])
}

impl SweepConfig {
    fn factors_for(&self, m: usize) -> Result<Vec<usize>> {
        match self.wide_width {
            Some(big) if big % m == 0 => Ok(vec![big / m]),
            Some(big) => Err(Error::InvalidConfig(format!("wide width {big} is not a multiple of {m}"))),
            None if self.widen_factors.is_empty() => Ok(vec![self.base.win.widen_factor]),
            None => Ok(self.widen_factors.clone()),
        }
    }

    /// Cells in order: depth, then width, then factor, then replicate.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        if self.depths.is_empty() || self.widths.is_empty() || self.replicates == 0 {
            return Err(Error::InvalidConfig("sweep grid is empty".into()));
        }
        let mut out = Vec::new();
        for &n in &self.depths {
            for &m in &self.widths {
                for k in self.factors_for(m)? {
                    for replicate in 0..self.replicates {
                        let index = out.len();
                        out.push(Cell {
                            index,
                            n,
                            m,
                            k,
                            replicate,
                            seed: cell_seed(self.master_seed, index),
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn cell_config(&self, cell: &Cell) -> RunConfig {
        let mut cfg = self.base.clone();
        cfg.thin.depth = cell.n;
        cfg.thin.width = cell.m;
        cfg.win.widen_factor = cell.k;
        if self.vary_data {
            cfg.data.seed = seed::derive(self.base.data.seed, &[tag::TRAIN_DATA, cell.replicate as u64]);
        }
        cfg
    }
}

pub fn cell_dir(out: &Path, cell: &Cell) -> PathBuf {
    out.join("cells").join(format!("{:04}", cell.index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub cell: Cell,
    pub result: Option<JobResult>,
    pub error: Option<String>,
    /// Loaded from a previous run; not persisted, so reports do not depend
    /// on how often a sweep was resumed.
    #[serde(skip)]
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub cells: Vec<CellOutcome>,
    pub bound: Option<BoundReport>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    pub fn reused(&self) -> usize {
        self.cells.iter().filter(|c| c.reused).count()
    }

    pub fn results(&self) -> impl Iterator<Item = &JobResult> {
        self.cells.iter().filter_map(|c| c.result.as_ref())
    }

    pub fn run_rows(&self) -> Vec<RunRow> {
        self.results()
            .filter_map(|r| {
                r.ell_hat.map(|ell_hat| RunRow {
                    n: r.n,
                    m: r.m,
                    big_m: r.big_m,
                    seed: r.seed,
                    d: r.win_d,
                    ell_hat,
                })
            })
            .collect()
    }
}

fn run_cell(cfg: &SweepConfig, cell: &Cell, out: Option<&Path>) -> CellOutcome {
    let job = cfg.cell_config(cell);
    let dir = out.map(|o| cell_dir(o, cell));
    if let Some(result) = dir.as_ref().and_then(|d| load_finished(d, &job, cell.seed)) {
        return CellOutcome {
            cell: *cell,
            result: Some(result),
            error: None,
            reused: true,
        };
    }
    let attempt = run_job(&job, cell.seed).and_then(|(result, art)| {
        if let Some(d) = &dir {
            write_job(d, &job, cell.seed, &result, &art)?;
        }
        Ok(result)
    });
    match attempt {
        Ok(result) => CellOutcome {
            cell: *cell,
            result: Some(result),
            error: None,
            reused: false,
        },
        Err(e) => CellOutcome {
            cell: *cell,
            result: None,
            error: Some(e.to_string()),
            reused: false,
        },
    }
}

/// Run (or reuse) every cell; with `out`, write per-cell artifacts and the
/// aggregate reports `report.csv`, `report.json` and `summary.json`.
///
/// Cells run on `threads` workers (0 = all cores); each job is itself
/// sequential in its reductions, so outputs do not depend on the count.
pub fn run_sweep(cfg: &SweepConfig, out: Option<&Path>, threads: usize) -> Result<SweepOutcome> {
    let cells = cfg.cells()?;
    for c in &cells {
        cfg.cell_config(c).validate()?;
    }
    let outcomes = crate::par::with_threads(threads, || crate::par::map(&cells, |c| run_cell(cfg, c, out)));
    let mut outcome = SweepOutcome {
        cells: outcomes,
        bound: None,
    };
    let rows = outcome.run_rows();
    outcome.bound = bound_report(&rows).ok();
    if let Some(out) = out {
        let mut report = match &outcome.bound {
            Some(b) => Report::from_runs(&rows, b),
            None => Report::default(),
        };
        for r in outcome.results() {
            if let Some(scan) = &r.scan {
                report.push_scan(r.n, r.m, r.big_m, r.seed, scan);
            }
        }
        write_report(&report, &out.join("report.csv"), ReportFormat::Csv)?;
        write_report(&report, &out.join("report.json"), ReportFormat::Json)?;
        let mut summary = serde_json::to_string_pretty(&outcome)?;
        summary.push('\n');
        write_atomic(&out.join("summary.json"), summary.as_bytes())?;
    }
    Ok(outcome)
}
