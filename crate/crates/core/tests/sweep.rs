use std::collections::BTreeMap;
use std::path::Path;

use winforge::io::RunManifest;
use winforge::job::{load_finished, run_job, write_job, RunConfig};
use winforge::sweep::{cell_dir, cell_seed, run_sweep, SweepConfig};

fn tiny_run() -> RunConfig {
    serde_json::from_value(serde_json::json!({
        "data": {
            "kind": { "kind": "teacher_net", "depth": 2, "width": 8, "init_seed": 3 },
            "dim": 3, "n_train": 64, "n_test": 32, "seed": 5
        },
        "thin": { "depth": 3, "width": 4, "dim": 3, "activation": "tanh" },
        "win": {
            "widen_factor": 4,
            "mode": "theory",
            "teacher_train": { "eta": 0.1, "steps": 20, "batch_size": 8, "width_scaled": true },
            "finetune": { "eta": 0.1, "steps": 10, "batch_size": 8, "width_scaled": true },
            "teacher_init": { "distribution": { "kind": "uniform", "lo": -1.0, "hi": 1.0 }, "coupling": 2.0 },
            "student_init": { "distribution": { "kind": "uniform", "lo": -1.0, "hi": 1.0 }, "coupling": 2.0 }
        },
        "scratch": { "train": { "eta": 0.1, "steps": 0, "batch_size": 8, "width_scaled": true } },
        "evaluation": { "lipschitz": { "kind": "pairs", "data_pairs": 16, "local_dirs": 1 } }
    }))
    .expect("tiny config parses")
}

fn grid(depths: Vec<usize>, widths: Vec<usize>, replicates: usize) -> SweepConfig {
    SweepConfig {
        name: "test".into(),
        master_seed: 11,
        base: tiny_run(),
        depths,
        widths,
        widen_factors: vec![],
        wide_width: None,
        replicates,
        vary_data: false,
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn cell_seed_is_a_splitmix_chain_of_master_and_index() {
    for (master, index) in [(0u64, 0usize), (11, 3), (u64::MAX, 1000)] {
        let expected = splitmix(splitmix(splitmix(master) ^ splitmix(30)) ^ splitmix(index as u64));
        assert_eq!(cell_seed(master, index), expected);
    }
    assert_ne!(cell_seed(1, 0), cell_seed(1, 1));
}

#[test]
fn cells_expand_depth_major_with_derived_seeds() {
    let cfg = grid(vec![2, 3], vec![4, 8], 2);
    let cells = cfg.cells().unwrap();
    assert_eq!(cells.len(), 8);
    let order: Vec<(usize, usize, usize)> = cells.iter().map(|c| (c.n, c.m, c.replicate)).collect();
    assert_eq!(order[..3], [(2, 4, 0), (2, 4, 1), (2, 8, 0)]);
    assert_eq!(order[7], (3, 8, 1));
    for c in &cells {
        assert_eq!(c.seed, cell_seed(11, c.index));
        assert_eq!(c.k, 4);
        let job = cfg.cell_config(c);
        assert_eq!((job.thin.depth, job.thin.width, job.win.widen_factor), (c.n, c.m, c.k));
        job.validate().unwrap();
    }
}

#[test]
fn fixed_wide_width_sets_the_factor_per_width() {
    let mut cfg = grid(vec![2], vec![4, 8, 16], 1);
    cfg.wide_width = Some(64);
    let ks: Vec<usize> = cfg.cells().unwrap().iter().map(|c| c.k).collect();
    assert_eq!(ks, [16, 8, 4]);
    cfg.wide_width = Some(60);
    assert!(cfg.cells().is_err());
}

#[test]
fn empty_grid_is_rejected() {
    assert!(grid(vec![], vec![4], 1).cells().is_err());
    assert!(grid(vec![2], vec![4], 0).cells().is_err());
}

#[test]
fn vary_data_changes_only_the_data_seed() {
    let mut cfg = grid(vec![2], vec![4], 2);
    cfg.vary_data = true;
    let cells = cfg.cells().unwrap();
    let a = cfg.cell_config(&cells[0]);
    let b = cfg.cell_config(&cells[1]);
    assert_ne!(a.data.seed, b.data.seed);
    assert_eq!(a.thin, b.thin);
}

#[test]
fn job_runs_all_arms() {
    let cfg = tiny_run();
    let (r, art) = run_job(&cfg, 9).unwrap();
    assert_eq!((r.n, r.m, r.big_m), (3, 4, 16));
    assert_eq!(r.step_budget, 30);
    assert!(r.scratch_d.is_some() && r.ell_hat.is_some());
    let scan = r.scan.as_ref().unwrap();
    assert!(scan.telescopes(1e-9));
    assert!(scan.amplification_holds(1e-9));
    assert_eq!(art.train.len(), 64);
    assert_eq!(art.scratch.as_ref().unwrap().1.records.last().map(|t| t.step), Some(29));
}

#[test]
fn one_by_one_sweep_matches_a_direct_job() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = grid(vec![3], vec![4], 1);
    let outcome = run_sweep(&cfg, Some(tmp.path()), 1).unwrap();
    assert_eq!(outcome.failures(), 0);
    let cell = cfg.cells().unwrap()[0];

    let direct = tmp.path().join("direct");
    let job = cfg.cell_config(&cell);
    let (result, art) = run_job(&job, cell.seed).unwrap();
    write_job(&direct, &job, cell.seed, &result, &art).unwrap();
    assert_eq!(files(&cell_dir(tmp.path(), &cell)), files(&direct));
    assert_eq!(outcome.cells[0].result.as_ref(), Some(&result));
}

#[test]
fn resume_reuses_finished_cells_and_recomputes_deleted_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = grid(vec![2, 3], vec![4], 2);
    let first = run_sweep(&cfg, Some(tmp.path()), 1).unwrap();
    assert_eq!(first.reused(), 0);
    let before = files(tmp.path());

    let again = run_sweep(&cfg, Some(tmp.path()), 1).unwrap();
    assert_eq!(again.reused(), 4);
    assert_eq!(files(tmp.path()), before);

    let victim = cfg.cells().unwrap()[2];
    std::fs::remove_dir_all(cell_dir(tmp.path(), &victim)).unwrap();
    let resumed = run_sweep(&cfg, Some(tmp.path()), 1).unwrap();
    assert_eq!(resumed.reused(), 3);
    assert!(!resumed.cells[2].reused);
    assert_eq!(files(tmp.path()), before);
}

#[test]
fn tampered_or_reconfigured_cells_are_not_reused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = grid(vec![2], vec![4], 1);
    run_sweep(&cfg, Some(tmp.path()), 1).unwrap();
    let cell = cfg.cells().unwrap()[0];
    let dir = cell_dir(tmp.path(), &cell);
    let job = cfg.cell_config(&cell);
    assert!(load_finished(&dir, &job, cell.seed).is_some());
    assert!(load_finished(&dir, &job, cell.seed + 1).is_none());

    let mut other = job.clone();
    other.win.finetune.steps += 1;
    assert!(load_finished(&dir, &other, cell.seed).is_none());

    std::fs::write(dir.join("merge_plan.json"), b"{}").unwrap();
    assert!(RunManifest::load(&dir).unwrap().verify(&dir).is_err());
    assert!(load_finished(&dir, &job, cell.seed).is_none());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let cfg = grid(vec![2], vec![4], 3);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_sweep(&cfg, Some(a.path()), 1).unwrap();
    run_sweep(&cfg, Some(b.path()), 3).unwrap();
    assert_eq!(files(a.path()), files(b.path()));
}

#[test]
fn failing_cells_are_recorded_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = grid(vec![2], vec![4], 2);
    cfg.base.win.teacher_train.eta = 1e300;
    let outcome = run_sweep(&cfg, Some(tmp.path()), 1).unwrap();
    assert_eq!(outcome.failures(), 2);
    assert!(outcome.cells[0].error.as_deref().unwrap().contains("diverged"));
    assert!(tmp.path().join("summary.json").exists());
}

#[test]
fn full_grid_produces_a_bound_report() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = grid(vec![1, 2, 3], vec![2, 3, 4], 1);
    cfg.base.scratch = None;
    let outcome = run_sweep(&cfg, Some(tmp.path()), 1).unwrap();
    let bound = outcome.bound.expect("3x3 grid is enough for a fit");
    assert_eq!(bound.rows.len(), 9);
    let csv = std::fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("n,m,M,seed,k,term,total,ell_hat,predictor,residual"));
    serde_json::from_slice::<serde_json::Value>(&std::fs::read(tmp.path().join("report.json")).unwrap()).unwrap();
}
