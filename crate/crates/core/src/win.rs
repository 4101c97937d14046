//! The three WIN stages: train a wide teacher, warm a thin student from it,
//! fine-tune and merge.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{thin_architecture, Dataset};
use crate::error::{Error, Result};
use crate::merge::{merge_pass, MergePlan};
use crate::metrics::{discrepancy, rmse};
use crate::net::{Activation, Architecture, Block, BlockShape, LinearMap, MeanFieldLayer, Network};
use crate::seed::{self, tag};
use crate::train::{init_network, objective_loss, sgd_train, InitSpec, Objective, TrainConfig, TrainTrace, TrainableMask};

/// The thin target architecture: `depth` layers of `width` neurons,
/// `dim -> ... -> dim -> 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThinSpec {
    pub depth: usize,
    pub width: usize,
    pub dim: usize,
    pub activation: Activation,
}

impl ThinSpec {
    pub fn architecture(&self) -> Architecture {
        thin_architecture(self.depth, self.width, self.dim, self.activation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.dim == 0 {
            return Err(Error::InvalidConfig("thin depth, width and dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WinMode {
    /// Teacher and student share inter-layer dimensions; the student is
    /// initialized by subsampling teacher neurons.
    Theory,
    /// The teacher is wider between layers; the student is matched through
    /// inserted linear pairs and layerwise imitation.
    Practical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subsample {
    WithReplacement,
    WithoutReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairInit {
    /// `M_i1` embeds into the leading coordinates and `M_i2` projects back,
    /// so the pair composes to the identity.
    Identity,
    Random { init: InitSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinConfig {
    pub widen_factor: usize,
    /// Teacher inter-layer dimension. Defaults to the thin dimension.
    #[serde(default)]
    pub wide_dim: Option<usize>,
    pub mode: WinMode,
    #[serde(default = "default_subsample")]
    pub subsample: Subsample,
    /// Block `i` is imitated for `imitation_base * i` steps.
    #[serde(default)]
    pub imitation_base: usize,
    #[serde(default)]
    pub restarts: usize,
    #[serde(default)]
    pub finetune_restarts: usize,
    pub teacher_train: TrainConfig,
    #[serde(default)]
    pub imitate_train: TrainConfig,
    pub finetune: TrainConfig,
    #[serde(default)]
    pub teacher_init: InitSpec,
    #[serde(default)]
    pub student_init: InitSpec,
    #[serde(default = "default_pair_init")]
    pub pair_init: PairInit,
    /// Run layerwise imitation after subsampling in theory mode.
    #[serde(default)]
    pub theory_imitation: bool,
    /// Train only the newest block (and its adjacent maps) during imitation.
    #[serde(default)]
    pub freeze_previous: bool,
}

fn default_subsample() -> Subsample {
    Subsample::WithReplacement
}

fn default_pair_init() -> PairInit {
    PairInit::Identity
}

impl WinConfig {
    pub fn wide_dim(&self, thin: &ThinSpec) -> usize {
        self.wide_dim.unwrap_or(thin.dim)
    }

    pub fn validate(&self, thin: &ThinSpec) -> Result<()> {
        thin.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.widen_factor == 0 {
            return bad("widen_factor must be positive".into());
        }
        let wd = self.wide_dim(thin);
        match self.mode {
            WinMode::Theory if wd != thin.dim => {
                return bad(format!("theory mode needs wide_dim = {} (got {wd})", thin.dim));
            }
            WinMode::Practical if wd < thin.dim => {
                return bad(format!("wide_dim {wd} is smaller than the thin dimension {}", thin.dim));
            }
            _ => {}
        }
        self.teacher_init.validate()?;
        self.student_init.validate()?;
        if let PairInit::Random { init } = &self.pair_init {
            init.validate()?;
        }
        Ok(())
    }

    /// Steps spent imitating block `i` (1-based).
    pub fn imitation_steps(&self, i: usize) -> usize {
        self.imitation_base * i
    }

    fn imitates(&self) -> bool {
        self.mode == WinMode::Practical || self.theory_imitation
    }

    /// Total SGD steps of a run, restarts included.
    pub fn step_budget(&self, depth: usize) -> usize {
        let imitation = if self.imitates() {
            (1..depth).map(|i| self.imitation_steps(i)).sum::<usize>() * (self.restarts + 1)
        } else {
            0
        };
        self.teacher_train.steps + imitation + self.finetune.steps * (self.finetune_restarts + 1)
    }
}

/// The teacher architecture: `k * m` neurons per layer; in practical mode
/// inner dimensions become `wide_dim`.
pub fn widen_spec(thin: &Architecture, cfg: &WinConfig) -> Result<Architecture> {
    thin.validate()?;
    if cfg.widen_factor == 0 {
        return Err(Error::InvalidConfig("widen_factor must be positive".into()));
    }
    let n = thin.blocks.len();
    let blocks = thin
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| match *b {
            BlockShape::MeanField { d_in, d_out, width } => {
                let (d_in, d_out) = match (cfg.mode, cfg.wide_dim) {
                    (WinMode::Practical, Some(wd)) => {
                        (if i == 0 { d_in } else { wd }, if i + 1 == n { d_out } else { wd })
                    }
                    _ => (d_in, d_out),
                };
                Ok(BlockShape::MeanField {
                    d_in,
                    d_out,
                    width: width * cfg.widen_factor,
                })
            }
            BlockShape::Linear { .. } => Err(Error::InvalidConfig("thin spec must only contain mean-field layers".into())),
        })
        .collect::<Result<_>>()?;
    Ok(Architecture {
        activation: thin.activation,
        blocks,
    })
}

fn pair_maps(d: usize, wide: usize, init: &PairInit, seed: u64) -> Result<(LinearMap, LinearMap)> {
    match init {
        PairInit::Identity => Ok((LinearMap::padded_identity(wide, d), LinearMap::padded_identity(d, wide))),
        PairInit::Random { init } => {
            let up = init.draw_block(&BlockShape::Linear { rows: wide, cols: d }, 0, seed)?;
            let down = init.draw_block(&BlockShape::Linear { rows: d, cols: wide }, 1, seed)?;
            match (up, down) {
                (Block::Linear(a), Block::Linear(b)) => Ok((a, b)),
                _ => unreachable!("linear shapes draw linear blocks"),
            }
        }
    }
}

/// `S_1, M_11, M_12, S_2, ..., S_n` with `M_i1: d -> wide`, `M_i2: wide -> d`.
/// Pair `i` is drawn from `derive(seed, [i])`.
pub fn insert_linear_pairs(thin: &Network, wide: usize, init: &PairInit, seed: u64) -> Result<Network> {
    if thin.blocks().iter().any(|b| b.is_linear()) {
        return Err(Error::InvalidConfig("network already contains linear maps".into()));
    }
    let n = thin.len();
    let mut blocks = Vec::with_capacity(3 * n - 2);
    for (i, b) in thin.blocks().iter().enumerate() {
        blocks.push(b.clone());
        if i + 1 < n {
            let d = b.d_out();
            if wide < d {
                return Err(Error::InvalidConfig(format!("pair width {wide} is below layer dimension {d}")));
            }
            let (up, down) = pair_maps(d, wide, init, seed::derive(seed, &[i as u64 + 1]))?;
            blocks.push(up.into());
            blocks.push(down.into());
        }
    }
    Network::new(blocks, thin.activation())
}

/// Draw `m` of the wide layer's neurons and copy them verbatim, in ascending
/// index order.
pub fn subsample_init(wide: &MeanFieldLayer, m: usize, mode: Subsample, seed: u64) -> Result<MeanFieldLayer> {
    let big_m = wide.width();
    if m == 0 {
        return Err(Error::InvalidConfig("cannot subsample zero neurons".into()));
    }
    let mut rng = seed::rng(seed);
    let mut idx: Vec<usize> = match mode {
        Subsample::WithReplacement => (0..m).map(|_| rng.random_range(0..big_m)).collect(),
        Subsample::WithoutReplacement => {
            if m > big_m {
                return Err(Error::InvalidConfig(format!(
                    "cannot draw {m} of {big_m} neurons without replacement"
                )));
            }
            sample_indices(&mut rng, big_m, m).into_vec()
        }
    };
    idx.sort_unstable();
    wide.select(&idx)
}

/// Subsample every teacher layer; layer `i` uses `derive(seed, [STUDENT, i, 0])`.
pub fn subsample_network(teacher: &Network, m: usize, mode: Subsample, seed: u64) -> Result<Network> {
    let blocks = teacher
        .blocks()
        .iter()
        .enumerate()
        .map(|(i, b)| match b {
            Block::MeanField(l) => Ok(subsample_init(l, m, mode, subsample_seed(seed, i, 0))?.into()),
            Block::Linear(_) => Err(Error::InvalidConfig("teacher must consist of mean-field layers".into())),
        })
        .collect::<Result<_>>()?;
    Network::new(blocks, teacher.activation())
}

fn subsample_seed(seed: u64, layer: usize, restart: usize) -> u64 {
    seed::derive(seed, &[tag::STUDENT, layer as u64, restart as u64])
}

/// Imitation outcome for one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImitationRecord {
    /// 1-based block index.
    pub block: usize,
    pub steps: usize,
    /// Final imitation loss of each candidate, restart 0 first.
    pub candidates: Vec<f64>,
    pub chosen: usize,
    pub loss: f64,
    pub trace: TrainTrace,
}

/// Line-delimited progress event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block: Option<usize>,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl StageEvent {
    fn new(stage: &str, block: Option<usize>, steps: usize, trace: &TrainTrace) -> Self {
        Self {
            stage: stage.into(),
            block,
            steps,
            initial_loss: trace.initial_loss,
            final_loss: trace.final_loss,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

/// Layout of the student relative to teacher block `i` (1-based).
struct Layout {
    pairs: bool,
}

impl Layout {
    fn layer(&self, i: usize) -> usize {
        if self.pairs {
            3 * (i - 1)
        } else {
            i - 1
        }
    }

    /// Blocks of `S̄^{(i)}`: through `M_i1` with pairs, through `S_i` without.
    fn prefix(&self, i: usize) -> usize {
        self.layer(i) + if self.pairs { 2 } else { 1 }
    }

    /// First block trained when only the newest block is free.
    fn newest_start(&self, i: usize) -> usize {
        if self.pairs && i > 1 {
            self.layer(i) - 1
        } else {
            self.layer(i)
        }
    }
}

struct ImitationContext<'a> {
    teacher: &'a Network,
    data: &'a Dataset,
    cfg: &'a WinConfig,
    seed: u64,
    width: usize,
    layout: Layout,
}

impl ImitationContext<'_> {
    /// Reinitialize the student's block `i` (and the pair after it) for
    /// restart `r > 0`.
    fn reinit(&self, student: &mut Network, i: usize, r: usize) -> Result<()> {
        let li = self.layout.layer(i);
        let fresh: Block = if self.layout.pairs {
            let shape = student.block(li).shape();
            self.cfg
                .student_init
                .draw_block(&shape, li, seed::derive(self.seed, &[tag::IMITATION, i as u64, r as u64]))?
        } else {
            let wide = self.teacher.block(i - 1).as_mean_field().expect("teacher layers are mean-field");
            subsample_init(wide, self.width, self.cfg.subsample, subsample_seed(self.seed, i - 1, r))?.into()
        };
        student.replace_block(li, fresh)?;
        if self.layout.pairs && li + 2 < student.len() {
            let d = student.block(li).d_out();
            let wide = student.block(li + 1).d_out();
            let (up, down) = pair_maps(
                d,
                wide,
                &self.cfg.pair_init,
                seed::derive(self.seed, &[tag::PAIRS, i as u64, r as u64]),
            )?;
            student.replace_block(li + 1, up.into())?;
            student.replace_block(li + 2, down.into())?;
        }
        Ok(())
    }

    fn candidate(&self, start: &Network, i: usize, r: usize, objective: &Objective) -> Result<(Network, TrainTrace)> {
        let mut net = start.clone();
        if r > 0 {
            self.reinit(&mut net, i, r)?;
        }
        let end = self.layout.prefix(i);
        let mask = if self.cfg.freeze_previous {
            TrainableMask::range(net.len(), self.layout.newest_start(i)..end)
        } else {
            TrainableMask::prefix(net.len(), end)
        };
        let train = TrainConfig {
            steps: self.cfg.imitation_steps(i),
            seed: seed::derive(self.seed, &[tag::IMITATION, i as u64, r as u64, tag::EPOCH]),
            ..self.cfg.imitate_train.clone()
        };
        sgd_train(net, self.data, &train, objective, &mask)
    }
}

/// Layerwise imitation of teacher blocks `1..n-1`.
///
/// With pairs, the student's output after `M_i1` is matched against the
/// teacher's block-`i` output; without, the student's block-`i` output is.
/// Restart `r` reinitializes block `i` (a fresh draw, or a fresh subsample
/// in theory mode) and reshuffles; the candidate with the lowest final
/// imitation loss wins, ties going to the lower restart index.
pub fn imitation_stage(
    student: Network,
    teacher: &Network,
    data: &Dataset,
    cfg: &WinConfig,
    width: usize,
    seed: u64,
) -> Result<(Network, Vec<ImitationRecord>)> {
    let n = teacher.len();
    let pairs = student.blocks().iter().any(|b| b.is_linear());
    let expected = if pairs { 3 * n - 2 } else { n };
    if student.len() != expected || teacher.blocks().iter().any(|b| b.is_linear()) {
        return Err(Error::InvalidConfig(format!(
            "student has {} blocks, expected {expected} for a {n}-layer teacher",
            student.len()
        )));
    }
    let ctx = ImitationContext {
        teacher,
        data,
        cfg,
        seed,
        width,
        layout: Layout { pairs },
    };
    let mut current = student;
    let mut records = Vec::with_capacity(n.saturating_sub(1));
    for i in 1..n {
        let steps = cfg.imitation_steps(i);
        let objective = Objective::imitation(teacher, i, ctx.layout.prefix(i), data)?;
        let candidates = crate::par::map_range(cfg.restarts + 1, |r| ctx.candidate(&current, i, r, &objective));
        let mut best: Option<(usize, Network, TrainTrace)> = None;
        let mut losses = Vec::with_capacity(candidates.len());
        for (r, c) in candidates.into_iter().enumerate() {
            let (net, trace) = c.map_err(|e| e.at(i))?;
            losses.push(trace.final_loss);
            if best.as_ref().is_none_or(|(_, _, t)| trace.final_loss < t.final_loss) {
                best = Some((r, net, trace));
            }
        }
        let (chosen, net, trace) = best.expect("at least one candidate");
        records.push(ImitationRecord {
            block: i,
            steps,
            candidates: losses,
            chosen,
            loss: trace.final_loss,
            trace,
        });
        current = net;
    }
    Ok((current, records))
}

/// Task-loss SGD on all parameters. Restart `r > 0` reshuffles with
/// `derive(cfg.seed, [FINETUNE, r])`; the lowest final training loss wins.
pub fn finetune(net: Network, data: &Dataset, cfg: &TrainConfig, restarts: usize) -> Result<(Network, TrainTrace)> {
    let mask = TrainableMask::all(net.len());
    let runs = crate::par::map_range(restarts + 1, |r| {
        let cfg = if r == 0 {
            cfg.clone()
        } else {
            cfg.clone().with_seed(seed::derive(cfg.seed, &[tag::FINETUNE, r as u64]))
        };
        sgd_train(net.clone(), data, &cfg, &Objective::Task, &mask)
    });
    let mut best: Option<(Network, TrainTrace)> = None;
    for run in runs {
        let (n, t) = run?;
        if best.as_ref().is_none_or(|(_, b)| t.final_loss < b.final_loss) {
            best = Some((n, t));
        }
    }
    Ok(best.expect("at least one run"))
}

/// `rmse(student) <= rmse(teacher) + D[student, teacher]` on the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangleCheck {
    pub student_rmse: f64,
    pub teacher_rmse: f64,
    pub discrepancy: f64,
    pub holds: bool,
}

/// Everything a run produces. Networks are persisted through [`crate::io`].
#[derive(Debug, Clone, PartialEq)]
pub struct WinArtifacts {
    pub teacher: Network,
    /// Student after stage 2, still carrying any linear pairs.
    pub warmed: Network,
    pub finetuned: Network,
    pub merged: Network,
    pub teacher_trace: TrainTrace,
    pub imitation: Vec<ImitationRecord>,
    pub finetune_trace: TrainTrace,
    pub merge_plan: MergePlan,
    pub triangle: TriangleCheck,
    pub events: Vec<StageEvent>,
}

/// Seeds used by one WIN run, all derived from the master seed.
pub mod seeds {
    use crate::seed::{derive, tag};

    pub fn teacher_init(seed: u64) -> u64 {
        derive(seed, &[tag::TEACHER])
    }

    pub fn teacher_train(seed: u64) -> u64 {
        derive(seed, &[tag::TEACHER, tag::EPOCH])
    }

    pub fn student_init(seed: u64) -> u64 {
        derive(seed, &[tag::STUDENT])
    }

    pub fn pairs(seed: u64) -> u64 {
        derive(seed, &[tag::PAIRS])
    }

    pub fn finetune(seed: u64) -> u64 {
        derive(seed, &[tag::FINETUNE])
    }

    pub fn scratch_init(seed: u64) -> u64 {
        derive(seed, &[tag::SCRATCH])
    }

    pub fn scratch_train(seed: u64) -> u64 {
        derive(seed, &[tag::SCRATCH, tag::EPOCH])
    }
}

/// Stage 1: draw and train the wide teacher.
pub fn train_teacher(thin: &ThinSpec, data: &Dataset, cfg: &WinConfig, seed: u64) -> Result<(Network, TrainTrace)> {
    cfg.validate(thin)?;
    let arch = widen_spec(&thin.architecture(), cfg)?;
    let teacher = init_network(&arch, &cfg.teacher_init, seeds::teacher_init(seed))?;
    let train = cfg.teacher_train.clone().with_seed(seeds::teacher_train(seed));
    sgd_train(teacher, data, &train, &Objective::Task, &TrainableMask::all(arch.blocks.len()))
}

/// Stage 2: build the warmed student from a trained teacher.
pub fn warm_student(
    thin: &ThinSpec,
    teacher: &Network,
    data: &Dataset,
    cfg: &WinConfig,
    seed: u64,
) -> Result<(Network, Vec<ImitationRecord>)> {
    let student = match cfg.mode {
        WinMode::Theory => subsample_network(teacher, thin.width, cfg.subsample, seed)?,
        WinMode::Practical => {
            let core = init_network(&thin.architecture(), &cfg.student_init, seeds::student_init(seed))?;
            insert_linear_pairs(&core, cfg.wide_dim(thin), &cfg.pair_init, seeds::pairs(seed))?
        }
    };
    if cfg.imitates() {
        imitation_stage(student, teacher, data, cfg, thin.width, seed)
    } else {
        Ok((student, Vec::new()))
    }
}

/// Run all three stages.
pub fn win_run(thin: &ThinSpec, data: &Dataset, cfg: &WinConfig, seed: u64) -> Result<WinArtifacts> {
    cfg.validate(thin)?;
    let mut events = Vec::new();
    let (teacher, teacher_trace) = train_teacher(thin, data, cfg, seed).map_err(|e| e.in_stage("teacher"))?;
    events.push(StageEvent::new("teacher", None, cfg.teacher_train.steps, &teacher_trace));

    let (warmed, imitation) = warm_student(thin, &teacher, data, cfg, seed).map_err(|e| e.in_stage("imitation"))?;
    for r in &imitation {
        events.push(StageEvent::new("imitation", Some(r.block), r.steps, &r.trace));
    }

    let ft = cfg.finetune.clone().with_seed(seeds::finetune(seed));
    let (finetuned, finetune_trace) =
        finetune(warmed.clone(), data, &ft, cfg.finetune_restarts).map_err(|e| e.in_stage("finetune"))?;
    events.push(StageEvent::new("finetune", None, ft.steps, &finetune_trace));

    let (merged, merge_plan) = merge_pass(&finetuned).map_err(|e| e.in_stage("merge"))?;
    let triangle = (|| -> Result<TriangleCheck> {
        let student_rmse = rmse(&merged, data)?;
        let teacher_rmse = rmse(&teacher, data)?;
        let d = discrepancy(&merged, &teacher, &data.points())?;
        Ok(TriangleCheck {
            student_rmse,
            teacher_rmse,
            discrepancy: d,
            holds: student_rmse <= teacher_rmse + d + 1e-12,
        })
    })()
    .map_err(|e| e.in_stage("merge"))?;
    Ok(WinArtifacts {
        teacher,
        warmed,
        finetuned,
        merged,
        teacher_trace,
        imitation,
        finetune_trace,
        merge_plan,
        triangle,
        events,
    })
}

/// The depth baseline: the thin network trained directly on the task.
pub fn train_scratch(
    thin: &ThinSpec,
    data: &Dataset,
    init: &InitSpec,
    train: &TrainConfig,
    seed: u64,
) -> Result<(Network, TrainTrace)> {
    thin.validate()?;
    let net = init_network(&thin.architecture(), init, seeds::scratch_init(seed))?;
    let cfg = train.clone().with_seed(seeds::scratch_train(seed));
    sgd_train(net, data, &cfg, &Objective::Task, &TrainableMask::all(thin.depth))
}

/// Imitation loss of the student prefix ending at teacher block `i`.
pub fn prefix_imitation_loss(student: &Network, teacher: &Network, i: usize, data: &Dataset) -> Result<f64> {
    let pairs = student.blocks().iter().any(|b| b.is_linear());
    let layout = Layout { pairs };
    let objective = Objective::imitation(teacher, i, layout.prefix(i), data)?;
    objective_loss(student, data, &objective)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_dataset, GeneratorKind, GeneratorSpec};

    fn data(dim: usize, n: usize) -> Dataset {
        gen_dataset(&GeneratorSpec {
            kind: GeneratorKind::TanhOfProjection { gain: 2.0 },
            dim,
            noise_sigma: 0.0,
            n_train: n,
            n_test: 8,
            c: 1.0,
            seed: 3,
        })
        .unwrap()
        .0
    }

    fn spec(depth: usize, width: usize, dim: usize) -> ThinSpec {
        ThinSpec {
            depth,
            width,
            dim,
            activation: Activation::Tanh,
        }
    }

    fn quick(steps: usize) -> TrainConfig {
        TrainConfig {
            eta: 0.05,
            steps,
            batch_size: 16,
            width_scaled: true,
            ..TrainConfig::default()
        }
    }

    fn config(mode: WinMode, k: usize, wide_dim: Option<usize>) -> WinConfig {
        WinConfig {
            widen_factor: k,
            wide_dim,
            mode,
            subsample: Subsample::WithReplacement,
            imitation_base: 20,
            restarts: 0,
            finetune_restarts: 0,
            teacher_train: quick(30),
            imitate_train: quick(0),
            finetune: quick(20),
            teacher_init: InitSpec::default().with_coupling(2.0),
            student_init: InitSpec::default().with_coupling(2.0),
            pair_init: PairInit::Identity,
            theory_imitation: false,
            freeze_previous: false,
        }
    }

    #[test]
    fn widen_examples() {
        let thin = spec(3, 16, 8).architecture();
        assert_eq!(widen_spec(&thin, &config(WinMode::Theory, 1, None)).unwrap(), thin);
        let t = widen_spec(&thin, &config(WinMode::Theory, 4, None)).unwrap();
        assert_eq!(t, spec(3, 64, 8).architecture());
        let p = widen_spec(&thin, &config(WinMode::Practical, 4, Some(32))).unwrap();
        let dims: Vec<(usize, usize, usize)> = p
            .blocks
            .iter()
            .map(|b| match *b {
                BlockShape::MeanField { d_in, d_out, width } => (d_in, d_out, width),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(dims, vec![(8, 32, 64), (32, 32, 64), (32, 1, 64)]);
        assert!(widen_spec(&thin, &config(WinMode::Theory, 0, None)).is_err());
    }

    #[test]
    fn pair_insertion_counts_and_identity() {
        let init = InitSpec::default();
        let one = init_network(&spec(1, 4, 3).architecture(), &init, 1).unwrap();
        assert_eq!(insert_linear_pairs(&one, 6, &PairInit::Identity, 0).unwrap(), one);
        let three = init_network(&spec(3, 4, 3).architecture(), &init, 1).unwrap();
        let sbar = insert_linear_pairs(&three, 6, &PairInit::Identity, 0).unwrap();
        assert_eq!(sbar.len(), 7);
        let square = insert_linear_pairs(&three, 3, &PairInit::Identity, 0).unwrap();
        for x in [[0.1, 0.2, -0.3], [0.5, -0.5, 0.0]] {
            assert_eq!(square.predict(&x).unwrap(), three.predict(&x).unwrap());
        }
        assert!(insert_linear_pairs(&three, 2, &PairInit::Identity, 0).is_err());
    }

    #[test]
    fn subsample_cases() {
        let wide = match init_network(&spec(1, 12, 2).architecture(), &InitSpec::default(), 4)
            .unwrap()
            .into_blocks()
            .remove(0)
        {
            Block::MeanField(l) => l,
            _ => unreachable!(),
        };
        let full = subsample_init(&wide, 12, Subsample::WithoutReplacement, 9).unwrap();
        assert_eq!(full, wide);
        let one = subsample_init(&wide, 1, Subsample::WithReplacement, 9).unwrap();
        let z = [0.3, -0.8];
        let n = one.neuron(0);
        assert_eq!(one.forward(&z, Activation::Tanh).unwrap(), n.eval(&z, Activation::Tanh));
        assert!(subsample_init(&wide, 13, Subsample::WithoutReplacement, 0).is_err());
        let many = subsample_init(&wide, 40, Subsample::WithReplacement, 2).unwrap();
        for n in many.neurons() {
            assert!(wide.neurons().any(|w| w.theta0 == n.theta0 && w.theta1 == n.theta1));
        }
    }

    #[test]
    fn full_subsample_reproduces_teacher() {
        let thin = spec(3, 6, 3);
        let data = data(3, 64);
        let mut cfg = config(WinMode::Theory, 1, None);
        cfg.subsample = Subsample::WithoutReplacement;
        cfg.finetune = quick(0);
        let art = win_run(&thin, &data, &cfg, 5).unwrap();
        assert_eq!(art.merged, art.teacher);
        assert!(art.merge_plan.is_empty());
        assert_eq!(art.triangle.discrepancy, 0.0);
    }

    #[test]
    fn identity_warm_start_is_a_fixed_point() {
        let thin = spec(3, 6, 3);
        let data = data(3, 64);
        let mut cfg = config(WinMode::Theory, 1, None);
        cfg.subsample = Subsample::WithoutReplacement;
        cfg.theory_imitation = true;
        let (teacher, _) = train_teacher(&thin, &data, &cfg, 2).unwrap();
        let student = subsample_network(&teacher, 6, Subsample::WithoutReplacement, 2).unwrap();
        let (out, recs) = imitation_stage(student.clone(), &teacher, &data, &cfg, 6, 2).unwrap();
        assert_eq!(out, student);
        assert!(recs.iter().all(|r| r.loss == 0.0));
    }

    #[test]
    fn restarts_take_the_minimum() {
        let thin = spec(2, 4, 3);
        let data = data(3, 64);
        let mut cfg = config(WinMode::Practical, 4, Some(5));
        cfg.student_init = InitSpec::default();
        let (teacher, _) = train_teacher(&thin, &data, &cfg, 1).unwrap();
        let run = |r: usize| {
            let mut c = cfg.clone();
            c.restarts = r;
            warm_student(&thin, &teacher, &data, &c, 1).unwrap().1
        };
        let r0 = run(0);
        let r2 = run(2);
        assert_eq!(r0[0].candidates[0], r2[0].candidates[0]);
        assert!(r2[0].loss <= r0[0].loss);
        let min = r2[0].candidates.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(r2[0].loss, min);
    }

    #[test]
    fn practical_run_merges_to_thin_shape() {
        let thin = spec(3, 4, 3);
        let data = data(3, 64);
        let mut cfg = config(WinMode::Practical, 4, Some(6));
        cfg.restarts = 1;
        cfg.finetune_restarts = 1;
        let art = win_run(&thin, &data, &cfg, 8).unwrap();
        assert_eq!(art.merged.architecture(), thin.architecture());
        assert_eq!(art.warmed.len(), 7);
        assert_eq!(art.imitation.len(), 2);
        assert!(art.triangle.holds);
        let xs = data.points();
        assert!(crate::merge::relative_deviation(&art.merged, &art.finetuned, &xs).unwrap() <= 1e-10);
        assert_eq!(art.events.len(), 4);
        assert!(art.events[1].to_json_line().contains("\"stage\":\"imitation\""));
        assert_eq!(win_run(&thin, &data, &cfg, 8).unwrap(), art);
    }

    #[test]
    fn finetune_delegates_without_restarts() {
        let data = data(3, 64);
        let net = init_network(&spec(2, 4, 3).architecture(), &InitSpec::default(), 3).unwrap();
        let cfg = quick(25);
        let (a, ta) = finetune(net.clone(), &data, &cfg, 0).unwrap();
        let (b, tb) = sgd_train(net.clone(), &data, &cfg, &Objective::Task, &TrainableMask::all(2)).unwrap();
        assert_eq!((a, ta), (b, tb));
        let (c, _) = finetune(net.clone(), &data, &quick(0), 2).unwrap();
        assert_eq!(c, net);
    }

    #[test]
    fn config_validation() {
        let thin = spec(2, 4, 3);
        assert!(config(WinMode::Theory, 2, Some(5)).validate(&thin).is_err());
        assert!(config(WinMode::Practical, 2, Some(2)).validate(&thin).is_err());
        assert!(config(WinMode::Practical, 2, Some(3)).validate(&thin).is_ok());
        let cfg = config(WinMode::Practical, 2, Some(5));
        assert_eq!(cfg.step_budget(3), 30 + 20 + 40 + 20);
        let back: WinConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
