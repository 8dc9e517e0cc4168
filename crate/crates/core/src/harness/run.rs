//! Suite execution: per-cell seeding, clean baselines, attack episodes and
//! on-disk persistence with resume.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{AttackKind, ExperimentConfig, KernelPair};
use super::report::{frames_csv, ResultTable};
use super::plot::cell_plots;
use crate::attack::basic::BasicPolicy;
use crate::attack::spark::{SparkPolicy, SparkVariant};
use crate::attack::{Episode, FramePolicy, FrameRecord, RegionSource};
use crate::detect::detect_object;
use crate::error::{Error, Result};
use crate::frame::{apply, visualize_perturbation, Grid};
use crate::geometry::Point;
use crate::io::{save_grid, save_ppm};
use crate::metrics::{precision, RunMetrics};
use crate::objective::{CleanReference, ObjectiveKind, SUCCESS_RADIUS};
use crate::par;
use crate::rng::{hash_str, mix_seed};
use crate::scene::{generate, video_trajectory, SceneConfig, Video};
use crate::tracker::{FeatureKernel, TrackerState};

/// One unit of work: an attack on one video under one objective and kernel pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub attack: usize,
    pub objective: ObjectiveKind,
    pub pair: KernelPair,
    pub video: usize,
}

impl Cell {
    pub fn id(&self, cfg: &ExperimentConfig) -> String {
        format!(
            "{}__{}__{}__v{:03}",
            cfg.attacks[self.attack].name,
            self.objective.name(),
            self.pair.label(),
            self.video
        )
    }

    pub fn seed(&self, cfg: &ExperimentConfig) -> u64 {
        mix_seed(&[
            cfg.master_seed,
            self.video as u64,
            hash_str(&cfg.attacks[self.attack].name),
            self.objective as u64,
            self.pair.attacker as u64,
            self.pair.victim as u64,
        ])
    }
}

/// Every cell in canonical order: attack, kernel pair, objective, video.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for (a, spec) in cfg.attacks.iter().enumerate() {
        for pair in cfg.pairs_for(spec) {
            for objective in cfg.objectives_for(spec) {
                for video in 0..cfg.suite.count {
                    out.push(Cell {
                        attack: a,
                        objective,
                        pair,
                        video,
                    });
                }
            }
        }
    }
    out
}

pub fn scene_for(cfg: &ExperimentConfig, video: usize) -> SceneConfig {
    SceneConfig {
        seed: mix_seed(&[cfg.master_seed, video as u64, hash_str("video")]),
        ..cfg.suite.scene.clone()
    }
}

pub fn target_seed(cfg: &ExperimentConfig, video: usize) -> u64 {
    mix_seed(&[cfg.master_seed, video as u64, hash_str("target")])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub id: String,
    pub attack: String,
    pub method: String,
    pub schedule: String,
    pub objective: ObjectiveKind,
    pub attacker_kernel: FeatureKernel,
    pub victim_kernel: FeatureKernel,
    pub video: usize,
    pub seed: u64,
    pub metrics: Option<RunMetrics>,
    pub error: Option<String>,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanResult {
    pub video: usize,
    pub kernel: FeatureKernel,
    pub precision: f64,
}

/// Everything a suite run produced.
#[derive(Debug, Clone)]
pub struct Suite {
    pub cells: Vec<CellResult>,
    pub clean: Vec<CleanResult>,
    pub table: ResultTable,
}

impl Suite {
    pub fn cells_of<'a>(&'a self, attack: &'a str) -> impl Iterator<Item = &'a CellResult> + 'a {
        self.cells.iter().filter(move |c| c.attack == attack)
    }
}

/// Per-video state shared by that video's cells.
struct VideoCtx {
    video: Video,
    targets: Vec<Point>,
    context: f64,
    refs: BTreeMap<(FeatureKernel, bool), (TrackerState, CleanReference)>,
}

impl VideoCtx {
    fn new(cfg: &ExperimentConfig, index: usize) -> Result<Self> {
        let scene = scene_for(cfg, index);
        let video = generate(&scene)?;
        let targets = video_trajectory(&scene, &video, target_seed(cfg, index));
        Ok(Self {
            video,
            targets,
            context: cfg.context_factor,
            refs: BTreeMap::new(),
        })
    }

    /// Initialized tracker and its clean run, from the annotated or detected box.
    fn tracker(&mut self, kernel: FeatureKernel, detected: bool) -> Result<(TrackerState, &CleanReference)> {
        if !self.refs.contains_key(&(kernel, detected)) {
            let first = self.video.frames[0].grid();
            let b = if detected { detect_object(first) } else { self.video.gt[0] };
            let st = TrackerState::init_with_context(first, b, kernel, self.context)?;
            let r = CleanReference::run(st.clone(), &self.video.frames)?;
            self.refs.insert((kernel, detected), (st, r));
        }
        let (st, r) = &self.refs[&(kernel, detected)];
        Ok((st.clone(), r))
    }

    fn clean_precision(&mut self, kernel: FeatureKernel) -> Result<f64> {
        let gt = self.video.gt.clone();
        let (_, r) = self.tracker(kernel, false)?;
        precision(&r.boxes, &gt, SUCCESS_RADIUS)
    }
}

fn run_cell(cfg: &ExperimentConfig, ctx: &mut VideoCtx, cell: &Cell) -> Result<(CellResult, Vec<Grid>)> {
    let spec = &cfg.attacks[cell.attack];
    let seed = cell.seed(cfg);
    let clean_precision = ctx.clean_precision(cell.pair.victim)?;
    let (victim, _) = ctx.tracker(cell.pair.victim, false)?;
    let variant = match &spec.kind {
        AttackKind::Spark(c) => Some(c.variant),
        AttackKind::Basic(_) => None,
    };
    let detected = variant == Some(SparkVariant::NoTemplate);
    let region_source = if variant == Some(SparkVariant::NoVictimBox) {
        RegionSource::Attacker
    } else {
        RegionSource::Victim
    };
    let n = ctx.video.len();
    let mut policy: Box<dyn FramePolicy> = match &spec.kind {
        AttackKind::Spark(c) => Box::new(SparkPolicy::new(c.clone())?),
        AttackKind::Basic(c) => Box::new(BasicPolicy::new(c.clone(), n, seed)?),
    };
    let targets = ctx.targets.clone();
    let (attacker, reference) = ctx.tracker(cell.pair.attacker, detected)?;
    let reference = reference.clone();
    let (run, kept) = Episode {
        video: &ctx.video,
        victim,
        attacker,
        reference: &reference,
        targets: (cell.objective == ObjectiveKind::Ta).then_some(&targets[..]),
        kind: cell.objective,
        region_source,
    }
    .run(policy.as_mut(), cfg.dump_perturbations)?;
    let metrics = RunMetrics::from_run(&run, clean_precision, cfg.map_mode)?;
    Ok((
        CellResult {
            id: cell.id(cfg),
            attack: spec.name.clone(),
            method: spec.method(),
            schedule: spec.schedule(),
            objective: cell.objective,
            attacker_kernel: cell.pair.attacker,
            victim_kernel: cell.pair.victim,
            video: cell.video,
            seed,
            metrics: Some(metrics),
            error: None,
            frames: run.frames,
        },
        kept,
    ))
}

fn failed_cell(cfg: &ExperimentConfig, cell: &Cell, err: &Error) -> CellResult {
    let spec = &cfg.attacks[cell.attack];
    CellResult {
        id: cell.id(cfg),
        attack: spec.name.clone(),
        method: spec.method(),
        schedule: spec.schedule(),
        objective: cell.objective,
        attacker_kernel: cell.pair.attacker,
        victim_kernel: cell.pair.victim,
        video: cell.video,
        seed: cell.seed(cfg),
        metrics: None,
        error: Some(err.to_string()),
        frames: Vec::new(),
    }
}

/// Where a run writes; `None` keeps everything in memory.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    /// Overrides the configured worker count when set.
    pub workers: Option<usize>,
}

pub fn cell_dir(out: &Path, id: &str) -> PathBuf {
    out.join(id)
}

fn write_cell(out: &Path, cfg: &ExperimentConfig, ctx: &VideoCtx, res: &CellResult, kept: &[Grid]) -> Result<()> {
    let dir = cell_dir(out, &res.id);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("frames.csv"), frames_csv(&res.frames))?;
    if res.video < cfg.plot_videos && !res.frames.is_empty() {
        for (name, svg) in cell_plots(res)? {
            fs::write(dir.join(name), svg)?;
        }
    }
    if !kept.is_empty() {
        fs::create_dir_all(dir.join("perturbations"))?;
        fs::create_dir_all(dir.join("frames"))?;
        for (t, g) in kept.iter().enumerate() {
            save_grid(dir.join("perturbations").join(format!("t{t:03}.grid")), g)?;
            save_ppm(
                dir.join("perturbations").join(format!("t{t:03}_heat.ppm")),
                &visualize_perturbation(g, 255.0),
            )?;
            save_ppm(dir.join("frames").join(format!("t{t:03}.ppm")), &apply(&ctx.video.frames[t], g)?)?;
        }
    }
    // metrics.json last: its presence marks the cell complete
    let tmp = dir.join("metrics.json.tmp");
    fs::write(&tmp, serde_json::to_vec(res)?)?;
    fs::rename(tmp, dir.join("metrics.json"))?;
    Ok(())
}

fn load_cell(out: &Path, id: &str) -> Option<CellResult> {
    let bytes = fs::read(cell_dir(out, id).join("metrics.json")).ok()?;
    serde_json::from_slice(&bytes).ok()
}

/// Runs every cell of one video, reusing finished cells found on disk.
fn run_video(cfg: &ExperimentConfig, index: usize, cells: &[Cell], out: Option<&Path>) -> Result<(Vec<CellResult>, Vec<CleanResult>)> {
    let mut ctx: Option<VideoCtx> = None;
    let get_ctx = |ctx: &mut Option<VideoCtx>| -> Result<()> {
        if ctx.is_none() {
            *ctx = Some(VideoCtx::new(cfg, index)?);
        }
        Ok(())
    };
    let mut results = Vec::new();
    for cell in cells.iter().filter(|c| c.video == index) {
        let id = cell.id(cfg);
        if let Some(done) = out.and_then(|o| load_cell(o, &id)) {
            results.push(done);
            continue;
        }
        get_ctx(&mut ctx)?;
        let c = ctx.as_mut().expect("initialized above");
        let (res, kept) = match run_cell(cfg, c, cell) {
            Ok(r) => r,
            Err(e) => (failed_cell(cfg, cell, &e), Vec::new()),
        };
        if let Some(o) = out {
            write_cell(o, cfg, c, &res, &kept)?;
        }
        results.push(res);
    }
    get_ctx(&mut ctx)?;
    let c = ctx.as_mut().expect("initialized above");
    let clean = cfg
        .victim_kernels()
        .into_iter()
        .map(|k| {
            Ok(CleanResult {
                video: index,
                kernel: k,
                precision: c.clean_precision(k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((results, clean))
}

/// Runs the whole experiment grid.
pub fn run_suite(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Suite> {
    cfg.validate()?;
    let out = opts.out.as_deref();
    if let Some(o) = out {
        fs::create_dir_all(o)?;
        fs::write(o.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    }
    let all = cells(cfg);
    let videos: Vec<usize> = (0..cfg.suite.count).collect();
    let workers = opts.workers.unwrap_or(cfg.workers);
    let per_video = par::map(&videos, workers, |&v| run_video(cfg, v, &all, out));
    let mut by_id: BTreeMap<String, CellResult> = BTreeMap::new();
    let mut clean = Vec::new();
    for r in per_video {
        let (cs, cl) = r?;
        clean.extend(cl);
        for c in cs {
            by_id.insert(c.id.clone(), c);
        }
    }
    let ordered: Vec<CellResult> = all
        .iter()
        .map(|c| by_id.remove(&c.id(cfg)).expect("every cell produced a result"))
        .collect();
    let table = ResultTable::build(cfg, &ordered, &clean);
    if let Some(o) = out {
        super::report::write_outputs(o, cfg, &ordered, &clean, &table)?;
    }
    Ok(Suite {
        cells: ordered,
        clean,
        table,
    })
}

/// Writes the scene suite as PPM frames plus annotation and target files.
pub fn generate_suite(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    for v in 0..cfg.suite.count {
        let scene = scene_for(cfg, v);
        let video = generate(&scene)?;
        let targets = video_trajectory(&scene, &video, target_seed(cfg, v));
        let dir = out.join(format!("v{v:03}"));
        fs::create_dir_all(&dir)?;
        for (t, f) in video.frames.iter().enumerate() {
            save_ppm(dir.join(format!("t{t:03}.ppm")), f)?;
        }
        let mut gt = String::from("t,cx,cy,w,h\n");
        for (t, b) in video.gt.iter().enumerate() {
            gt.push_str(&format!("{t},{},{},{},{}\n", b.cx, b.cy, b.w, b.h));
        }
        fs::write(dir.join("groundtruth.csv"), gt)?;
        let mut tr = String::from("t,x,y\n");
        for (t, p) in targets.iter().enumerate() {
            tr.push_str(&format!("{t},{},{}\n", p.x, p.y));
        }
        fs::write(dir.join("targets.csv"), tr)?;
        fs::write(dir.join("scene.json"), serde_json::to_string_pretty(&scene)?)?;
    }
    Ok(())
}

/// Reloads finished cells of a stored run.
pub fn load_stored(out: &Path) -> Result<(ExperimentConfig, Vec<CellResult>, Vec<CleanResult>)> {
    let cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(out.join("config.json"))?)?;
    let clean: Vec<CleanResult> = serde_json::from_str(&fs::read_to_string(out.join("clean.json"))?)?;
    let mut found = Vec::new();
    for cell in cells(&cfg) {
        let id = cell.id(&cfg);
        match load_cell(out, &id) {
            Some(c) => found.push(c),
            None => return Err(Error::MissingSeries(format!("cell {id} has no metrics.json"))),
        }
    }
    Ok((cfg, found, clean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::spark::SparkConfig;
    use crate::harness::config::AttackSpec;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            suite: super::super::config::SuiteSpec {
                count: 2,
                scene: SceneConfig {
                    num_frames: 12,
                    ..SceneConfig::default()
                },
            },
            attacks: vec![AttackSpec::spark("spark", SparkConfig::default())],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn seeds_depend_on_every_cell_coordinate() {
        let cfg = tiny();
        let cs = cells(&cfg);
        assert_eq!(cs.len(), 4);
        let seeds: std::collections::BTreeSet<u64> = cs.iter().map(|c| c.seed(&cfg)).collect();
        assert_eq!(seeds.len(), 4);
    }

    #[test]
    fn empty_attack_list_gives_clean_rows_only() {
        let mut cfg = tiny();
        cfg.attacks.clear();
        let s = run_suite(&cfg, &RunOptions::default()).unwrap();
        assert!(s.cells.is_empty());
        assert_eq!(s.table.rows.len(), 1);
        assert_eq!(s.table.rows[0].attack, "clean");
    }
}
