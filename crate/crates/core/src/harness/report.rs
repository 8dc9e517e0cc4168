//! Aggregated result tables, CSV/JSON writers and report regeneration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::plot::cell_plots;
use super::run::{cell_dir, load_stored, CellResult, CleanResult};
use crate::attack::FrameRecord;
use crate::error::Result;
use crate::metrics::map;
use crate::objective::ObjectiveKind;
use crate::tracker::FeatureKernel;

pub const CSV_HEADER: &str = "attack,method,schedule,objective,attacker_kernel,victim_kernel,videos,org_prec,precision,prec_drop,succ_rate,map,mean_iterations,failed_frames,failed_cells";

/// One row per (attack, objective, kernel pair), averaged over videos.
/// Rates are percentages; MAP is on the 0–255 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub attack: String,
    pub method: String,
    pub schedule: String,
    pub objective: Option<ObjectiveKind>,
    pub attacker_kernel: Option<FeatureKernel>,
    pub victim_kernel: FeatureKernel,
    pub videos: usize,
    pub org_prec: f64,
    pub precision: f64,
    pub prec_drop: f64,
    pub succ_rate: Option<f64>,
    pub map: f64,
    pub mean_iterations: f64,
    pub failed_frames: usize,
    pub failed_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<TableRow>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl ResultTable {
    pub fn build(cfg: &ExperimentConfig, cells: &[CellResult], clean: &[CleanResult]) -> Self {
        let org = |k: FeatureKernel| 100.0 * mean(clean.iter().filter(|c| c.kernel == k).map(|c| c.precision));
        let mut rows: Vec<TableRow> = cfg
            .victim_kernels()
            .into_iter()
            .map(|k| TableRow {
                attack: "clean".into(),
                method: "none".into(),
                schedule: "none".into(),
                objective: None,
                attacker_kernel: None,
                victim_kernel: k,
                videos: clean.iter().filter(|c| c.kernel == k).count(),
                org_prec: org(k),
                precision: org(k),
                prec_drop: 0.0,
                succ_rate: None,
                map: 0.0,
                mean_iterations: 0.0,
                failed_frames: 0,
                failed_cells: 0,
            })
            .collect();
        let mut keys: Vec<(String, ObjectiveKind, FeatureKernel, FeatureKernel)> = Vec::new();
        for c in cells {
            let k = (c.attack.clone(), c.objective, c.attacker_kernel, c.victim_kernel);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        for (attack, objective, ak, vk) in keys {
            let group: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.attack == attack && c.objective == objective && c.attacker_kernel == ak && c.victim_kernel == vk)
                .collect();
            let ok: Vec<_> = group.iter().filter_map(|c| c.metrics.as_ref()).collect();
            let succ = ok.iter().map(|m| m.succ_rate).collect::<Option<Vec<f64>>>().filter(|v| !v.is_empty());
            let precision = 100.0 * mean(ok.iter().map(|m| m.precision));
            rows.push(TableRow {
                attack,
                method: group[0].method.clone(),
                schedule: group[0].schedule.clone(),
                objective: Some(objective),
                attacker_kernel: Some(ak),
                victim_kernel: vk,
                videos: ok.len(),
                org_prec: org(vk),
                precision,
                prec_drop: 100.0 * mean(ok.iter().map(|m| m.prec_drop)),
                succ_rate: succ.map(|v| 100.0 * mean(v.into_iter())),
                map: map(&ok.iter().map(|m| vec![m.map]).collect::<Vec<_>>()),
                mean_iterations: mean(ok.iter().map(|m| m.mean_iterations)),
                failed_frames: ok.iter().map(|m| m.failed_frames).sum(),
                failed_cells: group.len() - ok.len(),
            });
        }
        Self { rows }
    }

    pub fn find(&self, attack: &str, objective: ObjectiveKind, attacker: FeatureKernel, victim: FeatureKernel) -> Option<&TableRow> {
        self.rows.iter().find(|r| {
            r.attack == attack && r.objective == Some(objective) && r.attacker_kernel == Some(attacker) && r.victim_kernel == victim
        })
    }

    pub fn clean(&self, victim: FeatureKernel) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.attack == "clean" && r.victim_kernel == victim)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:.4},{:.4},{:.4},{},{:.6},{:.4},{},{}",
                r.attack,
                r.method,
                r.schedule,
                r.objective.map_or("", |o| o.name()),
                r.attacker_kernel.map_or("", |k| k.name()),
                r.victim_kernel.name(),
                r.videos,
                r.org_prec,
                r.precision,
                r.prec_drop,
                r.succ_rate.map_or(String::new(), |v| format!("{v:.4}")),
                r.map,
                r.mean_iterations,
                r.failed_frames,
                r.failed_cells
            );
        }
        s
    }

    /// Parses [`ResultTable::to_csv`] output back into `(header, rows of fields)`.
    pub fn parse_csv(text: &str) -> Vec<Vec<String>> {
        text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
    }
}

/// Formats an optional value for CSV; absent values are empty.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

pub const FRAMES_HEADER: &str = "t,cle_gt,cle_target,mean_abs_pert,objective,iterations";

/// Per-frame series of one cell.
pub fn frames_csv(frames: &[FrameRecord]) -> String {
    let mut s = String::from(FRAMES_HEADER);
    s.push('\n');
    for f in frames {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            f.t,
            f.cle_gt,
            fmt_opt(f.cle_target),
            f.mean_abs_pert,
            fmt_opt(f.objective),
            f.iterations
        );
    }
    s
}

#[derive(Serialize)]
struct CellSummary<'a> {
    id: &'a str,
    attack: &'a str,
    objective: ObjectiveKind,
    attacker_kernel: FeatureKernel,
    victim_kernel: FeatureKernel,
    video: usize,
    seed: u64,
    metrics: &'a Option<crate::metrics::RunMetrics>,
    error: &'a Option<String>,
}

#[derive(Serialize)]
struct SuiteSummary<'a> {
    rows: &'a [TableRow],
    clean: &'a [CleanResult],
    cells: Vec<CellSummary<'a>>,
}

pub fn summary_json(cells: &[CellResult], clean: &[CleanResult], table: &ResultTable) -> Result<String> {
    let s = SuiteSummary {
        rows: &table.rows,
        clean,
        cells: cells
            .iter()
            .map(|c| CellSummary {
                id: &c.id,
                attack: &c.attack,
                objective: c.objective,
                attacker_kernel: c.attacker_kernel,
                victim_kernel: c.victim_kernel,
                video: c.video,
                seed: c.seed,
                metrics: &c.metrics,
                error: &c.error,
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&s)?)
}

pub fn write_outputs(out: &Path, _cfg: &ExperimentConfig, cells: &[CellResult], clean: &[CleanResult], table: &ResultTable) -> Result<()> {
    fs::write(out.join("results.csv"), table.to_csv())?;
    fs::write(out.join("summary.json"), summary_json(cells, clean, table)?)?;
    fs::write(out.join("clean.json"), serde_json::to_string_pretty(clean)?)?;
    Ok(())
}

/// Rebuilds tables and plots from a stored run directory.
pub fn report(out: &Path) -> Result<ResultTable> {
    let (cfg, cells, clean) = load_stored(out)?;
    let table = ResultTable::build(&cfg, &cells, &clean);
    write_outputs(out, &cfg, &cells, &clean, &table)?;
    for c in cells.iter().filter(|c| c.video < cfg.plot_videos && !c.frames.is_empty()) {
        let dir = cell_dir(out, &c.id);
        for (name, svg) in cell_plots(c)? {
            fs::write(dir.join(name), svg)?;
        }
    }
    Ok(table)
}
