//! Resumable cartesian sweeps over the experiment grid.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{GamError, Result};
use crate::eval::{ratio_table, write_runs, RatioTable, RunSummary};
use crate::experiment::{completed_rows, method_label, point_hash, record_point, run_point, ExperimentConfig, Point};
use crate::training2::Training2Method;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub point: String,
    pub error: String,
    pub config_error: bool,
}

#[derive(Clone, Debug, Default)]
pub struct SweepResult {
    pub rows: Vec<RunSummary>,
    /// `(dpg label, distill label)` pairs and their ratio tables.
    pub ratios: Vec<(String, String, RatioTable)>,
    pub failures: Vec<PointFailure>,
    /// Points whose results were reused from an earlier run.
    pub reused: usize,
}

impl SweepResult {
    pub fn ratio(&self, dpg: &str) -> Option<&RatioTable> {
        self.ratios.iter().find(|(d, _, _)| d == dpg).map(|(_, _, t)| t)
    }
}

pub fn point_dir(out: &Path, point: &Point) -> PathBuf {
    out.join("points").join(point.name())
}

fn write_error(dir: &Path, failure: &PointFailure) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("error.json"), serde_json::to_string_pretty(failure)?)?;
    Ok(())
}

/// Runs one point unless its manifest hash shows it already finished.
pub fn run_or_reuse(config: &ExperimentConfig, point: &Point, out: &Path) -> Result<(Vec<RunSummary>, bool)> {
    let dir = point_dir(out, point);
    let hash = point_hash(config, point);
    if let Some(rows) = completed_rows(&dir, &hash)? {
        return Ok((rows, true));
    }
    let _ = fs::remove_file(dir.join("error.json"));
    let outcome = run_point(config, point, Some(out))?;
    record_point(&dir, &hash, config, &outcome.rows)?;
    Ok((outcome.rows, false))
}

/// Points sharing a reference model stay on one worker so `r` is trained once.
fn groups(points: Vec<Point>) -> Vec<Vec<Point>> {
    let mut by_r: BTreeMap<String, Vec<Point>> = BTreeMap::new();
    let mut order = Vec::new();
    for p in points {
        let key = p.r_name();
        if !by_r.contains_key(&key) {
            order.push(key.clone());
        }
        by_r.entry(key).or_default().push(p);
    }
    order.into_iter().map(|k| by_r.remove(&k).unwrap()).collect()
}

/// Runs every point of the grid on `config.jobs` threads, then aggregates.
/// A failing point is recorded in its `error.json` and the sweep continues.
pub fn run_sweep(config: &ExperimentConfig, out: &Path) -> Result<SweepResult> {
    config.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), config.to_text())?;
    let points = config.points();
    let index: BTreeMap<String, usize> = points.iter().enumerate().map(|(i, p)| (p.name(), i)).collect();
    let queue = Mutex::new(groups(points.clone()));
    let done: Mutex<Vec<(usize, Result<(Vec<RunSummary>, bool)>)>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..config.jobs.min(points.len()).max(1) {
            scope.spawn(|| loop {
                let Some(group) = queue.lock().unwrap().pop() else { break };
                for p in group {
                    let result = run_or_reuse(config, &p, out);
                    done.lock().unwrap().push((index[&p.name()], result));
                }
            });
        }
    });

    let mut finished = done.into_inner().unwrap();
    finished.sort_by_key(|(i, _)| *i);
    let mut result = SweepResult::default();
    for (i, outcome) in finished {
        match outcome {
            Ok((rows, reused)) => {
                result.reused += reused as usize;
                result.rows.extend(rows);
            }
            Err(e) => {
                let failure =
                    PointFailure { point: points[i].name(), error: e.to_string(), config_error: e.is_config() };
                write_error(&point_dir(out, &points[i]), &failure)?;
                result.failures.push(failure);
            }
        }
    }
    aggregate(config, out, &mut result)?;
    Ok(result)
}

/// Writes `runs.csv` and one ratio table per DPG variant paired with distillation.
fn aggregate(config: &ExperimentConfig, out: &Path, result: &mut SweepResult) -> Result<()> {
    write_runs(BufWriter::new(fs::File::create(out.join("runs.csv"))?), &result.rows)?;
    if !config.t2.contains(&Training2Method::Distill) {
        return Ok(());
    }
    let dis = method_label(config.potential, Training2Method::Distill);
    for &m in &config.t2 {
        if matches!(m, Training2Method::Distill) {
            continue;
        }
        let dpg = method_label(config.potential, m);
        let table = ratio_table(&result.rows, &dpg, &dis);
        let name = if m == Training2Method::DpgOff { "ratios.csv".to_string() } else { format!("ratios_{dpg}.csv") };
        table.write_csv(BufWriter::new(fs::File::create(out.join(name))?))?;
        result.ratios.push((dpg, dis.clone(), table));
    }
    if !result.failures.is_empty() {
        fs::write(out.join("failures.json"), serde_json::to_string_pretty(&result.failures)?)?;
    }
    Ok(())
}

/// Exit status for a finished sweep: 0, or 2 when every failure is a
/// configuration problem, else 3.
pub fn exit_code(result: &SweepResult) -> i32 {
    if result.failures.is_empty() {
        0
    } else if result.failures.iter().all(|f| f.config_error) {
        2
    } else {
        3
    }
}

pub fn exit_code_for(error: &GamError) -> i32 {
    if error.is_config() {
        2
    } else {
        3
    }
}
