//! Experiment configuration and the end-to-end run of one grid point:
//! splits → r → Training-1 → Training-2 (each selected method) → metrics.

use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ebm::{estimate_log_z, train_lambda, write_lambda, GamPotential, LambdaConfig, LogZEstimate, Training1Method};
use crate::error::{GamError, Result};
use crate::eval::{ce_of_plambda, cross_entropy, motif_frequency, read_runs, write_runs, RunSummary};
use crate::features::{FeatureMask, FeatureSet};
use crate::policy::{load_policy, save_policy, train_am, write_manifest, AmTrainConfig, PolicyParams};
use crate::rng;
use crate::sequence::{parse_bits, Sequence};
use crate::training2::{
    distill, distill_from_sampler, dpg_off, dpg_on, reinforce_pg, CollapseDiagnostics, DpgConfig, PgReward,
    PotentialHandle, Training2Method, Training2Report,
};
use crate::truth::{big_ratio, make_splits, write_dataset, CompletionTable, DatasetHeader, SplitSizes};

pub const DEFAULT_MOTIFS: [&str; 3] = ["1000101000101", "1011100111001", "10001011111000"];

/// Where Training-2 gets its target potential.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialSource {
    /// `P_λ` from Training-1.
    Gam,
    /// The exact unnormalized process `wn(x)·F(x)`; Training-1 is skipped.
    WnF,
}

impl fmt::Display for PotentialSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PotentialSource::Gam => "gam",
            PotentialSource::WnF => "wn_f",
        })
    }
}

impl FromStr for PotentialSource {
    type Err = GamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gam" => Ok(PotentialSource::Gam),
            "wn_f" => Ok(PotentialSource::WnF),
            _ => Err(GamError::Parse { what: "potential source", text: s.into(), reason: "expected gam or wn_f".into() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Draws behind each motif-frequency estimate.
    pub mtf_samples: usize,
    /// Draws from `r` behind the `ln Z` estimate.
    pub logz_samples: usize,
    /// Draws behind the PG collapse diagnostics.
    pub collapse_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { mtf_samples: 2000, logz_samples: 200_000, collapse_samples: 2000 }
    }
}

/// Everything a sweep needs; flat `key = value` text on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub motifs: Vec<String>,
    pub n: usize,
    pub masks: Vec<FeatureMask>,
    pub d_sizes: Vec<usize>,
    pub valid_size: usize,
    pub test_size: usize,
    pub seeds: Vec<u64>,
    pub t1: Training1Method,
    pub t2: Vec<Training2Method>,
    pub potential: PotentialSource,
    pub am: AmTrainConfig,
    pub lambda: LambdaConfig,
    pub distill_samples: usize,
    pub dpg: DpgConfig,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
    /// Directory holding trained reference models; `<out_dir>/r` when unset.
    pub r_cache: Option<PathBuf>,
    pub jobs: usize,
}

pub const OUT_DIR_ENV: &str = "GAM_DPG_OUT";

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            motifs: DEFAULT_MOTIFS.iter().map(|m| m.to_string()).collect(),
            n: 30,
            masks: vec!["1001111".parse().unwrap(), "Mv1001111".parse().unwrap()],
            d_sizes: vec![500, 1000, 5000, 10000, 20000],
            valid_size: 500,
            test_size: 5000,
            seeds: vec![1234, 4444],
            t1: Training1Method::Snis,
            t2: vec![Training2Method::Distill, Training2Method::DpgOff],
            potential: PotentialSource::Gam,
            am: AmTrainConfig::default(),
            lambda: LambdaConfig::default(),
            distill_samples: 20_000,
            dpg: DpgConfig::default(),
            eval: EvalConfig::default(),
            out_dir: std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs")),
            r_cache: None,
            jobs: 1,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| GamError::Parse {
        what: "config value",
        text: format!("{key} = {value}"),
        reason: e.to_string(),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    value.split(',').map(|v| parse_value(key, v)).collect()
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Sets one key; unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "motifs" | "motif" => self.motifs = v.split(',').map(|m| m.trim().to_string()).collect(),
            "n" => self.n = parse_value(key, v)?,
            "masks" | "mask" => self.masks = parse_list(key, v)?,
            "d_sizes" | "d_size" => self.d_sizes = parse_list(key, v)?,
            "valid_size" => self.valid_size = parse_value(key, v)?,
            "test_size" => self.test_size = parse_value(key, v)?,
            "seeds" | "seed" => self.seeds = parse_list(key, v)?,
            "t1" => self.t1 = parse_value(key, v)?,
            "t2" => self.t2 = parse_list(key, v)?,
            "potential" => self.potential = parse_value(key, v)?,
            "am.hidden" => self.am.hidden = parse_value(key, v)?,
            "am.max_gen_len" => self.am.max_gen_len = parse_value(key, v)?,
            "am.learning_rate" => self.am.learning_rate = parse_value(key, v)?,
            "am.momentum" => self.am.momentum = parse_value(key, v)?,
            "am.batch_size" => self.am.batch_size = parse_value(key, v)?,
            "am.clip_norm" => self.am.clip_norm = parse_value(key, v)?,
            "am.plateau_patience" => self.am.plateau_patience = parse_value(key, v)?,
            "am.patience" => self.am.patience = parse_value(key, v)?,
            "am.min_improvement" => self.am.min_improvement = parse_value(key, v)?,
            "am.max_epochs" => self.am.max_epochs = parse_value(key, v)?,
            "am.min_steps_between_evals" => self.am.min_steps_between_evals = parse_value(key, v)?,
            "t1.learning_rate" => self.lambda.learning_rate = parse_value(key, v)?,
            "t1.samples_per_step" => self.lambda.samples_per_step = parse_value(key, v)?,
            "t1.reuse_samples" => self.lambda.reuse_samples = parse_value(key, v)?,
            "t1.max_iters" => self.lambda.max_iters = parse_value(key, v)?,
            "t1.tol" => self.lambda.tol = parse_value(key, v)?,
            "rs.floor" => self.lambda.rejection.floor = parse_value(key, v)?,
            "rs.probe" => self.lambda.rejection.probe = parse_value(key, v)?,
            "distill.samples" => self.distill_samples = parse_value(key, v)?,
            "dpg.iterations" => self.dpg.iterations = parse_value(key, v)?,
            "dpg.episodes_per_iter" => self.dpg.episodes_per_iter = parse_value(key, v)?,
            "dpg.learning_rate" => self.dpg.learning_rate = parse_value(key, v)?,
            "dpg.momentum" => self.dpg.momentum = parse_value(key, v)?,
            "dpg.batch_size" => self.dpg.batch_size = parse_value(key, v)?,
            "dpg.clip_norm" => self.dpg.clip_norm = parse_value(key, v)?,
            "dpg.weight_clip" => self.dpg.weight_clip = parse_value(key, v)?,
            "pg.reward" => {
                self.dpg.pg_reward = match v {
                    "potential" => PgReward::Potential,
                    "log_potential" => PgReward::LogPotential,
                    _ => return Err(GamError::config(format!("pg.reward must be potential or log_potential, got {v:?}"))),
                }
            }
            "eval.mtf_samples" => self.eval.mtf_samples = parse_value(key, v)?,
            "eval.logz_samples" => self.eval.logz_samples = parse_value(key, v)?,
            "eval.collapse_samples" => self.eval.collapse_samples = parse_value(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "r_cache" => self.r_cache = Some(PathBuf::from(v)),
            "jobs" => self.jobs = parse_value(key, v)?,
            other => return Err(GamError::config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| GamError::config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        config.apply_text(&fs::read_to_string(path)?)?;
        Ok(config)
    }

    /// Every result-affecting setting as `(key, value)`, in a fixed order.
    /// Output locations and worker count are deliberately absent.
    pub fn result_entries(&self) -> Vec<(&'static str, String)> {
        let pg_reward = match self.dpg.pg_reward {
            PgReward::Potential => "potential",
            PgReward::LogPotential => "log_potential",
        };
        vec![
            ("motifs", self.motifs.join(",")),
            ("n", self.n.to_string()),
            ("masks", join(&self.masks)),
            ("d_sizes", join(&self.d_sizes)),
            ("valid_size", self.valid_size.to_string()),
            ("test_size", self.test_size.to_string()),
            ("seeds", join(&self.seeds)),
            ("t1", self.t1.to_string()),
            ("t2", join(&self.t2)),
            ("potential", self.potential.to_string()),
            ("am.hidden", self.am.hidden.to_string()),
            ("am.max_gen_len", self.am.max_gen_len.to_string()),
            ("am.learning_rate", self.am.learning_rate.to_string()),
            ("am.momentum", self.am.momentum.to_string()),
            ("am.batch_size", self.am.batch_size.to_string()),
            ("am.clip_norm", self.am.clip_norm.to_string()),
            ("am.plateau_patience", self.am.plateau_patience.to_string()),
            ("am.patience", self.am.patience.to_string()),
            ("am.min_improvement", self.am.min_improvement.to_string()),
            ("am.max_epochs", self.am.max_epochs.to_string()),
            ("am.min_steps_between_evals", self.am.min_steps_between_evals.to_string()),
            ("t1.learning_rate", self.lambda.learning_rate.to_string()),
            ("t1.samples_per_step", self.lambda.samples_per_step.to_string()),
            ("t1.reuse_samples", self.lambda.reuse_samples.to_string()),
            ("t1.max_iters", self.lambda.max_iters.to_string()),
            ("t1.tol", self.lambda.tol.to_string()),
            ("rs.floor", self.lambda.rejection.floor.to_string()),
            ("rs.probe", self.lambda.rejection.probe.to_string()),
            ("distill.samples", self.distill_samples.to_string()),
            ("dpg.iterations", self.dpg.iterations.to_string()),
            ("dpg.episodes_per_iter", self.dpg.episodes_per_iter.to_string()),
            ("dpg.learning_rate", self.dpg.learning_rate.to_string()),
            ("dpg.momentum", self.dpg.momentum.to_string()),
            ("dpg.batch_size", self.dpg.batch_size.to_string()),
            ("dpg.clip_norm", self.dpg.clip_norm.to_string()),
            ("dpg.weight_clip", self.dpg.weight_clip.to_string()),
            ("pg.reward", pg_reward.to_string()),
            ("eval.mtf_samples", self.eval.mtf_samples.to_string()),
            ("eval.logz_samples", self.eval.logz_samples.to_string()),
            ("eval.collapse_samples", self.eval.collapse_samples.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut text: String = self.result_entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        text.push_str(&format!("out_dir = {}\n", self.out_dir.display()));
        if let Some(r) = &self.r_cache {
            text.push_str(&format!("r_cache = {}\n", r.display()));
        }
        text.push_str(&format!("jobs = {}\n", self.jobs));
        text
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n", self.n),
            ("valid_size", self.valid_size),
            ("test_size", self.test_size),
            ("am.hidden", self.am.hidden),
            ("am.max_gen_len", self.am.max_gen_len),
            ("am.batch_size", self.am.batch_size),
            ("am.max_epochs", self.am.max_epochs),
            ("distill.samples", self.distill_samples),
            ("dpg.episodes_per_iter", self.dpg.episodes_per_iter),
            ("dpg.batch_size", self.dpg.batch_size),
            ("eval.mtf_samples", self.eval.mtf_samples),
            ("jobs", self.jobs),
        ];
        for (key, value) in positive {
            if value == 0 {
                return Err(GamError::config(format!("{key} must be positive")));
            }
        }
        if self.eval.logz_samples < 100 {
            return Err(GamError::config("eval.logz_samples must be at least 100"));
        }
        for (name, empty) in [
            ("motifs", self.motifs.is_empty()),
            ("masks", self.masks.is_empty()),
            ("d_sizes", self.d_sizes.is_empty()),
            ("seeds", self.seeds.is_empty()),
            ("t2", self.t2.is_empty()),
        ] {
            if empty {
                return Err(GamError::config(format!("{name} must not be empty")));
            }
        }
        if self.d_sizes.contains(&0) {
            return Err(GamError::config("every |D| must be positive"));
        }
        for m in &self.motifs {
            let bits = parse_bits(m, "motif")?;
            if bits.is_empty() || bits.len() > self.n {
                return Err(GamError::config(format!("motif {m} must have length between 1 and n = {}", self.n)));
            }
        }
        for mask in &self.masks {
            if mask.active_count() == 0 {
                return Err(GamError::config(format!("mask {mask} activates no feature")));
            }
        }
        Ok(())
    }

    /// Cartesian grid in a fixed order: motif, |D|, seed, mask.
    pub fn points(&self) -> Vec<Point> {
        let mut points = Vec::new();
        for motif in &self.motifs {
            for &d in &self.d_sizes {
                for &seed in &self.seeds {
                    for &mask in &self.masks {
                        points.push(Point { motif: motif.clone(), mask, d, seed });
                    }
                }
            }
        }
        points
    }
}

/// One grid point; every selected Training-2 method runs inside it.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Point {
    pub motif: String,
    pub mask: FeatureMask,
    pub d: usize,
    pub seed: u64,
}

impl Point {
    pub fn name(&self) -> String {
        format!("m{}_{}_D{}_s{}", self.motif, self.mask, self.d, self.seed)
    }

    /// Identifies the shared reference model `r`, which does not depend on the mask.
    pub fn r_name(&self) -> String {
        format!("m{}_D{}_s{}", self.motif, self.d, self.seed)
    }
}

fn digest(lines: &[String]) -> String {
    let mut h = Sha256::new();
    for line in lines {
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of everything that determines a point's results.
pub fn point_hash(config: &ExperimentConfig, point: &Point) -> String {
    let mut lines: Vec<String> = config
        .result_entries()
        .into_iter()
        .filter(|(k, _)| !matches!(*k, "motifs" | "masks" | "d_sizes" | "seeds"))
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    lines.push(format!("point={}", point.name()));
    lines.push(format!("version={}", env!("CARGO_PKG_VERSION")));
    digest(&lines)
}

/// Hash of everything that determines `r` for a point.
pub fn r_hash(config: &ExperimentConfig, point: &Point) -> String {
    let mut lines: Vec<String> = config
        .result_entries()
        .into_iter()
        .filter(|(k, _)| matches!(*k, "n" | "valid_size" | "test_size") || k.starts_with("am."))
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    lines.push(format!("r={}", point.r_name()));
    lines.push(format!("version={}", env!("CARGO_PKG_VERSION")));
    digest(&lines)
}

/// Method label in the runs table; runs against the exact potential carry a `wn_` prefix.
pub fn method_label(potential: PotentialSource, method: Training2Method) -> String {
    match potential {
        PotentialSource::Gam => method.name().to_string(),
        PotentialSource::WnF => format!("wn_{}", method.name()),
    }
}

#[derive(Clone, Debug, Default)]
pub struct PointOutcome {
    pub rows: Vec<RunSummary>,
    /// PG collapse diagnostics, when pg ran.
    pub collapse: Option<CollapseDiagnostics>,
    pub collapse_r: Option<CollapseDiagnostics>,
    pub lambda: Vec<f64>,
    pub lambda_converged: bool,
    pub t1_gap: f64,
    pub r_epochs: usize,
    pub training2: Vec<(String, Training2Report)>,
    pub distill_acceptance: Option<f64>,
    pub seconds: f64,
}

/// Trains (or reloads) the reference model for `point`.
fn reference_model(
    config: &ExperimentConfig,
    point: &Point,
    train: &[Sequence],
    valid: &[Sequence],
    dir: Option<&Path>,
) -> Result<(PolicyParams, usize)> {
    let cached = dir.map(|d| d.join("r.pol"));
    if let Some(path) = &cached {
        if path.exists() {
            return Ok((load_policy(path)?, 0));
        }
    }
    let (r, report) = train_am(train, valid, &config.am, &mut rng::stream(point.seed, "am/r"))?;
    if let (Some(dir), Some(path)) = (dir, &cached) {
        let trace: String = report.valid_trace.iter().map(|(s, c)| format!("{s} {c}\n")).collect();
        fs::write(dir.join("r_valid_trace.txt"), trace)?;
        write_manifest(&dir.join("r.manifest"), &r, point.seed, "r_valid_trace.txt")?;
        let tmp = dir.join("r.pol.tmp");
        save_policy(&tmp, &r)?;
        fs::rename(tmp, path)?;
    }
    Ok((r, report.epochs))
}

fn write_splits(dir: &Path, point: &Point, n: usize, splits: &crate::truth::Splits) -> Result<()> {
    for (name, data) in [("train", &splits.train), ("valid", &splits.valid), ("test", &splits.test)] {
        let path = dir.join(format!("{name}.txt"));
        if path.exists() {
            continue;
        }
        let header = DatasetHeader { motif: point.motif.clone(), n, seed: point.seed, split: name.into() };
        write_dataset(BufWriter::new(fs::File::create(&path)?), &header, data)?;
    }
    Ok(())
}

/// Runs one grid point end to end. With `out` set, checkpoints and traces
/// are written under `out/points/<name>` and `r` is shared through the
/// reference-model cache.
pub fn run_point(config: &ExperimentConfig, point: &Point, out: Option<&Path>) -> Result<PointOutcome> {
    let started = std::time::Instant::now();
    let table = CompletionTable::for_motif(&point.motif, config.n)?;
    let entropy = table.entropy()?;
    let sizes = SplitSizes { train: point.d, valid: config.valid_size, test: config.test_size };
    let splits = make_splits(&table, sizes, point.seed);

    let r_dir = match out {
        Some(o) => {
            let root = config.r_cache.clone().unwrap_or_else(|| o.join("r"));
            let d = root.join(format!("{}_{}", point.r_name(), &r_hash(config, point)[..12]));
            fs::create_dir_all(&d)?;
            write_splits(&d, point, config.n, &splits)?;
            Some(d)
        }
        None => None,
    };
    let point_dir = match out {
        Some(o) => {
            let d = o.join("points").join(point.name());
            fs::create_dir_all(&d)?;
            Some(d)
        }
        None => None,
    };

    let (r, r_epochs) = reference_model(config, point, &splits.train, &splits.valid, r_dir.as_deref())?;
    let motif = table.automaton().motif().to_vec();
    let ce_r = cross_entropy(&splits.test, &r)?.per_token;
    let mtf_r = motif_frequency(&r, &motif, config.eval.mtf_samples, &mut rng::stream(point.seed, "eval/mtf/r"))?;
    let tag = |what: &str| format!("{what}/{}", point.mask);

    let mut outcome = PointOutcome { r_epochs, ..PointOutcome::default() };
    let features = FeatureSet::new(point.mask, &motif, config.n);

    // Target potential and its normalizer.
    let (gp, log_z, ce_plambda) = match config.potential {
        PotentialSource::Gam => {
            let data_moment = features.data_moment(&splits.train)?;
            let mut lambda_config = config.lambda.clone();
            lambda_config.method = config.t1;
            let fit = train_lambda(&r, &features, &data_moment, &lambda_config, &mut rng::stream(point.seed, &tag("t1")))?;
            if let Some(dir) = &point_dir {
                write_lambda(BufWriter::new(fs::File::create(dir.join("lambda.txt"))?), &features, &fit.lambda)?;
                fit.write_trace(BufWriter::new(fs::File::create(dir.join("t1_trace.jsonl"))?))?;
            }
            outcome.lambda = fit.lambda.clone();
            outcome.lambda_converged = fit.converged;
            outcome.t1_gap = fit.best_gap_inf;
            let gp = GamPotential::new(r.clone(), features.clone(), fit.lambda)?;
            let log_z = estimate_log_z(&gp, config.eval.logz_samples, &mut rng::stream(point.seed, &tag("logz")))?;
            let ce = ce_of_plambda(&splits.test, &gp, &log_z)?;
            (Some(gp), log_z, ce)
        }
        PotentialSource::WnF => {
            // p = wn·F / Z with Z = count / 2^n, known exactly.
            let z = big_ratio(table.total(), &(num_bigint::BigUint::from(1u8) << config.n));
            let log_z = LogZEstimate { log_z: z.ln(), stderr: 0.0 };
            let ce = cross_entropy(&splits.test, &table)?.per_token;
            (None, log_z, (ce, 0.0))
        }
    };
    let potential = match &gp {
        Some(gp) => PotentialHandle::gam(gp),
        None => PotentialHandle::white_noise_filter(table.automaton().clone(), config.n),
    };

    for &method in &config.t2 {
        let label = method_label(config.potential, method);
        let mut stream = rng::stream(point.seed, &tag(&format!("t2/{label}")));
        let (pi, report) = match method {
            Training2Method::Distill => {
                let (pi, rep) = match &gp {
                    Some(gp) => distill(gp, config.distill_samples, &splits.valid, &config.am, &config.lambda.rejection, &mut stream)?,
                    None => distill_from_sampler(&table, config.distill_samples, &splits.valid, &config.am, &mut stream)?,
                };
                outcome.distill_acceptance = Some(rep.acceptance_rate);
                if let Some(dir) = &point_dir {
                    let trace: String = rep.training.valid_trace.iter().map(|(s, c)| format!("{s} {c}\n")).collect();
                    fs::write(dir.join(format!("t2_{label}_valid_trace.txt")), trace)?;
                }
                (pi, None)
            }
            Training2Method::DpgOff => {
                let (pi, rep) = dpg_off(&potential, &r, &splits.valid, &config.dpg, &mut stream)?;
                (pi, Some(rep))
            }
            Training2Method::DpgOn => {
                let (pi, rep) = dpg_on(&potential, &r, &splits.valid, &config.dpg, &mut stream)?;
                (pi, Some(rep))
            }
            Training2Method::Pg => {
                let (pi, rep) = reinforce_pg(&potential, &r, &splits.valid, &config.dpg, &mut stream)?;
                let samples = config.eval.collapse_samples;
                outcome.collapse = Some(CollapseDiagnostics::measure(&pi, samples, &mut rng::stream(point.seed, &tag("eval/collapse/pi"))));
                outcome.collapse_r = Some(CollapseDiagnostics::measure(&r, samples, &mut rng::stream(point.seed, &tag("eval/collapse/r"))));
                (pi, Some(rep))
            }
        };
        if let Some(dir) = &point_dir {
            save_policy(&dir.join(format!("pi_{label}.pol")), &pi)?;
            if let Some(rep) = &report {
                rep.write_trace(BufWriter::new(fs::File::create(dir.join(format!("t2_{label}.jsonl")))?))?;
            }
        }
        let ce_pi = cross_entropy(&splits.test, &pi)?.per_token;
        let mtf_pi = motif_frequency(&pi, &motif, config.eval.mtf_samples, &mut rng::stream(point.seed, &tag(&format!("eval/mtf/{label}"))))?;
        outcome.rows.push(RunSummary {
            motif: point.motif.clone(),
            mask: point.mask.to_string(),
            d: point.d,
            seed: point.seed,
            method: label.clone(),
            h_tok: entropy.per_token,
            ce_r,
            ce_pi,
            ce_plambda: ce_plambda.0,
            ce_plambda_se: ce_plambda.1,
            mtf_r,
            mtf_pi,
            log_z: log_z.log_z,
            log_z_se: log_z.stderr,
        });
        if let Some(rep) = report {
            outcome.training2.push((label, rep));
        }
    }
    outcome.seconds = started.elapsed().as_secs_f64();

    if let Some(dir) = &point_dir {
        let details = serde_json::json!({
            "lambda": outcome.lambda,
            "lambda_names": features.names(),
            "lambda_converged": outcome.lambda_converged,
            "t1_gap": outcome.t1_gap,
            "r_epochs": outcome.r_epochs,
            "distill_acceptance": outcome.distill_acceptance,
            "collapse": outcome.collapse,
            "collapse_r": outcome.collapse_r,
            "h_seq": entropy.per_sequence,
            "seconds": outcome.seconds,
        });
        fs::write(dir.join("details.json"), serde_json::to_string_pretty(&details)?)?;
    }
    Ok(outcome)
}

/// Reads the runs written for a finished point, if its manifest matches.
pub fn completed_rows(dir: &Path, hash: &str) -> Result<Option<Vec<RunSummary>>> {
    let manifest = dir.join("manifest.txt");
    let summary = dir.join("summary.csv");
    if !manifest.exists() || !summary.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&manifest)?;
    if text.lines().next() != Some(&format!("hash={hash}")) {
        return Ok(None);
    }
    Ok(Some(read_runs(BufReader::new(fs::File::open(summary)?))?))
}

/// Marks a point finished: manifest first, then the summary that completes it.
pub fn record_point(dir: &Path, hash: &str, config: &ExperimentConfig, rows: &[RunSummary]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = format!("hash={hash}\n");
    manifest.push_str(&config.to_text());
    fs::write(dir.join("manifest.txt"), manifest)?;
    let tmp = dir.join("summary.csv.tmp");
    write_runs(BufWriter::new(fs::File::create(&tmp)?), rows)?;
    fs::rename(tmp, dir.join("summary.csv"))?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests;
