//! Metrics: cross-entropies, motif frequency, the cross-entropy of the
//! unnormalized `P_λ` through an estimated `ln Z`, and Table-1-style ratio
//! statistics over many runs.
//!
//! Cross-entropies are in nats per token, where a sequence of length `L`
//! counts `L + 1` tokens (its terminator included).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ebm::{GamPotential, LogZEstimate};
use crate::error::{GamError, Result};
use crate::model::{SequenceModel, SequenceSampler};
use crate::sequence::{NatsTally, Sequence};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossEntropy {
    pub per_token: f64,
    pub per_sequence: f64,
}

pub fn cross_entropy<M: SequenceModel>(test: &[Sequence], model: &M) -> Result<CrossEntropy> {
    if test.is_empty() {
        return Err(GamError::EmptyDataset("test set"));
    }
    let mut tally = NatsTally::default();
    for x in test {
        tally.add(-model.logprob(x), x);
    }
    Ok(CrossEntropy { per_token: tally.per_token(), per_sequence: tally.per_sequence() })
}

/// Fraction of `n_samples` draws that contain `motif`.
pub fn motif_frequency<S: SequenceSampler, R: Rng + ?Sized>(
    sampler: &S,
    motif: &[u8],
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(GamError::config("motif frequency needs at least one sample"));
    }
    let hits = (0..n_samples).filter(|_| sampler.sample(rng).contains(motif)).count();
    Ok(hits as f64 / n_samples as f64)
}

/// `CE(T, p_λ)` with `p_λ = P_λ / Z`, and its standard error from that of `ln Z`.
pub fn ce_of_plambda(test: &[Sequence], gp: &GamPotential, log_z: &LogZEstimate) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(GamError::EmptyDataset("test set"));
    }
    let mut tally = NatsTally::default();
    for x in test {
        tally.add(log_z.log_z - gp.log_potential(x), x);
    }
    let per_token_z = tally.sequences as f64 / tally.tokens as f64;
    Ok((tally.per_token(), per_token_z * log_z.stderr))
}

/// One experiment's metrics, one row of the runs table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub motif: String,
    pub mask: String,
    pub d: usize,
    pub seed: u64,
    pub method: String,
    pub h_tok: f64,
    pub ce_r: f64,
    pub ce_pi: f64,
    pub ce_plambda: f64,
    pub ce_plambda_se: f64,
    pub mtf_r: f64,
    pub mtf_pi: f64,
    pub log_z: f64,
    pub log_z_se: f64,
}

pub const RUNS_HEADER: &str = "motif,mask,D,seed,method,H_tok,ce_r,ce_pi,ce_plambda,ce_plambda_se,mtf_r,mtf_pi,logZ,logZ_se";

impl RunSummary {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.motif,
            self.mask,
            self.d,
            self.seed,
            self.method,
            self.h_tok,
            self.ce_r,
            self.ce_pi,
            self.ce_plambda,
            self.ce_plambda_se,
            self.mtf_r,
            self.mtf_pi,
            self.log_z,
            self.log_z_se
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let bad = |detail: String| GamError::Format { what: "run summary row", detail };
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 14 {
            return Err(bad(format!("expected 14 fields, got {} in {line:?}", f.len())));
        }
        let num = |i: usize| -> Result<f64> { f[i].parse().map_err(|e| bad(format!("field {i} {:?}: {e}", f[i]))) };
        Ok(RunSummary {
            motif: f[0].into(),
            mask: f[1].into(),
            d: f[2].parse().map_err(|e| bad(format!("D {:?}: {e}", f[2])))?,
            seed: f[3].parse().map_err(|e| bad(format!("seed {:?}: {e}", f[3])))?,
            method: f[4].into(),
            h_tok: num(5)?,
            ce_r: num(6)?,
            ce_pi: num(7)?,
            ce_plambda: num(8)?,
            ce_plambda_se: num(9)?,
            mtf_r: num(10)?,
            mtf_pi: num(11)?,
            log_z: num(12)?,
            log_z_se: num(13)?,
        })
    }
}

pub fn write_runs<W: Write>(mut out: W, rows: &[RunSummary]) -> Result<()> {
    writeln!(out, "{RUNS_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.csv_row())?;
    }
    Ok(())
}

pub fn read_runs<R: BufRead>(input: R) -> Result<Vec<RunSummary>> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != RUNS_HEADER {
                return Err(GamError::Format { what: "runs table", detail: format!("unexpected header {line:?}") });
            }
            continue;
        }
        if !line.trim().is_empty() {
            rows.push(RunSummary::parse_csv_row(&line)?);
        }
    }
    Ok(rows)
}

/// The seven ratio columns, in table order.
pub const RATIO_COLUMNS: [&str; 7] =
    ["ce_dpg_dis", "mtf_dpg_dis", "ce_dpg_r", "ce_dpg_H", "mtf_dpg_r", "ce_dis_r", "mtf_dis_r"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub d: usize,
    /// Paired runs contributing to this row.
    pub runs: usize,
    pub mean: [f64; 7],
    pub sd: [f64; 7],
    /// Finite values behind each column (a zero motif frequency in a
    /// denominator drops that run from the column).
    pub counts: [usize; 7],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioTable {
    pub rows: Vec<RatioRow>,
    /// Runs with no partner of the other method, excluded from the table.
    pub unpaired: Vec<String>,
}

/// The seven ratios for one paired (dpg, distill) run.
pub fn run_ratios(dpg: &RunSummary, dis: &RunSummary) -> [f64; 7] {
    [
        dpg.ce_pi / dis.ce_pi,
        dpg.mtf_pi / dis.mtf_pi,
        dpg.ce_pi / dpg.ce_r,
        dpg.ce_pi / dpg.h_tok,
        dpg.mtf_pi / dpg.mtf_r,
        dis.ce_pi / dis.ce_r,
        dis.mtf_pi / dis.mtf_r,
    ]
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Groups `dpg_method` and `distill_method` rows by (motif, mask, seed, D),
/// then reports per-|D| means and sample standard deviations of the ratios.
pub fn ratio_table(summaries: &[RunSummary], dpg_method: &str, distill_method: &str) -> RatioTable {
    type Key = (String, String, u64, usize);
    let mut pairs: BTreeMap<Key, (Option<&RunSummary>, Option<&RunSummary>)> = BTreeMap::new();
    for s in summaries {
        let key = (s.motif.clone(), s.mask.clone(), s.seed, s.d);
        if s.method == dpg_method {
            pairs.entry(key).or_default().0 = Some(s);
        } else if s.method == distill_method {
            pairs.entry(key).or_default().1 = Some(s);
        }
    }
    let mut by_d: BTreeMap<usize, Vec<[f64; 7]>> = BTreeMap::new();
    let mut table = RatioTable::default();
    for ((motif, mask, seed, d), pair) in &pairs {
        match pair {
            (Some(dpg), Some(dis)) => by_d.entry(*d).or_default().push(run_ratios(dpg, dis)),
            (Some(only), None) | (None, Some(only)) => {
                table.unpaired.push(format!("motif={motif} mask={mask} seed={seed} D={d} method={}", only.method));
            }
            (None, None) => {}
        }
    }
    for (d, ratios) in by_d {
        let mut row = RatioRow { d, runs: ratios.len(), mean: [0.0; 7], sd: [0.0; 7], counts: [0; 7] };
        for c in 0..7 {
            let finite: Vec<f64> = ratios.iter().map(|r| r[c]).filter(|v| v.is_finite()).collect();
            let (m, s) = mean_sd(&finite);
            row.mean[c] = m;
            row.sd[c] = s;
            row.counts[c] = finite.len();
        }
        table.rows.push(row);
    }
    table
}

impl RatioTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = vec!["D".to_string(), "runs".to_string()];
        header.extend(RATIO_COLUMNS.iter().map(|c| c.to_string()));
        header.extend(RATIO_COLUMNS.iter().map(|c| format!("sd_{c}")));
        writeln!(out, "{}", header.join(","))?;
        for row in &self.rows {
            let mut fields = vec![row.d.to_string(), row.runs.to_string()];
            fields.extend(row.mean.iter().map(|v| v.to_string()));
            fields.extend(row.sd.iter().map(|v| v.to_string()));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn row(&self, d: usize) -> Option<&RatioRow> {
        self.rows.iter().find(|r| r.d == d)
    }

    pub fn column(name: &str) -> Option<usize> {
        RATIO_COLUMNS.iter().position(|c| *c == name)
    }
}

#[cfg(test)]
mod tests;
