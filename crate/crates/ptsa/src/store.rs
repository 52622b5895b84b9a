//! Append-only JSONL sample store.
//!
//! One line per evaluated scenario. A subset-simulation run can be rebuilt
//! from its lines alone: thresholds, seeds and the failure fraction are
//! recomputed from the stored margins and checked against the stored seed
//! flags.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ptsa_core::rare_event::{percentile_threshold, select_seeds, EvaluatedSample, LevelRecord, SubSimResult, SubSimWarning};
use ptsa_core::uncertainty::ScenarioPoint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One stored sample. `ptsm_cycles` holds whatever margin the limit state
/// returned; for the analytic backends it is not in cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub run_id: u64,
    pub level: usize,
    pub chain: usize,
    pub step: usize,
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub ptsm_cycles: f64,
    pub is_seed: bool,
}

impl StoreRecord {
    pub fn new(run_id: u64, s: &EvaluatedSample) -> Self {
        Self {
            run_id,
            level: s.level,
            chain: s.chain,
            step: s.step,
            u: s.point.u.clone(),
            x: s.point.x.clone(),
            ptsm_cycles: s.margin,
            is_seed: s.is_seed,
        }
    }

    pub fn to_sample(&self) -> EvaluatedSample {
        EvaluatedSample {
            point: ScenarioPoint {
                u: self.u.clone(),
                x: self.x.clone(),
            },
            margin: self.ptsm_cycles,
            level: self.level,
            chain: self.chain,
            step: self.step,
            is_seed: self.is_seed,
        }
    }
}

pub struct StoreWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl StoreWriter {
    /// Opens `path` for appending, creating it if needed.
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(Error::io(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    /// Truncates `path` first.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(Error::io(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, record: &StoreRecord) -> Result<()> {
        if !record.ptsm_cycles.is_finite() {
            return Err(Error::Store(format!("non-finite margin in run {} level {}", record.run_id, record.level)));
        }
        serde_json::to_writer(&mut self.out, record).map_err(Error::json(&self.path))?;
        self.out.write_all(b"\n").map_err(Error::io(&self.path))
    }

    pub fn write_samples<'a>(&mut self, run_id: u64, samples: impl IntoIterator<Item = &'a EvaluatedSample>) -> Result<()> {
        for s in samples {
            self.write(&StoreRecord::new(run_id, s))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(Error::io(&self.path))
    }
}

pub fn read_store(path: &Path) -> Result<Vec<StoreRecord>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| Error::StoreLine {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Records grouped by run id, in file order within each run.
pub fn runs(records: Vec<StoreRecord>) -> BTreeMap<u64, Vec<StoreRecord>> {
    let mut map: BTreeMap<u64, Vec<StoreRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.run_id).or_default().push(r);
    }
    map
}

/// Picks `run_id`, or the only run in the store.
pub fn select_run(records: Vec<StoreRecord>, run_id: Option<u64>) -> Result<(u64, Vec<StoreRecord>)> {
    let mut runs = runs(records);
    match run_id {
        Some(id) => runs.remove(&id).map(|r| (id, r)).ok_or_else(|| Error::Store(format!("no run {id} in store"))),
        None if runs.len() == 1 => Ok(runs.pop_first().expect("one run")),
        None if runs.is_empty() => Err(Error::Store("store is empty".into())),
        None => Err(Error::Store(format!("store holds {} runs; pick one with --run-id", runs.len()))),
    }
}

/// Rebuilds a subset-simulation result from one run's records.
///
/// `p0` is inferred from the seed count when the run has more than one
/// level; `fallback_p0` is used otherwise (it does not affect a one-level
/// partition). Rejected chain moves leave no trace in the store, so
/// `limit_state_calls` counts accepted moves only and is a lower bound.
pub fn replay_subsim(records: &[StoreRecord], fallback_p0: f64) -> Result<SubSimResult> {
    let mut by_level: BTreeMap<usize, Vec<EvaluatedSample>> = BTreeMap::new();
    for r in records {
        if r.u.len() != r.x.len() {
            return Err(Error::Store(format!("u and x lengths differ at level {} chain {}", r.level, r.chain)));
        }
        by_level.entry(r.level).or_default().push(r.to_sample());
    }
    let q = by_level.len();
    if q == 0 {
        return Err(Error::Store("run has no samples".into()));
    }
    if by_level.keys().copied().ne(1..=q) {
        return Err(Error::Store("levels are not numbered 1..q".into()));
    }
    let n_bat = by_level[&1].len();
    if let Some((l, s)) = by_level.iter().find(|(_, s)| s.len() != n_bat) {
        return Err(Error::Store(format!("level {l} holds {} samples, level 1 holds {n_bat}", s.len())));
    }

    let n_seeds = by_level[&1].iter().filter(|s| s.is_seed).count();
    let p0 = if q > 1 { n_seeds as f64 / n_bat as f64 } else { fallback_p0 };
    if q > 1 && (n_seeds == 0 || n_seeds >= n_bat) {
        return Err(Error::Store(format!("level 1 marks {n_seeds} of {n_bat} samples as seeds")));
    }

    let mut levels = Vec::with_capacity(q);
    let mut warnings = Vec::new();
    let mut previous: Option<f64> = None;
    for (level, samples) in by_level {
        let margins: Vec<f64> = samples.iter().map(|s| s.margin).collect();
        let mut sorted = margins.clone();
        sorted.sort_by(f64::total_cmp);
        let threshold = percentile_threshold(&sorted, p0, n_bat);
        if let Some(prev) = previous.filter(|&p| threshold >= p) {
            warnings.push(SubSimWarning::DegenerateTie { level, threshold, previous: prev });
        }
        previous = Some(threshold);

        let seeds = if level < q { select_seeds(&margins, n_seeds) } else { Vec::new() };
        let mut expected = vec![false; n_bat];
        for &i in &seeds {
            expected[i] = true;
        }
        if samples.iter().zip(&expected).any(|(s, &e)| s.is_seed != e) {
            return Err(Error::Store(format!("seed flags at level {level} do not match the lowest margins")));
        }
        if level < q && threshold <= 0.0 {
            return Err(Error::Store(format!("level {level} threshold {threshold} is not positive but the run continued")));
        }
        levels.push(LevelRecord {
            level,
            threshold,
            samples,
            seeds,
        });
    }

    let last = &levels[q - 1].samples;
    let p_e_hat = last.iter().filter(|s| s.is_failure()).count() as f64 / n_bat as f64;
    let limit_state_calls = n_bat + levels[1..].iter().flat_map(|l| l.samples.windows(2)).filter(|w| w[1].step > 0 && w[1].point != w[0].point).count();
    Ok(SubSimResult {
        p0,
        n_bat,
        p_f_hat: libm::pow(p0, (q - 1) as f64) * p_e_hat,
        q,
        p_e_hat,
        levels,
        total_evaluations: n_bat + (q - 1) * (n_bat - n_seeds),
        limit_state_calls,
        warnings,
    })
}
