//! Campaigns: one command, its inputs, and the artifacts it leaves in the
//! output directory.
//!
//! | command         | artifacts                                                      |
//! |-----------------|----------------------------------------------------------------|
//! | `subsim`        | `store.jsonl`, `summary.json`, `sensitivity.json`, `tvd*.csv`  |
//! | `dmc`           | `store.jsonl`, `summary.json`                                  |
//! | `subsim-repeat` | `runs.csv`, `summary.json`                                     |
//! | `dmc-repeat`    | `runs.csv`, `summary.json`                                     |
//! | `sensitivity`   | `summary.json`, `sensitivity.json`, `tvd*.csv`                 |
//! | `compensate`    | `summary.json`, `compensation.json`, `compensation.csv`        |
//! | `trajectory`    | `summary.json`, `trajectory.csv`                               |
//!
//! Every number in `summary.json` except `wall_time_s` depends only on the
//! campaign inputs and the seed.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ptsa_core::exec::{Executor, Sequential};
use ptsa_core::grid_model::{reduce_to_internal_nodes, solve_power_flow, GridCase};
use ptsa_core::limit_state::{Constant, LimitState, LinearBeta};
use ptsa_core::rare_event::{repeated_run_statistics, run_dmc, run_subsim, DmcResult, SubSimConfig, SubSimResult, SubSimWarning};
use ptsa_core::rng::derive_seed;
use ptsa_core::sensitivity::{analyze_subsim, compensation_test, CompensationMode, CompensationOutcome, SensitivityConfig, TvdReport};
use ptsa_core::stability_margin::{MarginConfig, MarginStatus, PowerSystemMargin};
use ptsa_core::transient_sim::{simulate, SimConfig};
use ptsa_core::uncertainty::{assemble_scenario, Distribution, InputModel, ScenarioPoint};
use ptsa_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{bundled_case, bundled_uncertainty, load_case, load_uncertainty, write_json};
use crate::parallel::Pool;
use crate::store::{read_store, replay_subsim, select_run, StoreWriter};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Subsim,
    Dmc,
    SubsimRepeat,
    DmcRepeat,
    Sensitivity,
    Compensate,
    Trajectory,
}

impl Command {
    fn is_repeat(self) -> bool {
        matches!(self, Command::SubsimRepeat | Command::DmcRepeat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LimitStateKind {
    /// Critical-clearing-time margin of the grid case.
    #[default]
    PowerSystem,
    /// `beta - sum(u) / sqrt(n)`.
    LinearBeta,
    /// The same margin everywhere.
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSpec {
    pub command: Command,
    /// Bundled 9-bus case when absent.
    pub case: Option<PathBuf>,
    /// Bundled input model when absent.
    pub uncertainty: Option<PathBuf>,
    pub limit_state: LimitStateKind,
    pub beta: f64,
    pub constant: f64,

    pub p0: f64,
    pub n_bat: usize,
    pub proposal_spread: f64,
    pub max_levels: usize,
    pub n: usize,
    pub runs: usize,
    pub seed: u64,

    /// Margin settings; case-frequency defaults when absent.
    pub fct_cycles: Option<f64>,
    pub resolution_cycles: Option<f64>,
    pub cap_cycles: Option<f64>,
    pub time_step: Option<f64>,
    pub horizon: Option<f64>,
    pub angle_threshold_deg: Option<f64>,

    pub out: PathBuf,
    /// Worker threads; 0 picks one per core.
    pub parallel: usize,
    /// Input store for `sensitivity` and `compensate`.
    pub store: Option<PathBuf>,
    pub run_id: Option<u64>,
    /// Write `store.jsonl`. Defaults to on for single runs and off for repeats.
    pub store_samples: Option<bool>,

    pub intervals_1d: Option<usize>,
    pub intervals_2d: Option<usize>,

    /// Inputs to clamp; every Gaussian input when empty.
    pub inputs: Vec<usize>,
    pub clamp_sigmas: f64,
    /// Both modes when empty.
    pub modes: Vec<CompensationMode>,

    /// Physical input values of the trajectory scenario; the median point when absent.
    pub x: Option<Vec<f64>>,
    /// Fault duration of the trajectory; the fault clearing time when absent.
    pub clearing_cycles: Option<f64>,
}

impl CampaignSpec {
    pub fn new(command: Command, out: impl Into<PathBuf>) -> Self {
        let sub = SubSimConfig::default();
        Self {
            command,
            case: None,
            uncertainty: None,
            limit_state: LimitStateKind::PowerSystem,
            beta: LinearBeta::BETA_5E4,
            constant: 1.0,
            p0: sub.p0,
            n_bat: sub.n_bat,
            proposal_spread: sub.proposal_spread,
            max_levels: sub.max_levels,
            n: 3700,
            runs: 100,
            seed: sub.seed,
            fct_cycles: None,
            resolution_cycles: None,
            cap_cycles: None,
            time_step: None,
            horizon: None,
            angle_threshold_deg: None,
            out: out.into(),
            parallel: 1,
            store: None,
            run_id: None,
            store_samples: None,
            intervals_1d: None,
            intervals_2d: None,
            inputs: Vec::new(),
            clamp_sigmas: 1.5,
            modes: Vec::new(),
            x: None,
            clearing_cycles: None,
        }
    }

    pub fn subsim_config(&self, seed: u64) -> SubSimConfig {
        SubSimConfig {
            p0: self.p0,
            n_bat: self.n_bat,
            proposal_spread: self.proposal_spread,
            max_levels: self.max_levels,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Spec("runs must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(Error::Spec("n must be at least 1".into()));
        }
        if matches!(self.command, Command::Sensitivity | Command::Compensate) && self.store.is_none() {
            return Err(Error::Spec(format!("{:?} needs --store", self.command)));
        }
        if self.command == Command::Trajectory && self.limit_state != LimitStateKind::PowerSystem {
            return Err(Error::Spec("trajectory needs the power-system limit state".into()));
        }
        if !(self.clamp_sigmas.is_finite() && self.clamp_sigmas >= 0.0) {
            return Err(Error::Spec("clamp sigmas must be non-negative".into()));
        }
        Ok(())
    }

    fn writes_store(&self) -> bool {
        self.store_samples.unwrap_or(!self.command.is_repeat())
    }
}

/// The limit state a campaign evaluates.
#[derive(Debug, Clone)]
pub enum Backend {
    PowerSystem(Box<PowerSystemMargin>),
    LinearBeta(LinearBeta),
    Constant(Constant),
}

impl LimitState for Backend {
    fn margin(&self, point: &ScenarioPoint) -> f64 {
        match self {
            Backend::PowerSystem(m) => m.margin(point),
            Backend::LinearBeta(m) => m.margin(point),
            Backend::Constant(m) => m.margin(point),
        }
    }
}

/// Loaded inputs of a campaign.
pub struct Setup {
    pub model: InputModel,
    pub backend: Backend,
}

impl Setup {
    pub fn load(spec: &CampaignSpec) -> Result<Self> {
        let model = match &spec.uncertainty {
            Some(p) => load_uncertainty(p)?,
            None => bundled_uncertainty(),
        };
        let backend = match spec.limit_state {
            LimitStateKind::PowerSystem => {
                let case = match &spec.case {
                    Some(p) => load_case(p)?,
                    None => bundled_case(),
                };
                let (margin, sim) = margin_settings(spec, &case);
                Backend::PowerSystem(Box::new(PowerSystemMargin::new(case, model.clone(), margin, sim)?))
            }
            LimitStateKind::LinearBeta => Backend::LinearBeta(LinearBeta::new(spec.beta)),
            LimitStateKind::Constant => Backend::Constant(Constant(spec.constant)),
        };
        Ok(Self { model, backend })
    }
}

fn margin_settings(spec: &CampaignSpec, case: &GridCase) -> (MarginConfig, SimConfig) {
    let f0 = case.fault.nominal_frequency;
    let mut margin = MarginConfig::for_frequency(f0);
    margin.fct_cycles = spec.fct_cycles.unwrap_or(margin.fct_cycles);
    margin.cct_resolution_cycles = spec.resolution_cycles.unwrap_or(margin.cct_resolution_cycles);
    margin.cct_max_cycles = spec.cap_cycles.unwrap_or(margin.cct_max_cycles);
    let mut sim = SimConfig::for_frequency(f0);
    sim.time_step = spec.time_step.unwrap_or(sim.time_step);
    sim.horizon = spec.horizon.unwrap_or(sim.horizon);
    sim.instability_angle_threshold = spec.angle_threshold_deg.map_or(sim.instability_angle_threshold, f64::to_radians);
    (margin, sim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsimDetails {
    pub p0: f64,
    pub n_bat: usize,
    pub p_e_hat: f64,
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatDetails {
    pub runs: usize,
    pub mean: f64,
    pub zero_count: usize,
    /// Runs that stopped at the level cap; their partial estimates are included.
    pub partial_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaEntry {
    pub inputs: Vec<usize>,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityDetails {
    pub eta: Vec<EtaEntry>,
    /// Why no report was produced.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationRow {
    pub input: usize,
    pub mode: CompensationMode,
    pub floor: f64,
    pub n_ti_before: usize,
    pub n_ti_after: usize,
    pub reduction: f64,
    pub reevaluated: usize,
    pub decreased_margins: usize,
}

impl CompensationRow {
    fn new(o: &CompensationOutcome) -> Self {
        Self {
            input: o.input,
            mode: o.mode,
            floor: o.floor,
            n_ti_before: o.n_ti_before,
            n_ti_after: o.n_ti_after,
            reduction: o.reduction(),
            reevaluated: o.reevaluated.len(),
            decreased_margins: o.decreased_margins(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDetails {
    pub x: Vec<f64>,
    pub clearing_cycles: f64,
    pub stable: bool,
    pub max_angle_separation_deg: f64,
    pub first_violation_time: Option<f64>,
    pub cct_cycles: f64,
    pub ptsm_cycles: f64,
    pub status: MarginStatus,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub command: Command,
    pub limit_state: LimitStateKind,
    pub seed: u64,
    pub p_f_hat: Option<f64>,
    pub q: Option<usize>,
    /// Analytic for a direct run, empirical across repeats.
    pub cov: Option<f64>,
    pub n_ti: Option<usize>,
    pub total_evaluations: Option<usize>,
    pub limit_state_calls: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub subsim: Option<SubsimDetails>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub repeats: Option<RepeatDetails>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sensitivity: Option<SensitivityDetails>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub compensation: Option<Vec<CompensationRow>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trajectory: Option<TrajectoryDetails>,
    pub warnings: Vec<SubSimWarning>,
    /// Set when the run stopped early and the artifacts are incomplete.
    pub partial: bool,
    pub wall_time_s: f64,
}

impl Summary {
    fn new(spec: &CampaignSpec) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: spec.command,
            limit_state: spec.limit_state,
            seed: spec.seed,
            p_f_hat: None,
            q: None,
            cov: None,
            n_ti: None,
            total_evaluations: None,
            limit_state_calls: None,
            subsim: None,
            repeats: None,
            sensitivity: None,
            compensation: None,
            trajectory: None,
            warnings: Vec::new(),
            partial: false,
            wall_time_s: 0.0,
        }
    }

    fn record_subsim(&mut self, r: &SubSimResult) {
        self.p_f_hat = Some(r.p_f_hat);
        self.q = Some(r.q);
        self.n_ti = Some(final_failures(r));
        self.total_evaluations = Some(r.total_evaluations);
        self.limit_state_calls = Some(r.limit_state_calls);
        self.subsim = Some(SubsimDetails {
            p0: r.p0,
            n_bat: r.n_bat,
            p_e_hat: r.p_e_hat,
            thresholds: r.thresholds(),
        });
        self.warnings = r.warnings.clone();
    }
}

fn final_failures(r: &SubSimResult) -> usize {
    r.levels.last().map_or(0, |l| l.samples.iter().filter(|s| s.is_failure()).count())
}

/// Runs `spec` and writes its artifacts. On a level-cap stop the partial
/// artifacts are written before the error is returned.
pub fn run_campaign(spec: &CampaignSpec) -> Result<Summary> {
    let start = Instant::now();
    spec.validate()?;
    std::fs::create_dir_all(&spec.out).map_err(Error::io(&spec.out))?;
    let setup = Setup::load(spec)?;
    let pool = Pool::new(spec.parallel)?;
    let mut summary = Summary::new(spec);

    let outcome = match spec.command {
        Command::Subsim => subsim(spec, &setup, &pool, &mut summary),
        Command::Dmc => dmc(spec, &setup, &pool, &mut summary),
        Command::SubsimRepeat => subsim_repeat(spec, &setup, &pool, &mut summary),
        Command::DmcRepeat => dmc_repeat(spec, &setup, &pool, &mut summary),
        Command::Sensitivity => sensitivity(spec, &setup, &mut summary),
        Command::Compensate => compensate(spec, &setup, &pool, &mut summary),
        Command::Trajectory => trajectory(spec, &setup, &mut summary),
    };
    if outcome.is_ok() || summary.partial {
        summary.wall_time_s = start.elapsed().as_secs_f64();
        write_json(&spec.out.join("summary.json"), &summary)?;
    }
    outcome.map(|_| summary)
}

fn subsim(spec: &CampaignSpec, setup: &Setup, pool: &Pool, summary: &mut Summary) -> Result<()> {
    let cfg = spec.subsim_config(spec.seed);
    let result = match run_subsim(&setup.backend, &setup.model, &cfg, pool) {
        Ok(r) => r,
        Err(CoreError::MaxLevelsExceeded { max_levels, partial }) => {
            summary.record_subsim(&partial);
            summary.partial = true;
            if spec.writes_store() {
                write_store(&spec.out, [(0, &*partial)])?;
            }
            return Err(CoreError::MaxLevelsExceeded { max_levels, partial }.into());
        }
        Err(e) => return Err(e.into()),
    };
    summary.record_subsim(&result);
    if spec.writes_store() {
        write_store(&spec.out, [(0, &result)])?;
    }
    summary.sensitivity = Some(write_sensitivity(spec, &setup.model, &result)?);
    Ok(())
}

fn write_store<'a>(out: &Path, runs: impl IntoIterator<Item = (u64, &'a SubSimResult)>) -> Result<()> {
    let mut w = StoreWriter::create(&out.join("store.jsonl"))?;
    for (id, r) in runs {
        w.write_samples(id, r.all_samples())?;
    }
    w.finish()
}

fn write_dmc_store<'a>(out: &Path, runs: impl IntoIterator<Item = (u64, &'a DmcResult)>) -> Result<()> {
    let mut w = StoreWriter::create(&out.join("store.jsonl"))?;
    for (id, r) in runs {
        w.write_samples(id, &r.samples)?;
    }
    w.finish()
}

fn dmc(spec: &CampaignSpec, setup: &Setup, pool: &Pool, summary: &mut Summary) -> Result<()> {
    let result = run_dmc(&setup.backend, &setup.model, spec.n, spec.seed, pool)?;
    summary.p_f_hat = Some(result.p_f_hat);
    summary.cov = result.analytic_cov;
    summary.n_ti = Some(result.n_ti);
    summary.total_evaluations = Some(result.n);
    summary.limit_state_calls = Some(result.n);
    if spec.writes_store() {
        write_dmc_store(&spec.out, [(0, &result)])?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunRow {
    run: usize,
    seed: u64,
    p_f_hat: f64,
    q: Option<usize>,
    n_ti: usize,
    total_evaluations: usize,
    limit_state_calls: usize,
    partial: bool,
}

fn finish_repeats(spec: &CampaignSpec, rows: &[RunRow], summary: &mut Summary) -> Result<()> {
    let path = spec.out.join("runs.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::csv(&path))?;
    for r in rows {
        w.serialize(r).map_err(Error::csv(&path))?;
    }
    w.flush().map_err(Error::io(&path))?;

    let estimates: Vec<f64> = rows.iter().map(|r| r.p_f_hat).collect();
    let (mean, cov, zero_count) = if estimates.len() >= 2 {
        let s = repeated_run_statistics(&estimates)?;
        (s.mean, s.cov, s.zero_count)
    } else {
        (estimates[0], None, usize::from(estimates[0] == 0.0))
    };
    summary.p_f_hat = Some(mean);
    summary.cov = cov;
    summary.n_ti = Some(rows.iter().map(|r| r.n_ti).sum());
    summary.total_evaluations = Some(rows.iter().map(|r| r.total_evaluations).sum());
    summary.limit_state_calls = Some(rows.iter().map(|r| r.limit_state_calls).sum());
    summary.repeats = Some(RepeatDetails {
        runs: rows.len(),
        mean,
        zero_count,
        partial_runs: rows.iter().filter(|r| r.partial).count(),
    });
    Ok(())
}

fn subsim_repeat(spec: &CampaignSpec, setup: &Setup, pool: &Pool, summary: &mut Summary) -> Result<()> {
    spec.subsim_config(spec.seed).validate()?;
    let results: Vec<Result<(SubSimResult, bool)>> = pool.map(spec.runs, |r| {
        let cfg = spec.subsim_config(derive_seed(spec.seed, r as u64));
        match run_subsim(&setup.backend, &setup.model, &cfg, &Sequential) {
            Ok(res) => Ok((res, false)),
            Err(CoreError::MaxLevelsExceeded { partial, .. }) => Ok((*partial, true)),
            Err(e) => Err(e.into()),
        }
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let rows: Vec<RunRow> = results
        .iter()
        .enumerate()
        .map(|(r, (res, partial))| RunRow {
            run: r,
            seed: derive_seed(spec.seed, r as u64),
            p_f_hat: res.p_f_hat,
            q: Some(res.q),
            n_ti: final_failures(res),
            total_evaluations: res.total_evaluations,
            limit_state_calls: res.limit_state_calls,
            partial: *partial,
        })
        .collect();
    for (res, _) in &results {
        summary.warnings.extend(res.warnings.iter().copied());
    }
    if spec.writes_store() {
        write_store(&spec.out, results.iter().enumerate().map(|(r, (res, _))| (r as u64, res)))?;
    }
    finish_repeats(spec, &rows, summary)
}

fn dmc_repeat(spec: &CampaignSpec, setup: &Setup, pool: &Pool, summary: &mut Summary) -> Result<()> {
    let results: Vec<Result<DmcResult>> = pool.map(spec.runs, |r| {
        Ok(run_dmc(&setup.backend, &setup.model, spec.n, derive_seed(spec.seed, r as u64), &Sequential)?)
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let rows: Vec<RunRow> = results
        .iter()
        .enumerate()
        .map(|(r, res)| RunRow {
            run: r,
            seed: derive_seed(spec.seed, r as u64),
            p_f_hat: res.p_f_hat,
            q: None,
            n_ti: res.n_ti,
            total_evaluations: res.n,
            limit_state_calls: res.n,
            partial: false,
        })
        .collect();
    if spec.writes_store() {
        write_dmc_store(&spec.out, results.iter().enumerate().map(|(r, res)| (r as u64, res)))?;
    }
    finish_repeats(spec, &rows, summary)
}

fn sensitivity_config(spec: &CampaignSpec, model: &InputModel) -> SensitivityConfig {
    let mut cfg = SensitivityConfig::default_for(model);
    cfg.intervals_1d = spec.intervals_1d.unwrap_or(cfg.intervals_1d);
    cfg.intervals_2d = spec.intervals_2d.unwrap_or(cfg.intervals_2d);
    cfg
}

/// Writes the report files, or records why there is no report.
fn write_sensitivity(spec: &CampaignSpec, model: &InputModel, result: &SubSimResult) -> Result<SensitivityDetails> {
    let report = match analyze_subsim(result, model, &sensitivity_config(spec, model)) {
        Ok(r) => r,
        Err(e @ (CoreError::NoFailureSamples | CoreError::EmptyStratum { .. })) if spec.command == Command::Subsim => {
            return Ok(SensitivityDetails {
                eta: Vec::new(),
                skipped: Some(e.to_string()),
            });
        }
        Err(e) => return Err(e.into()),
    };
    write_json(&spec.out.join("sensitivity.json"), &report)?;
    write_tvd_csv(&spec.out, &report)?;
    Ok(SensitivityDetails {
        eta: report
            .grids
            .iter()
            .map(|g| EtaEntry {
                inputs: g.grid.inputs.clone(),
                eta: g.eta,
            })
            .collect(),
        skipped: None,
    })
}

#[derive(Serialize)]
struct TvdRow {
    input: usize,
    interval_lower: f64,
    interval_upper: f64,
    p_uncond: f64,
    p_cond: f64,
}

#[derive(Serialize)]
struct JointRow {
    input_i: usize,
    input_j: usize,
    lower_i: f64,
    upper_i: f64,
    lower_j: f64,
    upper_j: f64,
    p_uncond: f64,
    p_cond: f64,
}

fn write_tvd_csv(out: &Path, report: &TvdReport) -> Result<()> {
    let path = out.join("tvd.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::csv(&path))?;
    for g in report.grids.iter().filter(|g| g.grid.inputs.len() == 1) {
        for h in 0..g.grid.cells() {
            let (lo, hi) = g.grid.cell_bounds(h)[0];
            w.serialize(TvdRow {
                input: g.grid.inputs[0],
                interval_lower: lo,
                interval_upper: hi,
                p_uncond: g.unconditional[h],
                p_cond: g.conditional[h],
            })
            .map_err(Error::csv(&path))?;
        }
    }
    w.flush().map_err(Error::io(&path))?;

    let path = out.join("tvd_joint.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::csv(&path))?;
    for g in report.grids.iter().filter(|g| g.grid.inputs.len() == 2) {
        for h in 0..g.grid.cells() {
            let b = g.grid.cell_bounds(h);
            w.serialize(JointRow {
                input_i: g.grid.inputs[0],
                input_j: g.grid.inputs[1],
                lower_i: b[0].0,
                upper_i: b[0].1,
                lower_j: b[1].0,
                upper_j: b[1].1,
                p_uncond: g.unconditional[h],
                p_cond: g.conditional[h],
            })
            .map_err(Error::csv(&path))?;
        }
    }
    w.flush().map_err(Error::io(&path))
}

fn stored_run(spec: &CampaignSpec) -> Result<Vec<crate::store::StoreRecord>> {
    let path = spec.store.as_ref().expect("validated");
    Ok(select_run(read_store(path)?, spec.run_id)?.1)
}

fn sensitivity(spec: &CampaignSpec, setup: &Setup, summary: &mut Summary) -> Result<()> {
    let result = replay_subsim(&stored_run(spec)?, spec.p0)?;
    summary.record_subsim(&result);
    summary.limit_state_calls = None;
    summary.sensitivity = Some(write_sensitivity(spec, &setup.model, &result)?);
    Ok(())
}

fn compensate(spec: &CampaignSpec, setup: &Setup, pool: &Pool, summary: &mut Summary) -> Result<()> {
    let samples: Vec<_> = stored_run(spec)?.iter().map(|r| r.to_sample()).collect();
    let inputs = if spec.inputs.is_empty() {
        setup
            .model
            .marginals()
            .iter()
            .enumerate()
            .filter(|(_, m)| matches!(m.distribution, Distribution::Gaussian { .. }))
            .map(|(i, _)| i)
            .collect()
    } else {
        spec.inputs.clone()
    };
    let modes = if spec.modes.is_empty() {
        vec![CompensationMode::FailuresOnly, CompensationMode::AllSamples]
    } else {
        spec.modes.clone()
    };
    let mut outcomes = Vec::new();
    for &input in &inputs {
        for &mode in &modes {
            outcomes.push(compensation_test(&samples, &setup.model, input, spec.clamp_sigmas, mode, &setup.backend, pool)?);
        }
    }
    let n_ti = samples.iter().filter(|s| s.is_failure()).count();
    summary.n_ti = Some(n_ti);
    summary.p_f_hat = Some(n_ti as f64 / samples.len() as f64);
    let rows: Vec<CompensationRow> = outcomes.iter().map(CompensationRow::new).collect();
    write_json(&spec.out.join("compensation.json"), &outcomes)?;
    let path = spec.out.join("compensation.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::csv(&path))?;
    for r in &rows {
        w.serialize(r).map_err(Error::csv(&path))?;
    }
    w.flush().map_err(Error::io(&path))?;
    summary.compensation = Some(rows);
    Ok(())
}

fn trajectory(spec: &CampaignSpec, setup: &Setup, summary: &mut Summary) -> Result<()> {
    let Backend::PowerSystem(ps) = &setup.backend else {
        unreachable!("validated")
    };
    let point = match &spec.x {
        Some(x) => setup.model.point_from_x(x.clone())?,
        None => setup.model.point_from_u(vec![0.0; setup.model.dimension()]),
    };
    let clearing_cycles = spec.clearing_cycles.unwrap_or(ps.margin.fct_cycles);
    let scenario = assemble_scenario(&setup.model, &point, &ps.case)?;
    let pf = solve_power_flow(&ps.case, &scenario.injections)?;
    let network = reduce_to_internal_nodes(&ps.case, &pf)?;
    let (traj, verdict) = simulate(&network, &ps.case.fault, ps.margin.cycles_to_seconds(clearing_cycles), &ps.sim);
    let margin = ps.evaluate(&point);

    let path = spec.out.join("trajectory.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::csv(&path))?;
    let g = traj.generators;
    let header: Vec<String> = std::iter::once("time_s".to_string())
        .chain((1..=g).map(|i| format!("delta_{i}_deg")))
        .chain((1..=g).map(|i| format!("domega_{i}_pu")))
        .collect();
    w.write_record(&header).map_err(Error::csv(&path))?;
    for row in 0..traj.len() {
        let fields: Vec<f64> = std::iter::once(traj.times[row])
            .chain(traj.angles_at(row).iter().map(|a| a.to_degrees()))
            .chain(traj.speeds_at(row).iter().copied())
            .collect();
        w.serialize(fields).map_err(Error::csv(&path))?;
    }
    w.flush().map_err(Error::io(&path))?;

    summary.trajectory = Some(TrajectoryDetails {
        x: point.x.clone(),
        clearing_cycles,
        stable: verdict.stable,
        max_angle_separation_deg: verdict.max_angle_separation.to_degrees(),
        first_violation_time: verdict.first_violation_time,
        cct_cycles: margin.cct_cycles,
        ptsm_cycles: margin.ptsm_cycles,
        status: margin.status,
        rows: traj.len(),
    });
    Ok(())
}

/// Machine-readable description of a failed campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
    pub partial: bool,
}

impl ErrorReport {
    pub fn new(e: &Error) -> Self {
        Self {
            kind: e.kind().to_string(),
            message: e.to_string(),
            partial: e.is_partial(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn analytic(command: Command, out: &Path) -> CampaignSpec {
        CampaignSpec {
            limit_state: LimitStateKind::LinearBeta,
            beta: 2.5,
            n_bat: 500,
            n: 2000,
            runs: 5,
            ..CampaignSpec::new(command, out)
        }
    }

    #[test]
    fn subsim_writes_store_summary_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_campaign(&analytic(Command::Subsim, dir.path())).unwrap();
        let q = s.q.unwrap();
        assert_eq!(s.total_evaluations, Some(500 + (q - 1) * 450));
        for f in ["store.jsonl", "summary.json", "sensitivity.json", "tvd.csv", "tvd_joint.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let lines = std::fs::read_to_string(dir.path().join("store.jsonl")).unwrap().lines().count();
        assert_eq!(lines, 500 * q);
    }

    #[test]
    fn repeats_are_independent_of_the_pool_size() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = run_campaign(&analytic(Command::SubsimRepeat, a.path())).unwrap();
        let sb = run_campaign(&CampaignSpec {
            parallel: 3,
            ..analytic(Command::SubsimRepeat, b.path())
        })
        .unwrap();
        assert_eq!(Summary { wall_time_s: 0.0, ..sa }, Summary { wall_time_s: 0.0, ..sb });
        assert_eq!(
            std::fs::read(a.path().join("runs.csv")).unwrap(),
            std::fs::read(b.path().join("runs.csv")).unwrap()
        );
    }

    #[test]
    fn level_cap_leaves_partial_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CampaignSpec {
            limit_state: LimitStateKind::Constant,
            constant: 1.0,
            n_bat: 100,
            max_levels: 3,
            ..CampaignSpec::new(Command::Subsim, dir.path())
        };
        let err = run_campaign(&spec).unwrap_err();
        assert!(err.is_partial());
        let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
        let s: Summary = serde_json::from_str(&text).unwrap();
        assert!(s.partial);
        assert_eq!(s.q, Some(3));
    }

    #[test]
    fn sensitivity_needs_a_store() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_campaign(&CampaignSpec::new(Command::Sensitivity, dir.path())).unwrap_err();
        assert_eq!(err.kind(), "invalid_campaign");
    }

    #[test]
    fn compensation_defaults_to_gaussian_inputs_and_both_modes() {
        let dir = tempfile::tempdir().unwrap();
        run_campaign(&analytic(Command::Dmc, dir.path())).unwrap();
        let spec = CampaignSpec {
            store: Some(dir.path().join("store.jsonl")),
            ..analytic(Command::Compensate, &dir.path().join("comp"))
        };
        let s = run_campaign(&spec).unwrap();
        let rows = s.compensation.unwrap();
        assert_eq!(rows.len(), 6);
        // Raising an input lowers the linear margin, so failures never disappear.
        assert!(rows.iter().all(|r| r.n_ti_after >= r.n_ti_before));
    }
}
