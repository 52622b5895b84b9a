//! Which inputs drive instability: total variation distance between each
//! input's marginal and its distribution conditional on failure, estimated
//! from the stratified subset-simulation samples.
//!
//! Samples are split into bins by the level thresholds: bin 0 above `t_1`,
//! bin `k` in `(t_(k+1), t_k]`, bin `q - 1` in `[0, t_(q-1)]`, bin `q` the
//! failures. Bin probabilities follow from `p0` and `P_e`; within a bin all
//! samples carry the same weight `P_k / N_k`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::exec::Executor;
use crate::limit_state::LimitState;
use crate::rare_event::{EvaluatedSample, SubSimResult};
use crate::uncertainty::{Distribution, InputModel};
use crate::{Error, Result};

/// `P_0 .. P_q` of the bins of a `q`-level run.
pub fn bin_probabilities(q: usize, p0: f64, p_e_hat: f64) -> Vec<f64> {
    assert!(q >= 1, "q must be at least 1");
    if q == 1 {
        return vec![1.0 - p_e_hat, p_e_hat];
    }
    let mut p = Vec::with_capacity(q + 1);
    for k in 0..q - 1 {
        p.push(libm::pow(p0, k as f64) * (1.0 - p0));
    }
    let last = libm::pow(p0, (q - 1) as f64);
    p.push(last * (1.0 - p_e_hat));
    p.push(last * p_e_hat);
    p
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BinPartition {
    /// Intermediate thresholds `t_1 > .. > t_(q-1)`.
    pub thresholds: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl BinPartition {
    pub fn new(thresholds: Vec<f64>, p0: f64, p_e_hat: f64) -> Self {
        let probabilities = bin_probabilities(thresholds.len() + 1, p0, p_e_hat);
        Self { thresholds, probabilities }
    }

    pub fn from_subsim(result: &SubSimResult) -> Self {
        Self::new(result.thresholds(), result.p0, result.p_e_hat)
    }

    pub fn q(&self) -> usize {
        self.thresholds.len() + 1
    }

    pub fn bins(&self) -> usize {
        self.probabilities.len()
    }

    /// Failures go to bin `q`; otherwise the deepest level whose threshold
    /// the margin satisfies, or bin 0.
    pub fn bin_of(&self, margin: f64) -> usize {
        if margin < 0.0 {
            return self.q();
        }
        self.thresholds.iter().rposition(|&t| margin <= t).map_or(0, |k| k + 1)
    }
}

/// Samples sorted into bins, with the per-bin weights `P_k / N_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratified {
    pub partition: BinPartition,
    pub x: Vec<Vec<f64>>,
    pub bins: Vec<usize>,
    pub failed: Vec<bool>,
    /// `N_k`.
    pub counts: Vec<usize>,
    /// `N_kF`.
    pub failure_counts: Vec<usize>,
    weights: Vec<f64>,
}

impl Stratified {
    pub fn new<'a>(partition: BinPartition, samples: impl IntoIterator<Item = &'a EvaluatedSample>) -> Result<Self> {
        let mut x = Vec::new();
        let mut bins = Vec::new();
        let mut failed = Vec::new();
        let mut counts = vec![0usize; partition.bins()];
        let mut failure_counts = vec![0usize; partition.bins()];
        for s in samples {
            let b = partition.bin_of(s.margin);
            counts[b] += 1;
            if s.is_failure() {
                failure_counts[b] += 1;
            }
            x.push(s.point.x.clone());
            bins.push(b);
            failed.push(s.is_failure());
        }
        let mut weights = vec![0.0; partition.bins()];
        for (bin, (&n, &p)) in counts.iter().zip(&partition.probabilities).enumerate() {
            if n > 0 {
                weights[bin] = p / n as f64;
            } else if p > 0.0 {
                return Err(Error::EmptyStratum { bin });
            }
        }
        Ok(Self {
            partition,
            x,
            bins,
            failed,
            counts,
            failure_counts,
            weights,
        })
    }

    /// The retained set of a subset-simulation run.
    pub fn from_subsim(result: &SubSimResult) -> Result<Self> {
        Self::new(BinPartition::from_subsim(result), result.retained())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn weight(&self, bin: usize) -> f64 {
        self.weights[bin]
    }
}

/// Intervals over one input or a product grid over several.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IntervalGrid {
    pub inputs: Vec<usize>,
    /// Interior split points per input; `H - 1` values for `H` intervals.
    pub splits: Vec<Vec<f64>>,
}

impl IntervalGrid {
    pub fn from_splits(inputs: Vec<usize>, splits: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != splits.len() {
            return Err(Error::InvalidConfig("one split list per grid input".into()));
        }
        for s in &splits {
            if !s.windows(2).all(|w| w[0] < w[1]) || s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("split points must be finite and strictly increasing".into()));
            }
        }
        Ok(Self { inputs, splits })
    }

    /// `intervals` equal-probability intervals of each input's marginal.
    pub fn percentiles(model: &InputModel, inputs: Vec<usize>, intervals: usize) -> Result<Self> {
        if intervals < 1 {
            return Err(Error::InvalidConfig("need at least one interval".into()));
        }
        let mut splits = Vec::with_capacity(inputs.len());
        for &i in &inputs {
            let m = model
                .marginals()
                .get(i)
                .ok_or_else(|| Error::InvalidConfig(format!("no input {i}")))?;
            splits.push((1..intervals).map(|h| m.distribution.quantile(h as f64 / intervals as f64)).collect());
        }
        Self::from_splits(inputs, splits)
    }

    pub fn intervals_per_axis(&self) -> Vec<usize> {
        self.splits.iter().map(|s| s.len() + 1).collect()
    }

    pub fn cells(&self) -> usize {
        self.intervals_per_axis().iter().product()
    }

    /// Row-major cell of physical point `x`; interval `h` is `(s_(h-1), s_h]`.
    pub fn cell_of(&self, x: &[f64]) -> usize {
        let mut cell = 0;
        for (&i, s) in self.inputs.iter().zip(&self.splits) {
            let h = s.partition_point(|&b| b < x[i]);
            cell = cell * (s.len() + 1) + h;
        }
        cell
    }

    /// Per-axis `(lower, upper)` bounds of `cell`, infinite at the ends.
    pub fn cell_bounds(&self, cell: usize) -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0); self.inputs.len()];
        let mut rest = cell;
        for (axis, s) in self.splits.iter().enumerate().rev() {
            let h = rest % (s.len() + 1);
            rest /= s.len() + 1;
            let lo = if h == 0 { f64::NEG_INFINITY } else { s[h - 1] };
            let hi = if h == s.len() { f64::INFINITY } else { s[h] };
            out[axis] = (lo, hi);
        }
        out
    }
}

/// Stratified estimate of `P(X in J_h)` for every cell of `grid`.
pub fn interval_probability(grid: &IntervalGrid, set: &Stratified) -> Vec<f64> {
    let mut p = vec![0.0; grid.cells()];
    for (x, &b) in set.x.iter().zip(&set.bins) {
        p[grid.cell_of(x)] += set.weight(b);
    }
    p
}

/// Stratified estimate of `P(X in J_h | failure)`.
pub fn conditional_interval_probability(grid: &IntervalGrid, set: &Stratified) -> Result<Vec<f64>> {
    let mut p = vec![0.0; grid.cells()];
    let mut total = 0.0;
    for ((x, &b), &f) in set.x.iter().zip(&set.bins).zip(&set.failed) {
        if f {
            let w = set.weight(b);
            p[grid.cell_of(x)] += w;
            total += w;
        }
    }
    if !(total > 0.0) {
        return Err(Error::NoFailureSamples);
    }
    for v in &mut p {
        *v /= total;
    }
    Ok(p)
}

/// Half the L1 distance between two interval distributions.
pub fn tvd(unconditional: &[f64], conditional: &[f64]) -> f64 {
    assert_eq!(unconditional.len(), conditional.len(), "grids differ");
    0.5 * unconditional.iter().zip(conditional).map(|(a, b)| libm::fabs(a - b)).sum::<f64>()
}

/// TVD over a one-dimensional grid.
pub fn tvd_1d(unconditional: &[f64], conditional: &[f64]) -> f64 {
    tvd(unconditional, conditional)
}

/// TVD over a flattened two-dimensional grid.
pub fn tvd_2d(unconditional: &[f64], conditional: &[f64]) -> f64 {
    tvd(unconditional, conditional)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridTvd {
    pub grid: IntervalGrid,
    pub eta: f64,
    pub unconditional: Vec<f64>,
    pub conditional: Vec<f64>,
    /// `N_kh`, indexed `[bin][cell]`.
    pub counts: Vec<Vec<usize>>,
    /// `N_khF`, indexed `[bin][cell]`.
    pub failure_counts: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TvdReport {
    pub partition: BinPartition,
    /// `N_k`.
    pub bin_counts: Vec<usize>,
    /// `N_kF`.
    pub bin_failure_counts: Vec<usize>,
    pub grids: Vec<GridTvd>,
}

impl TvdReport {
    /// The entry whose grid covers exactly `inputs`.
    pub fn entry(&self, inputs: &[usize]) -> Option<&GridTvd> {
        self.grids.iter().find(|g| g.grid.inputs == inputs)
    }

    /// `(input, eta)` for every single-input grid.
    pub fn univariate(&self) -> Vec<(usize, f64)> {
        self.grids.iter().filter(|g| g.grid.inputs.len() == 1).map(|g| (g.grid.inputs[0], g.eta)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SensitivityConfig {
    /// Intervals for inputs analysed alone.
    pub intervals_1d: usize,
    /// Intervals per axis of a joint grid.
    pub intervals_2d: usize,
    /// Input groups; singletons get 1-D grids, pairs 2-D grids.
    pub groups: Vec<Vec<usize>>,
}

impl SensitivityConfig {
    /// 100 intervals per input; correlated pairs analysed jointly on 20 x 20,
    /// and their members also alone.
    pub fn default_for(model: &InputModel) -> Self {
        let mut groups: Vec<Vec<usize>> = (0..model.dimension()).map(|i| vec![i]).collect();
        for (i, j, _) in model.copula().pairs() {
            groups.push(vec![i, j]);
        }
        Self {
            intervals_1d: 100,
            intervals_2d: 20,
            groups,
        }
    }
}

fn grid_counts(grid: &IntervalGrid, set: &Stratified) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let bins = set.partition.bins();
    let mut n = vec![vec![0usize; grid.cells()]; bins];
    let mut nf = vec![vec![0usize; grid.cells()]; bins];
    for ((x, &b), &f) in set.x.iter().zip(&set.bins).zip(&set.failed) {
        let h = grid.cell_of(x);
        n[b][h] += 1;
        if f {
            nf[b][h] += 1;
        }
    }
    (n, nf)
}

/// TVD of every configured input group.
pub fn tvd_report(set: &Stratified, model: &InputModel, cfg: &SensitivityConfig) -> Result<TvdReport> {
    let mut grids = Vec::with_capacity(cfg.groups.len());
    for group in &cfg.groups {
        let intervals = match group.len() {
            1 => cfg.intervals_1d,
            2 => cfg.intervals_2d,
            n => return Err(Error::InvalidConfig(format!("groups of {n} inputs are not supported"))),
        };
        let grid = IntervalGrid::percentiles(model, group.clone(), intervals)?;
        let unconditional = interval_probability(&grid, set);
        let conditional = conditional_interval_probability(&grid, set)?;
        let (counts, failure_counts) = grid_counts(&grid, set);
        grids.push(GridTvd {
            eta: tvd(&unconditional, &conditional),
            grid,
            unconditional,
            conditional,
            counts,
            failure_counts,
        });
    }
    Ok(TvdReport {
        partition: set.partition.clone(),
        bin_counts: set.counts.clone(),
        bin_failure_counts: set.failure_counts.clone(),
        grids,
    })
}

/// Sensitivity analysis of a subset-simulation run on its retained set.
pub fn analyze_subsim(result: &SubSimResult, model: &InputModel, cfg: &SensitivityConfig) -> Result<TvdReport> {
    tvd_report(&Stratified::from_subsim(result)?, model, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CompensationMode {
    /// Clamp and re-evaluate the failed samples only.
    FailuresOnly,
    /// Clamp and re-evaluate every sample below the floor.
    AllSamples,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Reevaluation {
    pub sample: usize,
    pub x_before: f64,
    pub margin_before: f64,
    pub margin_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CompensationOutcome {
    pub input: usize,
    pub mode: CompensationMode,
    /// Physical floor `mean - clamp_sigmas * std`.
    pub floor: f64,
    pub n_ti_before: usize,
    pub n_ti_after: usize,
    pub reevaluated: Vec<Reevaluation>,
}

impl CompensationOutcome {
    /// Fraction of failures removed.
    pub fn reduction(&self) -> f64 {
        if self.n_ti_before == 0 {
            0.0
        } else {
            1.0 - self.n_ti_after as f64 / self.n_ti_before as f64
        }
    }

    /// Re-evaluated samples whose margin went down after raising the input.
    pub fn decreased_margins(&self) -> usize {
        self.reevaluated.iter().filter(|r| r.margin_after < r.margin_before).count()
    }
}

/// Raises input `input` to at least `mean - clamp_sigmas * std` and counts
/// the failures left.
///
/// Samples already at or above the floor keep their stored margin.
pub fn compensation_test<L: LimitState + ?Sized, E: Executor>(
    samples: &[EvaluatedSample],
    model: &InputModel,
    input: usize,
    clamp_sigmas: f64,
    mode: CompensationMode,
    limit_state: &L,
    exec: &E,
) -> Result<CompensationOutcome> {
    let floor = match model.marginals().get(input).map(|m| m.distribution) {
        Some(Distribution::Gaussian { mean, std }) => mean - clamp_sigmas * std,
        Some(_) => return Err(Error::NonGaussianTarget { index: input }),
        None => return Err(Error::InvalidConfig(format!("no input {input}"))),
    };
    let targets: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.point.x[input] < floor && (mode == CompensationMode::AllSamples || s.is_failure()))
        .map(|(i, _)| i)
        .collect();
    let mut points = Vec::with_capacity(targets.len());
    for &i in &targets {
        let mut x = samples[i].point.x.clone();
        x[input] = floor;
        points.push(model.point_from_x(x)?);
    }
    let margins = exec.map(points.len(), |k| limit_state.margin(&points[k]));
    let reevaluated: Vec<Reevaluation> = targets
        .iter()
        .zip(&margins)
        .map(|(&i, &m)| Reevaluation {
            sample: i,
            x_before: samples[i].point.x[input],
            margin_before: samples[i].margin,
            margin_after: m,
        })
        .collect();

    let n_ti_before = samples.iter().filter(|s| s.is_failure()).count();
    let changed_failures = reevaluated.iter().filter(|r| r.margin_after < 0.0).count();
    let untouched_failures = match mode {
        CompensationMode::FailuresOnly => n_ti_before - targets.len(),
        CompensationMode::AllSamples => {
            let mut touched = vec![false; samples.len()];
            for &i in &targets {
                touched[i] = true;
            }
            samples.iter().zip(&touched).filter(|(s, &t)| !t && s.is_failure()).count()
        }
    };
    Ok(CompensationOutcome {
        input,
        mode,
        floor,
        n_ti_before,
        n_ti_after: untouched_failures + changed_failures,
        reevaluated,
    })
}
