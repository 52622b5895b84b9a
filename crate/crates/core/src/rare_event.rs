//! Subset simulation and direct Monte Carlo estimation of `P(margin < 0)`.
//!
//! Subset simulation writes the failure probability as a product of
//! conditional probabilities over nested sets `{margin <= t_1} ⊃ {margin <= t_2} ⊃ ...`.
//! Each threshold is the `p0`-quantile of the current level, so every
//! intermediate factor is `p0` by construction and only the last one,
//! `P_e`, is estimated: `P_f = p0^(q-1) * P_e`.
//!
//! Level 1 is an i.i.d. batch. Every later level grows one Markov chain
//! from each of the `p0 * n_bat` lowest-margin samples of the level before;
//! the chains use component-wise Metropolis-Hastings in standard-normal
//! space and reject any candidate outside the current level set.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::exec::Executor;
use crate::limit_state::LimitState;
use crate::rng::{stream, IID_CHAIN};
use crate::uncertainty::{InputModel, ScenarioPoint};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubSimConfig {
    pub p0: f64,
    pub n_bat: usize,
    /// Standard deviation of the component-wise random-walk proposal.
    pub proposal_spread: f64,
    pub max_levels: usize,
    pub seed: u64,
}

impl Default for SubSimConfig {
    fn default() -> Self {
        Self {
            p0: 0.1,
            n_bat: 1000,
            proposal_spread: 1.0,
            max_levels: 10,
            seed: 0,
        }
    }
}

fn integral(v: f64) -> Option<usize> {
    let r = libm::round(v);
    (r >= 1.0 && libm::fabs(v - r) <= 1e-9 * r).then_some(r as usize)
}

impl SubSimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("{m} ({self:?})")));
        if !(self.p0 > 0.0 && self.p0 < 0.5) {
            return bad("p0 must lie in (0, 0.5)");
        }
        if integral(1.0 / self.p0).is_none() {
            return bad("1/p0 must be an integer");
        }
        if integral(self.p0 * self.n_bat as f64).is_none() {
            return bad("p0 * n_bat must be a positive integer");
        }
        if !(self.proposal_spread > 0.0 && self.proposal_spread.is_finite()) {
            return bad("proposal spread must be positive");
        }
        if self.max_levels == 0 {
            return bad("max_levels must be at least 1");
        }
        Ok(())
    }

    /// Seeds per level, `p0 * n_bat`.
    pub fn seeds_per_level(&self) -> usize {
        libm::round(self.p0 * self.n_bat as f64) as usize
    }

    /// States grown from each seed, `1/p0 - 1`.
    pub fn chain_length(&self) -> usize {
        libm::round(1.0 / self.p0) as usize - 1
    }

    /// Budgeted evaluations for a run of `q` levels.
    pub fn budget(&self, q: usize) -> usize {
        self.n_bat + (q - 1) * (self.n_bat - self.seeds_per_level())
    }
}

/// One point with its margin and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedSample {
    pub point: ScenarioPoint,
    pub margin: f64,
    /// 1-based level.
    pub level: usize,
    /// Chain index; the sample index for the i.i.d. first level.
    pub chain: usize,
    /// Position in the chain; 0 is the seed (or an i.i.d. sample).
    pub step: usize,
    /// Selected as a seed of the next level.
    pub is_seed: bool,
}

impl EvaluatedSample {
    pub fn is_failure(&self) -> bool {
        self.margin < 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord {
    pub level: usize,
    /// `p0`-quantile of this level's margins; the next level is `margin <= threshold`.
    pub threshold: f64,
    pub samples: Vec<EvaluatedSample>,
    /// Indices into `samples` of the next level's seeds (empty on the last level).
    pub seeds: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SubSimWarning {
    /// Threshold failed to decrease; margins tie across the quantile.
    DegenerateTie { level: usize, threshold: f64, previous: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubSimResult {
    pub p0: f64,
    pub n_bat: usize,
    pub p_f_hat: f64,
    pub q: usize,
    pub p_e_hat: f64,
    pub levels: Vec<LevelRecord>,
    /// Budgeted count `n_bat + (q - 1) (1 - p0) n_bat`.
    pub total_evaluations: usize,
    /// Limit-state calls actually made (repeated chain states are not re-evaluated).
    pub limit_state_calls: usize,
    pub warnings: Vec<SubSimWarning>,
}

impl SubSimResult {
    /// All levels except the seeds carried into the next one; every
    /// distinct sample exactly once.
    pub fn retained(&self) -> Vec<&EvaluatedSample> {
        let mut out = Vec::with_capacity(self.total_evaluations);
        for rec in &self.levels {
            out.extend(rec.samples.iter().filter(|s| !s.is_seed));
        }
        out
    }

    /// Thresholds `t_1 .. t_(q-1)` that define the intermediate levels.
    pub fn thresholds(&self) -> Vec<f64> {
        self.levels[..self.q - 1].iter().map(|l| l.threshold).collect()
    }

    /// Every sample of every level, in level, chain, step order.
    pub fn all_samples(&self) -> impl Iterator<Item = &EvaluatedSample> {
        self.levels.iter().flat_map(|l| l.samples.iter())
    }
}

fn margin_order(margins: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..margins.len()).collect();
    idx.sort_by(|&a, &b| margins[a].total_cmp(&margins[b]).then(a.cmp(&b)));
    idx
}

/// Midpoint of the `p0 n_bat`-th and next smallest of ascending `sorted`.
pub fn percentile_threshold(sorted: &[f64], p0: f64, n_bat: usize) -> f64 {
    assert_eq!(sorted.len(), n_bat, "expected n_bat margins");
    let k = libm::round(p0 * n_bat as f64) as usize;
    assert!(k >= 1 && k < n_bat, "p0 * n_bat out of range");
    0.5 * (sorted[k - 1] + sorted[k])
}

/// Indices of the `count` lowest margins, ties broken by index.
pub fn select_seeds(margins: &[f64], count: usize) -> Vec<usize> {
    let mut idx = margin_order(margins);
    idx.truncate(count);
    idx
}

/// States of one Markov chain plus the limit-state calls it made.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub points: Vec<ScenarioPoint>,
    pub margins: Vec<f64>,
    pub limit_state_calls: usize,
}

/// Grows `length` states from `seed` restricted to `margin <= threshold`.
///
/// Each component proposes `u_i + spread * N(0, 1)` and accepts with
/// probability `min(1, phi(u*_i) / phi(u_i))`. If any component moved, the
/// candidate is evaluated and kept only inside the level set; otherwise the
/// current state repeats with its stored margin.
#[allow(clippy::too_many_arguments)]
pub fn mh_chain<L: LimitState + ?Sized, R: Rng + ?Sized>(
    seed: &ScenarioPoint,
    seed_margin: f64,
    threshold: f64,
    length: usize,
    spread: f64,
    limit_state: &L,
    model: &InputModel,
    rng: &mut R,
) -> ChainRun {
    let mut run = ChainRun {
        points: Vec::with_capacity(length),
        margins: Vec::with_capacity(length),
        limit_state_calls: 0,
    };
    let mut current = seed.clone();
    let mut current_margin = seed_margin;
    let mut candidate = seed.u.clone();
    for _ in 0..length {
        let mut moved = false;
        for (c, &u) in candidate.iter_mut().zip(&current.u) {
            let step: f64 = rng.sample(StandardNormal);
            let accept: f64 = rng.random();
            let proposal = u + spread * step;
            let ratio = libm::exp(0.5 * (u * u - proposal * proposal));
            if accept < ratio && proposal != u {
                *c = proposal;
                moved = true;
            } else {
                *c = u;
            }
        }
        if moved {
            let point = model.point_from_u(candidate.clone());
            let m = limit_state.margin(&point);
            run.limit_state_calls += 1;
            if m <= threshold {
                current = point;
                current_margin = m;
            }
        }
        run.points.push(current.clone());
        run.margins.push(current_margin);
    }
    run
}

fn evaluate_batch<L: LimitState + ?Sized, E: Executor>(points: Vec<ScenarioPoint>, limit_state: &L, exec: &E, level: usize) -> Vec<EvaluatedSample> {
    let margins = exec.map(points.len(), |i| limit_state.margin(&points[i]));
    points
        .into_iter()
        .zip(margins)
        .enumerate()
        .map(|(i, (point, margin))| EvaluatedSample {
            point,
            margin,
            level,
            chain: i,
            step: 0,
            is_seed: false,
        })
        .collect()
}

fn failure_fraction(samples: &[EvaluatedSample]) -> f64 {
    samples.iter().filter(|s| s.is_failure()).count() as f64 / samples.len() as f64
}

/// Subset simulation. Levels run sequentially; the batch and chains of a
/// level go through `exec`, each on its own random stream.
pub fn run_subsim<L: LimitState + ?Sized, E: Executor>(limit_state: &L, model: &InputModel, cfg: &SubSimConfig, exec: &E) -> Result<SubSimResult> {
    cfg.validate()?;
    let n_seeds = cfg.seeds_per_level();
    let length = cfg.chain_length();

    let first = model.sample_iid(cfg.n_bat, &mut stream(cfg.seed, 0, IID_CHAIN));
    let mut samples = evaluate_batch(first, limit_state, exec, 1);
    let mut levels: Vec<LevelRecord> = Vec::new();
    let mut warnings = Vec::new();
    let mut calls = cfg.n_bat;

    loop {
        let level = levels.len() + 1;
        let margins: Vec<f64> = samples.iter().map(|s| s.margin).collect();
        let order = margin_order(&margins);
        let sorted: Vec<f64> = order.iter().map(|&i| margins[i]).collect();
        let threshold = percentile_threshold(&sorted, cfg.p0, cfg.n_bat);
        if let Some(prev) = levels.last() {
            if threshold >= prev.threshold {
                warnings.push(SubSimWarning::DegenerateTie {
                    level,
                    threshold,
                    previous: prev.threshold,
                });
            }
        }
        if threshold <= 0.0 || level == cfg.max_levels {
            let p_e_hat = failure_fraction(&samples);
            levels.push(LevelRecord {
                level,
                threshold,
                samples,
                seeds: Vec::new(),
            });
            let result = SubSimResult {
                p0: cfg.p0,
                n_bat: cfg.n_bat,
                p_f_hat: libm::pow(cfg.p0, (level - 1) as f64) * p_e_hat,
                q: level,
                p_e_hat,
                levels,
                total_evaluations: cfg.budget(level),
                limit_state_calls: calls,
                warnings,
            };
            if threshold <= 0.0 {
                return Ok(result);
            }
            return Err(Error::MaxLevelsExceeded {
                max_levels: cfg.max_levels,
                partial: Box::new(result),
            });
        }

        let seeds: Vec<usize> = order[..n_seeds].to_vec();
        for &i in &seeds {
            samples[i].is_seed = true;
        }
        let next_level = level + 1;
        let chains = {
            let samples = &samples;
            let seeds = &seeds;
            exec.map(n_seeds, |c| {
                let s = &samples[seeds[c]];
                let mut rng = stream(cfg.seed, next_level as u32, c as u32);
                mh_chain(&s.point, s.margin, threshold, length, cfg.proposal_spread, limit_state, model, &mut rng)
            })
        };
        let mut next = Vec::with_capacity(cfg.n_bat);
        for (c, run) in chains.into_iter().enumerate() {
            let s = &samples[seeds[c]];
            next.push(EvaluatedSample {
                point: s.point.clone(),
                margin: s.margin,
                level: next_level,
                chain: c,
                step: 0,
                is_seed: false,
            });
            calls += run.limit_state_calls;
            for (k, (point, margin)) in run.points.into_iter().zip(run.margins).enumerate() {
                next.push(EvaluatedSample {
                    point,
                    margin,
                    level: next_level,
                    chain: c,
                    step: k + 1,
                    is_seed: false,
                });
            }
        }
        levels.push(LevelRecord {
            level,
            threshold,
            samples,
            seeds,
        });
        samples = next;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmcResult {
    pub p_f_hat: f64,
    pub n: usize,
    pub n_ti: usize,
    /// `sqrt((1 - p) / (n p))`; `None` without failures.
    pub analytic_cov: Option<f64>,
    pub samples: Vec<EvaluatedSample>,
}

/// Direct Monte Carlo with `n` i.i.d. scenarios.
pub fn run_dmc<L: LimitState + ?Sized, E: Executor>(limit_state: &L, model: &InputModel, n: usize, seed: u64, exec: &E) -> Result<DmcResult> {
    if n == 0 {
        return Err(Error::InvalidConfig("direct Monte Carlo needs n >= 1".into()));
    }
    let points = model.sample_iid(n, &mut stream(seed, 0, IID_CHAIN));
    let samples = evaluate_batch(points, limit_state, exec, 1);
    let n_ti = samples.iter().filter(|s| s.is_failure()).count();
    let p = n_ti as f64 / n as f64;
    Ok(DmcResult {
        p_f_hat: p,
        n,
        n_ti,
        analytic_cov: (n_ti > 0).then(|| libm::sqrt((1.0 - p) / (n as f64 * p))),
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunStatistics {
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation over the mean; `None` when the mean is 0.
    pub cov: Option<f64>,
    pub zero_count: usize,
}

/// Mean, empirical coefficient of variation and number of zero estimates.
pub fn repeated_run_statistics(estimates: &[f64]) -> Result<RunStatistics> {
    let n = estimates.len();
    if n < 2 {
        return Err(Error::InvalidConfig("need at least two estimates".into()));
    }
    let mean = estimates.iter().sum::<f64>() / n as f64;
    let var = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(RunStatistics {
        runs: n,
        mean,
        cov: (mean != 0.0).then(|| libm::sqrt(var) / mean),
        zero_count: estimates.iter().filter(|&&e| e == 0.0).count(),
    })
}

/// Orders two margins the way the estimators do.
pub fn compare_margins(a: f64, b: f64) -> Ordering {
    a.total_cmp(&b)
}
