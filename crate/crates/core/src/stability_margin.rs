//! Critical clearing time and the stability margin `PTSM = CCT - FCT`.
//!
//! The CCT is searched by bisection on a grid of `resolution`-cycle steps
//! between zero and the cap. Margins are in cycles; a scenario fails when
//! its margin is negative.

use core::cell::Cell;

use crate::grid_model::{reduce_to_internal_nodes, solve_power_flow, FaultScenario, GridCase, ReducedNetwork};
use crate::limit_state::LimitState;
use crate::transient_sim::{simulate_verdict, SimConfig, SwingSystem};
use crate::uncertainty::{assemble_scenario, InputModel, ScenarioPoint};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarginConfig {
    pub fct_cycles: f64,
    pub cct_resolution_cycles: f64,
    pub cct_max_cycles: f64,
    pub nominal_frequency: f64,
}

impl MarginConfig {
    /// Six-cycle clearing, half-cycle resolution, 30-cycle cap.
    pub fn for_frequency(nominal_frequency: f64) -> Self {
        Self {
            fct_cycles: 6.0,
            cct_resolution_cycles: 0.5,
            cct_max_cycles: 30.0,
            nominal_frequency,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.cct_resolution_cycles > 0.0
            && self.cct_resolution_cycles <= 1.0
            && self.fct_cycles >= 0.0
            && self.fct_cycles < self.cct_max_cycles
            && self.nominal_frequency > 0.0
            && self.cct_max_cycles.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!("invalid margin config {self:?}")))
        }
    }

    /// Number of grid steps from zero to the cap.
    pub fn grid_steps(&self) -> usize {
        libm::round(self.cct_max_cycles / self.cct_resolution_cycles) as usize
    }

    pub fn cycles_to_seconds(&self, cycles: f64) -> f64 {
        cycles / self.nominal_frequency
    }

    /// Upper bound on simulations per CCT search.
    pub fn max_simulations(&self) -> usize {
        let steps = self.grid_steps().max(1);
        (usize::BITS - (steps - 1).leading_zeros()) as usize + 2
    }
}

impl Default for MarginConfig {
    fn default() -> Self {
        Self::for_frequency(60.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CctResult {
    pub cct_cycles: f64,
    /// Stable even when cleared at the cap.
    pub capped: bool,
    /// Unstable even with instantaneous clearing.
    pub degenerate: bool,
    pub simulations: usize,
}

/// Largest grid clearing time that is stable with the next one unstable.
pub fn compute_cct(network: &ReducedNetwork, fault: &FaultScenario, cfg: &MarginConfig, sim: &SimConfig) -> CctResult {
    let system = SwingSystem::new(network);
    let count = Cell::new(0usize);
    let stable = |k: usize| {
        count.set(count.get() + 1);
        let t = cfg.cycles_to_seconds(k as f64 * cfg.cct_resolution_cycles);
        simulate_verdict(&system, network, fault, t, sim).stable
    };
    let top = cfg.grid_steps();
    let (cct_steps, capped, degenerate) = if stable(top) {
        (top, true, false)
    } else if !stable(0) {
        (0, false, true)
    } else {
        let (mut lo, mut hi) = (0, top);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if stable(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo, false, false)
    };
    let cct_cycles = if capped { cfg.cct_max_cycles } else { cct_steps as f64 * cfg.cct_resolution_cycles };
    CctResult {
        cct_cycles,
        capped,
        degenerate,
        simulations: count.get(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MarginStatus {
    Bracketed,
    Capped,
    /// Unstable at zero clearing time.
    Degenerate,
    /// No operating point; scored as the worst margin.
    PowerFlowFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginSample {
    pub point: ScenarioPoint,
    pub cct_cycles: f64,
    pub ptsm_cycles: f64,
    pub capped: bool,
    pub status: MarginStatus,
}

impl MarginSample {
    pub fn is_failure(&self) -> bool {
        self.ptsm_cycles < 0.0
    }
}

/// The margin of one scenario. Infeasible operating points get `-fct`.
pub fn evaluate_margin(point: &ScenarioPoint, case: &GridCase, model: &InputModel, cfg: &MarginConfig, sim: &SimConfig) -> MarginSample {
    let worst = MarginSample {
        point: point.clone(),
        cct_cycles: 0.0,
        ptsm_cycles: -cfg.fct_cycles,
        capped: false,
        status: MarginStatus::PowerFlowFailed,
    };
    let network = match assemble_scenario(model, point, case)
        .and_then(|s| solve_power_flow(case, &s.injections))
        .and_then(|pf| reduce_to_internal_nodes(case, &pf))
    {
        Ok(n) => n,
        Err(_) => return worst,
    };
    let cct = compute_cct(&network, &case.fault, cfg, sim);
    let status = if cct.capped {
        MarginStatus::Capped
    } else if cct.degenerate {
        MarginStatus::Degenerate
    } else {
        MarginStatus::Bracketed
    };
    MarginSample {
        point: point.clone(),
        cct_cycles: cct.cct_cycles,
        ptsm_cycles: cct.cct_cycles - cfg.fct_cycles,
        capped: cct.capped,
        status,
    }
}

/// The transient-stability limit state of a grid case under an input model.
#[derive(Debug, Clone)]
pub struct PowerSystemMargin {
    pub case: GridCase,
    pub model: InputModel,
    pub margin: MarginConfig,
    pub sim: SimConfig,
}

impl PowerSystemMargin {
    /// Checks the case, the model against the case, and both configs.
    pub fn new(case: GridCase, model: InputModel, margin: MarginConfig, sim: SimConfig) -> Result<Self> {
        case.validate()?;
        model.check_case(&case)?;
        margin.validate()?;
        if !sim.is_valid() {
            return Err(Error::InvalidConfig(alloc::format!("invalid simulation config {sim:?}")));
        }
        Ok(Self { case, model, margin, sim })
    }

    /// Default margin and simulation settings at the case frequency.
    pub fn with_defaults(case: GridCase, model: InputModel) -> Result<Self> {
        let f0 = case.fault.nominal_frequency;
        Self::new(case, model, MarginConfig::for_frequency(f0), SimConfig::for_frequency(f0))
    }

    pub fn evaluate(&self, point: &ScenarioPoint) -> MarginSample {
        evaluate_margin(point, &self.case, &self.model, &self.margin, &self.sim)
    }
}

impl LimitState for PowerSystemMargin {
    fn margin(&self, point: &ScenarioPoint) -> f64 {
        self.evaluate(point).ptsm_cycles
    }
}
