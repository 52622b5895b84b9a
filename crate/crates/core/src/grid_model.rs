//! Static network model, pre-fault power flow and classical-model reduction.
//!
//! Units: line and generator impedances are per-unit on
//! [`GridCase::system_mva_base`]; load, wind and MVA fields are physical.
//! Inertia constants are given on the machine base and converted here.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::linalg::{ComplexMatrix, RealMatrix};
use crate::{Error, Result};

/// Shunt admittance (pu) standing in for a bolted three-phase fault.
pub const FAULT_SHUNT: f64 = 1e8;

/// Power-flow mismatch tolerance (pu).
pub const POWER_FLOW_TOLERANCE: f64 = 1e-8;

/// Newton-Raphson iteration cap.
pub const POWER_FLOW_MAX_ITERATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BusSpec {
    pub id: usize,
    pub kind: BusKind,
    /// Initial magnitude for the Newton iteration (pu).
    pub base_voltage_magnitude: f64,
    /// Regulated magnitude for slack and PV buses (pu).
    #[cfg_attr(feature = "serde", serde(default))]
    pub voltage_setpoint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LineSpec {
    pub from_bus: usize,
    pub to_bus: usize,
    pub series_resistance: f64,
    pub series_reactance: f64,
    /// Total line charging (pu), split evenly between the ends.
    pub shunt_susceptance: f64,
    /// Off-nominal tap on the from side.
    #[cfg_attr(feature = "serde", serde(default = "unit_tap"))]
    pub tap_ratio: f64,
    #[cfg_attr(feature = "serde", serde(default = "in_service"))]
    pub in_service: bool,
}

#[cfg(feature = "serde")]
fn unit_tap() -> f64 {
    1.0
}

#[cfg(feature = "serde")]
fn in_service() -> bool {
    true
}

impl LineSpec {
    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(self.series_resistance, self.series_reactance).inv()
    }

    /// True when the line joins `a` and `b` in either orientation.
    pub fn joins(&self, a: usize, b: usize) -> bool {
        (self.from_bus == a && self.to_bus == b) || (self.from_bus == b && self.to_bus == a)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeneratorSpec {
    pub bus: usize,
    /// Seconds on the machine base.
    #[cfg_attr(feature = "serde", serde(rename = "inertia_constant_H"))]
    pub inertia_constant_h: f64,
    /// Per-unit torque per per-unit speed on the machine base.
    #[cfg_attr(feature = "serde", serde(rename = "damping_D"))]
    pub damping_d: f64,
    pub transient_reactance_xd_prime: f64,
    /// Scheduled output (pu on the system base). Fixes the dispatch of PV
    /// machines; the slack machine's value is replaced by the power flow.
    pub mechanical_power: f64,
    pub mva_base: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LoadSpec {
    pub bus: usize,
    pub base_active_power: f64,
    pub base_reactive_power: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WindFarmSpec {
    pub bus: usize,
    /// Farm aggregate rating (MW).
    pub rated_power: f64,
    pub v_in: f64,
    pub v_out: f64,
    pub v_r: f64,
    /// Rating of one turbine (MW).
    pub unit_rated_power: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FaultScenario {
    pub faulted_bus: usize,
    pub fault_start_time: f64,
    pub tripped_line: (usize, usize),
    pub nominal_frequency: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridCase {
    /// Sorted by id, ids contiguous from 1.
    pub buses: Vec<BusSpec>,
    pub lines: Vec<LineSpec>,
    pub generators: Vec<GeneratorSpec>,
    pub loads: Vec<LoadSpec>,
    pub wind_farms: Vec<WindFarmSpec>,
    pub fault: FaultScenario,
    pub system_mva_base: f64,
}

impl GridCase {
    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    /// Matrix row of bus `id`.
    pub fn bus_index(&self, id: usize) -> usize {
        id - 1
    }

    pub fn slack_index(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.kind == BusKind::Slack)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: alloc::string::String| Err(Error::InvalidCase(msg));
        if self.buses.is_empty() {
            return invalid("no buses".into());
        }
        if !(self.system_mva_base > 0.0) {
            return invalid("system_mva_base must be positive".into());
        }
        for (i, bus) in self.buses.iter().enumerate() {
            if bus.id != i + 1 {
                return invalid(format!("bus ids must be sorted and contiguous from 1 (found {} at position {})", bus.id, i));
            }
            if bus.kind != BusKind::Pq && bus.voltage_setpoint.is_none() {
                return invalid(format!("bus {} needs a voltage setpoint", bus.id));
            }
        }
        let slack_count = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack_count != 1 {
            return invalid(format!("exactly one slack bus required, found {slack_count}"));
        }
        let n = self.buses.len();
        let known = |id: usize| id >= 1 && id <= n;
        for line in &self.lines {
            if !known(line.from_bus) || !known(line.to_bus) {
                return invalid(format!("line {}-{} references an unknown bus", line.from_bus, line.to_bus));
            }
            if line.from_bus == line.to_bus {
                return invalid(format!("line {}-{} is a self loop", line.from_bus, line.to_bus));
            }
            if !(libm::hypot(line.series_resistance, line.series_reactance) > 0.0) {
                return invalid(format!("line {}-{} has zero series impedance", line.from_bus, line.to_bus));
            }
            if !(line.tap_ratio > 0.0) {
                return invalid(format!("line {}-{} has a non-positive tap", line.from_bus, line.to_bus));
            }
        }
        let mut gen_at = vec![false; n];
        for g in &self.generators {
            if !known(g.bus) {
                return invalid(format!("generator at unknown bus {}", g.bus));
            }
            if gen_at[g.bus - 1] {
                return invalid(format!("more than one generator at bus {}", g.bus));
            }
            gen_at[g.bus - 1] = true;
            if self.buses[g.bus - 1].kind == BusKind::Pq {
                return invalid(format!("generator at PQ bus {}", g.bus));
            }
            if !(g.inertia_constant_h > 0.0 && g.transient_reactance_xd_prime > 0.0 && g.damping_d >= 0.0 && g.mva_base > 0.0) {
                return invalid(format!("generator at bus {} needs H > 0, xd' > 0, D >= 0", g.bus));
            }
        }
        for (i, bus) in self.buses.iter().enumerate() {
            if bus.kind != BusKind::Pq && !gen_at[i] {
                return invalid(format!("{:?} bus {} has no generator", bus.kind, bus.id));
            }
        }
        for load in &self.loads {
            if !known(load.bus) {
                return invalid(format!("load at unknown bus {}", load.bus));
            }
            if !(load.base_active_power >= 0.0) {
                return invalid(format!("load at bus {} has negative active power", load.bus));
            }
        }
        for farm in &self.wind_farms {
            if !known(farm.bus) {
                return invalid(format!("wind farm at unknown bus {}", farm.bus));
            }
            if !(0.0 < farm.v_in && farm.v_in < farm.v_r && farm.v_r < farm.v_out) {
                return invalid(format!("wind farm at bus {} needs 0 < v_in < v_r < v_out", farm.bus));
            }
            if !(farm.rated_power >= 0.0 && farm.unit_rated_power > 0.0) {
                return invalid(format!("wind farm at bus {} has invalid ratings", farm.bus));
            }
        }
        let fault = &self.fault;
        let (a, b) = fault.tripped_line;
        if !self.lines.iter().any(|l| l.in_service && l.joins(a, b)) {
            return invalid(format!("tripped line {a}-{b} does not exist or is out of service"));
        }
        if fault.faulted_bus != a && fault.faulted_bus != b {
            return invalid(format!("faulted bus {} is not an end of line {a}-{b}", fault.faulted_bus));
        }
        if !(fault.nominal_frequency > 0.0 && fault.fault_start_time >= 0.0) {
            return invalid("fault timing must be non-negative with positive frequency".into());
        }
        if !self.connected(None) {
            return invalid("pre-fault network is not connected".into());
        }
        Ok(())
    }

    fn tripped_line_index(&self) -> Option<usize> {
        let (a, b) = self.fault.tripped_line;
        self.lines.iter().position(|l| l.in_service && l.joins(a, b))
    }

    fn connected(&self, skip_line: Option<usize>) -> bool {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for (k, l) in self.lines.iter().enumerate() {
            if !l.in_service || Some(k) == skip_line {
                continue;
            }
            adj[l.from_bus - 1].push(l.to_bus - 1);
            adj[l.to_bus - 1].push(l.from_bus - 1);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Topology {
    PreFault,
    FaultOn,
    PostFault,
}

impl Topology {
    pub const ALL: [Topology; 3] = [Topology::PreFault, Topology::FaultOn, Topology::PostFault];
}

/// Dense bus (or node) admittance matrix in pu.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix(pub ComplexMatrix);

impl AdmittanceMatrix {
    pub fn zeros(n: usize) -> Self {
        Self(ComplexMatrix::zeros(n, n))
    }

    pub fn dimension(&self) -> usize {
        self.0.rows()
    }

    pub fn entries(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.0[(i, j)]
    }

    /// Adds `scale` times the pi-model of `line` (`scale = -1` removes it).
    pub fn stamp_line(&mut self, line: &LineSpec, scale: f64) {
        let y = line.series_admittance();
        let half_b = Complex64::new(0.0, 0.5 * line.shunt_susceptance);
        let a = line.tap_ratio;
        let (f, t) = (line.from_bus - 1, line.to_bus - 1);
        self.0[(f, f)] += (y + half_b) / (a * a) * scale;
        self.0[(t, t)] += (y + half_b) * scale;
        self.0[(f, t)] -= y / a * scale;
        self.0[(t, f)] -= y / a * scale;
    }

    pub fn add_shunt(&mut self, index: usize, y: Complex64) {
        self.0[(index, index)] += y;
    }
}

/// Bus admittance matrix of `case` in the given topology.
pub fn build_ybus(case: &GridCase, topology: Topology) -> Result<AdmittanceMatrix> {
    let skip = match topology {
        Topology::PostFault => {
            let k = case.tripped_line_index().ok_or_else(|| {
                Error::InvalidCase(format!("tripped line {:?} not in service", case.fault.tripped_line))
            })?;
            if !case.connected(Some(k)) {
                return Err(Error::IslandedNetwork);
            }
            Some(k)
        }
        _ => None,
    };
    let mut y = AdmittanceMatrix::zeros(case.bus_count());
    for (k, line) in case.lines.iter().enumerate() {
        if line.in_service && Some(k) != skip {
            y.stamp_line(line, 1.0);
        }
    }
    if topology == Topology::FaultOn {
        y.add_shunt(case.bus_index(case.fault.faulted_bus), Complex64::new(FAULT_SHUNT, 0.0));
    }
    Ok(y)
}

/// Net load per bus (consumption positive, generation by wind as negative load).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BusInjections {
    pub load_mw: Vec<f64>,
    pub load_mvar: Vec<f64>,
}

impl BusInjections {
    pub fn zero(buses: usize) -> Self {
        Self {
            load_mw: vec![0.0; buses],
            load_mvar: vec![0.0; buses],
        }
    }

    /// Base loads of the case, no wind.
    pub fn base_loads(case: &GridCase) -> Self {
        let mut inj = Self::zero(case.bus_count());
        for load in &case.loads {
            let i = case.bus_index(load.bus);
            inj.load_mw[i] += load.base_active_power;
            inj.load_mvar[i] += load.base_reactive_power;
        }
        inj
    }

    /// Net load at bus index `i` in pu.
    pub fn load_pu(&self, i: usize, mva_base: f64) -> Complex64 {
        Complex64::new(self.load_mw[i], self.load_mvar[i]) / mva_base
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub voltage_magnitudes: Vec<f64>,
    pub voltage_angles: Vec<f64>,
    /// Slack generation (MW, MVAr).
    pub slack_injection: (f64, f64),
    pub converged: bool,
    pub max_mismatch: f64,
    pub iterations: usize,
    /// The net loads this operating point was solved for.
    pub loads: BusInjections,
}

impl PowerFlowSolution {
    pub fn voltage(&self, i: usize) -> Complex64 {
        Complex64::from_polar(self.voltage_magnitudes[i], self.voltage_angles[i])
    }

    pub fn voltages(&self) -> Vec<Complex64> {
        (0..self.voltage_magnitudes.len()).map(|i| self.voltage(i)).collect()
    }
}

/// Complex power injected into the network at every bus, `S = V conj(Y V)` (pu).
pub fn bus_power_injections(ybus: &AdmittanceMatrix, voltages: &[Complex64]) -> Vec<Complex64> {
    let currents = ybus.0.mul_vec(voltages);
    voltages.iter().zip(currents).map(|(v, i)| v * i.conj()).collect()
}

/// Scheduled net injection (pu) at every bus: PV dispatch minus net load.
fn scheduled_injections(case: &GridCase, loads: &BusInjections) -> Vec<Complex64> {
    let base = case.system_mva_base;
    let mut s: Vec<Complex64> = (0..case.bus_count()).map(|i| -loads.load_pu(i, base)).collect();
    for g in &case.generators {
        s[case.bus_index(g.bus)] += Complex64::new(g.mechanical_power, 0.0);
    }
    s
}

/// Largest active/reactive balance violation at the buses where it is
/// specified (P at PV and PQ buses, Q at PQ buses), in pu.
pub fn power_flow_residual(case: &GridCase, loads: &BusInjections, vm: &[f64], va: &[f64]) -> Result<f64> {
    let ybus = build_ybus(case, Topology::PreFault)?;
    let v: Vec<Complex64> = vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
    let calc = bus_power_injections(&ybus, &v);
    let spec = scheduled_injections(case, loads);
    let mut worst = 0.0f64;
    for (i, bus) in case.buses.iter().enumerate() {
        match bus.kind {
            BusKind::Slack => {}
            BusKind::Pv => worst = worst.max((spec[i].re - calc[i].re).abs()),
            BusKind::Pq => {
                worst = worst.max((spec[i].re - calc[i].re).abs());
                worst = worst.max((spec[i].im - calc[i].im).abs());
            }
        }
    }
    Ok(worst)
}

/// Newton-Raphson power flow in polar coordinates.
///
/// PV machines hold their scheduled output; the slack machine absorbs every
/// change in net load. Fails with [`Error::PowerFlowDiverged`] when the
/// mismatch does not fall below [`POWER_FLOW_TOLERANCE`] within
/// [`POWER_FLOW_MAX_ITERATIONS`] iterations.
pub fn solve_power_flow(case: &GridCase, loads: &BusInjections) -> Result<PowerFlowSolution> {
    let n = case.bus_count();
    if loads.load_mw.len() != n || loads.load_mvar.len() != n {
        return Err(Error::InvalidCase(format!("injections cover {} buses, case has {n}", loads.load_mw.len())));
    }
    if loads.load_mw.iter().chain(&loads.load_mvar).any(|v| !v.is_finite()) {
        return Err(Error::InvalidCase("non-finite injection".into()));
    }
    let ybus = build_ybus(case, Topology::PreFault)?;
    let spec = scheduled_injections(case, loads);
    let g = |i: usize, k: usize| ybus.get(i, k).re;
    let b = |i: usize, k: usize| ybus.get(i, k).im;

    let mut vm: Vec<f64> = case
        .buses
        .iter()
        .map(|bus| match bus.kind {
            BusKind::Pq => bus.base_voltage_magnitude,
            _ => bus.voltage_setpoint.unwrap_or(1.0),
        })
        .collect();
    let mut va = vec![0.0; n];

    // Unknown ordering: angles of non-slack buses, then magnitudes of PQ buses.
    let angle_buses: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind != BusKind::Slack).collect();
    let mag_buses: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind == BusKind::Pq).collect();
    let na = angle_buses.len();
    let dim = na + mag_buses.len();

    let mut iterations = 0;
    loop {
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            for k in 0..n {
                let y = ybus.get(i, k);
                if y.re == 0.0 && y.im == 0.0 {
                    continue;
                }
                let (s, c) = libm::sincos(va[i] - va[k]);
                p[i] += vm[i] * vm[k] * (y.re * c + y.im * s);
                q[i] += vm[i] * vm[k] * (y.re * s - y.im * c);
            }
        }
        let mut mismatch = Vec::with_capacity(dim);
        mismatch.extend(angle_buses.iter().map(|&i| spec[i].re - p[i]));
        mismatch.extend(mag_buses.iter().map(|&i| spec[i].im - q[i]));
        let max_mismatch = mismatch.iter().fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) });
        if !max_mismatch.is_finite() {
            return Err(Error::PowerFlowDiverged { iterations, mismatch: f64::INFINITY });
        }
        if max_mismatch <= POWER_FLOW_TOLERANCE {
            let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect();
            let s = bus_power_injections(&ybus, &v);
            let slack = case.slack_index().expect("validated case has a slack bus");
            let gen = (s[slack] + loads.load_pu(slack, case.system_mva_base)) * case.system_mva_base;
            return Ok(PowerFlowSolution {
                voltage_magnitudes: vm,
                voltage_angles: va,
                slack_injection: (gen.re, gen.im),
                converged: true,
                max_mismatch,
                iterations,
                loads: loads.clone(),
            });
        }
        if iterations == POWER_FLOW_MAX_ITERATIONS {
            return Err(Error::PowerFlowDiverged { iterations, mismatch: max_mismatch });
        }

        let mut jac = RealMatrix::zeros(dim, dim);
        for (r, &i) in angle_buses.iter().enumerate() {
            for (c, &k) in angle_buses.iter().enumerate() {
                jac[(r, c)] = if i == k {
                    -q[i] - b(i, i) * vm[i] * vm[i]
                } else {
                    let (s, co) = libm::sincos(va[i] - va[k]);
                    vm[i] * vm[k] * (g(i, k) * s - b(i, k) * co)
                };
            }
            for (c, &k) in mag_buses.iter().enumerate() {
                jac[(r, na + c)] = if i == k {
                    p[i] / vm[i] + g(i, i) * vm[i]
                } else {
                    let (s, co) = libm::sincos(va[i] - va[k]);
                    vm[i] * (g(i, k) * co + b(i, k) * s)
                };
            }
        }
        for (r, &i) in mag_buses.iter().enumerate() {
            for (c, &k) in angle_buses.iter().enumerate() {
                jac[(na + r, c)] = if i == k {
                    p[i] - g(i, i) * vm[i] * vm[i]
                } else {
                    let (s, co) = libm::sincos(va[i] - va[k]);
                    -vm[i] * vm[k] * (g(i, k) * co + b(i, k) * s)
                };
            }
            for (c, &k) in mag_buses.iter().enumerate() {
                jac[(na + r, na + c)] = if i == k {
                    q[i] / vm[i] - b(i, i) * vm[i]
                } else {
                    let (s, co) = libm::sincos(va[i] - va[k]);
                    vm[i] * (g(i, k) * s - b(i, k) * co)
                };
            }
        }
        let lu = jac.lu().ok_or(Error::PowerFlowDiverged { iterations, mismatch: max_mismatch })?;
        let step = lu.solve(&mismatch);
        for (r, &i) in angle_buses.iter().enumerate() {
            va[i] += step[r];
        }
        for (r, &i) in mag_buses.iter().enumerate() {
            vm[i] += step[na + r];
            if !(vm[i] > 0.0) {
                return Err(Error::PowerFlowDiverged { iterations: iterations + 1, mismatch: max_mismatch });
            }
        }
        iterations += 1;
    }
}

/// Eliminates every node after the first `keep` ones:
/// `Y_red = Y_kk - Y_ke Y_ee^-1 Y_ek`.
pub fn kron_reduce(y: &ComplexMatrix, keep: usize) -> Result<ComplexMatrix> {
    assert!(y.is_square() && keep <= y.rows());
    let n = y.rows();
    let m = n - keep;
    if m == 0 {
        return Ok(y.clone());
    }
    let y_kk = y.block(0, 0, keep, keep);
    let y_ke = y.block(0, keep, keep, m);
    let y_ek = y.block(keep, 0, m, keep);
    let y_ee = y.block(keep, keep, m, m);
    let lu = y_ee.lu().ok_or(Error::DegenerateNetwork)?;
    let x = lu.solve_matrix(&y_ek);
    let correction = y_ke.matmul(&x);
    let red = ComplexMatrix::from_fn(keep, keep, |i, j| y_kk[(i, j)] - correction[(i, j)]);
    if red.as_slice().iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::DegenerateNetwork);
    }
    Ok(red)
}

/// Classical-model network seen from the generator internal nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedNetwork {
    pub pre_fault: AdmittanceMatrix,
    pub fault_on: AdmittanceMatrix,
    pub post_fault: AdmittanceMatrix,
    pub internal_emf_magnitudes: Vec<f64>,
    pub initial_rotor_angles: Vec<f64>,
    /// pu on the system base.
    pub mechanical_powers: Vec<f64>,
    /// Inertia constants converted to the system base (s).
    pub inertia: Vec<f64>,
    /// Damping on the system base.
    pub damping: Vec<f64>,
    pub nominal_frequency: f64,
}

impl ReducedNetwork {
    pub fn generator_count(&self) -> usize {
        self.internal_emf_magnitudes.len()
    }

    pub fn matrix(&self, topology: Topology) -> &AdmittanceMatrix {
        match topology {
            Topology::PreFault => &self.pre_fault,
            Topology::FaultOn => &self.fault_on,
            Topology::PostFault => &self.post_fault,
        }
    }

    /// Electrical power of every machine at rotor angles `angles` (pu).
    pub fn electrical_powers(&self, topology: Topology, angles: &[f64]) -> Vec<f64> {
        let e: Vec<Complex64> = self
            .internal_emf_magnitudes
            .iter()
            .zip(angles)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect();
        bus_power_injections(self.matrix(topology), &e).iter().map(|s| s.re).collect()
    }
}

/// Builds the three reduced matrices and the initial machine state.
///
/// Net loads (wind included as negative load) become constant admittances at
/// the solved voltages; generators become constant EMFs behind `xd'`.
pub fn reduce_to_internal_nodes(case: &GridCase, pf: &PowerFlowSolution) -> Result<ReducedNetwork> {
    if !pf.converged {
        return Err(Error::InvalidCase("power flow not converged".into()));
    }
    let nb = case.bus_count();
    let ng = case.generators.len();
    let base = case.system_mva_base;
    let v = pf.voltages();
    let ybus = build_ybus(case, Topology::PreFault)?;
    let injected = bus_power_injections(&ybus, &v);

    let mut emf = Vec::with_capacity(ng);
    for g in &case.generators {
        let i = case.bus_index(g.bus);
        let s_gen = injected[i] + pf.loads.load_pu(i, base);
        let current = (s_gen / v[i]).conj();
        emf.push(v[i] + Complex64::new(0.0, g.transient_reactance_xd_prime) * current);
    }

    let mut reduced = Vec::with_capacity(3);
    for topology in Topology::ALL {
        let net = build_ybus(case, topology)?;
        let mut full = ComplexMatrix::zeros(ng + nb, ng + nb);
        for i in 0..nb {
            for k in 0..nb {
                full[(ng + i, ng + k)] = net.get(i, k);
            }
            let vm2 = v[i].norm_sqr();
            full[(ng + i, ng + i)] += pf.loads.load_pu(i, base).conj() / vm2;
        }
        for (gi, g) in case.generators.iter().enumerate() {
            let y = Complex64::new(0.0, g.transient_reactance_xd_prime).inv();
            let bi = ng + case.bus_index(g.bus);
            full[(gi, gi)] += y;
            full[(bi, bi)] += y;
            full[(gi, bi)] -= y;
            full[(bi, gi)] -= y;
        }
        reduced.push(AdmittanceMatrix(kron_reduce(&full, ng)?));
    }
    let post_fault = reduced.pop().unwrap();
    let fault_on = reduced.pop().unwrap();
    let pre_fault = reduced.pop().unwrap();

    let mut network = ReducedNetwork {
        pre_fault,
        fault_on,
        post_fault,
        internal_emf_magnitudes: emf.iter().map(|e| e.norm()).collect(),
        initial_rotor_angles: emf.iter().map(|e| e.arg()).collect(),
        mechanical_powers: Vec::new(),
        inertia: case.generators.iter().map(|g| g.inertia_constant_h * g.mva_base / base).collect(),
        damping: case.generators.iter().map(|g| g.damping_d * g.mva_base / base).collect(),
        nominal_frequency: case.fault.nominal_frequency,
    };
    // Evaluated on the reduced network itself so the initial state is an
    // equilibrium to rounding, not just to the power-flow tolerance.
    network.mechanical_powers = network.electrical_powers(Topology::PreFault, &network.initial_rotor_angles.clone());
    Ok(network)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_bus(r: f64, x: f64) -> GridCase {
        let mut case = smib(0.0);
        case.lines.truncate(1);
        case.lines[0].series_resistance = r;
        case.lines[0].series_reactance = x;
        case
    }

    #[test]
    fn two_bus_assembly() {
        let case = two_bus(0.02, 0.2);
        let y = build_ybus(&case, Topology::PreFault).unwrap();
        let ys = c(0.02, 0.2).inv();
        assert_eq!(y.dimension(), 2);
        assert!((y.get(0, 0) - ys).norm() < 1e-15);
        assert!((y.get(1, 1) - ys).norm() < 1e-15);
        assert!((y.get(0, 1) + ys).norm() < 1e-15);
        assert!((y.get(1, 0) + ys).norm() < 1e-15);
    }

    #[test]
    fn post_fault_drops_tripped_line() {
        let case = nine_bus();
        case.validate().unwrap();
        let pre = build_ybus(&case, Topology::PreFault).unwrap();
        let post = build_ybus(&case, Topology::PostFault).unwrap();
        assert_ne!(pre.get(4, 6), c(0.0, 0.0));
        assert_eq!(post.get(4, 6), c(0.0, 0.0));
        assert_eq!(post.get(6, 4), c(0.0, 0.0));
    }

    #[test]
    fn fault_on_shunt_dominates() {
        let case = nine_bus();
        let y = build_ybus(&case, Topology::FaultOn).unwrap();
        assert!(y.get(6, 6).norm() >= 1e6);
        assert!(build_ybus(&case, Topology::PreFault).unwrap().get(6, 6).norm() < 1e3);
    }

    #[test]
    fn islanding_is_detected() {
        // Tripping the only tie of a radial bus islands it.
        let mut case = nine_bus();
        case.fault.tripped_line = (2, 7);
        case.fault.faulted_bus = 7;
        case.validate().unwrap();
        assert!(matches!(build_ybus(&case, Topology::PostFault), Err(Error::IslandedNetwork)));
        assert!(build_ybus(&case, Topology::PreFault).is_ok());
    }

    #[test]
    fn ybus_is_pure_and_symmetric() {
        let case = nine_bus();
        for t in Topology::ALL {
            let a = build_ybus(&case, t).unwrap();
            let b = build_ybus(&case, t).unwrap();
            assert_eq!(a, b);
            for i in 0..9 {
                assert!(a.get(i, i).re >= 0.0);
                for j in 0..9 {
                    assert_eq!(a.get(i, j), a.get(j, i));
                }
            }
        }
    }

    #[test]
    fn remove_and_readd_line() {
        let case = nine_bus();
        let orig = build_ybus(&case, Topology::PreFault).unwrap();
        for line in &case.lines {
            let mut y = orig.clone();
            y.stamp_line(line, -1.0);
            y.stamp_line(line, 1.0);
            assert!(y.0.max_abs_diff(&orig.0) <= 1e-12);
        }
    }

    #[test]
    fn validation_rejects_bad_cases() {
        let mut case = nine_bus();
        case.buses[1].kind = BusKind::Slack;
        assert!(case.validate().is_err());

        let mut case = nine_bus();
        case.fault.faulted_bus = 4;
        assert!(case.validate().is_err());

        let mut case = nine_bus();
        case.lines[3].in_service = false;
        assert!(case.validate().is_err());

        let mut case = nine_bus();
        case.generators[0].inertia_constant_h = 0.0;
        assert!(case.validate().is_err());

        let mut case = nine_bus();
        case.wind_farms[0].v_r = 30.0;
        assert!(case.validate().is_err());
    }

    #[test]
    fn flat_case_is_a_fixed_point() {
        let mut case = nine_bus();
        for line in &mut case.lines {
            line.series_resistance = 0.0;
            line.shunt_susceptance = 0.0;
        }
        for bus in &mut case.buses {
            if bus.voltage_setpoint.is_some() {
                bus.voltage_setpoint = Some(1.0);
            }
        }
        for g in &mut case.generators {
            g.mechanical_power = 0.0;
        }
        let pf = solve_power_flow(&case, &BusInjections::zero(9)).unwrap();
        assert!(pf.converged);
        for i in 0..9 {
            assert!(pf.voltage_angles[i].abs() < 1e-12);
            assert!((pf.voltage_magnitudes[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nine_bus_power_flow_residual() {
        let case = wscc_textbook();
        let loads = BusInjections::base_loads(&case);
        let pf = solve_power_flow(&case, &loads).unwrap();
        let residual = power_flow_residual(&case, &loads, &pf.voltage_magnitudes, &pf.voltage_angles).unwrap();
        assert!(residual <= 1e-8, "{residual}");
        assert!(pf.max_mismatch <= POWER_FLOW_TOLERANCE);
        assert_eq!(pf.voltage_magnitudes[1], 1.025);
        assert_eq!(pf.voltage_magnitudes[2], 1.025);
        // Textbook slack output for the base WSCC case is about 71.6 MW.
        assert!((pf.slack_injection.0 - 71.6).abs() < 0.2, "{:?}", pf.slack_injection);
    }

    #[test]
    fn overload_does_not_converge() {
        let case = nine_bus();
        let mut loads = BusInjections::base_loads(&case);
        for v in loads.load_mw.iter_mut().chain(loads.load_mvar.iter_mut()) {
            *v *= 10.0;
        }
        assert!(matches!(solve_power_flow(&case, &loads), Err(Error::PowerFlowDiverged { .. })));
    }

    #[test]
    fn kron_reduction_preserves_terminal_behaviour() {
        let mut rng = stream(11, 0, 0);
        for trial in 0..50 {
            let n = 3 + trial % 5;
            let keep = 1 + trial % (n - 1);
            // Random connected passive network with shunts.
            let mut y = ComplexMatrix::zeros(n, n);
            for i in 0..n {
                for j in i + 1..n {
                    if j == i + 1 || rng.random::<f64>() < 0.4 {
                        let ys = c(rng.random_range(0.0..1.0), rng.random_range(-20.0..-1.0));
                        y[(i, i)] += ys;
                        y[(j, j)] += ys;
                        y[(i, j)] -= ys;
                        y[(j, i)] -= ys;
                    }
                }
                y[(i, i)] += c(rng.random_range(0.0..0.5), rng.random_range(-0.5..0.5));
            }
            let red = kron_reduce(&y, keep).unwrap();
            let e: Vec<Complex64> = (0..keep).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            // Interior voltages with zero injection: Y_ee V_e = -Y_ek E.
            let y_ee = y.block(keep, keep, n - keep, n - keep);
            let rhs: Vec<Complex64> = y.block(keep, 0, n - keep, keep).mul_vec(&e).iter().map(|v| -v).collect();
            let v_e = y_ee.lu().unwrap().solve(&rhs);
            let mut v = e.clone();
            v.extend(v_e);
            let full_currents = y.mul_vec(&v);
            let red_currents = red.mul_vec(&e);
            for k in 0..keep {
                let err = (full_currents[k] - red_currents[k]).norm();
                assert!(err <= 1e-10 * full_currents[k].norm().max(1e-12), "trial {trial}: {err}");
            }
            for k in keep..n {
                assert!(full_currents[k].norm() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_interior_is_degenerate() {
        let y = ComplexMatrix::from_fn(3, 3, |i, j| if i == 0 && j == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) });
        assert!(matches!(kron_reduce(&y, 1), Err(Error::DegenerateNetwork)));
    }

    #[test]
    fn nine_bus_reduction_is_an_equilibrium() {
        let case = wscc_textbook();
        let pf = solve_power_flow(&case, &BusInjections::base_loads(&case)).unwrap();
        let net = reduce_to_internal_nodes(&case, &pf).unwrap();
        assert_eq!(net.generator_count(), 3);
        for t in Topology::ALL {
            assert_eq!(net.matrix(t).dimension(), 3);
        }
        let pe = net.electrical_powers(Topology::PreFault, &net.initial_rotor_angles);
        for (i, (pm, pe)) in net.mechanical_powers.iter().zip(&pe).enumerate() {
            assert!((pm - pe).abs() <= 1e-12);
            // Mechanical power agrees with the power-flow dispatch.
            if i > 0 {
                assert!((pm - case.generators[i].mechanical_power).abs() < 1e-7);
            }
        }
        assert!((net.mechanical_powers[0] * 100.0 - pf.slack_injection.0).abs() < 1e-5);
        // Textbook internal EMFs of the classical WSCC model.
        let emf = &net.internal_emf_magnitudes;
        assert!((emf[0] - 1.0566).abs() < 2e-3 && (emf[1] - 1.0502).abs() < 2e-3 && (emf[2] - 1.0170).abs() < 2e-3, "{emf:?}");
    }

    #[test]
    fn smib_equilibrium_angle() {
        let pm = 0.9;
        let case = smib(pm);
        let pf = solve_power_flow(&case, &BusInjections::zero(2)).unwrap();
        let net = reduce_to_internal_nodes(&case, &pf).unwrap();
        assert_eq!(net.matrix(Topology::PreFault).dimension(), 2);
        let pe = net.electrical_powers(Topology::PreFault, &net.initial_rotor_angles);
        assert!((pe[1] - pm).abs() < 1e-9);
    }
}
