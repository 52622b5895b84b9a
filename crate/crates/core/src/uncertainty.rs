//! Random inputs: marginals coupled by a Gaussian copula.
//!
//! Every scenario carries two coordinate sets. `u` lives in independent
//! standard-normal space, where the Markov chains move; `x` holds the
//! physical values (load scale factors, wind speeds in m/s). The map is
//! `z = L u` with `L` the Cholesky factor of the copula correlation, then
//! `x_i = F_i^-1(Phi(z_i))` componentwise.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::grid_model::{BusInjections, GridCase, WindFarmSpec};
use crate::linalg::RealMatrix;
use crate::normal;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Gaussian { mean: f64, std: f64 },
    Weibull { scale: f64, shape: f64 },
}

impl Distribution {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Distribution::Gaussian { mean, std } => mean.is_finite() && std > 0.0 && std.is_finite(),
            Distribution::Weibull { scale, shape } => scale > 0.0 && shape > 0.0 && scale.is_finite() && shape.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("invalid marginal parameters {self:?}")))
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Distribution::Gaussian { mean, std } => normal::cdf((x - mean) / std),
            Distribution::Weibull { scale, shape } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -libm::expm1(-libm::pow(x / scale, shape))
                }
            }
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            Distribution::Gaussian { mean, std } => mean + std * normal::quantile(p),
            Distribution::Weibull { scale, shape } => scale * libm::pow(-libm::log1p(-p), 1.0 / shape),
        }
    }

    /// Physical value with normal score `z`.
    pub fn from_score(&self, z: f64) -> f64 {
        match *self {
            Distribution::Gaussian { mean, std } => mean + std * z,
            Distribution::Weibull { scale, shape } => {
                // -ln(1 - Phi(z)), evaluated on whichever tail keeps precision.
                let w = if z < 0.0 {
                    -libm::log1p(-normal::cdf(z))
                } else {
                    -libm::log(normal::sf(z))
                };
                scale * libm::pow(w, 1.0 / shape)
            }
        }
    }

    /// Normal score of physical value `x`; `None` outside the support.
    pub fn to_score(&self, x: f64) -> Option<f64> {
        match *self {
            Distribution::Gaussian { mean, std } => x.is_finite().then(|| (x - mean) / std),
            Distribution::Weibull { scale, shape } => {
                if !(x > 0.0 && x.is_finite()) {
                    return None;
                }
                let w = libm::pow(x / scale, shape);
                Some(if w < core::f64::consts::LN_2 {
                    normal::quantile(-libm::expm1(-w))
                } else {
                    normal::isf(libm::exp(-w))
                })
            }
        }
    }
}

/// What a random input drives in the grid. Bus ids, not indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputRole {
    /// Multiplies the base active and reactive load at a bus.
    LoadScale { bus: usize },
    /// Wind speed (m/s) at the farm connected to a bus.
    WindSpeed { bus: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalSpec {
    pub distribution: Distribution,
    pub role: InputRole,
}

/// Correlation matrix of the normal scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaSpec {
    pub correlation: RealMatrix,
}

impl CopulaSpec {
    pub fn independent(n: usize) -> Self {
        Self {
            correlation: RealMatrix::identity(n),
        }
    }

    /// Identity with the listed symmetric pair correlations `(i, j, rho)` (0-based).
    pub fn from_pairs(n: usize, pairs: &[(usize, usize, f64)]) -> Result<Self> {
        let mut correlation = RealMatrix::identity(n);
        for &(i, j, rho) in pairs {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidModel(format!("copula pair ({i}, {j}) out of range")));
            }
            if !(rho > -1.0 && rho < 1.0) {
                return Err(Error::InvalidModel(format!("copula correlation {rho} outside (-1, 1)")));
            }
            correlation[(i, j)] = rho;
            correlation[(j, i)] = rho;
        }
        Ok(Self { correlation })
    }

    /// Off-diagonal non-zero pairs `(i, j, rho)` with `i < j`.
    pub fn pairs(&self) -> Vec<(usize, usize, f64)> {
        let n = self.correlation.rows();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let rho = self.correlation[(i, j)];
                if rho != 0.0 {
                    out.push((i, j, rho));
                }
            }
        }
        out
    }
}

fn cholesky(a: &RealMatrix) -> Option<RealMatrix> {
    let n = a.rows();
    let mut l = RealMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[(i, i)] = libm::sqrt(s);
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// One realization of the random inputs in both coordinate systems.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPoint {
    pub u: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputModel {
    marginals: Vec<MarginalSpec>,
    copula: CopulaSpec,
    cholesky_factor: RealMatrix,
}

impl InputModel {
    pub fn new(marginals: Vec<MarginalSpec>, copula: CopulaSpec) -> Result<Self> {
        let n = marginals.len();
        if n == 0 {
            return Err(Error::InvalidModel("no marginals".into()));
        }
        for m in &marginals {
            m.distribution.validate()?;
        }
        let r = &copula.correlation;
        if r.rows() != n || r.cols() != n {
            return Err(Error::InvalidModel(format!("correlation is {}x{}, expected {n}x{n}", r.rows(), r.cols())));
        }
        for i in 0..n {
            if r[(i, i)] != 1.0 {
                return Err(Error::InvalidModel("correlation diagonal must be 1".into()));
            }
            for j in 0..i {
                if r[(i, j)] != r[(j, i)] {
                    return Err(Error::InvalidModel("correlation must be symmetric".into()));
                }
            }
        }
        let cholesky_factor = cholesky(r).ok_or_else(|| Error::InvalidModel("correlation is not positive definite".into()))?;
        Ok(Self {
            marginals,
            copula,
            cholesky_factor,
        })
    }

    /// Loads at buses 5, 6, 8 ~ N(1, 0.1^2) of base; wind speeds at the
    /// farms on buses 2 and 3 ~ Weibull(scale 11.2, shape 2.2) with normal-score
    /// correlation 0.8; everything else independent.
    pub fn nine_bus_default() -> Self {
        let load = |bus| MarginalSpec {
            distribution: Distribution::Gaussian { mean: 1.0, std: 0.1 },
            role: InputRole::LoadScale { bus },
        };
        let wind = |bus| MarginalSpec {
            distribution: Distribution::Weibull { scale: 11.2, shape: 2.2 },
            role: InputRole::WindSpeed { bus },
        };
        let copula = CopulaSpec::from_pairs(5, &[(3, 4, 0.8)]).expect("valid pair");
        Self::new(vec![load(5), load(6), load(8), wind(2), wind(3)], copula).expect("valid model")
    }

    pub fn dimension(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[MarginalSpec] {
        &self.marginals
    }

    pub fn copula(&self) -> &CopulaSpec {
        &self.copula
    }

    pub fn cholesky_factor(&self) -> &RealMatrix {
        &self.cholesky_factor
    }

    /// Physical coordinates of standard-normal point `u`.
    pub fn u_to_x(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.dimension(), "dimension mismatch");
        let z = self.cholesky_factor.mul_vec(u);
        z.iter().zip(&self.marginals).map(|(&z, m)| m.distribution.from_score(z)).collect()
    }

    /// Standard-normal coordinates of physical point `x`.
    pub fn x_to_u(&self, x: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(x.len(), self.dimension(), "dimension mismatch");
        let mut z = Vec::with_capacity(x.len());
        for (index, (&value, m)) in x.iter().zip(&self.marginals).enumerate() {
            z.push(m.distribution.to_score(value).ok_or(Error::OutsideSupport { index, value })?);
        }
        // Forward substitution with the lower-triangular factor.
        let l = &self.cholesky_factor;
        let n = z.len();
        let mut u = vec![0.0; n];
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= l[(i, k)] * u[k];
            }
            u[i] = s / l[(i, i)];
        }
        Ok(u)
    }

    pub fn point_from_u(&self, u: Vec<f64>) -> ScenarioPoint {
        let x = self.u_to_x(&u);
        ScenarioPoint { u, x }
    }

    pub fn point_from_x(&self, x: Vec<f64>) -> Result<ScenarioPoint> {
        let u = self.x_to_u(&x)?;
        Ok(ScenarioPoint { u, x })
    }

    /// `n` independent scenarios drawn from `rng`.
    pub fn sample_iid<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<ScenarioPoint> {
        (0..n)
            .map(|_| {
                let u: Vec<f64> = (0..self.dimension()).map(|_| rng.sample(StandardNormal)).collect();
                self.point_from_u(u)
            })
            .collect()
    }

    /// Checks every role against `case`.
    pub fn check_case(&self, case: &GridCase) -> Result<()> {
        for (i, m) in self.marginals.iter().enumerate() {
            let ok = match m.role {
                InputRole::LoadScale { bus } => case.loads.iter().any(|l| l.bus == bus),
                InputRole::WindSpeed { bus } => case.wind_farms.iter().any(|f| f.bus == bus),
            };
            if !ok {
                return Err(Error::InvalidModel(format!("input {i} role {:?} matches nothing in the case", m.role)));
            }
        }
        Ok(())
    }
}

/// Farm output (MW) at wind speed `v`: cubic ramp from cut-in to rated,
/// flat to cut-out, zero outside.
pub fn wind_power(v: f64, farm: &WindFarmSpec) -> f64 {
    let fraction = if farm.v_in <= v && v <= farm.v_r {
        let cube = |s: f64| s * s * s;
        (cube(v) - cube(farm.v_in)) / (cube(farm.v_r) - cube(farm.v_in))
    } else if farm.v_r <= v && v <= farm.v_out {
        1.0
    } else {
        0.0
    };
    farm.rated_power * fraction
}

/// Grid injections of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub injections: BusInjections,
    /// Set when a negative load scale was clamped to zero.
    pub clamped: bool,
}

/// Scales loads (constant power factor) and turns wind speeds into negative
/// active load (Q = 0). Loads and farms without a random input keep their
/// base load and zero output respectively.
pub fn assemble_scenario(model: &InputModel, point: &ScenarioPoint, case: &GridCase) -> Result<Scenario> {
    if point.x.len() != model.dimension() {
        return Err(Error::InvalidModel(format!("point has {} inputs, model {}", point.x.len(), model.dimension())));
    }
    let mut injections = BusInjections::base_loads(case);
    let mut clamped = false;
    for (m, &value) in model.marginals().iter().zip(&point.x) {
        match m.role {
            InputRole::LoadScale { bus } => {
                let scale = if value < 0.0 {
                    clamped = true;
                    0.0
                } else {
                    value
                };
                let i = case.bus_index(bus);
                injections.load_mw[i] = 0.0;
                injections.load_mvar[i] = 0.0;
                for load in case.loads.iter().filter(|l| l.bus == bus) {
                    injections.load_mw[i] += scale * load.base_active_power;
                    injections.load_mvar[i] += scale * load.base_reactive_power;
                }
            }
            InputRole::WindSpeed { bus } => {
                let farm = case
                    .wind_farms
                    .iter()
                    .find(|f| f.bus == bus)
                    .ok_or_else(|| Error::InvalidModel(format!("no wind farm at bus {bus}")))?;
                injections.load_mw[case.bus_index(bus)] -= wind_power(value.max(0.0), farm);
            }
        }
    }
    Ok(Scenario { injections, clamped })
}
