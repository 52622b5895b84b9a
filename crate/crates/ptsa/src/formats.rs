//! Case and uncertainty files.
//!
//! The case file is the serde form of [`GridCase`]. The uncertainty file
//! lists marginals and the copula correlation pairs:
//!
//! ```json
//! {
//!   "marginals": [
//!     {"kind": "gaussian", "params": {"mean": 1.0, "std": 0.1}, "role": {"type": "load_scale", "bus": 5}},
//!     {"kind": "weibull", "params": {"scale": 11.2, "shape": 2.2}, "role": {"type": "wind_speed", "bus": 2}}
//!   ],
//!   "copula": {"pairs": [{"i": 0, "j": 1, "rho": 0.8}]}
//! }
//! ```

use std::path::Path;

use ptsa_core::grid_model::GridCase;
use ptsa_core::uncertainty::{CopulaSpec, Distribution, InputModel, InputRole, MarginalSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUNDLED_CASE: &str = include_str!("../data/wscc9.json");
const BUNDLED_UNCERTAINTY: &str = include_str!("../data/uncertainty.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum DistributionEntry {
    Gaussian { mean: f64, std: f64 },
    Weibull { scale: f64, shape: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RoleEntry {
    LoadScale { bus: usize },
    WindSpeed { bus: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalEntry {
    #[serde(flatten)]
    pub distribution: DistributionEntry,
    pub role: RoleEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub i: usize,
    pub j: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CopulaEntry {
    #[serde(default)]
    pub pairs: Vec<PairEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyFile {
    pub marginals: Vec<MarginalEntry>,
    #[serde(default)]
    pub copula: CopulaEntry,
}

impl UncertaintyFile {
    pub fn to_model(&self) -> Result<InputModel> {
        let marginals = self
            .marginals
            .iter()
            .map(|m| MarginalSpec {
                distribution: match m.distribution {
                    DistributionEntry::Gaussian { mean, std } => Distribution::Gaussian { mean, std },
                    DistributionEntry::Weibull { scale, shape } => Distribution::Weibull { scale, shape },
                },
                role: match m.role {
                    RoleEntry::LoadScale { bus } => InputRole::LoadScale { bus },
                    RoleEntry::WindSpeed { bus } => InputRole::WindSpeed { bus },
                },
            })
            .collect::<Vec<_>>();
        let pairs: Vec<_> = self.copula.pairs.iter().map(|p| (p.i, p.j, p.rho)).collect();
        let copula = CopulaSpec::from_pairs(marginals.len(), &pairs)?;
        Ok(InputModel::new(marginals, copula)?)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(Error::io(path))
}

pub fn parse_case(text: &str, origin: &Path) -> Result<GridCase> {
    let case: GridCase = serde_json::from_str(text).map_err(Error::json(origin))?;
    case.validate()?;
    Ok(case)
}

pub fn parse_uncertainty(text: &str, origin: &Path) -> Result<InputModel> {
    let file: UncertaintyFile = serde_json::from_str(text).map_err(Error::json(origin))?;
    file.to_model()
}

pub fn load_case(path: &Path) -> Result<GridCase> {
    parse_case(&read(path)?, path)
}

pub fn load_uncertainty(path: &Path) -> Result<InputModel> {
    parse_uncertainty(&read(path)?, path)
}

/// The WSCC 9-bus case with two 50 MW wind farms shipped with the crate.
pub fn bundled_case() -> GridCase {
    parse_case(BUNDLED_CASE, Path::new("data/wscc9.json")).expect("bundled case is valid")
}

/// Three Gaussian loads and two correlated Weibull wind speeds.
pub fn bundled_uncertainty() -> InputModel {
    parse_uncertainty(BUNDLED_UNCERTAINTY, Path::new("data/uncertainty.json")).expect("bundled model is valid")
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::json(path))?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::io(path))
}
