//! Limit-state functions: a margin per scenario, failure when negative.

use crate::uncertainty::ScenarioPoint;

/// A scalar margin over input scenarios. Failure is `margin < 0`.
///
/// Implementations must be pure: the same point always yields the same margin.
pub trait LimitState: Sync {
    fn margin(&self, point: &ScenarioPoint) -> f64;
}

impl<L: LimitState + ?Sized> LimitState for &L {
    fn margin(&self, point: &ScenarioPoint) -> f64 {
        (**self).margin(point)
    }
}

/// `g(u) = beta - sum(u) / sqrt(n)`, so `P(g < 0) = Phi(-beta)` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearBeta {
    pub beta: f64,
}

impl LinearBeta {
    /// Reliability index of a 5e-4 failure probability.
    pub const BETA_5E4: f64 = 3.29053;

    pub fn new(beta: f64) -> Self {
        Self { beta }
    }

    pub fn failure_probability(&self) -> f64 {
        crate::normal::cdf(-self.beta)
    }
}

impl LimitState for LinearBeta {
    fn margin(&self, point: &ScenarioPoint) -> f64 {
        let n = point.u.len() as f64;
        self.beta - point.u.iter().sum::<f64>() / libm::sqrt(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl LimitState for Constant {
    fn margin(&self, _: &ScenarioPoint) -> f64 {
        self.0
    }
}

/// Adapts a closure.
pub struct FnLimitState<F>(pub F);

impl<F: Fn(&ScenarioPoint) -> f64 + Sync> LimitState for FnLimitState<F> {
    fn margin(&self, point: &ScenarioPoint) -> f64 {
        (self.0)(point)
    }
}
