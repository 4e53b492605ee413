//! Congestion Hamiltonians `H(m, p) = |p|^γ / (γ w(m)^(γ-1)) - ζ m` with
//! weight `w(m) = (c + a m)^θ`, their Lagrangians and optimal controls, and
//! the three benchmark scenarios.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::grid::{GridError, ScalarField, SpaceGrid, TimeGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("density must be nonnegative, got {0}")]
    NegativeDensity(f64),
    #[error("squared control norm must be nonnegative, got {0}")]
    NegativeNorm(f64),
    #[error("invalid model parameter {name}: {value}")]
    Parameter { name: &'static str, value: f64 },
    #[error("unknown scenario '{0}' (expected example1, example2 or example3)")]
    UnknownScenario(String),
    #[error("override {name} must be positive, got {value}")]
    Override { name: &'static str, value: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Parametrized non-separable congestion Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianModel {
    pub gamma: f64,
    pub weight_c: f64,
    pub weight_a: f64,
    pub weight_theta: f64,
    pub coupling_zeta: f64,
    /// Floor applied to the density inside `w` when `c = 0`.
    pub m_floor: f64,
}

pub const DEFAULT_M_FLOOR: f64 = 1e-10;

impl HamiltonianModel {
    pub fn new(
        gamma: f64,
        weight_c: f64,
        weight_a: f64,
        weight_theta: f64,
        coupling_zeta: f64,
    ) -> Result<Self, ModelError> {
        let model = Self {
            gamma,
            weight_c,
            weight_a,
            weight_theta,
            coupling_zeta,
            m_floor: DEFAULT_M_FLOOR,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let checks: [(&'static str, f64, bool); 6] = [
            ("gamma", self.gamma, self.gamma > 1.0),
            ("c", self.weight_c, self.weight_c >= 0.0),
            ("a", self.weight_a, self.weight_a >= 0.0),
            ("theta", self.weight_theta, self.weight_theta >= 0.0),
            ("zeta", self.coupling_zeta, self.coupling_zeta >= 0.0),
            ("m_floor", self.m_floor, self.m_floor > 0.0),
        ];
        for (name, value, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(ModelError::Parameter { name, value });
            }
        }
        if self.weight_c == 0.0 && self.weight_a == 0.0 && self.weight_theta > 0.0 {
            return Err(ModelError::Parameter {
                name: "a",
                value: self.weight_a,
            });
        }
        Ok(())
    }

    /// Exponent of the congestion factor in `H`, `β = θ (γ - 1)`.
    pub fn beta(&self) -> f64 {
        self.weight_theta * (self.gamma - 1.0)
    }

    /// Conjugate exponent `γ' = γ / (γ - 1)`.
    pub fn dual_exponent(&self) -> f64 {
        self.gamma / (self.gamma - 1.0)
    }

    fn check_density(m: f64) -> Result<(), ModelError> {
        if m >= 0.0 {
            Ok(())
        } else {
            Err(ModelError::NegativeDensity(m))
        }
    }

    /// Congestion weight `w(m)`; `m` must already be nonnegative.
    #[inline]
    pub fn weight(&self, m: f64) -> f64 {
        let m = if self.weight_c == 0.0 {
            m.max(self.m_floor)
        } else {
            m
        };
        (self.weight_c + self.weight_a * m).powf(self.weight_theta)
    }

    /// Kinetic part `|p|^γ / (γ w^(γ-1))` from `|p|^2`.
    #[inline]
    pub fn kinetic(&self, m: f64, p_norm_sq: f64) -> f64 {
        if p_norm_sq == 0.0 {
            return 0.0;
        }
        p_norm_sq.powf(0.5 * self.gamma) / (self.gamma * self.weight(m).powf(self.gamma - 1.0))
    }

    /// Scalar `s` with `H_p(m, p) = s p`, i.e. `|p|^(γ-2) / w^(γ-1)`.
    /// Returns 0 at `p = 0`, where the gradient vanishes for any `γ > 1`.
    #[inline]
    pub fn grad_scale(&self, m: f64, p_norm_sq: f64) -> f64 {
        let w = self.weight(m).powf(self.gamma - 1.0);
        if self.gamma == 2.0 {
            return 1.0 / w;
        }
        if p_norm_sq == 0.0 {
            return 0.0;
        }
        p_norm_sq.powf(0.5 * (self.gamma - 2.0)) / w
    }

    /// Kinetic Lagrangian `w |q|^γ' / γ'` from `|q|^2`.
    #[inline]
    pub fn kinetic_lagrangian(&self, m: f64, q_norm_sq: f64) -> f64 {
        if q_norm_sq == 0.0 {
            return 0.0;
        }
        let gp = self.dual_exponent();
        self.weight(m) * q_norm_sq.powf(0.5 * gp) / gp
    }

    pub fn hamiltonian(&self, m: f64, p: &[f64]) -> Result<f64, ModelError> {
        Self::check_density(m)?;
        let p2 = p.iter().map(|v| v * v).sum();
        Ok(self.kinetic(m, p2) - self.coupling_zeta * m)
    }

    pub fn hamiltonian_grad_p(&self, m: f64, p: &[f64]) -> Result<Vec<f64>, ModelError> {
        Self::check_density(m)?;
        let p2 = p.iter().map(|v| v * v).sum();
        let s = self.grad_scale(m, p2);
        Ok(p.iter().map(|v| s * v).collect())
    }

    /// `L(m, q) = w |q|^γ' / γ' + ζ m`.
    pub fn lagrangian(&self, m: f64, q_norm_sq: f64) -> Result<f64, ModelError> {
        Self::check_density(m)?;
        if !(q_norm_sq >= 0.0) {
            return Err(ModelError::NegativeNorm(q_norm_sq));
        }
        Ok(self.kinetic_lagrangian(m, q_norm_sq) + self.coupling_zeta * m)
    }

    /// Maximizer of `q.p - L(m, q)` with every component clamped to
    /// `[-bound, bound]`; pass `f64::INFINITY` for an unconstrained control.
    pub fn optimal_policy(&self, m: f64, p: &[f64], bound: f64) -> Result<Vec<f64>, ModelError> {
        let mut q = self.hamiltonian_grad_p(m, p)?;
        for v in &mut q {
            *v = v.clamp(-bound, bound);
        }
        Ok(q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioName {
    Example1,
    Example2,
    Example3,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 3] = [Self::Example1, Self::Example2, Self::Example3];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Example1 => "example1",
            Self::Example2 => "example2",
            Self::Example3 => "example3",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| ModelError::UnknownScenario(s.to_string()))
    }
}

/// Optional replacements for a preset's default parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioOverrides {
    pub beta: Option<f64>,
    pub zeta: Option<f64>,
    pub horizon: Option<f64>,
    pub nodes: Option<usize>,
    pub steps: Option<usize>,
    pub epsilon: Option<f64>,
}

/// A fully specified benchmark problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPreset {
    pub name: ScenarioName,
    pub model: HamiltonianModel,
    pub epsilon: f64,
    pub dim: usize,
    pub nodes: usize,
    pub steps: usize,
    pub horizon: f64,
}

impl ScenarioPreset {
    pub fn space_grid(&self) -> Result<SpaceGrid, GridError> {
        SpaceGrid::new(self.dim, self.nodes)
    }

    pub fn time_grid(&self) -> Result<TimeGrid, GridError> {
        TimeGrid::new(self.steps, self.horizon)
    }

    /// Terminal cost `u_T(x)`.
    pub fn terminal_cost(&self, x: &[f64]) -> f64 {
        match self.name {
            ScenarioName::Example1 => {
                let d1 = x[0] - 0.3;
                let d2 = x[0] - 0.7;
                10.0 * (d1 * d1).min(d2 * d2)
            }
            ScenarioName::Example2 | ScenarioName::Example3 => {
                1.2 * (2.0 * std::f64::consts::PI * x[0]).cos()
                    + (2.0 * std::f64::consts::PI * x[1]).cos()
            }
        }
    }

    /// Unnormalized initial density `m_0(x)`.
    pub fn initial_density(&self, x: &[f64]) -> f64 {
        match self.name {
            ScenarioName::Example1 => {
                const EDGE: f64 = 1e-12;
                if x[0] >= 0.375 - EDGE && x[0] <= 0.625 + EDGE {
                    4.0
                } else {
                    0.0
                }
            }
            ScenarioName::Example2 | ScenarioName::Example3 => {
                let r2 = (x[0] - 0.25).powi(2) + (x[1] - 0.25).powi(2);
                (-10.0 * r2).exp()
            }
        }
    }

    /// `M_0` sampled on the grid and scaled to unit discrete mass.
    pub fn initial_slice(&self, grid: &SpaceGrid) -> ScalarField {
        let mut m0 = grid.sample(|x| self.initial_density(x));
        let mass = crate::grid::total_mass(&m0, grid);
        m0.iter_mut().for_each(|v| *v /= mass);
        m0
    }

    pub fn terminal_slice(&self, grid: &SpaceGrid) -> ScalarField {
        grid.sample(|x| self.terminal_cost(x))
    }
}

fn positive(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ModelError::Override { name, value })
    }
}

/// Builds a preset by name, applying overrides on top of the defaults.
pub fn build_scenario(
    name: &str,
    overrides: &ScenarioOverrides,
) -> Result<ScenarioPreset, ModelError> {
    let name: ScenarioName = name.parse()?;
    let mut preset = match name {
        ScenarioName::Example1 => ScenarioPreset {
            name,
            model: HamiltonianModel::new(2.0, 1.0, 4.0, 1.5, 1.0)?,
            epsilon: 0.05,
            dim: 1,
            nodes: 200,
            steps: 200,
            horizon: 1.0,
        },
        ScenarioName::Example2 => ScenarioPreset {
            name,
            model: HamiltonianModel::new(2.0, 0.0, 1.0, 0.5, 0.0)?,
            epsilon: 0.3,
            dim: 2,
            nodes: 50,
            steps: 50,
            horizon: 0.5,
        },
        ScenarioName::Example3 => ScenarioPreset {
            name,
            model: HamiltonianModel::new(3.0, 0.0, 1.0, 0.25, 0.0)?,
            epsilon: 0.3,
            dim: 2,
            nodes: 50,
            steps: 50,
            horizon: 0.5,
        },
    };
    if let Some(beta) = overrides.beta {
        preset.model.weight_theta = positive("beta", beta)? / (preset.model.gamma - 1.0);
    }
    if let Some(zeta) = overrides.zeta {
        if !(zeta >= 0.0 && zeta.is_finite()) {
            return Err(ModelError::Override {
                name: "zeta",
                value: zeta,
            });
        }
        preset.model.coupling_zeta = zeta;
    }
    if let Some(t) = overrides.horizon {
        preset.horizon = positive("T", t)?;
    }
    if let Some(i) = overrides.nodes {
        positive("I", i as f64)?;
        preset.nodes = i;
    }
    if let Some(n) = overrides.steps {
        positive("N", n as f64)?;
        preset.steps = n;
    }
    if let Some(eps) = overrides.epsilon {
        preset.epsilon = positive("epsilon", eps)?;
    }
    preset.space_grid()?;
    preset.time_grid()?;
    Ok(preset)
}
