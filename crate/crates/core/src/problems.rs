//! Built-in transport problems whose drift and terminal functional are exactly
//! representable by ReLU networks, so that the only error of a flow network is the Euler
//! discretization.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::approx::{GrowthEnvelope, NetworkFamilyBuilder};
use crate::net::{affine_net, Activation, Ann};
use crate::ode::{FlowProblem, VectorField};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Drift {
    /// `f(x) = −x`.
    Decay,
    /// Rotation generator acting on coordinate pairs `(x_1, x_2), (x_3, x_4), …`; an unpaired
    /// last coordinate is left at rest.
    Rotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terminal {
    /// `g(x) = Σ_i max{x_i, 0}`.
    ReluSumG,
    /// `g(x) = x_1`.
    CoordG,
}

impl FromStr for Drift {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decay" => Ok(Drift::Decay),
            "rotation" => Ok(Drift::Rotation),
            _ => Err(Error::InvalidArgument(format!(
                "unknown problem `{s}` (expected decay or rotation)"
            ))),
        }
    }
}

impl FromStr for Terminal {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu-sum-g" => Ok(Terminal::ReluSumG),
            "coord-g" => Ok(Terminal::CoordG),
            _ => Err(Error::InvalidArgument(format!(
                "unknown terminal functional `{s}` (expected relu-sum-g or coord-g)"
            ))),
        }
    }
}

impl fmt::Display for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Drift::Decay => "decay",
            Drift::Rotation => "rotation",
        })
    }
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Terminal::ReluSumG => "relu-sum-g",
            Terminal::CoordG => "coord-g",
        })
    }
}

impl Drift {
    /// The terminal functional each drift is paired with by default.
    pub fn default_terminal(self) -> Terminal {
        match self {
            Drift::Decay => Terminal::ReluSumG,
            Drift::Rotation => Terminal::CoordG,
        }
    }

    pub fn matrix(self, d: usize) -> Array2<f64> {
        match self {
            Drift::Decay => -Array2::<f64>::eye(d),
            Drift::Rotation => {
                let mut w = Array2::zeros((d, d));
                for k in 0..d / 2 {
                    w[[2 * k, 2 * k + 1]] = -1.0;
                    w[[2 * k + 1, 2 * k]] = 1.0;
                }
                w
            }
        }
    }

    pub fn lipschitz(self, d: usize) -> f64 {
        match self {
            Drift::Rotation if d < 2 => 0.0,
            _ => 1.0,
        }
    }

    pub fn field(self, d: usize) -> Result<VectorField> {
        let w = self.matrix(d);
        VectorField::new(d, self.lipschitz(d), 0.0, move |x| {
            w.dot(&Array1::from(x.to_vec())).to_vec()
        })
    }

    /// Closed-form `X^x_t`.
    pub fn exact_flow(self, x: &[f64], t: f64) -> Vec<f64> {
        match self {
            Drift::Decay => x.iter().map(|v| v * (-t).exp()).collect(),
            Drift::Rotation => {
                let (s, c) = t.sin_cos();
                let mut y = x.to_vec();
                for k in 0..x.len() / 2 {
                    let (a, b) = (x[2 * k], x[2 * k + 1]);
                    y[2 * k] = c * a - s * b;
                    y[2 * k + 1] = s * a + c * b;
                }
                y
            }
        }
    }

    /// Exact network `x ↦ f(x)` with envelope `‖f(x)‖ ≤ 1·(1 + ‖x‖)`.
    pub fn builder(self) -> NetworkFamilyBuilder {
        NetworkFamilyBuilder::new(Activation::Rectifier, move |i, _| {
            let d = i[0];
            affine_net(self.matrix(d), Array1::zeros(d))
        })
        .with_envelope(GrowthEnvelope::constant(1.0, 1.0, 1))
    }
}

impl Terminal {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Terminal::ReluSumG => x.iter().map(|v| v.max(0.0)).sum(),
            Terminal::CoordG => x[0],
        }
    }

    /// Lipschitz constant on `ℝ^d` with the Euclidean norm.
    pub fn lipschitz(self, d: usize) -> f64 {
        match self {
            Terminal::ReluSumG => (d as f64).sqrt(),
            Terminal::CoordG => 1.0,
        }
    }

    pub fn net(self, d: usize) -> Result<Ann> {
        match self {
            Terminal::ReluSumG => Ann::from_pairs(vec![
                (Array2::eye(d), Array1::zeros(d)),
                (Array2::ones((1, d)), Array1::zeros(1)),
            ]),
            Terminal::CoordG => {
                let mut w = Array2::zeros((1, d));
                w[[0, 0]] = 1.0;
                affine_net(w, Array1::zeros(1))
            }
        }
    }

    pub fn builder(self) -> NetworkFamilyBuilder {
        NetworkFamilyBuilder::new(Activation::Rectifier, move |i, _| self.net(i[0]))
    }
}

/// Rates declared for a flow family, as consumed by the scaling exponents:
/// `𝒫 ≤ c ε^{-r0} d^{r1}`, `‖f_d(0)‖ ≤ c d^α`, `‖net(x)‖ ≤ c(ε^{-ρ} d^β + ‖x‖)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyConstants {
    pub r0: f64,
    pub r1: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
}

/// One transport problem per dimension together with the network builders for `f` and `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowFamily {
    pub drift: Drift,
    pub terminal: Terminal,
    pub horizon: f64,
}

impl FlowFamily {
    pub fn new(drift: Drift, terminal: Terminal, horizon: f64) -> Result<Self> {
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be ≥ 0, got {horizon}")));
        }
        Ok(FlowFamily {
            drift,
            terminal,
            horizon,
        })
    }

    pub fn canonical(drift: Drift, horizon: f64) -> Result<Self> {
        Self::new(drift, drift.default_terminal(), horizon)
    }

    pub fn problem(&self, d: usize) -> Result<FlowProblem> {
        let terminal = self.terminal;
        FlowProblem::new(
            self.drift.field(d)?,
            move |x| terminal.eval(x),
            self.horizon,
            terminal.lipschitz(d),
        )
    }

    /// `u(T, x)` in closed form.
    pub fn exact_solution(&self, x: &[f64]) -> f64 {
        self.terminal.eval(&self.drift.exact_flow(x, self.horizon))
    }

    pub fn f_builder(&self) -> NetworkFamilyBuilder {
        self.drift.builder()
    }

    pub fn g_builder(&self) -> NetworkFamilyBuilder {
        self.terminal.builder()
    }

    /// Exact networks: `r0 = 0`; `𝒫(f_d) = d(d+1)` and `𝒫(g_d) ≤ (d+1)²` give `r1 = 2`;
    /// `f_d(0) = 0` gives `α = 0`; constant envelopes give `β = ρ = 0`.
    pub fn constants(&self) -> FamilyConstants {
        FamilyConstants {
            r0: 0.0,
            r1: 2.0,
            alpha: 0.0,
            beta: 0.0,
            rho: 0.0,
        }
    }
}
