use crate::closedloop::{find_equilibrium, flat_start, Disturbance, FullState, GainSet, Theta};
use crate::error::{Error, Result};
use crate::gfm::References;
use crate::linear::{linearize, spectral_abscissa};
use crate::plant::PlantParams;

use super::norm::{grid_peak, hinf_norm_bisection_from, FrequencyGrid};
use super::weight::{weighted_channel, Weight};

/// Weighted closed-loop channel `W * T_ij` (zero-based `z_i`, `w_j`).
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub output: usize,
    pub input: usize,
    pub weight: Weight,
}

impl Channel {
    pub fn new(output: usize, input: usize, weight: Weight) -> Self {
        Self {
            output,
            input,
            weight,
        }
    }

    /// Droop tracking against `P_ref`, power roll-off, and rejection of grid
    /// frequency steps.
    pub fn standard_set() -> Vec<Self> {
        vec![
            Self::new(0, 0, Weight::w11()),
            Self::new(1, 0, Weight::w21()),
            Self::new(0, 1, Weight::w12()),
        ]
    }

    pub fn label(&self) -> String {
        format!(
            "W{}{}*T{}{}",
            self.output + 1,
            self.input + 1,
            self.output + 1,
            self.input + 1
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormMethod {
    /// Grid-refined lower bound.
    Grid(FrequencyGrid),
    /// Grid peak followed by Hamiltonian bisection to relative `tol`.
    Bisection { grid: FrequencyGrid, tol: f64 },
}

impl Default for NormMethod {
    fn default() -> Self {
        NormMethod::Bisection {
            grid: FrequencyGrid::default(),
            tol: 1e-6,
        }
    }
}

/// Operating point, channel selection and norm settings shared by all
/// objective evaluations.
#[derive(Debug, Clone)]
pub struct ObjectiveContext {
    pub refs: References,
    pub disturbance: Disturbance,
    pub params: PlantParams,
    pub d_p: f64,
    pub d_q: f64,
    pub channels: Vec<Channel>,
    pub norm: NormMethod,
}

impl ObjectiveContext {
    pub fn standard(
        refs: References,
        disturbance: Disturbance,
        params: PlantParams,
        d_p: f64,
        d_q: f64,
    ) -> Self {
        Self {
            refs,
            disturbance,
            params,
            d_p,
            d_q,
            channels: Channel::standard_set(),
            norm: NormMethod::default(),
        }
    }

    pub fn gains(&self, theta: &Theta) -> GainSet {
        GainSet::from_theta(theta, self.d_p, self.d_q)
    }
}

/// Base of the instability penalty `PENALTY_BASE + 1e6 * abscissa`.
pub const PENALTY_BASE: f64 = 1e9;
/// Penalty for gain vectors whose equilibrium or linearization fails.
pub const FAILURE_PENALTY: f64 = 1e12;

pub fn is_penalty(value: f64) -> bool {
    value.is_nan() || value >= PENALTY_BASE
}

/// Result of evaluating one gain set against the weighted channels.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub equilibrium: FullState,
    pub spectral_abscissa: f64,
    /// Per-channel norms; empty when the loop is unstable.
    pub channel_norms: Vec<f64>,
    /// Max of the channel norms, or the instability penalty.
    pub objective: f64,
}

impl Evaluation {
    pub fn stable(&self) -> bool {
        self.spectral_abscissa < 0.0
    }
}

pub fn channel_norm(
    sys: &crate::linear::LtiSystem,
    ch: &Channel,
    method: &NormMethod,
) -> Result<f64> {
    let ws = weighted_channel(sys, ch.output, ch.input, &ch.weight)?;
    match method {
        NormMethod::Grid(grid) => super::norm::hinf_norm_grid(&ws, grid),
        NormMethod::Bisection { grid, tol } => {
            let (peak, _) = grid_peak(&ws, grid)?;
            hinf_norm_bisection_from(&ws, *tol, peak)
        }
    }
}

/// Re-solves the equilibrium, linearizes and evaluates every channel.
pub fn evaluate(g: &GainSet, ctx: &ObjectiveContext) -> Result<Evaluation> {
    g.validate()?;
    let guess = flat_start(&ctx.refs, g, &ctx.params);
    let z = find_equilibrium(&ctx.refs, &ctx.disturbance, g, &ctx.params, &guess)?;
    let sys = linearize(&z, &ctx.refs, &ctx.disturbance, g, &ctx.params)?;
    let alpha = spectral_abscissa(&sys)?;
    if alpha >= 0.0 {
        return Ok(Evaluation {
            equilibrium: z,
            spectral_abscissa: alpha,
            channel_norms: Vec::new(),
            objective: PENALTY_BASE + 1e6 * alpha,
        });
    }
    let norms = ctx
        .channels
        .iter()
        .map(|ch| channel_norm(&sys, ch, &ctx.norm))
        .collect::<Result<Vec<_>>>()?;
    let objective = norms.iter().copied().fold(0.0, f64::max);
    Ok(Evaluation {
        equilibrium: z,
        spectral_abscissa: alpha,
        channel_norms: norms,
        objective,
    })
}

/// Total objective: failures are mapped to penalties so the search can back
/// away from them.
pub fn objective(theta: &Theta, ctx: &ObjectiveContext) -> f64 {
    match evaluate(&ctx.gains(theta), ctx) {
        Ok(e) if e.objective.is_finite() => e.objective,
        Ok(_) | Err(_) => FAILURE_PENALTY,
    }
}

pub(crate) fn require_feasible(value: f64) -> Result<()> {
    if is_penalty(value) {
        Err(Error::InfeasibleStart(format!(
            "initial objective {value:e} is a penalty value"
        )))
    } else {
        Ok(())
    }
}
