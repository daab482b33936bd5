//! Cascaded voltage and current PI loops with decoupling and feedforward.
//!
//! The decoupling terms use `C_f * v` and `L_f * i` without an `omega_u`
//! factor. There is no anti-windup; the loops are purely linear.

use crate::plant::{PlantParams, PlantState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeGains {
    pub k_pv: f64,
    pub k_iv: f64,
    pub k_pi: f64,
    pub k_ii: f64,
    /// Output-current feedforward into the current reference.
    pub k_ffi: f64,
    /// Capacitor-voltage feedforward into the converter voltage reference.
    pub k_ffv: f64,
}

/// Integrator states `[xi_vd, xi_vq, xi_id, xi_iq]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CascadeState {
    pub xi_vd: f64,
    pub xi_vq: f64,
    pub xi_id: f64,
    pub xi_iq: f64,
}

impl CascadeState {
    pub const LEN: usize = 4;
    pub const NAMES: [&'static str; Self::LEN] = ["xi_vd", "xi_vq", "xi_id", "xi_iq"];

    pub fn to_array(&self) -> [f64; Self::LEN] {
        [self.xi_vd, self.xi_vq, self.xi_id, self.xi_iq]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            xi_vd: v[0],
            xi_vq: v[1],
            xi_id: v[2],
            xi_iq: v[3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeCommands {
    pub e_dref: f64,
    pub e_qref: f64,
    pub i_dref: f64,
    pub i_qref: f64,
}

pub fn cascade_commands(
    xs: &CascadeState,
    x: &PlantState,
    e_u: f64,
    g: &CascadeGains,
    params: &PlantParams,
) -> CascadeCommands {
    let i_dref = g.k_pv * (e_u - x.v_d) + g.k_iv * xs.xi_vd - params.c_f * x.v_q + g.k_ffi * x.i_od;
    let i_qref = g.k_pv * (-x.v_q) + g.k_iv * xs.xi_vq + params.c_f * x.v_d + g.k_ffi * x.i_oq;
    let e_dref =
        g.k_pi * (i_dref - x.i_d) + g.k_ii * xs.xi_id - params.l_f * x.i_q + g.k_ffv * x.v_d;
    let e_qref =
        g.k_pi * (i_qref - x.i_q) + g.k_ii * xs.xi_iq + params.l_f * x.i_d + g.k_ffv * x.v_q;
    CascadeCommands {
        e_dref,
        e_qref,
        i_dref,
        i_qref,
    }
}

/// Integrator rates: the four PI error signals.
pub fn cascade_deriv(x: &PlantState, e_u: f64, cmd: &CascadeCommands) -> CascadeState {
    CascadeState {
        xi_vd: e_u - x.v_d,
        xi_vq: -x.v_q,
        xi_id: cmd.i_dref - x.i_d,
        xi_iq: cmd.i_qref - x.i_q,
    }
}
