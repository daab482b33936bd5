//! Plant, cascade and outer controller composed into one 17-state system.

use nalgebra::{DMatrix, DVector};

use crate::cascade::{
    cascade_commands, cascade_deriv, CascadeCommands, CascadeGains, CascadeState,
};
use crate::error::{Error, Result};
use crate::gfm::{gfm_deriv, gfm_error, gfm_output, GfmGains, GfmState, References};
use crate::plant::{
    plant_deriv, plant_outputs, ControlInput, PlantOutputs, PlantParams, PlantState,
};

pub const N_STATES: usize = PlantState::LEN + CascadeState::LEN + GfmState::LEN;

/// Closed-loop state: plant (10), cascade integrators (4), controller (3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullState(pub [f64; N_STATES]);

impl FullState {
    pub fn names() -> impl Iterator<Item = &'static str> {
        PlantState::NAMES
            .iter()
            .chain(CascadeState::NAMES.iter())
            .chain(GfmState::NAMES.iter())
            .copied()
    }

    pub fn compose(x: &PlantState, xs: &CascadeState, xg: &GfmState) -> Self {
        let mut v = [0.0; N_STATES];
        v[..10].copy_from_slice(&x.to_array());
        v[10..14].copy_from_slice(&xs.to_array());
        v[14..].copy_from_slice(&xg.to_array());
        Self(v)
    }

    pub fn plant(&self) -> PlantState {
        PlantState::from_slice(&self.0[..10])
    }

    pub fn cascade(&self) -> CascadeState {
        CascadeState::from_slice(&self.0[10..14])
    }

    pub fn gfm(&self) -> GfmState {
        GfmState::from_slice(&self.0[14..])
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Grid-side disturbance inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disturbance {
    pub omega_g: f64,
    pub v_g: f64,
}

impl Disturbance {
    pub fn nominal() -> Self {
        Self {
            omega_g: 1.0,
            v_g: 1.0,
        }
    }

    fn apply(&self, params: &PlantParams) -> PlantParams {
        PlantParams {
            omega_g: self.omega_g,
            v_g: self.v_g,
            ..*params
        }
    }
}

/// All tunable gains plus the droop constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSet {
    pub cascade: CascadeGains,
    pub gfm: GfmGains,
}

/// Flattened order of the tunable gains.
pub const THETA_NAMES: [&str; 17] = [
    "k_pi", "k_ii", "k_ffv", "k_pv", "k_iv", "k_ffi", "k_21", "k_22", "k_24", "k_31", "k_32",
    "k_34", "k_pdc", "k_idc", "k_12", "k_14", "k_15",
];

pub type Theta = [f64; 17];

impl GainSet {
    /// Classic VSG design with separately tuned loops.
    pub fn traditional() -> Self {
        Self {
            cascade: CascadeGains {
                k_pi: 0.3463,
                k_ii: 4.6168,
                k_ffv: 1.0,
                k_pv: 0.5982,
                k_iv: 1026.5,
                k_ffi: 0.0,
            },
            gfm: GfmGains {
                k_pdc: GfmGains::DEFAULT_K_PDC,
                k_idc: GfmGains::DEFAULT_K_IDC,
                k_12: 0.0,
                k_14: 0.0,
                k_15: 0.0,
                k_21: 0.0,
                k_22: 30.0,
                k_24: 0.0,
                k_31: 0.0,
                k_32: 0.0,
                k_34: 0.1,
                d_p: 0.01,
                d_q: 0.05,
            },
        }
    }

    /// Published jointly tuned design.
    pub fn hinf_tuned() -> Self {
        Self {
            cascade: CascadeGains {
                k_pi: 0.1371,
                k_ii: 16.7853,
                k_ffv: 0.1223,
                k_pv: 0.7738,
                k_iv: 1136.0,
                k_ffi: -0.1481,
            },
            gfm: GfmGains {
                k_21: -0.1956,
                k_22: 45.1987,
                k_24: -0.0458,
                k_31: -0.5115,
                k_32: 0.0167,
                k_34: 0.624,
                ..Self::traditional().gfm
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::error::ensure_finite("cascade gains", &self.to_theta())?;
        self.gfm.validate()
    }

    pub fn to_theta(&self) -> Theta {
        let c = &self.cascade;
        let g = &self.gfm;
        [
            c.k_pi, c.k_ii, c.k_ffv, c.k_pv, c.k_iv, c.k_ffi, g.k_21, g.k_22, g.k_24, g.k_31,
            g.k_32, g.k_34, g.k_pdc, g.k_idc, g.k_12, g.k_14, g.k_15,
        ]
    }

    pub fn from_theta(t: &Theta, d_p: f64, d_q: f64) -> Self {
        Self {
            cascade: CascadeGains {
                k_pi: t[0],
                k_ii: t[1],
                k_ffv: t[2],
                k_pv: t[3],
                k_iv: t[4],
                k_ffi: t[5],
            },
            gfm: GfmGains {
                k_21: t[6],
                k_22: t[7],
                k_24: t[8],
                k_31: t[9],
                k_32: t[10],
                k_34: t[11],
                k_pdc: t[12],
                k_idc: t[13],
                k_12: t[14],
                k_14: t[15],
                k_15: t[16],
                d_p,
                d_q,
            },
        }
    }

    /// Looks up a gain by its flattened name, including `D_p` and `D_q`.
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "D_p" => Some(self.gfm.d_p),
            "D_q" => Some(self.gfm.d_q),
            _ => THETA_NAMES
                .iter()
                .position(|n| *n == name)
                .map(|i| self.to_theta()[i]),
        }
    }

    pub fn set(&mut self, name: &str, value: f64) -> bool {
        match name {
            "D_p" => self.gfm.d_p = value,
            "D_q" => self.gfm.d_q = value,
            _ => match THETA_NAMES.iter().position(|n| *n == name) {
                Some(i) => {
                    let mut t = self.to_theta();
                    t[i] = value;
                    *self = Self::from_theta(&t, self.gfm.d_p, self.gfm.d_q);
                }
                None => return false,
            },
        }
        true
    }
}

/// Intermediate signals of one closed-loop evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Signals {
    pub outputs: PlantOutputs,
    pub error: [f64; 5],
    pub input: ControlInput,
    pub commands: CascadeCommands,
}

/// Evaluates the algebraic chain error -> controller output -> cascade
/// commands for a given state.
pub fn signals(
    z: &FullState,
    refs: &References,
    g: &GainSet,
    params: &PlantParams,
) -> Result<Signals> {
    let x = z.plant();
    // omega_u only depends on errors that do not involve omega_u itself.
    let probe = plant_outputs(
        &x,
        &ControlInput {
            i_u: 0.0,
            omega_u: refs.omega_g_ref,
            e_u: 0.0,
        },
    );
    let e0 = gfm_error(&probe, refs);
    let input = gfm_output(&z.gfm(), &e0, &g.gfm, refs)?;
    let outputs = plant_outputs(&x, &input);
    let error = gfm_error(&outputs, refs);
    let commands = cascade_commands(&z.cascade(), &x, input.e_u, &g.cascade, params);
    Ok(Signals {
        outputs,
        error,
        input,
        commands,
    })
}

pub fn closedloop_deriv(
    z: &FullState,
    refs: &References,
    d: &Disturbance,
    g: &GainSet,
    params: &PlantParams,
) -> Result<FullState> {
    let params = d.apply(params);
    let s = signals(z, refs, g, &params)?;
    let x = z.plant();
    let dx = plant_deriv(
        &x,
        (s.commands.e_dref, s.commands.e_qref),
        &s.input,
        &params,
    )?;
    let dxs = cascade_deriv(&x, s.input.e_u, &s.commands);
    let dxg = gfm_deriv(&z.gfm(), &s.error, &g.gfm)?;
    Ok(FullState::compose(&dx, &dxs, &dxg))
}

/// Deterministic initial guess: nominal voltage, zero angle, currents from
/// the power-flow estimate and integrators back-solved so the commands match.
pub fn flat_start(refs: &References, g: &GainSet, params: &PlantParams) -> FullState {
    let v_d = refs.v_ref;
    let i_od = refs.p_ref / refs.v_ref;
    let i_oq = -refs.q_ref / refs.v_ref;
    let i_d = i_od;
    let i_q = i_oq + params.c_f * v_d;
    let e_d = v_d - params.l_f * i_q;
    let e_q = params.l_f * i_d;
    let x = PlantState {
        e_d,
        e_q,
        i_d,
        i_q,
        v_d,
        v_q: 0.0,
        i_od,
        i_oq,
        v_dc: refs.v_dcref,
        delta: 0.0,
    };

    let div = |num: f64, k: f64| if k != 0.0 { num / k } else { 0.0 };
    let c = &g.cascade;
    let e_u = v_d;
    let xs = CascadeState {
        xi_vd: div(
            i_d - c.k_pv * (e_u - v_d) + params.c_f * x.v_q - c.k_ffi * i_od,
            c.k_iv,
        ),
        xi_vq: div(
            i_q + c.k_pv * x.v_q - params.c_f * v_d - c.k_ffi * i_oq,
            c.k_iv,
        ),
        xi_id: div(e_d + params.l_f * i_q - c.k_ffv * v_d, c.k_ii),
        xi_iq: div(e_q - params.l_f * i_d - c.k_ffv * x.v_q, c.k_ii),
    };
    let p_conv = e_d * i_d + e_q * i_q;
    let xg = GfmState {
        xi_dc: div(p_conv / refs.v_dcref - refs.i_0(), g.gfm.k_idc),
        xi_lp: 0.0,
        xi_qv: e_u - refs.e_0,
    };
    FullState::compose(&x, &xs, &xg)
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub fd_step: f64,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-10,
            fd_step: 1e-7,
            max_halvings: 20,
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Central-difference Jacobian of `f` at `z`; step scaled by `max(1, |z_k|)`.
pub(crate) fn fd_jacobian<F>(f: F, z: &[f64], rows: usize, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = z.len();
    let mut jac = DMatrix::zeros(rows, n);
    let mut probe = z.to_vec();
    for k in 0..n {
        let h = step * z[k].abs().max(1.0);
        probe[k] = z[k] + h;
        let fp = f(&probe)?;
        probe[k] = z[k] - h;
        let fm = f(&probe)?;
        probe[k] = z[k];
        for r in 0..rows {
            jac[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    Ok(jac)
}

pub fn find_equilibrium(
    refs: &References,
    d: &Disturbance,
    g: &GainSet,
    params: &PlantParams,
    initial_guess: &FullState,
) -> Result<FullState> {
    find_equilibrium_with(refs, d, g, params, initial_guess, &NewtonOptions::default())
}

/// Damped Newton iteration on `closedloop_deriv = 0`.
pub fn find_equilibrium_with(
    refs: &References,
    d: &Disturbance,
    g: &GainSet,
    params: &PlantParams,
    initial_guess: &FullState,
    opts: &NewtonOptions,
) -> Result<FullState> {
    if initial_guess.plant().v_dc <= 0.0 {
        return Err(Error::DcLinkCollapse(initial_guess.plant().v_dc));
    }
    let f = |v: &[f64]| -> Result<Vec<f64>> {
        let mut a = [0.0; N_STATES];
        a.copy_from_slice(v);
        Ok(closedloop_deriv(&FullState(a), refs, d, g, params)?
            .0
            .to_vec())
    };

    let mut z = initial_guess.0.to_vec();
    let mut fz = f(&z)?;
    let mut res = inf_norm(&fz);
    for _ in 0..opts.max_iterations {
        if res < opts.tolerance {
            break;
        }
        let jac = fd_jacobian(f, &z, N_STATES, opts.fd_step)?;
        let rhs = -DVector::from_vec(fz.clone());
        let step = jac.lu().solve(&rhs).ok_or(Error::SingularJacobian)?;
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = z
                .iter()
                .zip(step.iter())
                .map(|(a, b)| a + alpha * b)
                .collect();
            if let Ok(ft) = f(&trial) {
                let r = inf_norm(&ft);
                if r < res {
                    accepted = Some((trial, ft, r));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((zt, ft, r)) => {
                z = zt;
                fz = ft;
                res = r;
            }
            // No decrease along the Newton direction: stalled at roundoff level.
            None => break,
        }
    }
    if res < opts.tolerance {
        let mut a = [0.0; N_STATES];
        a.copy_from_slice(&z);
        Ok(FullState(a))
    } else {
        Err(Error::NonConvergence {
            iterations: opts.max_iterations,
            residual: res,
        })
    }
}

/// Deviations from the steady-state identities implied by the controller
/// integrators. All entries vanish at a true equilibrium.
#[derive(Debug, Clone, Copy)]
pub struct SteadyStateCheck {
    /// `v_dc - V_dcref`
    pub dc_voltage: f64,
    /// `v_q`
    pub v_q: f64,
    /// `v_d - E_u`
    pub voltage_tracking: f64,
    /// `D_q (Q_ref - q) + (V_ref - V)`
    pub qv_droop: f64,
    /// `omega_u - omega_g`
    pub synchronism: f64,
    /// `p - (P_ref + (omega_0 - omega_g)/D_p)`
    pub pf_droop: f64,
}

impl SteadyStateCheck {
    pub fn max_abs(&self) -> f64 {
        inf_norm(&[
            self.dc_voltage,
            self.v_q,
            self.voltage_tracking,
            self.qv_droop,
            self.synchronism,
            self.pf_droop,
        ])
    }
}

pub fn steady_state_check(
    z: &FullState,
    refs: &References,
    d: &Disturbance,
    g: &GainSet,
    params: &PlantParams,
) -> Result<SteadyStateCheck> {
    let s = signals(z, refs, g, &d.apply(params))?;
    let x = z.plant();
    Ok(SteadyStateCheck {
        dc_voltage: x.v_dc - refs.v_dcref,
        v_q: x.v_q,
        voltage_tracking: x.v_d - s.input.e_u,
        qv_droop: g.gfm.d_q * (refs.q_ref - s.outputs.q) + (refs.v_ref - s.outputs.v),
        synchronism: s.input.omega_u - d.omega_g,
        pf_droop: s.outputs.p - expected_power(refs, d, g),
    })
}

/// Steady active power predicted by the P-f droop.
pub fn expected_power(refs: &References, d: &Disturbance, g: &GainSet) -> f64 {
    refs.p_ref + (refs.omega_0 - d.omega_g) / g.gfm.d_p
}
