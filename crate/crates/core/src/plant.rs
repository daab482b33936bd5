//! Averaged dq-frame model of the converter power stage.
//!
//! The frame rotates at the converter-assigned frequency `omega_u`. All
//! electrical quantities are per-unit; time derivatives are per second, with
//! the `omega_b` factors carrying the time scaling. The converter voltage
//! follows its reference through a first-order lag of `1.5 * T_sw` that stands
//! in for PWM and sampling delay.

use crate::error::{ensure_finite, Error, Result};

/// Per-unit electrical parameters of filter, line, DC link and modulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantParams {
    /// Filter inductance (p.u.).
    pub l_f: f64,
    /// Filter capacitance (p.u.).
    pub c_f: f64,
    /// Line inductance (p.u.).
    pub l_g: f64,
    /// Line resistance (p.u.).
    pub r_g: f64,
    /// DC-link capacitance (p.u. on the DC base).
    pub c_dc: f64,
    /// Switching period (s).
    pub t_sw: f64,
    /// Base angular frequency (rad/s).
    pub omega_b: f64,
    /// Grid voltage magnitude (p.u.).
    pub v_g: f64,
    /// Grid frequency (p.u.).
    pub omega_g: f64,
}

/// Line resistance used when none is configured.
pub const DEFAULT_R_G_PU: f64 = 0.01;

impl PlantParams {
    /// The experimental setup of the reference design, per-unitized.
    pub fn nominal() -> Self {
        params_from_si(&SiParams::nominal(), &Bases::nominal()).expect("table-1 bases are positive")
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(
            "plant parameters",
            &[
                self.l_f,
                self.c_f,
                self.l_g,
                self.r_g,
                self.c_dc,
                self.t_sw,
                self.omega_b,
                self.v_g,
                self.omega_g,
            ],
        )?;
        let positive = [
            ("L_f", self.l_f),
            ("C_f", self.c_f),
            ("L_g", self.l_g),
            ("C_dc", self.c_dc),
            ("T_sw", self.t_sw),
            ("omega_b", self.omega_b),
            ("V_g", self.v_g),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.r_g < 0.0 {
            return Err(Error::Domain(format!(
                "R_g must be non-negative, got {}",
                self.r_g
            )));
        }
        Ok(())
    }

    /// Time constant of the PWM/sampling delay (s).
    pub fn delay_time_constant(&self) -> f64 {
        1.5 * self.t_sw
    }
}

/// Power-stage states in fixed order
/// `[e_d, e_q, i_d, i_q, v_d, v_q, i_od, i_oq, v_dc, delta]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    pub e_d: f64,
    pub e_q: f64,
    pub i_d: f64,
    pub i_q: f64,
    pub v_d: f64,
    pub v_q: f64,
    pub i_od: f64,
    pub i_oq: f64,
    pub v_dc: f64,
    pub delta: f64,
}

impl PlantState {
    pub const LEN: usize = 10;
    pub const NAMES: [&'static str; Self::LEN] = [
        "e_d", "e_q", "i_d", "i_q", "v_d", "v_q", "i_od", "i_oq", "v_dc", "delta",
    ];

    pub fn to_array(&self) -> [f64; Self::LEN] {
        [
            self.e_d, self.e_q, self.i_d, self.i_q, self.v_d, self.v_q, self.i_od, self.i_oq,
            self.v_dc, self.delta,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert!(
            v.len() >= Self::LEN,
            "plant state needs {} entries",
            Self::LEN
        );
        Self {
            e_d: v[0],
            e_q: v[1],
            i_d: v[2],
            i_q: v[3],
            v_d: v[4],
            v_q: v[5],
            i_od: v[6],
            i_oq: v[7],
            v_dc: v[8],
            delta: v[9],
        }
    }
}

/// The three inputs a grid-forming controller hands to the cascade and DC source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    /// DC-source current command (p.u.).
    pub i_u: f64,
    /// Frequency command (p.u.).
    pub omega_u: f64,
    /// Voltage-magnitude reference (p.u.).
    pub e_u: f64,
}

/// The five measured outputs `y = [v_dc, p, omega_u, q, V]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantOutputs {
    pub v_dc: f64,
    pub p: f64,
    pub omega_u: f64,
    pub q: f64,
    pub v: f64,
}

impl PlantOutputs {
    pub const NAMES: [&'static str; 5] = ["v_dc", "p", "omega_u", "q", "V"];

    pub fn to_array(&self) -> [f64; 5] {
        [self.v_dc, self.p, self.omega_u, self.q, self.v]
    }
}

/// Right-hand side of the power-stage dynamics.
///
/// `e_ref` is the pair `(e_dref, e_qref)` produced by the cascade.
pub fn plant_deriv(
    x: &PlantState,
    e_ref: (f64, f64),
    u: &ControlInput,
    params: &PlantParams,
) -> Result<PlantState> {
    ensure_finite("plant state", &x.to_array())?;
    ensure_finite(
        "control input",
        &[u.i_u, u.omega_u, u.e_u, e_ref.0, e_ref.1],
    )?;
    if x.v_dc <= 0.0 {
        return Err(Error::DcLinkCollapse(x.v_dc));
    }
    let p = params;
    let wb = p.omega_b;
    let wu = u.omega_u;
    let tau = p.delay_time_constant();
    let (sin_d, cos_d) = x.delta.sin_cos();

    Ok(PlantState {
        e_d: (e_ref.0 - x.e_d) / tau,
        e_q: (e_ref.1 - x.e_q) / tau,
        i_d: wb / p.l_f * (x.e_d - x.v_d) + wb * wu * x.i_q,
        i_q: wb / p.l_f * (x.e_q - x.v_q) - wb * wu * x.i_d,
        v_d: wb / p.c_f * (x.i_d - x.i_od) + wb * wu * x.v_q,
        v_q: wb / p.c_f * (x.i_q - x.i_oq) - wb * wu * x.v_d,
        i_od: wb / p.l_g * (x.v_d - p.v_g * cos_d) - wb * p.r_g / p.l_g * x.i_od + wb * wu * x.i_oq,
        i_oq: wb / p.l_g * (x.v_q + p.v_g * sin_d) - wb * p.r_g / p.l_g * x.i_oq - wb * wu * x.i_od,
        v_dc: wb / p.c_dc * u.i_u - wb * (x.e_d * x.i_d + x.e_q * x.i_q) / (p.c_dc * x.v_dc),
        delta: wb * (wu - p.omega_g),
    })
}

/// Active/reactive power, terminal voltage magnitude and the pass-through
/// channels.
pub fn plant_outputs(x: &PlantState, u: &ControlInput) -> PlantOutputs {
    PlantOutputs {
        v_dc: x.v_dc,
        p: x.v_d * x.i_od + x.v_q * x.i_oq,
        omega_u: u.omega_u,
        q: -x.v_d * x.i_oq + x.v_q * x.i_od,
        v: voltage_squared(x).sqrt(),
    }
}

pub(crate) fn voltage_squared(x: &PlantState) -> f64 {
    x.v_d * x.v_d + x.v_q * x.v_q
}

/// Physical parameters in SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiParams {
    /// Filter inductance (H).
    pub l_f: f64,
    /// Filter capacitance (F).
    pub c_f: f64,
    /// Line inductance (H).
    pub l_g: f64,
    /// Line resistance (ohm); `None` selects [`DEFAULT_R_G_PU`].
    pub r_g: Option<f64>,
    /// DC-link capacitance (F).
    pub c_dc: f64,
    /// Switching frequency (Hz).
    pub f_sw: f64,
    /// Line-to-line RMS grid voltage (V).
    pub v_g: f64,
    /// Grid frequency (rad/s).
    pub omega_g: f64,
}

impl SiParams {
    pub fn nominal() -> Self {
        Self {
            l_f: 3e-3,
            c_f: 5e-6,
            l_g: 8e-3,
            r_g: None,
            c_dc: 500e-6,
            f_sw: 10e3,
            v_g: 380.0,
            omega_g: 100.0 * std::f64::consts::PI,
        }
    }
}

/// Per-unit bases. The DC side uses `s_n` as power base and `v_dc` as
/// voltage base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bases {
    /// Nominal power (VA).
    pub s_n: f64,
    /// Nominal line-to-line RMS voltage (V).
    pub v_n: f64,
    /// Nominal angular frequency (rad/s).
    pub omega_n: f64,
    /// DC voltage base (V).
    pub v_dc: f64,
}

impl Bases {
    pub fn nominal() -> Self {
        Self {
            s_n: 5e3,
            v_n: 380.0,
            omega_n: 100.0 * std::f64::consts::PI,
            v_dc: 700.0,
        }
    }

    pub fn impedance(&self) -> f64 {
        self.v_n * self.v_n / self.s_n
    }
}

/// Converts an SI parameter record to per-unit.
pub fn params_from_si(si: &SiParams, bases: &Bases) -> Result<PlantParams> {
    for (name, v) in [
        ("S_n", bases.s_n),
        ("V_n", bases.v_n),
        ("omega_n", bases.omega_n),
        ("V_dc base", bases.v_dc),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!(
                "base {name} must be positive, got {v}"
            )));
        }
    }
    let z_b = bases.impedance();
    let l_b = z_b / bases.omega_n;
    let c_b = 1.0 / (z_b * bases.omega_n);
    let params = PlantParams {
        l_f: si.l_f / l_b,
        c_f: si.c_f / c_b,
        l_g: si.l_g / l_b,
        r_g: si.r_g.map_or(DEFAULT_R_G_PU, |r| r / z_b),
        c_dc: bases.omega_n * si.c_dc * bases.v_dc * bases.v_dc / bases.s_n,
        t_sw: 1.0 / si.f_sw,
        omega_b: bases.omega_n,
        v_g: si.v_g / bases.v_n,
        omega_g: si.omega_g / bases.omega_n,
    };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn test_state() -> PlantState {
        PlantState {
            e_d: 1.0,
            e_q: 0.0,
            i_d: 0.5,
            i_q: 0.05,
            v_d: 0.98,
            v_q: -0.02,
            i_od: 0.49,
            i_oq: 0.01,
            v_dc: 1.01,
            delta: 0.04,
        }
    }

    #[test]
    fn per_unit_conversion_matches_table() {
        let p = PlantParams::nominal();
        assert_relative_eq!(p.l_f, 0.0326, max_relative = 5e-3);
        assert_relative_eq!(p.c_f, 0.0454, max_relative = 5e-3);
        assert_relative_eq!(p.l_g, 0.087, max_relative = 5e-3);
        assert_eq!(p.t_sw, 1e-4);
        assert_eq!(p.v_g, 1.0);
        assert_eq!(p.omega_g, 1.0);
        // omega_n * C_dc * V_dc^2 / S_n
        assert_relative_eq!(
            p.c_dc,
            100.0 * std::f64::consts::PI * 500e-6 * 490_000.0 / 5e3
        );
    }

    #[test]
    fn rejects_bad_bases() {
        let mut b = Bases::nominal();
        b.s_n = 0.0;
        assert!(matches!(
            params_from_si(&SiParams::nominal(), &b),
            Err(Error::Domain(_))
        ));
        b = Bases::nominal();
        b.v_dc = -1.0;
        assert!(params_from_si(&SiParams::nominal(), &b).is_err());
    }

    #[test]
    fn synchronized_zero_power_is_stationary() {
        let params = PlantParams::nominal();
        let x = PlantState {
            v_dc: 1.0,
            ..Default::default()
        };
        let u = ControlInput {
            i_u: 0.0,
            omega_u: params.omega_g,
            e_u: 0.0,
        };
        let dx = plant_deriv(&x, (0.0, 0.0), &u, &params).unwrap();
        assert_eq!(dx.delta, 0.0);
        assert_eq!(dx.v_dc, 0.0);
    }

    #[test]
    fn derivative_matches_hand_evaluation() {
        // Each right-hand side written out independently, in the same units.
        let params = PlantParams::nominal();
        let x = test_state();
        let u = ControlInput {
            i_u: 0.52,
            omega_u: 1.001,
            e_u: 1.0,
        };
        let e_ref = (1.02, -0.01);
        let dx = plant_deriv(&x, e_ref, &u, &params).unwrap();

        let (lf, cf, lg, rg, cdc, wb) = (
            params.l_f,
            params.c_f,
            params.l_g,
            params.r_g,
            params.c_dc,
            params.omega_b,
        );
        let t = 1.5e-4;
        let expect = [
            (1.02 - 1.0) / t,
            (-0.01 - 0.0) / t,
            wb / lf * 1.0 - wb / lf * 0.98 + wb * 1.001 * 0.05,
            wb / lf * 0.0 - wb / lf * (-0.02) - wb * 1.001 * 0.5,
            wb / cf * 0.5 - wb / cf * 0.49 + wb * 1.001 * (-0.02),
            wb / cf * 0.05 - wb / cf * 0.01 - wb * 1.001 * 0.98,
            wb / lg * 0.98 - wb / lg * 1.0 * 0.04f64.cos() - wb * rg / lg * 0.49
                + wb * 1.001 * 0.01,
            wb / lg * (-0.02) + wb / lg * 1.0 * 0.04f64.sin()
                - wb * rg / lg * 0.01
                - wb * 1.001 * 0.49,
            wb / cdc * 0.52 - wb * (1.0 * 0.5 + 0.0 * 0.05) / (cdc * 1.01),
            wb * 1.001 - wb * 1.0,
        ];
        for (got, want) in dx.to_array().iter().zip(expect) {
            assert_relative_eq!(*got, want, max_relative = 1e-12, epsilon = 1e-9);
        }
    }

    #[test]
    fn dc_collapse_is_a_domain_error() {
        let params = PlantParams::nominal();
        let mut x = test_state();
        x.v_dc = 0.0;
        let u = ControlInput {
            i_u: 0.0,
            omega_u: 1.0,
            e_u: 1.0,
        };
        assert!(matches!(
            plant_deriv(&x, (0.0, 0.0), &u, &params),
            Err(Error::DcLinkCollapse(_))
        ));
        x.v_dc = 1.0;
        x.i_d = f64::NAN;
        assert!(matches!(
            plant_deriv(&x, (0.0, 0.0), &u, &params),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn output_examples() {
        let u = ControlInput {
            i_u: 0.0,
            omega_u: 1.0,
            e_u: 1.0,
        };
        let mut x = PlantState {
            v_d: 1.0,
            i_od: 0.5,
            v_dc: 1.0,
            ..Default::default()
        };
        let y = plant_outputs(&x, &u);
        assert_eq!((y.p, y.q, y.v), (0.5, 0.0, 1.0));

        x = PlantState {
            v_q: 1.0,
            i_oq: 1.0,
            v_dc: 1.0,
            ..Default::default()
        };
        let y = plant_outputs(&x, &u);
        assert_eq!((y.p, y.q, y.v), (1.0, 0.0, 1.0));

        x = PlantState {
            v_d: 0.8,
            v_q: 0.6,
            i_od: 0.3,
            i_oq: -0.4,
            v_dc: 1.0,
            ..Default::default()
        };
        let y = plant_outputs(&x, &u);
        assert_relative_eq!(y.p, 0.0, epsilon = 1e-15);
        assert_relative_eq!(y.q, 0.5, epsilon = 1e-15);
        assert_relative_eq!(y.v, 1.0, epsilon = 1e-15);
        assert_eq!(y.omega_u, 1.0);
    }

    #[test]
    fn steady_dc_link_balances_power() {
        let params = PlantParams::nominal();
        let x = test_state();
        // Choose i_u such that dv_dc/dt = 0.
        let i_u = (x.e_d * x.i_d + x.e_q * x.i_q) / x.v_dc;
        let u = ControlInput {
            i_u,
            omega_u: 1.0,
            e_u: 1.0,
        };
        let dx = plant_deriv(&x, (x.e_d, x.e_q), &u, &params).unwrap();
        assert!(dx.v_dc.abs() < 1e-12);
        assert_relative_eq!(
            i_u * x.v_dc,
            x.e_d * x.i_d + x.e_q * x.i_q,
            max_relative = 1e-14
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn powers_are_frame_invariant(
                vd in -2.0..2.0f64, vq in -2.0..2.0f64,
                id in -2.0..2.0f64, iq in -2.0..2.0f64,
                theta in -3.2..3.2f64,
            ) {
                let u = ControlInput { i_u: 0.0, omega_u: 1.0, e_u: 1.0 };
                let x = PlantState { v_d: vd, v_q: vq, i_od: id, i_oq: iq, v_dc: 1.0, ..Default::default() };
                let (s, c) = theta.sin_cos();
                let r = PlantState {
                    v_d: c * vd - s * vq, v_q: s * vd + c * vq,
                    i_od: c * id - s * iq, i_oq: s * id + c * iq,
                    v_dc: 1.0, ..Default::default()
                };
                let a = plant_outputs(&x, &u);
                let b = plant_outputs(&r, &u);
                prop_assert!((a.p - b.p).abs() < 1e-12);
                prop_assert!((a.q - b.q).abs() < 1e-12);
                prop_assert!((a.v - b.v).abs() < 1e-12);
                prop_assert_eq!(voltage_squared(&x), vd * vd + vq * vq);
            }
        }
    }
}
