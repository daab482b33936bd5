//! The multivariable grid-forming outer controller.
//!
//! `u = u_0 + Phi(s) e` with `e = Y_ref - y` and the 3x5 transfer matrix
//!
//! ```text
//!        | k_pdc + k_idc/s   k_12                  0   k_14       k_15          |
//! Phi =  | k_21              D_p k_22/(s + k_22)   0   k_24       k_24/D_q      |
//!        | k_31              k_32                  0   k_34/s     k_34/(D_q s)  |
//! ```
//!
//! realized with three states: the DC-error integrator, the low-pass filter
//! state (which holds the filtered `D_p e_2`), and one integrator shared by the
//! reactive-power and voltage channels. The third column is zero, so the
//! frequency error never enters and no PLL is needed.

use num_complex::Complex64;

use crate::error::{ensure_finite, Error, Result};
use crate::plant::{ControlInput, PlantOutputs};

/// Entries of `Phi` plus the droop coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfmGains {
    pub k_pdc: f64,
    pub k_idc: f64,
    pub k_12: f64,
    pub k_14: f64,
    pub k_15: f64,
    pub k_21: f64,
    /// Corner frequency of the inertia low-pass (rad/s).
    pub k_22: f64,
    pub k_24: f64,
    pub k_31: f64,
    pub k_32: f64,
    pub k_34: f64,
    /// P-f droop coefficient.
    pub d_p: f64,
    /// Q-V droop coefficient.
    pub d_q: f64,
}

impl GfmGains {
    /// DC-voltage PI gains used when a gain set does not specify them. The
    /// reference designs never list them; these make the DC loop settle well
    /// ahead of the power loops.
    pub const DEFAULT_K_PDC: f64 = 10.0;
    pub const DEFAULT_K_IDC: f64 = 400.0;

    pub fn validate(&self) -> Result<()> {
        ensure_finite(
            "GFM gains",
            &[
                self.k_pdc, self.k_idc, self.k_12, self.k_14, self.k_15, self.k_21, self.k_22,
                self.k_24, self.k_31, self.k_32, self.k_34, self.d_p, self.d_q,
            ],
        )?;
        if self.d_p <= 0.0 || self.d_q <= 0.0 {
            return Err(Error::Domain(format!(
                "droop coefficients must be positive (D_p = {}, D_q = {})",
                self.d_p, self.d_q
            )));
        }
        if self.k_22 <= 0.0 {
            return Err(Error::Domain(format!(
                "low-pass corner k_22 must be positive, got {}",
                self.k_22
            )));
        }
        Ok(())
    }

    fn inv_d_q(&self) -> Result<f64> {
        if self.d_q == 0.0 {
            Err(Error::Domain("D_q must be nonzero".into()))
        } else {
            Ok(1.0 / self.d_q)
        }
    }
}

/// Controller states `[xi_dc, xi_lp, xi_qv]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GfmState {
    pub xi_dc: f64,
    pub xi_lp: f64,
    pub xi_qv: f64,
}

impl GfmState {
    pub const LEN: usize = 3;
    pub const NAMES: [&'static str; Self::LEN] = ["xi_dc", "xi_lp", "xi_qv"];

    pub fn to_array(&self) -> [f64; Self::LEN] {
        [self.xi_dc, self.xi_lp, self.xi_qv]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            xi_dc: v[0],
            xi_lp: v[1],
            xi_qv: v[2],
        }
    }
}

/// Output references `Y_ref` and input set-points `u_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct References {
    pub v_dcref: f64,
    pub p_ref: f64,
    pub omega_g_ref: f64,
    pub q_ref: f64,
    pub v_ref: f64,
    /// DC current set-point; `None` makes it follow `p_ref`.
    pub i_0: Option<f64>,
    pub omega_0: f64,
    pub e_0: f64,
}

impl References {
    /// Operating point of the reference experiments.
    pub fn nominal() -> Self {
        Self {
            v_dcref: 1.0,
            p_ref: 0.5,
            omega_g_ref: 1.0,
            q_ref: 0.0,
            v_ref: 1.0,
            i_0: None,
            omega_0: 1.0,
            e_0: 1.0,
        }
    }

    pub fn i_0(&self) -> f64 {
        self.i_0.unwrap_or(self.p_ref)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(
            "references",
            &[
                self.v_dcref,
                self.p_ref,
                self.omega_g_ref,
                self.q_ref,
                self.v_ref,
                self.i_0(),
                self.omega_0,
                self.e_0,
            ],
        )?;
        if self.v_dcref <= 0.0 || self.v_ref <= 0.0 {
            return Err(Error::Domain("V_dcref and V_ref must be positive".into()));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.v_dcref,
            self.p_ref,
            self.omega_g_ref,
            self.q_ref,
            self.v_ref,
        ]
    }
}

/// `e = Y_ref - y`.
pub fn gfm_error(y: &PlantOutputs, refs: &References) -> [f64; 5] {
    [
        refs.v_dcref - y.v_dc,
        refs.p_ref - y.p,
        refs.omega_g_ref - y.omega_u,
        refs.q_ref - y.q,
        refs.v_ref - y.v,
    ]
}

pub fn gfm_output(
    xs: &GfmState,
    e: &[f64; 5],
    g: &GfmGains,
    refs: &References,
) -> Result<ControlInput> {
    let inv_dq = g.inv_d_q()?;
    Ok(ControlInput {
        i_u: refs.i_0()
            + g.k_pdc * e[0]
            + g.k_idc * xs.xi_dc
            + g.k_12 * e[1]
            + g.k_14 * e[3]
            + g.k_15 * e[4],
        omega_u: refs.omega_0 + g.k_21 * e[0] + xs.xi_lp + g.k_24 * e[3] + g.k_24 * inv_dq * e[4],
        e_u: refs.e_0 + g.k_31 * e[0] + g.k_32 * e[1] + xs.xi_qv,
    })
}

pub fn gfm_deriv(xs: &GfmState, e: &[f64; 5], g: &GfmGains) -> Result<GfmState> {
    let inv_dq = g.inv_d_q()?;
    Ok(GfmState {
        xi_dc: e[0],
        xi_lp: g.k_22 * (g.d_p * e[1] - xs.xi_lp),
        xi_qv: g.k_34 * e[3] + g.k_34 * inv_dq * e[4],
    })
}

/// Entrywise evaluation of `Phi(s)`.
pub fn phi_eval(g: &GfmGains, s: Complex64) -> Result<[[Complex64; 5]; 3]> {
    if s == Complex64::new(0.0, 0.0) {
        return Err(Error::Domain("Phi has integrator poles at s = 0".into()));
    }
    if s == Complex64::new(-g.k_22, 0.0) {
        return Err(Error::Domain(format!(
            "Phi has a pole at s = -k_22 = {}",
            -g.k_22
        )));
    }
    let inv_dq = g.inv_d_q()?;
    let c = |v: f64| Complex64::new(v, 0.0);
    let zero = c(0.0);
    Ok([
        [
            c(g.k_pdc) + g.k_idc / s,
            c(g.k_12),
            zero,
            c(g.k_14),
            c(g.k_15),
        ],
        [
            c(g.k_21),
            g.d_p * g.k_22 / (s + g.k_22),
            zero,
            c(g.k_24),
            c(g.k_24 * inv_dq),
        ],
        [c(g.k_31), c(g.k_32), zero, g.k_34 / s, g.k_34 * inv_dq / s],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    pub(crate) fn hinf_gains() -> GfmGains {
        GfmGains {
            k_pdc: GfmGains::DEFAULT_K_PDC,
            k_idc: GfmGains::DEFAULT_K_IDC,
            k_12: 0.0,
            k_14: 0.0,
            k_15: 0.0,
            k_21: -0.1956,
            k_22: 45.1987,
            k_24: -0.0458,
            k_31: -0.5115,
            k_32: 0.0167,
            k_34: 0.624,
            d_p: 0.01,
            d_q: 0.05,
        }
    }

    fn outputs(v: [f64; 5]) -> PlantOutputs {
        PlantOutputs {
            v_dc: v[0],
            p: v[1],
            omega_u: v[2],
            q: v[3],
            v: v[4],
        }
    }

    #[test]
    fn error_examples() {
        let refs = References::nominal();
        assert_eq!(gfm_error(&outputs(refs.to_array()), &refs), [0.0; 5]);
        let mut y = refs.to_array();
        y[0] = 0.99;
        let e = gfm_error(&outputs(y), &refs);
        assert_relative_eq!(e[0], 0.01, epsilon = 1e-15);
        assert_eq!(&e[1..], &[0.0; 4]);
    }

    #[test]
    fn set_point_pass_through() {
        let refs = References::nominal();
        let u = gfm_output(&GfmState::default(), &[0.0; 5], &hinf_gains(), &refs).unwrap();
        assert_eq!(
            (u.i_u, u.omega_u, u.e_u),
            (refs.p_ref, refs.omega_0, refs.e_0)
        );
    }

    #[test]
    fn dc_error_coupling_uses_table_gains() {
        let refs = References::nominal();
        let u = gfm_output(
            &GfmState::default(),
            &[1.0, 0.0, 0.0, 0.0, 0.0],
            &hinf_gains(),
            &refs,
        )
        .unwrap();
        assert_relative_eq!(u.omega_u - refs.omega_0, -0.1956, epsilon = 1e-15);
        assert_relative_eq!(u.e_u - refs.e_0, -0.5115, epsilon = 1e-15);
    }

    #[test]
    fn low_pass_rate_example() {
        let g = hinf_gains();
        let d = gfm_deriv(&GfmState::default(), &[0.0, 1.0, 0.0, 0.0, 0.0], &g).unwrap();
        assert_relative_eq!(d.xi_lp, 0.451987, epsilon = 1e-12);
    }

    #[test]
    fn autonomous_decay_without_error() {
        let g = hinf_gains();
        let xs = GfmState {
            xi_dc: 0.3,
            xi_lp: 0.002,
            xi_qv: -0.1,
        };
        let d = gfm_deriv(&xs, &[0.0; 5], &g).unwrap();
        assert_eq!(d.xi_dc, 0.0);
        assert_eq!(d.xi_qv, 0.0);
        assert_relative_eq!(d.xi_lp, -g.k_22 * 0.002);
    }

    #[test]
    fn steady_state_of_proportional_droop_path() {
        // With xi_lp settled to D_p e_2 the frequency offset equals D_p e_2.
        let g = hinf_gains();
        let refs = References::nominal();
        let e = [0.0, 0.3, 0.0, 0.0, 0.0];
        let xs = GfmState {
            xi_lp: g.d_p * e[1],
            ..Default::default()
        };
        assert_eq!(gfm_deriv(&xs, &e, &g).unwrap().xi_lp, 0.0);
        let u = gfm_output(&xs, &e, &g, &refs).unwrap();
        assert_relative_eq!(
            u.omega_u - refs.omega_0 - g.k_32 * 0.0,
            g.d_p * 0.3,
            epsilon = 1e-15
        );
    }

    #[test]
    fn zero_droop_is_rejected() {
        let g = GfmGains {
            d_q: 0.0,
            ..hinf_gains()
        };
        assert!(gfm_output(&GfmState::default(), &[0.0; 5], &g, &References::nominal()).is_err());
        assert!(gfm_deriv(&GfmState::default(), &[0.0; 5], &g).is_err());
        assert!(g.validate().is_err());
        assert!(GfmGains {
            k_22: 0.0,
            ..hinf_gains()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn phi_limits_and_structure() {
        let g = hinf_gains();
        let big = phi_eval(&g, Complex64::new(0.0, 1e12)).unwrap();
        assert_relative_eq!(big[0][0].re, g.k_pdc, epsilon = 1e-9);
        assert!(big[1][1].norm() < 1e-9);
        assert!(big[2][3].norm() < 1e-9);

        let corner = phi_eval(&g, Complex64::new(0.0, g.k_22)).unwrap();
        assert_relative_eq!(
            corner[1][1].norm(),
            g.d_p / 2f64.sqrt(),
            max_relative = 1e-12
        );

        for w in [1e-3, 0.1, 1.0, 100.0, 1e5] {
            let phi = phi_eval(&g, Complex64::new(0.0, w)).unwrap();
            for row in &phi {
                assert_eq!(row[2], Complex64::new(0.0, 0.0));
            }
        }
        assert!(phi_eval(&g, Complex64::new(0.0, 0.0)).is_err());
        assert!(phi_eval(&g, Complex64::new(-g.k_22, 0.0)).is_err());
    }

    #[test]
    fn realization_matches_phi() {
        // Build (A, B, C, D) from e to u by probing the affine realization and
        // compare against the printed transfer matrix.
        let g = GfmGains {
            k_12: 0.3,
            k_14: -0.2,
            k_15: 0.7,
            ..hinf_gains()
        };
        let refs = References {
            i_0: Some(0.0),
            omega_0: 0.0,
            e_0: 0.0,
            ..References::nominal()
        };
        let mut a = DMatrix::<f64>::zeros(3, 3);
        let mut b = DMatrix::<f64>::zeros(3, 5);
        let mut c = DMatrix::<f64>::zeros(3, 3);
        let mut d = DMatrix::<f64>::zeros(3, 5);
        let to_u = |u: ControlInput| [u.i_u, u.omega_u, u.e_u];
        for k in 0..3 {
            let mut xs = [0.0; 3];
            xs[k] = 1.0;
            let xs = GfmState::from_slice(&xs);
            a.set_column(
                k,
                &DVector::from_row_slice(&gfm_deriv(&xs, &[0.0; 5], &g).unwrap().to_array()),
            );
            c.set_column(
                k,
                &DVector::from_row_slice(&to_u(gfm_output(&xs, &[0.0; 5], &g, &refs).unwrap())),
            );
        }
        for k in 0..5 {
            let mut e = [0.0; 5];
            e[k] = 1.0;
            let z = GfmState::default();
            b.set_column(
                k,
                &DVector::from_row_slice(&gfm_deriv(&z, &e, &g).unwrap().to_array()),
            );
            d.set_column(
                k,
                &DVector::from_row_slice(&to_u(gfm_output(&z, &e, &g, &refs).unwrap())),
            );
        }
        let ac = a.map(|v| Complex64::new(v, 0.0));
        for w in [1e-3, 0.07, 1.0, 45.0, 900.0, 1e4] {
            let s = Complex64::new(0.0, w);
            let resolvent = (DMatrix::<Complex64>::identity(3, 3) * s - &ac)
                .try_inverse()
                .unwrap();
            let tf =
                c.map(|v| Complex64::new(v, 0.0)) * resolvent * b.map(|v| Complex64::new(v, 0.0))
                    + d.map(|v| Complex64::new(v, 0.0));
            let phi = phi_eval(&g, s).unwrap();
            for i in 0..3 {
                for j in 0..5 {
                    let err = (tf[(i, j)] - phi[i][j]).norm();
                    assert!(
                        err <= 1e-8 * phi[i][j].norm().max(1e-12),
                        "({i},{j}) at {w}: {err}"
                    );
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn frequency_error_never_enters(e3 in -10.0..10.0f64, other in proptest::array::uniform4(-1.0..1.0f64)) {
                let g = hinf_gains();
                let refs = References::nominal();
                let xs = GfmState { xi_dc: 0.1, xi_lp: -0.01, xi_qv: 0.02 };
                let a = [other[0], other[1], 0.0, other[2], other[3]];
                let b = [other[0], other[1], e3, other[2], other[3]];
                prop_assert_eq!(gfm_output(&xs, &a, &g, &refs).unwrap(), gfm_output(&xs, &b, &g, &refs).unwrap());
                prop_assert_eq!(gfm_deriv(&xs, &a, &g).unwrap(), gfm_deriv(&xs, &b, &g).unwrap());
            }
        }
    }
}
