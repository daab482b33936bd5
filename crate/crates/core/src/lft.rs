//! Explicit linear-fractional form of the closed loop.
//!
//! Every tunable gain enters the controller as a product `k * s` with a
//! signal `s` of the loop. Pulling those products out gives an open
//! interconnection `P` with inputs `[w; u_K]` and outputs `[z; y_K]`, closed
//! by the static diagonal block `u_K = K y_K`. [`crate::linear::linearize`]
//! builds the same closed loop directly; this form is kept as a cross-check.
//!
//! The physical operating point does not depend on the gains, so one `P`
//! serves every gain vector with the same references and droop constants.

use nalgebra::DMatrix;

use crate::cascade::CascadeState;
use crate::closedloop::{Disturbance, FullState, GainSet, N_STATES};
use crate::error::{Error, Result};
use crate::gfm::{gfm_error, GfmState, References};
use crate::linear::{linearize_map, LtiSystem, FD_STEP};
use crate::plant::{plant_deriv, plant_outputs, ControlInput, PlantParams};

/// Gain occurrences in `K`, with the signal each one multiplies.
pub const OCCURRENCES: [(&str, &str); 23] = [
    ("k_pv", "e_u - v_d"),
    ("k_pv", "-v_q"),
    ("k_iv", "xi_vd"),
    ("k_iv", "xi_vq"),
    ("k_ffi", "i_od"),
    ("k_ffi", "i_oq"),
    ("k_pi", "i_dref - i_d"),
    ("k_pi", "i_qref - i_q"),
    ("k_ii", "xi_id"),
    ("k_ii", "xi_iq"),
    ("k_ffv", "v_d"),
    ("k_ffv", "v_q"),
    ("k_pdc", "e_1"),
    ("k_idc", "xi_dc"),
    ("k_12", "e_2"),
    ("k_14", "e_4"),
    ("k_15", "e_5"),
    ("k_21", "e_1"),
    ("k_24", "e_4 + e_5 / D_q"),
    ("k_31", "e_1"),
    ("k_32", "e_2"),
    ("k_22", "D_p e_2 - xi_lp"),
    ("k_34", "e_4 + e_5 / D_q"),
];

const N_K: usize = OCCURRENCES.len();

/// Open interconnection and the gain block that closes it.
#[derive(Debug, Clone)]
pub struct Interconnection {
    /// Inputs `[w (2); u_K (23)]`, outputs `[z (2); y_K (23)]`.
    pub open: LtiSystem,
    pub k: DMatrix<f64>,
}

/// Diagonal `K` for a gain set.
pub fn gain_block(g: &GainSet) -> DMatrix<f64> {
    let diag: Vec<f64> = OCCURRENCES
        .iter()
        .map(|(name, _)| g.get(name).expect("occurrence names are gain names"))
        .collect();
    DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag))
}

struct Eval {
    deriv: [f64; N_STATES],
    z: [f64; 2],
    y: [f64; N_K],
}

/// The loop with the gain products replaced by the free inputs `u`.
fn open_loop(
    z: &[f64],
    w: &[f64],
    u: &[f64],
    refs: &References,
    d: &Disturbance,
    g: &GainSet,
    params: &PlantParams,
) -> Result<Eval> {
    let (d_p, d_q) = (g.gfm.d_p, g.gfm.d_q);
    let mut arr = [0.0; N_STATES];
    arr.copy_from_slice(z);
    let full = FullState(arr);
    let (x, xs, xg) = (full.plant(), full.cascade(), full.gfm());
    let refs = References {
        p_ref: w[0],
        ..*refs
    };
    let params = PlantParams {
        omega_g: w[1],
        v_g: d.v_g,
        ..*params
    };

    let input = ControlInput {
        i_u: refs.i_0() + u[12] + u[13] + u[14] + u[15] + u[16],
        omega_u: refs.omega_0 + u[17] + xg.xi_lp + u[18],
        e_u: refs.e_0 + u[19] + u[20] + xg.xi_qv,
    };
    let i_dref = u[0] + u[2] - params.c_f * x.v_q + u[4];
    let i_qref = u[1] + u[3] + params.c_f * x.v_d + u[5];
    let e_dref = u[6] + u[8] - params.l_f * x.i_q + u[10];
    let e_qref = u[7] + u[9] + params.l_f * x.i_d + u[11];

    let dx = plant_deriv(&x, (e_dref, e_qref), &input, &params)?;
    let out = plant_outputs(&x, &input);
    let e = gfm_error(&out, &refs);
    let dxs = CascadeState {
        xi_vd: input.e_u - x.v_d,
        xi_vq: -x.v_q,
        xi_id: i_dref - x.i_d,
        xi_iq: i_qref - x.i_q,
    };
    let dxg = GfmState {
        xi_dc: e[0],
        xi_lp: u[21],
        xi_qv: u[22],
    };
    let qv = e[3] + e[4] / d_q;
    let y = [
        input.e_u - x.v_d,
        -x.v_q,
        xs.xi_vd,
        xs.xi_vq,
        x.i_od,
        x.i_oq,
        i_dref - x.i_d,
        i_qref - x.i_q,
        xs.xi_id,
        xs.xi_iq,
        x.v_d,
        x.v_q,
        e[0],
        xg.xi_dc,
        e[1],
        e[3],
        e[4],
        e[0],
        qv,
        e[0],
        e[1],
        d_p * e[1] - xg.xi_lp,
        qv,
    ];
    Ok(Eval {
        deriv: FullState::compose(&dx, &dxs, &dxg).0,
        z: [w[0] - w[1] / d_p - out.p, out.p],
        y,
    })
}

/// Linearizes the open interconnection at the closed-loop equilibrium `z_eq`
/// of gain set `g`.
pub fn open_interconnection(
    z_eq: &FullState,
    refs: &References,
    d: &Disturbance,
    g: &GainSet,
    params: &PlantParams,
) -> Result<Interconnection> {
    let k = gain_block(g);
    let w0 = [refs.p_ref, d.omega_g];
    let f = |z: &[f64], w: &[f64], u: &[f64]| open_loop(z, w, u, refs, d, g, params);

    // The gain loop is strictly triangular, so a few passes settle u_K = K y_K.
    let mut u0 = [0.0; N_K];
    for _ in 0..N_K {
        let y = f(&z_eq.0, &w0, &u0)?.y;
        let next: Vec<f64> = (0..N_K).map(|i| k[(i, i)] * y[i]).collect();
        let done = next.iter().zip(&u0).all(|(a, b)| a == b);
        u0.copy_from_slice(&next);
        if done {
            break;
        }
    }

    let inputs: Vec<f64> = w0.iter().chain(&u0).copied().collect();
    let stacked = |z: &[f64], v: &[f64]| -> Result<Vec<f64>> {
        let e = f(z, &v[..2], &v[2..])?;
        Ok(e.deriv.iter().chain(&e.z).chain(&e.y).copied().collect())
    };
    let (jx, jv) = linearize_map(stacked, &z_eq.0, &inputs, FD_STEP)?;
    let n = N_STATES;
    let rows = 2 + N_K;
    let open = LtiSystem::new(
        jx.rows(0, n).into_owned(),
        jv.rows(0, n).into_owned(),
        jx.rows(n, rows).into_owned(),
        jv.rows(n, rows).into_owned(),
    )?;
    Ok(Interconnection { open, k })
}

/// Lower fractional transformation `F_l(P, K)` with `n_w` exogenous inputs
/// and `n_z` performance outputs.
pub fn close(p: &LtiSystem, k: &DMatrix<f64>, n_w: usize, n_z: usize) -> Result<LtiSystem> {
    let n_u = p.inputs() - n_w;
    let n_y = p.outputs() - n_z;
    if k.shape() != (n_u, n_y) {
        return Err(Error::Domain(format!(
            "gain block is {}x{}, interconnection needs {n_u}x{n_y}",
            k.nrows(),
            k.ncols()
        )));
    }
    let (b_w, b_u) = (p.b.columns(0, n_w), p.b.columns(n_w, n_u));
    let (c_z, c_y) = (p.c.rows(0, n_z), p.c.rows(n_z, n_y));
    let d_zw = p.d.view((0, 0), (n_z, n_w));
    let d_zu = p.d.view((0, n_w), (n_z, n_u));
    let d_yw = p.d.view((n_z, 0), (n_y, n_w));
    let d_yu = p.d.view((n_z, n_w), (n_y, n_u));

    let loop_matrix = DMatrix::identity(n_u, n_u) - k * d_yu;
    let m = loop_matrix
        .lu()
        .solve(k)
        .ok_or_else(|| Error::Domain("ill-posed interconnection: I - K D_yu is singular".into()))?;
    let a = &p.a + b_u * &m * c_y;
    let b = b_w + b_u * &m * d_yw;
    let c = c_z + d_zu * &m * c_y;
    let d = d_zw + d_zu * &m * d_yw;
    LtiSystem::new(a, b, c, d)
}
