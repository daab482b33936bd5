//! Linearization of the closed loop and basic LTI analysis.
//!
//! The channel system maps `w = [dP_ref, d_omega_g]` to
//! `z = [dP_ref - d_omega_g / D_p - dp, dp]`. It is the closed loop for a
//! fixed gain vector; [`crate::lft`] builds the same loop with the gains
//! pulled out into a static block.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::closedloop::{
    closedloop_deriv, fd_jacobian, signals, Disturbance, FullState, GainSet, N_STATES,
};
use crate::error::{Error, Result};
use crate::gfm::References;
use crate::plant::PlantParams;

/// Finite-difference step for linearization (p.u. scale).
pub const FD_STEP: f64 = 1e-7;

/// State-space model `(A, B, C, D)` with named channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
}

fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let (m, p) = (d.ncols(), d.nrows());
        Self::with_names(a, b, c, d, default_names("w", m), default_names("z", p))
    }

    pub fn with_names(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        input_names: Vec<String>,
        output_names: Vec<String>,
    ) -> Result<Self> {
        let n = a.nrows();
        let (p, m) = d.shape();
        let ok = a.ncols() == n
            && b.shape() == (n, m)
            && c.shape() == (p, n)
            && input_names.len() == m
            && output_names.len() == p;
        if !ok {
            return Err(Error::Domain(format!(
                "inconsistent dimensions: A {:?}, B {:?}, C {:?}, D {:?}",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        for (name, mat) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("{name} has non-finite entries")));
            }
        }
        Ok(Self {
            a,
            b,
            c,
            d,
            input_names,
            output_names,
        })
    }

    /// A memoryless system `y = D u`.
    pub fn static_gain(d: DMatrix<f64>) -> Self {
        let (p, m) = d.shape();
        Self::new(
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, m),
            DMatrix::zeros(p, 0),
            d,
        )
        .expect("consistent")
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.d.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.d.nrows()
    }

    /// Single-input single-output subsystem from input `j` to output `i`.
    pub fn channel(&self, i: usize, j: usize) -> Result<Self> {
        if i >= self.outputs() || j >= self.inputs() {
            return Err(Error::Domain(format!(
                "channel ({i},{j}) outside {}x{} system",
                self.outputs(),
                self.inputs()
            )));
        }
        Self::with_names(
            self.a.clone(),
            self.b.columns(j, 1).into_owned(),
            self.c.rows(i, 1).into_owned(),
            self.d.view((i, j), (1, 1)).into_owned(),
            vec![self.input_names[j].clone()],
            vec![self.output_names[i].clone()],
        )
    }

    /// Scales the output map by `alpha`.
    pub fn scale_outputs(&self, alpha: f64) -> Self {
        Self {
            c: &self.c * alpha,
            d: &self.d * alpha,
            ..self.clone()
        }
    }

    /// Writes the four matrices as labelled CSV blocks.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# inputs,{}", self.input_names.join(","));
        let _ = writeln!(out, "# outputs,{}", self.output_names.join(","));
        for (name, m) in [
            ("A", &self.a),
            ("B", &self.b),
            ("C", &self.c),
            ("D", &self.d),
        ] {
            let _ = writeln!(out, "{name},{},{}", m.nrows(), m.ncols());
            for r in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols())
                    .map(|k| format!("{:.17e}", m[(r, k)]))
                    .collect();
                let _ = writeln!(out, "{}", row.join(","));
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse(format!("LTI CSV: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
        let mut names = [Vec::new(), Vec::new()];
        while let Some(l) = lines.peek() {
            if let Some(rest) = l.strip_prefix("# inputs") {
                names[0] = rest.split(',').skip(1).map(str::to_string).collect();
            } else if let Some(rest) = l.strip_prefix("# outputs") {
                names[1] = rest.split(',').skip(1).map(str::to_string).collect();
            } else if !l.starts_with('#') {
                break;
            }
            lines.next();
        }
        let mut mats = Vec::new();
        for expected in ["A", "B", "C", "D"] {
            let header = lines.next().ok_or_else(|| bad("missing block"))?;
            let parts: Vec<&str> = header.split(',').collect();
            if parts.len() != 3 || parts[0] != expected {
                return Err(bad(&format!(
                    "expected header for {expected}, got '{header}'"
                )));
            }
            let rows: usize = parts[1].parse().map_err(|_| bad("row count"))?;
            let cols: usize = parts[2].parse().map_err(|_| bad("column count"))?;
            let mut m = DMatrix::zeros(rows, cols);
            for r in 0..rows {
                let line = lines.next().ok_or_else(|| bad("truncated block"))?;
                let vals: Vec<f64> = line
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("number"))?;
                if vals.len() != cols {
                    return Err(bad("row length"));
                }
                for (k, v) in vals.into_iter().enumerate() {
                    m[(r, k)] = v;
                }
            }
            mats.push(m);
        }
        let d = mats.pop().unwrap();
        let c = mats.pop().unwrap();
        let b = mats.pop().unwrap();
        let a = mats.pop().unwrap();
        let [inp, out] = names;
        let inp = if inp.len() == d.ncols() {
            inp
        } else {
            default_names("w", d.ncols())
        };
        let out = if out.len() == d.nrows() {
            out
        } else {
            default_names("z", d.nrows())
        };
        Self::with_names(a, b, c, d, inp, out)
    }
}

/// Central-difference Jacobians `(df/dx, df/du)` of a vector field.
pub fn linearize_map<F>(
    f: F,
    x: &[f64],
    u: &[f64],
    step: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)>
where
    F: Fn(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    let rows = f(x, u)?.len();
    let a = fd_jacobian(|xx| f(xx, u), x, rows, step)?;
    let b = fd_jacobian(|uu| f(x, uu), u, rows, step)?;
    Ok((a, b))
}

/// Closed-loop derivative with the two exogenous channels exposed.
fn deriv_with_inputs(
    z: &[f64],
    w: &[f64],
    refs: &References,
    d: &Disturbance,
    g: &GainSet,
    params: &PlantParams,
) -> Result<Vec<f64>> {
    let mut a = [0.0; N_STATES];
    a.copy_from_slice(z);
    let refs = References {
        p_ref: w[0],
        ..*refs
    };
    let d = Disturbance {
        omega_g: w[1],
        ..*d
    };
    Ok(closedloop_deriv(&FullState(a), &refs, &d, g, params)?
        .0
        .to_vec())
}

pub const CHANNEL_INPUTS: [&str; 2] = ["dP_ref", "domega_g"];
pub const CHANNEL_OUTPUTS: [&str; 2] = ["droop_tracking_error", "dp"];

/// Linearizes the closed loop at an equilibrium and assembles the
/// `w -> z` channel system (17 states, 2 inputs, 2 outputs).
pub fn linearize(
    z_eq: &FullState,
    refs: &References,
    d: &Disturbance,
    g: &GainSet,
    params: &PlantParams,
) -> Result<LtiSystem> {
    let w0 = [refs.p_ref, d.omega_g];
    let (a, b) = linearize_map(
        |z, w| deriv_with_inputs(z, w, refs, d, g, params),
        &z_eq.0,
        &w0,
        FD_STEP,
    )?;

    let power = |z: &[f64]| -> Result<Vec<f64>> {
        let mut arr = [0.0; N_STATES];
        arr.copy_from_slice(z);
        Ok(vec![signals(&FullState(arr), refs, g, params)?.outputs.p])
    };
    let c_p = fd_jacobian(power, &z_eq.0, 1, FD_STEP)?;
    let mut c = DMatrix::zeros(2, N_STATES);
    c.row_mut(0).copy_from(&(-&c_p));
    c.row_mut(1).copy_from(&c_p);
    let d_mat = DMatrix::from_row_slice(2, 2, &[1.0, -1.0 / g.gfm.d_p, 0.0, 0.0]);
    LtiSystem::with_names(
        a,
        b,
        c,
        d_mat,
        CHANNEL_INPUTS.iter().map(|s| s.to_string()).collect(),
        CHANNEL_OUTPUTS.iter().map(|s| s.to_string()).collect(),
    )
}

/// Eigenvalues of a square real matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("matrix has non-finite entries".into()));
    }
    let m = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
    let ev = m
        .eigenvalues()
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    Ok(ev.into_iter().map(|z| Complex64::new(z.re, z.im)).collect())
}

/// Largest real part among the eigenvalues of `A` (`-inf` for a static system).
pub fn spectral_abscissa(sys: &LtiSystem) -> Result<f64> {
    Ok(eigenvalues(&sys.a)?
        .iter()
        .fold(f64::NEG_INFINITY, |m, l| m.max(l.re)))
}

/// `C (j omega I - A)^-1 B + D`.
pub fn freq_response(sys: &LtiSystem, omega: f64) -> Result<DMatrix<Complex64>> {
    let n = sys.order();
    let dc = sys.d.map(|v| Complex64::new(v, 0.0));
    if n == 0 {
        return Ok(dc);
    }
    let mut m = sys.a.map(|v| Complex64::new(-v, 0.0));
    for k in 0..n {
        m[(k, k)] += Complex64::new(0.0, omega);
    }
    let rhs = sys.b.map(|v| Complex64::new(v, 0.0));
    let lu = m.lu();
    let x = lu.solve(&rhs).ok_or(Error::SingularResolvent(omega))?;
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::SingularResolvent(omega));
    }
    Ok(sys.c.map(|v| Complex64::new(v, 0.0)) * x + dc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedloop::{find_equilibrium, flat_start};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn operating_point(g: &GainSet) -> (FullState, References, Disturbance, PlantParams) {
        let refs = References::nominal();
        let d = Disturbance::nominal();
        let params = PlantParams::nominal();
        let z = find_equilibrium(&refs, &d, g, &params, &flat_start(&refs, g, &params)).unwrap();
        (z, refs, d, params)
    }

    #[test]
    fn linear_map_is_recovered_exactly() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.5, 0.0, -3.0, 1.0, 4.0, 0.0, -2.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -2.0, 3.0, 0.5, 0.25]);
        let f = |x: &[f64], u: &[f64]| -> Result<Vec<f64>> {
            let xv = DMatrix::from_column_slice(3, 1, x);
            let uv = DMatrix::from_column_slice(2, 1, u);
            Ok((&a * xv + &b * uv).as_slice().to_vec())
        };
        let (ae, be) = linearize_map(f, &[0.3, -0.2, 1.0], &[0.1, 0.4], 1e-3).unwrap();
        assert!((ae - &a).abs().max() < 1e-12);
        assert!((be - &b).abs().max() < 1e-12);
    }

    #[test]
    fn feedthrough_encodes_droop_reference() {
        let g = GainSet::hinf_tuned();
        let (z, refs, d, params) = operating_point(&g);
        let sys = linearize(&z, &refs, &d, &g, &params).unwrap();
        assert_eq!((sys.order(), sys.inputs(), sys.outputs()), (17, 2, 2));
        assert_eq!(sys.d[(0, 0)], 1.0);
        assert_relative_eq!(sys.d[(0, 1)], -100.0, max_relative = 1e-12);
        assert_eq!(sys.d.row(1).sum(), 0.0);
    }

    #[test]
    fn linearization_residual_is_second_order() {
        let g = GainSet::hinf_tuned();
        let (z, refs, d, params) = operating_point(&g);
        let sys = linearize(&z, &refs, &d, &g, &params).unwrap();
        let f0 = closedloop_deriv(&z, &refs, &d, &g, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut dirs: Vec<Vec<f64>> = (0..N_STATES)
            .map(|k| {
                (0..N_STATES)
                    .map(|i| if i == k { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        for _ in 0..10 {
            dirs.push((0..N_STATES).map(|_| rng.gen_range(-1.0..1.0)).collect());
        }
        for v in dirs {
            let residual = |eps: f64| {
                let mut zp = z;
                for (zi, vi) in zp.0.iter_mut().zip(v.iter()) {
                    *zi += eps * vi;
                }
                let fp = closedloop_deriv(&zp, &refs, &d, &g, &params).unwrap();
                let av = &sys.a * DMatrix::from_column_slice(N_STATES, 1, &v);
                (0..N_STATES)
                    .map(|i| (fp.0[i] - f0.0[i] - eps * av[i]).abs())
                    .fold(0.0, f64::max)
            };
            let r = [residual(1e-3), residual(1e-4), residual(1e-5)];
            // Purely linear directions give residuals at roundoff level.
            if r[0] < 1e-8 {
                continue;
            }
            let ratio1 = r[0] / r[1];
            let ratio2 = r[1] / r[2];
            assert!(ratio1 > 50.0 && ratio2 > 30.0, "residuals {r:?}");
        }
    }

    #[test]
    fn spectral_abscissa_examples() {
        let sys = |a: DMatrix<f64>| {
            LtiSystem::new(
                a,
                DMatrix::zeros(2, 1),
                DMatrix::zeros(1, 2),
                DMatrix::zeros(1, 1),
            )
            .unwrap()
        };
        assert_relative_eq!(
            spectral_abscissa(&sys(DMatrix::from_diagonal(&nalgebra::dvector![
                -1.0, -2.0
            ])))
            .unwrap(),
            -1.0,
            epsilon = 1e-14
        );
        let (a, w) = (0.7, 5.0);
        let rot = DMatrix::from_row_slice(2, 2, &[-a, w, -w, -a]);
        assert_relative_eq!(spectral_abscissa(&sys(rot)).unwrap(), -a, epsilon = 1e-12);
        let nan = DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, 1.0]);
        assert!(eigenvalues(&nan).is_err());
    }

    #[test]
    fn both_published_designs_are_stable() {
        for g in [GainSet::traditional(), GainSet::hinf_tuned()] {
            let (z, refs, d, params) = operating_point(&g);
            let sys = linearize(&z, &refs, &d, &g, &params).unwrap();
            assert!(spectral_abscissa(&sys).unwrap() < 0.0);
        }
    }

    #[test]
    fn freq_response_examples() {
        let stat = LtiSystem::static_gain(DMatrix::from_row_slice(1, 2, &[2.0, -1.0]));
        for w in [0.0, 1.0, 1e3] {
            let h = freq_response(&stat, w).unwrap();
            assert_eq!(h[(0, 0)], Complex64::new(2.0, 0.0));
        }
        let integ = LtiSystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let h = freq_response(&integ, 1.0).unwrap();
        assert_relative_eq!(h[(0, 0)].re, 0.0, epsilon = 1e-15);
        assert_relative_eq!(h[(0, 0)].im, -1.0, epsilon = 1e-15);
        assert!(matches!(
            freq_response(&integ, 0.0),
            Err(Error::SingularResolvent(_))
        ));
    }

    #[test]
    fn freq_response_matches_modal_sum() {
        // Oracle: diagonalize A = V diag(l) V^-1 and sum residues.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 5;
        let a = DMatrix::from_fn(n, n, |i, j| {
            rng.gen_range(-1.0..1.0) - if i == j { 3.0 } else { 0.0 }
        });
        let b = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        let c = DMatrix::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0));
        let d = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let sys = LtiSystem::new(a.clone(), b.clone(), c.clone(), d.clone()).unwrap();
        let ac = a.map(|v| Complex64::new(v, 0.0));
        let eig = eigenvalues(&a).unwrap();
        // Eigenvectors by inverse iteration on (A - l I).
        let mut vecs = DMatrix::<Complex64>::zeros(n, n);
        for (k, l) in eig.iter().enumerate() {
            let shift =
                &ac - DMatrix::<Complex64>::identity(n, n) * (*l + Complex64::new(1e-10, 0.0));
            let lu = shift.lu();
            let mut v = nalgebra::DVector::<Complex64>::from_element(n, Complex64::new(1.0, 0.3));
            for _ in 0..3 {
                v = lu.solve(&v).unwrap();
                let nrm = v.norm();
                v /= Complex64::new(nrm, 0.0);
            }
            vecs.set_column(k, &v);
        }
        let vinv = vecs.clone().try_inverse().unwrap();
        let cv = c.map(|v| Complex64::new(v, 0.0)) * &vecs;
        let wb = &vinv * b.map(|v| Complex64::new(v, 0.0));
        for w in [0.01, 0.5, 2.0, 30.0] {
            let s = Complex64::new(0.0, w);
            let h = freq_response(&sys, w).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let mut acc = Complex64::new(d[(i, j)], 0.0);
                    for k in 0..n {
                        acc += cv[(i, k)] * wb[(k, j)] / (s - eig[k]);
                    }
                    assert!((acc - h[(i, j)]).norm() < 1e-8 * (1.0 + acc.norm()));
                }
            }
            let hn = freq_response(&sys, -w).unwrap();
            assert!((hn - h.map(|v| v.conj())).iter().all(|v| v.norm() < 1e-12));
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = GainSet::traditional();
        let (z, refs, d, params) = operating_point(&g);
        let sys = linearize(&z, &refs, &d, &g, &params).unwrap();
        let back = LtiSystem::from_csv(&sys.to_csv()).unwrap();
        assert_eq!(back, sys);
        assert!(LtiSystem::from_csv("A,1,1\n1.0\n").is_err());
    }

    #[test]
    fn channel_selection_checks_bounds() {
        let sys = LtiSystem::static_gain(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(sys.channel(1, 0).unwrap().d[(0, 0)], 3.0);
        assert!(sys.channel(2, 0).is_err());
        assert!(LtiSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 1)
        )
        .is_err());
    }
}
