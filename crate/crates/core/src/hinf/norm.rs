//! H-infinity norm of a stable LTI system, by two independent routes.
//!
//! The grid route samples the largest singular value on a log-spaced grid and
//! refines the best sample with golden-section search; it is a lower bound.
//! The bisection route tests levels `gamma` through the imaginary-axis
//! eigenvalues of the associated Hamiltonian matrix.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};
use crate::linear::{eigenvalues, freq_response, spectral_abscissa, LtiSystem};

/// Log-spaced frequency grid (rad/s). `omega = 0` is always evaluated too.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self {
            lo: 1e-4,
            hi: 1e6,
            points: 400,
        }
    }
}

impl FrequencyGrid {
    pub fn frequencies(&self) -> Vec<f64> {
        let (a, b) = (self.lo.log10(), self.hi.log10());
        let n = self.points.max(2);
        (0..n)
            .map(|k| 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64))
            .collect()
    }
}

/// Largest singular value of the frequency response at `omega`.
pub fn sigma_max(sys: &LtiSystem, omega: f64) -> Result<f64> {
    let h = freq_response(sys, omega)?;
    if h.nrows() == 1 && h.ncols() == 1 {
        return Ok(h[(0, 0)].norm());
    }
    if h.is_empty() {
        return Ok(0.0);
    }
    Ok(h.singular_values().iter().fold(0.0f64, |m, v| m.max(*v)))
}

fn require_stable(sys: &LtiSystem) -> Result<()> {
    let alpha = spectral_abscissa(sys)?;
    if alpha >= 0.0 {
        Err(Error::Unstable(alpha))
    } else {
        Ok(())
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

fn golden_max<F: Fn(f64) -> Result<f64>>(
    f: F,
    mut a: f64,
    mut b: f64,
    iters: usize,
) -> Result<f64> {
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    let mut best = f1.max(f2);
    for _ in 0..iters {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1)?;
        }
        best = best.max(f1).max(f2);
    }
    Ok(best)
}

/// Grid-sampled norm with golden-section refinement (a lower bound).
pub fn hinf_norm_grid(sys: &LtiSystem, grid: &FrequencyGrid) -> Result<f64> {
    require_stable(sys)?;
    grid_peak(sys, grid).map(|(v, _)| v)
}

/// Peak value and the frequency where it was found.
pub(crate) fn grid_peak(sys: &LtiSystem, grid: &FrequencyGrid) -> Result<(f64, f64)> {
    let freqs = grid.frequencies();
    let mut best = (sigma_max(sys, 0.0)?, 0.0);
    let mut best_idx = None;
    for (k, &w) in freqs.iter().enumerate() {
        let v = sigma_max(sys, w)?;
        if v > best.0 {
            best = (v, w);
            best_idx = Some(k);
        }
    }
    if let Some(k) = best_idx {
        let lo = freqs[k.saturating_sub(1)].ln();
        let hi = freqs[(k + 1).min(freqs.len() - 1)].ln();
        let refined = golden_max(|lw| sigma_max(sys, lw.exp()), lo, hi, 60)?;
        if refined > best.0 {
            best.0 = refined;
        }
    }
    Ok(best)
}

/// Evaluates whether `gamma` is below the norm. Returns a certified level
/// `sigma >= gamma` found at some frequency, or `None` if the Hamiltonian has
/// no imaginary-axis eigenvalues (so `gamma` is an upper bound).
fn level_exceeded(sys: &LtiSystem, gamma: f64) -> Result<Option<f64>> {
    let n = sys.order();
    let m = sys.inputs();
    let p = sys.outputs();
    let (a, b, c, d) = (&sys.a, &sys.b, &sys.c, &sys.d);
    let r = DMatrix::<f64>::identity(m, m) * (gamma * gamma) - d.transpose() * d;
    let Some(chol) = Cholesky::new(r) else {
        // gamma is at or below the high-frequency gain.
        let dn = if d.is_empty() {
            0.0
        } else {
            d.singular_values().max()
        };
        return Ok(Some(dn));
    };
    let r_inv = chol.inverse();
    let a_h = a + b * &r_inv * d.transpose() * c;
    let q = c.transpose() * (DMatrix::<f64>::identity(p, p) + d * &r_inv * d.transpose()) * c;
    let g = b * &r_inv * b.transpose();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&a_h);
    h.view_mut((0, n), (n, n)).copy_from(&g);
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a_h.transpose()));

    let mut cands: Vec<f64> = eigenvalues(&h)?
        .into_iter()
        .filter(|l| l.re.abs() <= 1e-6 * (1.0 + l.norm()))
        .map(|l| l.im.abs())
        .collect();
    cands.push(0.0);
    cands.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cands.dedup();
    let mut probes = cands.clone();
    for win in cands.windows(2) {
        probes.push(0.5 * (win[0] + win[1]));
    }
    let mut best: Option<f64> = None;
    for w in probes {
        let s = sigma_max(sys, w)?;
        if s >= gamma && best.is_none_or(|b| s > b) {
            best = Some(s);
        }
    }
    Ok(best)
}

/// Hamiltonian bisection to relative tolerance `tol`.
pub fn hinf_norm_bisection(sys: &LtiSystem, tol: f64) -> Result<f64> {
    hinf_norm_bisection_from(sys, tol, 0.0)
}

/// Bisection starting from a known lower bound (e.g. a grid peak).
pub fn hinf_norm_bisection_from(sys: &LtiSystem, tol: f64, lower_hint: f64) -> Result<f64> {
    require_stable(sys)?;
    let tol = tol.max(1e-14);
    let mut lb = lower_hint.max(sigma_max(sys, 0.0)?);
    if !sys.d.is_empty() {
        lb = lb.max(sys.d.singular_values().max());
    }
    for l in eigenvalues(&sys.a)? {
        lb = lb
            .max(sigma_max(sys, l.norm())?)
            .max(sigma_max(sys, l.im.abs())?);
    }
    if lb == 0.0 {
        // Zero at all probe points; check a unit level to decide.
        match level_exceeded(sys, 1e-300)? {
            None => return Ok(0.0),
            Some(s) => lb = s,
        }
    }

    // A tight probe first: good lower bounds finish here.
    let mut ub = lb * (1.0 + tol);
    let mut found_upper = false;
    match level_exceeded(sys, ub)? {
        None => found_upper = true,
        Some(s) => lb = lb.max(s),
    }
    let mut iters = 0;
    while !found_upper {
        ub = 2.0 * lb;
        match level_exceeded(sys, ub)? {
            None => found_upper = true,
            Some(s) => lb = lb.max(s),
        }
        iters += 1;
        if iters > 200 {
            return Err(Error::Bracket(format!("no upper bound found above {lb:e}")));
        }
    }

    iters = 0;
    while ub / lb > 1.0 + tol {
        let gamma = (lb * ub).sqrt();
        match level_exceeded(sys, gamma)? {
            Some(s) => lb = lb.max(s).min(ub),
            None => ub = gamma,
        }
        iters += 1;
        if iters > 500 {
            return Err(Error::Bracket(format!(
                "bisection stalled in [{lb:e}, {ub:e}]"
            )));
        }
    }
    Ok((lb * ub).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hinf::weight::Weight;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lowpass() -> LtiSystem {
        LtiSystem::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    fn resonance(zeta: f64, wn: f64) -> LtiSystem {
        LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -wn * wn, -2.0 * zeta * wn]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[wn * wn, 0.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn static_gain() {
        let sys = LtiSystem::static_gain(DMatrix::from_element(1, 1, 3.0));
        assert_eq!(
            hinf_norm_grid(&sys, &FrequencyGrid::default()).unwrap(),
            3.0
        );
        assert_relative_eq!(
            hinf_norm_bisection(&sys, 1e-9).unwrap(),
            3.0,
            max_relative = 1e-8
        );
    }

    #[test]
    fn first_order_lowpass() {
        assert_relative_eq!(
            hinf_norm_grid(&lowpass(), &FrequencyGrid::default()).unwrap(),
            1.0,
            epsilon = 1e-6
        );
        assert_relative_eq!(
            hinf_norm_bisection(&lowpass(), 1e-8).unwrap(),
            1.0,
            max_relative = 1e-8
        );
    }

    #[test]
    fn damped_resonance_peak() {
        let zeta: f64 = 0.1;
        let analytic = 1.0 / (2.0 * zeta * (1.0 - zeta * zeta).sqrt());
        let sys = resonance(zeta, 3.0);
        let grid = hinf_norm_grid(&sys, &FrequencyGrid::default()).unwrap();
        let bis = hinf_norm_bisection(&sys, 1e-9).unwrap();
        assert_relative_eq!(grid, analytic, max_relative = 1e-8);
        assert_relative_eq!(bis, analytic, max_relative = 1e-6);
        assert_relative_eq!(analytic, 5.0252, max_relative = 1e-4);
    }

    #[test]
    fn droop_weight_peaks_at_dc() {
        let w = Weight::w11().realize().unwrap();
        assert_relative_eq!(
            hinf_norm_bisection(&w, 1e-8).unwrap(),
            1e4,
            max_relative = 1e-6
        );
        assert_relative_eq!(
            hinf_norm_grid(&w, &FrequencyGrid::default()).unwrap(),
            1e4,
            max_relative = 1e-12
        );
    }

    #[test]
    fn unstable_systems_are_rejected() {
        let sys = LtiSystem::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        assert!(matches!(
            hinf_norm_grid(&sys, &FrequencyGrid::default()),
            Err(Error::Unstable(_))
        ));
        assert!(matches!(
            hinf_norm_bisection(&sys, 1e-6),
            Err(Error::Unstable(_))
        ));
    }

    pub(crate) fn random_stable(rng: &mut ChaCha8Rng) -> LtiSystem {
        let n = rng.gen_range(1..=10);
        let m = rng.gen_range(1..=3);
        let p = rng.gen_range(1..=3);
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0) * 3.0);
        let alpha = eigenvalues(&a)
            .unwrap()
            .iter()
            .fold(f64::NEG_INFINITY, |m, l| m.max(l.re));
        let margin = rng.gen_range(0.1..1.0);
        for k in 0..n {
            a[(k, k)] -= alpha + margin;
        }
        let b = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        let c = DMatrix::from_fn(p, n, |_, _| rng.gen_range(-1.0..1.0));
        let d = if rng.gen_bool(0.5) {
            DMatrix::from_fn(p, m, |_, _| rng.gen_range(-0.5..0.5))
        } else {
            DMatrix::zeros(p, m)
        };
        LtiSystem::new(a, b, c, d).unwrap()
    }

    #[test]
    fn routes_agree_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..25 {
            let sys = random_stable(&mut rng);
            let g = hinf_norm_grid(&sys, &FrequencyGrid::default()).unwrap();
            let b = hinf_norm_bisection(&sys, 1e-9).unwrap();
            assert!((g - b).abs() <= 0.01 * b, "grid {g} vs bisection {b}");
            // The grid is a lower bound.
            assert!(g <= b * (1.0 + 1e-8));
            let scaled = sys.scale_outputs(-2.5);
            assert_relative_eq!(
                hinf_norm_grid(&scaled, &FrequencyGrid::default()).unwrap(),
                2.5 * g,
                max_relative = 1e-8
            );
            assert_relative_eq!(
                hinf_norm_bisection(&scaled, 1e-10).unwrap(),
                2.5 * b,
                max_relative = 1e-8
            );
        }
    }
}
