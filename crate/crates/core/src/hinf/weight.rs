use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linear::LtiSystem;

/// Rational weighting function `N(s)/D(s)`, coefficients in ascending powers
/// of `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weight {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

fn trim(mut c: Vec<f64>) -> Vec<f64> {
    while c.len() > 1 && *c.last().unwrap() == 0.0 {
        c.pop();
    }
    c
}

impl Weight {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        let num = trim(num);
        let den = trim(den);
        if num.is_empty() || den.is_empty() || den.iter().all(|&v| v == 0.0) {
            return Err(Error::Domain(
                "weight denominator is identically zero".into(),
            ));
        }
        if num.iter().chain(&den).any(|v| !v.is_finite()) {
            return Err(Error::Domain("weight coefficients must be finite".into()));
        }
        let w = Self { num, den };
        if w.num.len() > w.den.len() {
            return Err(Error::ImproperWeight {
                num: w.num.len() - 1,
                den: w.den.len() - 1,
            });
        }
        Ok(w)
    }

    pub fn unity() -> Self {
        Self {
            num: vec![1.0],
            den: vec![1.0],
        }
    }

    /// Droop-tracking weight `(s + 8)/(s + 0.0008)`.
    pub fn w11() -> Self {
        Self {
            num: vec![8.0, 1.0],
            den: vec![0.0008, 1.0],
        }
    }

    /// Active-power roll-off weight `(s/80 + 1)/(s/8000 + 1)`.
    pub fn w21() -> Self {
        Self {
            num: vec![1.0, 1.0 / 80.0],
            den: vec![1.0, 1.0 / 8000.0],
        }
    }

    /// Grid-frequency rejection weight `(s + 6)/(100 s + 0.0006)`.
    pub fn w12() -> Self {
        Self {
            num: vec![6.0, 1.0],
            den: vec![0.0006, 100.0],
        }
    }

    pub fn degree(&self) -> usize {
        self.den.len() - 1
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        let horner = |c: &[f64]| {
            c.iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &k| acc * s + k)
        };
        horner(&self.num) / horner(&self.den)
    }

    /// Controllable-canonical state-space realization.
    pub fn realize(&self) -> Result<LtiSystem> {
        if self.num.len() > self.den.len() {
            return Err(Error::ImproperWeight {
                num: self.num.len() - 1,
                den: self.den.len() - 1,
            });
        }
        let n = self.degree();
        let lead = self.den[n];
        let den: Vec<f64> = self.den.iter().map(|v| v / lead).collect();
        let mut num: Vec<f64> = self.num.iter().map(|v| v / lead).collect();
        num.resize(n + 1, 0.0);
        let feedthrough = num[n];
        if n == 0 {
            return Ok(LtiSystem::static_gain(DMatrix::from_element(
                1,
                1,
                feedthrough,
            )));
        }
        let mut a = DMatrix::zeros(n, n);
        for r in 0..n - 1 {
            a[(r, r + 1)] = 1.0;
        }
        for k in 0..n {
            a[(n - 1, k)] = -den[k];
        }
        let mut b = DMatrix::zeros(n, 1);
        b[(n - 1, 0)] = 1.0;
        let c = DMatrix::from_fn(1, n, |_, k| num[k] - feedthrough * den[k]);
        LtiSystem::new(a, b, c, DMatrix::from_element(1, 1, feedthrough))
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let poly = |c: &[f64]| {
            let terms: Vec<String> = c
                .iter()
                .enumerate()
                .rev()
                .filter(|(_, v)| **v != 0.0)
                .map(|(k, v)| match k {
                    0 => format!("{v}"),
                    1 => format!("{v}*s"),
                    _ => format!("{v}*s^{k}"),
                })
                .collect();
            if terms.is_empty() {
                "0".to_string()
            } else {
                terms.join(" + ")
            }
        };
        write!(f, "({})/({})", poly(&self.num), poly(&self.den))
    }
}

/// Series connection `W(s) * T_ij(s)` as a single-input single-output system.
pub fn weighted_channel(sys: &LtiSystem, i: usize, j: usize, w: &Weight) -> Result<LtiSystem> {
    let t = sys.channel(i, j)?;
    let wr = w.realize()?;
    let (n1, n2) = (t.order(), wr.order());
    let n = n1 + n2;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (n1, n1)).copy_from(&t.a);
    a.view_mut((n1, n1), (n2, n2)).copy_from(&wr.a);
    a.view_mut((n1, 0), (n2, n1)).copy_from(&(&wr.b * &t.c));
    let mut b = DMatrix::zeros(n, 1);
    b.view_mut((0, 0), (n1, 1)).copy_from(&t.b);
    b.view_mut((n1, 0), (n2, 1)).copy_from(&(&wr.b * &t.d));
    let mut c = DMatrix::zeros(1, n);
    c.view_mut((0, 0), (1, n1)).copy_from(&(&wr.d * &t.c));
    c.view_mut((0, n1), (1, n2)).copy_from(&wr.c);
    let d = &wr.d * &t.d;
    LtiSystem::with_names(
        a,
        b,
        c,
        d,
        t.input_names.clone(),
        vec![format!("W*{}", t.output_names[0])],
    )
}
