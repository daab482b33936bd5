use thiserror::Error;

/// Errors produced by the modeling, analysis and synthesis pipeline.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("DC-link collapse: v_dc = {0} must be positive")]
    DcLinkCollapse(f64),

    #[error(
        "equilibrium solve did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian during equilibrium solve")]
    SingularJacobian,

    #[error("system is not asymptotically stable (spectral abscissa {0:e})")]
    Unstable(f64),

    #[error("singular resolvent at omega = {0} rad/s")]
    SingularResolvent(f64),

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error("bisection could not bracket the norm: {0}")]
    Bracket(String),

    #[error("improper weight: numerator degree {num} exceeds denominator degree {den}")]
    ImproperWeight { num: usize, den: usize },

    #[error("infeasible synthesis start: {0}")]
    InfeasibleStart(String),

    #[error("integration blow-up at t = {time} s: {reason}")]
    BlowUp { time: f64, reason: String },

    #[error("response has not settled: {0}")]
    NotSettled(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("config error{}: {msg}", if *line > 0 { format!(" at line {line}") } else { String::new() })]
    Config { line: usize, msg: String },

    #[error("{0}")]
    Parse(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} contains non-finite values")))
    }
}
