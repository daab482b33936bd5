//! Fixed-step nonlinear simulation of step scenarios and transient metrics.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::closedloop::{
    closedloop_deriv, find_equilibrium, flat_start, Disturbance, FullState, GainSet, N_STATES,
};
use crate::error::{Error, Result};
use crate::gfm::References;
use crate::plant::{PlantOutputs, PlantParams, PlantState};

/// Default RK4 step (s).
pub const DEFAULT_STEP: f64 = 1e-5;
/// Any state above this magnitude counts as a blow-up.
pub const BLOW_UP_LIMIT: f64 = 1e6;

/// Quantity changed by a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepQuantity {
    PRef,
    QRef,
    VRef,
    VDcRef,
    OmegaG,
    VG,
}

impl StepQuantity {
    pub const ALL: [StepQuantity; 6] = [
        Self::PRef,
        Self::QRef,
        Self::VRef,
        Self::VDcRef,
        Self::OmegaG,
        Self::VG,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::PRef => "P_ref",
            Self::QRef => "Q_ref",
            Self::VRef => "V_ref",
            Self::VDcRef => "V_dcref",
            Self::OmegaG => "omega_g",
            Self::VG => "V_g",
        }
    }

    /// Output most directly affected by the step.
    pub fn natural_output(self) -> &'static str {
        match self {
            Self::PRef | Self::OmegaG => "p",
            Self::QRef => "q",
            Self::VRef | Self::VG => "V",
            Self::VDcRef => "v_dc",
        }
    }

    fn apply(self, value: f64, refs: &mut References, d: &mut Disturbance) {
        match self {
            Self::PRef => refs.p_ref = value,
            Self::QRef => refs.q_ref = value,
            Self::VRef => refs.v_ref = value,
            Self::VDcRef => refs.v_dcref = value,
            Self::OmegaG => d.omega_g = value,
            Self::VG => d.v_g = value,
        }
    }
}

impl fmt::Display for StepQuantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StepQuantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|q| q.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Scenario(format!("unknown step quantity '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub step_time: f64,
    pub quantity: StepQuantity,
    pub pre: f64,
    pub post: f64,
    pub sample_period: f64,
}

impl Scenario {
    /// Active-power reference step 0.5 -> 1.0 p.u.
    pub fn p_ref_step() -> Self {
        Self {
            name: "p_ref_step".into(),
            duration: 2.0,
            step_time: 0.1,
            quantity: StepQuantity::PRef,
            pre: 0.5,
            post: 1.0,
            sample_period: 1e-4,
        }
    }

    /// Grid frequency drop 1.0 -> 0.998 p.u. (50 -> 49.9 Hz).
    pub fn omega_g_step() -> Self {
        Self {
            name: "omega_g_step".into(),
            duration: 2.0,
            step_time: 0.1,
            quantity: StepQuantity::OmegaG,
            pre: 1.0,
            post: 0.998,
            sample_period: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(format!("{}: {m}", self.name)));
        if ![
            self.duration,
            self.step_time,
            self.pre,
            self.post,
            self.sample_period,
        ]
        .iter()
        .all(|v| v.is_finite())
        {
            return bad("non-finite field".into());
        }
        if !(self.step_time > 0.0 && self.step_time < self.duration) {
            return bad(format!(
                "need 0 < step time ({}) < duration ({})",
                self.step_time, self.duration
            ));
        }
        if self.sample_period <= 0.0 {
            return bad("sample period must be positive".into());
        }
        Ok(())
    }

    /// References and disturbance before (`post = false`) or after the step.
    pub fn operating_point(
        &self,
        refs: &References,
        params: &PlantParams,
        post: bool,
    ) -> (References, Disturbance) {
        let mut r = *refs;
        let mut d = Disturbance {
            omega_g: params.omega_g,
            v_g: params.v_g,
        };
        self.quantity
            .apply(if post { self.post } else { self.pre }, &mut r, &mut d);
        (r, d)
    }
}

/// Sampled time series of outputs and plant states.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    /// `key=value` metadata, written as comment lines.
    pub meta: Vec<(String, String)>,
    /// Column names excluding time.
    pub columns: Vec<String>,
    pub time: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

fn trace_columns() -> Vec<String> {
    PlantOutputs::NAMES
        .iter()
        .chain(PlantState::NAMES.iter().filter(|n| **n != "v_dc"))
        .map(|s| s.to_string())
        .collect()
}

impl SimTrace {
    pub fn new(columns: Vec<String>, time: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != time.len() || rows.iter().any(|r| r.len() != columns.len()) {
            return Err(Error::Domain(
                "trace rows do not match the column schema".into(),
            ));
        }
        if time
            .windows(2)
            .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
        {
            return Err(Error::Domain(
                "trace time must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            meta: Vec::new(),
            columns,
            time,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Domain(format!("trace has no column '{name}'")))?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Time of the step, from metadata; falls back to the first sample.
    pub fn step_time(&self) -> f64 {
        self.meta("step_time")
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| self.time.first().copied().unwrap_or(0.0))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "t,{}", self.columns.join(","));
        for (t, row) in self.time.iter().zip(&self.rows) {
            let _ = write!(out, "{t:.11e}");
            for v in row {
                let _ = write!(out, ",{v:.11e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut meta = Vec::new();
        let mut header: Option<Vec<String>> = None;
        let mut time = Vec::new();
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                if let Some((k, v)) = c.trim().split_once('=') {
                    meta.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            match &header {
                None => {
                    if fields.first().map(|f| f.trim()) != Some("t") {
                        return Err(Error::Parse(format!(
                            "trace CSV line {}: header must start with 't'",
                            n + 1
                        )));
                    }
                    header = Some(fields[1..].iter().map(|f| f.trim().to_string()).collect());
                }
                Some(h) => {
                    let vals = fields
                        .iter()
                        .map(|f| f.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::Parse(format!("trace CSV line {}: {e}", n + 1)))?;
                    if vals.len() != h.len() + 1 {
                        return Err(Error::Parse(format!(
                            "trace CSV line {}: expected {} fields",
                            n + 1,
                            h.len() + 1
                        )));
                    }
                    time.push(vals[0]);
                    rows.push(vals[1..].to_vec());
                }
            }
        }
        let columns = header.ok_or_else(|| Error::Parse("trace CSV has no header".into()))?;
        let mut trace = Self::new(columns, time, rows)?;
        trace.meta = meta;
        Ok(trace)
    }
}

fn sample_row(
    z: &FullState,
    refs: &References,
    g: &GainSet,
    params: &PlantParams,
    d: &Disturbance,
) -> Result<Vec<f64>> {
    let p = PlantParams {
        omega_g: d.omega_g,
        v_g: d.v_g,
        ..*params
    };
    let s = crate::closedloop::signals(z, refs, g, &p)?;
    let x = z.plant().to_array();
    let mut row = s.outputs.to_array().to_vec();
    row.extend(
        PlantState::NAMES
            .iter()
            .zip(x)
            .filter(|(n, _)| **n != "v_dc")
            .map(|(_, v)| v),
    );
    Ok(row)
}

fn steps_in(span: f64, h: f64, what: &str) -> Result<usize> {
    let k = (span / h).round();
    if k < 1.0 || (k * h - span).abs() > 1e-9 * span.max(h) {
        return Err(Error::Scenario(format!(
            "{what} ({span} s) is not a multiple of the step {h} s"
        )));
    }
    Ok(k as usize)
}

fn add(a: &[f64; N_STATES], b: &[f64; N_STATES], s: f64) -> FullState {
    let mut out = [0.0; N_STATES];
    for i in 0..N_STATES {
        out[i] = a[i] + s * b[i];
    }
    FullState(out)
}

/// Simulates the scenario with the default step.
pub fn simulate(
    scn: &Scenario,
    g: &GainSet,
    refs: &References,
    params: &PlantParams,
) -> Result<SimTrace> {
    simulate_with_step(scn, g, refs, params, DEFAULT_STEP)
}

/// Classical RK4 from the pre-step equilibrium. The step time, sample period
/// and duration must all be multiples of `h`.
pub fn simulate_with_step(
    scn: &Scenario,
    g: &GainSet,
    refs: &References,
    params: &PlantParams,
    h: f64,
) -> Result<SimTrace> {
    scn.validate()?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Scenario(format!(
            "step size must be positive, got {h}"
        )));
    }
    let n_total = steps_in(scn.duration, h, "duration")?;
    let n_step = steps_in(scn.step_time, h, "step time")?;
    let every = steps_in(scn.sample_period, h, "sample period")?;

    let (refs_pre, d_pre) = scn.operating_point(refs, params, false);
    let (refs_post, d_post) = scn.operating_point(refs, params, true);
    let mut z = find_equilibrium(
        &refs_pre,
        &d_pre,
        g,
        params,
        &flat_start(&refs_pre, g, params),
    )?;

    let mut trace = SimTrace {
        meta: Vec::new(),
        columns: trace_columns(),
        time: Vec::new(),
        rows: Vec::new(),
    };
    trace.set_meta("scenario", scn.name.clone());
    trace.set_meta("quantity", scn.quantity.name());
    trace.set_meta("pre", format!("{}", scn.pre));
    trace.set_meta("post", format!("{}", scn.post));
    trace.set_meta("step_time", format!("{}", scn.step_time));
    trace.set_meta("h", format!("{h}"));

    for k in 0..=n_total {
        let t = k as f64 * h;
        let (r, d) = if k < n_step {
            (&refs_pre, &d_pre)
        } else {
            (&refs_post, &d_post)
        };
        if k % every == 0 {
            trace.time.push(t);
            trace.rows.push(sample_row(&z, r, g, params, d)?);
        }
        if k == n_total {
            break;
        }
        let blow = |reason: String| Error::BlowUp { time: t, reason };
        let f = |s: &FullState| {
            closedloop_deriv(s, r, d, g, params)
                .map(|v| v.0)
                .map_err(|e| blow(e.to_string()))
        };
        let k1 = f(&z)?;
        let k2 = f(&add(&z.0, &k1, 0.5 * h))?;
        let k3 = f(&add(&z.0, &k2, 0.5 * h))?;
        let k4 = f(&add(&z.0, &k3, h))?;
        let mut next = z.0;
        for i in 0..N_STATES {
            next[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        z = FullState(next);
        let t_next = (k + 1) as f64 * h;
        if !z.0.iter().all(|v| v.is_finite()) || z.max_abs() > BLOW_UP_LIMIT {
            return Err(Error::BlowUp {
                time: t_next,
                reason: format!("state magnitude exceeds {BLOW_UP_LIMIT:e}"),
            });
        }
        let v_dc = z.plant().v_dc;
        if v_dc <= 0.0 {
            return Err(Error::BlowUp {
                time: t_next,
                reason: format!("v_dc = {v_dc} collapsed"),
            });
        }
    }
    Ok(trace)
}

/// Step-response quality of one output channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    /// Largest excursion past the final value, as a fraction of the step.
    pub overshoot: f64,
    /// Time from the step to the last exit from the 2% band.
    pub settling_time: f64,
    pub steady_error: f64,
}

/// Half-width of the settling band as a fraction of the step magnitude.
pub const SETTLING_BAND: f64 = 0.02;

pub fn metrics(trace: &SimTrace, channel: &str, final_value: f64) -> Result<StepMetrics> {
    let y = trace.column(channel)?;
    if y.is_empty() {
        return Err(Error::Domain("empty trace".into()));
    }
    let t0 = trace.step_time();
    let t = &trace.time;
    let first_post = t.iter().position(|&ti| ti >= t0).unwrap_or(t.len() - 1);
    let initial = if first_post == 0 {
        y[0]
    } else {
        y[first_post - 1]
    };
    let magnitude = (final_value - initial).abs();
    let dir = if final_value >= initial { 1.0 } else { -1.0 };
    let band = (SETTLING_BAND * magnitude).max(1e-9);

    let post = &y[first_post..];
    let tp = &t[first_post..];
    let overshoot = if magnitude > 1e-12 {
        post.iter()
            .map(|v| dir * (v - final_value))
            .fold(0.0, f64::max)
            / magnitude
    } else {
        0.0
    };

    let t_end = *t.last().unwrap();
    let tail_start = t_end - 0.1 * (t_end - t[0]);
    let tail: Vec<f64> = t
        .iter()
        .zip(&y)
        .filter(|(ti, _)| **ti >= tail_start)
        .map(|(_, v)| *v)
        .collect();
    if let Some(v) = tail.iter().find(|v| (*v - final_value).abs() > band) {
        return Err(Error::NotSettled(format!(
            "{channel} = {v} is outside {final_value} +/- {band:e} in the last 10% of the trace"
        )));
    }
    let steady_error = tail.iter().map(|v| v - final_value).sum::<f64>() / tail.len() as f64;

    let settling_time = match post.iter().rposition(|v| (v - final_value).abs() > band) {
        None => 0.0,
        Some(k) if k + 1 < post.len() => {
            // Interpolate the band crossing between the last outside and first inside sample.
            let (e0, e1) = (
                (post[k] - final_value).abs(),
                (post[k + 1] - final_value).abs(),
            );
            let frac = if e0 > e1 {
                (e0 - band) / (e0 - e1)
            } else {
                0.0
            };
            tp[k] + frac * (tp[k + 1] - tp[k]) - t0
        }
        Some(k) => tp[k] - t0,
    };
    Ok(StepMetrics {
        overshoot,
        settling_time: settling_time.max(0.0),
        steady_error,
    })
}

/// Deviation between runs at `h` and `h/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub h: f64,
    /// Largest absolute difference over all sampled outputs.
    pub max_deviation: f64,
    pub worst_channel: String,
    pub worst_time: f64,
}

pub fn step_consistency(
    h: f64,
    scn: &Scenario,
    g: &GainSet,
    refs: &References,
    params: &PlantParams,
) -> Result<ConsistencyReport> {
    let coarse = simulate_with_step(scn, g, refs, params, h)?;
    let fine = simulate_with_step(scn, g, refs, params, h / 2.0)?;
    let mut report = ConsistencyReport {
        h,
        max_deviation: 0.0,
        worst_channel: String::new(),
        worst_time: 0.0,
    };
    for (k, name) in PlantOutputs::NAMES.iter().enumerate() {
        for (i, (a, b)) in coarse.rows.iter().zip(&fine.rows).enumerate() {
            let dev = (a[k] - b[k]).abs();
            if dev > report.max_deviation || report.worst_channel.is_empty() {
                report.max_deviation = dev.max(report.max_deviation);
                report.worst_channel = name.to_string();
                report.worst_time = coarse.time[i];
            }
        }
    }
    Ok(report)
}
