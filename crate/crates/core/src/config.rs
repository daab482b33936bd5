//! Line-oriented `key = value` configuration.
//!
//! Keys are dotted (`plant.L_f_mH`, `gains.hinf.k_22`, `scenario.NAME.post`),
//! `#` starts a comment, and `include = FILE` splices another file resolved
//! relative to the including one. Later assignments override earlier ones,
//! which is also how several files passed on the command line are merged.
//! Anything left unset falls back to the reference setup.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::closedloop::{GainSet, THETA_NAMES};
use crate::error::{Error, Result};
use crate::gfm::{GfmGains, References};
use crate::hinf::{Channel, FrequencyGrid, NormMethod, SearchOptions, Weight};
use crate::plant::{params_from_si, Bases, PlantParams, SiParams};
use crate::sim::{Scenario, StepQuantity};

pub const TABLE1: &str = include_str!("../fixtures/table1.cfg");
pub const TABLE2_TRADITIONAL: &str = include_str!("../fixtures/table2_traditional.cfg");
pub const TABLE2_HINF: &str = include_str!("../fixtures/table2_hinf.cfg");
pub const REFERENCE: &str = include_str!("../fixtures/reference.cfg");

/// Shipped fixtures by file name; used to resolve includes in embedded text.
pub const FIXTURES: [(&str, &str); 4] = [
    ("table1.cfg", TABLE1),
    ("table2_traditional.cfg", TABLE2_TRADITIONAL),
    ("table2_hinf.cfg", TABLE2_HINF),
    ("reference.cfg", REFERENCE),
];

const MAX_INCLUDE_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    origin: String,
    line: usize,
}

/// Raw key/value layer, before interpretation.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
    order: Vec<String>,
}

enum Source<'a> {
    Dir(&'a Path),
    Embedded,
}

impl RawConfig {
    pub fn parse_file(&mut self, path: &Path) -> Result<()> {
        self.load_path(path, 0)
    }

    /// Parses text whose includes resolve against the shipped fixtures.
    pub fn parse_embedded(&mut self, text: &str, origin: &str) -> Result<()> {
        self.parse_text(text, origin, Source::Embedded, 0)
    }

    fn load_path(&mut self, path: &Path, depth: usize) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            line: 0,
            msg: format!("{}: {e}", path.display()),
        })?;
        let dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        self.parse_text(&text, &path.display().to_string(), Source::Dir(&dir), depth)
    }

    fn parse_text(
        &mut self,
        text: &str,
        origin: &str,
        src: Source<'_>,
        depth: usize,
    ) -> Result<()> {
        if depth > MAX_INCLUDE_DEPTH {
            return Err(Error::Config {
                line: 0,
                msg: format!("{origin}: includes nested too deeply"),
            });
        }
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Config {
                line,
                msg: format!("{origin}: {msg}"),
            };
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{body}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(err(format!("invalid key '{key}'")));
            }
            if key == "include" {
                match &src {
                    Source::Dir(dir) => self.load_path(&dir.join(value), depth + 1)?,
                    Source::Embedded => {
                        let (_, text) = FIXTURES
                            .iter()
                            .find(|(name, _)| *name == value)
                            .ok_or_else(|| err(format!("no shipped fixture named '{value}'")))?;
                        self.parse_text(text, value, Source::Embedded, depth + 1)?;
                    }
                }
                continue;
            }
            if !self.entries.contains_key(key) {
                self.order.push(key.to_string());
            }
            self.entries.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    origin: origin.to_string(),
                    line,
                },
            );
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    fn err(&self, key: &str, msg: impl std::fmt::Display) -> Error {
        match self.entries.get(key) {
            Some(e) => Error::Config {
                line: e.line,
                msg: format!("{}: {key}: {msg}", e.origin),
            },
            None => Error::Config {
                line: 0,
                msg: format!("{key}: {msg}"),
            },
        }
    }

    fn num(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(Some(x)),
                _ => Err(self.err(key, format!("'{v}' is not a finite number"))),
            },
        }
    }

    fn num_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.num(key)?.unwrap_or(default))
    }

    fn count(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<u64>()
                .map(Some)
                .map_err(|_| self.err(key, format!("'{v}' is not a non-negative integer"))),
        }
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| {
                    self.err(
                        key,
                        format!("'{v}' is not a comma-separated list of numbers"),
                    )
                }),
        }
    }
}

/// Settings of the synthesis command.
#[derive(Debug, Clone)]
pub struct SynthesisSettings {
    /// Gain set the search starts from.
    pub initial: String,
    /// Name under which the result is written.
    pub result: String,
    pub frozen: Vec<String>,
    pub channels: Vec<Channel>,
    pub options: SearchOptions,
    pub norm: NormMethod,
}

/// Interpreted configuration.
#[derive(Debug, Clone)]
pub struct Config {
    pub params: PlantParams,
    pub refs: References,
    /// Named gain sets in order of first appearance.
    pub gain_sets: Vec<(String, GainSet)>,
    /// Default gain set for single-set commands.
    pub active: Option<String>,
    pub scenarios: Vec<Scenario>,
    pub synthesis: SynthesisSettings,
}

const SI_PLANT_KEYS: [&str; 9] = [
    "units", "L_f_mH", "C_f_uF", "L_g_mH", "R_g_ohm", "C_dc_uF", "f_sw_kHz", "V_g_V", "f_g_Hz",
];
const PU_PLANT_KEYS: [&str; 10] = [
    "units", "L_f", "C_f", "L_g", "R_g", "C_dc", "T_sw", "omega_b", "V_g", "omega_g",
];
const BASE_KEYS: [&str; 4] = ["S_n_kW", "V_n_V", "f_n_Hz", "V_dc_V"];
const REF_KEYS: [&str; 9] = [
    "P_ref",
    "Q_ref",
    "V_ref",
    "V_dcref",
    "V_dcref_V",
    "omega_g_ref",
    "i_0",
    "omega_0",
    "e_0",
];
const SCENARIO_KEYS: [&str; 6] = [
    "quantity",
    "pre",
    "post",
    "step_time",
    "duration",
    "sample_period",
];
const SYNTHESIS_KEYS: [&str; 12] = [
    "initial",
    "result",
    "frozen",
    "budget",
    "seed",
    "restarts",
    "initial_mesh",
    "max_mesh",
    "min_mesh",
    "restart_spread",
    "norm",
    "tol",
];

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl Config {
    /// Loads and merges files in order.
    pub fn load(paths: &[PathBuf]) -> Result<Self> {
        let mut raw = RawConfig::default();
        for p in paths {
            raw.parse_file(p)?;
        }
        Self::from_raw(&raw)
    }

    pub fn from_embedded(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        raw.parse_embedded(text, "<embedded>")?;
        Self::from_raw(&raw)
    }

    /// The shipped reference configuration.
    pub fn reference() -> Self {
        Self::from_embedded(REFERENCE).expect("shipped configuration parses")
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        for key in raw.keys() {
            check_key(raw, key)?;
        }
        let (params, v_dc_base) = plant_params(raw)?;
        let refs = references(raw, v_dc_base)?;
        let d_p = raw.num_or("droop.D_p", 0.01)?;
        let d_q = raw.num_or("droop.D_q", 0.05)?;

        let mut gain_sets: Vec<(String, GainSet)> = Vec::new();
        for key in raw.keys() {
            if let Some(rest) = key.strip_prefix("gains.") {
                let (name, _) = rest.split_once('.').unwrap_or((rest, ""));
                if !gain_sets.iter().any(|(n, _)| n == name) {
                    gain_sets.push((name.to_string(), gain_set(raw, name, d_p, d_q)?));
                }
            }
        }

        let active = raw.get("run.gains").map(str::to_string);
        if let Some(a) = &active {
            if !gain_sets.iter().any(|(n, _)| n == a) {
                return Err(raw.err("run.gains", format!("gain set '{a}' is not defined")));
            }
        }

        let mut scenarios: Vec<Scenario> = Vec::new();
        for key in raw.keys() {
            if let Some(rest) = key.strip_prefix("scenario.") {
                let (name, _) = rest.split_once('.').unwrap_or((rest, ""));
                if !scenarios.iter().any(|s| s.name == name) {
                    scenarios.push(scenario(raw, name)?);
                }
            }
        }

        let synthesis = synthesis(raw)?;
        Ok(Self {
            params,
            refs,
            gain_sets,
            active,
            scenarios,
            synthesis,
        })
    }

    pub fn gain_set(&self, name: &str) -> Result<&GainSet> {
        self.gain_sets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| g)
            .ok_or_else(|| Error::Config {
                line: 0,
                msg: format!("gain set '{name}' is not defined"),
            })
    }

    /// Resolves the gain set for single-set commands: explicit name, then
    /// `run.gains`, then the only defined set.
    pub fn select_gains(&self, name: Option<&str>) -> Result<(String, GainSet)> {
        let chosen = match (name, &self.active) {
            (Some(n), _) => n.to_string(),
            (None, Some(a)) => a.clone(),
            (None, None) => match self.gain_sets.as_slice() {
                [(n, _)] => n.clone(),
                [] => {
                    return Err(Error::Config {
                        line: 0,
                        msg: "no gain sets defined".into(),
                    })
                }
                _ => {
                    return Err(Error::Config {
                        line: 0,
                        msg: "several gain sets defined; select one with --gains or run.gains"
                            .into(),
                    })
                }
            },
        };
        let g = *self.gain_set(&chosen)?;
        Ok((chosen, g))
    }

    pub fn scenario(&self, name: &str) -> Result<&Scenario> {
        self.scenarios
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Scenario(format!("scenario '{name}' is not defined")))
    }
}

fn check_key(raw: &RawConfig, key: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let known = match parts.as_slice() {
        ["plant", k] => {
            let pu = raw.get("plant.units") == Some("pu");
            if pu {
                PU_PLANT_KEYS.contains(k)
            } else {
                SI_PLANT_KEYS.contains(k)
            }
        }
        ["base", k] => BASE_KEYS.contains(k),
        ["refs", k] => REF_KEYS.contains(k),
        ["droop", k] => ["D_p", "D_q"].contains(k),
        ["gains", name, k] => {
            valid_name(name) && (THETA_NAMES.contains(k) || ["D_p", "D_q"].contains(k))
        }
        ["scenario", name, k] => valid_name(name) && SCENARIO_KEYS.contains(k),
        ["weight", w, k] => parse_channel_name(w).is_some() && ["num", "den"].contains(k),
        ["synthesis", k] => SYNTHESIS_KEYS.contains(k),
        ["run", "gains"] => true,
        _ => false,
    };
    if known {
        Ok(())
    } else {
        Err(raw.err(key, "unknown key"))
    }
}

fn plant_params(raw: &RawConfig) -> Result<(PlantParams, f64)> {
    let si0 = SiParams::nominal();
    let b0 = Bases::nominal();
    let bases = Bases {
        s_n: raw.num_or("base.S_n_kW", b0.s_n / 1e3)? * 1e3,
        v_n: raw.num_or("base.V_n_V", b0.v_n)?,
        omega_n: raw
            .num("base.f_n_Hz")?
            .map_or(b0.omega_n, |f| std::f64::consts::PI * (2.0 * f)),
        v_dc: raw.num_or("base.V_dc_V", b0.v_dc)?,
    };
    let params = match raw.get("plant.units").unwrap_or("si") {
        "si" => {
            let si = SiParams {
                l_f: raw.num("plant.L_f_mH")?.map_or(si0.l_f, |v| v / 1e3),
                c_f: raw.num("plant.C_f_uF")?.map_or(si0.c_f, |v| v / 1e6),
                l_g: raw.num("plant.L_g_mH")?.map_or(si0.l_g, |v| v / 1e3),
                r_g: raw.num("plant.R_g_ohm")?.or(si0.r_g),
                c_dc: raw.num("plant.C_dc_uF")?.map_or(si0.c_dc, |v| v / 1e6),
                f_sw: raw.num("plant.f_sw_kHz")?.map_or(si0.f_sw, |v| v * 1e3),
                v_g: raw.num_or("plant.V_g_V", si0.v_g)?,
                omega_g: raw
                    .num("plant.f_g_Hz")?
                    .map_or(si0.omega_g, |f| std::f64::consts::PI * (2.0 * f)),
            };
            params_from_si(&si, &bases).map_err(|e| raw.err("plant.units", e))?
        }
        "pu" => {
            let p0 = PlantParams::nominal();
            let p = PlantParams {
                l_f: raw.num_or("plant.L_f", p0.l_f)?,
                c_f: raw.num_or("plant.C_f", p0.c_f)?,
                l_g: raw.num_or("plant.L_g", p0.l_g)?,
                r_g: raw.num_or("plant.R_g", p0.r_g)?,
                c_dc: raw.num_or("plant.C_dc", p0.c_dc)?,
                t_sw: raw.num_or("plant.T_sw", p0.t_sw)?,
                omega_b: raw.num_or("plant.omega_b", p0.omega_b)?,
                v_g: raw.num_or("plant.V_g", p0.v_g)?,
                omega_g: raw.num_or("plant.omega_g", p0.omega_g)?,
            };
            p.validate().map_err(|e| raw.err("plant.units", e))?;
            p
        }
        other => {
            return Err(raw.err(
                "plant.units",
                format!("expected 'si' or 'pu', got '{other}'"),
            ))
        }
    };
    Ok((params, bases.v_dc))
}

fn references(raw: &RawConfig, v_dc_base: f64) -> Result<References> {
    let r0 = References::nominal();
    let v_dcref = match (raw.num("refs.V_dcref")?, raw.num("refs.V_dcref_V")?) {
        (Some(_), Some(_)) => return Err(raw.err("refs.V_dcref_V", "conflicts with refs.V_dcref")),
        (Some(v), None) => v,
        (None, Some(v)) => v / v_dc_base,
        (None, None) => r0.v_dcref,
    };
    let refs = References {
        v_dcref,
        p_ref: raw.num_or("refs.P_ref", r0.p_ref)?,
        omega_g_ref: raw.num_or("refs.omega_g_ref", r0.omega_g_ref)?,
        q_ref: raw.num_or("refs.Q_ref", r0.q_ref)?,
        v_ref: raw.num_or("refs.V_ref", r0.v_ref)?,
        i_0: raw.num("refs.i_0")?,
        omega_0: raw.num_or("refs.omega_0", r0.omega_0)?,
        e_0: raw.num_or("refs.e_0", r0.e_0)?,
    };
    refs.validate().map_err(|e| raw.err("refs.V_ref", e))?;
    Ok(refs)
}

fn gain_set(raw: &RawConfig, name: &str, d_p: f64, d_q: f64) -> Result<GainSet> {
    let mut theta = [0.0; 17];
    for (k, gain) in THETA_NAMES.iter().enumerate() {
        let default = match *gain {
            "k_pdc" => GfmGains::DEFAULT_K_PDC,
            "k_idc" => GfmGains::DEFAULT_K_IDC,
            _ => 0.0,
        };
        theta[k] = raw.num_or(&format!("gains.{name}.{gain}"), default)?;
    }
    let d_p = raw.num_or(&format!("gains.{name}.D_p"), d_p)?;
    let d_q = raw.num_or(&format!("gains.{name}.D_q"), d_q)?;
    let g = GainSet::from_theta(&theta, d_p, d_q);
    g.validate().map_err(|e| Error::Config {
        line: 0,
        msg: format!("gain set '{name}': {e}"),
    })?;
    Ok(g)
}

fn scenario(raw: &RawConfig, name: &str) -> Result<Scenario> {
    let key = |k: &str| format!("scenario.{name}.{k}");
    let quantity_key = key("quantity");
    let quantity: StepQuantity = raw
        .get(&quantity_key)
        .ok_or_else(|| Error::Config {
            line: 0,
            msg: format!("scenario '{name}' has no quantity"),
        })?
        .parse()
        .map_err(|e| raw.err(&quantity_key, e))?;
    let required = |k: &str| -> Result<f64> {
        raw.num(&key(k))?.ok_or_else(|| Error::Config {
            line: 0,
            msg: format!("scenario '{name}' has no {k}"),
        })
    };
    let s = Scenario {
        name: name.to_string(),
        duration: raw.num_or(&key("duration"), 2.0)?,
        step_time: raw.num_or(&key("step_time"), 0.1)?,
        quantity,
        pre: required("pre")?,
        post: required("post")?,
        sample_period: raw.num_or(&key("sample_period"), 1e-4)?,
    };
    s.validate().map_err(|e| raw.err(&quantity_key, e))?;
    Ok(s)
}

fn parse_channel_name(w: &str) -> Option<(usize, usize)> {
    let digits = w.strip_prefix('W')?;
    let mut it = digits.chars();
    let (i, j) = (it.next()?.to_digit(10)?, it.next()?.to_digit(10)?);
    if it.next().is_some() || i == 0 || j == 0 || i > 2 || j > 2 {
        return None;
    }
    Some((i as usize - 1, j as usize - 1))
}

fn synthesis(raw: &RawConfig) -> Result<SynthesisSettings> {
    let mut names: Vec<&str> = Vec::new();
    for key in raw.keys() {
        if let Some(rest) = key.strip_prefix("weight.") {
            let (w, _) = rest.split_once('.').unwrap_or((rest, ""));
            if !names.contains(&w) {
                names.push(w);
            }
        }
    }
    let channels = if names.is_empty() {
        Channel::standard_set()
    } else {
        names
            .iter()
            .map(|w| {
                let (i, j) = parse_channel_name(w).expect("checked key");
                let part = |p: &str| -> Result<Vec<f64>> {
                    let k = format!("weight.{w}.{p}");
                    raw.list(&k)?.ok_or_else(|| Error::Config {
                        line: 0,
                        msg: format!("weight {w} has no {p}"),
                    })
                };
                let weight = Weight::new(part("num")?, part("den")?)
                    .map_err(|e| raw.err(&format!("weight.{w}.num"), e))?;
                Ok(Channel::new(i, j, weight))
            })
            .collect::<Result<Vec<_>>>()?
    };

    let frozen: Vec<String> = match raw.get("synthesis.frozen") {
        None => Vec::new(),
        Some(v) => v
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
    };
    if let Some(bad) = frozen.iter().find(|f| !THETA_NAMES.contains(&f.as_str())) {
        return Err(raw.err("synthesis.frozen", format!("unknown gain '{bad}'")));
    }

    let d = SearchOptions::default();
    let options = SearchOptions {
        max_evaluations: raw
            .count("synthesis.budget")?
            .map_or(d.max_evaluations, |v| v as usize),
        initial_mesh: raw.num_or("synthesis.initial_mesh", d.initial_mesh)?,
        max_mesh: raw.num_or("synthesis.max_mesh", d.max_mesh)?,
        min_mesh: raw.num_or("synthesis.min_mesh", d.min_mesh)?,
        restarts: raw
            .count("synthesis.restarts")?
            .map_or(d.restarts, |v| v as usize),
        restart_spread: raw.num_or("synthesis.restart_spread", d.restart_spread)?,
        seed: raw.count("synthesis.seed")?.unwrap_or(d.seed),
    };
    if !(options.min_mesh > 0.0
        && options.initial_mesh >= options.min_mesh
        && options.max_mesh >= options.initial_mesh)
    {
        return Err(raw.err(
            "synthesis.initial_mesh",
            "need 0 < min_mesh <= initial_mesh <= max_mesh",
        ));
    }
    let tol = raw.num_or("synthesis.tol", 1e-6)?;
    let norm = match raw.get("synthesis.norm").unwrap_or("bisection") {
        "bisection" => NormMethod::Bisection {
            grid: FrequencyGrid::default(),
            tol,
        },
        "grid" => NormMethod::Grid(FrequencyGrid::default()),
        other => {
            return Err(raw.err(
                "synthesis.norm",
                format!("expected 'bisection' or 'grid', got '{other}'"),
            ))
        }
    };
    Ok(SynthesisSettings {
        initial: raw
            .get("synthesis.initial")
            .unwrap_or("traditional")
            .to_string(),
        result: raw
            .get("synthesis.result")
            .unwrap_or("synthesized")
            .to_string(),
        frozen,
        channels,
        options,
        norm,
    })
}

/// Renders a gain set as config lines that parse back bit-exactly.
pub fn gain_set_to_cfg(name: &str, g: &GainSet) -> String {
    let mut out = String::new();
    for (k, v) in THETA_NAMES.iter().zip(g.to_theta()) {
        let _ = writeln!(out, "gains.{name}.{k} = {v:?}");
    }
    let _ = writeln!(out, "gains.{name}.D_p = {:?}", g.gfm.d_p);
    let _ = writeln!(out, "gains.{name}.D_q = {:?}", g.gfm.d_q);
    out
}
