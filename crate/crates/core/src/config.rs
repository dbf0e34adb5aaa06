//! Flat `key = value` scenario files with `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::controller::{Scenario, SolverSettings};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::policies::{ControlBounds, Setpoints};

const DEFAULT_CFG: &str = include_str!("../../../configs/default.cfg");
const PROBLEM1_CFG: &str = include_str!("../../../configs/problem1.cfg");
const PROBLEM2_CFG: &str = include_str!("../../../configs/problem2.cfg");

/// Keys every scenario file must set.
pub const REQUIRED_KEYS: &[&str] = &[
    "rho_f", "rho_e", "cp_f", "k_f", "H", "d", "sigma", "F_side", "T_c", "R_p", "R_p_growth", "R_p_saturation",
    "p_wc", "dH_sub", "K_v", "T0", "n", "psat_a", "psat_b", "tb_min", "tb_max",
];

/// Keys with built-in defaults.
pub const OPTIONAL_KEYS: &[&str] = &[
    "scenario",
    "T_max",
    "v_max",
    "horizon",
    "rtol",
    "atol",
    "max_step",
    "initial_step",
    "event_tol",
    "max_steps",
    "element_dt",
    "stages",
    "lookahead",
    "collocation_tol",
    "collocation_max_iter",
    "consistency_tol",
    "max_switches",
];

pub const BUILTIN_SCENARIOS: &[&str] = &["problem1", "problem2", "custom"];

fn number(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::config(key, format!("expected a number, got `{value}`")))
}

fn count(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::config(key, format!("expected a non-negative integer, got `{value}`")))
}

fn optional(key: &str, value: &str) -> Result<Option<f64>> {
    if value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        number(key, value).map(Some)
    }
}

fn blank_scenario() -> Scenario {
    Scenario {
        name: "custom".into(),
        params: ModelParams::default(),
        bounds: ControlBounds {
            tb_min: 228.0,
            tb_max: 273.0,
        },
        limits: Setpoints::default(),
        horizon: 48.0 * 3600.0,
        solver: SolverSettings::default(),
    }
}

/// Sets one key on `scenario` without validating the result.
pub fn set_key(scenario: &mut Scenario, key: &str, value: &str) -> Result<()> {
    let value = value.trim();
    let p = &mut scenario.params;
    let s = &mut scenario.solver;
    match key {
        "scenario" => {
            if value.is_empty() {
                return Err(Error::config(key, "name must not be empty"));
            }
            scenario.name = value.to_string();
        }
        "rho_f" => p.rho_f = number(key, value)?,
        "rho_e" => p.rho_e = number(key, value)?,
        "cp_f" => p.cp_f = number(key, value)?,
        "k_f" => p.k_f = number(key, value)?,
        "H" => p.height = number(key, value)?,
        "d" => p.diameter = number(key, value)?,
        "sigma" => p.sigma = number(key, value)?,
        "F_side" => p.f_side = number(key, value)?,
        "T_c" => p.t_chamber = number(key, value)?,
        "R_p" => p.r_p = number(key, value)?,
        "R_p_growth" => p.r_p_growth = number(key, value)?,
        "R_p_saturation" => p.r_p_saturation = number(key, value)?,
        "p_wc" => p.p_wc = number(key, value)?,
        "dH_sub" => p.dh_sub = number(key, value)?,
        "K_v" => p.k_v = number(key, value)?,
        "T0" => p.t0 = number(key, value)?,
        "n" => p.n = count(key, value)?,
        "psat_a" => p.psat_a = number(key, value)?,
        "psat_b" => p.psat_b = number(key, value)?,
        "tb_min" => scenario.bounds.tb_min = number(key, value)?,
        "tb_max" => scenario.bounds.tb_max = number(key, value)?,
        "T_max" => scenario.limits.t_max = optional(key, value)?,
        "v_max" => scenario.limits.v_max = optional(key, value)?,
        "horizon" => scenario.horizon = number(key, value)?,
        "rtol" => s.integration.rtol = number(key, value)?,
        "atol" => s.integration.atol = number(key, value)?,
        "max_step" => s.integration.max_step = number(key, value)?,
        "initial_step" => s.integration.initial_step = number(key, value)?,
        "event_tol" => s.integration.event_tol = number(key, value)?,
        "max_steps" => s.integration.max_steps = count(key, value)?,
        "element_dt" => s.element_dt = number(key, value)?,
        "stages" => s.stages = count(key, value)?,
        "lookahead" => s.lookahead = number(key, value)?,
        "collocation_tol" => s.collocation.tol = number(key, value)?,
        "collocation_max_iter" => s.collocation.max_iter = count(key, value)?,
        "consistency_tol" => s.consistency_tol = number(key, value)?,
        "max_switches" => s.max_switches = count(key, value)?,
        _ => return Err(Error::config(key, "unknown key")),
    }
    Ok(())
}

/// Splits a config text into `key -> (line, value)`.
fn tokenize(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            reason: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("malformed key `{key}`"),
            });
        }
        if entries.insert(key.to_string(), (line_no, value.trim().to_string())).is_some() {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(entries)
}

pub fn parse_config(text: &str) -> Result<Scenario> {
    let entries = tokenize(text)?;
    let mut scenario = blank_scenario();
    for (key, (line, value)) in &entries {
        if !REQUIRED_KEYS.contains(&key.as_str()) && !OPTIONAL_KEYS.contains(&key.as_str()) {
            return Err(Error::Parse {
                line: *line,
                reason: format!("unknown key `{key}`"),
            });
        }
        set_key(&mut scenario, key, value)?;
    }
    if let Some(missing) = REQUIRED_KEYS.iter().find(|k| !entries.contains_key(**k)) {
        return Err(Error::config(*missing, "missing required key"));
    }
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_config(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn builtin(name: &str) -> Result<Scenario> {
    let text = match name {
        "problem1" => PROBLEM1_CFG,
        "problem2" => PROBLEM2_CFG,
        "custom" => DEFAULT_CFG,
        other => {
            return Err(Error::config(
                "scenario",
                format!("unknown scenario `{other}`, expected one of {}", BUILTIN_SCENARIOS.join(", ")),
            ))
        }
    };
    parse_config(text)
}

/// Applies `key=value` overrides and re-validates.
pub fn apply_overrides(scenario: &mut Scenario, overrides: &[(String, String)]) -> Result<()> {
    for (k, v) in overrides {
        set_key(scenario, k.trim(), v)?;
    }
    scenario.validate()
}

/// Effective configuration in the same format `parse_config` reads.
pub fn dump_config(scenario: &Scenario) -> String {
    let p = &scenario.params;
    let s = &scenario.solver;
    let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
    let rows: Vec<(&str, String)> = vec![
        ("scenario", scenario.name.clone()),
        ("rho_f", p.rho_f.to_string()),
        ("rho_e", p.rho_e.to_string()),
        ("cp_f", p.cp_f.to_string()),
        ("k_f", p.k_f.to_string()),
        ("H", p.height.to_string()),
        ("d", p.diameter.to_string()),
        ("sigma", p.sigma.to_string()),
        ("F_side", p.f_side.to_string()),
        ("T_c", p.t_chamber.to_string()),
        ("R_p", p.r_p.to_string()),
        ("R_p_growth", p.r_p_growth.to_string()),
        ("R_p_saturation", p.r_p_saturation.to_string()),
        ("p_wc", p.p_wc.to_string()),
        ("dH_sub", p.dh_sub.to_string()),
        ("K_v", p.k_v.to_string()),
        ("T0", p.t0.to_string()),
        ("n", p.n.to_string()),
        ("psat_a", p.psat_a.to_string()),
        ("psat_b", p.psat_b.to_string()),
        ("tb_min", scenario.bounds.tb_min.to_string()),
        ("tb_max", scenario.bounds.tb_max.to_string()),
        ("T_max", opt(scenario.limits.t_max)),
        ("v_max", opt(scenario.limits.v_max)),
        ("horizon", scenario.horizon.to_string()),
        ("rtol", s.integration.rtol.to_string()),
        ("atol", s.integration.atol.to_string()),
        ("max_step", s.integration.max_step.to_string()),
        ("initial_step", s.integration.initial_step.to_string()),
        ("event_tol", s.integration.event_tol.to_string()),
        ("max_steps", s.integration.max_steps.to_string()),
        ("element_dt", s.element_dt.to_string()),
        ("stages", s.stages.to_string()),
        ("lookahead", s.lookahead.to_string()),
        ("collocation_tol", s.collocation.tol.to_string()),
        ("collocation_max_iter", s.collocation.max_iter.to_string()),
        ("consistency_tol", s.consistency_tol.to_string()),
        ("max_switches", s.max_switches.to_string()),
    ];
    let mut out = String::new();
    for (k, v) in rows {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}
