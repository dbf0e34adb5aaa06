//! Output files: trajectory table, event trace and run summaries.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::controller::{EventRecord, Scenario, SegmentReport, Solution};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "both" => Ok(OutputFormat::Both),
            other => Err(Error::config("format", format!("expected csv, json or both, got `{other}`"))),
        }
    }
}

impl OutputFormat {
    fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

pub fn csv_header(n: usize) -> Vec<String> {
    let mut h = vec!["t_s".to_string()];
    h.extend((1..=n).map(|i| format!("T_{i}_K")));
    h.extend(["S_m", "dSdt_m_per_s", "Tb_K", "policy_id"].map(String::from));
    h
}

pub fn write_trajectory_csv(path: &Path, solution: &Solution, scenario: &Scenario) -> Result<()> {
    let n = scenario.params.n;
    let rates = solution.interface_rates(&scenario.params)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(csv_header(n)).map_err(csv_error)?;
    let tr = &solution.trajectory;
    for i in 0..tr.len() {
        let x = &tr.states()[i];
        let mut row = Vec::with_capacity(n + 5);
        row.push(tr.times()[i].to_string());
        row.extend(x.iter().map(|v| v.to_string()));
        row.push(rates[i].to_string());
        row.push(tr.controls()[i].to_string());
        row.push(solution.policies[i].number().to_string());
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Run outcome with no wall-clock content, so repeated runs compare equal.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub complete: bool,
    pub t_f_s: f64,
    pub t_f_h: f64,
    pub final_fraction: f64,
    pub switches: usize,
    pub samples: usize,
    pub max_temperature_k: f64,
    pub max_velocity_m_per_s: f64,
    pub tb_min_k: f64,
    pub tb_max_k: f64,
    pub segments: Vec<SegmentReport>,
}

impl Summary {
    pub fn new(solution: &Solution, scenario: &Scenario) -> Result<Self> {
        let p = &scenario.params;
        let tr = &solution.trajectory;
        let max_t = tr
            .states()
            .iter()
            .flat_map(|x| x[..p.n].iter().copied())
            .fold(f64::NEG_INFINITY, f64::max);
        let max_v = solution
            .interface_rates(p)?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = tr
            .controls()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &u| (a.min(u), b.max(u)));
        Ok(Summary {
            scenario: scenario.name.clone(),
            complete: solution.complete,
            t_f_s: solution.t_f,
            t_f_h: solution.t_f / 3600.0,
            final_fraction: tr.last_state()[p.n] / p.height,
            switches: solution.switch_count(),
            samples: tr.len(),
            max_temperature_k: max_t,
            max_velocity_m_per_s: max_v,
            tb_min_k: lo,
            tb_max_k: hi,
            segments: solution.segments.clone(),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub total_wall_s: f64,
    pub segment_wall_s: Vec<f64>,
}

impl Timing {
    pub fn new(solution: &Solution) -> Self {
        Timing {
            total_wall_s: solution.wall_time(),
            segment_wall_s: solution.segments.iter().map(|s| s.wall_time).collect(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_events(path: &Path, events: &[EventRecord]) -> Result<()> {
    write_json(path, &events)
}

/// Writes the requested files into `dir` and returns their paths.
pub fn write_outputs(dir: &Path, solution: &Solution, scenario: &Scenario, format: OutputFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if format.csv() {
        let path = dir.join("trajectory.csv");
        write_trajectory_csv(&path, solution, scenario)?;
        written.push(path);
    }
    if format.json() {
        let path = dir.join("events.json");
        write_events(&path, &solution.events)?;
        written.push(path);
        let path = dir.join("summary.json");
        write_json(&path, &Summary::new(solution, scenario)?)?;
        written.push(path);
        let path = dir.join("timing.json");
        write_json(&path, &Timing::new(solution))?;
        written.push(path);
    }
    Ok(written)
}
