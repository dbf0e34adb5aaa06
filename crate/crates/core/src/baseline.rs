//! Direct-method reference: piecewise-constant shelf temperature on a
//! time-scaled grid, tuned by compass search on a penalized drying time.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::controller::{start_state, Scenario, Solution};
use crate::error::{Error, Result};
use crate::integrator::{Direction, Event, EventSpec, Integrator};
use crate::model::{interface_velocity, rhs_into};
use crate::trajectory::Trajectory;

/// Penalty weight on the violation measure, s per unit.
pub const VIOLATION_WEIGHT: f64 = 1e6;
/// Penalty weight on the undried fraction at the end of the horizon, s.
pub const COMPLETION_WEIGHT: f64 = 1e6;
/// Initial trial horizon over the reference drying time.
pub const HORIZON_MARGIN: f64 = 1.05;
/// Violation below which a control counts as feasible.
pub const FEASIBLE_VIOLATION: f64 = 1e-3;

/// Shelf temperature held constant on each of `values.len()` equal
/// intervals of `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvpControl {
    pub values: Vec<f64>,
    pub horizon: f64,
}

impl CvpControl {
    pub fn new(values: Vec<f64>, horizon: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("N_intervals", "at least one interval is required"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::config("horizon", "must be positive and finite"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("values", "must be finite"));
        }
        Ok(CvpControl { values, horizon })
    }

    pub fn constant(value: f64, intervals: usize, horizon: f64) -> Result<Self> {
        CvpControl::new(vec![value; intervals], horizon)
    }

    /// Samples `solution`'s shelf temperature on the interval grid, taking
    /// the smallest value seen in each interval.
    pub fn resample(solution: &Solution, intervals: usize, horizon: f64) -> Result<Self> {
        let tr = &solution.trajectory;
        let width = horizon / intervals as f64;
        let values = (0..intervals)
            .map(|k| {
                let (a, b) = (k as f64 * width, (k + 1) as f64 * width);
                let end_value = tr.control_at(b.min(tr.t_end())).unwrap_or(tr.last_control());
                tr.times()
                    .iter()
                    .zip(tr.controls())
                    .filter(|(t, _)| **t > a && **t <= b)
                    .map(|(_, u)| *u)
                    .fold(end_value, f64::min)
            })
            .collect();
        CvpControl::new(values, horizon)
    }

    pub fn intervals(&self) -> usize {
        self.values.len()
    }

    pub fn width(&self) -> f64 {
        self.horizon / self.values.len() as f64
    }

    pub fn boundaries(&self) -> Vec<f64> {
        (0..=self.intervals()).map(|k| k as f64 * self.width()).collect()
    }

    /// Left-continuous: a boundary belongs to the interval it closes.
    pub fn value_at(&self, t: f64) -> f64 {
        let w = self.width();
        let last = self.intervals() - 1;
        let mut k = ((t / w).ceil() as isize - 1).clamp(0, last as isize) as usize;
        if k > 0 && t <= k as f64 * w {
            k -= 1;
        } else if k < last && t > (k + 1) as f64 * w {
            k += 1;
        }
        self.values[k]
    }

    fn projected(&self, scenario: &Scenario) -> CvpControl {
        CvpControl {
            values: self.values.iter().map(|&v| scenario.bounds.clamp(v)).collect(),
            horizon: self.horizon,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixedControlRun {
    pub trajectory: Trajectory,
    /// Time the front reached the end position, if it did.
    pub t_f: Option<f64>,
    /// Integral of the positive parts of the path-constraint residuals:
    /// K s for temperature, s for the relative velocity excess.
    pub violation: f64,
    /// Front position over product height at the end of the run.
    pub fraction: f64,
}

/// Positive parts of the path-constraint residuals at one state.
fn excess(x: &[f64], scenario: &Scenario) -> f64 {
    let p = &scenario.params;
    let n = p.n;
    let mut e = 0.0;
    if let Some(t_max) = scenario.limits.t_max {
        let hottest = x[..n].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        e += (hottest - t_max).max(0.0);
    }
    if let Some(v_max) = scenario.limits.v_max {
        if let Ok(v) = interface_velocity(x[0], x[n], p) {
            e += (v / v_max - 1.0).max(0.0);
        }
    }
    e
}

/// Trapezoid rule over the samples with each step split in four on the
/// dense output.
fn violation_integral(tr: &Trajectory, scenario: &Scenario) -> Result<f64> {
    const SPLIT: usize = 4;
    let mut total = 0.0;
    let times = tr.times();
    let mut prev = excess(&tr.states()[0], scenario);
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / SPLIT as f64;
        for j in 1..=SPLIT {
            let t = if j == SPLIT { w[1] } else { w[0] + j as f64 * h };
            let (x, _) = tr.dense(t)?;
            let e = excess(&x, scenario);
            total += 0.5 * h * (prev + e);
            prev = e;
        }
    }
    Ok(total)
}

pub fn simulate_fixed_control(control: &CvpControl, scenario: &Scenario) -> Result<FixedControlRun> {
    let p = &scenario.params;
    let n = p.n;
    let control = control.projected(scenario);
    let s_end = p.end_position();
    let mut events = EventSpec::none();
    events.push(Event::new(move |_t, x: &[f64], _u| x[n] - s_end, Direction::Rising));
    let pattern = p.jacobian_pattern();
    let mut stops = control.boundaries();
    stops.retain(|&t| t > 0.0 && t < control.horizon);
    let x0 = start_state(scenario)?;
    let run = Integrator::new(scenario.solver.integration.clone())
        .with_pattern(&pattern)
        .with_tstops(stops)
        .run(
            |_t, x, u, out| rhs_into(x, u, p, out),
            |t| control.value_at(t),
            &x0,
            0.0,
            control.horizon,
            &events,
        )?;
    let violation = violation_integral(&run.trajectory, scenario)?;
    let fraction = run.trajectory.last_state()[n] / p.height;
    Ok(FixedControlRun {
        t_f: run.event.as_ref().map(|hit| hit.t),
        trajectory: run.trajectory,
        violation,
        fraction,
    })
}

#[derive(Debug, Clone)]
pub struct CvpOptions {
    pub intervals: usize,
    /// Simulation budget shared by all seeds.
    pub max_evaluations: usize,
    /// Smallest poll step on the unit-scaled shelf temperatures.
    pub min_step: f64,
    pub seed: u64,
}

impl Default for CvpOptions {
    fn default() -> Self {
        CvpOptions {
            intervals: 32,
            max_evaluations: 5000,
            min_step: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub label: String,
    pub objective: f64,
    pub t_f: Option<f64>,
    pub violation: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvpResult {
    pub control: CvpControl,
    pub t_f: f64,
    pub objective: f64,
    pub violation: f64,
    pub evaluations: usize,
    pub wall_time: f64,
    pub seeds: Vec<SeedOutcome>,
}

/// Penalized drying time of one candidate; failed simulations score
/// infinity.
fn objective(control: &CvpControl, scenario: &Scenario) -> (f64, Option<FixedControlRun>) {
    match simulate_fixed_control(control, scenario) {
        Ok(run) => {
            let time = run.t_f.unwrap_or(control.horizon);
            let undried = (1.0 - run.fraction).max(0.0);
            let j = time + VIOLATION_WEIGHT * run.violation + COMPLETION_WEIGHT * undried;
            (j, Some(run))
        }
        Err(_) => (f64::INFINITY, None),
    }
}

struct Search<'a> {
    scenario: &'a Scenario,
    evaluations: usize,
    budget: usize,
}

impl Search<'_> {
    /// Decision vector: shelf temperatures scaled to `[0, 1]`, then the log
    /// of the horizon.
    fn decode(&self, z: &[f64]) -> CvpControl {
        let b = &self.scenario.bounds;
        let n = z.len() - 1;
        CvpControl {
            values: z[..n].iter().map(|u| b.tb_min + u * (b.tb_max - b.tb_min)).collect(),
            horizon: z[n].exp(),
        }
    }

    fn eval(&mut self, z: &[f64]) -> f64 {
        self.evaluations += 1;
        objective(&self.decode(z), self.scenario).0
    }

    fn compass(&mut self, mut z: Vec<f64>, budget_end: usize, min_step: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
        let n = z.len() - 1;
        let log_lo = z[n] - 4f64.ln();
        let log_hi = z[n] + 4f64.ln();
        let mut f = self.eval(&z);
        let mut step = 0.25;
        let mut order: Vec<usize> = (0..=n).collect();
        while step >= min_step && self.evaluations < budget_end.min(self.budget) {
            order.shuffle(rng);
            let mut improved = false;
            'poll: for &i in &order {
                for sign in [1.0, -1.0] {
                    if self.evaluations >= budget_end.min(self.budget) {
                        break 'poll;
                    }
                    let mut trial = z.clone();
                    trial[i] = if i == n {
                        (z[i] + sign * step).clamp(log_lo, log_hi)
                    } else {
                        (z[i] + sign * step).clamp(0.0, 1.0)
                    };
                    if trial[i] == z[i] {
                        continue;
                    }
                    let ft = self.eval(&trial);
                    if ft < f {
                        z = trial;
                        f = ft;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        (z, f)
    }
}

/// Minimizes drying time plus penalties from three seeds: all at the upper
/// bound, all at mid-range, and `reference` resampled when given.
pub fn optimize_cvp(scenario: &Scenario, opts: &CvpOptions, reference: Option<&Solution>) -> Result<CvpResult> {
    scenario.validate()?;
    if !(4..=64).contains(&opts.intervals) {
        return Err(Error::config("N_intervals", "must lie in [4, 64]"));
    }
    let clock = Instant::now();
    let b = scenario.bounds;
    let n = opts.intervals;
    let mut search = Search {
        scenario,
        evaluations: 0,
        budget: opts.max_evaluations,
    };

    // Horizon guess from the fastest admissible control.
    let fastest = simulate_fixed_control(&CvpControl::constant(b.tb_max, 1, scenario.horizon)?, scenario)?;
    search.evaluations += 1;
    let base_horizon = (HORIZON_MARGIN * reference.map(|s| s.t_f).or(fastest.t_f).unwrap_or(scenario.horizon))
        .min(scenario.horizon);

    let unit = |v: f64| ((v - b.tb_min) / (b.tb_max - b.tb_min)).clamp(0.0, 1.0);
    let mut seeds: Vec<(String, Vec<f64>)> = vec![
        ("upper-bound".into(), vec![1.0; n]),
        ("mid-range".into(), vec![0.5; n]),
    ];
    if let Some(sol) = reference {
        let c = CvpControl::resample(sol, n, base_horizon)?;
        seeds.push(("simulation-based".into(), c.values.iter().map(|&v| unit(v)).collect()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let share = opts.max_evaluations.saturating_sub(search.evaluations) / seeds.len();
    let mut outcomes = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (label, values) in seeds {
        let start = search.evaluations;
        let mut z = values;
        z.push(base_horizon.ln());
        let (z, f) = search.compass(z, start + share, opts.min_step, &mut rng);
        let (_, run) = objective(&search.decode(&z), scenario);
        outcomes.push(SeedOutcome {
            label,
            objective: f,
            t_f: run.as_ref().and_then(|r| r.t_f),
            violation: run.as_ref().map_or(f64::INFINITY, |r| r.violation),
            evaluations: search.evaluations - start,
        });
        let feasible = run
            .as_ref()
            .is_some_and(|r| r.t_f.is_some() && r.violation <= FEASIBLE_VIOLATION);
        if feasible && best.as_ref().is_none_or(|(fb, _)| f < *fb) {
            best = Some((f, z));
        }
    }
    let (f, z) = best.ok_or(Error::NoFeasiblePoint {
        evaluations: search.evaluations,
    })?;
    let control = search.decode(&z).projected(scenario);
    let run = simulate_fixed_control(&control, scenario)?;
    Ok(CvpResult {
        t_f: run.t_f.expect("feasible seed completes drying"),
        violation: run.violation,
        control,
        objective: f,
        evaluations: search.evaluations,
        wall_time: clock.elapsed().as_secs_f64(),
        seeds: outcomes,
    })
}
