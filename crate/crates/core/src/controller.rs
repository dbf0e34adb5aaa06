//! Hybrid execution: runs the active policy, watches the path constraints,
//! switches policy on events and stops once the front reaches the bottom.

use std::fmt;
use std::time::Instant;

use serde::Serialize;

use crate::collocation::{solve_segment_with, CollocationMesh, CollocationOptions, CollocationStats, SegmentStop};
use crate::error::{Error, Result};
use crate::integrator::{Direction, Event, EventHit, EventSpec, IntegrationOptions, IntegrationStats, Integrator};
use crate::model::{initial_state, interface_velocity, rhs_into, ModelParams, ProductState};
use crate::policies::{
    policy2_reduced_control, policy2_system, policy3_drifting_profile, policy3_system, ControlBounds, PolicyId,
    PolicySystem, Setpoints, SolverKind,
};
use crate::trajectory::Trajectory;

/// Margins an event residual must recede by before it can fire again after
/// a switch.
#[derive(Debug, Clone, PartialEq)]
pub struct Hysteresis {
    /// K.
    pub temperature: f64,
    /// Fraction of `v_max`.
    pub velocity: f64,
    /// K.
    pub control: f64,
}

impl Default for Hysteresis {
    fn default() -> Self {
        Hysteresis {
            temperature: 0.05,
            velocity: 0.005,
            control: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub integration: IntegrationOptions,
    pub collocation: CollocationOptions,
    /// Collocation element length, s.
    pub element_dt: f64,
    pub stages: usize,
    /// Event-blind collocation window, s.
    pub lookahead: f64,
    /// Max replay drift on temperatures, K.
    pub consistency_tol: f64,
    pub max_switches: usize,
    /// Two switches closer than this (s) count as chattering.
    pub min_switch_interval: f64,
    pub hysteresis: Hysteresis,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            integration: IntegrationOptions::default(),
            collocation: CollocationOptions::default(),
            element_dt: 60.0,
            stages: 3,
            lookahead: 7200.0,
            consistency_tol: 0.5,
            max_switches: 100,
            min_switch_interval: 1.0,
            hysteresis: Hysteresis::default(),
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        self.integration.validate()?;
        if !(self.element_dt > 0.0) {
            return Err(Error::config("element_dt", "must be positive"));
        }
        if ![2, 3, 5].contains(&self.stages) {
            return Err(Error::config("stages", "supported stage counts are 2, 3 and 5"));
        }
        if !(self.lookahead >= self.element_dt) {
            return Err(Error::config("lookahead", "must cover at least one element"));
        }
        if !(self.collocation.tol > 0.0) {
            return Err(Error::config("collocation_tol", "must be positive"));
        }
        if !(self.consistency_tol > 0.0) {
            return Err(Error::config("consistency_tol", "must be positive"));
        }
        let h = &self.hysteresis;
        if !(h.temperature >= 0.0 && h.velocity >= 0.0 && h.control >= 0.0) {
            return Err(Error::config("hysteresis", "margins must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub params: ModelParams,
    pub bounds: ControlBounds,
    pub limits: Setpoints,
    /// Safety stop, s.
    pub horizon: f64,
    pub solver: SolverSettings,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.bounds.validate()?;
        self.limits.validate()?;
        self.solver.validate()?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("horizon", "must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventTrigger {
    TemperatureLimit,
    VelocityLimit,
    ControlUpperBound,
    ControlLowerBound,
    Termination,
}

impl fmt::Display for EventTrigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventTrigger::TemperatureLimit => "temperature-limit",
            EventTrigger::VelocityLimit => "velocity-limit",
            EventTrigger::ControlUpperBound => "control-upper-bound",
            EventTrigger::ControlLowerBound => "control-lower-bound",
            EventTrigger::Termination => "termination",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub time: f64,
    pub trigger: EventTrigger,
    pub policy_before: Option<PolicyId>,
    pub policy_after: Option<PolicyId>,
}

/// The policy in force together with its setpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivePolicy {
    /// Constant shelf temperature at one of the bounds.
    Heat { tb: f64 },
    TrackTemperature { t_sp: f64 },
    TrackVelocity { v_sp: f64 },
}

impl ActivePolicy {
    pub fn id(&self) -> PolicyId {
        match self {
            ActivePolicy::Heat { .. } => PolicyId::Policy1,
            ActivePolicy::TrackTemperature { .. } => PolicyId::Policy2,
            ActivePolicy::TrackVelocity { .. } => PolicyId::Policy3,
        }
    }

    fn system(&self, params: &ModelParams, tb0: f64) -> Option<PolicySystem> {
        match *self {
            ActivePolicy::Heat { .. } => None,
            ActivePolicy::TrackTemperature { t_sp } => Some(policy2_system(params, t_sp, tb0)),
            ActivePolicy::TrackVelocity { v_sp } => Some(policy3_system(params, v_sp, tb0)),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentReport {
    pub policy: PolicyId,
    pub solver: SolverKind,
    pub t_start: f64,
    pub t_end: f64,
    /// End of the first collocation element; equals `t_start` for
    /// integrator segments.
    pub first_element_end: f64,
    /// Integrator work: the segment itself or the replays.
    pub integrator: IntegrationStats,
    pub collocation: Option<CollocationStats>,
    pub windows: usize,
    /// Largest replay drift on temperatures, K.
    pub max_drift: Option<f64>,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub trajectory: Trajectory,
    /// Active policy per trajectory sample.
    pub policies: Vec<PolicyId>,
    pub events: Vec<EventRecord>,
    pub t_f: f64,
    pub complete: bool,
    pub segments: Vec<SegmentReport>,
}

impl Solution {
    pub fn wall_time(&self) -> f64 {
        self.segments.iter().map(|s| s.wall_time).sum()
    }

    /// Interface velocity at every sample, m/s.
    pub fn interface_rates(&self, params: &ModelParams) -> Result<Vec<f64>> {
        let n = params.n;
        self.trajectory
            .states()
            .iter()
            .map(|x| interface_velocity(x[0], x[n], params))
            .collect()
    }

    pub fn switch_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.trigger != EventTrigger::Termination && e.policy_before.is_some())
            .count()
    }

    fn extend(&mut self, seg: Trajectory, policy: PolicyId) {
        if seg.t_start() <= self.trajectory.t_end() {
            self.policies.pop();
        }
        self.policies.extend(std::iter::repeat_n(policy, seg.len()));
        self.trajectory.append(seg);
    }
}

/// Events watched while `active` runs, in tie-break priority order.
fn active_triggers(active: PolicyId, scenario: &Scenario) -> Vec<EventTrigger> {
    use EventTrigger::*;
    let t = scenario.limits.t_max.map(|_| TemperatureLimit);
    let v = scenario.limits.v_max.map(|_| VelocityLimit);
    let list: Vec<Option<EventTrigger>> = match active {
        PolicyId::Policy1 => vec![t, v],
        PolicyId::Policy2 => vec![v, Some(ControlUpperBound), Some(ControlLowerBound)],
        PolicyId::Policy3 => vec![t, Some(ControlUpperBound), Some(ControlLowerBound)],
    };
    list.into_iter().flatten().chain([Termination]).collect()
}

fn trigger_residual(trigger: EventTrigger, x: &[f64], tb: f64, scenario: &Scenario) -> f64 {
    let p = &scenario.params;
    let n = p.n;
    match trigger {
        EventTrigger::TemperatureLimit => {
            let t_max = scenario.limits.t_max.unwrap_or(f64::INFINITY);
            x[..n].iter().copied().fold(f64::NEG_INFINITY, f64::max) - t_max
        }
        EventTrigger::VelocityLimit => {
            let v_max = scenario.limits.v_max.unwrap_or(f64::INFINITY);
            interface_velocity(x[0], x[n], p).map_or(f64::NAN, |v| v - v_max)
        }
        EventTrigger::ControlUpperBound => tb - scenario.bounds.tb_max,
        EventTrigger::ControlLowerBound => scenario.bounds.tb_min - tb,
        EventTrigger::Termination => x[n] - p.end_position(),
    }
}

fn rearm_margin(trigger: EventTrigger, scenario: &Scenario) -> f64 {
    let h = &scenario.solver.hysteresis;
    match trigger {
        EventTrigger::TemperatureLimit => h.temperature,
        EventTrigger::VelocityLimit => h.velocity * scenario.limits.v_max.unwrap_or(0.0),
        EventTrigger::ControlUpperBound | EventTrigger::ControlLowerBound => h.control,
        EventTrigger::Termination => 0.0,
    }
}

/// Event residuals relevant to `active`; each fires when it rises through
/// zero. Termination is measured against the end position of the front.
pub fn event_functions(
    state: &ProductState,
    tb: f64,
    scenario: &Scenario,
    active: PolicyId,
) -> Vec<(EventTrigger, f64)> {
    let x = state.to_vec();
    active_triggers(active, scenario)
        .into_iter()
        .map(|tr| (tr, trigger_residual(tr, &x, tb, scenario)))
        .collect()
}

fn event_spec<'a>(triggers: &[EventTrigger], scenario: &'a Scenario, hysteresis: bool) -> EventSpec<'a> {
    let mut spec = EventSpec::none();
    for &tr in triggers {
        let margin = if hysteresis { rearm_margin(tr, scenario) } else { 0.0 };
        spec.push(
            Event::new(move |_t, x: &[f64], u| trigger_residual(tr, x, u, scenario), Direction::Rising).with_rearm(margin),
        );
    }
    spec
}

pub fn select_policy(trigger: Option<EventTrigger>, scenario: &Scenario) -> Result<ActivePolicy> {
    let b = &scenario.bounds;
    match trigger {
        None | Some(EventTrigger::ControlUpperBound) => Ok(ActivePolicy::Heat { tb: b.tb_max }),
        Some(EventTrigger::ControlLowerBound) => Ok(ActivePolicy::Heat { tb: b.tb_min }),
        Some(EventTrigger::TemperatureLimit) => scenario
            .limits
            .t_max
            .map(|t_sp| ActivePolicy::TrackTemperature { t_sp })
            .ok_or_else(|| Error::config("T_max", "temperature event without a temperature limit")),
        Some(EventTrigger::VelocityLimit) => scenario
            .limits
            .v_max
            .map(|v_sp| ActivePolicy::TrackVelocity { v_sp })
            .ok_or_else(|| Error::config("v_max", "velocity event without a velocity limit")),
        Some(EventTrigger::Termination) => Err(Error::Structural("termination does not select a policy".into())),
    }
}

/// Policy at the start of drying: a limit already reached starts its
/// tracking policy.
fn initial_policy(x: &[f64], scenario: &Scenario) -> Result<Option<EventTrigger>> {
    for tr in [EventTrigger::TemperatureLimit, EventTrigger::VelocityLimit] {
        let active = match tr {
            EventTrigger::TemperatureLimit => scenario.limits.t_max.is_some(),
            _ => scenario.limits.v_max.is_some(),
        };
        if active && trigger_residual(tr, x, scenario.bounds.tb_max, scenario) >= 0.0 {
            return Ok(Some(tr));
        }
    }
    Ok(None)
}

/// State drying starts from. A run that opens on velocity tracking starts
/// from the drifting Policy-3 profile; when that profile needs a shelf
/// temperature outside the bounds the run opens on the violated bound
/// instead, from the uniform profile.
pub fn start_state(scenario: &Scenario) -> Result<Vec<f64>> {
    opening(scenario).map(|(x0, _)| x0)
}

fn opening(scenario: &Scenario) -> Result<(Vec<f64>, Option<EventTrigger>)> {
    let p = &scenario.params;
    let mut x0 = initial_state(p).to_vec();
    let trigger = initial_policy(&x0, scenario)?;
    if trigger == Some(EventTrigger::VelocityLimit) {
        let v_sp = scenario.limits.v_max.expect("velocity limit");
        let (profile, tb) = policy3_drifting_profile(p, v_sp, x0[p.n])?;
        if tb > scenario.bounds.tb_max {
            return Ok((x0, Some(EventTrigger::ControlUpperBound)));
        }
        if tb < scenario.bounds.tb_min {
            return Ok((x0, Some(EventTrigger::ControlLowerBound)));
        }
        x0[..p.n].copy_from_slice(&profile);
    }
    Ok((x0, trigger))
}

/// Shelf temperature at the very start of a tracking policy.
fn initial_control(active: ActivePolicy, x: &[f64], scenario: &Scenario) -> Result<f64> {
    let p = &scenario.params;
    let b = &scenario.bounds;
    match active {
        ActivePolicy::Heat { tb } => Ok(tb),
        ActivePolicy::TrackTemperature { t_sp } => {
            Ok(b.clamp(policy2_reduced_control(&ProductState::from_slice(x), p, t_sp, b)?))
        }
        ActivePolicy::TrackVelocity { v_sp } => Ok(b.clamp(policy3_drifting_profile(p, v_sp, x[p.n])?.1)),
    }
}

enum SegmentEnd {
    Switch(EventTrigger),
    Terminated,
    Horizon,
}

struct SegmentOutcome {
    trajectory: Trajectory,
    end: SegmentEnd,
    report: SegmentReport,
}

fn accumulate(total: &mut IntegrationStats, s: &IntegrationStats) {
    total.steps += s.steps;
    total.rejected += s.rejected;
    total.newton_iterations += s.newton_iterations;
    total.rhs_evaluations += s.rhs_evaluations;
    total.jacobians += s.jacobians;
}

fn accumulate_collocation(total: &mut CollocationStats, s: &CollocationStats) {
    total.elements += s.elements;
    total.newton_iterations += s.newton_iterations;
    total.residual_evaluations += s.residual_evaluations;
    total.retries += s.retries;
    total.max_residual = total.max_residual.max(s.max_residual);
}

fn heating_segment(scenario: &Scenario, tb: f64, x0: &[f64], t0: f64, entry: bool) -> Result<SegmentOutcome> {
    let p = &scenario.params;
    let triggers = active_triggers(PolicyId::Policy1, scenario);
    let events = event_spec(&triggers, scenario, entry);
    let pattern = p.jacobian_pattern();
    let run = Integrator::new(scenario.solver.integration.clone())
        .with_pattern(&pattern)
        .run(|_t, x, u, out| rhs_into(x, u, p, out), |_| tb, x0, t0, scenario.horizon, &events)?;
    let end = match &run.event {
        Some(hit) if triggers[hit.index] == EventTrigger::Termination => SegmentEnd::Terminated,
        Some(hit) => SegmentEnd::Switch(triggers[hit.index]),
        None => SegmentEnd::Horizon,
    };
    Ok(SegmentOutcome {
        report: SegmentReport {
            policy: PolicyId::Policy1,
            solver: SolverKind::AdaptiveIntegrator,
            t_start: t0,
            t_end: run.trajectory.t_end(),
            first_element_end: t0,
            integrator: run.stats.clone(),
            collocation: None,
            windows: 0,
            max_drift: None,
            wall_time: 0.0,
        },
        trajectory: run.trajectory,
        end,
    })
}

/// Result of re-integrating the model under a collocation control channel.
#[derive(Debug, Clone)]
pub struct Replay {
    pub trajectory: Trajectory,
    pub event: Option<(EventTrigger, EventHit)>,
    pub stats: IntegrationStats,
}

/// Re-integrates the model ODEs from `state0` with the shelf temperature
/// interpolated from `control`, watching every event relevant to `active`.
/// `hysteresis` disarms events that start near their threshold.
pub fn replay_detect(
    control: &Trajectory,
    state0: &[f64],
    t0: f64,
    scenario: &Scenario,
    active: PolicyId,
    hysteresis: bool,
) -> Result<Replay> {
    let p = &scenario.params;
    let t_end = control.t_end();
    if t_end <= t0 {
        return Ok(Replay {
            trajectory: Trajectory::new(t0, state0.to_vec(), control.control_at(t0)?),
            event: None,
            stats: IntegrationStats::default(),
        });
    }
    let triggers = active_triggers(active, scenario);
    let events = event_spec(&triggers, scenario, hysteresis);
    let pattern = p.jacobian_pattern();
    let mut tstops: Vec<f64> = control.pieces().iter().map(|pc| pc.end).filter(|&t| t > t0 && t < t_end).collect();
    tstops.dedup();
    let (lo, hi) = (control.t_start(), t_end);
    let u = |t: f64| control.control_at(t.clamp(lo, hi)).unwrap_or(f64::NAN);
    let run = Integrator::new(scenario.solver.integration.clone())
        .with_pattern(&pattern)
        .with_tstops(tstops)
        .run(|_t, x, tb, out| rhs_into(x, tb, p, out), u, state0, t0, t_end, &events)?;
    Ok(Replay {
        event: run.event.map(|hit| (triggers[hit.index], hit)),
        trajectory: run.trajectory,
        stats: run.stats,
    })
}

/// Largest temperature gap between collocation samples at or after `from`
/// and the replay.
fn replay_drift(colloc: &Trajectory, replay: &Trajectory, from: f64, n: usize) -> Result<f64> {
    let mut drift: f64 = 0.0;
    for (t, x) in colloc.times().iter().zip(colloc.states()) {
        if *t < from || *t > replay.t_end() {
            continue;
        }
        let (y, _) = replay.dense(*t)?;
        for i in 0..n {
            drift = drift.max((x[i] - y[i]).abs());
        }
    }
    Ok(drift)
}

fn tracking_segment(
    scenario: &Scenario,
    active: ActivePolicy,
    tb0: f64,
    x0: &[f64],
    t0: f64,
    entry: bool,
) -> Result<SegmentOutcome> {
    let p = &scenario.params;
    let cfg = &scenario.solver;
    let n = p.n;
    let stop = SegmentStop {
        index: n,
        value: p.end_position(),
        rate: Box::new(move |x: &[f64]| interface_velocity(x[0], x[n], p).unwrap_or(0.0)),
    };
    let mut traj = Trajectory::new(t0, x0.to_vec(), tb0);
    let mut report = SegmentReport {
        policy: active.id(),
        solver: SolverKind::Collocation,
        t_start: t0,
        t_end: t0,
        first_element_end: t0,
        integrator: IntegrationStats::default(),
        collocation: Some(CollocationStats::default()),
        windows: 0,
        max_drift: Some(0.0),
        wall_time: 0.0,
    };
    let mut x = x0.to_vec();
    let mut tb = tb0;
    let mut t = t0;
    let end = loop {
        let t_w = (t + cfg.lookahead).min(scenario.horizon);
        if t_w <= t {
            break SegmentEnd::Horizon;
        }
        let system = active.system(p, tb).expect("tracking policy");
        let mesh = CollocationMesh::uniform(t, t_w, cfg.element_dt, cfg.stages)?;
        let col = solve_segment_with(&system.residual, &x, &[tb], &mesh, &cfg.collocation, Some(&stop))?;
        let first = report.windows == 0;
        report.windows += 1;
        if first {
            report.first_element_end = mesh.boundaries()[1].min(col.trajectory.t_end());
        }
        if let Some(total) = report.collocation.as_mut() {
            accumulate_collocation(total, &col.stats);
        }

        let replay = replay_detect(&col.trajectory, &x, t, scenario, active.id(), first && entry)?;
        accumulate(&mut report.integrator, &replay.stats);
        let from = if first { report.first_element_end } else { t };
        let drift = replay_drift(&col.trajectory, &replay.trajectory, from, n)?;
        report.max_drift = report.max_drift.map(|d| d.max(drift));
        if drift > cfg.consistency_tol {
            return Err(Error::Consistency {
                drift,
                limit: cfg.consistency_tol,
            });
        }

        let mut window = col.trajectory;
        if let Some((trigger, hit)) = replay.event.filter(|(tr, _)| *tr != EventTrigger::Termination) {
            window.truncate_at(hit.t)?;
            traj.append(window);
            break SegmentEnd::Switch(trigger);
        }
        traj.append(window);
        if col.stopped {
            break SegmentEnd::Terminated;
        }
        if t_w >= scenario.horizon {
            break SegmentEnd::Horizon;
        }
        x = traj.last_state().to_vec();
        tb = traj.last_control();
        t = traj.t_end();
    };
    report.t_end = traj.t_end();
    Ok(SegmentOutcome {
        trajectory: traj,
        end,
        report,
    })
}

/// Runs the hybrid system from the initial state until the front reaches
/// the bottom of the product or the horizon runs out.
pub fn run(scenario: &Scenario) -> Result<Solution> {
    scenario.validate()?;
    let p = &scenario.params;
    let (x0, entry_trigger) = opening(scenario)?;
    let mut active = select_policy(entry_trigger, scenario)?;
    let mut tb = initial_control(active, &x0, scenario)?;
    let mut sol = Solution {
        trajectory: Trajectory::new(0.0, x0.clone(), tb),
        policies: vec![active.id()],
        events: Vec::new(),
        t_f: 0.0,
        complete: false,
        segments: Vec::new(),
    };
    if let Some(trigger) = entry_trigger {
        sol.events.push(EventRecord {
            time: 0.0,
            trigger,
            policy_before: None,
            policy_after: Some(active.id()),
        });
    }

    let mut x = x0;
    let mut t = 0.0;
    let mut switches = 0;
    let mut last_switch: Option<f64> = None;
    let mut entry = false;
    loop {
        let clock = Instant::now();
        let outcome = match active {
            ActivePolicy::Heat { tb: fixed } => heating_segment(scenario, fixed, &x, t, entry),
            _ => tracking_segment(scenario, active, tb, &x, t, entry),
        }
        .map_err(|e| Error::Segment {
            t0: t,
            policy: active.id().to_string(),
            source: Box::new(e),
        })?;
        let SegmentOutcome {
            trajectory,
            end,
            mut report,
        } = outcome;
        report.wall_time = clock.elapsed().as_secs_f64();
        sol.segments.push(report);
        sol.extend(trajectory, active.id());
        t = sol.trajectory.t_end();
        x = sol.trajectory.last_state().to_vec();
        tb = sol.trajectory.last_control();

        match end {
            SegmentEnd::Terminated => {
                sol.t_f = t;
                sol.complete = true;
                sol.events.push(EventRecord {
                    time: t,
                    trigger: EventTrigger::Termination,
                    policy_before: Some(active.id()),
                    policy_after: Some(active.id()),
                });
                return Ok(sol);
            }
            SegmentEnd::Horizon => {
                sol.t_f = t;
                let fraction = x[p.n] / p.height;
                return Err(Error::IncompleteDrying {
                    fraction,
                    partial: Box::new(sol),
                });
            }
            SegmentEnd::Switch(trigger) => {
                let next = select_policy(Some(trigger), scenario)?;
                switches += 1;
                let too_close = last_switch.is_some_and(|s| t - s < scenario.solver.min_switch_interval);
                if switches > scenario.solver.max_switches || too_close {
                    return Err(Error::Chattering { t, switches });
                }
                last_switch = Some(t);
                sol.events.push(EventRecord {
                    time: t,
                    trigger,
                    policy_before: Some(active.id()),
                    policy_after: Some(next.id()),
                });
                active = next;
                entry = true;
            }
        }
    }
}
