//! Adaptive three-stage Radau IIA integrator (order 5, L-stable) with dense
//! output and event localization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::jacobian::JacobianPattern;
use crate::radau::{lagrange_weights, RadauTableau};
use crate::trajectory::{Piece, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub initial_step: f64,
    pub event_tol: f64,
    pub max_steps: usize,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions {
            rtol: 1e-6,
            atol: 1e-8,
            max_step: 600.0,
            initial_step: 1.0,
            event_tol: 1e-3,
            max_steps: 200_000,
        }
    }
}

impl IntegrationOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("max_step", self.max_step),
            ("initial_step", self.initial_step),
            ("event_tol", self.event_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.event_tol < self.max_step) {
            return Err(Error::config("event_tol", "must be smaller than max_step"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Negative to positive.
    Rising,
    /// Positive to negative.
    Falling,
    Either,
}

type EventFunction<'a> = Box<dyn Fn(f64, &[f64], f64) -> f64 + 'a>;

pub struct Event<'a> {
    function: EventFunction<'a>,
    pub direction: Direction,
    pub terminal: bool,
    /// The event stays disarmed while its value sits within this margin of
    /// the triggering side.
    pub rearm: f64,
}

impl<'a> Event<'a> {
    pub fn new(function: impl Fn(f64, &[f64], f64) -> f64 + 'a, direction: Direction) -> Self {
        Event {
            function: Box::new(function),
            direction,
            terminal: true,
            rearm: 0.0,
        }
    }

    pub fn non_terminal(mut self) -> Self {
        self.terminal = false;
        self
    }

    pub fn with_rearm(mut self, margin: f64) -> Self {
        self.rearm = margin;
        self
    }

    pub fn eval(&self, t: f64, x: &[f64], u: f64) -> f64 {
        (self.function)(t, x, u)
    }

    /// Whether a value at the segment start leaves the event armed.
    fn armed_at(&self, g: f64) -> bool {
        match self.direction {
            Direction::Rising => g < -self.rearm,
            Direction::Falling => g > self.rearm,
            Direction::Either => g.abs() > self.rearm,
        }
    }

    fn crossed(&self, before: f64, after: f64) -> bool {
        match self.direction {
            Direction::Rising => before < 0.0 && after >= 0.0,
            Direction::Falling => before > 0.0 && after <= 0.0,
            Direction::Either => (before < 0.0 && after >= 0.0) || (before > 0.0 && after <= 0.0),
        }
    }
}

#[derive(Default)]
pub struct EventSpec<'a> {
    pub events: Vec<Event<'a>>,
}

impl<'a> EventSpec<'a> {
    pub fn none() -> Self {
        EventSpec { events: Vec::new() }
    }

    pub fn push(&mut self, event: Event<'a>) {
        self.events.push(event);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventHit {
    pub index: usize,
    pub t: f64,
    pub state: Vec<f64>,
    pub control: f64,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct IntegrationStats {
    pub steps: usize,
    pub rejected: usize,
    pub newton_iterations: usize,
    pub rhs_evaluations: usize,
    pub jacobians: usize,
}

#[derive(Debug, Clone)]
pub struct Integration {
    pub trajectory: Trajectory,
    /// First terminal event, if one ended the run.
    pub event: Option<EventHit>,
    /// Non-terminal crossings in time order.
    pub crossings: Vec<EventHit>,
    pub stats: IntegrationStats,
}

// Error-estimate constants of the embedded formula.
const DD1: f64 = -(13.0 + 7.0 * 2.449_489_742_783_178) / 3.0;
const DD2: f64 = (-13.0 + 7.0 * 2.449_489_742_783_178) / 3.0;
const DD3: f64 = -1.0 / 3.0;
const MAX_NEWTON: usize = 7;
const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

/// Real eigenvalue of the inverse Butcher matrix.
fn gamma0() -> f64 {
    let cbrt81 = 81f64.cbrt();
    let cbrt9 = 9f64.cbrt();
    30.0 / (6.0 + cbrt81 - cbrt9)
}

pub struct Integrator<'p> {
    opts: IntegrationOptions,
    pattern: Option<&'p JacobianPattern>,
    tstops: Vec<f64>,
}

struct Step {
    h: f64,
    z: Vec<Vec<f64>>,
    err: f64,
    newton: usize,
}

impl<'p> Integrator<'p> {
    pub fn new(opts: IntegrationOptions) -> Self {
        Integrator {
            opts,
            pattern: None,
            tstops: Vec::new(),
        }
    }

    pub fn with_pattern(mut self, pattern: &'p JacobianPattern) -> Self {
        self.pattern = Some(pattern);
        self
    }

    /// Times the integrator must land on exactly, such as control breakpoints.
    pub fn with_tstops(mut self, mut tstops: Vec<f64>) -> Self {
        tstops.sort_by(f64::total_cmp);
        self.tstops = tstops;
        self
    }

    /// Integrates `x' = f(t, x, u(t))` from `t0` to `t_end` or the first
    /// terminal event. `control` is treated as left-continuous at `tstops`.
    pub fn run<F, C>(
        &self,
        mut derivative: F,
        control: C,
        x0: &[f64],
        t0: f64,
        t_end: f64,
        events: &EventSpec,
    ) -> Result<Integration>
    where
        F: FnMut(f64, &[f64], f64, &mut [f64]) -> Result<()>,
        C: Fn(f64) -> f64,
    {
        self.opts.validate()?;
        if !(t_end >= t0) {
            return Err(Error::IntegrationFailure {
                t: t0,
                reason: format!("end time {t_end} precedes start"),
            });
        }
        let dim = x0.len();
        let pattern_owned;
        let pattern = match self.pattern {
            Some(p) => p,
            None => {
                pattern_owned = JacobianPattern::dense(dim);
                &pattern_owned
            }
        };
        let tab = RadauTableau::new(3);
        let c = tab.nodes.clone();
        let dmat = tab.derivative.columns(1, 3).into_owned();
        let g0 = gamma0();
        let rtol = self.opts.rtol;
        let atol = self.opts.atol;
        let fnewt = (10.0 * f64::EPSILON / rtol).max(0.03f64.min(rtol.sqrt()));
        let floor: Vec<f64> = vec![atol / rtol; dim];

        let mut stats = IntegrationStats::default();
        let mut traj = Trajectory::new(t0, x0.to_vec(), control(t0));
        let mut crossings = Vec::new();

        let mut armed: Vec<bool> = events
            .events
            .iter()
            .map(|e| e.armed_at(e.eval(t0, x0, control(t0))))
            .collect();
        let mut g_prev: Vec<f64> = events.events.iter().map(|e| e.eval(t0, x0, control(t0))).collect();

        if t_end == t0 {
            return Ok(Integration {
                trajectory: traj,
                event: None,
                crossings,
                stats,
            });
        }

        let span = t_end - t0;
        let mut t = t0;
        let mut x = x0.to_vec();
        let mut h = self.opts.initial_step.min(self.opts.max_step).min(span);
        let mut err_prev: f64 = 1.0;
        let mut first = true;
        let mut last_rejected = false;
        let mut prev_piece: Option<Piece> = None;
        let mut f0 = vec![0.0; dim];
        let mut xs = vec![0.0; dim];

        loop {
            if stats.steps >= self.opts.max_steps {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: format!("step limit {} exceeded", self.opts.max_steps),
                });
            }
            // Respect breakpoints and the end of the span.
            let next_stop = self
                .tstops
                .iter()
                .copied()
                .find(|&s| s > t + 1e-12 * t.abs().max(1.0))
                .unwrap_or(t_end)
                .min(t_end);
            h = h.min(self.opts.max_step);
            let to_stop = next_stop - t;
            let landing = t + 1.01 * h >= next_stop;
            if landing {
                h = to_stop;
            } else if t + 2.0 * h > next_stop {
                h = 0.5 * to_stop;
            }
            if h < 1e-12 * t.abs().max(1.0) {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: "step size underflow".into(),
                });
            }

            let u_right = control(t + 1e-9 * h);
            derivative(t, &x, u_right, &mut f0)?;
            stats.rhs_evaluations += 1;
            let jac = pattern.jacobian(
                |xp: &[f64], out: &mut [f64]| derivative(t, xp, u_right, out),
                &x,
                &f0,
                &floor,
            )?;
            stats.jacobians += 1;
            stats.rhs_evaluations += pattern.groups().len();

            let attempt = self.attempt(
                &mut derivative,
                &control,
                &jac,
                &dmat,
                &c,
                g0,
                fnewt,
                t,
                &x,
                &f0,
                h,
                prev_piece.as_ref(),
                first || last_rejected,
                &mut stats,
            );
            let step = match attempt {
                Ok(Some(step)) => step,
                Ok(None) | Err(Error::Domain(_)) => {
                    stats.rejected += 1;
                    last_rejected = true;
                    h *= 0.5;
                    continue;
                }
                Err(e) => return Err(e),
            };
            stats.newton_iterations += step.newton;

            let err = step.err.max(1e-10);
            if step.err > 1.0 {
                stats.rejected += 1;
                last_rejected = true;
                h *= (SAFETY * err.powf(-0.25)).clamp(FAC_MIN, 1.0);
                continue;
            }

            // Accept.
            let h_used = step.h;
            let t_new = if landing { next_stop } else { t + h_used };
            let mut states = vec![x.clone()];
            for zj in &step.z {
                states.push(x.iter().zip(zj).map(|(a, b)| a + b).collect());
            }
            let x_new = states[3].clone();
            let controls: Vec<f64> = c.iter().map(|&cj| control(t + cj * h_used)).collect();
            let piece = Piece::new(
                t,
                h_used,
                tab.points(),
                states,
                c.clone(),
                controls,
            );
            stats.steps += 1;
            let u_new = control(t_new);

            // Events on [t, t_new].
            let mut hit: Option<EventHit> = None;
            let mut g_new = Vec::with_capacity(events.len());
            for (k, ev) in events.events.iter().enumerate() {
                let gk = ev.eval(t_new, &x_new, u_new);
                g_new.push(gk);
                if !armed[k] || !ev.crossed(g_prev[k], gk) {
                    continue;
                }
                let te = self.locate(ev, &piece, &control, t, g_prev[k], t_new, gk, &mut xs)?;
                piece.state_into(te, &mut xs);
                let candidate = EventHit {
                    index: k,
                    t: te,
                    state: if te == t_new { x_new.clone() } else { xs.clone() },
                    control: control(te),
                };
                if ev.terminal {
                    let earlier = match &hit {
                        None => true,
                        Some(h0) => te < h0.t - self.opts.event_tol,
                    };
                    if earlier {
                        hit = Some(candidate);
                    }
                } else {
                    crossings.push(candidate);
                }
            }

            if let Some(ev) = hit {
                let mut piece = piece;
                piece.end = ev.t;
                traj.push_piece(piece);
                if ev.t > t {
                    traj.push_sample(ev.t, ev.state.clone(), ev.control);
                }
                crossings.retain(|c| c.t <= ev.t);
                return Ok(Integration {
                    trajectory: traj,
                    event: Some(ev),
                    crossings,
                    stats,
                });
            }

            for (k, ev) in events.events.iter().enumerate() {
                if !armed[k] && ev.armed_at(g_new[k]) {
                    armed[k] = true;
                }
            }
            g_prev = g_new;
            traj.push_piece(piece.clone());
            traj.push_sample(t_new, x_new.clone(), u_new);
            prev_piece = Some(piece);
            t = t_new;
            x = x_new;

            if t >= t_end {
                return Ok(Integration {
                    trajectory: traj,
                    event: None,
                    crossings,
                    stats,
                });
            }

            // PI step-size update.
            let mut fac = SAFETY * err.powf(-0.7 / 4.0) * err_prev.powf(0.4 / 4.0);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if last_rejected {
                fac = fac.min(1.0);
            }
            if landing && h_used < h {
                // Keep the pre-clipping step after a forced landing.
                h = h.max(h_used * fac);
            } else {
                h = h_used * fac;
            }
            err_prev = err;
            first = false;
            last_rejected = false;
        }
    }

    /// One step attempt: simplified Newton on the stage increments followed
    /// by the embedded error estimate. `None` signals Newton failure.
    #[allow(clippy::too_many_arguments)]
    fn attempt<F, C>(
        &self,
        derivative: &mut F,
        control: &C,
        jac: &DMatrix<f64>,
        dmat: &DMatrix<f64>,
        c: &[f64],
        g0: f64,
        fnewt: f64,
        t: f64,
        x: &[f64],
        f0: &[f64],
        h: f64,
        prev: Option<&Piece>,
        careful: bool,
        stats: &mut IntegrationStats,
    ) -> Result<Option<Step>>
    where
        F: FnMut(f64, &[f64], f64, &mut [f64]) -> Result<()>,
        C: Fn(f64) -> f64,
    {
        let dim = x.len();
        let rtol = self.opts.rtol;
        let atol = self.opts.atol;
        let scale: Vec<f64> = x.iter().map(|v| atol + rtol * v.abs()).collect();

        let mut m = DMatrix::zeros(3 * dim, 3 * dim);
        for i in 0..3 {
            for k in 0..3 {
                let d = dmat[(i, k)] / h;
                for r in 0..dim {
                    m[(i * dim + r, k * dim + r)] += d;
                }
            }
            for r in 0..dim {
                for q in 0..dim {
                    m[(i * dim + r, i * dim + q)] -= jac[(r, q)];
                }
            }
        }
        let lu = m.lu();

        // Starting guess from the previous step's interpolant.
        let mut z = vec![vec![0.0; dim]; 3];
        if let Some(p) = prev {
            let mut buf = vec![0.0; dim];
            for (j, &cj) in c.iter().enumerate() {
                let tj = t + cj * h;
                let w = lagrange_weights(&p.state_nodes, (tj - p.start) / p.width);
                buf.iter_mut().for_each(|v| *v = 0.0);
                for (wk, xk) in w.iter().zip(&p.states) {
                    for (b, xv) in buf.iter_mut().zip(xk) {
                        *b += wk * xv;
                    }
                }
                for r in 0..dim {
                    z[j][r] = buf[r] - x[r];
                }
            }
        }

        let mut fstage = vec![vec![0.0; dim]; 3];
        let mut xs = vec![0.0; dim];
        let mut dyno_old = 0.0;
        let mut theta: f64;
        let mut converged = false;
        let mut iters = 0;
        let mut faccon = 1.0f64;
        for it in 0..MAX_NEWTON {
            iters = it + 1;
            for j in 0..3 {
                for r in 0..dim {
                    xs[r] = x[r] + z[j][r];
                }
                let tj = t + c[j] * h;
                derivative(tj, &xs, control(tj), &mut fstage[j])?;
            }
            stats.rhs_evaluations += 3;
            let mut rhs = DVector::zeros(3 * dim);
            for i in 0..3 {
                for r in 0..dim {
                    let mut dz = 0.0;
                    for k in 0..3 {
                        dz += dmat[(i, k)] * z[k][r];
                    }
                    rhs[i * dim + r] = fstage[i][r] - dz / h;
                }
            }
            let delta = match lu.solve(&rhs) {
                Some(d) => d,
                None => return Ok(None),
            };
            let mut sum = 0.0;
            for i in 0..3 {
                for r in 0..dim {
                    let q = delta[i * dim + r] / scale[r];
                    sum += q * q;
                    z[i][r] += delta[i * dim + r];
                }
            }
            let dyno = (sum / (3 * dim) as f64).sqrt();
            if !dyno.is_finite() {
                return Ok(None);
            }
            if it > 0 {
                theta = dyno / dyno_old;
                if theta >= 0.99 {
                    return Ok(None);
                }
                faccon = theta / (1.0 - theta);
                // Give up early when the contraction cannot reach fnewt in time.
                let remaining = (MAX_NEWTON - 1 - it) as i32;
                if remaining > 0 && theta.powi(remaining) / (1.0 - theta) * dyno > fnewt {
                    return Ok(None);
                }
            }
            dyno_old = dyno.max(f64::EPSILON);
            if faccon * dyno <= fnewt {
                converged = true;
                break;
            }
        }
        if !converged {
            return Ok(None);
        }

        // Embedded error estimate.
        let mut e_mat = -jac.clone();
        for r in 0..dim {
            e_mat[(r, r)] += g0 / h;
        }
        let e_lu = e_mat.lu();
        let mut f1 = vec![0.0; dim];
        let mut cont = DVector::zeros(dim);
        for r in 0..dim {
            f1[r] = (DD1 * z[0][r] + DD2 * z[1][r] + DD3 * z[2][r]) / h;
            cont[r] = f1[r] + f0[r];
        }
        let mut est = match e_lu.solve(&cont) {
            Some(v) => v,
            None => return Ok(None),
        };
        let x_end: Vec<f64> = (0..dim).map(|r| x[r] + z[2][r]).collect();
        let err_scale: Vec<f64> = (0..dim)
            .map(|r| atol + rtol * x[r].abs().max(x_end[r].abs()))
            .collect();
        let norm = |v: &DVector<f64>| -> f64 {
            let s: f64 = (0..dim).map(|r| (v[r] / err_scale[r]).powi(2)).sum();
            (s / dim as f64).sqrt()
        };
        let mut err = norm(&est);
        if err >= 1.0 && careful {
            for r in 0..dim {
                xs[r] = x[r] + est[r];
            }
            let mut fe = vec![0.0; dim];
            derivative(t, &xs, control(t + 1e-9 * h), &mut fe)?;
            stats.rhs_evaluations += 1;
            for r in 0..dim {
                cont[r] = fe[r] + f1[r];
            }
            est = match e_lu.solve(&cont) {
                Some(v) => v,
                None => return Ok(None),
            };
            err = norm(&est);
        }
        if !err.is_finite() {
            return Ok(None);
        }
        Ok(Some(Step {
            h,
            z,
            err,
            newton: iters,
        }))
    }

    /// Illinois iteration on the dense output; returns the right end of the
    /// final bracket.
    #[allow(clippy::too_many_arguments)]
    fn locate<C: Fn(f64) -> f64>(
        &self,
        ev: &Event,
        piece: &Piece,
        control: &C,
        mut a: f64,
        mut ga: f64,
        mut b: f64,
        mut gb: f64,
        xs: &mut [f64],
    ) -> Result<f64> {
        let mut side = 0i8;
        for _ in 0..200 {
            if b - a <= self.opts.event_tol {
                return Ok(b);
            }
            let mut m = if gb != ga { b - gb * (b - a) / (gb - ga) } else { 0.5 * (a + b) };
            let lo = a + 0.01 * (b - a);
            let hi = b - 0.01 * (b - a);
            if !(m > lo && m < hi) {
                m = 0.5 * (a + b);
            }
            piece.state_into(m, xs);
            let gm = ev.eval(m, xs, control(m));
            // Triggering side counts as the right end.
            if ev.crossed(ga, gm) {
                b = m;
                gb = gm;
                if side == -1 {
                    ga *= 0.5;
                }
                side = -1;
            } else {
                a = m;
                ga = gm;
                if side == 1 {
                    gb *= 0.5;
                }
                side = 1;
            }
        }
        Err(Error::EventLocalization { t: b })
    }
}

/// Convenience wrapper over [`Integrator`] with a dense Jacobian.
pub fn integrate<F, C>(
    derivative: F,
    control: C,
    x0: &[f64],
    t0: f64,
    t_end: f64,
    events: &EventSpec,
    opts: &IntegrationOptions,
) -> Result<Integration>
where
    F: FnMut(f64, &[f64], f64, &mut [f64]) -> Result<()>,
    C: Fn(f64) -> f64,
{
    Integrator::new(opts.clone()).run(derivative, control, x0, t0, t_end, events)
}
