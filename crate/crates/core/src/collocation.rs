//! Radau IIA collocation on finite elements for fully implicit DAEs
//! `r(t, x, x', z) = 0`, with `x` differential and `z` algebraic.
//!
//! Elements are solved one after another: with Radau points the element end
//! is a collocation point, so the simultaneous system decouples into a chain
//! of per-element systems linked only by state continuity.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::newton::{newton_solve_with, NewtonOptions};
use crate::radau::{lagrange_weights, RadauTableau};
use crate::trajectory::{Piece, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationMesh {
    boundaries: Vec<f64>,
    stages: usize,
}

impl CollocationMesh {
    pub fn new(boundaries: Vec<f64>, stages: usize) -> Result<Self> {
        if ![2, 3, 5].contains(&stages) {
            return Err(Error::config("stages", format!("{stages} collocation points unsupported (use 2, 3 or 5)")));
        }
        if boundaries.len() < 2 {
            return Err(Error::config("mesh", "at least one element is required"));
        }
        if boundaries.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("mesh", "element boundaries must increase strictly"));
        }
        Ok(CollocationMesh { boundaries, stages })
    }

    /// Uniform mesh with elements no longer than `element_dt`.
    pub fn uniform(t0: f64, t1: f64, element_dt: f64, stages: usize) -> Result<Self> {
        if !(element_dt > 0.0) {
            return Err(Error::config("element_dt", "must be positive"));
        }
        if !(t1 > t0) {
            return Err(Error::config("mesh", "empty span"));
        }
        let count = (((t1 - t0) / element_dt) - 1e-9).ceil().max(1.0) as usize;
        let h = (t1 - t0) / count as f64;
        let mut b: Vec<f64> = (0..count).map(|k| t0 + k as f64 * h).collect();
        b.push(t1);
        CollocationMesh::new(b, stages)
    }

    pub fn elements(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn span(&self) -> (f64, f64) {
        (self.boundaries[0], *self.boundaries.last().expect("non-empty"))
    }
}

type ResidualFn<'a> = Box<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) -> Result<()> + 'a>;

/// Residual `r(t, x, x', z)` with `n_diff + n_alg` components, plus the
/// unknown scales used inside the Newton system.
pub struct DaeResidual<'a> {
    pub n_diff: usize,
    pub n_alg: usize,
    pub diff_scale: Vec<f64>,
    pub alg_scale: Vec<f64>,
    function: ResidualFn<'a>,
}

impl<'a> DaeResidual<'a> {
    pub fn new(
        n_diff: usize,
        n_alg: usize,
        function: impl Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) -> Result<()> + 'a,
    ) -> Self {
        DaeResidual {
            n_diff,
            n_alg,
            diff_scale: vec![1.0; n_diff],
            alg_scale: vec![1.0; n_alg],
            function: Box::new(function),
        }
    }

    pub fn with_scales(mut self, diff_scale: Vec<f64>, alg_scale: Vec<f64>) -> Self {
        assert_eq!(diff_scale.len(), self.n_diff);
        assert_eq!(alg_scale.len(), self.n_alg);
        self.diff_scale = diff_scale;
        self.alg_scale = alg_scale;
        self
    }

    pub fn dim(&self) -> usize {
        self.n_diff + self.n_alg
    }

    pub fn eval(&self, t: f64, x: &[f64], xdot: &[f64], z: &[f64], out: &mut [f64]) -> Result<()> {
        (self.function)(t, x, xdot, z, out)
    }
}

/// Ends the segment where differential component `index` reaches `value`
/// from below. `rate` estimates its time derivative at a state.
pub struct SegmentStop<'a> {
    pub index: usize,
    pub value: f64,
    pub rate: Box<dyn Fn(&[f64]) -> f64 + 'a>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationOptions {
    /// Max-norm tolerance on the scaled residual at collocation points.
    pub tol: f64,
    pub max_iter: usize,
    /// Depth of element halving used to build starting guesses after a
    /// Newton failure.
    pub retry_depth: usize,
}

impl Default for CollocationOptions {
    fn default() -> Self {
        CollocationOptions {
            tol: 1e-9,
            max_iter: 30,
            retry_depth: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CollocationStats {
    pub elements: usize,
    pub newton_iterations: usize,
    pub residual_evaluations: usize,
    pub retries: usize,
    pub max_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SegmentSolution {
    /// Element boundaries and collocation points; the control channel is the
    /// first algebraic unknown.
    pub trajectory: Trajectory,
    /// Algebraic unknowns at every sample.
    pub algebraic: Vec<Vec<f64>>,
    /// Whether a [`SegmentStop`] ended the segment.
    pub stopped: bool,
    pub stats: CollocationStats,
}

struct Element {
    h: f64,
    x: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    norm: f64,
    iterations: usize,
    evaluations: usize,
}

struct Solver<'r, 'a> {
    residual: &'r DaeResidual<'a>,
    tab: RadauTableau,
    opts: CollocationOptions,
}

impl<'r, 'a> Solver<'r, 'a> {
    fn unpack(&self, u: &[f64], x: &mut [Vec<f64>], z: &mut [Vec<f64>]) {
        let (nd, na) = (self.residual.n_diff, self.residual.n_alg);
        let block = nd + na;
        for j in 0..self.tab.stages() {
            let b = &u[j * block..(j + 1) * block];
            for r in 0..nd {
                x[j][r] = b[r] * self.residual.diff_scale[r];
            }
            for r in 0..na {
                z[j][r] = b[nd + r] * self.residual.alg_scale[r];
            }
        }
    }

    fn pack(&self, x: &[Vec<f64>], z: &[Vec<f64>]) -> Vec<f64> {
        let (nd, na) = (self.residual.n_diff, self.residual.n_alg);
        let mut u = Vec::with_capacity(self.tab.stages() * (nd + na));
        for j in 0..self.tab.stages() {
            u.extend(x[j].iter().zip(&self.residual.diff_scale).map(|(v, s)| v / s));
            u.extend(z[j].iter().zip(&self.residual.alg_scale).map(|(v, s)| v / s));
        }
        u
    }

    /// Stacked residuals of one element.
    fn element_residual(
        &self,
        t0: f64,
        h: f64,
        x0: &[f64],
        x: &[Vec<f64>],
        z: &[Vec<f64>],
        out: &mut [f64],
    ) -> Result<()> {
        let (nd, na) = (self.residual.n_diff, self.residual.n_alg);
        let block = nd + na;
        let s = self.tab.stages();
        let mut xdot = vec![0.0; nd];
        for j in 0..s {
            for r in 0..nd {
                let mut d = self.tab.derivative[(j, 0)] * x0[r];
                for k in 0..s {
                    d += self.tab.derivative[(j, k + 1)] * x[k][r];
                }
                xdot[r] = d / h;
            }
            let tj = t0 + self.tab.nodes[j] * h;
            self.residual
                .eval(tj, &x[j], &xdot, &z[j], &mut out[j * block..(j + 1) * block])?;
        }
        Ok(())
    }

    fn newton(
        &self,
        t0: f64,
        h: f64,
        x0: &[f64],
        guess_x: &[Vec<f64>],
        guess_z: &[Vec<f64>],
    ) -> Result<Element> {
        let s = self.tab.stages();
        let (nd, na) = (self.residual.n_diff, self.residual.n_alg);
        let u0 = self.pack(guess_x, guess_z);
        let mut xs = vec![vec![0.0; nd]; s];
        let mut zs = vec![vec![0.0; na]; s];
        let opts = NewtonOptions {
            tol: self.opts.tol,
            max_iter: self.opts.max_iter,
            ..Default::default()
        };
        let report = newton_solve_with(
            |u, out| {
                self.unpack(u, &mut xs, &mut zs);
                self.element_residual(t0, h, x0, &xs, &zs, out)
            },
            &u0,
            &opts,
        )?;
        let mut x = vec![vec![0.0; nd]; s];
        let mut z = vec![vec![0.0; na]; s];
        self.unpack(&report.x, &mut x, &mut z);
        Ok(Element {
            h,
            x,
            z,
            norm: report.norm,
            iterations: report.iterations,
            evaluations: report.evaluations,
        })
    }

    /// Solves one element, falling back to constant guesses and then to
    /// half-element continuation.
    fn solve_element(
        &self,
        t0: f64,
        h: f64,
        x0: &[f64],
        z0: &[f64],
        guess: Option<(&[Vec<f64>], &[Vec<f64>])>,
        depth: usize,
        stats: &mut CollocationStats,
    ) -> Result<Element> {
        let s = self.tab.stages();
        let mut best = f64::INFINITY;
        if let Some((gx, gz)) = guess {
            match self.newton(t0, h, x0, gx, gz) {
                Ok(e) => return Ok(e),
                Err(Error::Structural(m)) => return Err(Error::Structural(m)),
                Err(Error::NonConvergence { norm, .. }) => best = best.min(norm),
                Err(_) => {}
            }
            stats.retries += 1;
        }
        let cx = vec![x0.to_vec(); s];
        let cz = vec![z0.to_vec(); s];
        match self.newton(t0, h, x0, &cx, &cz) {
            Ok(e) => return Ok(e),
            Err(Error::Structural(m)) => return Err(Error::Structural(m)),
            Err(Error::NonConvergence { norm, .. }) => best = best.min(norm),
            Err(_) => {}
        }
        if depth >= self.opts.retry_depth {
            return Err(Error::SegmentFailure { t: t0, norm: best });
        }
        stats.retries += 1;
        let half = 0.5 * h;
        let first = self.solve_element(t0, half, x0, z0, None, depth + 1, stats)?;
        let mid_x = first.x[s - 1].clone();
        let mid_z = first.z[s - 1].clone();
        let second = self.solve_element(t0 + half, half, &mid_x, &mid_z, None, depth + 1, stats)?;
        // Interpolate the two halves at the full element's points.
        let pts = self.tab.points();
        let mut gx = Vec::with_capacity(s);
        let mut gz = Vec::with_capacity(s);
        for &c in &self.tab.nodes {
            let (part, start, theta) = if c <= 0.5 {
                (&first, x0, 2.0 * c)
            } else {
                (&second, mid_x.as_slice(), 2.0 * c - 1.0)
            };
            let w = lagrange_weights(&pts, theta);
            let mut xv: Vec<f64> = start.iter().map(|v| v * w[0]).collect();
            for k in 0..s {
                for (o, v) in xv.iter_mut().zip(&part.x[k]) {
                    *o += w[k + 1] * v;
                }
            }
            gx.push(xv);
            let wz = lagrange_weights(&self.tab.nodes, theta);
            let mut zv = vec![0.0; z0.len()];
            for k in 0..s {
                for (o, v) in zv.iter_mut().zip(&part.z[k]) {
                    *o += wz[k] * v;
                }
            }
            gz.push(zv);
        }
        match self.newton(t0, h, x0, &gx, &gz) {
            Ok(e) => Ok(e),
            Err(Error::NonConvergence { norm, .. }) => Err(Error::SegmentFailure {
                t: t0,
                norm: best.min(norm),
            }),
            Err(Error::Structural(m)) => Err(Error::Structural(m)),
            Err(_) => Err(Error::SegmentFailure { t: t0, norm: best }),
        }
    }

    fn end_derivative(&self, h: f64, x0: &[f64], x: &[Vec<f64>], index: usize) -> f64 {
        let s = self.tab.stages();
        let mut d = self.tab.derivative[(s - 1, 0)] * x0[index];
        for k in 0..s {
            d += self.tab.derivative[(s - 1, k + 1)] * x[k][index];
        }
        d / h
    }
}

pub fn solve_segment(
    residual: &DaeResidual,
    state0: &[f64],
    alg0: &[f64],
    mesh: &CollocationMesh,
    tol: f64,
) -> Result<SegmentSolution> {
    let opts = CollocationOptions {
        tol,
        ..Default::default()
    };
    solve_segment_with(residual, state0, alg0, mesh, &opts, None)
}

/// Marches the mesh element by element. The algebraic unknowns are pinned
/// to `alg0` only at the segment start sample; the constraint itself is
/// imposed at collocation points.
pub fn solve_segment_with(
    residual: &DaeResidual,
    state0: &[f64],
    alg0: &[f64],
    mesh: &CollocationMesh,
    opts: &CollocationOptions,
    stop: Option<&SegmentStop>,
) -> Result<SegmentSolution> {
    if state0.len() != residual.n_diff || alg0.len() != residual.n_alg {
        return Err(Error::Structural(format!(
            "initial values have {}+{} components, residual expects {}+{}",
            state0.len(),
            alg0.len(),
            residual.n_diff,
            residual.n_alg
        )));
    }
    if residual.n_alg == 0 {
        return Err(Error::Structural("collocation segments need an algebraic unknown".into()));
    }
    let solver = Solver {
        residual,
        tab: RadauTableau::new(mesh.stages()),
        opts: opts.clone(),
    };
    let s = mesh.stages();
    let nodes = solver.tab.nodes.clone();
    let points = solver.tab.points();
    let (t_start, _) = mesh.span();

    let mut traj = Trajectory::new(t_start, state0.to_vec(), alg0[0]);
    let mut algebraic = vec![alg0.to_vec()];
    let mut stats = CollocationStats::default();
    let mut x_start = state0.to_vec();
    let mut z_start = alg0.to_vec();
    let mut prev: Option<Element> = None;
    let mut stopped = false;

    if let Some(st) = stop {
        if x_start[st.index] >= st.value {
            return Ok(SegmentSolution {
                trajectory: traj,
                algebraic,
                stopped: true,
                stats,
            });
        }
    }

    let bounds = mesh.boundaries();
    let mut t_cur = t_start;
    let mut e = 0;
    while e < mesh.elements() {
        let t0 = t_cur;
        let mut h = bounds[e + 1] - t0;
        if h <= 1e-9 * bounds[e + 1].abs().max(1.0) {
            e += 1;
            continue;
        }
        let mut landing = false;
        if let Some(st) = stop {
            let rate = (st.rate)(&x_start);
            if rate > 0.0 && x_start[st.index] + rate * h >= st.value {
                h = ((st.value - x_start[st.index]) / rate).min(h);
                landing = true;
            }
        }

        // Extrapolate the previous element's polynomials as a guess.
        let guess = prev.as_ref().map(|p| {
            let mut gx = Vec::with_capacity(s);
            let mut gz = Vec::with_capacity(s);
            let prev_start: Vec<f64> = traj.pieces().last().expect("piece").states[0].clone();
            for &c in &nodes {
                let theta = 1.0 + c * h / p.h;
                let w = lagrange_weights(&points, theta);
                let mut xv: Vec<f64> = prev_start.iter().map(|v| v * w[0]).collect();
                for k in 0..s {
                    for (o, v) in xv.iter_mut().zip(&p.x[k]) {
                        *o += w[k + 1] * v;
                    }
                }
                gx.push(xv);
                let wz = lagrange_weights(&nodes, theta);
                let mut zv = vec![0.0; residual.n_alg];
                for k in 0..s {
                    for (o, v) in zv.iter_mut().zip(&p.z[k]) {
                        *o += wz[k] * v;
                    }
                }
                gz.push(zv);
            }
            (gx, gz)
        });

        let mut elem = loop {
            let g = guess.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()));
            match solver.solve_element(t0, h, &x_start, &z_start, g, 0, &mut stats) {
                Ok(el) => break el,
                Err(_) if landing && h > 1e-9 => {
                    // The stop may sit closer than predicted.
                    h *= 0.5;
                    stats.retries += 1;
                }
                Err(err) => return Err(err),
            }
        };

        if let Some(st) = stop {
            let overshoot = elem.x[s - 1][st.index] >= st.value;
            if overshoot || landing {
                // Secant-corrected element length so the end lands on the stop.
                let tol = 1e-12 * st.value.abs().max(1.0);
                for _ in 0..8 {
                    let miss = st.value - elem.x[s - 1][st.index];
                    if miss.abs() <= tol {
                        break;
                    }
                    let rate = solver.end_derivative(elem.h, &x_start, &elem.x, st.index);
                    if !(rate > 0.0) {
                        break;
                    }
                    let h_new = elem.h + miss / rate;
                    if !(h_new > 0.0) {
                        break;
                    }
                    let gx = elem.x.clone();
                    let gz = elem.z.clone();
                    match solver.solve_element(t0, h_new, &x_start, &z_start, Some((&gx, &gz)), 0, &mut stats) {
                        Ok(el) => elem = el,
                        Err(_) => break,
                    }
                }
                stopped = elem.x[s - 1][st.index] >= st.value - tol.max(1e-9 * st.value.abs());
            }
        }

        stats.elements += 1;
        stats.newton_iterations += elem.iterations;
        stats.residual_evaluations += elem.evaluations;
        stats.max_residual = stats.max_residual.max(elem.norm);

        let h = elem.h;
        let t_el_end = if h == bounds[e + 1] - t0 { bounds[e + 1] } else { t0 + h };
        let mut piece_states = vec![x_start.clone()];
        piece_states.extend(elem.x.iter().cloned());
        let mut control_nodes = vec![0.0];
        control_nodes.extend_from_slice(&nodes);
        let mut control_values = vec![z_start[0]];
        control_values.extend(elem.z.iter().map(|z| z[0]));
        traj.push_piece(Piece::new(t0, h, points.clone(), piece_states, control_nodes, control_values));
        for j in 0..s {
            let tj = if j == s - 1 { t_el_end } else { t0 + nodes[j] * h };
            traj.push_sample(tj, elem.x[j].clone(), elem.z[j][0]);
            algebraic.push(elem.z[j].clone());
        }
        x_start = elem.x[s - 1].clone();
        z_start = elem.z[s - 1].clone();
        prev = Some(elem);
        t_cur = t_el_end;
        if stopped {
            break;
        }
        if t_cur == bounds[e + 1] {
            e += 1;
        }
    }

    Ok(SegmentSolution {
        trajectory: traj,
        algebraic,
        stopped,
        stats,
    })
}

impl SegmentSolution {
    /// Re-evaluates the residual at every collocation point from the stored
    /// element polynomials; returns the max-norm per point.
    pub fn point_residuals(&self, residual: &DaeResidual) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        let mut alg_index = 1;
        for piece in self.trajectory.pieces() {
            let s = piece.state_nodes.len() - 1;
            let tab = RadauTableau::new(s);
            let nd = residual.n_diff;
            let mut r = vec![0.0; residual.dim()];
            for j in 0..s {
                let mut xdot = vec![0.0; nd];
                for (k, xk) in piece.states.iter().enumerate() {
                    for (d, v) in xdot.iter_mut().zip(xk) {
                        *d += tab.derivative[(j, k)] * v / piece.width;
                    }
                }
                let t = piece.start + tab.nodes[j] * piece.width;
                residual.eval(t, &piece.states[j + 1], &xdot, &self.algebraic[alg_index], &mut r)?;
                alg_index += 1;
                out.push(r.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            }
        }
        Ok(out)
    }
}
