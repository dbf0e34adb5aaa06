//! The three control policies as DAE systems, and reduced-index reference
//! solutions used to cross-check the collocation solver.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::collocation::DaeResidual;
use crate::error::{Error, Result};
use crate::model::{interface_velocity, rhs_into, ModelParams, ProductState};
use crate::roots::brent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum PolicyId {
    /// Maximum heat input (or the lower bound once it is hit).
    Policy1,
    /// Bottom temperature tracking.
    Policy2,
    /// Interface velocity tracking.
    Policy3,
}

impl PolicyId {
    pub fn number(self) -> u8 {
        match self {
            PolicyId::Policy1 => 1,
            PolicyId::Policy2 => 2,
            PolicyId::Policy3 => 3,
        }
    }
}

impl From<PolicyId> for u8 {
    fn from(id: PolicyId) -> u8 {
        id.number()
    }
}

impl TryFrom<u8> for PolicyId {
    type Error = String;

    fn try_from(k: u8) -> std::result::Result<Self, String> {
        match k {
            1 => Ok(PolicyId::Policy1),
            2 => Ok(PolicyId::Policy2),
            3 => Ok(PolicyId::Policy3),
            _ => Err(format!("no policy numbered {k}")),
        }
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Policy {}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    AdaptiveIntegrator,
    Collocation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Setpoint {
    None,
    Temperature(f64),
    Velocity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub tb_min: f64,
    pub tb_max: f64,
}

impl ControlBounds {
    pub fn new(tb_min: f64, tb_max: f64) -> Result<Self> {
        let b = ControlBounds { tb_min, tb_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tb_min > 0.0) || !self.tb_min.is_finite() {
            return Err(Error::config("tb_min", "must be a positive temperature"));
        }
        if !(self.tb_min < self.tb_max) || !self.tb_max.is_finite() {
            return Err(Error::config("tb_max", "must exceed tb_min"));
        }
        Ok(())
    }

    pub fn clamp(&self, tb: f64) -> f64 {
        tb.clamp(self.tb_min, self.tb_max)
    }
}

/// Path limits; each tracking policy uses its limit as the setpoint.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Setpoints {
    pub t_max: Option<f64>,
    pub v_max: Option<f64>,
}

impl Setpoints {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.t_max {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::config("T_max", "must be a positive temperature"));
            }
        }
        if let Some(v) = self.v_max {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config("v_max", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn t_sp(&self) -> Option<f64> {
        self.t_max
    }

    pub fn v_sp(&self) -> Option<f64> {
        self.v_max
    }
}

pub struct PolicySystem {
    pub id: PolicyId,
    pub index: usize,
    pub solver: SolverKind,
    pub setpoint: Setpoint,
    /// Constant shelf temperature of the index-1 policy.
    pub control_law: Option<f64>,
    /// Shelf temperature pinned at the segment start.
    pub tb0: Option<f64>,
    pub residual: DaeResidual<'static>,
}

impl fmt::Debug for PolicySystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PolicySystem")
            .field("id", &self.id)
            .field("index", &self.index)
            .field("solver", &self.solver)
            .field("setpoint", &self.setpoint)
            .field("control_law", &self.control_law)
            .field("tb0", &self.tb0)
            .finish()
    }
}

/// Residual rows scaled so that every equation is O(1) near convergence:
/// temperature rows by the cell diffusion time over 100 K, the interface row
/// by `H` per hour.
fn scaled_model_rows(
    params: &ModelParams,
    x: &[f64],
    xdot: &[f64],
    tb: f64,
    f: &mut [f64],
    out: &mut [f64],
) -> Result<()> {
    let n = params.n;
    rhs_into(x, tb, params, f)?;
    let tau = params.rho_f * params.cp_f * {
        let dz = (params.height - x[n]) * params.grid_spacing();
        dz * dz
    } / params.k_f;
    for i in 0..n {
        out[i] = (xdot[i] - f[i]) * tau / 100.0;
    }
    Ok(())
}

fn unknown_scales(params: &ModelParams) -> (Vec<f64>, Vec<f64>) {
    let mut d = vec![100.0; params.n];
    d.push(params.height);
    (d, vec![100.0])
}

fn interface_row_scale(params: &ModelParams) -> f64 {
    params.height / 3600.0
}

fn policy1_with(params: &ModelParams, tb: f64) -> PolicySystem {
    let p = params.clone();
    let n = p.n;
    let (ds, zs) = unknown_scales(&p);
    let residual = DaeResidual::new(n + 1, 1, move |_t, x, xdot, z, out| {
        let mut f = vec![0.0; n + 1];
        scaled_model_rows(&p, x, xdot, z[0], &mut f, out)?;
        out[n] = (xdot[n] - f[n]) / interface_row_scale(&p);
        out[n + 1] = (z[0] - tb) / 100.0;
        Ok(())
    })
    .with_scales(ds, zs);
    PolicySystem {
        id: PolicyId::Policy1,
        index: 1,
        solver: SolverKind::AdaptiveIntegrator,
        setpoint: Setpoint::None,
        control_law: Some(tb),
        tb0: Some(tb),
        residual,
    }
}

/// Maximum heat input, `T_b = tb_max`.
pub fn policy1_system(params: &ModelParams, bounds: &ControlBounds) -> PolicySystem {
    policy1_with(params, bounds.tb_max)
}

/// Policy 1 clamped at the lower bound, `T_b = tb_min`.
pub fn policy1_min_system(params: &ModelParams, bounds: &ControlBounds) -> PolicySystem {
    policy1_with(params, bounds.tb_min)
}

/// Bottom temperature held at `t_sp` by the shelf temperature.
pub fn policy2_system(params: &ModelParams, t_sp: f64, tb0: f64) -> PolicySystem {
    let p = params.clone();
    let n = p.n;
    let (ds, zs) = unknown_scales(&p);
    let residual = DaeResidual::new(n + 1, 1, move |_t, x, xdot, z, out| {
        let mut f = vec![0.0; n + 1];
        scaled_model_rows(&p, x, xdot, z[0], &mut f, out)?;
        out[n] = (xdot[n] - f[n]) / interface_row_scale(&p);
        out[n + 1] = (x[n - 1] - t_sp) / 100.0;
        Ok(())
    })
    .with_scales(ds, zs);
    PolicySystem {
        id: PolicyId::Policy2,
        index: 2,
        solver: SolverKind::Collocation,
        setpoint: Setpoint::Temperature(t_sp),
        control_law: None,
        tb0: Some(tb0),
        residual,
    }
}

/// Interface velocity held at `v_sp`; index `n + 1`.
pub fn policy3_system(params: &ModelParams, v_sp: f64, tb0: f64) -> PolicySystem {
    let p = params.clone();
    let n = p.n;
    let (ds, zs) = unknown_scales(&p);
    let residual = DaeResidual::new(n + 1, 1, move |_t, x, xdot, z, out| {
        let mut f = vec![0.0; n + 1];
        scaled_model_rows(&p, x, xdot, z[0], &mut f, out)?;
        out[n] = (xdot[n] - v_sp) / interface_row_scale(&p);
        out[n + 1] = (interface_velocity(x[0], x[n], &p)? - v_sp) / v_sp;
        Ok(())
    })
    .with_scales(ds, zs);
    PolicySystem {
        id: PolicyId::Policy3,
        index: n + 1,
        solver: SolverKind::Collocation,
        setpoint: Setpoint::Velocity(v_sp),
        control_law: None,
        tb0: Some(tb0),
        residual,
    }
}

fn bottom_rate(state: &[f64], tb: f64, params: &ModelParams) -> Result<f64> {
    let mut f = vec![0.0; state.len()];
    rhs_into(state, tb, params, &mut f)?;
    Ok(f[params.n - 1])
}

/// Shelf temperature that freezes the bottom node, `dT_n/dt = 0`.
pub fn policy2_reduced_control(
    state: &ProductState,
    params: &ModelParams,
    t_sp: f64,
    bounds: &ControlBounds,
) -> Result<f64> {
    let _ = t_sp;
    let x = state.to_vec();
    brent(
        |tb| bottom_rate(&x, tb, params),
        bounds.tb_min - 50.0,
        bounds.tb_max + 50.0,
        1e-10,
        200,
    )
    .map_err(|e| match e {
        Error::Infeasible(m) => Error::Infeasible(format!("no shelf temperature holds T_n: {m}")),
        other => other,
    })
}

/// Interface temperature at which the front moves at `v_sp`.
pub fn policy3_interface_temperature(params: &ModelParams, v_sp: f64, s: f64) -> Result<f64> {
    // Invert the correlation directly, then polish on the model function.
    let target = params.p_wc + v_sp * params.mass_transfer_resistance(s) * (params.rho_f - params.rho_e);
    if !(target > 0.0) {
        return Err(Error::Infeasible(format!("velocity {v_sp} needs non-positive vapour pressure")));
    }
    let guess = params.psat_b / (params.psat_a - target.ln());
    brent(
        |t| Ok(interface_velocity(t, s, params)? - v_sp),
        guess - 1.0,
        guess + 1.0,
        1e-12,
        200,
    )
}

/// Solves node equation `k - 1` for node `k` (the shelf temperature when
/// `k == n`) so that `dT_{k-1}/dt` equals `rate`. Nodes below `k` are taken
/// from `below`; nodes above are set equal to the unknown.
fn cascade_level(params: &ModelParams, s: f64, below: &[f64], k: usize, rate: f64) -> Result<f64> {
    let n = params.n;
    let mut x = vec![0.0; n + 1];
    x[..k.min(n)].copy_from_slice(&below[..k.min(n)]);
    x[n] = s;
    let guess = below[k - 1];
    let mut g = vec![0.0; n + 1];
    if k < n {
        brent(
            |v| {
                for w in x.iter_mut().take(n).skip(k) {
                    *w = v;
                }
                rhs_into(&x, 0.0, params, &mut g)?;
                Ok(g[k - 1] - rate)
            },
            guess - 80.0,
            guess + 80.0,
            1e-12,
            300,
        )
    } else {
        brent(
            |tb| {
                rhs_into(&x, tb, params, &mut g)?;
                Ok(g[n - 1] - rate)
            },
            guess - 150.0,
            guess + 150.0,
            1e-12,
            300,
        )
    }
}

/// Quasi-steady Policy-3 profile and shelf temperature at interface
/// position `s`: every node held stationary.
pub fn policy3_quasi_steady(params: &ModelParams, v_sp: f64, s: f64) -> Result<(Vec<f64>, f64)> {
    profile_with_rates(params, v_sp, s, &vec![0.0; params.n])
}

fn profile_with_rates(params: &ModelParams, v_sp: f64, s: f64, rates: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = params.n;
    let mut nodes = vec![policy3_interface_temperature(params, v_sp, s)?];
    for k in 1..=n {
        let v = cascade_level(params, s, &nodes, k, rates[k - 1])?;
        nodes.push(v);
    }
    let tb = nodes.pop().expect("shelf temperature");
    Ok((nodes, tb))
}

/// Policy-3 profile at `s` whose node rates equal the drift of the profile
/// itself as the front advances at `v_sp`, found by fixed-point iteration
/// from the quasi-steady profile.
pub fn policy3_drifting_profile(params: &ModelParams, v_sp: f64, s: f64) -> Result<(Vec<f64>, f64)> {
    let dt = 60.0;
    let mut rates = vec![0.0; params.n];
    let mut here = profile_with_rates(params, v_sp, s, &rates)?;
    for _ in 0..4 {
        let ahead = profile_with_rates(params, v_sp, s + v_sp * dt, &rates)?;
        rates = ahead.0.iter().zip(&here.0).map(|(a, b)| (a - b) / dt).collect();
        here = profile_with_rates(params, v_sp, s, &rates)?;
    }
    Ok(here)
}

/// Step of the nested central differences in the cascade oracle, s.
pub const CASCADE_STEP: f64 = 10.0;

/// Node `k` of the exact Policy-3 solution at time `t` (`k == n` gives the
/// shelf temperature).
fn cascade_node(params: &ModelParams, v_sp: f64, s0: f64, t: f64, k: usize) -> Result<f64> {
    let s = s0 + v_sp * t;
    if k == 0 {
        return policy3_interface_temperature(params, v_sp, s);
    }
    let below = (0..k)
        .map(|j| cascade_node(params, v_sp, s0, t, j))
        .collect::<Result<Vec<_>>>()?;
    let h = CASCADE_STEP;
    let rate = (cascade_node(params, v_sp, s0, t + h, k - 1)? - cascade_node(params, v_sp, s0, t - h, k - 1)?) / (2.0 * h);
    cascade_level(params, s, &below, k, rate)
}

/// Reference Policy-3 solution for grids of at most 4 nodes by symbolic
/// cascade: `T_1` from the velocity constraint, each node equation solved for
/// the next node, the bottom equation for `T_b`. Time derivatives come from
/// nested central differences. `t` is measured from the moment the front
/// sits at `s0`.
pub fn cascade_elimination_oracle(params: &ModelParams, v_sp: f64, s0: f64, t: f64) -> Result<(Vec<f64>, f64)> {
    if params.n > 4 {
        return Err(Error::config("n", "the cascade oracle supports at most 4 grid points"));
    }
    let n = params.n;
    let profile = (0..n)
        .map(|k| cascade_node(params, v_sp, s0, t, k))
        .collect::<Result<Vec<_>>>()?;
    let tb = cascade_node(params, v_sp, s0, t, n)?;
    Ok((profile, tb))
}
