//! Primary-drying model: frozen-layer energy balance on a moving domain and
//! the sublimation-front mass balance.
//!
//! The frozen region `S < z < H` is mapped onto `xi = (z - S)/(H - S)` in
//! `[0, 1]` and discretized on `n` uniform nodes. Node 0 is the sublimation
//! interface, node `n - 1` the product bottom. The state vector layout used by
//! all solvers is `[T_1, ..., T_n, S]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jacobian::JacobianPattern;

/// Initial interface offset as a fraction of the product height.
pub const START_FRACTION: f64 = 1e-6;

/// Drying is complete once the remaining frozen thickness drops below this
/// fraction of the product height.
pub const END_FRACTION: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Frozen product density, kg/m^3.
    pub rho_f: f64,
    /// Effective density of the dried layer, kg/m^3.
    pub rho_e: f64,
    /// Frozen heat capacity, J/(kg K).
    pub cp_f: f64,
    /// Frozen thermal conductivity, W/(m K).
    pub k_f: f64,
    /// Product height, m.
    pub height: f64,
    /// Product (vial) diameter, m.
    pub diameter: f64,
    /// Stefan-Boltzmann constant, W/(m^2 K^4).
    pub sigma: f64,
    /// Side-wall radiative transfer factor.
    pub f_side: f64,
    /// Chamber wall temperature, K.
    pub t_chamber: f64,
    /// Mass-transfer resistance of an empty dried layer, Pa m^2 s/kg.
    pub r_p: f64,
    /// Linear growth of the resistance with dried-layer thickness, Pa m s/kg.
    pub r_p_growth: f64,
    /// Saturation coefficient of the resistance growth, 1/m.
    pub r_p_saturation: f64,
    /// Partial pressure of water in the chamber, Pa.
    pub p_wc: f64,
    /// Sublimation enthalpy, J/kg.
    pub dh_sub: f64,
    /// Shelf-to-product heat-transfer coefficient, W/(m^2 K).
    pub k_v: f64,
    /// Initial product temperature, K.
    pub t0: f64,
    /// Number of spatial grid nodes.
    pub n: usize,
    /// `ln p_sat = psat_a - psat_b / T`.
    pub psat_a: f64,
    pub psat_b: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            rho_f: 917.0,
            rho_e: 212.0,
            cp_f: 2030.0,
            k_f: 2.4,
            height: 0.01,
            diameter: 0.01,
            sigma: 5.670374419e-8,
            f_side: 0.1,
            t_chamber: 293.0,
            r_p: 4.0e4,
            r_p_growth: 2.5e7,
            r_p_saturation: 0.0,
            p_wc: 3.0,
            dh_sub: 2.84e6,
            k_v: 20.0,
            t0: 233.15,
            n: 20,
            psat_a: 28.8912,
            psat_b: 6139.9,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho_e", self.rho_e),
            ("cp_f", self.cp_f),
            ("k_f", self.k_f),
            ("H", self.height),
            ("d", self.diameter),
            ("R_p", self.r_p),
            ("dH_sub", self.dh_sub),
            ("T_c", self.t_chamber),
            ("T0", self.t0),
            ("psat_b", self.psat_b),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::config(name, format!("must be positive and finite, got {value}")));
            }
        }
        if !(self.rho_f > self.rho_e) {
            return Err(Error::config("rho_f", "must exceed rho_e"));
        }
        let non_negative = [
            ("sigma", self.sigma),
            ("K_v", self.k_v),
            ("p_wc", self.p_wc),
            ("R_p_growth", self.r_p_growth),
            ("R_p_saturation", self.r_p_saturation),
        ];
        for (name, value) in non_negative {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::config(name, format!("must be non-negative, got {value}")));
            }
        }
        if !(0.0..=1.0).contains(&self.f_side) {
            return Err(Error::config("F_side", "must lie in [0, 1]"));
        }
        if self.n < 3 {
            return Err(Error::config("n", "at least 3 grid points are required"));
        }
        if !self.psat_a.is_finite() {
            return Err(Error::config("psat_a", "must be finite"));
        }
        Ok(())
    }

    pub fn diffusivity(&self) -> f64 {
        self.k_f / (self.rho_f * self.cp_f)
    }

    pub fn grid_spacing(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    pub fn cross_section(&self) -> f64 {
        PI * self.diameter * self.diameter / 4.0
    }

    /// Radiating side area, fixed at the full product height.
    pub fn side_area(&self) -> f64 {
        PI * self.diameter * self.height
    }

    pub fn frozen_volume(&self, s: f64) -> f64 {
        self.cross_section() * (self.height - s)
    }

    /// Dried-layer resistance `R_p + growth * S / (1 + saturation * S)`.
    pub fn mass_transfer_resistance(&self, s: f64) -> f64 {
        let dried = s.max(0.0);
        self.r_p + self.r_p_growth * dried / (1.0 + self.r_p_saturation * dried)
    }

    /// Interface position at which drying counts as complete.
    pub fn end_position(&self) -> f64 {
        self.height * (1.0 - END_FRACTION)
    }

    /// Characteristic diffusion time of one grid cell, s.
    pub fn cell_diffusion_time(&self, s: f64) -> f64 {
        let dz = (self.height - s).max(0.0) * self.grid_spacing();
        dz * dz / self.diffusivity()
    }

    /// Discrete frozen-layer enthalpy per unit cross section (trapezoidal
    /// weights), J/m^2, relative to 0 K.
    pub fn enthalpy(&self, state: &ProductState) -> f64 {
        let n = state.temperatures.len();
        let dz = (self.height - state.interface) * self.grid_spacing();
        let sum: f64 = state
            .temperatures
            .iter()
            .enumerate()
            .map(|(i, t)| if i == 0 || i == n - 1 { 0.5 * t } else { *t })
            .sum();
        self.rho_f * self.cp_f * dz * sum
    }

    /// Finite-difference Jacobian structure of [`rhs_into`]: tridiagonal in
    /// the temperatures, plus dense columns for `T_1` (through the front
    /// velocity) and `S`.
    pub fn jacobian_pattern(&self) -> JacobianPattern {
        let n = self.n;
        let dim = n + 1;
        let mut rows_of_col = Vec::with_capacity(dim);
        rows_of_col.push((0..dim).collect());
        for j in 1..n {
            let lo = j - 1;
            let hi = (j + 1).min(n - 1);
            rows_of_col.push((lo..=hi).collect());
        }
        rows_of_col.push((0..dim).collect());
        let mut groups = vec![vec![0], vec![n]];
        for offset in 0..3 {
            let g: Vec<usize> = (1..n).filter(|j| (j - 1) % 3 == offset).collect();
            if !g.is_empty() {
                groups.push(g);
            }
        }
        JacobianPattern::new(groups, rows_of_col)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductState {
    /// Node temperatures, K; index 0 is the sublimation interface.
    pub temperatures: Vec<f64>,
    /// Interface position measured from the product top, m.
    pub interface: f64,
}

impl ProductState {
    pub fn new(temperatures: Vec<f64>, interface: f64) -> Self {
        ProductState {
            temperatures,
            interface,
        }
    }

    pub fn from_slice(x: &[f64]) -> Self {
        let (t, s) = x.split_at(x.len() - 1);
        ProductState::new(t.to_vec(), s[0])
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.temperatures.clone();
        v.push(self.interface);
        v
    }

    pub fn n(&self) -> usize {
        self.temperatures.len()
    }

    pub fn max_temperature(&self) -> f64 {
        self.temperatures.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn bottom_temperature(&self) -> f64 {
        *self.temperatures.last().expect("non-empty profile")
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.temperatures.len() != params.n {
            return Err(Error::Domain(format!(
                "state has {} nodes, parameters require {}",
                self.temperatures.len(),
                params.n
            )));
        }
        if !(0.0..=params.height).contains(&self.interface) {
            return Err(Error::Domain(format!("interface position {} outside [0, H]", self.interface)));
        }
        if let Some(t) = self.temperatures.iter().find(|t| !(**t > 0.0)) {
            return Err(Error::Domain(format!("non-positive temperature {t}")));
        }
        Ok(())
    }
}

/// Ice saturation pressure, Pa.
pub fn saturation_pressure(t: f64, params: &ModelParams) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("saturation pressure needs T > 0, got {t}")));
    }
    Ok((params.psat_a - params.psat_b / t).exp())
}

/// Sublimation flux at the front, kg/(m^2 s). Negative under condensing
/// conditions.
pub fn sublimation_flux(t1: f64, s: f64, params: &ModelParams) -> Result<f64> {
    let p_sat = saturation_pressure(t1, params)?;
    Ok((p_sat - params.p_wc) / params.mass_transfer_resistance(s))
}

/// Side-wall radiation spread over the frozen volume, W/m^3.
pub fn radiative_heat(t: f64, s: f64, params: &ModelParams) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("radiation needs T > 0, got {t}")));
    }
    if !(s < params.height) {
        return Err(Error::Domain(format!("frozen region vanished (S = {s})")));
    }
    let q = params.sigma
        * params.side_area()
        * params.f_side
        * (params.t_chamber.powi(4) - t.powi(4));
    Ok(q / params.frozen_volume(s))
}

/// Front velocity `dS/dt`, m/s.
pub fn interface_velocity(t1: f64, s: f64, params: &ModelParams) -> Result<f64> {
    Ok(sublimation_flux(t1, s, params)? / (params.rho_f - params.rho_e))
}

/// Time derivative of the state vector `[T_1..T_n, S]` for shelf temperature
/// `tb`, written into `out`.
pub fn rhs_into(x: &[f64], tb: f64, params: &ModelParams, out: &mut [f64]) -> Result<()> {
    let n = params.n;
    if n < 3 {
        return Err(Error::config("n", "at least 3 grid points are required"));
    }
    if x.len() != n + 1 || out.len() != n + 1 {
        return Err(Error::Structural(format!(
            "state length {} does not match n + 1 = {}",
            x.len(),
            n + 1
        )));
    }
    let t = &x[..n];
    let s = x[n];
    if !(s < params.height) {
        return Err(Error::Domain(format!("frozen region vanished (S = {s})")));
    }
    let len = params.height - s;
    let dxi = params.grid_spacing();
    let rho_cp = params.rho_f * params.cp_f;
    let diff = params.diffusivity() / (len * len * dxi * dxi);

    let flux = sublimation_flux(t[0], s, params)?;
    let sdot = flux / (params.rho_f - params.rho_e);

    // Ghost nodes carry the interface and shelf boundary fluxes.
    let ghost_top = t[1] - 2.0 * dxi * len * params.dh_sub * flux / params.k_f;
    let ghost_bottom = t[n - 2] + 2.0 * dxi * len * params.k_v * (tb - t[n - 1]) / params.k_f;

    for i in 0..n {
        let left = if i == 0 { ghost_top } else { t[i - 1] };
        let right = if i == n - 1 { ghost_bottom } else { t[i + 1] };
        let conduction = diff * (left - 2.0 * t[i] + right);
        let radiation = radiative_heat(t[i], s, params)? / rho_cp;
        // Landau-frame advection, upwinded toward the bottom.
        let advection = if i < n - 1 {
            let xi = i as f64 * dxi;
            sdot * (1.0 - xi) / len * (t[i + 1] - t[i]) / dxi
        } else {
            0.0
        };
        out[i] = conduction + radiation + advection;
    }
    out[n] = sdot;
    Ok(())
}

pub fn rhs(state: &ProductState, tb: f64, params: &ModelParams) -> Result<ProductState> {
    if state.temperatures.len() != params.n {
        return Err(Error::Structural(format!(
            "state has {} nodes, parameters require {}",
            state.temperatures.len(),
            params.n
        )));
    }
    let x = state.to_vec();
    let mut dx = vec![0.0; x.len()];
    rhs_into(&x, tb, params, &mut dx)?;
    Ok(ProductState::from_slice(&dx))
}

/// Uniform profile at `T0` with the front just below the product top.
pub fn initial_state(params: &ModelParams) -> ProductState {
    ProductState::new(vec![params.t0; params.n], START_FRACTION * params.height)
}
