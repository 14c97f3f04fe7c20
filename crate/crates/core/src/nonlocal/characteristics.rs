//! Characteristic solver for whole-link windows (`b ≡ 0`, `d ≡ 1`).
//!
//! On a window `[t0, t0 + K dt]` the characteristic `ξ` leaving the inlet at
//! `t0` solves
//!
//! ```text
//! ξ(t) = ∫_{t0}^{t} λ(s, W(s)) ds,
//! W(s) = U(s) - U(τ*(s)) + M0(max(0, 1 - ξ(s))),
//! ```
//!
//! where `U` is the cumulative inflow since `t0`, `M0` the cumulative initial
//! mass and `ξ(τ*(s)) = ξ(s) - 1` (`U(τ*) = 0` while `ξ < 1`). Before the
//! first vehicle that entered during the window reaches the outlet this is
//! exactly `U(s) + ∫_0^{1-ξ(s)} ρ0`. Densities are recovered in cumulative
//! form: the number of vehicles on `[0, x]` at `t` is
//! `U(t) - U(ξ^{-1}(ξ(t) - x))` for `x ≤ ξ(t)` and `U(t) + M0(x - ξ(t))`
//! otherwise, so cell averages conserve mass exactly.

use super::law::{CumulativeMass, VelocityLaw};
use crate::error::{Error, Result};

pub const DEFAULT_FIXED_POINT_TOL: f64 = 1e-10;
pub const DEFAULT_FIXED_POINT_CAP: usize = 10_000;

/// Piecewise-linear cumulative inflow on the window's time nodes.
#[derive(Clone, Debug)]
pub struct CumulativeInflow {
    nodes: Vec<f64>,
    rates: Vec<f64>,
}

impl CumulativeInflow {
    /// `rates[m]` is the constant inflow rate on substep `m`.
    pub fn new(rates: &[f64], dt: f64) -> Self {
        let mut nodes = Vec::with_capacity(rates.len() + 1);
        let mut acc = 0.0;
        nodes.push(0.0);
        for r in rates {
            acc += r * dt;
            nodes.push(acc);
        }
        Self {
            nodes,
            rates: rates.to_vec(),
        }
    }

    pub fn at_node(&self, m: usize) -> f64 {
        self.nodes[m]
    }

    fn at(&self, (j, f): (usize, f64)) -> f64 {
        if f == 0.0 || j + 1 >= self.nodes.len() {
            self.nodes[j]
        } else {
            self.nodes[j] + f * (self.nodes[j + 1] - self.nodes[j])
        }
    }

    fn rate(&self, (j, _): (usize, f64)) -> f64 {
        self.rates
            .get(j)
            .or_else(|| self.rates.last())
            .copied()
            .unwrap_or(0.0)
    }
}

/// Converged characteristic on one window.
#[derive(Clone, Debug)]
pub struct CharacteristicWindow {
    pub t0: f64,
    pub dt: f64,
    /// `ξ` at the `K + 1` time nodes of the window.
    pub xi: Vec<f64>,
    /// Non-local term at the time nodes.
    pub w: Vec<f64>,
    pub iterations: usize,
    law: VelocityLaw,
    inflow: CumulativeInflow,
    initial: CumulativeMass,
}

impl CharacteristicWindow {
    pub fn steps(&self) -> usize {
        self.xi.len() - 1
    }

    /// Time position `(j, f)`, meaning `t0 + (j + f) dt`, at which the
    /// characteristic reaches `target`, searched among the first `m + 1`
    /// nodes.
    fn invert(&self, m: usize, target: f64) -> (usize, f64) {
        invert(&self.xi[..=m], target)
    }

    fn time(&self, (j, f): (usize, f64)) -> f64 {
        self.t0 + (j as f64 + f) * self.dt
    }

    /// Vehicles of one commodity on `[0, x]` at node `m`.
    pub fn cumulative(
        &self,
        m: usize,
        x: f64,
        inflow: &CumulativeInflow,
        initial: &CumulativeMass,
    ) -> f64 {
        let xi = self.xi[m];
        if x <= xi {
            inflow.at_node(m) - inflow.at(self.invert(m, xi - x))
        } else {
            inflow.at_node(m) + initial.at(x - xi)
        }
    }

    /// Cell averages of one commodity at node `m` on `n` cells.
    pub fn row(
        &self,
        m: usize,
        n: usize,
        inflow: &CumulativeInflow,
        initial: &CumulativeMass,
    ) -> Vec<f64> {
        let dx = 1.0 / n as f64;
        let mut prev = 0.0;
        (1..=n)
            .map(|i| {
                let c = self.cumulative(m, i as f64 * dx, inflow, initial);
                let rho = (c - prev) / dx;
                prev = c;
                rho
            })
            .collect()
    }

    /// Vehicles of one commodity that have left through `x = 1` by node `m`.
    pub fn cumulative_outflow(
        &self,
        m: usize,
        inflow: &CumulativeInflow,
        initial: &CumulativeMass,
    ) -> f64 {
        inflow.at_node(m) + initial.total() - self.cumulative(m, 1.0, inflow, initial)
    }

    /// Point density of the aggregate at node `m`:
    /// `ρ0(x - ξ(t))` ahead of the characteristic and
    /// `u(τ) / ξ'(τ)` with `ξ(τ) = ξ(t) - x` behind it.
    pub fn point_density(&self, m: usize, x: f64) -> f64 {
        let xi = self.xi[m];
        if x >= xi {
            self.initial.density(x - xi)
        } else {
            let pos = self.invert(m, xi - x);
            let w = self.w_at(pos);
            self.inflow.rate(pos) / self.law.speed(self.time(pos), w)
        }
    }

    /// Speed `ξ'(t)` at an arbitrary node.
    pub fn speed(&self, m: usize) -> f64 {
        self.law.speed(self.t0 + m as f64 * self.dt, self.w[m])
    }

    fn w_at(&self, (j, f): (usize, f64)) -> f64 {
        if f == 0.0 || j + 1 >= self.w.len() {
            return self.w[j.min(self.w.len() - 1)];
        }
        let xi = self.xi[j] + f * (self.xi[j + 1] - self.xi[j]);
        nonlocal_mass(&self.xi[..=j + 1], xi, self.inflow.at((j, f)), &self.inflow, &self.initial)
    }

    /// Time at which a vehicle at position `x0` at node `m` reaches the
    /// outlet, if it does so within the window.
    pub fn exit_time(&self, m: usize, x0: f64) -> Option<f64> {
        let target = self.xi[m] + (1.0 - x0);
        if target > *self.xi.last().unwrap() {
            return None;
        }
        Some(self.time(invert(&self.xi, target)))
    }
}

fn invert(xi: &[f64], target: f64) -> (usize, f64) {
    if target <= 0.0 {
        return (0, 0.0);
    }
    let last = xi.len() - 1;
    if target >= xi[last] {
        return (last, 0.0);
    }
    let idx = xi.partition_point(|&v| v <= target);
    let j = idx - 1;
    let span = xi[j + 1] - xi[j];
    let f = if span > 0.0 { (target - xi[j]) / span } else { 0.0 };
    (j, f.clamp(0.0, 1.0))
}

fn nonlocal_mass(
    xi_upto: &[f64],
    xi: f64,
    inflow_now: f64,
    inflow: &CumulativeInflow,
    initial: &CumulativeMass,
) -> f64 {
    let exited_inflow = if xi >= 1.0 {
        inflow.at(invert(xi_upto, xi - 1.0))
    } else {
        0.0
    };
    inflow_now - exited_inflow + initial.at((1.0 - xi).max(0.0))
}

/// Solves the fixed point for `ξ` on a window of `rates.len()` substeps by
/// Picard iteration with trapezoidal quadrature in time.
#[allow(clippy::too_many_arguments)]
pub fn solve_characteristic(
    law: &VelocityLaw,
    t0: f64,
    dt: f64,
    rates: &[f64],
    initial: &CumulativeMass,
    tol: f64,
    cap: usize,
) -> Result<CharacteristicWindow> {
    let k = rates.len();
    let inflow = CumulativeInflow::new(rates, dt);
    let v0 = law.checked_speed(t0, initial.total())?;
    let mut xi: Vec<f64> = (0..=k).map(|m| m as f64 * dt * v0).collect();
    let mut w = vec![0.0; k + 1];
    let mut lam = vec![0.0; k + 1];
    let mut next = vec![0.0; k + 1];
    for iteration in 1..=cap {
        for m in 0..=k {
            w[m] = nonlocal_mass(&xi[..=m], xi[m], inflow.at_node(m), &inflow, initial);
            lam[m] = law.checked_speed(t0 + m as f64 * dt, w[m])?;
        }
        next[0] = 0.0;
        for m in 1..=k {
            next[m] = next[m - 1] + 0.5 * dt * (lam[m - 1] + lam[m]);
        }
        let diff = xi
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut xi, &mut next);
        if diff <= tol {
            for m in 0..=k {
                w[m] = nonlocal_mass(&xi[..=m], xi[m], inflow.at_node(m), &inflow, initial);
            }
            return Ok(CharacteristicWindow {
                t0,
                dt,
                xi,
                w,
                iterations: iteration,
                law: law.clone(),
                inflow,
                initial: initial.clone(),
            });
        }
    }
    Err(Error::FixedPointDiverged {
        iterations: cap,
        t_start: t0,
        t_end: t0 + k as f64 * dt,
    })
}
