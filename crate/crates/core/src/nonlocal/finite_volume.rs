//! First-order upwind finite volumes for general windows.
//!
//! All commodities on a link share the interface speeds
//! `λ(t, W(x_{i+1/2}))` computed from the aggregate row. Inlet flux is the
//! prescribed inflow, outlet flux `λ(t, W(1)) ρ_{N-1}`.

use super::law::{NonlocalWindow, Reconstruction, VelocityLaw};
use crate::error::{Error, Result};

pub const DEFAULT_CFL: f64 = 0.9;
pub const MAX_HALVINGS: u32 = 8;

#[derive(Clone, Debug)]
pub struct FvStep {
    pub rows: Vec<Vec<f64>>,
    /// Step-averaged outflow per commodity.
    pub outflow: Vec<f64>,
    pub substeps: usize,
    /// Interface speeds at the start of the step.
    pub speeds: Vec<f64>,
}

pub fn interface_speeds(
    law: &VelocityLaw,
    window: &NonlocalWindow,
    t: f64,
    aggregate: &[f64],
) -> Result<Vec<f64>> {
    let n = aggregate.len();
    let dx = 1.0 / n as f64;
    let rec = Reconstruction::new(aggregate, dx);
    (0..=n)
        .map(|i| {
            let (b, d) = window.bounds(i as f64 * dx);
            law.checked_speed(t, rec.integral(b, d))
        })
        .collect()
}

fn aggregate(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.first().map_or(0, Vec::len);
    (0..n).map(|i| rows.iter().map(|r| r[i]).sum()).collect()
}

/// Advances all commodity rows over `[t0, t0 + dt]` with constant inflow
/// rates, halving the internal substep (up to eight times) until every
/// substep satisfies `V_max h ≤ cfl Δx`.
pub fn fv_step(
    law: &VelocityLaw,
    window: &NonlocalWindow,
    t0: f64,
    dt: f64,
    rows: &[Vec<f64>],
    inflow: &[f64],
    cfl: f64,
) -> Result<FvStep> {
    let n = rows.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(Error::InvalidInput("empty density row".into()));
    }
    let dx = 1.0 / n as f64;
    let start_speeds = interface_speeds(law, window, t0, &aggregate(rows))?;
    let mut last_violation = (t0, 0.0);
    for halving in 0..=MAX_HALVINGS {
        let substeps = 1usize << halving;
        let h = dt / substeps as f64;
        let mut current: Vec<Vec<f64>> = rows.to_vec();
        let mut outflow = vec![0.0; rows.len()];
        let mut ok = true;
        for s in 0..substeps {
            let t = t0 + s as f64 * h;
            let speeds = if s == 0 {
                start_speeds.clone()
            } else {
                interface_speeds(law, window, t, &aggregate(&current))?
            };
            let vmax = speeds.iter().copied().fold(0.0, f64::max);
            if vmax * h > cfl * dx {
                last_violation = (t, vmax);
                ok = false;
                break;
            }
            let r = h / dx;
            for (k, row) in current.iter_mut().enumerate() {
                let mut flux_in = inflow[k];
                for i in 0..n {
                    let flux_out = speeds[i + 1] * row[i];
                    row[i] += r * (flux_in - flux_out);
                    flux_in = flux_out;
                }
                outflow[k] += flux_in * h;
            }
        }
        if ok {
            for y in &mut outflow {
                *y /= dt;
            }
            return Ok(FvStep {
                rows: current,
                outflow,
                substeps,
                speeds: start_speeds,
            });
        }
    }
    let (t, speed) = last_violation;
    Err(Error::CflViolated {
        t,
        speed,
        dt_max: cfl * dx / speed,
    })
}
