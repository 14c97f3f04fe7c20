//! Single-link solves over a full horizon and the per-step advance used by
//! the network simulator.

use std::io::Write;

use super::characteristics::{
    solve_characteristic, CharacteristicWindow, CumulativeInflow, DEFAULT_FIXED_POINT_CAP,
    DEFAULT_FIXED_POINT_TOL,
};
use super::finite_volume::{fv_step, DEFAULT_CFL};
use super::law::{nonlocal_term, CumulativeMass, NonlocalWindow, VelocityLaw};
use crate::error::{Error, Result};

pub const DEFAULT_CELLS: usize = 400;

/// Uniform space-time grid on `[0, 1] × [0, horizon]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub cells: usize,
    pub steps: usize,
    pub horizon: f64,
}

impl Grid {
    pub fn new(cells: usize, steps: usize, horizon: f64) -> Result<Self> {
        if cells == 0 || steps == 0 || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "grid needs cells > 0, steps > 0 and a positive horizon (got {cells}, {steps}, {horizon})"
            )));
        }
        Ok(Self {
            cells,
            steps,
            horizon,
        })
    }

    /// Smallest step count with `max_speed Δt ≤ cfl Δx`.
    pub fn with_cfl(cells: usize, horizon: f64, max_speed: f64, cfl: f64) -> Result<Self> {
        let dx = 1.0 / cells as f64;
        let steps = (horizon * max_speed / (cfl * dx)).ceil().max(1.0) as usize;
        Self::new(cells, steps, horizon)
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.cells as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    pub fn centre(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scheme {
    /// Characteristics on whole-link windows, finite volumes otherwise.
    #[default]
    Auto,
    FiniteVolume,
    Characteristics,
}

#[derive(Clone, Debug)]
pub struct LinkModel {
    pub velocity: VelocityLaw,
    pub window: NonlocalWindow,
}

impl LinkModel {
    pub fn new(velocity: VelocityLaw, window: NonlocalWindow) -> Self {
        Self { velocity, window }
    }

    pub fn uses_characteristics(&self, scheme: Scheme) -> Result<bool> {
        match scheme {
            Scheme::Auto => Ok(self.window.is_whole_link()),
            Scheme::FiniteVolume => Ok(false),
            Scheme::Characteristics if self.window.is_whole_link() => Ok(true),
            Scheme::Characteristics => Err(Error::InvalidInput(
                "the characteristic scheme needs a whole-link window".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub scheme: Scheme,
    pub cfl: f64,
    pub fixed_point_tol: f64,
    pub fixed_point_cap: usize,
    /// Restart length `T1` of characteristic windows; the effective window is
    /// `min(window_length, T)`.
    pub window_length: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            scheme: Scheme::Auto,
            cfl: DEFAULT_CFL,
            fixed_point_tol: DEFAULT_FIXED_POINT_TOL,
            fixed_point_cap: DEFAULT_FIXED_POINT_CAP,
            window_length: 0.5,
        }
    }
}

/// Density history of one commodity on one link.
#[derive(Clone, Debug)]
pub struct LinkState {
    pub grid: Grid,
    pub model: LinkModel,
    /// `steps + 1` rows of `cells` cell averages.
    pub density: Vec<Vec<f64>>,
    /// Step-averaged inflow, one value per step.
    pub inflow: Vec<f64>,
    /// Step-averaged outflow, one value per step.
    pub outflow: Vec<f64>,
    /// Characteristic position at every time node, when solved by
    /// characteristics.
    pub xi: Option<Vec<f64>>,
    pub fixed_point_iterations: usize,
}

impl LinkState {
    pub fn mass(&self, j: usize) -> f64 {
        self.density[j].iter().sum::<f64>() * self.grid.dx()
    }

    /// `∫ρ(T) - ∫ρ0 - (∫u - ∫y)`, exact up to rounding for both schemes.
    pub fn mass_defect(&self) -> f64 {
        let dt = self.grid.dt();
        let net: f64 = self
            .inflow
            .iter()
            .zip(&self.outflow)
            .map(|(u, y)| (u - y) * dt)
            .sum();
        self.mass(self.grid.steps) - self.mass(0) - net
    }

    pub fn write_density_csv<W: Write>(&self, out: W, stride: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "rho"])?;
        let stride = stride.max(1);
        for j in (0..=self.grid.steps).step_by(stride) {
            for (i, rho) in self.density[j].iter().enumerate() {
                w.write_record([
                    crate::output::fmt(self.grid.time(j)),
                    crate::output::fmt(self.grid.centre(i)),
                    crate::output::fmt(*rho),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_flux_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_start", "t_end", "u", "y"])?;
        for j in 0..self.grid.steps {
            w.write_record([
                crate::output::fmt(self.grid.time(j)),
                crate::output::fmt(self.grid.time(j + 1)),
                crate::output::fmt(self.inflow[j]),
                crate::output::fmt(self.outflow[j]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outgoing flux `λ(t, W(t, 1)) ρ(t, 1)` read from the stored row at the
/// last time node not after `t`.
pub fn outflux(state: &LinkState, t: f64) -> f64 {
    let j = ((t / state.grid.dt()).floor().max(0.0) as usize).min(state.grid.steps);
    let row = &state.density[j];
    let w = nonlocal_term(row, &state.model.window, 1.0);
    let rho_end = *row.last().unwrap_or(&0.0);
    if rho_end == 0.0 {
        return 0.0;
    }
    state.model.velocity.speed(t, w) * rho_end
}

/// Solves one link over the full grid horizon for inflow rates `inflow`
/// (one per step) and initial cell averages `rho0`.
pub fn solve_link(
    model: &LinkModel,
    inflow: &[f64],
    rho0: &[f64],
    grid: &Grid,
    options: &SolverOptions,
) -> Result<LinkState> {
    model.window.validate()?;
    if inflow.len() != grid.steps || rho0.len() != grid.cells {
        return Err(Error::DimensionMismatch {
            expected: format!("{} inflow steps and {} cells", grid.steps, grid.cells),
            found: format!("{} and {}", inflow.len(), rho0.len()),
        });
    }
    if inflow.iter().chain(rho0).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput(
            "inflow and initial density must be finite and nonnegative".into(),
        ));
    }
    let mut state = LinkState {
        grid: *grid,
        model: model.clone(),
        density: Vec::with_capacity(grid.steps + 1),
        inflow: inflow.to_vec(),
        outflow: Vec::with_capacity(grid.steps),
        xi: None,
        fixed_point_iterations: 0,
    };
    state.density.push(rho0.to_vec());
    let dt = grid.dt();
    if model.uses_characteristics(options.scheme)? {
        let window_steps = ((options.window_length.min(grid.horizon) / dt).round() as usize).max(1);
        let mut xi_hist = vec![0.0];
        let mut j = 0;
        while j < grid.steps {
            let len = window_steps.min(grid.steps - j);
            let row = state.density[j].clone();
            let (win, rates) = solve_window_subdividing(model, grid, options, j, &inflow[j..j + len], &row)?;
            let k = rates.len();
            let cum = CumulativeInflow::new(&rates, win.dt);
            let m0 = CumulativeMass::new(&row, grid.dx());
            let ratio = k / len;
            let base = *xi_hist.last().unwrap();
            let mut prev_out = 0.0;
            for s in 1..=len {
                let m = s * ratio;
                state.density.push(win.row(m, grid.cells, &cum, &m0));
                let out = win.cumulative_outflow(m, &cum, &m0);
                state.outflow.push((out - prev_out) / dt);
                prev_out = out;
                xi_hist.push(base + win.xi[m]);
            }
            state.fixed_point_iterations += win.iterations;
            j += len;
        }
        state.xi = Some(xi_hist);
    } else {
        for j in 0..grid.steps {
            let step = fv_step(
                &model.velocity,
                &model.window,
                grid.time(j),
                dt,
                std::slice::from_ref(&state.density[j]),
                &inflow[j..=j],
                options.cfl,
            )?;
            state.outflow.push(step.outflow[0]);
            state.density.push(step.rows.into_iter().next().unwrap());
        }
    }
    Ok(state)
}

/// Solves the characteristic on steps `j..j + rates.len()`, halving the
/// internal substep (and with it the fixed-point contraction factor of each
/// sub-window) whenever Picard iteration stalls. Returns the window and the
/// substep rates it was solved with.
fn solve_window_subdividing(
    model: &LinkModel,
    grid: &Grid,
    options: &SolverOptions,
    j: usize,
    rates: &[f64],
    row: &[f64],
) -> Result<(CharacteristicWindow, Vec<f64>)> {
    let m0 = CumulativeMass::new(row, grid.dx());
    let dt = grid.dt();
    let mut refine = 1usize;
    loop {
        let fine: Vec<f64> = rates
            .iter()
            .flat_map(|&r| std::iter::repeat(r).take(refine))
            .collect();
        match solve_characteristic(
            &model.velocity,
            grid.time(j),
            dt / refine as f64,
            &fine,
            &m0,
            options.fixed_point_tol,
            options.fixed_point_cap,
        ) {
            Ok(win) => return Ok((win, fine)),
            Err(Error::FixedPointDiverged { .. }) if refine < 256 => refine *= 2,
            Err(e) => return Err(e),
        }
    }
}

/// Result of advancing every commodity on one link by one time step.
#[derive(Clone, Debug)]
pub struct StepAdvance {
    pub rows: Vec<Vec<f64>>,
    /// Step-averaged outflow per commodity.
    pub outflow: Vec<f64>,
    /// Distance covered by the characteristic during the step.
    pub xi_advance: Option<f64>,
}

/// Advances all commodity rows of a link over `[t0, t0 + dt]` with constant
/// inflow rates. Every commodity moves with the speed of the aggregate.
pub fn advance_step(
    model: &LinkModel,
    options: &SolverOptions,
    t0: f64,
    dt: f64,
    rows: &[Vec<f64>],
    inflow: &[f64],
) -> Result<StepAdvance> {
    if model.uses_characteristics(options.scheme)? {
        let n = rows[0].len();
        let dx = 1.0 / n as f64;
        let aggregate: Vec<f64> = (0..n).map(|i| rows.iter().map(|r| r[i]).sum()).collect();
        let total_in: f64 = inflow.iter().sum();
        let m0 = CumulativeMass::new(&aggregate, dx);
        let mut refine = 1usize;
        let win = loop {
            let rates = vec![total_in; refine];
            match solve_characteristic(
                &model.velocity,
                t0,
                dt / refine as f64,
                &rates,
                &m0,
                options.fixed_point_tol,
                options.fixed_point_cap,
            ) {
                Ok(win) => break win,
                Err(Error::FixedPointDiverged { .. }) if refine < 256 => refine *= 2,
                Err(e) => return Err(e),
            }
        };
        let mut out_rows = Vec::with_capacity(rows.len());
        let mut outflow = Vec::with_capacity(rows.len());
        for (row, &u) in rows.iter().zip(inflow) {
            let cum = CumulativeInflow::new(&vec![u; refine], dt / refine as f64);
            let mk = CumulativeMass::new(row, dx);
            out_rows.push(win.row(refine, n, &cum, &mk));
            outflow.push(win.cumulative_outflow(refine, &cum, &mk) / dt);
        }
        Ok(StepAdvance {
            rows: out_rows,
            outflow,
            xi_advance: Some(win.xi[refine]),
        })
    } else {
        let step = fv_step(&model.velocity, &model.window, t0, dt, rows, inflow, options.cfl)?;
        Ok(StepAdvance {
            rows: step.rows,
            outflow: step.outflow,
            xi_advance: None,
        })
    }
}
