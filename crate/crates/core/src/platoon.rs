//! Continuous platooning: background traffic `ρ` on a road `[0, L]` drives a
//! truck density `q` whose speed `λ(t, x, W_ρ(t, x))` is the control.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::PiecewiseConstant;
use crate::nonlocal::{
    nonlocal_term, solve_link, Grid, LinkModel, NonlocalWindow, SolverOptions, VelocityLaw,
};
use crate::output::fmt;
use crate::social::{projected_descent, DescentOptions, OptimizeResult};

const REPAIR_TOL: f64 = 1e-12;

/// Speed field sampled on a regular `(t, x, y)` control grid and
/// interpolated multilinearly in between (constant beyond the last `y`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdmissibleVelocityField {
    pub horizon: f64,
    pub length: f64,
    pub t_nodes: usize,
    pub x_nodes: usize,
    /// Sample points of the non-local argument; one entry means no
    /// dependence on it.
    pub y_nodes: Vec<f64>,
    /// Row-major `[t][x][y]`.
    pub values: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lipschitz: f64,
}

impl AdmissibleVelocityField {
    pub fn constant(
        value: f64,
        horizon: f64,
        length: f64,
        t_nodes: usize,
        x_nodes: usize,
        lambda_min: f64,
        lambda_max: f64,
        lipschitz: f64,
    ) -> Self {
        Self {
            horizon,
            length,
            t_nodes,
            x_nodes,
            y_nodes: vec![0.0],
            values: vec![value; t_nodes * x_nodes],
            lambda_min,
            lambda_max,
            lipschitz,
        }
    }

    pub fn depends_on_y(&self) -> bool {
        self.y_nodes.len() > 1
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.x_nodes + j) * self.y_nodes.len() + k
    }

    fn dt(&self) -> f64 {
        self.horizon / (self.t_nodes - 1).max(1) as f64
    }

    fn dx(&self) -> f64 {
        self.length / (self.x_nodes - 1).max(1) as f64
    }

    fn check_shape(&self) -> Result<()> {
        let ny = self.y_nodes.len();
        if self.t_nodes < 2 || self.x_nodes < 2 || ny == 0 {
            return Err(Error::InvalidInput("control grid needs at least 2×2 nodes".into()));
        }
        if self.values.len() != self.t_nodes * self.x_nodes * ny {
            return Err(Error::DimensionMismatch {
                expected: format!("{} control values", self.t_nodes * self.x_nodes * ny),
                found: self.values.len().to_string(),
            });
        }
        if self.y_nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("y nodes must increase".into()));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min <= self.lambda_max && self.lipschitz >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "need 0 < λ_min ≤ λ_max and L ≥ 0, got {}, {}, {}",
                self.lambda_min, self.lambda_max, self.lipschitz
            )));
        }
        Ok(())
    }

    /// Neighbouring sample pairs with their allowed difference.
    fn edges(&self) -> Vec<(usize, usize, f64)> {
        let (nt, nx, ny) = (self.t_nodes, self.x_nodes, self.y_nodes.len());
        let l = self.lipschitz;
        let mut out = Vec::new();
        for i in 0..nt {
            for j in 0..nx {
                for k in 0..ny {
                    let p = self.index(i, j, k);
                    if i + 1 < nt {
                        out.push((p, self.index(i + 1, j, k), l * self.dt()));
                    }
                    if j + 1 < nx {
                        out.push((p, self.index(i, j + 1, k), l * self.dx()));
                    }
                    if k + 1 < ny {
                        out.push((p, self.index(i, j, k + 1), l * (self.y_nodes[k + 1] - self.y_nodes[k])));
                    }
                }
            }
        }
        out
    }

    /// Largest amount by which a bound or a neighbour Lipschitz constraint is
    /// exceeded. Neighbour constraints imply the constraint between any two
    /// samples, by summing along a monotone grid path.
    pub fn max_violation(&self) -> f64 {
        let bounds = self
            .values
            .iter()
            .map(|v| (self.lambda_min - v).max(v - self.lambda_max))
            .fold(0.0, f64::max);
        self.edges()
            .iter()
            .map(|&(p, q, cap)| (self.values[p] - self.values[q]).abs() - cap)
            .fold(bounds, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        self.check_shape()?;
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::LambdaOutOfSet("non-finite sample".into()));
        }
        let v = self.max_violation();
        if v > 1e-9 {
            return Err(Error::LambdaOutOfSet(format!("constraint exceeded by {v:e}")));
        }
        Ok(())
    }

    /// Clips to the bounds, then repairs Lipschitz violations by moving each
    /// offending pair symmetrically toward its mean until it just satisfies
    /// its constraint, sweeping until no pair exceeds its constraint by more
    /// than `1e-12`. Not an orthogonal projection; feasible fields are
    /// returned unchanged.
    pub fn project(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = v.clamp(self.lambda_min, self.lambda_max);
        }
        let edges = out.edges();
        for _ in 0..100_000 {
            let mut changed = false;
            for &(p, q, cap) in &edges {
                let diff = out.values[p] - out.values[q];
                let excess = diff.abs() - cap;
                if excess > REPAIR_TOL {
                    changed = true;
                    let shift = 0.5 * excess * diff.signum();
                    out.values[p] -= shift;
                    out.values[q] += shift;
                }
            }
            if !changed {
                break;
            }
        }
        out
    }

    pub fn eval(&self, t: f64, x: f64, y: f64) -> f64 {
        let locate = |v: f64, n: usize, step: f64| {
            let pos = (v / step).clamp(0.0, (n - 1) as f64);
            let i = (pos.floor() as usize).min(n - 2);
            (i, pos - i as f64)
        };
        let (i, ft) = locate(t, self.t_nodes, self.dt());
        let (j, fx) = locate(x, self.x_nodes, self.dx());
        let ny = self.y_nodes.len();
        let (k, fy) = if ny == 1 || y <= self.y_nodes[0] {
            (0, 0.0)
        } else if y >= self.y_nodes[ny - 1] {
            (ny - 1, 0.0)
        } else {
            let k = self.y_nodes.partition_point(|n| *n <= y) - 1;
            (k, (y - self.y_nodes[k]) / (self.y_nodes[k + 1] - self.y_nodes[k]))
        };
        let mut acc = 0.0;
        for (di, wt) in [(0, 1.0 - ft), (1, ft)] {
            for (dj, wx) in [(0, 1.0 - fx), (1, fx)] {
                for (dk, wy) in [(0, 1.0 - fy), (1, fy)] {
                    let w = wt * wx * wy;
                    if w != 0.0 {
                        acc += w * self.values[self.index(i + di, j + dj, (k + dk).min(ny - 1))];
                    }
                }
            }
        }
        acc
    }
}

/// Background traffic and trucks on the shared road `[0, length] × (0, horizon)`.
#[derive(Clone, Debug)]
pub struct FreightPair {
    pub length: f64,
    pub horizon: f64,
    pub cells: usize,
    pub steps: usize,
    /// Speed `v(t, ∫ρ)` of the background traffic, in road units per time.
    pub background: VelocityLaw,
    pub rho0: Vec<f64>,
    pub u1: PiecewiseConstant,
    /// Coupling window `[b(x), d(x)]` as fractions of the road length.
    pub coupling: NonlocalWindow,
    pub q0: Vec<f64>,
    pub u2: PiecewiseConstant,
}

impl FreightPair {
    pub fn dx(&self) -> f64 {
        self.length / self.cells as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// The worked example: `q0 = (2.6 - x)(x - 1)` on `[1, 2.6]`, road
    /// `[0, 5]`, horizon 2, no background traffic and no inflow.
    pub fn example(cells: usize, steps: usize) -> Self {
        let length = 5.0;
        let q0 = crate::nonlocal::cell_averages(
            |x| {
                let x = x * length;
                if (1.0..=2.6).contains(&x) {
                    (2.6 - x) * (x - 1.0)
                } else {
                    0.0
                }
            },
            cells,
            1.0,
        );
        Self {
            length,
            horizon: 2.0,
            cells,
            steps,
            background: VelocityLaw::inverse_linear(1.0),
            rho0: vec![0.0; cells],
            u1: PiecewiseConstant::zero(),
            coupling: NonlocalWindow::WholeLink,
            q0,
            u2: PiecewiseConstant::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.horizon > 0.0 && self.cells > 0 && self.steps > 0) {
            return Err(Error::InvalidInput("road length, horizon, cells and steps must be positive".into()));
        }
        if self.rho0.len() != self.cells || self.q0.len() != self.cells {
            return Err(Error::DimensionMismatch {
                expected: format!("{} initial cells", self.cells),
                found: format!("{} and {}", self.rho0.len(), self.q0.len()),
            });
        }
        if self.q0.iter().chain(&self.rho0).any(|v| !v.is_finite() || *v < 0.0)
            || self.u1.min_value() < 0.0
            || self.u2.min_value() < 0.0
        {
            return Err(Error::InvalidInput("densities and inflows must be nonnegative".into()));
        }
        self.coupling.validate()
    }
}

/// Solved fields on the common `cells × steps` grid.
#[derive(Clone, Debug)]
pub struct FreightSolution {
    pub dx: f64,
    pub dt: f64,
    /// `steps + 1` rows of background cell averages.
    pub rho: Vec<Vec<f64>>,
    /// `steps + 1` rows of truck cell averages.
    pub q: Vec<Vec<f64>>,
    /// Truck inflow and outflow per step (mass, not rate).
    pub q_in: Vec<f64>,
    pub q_out: Vec<f64>,
}

impl FreightSolution {
    pub fn q_mass(&self, j: usize) -> f64 {
        self.q[j].iter().sum::<f64>() * self.dx
    }

    /// Relative defect of `m(T) - m(0) - ∫u² + ∫y`.
    pub fn q_mass_defect(&self) -> f64 {
        let last = self.q.len() - 1;
        let m0 = self.q_mass(0);
        let inflow: f64 = self.q_in.iter().sum();
        let outflow: f64 = self.q_out.iter().sum();
        let defect = self.q_mass(last) - m0 - inflow + outflow;
        defect.abs() / (m0 + inflow).max(f64::MIN_POSITIVE)
    }

    pub fn write_q_csv<W: Write>(&self, out: W, stride: usize) -> Result<()> {
        write_field(out, &self.q, self.dx, self.dt, stride)
    }

    pub fn write_rho_csv<W: Write>(&self, out: W, stride: usize) -> Result<()> {
        write_field(out, &self.rho, self.dx, self.dt, stride)
    }
}

fn write_field<W: Write>(out: W, rows: &[Vec<f64>], dx: f64, dt: f64, stride: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "value"])?;
    for (j, row) in rows.iter().enumerate().step_by(stride.max(1)) {
        for (i, v) in row.iter().enumerate() {
            w.write_record([fmt(j as f64 * dt), fmt((i as f64 + 0.5) * dx), fmt(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Samples of `λ` at the cell centres of the simulation grid, with the
/// non-local argument taken from `rho` when the field depends on it.
pub fn write_lambda_csv<W: Write>(
    out: W,
    pair: &FreightPair,
    lambda: &AdmissibleVelocityField,
    rho: Option<&[Vec<f64>]>,
    stride: usize,
) -> Result<()> {
    let coupling = Coupling::new(pair, lambda, rho);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "lambda"])?;
    for j in (0..=pair.steps).step_by(stride.max(1)) {
        let t = j as f64 * pair.dt();
        for i in 0..pair.cells {
            let x = (i as f64 + 0.5) * pair.dx();
            w.write_record([fmt(t), fmt(x), fmt(coupling.speed(j, t, x))])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Background density in road units.
pub fn solve_background(pair: &FreightPair) -> Result<Vec<Vec<f64>>> {
    pair.validate()?;
    let scale = 1.0 / pair.length;
    let law = match &pair.background {
        VelocityLaw::Constant(c) => VelocityLaw::Constant(c * scale),
        VelocityLaw::InverseLinear { free_speed, scale: s } => VelocityLaw::InverseLinear {
            free_speed: free_speed * scale,
            scale: *s,
        },
        VelocityLaw::Custom { f, congestion } => {
            let f = f.clone();
            VelocityLaw::custom(move |t, w| f(t, w) * scale, *congestion)
        }
    };
    let grid = Grid::new(pair.cells, pair.steps, pair.horizon)?;
    let dt = grid.dt();
    let inflow: Vec<f64> = (0..pair.steps)
        .map(|j| pair.u1.average(j as f64 * dt, (j + 1) as f64 * dt))
        .collect();
    let rho0: Vec<f64> = pair.rho0.iter().map(|r| r * pair.length).collect();
    // ∫ρ over the road is the same in either unit; the density scales back
    let model = LinkModel::new(law, NonlocalWindow::WholeLink);
    let state = solve_link(&model, &inflow, &rho0, &grid, &SolverOptions::default())?;
    Ok(state
        .density
        .into_iter()
        .map(|row| row.into_iter().map(|r| r * scale).collect())
        .collect())
}

/// Truck speed as a function of time and position, with the non-local
/// background argument sampled at cell edges on every time node.
struct Coupling<'a> {
    lambda: &'a AdmissibleVelocityField,
    /// `w[j][i]` at edge `i`, present only when `λ` depends on `y`.
    w: Option<Vec<Vec<f64>>>,
    dx: f64,
    cells: usize,
}

impl<'a> Coupling<'a> {
    fn new(pair: &FreightPair, lambda: &'a AdmissibleVelocityField, rho: Option<&[Vec<f64>]>) -> Self {
        let w = match (lambda.depends_on_y(), rho) {
            (true, Some(rho)) => Some(
                rho.iter()
                    .map(|row| {
                        // back to unit-road density for the window integral
                        let unit: Vec<f64> = row.iter().map(|r| r * pair.length).collect();
                        (0..=pair.cells)
                            .map(|i| nonlocal_term(&unit, &pair.coupling, i as f64 / pair.cells as f64))
                            .collect()
                    })
                    .collect(),
            ),
            _ => None,
        };
        Self {
            lambda,
            w,
            dx: pair.dx(),
            cells: pair.cells,
        }
    }

    fn speed(&self, j: usize, t: f64, x: f64) -> f64 {
        let x = x.max(0.0);
        let y = match &self.w {
            None => 0.0,
            Some(w) => {
                let row = &w[j.min(w.len() - 1)];
                let pos = (x / self.dx).min(self.cells as f64);
                let i = (pos.floor() as usize).min(self.cells - 1);
                let f = pos - i as f64;
                row[i] * (1.0 - f) + row[i + 1] * f
            }
        };
        self.lambda.eval(t, x, y)
    }
}

/// Monotone cubic (Fritsch-Butland) interpolant of a nondecreasing
/// cumulative count on uniform edges; its secants are the cell averages.
struct Cumulative<'a> {
    edges: Vec<f64>,
    cells: &'a [f64],
    slopes: Vec<f64>,
    dx: f64,
}

impl<'a> Cumulative<'a> {
    fn new(cells: &'a [f64], dx: f64) -> Self {
        let n = cells.len();
        let mut edges = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        edges.push(0.0);
        for q in cells {
            acc += q * dx;
            edges.push(acc);
        }
        let mut slopes = vec![0.0; n + 1];
        slopes[0] = cells[0];
        slopes[n] = cells[n - 1];
        for i in 1..n {
            let (a, b) = (cells[i - 1], cells[i]);
            slopes[i] = if a > 0.0 && b > 0.0 { 2.0 * a * b / (a + b) } else { 0.0 };
        }
        Self {
            edges,
            cells,
            slopes,
            dx,
        }
    }

    fn at(&self, x: f64) -> f64 {
        let n = self.cells.len();
        if x <= 0.0 {
            return 0.0;
        }
        let pos = x / self.dx;
        if pos >= n as f64 {
            return self.edges[n];
        }
        let i = pos.floor() as usize;
        let s = pos - i as f64;
        if s == 0.0 {
            return self.edges[i];
        }
        let (y0, y1) = (self.edges[i], self.edges[i + 1]);
        let (m0, m1) = (self.slopes[i] * self.dx, self.slopes[i + 1] * self.dx);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * m1
    }
}

/// How the truck equation is discretized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TruckScheme {
    /// Cumulative counts carried along backward characteristics.
    Characteristics,
    /// First-order upwind finite volumes, for cross-checks.
    Upwind,
}

/// Advects `q` with the speed field. `rho` is needed only when `λ` depends on
/// the non-local argument.
pub fn solve_trucks(
    pair: &FreightPair,
    lambda: &AdmissibleVelocityField,
    rho: Option<&[Vec<f64>]>,
    scheme: TruckScheme,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    pair.validate()?;
    lambda.validate()?;
    if lambda.depends_on_y() && rho.is_none() {
        return Err(Error::InvalidInput("speed field depends on the background density".into()));
    }
    let coupling = Coupling::new(pair, lambda, rho);
    let (n, dx, dt) = (pair.cells, pair.dx(), pair.dt());
    let cum_in = |t: f64| pair.u2.integral(0.0, t);
    let mut rows = Vec::with_capacity(pair.steps + 1);
    rows.push(pair.q0.clone());
    let mut q_in = Vec::with_capacity(pair.steps);
    let mut q_out = Vec::with_capacity(pair.steps);
    for j in 0..pair.steps {
        let (t0, t1) = (j as f64 * dt, (j + 1) as f64 * dt);
        let prev = &rows[j];
        let inflow = cum_in(t1) - cum_in(t0);
        let next = match scheme {
            TruckScheme::Characteristics => {
                let cum = Cumulative::new(prev, dx);
                let (u0, u1) = (cum_in(t0), cum_in(t1));
                // count of trucks still upstream of each edge at t1, relative
                // to all trucks that entered by t1
                let upstream: Vec<f64> = (0..=n)
                    .map(|i| {
                        let x = i as f64 * dx;
                        let k1 = coupling.speed(j + 1, t1, x);
                        let k2 = coupling.speed(j, t0, x - dt * k1);
                        let back = x - 0.5 * dt * (k1 + k2);
                        if back >= 0.0 {
                            u1 - u0 + cum.at(back)
                        } else {
                            let tau = t1 - dt * x / (x - back);
                            u1 - cum_in(tau)
                        }
                    })
                    .collect();
                q_out.push(cum.edges[n] + inflow - upstream[n]);
                (0..n).map(|i| (upstream[i + 1] - upstream[i]) / dx).collect::<Vec<f64>>()
            }
            TruckScheme::Upwind => {
                let vmax = lambda.lambda_max;
                let sub = ((vmax * dt / (0.9 * dx)).ceil() as usize).max(1);
                let h = dt / sub as f64;
                let mut row = prev.clone();
                let mut out = 0.0;
                for s in 0..sub {
                    let t = t0 + s as f64 * h;
                    let rate = pair.u2.average(t, t + h);
                    let flux: Vec<f64> = (1..=n)
                        .map(|i| coupling.speed(j, t, i as f64 * dx) * row[i - 1])
                        .collect();
                    let mut next = row.clone();
                    next[0] += h / dx * (rate - flux[0]);
                    for i in 1..n {
                        next[i] += h / dx * (flux[i - 1] - flux[i]);
                    }
                    out += h * flux[n - 1];
                    row = next;
                }
                q_out.push(out);
                row
            }
        };
        q_in.push(inflow);
        rows.push(next);
    }
    Ok((rows, q_in, q_out))
}

pub fn solve_freight_pair(pair: &FreightPair, lambda: &AdmissibleVelocityField) -> Result<FreightSolution> {
    let rho = solve_background(pair)?;
    let (q, q_in, q_out) = solve_trucks(pair, lambda, Some(&rho), TruckScheme::Characteristics)?;
    Ok(FreightSolution {
        dx: pair.dx(),
        dt: pair.dt(),
        rho,
        q,
        q_in,
        q_out,
    })
}

/// `(∫x²q w dx, ∫x q w dx)` with `w` the cell weight, exact for piecewise
/// constant cells.
fn moments(q: &[f64], weight: impl Fn(usize) -> f64, dx: f64) -> (f64, f64) {
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (i, v) in q.iter().enumerate() {
        let (a, b) = (i as f64 * dx, (i + 1) as f64 * dx);
        let c = v * weight(i);
        m1 += c * (b * b - a * a) / 2.0;
        m2 += c * (b * b * b - a * a * a) / 3.0;
    }
    (m2, m1)
}

/// `∫x²q dx - (∫x q dx)²` of one row; unnormalized, so it mixes mass and
/// spread when the mass is not 1.
pub fn spatial_variance(q: &[f64], dx: f64) -> f64 {
    let (m2, m1) = moments(q, |_| 1.0, dx);
    m2 - m1 * m1
}

/// Variance of the row normalized by its mass.
pub fn normalized_variance(q: &[f64], dx: f64) -> f64 {
    let mass: f64 = q.iter().sum::<f64>() * dx;
    if mass <= 0.0 {
        return 0.0;
    }
    let (m2, m1) = moments(q, |_| 1.0, dx);
    m2 / mass - (m1 / mass).powi(2)
}

/// `(J1, J2)`: time integrals (trapezoidal) of the variance bracket, with
/// unit weight and with weight `1 + ρ`.
pub fn variance_objectives(q: &[Vec<f64>], rho: Option<&[Vec<f64>]>, dx: f64, dt: f64) -> (f64, f64) {
    let trapezoid = |vals: Vec<f64>| {
        let n = vals.len();
        vals.iter()
            .enumerate()
            .map(|(j, v)| if j == 0 || j + 1 == n { 0.5 * v } else { *v })
            .sum::<f64>()
            * dt
    };
    let j1 = trapezoid(q.iter().map(|row| spatial_variance(row, dx)).collect());
    let j2 = match rho {
        None => j1,
        Some(rho) => trapezoid(
            q.iter()
                .zip(rho)
                .map(|(row, r)| {
                    let (m2, m1) = moments(row, |i| 1.0 + r[i], dx);
                    m2 - m1 * m1
                })
                .collect(),
        ),
    };
    (j1, j2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PlatoonObjective {
    J1,
    J2,
}

/// Projected finite-difference descent over the control samples.
pub fn optimize_velocity(
    pair: &FreightPair,
    start: &AdmissibleVelocityField,
    objective: PlatoonObjective,
    opts: &DescentOptions,
) -> Result<OptimizeResult<AdmissibleVelocityField>> {
    start.check_shape()?;
    let needs_rho = objective == PlatoonObjective::J2 || start.depends_on_y();
    let rho = if needs_rho { Some(solve_background(pair)?) } else { None };
    let field = |x: &[f64]| AdmissibleVelocityField {
        values: x.to_vec(),
        ..start.clone()
    };
    let project = |x: &[f64]| field(x).project().values;
    let evaluate = |x: &[f64]| -> Result<f64> {
        let (q, _, _) = solve_trucks(pair, &field(x), rho.as_deref(), TruckScheme::Characteristics)?;
        let (j1, j2) = variance_objectives(&q, rho.as_deref(), pair.dx(), pair.dt());
        Ok(match objective {
            PlatoonObjective::J1 => j1,
            PlatoonObjective::J2 => j2,
        })
    };
    let (x, j, trace, status, sims) = projected_descent(&start.values, project, evaluate, opts)?;
    Ok(OptimizeResult {
        controls: field(&x),
        objective: j,
        trace,
        status,
        simulations: sims,
        local_minimum_caveat: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn figure_field(value: f64) -> AdmissibleVelocityField {
        AdmissibleVelocityField::constant(value, 2.0, 5.0, 16, 16, 0.5, 1.0, 0.1)
    }

    #[test]
    fn constant_speed_translates_bump() {
        // 0.75 dt = dx: every step is an exact one-cell shift
        let pair = FreightPair::example(200, 60);
        let (q, _, out) = solve_trucks(&pair, &figure_field(0.75), None, TruckScheme::Characteristics).unwrap();
        for j in [1, 30, 60] {
            for i in 0..200 {
                let expected = if i >= j { pair.q0[i - j] } else { 0.0 };
                assert!((q[j][i] - expected).abs() < 1e-12, "step {j} cell {i}");
            }
        }
        assert!(out.iter().all(|o| *o == 0.0));
    }

    #[test]
    fn zero_data_stays_zero() {
        let mut pair = FreightPair::example(50, 20);
        pair.q0 = vec![0.0; 50];
        let (q, _, _) = solve_trucks(&pair, &figure_field(0.8), None, TruckScheme::Characteristics).unwrap();
        assert!(q.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn coupling_is_inert_without_y_dependence() {
        let mut pair = FreightPair::example(100, 40);
        pair.rho0 = crate::nonlocal::cell_averages(|x| 2.0 * (x * 6.0).sin().abs(), 100, 1.0);
        pair.u1 = PiecewiseConstant::constant(0.5, 0.0, 2.0);
        let mut lambda = figure_field(0.7);
        lambda.values[40] = 0.72;
        let lambda = lambda.project();
        let with = solve_freight_pair(&pair, &lambda).unwrap();
        let (without, _, _) = solve_trucks(&pair, &lambda, None, TruckScheme::Characteristics).unwrap();
        assert_eq!(with.q, without);
    }

    #[test]
    fn background_slows_trucks_through_coupling() {
        let mut pair = FreightPair::example(100, 40);
        pair.rho0 = vec![3.0; 100];
        let lambda = AdmissibleVelocityField {
            y_nodes: vec![0.0, 30.0],
            values: (0..16 * 16).flat_map(|_| [1.0, 0.5]).collect(),
            lipschitz: 1.0,
            ..figure_field(0.75)
        };
        lambda.validate().unwrap();
        let loaded = solve_freight_pair(&pair, &lambda).unwrap();
        pair.rho0 = vec![0.0; 100];
        let free = solve_freight_pair(&pair, &lambda).unwrap();
        let mean = |row: &[f64]| moments(row, |_| 1.0, 0.05).1;
        assert!(mean(&loaded.q[40]) < mean(&free.q[40]));
        assert!(loaded.q_mass_defect() < 1e-12);
    }

    #[test]
    fn characteristics_and_upwind_converge_together() {
        let mut lambda = figure_field(0.75);
        for i in 0..16 {
            for j in 0..16 {
                lambda.values[i * 16 + j] = 1.0 - 0.03 * j as f64;
            }
        }
        lambda.validate().unwrap();
        let gap = |cells: usize| {
            let pair = FreightPair {
                u2: PiecewiseConstant::constant(0.3, 0.0, 0.5),
                ..FreightPair::example(cells, cells / 2)
            };
            let (a, _, _) = solve_trucks(&pair, &lambda, None, TruckScheme::Characteristics).unwrap();
            let (b, _, _) = solve_trucks(&pair, &lambda, None, TruckScheme::Upwind).unwrap();
            let last = cells / 2;
            let l1: f64 = a[last].iter().zip(&b[last]).map(|(x, y)| (x - y).abs()).sum::<f64>();
            l1 / a[last].iter().sum::<f64>()
        };
        let (coarse, fine) = (gap(200), gap(1600));
        assert!(fine < 0.05, "relative L1 {fine}");
        assert!(coarse / fine > 2.0, "{coarse} -> {fine}");
    }

    #[test]
    fn variance_examples() {
        let dx = 0.01;
        let mut spike = vec![0.0; 100];
        spike[37] = 1.0 / dx;
        assert!(spatial_variance(&spike, dx) <= dx * dx);

        let flat = vec![vec![1.0; 100]; 11];
        let (j1, j2) = variance_objectives(&flat, None, dx, 0.1);
        assert!((j1 - 1.0 / 12.0).abs() < 1e-12);
        assert_eq!(j1, j2);
        let zero = vec![vec![0.0; 100]; 11];
        let (j1, j2) = variance_objectives(&flat, Some(&zero), dx, 0.1);
        assert_eq!(j1, j2);
    }

    #[test]
    fn projection_examples() {
        let f = figure_field(0.75);
        assert_eq!(f.project(), f);
        let mut g = f.clone();
        g.values[17] = 3.0;
        g.values[100] = -1.0;
        let p = g.project();
        assert!(p.max_violation() <= 1e-9);
        assert!(g.validate().is_err());
    }

    #[test]
    fn singleton_set_leaves_objective_unchanged() {
        let pair = FreightPair::example(100, 40);
        let start = AdmissibleVelocityField::constant(0.6, 2.0, 5.0, 4, 4, 0.6, 0.6, 0.1);
        let res = optimize_velocity(&pair, &start, PlatoonObjective::J1, &DescentOptions::default()).unwrap();
        assert_eq!(res.controls, start);
        assert_eq!(res.trace.len(), 1);
    }

    #[test]
    fn point_mass_cannot_be_improved_much() {
        // unit speed moves the spike exactly one cell per step, so it stays a
        // single cell and J1 sits at its floor dx²/12 · T
        let mut pair = FreightPair::example(100, 40);
        pair.q0 = vec![0.0; 100];
        pair.q0[10] = 1.0 / pair.dx();
        let start = AdmissibleVelocityField::constant(1.0, 2.0, 5.0, 4, 4, 0.5, 1.0, 0.1);
        let (q, _, _) = solve_trucks(&pair, &start, None, TruckScheme::Characteristics).unwrap();
        let j0 = variance_objectives(&q, None, pair.dx(), pair.dt()).0;
        assert!((j0 - pair.dx().powi(2) / 12.0 * 2.0).abs() < 1e-9);
        let res = optimize_velocity(&pair, &start, PlatoonObjective::J1, &DescentOptions { budget: 300, ..Default::default() }).unwrap();
        assert!(res.objective <= j0);
        assert!(j0 - res.objective <= 1e-9, "{j0} -> {}", res.objective);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn projection_is_feasible_and_idempotent(values in proptest::collection::vec(0.0f64..1.5, 16)) {
            let f = AdmissibleVelocityField {
                values,
                ..AdmissibleVelocityField::constant(0.7, 2.0, 5.0, 4, 4, 0.5, 1.0, 0.1)
            };
            let p = f.project();
            prop_assert!(p.max_violation() <= 1e-9);
            prop_assert_eq!(p.project(), p);
        }

        #[test]
        fn truck_mass_is_conserved(values in proptest::collection::vec(0.5f64..1.0, 16), inflow in 0.0f64..1.0) {
            let f = AdmissibleVelocityField {
                values,
                ..AdmissibleVelocityField::constant(0.7, 2.0, 5.0, 4, 4, 0.5, 1.0, 0.1)
            }
            .project();
            let pair = FreightPair { u2: PiecewiseConstant::constant(inflow, 0.0, 1.0), ..FreightPair::example(80, 30) };
            let sol = solve_freight_pair(&pair, &f).unwrap();
            prop_assert!(sol.q_mass_defect() <= 1e-6);
            prop_assert!(sol.q.iter().flatten().all(|v| *v >= -1e-12));
        }
    }
}
