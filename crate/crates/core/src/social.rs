//! Backlog objective and a derivative-free search over piecewise-constant
//! splits and departure rates.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{LinkId, NodeId, Piece, PiecewiseConstant, SourceSchedule};
use crate::network_sim::{simulate, NetworkScenario, NetworkState};

/// Total demand `d_a^{v,k}` per commodity and departure link.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DemandSpec {
    pub entries: BTreeMap<(usize, LinkId), f64>,
}

impl DemandSpec {
    pub fn total(&self, k: usize) -> f64 {
        self.entries
            .iter()
            .filter(|((c, _), _)| *c == k)
            .map(|(_, d)| d)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.values().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidInput("demand must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// `J = Σ_k ∫_0^T (D_k - A_k(t))² dt` as a left Riemann sum on the time
/// grid, with `D_k` the total demand of commodity `k` (one commodity per
/// destination and class) and `A_k` its cumulative arrivals.
pub fn backlog_objective(state: &NetworkState, demand: &DemandSpec) -> f64 {
    let dt = state.grid.dt();
    (0..state.commodities.len())
        .map(|k| {
            let d = demand.total(k);
            state.arrivals[k][..state.steps_done]
                .iter()
                .map(|a| (d - a).powi(2) * dt)
                .sum::<f64>()
        })
        .sum()
}

/// Rescales a nonnegative rate trajectory on intervals of the given lengths
/// so that it integrates to `demand`; an all-zero trajectory becomes the
/// uniform rate.
pub fn project_demand(rates: &[f64], lengths: &[f64], demand: f64) -> Vec<f64> {
    let clipped: Vec<f64> = rates.iter().map(|r| r.max(0.0)).collect();
    let integral: f64 = clipped.iter().zip(lengths).map(|(r, l)| r * l).sum();
    if integral <= 0.0 {
        let total: f64 = lengths.iter().sum();
        return vec![demand / total; rates.len()];
    }
    let scale = demand / integral;
    if (scale - 1.0).abs() <= 1e-15 {
        return clipped;
    }
    clipped.iter().map(|r| r * scale).collect()
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        acc += x;
        let candidate = (acc - 1.0) / (i + 1) as f64;
        if x - candidate > 0.0 {
            tau = candidate;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - tau).max(0.0)).collect();
    // put the rounding residue on the largest entry
    let residue = 1.0 - out.iter().sum::<f64>();
    if let Some(m) = out
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
    {
        out[m] += residue;
    }
    out
}

/// Which split rows and departure rates are controlled, on `intervals`
/// equal intervals of `[0, T]`.
#[derive(Clone, Debug)]
pub struct Parameterization {
    pub intervals: usize,
    /// `(commodity, node)` pairs whose split row is controlled.
    pub split_knobs: Vec<(usize, NodeId)>,
    /// `(commodity, link)` pairs whose departure rate is controlled.
    pub source_knobs: Vec<(usize, LinkId)>,
}

/// Values of the controlled quantities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Controls {
    /// `[knob][interval][out-link]`
    pub theta: Vec<Vec<Vec<f64>>>,
    /// `[knob][interval]`
    pub rates: Vec<Vec<f64>>,
}

/// A social-optimum problem: a base scenario, the demand and the controls.
#[derive(Clone, Debug)]
pub struct SocialProblem {
    pub base: NetworkScenario,
    pub demand: DemandSpec,
    pub param: Parameterization,
}

impl SocialProblem {
    fn interval_lengths(&self) -> Vec<f64> {
        vec![self.base.grid.horizon / self.param.intervals as f64; self.param.intervals]
    }

    /// Uniform splits and uniform departure rates.
    pub fn initial_controls(&self) -> Controls {
        let p = self.param.intervals;
        let t = self.base.grid.horizon;
        Controls {
            theta: self
                .param
                .split_knobs
                .iter()
                .map(|&(_, v)| {
                    let m = self.base.net.out_links(v).len();
                    vec![vec![1.0 / m as f64; m]; p]
                })
                .collect(),
            rates: self
                .param
                .source_knobs
                .iter()
                .map(|&(k, a)| vec![self.demand.entries.get(&(k, a)).copied().unwrap_or(0.0) / t; p])
                .collect(),
        }
    }

    /// Flattened control vector.
    pub fn flatten(&self, c: &Controls) -> Vec<f64> {
        c.theta
            .iter()
            .flatten()
            .flatten()
            .chain(c.rates.iter().flatten())
            .copied()
            .collect()
    }

    pub fn unflatten(&self, x: &[f64]) -> Controls {
        let mut it = x.iter().copied();
        let theta = self
            .param
            .split_knobs
            .iter()
            .map(|&(_, v)| {
                let m = self.base.net.out_links(v).len();
                (0..self.param.intervals)
                    .map(|_| (0..m).map(|_| it.next().unwrap()).collect())
                    .collect()
            })
            .collect();
        let rates = self
            .param
            .source_knobs
            .iter()
            .map(|_| (0..self.param.intervals).map(|_| it.next().unwrap()).collect())
            .collect();
        Controls { theta, rates }
    }

    /// Projection onto `Θ × S̃`: simplex rows and demand-matching rates.
    pub fn project(&self, c: &Controls) -> Controls {
        let lengths = self.interval_lengths();
        Controls {
            theta: c
                .theta
                .iter()
                .map(|rows| rows.iter().map(|r| project_simplex(r)).collect())
                .collect(),
            rates: c
                .rates
                .iter()
                .zip(&self.param.source_knobs)
                .map(|(r, key)| {
                    project_demand(r, &lengths, self.demand.entries.get(key).copied().unwrap_or(0.0))
                })
                .collect(),
        }
    }

    pub fn is_feasible(&self, c: &Controls, tol: f64) -> bool {
        let lengths = self.interval_lengths();
        c.theta.iter().flatten().all(|row| {
            (row.iter().sum::<f64>() - 1.0).abs() <= tol && row.iter().all(|x| *x >= -tol)
        }) && c.rates.iter().zip(&self.param.source_knobs).all(|(r, key)| {
            let d = self.demand.entries.get(key).copied().unwrap_or(0.0);
            let integral: f64 = r.iter().zip(&lengths).map(|(a, b)| a * b).sum();
            r.iter().all(|x| *x >= -tol) && (integral - d).abs() <= tol * d.max(1.0)
        })
    }

    /// Scenario with the controls written into its schedules.
    pub fn apply(&self, c: &Controls) -> Result<NetworkScenario> {
        let mut sc = self.base.clone();
        let lengths = self.interval_lengths();
        let pieces = |values: &[f64]| -> Result<PiecewiseConstant> {
            let mut t = 0.0;
            PiecewiseConstant::new(
                values
                    .iter()
                    .zip(&lengths)
                    .map(|(&value, &l)| {
                        let p = Piece {
                            t_start: t,
                            t_end: t + l,
                            value,
                        };
                        t += l;
                        p
                    })
                    .collect(),
            )
        };
        for (&(k, v), rows) in self.param.split_knobs.iter().zip(&c.theta) {
            for (pos, &a) in self.base.net.out_links(v).iter().enumerate() {
                let col: Vec<f64> = rows.iter().map(|r| r[pos]).collect();
                sc.splits.set(k, a, pieces(&col)?);
            }
        }
        let mut sources = SourceSchedule::new();
        for (k, a, p) in self.base.sources.iter() {
            if !self.param.source_knobs.contains(&(k, a)) {
                sources.set(k, a, p.clone());
            }
        }
        for (&(k, a), r) in self.param.source_knobs.iter().zip(&c.rates) {
            sources.set(k, a, pieces(r)?);
        }
        sc.sources = sources;
        Ok(sc)
    }

    pub fn objective(&self, c: &Controls) -> Result<f64> {
        let state = simulate(&self.apply(c)?)?;
        Ok(backlog_objective(&state, &self.demand))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum OptimizeStatus {
    Converged,
    /// The simulation budget ran out; the best controls found are returned.
    BudgetExhausted,
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub step: f64,
    pub fd_step: f64,
    pub simulations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimizeResult<C> {
    pub controls: C,
    pub objective: f64,
    pub trace: Vec<TraceEntry>,
    pub status: OptimizeStatus,
    pub simulations: usize,
    /// The search is local; the result may be a local minimum.
    pub local_minimum_caveat: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct DescentOptions {
    /// Simulation budget.
    pub budget: usize,
    /// Initial central-difference step.
    pub fd_step: f64,
    /// Initial line-search step along the normalized gradient.
    pub step: f64,
    /// Stop when both steps fall below these.
    pub min_fd_step: f64,
    pub min_step: f64,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            budget: 200,
            fd_step: 1e-3,
            step: 0.25,
            min_fd_step: 1e-7,
            min_step: 1e-6,
        }
    }
}

/// Projected descent on a flat control vector with central finite
/// differences. `project` maps any vector into the feasible set and
/// `objective` evaluates one projected point (one simulation). Accepted
/// iterates strictly decrease the objective.
pub fn projected_descent<F, P>(
    x0: &[f64],
    project: P,
    objective: F,
    opts: &DescentOptions,
) -> Result<(Vec<f64>, f64, Vec<TraceEntry>, OptimizeStatus, usize)>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
    P: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let mut x = project(x0);
    let mut sims = 1;
    let mut best = objective(&x)?;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        objective: best,
        step: 0.0,
        fd_step: opts.fd_step,
        simulations: sims,
    }];
    let mut h = opts.fd_step;
    let mut eta = opts.step;
    let n = x.len();
    let mut iteration = 0;
    loop {
        if sims + 2 * n > opts.budget {
            return Ok((x, best, trace, OptimizeStatus::BudgetExhausted, sims));
        }
        let probes: Vec<f64> = (0..2 * n)
            .into_par_iter()
            .map(|p| {
                let mut y = x.clone();
                y[p / 2] += if p % 2 == 0 { h } else { -h };
                objective(&project(&y))
            })
            .collect::<Result<_>>()?;
        sims += 2 * n;
        let grad: Vec<f64> = (0..n)
            .map(|i| (probes[2 * i] - probes[2 * i + 1]) / (2.0 * h))
            .collect();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let mut accepted = false;
        if norm > 0.0 {
            let mut step = eta;
            while step >= opts.min_step {
                if sims >= opts.budget {
                    return Ok((x, best, trace, OptimizeStatus::BudgetExhausted, sims));
                }
                let y: Vec<f64> = x
                    .iter()
                    .zip(&grad)
                    .map(|(xi, gi)| xi - step * gi / norm)
                    .collect();
                let y = project(&y);
                sims += 1;
                let value = objective(&y)?;
                if value < best {
                    x = y;
                    best = value;
                    iteration += 1;
                    trace.push(TraceEntry {
                        iteration,
                        objective: best,
                        step,
                        fd_step: h,
                        simulations: sims,
                    });
                    eta = (2.0 * step).min(opts.step * 4.0);
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
        }
        if !accepted {
            h *= 0.1;
            eta = opts.step;
            if h < opts.min_fd_step {
                return Ok((x, best, trace, OptimizeStatus::Converged, sims));
            }
        }
    }
}

/// Minimizes the backlog over the parameterized controls.
pub fn optimize_social(
    problem: &SocialProblem,
    start: Option<&Controls>,
    opts: &DescentOptions,
) -> Result<OptimizeResult<Controls>> {
    problem.demand.validate()?;
    let x0 = problem.flatten(&start.cloned().unwrap_or_else(|| problem.initial_controls()));
    let project = |x: &[f64]| problem.flatten(&problem.project(&problem.unflatten(x)));
    let objective = |x: &[f64]| problem.objective(&problem.unflatten(x));
    let (x, j, trace, status, sims) = projected_descent(&x0, project, objective, opts)?;
    Ok(OptimizeResult {
        controls: problem.unflatten(&x),
        objective: j,
        trace,
        status,
        simulations: sims,
        local_minimum_caveat: true,
    })
}

/// `J` on `points` equally spaced values of a single split knob (two
/// out-links, one interval), with the largest jump between neighbours.
pub fn grid_search_single_split(problem: &SocialProblem, points: usize) -> Result<(Vec<(f64, f64)>, f64)> {
    let values: Vec<(f64, f64)> = (0..points)
        .into_par_iter()
        .map(|i| {
            let th = i as f64 / (points - 1) as f64;
            let mut c = problem.initial_controls();
            c.theta[0][0] = vec![th, 1.0 - th];
            problem.objective(&c).map(|j| (th, j))
        })
        .collect::<Result<_>>()?;
    let modulus = values
        .windows(2)
        .map(|w| (w[1].1 - w[0].1).abs())
        .fold(0.0, f64::max);
    Ok((values, modulus))
}
