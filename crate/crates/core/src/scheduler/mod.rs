//! Delay scheduling for platoon formation on a freight graph, as a potential
//! game played by the vehicles.

pub(crate) mod learning;
mod sweden;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use learning::{
    brute_force_schedule, exact_gibbs, interaction_groups, joint_states, log_linear_step,
    run_learning, total_variation, LearningOptions, LearningRun,
};
pub use sweden::{build_sweden_scenario, SwedenConfig, SwedenScenario, SWEDEN_EDGES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreightEdge {
    pub from: String,
    pub to: String,
    /// Platooning weight `w_e`.
    pub weight: f64,
    /// Time steps a vehicle spends on the edge.
    pub dwell: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FreightGraph {
    pub edges: Vec<FreightEdge>,
}

impl FreightGraph {
    pub fn validate(&self) -> Result<()> {
        for (k, e) in self.edges.iter().enumerate() {
            if !(e.weight > 0.0 && e.weight.is_finite()) || e.dwell == 0 {
                return Err(Error::InvalidInput(format!(
                    "edge {k} ({} -> {}) needs weight > 0 and dwell >= 1",
                    e.from, e.to
                )));
            }
        }
        Ok(())
    }

    pub fn find(&self, from: &str, to: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.from == from && e.to == to)
    }
}

/// Walk of one vehicle: `walk[t - 1]` is the edge occupied at step `t` of
/// `1..=T` before any delay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleAssignment {
    pub walk: Vec<Option<usize>>,
    pub window: (usize, usize),
    /// `h_i(τ)` for `τ` in the window, in order; empty means zero.
    #[serde(default)]
    pub delay_cost: Vec<f64>,
}

impl VehicleAssignment {
    /// Walk that idles for `departure` steps and then follows `path`, each
    /// edge for its dwell.
    pub fn from_path(
        graph: &FreightGraph,
        path: &[usize],
        departure: usize,
        horizon: usize,
        window: (usize, usize),
    ) -> Result<Self> {
        for w in path.windows(2) {
            if graph.edges[w[0]].to != graph.edges[w[1]].from {
                return Err(Error::InvalidInput(format!("edges {} and {} do not form a walk", w[0], w[1])));
            }
        }
        let mut walk = vec![None; horizon];
        let mut t = departure;
        for &e in path {
            let edge = graph.edges.get(e).ok_or_else(|| Error::InvalidInput(format!("unknown edge {e}")))?;
            for _ in 0..edge.dwell {
                if t >= horizon {
                    return Err(Error::InvalidInput("walk does not fit in the horizon".into()));
                }
                walk[t] = Some(e);
                t += 1;
            }
        }
        Ok(Self {
            walk,
            window,
            delay_cost: Vec::new(),
        })
    }

    pub fn delays(&self) -> std::ops::RangeInclusive<usize> {
        self.window.0..=self.window.1
    }

    pub fn h(&self, tau: usize) -> f64 {
        if self.delay_cost.is_empty() {
            0.0
        } else {
            self.delay_cost[tau - self.window.0]
        }
    }

    /// Occupied `(t, edge)` pairs, 1-based `t`, after delaying by `tau`; steps
    /// past the horizon are dropped.
    pub fn occupied(&self, tau: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let horizon = self.walk.len();
        self.walk
            .iter()
            .enumerate()
            .filter_map(move |(s, e)| e.map(|e| (s + 1 + tau, e)))
            .filter(move |(t, _)| *t <= horizon)
    }

    /// First step on each edge of the walk after delaying by `tau`.
    pub fn arrivals(&self, tau: usize) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for (t, e) in self.occupied(tau) {
            out.entry(e).or_insert(t);
        }
        out
    }
}

/// Super-linear reward `f` of the number of vehicles sharing an edge.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountReward {
    #[default]
    Square,
    /// `f(z)` tabulated for `z = 0, 1, ...`.
    Table(Vec<f64>),
}

impl CountReward {
    pub fn eval(&self, z: u32) -> f64 {
        match self {
            Self::Square => (z as f64) * (z as f64),
            Self::Table(v) => v[z as usize],
        }
    }
}

/// Graph, assignments and the game constants `T`, `γ`, `f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulingProblem {
    pub graph: FreightGraph,
    pub vehicles: Vec<VehicleAssignment>,
    pub horizon: usize,
    pub gamma: f64,
    #[serde(default)]
    pub reward: CountReward,
}

impl SchedulingProblem {
    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::InvalidInput("gamma must be finite and nonnegative".into()));
        }
        if let CountReward::Table(v) = &self.reward {
            if v.len() <= self.vehicles.len() {
                return Err(Error::InvalidInput(format!(
                    "reward table needs {} entries",
                    self.vehicles.len() + 1
                )));
            }
        }
        let ne = self.graph.edges.len();
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.walk.len() != self.horizon {
                return Err(Error::DimensionMismatch {
                    expected: format!("walk of length {} for vehicle {i}", self.horizon),
                    found: v.walk.len().to_string(),
                });
            }
            if v.window.0 > v.window.1 || v.window.1 > self.horizon {
                return Err(Error::InvalidInput(format!("vehicle {i} has an empty delay window")));
            }
            if !v.delay_cost.is_empty() && v.delay_cost.len() != v.window.1 - v.window.0 + 1 {
                return Err(Error::DimensionMismatch {
                    expected: format!("{} delay costs for vehicle {i}", v.window.1 - v.window.0 + 1),
                    found: v.delay_cost.len().to_string(),
                });
            }
            if v.walk.iter().flatten().any(|e| *e >= ne) {
                return Err(Error::InvalidInput(format!("vehicle {i} uses an unknown edge")));
            }
            let edges: Vec<usize> = v.walk.iter().flatten().copied().collect();
            let mut steps = edges.windows(2).filter(|w| w[0] != w[1]);
            if steps.any(|w| self.graph.edges[w[0]].to != self.graph.edges[w[1]].from) {
                return Err(Error::InvalidInput(format!("vehicle {i} does not follow a walk")));
            }
        }
        Ok(())
    }

    pub fn check_delays(&self, delays: &[usize]) -> Result<()> {
        if delays.len() != self.vehicles.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} delays", self.vehicles.len()),
                found: delays.len().to_string(),
            });
        }
        for (i, (v, &d)) in self.vehicles.iter().zip(delays).enumerate() {
            if !v.delays().contains(&d) {
                return Err(Error::InfeasibleDelay {
                    vehicle: i,
                    delay: d,
                    low: v.window.0,
                    high: v.window.1,
                });
            }
        }
        Ok(())
    }

    fn slot(&self, t: usize, e: usize) -> usize {
        (t - 1) * self.graph.edges.len() + e
    }

    /// Occupancy `|{i : e_i(t - τ_i) = e}|`, row-major `[t - 1][e]`.
    pub fn occupancy(&self, delays: &[usize]) -> Vec<u32> {
        self.occupancy_excluding(delays, None)
    }

    /// Occupancy with one vehicle left out (`ζ` of the paper).
    pub fn occupancy_excluding(&self, delays: &[usize], skip: Option<usize>) -> Vec<u32> {
        let mut counts = vec![0u32; self.horizon * self.graph.edges.len()];
        for (i, (v, &d)) in self.vehicles.iter().zip(delays).enumerate() {
            if Some(i) == skip {
                continue;
            }
            for (t, e) in v.occupied(d) {
                counts[self.slot(t, e)] += 1;
            }
        }
        counts
    }

    /// `-γ Σ_t Σ_e w_e f(count)`.
    pub fn platoon_term(&self, counts: &[u32]) -> f64 {
        let ne = self.graph.edges.len();
        -self.gamma
            * counts
                .iter()
                .enumerate()
                .map(|(k, &c)| self.graph.edges[k % ne].weight * self.reward.eval(c))
                .sum::<f64>()
    }

    /// `g(τ', τ_{-i})` for every `τ'` in the window of vehicle `i`, from the
    /// occupancy `zeta` of the other vehicles. This is all a vehicle needs
    /// to resample its delay.
    pub fn g_values(&self, i: usize, zeta: &[u32]) -> Vec<f64> {
        let base = self.platoon_term(zeta);
        self.g_increments(i, zeta).into_iter().map(|g| base + g).collect()
    }

    /// `g(τ', τ_{-i}) - g(∅, τ_{-i})`: the change vehicle `i` makes by joining
    /// at delay `τ'`. Reads `zeta` only where the vehicle can be.
    pub fn g_increments(&self, i: usize, zeta: &[u32]) -> Vec<f64> {
        let v = &self.vehicles[i];
        v.delays()
            .map(|tau| {
                -self.gamma
                    * v.occupied(tau)
                        .map(|(t, e)| {
                            let z = zeta[self.slot(t, e)];
                            self.graph.edges[e].weight * (self.reward.eval(z + 1) - self.reward.eval(z))
                        })
                        .sum::<f64>()
            })
            .collect()
    }

    /// `U_i(τ', τ_{-i}) = h_i(τ') + g(τ', τ_{-i})` over the window.
    pub fn utilities(&self, i: usize, zeta: &[u32]) -> Vec<f64> {
        let v = &self.vehicles[i];
        self.g_values(i, zeta)
            .into_iter()
            .zip(v.delays())
            .map(|(g, tau)| v.h(tau) + g)
            .collect()
    }

    /// Potential `Φ = Σ h_i(τ_i) + g(τ)`, which is also the total cost.
    pub fn coordination_cost(&self, delays: &[usize]) -> Result<f64> {
        self.check_delays(delays)?;
        Ok(self.cost_unchecked(delays))
    }

    fn cost_unchecked(&self, delays: &[usize]) -> f64 {
        let h: f64 = self.vehicles.iter().zip(delays).map(|(v, &d)| v.h(d)).sum();
        h + self.platoon_term(&self.occupancy(delays))
    }

    /// `(Φ(τ) - Φ(τ'_i, τ_{-i}), U_i(τ) - U_i(τ'_i, τ_{-i}))`; the first from
    /// two full evaluations, the second from vehicle `i`'s own view.
    pub fn potential_check(&self, delays: &[usize], i: usize, new_delay: usize) -> Result<(f64, f64)> {
        self.check_delays(delays)?;
        let mut moved = delays.to_vec();
        moved[i] = new_delay;
        self.check_delays(&moved)?;
        let d_phi = self.cost_unchecked(delays) - self.cost_unchecked(&moved);
        let zeta = self.occupancy_excluding(delays, Some(i));
        let u = self.utilities(i, &zeta);
        let lo = self.vehicles[i].window.0;
        Ok((d_phi, u[delays[i] - lo] - u[new_delay - lo]))
    }

    /// Per edge, the number of unordered vehicle pairs whose arrivals on the
    /// edge differ by `d` steps.
    pub fn pair_distance_histogram(&self, delays: &[usize]) -> Result<BTreeMap<usize, BTreeMap<usize, u64>>> {
        self.check_delays(delays)?;
        let arrivals: Vec<BTreeMap<usize, usize>> =
            self.vehicles.iter().zip(delays).map(|(v, &d)| v.arrivals(d)).collect();
        let mut out: BTreeMap<usize, BTreeMap<usize, u64>> = BTreeMap::new();
        for e in 0..self.graph.edges.len() {
            let times: Vec<usize> = arrivals.iter().filter_map(|a| a.get(&e).copied()).collect();
            if times.is_empty() {
                continue;
            }
            let bins = out.entry(e).or_default();
            for a in 0..times.len() {
                for b in a + 1..times.len() {
                    *bins.entry(times[a].abs_diff(times[b])).or_default() += 1;
                }
            }
        }
        Ok(out)
    }
}

/// Scheduled over baseline pair counts per edge and distance; `None` for
/// 0/0 and infinity when only the baseline is zero.
pub fn distance_ratios(
    scheduled: &BTreeMap<usize, BTreeMap<usize, u64>>,
    baseline: &BTreeMap<usize, BTreeMap<usize, u64>>,
    max_distance: usize,
) -> BTreeMap<usize, Vec<Option<f64>>> {
    let edges: std::collections::BTreeSet<usize> = scheduled.keys().chain(baseline.keys()).copied().collect();
    edges
        .into_iter()
        .map(|e| {
            let get = |h: &BTreeMap<usize, BTreeMap<usize, u64>>, d: usize| {
                h.get(&e).and_then(|b| b.get(&d)).copied().unwrap_or(0)
            };
            let row = (0..=max_distance)
                .map(|d| match (get(scheduled, d), get(baseline, d)) {
                    (0, 0) => None,
                    (s, b) => Some(s as f64 / b as f64),
                })
                .collect();
            (e, row)
        })
        .collect()
}

/// Platooning proxy: total distance-0 pairs scheduled over unscheduled,
/// minus one. Stands in for a fuel-saving figure, which would need a
/// calibrated savings map.
pub fn fuel_proxy(
    scheduled: &BTreeMap<usize, BTreeMap<usize, u64>>,
    baseline: &BTreeMap<usize, BTreeMap<usize, u64>>,
) -> f64 {
    let zero = |h: &BTreeMap<usize, BTreeMap<usize, u64>>| -> u64 {
        h.values().map(|b| b.get(&0).copied().unwrap_or(0)).sum()
    };
    zero(scheduled) as f64 / zero(baseline) as f64 - 1.0
}
