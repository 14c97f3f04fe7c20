//! Routing policies producing junction split rows from the network state.
//!
//! Informed policies assign link costs and turn them into splits with a logit
//! rule over routes: with `Z(D) = 1` and
//! `Z(v) = Σ_{a ∈ A_out(v)} exp(-β c_a) Z(head(a))`, the split
//! `θ_a = exp(-β c_a) Z(head(a)) / Z(v)` is the probability of taking `a`
//! given that a route drawn with weight `exp(-β · route cost)` passes
//! through `v`.

use std::collections::BTreeMap;

use log::warn;

use crate::error::{Error, Result};
use crate::network::{LinkId, NodeId, RoadNetwork, SourceSchedule, SplitSchedule};
use crate::network_sim::{
    frozen_link_time, simulate_with, NetworkScenario, NetworkState, SplitProvider,
};

/// Sensitivity of the logit map from costs to splits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogitRule {
    pub beta: f64,
}

/// Costs recorded in advance, `(time, cost per link)` sorted by time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HistoricalTable {
    pub entries: Vec<(f64, Vec<f64>)>,
}

impl HistoricalTable {
    /// Latest entry not after `t`.
    pub fn lookup(&self, t: f64) -> Option<&[f64]> {
        self.entries
            .iter()
            .rev()
            .find(|(time, _)| *time <= t)
            .map(|(_, c)| c.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RoutingPolicy {
    /// The scenario's split schedule.
    Static,
    /// Full information evaluated once, at the commodity's first departure.
    ExAnte { logit: LogitRule },
    /// Static row tilted toward out-links whose look-ahead cost is small.
    Local { logit: LogitRule, radius: usize },
    /// Full information on the links allowed by `mask`.
    SubNetwork { logit: LogitRule, mask: Vec<bool> },
    FullInformation { logit: LogitRule },
    /// Full information on the state `delay` time units ago.
    Delayed { logit: LogitRule, delay: f64 },
    /// Link cost `time + weight · W_a`.
    Incentivized { logit: LogitRule, weight: f64 },
    Database { logit: LogitRule, table: HistoricalTable },
    /// Costs from the aggregate density extrapolated linearly over `horizon`.
    SimplifiedForecast { logit: LogitRule, horizon: f64 },
}

impl RoutingPolicy {
    pub fn validate(&self, net: &RoadNetwork, destination: NodeId) -> Result<()> {
        let beta_ok = |l: &LogitRule| l.beta >= 0.0 && l.beta.is_finite();
        let ok = match self {
            Self::Static => true,
            Self::ExAnte { logit } | Self::FullInformation { logit } => beta_ok(logit),
            Self::Local { logit, .. } => beta_ok(logit),
            Self::SubNetwork { logit, mask } => {
                if mask.len() != net.link_count() {
                    return Err(Error::InvalidInput("sub-network mask length".into()));
                }
                beta_ok(logit) && masked_reach(net, destination, mask)
            }
            Self::Delayed { logit, delay } => beta_ok(logit) && *delay >= 0.0,
            Self::Incentivized { logit, weight } => beta_ok(logit) && weight.is_finite(),
            Self::Database { logit, table } => {
                beta_ok(logit) && table.entries.iter().all(|(_, c)| c.len() == net.link_count())
            }
            Self::SimplifiedForecast { logit, horizon } => beta_ok(logit) && *horizon >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid routing policy {self:?}")))
        }
    }
}

fn masked_reach(net: &RoadNetwork, destination: NodeId, mask: &[bool]) -> bool {
    net.link_ids()
        .any(|a| mask[a.0] && net.head(a) == destination)
}

/// Split rows plus whether the policy fell back to the static schedule.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitOutcome {
    pub rows: BTreeMap<NodeId, Vec<f64>>,
    /// Set when history was insufficient (delayed before `δ`, database
    /// without an entry) and the static rows were returned.
    pub insufficient_history: bool,
}

/// Logit splits at every node that can reach `destination`. Links with
/// `mask[a] == false` are excluded; nodes left without an allowed route use
/// the unmasked rule.
pub fn logit_splits(
    net: &RoadNetwork,
    destination: NodeId,
    costs: &[f64],
    logit: LogitRule,
    mask: Option<&[bool]>,
) -> BTreeMap<NodeId, Vec<f64>> {
    let masked = log_partition(net, destination, costs, logit.beta, mask);
    let full = mask.map(|_| log_partition(net, destination, costs, logit.beta, None));
    let mut rows = BTreeMap::new();
    for &v in net.nodes() {
        let outs = net.out_links(v);
        if v == destination || outs.is_empty() {
            continue;
        }
        let (log_z, use_mask) = match masked[&v] {
            z if z.is_finite() => (masked.clone(), mask),
            _ => match &full {
                Some(f) if f[&v].is_finite() => (f.clone(), None),
                _ => continue,
            },
        };
        let allowed = |a: LinkId| use_mask.map_or(true, |m| m[a.0]);
        let row: Vec<f64> = outs
            .iter()
            .map(|&a| {
                let zh = log_z[&net.head(a)];
                if allowed(a) && zh.is_finite() {
                    (-logit.beta * costs[a.0] + zh - log_z[&v]).exp()
                } else {
                    0.0
                }
            })
            .collect();
        let sum: f64 = row.iter().sum();
        rows.insert(v, row.into_iter().map(|x| x / sum).collect());
    }
    rows
}

fn log_partition(
    net: &RoadNetwork,
    destination: NodeId,
    costs: &[f64],
    beta: f64,
    mask: Option<&[bool]>,
) -> BTreeMap<NodeId, f64> {
    fn visit(
        v: NodeId,
        net: &RoadNetwork,
        destination: NodeId,
        costs: &[f64],
        beta: f64,
        mask: Option<&[bool]>,
        memo: &mut BTreeMap<NodeId, f64>,
    ) -> f64 {
        if let Some(&z) = memo.get(&v) {
            return z;
        }
        let z = if v == destination {
            0.0
        } else {
            let terms: Vec<f64> = net
                .out_links(v)
                .iter()
                .filter(|a| mask.map_or(true, |m| m[a.0]))
                .map(|&a| -beta * costs[a.0] + visit(net.head(a), net, destination, costs, beta, mask, memo))
                .filter(|x| x.is_finite())
                .collect();
            log_sum_exp(&terms)
        };
        memo.insert(v, z);
        z
    }
    let mut memo = BTreeMap::new();
    for &v in net.nodes() {
        visit(v, net, destination, costs, beta, mask, &mut memo);
    }
    memo
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Probability of each route under the given node splits.
pub fn path_share(net: &RoadNetwork, path: &[LinkId], rows: &BTreeMap<NodeId, Vec<f64>>) -> f64 {
    path.iter()
        .map(|&a| {
            let v = net.tail(a);
            let pos = net.out_links(v).iter().position(|&b| b == a).unwrap();
            rows.get(&v).map_or(0.0, |r| r[pos])
        })
        .product()
}

fn static_rows(state: &NetworkState, t: f64, k: usize) -> BTreeMap<NodeId, Vec<f64>> {
    let dest = state.commodities[k].destination;
    let reach = state.net.reaches(dest);
    let dt = state.grid.dt();
    state
        .net
        .nodes()
        .iter()
        .filter(|&&v| v != dest && reach[&v] && !state.net.out_links(v).is_empty())
        .map(|&v| (v, state.schedule.row(&state.net, v, k, t, t + dt)))
        .collect()
}

fn costs_at_node(state: &NetworkState, j: usize) -> Vec<f64> {
    state.links.iter().map(|l| l.frozen_time[j]).collect()
}

/// Look-ahead cost of entering `a`: its own cost plus the cheapest
/// continuation over at most `radius - 1` further links.
fn lookahead(net: &RoadNetwork, costs: &[f64], a: LinkId, radius: usize, destination: NodeId) -> f64 {
    let h = net.head(a);
    if radius <= 1 || h == destination {
        return costs[a.0];
    }
    let reach = net.reaches(destination);
    let best = net
        .out_links(h)
        .iter()
        .filter(|b| reach[&net.head(**b)])
        .map(|&b| lookahead(net, costs, b, radius - 1, destination))
        .fold(f64::INFINITY, f64::min);
    costs[a.0] + if best.is_finite() { best } else { 0.0 }
}

/// Split rows for commodity `k` on the step starting at `t`.
pub fn compute_splits(
    policy: &RoutingPolicy,
    state: &NetworkState,
    t: f64,
    k: usize,
) -> Result<SplitOutcome> {
    let net = &state.net;
    let dest = state.commodities[k].destination;
    let j = state.node_at(t);
    let rows = |costs: &[f64], logit: LogitRule| logit_splits(net, dest, costs, logit, None);
    let fallback = || SplitOutcome {
        rows: static_rows(state, t, k),
        insufficient_history: true,
    };
    let out = match policy {
        RoutingPolicy::Static => SplitOutcome {
            rows: static_rows(state, t, k),
            insufficient_history: false,
        },
        RoutingPolicy::FullInformation { logit } | RoutingPolicy::ExAnte { logit } => {
            ok(rows(&costs_at_node(state, j), *logit))
        }
        RoutingPolicy::SubNetwork { logit, mask } => ok(logit_splits(
            net,
            dest,
            &costs_at_node(state, j),
            *logit,
            Some(mask),
        )),
        RoutingPolicy::Delayed { logit, delay } => {
            let past = t - delay;
            if past < -1e-12 {
                warn!("delayed routing at t = {t} has no history, using static splits");
                fallback()
            } else {
                ok(rows(&costs_at_node(state, state.node_at(past.max(0.0))), *logit))
            }
        }
        RoutingPolicy::Incentivized { logit, weight } => {
            let costs: Vec<f64> = state
                .links
                .iter()
                .map(|l| l.frozen_time[j] + weight * l.mass[j])
                .collect();
            ok(rows(&costs, *logit))
        }
        RoutingPolicy::Database { logit, table } => match table.lookup(t) {
            Some(costs) => ok(rows(costs, *logit)),
            None => {
                warn!("no historical costs before t = {t}, using static splits");
                fallback()
            }
        },
        RoutingPolicy::SimplifiedForecast { logit, horizon } => {
            let dt = state.grid.dt();
            let costs = state
                .links
                .iter()
                .map(|l| {
                    let now = l.aggregate();
                    let trend = if j > 0 { horizon / dt } else { 0.0 };
                    let forecast: Vec<f64> = now
                        .iter()
                        .zip(&l.previous_aggregate)
                        .map(|(a, b)| (a + trend * (a - b)).max(0.0))
                        .collect();
                    frozen_link_time(&l.model, t + horizon, &forecast)
                })
                .collect::<Result<Vec<f64>>>()?;
            ok(rows(&costs, *logit))
        }
        RoutingPolicy::Local { logit, radius } => {
            let costs = costs_at_node(state, j);
            let base = static_rows(state, t, k);
            let reach = net.reaches(dest);
            let rows = base
                .into_iter()
                .map(|(v, row)| {
                    let outs = net.out_links(v);
                    let scores: Vec<f64> = outs
                        .iter()
                        .map(|&a| {
                            if reach[&net.head(a)] {
                                -logit.beta * lookahead(net, &costs, a, (*radius).max(1), dest)
                            } else {
                                f64::NEG_INFINITY
                            }
                        })
                        .collect();
                    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let tilted: Vec<f64> = row
                        .iter()
                        .zip(&scores)
                        .map(|(p, s)| if *p > 0.0 { p * (s - m).exp() } else { 0.0 })
                        .collect();
                    let sum: f64 = tilted.iter().sum();
                    (v, tilted.into_iter().map(|x| x / sum).collect())
                })
                .collect();
            ok(rows)
        }
    };
    Ok(out)
}

fn ok(rows: BTreeMap<NodeId, Vec<f64>>) -> SplitOutcome {
    SplitOutcome {
        rows,
        insufficient_history: false,
    }
}

/// `max_{used} time - min_{all} time`, where a route is used when its share
/// exceeds `eps`.
pub fn gap_from(times: &[f64], shares: &[f64], eps: f64) -> f64 {
    let best = times.iter().copied().fold(f64::INFINITY, f64::min);
    times
        .iter()
        .zip(shares)
        .filter(|(_, s)| **s > eps)
        .map(|(t, _)| t - best)
        .fold(0.0, f64::max)
}

/// Frozen Wardrop gap between `origin` and `destination` at `t`. Route
/// shares combine the applied splits of all commodities heading to
/// `destination`, weighted by their departures at `origin`.
pub fn wardrop_gap(
    state: &NetworkState,
    t: f64,
    origin: NodeId,
    destination: NodeId,
    eps: f64,
) -> Result<f64> {
    let paths = state.instantaneous_path_times(t, origin, destination)?;
    if state.steps_done == 0 {
        return Err(Error::InvalidInput("no simulated steps".into()));
    }
    let j = state.node_at(t).min(state.steps_done - 1);
    let origin_links = state.net.out_links(origin);
    let mut weights: Vec<(usize, f64)> = state
        .commodities
        .iter()
        .enumerate()
        .filter(|(_, c)| c.destination == destination)
        .map(|(k, _)| {
            let w: f64 = origin_links
                .iter()
                .map(|&a| state.links[a.0].inflow[k].iter().sum::<f64>())
                .sum();
            (k, w)
        })
        .collect();
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    if total > 0.0 {
        for (_, w) in &mut weights {
            *w /= total;
        }
    } else {
        let n = weights.len().max(1) as f64;
        for (_, w) in &mut weights {
            *w = 1.0 / n;
        }
    }
    let shares: Vec<f64> = paths
        .iter()
        .map(|(p, _)| {
            weights
                .iter()
                .map(|&(k, w)| {
                    let rows: BTreeMap<NodeId, Vec<f64>> = state.applied_splits[k]
                        .iter()
                        .map(|(&v, r)| (v, r[j].clone()))
                        .collect();
                    w * path_share(&state.net, p, &rows)
                })
                .sum()
        })
        .collect();
    let times: Vec<f64> = paths.iter().map(|(_, t)| *t).collect();
    Ok(gap_from(&times, &shares, eps))
}

/// Drives a simulation with one policy per commodity.
pub struct PolicyProvider {
    pub policies: Vec<RoutingPolicy>,
    /// Rows frozen by ex-ante policies.
    frozen: BTreeMap<usize, BTreeMap<NodeId, Vec<f64>>>,
    /// First departure time per commodity.
    departures: Vec<f64>,
    pub insufficient_history: bool,
}

impl PolicyProvider {
    pub fn new(policies: Vec<RoutingPolicy>, sources: &SourceSchedule) -> Self {
        let departures = (0..policies.len())
            .map(|k| {
                sources
                    .iter()
                    .filter(|(c, _, _)| *c == k)
                    .flat_map(|(_, _, p)| p.pieces().iter().filter(|x| x.value > 0.0).map(|x| x.t_start))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        Self {
            policies,
            frozen: BTreeMap::new(),
            departures,
            insufficient_history: false,
        }
    }
}

impl SplitProvider for PolicyProvider {
    fn splits(
        &mut self,
        state: &NetworkState,
        step: usize,
        k: usize,
    ) -> Result<Option<BTreeMap<NodeId, Vec<f64>>>> {
        let t = state.grid.time(step);
        let policy = &self.policies[k];
        match policy {
            RoutingPolicy::Static => Ok(None),
            RoutingPolicy::ExAnte { .. } => {
                if let Some(rows) = self.frozen.get(&k) {
                    return Ok(Some(rows.clone()));
                }
                let out = compute_splits(policy, state, t, k)?;
                if t + state.grid.dt() > self.departures[k] {
                    self.frozen.insert(k, out.rows.clone());
                }
                Ok(Some(out.rows))
            }
            _ => {
                let out = compute_splits(policy, state, t, k)?;
                self.insufficient_history |= out.insufficient_history;
                Ok(Some(out.rows))
            }
        }
    }
}

/// Replays a fixed per-step split schedule for one commodity.
#[derive(Clone, Debug, Default)]
pub struct StepSchedule {
    pub commodity: usize,
    /// `rows[j]` applies on step `j`.
    pub rows: Vec<BTreeMap<NodeId, Vec<f64>>>,
}

impl SplitProvider for StepSchedule {
    fn splits(
        &mut self,
        _: &NetworkState,
        step: usize,
        k: usize,
    ) -> Result<Option<BTreeMap<NodeId, Vec<f64>>>> {
        if k == self.commodity {
            Ok(self.rows.get(step).cloned())
        } else {
            Ok(None)
        }
    }
}

#[derive(Clone, Debug)]
pub struct EquilibriumConfig {
    /// Routed fraction of every source.
    pub alpha: f64,
    pub logit: LogitRule,
    pub rounds: usize,
    pub origin: NodeId,
    /// Share threshold for a route to count as used.
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct EquilibriumRound {
    pub round: usize,
    /// Wardrop gap averaged over the second half of the horizon.
    pub gap: f64,
    pub state: NetworkState,
}

/// Day-to-day iteration: the scenario's single commodity is split into a
/// routed part (fraction `alpha`) and a non-routed part following the
/// static schedule. Each round simulates with the current routed schedule,
/// computes the full-information response at every step from that day's
/// state, and moves the schedule toward it with weight `1 / (round + 2)`.
pub fn equilibrium_iterate(
    base: &NetworkScenario,
    config: &EquilibriumConfig,
) -> Result<Vec<EquilibriumRound>> {
    if !(0.0..=1.0).contains(&config.alpha) {
        return Err(Error::InvalidInput(format!("routed fraction {} outside [0, 1]", config.alpha)));
    }
    if base.commodities.len() != 1 {
        return Err(Error::InvalidInput("equilibrium runs split exactly one commodity".into()));
    }
    let dest = base.commodities[0].destination;
    let mut scenario = base.clone();
    let mut routed = base.commodities[0];
    routed.class = crate::network::UserClass::Routed;
    let mut non_routed = base.commodities[0];
    non_routed.class = crate::network::UserClass::NonRouted;
    scenario.commodities = vec![routed, non_routed];
    let mut sources = SourceSchedule::new();
    for (_, a, p) in base.sources.iter() {
        let scale = |f: f64| {
            crate::network::PiecewiseConstant::new(
                p.pieces()
                    .iter()
                    .map(|x| crate::network::Piece { value: x.value * f, ..*x })
                    .collect(),
            )
        };
        sources.set(0, a, scale(config.alpha)?);
        sources.set(1, a, scale(1.0 - config.alpha)?);
    }
    scenario.sources = sources;
    let mut splits = SplitSchedule::new();
    for a in base.net.link_ids() {
        if let Some(p) = base.splits.get(0, a) {
            splits.set(0, a, p.clone());
            splits.set(1, a, p.clone());
        }
    }
    scenario.splits = splits;
    scenario.initial = base
        .initial
        .iter()
        .map(|rows| match rows.first() {
            Some(r) => vec![r.iter().map(|x| x * config.alpha).collect(), r.iter().map(|x| x * (1.0 - config.alpha)).collect()],
            None => Vec::new(),
        })
        .collect();

    let steps = scenario.grid.steps;
    let mut schedule = StepSchedule {
        commodity: 0,
        rows: Vec::new(),
    };
    let mut rounds = Vec::with_capacity(config.rounds);
    for r in 0..config.rounds {
        let state = simulate_with(&scenario, &mut schedule)?;
        let gap = mean_gap(&state, config.origin, dest, config.eps)?;
        let response: Vec<BTreeMap<NodeId, Vec<f64>>> = (0..steps)
            .map(|j| {
                compute_splits(
                    &RoutingPolicy::FullInformation { logit: config.logit },
                    &state,
                    state.grid.time(j),
                    0,
                )
                .map(|o| o.rows)
            })
            .collect::<Result<_>>()?;
        let applied: Vec<BTreeMap<NodeId, Vec<f64>>> = (0..steps)
            .map(|j| {
                state.applied_splits[0]
                    .iter()
                    .map(|(&v, rows)| (v, rows[j].clone()))
                    .collect()
            })
            .collect();
        let w = 1.0 / (r as f64 + 2.0);
        schedule.rows = applied
            .iter()
            .zip(&response)
            .map(|(old, new)| {
                old.iter()
                    .map(|(v, row)| {
                        let target = &new[v];
                        let mixed: Vec<f64> = row
                            .iter()
                            .zip(target)
                            .map(|(a, b)| (1.0 - w) * a + w * b)
                            .collect();
                        let sum: f64 = mixed.iter().sum();
                        (*v, mixed.into_iter().map(|x| x / sum).collect())
                    })
                    .collect()
            })
            .collect();
        rounds.push(EquilibriumRound { round: r, gap, state });
    }
    Ok(rounds)
}

/// Gap averaged over the time nodes in `[T/2, T]`.
pub fn mean_gap(state: &NetworkState, origin: NodeId, destination: NodeId, eps: f64) -> Result<f64> {
    let n = state.steps_done;
    let from = n / 2;
    let mut acc = 0.0;
    for j in from..=n {
        acc += wardrop_gap(state, state.grid.time(j), origin, destination, eps)?;
    }
    Ok(acc / (n - from + 1) as f64)
}
