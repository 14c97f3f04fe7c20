//! Multi-commodity simulation over an acyclic network.
//!
//! Each time step sweeps the links in topological order. A link's inflow for
//! commodity `k` is the source at its tail plus the split share of the
//! outflow that the upstream links produced during the same step; every
//! commodity on a link is advected with the speed of the aggregate density.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{Commodity, LinkId, NodeId, RoadNetwork, SourceSchedule, SplitSchedule};
use crate::nonlocal::{
    advance_step, interface_speeds, Grid, LinkModel, Reconstruction, SolverOptions,
};
use crate::output;

/// Default cap on enumerated simple paths.
pub const PATH_CAP: usize = 64;

/// Everything needed to simulate a network.
#[derive(Clone, Debug)]
pub struct NetworkScenario {
    pub net: RoadNetwork,
    pub commodities: Vec<Commodity>,
    /// One model per link, indexed by `LinkId`.
    pub models: Vec<LinkModel>,
    pub splits: SplitSchedule,
    pub sources: SourceSchedule,
    /// `initial[link][commodity]` cell averages; empty means zero.
    pub initial: Vec<Vec<Vec<f64>>>,
    pub grid: Grid,
    pub options: SolverOptions,
    /// Keep every `record_stride`-th density row.
    pub record_stride: usize,
}

impl NetworkScenario {
    pub fn new(
        net: RoadNetwork,
        commodities: Vec<Commodity>,
        models: Vec<LinkModel>,
        grid: Grid,
    ) -> Self {
        let initial = vec![Vec::new(); net.link_count()];
        Self {
            net,
            commodities,
            models,
            splits: SplitSchedule::new(),
            sources: SourceSchedule::new(),
            initial,
            grid,
            options: SolverOptions::default(),
            record_stride: 1,
        }
    }

    fn initial_row(&self, a: LinkId, k: usize) -> Vec<f64> {
        self.initial
            .get(a.0)
            .and_then(|rows| rows.get(k))
            .filter(|r| !r.is_empty())
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.grid.cells])
    }

    /// Checks the scenario and returns the link order together with the split
    /// schedule completed by trivial rows.
    pub fn validate(&self) -> Result<(Vec<LinkId>, SplitSchedule)> {
        let order = self.net.validate_acyclic()?;
        if self.models.len() != self.net.link_count() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} link models", self.net.link_count()),
                found: self.models.len().to_string(),
            });
        }
        if self.commodities.is_empty() {
            return Err(Error::InvalidInput("no commodities".into()));
        }
        for c in &self.commodities {
            if !self.net.contains_node(c.destination) {
                return Err(Error::InvalidInput(format!(
                    "destination {} is not a node",
                    c.destination
                )));
            }
        }
        for m in &self.models {
            m.window.validate()?;
            m.uses_characteristics(self.options.scheme)?;
        }
        let mut splits = self.splits.clone();
        splits.validate(&self.net, &self.commodities, self.grid.horizon)?;
        self.sources.validate(&self.net, &self.commodities)?;
        if self.initial.len() > self.net.link_count() {
            return Err(Error::InvalidInput("initial data for unknown links".into()));
        }
        for (k, c) in self.commodities.iter().enumerate() {
            let useful = self.net.useful_links(c.destination);
            for a in self.net.link_ids() {
                let row = self.initial_row(a, k);
                if row.len() != self.grid.cells {
                    return Err(Error::DimensionMismatch {
                        expected: format!("{} cells", self.grid.cells),
                        found: row.len().to_string(),
                    });
                }
                if row.iter().any(|r| !r.is_finite() || *r < 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "initial density on link {:?} must be finite and nonnegative",
                        self.net.link(a)
                    )));
                }
                if !useful[a.0] && row.iter().any(|&r| r > 0.0) {
                    return Err(Error::RoutingInconsistent(format!(
                        "commodity {k} starts on link {:?} which cannot reach node {}",
                        self.net.link(a),
                        c.destination
                    )));
                }
            }
        }
        Ok((order, splits))
    }
}

/// Supplies split rows at the start of every step.
pub trait SplitProvider {
    /// Rows for commodity `k` on `[t_step, t_step + Δt]`, keyed by node and
    /// aligned with the node's outgoing links. `None` (or a missing node)
    /// falls back to the scenario's schedule.
    fn splits(
        &mut self,
        state: &NetworkState,
        step: usize,
        commodity: usize,
    ) -> Result<Option<BTreeMap<NodeId, Vec<f64>>>>;
}

/// Uses the scenario's split schedule throughout.
pub struct StaticSplits;

impl SplitProvider for StaticSplits {
    fn splits(
        &mut self,
        _: &NetworkState,
        _: usize,
        _: usize,
    ) -> Result<Option<BTreeMap<NodeId, Vec<f64>>>> {
        Ok(None)
    }
}

/// History of one link.
#[derive(Clone, Debug)]
pub struct LinkRecord {
    pub model: LinkModel,
    pub characteristic: bool,
    /// Current row per commodity.
    pub current: Vec<Vec<f64>>,
    /// Recorded rows per commodity, every `record_stride` steps.
    pub history: Vec<Vec<Vec<f64>>>,
    /// Recorded aggregate rows, same stride.
    pub aggregate_history: Vec<Vec<f64>>,
    /// Step-averaged inflow `[k][j]`.
    pub inflow: Vec<Vec<f64>>,
    /// Step-averaged outflow `[k][j]`.
    pub outflow: Vec<Vec<f64>>,
    /// Characteristic position at every time node.
    pub xi: Vec<f64>,
    /// Interface speeds per step (finite-volume links).
    pub speeds: Vec<Vec<f64>>,
    /// Aggregate mass on the link at every time node.
    pub mass: Vec<f64>,
    /// Travel time with conditions frozen at every time node.
    pub frozen_time: Vec<f64>,
    /// Previous aggregate row, kept for extrapolation.
    pub previous_aggregate: Vec<f64>,
}

impl LinkRecord {
    pub fn aggregate(&self) -> Vec<f64> {
        aggregate(&self.current)
    }
}

fn aggregate(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.first().map_or(0, Vec::len);
    (0..n).map(|i| rows.iter().map(|r| r[i]).sum()).collect()
}

/// Travel time across a link for a frozen aggregate row.
pub fn frozen_link_time(model: &LinkModel, t: f64, aggregate: &[f64]) -> Result<f64> {
    if model.window.is_whole_link() {
        let w = aggregate.iter().sum::<f64>() / aggregate.len() as f64;
        return Ok(1.0 / model.velocity.checked_speed(t, w)?);
    }
    let v = interface_speeds(&model.velocity, &model.window, t, aggregate)?;
    let dx = 1.0 / aggregate.len() as f64;
    Ok(v.windows(2).map(|p| 0.5 * dx * (1.0 / p[0] + 1.0 / p[1])).sum())
}

/// Simulated network history.
#[derive(Clone, Debug)]
pub struct NetworkState {
    pub net: RoadNetwork,
    pub commodities: Vec<Commodity>,
    pub grid: Grid,
    pub order: Vec<LinkId>,
    pub links: Vec<LinkRecord>,
    pub record_stride: usize,
    /// Completed steps; rows in `current` belong to `t = steps_done Δt`.
    pub steps_done: usize,
    /// Cumulative arrivals at the destination, `[k][j]` for `j = 0..=steps`.
    pub arrivals: Vec<Vec<f64>>,
    /// Cumulative injected source mass, `[k][j]`.
    pub injected: Vec<Vec<f64>>,
    /// Mass that reached a node from which its destination is unreachable.
    pub stranded: Vec<f64>,
    pub initial_mass: Vec<f64>,
    /// Applied split rows `[k][node][j]`.
    pub applied_splits: Vec<BTreeMap<NodeId, Vec<Vec<f64>>>>,
    /// Scenario schedule, completed by trivial rows.
    pub schedule: SplitSchedule,
}

#[derive(Clone, Debug, Serialize)]
pub struct MassBalance {
    pub commodity: usize,
    pub initial: f64,
    pub injected: f64,
    pub arrived: f64,
    pub stored: f64,
    pub stranded: f64,
    pub defect: f64,
    pub relative_defect: f64,
}

impl NetworkState {
    pub fn time(&self) -> f64 {
        self.grid.time(self.steps_done)
    }

    pub fn stored_mass(&self, k: usize) -> f64 {
        let dx = self.grid.dx();
        self.links
            .iter()
            .map(|l| l.current[k].iter().sum::<f64>() * dx)
            .sum()
    }

    pub fn mass_balance(&self) -> Vec<MassBalance> {
        (0..self.commodities.len())
            .map(|k| {
                let initial = self.initial_mass[k];
                let injected = *self.injected[k].last().unwrap();
                let arrived = *self.arrivals[k].last().unwrap();
                let stored = self.stored_mass(k);
                let stranded = self.stranded[k];
                let defect = initial + injected - arrived - stored - stranded;
                let scale = (initial + injected).max(f64::MIN_POSITIVE);
                MassBalance {
                    commodity: k,
                    initial,
                    injected,
                    arrived,
                    stored,
                    stranded,
                    defect,
                    relative_defect: if initial + injected > 0.0 {
                        defect.abs() / scale
                    } else {
                        defect.abs()
                    },
                }
            })
            .collect()
    }

    /// Index of the time node at or before `t`, limited to completed steps.
    pub fn node_at(&self, t: f64) -> usize {
        ((t / self.grid.dt() + 1e-9).floor().max(0.0) as usize).min(self.steps_done)
    }

    /// Frozen link time at time `t`.
    pub fn link_time(&self, a: LinkId, t: f64) -> f64 {
        self.links[a.0].frozen_time[self.node_at(t)]
    }

    /// Travel times along every simple path with conditions frozen at `t`.
    pub fn instantaneous_path_times(
        &self,
        t: f64,
        origin: NodeId,
        destination: NodeId,
    ) -> Result<Vec<(Vec<LinkId>, f64)>> {
        if t < 0.0 || t > self.grid.horizon + 1e-12 {
            return Err(Error::InvalidInput(format!("time {t} outside the horizon")));
        }
        let paths = self.net.simple_paths(origin, destination, PATH_CAP)?;
        Ok(paths
            .into_iter()
            .map(|p| {
                let time = p.iter().map(|&a| self.link_time(a, t)).sum();
                (p, time)
            })
            .collect())
    }

    /// Exit time from the end of `path` for a parcel entering its first
    /// link at `entry`.
    pub fn travel_time(&self, path: &[LinkId], entry: f64) -> Result<f64> {
        for w in path.windows(2) {
            if self.net.head(w[0]) != self.net.tail(w[1]) {
                return Err(Error::InvalidInput("path is not connected".into()));
            }
        }
        let mut t = entry;
        for &a in path {
            t = self.link_exit(a, t).ok_or(Error::HorizonExceeded {
                entry,
                horizon: self.time(),
            })?;
        }
        Ok(t)
    }

    fn link_exit(&self, a: LinkId, entry: f64) -> Option<f64> {
        let rec = &self.links[a.0];
        let dt = self.grid.dt();
        let end = self.steps_done;
        if entry < 0.0 || entry > self.time() {
            return None;
        }
        if rec.characteristic {
            let xi_at = |t: f64| {
                let pos = t / dt;
                let j = (pos.floor() as usize).min(end.saturating_sub(1));
                let f = pos - j as f64;
                rec.xi[j] + f * (rec.xi[j + 1] - rec.xi[j])
            };
            let target = xi_at(entry) + 1.0;
            if target > rec.xi[end] {
                return None;
            }
            let idx = rec.xi[..=end].partition_point(|&v| v < target);
            let j = idx.max(1) - 1;
            let span = rec.xi[j + 1] - rec.xi[j];
            let f = if span > 0.0 { (target - rec.xi[j]) / span } else { 0.0 };
            return Some((j as f64 + f) * dt);
        }
        // finite-volume link: integrate dx/dt = v(t, x), piecewise constant
        // in time and piecewise linear in x
        let n = self.grid.cells;
        let speed = |j: usize, x: f64| {
            let v = &rec.speeds[j];
            let pos = (x * n as f64).clamp(0.0, n as f64);
            let i = (pos.floor() as usize).min(n - 1);
            let f = pos - i as f64;
            v[i] * (1.0 - f) + v[i + 1] * f
        };
        let mut x = 0.0;
        let mut t = entry;
        let sub = 8;
        while t < self.time() {
            let j = ((t / dt + 1e-12).floor() as usize).min(end - 1);
            let t_next = ((j + 1) as f64 * dt).min(self.time());
            let h = (t_next - t) / sub as f64;
            if h <= 0.0 {
                t = t_next;
                continue;
            }
            for _ in 0..sub {
                let k1 = speed(j, x);
                let k2 = speed(j, x + 0.5 * h * k1);
                let k3 = speed(j, x + 0.5 * h * k2);
                let k4 = speed(j, x + h * k3);
                let step = h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                if x + step >= 1.0 {
                    // linear interpolation inside the last substep
                    return Some(t + h * (1.0 - x) / step);
                }
                x += step;
                t += h;
            }
            t = t_next;
        }
        None
    }

    /// Writes per-link density and flux CSVs plus a mass-balance JSON.
    pub fn write_artifacts(&self, dir: &Path, stride: usize) -> Result<()> {
        let dx = self.grid.dx();
        for a in self.net.link_ids() {
            let (tail, head) = self.net.link(a);
            let rec = &self.links[a.0];
            for k in 0..self.commodities.len() {
                let path = dir.join(format!("link_{tail}_{head}_c{k}_density.csv"));
                let mut w = csv::Writer::from_writer(output::create(&path)?);
                w.write_record(["t", "x", "rho"])?;
                let step = stride.max(1);
                for (r, row) in rec.history[k].iter().enumerate().step_by(step) {
                    let t = self.grid.time(r * self.record_stride);
                    for (i, rho) in row.iter().enumerate() {
                        w.write_record([
                            output::fmt(t),
                            output::fmt((i as f64 + 0.5) * dx),
                            output::fmt(*rho),
                        ])?;
                    }
                }
                w.flush()?;
                output::write_table(
                    &dir.join(format!("link_{tail}_{head}_c{k}_flux.csv")),
                    &["t_start", "t_end", "u", "y"],
                    (0..self.steps_done).map(|j| {
                        vec![
                            self.grid.time(j),
                            self.grid.time(j + 1),
                            rec.inflow[k][j],
                            rec.outflow[k][j],
                        ]
                    }),
                )?;
            }
        }
        let file = output::create(&dir.join("mass_balance.json"))?;
        serde_json::to_writer_pretty(file, &self.mass_balance())?;
        Ok(())
    }
}

/// Simulates with the scenario's static splits.
pub fn simulate(scenario: &NetworkScenario) -> Result<NetworkState> {
    simulate_with(scenario, &mut StaticSplits)
}

pub fn simulate_with(
    scenario: &NetworkScenario,
    provider: &mut dyn SplitProvider,
) -> Result<NetworkState> {
    let mut state = initial_state(scenario)?;
    for _ in 0..scenario.grid.steps {
        step(scenario, &mut state, provider)?;
    }
    Ok(state)
}

/// State at `t = 0`, before any step.
pub fn initial_state(scenario: &NetworkScenario) -> Result<NetworkState> {
    let (order, schedule) = scenario.validate()?;
    let grid = scenario.grid;
    let kc = scenario.commodities.len();
    let stride = scenario.record_stride.max(1);
    let mut links = Vec::with_capacity(scenario.net.link_count());
    let mut initial_mass = vec![0.0; kc];
    for a in scenario.net.link_ids() {
        let model = scenario.models[a.0].clone();
        let characteristic = model.uses_characteristics(scenario.options.scheme)?;
        let current: Vec<Vec<f64>> = (0..kc).map(|k| scenario.initial_row(a, k)).collect();
        for (k, row) in current.iter().enumerate() {
            initial_mass[k] += row.iter().sum::<f64>() * grid.dx();
        }
        let agg = aggregate(&current);
        let t_frozen = frozen_link_time(&model, 0.0, &agg).map_err(|e| {
            let (t, h) = scenario.net.link(a);
            e.on_link(t, h)
        })?;
        links.push(LinkRecord {
            model,
            characteristic,
            history: current.iter().map(|r| vec![r.clone()]).collect(),
            aggregate_history: vec![agg.clone()],
            inflow: vec![Vec::with_capacity(grid.steps); kc],
            outflow: vec![Vec::with_capacity(grid.steps); kc],
            xi: vec![0.0],
            speeds: Vec::new(),
            mass: vec![agg.iter().sum::<f64>() * grid.dx()],
            frozen_time: vec![t_frozen],
            previous_aggregate: agg,
            current,
        });
    }
    Ok(NetworkState {
        net: scenario.net.clone(),
        commodities: scenario.commodities.clone(),
        grid,
        order,
        links,
        record_stride: stride,
        steps_done: 0,
        arrivals: vec![vec![0.0]; kc],
        injected: vec![vec![0.0]; kc],
        stranded: vec![0.0; kc],
        initial_mass,
        applied_splits: vec![BTreeMap::new(); kc],
        schedule,
    })
}

/// Advances the state by one time step.
pub fn step(
    scenario: &NetworkScenario,
    state: &mut NetworkState,
    provider: &mut dyn SplitProvider,
) -> Result<()> {
    let j = state.steps_done;
    if j >= scenario.grid.steps {
        return Err(Error::InvalidInput("horizon already reached".into()));
    }
    let net = &scenario.net;
    let grid = scenario.grid;
    let (t0, t1) = (grid.time(j), grid.time(j + 1));
    let dt = grid.dt();
    let kc = scenario.commodities.len();
    let reach: Vec<BTreeMap<NodeId, bool>> = scenario
        .commodities
        .iter()
        .map(|c| net.reaches(c.destination))
        .collect();

    // split rows for this step
    let mut rows: Vec<BTreeMap<NodeId, Vec<f64>>> = Vec::with_capacity(kc);
    for k in 0..kc {
        let provided = provider.splits(state, j, k)?.unwrap_or_default();
        let dest = scenario.commodities[k].destination;
        let mut map = BTreeMap::new();
        for &v in net.nodes() {
            if net.out_links(v).is_empty()
                || net.in_links(v).is_empty()
                || v == dest
                || !reach[k][&v]
            {
                continue;
            }
            let row = provided
                .get(&v)
                .cloned()
                .unwrap_or_else(|| state.schedule.row(net, v, k, t0, t1));
            map.insert(v, row);
        }
        rows.push(map);
    }

    let mut node_inflows: BTreeMap<(NodeId, usize), Vec<f64>> = BTreeMap::new();
    let mut arrivals = vec![0.0; kc];
    let mut injected = vec![0.0; kc];
    for &a in &state.order.clone() {
        let v = net.tail(a);
        let pos = net.out_links(v).iter().position(|&b| b == a).unwrap();
        let mut u = vec![0.0; kc];
        for k in 0..kc {
            if !node_inflows.contains_key(&(v, k)) {
                let outflows: Vec<f64> = net
                    .in_links(v)
                    .iter()
                    .map(|&b| state.links[b.0].outflow[k][j])
                    .collect();
                let sources = scenario.sources.row(net, v, k, t0, t1);
                injected[k] += sources.iter().sum::<f64>() * dt;
                let out = match rows[k].get(&v) {
                    Some(theta) => net
                        .junction_inflows(v, k, t0, &outflows, theta, &sources)
                        .map_err(|e| e.on_link(v, net.head(a)))?,
                    None => {
                        // destination or dead end: through traffic stops here
                        let arriving: f64 = outflows.iter().sum::<f64>() * dt;
                        if v == scenario.commodities[k].destination {
                            arrivals[k] += arriving;
                        } else {
                            state.stranded[k] += arriving;
                        }
                        sources
                    }
                };
                node_inflows.insert((v, k), out);
            }
            u[k] = node_inflows[&(v, k)][pos];
        }
        let rec = &mut state.links[a.0];
        let (tail, head) = net.link(a);
        let adv = advance_step(&rec.model, &scenario.options, t0, dt, &rec.current, &u)
            .map_err(|e| e.on_link(tail, head))?;
        if !rec.characteristic {
            let agg = aggregate(&rec.current);
            rec.speeds.push(
                interface_speeds(&rec.model.velocity, &rec.model.window, t0, &agg)
                    .map_err(|e| e.on_link(tail, head))?,
            );
        }
        for k in 0..kc {
            rec.inflow[k].push(u[k]);
            rec.outflow[k].push(adv.outflow[k]);
        }
        let xi_last = *rec.xi.last().unwrap();
        rec.xi.push(xi_last + adv.xi_advance.unwrap_or(0.0));
        rec.previous_aggregate = aggregate(&rec.current);
        rec.current = adv.rows;
    }
    // nodes without outgoing links only receive
    for &v in net.nodes() {
        if !net.out_links(v).is_empty() {
            continue;
        }
        for k in 0..kc {
            let arriving: f64 = net
                .in_links(v)
                .iter()
                .map(|&b| state.links[b.0].outflow[k][j])
                .sum::<f64>()
                * dt;
            if v == scenario.commodities[k].destination {
                arrivals[k] += arriving;
            } else {
                state.stranded[k] += arriving;
            }
        }
    }
    for k in 0..kc {
        let last = *state.arrivals[k].last().unwrap();
        state.arrivals[k].push(last + arrivals[k]);
        let last = *state.injected[k].last().unwrap();
        state.injected[k].push(last + injected[k]);
        for (v, row) in std::mem::take(&mut rows[k]) {
            state.applied_splits[k].entry(v).or_default().push(row);
        }
    }
    state.steps_done = j + 1;
    let record = state.steps_done % state.record_stride == 0;
    for a in net.link_ids() {
        let rec = &mut state.links[a.0];
        let agg = aggregate(&rec.current);
        rec.mass.push(agg.iter().sum::<f64>() * grid.dx());
        let (tail, head) = net.link(a);
        rec.frozen_time
            .push(frozen_link_time(&rec.model, t1, &agg).map_err(|e| e.on_link(tail, head))?);
        if record {
            for k in 0..kc {
                rec.history[k].push(rec.current[k].clone());
            }
            rec.aggregate_history.push(agg);
        }
    }
    Ok(())
}

/// Windowed density at `x` on a link's current aggregate row.
pub fn link_nonlocal_term(state: &NetworkState, a: LinkId, x: f64) -> f64 {
    let rec = &state.links[a.0];
    let agg = rec.aggregate();
    let (b, d) = rec.model.window.bounds(x);
    Reconstruction::new(&agg, state.grid.dx()).integral(b, d)
}
