//! Serializable scenario payloads and their conversion to model types.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Commodity, LinkId, NodeId, Piece, PiecewiseConstant, RoadNetwork};
use crate::network_sim::NetworkScenario;
use crate::nonlocal::{Grid, LinkModel, NonlocalWindow, Scheme, SolverOptions, VelocityLaw};
use crate::routing::{HistoricalTable, LogitRule, RoutingPolicy};
use crate::scheduler::{CountReward, FreightGraph, SchedulingProblem, VehicleAssignment};

fn default_one() -> usize {
    1
}

fn default_cfl() -> f64 {
    0.9
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocitySpec {
    Constant { speed: f64 },
    InverseLinear {
        #[serde(default = "free_speed")]
        free_speed: f64,
        scale: f64,
    },
}

fn free_speed() -> f64 {
    1.0
}

impl VelocitySpec {
    pub fn law(&self) -> VelocityLaw {
        match *self {
            Self::Constant { speed } => VelocityLaw::Constant(speed),
            Self::InverseLinear { free_speed, scale } => VelocityLaw::InverseLinear { free_speed, scale },
        }
    }

    fn max_speed(&self) -> f64 {
        match *self {
            Self::Constant { speed } => speed,
            Self::InverseLinear { free_speed, .. } => free_speed,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WindowSpec {
    #[default]
    WholeLink,
    Fixed { b: f64, d: f64 },
    Ahead { length: f64 },
}

impl WindowSpec {
    pub fn window(&self) -> NonlocalWindow {
        match *self {
            Self::WholeLink => NonlocalWindow::WholeLink,
            Self::Fixed { b, d } => NonlocalWindow::Fixed { b, d },
            Self::Ahead { length } => NonlocalWindow::Ahead { length },
        }
    }
}

/// A function of time.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeProfile {
    Constant { value: f64, t_start: f64, t_end: f64 },
    Pieces { pieces: Vec<Piece> },
    /// Linear from `from` at `t_start` to `to` at `t_end`, stored as exact
    /// step averages on the simulation grid.
    Linear { t_start: f64, t_end: f64, from: f64, to: f64 },
    /// Pointwise sum, stored as step averages on the simulation grid.
    Sum { parts: Vec<TimeProfile> },
}

impl TimeProfile {
    pub fn on_grid(&self, grid: &Grid) -> Result<PiecewiseConstant> {
        match self {
            Self::Constant { value, t_start, t_end } => PiecewiseConstant::new(vec![Piece {
                t_start: *t_start,
                t_end: *t_end,
                value: *value,
            }]),
            Self::Pieces { pieces } => PiecewiseConstant::new(pieces.clone()),
            &Self::Linear { t_start, t_end, from, to } => {
                if !(t_end > t_start) {
                    return Err(Error::InvalidInput(format!("linear profile needs t_end > t_start (got {t_start}, {t_end})")));
                }
                let slope = (to - from) / (t_end - t_start);
                let dt = grid.dt();
                let mut pieces = Vec::new();
                for j in 0..grid.steps {
                    let (a, b) = (grid.time(j), grid.time(j + 1));
                    let (lo, hi) = (a.max(t_start), b.min(t_end));
                    if hi <= lo {
                        continue;
                    }
                    let mid = 0.5 * (lo + hi);
                    let value = (from + slope * (mid - t_start)) * (hi - lo) / dt;
                    pieces.push(Piece { t_start: a, t_end: b, value });
                }
                PiecewiseConstant::new(pieces)
            }
            Self::Sum { parts } => {
                let parts = parts.iter().map(|p| p.on_grid(grid)).collect::<Result<Vec<_>>>()?;
                let pieces = (0..grid.steps)
                    .map(|j| {
                        let (a, b) = (grid.time(j), grid.time(j + 1));
                        Piece {
                            t_start: a,
                            t_end: b,
                            value: parts.iter().map(|p| p.average(a, b)).sum(),
                        }
                    })
                    .collect();
                PiecewiseConstant::new(pieces)
            }
        }
    }
}

/// A density profile on `[0, length]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Constant { value: f64 },
    Indicator { from: f64, to: f64, value: f64 },
    /// `(to - x)(x - from)` on `[from, to]`.
    Parabola { from: f64, to: f64 },
    Cells { values: Vec<f64> },
}

impl DensitySpec {
    /// Exact cell averages over `cells` equal cells of `[0, length]`.
    pub fn cell_averages(&self, cells: usize, length: f64) -> Result<Vec<f64>> {
        let h = length / cells as f64;
        let overlap = |i: usize, from: f64, to: f64| {
            let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
            (a.max(from), b.min(to))
        };
        match self {
            Self::Constant { value } => Ok(vec![*value; cells]),
            &Self::Indicator { from, to, value } => Ok((0..cells)
                .map(|i| {
                    let (lo, hi) = overlap(i, from, to);
                    if hi > lo {
                        value * (hi - lo) / h
                    } else {
                        0.0
                    }
                })
                .collect()),
            &Self::Parabola { from, to } => {
                // antiderivative of (to - x)(x - from)
                let prim = |x: f64| -x * x * x / 3.0 + (from + to) * x * x / 2.0 - from * to * x;
                Ok((0..cells)
                    .map(|i| {
                        let (lo, hi) = overlap(i, from, to);
                        if hi > lo {
                            (prim(hi) - prim(lo)) / h
                        } else {
                            0.0
                        }
                    })
                    .collect())
            }
            Self::Cells { values } => {
                if values.len() != cells {
                    return Err(Error::DimensionMismatch {
                        expected: format!("{cells} cells"),
                        found: values.len().to_string(),
                    });
                }
                Ok(values.clone())
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub tail: NodeId,
    pub head: NodeId,
    pub velocity: VelocitySpec,
    #[serde(default)]
    pub window: WindowSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub cells: usize,
    pub horizon: f64,
    /// Derived from the CFL number and the fastest link when absent.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub commodity: usize,
    pub link: (NodeId, NodeId),
    pub profile: TimeProfile,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub commodity: usize,
    pub link: (NodeId, NodeId),
    pub density: DensitySpec,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeSpec {
    #[default]
    Auto,
    FiniteVolume,
    Characteristics,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkSpec>,
    pub commodities: Vec<Commodity>,
    pub grid: GridSpec,
    #[serde(default)]
    pub sources: Vec<FlowSpec>,
    #[serde(default)]
    pub splits: Vec<FlowSpec>,
    #[serde(default)]
    pub initial: Vec<InitialSpec>,
    #[serde(default)]
    pub scheme: SchemeSpec,
    #[serde(default = "default_one")]
    pub record_stride: usize,
}

pub fn find_link(net: &RoadNetwork, (tail, head): (NodeId, NodeId)) -> Result<LinkId> {
    net.find_link(tail, head)
        .ok_or_else(|| Error::InvalidInput(format!("no link ({tail}, {head})")))
}

impl NetworkSpec {
    pub fn grid(&self) -> Result<Grid> {
        match self.grid.steps {
            Some(steps) => Grid::new(self.grid.cells, steps, self.grid.horizon),
            None => {
                let max_speed = self.links.iter().map(|l| l.velocity.max_speed()).fold(0.0, f64::max);
                Grid::with_cfl(self.grid.cells, self.grid.horizon, max_speed, self.grid.cfl)
            }
        }
    }

    pub fn scenario(&self, initial: &[InitialSpec]) -> Result<NetworkScenario> {
        let net = RoadNetwork::new(self.nodes.clone(), self.links.iter().map(|l| (l.tail, l.head)).collect())?;
        let grid = self.grid()?;
        let models = self
            .links
            .iter()
            .map(|l| LinkModel::new(l.velocity.law(), l.window.window()))
            .collect();
        let mut sc = NetworkScenario::new(net, self.commodities.clone(), models, grid);
        let m = self.commodities.len();
        let check = |k: usize| {
            if k < m {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("commodity {k} not declared")))
            }
        };
        for s in &self.sources {
            check(s.commodity)?;
            sc.sources.set(s.commodity, find_link(&sc.net, s.link)?, s.profile.on_grid(&grid)?);
        }
        for s in &self.splits {
            check(s.commodity)?;
            sc.splits.set(s.commodity, find_link(&sc.net, s.link)?, s.profile.on_grid(&grid)?);
        }
        sc.initial = vec![vec![Vec::new(); m]; sc.net.link_count()];
        for init in initial {
            check(init.commodity)?;
            let a = find_link(&sc.net, init.link)?;
            sc.initial[a.0][init.commodity] = init.density.cell_averages(grid.cells, 1.0)?;
        }
        sc.options = SolverOptions {
            scheme: match self.scheme {
                SchemeSpec::Auto => Scheme::Auto,
                SchemeSpec::FiniteVolume => Scheme::FiniteVolume,
                SchemeSpec::Characteristics => Scheme::Characteristics,
            },
            ..SolverOptions::default()
        };
        sc.record_stride = self.record_stride.max(1);
        Ok(sc)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Static,
    ExAnte { beta: f64 },
    Local { beta: f64, radius: usize },
    SubNetwork { beta: f64, links: Vec<(NodeId, NodeId)> },
    FullInformation { beta: f64 },
    Delayed { beta: f64, delay: f64 },
    Incentivized { beta: f64, weight: f64 },
    /// `(time, cost per link)` entries.
    Database { beta: f64, table: Vec<(f64, Vec<f64>)> },
    SimplifiedForecast { beta: f64, horizon: f64 },
}

impl PolicySpec {
    pub fn policy(&self, net: &RoadNetwork) -> Result<RoutingPolicy> {
        let l = |beta: f64| LogitRule { beta };
        Ok(match self {
            Self::Static => RoutingPolicy::Static,
            Self::ExAnte { beta } => RoutingPolicy::ExAnte { logit: l(*beta) },
            Self::Local { beta, radius } => RoutingPolicy::Local { logit: l(*beta), radius: *radius },
            Self::SubNetwork { beta, links } => {
                let mut mask = vec![false; net.link_count()];
                for &pair in links {
                    mask[find_link(net, pair)?.0] = true;
                }
                RoutingPolicy::SubNetwork { logit: l(*beta), mask }
            }
            Self::FullInformation { beta } => RoutingPolicy::FullInformation { logit: l(*beta) },
            Self::Delayed { beta, delay } => RoutingPolicy::Delayed { logit: l(*beta), delay: *delay },
            Self::Incentivized { beta, weight } => RoutingPolicy::Incentivized { logit: l(*beta), weight: *weight },
            Self::Database { beta, table } => RoutingPolicy::Database {
                logit: l(*beta),
                table: HistoricalTable { entries: table.clone() },
            },
            Self::SimplifiedForecast { beta, horizon } => {
                RoutingPolicy::SimplifiedForecast { logit: l(*beta), horizon: *horizon }
            }
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    /// Edge indices.
    pub path: Vec<usize>,
    pub departure: usize,
    pub window: (usize, usize),
    #[serde(default)]
    pub delay_cost: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum FleetSpec {
    /// Kiruna-Stockholm and Ostersund-Malmo fleets.
    Sweden {
        #[serde(default = "sweden_delay")]
        max_delay: usize,
        #[serde(default = "sweden_vehicles")]
        vehicles_per_route: usize,
    },
    Explicit {
        graph: FreightGraph,
        vehicles: Vec<VehicleSpec>,
        horizon: usize,
        #[serde(default = "unit")]
        gamma: f64,
        #[serde(default)]
        reward: CountReward,
        temperature: f64,
    },
}

fn sweden_delay() -> usize {
    3
}

fn sweden_vehicles() -> usize {
    40
}

fn unit() -> f64 {
    1.0
}

impl FleetSpec {
    /// The problem, its default temperature and the edges to report on.
    pub fn problem(&self) -> Result<(SchedulingProblem, f64, Vec<usize>)> {
        match self {
            &Self::Sweden { max_delay, vehicles_per_route } => {
                let s = crate::scheduler::build_sweden_scenario(&crate::scheduler::SwedenConfig {
                    max_delay,
                    vehicles_per_route,
                })?;
                Ok((s.problem, s.temperature, s.kiruna_stockholm))
            }
            Self::Explicit { graph, vehicles, horizon, gamma, reward, temperature } => {
                graph.validate()?;
                let vehicles = vehicles
                    .iter()
                    .map(|v| {
                        let mut a = VehicleAssignment::from_path(graph, &v.path, v.departure, *horizon, v.window)?;
                        a.delay_cost = v.delay_cost.clone();
                        Ok(a)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let problem = SchedulingProblem {
                    graph: graph.clone(),
                    vehicles,
                    horizon: *horizon,
                    gamma: *gamma,
                    reward: reward.clone(),
                };
                problem.validate()?;
                let edges = (0..graph.edges.len()).collect();
                Ok((problem, *temperature, edges))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate,
    Equilibrium,
    SocialOpt,
    PlatoonFlow,
    Schedule,
    SchedulePrivate,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Equilibrium => "equilibrium",
            Self::SocialOpt => "social-opt",
            Self::PlatoonFlow => "platoon-flow",
            Self::Schedule => "schedule",
            Self::SchedulePrivate => "schedule-private",
        }
    }
}

/// The document layout shared by every kind.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document<T> {
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory, relative to the working directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub payload: T,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    pub initial: Vec<InitialSpec>,
}

/// A parcel entering the first link of a node path at `entry`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParcelSpec {
    pub path: Vec<NodeId>,
    pub entry: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathTimesSpec {
    pub origin: NodeId,
    pub destination: NodeId,
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub network: NetworkSpec,
    /// Named replacements of the initial densities; one run each. Without
    /// variants the network's own initial data is run as `base`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<VariantSpec>,
    /// One per commodity; static splits when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub policies: Vec<PolicySpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parcels: Vec<ParcelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_times: Option<PathTimesSpec>,
    /// Keep every n-th recorded row in the density CSVs.
    #[serde(default = "default_one")]
    pub output_stride: usize,
}

fn default_eps() -> f64 {
    1e-3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumSpec {
    pub network: NetworkSpec,
    /// Routed fractions to sweep.
    pub alphas: Vec<f64>,
    pub beta: f64,
    pub rounds: usize,
    pub origin: NodeId,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Times at which final-round path times are reported.
    #[serde(default)]
    pub probe_times: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandEntry {
    pub commodity: usize,
    pub link: (NodeId, NodeId),
    pub total: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitKnob {
    pub commodity: usize,
    pub node: NodeId,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceKnob {
    pub commodity: usize,
    pub link: (NodeId, NodeId),
}

fn default_budget() -> usize {
    200
}

fn default_fd_step() -> f64 {
    1e-3
}

fn default_step() -> f64 {
    0.25
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocialOptSpec {
    pub network: NetworkSpec,
    pub demand: Vec<DemandEntry>,
    #[serde(default = "default_one")]
    pub intervals: usize,
    #[serde(default)]
    pub split_knobs: Vec<SplitKnob>,
    #[serde(default)]
    pub source_knobs: Vec<SourceKnob>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    /// Also tabulates the objective on this many values of the split, for
    /// a single two-way split knob on one interval.
    #[serde(default)]
    pub grid_points: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveSpec {
    J1,
    J2,
}

fn platoon_cells() -> usize {
    200
}

fn platoon_steps() -> usize {
    120
}

fn control_nodes() -> usize {
    16
}

fn platoon_budget() -> usize {
    6000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    #[serde(default = "control_nodes")]
    pub t_nodes: usize,
    #[serde(default = "control_nodes")]
    pub x_nodes: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lipschitz: f64,
    /// Constant starting field, also the reference the result is compared with.
    pub start: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatoonFlowSpec {
    #[serde(default = "platoon_cells")]
    pub cells: usize,
    #[serde(default = "platoon_steps")]
    pub steps: usize,
    /// Road length; 5 when absent.
    #[serde(default)]
    pub length: Option<f64>,
    /// Horizon; 2 when absent.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Initial truck density in road coordinates; `(2.6 - x)(x - 1)` on
    /// `[1, 2.6]` when absent.
    #[serde(default)]
    pub trucks: Option<DensitySpec>,
    /// Initial car density; none when absent.
    #[serde(default)]
    pub cars: Option<DensitySpec>,
    #[serde(default)]
    pub car_velocity: Option<VelocitySpec>,
    #[serde(default)]
    pub car_inflow: Option<TimeProfile>,
    #[serde(default)]
    pub truck_inflow: Option<TimeProfile>,
    #[serde(default)]
    pub coupling: WindowSpec,
    pub control: ControlSpec,
    pub objective: ObjectiveSpec,
    #[serde(default = "platoon_budget")]
    pub budget: usize,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_one")]
    pub output_stride: usize,
}

fn default_max_distance() -> usize {
    3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub fleet: FleetSpec,
    pub iterations: usize,
    /// Overrides the fleet's temperature.
    #[serde(default)]
    pub temperature: Option<f64>,
    /// Starting delays; the earliest delay of every window when absent.
    /// Also the baseline the distance ratios are taken against.
    #[serde(default)]
    pub initial: Option<Vec<usize>>,
    #[serde(default = "default_max_distance")]
    pub max_distance: usize,
    /// Count visits to joint states and write their distribution.
    #[serde(default)]
    pub track_visits: bool,
}

fn default_key_bits() -> usize {
    512
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulePrivateSpec {
    pub schedule: ScheduleSpec,
    #[serde(default = "default_key_bits")]
    pub key_bits: usize,
    /// Seeds key generation and encryption; the scenario seed plus one
    /// when absent.
    #[serde(default)]
    pub crypto_seed: Option<u64>,
}
