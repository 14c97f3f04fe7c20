//! Scenario documents: parsing with located schema errors, validation, and
//! runners that write CSV and JSON artifacts.
//!
//! A scenario is a JSON object
//!
//! ```json
//! { "kind": "simulate", "seed": 1, "output": "out/fig2", "payload": { ... } }
//! ```
//!
//! where `kind` selects the payload schema in [`spec`].

pub mod spec;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::network::{LinkId, Piece, RoadNetwork};
use crate::network_sim::{simulate_with, NetworkScenario, StaticSplits};
use crate::output::{self, fmt, write_table};
use crate::platoon::{
    normalized_variance, optimize_velocity, solve_freight_pair, spatial_variance, variance_objectives,
    write_lambda_csv, AdmissibleVelocityField, FreightPair, PlatoonObjective,
};
use crate::private_agg::{run_private_learning, PrivateLearningOptions};
use crate::routing::{equilibrium_iterate, EquilibriumConfig, LogitRule, PolicyProvider};
use crate::scheduler::{distance_ratios, fuel_proxy, run_learning, LearningOptions, LearningRun, SchedulingProblem};
use crate::social::{
    grid_search_single_split, optimize_social, DemandSpec, DescentOptions, OptimizeResult, Parameterization,
    SocialProblem, TraceEntry,
};
use spec::*;

#[derive(Clone, Debug)]
pub enum Payload {
    Simulate(SimulateSpec),
    Equilibrium(EquilibriumSpec),
    SocialOpt(SocialOptSpec),
    PlatoonFlow(PlatoonFlowSpec),
    Schedule(ScheduleSpec),
    SchedulePrivate(SchedulePrivateSpec),
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub kind: Kind,
    pub description: Option<String>,
    pub seed: Option<u64>,
    pub output: Option<String>,
    pub payload: Payload,
}

#[derive(Deserialize)]
struct Header {
    kind: Kind,
}

fn schema_error(path: String, e: serde_json::Error) -> Error {
    Error::Schema {
        field: if path.is_empty() || path == "." { "<root>".into() } else { path },
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn parse_document<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Document<T>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema_error(path, e.into_inner())
    })
}

/// Parses a scenario document. Schema errors carry the offending field path
/// and its position in the text.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let header: Header = {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            schema_error(if inner.is_syntax() || inner.is_eof() { path } else { "kind".into() }, inner)
        })?
    };
    fn wrap<T>(d: Document<T>, f: fn(T) -> Payload) -> Scenario {
        Scenario {
            kind: d.kind,
            description: d.description,
            seed: d.seed,
            output: d.output,
            payload: f(d.payload),
        }
    }
    Ok(match header.kind {
        Kind::Simulate => wrap(parse_document(text)?, Payload::Simulate),
        Kind::Equilibrium => wrap(parse_document(text)?, Payload::Equilibrium),
        Kind::SocialOpt => wrap(parse_document(text)?, Payload::SocialOpt),
        Kind::PlatoonFlow => wrap(parse_document(text)?, Payload::PlatoonFlow),
        Kind::Schedule => wrap(parse_document(text)?, Payload::Schedule),
        Kind::SchedulePrivate => wrap(parse_document(text)?, Payload::SchedulePrivate),
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

/// What a run produced.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub kind: Kind,
    pub seed: u64,
    /// Paths relative to the output directory, sorted.
    pub artifacts: Vec<PathBuf>,
    pub summary: Value,
}

impl Scenario {
    /// Effective seed: the override, else the document's, else 0.
    pub fn seed(&self, seed: Option<u64>) -> u64 {
        seed.or(self.seed).unwrap_or(0)
    }

    /// Builds every model object the run needs without computing anything.
    pub fn validate(&self) -> Result<()> {
        match &self.payload {
            Payload::Simulate(s) => {
                for initial in variants(s) {
                    let sc = s.network.scenario(&initial.1)?;
                    sc.validate()?;
                    policies(s, &sc)?;
                    parcel_paths(s, &sc.net)?;
                }
                if let Some(p) = &s.path_times {
                    s.network.scenario(&s.network.initial)?.net.simple_paths(p.origin, p.destination, 64)?;
                }
                Ok(())
            }
            Payload::Equilibrium(s) => {
                let sc = s.network.scenario(&s.network.initial)?;
                sc.validate()?;
                for &alpha in &s.alphas {
                    if !(0.0..=1.0).contains(&alpha) {
                        return Err(Error::InvalidInput(format!("routed fraction {alpha} outside [0, 1]")));
                    }
                }
                if sc.commodities.len() != 1 {
                    return Err(Error::InvalidInput("equilibrium scenarios have exactly one commodity".into()));
                }
                sc.net.simple_paths(s.origin, sc.commodities[0].destination, 64)?;
                Ok(())
            }
            Payload::SocialOpt(s) => {
                let p = social_problem(s)?;
                p.base.validate()?;
                p.demand.validate()?;
                p.apply(&p.initial_controls())?.validate()?;
                Ok(())
            }
            Payload::PlatoonFlow(s) => {
                let (pair, field) = platoon_setup(s)?;
                pair.validate()?;
                field.validate()
            }
            Payload::Schedule(s) => schedule_setup(s).map(|_| ()),
            Payload::SchedulePrivate(s) => {
                if s.key_bits < 256 || s.key_bits % 2 != 0 {
                    return Err(Error::InvalidInput(format!("key length {} must be even and at least 256", s.key_bits)));
                }
                schedule_setup(&s.schedule).map(|_| ())
            }
        }
    }

    /// Runs the scenario and writes its artifacts under `out`.
    pub fn run(&self, out: &Path, seed: Option<u64>) -> Result<RunReport> {
        self.validate()?;
        let seed = self.seed(seed);
        std::fs::create_dir_all(out)?;
        let summary = match &self.payload {
            Payload::Simulate(s) => run_simulate(s, out)?,
            Payload::Equilibrium(s) => run_equilibrium(s, out)?,
            Payload::SocialOpt(s) => run_social(s, self, out)?,
            Payload::PlatoonFlow(s) => run_platoon(s, out)?,
            Payload::Schedule(s) => run_schedule(s, seed, out)?,
            Payload::SchedulePrivate(s) => run_schedule_private(s, seed, out)?,
        };
        let mut artifacts = Vec::new();
        collect_files(out, out, &mut artifacts)?;
        artifacts.sort();
        Ok(RunReport {
            kind: self.kind,
            seed,
            artifacts,
            summary,
        })
    }
}

fn collect_files(root: &Path, dir: &Path, acc: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, acc)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            acc.push(rel.to_path_buf());
        }
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    use std::io::Write;
    let mut w = output::create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn link_name(net: &RoadNetwork, a: LinkId) -> String {
    let (t, h) = net.link(a);
    format!("{t}-{h}")
}

fn path_name(net: &RoadNetwork, path: &[LinkId]) -> String {
    let mut nodes = vec![net.tail(path[0]).to_string()];
    nodes.extend(path.iter().map(|&a| net.head(a).to_string()));
    nodes.join("-")
}

fn trace_rows(trace: &[TraceEntry]) -> impl Iterator<Item = Vec<f64>> + '_ {
    trace
        .iter()
        .map(|e| vec![e.iteration as f64, e.objective, e.step, e.fd_step, e.simulations as f64])
}

const TRACE_HEADER: [&str; 5] = ["iteration", "objective", "step", "fd_step", "simulations"];

// ---------------------------------------------------------------- simulate

fn variants(s: &SimulateSpec) -> Vec<(String, Vec<InitialSpec>)> {
    if s.variants.is_empty() {
        vec![("base".into(), s.network.initial.clone())]
    } else {
        s.variants.iter().map(|v| (v.name.clone(), v.initial.clone())).collect()
    }
}

fn policies(s: &SimulateSpec, sc: &NetworkScenario) -> Result<Option<PolicyProvider>> {
    if s.policies.is_empty() {
        return Ok(None);
    }
    if s.policies.len() != sc.commodities.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} policies", sc.commodities.len()),
            found: s.policies.len().to_string(),
        });
    }
    let list = s
        .policies
        .iter()
        .zip(&sc.commodities)
        .map(|(p, c)| {
            let policy = p.policy(&sc.net)?;
            policy.validate(&sc.net, c.destination)?;
            Ok(policy)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(PolicyProvider::new(list, &sc.sources)))
}

fn parcel_paths(s: &SimulateSpec, net: &RoadNetwork) -> Result<Vec<Vec<LinkId>>> {
    s.parcels
        .iter()
        .map(|p| {
            if p.path.len() < 2 {
                return Err(Error::InvalidInput("a parcel path needs at least two nodes".into()));
            }
            p.path.windows(2).map(|w| find_link(net, (w[0], w[1]))).collect()
        })
        .collect()
}

fn run_simulate(s: &SimulateSpec, out: &Path) -> Result<Value> {
    let mut runs = BTreeMap::new();
    let mut travel = csv::Writer::from_writer(output::create(&out.join("travel_times.csv"))?);
    travel.write_record(["variant", "path", "entry", "exit", "travel_time"])?;
    let mut probes = csv::Writer::from_writer(output::create(&out.join("path_times.csv"))?);
    probes.write_record(["variant", "t", "path", "time"])?;
    for (name, initial) in variants(s) {
        let sc = s.network.scenario(&initial)?;
        let state = match policies(s, &sc)? {
            Some(mut provider) => simulate_with(&sc, &mut provider)?,
            None => simulate_with(&sc, &mut StaticSplits)?,
        };
        state.write_artifacts(&out.join(&name), s.output_stride)?;
        let mut parcels = Vec::new();
        for (spec, path) in s.parcels.iter().zip(parcel_paths(s, &sc.net)?) {
            let exit = match state.travel_time(&path, spec.entry) {
                Ok(t) => Some(t),
                Err(Error::HorizonExceeded { .. }) => None,
                Err(e) => return Err(e),
            };
            travel.write_record([
                name.clone(),
                path_name(&sc.net, &path),
                fmt(spec.entry),
                exit.map_or(String::new(), fmt),
                exit.map_or(String::new(), |x| fmt(x - spec.entry)),
            ])?;
            parcels.push(json!({
                "path": path_name(&sc.net, &path),
                "entry": spec.entry,
                "exit": exit,
            }));
        }
        if let Some(p) = &s.path_times {
            for &t in &p.times {
                for (path, time) in state.instantaneous_path_times(t, p.origin, p.destination)? {
                    probes.write_record([name.clone(), fmt(t), path_name(&sc.net, &path), fmt(time)])?;
                }
            }
        }
        runs.insert(
            name,
            json!({
                "steps": state.steps_done,
                "mass_balance": state.mass_balance(),
                "parcels": parcels,
            }),
        );
    }
    travel.flush()?;
    probes.flush()?;
    let summary = json!({ "variants": runs });
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- equilibrium

fn run_equilibrium(s: &EquilibriumSpec, out: &Path) -> Result<Value> {
    let base = s.network.scenario(&s.network.initial)?;
    let dest = base.commodities[0].destination;
    let paths = base.net.simple_paths(s.origin, dest, 64)?;
    write_csv(&out.join("paths.csv"), ["path", "links"], paths.iter().enumerate().map(|(i, p)| {
        [i.to_string(), p.iter().map(|&a| link_name(&base.net, a)).collect::<Vec<_>>().join(" ")]
    }))?;
    let mut gaps = csv::Writer::from_writer(output::create(&out.join("gaps.csv"))?);
    gaps.write_record(["alpha", "round", "gap"])?;
    let mut times = csv::Writer::from_writer(output::create(&out.join("path_times.csv"))?);
    times.write_record(["alpha", "t", "path", "time"])?;
    let mut finals = Vec::new();
    for &alpha in &s.alphas {
        let cfg = EquilibriumConfig {
            alpha,
            logit: LogitRule { beta: s.beta },
            rounds: s.rounds,
            origin: s.origin,
            eps: s.eps,
        };
        let rounds = equilibrium_iterate(&base, &cfg)?;
        for r in &rounds {
            gaps.write_record([fmt(alpha), r.round.to_string(), fmt(r.gap)])?;
        }
        if let Some(last) = rounds.last() {
            for &t in &s.probe_times {
                for (path, time) in last.state.instantaneous_path_times(t, s.origin, dest)? {
                    let idx = paths.iter().position(|p| *p == path).unwrap_or(usize::MAX);
                    times.write_record([fmt(alpha), fmt(t), idx.to_string(), fmt(time)])?;
                }
            }
            finals.push(json!({ "alpha": alpha, "final_gap": last.gap }));
        }
    }
    gaps.flush()?;
    times.flush()?;
    let summary = json!({ "rounds": s.rounds, "final_gaps": finals });
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn write_csv<const N: usize>(path: &Path, header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(output::create(path)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- social-opt

fn social_problem(s: &SocialOptSpec) -> Result<SocialProblem> {
    let base = s.network.scenario(&s.network.initial)?;
    let mut demand = DemandSpec::default();
    for d in &s.demand {
        demand.entries.insert((d.commodity, find_link(&base.net, d.link)?), d.total);
    }
    if s.intervals == 0 {
        return Err(Error::InvalidInput("at least one control interval is needed".into()));
    }
    for k in &s.split_knobs {
        if base.net.out_links(k.node).len() < 2 {
            return Err(Error::InvalidInput(format!("node {} has no split to control", k.node)));
        }
    }
    let param = Parameterization {
        intervals: s.intervals,
        split_knobs: s.split_knobs.iter().map(|k| (k.commodity, k.node)).collect(),
        source_knobs: s
            .source_knobs
            .iter()
            .map(|k| Ok((k.commodity, find_link(&base.net, k.link)?)))
            .collect::<Result<_>>()?,
    };
    Ok(SocialProblem { base, demand, param })
}

/// The network spec with the schedules of `sc` written back as pieces.
fn replay_network(spec: &NetworkSpec, sc: &NetworkScenario) -> NetworkSpec {
    let flows = |get: &dyn Fn(usize, LinkId) -> Option<Vec<Piece>>| {
        let mut v = Vec::new();
        for k in 0..sc.commodities.len() {
            for a in sc.net.link_ids() {
                if let Some(pieces) = get(k, a) {
                    v.push(FlowSpec {
                        commodity: k,
                        link: sc.net.link(a),
                        profile: TimeProfile::Pieces { pieces },
                    });
                }
            }
        }
        v
    };
    NetworkSpec {
        sources: flows(&|k, a| sc.sources.get(k, a).map(|p| p.pieces().to_vec())),
        splits: flows(&|k, a| sc.splits.get(k, a).map(|p| p.pieces().to_vec())),
        ..spec.clone()
    }
}

fn run_social(s: &SocialOptSpec, scenario: &Scenario, out: &Path) -> Result<Value> {
    let problem = social_problem(s)?;
    let opts = DescentOptions {
        budget: s.budget,
        fd_step: s.fd_step,
        step: s.step,
        ..DescentOptions::default()
    };
    let initial = problem.objective(&problem.initial_controls())?;
    let res: OptimizeResult<_> = optimize_social(&problem, None, &opts)?;
    write_table(&out.join("trace.csv"), &TRACE_HEADER, trace_rows(&res.trace))?;
    write_json(&out.join("controls.json"), &res.controls)?;
    let replay = Document {
        kind: Kind::Simulate,
        description: Some(format!(
            "optimized controls{}",
            scenario.description.as_ref().map_or(String::new(), |d| format!(" for: {d}"))
        )),
        seed: scenario.seed,
        output: None,
        payload: SimulateSpec {
            network: replay_network(&s.network, &problem.apply(&res.controls)?),
            variants: Vec::new(),
            policies: Vec::new(),
            parcels: Vec::new(),
            path_times: None,
            output_stride: 1,
        },
    };
    write_json(&out.join("replay.json"), &replay)?;
    let mut grid = Value::Null;
    if let Some(points) = s.grid_points {
        let single = problem.param.intervals == 1
            && problem.param.source_knobs.is_empty()
            && problem.param.split_knobs.len() == 1
            && problem.base.net.out_links(problem.param.split_knobs[0].1).len() == 2;
        if !single || points < 2 {
            return Err(Error::InvalidInput(
                "grid_points needs one two-way split knob on one interval and at least two points".into(),
            ));
        }
        let (values, modulus) = grid_search_single_split(&problem, points)?;
        write_table(&out.join("grid.csv"), &["theta", "objective"], values.iter().map(|&(t, j)| vec![t, j]))?;
        let best = values.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        grid = json!({ "points": points, "best": best, "modulus": modulus });
    }
    let summary = json!({
        "initial_objective": initial,
        "objective": res.objective,
        "status": res.status,
        "simulations": res.simulations,
        "local_minimum_caveat": res.local_minimum_caveat,
        "grid": grid,
    });
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- platoon-flow

fn platoon_setup(s: &PlatoonFlowSpec) -> Result<(FreightPair, AdmissibleVelocityField)> {
    let mut pair = FreightPair::example(s.cells, s.steps);
    if let Some(length) = s.length {
        pair.length = length;
    }
    if let Some(horizon) = s.horizon {
        pair.horizon = horizon;
    }
    if let Some(q0) = &s.trucks {
        pair.q0 = q0.cell_averages(s.cells, pair.length)?;
    } else if s.length.is_some() {
        pair.q0 = DensitySpec::Parabola { from: 1.0, to: 2.6 }.cell_averages(s.cells, pair.length)?;
    }
    if let Some(rho0) = &s.cars {
        pair.rho0 = rho0.cell_averages(s.cells, pair.length)?;
    }
    if let Some(v) = &s.car_velocity {
        pair.background = v.law();
    }
    let grid = crate::nonlocal::Grid::new(s.cells, s.steps, pair.horizon)?;
    if let Some(u) = &s.car_inflow {
        pair.u1 = u.on_grid(&grid)?;
    }
    if let Some(u) = &s.truck_inflow {
        pair.u2 = u.on_grid(&grid)?;
    }
    pair.coupling = s.coupling.window();
    let c = &s.control;
    let field = AdmissibleVelocityField::constant(
        c.start,
        pair.horizon,
        pair.length,
        c.t_nodes,
        c.x_nodes,
        c.lambda_min,
        c.lambda_max,
        c.lipschitz,
    );
    Ok((pair, field))
}

fn run_platoon(s: &PlatoonFlowSpec, out: &Path) -> Result<Value> {
    let (pair, start) = platoon_setup(s)?;
    let objective = match s.objective {
        ObjectiveSpec::J1 => PlatoonObjective::J1,
        ObjectiveSpec::J2 => PlatoonObjective::J2,
    };
    let opts = DescentOptions {
        budget: s.budget,
        fd_step: s.fd_step,
        step: s.step,
        ..DescentOptions::default()
    };
    let res = optimize_velocity(&pair, &start, objective, &opts)?;
    let reference = solve_freight_pair(&pair, &start)?;
    let optimized = solve_freight_pair(&pair, &res.controls)?;
    let stride = s.output_stride;
    reference.write_q_csv(output::create(&out.join("q_reference.csv"))?, stride)?;
    optimized.write_q_csv(output::create(&out.join("q_optimized.csv"))?, stride)?;
    write_lambda_csv(output::create(&out.join("lambda.csv"))?, &pair, &res.controls, Some(&optimized.rho), stride)?;
    write_table(&out.join("trace.csv"), &TRACE_HEADER, trace_rows(&res.trace))?;
    let (dx, dt) = (pair.dx(), pair.dt());
    let objectives = |q: &[Vec<f64>], rho: &[Vec<f64>]| {
        let (j1, j2) = variance_objectives(q, Some(rho), dx, dt);
        match objective {
            PlatoonObjective::J1 => j1,
            PlatoonObjective::J2 => j2,
        }
    };
    let last = pair.steps;
    let summary = json!({
        "objective": format!("{:?}", objective),
        "reference_objective": objectives(&reference.q, &reference.rho),
        "optimized_objective": res.objective,
        "final_variance": {
            "reference": spatial_variance(&reference.q[last], dx),
            "optimized": spatial_variance(&optimized.q[last], dx),
        },
        "final_normalized_variance": {
            "reference": normalized_variance(&reference.q[last], dx),
            "optimized": normalized_variance(&optimized.q[last], dx),
        },
        "status": res.status,
        "simulations": res.simulations,
        "local_minimum_caveat": res.local_minimum_caveat,
        "control": {
            "t_nodes": res.controls.t_nodes,
            "x_nodes": res.controls.x_nodes,
            "values": res.controls.values,
        },
    });
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- schedule

struct ScheduleSetup {
    problem: SchedulingProblem,
    temperature: f64,
    report_edges: Vec<usize>,
    initial: Vec<usize>,
}

fn schedule_setup(s: &ScheduleSpec) -> Result<ScheduleSetup> {
    let (problem, default_temperature, report_edges) = s.fleet.problem()?;
    let temperature = s.temperature.unwrap_or(default_temperature);
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidInput(format!("temperature {temperature} must be positive")));
    }
    let initial = s
        .initial
        .clone()
        .unwrap_or_else(|| problem.vehicles.iter().map(|v| v.window.0).collect());
    problem.check_delays(&initial)?;
    Ok(ScheduleSetup {
        problem,
        temperature,
        report_edges,
        initial,
    })
}

fn write_schedule_artifacts(setup: &ScheduleSetup, s: &ScheduleSpec, run: &LearningRun, out: &Path) -> Result<Value> {
    let p = &setup.problem;
    write_table(
        &out.join("costs.csv"),
        &["iteration", "cost"],
        run.costs.iter().enumerate().map(|(i, c)| vec![i as f64, *c]),
    )?;
    write_csv(
        &out.join("delays.csv"),
        ["vehicle", "initial", "best", "last"],
        (0..p.vehicles.len()).map(|i| {
            [i.to_string(), run.initial[i].to_string(), run.best[i].to_string(), run.last[i].to_string()]
        }),
    )?;
    let base = p.pair_distance_histogram(&setup.initial)?;
    let sched = p.pair_distance_histogram(&run.best)?;
    let ratios = distance_ratios(&sched, &base, s.max_distance);
    let count = |h: &BTreeMap<usize, BTreeMap<usize, u64>>, e: usize, d: usize| {
        h.get(&e).and_then(|b| b.get(&d)).copied().unwrap_or(0)
    };
    let mut w = csv::Writer::from_writer(output::create(&out.join("distance_ratios.csv"))?);
    w.write_record(["edge", "from", "to", "distance", "scheduled_pairs", "baseline_pairs", "ratio"])?;
    for (&e, row) in &ratios {
        let edge = &p.graph.edges[e];
        for (d, r) in row.iter().enumerate() {
            w.write_record([
                e.to_string(),
                edge.from.clone(),
                edge.to.clone(),
                d.to_string(),
                count(&sched, e, d).to_string(),
                count(&base, e, d).to_string(),
                r.map_or(String::new(), fmt),
            ])?;
        }
    }
    w.flush()?;
    if let Some(visits) = &run.visits {
        let total: u64 = visits.values().sum();
        write_csv(
            &out.join("visits.csv"),
            ["state", "count", "frequency"],
            visits.iter().map(|(state, &n)| {
                let key = state.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ");
                [key, n.to_string(), fmt(n as f64 / total as f64)]
            }),
        )?;
    }
    let report: Vec<Value> = setup
        .report_edges
        .iter()
        .map(|e| {
            let edge = &p.graph.edges[*e];
            json!({
                "edge": e,
                "from": edge.from,
                "to": edge.to,
                "distance_zero_ratio": ratios.get(e).and_then(|r| r.first().copied().flatten()),
            })
        })
        .collect();
    Ok(json!({
        "vehicles": p.vehicles.len(),
        "iterations": s.iterations,
        "temperature": setup.temperature,
        "initial_cost": run.costs.first(),
        "best_cost": run.best_cost,
        "report_edges": report,
        "platooning_proxy": fuel_proxy(&sched, &base),
    }))
}

fn learning_options(setup: &ScheduleSetup, s: &ScheduleSpec, seed: u64) -> LearningOptions {
    LearningOptions {
        iterations: s.iterations,
        seed,
        temperature: setup.temperature,
        track_visits: s.track_visits,
    }
}

fn run_schedule(s: &ScheduleSpec, seed: u64, out: &Path) -> Result<Value> {
    let setup = schedule_setup(s)?;
    let run = run_learning(&setup.problem, &setup.initial, &learning_options(&setup, s, seed))?;
    let summary = write_schedule_artifacts(&setup, s, &run, out)?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn run_schedule_private(s: &SchedulePrivateSpec, seed: u64, out: &Path) -> Result<Value> {
    let setup = schedule_setup(&s.schedule)?;
    let opts = PrivateLearningOptions {
        learning: learning_options(&setup, &s.schedule, seed),
        key_bits: s.key_bits,
        crypto_seed: s.crypto_seed.unwrap_or(seed.wrapping_add(1)),
    };
    let private = run_private_learning(&setup.problem, &setup.initial, &opts)?;
    let mut summary = write_schedule_artifacts(&setup, &s.schedule, &private.run, out)?;
    write_json(&out.join("transcript.json"), &private.last_transcript)?;
    summary["key_bits"] = json!(s.key_bits);
    summary["ring_passes"] = json!(private.ring_passes);
    summary["messages"] = json!(private.messages);
    summary["transcript_digest"] = json!(private.transcript_digest);
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// The document's `output` resolved against `base`, else `fallback`.
pub fn output_dir(scenario: &Scenario, base: &Path, fallback: &Path) -> PathBuf {
    scenario.output.as_ref().map_or_else(|| fallback.to_path_buf(), |o| base.join(o))
}
