use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::SchedulingProblem;
use crate::error::{Error, Result};

/// Cap on exhaustive enumeration.
pub const MAX_JOINT_STATES: u128 = 1_000_000;

/// All joint delay vectors in lexicographic order.
pub fn joint_states(problem: &SchedulingProblem) -> Result<Vec<Vec<usize>>> {
    let count: u128 = problem
        .vehicles
        .iter()
        .map(|v| (v.window.1 - v.window.0 + 1) as u128)
        .try_fold(1u128, |acc, n| acc.checked_mul(n))
        .unwrap_or(u128::MAX);
    if count > MAX_JOINT_STATES {
        return Err(Error::InstanceTooLarge {
            joint_states: count,
            cap: MAX_JOINT_STATES,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut current: Vec<usize> = problem.vehicles.iter().map(|v| v.window.0).collect();
    loop {
        out.push(current.clone());
        let mut k = current.len();
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            if current[k] < problem.vehicles[k].window.1 {
                current[k] += 1;
                break;
            }
            current[k] = problem.vehicles[k].window.0;
        }
    }
}

/// Global minimizer by enumeration; ties go to the lexicographically
/// smallest delays.
pub fn brute_force_schedule(problem: &SchedulingProblem) -> Result<(Vec<usize>, f64)> {
    problem.validate()?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for s in joint_states(problem)? {
        let c = problem.cost_unchecked(&s);
        if best.as_ref().is_none_or(|(_, b)| c < *b) {
            best = Some((s, c));
        }
    }
    Ok(best.expect("at least one joint state"))
}

/// Gibbs law `exp(-Φ/ϱ) / Z` over all joint states.
pub fn exact_gibbs(problem: &SchedulingProblem, temperature: f64) -> Result<Vec<(Vec<usize>, f64)>> {
    problem.validate()?;
    let states = joint_states(problem)?;
    let phi: Vec<f64> = states.iter().map(|s| problem.cost_unchecked(s)).collect();
    let min = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = phi.iter().map(|p| (-(p - min) / temperature).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(states.into_iter().zip(w).map(|(s, w)| (s, w / z)).collect())
}

pub fn total_variation(visits: &BTreeMap<Vec<usize>, u64>, exact: &[(Vec<usize>, f64)]) -> f64 {
    let n: u64 = visits.values().sum();
    let mut tv = 0.0;
    for (s, p) in exact {
        let q = visits.get(s).copied().unwrap_or(0) as f64 / n as f64;
        tv += (p - q).abs();
    }
    // mass on states outside the exact support
    let outside: u64 = visits
        .iter()
        .filter(|(s, _)| exact.binary_search_by(|(e, _)| e.cmp(s)).is_err())
        .map(|(_, c)| c)
        .sum();
    0.5 * (tv + outside as f64 / n as f64)
}

/// Vehicles that can never share an edge at the same step, whatever their
/// delays, end up in different groups. Per edge, each vehicle's reachable
/// steps are over-approximated by an interval, so groups may be coarser
/// than necessary but never split interacting vehicles.
pub fn interaction_groups(problem: &SchedulingProblem) -> Vec<Vec<usize>> {
    let n = problem.vehicles.len();
    let ne = problem.graph.edges.len();
    let spans: Vec<Vec<Option<(usize, usize)>>> = problem
        .vehicles
        .iter()
        .map(|v| {
            let mut s = vec![None; ne];
            for (t, e) in v.occupied(0) {
                let entry: &mut Option<(usize, usize)> = &mut s[e];
                *entry = Some(match *entry {
                    None => (t + v.window.0, t + v.window.1),
                    Some((a, b)) => (a.min(t + v.window.0), b.max(t + v.window.1)),
                });
            }
            s
        })
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let meet = (0..ne).any(|e| match (spans[i][e], spans[j][e]) {
                (Some((a, b)), Some((c, d))) => a.max(c) <= b.min(d).min(problem.horizon),
                _ => false,
            });
            if meet {
                let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = root(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Draws the updating vehicle and its new delay. `zeta` supplies the
/// occupancy of the other vehicles; only the entries vehicle `i` can reach
/// are used. Returns `(vehicle, old utility - new utility)`.
pub(crate) fn resample<R, Z>(
    problem: &SchedulingProblem,
    delays: &mut [usize],
    temperature: f64,
    rng: &mut R,
    mut zeta: Z,
) -> Result<(usize, f64)>
where
    R: Rng,
    Z: FnMut(usize, &[usize]) -> Result<Vec<u32>>,
{
    let i = rng.gen_range(0..problem.vehicles.len());
    let z = zeta(i, delays)?;
    let v = &problem.vehicles[i];
    let u: Vec<f64> = problem
        .g_increments(i, &z)
        .into_iter()
        .zip(v.delays())
        .map(|(g, tau)| v.h(tau) + g)
        .collect();
    let min = u.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = u.iter().map(|x| (-(x - min) / temperature).exp()).collect();
    let total: f64 = w.iter().sum();
    let r = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut pick = w.len() - 1;
    for (k, wk) in w.iter().enumerate() {
        acc += wk;
        if r < acc {
            pick = k;
            break;
        }
    }
    let old = delays[i] - v.window.0;
    delays[i] = v.window.0 + pick;
    Ok((i, u[old] - u[pick]))
}

/// One log-linear learning step on plaintext counts.
pub fn log_linear_step<R: Rng>(
    problem: &SchedulingProblem,
    delays: &mut [usize],
    temperature: f64,
    rng: &mut R,
) -> Result<usize> {
    resample(problem, delays, temperature, rng, |i, d| {
        Ok(problem.occupancy_excluding(d, Some(i)))
    })
    .map(|(i, _)| i)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LearningOptions {
    pub iterations: usize,
    pub seed: u64,
    /// `ϱ`
    pub temperature: f64,
    /// Count visits per joint state (small instances only).
    pub track_visits: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LearningRun {
    pub initial: Vec<usize>,
    /// `(vehicle, new delay)` per iteration.
    pub moves: Vec<(usize, usize)>,
    /// Total cost after each iteration, starting with the initial one.
    pub costs: Vec<f64>,
    #[serde(skip)]
    pub visits: Option<BTreeMap<Vec<usize>, u64>>,
    pub best: Vec<usize>,
    pub best_cost: f64,
    pub last: Vec<usize>,
}

impl LearningRun {
    pub fn trajectory(&self) -> Vec<Vec<usize>> {
        let mut out = vec![self.initial.clone()];
        let mut cur = self.initial.clone();
        for &(i, d) in &self.moves {
            cur[i] = d;
            out.push(cur.clone());
        }
        out
    }
}

/// Runs log-linear learning from `initial`, with the counts of the others
/// supplied by `zeta`. Deterministic for a given seed.
pub(crate) fn run_learning_with<Z>(
    problem: &SchedulingProblem,
    initial: &[usize],
    opts: &LearningOptions,
    mut zeta: Z,
) -> Result<LearningRun>
where
    Z: FnMut(usize, &[usize]) -> Result<Vec<u32>>,
{
    problem.validate()?;
    if !(opts.temperature > 0.0) {
        return Err(Error::InvalidInput("temperature must be positive".into()));
    }
    let mut cost = problem.coordination_cost(initial)?;
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut delays = initial.to_vec();
    let mut moves = Vec::with_capacity(opts.iterations);
    let mut costs = Vec::with_capacity(opts.iterations + 1);
    costs.push(cost);
    let mut visits = opts.track_visits.then(BTreeMap::new);
    let mut best = (delays.clone(), cost);
    for _ in 0..opts.iterations {
        let (i, gain) = resample(problem, &mut delays, opts.temperature, &mut rng, &mut zeta)?;
        // potential identity: the total moves by the mover's own change
        cost -= gain;
        moves.push((i, delays[i]));
        costs.push(cost);
        if let Some(v) = visits.as_mut() {
            *v.entry(delays.clone()).or_insert(0u64) += 1;
        }
        if cost < best.1 {
            best = (delays.clone(), cost);
        }
    }
    let best_cost = problem.cost_unchecked(&best.0);
    Ok(LearningRun {
        initial: initial.to_vec(),
        moves,
        costs,
        visits,
        best: best.0,
        best_cost,
        last: delays,
    })
}

pub fn run_learning(problem: &SchedulingProblem, initial: &[usize], opts: &LearningOptions) -> Result<LearningRun> {
    run_learning_with(problem, initial, opts, |i, d| Ok(problem.occupancy_excluding(d, Some(i))))
}

#[cfg(test)]
mod tests {
    use super::super::tests::line;
    use super::super::{CountReward, VehicleAssignment};
    use super::*;
    use proptest::prelude::{any, prop, prop_assert, proptest, Strategy};

    fn two_offset() -> SchedulingProblem {
        // same route, the second vehicle departs one step later
        let g = line(&[2, 2]);
        let a = VehicleAssignment::from_path(&g, &[0, 1], 0, 8, (0, 1)).unwrap();
        let b = VehicleAssignment::from_path(&g, &[0, 1], 1, 8, (0, 1)).unwrap();
        SchedulingProblem {
            graph: g,
            vehicles: vec![a, b],
            horizon: 8,
            gamma: 1.0,
            reward: CountReward::Square,
        }
    }

    #[test]
    fn brute_force_examples() {
        let p = two_offset();
        let (tau, cost) = brute_force_schedule(&p).unwrap();
        assert_eq!(tau, vec![1, 0]);
        // four shared steps at f(2) = 4
        assert_eq!(cost, -16.0);

        let g = line(&[3]);
        let mut v = VehicleAssignment::from_path(&g, &[0], 0, 9, (2, 5)).unwrap();
        v.delay_cost = vec![0.0, 1.0, 2.0, 3.0];
        let single = SchedulingProblem {
            graph: g,
            vehicles: vec![v],
            horizon: 9,
            gamma: 1.0,
            reward: CountReward::Square,
        };
        assert_eq!(brute_force_schedule(&single).unwrap().0, vec![2]);

        let mut fixed = two_offset();
        fixed.vehicles[0].window = (1, 1);
        fixed.vehicles[1].window = (1, 1);
        assert_eq!(brute_force_schedule(&fixed).unwrap().0, vec![1, 1]);
    }

    #[test]
    fn too_large_is_rejected() {
        let g = line(&[1]);
        let v = VehicleAssignment::from_path(&g, &[0], 0, 40, (0, 9)).unwrap();
        let p = SchedulingProblem {
            graph: g,
            vehicles: vec![v; 7],
            horizon: 40,
            gamma: 1.0,
            reward: CountReward::Square,
        };
        assert!(matches!(brute_force_schedule(&p), Err(Error::InstanceTooLarge { .. })));
    }

    #[test]
    fn hot_limit_is_uniform() {
        let p = two_offset();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut hits = [0u32; 2];
        let n = 20_000;
        for _ in 0..n {
            let mut d = vec![0, 0];
            let i = log_linear_step(&p, &mut d, 1e12, &mut rng).unwrap();
            hits[d[i]] += 1;
        }
        // the law itself: weights of exp(-Δ/1e12) are 1 to within 1e-10
        let z = p.occupancy_excluding(&[0, 0], Some(0));
        let u = p.utilities(0, &z);
        let w: Vec<f64> = u.iter().map(|x| (-(x - u[0]) / 1e12).exp()).collect();
        let tv = 0.5 * w.iter().map(|wi| (wi / w.iter().sum::<f64>() - 0.5).abs()).sum::<f64>();
        assert!(tv < 1e-6);
        assert!((hits[0] as f64 / n as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn singleton_window_is_kept() {
        let mut p = two_offset();
        p.vehicles[0].window = (1, 1);
        p.vehicles[1].window = (0, 0);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut d = vec![1, 0];
        for _ in 0..20 {
            log_linear_step(&p, &mut d, 1.0, &mut rng).unwrap();
            assert_eq!(d, vec![1, 0]);
        }
    }

    #[test]
    fn cold_limit_is_best_response() {
        let p = two_offset();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut best = 0;
        let n = 10_000;
        for _ in 0..n {
            let mut d = vec![0, 0];
            let i = log_linear_step(&p, &mut d, 0.01, &mut rng).unwrap();
            // vehicle 0 aligns by waiting one step, vehicle 1 by not waiting
            if d[i] == if i == 0 { 1 } else { 0 } {
                best += 1;
            }
        }
        assert!(best as f64 / n as f64 > 0.999);
    }

    #[test]
    fn learning_run_shape_and_best() {
        let p = two_offset();
        let opts = LearningOptions {
            iterations: 1,
            seed: 1,
            temperature: 1.0,
            track_visits: false,
        };
        let run = run_learning(&p, &[0, 0], &opts).unwrap();
        assert_eq!(run.trajectory().len(), 2);

        let opts = LearningOptions {
            iterations: 200,
            temperature: 0.05,
            ..opts
        };
        let run = run_learning(&p, &[0, 1], &opts).unwrap();
        let (_, opt) = brute_force_schedule(&p).unwrap();
        assert_eq!(run.best_cost, opt);
        let again = run_learning(&p, &[0, 1], &opts).unwrap();
        assert_eq!(run.moves, again.moves);
        for (k, s) in run.trajectory().iter().enumerate() {
            assert!((p.coordination_cost(s).unwrap() - run.costs[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn groups_split_far_apart_vehicles() {
        let g = line(&[2, 2]);
        let mk = |dep| VehicleAssignment::from_path(&g, &[0, 1], dep, 30, (0, 2)).unwrap();
        let p = SchedulingProblem {
            graph: g.clone(),
            vehicles: vec![mk(0), mk(3), mk(20), mk(1)],
            horizon: 30,
            gamma: 1.0,
            reward: CountReward::Square,
        };
        assert_eq!(interaction_groups(&p), vec![vec![0, 1, 3], vec![2]]);
    }

    fn random_problem() -> impl Strategy<Value = (SchedulingProblem, Vec<usize>, usize, usize)> {
        (2usize..5, 1usize..4, prop::collection::vec(1usize..4, 3), any::<u64>()).prop_map(|(n, width, dwells, seed)| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut g = line(&dwells);
            for e in &mut g.edges {
                e.weight = rng.gen_range(0.1..3.0);
            }
            let horizon = 14;
            let vehicles: Vec<VehicleAssignment> = (0..n)
                .map(|_| {
                    let start = rng.gen_range(0..3);
                    let end = rng.gen_range(start + 1..=3);
                    let path: Vec<usize> = (start..end).collect();
                    let lo = rng.gen_range(0..2);
                    let mut v = VehicleAssignment::from_path(&g, &path, rng.gen_range(0..3), horizon, (lo, lo + width)).unwrap();
                    v.delay_cost = (0..=width).map(|_| rng.gen_range(0.0..2.0)).collect();
                    v
                })
                .collect();
            let delays: Vec<usize> = vehicles.iter().map(|v| rng.gen_range(v.window.0..=v.window.1)).collect();
            let i = rng.gen_range(0..n);
            let new = rng.gen_range(vehicles[i].window.0..=vehicles[i].window.1);
            let p = SchedulingProblem {
                graph: g,
                vehicles,
                horizon,
                gamma: rng.gen_range(0.0..2.0),
                reward: CountReward::Square,
            };
            (p, delays, i, new)
        })
    }

    proptest! {
        #[test]
        fn potential_identity((p, delays, i, new) in random_problem()) {
            let (dphi, du) = p.potential_check(&delays, i, new).unwrap();
            prop_assert!((dphi - du).abs() <= 1e-9);
        }

        #[test]
        fn cost_is_invariant_under_relabeling((p, delays, _, _) in random_problem()) {
            let mut q = p.clone();
            q.vehicles.reverse();
            let rev: Vec<usize> = delays.iter().rev().copied().collect();
            prop_assert!((p.coordination_cost(&delays).unwrap() - q.coordination_cost(&rev).unwrap()).abs() <= 1e-9);
        }

        #[test]
        fn joint_shift_keeps_platoon_term((p, delays, _, _) in random_problem(), c in 1usize..4) {
            // every delay grows by c and the horizon with it
            let mut q = p.clone();
            q.horizon += c;
            for v in &mut q.vehicles {
                v.walk.extend(std::iter::repeat_n(None, c));
                v.window = (v.window.0 + c, v.window.1 + c);
            }
            let shifted: Vec<usize> = delays.iter().map(|d| d + c).collect();
            let a = p.platoon_term(&p.occupancy(&delays));
            let b = q.platoon_term(&q.occupancy(&shifted));
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
