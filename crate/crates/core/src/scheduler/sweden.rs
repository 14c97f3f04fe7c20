use serde::{Deserialize, Serialize};

use super::{CountReward, FreightEdge, FreightGraph, SchedulingProblem, VehicleAssignment};
use crate::error::Result;

/// `(from, to, dwell in 5-minute steps)`. Weights equal the dwell, so both
/// are proportional to the edge length.
pub const SWEDEN_EDGES: [(&str, &str, usize); 8] = [
    ("Kiruna", "Lulea", 48),
    ("Lulea", "Umea", 39),
    ("Umea", "Sundsvall", 39),
    ("Sundsvall", "Uppsala", 42),
    ("Uppsala", "Stockholm", 9),
    ("Ostersund", "Sundsvall", 30),
    ("Stockholm", "Helsingborg", 79),
    ("Helsingborg", "Malmo", 9),
];

const KIRUNA_STOCKHOLM: [usize; 5] = [0, 1, 2, 3, 4];
const OSTERSUND_MALMO: [usize; 5] = [5, 3, 4, 6, 7];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwedenConfig {
    /// Largest delay in steps (3 steps = 15 min).
    pub max_delay: usize,
    pub vehicles_per_route: usize,
}

impl Default for SwedenConfig {
    fn default() -> Self {
        Self {
            max_delay: 3,
            vehicles_per_route: 40,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SwedenScenario {
    pub problem: SchedulingProblem,
    /// Learning temperature `ϱ`.
    pub temperature: f64,
    /// Edge indices of the Kiruna-Stockholm route.
    pub kiruna_stockholm: Vec<usize>,
}

/// 40 vehicles Kiruna to Stockholm leaving between midnight and 2am and 40
/// vehicles Ostersund to Malmo leaving between 7am and 9am, in 5-minute
/// steps counted from midnight; `h ≡ 0`, `γ = 1`, `f(z) = z²`, `ϱ = 100`.
pub fn build_sweden_scenario(config: &SwedenConfig) -> Result<SwedenScenario> {
    let graph = FreightGraph {
        edges: SWEDEN_EDGES
            .iter()
            .map(|&(from, to, dwell)| FreightEdge {
                from: from.into(),
                to: to.into(),
                weight: dwell as f64,
                dwell,
            })
            .collect(),
    };
    let n = config.vehicles_per_route;
    // two hours is 24 steps
    let spread = |i: usize| i * 24 / n.max(1);
    let trip = |path: &[usize]| path.iter().map(|&e| SWEDEN_EDGES[e].2).sum::<usize>();
    let last = (spread(n.saturating_sub(1)) + trip(&KIRUNA_STOCKHOLM)).max(84 + spread(n.saturating_sub(1)) + trip(&OSTERSUND_MALMO));
    let horizon = last + config.max_delay;
    let window = (0, config.max_delay);
    let mut vehicles = Vec::with_capacity(2 * n);
    for i in 0..n {
        vehicles.push(VehicleAssignment::from_path(&graph, &KIRUNA_STOCKHOLM, spread(i), horizon, window)?);
    }
    for i in 0..n {
        vehicles.push(VehicleAssignment::from_path(&graph, &OSTERSUND_MALMO, 84 + spread(i), horizon, window)?);
    }
    let problem = SchedulingProblem {
        graph,
        vehicles,
        horizon,
        gamma: 1.0,
        reward: CountReward::Square,
    };
    problem.validate()?;
    Ok(SwedenScenario {
        problem,
        temperature: 100.0,
        kiruna_stockholm: KIRUNA_STOCKHOLM.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_boundaries() {
        let s = build_sweden_scenario(&SwedenConfig::default()).unwrap();
        let v = &s.problem.vehicles[0];
        let a = v.arrivals(0);
        let bounds: Vec<usize> = KIRUNA_STOCKHOLM.iter().map(|e| a[e] - 1).collect();
        assert_eq!(bounds, vec![0, 48, 87, 126, 168]);
        assert_eq!(v.occupied(0).count(), 177);
        // Kiruna-Sundsvall 10.5 h, Ostersund-Sundsvall 2.5 h
        assert_eq!(a[&3] - 1, 126);
        assert_eq!(SWEDEN_EDGES[5].2 * 5, 150);
        let o = &s.problem.vehicles[40];
        assert_eq!(o.arrivals(0)[&5] - 1, 84);
        assert_eq!(s.problem.vehicles[79].arrivals(0)[&5] - 1, 84 + 23);
        assert_eq!(s.problem.vehicles.len(), 80);
    }
}
