//! Directed road networks, time-dependent splits and sources, and junction
//! flow conservation.
//!
//! Every link is a directed pair of node ids scaled to unit length. Splits
//! `θ_a^{v,k}(t)` and sources `s_a^{v,k}(t)` are stored piecewise constant in
//! time and keyed by the outgoing link `a` (whose tail is the junction `v`)
//! and the commodity index `k`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = u32;

/// Split rows must sum to one within this tolerance.
pub const SPLIT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkId(pub usize);

#[derive(Clone, Debug)]
pub struct RoadNetwork {
    nodes: Vec<NodeId>,
    links: Vec<(NodeId, NodeId)>,
    in_links: BTreeMap<NodeId, Vec<LinkId>>,
    out_links: BTreeMap<NodeId, Vec<LinkId>>,
}

impl RoadNetwork {
    /// Builds a network after checking that every link joins two known,
    /// distinct nodes and that no ordered pair appears twice. Acyclicity and
    /// connectivity are checked by [`RoadNetwork::validate_acyclic`].
    pub fn new(nodes: Vec<NodeId>, links: Vec<(NodeId, NodeId)>) -> Result<Self> {
        let node_set: BTreeSet<NodeId> = nodes.iter().copied().collect();
        if node_set.len() != nodes.len() {
            return Err(Error::InvalidNetwork("duplicate node id".into()));
        }
        if nodes.is_empty() {
            return Err(Error::InvalidNetwork("no nodes".into()));
        }
        let mut seen = BTreeSet::new();
        let mut in_links: BTreeMap<NodeId, Vec<LinkId>> =
            nodes.iter().map(|&v| (v, Vec::new())).collect();
        let mut out_links = in_links.clone();
        for (idx, &(tail, head)) in links.iter().enumerate() {
            if !node_set.contains(&tail) || !node_set.contains(&head) {
                return Err(Error::InvalidNetwork(format!(
                    "link ({tail}, {head}) references an unknown node"
                )));
            }
            if tail == head {
                return Err(Error::InvalidNetwork(format!("self loop at node {tail}")));
            }
            if !seen.insert((tail, head)) {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate link ({tail}, {head})"
                )));
            }
            out_links.get_mut(&tail).unwrap().push(LinkId(idx));
            in_links.get_mut(&head).unwrap().push(LinkId(idx));
        }
        Ok(Self {
            nodes,
            links,
            in_links,
            out_links,
        })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn link_ids(&self) -> impl Iterator<Item = LinkId> + '_ {
        (0..self.links.len()).map(LinkId)
    }

    pub fn link(&self, id: LinkId) -> (NodeId, NodeId) {
        self.links[id.0]
    }

    pub fn tail(&self, id: LinkId) -> NodeId {
        self.links[id.0].0
    }

    pub fn head(&self, id: LinkId) -> NodeId {
        self.links[id.0].1
    }

    pub fn find_link(&self, tail: NodeId, head: NodeId) -> Option<LinkId> {
        self.links
            .iter()
            .position(|&l| l == (tail, head))
            .map(LinkId)
    }

    pub fn contains_node(&self, v: NodeId) -> bool {
        self.in_links.contains_key(&v)
    }

    pub fn in_links(&self, v: NodeId) -> &[LinkId] {
        self.in_links.get(&v).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn out_links(&self, v: NodeId) -> &[LinkId] {
        self.out_links.get(&v).map(Vec::as_slice).unwrap_or(&[])
    }

    fn is_weakly_connected(&self) -> bool {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([self.nodes[0]]);
        seen.insert(self.nodes[0]);
        while let Some(v) = queue.pop_front() {
            let neighbours = self
                .out_links(v)
                .iter()
                .map(|&a| self.head(a))
                .chain(self.in_links(v).iter().map(|&a| self.tail(a)));
            for w in neighbours {
                if seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen.len() == self.nodes.len()
    }

    /// Returns the links in an order where each link comes after every link
    /// that feeds its tail node.
    pub fn validate_acyclic(&self) -> Result<Vec<LinkId>> {
        if !self.is_weakly_connected() {
            return Err(Error::Disconnected);
        }
        let mut indegree: BTreeMap<NodeId, usize> = self
            .nodes
            .iter()
            .map(|&v| (v, self.in_links(v).len()))
            .collect();
        let mut ready: VecDeque<NodeId> = self
            .nodes
            .iter()
            .copied()
            .filter(|v| indegree[v] == 0)
            .collect();
        let mut order = Vec::with_capacity(self.links.len());
        let mut visited = 0;
        while let Some(v) = ready.pop_front() {
            visited += 1;
            for &a in self.out_links(v) {
                order.push(a);
                let h = self.head(a);
                let d = indegree.get_mut(&h).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push_back(h);
                }
            }
        }
        if visited < self.nodes.len() {
            return Err(Error::CycleDetected(self.find_cycle()));
        }
        Ok(order)
    }

    fn find_cycle(&self) -> Vec<NodeId> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state: BTreeMap<NodeId, u8> = self.nodes.iter().map(|&v| (v, 0)).collect();
        let mut stack: Vec<NodeId> = Vec::new();
        for &start in &self.nodes {
            if state[&start] != 0 {
                continue;
            }
            let mut iters: Vec<(NodeId, usize)> = vec![(start, 0)];
            state.insert(start, 1);
            stack.push(start);
            while let Some((v, pos)) = iters.last_mut() {
                let v = *v;
                let outs = self.out_links(v);
                if *pos < outs.len() {
                    let w = self.head(outs[*pos]);
                    *pos += 1;
                    match state[&w] {
                        0 => {
                            state.insert(w, 1);
                            stack.push(w);
                            iters.push((w, 0));
                        }
                        1 => {
                            let at = stack.iter().position(|&x| x == w).unwrap();
                            return stack[at..].to_vec();
                        }
                        _ => {}
                    }
                } else {
                    state.insert(v, 2);
                    stack.pop();
                    iters.pop();
                }
            }
        }
        Vec::new()
    }

    /// `reach[v]` is true when `destination` can be reached from `v`
    /// (trivially true for the destination itself).
    pub fn reaches(&self, destination: NodeId) -> BTreeMap<NodeId, bool> {
        let mut reach: BTreeMap<NodeId, bool> = self.nodes.iter().map(|&v| (v, false)).collect();
        let mut queue = VecDeque::new();
        if self.contains_node(destination) {
            reach.insert(destination, true);
            queue.push_back(destination);
        }
        while let Some(v) = queue.pop_front() {
            for &a in self.in_links(v) {
                let t = self.tail(a);
                if !reach[&t] {
                    reach.insert(t, true);
                    queue.push_back(t);
                }
            }
        }
        reach
    }

    /// Links through which `destination` is reachable.
    pub fn useful_links(&self, destination: NodeId) -> Vec<bool> {
        let reach = self.reaches(destination);
        self.links.iter().map(|&(_, h)| reach[&h]).collect()
    }

    /// Enumerates simple paths (as link sequences) from `origin` to
    /// `destination`, failing once more than `cap` paths exist.
    pub fn simple_paths(
        &self,
        origin: NodeId,
        destination: NodeId,
        cap: usize,
    ) -> Result<Vec<Vec<LinkId>>> {
        let reach = self.reaches(destination);
        let mut paths = Vec::new();
        let mut current = Vec::new();
        let mut on_path = BTreeSet::from([origin]);
        self.extend_paths(
            origin,
            destination,
            &reach,
            cap,
            &mut current,
            &mut on_path,
            &mut paths,
        )?;
        if paths.is_empty() {
            return Err(Error::NoPath {
                origin,
                destination,
            });
        }
        Ok(paths)
    }

    #[allow(clippy::too_many_arguments)]
    fn extend_paths(
        &self,
        v: NodeId,
        destination: NodeId,
        reach: &BTreeMap<NodeId, bool>,
        cap: usize,
        current: &mut Vec<LinkId>,
        on_path: &mut BTreeSet<NodeId>,
        paths: &mut Vec<Vec<LinkId>>,
    ) -> Result<()> {
        if v == destination {
            if paths.len() == cap {
                return Err(Error::TooManyPaths {
                    origin: current.first().map(|&a| self.tail(a)).unwrap_or(v),
                    destination,
                    cap,
                });
            }
            paths.push(current.clone());
            return Ok(());
        }
        for &a in self.out_links(v) {
            let h = self.head(a);
            if !reach[&h] || on_path.contains(&h) {
                continue;
            }
            current.push(a);
            on_path.insert(h);
            self.extend_paths(h, destination, reach, cap, current, on_path, paths)?;
            on_path.remove(&h);
            current.pop();
        }
        Ok(())
    }

    /// Computes `u_a^k = s_a^{v,k} + θ_a^{v,k} Σ_{ã ∈ A_in(v)} y_ã^k` for every
    /// outgoing link of `v`. `splits` and `sources` are aligned with
    /// [`RoadNetwork::out_links`].
    pub fn junction_inflows(
        &self,
        v: NodeId,
        commodity: usize,
        t: f64,
        outflows: &[f64],
        splits: &[f64],
        sources: &[f64],
    ) -> Result<Vec<f64>> {
        let outs = self.out_links(v);
        if splits.len() != outs.len() || sources.len() != outs.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} outgoing links at node {v}", outs.len()),
                found: format!("{} splits, {} sources", splits.len(), sources.len()),
            });
        }
        if outflows.len() != self.in_links(v).len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} incoming links at node {v}", self.in_links(v).len()),
                found: format!("{} outflows", outflows.len()),
            });
        }
        let sum: f64 = splits.iter().sum();
        if (sum - 1.0).abs() > SPLIT_TOLERANCE || splits.iter().any(|&s| !(0.0..=1.0).contains(&s))
        {
            return Err(Error::SplitRowInvalid {
                node: v,
                commodity,
                t,
                sum,
            });
        }
        let arriving: f64 = outflows.iter().sum();
        Ok(splits
            .iter()
            .zip(sources)
            .map(|(theta, s)| s + theta * arriving)
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserClass {
    Routed,
    NonRouted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commodity {
    pub class: UserClass,
    pub destination: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub t_start: f64,
    pub t_end: f64,
    pub value: f64,
}

/// A piecewise-constant function of time, zero outside its pieces.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PiecewiseConstant {
    pieces: Vec<Piece>,
}

impl PiecewiseConstant {
    pub fn new(mut pieces: Vec<Piece>) -> Result<Self> {
        pieces.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
        for p in &pieces {
            if !(p.t_start.is_finite() && p.t_end.is_finite() && p.value.is_finite())
                || p.t_end < p.t_start
            {
                return Err(Error::InvalidInput(format!("bad piece {p:?}")));
            }
        }
        for w in pieces.windows(2) {
            if w[1].t_start < w[0].t_end {
                return Err(Error::InvalidInput(format!(
                    "overlapping pieces {:?} and {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { pieces })
    }

    pub fn constant(value: f64, t_start: f64, t_end: f64) -> Self {
        Self {
            pieces: vec![Piece {
                t_start,
                t_end,
                value,
            }],
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.pieces
            .iter()
            .find(|p| p.t_start <= t && t < p.t_end)
            .map_or(0.0, |p| p.value)
    }

    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        self.pieces
            .iter()
            .map(|p| {
                let lo = p.t_start.max(t0);
                let hi = p.t_end.min(t1);
                if hi > lo {
                    p.value * (hi - lo)
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn average(&self, t0: f64, t1: f64) -> f64 {
        if let Some(p) = self.pieces.iter().find(|p| p.t_start <= t0 && t1 <= p.t_end) {
            return p.value;
        }
        if t1 > t0 {
            self.integral(t0, t1) / (t1 - t0)
        } else {
            self.value_at(t0)
        }
    }

    pub fn min_value(&self) -> f64 {
        self.pieces.iter().map(|p| p.value).fold(0.0, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.pieces.iter().map(|p| p.value).fold(0.0, f64::max)
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.pieces.iter().flat_map(|p| [p.t_start, p.t_end])
    }

    pub fn is_zero(&self) -> bool {
        self.pieces.iter().all(|p| p.value == 0.0 || p.t_end == p.t_start)
    }
}

/// Split fractions `θ_a^{v,k}` keyed by commodity and outgoing link.
#[derive(Clone, Debug, Default)]
pub struct SplitSchedule {
    entries: BTreeMap<(usize, LinkId), PiecewiseConstant>,
}

impl SplitSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, commodity: usize, link: LinkId, schedule: PiecewiseConstant) {
        self.entries.insert((commodity, link), schedule);
    }

    pub fn get(&self, commodity: usize, link: LinkId) -> Option<&PiecewiseConstant> {
        self.entries.get(&(commodity, link))
    }

    /// Step-averaged split row at node `v` over `[t0, t1]`, aligned with the
    /// node's outgoing links.
    pub fn row(&self, net: &RoadNetwork, v: NodeId, commodity: usize, t0: f64, t1: f64) -> Vec<f64> {
        net.out_links(v)
            .iter()
            .map(|&a| self.get(commodity, a).map_or(0.0, |p| p.average(t0, t1)))
            .collect()
    }

    /// Checks that the schedule is a member of Θ for the given commodities
    /// over `[0, horizon]` and fills in the trivial row at junctions with a
    /// single useful outgoing link.
    ///
    /// Rows are only required at junctions that can reach the commodity's
    /// destination (and are not the destination itself). Positive splits
    /// toward links that cannot reach the destination are rejected.
    pub fn validate(
        &mut self,
        net: &RoadNetwork,
        commodities: &[Commodity],
        horizon: f64,
    ) -> Result<()> {
        for (&(k, a), _) in self.entries.iter() {
            if k >= commodities.len() || a.0 >= net.link_count() {
                return Err(Error::InvalidInput(format!(
                    "split entry for unknown commodity {k} or link {}",
                    a.0
                )));
            }
        }
        for (k, commodity) in commodities.iter().enumerate() {
            let reach = net.reaches(commodity.destination);
            let useful = net.useful_links(commodity.destination);
            for &v in net.nodes() {
                let outs = net.out_links(v);
                if outs.is_empty() {
                    continue;
                }
                let active = v != commodity.destination && reach[&v];
                for &a in outs {
                    if !useful[a.0] || !active {
                        if let Some(p) = self.get(k, a) {
                            if p.pieces().iter().any(|piece| piece.value > 0.0)
                                && active
                            {
                                return Err(Error::RoutingInconsistent(format!(
                                    "commodity {k} is split onto link {:?} which cannot reach node {}",
                                    net.link(a),
                                    commodity.destination
                                )));
                            }
                        }
                    }
                }
                if !active || net.in_links(v).is_empty() {
                    continue;
                }
                let useful_out: Vec<LinkId> =
                    outs.iter().copied().filter(|a| useful[a.0]).collect();
                let specified = outs.iter().any(|&a| self.get(k, a).is_some());
                if !specified && useful_out.len() == 1 {
                    self.set(
                        k,
                        useful_out[0],
                        PiecewiseConstant::constant(1.0, f64::NEG_INFINITY.max(-1e300), 1e300),
                    );
                    continue;
                }
                let mut cuts: Vec<f64> = vec![0.0, horizon];
                for &a in outs {
                    if let Some(p) = self.get(k, a) {
                        cuts.extend(p.breakpoints().filter(|t| *t > 0.0 && *t < horizon));
                    }
                }
                cuts.sort_by(f64::total_cmp);
                cuts.dedup();
                for w in cuts.windows(2) {
                    if w[1] <= w[0] {
                        continue;
                    }
                    let mid = 0.5 * (w[0] + w[1]);
                    let row: Vec<f64> = outs
                        .iter()
                        .map(|&a| self.get(k, a).map_or(0.0, |p| p.value_at(mid)))
                        .collect();
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > SPLIT_TOLERANCE
                        || row.iter().any(|&x| !(0.0..=1.0).contains(&x))
                    {
                        return Err(Error::SplitRowInvalid {
                            node: v,
                            commodity: k,
                            t: mid,
                            sum,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Departure rates `s_a^{v,k}` keyed by commodity and outgoing link.
#[derive(Clone, Debug, Default)]
pub struct SourceSchedule {
    entries: BTreeMap<(usize, LinkId), PiecewiseConstant>,
}

impl SourceSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, commodity: usize, link: LinkId, schedule: PiecewiseConstant) {
        self.entries.insert((commodity, link), schedule);
    }

    pub fn get(&self, commodity: usize, link: LinkId) -> Option<&PiecewiseConstant> {
        self.entries.get(&(commodity, link))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, LinkId, &PiecewiseConstant)> {
        self.entries.iter().map(|(&(k, a), p)| (k, a, p))
    }

    pub fn row(&self, net: &RoadNetwork, v: NodeId, commodity: usize, t0: f64, t1: f64) -> Vec<f64> {
        net.out_links(v)
            .iter()
            .map(|&a| self.get(commodity, a).map_or(0.0, |p| p.average(t0, t1)))
            .collect()
    }

    /// Total injected mass of commodity `k` over `[t0, t1]`.
    pub fn total(&self, commodity: usize, t0: f64, t1: f64) -> f64 {
        self.entries
            .iter()
            .filter(|((k, _), _)| *k == commodity)
            .map(|(_, p)| p.integral(t0, t1))
            .sum()
    }

    pub fn validate(&self, net: &RoadNetwork, commodities: &[Commodity]) -> Result<()> {
        for (&(k, a), p) in &self.entries {
            let commodity = commodities.get(k).ok_or_else(|| {
                Error::InvalidInput(format!("source for unknown commodity {k}"))
            })?;
            if a.0 >= net.link_count() {
                return Err(Error::InvalidInput(format!("source on unknown link {}", a.0)));
            }
            if p.min_value() < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "negative source on link {:?}",
                    net.link(a)
                )));
            }
            if !p.is_zero() && !net.useful_links(commodity.destination)[a.0] {
                return Err(Error::RoutingInconsistent(format!(
                    "commodity {k} departs on link {:?} which cannot reach node {}",
                    net.link(a),
                    commodity.destination
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diamond() -> RoadNetwork {
        RoadNetwork::new(vec![1, 2, 3, 4], vec![(1, 2), (1, 3), (2, 4), (3, 4)]).unwrap()
    }

    #[test]
    fn single_link_order() {
        let net = RoadNetwork::new(vec![1, 2], vec![(1, 2)]).unwrap();
        assert_eq!(net.validate_acyclic().unwrap(), vec![LinkId(0)]);
    }

    /// All orderings of the diamond's links in which every link follows the
    /// links entering its tail, found by brute-force permutation.
    fn brute_force_orders(net: &RoadNetwork) -> Vec<Vec<LinkId>> {
        fn permute(rest: &mut Vec<LinkId>, acc: &mut Vec<LinkId>, out: &mut Vec<Vec<LinkId>>) {
            if rest.is_empty() {
                out.push(acc.clone());
                return;
            }
            for i in 0..rest.len() {
                let x = rest.remove(i);
                acc.push(x);
                permute(rest, acc, out);
                acc.pop();
                rest.insert(i, x);
            }
        }
        let mut all = Vec::new();
        permute(&mut net.link_ids().collect(), &mut Vec::new(), &mut all);
        all.into_iter()
            .filter(|order| {
                order.iter().enumerate().all(|(pos, &a)| {
                    net.in_links(net.tail(a))
                        .iter()
                        .all(|feeder| order[..pos].contains(feeder))
                })
            })
            .collect()
    }

    #[test]
    fn diamond_order_is_a_valid_topological_sort() {
        let net = diamond();
        let valid = brute_force_orders(&net);
        assert_eq!(valid.len(), 6);
        let order = net.validate_acyclic().unwrap();
        assert!(valid.contains(&order));
        // the fork links come first
        let mut head: Vec<LinkId> = order[..2].to_vec();
        head.sort();
        assert_eq!(head, vec![LinkId(0), LinkId(1)]);
    }

    #[test]
    fn triangle_is_cyclic() {
        let net = RoadNetwork::new(vec![1, 2, 3], vec![(1, 2), (2, 3), (3, 1)]).unwrap();
        match net.validate_acyclic() {
            Err(Error::CycleDetected(cycle)) => {
                let mut c = cycle.clone();
                c.sort();
                assert_eq!(c, vec![1, 2, 3]);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn disconnected_network_is_rejected() {
        let net = RoadNetwork::new(vec![1, 2, 3, 4], vec![(1, 2), (3, 4)]).unwrap();
        assert!(matches!(net.validate_acyclic(), Err(Error::Disconnected)));
    }

    #[test]
    fn malformed_links_are_rejected() {
        assert!(RoadNetwork::new(vec![1, 2], vec![(1, 3)]).is_err());
        assert!(RoadNetwork::new(vec![1, 2], vec![(1, 1)]).is_err());
        assert!(RoadNetwork::new(vec![1, 2], vec![(1, 2), (1, 2)]).is_err());
    }

    #[test]
    fn junction_examples() {
        let net = RoadNetwork::new(vec![1, 2, 3], vec![(1, 2), (2, 3)]).unwrap();
        let u = net.junction_inflows(2, 0, 0.0, &[3.0], &[1.0], &[0.0]).unwrap();
        assert_eq!(u, vec![3.0]);

        let net = RoadNetwork::new(vec![0, 1, 2, 3], vec![(0, 1), (1, 2), (1, 3)]).unwrap();
        let u = net
            .junction_inflows(1, 0, 0.0, &[4.0], &[0.5, 0.5], &[1.0, 0.0])
            .unwrap();
        assert_eq!(u, vec![3.0, 2.0]);
        let u = net
            .junction_inflows(1, 0, 0.0, &[0.0], &[0.5, 0.5], &[0.0, 0.0])
            .unwrap();
        assert_eq!(u, vec![0.0, 0.0]);
        assert!(matches!(
            net.junction_inflows(1, 0, 0.0, &[1.0], &[0.5, 0.6], &[0.0, 0.0]),
            Err(Error::SplitRowInvalid { .. })
        ));
    }

    #[test]
    fn piecewise_constant_average_is_exact() {
        let p = PiecewiseConstant::new(vec![
            Piece { t_start: 0.0, t_end: 1.0, value: 2.0 },
            Piece { t_start: 1.0, t_end: 3.0, value: 1.0 },
        ])
        .unwrap();
        assert_eq!(p.integral(0.5, 2.0), 2.0);
        assert_eq!(p.average(0.0, 2.0), 1.5);
        assert_eq!(p.value_at(3.5), 0.0);
        assert!(PiecewiseConstant::new(vec![
            Piece { t_start: 0.0, t_end: 2.0, value: 1.0 },
            Piece { t_start: 1.0, t_end: 3.0, value: 1.0 },
        ])
        .is_err());
    }

    #[test]
    fn split_validation_rejects_unreachable_routing() {
        // 1 -> 2 -> 3 and 1 -> 4 (dead end); destination 3
        let net =
            RoadNetwork::new(vec![0, 1, 2, 3, 4], vec![(1, 2), (2, 3), (1, 4), (0, 1)]).unwrap();
        let commodities = [Commodity { class: UserClass::Routed, destination: 3 }];
        let mut splits = SplitSchedule::new();
        splits.set(0, LinkId(0), PiecewiseConstant::constant(0.5, 0.0, 10.0));
        splits.set(0, LinkId(2), PiecewiseConstant::constant(0.5, 0.0, 10.0));
        assert!(matches!(
            splits.validate(&net, &commodities, 10.0),
            Err(Error::RoutingInconsistent(_))
        ));
        let mut splits = SplitSchedule::new();
        splits.validate(&net, &commodities, 10.0).unwrap();
        assert_eq!(splits.row(&net, 1, 0, 0.0, 1.0), vec![1.0, 0.0]);
    }

    #[test]
    fn split_validation_checks_row_sums_between_breakpoints() {
        let net = RoadNetwork::new(
            vec![0, 1, 2, 3, 4],
            vec![(1, 2), (1, 3), (2, 4), (3, 4), (0, 1)],
        )
        .unwrap();
        let commodities = [Commodity { class: UserClass::NonRouted, destination: 4 }];
        let mut splits = SplitSchedule::new();
        splits.set(0, LinkId(0), PiecewiseConstant::constant(0.5, 0.0, 10.0));
        splits.set(
            0,
            LinkId(1),
            PiecewiseConstant::new(vec![
                Piece { t_start: 0.0, t_end: 5.0, value: 0.5 },
                Piece { t_start: 5.0, t_end: 10.0, value: 0.4 },
            ])
            .unwrap(),
        );
        assert!(matches!(
            splits.validate(&net, &commodities, 10.0),
            Err(Error::SplitRowInvalid { .. })
        ));
    }

    /// Brute-force cycle search: a directed cycle exists iff some node can
    /// return to itself.
    fn has_cycle_brute(n: u32, links: &[(u32, u32)]) -> bool {
        (0..n).any(|start| {
            let mut seen = vec![false; n as usize];
            let mut stack: Vec<u32> = links
                .iter()
                .filter(|l| l.0 == start)
                .map(|l| l.1)
                .collect();
            while let Some(v) = stack.pop() {
                if v == start {
                    return true;
                }
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    stack.extend(links.iter().filter(|l| l.0 == v).map(|l| l.1));
                }
            }
            false
        })
    }

    fn arb_graph() -> impl Strategy<Value = (u32, Vec<(u32, u32)>)> {
        (2u32..=6).prop_flat_map(|n| {
            let pairs: Vec<(u32, u32)> = (0..n)
                .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
                .collect();
            let len = pairs.len();
            (Just(n), proptest::sample::subsequence(pairs, 1..=len.min(10)))
        })
    }

    proptest! {
        #[test]
        fn acyclicity_agrees_with_brute_force((n, links) in arb_graph()) {
            let net = RoadNetwork::new((0..n).collect(), links.clone()).unwrap();
            match net.validate_acyclic() {
                Ok(order) => {
                    prop_assert!(!has_cycle_brute(n, &links));
                    prop_assert_eq!(order.len(), links.len());
                    for (pos, &a) in order.iter().enumerate() {
                        for feeder in net.in_links(net.tail(a)) {
                            prop_assert!(order[..pos].contains(feeder));
                        }
                    }
                }
                Err(Error::CycleDetected(cycle)) => {
                    prop_assert!(has_cycle_brute(n, &links));
                    for w in 0..cycle.len() {
                        let next = cycle[(w + 1) % cycle.len()];
                        prop_assert!(links.contains(&(cycle[w], next)));
                    }
                }
                Err(Error::Disconnected) => {}
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }

        #[test]
        fn junction_conserves_flow(
            y in proptest::collection::vec(0.0f64..10.0, 1..4),
            raw in proptest::collection::vec(0.01f64..1.0, 1..4),
            s in proptest::collection::vec(0.0f64..5.0, 4),
        ) {
            let n_in = y.len() as u32;
            let n_out = raw.len() as u32;
            let mut nodes: Vec<u32> = (0..n_in + n_out + 1).collect();
            nodes.sort();
            let hub = n_in;
            let mut links: Vec<(u32, u32)> = (0..n_in).map(|i| (i, hub)).collect();
            links.extend((0..n_out).map(|j| (hub, hub + 1 + j)));
            let net = RoadNetwork::new(nodes, links).unwrap();
            let total: f64 = raw.iter().sum();
            let mut theta: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let fix: f64 = theta.iter().take(theta.len() - 1).sum();
            *theta.last_mut().unwrap() = 1.0 - fix;
            let sources = &s[..raw.len()];
            let u = net.junction_inflows(hub, 0, 0.0, &y, &theta, sources).unwrap();
            let lhs: f64 = u.iter().sum();
            let rhs: f64 = y.iter().sum::<f64>() + sources.iter().sum::<f64>();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }
    }
}
