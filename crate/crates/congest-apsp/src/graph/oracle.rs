//! Centralized reference solvers. Every distributed run in the test suites
//! is judged against these; they share no code with the simulator side.

use super::{Graph, NodeId, Weight, INF};

/// Dense n x n matrix of extended-real distances, row = source.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<Weight>,
}

impl DistanceMatrix {
    pub fn filled(n: usize, value: Weight) -> DistanceMatrix {
        DistanceMatrix { n, d: vec![value; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, u: NodeId, v: NodeId) -> Weight {
        self.d[u as usize * self.n + v as usize]
    }

    pub fn set(&mut self, u: NodeId, v: NodeId, w: Weight) {
        self.d[u as usize * self.n + v as usize] = w;
    }

    pub fn row(&self, u: NodeId) -> &[Weight] {
        &self.d[u as usize * self.n..(u as usize + 1) * self.n]
    }
}

/// Hop sentinel for "no path".
pub const HOP_INF: u32 = u32::MAX;

/// Edge counts of canonical shortest paths: entry (u, v) is the number of
/// edges on a minimum-weight, then minimum-edge-count, path from u to v.
#[derive(Debug, Clone, PartialEq)]
pub struct HopMatrix {
    n: usize,
    h: Vec<u32>,
}

impl HopMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, u: NodeId, v: NodeId) -> u32 {
        self.h[u as usize * self.n + v as usize]
    }
}

/// Some negative-weight cycle, as a closed node list (first == last).
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeCycleReport {
    pub cycle: Vec<NodeId>,
}

impl std::fmt::Display for NegativeCycleReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let ids: Vec<String> = self.cycle.iter().map(|v| v.to_string()).collect();
        write!(f, "negative cycle ({})", ids.join(", "))
    }
}

/// Floyd-Warshall solution with first-hop data for path reconstruction.
pub struct PathOracle {
    pub dist: DistanceMatrix,
    /// next[u*n+v] = first node after u on the realized u -> v path.
    next: Vec<NodeId>,
}

impl PathOracle {
    /// The realized shortest path u -> v, inclusive of both endpoints.
    pub fn path(&self, u: NodeId, v: NodeId) -> Option<Vec<NodeId>> {
        if !self.dist.get(u, v).is_finite() {
            return None;
        }
        let n = self.dist.n();
        let mut path = vec![u];
        let mut cur = u;
        while cur != v {
            cur = self.next[cur as usize * n + v as usize];
            path.push(cur);
            assert!(path.len() <= n, "path reconstruction cycled");
        }
        Some(path)
    }
}

/// Exact all-pairs distances, or a witness cycle when any negative-weight
/// cycle exists anywhere in the graph.
pub fn oracle_apsp(g: &Graph) -> Result<DistanceMatrix, NegativeCycleReport> {
    oracle_apsp_with_paths(g).map(|o| o.dist)
}

pub fn oracle_apsp_with_paths(g: &Graph) -> Result<PathOracle, NegativeCycleReport> {
    if let Some(cycle) = find_negative_cycle(g) {
        return Err(NegativeCycleReport { cycle });
    }
    let n = g.n();
    let mut dist = DistanceMatrix::filled(n, INF);
    let mut next: Vec<NodeId> = vec![0; n * n];
    for v in 0..n as NodeId {
        dist.set(v, v, 0.0);
        next[v as usize * n + v as usize] = v;
    }
    for v in 0..n as NodeId {
        for &(u, w) in g.out_arcs(v) {
            dist.set(v, u, w);
            next[v as usize * n + u as usize] = u;
        }
    }
    for k in 0..n {
        for u in 0..n {
            let duk = dist.d[u * n + k];
            if duk == INF {
                continue;
            }
            for v in 0..n {
                let via = duk + dist.d[k * n + v];
                if via < dist.d[u * n + v] {
                    dist.d[u * n + v] = via;
                    next[u * n + v] = next[u * n + k];
                }
            }
        }
    }
    Ok(PathOracle { dist, next })
}

/// Locate one simple negative cycle, if any exists. Centralized relaxation
/// from a virtual source at distance 0 to every node; a relaxation still
/// firing in pass n proves a cycle, and walking the predecessor chain n
/// steps from the relaxed node lands inside it.
pub fn find_negative_cycle(g: &Graph) -> Option<Vec<NodeId>> {
    let n = g.n();
    let mut dist = vec![0.0f64; n];
    let mut pred: Vec<NodeId> = vec![u32::MAX; n];
    let mut late_relax = None;
    for pass in 0..n {
        let mut any = false;
        for v in 0..n as NodeId {
            for &(x, w) in g.in_arcs(v) {
                let cand = dist[x as usize] + w;
                if cand < dist[v as usize] {
                    dist[v as usize] = cand;
                    pred[v as usize] = x;
                    any = true;
                    if pass == n - 1 {
                        late_relax = Some(v);
                    }
                }
            }
        }
        if !any {
            return None;
        }
    }
    let mut inside = late_relax.expect("pass n relaxed some node");
    for _ in 0..n {
        inside = pred[inside as usize];
    }
    let mut back = vec![inside];
    let mut cur = pred[inside as usize];
    while cur != inside {
        back.push(cur);
        cur = pred[cur as usize];
    }
    back.push(inside);
    back.reverse(); // predecessor order is tail-ward; arcs run the other way
    let total: Weight =
        back.windows(2).map(|p| g.arc_weight(p[0], p[1]).expect("cycle follows arcs")).sum();
    assert!(total < 0.0, "predecessor cycle has weight {total}");
    Some(back)
}

/// Minimum weight over walks of at most `h` edges, per source. For
/// non-negative weights this equals the minimum over simple paths of at
/// most `h` edges. Sums associate from the source outward, matching how a
/// relaxation process accumulates them.
pub fn oracle_hop_bounded(g: &Graph, h: u32) -> DistanceMatrix {
    let n = g.n();
    let mut out = DistanceMatrix::filled(n, INF);
    let mut cur = vec![INF; n];
    let mut next = vec![INF; n];
    for s in 0..n as NodeId {
        cur.iter_mut().for_each(|x| *x = INF);
        cur[s as usize] = 0.0;
        for _ in 0..h.min(n as u32 * 2) {
            next.copy_from_slice(&cur);
            let mut changed = false;
            for v in 0..n as NodeId {
                for &(x, w) in g.in_arcs(v) {
                    let cand = cur[x as usize] + w;
                    if cand < next[v as usize] {
                        next[v as usize] = cand;
                        changed = true;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
            if !changed && g.min_weight() >= 0.0 {
                break;
            }
        }
        for v in 0..n {
            out.d[s as usize * n + v] = cur[v];
        }
    }
    out
}

/// Edge counts of canonical (minimum-weight, then fewest-edges) shortest
/// paths, computed per source by breadth-first search over the arcs that
/// are tight for `dist`.
pub fn oracle_hop_counts(g: &Graph, dist: &DistanceMatrix) -> HopMatrix {
    let n = g.n();
    let mut h = vec![HOP_INF; n * n];
    let mut queue = std::collections::VecDeque::new();
    for s in 0..n as NodeId {
        let row = dist.row(s);
        let hrow = &mut h[s as usize * n..(s as usize + 1) * n];
        hrow[s as usize] = 0;
        queue.clear();
        queue.push_back(s);
        while let Some(x) = queue.pop_front() {
            for &(v, w) in g.out_arcs(x) {
                // Tight arc: extends a shortest path to x into one to v.
                if row[x as usize] + w == row[v as usize] && hrow[v as usize] == HOP_INF {
                    hrow[v as usize] = hrow[x as usize] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    HopMatrix { n, h }
}

/// The canonical shortest path u -> v: minimum weight, then fewest edges,
/// then lexicographically smallest node sequence. Greedy on exact weight
/// and hop residuals; intended for integer-valued weights, where tightness
/// comparisons are exact.
pub fn canonical_shortest_path(
    g: &Graph,
    dist: &DistanceMatrix,
    hops: &HopMatrix,
    u: NodeId,
    v: NodeId,
) -> Option<Vec<NodeId>> {
    if !dist.get(u, v).is_finite() {
        return None;
    }
    let mut path = vec![u];
    let mut cur = u;
    let mut rem_w = dist.get(u, v);
    let mut rem_h = hops.get(u, v);
    while cur != v {
        let step = g
            .out_arcs(cur)
            .iter()
            .find(|&&(x, w)| w + dist.get(x, v) == rem_w && hops.get(x, v) == rem_h - 1);
        let &(x, w) = step.expect("hop matrix admits a tight continuation");
        let _ = w;
        path.push(x);
        rem_w = dist.get(x, v); // residual from the matrix, not by subtraction
        rem_h -= 1;
        cur = x;
    }
    Some(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_random_int_graph, Edge};
    use proptest::prelude::*;

    fn g(n: usize, directed: bool, arcs: &[(u32, u32, f64)]) -> Graph {
        let edges =
            arcs.iter().map(|&(t, h, w)| Edge { tail: t, head: h, weight: w }).collect();
        Graph::new(n, directed, edges).unwrap()
    }

    /// Independent brute-force oracle: enumerate all simple paths (and, for
    /// cycle detection, all simple cycles). Only viable for tiny n, which is
    /// exactly its role.
    mod brute {
        use super::*;

        pub fn apsp(g: &Graph) -> Result<DistanceMatrix, ()> {
            let n = g.n();
            if has_negative_cycle(g) {
                return Err(());
            }
            let mut d = DistanceMatrix::filled(n, INF);
            for s in 0..n as NodeId {
                let mut visited = vec![false; n];
                visited[s as usize] = true;
                dfs(g, s, 0.0, &mut visited, &mut |v, w| {
                    if w < d.get(s, v) {
                        d.set(s, v, w);
                    }
                });
                d.set(s, s, 0.0);
            }
            Ok(d)
        }

        fn dfs(
            g: &Graph,
            at: NodeId,
            w: Weight,
            visited: &mut Vec<bool>,
            record: &mut impl FnMut(NodeId, Weight),
        ) {
            record(at, w);
            for &(nx, ew) in g.out_arcs(at) {
                if !visited[nx as usize] {
                    visited[nx as usize] = true;
                    dfs(g, nx, w + ew, visited, record);
                    visited[nx as usize] = false;
                }
            }
        }

        pub fn has_negative_cycle(g: &Graph) -> bool {
            // Every simple cycle shows up as a simple path u ~> v plus a
            // closing arc (v, u).
            for s in 0..g.n() as NodeId {
                let mut visited = vec![false; g.n()];
                visited[s as usize] = true;
                let mut found = false;
                dfs_cycles(g, s, s, 0.0, &mut visited, &mut found);
                if found {
                    return true;
                }
            }
            false
        }

        fn dfs_cycles(
            g: &Graph,
            start: NodeId,
            at: NodeId,
            w: Weight,
            visited: &mut Vec<bool>,
            found: &mut bool,
        ) {
            if *found {
                return;
            }
            if let Some(back) = g.arc_weight(at, start) {
                if w + back < 0.0 {
                    *found = true;
                    return;
                }
            }
            for &(nx, ew) in g.out_arcs(at) {
                if !visited[nx as usize] {
                    visited[nx as usize] = true;
                    dfs_cycles(g, start, nx, w + ew, visited, found);
                    visited[nx as usize] = false;
                }
            }
        }
    }

    #[test]
    fn apsp_triangle() {
        let gr = g(3, true, &[(0, 1, 1.0), (1, 2, 2.0), (0, 2, 4.0)]);
        let d = oracle_apsp(&gr).unwrap();
        assert_eq!(d.get(0, 2), 3.0);
        assert_eq!(d.get(0, 1), 1.0);
        assert_eq!(d.get(2, 0), INF);
        assert_eq!(d.get(1, 1), 0.0);
    }

    #[test]
    fn apsp_reports_negative_cycle() {
        let gr = g(2, true, &[(0, 1, 1.0), (1, 0, -2.0)]);
        let report = oracle_apsp(&gr).unwrap_err();
        assert_eq!(report.cycle.first(), report.cycle.last());
        let w: f64 = report
            .cycle
            .windows(2)
            .map(|p| gr.arc_weight(p[0], p[1]).unwrap())
            .sum();
        assert!(w < 0.0);
        assert_eq!(report.to_string(), format!("negative cycle ({})", {
            let ids: Vec<String> = report.cycle.iter().map(|v| v.to_string()).collect();
            ids.join(", ")
        }));
    }

    #[test]
    fn negative_weights_without_cycle_are_exact() {
        let gr = g(4, true, &[(0, 1, 5.0), (1, 2, -3.0), (0, 2, 4.0), (2, 3, 2.0)]);
        let d = oracle_apsp(&gr).unwrap();
        assert_eq!(d.get(0, 2), 2.0);
        assert_eq!(d.get(0, 3), 4.0);
    }

    #[test]
    fn hop_bounded_tightens_with_h() {
        let gr = g(3, true, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 3.0)]);
        let h1 = oracle_hop_bounded(&gr, 1);
        let h2 = oracle_hop_bounded(&gr, 2);
        assert_eq!(h1.get(0, 2), 3.0);
        assert_eq!(h2.get(0, 2), 2.0);
        assert_eq!(h1.get(0, 0), 0.0);
        let h0 = oracle_hop_bounded(&gr, 0);
        assert_eq!(h0.get(0, 1), INF);
    }

    #[test]
    fn hop_counts_prefer_fewest_edges() {
        // Two minimum-weight routes 0 -> 3 (both weight 4): direct arc and a
        // two-edge detour. The canonical hop count is 1.
        let gr = g(4, true, &[(0, 3, 4.0), (0, 1, 2.0), (1, 3, 2.0), (1, 2, 7.0)]);
        let d = oracle_apsp(&gr).unwrap();
        let h = oracle_hop_counts(&gr, &d);
        assert_eq!(h.get(0, 3), 1);
        assert_eq!(h.get(0, 1), 1);
        assert_eq!(h.get(0, 2), 2);
        assert_eq!(h.get(0, 0), 0);
        assert_eq!(h.get(3, 0), HOP_INF);
    }

    #[test]
    fn hop_counts_survive_zero_weight_cycles() {
        let gr = g(3, true, &[(0, 1, 0.0), (1, 0, 0.0), (1, 2, 1.0)]);
        let d = oracle_apsp(&gr).unwrap();
        let h = oracle_hop_counts(&gr, &d);
        assert_eq!(h.get(0, 2), 2);
        assert_eq!(h.get(0, 1), 1);
        assert_eq!(h.get(1, 0), 1);
    }

    #[test]
    fn canonical_path_breaks_ties_lexicographically() {
        // Weight-2, two-edge routes from 0 to 3 via 1 or via 2.
        let gr = g(4, true, &[(0, 1, 1.0), (0, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0)]);
        let d = oracle_apsp(&gr).unwrap();
        let h = oracle_hop_counts(&gr, &d);
        assert_eq!(canonical_shortest_path(&gr, &d, &h, 0, 3).unwrap(), vec![0, 1, 3]);
        assert_eq!(canonical_shortest_path(&gr, &d, &h, 0, 0).unwrap(), vec![0]);
        assert_eq!(canonical_shortest_path(&gr, &d, &h, 3, 0), None);
    }

    #[test]
    fn path_oracle_reconstructs_realized_paths() {
        let gr = g(4, true, &[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 1.0), (0, 3, 9.0)]);
        let o = oracle_apsp_with_paths(&gr).unwrap();
        let p = o.path(0, 3).unwrap();
        assert_eq!(p, vec![0, 1, 2, 3]);
        assert_eq!(o.path(3, 1), None);
    }

    #[test]
    fn matches_brute_force_on_small_graphs() {
        for seed in 0..40u64 {
            let gr = generate_random_int_graph(6, 0.45, 0, 9, true, seed);
            let expect = brute::apsp(&gr).unwrap();
            let got = oracle_apsp(&gr).unwrap();
            assert_eq!(expect, got, "seed {seed}");
        }
    }

    #[test]
    fn matches_brute_force_with_negative_weights() {
        let mut cycles = 0;
        for seed in 100..160u64 {
            let gr = generate_random_int_graph(5, 0.4, -4, 9, true, seed);
            match (brute::apsp(&gr), oracle_apsp(&gr)) {
                (Ok(expect), Ok(got)) => assert_eq!(expect, got, "seed {seed}"),
                (Err(()), Err(report)) => {
                    cycles += 1;
                    let w: f64 = report
                        .cycle
                        .windows(2)
                        .map(|p| gr.arc_weight(p[0], p[1]).unwrap())
                        .sum();
                    assert!(w < 0.0, "seed {seed}: witness cycle weight {w}");
                }
                (b, o) => panic!("seed {seed}: oracles disagree: brute={b:?} fw={:?}", o.is_ok()),
            }
        }
        assert!(cycles > 0, "weight range never produced a negative cycle");
    }

    #[test]
    fn full_depth_hop_bound_equals_apsp() {
        for seed in 0..20u64 {
            let gr = generate_random_int_graph(24, 0.15, 0, 50, true, seed);
            let full = oracle_apsp(&gr).unwrap();
            let capped = oracle_hop_bounded(&gr, 23);
            assert_eq!(full, capped, "seed {seed}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn relabeling_commutes_with_apsp(seed in 0u64..5000, n in 2usize..10) {
            let gr = generate_random_int_graph(n, 0.4, 0, 20, true, seed);
            // Reverse relabeling pi(v) = n-1-v.
            let pi = |v: NodeId| (n as u32 - 1) - v;
            let edges = gr
                .edges()
                .iter()
                .map(|e| Edge { tail: pi(e.tail), head: pi(e.head), weight: e.weight })
                .collect();
            let gp = Graph::new(n, true, edges).unwrap();
            let d = oracle_apsp(&gr).unwrap();
            let dp = oracle_apsp(&gp).unwrap();
            for u in 0..n as NodeId {
                for v in 0..n as NodeId {
                    prop_assert_eq!(d.get(u, v), dp.get(pi(u), pi(v)));
                }
            }
        }

        #[test]
        fn hop_bound_is_monotone_and_dominates_apsp(seed in 0u64..5000, n in 2usize..12, h in 0u32..6) {
            let gr = generate_random_int_graph(n, 0.3, 0, 20, true, seed);
            let full = oracle_apsp(&gr).unwrap();
            let a = oracle_hop_bounded(&gr, h);
            let b = oracle_hop_bounded(&gr, h + 1);
            for u in 0..n as NodeId {
                for v in 0..n as NodeId {
                    prop_assert!(a.get(u, v) >= b.get(u, v));
                    prop_assert!(b.get(u, v) >= full.get(u, v));
                }
            }
        }

        #[test]
        fn triangle_inequality_and_diagonal(seed in 0u64..5000, n in 2usize..10) {
            let gr = generate_random_int_graph(n, 0.4, 0, 20, true, seed);
            let d = oracle_apsp(&gr).unwrap();
            for u in 0..n as NodeId {
                prop_assert_eq!(d.get(u, u), 0.0);
                for v in 0..n as NodeId {
                    for w in 0..n as NodeId {
                        prop_assert!(d.get(u, w) <= d.get(u, v) + d.get(v, w));
                    }
                }
            }
        }

        #[test]
        fn canonical_paths_realize_dist_and_hops(seed in 0u64..5000, n in 2usize..10) {
            let gr = generate_random_int_graph(n, 0.35, 0, 9, true, seed);
            let d = oracle_apsp(&gr).unwrap();
            let h = oracle_hop_counts(&gr, &d);
            for u in 0..n as NodeId {
                for v in 0..n as NodeId {
                    if d.get(u, v).is_finite() {
                        let p = canonical_shortest_path(&gr, &d, &h, u, v).unwrap();
                        let w: f64 = p.windows(2).map(|e| gr.arc_weight(e[0], e[1]).unwrap()).sum();
                        prop_assert_eq!(w, d.get(u, v));
                        prop_assert_eq!((p.len() - 1) as u32, h.get(u, v));
                    } else {
                        prop_assert_eq!(h.get(u, v), HOP_INF);
                    }
                }
            }
        }
    }
}
