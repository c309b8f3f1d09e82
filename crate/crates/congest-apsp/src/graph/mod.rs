//! Weighted graphs, the text file format, seeded random generators, and the
//! centralized oracles the protocol implementations are tested against.
//!
//! Weights are `f64` and all comparisons are exact; "unreachable" is always
//! the IEEE infinity sentinel (`INF`), never a large finite stand-in, so
//! sums along paths saturate instead of overflowing. Acceptance-grade
//! comparisons run on integer-valued weights, where every sum is exact.

mod oracle;

pub use oracle::{
    canonical_shortest_path, find_negative_cycle, oracle_apsp, oracle_apsp_with_paths,
    oracle_hop_counts, oracle_hop_bounded, DistanceMatrix, HopMatrix, NegativeCycleReport,
    PathOracle, HOP_INF,
};

use crate::rng::{stream, Purpose};
use rand::Rng;
use std::fmt::Write as _;

pub type NodeId = u32;
pub type Weight = f64;

/// Unreachable / "no estimate yet". Additions saturate: `INF + w == INF`.
pub const INF: Weight = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub tail: NodeId,
    pub head: NodeId,
    pub weight: Weight,
}

/// A finite weighted graph with nodes `0..n`.
///
/// Undirected graphs store one record per unordered pair and expand to two
/// arcs; all distance semantics below are in terms of arcs. Construction
/// enforces: ids in range, no self-loops, finite weights, parallel edges
/// collapsed to the minimum weight.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    directed: bool,
    edges: Vec<Edge>,
    out: Vec<Vec<(NodeId, Weight)>>,
    inn: Vec<Vec<(NodeId, Weight)>>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

impl Graph {
    pub fn new(n: usize, directed: bool, mut edges: Vec<Edge>) -> Result<Graph, GraphError> {
        if n == 0 {
            return Err(GraphError::Invalid("node count must be positive".into()));
        }
        for e in &mut edges {
            if e.tail as usize >= n || e.head as usize >= n {
                return Err(GraphError::Invalid(format!(
                    "edge ({}, {}) out of range for n = {n}",
                    e.tail, e.head
                )));
            }
            if e.tail == e.head {
                return Err(GraphError::Invalid(format!("self-loop at node {}", e.tail)));
            }
            if !e.weight.is_finite() {
                return Err(GraphError::Invalid(format!(
                    "non-finite weight on edge ({}, {})",
                    e.tail, e.head
                )));
            }
            if !directed && e.tail > e.head {
                std::mem::swap(&mut e.tail, &mut e.head);
            }
        }
        // Canonical order, then collapse parallel edges to the minimum weight.
        edges.sort_by(|a, b| (a.tail, a.head).cmp(&(b.tail, b.head)).then(a.weight.partial_cmp(&b.weight).unwrap()));
        edges.dedup_by(|next, kept| kept.tail == next.tail && kept.head == next.head);

        let mut out = vec![Vec::new(); n];
        let mut inn = vec![Vec::new(); n];
        for e in &edges {
            out[e.tail as usize].push((e.head, e.weight));
            inn[e.head as usize].push((e.tail, e.weight));
            if !directed {
                out[e.head as usize].push((e.tail, e.weight));
                inn[e.tail as usize].push((e.head, e.weight));
            }
        }
        for v in 0..n {
            out[v].sort_by_key(|&(u, _)| u);
            inn[v].sort_by_key(|&(u, _)| u);
        }
        Ok(Graph { n, directed, edges, out, inn })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    /// Stored edge records (one per unordered pair for undirected graphs).
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Out-arcs of `v`, sorted by head id. For undirected graphs this
    /// already contains both orientations.
    pub fn out_arcs(&self, v: NodeId) -> &[(NodeId, Weight)] {
        &self.out[v as usize]
    }

    /// In-arcs of `v` as (tail, weight), sorted by tail id.
    pub fn in_arcs(&self, v: NodeId) -> &[(NodeId, Weight)] {
        &self.inn[v as usize]
    }

    /// Weight of arc (x, v), if present.
    pub fn arc_weight(&self, x: NodeId, v: NodeId) -> Option<Weight> {
        let arcs = &self.inn[v as usize];
        arcs.binary_search_by_key(&x, |&(t, _)| t).ok().map(|i| arcs[i].1)
    }

    /// Total number of directed arcs.
    pub fn arc_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    pub fn min_weight(&self) -> Weight {
        self.edges.iter().map(|e| e.weight).fold(0.0, f64::min)
    }

    pub fn has_negative_weight(&self) -> bool {
        self.edges.iter().any(|e| e.weight < 0.0)
    }

    /// Connectivity of the underlying undirected skeleton. Returns the nodes
    /// not reachable from node 0 when edge directions are ignored.
    pub fn undirected_unreachable(&self) -> Vec<NodeId> {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0u32];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(u, _) in self.out_arcs(v).iter().chain(self.in_arcs(v)) {
                if !seen[u as usize] {
                    seen[u as usize] = true;
                    stack.push(u);
                }
            }
        }
        (0..self.n as u32).filter(|&v| !seen[v as usize]).collect()
    }
}

/// Parse the text format:
///
/// ```text
/// <n> <m> <directed|undirected>
/// <tail> <head> <weight>     (m lines)
/// ```
///
/// `#` starts a comment line; blank lines are ignored. Errors carry the
/// 1-based line number of the offending line.
pub fn load_graph(input: &str) -> Result<Graph, GraphError> {
    let mut header: Option<(usize, usize, bool)> = None;
    let mut edges = Vec::new();
    let mut edges_seen = 0usize;

    for (idx, raw) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match header {
            None => {
                if toks.len() != 3 {
                    return Err(GraphError::Parse {
                        line: line_no,
                        msg: "expected header `<n> <m> <directed|undirected>`".into(),
                    });
                }
                let n: usize = toks[0].parse().map_err(|_| GraphError::Parse {
                    line: line_no,
                    msg: format!("invalid node count `{}`", toks[0]),
                })?;
                let m: usize = toks[1].parse().map_err(|_| GraphError::Parse {
                    line: line_no,
                    msg: format!("invalid edge count `{}`", toks[1]),
                })?;
                let directed = match toks[2] {
                    "directed" => true,
                    "undirected" => false,
                    other => {
                        return Err(GraphError::Parse {
                            line: line_no,
                            msg: format!("expected `directed` or `undirected`, got `{other}`"),
                        })
                    }
                };
                if n == 0 {
                    return Err(GraphError::Parse {
                        line: line_no,
                        msg: "node count must be positive".into(),
                    });
                }
                header = Some((n, m, directed));
            }
            Some((n, m, _)) => {
                if toks.len() == 3 && (toks[2] == "directed" || toks[2] == "undirected") {
                    return Err(GraphError::Parse { line: line_no, msg: "duplicate header".into() });
                }
                if edges_seen == m {
                    return Err(GraphError::Parse {
                        line: line_no,
                        msg: format!("unexpected data after {m} edges"),
                    });
                }
                if toks.len() != 3 {
                    return Err(GraphError::Parse {
                        line: line_no,
                        msg: "expected edge line `<tail> <head> <weight>`".into(),
                    });
                }
                let tail: NodeId = toks[0].parse().map_err(|_| GraphError::Parse {
                    line: line_no,
                    msg: format!("invalid node id `{}`", toks[0]),
                })?;
                let head: NodeId = toks[1].parse().map_err(|_| GraphError::Parse {
                    line: line_no,
                    msg: format!("invalid node id `{}`", toks[1]),
                })?;
                let weight: f64 = toks[2].parse().map_err(|_| GraphError::Parse {
                    line: line_no,
                    msg: format!("invalid weight `{}`", toks[2]),
                })?;
                if !weight.is_finite() {
                    return Err(GraphError::Parse {
                        line: line_no,
                        msg: format!("weight `{}` is not finite", toks[2]),
                    });
                }
                if tail as usize >= n || head as usize >= n {
                    return Err(GraphError::Parse {
                        line: line_no,
                        msg: format!("node id out of range for n = {n}"),
                    });
                }
                if tail == head {
                    return Err(GraphError::Parse {
                        line: line_no,
                        msg: format!("self-loop at node {tail}"),
                    });
                }
                edges.push(Edge { tail, head, weight });
                edges_seen += 1;
            }
        }
    }

    let (n, m, directed) = header.ok_or(GraphError::Parse { line: 1, msg: "empty input".into() })?;
    if edges_seen != m {
        return Err(GraphError::Invalid(format!("header promised {m} edges, found {edges_seen}")));
    }
    Graph::new(n, directed, edges)
}

/// Serialize in the `load_graph` format (collapsed canonical edge order).
pub fn write_graph(g: &Graph) -> String {
    let mut s = String::new();
    let kind = if g.directed { "directed" } else { "undirected" };
    let _ = writeln!(s, "{} {} {}", g.n, g.edges.len(), kind);
    for e in &g.edges {
        let _ = writeln!(s, "{} {} {}", e.tail, e.head, e.weight);
    }
    s
}

/// Erdos-Renyi style generator: every ordered pair (u, v), u != v, carries
/// an arc independently with probability `p` (unordered pairs when
/// `directed` is false), weight uniform in `[w_low, w_high]`. Identical
/// arguments always produce the identical graph.
pub fn generate_random_graph(
    n: usize,
    p: f64,
    w_low: f64,
    w_high: f64,
    directed: bool,
    seed: u64,
) -> Graph {
    generate_with(n, p, directed, seed, |rng| rng.gen_range(w_low..=w_high))
}

/// Same edge model with integer-valued weights, uniform on
/// `[w_low, w_high]`. Integer weights keep every path sum exact in `f64`,
/// which the exact-equality test suites rely on.
pub fn generate_random_int_graph(
    n: usize,
    p: f64,
    w_low: i64,
    w_high: i64,
    directed: bool,
    seed: u64,
) -> Graph {
    generate_with(n, p, directed, seed, |rng| rng.gen_range(w_low..=w_high) as f64)
}

fn generate_with(
    n: usize,
    p: f64,
    directed: bool,
    seed: u64,
    mut draw: impl FnMut(&mut rand_chacha::ChaCha8Rng) -> f64,
) -> Graph {
    assert!(n >= 1, "need at least one node");
    assert!((0.0..=1.0).contains(&p), "edge probability must be in [0, 1]");
    let mut rng = stream(seed, Purpose::GraphGen, 0);
    let mut edges = Vec::new();
    for u in 0..n as NodeId {
        for v in 0..n as NodeId {
            if u == v || (!directed && v < u) {
                continue;
            }
            if rng.gen_bool(p) {
                edges.push(Edge { tail: u, head: v, weight: draw(&mut rng) });
            }
        }
    }
    Graph::new(n, directed, edges).expect("generator emits valid edges")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(n: usize, directed: bool, arcs: &[(u32, u32, f64)]) -> Graph {
        let edges =
            arcs.iter().map(|&(t, h, w)| Edge { tail: t, head: h, weight: w }).collect();
        Graph::new(n, directed, edges).unwrap()
    }

    #[test]
    fn load_basic() {
        let gr = load_graph("3 2 directed\n0 1 2.5\n1 2 1.0\n").unwrap();
        assert_eq!(gr.n(), 3);
        assert!(gr.directed());
        assert_eq!(gr.arc_weight(0, 1), Some(2.5));
        assert_eq!(gr.arc_weight(1, 2), Some(1.0));
        assert_eq!(gr.arc_weight(1, 0), None);
    }

    #[test]
    fn load_comments_and_blanks() {
        let gr = load_graph("# header comment\n\n2 1 undirected\n# edge\n0 1 4\n").unwrap();
        assert_eq!(gr.arc_weight(0, 1), Some(4.0));
        assert_eq!(gr.arc_weight(1, 0), Some(4.0));
    }

    #[test]
    fn load_rejects_out_of_range_id() {
        let err = load_graph("2 1 directed\n0 2 1.0\n").unwrap_err();
        assert_eq!(
            err,
            GraphError::Parse { line: 2, msg: "node id out of range for n = 2".into() }
        );
    }

    #[test]
    fn load_rejects_bad_weight_and_duplicate_header() {
        assert!(matches!(
            load_graph("2 1 directed\n0 1 abc\n"),
            Err(GraphError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            load_graph("2 1 directed\n2 1 directed\n"),
            Err(GraphError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            load_graph("2 1 directed\n0 1 inf\n"),
            Err(GraphError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn load_rejects_trailing_data_and_short_input() {
        assert!(matches!(
            load_graph("2 1 directed\n0 1 1\n1 0 2\n"),
            Err(GraphError::Parse { line: 3, .. })
        ));
        assert!(matches!(load_graph("2 2 directed\n0 1 1\n"), Err(GraphError::Invalid(_))));
        assert!(matches!(load_graph("   \n# only comments\n"), Err(GraphError::Parse { .. })));
    }

    #[test]
    fn load_rejects_self_loop_and_zero_nodes() {
        assert!(matches!(
            load_graph("2 1 directed\n1 1 1.0\n"),
            Err(GraphError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            load_graph("0 0 directed\n"),
            Err(GraphError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn parallel_edges_collapse_to_minimum() {
        let gr = load_graph("2 3 directed\n0 1 5\n0 1 2\n0 1 9\n").unwrap();
        assert_eq!(gr.edges().len(), 1);
        assert_eq!(gr.arc_weight(0, 1), Some(2.0));
        // Undirected: (1,0) and (0,1) are the same pair.
        let gu = load_graph("2 2 undirected\n0 1 5\n1 0 3\n").unwrap();
        assert_eq!(gu.edges().len(), 1);
        assert_eq!(gu.arc_weight(0, 1), Some(3.0));
    }

    #[test]
    fn generator_complete_two_nodes() {
        let gr = generate_random_graph(2, 1.0, 3.0, 3.0, true, 7);
        assert_eq!(gr.arc_weight(0, 1), Some(3.0));
        assert_eq!(gr.arc_weight(1, 0), Some(3.0));
        assert_eq!(gr.arc_count(), 2);
    }

    #[test]
    fn generator_is_deterministic() {
        let a = generate_random_graph(24, 0.3, 0.0, 10.0, true, 123);
        let b = generate_random_graph(24, 0.3, 0.0, 10.0, true, 123);
        assert_eq!(a.edges(), b.edges());
        let c = generate_random_graph(24, 0.3, 0.0, 10.0, true, 124);
        assert_ne!(a.edges(), c.edges());
    }

    #[test]
    fn generator_int_weights_are_integers() {
        let gr = generate_random_int_graph(16, 0.5, -5, 20, true, 9);
        assert!(!gr.edges().is_empty());
        for e in gr.edges() {
            assert_eq!(e.weight, e.weight.trunc());
            assert!((-5.0..=20.0).contains(&e.weight));
        }
    }

    #[test]
    fn undirected_expands_to_both_arcs() {
        let gr = g(3, false, &[(0, 1, 2.0), (1, 2, 3.0)]);
        assert_eq!(gr.arc_count(), 4);
        assert_eq!(gr.arc_weight(1, 0), Some(2.0));
        assert_eq!(gr.out_arcs(1), &[(0, 2.0), (2, 3.0)]);
    }

    #[test]
    fn unreachable_listing() {
        let gr = g(4, true, &[(0, 1, 1.0), (3, 2, 1.0)]);
        assert_eq!(gr.undirected_unreachable(), vec![2, 3]);
        let conn = g(2, true, &[(1, 0, 1.0)]);
        assert!(conn.undirected_unreachable().is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn write_load_round_trip(n in 1usize..12, directed: bool, seed: u64, p in 0.0f64..1.0) {
            let gr = generate_random_int_graph(n, p, 0, 50, directed, seed);
            let back = load_graph(&write_graph(&gr)).unwrap();
            prop_assert_eq!(gr.n(), back.n());
            prop_assert_eq!(gr.directed(), back.directed());
            prop_assert_eq!(gr.edges(), back.edges());
        }
    }
}
