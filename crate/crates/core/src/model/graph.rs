//! Parent sets and directed graphs over atoms.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use super::Model;

/// Directed graph over atom names. Edge `(a, b)` means `a -> b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalGraph {
    nodes: Vec<String>,
    edges: BTreeSet<(usize, usize)>,
}

impl CausalGraph {
    pub fn new(nodes: Vec<String>, edges: BTreeSet<(usize, usize)>) -> Self {
        debug_assert!(edges.iter().all(|&(a, b)| a < nodes.len() && b < nodes.len()));
        CausalGraph { nodes, edges }
    }

    /// Graph with an edge `p -> i` for every `p` in `parents[i]`.
    pub fn from_parents(nodes: Vec<String>, parents: &[BTreeSet<usize>]) -> Self {
        let edges = parents.iter().enumerate().flat_map(|(i, ps)| ps.iter().map(move |&p| (p, i))).collect();
        CausalGraph::new(nodes, edges)
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn has_self_loop(&self, node: usize) -> bool {
        self.has_edge(node, node)
    }

    pub fn parents(&self, node: usize) -> BTreeSet<usize> {
        self.edges.iter().filter(|e| e.1 == node).map(|e| e.0).collect()
    }

    /// Named edge list, sorted.
    pub fn named_edges(&self) -> Vec<(&str, &str)> {
        self.edges.iter().map(|&(a, b)| (self.nodes[a].as_str(), self.nodes[b].as_str())).collect()
    }

    /// Removes every edge pointing into a node of `targets`, self-loops included.
    pub fn without_incoming(&self, targets: &BTreeSet<usize>) -> CausalGraph {
        let edges = self.edges.iter().copied().filter(|(_, b)| !targets.contains(b)).collect();
        CausalGraph::new(self.nodes.clone(), edges)
    }

    /// Kahn's algorithm; self-loops are ignored. `None` if a directed cycle
    /// through two or more nodes exists.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut children = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            if a != b {
                indegree[b] += 1;
                children[a].push(b);
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &c in &children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }
}

impl Serialize for CausalGraph {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            nodes: &'a [String],
            edges: Vec<(&'a str, &'a str)>,
        }
        Repr { nodes: &self.nodes, edges: self.named_edges() }.serialize(s)
    }
}

/// `pa(a)`: atoms with a member referenced by the right-hand side of some
/// member of `a`. Indexed by atom.
pub fn structural_parents(m: &Model) -> Vec<BTreeSet<usize>> {
    let layout = m.layout();
    layout
        .atoms()
        .iter()
        .map(|a| layout.atoms_referenced(a.members.iter().map(|&v| &m.rhs()[v])))
        .collect()
}

pub fn graph_of(m: &Model) -> CausalGraph {
    let nodes = m.atoms().iter().map(|a| a.name.clone()).collect();
    CausalGraph::from_parents(nodes, &structural_parents(m))
}

/// An edge whose syntactic dependence never showed up numerically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VacuousEdge {
    pub from: String,
    pub to: String,
}

/// Flags edges `a -> b` where perturbing members of `a` left every
/// right-hand side of `b` unchanged at 20 random states. This is a lint: an
/// edge can be flagged by bad luck or by a locally flat function.
pub fn vacuous_dependencies(m: &Model, seed: u64) -> Vec<VacuousEdge> {
    const STATES: usize = 20;
    let Ok(field) = m.compile() else {
        return Vec::new();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = m.vars().len();
    let states: Vec<Vec<f64>> = (0..STATES)
        .map(|_| {
            m.vars()
                .iter()
                .map(|v| {
                    let (lo, hi) = v.domain.clip_box(v.init, 5.0);
                    if lo < hi {
                        rng.random_range(lo..hi)
                    } else {
                        lo
                    }
                })
                .collect()
        })
        .collect();
    let deltas: Vec<f64> = (0..STATES).map(|_| rng.random_range(0.1..1.0)).collect();
    let atoms = m.atoms();
    let mut out = Vec::new();
    for &(from, to) in graph_of(m).edges() {
        let mut changed = false;
        'search: for (x, &delta) in states.iter().zip(&deltas) {
            for &v in &atoms[from].members {
                let mut y = x.clone();
                y[v] += delta;
                debug_assert_eq!(y.len(), n);
                for &w in &atoms[to].members {
                    let (Ok(a), Ok(b)) = (field.component(w).eval(x), field.component(w).eval(&y)) else {
                        continue;
                    };
                    if a != b {
                        changed = true;
                        break 'search;
                    }
                }
            }
        }
        if !changed {
            out.push(VacuousEdge { from: atoms[from].name.clone(), to: atoms[to].name.clone() });
        }
    }
    out
}
