//! DAG representation and the structural queries used throughout recovery:
//! parent/child/ancestor sets, effect-domination sets, ancestral-set tests,
//! Bernoulli random DAGs and effect-respecting sparsity classes.
//!
//! Nodes are 1-indexed. All types are immutable after construction.

use std::collections::BTreeSet;

use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg;
use nalgebra::DMatrix;

/// Default numeric cutoff deciding whether a matrix entry counts as zero
/// in sparsity-pattern checks.
pub const PATTERN_TOL: f64 = 1e-9;

/// A directed acyclic graph on nodes `1..=d`.
///
/// Adjacency is stored both as an edge set and as per-node parent/child
/// lists; the recovery loop queries parent sets repeatedly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    d: usize,
    edges: BTreeSet<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Dag {
    /// Build a DAG from an edge list. Rejects self-loops, duplicate edges,
    /// out-of-range endpoints and directed cycles.
    pub fn new(d: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter(
                "node count must be positive".into(),
            ));
        }
        let mut edge_set = BTreeSet::new();
        let mut parents = vec![Vec::new(); d];
        let mut children = vec![Vec::new(); d];
        for (i, j) in edges {
            if i == 0 || i > d {
                return Err(Error::NodeOutOfRange { node: i, d });
            }
            if j == 0 || j > d {
                return Err(Error::NodeOutOfRange { node: j, d });
            }
            if i == j {
                return Err(Error::InvalidEdge {
                    from: i,
                    to: j,
                    reason: "self-loop".into(),
                });
            }
            if !edge_set.insert((i, j)) {
                return Err(Error::InvalidEdge {
                    from: i,
                    to: j,
                    reason: "duplicate edge".into(),
                });
            }
            parents[j - 1].push(i);
            children[i - 1].push(j);
        }
        for list in parents.iter_mut().chain(children.iter_mut()) {
            list.sort_unstable();
        }
        let dag = Dag {
            d,
            edges: edge_set,
            parents,
            children,
        };
        if dag.topological_order().is_none() {
            return Err(Error::CycleDetected);
        }
        Ok(dag)
    }

    /// Graph with `d` nodes and no edges.
    pub fn edgeless(d: usize) -> Self {
        Dag::new(d, []).expect("edgeless graph is always valid")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.d {
            Err(Error::NodeOutOfRange { node: i, d: self.d })
        } else {
            Ok(())
        }
    }

    /// Sorted parent list of `i`.
    pub fn parents(&self, i: usize) -> Result<&[usize]> {
        self.check_node(i)?;
        Ok(&self.parents[i - 1])
    }

    /// Sorted child list of `i`.
    pub fn children(&self, i: usize) -> Result<&[usize]> {
        self.check_node(i)?;
        Ok(&self.children[i - 1])
    }

    /// All ancestors of `i`, by reverse reachability through parents.
    pub fn ancestors(&self, i: usize) -> Result<BTreeSet<usize>> {
        self.check_node(i)?;
        let mut seen = vec![false; self.d];
        let mut stack: Vec<usize> = self.parents[i - 1].clone();
        let mut out = BTreeSet::new();
        while let Some(u) = stack.pop() {
            if std::mem::replace(&mut seen[u - 1], true) {
                continue;
            }
            out.insert(u);
            stack.extend_from_slice(&self.parents[u - 1]);
        }
        Ok(out)
    }

    /// All descendants of `i` (excluding `i`).
    pub fn descendants(&self, i: usize) -> Result<BTreeSet<usize>> {
        self.check_node(i)?;
        let mut seen = vec![false; self.d];
        let mut stack: Vec<usize> = self.children[i - 1].clone();
        let mut out = BTreeSet::new();
        while let Some(u) = stack.pop() {
            if std::mem::replace(&mut seen[u - 1], true) {
                continue;
            }
            out.insert(u);
            stack.extend_from_slice(&self.children[u - 1]);
        }
        Ok(out)
    }

    /// Non-descendants of `i`: everything except `i` and its descendants.
    pub fn non_descendants(&self, i: usize) -> Result<BTreeSet<usize>> {
        let desc = self.descendants(i)?;
        Ok((1..=self.d)
            .filter(|&v| v != i && !desc.contains(&v))
            .collect())
    }

    /// The effect-dominating set of `j`: parents `i` of `j` whose child set
    /// contains every child of `j`.
    pub fn dom_set(&self, j: usize) -> Result<BTreeSet<usize>> {
        self.check_node(j)?;
        let ch_j = &self.children[j - 1];
        Ok(self.parents[j - 1]
            .iter()
            .copied()
            .filter(|&i| {
                let ch_i = &self.children[i - 1];
                ch_j.iter().all(|c| ch_i.binary_search(c).is_ok())
            })
            .collect())
    }

    /// The closed effect-dominating set `dom(j) ∪ {j}`.
    pub fn dom_bar(&self, j: usize) -> Result<BTreeSet<usize>> {
        let mut set = self.dom_set(j)?;
        set.insert(j);
        Ok(set)
    }

    /// True iff `s` is closed under taking ancestors.
    ///
    /// Members of `s` must be valid nodes.
    pub fn is_ancestral(&self, s: &[usize]) -> bool {
        let member: BTreeSet<usize> = s.iter().copied().collect();
        for &j in &member {
            assert!(j >= 1 && j <= self.d, "node {j} out of range");
            if !self.parents[j - 1].iter().all(|p| member.contains(p)) {
                return false;
            }
        }
        // parent closure implies ancestor closure by induction up the graph
        true
    }

    /// A topological order, or `None` if the edge relation has a cycle.
    fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg: Vec<usize> = (0..self.d).map(|v| self.parents[v].len()).collect();
        let mut queue: Vec<usize> = (1..=self.d).filter(|&v| indeg[v - 1] == 0).collect();
        let mut order = Vec::with_capacity(self.d);
        while let Some(v) = queue.pop() {
            order.push(v);
            for &c in &self.children[v - 1] {
                indeg[c - 1] -= 1;
                if indeg[c - 1] == 0 {
                    queue.push(c);
                }
            }
        }
        (order.len() == self.d).then_some(order)
    }

    /// A topological order of the nodes (every parent precedes its children).
    pub fn topo_order(&self) -> Vec<usize> {
        self.topological_order()
            .expect("constructed DAGs are acyclic")
    }

    /// Rename nodes: `old_of_new[c - 1]` is the old label of new node `c`.
    pub fn relabel(&self, old_of_new: &[usize]) -> Result<Dag> {
        if old_of_new.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "permutation length {} for a graph on {} nodes",
                old_of_new.len(),
                self.d
            )));
        }
        let mut new_of_old = vec![0usize; self.d];
        for (new, &old) in old_of_new.iter().enumerate() {
            self.check_node(old)?;
            if new_of_old[old - 1] != 0 {
                return Err(Error::InvalidParameter(format!(
                    "node {old} appears twice in permutation"
                )));
            }
            new_of_old[old - 1] = new + 1;
        }
        Dag::new(
            self.d,
            self.edges
                .iter()
                .map(|&(i, j)| (new_of_old[i - 1], new_of_old[j - 1])),
        )
    }
}

impl Serialize for Dag {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        // edges iterate lexicographically from the BTreeSet: byte-stable
        #[derive(Serialize)]
        struct Repr<'a> {
            d: usize,
            edges: Vec<&'a (usize, usize)>,
        }
        Repr {
            d: self.d,
            edges: self.edges.iter().collect(),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for Dag {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            d: usize,
            edges: Vec<(usize, usize)>,
        }
        let repr = Repr::deserialize(de)?;
        Dag::new(repr.d, repr.edges).map_err(D::Error::custom)
    }
}

/// Sample a DAG on `1..=d`: fix the total order `1, 2, ..., d` and include
/// each edge `i -> j` (`i < j`) independently with probability `p`.
///
/// `p = 1` is accepted as a boundary (full tournament over the order).
pub fn random_dag<R: Rng + ?Sized>(d: usize, p: f64, rng: &mut R) -> Result<Dag> {
    if d == 0 {
        return Err(Error::InvalidParameter(
            "node count must be positive".into(),
        ));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "edge probability must lie in (0, 1], got {p}"
        )));
    }
    let mut edges = Vec::new();
    for i in 1..=d {
        for j in (i + 1)..=d {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    Dag::new(d, edges)
}

/// Which effect-respecting matrix class to test membership of.
///
/// `Dom` is the exact class (entries nonzero exactly on closed dom-set
/// positions), `Dom0` additionally demands invertibility while relaxing to
/// support containment, and `DomBar` is support containment alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternClass {
    Dom,
    Dom0,
    DomBar,
}

/// Per-row sets of column indices permitted to be nonzero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    d: usize,
    allowed: Vec<BTreeSet<usize>>,
}

impl SparsityPattern {
    pub fn new(d: usize, allowed: Vec<BTreeSet<usize>>) -> Result<Self> {
        if allowed.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "{} rows of allowed columns for dimension {}",
                allowed.len(),
                d
            )));
        }
        for (row, cols) in allowed.iter().enumerate() {
            for &c in cols {
                if c == 0 || c > d {
                    return Err(Error::NodeOutOfRange { node: c, d })
                        .map_err(|e| Error::InvalidParameter(format!("row {}: {e}", row + 1)));
                }
            }
        }
        Ok(SparsityPattern { d, allowed })
    }

    /// Pattern whose row `i` allows exactly the closed dom set of `i`.
    pub fn dom_bar(g: &Dag) -> Self {
        let allowed = (1..=g.d()).map(|i| g.dom_bar(i).unwrap()).collect();
        SparsityPattern {
            d: g.d(),
            allowed,
        }
    }

    /// Pattern whose row `i` allows exactly the parents of `i`.
    pub fn parents(g: &Dag) -> Self {
        let allowed = (1..=g.d())
            .map(|i| g.parents(i).unwrap().iter().copied().collect())
            .collect();
        SparsityPattern {
            d: g.d(),
            allowed,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i - 1].contains(&j)
    }

    /// Entries above `tol` appear exactly at allowed positions.
    pub fn matches_exactly(&self, m: &DMatrix<f64>, tol: f64) -> bool {
        for i in 1..=self.d {
            for j in 1..=self.d {
                let nonzero = m[(i - 1, j - 1)].abs() > tol;
                if nonzero != self.allows(i, j) {
                    return false;
                }
            }
        }
        true
    }

    /// Entries above `tol` appear only at allowed positions.
    pub fn contains_support(&self, m: &DMatrix<f64>, tol: f64) -> bool {
        for i in 1..=self.d {
            for j in 1..=self.d {
                if m[(i - 1, j - 1)].abs() > tol && !self.allows(i, j) {
                    return false;
                }
            }
        }
        true
    }
}

/// Test membership of `m` in one of the effect-respecting classes of `g`.
///
/// Invertibility (for [`PatternClass::Dom0`]) is judged by the smallest
/// singular value exceeding `tol`.
pub fn pattern_membership(
    m: &DMatrix<f64>,
    g: &Dag,
    class: PatternClass,
    tol: f64,
) -> Result<bool> {
    if m.nrows() != g.d() || m.ncols() != g.d() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix against a graph on {} nodes",
            m.nrows(),
            m.ncols(),
            g.d()
        )));
    }
    let pattern = SparsityPattern::dom_bar(g);
    Ok(match class {
        PatternClass::Dom => pattern.matches_exactly(m, tol),
        PatternClass::Dom0 => {
            pattern.contains_support(m, tol) && linalg::smallest_singular_value(m) > tol
        }
        PatternClass::DomBar => pattern.contains_support(m, tol),
    })
}

/// Enumerate every labeled DAG on `d` nodes. Feasible for `d <= 5`
/// (29281 graphs at `d = 5`); used by the exhaustive property suites.
pub fn all_dags(d: usize) -> Vec<Dag> {
    assert!(d >= 1 && d <= 5, "exhaustive enumeration supports d <= 5");
    let pairs: Vec<(usize, usize)> = (1..=d)
        .flat_map(|i| ((i + 1)..=d).map(move |j| (i, j)))
        .collect();
    // each unordered pair is absent, forward, or backward; cycles filtered
    let mut out = Vec::new();
    let mut states = vec![0u8; pairs.len()];
    loop {
        let edges: Vec<(usize, usize)> = pairs
            .iter()
            .zip(&states)
            .filter_map(|(&(i, j), &s)| match s {
                1 => Some((i, j)),
                2 => Some((j, i)),
                _ => None,
            })
            .collect();
        if let Ok(g) = Dag::new(d, edges) {
            out.push(g);
        }
        // odometer increment over base-3 states
        let mut k = 0;
        loop {
            if k == states.len() {
                return out;
            }
            states[k] += 1;
            if states[k] < 3 {
                break;
            }
            states[k] = 0;
            k += 1;
        }
    }
}
