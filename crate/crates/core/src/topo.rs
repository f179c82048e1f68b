//! Sublevel-set persistent homology of vertex-weighted graphs.
//!
//! Every simplex takes the maximum value of its vertices (lower-star
//! filtration). Simplices are ordered by `(value, dimension, vertex tuple)`.
//! Dimension 0 is computed with union-find under the elder rule; dimension 1
//! by reducing the triangle boundary matrix over GF(2). Triangles come from
//! filling every 3-clique of the graph so that cycles can die.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numkit::{self, DenseMatrix};

pub const DEFAULT_GRAPH_K: usize = 20;

/// Undirected kNN graph: an edge joins `u < v` when either is among the
/// other's `k` nearest neighbours. Edges are sorted and unique.
pub fn build_knn_graph(distances: &DenseMatrix, k: usize) -> Result<Vec<(usize, usize)>> {
    let neighbors = numkit::knn(distances, k)?;
    let mut edges = BTreeSet::new();
    for (i, list) in neighbors.iter().enumerate() {
        for nb in list {
            edges.insert((i.min(nb.index), i.max(nb.index)));
        }
    }
    Ok(edges.into_iter().collect())
}

/// All 3-cliques `(a, b, c)` with `a < b < c`, sorted.
pub fn flag_fill_triangles(n_vertices: usize, edges: &[(usize, usize)]) -> Vec<[usize; 3]> {
    let mut higher: Vec<Vec<usize>> = vec![Vec::new(); n_vertices];
    for &(u, v) in edges {
        let (a, b) = (u.min(v), u.max(v));
        if a != b {
            higher[a].push(b);
        }
    }
    for list in &mut higher {
        list.sort_unstable();
        list.dedup();
    }
    let mut triangles = Vec::new();
    for a in 0..n_vertices {
        let na = &higher[a];
        for (pos, &b) in na.iter().enumerate() {
            let nb = &higher[b];
            // intersect the tail of na (entries > b) with nb
            let (mut i, mut j) = (pos + 1, 0);
            while i < na.len() && j < nb.len() {
                match na[i].cmp(&nb[j]) {
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                    std::cmp::Ordering::Equal => {
                        triangles.push([a, b, na[i]]);
                        i += 1;
                        j += 1;
                    }
                }
            }
        }
    }
    triangles
}

/// Vertex-weighted graph, optionally with filled triangles, with every
/// simplex stored in filtration order.
#[derive(Clone, Debug)]
pub struct FilteredComplex {
    values: Vec<f64>,
    /// vertices by (value, index)
    vertex_order: Vec<usize>,
    edges: Vec<[usize; 2]>,
    edge_values: Vec<f64>,
    triangles: Vec<[usize; 3]>,
    triangle_values: Vec<f64>,
}

impl FilteredComplex {
    /// Builds the lower-star filtration of a graph. Self-loops are dropped
    /// and duplicate edges merged; triangles must be 3-cliques of the graph.
    pub fn new(
        values: Vec<f64>,
        edges: &[(usize, usize)],
        triangles: &[[usize; 3]],
    ) -> Result<Self> {
        let n = values.len();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "vertex {i} has a non-finite filtration value"
            )));
        }
        let mut edge_set = BTreeSet::new();
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {v}) references a vertex outside 0..{n}"
                )));
            }
            if u != v {
                edge_set.insert([u.min(v), u.max(v)]);
            }
        }
        let mut tri_set = BTreeSet::new();
        for t in triangles {
            let mut t = *t;
            t.sort_unstable();
            if t[0] == t[1] || t[1] == t[2] {
                return Err(Error::InvalidArgument(format!("degenerate triangle {t:?}")));
            }
            for face in [[t[0], t[1]], [t[0], t[2]], [t[1], t[2]]] {
                if !edge_set.contains(&face) {
                    return Err(Error::InvalidArgument(format!(
                        "triangle {t:?} is missing edge {face:?}"
                    )));
                }
            }
            tri_set.insert(t);
        }

        let mut vertex_order: Vec<usize> = (0..n).collect();
        vertex_order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

        let mut edges: Vec<([usize; 2], f64)> = edge_set
            .into_iter()
            .map(|e| (e, values[e[0]].max(values[e[1]])))
            .collect();
        edges.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

        let mut tris: Vec<([usize; 3], f64)> = tri_set
            .into_iter()
            .map(|t| (t, values[t[0]].max(values[t[1]]).max(values[t[2]])))
            .collect();
        tris.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

        Ok(Self {
            values,
            vertex_order,
            edge_values: edges.iter().map(|e| e.1).collect(),
            edges: edges.into_iter().map(|e| e.0).collect(),
            triangle_values: tris.iter().map(|t| t.1).collect(),
            triangles: tris.into_iter().map(|t| t.0).collect(),
        })
    }

    /// Graph filtration with every 3-clique filled.
    pub fn with_flag_fill(values: Vec<f64>, edges: &[(usize, usize)]) -> Result<Self> {
        let triangles = flag_fill_triangles(values.len(), edges);
        Self::new(values, edges, &triangles)
    }

    pub fn n_vertices(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Edges in filtration order with their values.
    pub fn edges(&self) -> impl Iterator<Item = ([usize; 2], f64)> + '_ {
        self.edges.iter().copied().zip(self.edge_values.iter().copied())
    }

    /// Triangles in filtration order with their values.
    pub fn triangles(&self) -> impl Iterator<Item = ([usize; 3], f64)> + '_ {
        self.triangles
            .iter()
            .copied()
            .zip(self.triangle_values.iter().copied())
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Largest filtration value of any simplex (the largest vertex value).
    pub fn max_value(&self) -> f64 {
        self.vertex_order
            .last()
            .map_or(0.0, |&v| self.values[v])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PersistencePair {
    pub birth: f64,
    pub death: f64,
    /// Never killed; `death` holds the cap (largest filtration value).
    pub essential: bool,
}

impl PersistencePair {
    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersistenceDiagram {
    pub dimension: usize,
    pub pairs: Vec<PersistencePair>,
}

impl PersistenceDiagram {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            pairs: Vec::new(),
        }
    }

    pub fn essential_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.essential).count()
    }

    /// Betti number implied by the diagram at `threshold`: finite pairs with
    /// `birth <= threshold < death`, essential pairs with `birth <= threshold`.
    pub fn betti_at(&self, threshold: f64) -> usize {
        self.pairs
            .iter()
            .filter(|p| p.birth <= threshold && (p.essential || threshold < p.death))
            .count()
    }
}

/// Union-find keyed by the creating vertex of each component.
struct Components {
    parent: Vec<usize>,
}

impl Components {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Outcome of sweeping the edges through union-find: the dimension-0
/// diagram plus which edges created a cycle.
struct EdgeSweep {
    diagram: PersistenceDiagram,
    positive: Vec<bool>,
}

fn sweep_edges(complex: &FilteredComplex) -> EdgeSweep {
    let n = complex.n_vertices();
    let values = &complex.values;
    // elder key of a component root: (birth value, creating vertex)
    let elder = |v: usize| (values[v], v);
    let older = |a: usize, b: usize| {
        let (ka, kb) = (elder(a), elder(b));
        ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1)).is_lt()
    };
    let mut uf = Components::new(n);
    let mut diagram = PersistenceDiagram::new(0);
    let mut positive = vec![false; complex.n_edges()];
    for (idx, ([u, v], value)) in complex.edges().enumerate() {
        let (ru, rv) = (uf.find(u), uf.find(v));
        if ru == rv {
            positive[idx] = true;
            continue;
        }
        // the root is always the creating (oldest) vertex of its component
        let (survivor, dying) = if older(ru, rv) { (ru, rv) } else { (rv, ru) };
        diagram.pairs.push(PersistencePair {
            birth: values[dying],
            death: value,
            essential: false,
        });
        uf.parent[dying] = survivor;
    }
    let cap = complex.max_value();
    for &v in &complex.vertex_order {
        if uf.find(v) == v {
            diagram.pairs.push(PersistencePair {
                birth: values[v],
                death: cap,
                essential: true,
            });
        }
    }
    EdgeSweep { diagram, positive }
}

/// Dimension-0 diagram. Every vertex appears exactly once as a birth.
pub fn persistence_h0(complex: &FilteredComplex) -> PersistenceDiagram {
    sweep_edges(complex).diagram
}

/// Symmetric difference of two sorted index lists.
fn add_columns(a: &[u32], b: &[u32], out: &mut Vec<u32>) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
}

/// Result of reducing the triangle boundary matrix: for each edge (in
/// filtration order) the triangle that kills the cycle it created.
struct Reduction {
    killer: Vec<Option<usize>>,
}

fn reduce_triangles(complex: &FilteredComplex) -> Reduction {
    let edge_index: HashMap<[usize; 2], u32> = complex
        .edges
        .iter()
        .enumerate()
        .map(|(i, &e)| (e, i as u32))
        .collect();
    let mut killer: Vec<Option<usize>> = vec![None; complex.n_edges()];
    // reduced column of each pivot's owner, indexed by pivot edge
    let mut reduced: Vec<Option<Vec<u32>>> = vec![None; complex.n_edges()];
    let mut scratch = Vec::new();
    for (t_idx, &[a, b, c]) in complex.triangles.iter().enumerate() {
        let mut col: Vec<u32> = [[a, b], [a, c], [b, c]]
            .iter()
            .map(|e| edge_index[e])
            .collect();
        col.sort_unstable();
        while let Some(&low) = col.last() {
            match &reduced[low as usize] {
                Some(other) => {
                    add_columns(&col, other, &mut scratch);
                    std::mem::swap(&mut col, &mut scratch);
                }
                None => break,
            }
        }
        if let Some(&low) = col.last() {
            killer[low as usize] = Some(t_idx);
            reduced[low as usize] = Some(col);
        }
    }
    Reduction { killer }
}

/// Dimension-1 diagram. Cycles born at the edge that closes them and die at
/// the triangle that fills them; cycles never filled are essential.
pub fn persistence_h1(complex: &FilteredComplex) -> PersistenceDiagram {
    let sweep = sweep_edges(complex);
    let reduction = reduce_triangles(complex);
    let cap = complex.max_value();
    let mut diagram = PersistenceDiagram::new(1);
    for (idx, is_positive) in sweep.positive.iter().enumerate() {
        if !is_positive {
            debug_assert!(reduction.killer[idx].is_none());
            continue;
        }
        let birth = complex.edge_values[idx];
        diagram.pairs.push(match reduction.killer[idx] {
            Some(t) => PersistencePair {
                birth,
                death: complex.triangle_values[t],
                essential: false,
            },
            None => PersistencePair {
                birth,
                death: cap,
                essential: true,
            },
        });
    }
    diagram
}

/// `(beta_0, beta_1)` of the sublevel complex at `threshold`, computed
/// directly from the simplices present at that level.
pub fn betti_at(complex: &FilteredComplex, threshold: f64) -> (usize, usize) {
    let n = complex.n_vertices();
    let present: Vec<bool> = complex.values.iter().map(|&v| v <= threshold).collect();
    let n_vertices = present.iter().filter(|&&p| p).count();
    let mut uf = Components::new(n);
    let mut n_edges = 0;
    let mut components = n_vertices;
    let mut edge_index = HashMap::new();
    for ([u, v], value) in complex.edges() {
        if value > threshold {
            continue;
        }
        edge_index.insert([u, v], n_edges as u32);
        n_edges += 1;
        let (ru, rv) = (uf.find(u), uf.find(v));
        if ru != rv {
            uf.parent[ru] = rv;
            components -= 1;
        }
    }
    // rank of the boundary map from triangles to edges
    let mut pivots: HashMap<u32, Vec<u32>> = HashMap::new();
    let mut rank = 0;
    let mut scratch = Vec::new();
    for ([a, b, c], value) in complex.triangles() {
        if value > threshold {
            continue;
        }
        let mut col: Vec<u32> = [[a, b], [a, c], [b, c]]
            .iter()
            .map(|e| edge_index[e])
            .collect();
        col.sort_unstable();
        while let Some(&low) = col.last() {
            match pivots.get(&low) {
                Some(other) => {
                    add_columns(&col, other, &mut scratch);
                    std::mem::swap(&mut col, &mut scratch);
                }
                None => break,
            }
        }
        if let Some(&low) = col.last() {
            pivots.insert(low, col);
            rank += 1;
        }
    }
    let cycles = n_edges + components - n_vertices;
    (components, cycles - rank)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EssentialPolicy {
    /// Essential classes count with death capped at the largest value.
    #[default]
    Cap,
    /// Essential classes are left out.
    Drop,
}

impl EssentialPolicy {
    pub fn name(self) -> &'static str {
        match self {
            EssentialPolicy::Cap => "cap",
            EssentialPolicy::Drop => "drop",
        }
    }
}

impl FromStr for EssentialPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cap" => Ok(EssentialPolicy::Cap),
            "drop" => Ok(EssentialPolicy::Drop),
            other => Err(Error::InvalidArgument(format!(
                "unknown essential policy `{other}`"
            ))),
        }
    }
}

/// `sum (death - birth)^2` over the diagram.
pub fn total_persistence(diagram: &PersistenceDiagram, policy: EssentialPolicy) -> f64 {
    diagram
        .pairs
        .iter()
        .filter(|p| policy == EssentialPolicy::Cap || !p.essential)
        .map(|p| p.persistence() * p.persistence())
        .sum()
}

/// Both diagrams of the loss-level filtration on the kNN graph of
/// `distances`, vertices weighted by `values`.
pub fn loss_level_diagrams(
    distances: &DenseMatrix,
    values: &[f64],
    k: usize,
) -> Result<(PersistenceDiagram, PersistenceDiagram)> {
    if values.len() != distances.rows() {
        return Err(Error::Shape(format!(
            "{} vertex values for {} points",
            values.len(),
            distances.rows()
        )));
    }
    let edges = build_knn_graph(distances, k)?;
    let complex = FilteredComplex::with_flag_fill(values.to_vec(), &edges)?;
    Ok((persistence_h0(&complex), persistence_h1(&complex)))
}

pub const DIAGRAM_CSV_HEADER: &str = "dim,birth,death,essential";

/// CSV with 17 significant digits, which round-trips every `f64`.
pub fn diagrams_to_csv(diagrams: &[&PersistenceDiagram]) -> String {
    let mut out = String::from(DIAGRAM_CSV_HEADER);
    out.push('\n');
    for d in diagrams {
        for p in &d.pairs {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{}",
                d.dimension,
                p.birth,
                p.death,
                u8::from(p.essential)
            );
        }
    }
    out
}

/// Parses [`diagrams_to_csv`] output back into one diagram per dimension
/// (dimensions 0 and 1, in that order).
pub fn diagrams_from_csv(text: &str) -> Result<Vec<PersistenceDiagram>> {
    let bad = |line: usize, why: &str| Error::Format {
        path: "<diagram csv>".into(),
        reason: format!("line {line}: {why}"),
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(DIAGRAM_CSV_HEADER) {
        return Err(bad(1, "missing header"));
    }
    let mut out = vec![PersistenceDiagram::new(0), PersistenceDiagram::new(1)];
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(line_no, "expected 4 fields"));
        }
        let dim: usize = fields[0].parse().map_err(|_| bad(line_no, "bad dim"))?;
        let birth: f64 = fields[1].parse().map_err(|_| bad(line_no, "bad birth"))?;
        let death: f64 = fields[2].parse().map_err(|_| bad(line_no, "bad death"))?;
        let essential = match fields[3].trim() {
            "0" => false,
            "1" => true,
            _ => return Err(bad(line_no, "bad essential flag")),
        };
        let diagram = out.get_mut(dim).ok_or_else(|| bad(line_no, "dim must be 0 or 1"))?;
        diagram.pairs.push(PersistencePair {
            birth,
            death,
            essential,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{Metric, SeededRng};
    use proptest::prelude::*;

    fn pairs(d: &PersistenceDiagram) -> Vec<(f64, f64, bool)> {
        let mut v: Vec<_> = d.pairs.iter().map(|p| (p.birth, p.death, p.essential)).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn knn_graph_small_cases() {
        let p = DenseMatrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let d = numkit::pairwise_distances(&p, Metric::Euclidean).unwrap();
        assert_eq!(build_knn_graph(&d, 2).unwrap(), vec![(0, 1), (0, 2), (1, 2)]);

        let p = DenseMatrix::from_rows(&[[0.0], [1.0], [2.0], [10.0]]).unwrap();
        let d = numkit::pairwise_distances(&p, Metric::Euclidean).unwrap();
        assert_eq!(build_knn_graph(&d, 1).unwrap(), vec![(0, 1), (1, 2), (2, 3)]);
        assert!(matches!(build_knn_graph(&d, 4), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn knn_graph_matches_pairwise_definition() {
        let mut rng = SeededRng::new(3, 0);
        let p = DenseMatrix::from_vec(25, 2, (0..50).map(|_| rng.normal()).collect()).unwrap();
        let d = numkit::pairwise_distances(&p, Metric::Euclidean).unwrap();
        let k = 4;
        let edges: BTreeSet<(usize, usize)> = build_knn_graph(&d, k).unwrap().into_iter().collect();
        // v is among u's k nearest iff fewer than k points beat it under (distance, index)
        let among = |u: usize, v: usize| {
            (0..25)
                .filter(|&w| w != u && w != v)
                .filter(|&w| d[(u, w)] < d[(u, v)] || (d[(u, w)] == d[(u, v)] && w < v))
                .count()
                < k
        };
        for u in 0..25 {
            for v in u + 1..25 {
                assert_eq!(edges.contains(&(u, v)), among(u, v) || among(v, u), "({u},{v})");
            }
        }
    }

    #[test]
    fn flag_fill_examples() {
        assert_eq!(flag_fill_triangles(3, &[(0, 1), (1, 2), (0, 2)]), vec![[0, 1, 2]]);
        assert!(flag_fill_triangles(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).is_empty());
    }

    #[test]
    fn flag_fill_matches_triple_loop() {
        let mut rng = SeededRng::new(17, 0);
        let n = 10;
        let mut adj = vec![vec![false; n]; n];
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.uniform() < 0.5 {
                    adj[u][v] = true;
                    adj[v][u] = true;
                    edges.push((u, v));
                }
            }
        }
        let mut expected = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    if adj[a][b] && adj[a][c] && adj[b][c] {
                        expected.push([a, b, c]);
                    }
                }
            }
        }
        assert_eq!(flag_fill_triangles(n, &edges), expected);
    }

    #[test]
    fn path_graph_h0() {
        let c = FilteredComplex::with_flag_fill(vec![0.0, 1.0, 2.0], &[(0, 1), (1, 2)]).unwrap();
        let d = persistence_h0(&c);
        assert_eq!(pairs(&d), vec![(0.0, 2.0, true), (1.0, 1.0, false), (2.0, 2.0, false)]);
        assert_eq!(total_persistence(&d, EssentialPolicy::Drop), 0.0);
        assert_eq!(betti_at(&c, 2.0), (1, 0));
    }

    #[test]
    fn two_vertex_h0() {
        let c = FilteredComplex::with_flag_fill(vec![0.0, 5.0], &[(0, 1)]).unwrap();
        let d = persistence_h0(&c);
        assert_eq!(pairs(&d), vec![(0.0, 5.0, true), (5.0, 5.0, false)]);
    }

    #[test]
    fn elder_rule_ties_go_to_lower_index() {
        // 0 and 2 are both born at 0 and merge through vertex 1
        let c = FilteredComplex::with_flag_fill(vec![0.0, 3.0, 0.0], &[(0, 1), (1, 2)]).unwrap();
        let d = persistence_h0(&c);
        let essential: Vec<_> = d.pairs.iter().filter(|p| p.essential).collect();
        assert_eq!(essential.len(), 1);
        assert_eq!(pairs(&d), vec![(0.0, 3.0, false), (0.0, 3.0, true), (3.0, 3.0, false)]);
    }

    #[test]
    fn filled_triangle_h1() {
        let c = FilteredComplex::with_flag_fill(vec![0.0; 3], &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(c.n_triangles(), 1);
        let d = persistence_h1(&c);
        assert_eq!(pairs(&d), vec![(0.0, 0.0, false)]);
    }

    #[test]
    fn square_h1_is_essential() {
        let e = [(0, 1), (1, 2), (2, 3), (0, 3)];
        let c = FilteredComplex::with_flag_fill(vec![0.0; 4], &e).unwrap();
        let d = persistence_h1(&c);
        assert_eq!(pairs(&d), vec![(0.0, 0.0, true)]);
        assert_eq!(betti_at(&c, 0.0), (1, 1));
    }

    #[test]
    fn empty_sublevel_has_no_homology() {
        let c = FilteredComplex::with_flag_fill(vec![1.0, 2.0], &[(0, 1)]).unwrap();
        assert_eq!(betti_at(&c, 0.5), (0, 0));
    }

    #[test]
    fn total_persistence_examples() {
        let d = PersistenceDiagram {
            dimension: 0,
            pairs: vec![
                PersistencePair { birth: 0.0, death: 1.0, essential: false },
                PersistencePair { birth: 0.0, death: 2.0, essential: false },
            ],
        };
        assert_eq!(total_persistence(&d, EssentialPolicy::Cap), 5.0);
        assert_eq!(total_persistence(&PersistenceDiagram::new(1), EssentialPolicy::Cap), 0.0);
    }

    #[test]
    fn late_cycle_dies_at_filling_triangle() {
        // square 0-1-2-3 with diagonal 1-3 arriving late through vertex values
        let values = vec![0.0, 1.0, 2.0, 3.0];
        let e = [(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)];
        let c = FilteredComplex::with_flag_fill(values, &e).unwrap();
        let d = persistence_h1(&c);
        // edges at value 3: (0,3) (1,3) (2,3); two cycles born at 3, both
        // filled by triangles (0,1,3) and (1,2,3) at 3
        assert_eq!(pairs(&d), vec![(3.0, 3.0, false), (3.0, 3.0, false)]);
    }

    #[test]
    fn csv_round_trip() {
        let d0 = PersistenceDiagram {
            dimension: 0,
            pairs: vec![PersistencePair { birth: 0.1, death: 1.0 / 3.0, essential: false }],
        };
        let d1 = PersistenceDiagram {
            dimension: 1,
            pairs: vec![PersistencePair { birth: 2e-300, death: 7.25, essential: true }],
        };
        let text = diagrams_to_csv(&[&d0, &d1]);
        assert!(text.starts_with("dim,birth,death,essential\n"));
        let back = diagrams_from_csv(&text).unwrap();
        assert_eq!(back, vec![d0, d1]);
    }

    fn random_complex(seed: u64, n: usize, p: f64) -> FilteredComplex {
        let mut rng = SeededRng::new(seed, 7);
        // coarse values force ties
        let values: Vec<f64> = (0..n).map(|_| rng.below(5) as f64 * 0.5).collect();
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.uniform() < p {
                    edges.push((u, v));
                }
            }
        }
        FilteredComplex::with_flag_fill(values, &edges).unwrap()
    }

    proptest! {
        #[test]
        fn every_vertex_is_born_once(seed in 0u64..10_000, n in 1usize..12) {
            let c = random_complex(seed, n, 0.3);
            let d = persistence_h0(&c);
            prop_assert_eq!(d.pairs.len(), n);
            let mut births: Vec<f64> = d.pairs.iter().map(|p| p.birth).collect();
            let mut values = c.values().to_vec();
            births.sort_by(f64::total_cmp);
            values.sort_by(f64::total_cmp);
            prop_assert_eq!(births, values);
            prop_assert_eq!(d.essential_count(), betti_at(&c, f64::INFINITY).0);
            for p in d.pairs.iter() {
                prop_assert!(p.death >= p.birth);
            }
        }

        #[test]
        fn cap_never_below_drop(seed in 0u64..10_000) {
            let c = random_complex(seed, 10, 0.35);
            for d in [persistence_h0(&c), persistence_h1(&c)] {
                prop_assert!(total_persistence(&d, EssentialPolicy::Cap)
                    >= total_persistence(&d, EssentialPolicy::Drop));
            }
        }

        #[test]
        fn edge_input_order_is_irrelevant(seed in 0u64..10_000) {
            let c = random_complex(seed, 9, 0.4);
            let mut edges: Vec<(usize, usize)> = c.edges().map(|(e, _)| (e[1], e[0])).collect();
            SeededRng::new(seed, 1).shuffle(&mut edges);
            let shuffled = FilteredComplex::with_flag_fill(c.values().to_vec(), &edges).unwrap();
            prop_assert_eq!(persistence_h0(&c), persistence_h0(&shuffled));
            prop_assert_eq!(persistence_h1(&c), persistence_h1(&shuffled));
        }
    }
}
