//! Heteroclinic connection graph: separatrix tracing, the DAG of
//! critical points, its axioms, diagram isomorphism and edit scripts.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critical::{CriticalPoint, Kind};
use crate::error::{Error, Result};
use crate::flow::{self, sphere_directions, CONVERGENCE_TOL, DEFAULT_DT, T_MAX};
use crate::landscape::Landscape;
use crate::linalg;

/// Seeding offset along unstable eigenvectors.
pub const SEPARATRIX_OFFSET: f64 = 1e-4;
/// A separatrix passing this close to another saddle is reported as a
/// near saddle-saddle connection.
pub const SADDLE_WITNESS_RADIUS: f64 = 1e-3;
/// Rays in a two-dimensional unstable fan.
pub const FAN_RAYS: usize = 64;
/// Random directions on unstable spheres of dimension three or more.
pub const SPHERE_RAYS: usize = 200;
/// Terminal points farther than this from every census point are an error.
pub const MATCH_RADIUS: f64 = 1e-4;
const FAN_BISECTIONS: usize = 48;

/// Outcome of one traced separatrix (or fan ray).
#[derive(Debug, Clone, Serialize)]
pub struct Separatrix {
    pub direction: Vec<f64>,
    /// Census position of the terminal critical point.
    pub destination: usize,
    /// Closest other saddle along the way and its distance.
    pub closest_saddle: Option<(usize, f64)>,
}

/// Unstable directions at a critical point: eigenvectors of
/// `g^{-1/2} H g^{-1/2}` with negative eigenvalue, mapped back by
/// `g^{-1/2}` and normalized.
pub fn unstable_directions(land: &Landscape, p: &CriticalPoint) -> DMatrix<f64> {
    let x = &p.location;
    let ginv_half = linalg::spd_power(&land.metric.inverse(x), 0.5);
    let m = &ginv_half * land.potential.hessian(x) * &ginv_half;
    let (vals, vecs) = linalg::sym_eigen(&m);
    let k = vals.iter().filter(|v| **v < 0.0).count();
    let mut out = DMatrix::zeros(x.len(), k);
    for j in 0..k {
        let v = &ginv_half * vecs.column(j);
        out.set_column(j, &(&v / v.norm()));
    }
    out
}

fn nearest(census: &[CriticalPoint], x: &DVector<f64>) -> (usize, f64) {
    census
        .iter()
        .enumerate()
        .map(|(i, p)| (i, (&p.location - x).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((usize::MAX, f64::INFINITY))
}

/// Flows from `x0` to its limit and identifies it in the census, tracking
/// the closest approach to saddles other than `source`.
pub fn trace(land: &Landscape, census: &[CriticalPoint], source: usize, x0: &DVector<f64>) -> Result<Separatrix> {
    let saddles: Vec<usize> = (0..census.len())
        .filter(|&i| i != source && census[i].kind == Kind::Saddle)
        .collect();
    let mut closest: Option<(usize, f64)> = None;
    let end = flow::flow_with(land, x0, DEFAULT_DT, T_MAX, CONVERGENCE_TOL, |_, x, _| {
        for &s in &saddles {
            let d = (&census[s].location - x).norm();
            if closest.is_none_or(|(_, c)| d < c) {
                closest = Some((s, d));
            }
        }
    })?;
    if !end.converged {
        return Err(Error::Timeout(format!("separatrix from {:?} did not settle", x0.as_slice())));
    }
    let (dest, dist) = nearest(census, &end.point);
    if dist > MATCH_RADIUS {
        return Err(Error::Numeric(format!(
            "flow settled at {:?}, which is missing from the census",
            end.point.as_slice()
        )));
    }
    Ok(Separatrix {
        direction: (x0 - &census[source].location).iter().copied().collect(),
        destination: dest,
        closest_saddle: closest,
    })
}

/// Traces the unstable manifold of census point `i`.
///
/// Index one: both branches `x ± offset e`. Two unstable directions: a
/// fan of `FAN_RAYS` rays, plus angular bisection between neighbouring
/// rays with different destinations to find the saddles in between.
/// Higher: `SPHERE_RAYS` random directions.
pub fn unstable_separatrices(land: &Landscape, census: &[CriticalPoint], i: usize, offset: f64) -> Result<Vec<Separatrix>> {
    let p = &census[i];
    if p.index == 0 {
        return Err(Error::Input("attractors have no unstable separatrices".into()));
    }
    if !(offset > 0.0) {
        return Err(Error::Input("separatrix offset must be positive".into()));
    }
    let basis = unstable_directions(land, p);
    let k = basis.ncols();
    let dirs: Vec<DVector<f64>> = match k {
        1 => vec![basis.column(0).into_owned(), -basis.column(0).into_owned()],
        2 => sphere_directions(2, FAN_RAYS, 0),
        _ => sphere_directions(k, SPHERE_RAYS, 0x5e9a + i as u64),
    };
    let start = |u: &DVector<f64>| -> DVector<f64> {
        let v = if k == 1 { u.clone() } else { &basis * u };
        &p.location + v.normalize() * offset
    };
    let mut out: Vec<Separatrix> = dirs.par_iter().map(|u| trace(land, census, i, &start(u))).collect::<Result<_>>()?;
    if k == 2 {
        let mut extra = Vec::new();
        for r in 0..dirs.len() {
            let s = (r + 1) % dirs.len();
            if out[r].destination == out[s].destination {
                continue;
            }
            let angle = |u: &DVector<f64>| u[1].atan2(u[0]);
            let (mut lo, mut hi) = (angle(&dirs[r]), angle(&dirs[s]));
            if hi < lo {
                hi += std::f64::consts::TAU;
            }
            let d_lo = out[r].destination;
            let mut last = None;
            for _ in 0..FAN_BISECTIONS {
                let mid = 0.5 * (lo + hi);
                let u = DVector::from_vec(vec![mid.cos(), mid.sin()]);
                let sep = trace(land, census, i, &start(&u))?;
                if census[sep.destination].kind == Kind::Saddle {
                    last = Some(sep);
                    break;
                }
                if sep.destination == d_lo {
                    lo = mid;
                } else {
                    hi = mid;
                }
                last = Some(sep);
            }
            if let Some(sep) = last {
                if census[sep.destination].kind == Kind::Saddle {
                    extra.push(sep);
                } else if let Some((s, d)) = sep.closest_saddle {
                    if d < SADDLE_WITNESS_RADIUS {
                        extra.push(Separatrix {
                            destination: s,
                            closest_saddle: Some((s, d)),
                            ..sep
                        });
                    }
                }
            }
        }
        out.extend(extra);
    }
    Ok(out)
}

/// Node of a `LandscapeDag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagNode {
    pub id: usize,
    pub index: usize,
    pub location: Vec<f64>,
}

/// Evidence that the flow is (close to) not Morse–Smale: a separatrix of
/// `source` passing within `distance` of saddle `near`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonSmaleWitness {
    pub source: usize,
    pub near: usize,
    pub distance: f64,
    /// The separatrix actually converged onto the other saddle.
    pub direct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DagAxioms {
    pub no_self_edges: bool,
    pub transitively_closed: bool,
    pub index_decreasing: bool,
    pub acyclic: bool,
}

impl DagAxioms {
    pub fn all(&self) -> bool {
        self.no_self_edges && self.transitively_closed && self.index_decreasing && self.acyclic
    }
}

/// Partial order of critical points; `(i, j)` in `edges` means the
/// unstable manifold of `i` meets the stable manifold of `j`.
#[derive(Debug, Clone, Serialize)]
pub struct LandscapeDag {
    pub nodes: Vec<DagNode>,
    /// Connections seen directly by separatrix tracing.
    pub direct_edges: Vec<(usize, usize)>,
    /// Transitive closure of `direct_edges`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub witnesses: Vec<NonSmaleWitness>,
    pub axioms: DagAxioms,
}

impl LandscapeDag {
    /// Assembles a DAG from explicit nodes and direct edges.
    pub fn from_edges(nodes: Vec<DagNode>, direct: &[(usize, usize)]) -> Self {
        let direct: BTreeSet<(usize, usize)> = direct.iter().copied().collect();
        let edges = transitive_closure(nodes.len(), &direct);
        let axioms = check_axioms(&nodes, &edges);
        Self {
            nodes,
            direct_edges: direct.into_iter().collect(),
            edges,
            witnesses: Vec::new(),
            axioms,
        }
    }

    pub fn out_edges(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.0 == i).map(|e| e.1)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i, j)).is_ok()
    }

    /// `{"nodes": [{id, index, location}], "edges": [[i, j]]}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "nodes": self.nodes,
            "edges": self.edges.iter().map(|(a, b)| [a, b]).collect::<Vec<_>>(),
        })
    }

    /// Graphviz text, one rank per Morse index.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph landscape {\n  rankdir=TB;\n");
        let max_index = self.nodes.iter().map(|n| n.index).max().unwrap_or(0);
        for idx in (0..=max_index).rev() {
            let ids: Vec<String> = self
                .nodes
                .iter()
                .filter(|n| n.index == idx)
                .map(|n| format!("n{}", n.id))
                .collect();
            if !ids.is_empty() {
                let _ = writeln!(s, "  {{ rank=same; {}; }}", ids.join("; "));
            }
        }
        for n in &self.nodes {
            let loc: Vec<String> = n.location.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(s, "  n{} [label=\"{} (index {})\\n({})\"];", n.id, n.id, n.index, loc.join(", "));
        }
        for &(a, b) in &self.edges {
            let style = if self.direct_edges.contains(&(a, b)) { "" } else { " [style=dashed]" };
            let _ = writeln!(s, "  n{a} -> n{b}{style};");
        }
        s.push_str("}\n");
        s
    }
}

fn transitive_closure(n: usize, direct: &BTreeSet<(usize, usize)>) -> Vec<(usize, usize)> {
    let mut reach = vec![vec![false; n]; n];
    for &(a, b) in direct {
        reach[a][b] = true;
    }
    // Warshall; row k is read while row i is written, so index loops.
    #[allow(clippy::needless_range_loop)]
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    for (i, row) in reach.iter().enumerate() {
        for (j, r) in row.iter().enumerate() {
            if *r {
                out.push((i, j));
            }
        }
    }
    out
}

/// Checks the four order axioms on a (claimed) closed edge set.
pub fn check_axioms(nodes: &[DagNode], edges: &[(usize, usize)]) -> DagAxioms {
    let set: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
    let closure: BTreeSet<(usize, usize)> = transitive_closure(nodes.len(), &set).into_iter().collect();
    DagAxioms {
        no_self_edges: edges.iter().all(|(a, b)| a != b),
        transitively_closed: closure == set,
        index_decreasing: edges.iter().all(|&(a, b)| nodes[a].index > nodes[b].index),
        acyclic: closure.iter().all(|(a, b)| a != b),
    }
}

/// Builds the connection DAG of a Morse census.
pub fn build_dag(land: &Landscape, census: &[CriticalPoint]) -> Result<LandscapeDag> {
    build_dag_with(land, census, SEPARATRIX_OFFSET)
}

pub fn build_dag_with(land: &Landscape, census: &[CriticalPoint], offset: f64) -> Result<LandscapeDag> {
    if let Some(p) = census.iter().find(|p| !p.hyperbolic) {
        return Err(Error::Input(format!(
            "census is not Morse: |eigenvalue| {:e} at {:?}",
            p.min_abs_eigenvalue(),
            p.location.as_slice()
        )));
    }
    let nodes: Vec<DagNode> = census
        .iter()
        .enumerate()
        .map(|(id, p)| DagNode {
            id,
            index: p.index,
            location: p.location.iter().copied().collect(),
        })
        .collect();
    let mut direct = BTreeSet::new();
    let mut witnesses = Vec::new();
    for i in (0..census.len()).filter(|&i| census[i].index > 0) {
        for sep in unstable_separatrices(land, census, i, offset)? {
            if sep.destination != i {
                direct.insert((i, sep.destination));
            }
            let direct_hit = census[sep.destination].kind == Kind::Saddle;
            if census[i].kind == Kind::Saddle {
                if direct_hit {
                    witnesses.push(NonSmaleWitness {
                        source: i,
                        near: sep.destination,
                        distance: 0.0,
                        direct: true,
                    });
                } else if let Some((s, d)) = sep.closest_saddle {
                    if d < SADDLE_WITNESS_RADIUS {
                        witnesses.push(NonSmaleWitness {
                            source: i,
                            near: s,
                            distance: d,
                            direct: false,
                        });
                    }
                }
            }
        }
    }
    let mut dag = LandscapeDag::from_edges(nodes, &direct.into_iter().collect::<Vec<_>>());
    dag.witnesses = witnesses;
    Ok(dag)
}

/// Whether an index-preserving bijection maps one edge set onto the other.
pub fn diagram_isomorphic(a: &LandscapeDag, b: &LandscapeDag) -> bool {
    let n = a.nodes.len();
    if n != b.nodes.len() || a.edges.len() != b.edges.len() {
        return false;
    }
    let profile = |d: &LandscapeDag| {
        let mut v: Vec<(usize, usize, usize)> = d
            .nodes
            .iter()
            .map(|x| {
                let out = d.edges.iter().filter(|e| e.0 == x.id).count();
                let inn = d.edges.iter().filter(|e| e.1 == x.id).count();
                (x.index, out, inn)
            })
            .collect();
        v.sort_unstable();
        v
    };
    if profile(a) != profile(b) {
        return false;
    }
    let adj = |d: &LandscapeDag| {
        let mut m = vec![vec![false; n]; n];
        for &(i, j) in &d.edges {
            m[i][j] = true;
        }
        m
    };
    let (ea, eb) = (adj(a), adj(b));
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    fn extend(
        k: usize,
        a: &LandscapeDag,
        b: &LandscapeDag,
        ea: &[Vec<bool>],
        eb: &[Vec<bool>],
        map: &mut [usize],
        used: &mut [bool],
    ) -> bool {
        let n = map.len();
        if k == n {
            return true;
        }
        for c in 0..n {
            if used[c] || b.nodes[c].index != a.nodes[k].index {
                continue;
            }
            let consistent = (0..k).all(|j| ea[k][j] == eb[c][map[j]] && ea[j][k] == eb[map[j]][c]);
            if consistent {
                map[k] = c;
                used[c] = true;
                if extend(k + 1, a, b, ea, eb, map, used) {
                    return true;
                }
                used[c] = false;
            }
        }
        false
    }
    extend(0, a, b, &ea, &eb, &mut map, &mut used)
}

/// One elementary change between two DAGs. Node ids refer to the DAG the
/// element belongs to: `before` for removals, `after` for additions.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum DagEdit {
    NodeAdd { id: usize, index: usize, location: Vec<f64> },
    NodeRemove { id: usize, index: usize, location: Vec<f64> },
    EdgeAdd { from: usize, to: usize, from_index: usize, to_index: usize },
    EdgeRemove { from: usize, to: usize, from_index: usize, to_index: usize },
}

/// Edit script plus the node matching it was computed under.
#[derive(Debug, Clone, Serialize)]
pub struct DagDiff {
    /// `(before id, after id)` pairs of persisting nodes.
    pub matching: Vec<(usize, usize)>,
    pub edits: Vec<DagEdit>,
}

impl DagDiff {
    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    /// No node changes, and exactly one edge removed and one added, both
    /// leaving the same persisting node: a single retarget.
    pub fn single_retarget(&self) -> Option<(usize, usize, usize)> {
        if self.edits.len() != 2 {
            return None;
        }
        let (mut rem, mut add) = (None, None);
        for e in &self.edits {
            match e {
                DagEdit::EdgeRemove { from, to, .. } => rem = Some((*from, *to)),
                DagEdit::EdgeAdd { from, to, .. } => add = Some((*from, *to)),
                _ => return None,
            }
        }
        let ((f1, t1), (f2, t2)) = (rem?, add?);
        self.matching.contains(&(f1, f2)).then_some((f1, t1, t2))
    }

    pub fn node_changes(&self) -> usize {
        self.edits
            .iter()
            .filter(|e| matches!(e, DagEdit::NodeAdd { .. } | DagEdit::NodeRemove { .. }))
            .count()
    }
}

/// Greedy nearest-location matching within index classes, then the node
/// and edge edits that turn `before` into `after`.
pub fn dag_edit_diff(before: &LandscapeDag, after: &LandscapeDag) -> DagDiff {
    let dist = |a: &DagNode, b: &DagNode| {
        a.location
            .iter()
            .zip(&b.location)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for a in &before.nodes {
        for b in after.nodes.iter().filter(|b| b.index == a.index) {
            pairs.push((dist(a, b), a.id, b.id));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut fwd = vec![None; before.nodes.len()];
    let mut back = vec![None; after.nodes.len()];
    for (_, i, j) in pairs {
        if fwd[i].is_none() && back[j].is_none() {
            fwd[i] = Some(j);
            back[j] = Some(i);
        }
    }
    let mut edits = Vec::new();
    for n in &before.nodes {
        if fwd[n.id].is_none() {
            edits.push(DagEdit::NodeRemove {
                id: n.id,
                index: n.index,
                location: n.location.clone(),
            });
        }
    }
    for n in &after.nodes {
        if back[n.id].is_none() {
            edits.push(DagEdit::NodeAdd {
                id: n.id,
                index: n.index,
                location: n.location.clone(),
            });
        }
    }
    for &(i, j) in &before.edges {
        let kept = matches!((fwd[i], fwd[j]), (Some(a), Some(b)) if after.has_edge(a, b));
        if !kept {
            edits.push(DagEdit::EdgeRemove {
                from: i,
                to: j,
                from_index: before.nodes[i].index,
                to_index: before.nodes[j].index,
            });
        }
    }
    for &(a, b) in &after.edges {
        let kept = matches!((back[a], back[b]), (Some(i), Some(j)) if before.has_edge(i, j));
        if !kept {
            edits.push(DagEdit::EdgeAdd {
                from: a,
                to: b,
                from_index: after.nodes[a].index,
                to_index: after.nodes[b].index,
            });
        }
    }
    let matching = fwd
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect();
    DagDiff { matching, edits }
}
