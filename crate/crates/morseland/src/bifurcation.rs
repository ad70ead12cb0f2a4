//! Parameter families of gradients: sweeps, saddle-node and heteroclinic
//! flip localization, two-parameter scans and cusp checks.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::connectome::{self, build_dag, dag_edit_diff, unstable_directions, LandscapeDag};
use crate::critical::{self, counts, morse_report, poincare_hopf_check, CensusOptions, Counts, CriticalPoint, Kind, MorseReport, PoincareHopf};
use crate::error::{Error, Result};
use crate::landscape::{make_builtin, polynomial_landscape, Landscape, Polynomial, PotentialForm};
use crate::linalg;

/// Parameter-space width at which bisections stop.
pub const BISECTION_TOL: f64 = 1e-6;
/// Shift applied once when a grid value is exactly non-Morse.
pub const NON_MORSE_SHIFT: f64 = 1e-7;
/// Normal-form coefficients below this count as vanishing.
pub const GENERICITY_TOL: f64 = 1e-4;
/// Cusp checks need a Hessian eigenvalue at least this small.
pub const CUSP_KERNEL_TOL: f64 = 1e-3;
/// Step for directional derivatives of the Hessian along the kernel.
const KERNEL_STEP: f64 = 1e-3;
/// Step for parameter derivatives.
const PARAM_STEP: f64 = 1e-6;

pub type Builder = Arc<dyn Fn(&[f64]) -> Result<Landscape> + Send + Sync>;

/// Map from parameter values to landscapes over a closed box.
#[derive(Clone)]
pub struct ParameterFamily {
    pub name: String,
    pub range: Vec<(f64, f64)>,
    builder: Builder,
}

impl fmt::Debug for ParameterFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParameterFamily")
            .field("name", &self.name)
            .field("range", &self.range)
            .finish_non_exhaustive()
    }
}

impl ParameterFamily {
    pub fn new(name: &str, range: Vec<(f64, f64)>, builder: Builder) -> Self {
        Self {
            name: name.to_string(),
            range,
            builder,
        }
    }

    pub fn arity(&self) -> usize {
        self.range.len()
    }

    pub fn build(&self, eta: &[f64]) -> Result<Landscape> {
        if eta.len() != self.arity() {
            return Err(Error::Input(format!(
                "family '{}' takes {} parameters, got {}",
                self.name,
                self.arity(),
                eta.len()
            )));
        }
        (self.builder)(eta)
    }

    /// One-parameter family at `eta`.
    pub fn at(&self, eta: f64) -> Result<Landscape> {
        self.build(&[eta])
    }

    /// One-parameter slice varying `axis`, other coordinates from `fixed`.
    pub fn slice(&self, axis: usize, fixed: &[f64]) -> ParameterFamily {
        let base = fixed.to_vec();
        let inner = self.clone();
        ParameterFamily::new(
            &format!("{}[axis {axis}]", self.name),
            vec![self.range[axis]],
            Arc::new(move |e: &[f64]| {
                let mut p = base.clone();
                p[axis] = e[0];
                inner.build(&p)
            }),
        )
    }
}

fn builtin(form: PotentialForm, range: (f64, f64)) -> ParameterFamily {
    ParameterFamily::new(form.name(), vec![range], Arc::new(move |e: &[f64]| make_builtin(form, e)))
}

pub fn saddle_node_family() -> ParameterFamily {
    builtin(PotentialForm::SaddleNodeFamily, (-1.0, 1.0))
}

pub fn flip_family() -> ParameterFamily {
    builtin(PotentialForm::FlipFamily, (-1.0, 1.0))
}

/// `base + eta <direction, x>`.
pub fn tilt_family(name: &str, base: Landscape, direction: Vec<f64>, range: (f64, f64)) -> ParameterFamily {
    ParameterFamily::new(
        name,
        vec![range],
        Arc::new(move |e: &[f64]| {
            let c: Vec<f64> = direction.iter().map(|d| d * e[0]).collect();
            Ok(base.clone().with_tilt(&c))
        }),
    )
}

/// Dual-well with tilt `eta v1`.
pub fn dual_well_tilt_family(range: (f64, f64)) -> ParameterFamily {
    let base = make_builtin(PotentialForm::DualWell, &[]).expect("builtin");
    tilt_family("dual-well-tilt", base, vec![1.0, 0.0], range)
}

/// Dual-cusp with tilt `eta1 v1 + eta2 v2`.
pub fn dual_cusp_tilt_family(range: (f64, f64)) -> ParameterFamily {
    let base = make_builtin(PotentialForm::DualCusp, &[]).expect("builtin");
    ParameterFamily::new(
        "dual-cusp-tilt",
        vec![range, range],
        Arc::new(move |e: &[f64]| Ok(base.clone().with_tilt(e))),
    )
}

/// Saddle-node family at `eta1` with tilt `eta2 v2`.
pub fn saddle_node_tilt_family() -> ParameterFamily {
    ParameterFamily::new(
        "saddle-node-tilt",
        vec![(-1.0, 1.0), (-0.2, 0.2)],
        Arc::new(|e: &[f64]| Ok(make_builtin(PotentialForm::SaddleNodeFamily, &[e[0]])?.with_tilt(&[0.0, e[1]]))),
    )
}

/// One-dimensional cusp unfolding `x^4/4 - eta2 x^2/2 - eta1 x`.
pub fn cusp_family() -> ParameterFamily {
    ParameterFamily::new(
        "cusp",
        vec![(-1.0, 1.0), (-1.0, 1.0)],
        Arc::new(|e: &[f64]| {
            let p = Polynomial::from_terms(1, &[(&[4], 0.25), (&[2], -0.5 * e[1]), (&[1], -e[0])])?;
            polynomial_landscape(p, 3.0)
        }),
    )
}

/// One-dimensional fold `x^3/3 - eta x`, drift `-x^2 + eta`.
pub fn fold_family() -> ParameterFamily {
    ParameterFamily::new(
        "fold",
        vec![(-1.0, 1.0)],
        Arc::new(|e: &[f64]| {
            let p = Polynomial::from_terms(1, &[(&[3], 1.0 / 3.0), (&[1], -e[0])])?;
            polynomial_landscape(p, 3.0)
        }),
    )
}

/// Dual-well regardless of the parameters.
pub fn constant_family(arity: usize) -> ParameterFamily {
    let base = make_builtin(PotentialForm::DualWell, &[]).expect("builtin");
    ParameterFamily::new("constant", vec![(-1.0, 1.0); arity], Arc::new(move |_: &[f64]| Ok(base.clone())))
}

/// Families addressable by name.
pub fn builtin_family(name: &str) -> Result<ParameterFamily> {
    match name {
        "saddle-node" | "saddle-node-family" => Ok(saddle_node_family()),
        "flip" | "flip-family" => Ok(flip_family()),
        "dual-well-tilt" => Ok(dual_well_tilt_family((-0.2, 0.2))),
        "dual-cusp-tilt" => Ok(dual_cusp_tilt_family((-0.5, 0.5))),
        "saddle-node-tilt" => Ok(saddle_node_tilt_family()),
        "cusp" => Ok(cusp_family()),
        "fold" => Ok(fold_family()),
        "constant" => Ok(constant_family(1)),
        "constant2" => Ok(constant_family(2)),
        other => Err(Error::Config(format!("unknown family '{other}'"))),
    }
}

/// Lattice census plus Newton seeds on both sides of every nearly
/// degenerate point, so close pairs near a fold are both found.
pub fn robust_census(land: &Landscape, opts: &CensusOptions) -> Result<Vec<CriticalPoint>> {
    let first = critical::census(land, opts, &[])?;
    let mut seeds: Vec<DVector<f64>> = first.iter().map(|p| p.location.clone()).collect();
    for p in first.iter().filter(|p| p.min_abs_eigenvalue() < 0.1) {
        let (vals, vecs) = linalg::sym_eigen(&land.potential.hessian(&p.location));
        let k = (0..vals.len()).min_by(|&a, &b| vals[a].abs().total_cmp(&vals[b].abs())).unwrap_or(0);
        let e = vecs.column(k).into_owned();
        for s in [3e-1, 1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4] {
            seeds.push(&p.location + &e * s);
            seeds.push(&p.location - &e * s);
        }
    }
    seeds.retain(|s| land.domain.contains(s));
    critical::census_from_seeds(land, opts, &seeds)
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub census: CensusOptions,
    /// Build connection DAGs (needed for flip brackets).
    pub with_dag: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            census: CensusOptions::default(),
            with_dag: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub eta: f64,
    /// Differs from `eta` when the grid value was non-Morse.
    pub evaluated_at: f64,
    pub census: Vec<CriticalPoint>,
    pub counts: Counts,
    pub morse: MorseReport,
    pub poincare_hopf: PoincareHopf,
    pub dag: Option<LandscapeDag>,
    pub dag_error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BracketKind {
    /// Census cardinality changes by an even number.
    SaddleNode,
    /// Same census, one separatrix changes destination.
    Flip,
    /// Cardinality changes by an odd number: a critical point crossed the
    /// domain boundary.
    BoundaryCrossing,
}

#[derive(Debug, Clone, Serialize)]
pub struct Bracket {
    pub kind: BracketKind,
    pub lo: f64,
    pub hi: f64,
    pub from: Counts,
    pub to: Counts,
    /// For flips: location of the retargeting saddle at `lo`.
    pub source: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub family: String,
    pub points: Vec<SweepPoint>,
    pub brackets: Vec<Bracket>,
}

impl SweepReport {
    /// CSV rows `eta,attractors,saddles,repellors,min_abs_eigenvalue`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Input(format!("csv output: {e}"));
        w.write_record(["eta", "attractors", "saddles", "repellors", "min_abs_eigenvalue"]).map_err(io)?;
        for p in &self.points {
            w.write_record([
                linalg::round_sig(p.eta, 12).to_string(),
                p.counts.attractors.to_string(),
                p.counts.saddles.to_string(),
                p.counts.repellors.to_string(),
                p.morse.min_abs_eigenvalue.map_or(String::new(), |v| linalg::round_sig(v, 12).to_string()),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Input(format!("csv output: {e}")))
    }
}

fn evaluate(family: &ParameterFamily, eta: f64, opts: &SweepOptions) -> Result<SweepPoint> {
    let mut at = eta;
    let mut land = family.at(at)?;
    let mut census = robust_census(&land, &opts.census)?;
    if !morse_report(&census).morse_ok {
        at = eta + NON_MORSE_SHIFT;
        land = family.at(at)?;
        census = robust_census(&land, &opts.census)?;
    }
    let morse = morse_report(&census);
    let (dag, dag_error) = if opts.with_dag {
        match build_dag(&land, &census) {
            Ok(d) => (Some(d), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    Ok(SweepPoint {
        eta,
        evaluated_at: at,
        counts: counts(&census),
        poincare_hopf: poincare_hopf_check(&census, land.dimension()),
        morse,
        census,
        dag,
        dag_error,
    })
}

/// Census (and DAG) at every grid value, with brackets where the census
/// cardinality changes or a single edge is retargeted.
pub fn sweep(family: &ParameterFamily, grid: &[f64], opts: &SweepOptions) -> Result<SweepReport> {
    if family.arity() != 1 {
        return Err(Error::Input("sweep needs a one-parameter family".into()));
    }
    if grid.len() < 3 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Input("sweep grid must be increasing with at least 3 values".into()));
    }
    let points: Vec<SweepPoint> = grid.par_iter().map(|&e| evaluate(family, e, opts)).collect::<Result<_>>()?;
    let mut brackets = Vec::new();
    for w in points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let d = b.counts.total() as i64 - a.counts.total() as i64;
        let mut push = |kind, source| {
            brackets.push(Bracket {
                kind,
                lo: a.eta,
                hi: b.eta,
                from: a.counts,
                to: b.counts,
                source,
            })
        };
        if d != 0 {
            push(if d % 2 == 0 { BracketKind::SaddleNode } else { BracketKind::BoundaryCrossing }, None);
        } else if let (Some(da), Some(db)) = (&a.dag, &b.dag) {
            if let Some((s, _, _)) = dag_edit_diff(da, db).single_retarget() {
                push(BracketKind::Flip, Some(da.nodes[s].location.clone()));
            }
        }
    }
    Ok(SweepReport {
        family: family.name.clone(),
        points,
        brackets,
    })
}

/// Uniform grid of `n` values over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    SaddleNode,
    HeteroclinicFlip,
    CuspCandidate,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Witness {
    SaddleNode {
        /// Degenerate critical point (polished when possible).
        point: Vec<f64>,
        /// Parameter value at which `point` is degenerate.
        polished_value: f64,
        min_abs_eigenvalue: f64,
        /// Smallest |eigenvalue| over all other critical points on the
        /// richer side of the bracket.
        others_min_abs_eigenvalue: Option<f64>,
        kernel: Vec<f64>,
        /// Reduced drift `-a s^2 + b eta` along `kernel`, oriented so
        /// that `a >= 0`.
        a: f64,
        b: f64,
        /// `a` for the unoriented `kernel` (used for cusp detection).
        signed_a: f64,
        generic: bool,
        /// The pair exists above the value rather than below.
        creates_with_increasing: bool,
    },
    Flip {
        saddle: Vec<f64>,
        from_attractor: Vec<f64>,
        to_attractor: Vec<f64>,
        near_saddle: Option<Vec<f64>>,
        closest_approach: f64,
        single_retarget: bool,
    },
    Cusp {
        point: Vec<f64>,
        cubic: f64,
        nondegenerate: bool,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct BifurcationEvent {
    pub kind: EventKind,
    pub value: Vec<f64>,
    pub bracket: (f64, f64),
    pub witness: Witness,
}

fn kernel_pair(h: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let (vals, vecs) = linalg::sym_eigen(h);
    let k = (0..vals.len()).min_by(|&a, &b| vals[a].abs().total_cmp(&vals[b].abs())).unwrap_or(0);
    (vals[k], vecs.column(k).into_owned())
}

/// `d^k/ds^k (e' H(x + s e) e)` at `s = 0` for `k = 1, 2`.
fn hessian_directional(land: &Landscape, x: &DVector<f64>, e: &DVector<f64>) -> (f64, f64) {
    let q = |s: f64| {
        let y = x + e * s;
        (e.transpose() * land.potential.hessian(&y) * e)[(0, 0)]
    };
    let h = KERNEL_STEP;
    let (qp, q0, qm) = (q(h), q(0.0), q(-h));
    ((qp - qm) / (2.0 * h), (qp - 2.0 * q0 + qm) / (h * h))
}

/// Reduced-drift coefficients along kernel vector `e` at a degenerate point:
/// with `f(s) = -(e . grad V)(x + s e) / (e' g e)` returns
/// `(-f''/2, f'''/6)`.
pub fn kernel_coefficients(land: &Landscape, x: &DVector<f64>, e: &DVector<f64>) -> (f64, f64) {
    let geo = (e.transpose() * land.metric.matrix(x) * e)[(0, 0)];
    let (d3, d4) = hessian_directional(land, x, e);
    (0.5 * d3 / geo, -d4 / (6.0 * geo))
}

fn fd_jacobian(f: &dyn Fn(&DVector<f64>) -> DVector<f64>, z: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let f0 = f(z);
    let mut j = DMatrix::zeros(f0.len(), z.len());
    for i in 0..z.len() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[i] += h;
        zm[i] -= h;
        j.set_column(i, &((f(&zp) - f(&zm)) / (2.0 * h)));
    }
    j
}

/// Solves `grad V = 0`, `lambda_0 = 0` for `(x, eta)` from a guess.
fn polish_fold(family: &ParameterFamily, x0: &DVector<f64>, eta0: f64) -> Option<(DVector<f64>, f64)> {
    let n = x0.len();
    let f = |z: &DVector<f64>| -> DVector<f64> {
        let x = z.rows(0, n).into_owned();
        match family.at(z[n]) {
            Ok(l) if l.domain.contains(&x) => {
                let g = l.gradient(&x);
                let (lam, _) = kernel_pair(&l.potential.hessian(&x));
                let mut out = DVector::zeros(n + 1);
                out.rows_mut(0, n).copy_from(&g);
                out[n] = lam;
                out
            }
            _ => DVector::from_element(n + 1, f64::NAN),
        }
    };
    let mut z0 = DVector::zeros(n + 1);
    z0.rows_mut(0, n).copy_from(x0);
    z0[n] = eta0;
    let z = linalg::solve_system(f, |z| fd_jacobian(&f, z, 1e-7), |_| true, &z0, 1e-11, 40)?;
    Some((z.rows(0, n).into_owned(), z[n]))
}

/// Bisects a census-cardinality bracket down to `BISECTION_TOL` and
/// characterizes the fold found there.
pub fn locate_saddle_node(family: &ParameterFamily, lo: f64, hi: f64, opts: &CensusOptions) -> Result<BifurcationEvent> {
    locate_saddle_node_tol(family, lo, hi, opts, BISECTION_TOL)
}

pub fn locate_saddle_node_tol(family: &ParameterFamily, lo: f64, hi: f64, opts: &CensusOptions, tol: f64) -> Result<BifurcationEvent> {
    if family.arity() != 1 {
        return Err(Error::Input("saddle-node location needs a one-parameter family".into()));
    }
    let census_at = |e: f64| -> Result<Vec<CriticalPoint>> { robust_census(&family.at(e)?, opts) };
    let (mut lo, mut hi) = (lo, hi);
    let mut c_lo = census_at(lo)?;
    let mut c_hi = census_at(hi)?;
    let n_lo = c_lo.len();
    if n_lo == c_hi.len() {
        return Err(Error::Input(format!("census has {n_lo} points at both ends of ({lo}, {hi})")));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let c = census_at(mid)?;
        if c.len() == n_lo {
            lo = mid;
            c_lo = c;
        } else {
            hi = mid;
            c_hi = c;
        }
    }
    let creates = c_hi.len() > c_lo.len();
    let (rich, rich_eta) = if creates { (&c_hi, hi) } else { (&c_lo, lo) };
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..rich.len() {
        for j in i + 1..rich.len() {
            if rich[i].index.abs_diff(rich[j].index) == 1 {
                let d = (&rich[i].location - &rich[j].location).norm();
                if best.is_none_or(|b| d < b.0) {
                    best = Some((d, i, j));
                }
            }
        }
    }
    let (_, i, j) = best.ok_or_else(|| Error::Numeric("no merging pair found at the fold".into()))?;
    let guess = (&rich[i].location + &rich[j].location) * 0.5;
    let value = 0.5 * (lo + hi);
    let (point, at) = match polish_fold(family, &guess, rich_eta) {
        Some((x, e)) if (e - value).abs() <= 10.0 * tol.max(BISECTION_TOL) => (x, e),
        _ => (guess, value),
    };
    let land = family.at(at)?;
    let (lam, e) = kernel_pair(&land.potential.hessian(&point));
    let (signed_a, _) = kernel_coefficients(&land, &point, &e);
    let geo = (e.transpose() * land.metric.matrix(&point) * &e)[(0, 0)];
    let gp = family.at(at + PARAM_STEP)?.gradient(&point);
    let gm = family.at(at - PARAM_STEP)?.gradient(&point);
    let df = -e.dot(&((gp - gm) / (2.0 * PARAM_STEP))) / geo;
    let sign = if signed_a < 0.0 { -1.0 } else { 1.0 };
    let (a, b) = (signed_a * sign, df * sign);
    let others = rich
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != i && *k != j)
        .map(|(_, p)| p.min_abs_eigenvalue())
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
    Ok(BifurcationEvent {
        kind: EventKind::SaddleNode,
        value: vec![value],
        bracket: (lo, hi),
        witness: Witness::SaddleNode {
            point: point.iter().copied().collect(),
            polished_value: at,
            min_abs_eigenvalue: lam.abs(),
            others_min_abs_eigenvalue: others,
            kernel: e.iter().copied().collect(),
            a,
            b,
            signed_a,
            generic: a.abs() > GENERICITY_TOL && b.abs() > GENERICITY_TOL,
            creates_with_increasing: creates,
        },
    })
}

struct Branch {
    destination: DVector<f64>,
    closest: Option<(DVector<f64>, f64)>,
}

/// Destinations of the two branches of an index-one saddle near `guess`,
/// with the branch direction aligned to `reference`.
/// Also returns the attractor locations of the census.
#[allow(clippy::type_complexity)]
fn saddle_branches(
    land: &Landscape,
    guess: &DVector<f64>,
    reference: Option<&DVector<f64>>,
    opts: &CensusOptions,
) -> Result<(Vec<Branch>, DVector<f64>, DVector<f64>, Vec<DVector<f64>>)> {
    let census = robust_census(land, opts)?;
    let s = (0..census.len())
        .filter(|&k| census[k].kind == Kind::Saddle && census[k].index == 1)
        .min_by(|&a, &b| {
            (&census[a].location - guess)
                .norm()
                .total_cmp(&(&census[b].location - guess).norm())
        })
        .ok_or_else(|| Error::Input("no index-one saddle to track".into()))?;
    let mut e = unstable_directions(land, &census[s]).column(0).into_owned();
    if reference.is_some_and(|r| r.dot(&e) < 0.0) {
        e = -e;
    }
    let loc = census[s].location.clone();
    let branches = [e.clone(), -e.clone()]
        .iter()
        .map(|u| {
            let sep = connectome::trace(land, &census, s, &(&loc + u * connectome::SEPARATRIX_OFFSET))?;
            Ok(Branch {
                destination: census[sep.destination].location.clone(),
                closest: sep.closest_saddle.map(|(k, d)| (census[k].location.clone(), d)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let attractors = census
        .iter()
        .filter(|p| p.kind == Kind::Attractor)
        .map(|p| p.location.clone())
        .collect();
    Ok((branches, e, loc, attractors))
}

/// Bisects on the destination of the tracked saddle's switching branch.
pub fn locate_flip(family: &ParameterFamily, lo: f64, hi: f64, saddle: &[f64], opts: &CensusOptions) -> Result<BifurcationEvent> {
    if family.arity() != 1 {
        return Err(Error::Input("flip location needs a one-parameter family".into()));
    }
    let guess = DVector::from_column_slice(saddle);
    let (b_lo, e_lo, s_lo, att_lo) = saddle_branches(&family.at(lo)?, &guess, None, opts)?;
    let (b_hi, _, _, _) = saddle_branches(&family.at(hi)?, &s_lo, Some(&e_lo), opts)?;
    // Destinations are identified with the nearest attractor at `lo`.
    let identity = |x: &DVector<f64>| {
        (0..att_lo.len()).min_by(|&a, &b| (&att_lo[a] - x).norm().total_cmp(&(&att_lo[b] - x).norm()))
    };
    let switching = (0..2)
        .find(|&k| identity(&b_lo[k].destination) != identity(&b_hi[k].destination))
        .ok_or_else(|| Error::Input(format!("separatrix destinations agree at both ends of ({lo}, {hi})")))?;
    let old = b_lo[switching].destination.clone();
    let new = b_hi[switching].destination.clone();
    let (mut lo, mut hi) = (lo, hi);
    let (mut s_ref, mut e_ref) = (s_lo, e_lo);
    let mut last_lo = b_lo;
    let mut last_hi = b_hi;
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        let (b, e, s, _) = saddle_branches(&family.at(mid)?, &s_ref, Some(&e_ref), opts)?;
        let d = &b[switching].destination;
        if (d - &old).norm() < (d - &new).norm() {
            lo = mid;
            last_lo = b;
        } else {
            hi = mid;
            last_hi = b;
        }
        s_ref = s;
        e_ref = e;
    }
    let closest = [&last_lo[switching], &last_hi[switching]]
        .iter()
        .filter_map(|b| b.closest.clone())
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let dag_at = |e: f64| -> Result<LandscapeDag> {
        let l = family.at(e)?;
        build_dag(&l, &robust_census(&l, opts)?)
    };
    let single = match (dag_at(lo), dag_at(hi)) {
        (Ok(a), Ok(b)) => dag_edit_diff(&a, &b).single_retarget().is_some(),
        _ => false,
    };
    Ok(BifurcationEvent {
        kind: EventKind::HeteroclinicFlip,
        value: vec![0.5 * (lo + hi)],
        bracket: (lo, hi),
        witness: Witness::Flip {
            saddle: s_ref.iter().copied().collect(),
            from_attractor: last_lo[switching].destination.iter().copied().collect(),
            to_attractor: last_hi[switching].destination.iter().copied().collect(),
            near_saddle: closest.as_ref().map(|c| c.0.iter().copied().collect()),
            closest_approach: closest.map_or(f64::INFINITY, |c| c.1),
            single_retarget: single,
        },
    })
}

/// Locates every saddle-node and flip bracket of a sweep.
pub fn locate_events(family: &ParameterFamily, report: &SweepReport, opts: &CensusOptions) -> Vec<Result<BifurcationEvent>> {
    report
        .brackets
        .par_iter()
        .filter_map(|b| match b.kind {
            BracketKind::SaddleNode => Some(locate_saddle_node(family, b.lo, b.hi, opts)),
            BracketKind::Flip => b.source.as_ref().map(|s| locate_flip(family, b.lo, b.hi, s, opts)),
            BracketKind::BoundaryCrossing => None,
        })
        .collect()
}

/// A located saddle-node in a two-parameter scan.
#[derive(Debug, Clone, Serialize)]
pub struct ScanEvent {
    pub eta: [f64; 2],
    /// Axis varied by the detecting line.
    pub axis: usize,
    pub point: Vec<f64>,
    pub kernel: Vec<f64>,
    pub signed_a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CuspCandidate {
    pub eta: [f64; 2],
    pub point: Vec<f64>,
    /// Whether the candidate converged onto a point where both the
    /// Hessian kernel eigenvalue and the quadratic coefficient vanish.
    pub refined: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub family: String,
    pub grid: Vec<Vec<f64>>,
    pub events: Vec<ScanEvent>,
    /// Saddle-node curves as ordered indices into `events`.
    pub curves: Vec<Vec<usize>>,
    pub cusp_candidates: Vec<CuspCandidate>,
    pub failures: Vec<String>,
}

fn chain(events: &[ScanEvent], max_jump: f64) -> Vec<Vec<usize>> {
    let dist = |a: usize, b: usize| {
        let (p, q) = (events[a].eta, events[b].eta);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    };
    let mut used = vec![false; events.len()];
    let mut curves = Vec::new();
    for start in 0..events.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut curve = vec![start];
        for forward in [true, false] {
            loop {
                let end = if forward { *curve.last().unwrap() } else { curve[0] };
                let next = (0..events.len())
                    .filter(|&k| !used[k] && dist(end, k) <= max_jump)
                    .min_by(|&a, &b| dist(end, a).total_cmp(&dist(end, b)));
                match next {
                    Some(k) => {
                        used[k] = true;
                        if forward {
                            curve.push(k);
                        } else {
                            curve.insert(0, k);
                        }
                    }
                    None => break,
                }
            }
        }
        curves.push(curve);
    }
    curves
}

/// Solves `grad V = 0`, `lambda_0 = 0`, `a = 0` for `(x, eta1, eta2)`.
/// Refined cusp where a scan line crosses the codimension-two point, seeded
/// from the most degenerate critical point inside the bracket.
fn crossing_cusp(
    family: &ParameterFamily,
    line: &ParameterFamily,
    br: &Bracket,
    eta: [f64; 2],
    opts: &CensusOptions,
) -> Option<CuspCandidate> {
    let mid = 0.5 * (br.lo + br.hi);
    let census = robust_census(&line.at(mid).ok()?, opts).ok()?;
    let seed = census
        .iter()
        .min_by(|a, b| a.min_abs_eigenvalue().total_cmp(&b.min_abs_eigenvalue()))?;
    let (eta, x) = refine_cusp(family, eta, &seed.location)?;
    Some(CuspCandidate {
        eta,
        point: x.iter().copied().collect(),
        refined: true,
    })
}

pub fn refine_cusp(family: &ParameterFamily, eta0: [f64; 2], x0: &DVector<f64>) -> Option<([f64; 2], DVector<f64>)> {
    let n = x0.len();
    let land0 = family.build(&eta0).ok()?;
    let (_, e_ref) = kernel_pair(&land0.potential.hessian(x0));
    let f = |z: &DVector<f64>| -> DVector<f64> {
        let x = z.rows(0, n).into_owned();
        match family.build(&[z[n], z[n + 1]]) {
            Ok(l) if l.domain.contains(&x) => {
                let (lam, mut e) = kernel_pair(&l.potential.hessian(&x));
                if e.dot(&e_ref) < 0.0 {
                    e = -e;
                }
                let (a, _) = kernel_coefficients(&l, &x, &e);
                let mut out = DVector::zeros(n + 2);
                out.rows_mut(0, n).copy_from(&l.gradient(&x));
                out[n] = lam;
                out[n + 1] = a;
                out
            }
            _ => DVector::from_element(n + 2, f64::NAN),
        }
    };
    let mut z0 = DVector::zeros(n + 2);
    z0.rows_mut(0, n).copy_from(x0);
    z0[n] = eta0[0];
    z0[n + 1] = eta0[1];
    let z = linalg::solve_system(f, |z| fd_jacobian(&f, z, 1e-6), |_| true, &z0, 1e-9, 60)?;
    Some(([z[n], z[n + 1]], z.rows(0, n).into_owned()))
}

/// Saddle-node detection along every row and column of an `n x n` grid,
/// chaining of located events into curves, and cusp candidates where the
/// kernel-aligned quadratic coefficient changes sign along a curve.
pub fn two_parameter_scan(family: &ParameterFamily, n: usize, opts: &CensusOptions) -> Result<ScanReport> {
    if family.arity() != 2 {
        return Err(Error::Input("two-parameter scan needs a two-parameter family".into()));
    }
    if n < 3 {
        return Err(Error::Input("scan grid needs at least 3 values per axis".into()));
    }
    let g: Vec<Vec<f64>> = family.range.iter().map(|&(a, b)| linspace(a, b, n)).collect();
    let sweep_opts = SweepOptions {
        census: opts.clone(),
        with_dag: false,
    };
    let lines: Vec<(usize, f64)> = (0..2).flat_map(|axis| g[1 - axis].iter().map(move |&v| (axis, v))).collect();
    #[allow(clippy::type_complexity)]
    let found: Vec<(Vec<ScanEvent>, Vec<CuspCandidate>, Vec<String>)> = lines
        .par_iter()
        .map(|&(axis, v)| {
            let mut fixed = [0.0; 2];
            fixed[1 - axis] = v;
            let line = family.slice(axis, &fixed);
            let mut events = Vec::new();
            let mut crossings = Vec::new();
            let mut failures = Vec::new();
            let rep = match sweep(&line, &g[axis], &sweep_opts) {
                Ok(r) => r,
                Err(e) => return (events, crossings, vec![format!("line axis {axis} at {v}: {e}")]),
            };
            for br in rep.brackets.iter().filter(|b| b.kind == BracketKind::SaddleNode) {
                match locate_saddle_node(&line, br.lo, br.hi, opts) {
                    Ok(ev) => {
                        if let Witness::SaddleNode { point, kernel, signed_a, b, .. } = ev.witness {
                            let mut eta = fixed;
                            eta[axis] = ev.value[0];
                            events.push(ScanEvent {
                                eta,
                                axis,
                                point,
                                kernel,
                                signed_a,
                                b,
                            });
                        }
                    }
                    Err(e) => {
                        // A grid line through the cusp itself sees a pitchfork, not a fold.
                        let mut eta = fixed;
                        eta[axis] = 0.5 * (br.lo + br.hi);
                        match crossing_cusp(family, &line, br, eta, opts) {
                            Some(c) => crossings.push(c),
                            None => failures.push(format!("bracket ({}, {}) on axis {axis} at {v}: {e}", br.lo, br.hi)),
                        }
                    }
                }
            }
            (events, crossings, failures)
        })
        .collect();
    let mut events = Vec::new();
    let mut crossings: Vec<CuspCandidate> = Vec::new();
    let mut failures = Vec::new();
    for (e, c, f) in found {
        events.extend(e);
        crossings.extend(c);
        failures.extend(f);
    }
    let spacing = family
        .range
        .iter()
        .map(|&(a, b)| (b - a) / (n - 1) as f64)
        .fold(0.0, f64::max);
    let curves = chain(&events, 2.0 * spacing);
    let mut cusp_candidates = Vec::new();
    for c in &curves {
        let mut prev_e: Option<DVector<f64>> = None;
        let mut prev_a = 0.0;
        for (pos, &k) in c.iter().enumerate() {
            let mut e = DVector::from_column_slice(&events[k].kernel);
            let mut a = events[k].signed_a;
            if let Some(pe) = &prev_e {
                if pe.dot(&e) < 0.0 {
                    e = -e;
                    a = -a;
                }
            }
            if pos > 0 && prev_a * a < 0.0 {
                let j = c[pos - 1];
                let w = prev_a.abs() / (prev_a.abs() + a.abs());
                let eta = [
                    events[j].eta[0] + w * (events[k].eta[0] - events[j].eta[0]),
                    events[j].eta[1] + w * (events[k].eta[1] - events[j].eta[1]),
                ];
                let pj = DVector::from_column_slice(&events[j].point);
                let pk = DVector::from_column_slice(&events[k].point);
                let guess = &pj + (pk - &pj) * w;
                cusp_candidates.push(match refine_cusp(family, eta, &guess) {
                    Some((eta, x)) => CuspCandidate {
                        eta,
                        point: x.iter().copied().collect(),
                        refined: true,
                    },
                    None => CuspCandidate {
                        eta,
                        point: guess.iter().copied().collect(),
                        refined: false,
                    },
                });
            }
            prev_e = Some(e);
            prev_a = a;
        }
    }
    // Several curves (and grid lines through the cusp) report the same
    // point; keep one per 2-spacing neighbourhood, preferring refined ones.
    let mut merged: Vec<CuspCandidate> = Vec::new();
    for c in cusp_candidates.into_iter().chain(crossings) {
        match merged
            .iter_mut()
            .find(|k| (k.eta[0] - c.eta[0]).hypot(k.eta[1] - c.eta[1]) < 2.0 * spacing)
        {
            Some(k) if !k.refined && c.refined => *k = c,
            Some(_) => {}
            None => merged.push(c),
        }
    }
    Ok(ScanReport {
        family: family.name.clone(),
        grid: g,
        events,
        curves,
        cusp_candidates: merged,
        failures,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CuspReport {
    pub eta: [f64; 2],
    pub point: Vec<f64>,
    pub min_abs_eigenvalue: f64,
    pub quadratic: f64,
    /// Coefficient of `s^3` in the reduced drift along the kernel.
    pub cubic: f64,
    pub nondegenerate: bool,
}

/// Third-order coefficient of the reduced drift at a cusp candidate.
pub fn cusp_check(family: &ParameterFamily, candidate: &CuspCandidate) -> Result<CuspReport> {
    if family.arity() != 2 {
        return Err(Error::Input("cusp check needs a two-parameter family".into()));
    }
    let land = family.build(&candidate.eta)?;
    let x0 = DVector::from_column_slice(&candidate.point);
    let x = critical::newton_refine(&land, &x0, critical::MAX_NEWTON_ITERS, critical::GRAD_TOL).unwrap_or(x0);
    let (lam, e) = kernel_pair(&land.potential.hessian(&x));
    if lam.abs() > CUSP_KERNEL_TOL {
        return Err(Error::NotCandidate {
            min_abs_eigenvalue: lam.abs(),
        });
    }
    let (eta, x) = refine_cusp(family, candidate.eta, &x).unwrap_or((candidate.eta, x));
    let land = family.build(&eta)?;
    let (lam, e2) = kernel_pair(&land.potential.hessian(&x));
    let e2 = if e2.dot(&e) < 0.0 { -e2 } else { e2 };
    let (quadratic, cubic) = kernel_coefficients(&land, &x, &e2);
    Ok(CuspReport {
        eta,
        point: x.iter().copied().collect(),
        min_abs_eigenvalue: lam.abs(),
        quadratic,
        cubic,
        nondegenerate: cubic.abs() > GENERICITY_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> CensusOptions {
        CensusOptions::default()
    }

    #[test]
    fn fold_self_test_normal_form() {
        let ev = locate_saddle_node(&fold_family(), -0.5, 0.7, &opts()).unwrap();
        assert!(ev.value[0].abs() < 1e-6);
        let Witness::SaddleNode { point, a, b, min_abs_eigenvalue, generic, creates_with_increasing, .. } = ev.witness else {
            panic!("wrong witness")
        };
        assert!(point[0].abs() < 1e-4);
        assert!((a - 1.0).abs() < 1e-4 && (b - 1.0).abs() < 1e-4, "a = {a}, b = {b}");
        assert!(min_abs_eigenvalue < 1e-5);
        assert!(generic && creates_with_increasing);
    }

    #[test]
    fn equal_counts_are_rejected() {
        assert!(matches!(
            locate_saddle_node(&constant_family(1), -1.0, 1.0, &opts()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn constant_family_has_no_brackets() {
        let r = sweep(&constant_family(1), &[-1.0, 0.0, 1.0], &SweepOptions::default()).unwrap();
        assert!(r.brackets.is_empty());
        assert!(matches!(
            locate_flip(&constant_family(1), -1.0, 1.0, &[0.0, 0.0], &opts()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn tilted_dual_well_has_no_flip() {
        let fam = dual_well_tilt_family((-0.2, 0.2));
        let r = sweep(&fam, &linspace(-0.2, 0.2, 9), &SweepOptions::default()).unwrap();
        assert!(r.brackets.is_empty());
        assert!(locate_flip(&fam, -0.2, 0.2, &[0.0, 0.0], &opts()).is_err());
    }

    #[test]
    fn saddle_node_coarse_sweep() {
        let r = sweep(&saddle_node_family(), &[-1.0, -0.5, 0.0, 0.5, 1.0], &SweepOptions::default()).unwrap();
        let sn: Vec<&Bracket> = r.brackets.iter().filter(|b| b.kind == BracketKind::SaddleNode).collect();
        assert_eq!(sn.len(), 2);
        assert!(sn[0].hi <= 0.0 && sn[1].lo >= 0.0);
        assert!(r.points.iter().all(|p| p.poincare_hopf.pass));
    }

    #[test]
    fn cusp_unfolding_check() {
        let c = CuspCandidate {
            eta: [0.0, 0.0],
            point: vec![0.0],
            refined: false,
        };
        let rep = cusp_check(&cusp_family(), &c).unwrap();
        assert!((rep.cubic + 1.0).abs() < 1e-4, "cubic {}", rep.cubic);
        assert!(rep.nondegenerate);
        let regular = CuspCandidate {
            eta: [0.5, -0.5],
            point: vec![0.7],
            refined: false,
        };
        assert!(matches!(cusp_check(&cusp_family(), &regular), Err(Error::NotCandidate { .. })));
    }

    #[test]
    fn cusp_scan_meets_at_origin() {
        let rep = two_parameter_scan(&cusp_family(), 11, &opts()).unwrap();
        assert!(!rep.events.is_empty());
        assert!(rep.failures.is_empty(), "{:?}", rep.failures);
        assert_eq!(rep.cusp_candidates.len(), 1);
        let c = &rep.cusp_candidates[0];
        assert!(c.refined && c.eta[0].abs() < 0.05 && c.eta[1].abs() < 0.05);
        // Every located fold satisfies the discriminant 4 eta2^3 = 27 eta1^2.
        for e in &rep.events {
            let [e1, e2] = e.eta;
            assert!((4.0 * e2.powi(3) - 27.0 * e1 * e1).abs() < 1e-4, "{e1} {e2}");
        }
    }

    #[test]
    fn constant_scan_is_empty() {
        let rep = two_parameter_scan(&constant_family(2), 5, &opts()).unwrap();
        assert!(rep.events.is_empty() && rep.cusp_candidates.is_empty());
    }

    #[test]
    fn chaining_respects_jump() {
        let ev = |x: f64, y: f64| ScanEvent {
            eta: [x, y],
            axis: 0,
            point: vec![0.0],
            kernel: vec![1.0],
            signed_a: 1.0,
            b: 1.0,
        };
        let events = vec![ev(0.0, 0.0), ev(0.1, 0.0), ev(0.2, 0.0), ev(1.0, 1.0)];
        let curves = chain(&events, 0.15);
        assert_eq!(curves.len(), 2);
        assert_eq!(curves[0], vec![0, 1, 2]);
    }

    #[test]
    fn slices_fix_the_other_axis() {
        let fam = cusp_family().slice(1, &[0.3, 0.0]);
        assert_eq!(fam.arity(), 1);
        let l = fam.at(0.5).unwrap();
        let x = DVector::from_element(1, 1.0);
        // V(1) = 1/4 - eta2/2 - eta1 with eta1 = 0.3, eta2 = 0.5.
        assert!((l.value(&x) - (0.25 - 0.25 - 0.3)).abs() < 1e-15);
    }
}
