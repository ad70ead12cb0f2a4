//! Critical-point census: damped Newton from a seed lattice, Morse
//! classification, Poincaré–Hopf and resonance checks.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landscape::Landscape;
use crate::linalg;

pub const HYPERBOLIC_TOL: f64 = 1e-6;
pub const DEDUP_RADIUS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-10;
pub const MAX_NEWTON_ITERS: usize = 60;
/// Initial Levenberg damping, grown tenfold on each rejected step.
pub const LM_DAMPING: f64 = 1e-6;
/// `classify` refuses points with a larger gradient.
pub const CLASSIFY_GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Attractor,
    Saddle,
    Repellor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    #[serde(with = "linalg::dvec")]
    pub location: DVector<f64>,
    pub value: f64,
    /// Hessian spectrum, ascending.
    pub eigenvalues: Vec<f64>,
    pub index: usize,
    pub kind: Kind,
    pub hyperbolic: bool,
}

impl CriticalPoint {
    pub fn min_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct CensusOptions {
    pub grid_density: usize,
    pub hyperbolic_tol: f64,
    pub dedup_radius: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for CensusOptions {
    fn default() -> Self {
        Self {
            grid_density: 24,
            hyperbolic_tol: HYPERBOLIC_TOL,
            dedup_radius: DEDUP_RADIUS,
            grad_tol: GRAD_TOL,
            max_iter: MAX_NEWTON_ITERS,
        }
    }
}

/// Damped Newton on `grad V = 0`: a full Newton step when it reduces
/// `|grad V|`, otherwise Levenberg–Marquardt steps with growing damping.
pub fn newton_refine(land: &Landscape, x0: &DVector<f64>, max_iter: usize, grad_tol: f64) -> Option<DVector<f64>> {
    let n = land.dimension();
    let max_step = land.radius();
    let mut x = x0.clone();
    let mut g = land.gradient(&x);
    let mut r = g.norm();
    if !r.is_finite() {
        return None;
    }
    for _ in 0..max_iter {
        if r < grad_tol {
            return Some(x);
        }
        let h = land.potential.hessian(&x);
        let try_step = |dx: DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, f64)> {
            let len = dx.norm();
            let dx = if len > max_step { dx * (max_step / len) } else { dx };
            let xn = &x + dx;
            if !land.domain.contains(&xn) {
                return None;
            }
            let gn = land.gradient(&xn);
            let rn = gn.norm();
            (rn.is_finite() && rn < r).then_some((xn, gn, rn))
        };
        let mut next = h.clone().lu().solve(&(-&g)).and_then(&try_step);
        if next.is_none() {
            let hth = h.transpose() * &h;
            let rhs = -(h.transpose() * &g);
            let mut mu = LM_DAMPING;
            while next.is_none() && mu < 1e12 {
                let m = &hth + DMatrix::identity(n, n) * mu;
                next = m.cholesky().map(|c| c.solve(&rhs)).and_then(&try_step);
                mu *= 10.0;
            }
        }
        match next {
            Some((xn, gn, rn)) => {
                x = xn;
                g = gn;
                r = rn;
            }
            None => break,
        }
    }
    (r < grad_tol).then_some(x)
}

/// Lattice of cell centers covering the domain's bounding box.
pub fn seed_lattice(land: &Landscape, density: usize) -> Vec<DVector<f64>> {
    let n = land.dimension();
    let r = land.radius();
    let (lo, hi) = match land.domain.bounds {
        Some((a, b)) => (a.max(-r), b.min(r)),
        None => (-r, r),
    };
    let total = density.checked_pow(n as u32).unwrap_or(usize::MAX);
    let mut seeds = Vec::new();
    if total > 5_000_000 {
        return seeds;
    }
    let cell = (hi - lo) / density as f64;
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let x = DVector::from_fn(n, |i, _| lo + (idx[i] as f64 + 0.5) * cell);
        if land.domain.contains(&x) {
            seeds.push(x);
        }
        for k in idx.iter_mut() {
            *k += 1;
            if *k < density {
                break;
            }
            *k = 0;
        }
    }
    seeds
}

/// Census seeded from a `grid_density^n` lattice.
pub fn find_critical_points(land: &Landscape, grid_density: usize) -> Result<Vec<CriticalPoint>> {
    census(
        land,
        &CensusOptions {
            grid_density,
            ..Default::default()
        },
        &[],
    )
}

/// Census from the lattice plus `extra_seeds` (e.g. a previous census).
pub fn census(land: &Landscape, opts: &CensusOptions, extra_seeds: &[DVector<f64>]) -> Result<Vec<CriticalPoint>> {
    if opts.grid_density < 8 {
        return Err(Error::Input(format!(
            "grid density must be at least 8, got {}",
            opts.grid_density
        )));
    }
    let n = land.dimension();
    if opts.grid_density.checked_pow(n as u32).is_none_or(|t| t > 5_000_000) {
        return Err(Error::Config(format!(
            "seed lattice {}^{n} is too large; supply seeds instead",
            opts.grid_density
        )));
    }
    let mut seeds: Vec<DVector<f64>> = extra_seeds
        .iter()
        .filter(|s| land.domain.contains(s))
        .cloned()
        .collect();
    seeds.extend(seed_lattice(land, opts.grid_density));
    let first = census_from_seeds(land, opts, &seeds)?;
    let passes = pass_seeds(land, &first);
    if passes.is_empty() {
        return Ok(first);
    }
    let mut again: Vec<DVector<f64>> = first.iter().map(|p| p.location.clone()).collect();
    again.extend(passes);
    census_from_seeds(land, opts, &again)
}

/// Samples per attractor-to-attractor segment when seeding passes.
const PASS_SAMPLES: usize = 64;
/// Above this many attractors the pairwise pass seeding is skipped.
const MAX_PASS_ATTRACTORS: usize = 64;

/// Second-round seeds for saddles and maxima whose Newton basins are too
/// narrow for the lattice (sharply separated wells): the highest point on
/// each segment joining two attractors, and the mean of the attractors.
fn pass_seeds(land: &Landscape, first: &[CriticalPoint]) -> Vec<DVector<f64>> {
    let minima: Vec<&DVector<f64>> = first.iter().filter(|p| p.index == 0).map(|p| &p.location).collect();
    if minima.len() < 2 || minima.len() > MAX_PASS_ATTRACTORS {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, a) in minima.iter().enumerate() {
        for b in &minima[i + 1..] {
            let top = (1..PASS_SAMPLES)
                .map(|k| *a + (*b - *a) * (k as f64 / PASS_SAMPLES as f64))
                .max_by(|x, y| land.value(x).total_cmp(&land.value(y)));
            out.extend(top);
        }
    }
    let mean = minima.iter().fold(DVector::zeros(land.dimension()), |acc, m| acc + *m) / minima.len() as f64;
    out.push(mean);
    out.retain(|x| land.domain.contains(x));
    out
}

pub fn census_from_seeds(land: &Landscape, opts: &CensusOptions, seeds: &[DVector<f64>]) -> Result<Vec<CriticalPoint>> {
    let roots: Vec<Option<DVector<f64>>> = seeds
        .par_iter()
        .map(|s| newton_refine(land, s, opts.max_iter, opts.grad_tol))
        .collect();
    let mut out: Vec<CriticalPoint> = Vec::new();
    for r in roots.into_iter().flatten() {
        if out.iter().all(|m| (&m.location - &r).norm() > opts.dedup_radius) {
            let p = classify_with(land, &r, opts.hyperbolic_tol)?;
            if !out.iter().any(|m| same_flat_point(land, m, &p)) {
                out.push(p);
            }
        }
    }
    sort_census(&mut out);
    Ok(out)
}

/// Radius below which two equal-index roots may be one poorly pinned point.
const FLAT_MERGE_RADIUS: f64 = 1e-2;
/// Gradient bound along the joining segment for such a merge.
const FLAT_MERGE_GRAD: f64 = 1e-8;

/// On a nearly flat potential Newton pins a root only to about
/// `|grad| / |lambda|`, which can exceed the dedup radius. Two such roots of
/// the same index with a vanishing gradient along the joining segment are
/// one point. Distinct nearby roots near a fold differ in index.
fn same_flat_point(land: &Landscape, a: &CriticalPoint, b: &CriticalPoint) -> bool {
    if a.index != b.index || (&a.location - &b.location).norm() > FLAT_MERGE_RADIUS {
        return false;
    }
    [0.25, 0.5, 0.75].iter().all(|&s| {
        let x = &a.location + (&b.location - &a.location) * s;
        land.gradient(&x).norm() < FLAT_MERGE_GRAD
    })
}

/// Canonical order: by index, then lexicographically by location.
pub fn sort_census(c: &mut [CriticalPoint]) {
    c.sort_by(|a, b| {
        a.index.cmp(&b.index).then_with(|| {
            a.location
                .iter()
                .zip(b.location.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
}

pub fn classify(land: &Landscape, x: &DVector<f64>) -> Result<CriticalPoint> {
    classify_with(land, x, HYPERBOLIC_TOL)
}

pub fn classify_with(land: &Landscape, x: &DVector<f64>, hyperbolic_tol: f64) -> Result<CriticalPoint> {
    let g = land.grad_potential(x)?;
    if !(g.norm() < CLASSIFY_GRAD_TOL) {
        return Err(Error::NotCritical { grad_norm: g.norm() });
    }
    let h = land.potential.hessian(x);
    let eig = linalg::sym_eigenvalues(&h);
    let n = x.len();
    let index = eig.iter().filter(|v| **v < 0.0).count();
    let kind = match index {
        0 => Kind::Attractor,
        i if i == n => Kind::Repellor,
        _ => Kind::Saddle,
    };
    Ok(CriticalPoint {
        location: x.clone(),
        value: land.value(x),
        eigenvalues: eig.iter().copied().collect(),
        index,
        kind,
        hyperbolic: linalg::min_abs(&eig) > hyperbolic_tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Counts {
    pub attractors: usize,
    pub saddles: usize,
    pub repellors: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.attractors + self.saddles + self.repellors
    }
}

pub fn counts(census: &[CriticalPoint]) -> Counts {
    let mut c = Counts::default();
    for p in census {
        match p.kind {
            Kind::Attractor => c.attractors += 1,
            Kind::Saddle => c.saddles += 1,
            Kind::Repellor => c.repellors += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Serialize)]
pub struct PoincareHopf {
    pub sum: i64,
    pub pass: bool,
}

/// Index sum `sum (-1)^index`, equal to 1 for an inward field on a disc.
pub fn poincare_hopf_check(census: &[CriticalPoint], _dimension: usize) -> PoincareHopf {
    let sum = census
        .iter()
        .map(|p| if p.index % 2 == 0 { 1 } else { -1 })
        .sum();
    PoincareHopf { sum, pass: sum == 1 }
}

/// Attractor pairs whose potential values agree within `tol`.
pub fn resonance_check(census: &[CriticalPoint], tol: f64) -> Vec<(usize, usize)> {
    let att: Vec<usize> = (0..census.len())
        .filter(|&i| census[i].kind == Kind::Attractor)
        .collect();
    let mut out = Vec::new();
    for (a, &i) in att.iter().enumerate() {
        for &j in &att[a + 1..] {
            if (census[i].value - census[j].value).abs() < tol {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct MorseReport {
    pub morse_ok: bool,
    /// `None` for an empty census.
    pub min_abs_eigenvalue: Option<f64>,
    pub nonhyperbolic: Vec<usize>,
}

pub fn morse_report(census: &[CriticalPoint]) -> MorseReport {
    let nonhyperbolic: Vec<usize> = (0..census.len()).filter(|&i| !census[i].hyperbolic).collect();
    let min = census.iter().map(|p| p.min_abs_eigenvalue()).fold(None, |acc: Option<f64>, v| {
        Some(acc.map_or(v, |a| a.min(v)))
    });
    MorseReport {
        morse_ok: nonhyperbolic.is_empty(),
        min_abs_eigenvalue: min,
        nonhyperbolic,
    }
}
