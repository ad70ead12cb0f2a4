//! Continuous Hopfield networks (energy, hidden and feature dynamics,
//! structural-stability checks, eigenvalue clamping, projected Hebbian
//! learning) and the modern softmax Hopfield network.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow;
use crate::landscape::{Body, Domain, Landscape, Metric, Potential, PotentialForm};
use crate::linalg::{self, dvec};

/// Eigenvalues below this magnitude make a network structurally unstable.
pub const STABILITY_TOL: f64 = 1e-8;
/// Feature states are kept this far inside the activation range.
pub const RANGE_MARGIN: f64 = 1e-6;
pub const RECALL_TOL: f64 = 1e-9;
pub const PGD_MAX_ITERS: usize = 1_000_000;
pub const MH_RANK_TOL: f64 = 1e-8;
pub const MH_FIXED_POINT_TOL: f64 = 1e-10;
pub const MH_CLUSTER_RADIUS: f64 = 1e-4;
const MH_MAX_ITERS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }

    /// Open output range.
    pub fn range(self) -> (f64, f64) {
        match self {
            Activation::Tanh => (-1.0, 1.0),
            Activation::Sigmoid => (0.0, 1.0),
        }
    }

    pub fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Tanh => u.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-u).exp()),
        }
    }

    pub fn inverse(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.atanh(),
            Activation::Sigmoid => (v / (1.0 - v)).ln(),
        }
    }

    /// `f'(f^{-1}(v))`, the feature-space inverse metric.
    pub fn derivative_at_output(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - v * v,
            Activation::Sigmoid => v * (1.0 - v),
        }
    }

    pub fn derivative(self, u: f64) -> f64 {
        self.derivative_at_output(self.apply(u))
    }

    /// `int_0^v f^{-1}`.
    pub fn inverse_integral(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v * v.atanh() + 0.5 * (1.0 - v * v).ln(),
            Activation::Sigmoid => {
                let a = if v > 0.0 { v * v.ln() } else { 0.0 };
                let b = if v < 1.0 { (1.0 - v) * (1.0 - v).ln() } else { 0.0 };
                a + b
            }
        }
    }

    pub fn interior(self, v: f64) -> bool {
        let (lo, hi) = self.range();
        v > lo && v < hi
    }
}

/// Classic continuous Hopfield network.
#[derive(Debug, Clone, PartialEq)]
pub struct HopfieldNet {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub rinv: DVector<f64>,
    pub activation: Activation,
}

impl HopfieldNet {
    /// `w` must be exactly symmetric with zero diagonal.
    pub fn new(w: DMatrix<f64>, b: DVector<f64>, rinv: DVector<f64>, activation: Activation) -> Result<Self> {
        if (0..w.nrows().min(w.ncols())).any(|i| w[(i, i)] != 0.0) {
            return Err(Error::Config("weight matrix has a nonzero diagonal".into()));
        }
        Self::new_with_diagonal(w, b, rinv, activation)
    }

    /// Symmetric `w` with an arbitrary diagonal, e.g. after eigenvalue
    /// clamping or for raw outer products.
    pub fn new_with_diagonal(w: DMatrix<f64>, b: DVector<f64>, rinv: DVector<f64>, activation: Activation) -> Result<Self> {
        let n = w.nrows();
        if w.ncols() != n || b.len() != n || rinv.len() != n {
            return Err(Error::Config("weights, bias and Rinv sizes differ".into()));
        }
        if w != w.transpose() {
            return Err(Error::Config("weight matrix is not symmetric".into()));
        }
        if rinv.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config("Rinv entries must be nonnegative".into()));
        }
        Ok(Self { w, b, rinv, activation })
    }

    /// Zero bias and a shared `rinv`.
    pub fn with_uniform_rinv(w: DMatrix<f64>, rinv: f64, activation: Activation) -> Result<Self> {
        let n = w.nrows();
        Self::new(w, DVector::zeros(n), DVector::from_element(n, rinv), activation)
    }

    pub fn size(&self) -> usize {
        self.w.nrows()
    }

    fn check_interior(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() == self.size() && v.iter().all(|x| self.activation.interior(*x)) {
            Ok(())
        } else {
            Err(Error::Domain {
                point: v.iter().copied().collect(),
            })
        }
    }

    /// `-1/2 v'Wv + B'v + sum Rinv_i int_0^{v_i} f^{-1}`.
    pub fn energy(&self, v: &DVector<f64>) -> Result<f64> {
        self.check_interior(v)?;
        Ok(self.energy_unchecked(v))
    }

    pub(crate) fn energy_unchecked(&self, v: &DVector<f64>) -> f64 {
        let quad = -0.5 * v.dot(&(&self.w * v));
        let leak: f64 = v
            .iter()
            .zip(self.rinv.iter())
            .filter(|(_, r)| **r != 0.0)
            .map(|(x, r)| r * self.activation.inverse_integral(*x))
            .sum();
        quad + self.b.dot(v) + leak
    }

    /// `dV/dv = -Wv + B + Rinv f^{-1}(v)`.
    pub fn energy_gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut g = -(&self.w * v) + &self.b;
        for i in 0..v.len() {
            if self.rinv[i] != 0.0 {
                g[i] += self.rinv[i] * self.activation.inverse(v[i]);
            }
        }
        g
    }

    /// `-W + diag(Rinv / f'(f^{-1}(v)))`.
    pub fn energy_hessian(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let mut h = -self.w.clone();
        for i in 0..v.len() {
            if self.rinv[i] != 0.0 {
                h[(i, i)] += self.rinv[i] / self.activation.derivative_at_output(v[i]);
            }
        }
        h
    }

    /// `du/dt = W f(u) - B - Rinv u`.
    pub fn hidden_drift(&self, u: &DVector<f64>) -> DVector<f64> {
        let v = u.map(|x| self.activation.apply(x));
        &self.w * v - &self.b - self.rinv.component_mul(u)
    }

    /// `dv/dt = -f'(f^{-1}(v)) dV/dv`.
    pub fn feature_drift(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_interior(v)?;
        let g = self.energy_gradient(v);
        Ok(DVector::from_fn(v.len(), |i, _| -self.activation.derivative_at_output(v[i]) * g[i]))
    }

    /// Feature dynamics as a landscape on the open activation cube.
    pub fn landscape(&self) -> Result<Landscape> {
        let n = self.size();
        let (lo, hi) = self.activation.range();
        let reach = lo.abs().max(hi.abs());
        let potential = Potential::from_body(
            PotentialForm::HopfieldEnergy,
            self.rinv.iter().copied().collect(),
            n,
            Body::Hopfield(self.clone()),
        );
        Landscape::new(
            potential,
            Metric::ActivationDiagonal(self.activation),
            Domain {
                radius: reach * (n as f64).sqrt(),
                dimension: n,
                bounds: Some((lo + RANGE_MARGIN, hi - RANGE_MARGIN)),
            },
        )
    }
}

/// Evolves the feature dynamics from `v0` until `|dv/dt| < 1e-9`.
pub fn recall(net: &HopfieldNet, v0: &DVector<f64>, dt: f64, t_max: f64) -> Result<DVector<f64>> {
    net.check_interior(v0)?;
    let land = net.landscape()?;
    let end = flow::flow_with(&land, v0, dt, t_max, RECALL_TOL, |_, _, _| {})?;
    if end.converged {
        Ok(end.point)
    } else {
        Err(Error::Timeout(format!("recall still moving at t = {}", end.time)))
    }
}

/// Corrupt a ±1 pattern with Gaussian noise and clip into the open range.
pub fn corrupt(pattern: &DVector<f64>, sigma: f64, activation: Activation, rng: &mut impl Rng) -> DVector<f64> {
    let (lo, hi) = activation.range();
    pattern.map(|p| {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        (p + sigma * z).clamp(lo + 1e-3, hi - 1e-3)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "structurally stable")]
    StructurallyStable,
    #[serde(rename = "not structurally stable")]
    NotStructurallyStable,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointReport {
    #[serde(with = "dvec")]
    pub u: DVector<f64>,
    #[serde(with = "dvec")]
    pub v: DVector<f64>,
    pub hessian_eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub verdict: Verdict,
    /// "weight-spectrum" when Rinv = 0, otherwise "hessian-limit".
    pub criterion: String,
    pub min_abs_eigenvalue: f64,
    pub weight_eigenvalues: Vec<f64>,
    pub fixed_points: Vec<FixedPointReport>,
}

/// Hidden-state fixed points `W f(u) - B - Rinv u = 0` by damped Newton
/// from sign-pattern and seeded random starts.
pub fn hidden_fixed_points(net: &HopfieldNet, seed: u64) -> Vec<DVector<f64>> {
    let n = net.size();
    let act = net.activation;
    let mut seeds = vec![DVector::zeros(n)];
    if n <= 10 {
        for mask in 0..(1usize << n) {
            seeds.push(DVector::from_fn(n, |i, _| if mask >> i & 1 == 1 { 2.0 } else { -2.0 }));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..64 {
        seeds.push(DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0)));
    }
    let roots: Vec<Option<DVector<f64>>> = seeds
        .par_iter()
        .map(|s| {
            linalg::solve_system(
                |u| net.hidden_drift(u),
                |u| {
                    let d = DMatrix::from_diagonal(&u.map(|x| act.derivative(x)));
                    &net.w * d - DMatrix::from_diagonal(&net.rinv)
                },
                |u| u.iter().all(|x| x.is_finite() && x.abs() < 50.0),
                s,
                1e-12,
                100,
            )
        })
        .collect();
    let mut out: Vec<DVector<f64>> = Vec::new();
    for r in roots.into_iter().flatten() {
        if out.iter().all(|o| (o - &r).norm() > 1e-6) {
            out.push(r);
        }
    }
    out
}

/// Structural-stability verdict: the spectrum of `W` when all `Rinv = 0`,
/// otherwise the Hessian limits at the hidden fixed points.
pub fn stability_check(net: &HopfieldNet) -> StabilityReport {
    let w_eig: Vec<f64> = linalg::sym_eigenvalues(&net.w).iter().copied().collect();
    if net.rinv.iter().all(|r| *r == 0.0) {
        let min = w_eig.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        return StabilityReport {
            verdict: if min < STABILITY_TOL {
                Verdict::NotStructurallyStable
            } else {
                Verdict::StructurallyStable
            },
            criterion: "weight-spectrum".into(),
            min_abs_eigenvalue: min,
            weight_eigenvalues: w_eig,
            fixed_points: vec![],
        };
    }
    let fps: Vec<FixedPointReport> = hidden_fixed_points(net, 0)
        .into_iter()
        .map(|u| {
            let mut h = -net.w.clone();
            for i in 0..u.len() {
                h[(i, i)] += net.rinv[i] / net.activation.derivative(u[i]);
            }
            FixedPointReport {
                v: u.map(|x| net.activation.apply(x)),
                hessian_eigenvalues: linalg::sym_eigenvalues(&h).iter().copied().collect(),
                u,
            }
        })
        .collect();
    let min = fps
        .iter()
        .flat_map(|f| f.hessian_eigenvalues.iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min);
    StabilityReport {
        verdict: if min < STABILITY_TOL {
            Verdict::NotStructurallyStable
        } else {
            Verdict::StructurallyStable
        },
        criterion: "hessian-limit".into(),
        min_abs_eigenvalue: min,
        weight_eigenvalues: w_eig,
        fixed_points: fps,
    }
}

#[derive(Debug, Clone)]
pub struct ClampResult {
    pub w_bar: DMatrix<f64>,
    /// `|W - W_bar|_F = sqrt(sum over clamped (lambda - eps_c)^2)`.
    pub distance: f64,
}

/// Raise every eigenvalue of symmetric `w` to at least `eps_c`.
pub fn clamp_eigenvalues(w: &DMatrix<f64>, eps_c: f64) -> Result<ClampResult> {
    if w.nrows() != w.ncols() || (w - w.transpose()).amax() > 1e-12 * w.amax().max(1.0) {
        return Err(Error::Input("clamping needs a symmetric matrix".into()));
    }
    let (vals, q) = linalg::sym_eigen(w);
    if vals.iter().all(|v| *v >= eps_c) {
        return Ok(ClampResult {
            w_bar: w.clone(),
            distance: 0.0,
        });
    }
    let clamped = vals.map(|v| v.max(eps_c));
    let distance = vals
        .iter()
        .filter(|v| **v < eps_c)
        .map(|v| (v - eps_c).powi(2))
        .sum::<f64>()
        .sqrt();
    let m = &q * DMatrix::from_diagonal(&clamped) * q.transpose();
    let w_bar = (&m + m.transpose()) * 0.5;
    Ok(ClampResult { w_bar, distance })
}

#[derive(Debug, Clone)]
pub struct PgdResult {
    pub w: DMatrix<f64>,
    pub iterations: usize,
}

fn zero_diagonal(w: &mut DMatrix<f64>) {
    for i in 0..w.nrows() {
        w[(i, i)] = 0.0;
    }
}

fn project(w: &mut DMatrix<f64>, c: f64) {
    let n = w.norm();
    if n > c {
        *w *= c / n;
    }
}

/// Projected-gradient Hebbian learning: per-pattern increments
/// `W += rate xi xi'`, Frobenius-ball projection to radius `c`, until an
/// outer sweep moves `W` by less than `tol`. The diagonal is zeroed
/// before each projection, so projected iterates stay zero-diagonal.
pub fn hebbian_pgd(patterns: &[DVector<f64>], rate: f64, c: f64, tol: f64, seed: u64) -> Result<PgdResult> {
    let n = patterns
        .first()
        .map(|p| p.len())
        .ok_or_else(|| Error::Input("no patterns".into()))?;
    if patterns.iter().any(|p| p.len() != n) {
        return Err(Error::Input("patterns differ in length".into()));
    }
    if !(rate > 0.0 && c > 0.0 && tol > 0.0) {
        return Err(Error::Input("rate, c and tol must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mut w = (&r + r.transpose()) * 0.5;
    zero_diagonal(&mut w);
    project(&mut w, c);
    for it in 1..=PGD_MAX_ITERS {
        let prev = w.clone();
        for xi in patterns {
            w += xi * xi.transpose() * rate;
            zero_diagonal(&mut w);
            project(&mut w, c);
        }
        if (&w - &prev).norm() < tol {
            return Ok(PgdResult { w, iterations: it });
        }
    }
    Err(Error::Timeout(format!(
        "projected Hebbian learning did not settle in {PGD_MAX_ITERS} sweeps"
    )))
}

/// Zero-diagonal outer-product rule `sum xi xi'`.
pub fn outer_product_rule(patterns: &[DVector<f64>]) -> DMatrix<f64> {
    let n = patterns.first().map_or(0, |p| p.len());
    let mut w = DMatrix::zeros(n, n);
    for p in patterns {
        w += p * p.transpose();
    }
    zero_diagonal(&mut w);
    w
}

/// Cosine similarity of two matrices flattened to vectors.
pub fn cosine_similarity(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b) / (a.norm() * b.norm())
}

/// Modern Hopfield network with patterns as the columns of `xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModernHopfield {
    xi: DMatrix<f64>,
    beta: f64,
    c: f64,
}

impl ModernHopfield {
    pub fn new(xi: DMatrix<f64>, beta: f64) -> Result<Self> {
        if xi.ncols() == 0 || xi.nrows() == 0 {
            return Err(Error::Input("need at least one pattern".into()));
        }
        if !(beta > 0.0) {
            return Err(Error::Input("beta must be positive".into()));
        }
        let c = xi.column_iter().map(|col| col.norm()).fold(0.0, f64::max);
        Ok(Self { xi, beta, c })
    }

    pub fn patterns(&self) -> &DMatrix<f64> {
        &self.xi
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.xi.clone(), beta)
    }

    /// Largest pattern norm.
    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.xi.nrows()
    }

    pub fn count(&self) -> usize {
        self.xi.ncols()
    }

    /// `softmax(beta xi' v)` with max subtraction.
    pub fn probabilities(&self, v: &DVector<f64>) -> DVector<f64> {
        let s = self.xi.tr_mul(v) * self.beta;
        let m = s.max();
        let e = s.map(|x| (x - m).exp());
        let z = e.sum();
        e / z
    }

    fn lse(&self, v: &DVector<f64>) -> f64 {
        let s = self.xi.tr_mul(v) * self.beta;
        let m = s.max();
        (m + s.map(|x| (x - m).exp()).sum().ln()) / self.beta
    }

    pub fn update(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.xi * self.probabilities(v)
    }

    /// `beta xi (diag p - p p') xi'`.
    pub fn jacobian(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let p = self.probabilities(v);
        let js = DMatrix::from_diagonal(&p) - &p * p.transpose();
        &self.xi * js * self.xi.transpose() * self.beta
    }

    /// `-lse(beta, xi' v) + v'v/2 + log(M)/beta + C^2/2`.
    pub fn energy(&self, v: &DVector<f64>) -> f64 {
        -self.lse(v) + 0.5 * v.dot(v) + (self.count() as f64).ln() / self.beta + 0.5 * self.c * self.c
    }

    pub fn energy_gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        v - self.update(v)
    }

    pub fn energy_hessian(&self, v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - self.jacobian(v)
    }

    /// Energy gradient flow on the disc of radius `C + 0.5`.
    pub fn landscape(&self) -> Result<Landscape> {
        let d = self.dim();
        Landscape::new(
            Potential::from_body(
                PotentialForm::ModernHopfieldEnergy,
                vec![self.beta],
                d,
                Body::Modern(self.clone()),
            ),
            Metric::Euclidean,
            Domain::disc(self.c + 0.5, d),
        )
    }

    /// Iterates the update map to a fixed point.
    pub fn iterate(&self, v0: &DVector<f64>) -> Option<DVector<f64>> {
        let mut v = v0.clone();
        for _ in 0..MH_MAX_ITERS {
            let next = self.update(&v);
            let step = (&next - &v).norm();
            v = next;
            if step < MH_FIXED_POINT_TOL {
                return Some(v);
            }
        }
        None
    }
}

/// Planar test patterns `(0.95, delta), (-0.7, sqrt3/2), (0.7, sqrt3/2)`.
pub fn three_patterns(delta: f64) -> DMatrix<f64> {
    let h = 3f64.sqrt() / 2.0;
    DMatrix::from_column_slice(2, 3, &[0.95, delta, -0.7, h, 0.7, h])
}

#[derive(Debug, Clone, Serialize)]
pub struct RankPoint {
    #[serde(with = "dvec")]
    pub v: DVector<f64>,
    pub min_singular_value: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RankReport {
    pub patterns: usize,
    pub dimension: usize,
    pub pattern_rank: usize,
    /// At least `d + 1` patterns, `d` of them independent.
    pub necessary_condition: bool,
    pub points: Vec<RankPoint>,
}

pub fn mh_rank_check(m: &ModernHopfield, fixed_points: &[DVector<f64>]) -> RankReport {
    let d = m.dim();
    let rank = linalg::numeric_rank(m.patterns(), MH_RANK_TOL);
    let points = fixed_points
        .iter()
        .map(|v| {
            let s = linalg::min_singular_value(&m.energy_hessian(v));
            RankPoint {
                v: v.clone(),
                min_singular_value: s,
                degenerate: s < MH_RANK_TOL,
            }
        })
        .collect();
    RankReport {
        patterns: m.count(),
        dimension: d,
        pattern_rank: rank,
        necessary_condition: m.count() > d && rank == d,
        points,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CensusMode {
    FixedPoint,
    GradientFlow,
}

#[derive(Debug, Clone, Serialize)]
pub struct BetaCensus {
    pub beta: f64,
    pub attractors: Vec<Vec<f64>>,
    pub dropped_seeds: usize,
    /// Seeds that ended on a saddle or maximum (e.g. lattice points on a
    /// symmetry line); excluded from `attractors`.
    pub unstable_endpoints: usize,
}

impl BetaCensus {
    pub fn count(&self) -> usize {
        self.attractors.len()
    }
}

/// Lattice seeds inside the disc of radius `r` in `d` dimensions.
pub fn disc_seeds(d: usize, r: f64, per_axis: usize) -> Vec<DVector<f64>> {
    let total = per_axis.pow(d as u32);
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        let x = DVector::from_fn(d, |i, _| -r + 2.0 * r * (idx[i] as f64 + 0.5) / per_axis as f64);
        if x.norm() <= r {
            out.push(x);
        }
        for k in idx.iter_mut() {
            *k += 1;
            if *k < per_axis {
                break;
            }
            *k = 0;
        }
    }
    out
}

/// Attractor count per inverse temperature: terminal points of the
/// update iteration (or of the energy flow) clustered at radius 1e-4.
/// Endpoints whose energy Hessian is not positive definite are dropped.
pub fn mh_attractor_census(
    m: &ModernHopfield,
    betas: &[f64],
    seeds: &[DVector<f64>],
    mode: CensusMode,
) -> Result<Vec<BetaCensus>> {
    betas
        .iter()
        .map(|&beta| {
            let net = m.with_beta(beta)?;
            let land = net.landscape()?;
            let ends: Vec<Option<DVector<f64>>> = seeds
                .par_iter()
                .map(|s| match mode {
                    CensusMode::FixedPoint => net.iterate(s),
                    CensusMode::GradientFlow => flow::omega_limit(&land, s).ok(),
                })
                .collect();
            let dropped = ends.iter().filter(|e| e.is_none()).count();
            if dropped > 0 {
                log::warn!("beta {beta}: {dropped} seeds did not converge");
            }
            let (ends, unstable): (Vec<_>, Vec<_>) = ends
                .into_iter()
                .flatten()
                .partition(|e| net.energy_hessian(e).symmetric_eigenvalues().min() > 0.0);
            let mut reps: Vec<DVector<f64>> = Vec::new();
            for e in ends {
                if reps.iter().all(|r| (r - &e).norm() > MH_CLUSTER_RADIUS) {
                    reps.push(e);
                }
            }
            reps.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[a.len() - 1].total_cmp(&b[b.len() - 1])));
            Ok(BetaCensus {
                beta,
                attractors: reps.iter().map(|r| r.iter().copied().collect()).collect(),
                dropped_seeds: dropped,
                unstable_endpoints: unstable.len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::{fd_gradient, fd_hessian};

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn swap() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
    }

    #[test]
    fn energy_examples() {
        let zero = HopfieldNet::with_uniform_rinv(DMatrix::zeros(2, 2), 1.0, Activation::Tanh).unwrap();
        assert_eq!(zero.energy(&v2(0.0, 0.0)).unwrap(), 0.0);
        let net = HopfieldNet::with_uniform_rinv(swap(), 0.0, Activation::Tanh).unwrap();
        assert!((net.energy(&v2(0.5, 0.5)).unwrap() + 0.25).abs() < 1e-15);
        assert!(net.energy(&v2(1.0, 0.0)).is_err());
    }

    #[test]
    fn energy_gradient_matches_differences() {
        for act in [Activation::Tanh, Activation::Sigmoid] {
            let w = DMatrix::from_row_slice(3, 3, &[0.0, 0.4, -0.2, 0.4, 0.0, 0.7, -0.2, 0.7, 0.0]);
            let net = HopfieldNet::new(w, DVector::from_vec(vec![0.1, -0.3, 0.2]), DVector::from_element(3, 0.85), act)
                .unwrap();
            let v = match act {
                Activation::Tanh => DVector::from_vec(vec![0.3, -0.6, 0.1]),
                Activation::Sigmoid => DVector::from_vec(vec![0.3, 0.6, 0.8]),
            };
            let g = net.energy_gradient(&v);
            let f = fd_gradient(|x| net.energy_unchecked(x), &v);
            assert!((&g - f).norm() < 1e-6);
            let h = fd_hessian(|x| net.energy_gradient(x), &v);
            assert!((net.energy_hessian(&v) - h).norm() < 1e-5);
        }
    }

    #[test]
    fn hidden_and_feature_drifts() {
        let net = HopfieldNet::with_uniform_rinv(swap(), 0.0, Activation::Tanh).unwrap();
        assert_eq!(net.hidden_drift(&v2(0.0, 0.0)), v2(0.0, 0.0));
        let d = net.hidden_drift(&v2(1.0, 1.0));
        assert!((d - v2(1f64.tanh(), 1f64.tanh())).norm() < 1e-15);

        let leaky = HopfieldNet::with_uniform_rinv(swap() * 0.7, 0.85, Activation::Tanh).unwrap();
        let u = v2(0.4, -1.1);
        let v = u.map(|x| x.tanh());
        let neg_grad = -fd_gradient(|x| leaky.energy_unchecked(x), &v);
        assert!((leaky.hidden_drift(&u) - neg_grad).norm() < 1e-8);
        // Metric factor is 1 at the origin.
        let fd0 = leaky.feature_drift(&v2(0.0, 0.0)).unwrap();
        assert_eq!(fd0, -leaky.energy_gradient(&v2(0.0, 0.0)));
    }

    #[test]
    fn clamp_rank_one() {
        let xi = DVector::from_vec(vec![1.0, -1.0, 1.0]);
        let w = &xi * xi.transpose();
        let r = clamp_eigenvalues(&w, 1e-3).unwrap();
        assert!((r.distance - 2f64.sqrt() * 1e-3).abs() < 1e-15);
        assert_eq!(r.w_bar, r.w_bar.transpose());
        assert_eq!(linalg::numeric_rank(&r.w_bar, 1e-8), 3);
        let ev = linalg::sym_eigenvalues(&r.w_bar);
        assert!(ev[0] >= 1e-3 - 1e-10);
        assert!(((&w - &r.w_bar).norm() - r.distance).abs() < 1e-12);
        let id = DMatrix::<f64>::identity(3, 3);
        let same = clamp_eigenvalues(&id, 0.5).unwrap();
        assert_eq!((same.w_bar, same.distance), (id, 0.0));
    }

    #[test]
    fn weight_spectrum_verdicts() {
        let xi = DVector::from_vec(vec![1.0, -1.0, 1.0]);
        let rank_one = &xi * xi.transpose();
        assert!(HopfieldNet::with_uniform_rinv(rank_one.clone(), 0.0, Activation::Tanh).is_err());
        let net = HopfieldNet::new_with_diagonal(rank_one, DVector::zeros(3), DVector::zeros(3), Activation::Tanh).unwrap();
        assert_eq!(stability_check(&net).verdict, Verdict::NotStructurallyStable);
        let net = HopfieldNet::with_uniform_rinv(swap(), 0.0, Activation::Tanh).unwrap();
        let rep = stability_check(&net);
        assert_eq!(rep.verdict, Verdict::StructurallyStable);
        assert!((rep.weight_eigenvalues[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pgd_single_pattern_closed_form() {
        let xi = DVector::from_vec(vec![1.0, -1.0, 1.0, 1.0]);
        let r = hebbian_pgd(std::slice::from_ref(&xi), 0.1, 3.0, 1e-12, 5).unwrap();
        let target = outer_product_rule(&[xi]);
        let target = &target * (3.0 / target.norm());
        assert!((&r.w - target).norm() < 1e-9);
        assert!((0..4).all(|i| r.w[(i, i)] == 0.0));
    }

    #[test]
    fn modern_update_examples() {
        let single = ModernHopfield::new(DMatrix::from_column_slice(2, 1, &[0.3, -0.8]), 2.0).unwrap();
        assert_eq!(single.update(&v2(5.0, 1.0)), v2(0.3, -0.8));
        let m = ModernHopfield::new(three_patterns(0.0), 1e-8).unwrap();
        let mean = m.patterns().column_mean();
        assert!((m.update(&v2(0.4, -0.2)) - mean).norm() < 1e-6);
    }

    #[test]
    fn modern_jacobian_matches_differences() {
        let m = ModernHopfield::new(three_patterns(0.1), 4.0).unwrap();
        let v = v2(0.2, 0.5);
        let j = m.jacobian(&v);
        let h = 1e-6;
        for k in 0..2 {
            let mut e = DVector::zeros(2);
            e[k] = h;
            let col = (m.update(&(&v + &e)) - m.update(&(&v - &e))) / (2.0 * h);
            assert!((j.column(k) - col).norm() < 1e-6);
        }
        assert!((&j - j.transpose()).amax() < 1e-12);
        let id = ModernHopfield::new(DMatrix::identity(2, 2), 3.0).unwrap();
        assert!(linalg::numeric_rank(&id.jacobian(&v), MH_RANK_TOL) <= 1);
    }

    #[test]
    fn rank_condition_examples() {
        let id = ModernHopfield::new(DMatrix::identity(2, 2), 3.0).unwrap();
        assert!(!mh_rank_check(&id, &[]).necessary_condition);
        let fig = ModernHopfield::new(three_patterns(0.0), 3.0).unwrap();
        assert!(mh_rank_check(&fig, &[]).necessary_condition);
        let one = ModernHopfield::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), 3.0).unwrap();
        assert!(!mh_rank_check(&one, &[]).necessary_condition);
    }

    #[test]
    fn single_pattern_has_one_attractor() {
        let one = ModernHopfield::new(DMatrix::from_column_slice(2, 1, &[0.6, 0.2]), 1.0).unwrap();
        let seeds = disc_seeds(2, one.c(), 9);
        for c in mh_attractor_census(&one, &[0.5, 5.0, 50.0], &seeds, CensusMode::FixedPoint).unwrap() {
            assert_eq!(c.count(), 1);
            assert!((c.attractors[0][0] - 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn seeds_on_symmetry_lines_do_not_count_saddles() {
        let h = 3f64.sqrt() / 2.0;
        let xi = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, -0.5, h, -0.5, -h]);
        let m = ModernHopfield::new(xi, 30.0).unwrap();
        let seeds = disc_seeds(2, m.c(), 15);
        let c = mh_attractor_census(&m, &[30.0], &seeds, CensusMode::FixedPoint).unwrap().remove(0);
        assert_eq!(c.count(), 3);
        assert!(c.unstable_endpoints > 0);
    }

    #[test]
    fn fixed_point_recall_is_idempotent() {
        let w = swap() * -(2f64.sqrt());
        let net = HopfieldNet::with_uniform_rinv(w, 0.85, Activation::Tanh).unwrap();
        let fp = recall(&net, &v2(0.6, -0.5), 0.05, 1e4).unwrap();
        let again = recall(&net, &fp, 0.05, 1e4).unwrap();
        assert!((fp - again).norm() < 1e-8);
    }
}
