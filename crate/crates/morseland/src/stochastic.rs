//! Small random perturbations of a gradient flow: Euler–Maruyama paths,
//! Boltzmann–Gibbs measures on a quadrature grid, zero-noise weights and
//! the Freidlin–Wentzell action.
//!
//! Noise convention: `dx = X(x) dt + eps * sqrt(2) dW`, whose stationary
//! density on the interior is proportional to `exp(-V / eps^2)`.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::critical::{resonance_check, CriticalPoint, Kind};
use crate::error::{Error, Result};
use crate::flow::TrajectoryRecord;
use crate::landscape::Landscape;
use crate::linalg::round_sig;

/// Redraws allowed for an increment that would leave the domain.
pub const MAX_REDRAWS: usize = 100;
/// A measure whose 99% mass sits in fewer cells than this is under-resolved.
pub const MIN_SUPPORT_CELLS: usize = 16;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Streams an Euler–Maruyama path (stream `stream` of `seed`), calling
/// `observe(k, x)` for `k = 0..=steps`; returns the terminal point.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    land: &Landscape,
    eps: f64,
    x0: &DVector<f64>,
    dt: f64,
    steps: usize,
    seed: u64,
    stream: u64,
    mut observe: impl FnMut(usize, &DVector<f64>),
) -> Result<DVector<f64>> {
    if !(eps >= 0.0) || !(dt > 0.0) {
        return Err(Error::Input(format!("need eps >= 0 and dt > 0, got eps = {eps}, dt = {dt}")));
    }
    land.drift(x0)?;
    let mut rng = stream_rng(seed, stream);
    let n = x0.len();
    let scale = eps * (2.0 * dt).sqrt();
    let mut x = x0.clone();
    observe(0, &x);
    for k in 1..=steps {
        let base = &x + land.vector_field(&x) * dt;
        let mut next = None;
        for _ in 0..=MAX_REDRAWS {
            let xi: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let cand = &base + xi * scale;
            if land.domain.contains(&cand) {
                next = Some(cand);
                break;
            }
        }
        x = next.ok_or_else(|| Error::Confinement {
            point: x.iter().copied().collect(),
        })?;
        observe(k, &x);
    }
    Ok(x)
}

/// Euler–Maruyama path with every point and its energy recorded.
pub fn euler_maruyama(land: &Landscape, eps: f64, x0: &DVector<f64>, dt: f64, steps: usize, seed: u64) -> Result<TrajectoryRecord> {
    euler_maruyama_stream(land, eps, x0, dt, steps, seed, 0)
}

pub fn euler_maruyama_stream(
    land: &Landscape,
    eps: f64,
    x0: &DVector<f64>,
    dt: f64,
    steps: usize,
    seed: u64,
    stream: u64,
) -> Result<TrajectoryRecord> {
    let mut rec = TrajectoryRecord::default();
    simulate(land, eps, x0, dt, steps, seed, stream, |k, x| {
        rec.push(k as f64 * dt, x.clone(), land.value(x))
    })?;
    Ok(rec)
}

/// Tensor midpoint grid over the domain's bounding box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub n: usize,
    pub dimension: usize,
    pub lo: f64,
    pub width: f64,
}

impl Grid {
    pub fn for_landscape(land: &Landscape, n: usize) -> Result<Self> {
        let d = land.dimension();
        if n.checked_pow(d as u32).is_none_or(|c| c > 20_000_000) {
            return Err(Error::Config(format!("{n}^{d} quadrature cells is too many")));
        }
        let r = land.radius();
        Ok(Self {
            n,
            dimension: d,
            lo: -r,
            width: 2.0 * r / n as f64,
        })
    }

    pub fn cells(&self) -> usize {
        self.n.pow(self.dimension as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.width.powi(self.dimension as i32)
    }

    /// Center of cell `k` (first axis varies fastest).
    pub fn center(&self, mut k: usize) -> DVector<f64> {
        DVector::from_fn(self.dimension, |_, _| {
            let i = k % self.n;
            k /= self.n;
            self.lo + (i as f64 + 0.5) * self.width
        })
    }

    pub fn cell_of(&self, x: &DVector<f64>) -> Option<usize> {
        let mut k = 0;
        let mut stride = 1;
        for v in x.iter() {
            let i = ((v - self.lo) / self.width).floor();
            if !(0.0..self.n as f64).contains(&i) {
                return None;
            }
            k += i as usize * stride;
            stride *= self.n;
        }
        Some(k)
    }
}

/// Boltzmann–Gibbs measure `exp(-V / eps^2) dvol_g / Z` discretized on a
/// grid; `mass[k]` is the probability of cell `k` (zero off the disc).
#[derive(Debug, Clone, Serialize)]
pub struct GibbsMeasure {
    pub epsilon: f64,
    pub grid: Grid,
    pub mass: Vec<f64>,
    /// `log Z` including the cell volume.
    pub log_z: f64,
    pub underresolved: bool,
}

impl GibbsMeasure {
    /// Density (mass per unit volume) at cell `k`.
    pub fn density(&self, k: usize) -> f64 {
        self.mass[k] / self.grid.cell_volume()
    }

    pub fn mass_where(&self, pred: impl Fn(&DVector<f64>) -> bool) -> f64 {
        (0..self.mass.len())
            .filter(|&k| self.mass[k] > 0.0 && pred(&self.grid.center(k)))
            .map(|k| self.mass[k])
            .sum()
    }

    /// CSV rows `x1..xn,density`, one per grid cell.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_grid_csv(&self.grid, &self.mass, out, "density", self.grid.cell_volume())
    }
}

fn write_grid_csv<W: Write>(grid: &Grid, mass: &[f64], out: W, label: &str, vol: f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Input(format!("csv output: {e}"));
    let mut header: Vec<String> = (1..=grid.dimension).map(|i| format!("x{i}")).collect();
    header.push(label.to_string());
    w.write_record(&header).map_err(io)?;
    for (k, m) in mass.iter().enumerate() {
        let c = grid.center(k);
        let mut row: Vec<String> = c.iter().map(|v| round_sig(*v, 12).to_string()).collect();
        row.push(round_sig(m / vol, 12).to_string());
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Input(format!("csv output: {e}")))
}

fn support_cells(mass: &[f64]) -> usize {
    let mut m: Vec<f64> = mass.iter().copied().filter(|v| *v > 0.0).collect();
    m.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    for (i, v) in m.iter().enumerate() {
        acc += v;
        if acc >= 0.99 {
            return i + 1;
        }
    }
    m.len()
}

/// Midpoint quadrature of the Gibbs measure on `grid_n` cells per axis.
pub fn gibbs_measure(land: &Landscape, eps: f64, grid_n: usize) -> Result<GibbsMeasure> {
    if !(eps > 0.0) {
        return Err(Error::Input(format!("eps must be positive, got {eps}")));
    }
    if grid_n < 32 {
        return Err(Error::Input(format!("grid_n must be at least 32, got {grid_n}")));
    }
    let grid = Grid::for_landscape(land, grid_n)?;
    let e2 = eps * eps;
    let logw: Vec<f64> = (0..grid.cells())
        .into_par_iter()
        .map(|k| {
            let x = grid.center(k);
            if land.domain.contains(&x) {
                -land.value(&x) / e2 + land.metric.sqrt_det(&x).ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return Err(Error::Numeric("no quadrature cell lies in the domain".into()));
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
    let total: f64 = w.iter().sum();
    let mass: Vec<f64> = w.iter().map(|v| v / total).collect();
    let underresolved = support_cells(&mass) < MIN_SUPPORT_CELLS;
    if underresolved {
        log::warn!("Gibbs measure at eps = {eps} is carried by fewer than {MIN_SUPPORT_CELLS} cells");
    }
    Ok(GibbsMeasure {
        epsilon: eps,
        log_z: mx + (total * grid.cell_volume()).ln(),
        grid,
        mass,
        underresolved,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroNoiseReport {
    pub epsilons: Vec<f64>,
    pub attractors: Vec<Vec<f64>>,
    /// `attractor_masses[e][i]`: Gibbs mass of the ball around attractor `i`
    /// at `epsilons[e]`.
    pub attractor_masses: Vec<Vec<f64>>,
    pub outside_mass: Vec<f64>,
    /// Masses at the smallest epsilon.
    pub limit_weights: Vec<f64>,
    pub resonant_pairs: Vec<(usize, usize)>,
}

/// Gibbs mass of `ball_radius` balls around each attractor along a
/// decreasing noise sequence.
pub fn zero_noise_weights(
    land: &Landscape,
    census: &[CriticalPoint],
    epsilons: &[f64],
    ball_radius: f64,
    grid_n: usize,
) -> Result<ZeroNoiseReport> {
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0)) || epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Input("epsilons must be positive and strictly decreasing".into()));
    }
    let att: Vec<&CriticalPoint> = census.iter().filter(|p| p.kind == Kind::Attractor).collect();
    let measures: Vec<GibbsMeasure> = epsilons
        .par_iter()
        .map(|&e| gibbs_measure(land, e, grid_n))
        .collect::<Result<_>>()?;
    if measures.last().is_some_and(|m| m.underresolved) {
        return Err(Error::Underresolved(format!(
            "eps = {} concentrates in fewer than {MIN_SUPPORT_CELLS} cells; increase grid_n beyond {grid_n}",
            epsilons[epsilons.len() - 1]
        )));
    }
    let attractor_masses: Vec<Vec<f64>> = measures
        .iter()
        .map(|m| {
            att.iter()
                .map(|a| m.mass_where(|x| (x - &a.location).norm() <= ball_radius))
                .collect()
        })
        .collect();
    let outside_mass = attractor_masses.iter().map(|v| (1.0 - v.iter().sum::<f64>()).max(0.0)).collect();
    let owned: Vec<CriticalPoint> = att.iter().map(|p| (*p).clone()).collect();
    Ok(ZeroNoiseReport {
        epsilons: epsilons.to_vec(),
        attractors: att.iter().map(|a| a.location.iter().copied().collect()).collect(),
        limit_weights: attractor_masses.last().cloned().unwrap_or_default(),
        attractor_masses,
        outside_mass,
        resonant_pairs: resonance_check(&owned, 1e-6),
    })
}

/// Occupancy histogram of a path on a quadrature grid.
#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub grid: Grid,
    pub mass: Vec<f64>,
    pub samples: usize,
}

impl Histogram {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_grid_csv(&self.grid, &self.mass, out, "density", self.grid.cell_volume())
    }
}

/// Histogram of the post-burn-in Euler–Maruyama path from the origin.
#[allow(clippy::too_many_arguments)]
pub fn occupancy_histogram(
    land: &Landscape,
    eps: f64,
    x0: &DVector<f64>,
    dt: f64,
    steps: usize,
    burn_in: usize,
    seed: u64,
    grid_n: usize,
) -> Result<Histogram> {
    if steps <= burn_in {
        return Err(Error::Input(format!("steps ({steps}) must exceed burn_in ({burn_in})")));
    }
    let grid = Grid::for_landscape(land, grid_n)?;
    let mut counts = vec![0u64; grid.cells()];
    simulate(land, eps, x0, dt, steps, seed, 0, |k, x| {
        if k > burn_in {
            if let Some(c) = grid.cell_of(x) {
                counts[c] += 1;
            }
        }
    })?;
    let samples = steps - burn_in;
    Ok(Histogram {
        mass: counts.iter().map(|c| *c as f64 / samples as f64).collect(),
        grid,
        samples,
    })
}

pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantMeasureReport {
    pub epsilon: f64,
    pub histogram: Histogram,
    pub tv_to_gibbs: f64,
}

/// Long-run occupancy of the perturbed flow against the Gibbs measure on
/// the same grid.
#[allow(clippy::too_many_arguments)]
pub fn empirical_invariant_measure(
    land: &Landscape,
    eps: f64,
    dt: f64,
    steps: usize,
    burn_in: usize,
    seed: u64,
    grid_n: usize,
) -> Result<InvariantMeasureReport> {
    let x0 = DVector::zeros(land.dimension());
    let histogram = occupancy_histogram(land, eps, &x0, dt, steps, burn_in, seed, grid_n)?;
    let tv_to_gibbs = if eps > 0.0 {
        let g = gibbs_measure(land, eps, grid_n.max(32))?;
        if g.grid == histogram.grid {
            tv_distance(&histogram.mass, &g.mass)
        } else {
            f64::NAN
        }
    } else {
        f64::NAN
    };
    Ok(InvariantMeasureReport {
        epsilon: eps,
        histogram,
        tv_to_gibbs,
    })
}

/// Discrete Freidlin–Wentzell action
/// `1/2 sum_k |(x_{k+1} - x_k)/dt - X(x_k)|_g^2 dt` with the metric norm
/// taken at `x_k`. Time steps must be uniform.
pub fn fw_action(land: &Landscape, traj: &TrajectoryRecord) -> Result<f64> {
    if traj.len() < 2 {
        return Err(Error::Input("action needs at least two points".into()));
    }
    let dt = traj.times[1] - traj.times[0];
    if !(dt > 0.0) || traj.times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0)) {
        return Err(Error::Input("action needs uniform, increasing time steps".into()));
    }
    let mut j = 0.0;
    for k in 0..traj.len() - 1 {
        let x = &traj.points[k];
        let r = (&traj.points[k + 1] - x) / dt - land.drift(x)?;
        j += (r.transpose() * land.metric.matrix(x) * &r)[(0, 0)] * dt;
    }
    Ok(0.5 * j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical::find_critical_points;
    use crate::landscape::{make_builtin, polynomial_landscape, Polynomial, PotentialForm};

    fn v(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn dual_well() -> Landscape {
        make_builtin(PotentialForm::DualWell, &[]).unwrap()
    }

    #[test]
    fn zero_noise_is_explicit_euler() {
        let land = dual_well();
        let rec = euler_maruyama(&land, 0.0, &v(1.0, 1.0), 1e-3, 200, 3).unwrap();
        let mut x = v(1.0, 1.0);
        for k in 0..=200 {
            assert_eq!(rec.points[k], x);
            x = &x + land.vector_field(&x) * 1e-3;
        }
        assert!(fw_action(&land, &rec).unwrap() < 1e-8);
    }

    #[test]
    fn same_seed_same_path() {
        let land = dual_well();
        let a = euler_maruyama(&land, 0.3, &v(0.2, 0.1), 1e-3, 500, 17).unwrap();
        let b = euler_maruyama(&land, 0.3, &v(0.2, 0.1), 1e-3, 500, 17).unwrap();
        assert_eq!(a.points, b.points);
        let c = euler_maruyama(&land, 0.3, &v(0.2, 0.1), 1e-3, 500, 18).unwrap();
        assert_ne!(a.points, c.points);
        assert!(fw_action(&land, &a).unwrap() > 0.0);
    }

    #[test]
    fn small_noise_stays_in_its_well() {
        let land = dual_well();
        let mut crossings = 0;
        simulate(&land, 0.05, &v(2f64.sqrt(), 0.0), 1e-3, 100_000, 5, 0, |_, x| {
            if x[0] <= 0.0 {
                crossings += 1;
            }
        })
        .unwrap();
        assert_eq!(crossings, 0);
    }

    #[test]
    fn confinement_error_when_boundary_is_unavoidable() {
        let p = Polynomial::from_terms(2, &[(&[2, 0], -1.0), (&[0, 2], -1.0)]).unwrap();
        let land = polynomial_landscape(p, 1.0).unwrap();
        let r = simulate(&land, 0.0, &v(0.9, 0.0), 0.5, 10, 1, 0, |_, _| {});
        assert!(matches!(r, Err(Error::Confinement { .. })));
    }

    #[test]
    fn gibbs_symmetry_and_normalization() {
        let g = gibbs_measure(&dual_well(), 1.0, 200).unwrap();
        assert!((g.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((g.mass_where(|x| x[0] > 0.0) - 0.5).abs() < 1e-9);
        assert!(!g.underresolved);
    }

    #[test]
    fn gibbs_log_density_differences() {
        let land = dual_well();
        let eps = 0.5;
        let g = gibbs_measure(&land, eps, 64).unwrap();
        let cells: Vec<usize> = (0..g.mass.len()).filter(|&k| g.mass[k] > 1e-200).take(50).collect();
        let (a, xa) = (cells[0], g.grid.center(cells[0]));
        for &b in &cells[1..] {
            let xb = g.grid.center(b);
            let lhs = g.mass[b].ln() - g.mass[a].ln();
            let rhs = -(land.value(&xb) - land.value(&xa)) / (eps * eps);
            assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn flat_potential_gives_uniform_density() {
        let p = Polynomial::from_terms(2, &[]).unwrap();
        let land = polynomial_landscape(p, 1.0).unwrap();
        let g = gibbs_measure(&land, 0.4, 40).unwrap();
        let inside: Vec<f64> = g.mass.iter().copied().filter(|m| *m > 0.0).collect();
        assert!(inside.iter().all(|m| (m - inside[0]).abs() < 1e-12 * inside[0]));
    }

    #[test]
    fn concentration_near_attractors() {
        let land = dual_well();
        let g = gibbs_measure(&land, 0.3, 400).unwrap();
        let m = g.mass_where(|x| (x - v(2f64.sqrt(), 0.0)).norm() < 0.5 || (x - v(-(2f64.sqrt()), 0.0)).norm() < 0.5);
        assert!(m > 0.95);
    }

    #[test]
    fn tiny_noise_is_underresolved() {
        let land = dual_well();
        let c = find_critical_points(&land, 24).unwrap();
        let g = gibbs_measure(&land, 1e-3, 32).unwrap();
        assert!(g.underresolved);
        assert!(matches!(
            zero_noise_weights(&land, &c, &[0.1, 1e-3], 0.5, 32),
            Err(Error::Underresolved(_))
        ));
    }

    #[test]
    fn single_attractor_takes_all_weight() {
        let p = Polynomial::from_terms(2, &[(&[2, 0], 1.0), (&[0, 2], 1.0)]).unwrap();
        let land = polynomial_landscape(p, 3.0).unwrap();
        let c = find_critical_points(&land, 24).unwrap();
        let r = zero_noise_weights(&land, &c, &[0.4, 0.2], 1.5, 200).unwrap();
        assert_eq!(r.limit_weights.len(), 1);
        assert!((r.limit_weights[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn straight_line_action_matches_trapezoid_oracle() {
        let land = dual_well();
        let a = v(-(2f64.sqrt()), 0.0);
        let b = v(2f64.sqrt(), 0.0);
        let steps = 20_000;
        let dt = 1.0 / steps as f64;
        let mut rec = TrajectoryRecord::default();
        for k in 0..=steps {
            let s = k as f64 * dt;
            let x = &a + (&b - &a) * s;
            let e = land.value(&x);
            rec.push(s, x, e);
        }
        let j = fw_action(&land, &rec).unwrap();
        // Velocity is constant and the drift along the axis is -(x^3 - 2x);
        // trapezoid rule on the squared residual.
        let vel = 2.0 * 2f64.sqrt();
        let n = 200_000;
        let h = 1.0 / n as f64;
        let f = |s: f64| {
            let x = -(2f64.sqrt()) + vel * s;
            let r = vel + (x * x * x - 2.0 * x);
            r * r
        };
        let trap: f64 = (0..n).map(|i| 0.5 * h * (f(i as f64 * h) + f((i + 1) as f64 * h))).sum::<f64>() * 0.5;
        assert!((j - trap).abs() < 1e-6 * trap, "{j} vs {trap}");
    }

    #[test]
    fn grid_cell_round_trip() {
        let land = dual_well();
        let g = Grid::for_landscape(&land, 50).unwrap();
        for k in [0, 7, 1234, 2499] {
            assert_eq!(g.cell_of(&g.center(k)), Some(k));
        }
        assert_eq!(g.cell_of(&v(3.5, 0.0)), None);
    }
}
