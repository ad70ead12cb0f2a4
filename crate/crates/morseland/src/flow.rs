//! Deterministic gradient flow: RK4 with energy-guarded step halving,
//! omega limits and boundary transversality.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::landscape::Landscape;

/// Flow has stopped when `|X| < CONVERGENCE_TOL`.
pub const CONVERGENCE_TOL: f64 = 1e-10;
pub const T_MAX: f64 = 1e4;
/// Largest per-step energy increase accepted before the step is halved.
pub const ENERGY_SLACK: f64 = 1e-9;
pub const DEFAULT_DT: f64 = 1e-2;
const MAX_HALVINGS: u32 = 40;
/// Halvings allowed for a step that leaves the domain; more means the
/// flow itself exits.
const MAX_EXIT_HALVINGS: i32 = 10;

/// Time-stamped path with the potential at each point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub points: Vec<DVector<f64>>,
    pub energies: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, t: f64, x: DVector<f64>, e: f64) {
        self.times.push(t);
        self.points.push(x);
        self.energies.push(e);
    }

    pub fn last_point(&self) -> Option<&DVector<f64>> {
        self.points.last()
    }

    /// CSV with header `t,x1..xn,energy`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.points.first().map_or(0, |p| p.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.push("energy".into());
        w.write_record(&header).map_err(io_err)?;
        for k in 0..self.len() {
            let mut row = vec![fmt(self.times[k])];
            row.extend(self.points[k].iter().map(|v| fmt(*v)));
            row.push(fmt(self.energies[k]));
            w.write_record(&row).map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::Numeric(e.to_string()))
    }

    /// Trapezoid time-average of `f` along the path.
    pub fn time_average(&self, f: impl Fn(&DVector<f64>) -> f64) -> f64 {
        if self.len() < 2 {
            return self.points.first().map_or(f64::NAN, &f);
        }
        let mut acc = 0.0;
        for k in 1..self.len() {
            acc += 0.5 * (f(&self.points[k]) + f(&self.points[k - 1])) * (self.times[k] - self.times[k - 1]);
        }
        acc / (self.times[self.len() - 1] - self.times[0])
    }
}

fn io_err(e: csv::Error) -> Error {
    Error::Numeric(format!("csv: {e}"))
}

fn fmt(v: f64) -> String {
    format!("{}", crate::linalg::round_sig(v, 12))
}

fn rk4(land: &Landscape, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = land.vector_field(x);
    let k2 = land.vector_field(&(x + &k1 * (0.5 * h)));
    let k3 = land.vector_field(&(x + &k2 * (0.5 * h)));
    let k4 = land.vector_field(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Where a flow ended.
#[derive(Debug, Clone)]
pub struct FlowEnd {
    pub point: DVector<f64>,
    pub time: f64,
    pub converged: bool,
}

/// Core integrator, stopping once `|X| < tol`; `observe(t, x, V(x))`
/// sees every accepted point.
pub fn flow_with(
    land: &Landscape,
    x0: &DVector<f64>,
    dt: f64,
    t_max: f64,
    tol: f64,
    mut observe: impl FnMut(f64, &DVector<f64>, f64),
) -> Result<FlowEnd> {
    if !(dt > 0.0) {
        return Err(Error::Input(format!("dt must be positive, got {dt}")));
    }
    if !land.domain.contains(x0) {
        return Err(Error::Domain {
            point: x0.iter().copied().collect(),
        });
    }
    let mut x = x0.clone();
    let mut e = land.value(&x);
    let mut t = 0.0;
    let mut h = dt;
    observe(t, &x, e);
    loop {
        if land.vector_field(&x).norm() < tol {
            return Ok(FlowEnd {
                point: x,
                time: t,
                converged: true,
            });
        }
        if t >= t_max {
            return Ok(FlowEnd {
                point: x,
                time: t,
                converged: false,
            });
        }
        let mut step = h.min(t_max - t);
        let mut halvings = 0;
        // Absolute floor, so a trajectory pressed against the boundary cannot stall.
        let min_exit_step = dt * 0.5f64.powi(MAX_EXIT_HALVINGS);
        let (xn, en) = loop {
            let xn = rk4(land, &x, step);
            let en = land.value(&xn);
            let left = !land.domain.contains(&xn);
            // Energy outside the domain is meaningless, so exits only get the short budget.
            let rose = !left && !(en <= e + ENERGY_SLACK);
            if (rose && halvings < MAX_HALVINGS) || (left && step > min_exit_step) {
                step *= 0.5;
                halvings += 1;
                continue;
            }
            break (xn, en);
        };
        if !land.domain.contains(&xn) {
            return Err(Error::Exit {
                point: xn.iter().copied().collect(),
                time: t + step,
            });
        }
        x = xn;
        e = en;
        t += step;
        observe(t, &x, e);
        h = (step * 2.0).min(dt);
    }
}

/// Integrates from `x0`, recording every accepted step, until `t_max`
/// or until the drift vanishes.
pub fn integrate(land: &Landscape, x0: &DVector<f64>, dt: f64, t_max: f64) -> Result<TrajectoryRecord> {
    let mut rec = TrajectoryRecord::default();
    flow_with(land, x0, dt, t_max, CONVERGENCE_TOL, |t, x, e| rec.push(t, x.clone(), e))?;
    Ok(rec)
}

/// Terminal point of the flow from `x0`.
pub fn omega_limit(land: &Landscape, x0: &DVector<f64>) -> Result<DVector<f64>> {
    omega_limit_dt(land, x0, DEFAULT_DT)
}

pub fn omega_limit_dt(land: &Landscape, x0: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    let end = flow_with(land, x0, dt, T_MAX, CONVERGENCE_TOL, |_, _, _| {})?;
    if end.converged {
        Ok(end.point)
    } else {
        Err(Error::Timeout(format!(
            "flow from {:?} still moving at t = {}",
            x0.as_slice(),
            end.time
        )))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TransversalityReport {
    pub min_inward_product: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Unit directions: equi-angular in the plane, seeded Gaussian otherwise.
pub fn sphere_directions(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    match n {
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => (0..count)
            .map(|k| {
                let th = std::f64::consts::TAU * k as f64 / count as f64;
                DVector::from_vec(vec![th.cos(), th.sin()])
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| {
                    let v: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                    let nrm = v.norm();
                    v / nrm
                })
                .collect()
        }
    }
}

/// Checks that the flow points strictly into the disc on its boundary.
pub fn boundary_transversality(land: &Landscape, samples: usize) -> Result<TransversalityReport> {
    if samples < 64 {
        return Err(Error::Input(format!("need at least 64 boundary samples, got {samples}")));
    }
    let r = land.radius();
    let dirs = sphere_directions(land.dimension(), samples, 0x7a5e);
    let min = dirs
        .iter()
        .map(|u| {
            let x = u * r;
            -land.vector_field(&x).dot(u)
        })
        .fold(f64::INFINITY, f64::min);
    Ok(TransversalityReport {
        min_inward_product: min,
        samples: dirs.len(),
        pass: min > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::{make_builtin, polynomial_landscape, Polynomial, PotentialForm};

    fn v(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn dual_well() -> Landscape {
        make_builtin(PotentialForm::DualWell, &[]).unwrap()
    }

    /// Independent fixed-step forward Euler on the analytic dual-well field.
    fn euler_oracle(mut x: [f64; 2], dt: f64, steps: usize) -> [f64; 2] {
        for _ in 0..steps {
            let g = [x[0].powi(3) - 2.0 * x[0], x[1].powi(3) + 2.0 * x[1]];
            x = [x[0] - dt * g[0], x[1] - dt * g[1]];
        }
        x
    }

    #[test]
    fn reaches_right_well() {
        let l = dual_well();
        let rec = integrate(&l, &v(1.5, 0.5), 0.01, T_MAX).unwrap();
        let end = rec.last_point().unwrap();
        let s2 = 2f64.sqrt();
        assert!((end - v(s2, 0.0)).norm() < 1e-6);
        let o = euler_oracle([1.5, 0.5], 1e-4, 400_000);
        assert!((end[0] - o[0]).abs() < 1e-6 && (end[1] - o[1]).abs() < 1e-6);
    }

    #[test]
    fn equilibrium_stays_put() {
        let l = dual_well();
        let x0 = v(2f64.sqrt(), 0.0);
        let rec = integrate(&l, &x0, 0.01, 10.0).unwrap();
        assert!(rec.points.iter().all(|p| (p - &x0).norm() < 1e-8));
    }

    #[test]
    fn energy_strictly_decreases() {
        let l = dual_well();
        let rec = integrate(&l, &v(1.0, 1.0), 0.01, T_MAX).unwrap();
        for w in rec.energies.windows(2) {
            assert!(w[1] < w[0] || (w[0] - w[1]).abs() < 1e-15);
        }
        let distinct = rec.energies.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(distinct > 100);
    }

    #[test]
    fn omega_limits_by_basin() {
        let l = dual_well();
        let s2 = 2f64.sqrt();
        assert!((omega_limit(&l, &v(0.1, 0.0)).unwrap() - v(s2, 0.0)).norm() < 1e-6);
        assert!((omega_limit(&l, &v(-0.1, 0.0)).unwrap() - v(-s2, 0.0)).norm() < 1e-6);
        assert!(omega_limit(&l, &v(0.0, 1.0)).unwrap().norm() < 1e-6);
    }

    #[test]
    fn halving_dt_barely_moves_terminal_point() {
        let l = make_builtin(PotentialForm::DualCusp, &[]).unwrap();
        let a = omega_limit_dt(&l, &v(0.7, 1.1), 0.02).unwrap();
        let b = omega_limit_dt(&l, &v(0.7, 1.1), 0.01).unwrap();
        assert!((a - b).norm() < 1e-7);
    }

    #[test]
    fn time_average_matches_limit() {
        let l = dual_well();
        let rec = integrate(&l, &v(0.8, -0.6), 0.01, 1e3).unwrap();
        // The run stops once converged; pad the tail with the terminal point.
        let mut rec = rec;
        let last = rec.last_point().unwrap().clone();
        let t_end = *rec.times.last().unwrap();
        if t_end < 1e3 {
            let e = l.value(&last);
            rec.push(1e3, last.clone(), e);
        }
        let avg = rec.time_average(|x| x[0]);
        assert!((avg - last[0]).abs() < 1e-3);
    }

    #[test]
    fn transversality() {
        assert!(boundary_transversality(&dual_well(), 64).unwrap().pass);
        let sn = make_builtin(PotentialForm::SaddleNodeFamily, &[1.0]).unwrap();
        assert!(boundary_transversality(&sn, 128).unwrap().pass);
        let rep = polynomial_landscape(
            Polynomial::from_terms(2, &[(&[2, 0], -1.0), (&[0, 2], -1.0)]).unwrap(),
            1.0,
        )
        .unwrap();
        assert!(!boundary_transversality(&rep, 64).unwrap().pass);
        assert!(boundary_transversality(&rep, 8).is_err());
    }

    #[test]
    fn exit_is_an_error() {
        let rep = polynomial_landscape(
            Polynomial::from_terms(2, &[(&[2, 0], -1.0), (&[0, 2], -1.0)]).unwrap(),
            1.0,
        )
        .unwrap();
        assert!(matches!(integrate(&rep, &v(0.1, 0.0), 0.01, 100.0), Err(Error::Exit { .. })));
    }

    #[test]
    fn csv_has_expected_header() {
        let l = dual_well();
        let rec = integrate(&l, &v(1.0, 0.5), 0.1, 0.3).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x1,x2,energy\n"));
        assert_eq!(text.lines().count(), rec.len() + 1);
    }
}
