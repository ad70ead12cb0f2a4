//! Score-based diffusion on an analytic Gaussian-mixture data law:
//! forward and reverse SDEs, the probability-flow ODE and its
//! time-varying potential.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bifurcation::ParameterFamily;
use crate::error::{Error, Result};
use crate::flow::TrajectoryRecord;
use crate::landscape::{Body, Domain, Landscape, Metric, Potential, PotentialForm};

/// Smallest forward time used by the cascade sweep.
pub const T_MIN: f64 = 0.01;

/// Isotropic Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmData {
    pub centroids: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub sigma0: f64,
}

impl GmmData {
    pub fn new(centroids: Vec<Vec<f64>>, weights: Vec<f64>, sigma0: f64) -> Result<Self> {
        let d = centroids.first().map(|c| c.len()).unwrap_or(0);
        if d == 0 || centroids.iter().any(|c| c.len() != d) {
            return Err(Error::Config("centroids must share a positive dimension".into()));
        }
        if weights.len() != centroids.len() || weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("one positive weight per centroid".into()));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config("mixture weights must sum to 1".into()));
        }
        if !(sigma0 > 0.0) {
            return Err(Error::Config("sigma0 must be positive".into()));
        }
        Ok(Self {
            centroids,
            weights,
            sigma0,
        })
    }

    /// Centroids at (±1, ±1), sigma0 = 0.1, with unequal weights so the
    /// cascade unfolds through separate generic folds.
    pub fn four_centroids() -> Self {
        Self::new(
            vec![vec![1.0, 1.0], vec![-1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0]],
            vec![0.31, 0.27, 0.23, 0.19],
            0.1,
        )
        .expect("preset")
    }

    /// Same centroids with equal weights.
    pub fn four_centroids_symmetric() -> Self {
        Self::new(
            vec![vec![1.0, 1.0], vec![-1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0]],
            vec![0.25; 4],
            0.1,
        )
        .expect("preset")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "four-centroids" => Ok(Self::four_centroids()),
            "four-centroids-symmetric" => Ok(Self::four_centroids_symmetric()),
            other => Err(Error::Config(format!("unknown mixture preset '{other}'"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn centroid(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.centroids[k])
    }

    pub fn max_centroid_norm(&self) -> f64 {
        (0..self.centroids.len()).map(|k| self.centroid(k).norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleKind {
    #[serde(rename = "VP")]
    Vp,
    #[serde(rename = "subVP")]
    SubVp,
    /// `beta_min`, `beta_max` are read as `sigma_min`, `sigma_max` of the
    /// geometric schedule `sigma(t) = sigma_min (sigma_max / sigma_min)^t`.
    #[serde(rename = "VE")]
    Ve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub beta_min: f64,
    pub beta_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Marginal {
    pub mean_scale: f64,
    pub added_variance: f64,
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Input(format!("time {t} outside [0, 1]")))
    }
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, beta_min: f64, beta_max: f64) -> Result<Self> {
        if !(beta_min > 0.0 && beta_max > 0.0) {
            return Err(Error::Config("schedule endpoints must be positive".into()));
        }
        Ok(Self {
            kind,
            beta_min,
            beta_max,
        })
    }

    pub fn vp(beta_min: f64, beta_max: f64) -> Self {
        Self {
            kind: ScheduleKind::Vp,
            beta_min,
            beta_max,
        }
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    /// `int_0^t beta_s ds`.
    pub fn beta_integral(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t
    }

    pub fn sigma_ve(&self, t: f64) -> f64 {
        self.beta_min * (self.beta_max / self.beta_min).powf(t)
    }

    /// Mean scale `m_t` and the variance added to a point mass by time `t`.
    pub fn marginal_params(&self, t: f64) -> Result<Marginal> {
        check_time(t)?;
        Ok(self.marginal_unchecked(t))
    }

    fn marginal_unchecked(&self, t: f64) -> Marginal {
        match self.kind {
            ScheduleKind::Vp | ScheduleKind::SubVp => {
                let m = (-0.5 * self.beta_integral(t)).exp();
                let a = 1.0 - m * m;
                Marginal {
                    mean_scale: m,
                    added_variance: if self.kind == ScheduleKind::Vp { a } else { a * a },
                }
            }
            ScheduleKind::Ve => Marginal {
                mean_scale: 1.0,
                added_variance: self.sigma_ve(t).powi(2) - self.beta_min.powi(2),
            },
        }
    }

    /// Squared diffusion coefficient `eps_t`.
    pub fn diffusion(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Vp => self.beta(t),
            ScheduleKind::SubVp => self.beta(t) * (1.0 - (-2.0 * self.beta_integral(t)).exp()),
            ScheduleKind::Ve => 2.0 * self.sigma_ve(t).powi(2) * (self.beta_max / self.beta_min).ln(),
        }
    }

    /// Coefficient `k_t` of the linear forward drift `-k_t x`.
    pub fn linear_drift(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Ve => 0.0,
            _ => 0.5 * self.beta(t),
        }
    }

    /// Per-axis standard deviation of the sampling prior.
    pub fn prior_std(&self) -> f64 {
        match self.kind {
            ScheduleKind::Ve => self.beta_max,
            _ => 1.0,
        }
    }
}

fn component_variance(d: &GmmData, mg: &Marginal, kind: ScheduleKind) -> f64 {
    match kind {
        ScheduleKind::Ve => d.sigma0.powi(2) + mg.added_variance,
        _ => d.sigma0.powi(2) * mg.mean_scale.powi(2) + mg.added_variance,
    }
}

struct MixtureEval {
    log_p: f64,
    score: DVector<f64>,
    resp: Vec<f64>,
    diffs: Vec<DVector<f64>>,
    var: f64,
}

fn mixture(d: &GmmData, s: &NoiseSchedule, t: f64, x: &DVector<f64>) -> MixtureEval {
    let mg = s.marginal_unchecked(t);
    let var = component_variance(d, &mg, s.kind);
    let n = x.len();
    let diffs: Vec<DVector<f64>> = (0..d.weights.len())
        .map(|k| (d.centroid(k) * mg.mean_scale - x) / var)
        .collect();
    let logs: Vec<f64> = (0..d.weights.len())
        .map(|k| d.weights[k].ln() - 0.5 * var * diffs[k].norm_squared())
        .collect();
    let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = ex.iter().sum();
    let resp: Vec<f64> = ex.iter().map(|e| e / z).collect();
    let mut score = DVector::zeros(n);
    for (g, dk) in resp.iter().zip(&diffs) {
        score += dk * *g;
    }
    let log_p = mx + z.ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI * var).ln();
    MixtureEval {
        log_p,
        score,
        resp,
        diffs,
        var,
    }
}

/// `log p_t(x)` and `grad log p_t(x)` in closed form.
pub fn log_marginal_and_score(d: &GmmData, s: &NoiseSchedule, t: f64, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    check_time(t)?;
    let m = mixture(d, s, t, x);
    Ok((m.log_p, m.score))
}

fn score_hessian(m: &MixtureEval) -> DMatrix<f64> {
    let n = m.score.len();
    let mut h = DMatrix::identity(n, n) * (-1.0 / m.var);
    for (g, dk) in m.resp.iter().zip(&m.diffs) {
        h += dk * dk.transpose() * *g;
    }
    h - &m.score * m.score.transpose()
}

/// `sign * V_t` with `V_t = beta_t |x|^2 / 4 + eps_t log p_t / 2` (no
/// quadratic term for VE).
#[derive(Debug, Clone)]
pub struct GmmPotential {
    pub data: GmmData,
    pub schedule: NoiseSchedule,
    pub t: f64,
    pub sign: f64,
}

impl GmmPotential {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let m = mixture(&self.data, &self.schedule, self.t, x);
        let k = self.schedule.linear_drift(self.t);
        self.sign * (0.5 * k * x.norm_squared() + 0.5 * self.schedule.diffusion(self.t) * m.log_p)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let m = mixture(&self.data, &self.schedule, self.t, x);
        let k = self.schedule.linear_drift(self.t);
        (x * k + m.score * (0.5 * self.schedule.diffusion(self.t))) * self.sign
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let m = mixture(&self.data, &self.schedule, self.t, x);
        let n = x.len();
        let k = self.schedule.linear_drift(self.t);
        (DMatrix::identity(n, n) * k + score_hessian(&m) * (0.5 * self.schedule.diffusion(self.t))) * self.sign
    }
}

/// Forward-time probability-flow drift `-grad V_t`.
pub fn probability_flow_drift(d: &GmmData, s: &NoiseSchedule, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_time(t)?;
    let p = GmmPotential {
        data: d.clone(),
        schedule: *s,
        t,
        sign: 1.0,
    };
    Ok(-p.gradient(x))
}

pub fn domain_radius(d: &GmmData) -> f64 {
    (2.0 * d.max_centroid_norm()).max(3.0)
}

/// Landscape of `sign * V_t`; `sign = -1` gives the backward-time
/// (generation) flow whose attractors are the data modes.
pub fn time_landscape(d: &GmmData, s: &NoiseSchedule, t: f64, sign: f64) -> Result<Landscape> {
    check_time(t)?;
    let dim = d.dim();
    Landscape::new(
        Potential::from_body(
            PotentialForm::GmmDiffusion,
            vec![t],
            dim,
            Body::Gmm(GmmPotential {
                data: d.clone(),
                schedule: *s,
                t,
                sign,
            }),
        ),
        Metric::Euclidean,
        Domain::disc(domain_radius(d), dim),
    )
}

/// One-parameter family in backward time `eta = 1 - t`, `eta` in
/// `[0, 1 - T_MIN]`, of generation landscapes.
pub fn time_potential_family(d: &GmmData, s: &NoiseSchedule) -> ParameterFamily {
    let d = d.clone();
    let s = *s;
    ParameterFamily::new(
        "diffusion-cascade",
        vec![(0.0, 1.0 - T_MIN)],
        Arc::new(move |eta: &[f64]| time_landscape(&d, &s, (1.0 - eta[0]).clamp(0.0, 1.0), -1.0)),
    )
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Euler–Maruyama of the reverse SDE from prior draws at `t = 1` down to
/// `t = 0`; sample `i` uses stream `i` of `seed`.
pub fn reverse_sde_sample(d: &GmmData, s: &NoiseSchedule, n: usize, steps: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    if n == 0 || steps == 0 {
        return Err(Error::Input("need at least one sample and one step".into()));
    }
    let dim = d.dim();
    let dt = 1.0 / steps as f64;
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            let mut x = normal_vec(&mut rng, dim) * s.prior_std();
            for k in 0..steps {
                let t = 1.0 - k as f64 * dt;
                let eps = s.diffusion(t);
                let score = mixture(d, s, t, &x).score;
                let drift = &x * s.linear_drift(t) + score * eps;
                x += drift * dt + normal_vec(&mut rng, dim) * (eps * dt).sqrt();
            }
            x
        })
        .collect())
}

/// Euler–Maruyama of the forward noising SDE from `x0` over `[0, 1]`;
/// the energy column holds the linear-drift potential `k_t |x|^2 / 2`.
pub fn forward_sde_sample(s: &NoiseSchedule, x0: &DVector<f64>, steps: usize, seed: u64) -> Result<TrajectoryRecord> {
    forward_sde_stream(s, x0, steps, seed, 0)
}

pub fn forward_sde_stream(s: &NoiseSchedule, x0: &DVector<f64>, steps: usize, seed: u64, stream: u64) -> Result<TrajectoryRecord> {
    if steps == 0 {
        return Err(Error::Input("need at least one step".into()));
    }
    let mut rng = rng_for(seed, stream);
    let dt = 1.0 / steps as f64;
    let mut x = x0.clone();
    let mut rec = TrajectoryRecord::default();
    rec.push(0.0, x.clone(), 0.5 * s.linear_drift(0.0) * x.norm_squared());
    for k in 0..steps {
        let t = k as f64 * dt;
        let noise = normal_vec(&mut rng, x.len()) * (s.diffusion(t) * dt).sqrt();
        x = &x - &x * (s.linear_drift(t) * dt) + noise;
        let tn = (k + 1) as f64 * dt;
        rec.push(tn, x.clone(), 0.5 * s.linear_drift(tn) * x.norm_squared());
    }
    Ok(rec)
}

/// Pushes samples backward in time from `t = 1` to `t_target` along the
/// probability-flow ODE (RK4, `steps` uniform steps).
pub fn probability_flow_push(d: &GmmData, s: &NoiseSchedule, samples: &[DVector<f64>], t_target: f64, steps: usize) -> Result<Vec<DVector<f64>>> {
    check_time(t_target)?;
    let h = (1.0 - t_target) / steps as f64;
    let pot = GmmPotential {
        data: d.clone(),
        schedule: *s,
        t: 1.0,
        sign: 1.0,
    };
    let field = move |t: f64, x: &DVector<f64>| {
        let p = GmmPotential { t, ..pot.clone() };
        p.gradient(x)
    };
    Ok(samples
        .par_iter()
        .map(|x0| {
            // Backward time: dx/d(-t) = grad V_t.
            let mut x = x0.clone();
            for k in 0..steps {
                let t = 1.0 - k as f64 * h;
                let k1 = field(t, &x);
                let k2 = field(t - 0.5 * h, &(&x + &k1 * (0.5 * h)));
                let k3 = field(t - 0.5 * h, &(&x + &k2 * (0.5 * h)));
                let k4 = field(t - h, &(&x + &k3 * h));
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            x
        })
        .collect())
}

/// Mean and per-axis variance of `p_t`.
pub fn marginal_moments(d: &GmmData, s: &NoiseSchedule, t: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    let mg = s.marginal_params(t)?;
    let var = component_variance(d, &mg, s.kind);
    let dim = d.dim();
    let mut mean = DVector::zeros(dim);
    let mut second = DVector::zeros(dim);
    for k in 0..d.weights.len() {
        let mu = d.centroid(k) * mg.mean_scale;
        mean += &mu * d.weights[k];
        second += mu.map(|v| v * v + var) * d.weights[k];
    }
    let v = second - mean.map(|m| m * m);
    Ok((mean, v))
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginalCheck {
    pub t: f64,
    pub samples: usize,
    /// Largest `|mean error| / std` over axes.
    pub mean_error: f64,
    /// Largest relative variance error over axes.
    pub variance_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn sample_moments(xs: &[DVector<f64>]) -> (DVector<f64>, DVector<f64>) {
    let n = xs.len() as f64;
    let dim = xs[0].len();
    let mut mean = DVector::zeros(dim);
    for x in xs {
        mean += x;
    }
    mean /= n;
    let mut var = DVector::zeros(dim);
    for x in xs {
        var += (x - &mean).map(|v| v * v);
    }
    (mean, var / (n - 1.0))
}

/// Pushes `n` prior draws to `t` along the probability-flow ODE and
/// compares per-axis moments with the analytic marginal.
pub fn pf_marginal_check(d: &GmmData, s: &NoiseSchedule, n: usize, t: f64, steps: usize, seed: u64, tolerance: f64) -> Result<MarginalCheck> {
    let dim = d.dim();
    let prior: Vec<DVector<f64>> = (0..n)
        .map(|i| normal_vec(&mut rng_for(seed, i as u64), dim) * s.prior_std())
        .collect();
    let pushed = probability_flow_push(d, s, &prior, t, steps)?;
    let (em, ev) = sample_moments(&pushed);
    let (am, av) = marginal_moments(d, s, t)?;
    let mean_error = (0..dim).map(|i| (em[i] - am[i]).abs() / av[i].sqrt()).fold(0.0, f64::max);
    let variance_error = (0..dim).map(|i| (ev[i] / av[i] - 1.0).abs()).fold(0.0, f64::max);
    Ok(MarginalCheck {
        t,
        samples: n,
        mean_error,
        variance_error,
        tolerance,
        pass: mean_error < tolerance && variance_error < tolerance,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterReport {
    pub fractions: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub max_mean_error: f64,
}

/// Assigns samples to the nearest centroid.
pub fn cluster_by_centroid(d: &GmmData, xs: &[DVector<f64>]) -> ClusterReport {
    let k = d.weights.len();
    let cents: Vec<DVector<f64>> = (0..k).map(|i| d.centroid(i)).collect();
    let mut sums = vec![DVector::zeros(d.dim()); k];
    let mut counts = vec![0usize; k];
    for x in xs {
        let j = (0..k)
            .min_by(|&a, &b| (x - &cents[a]).norm().total_cmp(&(x - &cents[b]).norm()))
            .unwrap();
        sums[j] += x;
        counts[j] += 1;
    }
    let means: Vec<DVector<f64>> = (0..k).map(|j| &sums[j] / counts[j].max(1) as f64).collect();
    let max_mean_error = (0..k)
        .map(|j| if counts[j] == 0 { f64::INFINITY } else { (&means[j] - &cents[j]).norm() })
        .fold(0.0, f64::max);
    ClusterReport {
        fractions: counts.iter().map(|c| *c as f64 / xs.len() as f64).collect(),
        means: means.iter().map(|m| m.iter().copied().collect()).collect(),
        max_mean_error,
    }
}
