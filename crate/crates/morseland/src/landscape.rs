//! Potentials, metrics and disc domains defining a gradient system
//! `X = -g^{-1} grad V`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diffusion::GmmPotential;
use crate::error::{Error, Result};
use crate::hopfield::{Activation, HopfieldNet, ModernHopfield};

/// Dense linear algebra is only used up to this dimension.
pub const MAX_DIMENSION: usize = 64;
/// Default disc radius for the planar builtins.
pub const DEFAULT_RADIUS: f64 = 3.0;
/// The flip family has a third attractor near (0, 3.92).
pub const FLIP_RADIUS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialForm {
    DualWell,
    DualCusp,
    SaddleNodeFamily,
    FlipFamily,
    HopfieldEnergy,
    ModernHopfieldEnergy,
    GmmDiffusion,
    Polynomial,
}

impl PotentialForm {
    pub fn parse(name: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(name.to_string()))
            .map_err(|_| Error::Config(format!("unknown potential form '{name}'")))
    }

    pub fn name(self) -> &'static str {
        match self {
            PotentialForm::DualWell => "dual-well",
            PotentialForm::DualCusp => "dual-cusp",
            PotentialForm::SaddleNodeFamily => "saddle-node-family",
            PotentialForm::FlipFamily => "flip-family",
            PotentialForm::HopfieldEnergy => "hopfield-energy",
            PotentialForm::ModernHopfieldEnergy => "modern-hopfield-energy",
            PotentialForm::GmmDiffusion => "gmm-diffusion",
            PotentialForm::Polynomial => "polynomial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub exponents: Vec<u32>,
    pub coefficient: f64,
}

/// Sum of monomials with analytic derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    dimension: usize,
    terms: Vec<Monomial>,
}

fn pow(x: f64, e: u32) -> f64 {
    x.powi(e as i32)
}

impl Polynomial {
    pub fn new(dimension: usize, terms: Vec<Monomial>) -> Result<Self> {
        if let Some(t) = terms.iter().find(|t| t.exponents.len() != dimension) {
            return Err(Error::Config(format!(
                "monomial {:?} does not have {dimension} exponents",
                t.exponents
            )));
        }
        Ok(Self { dimension, terms })
    }

    /// Build from `(exponents, coefficient)` pairs.
    pub fn from_terms(dimension: usize, terms: &[(&[u32], f64)]) -> Result<Self> {
        Self::new(
            dimension,
            terms
                .iter()
                .map(|(e, c)| Monomial {
                    exponents: e.to_vec(),
                    coefficient: *c,
                })
                .collect(),
        )
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.coefficient *= s;
        }
        self
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.coefficient
                    * t.exponents
                        .iter()
                        .zip(x.iter())
                        .map(|(&e, &xi)| pow(xi, e))
                        .product::<f64>()
            })
            .sum()
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.dimension;
        let mut g = DVector::zeros(n);
        for t in &self.terms {
            for i in 0..n {
                let ei = t.exponents[i];
                if ei == 0 {
                    continue;
                }
                let mut v = t.coefficient * ei as f64;
                for j in 0..n {
                    let e = if j == i { ei - 1 } else { t.exponents[j] };
                    v *= pow(x[j], e);
                }
                g[i] += v;
            }
        }
        g
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dimension;
        let mut h = DMatrix::zeros(n, n);
        for t in &self.terms {
            for i in 0..n {
                for j in i..n {
                    let mut e = t.exponents.clone();
                    let mut c = t.coefficient;
                    if e[i] == 0 {
                        continue;
                    }
                    c *= e[i] as f64;
                    e[i] -= 1;
                    if e[j] == 0 {
                        continue;
                    }
                    c *= e[j] as f64;
                    e[j] -= 1;
                    let v = c * e.iter().zip(x.iter()).map(|(&k, &xi)| pow(xi, k)).product::<f64>();
                    h[(i, j)] += v;
                    if i != j {
                        h[(j, i)] += v;
                    }
                }
            }
        }
        h
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Body {
    Poly(Polynomial),
    Hopfield(HopfieldNet),
    Modern(ModernHopfield),
    Gmm(GmmPotential),
}

/// A potential `V` with its builtin id and parameters.
#[derive(Debug, Clone)]
pub struct Potential {
    pub form: PotentialForm,
    pub params: Vec<f64>,
    pub dimension: usize,
    body: Body,
    tilt: Option<DVector<f64>>,
}

impl Potential {
    pub fn polynomial(form: PotentialForm, params: Vec<f64>, poly: Polynomial) -> Self {
        Self {
            form,
            params,
            dimension: poly.dimension,
            body: Body::Poly(poly),
            tilt: None,
        }
    }

    pub(crate) fn from_body(form: PotentialForm, params: Vec<f64>, dimension: usize, body: Body) -> Self {
        Self {
            form,
            params,
            dimension,
            body,
            tilt: None,
        }
    }

    pub fn as_polynomial(&self) -> Option<&Polynomial> {
        match &self.body {
            Body::Poly(p) => Some(p),
            _ => None,
        }
    }

    /// Linear term `c . x` added to the potential.
    pub fn tilt(&self) -> Option<&DVector<f64>> {
        self.tilt.as_ref()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let base = match &self.body {
            Body::Poly(p) => p.eval(x),
            Body::Hopfield(net) => net.energy_unchecked(x),
            Body::Modern(m) => m.energy(x),
            Body::Gmm(g) => g.value(x),
        };
        base + self.tilt.as_ref().map_or(0.0, |c| c.dot(x))
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = match &self.body {
            Body::Poly(p) => p.gradient(x),
            Body::Hopfield(net) => net.energy_gradient(x),
            Body::Modern(m) => m.energy_gradient(x),
            Body::Gmm(g) => g.gradient(x),
        };
        if let Some(c) = &self.tilt {
            g += c;
        }
        g
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.body {
            Body::Poly(p) => p.hessian(x),
            Body::Hopfield(net) => net.energy_hessian(x),
            Body::Modern(m) => m.energy_hessian(x),
            Body::Gmm(g) => g.hessian(x),
        }
    }
}

/// Inverse-metric fields `g^{ij}(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Euclidean,
    /// `g^{ii} = f'(f^{-1}(v_i))` for an activation `f`.
    ActivationDiagonal(Activation),
    /// `g_ij = delta_ij - 6 (1 - delta_ij) eta G(v1; -1, 1) G(v2; 0, 2)`.
    GaussianBump { eta: f64 },
}

/// Normalized Gaussian density with mean `mu` and standard deviation `sigma`.
pub fn gaussian_density(x: f64, mu: f64, sigma: f64) -> f64 {
    (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp() / (2.0 * std::f64::consts::PI * sigma * sigma).sqrt()
}

impl Metric {
    pub fn is_euclidean(&self) -> bool {
        matches!(self, Metric::Euclidean)
    }

    fn bump(eta: f64, x: &DVector<f64>) -> f64 {
        6.0 * eta * gaussian_density(x[0], -1.0, 1.0) * gaussian_density(x[1], 0.0, 2.0)
    }

    /// Covariant metric `g_ij(x)`.
    pub fn matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        match self {
            Metric::Euclidean => DMatrix::identity(n, n),
            Metric::ActivationDiagonal(a) => {
                DMatrix::from_diagonal(&x.map(|v| 1.0 / a.derivative_at_output(v)))
            }
            Metric::GaussianBump { eta } => {
                let off = -Self::bump(*eta, x);
                DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { off })
            }
        }
    }

    /// Contravariant metric `g^{ij}(x)`.
    pub fn inverse(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        match self {
            Metric::Euclidean => DMatrix::identity(n, n),
            Metric::ActivationDiagonal(a) => {
                DMatrix::from_diagonal(&x.map(|v| a.derivative_at_output(v)))
            }
            Metric::GaussianBump { .. } => self
                .matrix(x)
                .try_inverse()
                .unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN)),
        }
    }

    /// `sqrt(det g_ij)`, the Riemannian volume factor.
    pub fn sqrt_det(&self, x: &DVector<f64>) -> f64 {
        match self {
            Metric::Euclidean => 1.0,
            _ => self.matrix(x).determinant().abs().sqrt(),
        }
    }

    /// Raise an index: `g^{ij} w_j`.
    pub fn raise(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        match self {
            Metric::Euclidean => w.clone(),
            Metric::ActivationDiagonal(a) => {
                DVector::from_fn(w.len(), |i, _| a.derivative_at_output(x[i]) * w[i])
            }
            Metric::GaussianBump { .. } => self.inverse(x) * w,
        }
    }
}

/// Closed disc of radius `radius`, optionally intersected with an open
/// box `(lo, hi)^n` (activation ranges of Hopfield feature states).
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub radius: f64,
    pub dimension: usize,
    pub bounds: Option<(f64, f64)>,
}

impl Domain {
    pub fn disc(radius: f64, dimension: usize) -> Self {
        Self {
            radius,
            dimension,
            bounds: None,
        }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        if x.len() != self.dimension || !x.iter().all(|v| v.is_finite()) {
            return false;
        }
        if x.norm() > self.radius {
            return false;
        }
        match self.bounds {
            Some((lo, hi)) => x.iter().all(|&v| v > lo && v < hi),
            None => true,
        }
    }
}

/// A gradient system `X = -g^{-1} grad V` on a compact domain.
#[derive(Debug, Clone)]
pub struct Landscape {
    pub potential: Potential,
    pub metric: Metric,
    pub domain: Domain,
}

impl Landscape {
    pub fn new(potential: Potential, metric: Metric, domain: Domain) -> Result<Self> {
        if potential.dimension != domain.dimension {
            return Err(Error::Config(format!(
                "potential dimension {} differs from domain dimension {}",
                potential.dimension, domain.dimension
            )));
        }
        if potential.dimension == 0 || potential.dimension > MAX_DIMENSION {
            return Err(Error::Config(format!(
                "dimension {} outside 1..={MAX_DIMENSION}",
                potential.dimension
            )));
        }
        if matches!(metric, Metric::GaussianBump { .. }) && potential.dimension != 2 {
            return Err(Error::Config("gaussian-bump metric is planar only".into()));
        }
        if !(domain.radius > 0.0) {
            return Err(Error::Config("domain radius must be positive".into()));
        }
        Ok(Self {
            potential,
            metric,
            domain,
        })
    }

    pub fn dimension(&self) -> usize {
        self.domain.dimension
    }

    pub fn radius(&self) -> f64 {
        self.domain.radius
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.domain.radius = radius;
        self
    }

    /// Adds the linear term `c . x` to the potential.
    pub fn with_tilt(mut self, c: &[f64]) -> Self {
        let c = DVector::from_column_slice(c);
        self.potential.tilt = Some(match self.potential.tilt.take() {
            Some(t) => t + c,
            None => c,
        });
        self
    }

    fn check(&self, x: &DVector<f64>) -> Result<()> {
        if self.domain.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                point: x.iter().copied().collect(),
            })
        }
    }

    pub fn eval_potential(&self, x: &DVector<f64>) -> Result<f64> {
        self.check(x)?;
        Ok(self.potential.value(x))
    }

    pub fn grad_potential(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(x)?;
        Ok(self.potential.gradient(x))
    }

    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check(x)?;
        Ok(self.potential.hessian(x))
    }

    /// `X(x) = -g^{ij}(x) dV/dx^j`, failing when the metric is not positive definite.
    pub fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(x)?;
        if !self.metric.is_euclidean() {
            let ginv = self.metric.inverse(x);
            if ginv.clone().cholesky().is_none() {
                return Err(Error::Numeric(format!(
                    "inverse metric not positive definite at {:?}",
                    x.as_slice()
                )));
            }
        }
        Ok(self.vector_field(x))
    }

    /// Unchecked potential value (internal fast path).
    #[inline]
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.potential.value(x)
    }

    /// Unchecked gradient (internal fast path).
    #[inline]
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.potential.gradient(x)
    }

    /// Unchecked drift (internal fast path).
    #[inline]
    pub fn vector_field(&self, x: &DVector<f64>) -> DVector<f64> {
        -self.metric.raise(x, &self.potential.gradient(x))
    }

    pub fn spec(&self) -> LandscapeSpec {
        LandscapeSpec {
            form: self.potential.form.name().to_string(),
            params: self.potential.params.clone(),
            dimension: self.dimension(),
            domain_radius: self.radius(),
            metric: MetricSpec::from_metric(&self.metric),
            monomials: match (&self.potential.form, self.potential.as_polynomial()) {
                (PotentialForm::Polynomial, Some(p)) => Some(p.terms.clone()),
                _ => None,
            },
            tilt: self.potential.tilt.as_ref().map(|t| t.iter().copied().collect()),
        }
    }
}

/// Central-difference gradient with step `max(1e-5, 1e-5 |x|)`.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    let h = fd_step(x);
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central differences of a gradient, symmetrized by averaging mixed estimates.
pub fn fd_hessian(grad: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let h = fd_step(x);
    let mut m = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for j in 0..n {
        xp[j] = x[j] + h;
        let gp = grad(&xp);
        xp[j] = x[j] - h;
        let gm = grad(&xp);
        xp[j] = x[j];
        m.set_column(j, &((gp - gm) / (2.0 * h)));
    }
    (&m + m.transpose()) * 0.5
}

pub fn fd_step(x: &DVector<f64>) -> f64 {
    (1e-5 * x.norm()).max(1e-5)
}

fn planar(terms: &[(&[u32], f64)], scale: f64) -> Polynomial {
    Polynomial::from_terms(2, terms).expect("planar builtin").scaled(scale)
}

/// Polynomial part of a builtin planar potential.
pub fn builtin_polynomial(form: PotentialForm, params: &[f64]) -> Result<Polynomial> {
    let arity = match form {
        PotentialForm::DualWell | PotentialForm::DualCusp => 0,
        PotentialForm::SaddleNodeFamily | PotentialForm::FlipFamily => 1,
        _ => {
            return Err(Error::Config(format!(
                "'{}' is not a polynomial builtin",
                form.name()
            )))
        }
    };
    if params.len() != arity {
        return Err(Error::Config(format!(
            "'{}' takes {arity} parameter(s), got {}",
            form.name(),
            params.len()
        )));
    }
    Ok(match form {
        PotentialForm::DualWell => planar(
            &[(&[4, 0], 0.25), (&[0, 4], 0.25), (&[2, 0], -1.0), (&[0, 2], 1.0)],
            1.0,
        ),
        PotentialForm::DualCusp => planar(
            &[
                (&[4, 0], 1.0),
                (&[0, 4], 1.0),
                (&[0, 3], -3.0),
                (&[2, 1], 7.0),
                (&[0, 2], 0.1),
                (&[0, 1], -2.0),
            ],
            0.1,
        ),
        PotentialForm::SaddleNodeFamily => planar(
            &[
                (&[4, 0], 1.0 / 6.0),
                (&[0, 4], 1.0 / 6.0),
                (&[2, 1], -0.5),
                (&[0, 1], -0.5),
                (&[1, 0], 0.6 * params[0]),
            ],
            1.0,
        ),
        PotentialForm::FlipFamily => planar(
            &[
                (&[4, 0], 0.5),
                (&[0, 4], 0.25),
                (&[0, 3], -1.0),
                (&[2, 1], 2.0),
                (&[0, 2], -2.0),
                (&[0, 1], 1.5),
                (&[1, 0], 0.5 * params[0]),
            ],
            0.2,
        ),
        _ => unreachable!(),
    })
}

/// One of the named planar landscapes with its exact coefficients.
pub fn make_builtin(form: PotentialForm, params: &[f64]) -> Result<Landscape> {
    let poly = builtin_polynomial(form, params)?;
    let (metric, radius) = match form {
        PotentialForm::FlipFamily => (Metric::GaussianBump { eta: params[0] }, FLIP_RADIUS),
        _ => (Metric::Euclidean, DEFAULT_RADIUS),
    };
    Landscape::new(
        Potential::polynomial(form, params.to_vec(), poly),
        metric,
        Domain::disc(radius, 2),
    )
}

pub fn make_builtin_named(name: &str, params: &[f64]) -> Result<Landscape> {
    make_builtin(PotentialForm::parse(name)?, params)
}

/// User-defined polynomial landscape with euclidean metric.
pub fn polynomial_landscape(poly: Polynomial, radius: f64) -> Result<Landscape> {
    let n = poly.dimension;
    Landscape::new(
        Potential::polynomial(PotentialForm::Polynomial, vec![], poly),
        Metric::Euclidean,
        Domain::disc(radius, n),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub form: String,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
}

impl MetricSpec {
    pub fn euclidean() -> Self {
        Self {
            form: "euclidean".into(),
            params: vec![],
            activation: None,
        }
    }

    pub fn from_metric(m: &Metric) -> Self {
        match m {
            Metric::Euclidean => Self::euclidean(),
            Metric::ActivationDiagonal(a) => Self {
                form: "activation-diagonal".into(),
                params: vec![],
                activation: Some(*a),
            },
            Metric::GaussianBump { eta } => Self {
                form: "gaussian-bump-family".into(),
                params: vec![*eta],
                activation: None,
            },
        }
    }

    pub fn build(&self) -> Result<Metric> {
        match self.form.as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "activation-diagonal" => Ok(Metric::ActivationDiagonal(
                self.activation.unwrap_or(Activation::Tanh),
            )),
            "gaussian-bump-family" => match self.params.as_slice() {
                [eta] => Ok(Metric::GaussianBump { eta: *eta }),
                _ => Err(Error::Config("gaussian-bump-family takes one parameter".into())),
            },
            other => Err(Error::Config(format!("unknown metric form '{other}'"))),
        }
    }
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self::euclidean()
    }
}

/// JSON landscape description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSpec {
    pub form: String,
    #[serde(default)]
    pub params: Vec<f64>,
    pub dimension: usize,
    pub domain_radius: f64,
    #[serde(default)]
    pub metric: MetricSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monomials: Option<Vec<Monomial>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tilt: Option<Vec<f64>>,
}

impl LandscapeSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("landscape JSON: {e}")))
    }

    pub fn build(&self) -> Result<Landscape> {
        let form = PotentialForm::parse(&self.form)?;
        let land = match form {
            PotentialForm::Polynomial => {
                let terms = self
                    .monomials
                    .clone()
                    .ok_or_else(|| Error::Config("polynomial form needs 'monomials'".into()))?;
                let poly = Polynomial::new(self.dimension, terms)?;
                Landscape::new(
                    Potential::polynomial(form, self.params.clone(), poly),
                    self.metric.build()?,
                    Domain::disc(self.domain_radius, self.dimension),
                )?
            }
            PotentialForm::DualWell
            | PotentialForm::DualCusp
            | PotentialForm::SaddleNodeFamily
            | PotentialForm::FlipFamily => {
                if self.dimension != 2 {
                    return Err(Error::Config(format!("'{}' is planar", self.form)));
                }
                let base = make_builtin(form, &self.params)?;
                let metric = if self.metric.form == "euclidean" && form == PotentialForm::FlipFamily {
                    base.metric.clone()
                } else {
                    self.metric.build()?
                };
                Landscape::new(base.potential, metric, Domain::disc(self.domain_radius, 2))?
            }
            _ => {
                return Err(Error::Config(format!(
                    "'{}' landscapes are built from network or mixture data, not from a landscape file",
                    self.form
                )))
            }
        };
        Ok(match &self.tilt {
            Some(t) if t.len() == land.dimension() => land.with_tilt(t),
            Some(_) => return Err(Error::Config("tilt length differs from dimension".into())),
            None => land,
        })
    }
}
