//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending,
/// eigenvectors as matching columns.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    sym_eigen(m).0
}

/// `m^p` for a symmetric positive definite matrix.
pub fn spd_power(m: &DMatrix<f64>, p: f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let d = DMatrix::from_diagonal(&vals.map(|v| v.powf(p)));
    &vecs * d * vecs.transpose()
}

/// Number of singular values above `tol`.
pub fn numeric_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    m.clone()
        .singular_values()
        .iter()
        .filter(|s| **s > tol)
        .count()
}

pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn min_abs(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min)
}

/// Round to `digits` significant decimal digits.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let s = format!("{:.*e}", (digits - 1).max(0) as usize, x);
    s.parse().unwrap_or(x)
}

/// Damped Newton for a square system `F(x) = 0`: full steps while they
/// reduce `|F|`, Levenberg–Marquardt otherwise. `accept` vetoes iterates
/// (e.g. outside a domain).
pub fn solve_system(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    jac: impl Fn(&DVector<f64>) -> DMatrix<f64>,
    accept: impl Fn(&DVector<f64>) -> bool,
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Option<DVector<f64>> {
    let n = x0.len();
    let mut x = x0.clone();
    let mut fx = f(&x);
    let mut r = fx.norm();
    if !r.is_finite() {
        return None;
    }
    for _ in 0..max_iter {
        if r < tol {
            return Some(x);
        }
        let j = jac(&x);
        let try_step = |dx: DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, f64)> {
            let xn = &x + dx;
            if !accept(&xn) {
                return None;
            }
            let fn_ = f(&xn);
            let rn = fn_.norm();
            (rn.is_finite() && rn < r).then_some((xn, fn_, rn))
        };
        let mut next = j.clone().lu().solve(&(-&fx)).and_then(&try_step);
        if next.is_none() {
            let jtj = j.transpose() * &j;
            let rhs = -(j.transpose() * &fx);
            let mut mu = 1e-6;
            while next.is_none() && mu < 1e12 {
                let m = &jtj + DMatrix::identity(n, n) * mu;
                next = m.cholesky().map(|c| c.solve(&rhs)).and_then(&try_step);
                mu *= 10.0;
            }
        }
        match next {
            Some((xn, fxn, rn)) => {
                x = xn;
                fx = fxn;
                r = rn;
            }
            None => break,
        }
    }
    (r < tol).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_is_sorted() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -1.0]);
        let (vals, vecs) = sym_eigen(&m);
        assert_eq!(vals.as_slice(), &[-1.0, 3.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spd_inverse_sqrt_squares_to_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = spd_power(&m, -0.5);
        let back = &r * &r * &m;
        assert!((back - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_sig(1.0 / 3.0, 12), 0.333333333333);
        assert_eq!(round_sig(-2.0f64.sqrt(), 12), -1.41421356237);
        assert_eq!(round_sig(0.0, 12), 0.0);
    }
}

/// Serde adapter storing a `DVector` as a plain JSON array.
pub mod dvec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
