//! Small dense linear-algebra helpers shared by every stage of the pipeline.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// `(m + mᵀ) / 2`
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn cholesky(m: &Mat) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m))
}

pub fn is_spd(m: &Mat) -> bool {
    m.is_square() && cholesky(m).is_some()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(m: &Mat) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Raise every eigenvalue of the symmetric matrix to at least `floor`.
/// Returns the clipped matrix and whether anything changed.
pub fn clip_eigenvalues(m: &Mat, floor: f64) -> (Mat, bool) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut clipped = false;
    let vals = eig.eigenvalues.map(|v| {
        if v < floor {
            clipped = true;
            floor
        } else {
            v
        }
    });
    if !clipped {
        return (symmetrize(m), false);
    }
    let q = &eig.eigenvectors;
    (symmetrize(&(q * Mat::from_diagonal(&vals) * q.transpose())), true)
}

/// log-determinant of an SPD matrix.
pub fn logdet_spd(m: &Mat) -> Option<f64> {
    let ch = cholesky(m)?;
    Some(2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub fn inverse_spd(m: &Mat) -> Option<Mat> {
    cholesky(m).map(|c| symmetrize(&c.inverse()))
}

/// Solves `m x = b` for SPD `m`.
pub fn solve_spd(m: &Mat, b: &Mat) -> Option<Mat> {
    cholesky(m).map(|c| c.solve(b))
}

/// Factor `R` with `m = Rᵀ R`: the upper Cholesky factor when `m` is SPD,
/// otherwise the symmetric PSD square root.
pub fn sqrt_factor(m: &Mat) -> Mat {
    let n = m.nrows();
    if m.iter().all(|v| *v == 0.0) {
        return Mat::zeros(n, n);
    }
    match cholesky(m) {
        Some(c) => c.l().transpose(),
        None => {
            let (clipped, _) = clip_eigenvalues(m, 0.0);
            let eig = SymmetricEigen::new(clipped);
            let sq = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            &eig.eigenvectors * Mat::from_diagonal(&sq) * eig.eigenvectors.transpose()
        }
    }
}

/// Column-major `vec(·)`.
pub fn vec(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Mat {
    Mat::from_column_slice(rows, cols, v)
}

pub fn outer(a: &Vector, b: &Vector) -> Mat {
    a * b.transpose()
}

/// Draw from `N(mean, cov)` given an upper factor `R` of `cov = Rᵀ R`.
pub fn sample_gaussian<R: Rng + ?Sized>(mean: &Vector, upper: &Mat, rng: &mut R) -> Vector {
    let z = Vector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + upper.transpose() * z
}

/// Standard normal vector of length `n`.
pub fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Gaussian log-density of `x` under `N(mean, cov)`.
pub fn gaussian_logpdf(x: &Vector, mean: &Vector, cov: &Mat) -> Option<f64> {
    let ch = cholesky(cov)?;
    let d = x - mean;
    let sol = ch.solve(&d);
    let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Some(-0.5 * (d.dot(&sol) + logdet + x.len() as f64 * (2.0 * std::f64::consts::PI).ln()))
}

/// `KL(N(m0, s0) || N(m1, s1))`.
pub fn gaussian_kl(m0: &Vector, s0: &Mat, m1: &Vector, s1: &Mat) -> Option<f64> {
    let c1 = cholesky(s1)?;
    let k = m0.len() as f64;
    let tr = c1.solve(s0).trace();
    let d = m1 - m0;
    let quad = d.dot(&c1.solve(&d));
    let ld1 = 2.0 * c1.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let ld0 = logdet_spd(s0)?;
    Some(0.5 * (tr + quad - k + ld1 - ld0))
}

/// Condition number of a symmetric matrix from its eigenvalues.
pub fn condition_number(m: &Mat) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Rank test through singular values, relative tolerance.
pub fn has_full_column_rank(m: &Mat) -> bool {
    if m.ncols() == 0 {
        return true;
    }
    if m.nrows() < m.ncols() {
        return false;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().fold(0.0f64, |a, v| a.max(*v));
    let min = sv.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    max > 0.0 && min > max * 1e-10
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn vec_round_trip_is_column_major() {
        let m = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = vec(&m);
        assert_eq!(v.as_slice(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(unvec(v.as_slice(), 2, 3), m);
    }

    #[test]
    fn sqrt_factor_reconstructs() {
        let m = Mat::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = sqrt_factor(&m);
        assert!(max_abs_diff(&(r.transpose() * &r), &m) < 1e-12);
        assert_eq!(sqrt_factor(&Mat::zeros(2, 2)), Mat::zeros(2, 2));
    }

    #[test]
    fn clip_raises_small_eigenvalues() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -3.0]);
        let (c, changed) = clip_eigenvalues(&m, 1e-3);
        assert!(changed);
        assert!(close(min_eigenvalue(&c), 1e-3, 1e-12));
    }

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let m = Vector::from_vec(vec![1.0, -2.0]);
        let s = Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert!(gaussian_kl(&m, &s, &m, &s).unwrap().abs() < 1e-14);
    }

    #[test]
    fn logpdf_matches_scalar_formula() {
        let x = Vector::from_vec(vec![1.0]);
        let mu = Vector::from_vec(vec![0.0]);
        let cov = Mat::from_element(1, 1, 2.0);
        let expect = -0.5 * (0.5 + 2f64.ln() + (2.0 * std::f64::consts::PI).ln());
        assert!(close(gaussian_logpdf(&x, &mu, &cov).unwrap(), expect, 1e-14));
    }
}
