use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

/// `p(x₂ | x₁) = N(gain·x₁ + offset, cov)` from a joint Gaussian over `(x₁, x₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional {
    pub gain: Mat,
    pub offset: Vector,
    pub cov: Mat,
    /// ridge added to `Σ₁₁` before inversion, zero when none was needed
    pub ridge: f64,
    pub cond_number: f64,
}

const MAX_CONDITION: f64 = 1e12;

/// Condition the joint `N(mean, cov)` on its first `n1` coordinates.
pub fn condition(mean: &Vector, cov: &Mat, n1: usize) -> Result<Conditional> {
    let d = mean.len();
    if cov.shape() != (d, d) || n1 > d {
        return Err(Error::Dimension("joint Gaussian blocks".into()));
    }
    let cov = linalg::symmetrize(cov);
    let s11 = cov.view((0, 0), (n1, n1)).into_owned();
    let s21 = cov.view((n1, 0), (d - n1, n1)).into_owned();
    let s22 = cov.view((n1, n1), (d - n1, d - n1)).into_owned();
    let cond_number = linalg::condition_number(&s11);
    let mut ridge = 0.0;
    let mut s11r = s11.clone();
    if !(cond_number < MAX_CONDITION) || !linalg::is_spd(&s11) {
        let scale = s11.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
        ridge = scale / MAX_CONDITION * 10.0;
        s11r += Mat::identity(n1, n1) * ridge;
    }
    let ch = linalg::cholesky(&s11r).ok_or_else(|| Error::NotPositiveDefinite("conditioning block".into()))?;
    // gain = Σ₂₁ Σ₁₁⁻¹ = (Σ₁₁⁻¹ Σ₁₂)ᵀ
    let gain = ch.solve(&s21.transpose()).transpose();
    let mu1 = mean.rows(0, n1).into_owned();
    let mu2 = mean.rows(n1, d - n1).into_owned();
    let offset = &mu2 - &gain * &mu1;
    let c = linalg::symmetrize(&(&s22 - &gain * s21.transpose()));
    Ok(Conditional {
        gain,
        offset,
        cov: c,
        ridge,
        cond_number,
    })
}
