use serde::{Deserialize, Serialize};

use crate::dynfit::LinearGaussianDynamics;
use crate::error::{Error, Result};
use crate::inference::SmoothedMoments;
use crate::linalg::{self, Mat, Vector};
use crate::serde_mat;

use super::GaussianPolicy;

/// Stationarity system of the step-`j` objective `−2 Σ_{k≥j} L̄_k`.
///
/// With `K = [F_j, e_j]`, `g = (s, 1)`, `G = E[ggᵀ]`, `N = B°ᵀΣ°⁻¹B°` and
/// `H = E[(ζ − A_s s − c°) gᵀ]`, the objective is
/// `tr(Kᵀ N K G) − 2 tr(Kᵀ B°ᵀΣ°⁻¹ H) + tr(N Σ_j) + const`, so its gradient in
/// `vec K` is `𝓜 vec K + 𝓒` with `𝓜 = 2 (G ⊗ N)` and `𝓒 = −2 vec(B°ᵀΣ°⁻¹H)`.
/// In the covariance factor `S_j` the objective is `vec(S)ᵀ (N ⊗ I) vec(S)`
/// with no linear term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalEquation {
    pub n_s: usize,
    pub n_a: usize,
    /// over `(vec F_j, e_j)`
    #[serde(with = "serde_mat::mat")]
    pub m_block: Mat,
    /// over `vec S_j`
    #[serde(with = "serde_mat::mat")]
    pub m2_block: Mat,
    /// `(𝓒_f, 𝓒_e, 𝓒_σ)`; the last block is identically zero
    #[serde(with = "serde_mat::vector")]
    pub c_vec: Vector,
}

impl NormalEquation {
    fn fe_len(&self) -> usize {
        self.n_a * (self.n_s + 1)
    }

    /// Gain-gain block.
    pub fn m1(&self) -> Mat {
        let nf = self.n_a * self.n_s;
        self.m_block.view((0, 0), (nf, nf)).into_owned()
    }

    /// Offset-offset block.
    pub fn m2(&self) -> Mat {
        let nf = self.n_a * self.n_s;
        self.m_block.view((nf, nf), (self.n_a, self.n_a)).into_owned()
    }

    /// Gain-offset block.
    pub fn m3(&self) -> Mat {
        let nf = self.n_a * self.n_s;
        self.m_block.view((0, nf), (nf, self.n_a)).into_owned()
    }

    pub fn c_fe(&self) -> Vector {
        self.c_vec.rows(0, self.fe_len()).into_owned()
    }

    pub fn c_sigma(&self) -> Vector {
        self.c_vec.rows(self.fe_len(), self.n_a * self.n_a).into_owned()
    }

    /// `𝓜 x + 𝓒` over `(vec F, e)`.
    pub fn gradient(&self, x: &Vector) -> Vector {
        &self.m_block * x + self.c_fe()
    }
}

/// Assemble the stationarity system for step `j`. Later steps contribute only
/// constants in `(F_j, e_j)` because the moments are fixed by the previous
/// policy, so the tail sum reduces to the step-`j` term.
pub fn assemble_normal_equation(
    dyn_: &LinearGaussianDynamics,
    moments: &SmoothedMoments,
    j: usize,
) -> Result<NormalEquation> {
    let n = dyn_.n_s();
    let m = dyn_.n_a();
    if !linalg::has_full_column_rank(&dyn_.b_d[j]) {
        return Err(Error::RankDeficient(format!(
            "B_d at step {} lacks full column rank, so the stationary point is not unique",
            j + 1
        )));
    }
    let sigma = dyn_.sigma_full(j);
    let ch = linalg::cholesky(&sigma)
        .ok_or_else(|| Error::NotPositiveDefinite(format!("model noise covariance at step {}", j + 1)))?;
    let b = dyn_.b_full(j);
    let wb = ch.solve(&b);
    let nmat = linalg::symmetrize(&(b.transpose() * &wb));

    let st = &moments.states;
    let s = &st.mean[j];
    let s1 = &st.mean[j + 1];
    let ess = &st.cov[j] + linalg::outer(s, s);
    let mut g = Mat::zeros(n + 1, n + 1);
    g.view_mut((0, 0), (n, n)).copy_from(&ess);
    g.view_mut((0, n), (n, 1)).copy_from(s);
    g.view_mut((n, 0), (1, n)).copy_from(&s.transpose());
    g[(n, n)] = 1.0;

    // E[ζ gᵀ]
    let y = moments.y[j];
    let mut ezg = Mat::zeros(n + 1, n + 1);
    ezg.view_mut((0, 0), (n, n)).copy_from(&(&st.lag_one[j] + linalg::outer(s1, s)));
    ezg.view_mut((0, n), (n, 1)).copy_from(s1);
    ezg.view_mut((n, 0), (1, n)).copy_from(&(s.transpose() * y));
    ezg[(n, n)] = y;
    let a_full = dyn_.a_full(j);
    let a_s = a_full.columns(0, n).into_owned();
    let c = dyn_.c_full(j);
    let mut ebar_g = Vector::zeros(n + 1);
    ebar_g.rows_mut(0, n).copy_from(s);
    ebar_g[n] = 1.0;
    let h = ezg - &a_s * g.rows(0, n) - linalg::outer(&c, &ebar_g);

    let m_block = linalg::symmetrize(&(g.kronecker(&nmat) * 2.0));
    let m2_block = linalg::symmetrize(&(nmat.kronecker(&Mat::identity(m, m)) * 2.0));
    let c_fe = linalg::vec(&(wb.transpose() * h)) * -2.0;
    let mut c_vec = Vector::zeros(c_fe.len() + m * m);
    c_vec.rows_mut(0, c_fe.len()).copy_from(&c_fe);
    Ok(NormalEquation {
        n_s: n,
        n_a: m,
        m_block,
        m2_block,
        c_vec,
    })
}

/// Unique zero of `𝓜 x + 𝓒` over `(vec F, e)`.
pub fn solve_stationary(ne: &NormalEquation) -> Result<(Mat, Vector)> {
    let ch = linalg::cholesky(&ne.m_block)
        .ok_or_else(|| Error::NotPositiveDefinite("normal-equation matrix".into()))?;
    let x = ch.solve(&(-ne.c_fe()));
    let nf = ne.n_a * ne.n_s;
    let f = linalg::unvec(&x.as_slice()[..nf], ne.n_a, ne.n_s);
    let e = Vector::from_column_slice(&x.as_slice()[nf..]);
    Ok((f, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HessianReport {
    /// smallest eigenvalue of the negated Hessian over `(F, e)`
    pub min_eig: f64,
    /// smallest eigenvalue over the covariance factor
    pub min_eig_sigma: f64,
}

impl HessianReport {
    pub fn is_pd(&self) -> bool {
        self.min_eig > 0.0 && self.min_eig_sigma > 0.0
    }
}

pub fn hessian_certificate(ne: &NormalEquation) -> HessianReport {
    HessianReport {
        min_eig: linalg::min_eigenvalue(&ne.m_block),
        min_eig_sigma: linalg::min_eigenvalue(&ne.m2_block),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardDpResult {
    pub policy: GaussianPolicy,
    pub hessians: Vec<HessianReport>,
}

/// Sweep `j = T..1`, solving each step's stationarity system. The covariance
/// block has a zero linear term, so its stationary point is `Σ_j = 0`; it is
/// projected to `cov_floor·I`.
pub fn backward_dp_update(
    moments: &SmoothedMoments,
    dyn_: &LinearGaussianDynamics,
    phi_hat: &GaussianPolicy,
    cov_floor: f64,
) -> Result<BackwardDpResult> {
    let t = moments.horizon();
    if phi_hat.horizon() != t || dyn_.horizon() != t {
        return Err(Error::Dimension("policy, model and moments disagree on horizon".into()));
    }
    let mut policy = phi_hat.clone();
    let mut hessians = vec![
        HessianReport {
            min_eig: 0.0,
            min_eig_sigma: 0.0
        };
        t
    ];
    let m = dyn_.n_a();
    for j in (0..t).rev() {
        let ne = assemble_normal_equation(dyn_, moments, j)?;
        hessians[j] = hessian_certificate(&ne);
        let (f, e) = solve_stationary(&ne)?;
        policy.gains[j] = f;
        policy.offsets[j] = e;
        policy.set_cov(j, &(Mat::identity(m, m) * cov_floor));
    }
    Ok(BackwardDpResult { policy, hessians })
}
