//! Reference computations for the integration suites. Each one is written
//! from the model definition rather than from the library's algorithms.
#![allow(dead_code)]

use dpsoc::dynfit::LinearGaussianDynamics;
use dpsoc::emdp::GaussianPolicy;
use dpsoc::env::CostModel;
use dpsoc::inference::{SmoothedMoments, StateMoments};
use dpsoc::linalg::{Mat, Vector};
use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| scale * (rng.random::<f64>() * 2.0 - 1.0))
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| scale * (rng.random::<f64>() * 2.0 - 1.0))
}

pub fn spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Mat {
    let a = uniform(rng, n, n, 1.0);
    &a * a.transpose() * 0.5 + Mat::identity(n, n) * floor
}

fn chol(m: &Mat) -> Cholesky<f64, nalgebra::Dyn> {
    Cholesky::new(m.clone()).expect("reference computation needs an SPD matrix")
}

fn logdet(m: &Mat) -> f64 {
    chol(m).l().diagonal().iter().map(|v| 2.0 * v.ln()).sum()
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

pub fn max_abs_vec(v: &Vector) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// A model, a policy, an observation sequence and the initial state prior.
pub struct Instance {
    pub dyn_: LinearGaussianDynamics,
    pub pol: GaussianPolicy,
    pub y: Vec<f64>,
    pub mu1: Vector,
    pub p1: Mat,
}

/// Random model whose input map has full column rank (`m ≤ n`).
pub fn random_dynamics(rng: &mut ChaCha8Rng, t: usize, n: usize, m: usize) -> LinearGaussianDynamics {
    let mut a = vec![];
    let mut c = vec![];
    let mut s = vec![];
    for _ in 0..t {
        let mut ak = uniform(rng, n + 1, n + m, 0.8);
        for i in 0..m {
            ak[(i, n + i)] += 1.0;
        }
        a.push(ak);
        c.push(uniform_vec(rng, n + 1, 0.5));
        s.push(spd(rng, n + 1, 0.2));
    }
    LinearGaussianDynamics::from_full(&a, &c, &s, n).unwrap()
}

pub fn random_policy(rng: &mut ChaCha8Rng, t: usize, n: usize, m: usize) -> GaussianPolicy {
    let covs: Vec<Mat> = (0..t).map(|_| spd(rng, m, 0.1)).collect();
    GaussianPolicy::new(
        (0..t).map(|_| uniform(rng, m, n, 0.5)).collect(),
        (0..t).map(|_| uniform_vec(rng, m, 0.5)).collect(),
        &covs,
    )
    .unwrap()
}

pub fn random_instance(rng: &mut ChaCha8Rng, t: usize, n: usize, m: usize) -> Instance {
    let dyn_ = random_dynamics(rng, t, n, m);
    let pol = random_policy(rng, t, n, m);
    let y = (0..t).map(|_| rng.random::<f64>()).collect();
    let mu1 = uniform_vec(rng, n, 0.5);
    let p1 = spd(rng, n, 0.3);
    Instance { dyn_, pol, y, mu1, p1 }
}

/// Joint Gaussian over `s_1..s_{T+1}`, `a_1..a_T`, `y_1..y_T`, grown one block
/// at a time: a block `v = L·x + c + ε` with `ε` independent of the existing
/// variables `x` has `Cov(v, x) = L Cov(x)` and `Cov(v) = L Cov(x) Lᵀ + Cov(ε)`.
pub struct Joint {
    pub mean: Vector,
    pub cov: Mat,
    pub s: Vec<usize>,
    pub a: Vec<usize>,
    pub y: Vec<usize>,
    pub n: usize,
    pub m: usize,
}

impl Joint {
    fn grow(&mut self, lin: &Mat, c: &Vector, noise: &Mat) -> usize {
        let d = self.mean.len();
        let r = lin.nrows();
        let mut mean = Vector::zeros(d + r);
        mean.rows_mut(0, d).copy_from(&self.mean);
        mean.rows_mut(d, r).copy_from(&(lin * &self.mean + c));
        let cross = lin * &self.cov;
        let mut cov = Mat::zeros(d + r, d + r);
        cov.view_mut((0, 0), (d, d)).copy_from(&self.cov);
        cov.view_mut((d, 0), (r, d)).copy_from(&cross);
        cov.view_mut((0, d), (d, r)).copy_from(&cross.transpose());
        cov.view_mut((d, d), (r, r)).copy_from(&(&cross * lin.transpose() + noise));
        self.mean = mean;
        self.cov = cov;
        d
    }

    pub fn build(dyn_: &LinearGaussianDynamics, pol: &GaussianPolicy, mu1: &Vector, p1: &Mat) -> Joint {
        let n = dyn_.n_s();
        let m = dyn_.n_a();
        let mut j = Joint {
            mean: mu1.clone(),
            cov: p1.clone(),
            s: vec![0],
            a: vec![],
            y: vec![],
            n,
            m,
        };
        for k in 0..dyn_.horizon() {
            let sk = j.s[k];
            let mut lin = Mat::zeros(m, j.mean.len());
            lin.view_mut((0, sk), (m, n)).copy_from(&pol.gains[k]);
            let ak = j.grow(&lin, &pol.offsets[k], &pol.cov(k));
            j.a.push(ak);

            let a_full = dyn_.a_full(k);
            let mut lin = Mat::zeros(n + 1, j.mean.len());
            lin.view_mut((0, sk), (n + 1, n)).copy_from(&a_full.columns(0, n));
            lin.view_mut((0, ak), (n + 1, m)).copy_from(&a_full.columns(n, m));
            let next = j.grow(&lin, &dyn_.c_full(k), &dyn_.sigma_full(k));
            j.s.push(next);
            j.y.push(next + n);
        }
        j
    }

    /// Condition on `y_1..y_j`.
    pub fn condition(&self, y: &[f64], j: usize) -> Posterior {
        let d = self.mean.len();
        let obs: Vec<usize> = self.y[..j].to_vec();
        let rest: Vec<usize> = (0..d).filter(|i| !obs.contains(i)).collect();
        let mut mean = self.mean.clone();
        let mut cov = self.cov.clone();
        let mut log_marginal = 0.0;
        if j > 0 {
            let c_oo = self.cov.select_rows(&obs).select_columns(&obs);
            let c_ro = self.cov.select_rows(&rest).select_columns(&obs);
            let c_rr = self.cov.select_rows(&rest).select_columns(&rest);
            let m_o = self.mean.select_rows(&obs);
            let resid = Vector::from_column_slice(&y[..j]) - &m_o;
            let ch = chol(&c_oo);
            let m_r = self.mean.select_rows(&rest) + &c_ro * ch.solve(&resid);
            let p_r = &c_rr - &c_ro * ch.solve(&c_ro.transpose());
            log_marginal = -0.5
                * (resid.dot(&ch.solve(&resid)) + logdet(&c_oo) + j as f64 * (2.0 * std::f64::consts::PI).ln());
            cov.fill(0.0);
            for (a, &ia) in rest.iter().enumerate() {
                mean[ia] = m_r[a];
                for (b, &ib) in rest.iter().enumerate() {
                    cov[(ia, ib)] = 0.5 * (p_r[(a, b)] + p_r[(b, a)]);
                }
            }
            for (o, &io) in obs.iter().enumerate() {
                mean[io] = y[o];
            }
        }
        Posterior {
            mean,
            cov,
            s: self.s.clone(),
            n: self.n,
            log_marginal,
        }
    }
}

pub struct Posterior {
    pub mean: Vector,
    pub cov: Mat,
    pub s: Vec<usize>,
    pub n: usize,
    /// `log p(y_1..y_j)`
    pub log_marginal: f64,
}

impl Posterior {
    pub fn state_mean(&self, k: usize) -> Vector {
        self.mean.rows(self.s[k], self.n).into_owned()
    }

    /// `Cov(s_i, s_j | ·)`
    pub fn cross(&self, i: usize, j: usize) -> Mat {
        self.cov.view((self.s[i], self.s[j]), (self.n, self.n)).into_owned()
    }

    pub fn state_cov(&self, k: usize) -> Mat {
        self.cross(k, k)
    }

    /// Mean and covariance of the stacked states.
    pub fn states(&self) -> (Vector, Mat) {
        let idx: Vec<usize> = self.s.iter().flat_map(|&i| i..i + self.n).collect();
        (self.mean.select_rows(&idx), self.cov.select_rows(&idx).select_columns(&idx))
    }

    pub fn smoothed(&self, y: &[f64], pol: &GaussianPolicy) -> SmoothedMoments {
        let t = self.s.len() - 1;
        let states = StateMoments {
            mean: (0..=t).map(|k| self.state_mean(k)).collect(),
            cov: (0..=t).map(|k| self.state_cov(k)).collect(),
            lag_one: (0..t).map(|k| self.cross(k + 1, k)).collect(),
        };
        SmoothedMoments::new(states, y.to_vec(), pol)
    }
}

/// Second moments of `ζ = (s_{k+1}, y_k)` and `z = (s_k, a_k)` when the action
/// is drawn from `N(F s_k + e, Σ)` independently of everything but `s_k`.
pub struct Blocks {
    pub e_zeta: Vector,
    pub e_z: Vector,
    pub zeta_zeta: Mat,
    pub zeta_z: Mat,
    pub z_z: Mat,
}

/// `w = (s_k, s_{k+1}, η)` and the affine maps from it to `z` and `ζ`.
struct Lifted {
    mean: Vector,
    cov: Mat,
    lz: Mat,
    cz: Vector,
    lzeta: Mat,
    czeta: Vector,
}

fn lifted(post: &Posterior, y_k: f64, k: usize, f: &Mat, e: &Vector, sigma: &Mat) -> Lifted {
    let n = post.n;
    let m = f.nrows();
    let dim = 2 * n + m;
    let mut mean = Vector::zeros(dim);
    mean.rows_mut(0, n).copy_from(&post.state_mean(k));
    mean.rows_mut(n, n).copy_from(&post.state_mean(k + 1));
    let mut cov = Mat::zeros(dim, dim);
    cov.view_mut((0, 0), (n, n)).copy_from(&post.state_cov(k));
    cov.view_mut((0, n), (n, n)).copy_from(&post.cross(k, k + 1));
    cov.view_mut((n, 0), (n, n)).copy_from(&post.cross(k + 1, k));
    cov.view_mut((n, n), (n, n)).copy_from(&post.state_cov(k + 1));
    cov.view_mut((2 * n, 2 * n), (m, m)).copy_from(sigma);
    let mut lz = Mat::zeros(n + m, dim);
    lz.view_mut((0, 0), (n, n)).copy_from(&Mat::identity(n, n));
    lz.view_mut((n, 0), (m, n)).copy_from(f);
    lz.view_mut((n, 2 * n), (m, m)).copy_from(&Mat::identity(m, m));
    let mut cz = Vector::zeros(n + m);
    cz.rows_mut(n, m).copy_from(e);
    let mut lzeta = Mat::zeros(n + 1, dim);
    lzeta.view_mut((0, n), (n, n)).copy_from(&Mat::identity(n, n));
    let mut czeta = Vector::zeros(n + 1);
    czeta[n] = y_k;
    Lifted {
        mean,
        cov,
        lz,
        cz,
        lzeta,
        czeta,
    }
}

fn second_moment(w: &Lifted, lu: &Mat, cu: &Vector, lv: &Mat, cv: &Vector) -> Mat {
    let mu = lu * &w.mean + cu;
    let mv = lv * &w.mean + cv;
    lu * &w.cov * lv.transpose() + &mu * mv.transpose()
}

pub fn blocks(post: &Posterior, y_k: f64, k: usize, f: &Mat, e: &Vector, sigma: &Mat) -> Blocks {
    let w = lifted(post, y_k, k, f, e, sigma);
    Blocks {
        e_zeta: &w.lzeta * &w.mean + &w.czeta,
        e_z: &w.lz * &w.mean + &w.cz,
        zeta_zeta: second_moment(&w, &w.lzeta, &w.czeta, &w.lzeta, &w.czeta),
        zeta_z: second_moment(&w, &w.lzeta, &w.czeta, &w.lz, &w.cz),
        z_z: second_moment(&w, &w.lz, &w.cz, &w.lz, &w.cz),
    }
}

/// `E[log N(ζ; A°z + c°, Σ°)]` up to the `2π` constant, with the residual
/// mapped straight from `w`.
pub fn step_surrogate(dyn_: &LinearGaussianDynamics, post: &Posterior, y: &[f64], pol: &GaussianPolicy, k: usize) -> f64 {
    let w = lifted(post, y[k], k, &pol.gains[k], &pol.offsets[k], &pol.cov(k));
    let a = dyn_.a_full(k);
    let r = &w.lzeta - &a * &w.lz;
    let cr = &w.czeta - &a * &w.cz - dyn_.c_full(k);
    let err = second_moment(&w, &r, &cr, &r, &cr);
    let sigma = dyn_.sigma_full(k);
    -0.5 * chol(&sigma).solve(&err).trace() - 0.5 * logdet(&sigma)
}

/// Sum of the step surrogates over `k ≥ j`.
pub fn surrogate_sum(dyn_: &LinearGaussianDynamics, post: &Posterior, y: &[f64], pol: &GaussianPolicy, j: usize) -> f64 {
    (j..y.len()).map(|k| step_surrogate(dyn_, post, y, pol, k)).sum()
}

/// `E[Σ_k (z_k − z*)ᵀ diag(Q_s, Q_a) (z_k − z*)]` under the posterior with
/// the policy's action model.
pub fn posterior_cost(post: &Posterior, y: &[f64], pol: &GaussianPolicy, cost: &CostModel) -> f64 {
    let n = cost.q_s.nrows();
    let m = cost.q_a.nrows();
    let mut q = Mat::zeros(n + m, n + m);
    q.view_mut((0, 0), (n, n)).copy_from(&cost.q_s);
    q.view_mut((n, n), (m, m)).copy_from(&cost.q_a);
    let mut target = Vector::zeros(n + m);
    target.rows_mut(0, n).copy_from(&cost.s_star);
    target.rows_mut(n, m).copy_from(&cost.a_star);
    (0..y.len())
        .map(|k| {
            let w = lifted(post, y[k], k, &pol.gains[k], &pol.offsets[k], &pol.cov(k));
            let ct = &w.cz - &target;
            (&q * second_moment(&w, &w.lz, &ct, &w.lz, &ct)).trace()
        })
        .sum()
}

/// `KL(N(m0, s0) || N(m1, s1))`.
pub fn gaussian_kl(m0: &Vector, s0: &Mat, m1: &Vector, s1: &Mat) -> f64 {
    let c1 = chol(s1);
    let d = m1 - m0;
    0.5 * (c1.solve(s0).trace() + d.dot(&c1.solve(&d)) - m0.len() as f64 + logdet(s1) - logdet(s0))
}

/// State marginals under the state part of the model.
pub fn state_marginals(dyn_: &LinearGaussianDynamics, pol: &GaussianPolicy, mu1: &Vector, p1: &Mat) -> Vec<(Vector, Mat)> {
    let mut out = vec![(mu1.clone(), p1.clone())];
    for k in 0..dyn_.horizon() {
        let (m, p) = out[k].clone();
        let ak = &dyn_.a_d[k] + &dyn_.b_d[k] * &pol.gains[k];
        let mean = &ak * &m + &dyn_.b_d[k] * &pol.offsets[k] + &dyn_.c_d[k];
        let cov = &ak * &p * ak.transpose() + &dyn_.b_d[k] * pol.cov(k) * dyn_.b_d[k].transpose() + &dyn_.sigma_d[k];
        out.push((mean, 0.5 * (&cov + cov.transpose())));
    }
    out
}

fn state_action(pol: &GaussianPolicy, k: usize, mean: &Vector, cov: &Mat) -> (Vector, Mat) {
    let n = mean.len();
    let m = pol.n_a();
    let f = &pol.gains[k];
    let mut mu = Vector::zeros(n + m);
    mu.rows_mut(0, n).copy_from(mean);
    mu.rows_mut(n, m).copy_from(&(f * mean + &pol.offsets[k]));
    let mut c = Mat::zeros(n + m, n + m);
    c.view_mut((0, 0), (n, n)).copy_from(cov);
    c.view_mut((n, 0), (m, n)).copy_from(&(f * cov));
    c.view_mut((0, n), (n, m)).copy_from(&(cov * f.transpose()));
    c.view_mut((n, n), (m, m)).copy_from(&(f * cov * f.transpose() + pol.cov(k)));
    (mu, c)
}

/// Per-step KL of `p(s) p(a|s)` from `p(s) q(a|s)` with `p(s)` the state
/// marginal of `p`, as a KL between the two joint Gaussians.
pub fn trajectory_kl(p: &GaussianPolicy, q: &GaussianPolicy, dyn_: &LinearGaussianDynamics, mu1: &Vector, p1: &Mat) -> Vec<f64> {
    let marg = state_marginals(dyn_, p, mu1, p1);
    (0..p.horizon())
        .map(|k| {
            let (m0, s0) = state_action(p, k, &marg[k].0, &marg[k].1);
            let (m1, s1) = state_action(q, k, &marg[k].0, &marg[k].1);
            gaussian_kl(&m0, &s0, &m1, &s1)
        })
        .collect()
}

/// Soft LQR for the stage cost `(s − s*)ᵀQ(s − s*) + (a − a*)ᵀR(a − a*)` minus
/// the action entropy, solved as a hard Riccati recursion on the augmented
/// state `(s, 1)` with zero terminal value. The entropy term leaves the gains
/// unchanged and sets the action covariance to the inverse action Hessian of
/// the cost-to-go, `½(R + B̃ᵀPB̃)⁻¹`.
pub fn soft_riccati(dyn_: &LinearGaussianDynamics, cost: &CostModel) -> (Vec<Mat>, Vec<Vector>, Vec<Mat>) {
    let n = dyn_.n_s();
    let m = dyn_.n_a();
    let t = dyn_.horizon();
    let q = &cost.q_s;
    let r = &cost.q_a;
    let mut qt = Mat::zeros(n + 1, n + 1);
    let qs = q * &cost.s_star;
    qt.view_mut((0, 0), (n, n)).copy_from(q);
    qt.view_mut((0, n), (n, 1)).copy_from(&(-&qs));
    qt.view_mut((n, 0), (1, n)).copy_from(&(-qs.transpose()));
    qt[(n, n)] = cost.s_star.dot(&qs);
    let mut nx = Mat::zeros(m, n + 1);
    nx.view_mut((0, n), (m, 1)).copy_from(&(-(r * &cost.a_star)));
    let mut p = Mat::zeros(n + 1, n + 1);
    let mut gains = vec![Mat::zeros(m, n); t];
    let mut offsets = vec![Vector::zeros(m); t];
    let mut covs = vec![Mat::zeros(m, m); t];
    for k in (0..t).rev() {
        let mut at = Mat::identity(n + 1, n + 1);
        at.view_mut((0, 0), (n, n)).copy_from(&dyn_.a_d[k]);
        at.view_mut((0, n), (n, 1)).copy_from(&dyn_.c_d[k]);
        let mut bt = Mat::zeros(n + 1, m);
        bt.view_mut((0, 0), (n, m)).copy_from(&dyn_.b_d[k]);
        let h = r + bt.transpose() * &p * &bt;
        let g = bt.transpose() * &p * &at + &nx;
        let hinv = h.clone().try_inverse().unwrap();
        let gain = -(&hinv * &g);
        gains[k] = gain.columns(0, n).into_owned();
        offsets[k] = gain.column(n).into_owned();
        covs[k] = (&hinv + hinv.transpose()) * 0.25;
        let next = &qt + at.transpose() * &p * &at - g.transpose() * &hinv * &g;
        p = 0.5 * (&next + next.transpose());
    }
    (gains, offsets, covs)
}

/// `(1/ρ) log Σ P_i e^{ρ J_i}` by a shifted sum over the charged atoms.
pub fn free_energy(p: &[f64], j: &[f64], rho: f64) -> f64 {
    let logs: Vec<f64> = p.iter().zip(j).filter(|(pi, _)| **pi > 0.0).map(|(pi, ji)| pi.ln() + rho * ji).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln()) / rho
}

/// `E_Q J − (1/ρ) KL(Q || P) − F`, nonnegative for `ρ < 0`.
pub fn legendre_gap(p: &[f64], j: &[f64], rho: f64, q: &[f64]) -> f64 {
    let mut e = 0.0;
    let mut kl = 0.0;
    for ((qi, pi), ji) in q.iter().zip(p).zip(j) {
        if *qi > 0.0 {
            e += qi * ji;
            kl += qi * (qi / pi).ln();
        }
    }
    e - kl / rho - free_energy(p, j, rho)
}

pub fn gibbs(p: &[f64], j: &[f64], rho: f64) -> Vec<f64> {
    let f = free_energy(p, j, rho);
    p.iter()
        .zip(j)
        .map(|(pi, ji)| if *pi > 0.0 { (pi.ln() + rho * ji - rho * f).exp() } else { 0.0 })
        .collect()
}

/// Best observed-cost log-likelihood over every deterministic Markov policy
/// of a discrete problem, each evaluated by a forward recursion.
pub fn best_deterministic_loglik(p: &dpsoc::duality::DiscreteControlProblem) -> f64 {
    let (ns, na, t) = (p.n_states, p.n_actions, p.horizon);
    let rho = 1.0 - p.lambda;
    let choices = na.pow((ns * t) as u32);
    let mut best = f64::NEG_INFINITY;
    for code in 0..choices {
        let mut c = code;
        let mut act = vec![vec![0; ns]; t];
        for row in act.iter_mut() {
            for a in row.iter_mut() {
                *a = c % na;
                c /= na;
            }
        }
        let mut alpha = p.init.clone();
        for k in 0..t {
            let weighted: Vec<f64> = (0..ns).map(|s| alpha[s] * (rho * p.cost[k][s][act[k][s]]).exp()).collect();
            if k + 1 == t {
                alpha = weighted;
            } else {
                alpha = (0..ns)
                    .map(|s2| (0..ns).map(|s| weighted[s] * p.transition[s][act[k][s]][s2]).sum())
                    .collect();
            }
        }
        let ll = t as f64 * p.lambda.ln() + alpha.iter().sum::<f64>().ln();
        best = best.max(ll);
    }
    best
}

/// Maximum-likelihood residual covariance of `s_{k+1}` regressed on
/// `(s_k, a_k, 1)` by ordinary least squares.
pub fn least_squares_noise(batch: &dpsoc::env::TrajectoryBatch, k: usize) -> Mat {
    let eps = &batch.episodes;
    let n = eps[0].s[0].len();
    let m = eps[0].u[0].len();
    let x = Mat::from_fn(eps.len(), n + m + 1, |i, j| {
        if j < n {
            eps[i].s[k][j]
        } else if j < n + m {
            eps[i].u[k][j - n]
        } else {
            1.0
        }
    });
    let y = Mat::from_fn(eps.len(), n, |i, j| eps[i].s[k + 1][j]);
    let beta = chol(&(x.transpose() * &x)).solve(&(x.transpose() * &y));
    let r = &y - &x * beta;
    r.transpose() * r / eps.len() as f64
}
