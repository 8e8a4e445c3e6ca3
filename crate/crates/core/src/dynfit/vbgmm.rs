//! Variational Bayesian Gaussian mixture with a Dirichlet prior on the weights
//! and a Gauss-Wishart prior on each component.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::serde_mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmCluster {
    pub weight: f64,
    #[serde(with = "serde_mat::vector")]
    pub mean: Vector,
    #[serde(with = "serde_mat::mat")]
    pub cov: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmPrior {
    pub clusters: Vec<GmmCluster>,
    pub elbo_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VbSettings {
    pub clusters: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// Dirichlet concentration of the weight prior.
    pub alpha0: f64,
    /// Precision scaling of the prior on component means.
    pub beta0: f64,
    /// Prior scatter as a fraction of each coordinate's data variance.
    pub scatter_scale: f64,
    pub seed: u64,
}

impl Default for VbSettings {
    fn default() -> Self {
        VbSettings {
            clusters: 8,
            max_iters: 1000,
            tol: 1e-8,
            alpha0: 1.0,
            beta0: 1e-3,
            scatter_scale: 1e-2,
            seed: 0,
        }
    }
}

impl GmmPrior {
    pub fn from_clusters(clusters: Vec<GmmCluster>) -> Self {
        GmmPrior {
            clusters,
            elbo_trace: Vec::new(),
        }
    }

    /// Mean and covariance of the mixture as a whole.
    pub fn mixture_moments(&self) -> (Vector, Mat) {
        let d = self.clusters[0].mean.len();
        let total: f64 = self.clusters.iter().map(|c| c.weight).sum();
        let mut mean = Vector::zeros(d);
        for c in &self.clusters {
            mean += &c.mean * (c.weight / total);
        }
        let mut cov = Mat::zeros(d, d);
        for c in &self.clusters {
            let dev = &c.mean - &mean;
            cov += (&c.cov + linalg::outer(&dev, &dev)) * (c.weight / total);
        }
        (mean, linalg::symmetrize(&cov))
    }

    /// Posterior cluster probabilities of one point under the point-estimate mixture.
    pub fn responsibilities(&self, x: &Vector) -> Vec<f64> {
        let logs: Vec<f64> = self
            .clusters
            .iter()
            .map(|c| {
                if c.weight <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    c.weight.ln() + linalg::gaussian_logpdf(x, &c.mean, &c.cov).unwrap_or(f64::NEG_INFINITY)
                }
            })
            .collect();
        let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
        let s: f64 = ex.iter().sum();
        ex.into_iter().map(|e| e / s).collect()
    }

    /// Copy of the mixture with weights replaced by the average responsibility
    /// of `data`.
    pub fn localized(&self, data: &[Vector]) -> GmmPrior {
        let mut w = vec![0.0; self.clusters.len()];
        for x in data {
            for (acc, r) in w.iter_mut().zip(self.responsibilities(x)) {
                *acc += r;
            }
        }
        let n = data.len().max(1) as f64;
        let clusters = self
            .clusters
            .iter()
            .zip(w)
            .map(|(c, wi)| GmmCluster {
                weight: wi / n,
                ..c.clone()
            })
            .collect();
        GmmPrior {
            clusters,
            elbo_trace: self.elbo_trace.clone(),
        }
    }
}

struct Hyper {
    alpha0: f64,
    beta0: f64,
    m0: Vector,
    w0_inv: Mat,
    nu0: f64,
    ln_b0: f64,
}

struct Component {
    alpha: f64,
    beta: f64,
    m: Vector,
    w: Mat,
    nu: f64,
    ln_det_w: f64,
    e_ln_pi: f64,
    e_ln_lambda: f64,
    n_k: f64,
    xbar: Vector,
    /// `N_k S_k`
    scatter: Mat,
}

/// `ln B(W, ν)` of the Wishart normalizer, from `ln|W|`.
fn wishart_ln_b(ln_det_w: f64, nu: f64, d: usize) -> f64 {
    let df = d as f64;
    let mut s = nu * df / 2.0 * 2f64.ln() + df * (df - 1.0) / 4.0 * PI.ln();
    for i in 1..=d {
        s += ln_gamma((nu + 1.0 - i as f64) / 2.0);
    }
    -nu / 2.0 * ln_det_w - s
}

fn ln_dirichlet_c(alphas: &[f64]) -> f64 {
    ln_gamma(alphas.iter().sum()) - alphas.iter().map(|a| ln_gamma(*a)).sum::<f64>()
}

fn kmeans_labels(data: &[Vector], k: usize, seed: u64) -> Vec<usize> {
    let n = data.len();
    let d = data[0].len();
    let (_, cov) = crate::dynfit::empirical_moments(data).expect("nonempty");
    let scale: Vec<f64> = (0..d).map(|i| 1.0 / cov[(i, i)].sqrt().max(1e-12)).collect();
    let z: Vec<Vector> = data
        .iter()
        .map(|x| Vector::from_fn(d, |i, _| x[i] * scale[i]))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // k-means++ seeding
    let mut centers = vec![z[rng.random_range(0..n)].clone()];
    while centers.len() < k.min(n) {
        let d2: Vec<f64> = z
            .iter()
            .map(|x| centers.iter().map(|c| (x - c).norm_squared()).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, v) in d2.iter().enumerate() {
            if target < *v {
                pick = i;
                break;
            }
            target -= v;
        }
        centers.push(z[pick].clone());
    }
    let mut labels = vec![0usize; n];
    for _ in 0..50 {
        let mut changed = false;
        for (i, x) in z.iter().enumerate() {
            let best = (0..centers.len())
                .min_by(|&a, &b| {
                    (x - &centers[a])
                        .norm_squared()
                        .total_cmp(&(x - &centers[b]).norm_squared())
                })
                .unwrap();
            if best != labels[i] {
                labels[i] = best;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vector> = z.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(x, _)| x).collect();
            if !members.is_empty() {
                *center = members.iter().fold(Vector::zeros(d), |a, x| a + *x) / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

fn update_components(data: &[Vector], resp: &[Vec<f64>], h: &Hyper, k: usize) -> Result<Vec<Component>> {
    let d = h.m0.len();
    let alphas: Vec<f64> = (0..k)
        .map(|c| h.alpha0 + resp.iter().map(|r| r[c]).sum::<f64>())
        .collect();
    let dig_sum = digamma(alphas.iter().sum());
    (0..k)
        .map(|c| {
            let n_k: f64 = resp.iter().map(|r| r[c]).sum();
            let mut xsum = Vector::zeros(d);
            for (x, r) in data.iter().zip(resp) {
                xsum.axpy(r[c], x, 1.0);
            }
            let xbar = if n_k > 1e-300 { xsum / n_k } else { h.m0.clone() };
            let mut scatter = Mat::zeros(d, d);
            for (x, r) in data.iter().zip(resp) {
                if r[c] > 0.0 {
                    let dv = x - &xbar;
                    scatter.ger(r[c], &dv, &dv, 1.0);
                }
            }
            let beta = h.beta0 + n_k;
            let m = (&h.m0 * h.beta0 + &xbar * n_k) / beta;
            let dev = &xbar - &h.m0;
            let w_inv = &h.w0_inv + &scatter + linalg::outer(&dev, &dev) * (h.beta0 * n_k / beta);
            let w = linalg::inverse_spd(&w_inv)
                .ok_or_else(|| Error::NotPositiveDefinite("mixture component scale".into()))?;
            let ln_det_w = -linalg::logdet_spd(&w_inv).unwrap();
            let nu = h.nu0 + n_k;
            let mut e_ln_lambda = d as f64 * 2f64.ln() + ln_det_w;
            for i in 1..=d {
                e_ln_lambda += digamma((nu + 1.0 - i as f64) / 2.0);
            }
            Ok(Component {
                alpha: alphas[c],
                beta,
                m,
                w,
                nu,
                ln_det_w,
                e_ln_pi: digamma(alphas[c]) - dig_sum,
                e_ln_lambda,
                n_k,
                xbar,
                scatter,
            })
        })
        .collect()
}

fn responsibilities(data: &[Vector], comps: &[Component]) -> Vec<Vec<f64>> {
    let d = data[0].len() as f64;
    data.iter()
        .map(|x| {
            let logs: Vec<f64> = comps
                .iter()
                .map(|c| {
                    let dv = x - &c.m;
                    let quad = d / c.beta + c.nu * dv.dot(&(&c.w * &dv));
                    c.e_ln_pi + 0.5 * c.e_ln_lambda - 0.5 * d * (2.0 * PI).ln() - 0.5 * quad
                })
                .collect();
            let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
            let s: f64 = ex.iter().sum();
            ex.into_iter().map(|e| e / s).collect()
        })
        .collect()
}

/// Evidence lower bound for the current factorized posterior.
fn elbo(resp: &[Vec<f64>], comps: &[Component], h: &Hyper) -> f64 {
    let d = h.m0.len();
    let df = d as f64;
    let k = comps.len();
    let ln2pi = (2.0 * PI).ln();
    let mut e_lik = 0.0;
    let mut e_prior_mu_lambda = 0.0;
    let mut e_q_mu_lambda = 0.0;
    for c in comps {
        let dx = &c.xbar - &c.m;
        e_lik += 0.5
            * (c.n_k * (c.e_ln_lambda - df / c.beta - df * ln2pi)
                - c.nu * (&c.scatter * &c.w).trace()
                - c.nu * c.n_k * dx.dot(&(&c.w * &dx)));
        let dm = &c.m - &h.m0;
        e_prior_mu_lambda += 0.5
            * (df * (h.beta0 / (2.0 * PI)).ln() + c.e_ln_lambda
                - df * h.beta0 / c.beta
                - h.beta0 * c.nu * dm.dot(&(&c.w * &dm)))
            + 0.5 * (h.nu0 - df - 1.0) * c.e_ln_lambda
            - 0.5 * c.nu * (&h.w0_inv * &c.w).trace();
        let entropy_lambda = -wishart_ln_b(c.ln_det_w, c.nu, d) - 0.5 * (c.nu - df - 1.0) * c.e_ln_lambda
            + 0.5 * c.nu * df;
        e_q_mu_lambda += 0.5 * c.e_ln_lambda + 0.5 * df * (c.beta / (2.0 * PI)).ln() - 0.5 * df - entropy_lambda;
    }
    e_prior_mu_lambda += k as f64 * h.ln_b0;
    let mut e_z = 0.0;
    let mut e_qz = 0.0;
    for r in resp {
        for (c, rk) in comps.iter().zip(r) {
            e_z += rk * c.e_ln_pi;
            if *rk > 0.0 {
                e_qz += rk * rk.ln();
            }
        }
    }
    let alpha0s = vec![h.alpha0; k];
    let e_pi = ln_dirichlet_c(&alpha0s) + (h.alpha0 - 1.0) * comps.iter().map(|c| c.e_ln_pi).sum::<f64>();
    let alphas: Vec<f64> = comps.iter().map(|c| c.alpha).collect();
    let e_qpi = comps.iter().map(|c| (c.alpha - 1.0) * c.e_ln_pi).sum::<f64>() + ln_dirichlet_c(&alphas);
    e_lik + e_z + e_pi + e_prior_mu_lambda - e_qz - e_qpi - e_q_mu_lambda
}

/// Coordinate-ascent variational fit. The returned cluster weights are the
/// posterior means of the mixing proportions and the covariances are the
/// inverses of the expected precisions.
pub fn fit_vb_gmm(data: &[Vector], settings: &VbSettings) -> Result<GmmPrior> {
    if data.is_empty() {
        return Err(Error::Empty("mixture fit needs data".into()));
    }
    if settings.clusters == 0 {
        return Err(Error::InvalidParameter("cluster count must be at least 1".into()));
    }
    let k = settings.clusters;
    let d = data[0].len();
    let (mean, cov) = crate::dynfit::empirical_moments(data)?;
    let nu0 = d as f64 + 2.0;
    let var = Vector::from_fn(d, |i, _| cov[(i, i)].max(1e-12));
    let w0_inv = Mat::from_diagonal(&var) * (nu0 * settings.scatter_scale);
    let ln_det_w0 = -linalg::logdet_spd(&w0_inv).unwrap();
    let h = Hyper {
        alpha0: settings.alpha0,
        beta0: settings.beta0,
        m0: mean,
        w0_inv,
        nu0,
        ln_b0: wishart_ln_b(ln_det_w0, nu0, d),
    };
    let labels = kmeans_labels(data, k, settings.seed);
    let mut resp: Vec<Vec<f64>> = labels
        .iter()
        .map(|l| (0..k).map(|c| if c == *l { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut trace = Vec::new();
    let mut comps = update_components(data, &resp, &h, k)?;
    for _ in 0..settings.max_iters {
        let bound = elbo(&resp, &comps, &h);
        let done = trace
            .last()
            .is_some_and(|prev: &f64| (bound - prev).abs() <= settings.tol * prev.abs().max(1.0));
        trace.push(bound);
        if done {
            break;
        }
        resp = responsibilities(data, &comps);
        comps = update_components(data, &resp, &h, k)?;
    }
    let alpha_sum: f64 = comps.iter().map(|c| c.alpha).sum();
    let clusters = comps
        .iter()
        .map(|c| GmmCluster {
            weight: c.alpha / alpha_sum,
            mean: c.m.clone(),
            cov: linalg::symmetrize(&(linalg::inverse_spd(&c.w).unwrap() / c.nu)),
        })
        .collect();
    Ok(GmmPrior {
        clusters,
        elbo_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn blobs(seed: u64, centers: &[(f64, f64)], per: usize, spread: f64) -> Vec<Vector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for (cx, cy) in centers {
            for _ in 0..per {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                out.push(Vector::from_vec(vec![cx + spread * a, cy + spread * b]));
            }
        }
        out
    }

    fn monotone(trace: &[f64]) -> bool {
        trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0))
    }

    #[test]
    fn single_component_mean_is_shrunk_sample_mean() {
        let data = blobs(1, &[(1.0, -2.0)], 200, 0.5);
        let s = VbSettings {
            clusters: 1,
            ..Default::default()
        };
        let g = fit_vb_gmm(&data, &s).unwrap();
        let (mean, _) = crate::dynfit::empirical_moments(&data).unwrap();
        // the prior mean is the data mean, so shrinkage leaves it unchanged
        let n = data.len() as f64;
        let want = (&mean * s.beta0 + &mean * n) / (s.beta0 + n);
        assert!((g.clusters[0].mean.clone() - want).norm() < 1e-12);
        assert!((g.clusters[0].weight - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tight_blob_dominated_by_one_cluster() {
        let data = blobs(2, &[(0.0, 0.0)], 300, 0.1);
        let g = fit_vb_gmm(
            &data,
            &VbSettings {
                clusters: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let best = g.clusters.iter().map(|c| c.weight).fold(0.0, f64::max);
        assert!(best > 0.9, "dominant weight {best}");
        assert!(monotone(&g.elbo_trace));
    }

    #[test]
    fn elbo_is_monotone_across_seeds() {
        for seed in 0..8 {
            let data = blobs(seed, &[(0.0, 0.0), (3.0, 1.0), (-2.0, 4.0)], 60, 0.7);
            let g = fit_vb_gmm(
                &data,
                &VbSettings {
                    clusters: 5,
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(g.elbo_trace.len() > 1);
            assert!(monotone(&g.elbo_trace), "seed {seed}: {:?}", g.elbo_trace);
            let total: f64 = g.clusters.iter().map(|c| c.weight).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(g.clusters.iter().all(|c| linalg::is_spd(&c.cov)));
        }
    }

    #[test]
    fn more_clusters_than_points_does_not_crash() {
        let data = blobs(3, &[(0.0, 0.0)], 3, 1.0);
        let g = fit_vb_gmm(
            &data,
            &VbSettings {
                clusters: 8,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(g.clusters.len(), 8);
        assert!(monotone(&g.elbo_trace));
    }

    #[test]
    fn localized_weights_follow_data() {
        let data = blobs(4, &[(-5.0, 0.0), (5.0, 0.0)], 100, 0.3);
        let g = fit_vb_gmm(
            &data,
            &VbSettings {
                clusters: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let left = g.localized(&data[..100]);
        let best = left.clusters.iter().map(|c| c.weight).fold(0.0, f64::max);
        assert!(best > 0.99);
    }
}
