//! Full-covariance Gaussian mixtures fit by EM, BIC model selection and the
//! entropy upper bound of a fitted mixture.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::Vec2;
use crate::error::{Error, Result};
use crate::numerics::rng::{stream, substream, Rng};

/// Smallest eigenvalue allowed in a component covariance.
pub const COV_FLOOR: f64 = 1e-6;
const MAX_ITERS: usize = 100;
/// Stop once the mean per-sample log-likelihood moves less than this.
const TOLERANCE: f64 = 1e-6;
const MIN_MASS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`.
    pub cov: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub dim: usize,
    pub components: Vec<GmmComponent>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Total log-likelihood of the samples under `model`.
    pub log_likelihood: f64,
    /// Mean per-sample log-likelihood after every EM iteration.
    pub history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmSelection {
    pub model: GmmModel,
    pub components: usize,
    /// BIC of each component count `1..=max`, `None` where the fit failed.
    pub bic: Vec<Option<f64>>,
}

/// Lower-triangular Cholesky factor and normalizing constant of a component.
struct Factor {
    l: Vec<f64>,
    log_norm: f64,
}

fn factor(cov: &[f64], dim: usize) -> Option<Factor> {
    let chol = DMatrix::from_row_slice(dim, dim, cov).cholesky()?;
    let l = chol.l();
    let log_det: f64 = (0..dim).map(|i| 2.0 * l[(i, i)].ln()).sum();
    let mut flat = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            flat[i * dim + j] = l[(i, j)];
        }
    }
    Some(Factor {
        l: flat,
        log_norm: -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
    })
}

impl Factor {
    fn log_density(&self, x: &[f64], mean: &[f64], buf: &mut [f64]) -> f64 {
        let d = mean.len();
        let mut q = 0.0;
        for i in 0..d {
            let mut v = x[i] - mean[i];
            for j in 0..i {
                v -= self.l[i * d + j] * buf[j];
            }
            v /= self.l[i * d + i];
            buf[i] = v;
            q += v * v;
        }
        self.log_norm - 0.5 * q
    }
}

/// Symmetrizes and lifts every eigenvalue to at least [`COV_FLOOR`].
fn floor_cov(cov: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(COV_FLOOR));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding: each new center is drawn with probability
/// proportional to the squared distance to the nearest chosen one.
fn kmeanspp(samples: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = samples.len();
    let mut centers = vec![samples[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = samples.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = samples[pick].clone();
        for (d, x) in d2.iter_mut().zip(samples) {
            *d = d.min(sq_dist(x, &c));
        }
        centers.push(c);
    }
    centers
}

/// Weighted mean and floored covariance of the samples under `resp[.][k]`.
fn m_step(samples: &[Vec<f64>], resp: &[Vec<f64>], k: usize, dim: usize) -> GmmModel {
    let n = samples.len();
    let pooled = {
        let ones = vec![vec![1.0]; n];
        moments(samples, &ones, 0, dim)
    };
    let mut comps = Vec::with_capacity(k);
    for c in 0..k {
        let mass: f64 = resp.iter().map(|r| r[c]).sum();
        let (mean, cov) = if mass > MIN_MASS {
            moments(samples, resp, c, dim)
        } else {
            pooled.clone()
        };
        comps.push(GmmComponent {
            weight: mass.max(MIN_MASS),
            mean,
            cov: floor_cov(DMatrix::from_row_slice(dim, dim, &cov))
                .transpose()
                .as_slice()
                .to_vec(),
        });
    }
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    for c in &mut comps {
        c.weight /= total;
    }
    GmmModel {
        dim,
        components: comps,
    }
}

fn moments(samples: &[Vec<f64>], resp: &[Vec<f64>], c: usize, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mass: f64 = resp.iter().map(|r| r[c]).sum();
    let mut mean = vec![0.0; dim];
    for (x, r) in samples.iter().zip(resp) {
        for i in 0..dim {
            mean[i] += r[c] * x[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= mass);
    let mut cov = vec![0.0; dim * dim];
    for (x, r) in samples.iter().zip(resp) {
        for i in 0..dim {
            for j in 0..dim {
                cov[i * dim + j] += r[c] * (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().for_each(|v| *v /= mass);
    (mean, cov)
}

/// Responsibilities and total log-likelihood, or `None` if a covariance
/// cannot be factored or a density is not finite.
fn e_step(samples: &[Vec<f64>], model: &GmmModel) -> Option<(Vec<Vec<f64>>, f64)> {
    let factors: Vec<Factor> = model
        .components
        .iter()
        .map(|c| factor(&c.cov, model.dim))
        .collect::<Option<_>>()?;
    let log_w: Vec<f64> = model.components.iter().map(|c| c.weight.ln()).collect();
    let mut buf = vec![0.0; model.dim];
    let mut resp = Vec::with_capacity(samples.len());
    let mut total = 0.0;
    for x in samples {
        let lp: Vec<f64> = model
            .components
            .iter()
            .zip(&factors)
            .zip(&log_w)
            .map(|((c, f), lw)| lw + f.log_density(x, &c.mean, &mut buf))
            .collect();
        let m = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = lp.iter().map(|v| (v - m).exp()).sum();
        let lse = m + s.ln();
        if !lse.is_finite() {
            return None;
        }
        total += lse;
        resp.push(lp.iter().map(|v| (v - lse).exp()).collect());
    }
    Some((resp, total))
}

/// EM with `k` components from a k-means++ start.
pub fn gmm_fit(samples: &[Vec<f64>], k: usize, rng: &mut Rng) -> Result<GmmFit> {
    let n = samples.len();
    let dim = samples.first().map_or(0, Vec::len);
    if k == 0 || dim == 0 || n <= dim * k {
        return Err(Error::contract(format!(
            "{n} samples of dimension {dim} cannot support {k} components"
        )));
    }
    if samples.iter().any(|x| x.len() != dim || x.iter().any(|v| !v.is_finite())) {
        return Err(Error::contract("samples must be finite and share one dimension"));
    }
    let centers = kmeanspp(samples, k, rng);
    let mut resp: Vec<Vec<f64>> = samples
        .iter()
        .map(|x| {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(x, &centers[a]).total_cmp(&sq_dist(x, &centers[b])))
                .unwrap();
            (0..k).map(|c| if c == best { 1.0 } else { 0.0 }).collect()
        })
        .collect();
    let mut history = Vec::new();
    let mut model;
    let mut total;
    loop {
        model = m_step(samples, &resp, k, dim);
        (resp, total) = e_step(samples, &model)
            .ok_or_else(|| Error::Fit(format!("degenerate {k}-component fit")))?;
        history.push(total / n as f64);
        let h = history.len();
        if h >= MAX_ITERS || (h >= 2 && (history[h - 1] - history[h - 2]).abs() < TOLERANCE) {
            break;
        }
    }
    Ok(GmmFit {
        model,
        log_likelihood: total,
        history,
    })
}

fn free_params(k: usize, d: usize) -> usize {
    (k - 1) + k * d + k * d * (d + 1) / 2
}

/// Fits 1..=`max_components` mixtures and keeps the lowest
/// `BIC = -2 log L + params * ln N`.
pub fn gmm_fit_bic(samples: &[Vec<f64>], max_components: usize, seed: u64) -> Result<GmmSelection> {
    let dim = samples.first().map_or(0, Vec::len);
    if max_components == 0 || samples.len() <= dim * max_components {
        return Err(Error::contract(format!(
            "need more than {} samples for {max_components} components",
            dim * max_components
        )));
    }
    let ln_n = (samples.len() as f64).ln();
    let mut best: Option<(f64, GmmModel, usize)> = None;
    let mut bics = Vec::with_capacity(max_components);
    for k in 1..=max_components {
        let fit = match gmm_fit(samples, k, &mut substream(seed, "gmm", k as u64)) {
            Ok(f) => f,
            Err(Error::Fit(msg)) => {
                log::debug!("skipping {k} components: {msg}");
                bics.push(None);
                continue;
            }
            Err(e) => return Err(e),
        };
        let bic = -2.0 * fit.log_likelihood + free_params(k, dim) as f64 * ln_n;
        bics.push(Some(bic));
        if best.as_ref().is_none_or(|(b, _, _)| bic < *b) {
            best = Some((bic, fit.model, k));
        }
    }
    let (_, model, components) = best.ok_or_else(|| Error::Fit("every mixture fit was degenerate".into()))?;
    Ok(GmmSelection {
        model,
        components,
        bic: bics,
    })
}

/// `sum_i w_i ((D/2) ln(1 + 2π) + 0.5 ln det Σ_i - ln w_i)`.
///
/// The constant `ln(1 + 2π)` is kept as published even though the usual
/// bound for a Gaussian mixture uses `ln(2πe)`.
pub fn entropy_upper_bound(model: &GmmModel) -> Result<f64> {
    let d = model.dim as f64;
    let mut h = 0.0;
    for c in &model.components {
        if !(c.weight > 0.0) {
            return Err(Error::contract("mixture weights must be positive"));
        }
        let f = factor(&c.cov, model.dim)
            .ok_or_else(|| Error::contract("component covariance is not positive definite"))?;
        let log_det = -2.0 * f.log_norm - d * (2.0 * std::f64::consts::PI).ln();
        h += c.weight * (0.5 * d * (1.0 + 2.0 * std::f64::consts::PI).ln() + 0.5 * log_det - c.weight.ln());
    }
    Ok(h)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub values: Vec<f64>,
    pub components: Vec<usize>,
    pub mean: f64,
    pub std: f64,
    pub batch_size: usize,
    pub max_components: usize,
    pub seed: u64,
}

/// Entropy bound of `batches` random state batches (without replacement
/// inside a batch), each fit by [`gmm_fit_bic`].
pub fn dataset_entropy(
    states: &[Vec2],
    batches: usize,
    batch_size: usize,
    max_components: usize,
    seed: u64,
) -> Result<EntropyReport> {
    if batches == 0 {
        return Err(Error::contract("need at least one batch"));
    }
    let mut rng = stream(seed, "entropy");
    let size = batch_size.min(states.len());
    let mut values = Vec::with_capacity(batches);
    let mut components = Vec::with_capacity(batches);
    for b in 0..batches {
        let pts: Vec<Vec<f64>> = sample(&mut rng, states.len(), size)
            .into_iter()
            .map(|i| states[i].to_vec())
            .collect();
        let sel = gmm_fit_bic(&pts, max_components, seed.wrapping_add(b as u64))?;
        values.push(entropy_upper_bound(&sel.model)?);
        components.push(sel.components);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(EntropyReport {
        values,
        components,
        mean,
        std,
        batch_size: size,
        max_components,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::normal;
    use std::f64::consts::PI;

    fn unit(weight: f64) -> GmmComponent {
        GmmComponent {
            weight,
            mean: vec![0.0, 0.0],
            cov: vec![1.0, 0.0, 0.0, 1.0],
        }
    }

    fn blob(n: usize, center: [f64; 2], sd: f64, seed: u64) -> Vec<Vec<f64>> {
        let z = normal(&mut stream(seed, "blob"), n, 2);
        (0..n)
            .map(|i| vec![center[0] + sd * z.get(i, 0), center[1] + sd * z.get(i, 1)])
            .collect()
    }

    #[test]
    fn single_unit_gaussian_bound() {
        let m = GmmModel {
            dim: 2,
            components: vec![unit(1.0)],
        };
        let h = entropy_upper_bound(&m).unwrap();
        assert!((h - (1.0 + 2.0 * PI).ln()).abs() < 1e-9);
        assert!((h - 1.985_568_308_709_918_7).abs() < 1e-9);
    }

    #[test]
    fn duplicated_component_adds_ln_two() {
        let one = entropy_upper_bound(&GmmModel {
            dim: 2,
            components: vec![unit(1.0)],
        })
        .unwrap();
        let two = entropy_upper_bound(&GmmModel {
            dim: 2,
            components: vec![unit(0.5), unit(0.5)],
        })
        .unwrap();
        assert!((two - one - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn scaling_covariance_shifts_by_log_c() {
        let c: f64 = 3.0;
        let base = GmmModel {
            dim: 2,
            components: vec![unit(1.0)],
        };
        let mut scaled = base.clone();
        // det scales by c² in 2-D when each variance scales by c
        scaled.components[0].cov = vec![c, 0.0, 0.0, c];
        let d = entropy_upper_bound(&scaled).unwrap() - entropy_upper_bound(&base).unwrap();
        assert!((d - c.ln()).abs() < 1e-12);
        let mut relabeled = GmmModel {
            dim: 2,
            components: vec![unit(0.3), scaled.components[0].clone()],
        };
        relabeled.components[1].weight = 0.7;
        let a = entropy_upper_bound(&relabeled).unwrap();
        relabeled.components.reverse();
        assert!((a - entropy_upper_bound(&relabeled).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn non_positive_definite_is_rejected() {
        let mut m = GmmModel {
            dim: 2,
            components: vec![unit(1.0)],
        };
        m.components[0].cov = vec![1.0, 2.0, 2.0, 1.0];
        assert!(matches!(entropy_upper_bound(&m), Err(Error::Contract(_))));
    }

    #[test]
    fn one_tight_cluster_selects_one_component() {
        let pts = blob(1000, [0.5, 0.5], 0.01, 1);
        let sel = gmm_fit_bic(&pts, 4, 0).unwrap();
        assert_eq!(sel.components, 1, "{:?}", sel.bic);
    }

    #[test]
    fn two_separated_clusters_select_two() {
        let mut pts = blob(500, [0.0, 0.0], 0.1, 2);
        pts.extend(blob(500, [1.0, 0.0], 0.1, 3));
        let sel = gmm_fit_bic(&pts, 4, 0).unwrap();
        assert_eq!(sel.components, 2, "{:?}", sel.bic);
        let w: f64 = sel.model.components.iter().map(|c| c.weight).sum();
        assert!((w - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_points_are_floored() {
        let pts = vec![vec![0.2, 0.7]; 50];
        let sel = gmm_fit_bic(&pts, 3, 0).unwrap();
        let h = entropy_upper_bound(&sel.model).unwrap();
        assert!(h.is_finite());
        for c in &sel.model.components {
            assert!(c.cov[0] >= COV_FLOOR * (1.0 - 1e-9));
        }
    }

    #[test]
    fn em_log_likelihood_never_decreases() {
        let mut pts = blob(300, [0.0, 0.0], 0.3, 4);
        pts.extend(blob(300, [0.6, 0.4], 0.2, 5));
        pts.extend(blob(300, [0.1, 0.9], 0.1, 6));
        for k in 1..=5 {
            let fit = gmm_fit(&pts, k, &mut stream(k as u64, "em")).unwrap();
            for w in fit.history.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "k={k}: {:?}", fit.history);
            }
        }
    }

    #[test]
    fn too_few_samples_is_a_contract_error() {
        let pts = blob(6, [0.0, 0.0], 1.0, 7);
        assert!(matches!(gmm_fit_bic(&pts, 3, 0), Err(Error::Contract(_))));
    }
}
