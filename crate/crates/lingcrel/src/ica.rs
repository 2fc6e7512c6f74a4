//! Per-environment linear ICA and cross-environment component alignment.
//!
//! Each environment's unmixing matrix is estimated with a symmetric
//! fixed-point iteration under the log-cosh contrast after PCA whitening.
//! Rows are then matched across environments by sorting on the test
//! statistic `Ψ(P) = P[|X| <= 1]`, which takes distinct values for the
//! distinct noise shapes; a min-cost matching on Kolmogorov-Smirnov
//! distances is available as an alternative strategy.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::derive_rng;
use crate::scm::{gg_psi, LinearScm};

/// `E[log cosh Z]` for standard normal `Z`; baseline of the negentropy
/// proxy used to pick the best restart.
const GAUSSIAN_LOGCOSH: f64 = 0.374_567_207_491;

/// Relative eigenvalue cutoff below which data is declared rank deficient.
const WHITEN_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct IcaOptions {
    pub max_iter: usize,
    /// Convergence threshold on the maximum row angle between successive
    /// unmixing matrices, measured as `|1 - |<w_new, w_old>||`.
    pub tol: f64,
    pub restarts: usize,
    /// Seed for the restart initializations.
    pub seed: u64,
}

impl Default for IcaOptions {
    fn default() -> Self {
        IcaOptions {
            max_iter: 500,
            tol: 1e-6,
            restarts: 3,
            seed: 0,
        }
    }
}

impl IcaOptions {
    pub fn with_seed(seed: u64) -> Self {
        IcaOptions {
            seed,
            ..Default::default()
        }
    }
}

/// `(W W^T)^{-1/2} W`: symmetric decorrelation, making the rows of `W`
/// orthonormal without preferring any of them.
fn symmetric_decorrelation(w: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = linalg::symmetric_eigen_ascending(&(w * w.transpose()));
    let d = w.nrows();
    let inv_sqrt = DVector::from_fn(d, |i, _| values[i].max(1e-14).sqrt().recip());
    &vectors * DMatrix::from_diagonal(&inv_sqrt) * vectors.transpose() * w
}

/// Estimate a `d x n` unmixing matrix from `N x n` samples so that the
/// rows of `W Xᵀ` are approximately independent unit-variance components.
///
/// When `n > d` the data is first reduced to its top `d` principal
/// components. Runs `opts.restarts` deterministic restarts and keeps the
/// best converged one by log-cosh contrast.
pub fn fast_ica(x: &DMatrix<f64>, d: usize, opts: &IcaOptions) -> Result<DMatrix<f64>> {
    let (n_samples, n) = (x.nrows(), x.ncols());
    if d == 0 || d > n {
        return Err(Error::InvalidParameter(format!(
            "component count {d} out of range for {n} observed coordinates"
        )));
    }
    if n_samples <= d {
        return Err(Error::InvalidParameter(format!(
            "need more than {d} samples, got {n_samples}"
        )));
    }

    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }

    let cov = centered.transpose() * &centered / n_samples as f64;
    let (eigvals, eigvecs) = linalg::symmetric_eigen_ascending(&cov);
    // take the top d eigenpairs, largest first
    let top: Vec<usize> = (0..n).rev().take(d).collect();
    let lead = eigvals[top[0]];
    if lead <= 0.0 || eigvals[top[d - 1]] <= WHITEN_RANK_TOL * lead {
        return Err(Error::RankDeficient(format!(
            "covariance spectrum drops below rank {d}"
        )));
    }
    let whiten = DMatrix::from_fn(d, n, |r, c| {
        eigvecs[(c, top[r])] / eigvals[top[r]].sqrt()
    });
    let y = &whiten * centered.transpose(); // d x N, identity sample covariance

    let mut best: Option<(f64, DMatrix<f64>)> = None;
    let mut best_residuals = vec![f64::INFINITY; d];
    for restart in 0..opts.restarts.max(1) {
        let mut rng = derive_rng(opts.seed, &[restart as u64]);
        let init = DMatrix::from_fn(d, d, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let mut w = symmetric_decorrelation(&init);
        let mut converged = false;
        let mut residuals = vec![f64::INFINITY; d];
        for _ in 0..opts.max_iter {
            let wy = &w * &y;
            let g = wy.map(f64::tanh);
            let g_prime_mean =
                DVector::from_fn(d, |i, _| g.row(i).iter().map(|v| 1.0 - v * v).sum::<f64>())
                    / n_samples as f64;
            let mut w_new = (&g * y.transpose()) / n_samples as f64;
            for i in 0..d {
                for j in 0..d {
                    w_new[(i, j)] -= g_prime_mean[i] * w[(i, j)];
                }
            }
            let w_new = symmetric_decorrelation(&w_new);
            for i in 0..d {
                residuals[i] = (1.0 - w_new.row(i).dot(&w.row(i)).abs()).abs();
            }
            let lim = residuals.iter().copied().fold(0.0, f64::max);
            w = w_new;
            if lim < opts.tol {
                converged = true;
                break;
            }
        }
        if residuals.iter().copied().fold(0.0, f64::max)
            < best_residuals.iter().copied().fold(0.0, f64::max)
        {
            best_residuals = residuals.clone();
        }
        if converged {
            let comps = &w * &y;
            let contrast: f64 = (0..d)
                .map(|i| {
                    let mean_gc =
                        comps.row(i).iter().map(|v| v.cosh().ln()).sum::<f64>() / n_samples as f64;
                    (mean_gc - GAUSSIAN_LOGCOSH).powi(2)
                })
                .sum();
            if best.as_ref().map_or(true, |(c, _)| contrast > *c) {
                best = Some((contrast, w.clone()));
            }
        }
    }

    let Some((_, w)) = best else {
        return Err(Error::IcaNonConvergence {
            max_iter: opts.max_iter,
            residuals: best_residuals,
        });
    };

    let mut unmixing = w * whiten; // d x n
    // pin the output scale: recovered components get unit sample variance
    let comps = &unmixing * centered.transpose();
    for i in 0..d {
        let row = comps.row(i);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n_samples as f64;
        if var > 0.0 {
            let scale = var.sqrt().recip();
            for j in 0..n {
                unmixing[(i, j)] *= scale;
            }
        }
    }
    Ok(unmixing)
}

/// Fraction of entries with absolute value at most 1.
pub fn psi_statistic(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter(
            "psi statistic of an empty sample".into(),
        ));
    }
    let hits = samples.iter().filter(|v| v.abs() <= 1.0).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (mut i, mut j) = (0usize, 0usize);
    let mut best = 0.0f64;
    while i < sa.len() && j < sb.len() {
        if sa[i] <= sb[j] {
            i += 1;
        } else {
            j += 1;
        }
        let fa = i as f64 / sa.len() as f64;
        let fb = j as f64 / sb.len() as f64;
        best = best.max((fa - fb).abs());
    }
    best
}

/// Standard permutation- and scale-invariant separation quality of a gain
/// matrix `P = W_estimated · W_true^{-1}`; 0 for a signed scaled
/// permutation, larger for residual mixing.
pub fn amari_index(p: &DMatrix<f64>) -> f64 {
    let d = p.nrows();
    assert_eq!(d, p.ncols());
    assert!(d >= 2);
    let abs = p.abs();
    let mut total = 0.0;
    for i in 0..d {
        let row_max = abs.row(i).max();
        let col_max = abs.column(i).max();
        total += abs.row(i).iter().map(|v| v / row_max).sum::<f64>() - 1.0;
        total += abs.column(i).iter().map(|v| v / col_max).sum::<f64>() - 1.0;
    }
    total / (2.0 * d as f64 * (d - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignStrategy {
    /// Sort rows by ascending empirical Ψ (the default).
    PsiSort,
    /// Match rows to the first environment by min-cost Kolmogorov-Smirnov
    /// distance between component samples.
    KsMatching,
}

#[derive(Debug, Clone)]
pub struct AlignOptions {
    /// Two aligned rows closer than this in Ψ are treated as a collision.
    pub split_threshold: f64,
    pub strategy: AlignStrategy,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            split_threshold: 0.02,
            strategy: AlignStrategy::PsiSort,
        }
    }
}

/// Per-environment unmixing estimates with rows aligned across
/// environments; rows of `m[k]` multiply observations to give the noise
/// components in a common order.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingEstimate {
    /// `K` aligned `d x n` matrices.
    pub m: Vec<DMatrix<f64>>,
    /// Per-environment Ψ values in aligned row order.
    pub psi: Vec<Vec<f64>>,
    /// Row permutations applied per environment: `perms[k][new] = old`
    /// (1-based row indices of the raw unmixing input).
    pub perms: Vec<Vec<usize>>,
}

impl MixingEstimate {
    pub fn n_envs(&self) -> usize {
        self.m.len()
    }

    pub fn d(&self) -> usize {
        self.m.first().map_or(0, |m| m.nrows())
    }

    pub fn n(&self) -> usize {
        self.m.first().map_or(0, |m| m.ncols())
    }

    /// Exact mixing estimate `M_k = B_k H` of a known model, rows sorted
    /// by the analytic Ψ of each node's noise shape — the same labeling
    /// the empirical alignment converges to.
    pub fn from_population(model: &LinearScm) -> Self {
        let d = model.d();
        let mut order: Vec<usize> = (1..=d).collect();
        order.sort_by(|&a, &b| {
            gg_psi(model.betas()[a - 1])
                .partial_cmp(&gg_psi(model.betas()[b - 1]))
                .unwrap()
        });
        let psi_sorted: Vec<f64> = order.iter().map(|&i| gg_psi(model.betas()[i - 1])).collect();
        let m = (1..=model.n_envs())
            .map(|k| {
                let exact = model.population_mixing(k);
                DMatrix::from_fn(d, model.n(), |r, c| exact[(order[r] - 1, c)])
            })
            .collect();
        MixingEstimate {
            m,
            psi: vec![psi_sorted; model.n_envs()],
            perms: vec![order; model.n_envs()],
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "M": self.m.iter().map(|m| {
                (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>()
            }).collect::<Vec<_>>(),
            "psi": self.psi,
            "perms": self.perms,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let m_raw: Vec<Vec<Vec<f64>>> = serde_json::from_value(
            value
                .get("M")
                .ok_or_else(|| Error::InvalidParameter("missing field M".into()))?
                .clone(),
        )?;
        let psi: Vec<Vec<f64>> = serde_json::from_value(
            value
                .get("psi")
                .ok_or_else(|| Error::InvalidParameter("missing field psi".into()))?
                .clone(),
        )?;
        let perms: Vec<Vec<usize>> = serde_json::from_value(
            value
                .get("perms")
                .ok_or_else(|| Error::InvalidParameter("missing field perms".into()))?
                .clone(),
        )?;
        let m = m_raw
            .iter()
            .map(|rows| {
                let r = rows.len();
                let c = rows.first().map_or(0, |row| row.len());
                DMatrix::from_fn(r, c, |i, j| rows[i][j])
            })
            .collect();
        Ok(MixingEstimate { m, psi, perms })
    }
}

/// Align per-environment unmixing matrices into a common row order.
///
/// Computes per-row Ψ on the recovered components `W_k X_kᵀ`, sorts rows
/// by ascending Ψ (or KS-matches them to the first environment), checks
/// that no two rows within an environment collide in Ψ, and that the
/// aligned Ψ sequences agree across environments.
pub fn align_environments(
    raw: &[DMatrix<f64>],
    data: &[DMatrix<f64>],
    opts: &AlignOptions,
) -> Result<MixingEstimate> {
    if raw.is_empty() || raw.len() != data.len() {
        return Err(Error::DimensionMismatch(
            "need one data block per unmixing matrix".into(),
        ));
    }
    let d = raw[0].nrows();
    for (k, w) in raw.iter().enumerate() {
        if w.nrows() != d {
            return Err(Error::DimensionMismatch(format!(
                "environment {} has {} rows, expected {d}",
                k + 1,
                w.nrows()
            )));
        }
        if w.ncols() != data[k].ncols() {
            return Err(Error::DimensionMismatch(format!(
                "environment {}: unmixing width {} against data width {}",
                k + 1,
                w.ncols(),
                data[k].ncols()
            )));
        }
    }

    let mut m = Vec::with_capacity(raw.len());
    let mut psi_all = Vec::with_capacity(raw.len());
    let mut perms = Vec::with_capacity(raw.len());
    let mut reference_comps: Vec<Vec<f64>> = Vec::new();

    for (k, w) in raw.iter().enumerate() {
        let comps = w * data[k].transpose(); // d x N
        let rows: Vec<Vec<f64>> = (0..d).map(|i| comps.row(i).iter().copied().collect()).collect();
        let psi_raw: Vec<f64> = rows
            .iter()
            .map(|r| psi_statistic(r))
            .collect::<Result<_>>()?;

        let order: Vec<usize> = match opts.strategy {
            AlignStrategy::PsiSort => {
                let mut order: Vec<usize> = (0..d).collect();
                order.sort_by(|&a, &b| psi_raw[a].partial_cmp(&psi_raw[b]).unwrap());
                order
            }
            AlignStrategy::KsMatching if k == 0 => {
                let mut order: Vec<usize> = (0..d).collect();
                order.sort_by(|&a, &b| psi_raw[a].partial_cmp(&psi_raw[b]).unwrap());
                order
            }
            AlignStrategy::KsMatching => {
                // cost of placing raw row i at aligned position p
                let cost = DMatrix::from_fn(d, d, |i, p| {
                    ks_distance(&rows[i], &reference_comps[p])
                });
                let (assign, _) = crate::assignment::min_sum_assignment(&cost);
                let mut order = vec![0usize; d];
                for (row, pos) in assign.iter().enumerate() {
                    order[*pos] = row;
                }
                order
            }
        };

        let psi_aligned: Vec<f64> = order.iter().map(|&i| psi_raw[i]).collect();
        if opts.strategy == AlignStrategy::PsiSort || k == 0 {
            for p in 1..d {
                let gap = psi_aligned[p] - psi_aligned[p - 1];
                if gap.abs() < opts.split_threshold {
                    return Err(Error::PsiCollision {
                        env: k + 1,
                        row_a: p,
                        row_b: p + 1,
                        gap: gap.abs(),
                        threshold: opts.split_threshold,
                    });
                }
            }
        }
        if k == 0 && opts.strategy == AlignStrategy::KsMatching {
            reference_comps = order.iter().map(|&i| rows[i].clone()).collect();
        }

        let aligned = DMatrix::from_fn(d, w.ncols(), |r, c| w[(order[r], c)]);
        m.push(aligned);
        psi_all.push(psi_aligned);
        perms.push(order.iter().map(|&i| i + 1).collect());
    }

    // aligned positions must carry the same component in every environment;
    // the tolerance cannot be tighter than the sampling noise of Ψ itself
    // (binomial standard error, worst case q = 1/2)
    let min_samples = data.iter().map(|x| x.nrows()).min().unwrap_or(1).max(1);
    let psi_se_bound = (0.5 / min_samples as f64).sqrt();
    let cross_threshold = opts.split_threshold.max(6.0 * psi_se_bound);
    for k in 1..psi_all.len() {
        for p in 0..d {
            let gap = (psi_all[k][p] - psi_all[0][p]).abs();
            if gap >= cross_threshold {
                return Err(Error::PsiMisaligned {
                    env_a: 1,
                    env_b: k + 1,
                    position: p + 1,
                    gap,
                    threshold: cross_threshold,
                });
            }
        }
    }

    Ok(MixingEstimate {
        m,
        psi: psi_all,
        perms,
    })
}
