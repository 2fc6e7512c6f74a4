//! Ground-truth linear SCM: random model generation, generalized-Gaussian
//! noise, multi-environment data synthesis and assumption verification.
//!
//! The generative model in environment `k` is `z = A_k z + Ω_k^{1/2} ε`,
//! observed as `x = H† z`, where `H` is the (full row rank) unmixing matrix.
//! Noise components are unit-variance generalized Gaussians with pairwise
//! distinct shapes `β_i = 0.2 i²`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use statrs::function::gamma::{gamma, gamma_lr};

use crate::error::{Error, Result};
use crate::graph::{random_dag, Dag};
use crate::linalg;
use crate::rng::{derive_rng, tags};

/// Smallest singular value below which `H` is treated as row-rank deficient.
pub const MODEL_RANK_TOL: f64 = 1e-9;
/// Default tolerance of the non-degeneracy rank checks.
pub const NONDEGENERACY_TOL: f64 = 1e-8;
/// Resampling cap for degenerate model draws.
pub const MODEL_RETRY_CAP: usize = 50;
/// Diagonal entries of a drawn `B_k` are resampled below this magnitude,
/// bounding the derived noise scales `ω_i = b_ii^{-2}`.
const B_DIAG_FLOOR: f64 = 1e-2;

/// Ground-truth linear non-Gaussian SCM across `K` environments.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScm {
    g: Dag,
    d: usize,
    n: usize,
    k_envs: usize,
    h: DMatrix<f64>,
    a: Vec<DMatrix<f64>>,
    omega: Vec<DVector<f64>>,
    betas: DVector<f64>,
    seed: Option<u64>,
}

impl LinearScm {
    /// Validate and assemble a model.
    ///
    /// Checks: `H` is `d x n` with full row rank; each `A_k` is nonzero
    /// exactly on parent positions with zero diagonal; omegas are strictly
    /// positive; betas are strictly positive and pairwise distinct.
    pub fn new(
        g: Dag,
        h: DMatrix<f64>,
        a: Vec<DMatrix<f64>>,
        omega: Vec<DVector<f64>>,
        betas: DVector<f64>,
    ) -> Result<Self> {
        let d = g.d();
        let n = h.ncols();
        if h.nrows() != d {
            return Err(Error::DimensionMismatch(format!(
                "H has {} rows for {} latents",
                h.nrows(),
                d
            )));
        }
        if n < d {
            return Err(Error::DimensionMismatch(format!(
                "observed dimension {n} smaller than latent dimension {d}"
            )));
        }
        if a.is_empty() || a.len() != omega.len() {
            return Err(Error::DimensionMismatch(
                "weight and omega lists must be nonempty and equal-length".into(),
            ));
        }
        if linalg::smallest_singular_value(&h) <= MODEL_RANK_TOL {
            return Err(Error::InvalidModel("H is not full row rank".into()));
        }
        for (k, ak) in a.iter().enumerate() {
            if ak.nrows() != d || ak.ncols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "A_{} is {}x{}, expected {d}x{d}",
                    k + 1,
                    ak.nrows(),
                    ak.ncols()
                )));
            }
            for i in 1..=d {
                for j in 1..=d {
                    let entry = ak[(i - 1, j - 1)];
                    let is_parent = g.has_edge(j, i);
                    if is_parent && entry == 0.0 {
                        return Err(Error::InvalidModel(format!(
                            "A_{} is zero on parent position ({i}, {j})",
                            k + 1
                        )));
                    }
                    if !is_parent && entry != 0.0 {
                        return Err(Error::InvalidModel(format!(
                            "A_{} is nonzero off the parent pattern at ({i}, {j})",
                            k + 1
                        )));
                    }
                }
            }
        }
        for (k, om) in omega.iter().enumerate() {
            if om.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "omega_{} has length {}",
                    k + 1,
                    om.len()
                )));
            }
            if om.iter().any(|&w| w <= 0.0) {
                return Err(Error::InvalidModel(format!(
                    "omega_{} has a non-positive entry",
                    k + 1
                )));
            }
        }
        if betas.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "betas has length {}",
                betas.len()
            )));
        }
        if betas.iter().any(|&b| b <= 0.0) {
            return Err(Error::InvalidModel("betas must be positive".into()));
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if betas[i] == betas[j] {
                    return Err(Error::InvalidModel(format!(
                        "betas {} and {} coincide; noise components must have distinct distributions",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(LinearScm {
            d,
            n,
            k_envs: a.len(),
            g,
            h,
            a,
            omega,
            betas,
            seed: None,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn g(&self) -> &Dag {
        &self.g
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn n_envs(&self) -> usize {
        self.k_envs
    }
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }
    pub fn weights(&self, k: usize) -> &DMatrix<f64> {
        &self.a[k - 1]
    }
    pub fn omega(&self, k: usize) -> &DVector<f64> {
        &self.omega[k - 1]
    }
    pub fn betas(&self) -> &DVector<f64> {
        &self.betas
    }
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    fn check_env(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.k_envs {
            return Err(Error::InvalidParameter(format!(
                "environment {k} out of range 1..={}",
                self.k_envs
            )));
        }
        Ok(())
    }

    /// `B_k = Ω_k^{-1/2} (I - A_k)`; row `i` is supported on the closed
    /// parent set of `i` with diagonal `ω_{k,i}^{-1/2}`.
    pub fn noise_mat_b(&self, k: usize) -> DMatrix<f64> {
        let om = &self.omega[k - 1];
        let mut b = DMatrix::identity(self.d, self.d) - &self.a[k - 1];
        for i in 0..self.d {
            let scale = om[i].sqrt().recip();
            for j in 0..self.d {
                b[(i, j)] *= scale;
            }
        }
        b
    }

    /// Exact mixture matrix `M_k = B_k H` seen by the ICA stage.
    pub fn population_mixing(&self, k: usize) -> DMatrix<f64> {
        self.noise_mat_b(k) * &self.h
    }

    /// The mixing matrix `G = H†` mapping latents to observations.
    pub fn mixing_g(&self) -> DMatrix<f64> {
        linalg::pseudo_inverse(&self.h)
    }

    /// Rename nodes; `old_of_new[c - 1]` is the old label of new node `c`.
    /// Weights, omegas, betas and unmixing rows move with their nodes.
    pub fn relabel(&self, old_of_new: &[usize]) -> Result<LinearScm> {
        let g = self.g.relabel(old_of_new)?;
        let d = self.d;
        let h = DMatrix::from_fn(d, self.n, |r, c| self.h[(old_of_new[r] - 1, c)]);
        let a = self
            .a
            .iter()
            .map(|ak| DMatrix::from_fn(d, d, |r, c| ak[(old_of_new[r] - 1, old_of_new[c] - 1)]))
            .collect();
        let omega = self
            .omega
            .iter()
            .map(|om| DVector::from_fn(d, |r, _| om[old_of_new[r] - 1]))
            .collect();
        let betas = DVector::from_fn(d, |r, _| self.betas[old_of_new[r] - 1]);
        let mut model = LinearScm::new(g, h, a, omega, betas)?;
        model.seed = self.seed;
        Ok(model)
    }

    /// SHA-256 of the canonical model JSON.
    pub fn canonical_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("model serialization cannot fail");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ScmRepr {
    d: usize,
    n: usize,
    #[serde(rename = "K")]
    k: usize,
    edges: Vec<(usize, usize)>,
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    a: Vec<Vec<Vec<f64>>>,
    omega: Vec<Vec<f64>>,
    betas: Vec<f64>,
    seed: Option<u64>,
}

impl Serialize for LinearScm {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ScmRepr {
            d: self.d,
            n: self.n,
            k: self.k_envs,
            edges: self.g.edges().iter().copied().collect(),
            h: matrix_rows(&self.h),
            a: self.a.iter().map(matrix_rows).collect(),
            omega: self.omega.iter().map(|v| v.iter().copied().collect()).collect(),
            betas: self.betas.iter().copied().collect(),
            seed: self.seed,
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for LinearScm {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let repr = ScmRepr::deserialize(de)?;
        let g = Dag::new(repr.d, repr.edges).map_err(D::Error::custom)?;
        let h = DMatrix::from_fn(repr.d, repr.n, |i, j| repr.h[i][j]);
        let a = repr
            .a
            .iter()
            .map(|ak| DMatrix::from_fn(repr.d, repr.d, |i, j| ak[i][j]))
            .collect();
        let omega = repr
            .omega
            .iter()
            .map(|om| DVector::from_vec(om.clone()))
            .collect();
        let betas = DVector::from_vec(repr.betas);
        let mut model = LinearScm::new(g, h, a, omega, betas).map_err(D::Error::custom)?;
        model.seed = repr.seed;
        Ok(model)
    }
}

/// Scale `α = sqrt(Γ(1/β) / Γ(3/β))` making the generalized Gaussian
/// `p(x) ∝ exp(-|x/α|^β)` have unit variance.
pub fn gg_scale(beta: f64) -> f64 {
    (gamma(1.0 / beta) / gamma(3.0 / beta)).sqrt()
}

/// CDF of the unit-variance generalized Gaussian with shape `beta`.
pub fn gg_cdf(beta: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.5;
    }
    let alpha = gg_scale(beta);
    let t = (x.abs() / alpha).powf(beta);
    0.5 + 0.5 * x.signum() * gamma_lr(1.0 / beta, t)
}

/// `P[|X| <= 1]` for the unit-variance generalized Gaussian: the analytic
/// value of the alignment statistic, strictly decreasing in `beta`.
pub fn gg_psi(beta: f64) -> f64 {
    let alpha = gg_scale(beta);
    gamma_lr(1.0 / beta, alpha.recip().powf(beta))
}

/// Draw `count` i.i.d. unit-variance generalized Gaussians with shape
/// `beta`, via the gamma transform: `|X| = α G^{1/β}` with
/// `G ~ Gamma(1/β, 1)` and a uniform random sign.
pub fn sample_generalized_gaussian<R: Rng + ?Sized>(
    beta: f64,
    count: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "beta must be positive, got {beta}"
        )));
    }
    let alpha = gg_scale(beta);
    let gamma_dist = Gamma::new(1.0 / beta, 1.0)
        .map_err(|e| Error::InvalidParameter(format!("gamma distribution: {e}")))?;
    let inv_beta = 1.0 / beta;
    Ok(DVector::from_fn(count, |_, _| {
        let g: f64 = gamma_dist.sample(rng);
        let magnitude = alpha * g.powf(inv_beta);
        if rng.random_bool(0.5) {
            magnitude
        } else {
            -magnitude
        }
    }))
}

/// The noise-shape schedule `β_i = 0.2 i²`.
pub fn beta_schedule(d: usize) -> DVector<f64> {
    DVector::from_fn(d, |i, _| 0.2 * ((i + 1) as f64).powi(2))
}

/// Permutation sorting nodes by increasing analytic alignment statistic
/// Ψ(β_i); entry `c - 1` holds the old label of canonical node `c`.
///
/// This is the labeling the alignment stage converges to, so ground truth
/// is compared to recoveries after applying it.
pub fn psi_canonical_order(betas: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=betas.len()).collect();
    order.sort_by(|&a, &b| {
        gg_psi(betas[a - 1])
            .partial_cmp(&gg_psi(betas[b - 1]))
            .unwrap()
    });
    order
}

/// Sample a random model: Bernoulli-`p` DAG, `β_i = 0.2 i²`, and
/// independent standard-normal entries for `H` and for the nonzero
/// entries of each `B_k` (closed parent pattern), from which
/// `Ω_k = diag(B_k)^{-2}` and `A_k = I - Ω_k^{1/2} B_k` are derived.
/// Draws failing the full-rank or non-degeneracy checks are resampled
/// (cap [`MODEL_RETRY_CAP`]).
pub fn random_model<R: Rng + ?Sized>(
    d: usize,
    n: usize,
    k_envs: usize,
    p: f64,
    rng: &mut R,
) -> Result<LinearScm> {
    random_model_with_retries(d, n, k_envs, p, rng).map(|(model, _)| model)
}

/// As [`random_model`], also reporting how many draws were rejected.
pub fn random_model_with_retries<R: Rng + ?Sized>(
    d: usize,
    n: usize,
    k_envs: usize,
    p: f64,
    rng: &mut R,
) -> Result<(LinearScm, usize)> {
    if n < d {
        return Err(Error::InvalidParameter(format!(
            "observed dimension {n} must be at least the latent dimension {d}"
        )));
    }
    if k_envs < d {
        return Err(Error::InvalidParameter(format!(
            "need at least d = {d} environments, got {k_envs}"
        )));
    }
    let betas = beta_schedule(d);
    for attempt in 0..MODEL_RETRY_CAP {
        let g = random_dag(d, p, rng)?;
        let h = sample_matrix(d, n, rng);
        if linalg::smallest_singular_value(&h) <= MODEL_RANK_TOL {
            continue;
        }
        let mut a = Vec::with_capacity(k_envs);
        let mut omega = Vec::with_capacity(k_envs);
        for _ in 0..k_envs {
            let (ak, om) = sample_environment_weights(&g, rng);
            a.push(ak);
            omega.push(om);
        }
        let model = LinearScm::new(g, h, a, omega, betas.clone())?;
        if check_nondegeneracy(&model, NONDEGENERACY_TOL)
            .iter()
            .all(|c| c.ok)
        {
            return Ok((model, attempt));
        }
    }
    Err(Error::RetryCapExceeded {
        cap: MODEL_RETRY_CAP,
        action: "sampling a non-degenerate random model".into(),
    })
}

/// Sample a model whose environments are groups of single-node soft
/// interventions: one base environment plus `d - 1` re-draws of each
/// node's noise row, for `K = 1 + d(d-1)` total.
pub fn random_single_node_model<R: Rng + ?Sized>(
    d: usize,
    n: usize,
    p: f64,
    rng: &mut R,
) -> Result<LinearScm> {
    if n < d {
        return Err(Error::InvalidParameter(format!(
            "observed dimension {n} must be at least the latent dimension {d}"
        )));
    }
    let betas = beta_schedule(d);
    let per_node = d.saturating_sub(1).max(1);
    for _ in 0..MODEL_RETRY_CAP {
        let g = random_dag(d, p, rng)?;
        let h = sample_matrix(d, n, rng);
        if linalg::smallest_singular_value(&h) <= MODEL_RANK_TOL {
            continue;
        }
        let (base_a, base_omega) = sample_environment_weights(&g, rng);
        let mut a = vec![base_a.clone()];
        let mut omega = vec![base_omega.clone()];
        for node in 1..=d {
            for _ in 0..per_node {
                let mut ak = base_a.clone();
                let mut om = base_omega.clone();
                let (row_a, row_omega) = sample_node_weights(&g, node, rng);
                for &parent in g.parents(node)? {
                    ak[(node - 1, parent - 1)] = row_a[parent - 1];
                }
                om[node - 1] = row_omega;
                a.push(ak);
                omega.push(om);
            }
        }
        let model = LinearScm::new(g, h, a, omega, betas.clone())?;
        if check_nondegeneracy(&model, NONDEGENERACY_TOL)
            .iter()
            .all(|c| c.ok)
        {
            return Ok(model);
        }
    }
    Err(Error::RetryCapExceeded {
        cap: MODEL_RETRY_CAP,
        action: "sampling a single-node intervention model".into(),
    })
}

fn sample_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    })
}

fn nonzero_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let x: f64 = rng.sample(rand_distr::StandardNormal);
        if x != 0.0 {
            return x;
        }
    }
}

/// Draw node `i`'s noise row: Gaussian `b_ij` on the parents plus a
/// diagonal `b_ii` bounded away from zero; returns the derived weight row
/// (`a_ij = -b_ij / b_ii`) and noise scale (`ω_i = b_ii^{-2}`).
fn sample_node_weights<R: Rng + ?Sized>(g: &Dag, i: usize, rng: &mut R) -> (Vec<f64>, f64) {
    let diag = loop {
        let x: f64 = rng.sample(rand_distr::StandardNormal);
        if x.abs() >= B_DIAG_FLOOR {
            break x;
        }
    };
    let mut row = vec![0.0; g.d()];
    for &j in g.parents(i).unwrap() {
        row[j - 1] = -nonzero_normal(rng) / diag;
    }
    (row, diag.powi(-2))
}

/// One environment's derived weights `(A_k, Ω_k)` from a direct Gaussian
/// draw of the `B_k` entries.
fn sample_environment_weights<R: Rng + ?Sized>(
    g: &Dag,
    rng: &mut R,
) -> (DMatrix<f64>, DVector<f64>) {
    let d = g.d();
    let mut a = DMatrix::zeros(d, d);
    let mut omega = DVector::zeros(d);
    for i in 1..=d {
        let (row, om) = sample_node_weights(g, i, rng);
        for j in 1..=d {
            a[(i - 1, j - 1)] = row[j - 1];
        }
        omega[i - 1] = om;
    }
    (a, omega)
}

/// Draw `n_samples` observations from environment `k`: noise per the beta
/// schedule, latents by forward substitution in topological order, then
/// `x = H† z`. Rows are samples.
pub fn sample_environment<R: Rng + ?Sized>(
    model: &LinearScm,
    k: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    model.check_env(k)?;
    if n_samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let d = model.d;
    let mut eps = DMatrix::zeros(n_samples, d);
    for i in 0..d {
        let col = sample_generalized_gaussian(model.betas[i], n_samples, rng)?;
        eps.set_column(i, &col);
    }
    let z = latents_from_noise(model, k, &eps);
    let g_mix = model.mixing_g();
    Ok(z * g_mix.transpose())
}

/// Solve `z = A_k z + Ω_k^{1/2} ε` by forward substitution along a
/// topological order. `eps` is `N x d`; so is the result.
pub fn latents_from_noise(model: &LinearScm, k: usize, eps: &DMatrix<f64>) -> DMatrix<f64> {
    let d = model.d;
    let a = &model.a[k - 1];
    let om = &model.omega[k - 1];
    let mut z = DMatrix::zeros(eps.nrows(), d);
    for &i in &model.g.topo_order() {
        let mut col = eps.column(i - 1) * om[i - 1].sqrt();
        for &j in model.g.parents(i).unwrap() {
            col += z.column(j - 1) * a[(i - 1, j - 1)];
        }
        z.set_column(i - 1, &col);
    }
    z
}

/// Outcome of the per-node rank check.
#[derive(Debug, Clone, Copy)]
pub struct NodeCheck {
    pub ok: bool,
    /// The decisive singular value: position `|pa(i)| + 1` of the stacked
    /// restricted rows.
    pub margin: f64,
}

/// Node-level non-degeneracy of arbitrary `B_k` matrices against a graph:
/// for each node `i`, the rows `(B_k)_i` restricted to the closed parent
/// set must span a space of dimension `|pa(i)| + 1`.
pub fn node_nondegeneracy(b: &[DMatrix<f64>], g: &Dag, tol: f64) -> Vec<NodeCheck> {
    let d = g.d();
    (1..=d)
        .map(|i| {
            let mut cols: Vec<usize> = g.parents(i).unwrap().to_vec();
            cols.push(i);
            cols.sort_unstable();
            let need = cols.len();
            let stacked = DMatrix::from_fn(b.len(), need, |k, c| b[k][(i - 1, cols[c] - 1)]);
            let sv = linalg::singular_values_desc(&stacked);
            let margin = sv.get(need - 1).copied().unwrap_or(0.0);
            NodeCheck {
                ok: margin > tol,
                margin,
            }
        })
        .collect()
}

/// Node-level non-degeneracy of the model's own `B_k` matrices.
pub fn check_nondegeneracy(model: &LinearScm, tol: f64) -> Vec<NodeCheck> {
    let b: Vec<DMatrix<f64>> = (1..=model.k_envs).map(|k| model.noise_mat_b(k)).collect();
    node_nondegeneracy(&b, &model.g, tol)
}

/// Affine-hull non-degeneracy: for each node with parents, the centered
/// weight vectors `{w_k(i) - w̄(i)}` must span the full parent space.
/// Parentless nodes are vacuously fine.
pub fn check_affine_nondegeneracy(model: &LinearScm, tol: f64) -> Vec<bool> {
    (1..=model.d)
        .map(|i| {
            let pa = model.g.parents(i).unwrap();
            if pa.is_empty() {
                return true;
            }
            let k = model.k_envs;
            let mut w = DMatrix::zeros(k, pa.len());
            for (row, ak) in model.a.iter().enumerate() {
                for (col, &j) in pa.iter().enumerate() {
                    w[(row, col)] = ak[(i - 1, j - 1)];
                }
            }
            let mean = w.row_mean();
            for row in 0..k {
                for col in 0..pa.len() {
                    w[(row, col)] -= mean[col];
                }
            }
            let (rank, _) = linalg::rank_with_threshold(&w, tol);
            rank == pa.len()
        })
        .collect()
}

/// Per-environment sample matrices plus the generation manifest.
#[derive(Debug, Clone)]
pub struct EnvDataset {
    pub blocks: Vec<DMatrix<f64>>,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub n_samples: usize,
    pub model_hash: String,
    pub created_unix: u64,
}

impl EnvDataset {
    /// Sample all environments with sub-streams derived from
    /// `(master_seed, k)`; deterministic regardless of scheduling.
    pub fn synthesize(model: &LinearScm, n_samples: usize, master_seed: u64) -> Result<Self> {
        use rayon::prelude::*;
        let blocks: Vec<DMatrix<f64>> = (1..=model.n_envs())
            .into_par_iter()
            .map(|k| {
                let mut rng = derive_rng(master_seed, &[tags::ENV, k as u64]);
                sample_environment(model, k, n_samples, &mut rng)
            })
            .collect::<Result<_>>()?;
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(EnvDataset {
            blocks,
            manifest: Manifest {
                seed: master_seed,
                n_samples,
                model_hash: model.canonical_hash(),
                created_unix,
            },
        })
    }

    pub fn n_envs(&self) -> usize {
        self.blocks.len()
    }

    pub fn n(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.ncols())
    }

    /// Write one CSV per environment (`env_1.csv`, ...; header `x1..xn`)
    /// plus `manifest.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (idx, block) in self.blocks.iter().enumerate() {
            let path = dir.join(format!("env_{}.csv", idx + 1));
            let mut writer = csv::Writer::from_path(&path)?;
            let header: Vec<String> = (1..=block.ncols()).map(|j| format!("x{j}")).collect();
            writer.write_record(&header)?;
            for row in 0..block.nrows() {
                let record: Vec<String> =
                    (0..block.ncols()).map(|c| block[(row, c)].to_string()).collect();
                writer.write_record(&record)?;
            }
            writer.flush()?;
        }
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(dir.join("manifest.json"), manifest)?;
        Ok(())
    }

    /// Read a dataset directory written by [`EnvDataset::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut blocks = Vec::new();
        for k in 1.. {
            let path = dir.join(format!("env_{k}.csv"));
            if !path.exists() {
                break;
            }
            let mut reader = csv::Reader::from_path(&path)?;
            let width = reader.headers()?.len();
            let mut data: Vec<f64> = Vec::new();
            let mut rows = 0;
            for record in reader.records() {
                let record = record?;
                for field in record.iter() {
                    data.push(field.parse::<f64>().map_err(|e| {
                        Error::InvalidParameter(format!("bad float in {}: {e}", path.display()))
                    })?);
                }
                rows += 1;
            }
            blocks.push(DMatrix::from_row_slice(rows, width, &data));
        }
        if blocks.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "no environment files in {}",
                dir.display()
            )));
        }
        let dataset = EnvDataset { blocks, manifest };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.blocks.iter().any(|b| b.ncols() != n) {
            return Err(Error::InvalidModel(
                "environment blocks disagree on the observed dimension".into(),
            ));
        }
        Ok(())
    }
}
