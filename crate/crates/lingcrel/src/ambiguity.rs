//! Constructive demonstrations that the effect-domination ambiguity is
//! intrinsic: given any ground-truth model and an effect-respecting matrix
//! `M`, build an alternative model over latents `v = M z` that generates
//! byte-for-byte the same observation distributions, keeps the exact edge
//! pattern and node-level non-degeneracy, and preserves single-node
//! intervention structure.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{pattern_membership, Dag, PatternClass, SparsityPattern, PATTERN_TOL};
use crate::linalg;
use crate::scm::{node_nondegeneracy, LinearScm, NONDEGENERACY_TOL};

/// Resampling cap for ill-conditioned effect-respecting draws.
const EFFECT_RETRY_CAP: usize = 50;
/// Invertibility floor for generated effect-respecting matrices.
const EFFECT_MIN_SV: f64 = 1e-6;
/// Rows whose entries differ by more than this are treated as genuinely
/// different when comparing intervention structure.
const ROW_DIFF_TOL: f64 = 1e-9;

/// Alternative model over latents `v = M z`.
#[derive(Debug, Clone)]
pub struct HypotheticalModel {
    pub m: DMatrix<f64>,
    pub a_hat: Vec<DMatrix<f64>>,
    pub omega_hat: Vec<DVector<f64>>,
    pub h_hat: DMatrix<f64>,
}

impl HypotheticalModel {
    /// `B̂_k = Ω̂_k^{-1/2} (I - Â_k)`.
    pub fn noise_mat_b(&self, k: usize) -> DMatrix<f64> {
        let d = self.a_hat[k - 1].nrows();
        let om = &self.omega_hat[k - 1];
        let mut b = DMatrix::identity(d, d) - &self.a_hat[k - 1];
        for i in 0..d {
            let scale = om[i].sqrt().recip();
            for j in 0..d {
                b[(i, j)] *= scale;
            }
        }
        b
    }

    pub fn n_envs(&self) -> usize {
        self.a_hat.len()
    }
}

/// Draw a random member of the exact effect-respecting class: identity
/// plus independent `N(0, scale²)` entries on off-diagonal closed-dom-set
/// positions, resampled until comfortably invertible.
pub fn random_effect_respecting<R: Rng + ?Sized>(
    g: &Dag,
    scale: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "scale must be positive, got {scale}"
        )));
    }
    let d = g.d();
    for _ in 0..EFFECT_RETRY_CAP {
        let mut m = DMatrix::identity(d, d);
        for i in 1..=d {
            for j in g.dom_set(i)? {
                m[(i - 1, j - 1)] = loop {
                    let x: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * scale;
                    if x.abs() > 10.0 * PATTERN_TOL {
                        break x;
                    }
                };
            }
        }
        if linalg::smallest_singular_value(&m) > EFFECT_MIN_SV {
            return Ok(m);
        }
    }
    Err(Error::RetryCapExceeded {
        cap: EFFECT_RETRY_CAP,
        action: "drawing an invertible effect-respecting matrix".into(),
    })
}

/// Build the alternative model induced by `v = M z`:
/// `Ω̂_k = diag(M_ii² ω_{k,i})`, `Â_k = I - Ω̂_k^{1/2} Ω_k^{-1/2} (I - A_k) M^{-1}`,
/// `Ĥ = M H`. The omega choice zeroes the diagonal of every `Â_k`.
///
/// Requires `M` in the invertible effect-respecting class with positive
/// diagonal (row signs can always be flipped into this form since the
/// noise is symmetric).
pub fn construct_hypothetical(truth: &LinearScm, m: &DMatrix<f64>) -> Result<HypotheticalModel> {
    let d = truth.d();
    if !pattern_membership(m, truth.g(), PatternClass::Dom0, PATTERN_TOL)? {
        return Err(Error::InvalidParameter(
            "matrix is not in the invertible effect-respecting class of the graph".into(),
        ));
    }
    for i in 0..d {
        if m[(i, i)] <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "diagonal entry {} of M must be positive for the zero-diagonal construction",
                i + 1
            )));
        }
    }
    let m_inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("effect-respecting matrix is singular".into()))?;

    let mut a_hat = Vec::with_capacity(truth.n_envs());
    let mut omega_hat = Vec::with_capacity(truth.n_envs());
    for k in 1..=truth.n_envs() {
        let om = truth.omega(k);
        let om_hat = DVector::from_fn(d, |i, _| m[(i, i)] * m[(i, i)] * om[i]);
        // Ω̂^{1/2} Ω^{-1/2} is diagonal with entries M_ii
        let mut factor = DMatrix::identity(d, d) - truth.weights(k);
        for i in 0..d {
            for j in 0..d {
                factor[(i, j)] *= m[(i, i)];
            }
        }
        let ak_hat = DMatrix::identity(d, d) - factor * &m_inv;
        a_hat.push(ak_hat);
        omega_hat.push(om_hat);
    }
    Ok(HypotheticalModel {
        m: m.clone(),
        a_hat,
        omega_hat,
        h_hat: m * truth.h(),
    })
}

/// Outcome of the indistinguishability checks.
#[derive(Debug, Clone, Serialize)]
pub struct IndistinguishabilityReport {
    /// `B̂_k Ĥ = B_k H` for every environment within tolerance.
    pub obs_invariance: bool,
    /// Every `Â_k` is nonzero exactly on the true edge pattern.
    pub sparsity: bool,
    /// The `B̂_k` remain node-level non-degenerate.
    pub nondegeneracy: bool,
    /// Pairwise row-difference structure of the `B_k` is preserved, so
    /// groups of single-node interventions stay single-node.
    pub intervention_structure: bool,
    pub max_obs_deviation: f64,
}

impl IndistinguishabilityReport {
    pub fn all_pass(&self) -> bool {
        self.obs_invariance && self.sparsity && self.nondegeneracy && self.intervention_structure
    }
}

fn differing_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<usize> {
    (0..a.nrows())
        .filter(|&i| {
            (0..a.ncols()).any(|j| (a[(i, j)] - b[(i, j)]).abs() > ROW_DIFF_TOL)
        })
        .map(|i| i + 1)
        .collect()
}

/// Check that the hypothetical model is observationally indistinguishable
/// from the truth while preserving structure.
pub fn verify_indistinguishable(
    truth: &LinearScm,
    hypo: &HypotheticalModel,
    tol: f64,
) -> IndistinguishabilityReport {
    let k_envs = truth.n_envs();
    let b_true: Vec<DMatrix<f64>> = (1..=k_envs).map(|k| truth.noise_mat_b(k)).collect();
    let b_hat: Vec<DMatrix<f64>> = (1..=k_envs).map(|k| hypo.noise_mat_b(k)).collect();

    let mut max_obs_deviation: f64 = 0.0;
    for k in 0..k_envs {
        let lhs = &b_hat[k] * &hypo.h_hat;
        let rhs = &b_true[k] * truth.h();
        max_obs_deviation = max_obs_deviation.max(linalg::max_abs_diff(&lhs, &rhs));
    }
    let obs_invariance = max_obs_deviation <= tol;

    let parent_pattern = SparsityPattern::parents(truth.g());
    let sparsity = hypo
        .a_hat
        .iter()
        .all(|ak| parent_pattern.matches_exactly(ak, PATTERN_TOL));

    let nondegeneracy = node_nondegeneracy(&b_hat, truth.g(), NONDEGENERACY_TOL)
        .iter()
        .all(|c| c.ok);

    let mut intervention_structure = true;
    'outer: for k in 0..k_envs {
        for l in (k + 1)..k_envs {
            if differing_rows(&b_true[k], &b_true[l]) != differing_rows(&b_hat[k], &b_hat[l]) {
                intervention_structure = false;
                break 'outer;
            }
        }
    }

    IndistinguishabilityReport {
        obs_invariance,
        sparsity,
        nondegeneracy,
        intervention_structure,
        max_obs_deviation,
    }
}

/// One full demonstration: draw `M`, construct the alternative model and
/// verify it. Exact zeros off the generic position set can void the
/// sparsity check; one automatic resample covers that null set.
#[derive(Debug, Clone)]
pub struct AmbiguityDemo {
    pub hypothetical: HypotheticalModel,
    pub report: IndistinguishabilityReport,
    pub resamples: usize,
}

pub fn demonstrate<R: Rng + ?Sized>(
    truth: &LinearScm,
    scale: f64,
    tol: f64,
    rng: &mut R,
) -> Result<AmbiguityDemo> {
    let mut resamples = 0;
    loop {
        let m = random_effect_respecting(truth.g(), scale, rng)?;
        let hypothetical = construct_hypothetical(truth, &m)?;
        let report = verify_indistinguishable(truth, &hypothetical, tol);
        if !report.sparsity && resamples == 0 {
            resamples += 1;
            continue;
        }
        return Ok(AmbiguityDemo {
            hypothetical,
            report,
            resamples,
        });
    }
}
