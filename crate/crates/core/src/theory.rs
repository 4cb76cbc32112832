//! Fixed-routing linear-expert theory: dense and per-expert least-squares
//! solutions, orthogonal subspace projectors, the in/cross-subspace
//! separation constants, and verification of the two Lipschitz bounds that
//! relate expert norms to the dense solution norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ExpertPartition, RegressionDataset};
use crate::error::{Error, Result};
use crate::numeric::{
    self, least_squares, norm2, pinv, spectral_norm, svd, vec_add, vec_sub, Matrix, DEFAULT_RTOL,
};

/// Dense and per-expert least-squares solutions with their norms, which are
/// the Lipschitz constants of the corresponding linear maps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionSet {
    pub dense_weights: Vec<f64>,
    pub expert_weights: Vec<Vec<f64>>,
    pub dense_lipschitz: f64,
    pub expert_lipschitz: Vec<f64>,
}

impl SolutionSet {
    pub fn compute(ds: &RegressionDataset, part: &ExpertPartition) -> Result<Self> {
        let dense_weights = solve_dense(ds)?;
        let expert_weights = solve_experts(ds, part)?;
        let dense_lipschitz = norm2(&dense_weights);
        let expert_lipschitz = expert_weights.iter().map(|w| norm2(w)).collect();
        Ok(Self {
            dense_weights,
            expert_weights,
            dense_lipschitz,
            expert_lipschitz,
        })
    }
}

/// Orthogonal projectors `U_i U_iᵀ` built from the singular vectors of
/// `XᵀX`, each vector assigned to the expert whose data carries the most
/// energy along it.
#[derive(Debug, Clone)]
pub struct ProjectorSet {
    pub projectors: Vec<Matrix>,
    pub basis_assignment: Vec<usize>,
}

/// Tightest constants satisfying the in-subspace and cross-subspace
/// separation inequalities.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeparationMetrics {
    pub eps1: f64,
    pub eps2: f64,
}

/// Both sides of the dense-vs-experts norm inequality, with the clipped
/// per-expert bracket values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub lhs: f64,
    pub rhs: f64,
    pub per_expert_terms: Vec<f64>,
    pub eps1: f64,
    pub eps2: f64,
    pub holds: bool,
    pub slack: f64,
}

/// All quantities of the sufficient-condition bound: per-expert generative
/// weights, residual pullbacks, cumulative normalized differences, and the
/// verdicts for the condition and its conclusion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub betas: Vec<Vec<f64>>,
    pub residuals: Vec<Vec<f64>>,
    pub eta_i: Vec<Vec<f64>>,
    pub eta: Vec<f64>,
    pub deltas: Vec<Vec<f64>>,
    pub gamma: f64,
    pub condition_holds: bool,
    pub conclusion_holds: bool,
    pub dense_norm_sq: f64,
    pub max_expert_norm_sq: f64,
}

/// Dense solution `(XᵀX)† Xᵀ y`.
pub fn solve_dense(ds: &RegressionDataset) -> Result<Vec<f64>> {
    least_squares(&ds.x, &ds.y, DEFAULT_RTOL)
}

/// Per-expert solutions `(X_iᵀX_i)† X_iᵀ y_i`; an empty subset yields the
/// zero vector.
pub fn solve_experts(ds: &RegressionDataset, part: &ExpertPartition) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(part.num_experts);
    for i in 0..part.num_experts {
        let (xi, yi) = part.subset(ds, i);
        if xi.rows() == 0 {
            out.push(vec![0.0; ds.dim()]);
        } else {
            out.push(least_squares(&xi, &yi, DEFAULT_RTOL)?);
        }
    }
    Ok(out)
}

/// Assign each retained singular vector of `XᵀX` to the expert with the
/// largest data energy along it (ties to the lowest index) and build the
/// per-expert orthogonal projectors.
pub fn build_projectors(
    ds: &RegressionDataset,
    part: &ExpertPartition,
    rank_rtol: f64,
) -> Result<ProjectorSet> {
    let d = ds.dim();
    let gram = ds.x.gram();
    let decomp = svd(&gram)?;
    let sigma_max = decomp.singular_values.first().copied().unwrap_or(0.0);
    let cutoff = rank_rtol * sigma_max;
    let subsets: Vec<Matrix> = (0..part.num_experts)
        .map(|i| part.subset(ds, i).0)
        .collect();

    let mut projectors = vec![Matrix::zeros(d, d); part.num_experts];
    let mut basis_assignment = Vec::new();
    for (k, &s) in decomp.singular_values.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let v = decomp.right_vector(k);
        let mut best = 0usize;
        let mut best_energy = f64::NEG_INFINITY;
        for (i, xi) in subsets.iter().enumerate() {
            let energy = if xi.rows() == 0 {
                0.0
            } else {
                let xv = xi.matvec(&v);
                numeric::dot(&xv, &xv)
            };
            if energy > best_energy {
                best_energy = energy;
                best = i;
            }
        }
        basis_assignment.push(best);
        let p = &mut projectors[best];
        for r in 0..d {
            for c in 0..d {
                p.set(r, c, p.get(r, c) + v[r] * v[c]);
            }
        }
    }
    Ok(ProjectorSet {
        projectors,
        basis_assignment,
    })
}

/// Orthogonal projector onto the row space of `x`.
fn row_space_projector(x: &Matrix, rank_rtol: f64) -> Result<Matrix> {
    let d = x.cols();
    if x.rows() == 0 {
        return Ok(Matrix::zeros(d, d));
    }
    let decomp = svd(x)?;
    let sigma_max = decomp.singular_values.first().copied().unwrap_or(0.0);
    let cutoff = rank_rtol * sigma_max;
    let mut p = Matrix::zeros(d, d);
    for (k, &s) in decomp.singular_values.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let v = decomp.right_vector(k);
        for r in 0..d {
            for c in 0..d {
                p.set(r, c, p.get(r, c) + v[r] * v[c]);
            }
        }
    }
    Ok(p)
}

/// Tightest separation constants for the given projectors:
/// `eps1 = max_i ‖U_iU_iᵀ(XᵀX)† − (X_iᵀX_i)†‖₂` and
/// `eps2 = max_{i≠j} ‖(X_iᵀX_i)† P_j‖₂` with `P_j` the row-space projector
/// of `X_j`. The operator-norm form of eps2 is exact; sampling over unit
/// vectors in the span is kept as a test oracle only.
pub fn separation_metrics(
    ds: &RegressionDataset,
    part: &ExpertPartition,
    projectors: &ProjectorSet,
) -> Result<SeparationMetrics> {
    let gram_pinv = pinv(&ds.x.gram(), DEFAULT_RTOL)?;
    let mut gram_pinvs = Vec::with_capacity(part.num_experts);
    let mut row_projectors = Vec::with_capacity(part.num_experts);
    for i in 0..part.num_experts {
        let (xi, _) = part.subset(ds, i);
        gram_pinvs.push(pinv(&xi.gram(), DEFAULT_RTOL)?);
        row_projectors.push(row_space_projector(&xi, DEFAULT_RTOL)?);
    }

    let mut eps1 = 0.0f64;
    for i in 0..part.num_experts {
        let diff = projectors.projectors[i]
            .matmul(&gram_pinv)
            .sub(&gram_pinvs[i]);
        eps1 = eps1.max(spectral_norm(&diff)?);
    }

    let mut eps2 = 0.0f64;
    for i in 0..part.num_experts {
        for j in 0..part.num_experts {
            if i == j {
                continue;
            }
            let m = gram_pinvs[i].matmul(&row_projectors[j]);
            eps2 = eps2.max(spectral_norm(&m)?);
        }
    }
    Ok(SeparationMetrics { eps1, eps2 })
}

/// Verify that the squared dense norm dominates the sum of squared clipped
/// per-expert brackets, using this module's own separation constants.
pub fn theorem1_check(ds: &RegressionDataset, part: &ExpertPartition) -> Result<Theorem1Report> {
    let solutions = SolutionSet::compute(ds, part)?;
    let projectors = build_projectors(ds, part, DEFAULT_RTOL)?;
    let seps = separation_metrics(ds, part, &projectors)?;

    let xty_norm = norm2(&ds.x.transpose().matvec(&ds.y));
    let subset_xty_norms: Vec<f64> = (0..part.num_experts)
        .map(|i| {
            let (xi, yi) = part.subset(ds, i);
            if xi.rows() == 0 {
                0.0
            } else {
                norm2(&xi.transpose().matvec(&yi))
            }
        })
        .collect();
    let cross_sum: f64 = subset_xty_norms.iter().sum();

    let per_expert_terms: Vec<f64> = (0..part.num_experts)
        .map(|i| {
            let others = cross_sum - subset_xty_norms[i];
            (solutions.expert_lipschitz[i] - seps.eps1 * xty_norm - seps.eps2 * others).max(0.0)
        })
        .collect();

    let lhs = solutions.dense_lipschitz * solutions.dense_lipschitz;
    let rhs = per_expert_terms.iter().map(|t| t * t).sum();
    Ok(Theorem1Report {
        lhs,
        rhs,
        per_expert_terms,
        eps1: seps.eps1,
        eps2: seps.eps2,
        holds: lhs >= rhs - 1e-9,
        slack: lhs - rhs,
    })
}

/// Verify the sufficient-condition bound: when every cumulative difference
/// `Δ_i` is large enough relative to `β_i + η` and `β_i + η_i`, the largest
/// squared expert norm is at most `γ` times the squared dense norm.
///
/// Requires every per-expert Gram matrix to be invertible.
pub fn theorem2_check(
    ds: &RegressionDataset,
    part: &ExpertPartition,
    betas: &[Vec<f64>],
    gamma: f64,
) -> Result<Theorem2Report> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Contract(format!("gamma must be in (0, 1], got {gamma}")));
    }
    if betas.len() != part.num_experts {
        return Err(Error::DimensionMismatch {
            context: "betas vs experts",
            expected: format!("{}", part.num_experts),
            got: format!("{}", betas.len()),
        });
    }
    let e = part.num_experts;
    let d = ds.dim();

    let mut grams = Vec::with_capacity(e);
    let mut gram_invs = Vec::with_capacity(e);
    let mut residuals = Vec::with_capacity(e);
    let mut eta_i = Vec::with_capacity(e);
    for i in 0..e {
        let (xi, yi) = part.subset(ds, i);
        let gram = xi.gram();
        let decomp = svd(&gram)?;
        let sigma_max = decomp.singular_values.first().copied().unwrap_or(0.0);
        let min_sv = decomp.singular_values.last().copied().unwrap_or(0.0);
        let tol = DEFAULT_RTOL * sigma_max;
        if xi.rows() == 0 || min_sv <= tol {
            return Err(Error::SingularGram {
                expert: i,
                min_sv,
                tol,
            });
        }
        let ri = vec_sub(&yi, &xi.matvec(&betas[i]));
        eta_i.push(pinv(&gram, DEFAULT_RTOL)?.matvec(&xi.transpose().matvec(&ri)));
        residuals.push(ri);
        gram_invs.push(pinv(&gram, DEFAULT_RTOL)?);
        grams.push(gram);
    }

    let full_gram = ds.x.gram();
    let full_inv = pinv(&full_gram, DEFAULT_RTOL)?;
    // Xᵀr accumulated per expert subset.
    let mut xtr = vec![0.0; d];
    for i in 0..e {
        let (xi, _) = part.subset(ds, i);
        xtr = vec_add(&xtr, &xi.transpose().matvec(&residuals[i]));
    }
    let eta = full_inv.matvec(&xtr);

    let zinv_zj: Vec<Matrix> = grams.iter().map(|zj| full_inv.matmul(zj)).collect();
    let mut deltas = Vec::with_capacity(e);
    for i in 0..e {
        let mut delta = vec![0.0; d];
        for j in 0..e {
            if j == i {
                continue;
            }
            let diff = vec_sub(&betas[i], &betas[j]);
            delta = vec_add(&delta, &zinv_zj[j].matvec(&diff));
        }
        deltas.push(delta);
    }

    let inv_sqrt_gamma = 1.0 / gamma.sqrt();
    let condition_holds = (0..e).all(|i| {
        norm2(&deltas[i])
            >= norm2(&vec_add(&betas[i], &eta)) + inv_sqrt_gamma * norm2(&vec_add(&betas[i], &eta_i[i]))
    });

    let solutions = SolutionSet::compute(ds, part)?;
    let dense_norm_sq = solutions.dense_lipschitz * solutions.dense_lipschitz;
    let max_expert_norm_sq = solutions
        .expert_lipschitz
        .iter()
        .map(|l| l * l)
        .fold(0.0, f64::max);
    let conclusion_holds = max_expert_norm_sq <= gamma * dense_norm_sq + 1e-9;
    assert!(
        !condition_holds || conclusion_holds,
        "separation condition held but the norm conclusion failed"
    );

    Ok(Theorem2Report {
        betas: betas.to_vec(),
        residuals,
        eta_i,
        eta,
        deltas,
        gamma,
        condition_holds,
        conclusion_holds,
        dense_norm_sq,
        max_expert_norm_sq,
    })
}

/// Parameter-count lower bound `δ·√(N·D/P)` on the Lipschitz constant of a
/// `δ`-memorizing function, up to constants and log factors.
pub fn bubeck_lower_bound(n: usize, d: usize, p: usize, delta: f64) -> f64 {
    delta * ((n as f64 * d as f64) / p as f64).sqrt()
}

/// Build a regression instance that satisfies the separation condition of
/// `theorem2_check` with margin: two experts fit nearly parallel feature
/// directions (angle ~`tilt`) with opposing targets, so the dense solution
/// is forced to a norm ~`1/tilt` while each expert solution stays O(1).
/// Small ridge rows keep every per-expert Gram matrix invertible.
///
/// Returns the dataset, its partition, and the generative weights (zero
/// residuals by construction).
pub fn gen_gamma_separated_instance(
    dim: usize,
    rows_per_expert: usize,
    seed: u64,
) -> Result<(RegressionDataset, ExpertPartition, Vec<Vec<f64>>)> {
    if dim < 2 {
        return Err(Error::Contract("need dim >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot = crate::data::random_rotation(dim, rng.gen());
    let a: Vec<f64> = (0..dim).map(|r| rot.get(r, 0)).collect();
    let b: Vec<f64> = (0..dim).map(|r| rot.get(r, 1)).collect();
    let tilt = rng.gen_range(0.02..0.08);
    let ridge = 1e-3;
    let beta_scale = rng.gen_range(0.8..1.2);

    let n_i = rows_per_expert + dim;
    let mut x = Matrix::zeros(2 * n_i, dim);
    let mut assignment = Vec::with_capacity(2 * n_i);
    let mut betas = Vec::with_capacity(2);
    let mut row = 0;
    for expert in 0..2usize {
        let sign = if expert == 0 { -1.0 } else { 1.0 };
        for _ in 0..rows_per_expert {
            let scale = rng.gen_range(0.8..1.2);
            for j in 0..dim {
                x.set(row, j, scale * (a[j] + sign * tilt * b[j]));
            }
            assignment.push(expert);
            row += 1;
        }
        // One ridge row per coordinate direction keeps Z_i full rank.
        for j in 0..dim {
            x.set(row, j, ridge);
            assignment.push(expert);
            row += 1;
        }
        let beta: Vec<f64> = a.iter().map(|&v| sign * beta_scale * v).collect();
        betas.push(beta);
    }
    let mut y = vec![0.0; 2 * n_i];
    for r in 0..2 * n_i {
        let expert = assignment[r];
        y[r] = numeric::dot(x.row(r), &betas[expert]);
    }
    Ok((
        RegressionDataset::new(x, y)?,
        ExpertPartition::new(assignment, 2)?,
        betas,
    ))
}
