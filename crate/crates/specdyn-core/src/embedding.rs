//! State embedding: whiten the projection estimate by the feature norms,
//! take its rank-r SVD, and expose the embedding map `Psi(x) = B^T Phi(x)`,
//! diffusion distances, and the recovered transition density.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimator::ProjectionEstimate;
use crate::features::{evaluate_ortho, evaluate_ortho_batch, OrthoFeatureMap};
use crate::numerics::{thin_svd, Matrix};

/// Number of probe points used by the 1-d diagnostic grid.
pub const PROBE_POINTS: usize = 101;

/// Fitted whitened-SVD embedding.
///
/// `left_factor` is `B = C^{-1/2} U sigma` and `right_factor` is
/// `D = C_t^{-1/2} V`, where `C`/`C_t` are the diagonal feature norms of
/// the two maps, so `Psi(x) = B^T Phi(x)` and
/// `p_hat(y|x) = Psi(x) . D^T Phit(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedder {
    left_factor: Matrix,
    right_factor: Matrix,
    sigma: Vec<f64>,
    rank: usize,
    left_map_id: u64,
    right_map_id: u64,
}

impl Embedder {
    pub fn left_factor(&self) -> &Matrix {
        &self.left_factor
    }

    pub fn right_factor(&self) -> &Matrix {
        &self.right_factor
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn left_map_id(&self) -> u64 {
        self.left_map_id
    }

    pub fn right_map_id(&self) -> u64 {
        self.right_map_id
    }
}

/// Whitens `p_hat` as `diag(norms)^{-1/2} p_hat diag(norms_t)^{-1/2}`,
/// truncates its SVD at `rank`, and assembles the embedding factors.
pub fn fit(
    est: &ProjectionEstimate,
    left: &OrthoFeatureMap,
    right: &OrthoFeatureMap,
    rank: usize,
) -> Result<Embedder> {
    if est.left_map_id() != left.id() || est.right_map_id() != right.id() {
        return Err(invalid("feature maps do not match the ones the estimate was built with"));
    }
    let p_hat = est.p_hat();
    let (jl, jr) = (p_hat.rows(), p_hat.cols());
    if jl != left.n_features() || jr != right.n_features() {
        return Err(invalid("estimate shape does not match the feature maps"));
    }
    if rank == 0 || rank > jl.min(jr) {
        return Err(invalid(format!("rank {rank} out of range for a {jl}x{jr} estimate")));
    }
    let inv_sqrt_l: Vec<f64> = left.norms().iter().map(|&c| 1.0 / c.sqrt()).collect();
    let inv_sqrt_r: Vec<f64> = right.norms().iter().map(|&c| 1.0 / c.sqrt()).collect();
    let whitened =
        Matrix::from_fn(jl, jr, |i, j| p_hat[(i, j)] * inv_sqrt_l[i] * inv_sqrt_r[j]);
    let svd = thin_svd(&whitened)?;
    let sigma = svd.singular_values[..rank].to_vec();
    let left_factor = Matrix::from_fn(jl, rank, |i, k| inv_sqrt_l[i] * svd.u[(i, k)] * sigma[k]);
    let right_factor = Matrix::from_fn(jr, rank, |j, k| inv_sqrt_r[j] * svd.v[(j, k)]);
    Ok(Embedder {
        left_factor,
        right_factor,
        sigma,
        rank,
        left_map_id: left.id(),
        right_map_id: right.id(),
    })
}

fn check_left(e: &Embedder, left: &OrthoFeatureMap) -> Result<()> {
    if left.id() != e.left_map_id {
        return Err(invalid("feature map does not match the one the embedder was fit with"));
    }
    Ok(())
}

fn check_right(e: &Embedder, right: &OrthoFeatureMap) -> Result<()> {
    if right.id() != e.right_map_id {
        return Err(invalid("feature map does not match the one the embedder was fit with"));
    }
    Ok(())
}

/// `Psi(x) = B^T Phi(x)`, length `rank`.
pub fn embed(e: &Embedder, left: &OrthoFeatureMap, x: &[f64]) -> Result<Vec<f64>> {
    check_left(e, left)?;
    let phi = evaluate_ortho(left, x)?;
    Ok(apply_factor(&e.left_factor, &phi))
}

/// Row-per-state embedding of a batch of states (n x rank).
pub fn embed_batch(e: &Embedder, left: &OrthoFeatureMap, states: &Matrix) -> Result<Matrix> {
    check_left(e, left)?;
    let phi = evaluate_ortho_batch(left, states)?;
    Ok(phi.mul(&e.left_factor))
}

fn apply_factor(factor: &Matrix, phi: &[f64]) -> Vec<f64> {
    let r = factor.cols();
    let mut out = vec![0.0; r];
    for (i, p) in phi.iter().enumerate() {
        let row = factor.row(i);
        for k in 0..r {
            out[k] += p * row[k];
        }
    }
    out
}

/// Euclidean distance between the embeddings of two states.
pub fn diffusion_distance(
    e: &Embedder,
    left: &OrthoFeatureMap,
    x: &[f64],
    z: &[f64],
) -> Result<f64> {
    let a = embed(e, left, x)?;
    let b = embed(e, left, z)?;
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
}

/// Recovered transition density `p_hat(y|x) = Psi(x) . D^T Phit(y)`.
/// A raw spectral reconstruction: values may be negative; no positivity
/// projection is applied.
pub fn recover_density(
    e: &Embedder,
    left: &OrthoFeatureMap,
    right: &OrthoFeatureMap,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    check_right(e, right)?;
    let psi = embed(e, left, x)?;
    let phi_y = evaluate_ortho(right, y)?;
    let eta = apply_factor(&e.right_factor, &phi_y);
    Ok(psi.iter().zip(&eta).map(|(a, b)| a * b).sum())
}

/// 101 equally spaced probe points spanning the range of a 1-d state
/// column. A fixed grid is the reproducible surrogate for a supremum over
/// the whole domain in distortion diagnostics.
pub fn probe_grid_1d(states: &Matrix) -> Result<Vec<f64>> {
    if states.cols() != 1 || states.rows() == 0 {
        return Err(invalid("probe grid needs a non-empty 1-d state set"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in states.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi - lo).is_finite() {
        return Err(invalid("state range must be finite"));
    }
    let step = (hi - lo) / (PROBE_POINTS - 1) as f64;
    Ok((0..PROBE_POINTS).map(|i| lo + step * i as f64).collect())
}

/// Fraction of ordered probe pairs `(x, y)` with a negative recovered
/// density. Diagnostic only; the reconstruction itself stays signed.
pub fn negative_density_fraction(
    e: &Embedder,
    left: &OrthoFeatureMap,
    right: &OrthoFeatureMap,
    probes: &Matrix,
) -> Result<f64> {
    check_right(e, right)?;
    if probes.rows() == 0 {
        return Err(invalid("need at least one probe point"));
    }
    let psi = embed_batch(e, left, probes)?;
    let eta = evaluate_ortho_batch(right, probes)?.mul(&e.right_factor);
    let n = probes.rows();
    let mut negative = 0usize;
    for i in 0..n {
        let a = psi.row(i);
        for j in 0..n {
            let b = eta.row(j);
            let p: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            if p < 0.0 {
                negative += 1;
            }
        }
    }
    Ok(negative as f64 / (n * n) as f64)
}
