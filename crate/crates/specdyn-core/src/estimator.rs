//! Feature-space transition estimation: accumulate the projection matrix
//! `P_hat = (1/n) sum_t Phi(X_t) Phit(X_{t+1})^T` from trajectory pairs,
//! reshape it by rank-r SVD truncation, and evaluate the resulting
//! embedded transition kernel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::features::{evaluate_ortho, evaluate_ortho_batch, OrthoFeatureMap};
use crate::numerics::{thin_svd, Matrix};
use crate::simulator::Trajectory;

/// Pairs per accumulation chunk. Chunk partials are summed in index
/// order, so results are bit-identical across thread counts and match a
/// plain sequential sum over pairs.
const PAIR_CHUNK: usize = 4096;

/// Running mean of pair feature outer products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionEstimate {
    p_hat: Matrix,
    pair_count: u64,
    left_map_id: u64,
    right_map_id: u64,
}

impl ProjectionEstimate {
    /// Adopts an externally computed projection matrix, e.g. an exact one
    /// from the finite-state oracle or a quadrature build.
    pub fn from_matrix(
        p_hat: Matrix,
        pair_count: u64,
        left_map_id: u64,
        right_map_id: u64,
    ) -> Result<Self> {
        if !p_hat.is_finite() {
            return Err(invalid("projection entries must be finite"));
        }
        if p_hat.rows() == 0 || p_hat.cols() == 0 {
            return Err(invalid("projection must be non-empty"));
        }
        Ok(Self { p_hat, pair_count, left_map_id, right_map_id })
    }

    pub fn p_hat(&self) -> &Matrix {
        &self.p_hat
    }

    pub fn pair_count(&self) -> u64 {
        self.pair_count
    }

    pub fn left_map_id(&self) -> u64 {
        self.left_map_id
    }

    pub fn right_map_id(&self) -> u64 {
        self.right_map_id
    }
}

/// Accumulates the projection estimate over a trajectory's n = T - 1
/// consecutive pairs.
pub fn accumulate(
    traj: &Trajectory,
    left: &OrthoFeatureMap,
    right: &OrthoFeatureMap,
) -> Result<ProjectionEstimate> {
    traj.validate()?;
    if traj.dim() != left.input_dim() || traj.dim() != right.input_dim() {
        return Err(invalid("feature map dimension does not match the trajectory"));
    }
    let phi_left = evaluate_ortho_batch(left, &traj.states)?;
    let phi_right = evaluate_ortho_batch(right, &traj.states)?;
    accumulate_features(&phi_left, &phi_right, left.id(), right.id())
}

/// Core accumulation over already-evaluated feature rows: row `t` of
/// `phi_left` pairs with row `t + 1` of `phi_right`. Exposed so the exact
/// arithmetic can be driven with hand-built feature values.
pub fn accumulate_features(
    phi_left: &Matrix,
    phi_right: &Matrix,
    left_map_id: u64,
    right_map_id: u64,
) -> Result<ProjectionEstimate> {
    let t = phi_left.rows();
    if phi_right.rows() != t {
        return Err(invalid("left and right feature row counts must match"));
    }
    if t < 2 {
        return Err(invalid("need at least two states to form a pair"));
    }
    if !phi_left.is_finite() || !phi_right.is_finite() {
        return Err(invalid("feature values must be finite"));
    }
    let n = t - 1;
    let jl = phi_left.cols();
    let jr = phi_right.cols();

    let bounds: Vec<(usize, usize)> = (0..n)
        .step_by(PAIR_CHUNK)
        .map(|s| (s, (s + PAIR_CHUNK).min(n)))
        .collect();
    let partials: Vec<Matrix> = bounds
        .par_iter()
        .map(|&(s, e)| {
            let lhs = Matrix::from_vec(e - s, jl, phi_left.data()[s * jl..e * jl].to_vec());
            let rhs =
                Matrix::from_vec(e - s, jr, phi_right.data()[(s + 1) * jr..(e + 1) * jr].to_vec());
            lhs.tr_mul(&rhs)
        })
        .collect();
    let mut sum = Matrix::zeros(jl, jr);
    for partial in &partials {
        for (acc, v) in sum.data_mut().iter_mut().zip(partial.data()) {
            *acc += v;
        }
    }
    Ok(ProjectionEstimate {
        p_hat: sum.scaled(1.0 / n as f64),
        pair_count: n as u64,
        left_map_id,
        right_map_id,
    })
}

/// Pair-count-weighted average of estimates over disjoint trajectories.
pub fn merge(estimates: &[ProjectionEstimate]) -> Result<ProjectionEstimate> {
    let first = estimates.first().ok_or_else(|| invalid("nothing to merge"))?;
    let (jl, jr) = (first.p_hat.rows(), first.p_hat.cols());
    let mut sum = Matrix::zeros(jl, jr);
    let mut total: u64 = 0;
    for est in estimates {
        if est.p_hat.rows() != jl || est.p_hat.cols() != jr {
            return Err(invalid("estimates have mismatched shapes"));
        }
        if est.left_map_id != first.left_map_id || est.right_map_id != first.right_map_id {
            return Err(invalid("estimates were built with different feature maps"));
        }
        let w = est.pair_count as f64;
        for (acc, v) in sum.data_mut().iter_mut().zip(est.p_hat.data()) {
            *acc += w * v;
        }
        total += est.pair_count;
    }
    Ok(ProjectionEstimate {
        p_hat: sum.scaled(1.0 / total as f64),
        pair_count: total,
        left_map_id: first.left_map_id,
        right_map_id: first.right_map_id,
    })
}

/// Rank-r truncated SVD of a projection estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReshapedKernelModel {
    u: Matrix,
    sigma: Vec<f64>,
    v: Matrix,
    rank: usize,
    /// First discarded singular value sigma_{r+1}; 0 when r = min(J, Jt).
    residual_sigma: f64,
    pair_count: u64,
    left_map_id: u64,
    right_map_id: u64,
}

impl ReshapedKernelModel {
    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn residual_sigma(&self) -> f64 {
        self.residual_sigma
    }

    pub fn pair_count(&self) -> u64 {
        self.pair_count
    }

    pub fn left_map_id(&self) -> u64 {
        self.left_map_id
    }

    pub fn right_map_id(&self) -> u64 {
        self.right_map_id
    }

    /// Reconstructs the truncated matrix `P_tilde = u diag(sigma) v^T`.
    pub fn matrix(&self) -> Matrix {
        self.u.scale_cols(&self.sigma).mul(&self.v.transpose())
    }
}

/// Keeps the top `rank` singular triplets of the estimate.
pub fn reshape(est: &ProjectionEstimate, rank: usize) -> Result<ReshapedKernelModel> {
    let min_dim = est.p_hat.rows().min(est.p_hat.cols());
    if rank == 0 || rank > min_dim {
        return Err(invalid(format!(
            "rank {rank} out of range for a {}x{} estimate",
            est.p_hat.rows(),
            est.p_hat.cols()
        )));
    }
    let svd = thin_svd(&est.p_hat)?;
    let u = Matrix::from_fn(est.p_hat.rows(), rank, |i, j| svd.u[(i, j)]);
    let v = Matrix::from_fn(est.p_hat.cols(), rank, |i, j| svd.v[(i, j)]);
    let sigma = svd.singular_values[..rank].to_vec();
    let residual_sigma = if rank < min_dim { svd.singular_values[rank] } else { 0.0 };
    Ok(ReshapedKernelModel {
        u,
        sigma,
        v,
        rank,
        residual_sigma,
        pair_count: est.pair_count,
        left_map_id: est.left_map_id,
        right_map_id: est.right_map_id,
    })
}

/// Largest-spectral-gap rank suggestion: the k maximizing
/// `sigma_k / sigma_{k+1}`. Diagnostic only; reshaping always takes the
/// rank chosen by the caller.
pub fn suggest_rank(est: &ProjectionEstimate) -> Result<usize> {
    let svd = thin_svd(&est.p_hat)?;
    let s = &svd.singular_values;
    if s.len() == 1 || s[0] <= 0.0 {
        return Ok(1);
    }
    let mut best_k = 1;
    let mut best_gap = 0.0_f64;
    for k in 1..s.len() {
        let gap = if s[k] > 0.0 { s[k - 1] / s[k] } else { f64::INFINITY };
        if gap > best_gap {
            best_gap = gap;
            best_k = k;
            if gap.is_infinite() {
                break;
            }
        }
    }
    Ok(best_k)
}

/// Embedded transition kernel value `Phi(x)^T P_tilde Phit(y)`.
pub fn kme_evaluate(
    model: &ReshapedKernelModel,
    left: &OrthoFeatureMap,
    right: &OrthoFeatureMap,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    if left.id() != model.left_map_id || right.id() != model.right_map_id {
        return Err(invalid("feature maps do not match the ones the model was fit with"));
    }
    let phi_x = evaluate_ortho(left, x)?;
    let phi_y = evaluate_ortho(right, y)?;
    kme_apply(model, &phi_x, &phi_y)
}

/// [`kme_evaluate`] on pre-computed feature vectors.
pub fn kme_apply(model: &ReshapedKernelModel, phi_x: &[f64], phi_y: &[f64]) -> Result<f64> {
    if phi_x.len() != model.u.rows() || phi_y.len() != model.v.rows() {
        return Err(invalid("feature vector lengths do not match the model"));
    }
    let mut acc = 0.0;
    for k in 0..model.rank {
        let mut left = 0.0;
        let mut right = 0.0;
        for (i, p) in phi_x.iter().enumerate() {
            left += p * model.u[(i, k)];
        }
        for (j, p) in phi_y.iter().enumerate() {
            right += p * model.v[(j, k)];
        }
        acc += left * model.sigma[k] * right;
    }
    Ok(acc)
}

/// Anything that realizes a full feature-space projection matrix: the
/// plain estimate (`p_hat`) or a reshaped model (`P_tilde`).
pub trait ProjectionView {
    fn projection_matrix(&self) -> Matrix;
}

impl ProjectionView for ProjectionEstimate {
    fn projection_matrix(&self) -> Matrix {
        self.p_hat.clone()
    }
}

impl ProjectionView for ReshapedKernelModel {
    fn projection_matrix(&self) -> Matrix {
        self.matrix()
    }
}

/// Frobenius distance between a projection (plain or reshaped) and a
/// reference matrix.
pub fn embedding_error<P: ProjectionView>(projection: &P, reference: &Matrix) -> Result<f64> {
    let m = projection.projection_matrix();
    if m.rows() != reference.rows() || m.cols() != reference.cols() {
        return Err(invalid(format!(
            "projection is {}x{} but reference is {}x{}",
            m.rows(),
            m.cols(),
            reference.rows(),
            reference.cols()
        )));
    }
    Ok(m.sub(reference).frobenius_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{chain_projection, indicator_map_on, random_lowrank_chain};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn column(values: &[f64]) -> Matrix {
        Matrix::from_fn(values.len(), 1, |i, _| values[i])
    }

    fn diag_estimate(values: &[f64]) -> ProjectionEstimate {
        let n = values.len();
        let p_hat = Matrix::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 });
        ProjectionEstimate { p_hat, pair_count: 1, left_map_id: 0, right_map_id: 0 }
    }

    #[test]
    fn two_pair_scalar_arithmetic() {
        let phi = column(&[1.0, 2.0, 3.0]);
        let est = accumulate_features(&phi, &phi, 0, 0).unwrap();
        assert_eq!(est.pair_count(), 2);
        assert_eq!(est.p_hat()[(0, 0)], 4.0);
    }

    #[test]
    fn constant_features_average_to_one() {
        let phi = column(&[1.0; 57]);
        let est = accumulate_features(&phi, &phi, 0, 0).unwrap();
        assert_eq!(est.p_hat()[(0, 0)], 1.0);
    }

    #[test]
    fn parallel_chunking_matches_serial_evaluation() {
        // 9000 pairs span three 4096-pair chunks. A plain serial loop over
        // the same fixed chunking must agree bit for bit regardless of how
        // many threads evaluated the partials, and the whole mean must be
        // within rounding of the unchunked sequential sum.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = 9001;
        let left = Matrix::from_fn(t, 3, |_, _| rng.gen::<f64>() - 0.5);
        let right = Matrix::from_fn(t, 2, |_, _| rng.gen::<f64>() - 0.5);
        let est = accumulate_features(&left, &right, 0, 0).unwrap();
        assert_eq!(est.pair_count(), 9000);

        let n = t - 1;
        let mut want = Matrix::zeros(3, 2);
        let mut s = 0;
        while s < n {
            let e = (s + PAIR_CHUNK).min(n);
            let mut partial = Matrix::zeros(3, 2);
            for k in s..e {
                for i in 0..3 {
                    for j in 0..2 {
                        partial[(i, j)] += left[(k, i)] * right[(k + 1, j)];
                    }
                }
            }
            for (acc, v) in want.data_mut().iter_mut().zip(partial.data()) {
                *acc += v;
            }
            s = e;
        }
        let want = want.scaled(1.0 / n as f64);
        assert_eq!(est.p_hat(), &want);

        let mut flat = Matrix::zeros(3, 2);
        for k in 0..n {
            for i in 0..3 {
                for j in 0..2 {
                    flat[(i, j)] += left[(k, i)] * right[(k + 1, j)];
                }
            }
        }
        let drift = est.p_hat().sub(&flat.scaled(1.0 / n as f64)).frobenius_norm();
        assert!(drift <= 1e-13, "chunking drifted {drift} from the flat sum");
    }

    #[test]
    fn accumulate_rejects_short_or_mismatched_input() {
        let one = column(&[1.0]);
        assert!(accumulate_features(&one, &one, 0, 0).is_err());
        let a = column(&[1.0, 2.0]);
        let b = column(&[1.0, 2.0, 3.0]);
        assert!(accumulate_features(&a, &b, 0, 0).is_err());
        let nan = column(&[1.0, f64::NAN]);
        assert!(accumulate_features(&nan, &a, 0, 0).is_err());
    }

    #[test]
    fn merge_matches_the_concatenated_pair_multiset() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = Matrix::from_fn(61, 2, |_, _| rng.gen::<f64>() - 0.5);
        let b = Matrix::from_fn(42, 2, |_, _| rng.gen::<f64>() - 0.5);
        let merged = merge(&[
            accumulate_features(&a, &a, 0, 0).unwrap(),
            accumulate_features(&b, &b, 0, 0).unwrap(),
        ])
        .unwrap();
        assert_eq!(merged.pair_count(), 60 + 41);

        // Direct mean over the union of both trajectories' pairs. The
        // weighted average regroups the same terms, so agreement is to
        // rounding, not bitwise.
        let mut want = Matrix::zeros(2, 2);
        for (phi, t) in [(&a, 61), (&b, 42)] {
            for s in 0..t - 1 {
                for i in 0..2 {
                    for j in 0..2 {
                        want[(i, j)] += phi[(s, i)] * phi[(s + 1, j)];
                    }
                }
            }
        }
        let want = want.scaled(1.0 / 101.0);
        let diff = merged.p_hat().sub(&want).frobenius_norm();
        assert!(diff <= 1e-14, "merge drift {diff}");
    }

    #[test]
    fn merge_rejects_mixed_maps_and_shapes() {
        let phi = column(&[1.0, 2.0, 3.0]);
        let a = accumulate_features(&phi, &phi, 1, 2).unwrap();
        let b = accumulate_features(&phi, &phi, 3, 2).unwrap();
        assert!(merge(&[a.clone(), b]).is_err());
        let wide = Matrix::from_fn(3, 2, |i, j| (i + j) as f64);
        let c = accumulate_features(&wide, &wide, 1, 2).unwrap();
        assert!(merge(&[a.clone(), c]).is_err());
        assert!(merge(&[]).is_err());
        let solo = merge(std::slice::from_ref(&a)).unwrap();
        assert_eq!(solo.p_hat(), a.p_hat());
    }

    #[test]
    fn diagonal_truncation() {
        let est = diag_estimate(&[3.0, 2.0, 1.0]);
        let model = reshape(&est, 2).unwrap();
        assert_abs_diff_eq!(model.residual_sigma(), 1.0, epsilon = 1e-12);
        let m = model.matrix();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { [3.0, 2.0, 0.0][i] } else { 0.0 };
                assert_abs_diff_eq!(m[(i, j)], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn full_rank_reshape_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi = Matrix::from_fn(40, 4, |_, _| rng.gen::<f64>() - 0.5);
        let est = accumulate_features(&phi, &phi, 0, 0).unwrap();
        let model = reshape(&est, 4).unwrap();
        assert_eq!(model.residual_sigma(), 0.0);
        let diff = model.matrix().sub(est.p_hat()).frobenius_norm();
        assert!(diff <= 1e-10);
    }

    #[test]
    fn truncation_error_follows_the_singular_tail() {
        // Eckart-Young both ways: spectral error = sigma_{r+1} and
        // Frobenius error = sqrt(sum of squared discarded values),
        // nonincreasing in r.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let phi_l = Matrix::from_fn(300, 8, |_, _| rng.gen::<f64>() - 0.5);
        let phi_r = Matrix::from_fn(300, 5, |_, _| rng.gen::<f64>() - 0.5);
        let est = accumulate_features(&phi_l, &phi_r, 0, 0).unwrap();
        let svd = thin_svd(est.p_hat()).unwrap();
        let mut prev = f64::INFINITY;
        for r in 1..=5 {
            let model = reshape(&est, r).unwrap();
            let diff = est.p_hat().sub(&model.matrix());
            let spectral = diff.spectral_norm();
            assert_abs_diff_eq!(spectral, model.residual_sigma(), epsilon = 1e-10);
            let tail: f64 = svd.singular_values[r..].iter().map(|s| s * s).sum();
            let frob = diff.frobenius_norm();
            assert_abs_diff_eq!(frob, tail.sqrt(), epsilon = 1e-9);
            assert!(frob <= prev + 1e-12);
            prev = frob;
        }
        assert!(reshape(&est, 0).is_err());
        assert!(reshape(&est, 6).is_err());
    }

    #[test]
    fn rank_suggestion_reports_the_largest_gap() {
        let est = diag_estimate(&[10.0, 9.0, 1.0, 0.9]);
        assert_eq!(suggest_rank(&est).unwrap(), 2);
        let exact = diag_estimate(&[1.0, 0.5, 0.0]);
        assert_eq!(suggest_rank(&est).unwrap(), 2);
        assert_eq!(suggest_rank(&exact).unwrap(), 2);
    }

    #[test]
    fn zero_model_evaluates_to_zero() {
        let est = diag_estimate(&[0.0, 0.0]);
        let model = reshape(&est, 1).unwrap();
        assert_eq!(kme_apply(&model, &[3.0, 4.0], &[5.0, 6.0]).unwrap(), 0.0);
    }

    #[test]
    fn scalar_model_arithmetic() {
        let est = diag_estimate(&[4.0]);
        let model = reshape(&est, 1).unwrap();
        let got = kme_apply(&model, &[2.0], &[3.0]).unwrap();
        assert_abs_diff_eq!(got, 24.0, epsilon = 1e-12);
        assert!(kme_apply(&model, &[2.0, 1.0], &[3.0]).is_err());
    }

    #[test]
    fn finite_chain_model_reproduces_exact_transition_products() {
        // With indicator features and the exact projection, reshaping at
        // the true rank returns P itself, and the embedded kernel at a
        // state pair is the brute-force finite sum pi_i T_ij.
        let chain = random_lowrank_chain(4, 2, 19).unwrap();
        let states = Matrix::from_fn(4, 1, |i, _| i as f64);
        let left = indicator_map_on(&states, chain.stationary().to_vec(), 40).unwrap();
        let right = indicator_map_on(&states, vec![1.0; 4], 41).unwrap();
        let p_star = chain_projection(&chain);
        let est = ProjectionEstimate {
            p_hat: p_star.clone(),
            pair_count: 1,
            left_map_id: left.id(),
            right_map_id: right.id(),
        };
        let model = reshape(&est, 2).unwrap();
        let diff = model.matrix().sub(&p_star).frobenius_norm();
        assert!(diff <= 1e-12, "rank-2 truncation altered an exactly rank-2 matrix by {diff}");
        for i in 0..4 {
            for j in 0..4 {
                let got =
                    kme_evaluate(&model, &left, &right, states.row(i), states.row(j)).unwrap();
                assert_abs_diff_eq!(got, p_star[(i, j)], epsilon = 1e-10);
            }
        }
        // Swapped maps are a different basis and must be refused.
        assert!(kme_evaluate(&model, &right, &left, states.row(0), states.row(0)).is_err());
    }

    #[test]
    fn embedding_error_is_a_frobenius_distance() {
        let est = diag_estimate(&[3.0, 2.0, 1.0]);
        assert_eq!(embedding_error(&est, est.p_hat()).unwrap(), 0.0);
        let reference = diag_estimate(&[3.0, 2.0, 0.0]);
        assert_abs_diff_eq!(
            embedding_error(&est, reference.p_hat()).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        let model = reshape(&est, 2).unwrap();
        assert_abs_diff_eq!(
            embedding_error(&model, est.p_hat()).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let wrong_shape = Matrix::zeros(2, 3);
        assert!(embedding_error(&est, &wrong_shape).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let a = Matrix::from_fn(5, 4, |_, _| rng.gen::<f64>());
        let b = Matrix::from_fn(5, 4, |_, _| rng.gen::<f64>());
        let direct: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let est_a = ProjectionEstimate {
            p_hat: a,
            pair_count: 1,
            left_map_id: 0,
            right_map_id: 0,
        };
        assert_abs_diff_eq!(embedding_error(&est_a, &b).unwrap(), direct, epsilon = 1e-14);
    }

    #[test]
    fn accumulate_runs_feature_maps_over_trajectory_pairs() {
        use crate::features::{orthogonalize, sample_rff, GaussianKernelSpec, MeasureDescriptor};
        use crate::simulator::{simulate, PotentialSpec};

        let spec = PotentialSpec::Quadratic { curvatures: vec![1.0] };
        let traj = simulate(&spec, &[0.3], 1e-2, 200, 5, 100, 91).unwrap();
        let kernel = GaussianKernelSpec::new(0.8, 1).unwrap();
        let raw = sample_rff(&kernel, 60, 17).unwrap();
        let measure = MeasureDescriptor::EmpiricalTrajectory { sample_count: 200 };
        let map = orthogonalize(&raw, &traj.states, 1e-8, measure, 5).unwrap();
        let est = accumulate(&traj, &map, &map).unwrap();
        assert_eq!(est.pair_count(), 199);
        assert_eq!(est.left_map_id(), map.id());
        assert_eq!(est.right_map_id(), map.id());
        let phi = evaluate_ortho_batch(&map, &traj.states).unwrap();
        let direct = accumulate_features(&phi, &phi, map.id(), map.id()).unwrap();
        assert_eq!(est, direct);

        let kernel2 = GaussianKernelSpec::new(0.8, 2).unwrap();
        let raw2 = sample_rff(&kernel2, 60, 17).unwrap();
        let measure2 = MeasureDescriptor::EmpiricalTrajectory { sample_count: 2 };
        let states2 = Matrix::from_fn(2, 2, |i, j| (i + j) as f64);
        let map2 = orthogonalize(&raw2, &states2, 1e-8, measure2, 5).unwrap();
        assert!(accumulate(&traj, &map2, &map2).is_err());
    }

    #[test]
    fn model_json_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let phi = Matrix::from_fn(50, 3, |_, _| rng.gen::<f64>() - 0.5);
        let est = accumulate_features(&phi, &phi, 7, 8).unwrap();
        let model = reshape(&est, 2).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: ReshapedKernelModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }
}
