//! Metastable clustering of embedded states: weighted Lloyd k-means with
//! k-means++ restarts, a permutation-matched misclassification rate, and
//! the metastability score of a label sequence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{kmeans_pp_init, min_cost_permutation, squared_distance, Matrix};

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_RESTARTS: usize = 10;

/// Points to cluster with nonnegative weights. Uniform weights over
/// trajectory samples are the Monte-Carlo stand-in for stationary-measure
/// weighting, since the samples themselves are (approximately)
/// stationary-distributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPointSet {
    points: Matrix,
    weights: Vec<f64>,
}

impl WeightedPointSet {
    pub fn new(points: Matrix, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != points.rows() {
            return Err(invalid("weight vector length must match point count"));
        }
        if points.rows() == 0 {
            return Err(invalid("need at least one point"));
        }
        if !points.is_finite() {
            return Err(invalid("points must be finite"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(invalid("weights must have positive total"));
        }
        Ok(Self { points, weights })
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }
}

/// Converged weighted k-means solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    centroids: Matrix,
    objective: f64,
    iterations_run: usize,
    seed: u64,
}

impl ClusterModel {
    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn n_clusters(&self) -> usize {
        self.centroids.rows()
    }

    /// Weighted sum of squared distances to the assigned centroids.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn iterations_run(&self) -> usize {
        self.iterations_run
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Index of the centroid nearest to `psi`; ties break to the lowest index.
pub fn assign(model: &ClusterModel, psi: &[f64]) -> Result<usize> {
    if psi.len() != model.centroids.cols() {
        return Err(invalid("point dimension does not match the centroids"));
    }
    Ok(nearest(&model.centroids, psi).0)
}

fn nearest(centroids: &Matrix, psi: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = squared_distance(psi, centroids.row(0));
    for k in 1..centroids.rows() {
        let d = squared_distance(psi, centroids.row(k));
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    (best, best_d)
}

/// Weighted Lloyd iterations from k-means++ seeding, best of `n_restarts`
/// by final objective. Deterministic for a fixed seed: restart seeds are
/// derived by offset and ties prefer the earliest restart.
pub fn weighted_kmeans(
    pts: &WeightedPointSet,
    m: usize,
    seed: u64,
    max_iter: usize,
    n_restarts: usize,
) -> Result<ClusterModel> {
    if n_restarts == 0 || max_iter == 0 {
        return Err(invalid("need at least one restart and one iteration"));
    }
    // kmeans_pp_init validates m >= 1 and distinct points >= m; probe once
    // so an invalid instance fails before any restart work.
    kmeans_pp_init(&pts.points, &pts.weights, m, seed)?;
    let runs: Vec<ClusterModel> = (0..n_restarts)
        .into_par_iter()
        .map(|t| lloyd(pts, m, seed.wrapping_add(t as u64), max_iter))
        .collect::<Result<_>>()?;
    Ok(runs
        .into_iter()
        .reduce(|best, run| if run.objective < best.objective { run } else { best })
        .expect("at least one restart"))
}

fn lloyd(pts: &WeightedPointSet, m: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
    let points = &pts.points;
    let weights = &pts.weights;
    let (n, r) = (points.rows(), points.cols());
    let mut centroids = kmeans_pp_init(points, weights, m, seed)?;

    let assign_all = |centroids: &Matrix| -> (Vec<usize>, f64) {
        let mut labels = vec![0usize; n];
        let mut objective = 0.0;
        for i in 0..n {
            let (k, d) = nearest(centroids, points.row(i));
            labels[i] = k;
            objective += weights[i] * d;
        }
        (labels, objective)
    };

    let (mut labels, mut objective) = assign_all(&centroids);
    let mut iterations_run = 0;
    for _ in 0..max_iter {
        iterations_run += 1;
        // Weighted centroid update.
        let mut sums = Matrix::zeros(m, r);
        let mut mass = vec![0.0f64; m];
        for i in 0..n {
            let k = labels[i];
            mass[k] += weights[i];
            let row = sums.row_mut(k);
            for (acc, v) in row.iter_mut().zip(points.row(i)) {
                *acc += weights[i] * v;
            }
        }
        let mut grabbed: Vec<usize> = Vec::new();
        for (k, &mk) in mass.iter().enumerate() {
            if mk > 0.0 {
                let row = sums.row_mut(k);
                for v in row.iter_mut() {
                    *v /= mk;
                }
                centroids.row_mut(k).copy_from_slice(sums.row(k));
            } else {
                // Re-seed an emptied cluster on the point contributing most
                // to the objective; each such point is claimed only once.
                let mut pick = usize::MAX;
                let mut pick_cost = -1.0;
                for i in 0..n {
                    if grabbed.contains(&i) {
                        continue;
                    }
                    let cost = weights[i] * squared_distance(points.row(i), centroids.row(labels[i]));
                    if cost > pick_cost {
                        pick_cost = cost;
                        pick = i;
                    }
                }
                grabbed.push(pick);
                centroids.row_mut(k).copy_from_slice(points.row(pick));
            }
        }
        let (new_labels, new_objective) = assign_all(&centroids);
        assert!(
            new_objective <= objective + 1e-12 * (1.0 + objective),
            "Lloyd objective increased: {objective} -> {new_objective}"
        );
        let converged = new_labels == labels;
        labels = new_labels;
        objective = new_objective;
        if converged {
            break;
        }
    }
    Ok(ClusterModel { centroids, objective, iterations_run, seed })
}

/// Permutation-matched misclassification rate between two labelings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionComparison {
    /// `M = min over permutations of the summed missed weight fraction`,
    /// in `[0, m]`.
    pub rate: f64,
    /// `permutation[j]` is the predicted label matched to reference
    /// class `j`.
    pub permutation: Vec<usize>,
}

/// Misclassification rate: for each reference class, the weight fraction
/// of its points that the matched predicted label misses, summed over
/// classes and minimized over label matchings (exact assignment solve).
pub fn misclassification(
    predicted: &[usize],
    reference: &[usize],
    weights: &[f64],
) -> Result<PartitionComparison> {
    let n = reference.len();
    if predicted.len() != n || weights.len() != n || n == 0 {
        return Err(invalid("label and weight sequences must have equal nonzero length"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(invalid("weights must be finite and nonnegative"));
    }
    let m = reference.iter().max().unwrap() + 1;
    if predicted.iter().any(|&p| p >= m) {
        return Err(invalid("predicted labels must use at most as many classes as the reference"));
    }
    let mut class_mass = vec![0.0f64; m];
    for i in 0..n {
        class_mass[reference[i]] += weights[i];
    }
    if class_mass.iter().any(|&w| w <= 0.0) {
        return Err(invalid("every reference class needs positive weight"));
    }
    // miss[(j, k)] = weight fraction of reference class j not predicted k.
    let mut hit = Matrix::zeros(m, m);
    for i in 0..n {
        hit[(reference[i], predicted[i])] += weights[i];
    }
    let miss = Matrix::from_fn(m, m, |j, k| (class_mass[j] - hit[(j, k)]) / class_mass[j]);
    let (permutation, rate) = min_cost_permutation(&miss)?;
    Ok(PartitionComparison { rate, permutation })
}

/// Metastability score of a cluster-label sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetastabilityScore {
    /// Sum over visited clusters of (pairs staying in the cluster) /
    /// (pairs starting in it). At most the number of visited clusters.
    pub score: f64,
    /// Clusters in which at least one consecutive pair starts.
    pub visited_clusters: usize,
    pub declared_clusters: usize,
}

impl MetastabilityScore {
    /// False when some declared cluster never starts a pair; the score
    /// then covers the visited clusters only.
    pub fn all_visited(&self) -> bool {
        self.visited_clusters == self.declared_clusters
    }
}

/// Fraction of consecutive pairs staying put, summed per starting cluster.
pub fn metastability_score(labels: &[usize], m: usize) -> Result<MetastabilityScore> {
    if labels.len() < 2 {
        return Err(invalid("need at least two labels to form a pair"));
    }
    if m == 0 {
        return Err(invalid("need at least one cluster"));
    }
    if labels.iter().any(|&l| l >= m) {
        return Err(invalid("label out of range"));
    }
    let mut starts = vec![0u64; m];
    let mut stays = vec![0u64; m];
    for w in labels.windows(2) {
        starts[w[0]] += 1;
        if w[1] == w[0] {
            stays[w[0]] += 1;
        }
    }
    let mut score = 0.0;
    let mut visited = 0;
    for k in 0..m {
        if starts[k] > 0 {
            visited += 1;
            score += stays[k] as f64 / starts[k] as f64;
        }
    }
    Ok(MetastabilityScore { score, visited_clusters: visited, declared_clusters: m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points_1d(values: &[f64]) -> Matrix {
        Matrix::from_fn(values.len(), 1, |i, _| values[i])
    }

    fn sorted_centroids_1d(model: &ClusterModel) -> Vec<f64> {
        let mut c: Vec<f64> = (0..model.n_clusters()).map(|k| model.centroids()[(k, 0)]).collect();
        c.sort_by(f64::total_cmp);
        c
    }

    #[test]
    fn separable_points_fit_exactly() {
        let pts = WeightedPointSet::new(points_1d(&[0.0, 10.0]), vec![1.0, 1.0]).unwrap();
        let model = weighted_kmeans(&pts, 2, 1, DEFAULT_MAX_ITER, DEFAULT_RESTARTS).unwrap();
        assert_eq!(model.objective(), 0.0);
        assert_eq!(sorted_centroids_1d(&model), vec![0.0, 10.0]);
    }

    #[test]
    fn two_far_pairs_split_down_the_middle() {
        let pts =
            WeightedPointSet::new(points_1d(&[0.0, 1.0, 9.0, 10.0]), vec![1.0; 4]).unwrap();
        let model = weighted_kmeans(&pts, 2, 2, DEFAULT_MAX_ITER, DEFAULT_RESTARTS).unwrap();
        assert_abs_diff_eq!(model.objective(), 1.0, epsilon = 1e-12);
        let c = sorted_centroids_1d(&model);
        assert_abs_diff_eq!(c[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], 9.5, epsilon = 1e-12);

        // Exhaustive check over every 2-partition of the 4 points: the
        // converged objective is the global optimum.
        let values = [0.0, 1.0, 9.0, 10.0];
        let mut best = f64::INFINITY;
        for mask in 0u32..16 {
            let (mut sum_a, mut n_a, mut sum_b, mut n_b) = (0.0, 0, 0.0, 0);
            for (i, v) in values.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    sum_a += v;
                    n_a += 1;
                } else {
                    sum_b += v;
                    n_b += 1;
                }
            }
            if n_a == 0 || n_b == 0 {
                continue;
            }
            let (ca, cb) = (sum_a / n_a as f64, sum_b / n_b as f64);
            let obj: f64 = values
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let c = if mask & (1 << i) != 0 { ca } else { cb };
                    (v - c) * (v - c)
                })
                .sum();
            best = best.min(obj);
        }
        assert_abs_diff_eq!(model.objective(), best, epsilon = 1e-12);
    }

    #[test]
    fn doubling_a_weight_equals_duplicating_the_point() {
        let weighted = WeightedPointSet::new(
            points_1d(&[0.0, 1.0, 9.0, 10.0]),
            vec![2.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        let duplicated = WeightedPointSet::new(
            points_1d(&[0.0, 0.0, 1.0, 9.0, 10.0]),
            vec![1.0; 5],
        )
        .unwrap();
        let a = weighted_kmeans(&weighted, 2, 3, DEFAULT_MAX_ITER, DEFAULT_RESTARTS).unwrap();
        let b = weighted_kmeans(&duplicated, 2, 4, DEFAULT_MAX_ITER, DEFAULT_RESTARTS).unwrap();
        assert_abs_diff_eq!(a.objective(), b.objective(), epsilon = 1e-12);
        let ca = sorted_centroids_1d(&a);
        let cb = sorted_centroids_1d(&b);
        assert_abs_diff_eq!(ca[0], cb[0], epsilon = 1e-12);
        assert_abs_diff_eq!(ca[1], cb[1], epsilon = 1e-12);
    }

    #[test]
    fn kmeans_is_deterministic_and_validates() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let points = Matrix::from_fn(60, 2, |i, _| {
            let center = if i % 3 == 0 { -4.0 } else if i % 3 == 1 { 0.0 } else { 4.0 };
            center + 0.3 * (rng.gen::<f64>() - 0.5)
        });
        let weights: Vec<f64> = (0..60).map(|_| rng.gen::<f64>() + 0.1).collect();
        let pts = WeightedPointSet::new(points, weights).unwrap();
        let a = weighted_kmeans(&pts, 3, 7, DEFAULT_MAX_ITER, DEFAULT_RESTARTS).unwrap();
        let b = weighted_kmeans(&pts, 3, 7, DEFAULT_MAX_ITER, DEFAULT_RESTARTS).unwrap();
        assert_eq!(a, b);
        assert!(a.objective() >= 0.0 && a.objective().is_finite());
        assert!(a.iterations_run() >= 1);

        assert!(weighted_kmeans(&pts, 61, 7, DEFAULT_MAX_ITER, DEFAULT_RESTARTS).is_err());
        assert!(weighted_kmeans(&pts, 3, 7, 0, DEFAULT_RESTARTS).is_err());
        assert!(weighted_kmeans(&pts, 3, 7, DEFAULT_MAX_ITER, 0).is_err());
        let dup = WeightedPointSet::new(points_1d(&[1.0, 1.0]), vec![1.0, 1.0]).unwrap();
        assert!(weighted_kmeans(&dup, 2, 7, DEFAULT_MAX_ITER, DEFAULT_RESTARTS).is_err());
    }

    #[test]
    fn point_set_validation() {
        assert!(WeightedPointSet::new(points_1d(&[1.0]), vec![1.0, 2.0]).is_err());
        assert!(WeightedPointSet::new(points_1d(&[]), vec![]).is_err());
        assert!(WeightedPointSet::new(points_1d(&[f64::NAN]), vec![1.0]).is_err());
        assert!(WeightedPointSet::new(points_1d(&[1.0]), vec![-0.5]).is_err());
        assert!(WeightedPointSet::new(points_1d(&[1.0, 2.0]), vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn assignment_follows_nearest_with_low_index_ties() {
        let pts = WeightedPointSet::new(points_1d(&[-1.0, 1.0]), vec![1.0, 1.0]).unwrap();
        let model = weighted_kmeans(&pts, 2, 5, DEFAULT_MAX_ITER, DEFAULT_RESTARTS).unwrap();
        for k in 0..2 {
            let c = model.centroids().row(k).to_vec();
            assert_eq!(assign(&model, &c).unwrap(), k);
        }
        // Equidistant from both centroids: the tie goes to index 0.
        assert_eq!(assign(&model, &[0.0]).unwrap(), 0);
        assert!(assign(&model, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn assignment_reproduces_the_converged_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let points = Matrix::from_fn(40, 2, |i, _| {
            let center = if i < 20 { -3.0 } else { 3.0 };
            center + rng.gen::<f64>() - 0.5
        });
        let weights: Vec<f64> = (0..40).map(|_| rng.gen::<f64>() + 0.2).collect();
        let pts = WeightedPointSet::new(points.clone(), weights.clone()).unwrap();
        let model = weighted_kmeans(&pts, 2, 6, DEFAULT_MAX_ITER, DEFAULT_RESTARTS).unwrap();
        let mut objective = 0.0;
        for (i, w) in weights.iter().enumerate() {
            let k = assign(&model, points.row(i)).unwrap();
            objective += w * squared_distance(points.row(i), model.centroids().row(k));
        }
        assert_abs_diff_eq!(objective, model.objective(), epsilon = 1e-12);
    }

    #[test]
    fn misclassification_basics() {
        let w = [0.25; 4];
        let reference = [0, 0, 1, 1];
        let same = misclassification(&reference, &reference, &w).unwrap();
        assert_eq!(same.rate, 0.0);
        assert_eq!(same.permutation, vec![0, 1]);

        let swapped = [1, 1, 0, 0];
        let m = misclassification(&swapped, &reference, &w).unwrap();
        assert_eq!(m.rate, 0.0);
        assert_eq!(m.permutation, vec![1, 0]);
    }

    #[test]
    fn misclassification_weighted_example() {
        // Reference {1,2}/{3}, predicted {1}/{2,3}: identity matching
        // misses 0.4 of 0.8 in class 0 and nothing in class 1 (0.5 total);
        // the swap misses 0.4 + 1.0 (1.5). Both checked by brute force.
        let weights = [0.4, 0.4, 0.2];
        let reference = [0, 0, 1];
        let predicted = [0, 1, 1];
        let got = misclassification(&predicted, &reference, &weights).unwrap();

        let mass = [0.8, 0.2];
        let mut best = f64::INFINITY;
        for perm in [[0usize, 1usize], [1, 0]] {
            let mut total = 0.0;
            for j in 0..2 {
                let missed: f64 = (0..3)
                    .filter(|&i| reference[i] == j && predicted[i] != perm[j])
                    .map(|i| weights[i])
                    .sum();
                total += missed / mass[j];
            }
            best = best.min(total);
        }
        assert_abs_diff_eq!(best, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(got.rate, 0.5, epsilon = 1e-12);
        assert_eq!(got.permutation, vec![0, 1]);
    }

    #[test]
    fn misclassification_is_permutation_invariant_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = 4;
        let reference: Vec<usize> = (0..m).chain((0..200).map(|_| rng.gen_range(0..m))).collect();
        let predicted: Vec<usize> =
            (0..reference.len()).map(|_| rng.gen_range(0..m)).collect();
        let weights: Vec<f64> = (0..reference.len()).map(|_| rng.gen::<f64>() + 0.01).collect();
        let base = misclassification(&predicted, &reference, &weights).unwrap();
        assert!(base.rate >= 0.0 && base.rate <= m as f64);

        let relabel = [2usize, 0, 3, 1];
        let shuffled: Vec<usize> = predicted.iter().map(|&p| relabel[p]).collect();
        let moved = misclassification(&shuffled, &reference, &weights).unwrap();
        assert_eq!(moved.rate, base.rate);
    }

    #[test]
    fn misclassification_rejects_bad_input() {
        assert!(misclassification(&[0, 0], &[0, 1, 1], &[1.0, 1.0, 1.0]).is_err());
        // Reference never uses class 1 out of {0,1,2}.
        assert!(misclassification(&[0, 1, 2], &[0, 2, 2], &[1.0; 3]).is_err());
        // Zero-weight reference class.
        assert!(misclassification(&[0, 1], &[0, 1], &[1.0, 0.0]).is_err());
        // Predicted label outside the reference label set.
        assert!(misclassification(&[0, 2], &[0, 1], &[1.0, 1.0]).is_err());
        assert!(misclassification(&[], &[], &[]).is_err());
    }

    #[test]
    fn metastability_degenerate_sequences() {
        let constant = metastability_score(&[0; 50], 1).unwrap();
        assert_eq!(constant.score, 1.0);
        assert!(constant.all_visited());

        let alternating: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let alt = metastability_score(&alternating, 2).unwrap();
        assert_eq!(alt.score, 0.0);
        assert!(alt.all_visited());

        let partial = metastability_score(&[0, 0, 0], 2).unwrap();
        assert_eq!(partial.score, 1.0);
        assert_eq!(partial.visited_clusters, 1);
        assert!(!partial.all_visited());

        assert!(metastability_score(&[0], 1).is_err());
        assert!(metastability_score(&[0, 2], 2).is_err());
        assert!(metastability_score(&[0, 0], 0).is_err());
    }

    #[test]
    fn metastability_of_a_sampled_two_state_chain() {
        // Chain with stay probabilities 0.9 and 0.8: the score estimates
        // their sum; 1e5 steps keep the Monte-Carlo error within 0.02.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut labels = Vec::with_capacity(100_000);
        let mut state = 0usize;
        for _ in 0..100_000 {
            labels.push(state);
            let stay = if state == 0 { 0.9 } else { 0.8 };
            if rng.gen::<f64>() >= stay {
                state = 1 - state;
            }
        }
        let got = metastability_score(&labels, 2).unwrap();
        assert!(got.all_visited());
        assert!((got.score - 1.7).abs() <= 0.02, "score {}", got.score);
    }

    #[test]
    fn two_state_embedding_clusters_with_zero_misclassification() {
        use crate::embedding::{embed_batch, fit};
        use crate::estimator::ProjectionEstimate;
        use crate::oracle::{chain_projection, indicator_map_on, random_lowrank_chain};

        let chain = random_lowrank_chain(2, 2, 23).unwrap();
        let states = points_1d(&[0.0, 1.0]);
        let left = indicator_map_on(&states, chain.stationary().to_vec(), 24).unwrap();
        let right = indicator_map_on(&states, vec![1.0; 2], 25).unwrap();
        let est =
            ProjectionEstimate::from_matrix(chain_projection(&chain), 1, left.id(), right.id())
                .unwrap();
        let embedder = fit(&est, &left, &right, 2).unwrap();
        let psi = embed_batch(&embedder, &left, &states).unwrap();

        let pts = WeightedPointSet::new(psi.clone(), chain.stationary().to_vec()).unwrap();
        let model = weighted_kmeans(&pts, 2, 26, DEFAULT_MAX_ITER, DEFAULT_RESTARTS).unwrap();
        let predicted = [
            assign(&model, psi.row(0)).unwrap(),
            assign(&model, psi.row(1)).unwrap(),
        ];
        let cmp = misclassification(&predicted, &[0, 1], chain.stationary()).unwrap();
        assert_eq!(cmp.rate, 0.0);
    }
}
