//! Dense linear-algebra and combinatorial primitives shared by the rest of
//! the crate: row-major matrices, thin SVD and symmetric eigendecomposition
//! with a fixed sign convention, exact minimum-cost assignment, and weighted
//! k-means++ seeding.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Dense row-major matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Wraps a row-major buffer; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self * other`. Large products are split over output rows; every
    /// row is still reduced by one task in fixed k-order, so the parallel
    /// and serial paths produce identical bits.
    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        let work = self.rows as u128 * self.cols as u128 * other.cols as u128;
        if work < 1 << 22 {
            for i in 0..self.rows {
                mul_into_row(self.row(i), other, out.row_mut(i));
            }
        } else {
            let cols = other.cols;
            out.data
                .par_chunks_mut(cols)
                .enumerate()
                .for_each(|(i, dst)| mul_into_row(self.row(i), other, dst));
        }
        out
    }

    /// `self^T * other`.
    pub fn tr_mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "outer dimension mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let lhs = self.row(k);
            let rhs = other.row(k);
            for (i, &a) in lhs.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let dst = out.row_mut(i);
                for j in 0..rhs.len() {
                    dst[j] += a * rhs[j];
                }
            }
        }
        out
    }

    /// Matrix-vector product `self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        let data = self.data.iter().map(|a| a * s).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    /// Multiplies row `i` by `d[i]` (left multiplication by `diag(d)`).
    pub fn scale_rows(&self, d: &[f64]) -> Matrix {
        assert_eq!(d.len(), self.rows, "diagonal length mismatch");
        let mut m = self.clone();
        for (i, &di) in d.iter().enumerate() {
            for v in m.row_mut(i) {
                *v *= di;
            }
        }
        m
    }

    /// Multiplies column `j` by `d[j]` (right multiplication by `diag(d)`).
    pub fn scale_cols(&self, d: &[f64]) -> Matrix {
        assert_eq!(d.len(), self.cols, "diagonal length mismatch");
        let mut m = self.clone();
        for i in 0..self.rows {
            for (v, s) in m.row_mut(i).iter_mut().zip(d) {
                *v *= s;
            }
        }
        m
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        let svd = self.to_na().svd(false, false);
        svd.singular_values.iter().copied().fold(0.0, f64::max)
    }

    pub(crate) fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_na(m: &DMatrix<f64>) -> Matrix {
        Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

fn mul_into_row(lhs: &[f64], other: &Matrix, dst: &mut [f64]) {
    for (k, &a) in lhs.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (d, r) in dst.iter_mut().zip(other.row(k)) {
            *d += a * r;
        }
    }
}

/// Dense inverse; errors on non-square, non-finite, or singular input.
pub fn invert(a: &Matrix) -> Result<Matrix> {
    if a.rows() != a.cols() {
        return Err(invalid("inverse needs a square matrix"));
    }
    if !a.is_finite() {
        return Err(invalid("cannot invert a matrix with non-finite entries"));
    }
    match a.to_na().try_inverse() {
        Some(inv) => Ok(Matrix::from_na(&inv)),
        None => Err(invalid("matrix is numerically singular")),
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Thin SVD with singular values sorted in decreasing order.
///
/// Sign convention: the largest-magnitude entry of each left singular
/// vector is positive (the matching right vector is flipped with it), so
/// decompositions are reproducible across runs and platforms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

pub fn thin_svd(a: &Matrix) -> Result<SvdResult> {
    if !a.is_finite() {
        return Err(invalid("non-finite entries in SVD input"));
    }
    if a.rows() == 0 || a.cols() == 0 {
        return Err(invalid("empty matrix in SVD input"));
    }
    // One-sided Jacobi on the tall orientation. Slower than bidiagonal QR
    // but numerically trustworthy on (near-)rank-deficient input, where QR
    // iteration can misconverge, and every decomposition in this crate is
    // small enough not to care.
    let transposed = a.rows() < a.cols();
    let work = if transposed { a.transpose() } else { a.clone() };
    let (mut u, singular_values, mut v) = jacobi_svd_tall(work)?;
    if transposed {
        std::mem::swap(&mut u, &mut v);
    }
    let k = singular_values.len();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| singular_values[j].total_cmp(&singular_values[i]));
    let mut u = Matrix::from_fn(u.rows(), k, |i, j| u[(i, order[j])]);
    let mut v = Matrix::from_fn(v.rows(), k, |i, j| v[(i, order[j])]);
    let singular_values: Vec<f64> = order.iter().map(|&i| singular_values[i]).collect();

    for col in 0..k {
        let mut arg = 0;
        for i in 0..u.rows() {
            if u[(i, col)].abs() > u[(arg, col)].abs() {
                arg = i;
            }
        }
        if u[(arg, col)] < 0.0 {
            for i in 0..u.rows() {
                u[(i, col)] = -u[(i, col)];
            }
            for i in 0..v.rows() {
                v[(i, col)] = -v[(i, col)];
            }
        }
    }
    Ok(SvdResult { u, singular_values, v })
}

/// Hestenes one-sided Jacobi: rotates column pairs of the tall matrix
/// until mutually orthogonal, accumulating the rotations as V. Column
/// norms are the singular values, computed with high relative accuracy
/// even deep in the spectrum's tail.
fn jacobi_svd_tall(mut work: Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (m, k) = (work.rows(), work.cols());
    debug_assert!(m >= k);
    let mut v = Matrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { 0.0 });
    // Relative coupling below tol is treated as orthogonal. Late sweeps
    // relax it geometrically so last-ulp re-coupling between correlated
    // columns cannot cycle forever; by Cauchy-Schwarz every pair skips
    // once tol reaches one, so termination is unconditional.
    let mut tol = 1e-14;
    let mut converged = false;
    for sweep in 0..64 {
        if sweep >= 40 {
            tol *= 4.0;
        }
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..m {
                    let x = work[(i, p)];
                    let y = work[(i, q)];
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                if apq.abs() <= tol * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let x = work[(i, p)];
                    let y = work[(i, q)];
                    work[(i, p)] = c * x - s * y;
                    work[(i, q)] = s * x + c * y;
                }
                for i in 0..k {
                    let x = v[(i, p)];
                    let y = v[(i, q)];
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(invalid("SVD iteration failed to converge"));
    }

    let mut singular_values = vec![0.0; k];
    let mut u = Matrix::zeros(m, k);
    for j in 0..k {
        let norm: f64 = (0..m).map(|i| work[(i, j)] * work[(i, j)]).sum::<f64>().sqrt();
        singular_values[j] = norm;
        if norm > 0.0 {
            for i in 0..m {
                u[(i, j)] = work[(i, j)] / norm;
            }
        }
    }
    // Exactly-zero columns still need unit left vectors: complete the
    // basis deterministically against the columns already placed.
    for j in 0..k {
        if singular_values[j] > 0.0 {
            continue;
        }
        for cand in 0..m {
            let mut col = vec![0.0; m];
            col[cand] = 1.0;
            for other in 0..k {
                if other == j || (singular_values[other] == 0.0 && other > j) {
                    continue;
                }
                let dot: f64 = (0..m).map(|i| col[i] * u[(i, other)]).sum();
                for i in 0..m {
                    col[i] -= dot * u[(i, other)];
                }
            }
            let norm: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                for i in 0..m {
                    u[(i, j)] = col[i] / norm;
                }
                break;
            }
        }
    }
    Ok((u, singular_values, v))
}

/// Eigendecomposition of a symmetric matrix; eigenvalues descending,
/// eigenvector columns under the same sign convention as [`thin_svd`].
pub fn sym_eig(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !a.is_finite() {
        return Err(invalid("non-finite entries in eigendecomposition input"));
    }
    if a.rows() != a.cols() || a.rows() == 0 {
        return Err(invalid("eigendecomposition input must be square and nonempty"));
    }
    let scale = a.data().iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    for i in 0..a.rows() {
        for j in (i + 1)..a.cols() {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale {
                return Err(invalid("matrix is not symmetric"));
            }
        }
    }
    let eig = a.to_na().symmetric_eigen();
    let k = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = Matrix::from_fn(k, k, |i, j| eig.eigenvectors[(i, order[j])]);
    for col in 0..k {
        let mut arg = 0;
        for i in 0..k {
            if vecs[(i, col)].abs() > vecs[(arg, col)].abs() {
                arg = i;
            }
        }
        if vecs[(arg, col)] < 0.0 {
            for i in 0..k {
                vecs[(i, col)] = -vecs[(i, col)];
            }
        }
    }
    Ok((eigenvalues, vecs))
}

/// Exact minimum-cost assignment (Hungarian algorithm with potentials,
/// O(m^3)). Returns the permutation `sigma` minimizing
/// `sum_i cost[(i, sigma[i])]` together with the attained total cost.
pub fn min_cost_permutation(cost: &Matrix) -> Result<(Vec<usize>, f64)> {
    if cost.rows() != cost.cols() || cost.rows() == 0 {
        return Err(invalid("cost matrix must be square and nonempty"));
    }
    if !cost.is_finite() {
        return Err(invalid("non-finite entries in cost matrix"));
    }
    let n = cost.rows();
    // 1-based arrays; p[j] = row currently assigned to column j (0 = none).
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[(i, perm[i])]).sum();
    Ok((perm, total))
}

/// Weighted k-means++ seeding: the first centroid is drawn proportionally
/// to the weights, each subsequent one proportionally to
/// `weight * squared distance to the nearest chosen centroid`.
/// Deterministic for a fixed seed.
pub fn kmeans_pp_init(points: &Matrix, weights: &[f64], m: usize, seed: u64) -> Result<Matrix> {
    let n = points.rows();
    if weights.len() != n {
        return Err(invalid("weight vector length must match point count"));
    }
    if m == 0 {
        return Err(invalid("cluster count must be at least 1"));
    }
    if !points.is_finite() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(invalid("points must be finite and weights finite nonnegative"));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(invalid("weights must have positive total"));
    }
    if count_distinct_rows(points) < m {
        return Err(invalid(format!("need at least {m} distinct points")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Matrix::zeros(m, points.cols());
    let first = weighted_draw(&mut rng, weights).expect("positive total weight");
    centroids.row_mut(0).copy_from_slice(points.row(first));

    let mut dist2: Vec<f64> = (0..n)
        .map(|i| squared_distance(points.row(i), centroids.row(0)))
        .collect();
    let mut mass = vec![0.0; n];
    for k in 1..m {
        for i in 0..n {
            mass[i] = weights[i] * dist2[i];
        }
        // all remaining mass can vanish when the positive-weight points are
        // exhausted; distinctness then still guarantees positive distances
        let pick = weighted_draw(&mut rng, &mass)
            .or_else(|| weighted_draw(&mut rng, &dist2))
            .expect("more distinct points than centroids");
        centroids.row_mut(k).copy_from_slice(points.row(pick));
        for (i, d2) in dist2.iter_mut().enumerate() {
            *d2 = d2.min(squared_distance(points.row(i), centroids.row(k)));
        }
    }
    Ok(centroids)
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn count_distinct_rows(points: &Matrix) -> usize {
    let mut rows: Vec<&[f64]> = (0..points.rows()).map(|i| points.row(i)).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows.windows(2).filter(|w| w[0] != w[1]).count() + 1
}

fn weighted_draw(rng: &mut ChaCha8Rng, weights: &[f64]) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let t = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = Some(i);
            if acc > t {
                return Some(i);
            }
        }
    }
    last
}
