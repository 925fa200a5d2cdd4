//! Brute-force references the rest of the test suite is checked against:
//! exact finite-state chains with indicator features, and dense-quadrature
//! ground truth for continuous 1-d benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::features::{
    assemble_ortho_map, evaluate_ortho_batch, sample_rff, GaussianKernelSpec, MeasureDescriptor,
    OrthoFeatureMap,
};
use crate::numerics::{invert, Matrix};
use crate::simulator::{potential_grad, PotentialSpec};

/// Ergodic finite-state Markov chain with its stationary distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteChain {
    transition: Matrix,
    stationary: Vec<f64>,
}

impl FiniteChain {
    /// Validates stochasticity (rows sum to 1 within 1e-12, entries >= 0)
    /// and stationarity (pi T = pi within 1e-10, pi a probability vector).
    pub fn new(transition: Matrix, stationary: Vec<f64>) -> Result<Self> {
        let s = transition.rows();
        if s == 0 || transition.cols() != s {
            return Err(invalid("transition matrix must be square and non-empty"));
        }
        if stationary.len() != s {
            return Err(invalid("stationary vector length must match the state count"));
        }
        if !transition.is_finite() || !stationary.iter().all(|p| p.is_finite()) {
            return Err(invalid("chain has non-finite entries"));
        }
        for i in 0..s {
            let row = transition.row(i);
            if row.iter().any(|p| *p < 0.0) {
                return Err(invalid("transition probabilities must be non-negative"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(invalid(format!("row {i} sums to {sum}, not 1")));
            }
        }
        if stationary.iter().any(|p| *p < 0.0) {
            return Err(invalid("stationary probabilities must be non-negative"));
        }
        let total: f64 = stationary.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("stationary vector sums to {total}, not 1")));
        }
        for j in 0..s {
            let mut acc = 0.0;
            for i in 0..s {
                acc += stationary[i] * transition[(i, j)];
            }
            if (acc - stationary[j]).abs() > 1e-10 {
                return Err(invalid(format!(
                    "stationary vector is not invariant at state {j}: {} vs {}",
                    acc, stationary[j]
                )));
            }
        }
        Ok(FiniteChain { transition, stationary })
    }

    pub fn n_states(&self) -> usize {
        self.transition.rows()
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }
}

/// Joint one-step law of the chain: `P*_{ij} = pi_i T_{ij}`.
pub fn chain_projection(chain: &FiniteChain) -> Matrix {
    let s = chain.n_states();
    Matrix::from_fn(s, s, |i, j| chain.stationary[i] * chain.transition[(i, j)])
}

/// Pairwise distances between transition rows:
/// entry (i, j) = ||T_{i,:} - T_{j,:}||_2. Symmetric with zero diagonal.
pub fn chain_diffusion_distances(chain: &FiniteChain) -> Matrix {
    let s = chain.n_states();
    let mut out = Matrix::zeros(s, s);
    for i in 0..s {
        for j in i + 1..s {
            let sq: f64 = chain
                .transition
                .row(i)
                .iter()
                .zip(chain.transition.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let d = sq.sqrt();
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    out
}

/// Stochastic matrix of rank at most `r`: T = A B with A's rows and B's
/// rows drawn uniform and normalized to sum 1 (A first, then B, row-major
/// from one ChaCha8 stream). All entries end up strictly positive, so the
/// chain is ergodic and the stationary solve is well posed.
pub fn random_lowrank_chain(n_states: usize, rank: usize, seed: u64) -> Result<FiniteChain> {
    if rank == 0 || rank > n_states {
        return Err(invalid("rank must satisfy 1 <= r <= S"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw_stochastic = |rows: usize, cols: usize| {
        let mut m = Matrix::from_fn(rows, cols, |_, _| rng.gen::<f64>() + 1e-3);
        for i in 0..rows {
            let sum: f64 = m.row(i).iter().sum();
            for v in m.row_mut(i) {
                *v /= sum;
            }
        }
        m
    };
    let a = draw_stochastic(n_states, rank);
    let b = draw_stochastic(rank, n_states);
    let transition = a.mul(&b);
    let stationary = stationary_distribution(&transition)?;
    FiniteChain::new(transition, stationary)
}

/// Stationary distribution of a stochastic matrix by dense linear solve
/// (replace one balance equation with the normalization), verified to
/// 1e-12 and falling back to power iteration if the solve is degenerate.
pub fn stationary_distribution(transition: &Matrix) -> Result<Vec<f64>> {
    let s = transition.rows();
    if s == 0 || transition.cols() != s {
        return Err(invalid("transition matrix must be square and non-empty"));
    }
    // (T^t - I) pi = 0 with the last equation swapped for sum(pi) = 1.
    let system = Matrix::from_fn(s, s, |i, j| {
        if i == s - 1 {
            1.0
        } else {
            transition[(j, i)] - if i == j { 1.0 } else { 0.0 }
        }
    });
    let solved = invert(&system).ok().map(|inv| {
        (0..s).map(|i| inv[(i, s - 1)]).collect::<Vec<f64>>()
    });
    if let Some(pi) = solved {
        if residual(transition, &pi) <= 1e-12 && pi.iter().all(|p| *p >= -1e-14) {
            let mut pi = pi;
            for p in pi.iter_mut() {
                *p = p.max(0.0);
            }
            let total: f64 = pi.iter().sum();
            for p in pi.iter_mut() {
                *p /= total;
            }
            return Ok(pi);
        }
    }
    // Power iteration fallback; converges for any ergodic chain.
    let mut pi = vec![1.0 / s as f64; s];
    for _ in 0..100_000 {
        let mut next = vec![0.0; s];
        for i in 0..s {
            let p = pi[i];
            for (j, nj) in next.iter_mut().enumerate() {
                *nj += p * transition[(i, j)];
            }
        }
        let total: f64 = next.iter().sum();
        for v in next.iter_mut() {
            *v /= total;
        }
        let delta = pi
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    if residual(transition, &pi) > 1e-12 {
        return Err(invalid("stationary distribution did not converge"));
    }
    Ok(pi)
}

fn residual(transition: &Matrix, pi: &[f64]) -> f64 {
    let s = pi.len();
    let mut worst = 0.0_f64;
    for j in 0..s {
        let mut acc = 0.0;
        for i in 0..s {
            acc += pi[i] * transition[(i, j)];
        }
        worst = worst.max((acc - pi[j]).abs());
    }
    worst
}

/// Quadrature rule on an axis-aligned box: nodes with positive weights
/// summing to the box volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    nodes: Matrix,
    weights: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl QuadratureGrid {
    /// Trapezoid rule on `[lower, upper]` with `n_nodes` equispaced nodes.
    pub fn trapezoid_1d(lower: f64, upper: f64, n_nodes: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(invalid("interval must be finite with lower < upper"));
        }
        if n_nodes < 2 {
            return Err(invalid("trapezoid rule needs at least two nodes"));
        }
        let h = (upper - lower) / (n_nodes - 1) as f64;
        let nodes = Matrix::from_fn(n_nodes, 1, |i, _| lower + h * i as f64);
        let weights = (0..n_nodes)
            .map(|i| if i == 0 || i == n_nodes - 1 { 0.5 * h } else { h })
            .collect();
        Ok(QuadratureGrid { nodes, weights, lower: vec![lower], upper: vec![upper] })
    }

    /// Uniform rule: arbitrary nodes inside the box, each carrying an
    /// equal share of the box volume.
    pub fn uniform_points(nodes: Matrix, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if nodes.rows() == 0 || nodes.cols() != lower.len() || lower.len() != upper.len() {
            return Err(invalid("node dimensions must match the box bounds"));
        }
        if !nodes.is_finite() {
            return Err(invalid("nodes must be finite"));
        }
        let mut volume = 1.0;
        for (lo, hi) in lower.iter().zip(&upper) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid("box bounds must be finite with lower < upper"));
            }
            volume *= hi - lo;
        }
        let w = volume / nodes.rows() as f64;
        let weights = vec![w; nodes.rows()];
        Ok(QuadratureGrid { nodes, weights, lower, upper })
    }

    pub fn len(&self) -> usize {
        self.nodes.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.nodes.cols()
    }

    pub fn nodes(&self) -> &Matrix {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Transition law evaluated on the nodes of a quadrature grid:
/// `density[(i, j)] = p(node_j | node_i)` and `stationary[i] = pi(node_i)`,
/// both densities with respect to the grid's weighted measure
/// (`sum_j density[(i, j)] w_j = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct GridKernel {
    pub density: Matrix,
    pub stationary: Vec<f64>,
}

/// Transition law of the Euler discretization at lag `stride * inner_dt`,
/// restricted to a 1-d grid. One inner step from `u` is Gaussian with
/// mean `u - V'(u) inner_dt` and variance `2 inner_dt`; the node-to-node
/// density matrix is row-normalized under the grid weights and composed
/// `stride` times by binary powering of the weighted transfer operator.
/// The stationary density is recovered by power iteration at the
/// composed lag, where the spectral gap is wide.
pub fn euler_stride_kernel(
    spec: &PotentialSpec,
    grid: &QuadratureGrid,
    inner_dt: f64,
    stride: usize,
) -> Result<GridKernel> {
    spec.validate()?;
    if spec.dim() != 1 || grid.dim() != 1 {
        return Err(invalid("stride kernel quadrature is one-dimensional"));
    }
    if !(inner_dt.is_finite() && inner_dt > 0.0) {
        return Err(invalid("inner step must be finite and positive"));
    }
    if stride == 0 {
        return Err(invalid("stride must be at least 1"));
    }
    let n = grid.len();
    let w = grid.weights();

    // One-step density rows, normalized so each integrates to 1.
    let mut one = Matrix::zeros(n, n);
    for i in 0..n {
        let x = grid.nodes[(i, 0)];
        let (_, g) = potential_grad(spec, &[x])?;
        let mean = x - g[0] * inner_dt;
        let inv_var = 1.0 / (4.0 * inner_dt);
        let row = one.row_mut(i);
        let mut mass = 0.0;
        for j in 0..n {
            let dy = grid.nodes[(j, 0)] - mean;
            let v = (-dy * dy * inv_var).exp();
            row[j] = v;
            mass += v * w[j];
        }
        if !(mass.is_finite() && mass > 0.0) {
            return Err(invalid(format!(
                "one-step density row {i} has no mass on the grid; widen the box"
            )));
        }
        for v in row.iter_mut() {
            *v /= mass;
        }
    }

    // density_s = K^(stride-1) * density_1 with K = density_1 * diag(w),
    // the row-stochastic transfer operator.
    let k1 = one.scale_cols(w);
    let density = if stride == 1 {
        one
    } else {
        matrix_power(&k1, stride - 1).mul(&one)
    };

    let ks = matrix_power(&k1, stride);
    let mut pi = vec![1.0 / grid_volume(grid); n];
    for _ in 0..20_000 {
        // pi_{t+1}(j) = sum_i pi_t(i) w_i density_s(i, j), via K_s.
        let mut next = vec![0.0; n];
        for i in 0..n {
            let p = pi[i];
            for (j, nj) in next.iter_mut().enumerate() {
                *nj += p * ks[(i, j)];
            }
        }
        let mass: f64 = next.iter().zip(w).map(|(p, wi)| p * wi).sum();
        for v in next.iter_mut() {
            *v /= mass;
        }
        let delta = pi
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        pi = next;
        if delta < 1e-14 {
            break;
        }
    }
    Ok(GridKernel { density, stationary: pi })
}

fn grid_volume(grid: &QuadratureGrid) -> f64 {
    grid.weights().iter().sum()
}

fn matrix_power(base: &Matrix, mut exp: usize) -> Matrix {
    let mut result = Matrix::identity(base.rows());
    let mut sq = base.clone();
    while exp > 0 {
        if exp & 1 == 1 {
            result = result.mul(&sq);
        }
        exp >>= 1;
        if exp > 0 {
            sq = sq.mul(&sq);
        }
    }
    result
}

/// Ground-truth feature-space projection of a transition law together
/// with a quadrature refinement estimate.
#[derive(Debug, Clone)]
pub struct QuadratureProjection {
    pub matrix: Matrix,
    /// Frobenius distance to the same integral evaluated on the
    /// half-resolution subgrid (every second node); `None` when the grid
    /// cannot be halved (non-1-d or too few nodes).
    pub refinement_error: Option<f64>,
}

/// Dense quadrature of `P* = integral pi(u) p(v|u) Phi(u) Phit(v)^T du dv`
/// over the grid: `sum_{u,v} w_u w_v pi(u) p(v|u) Phi(u) Phit(v)^T`.
pub fn quadrature_projection(
    kernel: &GridKernel,
    grid: &QuadratureGrid,
    left: &OrthoFeatureMap,
    right: &OrthoFeatureMap,
) -> Result<QuadratureProjection> {
    let n = grid.len();
    if kernel.density.rows() != n || kernel.density.cols() != n || kernel.stationary.len() != n {
        return Err(invalid("kernel evaluation shape does not match the grid"));
    }
    if !kernel.density.is_finite() || !kernel.stationary.iter().all(|p| p.is_finite()) {
        return Err(invalid("kernel evaluations must be finite"));
    }
    let phi_left = evaluate_ortho_batch(left, grid.nodes())?;
    let phi_right = evaluate_ortho_batch(right, grid.nodes())?;
    let w = grid.weights();

    let full_index: Vec<usize> = (0..n).collect();
    let matrix = project_on(
        &kernel.density,
        &kernel.stationary,
        &phi_left,
        &phi_right,
        w,
        &full_index,
    );

    // Half-resolution comparison: same integrand sampled on every second
    // node with re-derived trapezoid weights.
    let refinement_error = if grid.dim() == 1 && n >= 5 && n % 2 == 1 {
        let coarse: Vec<usize> = (0..n).step_by(2).collect();
        let m = coarse.len();
        let mut cw = Vec::with_capacity(m);
        for (k, &i) in coarse.iter().enumerate() {
            let left_gap = if k == 0 { 0.0 } else { grid.nodes[(i, 0)] - grid.nodes[(coarse[k - 1], 0)] };
            let right_gap = if k == m - 1 { 0.0 } else { grid.nodes[(coarse[k + 1], 0)] - grid.nodes[(i, 0)] };
            cw.push(0.5 * (left_gap + right_gap));
        }
        let coarse_matrix = project_on(
            &kernel.density,
            &kernel.stationary,
            &phi_left,
            &phi_right,
            &cw,
            &coarse,
        );
        Some(matrix.sub(&coarse_matrix).frobenius_norm())
    } else {
        None
    };

    Ok(QuadratureProjection { matrix, refinement_error })
}

/// `sum_{u,v in index} w_u w_v pi(u) p(v|u) Phi(u) Phit(v)^T` where the
/// weight vector is indexed by position in `index`.
fn project_on(
    density: &Matrix,
    stationary: &[f64],
    phi_left: &Matrix,
    phi_right: &Matrix,
    weights: &[f64],
    index: &[usize],
) -> Matrix {
    let jl = phi_left.cols();
    let jr = phi_right.cols();
    let m = index.len();
    // inner(u, b) = sum_v w_v p(v|u) Phit_b(v)
    let mut inner = Matrix::zeros(m, jr);
    for (a, &u) in index.iter().enumerate() {
        let drow = density.row(u);
        let dst = inner.row_mut(a);
        for (b_w, &v) in weights.iter().zip(index) {
            let scale = b_w * drow[v];
            if scale == 0.0 {
                continue;
            }
            for (d, p) in dst.iter_mut().zip(phi_right.row(v)) {
                *d += scale * p;
            }
        }
    }
    let mut out = Matrix::zeros(jl, jr);
    for (a, &u) in index.iter().enumerate() {
        let scale = weights[a] * stationary[u];
        let lrow = phi_left.row(u);
        let irow = inner.row(a);
        for (i, &l) in lrow.iter().enumerate() {
            let s = scale * l;
            if s == 0.0 {
                continue;
            }
            let dst = out.row_mut(i);
            for (d, p) in dst.iter_mut().zip(irow) {
                *d += s * p;
            }
        }
    }
    out
}

/// Feature map that is exactly the indicator basis on the given states:
/// the transform is a pseudo-inverse of an oversampled raw feature
/// matrix at those states, so `Phi(state_t) = e_t` up to a few ulps.
/// Oversampling keeps the design well conditioned; a draw that still
/// conditions badly is resampled deterministically. `norms` supplies the
/// reference-measure weights of the indicator features (e.g. the chain's
/// stationary probabilities on the left, all-ones counting weights on
/// the right).
pub fn indicator_map_on(states: &Matrix, norms: Vec<f64>, seed: u64) -> Result<OrthoFeatureMap> {
    let s = states.rows();
    if s == 0 {
        return Err(invalid("indicator basis needs at least one state"));
    }
    if norms.len() != s {
        return Err(invalid("need one norm per state"));
    }
    let kernel = GaussianKernelSpec::new(1.0, states.cols())?;
    let n_raw = 4 * s + 8;
    for attempt in 0..32u64 {
        let raw = sample_rff(&kernel, n_raw, seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9)))?;
        // E[(t, i)] = h_i(state_t); want transform with transform E^T = I.
        let e = crate::features::evaluate_raw_batch(&raw, states)?;
        let svd = crate::numerics::thin_svd(&e)?;
        let smallest = svd.singular_values[s - 1];
        if smallest <= 1e-3 * svd.singular_values[0] {
            continue;
        }
        // E = U S V^T, so U S^{-1} V^T is a left inverse of E^T.
        let transform = Matrix::from_fn(s, n_raw, |i, j| {
            (0..s)
                .map(|k| svd.u[(i, k)] / svd.singular_values[k] * svd.v[(j, k)])
                .sum()
        });
        return assemble_ortho_map(
            raw,
            transform,
            norms,
            MeasureDescriptor::EmpiricalTrajectory { sample_count: s },
            seed,
        );
    }
    Err(invalid("could not draw a well-conditioned indicator design for these states"))
}
