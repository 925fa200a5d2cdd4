//! Shared pipeline plumbing: feature-map construction from a trajectory,
//! 1-d basin labeling, and small numeric helpers for the reports.

use specdyn_core::features::{
    orthogonalize, padded_bounding_box, sample_rff, uniform_box_samples, GaussianKernelSpec,
    MeasureDescriptor, OrthoFeatureMap,
};
use specdyn_core::numerics::Matrix;
use specdyn_core::simulator::{potential_grad, PotentialSpec, Trajectory};

use crate::config::{FeatureConfig, SimulationConfig};
use crate::error::{CliError, Result};

/// 17 significant digits: round-trip exact for 64-bit floats.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trajectory_from_states(states: Matrix, sim: &SimulationConfig) -> Trajectory {
    Trajectory {
        states,
        sample_interval: sim.inner_dt * sim.stride as f64,
        inner_dt: sim.inner_dt,
        seed: sim.seed,
        burn_in_discarded: sim.burn_in,
    }
}

/// Evenly spaced row subsample of at most `cap` states, preserving order.
fn subsample(states: &Matrix, cap: usize) -> Matrix {
    let t = states.rows();
    if t <= cap {
        return states.clone();
    }
    Matrix::from_fn(cap, states.cols(), |i, j| states[(i * t / cap, j)])
}

/// Builds the pair of orthogonal feature maps for a trajectory: the left
/// map over the empirical trajectory measure, the right map over the
/// uniform measure on the padded data bounding box.
pub fn build_maps(
    traj: &Trajectory,
    features: &FeatureConfig,
) -> Result<(OrthoFeatureMap, OrthoFeatureMap)> {
    let d = traj.dim();
    let kernel = GaussianKernelSpec::new(features.bandwidth, d)?;
    let raw_left = sample_rff(&kernel, features.n_features, features.left_seed)?;
    let raw_right = sample_rff(&kernel, features.n_features, features.right_seed)?;

    let cap = features.gram_cap();
    let left_samples = subsample(&traj.states, cap);
    let left = orthogonalize(
        &raw_left,
        &left_samples,
        features.drop_tol,
        MeasureDescriptor::EmpiricalTrajectory { sample_count: left_samples.rows() },
        features.left_quadrature_seed,
    )?;

    let (lower, upper) = padded_bounding_box(&traj.states, features.box_padding)?;
    let count = traj.len().min(cap);
    let right_samples =
        uniform_box_samples(&lower, &upper, count, features.right_quadrature_seed)?;
    let right = orthogonalize(
        &raw_right,
        &right_samples,
        features.drop_tol,
        MeasureDescriptor::UniformBox { lower, upper, sample_count: count },
        features.right_quadrature_seed,
    )?;
    Ok((left, right))
}

/// Rejects a requested rank that exceeds what feature thresholding kept.
pub fn check_rank(rank: usize, left: &OrthoFeatureMap, right: &OrthoFeatureMap) -> Result<()> {
    let achieved = left.n_features().min(right.n_features());
    if rank > achieved {
        return Err(CliError::config(format!(
            "rank {rank} exceeds the achieved feature count: J={} (left), J={} (right)",
            left.n_features(),
            right.n_features()
        )));
    }
    Ok(())
}

/// Locations of the interior maxima of a confining 1-d potential inside
/// `[lo, hi]`, found by a sign scan of the gradient plus bisection. The
/// intervals between them are the gradient-descent basins.
pub fn basin_boundaries(spec: &PotentialSpec, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if spec.dim() != 1 {
        return Err(CliError::config("basin labeling is only defined for 1-d potentials"));
    }
    let n = 4001;
    let step = (hi - lo) / (n - 1) as f64;
    let grad_at = |x: f64| -> Result<f64> { Ok(potential_grad(spec, &[x])?.1[0]) };
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        grads.push(grad_at(lo + step * i as f64)?);
    }
    let mut boundaries = Vec::new();
    for i in 0..n - 1 {
        let (a, b) = (grads[i], grads[i + 1]);
        if a > 0.0 && b < 0.0 {
            let mut x_lo = lo + step * i as f64;
            let mut x_hi = x_lo + step;
            for _ in 0..60 {
                let mid = 0.5 * (x_lo + x_hi);
                if grad_at(mid)? > 0.0 {
                    x_lo = mid;
                } else {
                    x_hi = mid;
                }
            }
            boundaries.push(0.5 * (x_lo + x_hi));
        } else if a == 0.0 && i > 0 && grads[i - 1] > 0.0 && b < 0.0 {
            boundaries.push(lo + step * i as f64);
        }
    }
    Ok(boundaries)
}

/// Basin index of each 1-d state: the count of boundaries at or below it.
pub fn basin_labels(states: &Matrix, boundaries: &[f64]) -> Vec<usize> {
    states
        .data()
        .iter()
        .map(|&x| boundaries.iter().take_while(|&&b| x >= b).count())
        .collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Least-squares slope of `ln(y)` against `ln(x)`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}
