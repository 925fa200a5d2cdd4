//! Random Fourier feature maps for the Gaussian kernel and their
//! orthogonalization against sampled reference measures.
//!
//! The raw map approximates `k(x, y) = exp(-||x - y||^2 / (2 sigma^2))` by
//! `h(x) . h(y)` with `h_i(x) = sqrt(2/N) cos(w_i . x + b_i)`, where
//! `w_i ~ N(0, sigma^{-2} I)` and `b_i ~ U[0, 2 pi)`. Orthogonalization
//! rotates the raw features so they are uncorrelated under a Monte-Carlo
//! estimate of a reference measure, dropping directions whose mass falls
//! below a relative tolerance; the surviving feature norms are what the
//! transition estimator later whitens by.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{sym_eig, Matrix};

/// Row count per parallel work unit in batch feature evaluation.
const ROW_CHUNK: usize = 1024;

/// Gaussian kernel `exp(-||x - y||^2 / (2 bandwidth^2))` on `R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernelSpec {
    pub bandwidth: f64,
    pub dim: usize,
}

impl GaussianKernelSpec {
    pub fn new(bandwidth: f64, dim: usize) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(invalid("kernel bandwidth must be finite and positive"));
        }
        if dim == 0 {
            return Err(invalid("kernel dimension must be at least 1"));
        }
        Ok(GaussianKernelSpec { bandwidth, dim })
    }

    /// Exact kernel value, used as the oracle for feature approximation.
    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-sq / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }
}

/// Random Fourier feature map. The frequencies and phases are a pure
/// function of `(kernel, n_features, seed)`, so only those three are
/// serialized and the buffers are regenerated on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "RawFeatureMapRepr", try_from = "RawFeatureMapRepr")]
pub struct RawFeatureMap {
    kernel: GaussianKernelSpec,
    frequencies: Matrix,
    phases: Vec<f64>,
    seed: u64,
}

#[derive(Clone, Serialize, Deserialize)]
struct RawFeatureMapRepr {
    kernel: GaussianKernelSpec,
    n_features: usize,
    seed: u64,
}

impl From<RawFeatureMap> for RawFeatureMapRepr {
    fn from(map: RawFeatureMap) -> Self {
        RawFeatureMapRepr {
            n_features: map.n_features(),
            kernel: map.kernel,
            seed: map.seed,
        }
    }
}

impl TryFrom<RawFeatureMapRepr> for RawFeatureMap {
    type Error = Error;

    fn try_from(repr: RawFeatureMapRepr) -> Result<Self> {
        sample_rff(&repr.kernel, repr.n_features, repr.seed)
    }
}

impl RawFeatureMap {
    pub fn kernel(&self) -> &GaussianKernelSpec {
        &self.kernel
    }

    pub fn n_features(&self) -> usize {
        self.frequencies.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.kernel.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frequencies(&self) -> &Matrix {
        &self.frequencies
    }

    fn scale(&self) -> f64 {
        (2.0 / self.n_features() as f64).sqrt()
    }

    fn fill_row(&self, x: &[f64], out: &mut [f64]) {
        let scale = self.scale();
        for (i, o) in out.iter_mut().enumerate() {
            let mut arg = self.phases[i];
            for (w, v) in self.frequencies.row(i).iter().zip(x) {
                arg += w * v;
            }
            *o = scale * arg.cos();
        }
    }
}

/// Draws a raw feature map: frequencies first (row-major, `N x dim` standard
/// normals scaled by `1/bandwidth`), then `N` phases uniform on `[0, 2 pi)`.
pub fn sample_rff(kernel: &GaussianKernelSpec, n_features: usize, seed: u64) -> Result<RawFeatureMap> {
    GaussianKernelSpec::new(kernel.bandwidth, kernel.dim)?;
    if n_features == 0 {
        return Err(invalid("feature count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inv_bw = 1.0 / kernel.bandwidth;
    let mut freq = Vec::with_capacity(n_features * kernel.dim);
    for _ in 0..n_features * kernel.dim {
        let z: f64 = rng.sample(StandardNormal);
        freq.push(z * inv_bw);
    }
    let phases = (0..n_features).map(|_| rng.gen::<f64>() * TAU).collect();
    Ok(RawFeatureMap {
        kernel: kernel.clone(),
        frequencies: Matrix::from_vec(n_features, kernel.dim, freq),
        phases,
        seed,
    })
}

/// Evaluates the raw map at one state.
pub fn evaluate_raw(map: &RawFeatureMap, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != map.input_dim() {
        return Err(invalid(format!(
            "state has dimension {}, feature map expects {}",
            x.len(),
            map.input_dim()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(invalid("state has non-finite coordinates"));
    }
    let mut out = vec![0.0; map.n_features()];
    map.fill_row(x, &mut out);
    Ok(out)
}

/// Evaluates the raw map at every row of `states`, returning a
/// `states.rows() x n_features` matrix. Rows are independent, so the
/// parallel split over fixed-size row chunks is bit-reproducible.
pub fn evaluate_raw_batch(map: &RawFeatureMap, states: &Matrix) -> Result<Matrix> {
    let d = map.input_dim();
    if states.cols() != d {
        return Err(invalid(format!(
            "states have dimension {}, feature map expects {}",
            states.cols(),
            d
        )));
    }
    if !states.is_finite() {
        return Err(invalid("states contain non-finite coordinates"));
    }
    let nf = map.n_features();
    let mut out = Matrix::zeros(states.rows(), nf);
    out.data_mut()
        .par_chunks_mut(ROW_CHUNK * nf)
        .zip(states.data().par_chunks(ROW_CHUNK * d))
        .for_each(|(block, states_block)| {
            for (row, x) in block.chunks_mut(nf).zip(states_block.chunks(d)) {
                map.fill_row(x, row);
            }
        });
    Ok(out)
}

/// Which measure the orthogonalizing Monte-Carlo sample was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureDescriptor {
    /// States taken from a simulated trajectory (empirical stationary law).
    EmpiricalTrajectory { sample_count: usize },
    /// Uniform draws from an axis-aligned box.
    UniformBox {
        lower: Vec<f64>,
        upper: Vec<f64>,
        sample_count: usize,
    },
}

impl MeasureDescriptor {
    fn sample_count(&self) -> usize {
        match self {
            MeasureDescriptor::EmpiricalTrajectory { sample_count } => *sample_count,
            MeasureDescriptor::UniformBox { sample_count, .. } => *sample_count,
        }
    }
}

/// Orthogonalized feature map: `Phi(x) = transform . h(x)` with
/// `E[Phi Phi^T] = diag(norms)` under the sample measure used to build it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoFeatureMap {
    raw: RawFeatureMap,
    /// `J x N`; row `i` is the i-th kept eigenvector of the sample Gram.
    transform: Matrix,
    /// Kept Gram eigenvalues, positive and descending.
    norms: Vec<f64>,
    measure: MeasureDescriptor,
    quadrature_seed: u64,
}

impl OrthoFeatureMap {
    pub fn raw(&self) -> &RawFeatureMap {
        &self.raw
    }

    pub fn kernel(&self) -> &GaussianKernelSpec {
        self.raw.kernel()
    }

    /// Number of kept orthogonal features `J`.
    pub fn n_features(&self) -> usize {
        self.transform.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.raw.input_dim()
    }

    pub fn transform(&self) -> &Matrix {
        &self.transform
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn measure(&self) -> &MeasureDescriptor {
        &self.measure
    }

    pub fn quadrature_seed(&self) -> u64 {
        self.quadrature_seed
    }

    /// Fingerprint of everything that determines this map's feature space.
    /// Estimates record it so that mixing incompatible maps is caught early.
    pub fn id(&self) -> u64 {
        let mut h = Fnv::new();
        h.push(self.raw.kernel.bandwidth.to_bits());
        h.push(self.raw.kernel.dim as u64);
        h.push(self.raw.n_features() as u64);
        h.push(self.raw.seed);
        h.push(self.transform.rows() as u64);
        h.push(self.quadrature_seed);
        match &self.measure {
            MeasureDescriptor::EmpiricalTrajectory { sample_count } => {
                h.push(1);
                h.push(*sample_count as u64);
            }
            MeasureDescriptor::UniformBox { lower, upper, sample_count } => {
                h.push(2);
                h.push(*sample_count as u64);
                for v in lower.iter().chain(upper) {
                    h.push(v.to_bits());
                }
            }
        }
        for v in &self.norms {
            h.push(v.to_bits());
        }
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn push(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// Orthogonalizes `map` against the measure represented by
/// `quadrature_samples` (one state per row). `measure` must describe those
/// samples; `quadrature_seed` records how they were drawn.
pub fn orthogonalize(
    map: &RawFeatureMap,
    quadrature_samples: &Matrix,
    drop_tol: f64,
    measure: MeasureDescriptor,
    quadrature_seed: u64,
) -> Result<OrthoFeatureMap> {
    if quadrature_samples.rows() == 0 {
        return Err(invalid("orthogonalization needs at least one sample"));
    }
    if measure.sample_count() != quadrature_samples.rows() {
        return Err(invalid(format!(
            "measure descriptor claims {} samples but {} were provided",
            measure.sample_count(),
            quadrature_samples.rows()
        )));
    }
    let gram = monte_carlo_gram(map, quadrature_samples)?;
    orthogonalize_gram(map, &gram, drop_tol, measure, quadrature_seed)
}

/// Orthogonalization step starting from an explicit Gram matrix
/// `G ~ E[h(x) h(x)^T]`. Split out so the eigenvalue bookkeeping can be
/// exercised against synthetic Grams.
pub fn orthogonalize_gram(
    map: &RawFeatureMap,
    gram: &Matrix,
    drop_tol: f64,
    measure: MeasureDescriptor,
    quadrature_seed: u64,
) -> Result<OrthoFeatureMap> {
    let nf = map.n_features();
    if gram.rows() != nf || gram.cols() != nf {
        return Err(invalid("Gram matrix shape does not match the feature count"));
    }
    if !(drop_tol.is_finite() && drop_tol >= 0.0) {
        return Err(invalid("drop tolerance must be finite and non-negative"));
    }
    let (values, vectors) = sym_eig(gram)?;
    let lead = values[0];
    // Keep strictly positive eigenvalues above the relative threshold; a
    // non-positive leading eigenvalue means every direction is degenerate.
    let threshold = if lead > 0.0 { drop_tol * lead } else { f64::INFINITY };
    let kept: Vec<usize> = (0..nf)
        .filter(|&i| values[i] > 0.0 && values[i] > threshold)
        .collect();
    if kept.is_empty() {
        return Err(Error::DegenerateFeatures);
    }
    let transform = Matrix::from_fn(kept.len(), nf, |i, j| vectors[(j, kept[i])]);
    let norms = kept.iter().map(|&i| values[i]).collect();
    Ok(OrthoFeatureMap {
        raw: map.clone(),
        transform,
        norms,
        measure,
        quadrature_seed,
    })
}

/// Builds an orthogonalized map from explicit parts, for reference
/// constructions (e.g. exact indicator bases over a finite state set)
/// where the transform does not come from a Monte-Carlo Gram. The norms
/// must be positive but need not be sorted.
pub fn assemble_ortho_map(
    raw: RawFeatureMap,
    transform: Matrix,
    norms: Vec<f64>,
    measure: MeasureDescriptor,
    quadrature_seed: u64,
) -> Result<OrthoFeatureMap> {
    if transform.cols() != raw.n_features() {
        return Err(invalid("transform width must match the raw feature count"));
    }
    if transform.rows() == 0 || transform.rows() != norms.len() {
        return Err(invalid("norms length must match the transform height"));
    }
    if !transform.is_finite() {
        return Err(invalid("transform has non-finite entries"));
    }
    if !norms.iter().all(|v| v.is_finite() && *v > 0.0) {
        return Err(invalid("feature norms must be finite and positive"));
    }
    Ok(OrthoFeatureMap { raw, transform, norms, measure, quadrature_seed })
}

/// Monte-Carlo Gram `G = mean_k h(x_k) h(x_k)^T`, accumulated over
/// fixed-size row chunks in index order. Within a chunk each output entry
/// is a sequential dot product, so the result is independent of the number
/// of worker threads.
fn monte_carlo_gram(map: &RawFeatureMap, samples: &Matrix) -> Result<Matrix> {
    let nf = map.n_features();
    let d = map.input_dim();
    let n = samples.rows();
    // Output rows per parallel task, sized so a task's working set stays
    // cache-resident while the chunk transpose is streamed once per task.
    const OUT_BLOCK: usize = 16;
    let mut gram = Matrix::zeros(nf, nf);
    let mut start = 0;
    while start < n {
        let stop = (start + ROW_CHUNK).min(n);
        let block = Matrix::from_vec(
            stop - start,
            d,
            samples.data()[start * d..stop * d].to_vec(),
        );
        let ht = evaluate_raw_batch(map, &block)?.transpose();
        let c = ht.cols();
        gram.data_mut()
            .par_chunks_mut(OUT_BLOCK * nf)
            .enumerate()
            .for_each(|(bi, gblock)| {
                let i0 = bi * OUT_BLOCK;
                for j in 0..nf {
                    let hj = ht.row(j);
                    for (ii, grow) in gblock.chunks_mut(nf).enumerate() {
                        let hi = ht.row(i0 + ii);
                        let mut acc = 0.0;
                        for k in 0..c {
                            acc += hi[k] * hj[k];
                        }
                        grow[j] += acc;
                    }
                }
            });
        start = stop;
    }
    Ok(gram.scaled(1.0 / n as f64))
}

/// Evaluates the orthogonalized map at one state.
pub fn evaluate_ortho(map: &OrthoFeatureMap, x: &[f64]) -> Result<Vec<f64>> {
    let raw = evaluate_raw(&map.raw, x)?;
    let j = map.n_features();
    let mut out = vec![0.0; j];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (t, r) in map.transform.row(i).iter().zip(&raw) {
            acc += t * r;
        }
        *o = acc;
    }
    Ok(out)
}

/// Batch form of [`evaluate_ortho`]: returns `states.rows() x J`.
pub fn evaluate_ortho_batch(map: &OrthoFeatureMap, states: &Matrix) -> Result<Matrix> {
    let d = map.input_dim();
    if states.cols() != d {
        return Err(invalid(format!(
            "states have dimension {}, feature map expects {}",
            states.cols(),
            d
        )));
    }
    if !states.is_finite() {
        return Err(invalid("states contain non-finite coordinates"));
    }
    let nf = map.raw.n_features();
    let j = map.n_features();
    let mut out = Matrix::zeros(states.rows(), j);
    out.data_mut()
        .par_chunks_mut(ROW_CHUNK * j)
        .zip(states.data().par_chunks(ROW_CHUNK * d))
        .for_each(|(block, states_block)| {
            let mut raw = vec![0.0; nf];
            for (row, x) in block.chunks_mut(j).zip(states_block.chunks(d)) {
                map.raw.fill_row(x, &mut raw);
                for (i, o) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (t, r) in map.transform.row(i).iter().zip(&raw) {
                        acc += t * r;
                    }
                    *o = acc;
                }
            }
        });
    Ok(out)
}

/// Per-coordinate bounding box of `states`, widened on each side by
/// `pad_fraction` of the coordinate's range. A degenerate coordinate
/// (zero range) is padded by `pad_fraction * max(1, |value|)` instead so
/// the box never collapses.
pub fn padded_bounding_box(states: &Matrix, pad_fraction: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if states.rows() == 0 {
        return Err(invalid("bounding box needs at least one state"));
    }
    if !states.is_finite() {
        return Err(invalid("states contain non-finite coordinates"));
    }
    if !(pad_fraction.is_finite() && pad_fraction >= 0.0) {
        return Err(invalid("pad fraction must be finite and non-negative"));
    }
    let d = states.cols();
    let mut lower = states.row(0).to_vec();
    let mut upper = states.row(0).to_vec();
    for i in 1..states.rows() {
        for (k, v) in states.row(i).iter().enumerate() {
            lower[k] = lower[k].min(*v);
            upper[k] = upper[k].max(*v);
        }
    }
    for k in 0..d {
        let range = upper[k] - lower[k];
        let pad = if range > 0.0 {
            pad_fraction * range
        } else {
            pad_fraction * upper[k].abs().max(1.0)
        };
        lower[k] -= pad;
        upper[k] += pad;
    }
    Ok((lower, upper))
}

/// Uniform draws from the box `[lower, upper]`, one state per row.
/// Coordinates are drawn row-major from a ChaCha8 stream seeded with `seed`.
pub fn uniform_box_samples(lower: &[f64], upper: &[f64], count: usize, seed: u64) -> Result<Matrix> {
    if lower.len() != upper.len() || lower.is_empty() {
        return Err(invalid("box bounds must be non-empty and of equal length"));
    }
    if count == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    for (lo, hi) in lower.iter().zip(upper) {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(invalid("box bounds must be finite with lower <= upper"));
        }
    }
    let d = lower.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(count * d);
    for _ in 0..count {
        for k in 0..d {
            data.push(lower[k] + (upper[k] - lower[k]) * rng.gen::<f64>());
        }
    }
    Ok(Matrix::from_vec(count, d, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_kernel() -> GaussianKernelSpec {
        GaussianKernelSpec::new(0.5, 1).unwrap()
    }

    fn empirical(count: usize) -> MeasureDescriptor {
        MeasureDescriptor::EmpiricalTrajectory { sample_count: count }
    }

    #[test]
    fn kernel_spec_rejects_bad_parameters() {
        assert!(GaussianKernelSpec::new(0.0, 1).is_err());
        assert!(GaussianKernelSpec::new(f64::NAN, 1).is_err());
        assert!(GaussianKernelSpec::new(-1.0, 1).is_err());
        assert!(GaussianKernelSpec::new(1.0, 0).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let k = toy_kernel();
        let a = sample_rff(&k, 32, 7).unwrap();
        let b = sample_rff(&k, 32, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_rff(&k, 32, 8).unwrap();
        assert_ne!(a.frequencies, c.frequencies);
    }

    #[test]
    fn sampling_rejects_zero_features() {
        assert!(sample_rff(&toy_kernel(), 0, 1).is_err());
    }

    #[test]
    fn raw_self_product_is_bounded_by_two() {
        let k = GaussianKernelSpec::new(0.7, 3).unwrap();
        let map = sample_rff(&k, 64, 11).unwrap();
        for t in 0..50 {
            let x = vec![t as f64 * 0.13 - 3.0, (t as f64).sin(), 0.5];
            let h = evaluate_raw(&map, &x).unwrap();
            let dot: f64 = h.iter().map(|v| v * v).sum();
            assert!((0.0..=2.0).contains(&dot), "h.h = {dot}");
        }
    }

    #[test]
    fn single_feature_closed_form() {
        // One feature with w = 0, b = 0 is the constant sqrt(2).
        let map = RawFeatureMap {
            kernel: toy_kernel(),
            frequencies: Matrix::from_vec(1, 1, vec![0.0]),
            phases: vec![0.0],
            seed: 0,
        };
        let h = evaluate_raw(&map, &[3.7]).unwrap();
        assert!((h[0] - 2.0_f64.sqrt()).abs() < 1e-15);

        let map = RawFeatureMap {
            kernel: toy_kernel(),
            frequencies: Matrix::from_vec(1, 1, vec![std::f64::consts::PI]),
            phases: vec![0.0],
            seed: 0,
        };
        let h = evaluate_raw(&map, &[1.0]).unwrap();
        assert!((h[0] + 2.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn evaluate_rejects_dimension_mismatch_and_nan() {
        let map = sample_rff(&toy_kernel(), 8, 1).unwrap();
        assert!(evaluate_raw(&map, &[1.0, 2.0]).is_err());
        assert!(evaluate_raw(&map, &[f64::NAN]).is_err());
    }

    #[test]
    fn batch_matches_single_across_chunk_boundary() {
        let map = sample_rff(&toy_kernel(), 5, 3).unwrap();
        let n = ROW_CHUNK + 137;
        let states = Matrix::from_fn(n, 1, |i, _| (i as f64) * 0.01 - 5.0);
        let batch = evaluate_raw_batch(&map, &states).unwrap();
        for i in [0, 1, ROW_CHUNK - 1, ROW_CHUNK, n - 1] {
            let single = evaluate_raw(&map, states.row(i)).unwrap();
            assert_eq!(batch.row(i), single.as_slice());
        }
    }

    #[test]
    fn feature_products_approximate_the_kernel() {
        // 2000 features, bandwidth 1: the median absolute error of h(x).h(y)
        // against the exact kernel over 1000 pairs stays below 0.05.
        let k = GaussianKernelSpec::new(1.0, 1).unwrap();
        let map = sample_rff(&k, 2000, 42).unwrap();
        let pairs = uniform_box_samples(&[-3.0, -3.0], &[3.0, 3.0], 1000, 43).unwrap();
        let mut errs: Vec<f64> = (0..1000)
            .map(|i| {
                let (x, y) = (pairs[(i, 0)], pairs[(i, 1)]);
                let hx = evaluate_raw(&map, &[x]).unwrap();
                let hy = evaluate_raw(&map, &[y]).unwrap();
                let approx: f64 = hx.iter().zip(&hy).map(|(a, b)| a * b).sum();
                (approx - k.evaluate(&[x], &[y])).abs()
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        let median = errs[500];
        assert!(median <= 0.05, "median kernel error {median}");
    }

    #[test]
    fn identity_gram_keeps_everything_unchanged() {
        let map = sample_rff(&toy_kernel(), 3, 5).unwrap();
        let ortho =
            orthogonalize_gram(&map, &Matrix::identity(3), 1e-8, empirical(10), 0).unwrap();
        assert_eq!(ortho.transform(), &Matrix::identity(3));
        assert_eq!(ortho.norms(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_gram_sorts_descending_as_a_signed_permutation() {
        let map = sample_rff(&toy_kernel(), 2, 5).unwrap();
        let gram = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 4.0]);
        let ortho = orthogonalize_gram(&map, &gram, 0.0, empirical(10), 0).unwrap();
        assert_eq!(ortho.norms(), &[4.0, 1.0]);
        assert_eq!(ortho.transform(), &Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn drop_tolerance_removes_small_directions() {
        let map = sample_rff(&toy_kernel(), 3, 5).unwrap();
        let gram = Matrix::from_fn(3, 3, |i, j| {
            if i == j { [1.0, 1e-3, 1e-12][i] } else { 0.0 }
        });
        let ortho = orthogonalize_gram(&map, &gram, 1e-8, empirical(10), 0).unwrap();
        assert_eq!(ortho.n_features(), 2);
        assert_eq!(ortho.norms(), &[1.0, 1e-3]);
    }

    #[test]
    fn all_directions_below_tolerance_is_degenerate() {
        let map = sample_rff(&toy_kernel(), 3, 5).unwrap();
        let err = orthogonalize_gram(&map, &Matrix::zeros(3, 3), 1e-8, empirical(10), 0)
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateFeatures));
    }

    #[test]
    fn descriptor_sample_count_must_match() {
        let map = sample_rff(&toy_kernel(), 4, 5).unwrap();
        let samples = uniform_box_samples(&[-1.0], &[1.0], 50, 9).unwrap();
        assert!(orthogonalize(&map, &samples, 1e-8, empirical(49), 0).is_err());
        assert!(orthogonalize(&map, &samples, 1e-8, empirical(50), 0).is_ok());
    }

    #[test]
    fn ortho_features_are_uncorrelated_on_the_build_sample() {
        // The transform diagonalizes the sample Gram exactly, so re-measuring
        // the Gram of the orthogonalized features on the same sample must
        // give diag(norms) to rounding error.
        let k = toy_kernel();
        let map = sample_rff(&k, 40, 13).unwrap();
        let samples = uniform_box_samples(&[-1.5], &[1.5], 4000, 14).unwrap();
        let n = samples.rows();
        let ortho = orthogonalize(
            &map,
            &samples,
            1e-10,
            MeasureDescriptor::UniformBox {
                lower: vec![-1.5],
                upper: vec![1.5],
                sample_count: n,
            },
            14,
        )
        .unwrap();
        let phi = evaluate_ortho_batch(&ortho, &samples).unwrap();
        let j = ortho.n_features();
        let mut gram = Matrix::zeros(j, j);
        for t in 0..n {
            let row = phi.row(t);
            for a in 0..j {
                for b in 0..j {
                    gram[(a, b)] += row[a] * row[b];
                }
            }
        }
        let gram = gram.scaled(1.0 / n as f64);
        for a in 0..j {
            for b in 0..j {
                let want = if a == b { ortho.norms()[a] } else { 0.0 };
                assert!(
                    (gram[(a, b)] - want).abs() < 1e-10,
                    "gram[{a},{b}] = {} want {want}",
                    gram[(a, b)]
                );
            }
        }
    }

    #[test]
    fn held_out_features_stay_nearly_orthogonal() {
        // Fresh samples from the same measure: off-diagonal correlations of
        // the held-out Gram stay within a tenth of the geometric mean of the
        // corresponding norms.
        let k = GaussianKernelSpec::new(0.5, 1).unwrap();
        let map = sample_rff(&k, 300, 21).unwrap();
        let build = uniform_box_samples(&[-2.0], &[2.0], 10_000, 22).unwrap();
        let ortho = orthogonalize(
            &map,
            &build,
            1e-5,
            MeasureDescriptor::UniformBox {
                lower: vec![-2.0],
                upper: vec![2.0],
                sample_count: build.rows(),
            },
            22,
        )
        .unwrap();
        let held = uniform_box_samples(&[-2.0], &[2.0], 10_000, 23).unwrap();
        let phi = evaluate_ortho_batch(&ortho, &held).unwrap();
        let j = ortho.n_features();
        let n = held.rows();
        let mut gram = Matrix::zeros(j, j);
        for t in 0..n {
            let row = phi.row(t);
            for a in 0..j {
                for b in a..j {
                    gram[(a, b)] += row[a] * row[b];
                }
            }
        }
        let gram = gram.scaled(1.0 / n as f64);
        let mut worst = 0.0_f64;
        for a in 0..j {
            for b in a + 1..j {
                let corr = gram[(a, b)].abs() / (ortho.norms()[a] * ortho.norms()[b]).sqrt();
                worst = worst.max(corr);
            }
        }
        assert!(worst <= 0.1, "worst held-out correlation {worst}");
    }

    #[test]
    fn ortho_evaluation_applies_the_transform() {
        let map = sample_rff(&toy_kernel(), 4, 17).unwrap();
        let transform = Matrix::from_vec(1, 4, vec![0.5, -1.0, 2.0, 0.0]);
        let ortho = OrthoFeatureMap {
            raw: map.clone(),
            transform,
            norms: vec![1.0],
            measure: empirical(1),
            quadrature_seed: 0,
        };
        let h = evaluate_raw(&map, &[0.3]).unwrap();
        let want = 0.5 * h[0] - h[1] + 2.0 * h[2];
        let got = evaluate_ortho(&ortho, &[0.3]).unwrap();
        assert!((got[0] - want).abs() < 1e-15);

        let states = Matrix::from_fn(ROW_CHUNK + 9, 1, |i, _| i as f64 * 0.003);
        let batch = evaluate_ortho_batch(&ortho, &states).unwrap();
        for i in [0, ROW_CHUNK - 1, ROW_CHUNK, ROW_CHUNK + 8] {
            let single = evaluate_ortho(&ortho, states.row(i)).unwrap();
            assert_eq!(batch.row(i), single.as_slice());
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let k = GaussianKernelSpec::new(0.31, 2).unwrap();
        let map = sample_rff(&k, 24, 99).unwrap();
        let samples = uniform_box_samples(&[-1.0, -1.0], &[1.0, 2.0], 600, 100).unwrap();
        let ortho = orthogonalize(
            &map,
            &samples,
            1e-6,
            MeasureDescriptor::UniformBox {
                lower: vec![-1.0, -1.0],
                upper: vec![1.0, 2.0],
                sample_count: 600,
            },
            100,
        )
        .unwrap();
        let json = serde_json::to_string(&ortho).unwrap();
        let back: OrthoFeatureMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back.raw().seed(), ortho.raw().seed());
        let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.transform()), bits(ortho.transform()));
        assert_eq!(bits(back.raw().frequencies()), bits(ortho.raw().frequencies()));
        assert_eq!(
            back.norms().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            ortho.norms().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back.measure(), ortho.measure());
        assert_eq!(back.id(), ortho.id());
        let probe = [0.37, -0.81];
        assert_eq!(
            evaluate_ortho(&back, &probe).unwrap(),
            evaluate_ortho(&ortho, &probe).unwrap()
        );
    }

    #[test]
    fn bounding_box_pads_by_fraction_of_range() {
        let states = Matrix::from_vec(2, 1, vec![0.0, 1.0]);
        let (lo, hi) = padded_bounding_box(&states, 0.1).unwrap();
        assert!((lo[0] + 0.1).abs() < 1e-15);
        assert!((hi[0] - 1.1).abs() < 1e-15);

        // Degenerate coordinate still produces a non-empty box.
        let flat = Matrix::from_vec(3, 1, vec![2.0, 2.0, 2.0]);
        let (lo, hi) = padded_bounding_box(&flat, 0.1).unwrap();
        assert!(lo[0] < 2.0 && hi[0] > 2.0);
    }

    #[test]
    fn box_samples_respect_bounds_and_seed() {
        let a = uniform_box_samples(&[-1.0, 0.0], &[1.0, 3.0], 500, 5).unwrap();
        let b = uniform_box_samples(&[-1.0, 0.0], &[1.0, 3.0], 500, 5).unwrap();
        assert_eq!(a, b);
        for i in 0..a.rows() {
            assert!((-1.0..=1.0).contains(&a[(i, 0)]));
            assert!((0.0..=3.0).contains(&a[(i, 1)]));
        }
        assert!(uniform_box_samples(&[1.0], &[0.0], 10, 5).is_err());
    }
}
