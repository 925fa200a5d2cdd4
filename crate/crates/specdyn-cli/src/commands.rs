//! The four pipeline commands. Each validates its config sections, does
//! the work through the core crate, writes its artifacts under the output
//! directory, emits a resolved-config copy, and returns a report that is
//! also serialized to JSON.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use specdyn_core::clustering::{
    assign, metastability_score, misclassification, weighted_kmeans, WeightedPointSet,
};
use specdyn_core::embedding::{embed_batch, probe_grid_1d, Embedder};
use specdyn_core::estimator::{accumulate, embedding_error, reshape, suggest_rank};
use specdyn_core::features::OrthoFeatureMap;
use specdyn_core::numerics::Matrix;
use specdyn_core::oracle::{euler_stride_kernel, quadrature_projection, QuadratureGrid};
use specdyn_core::simulator::{simulate, Trajectory};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{
    basin_boundaries, basin_labels, build_maps, check_rank, fmt_f64, log_log_slope, median,
    trajectory_from_states,
};
use crate::trajfile;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::io(format!("serialize {}: {e}", path.display())))?;
    fs::write(path, text)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::io(format!("cannot parse {}: {e}", path.display())))
}

fn emit_resolved_config(config: &RunConfig, out_dir: &Path) -> Result<()> {
    write_json(&out_dir.join("resolved_config.json"), config)
}

fn trajectory_path(config: &RunConfig, out_dir: &Path) -> PathBuf {
    out_dir.join(&config.paths.trajectory)
}

fn load_trajectory(config: &RunConfig, out_dir: &Path) -> Result<Trajectory> {
    let sim = config.simulation()?;
    let states = trajfile::read_states(&trajectory_path(config, out_dir))?;
    if states.cols() != sim.potential.dim() {
        return Err(CliError::config(
            "trajectory dimension does not match the configured potential",
        ));
    }
    Ok(trajectory_from_states(states, sim))
}

#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub t: usize,
    pub d: usize,
    pub trajectory_path: String,
    /// Fraction of samples per gradient-descent basin (1-d potentials).
    pub basin_occupancy: Option<Vec<f64>>,
}

pub fn cmd_simulate(config: &RunConfig, out_dir: &Path) -> Result<SimulateReport> {
    let sim = config.simulation()?;
    let traj = simulate(
        &sim.potential,
        &sim.x0,
        sim.inner_dt,
        sim.n_samples,
        sim.stride,
        sim.burn_in,
        sim.seed,
    )?;
    let path = trajectory_path(config, out_dir);
    trajfile::write_states(&path, &traj.states)?;
    emit_resolved_config(config, out_dir)?;

    let basin_occupancy = if traj.dim() == 1 {
        let data = traj.states.data();
        let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.05 * (hi - lo).max(1.0);
        let boundaries = basin_boundaries(&sim.potential, lo - pad, hi + pad)?;
        let labels = basin_labels(&traj.states, &boundaries);
        let mut counts = vec![0usize; boundaries.len() + 1];
        for &l in &labels {
            counts[l] += 1;
        }
        Some(counts.iter().map(|&c| c as f64 / traj.len() as f64).collect())
    } else {
        None
    };

    let report = SimulateReport {
        t: traj.len(),
        d: traj.dim(),
        trajectory_path: path.display().to_string(),
        basin_occupancy,
    };
    println!("wrote {}: T={} d={}", report.trajectory_path, report.t, report.d);
    if let Some(occ) = &report.basin_occupancy {
        let parts: Vec<String> = occ.iter().map(|f| format!("{f:.4}")).collect();
        println!("basin occupancy: [{}]", parts.join(", "));
    }
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub j_left: usize,
    pub j_right: usize,
    pub rank: usize,
    pub pair_count: u64,
    /// Whitened singular values, descending.
    pub sigma: Vec<f64>,
    pub suggested_rank: usize,
}

pub fn cmd_fit(config: &RunConfig, out_dir: &Path) -> Result<FitReport> {
    let features = config.features()?;
    let rank = config.estimation()?.rank;
    let traj = load_trajectory(config, out_dir)?;

    let (left, right) = build_maps(&traj, features)?;
    check_rank(rank, &left, &right)?;
    let est = accumulate(&traj, &left, &right)?;
    let model = reshape(&est, rank)?;
    let embedder = specdyn_core::embedding::fit(&est, &left, &right, rank)?;
    let suggested = suggest_rank(&est)?;

    write_json(&out_dir.join("left_map.json"), &left)?;
    write_json(&out_dir.join("right_map.json"), &right)?;
    write_json(&out_dir.join("projection.json"), &est)?;
    write_json(&out_dir.join("model.json"), &model)?;
    write_json(&out_dir.join("embedder.json"), &embedder)?;
    emit_resolved_config(config, out_dir)?;

    if traj.dim() == 1 {
        let probes = probe_grid_1d(&traj.states)?;
        let probe_states = Matrix::from_fn(probes.len(), 1, |i, _| probes[i]);
        let psi = embed_batch(&embedder, &left, &probe_states)?;
        write_embedding_csv(&out_dir.join("embedding.csv"), &probe_states, &psi)?;
    }

    let report = FitReport {
        j_left: left.n_features(),
        j_right: right.n_features(),
        rank,
        pair_count: est.pair_count(),
        sigma: embedder.sigma().to_vec(),
        suggested_rank: suggested,
    };
    write_json(&out_dir.join("fit_report.json"), &report)?;
    println!(
        "features kept: J={} (left), J={} (right); pairs: {}",
        report.j_left, report.j_right, report.pair_count
    );
    for (k, s) in report.sigma.iter().enumerate() {
        println!("sigma[{}] = {}", k + 1, fmt_f64(*s));
    }
    println!("largest-gap rank suggestion: {suggested} (rank in use: {rank})");
    Ok(report)
}

fn write_embedding_csv(path: &Path, states: &Matrix, psi: &Matrix) -> Result<()> {
    let mut text = String::new();
    let mut header: Vec<String> = (1..=states.cols()).map(|j| format!("x{j}")).collect();
    header.extend((1..=psi.cols()).map(|k| format!("psi{k}")));
    text.push_str(&header.join(","));
    text.push('\n');
    for i in 0..states.rows() {
        let mut fields: Vec<String> = states.row(i).iter().map(|&v| fmt_f64(v)).collect();
        fields.extend(psi.row(i).iter().map(|&v| fmt_f64(v)));
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
pub struct MisclassificationReport {
    pub rate: f64,
    /// Entry j: the predicted label matched to reference basin j.
    pub permutation: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct ClusterEntry {
    pub m: usize,
    pub seed: u64,
    pub objective: f64,
    pub iterations_run: usize,
    pub centroids: Matrix,
    pub metastability_score: f64,
    pub visited_clusters: usize,
    pub all_visited: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misclassification: Option<MisclassificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misclassification_note: Option<String>,
    pub labels_path: String,
}

#[derive(Debug, Serialize)]
pub struct ClusterReport {
    pub entries: Vec<ClusterEntry>,
}

pub fn cmd_cluster(config: &RunConfig, out_dir: &Path) -> Result<ClusterReport> {
    let clustering = config.clustering()?;
    let traj = load_trajectory(config, out_dir)?;
    let left: OrthoFeatureMap = read_json(&out_dir.join("left_map.json"))?;
    let embedder: Embedder = read_json(&out_dir.join("embedder.json"))?;

    let psi = embed_batch(&embedder, &left, &traj.states)?;
    let weights = vec![1.0; psi.rows()];
    let pts = WeightedPointSet::new(psi.clone(), weights.clone())?;

    let reference = if clustering.compare_to_basins {
        if traj.dim() != 1 {
            return Err(CliError::config("compare_to_basins requires a 1-d potential"));
        }
        let sim = config.simulation()?;
        let data = traj.states.data();
        let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.05 * (hi - lo).max(1.0);
        let boundaries = basin_boundaries(&sim.potential, lo - pad, hi + pad)?;
        Some(basin_labels(&traj.states, &boundaries))
    } else {
        None
    };

    let mut entries = Vec::new();
    for &m in &clustering.m_values {
        let seed = clustering.seed.wrapping_add(m as u64);
        let model = weighted_kmeans(&pts, m, seed, clustering.max_iter, clustering.restarts)?;
        let labels: Vec<usize> = (0..psi.rows())
            .map(|i| assign(&model, psi.row(i)))
            .collect::<specdyn_core::Result<_>>()?;
        let score = metastability_score(&labels, m)?;

        let (mis, note) = match &reference {
            Some(reference) => {
                let n_classes = reference.iter().max().unwrap() + 1;
                if m > n_classes {
                    (
                        None,
                        Some(format!(
                            "skipped: {m} predicted clusters exceed {n_classes} reference basins"
                        )),
                    )
                } else if (0..n_classes).any(|c| !reference.contains(&c)) {
                    (None, Some("skipped: some reference basin has no samples".to_string()))
                } else {
                    let cmp = misclassification(&labels, reference, &weights)?;
                    (
                        Some(MisclassificationReport {
                            rate: cmp.rate,
                            permutation: cmp.permutation,
                        }),
                        None,
                    )
                }
            }
            None => (None, None),
        };

        let labels_path = out_dir.join(format!("labels_m{m}.csv"));
        write_labels_csv(&labels_path, &traj.states, &labels)?;

        let entry = ClusterEntry {
            m,
            seed,
            objective: model.objective(),
            iterations_run: model.iterations_run(),
            centroids: model.centroids().clone(),
            metastability_score: score.score,
            visited_clusters: score.visited_clusters,
            all_visited: score.all_visited(),
            misclassification: mis,
            misclassification_note: note,
            labels_path: labels_path.display().to_string(),
        };
        match (&entry.misclassification, &entry.misclassification_note) {
            (Some(mis), _) => println!(
                "m={m}: objective={:.6e} score={:.4} M={:.4}",
                entry.objective, entry.metastability_score, mis.rate
            ),
            (None, Some(note)) => println!(
                "m={m}: objective={:.6e} score={:.4} ({note})",
                entry.objective, entry.metastability_score
            ),
            (None, None) => println!(
                "m={m}: objective={:.6e} score={:.4}",
                entry.objective, entry.metastability_score
            ),
        }
        entries.push(entry);
    }

    let report = ClusterReport { entries };
    write_json(&out_dir.join("cluster_report.json"), &report)?;
    emit_resolved_config(config, out_dir)?;
    Ok(report)
}

fn write_labels_csv(path: &Path, states: &Matrix, labels: &[usize]) -> Result<()> {
    let mut text = String::new();
    let mut header: Vec<String> = (1..=states.cols()).map(|j| format!("x{j}")).collect();
    header.push("label".to_string());
    text.push_str(&header.join(","));
    text.push('\n');
    for (i, label) in labels.iter().enumerate() {
        let mut fields: Vec<String> = states.row(i).iter().map(|&v| fmt_f64(v)).collect();
        fields.push(label.to_string());
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkRow {
    pub n: usize,
    pub seed: u64,
    pub error_plain: f64,
    pub error_reshaped: f64,
}

#[derive(Debug, Serialize)]
pub struct BenchmarkPerN {
    pub n: usize,
    pub median_plain: f64,
    pub median_reshaped: f64,
}

#[derive(Debug, Serialize)]
pub struct BenchmarkSummary {
    pub per_n: Vec<BenchmarkPerN>,
    /// Log-log least-squares slope of the median reshaped error in n.
    pub slope_reshaped: f64,
    /// Largest half-grid refinement estimate across runs: a proxy for the
    /// quadrature error of the reference projection.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_refinement_error: Option<f64>,
}

/// Simulates, fits, and scores every (n, seed) combination against the
/// quadrature reference. Runs are independent and evaluated in parallel;
/// row order follows the config lists.
pub fn benchmark_runs(config: &RunConfig) -> Result<(Vec<BenchmarkRow>, Option<f64>)> {
    let sim = config.simulation()?;
    let features = config.features()?;
    let bench = config.benchmark_section()?;

    let grid = QuadratureGrid::trapezoid_1d(bench.grid_lower, bench.grid_upper, bench.grid_nodes)?;
    let kernel = euler_stride_kernel(&sim.potential, &grid, sim.inner_dt, sim.stride)?;

    let cases: Vec<(usize, u64)> = bench
        .n_values
        .iter()
        .flat_map(|&n| bench.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let results: Vec<(BenchmarkRow, Option<f64>)> = cases
        .par_iter()
        .map(|&(n, seed)| -> Result<(BenchmarkRow, Option<f64>)> {
            let traj = simulate(
                &sim.potential,
                &sim.x0,
                sim.inner_dt,
                n,
                sim.stride,
                sim.burn_in,
                seed,
            )?;
            let (left, right) = build_maps(&traj, features)?;
            check_rank(bench.rank, &left, &right)?;
            let est = accumulate(&traj, &left, &right)?;
            let model = reshape(&est, bench.rank)?;
            let reference = quadrature_projection(&kernel, &grid, &left, &right)?;
            let row = BenchmarkRow {
                n,
                seed,
                error_plain: embedding_error(&est, &reference.matrix)?,
                error_reshaped: embedding_error(&model, &reference.matrix)?,
            };
            Ok((row, reference.refinement_error))
        })
        .collect::<Result<_>>()?;

    let max_refinement = results
        .iter()
        .filter_map(|(_, r)| *r)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    Ok((results.into_iter().map(|(row, _)| row).collect(), max_refinement))
}

pub fn summarize_benchmark(
    rows: &[BenchmarkRow],
    n_values: &[usize],
    max_refinement_error: Option<f64>,
) -> BenchmarkSummary {
    let per_n: Vec<BenchmarkPerN> = n_values
        .iter()
        .map(|&n| {
            let mut plain: Vec<f64> =
                rows.iter().filter(|r| r.n == n).map(|r| r.error_plain).collect();
            let mut reshaped: Vec<f64> =
                rows.iter().filter(|r| r.n == n).map(|r| r.error_reshaped).collect();
            BenchmarkPerN {
                n,
                median_plain: median(&mut plain),
                median_reshaped: median(&mut reshaped),
            }
        })
        .collect();
    let xs: Vec<f64> = per_n.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = per_n.iter().map(|p| p.median_reshaped).collect();
    let slope_reshaped = if xs.len() >= 2 { log_log_slope(&xs, &ys) } else { f64::NAN };
    BenchmarkSummary { per_n, slope_reshaped, max_refinement_error }
}

pub fn cmd_benchmark(config: &RunConfig, out_dir: &Path) -> Result<BenchmarkSummary> {
    let bench = config.benchmark_section()?;
    let (rows, max_refinement) = benchmark_runs(config)?;

    let mut text = String::from("n,error_plain,error_reshaped,seed\n");
    for row in &rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            row.n,
            fmt_f64(row.error_plain),
            fmt_f64(row.error_reshaped),
            row.seed
        ));
    }
    let csv_path = out_dir.join("benchmark.csv");
    fs::write(&csv_path, text)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", csv_path.display())))?;

    let summary = summarize_benchmark(&rows, &bench.n_values, max_refinement);
    write_json(&out_dir.join("benchmark_summary.json"), &summary)?;
    emit_resolved_config(config, out_dir)?;

    for p in &summary.per_n {
        println!(
            "n={}: median plain={} reshaped={}",
            p.n,
            fmt_f64(p.median_plain),
            fmt_f64(p.median_reshaped)
        );
    }
    println!("reshaped log-log slope: {:.4}", summary.slope_reshaped);
    if let Some(r) = summary.max_refinement_error {
        println!("max quadrature refinement estimate: {}", fmt_f64(r));
    }
    Ok(summary)
}
