//! Command execution: dispatches a validated run configuration to the
//! library, writes the declared outputs and assembles the run manifest.
//! Identical configurations (including the seed) produce byte-identical
//! CSV outputs for any worker count.

use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mrcm::analyze::{
    find_critical_intensity, fit_exponent, fit_tail_exponent, magnetization_limits, verify_bounds,
    BoundInputs, CriticalScanConfig, Observable, ScanResult,
};
use mrcm::estimate::{
    estimate_chi, estimate_cluster_tail, estimate_magnetization, estimate_theta, estimate_triangle,
    estimate_two_point, identity_checks, smallcluster::exact_small_cluster_prob, Estimate,
    LatticeSpec, SurvivalRule,
};
use mrcm::kernels::{
    assumption_report, degree_kernel, derived_constants, exact::exact_path_kernel,
    path_kernel_from, KernelMatrix,
};
use mrcm::model::{Mark, MarkDistribution, Model};
use mrcm::rng::substream_seed;
use mrcm::simulate::{explore_batch, ClusterSample, ExplorationConfig, ExploreMode};

use crate::config::{CommandParams, RunConfig, TwoPointParams};
use crate::manifest::{ManifestEntry, RunManifest};

/// Exit status of a completed run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    BoundViolated,
}

pub struct RunOutcome {
    pub status: RunStatus,
    pub manifest: RunManifest,
}

struct Outputs {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Outputs {
    fn new(dir: &Path) -> std::io::Result<Outputs> {
        std::fs::create_dir_all(dir)?;
        Ok(Outputs { dir: dir.to_path_buf(), entries: Vec::new() })
    }

    fn write(&mut self, name: &str, content: &str) -> std::io::Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, content)?;
        self.entries.push(ManifestEntry::new(name, content.as_bytes()));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.write(name, &text)
    }
}

fn resolve_root(model: &Model, raw: f64) -> mrcm::Result<Mark> {
    match model.mark_distribution() {
        MarkDistribution::Finite { .. } => {
            let idx = raw as usize;
            if (idx as f64 - raw).abs() > 0.0 {
                return Err(mrcm::Error::InvalidArgument(format!(
                    "root_mark {raw} must be an atom index for finite mark spaces"
                )));
            }
            model.atom(idx)
        }
        MarkDistribution::UniformInterval { .. } => {
            let mark = Mark::Real(raw);
            model.check_mark(&mark)?;
            Ok(mark)
        }
    }
}

/// Namespaced substream seed for one stage of a command.
fn stage_seed(master: u64, tag: u64) -> u64 {
    substream_seed(master, 0x6d72_636d_0000_0000 | tag)
}

fn samples_csv(
    rows: &mut String,
    samples: &[ClusterSample],
    seed: u64,
    offset: u64,
    lambda: f64,
    root: &Mark,
) {
    for (i, s) in samples.iter().enumerate() {
        let run_id = offset + i as u64;
        let _ = writeln!(
            rows,
            "{},{},{},{},{},{},{},{}",
            run_id,
            substream_seed(seed, run_id),
            lambda,
            root,
            s.size,
            s.capped,
            s.generations,
            s.max_radius
        );
    }
}

const SAMPLES_HEADER: &str = "run_id,seed,lambda,root_mark,size,capped,generations,max_radius\n";

/// Largest run-count x size-cap product a batch command will accept.
const WORK_LIMIT: u128 = 1 << 40;

fn check_work_limit(runs: u64, size_cap: u64) -> mrcm::Result<()> {
    let work = runs as u128 * size_cap as u128;
    if work > WORK_LIMIT {
        return Err(mrcm::Error::ResourceRefusal(format!(
            "runs x size_cap = {work} exceeds the safety limit {WORK_LIMIT}"
        )));
    }
    Ok(())
}

fn kernel_csv(kernel: &KernelMatrix) -> String {
    let mut out = String::from("a,b,value\n");
    for i in 0..kernel.size() {
        for j in 0..kernel.size() {
            let _ = writeln!(out, "{},{},{}", kernel.marks[i], kernel.marks[j], kernel.value(i, j));
        }
    }
    out
}

fn exact_kernel_csv(kernel: &mrcm::kernels::exact::RationalKernel) -> String {
    let floats = kernel.to_f64();
    let mut out = String::from("a,b,value,num,den\n");
    for i in 0..kernel.size() {
        for j in 0..kernel.size() {
            let v = &kernel.values[i][j];
            let _ = writeln!(out, "{i},{j},{},{},{}", floats[i][j], v.numer(), v.denom());
        }
    }
    out
}

fn kernel_json(kernel: &KernelMatrix) -> serde_json::Value {
    let n = kernel.size();
    let values: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| kernel.value(i, j)).collect()).collect();
    serde_json::json!({
        "marks": kernel.marks.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
        "weights": kernel.weights,
        "values": values,
    })
}

fn constants_csv(constants: &mrcm::kernels::ConstantsReport) -> String {
    let mut out = String::from("name,mark,value\n");
    let scalars = [
        ("lambda", constants.lambda),
        ("delta", constants.delta),
        ("cbar", constants.cbar),
        ("k_constant", constants.k_constant),
        ("c_delta", constants.c_delta),
    ];
    for (name, value) in scalars {
        let _ = writeln!(out, "{name},,{value}");
    }
    let vectors: [(&str, &[f64]); 4] = [
        ("i_per_mark", &constants.i_per_mark),
        ("j_per_mark", &constants.j_per_mark),
        ("kappa_per_mark", &constants.kappa_per_mark),
        ("mean_degree_per_mark", &constants.mean_degree_per_mark),
    ];
    for (name, values) in vectors {
        for (mark, value) in values.iter().enumerate() {
            let _ = writeln!(out, "{name},{mark},{value}");
        }
    }
    out
}

fn two_point_csv(table: &mrcm::estimate::TwoPointTable) -> String {
    let m = table.mark_count();
    let d = table.d;
    let mut center = vec![0.0; d];
    let mut out = String::from("mark_a,mark_b,r_bin,tau,stderr\n");
    for i in 0..m {
        for j in 0..m {
            let pair = i * m + j;
            for (b, cells) in table.bins.iter().enumerate() {
                table.spec.center(d, cells[0] as usize, &mut center);
                let r: f64 = center.iter().map(|x| x * x).sum::<f64>().sqrt();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    table.marks[i].to_mark(),
                    table.marks[j].to_mark(),
                    r,
                    table.bin_tau[pair][b],
                    table.bin_stderr[pair][b]
                );
            }
        }
    }
    out
}

fn two_point_meta(table: &mrcm::estimate::TwoPointTable) -> serde_json::Value {
    serde_json::json!({
        "model_fp": table.model_fp,
        "lambda": table.lambda,
        "d": table.d,
        "h": table.spec.h,
        "half_cells": table.spec.half_cells,
        "bins": table.bins.len(),
        "cap_flag": table.cap_flag,
        "boundary_flag": table.boundary_flag,
    })
}

/// Runs one validated configuration inside a worker pool of the given
/// size (0 = library default) and writes outputs plus the manifest under
/// the configured output directory.
pub fn run_command(config: &RunConfig, workers: usize) -> mrcm::Result<RunOutcome> {
    let started = Instant::now();
    let run = || run_dispatch(config);
    let (status, mut outputs) = if workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| mrcm::Error::InvalidArgument(format!("worker pool: {e}")))?;
        pool.install(run)?
    } else {
        run()?
    };

    let manifest = RunManifest::new(
        &config.config_sha256,
        started.elapsed().as_secs_f64(),
        config.command.to_string(),
        std::mem::take(&mut outputs.entries),
    );
    let manifest_text = serde_json::to_string_pretty(&manifest).expect("serializable");
    std::fs::write(outputs.dir.join("manifest.json"), manifest_text + "\n")
        .map_err(io_err)?;
    Ok(RunOutcome { status, manifest })
}

fn io_err(e: std::io::Error) -> mrcm::Error {
    mrcm::Error::InvalidArgument(format!("i/o failure: {e}"))
}

fn run_dispatch(config: &RunConfig) -> mrcm::Result<(RunStatus, Outputs)> {
    let model = config.model.clone().build()?;
    let mut outputs = Outputs::new(&config.out_dir).map_err(io_err)?;
    let mut echoed = serde_json::to_value(config).expect("serializable");
    if let Some(obj) = echoed.as_object_mut() {
        obj.insert("artifact_version".into(), env!("CARGO_PKG_VERSION").into());
    }
    outputs.write_json("resolved_config.json", &echoed).map_err(io_err)?;

    let status = match &config.params {
        CommandParams::Kernels(p) => cmd_kernels(config, &model, p, &mut outputs)?,
        CommandParams::Simulate(p) => cmd_simulate(config, &model, p, &mut outputs)?,
        CommandParams::Scan(p) => cmd_scan(config, &model, p, &mut outputs)?,
        CommandParams::Fit(p) => cmd_fit(config, p, &mut outputs)?,
        CommandParams::Validate(p) => cmd_validate(config, &model, p, &mut outputs)?,
        CommandParams::Report(p) => cmd_report(config, &model, p, &mut outputs)?,
    };
    Ok((status, outputs))
}

fn cmd_kernels(
    config: &RunConfig,
    model: &Model,
    p: &crate::config::KernelsParams,
    outputs: &mut Outputs,
) -> mrcm::Result<RunStatus> {
    let degree = degree_kernel(model, p.resolution);
    outputs.write("degree.csv", &kernel_csv(&degree)).map_err(io_err)?;
    let mut kernels_json = serde_json::Map::new();
    kernels_json.insert("degree".into(), kernel_json(&degree));
    let mut paths_json = serde_json::Map::new();
    for &k in &p.k_list {
        if k < 1 {
            return Err(mrcm::Error::InvalidArgument("k_list entries must be >= 1".into()));
        }
        let pk = path_kernel_from(&degree, k);
        outputs
            .write(&format!("path_{k}.csv"), &kernel_csv(&pk))
            .map_err(io_err)?;
        paths_json.insert(k.to_string(), kernel_json(&pk));
        if let Some(exact) = exact_path_kernel(model, k) {
            outputs
                .write(&format!("path_{k}_exact.csv"), &exact_kernel_csv(&exact))
                .map_err(io_err)?;
        }
    }
    kernels_json.insert("paths".into(), serde_json::Value::Object(paths_json));
    outputs
        .write_json("kernels.json", &serde_json::Value::Object(kernels_json))
        .map_err(io_err)?;
    let constants = derived_constants(model, p.lambda, p.delta, p.k_max, p.resolution)?;
    outputs.write_json("constants.json", &constants).map_err(io_err)?;
    outputs.write("constants.csv", &constants_csv(&constants)).map_err(io_err)?;
    let verdict = assumption_report(model, p.lambda, None, p.k_max, p.resolution)?;
    outputs.write_json("assumptions.json", &verdict).map_err(io_err)?;
    let _ = config;
    Ok(RunStatus::Ok)
}

fn cmd_simulate(
    config: &RunConfig,
    model: &Model,
    p: &crate::config::SimulateParams,
    outputs: &mut Outputs,
) -> mrcm::Result<RunStatus> {
    let root = resolve_root(model, p.root_mark)?;
    check_work_limit(p.runs, p.size_cap)?;
    let cfg = ExplorationConfig {
        size_cap: p.size_cap,
        generation_cap: p.generation_cap,
        radius_cap: p.radius_cap,
    };
    let seed = stage_seed(config.seed, 1);
    let samples = explore_batch(model, p.lambda, root, &cfg, p.mode, seed, 0, p.runs)?;
    let mut csv = String::from(SAMPLES_HEADER);
    samples_csv(&mut csv, &samples, seed, 0, p.lambda, &root);
    outputs.write("samples.csv", &csv).map_err(io_err)?;
    let chi = estimate_chi(&samples)?;
    let theta = estimate_theta(&samples, SurvivalRule::SizeCapHit)?;
    outputs
        .write_json("summary.json", &serde_json::json!({ "chi": chi, "theta": theta }))
        .map_err(io_err)?;
    Ok(RunStatus::Ok)
}

fn cmd_scan(
    config: &RunConfig,
    model: &Model,
    p: &crate::config::ScanParams,
    outputs: &mut Outputs,
) -> mrcm::Result<RunStatus> {
    let root = resolve_root(model, p.root_mark)?;
    check_work_limit(
        p.runs_per_point.saturating_mul(p.lambda_grid.len() as u64),
        p.size_cap,
    )?;
    let cfg = ExplorationConfig {
        size_cap: p.size_cap,
        generation_cap: p.generation_cap,
        radius_cap: p.radius_cap,
    };
    let seed = stage_seed(config.seed, 2);
    let mut csv = String::from(SAMPLES_HEADER);
    let mut chi = Vec::new();
    let mut theta = Vec::new();
    let mut mag = Vec::new();
    for (k, &lambda) in p.lambda_grid.iter().enumerate() {
        let offset = k as u64 * p.runs_per_point;
        let samples = explore_batch(model, lambda, root, &cfg, p.mode, seed, offset, p.runs_per_point)?;
        samples_csv(&mut csv, &samples, seed, offset, lambda, &root);
        chi.push(estimate_chi(&samples)?);
        theta.push(estimate_theta(&samples, SurvivalRule::SizeCapHit)?);
        mag.push(estimate_magnetization(&samples, p.gamma)?.m);
    }
    outputs.write("samples.csv", &csv).map_err(io_err)?;
    let fp = model.fingerprint();
    let cfg_fp = substream_seed(config.seed, 0xc0);
    let scan = serde_json::json!({
        "chi": ScanResult::new(p.lambda_grid.clone(), Observable::Chi, chi, fp, cfg_fp)?,
        "theta": ScanResult::new(p.lambda_grid.clone(), Observable::Theta, theta, fp, cfg_fp)?,
        "magnetization": {
            "gamma": p.gamma,
            "scan": ScanResult::new(p.lambda_grid.clone(), Observable::Magnetization, mag, fp, cfg_fp)?,
        },
    });
    outputs.write_json("scan.json", &scan).map_err(io_err)?;
    Ok(RunStatus::Ok)
}

fn cmd_fit(
    config: &RunConfig,
    p: &crate::config::FitParams,
    outputs: &mut Outputs,
) -> mrcm::Result<RunStatus> {
    let path = if p.scan_file.is_absolute() {
        p.scan_file.clone()
    } else {
        config.out_dir.join(&p.scan_file)
    };
    let text = std::fs::read_to_string(&path).map_err(io_err)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| mrcm::Error::InvalidArgument(format!("invalid scan JSON: {e}")))?;
    let key = match p.observable {
        Observable::Chi => "chi",
        Observable::Theta => "theta",
        Observable::Magnetization => "magnetization",
        Observable::Tail => "tail",
    };
    let mut entry = value
        .get(key)
        .cloned()
        .ok_or_else(|| mrcm::Error::InvalidArgument(format!("scan file has no {key:?} entry")))?;
    // the magnetization entry nests its scan under the gamma used
    if let Some(inner) = entry.get("scan") {
        entry = inner.clone();
    }
    let scan: ScanResult = serde_json::from_value(entry)
        .map_err(|e| mrcm::Error::InvalidArgument(format!("bad scan entry: {e}")))?;
    let fit = fit_exponent(&scan, p.lambda_hat, p.form)?;
    outputs.write_json("fit.json", &fit).map_err(io_err)?;
    let text = format!(
        "form {:?}\nexponent {:.6} +- {:.6}\nwindow [{:.6}, {:.6}]\nR^2 {:.6}\npoints {}\n",
        fit.form, fit.exponent, fit.stderr, fit.window.0, fit.window.1, fit.r_squared, fit.points_used
    );
    outputs.write("fit.txt", &text).map_err(io_err)?;
    Ok(RunStatus::Ok)
}

fn two_point_stage(
    model: &Model,
    lambda: f64,
    tp: &TwoPointParams,
    resolution: usize,
    size_cap: u64,
    seed: u64,
    outputs: &mut Outputs,
) -> mrcm::Result<(Estimate, Option<f64>)> {
    let spec = LatticeSpec { h: tp.h, half_cells: tp.half_cells };
    let cfg = ExplorationConfig::with_size_cap(size_cap);
    let table = estimate_two_point(model, lambda, &spec, resolution, &cfg, tp.runs_per_cell, seed)?;
    outputs.write("two_point.csv", &two_point_csv(&table)).map_err(io_err)?;
    outputs.write_json("two_point_meta.json", &two_point_meta(&table)).map_err(io_err)?;
    let triangle = estimate_triangle(&table, lambda, 32, substream_seed(seed, 1))?;
    let refinement = if tp.refine {
        let fine = LatticeSpec { h: tp.h / 2.0, half_cells: tp.half_cells * 2 };
        let table2 =
            estimate_two_point(model, lambda, &fine, resolution, &cfg, tp.runs_per_cell, substream_seed(seed, 2))?;
        let tri2 = estimate_triangle(&table2, lambda, 8, substream_seed(seed, 3))?;
        Some(tri2.mean - triangle.mean)
    } else {
        None
    };
    Ok((triangle, refinement))
}

fn cmd_validate(
    config: &RunConfig,
    model: &Model,
    p: &crate::config::ValidateParams,
    outputs: &mut Outputs,
) -> mrcm::Result<RunStatus> {
    let root = resolve_root(model, p.root_mark)?;
    let scan_cfg = CriticalScanConfig {
        bracket: p.bracket,
        runs_per_point: p.bisect_runs,
        size_cap: p.bisect_size_cap,
        p_star: p.p_star,
        max_iters: p.bisect_iters,
        mode: p.mode,
        resolution: p.resolution,
    };
    let critical = find_critical_intensity(model, root, &scan_cfg, stage_seed(config.seed, 3))?;
    outputs.write_json("critical.json", &critical).map_err(io_err)?;
    let lambda_hat = critical.lambda_hat;

    let cfg = ExplorationConfig::with_size_cap(p.size_cap);
    let fp = model.fingerprint();

    // subcritical susceptibility scan
    let chi_grid: Vec<f64> = p.chi_fractions.iter().map(|f| f * lambda_hat).collect();
    let mut chi_ests = Vec::new();
    for (k, &lambda) in chi_grid.iter().enumerate() {
        let samples = explore_batch(
            model,
            lambda,
            root,
            &cfg,
            p.mode,
            stage_seed(config.seed, 10 + k as u64),
            0,
            p.chi_runs,
        )?;
        chi_ests.push(estimate_chi(&samples)?);
    }
    let chi_scan = ScanResult::new(chi_grid, Observable::Chi, chi_ests, fp, 0)?;

    // supercritical percolation scan under the size-cap survival rule
    let theta_grid: Vec<f64> = p.theta_fractions.iter().map(|f| f * lambda_hat).collect();
    let theta_cap = ExplorationConfig::with_size_cap(p.bisect_size_cap);
    let mut theta_ests = Vec::new();
    for (k, &lambda) in theta_grid.iter().enumerate() {
        let samples = explore_batch(
            model,
            lambda,
            root,
            &theta_cap,
            p.mode,
            stage_seed(config.seed, 40 + k as u64),
            0,
            p.theta_runs,
        )?;
        theta_ests.push(estimate_theta(&samples, SurvivalRule::SizeCapHit)?);
    }
    let theta_scan = ScanResult::new(theta_grid, Observable::Theta, theta_ests, fp, 0)?;

    // magnetization ladder at lambda_hat
    let mag_samples = explore_batch(
        model,
        lambda_hat,
        root,
        &cfg,
        p.mode,
        stage_seed(config.seed, 70),
        0,
        p.magnetization_runs,
    )?;
    let mut gammas = p.gamma_grid.clone();
    gammas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mag_ests: Vec<Estimate> = gammas
        .iter()
        .map(|&g| estimate_magnetization(&mag_samples, g).map(|e| e.m))
        .collect::<mrcm::Result<_>>()?;

    // cluster tail at lambda_hat
    let tail_samples = explore_batch(
        model,
        lambda_hat,
        root,
        &cfg,
        p.mode,
        stage_seed(config.seed, 71),
        0,
        p.tail_runs,
    )?;
    let tail = estimate_cluster_tail(&tail_samples, &p.tail_grid, p.size_cap)?;
    let tail_fit = fit_tail_exponent(&tail).ok();

    // optional triangle estimate
    let triangle = match &p.two_point {
        Some(tp) => {
            let (est, refinement) = two_point_stage(
                model,
                lambda_hat,
                tp,
                p.resolution,
                p.size_cap,
                stage_seed(config.seed, 72),
                outputs,
            )?;
            outputs
                .write_json(
                    "triangle.json",
                    &serde_json::json!({ "estimate": est, "half_h_shift": refinement }),
                )
                .map_err(io_err)?;
            Some((est.mean, est.stderr))
        }
        None => None,
    };

    let root_index = root.index().unwrap_or(0);
    let inputs = BoundInputs {
        model,
        resolution: p.resolution,
        k_max: p.k_max,
        lambda_hat,
        lambda_hat_ci: critical.ci,
        chi_scan: Some((&chi_scan, root_index)),
        chi_by_mark: None,
        theta_scan: Some((&theta_scan, root_index)),
        magnetization: Some((&gammas, &mag_ests, root_index)),
        tail: Some(&tail),
        triangle,
    };
    let report = verify_bounds(&inputs)?;
    outputs.write_json("bounds.json", &report).map_err(io_err)?;
    outputs.write("bounds.txt", &report.render_table()).map_err(io_err)?;
    outputs
        .write_json(
            "scans.json",
            &serde_json::json!({
                "chi": chi_scan,
                "theta": theta_scan,
                "magnetization": { "gammas": gammas, "estimates": mag_ests },
                "tail": tail,
                "tail_fit": tail_fit,
            }),
        )
        .map_err(io_err)?;

    if report.any_violated() {
        Ok(RunStatus::BoundViolated)
    } else {
        Ok(RunStatus::Ok)
    }
}

fn cmd_report(
    config: &RunConfig,
    model: &Model,
    p: &crate::config::ReportParams,
    outputs: &mut Outputs,
) -> mrcm::Result<RunStatus> {
    let root = resolve_root(model, p.root_mark)?;
    let cfg = ExplorationConfig::with_size_cap(p.size_cap);
    let samples = explore_batch(
        model,
        p.lambda,
        root,
        &cfg,
        ExploreMode::Thinned,
        stage_seed(config.seed, 4),
        0,
        p.runs,
    )?;
    let chi = estimate_chi(&samples)?;
    let theta = estimate_theta(&samples, SurvivalRule::SizeCapHit)?;
    let constants = derived_constants(model, p.lambda, 0.0, p.k_max, p.resolution)?;
    let verdict = assumption_report(model, p.lambda, None, p.k_max, p.resolution)?;

    // exact small-cluster law versus the empirical histogram
    let mut small = Vec::new();
    let max_n = if model.dim() == 1 { 2 } else { 1 };
    for n in 0..=max_n {
        let exact = exact_small_cluster_prob(model, p.lambda, &root, n, p.resolution)?;
        let hits = samples.iter().filter(|s| s.size == n as u64 + 1).count() as u64;
        let emp = Estimate::binomial(hits, samples.len() as u64)?;
        let z = (emp.mean - exact) / emp.stderr.max(1e-12);
        small.push(serde_json::json!({
            "cluster_size": n + 1,
            "exact": exact,
            "empirical": emp,
            "z": z,
        }));
    }

    let ladder = magnetization_limits(&samples, &p.gamma_grid).ok();

    let identity = match &p.two_point {
        Some(tp) => {
            let spec = LatticeSpec { h: tp.h, half_cells: tp.half_cells };
            let table = estimate_two_point(
                model,
                p.lambda,
                &spec,
                p.resolution,
                &cfg,
                tp.runs_per_cell,
                stage_seed(config.seed, 5),
            )?;
            outputs.write("two_point.csv", &two_point_csv(&table)).map_err(io_err)?;
            outputs
                .write_json("two_point_meta.json", &two_point_meta(&table))
                .map_err(io_err)?;
            Some(identity_checks(
                model,
                root.index().unwrap_or(0),
                &chi,
                &table,
                &samples,
                p.lambda,
                &p.gamma_grid,
                stage_seed(config.seed, 6),
            )?)
        }
        None => None,
    };

    let report = serde_json::json!({
        "lambda": p.lambda,
        "chi": chi,
        "theta": theta,
        "constants": constants,
        "assumptions": verdict,
        "small_cluster_law": small,
        "magnetization_limits": ladder,
        "identity_checks": identity,
        "truncated_mass_bound": model.truncated_mass(),
    });
    outputs.write_json("report.json", &report).map_err(io_err)?;

    let mut text = String::new();
    let _ = writeln!(text, "intensity {}", p.lambda);
    let _ = writeln!(text, "chi   {:.5} +- {:.5}  (n = {})", chi.mean, chi.stderr, chi.n);
    let _ = writeln!(text, "theta {:.5} +- {:.5}", theta.mean, theta.stderr);
    let _ = writeln!(
        text,
        "assumptions: bounded degree {} (sup D = {:.5}), irreducible {} (witness k = {:?})",
        verdict.d1_holds, verdict.d1_sup_degree, verdict.d2_holds, verdict.d2_witness_k
    );
    if let Some(id) = &identity {
        let _ = writeln!(text, "susceptibility identity z = {:.3}", id.mecke_z);
    }
    outputs.write("report.txt", &text).map_err(io_err)?;
    Ok(RunStatus::Ok)
}
