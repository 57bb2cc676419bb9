//! Critical-intensity search, exponent fits, magnetization-limit checks and
//! the inequality verification suite.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{estimate_chi, estimate_magnetization, BiasFlag, Estimate};
use crate::kernels::{
    degree_kernel, derived_constants, mean_degree_per_mark, mixed_norm, operator_norm,
    ConstantsReport,
};
use crate::model::{Mark, Model};
use crate::rng::task_rng;
use crate::simulate::{explore_full, CapKind, ClusterSample, ExplorationConfig, ExploreMode};

/// A lambda-grid of estimates for one observable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanResult {
    pub lambda_grid: Vec<f64>,
    pub observable: Observable,
    pub estimates: Vec<Estimate>,
    pub model_fp: u64,
    pub cfg_fp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Chi,
    Theta,
    Tail,
    Magnetization,
}

impl ScanResult {
    pub fn new(
        lambda_grid: Vec<f64>,
        observable: Observable,
        estimates: Vec<Estimate>,
        model_fp: u64,
        cfg_fp: u64,
    ) -> Result<ScanResult> {
        if lambda_grid.len() != estimates.len() {
            return Err(Error::MismatchedInputs(
                "lambda grid and estimates must align".into(),
            ));
        }
        if lambda_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("lambda grid must be strictly increasing".into()));
        }
        Ok(ScanResult { lambda_grid, observable, estimates, model_fp, cfg_fp })
    }
}

/// Functional form of an exponent fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitForm {
    /// `chi ~ (lambda_hat - lambda)^{-gamma}`: exponent is `gamma`.
    ChiDivergence,
    /// `theta ~ (lambda - lambda_hat)^{beta}`: exponent is `beta`.
    ThetaGrowth,
    /// `P(|C| >= n) ~ n^{-1/delta}`: exponent is `1/delta`.
    TailPower,
}

/// Weighted log-log fit of an observable against its scaling variable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExponentFit {
    pub exponent: f64,
    pub stderr: f64,
    /// Range of the scaling variable actually used.
    pub window: (f64, f64),
    pub r_squared: f64,
    pub form: FitForm,
    pub points_used: usize,
}

/// Maximum relative standard error for a point to enter a fit window.
const FIT_MAX_REL_STDERR: f64 = 0.2;
/// Grid points adjacent to the critical estimate excluded from fits.
const FIT_EXCLUDE_NEAREST: usize = 2;

fn weighted_log_fit(points: &[(f64, f64, f64)], form: FitForm) -> Result<ExponentFit> {
    // points: (scaling variable x > 0, value y > 0, stderr of y)
    if points.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "need >= 5 usable points for a fit, have {}",
            points.len()
        )));
    }
    let mut sw = 0.0;
    let mut swx = 0.0;
    let mut swy = 0.0;
    for &(x, y, se) in points {
        let sigma_log = (se / y).max(1e-12);
        let w = 1.0 / (sigma_log * sigma_log);
        sw += w;
        swx += w * x.ln();
        swy += w * y.ln();
    }
    let xbar = swx / sw;
    let ybar = swy / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for &(x, y, se) in points {
        let sigma_log = (se / y).max(1e-12);
        let w = 1.0 / (sigma_log * sigma_log);
        let dx = x.ln() - xbar;
        let dy = y.ln() - ybar;
        sxx += w * dx * dx;
        sxy += w * dx * dy;
        syy += w * dy * dy;
    }
    if sxx <= 0.0 {
        return Err(Error::InsufficientData("degenerate spread in the fit window".into()));
    }
    let slope = sxy / sxx;
    let slope_se = (1.0 / sxx).sqrt();
    let r_squared = if syy > 0.0 { (sxy * sxy / (sxx * syy)).min(1.0) } else { 1.0 };
    let (exponent, stderr) = match form {
        FitForm::ChiDivergence => (-slope, slope_se),
        FitForm::ThetaGrowth => (slope, slope_se),
        FitForm::TailPower => (-slope, slope_se),
    };
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(0.0, f64::max);
    Ok(ExponentFit { exponent, stderr, window: (lo, hi), r_squared, form, points_used: points.len() })
}

/// Fits a critical exponent from a lambda scan around `lambda_hat`.
///
/// Chi fits use subcritical points with `lambda < lambda_hat`, theta fits
/// use supercritical points; the nearest grid points to `lambda_hat`,
/// cap-flagged chi points and points with relative error above 20% are
/// excluded.
pub fn fit_exponent(scan: &ScanResult, lambda_hat: f64, form: FitForm) -> Result<ExponentFit> {
    let mut points = Vec::new();
    // indices sorted by distance to lambda_hat to drop the nearest two
    let mut by_distance: Vec<usize> = (0..scan.lambda_grid.len()).collect();
    by_distance.sort_by(|&i, &j| {
        (scan.lambda_grid[i] - lambda_hat)
            .abs()
            .partial_cmp(&(scan.lambda_grid[j] - lambda_hat).abs())
            .unwrap()
    });
    let excluded: Vec<usize> = by_distance.into_iter().take(FIT_EXCLUDE_NEAREST).collect();
    for (i, (&lambda, est)) in scan.lambda_grid.iter().zip(&scan.estimates).enumerate() {
        if excluded.contains(&i) {
            continue;
        }
        let x = match form {
            FitForm::ChiDivergence => lambda_hat - lambda,
            FitForm::ThetaGrowth => lambda - lambda_hat,
            FitForm::TailPower => {
                return Err(Error::InvalidArgument(
                    "tail fits take a tail table, not a lambda scan".into(),
                ))
            }
        };
        if x <= 0.0 || est.mean <= 0.0 {
            continue;
        }
        if form == FitForm::ChiDivergence && est.flags.contains(&BiasFlag::CapTruncation) {
            continue;
        }
        if est.relative_stderr() > FIT_MAX_REL_STDERR {
            continue;
        }
        points.push((x, est.mean, est.stderr));
    }
    weighted_log_fit(&points, form)
}

/// Fits the tail exponent `1/delta` from a survival table.
pub fn fit_tail_exponent(tail: &[(u64, Estimate)]) -> Result<ExponentFit> {
    let points: Vec<(f64, f64, f64)> = tail
        .iter()
        .filter(|(_, est)| est.mean > 0.0 && est.relative_stderr() <= FIT_MAX_REL_STDERR)
        .map(|(n, est)| (*n as f64, est.mean, est.stderr))
        .collect();
    weighted_log_fit(&points, FitForm::TailPower)
}

/// Bisection search configuration for the critical intensity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalScanConfig {
    pub bracket: (f64, f64),
    pub runs_per_point: u64,
    pub size_cap: u64,
    /// Survival-fraction threshold the bisection tracks.
    pub p_star: f64,
    pub max_iters: usize,
    pub mode: ExploreMode,
    pub resolution: usize,
}

impl Default for CriticalScanConfig {
    fn default() -> Self {
        CriticalScanConfig {
            bracket: (0.0, 1.0),
            runs_per_point: 4000,
            size_cap: 10_000,
            p_star: 0.01,
            max_iters: 20,
            mode: ExploreMode::Thinned,
            resolution: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalEstimate {
    pub lambda_hat: f64,
    /// Final bisection bracket.
    pub ci: (f64, f64),
    /// `(lambda, survival fraction, runs)` for every point probed.
    pub trace: Vec<(f64, f64, u64)>,
    /// Rigorous lower bound `1 / ||D||_op`.
    pub lambda_lower_bound: f64,
    /// `lambda_hat >= lower bound - bracket width`.
    pub respects_lower_bound: bool,
    pub p_star: f64,
    pub size_cap: u64,
}

fn survival_fraction(
    model: &Model,
    lambda: f64,
    root: Mark,
    cfg: &CriticalScanConfig,
    master_seed: u64,
    point_id: u64,
) -> Result<f64> {
    let explore_cfg = ExplorationConfig::with_size_cap(cfg.size_cap);
    let hits: u64 = (0..cfg.runs_per_point)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(master_seed, point_id * cfg.runs_per_point + i);
            let s = explore_full(model, lambda, root, &explore_cfg, cfg.mode, &mut rng)
                .map(|e| e.sample)
                .expect("validated inputs");
            u64::from(s.capped == CapKind::SizeCap)
        })
        .sum();
    Ok(hits as f64 / cfg.runs_per_point as f64)
}

/// Bisection on the size-cap survival fraction crossing `p_star`.
///
/// The returned estimate always carries the rigorous operator lower bound
/// `1 / ||D||_op`; an estimate that undercuts it by more than the bracket
/// width is flagged.
pub fn find_critical_intensity(
    model: &Model,
    root: Mark,
    cfg: &CriticalScanConfig,
    master_seed: u64,
) -> Result<CriticalEstimate> {
    let (mut lo, mut hi) = cfg.bracket;
    if !(lo >= 0.0 && lo < hi) {
        return Err(Error::InvalidArgument("bracket must satisfy 0 <= lo < hi".into()));
    }
    let mut trace = Vec::new();
    let s_lo = survival_fraction(model, lo, root, cfg, master_seed, 0)?;
    trace.push((lo, s_lo, cfg.runs_per_point));
    let s_hi = survival_fraction(model, hi, root, cfg, master_seed, 1)?;
    trace.push((hi, s_hi, cfg.runs_per_point));
    if !(s_lo < cfg.p_star && s_hi >= cfg.p_star) {
        return Err(Error::BracketFailure(format!(
            "survival {s_lo:.4} at {lo} and {s_hi:.4} at {hi} do not straddle p* = {}",
            cfg.p_star
        )));
    }
    for it in 0..cfg.max_iters {
        let mid = 0.5 * (lo + hi);
        let s = survival_fraction(model, mid, root, cfg, master_seed, 2 + it as u64)?;
        trace.push((mid, s, cfg.runs_per_point));
        if s < cfg.p_star {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda_hat = 0.5 * (lo + hi);
    let degree = degree_kernel(model, cfg.resolution);
    let op = operator_norm(&degree)?;
    let lower = if op > 0.0 { 1.0 / op } else { f64::INFINITY };
    Ok(CriticalEstimate {
        lambda_hat,
        ci: (lo, hi),
        trace,
        lambda_lower_bound: lower,
        respects_lower_bound: lambda_hat >= lower - (hi - lo),
        p_star: cfg.p_star,
        size_cap: cfg.size_cap,
    })
}

/// Limit checks for the magnetization along a geometric gamma ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MagnetizationLimitReport {
    pub gammas: Vec<f64>,
    pub m: Vec<Estimate>,
    /// Finite-difference slopes between consecutive ladder points.
    pub slopes: Vec<f64>,
    pub final_slope: f64,
    pub final_slope_stderr: f64,
    pub chi_f: Estimate,
    /// M is non-increasing along the descending ladder (exact on shared
    /// samples).
    pub monotone_in_gamma: bool,
    /// The smallest-gamma magnetization is consistent with theta = 0.
    pub vanishes_with_gamma: bool,
    /// Slopes increase as gamma decreases (monotone derivative).
    pub slopes_increasing: bool,
    /// `final_slope` within 10% + 3 sigma of the finite susceptibility.
    pub slope_matches_chi: bool,
    pub pass: bool,
}

/// Verifies that M decreases to zero along the gamma ladder and that its
/// final slope reproduces the finite susceptibility. Expects subcritical
/// samples; rejects sample sets with noticeable cap truncation.
pub fn magnetization_limits(
    samples: &[ClusterSample],
    gammas: &[f64],
) -> Result<MagnetizationLimitReport> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("empty sample set".into()));
    }
    let capped = samples.iter().filter(|s| s.is_capped()).count();
    if capped * 100 > samples.len() {
        return Err(Error::InvalidArgument(format!(
            "{capped} of {} samples hit a cap; the slope check needs subcritical samples",
            samples.len()
        )));
    }
    let mut ladder = gammas.to_vec();
    ladder.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if ladder.len() < 2 {
        return Err(Error::InvalidArgument("gamma ladder needs at least two rungs".into()));
    }
    let ests: Vec<Estimate> = ladder
        .iter()
        .map(|&g| estimate_magnetization(samples, g).map(|e| e.m))
        .collect::<Result<_>>()?;
    let chi_f = estimate_chi(samples)?;

    let monotone = ests.windows(2).all(|w| w[0].mean >= w[1].mean);
    let mut slopes = Vec::with_capacity(ladder.len() - 1);
    for k in 0..ladder.len() - 1 {
        slopes.push((ests[k].mean - ests[k + 1].mean) / (ladder[k] - ladder[k + 1]));
    }
    let slopes_increasing = slopes.windows(2).all(|w| w[1] >= w[0] - 1e-12);

    // per-sample final slope for a correlation-aware standard error
    let (g1, g2) = (ladder[ladder.len() - 2], ladder[ladder.len() - 1]);
    let per_sample = samples.iter().map(|s| {
        let k = s.size as f64;
        (((1.0 - g2).powf(k)) - ((1.0 - g1).powf(k))) / (g1 - g2)
    });
    let slope_est = Estimate::from_values(per_sample)?;
    let slope_matches_chi = (slope_est.mean - chi_f.mean).abs()
        <= 0.10 * chi_f.mean + 3.0 * (slope_est.stderr + chi_f.stderr);

    let last = ests.last().unwrap();
    let g_last = *ladder.last().unwrap();
    let vanishes = last.mean <= g_last * chi_f.mean + 3.0 * last.stderr + 1e-12;

    let pass = monotone && slopes_increasing && slope_matches_chi && vanishes;
    Ok(MagnetizationLimitReport {
        gammas: ladder,
        m: ests,
        slopes,
        final_slope: slope_est.mean,
        final_slope_stderr: slope_est.stderr,
        chi_f,
        monotone_in_gamma: monotone,
        vanishes_with_gamma: vanishes,
        slopes_increasing,
        slope_matches_chi,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Holds,
    Violated,
    Undetermined,
}

/// One verified inequality: the observed side, the bound side, and the
/// z-score of the comparison in the direction that must hold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundEntry {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub status: BoundStatus,
    pub z: f64,
    pub note: String,
}

#[derive(Debug, Clone, Serialize, Default, Deserialize)]
pub struct BoundReport {
    pub entries: Vec<BoundEntry>,
}

impl BoundReport {
    pub fn any_violated(&self) -> bool {
        self.entries.iter().any(|e| e.status == BoundStatus::Violated)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::from(
            "bound                              lhs          rhs          z       status\n",
        );
        for e in &self.entries {
            out.push_str(&format!(
                "{:<34} {:<12.5} {:<12.5} {:<7.2} {:?}\n",
                e.name, e.lhs, e.rhs, e.z, e.status
            ));
        }
        out
    }
}

/// Everything the bound suite may consume. Optional inputs produce
/// `Undetermined` entries naming the missing precondition.
pub struct BoundInputs<'a> {
    pub model: &'a Model,
    pub resolution: usize,
    pub k_max: usize,
    pub lambda_hat: f64,
    pub lambda_hat_ci: (f64, f64),
    /// Susceptibility scan for one root mark (its grid index).
    pub chi_scan: Option<(&'a ScanResult, usize)>,
    /// Per-grid-mark susceptibility estimates at one subcritical lambda.
    pub chi_by_mark: Option<(f64, &'a [Estimate])>,
    /// Percolation scan (size-cap survival rule) for one root mark.
    pub theta_scan: Option<(&'a ScanResult, usize)>,
    /// Magnetization estimates per gamma at `lambda_hat` for one root mark.
    pub magnetization: Option<(&'a [f64], &'a [Estimate], usize)>,
    /// Cluster-tail table at `lambda_hat`.
    pub tail: Option<&'a [(u64, Estimate)]>,
    /// Triangle-diagram estimate at `lambda_hat`.
    pub triangle: Option<(f64, f64)>,
}

fn entry(name: &str, lhs: f64, rhs: f64, z: f64, must_be_nonneg: f64, note: &str) -> BoundEntry {
    let status = if must_be_nonneg >= 0.0 { BoundStatus::Holds } else { BoundStatus::Violated };
    BoundEntry { name: name.into(), lhs, rhs, status, z, note: note.into() }
}

fn undetermined(name: &str, note: &str) -> BoundEntry {
    BoundEntry {
        name: name.into(),
        lhs: f64::NAN,
        rhs: f64::NAN,
        status: BoundStatus::Undetermined,
        z: f64::NAN,
        note: note.into(),
    }
}

/// Evaluates the inequality suite with plugged-in estimates and kernel
/// constants. Every entry compares at the three-sigma level; entries whose
/// preconditions are not met come back `Undetermined`.
pub fn verify_bounds(inputs: &BoundInputs) -> Result<BoundReport> {
    let model = inputs.model;
    let degree = degree_kernel(model, inputs.resolution);
    let sup_d = mixed_norm(&degree, f64::INFINITY, f64::INFINITY);
    let sup_d_1inf = mixed_norm(&degree, 1.0, f64::INFINITY);
    let op = operator_norm(&degree)?;
    let lambda_hat = inputs.lambda_hat;
    let constants: ConstantsReport = derived_constants(
        model,
        lambda_hat,
        inputs.triangle.map(|(m, _)| m).unwrap_or(0.0),
        inputs.k_max,
        inputs.resolution,
    )?;
    let mut report = BoundReport::default();

    // operator envelope: lambda_hat >= 1 / ||D||_op, up to the CI width
    {
        let lower = if op > 0.0 { 1.0 / op } else { 0.0 };
        let width = inputs.lambda_hat_ci.1 - inputs.lambda_hat_ci.0;
        let slack = lambda_hat - (lower - width);
        report.entries.push(entry(
            "critical_intensity_lower_bound",
            lambda_hat,
            lower,
            slack / width.max(1e-12),
            slack,
            "estimated critical intensity against 1/||D||_op",
        ));
    }

    // susceptibility divergence: chi >= C / (lambda_hat - lambda)
    match inputs.chi_scan {
        None => report
            .entries
            .push(undetermined("susceptibility_lower_bound", "no susceptibility scan supplied")),
        Some((scan, _root)) => {
            let c = 1.0 / sup_d_1inf;
            let mut worst_z = f64::INFINITY;
            let mut worst = (f64::NAN, f64::NAN);
            let mut used = 0;
            for (&lambda, est) in scan.lambda_grid.iter().zip(&scan.estimates) {
                let gap = lambda_hat - lambda;
                // skip points inside the critical bracket's uncertainty
                if gap <= (inputs.lambda_hat_ci.1 - inputs.lambda_hat_ci.0).max(1e-9) {
                    continue;
                }
                let rhs = c / gap;
                let z = (est.mean - rhs) / est.stderr.max(1e-12);
                if z < worst_z {
                    worst_z = z;
                    worst = (est.mean, rhs);
                }
                used += 1;
            }
            if used == 0 {
                report.entries.push(undetermined(
                    "susceptibility_lower_bound",
                    "no subcritical scan points clear of the critical bracket",
                ));
            } else {
                report.entries.push(entry(
                    "susceptibility_lower_bound",
                    worst.0,
                    worst.1,
                    worst_z,
                    worst_z + 3.0,
                    "worst scan point of chi >= (1/||D||_{1,inf}) / (lambda_hat - lambda)",
                ));
            }
        }
    }

    // susceptibility uniformity: max_b chi(b) <= (1 + lambda sup D * I_a) chi(a)
    match inputs.chi_by_mark {
        None => report
            .entries
            .push(undetermined("susceptibility_uniformity", "no per-mark susceptibility supplied")),
        Some((lambda, ests)) => {
            let seeds = crate::kernels::connectivity_seed_all(
                &degree,
                lambda,
                crate::kernels::SeedKind::I,
                inputs.k_max,
            );
            let max_est = ests.iter().map(|e| e.mean).fold(0.0, f64::max);
            let mut worst_z = f64::INFINITY;
            let mut worst = (f64::NAN, f64::NAN);
            for (a, est) in ests.iter().enumerate() {
                let factor = if lambda == 0.0 { 1.0 } else { 1.0 + lambda * sup_d * seeds[a].value };
                let rhs = factor * est.mean;
                let sigma = (factor * est.stderr).max(
                    ests.iter().map(|e| e.stderr).fold(0.0, f64::max),
                );
                let z = (rhs - max_est) / sigma.max(1e-12);
                if z < worst_z {
                    worst_z = z;
                    worst = (max_est, rhs);
                }
            }
            report.entries.push(entry(
                "susceptibility_uniformity",
                worst.0,
                worst.1,
                worst_z,
                worst_z + 3.0,
                "max-over-marks chi against its per-mark uniformity bound",
            ));
        }
    }

    // percolation growth: theta(lambda) >= (lambda - lambda_hat) / (2 lambda cbar-at-lambda_hat)
    match inputs.theta_scan {
        None => report
            .entries
            .push(undetermined("percolation_lower_bound", "no percolation scan supplied")),
        Some((scan, root)) => {
            let j_root = constants.j_per_mark.get(root).copied().unwrap_or(f64::INFINITY);
            let c_a = 1.0 + lambda_hat * sup_d * j_root;
            let mut worst_z = f64::INFINITY;
            let mut worst = (f64::NAN, f64::NAN);
            let mut used = 0;
            for (&lambda, est) in scan.lambda_grid.iter().zip(&scan.estimates) {
                let gap = lambda - lambda_hat;
                if gap <= (inputs.lambda_hat_ci.1 - inputs.lambda_hat_ci.0).max(1e-9) {
                    continue;
                }
                if !c_a.is_finite() {
                    continue;
                }
                let rhs = gap / (2.0 * lambda * c_a);
                let z = (est.mean - rhs) / est.stderr.max(1e-12);
                if z < worst_z {
                    worst_z = z;
                    worst = (est.mean, rhs);
                }
                used += 1;
            }
            if used == 0 {
                report.entries.push(undetermined(
                    "percolation_lower_bound",
                    "no supercritical scan points clear of the critical bracket",
                ));
            } else {
                report.entries.push(entry(
                    "percolation_lower_bound",
                    worst.0,
                    worst.1,
                    worst_z,
                    worst_z + 3.0,
                    "worst scan point of theta >= (lambda - lambda_hat)+ / (2 lambda c_a)",
                ));
            }
        }
    }

    // magnetization lower bound: M(gamma) >= sqrt(gamma / (1 + (1 + lambda sup D J_a)^2))
    match inputs.magnetization {
        None => report
            .entries
            .push(undetermined("magnetization_lower_bound", "no magnetization ladder supplied")),
        Some((gammas, ests, root)) => {
            let j_root = constants.j_per_mark.get(root).copied().unwrap_or(f64::INFINITY);
            let c_a = 1.0 + lambda_hat * sup_d * j_root;
            let denom = 1.0 + c_a * c_a;
            let mut worst_z = f64::INFINITY;
            let mut worst = (f64::NAN, f64::NAN);
            for (&gamma, est) in gammas.iter().zip(ests) {
                if gamma >= 0.5 {
                    continue;
                }
                let rhs = (gamma / denom).sqrt();
                let z = (est.mean - rhs) / est.stderr.max(1e-12);
                if z < worst_z {
                    worst_z = z;
                    worst = (est.mean, rhs);
                }
            }
            if worst_z.is_finite() {
                report.entries.push(entry(
                    "magnetization_lower_bound",
                    worst.0,
                    worst.1,
                    worst_z,
                    worst_z + 3.0,
                    "M(lambda_hat, gamma, a) against sqrt(gamma / (1 + c_a^2))",
                ));
            } else {
                report.entries.push(undetermined(
                    "magnetization_lower_bound",
                    "no ladder points with gamma < 1/2",
                ));
            }
        }
    }

    // magnetization upper bound: M(gamma) <= sqrt(K gamma), needs the
    // triangle condition for a finite K
    match (inputs.magnetization, inputs.triangle) {
        (Some((gammas, ests, _)), Some(_)) if constants.k_constant.is_finite() => {
            let k = constants.k_constant;
            let mut worst_z = f64::INFINITY;
            let mut worst = (f64::NAN, f64::NAN);
            for (&gamma, est) in gammas.iter().zip(ests) {
                if gamma >= 0.5 {
                    continue;
                }
                let rhs = (k * gamma).sqrt();
                let z = (rhs - est.mean) / est.stderr.max(1e-12);
                if z < worst_z {
                    worst_z = z;
                    worst = (est.mean, rhs);
                }
            }
            report.entries.push(entry(
                "magnetization_upper_bound",
                worst.0,
                worst.1,
                worst_z,
                worst_z + 3.0,
                "M(lambda_hat, gamma, a) against sqrt(K gamma)",
            ));
        }
        (Some(_), Some(_)) => report.entries.push(undetermined(
            "magnetization_upper_bound",
            "kappa <= 0 at the supplied triangle value: K is infinite",
        )),
        _ => report.entries.push(undetermined(
            "magnetization_upper_bound",
            "needs a magnetization ladder and a triangle estimate",
        )),
    }

    // cluster tail bounds from the magnetization constants
    match (inputs.tail, inputs.triangle) {
        (Some(tail), Some(_)) if constants.k_constant.is_finite() => {
            let k = constants.k_constant;
            let e = std::f64::consts::E;
            let upper_c = e / (e - 1.0) * k.sqrt();
            let cbar = constants.cbar;
            let lower_c = 1.0 / (4.0 * e * k.sqrt()) / (1.0 + cbar * cbar);
            let mut worst_up = f64::INFINITY;
            let mut worst_lo = f64::INFINITY;
            let mut up = (f64::NAN, f64::NAN);
            let mut lo = (f64::NAN, f64::NAN);
            for (n, est) in tail {
                let nf = *n as f64;
                let rhs_up = upper_c * nf.powf(-0.5);
                let z_up = (rhs_up - est.mean) / est.stderr.max(1e-12);
                if z_up < worst_up {
                    worst_up = z_up;
                    up = (est.mean, rhs_up);
                }
                let rhs_lo = lower_c * nf.powf(-0.5);
                let z_lo = (est.mean - rhs_lo) / est.stderr.max(1e-12);
                if z_lo < worst_lo {
                    worst_lo = z_lo;
                    lo = (est.mean, rhs_lo);
                }
            }
            report.entries.push(entry(
                "cluster_tail_upper_bound",
                up.0,
                up.1,
                worst_up,
                worst_up + 3.0,
                "P(|C| >= n) against (e/(e-1)) sqrt(K) n^{-1/2}",
            ));
            report.entries.push(entry(
                "cluster_tail_lower_bound",
                lo.0,
                lo.1,
                worst_lo,
                worst_lo + 3.0,
                "P(|C| >= n) against n^{-1/2} / (4 e sqrt(K) (1 + cbar^2))",
            ));
        }
        (Some(_), Some(_)) => report.entries.push(undetermined(
            "cluster_tail_bounds",
            "kappa <= 0 at the supplied triangle value: K is infinite",
        )),
        _ => report.entries.push(undetermined(
            "cluster_tail_bounds",
            "need a tail table and a triangle estimate",
        )),
    }

    // triangle condition verdict as an informational row
    match inputs.triangle {
        Some((mean, stderr)) => {
            let hi = mean + 3.0 * stderr;
            let slack = constants.c_delta - hi;
            report.entries.push(BoundEntry {
                name: "triangle_condition".into(),
                lhs: hi,
                rhs: constants.c_delta,
                status: if slack > 0.0 { BoundStatus::Holds } else { BoundStatus::Undetermined },
                z: slack / stderr.max(1e-12),
                note: "triangle estimate (+3 sigma) against the threshold; failure to clear it \
                       is inconclusive, not a violation"
                    .into(),
            });
        }
        None => report
            .entries
            .push(undetermined("triangle_condition", "no triangle estimate supplied")),
    }

    Ok(report)
}

/// Expected-degree helper reused by callers assembling bound inputs.
pub fn mean_degree_for(model: &Model, lambda: f64, resolution: usize) -> Vec<f64> {
    mean_degree_per_mark(&degree_kernel(model, resolution), lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::estimate_theta;
    use crate::estimate::SurvivalRule;
    use crate::kernels::branching_susceptibility_from;
    use crate::simulate::explore_batch;
    use crate::testutil::{disc_model, three_mark_model};
    use std::collections::BTreeSet;

    fn exact_estimate(mean: f64) -> Estimate {
        Estimate { mean, stderr: 1e-9 * mean.abs().max(1e-9), n: 1000, flags: BTreeSet::new() }
    }

    #[test]
    fn scan_result_validates_geometry() {
        let grid = vec![0.1, 0.2, 0.3];
        let ests = vec![exact_estimate(1.0), exact_estimate(2.0), exact_estimate(3.0)];
        assert!(ScanResult::new(grid.clone(), Observable::Chi, ests.clone(), 0, 0).is_ok());
        assert!(ScanResult::new(vec![0.1, 0.1, 0.3], Observable::Chi, ests.clone(), 0, 0).is_err());
        assert!(ScanResult::new(vec![0.1, 0.2], Observable::Chi, ests, 0, 0).is_err());
    }

    #[test]
    fn synthetic_power_laws_recover_unit_exponents() {
        // chi(lambda) = (1 - lambda)^{-1} exactly on a grid below 1
        let grid: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
        let ests: Vec<Estimate> = grid.iter().map(|&l| exact_estimate(1.0 / (1.0 - l))).collect();
        let scan = ScanResult::new(grid, Observable::Chi, ests, 0, 0).unwrap();
        let fit = fit_exponent(&scan, 1.0, FitForm::ChiDivergence).unwrap();
        assert!((fit.exponent - 1.0).abs() < 0.01, "gamma {}", fit.exponent);
        assert!(fit.r_squared > 0.9999);

        // theta(lambda) = 2 (lambda - 1)+ on a grid above 1
        let grid: Vec<f64> = (1..11).map(|i| 1.0 + 0.05 * i as f64).collect();
        let ests: Vec<Estimate> =
            grid.iter().map(|&l| exact_estimate(2.0 * (l - 1.0))).collect();
        let scan = ScanResult::new(grid, Observable::Theta, ests, 0, 0).unwrap();
        let fit = fit_exponent(&scan, 1.0, FitForm::ThetaGrowth).unwrap();
        assert!((fit.exponent - 1.0).abs() < 0.01, "beta {}", fit.exponent);
    }

    #[test]
    fn fits_are_scale_equivariant_in_the_observable() {
        let grid: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
        let base: Vec<Estimate> =
            grid.iter().map(|&l| exact_estimate((1.0 - l).powf(-1.3))).collect();
        let scaled: Vec<Estimate> = base
            .iter()
            .map(|e| Estimate {
                mean: 17.0 * e.mean,
                stderr: 17.0 * e.stderr,
                n: e.n,
                flags: e.flags.clone(),
            })
            .collect();
        let f1 = fit_exponent(
            &ScanResult::new(grid.clone(), Observable::Chi, base, 0, 0).unwrap(),
            1.0,
            FitForm::ChiDivergence,
        )
        .unwrap();
        let f2 = fit_exponent(
            &ScanResult::new(grid, Observable::Chi, scaled, 0, 0).unwrap(),
            1.0,
            FitForm::ChiDivergence,
        )
        .unwrap();
        assert!((f1.exponent - f2.exponent).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_insufficient_points() {
        let grid = vec![0.5, 0.6, 0.7, 0.8, 0.9];
        let ests: Vec<Estimate> = grid.iter().map(|&l| exact_estimate(1.0 / (1.0 - l))).collect();
        let scan = ScanResult::new(grid, Observable::Chi, ests, 0, 0).unwrap();
        // two nearest points are dropped, leaving three
        assert!(matches!(
            fit_exponent(&scan, 1.0, FitForm::ChiDivergence),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn branching_mode_bisection_recovers_single_type_threshold() {
        // single-type branching criticality at mean offspring 1: lambda D = 1
        let m = disc_model(1, 0.5);
        let a = m.atom(0).unwrap();
        let cfg = CriticalScanConfig {
            bracket: (0.1, 1.2),
            runs_per_point: 3000,
            size_cap: 10_000,
            mode: ExploreMode::Branching,
            max_iters: 14,
            ..Default::default()
        };
        let est = find_critical_intensity(&m, a, &cfg, 71).unwrap();
        assert!(
            (est.lambda_hat - 0.5).abs() < 0.01,
            "lambda_hat {} vs 0.5",
            est.lambda_hat
        );
        assert!(est.respects_lower_bound);
    }

    #[test]
    fn bisection_requires_a_straddling_bracket() {
        let m = disc_model(1, 0.5);
        let a = m.atom(0).unwrap();
        let cfg = CriticalScanConfig {
            bracket: (0.01, 0.1),
            runs_per_point: 200,
            size_cap: 2_000,
            mode: ExploreMode::Branching,
            ..Default::default()
        };
        assert!(matches!(
            find_critical_intensity(&m, a, &cfg, 3),
            Err(Error::BracketFailure(_))
        ));
    }

    #[test]
    fn bisection_is_seed_stable() {
        let m = disc_model(1, 0.5);
        let a = m.atom(0).unwrap();
        let cfg = CriticalScanConfig {
            bracket: (0.1, 1.2),
            runs_per_point: 2000,
            size_cap: 5_000,
            mode: ExploreMode::Branching,
            max_iters: 12,
            ..Default::default()
        };
        let e1 = find_critical_intensity(&m, a, &cfg, 101).unwrap();
        let e2 = find_critical_intensity(&m, a, &cfg, 202).unwrap();
        let overlap = e1.ci.0.max(e2.ci.0) <= e1.ci.1.min(e2.ci.1);
        // brackets from independent seeds should essentially coincide
        assert!(
            overlap || (e1.lambda_hat - e2.lambda_hat).abs() < 0.02,
            "{:?} vs {:?}",
            e1.ci,
            e2.ci
        );
    }

    #[test]
    fn magnetization_limits_on_subcritical_samples() {
        let m = disc_model(1, 0.5);
        let a = m.atom(0).unwrap();
        let cfg = ExplorationConfig::with_size_cap(10_000);
        let samples =
            explore_batch(&m, 0.3, a, &cfg, ExploreMode::Thinned, 301, 0, 40_000).unwrap();
        let gammas: Vec<f64> = (1..=10).map(|j| 2f64.powi(-j)).collect();
        let report = magnetization_limits(&samples, &gammas).unwrap();
        assert!(report.monotone_in_gamma);
        assert!(report.slopes_increasing, "slopes {:?}", report.slopes);
        assert!(report.slope_matches_chi, "slope {} chi {}", report.final_slope, report.chi_f.mean);
        assert!(report.vanishes_with_gamma);
        assert!(report.pass);
    }

    #[test]
    fn magnetization_limits_reject_capped_sample_sets() {
        let mut samples = vec![
            ClusterSample { size: 3, capped: CapKind::None, generations: 1, max_radius: 0.5 };
            10
        ];
        samples.extend(vec![
            ClusterSample {
                size: 100,
                capped: CapKind::SizeCap,
                generations: 9,
                max_radius: 3.0,
            };
            10
        ]);
        assert!(magnetization_limits(&samples, &[0.5, 0.25]).is_err());
    }

    #[test]
    fn bound_suite_at_lambda_zero_rows_is_deterministic() {
        let m = three_mark_model();
        // chi at lambda 0 is exactly 1 for every mark
        let ones = vec![exact_estimate(1.0), exact_estimate(1.0), exact_estimate(1.0)];
        let inputs = BoundInputs {
            model: &m,
            resolution: 1,
            k_max: 32,
            lambda_hat: 1.6649,
            lambda_hat_ci: (1.66, 1.67),
            chi_scan: None,
            chi_by_mark: Some((0.0, &ones)),
            theta_scan: None,
            magnetization: None,
            tail: None,
            triangle: None,
        };
        let report = verify_bounds(&inputs).unwrap();
        let uni = report
            .entries
            .iter()
            .find(|e| e.name == "susceptibility_uniformity")
            .unwrap();
        // at lambda = 0 the bound reduces to 1 <= 1 exactly
        assert_eq!(uni.status, BoundStatus::Holds);
        assert_eq!(uni.lhs, 1.0);
        assert_eq!(uni.rhs, 1.0);
        assert!(!report.any_violated());
    }

    #[test]
    fn fault_injection_flips_the_susceptibility_bound() {
        let m = disc_model(1, 0.5);
        let a = m.atom(0).unwrap();
        // honest subcritical scan in branching mode, where chi is exactly
        // (1 - lambda D)^{-1}
        let grid: Vec<f64> = (0..8).map(|i| 0.05 + 0.05 * i as f64).collect();
        let mut ests = Vec::new();
        for &l in &grid {
            let cfg = ExplorationConfig::with_size_cap(100_000);
            let samples =
                explore_batch(&m, l, a, &cfg, ExploreMode::Branching, 401, 0, 4000).unwrap();
            ests.push(estimate_chi(&samples).unwrap());
        }
        let scan = ScanResult::new(grid, Observable::Chi, ests, m.fingerprint(), 0).unwrap();
        let inputs = BoundInputs {
            model: &m,
            resolution: 1,
            k_max: 32,
            lambda_hat: 0.5,
            lambda_hat_ci: (0.499, 0.501),
            chi_scan: Some((&scan, 0)),
            chi_by_mark: None,
            theta_scan: None,
            magnetization: None,
            tail: None,
            triangle: None,
        };
        let report = verify_bounds(&inputs).unwrap();
        let e = report
            .entries
            .iter()
            .find(|e| e.name == "susceptibility_lower_bound")
            .unwrap();
        assert_eq!(e.status, BoundStatus::Holds, "z {}", e.z);

        // scaling chi down by 10x must violate the divergence bound
        let mut bad = scan.clone();
        for est in bad.estimates.iter_mut() {
            est.mean *= 0.1;
            est.stderr *= 0.1;
        }
        let inputs = BoundInputs { chi_scan: Some((&bad, 0)), ..inputs };
        let report = verify_bounds(&inputs).unwrap();
        let e = report
            .entries
            .iter()
            .find(|e| e.name == "susceptibility_lower_bound")
            .unwrap();
        assert_eq!(e.status, BoundStatus::Violated);
        assert!(report.any_violated());
    }

    #[test]
    fn branching_susceptibility_diverges_with_unit_exponent() {
        // deterministic linear-solve oracle across a lambda grid: the
        // total-progeny vector diverges like (lambda* - lambda)^{-1}
        let m = three_mark_model();
        let op = operator_norm(&degree_kernel(&m, 1)).unwrap();
        let lambda_star = 1.0 / op;
        // log-spaced gaps hugging the threshold, where the pure power law
        // dominates the analytic corrections
        let grid: Vec<f64> = (1..=12)
            .map(|i| lambda_star * (1.0 - 0.08 * 0.75f64.powi(i)))
            .collect();
        let ests: Vec<Estimate> = grid
            .iter()
            .map(|&l| {
                let x = branching_susceptibility_from(&degree_kernel(&m, 1), l).unwrap();
                exact_estimate(x.iter().cloned().fold(0.0, f64::max))
            })
            .collect();
        let scan = ScanResult::new(grid, Observable::Chi, ests, m.fingerprint(), 0).unwrap();
        let fit = fit_exponent(&scan, lambda_star, FitForm::ChiDivergence).unwrap();
        assert!((fit.exponent - 1.0).abs() < 0.05, "gamma {}", fit.exponent);
        // the fitted amplitude exp(intercept) must be positive and finite:
        // equivalently the curve stays a bounded multiple of the power law
        for (l, e) in scan.lambda_grid.iter().zip(&scan.estimates) {
            let ratio = e.mean * (lambda_star - l);
            assert!(ratio > 0.1 && ratio < 10.0, "amplitude ratio {ratio}");
        }
    }

    #[test]
    fn theta_survival_is_monotone_in_lambda() {
        let m = disc_model(1, 0.5);
        let a = m.atom(0).unwrap();
        let cfg = ExplorationConfig::with_size_cap(300);
        let mut prev = -1.0;
        for (k, lambda) in [0.6, 0.9, 1.3].iter().enumerate() {
            let samples = explore_batch(
                &m,
                *lambda,
                a,
                &cfg,
                ExploreMode::Branching,
                500 + k as u64,
                0,
                4000,
            )
            .unwrap();
            let est = estimate_theta(&samples, SurvivalRule::SizeCapHit).unwrap();
            assert!(est.mean >= prev - 3.0 * est.stderr.max(0.01));
            prev = est.mean;
        }
    }
}
