//! Monte Carlo observables with uncertainty: susceptibility, percolation
//! fraction, magnetization, cluster-size tails, two-point tables, the
//! triangle diagram, the exact small-cluster oracle and identity checks.

pub mod conv;
pub mod smallcluster;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{Mark, Model};
use crate::rng::task_rng;
use crate::simulate::{explore_full, CapKind, ClusterSample, ExplorationConfig, ExploreMode};

/// A Monte Carlo scalar: mean, standard error and sample count, plus flags
/// describing known biases of the estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<BiasFlag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasFlag {
    /// Some samples hit an exploration cap; the value is a lower bound.
    CapTruncation,
    /// Survival was defined as hitting the size cap.
    SizeCapSurvivalRule,
    /// Survival was defined as reaching a radius threshold.
    RadiusSurvivalRule,
    /// The displacement grid boundary still carried noticeable mass.
    BoundaryTruncation,
}

impl Estimate {
    pub fn from_values(values: impl Iterator<Item = f64>) -> Result<Estimate> {
        let mut n = 0u64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for v in values {
            n += 1;
            sum += v;
            sumsq += v * v;
        }
        if n == 0 {
            return Err(Error::InsufficientData("empty sample set".into()));
        }
        let mean = sum / n as f64;
        let stderr = if n > 1 {
            let var = ((sumsq - sum * sum / n as f64) / (n as f64 - 1.0)).max(0.0);
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(Estimate { mean, stderr, n, flags: BTreeSet::new() })
    }

    pub fn binomial(hits: u64, n: u64) -> Result<Estimate> {
        if n == 0 {
            return Err(Error::InsufficientData("empty sample set".into()));
        }
        let p = hits as f64 / n as f64;
        let stderr = (p * (1.0 - p) / n as f64).sqrt();
        Ok(Estimate { mean: p, stderr, n, flags: BTreeSet::new() })
    }

    pub fn with_flag(mut self, flag: BiasFlag) -> Estimate {
        self.flags.insert(flag);
        self
    }

    pub fn relative_stderr(&self) -> f64 {
        if self.mean != 0.0 {
            (self.stderr / self.mean).abs()
        } else {
            f64::INFINITY
        }
    }
}

/// Mean cluster size. Capped samples make the mean a flagged lower bound.
pub fn estimate_chi(samples: &[ClusterSample]) -> Result<Estimate> {
    let mut est = Estimate::from_values(samples.iter().map(|s| s.size as f64))?;
    if samples.iter().any(|s| s.is_capped()) {
        est.flags.insert(BiasFlag::CapTruncation);
    }
    Ok(est)
}

/// Finite surrogate for "the cluster is infinite".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalRule {
    /// The exploration hit its size cap.
    SizeCapHit,
    /// Some vertex reached at least this distance from the root.
    RadiusAtLeast(f64),
}

/// Fraction of samples satisfying the survival rule, with binomial errors.
pub fn estimate_theta(samples: &[ClusterSample], rule: SurvivalRule) -> Result<Estimate> {
    let hits = samples
        .iter()
        .filter(|s| match rule {
            SurvivalRule::SizeCapHit => s.capped == CapKind::SizeCap,
            SurvivalRule::RadiusAtLeast(rho) => s.max_radius >= rho,
        })
        .count() as u64;
    let est = Estimate::binomial(hits, samples.len() as u64)?;
    Ok(est.with_flag(match rule {
        SurvivalRule::SizeCapHit => BiasFlag::SizeCapSurvivalRule,
        SurvivalRule::RadiusAtLeast(_) => BiasFlag::RadiusSurvivalRule,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MagnetizationEstimate {
    /// Probability that the root cluster contains a ghost vertex,
    /// estimated by the exact size transform `1 - (1 - gamma)^size`.
    pub m: Estimate,
    /// Mean of `size * (1 - gamma)^size`.
    pub ghost_free_chi: Estimate,
}

/// Ghost-transform estimators from the cluster-size law.
pub fn estimate_magnetization(
    samples: &[ClusterSample],
    gamma: f64,
) -> Result<MagnetizationEstimate> {
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} outside (0, 1)")));
    }
    let q = 1.0 - gamma;
    let mut m = Estimate::from_values(samples.iter().map(|s| 1.0 - q.powf(s.size as f64)))?;
    let mut gf =
        Estimate::from_values(samples.iter().map(|s| s.size as f64 * q.powf(s.size as f64)))?;
    // capped samples contribute their truncated size; only flag when the
    // truncation still carries ghost-transform mass
    let significant_cap = samples
        .iter()
        .any(|s| s.is_capped() && q.powf(s.size as f64) > 1e-9);
    if significant_cap {
        m.flags.insert(BiasFlag::CapTruncation);
        gf.flags.insert(BiasFlag::CapTruncation);
    }
    Ok(MagnetizationEstimate { m, ghost_free_chi: gf })
}

/// Empirical survival function of the cluster size on the given grid.
pub fn estimate_cluster_tail(
    samples: &[ClusterSample],
    n_grid: &[u64],
    size_cap: u64,
) -> Result<Vec<(u64, Estimate)>> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("empty sample set".into()));
    }
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    let mut out = Vec::with_capacity(grid.len());
    for &n in &grid {
        if n == 0 {
            return Err(Error::InvalidArgument("tail grid entries must be >= 1".into()));
        }
        if n >= size_cap {
            return Err(Error::InvalidArgument(format!(
                "tail point {n} is not observable under size cap {size_cap}"
            )));
        }
        let hits = samples.iter().filter(|s| s.size >= n).count() as u64;
        out.push((n, Estimate::binomial(hits, samples.len() as u64)?));
    }
    Ok(out)
}

/// Geometry of a displacement lattice: cell-centered boxes with spacing `h`
/// and `2 * half_cells` cells per axis.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub h: f64,
    pub half_cells: usize,
}

impl LatticeSpec {
    pub fn cells_per_axis(&self) -> usize {
        2 * self.half_cells
    }

    pub fn cell_count(&self, d: usize) -> usize {
        self.cells_per_axis().pow(d as u32)
    }

    /// Center of the flattened cell `idx` (row-major over axes).
    pub fn center(&self, d: usize, idx: usize, out: &mut [f64]) {
        let n = self.cells_per_axis();
        let mut rest = idx;
        for k in (0..d).rev() {
            let c = rest % n;
            rest /= n;
            out[k] = (c as f64 - self.half_cells as f64 + 0.5) * self.h;
        }
    }
}

/// Monte Carlo two-point table: per ordered mark pair, cell-averaged
/// connection probabilities on a displacement lattice, stored by radial bin
/// (isotropic models) or by cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoPointTable {
    pub model_fp: u64,
    pub lambda: f64,
    pub d: usize,
    pub spec: LatticeSpec,
    pub marks: Vec<Mark2>,
    pub weights: Vec<f64>,
    /// Cell indices of each sampling bin (radial bins when isotropic).
    pub bins: Vec<Vec<u32>>,
    /// Per ordered mark pair `i * m + j`, per bin: mean, stderr, runs.
    pub bin_tau: Vec<Vec<f64>>,
    pub bin_stderr: Vec<Vec<f64>>,
    pub runs_per_bin: Vec<Vec<u64>>,
    /// Some exploration hit a cap; values are lower bounds.
    pub cap_flag: bool,
    /// tau on the boundary shell still exceeded 1e-3.
    pub boundary_flag: bool,
}

/// Serializable mirror of a mark used in table metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mark2 {
    pub index: Option<usize>,
    pub value: f64,
}

impl From<Mark> for Mark2 {
    fn from(m: Mark) -> Self {
        Mark2 { index: m.index(), value: m.value() }
    }
}

impl Mark2 {
    pub fn to_mark(self) -> Mark {
        match self.index {
            Some(i) => Mark::Atom { index: i, value: self.value },
            None => Mark::Real(self.value),
        }
    }
}

impl TwoPointTable {
    pub fn mark_count(&self) -> usize {
        self.marks.len()
    }

    /// Expands one pair's bin means onto the full lattice.
    pub fn tau_lattice(&self, pair: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.cell_count(self.d)];
        for (b, cells) in self.bins.iter().enumerate() {
            for &c in cells {
                out[c as usize] = self.bin_tau[pair][b];
            }
        }
        out
    }

    /// `T(a, b)`: the lattice quadrature of tau over displacement.
    pub fn integrated(&self, i: usize, j: usize) -> Estimate {
        let pair = i * self.mark_count() + j;
        let hv = self.spec.h.powi(self.d as i32);
        let mut total = 0.0;
        let mut var = 0.0;
        for (b, cells) in self.bins.iter().enumerate() {
            let size = cells.len() as f64;
            total += size * self.bin_tau[pair][b];
            var += (size * self.bin_stderr[pair][b]).powi(2);
        }
        let mut flags = BTreeSet::new();
        if self.cap_flag {
            flags.insert(BiasFlag::CapTruncation);
        }
        if self.boundary_flag {
            flags.insert(BiasFlag::BoundaryTruncation);
        }
        Estimate {
            mean: hv * total,
            stderr: hv * var.sqrt(),
            n: self.runs_per_bin[pair].iter().sum(),
            flags,
        }
    }

    /// Largest tau estimate among boundary-shell cells of a pair.
    fn boundary_max(&self, pair: usize) -> f64 {
        let n = self.spec.cells_per_axis();
        let mut worst = 0.0f64;
        for (b, cells) in self.bins.iter().enumerate() {
            let on_boundary = cells.iter().any(|&c| {
                let mut rest = c as usize;
                for _ in 0..self.d {
                    let coord = rest % n;
                    rest /= n;
                    if coord == 0 || coord == n - 1 {
                        return true;
                    }
                }
                false
            });
            if on_boundary {
                worst = worst.max(self.bin_tau[pair][b]);
            }
        }
        worst
    }
}

fn radial_bins(spec: &LatticeSpec, d: usize, isotropic: bool) -> Vec<Vec<u32>> {
    let cells = spec.cell_count(d);
    if !isotropic {
        return (0..cells as u32).map(|c| vec![c]).collect();
    }
    let mut by_radius: Vec<(u64, u32)> = Vec::with_capacity(cells);
    let mut center = vec![0.0; d];
    for c in 0..cells {
        spec.center(d, c, &mut center);
        let r2: f64 = center.iter().map(|x| x * x).sum();
        // key on the squared radius at fixed precision
        by_radius.push(((r2 / (spec.h * spec.h) * 4.0).round() as u64, c as u32));
    }
    by_radius.sort_unstable();
    let mut bins: Vec<Vec<u32>> = Vec::new();
    let mut cur_key = u64::MAX;
    for (key, c) in by_radius {
        if key != cur_key {
            bins.push(Vec::new());
            cur_key = key;
        }
        bins.last_mut().unwrap().push(c);
    }
    bins
}

/// Estimates the two-point function on a displacement lattice for every
/// ordered pair of grid marks.
///
/// Each run explores the cluster of the first root and computes the exact
/// conditional probability that an augmented vertex at the sampled
/// displacement attaches to it, which averages to tau with less noise than
/// raw success indicators. Displacements are drawn uniformly inside their
/// cell, so cell means are unbiased cell averages and the lattice
/// quadrature of the table is an unbiased estimate of `T(a, b)`. At
/// `lambda = 0` the table is computed exactly (tau = phi) with zero
/// variance.
pub fn estimate_two_point(
    model: &Model,
    lambda: f64,
    spec: &LatticeSpec,
    resolution: usize,
    cfg: &ExplorationConfig,
    runs_per_cell: u64,
    master_seed: u64,
) -> Result<TwoPointTable> {
    if spec.h <= 0.0 || spec.half_cells == 0 {
        return Err(Error::InvalidArgument("lattice spacing and extent must be positive".into()));
    }
    let d = model.dim();
    let grid = model.mark_grid(resolution);
    let m = grid.len();
    let bins = radial_bins(spec, d, model.is_isotropic());
    let n_bins = bins.len();

    let mut bin_tau = vec![vec![0.0; n_bins]; m * m];
    let mut bin_stderr = vec![vec![0.0; n_bins]; m * m];
    let mut runs_per_bin = vec![vec![0u64; n_bins]; m * m];
    let mut cap_flag = false;

    if lambda == 0.0 {
        // tau = phi exactly: deterministic cell averages by quadrature
        let mut center = vec![0.0; d];
        for i in 0..m {
            for j in 0..m {
                let pair = i * m + j;
                for (b, cells) in bins.iter().enumerate() {
                    let c0 = cells[0] as usize;
                    spec.center(d, c0, &mut center);
                    let lo: Vec<(f64, f64)> = center
                        .iter()
                        .map(|&x| (x - spec.h / 2.0, x + spec.h / 2.0))
                        .collect();
                    let mut f = |p: &[f64]| model.phi(p, &grid[i].0, &grid[j].0);
                    let avg = crate::quad::adaptive_box(&mut f, &lo, 1e-9)
                        / spec.h.powi(d as i32);
                    bin_tau[pair][b] = avg.clamp(0.0, 1.0);
                    runs_per_bin[pair][b] = 1;
                }
            }
        }
    } else {
        let tasks: Vec<(usize, usize)> = (0..m * m)
            .flat_map(|pair| (0..n_bins).map(move |b| (pair, b)))
            .collect();
        let results: Vec<(f64, f64, u64, bool)> = tasks
            .par_iter()
            .map(|&(pair, b)| {
                let (i, j) = (pair / m, pair % m);
                let runs = runs_per_cell * bins[b].len() as u64;
                let mut rng = task_rng(master_seed, (pair * n_bins + b) as u64);
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                let mut capped = false;
                let mut pos = vec![0.0; d];
                for _ in 0..runs {
                    let cell = bins[b][rng.random_range(0..bins[b].len())] as usize;
                    spec.center(d, cell, &mut pos);
                    for x in pos.iter_mut() {
                        let u: f64 = rng.random();
                        *x += spec.h * (u - 0.5);
                    }
                    let e = explore_full(
                        model,
                        lambda,
                        grid[i].0,
                        cfg,
                        ExploreMode::Thinned,
                        &mut rng,
                    )
                    .expect("validated inputs");
                    capped |= e.sample.is_capped();
                    let p = e.connect_prob(model, &pos, &grid[j].0);
                    sum += p;
                    sumsq += p * p;
                }
                let mean = sum / runs as f64;
                let var = ((sumsq - sum * sum / runs as f64) / (runs as f64 - 1.0)).max(0.0);
                (mean, (var / runs as f64).sqrt(), runs, capped)
            })
            .collect();
        for (&(pair, b), (mean, se, runs, capped)) in tasks.iter().zip(results) {
            bin_tau[pair][b] = mean;
            bin_stderr[pair][b] = se;
            runs_per_bin[pair][b] = runs;
            cap_flag |= capped;
        }
    }

    let mut table = TwoPointTable {
        model_fp: model.fingerprint(),
        lambda,
        d,
        spec: *spec,
        marks: grid.iter().map(|(mk, _)| Mark2::from(*mk)).collect(),
        weights: grid.iter().map(|(_, w)| *w).collect(),
        bins,
        bin_tau,
        bin_stderr,
        runs_per_bin,
        cap_flag,
        boundary_flag: false,
    };
    table.boundary_flag = (0..m * m).any(|pair| table.boundary_max(pair) >= 1e-3);
    Ok(table)
}

/// Triangle-diagram estimate from a two-point table:
/// `lambda^2 * max over displacement and (a, b) of the mark-weighted triple
/// spatial convolution of tau`. The convolution runs over the full lattice
/// via FFTs; the standard error comes from resampling the table.
pub fn estimate_triangle(
    table: &TwoPointTable,
    lambda: f64,
    bootstrap_reps: usize,
    master_seed: u64,
) -> Result<Estimate> {
    if table.lambda != lambda {
        return Err(Error::MismatchedInputs(format!(
            "table was built at lambda {}, asked to evaluate at {lambda}",
            table.lambda
        )));
    }
    let expected_cells = table.spec.cell_count(table.d);
    for (pair, taus) in table.bin_tau.iter().enumerate() {
        if taus.len() != table.bins.len() {
            return Err(Error::InvalidArgument(format!(
                "irregular table: pair {pair} has {} bins, geometry has {}",
                taus.len(),
                table.bins.len()
            )));
        }
    }
    let covered: usize = table.bins.iter().map(|b| b.len()).sum();
    if covered != expected_cells {
        return Err(Error::InvalidArgument(
            "irregular table: bins do not partition the lattice".into(),
        ));
    }
    if lambda == 0.0 {
        return Ok(Estimate { mean: 0.0, stderr: 0.0, n: 1, flags: BTreeSet::new() });
    }

    let point = conv::triple_convolution_max(table, None)?;
    let mut reps = Vec::with_capacity(bootstrap_reps);
    for r in 0..bootstrap_reps {
        let mut rng = task_rng(master_seed, r as u64);
        let v = conv::triple_convolution_max(table, Some(&mut rng))?;
        reps.push(lambda * lambda * v);
    }
    let mean = lambda * lambda * point;
    let stderr = if reps.len() > 1 {
        let rm: f64 = reps.iter().sum::<f64>() / reps.len() as f64;
        let var: f64 =
            reps.iter().map(|x| (x - rm) * (x - rm)).sum::<f64>() / (reps.len() as f64 - 1.0);
        var.sqrt()
    } else {
        0.0
    };
    let mut flags = BTreeSet::new();
    if table.cap_flag {
        flags.insert(BiasFlag::CapTruncation);
    }
    if table.boundary_flag {
        flags.insert(BiasFlag::BoundaryTruncation);
    }
    Ok(Estimate { mean, stderr, n: table.runs_per_bin.iter().flatten().sum(), flags })
}

/// Residual report of the exact identities connecting independently
/// estimated observables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityReport {
    /// z-score of `chi - 1 - lambda * sum_b w_b T(a, b)`.
    pub mecke_z: f64,
    /// Per gamma: z-score between the size-transform estimator and an
    /// explicit ghost-labelling estimator on the same samples.
    pub magnetization_z: Vec<(f64, f64)>,
    pub pass: bool,
}

/// Checks the susceptibility identity against a two-point table and the
/// two magnetization estimators against each other.
pub fn identity_checks(
    model: &Model,
    root_index: usize,
    chi: &Estimate,
    table: &TwoPointTable,
    samples: &[ClusterSample],
    lambda: f64,
    gamma_grid: &[f64],
    master_seed: u64,
) -> Result<IdentityReport> {
    if table.model_fp != model.fingerprint() || table.lambda != lambda {
        return Err(Error::MismatchedInputs(
            "two-point table does not match the model and intensity".into(),
        ));
    }
    let m = table.mark_count();
    if root_index >= m {
        return Err(Error::MarkOutOfDomain(format!("root index {root_index}")));
    }
    // chi(a) = 1 + lambda * sum_b w_b T(a, b)
    let mut rhs = 1.0;
    let mut var = chi.stderr * chi.stderr;
    for b in 0..m {
        let t = table.integrated(root_index, b);
        rhs += lambda * table.weights[b] * t.mean;
        var += (lambda * table.weights[b] * t.stderr).powi(2);
    }
    let diff = chi.mean - rhs;
    let mecke_z = if var > 0.0 { diff / var.sqrt() } else if diff == 0.0 { 0.0 } else { f64::INFINITY };

    let mut magnetization_z = Vec::with_capacity(gamma_grid.len());
    for (k, &gamma) in gamma_grid.iter().enumerate() {
        if !(0.0 < gamma && gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("gamma {gamma} outside (0, 1)")));
        }
        let mut rng = task_rng(master_seed, k as u64);
        let mut diff_sum = 0.0;
        let mut var_sum = 0.0;
        for s in samples {
            let p = 1.0 - (1.0 - gamma).powf(s.size as f64);
            let mut ghost = false;
            for _ in 0..s.size {
                let u: f64 = rng.random();
                if u < gamma {
                    ghost = true;
                    break;
                }
            }
            diff_sum += (ghost as u8) as f64 - p;
            var_sum += p * (1.0 - p);
        }
        let n = samples.len() as f64;
        let z = if var_sum > 0.0 { (diff_sum / n) / (var_sum.sqrt() / n) } else { 0.0 };
        magnetization_z.push((gamma, z));
    }

    let pass = mecke_z.abs() < 3.0 && magnetization_z.iter().all(|(_, z)| z.abs() < 3.0);
    Ok(IdentityReport { mecke_z, magnetization_z, pass })
}
