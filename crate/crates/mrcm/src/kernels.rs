//! Deterministic mark-space quantities: degree kernels, k-step kernels,
//! mixed and operator norms, connectivity seeds, derived constants,
//! branching envelopes and assumption verdicts.
//!
//! All kernel computations act on a finite mark grid: finite alphabets are
//! used verbatim, continuous mark spaces are discretized by the midpoint
//! rule at a caller-chosen resolution (essential suprema and infima then
//! become grid maxima and minima, a quadrature approximation that is
//! reported with the resolution used).

pub mod exact;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Mark, Model};

/// Tolerance used by the per-call Schur ordering assertion in
/// [`operator_norm`].
const SCHUR_TOL: f64 = 1e-10;

/// A mark-indexed kernel on a quadrature grid.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub marks: Vec<Mark>,
    pub weights: Vec<f64>,
    pub values: DMatrix<f64>,
}

impl KernelMatrix {
    pub fn size(&self) -> usize {
        self.marks.len()
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Largest asymmetry `|h(i,j) - h(j,i)|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.size();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.values[(i, j)] - self.values[(j, i)]).abs());
            }
        }
        worst
    }

    fn positive_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, _)| i)
    }
}

/// Degree kernel `D` on the mark grid, from the per-family closed forms.
pub fn degree_kernel(model: &Model, resolution: usize) -> KernelMatrix {
    let grid = model.mark_grid(resolution);
    let n = grid.len();
    let values = DMatrix::from_fn(n, n, |i, j| model.degree(&grid[i].0, &grid[j].0));
    KernelMatrix {
        marks: grid.iter().map(|(m, _)| *m).collect(),
        weights: grid.iter().map(|(_, w)| *w).collect(),
        values,
    }
}

/// k-step kernel: `D^(1) = D` and
/// `D^(k)(a, b) = sum_c D^(k-1)(a, c) w_c D(c, b)`.
pub fn path_kernel(model: &Model, k: usize, resolution: usize) -> Result<KernelMatrix> {
    if k == 0 {
        return Err(Error::InvalidArgument("path kernel requires k >= 1".into()));
    }
    let degree = degree_kernel(model, resolution);
    Ok(path_kernel_from(&degree, k))
}

/// Same as [`path_kernel`] but starting from a precomputed degree kernel.
pub fn path_kernel_from(degree: &KernelMatrix, k: usize) -> KernelMatrix {
    assert!(k >= 1);
    let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(degree.weights.clone()));
    let mut values = degree.values.clone();
    for _ in 1..k {
        values = &values * &w * &degree.values;
    }
    KernelMatrix { marks: degree.marks.clone(), weights: degree.weights.clone(), values }
}

/// Mixed norm with the inner exponent applied over the second argument and
/// the outer exponent over the first; `f64::INFINITY` selects the
/// essential-supremum norm (grid maximum over positive-weight nodes).
pub fn mixed_norm(h: &KernelMatrix, p1: f64, p2: f64) -> f64 {
    let inner: Vec<f64> = h
        .positive_indices()
        .map(|i| {
            if p1.is_infinite() {
                h.positive_indices()
                    .map(|j| h.values[(i, j)].abs())
                    .fold(0.0, f64::max)
            } else {
                let s: f64 = h
                    .positive_indices()
                    .map(|j| h.weights[j] * h.values[(i, j)].abs().powf(p1))
                    .sum();
                s.powf(1.0 / p1)
            }
        })
        .collect();
    let pos_weights: Vec<f64> = h.positive_indices().map(|i| h.weights[i]).collect();
    if p2.is_infinite() {
        inner.iter().cloned().fold(0.0, f64::max)
    } else {
        let s: f64 = inner
            .iter()
            .zip(&pos_weights)
            .map(|(x, w)| w * x.powf(p2))
            .sum();
        s.powf(1.0 / p2)
    }
}

/// Operator norm on the weighted L2 space: the spectral radius of
/// `W^{1/2} h W^{1/2}`. Rejects asymmetric input. Every call asserts the
/// Schur ordering `operator_norm <= mixed_norm(h, 1, inf)`.
pub fn operator_norm(h: &KernelMatrix) -> Result<f64> {
    let n = h.size();
    for i in 0..n {
        for j in (i + 1)..n {
            let delta = (h.values[(i, j)] - h.values[(j, i)]).abs();
            if delta > 1e-9 {
                return Err(Error::Asymmetric { i, j, delta });
            }
        }
    }
    let sqrt_w = nalgebra::DVector::from_iterator(n, h.weights.iter().map(|w| w.sqrt()));
    let weighted = DMatrix::from_fn(n, n, |i, j| {
        sqrt_w[i] * 0.5 * (h.values[(i, j)] + h.values[(j, i)]) * sqrt_w[j]
    });
    let eig = weighted.symmetric_eigen();
    let norm = eig.eigenvalues.iter().map(|e| e.abs()).fold(0.0, f64::max);
    let schur = mixed_norm(h, 1.0, f64::INFINITY);
    assert!(
        norm <= schur + SCHUR_TOL,
        "Schur ordering violated: op {norm} > row-sum {schur}"
    );
    Ok(norm)
}

/// Which geometric rate seeds the supremum: `I` uses `lambda / (1 + lambda)`
/// and `J` uses `lambda / (2 (1 + lambda))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeedKind {
    I,
    J,
}

/// Result of a connectivity-seed computation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeedValue {
    /// `(sup_k r^k min_b D^(k)(a, b))^{-1}`, infinite when the sup is zero.
    pub value: f64,
    /// False when the term sequence was still rising at `k_max`; the value
    /// is then an upper bound on the true seed.
    pub converged: bool,
    /// The k attaining the supremum, when positive.
    pub attained_k: Option<usize>,
}

/// Number of consecutive small terms after which the k-scan stops early.
const SEED_PLATEAU: usize = 8;

/// `(sup_{1<=k<=k_max} r^k min_b D^(k)(a, b))^{-1}` for every grid mark a.
pub fn connectivity_seed_all(
    degree: &KernelMatrix,
    lambda: f64,
    kind: SeedKind,
    k_max: usize,
) -> Vec<SeedValue> {
    let n = degree.size();
    let r = match kind {
        SeedKind::I => lambda / (1.0 + lambda),
        SeedKind::J => lambda / (2.0 * (1.0 + lambda)),
    };
    let mut sup = vec![0.0f64; n];
    let mut attained = vec![None; n];
    let mut stale = vec![0usize; n];
    let mut rising_at_end = vec![false; n];
    if r > 0.0 && k_max >= 1 {
        let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(degree.weights.clone()));
        let mut power = degree.values.clone();
        let mut rk = r;
        for k in 1..=k_max {
            for a in 0..n {
                if degree.weights[a] <= 0.0 || stale[a] > SEED_PLATEAU {
                    continue;
                }
                let min_b = degree
                    .positive_indices()
                    .map(|b| power[(a, b)])
                    .fold(f64::INFINITY, f64::min);
                let term = rk * min_b;
                if term > sup[a] {
                    sup[a] = term;
                    attained[a] = Some(k);
                    stale[a] = 0;
                    rising_at_end[a] = k == k_max;
                } else {
                    rising_at_end[a] = false;
                    if sup[a] > 0.0 && term < 1e-3 * sup[a] {
                        stale[a] += 1;
                    }
                }
            }
            if stale.iter().all(|s| *s > SEED_PLATEAU) {
                break;
            }
            if k < k_max {
                power = &power * &w * &degree.values;
                rk *= r;
            }
        }
    }
    (0..n)
        .map(|a| SeedValue {
            value: if sup[a] > 0.0 { 1.0 / sup[a] } else { f64::INFINITY },
            converged: !rising_at_end[a],
            attained_k: attained[a],
        })
        .collect()
}

/// Connectivity seed for one mark (located on the grid).
pub fn connectivity_seed(
    model: &Model,
    lambda: f64,
    a: &Mark,
    kind: SeedKind,
    k_max: usize,
    resolution: usize,
) -> Result<SeedValue> {
    let degree = degree_kernel(model, resolution);
    let idx = locate_mark(&degree.marks, a)?;
    Ok(connectivity_seed_all(&degree, lambda, kind, k_max)[idx])
}

pub(crate) fn locate_mark(marks: &[Mark], a: &Mark) -> Result<usize> {
    match a {
        Mark::Atom { index, .. } => {
            if *index < marks.len() {
                Ok(*index)
            } else {
                Err(Error::MarkOutOfDomain(format!("atom index {index}")))
            }
        }
        Mark::Real(v) => marks
            .iter()
            .enumerate()
            .min_by(|(_, m1), (_, m2)| {
                (m1.value() - v)
                    .abs()
                    .partial_cmp(&(m2.value() - v).abs())
                    .unwrap()
            })
            .map(|(i, _)| i)
            .ok_or_else(|| Error::MarkOutOfDomain("empty grid".into())),
    }
}

/// The scalar constants derived from the kernels at a given intensity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub lambda: f64,
    pub delta: f64,
    pub resolution: usize,
    pub k_max: usize,
    /// Seed values per grid mark at rate `lambda / (1 + lambda)`.
    pub i_per_mark: Vec<f64>,
    pub i_converged: Vec<bool>,
    /// Seed values per grid mark at rate `lambda / (2 (1 + lambda))`.
    pub j_per_mark: Vec<f64>,
    pub j_converged: Vec<bool>,
    /// `1 + lambda * sup D * sup_c J_c` (1 at lambda = 0).
    pub cbar: f64,
    pub kappa_per_mark: Vec<f64>,
    /// `8 cbar^2 (1 + cbar^2) / min_a kappa(a)`, infinite when the
    /// denominator is not positive.
    pub k_constant: f64,
    pub c_delta: f64,
    pub mean_degree_per_mark: Vec<f64>,
}

/// Expected root degree `lambda * sum_b w_b D(a, b)` per grid mark.
pub fn mean_degree_per_mark(degree: &KernelMatrix, lambda: f64) -> Vec<f64> {
    let n = degree.size();
    (0..n)
        .map(|a| {
            lambda
                * (0..n)
                    .map(|b| degree.weights[b] * degree.values[(a, b)])
                    .sum::<f64>()
        })
        .collect()
}

/// Computes the derived constants at intensity `lambda` with triangle value
/// `delta` (pass 0 when only the first branch of the triangle threshold is
/// wanted).
pub fn derived_constants(
    model: &Model,
    lambda: f64,
    delta: f64,
    k_max: usize,
    resolution: usize,
) -> Result<ConstantsReport> {
    if lambda < 0.0 || delta < 0.0 {
        return Err(Error::InvalidArgument("lambda and delta must be >= 0".into()));
    }
    let degree = degree_kernel(model, resolution);
    let i_seeds = connectivity_seed_all(&degree, lambda, SeedKind::I, k_max);
    let j_seeds = connectivity_seed_all(&degree, lambda, SeedKind::J, k_max);
    let sup_degree = mixed_norm(&degree, f64::INFINITY, f64::INFINITY);
    let mean_degree = mean_degree_per_mark(&degree, lambda);

    let sup_j = j_seeds.iter().map(|s| s.value).fold(0.0, f64::max);
    let cbar = if lambda == 0.0 { 1.0 } else { 1.0 + lambda * sup_degree * sup_j };

    let sup_i = i_seeds.iter().map(|s| s.value).fold(0.0, f64::max);
    let first_branch = if lambda == 0.0 {
        1.0
    } else {
        (1.0 + lambda * sup_degree * sup_i).powi(-2)
    };
    let inf_md = mean_degree.iter().cloned().fold(f64::INFINITY, f64::min);
    let sup_md = mean_degree.iter().cloned().fold(0.0, f64::max);
    let second_branch = if cbar.is_finite() {
        (1.0 / cbar) * inf_md * inf_md / (1.0 + 2.0 * sup_md)
    } else {
        0.0
    };
    let c_delta = first_branch.min(second_branch);

    let kappa_per_mark: Vec<f64> = mean_degree
        .iter()
        .map(|md| md * md - (2.0 * md + 1.0) * cbar * cbar * delta)
        .collect();
    let min_kappa = kappa_per_mark.iter().cloned().fold(f64::INFINITY, f64::min);
    let k_constant = if min_kappa > 0.0 && cbar.is_finite() {
        8.0 * cbar * cbar * (1.0 + cbar * cbar) / min_kappa
    } else {
        f64::INFINITY
    };

    Ok(ConstantsReport {
        lambda,
        delta,
        resolution,
        k_max,
        i_per_mark: i_seeds.iter().map(|s| s.value).collect(),
        i_converged: i_seeds.iter().map(|s| s.converged).collect(),
        j_per_mark: j_seeds.iter().map(|s| s.value).collect(),
        j_converged: j_seeds.iter().map(|s| s.converged).collect(),
        cbar,
        kappa_per_mark,
        k_constant,
        c_delta,
        mean_degree_per_mark: mean_degree,
    })
}

/// Geometric-series envelope for the two-point operator norm.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnvelopeReport {
    /// `||D||_op / (1 - lambda ||D||_op)` when below threshold, `None` when
    /// the geometric series diverges.
    pub t_norm_bound: Option<f64>,
    /// `1 / ||D||_op`: a rigorous lower bound for the operator critical
    /// intensity.
    pub lambda_o_lower: f64,
    pub d_op_norm: f64,
}

pub fn branching_envelope_norm(model: &Model, lambda: f64, resolution: usize) -> Result<EnvelopeReport> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be >= 0".into()));
    }
    let degree = degree_kernel(model, resolution);
    let op = operator_norm(&degree)?;
    let lambda_o_lower = if op > 0.0 { 1.0 / op } else { f64::INFINITY };
    let t_norm_bound = if lambda * op < 1.0 { Some(op / (1.0 - lambda * op)) } else { None };
    Ok(EnvelopeReport { t_norm_bound, lambda_o_lower, d_op_norm: op })
}

/// Expected total progeny of the multitype branching tree with
/// mean-offspring matrix `lambda * D * W`: the solution of
/// `(Id - lambda D W) x = 1`. Fails with a divergence error at or above the
/// branching threshold.
pub fn branching_susceptibility(model: &Model, lambda: f64, resolution: usize) -> Result<Vec<f64>> {
    let degree = degree_kernel(model, resolution);
    branching_susceptibility_from(&degree, lambda)
}

pub fn branching_susceptibility_from(degree: &KernelMatrix, lambda: f64) -> Result<Vec<f64>> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be >= 0".into()));
    }
    let op = operator_norm(degree)?;
    if lambda * op >= 1.0 {
        return Err(Error::Divergent(format!(
            "lambda {lambda} at or above the branching threshold {}",
            1.0 / op
        )));
    }
    let n = degree.size();
    let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(degree.weights.clone()));
    let system = DMatrix::identity(n, n) - lambda * &degree.values * &w;
    let rhs = nalgebra::DVector::from_element(n, 1.0);
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Divergent("singular branching system".into()))?;
    Ok(sol.iter().cloned().collect())
}

/// Rigorous intensity upper bound from a coarse-graining witness: given an
/// adjacency lower bound `eps` on a box pair of width `delta` hit with mark
/// probability at least `p_min`, percolation occurs above
/// `log(2) / (p_min * eps) * (2 / delta)^d`.
pub fn coarse_grain_bound(p_min: f64, eps: f64, delta: f64, d: usize) -> Result<f64> {
    if !(p_min > 0.0 && p_min <= 1.0) {
        return Err(Error::InvalidArgument(format!("p_min {p_min} must lie in (0, 1]")));
    }
    if !(eps > 0.0 && delta > 0.0 && d > 0) {
        return Err(Error::InvalidArgument("eps, delta, d must be positive".into()));
    }
    Ok(std::f64::consts::LN_2 / (p_min * eps) * (2.0 / delta).powi(d as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriangleStatus {
    Holds,
    Fails,
    Undetermined,
}

/// Verdicts for the model assumptions at a reference intensity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionVerdict {
    /// Bounded expected degree: always true on a grid; the value is the
    /// grid supremum of D.
    pub d1_holds: bool,
    pub d1_sup_degree: f64,
    /// Some k <= k_max gives min over the grid of D^(k) > 0.
    pub d2_holds: bool,
    pub d2_witness_k: Option<usize>,
    pub d2_min_entry: f64,
    /// Triangle comparison: `delta_hat + 3 stderr` against the threshold.
    pub t_status: TriangleStatus,
    pub t_delta_upper: Option<f64>,
    pub t_threshold: f64,
}

/// Evaluates the assumption verdicts. `delta_estimate` is an optional
/// `(mean, stderr)` pair for the triangle diagram at `lambda_ref`.
pub fn assumption_report(
    model: &Model,
    lambda_ref: f64,
    delta_estimate: Option<(f64, f64)>,
    k_max: usize,
    resolution: usize,
) -> Result<AssumptionVerdict> {
    let degree = degree_kernel(model, resolution);
    let sup_degree = mixed_norm(&degree, f64::INFINITY, f64::INFINITY);
    let d1_holds = sup_degree.is_finite();

    let mut d2_witness = None;
    let mut d2_min = 0.0;
    let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(degree.weights.clone()));
    let mut power = degree.values.clone();
    for k in 1..=k_max {
        let min_entry = degree
            .positive_indices()
            .flat_map(|a| degree.positive_indices().map(move |b| (a, b)))
            .map(|(a, b)| power[(a, b)])
            .fold(f64::INFINITY, f64::min);
        if min_entry > 0.0 {
            d2_witness = Some(k);
            d2_min = min_entry;
            break;
        }
        if k < k_max {
            power = &power * &w * &degree.values;
        }
    }

    let constants = derived_constants(model, lambda_ref, 0.0, k_max, resolution)?;
    let (t_status, t_delta_upper) = match delta_estimate {
        None => (TriangleStatus::Undetermined, None),
        Some((mean, stderr)) => {
            let hi = mean + 3.0 * stderr;
            let lo = mean - 3.0 * stderr;
            let status = if hi < constants.c_delta {
                TriangleStatus::Holds
            } else if lo > constants.c_delta {
                TriangleStatus::Fails
            } else {
                TriangleStatus::Undetermined
            };
            (status, Some(hi))
        }
    };

    Ok(AssumptionVerdict {
        d1_holds,
        d1_sup_degree: sup_degree,
        d2_holds: d2_witness.is_some(),
        d2_witness_k: d2_witness,
        d2_min_entry: d2_min,
        t_status,
        t_delta_upper,
        t_threshold: constants.c_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AdjacencySpec, MarkDistribution, ModelSpec, WeightLit};
    use num_bigint::BigInt;
    use num_rational::BigRational;

    use crate::testutil::{disc_model, three_mark_model};

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    /// Brute-force k-step kernel in exact rationals: the independent oracle
    /// for path_kernel (nested sum over the intermediate marks).
    fn brute_force_path(k_matrix: &[Vec<BigRational>], w: &BigRational, k: usize) -> Vec<Vec<BigRational>> {
        let n = k_matrix.len();
        let mut out = vec![vec![BigRational::from(BigInt::from(0)); n]; n];
        for a in 0..n {
            for b in 0..n {
                // sum over all intermediate mark sequences c_1 .. c_{k-1}
                let mut total = BigRational::from(BigInt::from(0));
                let mut seq = vec![0usize; k.saturating_sub(1)];
                loop {
                    let mut prod = BigRational::from(BigInt::from(1));
                    let mut prev = a;
                    for &c in &seq {
                        prod *= &k_matrix[prev][c] * w;
                        prev = c;
                    }
                    prod *= &k_matrix[prev][b];
                    total += prod;
                    // odometer increment
                    let mut i = 0;
                    loop {
                        if i == seq.len() {
                            break;
                        }
                        seq[i] += 1;
                        if seq[i] < n {
                            break;
                        }
                        seq[i] = 0;
                        i += 1;
                    }
                    if i == seq.len() {
                        break;
                    }
                }
                out[a][b] = total;
            }
        }
        out
    }

    fn k_rational() -> Vec<Vec<BigRational>> {
        let k = [[1, 1, 0], [1, 0, 1], [0, 1, 0]];
        (0..3)
            .map(|i| (0..3).map(|j| rat(k[i][j], 1)).collect())
            .collect()
    }

    #[test]
    fn degree_closed_forms() {
        let m1 = disc_model(1, 1.0);
        let d1 = degree_kernel(&m1, 1);
        assert_eq!(d1.value(0, 0), 4.0);

        let m2 = disc_model(2, 1.0);
        let d2 = degree_kernel(&m2, 1);
        assert!((d2.value(0, 0) - 4.0 * std::f64::consts::PI).abs() < 1e-12);

        let m3 = three_mark_model();
        let d3 = degree_kernel(&m3, 1);
        let k = [[1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(d3.value(i, j), k[i][j]);
            }
        }
    }

    #[test]
    fn path_kernel_matches_brute_force_oracle() {
        let m = three_mark_model();
        let w = rat(1, 3);
        for k in 1..=5 {
            let got = path_kernel(&m, k, 1).unwrap();
            let oracle = brute_force_path(&k_rational(), &w, k);
            for i in 0..3 {
                for j in 0..3 {
                    let expect = crate::model::rational_to_f64(&oracle[i][j]);
                    assert!(
                        (got.value(i, j) - expect).abs() < 1e-12,
                        "k={k} ({i},{j}): {} vs {expect}",
                        got.value(i, j)
                    );
                }
            }
        }
    }

    #[test]
    fn path_kernel_k4_reproduces_known_matrix() {
        // frozen from the exact oracle: 27 * D^(4) over the three-mark model
        let m = three_mark_model();
        let got = path_kernel(&m, 4, 1).unwrap();
        let expect = [[6.0, 4.0, 3.0], [4.0, 5.0, 1.0], [3.0, 1.0, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((27.0 * got.value(i, j) - expect[i][j]).abs() < 1e-12);
            }
        }
        // k = 2: 3 * D^(2)
        let got2 = path_kernel(&m, 2, 1).unwrap();
        let expect2 = [[2.0, 1.0, 1.0], [1.0, 2.0, 0.0], [1.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((3.0 * got2.value(i, j) - expect2[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn path_kernel_k1_is_degree() {
        let m = disc_model(1, 0.5);
        let d = degree_kernel(&m, 1);
        let p = path_kernel(&m, 1, 1).unwrap();
        assert_eq!(d.value(0, 0), p.value(0, 0));
    }

    #[test]
    fn weighted_composition_identity() {
        // D^(2k)(b, c) = sum_a D^(k)(b, a) w_a D^(k)(a, c)
        let m = three_mark_model();
        for k in 1..=3 {
            let dk = path_kernel(&m, k, 1).unwrap();
            let d2k = path_kernel(&m, 2 * k, 1).unwrap();
            for b in 0..3 {
                for c in 0..3 {
                    let composed: f64 = (0..3)
                        .map(|a| dk.value(b, a) * dk.weights[a] * dk.value(a, c))
                        .sum();
                    assert!((composed - d2k.value(b, c)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mixed_norm_examples() {
        let m = three_mark_model();
        let d = degree_kernel(&m, 1);
        assert_eq!(mixed_norm(&d, f64::INFINITY, f64::INFINITY), 1.0);
        // max row average of K/3-weighted rows: rows sums (2/3, 2/3, 1/3)
        assert!((mixed_norm(&d, 1.0, f64::INFINITY) - 2.0 / 3.0).abs() < 1e-12);

        // constant kernel: every mixed norm equals the constant
        let c = 0.7;
        let n = 4;
        let konst = KernelMatrix {
            marks: (0..n).map(|i| Mark::Atom { index: i, value: i as f64 }).collect(),
            weights: vec![0.25; n],
            values: DMatrix::from_element(n, n, c),
        };
        for p1 in [1.0, 2.0, f64::INFINITY] {
            for p2 in [1.0, 2.0, f64::INFINITY] {
                assert!((mixed_norm(&konst, p1, p2) - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn operator_norm_of_constant_kernel_is_its_value() {
        let n = 5;
        let h = KernelMatrix {
            marks: (0..n).map(|i| Mark::Atom { index: i, value: i as f64 }).collect(),
            weights: vec![1.0 / n as f64; n],
            values: DMatrix::from_element(n, n, 1.0),
        };
        assert!((operator_norm(&h).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn operator_norm_matches_cubic_root_oracle() {
        // oracle: largest root of t^3 - t^2 - 2 t + 1, divided by 3
        let mut t = 1.8f64;
        for _ in 0..60 {
            let f = t * t * t - t * t - 2.0 * t + 1.0;
            let fp = 3.0 * t * t - 2.0 * t - 2.0;
            t -= f / fp;
        }
        let m = three_mark_model();
        let d = degree_kernel(&m, 1);
        let got = operator_norm(&d).unwrap();
        assert!((got - t / 3.0).abs() < 1e-12, "got {got}, oracle {}", t / 3.0);
        assert!((got - 0.60065).abs() < 1e-4);
    }

    #[test]
    fn operator_norm_rejects_asymmetric_input() {
        let mut values = DMatrix::from_element(2, 2, 1.0);
        values[(0, 1)] = 2.0;
        let h = KernelMatrix {
            marks: vec![
                Mark::Atom { index: 0, value: 0.0 },
                Mark::Atom { index: 1, value: 1.0 },
            ],
            weights: vec![0.5, 0.5],
            values,
        };
        assert!(matches!(operator_norm(&h), Err(Error::Asymmetric { .. })));
    }

    #[test]
    fn schur_ordering_on_random_kernels() {
        use rand::Rng;
        let mut rng = crate::rng::task_rng(31, 0);
        for _ in 0..25 {
            let n = rng.random_range(1..=8);
            let mut values = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v: f64 = rng.random::<f64>() * 3.0;
                    values[(i, j)] = v;
                    values[(j, i)] = v;
                }
            }
            let mut weights: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            let h = KernelMatrix {
                marks: (0..n).map(|i| Mark::Atom { index: i, value: i as f64 }).collect(),
                weights,
                values,
            };
            let op = operator_norm(&h).unwrap();
            assert!(op <= mixed_norm(&h, 1.0, f64::INFINITY) + 1e-10);
        }
    }

    /// Exact-rational enumeration oracle for the connectivity seeds.
    fn rational_seed(kind: SeedKind, lambda_num: i64, lambda_den: i64, a: usize, k_max: usize) -> Option<BigRational> {
        let lam = rat(lambda_num, lambda_den);
        let one = rat(1, 1);
        let r = match kind {
            SeedKind::I => &lam / (&one + &lam),
            SeedKind::J => &lam / (rat(2, 1) * (&one + &lam)),
        };
        let w = rat(1, 3);
        let mut best: Option<BigRational> = None;
        let mut rk = one.clone();
        for k in 1..=k_max {
            rk *= &r;
            let dk = brute_force_path(&k_rational(), &w, k);
            let min_b = dk[a].iter().cloned().reduce(|x, y| if y < x { y } else { x }).unwrap();
            let term = &rk * &min_b;
            if best.as_ref().map(|b| &term > b).unwrap_or(true) {
                best = Some(term);
            }
        }
        best.filter(|b| b > &rat(0, 1)).map(|b| b.recip())
    }

    #[test]
    fn connectivity_seed_matches_rational_oracle() {
        let m = three_mark_model();
        let a0 = m.atom(0).unwrap();

        let at0 = connectivity_seed(&m, 0.0, &a0, SeedKind::I, 64, 1).unwrap();
        assert!(at0.value.is_infinite());

        // frozen oracle values at lambda = 1: I(mark 1) = 12, J(mark 1) = 48
        assert_eq!(rational_seed(SeedKind::I, 1, 1, 0, 10), Some(rat(12, 1)));
        assert_eq!(rational_seed(SeedKind::J, 1, 1, 0, 10), Some(rat(48, 1)));

        let i0 = connectivity_seed(&m, 1.0, &a0, SeedKind::I, 64, 1).unwrap();
        assert!((i0.value - 12.0).abs() < 1e-9, "I = {}", i0.value);
        assert_eq!(i0.attained_k, Some(2));
        let j0 = connectivity_seed(&m, 1.0, &a0, SeedKind::J, 64, 1).unwrap();
        assert!((j0.value - 48.0).abs() < 1e-9, "J = {}", j0.value);
    }

    #[test]
    fn connectivity_seed_non_increasing_in_lambda() {
        let m = three_mark_model();
        let d = degree_kernel(&m, 1);
        let lambdas = [0.25, 0.5, 1.0, 2.0, 4.0];
        for kind in [SeedKind::I, SeedKind::J] {
            for a in 0..3 {
                let mut prev = f64::INFINITY;
                for &l in &lambdas {
                    let v = connectivity_seed_all(&d, l, kind, 64)[a].value;
                    assert!(v <= prev + 1e-9, "seed rose at lambda {l}");
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn derived_constants_at_zero_and_one() {
        let m = three_mark_model();
        let at0 = derived_constants(&m, 0.0, 0.3, 64, 1).unwrap();
        assert_eq!(at0.cbar, 1.0);
        for md in &at0.mean_degree_per_mark {
            assert_eq!(*md, 0.0);
        }
        for k in &at0.kappa_per_mark {
            assert!((k - (-0.3)).abs() < 1e-15);
        }

        // frozen oracle values: max_c J_{1,c} = 6912 (mark 3, k = 4),
        // max_c I_{1,c} = 432 (mark 3, k = 4)
        assert_eq!(rational_seed(SeedKind::J, 1, 1, 2, 12), Some(rat(6912, 1)));
        assert_eq!(rational_seed(SeedKind::I, 1, 1, 2, 12), Some(rat(432, 1)));

        let at1 = derived_constants(&m, 1.0, 0.0, 64, 1).unwrap();
        assert!((at1.cbar - 6913.0).abs() < 1e-6, "cbar {}", at1.cbar);
        let first = (1.0f64 + 432.0).powi(-2);
        let second = (1.0 / 6913.0) * (1.0 / 3.0f64).powi(2) / (1.0 + 4.0 / 3.0);
        assert!((at1.c_delta - first.min(second)).abs() < 1e-12);
    }

    #[test]
    fn envelope_and_lower_bound() {
        let m = three_mark_model();
        let at0 = branching_envelope_norm(&m, 0.0, 1).unwrap();
        let op = operator_norm(&degree_kernel(&m, 1)).unwrap();
        assert_eq!(at0.t_norm_bound, Some(op));
        assert!((at0.lambda_o_lower - 1.6649).abs() < 1e-3);

        let beyond = branching_envelope_norm(&m, 1.0 / op + 0.01, 1).unwrap();
        assert!(beyond.t_norm_bound.is_none());
    }

    #[test]
    fn branching_susceptibility_examples() {
        let m = three_mark_model();
        let at0 = branching_susceptibility(&m, 0.0, 1).unwrap();
        for x in &at0 {
            assert!((x - 1.0).abs() < 1e-12);
        }

        // oracle: residual check of the frozen solution (36, 33, 24) / 13
        // for (Id - K W) x = 1 in exact rationals
        let x = [rat(36, 13), rat(33, 13), rat(24, 13)];
        let k = k_rational();
        let w = rat(1, 3);
        for i in 0..3 {
            let mut lhs = x[i].clone();
            for j in 0..3 {
                lhs -= &k[i][j] * &w * &x[j];
            }
            assert_eq!(lhs, rat(1, 1));
        }

        let at1 = branching_susceptibility(&m, 1.0, 1).unwrap();
        let expect = [36.0 / 13.0, 33.0 / 13.0, 24.0 / 13.0];
        for i in 0..3 {
            assert!((at1[i] - expect[i]).abs() < 1e-10);
        }

        let op = operator_norm(&degree_kernel(&m, 1)).unwrap();
        assert!(branching_susceptibility(&m, 1.0 / op, 1).is_err());
    }

    #[test]
    fn branching_susceptibility_monotone_and_blows_up() {
        let m = three_mark_model();
        let op = operator_norm(&degree_kernel(&m, 1)).unwrap();
        let mut prev = vec![0.0; 3];
        for &frac in &[0.0, 0.3, 0.6, 0.9, 0.99] {
            let x = branching_susceptibility(&m, frac / op, 1).unwrap();
            for i in 0..3 {
                assert!(x[i] >= 1.0 - 1e-12);
                assert!(x[i] >= prev[i] - 1e-12);
            }
            prev = x;
        }
        let near = branching_susceptibility(&m, (1.0 - 1e-3) / op, 1).unwrap();
        let max = near.iter().cloned().fold(0.0, f64::max);
        assert!(max > 1e3, "max component {max}");
    }

    #[test]
    fn coarse_grain_bound_examples() {
        let b = coarse_grain_bound(1.0, 1.0, 2.0, 1).unwrap();
        assert!((b - std::f64::consts::LN_2).abs() < 1e-15);
        let b = coarse_grain_bound(1.0, 1.0, 1.0, 2).unwrap();
        assert!((b - 4.0 * std::f64::consts::LN_2).abs() < 1e-15);
        for d in 1..=3usize {
            let at = coarse_grain_bound(0.3, 0.7, 0.9, d).unwrap();
            let half = coarse_grain_bound(0.3, 0.7, 0.45, d).unwrap();
            assert!((half / at - (2.0f64).powi(d as i32)).abs() < 1e-12);
        }
        assert!(coarse_grain_bound(0.0, 1.0, 1.0, 1).is_err());
        assert!(coarse_grain_bound(1.1, 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn assumptions_on_the_three_mark_model() {
        let m = three_mark_model();
        let v = assumption_report(&m, 1.0, None, 16, 1).unwrap();
        assert!(v.d1_holds);
        assert_eq!(v.d1_sup_degree, 1.0);
        assert!(v.d2_holds);
        assert_eq!(v.d2_witness_k, Some(4));
        assert_eq!(v.t_status, TriangleStatus::Undetermined);

        let holds = assumption_report(&m, 1.0, Some((v.t_threshold / 10.0, 1e-9)), 16, 1).unwrap();
        assert_eq!(holds.t_status, TriangleStatus::Holds);
        let fails = assumption_report(&m, 1.0, Some((v.t_threshold * 10.0, 1e-9)), 16, 1).unwrap();
        assert_eq!(fails.t_status, TriangleStatus::Fails);
    }

    #[test]
    fn degenerate_disc_never_connects() {
        let m = ModelSpec {
            d: 1,
            adjacency: AdjacencySpec::BooleanDisc { r_min: 0.0, r_max: 1.0 },
            marks: MarkDistribution::Finite {
                weights: vec![WeightLit::Num(1.0)],
                values: Some(vec![0.0]),
            },
        }
        .build()
        .unwrap();
        let v = assumption_report(&m, 1.0, None, 32, 1).unwrap();
        assert!(!v.d2_holds);
        assert_eq!(v.d2_witness_k, None);
    }
}
