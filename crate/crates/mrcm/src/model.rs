//! Mark spaces, mark distributions and the three adjacency families.
//!
//! A model is the triple (dimension, adjacency family, mark distribution).
//! The adjacency function `phi(dx; a, b)` gives the probability that two
//! vertices with spatial displacement `dx` and marks `a`, `b` are joined by
//! an edge. Three families are supported:
//!
//! * `boolean_disc` — marks are radii, `phi = 1` iff `|dx| < a + b`;
//! * `gaussian` — a scaled centered Gaussian density with mark-dependent
//!   covariance and constant integral;
//! * `factorisable` — `phi(dx; a, b) = psi(dx) * K(a, b)` for a spatial
//!   profile `psi` and a mark kernel `K` with entries in `[0, 1]`.

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};

/// Probability below which an adjacency function with unbounded support is
/// treated as zero by the spatial-hash neighbourhood queries.
pub const PHI_TRUNCATION_EPS: f64 = 1e-12;

/// A single mark: an atom of a finite alphabet (carrying an optional
/// numeric attribute such as a radius) or a real scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mark {
    Atom { index: usize, value: f64 },
    Real(f64),
}

impl Mark {
    /// Numeric attribute of the mark (the radius for disc models).
    pub fn value(&self) -> f64 {
        match self {
            Mark::Atom { value, .. } => *value,
            Mark::Real(v) => *v,
        }
    }

    /// Alphabet index, when the mark is an atom.
    pub fn index(&self) -> Option<usize> {
        match self {
            Mark::Atom { index, .. } => Some(*index),
            Mark::Real(_) => None,
        }
    }
}

impl fmt::Display for Mark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mark::Atom { index, .. } => write!(f, "{index}"),
            Mark::Real(v) => write!(f, "{v}"),
        }
    }
}

/// A weight that may be given exactly as `"p/q"` or as a float.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum WeightLit {
    Num(f64),
    Frac(String),
}

impl WeightLit {
    pub fn to_f64(&self) -> Result<f64> {
        match self {
            WeightLit::Num(x) => Ok(*x),
            WeightLit::Frac(s) => {
                let r = parse_fraction(s)?;
                Ok(rational_to_f64(&r))
            }
        }
    }

    pub fn to_rational(&self) -> Result<BigRational> {
        match self {
            WeightLit::Num(x) => BigRational::from_float(*x)
                .ok_or_else(|| Error::InvalidModel(format!("non-finite weight {x}"))),
            WeightLit::Frac(s) => parse_fraction(s),
        }
    }
}

fn parse_fraction(s: &str) -> Result<BigRational> {
    let bad = || Error::InvalidModel(format!("cannot parse rational literal {s:?}"));
    let mut parts = s.splitn(2, '/');
    let num: i64 = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
    let den: i64 = match parts.next() {
        Some(d) => d.trim().parse().map_err(|_| bad())?,
        None => 1,
    };
    if den == 0 {
        return Err(bad());
    }
    Ok(BigRational::new(BigInt::from(num), BigInt::from(den)))
}

pub(crate) fn rational_to_f64(r: &BigRational) -> f64 {
    num_traits::ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
}

/// Mark distribution: a finite weighted alphabet or a uniform real interval.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarkDistribution {
    Finite {
        weights: Vec<WeightLit>,
        /// Numeric attribute per atom (radii for disc models). Defaults to
        /// the atom index when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        values: Option<Vec<f64>>,
    },
    UniformInterval { lo: f64, hi: f64 },
}

/// Spatial profile `psi` of the factorisable family. Only profiles with a
/// known integral and an exact sampler are admitted.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialProfile {
    /// Indicator of the box `[-half_width, half_width]^d`.
    UniformBox { half_width: f64 },
    /// Indicator of the centered ball with the given radius.
    UniformBall { radius: f64 },
    /// `scale * exp(-|x|^2 / (2 sigma^2))` with `scale <= 1`.
    Gaussian { sigma: f64, scale: f64 },
}

/// Mark kernel `K` of the factorisable family.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarkKernel {
    /// Symmetric matrix over a finite alphabet.
    Matrix { values: Vec<Vec<f64>> },
    /// Constant kernel, valid for any mark space.
    Constant { value: f64 },
}

/// Covariance specification for the Gaussian family.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    /// `Sigma(a, b) = value * Id` for every mark pair.
    Spherical { value: f64 },
    /// `Sigma(a, b) = values[a][b] * Id` over a finite alphabet.
    SphericalTable { values: Vec<Vec<f64>> },
    /// One explicit symmetric positive-definite `d x d` matrix shared by
    /// every mark pair.
    Matrix { values: Vec<Vec<f64>> },
}

/// Adjacency family and its parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdjacencySpec {
    BooleanDisc { r_min: f64, r_max: f64 },
    Gaussian { amplitude: f64, sigma: SigmaSpec },
    Factorisable { profile: SpatialProfile, mark_kernel: MarkKernel },
}

/// The complete definition of one marked random connection model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub d: usize,
    pub adjacency: AdjacencySpec,
    pub marks: MarkDistribution,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidModel(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }

    /// Validates the spec and precomputes the runtime caches.
    pub fn build(self) -> Result<Model> {
        Model::new(self)
    }
}

/// Volume of the unit ball in `d` dimensions, by the two-step recurrence.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(d - 2) * 2.0 * std::f64::consts::PI / d as f64,
    }
}

/// Surface area of the unit sphere in `d` dimensions.
pub fn unit_sphere_area(d: usize) -> f64 {
    d as f64 * unit_ball_volume(d)
}

#[derive(Debug, Clone)]
enum SigmaResolved {
    Spherical { value: f64 },
    SphericalTable { values: Vec<Vec<f64>> },
    Matrix {
        det: f64,
        inv: DMatrix<f64>,
        chol_l: DMatrix<f64>,
        eig_max: f64,
    },
}

#[derive(Debug, Clone)]
struct MarksResolved {
    /// Finite alphabet: normalized weights; empty for interval marks.
    weights: Vec<f64>,
    exact_weights: Option<Vec<BigRational>>,
    values: Vec<f64>,
    interval: Option<(f64, f64)>,
}

/// A validated model with precomputed sampling caches.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    d: usize,
    sigma: Option<SigmaResolved>,
    marks: MarksResolved,
    psi_integral: f64,
    /// Largest displacement norm at which any mark pair can still have
    /// `phi >= PHI_TRUNCATION_EPS`.
    interaction_range: f64,
    /// Upper bound on the adjacency mass ignored by range truncation,
    /// relative to the degree; zero for compactly supported families.
    truncated_mass: f64,
    fingerprint: u64,
}

impl Model {
    fn new(spec: ModelSpec) -> Result<Self> {
        if spec.d == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        let d = spec.d;
        let marks = resolve_marks(&spec)?;
        let mut sigma = None;
        let mut psi_integral = 0.0;

        match &spec.adjacency {
            AdjacencySpec::BooleanDisc { r_min, r_max } => {
                if !(0.0 <= *r_min && *r_min <= *r_max && r_max.is_finite() && *r_max > 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "boolean_disc requires 0 <= r_min <= r_max < inf and r_max > 0, got [{r_min}, {r_max}]"
                    )));
                }
                let check = |r: f64| -> Result<()> {
                    if r < *r_min - 1e-12 || r > *r_max + 1e-12 {
                        Err(Error::InvalidModel(format!(
                            "mark radius {r} outside [{r_min}, {r_max}]"
                        )))
                    } else {
                        Ok(())
                    }
                };
                if let Some((lo, hi)) = marks.interval {
                    check(lo)?;
                    check(hi)?;
                } else {
                    if spec_marks_values_missing(&spec) {
                        return Err(Error::InvalidModel(
                            "boolean_disc with finite marks requires explicit radius values".into(),
                        ));
                    }
                    for &v in &marks.values {
                        check(v)?;
                    }
                }
            }
            AdjacencySpec::Gaussian { amplitude, sigma: s } => {
                if !(*amplitude > 0.0 && amplitude.is_finite()) {
                    return Err(Error::InvalidModel("gaussian amplitude must be positive".into()));
                }
                let resolved = resolve_sigma(s, d, &marks)?;
                // phi(0) <= 1 for every pair.
                let max_norm = match &resolved {
                    SigmaResolved::Spherical { value } => {
                        amplitude * (2.0 * std::f64::consts::PI * value).powi(d as i32).sqrt().recip()
                    }
                    SigmaResolved::SphericalTable { values } => {
                        let vmin = values
                            .iter()
                            .flatten()
                            .cloned()
                            .fold(f64::INFINITY, f64::min);
                        amplitude * (2.0 * std::f64::consts::PI * vmin).powi(d as i32).sqrt().recip()
                    }
                    SigmaResolved::Matrix { det, .. } => {
                        amplitude
                            * ((2.0 * std::f64::consts::PI).powi(d as i32) * det).sqrt().recip()
                    }
                };
                if max_norm > 1.0 + 1e-12 {
                    return Err(Error::InvalidModel(format!(
                        "gaussian amplitude too large: phi(0) = {max_norm} exceeds 1"
                    )));
                }
                sigma = Some(resolved);
            }
            AdjacencySpec::Factorisable { profile, mark_kernel } => {
                psi_integral = validate_profile(profile, d)?;
                match mark_kernel {
                    MarkKernel::Matrix { values } => {
                        if marks.interval.is_some() {
                            return Err(Error::InvalidModel(
                                "matrix mark kernel requires a finite mark alphabet".into(),
                            ));
                        }
                        let n = marks.weights.len();
                        if values.len() != n || values.iter().any(|row| row.len() != n) {
                            return Err(Error::InvalidModel(format!(
                                "mark kernel must be {n} x {n} to match the alphabet"
                            )));
                        }
                        for i in 0..n {
                            for j in 0..n {
                                let k = values[i][j];
                                if !(0.0..=1.0).contains(&k) {
                                    return Err(Error::InvalidModel(format!(
                                        "mark kernel entry K({i},{j}) = {k} outside [0, 1]"
                                    )));
                                }
                                if (values[i][j] - values[j][i]).abs() > 1e-12 {
                                    return Err(Error::InvalidModel(
                                        "mark kernel must be symmetric".into(),
                                    ));
                                }
                            }
                        }
                    }
                    MarkKernel::Constant { value } => {
                        if !(0.0..=1.0).contains(value) {
                            return Err(Error::InvalidModel(format!(
                                "constant mark kernel {value} outside [0, 1]"
                            )));
                        }
                    }
                }
            }
        }

        let fingerprint = {
            let mut h = DefaultHasher::new();
            serde_json::to_string(&spec)
                .expect("model spec serializes")
                .hash(&mut h);
            h.finish()
        };

        let mut model = Model {
            spec,
            d,
            sigma,
            marks,
            psi_integral,
            interaction_range: 0.0,
            truncated_mass: 0.0,
            fingerprint,
        };
        model.interaction_range = model.compute_interaction_range();
        model.truncated_mass = model.compute_truncated_mass();
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Stable hash of the defining spec, used to tag derived artifacts.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn mark_distribution(&self) -> &MarkDistribution {
        &self.spec.marks
    }

    /// Exact rational weights, when the mark alphabet was declared with
    /// exactly representable weights.
    pub fn exact_weights(&self) -> Option<&[BigRational]> {
        self.marks.exact_weights.as_deref()
    }

    /// The atom with the given alphabet index.
    pub fn atom(&self, index: usize) -> Result<Mark> {
        if self.marks.interval.is_some() {
            return Err(Error::MarkOutOfDomain(
                "model has a continuous mark space".into(),
            ));
        }
        if index >= self.marks.values.len() {
            return Err(Error::MarkOutOfDomain(format!(
                "atom index {index} >= alphabet size {}",
                self.marks.values.len()
            )));
        }
        Ok(Mark::Atom { index, value: self.marks.values[index] })
    }

    /// Checks that a mark belongs to this model's mark space.
    pub fn check_mark(&self, mark: &Mark) -> Result<()> {
        match (mark, &self.marks.interval) {
            (Mark::Atom { index, .. }, None) => {
                if *index < self.marks.values.len() {
                    Ok(())
                } else {
                    Err(Error::MarkOutOfDomain(format!(
                        "atom index {index} >= alphabet size {}",
                        self.marks.values.len()
                    )))
                }
            }
            (Mark::Real(v), Some((lo, hi))) => {
                if *v >= lo - 1e-12 && *v <= hi + 1e-12 {
                    Ok(())
                } else {
                    Err(Error::MarkOutOfDomain(format!(
                        "value {v} outside [{lo}, {hi}]"
                    )))
                }
            }
            (m, _) => Err(Error::MarkOutOfDomain(format!(
                "mark {m} does not match the model's mark space"
            ))),
        }
    }

    /// Adjacency probability `phi(dx; a, b)`, with input validation.
    pub fn adjacency_prob(&self, dx: &[f64], a: &Mark, b: &Mark) -> Result<f64> {
        if dx.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: dx.len() });
        }
        self.check_mark(a)?;
        self.check_mark(b)?;
        Ok(self.phi(dx, a, b))
    }

    /// Adjacency probability without validation; inputs must be a valid
    /// displacement and marks of this model.
    pub fn phi(&self, dx: &[f64], a: &Mark, b: &Mark) -> f64 {
        match &self.spec.adjacency {
            AdjacencySpec::BooleanDisc { .. } => {
                let r = a.value() + b.value();
                if norm2(dx) < r * r {
                    1.0
                } else {
                    0.0
                }
            }
            AdjacencySpec::Gaussian { amplitude, .. } => {
                match self.sigma.as_ref().expect("gaussian model has sigma") {
                    SigmaResolved::Spherical { value } => {
                        spherical_gaussian(*amplitude, *value, self.d, norm2(dx))
                    }
                    SigmaResolved::SphericalTable { values } => {
                        let (i, j) = (a.index().unwrap_or(0), b.index().unwrap_or(0));
                        spherical_gaussian(*amplitude, values[i][j], self.d, norm2(dx))
                    }
                    SigmaResolved::Matrix { det, inv, .. } => {
                        let x = nalgebra::DVector::from_column_slice(dx);
                        let q = (inv * &x).dot(&x);
                        amplitude
                            * ((2.0 * std::f64::consts::PI).powi(self.d as i32) * det)
                                .sqrt()
                                .recip()
                            * (-0.5 * q).exp()
                    }
                }
            }
            AdjacencySpec::Factorisable { profile, mark_kernel } => {
                let k = self.mark_kernel_value(mark_kernel, a, b);
                if k == 0.0 {
                    return 0.0;
                }
                profile_value(profile, dx) * k
            }
        }
    }

    fn mark_kernel_value(&self, kernel: &MarkKernel, a: &Mark, b: &Mark) -> f64 {
        match kernel {
            MarkKernel::Matrix { values } => {
                let (i, j) = (a.index().unwrap_or(0), b.index().unwrap_or(0));
                values[i][j]
            }
            MarkKernel::Constant { value } => *value,
        }
    }

    /// Closed-form degree kernel `D(a, b) = integral of phi(.; a, b)`.
    pub fn degree(&self, a: &Mark, b: &Mark) -> f64 {
        match &self.spec.adjacency {
            AdjacencySpec::BooleanDisc { .. } => {
                unit_ball_volume(self.d) * (a.value() + b.value()).powi(self.d as i32)
            }
            AdjacencySpec::Gaussian { amplitude, .. } => *amplitude,
            AdjacencySpec::Factorisable { mark_kernel, .. } => {
                self.psi_integral * self.mark_kernel_value(mark_kernel, a, b)
            }
        }
    }

    /// An upper bound on `D(b, c)` over every mark `c` in the mark space.
    pub fn degree_row_bound(&self, b: &Mark) -> f64 {
        match &self.spec.adjacency {
            AdjacencySpec::BooleanDisc { .. } => {
                let sup = self
                    .marks
                    .interval
                    .map(|(_, hi)| hi)
                    .unwrap_or_else(|| self.marks.values.iter().cloned().fold(0.0, f64::max));
                unit_ball_volume(self.d) * (b.value() + sup).powi(self.d as i32)
            }
            AdjacencySpec::Gaussian { amplitude, .. } => *amplitude,
            AdjacencySpec::Factorisable { mark_kernel, .. } => {
                let kmax = match mark_kernel {
                    MarkKernel::Matrix { values } => values[b.index().unwrap_or(0)]
                        .iter()
                        .cloned()
                        .fold(0.0, f64::max),
                    MarkKernel::Constant { value } => *value,
                };
                self.psi_integral * kmax
            }
        }
    }

    /// Integral of the spatial profile for factorisable models.
    pub fn psi_integral(&self) -> f64 {
        self.psi_integral
    }

    /// For the Gaussian family: `int phi(y; b1, c) phi(y - z; b2, c) dy`,
    /// the Gaussian-in-z overlap with summed covariance. `None` for the
    /// other families.
    pub(crate) fn gaussian_overlap(
        &self,
        z: &[f64],
        b1: &Mark,
        b2: &Mark,
        c: &Mark,
    ) -> Option<f64> {
        let amplitude = match &self.spec.adjacency {
            AdjacencySpec::Gaussian { amplitude, .. } => *amplitude,
            _ => return None,
        };
        let d = self.d as i32;
        let two_pi = 2.0 * std::f64::consts::PI;
        Some(match self.sigma.as_ref().expect("gaussian model has sigma") {
            SigmaResolved::Spherical { value } => {
                let s = 2.0 * value;
                amplitude * amplitude * (two_pi * s).powi(d).sqrt().recip()
                    * (-0.5 * norm2(z) / s).exp()
            }
            SigmaResolved::SphericalTable { values } => {
                let (i, j, k) = (
                    b1.index().unwrap_or(0),
                    b2.index().unwrap_or(0),
                    c.index().unwrap_or(0),
                );
                let s = values[i][k] + values[j][k];
                amplitude * amplitude * (two_pi * s).powi(d).sqrt().recip()
                    * (-0.5 * norm2(z) / s).exp()
            }
            SigmaResolved::Matrix { det, inv, .. } => {
                let x = nalgebra::DVector::from_column_slice(z);
                let q = (inv * &x).dot(&x);
                amplitude * amplitude
                    * (two_pi.powi(d) * 2f64.powi(d) * det).sqrt().recip()
                    * (-0.25 * q).exp()
            }
        })
    }

    /// Draws one mark from the model's mark distribution.
    pub fn sample_mark<R: Rng + ?Sized>(&self, rng: &mut R) -> Mark {
        sample_mark(&self.spec.marks, &self.marks, rng)
    }

    /// Draws a displacement with density `phi(.; a, b) / D(a, b)`.
    pub fn sample_displacement<R: Rng + ?Sized>(
        &self,
        a: &Mark,
        b: &Mark,
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<()> {
        debug_assert_eq!(out.len(), self.d);
        if self.degree(a, b) <= 0.0 {
            return Err(Error::EmptySupport { a: a.to_string(), b: b.to_string() });
        }
        match &self.spec.adjacency {
            AdjacencySpec::BooleanDisc { .. } => {
                sample_uniform_ball(a.value() + b.value(), rng, out);
            }
            AdjacencySpec::Gaussian { .. } => {
                match self.sigma.as_ref().expect("gaussian model has sigma") {
                    SigmaResolved::Spherical { value } => {
                        let s = value.sqrt();
                        for o in out.iter_mut() {
                            let z: f64 = StandardNormal.sample(rng);
                            *o = s * z;
                        }
                    }
                    SigmaResolved::SphericalTable { values } => {
                        let (i, j) = (a.index().unwrap_or(0), b.index().unwrap_or(0));
                        let s = values[i][j].sqrt();
                        for o in out.iter_mut() {
                            let z: f64 = StandardNormal.sample(rng);
                            *o = s * z;
                        }
                    }
                    SigmaResolved::Matrix { chol_l, .. } => {
                        let z = nalgebra::DVector::from_fn(self.d, |_, _| {
                            StandardNormal.sample(rng)
                        });
                        let x = chol_l * z;
                        out.copy_from_slice(x.as_slice());
                    }
                }
            }
            AdjacencySpec::Factorisable { profile, .. } => {
                sample_profile(profile, rng, out);
            }
        }
        Ok(())
    }

    /// Quadrature grid over the mark space: finite alphabets verbatim,
    /// continuous intervals as midpoint nodes.
    pub fn mark_grid(&self, resolution: usize) -> Vec<(Mark, f64)> {
        mark_grid(&self.spec.marks, resolution)
    }

    /// Displacement norm beyond which `phi < PHI_TRUNCATION_EPS` for every
    /// mark pair.
    pub fn interaction_range(&self) -> f64 {
        self.interaction_range
    }

    /// Upper bound on the relative adjacency mass beyond the interaction
    /// range (zero for compactly supported families).
    pub fn truncated_mass(&self) -> f64 {
        self.truncated_mass
    }

    /// Whether `phi(.; a, b)` is a radial function for every mark pair.
    pub fn is_isotropic(&self) -> bool {
        match &self.spec.adjacency {
            AdjacencySpec::BooleanDisc { .. } => true,
            AdjacencySpec::Gaussian { .. } => matches!(
                self.sigma,
                Some(SigmaResolved::Spherical { .. }) | Some(SigmaResolved::SphericalTable { .. })
            ),
            AdjacencySpec::Factorisable { profile, .. } => match profile {
                SpatialProfile::UniformBox { .. } => self.d == 1,
                SpatialProfile::UniformBall { .. } | SpatialProfile::Gaussian { .. } => true,
            },
        }
    }

    fn compute_interaction_range(&self) -> f64 {
        match &self.spec.adjacency {
            AdjacencySpec::BooleanDisc { .. } => {
                let sup = self
                    .marks
                    .interval
                    .map(|(_, hi)| hi)
                    .unwrap_or_else(|| self.marks.values.iter().cloned().fold(0.0, f64::max));
                2.0 * sup
            }
            AdjacencySpec::Gaussian { amplitude, .. } => {
                let (vmax, phi0_max) = match self.sigma.as_ref().unwrap() {
                    SigmaResolved::Spherical { value } => {
                        (*value, spherical_gaussian(*amplitude, *value, self.d, 0.0))
                    }
                    SigmaResolved::SphericalTable { values } => {
                        let vmax = values.iter().flatten().cloned().fold(0.0, f64::max);
                        let vmin = values.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
                        (vmax, spherical_gaussian(*amplitude, vmin, self.d, 0.0))
                    }
                    SigmaResolved::Matrix { det, eig_max, .. } => {
                        let phi0 = amplitude
                            * ((2.0 * std::f64::consts::PI).powi(self.d as i32) * det)
                                .sqrt()
                                .recip();
                        (*eig_max, phi0)
                    }
                };
                let ratio = (phi0_max / PHI_TRUNCATION_EPS).max(1.0);
                (2.0 * vmax * ratio.ln()).sqrt()
            }
            AdjacencySpec::Factorisable { profile, .. } => match profile {
                SpatialProfile::UniformBox { half_width } => half_width * (self.d as f64).sqrt(),
                SpatialProfile::UniformBall { radius } => *radius,
                SpatialProfile::Gaussian { sigma, scale } => {
                    let ratio = (scale / PHI_TRUNCATION_EPS).max(1.0);
                    sigma * (2.0 * ratio.ln()).sqrt()
                }
            },
        }
    }

    fn compute_truncated_mass(&self) -> f64 {
        let radial_tail = |amp: f64, v: f64| -> f64 {
            // integral over |x| > R of amp * exp(-|x|^2/(2v)) dx, relative
            // to the full integral amp * (2 pi v)^{d/2}.
            let r0 = self.interaction_range;
            let s = v.sqrt();
            let d = self.d;
            let full = (2.0 * std::f64::consts::PI * v).powi(d as i32).sqrt();
            let f = |r: f64| r.powi(d as i32 - 1) * (-r * r / (2.0 * v)).exp();
            let mut tail = 0.0;
            let steps = 2000;
            let hi = r0 + 12.0 * s;
            let h = (hi - r0) / steps as f64;
            for i in 0..steps {
                let r = r0 + (i as f64 + 0.5) * h;
                tail += f(r) * h;
            }
            unit_sphere_area(d) * tail / full * amp / amp
        };
        match &self.spec.adjacency {
            AdjacencySpec::BooleanDisc { .. } => 0.0,
            AdjacencySpec::Gaussian { .. } => match self.sigma.as_ref().unwrap() {
                SigmaResolved::Spherical { value } => radial_tail(1.0, *value),
                SigmaResolved::SphericalTable { values } => {
                    let vmax = values.iter().flatten().cloned().fold(0.0, f64::max);
                    radial_tail(1.0, vmax)
                }
                SigmaResolved::Matrix { eig_max, .. } => radial_tail(1.0, *eig_max),
            },
            AdjacencySpec::Factorisable { profile, .. } => match profile {
                SpatialProfile::Gaussian { sigma, .. } => radial_tail(1.0, sigma * sigma),
                _ => 0.0,
            },
        }
    }
}

fn spec_marks_values_missing(spec: &ModelSpec) -> bool {
    matches!(&spec.marks, MarkDistribution::Finite { values: None, .. })
}

fn spherical_gaussian(amplitude: f64, v: f64, d: usize, dist2: f64) -> f64 {
    amplitude * (2.0 * std::f64::consts::PI * v).powi(d as i32).sqrt().recip()
        * (-0.5 * dist2 / v).exp()
}

fn profile_value(profile: &SpatialProfile, dx: &[f64]) -> f64 {
    match profile {
        SpatialProfile::UniformBox { half_width } => {
            if dx.iter().all(|x| x.abs() < *half_width) {
                1.0
            } else {
                0.0
            }
        }
        SpatialProfile::UniformBall { radius } => {
            if norm2(dx) < radius * radius {
                1.0
            } else {
                0.0
            }
        }
        SpatialProfile::Gaussian { sigma, scale } => {
            scale * (-0.5 * norm2(dx) / (sigma * sigma)).exp()
        }
    }
}

fn validate_profile(profile: &SpatialProfile, d: usize) -> Result<f64> {
    match profile {
        SpatialProfile::UniformBox { half_width } => {
            if !(half_width.is_finite() && *half_width > 0.0) {
                return Err(Error::InvalidModel("box half_width must be positive".into()));
            }
            Ok((2.0 * half_width).powi(d as i32))
        }
        SpatialProfile::UniformBall { radius } => {
            if !(radius.is_finite() && *radius > 0.0) {
                return Err(Error::InvalidModel("ball radius must be positive".into()));
            }
            Ok(unit_ball_volume(d) * radius.powi(d as i32))
        }
        SpatialProfile::Gaussian { sigma, scale } => {
            if !(sigma.is_finite() && *sigma > 0.0) {
                return Err(Error::InvalidModel("profile sigma must be positive".into()));
            }
            if !(0.0 < *scale && *scale <= 1.0) {
                return Err(Error::InvalidModel("profile scale must lie in (0, 1]".into()));
            }
            Ok(scale * (2.0 * std::f64::consts::PI * sigma * sigma).powi(d as i32).sqrt())
        }
    }
}

fn resolve_sigma(spec: &SigmaSpec, d: usize, marks: &MarksResolved) -> Result<SigmaResolved> {
    match spec {
        SigmaSpec::Spherical { value } => {
            if !(value.is_finite() && *value > 0.0) {
                return Err(Error::InvalidModel("sigma value must be positive".into()));
            }
            Ok(SigmaResolved::Spherical { value: *value })
        }
        SigmaSpec::SphericalTable { values } => {
            if marks.interval.is_some() {
                return Err(Error::InvalidModel(
                    "spherical_table sigma requires a finite mark alphabet".into(),
                ));
            }
            let n = marks.weights.len();
            if values.len() != n || values.iter().any(|row| row.len() != n) {
                return Err(Error::InvalidModel(format!(
                    "sigma table must be {n} x {n} to match the alphabet"
                )));
            }
            for i in 0..n {
                for j in 0..n {
                    if !(values[i][j].is_finite() && values[i][j] > 0.0) {
                        return Err(Error::InvalidModel("sigma entries must be positive".into()));
                    }
                    if (values[i][j] - values[j][i]).abs() > 1e-12 {
                        return Err(Error::InvalidModel("sigma table must be symmetric".into()));
                    }
                }
            }
            Ok(SigmaResolved::SphericalTable { values: values.clone() })
        }
        SigmaSpec::Matrix { values } => {
            if values.len() != d || values.iter().any(|row| row.len() != d) {
                return Err(Error::InvalidModel(format!("sigma matrix must be {d} x {d}")));
            }
            let m = DMatrix::from_fn(d, d, |i, j| values[i][j]);
            if (&m - m.transpose()).abs().max() > 1e-10 {
                return Err(Error::InvalidModel("sigma matrix must be symmetric".into()));
            }
            let chol = m.clone().cholesky().ok_or_else(|| {
                Error::InvalidModel("sigma matrix must be positive definite".into())
            })?;
            let det = m.determinant();
            let inv = m
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::InvalidModel("sigma matrix is singular".into()))?;
            let eig_max = m
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(0.0, f64::max);
            Ok(SigmaResolved::Matrix { det, inv, chol_l: chol.l(), eig_max })
        }
    }
}

fn resolve_marks(spec: &ModelSpec) -> Result<MarksResolved> {
    match &spec.marks {
        MarkDistribution::Finite { weights, values } => {
            if weights.is_empty() {
                return Err(Error::InvalidModel("finite mark alphabet is empty".into()));
            }
            let mut w = Vec::with_capacity(weights.len());
            let mut exact = Vec::with_capacity(weights.len());
            let mut all_exact = true;
            for lit in weights {
                let x = lit.to_f64()?;
                if !(x.is_finite() && x >= 0.0) {
                    return Err(Error::InvalidModel(format!("weight {x} must be >= 0")));
                }
                w.push(x);
                match lit.to_rational() {
                    Ok(r) if !r.is_negative() => exact.push(r),
                    _ => all_exact = false,
                }
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidModel(format!(
                    "weights must sum to 1 within 1e-12, got {sum}"
                )));
            }
            let exact_weights = if all_exact {
                let total: BigRational = exact.iter().cloned().sum();
                if total == BigRational::one() {
                    Some(exact)
                } else {
                    None
                }
            } else {
                None
            };
            let vals = match values {
                Some(v) => {
                    if v.len() != w.len() {
                        return Err(Error::InvalidModel(
                            "values and weights must have the same length".into(),
                        ));
                    }
                    v.clone()
                }
                None => (0..w.len()).map(|i| i as f64).collect(),
            };
            Ok(MarksResolved { weights: w, exact_weights, values: vals, interval: None })
        }
        MarkDistribution::UniformInterval { lo, hi } => {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidModel(format!(
                    "uniform_interval requires finite lo <= hi, got [{lo}, {hi}]"
                )));
            }
            Ok(MarksResolved {
                weights: Vec::new(),
                exact_weights: None,
                values: Vec::new(),
                interval: Some((*lo, *hi)),
            })
        }
    }
}

fn sample_mark<R: Rng + ?Sized>(
    dist: &MarkDistribution,
    resolved: &MarksResolved,
    rng: &mut R,
) -> Mark {
    match dist {
        MarkDistribution::Finite { .. } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let n = resolved.weights.len();
            for (i, w) in resolved.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    return Mark::Atom { index: i, value: resolved.values[i] };
                }
            }
            Mark::Atom { index: n - 1, value: resolved.values[n - 1] }
        }
        MarkDistribution::UniformInterval { lo, hi } => {
            let u: f64 = rng.random();
            Mark::Real(lo + u * (hi - lo))
        }
    }
}

/// Quadrature grid over a mark distribution: finite atoms verbatim,
/// continuous intervals as `resolution` midpoint nodes with equal weights.
pub fn mark_grid(dist: &MarkDistribution, resolution: usize) -> Vec<(Mark, f64)> {
    match dist {
        MarkDistribution::Finite { weights, values } => {
            let n = weights.len();
            let vals: Vec<f64> = match values {
                Some(v) => v.clone(),
                None => (0..n).map(|i| i as f64).collect(),
            };
            weights
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    (
                        Mark::Atom { index: i, value: vals[i] },
                        w.to_f64().expect("validated weight"),
                    )
                })
                .collect()
        }
        MarkDistribution::UniformInterval { lo, hi } => {
            let n = resolution.max(1);
            let h = (hi - lo) / n as f64;
            (0..n)
                .map(|i| (Mark::Real(lo + (i as f64 + 0.5) * h), 1.0 / n as f64))
                .collect()
        }
    }
}

/// Uniform sample from the centered ball with the given radius.
fn sample_uniform_ball<R: Rng + ?Sized>(radius: f64, rng: &mut R, out: &mut [f64]) {
    let d = out.len();
    if d == 1 {
        let u: f64 = rng.random();
        out[0] = radius * (2.0 * u - 1.0);
        return;
    }
    loop {
        let mut n2 = 0.0;
        for o in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *o = z;
            n2 += z * z;
        }
        if n2 > 0.0 {
            let u: f64 = rng.random();
            let scale = radius * u.powf(1.0 / d as f64) / n2.sqrt();
            for o in out.iter_mut() {
                *o *= scale;
            }
            return;
        }
    }
}

fn sample_profile<R: Rng + ?Sized>(profile: &SpatialProfile, rng: &mut R, out: &mut [f64]) {
    match profile {
        SpatialProfile::UniformBox { half_width } => {
            for o in out.iter_mut() {
                let u: f64 = rng.random();
                *o = half_width * (2.0 * u - 1.0);
            }
        }
        SpatialProfile::UniformBall { radius } => sample_uniform_ball(*radius, rng, out),
        SpatialProfile::Gaussian { sigma, .. } => {
            for o in out.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *o = sigma * z;
            }
        }
    }
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}
