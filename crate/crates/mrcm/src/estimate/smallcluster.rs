//! Exact small-cluster probabilities by quadrature.
//!
//! The probability that the rooted cluster has exactly `n + 1` vertices is
//! an n-fold spatial integral over the positions and marks of the other
//! cluster members: a sum over the connected graphs on the `n + 1` labelled
//! vertices of the edge/non-edge products, times the exponential of the
//! expected number of Poisson points adjacent to the configuration. The
//! exclusion exponent is assembled by inclusion-exclusion from the degree
//! integrals, pairwise overlap integrals (closed forms per family) and,
//! for `n = 2`, the triple overlap.

use crate::error::{Error, Result};
use crate::model::{
    norm2, unit_ball_volume, unit_sphere_area, AdjacencySpec, Mark, Model, SpatialProfile,
};
use crate::quad::{adaptive_box, adaptive_simpson};

const QUAD_TOL: f64 = 1e-6;

/// Volume of the intersection of two balls with radii `r1`, `r2` whose
/// centers are `s` apart, for d <= 3.
pub fn ball_overlap_volume(d: usize, r1: f64, r2: f64, s: f64) -> f64 {
    if r1 <= 0.0 || r2 <= 0.0 || s >= r1 + r2 {
        return 0.0;
    }
    if s <= (r1 - r2).abs() {
        let r = r1.min(r2);
        return unit_ball_volume(d) * r.powi(d as i32);
    }
    match d {
        1 => (r1.min(s + r2) - (-r1).max(s - r2)).max(0.0),
        2 => {
            let d1 = (s * s + r1 * r1 - r2 * r2) / (2.0 * s);
            let d2 = s - d1;
            r1 * r1 * (d1 / r1).clamp(-1.0, 1.0).acos() - d1 * (r1 * r1 - d1 * d1).max(0.0).sqrt()
                + r2 * r2 * (d2 / r2).clamp(-1.0, 1.0).acos()
                - d2 * (r2 * r2 - d2 * d2).max(0.0).sqrt()
        }
        3 => {
            std::f64::consts::PI
                * (r1 + r2 - s).powi(2)
                * (s * s + 2.0 * s * (r1 + r2) - 3.0 * (r1 - r2) * (r1 - r2))
                / (12.0 * s)
        }
        _ => panic!("ball overlap implemented for d <= 3"),
    }
}

/// Pairwise overlap integral `int phi(y; b1, c) phi(y - z; b2, c) dy`.
fn overlap(model: &Model, z: &[f64], b1: &Mark, b2: &Mark, c: &Mark) -> f64 {
    let d = model.dim();
    let s = norm2(z).sqrt();
    match &model.spec().adjacency {
        AdjacencySpec::BooleanDisc { .. } => {
            ball_overlap_volume(d, b1.value() + c.value(), b2.value() + c.value(), s)
        }
        AdjacencySpec::Gaussian { .. } => {
            // product of two Gaussian bumps integrates to a Gaussian in z
            // with summed covariance
            model.gaussian_overlap(z, b1, b2, c).expect("gaussian family")
        }
        AdjacencySpec::Factorisable { profile, .. } => {
            let k1 = model.phi(&vec![0.0; d], b1, c) / profile_peak(profile);
            let k2 = model.phi(&vec![0.0; d], b2, c) / profile_peak(profile);
            if k1 == 0.0 || k2 == 0.0 {
                return 0.0;
            }
            let auto = match profile {
                SpatialProfile::UniformBox { half_width } => {
                    z.iter().map(|x| (2.0 * half_width - x.abs()).max(0.0)).product()
                }
                SpatialProfile::UniformBall { radius } => {
                    ball_overlap_volume(d, *radius, *radius, s)
                }
                SpatialProfile::Gaussian { sigma, scale } => {
                    scale
                        * scale
                        * (sigma * std::f64::consts::PI.sqrt()).powi(d as i32)
                        * (-0.25 * s * s / (sigma * sigma)).exp()
                }
            };
            k1 * k2 * auto
        }
    }
}

fn profile_peak(profile: &SpatialProfile) -> f64 {
    match profile {
        SpatialProfile::UniformBox { .. } | SpatialProfile::UniformBall { .. } => 1.0,
        SpatialProfile::Gaussian { scale, .. } => *scale,
    }
}

/// Triple overlap `int phi(y; a, c) phi(y - x1; c1, c) phi(y - x2; c2, c) dy`
/// in one dimension: closed form for indicator families, quadrature
/// otherwise.
fn triple_overlap_d1(
    model: &Model,
    x1: f64,
    x2: f64,
    a: &Mark,
    c1: &Mark,
    c2: &Mark,
    c: &Mark,
) -> f64 {
    match &model.spec().adjacency {
        AdjacencySpec::BooleanDisc { .. } => {
            let (r0, r1, r2) = (a.value() + c.value(), c1.value() + c.value(), c2.value() + c.value());
            let lo = (-r0).max(x1 - r1).max(x2 - r2);
            let hi = r0.min(x1 + r1).min(x2 + r2);
            (hi - lo).max(0.0)
        }
        AdjacencySpec::Factorisable {
            profile: SpatialProfile::UniformBox { half_width },
            ..
        } => {
            let k = model.phi(&[0.0], a, c) * model.phi(&[0.0], c1, c) * model.phi(&[0.0], c2, c);
            if k == 0.0 {
                return 0.0;
            }
            let h = *half_width;
            let lo = (-h).max(x1 - h).max(x2 - h);
            let hi = h.min(x1 + h).min(x2 + h);
            k * (hi - lo).max(0.0)
        }
        _ => {
            let range = model.interaction_range();
            let lo = x1.min(x2).min(0.0) - range;
            let hi = x1.max(x2).max(0.0) + range;
            adaptive_simpson(
                |y| {
                    model.phi(&[y], a, c)
                        * model.phi(&[y - x1], c1, c)
                        * model.phi(&[y - x2], c2, c)
                },
                lo,
                hi,
                QUAD_TOL,
            )
        }
    }
}

/// `P(|C(o_a)| = n + 1)` for n in {0, 1, 2} by exact quadrature.
///
/// `resolution` discretizes continuous mark spaces; finite alphabets enter
/// exactly. n = 1 supports d <= 3, n = 2 supports d = 1 (the outer
/// integral dimension grows as n * d).
pub fn exact_small_cluster_prob(
    model: &Model,
    lambda: f64,
    a: &Mark,
    n: usize,
    resolution: usize,
) -> Result<f64> {
    model.check_mark(a)?;
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be >= 0".into()));
    }
    let d = model.dim();
    let grid = model.mark_grid(resolution);
    let mean_degree: f64 =
        lambda * grid.iter().map(|(c, w)| w * model.degree(a, c)).sum::<f64>();

    match n {
        0 => Ok((-mean_degree).exp()),
        1 => {
            if d > 3 {
                return Err(Error::InvalidArgument(
                    "one-extra-vertex probability supports d <= 3".into(),
                ));
            }
            if lambda == 0.0 {
                return Ok(0.0);
            }
            let range = model.interaction_range();
            let mut total = 0.0;
            for (c1, w1) in &grid {
                // exclusion exponent via inclusion-exclusion:
                // sum_c w_c [D(a,c) + D(c1,c) - O(x; a, c1, c)]
                let base: f64 = grid
                    .iter()
                    .map(|(c, w)| w * (model.degree(a, c) + model.degree(c1, c)))
                    .sum();
                let exponent = |x: &[f64]| -> f64 {
                    let o: f64 =
                        grid.iter().map(|(c, w)| w * overlap(model, x, a, c1, c)).sum();
                    base - o
                };
                let integral = if model.is_isotropic() && d > 1 {
                    let f = |r: f64| {
                        let mut x = vec![0.0; d];
                        x[0] = r;
                        let phi = model.phi(&x, a, c1);
                        if phi == 0.0 {
                            return 0.0;
                        }
                        r.powi(d as i32 - 1) * phi * (-lambda * exponent(&x)).exp()
                    };
                    unit_sphere_area(d) * adaptive_simpson(f, 0.0, range, QUAD_TOL)
                } else {
                    let bounds = vec![(-range, range); d];
                    let mut f = |x: &[f64]| {
                        let phi = model.phi(x, a, c1);
                        if phi == 0.0 {
                            return 0.0;
                        }
                        phi * (-lambda * exponent(x)).exp()
                    };
                    adaptive_box(&mut f, &bounds, QUAD_TOL)
                };
                total += w1 * integral;
            }
            Ok(lambda * total)
        }
        2 => {
            if d != 1 {
                return Err(Error::InvalidArgument(
                    "two-extra-vertex probability supports d = 1".into(),
                ));
            }
            if lambda == 0.0 {
                return Ok(0.0);
            }
            let range = model.interaction_range();
            let r2 = 2.0 * range;
            let mut total = 0.0;
            for (c1, w1) in &grid {
                for (c2, w2) in &grid {
                    let base: f64 = grid
                        .iter()
                        .map(|(c, w)| {
                            w * (model.degree(a, c) + model.degree(c1, c) + model.degree(c2, c))
                        })
                        .sum();
                    let mut f = |x: &[f64]| -> f64 {
                        let (x1, x2) = (x[0], x[1]);
                        let p01 = model.phi(&[x1], a, c1);
                        let p02 = model.phi(&[x2], a, c2);
                        let p12 = model.phi(&[x2 - x1], c1, c2);
                        let graphs = p01 * p02 * (1.0 - p12)
                            + p01 * p12 * (1.0 - p02)
                            + p02 * p12 * (1.0 - p01)
                            + p01 * p02 * p12;
                        if graphs == 0.0 {
                            return 0.0;
                        }
                        let mut excl = base;
                        for (c, w) in &grid {
                            excl -= w
                                * (overlap(model, &[x1], a, c1, c)
                                    + overlap(model, &[x2], a, c2, c)
                                    + overlap(model, &[x2 - x1], c1, c2, c)
                                    - triple_overlap_d1(model, x1, x2, a, c1, c2, c));
                        }
                        graphs * (-lambda * excl).exp()
                    };
                    let bounds = [(-r2, r2), (-r2, r2)];
                    total += w1 * w2 * adaptive_box(&mut f, &bounds, QUAD_TOL);
                }
            }
            Ok(0.5 * lambda * lambda * total)
        }
        _ => Err(Error::InvalidArgument(format!(
            "small-cluster probability supports n <= 2, got {n}"
        ))),
    }
}
