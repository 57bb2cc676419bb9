//! Exact rational kernels for finite-mark models whose degree kernel is
//! rational: factorisable models with a box profile, Gaussian models (the
//! degree is the constant amplitude) and one-dimensional disc models.
//!
//! Floats are converted by exact binary expansion, so any value that was
//! representable in the input is preserved verbatim; mark weights keep the
//! exact fractions they were declared with (e.g. `"1/3"`).

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::model::{AdjacencySpec, MarkKernel, Model, SpatialProfile};

/// A mark-indexed kernel with exact rational entries and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalKernel {
    pub weights: Vec<BigRational>,
    pub values: Vec<Vec<BigRational>>,
}

impl RationalKernel {
    pub fn size(&self) -> usize {
        self.weights.len()
    }

    /// Weighted k-step composition of this kernel with itself.
    pub fn path(&self, k: usize) -> RationalKernel {
        assert!(k >= 1);
        let n = self.size();
        let mut values = self.values.clone();
        for _ in 1..k {
            let mut next = vec![vec![BigRational::zero(); n]; n];
            for (a, row) in next.iter_mut().enumerate() {
                for (b, out) in row.iter_mut().enumerate() {
                    let mut acc = BigRational::zero();
                    for c in 0..n {
                        acc += &values[a][c] * &self.weights[c] * &self.values[c][b];
                    }
                    *out = acc;
                }
            }
            values = next;
        }
        RationalKernel { weights: self.weights.clone(), values }
    }

    pub fn to_f64(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .map(|row| row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
            .collect()
    }
}

fn exact_f64(x: f64) -> Option<BigRational> {
    BigRational::from_float(x)
}

/// Exact degree kernel, when the model admits one: finite marks declared
/// with exact weights and a family whose degree formula stays rational.
pub fn exact_degree_kernel(model: &Model) -> Option<RationalKernel> {
    let weights: Vec<BigRational> = model.exact_weights()?.to_vec();
    let n = weights.len();
    let values: Vec<Vec<BigRational>> = match &model.spec().adjacency {
        AdjacencySpec::Factorisable { profile, mark_kernel } => {
            let psi = match profile {
                SpatialProfile::UniformBox { half_width } => {
                    let h = exact_f64(*half_width)?;
                    let mut acc = BigRational::one();
                    let two_h = BigRational::from(BigInt::from(2)) * h;
                    for _ in 0..model.dim() {
                        acc *= &two_h;
                    }
                    acc
                }
                _ => return None,
            };
            match mark_kernel {
                MarkKernel::Matrix { values } => (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| exact_f64(values[i][j]).map(|k| &psi * k))
                            .collect::<Option<Vec<_>>>()
                    })
                    .collect::<Option<Vec<_>>>()?,
                MarkKernel::Constant { value } => {
                    let k = exact_f64(*value)?;
                    vec![vec![&psi * &k; n]; n]
                }
            }
        }
        AdjacencySpec::Gaussian { amplitude, .. } => {
            let a = exact_f64(*amplitude)?;
            vec![vec![a; n]; n]
        }
        AdjacencySpec::BooleanDisc { .. } => {
            if model.dim() != 1 {
                return None;
            }
            let radii: Vec<BigRational> = (0..n)
                .map(|i| exact_f64(model.atom(i).ok()?.value()))
                .collect::<Option<Vec<_>>>()?;
            let two = BigRational::from(BigInt::from(2));
            (0..n)
                .map(|i| (0..n).map(|j| &two * (&radii[i] + &radii[j])).collect())
                .collect()
        }
    };
    Some(RationalKernel { weights, values })
}

/// Exact k-step kernel, when the model admits the exact degree path.
pub fn exact_path_kernel(model: &Model, k: usize) -> Option<RationalKernel> {
    exact_degree_kernel(model).map(|d| d.path(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MarkDistribution, ModelSpec, WeightLit};
    use num_bigint::BigInt;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn three_mark_fixture_path_four_is_exact() {
        let m = crate::testutil::three_mark_model();
        let p4 = exact_path_kernel(&m, 4).expect("fixture admits exact kernels");
        let expect = [[6, 4, 3], [4, 5, 1], [3, 1, 2]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(p4.values[i][j], rat(expect[i][j], 27), "entry ({i},{j})");
            }
        }
        // k = 1 is the degree kernel itself
        let p1 = exact_path_kernel(&m, 1).unwrap();
        assert_eq!(p1, exact_degree_kernel(&m).unwrap());
    }

    #[test]
    fn disc_d1_exact_degree() {
        let m = ModelSpec {
            d: 1,
            adjacency: crate::model::AdjacencySpec::BooleanDisc { r_min: 0.25, r_max: 0.5 },
            marks: MarkDistribution::Finite {
                weights: vec![WeightLit::Frac("1/2".into()), WeightLit::Frac("1/2".into())],
                values: Some(vec![0.25, 0.5]),
            },
        }
        .build()
        .unwrap();
        let d = exact_degree_kernel(&m).unwrap();
        assert_eq!(d.values[0][0], rat(1, 1));
        assert_eq!(d.values[0][1], rat(3, 2));
        assert_eq!(d.values[1][1], rat(2, 1));
    }

    #[test]
    fn ball_profile_has_no_exact_kernel() {
        let m = ModelSpec {
            d: 2,
            adjacency: crate::model::AdjacencySpec::Factorisable {
                profile: crate::model::SpatialProfile::UniformBall { radius: 1.0 },
                mark_kernel: crate::model::MarkKernel::Constant { value: 1.0 },
            },
            marks: MarkDistribution::Finite {
                weights: vec![WeightLit::Num(1.0)],
                values: None,
            },
        }
        .build()
        .unwrap();
        assert!(exact_degree_kernel(&m).is_none());
    }
}
