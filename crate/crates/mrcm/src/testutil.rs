//! Shared fixtures for the unit-test suites.

use crate::model::{
    AdjacencySpec, MarkDistribution, MarkKernel, Model, ModelSpec, SpatialProfile, WeightLit,
};

/// Three-atom factorisable model: uniform marks, unit box profile in d = 1
/// and the 0/1 mark kernel [[1,1,0],[1,0,1],[0,1,0]].
pub fn three_mark_model() -> Model {
    ModelSpec {
        d: 1,
        adjacency: AdjacencySpec::Factorisable {
            profile: SpatialProfile::UniformBox { half_width: 0.5 },
            mark_kernel: MarkKernel::Matrix {
                values: vec![
                    vec![1.0, 1.0, 0.0],
                    vec![1.0, 0.0, 1.0],
                    vec![0.0, 1.0, 0.0],
                ],
            },
        },
        marks: MarkDistribution::Finite {
            weights: vec![
                WeightLit::Frac("1/3".into()),
                WeightLit::Frac("1/3".into()),
                WeightLit::Frac("1/3".into()),
            ],
            values: None,
        },
    }
    .build()
    .unwrap()
}

/// Single-mark disc model with fixed radius in the given dimension.
pub fn disc_model(d: usize, r: f64) -> Model {
    ModelSpec {
        d,
        adjacency: AdjacencySpec::BooleanDisc { r_min: r, r_max: r },
        marks: MarkDistribution::Finite {
            weights: vec![WeightLit::Num(1.0)],
            values: Some(vec![r]),
        },
    }
    .build()
    .unwrap()
}
