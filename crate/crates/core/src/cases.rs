//! Reference systems used by the reproduction command and the test suites.

use nalgebra::{dmatrix, DMatrix, DVector};

use crate::system::{LtiSystem, SamplingSequence, TimeDomain};

/// Two decoupled rotations, `1 +- i` and `2 +- 2i`, seen through a single
/// summed output, with `z` the sum of the first two states. Uniform sampling
/// with period 4 aliases each conjugate pair.
pub fn counterexample() -> LtiSystem {
    LtiSystem::autonomous(
        TimeDomain::Discrete,
        dmatrix![1.0, 1.0, 0.0, 0.0; -1.0, 1.0, 0.0, 0.0; 0.0, 0.0, 2.0, 2.0; 0.0, 0.0, -2.0, 2.0],
        dmatrix![1.0, 1.0, 1.0, 1.0],
    )
    .expect("valid system")
    .with_functional(dmatrix![1.0, 1.0, 0.0, 0.0])
    .expect("valid functional")
}

/// Irregular sequence on which the direct condition holds but the functional fails.
pub fn counterexample_irregular() -> SamplingSequence {
    SamplingSequence::discrete(&[0, 4, 8, 13]).expect("valid sequence")
}

/// Period-4 sequence on which the sampled-pair condition holds but the functional fails.
pub fn counterexample_periodic() -> SamplingSequence {
    SamplingSequence::discrete(&[2, 6, 10, 14]).expect("valid sequence")
}

/// Observable fourth-order system with eigenvalues `-1, 1, 0.6 +- 0.6i`
/// whose scalar functional only excites the complex pair.
pub fn estimation_example() -> LtiSystem {
    LtiSystem::autonomous(
        TimeDomain::Discrete,
        dmatrix![
            1.0, 0.0, 0.0, 0.0;
            1.0, -1.0, 0.0, 0.0;
            -2.0, 3.2, 0.6, 2.4;
            0.0, -0.3, -0.15, 0.6
        ],
        dmatrix![1.0, 0.0, 0.0, 0.0; 1.5, -4.0, -1.0, 0.0; 2.0, -6.0, -1.0, -4.0],
    )
    .expect("valid system")
    .with_functional(dmatrix![0.0, -2.0, -1.0, 1.0])
    .expect("valid functional")
}

/// Output combination of the structured certificate of [`estimation_example`].
pub fn estimation_example_alpha() -> DMatrix<f64> {
    dmatrix![1.0, -2.0, 1.0]
}

/// Diagonal of `Q` for [`estimation_example`], as `(re, im)` pairs.
pub const ESTIMATION_EXAMPLE_Q: [(f64, f64); 4] = [(1.0, 0.0), (1.0, 0.0), (-0.625, 0.375), (-0.625, -0.375)];

/// Initial state at unit distance from a zero prior along `F^T`.
pub fn unit_mismatch_state(f: &DMatrix<f64>) -> DVector<f64> {
    let row = f.row(0).transpose();
    let norm = row.norm();
    row / norm
}
