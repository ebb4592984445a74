//! Shared fixtures for the benchmarks in `benches/`.

use tbem_core::{discretize, Curve, DiscreteBoundary, TransmissionData};

/// Circles of radius 2 and 1 with `n` nodes each.
pub fn annulus(n: usize) -> (DiscreteBoundary, DiscreteBoundary) {
    let outer = discretize(&Curve::circle(2.0), n).expect("valid node count");
    let inner = discretize(&Curve::circle(1.0), n).expect("valid node count");
    (outer, inner)
}

/// Star-shaped inclusion inside a circle, `n` nodes each.
pub fn star_in_circle(n: usize) -> (DiscreteBoundary, DiscreteBoundary) {
    let outer = discretize(&Curve::circle(2.0), n).expect("valid node count");
    let inner = discretize(&Curve::star(0.9, 0.15, 5), n).expect("valid node count");
    (outer, inner)
}

pub fn canonical_data() -> TransmissionData {
    TransmissionData::new(
        "z1 + tanh(z2)",
        "-z2 + tanh(z1)",
        ["1", "1 - tanh(z2)^2", "1 - tanh(z1)^2", "-1"],
        "x1 / 2",
    )
    .expect("valid expressions")
}
