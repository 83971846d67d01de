//! Benchmark fixtures.

use std::sync::Arc;

use jko_core::{DiscreteMeasure, LatticeSpec};

/// `1 + a cos(2πx)`-type profile on an `n`-cell unit line.
pub fn bump_1d(n: usize, a: f64) -> DiscreteMeasure {
    let l = Arc::new(LatticeSpec::unit_origin(1.0 / n as f64, &[n]).unwrap());
    let w = l
        .positions()
        .iter()
        .map(|x| 1.0 + a * (2.0 * std::f64::consts::PI * x[0]).cos())
        .collect();
    DiscreteMeasure::normalized(l, w).unwrap()
}

/// Same profile along the first axis of an `n × n` unit square.
pub fn bump_2d(n: usize, a: f64) -> DiscreteMeasure {
    let l = Arc::new(LatticeSpec::unit_origin(1.0 / n as f64, &[n, n]).unwrap());
    let w = l
        .positions()
        .iter()
        .map(|x| 1.0 + a * (2.0 * std::f64::consts::PI * x[0]).cos() * (std::f64::consts::PI * x[1]).sin())
        .collect();
    DiscreteMeasure::normalized(l, w).unwrap()
}
