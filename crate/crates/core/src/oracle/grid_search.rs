use serde::Serialize;

use crate::energy::EnergySpec;
use crate::error::{Error, Result};
use crate::jko::half_cost_over_tau;
use crate::lattice::LatticeSpec;
use crate::measure::DiscreteMeasure;

const MAX_Q_SIMPLEX: u32 = 200;
const MAX_Q_SEGMENT: u32 = 2000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSearchResult {
    /// Argmin over the rational grid `{k/q}`.
    pub grid_weights: Vec<f64>,
    pub grid_objective: f64,
    /// Argmin after local refinement around the grid argmin.
    pub weights: Vec<f64>,
    pub objective: f64,
    pub evaluations: usize,
}

/// `W_2^2` between two weight vectors on a lattice whose nodes lie on one
/// line (at most one axis longer than 1), by the monotone coupling.
pub fn w2_squared_1d(lattice: &LatticeSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    if lattice.extents().iter().filter(|&&e| e > 1).count() > 1 {
        return Err(Error::InvalidArgument("monotone coupling needs collinear nodes".into()));
    }
    let h = lattice.spacing();
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0], b[0]);
    let mut cost = 0.0;
    loop {
        let m = ra.min(rb);
        let d = (i as f64 - j as f64) * h;
        cost += m * d * d;
        ra -= m;
        rb -= m;
        if ra <= 0.0 {
            i += 1;
            if i == a.len() {
                break;
            }
            ra = a[i];
        }
        if rb <= 0.0 {
            j += 1;
            if j == b.len() {
                break;
            }
            rb = b[j];
        }
    }
    Ok(cost)
}

struct Objective<'a> {
    spec: &'a EnergySpec,
    rho_k: &'a [f64],
    tau: f64,
    evaluations: usize,
}

impl Objective<'_> {
    fn eval(&mut self, w: &[f64]) -> f64 {
        self.evaluations += 1;
        let l = self.spec.lattice();
        let w2 = w2_squared_1d(l, w, self.rho_k).expect("collinear lattice checked");
        self.spec.eval_weights(w) + half_cost_over_tau(self.tau, w2)
    }
}

/// Exhaustive minimization of `F(ρ) + W_2^2(ρ, ρ_k)/2τ` over `{k/q}` weights
/// on a lattice of at most three nodes, followed by nested local grids
/// around the best point until the spacing drops below `1e-11`.
pub fn grid_search_jko(rho_k: &DiscreteMeasure, spec: &EnergySpec, tau: f64, q: u32) -> Result<GridSearchResult> {
    let l = spec.lattice();
    let n = l.len();
    if **rho_k.lattice() != **l {
        return Err(Error::LatticeMismatch);
    }
    if n > 3 {
        return Err(Error::OracleLimit(format!("{n} nodes, grid search handles at most 3")));
    }
    let limit = if n == 3 { MAX_Q_SIMPLEX } else { MAX_Q_SEGMENT };
    if q == 0 || q > limit {
        return Err(Error::OracleLimit(format!("resolution {q} outside 1..={limit}")));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let mut obj = Objective {
        spec,
        rho_k: rho_k.weights(),
        tau,
        evaluations: 0,
    };
    if n == 1 {
        let v = obj.eval(&[1.0]);
        return Ok(GridSearchResult {
            grid_weights: vec![1.0],
            grid_objective: v,
            weights: vec![1.0],
            objective: v,
            evaluations: 1,
        });
    }

    // Free coordinates are all but the last; the last closes the mass.
    let free = n - 1;
    let point = |c: &[f64]| -> Option<Vec<f64>> {
        let last = 1.0 - c.iter().sum::<f64>();
        if c.iter().any(|&x| x < 0.0) || last < -1e-15 {
            return None;
        }
        let mut w = c.to_vec();
        w.push(last.max(0.0));
        Some(w)
    };

    let qf = q as f64;
    let mut best = (f64::INFINITY, vec![0.0; free]);
    let visit = |c: Vec<f64>, obj: &mut Objective, best: &mut (f64, Vec<f64>)| {
        if let Some(w) = point(&c) {
            let v = obj.eval(&w);
            if v < best.0 {
                *best = (v, c);
            }
        }
    };
    for i in 0..=q {
        if free == 1 {
            visit(vec![i as f64 / qf], &mut obj, &mut best);
        } else {
            for j in 0..=q - i {
                visit(vec![i as f64 / qf, j as f64 / qf], &mut obj, &mut best);
            }
        }
    }
    let grid_weights = point(&best.1).expect("grid point is feasible");
    let grid_objective = best.0;

    const K: i32 = 8;
    let mut spacing = 1.0 / qf;
    while spacing > 1e-11 {
        let step = spacing / 4.0;
        let center = best.1.clone();
        for a in -K..=K {
            if free == 1 {
                visit(vec![center[0] + a as f64 * step], &mut obj, &mut best);
            } else {
                for b in -K..=K {
                    visit(vec![center[0] + a as f64 * step, center[1] + b as f64 * step], &mut obj, &mut best);
                }
            }
        }
        spacing = step;
    }
    Ok(GridSearchResult {
        grid_weights,
        grid_objective,
        weights: point(&best.1).expect("refined point is feasible"),
        objective: best.0,
        evaluations: obj.evaluations,
    })
}
