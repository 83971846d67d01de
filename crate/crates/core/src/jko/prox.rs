//! Proximal maps of a potential on the grid and in the continuum.

use serde::Serialize;

use crate::energy::PotentialField;
use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;

/// A potential with a Lipschitz gradient, for the continuous proximal map.
pub trait SmoothPotential {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Lipschitz constant of the gradient.
    fn gradient_lipschitz(&self) -> f64;
}

impl SmoothPotential for PotentialField {
    fn value(&self, x: &[f64]) -> f64 {
        PotentialField::value(self, x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        PotentialField::gradient(self, x)
    }

    fn gradient_lipschitz(&self) -> f64 {
        PotentialField::gradient_lipschitz(self)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// `argmin_x V(x) + |x - x0|^2 / 2τ` over nodes, for a node `x0`. Ties go to
/// the smaller index.
pub fn prox_grid(lattice: &LatticeSpec, v: &[f64], tau: f64, x0: usize) -> Result<usize> {
    if x0 >= lattice.len() {
        return Err(Error::InvalidNode {
            index: x0,
            len: lattice.len(),
        });
    }
    check_grid_args(lattice, v, tau)?;
    Ok(prox_grid_node(lattice, v, tau, x0))
}

fn check_grid_args(lattice: &LatticeSpec, v: &[f64], tau: f64) -> Result<()> {
    if v.len() != lattice.len() {
        return Err(Error::InvalidArgument("potential does not match lattice".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

pub(crate) fn prox_grid_node(lattice: &LatticeSpec, v: &[f64], tau: f64, x0: usize) -> usize {
    argmin_nodes(v, |x| super::half_cost_over_tau(tau, lattice.squared_distance(x, x0)))
}

fn argmin_nodes(v: &[f64], cost: impl Fn(usize) -> f64) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (x, vx) in v.iter().enumerate() {
        let val = vx + cost(x);
        if val < best.0 {
            best = (val, x);
        }
    }
    best.1
}

/// Grid proximal map from an arbitrary point `x0` of the box.
pub fn prox_grid_from(lattice: &LatticeSpec, v: &[f64], tau: f64, x0: &[f64]) -> Result<usize> {
    check_grid_args(lattice, v, tau)?;
    if x0.len() != lattice.dim() {
        return Err(Error::InvalidArgument("point dimension does not match lattice".into()));
    }
    let pos = lattice.positions();
    Ok(argmin_nodes(v, |x| super::half_cost_over_tau(tau, sq_dist(&pos[x], x0))))
}

/// Solves `x = x0 - τ ∇V(x)` by fixed-point iteration, which contracts when
/// `τ Lip(∇V) < 1`. Requires `τ ≤ 1 / (2 Lip(∇V))`.
pub fn prox_continuous<P: SmoothPotential + ?Sized>(potential: &P, tau: f64, x0: &[f64], tol: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau must be positive and finite, got {tau}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let lip = potential.gradient_lipschitz();
    if 2.0 * tau * lip > 1.0 {
        return Err(Error::InvalidArgument(format!(
            "tau = {tau} exceeds 1/(2 Lip) = {} for the proximal fixed point",
            0.5 / lip
        )));
    }
    let mut x = x0.to_vec();
    for _ in 0..10_000 {
        let g = potential.gradient(&x);
        let next: Vec<f64> = x0.iter().zip(&g).map(|(a, b)| a - tau * b).collect();
        let delta = sq_dist(&next, &x).sqrt();
        x = next;
        if !delta.is_finite() {
            break;
        }
        if delta <= tol {
            return Ok(x);
        }
    }
    Err(Error::Solver("proximal fixed-point iteration did not converge".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProxErrorRow {
    pub k: usize,
    pub exact: Vec<f64>,
    pub grid: Vec<f64>,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProxErrorStudy {
    pub rows: Vec<ProxErrorRow>,
    pub max_error: f64,
    /// `3 / L · e^{2 L T} · h / τ` with `L = Lip(∇V)`; infinite when `L = 0`.
    pub bound: f64,
    pub steps: usize,
    pub tau: f64,
}

/// Advances `x_k = Prox^τ(x_{k-1})` and `x_k^h = Prox^{h,τ}(x_{k-1}^h)` from
/// the same starting point for `N = round(T/τ)` steps.
pub fn prox_error_study<P: SmoothPotential + ?Sized>(
    potential: &P,
    lattice: &LatticeSpec,
    tau: f64,
    horizon: f64,
    x0: &[f64],
) -> Result<ProxErrorStudy> {
    if !(horizon >= 0.0) {
        return Err(Error::InvalidArgument("horizon must be nonnegative".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let steps = (horizon / tau).round() as usize;
    let pos = lattice.positions();
    let v: Vec<f64> = pos.iter().map(|p| potential.value(p)).collect();
    let h = lattice.spacing();
    let tol = 1e-14 * (1.0 + x0.iter().map(|a| a.abs()).fold(0.0, f64::max));

    let mut exact = x0.to_vec();
    let mut grid = x0.to_vec();
    let mut rows = vec![ProxErrorRow {
        k: 0,
        exact: exact.clone(),
        grid: grid.clone(),
        error: 0.0,
    }];
    for k in 1..=steps {
        exact = prox_continuous(potential, tau, &exact, tol)?;
        let node = prox_grid_from(lattice, &v, tau, &grid)?;
        grid = pos[node].clone();
        rows.push(ProxErrorRow {
            k,
            exact: exact.clone(),
            grid: grid.clone(),
            error: sq_dist(&exact, &grid).sqrt(),
        });
    }
    let lip = potential.gradient_lipschitz();
    let bound = if lip > 0.0 {
        3.0 / lip * (2.0 * lip * horizon).exp() * h / tau
    } else {
        f64::INFINITY
    };
    let max_error = rows.iter().map(|r| r.error).fold(0.0, f64::max);
    Ok(ProxErrorStudy {
        rows,
        max_error,
        bound,
        steps,
        tau,
    })
}
