//! Probability measures on lattice nodes and their piecewise-constant densities.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;

/// Tolerance on `|Σ ρ_z - 1|` accepted without renormalization.
pub const MASS_TOL: f64 = 1e-12;
/// Drift beyond this after a solver step aborts the run.
pub const MASS_ABORT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    lattice: Arc<LatticeSpec>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Wraps weights that already sum to one (within [`MASS_TOL`]).
    pub fn new(lattice: Arc<LatticeSpec>, weights: Vec<f64>) -> Result<Self> {
        check_weights(&lattice, &weights)?;
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!(
                "total mass {total} differs from 1"
            )));
        }
        Ok(Self { lattice, weights })
    }

    /// Scales nonnegative weights to unit mass.
    pub fn normalized(lattice: Arc<LatticeSpec>, mut weights: Vec<f64>) -> Result<Self> {
        check_weights(&lattice, &weights)?;
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidMeasure("all weights are zero".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { lattice, weights })
    }

    pub fn uniform(lattice: Arc<LatticeSpec>) -> Self {
        let m = lattice.len();
        Self {
            weights: vec![1.0 / m as f64; m],
            lattice,
        }
    }

    pub fn dirac(lattice: Arc<LatticeSpec>, z: usize) -> Result<Self> {
        if z >= lattice.len() {
            return Err(Error::InvalidNode {
                index: z,
                len: lattice.len(),
            });
        }
        let mut weights = vec![0.0; lattice.len()];
        weights[z] = 1.0;
        Ok(Self { lattice, weights })
    }

    pub fn lattice(&self) -> &Arc<LatticeSpec> {
        &self.lattice
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Density view `u_z = ρ_z / h^d`.
    pub fn density(&self) -> Vec<f64> {
        let vol = self.lattice.cell_volume();
        self.weights.iter().map(|w| w / vol).collect()
    }

    pub fn density_at_node(&self, z: usize) -> f64 {
        self.weights[z] / self.lattice.cell_volume()
    }

    /// Value of the piecewise-constant reconstruction at `x`.
    pub fn density_at(&self, x: &[f64]) -> Result<f64> {
        let z = self.lattice.project(x)?;
        Ok(self.density_at_node(z))
    }

    pub fn same_lattice(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.lattice, &other.lattice) || *self.lattice == *other.lattice
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(z, _)| z)
    }

    /// Rescales to unit mass if drift exceeds [`MASS_TOL`]; returns the drift
    /// `Σρ - 1` observed before rescaling. Fails above [`MASS_ABORT`].
    pub fn renormalize(&mut self) -> Result<f64> {
        let total = self.total_mass();
        let drift = total - 1.0;
        if drift.abs() > MASS_ABORT || !total.is_finite() {
            return Err(Error::MassDrift(drift));
        }
        if drift.abs() > MASS_TOL {
            self.weights.iter_mut().for_each(|w| *w /= total);
        }
        Ok(drift)
    }

    /// Builds a measure from weights that may carry small solver drift.
    pub(crate) fn from_solver(lattice: Arc<LatticeSpec>, mut weights: Vec<f64>) -> Result<(Self, f64)> {
        for w in &mut weights {
            if *w < 0.0 {
                if *w < -MASS_ABORT {
                    return Err(Error::Solver(format!("negative weight {w}")));
                }
                *w = 0.0;
            }
        }
        let mut m = Self { lattice, weights };
        let drift = m.renormalize()?;
        Ok((m, drift))
    }
}

fn check_weights(lattice: &LatticeSpec, weights: &[f64]) -> Result<()> {
    if weights.len() != lattice.len() {
        return Err(Error::InvalidMeasure(format!(
            "{} weights for {} nodes",
            weights.len(),
            lattice.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidMeasure(format!("weight {w} is not a finite nonnegative number")));
    }
    Ok(())
}

/// Piecewise-constant density `u_z = ρ_z / h^d` on each cell.
pub fn reconstruct_density(rho: &DiscreteMeasure) -> Vec<f64> {
    rho.density()
}

/// Converts nonnegative samples of a continuous density (one per node, either
/// midpoint values or cell averages) into a probability measure.
pub fn discretize_density(lattice: Arc<LatticeSpec>, samples: &[f64]) -> Result<DiscreteMeasure> {
    let vol = lattice.cell_volume();
    let weights = samples.iter().map(|u| u * vol).collect();
    DiscreteMeasure::normalized(lattice, weights)
}

/// Samples `u` at node positions and discretizes.
pub fn discretize_fn(lattice: Arc<LatticeSpec>, u: impl Fn(&[f64]) -> f64) -> Result<DiscreteMeasure> {
    let samples: Vec<f64> = lattice.positions().iter().map(|x| u(x)).collect();
    discretize_density(lattice, &samples)
}

/// `max_z u_z`.
pub fn linf_density(rho: &DiscreteMeasure) -> f64 {
    rho.weights.iter().copied().fold(0.0, f64::max) / rho.lattice.cell_volume()
}

/// `Σ_z |ρ_z - σ_z|`, equal to the L¹ distance of the reconstructions.
pub fn l1_distance(rho: &DiscreteMeasure, sigma: &DiscreteMeasure) -> Result<f64> {
    if !rho.same_lattice(sigma) {
        return Err(Error::LatticeMismatch);
    }
    Ok(rho
        .weights
        .iter()
        .zip(&sigma.weights)
        .map(|(a, b)| (a - b).abs())
        .sum())
}
