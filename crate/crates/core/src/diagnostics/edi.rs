//! Discrete energy-dissipation ledgers built on variational interpolants.

use serde::Serialize;

use super::fisher_with_potential;
use crate::energy::EnergySpec;
use crate::error::{Error, Result};
use crate::jko::{jko_step, variational_interpolant, JkoConfig, Trajectory};
use crate::measure::DiscreteMeasure;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdiLedger {
    /// `F(ρ_N) - F(ρ_0)`.
    pub energy_change: f64,
    /// `½ Σ_k τ (W_2/τ)^2`.
    pub kinetic: f64,
    /// `∫ S^h_V dλ_ε` by the midpoint rule on each step.
    pub fisher: f64,
    /// `(dT/4)(h/τ) log ε`.
    pub correction: f64,
    pub epsilon: f64,
    pub quadrature_points: usize,
    pub total: f64,
    /// `N` times the solver gap tolerance.
    pub solver_slack: f64,
}

/// `S^h_V`; with no internal density `ℓ` is constant and only the potential
/// part remains.
fn fisher_v(rho: &DiscreteMeasure, spec: &EnergySpec) -> Result<f64> {
    let v = spec.potential_values();
    match spec.internal() {
        Some(kind) => fisher_with_potential(rho, kind, &v),
        None => potential_only_fisher(rho, &v),
    }
}

fn potential_only_fisher(rho: &DiscreteMeasure, v: &[f64]) -> Result<f64> {
    let l = rho.lattice();
    let u = rho.density();
    let h = l.spacing();
    let mut sum = 0.0;
    for x in 0..l.len() {
        l.for_each_neighbor(x, |nb| {
            let y = nb.node;
            sum += u[x].max(u[y]) * (v[y] - v[x]).powi(2);
        });
    }
    Ok(0.25 * sum / (h * h) * l.cell_volume())
}

/// Ledger of a complete trajectory with the time measure `λ_ε`, whose density
/// on `[(k+ε)τ, (k+1)τ]` is `1 - h / 2(t - kτ)`. Each quadrature point costs
/// one interpolant solve.
pub fn edi_report(traj: &Trajectory, spec: &EnergySpec, epsilon: f64, points: usize) -> Result<EdiLedger> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("ε must lie in (0, 1), got {epsilon}")));
    }
    if points == 0 {
        return Err(Error::InvalidArgument("at least one quadrature point is needed".into()));
    }
    if spec.is_crowd() {
        return Err(Error::InvalidArgument("the ledger is defined for non-crowd energies".into()));
    }
    if !traj.is_complete() {
        return Err(Error::InvalidArgument("trajectory is incomplete".into()));
    }
    let cfg = &traj.config;
    let tau = cfg.tau;
    if !tau.is_finite() {
        return Err(Error::InvalidArgument("the ledger needs a finite time step".into()));
    }
    let l = spec.lattice();
    let h = l.spacing();
    let n = traj.iterates.len();

    let energy_change = spec.eval(traj.last())? - spec.eval(&traj.initial)?;
    let kinetic: f64 = traj.diagnostics.iter().map(|d| d.w2_squared / (2.0 * tau)).sum();

    let ds = (1.0 - epsilon) / points as f64;
    let mut fisher = 0.0;
    for rho_k in traj.measures().take(n) {
        for j in 0..points {
            let s = epsilon + (j as f64 + 0.5) * ds;
            let weight = tau * ds * (1.0 - h / (2.0 * s * tau));
            let interp = variational_interpolant(rho_k, spec, tau, s, cfg)?;
            fisher += weight * fisher_v(&interp.rho, spec)?;
        }
    }
    let horizon = n as f64 * tau;
    let correction = l.dim() as f64 * horizon / 4.0 * (h / tau) * epsilon.ln();
    Ok(EdiLedger {
        energy_change,
        kinetic,
        fisher,
        correction,
        epsilon,
        quadrature_points: points,
        total: energy_change + kinetic + fisher + correction,
        solver_slack: n as f64 * cfg.gap_tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OneStepCheck {
    /// `F(ρ_1) - F(ρ_0)`.
    pub energy_change: f64,
    /// `W_2^2(ρ_1, ρ_0) / 2τ`.
    pub kinetic: f64,
    /// Guaranteed lower estimate of `∫_0^1 W_2^2(ρ̃_s, ρ_0) / 2τ s^2 ds`.
    pub integral_lower: f64,
    /// Midpoint estimate of the same integral (for reference).
    pub integral_midpoint: f64,
    /// `energy_change + kinetic + integral_lower`.
    pub total: f64,
    pub gap: f64,
    pub holds: bool,
}

/// One-step variational inequality
/// `F(ρ_1) - F(ρ_0) + W_2^2(ρ_1,ρ_0)/2τ + ∫_0^1 W_2^2(ρ̃_s,ρ_0)/2τs^2 ds ≤ 0`.
///
/// `s ↦ W_2^2(ρ̃_s, ρ_0)` is non-decreasing, so evaluating it at the left end
/// of each sub-interval (and dropping `[0, s_1]`) bounds the integral from
/// below. The check passes when the total is at most the step's gap plus
/// round-off.
pub fn one_step_inequality(rho0: &DiscreteMeasure, spec: &EnergySpec, tau: f64, cfg: &JkoConfig, points: usize) -> Result<OneStepCheck> {
    if points < 2 {
        return Err(Error::InvalidArgument("need at least two interpolation points".into()));
    }
    if !tau.is_finite() {
        return Err(Error::InvalidArgument("the inequality needs a finite time step".into()));
    }
    let step = jko_step(rho0, spec, tau, cfg)?;
    let f0 = spec.eval(rho0)?;
    let energy_change = step.energy - f0;
    let kinetic = step.w2_squared / (2.0 * tau);

    let grid: Vec<f64> = (1..=points).map(|i| i as f64 / points as f64).collect();
    let mut w2 = Vec::with_capacity(points);
    let mut gap = step.gap;
    for &s in &grid {
        let r = variational_interpolant(rho0, spec, tau, s, cfg)?;
        gap = gap.max(r.gap);
        w2.push(r.w2_squared);
    }
    let mut lower = 0.0;
    for i in 0..points - 1 {
        lower += w2[i] / (2.0 * tau) * (1.0 / grid[i] - 1.0 / grid[i + 1]);
    }
    let mut midpoint = 0.0;
    let ds = 1.0 / points as f64;
    for i in 0..points {
        let s = (i as f64 + 0.5) * ds;
        let r = variational_interpolant(rho0, spec, tau, s, cfg)?;
        midpoint += r.w2_squared / (2.0 * tau * s * s) * ds;
    }
    let total = energy_change + kinetic + lower;
    let roundoff = 1e-12 * (f0.abs() + 1.0);
    Ok(OneStepCheck {
        energy_change,
        kinetic,
        integral_lower: lower,
        integral_midpoint: midpoint,
        total,
        gap,
        holds: total <= gap + roundoff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::PotentialField;
    use crate::jko::run_trajectory;
    use crate::lattice::LatticeSpec;
    use std::sync::Arc;

    fn line(h: f64, n: usize) -> Arc<LatticeSpec> {
        Arc::new(LatticeSpec::unit_origin(h, &[n]).unwrap())
    }

    #[test]
    fn stationary_minimizer_has_zero_terms() {
        let l = line(0.1, 10);
        let spec = EnergySpec::builder(l.clone())
            .potential_field(&PotentialField::Constant(1.0))
            .build()
            .unwrap();
        let rho = DiscreteMeasure::uniform(l);
        let traj = run_trajectory(&rho, &spec, &JkoConfig::for_spec(&spec, 0.2, 3)).unwrap();
        let led = edi_report(&traj, &spec, 0.1, 4).unwrap();
        assert_eq!(led.energy_change, 0.0);
        assert_eq!(led.kinetic, 0.0);
        assert_eq!(led.fisher, 0.0);
        assert!(led.correction < 0.0);
    }

    #[test]
    fn one_step_inequality_holds_for_entropy() {
        let l = line(0.1, 10);
        let spec = EnergySpec::builder(l.clone())
            .internal(crate::energy::InternalDensityKind::Entropy)
            .build()
            .unwrap();
        let rho = DiscreteMeasure::normalized(l, vec![5.0, 3.0, 1.0, 0.5, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1]).unwrap();
        let cfg = JkoConfig::for_spec(&spec, 0.05, 1);
        let c = one_step_inequality(&rho, &spec, 0.05, &cfg, 16).unwrap();
        assert!(c.holds, "{c:?}");
        assert!(c.integral_lower <= c.integral_midpoint + 1e-12);
    }

    #[test]
    fn epsilon_near_one_leaves_kinetic_only() {
        let l = line(0.1, 10);
        let spec = EnergySpec::builder(l.clone())
            .internal(crate::energy::InternalDensityKind::Entropy)
            .build()
            .unwrap();
        let rho = DiscreteMeasure::normalized(l, (1..=10).map(|i| i as f64).collect()).unwrap();
        let traj = run_trajectory(&rho, &spec, &JkoConfig::for_spec(&spec, 0.1, 2)).unwrap();
        let led = edi_report(&traj, &spec, 1.0 - 1e-9, 2).unwrap();
        assert!(led.fisher.abs() < 1e-6);
        assert!(led.correction.abs() < 1e-6);
        assert!((led.total - led.energy_change - led.kinetic).abs() < 1e-6);
        assert!(edi_report(&traj, &spec, 1.0, 2).is_err());
    }
}
