//! Minimizing-movement steps, trajectories and variational interpolants.

mod convex;
pub mod crowd;
pub mod prox;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, StepDiagnostics};
use crate::energy::{EnergySpec, DEFAULT_CLAMP};
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::transport::{solve_ot, DualPotentials, TransportOptions, TransportPlan};

pub use crowd::jko_step_crowd;
pub use prox::{prox_continuous, prox_error_study, prox_grid, prox_grid_from, ProxErrorRow, ProxErrorStudy, SmoothPotential};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    FrankWolfe,
    CrowdLp,
    PurePotential,
}

impl SolverKind {
    /// The natural solver for an energy.
    pub fn for_spec(spec: &EnergySpec) -> Self {
        if spec.is_crowd() {
            Self::CrowdLp
        } else if spec.internal().is_none() && !spec.has_interaction() {
            Self::PurePotential
        } else {
            Self::FrankWolfe
        }
    }
}

/// Update rule inside the Frank–Wolfe family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FwVariant {
    /// Exact minimization over one source column at a time, with the
    /// Frank–Wolfe gap as stopping certificate.
    #[default]
    BlockExact,
    /// Textbook conditional gradient with exact line search.
    Classic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsToggles {
    pub fisher: bool,
    pub optimality: bool,
    pub slope_check: bool,
}

impl Default for DiagnosticsToggles {
    fn default() -> Self {
        Self {
            fisher: true,
            optimality: true,
            slope_check: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JkoConfig {
    /// Time step; `f64::INFINITY` minimizes the energy alone.
    pub tau: f64,
    pub steps: usize,
    pub solver: SolverKind,
    pub fw_variant: FwVariant,
    /// Stopping tolerance on the duality gap.
    pub gap_tol: f64,
    pub max_iterations: usize,
    /// `f'` is evaluated at `max(u, clamp)` inside the solver.
    pub clamp: f64,
    /// Displacement window for candidate targets (length units).
    pub window: Option<f64>,
    pub diagnostics: DiagnosticsToggles,
}

impl JkoConfig {
    pub fn new(tau: f64, steps: usize, solver: SolverKind) -> Self {
        Self {
            tau,
            steps,
            solver,
            fw_variant: FwVariant::default(),
            gap_tol: 1e-8,
            max_iterations: 20_000,
            clamp: DEFAULT_CLAMP,
            window: None,
            diagnostics: DiagnosticsToggles::default(),
        }
    }

    /// Config with the solver picked from the energy.
    pub fn for_spec(spec: &EnergySpec, tau: f64, steps: usize) -> Self {
        Self::new(tau, steps, SolverKind::for_spec(spec))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.gap_tol > 0.0) {
            return Err(Error::InvalidArgument("gap tolerance must be positive".into()));
        }
        if !(self.clamp > 0.0) {
            return Err(Error::InvalidArgument("clamp must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if self.window.is_some_and(|r| !(r > 0.0)) {
            return Err(Error::InvalidArgument("window must be positive".into()));
        }
        Ok(())
    }
}

/// What the reported `gap` certifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    /// Convex objective: `gap` bounds the suboptimality.
    DualityGap,
    /// Non-convex objective: `gap` is only a first-order stationarity measure.
    Stationarity,
    /// Solved by an exact (combinatorial) method.
    Exact,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub rho: DiscreteMeasure,
    /// Coupling of `rho` (first marginal) with the previous iterate.
    pub plan: TransportPlan,
    pub duals: DualPotentials,
    pub w2_squared: f64,
    pub energy: f64,
    /// `F(ρ_{k+1}) + W_2^2(ρ_{k+1}, ρ_k) / 2τ`.
    pub objective: f64,
    pub gap: f64,
    pub certificate: Certificate,
    pub converged: bool,
    pub iterations: usize,
    pub mass_drift: f64,
    /// Crowd steps only.
    pub pressure: Option<Vec<f64>>,
}

pub(crate) fn half_cost_over_tau(tau: f64, sq_dist: f64) -> f64 {
    if tau.is_infinite() {
        0.0
    } else {
        sq_dist / (2.0 * tau)
    }
}

fn check_input(rho_k: &DiscreteMeasure, spec: &EnergySpec, cfg: &JkoConfig, tau: f64) -> Result<()> {
    cfg.validate()?;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    if **rho_k.lattice() != **spec.lattice() {
        return Err(Error::LatticeMismatch);
    }
    Ok(())
}

/// One step `argmin F(ρ) + W_2^2(ρ, ρ_k) / 2τ` for a non-crowd energy.
pub fn jko_step(rho_k: &DiscreteMeasure, spec: &EnergySpec, tau: f64, cfg: &JkoConfig) -> Result<StepResult> {
    check_input(rho_k, spec, cfg, tau)?;
    if spec.is_crowd() {
        return Err(Error::InvalidArgument("crowd energies are stepped with jko_step_crowd".into()));
    }
    let (weights, plan, gap, certificate, converged, iterations) =
        if spec.internal().is_none() && !spec.has_interaction() {
            let (w, entries) = pure_potential_step(rho_k, spec, tau);
            (w, entries, 0.0, Certificate::Exact, true, 1)
        } else {
            let out = convex::solve(rho_k, spec, tau, cfg)?;
            let cert = if spec.has_interaction() {
                Certificate::Stationarity
            } else {
                Certificate::DualityGap
            };
            (out.weights, out.entries, out.gap, cert, out.converged, out.iterations)
        };
    if !converged {
        log::warn!("jko step stopped after {iterations} iterations with gap {gap:e}");
    }
    let (rho, mass_drift) = DiscreteMeasure::from_solver(rho_k.lattice().clone(), weights)?;
    let opts = TransportOptions {
        window: cfg.window,
        gauge: true,
    };
    let ot = solve_ot(&rho, rho_k, &opts)?;
    let energy = spec.eval_weights(rho.weights());
    let objective = energy + half_cost_over_tau(tau, ot.w2_squared);
    let plan = TransportPlan::from_entries(rho.clone(), rho_k.clone(), plan);
    Ok(StepResult {
        rho,
        plan,
        duals: ot.duals,
        w2_squared: ot.w2_squared,
        energy,
        objective,
        gap,
        certificate,
        converged,
        iterations,
        mass_drift,
        pressure: None,
    })
}

/// Linear energy: every atom moves independently to its grid proximal point.
fn pure_potential_step(rho_k: &DiscreteMeasure, spec: &EnergySpec, tau: f64) -> (Vec<f64>, Vec<(usize, usize, f64)>) {
    let lattice = rho_k.lattice();
    let v = spec.potential_values();
    let mut weights = vec![0.0; lattice.len()];
    let mut entries = Vec::new();
    for y in rho_k.support() {
        let x = prox::prox_grid_node(lattice, &v, tau, y);
        weights[x] += rho_k.weights()[y];
        entries.push((x, y, rho_k.weights()[y]));
    }
    (weights, entries)
}

/// Dispatches on the configured solver.
pub fn step(rho_k: &DiscreteMeasure, spec: &EnergySpec, tau: f64, cfg: &JkoConfig) -> Result<StepResult> {
    match cfg.solver {
        SolverKind::CrowdLp => jko_step_crowd(rho_k, spec, tau),
        SolverKind::PurePotential if spec.internal().is_some() || spec.has_interaction() || spec.is_crowd() => Err(
            Error::InvalidArgument("pure_potential solver needs an energy with only a potential term".into()),
        ),
        _ => jko_step(rho_k, spec, tau, cfg),
    }
}

/// Minimizer of `F(ρ) + W_2^2(ρ, ρ_k) / 2τs`.
pub fn variational_interpolant(
    rho_k: &DiscreteMeasure,
    spec: &EnergySpec,
    tau: f64,
    s: f64,
    cfg: &JkoConfig,
) -> Result<StepResult> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::InvalidArgument(format!("interpolation parameter must lie in (0, 1], got {s}")));
    }
    step(rho_k, spec, tau * s, cfg)
}

/// `G_k(s)`: the optimal value of the step with time step `τs`.
pub fn g_k(rho_k: &DiscreteMeasure, spec: &EnergySpec, tau: f64, s: f64, cfg: &JkoConfig) -> Result<f64> {
    Ok(variational_interpolant(rho_k, spec, tau, s, cfg)?.objective)
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial: DiscreteMeasure,
    pub iterates: Vec<DiscreteMeasure>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub config: JkoConfig,
    /// Error that stopped the run early; the iterates computed so far are kept.
    pub failure: Option<Error>,
}

impl Trajectory {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none() && self.iterates.len() == self.config.steps
    }

    /// Last iterate, or the initial measure for an empty run.
    pub fn last(&self) -> &DiscreteMeasure {
        self.iterates.last().unwrap_or(&self.initial)
    }

    /// `ρ_0, ρ_1, …, ρ_N`.
    pub fn measures(&self) -> impl Iterator<Item = &DiscreteMeasure> {
        std::iter::once(&self.initial).chain(&self.iterates)
    }
}

/// Runs `cfg.steps` steps from `rho0`. Invalid input is an error; a step that
/// fails mid-run is recorded in [`Trajectory::failure`].
pub fn run_trajectory(rho0: &DiscreteMeasure, spec: &EnergySpec, cfg: &JkoConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if **rho0.lattice() != **spec.lattice() {
        return Err(Error::LatticeMismatch);
    }
    if spec.is_crowd() {
        if cfg.solver != SolverKind::CrowdLp {
            return Err(Error::InvalidArgument("crowd energies require the crowd_lp solver".into()));
        }
        if !crate::energy::crowd_feasible(rho0) {
            return Err(Error::Infeasible("initial measure exceeds the density cap".into()));
        }
    } else if cfg.solver == SolverKind::CrowdLp {
        return Err(Error::InvalidArgument("crowd_lp solver requires a crowd energy".into()));
    }

    let mut traj = Trajectory {
        initial: rho0.clone(),
        iterates: Vec::with_capacity(cfg.steps),
        diagnostics: Vec::with_capacity(cfg.steps),
        config: cfg.clone(),
        failure: None,
    };
    let e0 = spec.eval(rho0)?;
    let mut ledger = diagnostics::RunningLedger::new(e0);
    let mut current = rho0.clone();
    for k in 0..cfg.steps {
        match step(&current, spec, cfg.tau, cfg) {
            Ok(res) => {
                let d = diagnostics::step_diagnostics(k + 1, &res, spec, cfg, &mut ledger);
                log::debug!("step {}: energy {:.6e} w2 {:.3e} gap {:.1e}", k + 1, res.energy, res.w2_squared, res.gap);
                current = res.rho;
                traj.iterates.push(current.clone());
                traj.diagnostics.push(d);
            }
            Err(e) => {
                log::error!("step {} failed: {e}", k + 1);
                traj.failure = Some(e);
                break;
            }
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{InternalDensityKind, PotentialField};
    use crate::lattice::LatticeSpec;
    use crate::measure::linf_density;
    use std::sync::Arc;

    fn line(h: f64, n: usize) -> Arc<LatticeSpec> {
        Arc::new(LatticeSpec::unit_origin(h, &[n]).unwrap())
    }

    fn entropy(l: &Arc<LatticeSpec>) -> EnergySpec {
        EnergySpec::builder(l.clone()).internal(InternalDensityKind::Entropy).build().unwrap()
    }

    #[test]
    fn constant_potential_stays_put() {
        let l = line(0.25, 4);
        let spec = EnergySpec::builder(l.clone())
            .potential_field(&PotentialField::Constant(2.0))
            .build()
            .unwrap();
        let rho = DiscreteMeasure::normalized(l, vec![0.1, 0.4, 0.2, 0.3]).unwrap();
        let cfg = JkoConfig::for_spec(&spec, 0.1, 1);
        let out = jko_step(&rho, &spec, 0.1, &cfg).unwrap();
        assert_eq!(out.rho.weights(), rho.weights());
        assert_eq!(out.w2_squared, 0.0);
        assert_eq!(out.certificate, Certificate::Exact);
    }

    #[test]
    fn energy_only_entropy_is_uniform() {
        let l = line(0.2, 5);
        let spec = entropy(&l);
        let rho = DiscreteMeasure::normalized(l, vec![0.6, 0.1, 0.1, 0.1, 0.1]).unwrap();
        let cfg = JkoConfig::for_spec(&spec, f64::INFINITY, 1);
        let out = jko_step(&rho, &spec, f64::INFINITY, &cfg).unwrap();
        assert!(out.converged);
        for w in out.rho.weights() {
            assert!((w - 0.2).abs() < 1e-8, "{:?}", out.rho.weights());
        }
    }

    #[test]
    fn three_node_dirac_is_symmetric_and_certified() {
        let l = line(1.0, 3);
        let spec = entropy(&l);
        let rho = DiscreteMeasure::dirac(l, 1).unwrap();
        let cfg = JkoConfig::for_spec(&spec, 1.0, 1);
        let out = jko_step(&rho, &spec, 1.0, &cfg).unwrap();
        let w = out.rho.weights();
        assert!((w[0] - w[2]).abs() < 1e-9);
        assert!(w[1] > w[0]);
        assert!(out.gap <= 1e-8);
        // stationarity: log u_x + 1 + x-cost is constant on the support of column 1
        let g0 = w[0].ln() + 0.5;
        let g1 = w[1].ln();
        assert!((g0 - g1).abs() < 1e-6);
    }

    #[test]
    fn competitor_inequality_and_variants_agree() {
        let l = line(0.125, 8);
        let spec = EnergySpec::builder(l.clone())
            .internal(InternalDensityKind::power_law(2.0).unwrap())
            .potential_field(&PotentialField::Linear { slope: vec![1.5], offset: 0.0 })
            .build()
            .unwrap();
        let rho = DiscreteMeasure::normalized(l, vec![0.0, 0.05, 0.3, 0.1, 0.0, 0.2, 0.3, 0.05]).unwrap();
        let mut cfg = JkoConfig::for_spec(&spec, 0.05, 1);
        let a = jko_step(&rho, &spec, 0.05, &cfg).unwrap();
        assert!(a.objective <= spec.eval(&rho).unwrap() + 1e-12);
        assert!(a.converged && a.gap <= 1e-8);
        cfg.fw_variant = FwVariant::Classic;
        cfg.max_iterations = 200_000;
        cfg.gap_tol = 1e-6;
        let b = jko_step(&rho, &spec, 0.05, &cfg).unwrap();
        assert!((a.objective - b.objective).abs() < 1e-5, "{} vs {}", a.objective, b.objective);
    }

    #[test]
    fn interpolant_at_one_matches_step() {
        let l = line(0.25, 4);
        let spec = entropy(&l);
        let rho = DiscreteMeasure::normalized(l, vec![0.7, 0.2, 0.05, 0.05]).unwrap();
        let cfg = JkoConfig::for_spec(&spec, 0.2, 1);
        let a = jko_step(&rho, &spec, 0.2, &cfg).unwrap();
        let b = variational_interpolant(&rho, &spec, 0.2, 1.0, &cfg).unwrap();
        assert!(crate::measure::l1_distance(&a.rho, &b.rho).unwrap() <= 2e-8);
        assert!(variational_interpolant(&rho, &spec, 0.2, 0.0, &cfg).is_err());
    }

    #[test]
    fn g_k_is_non_increasing_and_tends_to_initial_energy() {
        let l = line(0.2, 5);
        let spec = entropy(&l);
        let rho = DiscreteMeasure::normalized(l, vec![0.5, 0.3, 0.1, 0.05, 0.05]).unwrap();
        let cfg = JkoConfig::for_spec(&spec, 0.5, 1);
        let f0 = spec.eval(&rho).unwrap();
        let mut prev = f64::INFINITY;
        for s in [1e-4, 0.01, 0.1, 0.3, 0.6, 1.0] {
            let g = g_k(&rho, &spec, 0.5, s, &cfg).unwrap();
            assert!(g <= prev + 1e-9);
            assert!(g <= f0 + 1e-12);
            prev = g;
        }
        let g_small = g_k(&rho, &spec, 0.5, 1e-6, &cfg).unwrap();
        assert!((g_small - f0).abs() < 1e-3);
    }

    #[test]
    fn empty_run_keeps_initial() {
        let l = line(0.25, 4);
        let spec = entropy(&l);
        let rho = DiscreteMeasure::uniform(l);
        let traj = run_trajectory(&rho, &spec, &JkoConfig::for_spec(&spec, 0.1, 0)).unwrap();
        assert!(traj.iterates.is_empty() && traj.diagnostics.is_empty());
        assert_eq!(traj.last(), &rho);
    }

    #[test]
    fn frozen_pure_potential() {
        let l = line(0.1, 10);
        let spec = EnergySpec::builder(l.clone())
            .potential_field(&PotentialField::Linear { slope: vec![1.0], offset: 0.0 })
            .build()
            .unwrap();
        // h/τ = 2.5 > 2 Lip(V) = 2
        let rho = DiscreteMeasure::normalized(l, vec![0.0, 0.2, 0.0, 0.3, 0.1, 0.0, 0.0, 0.4, 0.0, 0.0]).unwrap();
        let traj = run_trajectory(&rho, &spec, &JkoConfig::for_spec(&spec, 0.04, 5)).unwrap();
        assert!(traj.iterates.iter().all(|r| r == &rho));
    }

    #[test]
    fn entropy_linf_is_non_increasing() {
        let l = line(0.1, 10);
        let spec = entropy(&l);
        let rho = DiscreteMeasure::normalized(l, vec![0.02, 0.3, 0.05, 0.01, 0.2, 0.02, 0.1, 0.1, 0.15, 0.05]).unwrap();
        let traj = run_trajectory(&rho, &spec, &JkoConfig::for_spec(&spec, 0.05, 4)).unwrap();
        assert!(traj.is_complete());
        let mut prev = linf_density(&rho);
        for r in &traj.iterates {
            let cur = linf_density(r);
            assert!(cur <= prev + 1e-9);
            prev = cur;
        }
        assert_eq!(traj.diagnostics.len(), 4);
    }

    #[test]
    fn mismatched_solver_is_rejected() {
        let l = line(0.25, 4);
        let spec = entropy(&l);
        let rho = DiscreteMeasure::uniform(l);
        let cfg = JkoConfig::new(0.1, 1, SolverKind::CrowdLp);
        assert!(run_trajectory(&rho, &spec, &cfg).is_err());
        assert!(JkoConfig::new(-1.0, 1, SolverKind::FrankWolfe).validate().is_err());
    }
}
