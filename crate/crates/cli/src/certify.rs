//! Certification suite: the solvers against brute-force and grid-search
//! oracles, structural invariants and the finite-volume reference.
//!
//! The OT solver is injectable so that a deliberately broken solver can be
//! shown to fail the suite.

use std::sync::Arc;

use jko_core::diagnostics::elementary_inequality_check;
use jko_core::energy::{EnergySpec, InternalDensityKind, PotentialField};
use jko_core::jko::{jko_step, jko_step_crowd};
use jko_core::oracle::{
    brute_force_crowd, brute_force_ot, cell_averages, fd_reference_1d, greedy_fill_minimizer, grid_search_jko, FdProblem,
    PdeKind, QuantizedInstance, QuantizedTarget,
};
use jko_core::transport::TransportOptions;
use jko_core::{run_trajectory, solve_ot, DiscreteMeasure, JkoConfig, LatticeSpec, SolverKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// `W_2^2(μ, ν)` for the `½|x-y|^2`-free squared-distance cost.
pub type OtSolverFn = dyn Fn(&DiscreteMeasure, &DiscreteMeasure) -> jko_core::Result<f64> + Send + Sync;

#[derive(Clone)]
pub struct CertifyOptions {
    pub seed: u64,
    pub solver: Arc<OtSolverFn>,
}

impl CertifyOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            solver: Arc::new(|a, b| solve_ot(a, b, &TransportOptions::default()).map(|s| s.w2_squared)),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub passed: usize,
    pub failed: usize,
    /// First few failing cases.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertifyReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
    pub passed: bool,
}

impl CertifyReport {
    /// Pass/fail matrix, one line per suite.
    pub fn matrix(&self) -> String {
        let mut s = format!("{:<18}{:>7}{:>8}{:>8}  verdict\n", "suite", "cases", "passed", "failed");
        for r in &self.suites {
            let verdict = if r.failed == 0 { "PASS" } else { "FAIL" };
            s.push_str(&format!("{:<18}{:>7}{:>8}{:>8}  {verdict}\n", r.name, r.cases, r.passed, r.failed));
        }
        s
    }
}

struct Tally {
    name: &'static str,
    cases: usize,
    failures: Vec<String>,
    failed: usize,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            failures: Vec::new(),
            failed: 0,
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failed += 1;
            if self.failures.len() < 5 {
                self.failures.push(what());
            }
        }
    }

    fn result<T>(&mut self, r: jko_core::Result<T>, what: &str) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.check(false, || format!("{what}: {e}"));
                None
            }
        }
    }

    fn done(self) -> SuiteResult {
        SuiteResult {
            name: self.name,
            cases: self.cases,
            passed: self.cases - self.failed,
            failed: self.failed,
            failures: self.failures,
        }
    }
}

type Suite = fn(&CertifyOptions, &mut ChaCha8Rng) -> SuiteResult;

const SUITES: [(&str, Suite); 5] = [
    ("ot_oracle", ot_oracle),
    ("jko_grid_search", jko_grid_search),
    ("crowd_oracle", crowd_oracle),
    ("invariants", invariants),
    ("fd_reference", fd_reference),
];

/// Runs every suite; each draws from its own stream derived from the seed, so
/// the report does not depend on scheduling.
pub fn certify(opts: &CertifyOptions) -> CertifyReport {
    let suites: Vec<SuiteResult> = SUITES
        .par_iter()
        .enumerate()
        .map(|(i, (_, suite))| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(i as u64 + 1);
            suite(opts, &mut rng)
        })
        .collect();
    let passed = suites.iter().all(|s| s.failed == 0);
    CertifyReport {
        seed: opts.seed,
        suites,
        passed,
    }
}

/// `q` units spread over at most `max_support` distinct nodes.
fn random_units(rng: &mut ChaCha8Rng, nodes: usize, q: u32, max_support: usize) -> Vec<(usize, u32)> {
    let s = rng.gen_range(1..=max_support.min(q as usize).min(nodes));
    let mut idx: Vec<usize> = (0..nodes).collect();
    idx.shuffle(rng);
    let mut units = vec![1u32; s];
    for _ in 0..q - s as u32 {
        units[rng.gen_range(0..s)] += 1;
    }
    let mut out: Vec<(usize, u32)> = idx[..s].iter().copied().zip(units).collect();
    out.sort_unstable();
    out
}

fn ot_oracle(opts: &CertifyOptions, rng: &mut ChaCha8Rng) -> SuiteResult {
    let mut t = Tally::new("ot_oracle");
    let lattices = [
        Arc::new(LatticeSpec::unit_origin(0.5, &[6]).unwrap()),
        Arc::new(LatticeSpec::unit_origin(1.0 / 3.0, &[3, 3]).unwrap()),
    ];
    for l in &lattices {
        for _ in 0..60 {
            let q = rng.gen_range(1..=6);
            let src = random_units(rng, l.len(), q, 4);
            let tgt = random_units(rng, l.len(), q, 4);
            let Some(inst) = t.result(
                QuantizedInstance::new(l.clone(), q, src, QuantizedTarget::Marginal(tgt)),
                "instance",
            ) else {
                continue;
            };
            let Some(oracle) = t.result(brute_force_ot(&inst), "brute force") else { continue };
            let Some((mu, nu)) = t.result(inst.measures(), "measures") else { continue };
            let Some(w) = t.result((opts.solver)(&mu, &nu), "solver") else { continue };
            t.check((w - oracle.w2_squared).abs() <= 1e-9 * (1.0 + oracle.w2_squared), || {
                format!("{:?} -> {:?}: solver {w}, oracle {}", inst.source, inst.target, oracle.w2_squared)
            });
        }
    }
    t.done()
}

fn jko_grid_search(_: &CertifyOptions, rng: &mut ChaCha8Rng) -> SuiteResult {
    let mut t = Tally::new("jko_grid_search");
    let l = Arc::new(LatticeSpec::unit_origin(1.0 / 3.0, &[3]).unwrap());
    for kind in [InternalDensityKind::Entropy, InternalDensityKind::power_law(2.0).unwrap()] {
        for with_v in [false, true] {
            for _ in 0..3 {
                let mut b = EnergySpec::builder(l.clone()).internal(kind.clone());
                if with_v {
                    let slope = rng.gen_range(-3.0..3.0);
                    b = b.potential_field(&PotentialField::Linear { slope: vec![slope], offset: 0.0 });
                }
                let Some(spec) = t.result(b.build(), "energy") else { continue };
                let w = (0..3).map(|_| rng.gen_range(0.05..1.0)).collect();
                let Some(rho) = t.result(DiscreteMeasure::normalized(l.clone(), w), "measure") else { continue };
                let tau = rng.gen_range(0.05..0.5);
                let Some(step) = t.result(jko_step(&rho, &spec, tau, &JkoConfig::for_spec(&spec, tau, 1)), "step") else {
                    continue;
                };
                let Some(grid) = t.result(grid_search_jko(&rho, &spec, tau, 200), "grid search") else { continue };
                let diff = (step.objective - grid.objective).abs();
                t.check(diff <= 1e-6 && step.gap <= 1e-8, || {
                    format!("{} τ = {tau}: |Δ objective| = {diff:e}, gap {:e}", kind.name(), step.gap)
                });
            }
        }
    }
    t.done()
}

fn crowd_oracle(_: &CertifyOptions, rng: &mut ChaCha8Rng) -> SuiteResult {
    let mut t = Tally::new("crowd_oracle");
    let l = Arc::new(LatticeSpec::unit_origin(0.5, &[4]).unwrap());
    for _ in 0..24 {
        // Node capacity h = q/2 units.
        let q = 2 * rng.gen_range(1..=3);
        let slope = rng.gen_range(-2.0..2.0);
        let tau = rng.gen_range(0.05..1.0);
        let field = PotentialField::Linear { slope: vec![slope], offset: 0.0 };
        let Some(spec) = t.result(EnergySpec::builder(l.clone()).potential_field(&field).crowd(true).build(), "energy")
        else {
            continue;
        };
        let v = spec.potential_values();
        let src = random_units(rng, l.len(), q, 4);
        let caps = (0..l.len()).map(|z| (z, q / 2)).collect();
        let Some(inst) = t.result(QuantizedInstance::new(l.clone(), q, src, QuantizedTarget::Capacities(caps)), "instance")
        else {
            continue;
        };
        let Some(oracle) = t.result(brute_force_crowd(&inst, &v, tau), "brute force") else { continue };
        let mut w = vec![0.0; l.len()];
        inst.source.iter().for_each(|&(z, u)| w[z] = u as f64 / q as f64);
        let Some(rho) = t.result(DiscreteMeasure::new(l.clone(), w), "measure") else { continue };
        let Some(step) = t.result(jko_step_crowd(&rho, &spec, tau), "crowd step") else { continue };
        let diff = (step.objective - oracle.objective).abs();
        t.check(diff <= 1e-9 * (1.0 + oracle.objective.abs()), || {
            format!("{:?}, slope {slope}, τ = {tau}: |Δ objective| = {diff:e}", inst.source)
        });
    }
    for slope in [1.0, -0.5, 0.0] {
        let l = Arc::new(LatticeSpec::unit_origin(0.25, &[8]).unwrap());
        let field = PotentialField::Linear { slope: vec![slope], offset: 0.0 };
        let Some(spec) = t.result(EnergySpec::builder(l.clone()).potential_field(&field).crowd(true).build(), "energy")
        else {
            continue;
        };
        let rho = DiscreteMeasure::uniform(l.clone());
        let Some(step) = t.result(jko_step_crowd(&rho, &spec, f64::INFINITY), "energy-only step") else { continue };
        let Some(greedy) = t.result(greedy_fill_minimizer(&spec.potential_values(), l), "greedy fill") else { continue };
        let diff = spec.eval_weights(step.rho.weights()) - spec.eval_weights(greedy.weights());
        t.check(diff.abs() <= 1e-12, || format!("slope {slope}: energy-only step off greedy fill by {diff:e}"));
    }
    t.done()
}

fn invariants(opts: &CertifyOptions, rng: &mut ChaCha8Rng) -> SuiteResult {
    let mut t = Tally::new("invariants");
    let l = Arc::new(LatticeSpec::unit_origin(1.0 / 3.0, &[3, 3]).unwrap());
    let random = |rng: &mut ChaCha8Rng| {
        let w = (0..l.len()).map(|_| if rng.gen_bool(0.4) { 0.0 } else { rng.gen_range(0.01..1.0) }).collect();
        DiscreteMeasure::normalized(l.clone(), w)
    };
    for _ in 0..20 {
        let (Some(a), Some(b), Some(c)) = (
            t.result(random(rng), "measure"),
            t.result(random(rng), "measure"),
            t.result(random(rng), "measure"),
        ) else {
            continue;
        };
        let w = |x: &DiscreteMeasure, y: &DiscreteMeasure| (opts.solver)(x, y);
        let (Ok(ab), Ok(ba), Ok(bc), Ok(ac), Ok(aa)) = (w(&a, &b), w(&b, &a), w(&b, &c), w(&a, &c), w(&a, &a)) else {
            t.check(false, || "solver error".into());
            continue;
        };
        t.check(ab >= 0.0 && (ab - ba).abs() <= 1e-12, || format!("symmetry: {ab} vs {ba}"));
        t.check(aa.abs() <= 1e-14, || format!("W(μ, μ) = {aa}"));
        t.check(ac.sqrt() <= ab.sqrt() + bc.sqrt() + 1e-12, || {
            format!("triangle: {} > {} + {}", ac.sqrt(), ab.sqrt(), bc.sqrt())
        });
    }

    // h/τ > 2 Lip(V): a pure potential leaves every measure in place.
    let line = Arc::new(LatticeSpec::unit_origin(0.1, &[10]).unwrap());
    let field = PotentialField::Linear { slope: vec![1.0], offset: 0.0 };
    if let Some(spec) = t.result(EnergySpec::builder(line.clone()).potential_field(&field).build(), "energy") {
        let cfg = JkoConfig::new(0.045, 5, SolverKind::PurePotential);
        for _ in 0..10 {
            let mut w = vec![0.0; line.len()];
            for _ in 0..rng.gen_range(1..=4) {
                w[rng.gen_range(0..line.len())] += rng.gen_range(0.1..1.0);
            }
            let Some(rho0) = t.result(DiscreteMeasure::normalized(line.clone(), w), "measure") else { continue };
            let Some(traj) = t.result(run_trajectory(&rho0, &spec, &cfg), "trajectory") else { continue };
            t.check(traj.is_complete() && traj.iterates.iter().all(|r| r.weights() == rho0.weights()), || {
                "frozen regime moved mass".into()
            });
        }
    }

    // Mass conservation and energy decay along a Fokker-Planck run.
    let well = PotentialField::QuadraticWell { center: vec![0.3], stiffness: 2.0 };
    if let Some(spec) = t.result(
        EnergySpec::builder(line.clone()).internal(InternalDensityKind::Entropy).potential_field(&well).build(),
        "energy",
    ) {
        let w = (0..line.len()).map(|_| rng.gen_range(0.05..1.0)).collect();
        if let Some(rho0) = t.result(DiscreteMeasure::normalized(line.clone(), w), "measure") {
            if let Some(traj) = t.result(run_trajectory(&rho0, &spec, &JkoConfig::for_spec(&spec, 0.05, 8)), "trajectory") {
                t.check(traj.is_complete(), || format!("run stopped: {:?}", traj.failure));
                for d in &traj.diagnostics {
                    t.check(d.mass_drift.abs() <= 1e-12, || format!("step {}: mass drift {:e}", d.step, d.mass_drift));
                    t.check(d.step_dissipation <= d.gap + 1e-12, || {
                        format!("step {}: energy plus kinetic rose by {:e}", d.step, d.step_dissipation)
                    });
                }
            }
        }
    }

    let mut bad = 0;
    for _ in 0..10_000 {
        let eps = rng.gen_range(1e-6..1.0f64);
        let b = rng.gen_range(0.0..10.0f64);
        let a = (b - eps + rng.gen_range(0.0..3.0)).max(0.0);
        if !elementary_inequality_check(a, b, eps).unwrap_or(false) {
            bad += 1;
        }
    }
    t.check(bad == 0, || format!("elementary inequality failed on {bad} samples"));
    t.done()
}

fn fd_reference(_: &CertifyOptions, rng: &mut ChaCha8Rng) -> SuiteResult {
    let mut t = Tally::new("fd_reference");
    let cells = 64;
    let cases = [
        (PdeKind::FokkerPlanck, PotentialField::Constant(0.0)),
        (PdeKind::PorousMedium { m: 2.0 }, PotentialField::Constant(0.0)),
        (PdeKind::Transport, PotentialField::Constant(0.0)),
    ];
    for (kind, potential) in cases {
        let problem = FdProblem {
            kind,
            potential,
            lower: 0.0,
            upper: 1.0,
            cells,
            horizon: 0.2,
            steps: 20,
        };
        let Some(sol) = t.result(fd_reference_1d(&problem, &vec![1.0; cells]), "reference") else { continue };
        let spread = sol.density.iter().map(|u| (u - 1.0).abs()).fold(0.0, f64::max);
        t.check(spread <= 1e-12, || format!("{kind:?}: uniform drifted by {spread:e}"));
    }
    for kind in [PdeKind::FokkerPlanck, PdeKind::PorousMedium { m: 2.0 }] {
        let c = rng.gen_range(0.2..0.8);
        let amp = rng.gen_range(0.1..0.9);
        let problem = FdProblem {
            kind,
            potential: PotentialField::QuadraticWell { center: vec![c], stiffness: 3.0 },
            lower: 0.0,
            upper: 1.0,
            cells,
            horizon: 0.3,
            steps: 30,
        };
        let u0 = cell_averages(0.0, 1.0, cells, |x| 1.0 + amp * (std::f64::consts::PI * x).cos());
        let Some(sol) = t.result(fd_reference_1d(&problem, &u0), "reference") else { continue };
        t.check(sol.mass_error <= 1e-12, || format!("{kind:?}: mass error {:e}", sol.mass_error));
        t.check(sol.density.iter().all(|&u| u >= 0.0), || format!("{kind:?}: negative density"));
    }
    t.done()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_units_sum_to_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for q in 1..=6 {
            let u = random_units(&mut rng, 9, q, 4);
            assert_eq!(u.iter().map(|p| p.1).sum::<u32>(), q);
            assert!(u.len() <= 4 && u.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }

    #[test]
    fn suite_names_are_distinct() {
        let mut names: Vec<&str> = SUITES.iter().map(|s| s.0).collect();
        names.dedup();
        assert_eq!(names.len(), SUITES.len());
    }
}
