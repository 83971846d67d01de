//! Discrete Fisher informations, pressure, energy-dissipation ledgers and
//! related monitored quantities.

mod edi;

use serde::Serialize;

use crate::energy::{EnergySpec, InternalDensityKind};
use crate::error::{Error, Result};
use crate::jko::{JkoConfig, StepResult};
use crate::lattice::LatticeSpec;
use crate::measure::DiscreteMeasure;
use crate::transport::DualPotentials;

pub use edi::{edi_report, one_step_inequality, EdiLedger, OneStepCheck};

/// Complementarity above this is logged by [`fisher_crowd`].
pub const COMPLEMENTARITY_WARN: f64 = 1e-8;

/// Sum over directed neighbor pairs `(x, y)` of `term(x, y)`.
fn sum_directed(lattice: &LatticeSpec, mut term: impl FnMut(usize, usize) -> f64) -> f64 {
    let mut total = 0.0;
    for x in 0..lattice.len() {
        lattice.for_each_neighbor(x, |nb| total += term(x, nb.node));
    }
    total
}

/// `ℓ(u_z)` per node.
pub fn ell_field(rho: &DiscreteMeasure, kind: &InternalDensityKind) -> Vec<f64> {
    rho.density().iter().map(|&u| kind.ell_unchecked(u.max(0.0))).collect()
}

/// `S^h = ¼ Σ_x Σ_𝐡 |ℓ(u_{x+𝐡}) - ℓ(u_x)|^2 / h^2 · h^d`.
pub fn fisher_internal(rho: &DiscreteMeasure, kind: &InternalDensityKind) -> f64 {
    fisher_of_density(rho.lattice(), &rho.density(), kind)
}

/// [`fisher_internal`] on a raw nonnegative density field (any total mass).
pub fn fisher_of_density(lattice: &LatticeSpec, u: &[f64], kind: &InternalDensityKind) -> f64 {
    let e: Vec<f64> = u.iter().map(|&s| kind.ell_unchecked(s.max(0.0))).collect();
    let h = lattice.spacing();
    0.25 * sum_directed(lattice, |x, y| (e[y] - e[x]).powi(2)) / (h * h) * lattice.cell_volume()
}

/// `S^h_V`, with `√max(u_x, u_y) (V(y) - V(x))` added inside each square.
pub fn fisher_with_potential(rho: &DiscreteMeasure, kind: &InternalDensityKind, v: &[f64]) -> Result<f64> {
    let l = rho.lattice();
    if v.len() != l.len() {
        return Err(Error::InvalidArgument("potential does not match lattice".into()));
    }
    let u = rho.density();
    let e = ell_field(rho, kind);
    let h = l.spacing();
    let sum = sum_directed(l, |x, y| {
        let d = e[y] - e[x] + u[x].max(u[y]).max(0.0).sqrt() * (v[y] - v[x]);
        d * d
    });
    Ok(0.25 * sum / (h * h) * l.cell_volume())
}

/// `u_x` if `w_x ≥ w_y`, else `u_y`.
pub fn upwind_mean(ux: f64, uy: f64, wx: f64, wy: f64) -> f64 {
    if wx >= wy {
        ux
    } else {
        uy
    }
}

/// `max_x |p_x (1 - u_x)|`.
pub fn complementarity_residual(u: &[f64], p: &[f64]) -> f64 {
    u.iter().zip(p).map(|(a, b)| (b * (1.0 - a)).abs()).fold(0.0, f64::max)
}

/// `S^h_CM = ¼ Σ_{Σ^h} [(p_x-p_y)^2 + 2(p_x-p_y)(V_x-V_y) + (V_x-V_y)^2 Λ_V(u_x,u_y)] h^{d-2}`.
pub fn fisher_crowd(lattice: &LatticeSpec, u: &[f64], p: &[f64], v: &[f64]) -> Result<f64> {
    let m = lattice.len();
    if u.len() != m || p.len() != m || v.len() != m {
        return Err(Error::InvalidArgument("field lengths do not match lattice".into()));
    }
    if p.iter().any(|&q| q < 0.0) {
        return Err(Error::InvalidArgument("pressure must be nonnegative".into()));
    }
    let comp = complementarity_residual(u, p);
    if comp > COMPLEMENTARITY_WARN {
        log::warn!("pressure violates complementarity by {comp:e}");
    }
    let sum = sum_directed(lattice, |x, y| {
        let dp = p[x] - p[y];
        let dv = v[x] - v[y];
        dp * dp + 2.0 * dp * dv + dv * dv * upwind_mean(u[x], u[y], v[x], v[y])
    });
    Ok(0.25 * sum * lattice.spacing().powi(lattice.dim() as i32 - 2))
}

/// `(p - ε)^+` per node.
pub fn truncate_pressure(p: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("truncation level must be nonnegative, got {eps}")));
    }
    Ok(p.iter().map(|&q| (q - eps).max(0.0)).collect())
}

/// `ε(h) = (Lip(V) + 1) h`.
pub fn default_truncation(h: f64, lip: f64) -> f64 {
    (lip + 1.0) * h
}

/// `p = (c - V - φ/τ)^+` and `c`. With `τ = ∞`, `duals.phi` is read as `φ/τ`.
pub fn extract_pressure(duals: &DualPotentials, v: &[f64], tau: f64) -> Result<(Vec<f64>, f64)> {
    let c = duals
        .constant
        .ok_or_else(|| Error::InvalidArgument("duals carry no mass-balance constant".into()))?;
    if v.len() != duals.phi.len() {
        return Err(Error::InvalidArgument("potential does not match duals".into()));
    }
    let scale = if tau.is_finite() { tau } else { 1.0 };
    let p = duals
        .phi
        .iter()
        .zip(v)
        .map(|(phi, vx)| (c - vx - phi / scale).max(0.0))
        .collect();
    Ok((p, c))
}

/// One face of the dual mesh: the cell `Q_h((lower + upper)/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualFace {
    pub lower: usize,
    pub upper: usize,
    pub axis: usize,
    /// Component along `axis`.
    pub value: f64,
}

/// Piecewise-constant vector field on dual cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteGradient {
    pub faces: Vec<DualFace>,
    cell_volume: f64,
}

impl DiscreteGradient {
    /// Squared `L^2` norm of the field over the box.
    pub fn l2_norm_squared(&self) -> f64 {
        // dual cells of one axis are disjoint; different axes are orthogonal
        self.faces.iter().map(|f| f.value * f.value).sum::<f64>() * self.cell_volume
    }
}

/// `½ Σ_x Σ_𝐡 1_{Q_h(x+𝐡/2)} (𝐡/h) (g(x+𝐡) - g(x))/h`. Both orientations of a
/// pair land on the same dual cell, so its component is `(g(upper) - g(lower))/h`.
pub fn discrete_gradient(lattice: &LatticeSpec, field: &[f64]) -> Result<DiscreteGradient> {
    if field.len() != lattice.len() {
        return Err(Error::InvalidArgument("field does not match lattice".into()));
    }
    let h = lattice.spacing();
    let mut faces: Vec<DualFace> = lattice
        .edges()
        .into_iter()
        .map(|(lower, upper, axis)| DualFace {
            lower,
            upper,
            axis,
            value: 0.0,
        })
        .collect();
    for f in &mut faces {
        // (x = lower, 𝐡 = +h e) and (x = upper, 𝐡 = -h e)
        let forward = 0.5 * (field[f.upper] - field[f.lower]) / h;
        let backward = 0.5 * -(field[f.lower] - field[f.upper]) / h;
        f.value = forward + backward;
    }
    Ok(DiscreteGradient {
        faces,
        cell_volume: lattice.cell_volume(),
    })
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// Tensor Gauss quadrature of `g` over the cube of side `h` centred at `c`.
fn cube_quadrature(c: &[f64], h: f64, g: &dyn Fn(&[f64]) -> f64) -> f64 {
    let d = c.len();
    let mut idx = vec![0usize; d];
    let mut pt = vec![0.0; d];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for a in 0..d {
            let (node, weight) = GAUSS4[idx[a]];
            pt[a] = c[a] + 0.5 * h * node;
            w *= 0.5 * h * weight;
        }
        total += w * g(&pt);
        let mut a = 0;
        loop {
            if a == d {
                return total;
            }
            idx[a] += 1;
            if idx[a] < GAUSS4.len() {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

/// `|∫ (∇·φ) ĝ + ∫ φ · ∇̄^h ĝ|` for a smooth test field `φ` whose normal
/// component vanishes on the boundary of the box.
pub fn integration_by_parts_defect(
    lattice: &LatticeSpec,
    field: &[f64],
    phi: &dyn Fn(&[f64]) -> Vec<f64>,
    div_phi: &dyn Fn(&[f64]) -> f64,
) -> Result<f64> {
    let grad = discrete_gradient(lattice, field)?;
    let h = lattice.spacing();
    let pos = lattice.positions();
    let mut lhs = 0.0;
    for (z, p) in pos.iter().enumerate() {
        lhs += field[z] * cube_quadrature(p, h, div_phi);
    }
    let mut rhs = 0.0;
    for f in &grad.faces {
        let mid: Vec<f64> = pos[f.lower].iter().zip(&pos[f.upper]).map(|(a, b)| 0.5 * (a + b)).collect();
        let axis = f.axis;
        rhs += f.value * cube_quadrature(&mid, h, &|x| phi(x)[axis]);
    }
    Ok((lhs + rhs).abs())
}

/// `‖ĝ - mean‖^2_{L^2} / Σ_{Σ^h} |g_p - g_q|^2 h^{d-2}`.
pub fn poincare_ratio(lattice: &LatticeSpec, field: &[f64]) -> Result<f64> {
    if field.len() != lattice.len() {
        return Err(Error::InvalidArgument("field does not match lattice".into()));
    }
    let vol = lattice.cell_volume();
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let num: f64 = field.iter().map(|g| (g - mean).powi(2)).sum::<f64>() * vol;
    let den = sum_directed(lattice, |x, y| (field[x] - field[y]).powi(2)) * lattice.spacing().powi(lattice.dim() as i32 - 2);
    if den == 0.0 {
        return Err(Error::InvalidArgument("constant field: Poincaré ratio undefined".into()));
    }
    Ok(num / den)
}

/// For `a, b ≥ 0`, `ε > 0` and `a ≥ b - ε`: whether `a^2 ≥ (1-ε) b^2 - ε`.
pub fn elementary_inequality_check(a: f64, b: f64, eps: f64) -> Result<bool> {
    if !(a >= 0.0 && b >= 0.0 && eps > 0.0) || a < b - eps {
        return Err(Error::InvalidArgument(format!(
            "precondition a, b ≥ 0, ε > 0, a ≥ b - ε fails for ({a}, {b}, {eps})"
        )));
    }
    Ok(a * a >= (1.0 - eps) * b * b - eps)
}

/// `max |f'(u_x) + V(x) + φ(x)/τ - c|` over `{u_x > δ}`, where `c` is the
/// `ρ`-weighted least-squares constant.
pub fn optimality_residual(rho: &DiscreteMeasure, spec: &EnergySpec, phi: &[f64], tau: f64, delta: f64) -> Result<f64> {
    let grad = spec.first_variation(rho, Some(delta))?;
    let u = rho.density();
    let w = rho.weights();
    let scale = if tau.is_finite() { 1.0 / tau } else { 0.0 };
    let vals: Vec<(f64, f64)> = (0..u.len())
        .filter(|&x| u[x] > delta)
        .map(|x| (grad[x] + phi[x] * scale, w[x]))
        .collect();
    let mass: f64 = vals.iter().map(|v| v.1).sum();
    if mass == 0.0 {
        return Ok(0.0);
    }
    let c = vals.iter().map(|(g, wx)| g * wx).sum::<f64>() / mass;
    Ok(vals.iter().map(|(g, _)| (g - c).abs()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeReport {
    /// `W_2^2 / 2τ^2`.
    pub lhs: f64,
    /// `(1 - h/2τ) S - d h / 4τ`.
    pub rhs: f64,
    pub fisher: f64,
    /// `lhs - rhs`.
    pub slack: f64,
    /// Prefactor `1 - h/2τ ≤ 0`.
    pub skipped: bool,
    /// True when the potential is constant, so the bound has no extra error term.
    pub asserted: bool,
    /// `lhs + allowance ≥ rhs` (always true when skipped).
    pub holds: bool,
}

/// Slope bound for a step output: `W_2^2/2τ^2 ≥ (1 - h/2τ) S - dh/4τ`, with
/// `S = S^h_V` (equal to `S^h` for constant `V`). `allowance` absorbs the
/// solver's inexactness.
pub fn slope_bound_check(rho_next: &DiscreteMeasure, w2_squared: f64, spec: &EnergySpec, tau: f64, allowance: f64) -> Result<SlopeReport> {
    let kind = spec
        .internal()
        .ok_or_else(|| Error::InvalidArgument("slope bound needs an internal density".into()))?;
    let l = rho_next.lattice();
    let h = l.spacing();
    let fisher = fisher_with_potential(rho_next, kind, &spec.potential_values())?;
    let asserted = spec.potential().is_none_or(|p| p.is_constant());
    let lhs = if tau.is_finite() { w2_squared / (2.0 * tau * tau) } else { 0.0 };
    let factor = 1.0 - h / (2.0 * tau);
    let rhs = factor * fisher - l.dim() as f64 * h / (4.0 * tau);
    let skipped = factor <= 0.0;
    Ok(SlopeReport {
        lhs,
        rhs,
        fisher,
        slack: lhs - rhs,
        skipped,
        asserted,
        holds: skipped || lhs + allowance >= rhs,
    })
}

/// Per-step record of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub energy: f64,
    pub w2_squared: f64,
    /// `W_2 / τ`.
    pub speed: f64,
    pub fisher: Option<f64>,
    pub fisher_potential: Option<f64>,
    pub fisher_crowd: Option<f64>,
    pub optimality_residual: Option<f64>,
    pub slope_slack: Option<f64>,
    pub pressure: Option<Vec<f64>>,
    pub truncated_pressure: Option<Vec<f64>>,
    pub complementarity: Option<f64>,
    pub mass_drift: f64,
    pub gap: f64,
    pub converged: bool,
    /// `F(ρ_k) + W_2^2/2τ - F(ρ_{k-1})`.
    pub step_dissipation: f64,
    /// `F(ρ_0) - F(ρ_k)`.
    pub energy_drop: f64,
    /// `½ Σ_{j ≤ k} τ (W_2/τ)^2`.
    pub kinetic: f64,
}

pub(crate) struct RunningLedger {
    e0: f64,
    prev: f64,
    kinetic: f64,
}

impl RunningLedger {
    pub(crate) fn new(e0: f64) -> Self {
        Self {
            e0,
            prev: e0,
            kinetic: 0.0,
        }
    }
}

pub(crate) fn step_diagnostics(
    k: usize,
    res: &StepResult,
    spec: &EnergySpec,
    cfg: &JkoConfig,
    ledger: &mut RunningLedger,
) -> StepDiagnostics {
    let tau = cfg.tau;
    let l = res.rho.lattice();
    let v = spec.potential_values();
    let half_kin = if tau.is_finite() { res.w2_squared / (2.0 * tau) } else { 0.0 };
    ledger.kinetic += half_kin;
    let step_dissipation = res.energy + half_kin - ledger.prev;
    ledger.prev = res.energy;

    let mut d = StepDiagnostics {
        step: k,
        time: k as f64 * tau,
        energy: res.energy,
        w2_squared: res.w2_squared,
        speed: if tau.is_finite() { res.w2_squared.sqrt() / tau } else { 0.0 },
        fisher: None,
        fisher_potential: None,
        fisher_crowd: None,
        optimality_residual: None,
        slope_slack: None,
        pressure: None,
        truncated_pressure: None,
        complementarity: None,
        mass_drift: res.mass_drift,
        gap: res.gap,
        converged: res.converged,
        step_dissipation,
        energy_drop: ledger.e0 - res.energy,
        kinetic: ledger.kinetic,
    };
    if let Some(kind) = spec.internal() {
        if cfg.diagnostics.fisher {
            d.fisher = Some(fisher_internal(&res.rho, kind));
            d.fisher_potential = fisher_with_potential(&res.rho, kind, &v).ok();
        }
        if cfg.diagnostics.optimality {
            d.optimality_residual = optimality_residual(&res.rho, spec, &res.duals.phi, tau, cfg.clamp).ok();
        }
        if cfg.diagnostics.slope_check {
            d.slope_slack = slope_bound_check(&res.rho, res.w2_squared, spec, tau, 0.0)
                .ok()
                .filter(|r| !r.skipped)
                .map(|r| r.slack);
        }
    }
    if let Some(p) = &res.pressure {
        let u = res.rho.density();
        let eps = default_truncation(l.spacing(), spec.lipschitz());
        let g = truncate_pressure(p, eps).expect("truncation level is nonnegative");
        d.complementarity = Some(complementarity_residual(&u, p));
        if cfg.diagnostics.fisher {
            d.fisher_crowd = fisher_crowd(l, &u, &g, &v).ok();
        }
        d.pressure = Some(p.clone());
        d.truncated_pressure = Some(g);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::PotentialField;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn line(h: f64, n: usize) -> Arc<LatticeSpec> {
        Arc::new(LatticeSpec::unit_origin(h, &[n]).unwrap())
    }

    #[test]
    fn fisher_of_uniform_is_zero() {
        let l = Arc::new(LatticeSpec::unit_origin(0.25, &[4, 4]).unwrap());
        let rho = DiscreteMeasure::uniform(l);
        assert_eq!(fisher_internal(&rho, &InternalDensityKind::Entropy), 0.0);
    }

    #[test]
    fn fisher_two_node_hand_value() {
        let l = line(0.5, 2);
        let s = fisher_of_density(&l, &[1.0, 4.0], &InternalDensityKind::Entropy);
        assert!((s - 4.0).abs() < 1e-12);
    }

    #[test]
    fn constant_potential_reduces_to_internal() {
        let l = line(0.1, 10);
        let rho = DiscreteMeasure::normalized(l.clone(), (1..=10).map(|i| (i * i) as f64).collect()).unwrap();
        let v = PotentialField::Constant(3.0).sample(&l);
        let k = InternalDensityKind::power_law(2.5).unwrap();
        assert_eq!(fisher_with_potential(&rho, &k, &v).unwrap(), fisher_internal(&rho, &k));
    }

    #[test]
    fn uniform_density_linear_potential() {
        let l = line(0.1, 10);
        let rho = DiscreteMeasure::uniform(l.clone());
        let g = 2.0;
        let v = PotentialField::Linear { slope: vec![g], offset: 0.0 }.sample(&l);
        // 18 directed pairs, each (√u g h)^2 / h^2 h with u = 1
        let expect = 0.25 * 18.0 * g * g * 0.1;
        let got = fisher_with_potential(&rho, &InternalDensityKind::Entropy, &v).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn upwind_mean_cases() {
        assert_eq!(upwind_mean(0.2, 0.7, 1.0, 0.0), 0.2);
        assert_eq!(upwind_mean(0.2, 0.7, 0.0, 1.0), 0.7);
        assert_eq!(upwind_mean(0.2, 0.7, 1.0, 1.0), 0.2);
        assert_eq!(upwind_mean(0.4, 0.4, -3.0, 5.0), 0.4);
    }

    #[test]
    fn truncation_cases() {
        assert_eq!(truncate_pressure(&[0.1, 0.2], 0.3).unwrap(), vec![0.0, 0.0]);
        assert_eq!(truncate_pressure(&[0.1, 0.2], 0.0).unwrap(), vec![0.1, 0.2]);
        assert_eq!(truncate_pressure(&[0.0, 0.5], 0.25).unwrap(), vec![0.0, 0.25]);
        assert!(truncate_pressure(&[0.1], -1.0).is_err());
    }

    #[test]
    fn crowd_fisher_formula_collapses() {
        let l = line(0.25, 4);
        let u = vec![1.0, 1.0, 0.5, 0.0];
        let v = vec![0.0; 4];
        assert_eq!(fisher_crowd(&l, &u, &[0.0; 4], &v).unwrap(), 0.0);
        let v: Vec<f64> = (0..4).map(|i| i as f64 * 0.25).collect();
        // p ≡ 0: ¼ Σ ΔV^2 Λ_V h^{-1}; uphill endpoint wins
        let mut expect = 0.0;
        for (x, y) in [(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2)] {
            let lam = if v[x] >= v[y] { u[x] } else { u[y] };
            expect += (v[x] - v[y]) * (v[x] - v[y]) * lam;
        }
        expect *= 0.25 / 0.25;
        assert!((fisher_crowd(&l, &u, &[0.0; 4], &v).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn crowd_fisher_saturated_block() {
        let l = line(0.25, 4);
        let u = vec![1.0, 1.0, 0.0, 0.0];
        let v = vec![0.125, 0.375, 0.625, 0.875];
        let p = vec![0.5, 0.25, 0.0, 0.0];
        // scripted evaluation of the definition, pair by pair
        let pairs = [(0usize, 1usize), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2)];
        let mut s = 0.0;
        for (x, y) in pairs {
            let dp: f64 = p[x] - p[y];
            let dv: f64 = v[x] - v[y];
            let lam = if v[x] >= v[y] { u[x] } else { u[y] };
            s += dp * dp + 2.0 * dp * dv + dv * dv * lam;
        }
        let expect = 0.25 * s / 0.25;
        assert!((fisher_crowd(&l, &u, &p, &v).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn pressure_extraction_is_gauge_consistent() {
        let duals = DualPotentials {
            phi: vec![0.0, 0.1, 0.3],
            psi: vec![0.0; 3],
            constant: Some(2.0),
            residual: 0.0,
            unique: true,
        };
        let v = vec![0.5, 1.0, 3.0];
        let (p, c) = extract_pressure(&duals, &v, 0.5).unwrap();
        assert_eq!(c, 2.0);
        assert_eq!(p, vec![1.5, 0.8, 0.0]);
        let shifted = DualPotentials {
            constant: Some(3.0),
            ..duals.clone()
        };
        let v1: Vec<f64> = v.iter().map(|a| a + 1.0).collect();
        assert_eq!(extract_pressure(&shifted, &v1, 0.5).unwrap().0, p);
        let plain = DualPotentials { constant: None, ..duals };
        assert!(extract_pressure(&plain, &v, 0.5).is_err());
    }

    #[test]
    fn gradient_of_constant_and_linear_fields() {
        let l = line(0.1, 10);
        let g = discrete_gradient(&l, &[3.0; 10]).unwrap();
        assert!(g.faces.iter().all(|f| f.value == 0.0));
        let lin: Vec<f64> = (0..10).map(|z| 2.0 * l.coordinate(z, 0)).collect();
        let g = discrete_gradient(&l, &lin).unwrap();
        assert!(g.faces.iter().all(|f| (f.value - 2.0).abs() < 1e-12));
    }

    #[test]
    fn gradient_norm_is_twice_the_fisher_information() {
        // both orientations of a pair add on one dual cell before squaring
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dims in [vec![9usize], vec![5, 4]] {
            let l = Arc::new(LatticeSpec::unit_origin(0.2, &dims).unwrap());
            let w: Vec<f64> = (0..l.len()).map(|_| rng.gen_range(0.01..1.0)).collect();
            let rho = DiscreteMeasure::normalized(l.clone(), w).unwrap();
            let kind = InternalDensityKind::Entropy;
            let s = fisher_internal(&rho, &kind);
            let n = discrete_gradient(&l, &ell_field(&rho, &kind)).unwrap().l2_norm_squared();
            assert!((n - 2.0 * s).abs() <= 1e-12 * s.max(1.0), "{n} vs 2·{s}");
        }
    }

    #[test]
    fn integration_by_parts_defect_shrinks_with_h() {
        use std::f64::consts::PI;
        let phi = |x: &[f64]| vec![(PI * x[0]).sin().powi(2)];
        let div = |x: &[f64]| 2.0 * PI * (PI * x[0]).sin() * (PI * x[0]).cos();
        let mut ratios = Vec::new();
        for n in [8usize, 16, 32, 64] {
            let l = Arc::new(LatticeSpec::unit_origin(1.0 / n as f64, &[n]).unwrap());
            let rho = crate::measure::discretize_fn(l.clone(), |x| 1.0 + 0.5 * (3.0 * x[0]).sin()).unwrap();
            let kind = InternalDensityKind::Entropy;
            let e = ell_field(&rho, &kind);
            let defect = integration_by_parts_defect(&l, &e, &phi, &div).unwrap();
            let s = fisher_internal(&rho, &kind);
            ratios.push(defect / (l.spacing() * s.sqrt()));
        }
        let c = ratios[0];
        assert!(ratios.iter().all(|&r| r <= c * 1.01 + 1e-12), "{ratios:?}");
    }

    #[test]
    fn poincare_two_nodes() {
        let h = 0.3;
        let l = line(h, 2);
        let r = poincare_ratio(&l, &[0.0, 1.0]).unwrap();
        assert!((r - h * h / 4.0).abs() < 1e-12);
        assert!(poincare_ratio(&l, &[1.0, 1.0]).is_err());
        let r2 = poincare_ratio(&l, &[5.0, 9.0]).unwrap();
        assert!((r - r2).abs() < 1e-12);
    }

    #[test]
    fn elementary_inequality_edges() {
        assert!(elementary_inequality_check(0.7, 0.7, 0.1).unwrap());
        assert!(elementary_inequality_check(0.0, 0.05, 0.1).unwrap());
        assert!(elementary_inequality_check(0.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn slope_bound_at_uniform_fixed_point() {
        let l = line(0.1, 10);
        let spec = EnergySpec::builder(l.clone()).internal(InternalDensityKind::Entropy).build().unwrap();
        let rho = DiscreteMeasure::uniform(l);
        let r = slope_bound_check(&rho, 0.0, &spec, 0.5, 0.0).unwrap();
        assert!(r.holds && !r.skipped);
        assert!((r.slack - 0.1 / 2.0).abs() < 1e-12);
        let r = slope_bound_check(&rho, 0.0, &spec, 0.05, 0.0).unwrap();
        assert!(r.skipped);
    }

    proptest! {
        #[test]
        fn fisher_values_are_nonnegative(w in prop::collection::vec(0.0f64..1.0, 6), slope in -3.0f64..3.0) {
            prop_assume!(w.iter().sum::<f64>() > 1e-3);
            let l = line(1.0 / 6.0, 6);
            let rho = DiscreteMeasure::normalized(l.clone(), w).unwrap();
            let v = PotentialField::Linear { slope: vec![slope], offset: 0.0 }.sample(&l);
            let k = InternalDensityKind::power_law(2.0).unwrap();
            prop_assert!(fisher_internal(&rho, &k) >= 0.0);
            prop_assert!(fisher_with_potential(&rho, &k, &v).unwrap() >= 0.0);
        }

        #[test]
        fn poincare_ratio_is_affine_invariant(f in prop::collection::vec(-5.0f64..5.0, 5), a in 0.1f64..10.0, b in -10.0f64..10.0) {
            let l = line(0.2, 5);
            prop_assume!(f.iter().any(|x| (x - f[0]).abs() > 1e-3));
            let g: Vec<f64> = f.iter().map(|x| a * x + b).collect();
            let r1 = poincare_ratio(&l, &f).unwrap();
            let r2 = poincare_ratio(&l, &g).unwrap();
            prop_assert!((r1 - r2).abs() <= 1e-9 * r1);
        }

        #[test]
        fn elementary_inequality_holds(b in 0.0f64..10.0, eps in 1e-6f64..1.0, t in 0.0f64..1.0) {
            let a = (b - eps).max(0.0) + t * 5.0;
            prop_assert!(elementary_inequality_check(a, b, eps).unwrap());
        }
    }
}
