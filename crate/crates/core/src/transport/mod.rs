//! Exact discrete optimal transport with quadratic cost on a shared lattice.
//!
//! Plans minimize `Σ γ_xy |x-y|^2`. Dual potentials are reported for the
//! halved cost `c(x,y) = |x-y|^2 / 2`, gauge-fixed so that `min φ = 0`.

pub mod network_simplex;

use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::measure::DiscreteMeasure;

pub use network_simplex::{FlowNetwork, FlowSolution};

/// Marginal mismatch tolerated before a solve is refused.
pub const MARGINAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportOptions {
    /// Only arcs with `|x - y| ≤ window` are offered to the solver. The
    /// result is checked for dual feasibility on all pairs and the window is
    /// doubled until it passes.
    pub window: Option<f64>,
    /// Shift duals so that `min φ = 0`.
    pub gauge: bool,
}

impl Default for TransportOptions {
    fn default() -> Self {
        Self {
            window: None,
            gauge: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    entries: Vec<(usize, usize, f64)>,
}

impl TransportPlan {
    pub(crate) fn from_entries(source: DiscreteMeasure, target: DiscreteMeasure, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.retain(|e| e.2 > 0.0);
        entries.sort_by_key(|&(x, y, _)| (x, y));
        Self { source, target, entries }
    }

    /// `(x, y, γ_xy)` with `γ_xy > 0`, sorted by `(x, y)`.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn source(&self) -> &DiscreteMeasure {
        &self.source
    }

    pub fn target(&self) -> &DiscreteMeasure {
        &self.target
    }

    pub fn support_size(&self) -> usize {
        self.entries.len()
    }

    /// `Σ γ_xy |x - y|^2`.
    pub fn cost(&self) -> f64 {
        let l = self.source.lattice();
        let steps: f64 = self.entries.iter().map(|&(x, y, g)| g * l.squared_steps(x, y) as f64).sum();
        steps * l.spacing() * l.spacing()
    }

    /// Largest deviation of the row and column sums from the marginals.
    pub fn marginal_error(&self) -> f64 {
        let n = self.source.len();
        let mut rows = vec![0.0; n];
        let mut cols = vec![0.0; n];
        for &(x, y, g) in &self.entries {
            rows[x] += g;
            cols[y] += g;
        }
        let r = rows.iter().zip(self.source.weights()).map(|(a, b)| (a - b).abs());
        let c = cols.iter().zip(self.target.weights()).map(|(a, b)| (a - b).abs());
        r.chain(c).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    /// Mass-balance constant `c` of a crowd step; `None` for plain transport.
    pub constant: Option<f64>,
    /// Complementary-slackness residual measured right after the solve.
    pub residual: f64,
    /// False when the plan is degenerate, so the potentials are one choice
    /// among several.
    pub unique: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtSolution {
    pub w2_squared: f64,
    pub plan: TransportPlan,
    pub duals: DualPotentials,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityReport {
    /// `max (φ(x) + ψ(y) - c(x,y))^+` over pairs of positive-weight nodes.
    pub max_violation: f64,
    /// `max |φ(x) + ψ(y) - c(x,y)|` on the plan support.
    pub max_support_gap: f64,
    pub tol: f64,
    pub passed: bool,
}

fn half_cost(l: &LatticeSpec, x: usize, y: usize) -> f64 {
    0.5 * l.squared_distance(x, y)
}

/// Optimal plan, `W_2^2` and Kantorovich potentials between `mu` and `nu`.
pub fn solve_ot(mu: &DiscreteMeasure, nu: &DiscreteMeasure, opts: &TransportOptions) -> Result<OtSolution> {
    if !mu.same_lattice(nu) {
        return Err(Error::LatticeMismatch);
    }
    let drift = mu.total_mass() - nu.total_mass();
    if drift.abs() > MARGINAL_TOL {
        return Err(Error::Infeasible(format!("marginals differ in mass by {drift}")));
    }
    let lattice = mu.lattice();
    let src: Vec<usize> = mu.support().collect();
    let dst: Vec<usize> = nu.support().collect();
    let diameter_sq: u64 = lattice.extents().iter().map(|&n| ((n - 1) * (n - 1)) as u64).sum();

    let mut window_sq = opts.window.map(|r| {
        let steps = r / lattice.spacing();
        (steps * steps).floor() as u64
    });
    loop {
        if window_sq.is_some_and(|w| w >= diameter_sq) {
            window_sq = None;
        }
        match solve_on_support(mu, nu, &src, &dst, window_sq, opts) {
            Ok(sol) => {
                if window_sq.is_none() || dual_feasible(lattice, &src, &dst, &sol.duals, 1e-9) {
                    return Ok(sol);
                }
                log::debug!("transport window too narrow, widening");
            }
            Err(Error::Infeasible(_)) if window_sq.is_some() => {
                log::debug!("windowed transport infeasible, widening");
            }
            Err(e) => return Err(e),
        }
        window_sq = window_sq.map(|w| (4 * w).max(1));
    }
}

fn dual_feasible(l: &LatticeSpec, src: &[usize], dst: &[usize], d: &DualPotentials, tol: f64) -> bool {
    src.iter()
        .all(|&x| dst.iter().all(|&y| d.phi[x] + d.psi[y] <= half_cost(l, x, y) + tol))
}

fn solve_on_support(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    src: &[usize],
    dst: &[usize],
    window_sq: Option<u64>,
    opts: &TransportOptions,
) -> Result<OtSolution> {
    let lattice = mu.lattice();
    let ns = src.len();
    let mut supply: Vec<f64> = src.iter().map(|&x| mu.weights()[x]).collect();
    supply.extend(dst.iter().map(|&y| -nu.weights()[y]));
    let mut net = FlowNetwork::new(supply);
    let mut pairs = Vec::new();
    for (i, &x) in src.iter().enumerate() {
        for (j, &y) in dst.iter().enumerate() {
            let steps = lattice.squared_steps(x, y);
            if window_sq.is_none_or(|w| steps <= w) {
                net.add_arc(i, ns + j, steps as f64, f64::INFINITY);
                pairs.push((x, y));
            }
        }
    }
    let sol = net.solve()?;

    let h2 = lattice.spacing() * lattice.spacing();
    let m = lattice.len();
    let mut entries: Vec<(usize, usize, f64)> = pairs
        .iter()
        .zip(&sol.flow)
        .filter(|(_, &f)| f > 0.0)
        .map(|(&(x, y), &f)| (x, y, f))
        .collect();
    entries.sort_by_key(|&(x, y, _)| (x, y));

    // φ(x) + ψ(y) ≤ |x-y|^2/2 from π_y - π_x ≤ steps.
    let mut phi = vec![f64::NAN; m];
    let mut psi = vec![f64::NAN; m];
    for (i, &x) in src.iter().enumerate() {
        phi[x] = -0.5 * h2 * sol.potential[i];
    }
    for (j, &y) in dst.iter().enumerate() {
        psi[y] = 0.5 * h2 * sol.potential[ns + j];
    }
    // c-transform extensions off the supports
    for y in 0..m {
        if psi[y].is_nan() {
            psi[y] = src.iter().map(|&x| half_cost(lattice, x, y) - phi[x]).fold(f64::INFINITY, f64::min);
        }
    }
    for x in 0..m {
        if phi[x].is_nan() {
            phi[x] = dst.iter().map(|&y| half_cost(lattice, x, y) - psi[y]).fold(f64::INFINITY, f64::min);
        }
    }
    if opts.gauge {
        let a = phi.iter().copied().fold(f64::INFINITY, f64::min);
        phi.iter_mut().for_each(|p| *p -= a);
        psi.iter_mut().for_each(|p| *p += a);
    }
    let plan = TransportPlan {
        source: mu.clone(),
        target: nu.clone(),
        entries,
    };
    let mut duals = DualPotentials {
        phi,
        psi,
        constant: None,
        residual: 0.0,
        unique: plan.support_size() + 1 >= ns + dst.len(),
    };
    duals.residual = {
        let r = check_duality(&plan, &duals, f64::INFINITY);
        r.max_violation.max(r.max_support_gap)
    };
    Ok(OtSolution {
        w2_squared: plan.cost(),
        plan,
        duals,
        pivots: sol.pivots,
    })
}

/// `W_2(μ, ν)`.
pub fn w2(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    Ok(solve_ot(mu, nu, &TransportOptions::default())?.w2_squared.sqrt())
}

/// Checks `φ ⊕ ψ ≤ c` on positive-weight pairs and equality on the support,
/// with `c = |x-y|^2 / 2`.
pub fn check_duality(plan: &TransportPlan, duals: &DualPotentials, tol: f64) -> DualityReport {
    let l = plan.source.lattice();
    let src: Vec<usize> = plan.source.support().collect();
    let dst: Vec<usize> = plan.target.support().collect();
    let mut max_violation = 0.0f64;
    for &x in &src {
        for &y in &dst {
            max_violation = max_violation.max(duals.phi[x] + duals.psi[y] - half_cost(l, x, y));
        }
    }
    let max_support_gap = plan
        .entries
        .iter()
        .map(|&(x, y, _)| (duals.phi[x] + duals.psi[y] - half_cost(l, x, y)).abs())
        .fold(0.0, f64::max);
    DualityReport {
        max_violation,
        max_support_gap,
        tol,
        passed: max_violation <= tol && max_support_gap <= tol,
    }
}

/// `Σ φ μ + Σ ψ ν`, equal to `W_2^2 / 2` at optimality.
pub fn dual_objective(mu: &DiscreteMeasure, nu: &DiscreteMeasure, duals: &DualPotentials) -> f64 {
    let a: f64 = mu.weights().iter().zip(&duals.phi).filter(|(w, _)| **w > 0.0).map(|(w, p)| w * p).sum();
    let b: f64 = nu.weights().iter().zip(&duals.psi).filter(|(w, _)| **w > 0.0).map(|(w, p)| w * p).sum();
    a + b
}

/// Integer-mass transport: `mu_units` and `nu_units` count mass quanta of
/// equal size on each node. Returns the optimal cost in quanta times squared
/// lattice steps, and the integral plan. All arithmetic stays on integers
/// below 2^53, so the result is exact.
pub fn solve_ot_quantized(
    lattice: &LatticeSpec,
    mu_units: &[u64],
    nu_units: &[u64],
) -> Result<(u64, Vec<(usize, usize, u64)>)> {
    if mu_units.len() != lattice.len() || nu_units.len() != lattice.len() {
        return Err(Error::InvalidArgument("unit vectors must match the lattice".into()));
    }
    let total: u64 = mu_units.iter().sum();
    if total != nu_units.iter().sum::<u64>() {
        return Err(Error::Infeasible("quantized marginals differ in mass".into()));
    }
    if total > 1 << 40 {
        return Err(Error::InvalidArgument("too many mass quanta for exact arithmetic".into()));
    }
    let src: Vec<usize> = (0..lattice.len()).filter(|&z| mu_units[z] > 0).collect();
    let dst: Vec<usize> = (0..lattice.len()).filter(|&z| nu_units[z] > 0).collect();
    let mut supply: Vec<f64> = src.iter().map(|&x| mu_units[x] as f64).collect();
    supply.extend(dst.iter().map(|&y| -(nu_units[y] as f64)));
    let mut net = FlowNetwork::new(supply);
    let mut pairs = Vec::new();
    for &x in &src {
        for (j, &y) in dst.iter().enumerate() {
            net.add_arc(pairs.len() / dst.len(), src.len() + j, lattice.squared_steps(x, y) as f64, f64::INFINITY);
            pairs.push((x, y));
        }
    }
    let sol = net.solve()?;
    let mut cost = 0u64;
    let mut plan = Vec::new();
    for (&(x, y), &f) in pairs.iter().zip(&sol.flow) {
        if f != f.round() || f < 0.0 {
            return Err(Error::Solver(format!("non-integral flow {f} in quantized solve")));
        }
        if f > 0.0 {
            let f = f as u64;
            cost += f * lattice.squared_steps(x, y);
            plan.push((x, y, f));
        }
    }
    Ok((cost, plan))
}
