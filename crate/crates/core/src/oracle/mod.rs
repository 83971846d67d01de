//! Brute-force and reference solvers used to certify the main solvers on
//! small instances.

mod fd;
mod grid_search;

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::measure::DiscreteMeasure;

pub use fd::{cell_averages, fd_reference_1d, FdProblem, FdSolution, PdeKind};
pub use grid_search::{grid_search_jko, w2_squared_1d, GridSearchResult};

pub const MAX_SUPPORT: usize = 4;
pub const MAX_QUANTA: u32 = 6;

/// Second marginal of a quantized instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizedTarget {
    /// Fixed marginal: `(node, units)`.
    Marginal(Vec<(usize, u32)>),
    /// Free marginal bounded by per-node capacities `(node, units)`.
    Capacities(Vec<(usize, u32)>),
}

impl QuantizedTarget {
    fn nodes(&self) -> &[(usize, u32)] {
        match self {
            Self::Marginal(n) | Self::Capacities(n) => n,
        }
    }
}

/// Transport instance whose masses are multiples of `1/q`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantizedInstance {
    #[serde(skip)]
    pub lattice: Arc<LatticeSpec>,
    pub q: u32,
    /// `(node, units)` with units summing to `q`.
    pub source: Vec<(usize, u32)>,
    pub target: QuantizedTarget,
}

impl QuantizedInstance {
    pub fn new(lattice: Arc<LatticeSpec>, q: u32, source: Vec<(usize, u32)>, target: QuantizedTarget) -> Result<Self> {
        let inst = Self { lattice, q, source, target };
        inst.validate()?;
        Ok(inst)
    }

    /// Quantizes a pair of measures; every weight must be a multiple of `1/q`.
    pub fn from_measures(mu: &DiscreteMeasure, nu: &DiscreteMeasure, q: u32) -> Result<Self> {
        if !mu.same_lattice(nu) {
            return Err(Error::LatticeMismatch);
        }
        let units = |m: &DiscreteMeasure| -> Result<Vec<(usize, u32)>> {
            let mut out = Vec::new();
            for (z, &w) in m.weights().iter().enumerate() {
                let u = (w * q as f64).round();
                if (u - w * q as f64).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!("weight {w} is not a multiple of 1/{q}")));
                }
                if u > 0.0 {
                    out.push((z, u as u32));
                }
            }
            Ok(out)
        };
        Self::new(mu.lattice().clone(), q, units(mu)?, QuantizedTarget::Marginal(units(nu)?))
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || self.q > MAX_QUANTA {
            return Err(Error::OracleLimit(format!("q = {} outside 1..={MAX_QUANTA}", self.q)));
        }
        let n = self.lattice.len();
        for (side, nodes) in [("source", &self.source[..]), ("target", self.target.nodes())] {
            if nodes.is_empty() || nodes.len() > MAX_SUPPORT {
                return Err(Error::OracleLimit(format!("{side} has {} nodes, limit is {MAX_SUPPORT}", nodes.len())));
            }
            for (i, &(z, _)) in nodes.iter().enumerate() {
                if z >= n {
                    return Err(Error::InvalidNode { index: z, len: n });
                }
                if nodes[..i].iter().any(|&(w, _)| w == z) {
                    return Err(Error::InvalidArgument(format!("{side} lists node {z} twice")));
                }
            }
        }
        let total: u32 = self.source.iter().map(|s| s.1).sum();
        if total != self.q {
            return Err(Error::InvalidArgument(format!("source carries {total} units, expected {}", self.q)));
        }
        match &self.target {
            QuantizedTarget::Marginal(t) => {
                let sum: u32 = t.iter().map(|s| s.1).sum();
                if sum != self.q {
                    return Err(Error::InvalidArgument(format!("target carries {sum} units, expected {}", self.q)));
                }
            }
            QuantizedTarget::Capacities(t) => {
                let sum: u32 = t.iter().map(|s| s.1).sum();
                if sum < self.q {
                    return Err(Error::Infeasible("infeasible capacity".into()));
                }
            }
        }
        Ok(())
    }

    /// Both marginals as measures (fixed-marginal instances only).
    pub fn measures(&self) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
        let QuantizedTarget::Marginal(t) = &self.target else {
            return Err(Error::InvalidArgument("capacitated instance has no fixed target".into()));
        };
        Ok((self.measure(&self.source)?, self.measure(t)?))
    }

    fn measure(&self, nodes: &[(usize, u32)]) -> Result<DiscreteMeasure> {
        let mut w = vec![0.0; self.lattice.len()];
        for &(z, u) in nodes {
            w[z] = u as f64 / self.q as f64;
        }
        DiscreteMeasure::new(self.lattice.clone(), w)
    }

    fn atoms(&self) -> Vec<usize> {
        self.source.iter().flat_map(|&(z, u)| std::iter::repeat_n(z, u as usize)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    /// `(source node, target node, units)`, sorted.
    pub moves: Vec<(usize, usize, u32)>,
    pub enumerated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceOt {
    /// `Σ_atoms |x - y|^2 / h^2`, an integer.
    pub cost_units: u64,
    pub w2_squared: f64,
    pub assignment: Assignment,
}

/// Walks all `targets^atoms` maps from unit atoms to target nodes, keeping
/// those that respect the target constraint, and returns the first cheapest.
fn enumerate<T>(inst: &QuantizedInstance, cost: impl Fn(usize, usize) -> T) -> Result<(T, Assignment)>
where
    T: Copy + PartialOrd + std::ops::Add<Output = T> + Default,
{
    inst.validate()?;
    let atoms = inst.atoms();
    let targets = inst.target.nodes();
    let t = targets.len();
    let total = t.pow(atoms.len() as u32);
    let table: Vec<Vec<T>> = atoms.iter().map(|&x| targets.iter().map(|&(y, _)| cost(x, y)).collect()).collect();
    let mut choice = vec![0usize; atoms.len()];
    let mut best: Option<(T, Vec<usize>)> = None;
    let mut load = vec![0u32; t];
    for _ in 0..total {
        load.iter_mut().for_each(|l| *l = 0);
        choice.iter().for_each(|&c| load[c] += 1);
        let ok = match &inst.target {
            QuantizedTarget::Marginal(n) => n.iter().zip(&load).all(|(a, l)| a.1 == *l),
            QuantizedTarget::Capacities(n) => n.iter().zip(&load).all(|(a, l)| *l <= a.1),
        };
        if ok {
            let c = choice.iter().enumerate().fold(T::default(), |acc, (i, &j)| acc + table[i][j]);
            if best.as_ref().is_none_or(|b| c < b.0) {
                best = Some((c, choice.clone()));
            }
        }
        for d in choice.iter_mut() {
            *d += 1;
            if *d < t {
                break;
            }
            *d = 0;
        }
    }
    let (c, pick) = best.ok_or_else(|| Error::Infeasible("no assignment satisfies the target".into()))?;
    let mut moves: Vec<(usize, usize, u32)> = Vec::new();
    for (i, &j) in pick.iter().enumerate() {
        let key = (atoms[i], targets[j].0);
        match moves.iter_mut().find(|m| (m.0, m.1) == key) {
            Some(m) => m.2 += 1,
            None => moves.push((key.0, key.1, 1)),
        }
    }
    moves.sort_unstable();
    Ok((c, Assignment { moves, enumerated: total }))
}

/// Exact `W_2^2` by enumerating every assignment of the `q` unit atoms.
pub fn brute_force_ot(inst: &QuantizedInstance) -> Result<BruteForceOt> {
    let l = &inst.lattice;
    let (cost_units, assignment) = enumerate(inst, |x, y| l.squared_steps(x, y))?;
    let h = l.spacing();
    Ok(BruteForceOt {
        cost_units,
        w2_squared: cost_units as f64 * h * h / inst.q as f64,
        assignment,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceCrowd {
    /// `Σ V ρ + W_2^2 / 2τ` at the optimum.
    pub objective: f64,
    /// Optimal target weights on the full lattice.
    pub weights: Vec<f64>,
    pub assignment: Assignment,
}

/// Capacitated step `min Σ V ρ + W_2^2(ρ, source)/2τ` over targets within the
/// capacities, by enumeration. `τ = ∞` drops the transport term.
pub fn brute_force_crowd(inst: &QuantizedInstance, v: &[f64], tau: f64) -> Result<BruteForceCrowd> {
    let l = &inst.lattice;
    if v.len() != l.len() {
        return Err(Error::InvalidArgument("potential does not match lattice".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let unit = 1.0 / inst.q as f64;
    let (objective, assignment) = enumerate(inst, |x, y| {
        unit * (v[y] + crate::jko::half_cost_over_tau(tau, l.squared_distance(x, y)))
    })?;
    let mut weights = vec![0.0; l.len()];
    for &(_, y, u) in &assignment.moves {
        weights[y] += u as f64 * unit;
    }
    Ok(BruteForceCrowd { objective, weights, assignment })
}

/// Weights minimizing `Σ V ρ` under `ρ_z ≤ h^d` with total `mass`: cells are
/// filled in increasing `V` (ties to the smaller index), the last one
/// partially.
pub fn greedy_fill_weights(lattice: &LatticeSpec, v: &[f64], mass: f64) -> Result<Vec<f64>> {
    if v.len() != lattice.len() {
        return Err(Error::InvalidArgument("potential does not match lattice".into()));
    }
    let vol = lattice.cell_volume();
    if !(mass >= 0.0) || mass > vol * lattice.len() as f64 * (1.0 + 1e-12) {
        return Err(Error::Infeasible("infeasible capacity".into()));
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let mut w = vec![0.0; v.len()];
    let mut left = mass;
    for z in order {
        if left <= 0.0 {
            break;
        }
        w[z] = left.min(vol);
        left -= w[z];
    }
    Ok(w)
}

/// Unit-mass greedy fill as a measure.
pub fn greedy_fill_minimizer(v: &[f64], lattice: Arc<LatticeSpec>) -> Result<DiscreteMeasure> {
    let w = greedy_fill_weights(&lattice, v, 1.0)?;
    DiscreteMeasure::new(lattice, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{EnergySpec, PotentialField};
    use crate::jko::jko_step_crowd;
    use crate::transport::{solve_ot, solve_ot_quantized, TransportOptions};

    fn line(h: f64, n: usize) -> Arc<LatticeSpec> {
        Arc::new(LatticeSpec::unit_origin(h, &[n]).unwrap())
    }

    #[test]
    fn diracs_cost_squared_distance() {
        let l = line(0.5, 4);
        for x in 0..4 {
            for y in 0..4 {
                let inst = QuantizedInstance::new(l.clone(), 1, vec![(x, 1)], QuantizedTarget::Marginal(vec![(y, 1)])).unwrap();
                let r = brute_force_ot(&inst).unwrap();
                assert_eq!(r.w2_squared, l.squared_distance(x, y));
            }
        }
    }

    #[test]
    fn two_atom_shift() {
        let l = line(1.0, 3);
        let inst = QuantizedInstance::new(l, 2, vec![(0, 1), (1, 1)], QuantizedTarget::Marginal(vec![(1, 1), (2, 1)])).unwrap();
        let r = brute_force_ot(&inst).unwrap();
        assert_eq!(r.w2_squared, 1.0);
        assert_eq!(r.assignment.moves, vec![(0, 1, 1), (1, 2, 1)]);
        assert_eq!(r.assignment.enumerated, 4);
    }

    #[test]
    fn capacities_force_even_split() {
        let l = line(0.5, 3);
        let inst = QuantizedInstance::new(l, 2, vec![(0, 2)], QuantizedTarget::Capacities(vec![(1, 1), (2, 1)])).unwrap();
        let r = brute_force_ot(&inst).unwrap();
        assert_eq!(r.assignment.moves, vec![(0, 1, 1), (0, 2, 1)]);
        let short = QuantizedInstance::new(line(0.5, 3), 2, vec![(0, 2)], QuantizedTarget::Capacities(vec![(1, 1)]));
        assert!(matches!(short, Err(Error::Infeasible(_))));
    }

    #[test]
    fn limits_are_enforced() {
        let l = line(1.0, 6);
        let too_many = QuantizedInstance::new(l.clone(), 7, vec![(0, 7)], QuantizedTarget::Marginal(vec![(1, 7)]));
        assert!(matches!(too_many, Err(Error::OracleLimit(_))));
        let wide = QuantizedInstance::new(l, 5, (0..5).map(|z| (z, 1)).collect(), QuantizedTarget::Marginal(vec![(0, 5)]));
        assert!(matches!(wide, Err(Error::OracleLimit(_))));
    }

    #[test]
    fn agrees_with_network_simplex_2d() {
        let l = Arc::new(LatticeSpec::unit_origin(1.0, &[3, 3]).unwrap());
        let inst = QuantizedInstance::new(
            l.clone(),
            6,
            vec![(0, 3), (4, 2), (8, 1)],
            QuantizedTarget::Marginal(vec![(2, 2), (6, 2), (5, 1), (1, 1)]),
        )
        .unwrap();
        let r = brute_force_ot(&inst).unwrap();
        let (mu, nu) = inst.measures().unwrap();
        let s = solve_ot(&mu, &nu, &TransportOptions::default()).unwrap();
        assert!((s.w2_squared - r.w2_squared).abs() < 1e-12);
        let mut mu_u = vec![0u64; 9];
        let mut nu_u = vec![0u64; 9];
        inst.source.iter().for_each(|&(z, u)| mu_u[z] = u as u64);
        if let QuantizedTarget::Marginal(t) = &inst.target {
            t.iter().for_each(|&(z, u)| nu_u[z] = u as u64);
        }
        assert_eq!(solve_ot_quantized(&l, &mu_u, &nu_u).unwrap().0, r.cost_units);
    }

    #[test]
    fn crowd_block_at_wall_stays() {
        let l = line(0.5, 4);
        let field = PotentialField::Linear { slope: vec![1.0], offset: 0.0 };
        let spec = EnergySpec::builder(l.clone()).potential_field(&field).crowd(true).build().unwrap();
        let v = spec.potential_values();
        let inst = QuantizedInstance::new(
            l.clone(),
            2,
            vec![(0, 1), (1, 1)],
            QuantizedTarget::Capacities((0..4).map(|z| (z, 1)).collect()),
        )
        .unwrap();
        let oracle = brute_force_crowd(&inst, &v, 0.1).unwrap();
        assert_eq!(oracle.weights, vec![0.5, 0.5, 0.0, 0.0]);
        let rho = DiscreteMeasure::new(l, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let step = jko_step_crowd(&rho, &spec, 0.1).unwrap();
        assert!((step.objective - oracle.objective).abs() < 1e-12);
    }

    #[test]
    fn greedy_fill_examples() {
        let l = line(0.25, 8);
        let v = PotentialField::Linear { slope: vec![1.0], offset: 0.0 }.sample(&l);
        let g = greedy_fill_minimizer(&v, l.clone()).unwrap();
        assert_eq!(g.density(), vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);

        let flat = vec![2.0; 8];
        let g = greedy_fill_minimizer(&flat, l.clone()).unwrap();
        assert_eq!(&g.weights()[..4], &[0.25; 4]);
        let e: f64 = g.weights().iter().zip(&flat).map(|(w, v)| w * v).sum();
        assert_eq!(e, 2.0);

        let small = line(0.25, 3);
        assert!(greedy_fill_minimizer(&[0.0; 3], small).is_err());
    }

    #[test]
    fn greedy_matches_energy_only_crowd_step() {
        let l = line(0.125, 12);
        let field = PotentialField::QuadraticWell { center: vec![0.8], stiffness: 3.0 };
        let spec = EnergySpec::builder(l.clone()).potential_field(&field).crowd(true).build().unwrap();
        let v = spec.potential_values();
        let g = greedy_fill_minimizer(&v, l.clone()).unwrap();
        let step = jko_step_crowd(&DiscreteMeasure::uniform(l), &spec, f64::INFINITY).unwrap();
        // equal up to summation order
        let e = spec.eval(&g).unwrap();
        assert!((step.objective - e).abs() <= 4.0 * f64::EPSILON * e.abs(), "{} vs {e}", step.objective);
    }
}
