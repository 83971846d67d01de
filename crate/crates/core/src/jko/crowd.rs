//! Crowd-motion step: a linear program solved as a capacitated min-cost flow.
//!
//! Network: one source per atom `y` of `ρ_k` (supply `ρ_k(y)`), one node per
//! lattice point `x`, and a sink. Arcs `y → x` cost `|x-y|^2 / 2τ`; arcs
//! `x → sink` cost `V(x)` with capacity `h^d`.

use super::{half_cost_over_tau, Certificate, StepResult};
use crate::energy::EnergySpec;
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::transport::{solve_ot, DualPotentials, FlowNetwork, TransportOptions, TransportPlan};

/// One crowd step. The duals satisfy `φ(x) + ψ(y) ≤ |x-y|^2/2` and carry the
/// constant `c` of the pressure `p = (c - V - φ/τ)^+`. With `τ = ∞` the field
/// `phi` holds the limit of `φ/τ` instead.
pub fn jko_step_crowd(rho_k: &DiscreteMeasure, spec: &EnergySpec, tau: f64) -> Result<StepResult> {
    if !spec.is_crowd() {
        return Err(Error::InvalidArgument("jko_step_crowd needs a crowd energy".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let lattice = spec.lattice();
    if **rho_k.lattice() != **lattice {
        return Err(Error::LatticeMismatch);
    }
    let m = lattice.len();
    let vol = lattice.cell_volume();
    let total = rho_k.total_mass();
    if (m as f64) * vol < total * (1.0 - 1e-12) {
        return Err(Error::Infeasible("infeasible capacity".into()));
    }

    let cols: Vec<usize> = rho_k.support().collect();
    let n = cols.len();
    let sink = n + m;
    let mut supply: Vec<f64> = cols.iter().map(|&y| rho_k.weights()[y]).collect();
    supply.extend(std::iter::repeat_n(0.0, m));
    supply.push(-total);
    let mut net = FlowNetwork::new(supply);
    for (j, &y) in cols.iter().enumerate() {
        for x in 0..m {
            net.add_arc(j, n + x, half_cost_over_tau(tau, lattice.squared_distance(x, y)), f64::INFINITY);
        }
    }
    let v = spec.potential_values();
    let exit_arc = net.arc_count();
    for (x, &vx) in v.iter().enumerate() {
        net.add_arc(n + x, sink, vx, vol);
    }
    let sol = net.solve().map_err(|e| match e {
        Error::Infeasible(_) => Error::Infeasible("infeasible capacity".into()),
        other => other,
    })?;

    let weights: Vec<f64> = (0..m).map(|x| sol.flow[exit_arc + x].min(vol)).collect();
    let mut entries = Vec::new();
    for (j, &y) in cols.iter().enumerate() {
        for x in 0..m {
            let f = sol.flow[j * m + x];
            if f > 0.0 {
                entries.push((x, y, f));
            }
        }
    }

    let pi = canonical_potentials(&net, &sol.flow, sink).unwrap_or_else(|| sol.potential.clone());
    let scale = if tau.is_finite() { tau } else { 1.0 };
    let pi_t = pi[sink];
    let pressure: Vec<f64> = (0..m).map(|x| (pi_t - v[x] - pi[n + x]).max(0.0)).collect();

    let mut phi: Vec<f64> = (0..m).map(|x| scale * pi[n + x]).collect();
    let shift = phi.iter().copied().fold(f64::INFINITY, f64::min);
    phi.iter_mut().for_each(|p| *p -= shift);
    let constant = pi_t - shift / scale;
    let psi: Vec<f64> = (0..m)
        .map(|y| {
            (0..m)
                .map(|x| 0.5 * lattice.squared_distance(x, y) - phi[x])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();

    let mut residual: f64 = 0.0;
    for e in 0..net.arc_count() {
        let f = sol.flow[e];
        if f > 0.0 {
            let (s, d, c, cap) = net.arc(e);
            let rc = c + sol.potential[s] - sol.potential[d];
            if f < cap {
                residual = residual.max(rc.abs());
            } else {
                residual = residual.max(rc.max(0.0));
            }
        }
    }
    let degenerate = sol.basic.iter().zip(&sol.flow).filter(|(b, f)| **b && **f == 0.0).count() > 0;

    let (rho, mass_drift) = DiscreteMeasure::from_solver(lattice.clone(), weights)?;
    let w2_squared = solve_ot(&rho, rho_k, &TransportOptions::default())?.w2_squared;
    let energy = spec.eval_weights(rho.weights());
    let objective = energy + half_cost_over_tau(tau, w2_squared);
    Ok(StepResult {
        plan: TransportPlan::from_entries(rho.clone(), rho_k.clone(), entries),
        rho,
        duals: DualPotentials {
            phi,
            psi,
            constant: Some(constant),
            residual,
            unique: !degenerate,
        },
        w2_squared,
        energy,
        objective,
        gap: 0.0,
        certificate: Certificate::Exact,
        converged: true,
        iterations: sol.pivots,
        mass_drift,
        pressure: Some(pressure),
    })
}

/// Optimality of the flow as difference constraints `π_a - π_b ≤ w`.
fn dual_constraints(net: &FlowNetwork, flow: &[f64]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for (e, &f) in flow.iter().enumerate() {
        let (s, d, c, cap) = net.arc(e);
        if f < cap {
            out.push((d, s, c));
        }
        if f > 0.0 {
            out.push((s, d, -c));
        }
    }
    out
}

/// Shortest distances from `root` along edges `b → a` of weight `w` for each
/// constraint `(a, b, w)` (or the reverse graph). `None` if some node is
/// unreachable or relaxation does not settle.
fn shortest(n: usize, cons: &[(usize, usize, f64)], root: usize, reverse: bool) -> Option<Vec<f64>> {
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut scale: f64 = 1.0;
    for &(a, b, w) in cons {
        scale = scale.max(w.abs());
        if reverse {
            adj[a].push((b, w));
        } else {
            adj[b].push((a, w));
        }
    }
    let tol = 1e-12 * scale;
    let mut dist = vec![f64::INFINITY; n];
    let mut queued = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    dist[root] = 0.0;
    queue.push_back(root);
    queued[root] = true;
    let mut budget = n.saturating_mul(cons.len() + n).max(1000);
    while let Some(b) = queue.pop_front() {
        queued[b] = false;
        for &(a, w) in &adj[b] {
            if dist[b] + w < dist[a] - tol {
                dist[a] = dist[b] + w;
                if !queued[a] {
                    queued[a] = true;
                    queue.push_back(a);
                }
            }
            budget = budget.checked_sub(1)?;
        }
    }
    dist.iter().all(|d| d.is_finite()).then_some(dist)
}

/// Midpoint of the componentwise-largest and -smallest optimal potentials
/// with `π_sink = 0`; the pressure then sits halfway between its smallest and
/// largest values compatible with the primal solution.
fn canonical_potentials(net: &FlowNetwork, flow: &[f64], sink: usize) -> Option<Vec<f64>> {
    let cons = dual_constraints(net, flow);
    let n = net.node_count();
    let upper = shortest(n, &cons, sink, false)?;
    let lower = shortest(n, &cons, sink, true)?;
    Some(upper.iter().zip(&lower).map(|(u, l)| 0.5 * (u - l)).collect())
}
