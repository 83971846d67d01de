//! Convex step over transport plans whose second marginal is `ρ_k`.
//!
//! Variables are `γ_xy` for `y ∈ spt ρ_k` and all nodes `x`; the objective is
//! `Σ_x h^d f(r_x / h^d) + Σ_x V_x r_x + Σ γ_xy |x-y|^2 / 2τ (+ interaction)`
//! with `r = Σ_y γ_·y`.

use super::{half_cost_over_tau, FwVariant, JkoConfig};
use crate::energy::{EnergySpec, InternalDensityKind};
use crate::error::Result;
use crate::measure::DiscreteMeasure;

pub(crate) struct ConvexOutcome {
    pub weights: Vec<f64>,
    pub entries: Vec<(usize, usize, f64)>,
    pub gap: f64,
    pub converged: bool,
    pub iterations: usize,
}

struct Problem<'a> {
    spec: &'a EnergySpec,
    m: usize,
    vol: f64,
    cols: Vec<usize>,
    mass: Vec<f64>,
    /// `|x - y|^2 / 2τ`, column-major by source column.
    cost: Vec<f64>,
    sq_dist: Vec<f64>,
    v: Vec<f64>,
    clamp: f64,
}

impl Problem<'_> {
    fn dfc(&self, r: f64) -> f64 {
        self.spec.internal().map_or(0.0, |k| k.df_clamped(r / self.vol, self.clamp))
    }

    /// Node part of the gradient: `f'(u_x) + V_x + 2 (W * r)_x`.
    fn node_gradient(&self, r: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = r.iter().zip(&self.v).map(|(&ri, &vi)| self.dfc(ri) + vi).collect();
        if let Some(field) = self.spec.interaction_field(r) {
            g.iter_mut().zip(field).for_each(|(a, b)| *a += 2.0 * b);
        }
        g
    }

    /// Frank–Wolfe gap `Σ_y Σ_x γ_xy (G_xy - min_x G_xy)`, summed as
    /// nonnegative terms. Also reports, per column, whether the minimizing
    /// node lies outside `active`.
    fn gap(&self, gamma: &[f64], r: &[f64], active: Option<&[bool]>) -> (f64, bool) {
        let g = self.node_gradient(r);
        let m = self.m;
        let mut total = 0.0;
        let mut escapes = false;
        for j in 0..self.cols.len() {
            let col = &gamma[j * m..(j + 1) * m];
            let c = &self.cost[j * m..(j + 1) * m];
            let (mut best, mut best_x) = (f64::INFINITY, 0);
            for x in 0..m {
                let v = g[x] + c[x];
                if v < best {
                    best = v;
                    best_x = x;
                }
            }
            if let Some(a) = active {
                if !a[j * m + best_x] {
                    escapes = true;
                }
            }
            for x in 0..m {
                if col[x] > 0.0 {
                    total += col[x] * (g[x] + c[x] - best).max(0.0);
                }
            }
        }
        (total, escapes)
    }
}

pub(crate) fn solve(rho_k: &DiscreteMeasure, spec: &EnergySpec, tau: f64, cfg: &JkoConfig) -> Result<ConvexOutcome> {
    let lattice = rho_k.lattice();
    let m = lattice.len();
    let cols: Vec<usize> = rho_k.support().collect();
    let mass: Vec<f64> = cols.iter().map(|&y| rho_k.weights()[y]).collect();
    let mut sq_dist = Vec::with_capacity(cols.len() * m);
    for &y in &cols {
        sq_dist.extend((0..m).map(|x| lattice.squared_distance(x, y)));
    }
    let cost = sq_dist.iter().map(|&d| half_cost_over_tau(tau, d)).collect();
    let p = Problem {
        spec,
        m,
        vol: lattice.cell_volume(),
        cols,
        mass,
        cost,
        sq_dist,
        v: spec.potential_values(),
        clamp: cfg.clamp,
    };

    let mut gamma = vec![0.0; p.cols.len() * m];
    for (j, &y) in p.cols.iter().enumerate() {
        gamma[j * m + y] = p.mass[j];
    }
    let mut r = rho_k.weights().to_vec();

    let variant = match spec.internal() {
        Some(_) if !spec.has_interaction() => cfg.fw_variant,
        _ => FwVariant::Classic,
    };
    let (gap, converged, iterations) = match variant {
        FwVariant::BlockExact => block_exact(&p, &mut gamma, &mut r, cfg),
        FwVariant::Classic => classic(&p, &mut gamma, &mut r, cfg),
    };

    let mut entries = Vec::new();
    for (j, &y) in p.cols.iter().enumerate() {
        for x in 0..m {
            let g = gamma[j * m + x];
            if g > 0.0 {
                entries.push((x, y, g));
            }
        }
    }
    Ok(ConvexOutcome {
        weights: r,
        entries,
        gap,
        converged,
        iterations,
    })
}

fn window_mask(p: &Problem, radius: Option<f64>) -> Option<Vec<bool>> {
    let r2 = radius? * radius?;
    Some(p.sq_dist.iter().map(|&d| d <= r2 * (1.0 + 1e-12)).collect())
}

/// Block coordinate descent: each column of `γ` is re-optimized exactly with
/// the others held fixed.
fn block_exact(p: &Problem, gamma: &mut [f64], r: &mut [f64], cfg: &JkoConfig) -> (f64, bool, usize) {
    let kind = p.spec.internal().expect("block solver needs an internal density");
    let m = p.m;
    let mut radius = cfg.window;
    let mut active = window_mask(p, radius);
    let mut last_gap = f64::INFINITY;
    let mut stalls = 0;
    let mut t = vec![0.0; m];
    for it in 1..=cfg.max_iterations {
        for j in 0..p.cols.len() {
            let range = j * m..(j + 1) * m;
            for x in 0..m {
                r[x] -= gamma[range.start + x];
            }
            let mask = active.as_ref().map(|a| &a[range.clone()]);
            solve_column(kind, p, j, r, mask, &mut t);
            for x in 0..m {
                gamma[range.start + x] = t[x];
                r[x] += t[x];
            }
        }
        let (gap, escapes) = p.gap(gamma, r, active.as_deref());
        if gap <= cfg.gap_tol {
            return (gap, true, it);
        }
        if active.is_some() {
            if gap > 0.5 * last_gap && escapes {
                stalls += 1;
            } else {
                stalls = 0;
            }
            if stalls >= 2 {
                radius = radius.map(|q| 2.0 * q);
                active = window_mask(p, radius);
                if active.as_ref().is_some_and(|a| a.iter().all(|&b| b)) {
                    active = None;
                }
                log::debug!("widening step window to {radius:?}");
                stalls = 0;
            }
        }
        last_gap = gap;
        if it == cfg.max_iterations {
            return (gap, false, it);
        }
    }
    unreachable!("max_iterations is validated to be positive")
}

/// Exact minimizer of one column: `t_x = (h^d (f')^{-1}(λ - g_x) - R_x)^+`
/// with `λ` fixed by `Σ t_x = m_j`.
fn solve_column(kind: &InternalDensityKind, p: &Problem, j: usize, rest: &[f64], mask: Option<&[bool]>, t: &mut [f64]) {
    let m = p.m;
    let mass = p.mass[j];
    let cost = &p.cost[j * m..(j + 1) * m];
    let on = |x: usize| mask.is_none_or(|a| a[x]);
    let g: Vec<f64> = (0..m).map(|x| p.v[x] + cost[x]).collect();
    let count = (0..m).filter(|&x| on(x)).count().max(1) as f64;

    let mut lo = f64::INFINITY;
    let mut hi = f64::INFINITY;
    for x in (0..m).filter(|&x| on(x)) {
        lo = lo.min(g[x] + kind.df((rest[x] + mass / count) / p.vol));
        hi = hi.min(g[x] + kind.df((rest[x] + mass) / p.vol));
    }
    let eval = |lam: f64| -> (f64, f64) {
        let mut s = 0.0;
        let mut ds = 0.0;
        for x in (0..m).filter(|&x| on(x)) {
            let want = p.vol * kind.df_inverse(lam - g[x]);
            if want > rest[x] {
                s += want - rest[x];
                ds += p.vol * kind.df_inverse_slope(lam - g[x]);
            }
        }
        (s, ds)
    };

    let mut lam = hi;
    for _ in 0..200 {
        let (s, ds) = eval(lam);
        let res = s - mass;
        if res.abs() <= 1e-15 * mass {
            break;
        }
        if res > 0.0 {
            hi = lam;
        } else {
            lo = lam;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
            break;
        }
        let mut next = if ds > 0.0 { lam - res / ds } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        lam = next;
    }

    let mut total = 0.0;
    let mut arg = 0;
    for x in 0..m {
        t[x] = if on(x) {
            (p.vol * kind.df_inverse(lam - g[x]) - rest[x]).max(0.0)
        } else {
            0.0
        };
        total += t[x];
        if t[x] > t[arg] {
            arg = x;
        }
    }
    if total > 0.0 {
        let scale = mass / total;
        t.iter_mut().for_each(|v| *v *= scale);
    } else {
        t[arg] = mass;
    }
}

/// Conditional gradient with exact line search. Also used for energies with
/// an interaction term, where the objective may be non-convex.
fn classic(p: &Problem, gamma: &mut [f64], r: &mut [f64], cfg: &JkoConfig) -> (f64, bool, usize) {
    let m = p.m;
    let n = p.cols.len();
    let mut target = vec![0usize; n];
    let mut dr = vec![0.0; m];
    let mut gap = f64::INFINITY;
    for it in 1..=cfg.max_iterations {
        let g = p.node_gradient(r);
        gap = 0.0;
        for j in 0..n {
            let c = &p.cost[j * m..(j + 1) * m];
            let (mut best, mut best_x) = (f64::INFINITY, 0);
            for x in 0..m {
                if g[x] + c[x] < best {
                    best = g[x] + c[x];
                    best_x = x;
                }
            }
            target[j] = best_x;
            for x in 0..m {
                let v = gamma[j * m + x];
                if v > 0.0 {
                    gap += v * (g[x] + c[x] - best).max(0.0);
                }
            }
        }
        if gap <= cfg.gap_tol {
            return (gap, true, it);
        }
        if it == cfg.max_iterations {
            break;
        }
        // direction S - γ
        for (d, ri) in dr.iter_mut().zip(r.iter()) {
            *d = -ri;
        }
        let mut dlin = 0.0;
        for j in 0..n {
            let c = &p.cost[j * m..(j + 1) * m];
            dr[target[j]] += p.mass[j];
            dlin += p.mass[j] * c[target[j]];
            dlin -= gamma[j * m..(j + 1) * m].iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        }
        let step = line_search(p, r, &dr, dlin);
        if step <= 0.0 {
            break;
        }
        for j in 0..n {
            for x in 0..m {
                gamma[j * m + x] *= 1.0 - step;
            }
            gamma[j * m + target[j]] += step * p.mass[j];
        }
        for x in 0..m {
            r[x] = (r[x] + step * dr[x]).max(0.0);
        }
    }
    (gap, false, cfg.max_iterations)
}

fn line_search(p: &Problem, r: &[f64], dr: &[f64], dlin: f64) -> f64 {
    let deriv = |s: f64| -> f64 {
        let rs: Vec<f64> = r.iter().zip(dr).map(|(a, b)| (a + s * b).max(0.0)).collect();
        let field = p.spec.interaction_field(&rs);
        let mut d = dlin;
        for x in 0..p.m {
            if dr[x] == 0.0 {
                continue;
            }
            let mut gx = p.v[x];
            if let Some(kind) = p.spec.internal() {
                gx += kind.df_clamped(rs[x] / p.vol, f64::MIN_POSITIVE);
            }
            if let Some(f) = &field {
                gx += 2.0 * f[x];
            }
            d += gx * dr[x];
        }
        d
    };
    if deriv(1.0) <= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jko::SolverKind;
    use crate::lattice::LatticeSpec;
    use std::sync::Arc;

    #[test]
    fn block_solver_decreases_objective_from_diagonal() {
        let l = Arc::new(LatticeSpec::unit_origin(0.25, &[4]).unwrap());
        let spec = EnergySpec::builder(l.clone()).internal(InternalDensityKind::Entropy).build().unwrap();
        let rho = DiscreteMeasure::normalized(l, vec![0.7, 0.1, 0.1, 0.1]).unwrap();
        let cfg = JkoConfig::new(0.1, 1, SolverKind::FrankWolfe);
        let out = solve(&rho, &spec, 0.1, &cfg).unwrap();
        assert!(out.converged);
        assert!((out.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let e0 = spec.eval_weights(rho.weights());
        assert!(spec.eval_weights(&out.weights) < e0);
    }

    #[test]
    fn window_is_widened_when_too_narrow() {
        let l = Arc::new(LatticeSpec::unit_origin(0.1, &[10]).unwrap());
        let spec = EnergySpec::builder(l.clone()).internal(InternalDensityKind::Entropy).build().unwrap();
        let rho = DiscreteMeasure::dirac(l, 0).unwrap();
        let mut cfg = JkoConfig::new(1.0, 1, SolverKind::FrankWolfe);
        let full = solve(&rho, &spec, 1.0, &cfg).unwrap();
        cfg.window = Some(0.1);
        let win = solve(&rho, &spec, 1.0, &cfg).unwrap();
        assert!(win.converged);
        for (a, b) in full.weights.iter().zip(&win.weights) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
