//! Primal network simplex for uncapacitated/capacitated min-cost flow.
//!
//! Spanning-tree bases with an artificial root, block-search pricing and the
//! strongly feasible leaving-arc rule (first blocking arc on the source side
//! of the cycle, last on the target side), which rules out cycling in exact
//! arithmetic. The tree is rebuilt from its arc set after every pivot; the
//! instances here have at most a few thousand nodes, so an `O(n)` rebuild is
//! cheaper to get right than thread-index maintenance.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ArcState {
    Upper,
    Tree,
    Lower,
}

impl ArcState {
    fn sign(self) -> f64 {
        match self {
            ArcState::Lower => 1.0,
            ArcState::Upper => -1.0,
            ArcState::Tree => 0.0,
        }
    }
}

/// Min-cost flow instance: node supplies (positive = source) and arcs.
#[derive(Debug, Clone, Default)]
pub struct FlowNetwork {
    supply: Vec<f64>,
    src: Vec<usize>,
    dst: Vec<usize>,
    cost: Vec<f64>,
    cap: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FlowSolution {
    /// Flow on each real arc, in insertion order.
    pub flow: Vec<f64>,
    /// Node potentials `π` with `c_ij + π_i - π_j ≥ 0` on arcs at their lower
    /// bound, `≤ 0` at their upper bound and `= 0` in the basis.
    pub potential: Vec<f64>,
    /// Real arcs in the final spanning tree.
    pub basic: Vec<bool>,
    pub cost: f64,
    pub pivots: usize,
}

impl FlowNetwork {
    pub fn new(supply: Vec<f64>) -> Self {
        Self {
            supply,
            ..Default::default()
        }
    }

    pub fn node_count(&self) -> usize {
        self.supply.len()
    }

    pub fn arc_count(&self) -> usize {
        self.src.len()
    }

    /// Adds an arc `from -> to`; `cap = f64::INFINITY` for no upper bound.
    pub fn add_arc(&mut self, from: usize, to: usize, cost: f64, cap: f64) -> usize {
        debug_assert!(from < self.supply.len() && to < self.supply.len());
        self.src.push(from);
        self.dst.push(to);
        self.cost.push(cost);
        self.cap.push(cap);
        self.src.len() - 1
    }

    pub fn arc(&self, e: usize) -> (usize, usize, f64, f64) {
        (self.src[e], self.dst[e], self.cost[e], self.cap[e])
    }

    /// Solves to optimality. `Infeasible` when the supplies cannot be routed.
    pub fn solve(&self) -> Result<FlowSolution> {
        if self.supply.iter().any(|s| !s.is_finite()) || self.cost.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("flow network has non-finite data".into()));
        }
        if self.cap.iter().any(|&c| !(c >= 0.0)) {
            return Err(Error::InvalidArgument("arc capacities must be nonnegative".into()));
        }
        Simplex::new(self).run()
    }
}

struct Simplex<'a> {
    net: &'a FlowNetwork,
    n: usize,
    root: usize,
    // real arcs first, then one artificial arc per node
    src: Vec<usize>,
    dst: Vec<usize>,
    cost: Vec<f64>,
    cap: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<ArcState>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    // pred arc points from the node up to its parent
    up: Vec<bool>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    eps: f64,
    block: usize,
    next_arc: usize,
}

impl<'a> Simplex<'a> {
    fn new(net: &'a FlowNetwork) -> Self {
        let n = net.supply.len();
        let m = net.src.len();
        let root = n;
        let max_cost = net.cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let art_cost = (max_cost + 1.0) * (n as f64 + 1.0);
        let mut src = net.src.clone();
        let mut dst = net.dst.clone();
        let mut cost = net.cost.clone();
        let mut cap = net.cap.clone();
        let mut flow = vec![0.0; m];
        let mut state = vec![ArcState::Lower; m];
        let mut parent = vec![root; n + 1];
        let mut pred = vec![usize::MAX; n + 1];
        let mut up = vec![false; n + 1];
        let mut pi = vec![0.0; n + 1];
        for u in 0..n {
            let e = src.len();
            let s = net.supply[u];
            if s >= 0.0 {
                src.push(u);
                dst.push(root);
                cost.push(0.0);
                flow.push(s);
                up[u] = true;
            } else {
                src.push(root);
                dst.push(u);
                cost.push(art_cost);
                flow.push(-s);
                pi[u] = art_cost;
            }
            cap.push(f64::INFINITY);
            state.push(ArcState::Tree);
            parent[u] = root;
            pred[u] = e;
        }
        let mut depth = vec![1; n + 1];
        depth[root] = 0;
        let block = ((m as f64).sqrt().ceil() as usize).max(10).min(m.max(1));
        Self {
            net,
            n,
            root,
            src,
            dst,
            cost,
            cap,
            flow,
            state,
            parent,
            pred,
            up,
            depth,
            pi,
            eps: 1e-12 * (max_cost + 1.0),
            block,
            next_arc: 0,
        }
    }

    fn reduced(&self, e: usize) -> f64 {
        self.cost[e] + self.pi[self.src[e]] - self.pi[self.dst[e]]
    }

    /// Block search over real arcs; returns the most violating arc of the
    /// first block containing a candidate.
    fn find_entering(&mut self) -> Option<usize> {
        let m = self.net.src.len();
        if m == 0 {
            return None;
        }
        let mut best = None;
        let mut best_val = -self.eps;
        let mut count = 0;
        let mut e = self.next_arc;
        for _ in 0..m {
            if self.state[e] != ArcState::Tree {
                let v = self.state[e].sign() * self.reduced(e);
                if v < best_val {
                    best_val = v;
                    best = Some(e);
                }
            }
            count += 1;
            e += 1;
            if e == m {
                e = 0;
            }
            if count == self.block {
                if best.is_some() {
                    self.next_arc = e;
                    return best;
                }
                count = 0;
            }
        }
        self.next_arc = e;
        best
    }

    fn join(&self, mut a: usize, mut b: usize) -> usize {
        while a != b {
            if self.depth[a] >= self.depth[b] {
                a = self.parent[a];
            } else {
                b = self.parent[b];
            }
        }
        a
    }

    fn pivot(&mut self, entering: usize) -> Result<()> {
        let (first, second) = if self.state[entering] == ArcState::Lower {
            (self.src[entering], self.dst[entering])
        } else {
            (self.dst[entering], self.src[entering])
        };
        let join = self.join(first, second);
        let mut delta = self.cap[entering];
        // 0: entering arc blocks, 1: first side, 2: second side
        let mut side = 0;
        let mut u_out = usize::MAX;
        let mut u = first;
        while u != join {
            let e = self.pred[u];
            let d = if self.up[u] { self.flow[e] } else { self.cap[e] - self.flow[e] };
            let d = d.max(0.0);
            if d < delta {
                delta = d;
                u_out = u;
                side = 1;
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != join {
            let e = self.pred[u];
            let d = if self.up[u] { self.cap[e] - self.flow[e] } else { self.flow[e] };
            let d = d.max(0.0);
            if d <= delta {
                delta = d;
                u_out = u;
                side = 2;
            }
            u = self.parent[u];
        }
        if !delta.is_finite() {
            return Err(Error::Solver("unbounded min-cost flow".into()));
        }

        if delta > 0.0 {
            self.flow[entering] += self.state[entering].sign() * delta;
            let mut u = first;
            while u != join {
                let e = self.pred[u];
                self.flow[e] += if self.up[u] { -delta } else { delta };
                u = self.parent[u];
            }
            let mut u = second;
            while u != join {
                let e = self.pred[u];
                self.flow[e] += if self.up[u] { delta } else { -delta };
                u = self.parent[u];
            }
        }

        if side == 0 {
            self.state[entering] = if self.state[entering] == ArcState::Lower {
                self.flow[entering] = self.cap[entering];
                ArcState::Upper
            } else {
                self.flow[entering] = 0.0;
                ArcState::Lower
            };
            return Ok(());
        }

        let leaving = self.pred[u_out];
        let to_lower = (side == 1) == self.up[u_out];
        if to_lower {
            self.flow[leaving] = 0.0;
            self.state[leaving] = ArcState::Lower;
        } else {
            self.flow[leaving] = self.cap[leaving];
            self.state[leaving] = ArcState::Upper;
        }
        self.state[entering] = ArcState::Tree;
        self.rebuild_tree();
        Ok(())
    }

    fn rebuild_tree(&mut self) {
        let total = self.n + 1;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); total];
        for (e, s) in self.state.iter().enumerate() {
            if *s == ArcState::Tree {
                adj[self.src[e]].push(e);
                adj[self.dst[e]].push(e);
            }
        }
        let mut seen = vec![false; total];
        let mut queue = std::collections::VecDeque::with_capacity(total);
        seen[self.root] = true;
        self.depth[self.root] = 0;
        self.pi[self.root] = 0.0;
        queue.push_back(self.root);
        while let Some(v) = queue.pop_front() {
            for &e in &adj[v] {
                let (w, is_up) = if self.src[e] == v { (self.dst[e], false) } else { (self.src[e], true) };
                if seen[w] {
                    continue;
                }
                seen[w] = true;
                self.parent[w] = v;
                self.pred[w] = e;
                self.up[w] = is_up;
                self.depth[w] = self.depth[v] + 1;
                self.pi[w] = if is_up { self.pi[v] - self.cost[e] } else { self.pi[v] + self.cost[e] };
                queue.push_back(w);
            }
        }
        debug_assert!(seen.iter().all(|&s| s));
    }

    fn run(mut self) -> Result<FlowSolution> {
        let m = self.net.src.len();
        let max_pivots = 100 * (m + self.n + 10) * (self.n + 10).max(10);
        let mut pivots = 0;
        while let Some(e) = self.find_entering() {
            self.pivot(e)?;
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::Solver(format!("network simplex exceeded {max_pivots} pivots")));
            }
        }
        let scale = self.net.supply.iter().map(|s| s.abs()).sum::<f64>().max(1.0);
        let stranded = self.flow[m..].iter().fold(0.0f64, |a, f| a.max(*f));
        if stranded > 1e-9 * scale {
            return Err(Error::Infeasible(format!(
                "supplies cannot be routed ({stranded} units left on artificial arcs)"
            )));
        }
        let flow: Vec<f64> = self.flow[..m].to_vec();
        let cost = flow.iter().zip(&self.net.cost).map(|(f, c)| f * c).sum();
        Ok(FlowSolution {
            basic: self.state[..m].iter().map(|s| *s == ArcState::Tree).collect(),
            potential: self.pi[..self.n].to_vec(),
            flow,
            cost,
            pivots,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_optimality(net: &FlowNetwork, sol: &FlowSolution) {
        for e in 0..net.arc_count() {
            let (s, d, c, cap) = net.arc(e);
            let r = c + sol.potential[s] - sol.potential[d];
            let f = sol.flow[e];
            assert!(f >= -1e-12 && f <= cap + 1e-12);
            if f > 1e-12 {
                assert!(r <= 1e-9, "arc {e} carries flow with reduced cost {r}");
            }
            if f < cap - 1e-12 {
                assert!(r >= -1e-9, "arc {e} below capacity with reduced cost {r}");
            }
        }
        let mut balance = net.supply.clone();
        for e in 0..net.arc_count() {
            let (s, d, _, _) = net.arc(e);
            balance[s] -= sol.flow[e];
            balance[d] += sol.flow[e];
        }
        assert!(balance.iter().all(|b| b.abs() < 1e-12), "{balance:?}");
    }

    #[test]
    fn small_transportation_problem() {
        // two sources, two sinks, crossing costs
        let mut net = FlowNetwork::new(vec![0.5, 0.5, -0.5, -0.5]);
        net.add_arc(0, 2, 0.0, f64::INFINITY);
        net.add_arc(0, 3, 4.0, f64::INFINITY);
        net.add_arc(1, 2, 1.0, f64::INFINITY);
        net.add_arc(1, 3, 1.0, f64::INFINITY);
        let sol = net.solve().unwrap();
        assert!((sol.cost - 0.5).abs() < 1e-15);
        check_optimality(&net, &sol);
    }

    #[test]
    fn capacities_bind() {
        let mut net = FlowNetwork::new(vec![1.0, 0.0, 0.0, -1.0]);
        net.add_arc(0, 1, 1.0, 0.25);
        net.add_arc(0, 2, 3.0, f64::INFINITY);
        net.add_arc(1, 3, 0.0, f64::INFINITY);
        net.add_arc(2, 3, 0.0, f64::INFINITY);
        let sol = net.solve().unwrap();
        assert!((sol.cost - (0.25 + 2.25)).abs() < 1e-15);
        check_optimality(&net, &sol);
    }

    #[test]
    fn infeasible_capacity() {
        let mut net = FlowNetwork::new(vec![1.0, -1.0]);
        net.add_arc(0, 1, 1.0, 0.5);
        assert!(matches!(net.solve(), Err(Error::Infeasible(_))));
    }

    #[test]
    fn random_dense_instances_are_optimal() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let ns = rng.gen_range(1..8);
            let nt = rng.gen_range(1..8);
            let mut a: Vec<f64> = (0..ns).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut b: Vec<f64> = (0..nt).map(|_| rng.gen_range(0.0..1.0)).collect();
            let sa: f64 = a.iter().sum();
            let sb: f64 = b.iter().sum();
            a.iter_mut().for_each(|x| *x /= sa);
            b.iter_mut().for_each(|x| *x /= sb);
            let mut supply = a.clone();
            supply.extend(b.iter().map(|x| -x));
            let drift: f64 = supply.iter().sum();
            supply[ns] -= drift;
            let mut net = FlowNetwork::new(supply);
            for i in 0..ns {
                for j in 0..nt {
                    net.add_arc(i, ns + j, rng.gen_range(0..20) as f64, f64::INFINITY);
                }
            }
            let sol = net.solve().unwrap();
            check_optimality(&net, &sol);
            assert!(sol.basic.iter().filter(|&&b| b).count() <= ns + nt - 1);
        }
    }
}
