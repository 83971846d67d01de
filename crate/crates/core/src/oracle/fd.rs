use serde::{Deserialize, Serialize};

use crate::energy::PotentialField;
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PdeKind {
    /// `L(s) = s`.
    FokkerPlanck,
    /// `L(s) = s^m`.
    PorousMedium { m: f64 },
    /// `L = 0`: pure transport by `-V'`, with upwind face values.
    Transport,
}

impl PdeKind {
    fn pressure(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        match self {
            Self::FokkerPlanck => s,
            Self::PorousMedium { m } => s.powf(*m),
            Self::Transport => 0.0,
        }
    }

    fn pressure_derivative(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        match self {
            Self::FokkerPlanck => 1.0,
            Self::PorousMedium { m } => m * s.powf(m - 1.0),
            Self::Transport => 0.0,
        }
    }

    /// Weights of `(u_i, u_{i+1})` in the drift flux at face `i + ½`.
    fn face_weights(&self, drift: f64) -> (f64, f64) {
        match self {
            Self::Transport if drift > 0.0 => (0.0, 1.0),
            Self::Transport => (1.0, 0.0),
            _ => (0.5, 0.5),
        }
    }
}

/// `∂_t u = ∂_xx L(u) + ∂_x(u V')` on `[lower, upper]` with zero flux.
/// Drift fluxes are centred, except for [`PdeKind::Transport`] (upwind).
#[derive(Debug, Clone, PartialEq)]
pub struct FdProblem {
    pub kind: PdeKind,
    pub potential: PotentialField,
    pub lower: f64,
    pub upper: f64,
    pub cells: usize,
    pub horizon: f64,
    /// Number of implicit Euler steps.
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdSolution {
    pub lower: f64,
    pub upper: f64,
    /// Cell averages at the final time.
    pub density: Vec<f64>,
    pub time: f64,
    /// `|∫u(T) - ∫u(0)|`.
    pub mass_error: f64,
    /// Max-norm of the discrete right-hand side at the final state.
    pub steady_residual: f64,
    pub newton_iterations: usize,
}

impl FdSolution {
    pub fn dx(&self) -> f64 {
        (self.upper - self.lower) / self.density.len() as f64
    }

    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.dx()
    }

    /// `∫ |u_h - u|` against the piecewise-constant density of `rho`. The
    /// lattice must tile the same interval with cells that are unions of at
    /// least 8 reference cells.
    pub fn l1_distance(&self, rho: &DiscreteMeasure) -> Result<f64> {
        let l = rho.lattice();
        if l.dim() != 1 {
            return Err(Error::InvalidArgument("reference comparison is 1D only".into()));
        }
        let (lo, hi) = l.bounds();
        let tol = 1e-12 * (self.upper - self.lower);
        if (lo[0] - self.lower).abs() > tol || (hi[0] - self.upper).abs() > tol {
            return Err(Error::InvalidArgument(format!(
                "lattice box [{}, {}] differs from reference interval [{}, {}]",
                lo[0], hi[0], self.lower, self.upper
            )));
        }
        let fine = self.density.len();
        let coarse = l.len();
        if fine % coarse != 0 || fine / coarse < 8 {
            return Err(Error::InvalidArgument(format!(
                "reference mesh of {fine} cells must refine the {coarse}-cell lattice by an integer factor ≥ 8"
            )));
        }
        let ratio = fine / coarse;
        let u = rho.density();
        let dx = self.dx();
        Ok(self.density.iter().enumerate().map(|(i, v)| (v - u[i / ratio]).abs() * dx).sum())
    }
}

/// Cell averages of `u` on a uniform mesh, by 3-point Gauss quadrature.
pub fn cell_averages(lower: f64, upper: f64, cells: usize, u: impl Fn(f64) -> f64) -> Vec<f64> {
    let dx = (upper - lower) / cells as f64;
    let g = (0.6f64).sqrt() / 2.0;
    (0..cells)
        .map(|i| {
            let c = lower + (i as f64 + 0.5) * dx;
            (5.0 * u(c - g * dx) + 8.0 * u(c) + 5.0 * u(c + g * dx)) / 18.0
        })
        .collect()
}

struct Operator<'a> {
    kind: PdeKind,
    /// `V'` at interior faces `i + ½`, `i = 0..n-1`.
    drift: Vec<f64>,
    dx: f64,
    _p: std::marker::PhantomData<&'a ()>,
}

impl Operator<'_> {
    /// Face fluxes `F_{i+½} = (L(u_{i+1}) - L(u_i))/dx + V' ū_{i+½}`, zero on
    /// the boundary faces.
    fn fluxes(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let mut f = vec![0.0; n + 1];
        for i in 0..n - 1 {
            let diff = (self.kind.pressure(u[i + 1]) - self.kind.pressure(u[i])) / self.dx;
            let (wl, wr) = self.kind.face_weights(self.drift[i]);
            f[i + 1] = diff + self.drift[i] * (wl * u[i] + wr * u[i + 1]);
        }
        f
    }

    fn rhs(&self, u: &[f64]) -> Vec<f64> {
        let f = self.fluxes(u);
        (0..u.len()).map(|i| (f[i + 1] - f[i]) / self.dx).collect()
    }
}

/// Tridiagonal solve; `a` sub-, `b` main, `c` super-diagonal.
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut denom = b[0];
    if denom == 0.0 {
        return None;
    }
    cp[0] = c[0] / denom;
    dp[0] = d[0] / denom;
    for i in 1..n {
        denom = b[i] - a[i] * cp[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return None;
        }
        cp[i] = if i + 1 < n { c[i] / denom } else { 0.0 };
        dp[i] = (d[i] - a[i] * dp[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    Some(x)
}

/// Implicit-Euler finite-volume solution from cell averages `initial`.
pub fn fd_reference_1d(problem: &FdProblem, initial: &[f64]) -> Result<FdSolution> {
    let n = problem.cells;
    if n < 2 || initial.len() != n {
        return Err(Error::InvalidArgument(format!("need at least 2 cells and one initial value per cell, got {n} / {}", initial.len())));
    }
    if !(problem.upper > problem.lower) {
        return Err(Error::InvalidArgument("empty interval".into()));
    }
    if !(problem.horizon >= 0.0) {
        return Err(Error::InvalidArgument("horizon must be nonnegative".into()));
    }
    if let PdeKind::PorousMedium { m } = problem.kind {
        if !(m > 1.0) {
            return Err(Error::InvalidArgument(format!("porous-medium exponent must exceed 1, got {m}")));
        }
    }
    if initial.iter().any(|u| !(u.is_finite() && *u >= 0.0)) {
        return Err(Error::InvalidArgument("initial density must be finite and nonnegative".into()));
    }
    let dx = (problem.upper - problem.lower) / n as f64;
    let drift: Vec<f64> = (1..n)
        .map(|i| problem.potential.gradient(&[problem.lower + i as f64 * dx])[0])
        .collect();
    let op = Operator {
        kind: problem.kind,
        drift,
        dx,
        _p: std::marker::PhantomData,
    };
    let mass0: f64 = initial.iter().sum::<f64>() * dx;
    let mut u = initial.to_vec();
    let mut newton_iterations = 0;
    if problem.steps > 0 && problem.horizon > 0.0 {
        let dt = problem.horizon / problem.steps as f64;
        let k = dt / dx;
        let (mut a, mut b, mut c) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for _ in 0..problem.steps {
            let prev = u.clone();
            let mut converged = false;
            for _ in 0..60 {
                newton_iterations += 1;
                let f = op.fluxes(&u);
                let res: Vec<f64> = (0..n).map(|i| u[i] - prev[i] - k * (f[i + 1] - f[i])).collect();
                let scale = 1.0 + u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if res.iter().all(|r| r.abs() <= 1e-14 * scale) {
                    converged = true;
                    break;
                }
                // dF_{i+½}/du_i and dF_{i+½}/du_{i+1} for interior faces.
                let lp: Vec<f64> = u.iter().map(|&s| problem.kind.pressure_derivative(s)).collect();
                for i in 0..n {
                    let (mut diag, mut sub, mut sup) = (1.0, 0.0, 0.0);
                    if i + 1 < n {
                        let a = op.drift[i];
                        let (wl, wr) = problem.kind.face_weights(a);
                        diag -= k * (-lp[i] / dx + a * wl);
                        sup = -k * (lp[i + 1] / dx + a * wr);
                    }
                    if i > 0 {
                        let a = op.drift[i - 1];
                        let (wl, wr) = problem.kind.face_weights(a);
                        diag += k * (lp[i] / dx + a * wr);
                        sub = k * (-lp[i - 1] / dx + a * wl);
                    }
                    a[i] = sub;
                    b[i] = diag;
                    c[i] = sup;
                }
                let neg: Vec<f64> = res.iter().map(|r| -r).collect();
                let delta = thomas(&a, &b, &c, &neg).ok_or_else(|| Error::Solver("singular Newton system in implicit solve".into()))?;
                u.iter_mut().zip(&delta).for_each(|(v, d)| *v += d);
                if delta.iter().all(|d| d.abs() <= 1e-15 * scale) {
                    converged = true;
                    break;
                }
            }
            if !converged || u.iter().any(|v| !v.is_finite()) {
                return Err(Error::Solver("Newton failure in implicit solve".into()));
            }
        }
    }
    let mass = u.iter().sum::<f64>() * dx;
    let steady_residual = op.rhs(&u).iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(FdSolution {
        lower: problem.lower,
        upper: problem.upper,
        density: u,
        time: problem.horizon,
        mass_error: (mass - mass0).abs(),
        steady_residual,
        newton_iterations,
    })
}
