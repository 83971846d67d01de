//! Discrete energies `F^h`, their first variations and the `ℓ` transform.
//!
//! The internal term is `Σ_z f(ρ_z / h^d) h^d`; the potential term is
//! `Σ_z V(z) ρ_z`; the optional interaction term is `Σ_{x,y} W(x-y) ρ_x ρ_y`.
//! Congested (crowd) energies carry no internal term and are `+∞` as soon as
//! some density exceeds one.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::measure::DiscreteMeasure;

/// Slack on `u ≤ 1` before the crowd energy becomes `+∞`.
pub const CAPACITY_TOL: f64 = 1e-12;
/// Slack accepted by [`crowd_feasible`].
pub const FEASIBLE_TOL: f64 = 1e-9;
/// Default lower clamp for `f'` arguments at vanishing densities.
pub const DEFAULT_CLAMP: f64 = 1e-10;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Growth constants `(C_f, θ, s_0)` attached to custom densities. Carried as
/// metadata only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthConstants {
    pub c_f: f64,
    pub theta: f64,
    pub s0: f64,
}

/// User supplied convex density with its derivative and `ℓ` transform.
#[derive(Clone)]
pub struct CustomDensity {
    pub name: String,
    pub f: ScalarFn,
    pub df: ScalarFn,
    pub ell: ScalarFn,
    pub convex: bool,
    pub superlinear: bool,
    pub strictly_increasing_derivative: bool,
    pub growth: Option<GrowthConstants>,
}

impl fmt::Debug for CustomDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDensity")
            .field("name", &self.name)
            .field("convex", &self.convex)
            .field("superlinear", &self.superlinear)
            .field("strictly_increasing_derivative", &self.strictly_increasing_derivative)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum InternalDensityKind {
    /// `f(s) = s log s`.
    Entropy,
    /// `f(s) = s^m / (m - 1)`, `m > 1`.
    PowerLaw { m: f64 },
    Custom(CustomDensity),
}

impl InternalDensityKind {
    pub fn power_law(m: f64) -> Result<Self> {
        if !(m.is_finite() && m > 1.0) {
            return Err(Error::InvalidEnergy(format!("power-law exponent must exceed 1, got {m}")));
        }
        Ok(Self::PowerLaw { m })
    }

    /// Validates a custom density: declared convexity and monotone `f'`, and
    /// `ℓ'(s) ≈ √s f''(s)` by finite differences at a few sample points.
    pub fn custom(c: CustomDensity) -> Result<Self> {
        if !c.convex {
            return Err(Error::InvalidEnergy(format!("custom density `{}` is not declared convex", c.name)));
        }
        for &s in &[0.25, 1.0, 4.0] {
            let e = 1e-4 * s;
            let ell_prime = ((c.ell)(s + e) - (c.ell)(s - e)) / (2.0 * e);
            let f2 = ((c.df)(s + e) - (c.df)(s - e)) / (2.0 * e);
            let expected = s.sqrt() * f2;
            let err = (ell_prime - expected).abs() / expected.abs().max(1e-8);
            if !(err < 1e-4) {
                return Err(Error::InvalidEnergy(format!(
                    "custom density `{}`: ℓ'({s}) = {ell_prime} but √s f''(s) = {expected}",
                    c.name
                )));
            }
        }
        Ok(Self::Custom(c))
    }

    pub fn name(&self) -> String {
        match self {
            Self::Entropy => "entropy".into(),
            Self::PowerLaw { m } => format!("power_law(m={m})"),
            Self::Custom(c) => format!("custom({})", c.name),
        }
    }

    pub fn is_superlinear(&self) -> bool {
        match self {
            Self::Entropy | Self::PowerLaw { .. } => true,
            Self::Custom(c) => c.superlinear,
        }
    }

    pub fn has_strictly_increasing_derivative(&self) -> bool {
        match self {
            Self::Entropy | Self::PowerLaw { .. } => true,
            Self::Custom(c) => c.strictly_increasing_derivative,
        }
    }

    pub fn f(&self, s: f64) -> f64 {
        match self {
            Self::Entropy => {
                if s > 0.0 {
                    s * s.ln()
                } else {
                    0.0
                }
            }
            Self::PowerLaw { m } => s.max(0.0).powf(*m) / (m - 1.0),
            Self::Custom(c) => (c.f)(s),
        }
    }

    /// `f'(s)`; `-∞` for the entropy at `s = 0`.
    pub fn df(&self, s: f64) -> f64 {
        match self {
            Self::Entropy => {
                if s > 0.0 {
                    s.ln() + 1.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Self::PowerLaw { m } => m * s.max(0.0).powf(m - 1.0) / (m - 1.0),
            Self::Custom(c) => (c.df)(s),
        }
    }

    /// `f''(s)` (finite differences for custom kinds).
    pub fn d2f(&self, s: f64) -> f64 {
        match self {
            Self::Entropy => 1.0 / s,
            Self::PowerLaw { m } => m * s.max(0.0).powf(m - 2.0),
            Self::Custom(c) => {
                let e = 1e-5 * s.abs().max(1e-3);
                let lo = (s - e).max(0.0);
                ((c.df)(s + e) - (c.df)(lo)) / (s + e - lo)
            }
        }
    }

    /// `f'` evaluated at `max(s, clamp)`.
    pub fn df_clamped(&self, s: f64, clamp: f64) -> f64 {
        self.df(s.max(clamp))
    }

    /// `ℓ(s)` with `ℓ'(s) = √s f''(s)`; `2√s` for the entropy and
    /// `m s^{m-1/2} / (m - 1/2)` for the power law.
    pub fn ell(&self, s: f64) -> Result<f64> {
        if s < 0.0 || s.is_nan() {
            return Err(Error::InvalidArgument(format!("ℓ requires s >= 0, got {s}")));
        }
        Ok(self.ell_unchecked(s))
    }

    pub(crate) fn ell_unchecked(&self, s: f64) -> f64 {
        match self {
            Self::Entropy => 2.0 * s.sqrt(),
            Self::PowerLaw { m } => m * s.powf(m - 0.5) / (m - 0.5),
            Self::Custom(c) => (c.ell)(s),
        }
    }

    /// `f'(0)` (possibly `-∞`).
    pub fn df_at_zero(&self) -> f64 {
        self.df(0.0)
    }

    /// Inverse of `f'` extended by zero below `f'(0)`: the density `s ≥ 0`
    /// with `f'(s) = a`.
    pub fn df_inverse(&self, a: f64) -> f64 {
        match self {
            Self::Entropy => (a - 1.0).exp(),
            Self::PowerLaw { m } => {
                if a <= 0.0 {
                    0.0
                } else {
                    ((m - 1.0) * a / m).powf(1.0 / (m - 1.0))
                }
            }
            Self::Custom(c) => {
                if a <= (c.df)(0.0) {
                    return 0.0;
                }
                let mut hi = 1.0;
                while (c.df)(hi) < a {
                    hi *= 2.0;
                    if hi > 1e300 {
                        return f64::INFINITY;
                    }
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if (c.df)(mid) < a {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// Derivative of [`Self::df_inverse`] at `a` (zero where the inverse is flat).
    pub(crate) fn df_inverse_slope(&self, a: f64) -> f64 {
        match self {
            Self::Entropy => (a - 1.0).exp(),
            Self::PowerLaw { m } => {
                if a <= 0.0 {
                    0.0
                } else {
                    let s = self.df_inverse(a);
                    1.0 / (m * s.powf(m - 2.0)).max(f64::MIN_POSITIVE)
                }
            }
            Self::Custom(_) => {
                let s = self.df_inverse(a);
                if s <= 0.0 {
                    0.0
                } else {
                    1.0 / self.d2f(s).max(f64::MIN_POSITIVE)
                }
            }
        }
    }
}

/// Continuous potentials with known gradients (builtins usable both on the
/// grid and by the continuous proximal solver).
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialField {
    Constant(f64),
    /// `V(x) = slope · x + offset`.
    Linear { slope: Vec<f64>, offset: f64 },
    /// `V(x) = stiffness/2 · |x - center|^2`.
    QuadraticWell { center: Vec<f64>, stiffness: f64 },
}

impl PotentialField {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Linear { slope, offset } => offset + slope.iter().zip(x).map(|(a, b)| a * b).sum::<f64>(),
            Self::QuadraticWell { center, stiffness } => {
                0.5 * stiffness * center.iter().zip(x).map(|(c, y)| (y - c).powi(2)).sum::<f64>()
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Constant(_) => vec![0.0; x.len()],
            Self::Linear { slope, .. } => slope.clone(),
            Self::QuadraticWell { center, stiffness } => {
                x.iter().zip(center).map(|(y, c)| stiffness * (y - c)).collect()
            }
        }
    }

    /// Lipschitz constant of `∇V` (`|∇V|_Lip`).
    pub fn gradient_lipschitz(&self) -> f64 {
        match self {
            Self::Constant(_) | Self::Linear { .. } => 0.0,
            Self::QuadraticWell { stiffness, .. } => stiffness.abs(),
        }
    }

    /// Lipschitz constant of `V` on the lattice box.
    pub fn lipschitz_on(&self, lattice: &LatticeSpec) -> f64 {
        match self {
            Self::Constant(_) => 0.0,
            Self::Linear { slope, .. } => slope.iter().map(|s| s * s).sum::<f64>().sqrt(),
            Self::QuadraticWell { center, stiffness } => {
                let (lo, hi) = lattice.bounds();
                let far: f64 = (0..lattice.dim())
                    .map(|a| (center[a] - lo[a]).abs().max((hi[a] - center[a]).abs()).powi(2))
                    .sum::<f64>()
                    .sqrt();
                stiffness.abs() * far
            }
        }
    }

    pub fn sample(&self, lattice: &LatticeSpec) -> Vec<f64> {
        lattice.positions().iter().map(|x| self.value(x)).collect()
    }
}

/// External potential sampled on lattice nodes with a declared `Lip(V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePotential {
    values: Vec<f64>,
    lip: f64,
}

impl NodePotential {
    /// Validates `lip ≥ max_{Σ^h} |V(z) - V(ζ)| / h`.
    pub fn new(lattice: &LatticeSpec, values: Vec<f64>, lip: f64) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::InvalidEnergy(format!(
                "potential has {} values for {} nodes",
                values.len(),
                lattice.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidEnergy("potential values must be finite".into()));
        }
        if !(lip.is_finite() && lip >= 0.0) {
            return Err(Error::InvalidEnergy(format!("Lip(V) must be finite and >= 0, got {lip}")));
        }
        let grid = grid_lipschitz(lattice, &values);
        if grid > lip * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::InvalidEnergy(format!(
                "declared Lip(V) = {lip} is below the grid difference quotient {grid}"
            )));
        }
        Ok(Self { values, lip })
    }

    pub fn from_field(lattice: &LatticeSpec, field: &PotentialField) -> Self {
        let values = field.sample(lattice);
        let lip = field.lipschitz_on(lattice).max(grid_lipschitz(lattice, &values));
        Self { values, lip }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lipschitz(&self) -> f64 {
        self.lip
    }

    pub fn is_constant(&self) -> bool {
        self.values.windows(2).all(|w| w[0] == w[1])
    }
}

/// `max_{Σ^h} |V(z) - V(ζ)| / h`.
pub fn grid_lipschitz(lattice: &LatticeSpec, values: &[f64]) -> f64 {
    lattice
        .edges()
        .iter()
        .map(|&(a, b, _)| (values[a] - values[b]).abs())
        .fold(0.0, f64::max)
        / lattice.spacing()
}

/// Radial interaction kernel `W(r)` given as a table, linearly interpolated
/// and held constant past the last radius.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionKernel {
    radii: Vec<f64>,
    values: Vec<f64>,
}

impl InteractionKernel {
    pub fn new(radii: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if radii.is_empty() || radii.len() != values.len() {
            return Err(Error::InvalidEnergy("interaction table needs matching non-empty columns".into()));
        }
        if radii[0] != 0.0 {
            return Err(Error::InvalidEnergy("interaction table must start at r = 0".into()));
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidEnergy("interaction radii must increase and values be finite".into()));
        }
        Ok(Self { radii, values })
    }

    pub fn eval(&self, r: f64) -> f64 {
        let r = r.abs();
        match self.radii.iter().position(|&q| q > r) {
            None => *self.values.last().unwrap(),
            Some(0) => self.values[0],
            Some(i) => {
                let t = (r - self.radii[i - 1]) / (self.radii[i] - self.radii[i - 1]);
                self.values[i - 1] + t * (self.values[i] - self.values[i - 1])
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnergySpec {
    lattice: Arc<LatticeSpec>,
    internal: Option<InternalDensityKind>,
    potential: Option<NodePotential>,
    interaction: Option<InteractionKernel>,
    /// Dense `W(x - y)` matrix, row-major.
    interaction_matrix: Option<Vec<f64>>,
    crowd: bool,
}

impl EnergySpec {
    pub fn builder(lattice: Arc<LatticeSpec>) -> EnergySpecBuilder {
        EnergySpecBuilder {
            lattice,
            internal: None,
            potential: None,
            interaction: None,
            crowd: false,
        }
    }

    pub fn lattice(&self) -> &Arc<LatticeSpec> {
        &self.lattice
    }

    pub fn internal(&self) -> Option<&InternalDensityKind> {
        self.internal.as_ref()
    }

    pub fn potential(&self) -> Option<&NodePotential> {
        self.potential.as_ref()
    }

    pub fn interaction(&self) -> Option<&InteractionKernel> {
        self.interaction.as_ref()
    }

    pub fn is_crowd(&self) -> bool {
        self.crowd
    }

    pub fn has_interaction(&self) -> bool {
        self.interaction.is_some()
    }

    /// `V(z)` or zero when no potential is present.
    pub fn potential_at(&self, z: usize) -> f64 {
        self.potential.as_ref().map_or(0.0, |p| p.values[z])
    }

    /// Per-node potential values (zeros when absent).
    pub fn potential_values(&self) -> Vec<f64> {
        match &self.potential {
            Some(p) => p.values.clone(),
            None => vec![0.0; self.lattice.len()],
        }
    }

    pub fn lipschitz(&self) -> f64 {
        self.potential.as_ref().map_or(0.0, |p| p.lip)
    }

    /// `(W * ρ)(x) = Σ_z W(x - z) ρ_z` for every node.
    pub fn interaction_field(&self, weights: &[f64]) -> Option<Vec<f64>> {
        let mat = self.interaction_matrix.as_ref()?;
        let m = weights.len();
        Some(
            (0..m)
                .map(|x| mat[x * m..(x + 1) * m].iter().zip(weights).map(|(w, r)| w * r).sum())
                .collect(),
        )
    }

    fn check_lattice(&self, rho: &DiscreteMeasure) -> Result<()> {
        if Arc::ptr_eq(&self.lattice, rho.lattice()) || *self.lattice == **rho.lattice() {
            Ok(())
        } else {
            Err(Error::LatticeMismatch)
        }
    }

    /// Internal part `Σ f(u_z) h^d`.
    pub fn internal_energy(&self, weights: &[f64]) -> f64 {
        match &self.internal {
            None => 0.0,
            Some(kind) => {
                let vol = self.lattice.cell_volume();
                weights.iter().map(|w| kind.f(w / vol) * vol).sum()
            }
        }
    }

    /// Energy evaluated on raw weights (lattice assumed to match).
    pub fn eval_weights(&self, weights: &[f64]) -> f64 {
        if self.crowd && !within_capacity(&self.lattice, weights, CAPACITY_TOL) {
            return f64::INFINITY;
        }
        let mut e = self.internal_energy(weights);
        if let Some(p) = &self.potential {
            e += p.values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>();
        }
        if let Some(field) = self.interaction_field(weights) {
            e += field.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>();
        }
        e
    }

    pub fn eval(&self, rho: &DiscreteMeasure) -> Result<f64> {
        self.check_lattice(rho)?;
        Ok(self.eval_weights(rho.weights()))
    }

    /// Gradient of the energy with respect to the weights:
    /// `f'(u_z) + V(z) + 2 Σ_ζ W(z - ζ) ρ_ζ`. With `clamp = Some(δ)` the
    /// internal derivative is evaluated at `max(u_z, δ)`.
    pub fn first_variation_weights(&self, weights: &[f64], clamp: Option<f64>) -> Result<Vec<f64>> {
        let vol = self.lattice.cell_volume();
        let mut g = self.potential_values();
        if let Some(kind) = &self.internal {
            for (gz, w) in g.iter_mut().zip(weights) {
                let u = w / vol;
                let d = match clamp {
                    Some(delta) => kind.df_clamped(u, delta),
                    None => kind.df(u),
                };
                if !d.is_finite() {
                    return Err(Error::UndefinedGradient(format!(
                        "f'({u}) is not finite; enable clamping"
                    )));
                }
                *gz += d;
            }
        }
        if let Some(field) = self.interaction_field(weights) {
            for (gz, a) in g.iter_mut().zip(field) {
                *gz += 2.0 * a;
            }
        }
        Ok(g)
    }

    pub fn first_variation(&self, rho: &DiscreteMeasure, clamp: Option<f64>) -> Result<Vec<f64>> {
        self.check_lattice(rho)?;
        self.first_variation_weights(rho.weights(), clamp)
    }
}

pub struct EnergySpecBuilder {
    lattice: Arc<LatticeSpec>,
    internal: Option<InternalDensityKind>,
    potential: Option<NodePotential>,
    interaction: Option<InteractionKernel>,
    crowd: bool,
}

impl EnergySpecBuilder {
    pub fn internal(mut self, kind: InternalDensityKind) -> Self {
        self.internal = Some(kind);
        self
    }

    pub fn potential(mut self, potential: NodePotential) -> Self {
        self.potential = Some(potential);
        self
    }

    pub fn potential_field(mut self, field: &PotentialField) -> Self {
        self.potential = Some(NodePotential::from_field(&self.lattice, field));
        self
    }

    pub fn interaction(mut self, kernel: InteractionKernel) -> Self {
        self.interaction = Some(kernel);
        self
    }

    pub fn crowd(mut self, crowd: bool) -> Self {
        self.crowd = crowd;
        self
    }

    pub fn build(self) -> Result<EnergySpec> {
        if self.crowd && self.internal.is_some() {
            return Err(Error::InvalidEnergy("crowd energies have no internal density term".into()));
        }
        if self.crowd && self.interaction.is_some() {
            return Err(Error::InvalidEnergy("crowd energies do not support interaction kernels".into()));
        }
        if let Some(p) = &self.potential {
            if p.values.len() != self.lattice.len() {
                return Err(Error::InvalidEnergy("potential does not match lattice".into()));
            }
            if let Some(kind) = &self.internal {
                if !p.is_constant() && !kind.is_superlinear() {
                    return Err(Error::InvalidEnergy(
                        "a non-constant potential requires a superlinear internal density".into(),
                    ));
                }
            }
        }
        let interaction_matrix = self.interaction.as_ref().map(|k| {
            let m = self.lattice.len();
            let mut mat = vec![0.0; m * m];
            for x in 0..m {
                for y in 0..m {
                    mat[x * m + y] = k.eval(self.lattice.squared_distance(x, y).sqrt());
                }
            }
            mat
        });
        Ok(EnergySpec {
            lattice: self.lattice,
            internal: self.internal,
            potential: self.potential,
            interaction: self.interaction,
            interaction_matrix,
            crowd: self.crowd,
        })
    }
}

/// Evaluates `F^h(ρ)`; `+∞` for infeasible crowd measures.
pub fn eval_energy(spec: &EnergySpec, rho: &DiscreteMeasure) -> Result<f64> {
    spec.eval(rho)
}

pub fn first_variation(spec: &EnergySpec, rho: &DiscreteMeasure, clamp: Option<f64>) -> Result<Vec<f64>> {
    spec.first_variation(rho, clamp)
}

pub fn ell(kind: &InternalDensityKind, s: f64) -> Result<f64> {
    kind.ell(s)
}

/// `max_z u_z ≤ 1 + 1e-9`.
pub fn crowd_feasible(rho: &DiscreteMeasure) -> bool {
    within_capacity(rho.lattice(), rho.weights(), FEASIBLE_TOL)
}

pub(crate) fn within_capacity(lattice: &LatticeSpec, weights: &[f64], tol: f64) -> bool {
    let vol = lattice.cell_volume();
    weights.iter().all(|w| w / vol <= 1.0 + tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(h: f64, n: usize) -> Arc<LatticeSpec> {
        Arc::new(LatticeSpec::unit_origin(h, &[n]).unwrap())
    }

    #[test]
    fn energy_examples() {
        let l = line(0.25, 4);
        let uni = DiscreteMeasure::uniform(l.clone());
        let ent = EnergySpec::builder(l.clone()).internal(InternalDensityKind::Entropy).build().unwrap();
        assert!(eval_energy(&ent, &uni).unwrap().abs() < 1e-15);
        let pm = EnergySpec::builder(l.clone())
            .internal(InternalDensityKind::power_law(2.0).unwrap())
            .build()
            .unwrap();
        assert!((eval_energy(&pm, &uni).unwrap() - 1.0).abs() < 1e-15);

        let crowd = EnergySpec::builder(l.clone()).crowd(true).build().unwrap();
        let over = DiscreteMeasure::new(l, vec![0.375, 0.125, 0.25, 0.25]).unwrap();
        assert_eq!(eval_energy(&crowd, &over).unwrap(), f64::INFINITY);
        assert!(eval_energy(&crowd, &uni).unwrap().is_finite());
    }

    #[test]
    fn first_variation_examples() {
        let l = line(0.25, 4);
        let ent = EnergySpec::builder(l.clone()).internal(InternalDensityKind::Entropy).build().unwrap();
        let g = first_variation(&ent, &DiscreteMeasure::uniform(l), None).unwrap();
        assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-15));

        let l = line(0.5, 2);
        let pm = EnergySpec::builder(l.clone())
            .internal(InternalDensityKind::power_law(2.0).unwrap())
            .build()
            .unwrap();
        let r = DiscreteMeasure::new(l.clone(), vec![0.25, 0.75]).unwrap();
        let g = first_variation(&pm, &r, None).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-15 && (g[1] - 3.0).abs() < 1e-15);

        let pot = NodePotential::new(&l, vec![0.25, 0.75], 1.0).unwrap();
        let lin = EnergySpec::builder(l.clone()).potential(pot).build().unwrap();
        assert_eq!(first_variation(&lin, &r, None).unwrap(), vec![0.25, 0.75]);

        let d = DiscreteMeasure::dirac(l, 0).unwrap();
        assert!(matches!(first_variation(&ent_on(&d), &d, None), Err(Error::UndefinedGradient(_))));
        assert!(first_variation(&ent_on(&d), &d, Some(DEFAULT_CLAMP)).is_ok());
    }

    fn ent_on(d: &DiscreteMeasure) -> EnergySpec {
        EnergySpec::builder(d.lattice().clone()).internal(InternalDensityKind::Entropy).build().unwrap()
    }

    #[test]
    fn ell_examples() {
        let ent = InternalDensityKind::Entropy;
        assert_eq!(ell(&ent, 4.0).unwrap(), 4.0);
        assert_eq!(ell(&ent, 0.0).unwrap(), 0.0);
        let pm = InternalDensityKind::power_law(2.0).unwrap();
        assert!((ell(&pm, 1.0).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!(ell(&ent, -1.0).is_err());
    }

    #[test]
    fn crowd_feasibility() {
        let l = line(0.5, 2);
        let at_cap = DiscreteMeasure::new(l.clone(), vec![0.5, 0.5]).unwrap();
        assert!(crowd_feasible(&at_cap));
        let eps = DiscreteMeasure::new(l.clone(), vec![0.5 + 0.5e-9, 0.5 - 0.5e-9]).unwrap();
        assert!(crowd_feasible(&eps));
        let l = line(1.0 / 3.0, 3);
        let over = DiscreteMeasure::new(l, vec![1.01 / 3.0, 1.0 / 3.0, 0.99 / 3.0]).unwrap();
        assert!(!crowd_feasible(&over));
    }

    #[test]
    fn spec_validation() {
        let l = line(0.5, 2);
        assert!(EnergySpec::builder(l.clone())
            .crowd(true)
            .internal(InternalDensityKind::Entropy)
            .build()
            .is_err());
        assert!(NodePotential::new(&l, vec![0.0, 1.0], 1.0).is_err());
        assert!(NodePotential::new(&l, vec![0.0, 1.0], 2.0).is_ok());
        assert!(InternalDensityKind::power_law(1.0).is_err());
    }

    #[test]
    fn custom_density_checks_ell() {
        let good = CustomDensity {
            name: "sq".into(),
            f: Arc::new(|s| s * s),
            df: Arc::new(|s| 2.0 * s),
            ell: Arc::new(|s| 2.0 * (2.0 / 3.0) * s.powf(1.5)),
            convex: true,
            superlinear: true,
            strictly_increasing_derivative: true,
            growth: None,
        };
        let kind = InternalDensityKind::custom(good.clone()).unwrap();
        assert!((kind.df_inverse(3.0) - 1.5).abs() < 1e-12);
        let bad = CustomDensity {
            ell: Arc::new(|s| s),
            ..good
        };
        assert!(InternalDensityKind::custom(bad).is_err());
    }

    #[test]
    fn ell_matches_sqrt_f_second_derivative() {
        for kind in [
            InternalDensityKind::Entropy,
            InternalDensityKind::power_law(2.0).unwrap(),
            InternalDensityKind::power_law(3.5).unwrap(),
        ] {
            for &s in &[0.25, 1.0, 4.0] {
                let e = 1e-5 * s;
                let fd = (kind.ell(s + e).unwrap() - kind.ell(s - e).unwrap()) / (2.0 * e);
                let expected = s.sqrt() * kind.d2f(s);
                assert!((fd - expected).abs() / expected < 1e-6, "{} at {s}", kind.name());
            }
        }
    }

    #[test]
    fn df_inverse_roundtrip() {
        for kind in [InternalDensityKind::Entropy, InternalDensityKind::power_law(2.5).unwrap()] {
            for &s in &[0.1, 1.0, 7.0] {
                assert!((kind.df_inverse(kind.df(s)) - s).abs() < 1e-12 * s.max(1.0));
            }
        }
        assert_eq!(InternalDensityKind::power_law(2.0).unwrap().df_inverse(-1.0), 0.0);
    }

    #[test]
    fn interaction_energy_and_gradient() {
        let l = line(0.5, 3);
        let k = InteractionKernel::new(vec![0.0, 1.0], vec![1.0, 0.0]).unwrap();
        let spec = EnergySpec::builder(l.clone()).interaction(k).build().unwrap();
        let r = DiscreteMeasure::new(l, vec![0.2, 0.3, 0.5]).unwrap();
        // W(0)=1, W(0.5)=0.5, W(1)=0
        let w = [[1.0, 0.5, 0.0], [0.5, 1.0, 0.5], [0.0, 0.5, 1.0]];
        let rw = r.weights();
        let brute: f64 = (0..3).flat_map(|x| (0..3).map(move |y| (x, y))).map(|(x, y)| w[x][y] * rw[x] * rw[y]).sum();
        assert!((eval_energy(&spec, &r).unwrap() - brute).abs() < 1e-15);
        let g = first_variation(&spec, &r, None).unwrap();
        for x in 0..3 {
            let expected: f64 = 2.0 * (0..3).map(|y| w[x][y] * rw[y]).sum::<f64>();
            assert!((g[x] - expected).abs() < 1e-15);
        }
    }

    fn kinds() -> impl Strategy<Value = InternalDensityKind> {
        prop_oneof![
            Just(InternalDensityKind::Entropy),
            (1.2f64..4.0).prop_map(|m| InternalDensityKind::PowerLaw { m }),
        ]
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(kind in kinds(), ws in prop::collection::vec(0.1f64..1.0, 4), vs in prop::collection::vec(-1.0f64..1.0, 4)) {
            let l = line(0.5, 4);
            let pot = NodePotential::new(&l, vs, 10.0).unwrap();
            let spec = EnergySpec::builder(l.clone()).internal(kind).potential(pot).build().unwrap();
            let r = DiscreteMeasure::normalized(l, ws).unwrap();
            let g = first_variation(&spec, &r, None).unwrap();
            for z in 0..4 {
                let mut p = r.weights().to_vec();
                let mut m = r.weights().to_vec();
                p[z] += 1e-6;
                m[z] -= 1e-6;
                let fd = (spec.eval_weights(&p) - spec.eval_weights(&m)) / 2e-6;
                prop_assert!((fd - g[z]).abs() <= 1e-5 * g[z].abs().max(1.0), "fd {} vs {}", fd, g[z]);
            }
        }

        #[test]
        fn energy_midpoint_convex(kind in kinds(), a in prop::collection::vec(0.0f64..1.0, 5), b in prop::collection::vec(0.0f64..1.0, 5), t in 0.0f64..1.0) {
            prop_assume!(a.iter().sum::<f64>() > 1e-3 && b.iter().sum::<f64>() > 1e-3);
            let l = line(0.2, 5);
            let spec = EnergySpec::builder(l.clone()).internal(kind).potential_field(&PotentialField::Linear { slope: vec![1.5], offset: 0.0 }).build().unwrap();
            let ra = DiscreteMeasure::normalized(l.clone(), a).unwrap();
            let rb = DiscreteMeasure::normalized(l, b).unwrap();
            let mix: Vec<f64> = ra.weights().iter().zip(rb.weights()).map(|(x, y)| (1.0 - t) * x + t * y).collect();
            let lhs = spec.eval_weights(&mix);
            let rhs = (1.0 - t) * spec.eval_weights(ra.weights()) + t * spec.eval_weights(rb.weights());
            prop_assert!(lhs <= rhs + 1e-12);
        }
    }
}
