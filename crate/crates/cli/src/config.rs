//! JSON experiment configuration.

use std::path::Path;
use std::sync::Arc;

use jko_core::energy::{InteractionKernel, NodePotential};
use jko_core::jko::{DiagnosticsToggles, FwVariant};
use jko_core::measure::discretize_fn;
use jko_core::oracle::PdeKind;
use jko_core::{DiscreteMeasure, EnergySpec, InternalDensityKind, JkoConfig, LatticeSpec, PotentialField, SolverKind};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds test-instance generation; the solvers themselves are deterministic.
    #[serde(default)]
    pub seed: u64,
    pub lattice: LatticeBlock,
    pub energy: EnergyBlock,
    #[serde(default)]
    pub initial: InitialBlock,
    pub jko: JkoBlock,
    #[serde(default)]
    pub diagnostics: DiagnosticsBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToyBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeBlock {
    pub d: usize,
    pub h: f64,
    pub extents: Vec<usize>,
    /// Lower corner of the box; zeros when omitted.
    #[serde(default)]
    pub origin: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyKind {
    None,
    Entropy,
    PowerLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyBlock {
    pub kind: EnergyKind,
    /// Exponent for `power_law`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialBlock>,
    /// Declared `Lip(V)`; required for tabulated potentials.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lip: Option<f64>,
    #[serde(default)]
    pub crowd: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<InteractionBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialBlock {
    Constant {
        value: f64,
    },
    Linear {
        slope: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    QuadraticWell {
        center: Vec<f64>,
        stiffness: f64,
    },
    /// One value per node, row-major.
    Values {
        values: Vec<f64>,
    },
}

impl PotentialBlock {
    pub fn field(&self) -> Option<PotentialField> {
        match self {
            Self::Constant { value } => Some(PotentialField::Constant(*value)),
            Self::Linear { slope, offset } => Some(PotentialField::Linear {
                slope: slope.clone(),
                offset: *offset,
            }),
            Self::QuadraticWell { center, stiffness } => Some(PotentialField::QuadraticWell {
                center: center.clone(),
                stiffness: *stiffness,
            }),
            Self::Values { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionBlock {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialBlock {
    #[default]
    Uniform,
    Dirac {
        node: usize,
    },
    /// Nonnegative weights, normalized to unit mass.
    Weights {
        weights: Vec<f64>,
    },
    /// `Π_a (1 + amplitude cos(π frequency (x_a - lo_a) / L_a))`.
    Cosine {
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
    },
    Gaussian {
        center: Vec<f64>,
        width: f64,
    },
    /// Constant density on the cells whose centres lie in `[lower, upper]`.
    Block {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl InitialBlock {
    /// Continuous profile on the box `[lo, hi]`, for the profiles that have one.
    pub fn profile(&self, lo: &[f64], hi: &[f64]) -> Option<Box<dyn Fn(&[f64]) -> f64 + Send + Sync>> {
        let (lo, hi) = (lo.to_vec(), hi.to_vec());
        match self.clone() {
            Self::Uniform => Some(Box::new(|_| 1.0)),
            Self::Cosine { amplitude, frequency } => Some(Box::new(move |x: &[f64]| {
                x.iter()
                    .enumerate()
                    .map(|(a, &xa)| {
                        1.0 + amplitude * (std::f64::consts::PI * frequency * (xa - lo[a]) / (hi[a] - lo[a])).cos()
                    })
                    .product()
            })),
            Self::Gaussian { center, width } => Some(Box::new(move |x: &[f64]| {
                let r2: f64 = x.iter().zip(&center).map(|(a, b)| (a - b).powi(2)).sum();
                (-r2 / (2.0 * width * width)).exp()
            })),
            Self::Block { lower, upper } => Some(Box::new(move |x: &[f64]| {
                let inside = x.iter().enumerate().all(|(a, &xa)| xa >= lower[a] && xa <= upper[a]);
                if inside {
                    1.0
                } else {
                    0.0
                }
            })),
            Self::Dirac { .. } | Self::Weights { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JkoBlock {
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Final time `T`; then `N = round(T/τ)` and the step becomes `T/N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverKind>,
    #[serde(default)]
    pub fw_variant: FwVariant,
    #[serde(default = "default_gap_tol")]
    pub gap_tol: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
}

fn default_gap_tol() -> f64 {
    1e-8
}

fn default_max_iterations() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsBlock {
    /// `ε` of the time measure in the dissipation ledger.
    pub epsilon: f64,
    /// Quadrature points per step for the ledger.
    pub quadrature: usize,
    pub slope_check: bool,
    pub fisher: bool,
    pub optimality: bool,
    /// Compute the full dissipation ledger after a run (one extra solve per
    /// quadrature point and step).
    pub edi: bool,
}

impl Default for DiagnosticsBlock {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            quadrature: 4,
            slope_check: true,
            fisher: true,
            optimality: true,
            edi: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub directory: String,
    pub format: Format,
    /// Every `snapshot_stride`-th iterate is written (the last one always).
    pub snapshot_stride: usize,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: "out".into(),
            format: Format::Csv,
            snapshot_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyPair {
    pub h: f64,
    pub tau: f64,
}

/// `τ = c h^α` for each listed `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyRule {
    pub c: f64,
    pub alpha: f64,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<StudyPair>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<StudyRule>,
    pub horizon: f64,
    #[serde(default = "default_reference_cells")]
    pub reference_cells: usize,
    #[serde(default = "default_reference_steps")]
    pub reference_steps: usize,
}

fn default_reference_cells() -> usize {
    512
}

fn default_reference_steps() -> usize {
    2000
}

impl StudyBlock {
    /// The refinement path, in declaration order.
    pub fn pairs(&self) -> Vec<StudyPair> {
        match (&self.pairs, &self.rule) {
            (Some(p), _) => p.clone(),
            (None, Some(r)) => r.h.iter().map(|&h| StudyPair { h, tau: r.c * h.powf(r.alpha) }).collect(),
            (None, None) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyBlock {
    pub x0: Vec<f64>,
    pub horizon: f64,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    /// Checks the config and fills every defaulted field, so that the
    /// serialized result echoes exactly what runs.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let l = &mut self.lattice;
        if l.d != l.extents.len() {
            return Err(invalid(format!("lattice.d = {} but {} extents given", l.d, l.extents.len())));
        }
        let origin = l.origin.get_or_insert_with(|| vec![0.0; l.d]);
        if origin.len() != l.d {
            return Err(invalid("lattice.origin must have d entries"));
        }
        let j = &mut self.jko;
        if !(j.tau > 0.0) {
            return Err(invalid(format!("jko.tau must be positive, got {}", j.tau)));
        }
        match (j.steps, j.horizon) {
            (Some(_), Some(_)) | (None, None) => return Err(invalid("give exactly one of jko.steps and jko.horizon")),
            (Some(0), None) => return Err(invalid("jko.steps must be at least 1")),
            (None, Some(t)) => {
                if !(t > 0.0 && t.is_finite()) || !j.tau.is_finite() {
                    return Err(invalid("jko.horizon needs finite positive T and τ"));
                }
                let n = ((t / j.tau).round() as usize).max(1);
                j.steps = Some(n);
                j.tau = t / n as f64;
            }
            (Some(_), None) => {}
        }
        if self.energy.kind == EnergyKind::PowerLaw && self.energy.m.is_none() {
            return Err(invalid("energy.m is required for power_law"));
        }
        if self.energy.kind != EnergyKind::PowerLaw && self.energy.m.is_some() {
            return Err(invalid("energy.m is only meaningful for power_law"));
        }
        if self.output.snapshot_stride == 0 {
            return Err(invalid("output.snapshot_stride must be at least 1"));
        }
        if let Some(s) = &self.study {
            let pairs = s.pairs();
            if s.pairs.is_some() == s.rule.is_some() {
                return Err(invalid("study needs exactly one of pairs and rule"));
            }
            if pairs.is_empty() {
                return Err(invalid("study has no (h, τ) pairs"));
            }
            if pairs.iter().any(|p| !(p.h > 0.0 && p.tau > 0.0 && p.tau.is_finite())) {
                return Err(invalid("study pairs need positive h and finite positive τ"));
            }
            if let Some(r) = &s.rule {
                if r.alpha >= 1.0 {
                    log::warn!("study rule τ = c·h^{}: h/τ does not vanish under refinement", r.alpha);
                }
            }
            if !(s.horizon > 0.0) {
                return Err(invalid("study.horizon must be positive"));
            }
        }
        let spec = self.energy_spec()?;
        self.jko.solver.get_or_insert_with(|| SolverKind::for_spec(&spec));
        if spec.is_crowd() && spec.lattice().volume() <= 1.0 {
            return Err(invalid("infeasible capacity: a crowd domain needs volume above 1"));
        }
        Ok(self)
    }

    pub fn lattice(&self) -> Result<Arc<LatticeSpec>, CliError> {
        self.lattice_with(self.lattice.h, &self.lattice.extents)
    }

    pub fn lattice_with(&self, h: f64, extents: &[usize]) -> Result<Arc<LatticeSpec>, CliError> {
        let origin = self.lattice.origin.clone().unwrap_or_else(|| vec![0.0; extents.len()]);
        let l = jko_core::lattice::build_lattice(self.lattice.d, h, extents, &origin)?;
        Ok(Arc::new(l))
    }

    pub fn internal(&self) -> Result<Option<InternalDensityKind>, CliError> {
        Ok(match self.energy.kind {
            EnergyKind::None => None,
            EnergyKind::Entropy => Some(InternalDensityKind::Entropy),
            EnergyKind::PowerLaw => Some(InternalDensityKind::power_law(self.energy.m.unwrap_or(f64::NAN))?),
        })
    }

    pub fn energy_spec(&self) -> Result<EnergySpec, CliError> {
        self.energy_spec_on(self.lattice()?)
    }

    pub fn energy_spec_on(&self, lattice: Arc<LatticeSpec>) -> Result<EnergySpec, CliError> {
        let e = &self.energy;
        let mut b = EnergySpec::builder(lattice.clone()).crowd(e.crowd);
        if let Some(kind) = self.internal()? {
            b = b.internal(kind);
        }
        if let Some(p) = &e.potential {
            let dims_ok = match p {
                PotentialBlock::Linear { slope, .. } => slope.len() == lattice.dim(),
                PotentialBlock::QuadraticWell { center, .. } => center.len() == lattice.dim(),
                _ => true,
            };
            if !dims_ok {
                return Err(invalid("energy.potential dimension does not match the lattice"));
            }
            let node = match (p.field(), p) {
                (Some(field), _) => match e.lip {
                    Some(lip) => NodePotential::new(&lattice, field.sample(&lattice), lip)?,
                    None => NodePotential::from_field(&lattice, &field),
                },
                (None, PotentialBlock::Values { values }) => {
                    let lip = e.lip.ok_or_else(|| invalid("energy.lip is required for tabulated potentials"))?;
                    NodePotential::new(&lattice, values.clone(), lip)?
                }
                _ => unreachable!(),
            };
            b = b.potential(node);
        }
        if let Some(i) = &e.interaction {
            b = b.interaction(InteractionKernel::new(i.radii.clone(), i.values.clone())?);
        }
        Ok(b.build()?)
    }

    pub fn initial_on(&self, lattice: Arc<LatticeSpec>) -> Result<DiscreteMeasure, CliError> {
        let (lo, hi) = lattice.bounds();
        let m = match &self.initial {
            InitialBlock::Dirac { node } => DiscreteMeasure::dirac(lattice, *node)?,
            InitialBlock::Weights { weights } => DiscreteMeasure::normalized(lattice, weights.clone())?,
            other => {
                let f = other.profile(&lo, &hi).expect("continuous profile");
                discretize_fn(lattice, |x| f(x))?
            }
        };
        Ok(m)
    }

    pub fn jko_config(&self) -> JkoConfig {
        let j = &self.jko;
        let mut cfg = JkoConfig::new(j.tau, j.steps.unwrap_or(0), j.solver.unwrap_or(SolverKind::FrankWolfe));
        cfg.fw_variant = j.fw_variant;
        cfg.gap_tol = j.gap_tol;
        cfg.max_iterations = j.max_iterations;
        cfg.window = j.window;
        cfg.diagnostics = DiagnosticsToggles {
            fisher: self.diagnostics.fisher,
            optimality: self.diagnostics.optimality,
            slope_check: self.diagnostics.slope_check,
        };
        cfg
    }

    /// PDE matching the energy, for the reference solver.
    pub fn pde_kind(&self) -> Result<PdeKind, CliError> {
        if self.energy.crowd || self.energy.interaction.is_some() {
            return Err(invalid("the reference solver covers diffusion and transport energies only"));
        }
        Ok(match self.energy.kind {
            EnergyKind::None => PdeKind::Transport,
            EnergyKind::Entropy => PdeKind::FokkerPlanck,
            EnergyKind::PowerLaw => PdeKind::PorousMedium {
                m: self.energy.m.unwrap_or(f64::NAN),
            },
        })
    }

    pub fn potential_field(&self) -> Option<PotentialField> {
        match &self.energy.potential {
            None => Some(PotentialField::Constant(0.0)),
            Some(p) => p.field(),
        }
    }
}
