//! The `run`, `convergence-study` and `toy-potential` subcommands.

use std::path::Path;
use std::time::Instant;

use jko_core::diagnostics::{edi_report, EdiLedger};
use jko_core::jko::prox_error_study;
use jko_core::oracle::{cell_averages, fd_reference_1d, FdProblem};
use jko_core::{run_trajectory, DiscreteMeasure, Trajectory};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Format};
use crate::output::{write_json, write_table, Cell, Table};
use crate::CliError;

fn meta(command: &str, cfg: &ExperimentConfig) -> Value {
    json!({ "command": command, "config": cfg })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub steps_requested: usize,
    pub steps_completed: usize,
    pub complete: bool,
    pub failure: Option<String>,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub final_mass: f64,
    pub max_gap: f64,
    pub all_converged: bool,
    pub edi: Option<EdiLedger>,
    pub files: Vec<String>,
}

fn file_names(paths: &[std::path::PathBuf]) -> Vec<String> {
    paths
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect()
}

fn snapshot_table(traj: &Trajectory, stride: usize, crowd: bool) -> Table {
    let l = traj.initial.lattice();
    let d = l.dim();
    let mut cols: Vec<String> = vec!["step".into(), "node".into()];
    cols.extend((0..d).map(|a| format!("i{a}")));
    cols.push("weight".into());
    cols.push("density".into());
    if crowd {
        cols.push("pressure".into());
    }
    let mut t = Table::with_columns("snapshots", cols);
    let last = traj.iterates.len();
    for (k, rho) in traj.measures().enumerate() {
        if k % stride != 0 && k != last {
            continue;
        }
        let u = rho.density();
        let pressure = k.checked_sub(1).and_then(|j| traj.diagnostics[j].pressure.as_ref());
        for z in 0..l.len() {
            let mut row: Vec<Cell> = vec![k.into(), z.into()];
            row.extend(l.multi_index(z).unwrap_or_default().into_iter().map(Cell::from));
            row.push(rho.weights()[z].into());
            row.push(u[z].into());
            if crowd {
                row.push(pressure.map_or(Cell::Empty, |p| p[z].into()));
            }
            t.push(row);
        }
    }
    t
}

fn diagnostics_table(traj: &Trajectory) -> Table {
    let mut t = Table::new(
        "diagnostics",
        &[
            "step",
            "time",
            "energy",
            "w2_squared",
            "speed",
            "fisher",
            "fisher_potential",
            "fisher_crowd",
            "optimality_residual",
            "slope_slack",
            "complementarity",
            "mass_drift",
            "gap",
            "converged",
            "step_dissipation",
            "energy_drop",
            "kinetic",
        ],
    );
    for d in &traj.diagnostics {
        t.push(vec![
            d.step.into(),
            d.time.into(),
            d.energy.into(),
            d.w2_squared.into(),
            d.speed.into(),
            d.fisher.into(),
            d.fisher_potential.into(),
            d.fisher_crowd.into(),
            d.optimality_residual.into(),
            d.slope_slack.into(),
            d.complementarity.into(),
            d.mass_drift.into(),
            d.gap.into(),
            d.converged.into(),
            d.step_dissipation.into(),
            d.energy_drop.into(),
            d.kinetic.into(),
        ]);
    }
    t
}

/// Runs a trajectory and writes snapshots, diagnostics and `summary.json`.
/// A solver failure mid-run still writes everything computed so far and then
/// reports [`CliError::Solver`].
pub fn run(cfg: &ExperimentConfig, out: &Path, format: Format) -> Result<RunSummary, CliError> {
    let lattice = cfg.lattice()?;
    let spec = cfg.energy_spec_on(lattice.clone())?;
    let rho0 = cfg.initial_on(lattice)?;
    let jcfg = cfg.jko_config();
    let traj = run_trajectory(&rho0, &spec, &jcfg)?;

    let m = meta("run", cfg);
    let mut files = write_table(out, &snapshot_table(&traj, cfg.output.snapshot_stride, spec.is_crowd()), format, &m)?;
    files.extend(write_table(out, &diagnostics_table(&traj), format, &m)?);

    let edi = if cfg.diagnostics.edi && traj.is_complete() && !spec.is_crowd() {
        Some(edi_report(&traj, &spec, cfg.diagnostics.epsilon, cfg.diagnostics.quadrature)?)
    } else {
        None
    };
    let mut names = file_names(&files);
    names.push("summary.json".into());
    let summary = RunSummary {
        command: "run",
        config: cfg.clone(),
        steps_requested: jcfg.steps,
        steps_completed: traj.iterates.len(),
        complete: traj.is_complete(),
        failure: traj.failure.as_ref().map(|e| e.to_string()),
        initial_energy: spec.eval(&traj.initial)?,
        final_energy: spec.eval(traj.last())?,
        final_mass: traj.last().total_mass(),
        max_gap: traj.diagnostics.iter().map(|d| d.gap).fold(0.0, f64::max),
        all_converged: traj.diagnostics.iter().all(|d| d.converged),
        edi,
        files: names,
    };
    write_json(&out.join("summary.json"), &summary)?;
    match &traj.failure {
        Some(e) => Err(CliError::Solver(format!(
            "step {} of {} failed: {e}",
            traj.iterates.len() + 1,
            jcfg.steps
        ))),
        None => Ok(summary),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub h: f64,
    pub tau: f64,
    pub h_over_tau: f64,
    pub steps: usize,
    pub error: f64,
    /// Pure potential energy with `h/τ > 2 Lip(V)`: no atom can move.
    pub frozen: bool,
    pub runtime: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudySummary {
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub rows: usize,
    /// Errors non-increasing along the refinement path.
    pub monotone: bool,
    pub reference_mass_error: f64,
    pub reference_steady_residual: f64,
    pub files: Vec<String>,
}

/// `L¹` error of `ρ_N` against a fine implicit finite-volume reference at the
/// horizon, one row per `(h, τ)` pair. Rows run in parallel.
pub fn convergence_study(cfg: &ExperimentConfig, out: &Path, format: Format) -> Result<(StudySummary, Vec<StudyRow>), CliError> {
    let study = cfg
        .study
        .as_ref()
        .ok_or_else(|| CliError::Validation("convergence-study needs a study block".into()))?;
    if cfg.lattice.d != 1 {
        return Err(CliError::Validation("convergence-study runs on one-dimensional lattices".into()));
    }
    let kind = cfg.pde_kind()?;
    let potential = cfg
        .potential_field()
        .ok_or_else(|| CliError::Validation("convergence-study needs an analytic potential".into()))?;
    let lo = cfg.lattice.origin.as_ref().map_or(0.0, |o| o[0]);
    let length = cfg.lattice.h * cfg.lattice.extents[0] as f64;
    let hi = lo + length;
    let profile = cfg.initial.profile(&[lo], &[hi]).ok_or_else(|| {
        CliError::Validation("convergence-study needs a continuous initial profile (uniform, cosine, gaussian, block)".into())
    })?;
    let u0 = |x: f64| profile(&[x]);

    let pairs = study.pairs();
    let mut cells = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let n = (length / p.h).round() as usize;
        if n == 0 || (n as f64 * p.h - length).abs() > 1e-9 * length {
            return Err(CliError::Validation(format!("h = {} does not divide the domain length {length}", p.h)));
        }
        if study.reference_cells % n != 0 || study.reference_cells / n < 8 {
            return Err(CliError::Validation(format!(
                "reference_cells = {} must be a multiple of 8·{n}",
                study.reference_cells
            )));
        }
        cells.push(n);
    }

    let problem = FdProblem {
        kind,
        potential,
        lower: lo,
        upper: hi,
        cells: study.reference_cells,
        horizon: study.horizon,
        steps: study.reference_steps,
    };
    let reference = fd_reference_1d(&problem, &cell_averages(lo, hi, study.reference_cells, u0))?;

    let rows: Vec<Result<StudyRow, CliError>> = pairs
        .par_iter()
        .zip(cells.par_iter())
        .map(|(p, &n)| {
            let start = Instant::now();
            let lattice = cfg.lattice_with(p.h, &[n])?;
            let spec = cfg.energy_spec_on(lattice.clone())?;
            let rho0 = DiscreteMeasure::normalized(lattice, cell_averages(lo, hi, n, u0))?;
            let steps = ((study.horizon / p.tau).round() as usize).max(1);
            let tau = study.horizon / steps as f64;
            let mut jcfg = cfg.jko_config();
            jcfg.tau = tau;
            jcfg.steps = steps;
            jcfg.solver = jko_core::SolverKind::for_spec(&spec);
            let traj = run_trajectory(&rho0, &spec, &jcfg)?;
            if let Some(e) = &traj.failure {
                return Err(CliError::Solver(format!("h = {}, τ = {tau}: {e}", p.h)));
            }
            let frozen = spec.internal().is_none() && !spec.has_interaction() && p.h / tau > 2.0 * spec.lipschitz();
            Ok(StudyRow {
                h: p.h,
                tau,
                h_over_tau: p.h / tau,
                steps,
                error: reference.l1_distance(traj.last())?,
                frozen,
                runtime: start.elapsed().as_secs_f64(),
            })
        })
        .collect();
    let rows: Vec<StudyRow> = rows.into_iter().collect::<Result<_, _>>()?;

    let mut t = Table::new("study", &["h", "tau", "h_over_tau", "steps", "error", "frozen", "runtime"]);
    for r in &rows {
        t.push(vec![
            r.h.into(),
            r.tau.into(),
            r.h_over_tau.into(),
            r.steps.into(),
            r.error.into(),
            r.frozen.into(),
            r.runtime.into(),
        ]);
    }
    let files = write_table(out, &t, format, &meta("convergence-study", cfg))?;
    let mut names = file_names(&files);
    names.push("summary.json".into());
    let summary = StudySummary {
        command: "convergence-study",
        config: cfg.clone(),
        rows: rows.len(),
        monotone: rows.windows(2).all(|w| w[1].error <= w[0].error),
        reference_mass_error: reference.mass_error,
        reference_steady_residual: reference.steady_residual,
        files: names,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok((summary, rows))
}

#[derive(Debug, Clone, Serialize)]
pub struct ToySummary {
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub tau: f64,
    pub steps: usize,
    pub max_error: f64,
    pub bound: f64,
    pub within_bound: bool,
    pub files: Vec<String>,
}

/// Grid versus continuous proximal iteration of a single particle.
pub fn toy_potential(cfg: &ExperimentConfig, out: &Path, format: Format) -> Result<ToySummary, CliError> {
    let toy = cfg
        .toy
        .as_ref()
        .ok_or_else(|| CliError::Validation("toy-potential needs a toy block".into()))?;
    let field = cfg
        .potential_field()
        .ok_or_else(|| CliError::Validation("toy-potential needs an analytic potential".into()))?;
    let lattice = cfg.lattice()?;
    let d = lattice.dim();
    if toy.x0.len() != d {
        return Err(CliError::Validation("toy.x0 must have d coordinates".into()));
    }
    let tau = cfg.jko.tau;
    let lip = field.gradient_lipschitz();
    if 2.0 * tau * lip > 1.0 {
        return Err(CliError::Validation(format!(
            "τ = {tau} exceeds 1/(2 Lip ∇V) = {}",
            0.5 / lip
        )));
    }
    let study = prox_error_study(&field, &lattice, tau, toy.horizon, &toy.x0)?;

    let mut cols: Vec<String> = vec!["k".into()];
    cols.extend((0..d).map(|a| format!("exact_{a}")));
    cols.extend((0..d).map(|a| format!("grid_{a}")));
    cols.push("error".into());
    cols.push("bound".into());
    let mut t = Table::with_columns("toy", cols);
    for r in &study.rows {
        let mut row: Vec<Cell> = vec![r.k.into()];
        row.extend(r.exact.iter().map(|&x| Cell::from(x)));
        row.extend(r.grid.iter().map(|&x| Cell::from(x)));
        row.push(r.error.into());
        row.push(study.bound.into());
        t.push(row);
    }
    let files = write_table(out, &t, format, &meta("toy-potential", cfg))?;
    let mut names = file_names(&files);
    names.push("summary.json".into());
    let summary = ToySummary {
        command: "toy-potential",
        config: cfg.clone(),
        tau,
        steps: study.steps,
        max_error: study.max_error,
        bound: study.bound,
        within_bound: study.max_error <= study.bound,
        files: names,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}
