//! Deterministic run pipeline shared by the command-line front end.
//!
//! A [`RunConfig`] names a problem (one of the shipped applications or a
//! custom material-law/relation pair), solver options, a seed, and an output
//! directory.  Every command materializes a run directory
//! `<output_dir>/<run-id>/` whose name is a hash of the full configuration,
//! copies the canonical configuration and metadata into it, and then writes
//! its own artifacts:
//!
//! * `check`  — `reports.json` with every hypothesis report and witness;
//! * `solve`  — `solution.csv`, `diagnostics.json`, `reports.json`, plus the
//!   physical time series for application problems;
//! * `verify` — everything `solve` writes plus `verify.json` with the
//!   Lipschitz and causality checks on seeded perturbations.
//!
//! All randomness is seeded from the configuration, JSON maps are ordered,
//! and floats are written in shortest exact form, so a run is byte-for-byte
//! reproducible: identical configuration and seed give identical artifacts.
//! The `EVO_THREADS` environment variable caps the worker pool.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::apps::{
    boundary_dissipation_sample, build_viscoelastic_friction, build_wave_impedance,
    demo_friction_config, demo_wave_config, postprocess, AppProblem, Artifacts, ForcingSpec,
    FrictionConfig, WaveConfig, DISSIPATION_SAMPLES,
};
use crate::boundary::{BoundaryLaw, StaggeredPair};
use crate::error::{CoreError, Result};
use crate::linalg::StateSpace;
use crate::material::MaterialConfig;
use crate::monotone::{
    AbsSubdiff, CheckOptions, ClampNormalCone, HilbertSpace, PointwiseLift, Relation, SignalSpace,
    ZeroRelation,
};
use crate::solver::{
    causality_check, lipschitz_check, solve, Backend, CausalityReport, EvoProblem,
    LipschitzReport, Solution, SolveOptions,
};
use crate::time::{Signal, TimeGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default causality tolerance used by `verify`.
pub const CAUSALITY_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Set-valued relations available to custom problems.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RelationConfig {
    /// `A = 0`: the inclusion degenerates to the linear material problem.
    Zero,
    /// Normal cone of the box `{lo <= Re x_i <= hi, Im x_i = 0}`, applied at
    /// every time node.
    Clamp { lo: f64, hi: f64 },
    /// Subdifferential of `mu * sum_i |x_i|`, applied at every time node.
    AbsShrink { mu: f64 },
}

/// A bare problem: material law plus relation on a flat state space.
///
/// The forcing profile is sampled as if the `dim` components sat on an
/// equispaced unit interval; for genuinely spatial models use the shipped
/// applications instead.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomConfig {
    pub dim: usize,
    pub steps: usize,
    pub horizon: f64,
    pub rate: f64,
    #[serde(default = "default_custom_pad")]
    pub pad: u32,
    pub material: MaterialConfig,
    pub relation: RelationConfig,
    #[serde(default = "default_forcing")]
    pub forcing: ForcingSpec,
}

fn default_custom_pad() -> u32 {
    2
}

fn default_forcing() -> ForcingSpec {
    ForcingSpec::Zero
}

impl CustomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(CoreError::InvalidConfig(
                "custom problem needs at least one state component".into(),
            ));
        }
        if self.steps < 2 {
            return Err(CoreError::InvalidConfig(
                "at least 2 time steps are required".into(),
            ));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(CoreError::InvalidConfig(
                "horizon must be positive and finite".into(),
            ));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(CoreError::InvalidConfig(
                "weight rate must be positive and finite".into(),
            ));
        }
        if self.material.dim != self.dim {
            return Err(CoreError::InvalidConfig(format!(
                "material config dim {} differs from problem dim {}",
                self.material.dim, self.dim
            )));
        }
        self.forcing.validate()
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(
            self.steps,
            self.horizon / self.steps as f64,
            self.rate,
            self.pad,
        )
    }
}

/// Which problem a run solves.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    Wave(WaveConfig),
    Friction(FrictionConfig),
    Custom(CustomConfig),
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProblemConfig::Wave(c) => c.validate(),
            ProblemConfig::Friction(c) => c.validate(),
            ProblemConfig::Custom(c) => c.validate(),
        }
    }
}

fn default_seed() -> u64 {
    0x5eed
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Complete description of a reproducible run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.solver.validate()
    }

    fn check_options(&self) -> CheckOptions {
        CheckOptions {
            seed: self.seed,
            ..CheckOptions::default()
        }
    }
}

/// Parse and validate a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: RunConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Built-in demo configurations (also shipped under `configs/`).
pub fn demo_run_config(wave: bool) -> RunConfig {
    RunConfig {
        problem: if wave {
            ProblemConfig::Wave(demo_wave_config())
        } else {
            ProblemConfig::Friction(demo_friction_config())
        },
        solver: SolveOptions {
            backend: Backend::Dr,
            ..SolveOptions::default()
        },
        seed: default_seed(),
        output_dir: default_output_dir(),
    }
}

// ---------------------------------------------------------------------------
// Run identity and directories
// ---------------------------------------------------------------------------

/// Hash of the canonical configuration serialization; names the run
/// directory, so identical configurations land in identical places.
pub fn run_id(cfg: &RunConfig) -> Result<String> {
    let blob = serde_json::to_string(cfg)?;
    let mut hasher = DefaultHasher::new();
    blob.hash(&mut hasher);
    Ok(format!("{:016x}", hasher.finish()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Create the run directory and drop the reproducibility metadata into it.
pub fn prepare_run_dir(cfg: &RunConfig) -> Result<(PathBuf, String)> {
    let id = run_id(cfg)?;
    let dir = cfg.output_dir.join(&id);
    std::fs::create_dir_all(&dir)?;
    write_json(&dir.join("config.json"), &serde_json::to_value(cfg)?)?;
    write_json(
        &dir.join("meta.json"),
        &json!({
            "run_id": id,
            "seed": cfg.seed,
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )?;
    Ok((dir, id))
}

/// Run `f` under the `EVO_THREADS` worker cap when the variable is set.
pub fn with_thread_cap<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let cap = std::env::var("EVO_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1);
    match cap {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

// ---------------------------------------------------------------------------
// Problem assembly
// ---------------------------------------------------------------------------

/// A built problem: either a full application or a bare custom pair.
pub enum BuiltProblem {
    App(Box<AppProblem>),
    Bare {
        problem: EvoProblem,
        forcing: Signal,
        gate_failures: Vec<String>,
    },
}

impl BuiltProblem {
    pub fn problem(&self) -> &EvoProblem {
        match self {
            BuiltProblem::App(app) => &app.problem,
            BuiltProblem::Bare { problem, .. } => problem,
        }
    }

    pub fn forcing(&self) -> &Signal {
        match self {
            BuiltProblem::App(app) => &app.forcing,
            BuiltProblem::Bare { forcing, .. } => forcing,
        }
    }

    pub fn gate_failures(&self) -> &[String] {
        match self {
            BuiltProblem::App(app) => &app.gate_failures,
            BuiltProblem::Bare { gate_failures, .. } => gate_failures,
        }
    }

    pub fn app(&self) -> Option<&AppProblem> {
        match self {
            BuiltProblem::App(app) => Some(app),
            BuiltProblem::Bare { .. } => None,
        }
    }

    /// Everything `reports.json` should carry.
    pub fn reports_value(&self) -> serde_json::Value {
        match self {
            BuiltProblem::App(app) => json!({
                "structure": app.problem.structure(),
                "model": app.model,
                "app": app.reports,
                "gate_failures": app.gate_failures,
            }),
            BuiltProblem::Bare {
                problem,
                gate_failures,
                ..
            } => json!({
                "structure": problem.structure(),
                "gate_failures": gate_failures,
            }),
        }
    }

    /// Whether every certificate passed.
    pub fn certified(&self) -> bool {
        self.gate_failures().is_empty() && self.problem().structure().ok
    }
}

/// Assemble the configured problem, running all hypothesis checks.
pub fn build_problem(cfg: &RunConfig, force: bool) -> Result<BuiltProblem> {
    cfg.validate()?;
    let check = cfg.check_options();
    match &cfg.problem {
        ProblemConfig::Wave(c) => Ok(BuiltProblem::App(Box::new(build_wave_impedance(
            c, &check, force,
        )?))),
        ProblemConfig::Friction(c) => Ok(BuiltProblem::App(Box::new(
            build_viscoelastic_friction(c, &check, force)?,
        ))),
        ProblemConfig::Custom(c) => {
            let grid = c.grid()?;
            let state = StateSpace::standard(c.dim);
            let material = c.material.build(&state)?;
            let relation: Box<dyn Relation<SignalSpace>> = match &c.relation {
                RelationConfig::Zero => Box::new(ZeroRelation::new(SignalSpace::new(
                    grid.clone(),
                    state.clone(),
                ))),
                RelationConfig::Clamp { lo, hi } => Box::new(PointwiseLift::new(
                    &grid,
                    ClampNormalCone::new(state.clone(), *lo, *hi)?,
                )),
                RelationConfig::AbsShrink { mu } => Box::new(PointwiseLift::new(
                    &grid,
                    AbsSubdiff::new(state.clone(), *mu)?,
                )),
            };
            let problem = if force {
                EvoProblem::new_unchecked(material, relation, &check)?
            } else {
                EvoProblem::new(material, relation, &check)?
            };
            let mut gate_failures = Vec::new();
            if force && !problem.structure().ok {
                gate_failures.push(problem.structure().failures());
            }
            let xs: Vec<f64> = if c.dim == 1 {
                vec![0.5]
            } else {
                (0..c.dim)
                    .map(|i| i as f64 / (c.dim - 1) as f64)
                    .collect()
            };
            let forcing = c.forcing.sample_on(&grid, &xs, 1.0);
            Ok(BuiltProblem::Bare {
                problem,
                forcing,
                gate_failures,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// What a command produced, for the front end to print and exit on.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub run_id: String,
    pub passed: bool,
    pub summary: String,
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Cheap model-level reports that never need a resolvent, available even for
/// configurations whose full build aborts.
fn precheck_value(cfg: &RunConfig) -> Result<serde_json::Value> {
    match &cfg.problem {
        ProblemConfig::Wave(c) => {
            let pair = StaggeredPair::new(c.cells, c.length)?;
            let grid = c.grid()?;
            let coeffs = c.coefficients();
            let dissipation = boundary_dissipation_sample(
                &pair,
                &grid,
                &coeffs,
                DISSIPATION_SAMPLES,
                cfg.seed,
            )?;
            let law = BoundaryLaw::Impedance { coeffs };
            Ok(json!({
                "dissipation": dissipation,
                "law_floor": law.monotone_certificate(&grid),
            }))
        }
        ProblemConfig::Friction(c) => {
            let grid = c.grid()?;
            let law = BoundaryLaw::Friction { mu: c.friction };
            Ok(json!({ "law_floor": law.monotone_certificate(&grid) }))
        }
        ProblemConfig::Custom(_) => Ok(json!({})),
    }
}

/// Run every hypothesis check and write `reports.json`.
///
/// The build is always forced so that failing certificates produce witnesses
/// instead of an early abort; the outcome still fails when anything failed.
/// Exits through `Err` only on configuration or numerical errors.
pub fn cmd_check(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let (dir, id) = prepare_run_dir(cfg)?;
    let pre = precheck_value(cfg)?;
    match with_thread_cap(|| build_problem(cfg, true)) {
        Ok(built) => {
            let mut reports = built.reports_value();
            reports["precheck"] = pre;
            write_json(&dir.join("reports.json"), &reports)?;
            let structure = built.problem().structure();
            let mut summary = String::new();
            summary.push_str(&format!(
                "symbol floor        {:>12.4e}  {}\n",
                structure.material_symbol.c_hat,
                mark(structure.material_symbol.c_hat > 0.0)
            ));
            summary.push_str(&format!(
                "monotonicity        {:>12.4e}  {}\n",
                structure.monotonicity.min_normalized_product,
                mark(structure.monotonicity.ok)
            ));
            summary.push_str(&format!(
                "resolvent bounds    {:>12.4e}  {}\n",
                structure.resolvents.max_expansion,
                mark(structure.resolvents.ok)
            ));
            summary.push_str(&format!(
                "shift invariance    {:>12.4e}  {}\n",
                structure.time_invariance.max_commutator,
                mark(structure.time_invariance.ok && structure.time_invariance.claimed)
            ));
            summary.push_str(&format!(
                "causal positivity   {:>12.4e}  {}\n",
                structure.causal_positivity.min_prefix_product,
                mark(structure.causal_positivity.ok)
            ));
            if let Some(app) = built.app() {
                if let Some(d) = &app.reports.dissipation {
                    summary.push_str(&format!(
                        "boundary dissipation{:>12.4e}  {}\n",
                        d.min_ratio,
                        mark(d.ok)
                    ));
                }
                summary.push_str(&format!(
                    "law symbol floor    {:>12.4e}  {}\n",
                    app.reports.law_floor,
                    mark(app.reports.law_floor >= -1e-9)
                ));
            }
            for failure in built.gate_failures() {
                summary.push_str(&format!("witness: {failure}\n"));
            }
            let passed = built.certified();
            summary.push_str(&format!("overall: {}\n", mark(passed)));
            Ok(RunOutcome {
                run_dir: dir,
                run_id: id,
                passed,
                summary,
            })
        }
        Err(err) => {
            // Even a forced build can abort (e.g. a singular resolvent of a
            // non-monotone law); record the error and the prechecks.
            write_json(
                &dir.join("reports.json"),
                &json!({ "error": err.to_string(), "precheck": pre }),
            )?;
            let summary = format!("build failed: {err}\nprecheck: {pre}\noverall: FAIL\n");
            Ok(RunOutcome {
                run_dir: dir,
                run_id: id,
                passed: false,
                summary,
            })
        }
    }
}

fn write_artifacts(dir: &Path, artifacts: &Artifacts) -> Result<()> {
    artifacts.displacement.write_csv(&dir.join("displacement.csv"))?;
    artifacts.velocity.write_csv(&dir.join("velocity.csv"))?;
    artifacts.flux.write_csv(&dir.join("flux.csv"))?;
    artifacts.trace.write_csv(&dir.join("trace.csv"))?;
    artifacts.ntrace.write_csv(&dir.join("ntrace.csv"))?;
    let grid = artifacts.displacement.grid();
    let mut energy = String::from("t,energy\n");
    for (k, e) in artifacts.energy.iter().enumerate() {
        energy.push_str(&format!("{},{}\n", grid.t(k), e));
    }
    std::fs::write(dir.join("energy.csv"), energy)?;
    Ok(())
}

fn artifacts_value(artifacts: &Artifacts) -> serde_json::Value {
    json!({
        "flux_mismatch": artifacts.flux_mismatch,
        "stick": artifacts.stick,
        "energy_regression": artifacts.energy_regression,
        "peak_energy": artifacts.energy.iter().cloned().fold(0.0, f64::max),
    })
}

/// Solve the configured problem and write the solution artifacts.
pub fn cmd_solve(cfg: &RunConfig, force: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    let (dir, id) = prepare_run_dir(cfg)?;
    let (built, solution) = with_thread_cap(|| -> Result<(BuiltProblem, Solution)> {
        let built = build_problem(cfg, force)?;
        let solution = solve(built.problem(), built.forcing(), &cfg.solver)?;
        Ok((built, solution))
    })?;
    solution.state.write_csv(&dir.join("solution.csv"))?;
    write_json(
        &dir.join("diagnostics.json"),
        &serde_json::to_value(&solution.diagnostics)?,
    )?;
    let mut reports = built.reports_value();
    let mut summary = format!(
        "path {:?}, {} levels, residual {:.3e}, converged {}\n",
        solution.diagnostics.path,
        solution.diagnostics.levels.len(),
        solution.diagnostics.final_residual,
        solution.diagnostics.converged
    );
    if let Some(app) = built.app() {
        let artifacts = postprocess(app, &solution.state)?;
        write_artifacts(&dir, &artifacts)?;
        reports["artifacts"] = artifacts_value(&artifacts);
        if let Some(m) = artifacts.flux_mismatch {
            summary.push_str(&format!("constitutive stress mismatch {m:.3e}\n"));
        }
        if let Some(s) = &artifacts.stick {
            summary.push_str(&format!(
                "stick-slip: {} stuck / {} sliding samples, max stuck speed {:.3e}  {}\n",
                s.gated_samples,
                s.sliding_samples,
                s.max_stuck_speed,
                mark(s.ok)
            ));
        }
        if let Some(r) = artifacts.energy_regression {
            summary.push_str(&format!("energy regression after load {r:.3e}\n"));
        }
    }
    write_json(&dir.join("reports.json"), &reports)?;
    for failure in built.gate_failures() {
        summary.push_str(&format!("forced past failed gate: {failure}\n"));
    }
    let passed = solution.diagnostics.converged;
    summary.push_str(&format!("overall: {}\n", mark(passed)));
    Ok(RunOutcome {
        run_dir: dir,
        run_id: id,
        passed,
        summary,
    })
}

/// Everything `verify.json` carries.
#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub lipschitz: LipschitzReport,
    pub causality: CausalityReport,
    pub converged: bool,
    pub ok: bool,
}

/// Solve, then confirm the two runtime consequences of well-posedness on
/// seeded perturbations: the solution map is Lipschitz with the certified
/// constant, and forcing changes after a cut time leave the solution before
/// it untouched.
pub fn cmd_verify(cfg: &RunConfig, force: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    let (dir, id) = prepare_run_dir(cfg)?;
    let report = with_thread_cap(|| -> Result<VerifyReport> {
        let built = build_problem(cfg, force)?;
        let problem = built.problem();
        let forcing = built.forcing();
        let space = problem.space();
        let solution = solve(problem, forcing, &cfg.solver)?;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e3779b97f4a7c15);
        let scale = 0.1 * forcing.wnorm_in(space.state()).max(1.0);
        let one = num_complex::Complex64::new(1.0, 0.0);
        let other = space.combine(one, forcing, one, &space.random_elem(&mut rng, scale));
        let lipschitz = lipschitz_check(problem, forcing, &other, &cfg.solver)?;

        let grid = problem.grid();
        let a_index = grid.len() / 2;
        let cut = grid.t(a_index);
        let tail = space.random_elem(&mut rng, scale).map_nodes(|k, v| {
            if grid.t(k) <= cut {
                nalgebra::DVector::zeros(v.len())
            } else {
                v.clone()
            }
        });
        let causality = causality_check(
            problem,
            forcing,
            a_index,
            &tail,
            &cfg.solver,
            CAUSALITY_TOL,
        )?;

        let ok = lipschitz.ok && causality.ok && solution.diagnostics.converged;
        Ok(VerifyReport {
            lipschitz,
            causality,
            converged: solution.diagnostics.converged,
            ok,
        })
    })?;
    write_json(&dir.join("verify.json"), &serde_json::to_value(&report)?)?;
    let summary = format!(
        "lipschitz ratio {:.4e} <= bound {:.4e}  {}\ncausality defect {:.4e} (tol {:.0e})  {}\noverall: {}\n",
        report.lipschitz.ratio,
        report.lipschitz.bound,
        mark(report.lipschitz.ok),
        report.causality.defect,
        CAUSALITY_TOL,
        mark(report.causality.ok),
        mark(report.ok)
    );
    Ok(RunOutcome {
        run_dir: dir,
        run_id: id,
        passed: report.ok,
        summary,
    })
}
