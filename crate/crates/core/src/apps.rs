//! Ready-made one-dimensional boundary applications.
//!
//! Two desk-scale models are assembled from the library building blocks:
//!
//! * **Impedance wave**: the second-order wave equation on an interval,
//!   rewritten in the first-order state `(u, q)` with `q` the integrated
//!   strain flux.  The material law is the identity and the whole model lives
//!   in the unbounded part, a [`BoundaryOperator`] whose endpoint law is a
//!   convolution impedance `q·N = s(∂₀) τu` with symbol `s(δ) = δ·a(1/δ)`.
//!   The impedance direction is realized through a smooth continuation of the
//!   outward normal, `n(x) = (2x − L)/L`, so one scalar coefficient list
//!   serves both endpoints with the correct orientation.
//! * **Visco-elastic friction**: a Kelvin–Voigt bar `ρ∂₀²u − ∂(C∂u + D∂∂₀u)`
//!   in the state `(v, σ) = (∂₀u, −T)`.  Eliminating the stress turns the
//!   constitutive pair into the rational material law
//!   `M(z) = diag(ρ, z/(zC + D))`, and the endpoints obey the set-valued dry
//!   friction law `(τv, σ·N) ∈ ∂(μ|·|)`.
//!
//! Builders validate the configuration, run the model-specific hypothesis
//! checks *before* constructing the evolutionary problem (so a sign error in
//! the impedance surfaces as a hypothesis failure with a witness, not as a
//! shape error), and return an [`AppProblem`] bundling the problem, the
//! forcing, and all reports.  [`postprocess`] turns a solved state back into
//! physical time series: displacement, velocity, stress/flux, endpoint
//! traces, and the mechanical energy, together with model-specific
//! consistency measures (stress cross-check, stick–slip complementarity,
//! energy regression after the load ends).

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryLaw, BoundaryLawRelation, BoundaryOperator, StaggeredPair};
use crate::error::{CoreError, Result};
use crate::linalg::LinOp;
use crate::material::{MaterialExpr, MaterialLaw};
use crate::monotone::{check_monotonicity, CheckOptions, MonotonicityReport, Relation};
use crate::solver::EvoProblem;
use crate::time::{Signal, TimeGrid};

/// Largest tolerated wrap-around factor of the exponential window on the
/// padded circle before a non-time-local law must be refused.
pub const WRAP_GATE: f64 = 1e-6;

/// Relative threshold for the boundary dissipation sampler: the normalized
/// quadratic form may dip this far below zero before the model is rejected.
pub const DISSIPATION_TOL: f64 = 1e-3;

/// Random probes drawn by the dissipation sampler (deterministic
/// boundary-concentrated probes are always added on top).
pub const DISSIPATION_SAMPLES: usize = 24;

/// Relative margin under the friction threshold below which an endpoint is
/// classified as stuck.
pub const STICK_GATE_MARGIN: f64 = 1e-3;

/// A stuck endpoint must have trace speed below this fraction of the overall
/// speed scale.
pub const STICK_SPEED_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Forcing profiles
// ---------------------------------------------------------------------------

/// Space-time load profiles shared by both applications.
///
/// All profiles are real-valued.  `Pulse` is a separable Gaussian in space
/// and time; `Ramp` rises linearly to a plateau with a half-sine spatial
/// shape; `Tone` drives the same spatial shape periodically.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingSpec {
    Zero,
    Pulse {
        amplitude: f64,
        center_time: f64,
        width_time: f64,
        center_x: f64,
        width_x: f64,
    },
    Ramp {
        amplitude: f64,
        rise_time: f64,
    },
    Tone {
        amplitude: f64,
        frequency: f64,
    },
}

impl ForcingSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(CoreError::InvalidConfig(msg.into()));
        match self {
            ForcingSpec::Zero => Ok(()),
            ForcingSpec::Pulse {
                amplitude,
                center_time,
                width_time,
                center_x,
                width_x,
            } => {
                if !(amplitude.is_finite() && center_time.is_finite() && center_x.is_finite()) {
                    return bad("pulse parameters must be finite");
                }
                if !(*width_time > 0.0 && *width_x > 0.0) {
                    return bad("pulse widths must be positive");
                }
                Ok(())
            }
            ForcingSpec::Ramp {
                amplitude,
                rise_time,
            } => {
                if !amplitude.is_finite() {
                    return bad("ramp amplitude must be finite");
                }
                if !(*rise_time > 0.0) {
                    return bad("ramp rise time must be positive");
                }
                Ok(())
            }
            ForcingSpec::Tone {
                amplitude,
                frequency,
            } => {
                if !(amplitude.is_finite() && frequency.is_finite() && *frequency >= 0.0) {
                    return bad("tone needs a finite amplitude and a nonnegative frequency");
                }
                Ok(())
            }
        }
    }

    /// Time after which the load is (numerically) gone: `Some(0)` for no
    /// load, the six-sigma tail for a pulse, `None` for persistent profiles.
    pub fn support_end(&self) -> Option<f64> {
        match self {
            ForcingSpec::Zero => Some(0.0),
            ForcingSpec::Pulse {
                center_time,
                width_time,
                ..
            } => Some(center_time + 6.0 * width_time),
            ForcingSpec::Ramp { .. } | ForcingSpec::Tone { .. } => None,
        }
    }

    /// Sample the profile on the given spatial coordinates over the grid.
    pub fn sample_on(&self, grid: &TimeGrid, xs: &[f64], length: f64) -> Signal {
        let dim = xs.len();
        let shape = |x: f64| (std::f64::consts::PI * x / length).sin();
        Signal::from_fn(grid, dim, |_, t| match self {
            ForcingSpec::Zero => DVector::zeros(dim),
            ForcingSpec::Pulse {
                amplitude,
                center_time,
                width_time,
                center_x,
                width_x,
            } => {
                let gt = (-0.5 * ((t - center_time) / width_time).powi(2)).exp();
                DVector::from_fn(dim, |i, _| {
                    let gx = (-0.5 * ((xs[i] - center_x) / width_x).powi(2)).exp();
                    C64::new(amplitude * gt * gx, 0.0)
                })
            }
            ForcingSpec::Ramp {
                amplitude,
                rise_time,
            } => {
                let gt = (t / rise_time).min(1.0);
                DVector::from_fn(dim, |i, _| C64::new(amplitude * gt * shape(xs[i]), 0.0))
            }
            ForcingSpec::Tone {
                amplitude,
                frequency,
            } => {
                let gt = (2.0 * std::f64::consts::PI * frequency * t).sin();
                DVector::from_fn(dim, |i, _| C64::new(amplitude * gt * shape(xs[i]), 0.0))
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Configurations
// ---------------------------------------------------------------------------

fn default_wave_pad() -> u32 {
    2
}

fn default_friction_pad() -> u32 {
    3
}

/// Impedance wave on an interval.
///
/// `alpha` is the leading impedance coefficient; the full coefficient list of
/// the impedance series `a(z) = a_0 + a_1 z + …` can be overridden through
/// `impedance` (default `[0, alpha]`, i.e. a frequency-independent impedance).
/// A negative `alpha` is *not* a configuration error: it parses fine and is
/// then rejected by the dissipation sampler with a quantitative witness.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WaveConfig {
    pub cells: usize,
    pub length: f64,
    pub horizon: f64,
    pub steps: usize,
    pub rate: f64,
    #[serde(default = "default_wave_pad")]
    pub pad: u32,
    pub alpha: f64,
    #[serde(default)]
    pub impedance: Option<Vec<f64>>,
    pub forcing: ForcingSpec,
}

impl WaveConfig {
    pub fn validate(&self) -> Result<()> {
        validate_mesh(self.cells, self.length)?;
        validate_clock(self.steps, self.horizon, self.rate)?;
        if !self.alpha.is_finite() {
            return Err(CoreError::InvalidConfig(
                "impedance coefficient must be finite".into(),
            ));
        }
        if let Some(coeffs) = &self.impedance {
            if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
                return Err(CoreError::InvalidConfig(
                    "impedance coefficient list must be nonempty and finite".into(),
                ));
            }
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

    /// Effective impedance series coefficients.
    pub fn coefficients(&self) -> Vec<f64> {
        self.impedance
            .clone()
            .unwrap_or_else(|| vec![0.0, self.alpha])
    }
}

/// Kelvin–Voigt bar with dry friction at both endpoints.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FrictionConfig {
    pub cells: usize,
    pub length: f64,
    pub horizon: f64,
    pub steps: usize,
    pub rate: f64,
    #[serde(default = "default_friction_pad")]
    pub pad: u32,
    pub density: f64,
    pub elasticity: f64,
    pub viscosity: f64,
    pub friction: f64,
    pub forcing: ForcingSpec,
}

impl FrictionConfig {
    pub fn validate(&self) -> Result<()> {
        validate_mesh(self.cells, self.length)?;
        validate_clock(self.steps, self.horizon, self.rate)?;
        let positive = [
            (self.density, "density"),
            (self.elasticity, "elasticity"),
            (self.viscosity, "viscosity"),
        ];
        for (value, name) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(CoreError::InvalidConfig(format!(
                    "{name} must be positive and finite"
                )));
            }
        }
        if !(self.friction >= 0.0 && self.friction.is_finite()) {
            return Err(CoreError::InvalidConfig(
                "friction threshold must be nonnegative and finite".into(),
            ));
        }
        // The stress elimination divides by (z C + D) along the weighted
        // frequency ball; requiring the rate to clear C/D keeps the rewrite
        // valid with a uniform margin.
        if self.rate <= self.elasticity / self.viscosity {
            return Err(CoreError::InvalidConfig(format!(
                "rate {} must exceed elasticity/viscosity = {}",
                self.rate,
                self.elasticity / self.viscosity
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

fn validate_mesh(cells: usize, length: f64) -> Result<()> {
    if cells < 4 {
        return Err(CoreError::InvalidConfig(
            "at least 4 cells are required for the endpoint stencils".into(),
        ));
    }
    if !(length > 0.0 && length.is_finite()) {
        return Err(CoreError::InvalidConfig(
            "interval length must be positive and finite".into(),
        ));
    }
    Ok(())
}

fn validate_clock(steps: usize, horizon: f64, rate: f64) -> Result<()> {
    if steps < 2 {
        return Err(CoreError::InvalidConfig(
            "at least 2 time steps are required".into(),
        ));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(CoreError::InvalidConfig(
            "horizon must be positive and finite".into(),
        ));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(CoreError::InvalidConfig(
            "weight rate must be positive and finite".into(),
        ));
    }
    Ok(())
}

/// Fraction of the exponential window that survives one trip around the
/// padded circle; spectral resolution of a non-time-local law aliases by at
/// most this relative amount.
pub fn wrap_factor(grid: &TimeGrid) -> f64 {
    let wrap_distance = grid.horizon() * (f64::from(2u32.pow(grid.pad())) - 1.0);
    (-grid.rate() * wrap_distance).exp()
}

// ---------------------------------------------------------------------------
// Built problems and reports
// ---------------------------------------------------------------------------

/// Which model was built, with the physical parameters postprocessing needs.
#[derive(Clone, Debug, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AppModel {
    Wave {
        coefficients: Vec<f64>,
    },
    Friction {
        density: f64,
        elasticity: f64,
        viscosity: f64,
        friction: f64,
    },
}

/// Outcome of the boundary dissipation sampler.
///
/// The sampled quantity is the discrete counterpart of the volume form
/// `Re Σ_k w_k (⟨∂u, p⟩ + ⟨u, div p⟩)` with `p = n(x)·s(∂₀)u` interpolated to
/// midpoints.  By summation by parts it telescopes to the endpoint pairing
/// `Σ τu · n·s(∂₀)τu`, so a law with nonnegative symbol real part and outward
/// orientation keeps it nonnegative up to interpolation error.
#[derive(Clone, Debug, Serialize)]
pub struct DissipationReport {
    /// Worst normalized value of the form over all probes.
    pub min_ratio: f64,
    /// Number of probes (random plus deterministic boundary probes).
    pub samples: usize,
    pub seed: u64,
    pub threshold: f64,
    pub ok: bool,
}

/// Model-level hypothesis reports attached next to the generic structure
/// report of the underlying problem.
#[derive(Clone, Debug, Serialize)]
pub struct AppReports {
    /// Wrap-around factor of the exponential window on the padded circle.
    pub wrap_factor: f64,
    /// Minimal real part of the boundary-law symbol over all frequency bins
    /// (zero for the friction law, whose monotonicity is structural).
    pub law_floor: f64,
    /// The same floor evaluated through the adjoint (conjugate) symbol; the
    /// adjoint trace form shares its real part with the primal one, so this
    /// certifies the adjoint branch of the maximality argument.
    pub adjoint_law_floor: Option<f64>,
    /// Randomized monotonicity sweep of the bare trace relation.
    pub trace_monotonicity: MonotonicityReport,
    /// Volume-form dissipation sampler (impedance models only).
    pub dissipation: Option<DissipationReport>,
}

/// A fully assembled application: evolutionary problem, forcing, mesh, and
/// every report produced on the way.
#[derive(Debug)]
pub struct AppProblem {
    pub problem: EvoProblem,
    pub forcing: Signal,
    pub pair: StaggeredPair,
    pub model: AppModel,
    pub reports: AppReports,
    /// Time after which the load has no support, when known.
    pub forcing_end: Option<f64>,
    /// Hypothesis failures that were downgraded to warnings by a forced
    /// build; empty on a normal build.
    pub gate_failures: Vec<String>,
}

// ---------------------------------------------------------------------------
// Dissipation sampler
// ---------------------------------------------------------------------------

/// Smooth continuation of the outward normal, sampled at `xs`.
fn normal_field(xs: &[f64], length: f64) -> Vec<f64> {
    xs.iter().map(|&x| (2.0 * x - length) / length).collect()
}

/// Apply the impedance time symbol bin-by-bin to every component of `u`.
fn apply_law_symbol(law: &BoundaryLaw, grid: &TimeGrid, u: &Signal, conjugate: bool) -> Signal {
    let mut bins = u.to_bins();
    for (j, bin) in bins.iter_mut().enumerate() {
        let mut s = law.impedance_symbol(grid, j);
        if conjugate {
            s = s.conj();
        }
        *bin *= s;
    }
    Signal::from_bins(grid, u.dim(), &bins)
        .map(|(signal, _)| signal)
        .expect("bin count matches the grid")
}

/// Sample the boundary dissipation form of an impedance law on random and
/// boundary-concentrated probes.
pub fn boundary_dissipation_sample(
    pair: &StaggeredPair,
    grid: &TimeGrid,
    coeffs: &[f64],
    samples: usize,
    seed: u64,
) -> Result<DissipationReport> {
    let law = BoundaryLaw::Impedance {
        coeffs: coeffs.to_vec(),
    };
    law.validate()?;
    let n_nodes = pair.cells() + 1;
    let n_mids = pair.cells();
    let node_xs: Vec<f64> = (0..n_nodes).map(|i| pair.node_x(i)).collect();
    let mid_xs: Vec<f64> = (0..n_mids).map(|j| pair.mid_x(j)).collect();
    let n_mid = normal_field(&mid_xs, pair.length());
    let n_node = normal_field(&node_xs, pair.length());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes: Vec<Signal> = (0..samples)
        .map(|_| Signal::from_fn(grid, n_nodes, |_, _| pair.nodes().random_real_vec(&mut rng, 1.0)))
        .collect();
    // Deterministic probes that concentrate mass where the form lives: the
    // endpoint hats catch a wrong sign at either end alone, the normal and
    // uniform profiles catch a globally flipped orientation.
    let mut hat_left = DVector::zeros(n_nodes);
    hat_left[0] = C64::new(1.0, 0.0);
    let mut hat_right = DVector::zeros(n_nodes);
    hat_right[n_nodes - 1] = C64::new(1.0, 0.0);
    let normal_profile = DVector::from_fn(n_nodes, |i, _| C64::new(n_node[i], 0.0));
    let uniform = DVector::from_element(n_nodes, C64::new(1.0, 0.0));
    for profile in [hat_left, hat_right, normal_profile, uniform] {
        probes.push(Signal::from_fn(grid, n_nodes, |_, t| {
            profile.clone() * C64::new((-t).exp(), 0.0)
        }));
    }

    let mut min_ratio = f64::INFINITY;
    for u in &probes {
        let su = apply_law_symbol(&law, grid, u, false);
        let p = Signal::from_fn(grid, n_mids, |k, _| {
            let suk = su.node(k);
            DVector::from_fn(n_mids, |j, _| {
                C64::new(n_mid[j], 0.0) * (suk[j] + suk[j + 1]) * 0.5
            })
        });
        let gu = Signal::from_fn(grid, n_mids, |k, _| pair.grad().apply(u.node(k)));
        let dp = Signal::from_fn(grid, n_nodes, |k, _| pair.div().apply(p.node(k)));
        let form = (gu.winner_in(pair.mids(), &p)? + u.winner_in(pair.nodes(), &dp)?).re;
        let scale = gu.wnorm_in(pair.mids()) * p.wnorm_in(pair.mids())
            + u.wnorm_in(pair.nodes()) * dp.wnorm_in(pair.nodes());
        if scale > 1e-300 {
            min_ratio = min_ratio.min(form / scale);
        }
    }
    if !min_ratio.is_finite() {
        return Err(CoreError::DegenerateBasis(
            "dissipation sampler produced no usable probe".into(),
        ));
    }
    Ok(DissipationReport {
        min_ratio,
        samples: probes.len(),
        seed,
        threshold: DISSIPATION_TOL,
        ok: min_ratio >= -DISSIPATION_TOL,
    })
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

fn gate(failures: &mut Vec<String>, force: bool, message: String) -> Result<()> {
    if force {
        failures.push(message);
        Ok(())
    } else {
        Err(CoreError::HypothesisFailed(message))
    }
}

/// Assemble the impedance wave model.
///
/// With `force` set, hypothesis failures are recorded on the returned problem
/// instead of aborting the build; the structure report of the inner problem
/// is still computed.  Hard numerical failures still abort a forced build: a
/// law that is far enough from monotone can make a resolvent singular, and no
/// flag makes that solvable.
pub fn build_wave_impedance(
    cfg: &WaveConfig,
    check: &CheckOptions,
    force: bool,
) -> Result<AppProblem> {
    cfg.validate()?;
    let pair = StaggeredPair::new(cfg.cells, cfg.length)?;
    let grid = cfg.grid()?;
    let coeffs = cfg.coefficients();
    let law = BoundaryLaw::Impedance {
        coeffs: coeffs.clone(),
    };
    law.validate()?;

    let wrap = wrap_factor(&grid);
    if !law.is_time_local() && wrap > WRAP_GATE {
        return Err(CoreError::InvalidConfig(format!(
            "dispersive impedance needs more padding: wrap factor {wrap:.2e} exceeds {WRAP_GATE:.0e}"
        )));
    }

    let mut gate_failures = Vec::new();
    let dissipation =
        boundary_dissipation_sample(&pair, &grid, &coeffs, DISSIPATION_SAMPLES, check.seed)?;
    if !dissipation.ok {
        gate(
            &mut gate_failures,
            force,
            format!(
                "impedance boundary term can pump energy: min dissipation ratio {:.3e} \
                 is below -{:.0e}; the law needs a nonnegative symbol with outward orientation",
                dissipation.min_ratio, DISSIPATION_TOL
            ),
        )?;
    }
    let law_floor = law.monotone_certificate(&grid);
    let adjoint_law_floor = (0..grid.padded_len())
        .map(|j| law.impedance_symbol(&grid, j).conj().re)
        .fold(f64::INFINITY, f64::min);
    if law_floor < -1e-9 {
        gate(
            &mut gate_failures,
            force,
            format!("impedance symbol has negative real part: floor {law_floor:.3e}"),
        )?;
    }

    let trace_monotonicity = check_monotonicity(&BoundaryLawRelation::new(&grid, law.clone())?, check)?;
    let op = BoundaryOperator::new(pair.clone(), &grid, law)?;
    let state = op.space().state().clone();
    let material = MaterialLaw::identity(state);
    let problem = if force {
        EvoProblem::new_unchecked(material, Box::new(op), check)?
    } else {
        EvoProblem::new(material, Box::new(op), check)?
    };
    if force && !problem.structure().ok {
        gate_failures.push(problem.structure().failures());
    }

    let node_xs: Vec<f64> = (0..=cfg.cells).map(|i| pair.node_x(i)).collect();
    let load = cfg.forcing.sample_on(&grid, &node_xs, cfg.length);
    // The first-order rewrite carries the time integral of the load in the
    // displacement slot and nothing in the flux slot.
    let forcing = load
        .integrate()
        .concat_dims(&Signal::zeros(&grid, cfg.cells))?;

    Ok(AppProblem {
        problem,
        forcing,
        pair,
        model: AppModel::Wave {
            coefficients: coeffs,
        },
        reports: AppReports {
            wrap_factor: wrap,
            law_floor,
            adjoint_law_floor: Some(adjoint_law_floor),
            trace_monotonicity,
            dissipation: Some(dissipation),
        },
        forcing_end: cfg.forcing.support_end(),
        gate_failures,
    })
}

/// Assemble the visco-elastic friction model.
pub fn build_viscoelastic_friction(
    cfg: &FrictionConfig,
    check: &CheckOptions,
    force: bool,
) -> Result<AppProblem> {
    cfg.validate()?;
    let pair = StaggeredPair::new(cfg.cells, cfg.length)?;
    let grid = cfg.grid()?;
    let wrap = wrap_factor(&grid);
    // The stress elimination is resolved per frequency bin, so the window
    // must essentially vanish around the padded circle.
    if wrap > WRAP_GATE {
        return Err(CoreError::InvalidConfig(format!(
            "rational material law needs more padding: wrap factor {wrap:.2e} exceeds {WRAP_GATE:.0e}"
        )));
    }
    let law = BoundaryLaw::Friction { mu: cfg.friction };
    law.validate()?;

    let mut gate_failures = Vec::new();
    let trace_monotonicity = check_monotonicity(&BoundaryLawRelation::new(&grid, law.clone())?, check)?;
    if !trace_monotonicity.ok {
        gate(
            &mut gate_failures,
            force,
            format!(
                "friction trace relation failed the monotonicity sweep: min product {:.3e}",
                trace_monotonicity.min_normalized_product
            ),
        )?;
    }

    // State (v, σ): the density acts on the velocity block, the eliminated
    // stress contributes z/(zC + D) on the flux block.
    let state = pair.nodes().product(pair.mids());
    let p0 = LinOp::block_diag(
        &LinOp::identity(pair.nodes()),
        &LinOp::zero(pair.mids(), pair.mids()),
    );
    let p1 = LinOp::block_diag(
        &LinOp::zero(pair.nodes(), pair.nodes()),
        &LinOp::identity(pair.mids()),
    );
    let expr = MaterialExpr::Sum(vec![
        MaterialExpr::Const(p0.scale(C64::new(cfg.density, 0.0))),
        MaterialExpr::Product(vec![
            MaterialExpr::Zmul(Box::new(MaterialExpr::Const(p1.clone()))),
            MaterialExpr::Inverse(Box::new(MaterialExpr::Sum(vec![
                MaterialExpr::Zmul(Box::new(MaterialExpr::Const(
                    p1.scale(C64::new(cfg.elasticity, 0.0)),
                ))),
                MaterialExpr::Const(p1.scale(C64::new(cfg.viscosity, 0.0)).add(&p0)?),
            ]))),
        ]),
    ]);
    let material = MaterialLaw::new(state, expr)?;

    let op = BoundaryOperator::new(pair.clone(), &grid, law)?;
    let problem = if force {
        EvoProblem::new_unchecked(material, Box::new(op), check)?
    } else {
        EvoProblem::new(material, Box::new(op), check)?
    };
    if force && !problem.structure().ok {
        gate_failures.push(problem.structure().failures());
    }

    let node_xs: Vec<f64> = (0..=cfg.cells).map(|i| pair.node_x(i)).collect();
    let load = cfg.forcing.sample_on(&grid, &node_xs, cfg.length);
    let forcing = load.concat_dims(&Signal::zeros(&grid, cfg.cells))?;

    Ok(AppProblem {
        problem,
        forcing,
        pair,
        model: AppModel::Friction {
            density: cfg.density,
            elasticity: cfg.elasticity,
            viscosity: cfg.viscosity,
            friction: cfg.friction,
        },
        reports: AppReports {
            wrap_factor: wrap,
            law_floor: 0.0,
            adjoint_law_floor: None,
            trace_monotonicity,
            dissipation: None,
        },
        forcing_end: cfg.forcing.support_end(),
        gate_failures,
    })
}

// ---------------------------------------------------------------------------
// Postprocessing
// ---------------------------------------------------------------------------

/// Stick–slip complementarity measured on the solved state: wherever the
/// normal flux stays strictly below the friction threshold, the endpoint
/// speed must vanish.
#[derive(Clone, Debug, Serialize)]
pub struct StickSlipReport {
    pub threshold: f64,
    /// Endpoint samples whose |normal flux| is below `threshold·(1 - margin)`.
    pub gated_samples: usize,
    /// Endpoint samples at or above the gate (sliding or borderline).
    pub sliding_samples: usize,
    /// Largest trace speed over the gated samples.
    pub max_stuck_speed: f64,
    /// Overall speed scale (largest node norm of the velocity).
    pub speed_scale: f64,
    pub ok: bool,
}

/// Physical time series and consistency measures recovered from a solution.
pub struct Artifacts {
    /// Node displacement.
    pub displacement: Signal,
    /// Node velocity.
    pub velocity: Signal,
    /// Midpoint flux: integrated strain for the wave, physical stress `T` for
    /// the friction model.
    pub flux: Signal,
    /// Endpoint values of the primary field (2 components).
    pub trace: Signal,
    /// Outward normal flux `(-τ_l, +τ_r)` of the flux block (2 components).
    pub ntrace: Signal,
    /// Mechanical energy per time node.
    pub energy: Vec<f64>,
    /// Relative defect of the recomputed constitutive stress (friction only).
    pub flux_mismatch: Option<f64>,
    /// Stick–slip complementarity (friction only).
    pub stick: Option<StickSlipReport>,
    /// Largest relative energy increase after the load ends, when the load
    /// has a known end.
    pub energy_regression: Option<f64>,
}

fn two_component(grid: &TimeGrid, values: Vec<nalgebra::Vector2<C64>>) -> Signal {
    Signal::from_fn(grid, 2, |k, _| {
        DVector::from_vec(vec![values[k][0], values[k][1]])
    })
}

/// Recover physical fields from a solved state.
pub fn postprocess(app: &AppProblem, state: &Signal) -> Result<Artifacts> {
    let pair = &app.pair;
    let grid = state.grid().clone();
    let n_nodes = pair.cells() + 1;
    if state.dim() != n_nodes + pair.cells() {
        return Err(CoreError::DimensionMismatch(format!(
            "state dimension {} does not match the mesh ({} nodes + {} midpoints)",
            state.dim(),
            n_nodes,
            pair.cells()
        )));
    }
    let (first, second) = state.split_at_dim(n_nodes)?;

    let trace = two_component(
        &grid,
        (0..grid.len())
            .map(|k| pair.node_traces(first.node(k)))
            .collect(),
    );
    let ntrace = two_component(
        &grid,
        (0..grid.len())
            .map(|k| {
                let t = pair.mid_traces(second.node(k));
                nalgebra::Vector2::new(-t[0], t[1])
            })
            .collect(),
    );

    match &app.model {
        AppModel::Wave { .. } => {
            let displacement = first.clone();
            let velocity = first.differentiate();
            let strain = Signal::from_fn(&grid, pair.cells(), |k, _| {
                pair.grad().apply(displacement.node(k))
            });
            let energy: Vec<f64> = (0..grid.len())
                .map(|k| {
                    0.5 * (pair.nodes().norm(velocity.node(k)).powi(2)
                        + pair.mids().norm(strain.node(k)).powi(2))
                })
                .collect();
            let energy_regression = app
                .forcing_end
                .map(|end| energy_regression(&grid, &energy, end));
            Ok(Artifacts {
                displacement,
                velocity,
                flux: second,
                trace,
                ntrace,
                energy,
                flux_mismatch: None,
                stick: None,
                energy_regression,
            })
        }
        AppModel::Friction {
            density,
            elasticity,
            viscosity,
            friction,
        } => {
            let velocity = first.clone();
            let displacement = velocity.integrate();
            // Second block carries σ = −T; report the physical stress.
            let stress = second.scale(C64::new(-1.0, 0.0));
            let recomputed = Signal::from_fn(&grid, pair.cells(), |k, _| {
                pair.grad().apply(displacement.node(k)) * C64::new(*elasticity, 0.0)
                    + pair.grad().apply(velocity.node(k)) * C64::new(*viscosity, 0.0)
            });
            let defect = recomputed.sub(&stress)?.wnorm_in(pair.mids());
            let scale = stress.wnorm_in(pair.mids());
            let flux_mismatch = if scale > 1e-14 {
                defect / scale
            } else {
                defect
            };

            let strain = Signal::from_fn(&grid, pair.cells(), |k, _| {
                pair.grad().apply(displacement.node(k))
            });
            let energy: Vec<f64> = (0..grid.len())
                .map(|k| {
                    0.5 * (density * pair.nodes().norm(velocity.node(k)).powi(2)
                        + elasticity * pair.mids().norm(strain.node(k)).powi(2))
                })
                .collect();

            // The friction law pairs the trace speed with the outward flux of
            // σ = −T, which is exactly the `ntrace` series.
            let speed_scale = (0..grid.len())
                .map(|k| pair.nodes().norm(velocity.node(k)))
                .fold(0.0, f64::max);
            let gate_level = friction * (1.0 - STICK_GATE_MARGIN);
            let mut gated_samples = 0;
            let mut sliding_samples = 0;
            let mut max_stuck_speed: f64 = 0.0;
            for k in 0..grid.len() {
                let fluxes = ntrace.node(k);
                let speeds = trace.node(k);
                for end in 0..2 {
                    if fluxes[end].norm() < gate_level {
                        gated_samples += 1;
                        max_stuck_speed = max_stuck_speed.max(speeds[end].norm());
                    } else {
                        sliding_samples += 1;
                    }
                }
            }
            let stick = StickSlipReport {
                threshold: *friction,
                gated_samples,
                sliding_samples,
                max_stuck_speed,
                speed_scale,
                ok: max_stuck_speed <= STICK_SPEED_TOL * speed_scale.max(1e-300),
            };
            let energy_regression = app
                .forcing_end
                .map(|end| energy_regression(&grid, &energy, end));
            Ok(Artifacts {
                displacement,
                velocity,
                flux: stress,
                trace,
                ntrace,
                energy,
                flux_mismatch: Some(flux_mismatch),
                stick: Some(stick),
                energy_regression,
            })
        }
    }
}

/// Largest relative energy increase across steps that start after `end`.
fn energy_regression(grid: &TimeGrid, energy: &[f64], end: f64) -> f64 {
    let peak = energy.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let mut worst: f64 = 0.0;
    for k in 1..energy.len() {
        if grid.t(k - 1) >= end {
            worst = worst.max((energy[k] - energy[k - 1]) / peak);
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Demo configurations
// ---------------------------------------------------------------------------

/// Desk-scale impedance wave demo.
pub fn demo_wave_config() -> WaveConfig {
    WaveConfig {
        cells: 32,
        length: 1.0,
        horizon: 4.0,
        steps: 128,
        rate: 1.0,
        pad: 2,
        alpha: 0.8,
        impedance: None,
        forcing: ForcingSpec::Pulse {
            amplitude: 1.0,
            center_time: 0.5,
            width_time: 0.1,
            center_x: 0.35,
            width_x: 0.08,
        },
    }
}

/// Desk-scale visco-elastic friction demo.
pub fn demo_friction_config() -> FrictionConfig {
    FrictionConfig {
        cells: 32,
        length: 1.0,
        horizon: 4.0,
        steps: 128,
        rate: 1.0,
        pad: 3,
        density: 1.0,
        elasticity: 1.0,
        viscosity: 10.0,
        friction: 0.3,
        forcing: ForcingSpec::Pulse {
            amplitude: 5.0,
            center_time: 0.6,
            width_time: 0.15,
            center_x: 0.5,
            width_x: 0.12,
        },
    }
}
