//! Shared fixtures for the acceptance suite: independently coded
//! implicit-Euler steppers for the two applications, a dense monolithic
//! resolvent oracle for the flux-extended boundary operator, synthetic
//! problems exercised by several criteria, and lazily built demo problems
//! that are reused instead of re-solved.

use std::sync::OnceLock;
use std::time::Instant;

use evo_core::apps::{
    build_viscoelastic_friction, build_wave_impedance, AppProblem, FrictionConfig, WaveConfig,
};
use evo_core::linalg::{LinOp, StateSpace};
use evo_core::material::{MaterialExpr, MaterialLaw};
use evo_core::monotone::{
    AbsSubdiff, CheckOptions, ClampNormalCone, HilbertSpace, LinearRelation, PointwiseLift,
    SignalSpace,
};
use evo_core::solver::{solve, Backend, EvoProblem, SolveOptions, Solution};
use evo_core::time::{Signal, TimeGrid};
use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Reporting helpers.
// ---------------------------------------------------------------------------

/// Labelled sub-checks of one criterion; the criterion line is printed before
/// any assertion fires so a failure still reports itself.
pub struct Checks {
    items: Vec<(String, bool)>,
}

impl Checks {
    pub fn new() -> Self {
        Checks { items: Vec::new() }
    }

    pub fn push(&mut self, label: impl Into<String>, ok: bool) {
        self.items.push((label.into(), ok));
    }

    pub fn all(&self) -> bool {
        self.items.iter().all(|(_, ok)| *ok)
    }

    pub fn failures(&self) -> String {
        let bad: Vec<&str> = self
            .items
            .iter()
            .filter(|(_, ok)| !ok)
            .map(|(l, _)| l.as_str())
            .collect();
        if bad.is_empty() {
            "none".into()
        } else {
            bad.join("; ")
        }
    }
}

/// Print the one-line verdict for a criterion and panic afterwards on failure.
pub fn finish_criterion(
    index: usize,
    name: &str,
    checks: &mut Checks,
    detail: &str,
    start: Instant,
    budget_secs: f64,
) {
    let elapsed = start.elapsed().as_secs_f64();
    checks.push(
        format!("runtime {elapsed:.1} s within {budget_secs:.0} s"),
        elapsed <= budget_secs,
    );
    let verdict = if checks.all() { "PASS" } else { "FAIL" };
    println!(
        "criterion {index:02} {name}: {verdict} ({detail}; {elapsed:.1} s / {budget_secs:.0} s)"
    );
    assert!(checks.all(), "criterion {index:02} failed: {}", checks.failures());
}

/// Relative weighted-norm distance measured in the given state metric.
pub fn rel_err_in(a: &Signal, b: &Signal, state: &StateSpace) -> f64 {
    let diff = a.sub(b).expect("signals live on one grid");
    diff.wnorm_in(state) / b.wnorm_in(state).max(1e-30)
}

// ---------------------------------------------------------------------------
// Hand-built difference operators (independent of the library's mesh).
// ---------------------------------------------------------------------------

/// Divergence with explicitly zero endpoint fluxes: interior rows are plain
/// difference quotients, boundary rows balance the half cells.
pub fn zero_flux_div(n: usize, ell: f64) -> DMatrix<C64> {
    let mut d = DMatrix::<C64>::zeros(n + 1, n);
    d[(0, 0)] = C64::new(2.0 / ell, 0.0);
    for i in 1..n {
        d[(i, i)] = C64::new(1.0 / ell, 0.0);
        d[(i, i - 1)] = C64::new(-1.0 / ell, 0.0);
    }
    d[(n, n - 1)] = C64::new(-2.0 / ell, 0.0);
    d
}

/// Forward difference from nodes to cell midpoints.
pub fn forward_grad(n: usize, ell: f64) -> DMatrix<C64> {
    let mut g = DMatrix::<C64>::zeros(n, n + 1);
    for j in 0..n {
        g[(j, j)] = C64::new(-1.0 / ell, 0.0);
        g[(j, j + 1)] = C64::new(1.0 / ell, 0.0);
    }
    g
}

// ---------------------------------------------------------------------------
// Application oracles: one-step implicit Euler marches on the monolithic
// first-order systems, with the boundary fluxes pinned to zero (free ends).
// ---------------------------------------------------------------------------

/// March the impedance-free wave system: per step solve
/// `[[I, h D0], [h G, I]] [u; q] = [u_prev + h F; q_prev]` where `F` is the
/// inclusive cumulative integral of the load and `D0` the zero-flux
/// divergence.  Returns the stacked `(u, q)` trajectory.
pub fn wave_stepper_alpha0(cfg: &WaveConfig) -> Signal {
    assert!(
        cfg.coefficients().iter().all(|&c| c == 0.0),
        "the oracle stepper covers the flux-free wave only"
    );
    let grid = cfg.grid().expect("valid demo grid");
    let n = cfg.cells;
    let ell = cfg.length / n as f64;
    let h = grid.step();
    let node_xs: Vec<f64> = (0..=n).map(|i| i as f64 * ell).collect();
    let load = cfg.forcing.sample_on(&grid, &node_xs, cfg.length);

    let d0 = zero_flux_div(n, ell);
    let g = forward_grad(n, ell);
    let dim = 2 * n + 1;
    let mut sys = DMatrix::<C64>::identity(dim, dim);
    let hc = C64::new(h, 0.0);
    for i in 0..=n {
        for j in 0..n {
            sys[(i, n + 1 + j)] = hc * d0[(i, j)];
        }
    }
    for j in 0..n {
        for i in 0..=n {
            sys[(n + 1 + j, i)] = hc * g[(j, i)];
        }
    }
    let lu = sys.lu();

    let mut u = DVector::<C64>::zeros(n + 1);
    let mut q = DVector::<C64>::zeros(n);
    let mut big_f = DVector::<C64>::zeros(n + 1);
    let mut nodes = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        big_f += load.node(k) * hc;
        let mut rhs = DVector::<C64>::zeros(dim);
        for i in 0..=n {
            rhs[i] = u[i] + hc * big_f[i];
        }
        for j in 0..n {
            rhs[n + 1 + j] = q[j];
        }
        let sol = lu.solve(&rhs).expect("wave step system is regular");
        u = sol.rows(0, n + 1).into_owned();
        q = sol.rows(n + 1, n).into_owned();
        nodes.push(sol);
    }
    Signal::from_nodes(&grid, nodes).expect("oracle trajectory matches the grid")
}

/// March the frictionless Kelvin–Voigt system: per step solve
/// `[rho I - h D0 (h C + D) G] v = h f + rho v_prev + h D0 (C ug_prev)`,
/// update the integrated strain `ug += h G v` and recover the stress block
/// `sigma = -(C ug + D G v)`.  Returns the stacked `(v, sigma)` trajectory.
pub fn friction_stepper_mu0(cfg: &FrictionConfig) -> Signal {
    assert!(
        cfg.friction == 0.0,
        "the oracle stepper covers the frictionless bar only"
    );
    let grid = cfg.grid().expect("valid demo grid");
    let n = cfg.cells;
    let ell = cfg.length / n as f64;
    let h = grid.step();
    let node_xs: Vec<f64> = (0..=n).map(|i| i as f64 * ell).collect();
    let load = cfg.forcing.sample_on(&grid, &node_xs, cfg.length);

    let d0 = zero_flux_div(n, ell);
    let g = forward_grad(n, ell);
    let hc = C64::new(h, 0.0);
    let rho = C64::new(cfg.density, 0.0);
    let c_el = C64::new(cfg.elasticity, 0.0);
    let d_visc = C64::new(cfg.viscosity, 0.0);

    let mut sys = DMatrix::<C64>::identity(n + 1, n + 1) * rho;
    let coupling = &d0 * &g * (hc * (hc * c_el + d_visc));
    sys -= coupling;
    let lu = sys.lu();

    let mut v = DVector::<C64>::zeros(n + 1);
    let mut ug = DVector::<C64>::zeros(n);
    let mut nodes = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let mut rhs = load.node(k) * hc;
        rhs += &v * rho;
        rhs += &d0 * &ug * (hc * c_el);
        v = lu.solve(&rhs).expect("friction step system is regular");
        let w = &g * &v;
        ug += &w * hc;
        let sigma = -(&ug * c_el + &w * d_visc);
        let mut node = DVector::<C64>::zeros(2 * n + 1);
        node.rows_mut(0, n + 1).copy_from(&v);
        node.rows_mut(n + 1, n).copy_from(&sigma);
        nodes.push(node);
    }
    Signal::from_nodes(&grid, nodes).expect("oracle trajectory matches the grid")
}

// ---------------------------------------------------------------------------
// Dense monolithic resolvent oracle for the boundary operator.
// ---------------------------------------------------------------------------

/// Solve `(1 + lambda A)(u, v) = (f, g)` with a linear (or zero) boundary law
/// as one dense per-time-node system in the unknowns `[u; v; phi]`:
///
/// ```text
/// u + lambda * D_F(v; -phi_0, phi_1) = f        (n + 1 rows)
/// v + lambda * G u                   = g        (n rows)
/// phi - alpha * (u_0, u_n)           = 0        (2 rows; phi = 0 without law)
/// ```
///
/// Returns the stacked state and the flux pair per node.
pub fn monolithic_boundary_resolve(
    n: usize,
    length: f64,
    lambda: f64,
    alpha: Option<&Matrix2<C64>>,
    y: &Signal,
) -> (Signal, Signal) {
    assert_eq!(y.dim(), 2 * n + 1, "rhs must stack nodes and midpoints");
    let grid = y.grid().clone();
    let ell = length / n as f64;
    let lam = C64::new(lambda, 0.0);
    let two = C64::new(2.0 / ell, 0.0);
    let one_over = C64::new(1.0 / ell, 0.0);
    let dim = 2 * n + 3;
    let ui = |i: usize| i;
    let vi = |j: usize| n + 1 + j;
    let pi = |e: usize| 2 * n + 1 + e;

    let mut sys = DMatrix::<C64>::zeros(dim, dim);
    for i in 0..=n {
        sys[(ui(i), ui(i))] = C64::new(1.0, 0.0);
    }
    // u + lambda * flux divergence of v with fluxes (-phi_0, phi_1).
    sys[(ui(0), vi(0))] += lam * two;
    sys[(ui(0), pi(0))] += lam * two;
    for i in 1..n {
        sys[(ui(i), vi(i))] += lam * one_over;
        sys[(ui(i), vi(i - 1))] -= lam * one_over;
    }
    sys[(ui(n), vi(n - 1))] -= lam * two;
    sys[(ui(n), pi(1))] += lam * two;
    // v + lambda * forward difference of u.
    for j in 0..n {
        sys[(vi(j), vi(j))] = C64::new(1.0, 0.0);
        sys[(vi(j), ui(j + 1))] += lam * one_over;
        sys[(vi(j), ui(j))] -= lam * one_over;
    }
    // Boundary law rows.
    sys[(pi(0), pi(0))] = C64::new(1.0, 0.0);
    sys[(pi(1), pi(1))] = C64::new(1.0, 0.0);
    if let Some(a) = alpha {
        sys[(pi(0), ui(0))] = -a[(0, 0)];
        sys[(pi(0), ui(n))] = -a[(0, 1)];
        sys[(pi(1), ui(0))] = -a[(1, 0)];
        sys[(pi(1), ui(n))] = -a[(1, 1)];
    }
    let lu = sys.lu();

    let mut states = Vec::with_capacity(grid.len());
    let mut fluxes = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let mut rhs = DVector::<C64>::zeros(dim);
        rhs.rows_mut(0, 2 * n + 1).copy_from(y.node(k));
        let sol = lu.solve(&rhs).expect("monolithic system is regular");
        states.push(sol.rows(0, 2 * n + 1).into_owned());
        fluxes.push(sol.rows(2 * n + 1, 2).into_owned());
    }
    (
        Signal::from_nodes(&grid, states).expect("state matches the grid"),
        Signal::from_nodes(&grid, fluxes).expect("fluxes match the grid"),
    )
}

// ---------------------------------------------------------------------------
// Synthetic problems shared by the well-posedness, causality and
// cross-backend criteria.
// ---------------------------------------------------------------------------

/// A problem together with its forcing and the human-readable tag used in
/// criterion output.
pub struct Synthetic {
    pub tag: &'static str,
    pub problem: EvoProblem,
    pub forcing: Signal,
}

pub fn synth_grid() -> TimeGrid {
    TimeGrid::new(96, 1.0 / 32.0, 1.0, 3).expect("synthetic grid")
}

fn random_real_signal(space: &SignalSpace, seed: u64, scale: f64) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = space.random_elem(&mut rng, scale);
    z.map_nodes(|_, v| v.map(|c| C64::new(c.re, 0.0)))
}

/// `d/dt u + mu * sgn(u) ∋ f`: identity material, shrinkage relation.
pub fn synth_abs() -> &'static Synthetic {
    static CELL: OnceLock<Synthetic> = OnceLock::new();
    CELL.get_or_init(|| {
        let grid = synth_grid();
        let state = StateSpace::standard(2);
        let space = SignalSpace::new(grid.clone(), state.clone());
        let law = MaterialLaw::identity(state.clone());
        let rel = PointwiseLift::new(&grid, AbsSubdiff::new(state, 0.5).expect("abs relation"));
        let problem = EvoProblem::new(law, Box::new(rel), &CheckOptions::default())
            .expect("shrinkage synthetic is certified");
        let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
        let forcing = space.random_elem(&mut rng, 1.0);
        Synthetic {
            tag: "shrinkage",
            problem,
            forcing,
        }
    })
}

/// `d/dt (1 + 0.5 ∂₀⁻¹) u + B u = f` with a monotone matrix `B`: polynomial
/// material, Lipschitz single-valued relation.
pub fn synth_linear() -> &'static Synthetic {
    static CELL: OnceLock<Synthetic> = OnceLock::new();
    CELL.get_or_init(|| {
        let grid = synth_grid();
        let state = StateSpace::standard(2);
        let space = SignalSpace::new(grid.clone(), state.clone());
        let expr = MaterialExpr::Sum(vec![
            MaterialExpr::Const(LinOp::identity(&state)),
            MaterialExpr::Zmul(Box::new(MaterialExpr::Const(
                LinOp::identity(&state).scale(C64::new(0.5, 0.0)),
            ))),
        ]);
        let law = MaterialLaw::new(state.clone(), expr).expect("polynomial material");
        let b = LinOp::from_real(
            state.clone(),
            state.clone(),
            nalgebra::dmatrix![1.0, -0.6; 0.6, 0.5],
        )
        .expect("coupling matrix");
        let rel = PointwiseLift::new(&grid, LinearRelation::new(b).expect("monotone matrix"));
        let problem = EvoProblem::new(law, Box::new(rel), &CheckOptions::default())
            .expect("linear synthetic is certified");
        let mut rng = ChaCha8Rng::seed_from_u64(0xB0B);
        let forcing = space.random_elem(&mut rng, 1.0);
        Synthetic {
            tag: "linear",
            problem,
            forcing,
        }
    })
}

/// `d/dt M(∂₀⁻¹) u + N_[lo,hi](u) ∋ f` with the rational material
/// `M(z) = 1 + z (z + 2)⁻¹`: spectral path, clamped state.
pub fn synth_clamp() -> &'static Synthetic {
    static CELL: OnceLock<Synthetic> = OnceLock::new();
    CELL.get_or_init(|| {
        let grid = synth_grid();
        let state = StateSpace::standard(2);
        let space = SignalSpace::new(grid.clone(), state.clone());
        let id = || MaterialExpr::Const(LinOp::identity(&state));
        let expr = MaterialExpr::Sum(vec![
            id(),
            MaterialExpr::Product(vec![
                MaterialExpr::Zmul(Box::new(id())),
                MaterialExpr::Inverse(Box::new(MaterialExpr::Sum(vec![
                    MaterialExpr::Zmul(Box::new(id())),
                    MaterialExpr::Const(LinOp::identity(&state).scale(C64::new(2.0, 0.0))),
                ]))),
            ]),
        ]);
        let law = MaterialLaw::new(state.clone(), expr).expect("rational material");
        let rel = PointwiseLift::new(
            &grid,
            ClampNormalCone::new(state, -0.8, 0.8).expect("clamp relation"),
        );
        let problem = EvoProblem::new(law, Box::new(rel), &CheckOptions::default())
            .expect("clamp synthetic is certified");
        let forcing = random_real_signal(&space, 0xC1A4, 3.0);
        Synthetic {
            tag: "clamp",
            problem,
            forcing,
        }
    })
}

pub fn all_synthetics() -> [&'static Synthetic; 3] {
    [synth_abs(), synth_linear(), synth_clamp()]
}

// ---------------------------------------------------------------------------
// Demo problems and their reference solutions (built once, reused).
// ---------------------------------------------------------------------------

pub fn dr_opts(tol_outer: f64) -> SolveOptions {
    SolveOptions {
        backend: Backend::Dr,
        tol_outer,
        ..SolveOptions::default()
    }
}

pub fn wave_app() -> &'static AppProblem {
    static CELL: OnceLock<AppProblem> = OnceLock::new();
    CELL.get_or_init(|| {
        build_wave_impedance(
            &evo_core::apps::demo_wave_config(),
            &CheckOptions::default(),
            false,
        )
        .expect("demo wave problem is certified")
    })
}

pub fn friction_app() -> &'static AppProblem {
    static CELL: OnceLock<AppProblem> = OnceLock::new();
    CELL.get_or_init(|| {
        build_viscoelastic_friction(
            &evo_core::apps::demo_friction_config(),
            &CheckOptions::default(),
            false,
        )
        .expect("demo friction problem is certified")
    })
}

/// Demo wave solved tightly once (Douglas–Rachford, relative residual 1e-8).
pub fn wave_solution() -> &'static Solution {
    static CELL: OnceLock<Solution> = OnceLock::new();
    CELL.get_or_init(|| {
        let app = wave_app();
        solve(&app.problem, &app.forcing, &dr_opts(1e-8)).expect("demo wave converges")
    })
}

/// Demo friction solved tightly once (Douglas–Rachford, relative residual 1e-8).
pub fn friction_solution() -> &'static Solution {
    static CELL: OnceLock<Solution> = OnceLock::new();
    CELL.get_or_init(|| {
        let app = friction_app();
        solve(&app.problem, &app.forcing, &dr_opts(1e-8)).expect("demo friction converges")
    })
}
