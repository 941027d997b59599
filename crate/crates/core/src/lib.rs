//! Numerical core for evolutionary inclusions on exponentially weighted
//! time grids.
//!
//! The crate discretizes problems of the form
//! `(u, f) in d/dt M(d/dt^{-1}) + A` where `M` is an analytic operator-valued
//! material law and `A` is a (possibly set-valued) maximal monotone relation.
//! Modules build up in layers:
//!
//! - [`linalg`]: dense complex operators between metric-weighted spaces;
//! - [`time`]: the causal weighted time grid, discrete calculus and the
//!   frequency transform adapted to the exponential weight;
//! - [`material`]: material-law expression trees, their positivity
//!   certificates and the linear time-evolution solver;
//! - [`monotone`]: monotone relations, resolvents, Yosida approximations and
//!   structure checks;
//! - [`boundary`]: staggered one-dimensional spatial pairs, boundary data
//!   spaces and boundary-coupled monotone operators;
//! - [`solver`]: the nonlinear evolutionary solver (splitting schemes over
//!   the linear material solve);
//! - [`apps`]: ready-made boundary applications (impedance wave,
//!   visco-elastic friction);
//! - [`runner`]: configuration files, deterministic run artifacts and the
//!   verification pipeline used by the command-line front end.

pub mod apps;
pub mod boundary;
pub mod error;
pub mod linalg;
pub mod material;
pub mod monotone;
pub mod runner;
pub mod solver;
pub mod time;

pub use apps::{
    build_viscoelastic_friction, build_wave_impedance, postprocess, AppModel, AppProblem,
    Artifacts, ForcingSpec, FrictionConfig, WaveConfig,
};
pub use boundary::{BdBasis, BoundaryLaw, BoundaryOperator, StaggeredPair};
pub use error::{CoreError, Result};
pub use linalg::{Factorized, LinOp, Metric, StateSpace};
pub use material::{Applied, MaterialExpr, MaterialLaw};
pub use monotone::{
    HilbertSpace, Relation, SandwichOptions, SandwichPath, SandwichRelation, SignalSpace,
};
pub use runner::{
    cmd_check, cmd_solve, cmd_verify, load_config, run_id, BuiltProblem, ProblemConfig, RunConfig,
    RunOutcome,
};
pub use solver::{
    causality_check, lipschitz_check, solve, Backend, CausalityReport, Diagnostics, EvoProblem,
    LipschitzReport, Solution, SolveOptions, StructureReport,
};
pub use time::{Signal, TimeGrid};
