//! Set-valued monotone relations, their resolvents and structure checks.
//!
//! A relation `A` on a Hilbert space enters the evolution problem through
//! its resolvent `J_l = (I + l A)^{-1}`, which is where all of its
//! structure is certified: monotonicity (sampled through graph pairs drawn
//! from the resolvent), maximality (resolvents defined everywhere and
//! consistent across parameters), the zero pair, time invariance for
//! relations acting on signals, and causal positivity of prefix energies.
//! The checks are sampling-based by design: they are the executable
//! counterpart of the assumptions the solver relies on, and they are wired
//! into problem construction so that violating inputs are rejected with a
//! quantitative report instead of silently producing garbage.

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::{LinOp, Metric, StateSpace};
use crate::material::ConstantConfig;
use crate::time::{Signal, TimeGrid};

/// Relative tolerance for sampled monotonicity products.
pub const MONOTONE_TOL: f64 = 1e-9;
/// Allowed resolvent expansion beyond 1.
pub const EXPANSION_TOL: f64 = 1e-9;
/// Tolerance for the two-parameter resolvent identity.
pub const IDENTITY_TOL: f64 = 1e-8;
/// Tolerance for shift commutation of signal relations.
pub const TIME_INVARIANCE_TOL: f64 = 1e-8;
/// Relative floor for prefix energies of graph pairs.
pub const PREFIX_TOL: f64 = 1e-7;
/// Minimal-section norms above this multiple of `1 + |x|` are unbounded.
pub const SECTION_LIMIT: f64 = 1e8;

/// Finite-dimensional complex Hilbert space abstraction shared by state
/// vectors and time signals.
pub trait HilbertSpace {
    type Elem: Clone;

    fn dim(&self) -> usize;
    /// Conjugate-linear in the first argument.
    fn inner(&self, x: &Self::Elem, y: &Self::Elem) -> C64;
    fn combine(&self, a: C64, x: &Self::Elem, b: C64, y: &Self::Elem) -> Self::Elem;
    fn zero_elem(&self) -> Self::Elem;
    fn random_elem(&self, rng: &mut ChaCha8Rng, scale: f64) -> Self::Elem;

    fn norm(&self, x: &Self::Elem) -> f64 {
        self.inner(x, x).re.max(0.0).sqrt()
    }

    fn sub(&self, x: &Self::Elem, y: &Self::Elem) -> Self::Elem {
        self.combine(C64::new(1.0, 0.0), x, C64::new(-1.0, 0.0), y)
    }

    fn distance(&self, x: &Self::Elem, y: &Self::Elem) -> f64 {
        let d = self.sub(x, y);
        self.norm(&d)
    }
}

impl HilbertSpace for StateSpace {
    type Elem = DVector<C64>;

    fn dim(&self) -> usize {
        StateSpace::dim(self)
    }

    fn inner(&self, x: &Self::Elem, y: &Self::Elem) -> C64 {
        StateSpace::inner(self, x, y)
    }

    fn combine(&self, a: C64, x: &Self::Elem, b: C64, y: &Self::Elem) -> Self::Elem {
        x * a + y * b
    }

    fn zero_elem(&self) -> Self::Elem {
        self.zero_vec()
    }

    fn random_elem(&self, rng: &mut ChaCha8Rng, scale: f64) -> Self::Elem {
        self.random_vec(rng, scale)
    }
}

/// Space of causal signals over a time grid with values in a state space;
/// the inner product combines the time weights with the state metric.
#[derive(Clone, Debug)]
pub struct SignalSpace {
    grid: TimeGrid,
    state: StateSpace,
}

impl SignalSpace {
    pub fn new(grid: TimeGrid, state: StateSpace) -> Self {
        SignalSpace { grid, state }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn state(&self) -> &StateSpace {
        &self.state
    }
}

impl HilbertSpace for SignalSpace {
    type Elem = Signal;

    fn dim(&self) -> usize {
        self.grid.len() * self.state.dim()
    }

    fn inner(&self, x: &Signal, y: &Signal) -> C64 {
        x.winner_in(&self.state, y).expect("signals share the space grid")
    }

    fn combine(&self, a: C64, x: &Signal, b: C64, y: &Signal) -> Signal {
        let mut out = x.scale(a);
        out.axpy(b, y).expect("signals share the space grid");
        out
    }

    fn zero_elem(&self) -> Signal {
        Signal::zeros(&self.grid, self.state.dim())
    }

    fn random_elem(&self, rng: &mut ChaCha8Rng, scale: f64) -> Signal {
        Signal::from_fn(&self.grid, self.state.dim(), |_, _| {
            self.state.random_vec(rng, scale)
        })
    }
}

/// A (possibly set-valued) monotone relation exposed through its resolvent.
pub trait Relation<S: HilbertSpace>: Send + Sync {
    fn space(&self) -> &S;

    /// `J_l(y) = (I + l A)^{-1} y` for `l > 0`.
    fn resolve(&self, lambda: f64, y: &S::Elem) -> Result<S::Elem>;

    /// Single-valued forward application, when the relation has one.
    fn apply_direct(&self, _x: &S::Elem) -> Option<S::Elem> {
        None
    }

    /// Lipschitz constant of the forward application, when known.
    fn lipschitz_direct(&self) -> Option<f64> {
        None
    }

    /// Whether `(0, 0)` belongs to the graph.
    fn contains_zero_pair(&self) -> bool {
        true
    }

    /// Whether the relation claims to commute with causal time shifts
    /// (meaningful for relations on signal spaces).
    fn time_invariant_claimed(&self) -> bool {
        true
    }
}

impl<S: HilbertSpace, R: Relation<S> + ?Sized> Relation<S> for Box<R> {
    fn space(&self) -> &S {
        (**self).space()
    }
    fn resolve(&self, lambda: f64, y: &S::Elem) -> Result<S::Elem> {
        (**self).resolve(lambda, y)
    }
    fn apply_direct(&self, x: &S::Elem) -> Option<S::Elem> {
        (**self).apply_direct(x)
    }
    fn lipschitz_direct(&self) -> Option<f64> {
        (**self).lipschitz_direct()
    }
    fn contains_zero_pair(&self) -> bool {
        (**self).contains_zero_pair()
    }
    fn time_invariant_claimed(&self) -> bool {
        (**self).time_invariant_claimed()
    }
}

/// Yosida approximation `A_l(x) = (x - J_l(x)) / l`.
pub fn yosida<S: HilbertSpace, R: Relation<S> + ?Sized>(
    rel: &R,
    lambda: f64,
    x: &S::Elem,
) -> Result<S::Elem> {
    let j = rel.resolve(lambda, x)?;
    Ok(rel
        .space()
        .combine(C64::new(1.0 / lambda, 0.0), x, C64::new(-1.0 / lambda, 0.0), &j))
}

/// Draw a graph pair `(x, v) in A` through the resolvent at `y`.
pub fn sample_graph_pair<S: HilbertSpace, R: Relation<S> + ?Sized>(
    rel: &R,
    lambda: f64,
    y: &S::Elem,
) -> Result<(S::Elem, S::Elem)> {
    let x = rel.resolve(lambda, y)?;
    let v = rel
        .space()
        .combine(C64::new(1.0 / lambda, 0.0), y, C64::new(-1.0 / lambda, 0.0), &x);
    Ok((x, v))
}

// ---------------------------------------------------------------------------
// Built-in relations.
// ---------------------------------------------------------------------------

/// The zero relation `A = 0` (resolvents are the identity).
pub struct ZeroRelation<S: HilbertSpace> {
    space: S,
}

impl<S: HilbertSpace> ZeroRelation<S> {
    pub fn new(space: S) -> Self {
        ZeroRelation { space }
    }
}

impl<S: HilbertSpace + Send + Sync> Relation<S> for ZeroRelation<S>
where
    S::Elem: Send + Sync,
{
    fn space(&self) -> &S {
        &self.space
    }
    fn resolve(&self, _lambda: f64, y: &S::Elem) -> Result<S::Elem> {
        Ok(y.clone())
    }
    fn apply_direct(&self, _x: &S::Elem) -> Option<S::Elem> {
        Some(self.space.zero_elem())
    }
    fn lipschitz_direct(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// A bounded linear relation `A x = T x`; monotone iff the Hermitian part of
/// `T` is positive semidefinite in the space metric.
pub struct LinearRelation {
    op: LinOp,
    norm: f64,
    cache: std::sync::Mutex<Option<(u64, nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>)>>,
}

impl LinearRelation {
    pub fn new(op: LinOp) -> Result<Self> {
        if !op.dom().same_shape(op.cod()) {
            return Err(CoreError::DimensionMismatch(
                "linear relation requires an endomorphism".into(),
            ));
        }
        let norm = op.norm_est();
        Ok(LinearRelation {
            op,
            norm,
            cache: std::sync::Mutex::new(None),
        })
    }

    pub fn op(&self) -> &LinOp {
        &self.op
    }
}

impl Relation<StateSpace> for LinearRelation {
    fn space(&self) -> &StateSpace {
        self.op.dom()
    }

    fn resolve(&self, lambda: f64, y: &DVector<C64>) -> Result<DVector<C64>> {
        let key = lambda.to_bits();
        let mut guard = self.cache.lock().expect("cache poisoned");
        let stale = !matches!(&*guard, Some((k, _)) if *k == key);
        if stale {
            let d = self.op.dom().dim();
            let mut m = self.op.matrix() * C64::new(lambda, 0.0);
            for i in 0..d {
                m[(i, i)] += C64::new(1.0, 0.0);
            }
            *guard = Some((key, m.lu()));
        }
        let Some((_, lu)) = &*guard else { unreachable!() };
        lu.solve(y).ok_or(CoreError::SingularOperator {
            cond: f64::INFINITY,
            limit: crate::linalg::COND_LIMIT,
        })
    }

    fn apply_direct(&self, x: &DVector<C64>) -> Option<DVector<C64>> {
        Some(self.op.apply(x))
    }

    fn lipschitz_direct(&self) -> Option<f64> {
        Some(self.norm * 1.001)
    }
}

/// Subdifferential of the weighted one-norm `x -> mu * sum_i W_ii |x_i|`.
///
/// With a diagonal metric the functional's weights match the metric weights,
/// so the resolvent is the plain componentwise complex soft threshold
/// `z -> z * max(0, 1 - l*mu/|z|)`.
pub struct AbsSubdiff {
    space: StateSpace,
    mu: f64,
}

impl AbsSubdiff {
    pub fn new(space: StateSpace, mu: f64) -> Result<Self> {
        if matches!(space.metric(), Metric::Dense { .. }) {
            return Err(CoreError::Unsupported(
                "soft-threshold relation needs a diagonal metric".into(),
            ));
        }
        if !(mu >= 0.0) {
            return Err(CoreError::InvalidConfig(format!("mu = {mu} must be >= 0")));
        }
        Ok(AbsSubdiff { space, mu })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
}

/// Componentwise complex soft threshold.
pub fn soft_threshold(z: C64, t: f64) -> C64 {
    let m = z.norm();
    if m <= t {
        C64::new(0.0, 0.0)
    } else {
        z * ((m - t) / m)
    }
}

impl Relation<StateSpace> for AbsSubdiff {
    fn space(&self) -> &StateSpace {
        &self.space
    }

    fn resolve(&self, lambda: f64, y: &DVector<C64>) -> Result<DVector<C64>> {
        Ok(y.map(|z| soft_threshold(z, lambda * self.mu)))
    }
}

/// Normal cone of the box `{x : lo <= Re x_i <= hi, Im x_i = 0}`; the
/// resolvent is the metric projection (componentwise for diagonal metrics).
pub struct ClampNormalCone {
    space: StateSpace,
    lo: f64,
    hi: f64,
}

impl ClampNormalCone {
    pub fn new(space: StateSpace, lo: f64, hi: f64) -> Result<Self> {
        if matches!(space.metric(), Metric::Dense { .. }) {
            return Err(CoreError::Unsupported(
                "clamp relation needs a diagonal metric".into(),
            ));
        }
        if !(lo <= hi) {
            return Err(CoreError::InvalidConfig(format!("empty box [{lo}, {hi}]")));
        }
        Ok(ClampNormalCone { space, lo, hi })
    }
}

impl Relation<StateSpace> for ClampNormalCone {
    fn space(&self) -> &StateSpace {
        &self.space
    }

    fn resolve(&self, _lambda: f64, y: &DVector<C64>) -> Result<DVector<C64>> {
        Ok(y.map(|z| C64::new(z.re.clamp(self.lo, self.hi), 0.0)))
    }

    fn contains_zero_pair(&self) -> bool {
        self.lo <= 0.0 && 0.0 <= self.hi
    }
}

/// Lift of a state relation to signals, applied at every time node.
///
/// The time weights scale both terms of each node's resolvent problem by the
/// same factor, so the lifted resolvent is exactly the node resolvent applied
/// nodewise; the lift is automatically causal and time invariant.
pub struct PointwiseLift<R: Relation<StateSpace>> {
    space: SignalSpace,
    inner: R,
}

impl<R: Relation<StateSpace>> PointwiseLift<R> {
    pub fn new(grid: &TimeGrid, inner: R) -> Self {
        let space = SignalSpace::new(grid.clone(), inner.space().clone());
        PointwiseLift { space, inner }
    }

    pub fn inner(&self) -> &R {
        &self.inner
    }
}

impl<R: Relation<StateSpace>> Relation<SignalSpace> for PointwiseLift<R> {
    fn space(&self) -> &SignalSpace {
        &self.space
    }

    fn resolve(&self, lambda: f64, y: &Signal) -> Result<Signal> {
        let nodes = y
            .nodes()
            .iter()
            .map(|v| self.inner.resolve(lambda, v))
            .collect::<Result<Vec<_>>>()?;
        Signal::from_nodes(y.grid(), nodes)
    }

    fn apply_direct(&self, x: &Signal) -> Option<Signal> {
        let mut nodes = Vec::with_capacity(x.nodes().len());
        for v in x.nodes() {
            nodes.push(self.inner.apply_direct(v)?);
        }
        Signal::from_nodes(x.grid(), nodes).ok()
    }

    fn lipschitz_direct(&self) -> Option<f64> {
        self.inner.lipschitz_direct()
    }

    fn contains_zero_pair(&self) -> bool {
        self.inner.contains_zero_pair()
    }
}

/// Deliberately *non*-time-invariant relation: the identity gated on by time
/// (`A u = u` for `t > T/2`, `A u = 0` before).  Monotone and causal, but
/// shifting a signal across the gate changes the output — the verification
/// pipeline must catch exactly this.
pub struct TimeGateRelation {
    space: SignalSpace,
}

impl TimeGateRelation {
    pub fn new(grid: &TimeGrid, state: StateSpace) -> Self {
        TimeGateRelation {
            space: SignalSpace::new(grid.clone(), state),
        }
    }
}

impl Relation<SignalSpace> for TimeGateRelation {
    fn space(&self) -> &SignalSpace {
        &self.space
    }

    fn resolve(&self, lambda: f64, y: &Signal) -> Result<Signal> {
        let half = self.space.grid.horizon() / 2.0;
        Ok(y.map_nodes(|k, v| {
            if self.space.grid.t(k) > half {
                v / C64::new(1.0 + lambda, 0.0)
            } else {
                v.clone()
            }
        }))
    }

    fn time_invariant_claimed(&self) -> bool {
        false
    }
}

/// Convergence controls for the sandwiched resolvent iteration.
#[derive(Clone, Debug)]
pub struct SandwichOptions {
    /// Cauchy target between consecutive regularization levels (and the
    /// relative equation residual on the direct path).
    pub tol: f64,
    pub max_iter: usize,
    /// Regularization path for set-valued inner relations.
    pub lambda0: f64,
    pub gamma: f64,
    pub lambda_min: f64,
}

impl Default for SandwichOptions {
    fn default() -> Self {
        SandwichOptions {
            tol: 1e-6,
            max_iter: 2_000_000,
            lambda0: 1.0,
            gamma: 0.5,
            lambda_min: 1e-9,
        }
    }
}

/// One completed regularization ladder of [`SandwichRelation::resolve`].
#[derive(Clone, Debug)]
pub struct SandwichPath {
    /// `(lambda, x_lambda)` for every level that ran, coarsest first.
    pub levels: Vec<(f64, DVector<C64>)>,
    /// Norm of `x_lambda - x_lambda'` between consecutive levels.
    pub diffs: Vec<f64>,
    /// Total damped-iteration count spent across levels.
    pub iterations: usize,
}

/// The transported relation `B = S^* T S` for a bounded linear `S` between
/// state spaces and a monotone `T` on the codomain of `S`.
///
/// The resolvent is computed iteratively:
///
/// - single-valued Lipschitz `T`: damped fixed-point iteration on the
///   strongly monotone equation `x + mu S^* T(S x) = y`;
/// - set-valued `T`: the same iteration with `T` replaced by its Yosida
///   approximation (which is `l/|S|^2`-cocoercive after transport) along a
///   decreasing regularization path, warm-starting each level.
///
/// The set-valued path converges to the resolvent of the *regularized*
/// relation at the final level, so its accuracy is `O(lambda_min)` times the
/// local section norm; callers needing tight resolvents should supply inner
/// relations with a direct form.
pub struct SandwichRelation<T: Relation<StateSpace>> {
    outer: StateSpace,
    op: LinOp,
    op_adj: LinOp,
    op_norm: f64,
    inner: T,
    opts: SandwichOptions,
}

impl<T: Relation<StateSpace>> SandwichRelation<T> {
    pub fn new(op: LinOp, inner: T, opts: SandwichOptions) -> Result<Self> {
        if !op.cod().same_shape(inner.space()) {
            return Err(CoreError::DimensionMismatch(
                "sandwich operator codomain must match the inner relation space".into(),
            ));
        }
        let op_adj = op.adjoint();
        let op_norm = op.norm_est() * (1.0 + 1e-3);
        Ok(SandwichRelation {
            outer: op.dom().clone(),
            op,
            op_adj,
            op_norm,
            inner,
            opts,
        })
    }

    /// One damped sweep solving `x + mu * Phi(x) = y` where `Phi` is
    /// `beta`-cocoercive; returns the iterate and the iteration count.
    fn damped_solve(
        &self,
        mu: f64,
        y: &DVector<C64>,
        mut x: DVector<C64>,
        beta: f64,
        tol: f64,
        budget: usize,
        phi: impl Fn(&DVector<C64>) -> Result<DVector<C64>>,
    ) -> Result<(DVector<C64>, usize)> {
        let rho = (1.8 * beta / (2.0 * beta + mu)).min(0.95);
        let scale = self.outer.norm(y).max(1.0);
        let mut last = f64::INFINITY;
        for it in 0..budget {
            let f = phi(&x)?;
            // residual r = x - y + mu * phi(x)
            let mut r = &x - y;
            r.axpy(C64::new(mu, 0.0), &f, C64::new(1.0, 0.0));
            let rn = self.outer.norm(&r);
            if rn <= tol * scale {
                return Ok((x, it));
            }
            last = rn;
            x.axpy(C64::new(-rho, 0.0), &r, C64::new(1.0, 0.0));
        }
        Err(CoreError::NoConvergence {
            what: "sandwiched resolvent".into(),
            residual: last,
            iterations: budget,
        })
    }

    /// Walk the decreasing regularization ladder, warm-starting each level.
    ///
    /// With `early_stop` the walk returns as soon as consecutive levels are
    /// within the Cauchy target `tol`, and exhausting the ladder without
    /// meeting it is a [`CoreError::NoConvergence`] reporting the last level
    /// difference.  Without it the full ladder runs and the path is returned
    /// for diagnostics (regularization-path fits, growth monitoring).
    fn ladder(&self, mu: f64, y: &DVector<C64>, early_stop: bool) -> Result<SandwichPath> {
        let s2 = (self.op_norm * self.op_norm).max(1e-12);
        let scale = self.outer.norm(y).max(1.0);
        let mut x = y.clone();
        let mut prev: Option<DVector<C64>> = None;
        let mut lambda = self.opts.lambda0;
        let mut spent = 0usize;
        let mut levels = Vec::new();
        let mut diffs = Vec::new();
        loop {
            let beta = lambda / s2;
            let level_tol = (0.02 * self.opts.tol).min(0.05 * lambda).max(1e-13);
            let budget = self.opts.max_iter.saturating_sub(spent);
            if budget == 0 {
                return Err(CoreError::NoConvergence {
                    what: "sandwiched resolvent (regularization path)".into(),
                    residual: diffs.last().copied().unwrap_or(f64::INFINITY),
                    iterations: self.opts.max_iter,
                });
            }
            let phi = |x: &DVector<C64>| -> Result<DVector<C64>> {
                let sx = self.op.apply(x);
                let t = yosida(&self.inner, lambda, &sx)?;
                Ok(self.op_adj.apply(&t))
            };
            let (next, used) = self.damped_solve(mu, y, x, beta, level_tol, budget, phi)?;
            spent += used;
            if let Some(p) = &prev {
                diffs.push(self.outer.norm(&(&next - p)));
            }
            levels.push((lambda, next.clone()));
            prev = Some(next.clone());
            x = next;
            if early_stop {
                if let Some(&d) = diffs.last() {
                    if d <= self.opts.tol * scale {
                        return Ok(SandwichPath {
                            levels,
                            diffs,
                            iterations: spent,
                        });
                    }
                }
            }
            if lambda <= self.opts.lambda_min {
                if early_stop {
                    return Err(CoreError::NoConvergence {
                        what: "sandwiched resolvent (regularization path)".into(),
                        residual: diffs.last().copied().unwrap_or(f64::INFINITY),
                        iterations: spent,
                    });
                }
                return Ok(SandwichPath {
                    levels,
                    diffs,
                    iterations: spent,
                });
            }
            lambda = (lambda * self.opts.gamma).max(self.opts.lambda_min);
        }
    }

    /// Run the full regularization ladder and return the per-level iterates.
    ///
    /// The final iterate approximates the resolvent at accuracy
    /// `O(lambda_min)`; the recorded levels expose the Cauchy behaviour of
    /// the path (`|x_a - x_b|^2 <~ (a + b) * C`) for fitting.
    pub fn resolve_path(&self, mu: f64, y: &DVector<C64>) -> Result<SandwichPath> {
        if !(mu > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "resolvent parameter must be positive, got {mu}"
            )));
        }
        self.ladder(mu, y, false)
    }
}

impl<T: Relation<StateSpace>> Relation<StateSpace> for SandwichRelation<T> {
    fn space(&self) -> &StateSpace {
        &self.outer
    }

    fn resolve(&self, mu: f64, y: &DVector<C64>) -> Result<DVector<C64>> {
        let s2 = (self.op_norm * self.op_norm).max(1e-12);
        if let (Some(l), true) = (
            self.inner.lipschitz_direct(),
            self.inner.apply_direct(&self.inner.space().zero_elem()).is_some(),
        ) {
            // Direct path: Phi = S* T S is monotone and (L |S|^2)-Lipschitz,
            // hence x + mu Phi x is 1-strongly monotone; treat it as
            // 1/(L |S|^2)-cocoercive-like damping via the generic formula
            // with beta derived from the Lipschitz constant.
            let lips = (l * s2).max(1e-12);
            let beta = 1.0 / lips;
            let phi = |x: &DVector<C64>| -> Result<DVector<C64>> {
                let sx = self.op.apply(x);
                let tsx = self
                    .inner
                    .apply_direct(&sx)
                    .expect("direct path checked above");
                Ok(self.op_adj.apply(&tsx))
            };
            let (x, _) = self.damped_solve(
                mu,
                y,
                y.clone(),
                beta,
                self.opts.tol,
                self.opts.max_iter,
                phi,
            )?;
            return Ok(x);
        }

        // Regularized path with the inter-level Cauchy stop.
        let path = self.ladder(mu, y, true)?;
        let (_, x) = path.levels.last().cloned().expect("ladder ran at least one level");
        Ok(x)
    }

    fn contains_zero_pair(&self) -> bool {
        self.inner.contains_zero_pair()
    }
}

// ---------------------------------------------------------------------------
// Structure checks.
// ---------------------------------------------------------------------------

/// Sampling controls shared by the structure checks.
#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub pairs: usize,
    pub lambdas: Vec<f64>,
    pub seed: u64,
    pub scale: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            pairs: 50,
            lambdas: vec![0.1, 1.0, 10.0],
            seed: 0x5eed,
            scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MonotonicityReport {
    /// Minimum of `Re<dx|dv> / (|dx| |dv|)` over sampled graph pairs.
    pub min_normalized_product: f64,
    pub pairs: usize,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolventReport {
    /// Maximum of `|J y1 - J y2| / |y1 - y2|`.
    pub max_expansion: f64,
    /// Maximum Yosida Lipschitz ratio `|A_l y1 - A_l y2| * l / |y1 - y2|`.
    pub max_yosida_ratio: f64,
    /// Maximum relative error in the two-parameter resolvent identity.
    pub max_identity_error: f64,
    /// `|J_l(0)|` relative to the sampling scale (0 expected when the zero
    /// pair is claimed).
    pub zero_pair_error: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TimeInvarianceReport {
    /// Maximum of `|J(shift z) - shift(J z)| / |z|` over samples and shifts.
    pub max_commutator: f64,
    pub claimed: bool,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CausalPositivityReport {
    /// Minimum normalized prefix product over sampled pairs and cutoffs.
    pub min_prefix_product: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MinimalSectionReport {
    pub lambdas: Vec<f64>,
    pub norms: Vec<f64>,
    /// Whether the norms are nondecreasing as the parameter decreases.
    pub nondecreasing: bool,
    /// Norm at the smallest parameter: the minimal-section estimate.
    pub estimate: f64,
}

/// Sample graph pairs and report the worst normalized monotonicity product.
pub fn check_monotonicity<S: HilbertSpace, R: Relation<S> + ?Sized>(
    rel: &R,
    opts: &CheckOptions,
) -> Result<MonotonicityReport> {
    let space = rel.space();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut min_norm = f64::INFINITY;
    for i in 0..opts.pairs {
        let lambda = opts.lambdas[i % opts.lambdas.len()];
        let y1 = space.random_elem(&mut rng, opts.scale);
        let y2 = space.random_elem(&mut rng, opts.scale);
        let (x1, v1) = sample_graph_pair(rel, lambda, &y1)?;
        let (x2, v2) = sample_graph_pair(rel, lambda, &y2)?;
        let dx = space.sub(&x1, &x2);
        let dv = space.sub(&v1, &v2);
        let denom = space.norm(&dx) * space.norm(&dv);
        if denom > 0.0 {
            min_norm = min_norm.min(space.inner(&dx, &dv).re / denom);
        }
    }
    if !min_norm.is_finite() {
        min_norm = 0.0;
    }
    Ok(MonotonicityReport {
        min_normalized_product: min_norm,
        pairs: opts.pairs,
        ok: min_norm >= -MONOTONE_TOL,
    })
}

/// Nonexpansiveness, Yosida Lipschitz bounds, the two-parameter resolvent
/// identity and the zero pair, all sampled.
pub fn check_resolvents<S: HilbertSpace, R: Relation<S> + ?Sized>(
    rel: &R,
    opts: &CheckOptions,
) -> Result<ResolventReport> {
    let space = rel.space();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e3779b97f4a7c15);
    let mut max_expansion = 0.0f64;
    let mut max_yosida = 0.0f64;
    let mut max_identity = 0.0f64;
    for i in 0..opts.pairs {
        let lambda = opts.lambdas[i % opts.lambdas.len()];
        let mu = opts.lambdas[(i + 1) % opts.lambdas.len()].min(lambda);
        let y1 = space.random_elem(&mut rng, opts.scale);
        let y2 = space.random_elem(&mut rng, opts.scale);
        let dy = space.distance(&y1, &y2);
        if dy == 0.0 {
            continue;
        }
        let j1 = rel.resolve(lambda, &y1)?;
        let j2 = rel.resolve(lambda, &y2)?;
        max_expansion = max_expansion.max(space.distance(&j1, &j2) / dy);
        let a1 = yosida(rel, lambda, &y1)?;
        let a2 = yosida(rel, lambda, &y2)?;
        max_yosida = max_yosida.max(space.distance(&a1, &a2) * lambda / dy);
        // J_l(y) = J_m((m/l) y + (1 - m/l) J_l(y))
        let ratio = mu / lambda;
        let blend = space.combine(
            C64::new(ratio, 0.0),
            &y1,
            C64::new(1.0 - ratio, 0.0),
            &j1,
        );
        let jm = rel.resolve(mu, &blend)?;
        let err = space.distance(&jm, &j1) / (1.0 + space.norm(&j1));
        max_identity = max_identity.max(err);
    }
    let zero_pair_error = if rel.contains_zero_pair() {
        let z = space.zero_elem();
        let mut worst = 0.0f64;
        for &lambda in &opts.lambdas {
            worst = worst.max(space.norm(&rel.resolve(lambda, &z)?) / opts.scale.max(1e-300));
        }
        worst
    } else {
        0.0
    };
    let ok = max_expansion <= 1.0 + EXPANSION_TOL
        && max_yosida <= 1.0 + EXPANSION_TOL
        && max_identity <= IDENTITY_TOL
        && zero_pair_error <= IDENTITY_TOL;
    Ok(ResolventReport {
        max_expansion,
        max_yosida_ratio: max_yosida,
        max_identity_error: max_identity,
        zero_pair_error,
        ok,
    })
}

/// Shift-commutation of signal relations: compare `J(shift z)` against
/// `shift(J z)` for a handful of delays.
pub fn check_time_invariance<R: Relation<SignalSpace> + ?Sized>(
    rel: &R,
    opts: &CheckOptions,
) -> Result<TimeInvarianceReport> {
    let space = rel.space();
    let n = space.grid().len();
    let shifts = [1usize, 3, n / 4, n / 2];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xabcdef);
    let mut worst = 0.0f64;
    for i in 0..opts.pairs.max(8).min(32) {
        let lambda = opts.lambdas[i % opts.lambdas.len()];
        let z = space.random_elem(&mut rng, opts.scale);
        let zn = space.norm(&z).max(1e-300);
        let jz = rel.resolve(lambda, &z)?;
        for &m in &shifts {
            if m == 0 || m >= n {
                continue;
            }
            let a = rel.resolve(lambda, &z.shift(m as i64))?;
            let b = jz.shift(m as i64);
            worst = worst.max(space.norm(&space.sub(&a, &b)) / zn);
        }
    }
    let claimed = rel.time_invariant_claimed();
    Ok(TimeInvarianceReport {
        max_commutator: worst,
        claimed,
        ok: !claimed || worst <= TIME_INVARIANCE_TOL,
    })
}

/// Prefix energies of sampled graph pairs: for every cutoff `a`,
/// `Re <1_{<=a} v | 1_{<=a} x>` must not be materially negative when the
/// relation contains the zero pair.
pub fn check_causal_positivity<R: Relation<SignalSpace> + ?Sized>(
    rel: &R,
    opts: &CheckOptions,
) -> Result<CausalPositivityReport> {
    let space = rel.space();
    let horizon = space.grid().horizon();
    let cutoffs = [0.25, 0.5, 0.75, 1.0].map(|f| f * horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x515151);
    let mut min_prefix = f64::INFINITY;
    for i in 0..opts.pairs {
        let lambda = opts.lambdas[i % opts.lambdas.len()];
        let y = space.random_elem(&mut rng, opts.scale);
        let (x, v) = sample_graph_pair(rel, lambda, &y)?;
        let scale = (space.norm(&x) * space.norm(&v)).max(1e-300);
        for &a in &cutoffs {
            let q = v
                .cutoff(a)
                .winner_in(space.state(), &x.cutoff(a))?
                .re;
            min_prefix = min_prefix.min(q / scale);
        }
    }
    if !min_prefix.is_finite() {
        min_prefix = 0.0;
    }
    Ok(CausalPositivityReport {
        min_prefix_product: min_prefix,
        ok: min_prefix >= -PREFIX_TOL,
    })
}

/// Trace `|A_l(x)|` down a decreasing parameter sequence.  The norms must be
/// nondecreasing as the parameter shrinks; blowing past [`SECTION_LIMIT`]
/// reports an unbounded section (meaning `x` lies outside the domain).
pub fn minimal_section<S: HilbertSpace, R: Relation<S> + ?Sized>(
    rel: &R,
    x: &S::Elem,
    lambda0: f64,
    factor: f64,
    steps: usize,
) -> Result<MinimalSectionReport> {
    let space = rel.space();
    let xn = space.norm(x);
    let mut lambdas = Vec::with_capacity(steps);
    let mut norms = Vec::with_capacity(steps);
    let mut lambda = lambda0;
    let mut nondecreasing = true;
    for _ in 0..steps {
        let a = yosida(rel, lambda, x)?;
        let n = space.norm(&a);
        if n > SECTION_LIMIT * (1.0 + xn) {
            return Err(CoreError::UnboundedSection { norm: n, lambda });
        }
        if let Some(&prev) = norms.last() {
            if n < prev - 1e-9 * (1.0 + prev) {
                nondecreasing = false;
            }
        }
        lambdas.push(lambda);
        norms.push(n);
        lambda *= factor;
    }
    let estimate = norms.last().copied().unwrap_or(0.0);
    Ok(MinimalSectionReport {
        lambdas,
        norms,
        nondecreasing,
        estimate,
    })
}

// ---------------------------------------------------------------------------
// Configuration (JSON) forms.
// ---------------------------------------------------------------------------

/// JSON form of a relation; state relations are lifted pointwise in time
/// when built over a signal space.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RelationConfig {
    /// `A = 0`.
    Zero,
    /// Bounded linear monotone relation given by a constant matrix.
    Linear { matrix: ConstantConfig },
    /// Subdifferential of `mu * |.|_1`.
    AbsSubdiff { mu: f64 },
    /// Normal cone of a real box.
    Clamp { lo: f64, hi: f64 },
    /// The non-time-invariant gate (for exercising the verification path).
    TimeGate,
    /// `S^* T S` with a constant matrix `S` and an inner relation `T`.
    Sandwich {
        matrix: ConstantConfig,
        inner: Box<RelationConfig>,
    },
}

impl RelationConfig {
    /// Build over a signal space, lifting state relations pointwise.
    pub fn build(&self, space: &SignalSpace) -> Result<Box<dyn Relation<SignalSpace>>> {
        let grid = space.grid();
        let state = space.state();
        Ok(match self {
            RelationConfig::Zero => Box::new(ZeroRelation::new(space.clone())),
            RelationConfig::TimeGate => {
                Box::new(TimeGateRelation::new(grid, state.clone()))
            }
            _ => Box::new(PointwiseLift::new(grid, self.build_state(state)?)),
        })
    }

    /// Build the state-space form (no time lift).
    pub fn build_state(&self, state: &StateSpace) -> Result<Box<dyn Relation<StateSpace>>> {
        let dim = state.dim();
        Ok(match self {
            RelationConfig::Zero => Box::new(ZeroRelation::new(state.clone())),
            RelationConfig::TimeGate => {
                return Err(CoreError::InvalidConfig(
                    "the time gate only exists on signal spaces".into(),
                ))
            }
            RelationConfig::Linear { matrix } => {
                let mat = constant_matrix(matrix, dim)?;
                Box::new(LinearRelation::new(LinOp::new(
                    state.clone(),
                    state.clone(),
                    mat,
                )?)?)
            }
            RelationConfig::AbsSubdiff { mu } => {
                Box::new(AbsSubdiff::new(state.clone(), *mu)?)
            }
            RelationConfig::Clamp { lo, hi } => {
                Box::new(ClampNormalCone::new(state.clone(), *lo, *hi)?)
            }
            RelationConfig::Sandwich { matrix, inner } => {
                let mat = constant_matrix(matrix, dim)?;
                let op = LinOp::new(state.clone(), state.clone(), mat)?;
                let inner = inner.build_state(state)?;
                Box::new(SandwichRelation::new(op, inner, SandwichOptions::default())?)
            }
        })
    }
}

fn constant_matrix(cfg: &ConstantConfig, dim: usize) -> Result<nalgebra::DMatrix<C64>> {
    use nalgebra::DMatrix;
    Ok(match cfg {
        ConstantConfig::Identity => DMatrix::identity(dim, dim),
        ConstantConfig::Scalar(s) => DMatrix::from_diagonal_element(dim, dim, C64::new(*s, 0.0)),
        ConstantConfig::Diag(v) => {
            if v.len() != dim {
                return Err(CoreError::DimensionMismatch(format!(
                    "diag constant has {} entries, need {dim}",
                    v.len()
                )));
            }
            DMatrix::from_diagonal(&DVector::from_iterator(
                dim,
                v.iter().map(|&x| C64::new(x, 0.0)),
            ))
        }
        ConstantConfig::Dense(rows) => {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(CoreError::DimensionMismatch(format!(
                    "dense constant must be {dim}x{dim}"
                )));
            }
            DMatrix::from_fn(dim, dim, |i, j| C64::new(rows[i][j], 0.0))
        }
    })
}
