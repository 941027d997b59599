//! Staggered 1-D spatial pair, boundary-data subspaces, and the flux-extended
//! first-order boundary operator.
//!
//! The spatial setup is an interval `[0, L]` discretized with node values
//! (dimension `n + 1`) and midpoint values (dimension `n`).  The forward
//! difference `G` maps nodes to midpoints; the divergence `D` maps midpoints
//! back to nodes, with one-sided second-order stencils in its two boundary
//! rows.  Together with the half-weighted node metric this yields an *exact*
//! summation-by-parts identity
//!
//! ```text
//! <G u, q>_mids + <u, D q>_nodes = -conj(u_0) tl(q) + conj(u_n) tr(q)
//! ```
//!
//! where `tl`, `tr` are extrapolated endpoint fluxes.  The identity holds to
//! round-off for arbitrary vectors, not just smooth samples, which makes the
//! boundary-data constructions and the monotonicity of the boundary operator
//! below exact discrete statements.
//!
//! [`BoundaryOperator`] realizes the block relation `(u, v) -> (D_F v, G u)`
//! with two auxiliary flux unknowns per time node and a scalar boundary law
//! that couples endpoint traces of `u` to the fluxes.  Its resolvent reduces
//! to a symmetric positive definite node solve plus a 2x2 trace problem per
//! time node (or per frequency bin for convolution laws), so set-valued laws
//! only ever require proximal iterations on `C^2`.

use std::sync::Mutex;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::{Factorized, LinOp, StateSpace};
use crate::monotone::{soft_threshold, Relation, SignalSpace};
use crate::time::{Signal, TimeGrid};

/// Relative threshold below which singular values count as numerically zero
/// when extracting boundary-data bases.
const NULLSPACE_RTOL: f64 = 1e-9;

/// Iteration cap for the per-node proximal solves of set-valued boundary
/// laws.
const PROX_MAX_ITER: usize = 400_000;

/// Relative fixed-point residual at which the per-node proximal solves stop.
const PROX_TOL: f64 = 1e-13;

// ---------------------------------------------------------------------------
// Staggered pair.
// ---------------------------------------------------------------------------

/// Staggered node/midpoint discretization of an interval with an exact
/// summation-by-parts structure.
#[derive(Debug, Clone)]
pub struct StaggeredPair {
    n: usize,
    ell: f64,
    length: f64,
    nodes: StateSpace,
    mids: StateSpace,
    grad: LinOp,
    div: LinOp,
}

impl StaggeredPair {
    /// Build the pair with `n` cells on `[0, length]`.
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 4 {
            return Err(CoreError::InvalidConfig(
                "staggered pair needs at least 4 cells".into(),
            ));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(CoreError::InvalidConfig(
                "interval length must be positive and finite".into(),
            ));
        }
        let ell = length / n as f64;

        let mut w0 = DVector::from_element(n + 1, ell);
        w0[0] = 0.5 * ell;
        w0[n] = 0.5 * ell;
        let nodes = StateSpace::diagonal(w0)?;
        let mids = StateSpace::diagonal(DVector::from_element(n, ell))?;

        let mut g = DMatrix::<f64>::zeros(n, n + 1);
        for j in 0..n {
            g[(j, j)] = -1.0 / ell;
            g[(j, j + 1)] = 1.0 / ell;
        }

        let mut d = DMatrix::<f64>::zeros(n + 1, n);
        d[(0, 0)] = -2.0 / ell;
        d[(0, 1)] = 3.0 / ell;
        d[(0, 2)] = -1.0 / ell;
        for i in 1..n {
            d[(i, i - 1)] = -1.0 / ell;
            d[(i, i)] = 1.0 / ell;
        }
        d[(n, n - 1)] = 2.0 / ell;
        d[(n, n - 2)] = -3.0 / ell;
        d[(n, n - 3)] = 1.0 / ell;

        let grad = LinOp::from_real(nodes.clone(), mids.clone(), g)?;
        let div = LinOp::from_real(mids.clone(), nodes.clone(), d)?;

        Ok(StaggeredPair {
            n,
            ell,
            length,
            nodes,
            mids,
            grad,
            div,
        })
    }

    /// Number of cells.
    pub fn cells(&self) -> usize {
        self.n
    }

    /// Mesh width.
    pub fn step(&self) -> f64 {
        self.ell
    }

    /// Interval length.
    pub fn length(&self) -> f64 {
        self.length
    }

    /// Node space (dimension `n + 1`, half-weighted ends).
    pub fn nodes(&self) -> &StateSpace {
        &self.nodes
    }

    /// Midpoint space (dimension `n`).
    pub fn mids(&self) -> &StateSpace {
        &self.mids
    }

    /// Forward difference, nodes to midpoints.
    pub fn grad(&self) -> &LinOp {
        &self.grad
    }

    /// Divergence, midpoints to nodes.
    pub fn div(&self) -> &LinOp {
        &self.div
    }

    /// Node coordinate `x_i = i * ell`.
    pub fn node_x(&self, i: usize) -> f64 {
        i as f64 * self.ell
    }

    /// Midpoint coordinate `x_j = (j + 1/2) * ell`.
    pub fn mid_x(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.ell
    }

    /// Endpoint values `(u_0, u_n)` of a node vector.
    pub fn node_traces(&self, u: &DVector<C64>) -> Vector2<C64> {
        Vector2::new(u[0], u[self.n])
    }

    /// Extrapolated endpoint fluxes `(tl(q), tr(q))` of a midpoint vector.
    ///
    /// Both are exact for affine data and reproduce the summation-by-parts
    /// boundary terms exactly for arbitrary vectors.
    pub fn mid_traces(&self, q: &DVector<C64>) -> Vector2<C64> {
        let n = self.n;
        let tl = 2.0 * q[0] - 1.5 * q[1] + 0.5 * q[2];
        let tr = 2.0 * q[n - 1] - 1.5 * q[n - 2] + 0.5 * q[n - 3];
        Vector2::new(tl, tr)
    }

    /// Graph inner product on the node side: `<u, w> + <G u, G w>`.
    pub fn graph_inner_nodes(&self, u: &DVector<C64>, w: &DVector<C64>) -> C64 {
        self.nodes.inner(u, w) + self.mids.inner(&self.grad.apply(u), &self.grad.apply(w))
    }

    /// Graph inner product on the midpoint side: `<q, p> + <D q, D p>`.
    pub fn graph_inner_mids(&self, q: &DVector<C64>, p: &DVector<C64>) -> C64 {
        self.mids.inner(q, p) + self.nodes.inner(&self.div.apply(q), &self.div.apply(p))
    }

    /// Defect of the summation-by-parts identity; zero to round-off.
    pub fn sbp_defect(&self, u: &DVector<C64>, q: &DVector<C64>) -> C64 {
        let lhs = self.mids.inner(&self.grad.apply(u), q) + self.nodes.inner(u, &self.div.apply(q));
        let tu = self.node_traces(u);
        let tq = self.mid_traces(q);
        lhs - (-tu[0].conj() * tq[0] + tu[1].conj() * tq[1])
    }

    /// Divergence extended by explicit endpoint fluxes: interior rows are the
    /// plain difference quotient while the boundary rows balance the cell
    /// halves against the supplied fluxes.
    pub fn apply_flux_div(&self, v: &DVector<C64>, f_l: C64, f_r: C64) -> DVector<C64> {
        let n = self.n;
        let ell = self.ell;
        let mut out = DVector::zeros(n + 1);
        out[0] = (v[0] - f_l) * C64::new(2.0 / ell, 0.0);
        for i in 1..n {
            out[i] = (v[i] - v[i - 1]) * C64::new(1.0 / ell, 0.0);
        }
        out[n] = (f_r - v[n - 1]) * C64::new(2.0 / ell, 0.0);
        out
    }

    /// Project a midpoint vector onto the kernel of both endpoint fluxes.
    pub fn project_flux_free(&self, q: &DVector<C64>) -> DVector<C64> {
        let v = self.mid_trace_covectors();
        // P = I - V (V^T V)^{-1} V^T applied to q, with real V.
        let vtv = Matrix2::new(
            v.0.dot(&v.0),
            v.0.dot(&v.1),
            v.1.dot(&v.0),
            v.1.dot(&v.1),
        );
        let inv = vtv
            .try_inverse()
            .expect("endpoint flux covectors are independent");
        let c0 = complex_dot_real(&v.0, q);
        let c1 = complex_dot_real(&v.1, q);
        let a = inv[(0, 0)] * c0 + inv[(0, 1)] * c1;
        let b = inv[(1, 0)] * c0 + inv[(1, 1)] * c1;
        let mut out = q.clone();
        for i in 0..self.n {
            out[i] -= a * v.0[i] + b * v.1[i];
        }
        out
    }

    fn mid_trace_covectors(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.n;
        let mut tl = DVector::zeros(n);
        tl[0] = 2.0;
        tl[1] = -1.5;
        tl[2] = 0.5;
        let mut tr = DVector::zeros(n);
        tr[n - 1] = 2.0;
        tr[n - 2] = -1.5;
        tr[n - 3] = 0.5;
        (tl, tr)
    }

    // -- boundary-data subspaces ---------------------------------------------

    /// Boundary-data plane on the node side: vectors whose graph-inner
    /// product against every end-pinned vector vanishes.
    pub fn bd_basis_grad(&self) -> Result<BdBasis> {
        let n = self.n;
        let gsg = self.grad.adjoint().compose(&self.grad)?;
        let mut mat = DMatrix::<C64>::identity(n + 1, n + 1) + gsg.matrix();
        // The masked subspace is spanned by interior coordinate vectors, so
        // the orthogonality condition reads: interior rows vanish.
        for c in 0..n + 1 {
            mat[(0, c)] = C64::new(0.0, 0.0);
            mat[(n, c)] = C64::new(0.0, 0.0);
        }
        let kernel = nullspace(&mat, 2)?;
        canonicalize_plane(
            kernel,
            |u| self.node_traces(u),
            |a, b| self.graph_inner_nodes(a, b),
        )
    }

    /// Boundary-data plane on the midpoint side: vectors whose graph-inner
    /// product against every flux-free vector vanishes.
    pub fn bd_basis_div(&self) -> Result<BdBasis> {
        let n = self.n;
        let dsd = self.div.adjoint().compose(&self.div)?;
        let base = DMatrix::<C64>::identity(n, n) + dsd.matrix();
        // Orthogonality holds against ker(tl) ∩ ker(tr); project the rows of
        // the graph operator off the span of the flux covectors.
        let mut mat = DMatrix::<C64>::zeros(n, n);
        for c in 0..n {
            let col: DVector<C64> = base.column(c).into_owned();
            let proj = self.project_flux_free(&col);
            mat.column_mut(c).copy_from(&proj);
        }
        let kernel = nullspace(&mat, 2)?;
        canonicalize_plane(
            kernel,
            |q| self.mid_traces(q),
            |a, b| self.graph_inner_mids(a, b),
        )
    }

    /// Matrix of `q -> P_bd (D q)` between the graph-orthonormal bases of the
    /// two boundary-data planes.
    pub fn bullet_div(&self) -> Result<Matrix2<C64>> {
        let bg = self.bd_basis_grad()?;
        let bd = self.bd_basis_div()?;
        let mut m = Matrix2::zeros();
        for (i, q) in bd.onb.iter().enumerate() {
            let w = self.div.apply(q);
            for (j, e) in bg.onb.iter().enumerate() {
                m[(j, i)] = self.graph_inner_nodes(e, &w);
            }
        }
        Ok(m)
    }

    /// Matrix of `u -> P_bd (G u)` between the graph-orthonormal bases.
    pub fn bullet_grad(&self) -> Result<Matrix2<C64>> {
        let bg = self.bd_basis_grad()?;
        let bd = self.bd_basis_div()?;
        let mut m = Matrix2::zeros();
        for (i, u) in bg.onb.iter().enumerate() {
            let w = self.grad.apply(u);
            for (j, e) in bd.onb.iter().enumerate() {
                m[(j, i)] = self.graph_inner_mids(e, &w);
            }
        }
        Ok(m)
    }

    /// Deviation of the boundary transfer from a graph isometry,
    /// `|| B^H B - I ||_F` for the projected divergence between the two
    /// boundary-data planes.  Tends to zero under mesh refinement.
    pub fn unitarity_defect(&self) -> Result<f64> {
        let b = self.bullet_div()?;
        let gram = b.adjoint() * b;
        let diff = gram - Matrix2::identity();
        Ok(frob2(&diff))
    }

    /// Boundary transfer of the projected divergence expressed in endpoint
    /// trace coordinates on both sides.
    pub fn bullet_div_trace_matrix(&self) -> Result<Matrix2<C64>> {
        let bg = self.bd_basis_grad()?;
        let bd = self.bd_basis_div()?;
        let b = self.bullet_div()?;
        let sd_inv = bd
            .onb_traces
            .try_inverse()
            .ok_or_else(|| CoreError::DegenerateBasis("midpoint boundary-data traces are singular".into()))?;
        Ok(bg.onb_traces * b * sd_inv)
    }

    /// Continuum limit of [`Self::bullet_div_trace_matrix`] for this interval
    /// length: the endpoint map of `q -> q'` on solutions of `q'' = q`.
    pub fn continuum_div_trace_matrix(&self) -> Matrix2<f64> {
        let l = self.length;
        let s = l.sinh();
        let c = l.cosh();
        Matrix2::new(-c / s, 1.0 / s, -1.0 / s, c / s)
    }

    /// Largest principal angle (radians) between the node-side boundary-data
    /// plane and nodal samples of the continuum plane `span{cosh, sinh}`.
    pub fn bd_grad_continuum_angle(&self) -> Result<f64> {
        let bg = self.bd_basis_grad()?;
        let smp1 = DVector::from_fn(self.n + 1, |i, _| C64::new(self.node_x(i).cosh(), 0.0));
        let smp2 = DVector::from_fn(self.n + 1, |i, _| C64::new(self.node_x(i).sinh(), 0.0));
        let discrete = orthonormalize(&[bg.onb[0].clone(), bg.onb[1].clone()], |a, b| {
            self.nodes.inner(a, b)
        })?;
        let continuum = orthonormalize(&[smp1, smp2], |a, b| self.nodes.inner(a, b))?;
        let mut cross = Matrix2::<C64>::zeros();
        for (i, d) in discrete.iter().enumerate() {
            for (j, c) in continuum.iter().enumerate() {
                cross[(i, j)] = self.nodes.inner(d, c);
            }
        }
        let sv = cross_singular_values(&cross);
        let cos_min = sv.1.clamp(0.0, 1.0);
        Ok(cos_min.acos())
    }
}

/// Basis data for one boundary-data plane.
#[derive(Debug, Clone)]
pub struct BdBasis {
    /// Basis with endpoint traces `(1, 0)` and `(0, 1)`.
    pub canonical: [DVector<C64>; 2],
    /// Graph-orthonormal basis of the same plane.
    pub onb: [DVector<C64>; 2],
    /// Endpoint traces of the orthonormal basis (columns follow `onb`).
    pub onb_traces: Matrix2<C64>,
}

fn complex_dot_real(r: &DVector<f64>, z: &DVector<C64>) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..r.len() {
        acc += z[i] * r[i];
    }
    acc
}

/// Kernel of a square matrix via SVD; demands an exact numerical nullity.
fn nullspace(mat: &DMatrix<C64>, expected: usize) -> Result<Vec<DVector<C64>>> {
    let svd = mat.clone().svd(false, true);
    let sv = &svd.singular_values;
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| CoreError::DegenerateBasis("singular vectors unavailable".into()))?;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return Err(CoreError::DegenerateBasis("kernel extraction on a zero matrix".into()));
    }
    let thr = NULLSPACE_RTOL * smax;
    let mut idx: Vec<usize> = (0..sv.len()).collect();
    idx.sort_by(|&a, &b| sv[a].partial_cmp(&sv[b]).unwrap());
    let zeros = sv.iter().filter(|&&s| s <= thr).count();
    if zeros != expected {
        return Err(CoreError::DegenerateBasis(format!(
            "expected a numerical nullity of {expected}, found {zeros}"
        )));
    }
    Ok(idx[..expected]
        .iter()
        .map(|&i| v_t.row(i).adjoint())
        .collect())
}

/// Turn a kernel pair into trace-canonical and graph-orthonormal bases.
fn canonicalize_plane(
    kernel: Vec<DVector<C64>>,
    trace_of: impl Fn(&DVector<C64>) -> Vector2<C64>,
    graph: impl Fn(&DVector<C64>, &DVector<C64>) -> C64,
) -> Result<BdBasis> {
    let t0 = trace_of(&kernel[0]);
    let t1 = trace_of(&kernel[1]);
    let tmat = Matrix2::new(t0[0], t1[0], t0[1], t1[1]);
    let tinv = tmat
        .try_inverse()
        .ok_or_else(|| CoreError::DegenerateBasis("boundary-data traces are singular".into()))?;
    let lin = |a: C64, b: C64| -> DVector<C64> { &kernel[0] * a + &kernel[1] * b };
    let b_l = lin(tinv[(0, 0)], tinv[(1, 0)]);
    let b_r = lin(tinv[(0, 1)], tinv[(1, 1)]);
    let onb = orthonormalize(&[b_l.clone(), b_r.clone()], graph)?;
    let s0 = trace_of(&onb[0]);
    let s1 = trace_of(&onb[1]);
    let onb_traces = Matrix2::new(s0[0], s1[0], s0[1], s1[1]);
    Ok(BdBasis {
        canonical: [b_l, b_r],
        onb: [onb[0].clone(), onb[1].clone()],
        onb_traces,
    })
}

/// Gram-Schmidt for a pair of vectors in an arbitrary inner product
/// (conjugate-linear in its first argument).
fn orthonormalize(
    vs: &[DVector<C64>; 2],
    inner: impl Fn(&DVector<C64>, &DVector<C64>) -> C64,
) -> Result<[DVector<C64>; 2]> {
    let n0 = inner(&vs[0], &vs[0]).re.max(0.0).sqrt();
    if n0 <= 0.0 {
        return Err(CoreError::DegenerateBasis("zero vector in basis candidate".into()));
    }
    let e0 = &vs[0] / C64::new(n0, 0.0);
    let c = inner(&e0, &vs[1]);
    let w = &vs[1] - &e0 * c;
    let n1 = inner(&w, &w).re.max(0.0).sqrt();
    if n1 <= 1e-14 * n0.max(1.0) {
        return Err(CoreError::DegenerateBasis("basis candidates are collinear".into()));
    }
    let e1 = w / C64::new(n1, 0.0);
    Ok([e0, e1])
}

/// Singular values (max, min) of a 2x2 complex matrix.
fn cross_singular_values(m: &Matrix2<C64>) -> (f64, f64) {
    let g = m.adjoint() * m;
    let a = g[(0, 0)].re;
    let d = g[(1, 1)].re;
    let b = g[(0, 1)];
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    let hi = (mid + rad).max(0.0);
    let lo = (mid - rad).max(0.0);
    (hi.sqrt(), lo.sqrt())
}

fn frob2(m: &Matrix2<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Boundary laws.
// ---------------------------------------------------------------------------

/// Scalar boundary law coupling endpoint traces `x in C^2` to outward fluxes
/// `phi in C^2` per time node.
#[derive(Debug, Clone)]
pub enum BoundaryLaw {
    /// No boundary flux (reflective ends): `phi = 0`.
    Zero,
    /// Time-local linear coupling `phi = alpha x`.
    Linear { alpha: Matrix2<C64> },
    /// Causal scalar impedance per endpoint: `phi` is the convolution with
    /// symbol `delta * a(1 / delta)` where `a(z) = sum_k coeffs[k] z^k`.
    /// `coeffs = [0, c]` reduces to the time-local law `phi = c x`.
    Impedance { coeffs: Vec<f64> },
    /// Rate-independent friction: `phi in mu * sgn(x)` componentwise (the
    /// subdifferential of `mu * (|x_l| + |x_r|)`).
    Friction { mu: f64 },
}

impl BoundaryLaw {
    /// Shape and sign checks; monotonicity is reported separately.
    pub fn validate(&self) -> Result<()> {
        match self {
            BoundaryLaw::Zero => Ok(()),
            BoundaryLaw::Linear { alpha } => {
                if alpha.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                    Ok(())
                } else {
                    Err(CoreError::InvalidConfig(
                        "boundary coupling matrix has non-finite entries".into(),
                    ))
                }
            }
            BoundaryLaw::Impedance { coeffs } => {
                if coeffs.is_empty() {
                    return Err(CoreError::InvalidConfig(
                        "impedance coefficient list is empty".into(),
                    ));
                }
                if coeffs.iter().all(|c| c.is_finite()) {
                    Ok(())
                } else {
                    Err(CoreError::InvalidConfig(
                        "impedance coefficients must be finite".into(),
                    ))
                }
            }
            BoundaryLaw::Friction { mu } => {
                if *mu >= 0.0 && mu.is_finite() {
                    Ok(())
                } else {
                    Err(CoreError::InvalidConfig(
                        "friction threshold must be non-negative".into(),
                    ))
                }
            }
        }
    }

    /// Discrete impedance symbol at bin `j`.
    pub fn impedance_symbol(&self, grid: &TimeGrid, j: usize) -> C64 {
        match self {
            BoundaryLaw::Impedance { coeffs } => {
                let delta = grid.delta(j);
                let w = C64::new(1.0, 0.0) / delta;
                let mut acc = C64::new(0.0, 0.0);
                for &c in coeffs.iter().rev() {
                    acc = acc * w + C64::new(c, 0.0);
                }
                delta * acc
            }
            _ => C64::new(0.0, 0.0),
        }
    }

    /// Lower bound certificate for the law's monotonicity on the grid: the
    /// minimal real part of the symbol (convolution laws) or the minimal
    /// eigenvalue of the Hermitian part (linear laws).  Non-negative values
    /// certify a monotone law.
    pub fn monotone_certificate(&self, grid: &TimeGrid) -> f64 {
        match self {
            BoundaryLaw::Zero => 0.0,
            BoundaryLaw::Friction { .. } => 0.0,
            BoundaryLaw::Linear { alpha } => herm2_min_eig(alpha),
            BoundaryLaw::Impedance { .. } => {
                let np = grid.padded_len();
                (0..np)
                    .map(|j| self.impedance_symbol(grid, j).re)
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Whether the law acts independently at each time node.
    pub fn is_time_local(&self) -> bool {
        match self {
            BoundaryLaw::Zero | BoundaryLaw::Linear { .. } | BoundaryLaw::Friction { .. } => true,
            BoundaryLaw::Impedance { coeffs } => {
                // a(z) = c z is multiplication by the constant c.
                coeffs.len() <= 2 && coeffs.first().map_or(true, |&c| c == 0.0)
            }
        }
    }

    /// Solve `x + M phi = b` with `phi in law(x)` for a 2-component signal
    /// `b`, where `M` is symmetric positive definite.  Returns
    /// `(x, phi, leakage)`; the leakage is nonzero only for convolution laws
    /// resolved per frequency bin.
    pub fn resolve_metric(&self, m: &Matrix2<f64>, b: &Signal) -> Result<(Signal, Signal, f64)> {
        if b.dim() != 2 {
            return Err(CoreError::DimensionMismatch(
                "boundary laws act on 2-component trace signals".into(),
            ));
        }
        let grid = b.grid().clone();
        match self {
            BoundaryLaw::Zero => Ok((b.clone(), Signal::zeros(&grid, 2), 0.0)),
            BoundaryLaw::Linear { alpha } => {
                let mc = m.map(|x| C64::new(x, 0.0));
                let a2 = Matrix2::identity() + mc * alpha;
                let inv = a2.try_inverse().ok_or(CoreError::SingularOperator {
                    cond: f64::INFINITY,
                    limit: 0.0,
                })?;
                let x = b.map_nodes(|_, v| {
                    let xv = inv * Vector2::new(v[0], v[1]);
                    DVector::from_column_slice(&[xv[0], xv[1]])
                });
                let phi = x.map_nodes(|_, v| {
                    let pv = alpha * Vector2::new(v[0], v[1]);
                    DVector::from_column_slice(&[pv[0], pv[1]])
                });
                Ok((x, phi, 0.0))
            }
            BoundaryLaw::Impedance { .. } => {
                let bins = b.to_bins();
                let np = grid.padded_len();
                let mc = m.map(|x| C64::new(x, 0.0));
                let mut xb = Vec::with_capacity(np);
                let mut pb = Vec::with_capacity(np);
                for (j, bv) in bins.iter().enumerate() {
                    let s = self.impedance_symbol(&grid, j);
                    let a2 = Matrix2::identity() + mc * s;
                    let inv = a2.try_inverse().ok_or(CoreError::SingularOperator {
                        cond: f64::INFINITY,
                        limit: 0.0,
                    })?;
                    let xv = inv * Vector2::new(bv[0], bv[1]);
                    xb.push(DVector::from_column_slice(&[xv[0], xv[1]]));
                    pb.push(DVector::from_column_slice(&[s * xv[0], s * xv[1]]));
                }
                let (x, leak_x) = Signal::from_bins(&grid, 2, &xb)?;
                let (phi, leak_p) = Signal::from_bins(&grid, 2, &pb)?;
                Ok((x, phi, leak_x.max(leak_p)))
            }
            BoundaryLaw::Friction { mu } => {
                if *mu == 0.0 {
                    return Ok((b.clone(), Signal::zeros(&grid, 2), 0.0));
                }
                let minv = invert_spd2(m)?;
                let (lo, hi) = spd2_eig_bounds(&minv);
                if !(lo > 0.0) {
                    return Err(CoreError::NotPositiveDefinite(
                        "trace response metric is not positive definite".into(),
                    ));
                }
                let step = 1.0 / hi;
                let mut x = Signal::zeros(&grid, 2);
                let mut phi = Signal::zeros(&grid, 2);
                for k in 0..grid.len() {
                    let bv = Vector2::new(b.node(k)[0], b.node(k)[1]);
                    let bnorm = (bv[0].norm_sqr() + bv[1].norm_sqr()).sqrt();
                    let mut xv = bv;
                    let mut converged = false;
                    let mut res = 0.0;
                    for _ in 0..PROX_MAX_ITER {
                        let dx = xv - bv;
                        let g0 = dx[0] * minv[(0, 0)] + dx[1] * minv[(0, 1)];
                        let g1 = dx[0] * minv[(1, 0)] + dx[1] * minv[(1, 1)];
                        let y0 = xv[0] - g0 * step;
                        let y1 = xv[1] - g1 * step;
                        let n0 = soft_threshold(y0, step * mu);
                        let n1 = soft_threshold(y1, step * mu);
                        res = ((n0 - xv[0]).norm_sqr() + (n1 - xv[1]).norm_sqr()).sqrt();
                        xv = Vector2::new(n0, n1);
                        if res <= PROX_TOL * (1.0 + bnorm) {
                            converged = true;
                            break;
                        }
                    }
                    if !converged {
                        return Err(CoreError::NoConvergence {
                            what: "per-node proximal solve of the friction boundary law".into(),
                            residual: res,
                            iterations: PROX_MAX_ITER,
                        });
                    }
                    let dvb = bv - xv;
                    let p0 = dvb[0] * minv[(0, 0)] + dvb[1] * minv[(0, 1)];
                    let p1 = dvb[0] * minv[(1, 0)] + dvb[1] * minv[(1, 1)];
                    x.node_mut(k)[0] = xv[0];
                    x.node_mut(k)[1] = xv[1];
                    phi.node_mut(k)[0] = p0;
                    phi.node_mut(k)[1] = p1;
                }
                Ok((x, phi, 0.0))
            }
        }
    }
}

fn herm2_min_eig(alpha: &Matrix2<C64>) -> f64 {
    let a = alpha[(0, 0)].re;
    let d = alpha[(1, 1)].re;
    let b = (alpha[(0, 1)] + alpha[(1, 0)].conj()) * C64::new(0.5, 0.0);
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    mid - rad
}

fn invert_spd2(m: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if !(det > 0.0) || !(m[(0, 0)] > 0.0) {
        return Err(CoreError::NotPositiveDefinite(
            "trace response matrix must be symmetric positive definite".into(),
        ));
    }
    Ok(Matrix2::new(
        m[(1, 1)] / det,
        -m[(0, 1)] / det,
        -m[(1, 0)] / det,
        m[(0, 0)] / det,
    ))
}

fn spd2_eig_bounds(m: &Matrix2<f64>) -> (f64, f64) {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mid - rad, mid + rad)
}

/// A boundary law viewed as a relation on 2-component trace signals, with
/// resolvent `x + lambda * law(x) = y`.
#[derive(Debug)]
pub struct BoundaryLawRelation {
    law: BoundaryLaw,
    space: SignalSpace,
}

impl BoundaryLawRelation {
    pub fn new(grid: &TimeGrid, law: BoundaryLaw) -> Result<Self> {
        law.validate()?;
        Ok(BoundaryLawRelation {
            law,
            space: SignalSpace::new(grid.clone(), StateSpace::standard(2)),
        })
    }

    pub fn law(&self) -> &BoundaryLaw {
        &self.law
    }
}

impl Relation<SignalSpace> for BoundaryLawRelation {
    fn space(&self) -> &SignalSpace {
        &self.space
    }

    fn resolve(&self, lambda: f64, y: &Signal) -> Result<Signal> {
        let m = Matrix2::new(lambda, 0.0, 0.0, lambda);
        let (x, _, _) = self.law.resolve_metric(&m, y)?;
        Ok(x)
    }

    fn apply_direct(&self, x: &Signal) -> Option<Signal> {
        match &self.law {
            BoundaryLaw::Zero => Some(Signal::zeros(x.grid(), 2)),
            BoundaryLaw::Linear { alpha } => Some(x.map_nodes(|_, v| {
                let pv = alpha * Vector2::new(v[0], v[1]);
                DVector::from_column_slice(&[pv[0], pv[1]])
            })),
            BoundaryLaw::Impedance { .. } => {
                let bins = x.to_bins();
                let grid = x.grid();
                let out: Vec<DVector<C64>> = bins
                    .iter()
                    .enumerate()
                    .map(|(j, bv)| {
                        let s = self.law.impedance_symbol(grid, j);
                        DVector::from_column_slice(&[s * bv[0], s * bv[1]])
                    })
                    .collect();
                Signal::from_bins(grid, 2, &out).ok().map(|(sig, _)| sig)
            }
            BoundaryLaw::Friction { .. } => None,
        }
    }

    fn lipschitz_direct(&self) -> Option<f64> {
        match &self.law {
            BoundaryLaw::Zero => Some(0.0),
            BoundaryLaw::Linear { alpha } => Some(cross_singular_values(alpha).0),
            BoundaryLaw::Impedance { .. } => {
                let np = self.space.grid().padded_len();
                Some(
                    (0..np)
                        .map(|j| self.law.impedance_symbol(self.space.grid(), j).norm())
                        .fold(0.0, f64::max),
                )
            }
            BoundaryLaw::Friction { .. } => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Flux-extended boundary operator.
// ---------------------------------------------------------------------------

/// Detailed output of the boundary resolvent.
#[derive(Debug, Clone)]
pub struct BoundaryResolve {
    /// Resolvent value `(u, v)` as a stacked signal.
    pub state: Signal,
    /// Endpoint traces of the node block, per time node.
    pub trace: Signal,
    /// Outward fluxes `(-F_l, F_r)` selected by the boundary law.
    pub ntrace: Signal,
    /// Spectral wrap-around estimate of the trace solve (convolution laws).
    pub leakage: f64,
}

struct ResolveCache {
    lambda_bits: u64,
    lu: Factorized,
    col0: DVector<C64>,
    coln: DVector<C64>,
    q: Matrix2<f64>,
}

/// The spatial block relation `(u, v) -> (D_F v, G u)` on stacked signals,
/// closed by a boundary law between endpoint traces and fluxes.
///
/// For every `lambda > 0` the resolvent is computed exactly up to the trace
/// solve: eliminating `v` yields a symmetric positive definite system
/// `(I + lambda^2 G^* G) u = rhs` whose endpoint response enters a 2x2
/// problem `x + Q phi = b` per time node, handed to the law.
pub struct BoundaryOperator {
    pair: StaggeredPair,
    law: BoundaryLaw,
    space: SignalSpace,
    k_mat: DMatrix<C64>,
    cache: Mutex<Option<ResolveCache>>,
}

impl std::fmt::Debug for BoundaryOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundaryOperator")
            .field("cells", &self.pair.cells())
            .field("law", &self.law)
            .finish()
    }
}

impl BoundaryOperator {
    pub fn new(pair: StaggeredPair, grid: &TimeGrid, law: BoundaryLaw) -> Result<Self> {
        law.validate()?;
        let state = pair.nodes().product(pair.mids());
        let space = SignalSpace::new(grid.clone(), state);
        let k_mat = pair.grad.adjoint().compose(&pair.grad)?.matrix().clone();
        Ok(BoundaryOperator {
            pair,
            law,
            space,
            k_mat,
            cache: Mutex::new(None),
        })
    }

    pub fn pair(&self) -> &StaggeredPair {
        &self.pair
    }

    pub fn law(&self) -> &BoundaryLaw {
        &self.law
    }

    /// Monotonicity certificate of the underlying boundary law.
    pub fn monotone_certificate(&self) -> f64 {
        self.law.monotone_certificate(self.space.grid())
    }

    /// Split a stacked state signal into its node and midpoint parts.
    pub fn split_state(&self, x: &Signal) -> Result<(Signal, Signal)> {
        x.split_at_dim(self.pair.cells() + 1)
    }

    /// Endpoint traces of the node block of a stacked state signal.
    pub fn trace_signal(&self, x: &Signal) -> Result<Signal> {
        let (u, _) = self.split_state(x)?;
        let n = self.pair.cells();
        Ok(u.map_nodes(|_, v| DVector::from_column_slice(&[v[0], v[n]])))
    }

    /// Recover the outward fluxes from a value `a = (D_F v, G u)` of the
    /// relation together with the midpoint block `v` of the state.
    pub fn fluxes_from_value(&self, a_value: &Signal, v: &Signal) -> Result<Signal> {
        let n = self.pair.cells();
        let ell = self.pair.step();
        let (a0, _) = a_value.split_at_dim(n + 1)?;
        a0.check_same_grid(v)?;
        Ok(Signal::from_fn(a0.grid(), 2, |k, _| {
            let f_l = v.node(k)[0] - a0.node(k)[0] * C64::new(0.5 * ell, 0.0);
            let f_r = v.node(k)[n - 1] + a0.node(k)[n] * C64::new(0.5 * ell, 0.0);
            DVector::from_column_slice(&[-f_l, f_r])
        }))
    }

    fn with_cache<T>(&self, lambda: f64, f: impl FnOnce(&ResolveCache) -> Result<T>) -> Result<T> {
        let bits = lambda.to_bits();
        let mut guard = self.cache.lock().expect("boundary cache poisoned");
        let rebuild = match guard.as_ref() {
            Some(c) => c.lambda_bits != bits,
            None => true,
        };
        if rebuild {
            let n = self.pair.cells();
            let mut e = DMatrix::<C64>::identity(n + 1, n + 1);
            e += &self.k_mat * C64::new(lambda * lambda, 0.0);
            let lu = Factorized::new(e)?;
            let mut rhs0 = DVector::<C64>::zeros(n + 1);
            rhs0[0] = C64::new(1.0, 0.0);
            let col0 = lu.solve(&rhs0)?;
            let mut rhsn = DVector::<C64>::zeros(n + 1);
            rhsn[n] = C64::new(1.0, 0.0);
            let coln = lu.solve(&rhsn)?;
            let scale = 2.0 * lambda / self.pair.step();
            let t00 = col0[0].re;
            let t0n = coln[0].re;
            let tn0 = col0[n].re;
            let tnn = coln[n].re;
            let q = Matrix2::new(
                scale * t00,
                scale * 0.5 * (t0n + tn0),
                scale * 0.5 * (t0n + tn0),
                scale * tnn,
            );
            if !(q[(0, 0)] > 0.0 && q[(0, 0)] * q[(1, 1)] - q[(0, 1)] * q[(1, 0)] > 0.0) {
                return Err(CoreError::NotPositiveDefinite(
                    "endpoint trace response lost positive definiteness".into(),
                ));
            }
            *guard = Some(ResolveCache {
                lambda_bits: bits,
                lu,
                col0,
                coln,
                q,
            });
        }
        f(guard.as_ref().expect("cache populated above"))
    }

    /// Resolvent with full trace information.
    pub fn resolve_detailed(&self, lambda: f64, y: &Signal) -> Result<BoundaryResolve> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(CoreError::InvalidConfig(
                "resolvent parameter must be positive and finite".into(),
            ));
        }
        let n = self.pair.cells();
        let ell = self.pair.step();
        let grid = self.space.grid().clone();
        let (f, g) = y.split_at_dim(n + 1)?;
        self.with_cache(lambda, |cache| {
            // Eliminate v = g - lambda G u and solve the node system.
            let ftilde = Signal::from_fn(&grid, n + 1, |k, _| {
                let fk = f.node(k);
                let gk = g.node(k);
                let mut out = DVector::zeros(n + 1);
                out[0] = fk[0] - gk[0] * C64::new(2.0 * lambda / ell, 0.0);
                for i in 1..n {
                    out[i] = fk[i] - (gk[i] - gk[i - 1]) * C64::new(lambda / ell, 0.0);
                }
                out[n] = fk[n] + gk[n - 1] * C64::new(2.0 * lambda / ell, 0.0);
                out
            });
            let mut w_nodes = Vec::with_capacity(grid.len());
            for k in 0..grid.len() {
                w_nodes.push(cache.lu.solve(ftilde.node(k))?);
            }
            let b = Signal::from_fn(&grid, 2, |k, _| {
                DVector::from_column_slice(&[w_nodes[k][0], w_nodes[k][n]])
            });
            let (_x_tr, phi, leakage) = self.law.resolve_metric(&cache.q, &b)?;
            let scale = C64::new(2.0 * lambda / ell, 0.0);
            let u = Signal::from_fn(&grid, n + 1, |k, _| {
                let p = phi.node(k);
                &w_nodes[k] - (&cache.col0 * (scale * p[0]) + &cache.coln * (scale * p[1]))
            });
            let v = Signal::from_fn(&grid, n, |k, _| {
                let gu = self.pair.grad.apply(u.node(k));
                g.node(k) - gu * C64::new(lambda, 0.0)
            });
            let state = u.concat_dims(&v)?;
            let trace = Signal::from_fn(&grid, 2, |k, _| {
                DVector::from_column_slice(&[u.node(k)[0], u.node(k)[n]])
            });
            Ok(BoundaryResolve {
                state,
                trace,
                ntrace: phi,
                leakage,
            })
        })
    }

    /// Residuals of the resolvent postconditions, normalized by the data
    /// size: the defining equation `(I + lambda A)(u, v) = (f, g)` evaluated
    /// with the recovered fluxes, and the fixed-point membership test of the
    /// trace/flux pair in the boundary law.
    pub fn check_resolve(&self, lambda: f64, y: &Signal, res: &BoundaryResolve) -> Result<(f64, f64)> {
        let n = self.pair.cells();
        let grid = self.space.grid().clone();
        let (f, g) = y.split_at_dim(n + 1)?;
        let (u, v) = self.split_state(&res.state)?;
        let scale = y.wnorm().max(1.0);

        let mut eq_err2 = 0.0;
        for k in 0..grid.len() {
            let p = res.ntrace.node(k);
            let f_l = -p[0];
            let f_r = p[1];
            let dfv = self.pair.apply_flux_div(v.node(k), f_l, f_r);
            let r1 = u.node(k) + dfv * C64::new(lambda, 0.0) - f.node(k);
            let r2 = v.node(k) + self.pair.grad.apply(u.node(k)) * C64::new(lambda, 0.0) - g.node(k);
            let wk = grid.weight(k);
            eq_err2 += wk * (self.pair.nodes().inner(&r1, &r1).re + self.pair.mids().inner(&r2, &r2).re);
        }
        let eq_err = eq_err2.max(0.0).sqrt() / scale;

        let z = res.trace.add(&res.ntrace)?;
        let (x_back, _, _) = self.law.resolve_metric(&Matrix2::identity(), &z)?;
        let mem = x_back.sub(&res.trace)?.wnorm() / scale;
        Ok((eq_err, mem))
    }
}

impl Relation<SignalSpace> for BoundaryOperator {
    fn space(&self) -> &SignalSpace {
        &self.space
    }

    fn resolve(&self, lambda: f64, y: &Signal) -> Result<Signal> {
        Ok(self.resolve_detailed(lambda, y)?.state)
    }

    fn contains_zero_pair(&self) -> bool {
        true
    }

    fn time_invariant_claimed(&self) -> bool {
        true
    }
}

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

/// Serializable description of a boundary law.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryConfig {
    Zero,
    Linear { matrix: Vec<Vec<f64>> },
    Impedance { coeffs: Vec<f64> },
    Friction { mu: f64 },
}

impl BoundaryConfig {
    pub fn build(&self) -> Result<BoundaryLaw> {
        let law = match self {
            BoundaryConfig::Zero => BoundaryLaw::Zero,
            BoundaryConfig::Linear { matrix } => {
                if matrix.len() != 2 || matrix.iter().any(|r| r.len() != 2) {
                    return Err(CoreError::InvalidConfig(
                        "boundary coupling matrix must be 2x2".into(),
                    ));
                }
                let alpha = Matrix2::new(
                    C64::new(matrix[0][0], 0.0),
                    C64::new(matrix[0][1], 0.0),
                    C64::new(matrix[1][0], 0.0),
                    C64::new(matrix[1][1], 0.0),
                );
                BoundaryLaw::Linear { alpha }
            }
            BoundaryConfig::Impedance { coeffs } => BoundaryLaw::Impedance {
                coeffs: coeffs.clone(),
            },
            BoundaryConfig::Friction { mu } => BoundaryLaw::Friction { mu: *mu },
        };
        law.validate()?;
        Ok(law)
    }
}

// ---------------------------------------------------------------------------
// Tests.
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monotone::{
        check_causal_positivity, check_monotonicity, check_resolvents, check_time_invariance,
        CheckOptions, HilbertSpace,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_grid() -> TimeGrid {
        TimeGrid::new(16, 0.25, 0.8, 3).unwrap()
    }

    #[test]
    fn summation_by_parts_identity_is_exact() {
        let pair = StaggeredPair::new(17, 2.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let u = pair.nodes().random_vec(&mut rng, 1.0);
            let q = pair.mids().random_vec(&mut rng, 1.0);
            let scale = (1.0 + pair.nodes().norm(&u)) * (1.0 + pair.mids().norm(&q));
            assert!(pair.sbp_defect(&u, &q).norm() <= 1e-13 * scale);
        }
        // End-pinned u makes G and -D exact adjoints.
        for _ in 0..20 {
            let mut u = pair.nodes().random_vec(&mut rng, 1.0);
            u[0] = C64::new(0.0, 0.0);
            u[pair.cells()] = C64::new(0.0, 0.0);
            let q = pair.mids().random_vec(&mut rng, 1.0);
            let lhs = pair.mids().inner(&pair.grad().apply(&u), &q);
            let rhs = -pair.nodes().inner(&u, &pair.div().apply(&q));
            assert!((lhs - rhs).norm() <= 1e-13 * (1.0 + lhs.norm()));
        }
        // Flux-free q makes D and -G exact adjoints.
        for _ in 0..20 {
            let u = pair.nodes().random_vec(&mut rng, 1.0);
            let q = pair.project_flux_free(&pair.mids().random_vec(&mut rng, 1.0));
            let tq = pair.mid_traces(&q);
            assert!(tq[0].norm() <= 1e-12 && tq[1].norm() <= 1e-12);
            let lhs = pair.nodes().inner(&pair.div().apply(&q), &u);
            let rhs = -pair.mids().inner(&q, &pair.grad().apply(&u));
            assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + lhs.norm()));
        }
    }

    #[test]
    fn one_sided_stencils_have_design_accuracy() {
        let pair = StaggeredPair::new(12, 1.5) .unwrap();
        // Quadratic data: boundary divergence rows are exact derivatives.
        let (a, b, c) = (0.7, -1.3, 0.45);
        let q = DVector::from_fn(pair.cells(), |j, _| {
            let x = pair.mid_x(j);
            C64::new(a + b * x + c * x * x, 0.0)
        });
        let dq = pair.div().apply(&q);
        let exact0 = b; // derivative at x = 0
        let exactn = b + 2.0 * c * pair.length();
        assert!((dq[0].re - exact0).abs() <= 1e-11);
        assert!((dq[pair.cells()].re - exactn).abs() <= 1e-11);
        // Affine data: traces reproduce endpoint values exactly.
        let q_lin = DVector::from_fn(pair.cells(), |j, _| {
            let x = pair.mid_x(j);
            C64::new(2.0 - 0.8 * x, 0.0)
        });
        let t = pair.mid_traces(&q_lin);
        assert!((t[0].re - 2.0).abs() <= 1e-12);
        assert!((t[1].re - (2.0 - 0.8 * pair.length())).abs() <= 1e-12);
        // Quadratic data: trace error is the predicted ell^2 / 4 curvature term.
        let t2 = pair.mid_traces(&q);
        let ell = pair.step();
        assert!((t2[0].re - (a + c * ell * ell / 4.0)).abs() <= 1e-12);
    }

    #[test]
    fn boundary_data_bases_have_dimension_two_and_satisfy_duality() {
        for n in [12usize, 24] {
            let pair = StaggeredPair::new(n, 1.0).unwrap();
            let bg = pair.bd_basis_grad().unwrap();
            let bd = pair.bd_basis_div().unwrap();

            // Trace-canonical bases hit exact endpoint data.
            let tg0 = pair.node_traces(&bg.canonical[0]);
            let tg1 = pair.node_traces(&bg.canonical[1]);
            assert!((tg0[0] - C64::new(1.0, 0.0)).norm() <= 1e-10 && tg0[1].norm() <= 1e-10);
            assert!(tg1[0].norm() <= 1e-10 && (tg1[1] - C64::new(1.0, 0.0)).norm() <= 1e-10);
            let td0 = pair.mid_traces(&bd.canonical[0]);
            let td1 = pair.mid_traces(&bd.canonical[1]);
            assert!((td0[0] - C64::new(1.0, 0.0)).norm() <= 1e-10 && td0[1].norm() <= 1e-10);
            assert!(td1[0].norm() <= 1e-10 && (td1[1] - C64::new(1.0, 0.0)).norm() <= 1e-10);

            // Graph-orthogonality against the masked subspaces.
            for i in 1..n {
                let mut e = DVector::<C64>::zeros(n + 1);
                e[i] = C64::new(1.0, 0.0);
                for b in &bg.onb {
                    assert!(pair.graph_inner_nodes(b, &e).norm() <= 1e-9);
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..40 {
                let p = pair.project_flux_free(&pair.mids().random_vec(&mut rng, 1.0));
                for b in &bd.onb {
                    assert!(pair.graph_inner_mids(b, &p).norm() <= 1e-9 * (1.0 + pair.mids().norm(&p)));
                }
            }

            // Interior three-term recurrence u_{i+1} = (2 + ell^2) u_i - u_{i-1}.
            let ell = pair.step();
            for b in &bg.onb {
                for i in 1..n {
                    let r = b[i + 1] - b[i] * C64::new(2.0 + ell * ell, 0.0) + b[i - 1];
                    assert!(r.norm() <= 1e-9 * (1.0 + b[i].norm()));
                }
            }

            // Orthonormality in the graph metric.
            assert!((pair.graph_inner_nodes(&bg.onb[0], &bg.onb[0]).re - 1.0).abs() <= 1e-10);
            assert!(pair.graph_inner_nodes(&bg.onb[0], &bg.onb[1]).norm() <= 1e-10);
            assert!((pair.graph_inner_mids(&bd.onb[1], &bd.onb[1]).re - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn boundary_transfer_converges_to_the_continuum_map() {
        let coarse = StaggeredPair::new(16, 1.0).unwrap();
        let fine = StaggeredPair::new(64, 1.0).unwrap();

        let d_coarse = coarse.unitarity_defect().unwrap();
        let d_fine = fine.unitarity_defect().unwrap();
        assert!(d_fine < d_coarse, "defect should shrink: {d_coarse} -> {d_fine}");
        assert!(d_fine < 0.1);

        let u = fine.continuum_div_trace_matrix();
        let err = |p: &StaggeredPair| -> f64 {
            let m = p.bullet_div_trace_matrix().unwrap();
            let mut worst = 0.0_f64;
            for r in 0..2 {
                for c in 0..2 {
                    worst = worst.max((m[(r, c)] - C64::new(u[(r, c)], 0.0)).norm());
                }
            }
            worst
        };
        let e_coarse = err(&coarse);
        let e_fine = err(&fine);
        assert!(e_fine < e_coarse);
        assert!(e_fine < 0.1);

        let a_coarse = coarse.bd_grad_continuum_angle().unwrap();
        let a_fine = fine.bd_grad_continuum_angle().unwrap();
        assert!(a_fine < a_coarse);
        assert!(a_fine < 0.05);
    }

    #[test]
    fn flux_pairing_identity_is_exact() {
        let pair = StaggeredPair::new(9, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let u = pair.nodes().random_vec(&mut rng, 1.0);
            let v = pair.mids().random_vec(&mut rng, 1.0);
            let f_l = C64::new(0.3, -0.8) * pair.nodes().random_vec(&mut rng, 1.0)[0];
            let f_r = C64::new(-1.1, 0.4) * pair.nodes().random_vec(&mut rng, 1.0)[0];
            let dfv = pair.apply_flux_div(&v, f_l, f_r);
            let lhs = pair.nodes().inner(&u, &dfv) + pair.mids().inner(&pair.grad().apply(&u), &v);
            let tu = pair.node_traces(&u);
            let rhs = tu[0].conj() * (-f_l) + tu[1].conj() * f_r;
            assert!((lhs - rhs).norm() <= 1e-13 * (1.0 + lhs.norm() + rhs.norm()));
        }
    }

    #[test]
    fn boundary_resolvent_satisfies_postconditions_for_every_law() {
        let grid = test_grid();
        let pair = StaggeredPair::new(12, 1.0).unwrap();
        let laws: Vec<(BoundaryLaw, f64)> = vec![
            (BoundaryLaw::Zero, 1e-9),
            (
                BoundaryLaw::Linear {
                    alpha: Matrix2::new(
                        C64::new(1.0, 0.0),
                        C64::new(0.3, 0.0),
                        C64::new(0.3, 0.0),
                        C64::new(2.0, 0.0),
                    ),
                },
                1e-9,
            ),
            (BoundaryLaw::Impedance { coeffs: vec![0.0, 0.7] }, 1e-8),
            (BoundaryLaw::Impedance { coeffs: vec![0.0, 0.5, 0.2] }, 1e-7),
            (BoundaryLaw::Friction { mu: 0.5 }, 1e-7),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (law, tol) in laws {
            let op = BoundaryOperator::new(pair.clone(), &grid, law.clone()).unwrap();
            assert!(op.monotone_certificate() >= -1e-12, "law {law:?} must be monotone");
            for &lambda in &[0.1, 1.0, 10.0] {
                for _ in 0..3 {
                    let y = op.space().random_elem(&mut rng, 1.0);
                    let res = op.resolve_detailed(lambda, &y).unwrap();
                    let (eq, mem) = op.check_resolve(lambda, &y, &res).unwrap();
                    assert!(
                        eq <= tol,
                        "equation residual {eq} over {tol} for {law:?} at lambda {lambda}"
                    );
                    assert!(
                        mem <= tol.max(1e-7),
                        "membership residual {mem} for {law:?} at lambda {lambda}"
                    );
                }
            }
        }
    }

    #[test]
    fn boundary_resolvent_matches_dense_elimination() {
        let grid = TimeGrid::new(8, 0.25, 0.8, 3).unwrap();
        let pair = StaggeredPair::new(8, 1.0).unwrap();
        let n = pair.cells();
        let ell = pair.step();
        let alpha = Matrix2::new(
            C64::new(1.0, 0.0),
            C64::new(0.4, 0.0),
            C64::new(0.1, 0.0),
            C64::new(0.5, 0.0),
        );
        let op = BoundaryOperator::new(pair.clone(), &grid, BoundaryLaw::Linear { alpha }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for &lambda in &[0.3, 2.0] {
            let y = op.space().random_elem(&mut rng, 1.0);
            let res = op.resolve_detailed(lambda, &y).unwrap();
            let (f, g) = y.split_at_dim(n + 1).unwrap();

            // Dense per-node system over (u, v, F_l, F_r).
            let dim = 2 * n + 3;
            for k in 0..grid.len() {
                let mut m = DMatrix::<C64>::zeros(dim, dim);
                let mut rhs = DVector::<C64>::zeros(dim);
                let iu = |i: usize| i;
                let iv = |j: usize| n + 1 + j;
                let ifl = 2 * n + 1;
                let ifr = 2 * n + 2;
                // Node equations u + lambda D_F v = f.
                m[(0, iu(0))] = C64::new(1.0, 0.0);
                m[(0, iv(0))] = C64::new(2.0 * lambda / ell, 0.0);
                m[(0, ifl)] = C64::new(-2.0 * lambda / ell, 0.0);
                rhs[0] = f.node(k)[0];
                for i in 1..n {
                    m[(i, iu(i))] = C64::new(1.0, 0.0);
                    m[(i, iv(i))] = C64::new(lambda / ell, 0.0);
                    m[(i, iv(i - 1))] = C64::new(-lambda / ell, 0.0);
                    rhs[i] = f.node(k)[i];
                }
                m[(n, iu(n))] = C64::new(1.0, 0.0);
                m[(n, ifr)] = C64::new(2.0 * lambda / ell, 0.0);
                m[(n, iv(n - 1))] = C64::new(-2.0 * lambda / ell, 0.0);
                rhs[n] = f.node(k)[n];
                // Midpoint equations v + lambda G u = g.
                for j in 0..n {
                    let r = n + 1 + j;
                    m[(r, iv(j))] = C64::new(1.0, 0.0);
                    m[(r, iu(j + 1))] = C64::new(lambda / ell, 0.0);
                    m[(r, iu(j))] = C64::new(-lambda / ell, 0.0);
                    rhs[r] = g.node(k)[j];
                }
                // Boundary law: (-F_l, F_r) = alpha (u_0, u_n).
                m[(2 * n + 1, ifl)] = C64::new(-1.0, 0.0);
                m[(2 * n + 1, iu(0))] = -alpha[(0, 0)];
                m[(2 * n + 1, iu(n))] = -alpha[(0, 1)];
                m[(2 * n + 2, ifr)] = C64::new(1.0, 0.0);
                m[(2 * n + 2, iu(0))] = -alpha[(1, 0)];
                m[(2 * n + 2, iu(n))] = -alpha[(1, 1)];

                let sol = Factorized::new(m).unwrap().solve(&rhs).unwrap();
                let state_k = res.state.node(k);
                for i in 0..n + 1 {
                    assert!((state_k[i] - sol[iu(i)]).norm() <= 1e-9);
                }
                for j in 0..n {
                    assert!((state_k[n + 1 + j] - sol[iv(j)]).norm() <= 1e-9);
                }
                let p = res.ntrace.node(k);
                assert!((p[0] - (-sol[ifl])).norm() <= 1e-9);
                assert!((p[1] - sol[ifr]).norm() <= 1e-9);
            }
        }
    }

    #[test]
    fn boundary_operator_passes_structure_checks() {
        let grid = test_grid();
        let pair = StaggeredPair::new(8, 1.0).unwrap();
        let laws = vec![
            BoundaryLaw::Friction { mu: 0.3 },
            BoundaryLaw::Impedance { coeffs: vec![0.0, 0.5] },
        ];
        for law in laws {
            let op = BoundaryOperator::new(pair.clone(), &grid, law.clone()).unwrap();
            let opts = CheckOptions {
                pairs: 8,
                lambdas: vec![0.5, 1.0],
                seed: 0x10ad,
                scale: 1.0,
            };
            let mono = check_monotonicity(&op, &opts).unwrap();
            assert!(mono.ok, "monotonicity failed for {law:?}: {mono:?}");
            let resv = check_resolvents(&op, &opts).unwrap();
            assert!(resv.ok, "resolvent bounds failed for {law:?}: {resv:?}");
            let ti = check_time_invariance(&op, &opts).unwrap();
            assert!(ti.ok, "time invariance failed for {law:?}: {ti:?}");
            let cp = check_causal_positivity(&op, &opts).unwrap();
            assert!(cp.ok, "causal positivity failed for {law:?}: {cp:?}");
        }
    }

    #[test]
    fn boundary_law_relation_matches_scalar_models() {
        let grid = test_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(23);

        // Time-local impedance: resolvent divides by (1 + lambda c).
        let rel = BoundaryLawRelation::new(&grid, BoundaryLaw::Impedance { coeffs: vec![0.0, 0.7] })
            .unwrap();
        let y = rel.space().random_elem(&mut rng, 1.0);
        let x = rel.resolve(2.0, &y).unwrap();
        let expect = y.scale(C64::new(1.0 / (1.0 + 2.0 * 0.7), 0.0));
        assert!(x.sub(&expect).unwrap().wnorm() <= 1e-8 * y.wnorm());

        // Friction: resolvent is the componentwise soft threshold.
        let rel = BoundaryLawRelation::new(&grid, BoundaryLaw::Friction { mu: 0.4 }).unwrap();
        let y = rel.space().random_elem(&mut rng, 1.0);
        let x = rel.resolve(1.5, &y).unwrap();
        for k in 0..grid.len() {
            for c in 0..2 {
                let want = soft_threshold(y.node(k)[c], 1.5 * 0.4);
                assert!((x.node(k)[c] - want).norm() <= 1e-10);
            }
        }

        // Zero law: resolvent is the identity.
        let rel = BoundaryLawRelation::new(&grid, BoundaryLaw::Zero).unwrap();
        let y = rel.space().random_elem(&mut rng, 1.0);
        let x = rel.resolve(3.0, &y).unwrap();
        assert!(x.sub(&y).unwrap().wnorm() == 0.0);
    }

    #[test]
    fn boundary_configs_round_trip() {
        let cfgs = [
            r#"{"kind":"zero"}"#,
            r#"{"kind":"linear","matrix":[[1.0,0.0],[0.0,2.0]]}"#,
            r#"{"kind":"impedance","coeffs":[0.0,0.5]}"#,
            r#"{"kind":"friction","mu":0.25}"#,
        ];
        for s in cfgs {
            let cfg: BoundaryConfig = serde_json::from_str(s).unwrap();
            cfg.build().unwrap();
            let back = serde_json::to_string(&cfg).unwrap();
            let cfg2: BoundaryConfig = serde_json::from_str(&back).unwrap();
            cfg2.build().unwrap();
        }
        let bad: BoundaryConfig =
            serde_json::from_str(r#"{"kind":"friction","mu":-1.0}"#).unwrap();
        assert!(bad.build().is_err());
        let bad_shape: BoundaryConfig =
            serde_json::from_str(r#"{"kind":"linear","matrix":[[1.0],[2.0]]}"#).unwrap();
        assert!(bad_shape.build().is_err());
    }
}
