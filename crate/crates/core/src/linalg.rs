//! Dense complex linear algebra over finite-dimensional Hilbert spaces with
//! explicit metrics.
//!
//! Spatial discretizations in this crate carry non-trivial inner products
//! (quadrature weights, block products of node and cell spaces), so adjoints,
//! Hermitian parts and norms must be taken with respect to the metric of the
//! space, not the raw coordinate inner product.  [`StateSpace`] owns the
//! metric, [`LinOp`] is a dense operator between two such spaces, and all
//! derived quantities (adjoint, numerical range bounds, operator norms) are
//! metric-aware.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

/// Condition-number ceiling past which factorizations refuse to solve.
pub const COND_LIMIT: f64 = 1e12;

/// Inner-product weight of a [`StateSpace`].
///
/// Diagonal metrics (quadrature weights) are by far the common case and are
/// kept in a compact form; dense Hermitian positive definite metrics are
/// supported for completeness and carry their square root and inverse square
/// root, computed once at construction.
#[derive(Clone, Debug)]
pub enum Metric {
    Identity,
    Diagonal(DVector<f64>),
    Dense {
        w: DMatrix<C64>,
        sqrt: DMatrix<C64>,
        inv_sqrt: DMatrix<C64>,
    },
}

/// A finite-dimensional complex Hilbert space: a dimension plus a metric.
///
/// The inner product is `<x|y> = x^H W y`, conjugate-linear in the first
/// argument.
#[derive(Clone, Debug)]
pub struct StateSpace {
    dim: usize,
    metric: Metric,
}

impl StateSpace {
    /// Standard space of the given dimension (identity metric).
    pub fn standard(dim: usize) -> Self {
        StateSpace {
            dim,
            metric: Metric::Identity,
        }
    }

    /// Space with a diagonal metric of strictly positive weights.
    pub fn diagonal(weights: DVector<f64>) -> Result<Self> {
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(CoreError::NotPositiveDefinite(
                "diagonal metric weights must be finite and > 0".into(),
            ));
        }
        Ok(StateSpace {
            dim: weights.len(),
            metric: Metric::Diagonal(weights),
        })
    }

    /// Space with a dense Hermitian positive definite metric.
    pub fn dense(w: DMatrix<C64>) -> Result<Self> {
        let dim = w.nrows();
        if w.ncols() != dim {
            return Err(CoreError::DimensionMismatch(format!(
                "metric must be square, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        let herm_defect = (&w - w.adjoint()).norm() / (1.0 + w.norm());
        if herm_defect > 1e-12 {
            return Err(CoreError::NotPositiveDefinite(format!(
                "metric not Hermitian (defect {herm_defect:.3e})"
            )));
        }
        let sym = (w.clone() + w.adjoint()) * C64::new(0.5, 0.0);
        let eig = nalgebra::SymmetricEigen::new(sym);
        let min = eig.eigenvalues.min();
        if !(min > 0.0) {
            return Err(CoreError::NotPositiveDefinite(format!(
                "metric has eigenvalue {min:.3e}"
            )));
        }
        let q = &eig.eigenvectors;
        let d_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::new(l.sqrt(), 0.0)));
        let d_isqrt =
            DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::new(1.0 / l.sqrt(), 0.0)));
        let sqrt = q * d_sqrt * q.adjoint();
        let inv_sqrt = q * d_isqrt * q.adjoint();
        Ok(StateSpace {
            dim,
            metric: Metric::Dense { w, sqrt, inv_sqrt },
        })
    }

    /// Product of two spaces: dimensions add, metrics stack block-diagonally.
    pub fn product(&self, other: &StateSpace) -> StateSpace {
        let dim = self.dim + other.dim;
        let metric = match (&self.metric, &other.metric) {
            (Metric::Identity, Metric::Identity) => Metric::Identity,
            (a, b) => {
                let mut w = DVector::zeros(dim);
                let block = |m: &Metric, d: usize| -> Option<DVector<f64>> {
                    match m {
                        Metric::Identity => Some(DVector::from_element(d, 1.0)),
                        Metric::Diagonal(v) => Some(v.clone()),
                        Metric::Dense { .. } => None,
                    }
                };
                match (block(a, self.dim), block(b, other.dim)) {
                    (Some(wa), Some(wb)) => {
                        w.rows_mut(0, self.dim).copy_from(&wa);
                        w.rows_mut(self.dim, other.dim).copy_from(&wb);
                        Metric::Diagonal(w)
                    }
                    _ => {
                        let mut dw = DMatrix::zeros(dim, dim);
                        dw.view_mut((0, 0), (self.dim, self.dim))
                            .copy_from(&self.metric_matrix());
                        dw.view_mut((self.dim, self.dim), (other.dim, other.dim))
                            .copy_from(&other.metric_matrix());
                        return StateSpace::dense(dw).expect("blocks are positive definite");
                    }
                }
            }
        };
        StateSpace { dim, metric }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    /// Dense matrix form of the metric.
    pub fn metric_matrix(&self) -> DMatrix<C64> {
        match &self.metric {
            Metric::Identity => DMatrix::identity(self.dim, self.dim),
            Metric::Diagonal(w) => DMatrix::from_diagonal(&w.map(|x| C64::new(x, 0.0))),
            Metric::Dense { w, .. } => w.clone(),
        }
    }

    /// `W x`.
    pub fn apply_metric(&self, x: &DVector<C64>) -> DVector<C64> {
        match &self.metric {
            Metric::Identity => x.clone(),
            Metric::Diagonal(w) => x.zip_map(w, |xi, wi| xi * wi),
            Metric::Dense { w, .. } => w * x,
        }
    }

    /// `W^{-1} x`.
    pub fn apply_metric_inv(&self, x: &DVector<C64>) -> DVector<C64> {
        match &self.metric {
            Metric::Identity => x.clone(),
            Metric::Diagonal(w) => x.zip_map(w, |xi, wi| xi / wi),
            Metric::Dense { inv_sqrt, .. } => inv_sqrt * (inv_sqrt * x),
        }
    }

    /// `W^{1/2} x`.
    pub fn apply_metric_sqrt(&self, x: &DVector<C64>) -> DVector<C64> {
        match &self.metric {
            Metric::Identity => x.clone(),
            Metric::Diagonal(w) => x.zip_map(w, |xi, wi| xi * wi.sqrt()),
            Metric::Dense { sqrt, .. } => sqrt * x,
        }
    }

    /// `W^{-1/2} x`.
    pub fn apply_metric_inv_sqrt(&self, x: &DVector<C64>) -> DVector<C64> {
        match &self.metric {
            Metric::Identity => x.clone(),
            Metric::Diagonal(w) => x.zip_map(w, |xi, wi| xi / wi.sqrt()),
            Metric::Dense { inv_sqrt, .. } => inv_sqrt * x,
        }
    }

    /// Inner product `<x|y> = x^H W y`, conjugate-linear in `x`.
    pub fn inner(&self, x: &DVector<C64>, y: &DVector<C64>) -> C64 {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        match &self.metric {
            Metric::Identity => x.dotc(y),
            Metric::Diagonal(w) => {
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..self.dim {
                    acc += x[i].conj() * y[i] * w[i];
                }
                acc
            }
            Metric::Dense { w, .. } => x.dotc(&(w * y)),
        }
    }

    pub fn norm(&self, x: &DVector<C64>) -> f64 {
        self.inner(x, x).re.max(0.0).sqrt()
    }

    pub fn zero_vec(&self) -> DVector<C64> {
        DVector::zeros(self.dim)
    }

    /// Standard-Gaussian random vector (real and imaginary parts).
    pub fn random_vec(&self, rng: &mut ChaCha8Rng, scale: f64) -> DVector<C64> {
        DVector::from_fn(self.dim, |_, _| {
            C64::new(
                scale * gaussian(rng),
                scale * gaussian(rng),
            )
        })
    }

    /// Real-valued random vector, useful for problems posed over the reals.
    pub fn random_real_vec(&self, rng: &mut ChaCha8Rng, scale: f64) -> DVector<C64> {
        DVector::from_fn(self.dim, |_, _| C64::new(scale * gaussian(rng), 0.0))
    }

    pub fn same_shape(&self, other: &StateSpace) -> bool {
        self.dim == other.dim
    }
}

/// Box-Muller standard normal; avoids pulling in a distributions crate for
/// the one sampler the crate needs.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>();
        let v: f64 = rng.gen::<f64>();
        if u > f64::MIN_POSITIVE {
            return (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos();
        }
    }
}

/// Dense linear operator between two [`StateSpace`]s.
#[derive(Clone, Debug)]
pub struct LinOp {
    dom: StateSpace,
    cod: StateSpace,
    mat: DMatrix<C64>,
}

impl LinOp {
    pub fn new(dom: StateSpace, cod: StateSpace, mat: DMatrix<C64>) -> Result<Self> {
        if mat.ncols() != dom.dim() || mat.nrows() != cod.dim() {
            return Err(CoreError::DimensionMismatch(format!(
                "operator is {}x{} but dom/cod have dims {}/{}",
                mat.nrows(),
                mat.ncols(),
                dom.dim(),
                cod.dim()
            )));
        }
        Ok(LinOp { dom, cod, mat })
    }

    pub fn from_real(dom: StateSpace, cod: StateSpace, mat: DMatrix<f64>) -> Result<Self> {
        LinOp::new(dom, cod, mat.map(|x| C64::new(x, 0.0)))
    }

    pub fn identity(space: &StateSpace) -> Self {
        LinOp {
            dom: space.clone(),
            cod: space.clone(),
            mat: DMatrix::identity(space.dim(), space.dim()),
        }
    }

    pub fn zero(dom: &StateSpace, cod: &StateSpace) -> Self {
        LinOp {
            dom: dom.clone(),
            cod: cod.clone(),
            mat: DMatrix::zeros(cod.dim(), dom.dim()),
        }
    }

    /// Block-diagonal operator on the product of the domains.
    pub fn block_diag(a: &LinOp, b: &LinOp) -> Self {
        let dom = a.dom.product(&b.dom);
        let cod = a.cod.product(&b.cod);
        let mut mat = DMatrix::zeros(cod.dim(), dom.dim());
        mat.view_mut((0, 0), (a.cod.dim(), a.dom.dim())).copy_from(&a.mat);
        mat.view_mut((a.cod.dim(), a.dom.dim()), (b.cod.dim(), b.dom.dim()))
            .copy_from(&b.mat);
        LinOp { dom, cod, mat }
    }

    pub fn dom(&self) -> &StateSpace {
        &self.dom
    }

    pub fn cod(&self) -> &StateSpace {
        &self.cod
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn apply(&self, x: &DVector<C64>) -> DVector<C64> {
        &self.mat * x
    }

    /// Metric adjoint `T^* = W_dom^{-1} T^H W_cod`, an operator cod -> dom.
    ///
    /// Satisfies `<Tx|y>_cod = <x|T^* y>_dom` exactly (up to round-off).
    pub fn adjoint(&self) -> LinOp {
        let th = self.mat.adjoint();
        let wy = match &self.cod.metric {
            Metric::Identity => th,
            _ => th * self.cod.metric_matrix(),
        };
        let mat = match &self.dom.metric {
            Metric::Identity => wy,
            Metric::Diagonal(w) => {
                let mut m = wy;
                for i in 0..m.nrows() {
                    let s = 1.0 / w[i];
                    for j in 0..m.ncols() {
                        m[(i, j)] *= s;
                    }
                }
                m
            }
            Metric::Dense { inv_sqrt, .. } => inv_sqrt * (inv_sqrt * wy),
        };
        LinOp {
            dom: self.cod.clone(),
            cod: self.dom.clone(),
            mat,
        }
    }

    pub fn scale(&self, s: C64) -> LinOp {
        LinOp {
            dom: self.dom.clone(),
            cod: self.cod.clone(),
            mat: &self.mat * s,
        }
    }

    pub fn add(&self, other: &LinOp) -> Result<LinOp> {
        if !self.dom.same_shape(&other.dom) || !self.cod.same_shape(&other.cod) {
            return Err(CoreError::DimensionMismatch(
                "operator sum requires equal shapes".into(),
            ));
        }
        Ok(LinOp {
            dom: self.dom.clone(),
            cod: self.cod.clone(),
            mat: &self.mat + &other.mat,
        })
    }

    /// Composition `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &LinOp) -> Result<LinOp> {
        if !self.dom.same_shape(&other.cod) {
            return Err(CoreError::DimensionMismatch(
                "composition requires matching inner spaces".into(),
            ));
        }
        Ok(LinOp {
            dom: other.dom.clone(),
            cod: self.cod.clone(),
            mat: &self.mat * &other.mat,
        })
    }

    /// Operator norm estimate by power iteration on `T^* T`.
    ///
    /// Deterministic start vector; the result is a slight underestimate of
    /// the true norm, callers that need a safe upper bound should pad it.
    pub fn norm_est(&self) -> f64 {
        let n = self.dom.dim();
        if n == 0 {
            return 0.0;
        }
        let adj = self.adjoint();
        let mut x = DVector::from_fn(n, |i, _| C64::new(1.0 + (i as f64) / (n as f64 + 1.0), 0.3));
        let mut norm_x = self.dom.norm(&x);
        if norm_x == 0.0 {
            return 0.0;
        }
        x /= C64::new(norm_x, 0.0);
        let mut lam = 0.0f64;
        for _ in 0..40 {
            let y = adj.apply(&self.apply(&x));
            let rayleigh = self.dom.inner(&x, &y).re.max(0.0);
            norm_x = self.dom.norm(&y);
            if norm_x == 0.0 {
                return 0.0;
            }
            let next = rayleigh;
            x = y / C64::new(norm_x, 0.0);
            if (next - lam).abs() <= 1e-13 * next.abs().max(1.0) {
                lam = next;
                break;
            }
            lam = next;
        }
        lam.max(0.0).sqrt()
    }

    /// Smallest eigenvalue of the Hermitian part, taken in the metric of the
    /// (shared) domain space: `min_x Re<Tx|x> / <x|x>`.
    pub fn hermitian_min_eig(&self) -> Result<f64> {
        if !self.dom.same_shape(&self.cod) {
            return Err(CoreError::DimensionMismatch(
                "hermitian part requires an endomorphism".into(),
            ));
        }
        let b = match &self.dom.metric {
            Metric::Identity => self.mat.clone(),
            _ => {
                let sw = |x: DMatrix<C64>| -> DMatrix<C64> {
                    match &self.dom.metric {
                        Metric::Identity => x,
                        Metric::Diagonal(w) => {
                            let mut m = x;
                            for i in 0..m.nrows() {
                                let s = w[i].sqrt();
                                for j in 0..m.ncols() {
                                    m[(i, j)] *= s;
                                }
                            }
                            m
                        }
                        Metric::Dense { sqrt, .. } => sqrt * x,
                    }
                };
                let swi = |x: DMatrix<C64>| -> DMatrix<C64> {
                    match &self.dom.metric {
                        Metric::Identity => x,
                        Metric::Diagonal(w) => {
                            let mut m = x;
                            for j in 0..m.ncols() {
                                let s = 1.0 / w[j].sqrt();
                                for i in 0..m.nrows() {
                                    m[(i, j)] *= s;
                                }
                            }
                            m
                        }
                        Metric::Dense { inv_sqrt, .. } => x * inv_sqrt,
                    }
                };
                swi(sw(self.mat.clone()))
            }
        };
        let herm = (&b + b.adjoint()) * C64::new(0.5, 0.0);
        let eig = nalgebra::SymmetricEigen::new(herm);
        Ok(eig.eigenvalues.min())
    }

    /// LU factorization with a condition estimate, reusable across solves.
    pub fn factorize(&self) -> Result<Factorized> {
        Factorized::new(self.mat.clone())
    }

    /// One-shot solve `T x = b` with the condition guard.
    pub fn solve(&self, b: &DVector<C64>) -> Result<DVector<C64>> {
        self.factorize()?.solve(b)
    }
}

/// LU factorization (partial pivoting) of a square complex matrix together
/// with a cheap condition estimate.
pub struct Factorized {
    lu: nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>,
    dim: usize,
    cond_est: f64,
}

impl Factorized {
    pub fn new(mat: DMatrix<C64>) -> Result<Self> {
        let dim = mat.nrows();
        if mat.ncols() != dim {
            return Err(CoreError::DimensionMismatch(format!(
                "factorization requires a square matrix, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let norm1 = one_norm(&mat);
        let lu = mat.lu();
        // Quick degeneracy check on the pivots before the probe.
        let u = lu.u();
        let mut max_p = 0.0f64;
        let mut min_p = f64::INFINITY;
        for i in 0..dim {
            let p = u[(i, i)].norm();
            max_p = max_p.max(p);
            min_p = min_p.min(p);
        }
        if min_p == 0.0 || !min_p.is_finite() {
            return Err(CoreError::SingularOperator {
                cond: f64::INFINITY,
                limit: COND_LIMIT,
            });
        }
        let fact = Factorized {
            lu,
            dim,
            cond_est: 0.0,
        };
        // Randomized probe of ||T^{-1}||_1: max column-sum over solves
        // against a fixed set of +-1 vectors plus a few unit vectors.
        let mut inv_norm = 0.0f64;
        let probes = 8.min(dim);
        for k in 0..probes {
            let e = DVector::from_fn(dim, |i, _| {
                if i == (k * dim.max(1) / probes.max(1)) % dim {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            });
            if let Some(x) = fact.lu.solve(&e) {
                inv_norm = inv_norm.max(x.iter().map(|v| v.norm()).sum::<f64>());
            }
        }
        let mut sign = 1.0f64;
        let mixed = DVector::from_fn(dim, |_, _| {
            sign = -sign;
            C64::new(sign, 0.0)
        });
        if let Some(x) = fact.lu.solve(&mixed) {
            inv_norm = inv_norm.max(x.iter().map(|v| v.norm()).sum::<f64>());
        }
        let cond = norm1 * inv_norm;
        if !cond.is_finite() || cond > COND_LIMIT {
            return Err(CoreError::SingularOperator {
                cond,
                limit: COND_LIMIT,
            });
        }
        Ok(Factorized { cond_est: cond, ..fact })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cond_est(&self) -> f64 {
        self.cond_est
    }

    pub fn solve(&self, b: &DVector<C64>) -> Result<DVector<C64>> {
        if b.len() != self.dim {
            return Err(CoreError::DimensionMismatch(format!(
                "rhs has length {}, expected {}",
                b.len(),
                self.dim
            )));
        }
        self.lu.solve(b).ok_or(CoreError::SingularOperator {
            cond: f64::INFINITY,
            limit: COND_LIMIT,
        })
    }
}

fn one_norm(m: &DMatrix<C64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        let s: f64 = (0..m.nrows()).map(|i| m[(i, j)].norm()).sum();
        best = best.max(s);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn adjoint_moves_across_inner_product() {
        let mut r = rng(7);
        for trial in 0..100 {
            let n = 3 + trial % 5;
            let m = 2 + trial % 4;
            let dom = StateSpace::diagonal(DVector::from_fn(n, |i, _| 0.5 + (i as f64) * 0.3))
                .unwrap();
            let cod = StateSpace::diagonal(DVector::from_fn(m, |i, _| 1.0 + (i as f64) * 0.1))
                .unwrap();
            let mat = DMatrix::from_fn(m, n, |_, _| C64::new(gaussian(&mut r), gaussian(&mut r)));
            let t = LinOp::new(dom.clone(), cod.clone(), mat).unwrap();
            let ts = t.adjoint();
            let x = dom.random_vec(&mut r, 1.0);
            let y = cod.random_vec(&mut r, 1.0);
            let lhs = cod.inner(&t.apply(&x), &y);
            let rhs = dom.inner(&x, &ts.apply(&y));
            assert!(
                (lhs - rhs).norm() <= 1e-10 * (1.0 + lhs.norm()),
                "adjoint identity violated: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn adjoint_with_dense_metric() {
        let mut r = rng(13);
        let n = 5;
        let a = DMatrix::from_fn(n, n, |_, _| C64::new(gaussian(&mut r), gaussian(&mut r)));
        let w = &a * a.adjoint() + DMatrix::identity(n, n) * C64::new(0.5, 0.0);
        let sp = StateSpace::dense(w).unwrap();
        let mat = DMatrix::from_fn(n, n, |_, _| C64::new(gaussian(&mut r), gaussian(&mut r)));
        let t = LinOp::new(sp.clone(), sp.clone(), mat).unwrap();
        let ts = t.adjoint();
        for _ in 0..20 {
            let x = sp.random_vec(&mut r, 1.0);
            let y = sp.random_vec(&mut r, 1.0);
            let lhs = sp.inner(&t.apply(&x), &y);
            let rhs = sp.inner(&x, &ts.apply(&y));
            assert!((lhs - rhs).norm() <= 1e-9 * (1.0 + lhs.norm()));
        }
    }

    #[test]
    fn hermitian_min_eig_matches_pencil_formulation() {
        let mut r = rng(29);
        let n = 6;
        let weights = DVector::from_fn(n, |i, _| 1.0 + i as f64);
        let sp = StateSpace::diagonal(weights.clone()).unwrap();
        let mat = DMatrix::from_fn(n, n, |_, _| C64::new(gaussian(&mut r), gaussian(&mut r)));
        let t = LinOp::new(sp.clone(), sp.clone(), mat).unwrap();
        let lam = t.hermitian_min_eig().unwrap();

        // Independent route: Re<Tx|x>_W = x^H H x with H = (W T + T^H W)/2,
        // so the bound is the smallest eigenvalue of W^{-1/2} H W^{-1/2}.
        let w = sp.metric_matrix();
        let h_raw = (&w * t.matrix() + t.matrix().adjoint() * &w) * C64::new(0.5, 0.0);
        let isqrt = DMatrix::from_diagonal(&weights.map(|x| C64::new(1.0 / x.sqrt(), 0.0)));
        let pencil = &isqrt * h_raw * &isqrt;
        let oracle = nalgebra::SymmetricEigen::new(pencil).eigenvalues.min();
        assert!((lam - oracle).abs() <= 1e-11 * (1.0 + oracle.abs()));

        // The value really is a lower bound of the Rayleigh quotient.
        for _ in 0..500 {
            let x = sp.random_vec(&mut r, 1.0);
            let q = sp.inner(&x, &t.apply(&x)).re / sp.inner(&x, &x).re;
            assert!(q >= lam - 1e-9);
        }
    }

    #[test]
    fn norm_est_matches_known_norm() {
        let sp = StateSpace::standard(4);
        let mat = DMatrix::from_diagonal(&DVector::from_vec(vec![
            C64::new(3.0, 0.0),
            C64::new(-1.0, 0.0),
            C64::new(0.5, 0.0),
            C64::new(2.0, 0.0),
        ]));
        let t = LinOp::new(sp.clone(), sp, mat).unwrap();
        assert!((t.norm_est() - 3.0).abs() < 1e-8);
    }

    #[test]
    fn solve_round_trips_and_detects_singularity() {
        let mut r = rng(43);
        let n = 12;
        let sp = StateSpace::standard(n);
        let mat = DMatrix::from_fn(n, n, |i, j| {
            C64::new(gaussian(&mut r), gaussian(&mut r))
                + if i == j { C64::new(6.0, 0.0) } else { C64::new(0.0, 0.0) }
        });
        let t = LinOp::new(sp.clone(), sp.clone(), mat).unwrap();
        let x = sp.random_vec(&mut r, 1.0);
        let b = t.apply(&x);
        let xs = t.solve(&b).unwrap();
        assert!((&xs - &x).norm() <= 1e-9 * x.norm());

        let singular = DMatrix::<C64>::zeros(3, 3);
        let s = LinOp::new(StateSpace::standard(3), StateSpace::standard(3), singular).unwrap();
        match s.solve(&DVector::zeros(3)) {
            Err(CoreError::SingularOperator { .. }) => {}
            other => panic!("expected SingularOperator, got {other:?}"),
        }
    }

    #[test]
    fn product_space_stacks_metrics() {
        let a = StateSpace::diagonal(DVector::from_vec(vec![2.0, 2.0])).unwrap();
        let b = StateSpace::diagonal(DVector::from_vec(vec![3.0])).unwrap();
        let p = a.product(&b);
        assert_eq!(p.dim(), 3);
        let x = DVector::from_vec(vec![C64::new(1.0, 0.0); 3]);
        assert!((p.inner(&x, &x).re - 7.0).abs() < 1e-14);
    }
}
