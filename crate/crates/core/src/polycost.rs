//! The quaternionic cost, its constraints and SOS-convexity checks.
//!
//! For an edge `(i, j)` with measurement `m` and sign `e`, the residual
//! `Q q_i - q_j` with `Q = right_mult_matrix(m, e)` vanishes when
//! `q_j = q_i * (e m)`. The edge cost is
//!
//! ```text
//! f_ij = |Q q_i - q_j|^2 = [q_i; q_j]' A [q_i; q_j],   A = [Q  -I]' [Q  -I]
//! ```
//!
//! Vertex 0 is anchored at the identity, which leaves `4 (N - 1)` scalars
//! `z = (q_1, .., q_{N-1})` (vertex `v` occupies `z[4 (v - 1) .. 4 v]`) and a
//! quadratic `f(z) = z' P z + 2 p' z + c`.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix4, SMatrix};
use serde::Serialize;

use crate::problem::MeasurementGraph;
use crate::quat::{multiply, right_mult_matrix, UnitQuaternion};
use crate::{Error, Result};

/// A monomial as sorted `(variable, exponent)` pairs with positive exponents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Monomial(Vec<(usize, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Self(Vec::new())
    }

    pub fn var(v: usize) -> Self {
        Self(vec![(v, 1)])
    }

    pub fn from_exponents(pairs: impl IntoIterator<Item = (usize, u32)>) -> Self {
        let mut m = BTreeMap::new();
        for (v, e) in pairs {
            *m.entry(v).or_insert(0) += e;
        }
        Self(m.into_iter().filter(|&(_, e)| e > 0).collect())
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&(_, e)| e).sum()
    }

    pub fn exponents(&self) -> &[(usize, u32)] {
        &self.0
    }

    pub fn exponent(&self, v: usize) -> u32 {
        self.0.iter().find(|&&(w, _)| w == v).map_or(0, |&(_, e)| e)
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::from_exponents(self.0.iter().chain(&other.0).copied())
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.0.iter().map(|&(v, e)| x[v].powi(e as i32)).product()
    }
}

/// Graded lexicographic order: by total degree, then by the exponent of the
/// lowest-indexed variable where the two differ (a larger exponent is larger).
impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        let (mut a, mut b) = (self.0.iter().peekable(), other.0.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Greater,
                (None, Some(_)) => return Ordering::Less,
                (Some(&&(va, ea)), Some(&&(vb, eb))) => {
                    if va < vb {
                        return Ordering::Greater;
                    }
                    if vb < va {
                        return Ordering::Less;
                    }
                    if ea != eb {
                        return ea.cmp(&eb);
                    }
                    a.next();
                    b.next();
                }
            }
        }
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse polynomial; zero coefficients are dropped.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        let mut p = Self::zero();
        p.add_term(Monomial::one(), c);
        p
    }

    pub fn var(v: usize) -> Self {
        let mut p = Self::zero();
        p.add_term(Monomial::var(v), 1.0);
        p
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        let slot = self.terms.entry(m).or_insert(0.0);
        *slot += c;
        if *slot == 0.0 {
            self.terms.retain(|_, v| *v != 0.0);
        }
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    /// Terms in increasing graded-lex order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, c)| (m, *c))
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in other.terms() {
            out.add_term(m.clone(), c);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero();
        for (m, c) in self.terms() {
            out.add_term(m.clone(), s * c);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (a, ca) in self.terms() {
            for (b, cb) in other.terms() {
                out.add_term(a.mul(b), ca * cb);
            }
        }
        out
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.terms().map(|(m, c)| c * m.evaluate(x)).sum()
    }

    /// Gradient at `x`, by differentiating each monomial.
    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        for (m, c) in self.terms() {
            for &(v, e) in m.exponents() {
                let rest: f64 = m.exponents().iter().filter(|&&(w, _)| w != v).map(|&(w, f)| x[w].powi(f as i32)).product();
                g[v] += c * e as f64 * x[v].powi(e as i32 - 1) * rest;
            }
        }
        g
    }

    /// Hessian of a polynomial of degree at most 2 (hence constant).
    pub fn quadratic_hessian(&self, nvars: usize) -> Result<DMatrix<f64>> {
        if self.degree() > 2 {
            return Err(Error::InvalidArgument("hessian is only constant up to degree 2".into()));
        }
        let mut h = DMatrix::zeros(nvars, nvars);
        for (m, c) in self.terms().filter(|(m, _)| m.degree() == 2) {
            match m.exponents() {
                [(v, 2)] => h[(*v, *v)] += 2.0 * c,
                [(a, 1), (b, 1)] => {
                    h[(*a, *b)] += c;
                    h[(*b, *a)] += c;
                }
                _ => unreachable!(),
            }
        }
        Ok(h)
    }
}

/// One edge's contribution to the cost.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCostTerm {
    pub i: usize,
    pub j: usize,
    /// `right_mult_matrix(measurement, sign)`.
    pub q: Matrix4<f64>,
    /// `[Q  -I]' [Q  -I]`, acting on `[q_i; q_j]`.
    pub a: SMatrix<f64, 8, 8>,
}

impl EdgeCostTerm {
    pub fn new(i: usize, j: usize, measurement: &UnitQuaternion, sign: i8) -> Result<Self> {
        let q = right_mult_matrix(measurement, sign)?;
        let mut b = SMatrix::<f64, 4, 8>::zeros();
        b.fixed_view_mut::<4, 4>(0, 0).copy_from(&q);
        b.fixed_view_mut::<4, 4>(0, 4).copy_from(&-Matrix4::identity());
        Ok(Self { i, j, q, a: b.transpose() * b })
    }

    pub fn evaluate(&self, qi: &UnitQuaternion, qj: &UnitQuaternion) -> f64 {
        (self.q * qi.as_vector() - qj.as_vector()).norm_squared()
    }
}

/// The anchored quadratic cost `f(z) = z' P z + 2 p' z + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuaternionCost {
    n: usize,
    terms: Vec<EdgeCostTerm>,
    p: DMatrix<f64>,
    lin: DVector<f64>,
    constant: f64,
}

pub fn assemble_cost(g: &MeasurementGraph, signs: &[i8]) -> Result<QuaternionCost> {
    if signs.len() != g.num_edges() {
        return Err(Error::InvalidArgument(format!("{} signs for {} edges", signs.len(), g.num_edges())));
    }
    let n = g.n();
    let dim = 4 * (n - 1);
    let mut p = DMatrix::zeros(dim, dim);
    let mut lin = DVector::zeros(dim);
    let mut constant = 0.0;
    let mut terms = Vec::with_capacity(signs.len());
    for (e, &s) in g.edges().iter().zip(signs) {
        let t = EdgeCostTerm::new(e.i, e.j, &e.measurement, s)?;
        let oj = 4 * (e.j - 1);
        let (qtq, a_ij, a_ji, a_jj) = (
            t.a.fixed_view::<4, 4>(0, 0).into_owned(),
            t.a.fixed_view::<4, 4>(0, 4).into_owned(),
            t.a.fixed_view::<4, 4>(4, 0).into_owned(),
            t.a.fixed_view::<4, 4>(4, 4).into_owned(),
        );
        if e.i == 0 {
            // q_i = (1, 0, 0, 0): f = e' QtQ e + 2 (A_ji e)' q_j + q_j' q_j
            constant += qtq[(0, 0)];
            for r in 0..4 {
                lin[oj + r] += a_ji[(r, 0)];
                for c in 0..4 {
                    p[(oj + r, oj + c)] += a_jj[(r, c)];
                }
            }
        } else {
            let oi = 4 * (e.i - 1);
            for r in 0..4 {
                for c in 0..4 {
                    p[(oi + r, oi + c)] += qtq[(r, c)];
                    p[(oi + r, oj + c)] += a_ij[(r, c)];
                    p[(oj + r, oi + c)] += a_ji[(r, c)];
                    p[(oj + r, oj + c)] += a_jj[(r, c)];
                }
            }
        }
        terms.push(t);
    }
    Ok(QuaternionCost { n, terms, p, lin, constant })
}

impl QuaternionCost {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_vars(&self) -> usize {
        4 * (self.n - 1)
    }

    pub fn terms(&self) -> &[EdgeCostTerm] {
        &self.terms
    }

    /// `P` of `z' P z + 2 p' z + c`.
    pub fn quadratic(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// `p` of `z' P z + 2 p' z + c`.
    pub fn linear(&self) -> &DVector<f64> {
        &self.lin
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    fn check_dim(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() != self.num_vars() {
            return Err(Error::InvalidArgument(format!("point has {} entries, expected {}", z.len(), self.num_vars())));
        }
        Ok(())
    }

    pub fn evaluate(&self, z: &DVector<f64>) -> Result<f64> {
        self.check_dim(z)?;
        Ok((z.transpose() * &self.p * z)[(0, 0)] + 2.0 * self.lin.dot(z) + self.constant)
    }

    pub fn gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(z)?;
        Ok((&self.p * z + &self.lin) * 2.0)
    }

    /// The constant Hessian `2 P`.
    pub fn hessian(&self) -> DMatrix<f64> {
        &self.p * 2.0
    }

    /// Sum of edge residuals for quaternions in any gauge (the cost is
    /// invariant under `q_i -> r * q_i` for all `i`).
    pub fn evaluate_quaternions(&self, qs: &[UnitQuaternion]) -> Result<f64> {
        if qs.len() != self.n {
            return Err(Error::InvalidArgument(format!("{} quaternions for {} vertices", qs.len(), self.n)));
        }
        Ok(self.terms.iter().map(|t| t.evaluate(&qs[t.i], &qs[t.j])).sum())
    }

    /// Anchored coordinates of `qs` after rotating the gauge so `qs[0]` is
    /// the identity.
    pub fn to_vector(&self, qs: &[UnitQuaternion]) -> Result<DVector<f64>> {
        if qs.len() != self.n {
            return Err(Error::InvalidArgument(format!("{} quaternions for {} vertices", qs.len(), self.n)));
        }
        let g = qs[0].conjugate();
        let mut z = DVector::zeros(self.num_vars());
        for (v, q) in qs.iter().enumerate().skip(1) {
            z.fixed_rows_mut::<4>(4 * (v - 1)).copy_from(&multiply(&g, q).as_vector());
        }
        Ok(z)
    }

    /// Quaternions from anchored coordinates; each block is normalized.
    pub fn from_vector(&self, z: &DVector<f64>) -> Result<Vec<UnitQuaternion>> {
        self.check_dim(z)?;
        let mut out = vec![UnitQuaternion::IDENTITY];
        for v in 1..self.n {
            out.push(UnitQuaternion::normalize(&z.fixed_rows::<4>(4 * (v - 1)).into_owned())?);
        }
        Ok(out)
    }

    /// The anchored cost as a polynomial in `4 (N - 1)` variables.
    pub fn to_polynomial(&self) -> Polynomial {
        let dim = self.num_vars();
        let mut f = Polynomial::constant(self.constant);
        for r in 0..dim {
            if self.lin[r] != 0.0 {
                f.add_term(Monomial::var(r), 2.0 * self.lin[r]);
            }
            for c in 0..dim {
                if self.p[(r, c)] != 0.0 {
                    f.add_term(Monomial::from_exponents([(r, 1), (c, 1)]), self.p[(r, c)]);
                }
            }
        }
        f
    }

    /// The cost over all `4 N` scalars (no anchoring), expanded edge by edge
    /// as a sum of squared residual polynomials.
    pub fn unanchored_polynomial(&self) -> Polynomial {
        let mut f = Polynomial::zero();
        for t in &self.terms {
            for r in 0..4 {
                let mut res = Polynomial::zero();
                for c in 0..4 {
                    res.add_term(Monomial::var(4 * t.i + c), t.q[(r, c)]);
                }
                res.add_term(Monomial::var(4 * t.j + r), -1.0);
                f = f.add(&res.mul(&res));
            }
        }
        f
    }
}

/// Per-vertex constraint polynomials, each mapping the unit sphere into
/// `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConstraintSet {
    /// Include `2 - q'q` (together with `1 - q'q` it pins `q'q = 1`; without
    /// it the feasible set is the unit ball).
    pub sphere_upper: bool,
    /// Include the redundant box constraints `(1 +- q_c) / 2`.
    pub boxes: bool,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self { sphere_upper: true, boxes: true }
    }
}

impl ConstraintSet {
    pub fn per_vertex(&self) -> usize {
        1 + self.sphere_upper as usize + if self.boxes { 8 } else { 0 }
    }

    /// Constraints of anchored vertex `v >= 1` in the order `1 - q'q`,
    /// `2 - q'q`, then `(1 + q_c) / 2, (1 - q_c) / 2` for `c = w, x, y, z`.
    pub fn vertex_constraints(&self, v: usize) -> Vec<Polynomial> {
        assert!(v >= 1, "vertex 0 is anchored");
        let base = 4 * (v - 1);
        let mut sq = Polynomial::zero();
        for c in 0..4 {
            sq.add_term(Monomial::from_exponents([(base + c, 2)]), 1.0);
        }
        let mut out = vec![Polynomial::constant(1.0).add(&sq.scale(-1.0))];
        if self.sphere_upper {
            out.push(Polynomial::constant(2.0).add(&sq.scale(-1.0)));
        }
        if self.boxes {
            for c in 0..4 {
                for s in [1.0, -1.0] {
                    let mut g = Polynomial::constant(0.5);
                    g.add_term(Monomial::var(base + c), 0.5 * s);
                    out.push(g);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SosVerdict {
    Sos,
    NotSos,
}

/// A quadratic form `z' H z` is a sum of squares iff `H` is PSD; decided by
/// the smallest eigenvalue against `-1e-9`.
pub fn sos_check_quadratic_form(h: &DMatrix<f64>) -> Result<SosVerdict> {
    if h.nrows() != h.ncols() {
        return Err(Error::InvalidArgument("matrix must be square".into()));
    }
    if (h - h.transpose()).amax() > 1e-12 * (1.0 + h.amax()) {
        return Err(Error::InvalidArgument("matrix must be symmetric".into()));
    }
    if h.nrows() == 0 {
        return Ok(SosVerdict::Sos);
    }
    let min = h.clone().symmetric_eigenvalues().min();
    Ok(if min >= -1e-9 { SosVerdict::Sos } else { SosVerdict::NotSos })
}

/// Hessian of the row-orthogonality constraint `r1' r2 = 0` of a rotation
/// matrix in the variables `(r1, r2)`: the form `2 z1 z4 + 2 z2 z5 + 2 z3 z6`.
pub fn orthogonality_form() -> DMatrix<f64> {
    let mut h = DMatrix::zeros(6, 6);
    for k in 0..3 {
        h[(k, k + 3)] = 1.0;
        h[(k + 3, k)] = 1.0;
    }
    h
}

/// Hessian of the first component of the handedness constraint
/// `r1 x r2 = r3` in the variables `(r1, r2)`: the form `2 z2 z6 - 2 z3 z5`.
pub fn handedness_form() -> DMatrix<f64> {
    let mut h = DMatrix::zeros(6, 6);
    h[(1, 5)] = 1.0;
    h[(5, 1)] = 1.0;
    h[(2, 4)] = -1.0;
    h[(4, 2)] = -1.0;
    h
}

/// Explicit factorization of the (constant) Hessian of the unanchored cost.
#[derive(Debug, Clone)]
pub struct SosConvexCertificate {
    /// `(i, j, L)` with `L = sqrt(2) [Q  -I]'`; the edge Hessian is `L L'`
    /// on the coordinates of `(q_i, q_j)`.
    pub factors: Vec<(usize, usize, SMatrix<f64, 8, 4>)>,
    /// `sum L L'` embedded in `4 N` coordinates.
    pub reconstruction: DMatrix<f64>,
    /// Hessian of the unanchored cost polynomial.
    pub hessian: DMatrix<f64>,
    /// Largest entry of `|hessian - reconstruction|`.
    pub residual: f64,
}

impl SosConvexCertificate {
    pub fn verified(&self) -> bool {
        self.residual < 1e-10
    }
}

pub fn soscvx_certificate_for_cost(cost: &QuaternionCost) -> SosConvexCertificate {
    let dim = 4 * cost.n();
    let mut recon = DMatrix::zeros(dim, dim);
    let mut factors = Vec::with_capacity(cost.terms().len());
    for t in cost.terms() {
        let mut l = SMatrix::<f64, 8, 4>::zeros();
        l.fixed_view_mut::<4, 4>(0, 0).copy_from(&t.q.transpose());
        l.fixed_view_mut::<4, 4>(4, 0).copy_from(&-Matrix4::identity());
        l *= std::f64::consts::SQRT_2;
        let llt = l * l.transpose();
        let idx = |k: usize| if k < 4 { 4 * t.i + k } else { 4 * t.j + k - 4 };
        for r in 0..8 {
            for c in 0..8 {
                recon[(idx(r), idx(c))] += llt[(r, c)];
            }
        }
        factors.push((t.i, t.j, l));
    }
    let hessian = cost.unanchored_polynomial().quadratic_hessian(dim).expect("cost is quadratic");
    let residual = (&hessian - &recon).amax();
    SosConvexCertificate { factors, reconstruction: recon, hessian, residual }
}
