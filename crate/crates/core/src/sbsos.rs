//! The level-(1,1) sparse bounded-degree SOS relaxation and its certificate.
//!
//! For blocks `I_l` with constraint groups `J_l` the relaxation reads
//!
//! ```text
//! maximize t  subject to
//!     f - t = sum_l  m_l' G_l m_l
//!           + sum_l  sum_{g in J_l} ( lambda+_g g + lambda-_g (1 - g) ),
//!     G_l PSD,  lambda >= 0,
//! ```
//!
//! where `m_l = (1, z restricted to the free vertices of I_l)`. The constant
//! multiplier is folded into `t`. Matching the coefficient of every monomial
//! of degree at most two gives one equality row per monomial, in graded
//! lexicographic order. The multipliers of those rows are the moments of the
//! dual problem; the rows of the degree-one monomials give the candidate
//! minimizer.

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector4};
use rotavg_sdp::{solve, LinearForm, SdpProblem, SdpSolution, SolverOptions, Var};
use serde::Serialize;

use crate::baselines::{local_solve, LocalOptions, LocalResult};
use crate::partition::{junction_tree_partition, single_block_partition, verify_rip, VariablePartition};
use crate::polycost::{assemble_cost, ConstraintSet, Monomial, Polynomial, QuaternionCost};
use crate::precondition::{quaternion_signs, SignSelection};
use crate::problem::MeasurementGraph;
use crate::quat::{multiply, UnitQuaternion};
use crate::{Error, Result};

/// Default relative certification tolerance.
pub const CERT_TOL: f64 = 1e-6;

/// Moment vectors shorter than this are not trusted for extraction.
const LOW_CONFIDENCE_NORM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BsosLevel {
    /// Degree bound of the constraint multipliers.
    pub d: u32,
    /// Degree bound of the SOS part.
    pub k: u32,
}

impl Default for BsosLevel {
    fn default() -> Self {
        Self { d: 1, k: 1 }
    }
}

impl BsosLevel {
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.k < 1 {
            return Err(Error::InvalidArgument(format!("level (d, k) = ({}, {}) must be >= 1", self.d, self.k)));
        }
        if (self.d, self.k) != (1, 1) {
            return Err(Error::Unsupported(format!("level (d, k) = ({}, {}); only (1, 1) is implemented", self.d, self.k)));
        }
        Ok(())
    }
}

/// One PSD Gram block over the basis `1, z_a, ..`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramBlock {
    /// Partition block this Gram matrix belongs to.
    pub block: usize,
    /// Non-anchored vertices of the block.
    pub vertices: Vec<usize>,
    /// Basis monomials; entry 0 is the constant.
    pub basis: Vec<Monomial>,
}

/// A nonnegative multiplier of `g` (`upper = false`) or `1 - g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Multiplier {
    pub block: usize,
    pub vertex: usize,
    /// Index into `ConstraintSet::vertex_constraints(vertex)`.
    pub constraint: usize,
    pub complement: bool,
    pub poly: Polynomial,
}

#[derive(Debug, Clone)]
pub struct RelaxationSdp {
    pub sdp: SdpProblem,
    pub grams: Vec<GramBlock>,
    pub multipliers: Vec<Multiplier>,
    /// Monomial of each equality row.
    pub rows: Vec<Monomial>,
    row_of: HashMap<Monomial, usize>,
    cost: QuaternionCost,
    target: Polynomial,
}

impl RelaxationSdp {
    pub fn row(&self, m: &Monomial) -> Option<usize> {
        self.row_of.get(m).copied()
    }

    pub fn cost(&self) -> &QuaternionCost {
        &self.cost
    }

    /// Multipliers belonging to partition block `block`.
    pub fn multiplier_count(&self, block: usize) -> usize {
        self.multipliers.iter().filter(|m| m.block == block).count()
    }

    /// `sum m' G m + sum lambda poly + t` as a polynomial, computed directly
    /// from the polynomial pieces rather than from the SDP rows.
    pub fn reconstruct(&self, grams: &[DMatrix<f64>], lambda: &[f64], t: f64) -> Polynomial {
        let mut p = Polynomial::constant(t);
        for (gb, g) in self.grams.iter().zip(grams) {
            for (r, mr) in gb.basis.iter().enumerate() {
                for (c, mc) in gb.basis.iter().enumerate() {
                    let mut term = Polynomial::zero();
                    term.add_term(mr.mul(mc), g[(r, c)]);
                    p = p.add(&term);
                }
            }
        }
        for (m, l) in self.multipliers.iter().zip(lambda) {
            p = p.add(&m.poly.scale(*l));
        }
        p
    }

    /// The polynomial being bounded (the anchored cost).
    pub fn target(&self) -> &Polynomial {
        &self.target
    }
}

pub fn build_relaxation(
    g: &MeasurementGraph,
    signs: &[i8],
    part: &VariablePartition,
    level: BsosLevel,
    constraints: ConstraintSet,
) -> Result<RelaxationSdp> {
    level.validate()?;
    let report = verify_rip(g, part);
    if !report.passed() {
        return Err(Error::InvalidArgument(format!("partition violates the running intersection property: {:?}", report.violations)));
    }
    let cost = assemble_cost(g, signs)?;
    let target = cost.to_polynomial();
    let var = |v: usize, c: usize| 4 * (v - 1) + c;

    let mut grams = Vec::new();
    for (l, block) in part.blocks.iter().enumerate() {
        let vertices: Vec<usize> = block.iter().copied().filter(|&v| v != 0).collect();
        if vertices.is_empty() {
            continue;
        }
        let mut basis = vec![Monomial::one()];
        for &v in &vertices {
            basis.extend((0..4).map(|c| Monomial::var(var(v, c))));
        }
        grams.push(GramBlock { block: l, vertices, basis });
    }
    let mut multipliers = Vec::new();
    for (l, group) in part.constraints.iter().enumerate() {
        for &v in group.iter().filter(|&&v| v != 0) {
            for (k, gpoly) in constraints.vertex_constraints(v).into_iter().enumerate() {
                let complement = Polynomial::constant(1.0).add(&gpoly.scale(-1.0));
                multipliers.push(Multiplier { block: l, vertex: v, constraint: k, complement: false, poly: gpoly });
                multipliers.push(Multiplier { block: l, vertex: v, constraint: k, complement: true, poly: complement });
            }
        }
    }

    let mut monomials: BTreeSet<Monomial> = target.terms().map(|(m, _)| m.clone()).collect();
    monomials.insert(Monomial::one());
    for gb in &grams {
        for (r, mr) in gb.basis.iter().enumerate() {
            for mc in &gb.basis[r..] {
                monomials.insert(mr.mul(mc));
            }
        }
    }
    for m in &multipliers {
        monomials.extend(m.poly.terms().map(|(mm, _)| mm.clone()));
    }
    let rows: Vec<Monomial> = monomials.into_iter().collect();
    let row_of: HashMap<Monomial, usize> = rows.iter().cloned().enumerate().map(|(k, m)| (m, k)).collect();

    let mut forms = vec![LinearForm::new(); rows.len()];
    for (b, gb) in grams.iter().enumerate() {
        for (r, mr) in gb.basis.iter().enumerate() {
            for (c, mc) in gb.basis.iter().enumerate().skip(r) {
                let coef = if r == c { 1.0 } else { 2.0 };
                forms[row_of[&mr.mul(mc)]].add(Var::psd(b, r, c), coef);
            }
        }
    }
    for (k, m) in multipliers.iter().enumerate() {
        for (mm, c) in m.poly.terms() {
            forms[row_of[mm]].add(Var::NonNeg(k), c);
        }
    }
    forms[row_of[&Monomial::one()]].add(Var::Free(0), 1.0);

    let mut sdp = SdpProblem::new(grams.iter().map(|gb| gb.basis.len()).collect(), multipliers.len(), 1);
    for (form, m) in forms.into_iter().zip(&rows) {
        sdp.add_constraint(form, target.coefficient(m))?;
    }
    sdp.set_objective(LinearForm::new().with(Var::Free(0), -1.0))?;
    Ok(RelaxationSdp { sdp, grams, multipliers, rows, row_of, cost, target })
}

/// Shor relaxation of the anchored problem: one PSD matrix `X` over
/// `(1, z)` with `X_00 = 1`, unit trace on every vertex block, and objective
/// `<[c p'; p P], X>`.
#[derive(Debug, Clone)]
pub struct FredrikssonSdp {
    pub sdp: SdpProblem,
    cost: QuaternionCost,
}

impl FredrikssonSdp {
    pub fn cost(&self) -> &QuaternionCost {
        &self.cost
    }

    /// Side of the single PSD matrix.
    pub fn dim(&self) -> usize {
        1 + self.cost.num_vars()
    }
}

pub fn build_fredriksson_sdp(g: &MeasurementGraph, signs: &[i8]) -> Result<FredrikssonSdp> {
    let cost = assemble_cost(g, signs)?;
    let nv = cost.num_vars();
    let mut sdp = SdpProblem::new(vec![1 + nv], 0, 0);
    sdp.add_constraint(LinearForm::new().with(Var::psd(0, 0, 0), 1.0), 1.0)?;
    for v in 1..g.n() {
        let form: LinearForm = (0..4).map(|c| (Var::psd(0, 4 * (v - 1) + c + 1, 4 * (v - 1) + c + 1), 1.0)).collect();
        sdp.add_constraint(form, 1.0)?;
    }
    let mut obj = LinearForm::new().with(Var::psd(0, 0, 0), cost.constant());
    for r in 0..nv {
        obj.add(Var::psd(0, 0, r + 1), 2.0 * cost.linear()[r]);
        for c in r..nv {
            let v = cost.quadratic()[(r, c)];
            obj.add(Var::psd(0, r + 1, c + 1), if r == c { v } else { 2.0 * v });
        }
    }
    sdp.set_objective(obj)?;
    Ok(FredrikssonSdp { sdp, cost })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    CertifiedOptimal,
    GapTooLarge,
    SolverFailure,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::CertifiedOptimal => "certified-optimal",
            Verdict::GapTooLarge => "gap-too-large",
            Verdict::SolverFailure => "solver-failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub t_star: f64,
    pub cost: f64,
    pub gap_abs: f64,
    pub gap_rel: f64,
    pub verdict: Verdict,
    pub solver_iters: usize,
    pub wall_time_ms: f64,
    pub per_vertex_quaternions: Vec<[f64; 4]>,
    /// Vertices whose moments were too small to read a direction from.
    #[serde(skip)]
    pub low_confidence: Vec<usize>,
}

/// Compares the bound with the cost of a feasible candidate:
/// certified iff `|cost - t_star| <= cert_tol * max(1, |cost|)`.
pub fn certify(t_star: f64, candidate: &[UnitQuaternion], cost: &QuaternionCost, cert_tol: f64) -> Result<Certificate> {
    let f = cost.evaluate_quaternions(candidate)?;
    let gap_abs = f - t_star;
    let scale = f.abs().max(1.0);
    let verdict = if gap_abs.abs() <= cert_tol * scale { Verdict::CertifiedOptimal } else { Verdict::GapTooLarge };
    Ok(Certificate {
        t_star,
        cost: f,
        gap_abs,
        gap_rel: gap_abs / scale,
        verdict,
        solver_iters: 0,
        wall_time_ms: 0.0,
        per_vertex_quaternions: candidate.iter().map(|q| q.as_array()).collect(),
        low_confidence: Vec::new(),
    })
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub t_star: f64,
    /// First-order moments per vertex (vertex 0 is the identity).
    pub moments: Vec<Vector4<f64>>,
    /// Normalized, sign-reconciled moments before polishing.
    pub rounded: Vec<UnitQuaternion>,
    pub polished: LocalResult,
    pub low_confidence: Vec<usize>,
    pub solution: SdpSolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExtractOptions {
    pub sdp: SolverOptions,
    pub local: LocalOptions,
}

fn check_status(sol: &SdpSolution) -> Result<()> {
    if !sol.is_usable() {
        return Err(Error::Solver(format!(
            "status {} after {} iterations (primal {:.2e}, dual {:.2e}, gap {:.2e})",
            sol.status.as_str(),
            sol.iterations,
            sol.residuals.primal,
            sol.residuals.dual,
            sol.residuals.gap
        )));
    }
    Ok(())
}

/// Turns per-vertex moment vectors into a candidate and polishes it.
///
/// Each moment vector is normalized; vectors shorter than 0.1 are replaced by
/// the prediction from their tree parent. Two candidates are polished: the
/// normalized moments as they are, and with each vertex's sign reconciled to
/// agree with the prediction along the spanning tree. The cheaper one wins.
fn round_and_polish(
    moments: &[Vector4<f64>],
    g: &MeasurementGraph,
    sel: &SignSelection,
    cost: &QuaternionCost,
    local: &LocalOptions,
) -> Result<(Vec<UnitQuaternion>, LocalResult, Vec<usize>)> {
    let n = g.n();
    let mut low = Vec::new();
    let mut raw = vec![UnitQuaternion::IDENTITY; n];
    let mut reconciled = vec![UnitQuaternion::IDENTITY; n];
    for &v in &sel.tree.order[1..] {
        let (p, k) = sel.tree.parent[v].expect("non-root vertex has a parent");
        let e = &g.edges()[k];
        let m = e.measurement.signed(sel.signs[k]);
        let step = if e.i == p { m } else { m.conjugate() };
        let predicted = multiply(&reconciled[p], &step);
        let mv = moments[v];
        if mv.norm() < LOW_CONFIDENCE_NORM {
            low.push(v);
            raw[v] = multiply(&raw[p], &step);
            reconciled[v] = predicted;
        } else {
            let q = UnitQuaternion::normalize(&mv)?;
            raw[v] = q;
            reconciled[v] = if q.dot(&predicted) < 0.0 { -q } else { q };
        }
    }
    let a = local_solve(cost, &raw, local)?;
    if reconciled == raw {
        return Ok((raw, a, low));
    }
    let b = local_solve(cost, &reconciled, local)?;
    Ok(if b.cost < a.cost { (reconciled, b, low) } else { (raw, a, low) })
}

/// Solves the relaxation and extracts a polished candidate.
pub fn solve_and_extract(
    r: &RelaxationSdp,
    g: &MeasurementGraph,
    sel: &SignSelection,
    opts: &ExtractOptions,
) -> Result<Extraction> {
    let sol = solve(&r.sdp, &opts.sdp)?;
    check_status(&sol)?;
    let t_star = sol.free[0];
    let one = r.row(&Monomial::one()).expect("constant row");
    let m0 = -sol.dual[one];
    let mut moments = vec![Vector4::new(1.0, 0.0, 0.0, 0.0); g.n()];
    for (v, mv) in moments.iter_mut().enumerate().skip(1) {
        for c in 0..4 {
            let row = r.row(&Monomial::var(4 * (v - 1) + c)).expect("degree-one rows exist");
            mv[c] = -sol.dual[row] / m0;
        }
    }
    let (rounded, polished, low_confidence) = round_and_polish(&moments, g, sel, &r.cost, &opts.local)?;
    Ok(Extraction { t_star, moments, rounded, polished, low_confidence, solution: sol })
}

/// Solves the Shor relaxation; the bound is the dual objective and the
/// candidate comes from the first row of `X`.
pub fn solve_and_extract_fredriksson(
    r: &FredrikssonSdp,
    g: &MeasurementGraph,
    sel: &SignSelection,
    opts: &ExtractOptions,
) -> Result<Extraction> {
    let sol = solve(&r.sdp, &opts.sdp)?;
    check_status(&sol)?;
    let x = &sol.psd[0];
    let mut moments = vec![Vector4::new(1.0, 0.0, 0.0, 0.0); g.n()];
    for (v, mv) in moments.iter_mut().enumerate().skip(1) {
        for c in 0..4 {
            mv[c] = x[(0, 4 * (v - 1) + c + 1)] / x[(0, 0)];
        }
    }
    let (rounded, polished, low_confidence) = round_and_polish(&moments, g, sel, &r.cost, &opts.local)?;
    Ok(Extraction { t_star: sol.dual_objective, moments, rounded, polished, low_confidence, solution: sol })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionChoice {
    /// Junction-tree blocks.
    Jt,
    /// One block holding every vertex.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub partition: PartitionChoice,
    pub constraints: ConstraintSet,
    pub cert_tol: f64,
    pub extract: ExtractOptions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { partition: PartitionChoice::Jt, constraints: ConstraintSet::default(), cert_tol: CERT_TOL, extract: ExtractOptions::default() }
    }
}

/// Result of a full solve: the certificate plus what produced it.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub certificate: Certificate,
    pub partition: Option<VariablePartition>,
    pub psd_dims: Vec<usize>,
    pub num_constraints: usize,
    pub num_multipliers: usize,
    pub signs: Vec<i8>,
    /// Solver message when the SDP did not reach optimality.
    pub failure: Option<String>,
}

fn failed_certificate(n: usize, iters: usize, start: Instant) -> Certificate {
    Certificate {
        t_star: f64::NAN,
        cost: f64::NAN,
        gap_abs: f64::NAN,
        gap_rel: f64::NAN,
        verdict: Verdict::SolverFailure,
        solver_iters: iters,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        per_vertex_quaternions: vec![UnitQuaternion::IDENTITY.as_array(); n],
        low_confidence: Vec::new(),
    }
}

fn finish_report(
    ext: Result<Extraction>,
    cost: &QuaternionCost,
    opts: &PipelineOptions,
    start: Instant,
    n: usize,
) -> Result<(Certificate, Option<String>)> {
    match ext {
        Ok(ext) => {
            let mut cert = certify(ext.t_star, &ext.polished.quaternions, cost, opts.cert_tol)?;
            cert.solver_iters = ext.solution.iterations;
            cert.low_confidence = ext.low_confidence;
            cert.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
            Ok((cert, None))
        }
        Err(Error::Solver(msg)) => Ok((failed_certificate(n, 0, start), Some(msg))),
        Err(e) => Err(e),
    }
}

/// Sign selection, partitioning, relaxation, extraction and certification.
pub fn solve_sbsos(g: &MeasurementGraph, opts: &PipelineOptions) -> Result<SolveReport> {
    let start = Instant::now();
    let sel = quaternion_signs(g)?;
    let part = match opts.partition {
        PartitionChoice::Jt => junction_tree_partition(g),
        PartitionChoice::Single => single_block_partition(g.n()),
    };
    let relax = build_relaxation(g, &sel.signs, &part, BsosLevel::default(), opts.constraints)?;
    let ext = solve_and_extract(&relax, g, &sel, &opts.extract);
    let (certificate, failure) = finish_report(ext, relax.cost(), opts, start, g.n())?;
    Ok(SolveReport {
        certificate,
        partition: Some(part),
        psd_dims: relax.sdp.psd_dims().to_vec(),
        num_constraints: relax.sdp.num_constraints(),
        num_multipliers: relax.multipliers.len(),
        signs: sel.signs,
        failure,
    })
}

pub fn solve_fredriksson(g: &MeasurementGraph, opts: &PipelineOptions) -> Result<SolveReport> {
    let start = Instant::now();
    let sel = quaternion_signs(g)?;
    let relax = build_fredriksson_sdp(g, &sel.signs)?;
    let ext = solve_and_extract_fredriksson(&relax, g, &sel, &opts.extract);
    let (certificate, failure) = finish_report(ext, relax.cost(), opts, start, g.n())?;
    Ok(SolveReport {
        certificate,
        partition: None,
        psd_dims: relax.sdp.psd_dims().to_vec(),
        num_constraints: relax.sdp.num_constraints(),
        num_multipliers: 0,
        signs: sel.signs,
        failure,
    })
}

/// Evaluates every SDP row at a point `(grams, lambda, t)`.
pub fn apply_rows(sdp: &SdpProblem, grams: &[DMatrix<f64>], lambda: &[f64], free: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        sdp.num_constraints(),
        (0..sdp.num_constraints()).map(|i| {
            sdp.constraint(i)
                .iter()
                .map(|(v, c)| {
                    c * match v {
                        Var::Psd { block, row, col } => grams[block][(row, col)],
                        Var::NonNeg(k) => lambda[k],
                        Var::Free(k) => free[k],
                    }
                })
                .sum::<f64>()
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{generate_synthetic, InstanceConfig};
    use crate::rng::{seeded, uniform};

    fn graph(n: usize, pairs: &[(usize, usize)]) -> MeasurementGraph {
        MeasurementGraph::new(n, pairs.iter().map(|&(i, j)| (i, j, UnitQuaternion::IDENTITY)).collect(), None).unwrap()
    }

    #[test]
    fn level_validation() {
        assert!(BsosLevel::default().validate().is_ok());
        assert!(matches!(BsosLevel { d: 2, k: 1 }.validate(), Err(Error::Unsupported(_))));
        assert!(matches!(BsosLevel { d: 0, k: 1 }.validate(), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gram_sizes() {
        let g = graph(2, &[(0, 1)]);
        let r = build_relaxation(&g, &[1], &single_block_partition(2), BsosLevel::default(), ConstraintSet::default()).unwrap();
        assert_eq!(r.sdp.psd_dims(), &[5]);
        assert_eq!(r.cost().num_vars(), 4);

        let chain = graph(4, &[(0, 1), (1, 2), (2, 3)]);
        let part = junction_tree_partition(&chain);
        let r = build_relaxation(&chain, &[1, 1, 1], &part, BsosLevel::default(), ConstraintSet::default()).unwrap();
        assert_eq!(r.sdp.psd_dims(), &[5, 9, 9]);
        // 2 (g and 1 - g) x 10 constraints per free vertex in the block
        assert_eq!(r.multiplier_count(0), 20);
        assert_eq!(r.multiplier_count(1), 40);
        assert_eq!(r.multiplier_count(2), 40);
        let r = build_relaxation(&chain, &[1, 1, 1], &part, BsosLevel::default(), ConstraintSet { sphere_upper: true, boxes: false })
            .unwrap();
        assert_eq!(r.multiplier_count(1), 8);
    }

    #[test]
    fn rip_violation_is_rejected() {
        let chain = graph(4, &[(0, 1), (1, 2), (2, 3)]);
        let bad = VariablePartition::from_blocks(vec![vec![0, 1], vec![2, 3], vec![1, 2]]);
        let r = build_relaxation(&chain, &[1, 1, 1], &bad, BsosLevel::default(), ConstraintSet::default());
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
        let level = build_relaxation(&chain, &[1, 1, 1], &junction_tree_partition(&chain), BsosLevel { d: 1, k: 2 }, ConstraintSet::default());
        assert!(matches!(level, Err(Error::Unsupported(_))));
    }

    #[test]
    fn rows_match_polynomial_reconstruction() {
        let g = generate_synthetic(&InstanceConfig { n: 6, n_loops: 3, theta_max: 1.0, seed: 3 }).unwrap();
        let sel = quaternion_signs(&g).unwrap();
        let part = junction_tree_partition(&g);
        let r = build_relaxation(&g, &sel.signs, &part, BsosLevel::default(), ConstraintSet::default()).unwrap();
        let mut rng = seeded(1);
        let grams: Vec<DMatrix<f64>> = r
            .sdp
            .psd_dims()
            .iter()
            .map(|&n| {
                let a = DMatrix::from_fn(n, n, |_, _| uniform(&mut rng) - 0.5);
                &a * a.transpose()
            })
            .collect();
        let lambda: Vec<f64> = (0..r.multipliers.len()).map(|_| uniform(&mut rng)).collect();
        let t = uniform(&mut rng);
        let lhs = apply_rows(&r.sdp, &grams, &lambda, &[t]);
        let poly = r.reconstruct(&grams, &lambda, t);
        for (k, m) in r.rows.iter().enumerate() {
            assert!((lhs[k] - poly.coefficient(m)).abs() < 1e-12, "row {k}");
        }
        // every monomial of the reconstruction has a row
        for (m, _) in poly.terms() {
            assert!(r.row(m).is_some());
        }
        for (k, m) in r.rows.iter().enumerate() {
            assert_eq!(r.sdp.rhs()[k], r.target().coefficient(m));
        }
    }

    #[test]
    fn rows_are_in_graded_lex_order() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let r = build_relaxation(&g, &[1, 1], &junction_tree_partition(&g), BsosLevel::default(), ConstraintSet::default()).unwrap();
        assert_eq!(r.rows[0], Monomial::one());
        assert!(r.rows.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn certify_thresholds() {
        let g = graph(2, &[(0, 1)]);
        let cost = assemble_cost(&g, &[1]).unwrap();
        let e = vec![UnitQuaternion::IDENTITY; 2];
        assert_eq!(certify(0.0, &e, &cost, CERT_TOL).unwrap().verdict, Verdict::CertifiedOptimal);
        // cost 1 at a quarter-turn candidate vs bound 0.9
        let q = UnitQuaternion::new(0.5, 0.5, 0.5, 0.5).unwrap();
        let c = certify(0.9, &[UnitQuaternion::IDENTITY, q], &cost, CERT_TOL).unwrap();
        assert!((c.cost - 1.0).abs() < 1e-15);
        assert_eq!(c.verdict, Verdict::GapTooLarge);
        assert!((c.gap_rel - 0.1).abs() < 1e-12);
    }

    #[test]
    fn certificate_json_fields() {
        let g = graph(2, &[(0, 1)]);
        let cost = assemble_cost(&g, &[1]).unwrap();
        let c = certify(0.0, &[UnitQuaternion::IDENTITY; 2], &cost, CERT_TOL).unwrap();
        let v: serde_json::Value = serde_json::to_value(&c).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            ["cost", "gap_abs", "gap_rel", "per_vertex_quaternions", "solver_iters", "t_star", "verdict", "wall_time_ms"]
        );
        assert_eq!(v["verdict"], "certified-optimal");
    }

    #[test]
    fn zero_noise_chain_is_exact() {
        let g = generate_synthetic(&InstanceConfig { n: 3, n_loops: 0, theta_max: 0.0, seed: 5 }).unwrap();
        let rep = solve_sbsos(&g, &PipelineOptions::default()).unwrap();
        let c = &rep.certificate;
        assert_eq!(c.verdict, Verdict::CertifiedOptimal, "{rep:?}");
        assert!(c.t_star.abs() <= 1e-7, "{}", c.t_star);
        let est: Vec<UnitQuaternion> = c.per_vertex_quaternions.iter().map(|q| UnitQuaternion::try_from(*q).unwrap()).collect();
        let err = crate::bench::mean_quaternion_norm_error(&est, g.truth().unwrap()).unwrap();
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn small_noisy_instance_certifies() {
        let g = generate_synthetic(&InstanceConfig { n: 5, n_loops: 2, theta_max: 0.2 * std::f64::consts::PI, seed: 1 }).unwrap();
        let rep = solve_sbsos(&g, &PipelineOptions::default()).unwrap();
        let c = &rep.certificate;
        assert_eq!(c.verdict, Verdict::CertifiedOptimal, "{rep:?}");
        assert!(c.t_star <= c.cost + 1e-7);
        let fr = solve_fredriksson(&g, &PipelineOptions::default()).unwrap();
        assert_eq!(fr.certificate.verdict, Verdict::CertifiedOptimal, "{fr:?}");
        assert!((fr.certificate.cost - c.cost).abs() <= 1e-6 * c.cost.max(1.0));
        assert_eq!(fr.psd_dims, vec![17]);
    }
}
