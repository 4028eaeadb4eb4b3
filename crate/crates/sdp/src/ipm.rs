//! Infeasible primal-dual path-following method with Nesterov-Todd scaling
//! and Mehrotra's predictor-corrector.
//!
//! The Newton system is reduced to the Schur complement `M dy = h`, bordered
//! by the columns of the free variables:
//!
//! ```txt
//!     [ M    F ] [ dy  ]   [ h   ]
//!     [ F'   0 ] [ dxf ] = [ r_f ]
//! ```
//!
//! Free variables never enter a cone and are never split.

use nalgebra::{DMatrix, DVector};

use crate::envelope::{EnvelopeCholesky, EnvelopeMatrix, Ordering};
use crate::problem::{SdpProblem, Var};
use crate::SdpError;

/// Solver tolerances and limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative primal and dual feasibility tolerance.
    pub feas_tol: f64,
    /// Relative duality gap tolerance.
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { feas_tol: 1e-8, gap_tol: 1e-8, max_iter: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    /// The equality constraints cannot be met inside the cone.
    Infeasible,
    /// The dual is infeasible; the objective decreases without bound.
    Unbounded,
    /// Progress stalled with every residual within `NEAR_OPTIMAL_FACTOR`
    /// times its tolerance.
    NearOptimal,
    NumericalFailure,
}

/// Slack on the tolerances for a stalled run to count as near optimal.
pub const NEAR_OPTIMAL_FACTOR: f64 = 100.0;

impl SdpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SdpStatus::Optimal => "optimal",
            SdpStatus::Infeasible => "infeasible",
            SdpStatus::Unbounded => "unbounded",
            SdpStatus::NearOptimal => "near-optimal",
            SdpStatus::NumericalFailure => "numerical-failure",
        }
    }
}

/// Relative residuals at the returned iterate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Residuals {
    /// `||b - A x|| / (1 + ||b||)`
    pub primal: f64,
    /// `||c - A'y - s|| / (1 + ||c||)`
    pub dual: f64,
    /// `max(|pobj - dobj|, <x, s>) / (1 + |pobj| + |dobj|)`
    pub gap: f64,
    /// `<x, s>` summed over all cones.
    pub complementarity: f64,
}

/// One row of the iteration log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub complementarity: f64,
    /// `<R_d, x> - r_p' y`: the part of `pobj - dobj` caused by infeasibility,
    /// so that `pobj - dobj = complementarity + infeasibility_gap`.
    pub infeasibility_gap: f64,
    pub residuals: Residuals,
    pub primal_step: f64,
    pub dual_step: f64,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub psd: Vec<DMatrix<f64>>,
    pub nonneg: Vec<f64>,
    pub free: Vec<f64>,
    /// Multiplier of every equality row, in the order the rows were added.
    /// Rows removed as redundant during presolve get 0.
    pub dual: Vec<f64>,
    pub psd_slack: Vec<DMatrix<f64>>,
    pub nonneg_slack: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub residuals: Residuals,
    /// Rows found to be linear combinations of other rows and dropped.
    pub redundant_rows: Vec<usize>,
    pub history: Vec<IterationLog>,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }

    /// Optimal, or stalled close enough to optimal to use.
    pub fn is_usable(&self) -> bool {
        matches!(self.status, SdpStatus::Optimal | SdpStatus::NearOptimal)
    }
}

/// One PSD block's share of the constraint rows.
#[derive(Debug, Clone)]
struct PsdBlock {
    dim: usize,
    /// `(row, entries)` with entries `(r, c, v)` meaning `v * X[r][c]`.
    rows: Vec<(usize, Vec<(usize, usize, f64)>)>,
    cost: DMatrix<f64>,
}

/// Column-oriented view of the scalar (nonnegative or free) variables.
#[derive(Debug, Clone)]
struct ScalarCols {
    cols: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Model {
    m: usize,
    b: Vec<f64>,
    psd: Vec<PsdBlock>,
    nonneg: ScalarCols,
    free: ScalarCols,
    ordering: Ordering,
    /// Original index of every nonnegative column kept in `nonneg`.
    nonneg_orig: Vec<usize>,
    /// Nonnegative pairs `(a, b)` with `col_a = -col_b` and `c_a = -c_b`,
    /// solved as the free columns following the problem's own. Kept as two
    /// nonnegative variables their dual slacks would both be pinned to zero.
    split_pairs: Vec<(usize, usize)>,
    num_nonneg: usize,
    num_free: usize,
    /// Members `(index, sign)` of each free column in `free`, indexing the
    /// problem's free variables followed by the split pairs. Identical (or
    /// negated) free columns are merged, since the bordered system needs `F`
    /// to have full column rank; the value is shared equally on output.
    free_groups: Vec<Vec<(usize, f64)>>,
}

fn sym_entry(x: &DMatrix<f64>, r: usize, c: usize) -> f64 {
    x[(r, c)]
}

impl Model {
    fn build(p: &SdpProblem, active: &[usize]) -> Self {
        let mut psd: Vec<PsdBlock> = p
            .psd_dims()
            .iter()
            .map(|&n| PsdBlock { dim: n, rows: Vec::new(), cost: DMatrix::zeros(n, n) })
            .collect();
        let mut nonneg = ScalarCols { cols: vec![Vec::new(); p.num_nonneg()], cost: vec![0.0; p.num_nonneg()] };
        let mut free = ScalarCols { cols: vec![Vec::new(); p.num_free()], cost: vec![0.0; p.num_free()] };
        let mut b = Vec::with_capacity(active.len());
        for (i, &orig) in active.iter().enumerate() {
            b.push(p.rhs()[orig]);
            let mut per_block: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); psd.len()];
            for (var, v) in p.constraint(orig).iter() {
                match var {
                    Var::Psd { block, row, col } => per_block[block].push((row, col, v)),
                    Var::NonNeg(k) => nonneg.cols[k].push((i, v)),
                    Var::Free(k) => free.cols[k].push((i, v)),
                }
            }
            for (blk, entries) in per_block.into_iter().enumerate() {
                if !entries.is_empty() {
                    psd[blk].rows.push((i, entries));
                }
            }
        }
        for (var, v) in p.objective().iter() {
            match var {
                Var::Psd { block, row, col } => {
                    let c = &mut psd[block].cost;
                    if row == col {
                        c[(row, col)] += v;
                    } else {
                        c[(row, col)] += v / 2.0;
                        c[(col, row)] += v / 2.0;
                    }
                }
                Var::NonNeg(k) => nonneg.cost[k] += v,
                Var::Free(k) => free.cost[k] += v,
            }
        }

        let m = active.len();
        let mut adjacency: Vec<std::collections::BTreeSet<usize>> = vec![Default::default(); m];
        let mut link = |rows: &[usize]| {
            for &i in rows {
                for &j in rows {
                    if i != j {
                        adjacency[i].insert(j);
                    }
                }
            }
        };
        for blk in &psd {
            let rows: Vec<usize> = blk.rows.iter().map(|(i, _)| *i).collect();
            link(&rows);
        }
        for col in nonneg.cols.iter().chain(free.cols.iter()) {
            let rows: Vec<usize> = col.iter().map(|(i, _)| *i).collect();
            link(&rows);
        }
        let adjacency: Vec<Vec<usize>> = adjacency.into_iter().map(|s| s.into_iter().collect()).collect();
        let ordering = Ordering::new(&adjacency);

        let mut split_pairs = Vec::new();
        let mut keyed: std::collections::HashMap<Vec<(usize, u64)>, Vec<usize>> = Default::default();
        let key = |col: &[(usize, f64)], sign: f64| -> Vec<(usize, u64)> {
            col.iter().map(|(i, v)| (*i, (sign * v + 0.0).to_bits())).collect()
        };
        for (k, col) in nonneg.cols.iter().enumerate() {
            if col.is_empty() {
                continue;
            }
            let neg = key(col, -1.0);
            if let Some(cands) = keyed.get_mut(&neg) {
                if let Some(pos) = cands.iter().position(|&a| nonneg.cost[a] == -nonneg.cost[k]) {
                    let a = cands.swap_remove(pos);
                    split_pairs.push((a, k));
                    continue;
                }
            }
            keyed.entry(key(col, 1.0)).or_default().push(k);
        }
        split_pairs.sort_unstable();

        let (num_nonneg, num_free) = (nonneg.cols.len(), free.cols.len());
        let mut paired = vec![false; num_nonneg];
        for &(a, b) in &split_pairs {
            paired[a] = true;
            paired[b] = true;
            free.cols.push(nonneg.cols[a].clone());
            free.cost.push(nonneg.cost[a]);
        }
        let mut groups: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut group_of: std::collections::HashMap<(Vec<(usize, u64)>, u64), usize> = Default::default();
        let mut merged = ScalarCols { cols: Vec::new(), cost: Vec::new() };
        for (k, col) in free.cols.iter().enumerate() {
            let c = free.cost[k];
            let found = [1.0, -1.0].into_iter().find_map(|sg| {
                group_of.get(&(key(col, sg), (sg * c + 0.0).to_bits())).map(|&g| (g, sg))
            });
            match found {
                Some((g, sg)) if !col.is_empty() => groups[g].push((k, sg)),
                _ => {
                    group_of.insert((key(col, 1.0), (c + 0.0).to_bits()), groups.len());
                    groups.push(vec![(k, 1.0)]);
                    merged.cols.push(col.clone());
                    merged.cost.push(c);
                }
            }
        }
        let free = merged;
        let nonneg_orig: Vec<usize> = (0..num_nonneg).filter(|&k| !paired[k]).collect();
        let nonneg = ScalarCols {
            cols: nonneg_orig.iter().map(|&k| nonneg.cols[k].clone()).collect(),
            cost: nonneg_orig.iter().map(|&k| nonneg.cost[k]).collect(),
        };

        Self { m, b, psd, nonneg, free, ordering, nonneg_orig, split_pairs, num_nonneg, num_free, free_groups: groups }
    }

    fn nu(&self) -> f64 {
        (self.psd.iter().map(|b| b.dim).sum::<usize>() + self.nonneg.cols.len()) as f64
    }

    fn apply_a(&self, x: &[DMatrix<f64>], xn: &[f64], xf: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (blk, xk) in self.psd.iter().zip(x) {
            for (i, entries) in &blk.rows {
                out[*i] += entries.iter().map(|&(r, c, v)| v * sym_entry(xk, r, c)).sum::<f64>();
            }
        }
        for (cols, vals) in [(&self.nonneg.cols, xn), (&self.free.cols, xf)] {
            for (col, &x) in cols.iter().zip(vals) {
                for &(i, v) in col {
                    out[i] += v * x;
                }
            }
        }
        out
    }

    fn apply_at_psd(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        self.psd
            .iter()
            .map(|blk| {
                let mut z = DMatrix::zeros(blk.dim, blk.dim);
                for (i, entries) in &blk.rows {
                    for &(r, c, v) in entries {
                        if r == c {
                            z[(r, c)] += v * y[*i];
                        } else {
                            z[(r, c)] += 0.5 * v * y[*i];
                            z[(c, r)] += 0.5 * v * y[*i];
                        }
                    }
                }
                z
            })
            .collect()
    }

    fn apply_at_cols(cols: &ScalarCols, y: &[f64]) -> Vec<f64> {
        cols.cols.iter().map(|col| col.iter().map(|&(i, v)| v * y[i]).sum()).collect()
    }

    /// Schur complement `M_ij = <A_i, W A_j W> + sum_k a_ik a_jk d_k` in
    /// permuted order over the envelope. The free columns are added as
    /// `free_weight * F F'`.
    fn schur(&self, w: &[DMatrix<f64>], d: &[f64], free_weight: f64) -> EnvelopeMatrix {
        let pos = &self.ordering.pos;
        let mut out = EnvelopeMatrix::zeros(&self.ordering.first);
        for (blk, wk) in self.psd.iter().zip(w) {
            for (a, (i, ei)) in blk.rows.iter().enumerate() {
                for (j, ej) in &blk.rows[a..] {
                    let mut s = 0.0;
                    for &(p, q, u) in ei {
                        for &(r, t, v) in ej {
                            s += u * v * 0.5 * (wk[(p, r)] * wk[(q, t)] + wk[(p, t)] * wk[(q, r)]);
                        }
                    }
                    out.add(pos[*i], pos[*j], s);
                }
            }
        }
        let mut add_cols = |cols: &[Vec<(usize, f64)>], weight: &dyn Fn(usize) -> f64| {
            for (k, col) in cols.iter().enumerate() {
                let dk = weight(k);
                for (a, &(i, u)) in col.iter().enumerate() {
                    for &(j, v) in &col[..=a] {
                        out.add(pos[i], pos[j], u * v * dk);
                    }
                }
            }
        };
        add_cols(&self.nonneg.cols, &|k| d[k]);
        if free_weight != 0.0 {
            add_cols(&self.free.cols, &|_| free_weight);
        }
        out
    }

    /// Weight of `F F'` added to the Schur matrix: comparable to its largest
    /// diagonal entry so the free directions are neither swamped nor dominant.
    fn free_regularization(&self, w: &[DMatrix<f64>], d: &[f64]) -> f64 {
        if self.free.cols.is_empty() {
            return 0.0;
        }
        let mut diag = vec![0.0f64; self.m];
        for (blk, wk) in self.psd.iter().zip(w) {
            for (i, ei) in &blk.rows {
                let mut s = 0.0;
                for &(p, q, u) in ei {
                    for &(r, t, v) in ei {
                        s += u * v * 0.5 * (wk[(p, r)] * wk[(q, t)] + wk[(p, t)] * wk[(q, r)]);
                    }
                }
                diag[*i] += s;
            }
        }
        for (col, dk) in self.nonneg.cols.iter().zip(d) {
            for &(i, u) in col {
                diag[i] += u * u * dk;
            }
        }
        let max_diag = diag.iter().cloned().fold(0.0, f64::max);
        let max_col = self
            .free
            .cols
            .iter()
            .map(|c| c.iter().map(|(_, v)| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        if max_col == 0.0 {
            return 0.0;
        }
        max_diag.max(1.0) / max_col
    }

    fn cost_norm(&self) -> f64 {
        let mut s: f64 = self.psd.iter().map(|b| b.cost.norm_squared()).sum();
        s += self.nonneg.cost.iter().map(|c| c * c).sum::<f64>();
        s += self.free.cost.iter().map(|c| c * c).sum::<f64>();
        s.sqrt()
    }
}

/// Bordered Schur solver for one iteration.
struct NewtonSystem<'a> {
    model: &'a Model,
    chol: EnvelopeCholesky,
    /// `M^{-1} F` (original row order), one column per free variable.
    minv_f: Vec<Vec<f64>>,
    border: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    /// Weight of `F F'` folded into the factored matrix.
    rho: f64,
}

impl<'a> NewtonSystem<'a> {
    fn new(model: &'a Model, schur: EnvelopeMatrix, pivot_tol: f64, rho: f64) -> Self {
        let chol = EnvelopeCholesky::factor(schur, pivot_tol);
        let mut sys = Self { model, chol, minv_f: Vec::new(), border: None, rho };
        let nf = model.free.cols.len();
        if nf > 0 {
            let mut minv_f = Vec::with_capacity(nf);
            for col in &model.free.cols {
                let mut rhs = vec![0.0; model.m];
                for &(i, v) in col {
                    rhs[i] += v;
                }
                minv_f.push(sys.solve_m(&rhs));
            }
            let mut s = DMatrix::zeros(nf, nf);
            for a in 0..nf {
                for (b, z) in minv_f.iter().enumerate() {
                    s[(a, b)] = model.free.cols[a].iter().map(|&(i, v)| v * z[i]).sum();
                }
            }
            sys.minv_f = minv_f;
            sys.border = Some(s.lu());
        }
        sys
    }

    fn solve_m(&self, rhs: &[f64]) -> Vec<f64> {
        let ord = &self.model.ordering;
        let mut tmp: Vec<f64> = ord.perm.iter().map(|&i| rhs[i]).collect();
        self.chol.solve_in_place(&mut tmp);
        let mut out = vec![0.0; rhs.len()];
        for (k, &i) in ord.perm.iter().enumerate() {
            out[i] = tmp[k];
        }
        out
    }

    /// Returns `(dy, dxf)`.
    fn solve(&self, h: &[f64], rf: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        // (M + rho F F') dy + F dxf = h + rho F rf,  F' dy = rf
        let mut h = h.to_vec();
        if self.rho != 0.0 {
            for (col, r) in self.model.free.cols.iter().zip(rf) {
                for &(i, v) in col {
                    h[i] += self.rho * v * r;
                }
            }
        }
        let mut dy = self.solve_m(&h);
        let Some(lu) = &self.border else {
            return Some((dy, Vec::new()));
        };
        let cols = &self.model.free.cols;
        let rhs = DVector::from_iterator(
            cols.len(),
            cols.iter().zip(rf).map(|(col, r)| col.iter().map(|&(i, v)| v * dy[i]).sum::<f64>() - r),
        );
        let dxf = lu.solve(&rhs)?;
        for (z, d) in self.minv_f.iter().zip(dxf.iter()) {
            for (yi, zi) in dy.iter_mut().zip(z) {
                *yi -= zi * d;
            }
        }
        Some((dy, dxf.iter().copied().collect()))
    }
}

/// NT scaling of one PSD block.
struct NtScaling {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    w: DMatrix<f64>,
    lambda: DVector<f64>,
    chol_x: DMatrix<f64>,
    chol_s: DMatrix<f64>,
}

fn nt_scaling(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<NtScaling> {
    let lx = x.clone().cholesky()?.l();
    let ls = s.clone().cholesky()?.l();
    let svd = (ls.transpose() * &lx).svd(true, true);
    let v = svd.v_t.as_ref()?.transpose();
    let lambda = svd.singular_values.clone();
    if lambda.iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    let n = x.nrows();
    let lx_inv = lx.solve_lower_triangular(&DMatrix::identity(n, n))?;
    let mut g = &lx * &v;
    let mut g_inv = v.transpose() * lx_inv;
    for k in 0..n {
        let r = lambda[k].sqrt();
        g.column_mut(k).scale_mut(1.0 / r);
        g_inv.row_mut(k).scale_mut(r);
    }
    let w = &g * g.transpose();
    Some(NtScaling { g, g_inv, w, lambda, chol_x: lx, chol_s: ls })
}

/// Largest `alpha` with `L L' + alpha * d` PSD, given the Cholesky factor `L`.
fn max_psd_step(chol: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let Some(t) = chol.solve_lower_triangular(d) else { return 0.0 };
    let Some(t) = chol.solve_lower_triangular(&t.transpose()) else { return 0.0 };
    let t = (&t + t.transpose()) * 0.5;
    let min_eig = t.symmetric_eigenvalues().min();
    if min_eig < 0.0 { -1.0 / min_eig } else { f64::INFINITY }
}

fn max_orthant_step(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Search direction in all variable groups.
struct Direction {
    dx: Vec<DMatrix<f64>>,
    dxn: Vec<f64>,
    dxf: Vec<f64>,
    dy: Vec<f64>,
    ds: Vec<DMatrix<f64>>,
    dsn: Vec<f64>,
}

struct Iterate {
    x: Vec<DMatrix<f64>>,
    xn: Vec<f64>,
    xf: Vec<f64>,
    y: Vec<f64>,
    s: Vec<DMatrix<f64>>,
    sn: Vec<f64>,
}

/// Presolve: drops rows that are linear combinations of earlier rows, or
/// reports infeasibility when such a row has an inconsistent right-hand side.
fn presolve(p: &SdpProblem) -> Result<Vec<usize>, Vec<usize>> {
    let all: Vec<usize> = (0..p.num_constraints()).collect();
    let model = Model::build(p, &all);
    let w: Vec<DMatrix<f64>> = model.psd.iter().map(|b| DMatrix::identity(b.dim, b.dim)).collect();
    let d = vec![1.0; model.nonneg.cols.len()];
    let gram = model.schur(&w, &d, 1.0);
    let chol = EnvelopeCholesky::factor(gram.clone(), 1e-12);
    let m = model.m;
    let ord = &model.ordering;
    let mut dropped = Vec::new();
    let mut inconsistent = Vec::new();
    for k in 0..m {
        if !chol.skipped()[k] {
            continue;
        }
        let mut g: Vec<f64> = (0..m).map(|j| gram.get(j, k)).collect();
        g[k] = 0.0;
        chol.solve_in_place(&mut g);
        let predicted: f64 = (0..m).map(|j| g[j] * model.b[ord.perm[j]]).sum();
        let scale: f64 = 1.0 + model.b[ord.perm[k]].abs() + (0..m).map(|j| (g[j] * model.b[ord.perm[j]]).abs()).sum::<f64>();
        if (predicted - model.b[ord.perm[k]]).abs() > 1e-8 * scale {
            inconsistent.push(ord.perm[k]);
        }
        dropped.push(ord.perm[k]);
    }
    if !inconsistent.is_empty() {
        return Err(inconsistent);
    }
    dropped.sort_unstable();
    Ok(dropped)
}

/// Solves the conic program.
pub fn solve(problem: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    if !(opts.feas_tol > 0.0 && opts.gap_tol > 0.0) {
        return Err(SdpError::InvalidOptions("tolerances must be positive".into()));
    }
    let nrows = problem.num_constraints();
    let (active, redundant) = match presolve(problem) {
        Ok(dropped) => ((0..nrows).filter(|i| dropped.binary_search(i).is_err()).collect::<Vec<_>>(), dropped),
        Err(_) => return Ok(trivial_solution(problem, SdpStatus::Infeasible, Vec::new())),
    };
    let model = Model::build(problem, &active);
    let mut sol = run(&model, opts);
    // map duals back to the original row numbering
    let mut dual = vec![0.0; nrows];
    for (i, &orig) in active.iter().enumerate() {
        dual[orig] = sol.dual[i];
    }
    sol.dual = dual;
    sol.redundant_rows = redundant;
    Ok(sol)
}

fn trivial_solution(p: &SdpProblem, status: SdpStatus, redundant: Vec<usize>) -> SdpSolution {
    SdpSolution {
        status,
        psd: p.psd_dims().iter().map(|&n| DMatrix::zeros(n, n)).collect(),
        nonneg: vec![0.0; p.num_nonneg()],
        free: vec![0.0; p.num_free()],
        dual: vec![0.0; p.num_constraints()],
        psd_slack: p.psd_dims().iter().map(|&n| DMatrix::zeros(n, n)).collect(),
        nonneg_slack: vec![0.0; p.num_nonneg()],
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
        iterations: 0,
        residuals: Residuals::default(),
        redundant_rows: redundant,
        history: Vec::new(),
    }
}

fn initial_point(model: &Model) -> Iterate {
    let m = model.m;
    // per-row Frobenius norm restricted to each block
    let block_row_norms = |blk: &PsdBlock| -> Vec<(usize, f64)> {
        blk.rows
            .iter()
            .map(|(i, e)| {
                let s: f64 = e.iter().map(|&(r, c, v)| if r == c { v * v } else { v * v / 2.0 }).sum();
                (*i, s.sqrt())
            })
            .collect()
    };
    let mut x = Vec::new();
    let mut s = Vec::new();
    for blk in &model.psd {
        let n = blk.dim as f64;
        let norms = block_row_norms(blk);
        let xi = norms
            .iter()
            .map(|&(i, a)| n * (1.0 + model.b[i].abs()) / (1.0 + a))
            .fold(10.0_f64.max(n.sqrt()), f64::max);
        let eta = norms.iter().map(|&(_, a)| a).fold(10.0_f64.max(n.sqrt()).max(blk.cost.norm()), f64::max);
        x.push(DMatrix::identity(blk.dim, blk.dim) * xi);
        s.push(DMatrix::identity(blk.dim, blk.dim) * eta);
    }
    let nn = model.nonneg.cols.len();
    let (mut xi_n, mut eta_n) = (10.0_f64.max((nn as f64).sqrt()), 10.0_f64.max((nn as f64).sqrt()));
    if nn > 0 {
        let mut row_norm = vec![0.0; m];
        for col in &model.nonneg.cols {
            for &(i, v) in col {
                row_norm[i] += v * v;
            }
        }
        for (i, r) in row_norm.iter().enumerate() {
            if *r > 0.0 {
                xi_n = xi_n.max(nn as f64 * (1.0 + model.b[i].abs()) / (1.0 + r.sqrt()));
                eta_n = eta_n.max(r.sqrt());
            }
        }
        eta_n = eta_n.max(norm(&model.nonneg.cost));
    }
    Iterate {
        x,
        xn: vec![xi_n; nn],
        xf: vec![0.0; model.free.cols.len()],
        y: vec![0.0; m],
        s,
        sn: vec![eta_n; nn],
    }
}

fn run(model: &Model, opts: &SolverOptions) -> SdpSolution {
    let nu = model.nu();
    let b_norm = norm(&model.b);
    let c_norm = model.cost_norm();
    let mut it = initial_point(model);
    let mut history = Vec::new();
    let mut status = SdpStatus::NumericalFailure;
    let mut last = (0.0, 0.0, Residuals::default());
    let mut iterations = 0;
    let mut step_gamma = 0.9;
    let mut small_steps = 0;
    let mut gap_history: Vec<f64> = Vec::new();
    let near = |r: &Residuals| {
        r.primal <= NEAR_OPTIMAL_FACTOR * opts.feas_tol
            && r.dual <= NEAR_OPTIMAL_FACTOR * opts.feas_tol
            && r.gap <= NEAR_OPTIMAL_FACTOR * opts.gap_tol
    };
    let stalled_status = |r: &Residuals| if near(r) { SdpStatus::NearOptimal } else { SdpStatus::NumericalFailure };

    for iter in 0..=opts.max_iter {
        iterations = iter;
        // residuals
        let ax = model.apply_a(&it.x, &it.xn, &it.xf);
        let rp: Vec<f64> = model.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let aty = model.apply_at_psd(&it.y);
        let rd: Vec<DMatrix<f64>> =
            model.psd.iter().zip(&aty).zip(&it.s).map(|((blk, a), s)| &blk.cost - a - s).collect();
        let aty_n = Model::apply_at_cols(&model.nonneg, &it.y);
        let rdn: Vec<f64> =
            (0..it.sn.len()).map(|k| model.nonneg.cost[k] - aty_n[k] - it.sn[k]).collect();
        let aty_f = Model::apply_at_cols(&model.free, &it.y);
        let rf: Vec<f64> = model.free.cost.iter().zip(&aty_f).map(|(c, a)| c - a).collect();

        let pobj = model.psd.iter().zip(&it.x).map(|(blk, x)| blk.cost.dot(x)).sum::<f64>()
            + dot(&model.nonneg.cost, &it.xn)
            + dot(&model.free.cost, &it.xf);
        let dobj = dot(&model.b, &it.y);
        let comp = it.x.iter().zip(&it.s).map(|(x, s)| x.dot(s)).sum::<f64>() + dot(&it.xn, &it.sn);
        let mu = comp / nu.max(1.0);
        let rd_norm = (rd.iter().map(|r| r.norm_squared()).sum::<f64>()
            + rdn.iter().map(|r| r * r).sum::<f64>()
            + rf.iter().map(|r| r * r).sum::<f64>())
        .sqrt();
        let residuals = Residuals {
            primal: norm(&rp) / (1.0 + b_norm),
            dual: rd_norm / (1.0 + c_norm),
            gap: (pobj - dobj).abs().max(comp) / (1.0 + pobj.abs() + dobj.abs()),
            complementarity: comp,
        };
        let infeasibility_gap = rd.iter().zip(&it.x).map(|(r, x)| r.dot(x)).sum::<f64>()
            + dot(&rdn, &it.xn)
            + dot(&rf, &it.xf)
            - dot(&rp, &it.y);
        let (mut primal_step, mut dual_step) = (0.0, 0.0);
        last = (pobj, dobj, residuals);

        if residuals.primal <= opts.feas_tol && residuals.dual <= opts.feas_tol && residuals.gap <= opts.gap_tol {
            status = SdpStatus::Optimal;
            history.push(IterationLog {
                iteration: iter, primal_objective: pobj, dual_objective: dobj, complementarity: comp,
                infeasibility_gap, residuals, primal_step, dual_step,
            });
            break;
        }
        // certificates of infeasibility: A'y + s = c - r_d with b'y > 0, or
        // A x = b - r_p with c'x < 0, both relative to a diverging objective
        if dobj > 0.0 {
            let cert = (model.psd.iter().zip(&rd).map(|(b, r)| (&b.cost - r).norm_squared()).sum::<f64>()
                + model.nonneg.cost.iter().zip(&rdn).map(|(c, r)| (c - r).powi(2)).sum::<f64>()
                + aty_f.iter().map(|a| a * a).sum::<f64>())
            .sqrt();
            if cert < 1e-8 * dobj {
                status = SdpStatus::Infeasible;
                break;
            }
        }
        if pobj < 0.0 && norm(&ax) < 1e-8 * -pobj {
            status = SdpStatus::Unbounded;
            break;
        }
        // stalled: no 2x reduction of the worst residual in 8 iterations
        let worst = residuals.primal.max(residuals.dual).max(residuals.gap);
        gap_history.push(worst);
        if iter >= 8 && worst > 0.5 * gap_history[iter - 8] && near(&residuals) {
            status = SdpStatus::NearOptimal;
            break;
        }
        if iter == opts.max_iter {
            status = stalled_status(&residuals);
            break;
        }

        // scaling
        let mut scalings = Vec::with_capacity(model.psd.len());
        for (x, s) in it.x.iter().zip(&it.s) {
            match nt_scaling(x, s) {
                Some(sc) => scalings.push(sc),
                None => {
                    history.push(IterationLog {
                        iteration: iter, primal_objective: pobj, dual_objective: dobj, complementarity: comp,
                        infeasibility_gap, residuals, primal_step, dual_step,
                    });
                    return finish(model, it, stalled_status(&last.2), last, iter, history);
                }
            }
        }
        let w: Vec<DMatrix<f64>> = scalings.iter().map(|s| s.w.clone()).collect();
        let dn: Vec<f64> = it.xn.iter().zip(&it.sn).map(|(x, s)| x / s).collect();
        // M alone turns singular near optimality when free variables carry
        // part of the basis; M + rho F F' stays definite and the bordered
        // system is adjusted to compensate.
        let rho = model.free_regularization(&w, &dn);
        let schur = model.schur(&w, &dn, rho);
        let system = NewtonSystem::new(model, schur, 1e-24, rho);

        let solve_dir = |rc: &[DMatrix<f64>], rcn: &[f64]| -> Option<Direction> {
            let t: Vec<DMatrix<f64>> =
                rc.iter().zip(&rd).zip(&w).map(|((r, d), w)| r - w * d * w).collect();
            let tn: Vec<f64> = (0..rcn.len()).map(|k| rcn[k] - dn[k] * rdn[k]).collect();
            let at = model.apply_a(&t, &tn, &vec![0.0; model.free.cols.len()]);
            let h: Vec<f64> = rp.iter().zip(&at).map(|(r, a)| r - a).collect();
            let (dy, dxf) = system.solve(&h, &rf)?;
            let atdy = model.apply_at_psd(&dy);
            let ds: Vec<DMatrix<f64>> = rd.iter().zip(&atdy).map(|(r, a)| r - a).collect();
            let dx: Vec<DMatrix<f64>> =
                rc.iter().zip(&ds).zip(&w).map(|((r, d), w)| sym(r - w * d * w)).collect();
            let atdy_n = Model::apply_at_cols(&model.nonneg, &dy);
            let dsn: Vec<f64> = rdn.iter().zip(&atdy_n).map(|(r, a)| r - a).collect();
            let dxn: Vec<f64> = (0..rcn.len()).map(|k| rcn[k] - dn[k] * dsn[k]).collect();
            if dy.iter().chain(&dxf).any(|v| !v.is_finite()) {
                return None;
            }
            Some(Direction { dx, dxn, dxf, dy, ds, dsn })
        };
        let step_lengths = |d: &Direction| -> (f64, f64) {
            let mut ap = max_orthant_step(&it.xn, &d.dxn);
            let mut ad = max_orthant_step(&it.sn, &d.dsn);
            for (sc, (dx, ds)) in scalings.iter().zip(d.dx.iter().zip(&d.ds)) {
                ap = ap.min(max_psd_step(&sc.chol_x, dx));
                ad = ad.min(max_psd_step(&sc.chol_s, ds));
            }
            (ap, ad)
        };

        // predictor
        let rc_aff: Vec<DMatrix<f64>> = it.x.iter().map(|x| -x).collect();
        let rcn_aff: Vec<f64> = it.xn.iter().map(|x| -x).collect();
        let Some(aff) = solve_dir(&rc_aff, &rcn_aff) else {
            return finish(model, it, stalled_status(&last.2), last, iter, history);
        };
        let (ap_max, ad_max) = step_lengths(&aff);
        let (ap, ad) = (ap_max.min(1.0), ad_max.min(1.0));
        let comp_aff = it
            .x
            .iter()
            .zip(&aff.dx)
            .zip(it.s.iter().zip(&aff.ds))
            .map(|((x, dx), (s, ds))| (x + dx * ap).dot(&(s + ds * ad)))
            .sum::<f64>()
            + (0..it.xn.len()).map(|k| (it.xn[k] + ap * aff.dxn[k]) * (it.sn[k] + ad * aff.dsn[k])).sum::<f64>();
        let expon = (3.0 * ap.min(ad).powi(2)).max(1.0);
        let sigma = (comp_aff.max(0.0) / comp).powf(expon).min(1.0);

        // corrector
        let rc: Vec<DMatrix<f64>> = scalings
            .iter()
            .zip(aff.dx.iter().zip(&aff.ds))
            .map(|(sc, (dx, ds))| {
                let n = sc.lambda.len();
                let dxt = &sc.g_inv * dx * sc.g_inv.transpose();
                let dst = sc.g.transpose() * ds * &sc.g;
                let mut r = sym(&dxt * &dst) * -1.0;
                for k in 0..n {
                    r[(k, k)] += sigma * mu - sc.lambda[k] * sc.lambda[k];
                }
                for i in 0..n {
                    for j in 0..n {
                        r[(i, j)] *= 2.0 / (sc.lambda[i] + sc.lambda[j]);
                    }
                }
                &sc.g * r * sc.g.transpose()
            })
            .collect();
        let rcn: Vec<f64> = (0..it.xn.len())
            .map(|k| (sigma * mu - it.xn[k] * it.sn[k] - aff.dxn[k] * aff.dsn[k]) / it.sn[k])
            .collect();
        let Some(dir) = solve_dir(&rc, &rcn) else {
            return finish(model, it, stalled_status(&last.2), last, iter, history);
        };
        let (ap_max, ad_max) = step_lengths(&dir);
        let ap = (step_gamma * ap_max).min(1.0);
        let ad = (step_gamma * ad_max).min(1.0);
        step_gamma = 0.9 + 0.09 * ap_max.min(ad_max).min(1.0);
        primal_step = ap;
        dual_step = ad;
        history.push(IterationLog {
            iteration: iter, primal_objective: pobj, dual_objective: dobj, complementarity: comp,
            infeasibility_gap, residuals, primal_step, dual_step,
        });

        for (x, dx) in it.x.iter_mut().zip(&dir.dx) {
            *x += dx * ap;
        }
        for (x, dx) in it.xn.iter_mut().zip(&dir.dxn) {
            *x += ap * dx;
        }
        for (x, dx) in it.xf.iter_mut().zip(&dir.dxf) {
            *x += ap * dx;
        }
        for (y, dy) in it.y.iter_mut().zip(&dir.dy) {
            *y += ad * dy;
        }
        for (s, ds) in it.s.iter_mut().zip(&dir.ds) {
            *s += ds * ad;
        }
        for (s, ds) in it.sn.iter_mut().zip(&dir.dsn) {
            *s += ad * ds;
        }

        if ap.min(ad) < 1e-10 {
            small_steps += 1;
            if small_steps >= 3 {
                return finish(model, it, stalled_status(&last.2), last, iter + 1, history);
            }
        } else {
            small_steps = 0;
        }
    }
    finish(model, it, status, last, iterations, history)
}

fn finish(
    model: &Model,
    it: Iterate,
    status: SdpStatus,
    last: (f64, f64, Residuals),
    iterations: usize,
    history: Vec<IterationLog>,
) -> SdpSolution {
    // back to the problem's layout: a split pair's free value v becomes
    // (max(v, 0), max(-v, 0)), with slacks c_a - a_a'y and its negation
    let mut nonneg = vec![0.0; model.num_nonneg];
    let mut nonneg_slack = vec![0.0; model.num_nonneg];
    for (k, &orig) in model.nonneg_orig.iter().enumerate() {
        nonneg[orig] = it.xn[k];
        nonneg_slack[orig] = it.sn[k];
    }
    let reduced = Model::apply_at_cols(&model.free, &it.y);
    let mut free = vec![0.0; model.num_free + model.split_pairs.len()];
    let mut free_slack = vec![0.0; free.len()];
    for (g, members) in model.free_groups.iter().enumerate() {
        for &(k, sg) in members {
            free[k] = sg * it.xf[g] / members.len() as f64;
            free_slack[k] = sg * (model.free.cost[g] - reduced[g]);
        }
    }
    for (p, &(a, b)) in model.split_pairs.iter().enumerate() {
        let k = model.num_free + p;
        nonneg[a] = free[k].max(0.0);
        nonneg[b] = (-free[k]).max(0.0);
        nonneg_slack[a] = free_slack[k];
        nonneg_slack[b] = -free_slack[k];
    }
    free.truncate(model.num_free);
    SdpSolution {
        status,
        psd: it.x,
        nonneg,
        free,
        dual: it.y,
        psd_slack: it.s,
        nonneg_slack,
        primal_objective: last.0,
        dual_objective: last.1,
        iterations,
        residuals: last.2,
        redundant_rows: Vec::new(),
        history,
    }
}
