//! Problem description for conic programs of the form
//!
//! ```txt
//!     minimize    <C, X> + c_n' x_n + c_f' x_f
//!     subject to  <A_i, X> + a_ni' x_n + a_fi' x_f = b_i,   i = 1..m
//!                 X = diag(X_1, .., X_p),  X_k PSD
//!                 x_n >= 0,  x_f free
//! ```
//!
//! Linear functionals are stored sparsely. A PSD entry `(block, r, c, v)` with
//! `r != c` contributes `v * X[r][c]` (the symmetric partner is implied), so the
//! associated symmetric matrix has `v / 2` in both off-diagonal positions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::SdpError;

/// Reference to one scalar decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    /// Entry `(row, col)` of PSD block `block`; stored with `row <= col`.
    Psd { block: usize, row: usize, col: usize },
    NonNeg(usize),
    Free(usize),
}

impl Var {
    pub fn psd(block: usize, row: usize, col: usize) -> Self {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        Var::Psd { block, row, col }
    }
}

/// A sparse linear functional over all decision variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearForm {
    terms: BTreeMap<Var, f64>,
}

impl LinearForm {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `coef * var`, merging with an existing term.
    pub fn add(&mut self, var: Var, coef: f64) -> &mut Self {
        let var = match var {
            Var::Psd { block, row, col } => Var::psd(block, row, col),
            other => other,
        };
        *self.terms.entry(var).or_insert(0.0) += coef;
        self
    }

    pub fn with(mut self, var: Var, coef: f64) -> Self {
        self.add(var, coef);
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, f64)> + '_ {
        self.terms.iter().filter(|(_, v)| **v != 0.0).map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FromIterator<(Var, f64)> for LinearForm {
    fn from_iter<T: IntoIterator<Item = (Var, f64)>>(iter: T) -> Self {
        let mut form = LinearForm::new();
        for (v, c) in iter {
            form.add(v, c);
        }
        form
    }
}

/// A conic program with PSD blocks, a nonnegative orthant and free scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    psd_dims: Vec<usize>,
    num_nonneg: usize,
    num_free: usize,
    rows: Vec<LinearForm>,
    rhs: Vec<f64>,
    objective: LinearForm,
}

impl SdpProblem {
    pub fn new(psd_dims: Vec<usize>, num_nonneg: usize, num_free: usize) -> Self {
        Self {
            psd_dims,
            num_nonneg,
            num_free,
            rows: Vec::new(),
            rhs: Vec::new(),
            objective: LinearForm::new(),
        }
    }

    /// Appends the equality `form = rhs` and returns its row index.
    pub fn add_constraint(&mut self, form: LinearForm, rhs: f64) -> Result<usize, SdpError> {
        self.check_form(&form)?;
        if !rhs.is_finite() {
            return Err(SdpError::NonFinite("right-hand side".into()));
        }
        self.rows.push(form);
        self.rhs.push(rhs);
        Ok(self.rows.len() - 1)
    }

    pub fn set_objective(&mut self, form: LinearForm) -> Result<(), SdpError> {
        self.check_form(&form)?;
        self.objective = form;
        Ok(())
    }

    fn check_form(&self, form: &LinearForm) -> Result<(), SdpError> {
        for (var, coef) in form.iter() {
            if !coef.is_finite() {
                return Err(SdpError::NonFinite(format!("coefficient of {var:?}")));
            }
            let ok = match var {
                Var::Psd { block, row, col } => {
                    block < self.psd_dims.len() && row < self.psd_dims[block] && col < self.psd_dims[block]
                }
                Var::NonNeg(k) => k < self.num_nonneg,
                Var::Free(k) => k < self.num_free,
            };
            if !ok {
                return Err(SdpError::BadIndex(var));
            }
        }
        Ok(())
    }

    pub fn psd_dims(&self) -> &[usize] {
        &self.psd_dims
    }

    pub fn num_nonneg(&self) -> usize {
        self.num_nonneg
    }

    pub fn num_free(&self) -> usize {
        self.num_free
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn constraint(&self, i: usize) -> &LinearForm {
        &self.rows[i]
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn objective(&self) -> &LinearForm {
        &self.objective
    }

    /// Number of scalar unknowns (upper triangles of the PSD blocks included).
    pub fn num_scalar_vars(&self) -> usize {
        self.psd_dims.iter().map(|n| n * (n + 1) / 2).sum::<usize>() + self.num_nonneg + self.num_free
    }

    /// Writes the problem in SDPA sparse format (`.dat-s`).
    ///
    /// SDPA's dual form `max <F0, Y> s.t. <F_i, Y> = c_i, Y PSD` is matched by
    /// `F0 = -C`, `F_i = A_i`, `c_i = b_i`. The nonnegative orthant becomes a
    /// diagonal block. Free scalars are exported as the difference of two
    /// diagonal entries, since the format has no free cone.
    pub fn to_sdpa_sparse(&self) -> String {
        let mut out = String::new();
        let m = self.rows.len();
        let lp_dim = self.num_nonneg + 2 * self.num_free;
        let mut blocks: Vec<i64> = self.psd_dims.iter().map(|&n| n as i64).collect();
        if lp_dim > 0 {
            blocks.push(-(lp_dim as i64));
        }
        let lp_block = self.psd_dims.len() + 1;
        let _ = writeln!(out, "\"exported conic program: {} psd blocks, {} nonneg, {} free\"",
            self.psd_dims.len(), self.num_nonneg, self.num_free);
        let _ = writeln!(out, "{m}");
        let _ = writeln!(out, "{}", blocks.len());
        let _ = writeln!(out, "{}", blocks.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(" "));
        let _ = writeln!(out, "{}", self.rhs.iter().map(|b| format!("{b:.17e}")).collect::<Vec<_>>().join(" "));

        let emit = |out: &mut String, mat: usize, form: &LinearForm, sign: f64| {
            for (var, coef) in form.iter() {
                let c = sign * coef;
                match var {
                    Var::Psd { block, row, col } => {
                        let v = if row == col { c } else { c / 2.0 };
                        let _ = writeln!(out, "{mat} {} {} {} {v:.17e}", block + 1, row + 1, col + 1);
                    }
                    Var::NonNeg(k) => {
                        let _ = writeln!(out, "{mat} {lp_block} {0} {0} {c:.17e}", k + 1);
                    }
                    Var::Free(k) => {
                        let plus = self.num_nonneg + 2 * k + 1;
                        let _ = writeln!(out, "{mat} {lp_block} {plus} {plus} {c:.17e}");
                        let _ = writeln!(out, "{mat} {lp_block} {0} {0} {1:.17e}", plus + 1, -c);
                    }
                }
            }
        };
        emit(&mut out, 0, &self.objective, -1.0);
        for (i, row) in self.rows.iter().enumerate() {
            emit(&mut out, i + 1, row, 1.0);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_entries_are_canonicalised_and_merged() {
        let form = LinearForm::new()
            .with(Var::Psd { block: 0, row: 1, col: 0 }, 1.0)
            .with(Var::psd(0, 0, 1), 2.0);
        let terms: Vec<_> = form.iter().collect();
        assert_eq!(terms, vec![(Var::psd(0, 0, 1), 3.0)]);
    }

    #[test]
    fn out_of_range_variables_are_rejected() {
        let mut p = SdpProblem::new(vec![2], 1, 0);
        let bad = LinearForm::new().with(Var::psd(0, 0, 2), 1.0);
        assert!(matches!(p.add_constraint(bad, 1.0), Err(SdpError::BadIndex(_))));
        let bad = LinearForm::new().with(Var::Free(0), 1.0);
        assert!(matches!(p.add_constraint(bad, 1.0), Err(SdpError::BadIndex(_))));
        let bad = LinearForm::new().with(Var::NonNeg(0), f64::NAN);
        assert!(matches!(p.add_constraint(bad, 1.0), Err(SdpError::NonFinite(_))));
    }

    #[test]
    fn sdpa_export_has_header_and_entries() {
        let mut p = SdpProblem::new(vec![2], 1, 1);
        p.add_constraint(
            LinearForm::new().with(Var::psd(0, 0, 0), 1.0).with(Var::psd(0, 0, 1), 2.0).with(Var::Free(0), 1.0),
            1.0,
        )
        .unwrap();
        p.set_objective(LinearForm::new().with(Var::NonNeg(0), 3.0)).unwrap();
        let text = p.to_sdpa_sparse();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "1");
        assert_eq!(lines[2], "2");
        assert_eq!(lines[3], "2 -3");
        // objective (negated) on the LP block
        assert!(lines[5].starts_with("0 2 1 1 -3"));
        // off-diagonal coefficient is halved
        assert!(text.contains("1 1 1 2 1.0"));
        // free variable split into +/- diagonal entries
        assert!(text.contains("1 2 2 2 1.0"));
        assert!(text.contains("1 2 3 3 -1.0"));
    }
}
