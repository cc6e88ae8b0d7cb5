//! Affine block-matrix expressions in named matrix variables.
//!
//! An [`Entry`] is one block: a constant plus a sum of terms
//! `coeff * L * V * R` or `coeff * L * V' * R` with V a named variable.
//! A [`BlockExpr`] is a grid of entries with fixed block dimensions. The
//! builders construct the upper triangle and mirror it, so expressions stay
//! structurally symmetric by construction; [`crate::lmi::assemble`] verifies
//! symmetry numerically before vectorizing.

use crate::Mat;
use std::collections::BTreeMap;

/// Variable structure. Symmetric variables are packed by their upper
/// triangle; general variables entry by entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Symmetric,
    General,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixVar {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: VarKind,
}

impl MatrixVar {
    pub fn sym(name: &str, n: usize) -> Self {
        Self {
            name: name.to_string(),
            rows: n,
            cols: n,
            kind: VarKind::Symmetric,
        }
    }

    pub fn general(name: &str, rows: usize, cols: usize) -> Self {
        Self {
            name: name.to_string(),
            rows,
            cols,
            kind: VarKind::General,
        }
    }

    pub fn scalar_count(&self) -> usize {
        match self.kind {
            VarKind::Symmetric => self.rows * (self.rows + 1) / 2,
            VarKind::General => self.rows * self.cols,
        }
    }
}

/// coeff * L * V(^T) * R, with absent L or R meaning identity.
#[derive(Debug, Clone)]
pub struct Term {
    pub coeff: f64,
    pub left: Option<Mat>,
    pub var: String,
    pub transposed: bool,
    pub right: Option<Mat>,
}

impl Term {
    fn transpose(&self) -> Term {
        Term {
            coeff: self.coeff,
            left: self.right.as_ref().map(|r| r.transpose()),
            var: self.var.clone(),
            transposed: !self.transposed,
            right: self.left.as_ref().map(|l| l.transpose()),
        }
    }
}

/// One block of a [`BlockExpr`].
#[derive(Debug, Clone)]
pub struct Entry {
    pub rows: usize,
    pub cols: usize,
    pub constant: Mat,
    pub terms: Vec<Term>,
}

impl Entry {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            constant: Mat::zeros(rows, cols),
            terms: Vec::new(),
        }
    }

    pub fn from_const(m: Mat) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            constant: m,
            terms: Vec::new(),
        }
    }

    /// Add a constant contribution.
    pub fn cst(&mut self, m: &Mat) -> &mut Self {
        assert_eq!((m.nrows(), m.ncols()), (self.rows, self.cols));
        self.constant += m;
        self
    }

    pub fn cst_scaled(&mut self, coeff: f64, m: &Mat) -> &mut Self {
        assert_eq!((m.nrows(), m.ncols()), (self.rows, self.cols));
        self.constant += m * coeff;
        self
    }

    fn push(
        &mut self,
        coeff: f64,
        left: Option<&Mat>,
        var: &str,
        transposed: bool,
        right: Option<&Mat>,
    ) -> &mut Self {
        if let Some(l) = left {
            assert_eq!(l.nrows(), self.rows, "term {var}: left factor row mismatch");
        }
        if let Some(r) = right {
            assert_eq!(r.ncols(), self.cols, "term {var}: right factor column mismatch");
        }
        self.terms.push(Term {
            coeff,
            left: left.cloned(),
            var: var.to_string(),
            transposed,
            right: right.cloned(),
        });
        self
    }

    /// coeff * V
    pub fn var(&mut self, coeff: f64, v: &str) -> &mut Self {
        self.push(coeff, None, v, false, None)
    }

    /// coeff * V'
    pub fn var_t(&mut self, coeff: f64, v: &str) -> &mut Self {
        self.push(coeff, None, v, true, None)
    }

    /// coeff * L * V
    pub fn left(&mut self, coeff: f64, l: &Mat, v: &str) -> &mut Self {
        self.push(coeff, Some(l), v, false, None)
    }

    /// coeff * L * V'
    pub fn left_t(&mut self, coeff: f64, l: &Mat, v: &str) -> &mut Self {
        self.push(coeff, Some(l), v, true, None)
    }

    /// coeff * V * R
    pub fn right(&mut self, coeff: f64, v: &str, r: &Mat) -> &mut Self {
        self.push(coeff, None, v, false, Some(r))
    }

    /// coeff * V' * R
    pub fn right_t(&mut self, coeff: f64, v: &str, r: &Mat) -> &mut Self {
        self.push(coeff, None, v, true, Some(r))
    }

    /// coeff * L * V * R
    pub fn wrap(&mut self, coeff: f64, l: &Mat, v: &str, r: &Mat) -> &mut Self {
        self.push(coeff, Some(l), v, false, Some(r))
    }

    /// coeff * L * V' * R
    pub fn wrap_t(&mut self, coeff: f64, l: &Mat, v: &str, r: &Mat) -> &mut Self {
        self.push(coeff, Some(l), v, true, Some(r))
    }

    pub fn transpose(&self) -> Entry {
        Entry {
            rows: self.cols,
            cols: self.rows,
            constant: self.constant.transpose(),
            terms: self.terms.iter().map(Term::transpose).collect(),
        }
    }

    /// Evaluate at a witness. Every referenced variable must be present.
    pub fn eval(&self, witness: &BTreeMap<String, Mat>) -> Result<Mat, String> {
        let mut acc = self.constant.clone();
        for t in &self.terms {
            let v = witness
                .get(&t.var)
                .ok_or_else(|| format!("missing variable {}", t.var))?;
            let mut cur = if t.transposed { v.transpose() } else { v.clone() };
            if let Some(l) = &t.left {
                if l.ncols() != cur.nrows() {
                    return Err(format!("term {}: inner dimension mismatch", t.var));
                }
                cur = l * cur;
            }
            if let Some(r) = &t.right {
                if cur.ncols() != r.nrows() {
                    return Err(format!("term {}: inner dimension mismatch", t.var));
                }
                cur = cur * r;
            }
            if (cur.nrows(), cur.ncols()) != (self.rows, self.cols) {
                return Err(format!(
                    "term {}: produces {}x{}, block is {}x{}",
                    t.var,
                    cur.nrows(),
                    cur.ncols(),
                    self.rows,
                    self.cols
                ));
            }
            acc += cur * t.coeff;
        }
        Ok(acc)
    }
}

/// Block grid of affine entries.
#[derive(Debug, Clone)]
pub struct BlockExpr {
    pub row_dims: Vec<usize>,
    pub col_dims: Vec<usize>,
    blocks: Vec<Entry>,
}

impl BlockExpr {
    pub fn new(row_dims: &[usize], col_dims: &[usize]) -> Self {
        let blocks = row_dims
            .iter()
            .flat_map(|&r| col_dims.iter().map(move |&c| Entry::new(r, c)))
            .collect();
        Self {
            row_dims: row_dims.to_vec(),
            col_dims: col_dims.to_vec(),
            blocks,
        }
    }

    /// Square grid with identical row and column block dimensions.
    pub fn square(dims: &[usize]) -> Self {
        Self::new(dims, dims)
    }

    pub fn nrows(&self) -> usize {
        self.row_dims.iter().sum()
    }

    pub fn ncols(&self) -> usize {
        self.col_dims.iter().sum()
    }

    pub fn is_square(&self) -> bool {
        self.row_dims == self.col_dims
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        assert!(i < self.row_dims.len() && j < self.col_dims.len());
        i * self.col_dims.len() + j
    }

    pub fn block(&self, i: usize, j: usize) -> &Entry {
        &self.blocks[self.idx(i, j)]
    }

    pub fn block_mut(&mut self, i: usize, j: usize) -> &mut Entry {
        let k = self.idx(i, j);
        &mut self.blocks[k]
    }

    pub fn set(&mut self, i: usize, j: usize, e: Entry) {
        assert_eq!(
            (e.rows, e.cols),
            (self.row_dims[i], self.col_dims[j]),
            "block ({i},{j}) dimension mismatch"
        );
        let k = self.idx(i, j);
        self.blocks[k] = e;
    }

    /// Set block (i, j) and mirror its transpose into (j, i).
    pub fn set_sym(&mut self, i: usize, j: usize, e: Entry) {
        if i != j {
            self.set(j, i, e.transpose());
        }
        self.set(i, j, e);
    }

    /// Build block (i, j) in place and mirror into (j, i).
    pub fn sym_block(&mut self, i: usize, j: usize, f: impl FnOnce(&mut Entry)) {
        let mut e = Entry::new(self.row_dims[i], self.col_dims[j]);
        f(&mut e);
        self.set_sym(i, j, e);
    }

    pub fn transpose(&self) -> BlockExpr {
        let mut out = BlockExpr::new(&self.col_dims, &self.row_dims);
        for i in 0..self.row_dims.len() {
            for j in 0..self.col_dims.len() {
                out.set(j, i, self.block(i, j).transpose());
            }
        }
        out
    }

    /// (E + E') / 2. Requires a square block structure.
    pub fn symmetrize(&self) -> BlockExpr {
        assert!(self.is_square(), "symmetrize requires square block structure");
        let t = self.transpose();
        let mut out = BlockExpr::new(&self.row_dims, &self.col_dims);
        for i in 0..self.row_dims.len() {
            for j in 0..self.col_dims.len() {
                let a = self.block(i, j);
                let b = t.block(i, j);
                let mut e = Entry::new(a.rows, a.cols);
                e.constant = (&a.constant + &b.constant) * 0.5;
                for src in a.terms.iter().chain(b.terms.iter()) {
                    let mut term = src.clone();
                    term.coeff *= 0.5;
                    e.terms.push(term);
                }
                out.set(i, j, e);
            }
        }
        out
    }

    pub fn eval(&self, witness: &BTreeMap<String, Mat>) -> Result<Mat, String> {
        let mut out = Mat::zeros(self.nrows(), self.ncols());
        let mut r0 = 0;
        for (i, &r) in self.row_dims.iter().enumerate() {
            let mut c0 = 0;
            for (j, &c) in self.col_dims.iter().enumerate() {
                let b = self.block(i, j).eval(witness)?;
                out.view_mut((r0, c0), (r, c)).copy_from(&b);
                c0 += c;
            }
            r0 += r;
        }
        Ok(out)
    }

    /// Names of all variables referenced anywhere in the expression.
    pub fn referenced_vars(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .blocks
            .iter()
            .flat_map(|b| b.terms.iter().map(|t| t.var.clone()))
            .collect();
        names.sort();
        names.dedup();
        names
    }

    /// Largest absolute entry of the constant part.
    pub fn const_scale(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.constant.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }
}
