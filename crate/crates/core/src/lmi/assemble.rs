//! Vectorization of matrix-inequality problems into standard conic form.
//!
//! Each constraint `E(x) {sense} 0` is folded into `F(x) = F0 + sum_k x_k Fk`
//! with `F(x) >= 0` required on a PSD cone: non-strict senses pass through
//! (negated for NSD), strict senses subtract a positive margin from the
//! constant part. Variables are flattened in declaration order, symmetric
//! ones by their upper triangle (column-major), general ones column-major.

use super::expr::{BlockExpr, Entry, MatrixVar, VarKind};
use super::LmiError;
use crate::Mat;
use rand::{RngExt, SeedableRng};
use std::collections::BTreeMap;

/// Constraint sense. Strict senses are enforced with an explicit margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    PsdStrict,
    Psd,
    Nsd,
    NsdStrict,
}

impl Sense {
    pub fn is_strict(self) -> bool {
        matches!(self, Sense::PsdStrict | Sense::NsdStrict)
    }

    fn sign(self) -> f64 {
        match self {
            Sense::PsdStrict | Sense::Psd => 1.0,
            Sense::Nsd | Sense::NsdStrict => -1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmiConstraint {
    pub name: String,
    pub expr: BlockExpr,
    pub sense: Sense,
    pub margin: f64,
}

impl LmiConstraint {
    /// Margin for strict constraints scales with the constant data so that
    /// badly scaled problems are not forced through a fixed absolute gap.
    pub fn new(name: &str, expr: BlockExpr, sense: Sense) -> Self {
        let margin = if sense.is_strict() {
            1e-7 * (1.0 + expr.const_scale())
        } else {
            0.0
        };
        Self {
            name: name.to_string(),
            expr,
            sense,
            margin,
        }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    /// Tolerance scale for witness checking: one plus the largest constant.
    pub fn scale(&self) -> f64 {
        1.0 + self.expr.const_scale()
    }
}

#[derive(Debug, Clone)]
pub struct LmiProblem {
    pub vars: Vec<MatrixVar>,
    pub constraints: Vec<LmiConstraint>,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self {
            vars: Vec::new(),
            constraints: Vec::new(),
        }
    }

    pub fn add_var(&mut self, v: MatrixVar) -> &mut Self {
        self.vars.push(v);
        self
    }

    pub fn add_constraint(&mut self, c: LmiConstraint) -> &mut Self {
        self.constraints.push(c);
        self
    }

    pub fn var(&self, name: &str) -> Option<&MatrixVar> {
        self.vars.iter().find(|v| v.name == name)
    }

    pub fn scalar_count(&self) -> usize {
        self.vars.iter().map(|v| v.scalar_count()).sum()
    }

    /// Zero witness covering every declared variable.
    pub fn zero_witness(&self) -> BTreeMap<String, Mat> {
        self.vars
            .iter()
            .map(|v| (v.name.clone(), Mat::zeros(v.rows, v.cols)))
            .collect()
    }

    /// Deterministic random witness, kind-respecting (symmetric variables
    /// get symmetric values). Used for structural checks and tests.
    pub fn random_witness(&self, seed: u64) -> BTreeMap<String, Mat> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        self.vars
            .iter()
            .map(|v| {
                let mut m = Mat::zeros(v.rows, v.cols);
                for j in 0..v.cols {
                    for i in 0..v.rows {
                        m[(i, j)] = rng.random_range(-1.0..1.0);
                    }
                }
                if v.kind == VarKind::Symmetric {
                    m = (&m + m.transpose()) * 0.5;
                }
                (v.name.clone(), m)
            })
            .collect()
    }
}

impl Default for LmiProblem {
    fn default() -> Self {
        Self::new()
    }
}

/// Flattened layout of one variable inside the scalar vector.
#[derive(Debug, Clone)]
pub struct VarSlot {
    pub var: MatrixVar,
    pub offset: usize,
}

/// One PSD cone of the standard form, with provenance for reporting.
#[derive(Debug, Clone)]
pub struct ConeInfo {
    pub name: String,
    pub dim: usize,
    pub sense: Sense,
    pub margin: f64,
    pub scale: f64,
    /// Sense-folded constant matrix (dense, symmetric).
    pub f0: Mat,
    /// Sense-folded coefficient matrices, one per scalar variable, sparse:
    /// (k, Fk) pairs for the scalars that actually touch this cone.
    pub fk: Vec<(usize, Mat)>,
}

impl ConeInfo {
    /// Rebuild the folded constraint matrix at a scalar vector.
    pub fn matrix_at(&self, x: &[f64]) -> Mat {
        let mut m = self.f0.clone();
        for (k, f) in &self.fk {
            m += f * x[*k];
        }
        m
    }
}

/// Assembled standard form ready for a conic solver.
#[derive(Debug, Clone)]
pub struct StandardForm {
    pub slots: Vec<VarSlot>,
    pub cones: Vec<ConeInfo>,
    pub n_scalars: usize,
}

impl StandardForm {
    /// Witness map -> scalar vector.
    pub fn pack(&self, witness: &BTreeMap<String, Mat>) -> Result<Vec<f64>, LmiError> {
        let mut x = vec![0.0; self.n_scalars];
        for slot in &self.slots {
            let m = witness.get(&slot.var.name).ok_or_else(|| {
                LmiError::Witness(format!("missing variable {}", slot.var.name))
            })?;
            if (m.nrows(), m.ncols()) != (slot.var.rows, slot.var.cols) {
                return Err(LmiError::Witness(format!(
                    "variable {} has wrong dimensions",
                    slot.var.name
                )));
            }
            let mut k = slot.offset;
            match slot.var.kind {
                VarKind::Symmetric => {
                    for j in 0..slot.var.cols {
                        for i in 0..=j {
                            x[k] = 0.5 * (m[(i, j)] + m[(j, i)]);
                            k += 1;
                        }
                    }
                }
                VarKind::General => {
                    for j in 0..slot.var.cols {
                        for i in 0..slot.var.rows {
                            x[k] = m[(i, j)];
                            k += 1;
                        }
                    }
                }
            }
        }
        Ok(x)
    }

    /// Scalar vector -> witness map.
    pub fn unpack(&self, x: &[f64]) -> BTreeMap<String, Mat> {
        assert_eq!(x.len(), self.n_scalars);
        let mut out = BTreeMap::new();
        for slot in &self.slots {
            let mut m = Mat::zeros(slot.var.rows, slot.var.cols);
            let mut k = slot.offset;
            match slot.var.kind {
                VarKind::Symmetric => {
                    for j in 0..slot.var.cols {
                        for i in 0..=j {
                            m[(i, j)] = x[k];
                            m[(j, i)] = x[k];
                            k += 1;
                        }
                    }
                }
                VarKind::General => {
                    for j in 0..slot.var.cols {
                        for i in 0..slot.var.rows {
                            m[(i, j)] = x[k];
                            k += 1;
                        }
                    }
                }
            }
            out.insert(slot.var.name.clone(), m);
        }
        out
    }
}

fn basis_matrices(v: &MatrixVar) -> Vec<Mat> {
    let mut out = Vec::with_capacity(v.scalar_count());
    match v.kind {
        VarKind::Symmetric => {
            for j in 0..v.cols {
                for i in 0..=j {
                    let mut m = Mat::zeros(v.rows, v.cols);
                    m[(i, j)] = 1.0;
                    m[(j, i)] = 1.0;
                    out.push(m);
                }
            }
        }
        VarKind::General => {
            for j in 0..v.cols {
                for i in 0..v.rows {
                    let mut m = Mat::zeros(v.rows, v.cols);
                    m[(i, j)] = 1.0;
                    out.push(m);
                }
            }
        }
    }
    out
}

fn validate_entry_dims(
    e: &Entry,
    vars: &BTreeMap<&str, &MatrixVar>,
    cname: &str,
) -> Result<(), LmiError> {
    for t in &e.terms {
        let v = vars.get(t.var.as_str()).ok_or_else(|| {
            LmiError::Structure(format!("constraint {cname}: undeclared variable {}", t.var))
        })?;
        let (vr, vc) = if t.transposed {
            (v.cols, v.rows)
        } else {
            (v.rows, v.cols)
        };
        let rr = t.left.as_ref().map_or(vr, |l| {
            if l.ncols() != vr { usize::MAX } else { l.nrows() }
        });
        let cc = t.right.as_ref().map_or(vc, |r| {
            if r.nrows() != vc { usize::MAX } else { r.ncols() }
        });
        if rr != e.rows || cc != e.cols {
            return Err(LmiError::Structure(format!(
                "constraint {cname}: term in {} has inconsistent dimensions",
                t.var
            )));
        }
    }
    Ok(())
}

/// Validate and vectorize a problem.
pub fn assemble(problem: &LmiProblem) -> Result<StandardForm, LmiError> {
    // Unique declarations.
    let mut seen = BTreeMap::new();
    for v in &problem.vars {
        if v.rows == 0 || v.cols == 0 {
            return Err(LmiError::Structure(format!("variable {} is empty", v.name)));
        }
        if v.kind == VarKind::Symmetric && v.rows != v.cols {
            return Err(LmiError::Structure(format!(
                "symmetric variable {} is not square",
                v.name
            )));
        }
        if seen.insert(v.name.as_str(), v).is_some() {
            return Err(LmiError::Structure(format!(
                "variable {} declared twice",
                v.name
            )));
        }
    }

    let mut slots = Vec::with_capacity(problem.vars.len());
    let mut offset = 0;
    for v in &problem.vars {
        slots.push(VarSlot {
            var: v.clone(),
            offset,
        });
        offset += v.scalar_count();
    }
    let n_scalars = offset;
    if n_scalars == 0 {
        return Err(LmiError::Structure("problem has no variables".into()));
    }

    // Structural checks per constraint.
    for c in &problem.constraints {
        if !c.expr.is_square() {
            return Err(LmiError::Structure(format!(
                "constraint {} is not square",
                c.name
            )));
        }
        if c.sense.is_strict() && !(c.margin > 0.0 && c.margin.is_finite()) {
            return Err(LmiError::Structure(format!(
                "constraint {}: strict sense requires a positive margin",
                c.name
            )));
        }
        for i in 0..c.expr.row_dims.len() {
            for j in 0..c.expr.col_dims.len() {
                validate_entry_dims(c.expr.block(i, j), &seen, &c.name)?;
            }
        }
        // Numerical symmetry check at random witnesses. Catches forgotten
        // mirror blocks that pure structure checks would miss.
        for seed in [11u64, 12, 13] {
            let w = problem.random_witness(seed);
            let m = c.expr.eval(&w).map_err(LmiError::Structure)?;
            let dev = (&m - m.transpose()).abs().max();
            let scale = 1.0 + m.abs().max();
            if dev > 1e-10 * scale {
                return Err(LmiError::Structure(format!(
                    "constraint {} is not symmetric (deviation {dev:.3e})",
                    c.name
                )));
            }
        }
    }

    if problem.constraints.is_empty() {
        return Err(LmiError::Structure("problem has no constraints".into()));
    }

    // Vectorize: evaluate at zero for F0, at each basis matrix for Fk.
    let zero = problem.zero_witness();
    let mut cones = Vec::with_capacity(problem.constraints.len());
    for c in &problem.constraints {
        let sign = c.sense.sign();
        let dim = c.expr.nrows();
        let e0 = c.expr.eval(&zero).map_err(LmiError::Structure)?;
        let mut f0 = e0.clone() * sign;
        if c.sense.is_strict() {
            for i in 0..dim {
                f0[(i, i)] -= c.margin;
            }
        }
        let referenced = c.expr.referenced_vars();
        let mut fk = Vec::new();
        for slot in &slots {
            if !referenced.contains(&slot.var.name) {
                continue;
            }
            let mut w = zero.clone();
            for (k, basis) in basis_matrices(&slot.var).into_iter().enumerate() {
                w.insert(slot.var.name.clone(), basis);
                let ek = c.expr.eval(&w).map_err(LmiError::Structure)?;
                let f = (ek - &e0) * sign;
                if f.abs().max() > 0.0 {
                    fk.push((slot.offset + k, f));
                }
            }
        }
        fk.sort_by_key(|(k, _)| *k);
        cones.push(ConeInfo {
            name: c.name.clone(),
            dim,
            sense: c.sense,
            margin: c.margin,
            scale: c.scale(),
            f0,
            fk,
        });
    }

    Ok(StandardForm {
        slots,
        cones,
        n_scalars,
    })
}
