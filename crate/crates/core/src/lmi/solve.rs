//! Conic solve of assembled problems and independent witness checking.
//!
//! Feasibility runs as a phase-I program: maximize a uniform slack t under
//! `F(x) - t*scale*I >= 0` per cone, with t capped at 1. A pure
//! objective-free feasibility solve gives the interior-point method nothing
//! to center on and routinely stalls at noise-level violations; the slack
//! objective yields witnesses with genuinely positive margins and a signed
//! measure of how far from feasibility an infeasible problem is.
//!
//! Feasibility is never taken on the solver's word alone: `Feasible`
//! requires the returned witness to pass an eigenvalue check of every
//! original constraint and the optimal slack to be positive. `Infeasible`
//! requires a fully converged solve with negative optimal slack; everything
//! else is `Undecided`.

use super::assemble::{assemble, ConeInfo, LmiProblem, Sense, StandardForm};
use super::LmiError;
use crate::Mat;
use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, PSDTriangleConeT, SolverStatus,
    SupportedConeT,
};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeasStatus {
    Feasible,
    Infeasible,
    Undecided,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Relative tolerance for the post-solve witness check.
    pub check_tol: f64,
    pub verbose: bool,
    pub max_iter: u32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            check_tol: 1e-8,
            verbose: false,
            max_iter: 200,
        }
    }
}

/// Per-constraint slack at a witness.
#[derive(Debug, Clone)]
pub struct SlackReport {
    pub name: String,
    pub dim: usize,
    pub sense: Sense,
    /// Worst-eigenvalue slack after sense folding and margin subtraction.
    /// Nonnegative means satisfied with room to spare.
    pub slack: f64,
    pub margin: f64,
    pub scale: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone)]
pub struct SolveDiagnostics {
    pub solver_status: String,
    pub iterations: u32,
    pub solve_time: f64,
    pub r_prim: f64,
    pub r_dual: f64,
    /// Optimal uniform slack of the phase-I program; positive means the
    /// constraints hold with room to spare at the witness.
    pub max_slack: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FeasibilityResult {
    pub status: FeasStatus,
    pub witness: Option<BTreeMap<String, Mat>>,
    pub slacks: Vec<SlackReport>,
    pub diagnostics: SolveDiagnostics,
}

impl FeasibilityResult {
    pub fn is_feasible(&self) -> bool {
        self.status == FeasStatus::Feasible
    }
}

/// Extreme eigenvalues of the symmetric part of a matrix.
pub fn sym_eig_range(m: &Mat) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let s = (m + m.transpose()) * 0.5;
    let eigs = s.symmetric_eigen().eigenvalues;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &e in eigs.iter() {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    (lo, hi)
}

/// Evaluate every constraint at a witness and report eigenvalue slacks.
/// `tol` is relative; each constraint is accepted when its folded minimum
/// eigenvalue is at least `-tol * scale` past the required margin.
pub fn check_witness(
    problem: &LmiProblem,
    witness: &BTreeMap<String, Mat>,
    tol: f64,
) -> Result<Vec<SlackReport>, LmiError> {
    let mut out = Vec::with_capacity(problem.constraints.len());
    for c in &problem.constraints {
        let e = c.expr.eval(witness).map_err(LmiError::Witness)?;
        let (lo, hi) = sym_eig_range(&e);
        let slack = match c.sense {
            Sense::Psd => lo,
            Sense::PsdStrict => lo - c.margin,
            Sense::Nsd => -hi,
            Sense::NsdStrict => -hi - c.margin,
        };
        let scale = c.scale();
        out.push(SlackReport {
            name: c.name.clone(),
            dim: e.nrows(),
            sense: c.sense,
            slack,
            margin: c.margin,
            scale,
            satisfied: slack >= -tol * scale,
        });
    }
    Ok(out)
}

pub fn witness_ok(reports: &[SlackReport]) -> bool {
    reports.iter().all(|r| r.satisfied)
}

/// Solve a pure feasibility problem with default options.
pub fn solve_feasibility(problem: &LmiProblem) -> Result<FeasibilityResult, LmiError> {
    solve_with(problem, &SolveOptions::default())
}

pub fn solve_with(
    problem: &LmiProblem,
    opts: &SolveOptions,
) -> Result<FeasibilityResult, LmiError> {
    let sf = assemble(problem)?;
    let (a, b, cones) = conic_data(&sf);

    let n = sf.n_scalars;
    // Minimize -t, i.e. maximize the uniform slack appended as the last
    // scalar. The cap in `conic_data` keeps the program bounded even for
    // homogeneous constraint sets.
    let p = CscMatrix::<f64>::zeros((n + 1, n + 1));
    let mut q = vec![0.0; n + 1];
    q[n] = -1.0;
    let mut settings = DefaultSettings::default();
    settings.verbose = opts.verbose;
    settings.max_iter = opts.max_iter;
    // Near-boundary designs need the optimal slack resolved to ~1e-7 of the
    // cone scale; the defaults stop well short of that, and chordal
    // decomposition of the block-sparse cones costs accuracy.
    settings.tol_gap_abs = 1e-12;
    settings.tol_gap_rel = 1e-12;
    settings.tol_feas = 1e-12;
    settings.tol_ktratio = 1e-7;
    settings.static_regularization_constant = 1e-10;
    settings.equilibrate_max_iter = 50;
    settings.chordal_decomposition_enable = false;

    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
        .map_err(|e| LmiError::Solver(format!("{e:?}")))?;
    solver.solve();

    let sol = &solver.solution;
    let converged = matches!(
        sol.status,
        SolverStatus::Solved | SolverStatus::AlmostSolved
    );
    let max_slack = if sol.x.len() == n + 1 && converged {
        Some(sol.x[n])
    } else {
        None
    };
    let diagnostics = SolveDiagnostics {
        solver_status: format!("{:?}", sol.status),
        iterations: sol.iterations,
        solve_time: sol.solve_time,
        r_prim: sol.r_prim,
        r_dual: sol.r_dual,
        max_slack,
    };

    if !converged {
        return Ok(FeasibilityResult {
            status: FeasStatus::Undecided,
            witness: None,
            slacks: Vec::new(),
            diagnostics,
        });
    }

    let t_opt = max_slack.unwrap_or(f64::NEG_INFINITY);
    let witness = sf.unpack(&sol.x[..n]);
    let slacks = check_witness(problem, &witness, opts.check_tol)?;
    let ok = witness_ok(&slacks);
    let status = if ok && t_opt > 0.0 {
        FeasStatus::Feasible
    } else if !ok && t_opt < -1e-8 && sol.status == SolverStatus::Solved {
        // The best uniform slack is negative beyond solver accuracy: no
        // assignment satisfies the constraints with their margins.
        FeasStatus::Infeasible
    } else {
        FeasStatus::Undecided
    };
    Ok(FeasibilityResult {
        status,
        witness: Some(witness),
        slacks,
        diagnostics,
    })
}

/// Per-cone diagonal equilibration: d_i = 1/sqrt(largest absolute entry in
/// row i across the constant and every coefficient matrix). The congruence
/// D F(x) D keeps the feasible set and definiteness exactly and flattens
/// intra-cone spans like a gain bound's gamma^2 against unit output rows,
/// which plain row scaling of the svec form cannot do symmetrically.
fn equilibration(c: &ConeInfo) -> Vec<f64> {
    let mut m = vec![0.0_f64; c.dim];
    let mut scan = |f: &Mat| {
        for i in 0..c.dim {
            for j in 0..c.dim {
                m[i] = m[i].max(f[(i, j)].abs());
            }
        }
    };
    scan(&c.f0);
    for (_, f) in &c.fk {
        scan(f);
    }
    // A row that is zero in every matrix stays zero and gets no slack
    // shift; d = 0 marks it for the caller.
    m.iter()
        .map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 })
        .collect()
}

/// svec of D M D for diagonal D given as a slice.
fn svec_scaled(m: &Mat, d: &[f64]) -> Vec<f64> {
    let n = m.nrows();
    let s2 = std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]) * d[i] * d[j];
            out.push(if i == j { v } else { v * s2 });
        }
    }
    out
}

/// Build the conic data: s = b - A z with z = (x, t) and one PSD triangle
/// cone per constraint holding the equilibrated `D (F0 + sum_k x_k Fk) D -
/// t*I >= 0`, so b = svec(D F0 D), column k of A is -svec(D Fk D), and the
/// slack column carries +1 on cone diagonals. A final one-dimensional
/// nonnegative cone enforces t <= 1. The congruence preserves feasibility
/// and the sign of the optimal slack.
fn conic_data(sf: &StandardForm) -> (CscMatrix<f64>, Vec<f64>, Vec<SupportedConeT<f64>>) {
    let n = sf.n_scalars;
    let mut cone_base = Vec::with_capacity(sf.cones.len());
    let mut m_rows = 0;
    for c in &sf.cones {
        cone_base.push(m_rows);
        m_rows += c.dim * (c.dim + 1) / 2;
    }
    let scalings: Vec<Vec<f64>> = sf.cones.iter().map(equilibration).collect();

    let mut b = Vec::with_capacity(m_rows + 1);
    for (c, d) in sf.cones.iter().zip(&scalings) {
        b.extend(svec_scaled(&c.f0, d));
    }
    b.push(1.0);

    // Column-major assembly: per scalar, stack its contributions cone by
    // cone so row indices stay sorted within each column.
    let mut per_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n + 1];
    for (ci, c) in sf.cones.iter().enumerate() {
        let base = cone_base[ci];
        for (k, f) in &c.fk {
            for (r, v) in svec_scaled(f, &scalings[ci]).into_iter().enumerate() {
                if v != 0.0 {
                    per_col[*k].push((base + r, -v));
                }
            }
        }
        // Diagonal svec entries of the identity sit at offsets j(j+1)/2+j.
        for j in 0..c.dim {
            if scalings[ci][j] > 0.0 {
                per_col[n].push((base + j * (j + 1) / 2 + j, 1.0));
            }
        }
    }
    per_col[n].push((m_rows, 1.0));

    let mut colptr = Vec::with_capacity(n + 2);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for col in &mut per_col {
        col.sort_by_key(|(r, _)| *r);
        for (r, v) in col.iter() {
            rowval.push(*r);
            nzval.push(*v);
        }
        colptr.push(rowval.len());
    }

    let a = CscMatrix::new(m_rows + 1, n + 1, colptr, rowval, nzval);
    let mut cones: Vec<SupportedConeT<f64>> = sf
        .cones
        .iter()
        .map(|c| PSDTriangleConeT(c.dim))
        .collect();
    cones.push(NonnegativeConeT(1));
    (a, b, cones)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::expr::{BlockExpr, MatrixVar};
    use crate::lmi::assemble::LmiConstraint;
    use rand::{RngExt, SeedableRng};

    /// Dense s = b - A z for a CSC matrix.
    fn residual(a: &CscMatrix<f64>, b: &[f64], z: &[f64]) -> Vec<f64> {
        let mut s = b.to_vec();
        for col in 0..a.n {
            let range = a.colptr[col]..a.colptr[col + 1];
            for idx in range {
                s[a.rowval[idx]] -= a.nzval[idx] * z[col];
            }
        }
        s
    }

    #[test]
    fn conic_encoding_matches_direct_evaluation() {
        // Multi-scale problem with all four senses and a rectangular
        // variable, evaluated at random assignments and slack values.
        let mut prob = LmiProblem::new();
        prob.add_var(MatrixVar::sym("P", 3));
        prob.add_var(MatrixVar::general("Z", 3, 2));
        let big = Mat::identity(3, 3) * 4.0e4;

        let mut c1 = BlockExpr::square(&[3, 2]);
        c1.sym_block(0, 0, |e| {
            e.var(1.0, "P").cst(&big);
        });
        c1.sym_block(0, 1, |e| {
            e.var(0.5, "Z");
        });
        let m = Mat::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        c1.sym_block(1, 1, |e| {
            e.right_t(1.0, "Z", &m).left(1.0, &m.transpose(), "Z");
        });
        prob.add_constraint(LmiConstraint::new("mixed", c1, Sense::Nsd));

        let mut c2 = BlockExpr::square(&[3]);
        c2.block_mut(0, 0).var(1.0, "P");
        prob.add_constraint(LmiConstraint::new("P_pos", c2, Sense::PsdStrict));

        let sf = assemble(&prob).unwrap();
        let (a, b, _cones) = conic_data(&sf);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut z: Vec<f64> = (0..sf.n_scalars + 1)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            let t = z[sf.n_scalars];
            let s = residual(&a, &b, &z);
            z.truncate(sf.n_scalars);
            let mut row = 0;
            for cone in &sf.cones {
                let d = equilibration(cone);
                let mut shifted = cone.matrix_at(&z);
                for i in 0..cone.dim {
                    for j in 0..cone.dim {
                        shifted[(i, j)] *= d[i] * d[j];
                    }
                }
                for i in 0..cone.dim {
                    if d[i] > 0.0 {
                        shifted[(i, i)] -= t;
                    }
                }
                let ones = vec![1.0; cone.dim];
                for (idx, v) in svec_scaled(&shifted, &ones).into_iter().enumerate() {
                    let got = s[row + idx];
                    assert!(
                        (got - v).abs() <= 1e-9 * (1.0 + v.abs()),
                        "cone {} entry {idx}: {got} vs {v}",
                        cone.name
                    );
                }
                row += cone.dim * (cone.dim + 1) / 2;
            }
            let cap = s[row];
            assert!((cap - (1.0 - t)).abs() <= 1e-12);
        }
    }
}
