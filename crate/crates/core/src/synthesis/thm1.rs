//! Stability certificates for the delay-free event-triggered loop.
//!
//! [`build_thm1`] certifies the switching trigger (wait h, then monitor
//! continuously); [`build_remark1`] certifies the periodic-check trigger
//! (condition tested only every h). Both produce pure feasibility problems
//! whose decision variables parameterize a Lyapunov functional: feasibility
//! at (h, eps, delta) proves exponential decay at rate delta.

use super::{finite_nonneg, finite_pos, SynthesisError};
use crate::lmi::{BlockExpr, Entry, LmiConstraint, LmiProblem, MatrixVar, Sense};
use crate::plant::{Gain, SimplePlant};
use crate::Mat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thm1Params {
    pub h: f64,
    pub eps: f64,
    pub delta: f64,
}

impl Thm1Params {
    pub fn new(h: f64, eps: f64, delta: f64) -> Result<Self, SynthesisError> {
        finite_pos(h, "h")?;
        finite_nonneg(eps, "eps")?;
        finite_nonneg(delta, "delta")?;
        Ok(Self { h, eps, delta })
    }
}

/// Precomputed constant matrices shared by the two builders.
struct Ctx {
    n: usize,
    l: usize,
    h: f64,
    eps: f64,
    delta: f64,
    a: Mat,
    at: Mat,
    c: Mat,
    ct: Mat,
    bk: Mat,
    acl: Mat,
    aclt: Mat,
    bkc: Mat,
}

impl Ctx {
    fn new(plant: &SimplePlant, gain: &Gain, p: &Thm1Params) -> Result<Self, SynthesisError> {
        gain.check_dims(plant.m(), plant.l())?;
        let bk = &plant.b * &gain.k;
        let bkc = &bk * &plant.c;
        let acl = &plant.a - &bkc;
        Ok(Self {
            n: plant.n(),
            l: plant.l(),
            h: p.h,
            eps: p.eps,
            delta: p.delta,
            at: plant.a.transpose(),
            a: plant.a.clone(),
            ct: plant.c.transpose(),
            c: plant.c.clone(),
            aclt: acl.transpose(),
            acl,
            bk,
            bkc,
        })
    }

    fn declare_vars(&self, prob: &mut LmiProblem) {
        prob.add_var(MatrixVar::sym("P", self.n));
        prob.add_var(MatrixVar::sym("U", self.n));
        for name in ["X", "X1", "P2", "P3", "Y1", "Y2", "Y3"] {
            prob.add_var(MatrixVar::general(name, self.n, self.n));
        }
        prob.add_var(MatrixVar::sym("Om", self.l));
    }

    // Core blocks of the waiting-phase inequality.
    fn psi11(&self, e: &mut Entry) {
        e.left(1.0, &self.at, "P2")
            .right_t(1.0, "P2", &self.a)
            .var(2.0 * self.delta, "P")
            .var(-1.0, "Y1")
            .var_t(-1.0, "Y1");
    }

    fn psi12(&self, e: &mut Entry) {
        e.var(1.0, "P")
            .var_t(-1.0, "P2")
            .left(1.0, &self.at, "P3")
            .var(-1.0, "Y2");
    }

    fn psi13(&self, e: &mut Entry) {
        e.var_t(1.0, "Y1")
            .right_t(-1.0, "P2", &self.bkc)
            .var(-1.0, "Y3");
    }

    fn psi22(&self, e: &mut Entry) {
        e.var(-1.0, "P3").var_t(-1.0, "P3");
    }

    fn psi23(&self, e: &mut Entry) {
        e.var_t(1.0, "Y2").right_t(-1.0, "P3", &self.bkc);
    }

    fn psi33(&self, e: &mut Entry) {
        e.var(1.0, "Y3").var_t(1.0, "Y3");
    }

    /// coeff * (X + X')
    fn xs(e: &mut Entry, coeff: f64) {
        e.var(coeff, "X").var_t(coeff, "X");
    }

    /// coeff * (X + X' - 2 X1 - 2 X1')
    fn x2s(e: &mut Entry, coeff: f64) {
        e.var(coeff, "X")
            .var_t(coeff, "X")
            .var(-2.0 * coeff, "X1")
            .var_t(-2.0 * coeff, "X1");
    }

    /// Lower bound on the functional: the sampled-state quadratic form must
    /// stay positive over the whole waiting phase.
    fn xi_expr(&self) -> BlockExpr {
        let h = self.h;
        let mut xi = BlockExpr::square(&[self.n, self.n]);
        xi.sym_block(0, 0, |e| {
            e.var(1.0, "P");
            Self::xs(e, h / 2.0);
        });
        xi.sym_block(0, 1, |e| {
            e.var(h, "X1").var(-h, "X");
        });
        xi.sym_block(1, 1, |e| {
            e.var(-h, "X1").var_t(-h, "X1");
            Self::xs(e, h / 2.0);
        });
        xi
    }

    /// Waiting-phase decay at the start of the phase (elapsed time 0).
    /// `expr` must have block dims starting [n, n, n].
    fn fill_psi0(&self, expr: &mut BlockExpr) {
        let (h, delta) = (self.h, self.delta);
        expr.sym_block(0, 0, |e| {
            self.psi11(e);
            Self::xs(e, -(0.5 - delta * h));
        });
        expr.sym_block(0, 1, |e| {
            self.psi12(e);
            Self::xs(e, h / 2.0);
        });
        expr.sym_block(0, 2, |e| {
            self.psi13(e);
            let c = 1.0 - 2.0 * delta * h;
            e.var(c, "X").var(-c, "X1");
        });
        expr.sym_block(1, 1, |e| {
            self.psi22(e);
            e.var(h, "U");
        });
        expr.sym_block(1, 2, |e| {
            self.psi23(e);
            e.var(-h, "X").var(h, "X1");
        });
        expr.sym_block(2, 2, |e| {
            self.psi33(e);
            Self::x2s(e, -(0.5 - delta * h));
        });
    }

    /// Waiting-phase decay at the end of the phase (elapsed time h).
    /// `expr` must have block dims starting [n, n, n, n].
    fn fill_psi1(&self, expr: &mut BlockExpr) {
        let (h, delta) = (self.h, self.delta);
        expr.sym_block(0, 0, |e| {
            self.psi11(e);
            Self::xs(e, -0.5);
        });
        expr.sym_block(0, 1, |e| {
            self.psi12(e);
        });
        expr.sym_block(0, 2, |e| {
            self.psi13(e);
            e.var(1.0, "X").var(-1.0, "X1");
        });
        expr.sym_block(0, 3, |e| {
            e.var_t(h, "Y1");
        });
        expr.sym_block(1, 1, |e| {
            self.psi22(e);
        });
        expr.sym_block(1, 2, |e| {
            self.psi23(e);
        });
        expr.sym_block(1, 3, |e| {
            e.var_t(h, "Y2");
        });
        expr.sym_block(2, 2, |e| {
            self.psi33(e);
            Self::x2s(e, -0.5);
        });
        expr.sym_block(2, 3, |e| {
            e.var_t(h, "Y3");
        });
        expr.sym_block(3, 3, |e| {
            e.var(-h * (-2.0 * delta * h).exp(), "U");
        });
    }

    /// Trigger-weighted output energy term, added at block (0, 0).
    fn add_trigger_term(&self, expr: &mut BlockExpr) {
        if self.eps != 0.0 {
            let (ct, c, eps) = (self.ct.clone(), self.c.clone(), self.eps);
            let e = expr.block_mut(0, 0);
            e.wrap(eps, &ct, "Om", &c);
        }
    }

    fn positivity_constraints(&self, prob: &mut LmiProblem) {
        let mut p_pos = BlockExpr::square(&[self.n]);
        p_pos.block_mut(0, 0).var(1.0, "P");
        prob.add_constraint(LmiConstraint::new("P_pos", p_pos, Sense::PsdStrict));
        let mut u_pos = BlockExpr::square(&[self.n]);
        u_pos.block_mut(0, 0).var(1.0, "U");
        prob.add_constraint(LmiConstraint::new("U_pos", u_pos, Sense::PsdStrict));
        let mut om = BlockExpr::square(&[self.l]);
        om.block_mut(0, 0).var(1.0, "Om");
        prob.add_constraint(LmiConstraint::new("Omega_psd", om, Sense::Psd));
    }
}

/// Feasibility problem certifying the switching event-trigger at
/// (h, eps, delta): wait h after each send, then monitor continuously.
pub fn build_thm1(
    plant: &SimplePlant,
    gain: &Gain,
    p: &Thm1Params,
) -> Result<LmiProblem, SynthesisError> {
    let cx = Ctx::new(plant, gain, p)?;
    let (n, l) = (cx.n, cx.l);
    let mut prob = LmiProblem::new();
    cx.declare_vars(&mut prob);

    prob.add_constraint(LmiConstraint::new("Xi", cx.xi_expr(), Sense::PsdStrict));

    let mut psi0 = BlockExpr::square(&[n, n, n]);
    cx.fill_psi0(&mut psi0);
    prob.add_constraint(LmiConstraint::new("Psi0", psi0, Sense::Nsd));

    let mut psi1 = BlockExpr::square(&[n, n, n, n]);
    cx.fill_psi1(&mut psi1);
    prob.add_constraint(LmiConstraint::new("Psi1", psi1, Sense::Nsd));

    // Monitoring phase: quadratic form in (x, xdot, e) with the trigger
    // bound folded in by an S-procedure through Omega.
    let mut phi = BlockExpr::square(&[n, n, l]);
    phi.sym_block(0, 0, |e| {
        e.right_t(1.0, "P2", &cx.acl)
            .left(1.0, &cx.aclt, "P2")
            .var(2.0 * cx.delta, "P");
    });
    cx.add_trigger_term(&mut phi);
    phi.sym_block(0, 1, |e| {
        e.var(1.0, "P").left(1.0, &cx.aclt, "P3").var_t(-1.0, "P2");
    });
    phi.sym_block(0, 2, |e| {
        e.right_t(-1.0, "P2", &cx.bk);
    });
    phi.sym_block(1, 1, |e| {
        e.var(-1.0, "P3").var_t(-1.0, "P3");
    });
    phi.sym_block(1, 2, |e| {
        e.right_t(-1.0, "P3", &cx.bk);
    });
    phi.sym_block(2, 2, |e| {
        e.var(-1.0, "Om");
    });
    prob.add_constraint(LmiConstraint::new("Phi", phi, Sense::Nsd));

    cx.positivity_constraints(&mut prob);
    Ok(prob)
}

/// Feasibility problem certifying the periodic event-trigger at
/// (h, eps, delta): the trigger condition is checked only at multiples of
/// h, so the waiting-phase inequalities absorb the trigger bound and gain
/// an error column.
pub fn build_remark1(
    plant: &SimplePlant,
    gain: &Gain,
    p: &Thm1Params,
) -> Result<LmiProblem, SynthesisError> {
    if p.delta == 0.0 {
        log::warn!("periodic-trigger certificate with delta = 0 proves no decay margin");
    }
    let cx = Ctx::new(plant, gain, p)?;
    let (n, l) = (cx.n, cx.l);
    let mut prob = LmiProblem::new();
    cx.declare_vars(&mut prob);

    prob.add_constraint(LmiConstraint::new("Xi", cx.xi_expr(), Sense::PsdStrict));

    let mut b0 = BlockExpr::square(&[n, n, n, l]);
    cx.fill_psi0(&mut b0);
    cx.add_trigger_term(&mut b0);
    b0.sym_block(0, 3, |e| {
        e.right_t(-1.0, "P2", &cx.bk);
    });
    b0.sym_block(1, 3, |e| {
        e.right_t(-1.0, "P3", &cx.bk);
    });
    b0.sym_block(3, 3, |e| {
        e.var(-1.0, "Om");
    });
    prob.add_constraint(LmiConstraint::new("Border0", b0, Sense::Nsd));

    let mut b1 = BlockExpr::square(&[n, n, n, n, l]);
    cx.fill_psi1(&mut b1);
    cx.add_trigger_term(&mut b1);
    b1.sym_block(0, 4, |e| {
        e.right_t(-1.0, "P2", &cx.bk);
    });
    b1.sym_block(1, 4, |e| {
        e.right_t(-1.0, "P3", &cx.bk);
    });
    b1.sym_block(4, 4, |e| {
        e.var(-1.0, "Om");
    });
    prob.add_constraint(LmiConstraint::new("Border1", b1, Sense::Nsd));

    cx.positivity_constraints(&mut prob);
    Ok(prob)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::lmi::{assemble, check_witness, solve_feasibility, witness_ok, FeasStatus};
    use crate::plant::{load_plant, LoadedPlant};

    pub(crate) fn example1() -> (SimplePlant, Gain) {
        let doc = load_plant(crate::plant::tests::EXAMPLE1).unwrap();
        let gain = doc.gain.clone().unwrap();
        match doc.plant {
            LoadedPlant::Simple(p) => (p, gain),
            _ => unreachable!(),
        }
    }

    pub(crate) fn example2() -> (SimplePlant, Gain) {
        let doc = load_plant(crate::plant::tests::EXAMPLE2).unwrap();
        let gain = doc.gain.clone().unwrap();
        match doc.plant {
            LoadedPlant::Simple(p) => (p, gain),
            _ => unreachable!(),
        }
    }

    /// Cart-pendulum state-feedback benchmark.
    pub(crate) fn example3() -> (SimplePlant, Gain) {
        let a = Mat::from_row_slice(
            4,
            4,
            &[
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, -1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, 10.0 / 3.0, 0.0,
            ],
        );
        let b = Mat::from_column_slice(4, 1, &[0.0, 0.1, 0.0, -1.0 / 30.0]);
        let c = Mat::identity(4, 4);
        let k = Mat::from_row_slice(1, 4, &[-2.0, -12.0, -378.0, -210.0]);
        (SimplePlant::new(a, b, c).unwrap(), Gain::new(k).unwrap())
    }

    fn feasible(plant: &SimplePlant, gain: &Gain, h: f64, eps: f64, delta: f64) -> bool {
        let p = Thm1Params::new(h, eps, delta).unwrap();
        let prob = build_thm1(plant, gain, &p).unwrap();
        solve_feasibility(&prob).unwrap().is_feasible()
    }

    fn feasible_r1(plant: &SimplePlant, gain: &Gain, h: f64, eps: f64, delta: f64) -> bool {
        let p = Thm1Params::new(h, eps, delta).unwrap();
        let prob = build_remark1(plant, gain, &p).unwrap();
        solve_feasibility(&prob).unwrap().is_feasible()
    }

    #[test]
    fn example1_feasible_at_published_point() {
        let (plant, gain) = example1();
        assert!(feasible(&plant, &gain, 0.356, 0.0, 0.24));
    }

    #[test]
    fn example1_not_feasible_beyond_margin() {
        let (plant, gain) = example1();
        assert!(!feasible(&plant, &gain, 0.60, 0.0, 0.001));
    }

    #[test]
    fn unstabilized_plant_never_feasible() {
        let (plant, _) = example1();
        let zero = Gain::new(Mat::zeros(1, 2)).unwrap();
        for (h, eps, delta) in [(0.05, 0.0, 0.0), (0.2, 0.1, 0.24), (0.5, 0.0, 0.1)] {
            assert!(!feasible(&plant, &zero, h, eps, delta), "h={h} eps={eps}");
        }
    }

    #[test]
    fn pendulum_feasible_at_published_point() {
        let (plant, gain) = example3();
        assert!(feasible(&plant, &gain, 0.242, 0.35, 0.0));
    }

    #[test]
    fn problem_shape_matches_contract() {
        let (plant, gain) = example1();
        let p = Thm1Params::new(0.3, 0.1, 0.24).unwrap();
        let prob = build_thm1(&plant, &gain, &p).unwrap();
        let n = plant.n();
        let l = plant.l();
        let names: Vec<&str> = prob.constraints.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(
            names,
            ["Xi", "Psi0", "Psi1", "Phi", "P_pos", "U_pos", "Omega_psd"]
        );
        let dims: Vec<usize> = prob.constraints.iter().map(|c| c.expr.nrows()).collect();
        assert_eq!(dims, [2 * n, 3 * n, 4 * n, 2 * n + l, n, n, l]);
        // 2 symmetric n x n, 7 general n x n, 1 symmetric l x l.
        assert_eq!(
            prob.scalar_count(),
            n * (n + 1) + 7 * n * n + l * (l + 1) / 2
        );
        assert!(assemble(&prob).is_ok());
    }

    #[test]
    fn periodic_variant_shape_matches_contract() {
        let (plant, gain) = example2();
        let p = Thm1Params::new(0.3, 0.1, 0.24).unwrap();
        let prob = build_remark1(&plant, &gain, &p).unwrap();
        let n = plant.n();
        let l = plant.l();
        let dims: Vec<usize> = prob.constraints.iter().map(|c| c.expr.nrows()).collect();
        assert_eq!(dims, [2 * n, 3 * n + l, 4 * n + l, n, n, l]);
        assert!(assemble(&prob).is_ok());
    }

    #[test]
    fn example2_periodic_trigger_published_points() {
        let (plant, gain) = example2();
        assert!(feasible_r1(&plant, &gain, 1.115, 4.6e-3, 0.24));
        assert!(feasible_r1(&plant, &gain, 0.344, 0.555, 0.24));
    }

    /// The separation the switching trigger buys: at eps = 0.555 it
    /// certifies waits just under 0.899 where the periodic trigger tops
    /// out near 0.344.
    #[test]
    fn switching_beats_periodic_at_large_eps() {
        let (plant, gain) = example2();
        assert!(feasible(&plant, &gain, 0.895, 0.555, 0.24));
        assert!(!feasible_r1(&plant, &gain, 0.895, 0.555, 0.24));
    }

    #[test]
    fn periodic_feasibility_implies_switching_feasibility_at_table_points() {
        let (plant, gain) = example2();
        for (h, eps) in [(1.115, 4.6e-3), (0.344, 0.555), (1.0, 1e-3), (0.3, 0.4)] {
            if feasible_r1(&plant, &gain, h, eps, 0.24) {
                assert!(feasible(&plant, &gain, h, eps, 0.24), "h={h} eps={eps}");
            }
        }
    }

    #[test]
    fn witness_passes_independent_check() {
        let (plant, gain) = example1();
        let p = Thm1Params::new(0.25, 0.01, 0.24).unwrap();
        let prob = build_thm1(&plant, &gain, &p).unwrap();
        let res = solve_feasibility(&prob).unwrap();
        assert_eq!(res.status, FeasStatus::Feasible);
        let reports = check_witness(&prob, &res.witness.unwrap(), 1e-8).unwrap();
        assert!(witness_ok(&reports));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Thm1Params::new(0.0, 0.0, 0.1).is_err());
        assert!(Thm1Params::new(-0.1, 0.0, 0.1).is_err());
        assert!(Thm1Params::new(0.1, -1e-9, 0.1).is_err());
        assert!(Thm1Params::new(0.1, 0.0, -0.1).is_err());
        assert!(Thm1Params::new(f64::NAN, 0.0, 0.1).is_err());
    }

    #[test]
    fn rejects_gain_dimension_mismatch() {
        let (plant, _) = example1();
        let bad = Gain::new(Mat::zeros(2, 2)).unwrap();
        let p = Thm1Params::new(0.1, 0.0, 0.1).unwrap();
        assert!(build_thm1(&plant, &bad, &p).is_err());
    }

    /// Constraint data must be affine in (A, B): instantiating at a convex
    /// combination of two plants equals the convex combination of the
    /// instantiated data.
    #[test]
    fn constraint_data_affine_in_plant() {
        let (p0, gain) = example1();
        let mut a1 = p0.a.clone();
        a1[(1, 1)] *= 1.02;
        let mut b1 = p0.b.clone();
        b1[(1, 0)] *= 0.97;
        let p1 = SimplePlant::new(a1, b1, p0.c.clone()).unwrap();
        let lam = 0.3;
        let mid = SimplePlant::new(
            &p0.a * lam + &p1.a * (1.0 - lam),
            &p0.b * lam + &p1.b * (1.0 - lam),
            p0.c.clone(),
        )
        .unwrap();
        let pars = Thm1Params::new(0.3, 0.2, 0.1).unwrap();
        let sf0 = assemble(&build_thm1(&p0, &gain, &pars).unwrap()).unwrap();
        let sf1 = assemble(&build_thm1(&p1, &gain, &pars).unwrap()).unwrap();
        let sfm = assemble(&build_thm1(&mid, &gain, &pars).unwrap()).unwrap();
        for c in 0..sfm.cones.len() {
            let f0 = &sf0.cones[c].f0 * lam + &sf1.cones[c].f0 * (1.0 - lam);
            assert!((&sfm.cones[c].f0 - f0).abs().max() < 1e-12);
            assert_eq!(sfm.cones[c].fk.len(), sf0.cones[c].fk.len());
            for (i, (k, f)) in sfm.cones[c].fk.iter().enumerate() {
                let (k0, fa) = &sf0.cones[c].fk[i];
                let (k1, fb) = &sf1.cones[c].fk[i];
                assert_eq!((k0, k1), (k, k));
                let mix = fa * lam + fb * (1.0 - lam);
                let dev = (f - &mix).abs().max();
                assert!(dev < 1e-12 * (1.0 + mix.abs().max()), "cone {c} var {k}");
            }
        }
    }
}
