//! Certificates for the event-triggered loop under network delays and
//! L2 disturbances, and the delay-partitioned variant for the periodic
//! trigger.
//!
//! Feasibility at (gamma, h, eta_m, eps, delta) proves internal exponential
//! decay at rate delta and L2 gain below gamma for the loop whose packets
//! arrive with delays up to eta_m. The functional's history windows are
//! split at eta_m and tau_m = h + eta_m; Park cross terms couple the split.

use super::{finite_nonneg, finite_pos, SynthesisError};
use crate::lmi::{BlockExpr, Entry, LmiConstraint, LmiProblem, MatrixVar, Sense};
use crate::plant::{Gain, PerturbedPlant};
use crate::Mat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thm2Params {
    pub gamma: f64,
    pub h: f64,
    pub eta_m: f64,
    pub eps: f64,
    pub delta: f64,
}

impl Thm2Params {
    pub fn new(
        gamma: f64,
        h: f64,
        eta_m: f64,
        eps: f64,
        delta: f64,
    ) -> Result<Self, SynthesisError> {
        finite_pos(gamma, "gamma")?;
        finite_pos(h, "h")?;
        finite_nonneg(eta_m, "eta_m")?;
        finite_nonneg(eps, "eps")?;
        finite_nonneg(delta, "delta")?;
        Ok(Self {
            gamma,
            h,
            eta_m,
            eps,
            delta,
        })
    }

    /// Total delay bound: waiting time plus worst network delay.
    pub fn tau_m(&self) -> f64 {
        self.h + self.eta_m
    }
}

/// Constant products shared by both inequality branches.
struct Ctx {
    n: usize,
    l: usize,
    n_w: usize,
    n_v: usize,
    gamma: f64,
    eps: f64,
    delta: f64,
    a: Mat,
    at: Mat,
    b1: Mat,
    b1t: Mat,
    c2: Mat,
    c2t: Mat,
    d2: Mat,
    d2t: Mat,
    b2k: Mat,
    b2kt: Mat,
    b2kc2: Mat,
    b2kc2t: Mat,
    b2kd2: Mat,
    b2kd2t: Mat,
    c1tc1: Mat,
    c1t_d1kc2: Mat,
    c1t_d1k: Mat,
    c1t_d1kd2: Mat,
    d1kc2_t_d1kc2: Mat,
    d1kc2_t_d1k: Mat,
    d1kc2_t_d1kd2: Mat,
    d1k_t_d1k: Mat,
    d1k_t_d1kd2: Mat,
    d1kd2_t_d1kd2: Mat,
}

impl Ctx {
    fn new(plant: &PerturbedPlant, gain: &Gain, p: &Thm2Params) -> Result<Self, SynthesisError> {
        gain.check_dims(plant.m(), plant.l())?;
        let b2k = &plant.b2 * &gain.k;
        let b2kc2 = &b2k * &plant.c2;
        let b2kd2 = &b2k * &plant.d2;
        let d1k = &plant.d1 * &gain.k;
        let d1kc2 = &d1k * &plant.c2;
        let d1kd2 = &d1k * &plant.d2;
        Ok(Self {
            n: plant.n(),
            l: plant.l(),
            n_w: plant.n_w(),
            n_v: plant.n_v(),
            gamma: p.gamma,
            eps: p.eps,
            delta: p.delta,
            at: plant.a.transpose(),
            a: plant.a.clone(),
            b1t: plant.b1.transpose(),
            b1: plant.b1.clone(),
            c2t: plant.c2.transpose(),
            c2: plant.c2.clone(),
            d2t: plant.d2.transpose(),
            d2: plant.d2.clone(),
            b2kt: b2k.transpose(),
            b2kc2t: b2kc2.transpose(),
            b2kd2t: b2kd2.transpose(),
            c1tc1: plant.c1.transpose() * &plant.c1,
            c1t_d1kc2: plant.c1.transpose() * &d1kc2,
            c1t_d1k: plant.c1.transpose() * &d1k,
            c1t_d1kd2: plant.c1.transpose() * &d1kd2,
            d1kc2_t_d1kc2: d1kc2.transpose() * &d1kc2,
            d1kc2_t_d1k: d1kc2.transpose() * &d1k,
            d1kc2_t_d1kd2: d1kc2.transpose() * &d1kd2,
            d1k_t_d1k: d1k.transpose() * &d1k,
            d1k_t_d1kd2: d1k.transpose() * &d1kd2,
            d1kd2_t_d1kd2: d1kd2.transpose() * &d1kd2,
            b2k,
            b2kc2,
            b2kd2,
        })
    }

    fn declare_vars(&self, prob: &mut LmiProblem, with_g1: bool) {
        prob.add_var(MatrixVar::sym("P", self.n));
        prob.add_var(MatrixVar::sym("S0", self.n));
        prob.add_var(MatrixVar::sym("S1", self.n));
        prob.add_var(MatrixVar::sym("R0", self.n));
        prob.add_var(MatrixVar::sym("R1", self.n));
        prob.add_var(MatrixVar::general("G0", self.n, self.n));
        if with_g1 {
            prob.add_var(MatrixVar::general("G1", self.n, self.n));
        }
        prob.add_var(MatrixVar::sym("Om", self.l));
    }

    /// left' * H with H = eta^2 R0 + hw^2 R1 substituted symbolically.
    fn h_term(e: &mut Entry, lt: &Mat, eta: f64, hw: f64) {
        e.left(eta * eta, lt, "R0").left(hw * hw, lt, "R1");
    }

    fn neg_h(e: &mut Entry, eta: f64, hw: f64) {
        e.var(-eta * eta, "R0").var(-hw * hw, "R1");
    }

    /// Shared (0,0) block: loop matrix against P plus state-history and
    /// output-energy constants.
    fn fill_11(&self, e: &mut Entry, e0: f64) {
        e.left(1.0, &self.at, "P")
            .right(1.0, "P", &self.a)
            .var(2.0 * self.delta, "P")
            .var(1.0, "S0")
            .var(-e0, "R0")
            .cst(&self.c1tc1);
    }

    /// Shared (1,1) block at the first window boundary.
    fn fill_22(&self, e: &mut Entry, e0: f64, e1: f64) {
        e.var(e0, "S1")
            .var(-e0, "S0")
            .var(-e0, "R0")
            .var(-e1, "R1");
    }

    /// Waiting-phase inequality: quadratic form ordered as (current state,
    /// state at the two window boundaries, delayed state, process noise,
    /// measurement noise, derivative surrogate).
    fn psi_expr(&self, eta: f64, hw: f64) -> BlockExpr {
        let (n, n_w, n_v) = (self.n, self.n_w, self.n_v);
        let e0 = (-2.0 * self.delta * eta).exp();
        let e1 = (-2.0 * self.delta * (eta + hw)).exp();
        let g2 = self.gamma * self.gamma;
        let mut x = BlockExpr::square(&[n, n, n, n, n_w, n_v, n]);
        x.sym_block(0, 0, |e| self.fill_11(e, e0));
        x.sym_block(0, 1, |e| {
            e.var(e0, "R0");
        });
        x.sym_block(0, 3, |e| {
            e.right(1.0, "P", &self.b2kc2).cst(&self.c1t_d1kc2);
        });
        x.sym_block(0, 4, |e| {
            e.right(1.0, "P", &self.b1);
        });
        x.sym_block(0, 5, |e| {
            e.right(1.0, "P", &self.b2kd2).cst(&self.c1t_d1kd2);
        });
        x.sym_block(0, 6, |e| Self::h_term(e, &self.at, eta, hw));
        x.sym_block(1, 1, |e| self.fill_22(e, e0, e1));
        x.sym_block(1, 2, |e| {
            e.var(e1, "G1");
        });
        x.sym_block(1, 3, |e| {
            e.var(e1, "R1").var(-e1, "G1");
        });
        x.sym_block(2, 2, |e| {
            e.var(-e1, "R1").var(-e1, "S1");
        });
        x.sym_block(2, 3, |e| {
            e.var(e1, "R1").var_t(-e1, "G1");
        });
        x.sym_block(3, 3, |e| {
            e.var(e1, "G1")
                .var_t(e1, "G1")
                .var(-2.0 * e1, "R1")
                .cst(&self.d1kc2_t_d1kc2);
        });
        x.sym_block(3, 5, |e| {
            e.cst(&self.d1kc2_t_d1kd2);
        });
        x.sym_block(3, 6, |e| Self::h_term(e, &self.b2kc2t, eta, hw));
        x.sym_block(4, 4, |e| {
            e.cst_scaled(-g2, &Mat::identity(n_w, n_w));
        });
        x.sym_block(4, 6, |e| Self::h_term(e, &self.b1t, eta, hw));
        x.sym_block(5, 5, |e| {
            e.cst(&self.d1kd2_t_d1kd2)
                .cst_scaled(-g2, &Mat::identity(n_v, n_v));
        });
        x.sym_block(5, 6, |e| Self::h_term(e, &self.b2kd2t, eta, hw));
        x.sym_block(6, 6, |e| Self::neg_h(e, eta, hw));
        x
    }

    /// Monitoring-phase inequality: same ordering with the trigger error
    /// inserted after the delayed state.
    fn phi_expr(&self, eta: f64, hw: f64) -> BlockExpr {
        let (n, l, n_w, n_v) = (self.n, self.l, self.n_w, self.n_v);
        let e0 = (-2.0 * self.delta * eta).exp();
        let e1 = (-2.0 * self.delta * (eta + hw)).exp();
        let g2 = self.gamma * self.gamma;
        let eps = self.eps;
        let mut x = BlockExpr::square(&[n, n, n, n, l, n_w, n_v, n]);
        x.sym_block(0, 0, |e| self.fill_11(e, e0));
        x.sym_block(0, 1, |e| {
            e.var(e0, "G0");
        });
        x.sym_block(0, 3, |e| {
            e.right(1.0, "P", &self.b2kc2)
                .var(e0, "R0")
                .var(-e0, "G0")
                .cst(&self.c1t_d1kc2);
        });
        x.sym_block(0, 4, |e| {
            e.right(1.0, "P", &self.b2k).cst(&self.c1t_d1k);
        });
        x.sym_block(0, 5, |e| {
            e.right(1.0, "P", &self.b1);
        });
        x.sym_block(0, 6, |e| {
            e.right(1.0, "P", &self.b2kd2).cst(&self.c1t_d1kd2);
        });
        x.sym_block(0, 7, |e| Self::h_term(e, &self.at, eta, hw));
        x.sym_block(1, 1, |e| self.fill_22(e, e0, e1));
        x.sym_block(1, 2, |e| {
            e.var(e1, "R1");
        });
        x.sym_block(1, 3, |e| {
            e.var(e0, "R0").var_t(-e0, "G0");
        });
        x.sym_block(2, 2, |e| {
            e.var(-e1, "R1").var(-e1, "S1");
        });
        x.sym_block(3, 3, |e| {
            e.var(e0, "G0")
                .var_t(e0, "G0")
                .var(-2.0 * e0, "R0")
                .cst(&self.d1kc2_t_d1kc2);
            if eps != 0.0 {
                e.wrap(eps, &self.c2t, "Om", &self.c2);
            }
        });
        x.sym_block(3, 4, |e| {
            e.cst(&self.d1kc2_t_d1k);
        });
        x.sym_block(3, 6, |e| {
            e.cst(&self.d1kc2_t_d1kd2);
            if eps != 0.0 {
                e.wrap(eps, &self.c2t, "Om", &self.d2);
            }
        });
        x.sym_block(3, 7, |e| Self::h_term(e, &self.b2kc2t, eta, hw));
        x.sym_block(4, 4, |e| {
            e.var(-1.0, "Om").cst(&self.d1k_t_d1k);
        });
        x.sym_block(4, 6, |e| {
            e.cst(&self.d1k_t_d1kd2);
        });
        x.sym_block(4, 7, |e| Self::h_term(e, &self.b2kt, eta, hw));
        x.sym_block(5, 5, |e| {
            e.cst_scaled(-g2, &Mat::identity(n_w, n_w));
        });
        x.sym_block(5, 7, |e| Self::h_term(e, &self.b1t, eta, hw));
        x.sym_block(6, 6, |e| {
            e.cst(&self.d1kd2_t_d1kd2)
                .cst_scaled(-g2, &Mat::identity(n_v, n_v));
            if eps != 0.0 {
                e.wrap(eps, &self.d2t, "Om", &self.d2);
            }
        });
        x.sym_block(6, 7, |e| Self::h_term(e, &self.b2kd2t, eta, hw));
        x.sym_block(7, 7, |e| Self::neg_h(e, eta, hw));
        x
    }

    /// Monitoring-phase inequality with the delayed state located in the
    /// second window. Needed when the delay sweeps past the partition
    /// point, so the certificate must hold for either location.
    fn phi_far_expr(&self, eta: f64, hw: f64) -> BlockExpr {
        let (n, l, n_w, n_v) = (self.n, self.l, self.n_w, self.n_v);
        let e0 = (-2.0 * self.delta * eta).exp();
        let e1 = (-2.0 * self.delta * (eta + hw)).exp();
        let g2 = self.gamma * self.gamma;
        let eps = self.eps;
        let mut x = BlockExpr::square(&[n, n, n, n, l, n_w, n_v, n]);
        x.sym_block(0, 0, |e| self.fill_11(e, e0));
        x.sym_block(0, 1, |e| {
            e.var(e0, "R0");
        });
        x.sym_block(0, 3, |e| {
            e.right(1.0, "P", &self.b2kc2).cst(&self.c1t_d1kc2);
        });
        x.sym_block(0, 4, |e| {
            e.right(1.0, "P", &self.b2k).cst(&self.c1t_d1k);
        });
        x.sym_block(0, 5, |e| {
            e.right(1.0, "P", &self.b1);
        });
        x.sym_block(0, 6, |e| {
            e.right(1.0, "P", &self.b2kd2).cst(&self.c1t_d1kd2);
        });
        x.sym_block(0, 7, |e| Self::h_term(e, &self.at, eta, hw));
        x.sym_block(1, 1, |e| self.fill_22(e, e0, e1));
        x.sym_block(1, 2, |e| {
            e.var(e1, "G1");
        });
        x.sym_block(1, 3, |e| {
            e.var(e1, "R1").var(-e1, "G1");
        });
        x.sym_block(2, 2, |e| {
            e.var(-e1, "R1").var(-e1, "S1");
        });
        x.sym_block(2, 3, |e| {
            e.var(e1, "R1").var_t(-e1, "G1");
        });
        x.sym_block(3, 3, |e| {
            e.var(e1, "G1")
                .var_t(e1, "G1")
                .var(-2.0 * e1, "R1")
                .cst(&self.d1kc2_t_d1kc2);
            if eps != 0.0 {
                e.wrap(eps, &self.c2t, "Om", &self.c2);
            }
        });
        x.sym_block(3, 4, |e| {
            e.cst(&self.d1kc2_t_d1k);
        });
        x.sym_block(3, 6, |e| {
            e.cst(&self.d1kc2_t_d1kd2);
            if eps != 0.0 {
                e.wrap(eps, &self.c2t, "Om", &self.d2);
            }
        });
        x.sym_block(3, 7, |e| Self::h_term(e, &self.b2kc2t, eta, hw));
        x.sym_block(4, 4, |e| {
            e.var(-1.0, "Om").cst(&self.d1k_t_d1k);
        });
        x.sym_block(4, 6, |e| {
            e.cst(&self.d1k_t_d1kd2);
        });
        x.sym_block(4, 7, |e| Self::h_term(e, &self.b2kt, eta, hw));
        x.sym_block(5, 5, |e| {
            e.cst_scaled(-g2, &Mat::identity(n_w, n_w));
        });
        x.sym_block(5, 7, |e| Self::h_term(e, &self.b1t, eta, hw));
        x.sym_block(6, 6, |e| {
            e.cst(&self.d1kd2_t_d1kd2)
                .cst_scaled(-g2, &Mat::identity(n_v, n_v));
            if eps != 0.0 {
                e.wrap(eps, &self.d2t, "Om", &self.d2);
            }
        });
        x.sym_block(6, 7, |e| Self::h_term(e, &self.b2kd2t, eta, hw));
        x.sym_block(7, 7, |e| Self::neg_h(e, eta, hw));
        x
    }

    fn park(&self, r: &str, g: &str) -> BlockExpr {
        let mut x = BlockExpr::square(&[self.n, self.n]);
        x.sym_block(0, 0, |e| {
            e.var(1.0, r);
        });
        x.sym_block(0, 1, |e| {
            e.var(1.0, g);
        });
        x.sym_block(1, 1, |e| {
            e.var(1.0, r);
        });
        x
    }

    fn common_constraints(&self, prob: &mut LmiProblem) {
        let mut p_pos = BlockExpr::square(&[self.n]);
        p_pos.block_mut(0, 0).var(1.0, "P");
        prob.add_constraint(LmiConstraint::new("P_pos", p_pos, Sense::PsdStrict));
        for name in ["S0", "S1", "R0", "R1"] {
            let mut e = BlockExpr::square(&[self.n]);
            e.block_mut(0, 0).var(1.0, name);
            prob.add_constraint(LmiConstraint::new(&format!("{name}_psd"), e, Sense::Psd));
        }
        let mut om = BlockExpr::square(&[self.l]);
        om.block_mut(0, 0).var(1.0, "Om");
        prob.add_constraint(LmiConstraint::new("Omega_psd", om, Sense::Psd));
    }
}

/// L2-gain and decay certificate for the switching trigger under network
/// delays bounded by `eta_m`.
pub fn build_thm2(
    plant: &PerturbedPlant,
    gain: &Gain,
    p: &Thm2Params,
) -> Result<LmiProblem, SynthesisError> {
    let cx = Ctx::new(plant, gain, p)?;
    let mut prob = LmiProblem::new();
    cx.declare_vars(&mut prob, true);
    prob.add_constraint(LmiConstraint::new(
        "Psi",
        cx.psi_expr(p.eta_m, p.h),
        Sense::Nsd,
    ));
    prob.add_constraint(LmiConstraint::new(
        "Phi",
        cx.phi_expr(p.eta_m, p.h),
        Sense::Nsd,
    ));
    prob.add_constraint(LmiConstraint::new("Park0", cx.park("R0", "G0"), Sense::Psd));
    prob.add_constraint(LmiConstraint::new("Park1", cx.park("R1", "G1"), Sense::Psd));
    cx.common_constraints(&mut prob);
    Ok(prob)
}

/// Certificate for the periodic trigger under delays: the loop then runs
/// permanently in the monitoring phase with effective delay sweeping the
/// whole interval [0, tau_m], tau_m = h + eta_m. The history window is
/// split at a free `partition` point inside (0, tau_m) and the inequality
/// is imposed once for each sub-window the delayed state can fall into.
pub fn build_delay_partitioned_periodic(
    plant: &PerturbedPlant,
    gain: &Gain,
    p: &Thm2Params,
    partition: f64,
) -> Result<LmiProblem, SynthesisError> {
    let tau_m = p.tau_m();
    if !(partition.is_finite() && 0.0 < partition && partition < tau_m) {
        return Err(SynthesisError::Param(format!(
            "partition must lie strictly inside (0, {tau_m}), got {partition}"
        )));
    }
    let cx = Ctx::new(plant, gain, p)?;
    let mut prob = LmiProblem::new();
    cx.declare_vars(&mut prob, true);
    let hw = tau_m - partition;
    prob.add_constraint(LmiConstraint::new(
        "PhiNear",
        cx.phi_expr(partition, hw),
        Sense::Nsd,
    ));
    prob.add_constraint(LmiConstraint::new(
        "PhiFar",
        cx.phi_far_expr(partition, hw),
        Sense::Nsd,
    ));
    prob.add_constraint(LmiConstraint::new("Park0", cx.park("R0", "G0"), Sense::Psd));
    prob.add_constraint(LmiConstraint::new("Park1", cx.park("R1", "G1"), Sense::Psd));
    cx.common_constraints(&mut prob);
    Ok(prob)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::lmi::{assemble, check_witness, solve_feasibility, witness_ok};
    use crate::plant::SimplePlant;

    /// Cart-pendulum with process/measurement channels and the L2 output.
    pub(crate) fn example3_hinf() -> (PerturbedPlant, Gain) {
        let (simple, _) = crate::synthesis::thm1::tests::example3();
        let b1 = Mat::from_column_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        let c1 = Mat::from_row_slice(1, 4, &[1.0, 1.0, 1.0, 1.0]);
        let d1 = Mat::from_element(1, 1, 0.1);
        let d2 = Mat::zeros(4, 1);
        let plant = PerturbedPlant::new(
            simple.a.clone(),
            b1,
            simple.b.clone(),
            c1,
            Mat::identity(4, 4),
            d1,
            d2,
        )
        .unwrap();
        let gain = Gain::new(Mat::from_row_slice(
            1,
            4,
            &[2.9129, 10.4357, 287.9029, 160.3271],
        ))
        .unwrap();
        (plant, gain)
    }

    pub(crate) fn example2_embedded() -> (PerturbedPlant, Gain) {
        let (plant, gain): (SimplePlant, Gain) = crate::synthesis::thm1::tests::example2();
        plant.promote(&gain).unwrap()
    }

    fn feasible(plant: &PerturbedPlant, gain: &Gain, p: &Thm2Params) -> bool {
        let prob = build_thm2(plant, gain, p).unwrap();
        solve_feasibility(&prob).unwrap().is_feasible()
    }

    #[test]
    fn pendulum_l2_design_feasible_at_published_point() {
        let (plant, gain) = example3_hinf();
        let p = Thm2Params::new(200.0, 0.117, 0.1, 0.13, 0.0).unwrap();
        assert!(feasible(&plant, &gain, &p));
    }

    #[test]
    fn pendulum_l2_design_infeasible_well_beyond() {
        let (plant, gain) = example3_hinf();
        let p = Thm2Params::new(200.0, 0.30, 0.1, 0.13, 0.0).unwrap();
        assert!(!feasible(&plant, &gain, &p));
    }

    #[test]
    fn gain_bound_monotone_in_gamma() {
        let (plant, gain) = example3_hinf();
        let tight = Thm2Params::new(200.0, 0.117, 0.1, 0.13, 0.0).unwrap();
        let prob = build_thm2(&plant, &gain, &tight).unwrap();
        let res = solve_feasibility(&prob).unwrap();
        assert!(res.is_feasible());
        let witness = res.witness.unwrap();
        // The same witness must satisfy the problem at any larger gamma.
        let loose = Thm2Params::new(1e6, 0.117, 0.1, 0.13, 0.0).unwrap();
        let prob_loose = build_thm2(&plant, &gain, &loose).unwrap();
        let reports = check_witness(&prob_loose, &witness, 1e-8).unwrap();
        assert!(witness_ok(&reports));
        assert!(feasible(&plant, &gain, &loose));
    }

    #[test]
    fn delayed_scalar_loop_feasible_at_published_points() {
        let (plant, gain) = example2_embedded();
        // gamma is inert: the embedded loop has no disturbance channels.
        for (eta_m, eps, h) in [(0.1, 0.56, 0.339), (0.6, 0.005, 0.12)] {
            let p = Thm2Params::new(1.0, h, eta_m, eps, 0.24).unwrap();
            assert!(feasible(&plant, &gain, &p), "eta_m={eta_m} eps={eps}");
        }
    }

    #[test]
    fn delayed_scalar_loop_infeasible_above_published_points() {
        let (plant, gain) = example2_embedded();
        let p = Thm2Params::new(1.0, 0.50, 0.1, 0.56, 0.24).unwrap();
        assert!(!feasible(&plant, &gain, &p));
    }

    #[test]
    fn problem_shape_matches_contract() {
        let (plant, gain) = example3_hinf();
        let p = Thm2Params::new(200.0, 0.1, 0.1, 0.1, 0.0).unwrap();
        let prob = build_thm2(&plant, &gain, &p).unwrap();
        let names: Vec<&str> = prob.constraints.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(
            names,
            ["Psi", "Phi", "Park0", "Park1", "P_pos", "S0_psd", "S1_psd", "R0_psd", "R1_psd", "Omega_psd"]
        );
        let (n, l, n_w, n_v) = (plant.n(), plant.l(), plant.n_w(), plant.n_v());
        let dims: Vec<usize> = prob.constraints.iter().map(|c| c.expr.nrows()).collect();
        assert_eq!(
            dims,
            [
                5 * n + n_w + n_v,
                5 * n + l + n_w + n_v,
                2 * n,
                2 * n,
                n,
                n,
                n,
                n,
                n,
                l
            ]
        );
        assert!(assemble(&prob).is_ok());
    }

    #[test]
    fn zero_width_channels_assemble() {
        let (plant, gain) = example2_embedded();
        assert_eq!((plant.n_w(), plant.n_z(), plant.n_v()), (0, 0, 0));
        let p = Thm2Params::new(1.0, 0.2, 0.1, 0.1, 0.24).unwrap();
        let prob = build_thm2(&plant, &gain, &p).unwrap();
        assert!(assemble(&prob).is_ok());
    }

    #[test]
    fn partition_must_be_interior() {
        let (plant, gain) = example2_embedded();
        let p = Thm2Params::new(1.0, 0.3, 0.1, 0.0, 0.24).unwrap();
        let tau_m = p.tau_m();
        assert!(build_delay_partitioned_periodic(&plant, &gain, &p, tau_m).is_err());
        assert!(build_delay_partitioned_periodic(&plant, &gain, &p, 0.0).is_err());
        assert!(build_delay_partitioned_periodic(&plant, &gain, &p, -0.1).is_err());
        // A tiny interior partition still produces a well-formed problem.
        let prob = build_delay_partitioned_periodic(&plant, &gain, &p, 1e-6).unwrap();
        assert!(assemble(&prob).is_ok());
    }

    #[test]
    fn partitioned_problem_covers_both_windows() {
        let (plant, gain) = example2_embedded();
        let p = Thm2Params::new(1.0, 0.3, 0.1, 0.0, 0.24).unwrap();
        let prob = build_delay_partitioned_periodic(&plant, &gain, &p, 0.2).unwrap();
        assert!(prob.var("G1").is_some());
        let names: Vec<&str> = prob.constraints.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "PhiNear", "PhiFar", "Park0", "Park1", "P_pos", "S0_psd", "S1_psd", "R0_psd",
                "R1_psd", "Omega_psd"
            ]
        );
        assert!(solve_feasibility(&prob).unwrap().is_feasible());
    }

    /// The partitioned certificate must not outrun the loop it certifies:
    /// the delay-free periodic loop goes spectrally unstable near h = 2.67,
    /// and zero delay is one admissible realization, so no partition choice
    /// may verify a longer period under bounded delay.
    #[test]
    fn partitioned_certificate_respects_stability_margin() {
        let (plant, gain) = example2_embedded();
        let p = Thm2Params::new(1.0, 2.7, 0.1, 0.0, 0.0).unwrap();
        for frac in [0.25, 0.5, 0.75] {
            let prob =
                build_delay_partitioned_periodic(&plant, &gain, &p, frac * p.tau_m()).unwrap();
            let res = solve_feasibility(&prob).unwrap();
            assert!(
                !res.is_feasible(),
                "partition fraction {frac} certified an unstable period"
            );
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Thm2Params::new(0.0, 0.1, 0.1, 0.1, 0.1).is_err());
        assert!(Thm2Params::new(1.0, 0.0, 0.1, 0.1, 0.1).is_err());
        assert!(Thm2Params::new(1.0, 0.1, -0.1, 0.1, 0.1).is_err());
        assert!(Thm2Params::new(1.0, 0.1, 0.1, -0.1, 0.1).is_err());
        assert!(Thm2Params::new(1.0, 0.1, 0.1, 0.1, -0.1).is_err());
        let p = Thm2Params::new(2.5, 0.3, 0.2, 0.1, 0.0).unwrap();
        assert_eq!(p.tau_m(), 0.5);
    }
}
