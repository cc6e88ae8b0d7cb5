//! Scratch diagnostics; not part of the library.

use evtc_core::lmi::{check_witness, solve_feasibility, sym_eig_range};
use evtc_core::plant::{Gain, PerturbedPlant, SimplePlant};
use evtc_core::synthesis::{
    build_remark1, build_thm1, build_thm2, max_h, SearchOptions, Thm1Params, Thm2Params,
};
use evtc_core::Mat;

fn ex1() -> (SimplePlant, Gain) {
    let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, -2.0, 3.0]);
    let b = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
    let c = Mat::identity(2, 2);
    let k = Mat::from_row_slice(1, 2, &[-1.0, 4.0]);
    (SimplePlant::new(a, b, c).unwrap(), Gain::new(k).unwrap())
}

fn ex2() -> (SimplePlant, Gain) {
    let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -3.0]);
    let b = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
    let c = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
    let k = Mat::from_row_slice(1, 1, &[3.0]);
    (SimplePlant::new(a, b, c).unwrap(), Gain::new(k).unwrap())
}

fn ex3() -> (SimplePlant, Gain) {
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
    let b = Mat::from_row_slice(4, 1, &[0.0, 0.1, 0.0, -1.0 / 30.0]);
    let c = Mat::identity(4, 4);
    let k = Mat::from_row_slice(1, 4, &[-2.0, -12.0, -378.0, -210.0]);
    (SimplePlant::new(a, b, c).unwrap(), Gain::new(k).unwrap())
}

fn ex3_hinf() -> (PerturbedPlant, Gain) {
    let (s, _) = ex3();
    let b1 = Mat::from_column_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
    let c1 = Mat::from_row_slice(1, 4, &[1.0, 1.0, 1.0, 1.0]);
    let d1 = Mat::from_element(1, 1, 0.1);
    let d2 = Mat::zeros(4, 1);
    let plant =
        PerturbedPlant::new(s.a.clone(), b1, s.b.clone(), c1, Mat::identity(4, 4), d1, d2)
            .unwrap();
    let gain = Gain::new(Mat::from_row_slice(
        1,
        4,
        &[2.9129, 10.4357, 287.9029, 160.3271],
    ))
    .unwrap();
    (plant, gain)
}

fn main() {
    let opts = SearchOptions::default();

    // 1. The disputed interior point, plus a manual witness cross-check:
    // solve at eps=0, then reuse that witness with Omega = c*I for eps=0.05.
    let (p1, g1) = ex1();
    let prob0 = build_thm1(&p1, &g1, &Thm1Params::new(0.25, 0.0, 0.24).unwrap()).unwrap();
    let res0 = solve_feasibility(&prob0).unwrap();
    println!(
        "ex1 (0.25,0.00,0.24): status={:?} solver={} max_slack={:?}",
        res0.status, res0.diagnostics.solver_status, res0.diagnostics.max_slack
    );
    let prob = build_thm1(&p1, &g1, &Thm1Params::new(0.25, 0.05, 0.24).unwrap()).unwrap();
    let res = solve_feasibility(&prob).unwrap();
    println!(
        "ex1 (0.25,0.05,0.24): status={:?} solver={} iters={} max_slack={:?}",
        res.status,
        res.diagnostics.solver_status,
        res.diagnostics.iterations,
        res.diagnostics.max_slack
    );
    // Map the strict-feasibility region: where does max_slack collapse?
    for (h, eps, delta) in [
        (0.05, 1e-4, 0.01),
        (0.05, 0.05, 0.01),
        (0.25, 0.05, 0.01),
        (0.25, 0.05, 0.1),
        (0.25, 0.01, 0.24),
        (0.25, 0.05, 0.24),
        (0.1, 0.05, 0.24),
        (0.1, 0.3, 0.01),
    ] {
        let prob = build_thm1(&p1, &g1, &Thm1Params::new(h, eps, delta).unwrap()).unwrap();
        let res = solve_feasibility(&prob).unwrap();
        println!(
            "   ex1 (h={h}, eps={eps}, delta={delta}): {:?} t*={:?}",
            res.status, res.diagnostics.max_slack
        );
    }
    let (p2d, g2d) = ex2();
    for (h, eps, delta) in [
        (0.899, 0.555, 0.24),
        (0.3, 0.555, 0.24),
        (0.3, 0.555, 0.01),
        (0.3, 0.1, 0.24),
        (1.0, 0.0046, 0.24),
    ] {
        let prob = build_thm1(&p2d, &g2d, &Thm1Params::new(h, eps, delta).unwrap()).unwrap();
        let res = solve_feasibility(&prob).unwrap();
        println!(
            "   ex2 (h={h}, eps={eps}, delta={delta}): {:?} t*={:?}",
            res.status, res.diagnostics.max_slack
        );
    }

    // 2. Is ex2 T1 at (0.9114, 0.555) genuinely feasible?
    let (p2, g2) = ex2();
    for h in [0.899, 0.905, 0.9114, 0.915] {
        let prob = build_thm1(&p2, &g2, &Thm1Params::new(h, 0.555, 0.24).unwrap()).unwrap();
        let res = solve_feasibility(&prob).unwrap();
        print!("ex2 T1 h={h}: status={:?}", res.status);
        if let Some(w) = &res.witness {
            let reports = check_witness(&prob, w, 1e-8).unwrap();
            let worst = reports
                .iter()
                .map(|r| r.slack / r.scale)
                .fold(f64::INFINITY, f64::min);
            let (pmin, _) = sym_eig_range(w.get("P").unwrap());
            print!(" worst_rel_slack={worst:+.3e} P_mineig={pmin:+.3e}");
        }
        println!();
    }

    // 3. Remark 1 max_h at the two published thresholds.
    for (eps, published) in [(4.6e-3, 1.115), (0.555, 0.344)] {
        let r = max_h(
            |h| build_remark1(&p2, &g2, &Thm1Params::new(h, eps, 0.24)?),
            &opts,
        )
        .unwrap();
        println!(
            "ex2 R1 eps={eps}: h_max={:?} (published {published})",
            r.h_max
        );
    }

    // 4. Pendulum T1 max_h at eps=0.35 for several decay rates.
    let (p3, g3) = ex3();
    for delta in [0.0, 0.1, 0.2, 0.24, 0.3] {
        let r = max_h(
            |h| build_thm1(&p3, &g3, &Thm1Params::new(h, 0.35, delta)?),
            &opts,
        )
        .unwrap();
        println!("ex3 T1 eps=0.35 delta={delta}: h_max={:?}", r.h_max);
    }

    // 5. Pendulum T2: status and slack at a few waiting times.
    let (ph, gh) = ex3_hinf();
    for h in [0.01, 0.05, 0.1, 0.117] {
        let prob = build_thm2(&ph, &gh, &Thm2Params::new(200.0, h, 0.1, 0.13, 0.0).unwrap())
            .unwrap();
        let res = solve_feasibility(&prob).unwrap();
        println!(
            "ex3 T2 gamma=200 h={h}: {:?} solver={} iters={} t*={:?}",
            res.status,
            res.diagnostics.solver_status,
            res.diagnostics.iterations,
            res.diagnostics.max_slack
        );
        if let Some(w) = &res.witness {
            let reports = check_witness(&prob, w, 1e-8).unwrap();
            let worst = reports
                .iter()
                .min_by(|a, b| (a.slack / a.scale).total_cmp(&(b.slack / b.scale)))
                .unwrap();
            println!(
                "      worst cone {}: rel_slack={:+.3e}",
                worst.name,
                worst.slack / worst.scale
            );
        }
    }

    // 5a. Pendulum T2: certified maximum wait at the published threshold,
    // and the tighter-gain operating point.
    let r = max_h(
        |h| build_thm2(&ph, &gh, &Thm2Params::new(200.0, h, 0.1, 0.13, 0.0)?),
        &opts,
    )
    .unwrap();
    println!("ex3 T2 gamma=200 eps=0.13: h_max={:?}", r.h_max);
    for (gamma, eps, h) in [
        (100.0, 0.044, 0.065),
        (100.0, 0.0, 0.091),
        (100.0, 0.044, 0.05),
        (100.0, 0.044, 0.03),
        (100.0, 0.044, 0.01),
    ] {
        let prob = build_thm2(&ph, &gh, &Thm2Params::new(gamma, h, 0.1, eps, 0.0).unwrap()).unwrap();
        let res = solve_feasibility(&prob).unwrap();
        println!(
            "ex3 T2 gamma={gamma} eps={eps} h={h}: {:?} t*={:?}",
            res.status, res.diagnostics.max_slack
        );
    }
    for (gamma, eps) in [(100.0, 0.044), (100.0, 0.0)] {
        let r = max_h(
            |h| build_thm2(&ph, &gh, &Thm2Params::new(gamma, h, 0.1, eps, 0.0)?),
            &opts,
        )
        .unwrap();
        println!("ex3 T2 gamma={gamma} eps={eps}: h_max={:?}", r.h_max);
    }

    // 5b. Pendulum T1: slack profile near the certified maximum, delta scan.
    for h in [0.242, 0.28, 0.319, 0.325] {
        let prob = build_thm1(&p3, &g3, &Thm1Params::new(h, 0.35, 0.0).unwrap()).unwrap();
        let res = solve_feasibility(&prob).unwrap();
        println!(
            "ex3 T1 delta=0 h={h}: {:?} t*={:?}",
            res.status, res.diagnostics.max_slack
        );
    }
    for delta in [0.145, 0.15, 0.152, 0.155, 0.158, 0.16] {
        let r = max_h(
            |h| build_thm1(&p3, &g3, &Thm1Params::new(h, 0.35, delta)?),
            &opts,
        )
        .unwrap();
        println!("ex3 T1 eps=0.35 delta={delta}: h_max={:?}", r.h_max);
    }

    // 6. All five delayed-loop columns.
    let (pe, ge) = ex2();
    let (pp, gg) = pe.promote(&ge).unwrap();
    for (eta, eps, published) in [
        (0.1, 0.56, 0.339),
        (0.2, 0.345, 0.379),
        (0.4, 0.075, 0.278),
        (0.6, 0.005, 0.12),
        (0.7, 0.0, 0.025),
    ] {
        let r = max_h(
            |h| build_thm2(&pp, &gg, &Thm2Params::new(1.0, h, eta, eps, 0.24)?),
            &opts,
        )
        .unwrap();
        println!(
            "ex2 T2 eta={eta} eps={eps}: h_max={:?} (published {published})",
            r.h_max
        );
    }
}
