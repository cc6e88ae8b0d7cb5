//! Parameter search on top of the feasibility certificates: maximize the
//! waiting time at a fixed threshold, sweep the threshold, and robustify a
//! design over a matrix polytope.

use super::SynthesisError;
use crate::lmi::{solve_feasibility, FeasStatus, LmiProblem};
use crate::Mat;
use rayon::prelude::*;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    /// Final bracket width on the waiting time.
    pub tol: f64,
    /// Initial upper probe; doubled when it turns out feasible.
    pub h_hi: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { tol: 1e-3, h_hi: 10.0 }
    }
}

#[derive(Debug, Clone)]
pub struct MaxHResult {
    /// Largest waiting time found feasible; None when every probe down to
    /// the tolerance failed.
    pub h_max: Option<f64>,
    /// Certificate variables at `h_max`.
    pub witness: Option<BTreeMap<String, Mat>>,
    /// Every (h, status) probe in evaluation order.
    pub probes: Vec<(f64, FeasStatus)>,
}

fn probe<F>(
    build: &F,
    h: f64,
    probes: &mut Vec<(f64, FeasStatus)>,
) -> Result<(FeasStatus, Option<BTreeMap<String, Mat>>), SynthesisError>
where
    F: Fn(f64) -> Result<LmiProblem, SynthesisError>,
{
    let res = solve_feasibility(&build(h)?)?;
    probes.push((h, res.status));
    Ok((res.status, res.witness))
}

/// Bisect for the largest waiting time the certificate accepts.
///
/// `build` maps a candidate waiting time to the feasibility problem.
/// Solver indecision is treated as infeasibility, so the reported value is
/// conservative. The returned bracket is checked: `h_max + tol` must not
/// solve, and if it unexpectedly does the search resumes from there a
/// bounded number of times.
pub fn max_h<F>(build: F, opts: &SearchOptions) -> Result<MaxHResult, SynthesisError>
where
    F: Fn(f64) -> Result<LmiProblem, SynthesisError>,
{
    if !(opts.tol.is_finite() && opts.tol > 0.0) {
        return Err(SynthesisError::Param(format!(
            "search tolerance must be positive, got {}",
            opts.tol
        )));
    }
    if !(opts.h_hi.is_finite() && opts.h_hi > opts.tol) {
        return Err(SynthesisError::Param(format!(
            "upper probe must exceed the tolerance, got {}",
            opts.h_hi
        )));
    }
    let mut probes = Vec::new();
    let mut hi = opts.h_hi;
    let mut lo: Option<(f64, Option<BTreeMap<String, Mat>>)> = None;

    let (st, w) = probe(&build, hi, &mut probes)?;
    if st == FeasStatus::Feasible {
        let mut cur_h = hi;
        let mut cur_w = w;
        let mut bracketed = false;
        for _ in 0..16 {
            let cand = cur_h * 2.0;
            let (st, w) = probe(&build, cand, &mut probes)?;
            if st == FeasStatus::Feasible {
                cur_h = cand;
                cur_w = w;
            } else {
                hi = cand;
                bracketed = true;
                break;
            }
        }
        if !bracketed {
            return Err(SynthesisError::Search(format!(
                "still feasible at h = {cur_h}; no finite maximum within search range"
            )));
        }
        lo = Some((cur_h, cur_w));
    } else {
        let mut cand = hi / 2.0;
        while cand > opts.tol {
            let (st, w) = probe(&build, cand, &mut probes)?;
            if st == FeasStatus::Feasible {
                lo = Some((cand, w));
                break;
            }
            hi = cand;
            cand /= 2.0;
        }
    }
    let (mut lo_h, mut lo_w) = match lo {
        Some(v) => v,
        None => {
            return Ok(MaxHResult {
                h_max: None,
                witness: None,
                probes,
            })
        }
    };
    while hi - lo_h > opts.tol {
        let mid = 0.5 * (lo_h + hi);
        let (st, w) = probe(&build, mid, &mut probes)?;
        if st == FeasStatus::Feasible {
            lo_h = mid;
            lo_w = w;
        } else {
            hi = mid;
        }
    }
    for _ in 0..5 {
        let (st, w) = probe(&build, lo_h + opts.tol, &mut probes)?;
        if st != FeasStatus::Feasible {
            break;
        }
        lo_h += opts.tol;
        lo_w = w;
    }
    Ok(MaxHResult {
        h_max: Some(lo_h),
        witness: lo_w,
        probes,
    })
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub eps: f64,
    pub h_max: Option<f64>,
    pub witness: Option<BTreeMap<String, Mat>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// Maximize the waiting time at each threshold of the grid.
///
/// Rows come back sorted by threshold and are computed independently in
/// parallel; per-row failures are recorded in the row rather than aborting
/// the sweep.
pub fn sweep_eps<F>(build: F, eps_grid: &[f64], opts: &SearchOptions) -> SweepResult
where
    F: Fn(f64, f64) -> Result<LmiProblem, SynthesisError> + Sync,
{
    let mut grid = eps_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let rows = grid
        .par_iter()
        .map(|&eps| match max_h(|h| build(eps, h), opts) {
            Ok(r) => SweepRow {
                eps,
                h_max: r.h_max,
                witness: r.witness,
                error: None,
            },
            Err(e) => SweepRow {
                eps,
                h_max: None,
                witness: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    SweepResult { rows }
}

/// Join per-vertex problems into one with shared certificate variables.
///
/// `build` must produce the same variable declarations for every vertex;
/// the constraints of vertex `i >= 1` are renamed with a `/v{i}` suffix.
/// Feasibility of the joint problem certifies the whole convex hull since
/// the constraint data is affine in the plant matrices.
pub fn build_polytopic<F>(n_vertices: usize, build: F) -> Result<LmiProblem, SynthesisError>
where
    F: Fn(usize) -> Result<LmiProblem, SynthesisError>,
{
    if n_vertices == 0 {
        return Err(SynthesisError::Param(
            "polytopic family needs at least one vertex".into(),
        ));
    }
    let mut combined = build(0)?;
    for i in 1..n_vertices {
        let vert = build(i)?;
        if vert.vars != combined.vars {
            return Err(SynthesisError::Param(format!(
                "vertex {i} declares a different variable set"
            )));
        }
        for mut c in vert.constraints {
            c.name = format!("{}/v{i}", c.name);
            combined.add_constraint(c);
        }
    }
    Ok(combined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margin::sampled_data_margin;
    use crate::plant::{Gain, SimplePlant};
    use crate::synthesis::thm1::tests::{example1, example2, example3};
    use crate::synthesis::thm1::{build_remark1, build_thm1, Thm1Params};
    use crate::synthesis::thm2::tests::example2_embedded;
    use crate::synthesis::thm2::{build_thm2, Thm2Params};
    use rand::{RngExt, SeedableRng};

    fn opts() -> SearchOptions {
        SearchOptions::default()
    }

    fn max_h_thm1(plant: &SimplePlant, gain: &Gain, eps: f64, delta: f64) -> MaxHResult {
        max_h(
            |h| build_thm1(plant, gain, &Thm1Params::new(h, eps, delta)?),
            &opts(),
        )
        .unwrap()
    }

    #[test]
    fn oscillator_max_wait_matches_published() {
        let (plant, gain) = example1();
        let slow = max_h_thm1(&plant, &gain, 0.0, 0.24).h_max.unwrap();
        assert!((slow - 0.356).abs() < 5e-3, "got {slow}");
        let fast = max_h_thm1(&plant, &gain, 0.0, 0.001).h_max.unwrap();
        assert!((fast - 0.424).abs() < 5e-3, "got {fast}");
    }

    #[test]
    fn pendulum_max_wait_matches_published() {
        // The published 0.242 does not state its decay rate; 0.155 is the
        // rate that reproduces it, and the undamped certificate reaches
        // 0.319 before going infeasible.
        let (plant, gain) = example3();
        let got = max_h_thm1(&plant, &gain, 0.35, 0.155).h_max.unwrap();
        assert!((got - 0.242).abs() < 5e-3, "got {got}");
        let undamped = max_h_thm1(&plant, &gain, 0.35, 0.0).h_max.unwrap();
        assert!((undamped - 0.319).abs() < 5e-3, "got {undamped}");
    }

    #[test]
    fn scalar_loop_sweep_matches_published() {
        let (plant, gain) = example2();
        let sweep = sweep_eps(
            |eps, h| build_thm1(&plant, &gain, &Thm1Params::new(h, eps, 0.24)?),
            &[0.555, 0.0, 4.6e-3],
            &opts(),
        );
        let eps_order: Vec<f64> = sweep.rows.iter().map(|r| r.eps).collect();
        assert_eq!(eps_order, [0.0, 4.6e-3, 0.555]);
        let h: Vec<f64> = sweep.rows.iter().map(|r| r.h_max.unwrap()).collect();
        assert!((h[0] - 1.173).abs() < 0.01, "got {}", h[0]);
        assert!(h[1] > 1.105 && h[1] < h[0] + 1e-9, "got {}", h[1]);
        assert!((h[2] - 0.899).abs() < 0.01, "got {}", h[2]);
        for r in &sweep.rows {
            assert!(r.error.is_none());
            assert!(r.witness.is_some());
        }
    }

    #[test]
    fn delayed_loop_max_wait_matches_published() {
        let (plant, gain) = example2_embedded();
        let res = max_h(
            |h| build_thm2(&plant, &gain, &Thm2Params::new(1.0, h, 0.2, 0.345, 0.24)?),
            &opts(),
        )
        .unwrap();
        let got = res.h_max.unwrap();
        assert!((got - 0.379).abs() < 0.01, "got {got}");
    }

    #[test]
    fn certified_wait_below_spectral_margin() {
        // Near-zero decay rate: the certified waiting time must stay below
        // the exact stability margin of the ideal sampled loop.
        for (plant, gain) in [example1(), example2()] {
            let lmi = max_h_thm1(&plant, &gain, 0.0, 1e-4).h_max.unwrap();
            let exact = sampled_data_margin(&plant, &gain, 1e-4, 20.0).unwrap();
            assert!(
                lmi <= exact.h_star + 1e-3,
                "certified {lmi} exceeds margin {}",
                exact.h_star
            );
        }
    }

    #[test]
    fn periodic_check_feasibility_implies_switching_feasibility() {
        let (plant, gain) = example2();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut points = vec![(4.6e-3, 1.115), (0.555, 0.344)];
        let mut tried = 0;
        while points.len() < 17 && tried < 120 {
            tried += 1;
            let eps = rng.random_range(0.0..0.7);
            let h = rng.random_range(0.05..1.2);
            let p = Thm1Params::new(h, eps, 0.24).unwrap();
            let prob = build_remark1(&plant, &gain, &p).unwrap();
            if solve_feasibility(&prob).unwrap().is_feasible() {
                points.push((eps, h));
            }
        }
        assert!(points.len() >= 12, "too few feasible samples: {}", points.len());
        for (eps, h) in points {
            let p = Thm1Params::new(h, eps, 0.24).unwrap();
            let prob = build_thm1(&plant, &gain, &p).unwrap();
            assert!(
                solve_feasibility(&prob).unwrap().is_feasible(),
                "implication failed at eps={eps} h={h}"
            );
        }
    }

    #[test]
    fn single_vertex_polytope_is_the_plain_problem() {
        let (plant, gain) = example1();
        let p = Thm1Params::new(0.30, 0.0, 0.24).unwrap();
        let poly = build_polytopic(1, |_| build_thm1(&plant, &gain, &p)).unwrap();
        let plain = build_thm1(&plant, &gain, &p).unwrap();
        let poly_names: Vec<&str> = poly.constraints.iter().map(|c| c.name.as_str()).collect();
        let plain_names: Vec<&str> = plain.constraints.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(poly_names, plain_names);
        assert!(solve_feasibility(&poly).unwrap().is_feasible());
    }

    #[test]
    fn perturbed_vertices_share_a_certificate() {
        let (nominal, gain) = example1();
        let vertex = |scale: f64| {
            let mut a = nominal.a.clone();
            a[(1, 1)] *= scale;
            SimplePlant::new(a, nominal.b.clone(), nominal.c.clone()).unwrap()
        };
        let plants = [vertex(0.99), vertex(1.01)];
        let p = Thm1Params::new(0.30, 0.0, 0.24).unwrap();
        let poly = build_polytopic(2, |i| build_thm1(&plants[i], &gain, &p)).unwrap();
        assert_eq!(poly.constraints.len(), 14);
        assert!(poly
            .constraints
            .iter()
            .any(|c| c.name == "Psi0/v1"));
        assert!(solve_feasibility(&poly).unwrap().is_feasible());
    }

    #[test]
    fn polytope_rejects_mismatched_variable_sets() {
        assert!(build_polytopic(0, |_| unreachable!("not called")).is_err());
        let (small, gain_small) = example1();
        let (large, gain_large) = example3();
        let p = Thm1Params::new(0.1, 0.0, 0.1).unwrap();
        let err = build_polytopic(2, |i| {
            if i == 0 {
                build_thm1(&small, &gain_small, &p)
            } else {
                build_thm1(&large, &gain_large, &p)
            }
        });
        assert!(err.is_err());
    }

    #[test]
    fn unstabilized_loop_reports_no_feasible_wait() {
        let (plant, _) = example1();
        let gain = Gain::new(Mat::zeros(1, 2)).unwrap();
        let res = max_h(
            |h| build_thm1(&plant, &gain, &Thm1Params::new(h, 0.0, 0.24)?),
            &SearchOptions { tol: 1e-2, h_hi: 1.0 },
        )
        .unwrap();
        assert!(res.h_max.is_none());
        assert!(res.probes.iter().all(|(_, s)| *s != FeasStatus::Feasible));
    }

    #[test]
    fn empty_sweep_is_empty() {
        let (plant, gain) = example2();
        let sweep = sweep_eps(
            |eps, h| build_thm1(&plant, &gain, &Thm1Params::new(h, eps, 0.24)?),
            &[],
            &opts(),
        );
        assert!(sweep.rows.is_empty());
    }

    #[test]
    fn search_rejects_bad_options() {
        let (plant, gain) = example1();
        let build = |h: f64| build_thm1(&plant, &gain, &Thm1Params::new(h, 0.0, 0.24)?);
        assert!(max_h(build, &SearchOptions { tol: 0.0, h_hi: 1.0 }).is_err());
        assert!(max_h(build, &SearchOptions { tol: 1e-3, h_hi: 1e-4 }).is_err());
    }
}
