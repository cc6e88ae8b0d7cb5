//! The pipeline behind `reproduce`: design every table row, sweep thresholds
//! where asked, simulate batches over the declared initial conditions and
//! disturbance suite, aggregate metrics, and compare against the reference
//! values carried by the preset.

use crate::out::{line_plot_svg, write_atomic};
use crate::presets::{
    Check, DesignRow, ExperimentSpec, IcSet, SweepBlock, TheoremSel, TriggerKind,
};
use anyhow::{anyhow, bail, Context, Result};
use evtc_core::analysis::{
    count_metrics, empirical_l2, fit_decay, metrics_csv_header, metrics_csv_row, Certificate,
    TheoremTag,
};
use evtc_core::lmi::{solve_feasibility, FeasStatus, LmiProblem};
use evtc_core::plant::{DelayModel, Gain, PerturbedPlant, PlantDoc, SimplePlant, TriggerPolicy};
use evtc_core::sim::{circle_initial_conditions, run_batch, SimConfig, Trajectory};
use evtc_core::synthesis::{
    build_delay_partitioned_periodic, build_remark1, build_thm1, build_thm2, max_h, SearchOptions,
    SynthesisError, Thm1Params, Thm2Params,
};
use evtc_core::{Mat, Vec64};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

const PARTITION_FRACTIONS: [f64; 3] = [0.25, 0.5, 0.75];

pub struct Ctx<'a> {
    pub spec: &'a ExperimentSpec,
    pub simple: Option<(SimplePlant, Gain)>,
    pub pert: (PerturbedPlant, Gain),
    pub seed: u64,
    pub tol: f64,
    pub out: PathBuf,
    pub plots: bool,
}

impl<'a> Ctx<'a> {
    pub fn new(
        spec: &'a ExperimentSpec,
        doc: &PlantDoc,
        seed: u64,
        tol: f64,
        out: PathBuf,
        plots: bool,
    ) -> Result<Self> {
        let gain = doc.gain()?.clone();
        let simple = match &doc.plant {
            evtc_core::plant::LoadedPlant::Simple(p) => Some((p.clone(), gain.clone())),
            evtc_core::plant::LoadedPlant::Perturbed(_) => None,
        };
        let pert = doc.plant.as_perturbed(&gain)?;
        Ok(Self {
            spec,
            simple,
            pert,
            seed,
            tol,
            out,
            plots,
        })
    }

}

pub fn status_str(s: FeasStatus) -> &'static str {
    match s {
        FeasStatus::Feasible => "feasible",
        FeasStatus::Infeasible => "infeasible",
        FeasStatus::Undecided => "undecided",
    }
}

fn status_rank(s: FeasStatus) -> u8 {
    match s {
        FeasStatus::Feasible => 2,
        FeasStatus::Undecided => 1,
        FeasStatus::Infeasible => 0,
    }
}

/// Assemble the feasibility problem for one design family at one point.
/// `frac` places the partition point of the delay-partitioned certificate
/// as a fraction of the total delay window.
pub fn build_problem(
    ctx: &Ctx,
    theorem: TheoremSel,
    eps: f64,
    h: f64,
    delta: f64,
    eta_m: f64,
    gamma: Option<f64>,
    frac: f64,
) -> Result<LmiProblem, SynthesisError> {
    let need_gamma = || -> Result<f64, SynthesisError> {
        match gamma {
            Some(g) => Ok(g),
            // Inert for loops without disturbance channels.
            None if ctx.pert.0.n_w() == 0 && ctx.pert.0.n_v() == 0 => Ok(1.0),
            None => Err(SynthesisError::Param(
                "gamma is required for plants with disturbance channels".into(),
            )),
        }
    };
    match theorem {
        TheoremSel::Switching => {
            let (p, g) = ctx
                .simple
                .as_ref()
                .ok_or_else(|| SynthesisError::Param("undisturbed plant form required".into()))?;
            build_thm1(p, g, &Thm1Params::new(h, eps, delta)?)
        }
        TheoremSel::PeriodicTrigger => {
            let (p, g) = ctx
                .simple
                .as_ref()
                .ok_or_else(|| SynthesisError::Param("undisturbed plant form required".into()))?;
            build_remark1(p, g, &Thm1Params::new(h, eps, delta)?)
        }
        TheoremSel::Delayed => {
            let (p, g) = &ctx.pert;
            build_thm2(p, g, &Thm2Params::new(need_gamma()?, h, eta_m, eps, delta)?)
        }
        TheoremSel::DelayPartitioned => {
            let (p, g) = &ctx.pert;
            let params = Thm2Params::new(need_gamma()?, h, eta_m, eps, delta)?;
            let partition = frac * params.tau_m();
            build_delay_partitioned_periodic(p, g, &params, partition)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Designed {
    pub label: String,
    pub theorem: TheoremSel,
    pub trigger: TriggerKind,
    pub eps: f64,
    pub delta: f64,
    pub eta_m: f64,
    pub gamma: Option<f64>,
    pub h: Option<f64>,
    pub status: FeasStatus,
    pub tstar: Option<f64>,
    pub solves: usize,
    pub fixed_point: bool,
    pub witness: Option<BTreeMap<String, Mat>>,
}

fn fractions(theorem: TheoremSel) -> &'static [f64] {
    match theorem {
        TheoremSel::DelayPartitioned => &PARTITION_FRACTIONS,
        _ => &[0.5],
    }
}

pub fn design_row(ctx: &Ctx, row: &DesignRow) -> Result<Designed> {
    let delta = row.delta.unwrap_or(ctx.spec.delta);
    let eta_m = row.eta_m.or(ctx.spec.eta_m).unwrap_or(0.0);
    let gamma = row.gamma.or(ctx.spec.gamma);
    let mut out = Designed {
        label: row.label.clone(),
        theorem: row.theorem,
        trigger: row.trigger,
        eps: row.eps,
        delta,
        eta_m,
        gamma,
        h: None,
        status: FeasStatus::Infeasible,
        tstar: None,
        solves: 0,
        fixed_point: row.h.is_some(),
        witness: None,
    };
    if let Some(h) = row.h {
        for &frac in fractions(row.theorem) {
            let prob = build_problem(ctx, row.theorem, row.eps, h, delta, eta_m, gamma, frac)?;
            let res = solve_feasibility(&prob)?;
            out.solves += 1;
            if out.solves == 1 || status_rank(res.status) > status_rank(out.status) {
                out.status = res.status;
                out.tstar = res.diagnostics.max_slack;
                out.witness = res.witness;
            }
            if out.status == FeasStatus::Feasible {
                break;
            }
        }
        out.h = Some(h);
        return Ok(out);
    }
    let opts = SearchOptions {
        tol: ctx.tol,
        h_hi: 10.0,
    };
    let mut undecided_seen = false;
    for &frac in fractions(row.theorem) {
        let r = max_h(
            |h| build_problem(ctx, row.theorem, row.eps, h, delta, eta_m, gamma, frac),
            &opts,
        )?;
        out.solves += r.probes.len();
        undecided_seen |= r
            .probes
            .iter()
            .any(|(_, s)| *s == FeasStatus::Undecided);
        if let Some(h) = r.h_max {
            if out.h.map_or(true, |best| h > best) {
                out.h = Some(h);
                out.witness = r.witness;
                out.status = FeasStatus::Feasible;
            }
        }
    }
    if out.h.is_none() {
        out.status = if undecided_seen {
            FeasStatus::Undecided
        } else {
            FeasStatus::Infeasible
        };
    }
    Ok(out)
}

/// Clip tiny negative eigenvalues so a solver witness is accepted as a
/// trigger weight.
fn psd_project(m: &Mat) -> Mat {
    let se = ((m + m.transpose()) * 0.5).symmetric_eigen();
    let clipped = Vec64::from_iterator(se.eigenvalues.len(), se.eigenvalues.iter().map(|v| v.max(0.0)));
    let r = &se.eigenvectors * Mat::from_diagonal(&clipped) * se.eigenvectors.transpose();
    (&r + r.transpose()) * 0.5
}

pub fn trigger_for(
    kind: TriggerKind,
    h: Option<f64>,
    eps: f64,
    witness: Option<&BTreeMap<String, Mat>>,
    l: usize,
) -> Result<TriggerPolicy> {
    let omega = || -> Mat {
        match witness.and_then(|w| w.get("Om")) {
            Some(om) => psd_project(om),
            None => Mat::identity(l, l),
        }
    };
    let need_h = || h.ok_or_else(|| anyhow!("no certified waiting time to simulate with"));
    Ok(match kind {
        TriggerKind::Periodic => TriggerPolicy::periodic(need_h()?)?,
        TriggerKind::PeriodicEt => TriggerPolicy::periodic_et(need_h()?, eps, omega())?,
        TriggerKind::SwitchingEt => TriggerPolicy::switching_et(need_h()?, eps, omega())?,
        TriggerKind::ContinuousEt => TriggerPolicy::continuous_et(eps, omega())?,
    })
}

/// Largest grid step that divides the horizon evenly and respects both the
/// declared step and the waiting-time bound dt <= h/20.
pub fn aligned_dt(t_f: f64, declared: f64, h: Option<f64>) -> f64 {
    let cap = match h {
        Some(h) if h > 0.0 => declared.min(h / 20.0),
        _ => declared,
    };
    t_f / (t_f / cap).ceil()
}

#[derive(Debug, Clone)]
pub struct RowSim {
    pub sm_mean: f64,
    pub avg_period_mean: Option<f64>,
    pub min_gap: f64,
    pub j_max: Option<f64>,
    pub j_count: usize,
    pub zeno_any: bool,
    pub n_runs: usize,
    pub seed_lo: u64,
    pub seed_hi: u64,
    pub metrics_rows: Vec<String>,
    pub traj0: Option<Trajectory>,
}

pub fn initial_conditions(spec: &ExperimentSpec, n: usize) -> Result<Vec<Vec64>> {
    match &spec.sim.ics {
        IcSet::Circle { count, radius } => Ok(circle_initial_conditions(n, *count, *radius)?),
        IcSet::Points { points } => points
            .iter()
            .map(|p| {
                if p.len() != n {
                    bail!("initial condition has {} entries, plant has {n} states", p.len());
                }
                Ok(Vec64::from_column_slice(p))
            })
            .collect(),
    }
}

pub fn simulate_row(
    ctx: &Ctx,
    label: &str,
    trigger: &TriggerPolicy,
    eta_m: f64,
    gamma: Option<f64>,
    row_seed: u64,
    collect_metrics: bool,
) -> Result<RowSim> {
    let (plant, gain) = &ctx.pert;
    let ics = initial_conditions(ctx.spec, plant.n())?;
    let mut members = ctx.spec.sim.disturbances.clone();
    if members.is_empty() {
        members.push(evtc_core::plant::DisturbanceSpec::zero());
    }
    let delay = match &ctx.spec.sim.delay {
        Some(d) => d.clone(),
        None if eta_m > 0.0 => DelayModel::Random { eta_max: eta_m },
        None => DelayModel::Zero,
    };
    let dt = aligned_dt(ctx.spec.sim.t_f, ctx.spec.sim.dt, Some(trigger.waiting_time()));

    let mut sim = RowSim {
        sm_mean: 0.0,
        avg_period_mean: None,
        min_gap: f64::INFINITY,
        j_max: None,
        j_count: 0,
        zeno_any: false,
        n_runs: 0,
        seed_lo: u64::MAX,
        seed_hi: 0,
        metrics_rows: Vec::new(),
        traj0: None,
    };
    let mut sm_sum = 0.0;
    let mut avg_sum = 0.0;
    let mut avg_n = 0usize;

    for (mi, member) in members.iter().enumerate() {
        let mut cfg = SimConfig::new(trigger.clone(), ics[0].clone(), ctx.spec.sim.t_f);
        cfg.dt = dt;
        cfg.delay = delay.clone();
        cfg.disturbance = member.clone();
        cfg.seed = row_seed + 100 * mi as u64;
        let batch = run_batch(plant, gain, &cfg, &ics)?;
        for item in batch {
            let traj = item
                .result
                .with_context(|| format!("{label}: run {} failed", item.index))?;
            let mut report = count_metrics(&traj)?;
            if traj.disturbance.bound == 0.0 {
                report.delta_hat = fit_decay(&traj, 0.5).ok();
            }
            let zero_start = item.x0.iter().all(|v| *v == 0.0);
            if let Some(g) = gamma {
                if zero_start && traj.disturbance.bound > 0.0 {
                    report.j = empirical_l2(&traj, g).ok();
                }
            }
            sim.n_runs += 1;
            sm_sum += report.sm as f64;
            if let Some(a) = report.avg_period {
                avg_sum += a;
                avg_n += 1;
            }
            sim.min_gap = sim.min_gap.min(report.min_gap);
            if let Some(j) = report.j {
                sim.j_count += 1;
                sim.j_max = Some(sim.j_max.map_or(j, |m: f64| m.max(j)));
            }
            sim.zeno_any |= report.zeno;
            sim.seed_lo = sim.seed_lo.min(item.seed);
            sim.seed_hi = sim.seed_hi.max(item.seed);
            if collect_metrics {
                let run_id = format!("{label}/m{mi}ic{:02}", item.index);
                sim.metrics_rows
                    .push(metrics_csv_row(&run_id, trigger, eta_m, &report));
            }
            if mi == 0 && item.index == 0 {
                sim.traj0 = Some(traj);
            }
        }
    }
    sim.sm_mean = sm_sum / sim.n_runs as f64;
    if avg_n > 0 {
        sim.avg_period_mean = Some(avg_sum / avg_n as f64);
    }
    Ok(sim)
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub name: String,
    pub detail: String,
    /// None marks a report-only comparison that does not gate the exit code.
    pub pass: Option<bool>,
}

fn push_verdict(out: &mut Vec<Verdict>, info: bool, name: &str, detail: String, pass: bool) {
    out.push(Verdict {
        name: name.into(),
        detail,
        pass: if info { None } else { Some(pass) },
    });
}

pub fn evaluate_row(d: &Designed, sim: Option<&RowSim>, row: &DesignRow) -> Vec<Verdict> {
    let e = &row.expect;
    let info = e.info;
    let mut out = Vec::new();
    if let Some(ht) = e.h {
        let tol = e.h_tol.unwrap_or(0.01);
        let (pass, got) = match d.h {
            Some(h) => ((h - ht).abs() <= tol, format!("{h:.4}")),
            None => (false, "none".into()),
        };
        push_verdict(&mut out, info, "h", format!("got {got}, want {ht} +-{tol}"), pass);
    }
    if let Some(hm) = e.h_min {
        let (pass, got) = match d.h {
            Some(h) => (h >= hm, format!("{h:.4}")),
            None => (false, "none".into()),
        };
        push_verdict(&mut out, info, "h_min", format!("got {got}, want >= {hm}"), pass);
    }
    if let Some(st) = e.sm {
        let (pass, got) = match sim {
            Some(s) => {
                let tol = e
                    .sm_tol
                    .unwrap_or_else(|| e.sm_rel_tol.map_or(1.5, |r| r * st));
                ((s.sm_mean - st).abs() <= tol, format!("{:.2}", s.sm_mean))
            }
            None => (false, "none".into()),
        };
        let tol = e.sm_tol.unwrap_or_else(|| e.sm_rel_tol.map_or(1.5, |r| r * st));
        push_verdict(&mut out, info, "sm", format!("got {got}, want {st} +-{tol:.2}"), pass);
    }
    if let Some(am) = e.avg_period_min {
        let got = sim.and_then(|s| s.avg_period_mean);
        let pass = got.is_some_and(|a| a >= am);
        let got = got.map_or("none".into(), |a| format!("{a:.4}"));
        push_verdict(
            &mut out,
            info,
            "avg_period",
            format!("got {got}, want >= {am}"),
            pass,
        );
    }
    if e.j_negative {
        let (pass, detail) = match sim {
            Some(s) if s.j_count == s.n_runs && s.n_runs > 0 => (
                s.j_max.is_some_and(|j| j < 0.0),
                format!("max J {:.4} over {} runs", s.j_max.unwrap_or(f64::NAN), s.n_runs),
            ),
            Some(s) => (
                false,
                format!("J evaluated on {}/{} runs", s.j_count, s.n_runs),
            ),
            None => (false, "no runs".into()),
        };
        push_verdict(&mut out, info, "j_negative", detail, pass);
    }
    if e.not_infeasible {
        let mut pass = d.status != FeasStatus::Infeasible;
        let mut detail = format!("status {}", status_str(d.status));
        if let Some(cap) = e.tstar_abs_max {
            if d.status != FeasStatus::Feasible {
                let within = d.tstar.is_some_and(|t| t.abs() <= cap);
                pass = pass && within;
                let _ = write!(
                    detail,
                    ", margin {} vs +-{cap}",
                    d.tstar.map_or("none".into(), |t| format!("{t:.2e}"))
                );
            }
        }
        push_verdict(&mut out, info, "not_infeasible", detail, pass);
    }
    out
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub eps: f64,
    pub h: Option<f64>,
    pub status: FeasStatus,
    pub sm_mean: Option<f64>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub label: String,
    pub points: Vec<SweepPoint>,
    pub best: Option<(f64, f64, f64)>,
    pub verdicts: Vec<Verdict>,
    pub solves: usize,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn run_sweep(ctx: &Ctx, sweep: &SweepBlock, sweep_seed: u64) -> Result<SweepOutcome> {
    let delta = sweep.delta.unwrap_or(ctx.spec.delta);
    let eta_m = sweep.eta_m.or(ctx.spec.eta_m).unwrap_or(0.0);
    let gamma = sweep.gamma.or(ctx.spec.gamma);
    let opts = SearchOptions {
        tol: ctx.tol,
        h_hi: 10.0,
    };
    let mut evaluated: BTreeMap<u64, SweepPoint> = BTreeMap::new();
    let mut solves = 0usize;
    let mut grid: Vec<f64> = sweep.eps.clone();

    for _pass in 0..=sweep.refine {
        grid.retain(|e| !evaluated.contains_key(&e.to_bits()) && *e >= 0.0);
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let designed: Vec<(f64, usize, Option<f64>, FeasStatus, Option<BTreeMap<String, Mat>>)> =
            grid.par_iter()
                .map(|&eps| {
                    let r = max_h(
                        |h| build_problem(ctx, sweep.theorem, eps, h, delta, eta_m, gamma, 0.5),
                        &opts,
                    )?;
                    let undecided = r
                        .probes
                        .iter()
                        .any(|(_, s)| *s == FeasStatus::Undecided);
                    let status = match r.h_max {
                        Some(_) => FeasStatus::Feasible,
                        None if undecided => FeasStatus::Undecided,
                        None => FeasStatus::Infeasible,
                    };
                    Ok((eps, r.probes.len(), r.h_max, status, r.witness))
                })
                .collect::<Result<_>>()?;
        for (eps, n, h, status, witness) in designed {
            solves += n;
            let sm_mean = match h {
                Some(h) => {
                    let trig = trigger_for(sweep.trigger, Some(h), eps, witness.as_ref(), ctx.pert.0.l())?;
                    let sim = simulate_row(ctx, &sweep.label, &trig, eta_m, gamma, sweep_seed, false)?;
                    Some(sim.sm_mean)
                }
                None => None,
            };
            evaluated.insert(eps.to_bits(), SweepPoint { eps, h, status, sm_mean });
        }
        // Re-grid around the current minimum for the next pass.
        let keys: Vec<f64> = evaluated.values().map(|p| p.eps).collect();
        if let Some((bi, _)) = evaluated
            .values()
            .enumerate()
            .filter_map(|(i, p)| p.sm_mean.map(|s| (i, s)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
        {
            let lo = if bi > 0 { keys[bi - 1] } else { keys[bi] };
            let hi = if bi + 1 < keys.len() { keys[bi + 1] } else { keys[bi] };
            grid = if hi > lo { linspace(lo, hi, 9) } else { Vec::new() };
        } else {
            grid = Vec::new();
        }
    }

    let points: Vec<SweepPoint> = evaluated.into_values().collect();
    let best = points
        .iter()
        .filter_map(|p| p.sm_mean.map(|s| (p.eps, p.h.unwrap(), s)))
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.total_cmp(&b.0)));
    let mut verdicts = Vec::new();
    if let Some(want) = sweep.expect_best_eps {
        let tol = sweep.best_eps_tol.unwrap_or(1e-9);
        let (pass, got) = match best {
            Some((e, _, _)) => ((e - want).abs() <= tol, format!("{e}")),
            None => (false, "none".into()),
        };
        verdicts.push(Verdict {
            name: "best_eps".into(),
            detail: format!("got {got}, want {want} +-{tol}"),
            pass: Some(pass),
        });
    }
    Ok(SweepOutcome {
        label: sweep.label.clone(),
        points,
        best,
        verdicts,
        solves,
    })
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or(String::new(), |x| format!("{x:.prec$}"))
}

fn evaluate_checks(
    checks: &[Check],
    rows: &[(Designed, Option<RowSim>)],
) -> Result<Vec<Verdict>> {
    let sm_of = |label: &str| -> Result<f64> {
        rows.iter()
            .find(|(d, _)| d.label == label)
            .and_then(|(_, s)| s.as_ref())
            .map(|s| s.sm_mean)
            .ok_or_else(|| anyhow!("check references unknown or unsimulated row {label}"))
    };
    let mut out = Vec::new();
    for check in checks {
        match check {
            Check::SmOrder { rows: order } => {
                let sms: Vec<f64> = order.iter().map(|l| sm_of(l)).collect::<Result<_>>()?;
                let pass = sms.windows(2).all(|w| w[0] < w[1]);
                let detail = order
                    .iter()
                    .zip(&sms)
                    .map(|(l, s)| format!("{l}={s:.2}"))
                    .collect::<Vec<_>>()
                    .join(" < ");
                out.push(Verdict {
                    name: "sm_order".into(),
                    detail,
                    pass: Some(pass),
                });
            }
            Check::RatioToOne {
                pairs,
                monotone_slack,
                final_max_dev,
            } => {
                let mut ratios = Vec::new();
                for (num, den) in pairs {
                    ratios.push(sm_of(num)? / sm_of(den)?);
                }
                let monotone = ratios
                    .windows(2)
                    .all(|w| w[1] >= w[0] - monotone_slack);
                let last_ok = ratios
                    .last()
                    .is_some_and(|r| (r - 1.0).abs() <= *final_max_dev);
                let detail = format!(
                    "ratios [{}]",
                    ratios
                        .iter()
                        .map(|r| format!("{r:.3}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                );
                out.push(Verdict {
                    name: "sm_ratio_to_one".into(),
                    detail,
                    pass: Some(monotone && last_ok),
                });
            }
        }
    }
    Ok(out)
}

fn certificate_for(d: &Designed) -> Option<Certificate> {
    let witness = d.witness.clone()?;
    let h = d.h?;
    let tag = match d.theorem {
        TheoremSel::Switching | TheoremSel::PeriodicTrigger => TheoremTag::T1,
        TheoremSel::Delayed => TheoremTag::T2,
        TheoremSel::DelayPartitioned => return None,
    };
    let gamma = match tag {
        TheoremTag::T1 => None,
        TheoremTag::T2 => Some(d.gamma.unwrap_or(1.0)),
    };
    Certificate::new(tag, h, d.eps, d.delta, d.eta_m, gamma, witness).ok()
}

/// Run a full preset. Returns the process exit code: 0 when every gating
/// comparison passes, 2 otherwise.
pub fn run_preset(ctx: &Ctx) -> Result<i32> {
    let spec = ctx.spec;
    log::info!("reproducing {}", spec.name);

    let mut designed: Vec<(Designed, Option<RowSim>)> = Vec::new();
    for (ri, row) in spec.rows.iter().enumerate() {
        let d = design_row(ctx, row).with_context(|| format!("designing row {}", row.label))?;
        log::info!(
            "row {}: h = {}, status = {}",
            d.label,
            fmt_opt(d.h, 4),
            status_str(d.status)
        );
        let sim = match trigger_for(row.trigger, d.h, d.eps, d.witness.as_ref(), ctx.pert.0.l()) {
            Ok(trig) => Some(
                simulate_row(
                    ctx,
                    &d.label,
                    &trig,
                    d.eta_m,
                    d.gamma,
                    ctx.seed + 10_000 * ri as u64,
                    true,
                )
                .with_context(|| format!("simulating row {}", row.label))?,
            ),
            Err(_) => None,
        };
        designed.push((d, sim));
    }

    let mut sweeps = Vec::new();
    for (si, sweep) in spec.sweeps.iter().enumerate() {
        let so = run_sweep(ctx, sweep, ctx.seed + 1_000_000 + 10_000 * si as u64)
            .with_context(|| format!("sweeping {}", sweep.label))?;
        match so.best {
            Some((e, h, s)) => log::info!(
                "sweep {}: best eps = {e}, h = {h:.4}, mean SM = {s:.2}",
                so.label
            ),
            None => log::info!("sweep {}: no feasible point", so.label),
        }
        sweeps.push(so);
    }

    let check_verdicts = evaluate_checks(&spec.checks, &designed)?;

    // Artifacts.
    let mut metrics = String::from(metrics_csv_header());
    metrics.push('\n');
    let mut designs = String::from(
        "label,theorem,trigger,eps,h,eta_m,delta,gamma,status,tstar,solves,sm_mean,avg_period,min_gap,j_max,zeno,verdict,flags\n",
    );
    let mut any_fail = false;
    let mut summary = String::new();
    let _ = writeln!(summary, "# {} reproduction\n", spec.name);
    let _ = writeln!(
        summary,
        "Seed {}, bisection tolerance {}, horizon {} s, base step {}.\n",
        ctx.seed, ctx.tol, spec.sim.t_f, spec.sim.dt
    );
    let _ = writeln!(
        summary,
        "| row | family | trigger | eps | eta_M | h | SM | status | checks | flags |"
    );
    let _ = writeln!(
        summary,
        "|---|---|---|---|---|---|---|---|---|---|"
    );

    let mut provenance = Vec::new();
    for ((d, sim), row) in designed.iter().zip(&spec.rows) {
        let verdicts = evaluate_row(d, sim.as_ref(), row);
        for m in sim.iter().flat_map(|s| &s.metrics_rows) {
            metrics.push_str(m);
            metrics.push('\n');
        }
        let gating: Vec<&Verdict> = verdicts.iter().filter(|v| v.pass.is_some()).collect();
        let row_fail = gating.iter().any(|v| v.pass == Some(false));
        any_fail |= row_fail;
        let verdict_cell = if gating.is_empty() {
            "".to_string()
        } else if row_fail {
            "fail".to_string()
        } else {
            "pass".to_string()
        };
        let _ = writeln!(
            designs,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            d.label,
            d.theorem.as_str(),
            d.trigger.as_str(),
            d.eps,
            fmt_opt(d.h, 6),
            d.eta_m,
            d.delta,
            d.gamma.map_or(String::new(), |g| g.to_string()),
            status_str(d.status),
            d.tstar.map_or(String::new(), |t| format!("{t:.3e}")),
            d.solves,
            fmt_opt(sim.as_ref().map(|s| s.sm_mean), 4),
            fmt_opt(sim.as_ref().and_then(|s| s.avg_period_mean), 6),
            fmt_opt(sim.as_ref().map(|s| s.min_gap).filter(|g| g.is_finite()), 6),
            fmt_opt(sim.as_ref().and_then(|s| s.j_max), 6),
            sim.as_ref().map_or(String::new(), |s| s.zeno_any.to_string()),
            verdict_cell,
            row.flags.join(";"),
        );
        let checks_cell = if verdicts.is_empty() {
            "-".to_string()
        } else {
            verdicts
                .iter()
                .map(|v| {
                    let mark = match v.pass {
                        Some(true) => "pass",
                        Some(false) => "FAIL",
                        None => "info",
                    };
                    format!("{} {} ({})", v.name, mark, v.detail)
                })
                .collect::<Vec<_>>()
                .join("; ")
        };
        let _ = writeln!(
            summary,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            d.label,
            d.theorem.as_str(),
            d.trigger.as_str(),
            d.eps,
            d.eta_m,
            fmt_opt(d.h, 4),
            fmt_opt(sim.as_ref().map(|s| s.sm_mean), 2),
            status_str(d.status),
            checks_cell,
            if row.flags.is_empty() { "-".to_string() } else { row.flags.join(", ") },
        );
        let prov = match (d.fixed_point, sim) {
            (true, Some(s)) => format!(
                "{}: point solve ({} solves); batch {} runs, seeds {}..{}",
                d.label, d.solves, s.n_runs, s.seed_lo, s.seed_hi
            ),
            (false, Some(s)) => format!(
                "{}: bisection ({} solves, tol {}); batch {} runs, seeds {}..{}",
                d.label, d.solves, ctx.tol, s.n_runs, s.seed_lo, s.seed_hi
            ),
            (_, None) => format!("{}: {} solves, nothing to simulate", d.label, d.solves),
        };
        provenance.push(prov);

        if let Some(traj) = sim.as_ref().and_then(|s| s.traj0.as_ref()) {
            let base = ctx.out.join("runs");
            write_atomic(&base.join(format!("{}.csv", d.label)), &traj.to_csv())?;
            write_atomic(
                &base.join(format!("{}.events.csv", d.label)),
                &traj.events_csv(),
            )?;
            if ctx.plots {
                let series: Vec<(String, Vec<f64>)> = (0..traj.x[0].len())
                    .map(|i| {
                        (
                            format!("x{}", i + 1),
                            traj.x.iter().map(|v| v[i]).collect(),
                        )
                    })
                    .collect();
                let svg = line_plot_svg(&d.label, &traj.t, &series, &traj.events.s);
                write_atomic(&ctx.out.join("plots").join(format!("{}.svg", d.label)), &svg)?;
            }
        }
        if let Some(cert) = certificate_for(d) {
            write_atomic(
                &ctx.out.join("certs").join(format!("{}.json", d.label)),
                &cert.to_json(),
            )?;
        }
    }

    if !sweeps.is_empty() {
        let _ = writeln!(summary, "\n## Threshold sweeps\n");
        let _ = writeln!(summary, "| sweep | points | best eps | best h | best SM | checks |");
        let _ = writeln!(summary, "|---|---|---|---|---|---|");
    }
    for so in &sweeps {
        let mut csv = String::from("eps,h_max,status,sm_mean\n");
        for p in &so.points {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                p.eps,
                fmt_opt(p.h, 6),
                status_str(p.status),
                fmt_opt(p.sm_mean, 4)
            );
        }
        write_atomic(&ctx.out.join(format!("sweep_{}.csv", so.label)), &csv)?;
        any_fail |= so.verdicts.iter().any(|v| v.pass == Some(false));
        let checks_cell = if so.verdicts.is_empty() {
            "-".to_string()
        } else {
            so.verdicts
                .iter()
                .map(|v| {
                    format!(
                        "{} {} ({})",
                        v.name,
                        if v.pass == Some(false) { "FAIL" } else { "pass" },
                        v.detail
                    )
                })
                .collect::<Vec<_>>()
                .join("; ")
        };
        let _ = writeln!(
            summary,
            "| {} | {} | {} | {} | {} | {} |",
            so.label,
            so.points.len(),
            so.best.map_or("-".into(), |b| b.0.to_string()),
            so.best.map_or("-".into(), |b| format!("{:.4}", b.1)),
            so.best.map_or("-".into(), |b| format!("{:.2}", b.2)),
            checks_cell,
        );
        provenance.push(format!(
            "{}: sweep over {} thresholds ({} solves)",
            so.label,
            so.points.len(),
            so.solves
        ));
    }

    if !check_verdicts.is_empty() {
        let _ = writeln!(summary, "\n## Cross-row checks\n");
        for v in &check_verdicts {
            any_fail |= v.pass == Some(false);
            let _ = writeln!(
                summary,
                "- {}: {} ({})",
                v.name,
                if v.pass == Some(false) { "FAIL" } else { "pass" },
                v.detail
            );
        }
    }

    let _ = writeln!(summary, "\n## Provenance\n");
    for p in &provenance {
        let _ = writeln!(summary, "- {p}");
    }

    write_atomic(&ctx.out.join("designs.csv"), &designs)?;
    write_atomic(&ctx.out.join("metrics.csv"), &metrics)?;
    write_atomic(&ctx.out.join("summary.md"), &summary)?;
    println!("{summary}");
    Ok(if any_fail { 2 } else { 0 })
}
