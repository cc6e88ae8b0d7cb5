//! Command-line front end: design certificates (`synth`), run closed-loop
//! simulations (`simulate`), summarize logged runs (`analyze`), and rebuild
//! the bundled example tables end to end (`reproduce`).

pub mod out;
pub mod presets;
pub mod reproduce;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use evtc_core::analysis::{metrics_csv_header, Certificate, TheoremTag};
use evtc_core::lmi::{solve_feasibility, FeasStatus};
use evtc_core::plant::{DelayModel, DisturbanceSpec, PlantDoc, TriggerPolicy};
use evtc_core::sim::{run, EventLog, SimConfig, Trajectory};
use evtc_core::synthesis::{max_h, sweep_eps, SearchOptions};
use evtc_core::{Mat, Vec64};
use out::write_atomic;
use presets::{load_plant_ref, load_preset, TheoremSel, TriggerKind};
use reproduce::{aligned_dt, build_problem, status_str, Ctx};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "evtc",
    version,
    about = "Event-triggered sampled-data controller design and validation"
)]
pub struct Cli {
    /// Base seed for every random draw (delays, noise realizations).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Bisection tolerance on the waiting time.
    #[arg(long, global = true, default_value_t = 1e-3)]
    pub tol: f64,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Design a certificate: check a point, maximize h, or sweep thresholds.
    Synth(SynthArgs),
    /// Simulate the networked closed loop and write trajectory CSVs.
    Simulate(SimulateArgs),
    /// Summarize a logged run into one metrics CSV row.
    Analyze(AnalyzeArgs),
    /// Rebuild a bundled example table end to end.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Certificate family: 1 (switching trigger), r1 (periodic trigger),
    /// 2 (delayed perturbed loop), delpar (delay-partitioned periodic).
    #[arg(long, value_enum)]
    pub theorem: TheoremSel,
    /// Plant document: a bundled name (example1, ...) or a JSON file.
    #[arg(long)]
    pub plant: String,
    /// Trigger threshold.
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Waiting time for a fixed-point feasibility check.
    #[arg(long)]
    pub h: Option<f64>,
    /// Guaranteed decay rate.
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    /// Disturbance attenuation level (delayed families).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Maximum network delay (delayed families).
    #[arg(long = "etaM", default_value_t = 0.0)]
    pub eta_m: f64,
    /// Partition location as a fraction of the delay window (delpar).
    #[arg(long, default_value_t = 0.5)]
    pub partition: f64,
    /// Maximize the waiting time at the given threshold.
    #[arg(long = "max-h", conflicts_with = "sweep")]
    pub max_h: bool,
    /// JSON file with a threshold grid: [e1, e2, ...] or {"eps": [...]}.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Plant document: a bundled name or a JSON file.
    #[arg(long)]
    pub plant: String,
    #[arg(long, value_enum)]
    pub trigger: TriggerKind,
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Waiting time (all triggers except continuous-et).
    #[arg(long)]
    pub h: Option<f64>,
    /// Initial state, comma separated: "10,0".
    #[arg(long)]
    pub x0: String,
    /// Simulation horizon.
    #[arg(long = "Tf")]
    pub t_f: f64,
    /// Grid step; rounded down so the horizon divides evenly.
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Delay model as JSON, e.g. {"kind":"random","eta_max":0.1}.
    #[arg(long)]
    pub delay: Option<String>,
    /// Disturbance pair as JSON, e.g. {"w":{"kind":"zero"},"v":{"kind":"zero"}}.
    #[arg(long)]
    pub disturbance: Option<String>,
    /// Certificate JSON; supplies eps, h and the trigger weight.
    #[arg(long)]
    pub cert: Option<PathBuf>,
    /// Trigger weight as a JSON matrix; identity when absent.
    #[arg(long)]
    pub omega: Option<String>,
    /// Basename of the trajectory artifacts under the output directory.
    #[arg(long, default_value = "run")]
    pub label: String,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trajectory CSV written by `simulate`.
    #[arg(long)]
    pub traj: PathBuf,
    /// Events CSV; defaults to the trajectory path with .events.csv.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Certificate JSON; labels the metrics row with its design point.
    #[arg(long)]
    pub cert: Option<PathBuf>,
    /// Trigger name for the metrics row when no certificate is given.
    #[arg(long, value_enum, default_value_t = TriggerKind::SwitchingEt)]
    pub trigger: TriggerKind,
    #[arg(long, default_value = "run")]
    pub run_id: String,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Preset name (example1, example2, example2-delay, example3,
    /// example3-hinf) or a path to an experiment JSON.
    pub preset: String,
    /// Also write simple SVG line plots next to the run CSVs.
    #[arg(long)]
    pub plots: bool,
}

pub fn run_cli(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.jobs {
        // A global pool can only be installed once; later calls fail, which
        // is fine in-process (tests) where the first configuration wins.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.cmd {
        Cmd::Synth(a) => cmd_synth(&cli, a),
        Cmd::Simulate(a) => cmd_simulate(&cli, a),
        Cmd::Analyze(a) => cmd_analyze(&cli, a),
        Cmd::Reproduce(a) => cmd_reproduce(&cli, a),
    }
}

/// An experiment wrapper for one-off designs so `synth` and `reproduce`
/// share the builder dispatch.
fn synth_ctx<'a>(
    spec: &'a presets::ExperimentSpec,
    doc: &PlantDoc,
    cli: &Cli,
) -> Result<Ctx<'a>> {
    Ctx::new(spec, doc, cli.seed, cli.tol, cli.out.clone(), false)
}

fn point_spec(name: &str, plant: serde_json::Value, delta: f64) -> presets::ExperimentSpec {
    presets::ExperimentSpec {
        name: name.into(),
        plant: presets::PlantRef::Inline(plant),
        delta,
        gamma: None,
        eta_m: None,
        rows: Vec::new(),
        sweeps: Vec::new(),
        checks: Vec::new(),
        sim: presets::SimBlock {
            t_f: 1.0,
            dt: 1e-3,
            ics: presets::IcSet::Points {
                points: vec![vec![0.0]],
            },
            delay: None,
            disturbances: Vec::new(),
        },
    }
}

fn load_doc(plant: &str) -> Result<(PlantDoc, serde_json::Value)> {
    let doc = load_plant_ref(plant, None)?;
    // Keep an inline copy so the throwaway spec stays self-contained.
    let raw = match presets::builtin_plant(plant) {
        Some(text) => serde_json::from_str(text)?,
        None => serde_json::from_str(&std::fs::read_to_string(plant)?)?,
    };
    Ok((doc, raw))
}

fn write_cert_if_possible(
    cli: &Cli,
    theorem: TheoremSel,
    h: f64,
    eps: f64,
    delta: f64,
    eta_m: f64,
    gamma: Option<f64>,
    witness: Option<BTreeMap<String, Mat>>,
) -> Result<Option<PathBuf>> {
    let Some(vars) = witness else { return Ok(None) };
    let tag = match theorem {
        TheoremSel::Switching | TheoremSel::PeriodicTrigger => TheoremTag::T1,
        TheoremSel::Delayed => TheoremTag::T2,
        TheoremSel::DelayPartitioned => return Ok(None),
    };
    let gamma = match tag {
        TheoremTag::T1 => None,
        TheoremTag::T2 => Some(gamma.unwrap_or(1.0)),
    };
    let cert = Certificate::new(tag, h, eps, delta, eta_m, gamma, vars)
        .map_err(|e| anyhow!("packaging certificate: {e}"))?;
    let path = cli.out.join("cert.json");
    write_atomic(&path, &cert.to_json())?;
    Ok(Some(path))
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<i32> {
    let (doc, raw) = load_doc(&a.plant)?;
    let spec = point_spec("synth", raw, a.delta);
    let ctx = synth_ctx(&spec, &doc, cli)?;
    let opts = SearchOptions {
        tol: cli.tol,
        h_hi: 10.0,
    };
    let gamma = a.gamma;
    let frac = a.partition;
    let mut csv = String::from("eps,h_max,status\n");

    if let Some(grid_path) = &a.sweep {
        let text = std::fs::read_to_string(grid_path)
            .with_context(|| format!("reading {}", grid_path.display()))?;
        let grid: Vec<f64> = match serde_json::from_str::<serde_json::Value>(&text)? {
            serde_json::Value::Array(_) => serde_json::from_str(&text)?,
            serde_json::Value::Object(m) => serde_json::from_value(
                m.get("eps")
                    .cloned()
                    .ok_or_else(|| anyhow!("sweep file needs an eps array"))?,
            )?,
            _ => bail!("sweep file must be a JSON array or {{\"eps\": [...]}}"),
        };
        if grid.is_empty() {
            bail!("sweep grid is empty");
        }
        let res = sweep_eps(
            |eps, h| build_problem(&ctx, a.theorem, eps, h, a.delta, a.eta_m, gamma, frac),
            &grid,
            &opts,
        );
        let mut any = false;
        for row in &res.rows {
            let status = match (&row.h_max, &row.error) {
                (Some(_), _) => "feasible",
                (None, Some(_)) => "error",
                (None, None) => "infeasible",
            };
            any |= row.h_max.is_some();
            println!(
                "eps={} h_max={} status={status}",
                row.eps,
                row.h_max.map_or("none".into(), |h| format!("{h:.6}"))
            );
            csv.push_str(&format!(
                "{},{},{status}\n",
                row.eps,
                row.h_max.map_or(String::new(), |h| format!("{h:.6}"))
            ));
        }
        write_atomic(&cli.out.join("synth.csv"), &csv)?;
        return Ok(if any { 0 } else { 2 });
    }

    if a.max_h {
        let r = max_h(
            |h| build_problem(&ctx, a.theorem, a.eps, h, a.delta, a.eta_m, gamma, frac),
            &opts,
        )?;
        match r.h_max {
            Some(h) => {
                println!("h_max={h:.6}");
                csv.push_str(&format!("{},{h:.6},feasible\n", a.eps));
                write_atomic(&cli.out.join("synth.csv"), &csv)?;
                if let Some(p) = write_cert_if_possible(
                    cli, a.theorem, h, a.eps, a.delta, a.eta_m, gamma, r.witness,
                )? {
                    println!("certificate written to {}", p.display());
                }
                Ok(0)
            }
            None => {
                println!("h_max=none status=infeasible");
                csv.push_str(&format!("{},,infeasible\n", a.eps));
                write_atomic(&cli.out.join("synth.csv"), &csv)?;
                Ok(2)
            }
        }
    } else {
        let h = a
            .h
            .ok_or_else(|| anyhow!("--h is required unless --max-h or --sweep is given"))?;
        let prob = build_problem(&ctx, a.theorem, a.eps, h, a.delta, a.eta_m, gamma, frac)?;
        let res = solve_feasibility(&prob)?;
        let margin = res
            .diagnostics
            .max_slack
            .map_or(String::new(), |t| format!(" margin={t:.3e}"));
        println!(
            "eps={} h={h} status={}{margin}",
            a.eps,
            status_str(res.status)
        );
        csv.push_str(&format!(
            "{},{h},{}\n",
            a.eps,
            status_str(res.status)
        ));
        write_atomic(&cli.out.join("synth.csv"), &csv)?;
        if res.status == FeasStatus::Feasible {
            if let Some(p) = write_cert_if_possible(
                cli, a.theorem, h, a.eps, a.delta, a.eta_m, gamma, res.witness,
            )? {
                println!("certificate written to {}", p.display());
            }
            Ok(0)
        } else {
            Ok(2)
        }
    }
}

fn parse_x0(text: &str) -> Result<Vec64> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("x0 entry {s}: {e}")))
        .collect::<Result<_>>()?;
    if vals.is_empty() {
        bail!("x0 is empty");
    }
    Ok(Vec64::from_column_slice(&vals))
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Result<i32> {
    let doc = load_plant_ref(&a.plant, None)?;
    let gain = doc.gain()?.clone();
    let (plant, gain) = doc.plant.as_perturbed(&gain)?;
    let l = plant.l();

    let (mut eps, mut h, mut omega, mut eta_m) = (a.eps, a.h, Mat::identity(l, l), 0.0);
    if let Some(path) = &a.cert {
        let cert = Certificate::from_json(&std::fs::read_to_string(path)?)
            .map_err(|e| anyhow!("{}: {e}", path.display()))?;
        eps = cert.eps;
        h = Some(cert.h);
        eta_m = cert.eta_m;
        omega = cert.omega().map_err(|e| anyhow!("{e}"))?.clone();
    }
    if a.eps != 0.0 {
        eps = a.eps;
    }
    if a.h.is_some() {
        h = a.h;
    }
    if let Some(text) = &a.omega {
        let rows: Vec<Vec<f64>> = serde_json::from_str(text).context("parsing --omega")?;
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        omega = Mat::from_row_slice(rows.len(), rows.first().map_or(0, Vec::len), &flat);
    }

    let trigger = match a.trigger {
        TriggerKind::Periodic => TriggerPolicy::periodic(
            h.ok_or_else(|| anyhow!("--h is required for the periodic trigger"))?,
        )?,
        TriggerKind::PeriodicEt => TriggerPolicy::periodic_et(
            h.ok_or_else(|| anyhow!("--h is required for periodic-et"))?,
            eps,
            omega,
        )?,
        TriggerKind::SwitchingEt => TriggerPolicy::switching_et(
            h.ok_or_else(|| anyhow!("--h is required for switching-et"))?,
            eps,
            omega,
        )?,
        TriggerKind::ContinuousEt => TriggerPolicy::continuous_et(eps, omega)?,
    };

    let mut cfg = SimConfig::new(trigger.clone(), parse_x0(&a.x0)?, a.t_f);
    cfg.dt = aligned_dt(a.t_f, a.dt, Some(trigger.waiting_time()));
    cfg.seed = cli.seed;
    cfg.delay = match &a.delay {
        Some(text) => serde_json::from_str::<DelayModel>(text).context("parsing --delay")?,
        None if eta_m > 0.0 => DelayModel::Random { eta_max: eta_m },
        None => DelayModel::Zero,
    };
    if let Some(text) = &a.disturbance {
        cfg.disturbance =
            serde_json::from_str::<DisturbanceSpec>(text).context("parsing --disturbance")?;
    }

    let traj = run(&plant, &gain, &cfg)?;
    let base = cli.out.join(&a.label);
    let traj_path = base.with_extension("csv");
    write_atomic(&traj_path, &traj.to_csv())?;
    write_atomic(&base.with_extension("events.csv"), &traj.events_csv())?;

    let mut report = evtc_core::analysis::count_metrics(&traj)?;
    if traj.disturbance.bound == 0.0 {
        report.delta_hat = evtc_core::analysis::fit_decay(&traj, 0.5).ok();
    }
    println!("{}", metrics_csv_header());
    println!(
        "{}",
        evtc_core::analysis::metrics_csv_row(&a.label, &trigger, eta_m, &report)
    );
    println!("trajectory written to {}", traj_path.display());
    if traj.zeno_suspect {
        println!("warning: run truncated, send instants accumulate");
    }
    Ok(0)
}

/// Parse a trajectory CSV (t, x*, u*, z*, chi) back into state series.
fn parse_traj_csv(text: &str) -> Result<(Vec<f64>, Vec<Vec64>, usize, usize)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| anyhow!("empty trajectory file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let n = cols.iter().filter(|c| c.starts_with('x')).count();
    let m = cols.iter().filter(|c| c.starts_with('u')).count();
    let nz = cols.iter().filter(|c| c.starts_with('z')).count();
    if cols.first() != Some(&"t") || n == 0 {
        bail!("not a trajectory CSV (expected t,x1..,u..,z..,chi)");
    }
    let mut t = Vec::new();
    let mut x = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|e| anyhow!("line {}: {e}", i + 2)))
            .collect::<Result<_>>()?;
        if vals.len() != cols.len() {
            bail!("line {} has {} fields, expected {}", i + 2, vals.len(), cols.len());
        }
        t.push(vals[0]);
        x.push(Vec64::from_column_slice(&vals[1..1 + n]));
    }
    if t.len() < 2 {
        bail!("trajectory has fewer than two samples");
    }
    Ok((t, x, m, nz))
}

fn parse_events_csv(text: &str) -> Result<EventLog> {
    let mut log = EventLog {
        s: Vec::new(),
        eta: Vec::new(),
        t: Vec::new(),
        s_idx: Vec::new(),
    };
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|e| anyhow!("events line {}: {e}", i + 1)))
            .collect::<Result<_>>()?;
        if vals.len() != 4 {
            bail!("events line {} has {} fields, expected 4", i + 1, vals.len());
        }
        log.s.push(vals[1]);
        log.eta.push(vals[2]);
        log.t.push(vals[3]);
        log.s_idx.push(0);
    }
    Ok(log)
}

fn cmd_analyze(cli: &Cli, a: &AnalyzeArgs) -> Result<i32> {
    let traj_text = std::fs::read_to_string(&a.traj)
        .with_context(|| format!("reading {}", a.traj.display()))?;
    let (t, x, m, nz) = parse_traj_csv(&traj_text)?;
    let events_path = a
        .events
        .clone()
        .unwrap_or_else(|| a.traj.with_extension("events.csv"));
    let events_text = std::fs::read_to_string(&events_path)
        .with_context(|| format!("reading {}", events_path.display()))?;
    let events = parse_events_csv(&events_text)?;
    let dt = t[1] - t[0];
    let samples = t.len();

    let (mut trigger_kind, mut eps, mut h, mut eta_m) = (a.trigger, 0.0, dt * 20.0, 0.0);
    if let Some(path) = &a.cert {
        let cert = Certificate::from_json(&std::fs::read_to_string(path)?)
            .map_err(|e| anyhow!("{}: {e}", path.display()))?;
        eps = cert.eps;
        h = cert.h;
        eta_m = cert.eta_m;
        if trigger_kind == TriggerKind::Periodic && eps > 0.0 {
            trigger_kind = TriggerKind::SwitchingEt;
        }
    }
    let omega = Mat::identity(1, 1);
    let trigger = match trigger_kind {
        TriggerKind::Periodic => TriggerPolicy::periodic(h)?,
        TriggerKind::PeriodicEt => TriggerPolicy::periodic_et(h, eps, omega)?,
        TriggerKind::SwitchingEt => TriggerPolicy::switching_et(h, eps, omega)?,
        TriggerKind::ContinuousEt => TriggerPolicy::continuous_et(eps, omega)?,
    };

    // Rebuild the pieces the metrics touch; channel signals are not logged,
    // so the gain-related columns stay empty.
    let traj = Trajectory {
        t,
        x,
        u: vec![Vec64::zeros(m); samples],
        z: vec![Vec64::zeros(nz); samples],
        y_held: vec![Vec64::zeros(0); samples],
        chi: vec![0; samples],
        tau: vec![0.0; samples],
        e: vec![Vec64::zeros(0); samples],
        events,
        zeno_suspect: false,
        dt,
        disturbance: DisturbanceSpec::zero().realize(0, 0, 0)?,
    };
    let mut report = evtc_core::analysis::count_metrics(&traj)?;
    report.delta_hat = evtc_core::analysis::fit_decay(&traj, 0.5).ok();
    let row = evtc_core::analysis::metrics_csv_row(&a.run_id, &trigger, eta_m, &report);
    println!("{}", metrics_csv_header());
    println!("{row}");
    write_atomic(
        &cli.out.join(format!("{}.metrics.csv", a.run_id)),
        &format!("{}\n{row}\n", metrics_csv_header()),
    )?;
    Ok(0)
}

fn cmd_reproduce(cli: &Cli, a: &ReproduceArgs) -> Result<i32> {
    let (spec, base_dir) = load_preset(&a.preset)?;
    let doc = spec.resolve_plant(base_dir.as_deref())?;
    let out = cli.out.join(&spec.name);
    let ctx = Ctx::new(&spec, &doc, cli.seed, cli.tol, out, a.plots)?;
    reproduce::run_preset(&ctx)
}
