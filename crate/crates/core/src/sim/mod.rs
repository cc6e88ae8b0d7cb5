//! Deterministic fixed-step simulation of the networked closed loop.
//!
//! One run integrates x' = A x + B1 w + B2 u with classical RK4 on a fixed
//! grid, u held between arrival instants. The sensor samples y = C2 x + D2 v
//! at send instants decided by the trigger policy, packets reach the
//! zero-order hold after a network delay, and the control is u = K y(s_k)
//! of the most recently arrived packet (zero before the first arrival).
//!
//! Triggers are evaluated on the integration grid, so event times carry an
//! error of at most one step. Arrivals between grid points take effect at
//! the next grid instant. Everything is deterministic given (config, seed).

use crate::plant::{
    DelayModel, Disturbance, DisturbanceSpec, Gain, PerturbedPlant, PlantError, Signal,
    TriggerPolicy,
};
use crate::Vec64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Consecutive one-step inter-event gaps before a run is flagged as a
/// suspected accumulation of events and stopped.
const ZENO_RUN: usize = 50;

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Integration step.
    pub dt: f64,
    /// Horizon; must sit on the step grid.
    pub t_f: f64,
    pub x0: Vec64,
    pub seed: u64,
    pub trigger: TriggerPolicy,
    pub delay: DelayModel,
    pub disturbance: DisturbanceSpec,
}

impl SimConfig {
    /// Undisturbed, undelayed run with the default grid.
    pub fn new(trigger: TriggerPolicy, x0: Vec64, t_f: f64) -> Self {
        Self {
            dt: 1e-3,
            t_f,
            x0,
            seed: 0,
            trigger,
            delay: DelayModel::Zero,
            disturbance: DisturbanceSpec::zero(),
        }
    }

    /// Number of grid steps. Errors unless the horizon is a whole number of
    /// steps and the step resolves the waiting time (dt <= h/20).
    pub fn validate(&self, n: usize) -> Result<usize, SimError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SimError::Invalid(format!("step dt = {}", self.dt)));
        }
        if !(self.t_f > 0.0) || !self.t_f.is_finite() {
            return Err(SimError::Invalid(format!("horizon t_f = {}", self.t_f)));
        }
        let h = self.trigger.waiting_time();
        if h > 0.0 && self.dt > h / 20.0 * (1.0 + 1e-12) {
            return Err(SimError::Invalid(format!(
                "dt = {} does not resolve the waiting time h = {h} (need dt <= h/20)",
                self.dt
            )));
        }
        let steps_f = self.t_f / self.dt;
        let steps = steps_f.round();
        if (steps_f - steps).abs() > 1e-6 * steps.max(1.0) {
            return Err(SimError::Invalid(format!(
                "horizon {} is not a whole number of steps of {}",
                self.t_f, self.dt
            )));
        }
        if self.x0.len() != n {
            return Err(SimError::Invalid(format!(
                "initial state has {} entries, plant state is {n}-dimensional",
                self.x0.len()
            )));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Invalid("initial state has non-finite entries".into()));
        }
        self.delay.validate()?;
        Ok(steps as usize)
    }
}

/// Send/arrival log: row k holds (s_k, eta_k, t_k) with t_k = s_k + eta_k.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    pub s: Vec<f64>,
    pub eta: Vec<f64>,
    pub t: Vec<f64>,
    /// Grid index of each send.
    pub s_idx: Vec<usize>,
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Smallest gap between consecutive sends; infinity with fewer than two.
    pub fn min_gap(&self) -> f64 {
        self.s
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Grid-sampled closed-loop run with the event log and the reconstruction
/// of the switched-model quantities (chi, tau, e) along it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec64>,
    /// Control held on [t_i, t_{i+1}).
    pub u: Vec<Vec64>,
    pub z: Vec<Vec64>,
    /// Actuator-side held measurement y(s_k) (zero before the first arrival).
    pub y_held: Vec<Vec64>,
    /// 1 on [t_k, min(t_k + h, t_{k+1})), else 0.
    pub chi: Vec<u8>,
    /// Elapsed delay of the active measurement path at each sample.
    pub tau: Vec<f64>,
    /// Sampling error e(t) of the monitoring phase, zero elsewhere.
    pub e: Vec<Vec64>,
    pub events: EventLog,
    pub zeno_suspect: bool,
    /// Grid step the run was produced with.
    pub dt: f64,
    /// Realized disturbance signals, evaluable at any instant.
    pub disturbance: Disturbance,
}

impl Trajectory {
    pub fn send_count(&self) -> usize {
        self.events.len()
    }

    /// CSV body `t,x1..xn,u1..um,z1..znz,chi`.
    pub fn to_csv(&self) -> String {
        let (n, m, nz) = (
            self.x.first().map_or(0, |v| v.len()),
            self.u.first().map_or(0, |v| v.len()),
            self.z.first().map_or(0, |v| v.len()),
        );
        let mut head = String::from("t");
        for i in 1..=n {
            head.push_str(&format!(",x{i}"));
        }
        for i in 1..=m {
            head.push_str(&format!(",u{i}"));
        }
        for i in 1..=nz {
            head.push_str(&format!(",z{i}"));
        }
        head.push_str(",chi\n");
        let mut out = head;
        for i in 0..self.t.len() {
            out.push_str(&format!("{}", self.t[i]));
            for v in self.x[i].iter().chain(self.u[i].iter()).chain(self.z[i].iter()) {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", self.chi[i]));
        }
        out
    }

    /// Sidecar CSV `k,s_k,eta_k,t_k`.
    pub fn events_csv(&self) -> String {
        let mut out = String::from("k,s_k,eta_k,t_k\n");
        for k in 0..self.events.len() {
            out.push_str(&format!(
                "{k},{},{},{}\n",
                self.events.s[k], self.events.eta[k], self.events.t[k]
            ));
        }
        out
    }
}

/// One classical RK4 step of x' = A x + B1 w(t) + B2 u with u held constant;
/// w is evaluated at the stage times.
pub fn integrate_step(
    plant: &PerturbedPlant,
    x: &Vec64,
    u_held: &Vec64,
    w: &Signal,
    t: f64,
    dt: f64,
) -> Result<Vec64, SimError> {
    let bu = &plant.b2 * u_held;
    let f = |xs: &Vec64, ts: f64| -> Vec64 { &plant.a * xs + &plant.b1 * w.at(ts) + &bu };
    let k1 = f(x, t);
    let k2 = f(&(x + &k1 * (dt / 2.0)), t + dt / 2.0);
    let k3 = f(&(x + &k2 * (dt / 2.0)), t + dt / 2.0);
    let k4 = f(&(x + &k3 * dt), t + dt);
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite { t: t + dt });
    }
    Ok(next)
}

/// Fictitious measurement delay on the monitoring branch
/// [min(t_k + h, t_{k+1}), t_{k+1}): the linear interpolation from eta_k at
/// t_k + h to eta_{k+1} at t_{k+1}.
pub fn fictitious_delay(
    t: f64,
    s_k: f64,
    s_k1: f64,
    eta_k: f64,
    eta_k1: f64,
    h: f64,
) -> Result<f64, SimError> {
    let t_k = s_k + eta_k;
    let t_k1 = s_k1 + eta_k1;
    let den = t_k1 - t_k - h;
    if den <= 0.0 {
        return Err(SimError::Contract(format!(
            "no monitoring branch: t_{{k+1}} = {t_k1} <= t_k + h = {}",
            t_k + h
        )));
    }
    if t < t_k + h - 1e-12 || t >= t_k1 {
        return Err(SimError::Contract(format!(
            "t = {t} outside the monitoring branch [{}, {t_k1})",
            t_k + h
        )));
    }
    Ok(((t_k1 - t) * eta_k + (t - t_k - h) * eta_k1) / den)
}

/// Quadratic trigger comparison data.
fn fires(trigger: &TriggerPolicy, y: &Vec64, y_sent: &Vec64) -> bool {
    let (eps, omega, strict) = match trigger {
        TriggerPolicy::Periodic { .. } => return true,
        TriggerPolicy::ContinuousEt { eps, omega } => (*eps, omega, false),
        TriggerPolicy::SwitchingEt { eps, omega, .. } => (*eps, omega, false),
        TriggerPolicy::PeriodicEt { eps, omega, .. } => (*eps, omega, true),
    };
    let d = y - y_sent;
    let lhs = (omega * &d).dot(&d);
    let rhs = eps * (omega * y).dot(y);
    if strict {
        lhs > rhs
    } else {
        lhs >= rhs
    }
}

/// Steps to hold off before the rule may fire again.
fn arm_steps(h: f64, dt: f64) -> usize {
    (h / dt - 1e-9).ceil().max(1.0) as usize
}

pub fn run(plant: &PerturbedPlant, gain: &Gain, cfg: &SimConfig) -> Result<Trajectory, SimError> {
    let steps = cfg.validate(plant.n())?;
    gain.check_dims(plant.m(), plant.l())?;
    let dist = cfg.disturbance.realize(plant.n_w(), plant.n_v(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dt = cfg.dt;
    let hold = match &cfg.trigger {
        TriggerPolicy::ContinuousEt { .. } => 1,
        t => arm_steps(t.waiting_time(), dt),
    };

    let mut events = EventLog::default();
    // Packets waiting for their arrival step: (arrival idx, row, payload).
    let mut in_flight: std::collections::VecDeque<(usize, usize, Vec64)> = Default::default();
    let measure = |x: &Vec64, t: f64| -> Vec64 { &plant.c2 * x + &plant.d2 * dist.v.at(t) };

    let mut x = cfg.x0.clone();
    let mut u = Vec64::zeros(plant.m());
    let mut y_held = Vec64::zeros(plant.l());
    let mut y_sent = Vec64::zeros(plant.l());
    // Row index of the packet the hold currently plays back, if any.
    let mut active: Option<usize> = None;
    let mut zeno_suspect = false;
    let mut short_gaps = 0usize;

    let mut t_col = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut us = Vec::with_capacity(steps + 1);
    let mut zs = Vec::with_capacity(steps + 1);
    let mut helds = Vec::with_capacity(steps + 1);
    let mut active_rows = Vec::with_capacity(steps + 1);

    for i in 0..=steps {
        let t = i as f64 * dt;
        let y = measure(&x, t);

        // Sensor side: s_0 = 0, afterwards the policy decides.
        let send = if events.is_empty() {
            i == 0
        } else {
            let last = *events.s_idx.last().unwrap();
            match &cfg.trigger {
                TriggerPolicy::Periodic { .. } => i == last + hold,
                TriggerPolicy::PeriodicEt { .. } => {
                    i > last && (i - last) % hold == 0 && fires(&cfg.trigger, &y, &y_sent)
                }
                TriggerPolicy::SwitchingEt { .. } => {
                    i >= last + hold && fires(&cfg.trigger, &y, &y_sent)
                }
                TriggerPolicy::ContinuousEt { .. } => {
                    i > last && fires(&cfg.trigger, &y, &y_sent)
                }
            }
        };
        if send {
            let k = events.len();
            let eta = if k == 0 {
                cfg.delay.first(&mut rng)
            } else {
                let gap = (i - events.s_idx[k - 1]) as f64 * dt;
                if matches!(cfg.trigger, TriggerPolicy::ContinuousEt { .. }) {
                    if gap <= dt * 1.5 {
                        short_gaps += 1;
                        if short_gaps >= ZENO_RUN {
                            zeno_suspect = true;
                        }
                    } else {
                        short_gaps = 0;
                    }
                }
                cfg.delay.next(&mut rng, events.eta[k - 1], gap)
            };
            events.s.push(t);
            events.eta.push(eta);
            events.t.push(t + eta);
            events.s_idx.push(i);
            y_sent = y.clone();
            let arrival = ((t + eta) / dt - 1e-9).ceil().max(i as f64) as usize;
            in_flight.push_back((arrival, k, y.clone()));
        }

        // Actuator side: apply every packet due by this instant, in order.
        while in_flight.front().is_some_and(|&(arrival, _, _)| arrival <= i) {
            let (_, k, payload) = in_flight.pop_front().unwrap();
            y_held = payload;
            u = &gain.k * &y_held;
            active = Some(k);
        }

        t_col.push(t);
        xs.push(x.clone());
        us.push(u.clone());
        zs.push(&plant.c1 * &x + &plant.d1 * &u);
        helds.push(y_held.clone());
        active_rows.push(active);

        if zeno_suspect || i == steps {
            break;
        }
        x = integrate_step(plant, &x, &u, &dist.w, t, dt)?;
    }

    let (chi, tau, e) = switched_view(
        plant,
        &cfg.trigger,
        &events,
        &t_col,
        &xs,
        &active_rows,
        &dist,
        dt,
    );

    Ok(Trajectory {
        t: t_col,
        x: xs,
        u: us,
        z: zs,
        y_held: helds,
        chi,
        tau,
        e,
        events,
        zeno_suspect,
        dt,
        disturbance: dist,
    })
}

/// Reconstruct (chi, tau, e) of the switched model along the grid: chi = 1
/// on [t_k, min(t_k + h, t_{k+1})) with tau = t - s_k, chi = 0 on the
/// monitoring branch with tau the interpolated fictitious delay and
/// e = y(s_k) - y(t - tau). After the final arrival the fictitious delay is
/// frozen at its last value. Before the first arrival chi = 0, tau = e = 0.
#[allow(clippy::too_many_arguments)]
fn switched_view(
    plant: &PerturbedPlant,
    trigger: &TriggerPolicy,
    events: &EventLog,
    t_col: &[f64],
    xs: &[Vec64],
    active_rows: &[Option<usize>],
    dist: &Disturbance,
    dt: f64,
) -> (Vec<u8>, Vec<f64>, Vec<Vec64>) {
    let h = trigger.waiting_time();
    let l = plant.l();
    let measure = |i: usize| -> Vec64 { &plant.c2 * &xs[i] + &plant.d2 * dist.v.at(t_col[i]) };
    // Sensor output interpolated between grid samples.
    let y_at = |q: f64| -> Vec64 {
        let pos = (q / dt).clamp(0.0, (xs.len() - 1) as f64);
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if frac <= 1e-12 || i + 1 >= xs.len() {
            measure(i)
        } else {
            measure(i) * (1.0 - frac) + measure(i + 1) * frac
        }
    };

    let mut chi = Vec::with_capacity(t_col.len());
    let mut tau = Vec::with_capacity(t_col.len());
    let mut e = Vec::with_capacity(t_col.len());
    for (i, &t) in t_col.iter().enumerate() {
        let Some(k) = active_rows[i] else {
            chi.push(0);
            tau.push(0.0);
            e.push(Vec64::zeros(l));
            continue;
        };
        let t_k = events.t[k];
        let t_next = events.t.get(k + 1).copied();
        let in_hold = t < t_k + h && t_next.map_or(true, |tn| t < tn);
        if in_hold {
            chi.push(1);
            tau.push(t - events.s[k]);
            e.push(Vec64::zeros(l));
        } else {
            let eta_bar = match t_next {
                Some(_) => fictitious_delay(
                    t,
                    events.s[k],
                    events.s[k + 1],
                    events.eta[k],
                    events.eta[k + 1],
                    h,
                )
                .unwrap_or(events.eta[k]),
                None => events.eta[k],
            };
            let y_sent = &plant.c2 * &xs[events.s_idx[k]] + &plant.d2 * dist.v.at(events.s[k]);
            chi.push(0);
            tau.push(eta_bar);
            e.push(y_sent - y_at(t - eta_bar));
        }
    }
    (chi, tau, e)
}

/// Integrate the switched representation directly, consuming the event log
/// of a completed run: the hold phase plays back the sampled state, the
/// monitoring phase uses the current state plus the sampling error. With
/// zero delay both right-hand sides are algebraically the ZOH loop, so the
/// trajectories must coincide to rounding.
pub fn run_switched_reference(
    plant: &PerturbedPlant,
    gain: &Gain,
    cfg: &SimConfig,
    events: &EventLog,
) -> Result<Vec<Vec64>, SimError> {
    let steps = cfg.validate(plant.n())?;
    gain.check_dims(plant.m(), plant.l())?;
    if events.is_empty() || events.eta.iter().any(|&e| e != 0.0) {
        return Err(SimError::Contract(
            "switched reference integration needs an undelayed event log".into(),
        ));
    }
    let dist = cfg.disturbance.realize(plant.n_w(), plant.n_v(), cfg.seed)?;
    let h = cfg.trigger.waiting_time();
    let dt = cfg.dt;
    let bk = &plant.b2 * &gain.k;

    let mut xs: Vec<Vec64> = Vec::with_capacity(steps + 1);
    xs.push(cfg.x0.clone());
    let mut x = cfg.x0.clone();
    for i in 0..steps {
        let t0 = i as f64 * dt;
        // Active packet: the last event with s_k <= t0 (zero delay).
        let k = match events.s.partition_point(|&s| s <= t0 + 1e-12 * dt.max(1.0)) {
            0 => None,
            p => Some(p - 1),
        };
        let next = match k {
            None => integrate_step(plant, &x, &Vec64::zeros(plant.m()), &dist.w, t0, dt)?,
            Some(k) => {
                let s_k = events.s[k];
                let x_k = &xs[events.s_idx[k]];
                let y_k = &plant.c2 * x_k + &plant.d2 * dist.v.at(s_k);
                let hold_phase = t0 < s_k + h - 1e-12;
                let f = |xc: &Vec64, tc: f64| -> Vec64 {
                    let drive = if hold_phase {
                        // tau(t) = t - s_k: the delayed argument is s_k.
                        &bk * &y_k
                    } else {
                        // eta_bar = 0: e(t) = y(s_k) - y(t) against the
                        // current measurement.
                        let y_now = &plant.c2 * xc + &plant.d2 * dist.v.at(tc);
                        &bk * (&y_now + (&y_k - &y_now))
                    };
                    &plant.a * xc + &plant.b1 * dist.w.at(tc) + drive
                };
                let k1 = f(&x, t0);
                let k2 = f(&(&x + &k1 * (dt / 2.0)), t0 + dt / 2.0);
                let k3 = f(&(&x + &k2 * (dt / 2.0)), t0 + dt / 2.0);
                let k4 = f(&(&x + &k3 * dt), t0 + dt);
                &x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
            }
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { t: t0 + dt });
        }
        x = next;
        xs.push(x.clone());
    }
    Ok(xs)
}

/// Initial conditions evenly spaced on a circle of the given radius in the
/// (x1, x2) plane, zeros elsewhere.
pub fn circle_initial_conditions(n: usize, count: usize, radius: f64) -> Result<Vec<Vec64>, SimError> {
    if n < 2 {
        return Err(SimError::Invalid(
            "circle initial conditions need at least two states".into(),
        ));
    }
    Ok((0..count)
        .map(|k| {
            let ang = std::f64::consts::TAU * k as f64 / count as f64;
            let mut v = Vec64::zeros(n);
            v[0] = radius * ang.cos();
            v[1] = radius * ang.sin();
            v
        })
        .collect())
}

#[derive(Debug)]
pub struct BatchItem {
    pub index: usize,
    pub x0: Vec64,
    pub seed: u64,
    pub result: Result<Trajectory, SimError>,
}

/// One run per initial condition with seed = base seed + index, in parallel,
/// collected in input order.
pub fn run_batch(
    plant: &PerturbedPlant,
    gain: &Gain,
    base: &SimConfig,
    ics: &[Vec64],
) -> Result<Vec<BatchItem>, SimError> {
    if ics.is_empty() {
        return Err(SimError::Invalid("empty initial-condition set".into()));
    }
    Ok(ics
        .par_iter()
        .enumerate()
        .map(|(index, x0)| {
            let mut cfg = base.clone();
            cfg.x0 = x0.clone();
            cfg.seed = base.seed + index as u64;
            BatchItem {
                index,
                x0: x0.clone(),
                seed: cfg.seed,
                result: run(plant, gain, &cfg),
            }
        })
        .collect())
}
