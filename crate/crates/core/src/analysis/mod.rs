//! Metrics and certificate validation on simulated runs.
//!
//! A design found feasible comes with witness matrices; this module turns
//! them into Lyapunov values along a trajectory and checks the certified
//! decay or dissipation inequality numerically. It also computes the send
//! counts, release periods, decay fits and the empirical L2 cost that the
//! comparison tables are made of.

use crate::lmi::sym_eig_range;
use crate::plant::{matrix_to_rows, parse_matrix, PerturbedPlant, TriggerPolicy};
use crate::sim::Trajectory;
use crate::{Mat, Vec64};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid analysis input: {0}")]
    Invalid(String),
    #[error("certificate is missing matrix {0}")]
    Missing(String),
    #[error("certificate rejected: {0}")]
    Definiteness(String),
    #[error("certificate json: {0}")]
    Json(String),
}

// ---------------------------------------------------------------------------
// Certificates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TheoremTag {
    T1,
    T2,
}

/// Feasibility witness packaged with the design point it certifies.
///
/// T1 certifies exponential decay of the undelayed loop, T2 the dissipation
/// inequality of the delayed perturbed loop. Required matrices: T1 needs
/// P, U, X, X1, P2, P3, Y1, Y2, Y3, Om; T2 needs P, S0, S1, R0, R1, G0, Om
/// and G1 when the delay bound is positive.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub tag: TheoremTag,
    pub h: f64,
    pub eps: f64,
    pub delta: f64,
    pub eta_m: f64,
    pub gamma: Option<f64>,
    pub vars: BTreeMap<String, Mat>,
}

const T1_VARS: [&str; 10] = ["P", "U", "X", "X1", "P2", "P3", "Y1", "Y2", "Y3", "Om"];
const T2_VARS: [&str; 7] = ["P", "S0", "S1", "R0", "R1", "G0", "Om"];

impl Certificate {
    pub fn new(
        tag: TheoremTag,
        h: f64,
        eps: f64,
        delta: f64,
        eta_m: f64,
        gamma: Option<f64>,
        vars: BTreeMap<String, Mat>,
    ) -> Result<Self, AnalysisError> {
        let cert = Self {
            tag,
            h,
            eps,
            delta,
            eta_m,
            gamma,
            vars,
        };
        cert.validate()?;
        Ok(cert)
    }

    pub fn mat(&self, name: &str) -> Result<&Mat, AnalysisError> {
        self.vars
            .get(name)
            .ok_or_else(|| AnalysisError::Missing(name.into()))
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.h > 0.0) || !(self.eps >= 0.0) || !(self.delta >= 0.0) || !(self.eta_m >= 0.0) {
            return Err(AnalysisError::Invalid(format!(
                "parameters h={}, eps={}, delta={}, eta_m={}",
                self.h, self.eps, self.delta, self.eta_m
            )));
        }
        let required: &[&str] = match self.tag {
            TheoremTag::T1 => &T1_VARS,
            TheoremTag::T2 => &T2_VARS,
        };
        for name in required {
            self.mat(name)?;
        }
        if self.tag == TheoremTag::T2 && self.eta_m > 0.0 {
            self.mat("G1")?;
        }
        // Positivity demanded from the witness: strict for P and U, up to
        // rounding for the semidefinite ones.
        let strict: &[&str] = match self.tag {
            TheoremTag::T1 => &["P", "U"],
            TheoremTag::T2 => &["P"],
        };
        let semi: &[&str] = match self.tag {
            TheoremTag::T1 => &["Om"],
            TheoremTag::T2 => &["S0", "S1", "R0", "R1", "Om"],
        };
        for name in strict {
            let m = self.mat(name)?;
            let (lo, hi) = sym_eig_range(m);
            if lo <= 0.0 {
                return Err(AnalysisError::Definiteness(format!(
                    "{name} is not positive definite (eigenvalues in [{lo}, {hi}])"
                )));
            }
        }
        for name in semi {
            let m = self.mat(name)?;
            let (lo, hi) = sym_eig_range(m);
            if lo < -1e-9 * hi.abs().max(1.0) {
                return Err(AnalysisError::Definiteness(format!(
                    "{name} is not positive semidefinite (min eigenvalue {lo})"
                )));
            }
        }
        Ok(())
    }

    /// Trigger comparison matrix.
    pub fn omega(&self) -> Result<&Mat, AnalysisError> {
        self.mat("Om")
    }

    pub fn to_json(&self) -> String {
        let doc = CertDoc {
            theorem: self.tag,
            h: self.h,
            eps: self.eps,
            delta: self.delta,
            eta_m: self.eta_m,
            gamma: self.gamma,
            vars: self
                .vars
                .iter()
                .map(|(k, v)| (k.clone(), matrix_to_rows(v)))
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("certificate serialization")
    }

    pub fn from_json(source: &str) -> Result<Self, AnalysisError> {
        let doc: CertDoc =
            serde_json::from_str(source).map_err(|e| AnalysisError::Json(e.to_string()))?;
        let mut vars = BTreeMap::new();
        for (name, rows) in doc.vars {
            let m = parse_matrix(&name, &rows).map_err(|e| AnalysisError::Json(e.to_string()))?;
            vars.insert(name, m);
        }
        Self::new(
            doc.theorem,
            doc.h,
            doc.eps,
            doc.delta,
            doc.eta_m,
            doc.gamma,
            vars,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct CertDoc {
    theorem: TheoremTag,
    h: f64,
    eps: f64,
    delta: f64,
    eta_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    vars: BTreeMap<String, Vec<Vec<f64>>>,
}

// ---------------------------------------------------------------------------
// Run metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MetricsReport {
    /// Number of sent measurements.
    pub sm: usize,
    /// Mean of consecutive send gaps; absent with a single send.
    pub avg_period: Option<f64>,
    /// Smallest send gap; infinity with a single send.
    pub min_gap: f64,
    /// Fitted decay rate, filled by the caller when computed.
    pub delta_hat: Option<f64>,
    /// Empirical L2 cost, filled by the caller when computed.
    pub j: Option<f64>,
    pub zeno: bool,
}

pub fn count_metrics(traj: &Trajectory) -> Result<MetricsReport, AnalysisError> {
    let ev = &traj.events;
    if ev.is_empty() {
        return Err(AnalysisError::Invalid("run produced no events".into()));
    }
    let avg_period = if ev.len() >= 2 {
        Some((ev.s[ev.len() - 1] - ev.s[0]) / (ev.len() - 1) as f64)
    } else {
        None
    };
    Ok(MetricsReport {
        sm: ev.len(),
        avg_period,
        min_gap: ev.min_gap(),
        delta_hat: None,
        j: None,
        zeno: zeno_report(traj).flagged,
    })
}

pub fn metrics_csv_header() -> &'static str {
    "run_id,trigger,eps,h,etaM,SM,avg_period,min_gap,delta_hat,J,zeno"
}

fn opt(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map_or(String::new(), |x| x.to_string())
}

/// One row matching [`metrics_csv_header`].
pub fn metrics_csv_row(
    run_id: &str,
    trigger: &TriggerPolicy,
    eta_m: f64,
    report: &MetricsReport,
) -> String {
    let eps = match trigger {
        TriggerPolicy::Periodic { .. } => 0.0,
        TriggerPolicy::ContinuousEt { eps, .. }
        | TriggerPolicy::PeriodicEt { eps, .. }
        | TriggerPolicy::SwitchingEt { eps, .. } => *eps,
    };
    format!(
        "{run_id},{},{eps},{},{eta_m},{},{},{},{},{},{}",
        trigger.name(),
        trigger.waiting_time(),
        report.sm,
        opt(report.avg_period),
        opt(Some(report.min_gap)),
        opt(report.delta_hat),
        opt(report.j),
        report.zeno
    )
}

// ---------------------------------------------------------------------------
// Decay fit
// ---------------------------------------------------------------------------

/// Least-squares decay rate of ||x|| over the trailing window: the negated
/// slope of log ||x(t)||. Refuses disturbed runs, truncates at the first
/// exact zero of the norm.
pub fn fit_decay(traj: &Trajectory, tail_fraction: f64) -> Result<f64, AnalysisError> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(AnalysisError::Invalid(format!(
            "tail fraction {tail_fraction}"
        )));
    }
    if traj.disturbance.bound > 0.0 {
        return Err(AnalysisError::Invalid(
            "decay fit needs an undisturbed run".into(),
        ));
    }
    let n = traj.t.len();
    let start = ((1.0 - tail_fraction) * n as f64) as usize;
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    for i in start..n {
        let norm = traj.x[i].norm();
        if norm == 0.0 {
            break;
        }
        ts.push(traj.t[i]);
        logs.push(norm.ln());
    }
    if ts.len() < 2 {
        return Err(AnalysisError::Invalid(
            "fit window has fewer than two nonzero samples".into(),
        ));
    }
    let m = ts.len() as f64;
    let mean_t = ts.iter().sum::<f64>() / m;
    let mean_l = logs.iter().sum::<f64>() / m;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, l) in ts.iter().zip(&logs) {
        num += (t - mean_t) * (l - mean_l);
        den += (t - mean_t) * (t - mean_t);
    }
    if den == 0.0 {
        return Err(AnalysisError::Invalid("degenerate fit window".into()));
    }
    Ok(-num / den)
}

// ---------------------------------------------------------------------------
// Zeno detection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ZenoReport {
    pub flagged: bool,
    /// Consecutive send gaps.
    pub gaps: Vec<f64>,
}

/// Flags a run whose send gaps sit at the grid limit for 50 consecutive
/// events or strictly shrink for 100, and honors the simulator's own
/// truncation flag.
pub fn zeno_report(traj: &Trajectory) -> ZenoReport {
    let gaps: Vec<f64> = traj.events.s.windows(2).map(|w| w[1] - w[0]).collect();
    let mut at_grid = 0usize;
    let mut shrinking = 0usize;
    let mut flagged = traj.zeno_suspect;
    for (i, &g) in gaps.iter().enumerate() {
        at_grid = if g <= traj.dt * 1.5 { at_grid + 1 } else { 0 };
        shrinking = if i > 0 && g < gaps[i - 1] { shrinking + 1 } else { 0 };
        if at_grid >= 50 || shrinking >= 100 {
            flagged = true;
        }
    }
    ZenoReport { flagged, gaps }
}

// ---------------------------------------------------------------------------
// Certificate evaluation
// ---------------------------------------------------------------------------

/// Lyapunov values along a run and the finite-difference residual of the
/// certified inequality. `residual` is NaN where differencing would cross a
/// phase boundary or the startup window.
#[derive(Debug, Clone)]
pub struct CertificateTrace {
    pub t: Vec<f64>,
    pub v_p: Vec<f64>,
    pub v: Vec<f64>,
    pub residual: Vec<f64>,
    /// 1 + the largest Lyapunov value on the run.
    pub scale: f64,
    /// Largest residual / (1 + V) over evaluated points.
    pub max_residual: f64,
    /// Largest |V - V_P| / (1 + V_P) at the switching instants (decay
    /// certificates only; zero otherwise).
    pub max_handoff_gap: f64,
}

fn quad(m: &Mat, v: &Vec64) -> f64 {
    (m * v).dot(v)
}

/// e^{2 delta s}-weighted integrand cumulative trapezoid; index i holds the
/// integral from t_0 to t_i.
fn cumtrapz(vals: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(vals.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in vals.windows(2) {
        acc += 0.5 * (w[0] + w[1]) * dt;
        out.push(acc);
    }
    out
}

/// Decay certificate along an undelayed run: V_P = x'Px everywhere, and on
/// hold phases the full functional with the (h - tau)-weighted integral and
/// cross terms. The residual is dV/dt + 2 delta V by centered differences
/// strictly inside phases.
pub fn eval_certificate_t1(
    plant: &PerturbedPlant,
    traj: &Trajectory,
    cert: &Certificate,
) -> Result<CertificateTrace, AnalysisError> {
    if cert.tag != TheoremTag::T1 {
        return Err(AnalysisError::Invalid(
            "decay evaluation needs a T1 certificate".into(),
        ));
    }
    if traj.events.eta.iter().any(|&e| e != 0.0) {
        return Err(AnalysisError::Invalid(
            "decay evaluation needs an undelayed run".into(),
        ));
    }
    if traj.x.first().map(|x| x.len()) != Some(plant.n()) {
        return Err(AnalysisError::Invalid("trajectory does not match plant".into()));
    }
    let p = cert.mat("P")?;
    let u_m = cert.mat("U")?;
    let x_m = cert.mat("X")?;
    let x1 = cert.mat("X1")?;
    let n = plant.n();
    let xs_sym = 0.5 * (x_m + x_m.transpose());
    // Cross-term matrix of the hold functional on col{x(t), x(t_k)}.
    let mut cross = Mat::zeros(2 * n, 2 * n);
    cross.view_mut((0, 0), (n, n)).copy_from(&xs_sym);
    let off = -x_m + x1;
    cross.view_mut((0, n), (n, n)).copy_from(&off);
    cross.view_mut((n, 0), (n, n)).copy_from(&off.transpose());
    cross
        .view_mut((n, n), (n, n))
        .copy_from(&(-x1 - x1.transpose() + &xs_sym));

    let (h, delta, dt) = (cert.h, cert.delta, traj.dt);
    let steps = traj.t.len();
    // Integrand of the U-term, weighted for cumulative evaluation.
    let wq: Vec<f64> = (0..steps)
        .map(|i| {
            let xdot = &plant.a * &traj.x[i]
                + &plant.b1 * traj.disturbance.w.at(traj.t[i])
                + &plant.b2 * &traj.u[i];
            (2.0 * delta * traj.t[i]).exp() * quad(u_m, &xdot)
        })
        .collect();
    let cum = cumtrapz(&wq, dt);

    // Phase id per sample: index of the active hold phase, usize::MAX when
    // monitoring. Phase k covers samples [s_idx[k], s_idx[k] + hold).
    let hs = (h / dt - 1e-9).ceil() as usize;
    let mut phase = vec![usize::MAX; steps];
    for (k, &i0) in traj.events.s_idx.iter().enumerate() {
        for i in i0..(i0 + hs).min(steps) {
            if traj.chi[i] == 1 {
                phase[i] = k;
            }
        }
    }

    let stacked = |i: usize, k: usize| -> Vec64 {
        let mut s = Vec64::zeros(2 * n);
        s.rows_mut(0, n).copy_from(&traj.x[i]);
        s.rows_mut(n, n).copy_from(&traj.x[traj.events.s_idx[k]]);
        s
    };
    let hold_value = |i: usize, k: usize| -> f64 {
        let i0 = traj.events.s_idx[k];
        let tau = (i - i0) as f64 * dt;
        let vu = (h - tau) * (-2.0 * delta * traj.t[i]).exp() * (cum[i] - cum[i0]);
        let vx = (h - tau) * quad(&cross, &stacked(i, k));
        vu + vx
    };

    let mut v_p = Vec::with_capacity(steps);
    let mut v = Vec::with_capacity(steps);
    for i in 0..steps {
        let vp = quad(p, &traj.x[i]);
        v_p.push(vp);
        v.push(if phase[i] != usize::MAX {
            vp + hold_value(i, phase[i])
        } else {
            vp
        });
    }

    // Handoff: the hold-branch value must coincide with V_P when the phase
    // opens (tau = 0) and when it closes (tau = h).
    let mut max_handoff: f64 = 0.0;
    for (k, &i0) in traj.events.s_idx.iter().enumerate() {
        let open = (v[i0] - v_p[i0]).abs() / (1.0 + v_p[i0]);
        max_handoff = max_handoff.max(open);
        let i1 = i0 + hs;
        if i1 < steps {
            let close = hold_value(i1, k).abs() / (1.0 + v_p[i1]);
            max_handoff = max_handoff.max(close);
        }
    }

    let mut residual = vec![f64::NAN; steps];
    let mut max_res = f64::NEG_INFINITY;
    for i in 2..steps.saturating_sub(2) {
        let ph = phase[i];
        if (i - 2..=i + 2).any(|j| phase[j] != ph) {
            continue;
        }
        let r = (v[i + 1] - v[i - 1]) / (2.0 * dt) + 2.0 * delta * v[i];
        residual[i] = r;
        max_res = max_res.max(r / (1.0 + v[i]));
    }
    let scale = 1.0 + v.iter().cloned().fold(0.0, f64::max);
    Ok(CertificateTrace {
        t: traj.t.clone(),
        v_p,
        v,
        residual,
        scale,
        max_residual: max_res,
        max_handoff_gap: max_handoff,
    })
}

/// exp(2 delta t) integrated from a to b, stable as delta -> 0.
fn exp_int(a: f64, b: f64, delta: f64) -> f64 {
    if delta == 0.0 {
        b - a
    } else {
        (2.0 * delta * a).exp() * ((2.0 * delta * (b - a)).exp_m1()) / (2.0 * delta)
    }
}

/// Dissipation certificate along a (possibly delayed, disturbed) run:
/// the functional with sliding single and double integral terms, and the
/// residual dV/dt + 2 delta V + z'z - gamma^2 (w'w + v'v) with v taken at
/// the delayed argument logged by the simulator. Residuals are evaluated
/// for t past the largest window and away from arrival instants.
pub fn eval_certificate_t2(
    plant: &PerturbedPlant,
    traj: &Trajectory,
    cert: &Certificate,
) -> Result<CertificateTrace, AnalysisError> {
    if cert.tag != TheoremTag::T2 {
        return Err(AnalysisError::Invalid(
            "dissipation evaluation needs a T2 certificate".into(),
        ));
    }
    let gamma = cert
        .gamma
        .ok_or_else(|| AnalysisError::Invalid("certificate lacks gamma".into()))?;
    if traj.x.first().map(|x| x.len()) != Some(plant.n()) {
        return Err(AnalysisError::Invalid("trajectory does not match plant".into()));
    }
    let (eta_m, h, delta, dt) = (cert.eta_m, cert.h, cert.delta, traj.dt);
    if eta_m > 0.0 && dt > eta_m / 10.0 * (1.0 + 1e-12) {
        return Err(AnalysisError::Invalid(format!(
            "grid step {dt} too coarse for the delay windows; need dt <= eta_M/10 = {}",
            eta_m / 10.0
        )));
    }
    let tau_m = eta_m + h;
    let p = cert.mat("P")?;
    let s0 = cert.mat("S0")?;
    let s1 = cert.mat("S1")?;
    let r0 = cert.mat("R0")?;
    let r1 = cert.mat("R1")?;

    let steps = traj.t.len();
    let x0 = &traj.x[0];
    let ex = |i: usize| (2.0 * delta * traj.t[i]).exp();
    let xdots: Vec<Vec64> = (0..steps)
        .map(|i| {
            &plant.a * &traj.x[i]
                + &plant.b1 * traj.disturbance.w.at(traj.t[i])
                + &plant.b2 * &traj.u[i]
        })
        .collect();
    let f0: Vec<f64> = (0..steps).map(|i| ex(i) * quad(s0, &traj.x[i])).collect();
    let f1: Vec<f64> = (0..steps).map(|i| ex(i) * quad(s1, &traj.x[i])).collect();
    let g0: Vec<f64> = (0..steps).map(|i| ex(i) * quad(r0, &xdots[i])).collect();
    let g1: Vec<f64> = (0..steps).map(|i| ex(i) * quad(r1, &xdots[i])).collect();
    let sg0: Vec<f64> = (0..steps).map(|i| traj.t[i] * g0[i]).collect();
    let sg1: Vec<f64> = (0..steps).map(|i| traj.t[i] * g1[i]).collect();
    let cf0 = cumtrapz(&f0, dt);
    let cf1 = cumtrapz(&f1, dt);
    let cg0 = cumtrapz(&g0, dt);
    let cg1 = cumtrapz(&g1, dt);
    let csg0 = cumtrapz(&sg0, dt);
    let csg1 = cumtrapz(&sg1, dt);

    // Cumulative value at time q <= t_i, extending the state backwards as
    // x(0) with zero derivative.
    let grid = |q: f64| -> usize { ((q / dt).round().max(0.0) as usize).min(steps - 1) };
    let state_int = |c: &[f64], base: f64, lo: f64, hi: f64| -> f64 {
        // integral of e^{2 delta s} x'Sx over [lo, hi] with prehistory.
        let pre = if lo < 0.0 {
            base * exp_int(lo, hi.min(0.0), delta)
        } else {
            0.0
        };
        pre + c[grid(hi)] - c[grid(lo.max(0.0))]
    };

    let mut v_p = Vec::with_capacity(steps);
    let mut v = Vec::with_capacity(steps);
    let base0 = quad(s0, x0);
    let base1 = quad(s1, x0);
    for i in 0..steps {
        let t = traj.t[i];
        let w = (-2.0 * delta * t).exp();
        let vp = quad(p, &traj.x[i]);
        let vs0 = w * state_int(&cf0, base0, t - eta_m, t);
        let vs1 = w * state_int(&cf1, base1, t - tau_m, t - eta_m);
        // Double integrals rewritten with polynomial kernels; the
        // derivative term vanishes on the prehistory, so clamping at the
        // origin is exact there.
        let (i_lo0, i_hi) = (grid((t - eta_m).max(0.0)), i);
        let vr0 = eta_m
            * w
            * ((eta_m - t) * (cg0[i_hi] - cg0[i_lo0]) + (csg0[i_hi] - csg0[i_lo0]));
        let i_lo1 = grid((t - tau_m).max(0.0));
        let vr1 = h
            * w
            * ((tau_m - t) * (cg1[i_lo0] - cg1[i_lo1]) + (csg1[i_lo0] - csg1[i_lo1])
                + h * (cg1[i_hi] - cg1[i_lo0]));
        v_p.push(vp);
        v.push(vp + vs0 + vs1 + vr0 + vr1);
    }

    // Supply rate at each sample, v evaluated at the logged delayed instant.
    let supply: Vec<f64> = (0..steps)
        .map(|i| {
            let z2 = traj.z[i].norm_squared();
            let w2 = traj.disturbance.w.at(traj.t[i]).norm_squared();
            let v2 = traj
                .disturbance
                .v
                .at(traj.t[i] - traj.tau[i])
                .norm_squared();
            z2 - gamma * gamma * (w2 + v2)
        })
        .collect();

    // The control jumps at packet arrivals; the kink re-enters the sliding
    // windows eta_M and tau_M later. Exclude differencing around all three.
    let mut near_arrival = vec![false; steps];
    for &tk in &traj.events.t {
        for shift in [0.0, eta_m, tau_m] {
            let c = ((tk + shift) / dt).round() as i64;
            for j in (c - 2)..=(c + 2) {
                if j >= 0 && (j as usize) < steps {
                    near_arrival[j as usize] = true;
                }
            }
        }
    }
    let start = ((tau_m / dt).ceil() as usize + 2).min(steps);
    let mut residual = vec![f64::NAN; steps];
    let mut max_res = f64::NEG_INFINITY;
    for i in start..steps.saturating_sub(2) {
        if (i - 2..=i + 2).any(|j| near_arrival[j]) {
            continue;
        }
        let r = (v[i + 1] - v[i - 1]) / (2.0 * dt) + 2.0 * delta * v[i] + supply[i];
        residual[i] = r;
        max_res = max_res.max(r / (1.0 + v[i]));
    }
    let scale = 1.0 + v.iter().cloned().fold(0.0, f64::max);
    Ok(CertificateTrace {
        t: traj.t.clone(),
        v_p,
        v,
        residual,
        scale,
        max_residual: max_res,
        max_handoff_gap: 0.0,
    })
}

// ---------------------------------------------------------------------------
// Empirical L2 cost
// ---------------------------------------------------------------------------

/// Trapezoid value of the truncated cost
/// integral of z'z - gamma^2 (w'w + v'v) with v at the delayed argument.
/// Requires a zero initial state and a nontrivial disturbance.
pub fn empirical_l2(traj: &Trajectory, gamma: f64) -> Result<f64, AnalysisError> {
    if !(gamma > 0.0) {
        return Err(AnalysisError::Invalid(format!("gamma = {gamma}")));
    }
    if traj.x.first().map_or(true, |x| x.norm() != 0.0) {
        return Err(AnalysisError::Invalid(
            "L2 cost is defined for zero initial state".into(),
        ));
    }
    if traj.disturbance.bound == 0.0 {
        return Err(AnalysisError::Invalid(
            "L2 cost needs a nontrivial disturbance".into(),
        ));
    }
    let vals: Vec<f64> = (0..traj.t.len())
        .map(|i| {
            traj.z[i].norm_squared()
                - gamma * gamma
                    * (traj.disturbance.w.at(traj.t[i]).norm_squared()
                        + traj
                            .disturbance
                            .v
                            .at(traj.t[i] - traj.tau[i])
                            .norm_squared())
        })
        .collect();
    Ok(*cumtrapz(&vals, traj.dt).last().unwrap())
}

// ---------------------------------------------------------------------------
// Input-to-state stability check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct IssReport {
    pub holds: bool,
    /// Smallest slack of the bound over the run; negative when violated.
    pub margin: f64,
}

/// Bound check V(t) <= V(0) e^{-2 delta t} + gamma^2 Delta^2
/// (1 - e^{-2 delta t}) / (2 delta) with V from the dissipation functional.
/// Only meaningful for designs with a zero performance channel.
pub fn iss_check(
    plant: &PerturbedPlant,
    traj: &Trajectory,
    cert: &Certificate,
    bound: f64,
) -> Result<IssReport, AnalysisError> {
    if cert.delta <= 0.0 {
        return Err(AnalysisError::Invalid(
            "the disturbance-to-state bound needs a positive decay rate".into(),
        ));
    }
    if !(bound >= 0.0) {
        return Err(AnalysisError::Invalid(format!("sup bound {bound}")));
    }
    if plant.c1.amax() > 0.0 || plant.d1.amax() > 0.0 {
        return Err(AnalysisError::Invalid(
            "state bound applies to designs with zero performance output".into(),
        ));
    }
    let gamma = cert
        .gamma
        .ok_or_else(|| AnalysisError::Invalid("certificate lacks gamma".into()))?;
    let trace = eval_certificate_t2(plant, traj, cert)?;
    let v0 = trace.v[0];
    let mut margin = f64::INFINITY;
    let tol = 1e-4 * trace.scale;
    for (i, &t) in trace.t.iter().enumerate() {
        let decay = (-2.0 * cert.delta * t).exp();
        let bound_t =
            v0 * decay + gamma * gamma * bound * bound * (1.0 - decay) / (2.0 * cert.delta);
        margin = margin.min(bound_t + tol - trace.v[i]);
    }
    Ok(IssReport {
        holds: margin >= 0.0,
        margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{load_plant, DelayModel, DisturbanceSpec, SignalSpec};
    use crate::sim::{run, SimConfig};
    use crate::synthesis::{build_remark1, build_thm1, build_thm2, Thm1Params, Thm2Params};
    use crate::lmi::solve_feasibility;
    use crate::plant::Gain;

    fn example2() -> (PerturbedPlant, Gain) {
        let doc = load_plant(
            r#"{"A": [[0, 1], [0, -3]], "B": [[0], [1]], "C": [[1, 0]], "K": [[3]]}"#,
        )
        .unwrap();
        let gain = doc.gain().unwrap().clone();
        doc.plant.as_perturbed(&gain).unwrap()
    }

    fn t1_certificate(h: f64, eps: f64, delta: f64) -> Certificate {
        let doc = load_plant(
            r#"{"A": [[0, 1], [0, -3]], "B": [[0], [1]], "C": [[1, 0]], "K": [[3]]}"#,
        )
        .unwrap();
        let gain = doc.gain().unwrap().clone();
        let plant = match doc.plant {
            crate::plant::LoadedPlant::Simple(p) => p,
            _ => unreachable!(),
        };
        let params = Thm1Params::new(h, eps, delta).unwrap();
        let prob = build_thm1(&plant, &gain, &params).unwrap();
        let res = solve_feasibility(&prob).unwrap();
        assert!(res.is_feasible(), "design point must be feasible");
        Certificate::new(
            TheoremTag::T1,
            h,
            eps,
            delta,
            0.0,
            None,
            res.witness.unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn metrics_count_periodic_sends() {
        let (plant, gain) = example2();
        let traj = run(
            &plant,
            &gain,
            &SimConfig::new(
                TriggerPolicy::periodic(2.0).unwrap(),
                Vec64::from_vec(vec![10.0, 0.0]),
                20.0,
            ),
        )
        .unwrap();
        let rep = count_metrics(&traj).unwrap();
        assert_eq!(rep.sm, 11);
        assert!((rep.avg_period.unwrap() - 2.0).abs() < 1e-9);
        assert!((rep.min_gap - 2.0).abs() < 1e-9);
        assert!(!rep.zeno);
        let row = metrics_csv_row("r0", &traj_trigger(), 0.0, &rep);
        assert!(row.starts_with("r0,periodic,0,2,0,11,2,"));
    }

    fn traj_trigger() -> TriggerPolicy {
        TriggerPolicy::periodic(2.0).unwrap()
    }

    #[test]
    fn decay_fit_recovers_pure_exponential() {
        let doc = load_plant(r#"{"A": [[-1]], "B": [[1]], "C": [[1]], "K": [[0]]}"#).unwrap();
        let gain = doc.gain().unwrap().clone();
        let (plant, gain) = doc.plant.as_perturbed(&gain).unwrap();
        let traj = run(
            &plant,
            &gain,
            &SimConfig::new(
                TriggerPolicy::periodic(1.0).unwrap(),
                Vec64::from_vec(vec![2.0]),
                10.0,
            ),
        )
        .unwrap();
        let rate = fit_decay(&traj, 0.5).unwrap();
        assert!((rate - 1.0).abs() < 1e-3, "fit {rate}");
    }

    #[test]
    fn decay_fit_refuses_disturbed_and_zero_runs() {
        let (plant, gain) = example2();
        let mut cfg = SimConfig::new(
            TriggerPolicy::periodic(0.5).unwrap(),
            Vec64::zeros(2),
            5.0,
        );
        let flat = run(&plant, &gain, &cfg).unwrap();
        assert!(fit_decay(&flat, 0.5).is_err());
        cfg.x0 = Vec64::from_vec(vec![1.0, 0.0]);
        let ok = run(&plant, &gain, &cfg).unwrap();
        assert!(fit_decay(&ok, 0.5).is_ok());
        assert!(fit_decay(&ok, 0.0).is_err());
    }

    #[test]
    fn switching_run_beats_design_decay() {
        let (plant, gain) = example2();
        let cert = t1_certificate(0.895, 0.555, 0.24);
        let mut cfg = SimConfig::new(
            TriggerPolicy::switching_et(0.895, 0.555, cert.omega().unwrap().clone()).unwrap(),
            Vec64::from_vec(vec![10.0, 0.0]),
            20.0,
        );
        cfg.dt = 1e-4;
        let traj = run(&plant, &gain, &cfg).unwrap();
        let rate = fit_decay(&traj, 0.5).unwrap();
        assert!(rate >= 0.19, "fitted decay {rate}");
    }

    #[test]
    fn t1_certificate_validates_along_certified_run() {
        let (plant, gain) = example2();
        let cert = t1_certificate(0.895, 0.555, 0.24);
        let mut cfg = SimConfig::new(
            TriggerPolicy::switching_et(0.895, 0.555, cert.omega().unwrap().clone()).unwrap(),
            Vec64::from_vec(vec![10.0, 0.0]),
            20.0,
        );
        cfg.dt = 1e-4;
        let traj = run(&plant, &gain, &cfg).unwrap();
        let trace = eval_certificate_t1(&plant, &traj, &cert).unwrap();
        assert!(
            trace.max_handoff_gap <= 1e-6,
            "handoff gap {}",
            trace.max_handoff_gap
        );
        assert!(
            trace.max_residual <= 1e-6,
            "max residual {}",
            trace.max_residual
        );
        // The functional stays nonnegative along the run.
        assert!(trace.v.iter().all(|&x| x >= -1e-9 * trace.scale));
    }

    #[test]
    fn t1_zero_trajectory_gives_zero_series() {
        let (plant, gain) = example2();
        let cert = t1_certificate(0.895, 0.555, 0.24);
        let mut cfg = SimConfig::new(
            TriggerPolicy::switching_et(0.895, 0.555, cert.omega().unwrap().clone()).unwrap(),
            Vec64::zeros(2),
            5.0,
        );
        cfg.dt = 1e-4;
        let traj = run(&plant, &gain, &cfg).unwrap();
        let trace = eval_certificate_t1(&plant, &traj, &cert).unwrap();
        assert!(trace.v.iter().all(|&x| x == 0.0));
        assert!(trace
            .residual
            .iter()
            .all(|&r| r.is_nan() || r == 0.0));
    }

    #[test]
    fn certificate_json_round_trip_and_definiteness() {
        let cert = t1_certificate(0.5, 0.1, 0.24);
        let json = cert.to_json();
        let back = Certificate::from_json(&json).unwrap();
        assert_eq!(back.vars.len(), cert.vars.len());
        assert_eq!(back.h, cert.h);
        for (k, m) in &cert.vars {
            assert_eq!(&back.vars[k], m);
        }
        // Tampering with P must be rejected.
        let mut bad = cert.clone();
        let n = bad.vars["P"].nrows();
        bad.vars.insert("P".into(), -Mat::identity(n, n));
        assert!(Certificate::from_json(&bad.to_json()).is_err());
        // Dropping a required matrix must be rejected.
        let mut missing = cert.clone();
        missing.vars.remove("U");
        assert!(Certificate::from_json(&missing.to_json()).is_err());
    }

    fn pendulum_hinf() -> (PerturbedPlant, Gain) {
        let doc = load_plant(
            r#"{"A": [[0, 1, 0, 0], [0, 0, -1, 0], [0, 0, 0, 1], [0, 0, 3.3333333333333335, 0]],
                "B1": [[1], [1], [1], [1]],
                "B2": [[0], [0.1], [0], [-0.03333333333333333]],
                "C1": [[1, 1, 1, 1]],
                "C2": [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]],
                "D1": [[0.1]],
                "D2": [[0], [0], [0], [0]],
                "K": [[2.9129, 10.4357, 287.9029, 160.3271]]}"#,
        )
        .unwrap();
        let gain = doc.gain().unwrap().clone();
        doc.plant.as_perturbed(&gain).unwrap()
    }

    fn t2_certificate(plant: &PerturbedPlant, gain: &Gain) -> Certificate {
        let params = Thm2Params::new(200.0, 0.117, 0.1, 0.13, 0.0).unwrap();
        let prob = build_thm2(plant, gain, &params).unwrap();
        let res = solve_feasibility(&prob).unwrap();
        assert!(res.is_feasible(), "published design point must be feasible");
        Certificate::new(
            TheoremTag::T2,
            0.117,
            0.13,
            0.0,
            0.1,
            Some(200.0),
            res.witness.unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn t2_certificate_validates_dissipation_and_l2_cost() {
        let (plant, gain) = pendulum_hinf();
        let cert = t2_certificate(&plant, &gain);
        let mut cfg = SimConfig::new(
            TriggerPolicy::switching_et(0.117, 0.13, cert.omega().unwrap().clone()).unwrap(),
            Vec64::zeros(4),
            10.0,
        );
        cfg.dt = 5e-4;
        cfg.delay = DelayModel::Constant { eta: 0.05 };
        cfg.disturbance = DisturbanceSpec {
            w: SignalSpec::DecayingSine {
                amplitude: vec![1.0],
                decay: 0.3,
                freq: 2.0,
            },
            v: SignalSpec::Zero,
            bound: None,
        };
        let traj = run(&plant, &gain, &cfg).unwrap();
        let trace = eval_certificate_t2(&plant, &traj, &cert).unwrap();
        assert!(
            trace.max_residual <= 1e-4,
            "max residual {}",
            trace.max_residual
        );
        let j = empirical_l2(&traj, 200.0).unwrap();
        assert!(j < 0.0, "J = {j}");
        // Tighter gamma weighting only decreases the cost.
        assert!(empirical_l2(&traj, 400.0).unwrap() < j);
    }

    #[test]
    fn t2_zero_run_is_identically_zero() {
        let (plant, gain) = pendulum_hinf();
        let cert = t2_certificate(&plant, &gain);
        let mut cfg = SimConfig::new(
            TriggerPolicy::switching_et(0.117, 0.13, cert.omega().unwrap().clone()).unwrap(),
            Vec64::zeros(4),
            3.0,
        );
        cfg.dt = 5e-4;
        let traj = run(&plant, &gain, &cfg).unwrap();
        let trace = eval_certificate_t2(&plant, &traj, &cert).unwrap();
        assert!(trace.v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn l2_cost_requires_zero_start_and_quadruples_with_doubled_output() {
        let (plant, gain) = pendulum_hinf();
        let mut cfg = SimConfig::new(
            TriggerPolicy::periodic(0.1).unwrap(),
            Vec64::zeros(4),
            5.0,
        );
        cfg.disturbance = DisturbanceSpec {
            w: SignalSpec::DecayingSine {
                amplitude: vec![1.0],
                decay: 0.3,
                freq: 2.0,
            },
            v: SignalSpec::Zero,
            bound: None,
        };
        let traj = run(&plant, &gain, &cfg).unwrap();
        // Doubling z pointwise quadruples its contribution; with the
        // disturbance term fixed, J transforms affinely.
        let j1 = empirical_l2(&traj, 200.0).unwrap();
        let mut doubled = traj.clone();
        for z in &mut doubled.z {
            *z *= 2.0;
        }
        let j2 = empirical_l2(&doubled, 200.0).unwrap();
        let gw: Vec<f64> = (0..traj.t.len())
            .map(|i| {
                traj.disturbance.w.at(traj.t[i]).norm_squared()
                    + traj
                        .disturbance
                        .v
                        .at(traj.t[i] - traj.tau[i])
                        .norm_squared()
            })
            .collect();
        let wint = 200.0 * 200.0 * cumtrapz(&gw, traj.dt).last().unwrap();
        assert!(((j2 + wint) - 4.0 * (j1 + wint)).abs() < 1e-6 * (1.0 + wint));

        let mut bad = cfg.clone();
        bad.x0 = Vec64::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let nz = run(&plant, &gain, &bad).unwrap();
        assert!(empirical_l2(&nz, 200.0).is_err());
        // Disturbed runs are no basis for a decay fit either.
        assert!(fit_decay(&nz, 0.5).is_err());
    }

    #[test]
    fn zeno_report_flags_only_accumulating_runs() {
        let (plant, gain) = example2();
        let cont = run(
            &plant,
            &gain,
            &SimConfig::new(
                TriggerPolicy::continuous_et(1e-6, Mat::identity(1, 1)).unwrap(),
                Vec64::from_vec(vec![10.0, 0.0]),
                20.0,
            ),
        )
        .unwrap();
        assert!(zeno_report(&cont).flagged);
        let sw = run(
            &plant,
            &gain,
            &SimConfig::new(
                TriggerPolicy::switching_et(0.3, 0.1, Mat::identity(1, 1)).unwrap(),
                Vec64::from_vec(vec![10.0, 0.0]),
                20.0,
            ),
        )
        .unwrap();
        assert!(!zeno_report(&sw).flagged);
        let per = run(
            &plant,
            &gain,
            &SimConfig::new(
                TriggerPolicy::periodic(0.5).unwrap(),
                Vec64::from_vec(vec![10.0, 0.0]),
                20.0,
            ),
        )
        .unwrap();
        assert!(!zeno_report(&per).flagged);
    }

    #[test]
    fn iss_bound_holds_for_certified_noise_and_detects_violations() {
        // Zero performance channel variant of the delayed design.
        let doc = load_plant(
            r#"{"A": [[0, 1], [0, -3]], "B1": [[0.5], [0.5]], "B2": [[0], [1]],
                "C1": [[0, 0]], "C2": [[1, 0]], "D1": [[0]], "D2": [[0]],
                "K": [[-3]]}"#,
        )
        .unwrap();
        let gain = doc.gain().unwrap().clone();
        let (plant, gain) = doc.plant.as_perturbed(&gain).unwrap();
        let params = Thm2Params::new(10.0, 0.2, 0.1, 0.1, 0.1).unwrap();
        let prob = build_thm2(&plant, &gain, &params).unwrap();
        let res = solve_feasibility(&prob).unwrap();
        assert!(res.is_feasible());
        let cert = Certificate::new(
            TheoremTag::T2,
            0.2,
            0.1,
            0.1,
            0.1,
            Some(10.0),
            res.witness.unwrap(),
        )
        .unwrap();
        let mut cfg = SimConfig::new(
            TriggerPolicy::switching_et(0.2, 0.1, cert.omega().unwrap().clone()).unwrap(),
            Vec64::from_vec(vec![2.0, 0.0]),
            10.0,
        );
        cfg.dt = 1e-3;
        cfg.delay = DelayModel::Constant { eta: 0.05 };
        cfg.disturbance = DisturbanceSpec {
            w: SignalSpec::BandNoise {
                amplitude: 1.0,
                max_freq: 3.0,
                components: 4,
            },
            v: SignalSpec::Zero,
            bound: None,
        };
        let traj = run(&plant, &gain, &cfg).unwrap();
        let sup = traj.disturbance.bound;
        let rep = iss_check(&plant, &traj, &cert, sup).unwrap();
        assert!(rep.holds, "margin {}", rep.margin);

        // Feeding a disturbance 100x the declared bound must break it.
        let mut loud = cfg.clone();
        loud.disturbance.w = SignalSpec::BandNoise {
            amplitude: 100.0,
            max_freq: 3.0,
            components: 4,
        };
        let blown = run(&plant, &gain, &loud).unwrap();
        let lied = iss_check(&plant, &blown, &cert, sup).unwrap();
        assert!(!lied.holds, "margin {}", lied.margin);

        // Delta = 0 certificates are refused.
        let mut flat = cert.clone();
        flat.delta = 0.0;
        assert!(iss_check(&plant, &traj, &flat, sup).is_err());
    }

    #[test]
    fn remark1_periodic_certificate_also_validates() {
        // The simplified trigger-free variant certifies the same functional
        // with eps = 0; its witness must validate on a periodic run.
        let doc = load_plant(
            r#"{"A": [[0, 1], [0, -3]], "B": [[0], [1]], "C": [[1, 0]], "K": [[3]]}"#,
        )
        .unwrap();
        let gain = doc.gain().unwrap().clone();
        let simple = match doc.plant {
            crate::plant::LoadedPlant::Simple(ref p) => p.clone(),
            _ => unreachable!(),
        };
        let params = Thm1Params::new(1.1, 0.0, 0.001).unwrap();
        let prob = build_remark1(&simple, &gain, &params).unwrap();
        let res = solve_feasibility(&prob).unwrap();
        assert!(res.is_feasible());
        let mut vars = res.witness.unwrap();
        // The trigger-free problem has no comparison matrix; install the
        // zero matrix so the certificate shape is uniform.
        vars.entry("Om".into())
            .or_insert_with(|| Mat::zeros(1, 1));
        for name in ["Y1", "Y2", "Y3"] {
            vars.entry(name.into()).or_insert_with(|| Mat::zeros(2, 2));
        }
        let cert =
            Certificate::new(TheoremTag::T1, 1.1, 0.0, 0.001, 0.0, None, vars).unwrap();
        let (plant, pgain) = simple.promote(&gain).unwrap();
        let mut cfg = SimConfig::new(
            TriggerPolicy::periodic(1.1).unwrap(),
            Vec64::from_vec(vec![10.0, 0.0]),
            22.0,
        );
        cfg.dt = 1e-4;
        let traj = run(&plant, &pgain, &cfg).unwrap();
        let trace = eval_certificate_t1(&plant, &traj, &cert).unwrap();
        assert!(trace.max_handoff_gap <= 1e-6, "gap {}", trace.max_handoff_gap);
        assert!(trace.max_residual <= 1e-6, "residual {}", trace.max_residual);
    }
}
