//! Experiment descriptions: the JSON schema consumed by `reproduce` plus the
//! named presets and plant documents shipped with the binary.

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use evtc_core::plant::{load_plant, DelayModel, DisturbanceSpec, PlantDoc};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const PRESET_NAMES: [&str; 5] = [
    "example1",
    "example2",
    "example2-delay",
    "example3",
    "example3-hinf",
];

pub fn builtin_preset(name: &str) -> Option<&'static str> {
    match name {
        "example1" => Some(include_str!("../../../presets/example1.json")),
        "example2" => Some(include_str!("../../../presets/example2.json")),
        "example2-delay" => Some(include_str!("../../../presets/example2-delay.json")),
        "example3" => Some(include_str!("../../../presets/example3.json")),
        "example3-hinf" => Some(include_str!("../../../presets/example3-hinf.json")),
        _ => None,
    }
}

pub fn builtin_plant(name: &str) -> Option<&'static str> {
    match name {
        "example1" => Some(include_str!("../../../presets/plants/example1.json")),
        "example2" => Some(include_str!("../../../presets/plants/example2.json")),
        "example3" => Some(include_str!("../../../presets/plants/example3.json")),
        "example3-hinf" => Some(include_str!("../../../presets/plants/example3-hinf.json")),
        _ => None,
    }
}

/// Which feasibility certificate designs a row.
///
/// The command-line names follow the conditions they implement: `1` is the
/// switching trigger with a waiting time, `r1` the periodic event-trigger,
/// `2` the delayed perturbed loop, `delpar` the delay-partitioned periodic
/// certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
pub enum TheoremSel {
    #[serde(rename = "1")]
    #[value(name = "1")]
    Switching,
    #[serde(rename = "r1")]
    #[value(name = "r1")]
    PeriodicTrigger,
    #[serde(rename = "2")]
    #[value(name = "2")]
    Delayed,
    #[serde(rename = "delpar")]
    #[value(name = "delpar")]
    DelayPartitioned,
}

impl TheoremSel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Switching => "1",
            Self::PeriodicTrigger => "r1",
            Self::Delayed => "2",
            Self::DelayPartitioned => "delpar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerKind {
    Periodic,
    PeriodicEt,
    SwitchingEt,
    ContinuousEt,
}

impl TriggerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Periodic => "periodic",
            Self::PeriodicEt => "periodic-et",
            Self::SwitchingEt => "switching-et",
            Self::ContinuousEt => "continuous-et",
        }
    }
}

/// Reference targets a design row is compared against. Absent fields are
/// simply not checked; `info` rows report deviations without failing.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expect {
    pub h: Option<f64>,
    pub h_tol: Option<f64>,
    pub h_min: Option<f64>,
    pub sm: Option<f64>,
    pub sm_tol: Option<f64>,
    pub sm_rel_tol: Option<f64>,
    pub avg_period_min: Option<f64>,
    pub j_negative: bool,
    pub not_infeasible: bool,
    pub tstar_abs_max: Option<f64>,
    /// Report the comparison but do not count it toward the exit code.
    pub info: bool,
}

impl Expect {
    pub fn is_empty(&self) -> bool {
        self.h.is_none()
            && self.h_min.is_none()
            && self.sm.is_none()
            && self.avg_period_min.is_none()
            && !self.j_negative
            && !self.not_infeasible
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignRow {
    pub label: String,
    pub theorem: TheoremSel,
    pub trigger: TriggerKind,
    pub eps: f64,
    /// Fixed operating point; when absent the waiting time is maximized.
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub eta_m: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub expect: Expect,
    #[serde(default)]
    pub flags: Vec<String>,
}

/// Threshold sweep: maximize h on a grid, simulate each feasible pair, then
/// pick the pair with the minimum mean amount of sent measurements.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub label: String,
    pub theorem: TheoremSel,
    pub trigger: TriggerKind,
    pub eps: Vec<f64>,
    /// Extra passes that re-grid around the current best threshold.
    #[serde(default)]
    pub refine: u32,
    #[serde(default)]
    pub eta_m: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub expect_best_eps: Option<f64>,
    #[serde(default)]
    pub best_eps_tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum IcSet {
    /// Evenly spaced points on a circle in the (x1, x2) plane.
    Circle { count: usize, radius: f64 },
    Points { points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub t_f: f64,
    pub dt: f64,
    pub ics: IcSet,
    /// Explicit delay model; by default rows with eta_m > 0 draw random
    /// admissible delays up to eta_m and rows without delay use none.
    #[serde(default)]
    pub delay: Option<DelayModel>,
    /// Disturbance suite; every row is simulated once per member. Empty
    /// means one undisturbed member.
    #[serde(default)]
    pub disturbances: Vec<DisturbanceSpec>,
}

/// Cross-row comparisons evaluated on the aggregated metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Check {
    /// Mean SM strictly increases along the listed rows.
    SmOrder { rows: Vec<String> },
    /// SM ratios numerator/denominator approach one along the listed pairs:
    /// nondecreasing within `monotone_slack`, final within `final_max_dev`
    /// of one.
    RatioToOne {
        pairs: Vec<(String, String)>,
        monotone_slack: f64,
        final_max_dev: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantRef {
    Named(String),
    Inline(serde_json::Value),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub plant: PlantRef,
    pub delta: f64,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub eta_m: Option<f64>,
    #[serde(default)]
    pub rows: Vec<DesignRow>,
    #[serde(default)]
    pub sweeps: Vec<SweepBlock>,
    #[serde(default)]
    pub checks: Vec<Check>,
    pub sim: SimBlock,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            bail!("experiment name is empty");
        }
        if self.rows.is_empty() && self.sweeps.is_empty() {
            bail!("experiment {} declares no rows and no sweeps", self.name);
        }
        if !(self.sim.t_f > 0.0 && self.sim.dt > 0.0) {
            bail!("simulation block needs positive t_f and dt");
        }
        match &self.sim.ics {
            IcSet::Circle { count, radius } => {
                if *count == 0 || !(*radius > 0.0) {
                    bail!("circle initial conditions need count > 0 and radius > 0");
                }
            }
            IcSet::Points { points } => {
                if points.is_empty() || points.iter().any(|p| p.is_empty()) {
                    bail!("point initial conditions are empty");
                }
            }
        }
        for s in &self.sweeps {
            if s.eps.is_empty() {
                bail!("sweep {} has an empty threshold grid", s.label);
            }
        }
        let mut labels: Vec<&str> = self.rows.iter().map(|r| r.label.as_str()).collect();
        labels.extend(self.sweeps.iter().map(|s| s.label.as_str()));
        let mut seen = std::collections::BTreeSet::new();
        for l in labels {
            if !seen.insert(l) {
                bail!("duplicate row label {l}");
            }
        }
        Ok(())
    }

    pub fn resolve_plant(&self, base_dir: Option<&Path>) -> Result<PlantDoc> {
        match &self.plant {
            PlantRef::Inline(v) => {
                load_plant(&v.to_string()).context("parsing inline plant document")
            }
            PlantRef::Named(name) => load_plant_ref(name, base_dir),
        }
    }
}

/// Resolve a plant argument: a shipped plant name first, then a file path.
pub fn load_plant_ref(arg: &str, base_dir: Option<&Path>) -> Result<PlantDoc> {
    if let Some(text) = builtin_plant(arg) {
        return load_plant(text).with_context(|| format!("built-in plant {arg}"));
    }
    let path = match base_dir {
        Some(d) if Path::new(arg).is_relative() => d.join(arg),
        _ => PathBuf::from(arg),
    };
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading plant document {}", path.display()))?;
    load_plant(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Resolve a preset argument: a shipped preset name first, then a file path.
/// Returns the parsed spec and the directory for relative references.
pub fn load_preset(arg: &str) -> Result<(ExperimentSpec, Option<PathBuf>)> {
    let (text, base) = match builtin_preset(arg) {
        Some(t) => (t.to_string(), None),
        None => {
            let path = PathBuf::from(arg);
            let text = std::fs::read_to_string(&path).with_context(|| {
                format!(
                    "no preset named {arg} (known: {}) and no such file",
                    PRESET_NAMES.join(", ")
                )
            })?;
            (text, path.parent().map(Path::to_path_buf))
        }
    };
    let spec: ExperimentSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing experiment {arg}"))?;
    spec.validate()?;
    Ok((spec, base))
}
