//! Plant, gain, trigger, delay, and disturbance data objects.
//!
//! Two plant classes are supported. [`SimplePlant`] is the undisturbed model
//!
//! ```text
//!   x' = A x + B u,   y = C x,   u = -K y(s_k)   (closed loop A - B K C)
//! ```
//!
//! and [`PerturbedPlant`] is the disturbed model with measurement noise
//!
//! ```text
//!   x' = A x + B1 w + B2 u,   y = C2 x + D2 v,   z = C1 x + D1 u,
//!   u = +K y(s_k)
//! ```
//!
//! The feedback sign differs between the two classes on purpose: each keeps
//! the convention of the analysis it feeds. [`SimplePlant::promote`] embeds
//! the first class into the second and negates the gain so the closed-loop
//! dynamics are preserved exactly.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::Mat;

#[derive(Debug, thiserror::Error)]
pub enum PlantError {
    #[error("json: {0}")]
    Json(String),
    #[error("matrix {0}: ragged rows")]
    Ragged(String),
    #[error("matrix {0}: non-finite entry")]
    NonFinite(String),
    #[error("{0}")]
    Shape(String),
    #[error("missing key {0}")]
    Missing(String),
    #[error("invalid value: {0}")]
    Invalid(String),
}

fn check_finite(name: &str, m: &Mat) -> Result<(), PlantError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PlantError::NonFinite(name.to_string()))
    }
}

/// Undisturbed linear plant with output feedback through a network.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplePlant {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
}

impl SimplePlant {
    pub fn new(a: Mat, b: Mat, c: Mat) -> Result<Self, PlantError> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(PlantError::Shape(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(PlantError::Shape(format!(
                "B must be {}xm with m >= 1, got {}x{}",
                n,
                b.nrows(),
                b.ncols()
            )));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(PlantError::Shape(format!(
                "C must be lx{} with l >= 1, got {}x{}",
                n,
                c.nrows(),
                c.ncols()
            )));
        }
        check_finite("A", &a)?;
        check_finite("B", &b)?;
        check_finite("C", &c)?;
        Ok(Self { a, b, c })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn l(&self) -> usize {
        self.c.nrows()
    }

    /// Closed-loop matrix A - B K C.
    pub fn closed_loop(&self, gain: &Gain) -> Result<Mat, PlantError> {
        gain.check_dims(self.m(), self.l())?;
        Ok(&self.a - &self.b * &gain.k * &self.c)
    }

    /// Embed into the perturbed form with zero-width disturbance and
    /// performance channels: B2 = B, C2 = C, and the gain negated so that
    /// u = +K'y reproduces u = -Ky.
    pub fn promote(&self, gain: &Gain) -> Result<(PerturbedPlant, Gain), PlantError> {
        gain.check_dims(self.m(), self.l())?;
        let n = self.n();
        let plant = PerturbedPlant::new(
            self.a.clone(),
            DMatrix::zeros(n, 0),
            self.b.clone(),
            DMatrix::zeros(0, n),
            self.c.clone(),
            DMatrix::zeros(0, self.m()),
            DMatrix::zeros(self.l(), 0),
        )?;
        Ok((plant, Gain::new(-&gain.k)?))
    }
}

/// Disturbed plant with controlled output z and measurement noise v.
///
/// Disturbance and performance channels may have zero width; a zero-width
/// channel drops out of every formula without special cases.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedPlant {
    pub a: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub c1: Mat,
    pub c2: Mat,
    pub d1: Mat,
    pub d2: Mat,
}

impl PerturbedPlant {
    pub fn new(
        a: Mat,
        b1: Mat,
        b2: Mat,
        c1: Mat,
        c2: Mat,
        d1: Mat,
        d2: Mat,
    ) -> Result<Self, PlantError> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(PlantError::Shape(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let m = b2.ncols();
        let l = c2.nrows();
        if b1.nrows() != n {
            return Err(PlantError::Shape(format!("B1 must have {n} rows")));
        }
        if b2.nrows() != n || m == 0 {
            return Err(PlantError::Shape(format!(
                "B2 must be {n}xm with m >= 1"
            )));
        }
        if c1.ncols() != n && c1.nrows() != 0 {
            return Err(PlantError::Shape(format!("C1 must have {n} columns")));
        }
        if c2.ncols() != n || l == 0 {
            return Err(PlantError::Shape(format!(
                "C2 must be lx{n} with l >= 1"
            )));
        }
        let nz = c1.nrows();
        if d1.nrows() != nz || d1.ncols() != m {
            return Err(PlantError::Shape(format!(
                "D1 must be {}x{}, got {}x{}",
                nz,
                m,
                d1.nrows(),
                d1.ncols()
            )));
        }
        if d2.nrows() != l {
            return Err(PlantError::Shape(format!("D2 must have {l} rows")));
        }
        for (name, mat) in [
            ("A", &a),
            ("B1", &b1),
            ("B2", &b2),
            ("C1", &c1),
            ("C2", &c2),
            ("D1", &d1),
            ("D2", &d2),
        ] {
            check_finite(name, mat)?;
        }
        // C1 with zero rows may carry 0 columns from an absent key; normalize.
        let c1 = if c1.nrows() == 0 {
            DMatrix::zeros(0, n)
        } else {
            c1
        };
        Ok(Self {
            a,
            b1,
            b2,
            c1,
            c2,
            d1,
            d2,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_w(&self) -> usize {
        self.b1.ncols()
    }
    pub fn m(&self) -> usize {
        self.b2.ncols()
    }
    pub fn n_z(&self) -> usize {
        self.c1.nrows()
    }
    pub fn l(&self) -> usize {
        self.c2.nrows()
    }
    pub fn n_v(&self) -> usize {
        self.d2.ncols()
    }

    /// Closed-loop matrix A + B2 K C2 (delay-free limit).
    pub fn closed_loop(&self, gain: &Gain) -> Result<Mat, PlantError> {
        gain.check_dims(self.m(), self.l())?;
        Ok(&self.a + &self.b2 * &gain.k * &self.c2)
    }
}

/// Static output-feedback gain.
#[derive(Debug, Clone, PartialEq)]
pub struct Gain {
    pub k: Mat,
}

impl Gain {
    pub fn new(k: Mat) -> Result<Self, PlantError> {
        if k.nrows() == 0 || k.ncols() == 0 {
            return Err(PlantError::Shape("K must be nonempty".into()));
        }
        check_finite("K", &k)?;
        Ok(Self { k })
    }

    pub fn check_dims(&self, m: usize, l: usize) -> Result<(), PlantError> {
        if self.k.nrows() != m || self.k.ncols() != l {
            return Err(PlantError::Shape(format!(
                "K must be {}x{}, got {}x{}",
                m,
                l,
                self.k.nrows(),
                self.k.ncols()
            )));
        }
        Ok(())
    }
}

/// True iff A - B K C is Hurwitz (all eigenvalue real parts negative).
pub fn closed_loop_hurwitz(plant: &SimplePlant, gain: &Gain) -> Result<bool, PlantError> {
    let acl = plant.closed_loop(gain)?;
    Ok(max_real_eigenvalue(&acl) < 0.0)
}

/// Largest real part among the eigenvalues of a real square matrix.
pub fn max_real_eigenvalue(m: &Mat) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

// ---------------------------------------------------------------------------
// Trigger policies
// ---------------------------------------------------------------------------

/// Sampling/trigger rule executed on the sensor side.
///
/// All event triggers share the quadratic comparison
/// `(y(s) - y(s_k))' W (y(s) - y(s_k))  vs  eps * y(s)' W y(s)`.
#[derive(Debug, Clone)]
pub enum TriggerPolicy {
    /// Send every h seconds.
    Periodic { h: f64 },
    /// Monitor continuously, send when the comparison holds (>=).
    ContinuousEt { eps: f64, omega: Mat },
    /// Check only at multiples of h past the last send; send on strict >.
    PeriodicEt { h: f64, eps: f64, omega: Mat },
    /// Wait h after each send, then monitor continuously; send on >=.
    SwitchingEt { h: f64, eps: f64, omega: Mat },
}

impl TriggerPolicy {
    pub fn periodic(h: f64) -> Result<Self, PlantError> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(PlantError::Invalid(format!("waiting time h = {h}")));
        }
        Ok(Self::Periodic { h })
    }

    pub fn continuous_et(eps: f64, omega: Mat) -> Result<Self, PlantError> {
        let omega = validate_trigger_weight(eps, omega)?;
        Ok(Self::ContinuousEt { eps, omega })
    }

    pub fn periodic_et(h: f64, eps: f64, omega: Mat) -> Result<Self, PlantError> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(PlantError::Invalid(format!("waiting time h = {h}")));
        }
        let omega = validate_trigger_weight(eps, omega)?;
        Ok(Self::PeriodicEt { h, eps, omega })
    }

    pub fn switching_et(h: f64, eps: f64, omega: Mat) -> Result<Self, PlantError> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(PlantError::Invalid(format!("waiting time h = {h}")));
        }
        let omega = validate_trigger_weight(eps, omega)?;
        Ok(Self::SwitchingEt { h, eps, omega })
    }

    /// Waiting time between a send and the next time the rule may fire
    /// (zero for the continuous trigger).
    pub fn waiting_time(&self) -> f64 {
        match self {
            Self::Periodic { h }
            | Self::PeriodicEt { h, .. }
            | Self::SwitchingEt { h, .. } => *h,
            Self::ContinuousEt { .. } => 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Periodic { .. } => "periodic",
            Self::ContinuousEt { .. } => "continuous-et",
            Self::PeriodicEt { .. } => "periodic-et",
            Self::SwitchingEt { .. } => "switching-et",
        }
    }
}

/// Symmetrize the trigger weight and insist on eps >= 0 and W >= 0.
fn validate_trigger_weight(eps: f64, omega: Mat) -> Result<Mat, PlantError> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(PlantError::Invalid(format!("trigger threshold eps = {eps}")));
    }
    if omega.nrows() != omega.ncols() || omega.nrows() == 0 {
        return Err(PlantError::Shape("trigger weight must be square".into()));
    }
    check_finite("Omega", &omega)?;
    let sym = (&omega + omega.transpose()) * 0.5;
    let scale = sym.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let min_eig = sym
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v));
    if min_eig < -1e-10 * scale {
        return Err(PlantError::Invalid(format!(
            "trigger weight not positive semidefinite (min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(sym)
}

// ---------------------------------------------------------------------------
// Network delays
// ---------------------------------------------------------------------------

/// How transmission delays eta_k are produced.
///
/// Admissibility requires arrival times t_k = s_k + eta_k to be nondecreasing,
/// which constrains eta_{k+1} >= eta_k - (s_{k+1} - s_k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DelayModel {
    Zero,
    Constant { eta: f64 },
    /// Uniform draw from the admissible interval [max(0, eta_k - ds), eta_max].
    Random { eta_max: f64 },
}

impl DelayModel {
    pub fn validate(&self) -> Result<(), PlantError> {
        match self {
            Self::Zero => Ok(()),
            Self::Constant { eta } if *eta >= 0.0 && eta.is_finite() => Ok(()),
            Self::Constant { eta } => Err(PlantError::Invalid(format!("delay eta = {eta}"))),
            Self::Random { eta_max } if *eta_max >= 0.0 && eta_max.is_finite() => Ok(()),
            Self::Random { eta_max } => {
                Err(PlantError::Invalid(format!("delay bound eta_max = {eta_max}")))
            }
        }
    }

    pub fn eta_max(&self) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Constant { eta } => *eta,
            Self::Random { eta_max } => *eta_max,
        }
    }

    pub fn first<R: rand::Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Constant { eta } => *eta,
            Self::Random { eta_max } => {
                if *eta_max > 0.0 {
                    rng.random_range(0.0..=*eta_max)
                } else {
                    0.0
                }
            }
        }
    }

    /// Delay for the next packet given the previous delay and send spacing.
    pub fn next<R: rand::Rng>(&self, rng: &mut R, prev_eta: f64, ds: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Constant { eta } => *eta,
            Self::Random { eta_max } => {
                let lo = (prev_eta - ds).max(0.0);
                if *eta_max > lo {
                    rng.random_range(lo..=*eta_max)
                } else {
                    *eta_max
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Disturbance signals
// ---------------------------------------------------------------------------

/// Declarative description of one disturbance channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SignalSpec {
    Zero,
    /// amplitude * 1(t >= at), one entry per channel component.
    Step { amplitude: Vec<f64>, at: f64 },
    /// amplitude * exp(-decay t) * sin(freq t), per component.
    DecayingSine {
        amplitude: Vec<f64>,
        decay: f64,
        freq: f64,
    },
    /// Sum of `components` sinusoids with random frequencies in (0, max_freq]
    /// and random phases; component amplitudes sum to `amplitude`, so the
    /// sup norm is bounded by `amplitude` per channel entry.
    BandNoise {
        amplitude: f64,
        max_freq: f64,
        components: usize,
    },
}

impl SignalSpec {
    /// Euclidean sup-norm bound for a channel of width `dim`.
    pub fn sup_bound(&self, dim: usize) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Step { amplitude, .. } | Self::DecayingSine { amplitude, .. } => {
                amplitude.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            Self::BandNoise { amplitude, .. } => amplitude.abs() * (dim as f64).sqrt(),
        }
    }

    /// Instantiate a callable signal of width `dim`. Random coefficients for
    /// band-limited noise are drawn once here, deterministically from `seed`.
    pub fn realize(&self, dim: usize, seed: u64) -> Result<Signal, PlantError> {
        match self {
            Self::Zero => Ok(Signal::Zero { dim }),
            Self::Step { amplitude, at } => {
                if amplitude.len() != dim {
                    return Err(PlantError::Shape(format!(
                        "step amplitude has {} entries, channel width is {dim}",
                        amplitude.len()
                    )));
                }
                Ok(Signal::Step {
                    amplitude: DVector::from_column_slice(amplitude),
                    at: *at,
                })
            }
            Self::DecayingSine {
                amplitude,
                decay,
                freq,
            } => {
                if amplitude.len() != dim {
                    return Err(PlantError::Shape(format!(
                        "sine amplitude has {} entries, channel width is {dim}",
                        amplitude.len()
                    )));
                }
                if !decay.is_finite() || !freq.is_finite() {
                    return Err(PlantError::Invalid("sine parameters must be finite".into()));
                }
                Ok(Signal::DecayingSine {
                    amplitude: DVector::from_column_slice(amplitude),
                    decay: *decay,
                    freq: *freq,
                })
            }
            Self::BandNoise {
                amplitude,
                max_freq,
                components,
            } => {
                if *components == 0 || !(*max_freq > 0.0) {
                    return Err(PlantError::Invalid(
                        "band noise needs components >= 1 and max_freq > 0".into(),
                    ));
                }
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let per = amplitude.abs() / *components as f64;
                let mut terms = Vec::with_capacity(dim);
                for _ in 0..dim {
                    let mut row = Vec::with_capacity(*components);
                    for _ in 0..*components {
                        let freq = rng.random_range(0.0..*max_freq) + *max_freq * 1e-6;
                        let phase = rng.random_range(0.0..std::f64::consts::TAU);
                        row.push((per, freq, phase));
                    }
                    terms.push(row);
                }
                Ok(Signal::Band { dim, terms })
            }
        }
    }
}

/// Realized disturbance signal, evaluable at arbitrary times.
#[derive(Debug, Clone)]
pub enum Signal {
    Zero {
        dim: usize,
    },
    Step {
        amplitude: DVector<f64>,
        at: f64,
    },
    DecayingSine {
        amplitude: DVector<f64>,
        decay: f64,
        freq: f64,
    },
    Band {
        dim: usize,
        terms: Vec<Vec<(f64, f64, f64)>>,
    },
}

impl Signal {
    pub fn dim(&self) -> usize {
        match self {
            Self::Zero { dim } | Self::Band { dim, .. } => *dim,
            Self::Step { amplitude, .. } | Self::DecayingSine { amplitude, .. } => amplitude.len(),
        }
    }

    pub fn at(&self, t: f64) -> DVector<f64> {
        match self {
            Self::Zero { dim } => DVector::zeros(*dim),
            Self::Step { amplitude, at } => {
                if t >= *at {
                    amplitude.clone()
                } else {
                    DVector::zeros(amplitude.len())
                }
            }
            Self::DecayingSine {
                amplitude,
                decay,
                freq,
            } => amplitude * ((-decay * t).exp() * (freq * t).sin()),
            Self::Band { dim, terms } => DVector::from_iterator(
                *dim,
                terms.iter().map(|row| {
                    row.iter()
                        .map(|(a, w, p)| a * (w * t + p).sin())
                        .sum::<f64>()
                }),
            ),
        }
    }
}

/// Disturbance pair (w, v) with an optional declared Euclidean sup bound on
/// the stacked vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub w: SignalSpec,
    pub v: SignalSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

impl DisturbanceSpec {
    pub fn zero() -> Self {
        Self {
            w: SignalSpec::Zero,
            v: SignalSpec::Zero,
            bound: None,
        }
    }

    pub fn realize(&self, n_w: usize, n_v: usize, seed: u64) -> Result<Disturbance, PlantError> {
        let combined = (self.w.sup_bound(n_w).powi(2) + self.v.sup_bound(n_v).powi(2)).sqrt();
        if let Some(b) = self.bound {
            if !(b >= 0.0) || !b.is_finite() {
                return Err(PlantError::Invalid(format!("disturbance bound {b}")));
            }
            if combined > b * (1.0 + 1e-12) {
                return Err(PlantError::Invalid(format!(
                    "signals exceed declared bound: sup {combined} > {b}"
                )));
            }
        }
        Ok(Disturbance {
            w: self.w.realize(n_w, seed ^ 0x77)?,
            v: self.v.realize(n_v, seed ^ 0x76)?,
            bound: self.bound.unwrap_or(combined),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Disturbance {
    pub w: Signal,
    pub v: Signal,
    /// Euclidean sup bound for the stacked (w, v) vector.
    pub bound: f64,
}

// ---------------------------------------------------------------------------
// JSON plant documents
// ---------------------------------------------------------------------------

/// A plant document: either {A, B, C} or {A, B1, B2, C1, C2, D1, D2},
/// optionally with a gain K. Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedPlant {
    Simple(SimplePlant),
    Perturbed(PerturbedPlant),
}

impl LoadedPlant {
    pub fn n(&self) -> usize {
        match self {
            Self::Simple(p) => p.n(),
            Self::Perturbed(p) => p.n(),
        }
    }

    pub fn l(&self) -> usize {
        match self {
            Self::Simple(p) => p.l(),
            Self::Perturbed(p) => p.l(),
        }
    }

    pub fn m(&self) -> usize {
        match self {
            Self::Simple(p) => p.m(),
            Self::Perturbed(p) => p.m(),
        }
    }

    /// The perturbed form, promoting (and sign-adjusting) if needed.
    pub fn as_perturbed(&self, gain: &Gain) -> Result<(PerturbedPlant, Gain), PlantError> {
        match self {
            Self::Simple(p) => p.promote(gain),
            Self::Perturbed(p) => Ok((p.clone(), gain.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantDoc {
    pub plant: LoadedPlant,
    pub gain: Option<Gain>,
}

impl PlantDoc {
    pub fn gain(&self) -> Result<&Gain, PlantError> {
        self.gain
            .as_ref()
            .ok_or_else(|| PlantError::Missing("K".into()))
    }
}

pub(crate) fn parse_matrix(name: &str, rows: &[Vec<f64>]) -> Result<Mat, PlantError> {
    if rows.is_empty() {
        return Err(PlantError::Shape(format!("matrix {name} is empty")));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PlantError::Ragged(name.to_string()));
    }
    if cols == 0 {
        return Err(PlantError::Shape(format!("matrix {name} has empty rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let m = DMatrix::from_row_slice(rows.len(), cols, &flat);
    check_finite(name, &m)?;
    Ok(m)
}

pub(crate) fn matrix_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Parse a plant document from JSON text.
pub fn load_plant(source: &str) -> Result<PlantDoc, PlantError> {
    let raw: BTreeMap<String, serde_json::Value> =
        serde_json::from_str(source).map_err(|e| PlantError::Json(e.to_string()))?;
    let get = |key: &str| -> Result<Option<Mat>, PlantError> {
        match raw.get(key) {
            None => Ok(None),
            Some(v) => {
                let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone())
                    .map_err(|e| PlantError::Json(format!("{key}: {e}")))?;
                parse_matrix(key, &rows).map(Some)
            }
        }
    };

    let a = get("A")?.ok_or_else(|| PlantError::Missing("A".into()))?;
    let n = a.nrows();
    let gain = match get("K")? {
        Some(k) => Some(Gain::new(k)?),
        None => None,
    };

    let simple_form = raw.contains_key("B") || raw.contains_key("C");
    let perturbed_form = ["B1", "B2", "C1", "C2", "D1", "D2"]
        .iter()
        .any(|k| raw.contains_key(*k));
    if simple_form && perturbed_form {
        return Err(PlantError::Invalid(
            "document mixes {B, C} with {B1, B2, C1, C2, D1, D2}".into(),
        ));
    }

    let plant = if perturbed_form {
        let b2 = get("B2")?.ok_or_else(|| PlantError::Missing("B2".into()))?;
        let c2 = get("C2")?.ok_or_else(|| PlantError::Missing("C2".into()))?;
        let m = b2.ncols();
        let l = c2.nrows();
        let b1 = get("B1")?.unwrap_or_else(|| DMatrix::zeros(n, 0));
        let c1 = get("C1")?.unwrap_or_else(|| DMatrix::zeros(0, n));
        let d1 = get("D1")?.unwrap_or_else(|| DMatrix::zeros(c1.nrows(), m));
        let d2 = get("D2")?.unwrap_or_else(|| DMatrix::zeros(l, 0));
        LoadedPlant::Perturbed(PerturbedPlant::new(a, b1, b2, c1, c2, d1, d2)?)
    } else {
        let b = get("B")?.ok_or_else(|| PlantError::Missing("B".into()))?;
        let c = get("C")?.ok_or_else(|| PlantError::Missing("C".into()))?;
        LoadedPlant::Simple(SimplePlant::new(a, b, c)?)
    };

    if let Some(g) = &gain {
        let (m, l) = match &plant {
            LoadedPlant::Simple(p) => (p.m(), p.l()),
            LoadedPlant::Perturbed(p) => (p.m(), p.l()),
        };
        g.check_dims(m, l)?;
    }

    Ok(PlantDoc { plant, gain })
}

/// Serialize a plant document back to the JSON layout accepted by
/// [`load_plant`]. Zero-width channels are omitted.
pub fn plant_to_json(doc: &PlantDoc) -> String {
    let mut map = serde_json::Map::new();
    let put = |map: &mut serde_json::Map<String, serde_json::Value>, key: &str, m: &Mat| {
        if m.nrows() > 0 && m.ncols() > 0 {
            map.insert(key.into(), serde_json::json!(matrix_to_rows(m)));
        }
    };
    match &doc.plant {
        LoadedPlant::Simple(p) => {
            put(&mut map, "A", &p.a);
            put(&mut map, "B", &p.b);
            put(&mut map, "C", &p.c);
        }
        LoadedPlant::Perturbed(p) => {
            put(&mut map, "A", &p.a);
            put(&mut map, "B1", &p.b1);
            put(&mut map, "B2", &p.b2);
            put(&mut map, "C1", &p.c1);
            put(&mut map, "C2", &p.c2);
            put(&mut map, "D1", &p.d1);
            put(&mut map, "D2", &p.d2);
        }
    }
    if let Some(g) = &doc.gain {
        put(&mut map, "K", &g.k);
    }
    serde_json::to_string_pretty(&serde_json::Value::Object(map)).unwrap()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    pub const EXAMPLE1: &str = r#"{
        "A": [[0, 1], [-2, 3]],
        "B": [[0], [1]],
        "C": [[1, 0], [0, 1]],
        "K": [[-1, 4]]
    }"#;

    pub const EXAMPLE2: &str = r#"{
        "A": [[0, 1], [0, -3]],
        "B": [[0], [1]],
        "C": [[1, 0]],
        "K": [[3]]
    }"#;

    fn simple(doc: &PlantDoc) -> &SimplePlant {
        match &doc.plant {
            LoadedPlant::Simple(p) => p,
            _ => panic!("expected simple plant"),
        }
    }

    #[test]
    fn parses_small_output_feedback_example() {
        let doc = load_plant(EXAMPLE1).unwrap();
        let p = simple(&doc);
        assert_eq!((p.n(), p.m(), p.l()), (2, 1, 2));
        let acl = p.closed_loop(doc.gain().unwrap()).unwrap();
        // A - B K C = [[0, 1], [-1, -1]]
        assert_relative_eq!(acl[(1, 0)], -1.0);
        assert_relative_eq!(acl[(1, 1)], -1.0);
        assert!(closed_loop_hurwitz(p, doc.gain().unwrap()).unwrap());
    }

    #[test]
    fn open_loop_unstable_examples() {
        for src in [EXAMPLE1, EXAMPLE2] {
            let doc = load_plant(src).unwrap();
            let p = simple(&doc);
            // K = 0 leaves the open-loop matrix, which is not Hurwitz here.
            let zero = Gain::new(Mat::zeros(p.m(), p.l())).unwrap();
            assert!(!closed_loop_hurwitz(p, &zero).unwrap());
        }
    }

    /// Analytic 2x2 oracle: for [[a,b],[c,d]] the eigenvalue real parts are
    /// tr/2 when the discriminant is negative, else (tr +- sqrt(disc))/2.
    fn max_re_2x2(m: &Mat) -> f64 {
        let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
        let tr = a + d;
        let disc = tr * tr - 4.0 * (a * d - b * c);
        if disc < 0.0 {
            tr / 2.0
        } else {
            (tr + disc.sqrt()) / 2.0
        }
    }

    #[test]
    fn hurwitz_matches_analytic_2x2_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        use rand::RngExt;
        for _ in 0..500 {
            let m = Mat::from_fn(2, 2, |_, _| rng.random_range(-5.0..5.0));
            let got = max_real_eigenvalue(&m);
            let want = max_re_2x2(&m);
            assert_relative_eq!(got, want, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn rejects_ragged_rows() {
        let src = r#"{"A": [[0, 1], [2]], "B": [[0], [1]], "C": [[1, 0]]}"#;
        assert!(matches!(load_plant(src), Err(PlantError::Ragged(_))));
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let src = r#"{"A": [[0, 1], [-2, 3]], "B": [[0]], "C": [[1, 0]]}"#;
        assert!(matches!(load_plant(src), Err(PlantError::Shape(_))));
        let src = r#"{"A": [[0, 1], [-2, 3]], "B": [[0], [1]], "C": [[1, 0]], "K": [[1, 2]]}"#;
        assert!(matches!(load_plant(src), Err(PlantError::Shape(_))));
    }

    #[test]
    fn rejects_non_finite() {
        let src = r#"{"A": [[0, 1], [-2, 1e999]], "B": [[0], [1]], "C": [[1, 0]]}"#;
        assert!(load_plant(src).is_err());
    }

    #[test]
    fn rejects_mixed_forms() {
        let src = r#"{"A": [[1]], "B": [[1]], "C": [[1]], "B2": [[1]], "C2": [[1]]}"#;
        assert!(matches!(load_plant(src), Err(PlantError::Invalid(_))));
    }

    #[test]
    fn round_trips_through_json() {
        for src in [EXAMPLE1, EXAMPLE2] {
            let doc = load_plant(src).unwrap();
            let doc2 = load_plant(&plant_to_json(&doc)).unwrap();
            assert_eq!(doc, doc2);
        }
    }

    #[test]
    fn promotion_preserves_dimensions_and_flips_gain() {
        let doc = load_plant(EXAMPLE2).unwrap();
        let p = simple(&doc);
        let (pp, g2) = p.promote(doc.gain().unwrap()).unwrap();
        assert_eq!((pp.n(), pp.n_w(), pp.n_z(), pp.l(), pp.n_v()), (2, 0, 0, 1, 0));
        assert_eq!(g2.k[(0, 0)], -3.0);
        // same closed loop through either convention
        let acl_simple = p.closed_loop(doc.gain().unwrap()).unwrap();
        let acl_pert = pp.closed_loop(&g2).unwrap();
        assert_relative_eq!((acl_simple - acl_pert).norm(), 0.0);
    }

    #[test]
    fn trigger_weight_symmetrized_and_checked() {
        let w = Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
        match TriggerPolicy::switching_et(0.5, 0.1, w).unwrap() {
            TriggerPolicy::SwitchingEt { omega, .. } => {
                assert_relative_eq!(omega[(0, 1)], 0.1);
                assert_relative_eq!(omega[(1, 0)], 0.1);
            }
            _ => unreachable!(),
        }
        let neg = Mat::from_row_slice(1, 1, &[-1.0]);
        assert!(TriggerPolicy::switching_et(0.5, 0.1, neg).is_err());
        assert!(TriggerPolicy::periodic(0.0).is_err());
        let id = Mat::identity(1, 1);
        assert!(TriggerPolicy::switching_et(0.1, -0.5, id).is_err());
    }

    #[test]
    fn delays_keep_arrivals_ordered() {
        let model = DelayModel::Random { eta_max: 0.4 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        use rand::RngExt;
        let mut eta = model.first(&mut rng);
        let mut s = 0.0;
        for _ in 0..10_000 {
            let ds = rng.random_range(0.05..0.9);
            let eta_next = model.next(&mut rng, eta, ds);
            let (t_prev, t_next) = (s + eta, s + ds + eta_next);
            assert!(
                t_next >= t_prev - 1e-12,
                "arrivals out of order: {t_prev} then {t_next}"
            );
            assert!((0.0..=0.4 + 1e-12).contains(&eta_next));
            s += ds;
            eta = eta_next;
        }
    }

    #[test]
    fn band_noise_respects_sup_bound() {
        let spec = SignalSpec::BandNoise {
            amplitude: 2.0,
            max_freq: 5.0,
            components: 8,
        };
        let sig = spec.realize(3, 99).unwrap();
        for i in 0..2000 {
            let t = i as f64 * 0.01;
            let v = sig.at(t);
            for e in v.iter() {
                assert!(e.abs() <= 2.0 + 1e-12);
            }
            assert!(v.norm() <= spec.sup_bound(3) + 1e-12);
        }
    }

    #[test]
    fn disturbance_bound_validated() {
        let spec = DisturbanceSpec {
            w: SignalSpec::Step {
                amplitude: vec![3.0],
                at: 0.0,
            },
            v: SignalSpec::Zero,
            bound: Some(1.0),
        };
        assert!(spec.realize(1, 0, 0).is_err());
        let ok = DisturbanceSpec {
            bound: Some(4.0),
            ..spec
        };
        assert!(ok.realize(1, 0, 0).is_ok());
    }
}
