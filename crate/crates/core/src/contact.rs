//! Elastomer plates, Hunt–Crossley contact and synthetic tap transients.
//!
//! A free stylus strikes a plate carried by the device end-effector. The
//! plate surface rides on the virtual wall, so the rendered stiffness is
//! felt through the plate; the transient itself is shaped by the plate.

use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::Compensator;
use crate::device::{self, DeviceError, DeviceParams, DeviceState};
use crate::seed;
use crate::signal::{SignalMeta, TapSignal};

/// Poisson ratio of a nearly incompressible elastomer.
pub const POISSON: f64 = 0.48;
/// Damping factor at the reference modulus (s/m).
pub const LAMBDA0: f64 = 20.0;
/// Reference modulus for the damping law (Pa).
pub const E_REF: f64 = 40e3;
/// Hertz exponent.
pub const HERTZ_EXPONENT: f64 = 1.5;
/// Stiffening of a finite layer, `1 + THICKNESS_COEFF·R/h`.
pub const THICKNESS_COEFF: f64 = 0.25;
/// Contact integration steps per output sample.
pub const CONTACT_SUBSTEPS: u32 = 10;
/// Free flight recorded before first contact (s).
pub const PRE_ROLL: f64 = 0.5e-3;
/// Longest contact accepted before giving up (s).
pub const MAX_CONTACT: f64 = 1.0;
/// Rendered stiffness range used in the experiments (N/m).
pub const K_RANGE: (f64, f64) = (200.0, 2000.0);

#[derive(Debug, Error)]
pub enum ContactError {
    #[error("shore value {0} outside (0, 100)")]
    Domain(f64),
    #[error("degenerate contact: {0}")]
    Degenerate(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(
        "contact integration diverged at t = {t:.6} s (penetration {penetration}, force {force})"
    )]
    Diverged {
        t: f64,
        penetration: f64,
        force: f64,
    },
    #[error("stylus did not separate within {0} s")]
    NoSeparation(f64),
    #[error("unknown plate {0:?}")]
    UnknownPlate(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ShoreScale {
    OO,
    A,
    D,
}

impl std::fmt::Display for ShoreScale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShoreScale::OO => "OO",
            ShoreScale::A => "A",
            ShoreScale::D => "D",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateSpec {
    pub shore_scale: ShoreScale,
    pub shore_value: f64,
    /// Plate thickness (m).
    pub thickness: f64,
    pub label: String,
}

impl PlateSpec {
    /// Durometer designation such as `60A`.
    pub fn designation(&self) -> String {
        format!("{}{}", self.shore_value, self.shore_scale)
    }
}

#[derive(Debug, Deserialize)]
struct PlateFile {
    plates: Vec<PlateEntry>,
    selected: Vec<Selection>,
}

#[derive(Debug, Deserialize)]
struct PlateEntry {
    label: String,
    shore_scale: ShoreScale,
    shore_value: f64,
    thickness: f64,
}

#[derive(Debug, Deserialize)]
struct Selection {
    label: String,
    plate: String,
}

#[derive(Debug, Deserialize)]
struct DurometerFile {
    oo_to_a: Vec<(f64, f64)>,
    d_to_a: Vec<(f64, f64)>,
}

fn plate_file() -> &'static PlateFile {
    static FILE: OnceLock<PlateFile> = OnceLock::new();
    FILE.get_or_init(|| {
        serde_json::from_str(include_str!("../data/plates.json")).expect("bundled plate table")
    })
}

fn durometer() -> &'static DurometerFile {
    static FILE: OnceLock<DurometerFile> = OnceLock::new();
    FILE.get_or_init(|| {
        serde_json::from_str(include_str!("../data/durometer.json"))
            .expect("bundled durometer table")
    })
}

/// The eleven plates of the first experiment, softest first.
pub fn hardness_set() -> Vec<PlateSpec> {
    plate_file()
        .plates
        .iter()
        .map(|p| PlateSpec {
            shore_scale: p.shore_scale,
            shore_value: p.shore_value,
            thickness: p.thickness,
            label: p.label.clone(),
        })
        .collect()
}

/// P1..P5 used in the second experiment.
pub fn selected_plates() -> Vec<PlateSpec> {
    let all = hardness_set();
    plate_file()
        .selected
        .iter()
        .map(|s| {
            let mut p = all
                .iter()
                .find(|p| p.label == s.plate)
                .expect("selection refers to a listed plate")
                .clone();
            p.label = s.label.clone();
            p
        })
        .collect()
}

/// Look a plate up by selection label (`P3`) or designation (`60A`).
pub fn plate_by_label(label: &str) -> Result<PlateSpec, ContactError> {
    let key = label.trim();
    selected_plates()
        .into_iter()
        .chain(hardness_set())
        .find(|p| p.label.eq_ignore_ascii_case(key))
        .ok_or_else(|| ContactError::UnknownPlate(label.to_string()))
}

fn interp(table: &[(f64, f64)], x: f64) -> f64 {
    let i = table
        .windows(2)
        .position(|w| x <= w[1].0)
        .unwrap_or(table.len() - 2);
    let (x0, y0) = table[i];
    let (x1, y1) = table[i + 1];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Equivalent Shore A reading. May be negative for very soft OO plates.
pub fn equivalent_shore_a(scale: ShoreScale, value: f64) -> Result<f64, ContactError> {
    if !(value > 0.0 && value < 100.0) {
        return Err(ContactError::Domain(value));
    }
    Ok(match scale {
        ShoreScale::A => value,
        ShoreScale::OO => interp(&durometer().oo_to_a, value),
        ShoreScale::D => interp(&durometer().d_to_a, value),
    })
}

/// Gent's relation, Shore A to Young's modulus (Pa).
pub fn gent_modulus(shore_a: f64) -> f64 {
    0.0981 * (56.0 + 7.62336 * shore_a) / (0.137505 * (254.0 - 2.54 * shore_a)) * 1e6
}

pub fn shore_to_modulus(plate: &PlateSpec) -> Result<f64, ContactError> {
    let s = equivalent_shore_a(plate.shore_scale, plate.shore_value)?;
    let e = gent_modulus(s);
    if !(e > 0.0) {
        return Err(ContactError::Domain(plate.shore_value));
    }
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    /// N/m^n_exp.
    pub k_c: f64,
    pub n_exp: f64,
    /// s/m.
    pub lambda: f64,
}

impl ContactParams {
    /// Hunt–Crossley force at penetration `delta` and rate `delta_dot`.
    pub fn force(&self, delta: f64, delta_dot: f64) -> f64 {
        if delta <= 0.0 {
            return 0.0;
        }
        (self.k_c * delta.powf(self.n_exp) * (1.0 + self.lambda * delta_dot)).max(0.0)
    }
}

pub fn derive_contact_params(
    e: f64,
    plate: &PlateSpec,
    tip_radius: f64,
) -> Result<ContactParams, ContactError> {
    if !(e > 0.0 && e.is_finite()) {
        return Err(ContactError::Degenerate(format!("modulus {e} Pa")));
    }
    if !(tip_radius > 0.0 && tip_radius.is_finite()) {
        return Err(ContactError::Degenerate(format!(
            "tip radius {tip_radius} m"
        )));
    }
    if !(plate.thickness > 0.0) {
        return Err(ContactError::Degenerate(format!(
            "plate thickness {} m",
            plate.thickness
        )));
    }
    let e_star = e / (1.0 - POISSON * POISSON);
    let layer = 1.0 + THICKNESS_COEFF * tip_radius / plate.thickness;
    Ok(ContactParams {
        k_c: 4.0 / 3.0 * e_star * tip_radius.sqrt() * layer,
        n_exp: HERTZ_EXPONENT,
        lambda: LAMBDA0 * E_REF / e,
    })
}

pub fn plate_contact(plate: &PlateSpec, tip_radius: f64) -> Result<ContactParams, ContactError> {
    derive_contact_params(shore_to_modulus(plate)?, plate, tip_radius)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TapProfile {
    pub stylus_mass: f64,
    pub tip_radius: f64,
    /// Nominal approach speed (m/s).
    pub approach_velocity: f64,
    /// Taps per second.
    pub tap_rate: f64,
    /// Uniform relative spread of the approach speed.
    pub velocity_jitter: f64,
}

impl Default for TapProfile {
    fn default() -> Self {
        Self {
            stylus_mass: 0.03,
            tip_radius: 0.002,
            approach_velocity: 0.15,
            tap_rate: 2.5,
            velocity_jitter: 0.1,
        }
    }
}

impl TapProfile {
    pub fn validate(&self) -> Result<(), ContactError> {
        let bad = |m: String| Err(ContactError::Protocol(m));
        if !(self.stylus_mass > 0.0) {
            return bad(format!("stylus mass {} kg", self.stylus_mass));
        }
        if !(self.tip_radius > 0.0) {
            return bad(format!("tip radius {} m", self.tip_radius));
        }
        if !(self.approach_velocity >= 0.0 && self.approach_velocity.is_finite()) {
            return bad(format!("approach velocity {} m/s", self.approach_velocity));
        }
        if !(1.0..=5.0).contains(&self.tap_rate) {
            return bad(format!("tap rate {} Hz outside [1, 5]", self.tap_rate));
        }
        if !(0.0..1.0).contains(&self.velocity_jitter) {
            return bad(format!("velocity jitter {}", self.velocity_jitter));
        }
        Ok(())
    }
}

/// Everything a tap needs besides the plate and target stiffness.
#[derive(Debug, Clone, PartialEq)]
pub struct TapRig {
    pub profile: TapProfile,
    pub device: DeviceParams,
    pub compensator: Compensator,
    /// Output sample rate (Hz).
    pub sample_rate: f64,
}

impl Default for TapRig {
    fn default() -> Self {
        Self {
            profile: TapProfile::default(),
            device: DeviceParams::default(),
            compensator: Compensator::reference(),
            sample_rate: 10_000.0,
        }
    }
}

fn check_k(k_des: f64) -> Result<(), ContactError> {
    if !(K_RANGE.0..=K_RANGE.1).contains(&k_des) {
        return Err(ContactError::Protocol(format!(
            "rendered stiffness {k_des} N/m outside [{}, {}]",
            K_RANGE.0, K_RANGE.1
        )));
    }
    Ok(())
}

/// Single impact at an exact approach speed. The record starts `PRE_ROLL`
/// before contact and ends on the first sample after separation.
pub fn simulate_impact(
    plate: &PlateSpec,
    k_des: f64,
    rig: &TapRig,
    velocity: f64,
) -> Result<Vec<f64>, ContactError> {
    check_k(k_des)?;
    rig.profile.validate()?;
    if !(rig.sample_rate > 0.0) {
        return Err(ContactError::Protocol(format!(
            "sample rate {} Hz",
            rig.sample_rate
        )));
    }
    let contact = plate_contact(plate, rig.profile.tip_radius)?;
    let pre = (PRE_ROLL * rig.sample_rate).round() as usize;
    if velocity == 0.0 {
        return Ok(vec![0.0; pre + 1]);
    }
    if !(velocity > 0.0 && velocity.is_finite()) {
        return Err(ContactError::Protocol(format!(
            "approach velocity {velocity} m/s"
        )));
    }

    let mut dev = rig.device.clone();
    dev.sim_rate = rig.sample_rate * CONTACT_SUBSTEPS as f64;
    dev.validate()?;
    let dt = dev.dt();
    let m = rig.profile.stylus_mass;
    let sub = CONTACT_SUBSTEPS as u64;

    let mut plate_state = DeviceState::at_rest(rig.compensator.compensate(k_des))?;
    let mut y = velocity * PRE_ROLL;
    let mut vy = -velocity;
    let mut touched = false;
    let mut out = Vec::with_capacity(pre + 64);
    let max_steps = ((PRE_ROLL + MAX_CONTACT) / dt) as u64;

    for n in 0..=max_steps {
        let delta = plate_state.position - y;
        let delta_dot = plate_state.velocity - vy;
        let force = contact.force(delta, delta_dot);
        if !force.is_finite() || !delta.is_finite() {
            return Err(ContactError::Diverged {
                t: n as f64 * dt,
                penetration: delta,
                force,
            });
        }
        if touched && delta <= 0.0 {
            out.push(0.0);
            return Ok(out);
        }
        touched |= delta > 0.0;
        if n % sub == 0 {
            out.push(force);
        }
        plate_state = device::step(&plate_state, -force, &dev)?;
        vy += force / m * dt;
        y += vy * dt;
    }
    Err(ContactError::NoSeparation(MAX_CONTACT))
}

fn jittered(profile: &TapProfile, rng: &mut seed::SimRng) -> f64 {
    let j = profile.velocity_jitter;
    let u: f64 = if j > 0.0 {
        rng.random_range(-j..=j)
    } else {
        0.0
    };
    profile.approach_velocity * (1.0 + u)
}

fn meta(plate: &PlateSpec, k_des: f64, rig: &TapRig, seed: u64) -> SignalMeta {
    SignalMeta {
        plate: Some(plate.label.clone()),
        k_des: Some(k_des),
        seed: Some(seed),
        profile: serde_json::to_value(&rig.profile).ok(),
    }
}

/// One tap with the profile's velocity jitter drawn from `seed`.
pub fn simulate_tap(
    plate: &PlateSpec,
    k_des: f64,
    rig: &TapRig,
    seed: u64,
) -> Result<TapSignal, ContactError> {
    let mut rng = seed::rng(seed, &[seed::tag("tap")]);
    let v = jittered(&rig.profile, &mut rng);
    let samples = simulate_impact(plate, k_des, rig, v)?;
    TapSignal::new(samples, rig.sample_rate, meta(plate, k_des, rig, seed))
        .map_err(|e| ContactError::Degenerate(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSpec {
    pub n_taps: usize,
    /// Record length (s).
    pub duration: f64,
    /// Contact time of the first tap. When absent the taps are centred in
    /// the record.
    pub first_tap_s: Option<f64>,
}

impl Default for SessionSpec {
    fn default() -> Self {
        Self {
            n_taps: 30,
            duration: 13.0,
            first_tap_s: None,
        }
    }
}

/// Contact times of each tap in a session.
pub fn tap_times(spec: &SessionSpec, tap_rate: f64) -> Result<Vec<f64>, ContactError> {
    if spec.n_taps == 0 {
        return Err(ContactError::Protocol(
            "session needs at least one tap".into(),
        ));
    }
    if tap_rate * spec.duration < spec.n_taps as f64 {
        return Err(ContactError::Protocol(format!(
            "{} taps do not fit in {} s at {} Hz",
            spec.n_taps, spec.duration, tap_rate
        )));
    }
    let span = (spec.n_taps - 1) as f64 / tap_rate;
    let first = spec.first_tap_s.unwrap_or((spec.duration - span) / 2.0);
    Ok((0..spec.n_taps)
        .map(|i| first + i as f64 / tap_rate)
        .collect())
}

/// A tapping session: taps at the profile rate, each from rest with its own
/// jittered approach speed, laid into one record.
pub fn simulate_session(
    plate: &PlateSpec,
    k_des: f64,
    rig: &TapRig,
    spec: &SessionSpec,
    seed: u64,
) -> Result<TapSignal, ContactError> {
    rig.profile.validate()?;
    let times = tap_times(spec, rig.profile.tap_rate)?;
    let fs = rig.sample_rate;
    let total = (spec.duration * fs).round() as usize;
    let pre = (PRE_ROLL * fs).round() as usize;
    let mut samples = vec![0.0; total];
    let mut busy_until = 0usize;
    for (i, &t) in times.iter().enumerate() {
        let mut rng = seed::rng(seed, &[seed::tag("session"), i as u64]);
        let v = jittered(&rig.profile, &mut rng);
        let tap = simulate_impact(plate, k_des, rig, v)?;
        let onset = ((t * fs).round() as isize - pre as isize).max(0) as usize;
        if onset < busy_until {
            return Err(ContactError::Protocol(format!(
                "tap {i} starts before the previous one ended"
            )));
        }
        let end = onset + tap.len();
        if end > total {
            return Err(ContactError::Protocol(format!(
                "tap {i} at {t:.3} s runs past the {} s record",
                spec.duration
            )));
        }
        samples[onset..end].copy_from_slice(&tap);
        busy_until = end;
    }
    TapSignal::new(samples, fs, meta(plate, k_des, rig, seed))
        .map_err(|e| ContactError::Degenerate(e.to_string()))
}
