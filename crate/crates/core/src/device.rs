//! Simulated 1-DOF impedance haptic device rendering a virtual wall.
//!
//! The device reads a quantized encoder position, computes a spring force
//! from the *actual* (saturated) stiffness it can deliver, caps the force at
//! the actuator limit and latches it into a zero-order-hold register at the
//! servo rate. The end-effector is integrated with semi-implicit Euler at the
//! (faster) simulation rate.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard gravity (m/s²).
pub const GRAVITY: f64 = 9.81;

/// Lowest desired stiffness at which the fitted saturation quadratic is
/// trusted. Below its image the forward map is a straight line to the origin.
pub const QUADRATIC_VALIDITY_FLOOR: f64 = 100.0;

/// Coefficients of the factory-measured compensator `k_cmd = a·k² + b·k + c`.
pub const DEFAULT_SATURATION_COEFFS: [f64; 3] = [-3.49e-4, 2.03, -147.27];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("stiffness must be non-negative, got {0} N/m")]
    NegativeStiffness(f64),
    #[error("mass must be non-negative, got {0} kg")]
    NegativeMass(f64),
    #[error("non-finite value in device step: {what} = {value}")]
    NonFinite { what: &'static str, value: f64 },
    #[error("invalid device parameters: {0}")]
    InvalidParams(String),
}

/// How a commanded stiffness turns into the stiffness the device delivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SaturationMap {
    /// Forward map is the monotone-branch inverse of `k_cmd = a·k² + b·k + c`,
    /// clamped at `k_max`.
    Quadratic { a: f64, b: f64, c: f64 },
    /// Ideal device: delivers exactly what it is commanded.
    Identity,
}

impl Default for SaturationMap {
    fn default() -> Self {
        let [a, b, c] = DEFAULT_SATURATION_COEFFS;
        SaturationMap::Quadratic { a, b, c }
    }
}

impl SaturationMap {
    fn eval_quadratic(a: f64, b: f64, c: f64, k: f64) -> f64 {
        (a * k + b) * k + c
    }

    /// Solve `a·x² + b·x + c = target` on the increasing branch. Uses the
    /// cancellation-free form of the quadratic formula, so `a == 0` works too.
    /// Returns `None` past the vertex.
    fn invert_quadratic(a: f64, b: f64, c: f64, target: f64) -> Option<f64> {
        let disc = b * b - 4.0 * a * (c - target);
        if disc < 0.0 {
            return None;
        }
        let denom = b + disc.sqrt();
        if denom <= 0.0 {
            return None;
        }
        Some(2.0 * (target - c) / denom)
    }

    fn forward(&self, k_cmd: f64, k_max: f64) -> f64 {
        let k_cmd = k_cmd.max(0.0);
        match *self {
            SaturationMap::Identity => k_cmd,
            SaturationMap::Quadratic { a, b, c } => {
                let cmd_floor = Self::eval_quadratic(a, b, c, QUADRATIC_VALIDITY_FLOOR);
                let k = if k_cmd < cmd_floor {
                    QUADRATIC_VALIDITY_FLOOR * k_cmd / cmd_floor
                } else {
                    Self::invert_quadratic(a, b, c, k_cmd).unwrap_or(k_max)
                };
                k.clamp(0.0, k_max)
            }
        }
    }
}

/// Static description of the simulated device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    /// Servo (force update) rate, Hz.
    pub servo_rate: f64,
    /// Integration rate, Hz. Must be an integer multiple of `servo_rate`.
    pub sim_rate: f64,
    /// Encoder quantum, m.
    pub encoder_resolution: f64,
    /// Actuator force cap, N.
    pub max_force: f64,
    /// Highest stiffness the device can deliver, N/m.
    pub k_max: f64,
    pub saturation: SaturationMap,
    /// Effective moving mass at the end-effector (linkage, mount and plate), kg.
    pub end_effector_mass: f64,
    /// Lumped viscous friction, N·s/m.
    pub viscous_damping: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            servo_rate: 1000.0,
            sim_rate: 10_000.0,
            encoder_resolution: 6.0e-5,
            max_force: 9.0,
            k_max: 2000.0,
            saturation: SaturationMap::default(),
            end_effector_mass: 0.3,
            viscous_damping: 3.0,
        }
    }
}

impl DeviceParams {
    /// An ideal device whose delivered stiffness equals the command.
    pub fn identity() -> Self {
        Self {
            saturation: SaturationMap::Identity,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |msg: String| Err(DeviceError::InvalidParams(msg));
        if !(self.servo_rate > 0.0) || !(self.sim_rate > 0.0) {
            return bad("rates must be positive".into());
        }
        let ratio = self.sim_rate / self.servo_rate;
        if ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-9 {
            return bad(format!(
                "sim_rate {} is not an integer multiple of servo_rate {}",
                self.sim_rate, self.servo_rate
            ));
        }
        if !(self.encoder_resolution > 0.0) {
            return bad("encoder_resolution must be positive".into());
        }
        if !(self.max_force > 0.0) || !(self.k_max > 0.0) {
            return bad("max_force and k_max must be positive".into());
        }
        if !(self.end_effector_mass > 0.0) || self.viscous_damping < 0.0 {
            return bad("end_effector_mass must be positive, damping non-negative".into());
        }
        if let SaturationMap::Quadratic { a, b, c } = self.saturation {
            if !(b > 0.0) {
                return bad("saturation quadratic must have positive slope at 0".into());
            }
            // Strictly increasing up to k_max: the vertex must lie beyond it.
            if a < 0.0 && -b / (2.0 * a) <= self.k_max {
                return bad(format!(
                    "saturation quadratic peaks at {:.1} N/m, below k_max",
                    -b / (2.0 * a)
                ));
            }
            if SaturationMap::eval_quadratic(a, b, c, QUADRATIC_VALIDITY_FLOOR) <= 0.0 {
                return bad("saturation quadratic is non-positive at its validity floor".into());
            }
        }
        Ok(())
    }

    /// Integration steps per servo period.
    pub fn steps_per_servo(&self) -> u64 {
        (self.sim_rate / self.servo_rate).round() as u64
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sim_rate
    }

    /// Stiffness the device actually delivers for a command.
    pub fn actual_stiffness(&self, k_cmd: f64) -> Result<f64, DeviceError> {
        if k_cmd < 0.0 || k_cmd.is_nan() {
            return Err(DeviceError::NegativeStiffness(k_cmd));
        }
        Ok(self.saturation.forward(k_cmd, self.k_max))
    }

    /// Round a position to the encoder grid.
    pub fn quantize(&self, position: f64) -> f64 {
        (position / self.encoder_resolution).round() * self.encoder_resolution
    }
}

/// Upward force that cancels the weight of `mass`.
pub fn gravity_compensation(mass: f64) -> Result<f64, DeviceError> {
    if mass < 0.0 || mass.is_nan() {
        return Err(DeviceError::NegativeMass(mass));
    }
    Ok(mass * GRAVITY)
}

/// Dynamic state of the end-effector. Positions are vertical, up positive;
/// the wall pushes up once the end-effector sinks below `wall_position`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceState {
    pub position: f64,
    pub velocity: f64,
    pub commanded_stiffness: f64,
    pub wall_position: f64,
    /// Zero-order-hold force register.
    pub held_force: f64,
    /// Integration steps taken so far.
    pub tick: u64,
}

impl DeviceState {
    /// End-effector at rest on the wall surface.
    pub fn at_rest(commanded_stiffness: f64) -> Result<Self, DeviceError> {
        if commanded_stiffness < 0.0 || commanded_stiffness.is_nan() {
            return Err(DeviceError::NegativeStiffness(commanded_stiffness));
        }
        Ok(Self {
            position: 0.0,
            velocity: 0.0,
            commanded_stiffness,
            wall_position: 0.0,
            held_force: 0.0,
            tick: 0,
        })
    }

    /// Encoder reading, an exact multiple of the resolution.
    pub fn reported_position(&self, params: &DeviceParams) -> f64 {
        params.quantize(self.position)
    }

    pub fn encoder_count(&self, params: &DeviceParams) -> i64 {
        (self.position / params.encoder_resolution).round() as i64
    }

    /// Wall penetration as seen through the encoder.
    pub fn penetration(&self, params: &DeviceParams) -> f64 {
        (self.wall_position - self.reported_position(params)).max(0.0)
    }
}

/// Virtual-wall force from the current (quantized) state, before latching.
pub fn rendered_force(state: &DeviceState, params: &DeviceParams) -> f64 {
    let k = params
        .saturation
        .forward(state.commanded_stiffness, params.k_max);
    (k * state.penetration(params)).clamp(0.0, params.max_force)
}

/// Advance the device by one integration step of `1 / sim_rate`.
///
/// `external_force` is any force applied by the environment (payload weight,
/// stylus contact), up positive.
pub fn step(
    state: &DeviceState,
    external_force: f64,
    params: &DeviceParams,
) -> Result<DeviceState, DeviceError> {
    if !external_force.is_finite() {
        return Err(DeviceError::NonFinite {
            what: "external_force",
            value: external_force,
        });
    }
    let mut next = state.clone();
    if state.tick.is_multiple_of(params.steps_per_servo()) {
        next.held_force = rendered_force(state, params);
    }
    let m = params.end_effector_mass;
    let net = next.held_force + gravity_compensation(m)? + external_force
        - params.viscous_damping * state.velocity
        - m * GRAVITY;
    let dt = params.dt();
    next.velocity = state.velocity + net / m * dt;
    next.position = state.position + next.velocity * dt;
    next.tick = state.tick + 1;
    if !next.position.is_finite() || !next.velocity.is_finite() {
        return Err(DeviceError::NonFinite {
            what: "state",
            value: next.position,
        });
    }
    Ok(next)
}

/// One exported trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub position: f64,
    pub velocity: f64,
    pub force: f64,
}

/// Run the device under a constant external load, recording every step.
/// Reported positions are encoder readings; force is the held force.
pub fn simulate_constant_load(
    initial: &DeviceState,
    external_force: f64,
    params: &DeviceParams,
    duration: f64,
) -> Result<Vec<TrajectorySample>, DeviceError> {
    let n = (duration * params.sim_rate).round() as usize;
    let mut out = Vec::with_capacity(n);
    let mut state = initial.clone();
    for _ in 0..n {
        state = step(&state, external_force, params)?;
        out.push(TrajectorySample {
            t: state.tick as f64 * params.dt(),
            position: state.reported_position(params),
            velocity: state.velocity,
            force: state.held_force,
        });
    }
    Ok(out)
}

/// Viscous time constants allowed for the transient to die out before a
/// static reading is taken.
pub const SETTLE_TIME_CONSTANTS: f64 = 12.0;
/// Length of the encoder averaging window for static readings, s.
pub const MEASURE_WINDOW: f64 = 1.0;

/// Result of letting the device settle under a constant load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticReading {
    /// Mean encoder penetration over the measurement window, m.
    pub displacement: f64,
    /// Simulated time spent settling before the window opened, s.
    pub settle_time: f64,
}

/// Settle the end-effector under a constant external `load` (up positive)
/// and read its penetration from the encoder.
///
/// A quantized spring behind a zero-order hold never comes to rest: near
/// equilibrium it chatters across a few encoder counts in a limit cycle.
/// The reading is therefore the mean of the encoder values latched at servo
/// ticks over [`MEASURE_WINDOW`]. Over a long window the mean held force must
/// balance the load, so this mean converges to `load / k` while the
/// instantaneous velocity stays of order 1e-3 m/s.
pub fn settle_under_load(
    params: &DeviceParams,
    commanded_stiffness: f64,
    load: f64,
    initial_velocity: f64,
) -> Result<StaticReading, DeviceError> {
    params.validate()?;
    if params.viscous_damping <= 0.0 {
        return Err(DeviceError::InvalidParams(
            "static readings need viscous damping to settle".into(),
        ));
    }
    let mut state = DeviceState::at_rest(commanded_stiffness)?;
    state.velocity = initial_velocity;
    let tau = 2.0 * params.end_effector_mass / params.viscous_damping;
    let settle_time = (SETTLE_TIME_CONSTANTS * tau).max(0.5);
    let settle_steps = (settle_time * params.sim_rate).round() as u64;
    for _ in 0..settle_steps {
        state = step(&state, load, params)?;
    }
    let per = params.steps_per_servo();
    let window_steps = (MEASURE_WINDOW * params.sim_rate).round() as u64;
    let (mut sum, mut n) = (0.0, 0u64);
    for _ in 0..window_steps {
        if state.tick % per == 0 {
            sum += state.penetration(params);
            n += 1;
        }
        state = step(&state, load, params)?;
    }
    Ok(StaticReading {
        displacement: sum / n as f64,
        settle_time,
    })
}

/// Write a trajectory as CSV with columns `t_s, position_m, velocity_mps, force_N`.
pub fn write_trajectory_csv<W: Write>(
    samples: &[TrajectorySample],
    writer: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t_s", "position_m", "velocity_mps", "force_N"])?;
    for s in samples {
        w.write_record(&[
            s.t.to_string(),
            s.position.to_string(),
            s.velocity.to_string(),
            s.force.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
