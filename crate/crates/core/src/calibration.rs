//! Weight-load stiffness calibration: sweep, quadratic fit, compensation.
//!
//! A known weight rests on the end-effector while the commanded stiffness is
//! swept; the encoder displacement gives the delivered stiffness. A quadratic
//! fitted from measured to commanded stiffness is then used directly as the
//! compensator `k_cmd = a·k_des² + b·k_des + c`.

use std::io::Write;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{settle_under_load, DeviceError, DeviceParams};
use crate::seed;

/// Samples measuring at or above this stiffness sit on the saturation
/// plateau and are left out of the fit.
pub const FIT_CEILING: f64 = 1900.0;

/// Desired-stiffness range in which a compensator is trusted.
pub const VALID_RANGE: (f64, f64) = (100.0, 2500.0);

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("displacement {displacement:.3e} m at k = {k_cmd} N/m is below one encoder count")]
    MeasurementSaturated { k_cmd: f64, displacement: f64 },
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("fit needs at least 3 distinct unsaturated stiffness levels, got {0}")]
    Underdetermined(usize),
    #[error("all {0} samples lie on the saturation plateau")]
    AllSaturated(usize),
    #[error("design matrix is rank deficient (condition {0:.3e})")]
    RankDeficient(f64),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Sweep protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Weight of the calibration mass, N (100 g).
    pub weight: f64,
    pub k_start: f64,
    pub k_end: f64,
    pub k_step: f64,
    pub repeats: usize,
    /// Spread of the release velocity between repeats, m/s.
    pub release_jitter: f64,
    /// Additive Gaussian noise on each displacement reading, m.
    pub sensor_noise: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            weight: 0.981,
            k_start: 100.0,
            k_end: 4000.0,
            k_step: 100.0,
            repeats: 5,
            release_jitter: 1e-3,
            sensor_noise: 0.0,
        }
    }
}

impl SweepConfig {
    /// The desired-stiffness grid, inclusive of `k_end` when it lands on a step.
    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.k_end - self.k_start) / self.k_step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| self.k_start + i as f64 * self.k_step)
            .collect()
    }

    fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.k_step > 0.0) {
            return Err(CalibrationError::InvalidSweep("step must be > 0".into()));
        }
        if self.repeats < 1 {
            return Err(CalibrationError::InvalidSweep(
                "repeats must be >= 1".into(),
            ));
        }
        if !(self.k_start >= 0.0) || self.k_end < self.k_start {
            return Err(CalibrationError::InvalidSweep(format!(
                "bad range [{}, {}]",
                self.k_start, self.k_end
            )));
        }
        if self.weight < 0.0 || self.sensor_noise < 0.0 || self.release_jitter < 0.0 {
            return Err(CalibrationError::InvalidSweep(
                "weight and noise levels must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    /// Stiffness the operator asked for.
    pub k_des: f64,
    /// Stiffness actually sent to the device (equals `k_des` when uncompensated).
    pub k_cmd: f64,
    pub displacements: Vec<f64>,
    pub k_measured: f64,
}

impl CalibrationSample {
    pub fn disp_mean(&self) -> f64 {
        self.displacements.iter().sum::<f64>() / self.displacements.len() as f64
    }

    /// Sample standard deviation; zero for a single repeat.
    pub fn disp_std(&self) -> f64 {
        let n = self.displacements.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.disp_mean();
        let ss: f64 = self.displacements.iter().map(|d| (d - m).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    }
}

/// Run the sweep commanding the device directly.
pub fn run_sweep(
    device: &DeviceParams,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<Vec<CalibrationSample>, CalibrationError> {
    run_sweep_with(device, cfg, seed, |k| k)
}

/// Run the sweep, mapping each desired stiffness to a command first.
pub fn run_sweep_with<F>(
    device: &DeviceParams,
    cfg: &SweepConfig,
    seed: u64,
    command: F,
) -> Result<Vec<CalibrationSample>, CalibrationError>
where
    F: Fn(f64) -> f64,
{
    cfg.validate()?;
    device.validate()?;
    let jitter =
        Normal::new(0.0, cfg.release_jitter.max(f64::MIN_POSITIVE)).expect("non-negative sd");
    let noise = Normal::new(0.0, cfg.sensor_noise.max(f64::MIN_POSITIVE)).expect("non-negative sd");

    cfg.grid()
        .into_iter()
        .enumerate()
        .map(|(i, k_des)| {
            let k_cmd = command(k_des).max(0.0);
            let mut rng = seed::rng(seed, &[seed::tag("calibrate"), i as u64]);
            let displacements = (0..cfg.repeats)
                .map(|_| {
                    let v0 = if cfg.release_jitter > 0.0 {
                        jitter.sample(&mut rng)
                    } else {
                        0.0
                    };
                    let reading = settle_under_load(device, k_cmd, -cfg.weight, v0)?;
                    let mut d = reading.displacement;
                    if cfg.sensor_noise > 0.0 {
                        d += noise.sample(&mut rng);
                    }
                    // Keep stream consumption independent of the noise setting.
                    let _: u32 = rng.random();
                    Ok(d)
                })
                .collect::<Result<Vec<f64>, CalibrationError>>()?;
            let mean = displacements.iter().sum::<f64>() / displacements.len() as f64;
            if mean < device.encoder_resolution {
                return Err(CalibrationError::MeasurementSaturated {
                    k_cmd,
                    displacement: mean,
                });
            }
            Ok(CalibrationSample {
                k_des,
                k_cmd,
                displacements,
                k_measured: cfg.weight / mean,
            })
        })
        .collect()
}

/// Quadratic compensator mapping desired stiffness to command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compensator {
    /// `(a, b, c)` of `k_cmd = a·k_des² + b·k_des + c`.
    pub coeffs: [f64; 3],
    /// RMS of the fit residuals in command units, N/m.
    pub residual_rms: f64,
    /// Samples that entered the fit.
    pub sample_count: usize,
}

/// Emitted when a compensator is evaluated outside [`VALID_RANGE`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeWarning {
    pub k_des: f64,
}

impl Compensator {
    /// The factory compensator measured on the reference device.
    pub fn reference() -> Self {
        Self {
            coeffs: crate::device::DEFAULT_SATURATION_COEFFS,
            residual_rms: 0.0,
            sample_count: 0,
        }
    }

    /// Command for a desired stiffness, floored at zero.
    pub fn compensate(&self, k_des: f64) -> f64 {
        let (value, warning) = self.compensate_checked(k_des);
        if let Some(w) = warning {
            warn!(
                "compensator extrapolating at k_des = {} N/m (valid {:?})",
                w.k_des, VALID_RANGE
            );
        }
        value
    }

    pub fn compensate_checked(&self, k_des: f64) -> (f64, Option<RangeWarning>) {
        let [a, b, c] = self.coeffs;
        let value = ((a * k_des + b) * k_des + c).max(0.0);
        let warning =
            (k_des < VALID_RANGE.0 || k_des > VALID_RANGE.1).then_some(RangeWarning { k_des });
        (value, warning)
    }

    /// Whether the polynomial increases over `[lo, hi]`.
    pub fn is_monotone_on(&self, lo: f64, hi: f64) -> bool {
        let [a, b, _] = self.coeffs;
        let slope = |k: f64| 2.0 * a * k + b;
        slope(lo) > 0.0 && slope(hi) > 0.0
    }
}

/// Least-squares quadratic from measured stiffness to commanded stiffness.
pub fn fit_quadratic(samples: &[CalibrationSample]) -> Result<Compensator, CalibrationError> {
    let usable: Vec<&CalibrationSample> = samples
        .iter()
        .filter(|s| s.k_measured.is_finite() && s.k_measured < FIT_CEILING)
        .collect();
    if usable.is_empty() && !samples.is_empty() {
        return Err(CalibrationError::AllSaturated(samples.len()));
    }
    let mut distinct: Vec<f64> = usable.iter().map(|s| s.k_cmd).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(CalibrationError::Underdetermined(distinct.len()));
    }

    // Work in kN/m so the three columns have comparable magnitude.
    const SCALE: f64 = 1000.0;
    let n = usable.len();
    let design = DMatrix::from_fn(n, 3, |r, c| {
        let x = usable[r].k_measured / SCALE;
        x.powi(2 - c as i32)
    });
    let target = DVector::from_iterator(n, usable.iter().map(|s| s.k_cmd));
    let svd = design.clone().svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if !(smin > smax * 1e-10) {
        return Err(CalibrationError::RankDeficient(smax / smin));
    }
    let sol = svd
        .solve(&target, smax * 1e-12)
        .map_err(|_| CalibrationError::RankDeficient(smax / smin))?;
    let residuals = &design * &sol - &target;
    let residual_rms = (residuals.norm_squared() / n as f64).sqrt();
    Ok(Compensator {
        coeffs: [sol[0] / (SCALE * SCALE), sol[1] / SCALE, sol[2]],
        residual_rms,
        sample_count: n,
    })
}

/// Desired vs. delivered stiffness before and after compensation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub k_des: f64,
    pub before: f64,
    pub after: f64,
}

/// Re-run the sweep with and without the compensator.
pub fn compare(
    device: &DeviceParams,
    compensator: &Compensator,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<Vec<ComparisonRow>, CalibrationError> {
    let before = run_sweep(device, cfg, seed)?;
    let after = run_sweep_with(device, cfg, seed::derive(seed, &[1]), |k| {
        compensator.compensate_checked(k).0
    })?;
    Ok(before
        .iter()
        .zip(&after)
        .map(|(b, a)| ComparisonRow {
            k_des: b.k_des,
            before: b.k_measured,
            after: a.k_measured,
        })
        .collect())
}

/// CSV with columns `k_des_Npm, k_measured_Npm, disp_mean_m, disp_std_m`.
pub fn write_sweep_csv<W: Write>(
    samples: &[CalibrationSample],
    writer: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k_des_Npm", "k_measured_Npm", "disp_mean_m", "disp_std_m"])?;
    for s in samples {
        w.write_record(&[
            s.k_des.to_string(),
            s.k_measured.to_string(),
            s.disp_mean().to_string(),
            s.disp_std().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample(k_cmd: f64, k_measured: f64) -> CalibrationSample {
        CalibrationSample {
            k_des: k_cmd,
            k_cmd,
            displacements: vec![0.981 / k_measured],
            k_measured,
        }
    }

    #[test]
    fn reference_compensator_values() {
        let c = Compensator::reference();
        assert!((c.compensate(500.0) - 780.48).abs() < 1e-2);
        assert!((c.compensate(1000.0) - 1533.73).abs() < 1e-2);
        assert!((c.compensate(2000.0) - 2516.73).abs() < 1e-2);
        assert!(c.is_monotone_on(200.0, 2000.0));
    }

    #[test]
    fn extrapolation_warns_but_evaluates() {
        let c = Compensator::reference();
        assert!(c.compensate_checked(1500.0).1.is_none());
        let (v, w) = c.compensate_checked(50.0);
        assert!(w.is_some());
        // Negative polynomial value floors at zero.
        assert_eq!(v, 0.0);
        assert!(c.compensate_checked(3000.0).1.is_some());
    }

    #[test]
    fn identity_device_measures_commanded_stiffness() {
        let cfg = SweepConfig {
            k_start: 1000.0,
            k_end: 1000.0,
            ..SweepConfig::default()
        };
        let s = run_sweep(&DeviceParams::identity(), &cfg, 3).unwrap();
        assert_eq!(s.len(), 1);
        assert_relative_eq!(s[0].k_measured, 1000.0, max_relative = 0.02);
        assert_eq!(s[0].displacements.len(), 5);
    }

    #[test]
    fn saturated_device_plateaus() {
        let cfg = SweepConfig {
            k_start: 4000.0,
            k_end: 4000.0,
            ..SweepConfig::default()
        };
        let s = run_sweep(&DeviceParams::default(), &cfg, 3).unwrap();
        assert!(s[0].k_measured <= 2040.0, "{}", s[0].k_measured);
    }

    #[test]
    fn zero_weight_cannot_be_measured() {
        let cfg = SweepConfig {
            weight: 0.0,
            k_end: 300.0,
            ..SweepConfig::default()
        };
        assert!(matches!(
            run_sweep(&DeviceParams::default(), &cfg, 1),
            Err(CalibrationError::MeasurementSaturated { .. })
        ));
    }

    #[test]
    fn sweep_rejects_bad_protocol() {
        let d = DeviceParams::default();
        let bad_step = SweepConfig {
            k_step: 0.0,
            ..SweepConfig::default()
        };
        assert!(run_sweep(&d, &bad_step, 0).is_err());
        let no_repeats = SweepConfig {
            repeats: 0,
            ..SweepConfig::default()
        };
        assert!(run_sweep(&d, &no_repeats, 0).is_err());
    }

    #[test]
    fn grid_matches_protocol() {
        let g = SweepConfig::default().grid();
        assert_eq!(g.len(), 40);
        assert_eq!(g[0], 100.0);
        assert_eq!(*g.last().unwrap(), 4000.0);
    }

    #[test]
    fn exact_quadratic_recovered() {
        // Measured -> command through a known quadratic.
        let (a, b, c) = (-2.0e-4, 1.5, 30.0);
        let samples: Vec<_> = (1..=15)
            .map(|i| {
                let km = 100.0 * i as f64;
                sample(a * km * km + b * km + c, km)
            })
            .collect();
        let comp = fit_quadratic(&samples).unwrap();
        assert_relative_eq!(comp.coeffs[0], a, max_relative = 1e-9);
        assert_relative_eq!(comp.coeffs[1], b, max_relative = 1e-9);
        assert_relative_eq!(comp.coeffs[2], c, max_relative = 1e-7);
        assert!(comp.residual_rms < 1e-8);
        assert_eq!(comp.sample_count, 15);
    }

    #[test]
    fn plateau_samples_excluded() {
        let mut samples: Vec<_> = (1..=10)
            .map(|i| sample(100.0 * i as f64, 100.0 * i as f64))
            .collect();
        samples.push(sample(3000.0, 1999.0));
        samples.push(sample(4000.0, 2001.0));
        let comp = fit_quadratic(&samples).unwrap();
        assert_eq!(comp.sample_count, 10);
        assert!(comp.coeffs[0].abs() < 1e-12);
        assert_relative_eq!(comp.coeffs[1], 1.0, max_relative = 1e-9);
    }

    #[test]
    fn fit_errors() {
        let two = vec![
            sample(500.0, 400.0),
            sample(600.0, 480.0),
            sample(600.0, 480.0),
        ];
        assert!(matches!(
            fit_quadratic(&two),
            Err(CalibrationError::Underdetermined(2))
        ));
        let flat = vec![
            sample(3000.0, 1990.0),
            sample(3500.0, 2000.0),
            sample(4000.0, 2000.0),
        ];
        assert!(matches!(
            fit_quadratic(&flat),
            Err(CalibrationError::AllSaturated(3))
        ));
        // Three commands but one measured stiffness: singular design.
        let degenerate = vec![
            sample(500.0, 700.0),
            sample(600.0, 700.0),
            sample(700.0, 700.0),
        ];
        assert!(matches!(
            fit_quadratic(&degenerate),
            Err(CalibrationError::RankDeficient(_))
        ));
    }

    #[test]
    fn sweep_csv_layout() {
        let s = vec![CalibrationSample {
            k_des: 100.0,
            k_cmd: 100.0,
            displacements: vec![0.01, 0.012],
            k_measured: 89.18,
        }];
        let mut buf = Vec::new();
        write_sweep_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "k_des_Npm,k_measured_Npm,disp_mean_m,disp_std_m"
        );
        assert!(lines.next().unwrap().starts_with("100,89.18,0.011,"));
    }
}
