//! The two experiment pipelines, shared by the command line and the tests.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::calibration::Compensator;
use crate::contact::{
    hardness_set, plate_by_label, selected_plates, simulate_session, tap_times, ContactError,
    PlateSpec, SessionSpec, TapProfile, TapRig,
};
use crate::device::DeviceParams;
use crate::dsp::{extract_features, FeatureConfig, FeatureRow};
use crate::psychophysics::{
    default_step, weber_grid, GridRow, MaskingModel, PsychError, StaircaseConfig, REFERENCES,
};
use crate::seed;
use crate::stats::{two_way_anova, AnovaTable, FactorialTable, StatsError, TwoWayModel};

fn resolve(
    labels: &Option<Vec<String>>,
    default: fn() -> Vec<PlateSpec>,
) -> Result<Vec<PlateSpec>, ContactError> {
    match labels {
        None => Ok(default()),
        Some(l) => l.iter().map(|s| plate_by_label(s)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp1Config {
    /// Plate labels; all eleven when absent.
    pub plates: Option<Vec<String>>,
    /// Rendered stiffness levels (N/m).
    pub stiffness: Vec<f64>,
    pub session: SessionSpec,
    pub profile: TapProfile,
    pub features: FeatureConfig,
    /// Hz.
    pub sample_rate: f64,
}

impl Default for Exp1Config {
    fn default() -> Self {
        Self {
            plates: None,
            stiffness: (2..=20).map(|i| i as f64 * 100.0).collect(),
            session: SessionSpec::default(),
            profile: TapProfile::default(),
            features: FeatureConfig::default(),
            sample_rate: 10_000.0,
        }
    }
}

impl Exp1Config {
    pub fn plate_set(&self) -> Result<Vec<PlateSpec>, ContactError> {
        resolve(&self.plates, hardness_set)
    }
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub plate: String,
    pub k_des: f64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct Exp1Result {
    pub plates: Vec<PlateSpec>,
    pub rows: Vec<FeatureRow>,
    pub failures: Vec<CellFailure>,
    /// Hardness × stiffness on the spectral centroid; `None` when the grid
    /// has a single level on either axis or cells are missing.
    pub anova: Option<Result<AnovaTable, StatsError>>,
}

/// Simulate a session per (plate, stiffness) cell and analyse its
/// representative tap.
pub fn run_experiment1(
    cfg: &Exp1Config,
    device: &DeviceParams,
    compensator: &Compensator,
    seed: u64,
) -> Result<Exp1Result, ContactError> {
    let plates = cfg.plate_set()?;
    let rig = TapRig {
        profile: cfg.profile.clone(),
        device: device.clone(),
        compensator: compensator.clone(),
        sample_rate: cfg.sample_rate,
    };
    rig.profile.validate()?;
    tap_times(&cfg.session, rig.profile.tap_rate)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (pi, plate) in plates.iter().enumerate() {
        for (ki, &k) in cfg.stiffness.iter().enumerate() {
            let s = seed::derive(seed, &[seed::tag("exp1"), pi as u64, ki as u64]);
            let out = simulate_session(plate, k, &rig, &cfg.session, s)
                .map_err(|e| e.to_string())
                .and_then(|sig| extract_features(&sig, &cfg.features).map_err(|e| e.to_string()));
            match out {
                Ok(features) => rows.push(FeatureRow {
                    plate: plate.label.clone(),
                    k_des: k,
                    features,
                }),
                Err(error) => {
                    warn!("{} @ {k} N/m skipped: {error}", plate.label);
                    failures.push(CellFailure {
                        plate: plate.label.clone(),
                        k_des: k,
                        error,
                    });
                }
            }
        }
        info!("{} done", plate.label);
    }
    let anova = if plates.len() < 2 || cfg.stiffness.len() < 2 {
        info!("single level on one factor; ANOVA skipped");
        None
    } else if !failures.is_empty() {
        warn!("{} cells failed; ANOVA skipped", failures.len());
        None
    } else {
        Some(sc_anova(&rows))
    };
    Ok(Exp1Result {
        plates,
        rows,
        failures,
        anova,
    })
}

/// Two-way ANOVA of the spectral centroid, hardness × stiffness, one
/// representative tap per cell.
pub fn sc_anova(rows: &[FeatureRow]) -> Result<AnovaTable, StatsError> {
    let ks: Vec<String> = rows.iter().map(|r| format!("{}", r.k_des)).collect();
    let table = FactorialTable::from_records(
        "hardness",
        "stiffness",
        rows.iter()
            .zip(&ks)
            .map(|(r, k)| (r.plate.as_str(), k.as_str(), r.features.spectral_centroid)),
    );
    two_way_anova(&table, TwoWayModel::Additive)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp2Config {
    /// Plate labels; P1..P5 when absent.
    pub plates: Option<Vec<String>>,
    pub references: Vec<f64>,
    pub runs_per_cell: usize,
    pub observer: MaskingModel,
    pub start_k: f64,
    /// Fixed step; the reference-dependent rule when absent.
    pub step: Option<f64>,
    pub reversals_to_stop: usize,
    pub forgiveness_window: usize,
    pub max_trials: usize,
}

impl Default for Exp2Config {
    fn default() -> Self {
        Self {
            plates: None,
            references: REFERENCES.to_vec(),
            runs_per_cell: 200,
            observer: MaskingModel::default(),
            start_k: 200.0,
            step: None,
            reversals_to_stop: 5,
            forgiveness_window: 4,
            max_trials: 200,
        }
    }
}

impl Exp2Config {
    pub fn plate_set(&self) -> Result<Vec<PlateSpec>, ContactError> {
        resolve(&self.plates, selected_plates)
    }

    pub fn staircase(&self, reference_k: f64) -> StaircaseConfig {
        StaircaseConfig {
            reference_k,
            start_k: self.start_k,
            step: self.step.unwrap_or_else(|| default_step(reference_k)),
            reversals_to_stop: self.reversals_to_stop,
            forgiveness_window: self.forgiveness_window,
            max_trials: self.max_trials,
        }
    }
}

pub fn run_experiment2(
    cfg: &Exp2Config,
    seed: u64,
) -> Result<(Vec<PlateSpec>, Vec<GridRow>), PsychError> {
    let plates = cfg.plate_set()?;
    for &r in &cfg.references {
        cfg.staircase(r).validate()?;
    }
    let levels = MaskingModel::hardness_levels(&plates)?;
    let rows = weber_grid(
        &plates,
        &cfg.references,
        |i, _, r| cfg.observer.observer(levels[i], r),
        cfg.runs_per_cell,
        seed,
        |r| cfg.staircase(r),
    )?;
    Ok((plates, rows))
}
