//! Modified 1-up/1-down staircase for two-alternative forced choice,
//! simulated observers and Weber fractions.
//!
//! The test stiffness starts low. A correct answer moves it one step
//! towards the reference, a wrong one moves it back. Every change of
//! direction is a reversal, and the run ends once enough reversals
//! survive. An error followed by a full window of correct answers is
//! treated as a slip: the reversals it produced are forgiven.

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use thiserror::Error;

use crate::contact::{shore_to_modulus, ContactError, PlateSpec};
use crate::seed::{self, SimRng};

/// Reference stiffnesses of the second experiment (N/m).
pub const REFERENCES: [f64; 4] = [500.0, 1000.0, 1500.0, 2000.0];

#[derive(Debug, Error)]
pub enum PsychError {
    #[error("invalid staircase configuration: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("staircase already terminated")]
    Terminated,
    #[error("no convergence after {trials} trials ({reversals} reversals)")]
    NonConvergence {
        trials: usize,
        reversals: usize,
        state: Box<StaircaseState>,
    },
    #[error(transparent)]
    Contact(#[from] ContactError),
}

/// Step used with a given reference: 50 N/m at 500 N/m, 100 N/m above.
pub fn default_step(reference_k: f64) -> f64 {
    if reference_k <= 500.0 {
        50.0
    } else {
        100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaircaseConfig {
    pub reference_k: f64,
    pub start_k: f64,
    pub step: f64,
    pub reversals_to_stop: usize,
    /// Consecutive correct answers that forgive an error. 0 disables.
    pub forgiveness_window: usize,
    pub max_trials: usize,
}

impl StaircaseConfig {
    pub fn for_reference(reference_k: f64) -> Self {
        Self {
            reference_k,
            start_k: 200.0,
            step: default_step(reference_k),
            reversals_to_stop: 5,
            forgiveness_window: 4,
            max_trials: 200,
        }
    }

    pub fn validate(&self) -> Result<(), PsychError> {
        let bad = |m: String| Err(PsychError::Config(m));
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step {} N/m", self.step));
        }
        if !(self.start_k >= 0.0 && self.start_k < self.reference_k) {
            return bad(format!(
                "start {} N/m must lie below the reference {} N/m",
                self.start_k, self.reference_k
            ));
        }
        if self.start_k > self.reference_k - self.step {
            return bad(format!(
                "start {} N/m above reference minus one step",
                self.start_k
            ));
        }
        if self.reversals_to_stop == 0 || self.max_trials == 0 {
            return bad("reversals_to_stop and max_trials must be positive".into());
        }
        if !REFERENCES.contains(&self.reference_k) {
            warn!(
                "reference {} N/m is not one of the experiment values {:?}",
                self.reference_k, REFERENCES
            );
        }
        Ok(())
    }

    /// Ceiling of the test stiffness.
    pub fn test_ceiling(&self) -> f64 {
        self.reference_k - self.step
    }

    /// Every length scaled by `f`.
    pub fn scaled(&self, f: f64) -> Self {
        Self {
            reference_k: self.reference_k * f,
            start_k: self.start_k * f,
            step: self.step * f,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    RefFirst,
    TestFirst,
}

impl std::fmt::Display for Order {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Order::RefFirst => "ref_first",
            Order::TestFirst => "test_first",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    /// 1-based.
    pub trial: usize,
    pub order: Order,
    pub test_k: f64,
    pub correct: bool,
    pub reversal: bool,
    pub forgiven: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reversal {
    pub trial: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Pending {
    trials: Vec<usize>,
    streak: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaircaseState {
    pub test_k: f64,
    pub direction: Option<Direction>,
    /// Surviving reversals.
    pub reversals: Vec<Reversal>,
    pub log: Vec<TrialRecord>,
    pending: Option<Pending>,
    done: bool,
}

impl StaircaseState {
    pub fn new(cfg: &StaircaseConfig) -> Self {
        Self {
            test_k: cfg.start_k,
            direction: None,
            reversals: Vec::new(),
            log: Vec::new(),
            pending: None,
            done: false,
        }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Correct answers since the last error, when one is awaiting forgiveness.
    pub fn correct_streak_since_error(&self) -> Option<usize> {
        self.pending.as_ref().map(|p| p.streak)
    }

    pub fn reversal_values(&self) -> Vec<f64> {
        self.reversals.iter().map(|r| r.value).collect()
    }

    /// Apply one response to the current test stiffness.
    pub fn record_response(
        &mut self,
        cfg: &StaircaseConfig,
        correct: bool,
        order: Order,
    ) -> Result<(), PsychError> {
        if self.done {
            return Err(PsychError::Terminated);
        }
        let trial = self.log.len() + 1;
        let dir = if correct {
            Direction::Up
        } else {
            Direction::Down
        };
        let reversal = self.direction.is_some_and(|d| d != dir);
        if reversal {
            self.reversals.push(Reversal {
                trial,
                value: self.test_k,
            });
        }
        self.direction = Some(dir);
        self.log.push(TrialRecord {
            trial,
            order,
            test_k: self.test_k,
            correct,
            reversal,
            forgiven: false,
        });

        if cfg.forgiveness_window > 0 {
            if !correct {
                self.pending = Some(Pending {
                    trials: if reversal { vec![trial] } else { Vec::new() },
                    streak: 0,
                });
            } else if let Some(p) = self.pending.as_mut() {
                if reversal {
                    p.trials.push(trial);
                }
                p.streak += 1;
                if p.streak >= cfg.forgiveness_window {
                    let p = self.pending.take().unwrap();
                    self.reversals.retain(|r| !p.trials.contains(&r.trial));
                    for t in p.trials {
                        self.log[t - 1].forgiven = true;
                    }
                }
            }
        }

        self.test_k = if correct {
            (self.test_k + cfg.step).min(cfg.test_ceiling())
        } else {
            (self.test_k - cfg.step).max(cfg.start_k)
        };
        if self.reversals.len() >= cfg.reversals_to_stop {
            self.done = true;
        }
        Ok(())
    }
}

/// Standard normal CDF.
pub fn phi(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observer {
    /// Discrimination noise (N/m).
    pub sigma: f64,
    pub lapse_rate: f64,
}

impl Observer {
    pub fn validate(&self) -> Result<(), PsychError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(PsychError::Config(format!("observer sigma {}", self.sigma)));
        }
        if !(0.0..=0.2).contains(&self.lapse_rate) {
            return Err(PsychError::Config(format!(
                "lapse rate {} outside [0, 0.2]",
                self.lapse_rate
            )));
        }
        Ok(())
    }

    pub fn p_correct(&self, ref_k: f64, test_k: f64) -> f64 {
        let d = (ref_k - test_k) / (self.sigma * std::f64::consts::SQRT_2);
        (1.0 - self.lapse_rate) * phi(d) + 0.5 * self.lapse_rate
    }

    pub fn respond(&self, ref_k: f64, test_k: f64, rng: &mut SimRng) -> Result<bool, PsychError> {
        if test_k >= ref_k {
            return Err(PsychError::Protocol(format!(
                "test {test_k} N/m not below reference {ref_k} N/m"
            )));
        }
        Ok(rng.random::<f64>() < self.p_correct(ref_k, test_k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeberResult {
    pub threshold_k: f64,
    pub jnd: f64,
    pub weber_fraction: f64,
}

impl WeberResult {
    pub fn from_reversals(values: &[f64], reference_k: f64) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let threshold_k = values.iter().sum::<f64>() / values.len() as f64;
        let jnd = reference_k - threshold_k;
        Some(Self {
            threshold_k,
            jnd,
            weber_fraction: jnd / reference_k,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaircaseRun {
    pub result: WeberResult,
    pub state: StaircaseState,
}

pub fn run_staircase(
    cfg: &StaircaseConfig,
    observer: &Observer,
    seed: u64,
) -> Result<StaircaseRun, PsychError> {
    cfg.validate()?;
    observer.validate()?;
    let mut rng = seed::rng(seed, &[seed::tag("staircase")]);
    let mut state = StaircaseState::new(cfg);
    while state.log.len() < cfg.max_trials {
        let order = if rng.random::<bool>() {
            Order::RefFirst
        } else {
            Order::TestFirst
        };
        let correct = observer.respond(cfg.reference_k, state.test_k, &mut rng)?;
        state.record_response(cfg, correct, order)?;
        if state.is_done() {
            let result = WeberResult::from_reversals(&state.reversal_values(), cfg.reference_k)
                .expect("terminated with reversals");
            return Ok(StaircaseRun { result, state });
        }
    }
    Err(PsychError::NonConvergence {
        trials: state.log.len(),
        reversals: state.reversals.len(),
        state: Box::new(state),
    })
}

pub fn write_trial_log<W: Write>(out: W, state: &StaircaseState) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "trial", "order", "test_k", "correct", "reversal", "forgiven",
    ])?;
    for t in &state.log {
        w.write_record([
            t.trial.to_string(),
            t.order.to_string(),
            format!("{}", t.test_k),
            (t.correct as u8).to_string(),
            (t.reversal as u8).to_string(),
            (t.forgiven as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Observer noise that grows with plate hardness: harder plates mask the
/// rendered stiffness.
///
/// `sigma = (base + slope·h)·ref·(ref/1000)^gamma`, where `h ∈ [0, 1]` is the
/// plate's log-modulus normalised over the plate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingModel {
    pub base: f64,
    pub slope: f64,
    pub gamma: f64,
    pub lapse_rate: f64,
}

impl Default for MaskingModel {
    fn default() -> Self {
        Self {
            base: 0.12,
            slope: 0.12,
            gamma: 1.0,
            lapse_rate: 0.0,
        }
    }
}

impl MaskingModel {
    /// Normalised hardness of each plate in `plates`.
    pub fn hardness_levels(plates: &[PlateSpec]) -> Result<Vec<f64>, PsychError> {
        let ln: Vec<f64> = plates
            .iter()
            .map(|p| shore_to_modulus(p).map(f64::ln))
            .collect::<Result<_, _>>()?;
        let lo = ln.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ln.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(ln
            .iter()
            .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect())
    }

    pub fn observer(&self, hardness: f64, reference_k: f64) -> Observer {
        Observer {
            sigma: (self.base + self.slope * hardness)
                * reference_k
                * (reference_k / 1000.0).powf(self.gamma),
            lapse_rate: self.lapse_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub plate: String,
    pub plate_index: usize,
    pub ref_k: f64,
    pub run: usize,
    pub result: Option<WeberResult>,
    pub n_trials: usize,
    pub state: StaircaseState,
}

impl GridRow {
    pub fn converged(&self) -> bool {
        self.result.is_some()
    }
}

/// Monte-Carlo table of staircase runs over plates × references. A run
/// that fails to converge is kept as a row without a result.
pub fn weber_grid<F>(
    plates: &[PlateSpec],
    references: &[f64],
    mut observer_for: F,
    runs_per_cell: usize,
    seed: u64,
    config_for: impl Fn(f64) -> StaircaseConfig,
) -> Result<Vec<GridRow>, PsychError>
where
    F: FnMut(usize, &PlateSpec, f64) -> Observer,
{
    let mut rows = Vec::with_capacity(plates.len() * references.len() * runs_per_cell);
    for (pi, plate) in plates.iter().enumerate() {
        for (ri, &ref_k) in references.iter().enumerate() {
            let cfg = config_for(ref_k);
            let obs = observer_for(pi, plate, ref_k);
            for run in 0..runs_per_cell {
                let s = seed::derive(seed, &[seed::tag("exp2"), pi as u64, ri as u64, run as u64]);
                let (result, state) = match run_staircase(&cfg, &obs, s) {
                    Ok(r) => (Some(r.result), r.state),
                    Err(PsychError::NonConvergence { state, .. }) => {
                        warn!(
                            "{} @ {} N/m run {}: no convergence",
                            plate.label, ref_k, run
                        );
                        (None, *state)
                    }
                    Err(e) => return Err(e),
                };
                rows.push(GridRow {
                    plate: plate.label.clone(),
                    plate_index: pi,
                    ref_k,
                    run,
                    result,
                    n_trials: state.log.len(),
                    state,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_grid_csv<W: Write>(out: W, rows: &[GridRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "plate",
        "ref_k",
        "run",
        "threshold_k",
        "weber_fraction",
        "n_trials",
        "converged",
    ])?;
    for r in rows {
        let (t, wf) = match r.result {
            Some(x) => (
                format!("{}", x.threshold_k),
                format!("{:.6}", x.weber_fraction),
            ),
            None => (String::new(), String::new()),
        };
        w.write_record([
            r.plate.clone(),
            format!("{}", r.ref_k),
            r.run.to_string(),
            t,
            wf,
            r.n_trials.to_string(),
            (r.converged() as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                sd: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { n, mean, sd }
    }
}

/// Weber fraction summaries keyed by (plate index, reference).
pub fn cell_summaries(rows: &[GridRow]) -> BTreeMap<(usize, u64), (String, Summary)> {
    let mut groups: BTreeMap<(usize, u64), (String, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let e = groups
            .entry((r.plate_index, r.ref_k.to_bits()))
            .or_insert_with(|| (r.plate.clone(), Vec::new()));
        if let Some(x) = r.result {
            e.1.push(x.weber_fraction);
        }
    }
    groups
        .into_iter()
        .map(|(k, (p, v))| (k, (p, Summary::of(&v))))
        .collect()
}

/// Mean Weber fraction per plate, in plate order.
pub fn wf_by_plate(rows: &[GridRow]) -> Vec<(String, Summary)> {
    let mut groups: BTreeMap<usize, (String, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let e = groups
            .entry(r.plate_index)
            .or_insert_with(|| (r.plate.clone(), Vec::new()));
        if let Some(x) = r.result {
            e.1.push(x.weber_fraction);
        }
    }
    groups
        .into_values()
        .map(|(p, v)| (p, Summary::of(&v)))
        .collect()
}

/// Mean Weber fraction per reference, ascending.
pub fn wf_by_reference(rows: &[GridRow]) -> Vec<(f64, Summary)> {
    let mut refs: Vec<f64> = rows.iter().map(|r| r.ref_k).collect();
    refs.sort_by(f64::total_cmp);
    refs.dedup();
    refs.into_iter()
        .map(|k| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.ref_k == k)
                .filter_map(|r| r.result.map(|x| x.weber_fraction))
                .collect();
            (k, Summary::of(&v))
        })
        .collect()
}
