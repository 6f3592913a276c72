//! Sampled force records and their on-disk form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("sample rate must be positive and finite, got {0}")]
    SampleRate(f64),
    #[error("sample {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("malformed signal file: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a signal came from. Everything is optional so that imported
/// recordings can carry whatever they have.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalMeta {
    pub plate: Option<String>,
    pub k_des: Option<f64>,
    pub seed: Option<u64>,
    pub profile: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TapSignal {
    /// Contact force in N.
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub meta: SignalMeta,
}

impl TapSignal {
    pub fn new(samples: Vec<f64>, sample_rate: f64, meta: SignalMeta) -> Result<Self, SignalError> {
        let s = Self {
            samples,
            sample_rate,
            meta,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(SignalError::SampleRate(self.sample_rate));
        }
        if let Some((index, &value)) = self
            .samples
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(SignalError::NonFinite { index, value });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Record length in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn time_of(&self, index: usize) -> f64 {
        index as f64 / self.sample_rate
    }

    /// Trapezoidal integral of the force (N·s).
    pub fn impulse(&self) -> f64 {
        let dt = 1.0 / self.sample_rate;
        self.samples
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]) * dt)
            .sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().copied().fold(0.0, f64::max)
    }

    /// `t_s,force_N` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SignalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", "force_N"])?;
        for (i, f) in self.samples.iter().enumerate() {
            w.write_record([format!("{:.6}", self.time_of(i)), format!("{f:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Sidecar with provenance and the sample rate.
    pub fn write_sidecar<W: Write>(&self, out: W) -> Result<(), SignalError> {
        let doc = Sidecar {
            sample_rate: self.sample_rate,
            samples: self.samples.len(),
            meta: self.meta.clone(),
        };
        serde_json::to_writer_pretty(out, &doc)?;
        Ok(())
    }

    /// Read a `t_s,force_N` table. The sample rate is taken from the
    /// sidecar when given, otherwise inferred from the time column.
    pub fn read_csv<R: Read>(input: R, sample_rate: Option<f64>) -> Result<Self, SignalError> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let (ti, fi) = match (col("t_s"), col("force_N")) {
            (Some(t), Some(f)) => (t, f),
            _ => {
                return Err(SignalError::Format(
                    "expected columns t_s and force_N".into(),
                ))
            }
        };
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64, SignalError> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| {
                        SignalError::Format(format!("bad number on data row {}", line + 1))
                    })
            };
            times.push(parse(ti)?);
            samples.push(parse(fi)?);
        }
        let rate = match sample_rate {
            Some(r) => r,
            None => {
                if times.len() < 2 {
                    return Err(SignalError::Format(
                        "need at least two rows to infer the sample rate".into(),
                    ));
                }
                let span = times[times.len() - 1] - times[0];
                (times.len() - 1) as f64 / span
            }
        };
        Self::new(samples, rate, SignalMeta::default())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub sample_rate: f64,
    pub samples: usize,
    #[serde(flatten)]
    pub meta: SignalMeta,
}
