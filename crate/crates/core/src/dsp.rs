//! Tap analysis: crop, peak detection, representative tap, DFT, spectral
//! centroid, dominant frequency and duration classes.

use std::io::Write;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::TapSignal;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("cannot crop [{start}, {end}) s from a {duration} s signal")]
    Crop { start: f64, end: f64, duration: f64 },
    #[error("threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("no taps to choose from")]
    NoTaps,
    #[error("segment has {0} samples, need at least 2")]
    TooShort(usize),
    #[error("spectrum is empty")]
    EmptySpectrum,
    #[error("spectral centroid undefined for an all-zero spectrum")]
    ZeroSpectrum,
    #[error("duration {0} ms outside [20, 288] ms")]
    DurationRange(f64),
}

/// Samples with `t ∈ [start, end)`.
pub fn crop(signal: &TapSignal, start: f64, end: f64) -> Result<TapSignal, DspError> {
    let duration = signal.duration();
    let eps = 0.5 / signal.sample_rate;
    if !(start >= 0.0 && start < end && end <= duration + eps) {
        return Err(DspError::Crop {
            start,
            end,
            duration,
        });
    }
    let first = (start * signal.sample_rate).ceil() as usize;
    let last = ((end * signal.sample_rate).ceil() as usize).min(signal.len());
    Ok(TapSignal {
        samples: signal.samples[first..last].to_vec(),
        sample_rate: signal.sample_rate,
        meta: signal.meta.clone(),
    })
}

/// A detected tap. Bounds are sample indices, end-exclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapSegment {
    pub peak_index: usize,
    pub peak_value: f64,
    /// Where force stays at or above the contact floor around the peak.
    pub start: usize,
    pub end: usize,
    /// Contact span widened outward to the nearest local minima; this is
    /// what goes into the DFT.
    pub analysis_start: usize,
    pub analysis_end: usize,
}

impl TapSegment {
    pub fn duration(&self, sample_rate: f64) -> f64 {
        (self.end - self.start) as f64 / sample_rate
    }

    pub fn analysis<'a>(&self, samples: &'a [f64]) -> &'a [f64] {
        &samples[self.analysis_start..self.analysis_end]
    }
}

/// Default contact floor as a fraction of each tap's peak.
pub const CONTACT_FLOOR: f64 = 0.02;

fn bounds(x: &[f64], peak: usize, floor_fraction: f64) -> (usize, usize, usize, usize) {
    let floor = floor_fraction * x[peak];
    let mut a = peak;
    while a > 0 && x[a - 1] >= floor {
        a -= 1;
    }
    let mut b = peak;
    while b + 1 < x.len() && x[b + 1] >= floor {
        b += 1;
    }
    let mut lo = a;
    while lo > 0 && x[lo - 1] < x[lo] {
        lo -= 1;
    }
    let mut hi = b;
    while hi + 1 < x.len() && x[hi + 1] < x[hi] {
        hi += 1;
    }
    (a, b + 1, lo, hi + 1)
}

/// Local maxima above `threshold`, at least `min_separation` seconds apart.
/// Where two candidates are too close the larger one wins.
pub fn detect_taps_with_floor(
    signal: &TapSignal,
    threshold: f64,
    min_separation: f64,
    floor_fraction: f64,
) -> Result<Vec<TapSegment>, DspError> {
    if !(threshold > 0.0) {
        return Err(DspError::Threshold(threshold));
    }
    let x = &signal.samples;
    let n = x.len();
    let mut candidates = Vec::new();
    let mut i = 0;
    while i < n {
        if x[i] > threshold && (i == 0 || x[i] > x[i - 1]) {
            // walk a plateau to its end
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 == n || x[j + 1] < x[i] {
                candidates.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    let gap = (min_separation * signal.sample_rate).round() as usize;
    // strongest first, earliest on ties
    candidates.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| k.abs_diff(c) >= gap) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    Ok(kept
        .into_iter()
        .map(|p| {
            let (start, end, analysis_start, analysis_end) = bounds(x, p, floor_fraction);
            TapSegment {
                peak_index: p,
                peak_value: x[p],
                start,
                end,
                analysis_start,
                analysis_end,
            }
        })
        .collect())
}

pub fn detect_taps(
    signal: &TapSignal,
    threshold: f64,
    min_separation: f64,
) -> Result<Vec<TapSegment>, DspError> {
    detect_taps_with_floor(signal, threshold, min_separation, CONTACT_FLOOR)
}

/// The tap whose peak is closest to the mean peak, earliest on ties.
pub fn select_representative_tap(taps: &[TapSegment]) -> Result<TapSegment, DspError> {
    if taps.is_empty() {
        return Err(DspError::NoTaps);
    }
    let mean = taps.iter().map(|t| t.peak_value).sum::<f64>() / taps.len() as f64;
    let mut best = taps[0];
    for t in &taps[1..] {
        if (t.peak_value - mean).abs() < (best.peak_value - mean).abs() {
            best = *t;
        }
    }
    Ok(best)
}

/// One-sided DFT magnitude spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    /// Raw `|X_k|`, unnormalised.
    pub mags: Vec<f64>,
    /// Transform length after padding.
    pub n_fft: usize,
}

impl Spectrum {
    pub fn resolution(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1]
        } else {
            0.0
        }
    }

    /// `(1/N)·Σ|X_k|²` over the full two-sided spectrum, equal to the
    /// time-domain energy `Σ x_n²` by Parseval.
    pub fn two_sided_energy(&self) -> f64 {
        let n = self.n_fft;
        let last = self.mags.len() - 1;
        let sum: f64 = self
            .mags
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let w = if k == 0 || (n.is_multiple_of(2) && k == last) {
                    1.0
                } else {
                    2.0
                };
                w * m * m
            })
            .sum();
        sum / n as f64
    }

    /// Linear interpolation of the magnitude at frequency `f`.
    pub fn magnitude_at(&self, f: f64) -> f64 {
        let df = self.resolution();
        if df == 0.0 || f <= 0.0 {
            return self.mags[0];
        }
        let pos = f / df;
        let i = pos.floor() as usize;
        if i + 1 >= self.mags.len() {
            return *self.mags.last().unwrap();
        }
        let frac = pos - i as f64;
        self.mags[i] * (1.0 - frac) + self.mags[i + 1] * frac
    }
}

/// DFT of `segment` zero-padded to the next power of two.
pub fn dft_magnitude(segment: &[f64], sample_rate: f64) -> Result<Spectrum, DspError> {
    dft_magnitude_padded(segment, sample_rate, 0)
}

/// As [`dft_magnitude`], padding to at least `min_len` as well.
pub fn dft_magnitude_padded(
    segment: &[f64],
    sample_rate: f64,
    min_len: usize,
) -> Result<Spectrum, DspError> {
    if segment.len() < 2 {
        return Err(DspError::TooShort(segment.len()));
    }
    let n = segment.len().max(min_len).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = segment.iter().map(|&x| Complex::new(x, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2 + 1;
    Ok(Spectrum {
        freqs: (0..half)
            .map(|k| k as f64 * sample_rate / n as f64)
            .collect(),
        mags: buf[..half].iter().map(|c| c.norm()).collect(),
        n_fft: n,
    })
}

/// `Σ f·x / Σ x`.
pub fn spectral_centroid(spec: &Spectrum) -> Result<f64, DspError> {
    if spec.mags.is_empty() {
        return Err(DspError::EmptySpectrum);
    }
    let total: f64 = spec.mags.iter().sum();
    if !(total > 0.0) {
        return Err(DspError::ZeroSpectrum);
    }
    let weighted: f64 = spec.freqs.iter().zip(&spec.mags).map(|(f, x)| f * x).sum();
    Ok(weighted / total)
}

/// Largest non-DC bin, lowest frequency on ties.
pub fn dominant_frequency(spec: &Spectrum) -> Result<(f64, f64), DspError> {
    if spec.mags.len() < 2 {
        return Err(DspError::EmptySpectrum);
    }
    let mut best = 1;
    for k in 2..spec.mags.len() {
        if spec.mags[k] > spec.mags[best] {
            best = k;
        }
    }
    Ok((spec.freqs[best], spec.mags[best]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DurationClass {
    VeryShort,
    Short,
    Long,
    VeryLong,
}

impl std::fmt::Display for DurationClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DurationClass::VeryShort => "VeryShort",
            DurationClass::Short => "Short",
            DurationClass::Long => "Long",
            DurationClass::VeryLong => "VeryLong",
        })
    }
}

/// Class edges in ms.
pub const DURATION_EDGES: [f64; 5] = [20.0, 87.0, 154.0, 221.0, 288.0];

/// `[20,87) [87,154) [154,221) [221,288]` ms.
pub fn classify_duration(duration: f64) -> Result<DurationClass, DspError> {
    // durations arrive in seconds; compare in ms with a little slack for
    // values such as 0.087 that are not exact in binary
    let ms = duration * 1e3;
    let eps = 1e-9;
    let [lo, e1, e2, e3, hi] = DURATION_EDGES;
    if !(ms >= lo - eps && ms <= hi + eps) {
        return Err(DspError::DurationRange(ms));
    }
    Ok(if ms < e1 - eps {
        DurationClass::VeryShort
    } else if ms < e2 - eps {
        DurationClass::Short
    } else if ms < e3 - eps {
        DurationClass::Long
    } else {
        DurationClass::VeryLong
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub crop: bool,
    pub crop_start: f64,
    pub crop_end: f64,
    /// Detection threshold as a fraction of the record maximum.
    pub threshold_fraction: f64,
    /// s.
    pub min_separation: f64,
    /// Contact floor as a fraction of each tap's peak.
    pub floor_fraction: f64,
    /// Minimum DFT length; segments are zero-padded to this.
    pub fft_len: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            crop: true,
            crop_start: 3.0,
            crop_end: 10.0,
            threshold_fraction: 0.2,
            min_separation: 0.1,
            floor_fraction: CONTACT_FLOOR,
            fft_len: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TapFeatures {
    pub spectral_centroid: f64,
    pub sc_magnitude: f64,
    pub dominant_freq: f64,
    pub dominant_mag: f64,
    /// s.
    pub duration: f64,
    pub duration_class: Option<DurationClass>,
    pub peak: f64,
    pub taps_detected: usize,
}

/// Features of one isolated tap segment.
pub fn segment_features(
    samples: &[f64],
    tap: &TapSegment,
    sample_rate: f64,
    fft_len: usize,
) -> Result<TapFeatures, DspError> {
    let seg = tap.analysis(samples);
    let spec = dft_magnitude_padded(seg, sample_rate, fft_len)?;
    let sc = spectral_centroid(&spec)?;
    let mean = seg.iter().sum::<f64>() / seg.len() as f64;
    let centred: Vec<f64> = seg.iter().map(|x| x - mean).collect();
    let (dominant_freq, dominant_mag) =
        dominant_frequency(&dft_magnitude_padded(&centred, sample_rate, spec.n_fft)?)?;
    let duration = tap.duration(sample_rate);
    Ok(TapFeatures {
        spectral_centroid: sc,
        sc_magnitude: spec.magnitude_at(sc),
        dominant_freq,
        dominant_mag,
        duration,
        duration_class: classify_duration(duration).ok(),
        peak: tap.peak_value,
        taps_detected: 1,
    })
}

/// Full pipeline: crop, detect, pick the representative tap, analyse it.
pub fn extract_features(signal: &TapSignal, cfg: &FeatureConfig) -> Result<TapFeatures, DspError> {
    let cropped;
    let sig = if cfg.crop {
        cropped = crop(signal, cfg.crop_start, cfg.crop_end)?;
        &cropped
    } else {
        signal
    };
    let peak = sig.peak();
    if !(peak > 0.0) {
        return Err(DspError::NoTaps);
    }
    let taps = detect_taps_with_floor(
        sig,
        cfg.threshold_fraction * peak,
        cfg.min_separation,
        cfg.floor_fraction,
    )?;
    let rep = select_representative_tap(&taps)?;
    let mut f = segment_features(&sig.samples, &rep, sig.sample_rate, cfg.fft_len)?;
    f.taps_detected = taps.len();
    Ok(f)
}

/// One row of the feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub plate: String,
    pub k_des: f64,
    pub features: TapFeatures,
}

pub fn write_features_csv<W: Write>(out: W, rows: &[FeatureRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "plate",
        "k_des_Npm",
        "sc_Hz",
        "sc_mag",
        "domfreq_Hz",
        "dommag",
        "duration_ms",
        "duration_class",
    ])?;
    for r in rows {
        let f = &r.features;
        w.write_record([
            r.plate.clone(),
            format!("{}", r.k_des),
            format!("{:.4}", f.spectral_centroid),
            format!("{:.6}", f.sc_magnitude),
            format!("{:.4}", f.dominant_freq),
            format!("{:.6}", f.dominant_mag),
            format!("{:.3}", f.duration * 1e3),
            f.duration_class.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
