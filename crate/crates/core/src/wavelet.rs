//! Continuous wavelet transform with Morlet and Mexican-hat mother wavelets.
//!
//! The transform is a direct convolution on the daily sample grid:
//!
//! ```text
//! W[j][b] = (1/√a_j) · Σ_t x[t] · conj(ψ((t − b) / a_j))
//! ```
//!
//! with zero padding outside the series and the wavelet truncated at
//! `|t/a| ≤ 8`. Spectrograms store `|W|`; [`transform`] exposes the complex
//! coefficients before the magnitude is taken.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::TimeSeries;

/// Half-width of the wavelet support in units of the scale.
pub const SUPPORT_RADIUS: f64 = 8.0;

/// Edge-affected zone of the cone of influence, in units of the scale.
pub const COI_FACTOR: f64 = SQRT_2;

pub const DEFAULT_OMEGA0: f64 = 6.0;

/// Shortest series accepted by [`default_scales`].
pub const MIN_LADDER_LENGTH: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum WaveletError {
    #[error("series is empty")]
    EmptySeries,
    #[error("series of {0} samples is too short (need at least {1})")]
    TooShort(usize, usize),
    #[error("scale ladder must be non-empty, start at 1 or above and strictly increase")]
    BadLadder,
    #[error("largest scale {scale} exceeds a quarter of the series length {len}")]
    ScaleTooLarge { scale: f64, len: usize },
    #[error("Morlet centre frequency must be positive, got {0}")]
    BadOmega0(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveletKind {
    Morlet,
    MexicanHat,
}

impl WaveletKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WaveletKind::Morlet => "morlet",
            WaveletKind::MexicanHat => "mexican_hat",
        }
    }
}

impl fmt::Display for WaveletKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WaveletKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "morlet" => Ok(Self::Morlet),
            "mexican_hat" | "mexhat" => Ok(Self::MexicanHat),
            other => Err(format!("unknown wavelet {other:?} (expected morlet or mexican_hat)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotherWavelet {
    Morlet { omega0: f64 },
    MexicanHat,
}

impl MotherWavelet {
    pub fn morlet(omega0: f64) -> Result<Self, WaveletError> {
        if !(omega0 > 0.0) || !omega0.is_finite() {
            return Err(WaveletError::BadOmega0(omega0));
        }
        if omega0 < 5.0 {
            log::warn!("Morlet omega0 = {omega0} is below 5; the wavelet is poorly localized in frequency");
        }
        Ok(MotherWavelet::Morlet { omega0 })
    }

    pub fn kind(&self) -> WaveletKind {
        match self {
            MotherWavelet::Morlet { .. } => WaveletKind::Morlet,
            MotherWavelet::MexicanHat => WaveletKind::MexicanHat,
        }
    }

    pub fn omega0(&self) -> Option<f64> {
        match *self {
            MotherWavelet::Morlet { omega0 } => Some(omega0),
            MotherWavelet::MexicanHat => None,
        }
    }

    /// Angular frequency (radians per unit of `t`) at which the Fourier
    /// transform of the mother wavelet peaks.
    pub fn peak_frequency(&self) -> f64 {
        match *self {
            MotherWavelet::Morlet { omega0 } => omega0,
            MotherWavelet::MexicanHat => std::f64::consts::SQRT_2,
        }
    }

    /// Smallest scale, in samples, whose peak frequency is at or below the
    /// Nyquist frequency. Finer rows only carry aliased energy.
    pub fn nyquist_scale(&self) -> f64 {
        self.peak_frequency() / std::f64::consts::PI
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        match *self {
            MotherWavelet::Morlet { omega0 } => eval_morlet(t, omega0),
            MotherWavelet::MexicanHat => Complex64::new(eval_mexican_hat(t), 0.0),
        }
    }

    /// `|Σ ψ(t_i)·dt|` over the truncated support; zero for an admissible wavelet.
    pub fn mean_residual(&self, dt: f64) -> f64 {
        let steps = (2.0 * SUPPORT_RADIUS / dt).round() as i64;
        let sum: Complex64 = (0..=steps).map(|i| self.eval(-SUPPORT_RADIUS + i as f64 * dt)).sum();
        (sum * dt).norm()
    }
}

impl Default for MotherWavelet {
    fn default() -> Self {
        MotherWavelet::Morlet { omega0: DEFAULT_OMEGA0 }
    }
}

/// L²-normalised negative second derivative of a Gaussian.
pub fn eval_mexican_hat(t: f64) -> f64 {
    let norm = 2.0 / (3f64.sqrt() * PI.powf(0.25));
    norm * (1.0 - t * t) * (-t * t / 2.0).exp()
}

/// Morlet wavelet with the admissibility correction term.
pub fn eval_morlet(t: f64, omega0: f64) -> Complex64 {
    let envelope = PI.powf(-0.25) * (-t * t / 2.0).exp();
    let carrier = Complex64::from_polar(1.0, omega0 * t) - (-omega0 * omega0 / 2.0).exp();
    carrier * envelope
}

/// Strictly increasing scales, in days, starting at 1 or above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScaleLadder(Vec<f64>);

impl ScaleLadder {
    pub fn new(scales: Vec<f64>) -> Result<Self, WaveletError> {
        let increasing = scales.windows(2).all(|w| w[0] < w[1]);
        match scales.first() {
            Some(&first) if first >= 1.0 && increasing && scales.iter().all(|s| s.is_finite()) => Ok(Self(scales)),
            _ => Err(WaveletError::BadLadder),
        }
    }

    pub fn scales(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        *self.0.last().expect("ladder is non-empty")
    }
}

impl TryFrom<Vec<f64>> for ScaleLadder {
    type Error = WaveletError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        ScaleLadder::new(v)
    }
}

impl From<ScaleLadder> for Vec<f64> {
    fn from(l: ScaleLadder) -> Self {
        l.0
    }
}

/// Quarter-octave ladder `2^(j/4)` up to a quarter of the series length.
pub fn default_scales(series_length: usize) -> Result<ScaleLadder, WaveletError> {
    if series_length < MIN_LADDER_LENGTH {
        return Err(WaveletError::TooShort(series_length, MIN_LADDER_LENGTH));
    }
    let cap = series_length as f64 / 4.0;
    let scales: Vec<f64> = (0..)
        .map(|j| 2f64.powf(j as f64 / 4.0))
        .take_while(|&a| a <= cap)
        .collect();
    ScaleLadder::new(scales)
}

/// Magnitude scalogram of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub component_id: u32,
    pub start: NaiveDate,
    pub wavelet: MotherWavelet,
    pub scales: ScaleLadder,
    /// `coefficients[scale][day]`, non-negative.
    pub coefficients: Vec<Vec<f64>>,
    /// `true` where the coefficient lies inside the cone of influence.
    pub coi_mask: Vec<Vec<bool>>,
    pub coi_factor: f64,
}

impl Spectrogram {
    pub fn days(&self) -> usize {
        self.coefficients.first().map_or(0, Vec::len)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.scales.len(), self.days())
    }
}

/// Cone-of-influence mask: a sample is valid when its distance to the nearer
/// series edge is at least `factor · a`.
pub fn coi_mask(scales: &ScaleLadder, len: usize, factor: f64) -> Vec<Vec<bool>> {
    scales
        .scales()
        .iter()
        .map(|&a| {
            (0..len)
                .map(|b| {
                    let edge = b.min(len - 1 - b) as f64;
                    edge >= factor * a
                })
                .collect()
        })
        .collect()
}

fn check_inputs(len: usize, scales: &ScaleLadder) -> Result<(), WaveletError> {
    if len == 0 {
        return Err(WaveletError::EmptySeries);
    }
    if len < 4 {
        return Err(WaveletError::TooShort(len, 4));
    }
    if scales.is_empty() {
        return Err(WaveletError::BadLadder);
    }
    if scales.max() > len as f64 / 4.0 {
        return Err(WaveletError::ScaleTooLarge {
            scale: scales.max(),
            len,
        });
    }
    Ok(())
}

/// Conjugated, scale-normalised wavelet sampled at integer offsets
/// `-K..=K`, `K = floor(8a)`.
fn kernel(wavelet: &MotherWavelet, a: f64) -> (usize, Vec<Complex64>) {
    let half = (SUPPORT_RADIUS * a).floor() as usize;
    let norm = 1.0 / a.sqrt();
    let taps = (0..=2 * half)
        .map(|i| {
            let k = i as f64 - half as f64;
            wavelet.eval(k / a).conj() * norm
        })
        .collect();
    (half, taps)
}

fn transform_row(values: &[f64], wavelet: &MotherWavelet, a: f64) -> Vec<Complex64> {
    let n = values.len();
    let (half, taps) = kernel(wavelet, a);
    (0..n)
        .map(|b| {
            let lo = b.saturating_sub(half);
            let hi = (b + half).min(n - 1);
            let offset = half + lo - b;
            values[lo..=hi]
                .iter()
                .zip(&taps[offset..])
                .fold(Complex64::new(0.0, 0.0), |acc, (&x, &w)| acc + w * x)
        })
        .collect()
}

/// Complex coefficients `W[scale][day]`. Rows are computed in parallel.
pub fn transform(
    values: &[f64],
    wavelet: &MotherWavelet,
    scales: &ScaleLadder,
) -> Result<Vec<Vec<Complex64>>, WaveletError> {
    check_inputs(values.len(), scales)?;
    Ok(scales
        .scales()
        .par_iter()
        .map(|&a| transform_row(values, wavelet, a))
        .collect())
}

/// Magnitude spectrogram of raw values.
pub fn cwt_values(
    component_id: u32,
    start: NaiveDate,
    values: &[f64],
    wavelet: &MotherWavelet,
    scales: &ScaleLadder,
) -> Result<Spectrogram, WaveletError> {
    let coefficients = transform(values, wavelet, scales)?
        .into_iter()
        .map(|row| row.into_iter().map(|w| w.norm()).collect())
        .collect();
    Ok(Spectrogram {
        component_id,
        start,
        wavelet: *wavelet,
        scales: scales.clone(),
        coefficients,
        coi_mask: coi_mask(scales, values.len(), COI_FACTOR),
        coi_factor: COI_FACTOR,
    })
}

pub fn cwt(series: &TimeSeries, wavelet: &MotherWavelet, scales: &ScaleLadder) -> Result<Spectrogram, WaveletError> {
    cwt_values(series.component_id, series.start, &series.as_f64(), wavelet, scales)
}
