//! Throw-in detection on a Morlet / Mexican-hat spectrogram pair.
//!
//! Each scale row is standardised with a robust z-score against the row's
//! median and MAD over cone-of-influence-valid samples. Cells at or above the
//! threshold form 8-connected clusters in the (scale, day) grid; clusters
//! whose day extents overlap are grouped across both wavelets, and each group
//! that both wavelets agree on becomes one [`Detection`].
//!
//! Timing comes from the finest hot scale of the group, where the Morlet
//! envelope peaks sit on the burst edges: the onset is the first envelope
//! maximum and the duration runs to the last one.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::add_days;
use crate::wavelet::{Spectrogram, WaveletKind};

/// Scales a raw MAD to a consistent estimate of the standard deviation of
/// normally distributed data.
pub const MAD_TO_SIGMA: f64 = 1.4826;

/// Rows need at least this many COI-valid samples to be standardised.
pub const MIN_VALID_SAMPLES: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("scale row {row} has {valid} COI-valid samples; at least {MIN_VALID_SAMPLES} are needed")]
    TooFewSamples { row: usize, valid: usize },
    #[error("scale row {0} does not exist")]
    NoSuchRow(usize),
    #[error("spectrograms do not form a Morlet / Mexican-hat pair over the same series: {0}")]
    MismatchedPair(String),
    #[error("invalid detection config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub threshold_k: f64,
    pub min_scale_days: f64,
    pub max_scale_days: f64,
    pub require_both_wavelets: bool,
    pub merge_window_days: u32,
    /// A cluster must span at least this many scale rows.
    pub min_scale_rows: usize,
    /// Divisor used on rows whose MAD is exactly zero.
    pub mad_floor: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            threshold_k: 4.0,
            min_scale_days: 2.0,
            max_scale_days: 32.0,
            require_both_wavelets: true,
            merge_window_days: 3,
            min_scale_rows: 3,
            mad_floor: 0.5,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if !(self.threshold_k > 0.0) {
            return Err(DetectError::BadConfig(format!(
                "threshold_k must be positive, got {}",
                self.threshold_k
            )));
        }
        if !(self.min_scale_days > 0.0 && self.min_scale_days < self.max_scale_days) {
            return Err(DetectError::BadConfig(format!(
                "need 0 < min_scale_days < max_scale_days, got [{}, {}]",
                self.min_scale_days, self.max_scale_days
            )));
        }
        if self.merge_window_days == 0 {
            return Err(DetectError::BadConfig("merge_window_days must be at least 1".into()));
        }
        if !(self.mad_floor > 0.0) {
            return Err(DetectError::BadConfig("mad_floor must be positive".into()));
        }
        Ok(())
    }
}

/// One detected information throw-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub component_id: u32,
    pub onset: NaiveDate,
    pub duration_days: u32,
    /// Scale of the strongest cell, in days.
    pub peak_scale: f64,
    /// Robust z-score of the strongest cell.
    pub intensity: f64,
    pub wavelets_agreeing: Vec<WaveletKind>,
}

impl Detection {
    pub fn last_day(&self) -> NaiveDate {
        add_days(self.onset, u64::from(self.duration_days.max(1)) - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowStats {
    pub median: f64,
    pub mad: f64,
}

fn median_in_place(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median and (unscaled) median absolute deviation of the COI-valid
/// samples of one scale row.
pub fn row_stats(spectrogram: &Spectrogram, row: usize) -> Result<RowStats, DetectError> {
    let coeffs = spectrogram.coefficients.get(row).ok_or(DetectError::NoSuchRow(row))?;
    let mask = &spectrogram.coi_mask[row];
    let mut valid: Vec<f64> = coeffs.iter().zip(mask).filter(|(_, &m)| m).map(|(&c, _)| c).collect();
    if valid.len() < MIN_VALID_SAMPLES {
        return Err(DetectError::TooFewSamples {
            row,
            valid: valid.len(),
        });
    }
    let median = median_in_place(&mut valid);
    let mut dev: Vec<f64> = valid.iter().map(|v| (v - median).abs()).collect();
    let mad = median_in_place(&mut dev);
    Ok(RowStats { median, mad })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HotCell {
    pub scale_index: usize,
    pub scale: f64,
    pub day: usize,
    pub z: f64,
}

/// 8-connected set of hot cells from one spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub wavelet: WaveletKind,
    pub cells: Vec<HotCell>,
}

impl Cluster {
    pub fn first_day(&self) -> usize {
        self.cells.iter().map(|c| c.day).min().expect("clusters are non-empty")
    }

    pub fn last_day(&self) -> usize {
        self.cells.iter().map(|c| c.day).max().expect("clusters are non-empty")
    }

    pub fn peak(&self) -> &HotCell {
        self.cells
            .iter()
            .max_by(|a, b| a.z.total_cmp(&b.z))
            .expect("clusters are non-empty")
    }

    pub fn scale_rows(&self) -> usize {
        self.cells.iter().map(|c| c.scale_index).collect::<BTreeSet<_>>().len()
    }

    fn overlaps(&self, other: &Cluster) -> bool {
        self.first_day() <= other.last_day() && other.first_day() <= self.last_day()
    }
}

/// Day extent of the cluster, never shorter than its peak scale.
pub fn estimate_duration(cluster: &Cluster) -> u32 {
    let extent = (cluster.last_day() - cluster.first_day() + 1) as u32;
    let floor = cluster.peak().scale.round().max(1.0) as u32;
    extent.max(floor)
}

/// Robust z-scores, `None` outside the COI, outside the scale band, on rows
/// finer than the wavelet's Nyquist scale, or on rows too short to
/// standardise.
pub fn z_scores(spectrogram: &Spectrogram, config: &DetectionConfig) -> Vec<Vec<Option<f64>>> {
    let finest = spectrogram.wavelet.nyquist_scale().max(config.min_scale_days);
    spectrogram
        .scales
        .scales()
        .iter()
        .enumerate()
        .map(|(j, &a)| {
            let days = spectrogram.days();
            if a < finest || a > config.max_scale_days {
                return vec![None; days];
            }
            let Ok(stats) = row_stats(spectrogram, j) else {
                return vec![None; days];
            };
            let spread = if stats.mad > 0.0 {
                MAD_TO_SIGMA * stats.mad
            } else {
                config.mad_floor
            };
            spectrogram.coefficients[j]
                .iter()
                .zip(&spectrogram.coi_mask[j])
                .map(|(&c, &valid)| valid.then(|| (c - stats.median) / spread))
                .collect()
        })
        .collect()
}

/// Hot-cell clusters of one spectrogram that span enough scale rows.
pub fn hot_clusters(spectrogram: &Spectrogram, config: &DetectionConfig) -> Vec<Cluster> {
    let z = z_scores(spectrogram, config);
    let rows = z.len();
    let days = spectrogram.days();
    let hot = |j: usize, b: usize| z[j][b].is_some_and(|v| v >= config.threshold_k);
    let mut seen = vec![vec![false; days]; rows];
    let mut clusters = Vec::new();

    for j0 in 0..rows {
        for b0 in 0..days {
            if seen[j0][b0] || !hot(j0, b0) {
                continue;
            }
            seen[j0][b0] = true;
            let mut stack = vec![(j0, b0)];
            let mut cells = Vec::new();
            while let Some((j, b)) = stack.pop() {
                cells.push(HotCell {
                    scale_index: j,
                    scale: spectrogram.scales.scales()[j],
                    day: b,
                    z: z[j][b].expect("hot cells have a score"),
                });
                for dj in -1i64..=1 {
                    for db in -1i64..=1 {
                        let (nj, nb) = (j as i64 + dj, b as i64 + db);
                        if nj < 0 || nb < 0 || nj >= rows as i64 || nb >= days as i64 {
                            continue;
                        }
                        let (nj, nb) = (nj as usize, nb as usize);
                        if !seen[nj][nb] && hot(nj, nb) {
                            seen[nj][nb] = true;
                            stack.push((nj, nb));
                        }
                    }
                }
            }
            cells.sort_by_key(|c| (c.scale_index, c.day));
            let cluster = Cluster {
                wavelet: spectrogram.wavelet.kind(),
                cells,
            };
            if cluster.scale_rows() >= config.min_scale_rows {
                clusters.push(cluster);
            }
        }
    }
    clusters
}

fn check_pair(morlet: &Spectrogram, mexhat: &Spectrogram) -> Result<(), DetectError> {
    let mismatch = |what: &str| Err(DetectError::MismatchedPair(what.to_string()));
    if morlet.wavelet.kind() != WaveletKind::Morlet || mexhat.wavelet.kind() != WaveletKind::MexicanHat {
        return mismatch("expected (morlet, mexican_hat)");
    }
    if morlet.component_id != mexhat.component_id {
        return mismatch("component ids differ");
    }
    if morlet.start != mexhat.start {
        return mismatch("start dates differ");
    }
    if morlet.dims() != mexhat.dims() {
        return mismatch("dimensions differ");
    }
    if morlet.scales != mexhat.scales {
        return mismatch("scale ladders differ");
    }
    Ok(())
}

/// Groups clusters whose day extents overlap, transitively.
fn group_overlapping(clusters: &[Cluster]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..clusters.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..clusters.len() {
        for j in i + 1..clusters.len() {
            if clusters[i].overlaps(&clusters[j]) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; clusters.len()];
    for i in 0..clusters.len() {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

/// Envelope maxima of one scale row among its hot cells: local maxima of |W|
/// reaching half of the row's hot maximum.
fn envelope_peaks(row: &[f64], hot_days: &[usize]) -> Vec<usize> {
    let top = hot_days.iter().map(|&d| row[d]).fold(f64::MIN, f64::max);
    hot_days
        .iter()
        .copied()
        .filter(|&d| {
            let v = row[d];
            v >= 0.5 * top && (d == 0 || v >= row[d - 1]) && (d + 1 == row.len() || v >= row[d + 1])
        })
        .collect()
}

/// Hot cells of the timing row, trimmed to the span between its first and
/// last envelope maxima. The timing row is the finest scale of `members`
/// whose maxima sit at least two scales apart (both burst edges resolved);
/// failing that, the finest hot scale.
fn timing_core(members: &[&Cluster], spectrogram: &Spectrogram) -> Cluster {
    let rows: BTreeSet<usize> = members
        .iter()
        .flat_map(|c| c.cells.iter().map(|h| h.scale_index))
        .collect();
    let cells_on = |j: usize| {
        let mut v: Vec<HotCell> = members
            .iter()
            .flat_map(|c| c.cells.iter().copied())
            .filter(|h| h.scale_index == j)
            .collect();
        v.sort_by_key(|h| h.day);
        v
    };
    let trimmed = |j: usize| {
        let cells = cells_on(j);
        let days: Vec<usize> = cells.iter().map(|h| h.day).collect();
        let peaks = envelope_peaks(&spectrogram.coefficients[j], &days);
        let span = match (peaks.first(), peaks.last()) {
            (Some(&lo), Some(&hi)) => Some((lo, hi)),
            _ => None,
        };
        let kept: Vec<HotCell> = match span {
            Some((lo, hi)) => cells.into_iter().filter(|h| h.day >= lo && h.day <= hi).collect(),
            None => cells,
        };
        (span, kept)
    };

    let finest = *rows.first().expect("groups are non-empty");
    let chosen = rows
        .iter()
        .copied()
        .find(|&j| {
            let a = spectrogram.scales.scales()[j];
            matches!(trimmed(j).0, Some((lo, hi)) if (hi - lo) as f64 >= 2.0 * a)
        })
        .unwrap_or(finest);
    Cluster {
        wavelet: spectrogram.wavelet.kind(),
        cells: trimmed(chosen).1,
    }
}

/// Locates throw-ins in a Morlet / Mexican-hat spectrogram pair.
pub fn detect_throwins(
    morlet: &Spectrogram,
    mexhat: &Spectrogram,
    config: &DetectionConfig,
) -> Result<Vec<Detection>, DetectError> {
    config.validate()?;
    check_pair(morlet, mexhat)?;

    let mut clusters = hot_clusters(morlet, config);
    clusters.extend(hot_clusters(mexhat, config));

    let mut detections = Vec::new();
    for group in group_overlapping(&clusters) {
        let members: Vec<&Cluster> = group.iter().map(|&i| &clusters[i]).collect();
        let kinds: BTreeSet<WaveletKind> = members.iter().map(|c| c.wavelet).collect();
        if config.require_both_wavelets && kinds.len() < 2 {
            continue;
        }
        let (timing_kind, timing_spec) = if kinds.contains(&WaveletKind::Morlet) {
            (WaveletKind::Morlet, morlet)
        } else {
            (WaveletKind::MexicanHat, mexhat)
        };
        let timing_members: Vec<&Cluster> = members.iter().copied().filter(|c| c.wavelet == timing_kind).collect();
        let core = timing_core(&timing_members, timing_spec);
        let peak = members
            .iter()
            .map(|c| *c.peak())
            .max_by(|a, b| a.z.total_cmp(&b.z))
            .expect("groups are non-empty");
        detections.push(Detection {
            component_id: morlet.component_id,
            onset: add_days(morlet.start, core.first_day() as u64),
            duration_days: estimate_duration(&core),
            peak_scale: peak.scale,
            intensity: peak.z,
            wavelets_agreeing: kinds.into_iter().collect(),
        });
    }
    detections.sort_by(|a, b| a.onset.cmp(&b.onset).then(a.component_id.cmp(&b.component_id)));
    Ok(merge_nearby(detections, config.merge_window_days))
}

/// Merges detections separated by fewer than `window` days: earliest onset,
/// latest end, strongest peak, union of agreeing wavelets.
pub fn merge_nearby(sorted: Vec<Detection>, window: u32) -> Vec<Detection> {
    let mut out: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        if let Some(prev) = out.last_mut() {
            let gap = (d.onset - prev.last_day()).num_days() - 1;
            if prev.component_id == d.component_id && gap < i64::from(window) {
                let end = prev.last_day().max(d.last_day());
                if d.intensity > prev.intensity {
                    prev.intensity = d.intensity;
                    prev.peak_scale = d.peak_scale;
                }
                prev.duration_days = ((end - prev.onset).num_days() + 1) as u32;
                let kinds: BTreeSet<WaveletKind> = prev
                    .wavelets_agreeing
                    .iter()
                    .chain(&d.wavelets_agreeing)
                    .copied()
                    .collect();
                prev.wavelets_agreeing = kinds.into_iter().collect();
                continue;
            }
        }
        out.push(d);
    }
    out
}
