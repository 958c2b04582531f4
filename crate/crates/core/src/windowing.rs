//! Sliding-window example construction over the fused hourly series.
//!
//! The timeline is first cut into segments: maximal runs of consecutive
//! hours that avoid the excluded (dry) months. A window of `lookback` input
//! steps followed by `horizon` target steps is then slid one hour at a time
//! inside each segment, so no example ever straddles a gap.

use std::collections::BTreeSet;
use std::ops::Range;

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use ndarray::{s, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusedStep;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    /// Input steps per example (`k`).
    pub lookback: usize,
    /// Target steps per example (`k'`).
    pub horizon: usize,
    /// Calendar months (1-12, UTC) dropped from the timeline.
    pub excluded_months: BTreeSet<u32>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            lookback: 5,
            horizon: 5,
            excluded_months: [6, 7, 8].into_iter().collect(),
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.horizon == 0 {
            return Err(Error::Config("window: lookback and horizon must be >= 1".into()));
        }
        if let Some(m) = self.excluded_months.iter().find(|m| !(1..=12).contains(*m)) {
            return Err(Error::Config(format!("window: excluded month {m} not in 1..=12")));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        self.lookback + self.horizon
    }

    /// Examples that fit in a contiguous run of `len` steps.
    pub fn windows_in(&self, len: usize) -> usize {
        (len + 1).saturating_sub(self.window_len())
    }

    pub fn is_excluded(&self, t: DateTime<Utc>) -> bool {
        self.excluded_months.contains(&t.month())
    }
}

/// A run of consecutive hours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: DateTime<Utc>,
    pub timesteps: usize,
    /// Position of `start` in the timeline the segment was cut from.
    pub first_index: usize,
}

impl Segment {
    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::hours(self.timesteps as i64 - 1)
    }

    pub fn indices(&self) -> Range<usize> {
        self.first_index..self.first_index + self.timesteps
    }
}

/// One `(X, Y)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// `[step][row][col][channel]`, `lookback` steps.
    pub x: Array4<f32>,
    /// `[step][row][col][1]`, `horizon` steps of precipitation.
    pub y: Array4<f32>,
    /// Instant of the last input step.
    pub t0: DateTime<Utc>,
}

/// Cuts a sorted hourly timeline into gap-free, non-excluded segments.
pub fn segment_timeline(timestamps: &[DateTime<Utc>], config: &WindowConfig) -> Result<Vec<Segment>> {
    if let Some(t) = timestamps
        .iter()
        .find(|t| t.minute() != 0 || t.second() != 0 || t.nanosecond() != 0)
    {
        return Err(Error::Contract(format!("timeline contains off-hour instant {t}")));
    }
    if let Some(w) = timestamps.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::Contract(format!(
            "timeline not strictly increasing at {} -> {}",
            w[0], w[1]
        )));
    }

    let mut segments = Vec::new();
    let mut current: Option<Segment> = None;
    for (i, &t) in timestamps.iter().enumerate() {
        if config.is_excluded(t) {
            segments.extend(current.take());
            continue;
        }
        match current.as_mut() {
            Some(seg) if seg.end() + Duration::hours(1) == t => seg.timesteps += 1,
            _ => {
                segments.extend(current.take());
                current = Some(Segment {
                    start: t,
                    timesteps: 1,
                    first_index: i,
                });
            }
        }
    }
    segments.extend(current);
    Ok(segments)
}

/// All examples inside one segment, advancing one step at a time.
pub fn slide_windows(segment: &Segment, series: &[FusedStep], config: &WindowConfig) -> Result<Vec<Example>> {
    let steps = series.get(segment.indices()).ok_or_else(|| {
        Error::Contract(format!(
            "segment {:?} not covered by a series of {} steps",
            segment.indices(),
            series.len()
        ))
    })?;
    for (h, step) in steps.iter().enumerate() {
        if step.fused.timestamp != segment.start + Duration::hours(h as i64) {
            return Err(Error::Contract(format!(
                "series step {} is at {}, segment expects {}",
                segment.first_index + h,
                step.fused.timestamp,
                segment.start + Duration::hours(h as i64)
            )));
        }
    }

    let (k, kp) = (config.lookback, config.horizon);
    let mut out = Vec::with_capacity(config.windows_in(steps.len()));
    for start in 0..config.windows_in(steps.len()) {
        let inputs = &steps[start..start + k];
        let targets = &steps[start + k..start + k + kp];
        let x = ndarray::stack(
            Axis(0),
            &inputs.iter().map(|s| s.feature.values.view()).collect::<Vec<_>>(),
        )
        .expect("feature grids share a shape");
        let y = ndarray::stack(
            Axis(0),
            &targets
                .iter()
                .map(|s| s.fused.precip.view().insert_axis(Axis(2)))
                .collect::<Vec<_>>(),
        )
        .expect("fused grids share a shape");
        out.push(Example {
            x,
            y,
            t0: inputs[k - 1].fused.timestamp,
        });
    }
    Ok(out)
}

/// Windows over a whole timeline, segment by segment.
pub fn build_examples(series: &[FusedStep], config: &WindowConfig) -> Result<(Vec<Segment>, Vec<Example>)> {
    config.validate()?;
    let timestamps: Vec<_> = series.iter().map(|s| s.fused.timestamp).collect();
    let segments = segment_timeline(&timestamps, config)?;
    let mut examples = Vec::with_capacity(count_examples(&segments, config));
    for seg in &segments {
        examples.extend(slide_windows(seg, series, config)?);
    }
    Ok((segments, examples))
}

pub fn count_examples(segments: &[Segment], config: &WindowConfig) -> usize {
    segments.iter().map(|s| config.windows_in(s.timesteps)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::Config("split fractions must be finite and non-negative".into()));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes for `n` items; val and test are floored, train takes the rest.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let floor = |f: f64| ((n as f64 * f) + 1e-9).floor() as usize;
        let val = floor(self.val);
        let test = floor(self.test).min(n - val);
        Ok((n - val - test, val, test))
    }

    /// Index ranges of the three contiguous slices.
    pub fn ranges(&self, n: usize) -> Result<[Range<usize>; 3]> {
        let (train, val, _) = self.sizes(n)?;
        Ok([0..train, train..train + val, train + val..n])
    }
}

/// Contiguous train/validation/test slices of chronologically ordered items.
pub fn chronological_split<'a, T>(items: &'a [T], fractions: &SplitFractions) -> Result<[&'a [T]; 3]> {
    let [a, b, c] = fractions.ranges(items.len())?;
    Ok([&items[a], &items[b], &items[c]])
}

/// Last-input-step precipitation of an example, `[row][col]`.
pub fn last_input_precip(example: &Example) -> ndarray::ArrayView2<'_, f32> {
    example.x.slice(s![example.x.dim().0 - 1, .., .., 0])
}
