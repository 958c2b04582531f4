//! Reference forecasters: persistence and hour-of-day climatology.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Timelike, Utc};
use ndarray::{s, Array3, Array4, ArrayView4, Axis};

use crate::error::{Error, Result};
use crate::windowing::Example;

/// Repeats the last input precipitation grid for every lead.
///
/// `x` is `[step][row][col][channel]`; the result is `[lead][row][col][1]`.
pub fn persistence_forecast(x: &ArrayView4<f32>, horizon: usize) -> Array4<f32> {
    let last = x.slice(s![x.dim().0 - 1, .., .., 0..1]);
    let (rows, cols) = (last.dim().0, last.dim().1);
    let mut out = Array4::<f32>::zeros((horizon, rows, cols, 1));
    for mut lead in out.axis_iter_mut(Axis(0)) {
        lead.assign(&last);
    }
    out
}

/// Mean fused precipitation per cell and UTC hour of day.
#[derive(Debug, Clone, PartialEq)]
pub struct ClimatologyTable {
    /// `[row][col][hour]`, mm/h
    means: Array3<f64>,
}

impl ClimatologyTable {
    pub fn mean(&self, row: usize, col: usize, hour: u32) -> f64 {
        self.means[[row, col, hour as usize]]
    }

    pub fn means(&self) -> &Array3<f64> {
        &self.means
    }
}

/// Fits the table from the targets of training examples.
///
/// Overlapping windows repeat the same hour, so each target hour is counted
/// once. An hour of day never seen in training takes the cell's overall mean.
pub fn fit_climatology(train: &[Example]) -> Result<ClimatologyTable> {
    let first = train
        .first()
        .ok_or_else(|| Error::Config("climatology needs at least one training example".into()))?;
    let (_, rows, cols, _) = first.y.dim();

    let mut hours: BTreeMap<DateTime<Utc>, ndarray::ArrayView2<f32>> = BTreeMap::new();
    for e in train {
        if e.y.dim().1 != rows || e.y.dim().2 != cols {
            return Err(Error::Contract("training examples disagree on grid shape".into()));
        }
        for (lead, grid) in e.y.axis_iter(Axis(0)).enumerate() {
            let t = e.t0 + Duration::hours(lead as i64 + 1);
            hours.entry(t).or_insert_with(|| grid.index_axis_move(Axis(2), 0));
        }
    }

    let mut sums = Array3::<f64>::zeros((rows, cols, 24));
    let mut counts = [0u64; 24];
    for (t, grid) in &hours {
        let h = t.hour() as usize;
        counts[h] += 1;
        let mut slot = sums.slice_mut(s![.., .., h]);
        slot.zip_mut_with(grid, |acc, v| *acc += *v as f64);
    }
    let total = hours.len() as f64;
    let overall = sums.sum_axis(Axis(2)).mapv(|v| v / total);
    let mut means = Array3::<f64>::zeros((rows, cols, 24));
    for (h, &n) in counts.iter().enumerate() {
        let mut slot = means.slice_mut(s![.., .., h]);
        if n > 0 {
            slot.assign(&sums.slice(s![.., .., h]).mapv(|v| (v / n as f64).max(0.0)));
        } else {
            slot.assign(&overall.mapv(|v| v.max(0.0)));
        }
    }
    Ok(ClimatologyTable { means })
}

/// Table lookup for each lead hour after `t0`.
pub fn climatology_forecast(table: &ClimatologyTable, t0: DateTime<Utc>, horizon: usize) -> Array4<f32> {
    let (rows, cols, _) = table.means.dim();
    Array4::from_shape_fn((horizon, rows, cols, 1), |(lead, r, c, _)| {
        let hour = (t0 + Duration::hours(lead as i64 + 1)).hour();
        table.mean(r, c, hour) as f32
    })
}
