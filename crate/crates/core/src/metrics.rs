//! Forecast verification by precipitation level.
//!
//! Every evaluated sample is an `(observed, predicted)` pair taken from one
//! example, one lead time and one cell of the evaluation mask. Samples are
//! binned into four intensity levels, counted into a confusion matrix
//! (rows = observed, columns = predicted) and summarised per level as
//! one-vs-rest F1, MAE and mean bias (predicted minus observed).

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::ArrayView5;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellIndex, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecipLevel {
    /// `[0, 5)` mm/h
    Weak,
    /// `[5, 25)` mm/h
    Moderate,
    /// `[25, 50)` mm/h
    Heavy,
    /// `[50, inf)` mm/h
    Extreme,
}

impl PrecipLevel {
    pub const ALL: [PrecipLevel; 4] = [
        PrecipLevel::Weak,
        PrecipLevel::Moderate,
        PrecipLevel::Heavy,
        PrecipLevel::Extreme,
    ];

    /// Lower bin edges in mm/h.
    pub const EDGES: [f64; 4] = [0.0, 5.0, 25.0, 50.0];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PrecipLevel::Weak => "weak",
            PrecipLevel::Moderate => "moderate",
            PrecipLevel::Heavy => "heavy",
            PrecipLevel::Extreme => "extreme",
        }
    }

    /// Bin as an interval, e.g. `[5-25)`.
    pub fn range_label(self) -> &'static str {
        match self {
            PrecipLevel::Weak => "[0-5)",
            PrecipLevel::Moderate => "[5-25)",
            PrecipLevel::Heavy => "[25-50)",
            PrecipLevel::Extreme => "[50-inf)",
        }
    }
}

/// Level of a non-negative, finite precipitation rate.
pub fn classify_level(v: f64) -> Result<PrecipLevel> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Contract(format!("cannot classify precipitation {v}")));
    }
    Ok(if v < 5.0 {
        PrecipLevel::Weak
    } else if v < 25.0 {
        PrecipLevel::Moderate
    } else if v < 50.0 {
        PrecipLevel::Heavy
    } else {
        PrecipLevel::Extreme
    })
}

/// Cells over which metrics are computed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationMask {
    cells: BTreeSet<CellIndex>,
}

impl EvaluationMask {
    pub fn new(cells: impl IntoIterator<Item = CellIndex>, grid: &GridSpec) -> Result<Self> {
        let cells: BTreeSet<_> = cells.into_iter().collect();
        if cells.is_empty() {
            return Err(Error::Config("evaluation mask is empty".into()));
        }
        if let Some(c) = cells.iter().find(|c| !grid.contains(**c)) {
            return Err(Error::Config(format!(
                "mask cell ({}, {}) outside {}x{} grid",
                c.row, c.col, grid.n_rows, grid.n_cols
            )));
        }
        Ok(Self { cells })
    }

    /// Every cell of the grid.
    pub fn full(grid: &GridSpec) -> Self {
        Self {
            cells: grid.cells().collect(),
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        self.cells.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// 4×4 counts, `[observed][predicted]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 4]; 4]) -> Self {
        Self { counts }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut cm = Self::default();
        for (obs, pred) in pairs {
            cm.record(classify_level(obs)?, classify_level(pred)?);
        }
        Ok(cm)
    }

    pub fn record(&mut self, observed: PrecipLevel, predicted: PrecipLevel) {
        self.counts[observed.index()][predicted.index()] += 1;
    }

    pub fn get(&self, observed: PrecipLevel, predicted: PrecipLevel) -> u64 {
        self.counts[observed.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, observed: PrecipLevel) -> u64 {
        self.counts[observed.index()].iter().sum()
    }

    pub fn col_sum(&self, predicted: PrecipLevel) -> u64 {
        self.counts.iter().map(|r| r[predicted.index()]).sum()
    }

    /// Percentage of `observed` samples that landed in each predicted level.
    pub fn row_percentages(&self, observed: PrecipLevel) -> Option<[f64; 4]> {
        let total = self.row_sum(observed);
        (total > 0).then(|| self.counts[observed.index()].map(|c| 100.0 * c as f64 / total as f64))
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }
}

/// One-vs-rest F1 for each level; a zero denominator gives 0.
pub fn f1_per_level(cm: &ConfusionMatrix) -> [f64; 4] {
    PrecipLevel::ALL.map(|level| {
        let tp = cm.get(level, level) as f64;
        let predicted = cm.col_sum(level) as f64;
        let actual = cm.row_sum(level) as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        }
    })
}

/// Error summary for samples whose observation falls in one level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelError {
    pub count: u64,
    /// Mean absolute error, `None` when the level has no samples.
    pub mae: Option<f64>,
    /// Mean of `pred - obs`, `None` when the level has no samples.
    pub bias: Option<f64>,
}

/// Per-observed-level MAE and bias over `(obs, pred)` pairs.
pub fn mae_bias_from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<[LevelError; 4]> {
    let mut abs_sum = [0.0f64; 4];
    let mut signed_sum = [0.0f64; 4];
    let mut count = [0u64; 4];
    for (obs, pred) in pairs {
        if !pred.is_finite() {
            return Err(Error::Contract(format!("non-finite prediction {pred}")));
        }
        let i = classify_level(obs)?.index();
        let e = pred - obs;
        abs_sum[i] += e.abs();
        signed_sum[i] += e;
        count[i] += 1;
    }
    Ok(std::array::from_fn(|i| {
        let n = count[i];
        LevelError {
            count: n,
            mae: (n > 0).then(|| abs_sum[i] / n as f64),
            bias: (n > 0).then(|| signed_sum[i] / n as f64),
        }
    }))
}

/// Default level weights (weak, moderate, heavy, extreme) for [`weighted_mae`].
pub const DEFAULT_LEVEL_WEIGHTS: [f64; 4] = [1.0, 2.0, 5.0, 10.0];

pub fn validate_weights(weights: &[f64; 4]) -> Result<()> {
    if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::Config(format!(
            "level weights must be positive, got {weights:?}"
        )));
    }
    Ok(())
}

/// Level-weighted MAE over `(obs, pred)` pairs.
///
/// Each absolute error is weighted by the level of its observation and the
/// sum is divided by the total weight, so equal weights give the plain MAE.
/// `None` for an empty sample.
pub fn weighted_mae_from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>, weights: &[f64; 4]) -> Result<Option<f64>> {
    validate_weights(weights)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (obs, pred) in pairs {
        let w = weights[classify_level(obs)?.index()];
        num += w * (pred - obs).abs();
        den += w;
    }
    Ok((den > 0.0).then(|| num / den))
}

pub fn weighted_mae(pred: &[f64], obs: &[f64], weights: &[f64; 4]) -> Result<Option<f64>> {
    if pred.len() != obs.len() {
        return Err(Error::Contract(format!(
            "weighted_mae: {} predictions vs {} observations",
            pred.len(),
            obs.len()
        )));
    }
    weighted_mae_from_pairs(obs.iter().copied().zip(pred.iter().copied()), weights)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j share rank (i+1 + j) / 2
        let rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation; `None` for fewer than two points, unequal
/// lengths, non-finite input or a constant series.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 || a.iter().chain(b).any(|v| !v.is_finite()) {
        return None;
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Clamp negative predictions to 0 before scoring.
    pub clamp_negative: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { clamp_negative: true }
    }
}

fn check_inputs(pred: &ArrayView5<f32>, obs: &ArrayView5<f32>, mask: &EvaluationMask, leads: &[usize]) -> Result<()> {
    if pred.shape() != obs.shape() {
        return Err(Error::Contract(format!(
            "prediction shape {:?} differs from observation shape {:?}",
            pred.shape(),
            obs.shape()
        )));
    }
    let (_, horizon, rows, cols, ch) = obs.dim();
    if ch != 1 {
        return Err(Error::Contract(format!("expected 1 precipitation channel, found {ch}")));
    }
    if leads.is_empty() {
        return Err(Error::Contract("no lead times selected".into()));
    }
    if let Some(l) = leads.iter().find(|l| **l == 0 || **l > horizon) {
        return Err(Error::Contract(format!("lead {l} outside 1..={horizon}")));
    }
    if let Some(c) = mask.cells().find(|c| c.row >= rows || c.col >= cols) {
        return Err(Error::Contract(format!(
            "mask cell ({}, {}) outside {rows}x{cols} tensor grid",
            c.row, c.col
        )));
    }
    Ok(())
}

/// `(obs, pred)` samples in example → lead → cell order.
pub fn paired_samples(
    pred: &ArrayView5<f32>,
    obs: &ArrayView5<f32>,
    mask: &EvaluationMask,
    leads: &[usize],
    opts: EvalOptions,
) -> Result<Vec<(f64, f64)>> {
    check_inputs(pred, obs, mask, leads)?;
    let n = obs.dim().0;
    let mut out = Vec::with_capacity(n * leads.len() * mask.len());
    for e in 0..n {
        for &lead in leads {
            for cell in mask.cells() {
                let at = [e, lead - 1, cell.row, cell.col, 0];
                let mut p = pred[at] as f64;
                if opts.clamp_negative && p < 0.0 {
                    p = 0.0;
                }
                out.push((obs[at] as f64, p));
            }
        }
    }
    Ok(out)
}

pub fn confusion_matrix(
    pred: &ArrayView5<f32>,
    obs: &ArrayView5<f32>,
    mask: &EvaluationMask,
    leads: &[usize],
    opts: EvalOptions,
) -> Result<ConfusionMatrix> {
    ConfusionMatrix::from_pairs(paired_samples(pred, obs, mask, leads, opts)?)
}

pub fn mae_bias_per_level(
    pred: &ArrayView5<f32>,
    obs: &ArrayView5<f32>,
    mask: &EvaluationMask,
    leads: &[usize],
    opts: EvalOptions,
) -> Result<[LevelError; 4]> {
    mae_bias_from_pairs(paired_samples(pred, obs, mask, leads, opts)?)
}

/// Scores for one lead time, or for several pooled together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    /// Lead hour, or `None` for the pooled set.
    pub lead: Option<usize>,
    pub samples: u64,
    pub confusion: ConfusionMatrix,
    pub f1: [f64; 4],
    pub levels: [LevelError; 4],
    pub mae: Option<f64>,
    pub weighted_mae: Option<f64>,
}

impl ScoreSet {
    fn from_pairs(lead: Option<usize>, pairs: &[(f64, f64)], weights: &[f64; 4]) -> Result<Self> {
        let confusion = ConfusionMatrix::from_pairs(pairs.iter().copied())?;
        let levels = mae_bias_from_pairs(pairs.iter().copied())?;
        let mae =
            (!pairs.is_empty()).then(|| pairs.iter().map(|(o, p)| (p - o).abs()).sum::<f64>() / pairs.len() as f64);
        Ok(Self {
            lead,
            samples: pairs.len() as u64,
            f1: f1_per_level(&confusion),
            confusion,
            levels,
            mae,
            weighted_mae: weighted_mae_from_pairs(pairs.iter().copied(), weights)?,
        })
    }

    pub fn scope_label(&self) -> String {
        match self.lead {
            Some(l) => format!("T+{l}"),
            None => "combined".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset_version: String,
    pub mask: Vec<CellIndex>,
    pub leads: Vec<usize>,
    pub level_weights: [f64; 4],
    pub clamp_negative: bool,
    pub examples: usize,
    pub per_lead: Vec<ScoreSet>,
    pub pooled: ScoreSet,
}

/// Per-lead and pooled verification of `pred` against `obs`.
pub fn evaluation_report(
    pred: &ArrayView5<f32>,
    obs: &ArrayView5<f32>,
    mask: &EvaluationMask,
    leads: &[usize],
    version_label: &str,
    weights: &[f64; 4],
    opts: EvalOptions,
) -> Result<EvaluationReport> {
    validate_weights(weights)?;
    check_inputs(pred, obs, mask, leads)?;
    let mut per_lead = Vec::with_capacity(leads.len());
    for &lead in leads {
        let pairs = paired_samples(pred, obs, mask, &[lead], opts)?;
        per_lead.push(ScoreSet::from_pairs(Some(lead), &pairs, weights)?);
    }
    let pooled_pairs = paired_samples(pred, obs, mask, leads, opts)?;
    let pooled = ScoreSet::from_pairs(None, &pooled_pairs, weights)?;
    Ok(EvaluationReport {
        dataset_version: version_label.to_string(),
        mask: mask.cells().collect(),
        leads: leads.to_vec(),
        level_weights: *weights,
        clamp_negative: opts.clamp_negative,
        examples: obs.dim().0,
        per_lead,
        pooled,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per level per scope (each lead, then `combined`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset_version,scope,level,range,f1,mae,bias,count\n");
        for set in self.per_lead.iter().chain(std::iter::once(&self.pooled)) {
            for level in PrecipLevel::ALL {
                let e = set.levels[level.index()];
                let _ = writeln!(
                    out,
                    "{},{},{},{},{:.6},{},{},{}",
                    self.dataset_version,
                    set.scope_label(),
                    level.name(),
                    level.range_label(),
                    set.f1[level.index()],
                    fmt_opt(e.mae),
                    fmt_opt(e.bias),
                    e.count
                );
            }
        }
        out
    }

    /// Confusion matrices as `scope,observed,<pred levels...>` rows.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("scope,observed");
        for level in PrecipLevel::ALL {
            let _ = write!(out, ",{}", level.range_label());
        }
        out.push('\n');
        for set in self.per_lead.iter().chain(std::iter::once(&self.pooled)) {
            for obs in PrecipLevel::ALL {
                let _ = write!(out, "{},{}", set.scope_label(), obs.range_label());
                for pred in PrecipLevel::ALL {
                    let _ = write!(out, ",{}", set.confusion.get(obs, pred));
                }
                out.push('\n');
            }
        }
        out
    }
}
