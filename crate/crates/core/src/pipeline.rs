//! End-to-end commands: dataset building, evaluation, baselines, inference
//! input assembly and source sanity checks.
//!
//! Every command reads a [`PipelineConfig`] and writes its outputs under
//! `config.out_dir`, each file atomically and with deterministic content.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDateTime, Utc};
use ndarray::{Array5, Axis, Ix5};
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::baseline::{climatology_forecast, fit_climatology, persistence_forecast};
use crate::config::{require_exists, PipelineConfig};
use crate::error::{Error, Result};
use crate::fusion::{Background, DatasetVersion, FusedStep, Fuser, Provenance};
use crate::grid::{CellIndex, GridSpec};
use crate::ingest::{
    aggregate_to_hourly, canonical_channel_labels, group_by_station, load_grid_pack, parse_station_observations,
    GridSource, RowError, StationCatalog, StationStore, StationSystem,
};
use crate::metrics::{evaluation_report, spearman, EvaluationReport};
use crate::tensor::{format_instant, read_examples, read_tensor, ExampleMeta, TensorRole, TensorSidecar, TensorWriter};
use crate::util::write_atomic;
use crate::windowing::{count_examples, segment_timeline, Segment, WindowConfig};

pub const FEATURES_FILE: &str = "X.stft";
pub const TARGETS_FILE: &str = "Y.stft";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURE_SAMPLING: &str = "nw-corner-node";

/// Parses an instant given as RFC 3339 or as a naive `YYYY-MM-DDTHH:MM[:SS]` taken as UTC.
pub fn parse_instant(s: &str) -> Result<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
    .map(|t| t.and_utc())
    .ok_or_else(|| Error::Config(format!("cannot parse instant '{s}'")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("manifest serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Station data ready for fusion plus every rejected input row.
#[derive(Debug)]
pub struct LoadedStations {
    pub catalog: StationCatalog,
    pub store: StationStore,
    pub row_errors: Vec<(PathBuf, RowError)>,
}

/// Parses, aggregates and indexes the observations of `systems`.
pub fn load_stations(config: &PipelineConfig, systems: &BTreeSet<StationSystem>) -> Result<LoadedStations> {
    if systems.is_empty() {
        return Ok(LoadedStations {
            catalog: StationCatalog::default(),
            store: StationStore::default(),
            row_errors: Vec::new(),
        });
    }
    let catalog_path = config
        .stations
        .catalog
        .as_ref()
        .ok_or_else(|| Error::Config("stations.catalog is required".into()))?;
    let catalog = StationCatalog::load(catalog_path)?;
    let files = config.observation_files()?;

    let mut hourly = Vec::new();
    let mut row_errors = Vec::new();
    for system in systems {
        let mut raw = Vec::new();
        for path in files.get(system).into_iter().flatten() {
            let parsed = parse_station_observations(path, *system, &catalog)?;
            if !parsed.row_errors.is_empty() {
                warn!(file = %path.display(), rejected = parsed.row_errors.len(), "rejected observation rows");
            }
            row_errors.extend(parsed.row_errors.into_iter().map(|e| (path.clone(), e)));
            raw.extend(parsed.observations);
        }
        for (_, series) in group_by_station(raw) {
            hourly.extend(aggregate_to_hourly(&series)?);
        }
    }
    let store = StationStore::new(&config.grid, hourly)?;
    info!(stations = store.n_stations(), "loaded station observations");
    Ok(LoadedStations {
        catalog,
        store,
        row_errors,
    })
}

/// Loads packs and orders them by start time; overlapping packs are rejected.
pub fn load_backgrounds(paths: &[PathBuf]) -> Result<Vec<GridSource>> {
    let mut packs = paths.iter().map(|p| load_grid_pack(p)).collect::<Result<Vec<_>>>()?;
    packs.sort_by_key(|p| p.start());
    if let Some(w) = packs.windows(2).find(|w| w[1].start() <= w[0].end()) {
        return Err(Error::Range(format!(
            "background packs overlap: {} .. {} and {} .. {}",
            w[0].start(),
            w[0].end(),
            w[1].start(),
            w[1].end()
        )));
    }
    Ok(packs)
}

/// Fused series over every hour of every pack, in time order.
pub fn fuse_packs(
    grid: &GridSpec,
    store: &StationStore,
    packs: &[GridSource],
    version: &DatasetVersion,
) -> Result<Vec<FusedStep>> {
    let mut series = Vec::new();
    for pack in packs {
        let fuser = Fuser::new(grid, store, pack)?;
        series.extend(fuser.build_full_series(version)?);
    }
    Ok(series)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split '{other}' (train, val, test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRange {
    /// Example indices `start..end`.
    pub start: usize,
    pub end: usize,
    pub first_t0: Option<String>,
    pub last_t0: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: SplitRange,
    pub val: SplitRange,
    pub test: SplitRange,
}

impl SplitManifest {
    pub fn get(&self, name: SplitName) -> &SplitRange {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceSummary {
    pub cell_hours: u64,
    pub station_fused: u64,
    pub background_fallback: u64,
    pub station_fused_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub start: String,
    pub end: String,
    pub timesteps: usize,
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_version: String,
    pub grid: GridSpec,
    pub window: WindowConfig,
    pub channels: Vec<String>,
    pub feature_sampling: String,
    pub fused_hours: usize,
    pub n_segments: usize,
    pub segments: Vec<SegmentRecord>,
    pub n_examples: usize,
    pub x_dims: Vec<usize>,
    pub y_dims: Vec<usize>,
    pub split: SplitManifest,
    pub provenance: ProvenanceSummary,
    pub rejected_observation_rows: usize,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, format!("bad manifest: {e}")))
    }
}

fn provenance_summary<'a>(steps: impl Iterator<Item = &'a FusedStep>) -> ProvenanceSummary {
    let (mut total, mut fused) = (0u64, 0u64);
    for s in steps {
        total += s.fused.provenance.len() as u64;
        fused += s.fused.station_fused_cells() as u64;
    }
    ProvenanceSummary {
        cell_hours: total,
        station_fused: fused,
        background_fallback: total - fused,
        station_fused_fraction: if total > 0 { fused as f64 / total as f64 } else { 0.0 },
    }
}

/// Streams every window of every segment into the features/target pair.
/// Returns the `t0` of each example.
pub fn write_window_tensors(
    series: &[FusedStep],
    segments: &[Segment],
    window: &WindowConfig,
    x_path: &Path,
    y_path: &Path,
    meta: &ExampleMeta,
) -> Result<Vec<DateTime<Utc>>> {
    let n = count_examples(segments, window);
    if n == 0 {
        return Err(Error::Contract("no examples to write".into()));
    }
    let first = &series[segments[0].first_index];
    let (rows, cols, channels) = first.feature.values.dim();
    let x_dims = [n, window.lookback, rows, cols, channels];
    let y_dims = [n, window.horizon, rows, cols, 1];
    let mut xw = TensorWriter::create(x_path, &x_dims)?;
    let mut yw = TensorWriter::create(y_path, &y_dims)?;
    let mut t0s = Vec::with_capacity(n);
    for seg in segments {
        if seg.indices().end > series.len() {
            return Err(Error::Contract("segment extends past the fused series".into()));
        }
        for start in 0..window.windows_in(seg.timesteps) {
            let base = seg.first_index + start;
            for step in &series[base..base + window.lookback] {
                xw.write_values(step.feature.values.iter())?;
            }
            for step in &series[base + window.lookback..base + window.window_len()] {
                yw.write_values(step.fused.precip.iter())?;
            }
            t0s.push(series[base + window.lookback - 1].fused.timestamp);
        }
    }
    let (x_side, y_side) = meta.sidecars(&x_dims, &y_dims, &t0s);
    xw.finish(&x_side)?;
    yw.finish(&y_side)?;
    Ok(t0s)
}

#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    /// Also export the fused grid at this instant as CSV.
    pub export_heatmap: Option<DateTime<Utc>>,
}

fn heatmap_csv(grid: &GridSpec, step: &FusedStep) -> String {
    let mut out = String::from("row,col,lat_center,lon_center,precip_mm_h,provenance\n");
    for cell in grid.cells() {
        let c = grid.cell_center(cell);
        let prov = match step.fused.provenance[[cell.row, cell.col]] {
            Provenance::StationFused => "station",
            Provenance::BackgroundFallback => "background",
        };
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.4},{},{}",
            cell.row,
            cell.col,
            c.lat,
            c.lon,
            step.fused.precip[[cell.row, cell.col]],
            prov
        );
    }
    out
}

/// Builds the features/target tensors, the manifest and the ingest error report.
pub fn build_dataset(config: &PipelineConfig, options: &BuildOptions) -> Result<DatasetManifest> {
    config.validate()?;
    let version = config.dataset_version()?;
    if version.background != Background::Reanalysis {
        warn!(%version, "building a training dataset over an NWP background");
    }
    let packs_cfg = match version.background {
        Background::Reanalysis => &config.background.train,
        Background::Nwp => &config.background.inference,
    };
    if packs_cfg.is_empty() {
        return Err(Error::Config("background.train lists no grid packs".into()));
    }
    config.require_station_inputs(&version)?;
    let obs_files = config.observation_files()?;
    require_exists(
        packs_cfg
            .iter()
            .map(|p| crate::ingest::pack_paths(p).0)
            .collect::<Vec<_>>()
            .iter(),
    )?;
    if !version.systems.is_empty() {
        require_exists(config.stations.catalog.iter())?;
        require_exists(
            version
                .systems
                .iter()
                .flat_map(|s| obs_files.get(s).into_iter().flatten()),
        )?;
    }

    let stations = load_stations(config, &version.systems)?;
    let packs = load_backgrounds(packs_cfg)?;
    let series = fuse_packs(&config.grid, &stations.store, &packs, &version)?;
    info!(hours = series.len(), %version, "fused series built");

    let timestamps: Vec<_> = series.iter().map(|s| s.fused.timestamp).collect();
    let segments = segment_timeline(&timestamps, &config.window)?;
    let n = count_examples(&segments, &config.window);
    if n == 0 {
        return Err(Error::Range(format!(
            "no {}-hour window fits in any of the {} segments",
            config.window.window_len(),
            segments.len()
        )));
    }

    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let meta = ExampleMeta {
        grid: config.grid,
        channels: canonical_channel_labels(),
        dataset_version: Some(version.to_string()),
        feature_sampling: Some(FEATURE_SAMPLING.into()),
    };
    let t0s = write_window_tensors(
        &series,
        &segments,
        &config.window,
        &out.join(FEATURES_FILE),
        &out.join(TARGETS_FILE),
        &meta,
    )?;

    let [train, val, test] = config.split.ranges(n)?;
    let range = |r: std::ops::Range<usize>| SplitRange {
        first_t0: t0s.get(r.start).filter(|_| r.start < r.end).map(|t| format_instant(*t)),
        last_t0: r
            .end
            .checked_sub(1)
            .filter(|_| r.start < r.end)
            .map(|i| format_instant(t0s[i])),
        start: r.start,
        end: r.end,
    };
    let in_segments = segments.iter().flat_map(|s| series[s.indices()].iter());
    let manifest = DatasetManifest {
        dataset_version: version.to_string(),
        grid: config.grid,
        window: config.window.clone(),
        channels: meta.channels.clone(),
        feature_sampling: FEATURE_SAMPLING.into(),
        fused_hours: series.len(),
        n_segments: segments.len(),
        segments: segments
            .iter()
            .map(|s| SegmentRecord {
                start: format_instant(s.start),
                end: format_instant(s.end()),
                timesteps: s.timesteps,
                examples: config.window.windows_in(s.timesteps),
            })
            .collect(),
        n_examples: n,
        x_dims: vec![
            n,
            config.window.lookback,
            config.grid.n_rows,
            config.grid.n_cols,
            meta.channels.len(),
        ],
        y_dims: vec![n, config.window.horizon, config.grid.n_rows, config.grid.n_cols, 1],
        split: SplitManifest {
            train: range(train),
            val: range(val),
            test: range(test),
        },
        provenance: provenance_summary(in_segments),
        rejected_observation_rows: stations.row_errors.len(),
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;

    if !stations.row_errors.is_empty() {
        let mut csv = String::from("file,line,message\n");
        for (path, e) in &stations.row_errors {
            let _ = writeln!(csv, "{},{},\"{}\"", path.display(), e.line, e.message.replace('"', "'"));
        }
        write_text(&out.join("ingest_errors.csv"), &csv)?;
    }

    if let Some(t) = options.export_heatmap {
        let step = series
            .iter()
            .find(|s| s.fused.timestamp == t)
            .ok_or_else(|| Error::Range(format!("no fused grid at {t} for heatmap export")))?;
        let name = format!("heatmap_{}.csv", t.format("%Y%m%dT%H%M"));
        write_text(&out.join(name), &heatmap_csv(&config.grid, step))?;
    }
    Ok(manifest)
}

fn as_5d(array: ndarray::ArrayD<f32>, path: &Path) -> Result<Array5<f32>> {
    array
        .into_dimensionality::<Ix5>()
        .map_err(|_| Error::Contract(format!("{}: expected a 5-dimensional tensor", path.display())))
}

/// Manifest next to a dataset tensor.
pub fn manifest_beside(tensor_path: &Path) -> PathBuf {
    tensor_path.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE)
}

/// Scores `pred_path` against `obs_path` and writes `report.json`, `report.csv`
/// and `confusion.csv`. With `split`, the observations are first cut to that
/// split using the manifest stored next to them.
pub fn evaluate(
    config: &PipelineConfig,
    pred_path: &Path,
    obs_path: &Path,
    split: Option<SplitName>,
) -> Result<EvaluationReport> {
    config.validate()?;
    require_exists([pred_path.to_path_buf(), obs_path.to_path_buf()].iter())?;
    let (pred, pred_side) = read_tensor(pred_path)?;
    let (obs, obs_side) = read_tensor(obs_path)?;
    let pred = as_5d(pred, pred_path)?;
    let mut obs = as_5d(obs, obs_path)?;
    if let Some(split) = split {
        let manifest = DatasetManifest::load(&manifest_beside(obs_path))?;
        let r = manifest.split.get(split);
        if r.end > obs.dim().0 {
            return Err(Error::Contract(format!(
                "split {split:?} range {}..{} exceeds {} observed examples",
                r.start,
                r.end,
                obs.dim().0
            )));
        }
        obs = obs.slice_axis(Axis(0), (r.start..r.end).into()).to_owned();
    }
    if pred.shape() != obs.shape() {
        return Err(Error::Contract(format!(
            "prediction shape {:?} does not match observation shape {:?}{}",
            pred.shape(),
            obs.shape(),
            if split.is_none() {
                " (pass --split when predictions cover one split)"
            } else {
                ""
            }
        )));
    }
    let label = pred_side
        .dataset_version
        .or(obs_side.dataset_version)
        .unwrap_or_else(|| config.version.clone());
    let mask = config.evaluation_mask()?;
    let report = evaluation_report(
        &pred.view(),
        &obs.view(),
        &mask,
        &config.leads(),
        &label,
        &config.evaluation.weights,
        config.eval_options(),
    )?;
    let out = &config.out_dir;
    write_text(&out.join("report.json"), &(report.to_json() + "\n"))?;
    write_text(&out.join("report.csv"), &report.to_csv())?;
    write_text(&out.join("confusion.csv"), &report.confusion_csv())?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Persistence,
    Climatology,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Persistence => "persistence",
            BaselineMethod::Climatology => "climatology",
        }
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "persistence" => Ok(BaselineMethod::Persistence),
            "climatology" => Ok(BaselineMethod::Climatology),
            other => Err(Error::Config(format!("unknown baseline '{other}'"))),
        }
    }
}

/// Runs a baseline over one split of a built dataset and writes its
/// predictions as `pred_<method>_<split>.stft` under `out_dir`.
pub fn run_baseline(
    config: &PipelineConfig,
    dataset_dir: &Path,
    method: BaselineMethod,
    split: SplitName,
) -> Result<PathBuf> {
    let manifest = DatasetManifest::load(&dataset_dir.join(MANIFEST_FILE))?;
    let examples = read_examples(&dataset_dir.join(FEATURES_FILE), &dataset_dir.join(TARGETS_FILE))?;
    let r = manifest.split.get(split);
    let target = examples
        .get(r.start..r.end)
        .ok_or_else(|| Error::Contract("manifest split exceeds dataset".into()))?;
    if target.is_empty() {
        return Err(Error::Range(format!("split {split:?} holds no examples")));
    }
    let horizon = manifest.window.horizon;
    let forecasts: Vec<_> = match method {
        BaselineMethod::Persistence => target
            .iter()
            .map(|e| persistence_forecast(&e.x.view(), horizon))
            .collect(),
        BaselineMethod::Climatology => {
            let train = &examples[manifest.split.train.start..manifest.split.train.end];
            let table = fit_climatology(train)?;
            target
                .iter()
                .map(|e| climatology_forecast(&table, e.t0, horizon))
                .collect()
        }
    };
    let views: Vec<_> = forecasts.iter().map(|f| f.view()).collect();
    let stacked = ndarray::stack(Axis(0), &views)
        .expect("forecasts share a shape")
        .into_dyn();
    let t0s: Vec<_> = target.iter().map(|e| e.t0).collect();
    let mut side = TensorSidecar::new(
        TensorRole::Prediction,
        stacked.shape(),
        vec![crate::ingest::PRECIP_CHANNEL.into()],
        manifest.grid,
    )
    .with_times(&t0s);
    side.dataset_version = Some(manifest.dataset_version.clone());
    let name = format!(
        "pred_{}_{}.stft",
        method.name(),
        serde_json::to_value(split).expect("split").as_str().unwrap_or("split")
    );
    let path = config.out_dir.join(name);
    crate::tensor::write_tensor(&path, &stacked, &side)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceHour {
    pub timestamp: String,
    pub station_fused_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceManifest {
    pub dataset_version: String,
    pub t0: String,
    pub input_hours: Vec<InferenceHour>,
    pub forecast_hours: Vec<String>,
    pub x_dims: Vec<usize>,
    pub channels: Vec<String>,
    pub feature_sampling: String,
}

/// Assembles the `(1, k, rows, cols, 19)` model input ending at `t0`.
pub fn fuse_inference(
    config: &PipelineConfig,
    t0: DateTime<Utc>,
    version: &DatasetVersion,
) -> Result<InferenceManifest> {
    config.validate()?;
    let pack_paths = match version.background {
        Background::Nwp => &config.background.inference,
        Background::Reanalysis => &config.background.train,
    };
    if pack_paths.is_empty() {
        return Err(Error::Config(format!("no grid packs configured for {version}")));
    }
    config.require_station_inputs(version)?;
    let stations = load_stations(config, &version.systems)?;
    let packs = load_backgrounds(pack_paths)?;

    let k = config.window.lookback;
    let hours: Vec<_> = (0..k).rev().map(|h| t0 - Duration::hours(h as i64)).collect();
    let mut steps = Vec::with_capacity(k);
    for &t in &hours {
        let pack = packs.iter().find(|p| p.step_of(t).is_some()).ok_or_else(|| {
            Error::Range(format!(
                "NWP data missing for {} (inputs span {} .. {})",
                format_instant(t),
                format_instant(hours[0]),
                format_instant(t0)
            ))
        })?;
        let fuser = Fuser::new(&config.grid, &stations.store, pack)?;
        let fused = fuser.fuse_precip_grid(t, version)?;
        let feature = fuser.feature_grid_from(&fused)?;
        steps.push(FusedStep { feature, fused });
    }

    let views: Vec<_> = steps.iter().map(|s| s.feature.values.view()).collect();
    let x = ndarray::stack(Axis(0), &views)
        .expect("feature grids share a shape")
        .insert_axis(Axis(0))
        .into_dyn();
    let channels = canonical_channel_labels();
    let mut side = TensorSidecar::new(TensorRole::Features, x.shape(), channels.clone(), config.grid).with_times(&[t0]);
    side.dataset_version = Some(version.to_string());
    side.feature_sampling = Some(FEATURE_SAMPLING.into());
    crate::tensor::write_tensor(&config.out_dir.join("X_inference.stft"), &x, &side)?;

    let manifest = InferenceManifest {
        dataset_version: version.to_string(),
        t0: format_instant(t0),
        input_hours: steps
            .iter()
            .map(|s| InferenceHour {
                timestamp: format_instant(s.fused.timestamp),
                station_fused_cells: s.fused.station_fused_cells(),
            })
            .collect(),
        forecast_hours: (1..=config.window.horizon)
            .map(|h| format_instant(t0 + Duration::hours(h as i64)))
            .collect(),
        x_dims: x.shape().to_vec(),
        channels,
        feature_sampling: FEATURE_SAMPLING.into(),
    };
    write_json(&config.out_dir.join("inference_manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Per-cell rank agreement between two background sources.
#[derive(Debug, Clone, PartialEq)]
pub struct SanityReport {
    pub hours: usize,
    /// `[row][col]` Spearman correlation of corner-max precipitation, `None` when undefined.
    pub spearman: ndarray::Array2<Option<f64>>,
    pub station_rows: usize,
}

/// Maps each hour covered by `packs` to the pack index that holds it.
fn hour_index(packs: &[GridSource]) -> BTreeMap<DateTime<Utc>, usize> {
    let mut out = BTreeMap::new();
    for (i, p) in packs.iter().enumerate() {
        for t in p.timestamps() {
            out.insert(t, i);
        }
    }
    out
}

/// Compares two gridded sources cell by cell over their common hours and,
/// optionally, one station against both. Writes `spearman_grid.csv` and
/// `station_vs_grid.csv`.
pub fn sanity_check(config: &PipelineConfig, station: Option<&str>) -> Result<SanityReport> {
    config.validate()?;
    let reference_paths = if config.sanity.reference.is_empty() {
        &config.background.train
    } else {
        &config.sanity.reference
    };
    let candidate_paths = if config.sanity.candidate.is_empty() {
        &config.background.inference
    } else {
        &config.sanity.candidate
    };
    if reference_paths.is_empty() || candidate_paths.is_empty() {
        return Err(Error::Config(
            "sanity check needs a reference and a candidate source".into(),
        ));
    }
    let reference = load_backgrounds(reference_paths)?;
    let candidate = load_backgrounds(candidate_paths)?;
    let start = config.sanity.start.as_deref().map(parse_instant).transpose()?;
    let end = config.sanity.end.as_deref().map(parse_instant).transpose()?;

    let ref_hours = hour_index(&reference);
    let cand_hours = hour_index(&candidate);
    let common: Vec<DateTime<Utc>> = ref_hours
        .keys()
        .filter(|t| cand_hours.contains_key(t))
        .filter(|t| start.is_none_or(|s| **t >= s) && end.is_none_or(|e| **t <= e))
        .copied()
        .collect();
    if common.is_empty() {
        return Err(Error::Range(
            "reference and candidate sources share no hours in range".into(),
        ));
    }

    let empty = StationStore::default();
    let ref_fusers = reference
        .iter()
        .map(|p| Fuser::new(&config.grid, &empty, p))
        .collect::<Result<Vec<_>>>()?;
    let cand_fusers = candidate
        .iter()
        .map(|p| Fuser::new(&config.grid, &empty, p))
        .collect::<Result<Vec<_>>>()?;
    let corner_max = |fusers: &[Fuser], index: &BTreeMap<DateTime<Utc>, usize>, cell, t| {
        fusers[index[&t]].fallback_corner_max(cell, t).map(f64::from)
    };

    let grid = &config.grid;
    let mut rho = ndarray::Array2::from_elem((grid.n_rows, grid.n_cols), None);
    let mut csv = String::from("row,col,lat_center,lon_center,spearman,hours\n");
    for cell in grid.cells() {
        let a = common
            .iter()
            .map(|t| corner_max(&ref_fusers, &ref_hours, cell, *t))
            .collect::<Result<Vec<_>>>()?;
        let b = common
            .iter()
            .map(|t| corner_max(&cand_fusers, &cand_hours, cell, *t))
            .collect::<Result<Vec<_>>>()?;
        let r = spearman(&a, &b);
        rho[[cell.row, cell.col]] = r;
        let c = grid.cell_center(cell);
        let _ = writeln!(
            csv,
            "{},{},{:.4},{:.4},{},{}",
            cell.row,
            cell.col,
            c.lat,
            c.lon,
            r.map_or_else(|| "nan".into(), |v| format!("{v:.6}")),
            common.len()
        );
    }
    write_text(&config.out_dir.join("spearman_grid.csv"), &csv)?;

    let mut station_rows = 0;
    if let Some(id) = station {
        let catalog_path = config
            .stations
            .catalog
            .as_ref()
            .ok_or_else(|| Error::Config("station comparison needs stations.catalog".into()))?;
        let catalog = StationCatalog::load(catalog_path)?;
        let info = catalog
            .get(id)
            .ok_or_else(|| Error::Config(format!("station '{id}' not in catalog")))?;
        let cell: CellIndex = grid
            .cell_of(info.lat, info.lon)
            .ok_or_else(|| Error::Config(format!("station '{id}' lies outside the grid")))?;
        let loaded = load_stations(config, &[info.system].into_iter().collect())?;
        let mut out = String::from("timestamp,station_mm,reference_mm_h,candidate_mm_h\n");
        for &t in &common {
            if let Some(p) = loaded.store.precipitation(id, t) {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    format_instant(t),
                    p,
                    corner_max(&ref_fusers, &ref_hours, cell, t)?,
                    corner_max(&cand_fusers, &cand_hours, cell, t)?
                );
                station_rows += 1;
            }
        }
        write_text(&config.out_dir.join("station_vs_grid.csv"), &out)?;
    }

    Ok(SanityReport {
        hours: common.len(),
        spearman: rho,
        station_rows,
    })
}
