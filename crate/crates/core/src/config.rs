//! Declarative pipeline configuration (TOML).
//!
//! ```toml
//! version = "ERA5+SIA"
//! inference_version = "GFS+A"
//! out_dir = "out"
//!
//! [grid]
//! lat_north = -21.6998
//! lat_south = -23.8019
//! lon_east = -42.3568
//! lon_west = -45.0529
//! n_rows = 9
//! n_cols = 11
//!
//! [stations]
//! catalog = "stations.csv"
//! [stations.observations]
//! Sirenes = ["sirenes_2011.csv"]
//! INMET = ["inmet.csv"]
//! AlertaRio = ["alertario.csv"]
//!
//! [background]
//! train = ["era5_2011.json"]
//! inference = ["gfs_20241220.json"]
//!
//! [window]
//! lookback = 5
//! horizon = 5
//! excluded_months = [6, 7, 8]
//!
//! [split]
//! train = 0.6
//! val = 0.2
//! test = 0.2
//!
//! [evaluation]
//! mask = [[5, 7], [5, 8], [6, 7]]
//! weights = [1.0, 2.0, 5.0, 10.0]
//! leads = [1, 2, 3, 4, 5]
//! clamp_negative = true
//! use_mask = true
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fusion::DatasetVersion;
use crate::grid::{CellIndex, GridSpec};
use crate::ingest::StationSystem;
use crate::metrics::{validate_weights, EvalOptions, EvaluationMask, DEFAULT_LEVEL_WEIGHTS};
use crate::windowing::{SplitFractions, WindowConfig};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationsConfig {
    pub catalog: Option<PathBuf>,
    /// Observation CSVs keyed by system name.
    #[serde(default)]
    pub observations: BTreeMap<String, Vec<PathBuf>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundConfig {
    #[serde(default)]
    pub train: Vec<PathBuf>,
    #[serde(default)]
    pub inference: Vec<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// `[row, col]` pairs; absent means the whole grid.
    pub mask: Option<Vec<[usize; 2]>>,
    pub weights: [f64; 4],
    /// 1-based lead hours; absent means every lead of the horizon.
    pub leads: Option<Vec<usize>>,
    pub clamp_negative: bool,
    pub use_mask: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            mask: None,
            weights: DEFAULT_LEVEL_WEIGHTS,
            leads: None,
            clamp_negative: true,
            use_mask: true,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SanityConfig {
    /// Packs of the reference source; defaults to `background.train`.
    pub reference: Vec<PathBuf>,
    /// Packs of the compared source; defaults to `background.inference`.
    pub candidate: Vec<PathBuf>,
    pub station: Option<String>,
    pub start: Option<String>,
    pub end: Option<String>,
}

fn default_version() -> String {
    "ERA5+SIA".into()
}

fn default_inference_version() -> String {
    "GFS+A".into()
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_grid() -> GridSpec {
    GridSpec::RIO
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_grid")]
    pub grid: GridSpec,
    #[serde(default)]
    pub stations: StationsConfig,
    #[serde(default)]
    pub background: BackgroundConfig,
    #[serde(default = "default_version")]
    pub version: String,
    #[serde(default = "default_inference_version")]
    pub inference_version: String,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub sanity: SanityConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config deserializes")
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(c) = self.stations.catalog.as_mut() {
            fix(c);
        }
        self.stations.observations.values_mut().flatten().for_each(fix);
        self.background.train.iter_mut().for_each(fix);
        self.background.inference.iter_mut().for_each(fix);
        self.sanity.reference.iter_mut().for_each(fix);
        self.sanity.candidate.iter_mut().for_each(fix);
        fix(&mut self.out_dir);
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.window.validate()?;
        self.split.validate()?;
        validate_weights(&self.evaluation.weights)?;
        self.dataset_version()?;
        self.inference_dataset_version()?;
        for name in self.stations.observations.keys() {
            name.parse::<StationSystem>()?;
        }
        if let Some(leads) = &self.evaluation.leads {
            if leads.is_empty() || leads.iter().any(|l| *l == 0 || *l > self.window.horizon) {
                return Err(Error::Config(format!(
                    "evaluation.leads {leads:?} must be non-empty and within 1..={}",
                    self.window.horizon
                )));
            }
        }
        self.evaluation_mask()?;
        Ok(())
    }

    pub fn dataset_version(&self) -> Result<DatasetVersion> {
        self.version.parse()
    }

    pub fn inference_dataset_version(&self) -> Result<DatasetVersion> {
        self.inference_version.parse()
    }

    /// Observation files per system.
    pub fn observation_files(&self) -> Result<BTreeMap<StationSystem, Vec<PathBuf>>> {
        let mut out: BTreeMap<StationSystem, Vec<PathBuf>> = BTreeMap::new();
        for (name, files) in &self.stations.observations {
            out.entry(name.parse()?).or_default().extend(files.iter().cloned());
        }
        Ok(out)
    }

    /// Fails unless every system of `version` has a catalog and observation files.
    pub fn require_station_inputs(&self, version: &DatasetVersion) -> Result<()> {
        if version.systems.is_empty() {
            return Ok(());
        }
        if self.stations.catalog.is_none() {
            return Err(Error::Config(format!("version {version} needs stations.catalog")));
        }
        let files = self.observation_files()?;
        for system in &version.systems {
            if files.get(system).is_none_or(|f| f.is_empty()) {
                return Err(Error::Config(format!(
                    "version {version} enables {system} but stations.observations has no files for it"
                )));
            }
        }
        Ok(())
    }

    pub fn evaluation_mask(&self) -> Result<EvaluationMask> {
        match (&self.evaluation.mask, self.evaluation.use_mask) {
            (Some(cells), true) => EvaluationMask::new(cells.iter().map(|[r, c]| CellIndex::new(*r, *c)), &self.grid),
            _ => Ok(EvaluationMask::full(&self.grid)),
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            clamp_negative: self.evaluation.clamp_negative,
        }
    }

    pub fn leads(&self) -> Vec<usize> {
        self.evaluation
            .leads
            .clone()
            .unwrap_or_else(|| (1..=self.window.horizon).collect())
    }
}

/// Fails with a config error naming the first path that does not exist.
pub fn require_exists<'a>(paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
    for p in paths {
        if !p.exists() {
            return Err(Error::Config(format!("referenced path {} does not exist", p.display())));
        }
    }
    Ok(())
}
