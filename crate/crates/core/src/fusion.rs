//! Gauge/background fusion.
//!
//! For every cell and hour the fused precipitation is the maximum hourly
//! accumulation among the operating stations of the enabled systems inside
//! the cell. Cells without any operating station fall back to the maximum
//! background precipitation over the cell's four corner nodes. Feature grids
//! add the 18 upper-air background channels, sampled at each cell's NW node.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Timelike, Utc};
use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellIndex, GridSpec};
use crate::ingest::{GridSource, StationStore, StationSystem, N_CHANNELS};

/// Maximum distance, in degrees, between a cell corner and the background node it maps to.
pub const CORNER_SNAP_TOLERANCE_DEG: f64 = 0.05;

/// Which background product feeds the fallback and upper-air channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Background {
    /// ERA5 reanalysis (training).
    Reanalysis,
    /// GFS numerical forecast (inference).
    Nwp,
}

impl Background {
    pub fn label(self) -> &'static str {
        match self {
            Background::Reanalysis => "ERA5",
            Background::Nwp => "GFS",
        }
    }
}

/// A dataset version: a background product plus a subset of station systems.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DatasetVersion {
    pub background: Background,
    pub systems: BTreeSet<StationSystem>,
}

impl DatasetVersion {
    pub fn new(background: Background, systems: impl IntoIterator<Item = StationSystem>) -> Self {
        Self {
            background,
            systems: systems.into_iter().collect(),
        }
    }

    /// Background only, no station data.
    pub fn background_only(background: Background) -> Self {
        Self::new(background, [])
    }

    /// The eight reanalysis versions, every subset of the three networks.
    pub fn reanalysis_versions() -> Vec<DatasetVersion> {
        (0u8..8)
            .map(|mask| {
                let systems = StationSystem::ALL
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, s)| *s);
                DatasetVersion::new(Background::Reanalysis, systems)
            })
            .collect()
    }

    pub fn enables(&self, system: StationSystem) -> bool {
        self.systems.contains(&system)
    }
}

impl fmt::Display for DatasetVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.background.label())?;
        if !self.systems.is_empty() {
            f.write_str("+")?;
            for s in StationSystem::ALL.iter().filter(|s| self.systems.contains(s)) {
                write!(f, "{}", s.letter())?;
            }
        }
        Ok(())
    }
}

impl FromStr for DatasetVersion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (prefix, letters) = s.split_once('+').unwrap_or((s, ""));
        let background = match prefix.to_ascii_uppercase().as_str() {
            "ERA5" => Background::Reanalysis,
            "GFS" => Background::Nwp,
            _ => return Err(Error::Config(format!("unknown dataset version '{s}'"))),
        };
        if s.contains('+') && letters.is_empty() {
            return Err(Error::Config(format!("dataset version '{s}' lists no systems")));
        }
        let mut systems = BTreeSet::new();
        for c in letters.chars() {
            let system = StationSystem::ALL
                .into_iter()
                .find(|sys| sys.letter() == c.to_ascii_uppercase())
                .ok_or_else(|| Error::Config(format!("unknown system letter '{c}' in '{s}'")))?;
            if !systems.insert(system) {
                return Err(Error::Config(format!("system letter '{c}' repeated in '{s}'")));
            }
        }
        Ok(Self { background, systems })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    StationFused,
    BackgroundFallback,
}

/// Fused hourly precipitation for every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedGrid {
    pub timestamp: DateTime<Utc>,
    /// mm/h, `[row][col]`
    pub precip: Array2<f32>,
    pub provenance: Array2<Provenance>,
}

impl FusedGrid {
    pub fn station_fused_cells(&self) -> usize {
        self.provenance
            .iter()
            .filter(|p| **p == Provenance::StationFused)
            .count()
    }
}

/// Model input for one hour: `[row][col][channel]` in canonical channel order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub timestamp: DateTime<Utc>,
    pub values: Array3<f32>,
}

/// One hour of the fused series.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedStep {
    pub feature: FeatureGrid,
    pub fused: FusedGrid,
}

fn require_on_hour(t: DateTime<Utc>) -> Result<()> {
    if t.minute() != 0 || t.second() != 0 || t.nanosecond() != 0 {
        return Err(Error::Contract(format!("{t} is not on the hour")));
    }
    Ok(())
}

/// Fusion over one grid, one station store and one background source.
#[derive(Debug)]
pub struct Fuser<'a> {
    grid: &'a GridSpec,
    stations: &'a StationStore,
    background: &'a GridSource,
    /// Lattice indices of NW, NE, SW, SE corners, per cell in row-major order.
    corners: Vec<[(usize, usize); 4]>,
}

impl<'a> Fuser<'a> {
    /// Resolves every cell corner to a background lattice node.
    pub fn new(grid: &'a GridSpec, stations: &'a StationStore, background: &'a GridSource) -> Result<Self> {
        grid.validate()?;
        let lattice = background.lattice();
        let mut corners = Vec::with_capacity(grid.n_cells());
        for cell in grid.cells() {
            let nodes = grid.cell_corners(cell)?;
            let mut idx = [(0, 0); 4];
            for (slot, node) in idx.iter_mut().zip(nodes) {
                *slot = lattice.snap(node.lat, node.lon, CORNER_SNAP_TOLERANCE_DEG).ok_or_else(|| {
                    Error::Range(format!(
                        "corner ({:.4}, {:.4}) of cell ({}, {}) has no background node within {CORNER_SNAP_TOLERANCE_DEG} deg",
                        node.lat, node.lon, cell.row, cell.col
                    ))
                })?;
            }
            corners.push(idx);
        }
        Ok(Self {
            grid,
            stations,
            background,
            corners,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.grid
    }

    pub fn background(&self) -> &GridSource {
        self.background
    }

    fn corner_nodes(&self, cell: CellIndex) -> &[(usize, usize); 4] {
        &self.corners[cell.row * self.grid.n_cols + cell.col]
    }

    fn step(&self, t: DateTime<Utc>) -> Result<usize> {
        self.background.step_of(t).ok_or_else(|| {
            Error::Range(format!(
                "{t} outside background time axis {} .. {}",
                self.background.start(),
                self.background.end()
            ))
        })
    }

    /// Largest hourly reading among `system`'s operating stations in `cell`.
    pub fn find_max_precip(&self, cell: CellIndex, system: StationSystem, t: DateTime<Utc>) -> Option<f64> {
        self.stations
            .operating(system, cell, t)
            .map(|(_, p)| p)
            .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))))
    }

    /// Largest reading over all systems enabled in `version`; `None` if none operates.
    pub fn find_max_precip_across_systems(
        &self,
        cell: CellIndex,
        t: DateTime<Utc>,
        version: &DatasetVersion,
    ) -> Option<f64> {
        version
            .systems
            .iter()
            .filter_map(|&s| self.find_max_precip(cell, s, t))
            .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))))
    }

    /// Maximum background precipitation over the four corners of `cell`.
    pub fn fallback_corner_max(&self, cell: CellIndex, t: DateTime<Utc>) -> Result<f32> {
        if !self.grid.contains(cell) {
            return Err(Error::Range(format!("cell ({}, {}) outside grid", cell.row, cell.col)));
        }
        let step = self.step(t)?;
        Ok(self
            .corner_nodes(cell)
            .iter()
            .map(|&(i, j)| self.background.value(step, 0, i, j))
            .fold(f32::NEG_INFINITY, f32::max))
    }

    pub fn fuse_precip_grid(&self, t: DateTime<Utc>, version: &DatasetVersion) -> Result<FusedGrid> {
        require_on_hour(t)?;
        self.step(t)?;
        let shape = (self.grid.n_rows, self.grid.n_cols);
        let mut precip = Array2::<f32>::zeros(shape);
        let mut provenance = Array2::from_elem(shape, Provenance::BackgroundFallback);
        for cell in self.grid.cells() {
            let at = [cell.row, cell.col];
            match self.find_max_precip_across_systems(cell, t, version) {
                Some(p) => {
                    precip[at] = p as f32;
                    provenance[at] = Provenance::StationFused;
                }
                None => precip[at] = self.fallback_corner_max(cell, t)?,
            }
        }
        Ok(FusedGrid {
            timestamp: t,
            precip,
            provenance,
        })
    }

    /// Feature grid whose channel 0 is `fused`; the other channels come from the background.
    pub fn feature_grid_from(&self, fused: &FusedGrid) -> Result<FeatureGrid> {
        let step = self.step(fused.timestamp)?;
        let mut values = Array3::<f32>::zeros((self.grid.n_rows, self.grid.n_cols, N_CHANNELS));
        for cell in self.grid.cells() {
            let (i, j) = self.corner_nodes(cell)[0];
            values[[cell.row, cell.col, 0]] = fused.precip[[cell.row, cell.col]];
            for ch in 1..N_CHANNELS {
                values[[cell.row, cell.col, ch]] = self.background.value(step, ch, i, j);
            }
        }
        Ok(FeatureGrid {
            timestamp: fused.timestamp,
            values,
        })
    }

    pub fn assemble_feature_grid(&self, t: DateTime<Utc>, version: &DatasetVersion) -> Result<FeatureGrid> {
        let fused = self.fuse_precip_grid(t, version)?;
        self.feature_grid_from(&fused)
    }

    /// Fuses `hours` consecutive steps starting at `start`, in chronological order.
    ///
    /// Steps are computed in parallel; output order and content do not depend
    /// on scheduling.
    pub fn build_fused_series(
        &self,
        start: DateTime<Utc>,
        hours: usize,
        version: &DatasetVersion,
    ) -> Result<Vec<FusedStep>> {
        require_on_hour(start)?;
        if hours > 0 {
            self.step(start)?;
            self.step(start + Duration::hours(hours as i64 - 1))?;
        }
        (0..hours)
            .into_par_iter()
            .map(|h| {
                let t = start + Duration::hours(h as i64);
                let fused = self.fuse_precip_grid(t, version)?;
                let feature = self.feature_grid_from(&fused)?;
                Ok(FusedStep { feature, fused })
            })
            .collect()
    }

    /// The whole background time axis.
    pub fn build_full_series(&self, version: &DatasetVersion) -> Result<Vec<FusedStep>> {
        self.build_fused_series(self.background.start(), self.background.nt(), version)
    }
}
