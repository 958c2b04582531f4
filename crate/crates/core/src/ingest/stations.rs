//! Station catalogs, observation CSVs and hourly accumulation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellIndex, GridSpec};

/// A network of surface stations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StationSystem {
    Sirenes,
    #[serde(rename = "INMET")]
    Inmet,
    AlertaRio,
}

impl StationSystem {
    pub const ALL: [StationSystem; 3] = [StationSystem::Sirenes, StationSystem::Inmet, StationSystem::AlertaRio];

    pub fn name(self) -> &'static str {
        match self {
            StationSystem::Sirenes => "Sirenes",
            StationSystem::Inmet => "INMET",
            StationSystem::AlertaRio => "AlertaRio",
        }
    }

    /// Letter used in dataset version names (`ERA5+SIA`).
    pub fn letter(self) -> char {
        match self {
            StationSystem::Sirenes => 'S',
            StationSystem::Inmet => 'I',
            StationSystem::AlertaRio => 'A',
        }
    }

    /// Reporting cadence in minutes.
    pub fn native_resolution_minutes(self) -> u32 {
        match self {
            StationSystem::Sirenes | StationSystem::AlertaRio => 15,
            StationSystem::Inmet => 60,
        }
    }
}

impl fmt::Display for StationSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StationSystem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sirenes" => Ok(StationSystem::Sirenes),
            "inmet" => Ok(StationSystem::Inmet),
            "alertario" => Ok(StationSystem::AlertaRio),
            other => Err(Error::Config(format!("unknown station system '{other}'"))),
        }
    }
}

/// Catalog entry for one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationInfo {
    pub station_id: String,
    pub system: StationSystem,
    pub lat: f64,
    pub lon: f64,
    /// Local clock minus UTC, in minutes (Rio de Janeiro: -180).
    pub tz_offset_minutes: i32,
}

#[derive(Debug, Clone, Default)]
pub struct StationCatalog {
    stations: BTreeMap<String, StationInfo>,
}

const CATALOG_HEADER: [&str; 5] = ["station_id", "system", "lat", "lon", "tz_offset_minutes"];
const OBSERVATION_HEADER: [&str; 3] = ["station_id", "timestamp_iso8601_local", "precipitation_mm"];

fn check_header(path: &Path, headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::format(
            path,
            format!("expected header '{}', found '{}'", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

impl StationCatalog {
    pub fn from_stations(stations: impl IntoIterator<Item = StationInfo>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for s in stations {
            if map.contains_key(&s.station_id) {
                return Err(Error::Contract(format!("duplicate station id '{}'", s.station_id)));
            }
            map.insert(s.station_id.clone(), s);
        }
        Ok(Self { stations: map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, path)
    }

    /// Parses a catalog. Any bad row fails the whole catalog.
    pub fn from_reader<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::format(path, format!("unreadable header: {e}")))?
            .clone();
        check_header(path, &headers, &CATALOG_HEADER)?;

        let mut stations = BTreeMap::new();
        for record in rdr.records() {
            let record = record.map_err(|e| Error::format(path, e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            let bad = |msg: String| Error::format(path, format!("line {line}: {msg}"));
            let id = record[0].to_string();
            if id.is_empty() {
                return Err(bad("empty station_id".into()));
            }
            let system: StationSystem = record[1].parse().map_err(|e: Error| bad(e.to_string()))?;
            let lat: f64 = record[2]
                .parse()
                .map_err(|_| bad(format!("bad lat '{}'", &record[2])))?;
            let lon: f64 = record[3]
                .parse()
                .map_err(|_| bad(format!("bad lon '{}'", &record[3])))?;
            let tz: i32 = record[4]
                .parse()
                .map_err(|_| bad(format!("bad tz_offset_minutes '{}'", &record[4])))?;
            if !lat.is_finite() || !lon.is_finite() {
                return Err(bad("non-finite coordinates".into()));
            }
            if stations.contains_key(&id) {
                return Err(bad(format!("duplicate station id '{id}'")));
            }
            stations.insert(
                id.clone(),
                StationInfo {
                    station_id: id,
                    system,
                    lat,
                    lon,
                    tz_offset_minutes: tz,
                },
            );
        }
        Ok(Self { stations })
    }

    pub fn get(&self, id: &str) -> Option<&StationInfo> {
        self.stations.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &StationInfo> {
        self.stations.values()
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }
}

/// One precipitation reading, accumulated over the interval ending at `timestamp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationObservation {
    pub station_id: String,
    pub system: StationSystem,
    pub lat: f64,
    pub lon: f64,
    pub timestamp: DateTime<Utc>,
    /// Millimetres over the native interval (one hour after aggregation).
    pub precipitation: f64,
}

/// A rejected observation row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedObservations {
    pub observations: Vec<StationObservation>,
    pub row_errors: Vec<RowError>,
}

fn parse_local_timestamp(s: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn parse_station_observations(
    path: &Path,
    system: StationSystem,
    catalog: &StationCatalog,
) -> Result<ParsedObservations> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_station_observations(file, path, system, catalog)
}

/// Parses an observation CSV for `system`.
///
/// Local timestamps are shifted to UTC with each station's catalog offset.
/// Rows that cannot be used (unknown station, bad number, negative value,
/// off-cadence timestamp) are collected into `row_errors` with their line
/// numbers; only a malformed header aborts the parse.
pub fn read_station_observations<R: Read>(
    reader: R,
    path: &Path,
    system: StationSystem,
    catalog: &StationCatalog,
) -> Result<ParsedObservations> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(path, format!("unreadable header: {e}")))?
        .clone();
    check_header(path, &headers, &OBSERVATION_HEADER)?;

    let resolution = system.native_resolution_minutes();
    let mut out = ParsedObservations::default();
    for (i, record) in rdr.records().enumerate() {
        // header is line 1
        let fallback_line = i as u64 + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(fallback_line, |p| p.line());
                out.row_errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(fallback_line, |p| p.line());
        let mut reject = |message: String| out.row_errors.push(RowError { line, message });

        if record.len() != OBSERVATION_HEADER.len() {
            reject(format!(
                "expected {} fields, found {}",
                OBSERVATION_HEADER.len(),
                record.len()
            ));
            continue;
        }
        let id = &record[0];
        let Some(info) = catalog.get(id) else {
            reject(format!("unknown station '{id}'"));
            continue;
        };
        if info.system != system {
            reject(format!("station '{id}' belongs to {}, not {system}", info.system));
            continue;
        }
        let Some(local) = parse_local_timestamp(&record[1]) else {
            reject(format!("unparseable timestamp '{}'", &record[1]));
            continue;
        };
        let precipitation: f64 = match record[2].parse() {
            Ok(v) => v,
            Err(_) => {
                reject(format!("non-numeric precipitation '{}'", &record[2]));
                continue;
            }
        };
        if !precipitation.is_finite() {
            reject(format!("non-finite precipitation '{}'", &record[2]));
            continue;
        }
        if precipitation < 0.0 {
            reject("negative precipitation".into());
            continue;
        }
        let timestamp = (local - Duration::minutes(info.tz_offset_minutes as i64)).and_utc();
        if timestamp.second() != 0 || timestamp.nanosecond() != 0 || !timestamp.minute().is_multiple_of(resolution) {
            reject(format!(
                "timestamp '{}' not aligned to {resolution}-minute cadence",
                &record[1]
            ));
            continue;
        }
        out.observations.push(StationObservation {
            station_id: info.station_id.clone(),
            system,
            lat: info.lat,
            lon: info.lon,
            timestamp,
            precipitation,
        });
    }
    Ok(out)
}

/// Splits a mixed observation list into per-station series (ids sorted).
pub fn group_by_station(obs: Vec<StationObservation>) -> BTreeMap<String, Vec<StationObservation>> {
    let mut groups: BTreeMap<String, Vec<StationObservation>> = BTreeMap::new();
    for o in obs {
        groups.entry(o.station_id.clone()).or_default().push(o);
    }
    groups
}

fn hour_ending(t: DateTime<Utc>) -> DateTime<Utc> {
    let floor = t
        .with_minute(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_nanosecond(0))
        .expect("zeroing minutes is always valid");
    if floor == t {
        t
    } else {
        floor + Duration::hours(1)
    }
}

/// Accumulates one station's native-cadence readings into hourly totals.
///
/// A reading stamped `τ` covers the interval ending at `τ`, so the hourly
/// value at `H` sums the readings in `(H - 1h, H]`. An hour missing any of
/// its sub-interval readings produces no output. Hourly-native series pass
/// through unchanged. Output is sorted by time.
pub fn aggregate_to_hourly(obs: &[StationObservation]) -> Result<Vec<StationObservation>> {
    let Some(first) = obs.first() else {
        return Ok(Vec::new());
    };
    if let Some(other) = obs
        .iter()
        .find(|o| o.station_id != first.station_id || o.system != first.system)
    {
        return Err(Error::Contract(format!(
            "aggregate_to_hourly expects one station, got '{}' and '{}'",
            first.station_id, other.station_id
        )));
    }
    let resolution = first.system.native_resolution_minutes();
    if resolution == 0 || 60 % resolution != 0 {
        return Err(Error::Contract(format!(
            "native resolution {resolution} does not divide 60"
        )));
    }
    let per_hour = (60 / resolution) as usize;

    let mut sorted: Vec<&StationObservation> = obs.iter().collect();
    sorted.sort_by_key(|o| o.timestamp);
    if let Some(w) = sorted.windows(2).find(|w| w[0].timestamp == w[1].timestamp) {
        return Err(Error::Contract(format!(
            "duplicate reading for station '{}' at {}",
            first.station_id, w[0].timestamp
        )));
    }

    let mut hours: BTreeMap<DateTime<Utc>, (usize, f64)> = BTreeMap::new();
    for o in &sorted {
        if !o.timestamp.minute().is_multiple_of(resolution) || o.timestamp.second() != 0 {
            return Err(Error::Contract(format!(
                "reading at {} is off the {resolution}-minute cadence",
                o.timestamp
            )));
        }
        let slot = hours.entry(hour_ending(o.timestamp)).or_insert((0, 0.0));
        slot.0 += 1;
        slot.1 += o.precipitation;
    }

    Ok(hours
        .into_iter()
        .filter(|(_, (count, _))| *count == per_hour)
        .map(|(timestamp, (_, total))| StationObservation {
            station_id: first.station_id.clone(),
            system: first.system,
            lat: first.lat,
            lon: first.lon,
            timestamp,
            precipitation: total,
        })
        .collect())
}

#[derive(Debug, Clone)]
struct StationSeries {
    id: String,
    system: StationSystem,
    hourly: HashMap<DateTime<Utc>, f64>,
}

/// Hourly station data indexed by grid cell.
///
/// Stations outside the region are kept out of the cell index and never
/// contribute to fusion.
#[derive(Debug, Clone, Default)]
pub struct StationStore {
    series: Vec<StationSeries>,
    by_cell: HashMap<(StationSystem, CellIndex), Vec<usize>>,
    by_id: HashMap<String, usize>,
}

impl StationStore {
    /// Builds the store from hourly observations (see [`aggregate_to_hourly`]).
    pub fn new(grid: &GridSpec, hourly: impl IntoIterator<Item = StationObservation>) -> Result<Self> {
        let mut store = StationStore::default();
        for o in hourly {
            if o.timestamp.minute() != 0 || o.timestamp.second() != 0 {
                return Err(Error::Contract(format!(
                    "station store expects hourly data; '{}' has a reading at {}",
                    o.station_id, o.timestamp
                )));
            }
            let idx = match store.by_id.get(&o.station_id) {
                Some(&idx) => idx,
                None => {
                    let idx = store.series.len();
                    store.series.push(StationSeries {
                        id: o.station_id.clone(),
                        system: o.system,
                        hourly: HashMap::new(),
                    });
                    store.by_id.insert(o.station_id.clone(), idx);
                    if let Some(cell) = grid.cell_of(o.lat, o.lon) {
                        store.by_cell.entry((o.system, cell)).or_default().push(idx);
                    }
                    idx
                }
            };
            let series = &mut store.series[idx];
            if series.system != o.system {
                return Err(Error::Contract(format!(
                    "station '{}' reported under two systems",
                    o.station_id
                )));
            }
            if series.hourly.insert(o.timestamp, o.precipitation).is_some() {
                return Err(Error::Contract(format!(
                    "duplicate hourly value for '{}' at {}",
                    o.station_id, o.timestamp
                )));
            }
        }
        for ids in store.by_cell.values_mut() {
            ids.sort_by(|a, b| store.series[*a].id.cmp(&store.series[*b].id));
        }
        Ok(store)
    }

    /// Stations of `system` located in `cell` that report a value at `t`, sorted by id.
    pub fn get_stations(&self, system: StationSystem, cell: CellIndex, t: DateTime<Utc>) -> Vec<&str> {
        self.operating(system, cell, t).map(|(id, _)| id).collect()
    }

    /// `(station_id, precipitation)` for every operating station of `system` in `cell` at `t`.
    pub fn operating(
        &self,
        system: StationSystem,
        cell: CellIndex,
        t: DateTime<Utc>,
    ) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.by_cell
            .get(&(system, cell))
            .into_iter()
            .flatten()
            .filter_map(move |&idx| {
                let s = &self.series[idx];
                s.hourly.get(&t).map(|&p| (s.id.as_str(), p))
            })
    }

    /// Hourly value of one station at `t`.
    pub fn precipitation(&self, station_id: &str, t: DateTime<Utc>) -> Option<f64> {
        let idx = *self.by_id.get(station_id)?;
        self.series[idx].hourly.get(&t).copied()
    }

    pub fn n_stations(&self) -> usize {
        self.series.len()
    }
}
