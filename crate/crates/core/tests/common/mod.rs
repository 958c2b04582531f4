//! Random instance generators and brute-force oracles shared by the
//! integration tests. The oracles avoid the library's indexing structures
//! and recompute everything by scanning.
#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, Duration, TimeZone, Utc};
use ndarray::{Array2, Array3, Array4};
use raingrid_core::ingest::N_CHANNELS;
use raingrid_core::{
    DatasetVersion, FeatureGrid, FusedGrid, FusedStep, GridSource, GridSpec, Lattice, Provenance, StationObservation,
    StationStore, StationSystem,
};
use rand::rngs::StdRng;
use rand::Rng;

pub fn utc(y: i32, m: u32, d: u32, h: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(y, m, d, h, 0, 0).unwrap()
}

/// A station with its hourly series; missing hours are outages.
#[derive(Debug, Clone)]
pub struct StationRecord {
    pub id: String,
    pub system: StationSystem,
    pub lat: f64,
    pub lon: f64,
    pub hourly: BTreeMap<DateTime<Utc>, f64>,
}

#[derive(Debug, Clone)]
pub struct FusionInstance {
    pub grid: GridSpec,
    pub background: GridSource,
    pub stations: Vec<StationRecord>,
}

impl FusionInstance {
    pub fn hours(&self) -> Vec<DateTime<Utc>> {
        self.background.timestamps().collect()
    }

    pub fn observations(&self) -> Vec<StationObservation> {
        self.stations
            .iter()
            .flat_map(|s| {
                s.hourly.iter().map(move |(t, p)| StationObservation {
                    station_id: s.id.clone(),
                    system: s.system,
                    lat: s.lat,
                    lon: s.lon,
                    timestamp: *t,
                    precipitation: *p,
                })
            })
            .collect()
    }

    pub fn store(&self) -> StationStore {
        StationStore::new(&self.grid, self.observations()).unwrap()
    }
}

pub fn random_grid(rng: &mut StdRng, max_rows: usize, max_cols: usize) -> GridSpec {
    let n_rows = rng.gen_range(1..=max_rows);
    let n_cols = rng.gen_range(1..=max_cols);
    let lat_north = rng.gen_range(-40.0..10.0);
    let lon_west = rng.gen_range(-80.0..-30.0);
    let h = rng.gen_range(0.1..0.6);
    let w = rng.gen_range(0.1..0.6);
    GridSpec {
        lat_north,
        lat_south: lat_north - h * n_rows as f64,
        lon_east: lon_west + w * n_cols as f64,
        lon_west,
        n_rows,
        n_cols,
    }
}

/// Background on the grid's corner lattice with random non-negative precipitation.
pub fn random_background(rng: &mut StdRng, grid: &GridSpec, t0: DateTime<Utc>, hours: usize) -> GridSource {
    let lattice = Lattice::cornering(grid);
    let values = Array4::from_shape_fn((hours, N_CHANNELS, lattice.nlat, lattice.nlon), |(_, ch, _, _)| {
        if ch == 0 {
            // many exact zeros, like real precipitation
            if rng.gen_bool(0.4) {
                0.0
            } else {
                rng.gen_range(0.0f32..12.0)
            }
        } else {
            rng.gen_range(-50.0f32..300.0)
        }
    });
    GridSource::new(lattice, t0, values).unwrap()
}

/// A point inside the grid, sometimes exactly on an interior lattice line.
fn random_position(rng: &mut StdRng, grid: &GridSpec) -> (f64, f64) {
    let h = grid.cell_height();
    let w = grid.cell_width();
    let lat = if rng.gen_bool(0.15) {
        grid.lat_north - rng.gen_range(0..grid.n_rows) as f64 * h
    } else {
        rng.gen_range(grid.lat_south..grid.lat_north)
    };
    let lon = if rng.gen_bool(0.15) {
        grid.lon_west + rng.gen_range(0..grid.n_cols) as f64 * w
    } else {
        rng.gen_range(grid.lon_west..grid.lon_east)
    };
    (lat, lon)
}

pub fn random_fusion_instance(
    rng: &mut StdRng,
    max_side: usize,
    max_stations: usize,
    max_hours: usize,
) -> FusionInstance {
    let grid = random_grid(rng, max_side, max_side);
    let hours = rng.gen_range(1..=max_hours);
    let t0 = utc(2015, 1, 1, 0) + Duration::hours(rng.gen_range(0..8000));
    let background = random_background(rng, &grid, t0, hours);
    let n_stations = rng.gen_range(0..=max_stations);
    let outage = rng.gen_range(0.0..0.6);
    let stations = (0..n_stations)
        .map(|k| {
            let (lat, lon) = if rng.gen_bool(0.1) {
                // outside the region
                (grid.lat_north + 1.0, grid.lon_west - 1.0)
            } else {
                random_position(rng, &grid)
            };
            let system = StationSystem::ALL[rng.gen_range(0..3)];
            let mut hourly = BTreeMap::new();
            for h in 0..hours {
                if rng.gen_bool(outage) {
                    continue;
                }
                let p = if rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen_range(0.0..90.0)
                };
                hourly.insert(t0 + Duration::hours(h as i64), p);
            }
            StationRecord {
                id: format!("st{k:02}"),
                system,
                lat,
                lon,
                hourly,
            }
        })
        .collect();
    FusionInstance {
        grid,
        background,
        stations,
    }
}

/// Cell by exhaustive comparison against the lattice lines, north and west edges closed.
pub fn oracle_cell(grid: &GridSpec, lat: f64, lon: f64) -> Option<(usize, usize)> {
    let north = |r: usize| {
        if r == grid.n_rows {
            grid.lat_south
        } else {
            grid.lat_north - r as f64 * grid.cell_height()
        }
    };
    let west = |c: usize| {
        if c == grid.n_cols {
            grid.lon_east
        } else {
            grid.lon_west + c as f64 * grid.cell_width()
        }
    };
    for r in 0..grid.n_rows {
        for c in 0..grid.n_cols {
            if lat <= north(r) && lat > north(r + 1) && lon >= west(c) && lon < west(c + 1) {
                return Some((r, c));
            }
        }
    }
    None
}

/// Fused precipitation and provenance by scanning every station for every cell.
pub fn oracle_fuse(
    inst: &FusionInstance,
    version: &DatasetVersion,
    t: DateTime<Utc>,
) -> (Array2<f32>, Array2<Provenance>) {
    let g = &inst.grid;
    let step = inst.background.step_of(t).unwrap();
    let bg = inst.background.values();
    let mut precip = Array2::zeros((g.n_rows, g.n_cols));
    let mut prov = Array2::from_elem((g.n_rows, g.n_cols), Provenance::BackgroundFallback);
    for r in 0..g.n_rows {
        for c in 0..g.n_cols {
            let mut best: Option<f64> = None;
            for s in &inst.stations {
                if !version.systems.contains(&s.system) || oracle_cell(g, s.lat, s.lon) != Some((r, c)) {
                    continue;
                }
                if let Some(&p) = s.hourly.get(&t) {
                    best = Some(best.map_or(p, |b| b.max(p)));
                }
            }
            match best {
                Some(p) => {
                    precip[[r, c]] = p as f32;
                    prov[[r, c]] = Provenance::StationFused;
                }
                None => {
                    let corners = [
                        bg[[step, 0, r, c]],
                        bg[[step, 0, r, c + 1]],
                        bg[[step, 0, r + 1, c]],
                        bg[[step, 0, r + 1, c + 1]],
                    ];
                    precip[[r, c]] = corners.into_iter().fold(f32::MIN, f32::max);
                }
            }
        }
    }
    (precip, prov)
}

/// Strictly increasing hourly timeline with random gaps, often crossing boreal summer.
pub fn random_timeline(rng: &mut StdRng, max_steps: usize) -> Vec<DateTime<Utc>> {
    let n = rng.gen_range(0..=max_steps);
    let year = rng.gen_range(2005..2022);
    let month = rng.gen_range(1..=12);
    let mut t = utc(year, month, 1, 0) + Duration::hours(rng.gen_range(0..720));
    let gap_p = rng.gen_range(0.0..0.15);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(t);
        let jump = if rng.gen_bool(gap_p) {
            if rng.gen_bool(0.2) {
                rng.gen_range(500..3000)
            } else {
                rng.gen_range(2..12)
            }
        } else {
            1
        };
        t += Duration::hours(jump);
    }
    out
}

/// Counts start indices whose whole window is consecutive hours outside the excluded months.
pub fn oracle_window_count(timeline: &[DateTime<Utc>], window_len: usize, excluded: &[u32]) -> usize {
    (0..timeline.len())
        .filter(|&i| {
            i + window_len <= timeline.len()
                && timeline[i..i + window_len]
                    .iter()
                    .all(|t| !excluded.contains(&t.month()))
                && timeline[i..i + window_len]
                    .windows(2)
                    .all(|w| w[1] - w[0] == Duration::hours(1))
        })
        .count()
}

/// Fused series whose precipitation at step `i` is `i` everywhere and whose
/// other channels hold `i * 100 + channel`.
pub fn indexed_series(timeline: &[DateTime<Utc>], rows: usize, cols: usize) -> Vec<FusedStep> {
    timeline
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let values = Array3::from_shape_fn((rows, cols, N_CHANNELS), |(_, _, ch)| {
                if ch == 0 {
                    i as f32
                } else {
                    (i * 100 + ch) as f32
                }
            });
            FusedStep {
                feature: FeatureGrid { timestamp: t, values },
                fused: FusedGrid {
                    timestamp: t,
                    precip: Array2::from_elem((rows, cols), i as f32),
                    provenance: Array2::from_elem((rows, cols), Provenance::BackgroundFallback),
                },
            }
        })
        .collect()
}
