//! On-disk fixtures for driving the `raingrid` binary.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{DateTime, Duration, TimeZone, Utc};
use ndarray::Array4;
use raingrid_core::ingest::{write_grid_pack, N_CHANNELS};
use raingrid_core::{CellIndex, GridSource, GridSpec, Lattice, StationSystem};

pub const BIN: &str = env!("CARGO_BIN_EXE_raingrid");

pub fn utc(y: i32, m: u32, d: u32, h: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(y, m, d, h, 0, 0).unwrap()
}

/// Catalog stations: id, system, cell.
pub const STATIONS: [(&str, StationSystem, (usize, usize)); 5] = [
    ("S01", StationSystem::Sirenes, (5, 7)),
    ("S02", StationSystem::Sirenes, (2, 3)),
    ("I01", StationSystem::Inmet, (4, 6)),
    ("A01", StationSystem::AlertaRio, (5, 8)),
    ("A02", StationSystem::AlertaRio, (6, 7)),
];

/// A station hour forced to a given total, by UTC hour ending.
#[derive(Debug, Clone, Copy)]
pub struct Spike {
    pub station: &'static str,
    pub at: DateTime<Utc>,
    pub mm: f64,
}

/// Background precipitation at `(hour, i, j)` in mm/h, always below 5.
pub fn background_precip(hour: i64, i: usize, j: usize) -> f32 {
    ((hour + 3 * i as i64 + j as i64).rem_euclid(9)) as f32 * 0.5
}

/// Hourly gauge total for the `k`-th station at the hour ending `t`.
pub fn station_hourly(k: usize, hour: i64) -> f64 {
    // four quarters of 0, 0.25, 0.5 or 0.75 mm
    (0..4)
        .map(|q| ((hour * 7 + q * 3 + k as i64).rem_euclid(4)) as f64 * 0.25)
        .sum()
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn empty() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    /// Stations, gauges and both backgrounds over `hours` hours from `start`.
    pub fn standard(start: DateTime<Utc>, hours: usize, spikes: &[Spike]) -> Self {
        let f = Self::empty();
        f.write_catalog();
        f.write_observations(start, hours, spikes);
        f.write_pack("era5.json", start, hours, background_precip);
        f.write_pack("gfs.json", start, hours, |h, i, j| background_precip(h + 1, i, j));
        f.write_config("");
        f
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.path("out").join(name)
    }

    pub fn write_catalog(&self) {
        let mut s = String::from("station_id,system,lat,lon,tz_offset_minutes\n");
        for (id, system, (r, c)) in STATIONS {
            let p = GridSpec::RIO.cell_center(CellIndex::new(r, c));
            writeln!(s, "{id},{},{:.6},{:.6},-180", system.name(), p.lat, p.lon).unwrap();
        }
        std::fs::write(self.path("stations.csv"), s).unwrap();
    }

    /// Native-cadence CSVs in local time (UTC-3). A02 is down every seventh hour.
    pub fn write_observations(&self, start: DateTime<Utc>, hours: usize, spikes: &[Spike]) {
        let header = "station_id,timestamp_iso8601_local,precipitation_mm\n";
        let mut files: Vec<(StationSystem, String)> =
            StationSystem::ALL.iter().map(|s| (*s, header.to_string())).collect();
        let local = |t: DateTime<Utc>| (t - Duration::hours(3)).format("%Y-%m-%dT%H:%M:%S").to_string();
        for (k, (id, system, _)) in STATIONS.iter().enumerate() {
            let text = &mut files.iter_mut().find(|(s, _)| s == system).unwrap().1;
            for h in 0..hours as i64 {
                if *id == "A02" && h % 7 == 3 {
                    continue;
                }
                let t = start + Duration::hours(h);
                let hour_index = (t - utc(2000, 1, 1, 0)).num_hours();
                let spike = spikes.iter().find(|s| s.station == *id && s.at == t);
                let total = spike.map_or_else(|| station_hourly(k, hour_index), |s| s.mm);
                if system.native_resolution_minutes() == 60 {
                    writeln!(text, "{id},{},{total}", local(t)).unwrap();
                } else {
                    for q in 0..4i64 {
                        let quarter = match spike {
                            Some(_) => total / 4.0,
                            None => ((hour_index * 7 + q * 3 + k as i64).rem_euclid(4)) as f64 * 0.25,
                        };
                        let tq = t - Duration::minutes(45 - 15 * q);
                        writeln!(text, "{id},{},{quarter}", local(tq)).unwrap();
                    }
                }
            }
        }
        for (system, text) in files {
            std::fs::write(self.path(&format!("{}.csv", system.name().to_lowercase())), text).unwrap();
        }
    }

    /// A pack on the Rio corner lattice. Non-precipitation channels vary smoothly.
    pub fn write_pack(
        &self,
        name: &str,
        start: DateTime<Utc>,
        hours: usize,
        precip: impl Fn(i64, usize, usize) -> f32,
    ) {
        let lattice = Lattice::cornering(&GridSpec::RIO);
        let base = (start - utc(2000, 1, 1, 0)).num_hours();
        let values = Array4::from_shape_fn((hours, N_CHANNELS, lattice.nlat, lattice.nlon), |(h, ch, i, j)| {
            if ch == 0 {
                precip(base + h as i64, i, j)
            } else {
                ch as f32 * 10.0 + i as f32 + j as f32 * 0.1 + h as f32 * 0.01
            }
        });
        let src = GridSource::new(lattice, start, values).unwrap();
        write_grid_pack(&self.path(name), &src).unwrap();
    }

    /// Standard config plus `extra` TOML appended at top level.
    pub fn write_config(&self, extra: &str) -> PathBuf {
        let text = format!(
            r#"version = "ERA5+SIA"
inference_version = "GFS+A"
out_dir = "out"
{extra}

[stations]
catalog = "stations.csv"

[stations.observations]
Sirenes = ["sirenes.csv"]
INMET = ["inmet.csv"]
AlertaRio = ["alertario.csv"]

[background]
train = ["era5.json"]
inference = ["gfs.json"]

[evaluation]
mask = [[5, 7], [5, 8], [6, 7], [4, 6]]
"#
        );
        let path = self.path("config.toml");
        std::fs::write(&path, text).unwrap();
        path
    }

    /// Runs the binary with `--config config.toml` followed by `args`.
    pub fn run(&self, args: &[&str]) -> Output {
        run_with(&self.path("config.toml"), args)
    }
}

pub fn run_with(config: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}
