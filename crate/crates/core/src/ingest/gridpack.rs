//! Grid packs: a JSON sidecar describing a time-stacked lattice field
//! series plus a little-endian `f32` payload.
//!
//! Sidecar and payload share a stem: `era5_2011.json` + `era5_2011.gpk`.
//! The payload is the magic `GPK1` followed by `nt * nchannels * nlat * nlon`
//! values in `[t][channel][lat][lon]` row-major order.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::write_atomic;

pub const GRID_PACK_MAGIC: &[u8; 4] = b"GPK1";

/// Pressure levels of the upper-air channels, in canonical order.
pub const PRESSURE_LEVELS_HPA: [u32; 3] = [1000, 700, 200];

/// Upper-air variables sampled at every pressure level, in canonical order.
pub const LEVEL_VARIABLES: [&str; 6] = [
    "temperature",
    "relative_humidity",
    "u_wind",
    "v_wind",
    "wind_speed",
    "vertical_velocity",
];

pub const PRECIP_CHANNEL: &str = "precipitation";
pub const N_CHANNELS: usize = 1 + PRESSURE_LEVELS_HPA.len() * LEVEL_VARIABLES.len();

/// `(name, level)` of every channel in canonical order; index 0 is precipitation.
pub fn canonical_channels() -> Vec<(&'static str, Option<u32>)> {
    let mut out = vec![(PRECIP_CHANNEL, None)];
    for level in PRESSURE_LEVELS_HPA {
        for var in LEVEL_VARIABLES {
            out.push((var, Some(level)));
        }
    }
    out
}

/// Flat labels such as `temperature@700hPa`, used in tensor sidecars.
pub fn canonical_channel_labels() -> Vec<String> {
    canonical_channels()
        .into_iter()
        .map(|(name, level)| match level {
            Some(l) => format!("{name}@{l}hPa"),
            None => name.to_string(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub name: String,
    pub level_hpa: Option<u32>,
    pub unit: String,
}

/// Regular lat/lon lattice. Node `(i, j)` sits at `(lat0 + i*dlat, lon0 + j*dlon)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub lat0: f64,
    pub lon0: f64,
    pub dlat: f64,
    pub dlon: f64,
    pub nlat: usize,
    pub nlon: usize,
}

impl Lattice {
    /// The lattice whose nodes are exactly the cell corners of `grid`, north to south.
    pub fn cornering(grid: &crate::grid::GridSpec) -> Self {
        Self {
            lat0: grid.lat_north,
            lon0: grid.lon_west,
            dlat: -grid.cell_height(),
            dlon: grid.cell_width(),
            nlat: grid.n_rows + 1,
            nlon: grid.n_cols + 1,
        }
    }

    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (self.lat0 + i as f64 * self.dlat, self.lon0 + j as f64 * self.dlon)
    }

    /// Nearest node to `(lat, lon)` if it lies within `tolerance` degrees on both axes.
    pub fn snap(&self, lat: f64, lon: f64, tolerance: f64) -> Option<(usize, usize)> {
        let fi = ((lat - self.lat0) / self.dlat).round();
        let fj = ((lon - self.lon0) / self.dlon).round();
        if !(fi >= 0.0 && fj >= 0.0) {
            return None;
        }
        let (i, j) = (fi as usize, fj as usize);
        if i >= self.nlat || j >= self.nlon {
            return None;
        }
        let (nlat, nlon) = self.node(i, j);
        ((nlat - lat).abs() <= tolerance && (nlon - lon).abs() <= tolerance).then_some((i, j))
    }
}

/// On-disk sidecar schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPackSidecar {
    pub lat0: f64,
    pub lon0: f64,
    pub dlat: f64,
    pub dlon: f64,
    pub nlat: usize,
    pub nlon: usize,
    pub t0_iso8601_utc: String,
    pub dt_hours: u32,
    pub nt: usize,
    pub channels: Vec<ChannelInfo>,
}

/// An hourly, dense stack of background fields in canonical channel order.
///
/// Precipitation is held in mm/h.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSource {
    lattice: Lattice,
    t0: DateTime<Utc>,
    channels: Vec<ChannelInfo>,
    /// `[time][channel][lat][lon]`
    values: Array4<f32>,
}

impl GridSource {
    /// Wraps values that are already in canonical channel order with precipitation in mm/h.
    pub fn new(lattice: Lattice, t0: DateTime<Utc>, values: Array4<f32>) -> Result<Self> {
        let (_, nc, nlat, nlon) = values.dim();
        if nc != N_CHANNELS || nlat != lattice.nlat || nlon != lattice.nlon {
            return Err(Error::Contract(format!(
                "grid source values have shape {:?}, lattice is {}x{} with {N_CHANNELS} channels",
                values.dim(),
                lattice.nlat,
                lattice.nlon
            )));
        }
        if lattice.dlat == 0.0 || lattice.dlon == 0.0 || !lattice.dlat.is_finite() || !lattice.dlon.is_finite() {
            return Err(Error::Contract("lattice spacing must be finite and non-zero".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("grid source contains non-finite values".into()));
        }
        let channels = canonical_channels()
            .into_iter()
            .map(|(name, level)| ChannelInfo {
                name: name.to_string(),
                level_hpa: level,
                unit: if level.is_none() { "mm/h".into() } else { String::new() },
            })
            .collect();
        Ok(Self {
            lattice,
            t0,
            channels,
            values,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn channels(&self) -> &[ChannelInfo] {
        &self.channels
    }

    pub fn values(&self) -> &Array4<f32> {
        &self.values
    }

    pub fn nt(&self) -> usize {
        self.values.dim().0
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.t0
    }

    /// Instant of the last step.
    pub fn end(&self) -> DateTime<Utc> {
        self.t0 + Duration::hours(self.nt().saturating_sub(1) as i64)
    }

    pub fn timestamp(&self, step: usize) -> DateTime<Utc> {
        self.t0 + Duration::hours(step as i64)
    }

    pub fn timestamps(&self) -> impl Iterator<Item = DateTime<Utc>> + '_ {
        (0..self.nt()).map(|s| self.timestamp(s))
    }

    /// Step index of `t`, if `t` is one of this source's hourly steps.
    pub fn step_of(&self, t: DateTime<Utc>) -> Option<usize> {
        let delta = t - self.t0;
        if delta < Duration::zero() || delta.num_seconds() % 3600 != 0 {
            return None;
        }
        let step = (delta.num_seconds() / 3600) as usize;
        (step < self.nt()).then_some(step)
    }

    pub fn value(&self, step: usize, channel: usize, i: usize, j: usize) -> f32 {
        self.values[[step, channel, i, j]]
    }
}

/// Sidecar and payload paths for a pack given either file (or a bare stem).
pub fn pack_paths(path: &Path) -> (PathBuf, PathBuf) {
    match path.extension().and_then(|e| e.to_str()) {
        Some("gpk") => (path.with_extension("json"), path.to_path_buf()),
        Some("json") => (path.to_path_buf(), path.with_extension("gpk")),
        _ => (path.with_extension("json"), path.with_extension("gpk")),
    }
}

fn precip_scale(unit: &str) -> Option<f32> {
    match unit.trim() {
        "mm/h" | "mm" | "kg m-2 h-1" => Some(1.0),
        "m/h" | "m" => Some(1000.0),
        _ => None,
    }
}

pub fn load_grid_pack(path: &Path) -> Result<GridSource> {
    let (sidecar_path, payload_path) = pack_paths(path);
    let text = std::fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let sidecar: GridPackSidecar =
        serde_json::from_str(&text).map_err(|e| Error::format(&sidecar_path, format!("bad sidecar: {e}")))?;
    let payload = std::fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    decode_grid_pack(&sidecar, &payload, &sidecar_path, &payload_path)
}

/// Builds a [`GridSource`] from a parsed sidecar and raw payload bytes.
pub fn decode_grid_pack(
    sidecar: &GridPackSidecar,
    payload: &[u8],
    sidecar_path: &Path,
    payload_path: &Path,
) -> Result<GridSource> {
    let bad_meta = |m: String| Error::format(sidecar_path, m);
    if sidecar.nlat == 0 || sidecar.nlon == 0 {
        return Err(bad_meta("nlat and nlon must be positive".into()));
    }
    if sidecar.dt_hours != 1 {
        return Err(bad_meta(format!("dt_hours must be 1, got {}", sidecar.dt_hours)));
    }
    if !(sidecar.dlat.is_finite() && sidecar.dlon.is_finite()) || sidecar.dlat == 0.0 || sidecar.dlon == 0.0 {
        return Err(bad_meta("dlat and dlon must be finite and non-zero".into()));
    }
    let t0 = DateTime::parse_from_rfc3339(&sidecar.t0_iso8601_utc)
        .map_err(|e| bad_meta(format!("bad t0_iso8601_utc '{}': {e}", sidecar.t0_iso8601_utc)))?
        .with_timezone(&Utc);

    // Map each canonical channel to its position in the pack.
    let canonical = canonical_channels();
    if sidecar.channels.len() != canonical.len() {
        return Err(bad_meta(format!(
            "expected {} channels, found {}",
            canonical.len(),
            sidecar.channels.len()
        )));
    }
    let mut source_index = Vec::with_capacity(canonical.len());
    for (name, level) in &canonical {
        let pos = sidecar
            .channels
            .iter()
            .position(|c| c.name == *name && c.level_hpa == *level)
            .ok_or_else(|| bad_meta(format!("missing channel {name} at level {level:?}")))?;
        source_index.push(pos);
    }
    let scale = precip_scale(&sidecar.channels[source_index[0]].unit).ok_or_else(|| {
        bad_meta(format!(
            "unsupported precipitation unit '{}'",
            sidecar.channels[source_index[0]].unit
        ))
    })?;

    let (nt, nc, nlat, nlon) = (sidecar.nt, canonical.len(), sidecar.nlat, sidecar.nlon);
    let n_values = nt * nc * nlat * nlon;
    let bad_payload = |m: String| Error::format(payload_path, m);
    if payload.len() < 4 || &payload[..4] != GRID_PACK_MAGIC {
        return Err(bad_payload("missing GPK1 magic".into()));
    }
    let body = &payload[4..];
    if body.len() != n_values * 4 {
        return Err(bad_payload(format!(
            "payload holds {} bytes, sidecar implies {} values ({} bytes)",
            body.len(),
            n_values,
            n_values * 4
        )));
    }

    let raw: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(pos) = raw.iter().position(|v| !v.is_finite()) {
        return Err(bad_payload(format!("non-finite value at index {pos}")));
    }
    let raw = Array4::from_shape_vec((nt, nc, nlat, nlon), raw).expect("length checked above");

    let mut values = Array4::<f32>::zeros((nt, nc, nlat, nlon));
    for (dst, &src) in source_index.iter().enumerate() {
        let mut out = values.slice_mut(ndarray::s![.., dst, .., ..]);
        out.assign(&raw.slice(ndarray::s![.., src, .., ..]));
        if dst == 0 && scale != 1.0 {
            out.mapv_inplace(|v| v * scale);
        }
    }

    let channels = source_index
        .iter()
        .enumerate()
        .map(|(dst, &src)| {
            let mut c = sidecar.channels[src].clone();
            if dst == 0 {
                c.unit = "mm/h".into();
            }
            c
        })
        .collect();

    Ok(GridSource {
        lattice: Lattice {
            lat0: sidecar.lat0,
            lon0: sidecar.lon0,
            dlat: sidecar.dlat,
            dlon: sidecar.dlon,
            nlat,
            nlon,
        },
        t0,
        channels,
        values,
    })
}

/// Writes `source` as a sidecar + payload pair next to `path`.
pub fn write_grid_pack(path: &Path, source: &GridSource) -> Result<()> {
    let (sidecar_path, payload_path) = pack_paths(path);
    let l = source.lattice;
    let sidecar = GridPackSidecar {
        lat0: l.lat0,
        lon0: l.lon0,
        dlat: l.dlat,
        dlon: l.dlon,
        nlat: l.nlat,
        nlon: l.nlon,
        t0_iso8601_utc: source.t0.to_rfc3339_opts(SecondsFormat::Secs, true),
        dt_hours: 1,
        nt: source.nt(),
        channels: source.channels.clone(),
    };
    let mut payload = Vec::with_capacity(4 + source.values.len() * 4);
    payload.extend_from_slice(GRID_PACK_MAGIC);
    for v in source.values.iter() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    write_atomic(&payload_path, &payload)?;
    write_atomic(&sidecar_path, &json)?;
    Ok(())
}
