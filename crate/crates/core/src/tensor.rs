//! Binary tensor files with JSON sidecars.
//!
//! Layout of a `.stft` file (all integers little-endian):
//!
//! | bytes        | content                          |
//! |--------------|----------------------------------|
//! | 4            | magic `STFT`                     |
//! | 4            | format version (`u32`, 1)        |
//! | 4            | number of dimensions (`u32`)     |
//! | 8 × ndims    | dimensions (`u64`)               |
//! | 4 × product  | `f32` payload, row-major         |
//!
//! The sidecar (`.json`, same stem) records what the axes mean.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use ndarray::{ArrayD, Axis, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::util::write_atomic;
use crate::windowing::Example;

pub const TENSOR_MAGIC: &[u8; 4] = b"STFT";
pub const TENSOR_FORMAT_VERSION: u32 = 1;
const MAX_DIMS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    /// `(n, k, rows, cols, channels)` model inputs.
    Features,
    /// `(n, k', rows, cols, 1)` observed precipitation.
    Target,
    /// `(n, k', rows, cols, 1)` forecast precipitation.
    Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSidecar {
    pub format_version: u32,
    pub role: TensorRole,
    pub dims: Vec<usize>,
    pub axes: Vec<String>,
    pub channels: Vec<String>,
    pub grid: GridSpec,
    /// `t0` of the first example.
    pub time_origin: Option<String>,
    pub time_step_hours: u32,
    /// Last-input-step instant of every example, RFC 3339.
    pub example_t0: Vec<String>,
    pub dataset_version: Option<String>,
    /// How node-valued background channels were mapped to cells.
    pub feature_sampling: Option<String>,
}

impl TensorSidecar {
    pub fn new(role: TensorRole, dims: &[usize], channels: Vec<String>, grid: GridSpec) -> Self {
        let lead_axis = if role == TensorRole::Features {
            "lookback"
        } else {
            "lead"
        };
        Self {
            format_version: TENSOR_FORMAT_VERSION,
            role,
            dims: dims.to_vec(),
            axes: ["example", lead_axis, "row", "col", "channel"]
                .map(String::from)
                .to_vec(),
            channels,
            grid,
            time_origin: None,
            time_step_hours: 1,
            example_t0: Vec::new(),
            dataset_version: None,
            feature_sampling: None,
        }
    }

    pub fn with_times(mut self, t0s: &[DateTime<Utc>]) -> Self {
        self.example_t0 = t0s.iter().map(|t| format_instant(*t)).collect();
        self.time_origin = self.example_t0.first().cloned();
        self
    }

    pub fn parsed_t0(&self) -> Result<Vec<DateTime<Utc>>> {
        self.example_t0
            .iter()
            .map(|s| {
                DateTime::parse_from_rfc3339(s)
                    .map(|t| t.with_timezone(&Utc))
                    .map_err(|e| Error::Contract(format!("bad example_t0 '{s}': {e}")))
            })
            .collect()
    }
}

pub fn format_instant(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode_tensor(array: &ArrayD<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * array.ndim() + 4 * array.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(array.ndim() as u32).to_le_bytes());
    for &d in array.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in array.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    Some(u32::from_le_bytes(bytes.get(at..at + 4)?.try_into().ok()?))
}

fn read_u64(bytes: &[u8], at: usize) -> Option<u64> {
    Some(u64::from_le_bytes(bytes.get(at..at + 8)?.try_into().ok()?))
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<ArrayD<f32>> {
    let bad = |m: &str| Error::format(path, m.to_string());
    if bytes.get(..4) != Some(TENSOR_MAGIC.as_slice()) {
        return Err(bad("missing STFT magic"));
    }
    let version = read_u32(bytes, 4).ok_or_else(|| bad("truncated header"))?;
    if version != TENSOR_FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported tensor format version {version}"),
        ));
    }
    let ndims = read_u32(bytes, 8).ok_or_else(|| bad("truncated header"))?;
    if ndims == 0 || ndims > MAX_DIMS {
        return Err(Error::format(path, format!("implausible dimension count {ndims}")));
    }
    let mut dims = Vec::with_capacity(ndims as usize);
    for i in 0..ndims as usize {
        let d = read_u64(bytes, 12 + 8 * i).ok_or_else(|| bad("truncated header"))?;
        dims.push(usize::try_from(d).map_err(|_| bad("dimension overflows usize"))?);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("dimension product overflows"))?;
    let header = 12 + 8 * ndims as usize;
    let body = &bytes[header..];
    if Some(body.len()) != count.checked_mul(4) {
        return Err(Error::format(
            path,
            format!("payload holds {} bytes, dims {:?} need {}", body.len(), dims, count * 4),
        ));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(ArrayD::from_shape_vec(IxDyn(&dims), data).expect("length checked"))
}

/// Writes the binary tensor and its sidecar, each atomically.
pub fn write_tensor(path: &Path, array: &ArrayD<f32>, sidecar: &TensorSidecar) -> Result<()> {
    if sidecar.dims != array.shape() {
        return Err(Error::Contract(format!(
            "sidecar dims {:?} disagree with tensor shape {:?}",
            sidecar.dims,
            array.shape()
        )));
    }
    write_atomic(path, &encode_tensor(array))?;
    let json = serde_json::to_vec_pretty(sidecar).expect("sidecar serializes");
    write_atomic(&sidecar_path(path), &json)
}

/// Reads a tensor and its sidecar, checking that they agree.
pub fn read_tensor(path: &Path) -> Result<(ArrayD<f32>, TensorSidecar)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let array = decode_tensor(&bytes, path)?;
    let side_path = sidecar_path(path);
    let text = std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let sidecar: TensorSidecar =
        serde_json::from_str(&text).map_err(|e| Error::format(&side_path, format!("bad sidecar: {e}")))?;
    if sidecar.dims != array.shape() {
        return Err(Error::format(
            &side_path,
            format!(
                "sidecar dims {:?} disagree with payload dims {:?}",
                sidecar.dims,
                array.shape()
            ),
        ));
    }
    Ok((array, sidecar))
}

/// Streams a tensor of known shape to disk without holding it in memory.
///
/// Values go to a temp file that is renamed into place by [`TensorWriter::finish`]
/// once exactly `product(dims)` values have been written.
pub struct TensorWriter {
    path: PathBuf,
    tmp: PathBuf,
    out: BufWriter<File>,
    dims: Vec<usize>,
    expected: usize,
    written: usize,
}

impl TensorWriter {
    pub fn create(path: &Path, dims: &[usize]) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut out = BufWriter::new(file);
        let mut header = Vec::with_capacity(12 + 8 * dims.len());
        header.extend_from_slice(TENSOR_MAGIC);
        header.extend_from_slice(&TENSOR_FORMAT_VERSION.to_le_bytes());
        header.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            header.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.write_all(&header).map_err(|e| Error::io(&tmp, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            tmp,
            out,
            dims: dims.to_vec(),
            expected: dims.iter().product(),
            written: 0,
        })
    }

    pub fn write_values<'a>(&mut self, values: impl IntoIterator<Item = &'a f32>) -> Result<()> {
        for v in values {
            self.out
                .write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(&self.tmp, e))?;
            self.written += 1;
        }
        if self.written > self.expected {
            return Err(Error::Contract(format!(
                "{}: wrote {} values into a tensor of {}",
                self.path.display(),
                self.written,
                self.expected
            )));
        }
        Ok(())
    }

    /// Checks the value count, moves the payload into place and writes the sidecar.
    pub fn finish(mut self, sidecar: &TensorSidecar) -> Result<()> {
        if self.written != self.expected {
            return Err(Error::Contract(format!(
                "{}: wrote {} values, dims {:?} need {}",
                self.path.display(),
                self.written,
                self.dims,
                self.expected
            )));
        }
        if sidecar.dims != self.dims {
            return Err(Error::Contract(format!(
                "sidecar dims {:?} disagree with tensor dims {:?}",
                sidecar.dims, self.dims
            )));
        }
        self.out.flush().map_err(|e| Error::io(&self.tmp, e))?;
        let file = self
            .out
            .into_inner()
            .map_err(|e| Error::io(&self.tmp, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&self.tmp, e))?;
        std::fs::rename(&self.tmp, &self.path).map_err(|e| Error::io(&self.path, e))?;
        let json = serde_json::to_vec_pretty(sidecar).expect("sidecar serializes");
        write_atomic(&sidecar_path(&self.path), &json)
    }
}

/// Stacks examples into `(n, k, rows, cols, c)` inputs and `(n, k', rows, cols, 1)` targets.
pub fn stack_examples(examples: &[Example]) -> Result<(ArrayD<f32>, ArrayD<f32>)> {
    let first = examples
        .first()
        .ok_or_else(|| Error::Contract("cannot write an empty example set".into()))?;
    if let Some((i, e)) = examples
        .iter()
        .enumerate()
        .find(|(_, e)| e.x.dim() != first.x.dim() || e.y.dim() != first.y.dim())
    {
        return Err(Error::Contract(format!(
            "example {i} has shapes {:?}/{:?}, expected {:?}/{:?}",
            e.x.dim(),
            e.y.dim(),
            first.x.dim(),
            first.y.dim()
        )));
    }
    let xs: Vec<_> = examples.iter().map(|e| e.x.view()).collect();
    let ys: Vec<_> = examples.iter().map(|e| e.y.view()).collect();
    let x = ndarray::stack(Axis(0), &xs).expect("shapes checked").into_dyn();
    let y = ndarray::stack(Axis(0), &ys).expect("shapes checked").into_dyn();
    Ok((x, y))
}

/// Metadata shared by the features/target pair.
#[derive(Debug, Clone)]
pub struct ExampleMeta {
    pub grid: GridSpec,
    pub channels: Vec<String>,
    pub dataset_version: Option<String>,
    pub feature_sampling: Option<String>,
}

impl ExampleMeta {
    /// Sidecars for a features/target pair with the given dims and example instants.
    pub fn sidecars(
        &self,
        x_dims: &[usize],
        y_dims: &[usize],
        t0s: &[DateTime<Utc>],
    ) -> (TensorSidecar, TensorSidecar) {
        let mut x = TensorSidecar::new(TensorRole::Features, x_dims, self.channels.clone(), self.grid).with_times(t0s);
        x.dataset_version = self.dataset_version.clone();
        x.feature_sampling = self.feature_sampling.clone();
        let mut y = TensorSidecar::new(
            TensorRole::Target,
            y_dims,
            vec![crate::ingest::PRECIP_CHANNEL.to_string()],
            self.grid,
        )
        .with_times(t0s);
        y.dataset_version = self.dataset_version.clone();
        (x, y)
    }
}

/// Writes the features/target pair for `examples`.
pub fn write_examples(x_path: &Path, y_path: &Path, examples: &[Example], meta: &ExampleMeta) -> Result<()> {
    let (x, y) = stack_examples(examples)?;
    let t0s: Vec<_> = examples.iter().map(|e| e.t0).collect();
    let (x_side, y_side) = meta.sidecars(x.shape(), y.shape(), &t0s);
    write_tensor(x_path, &x, &x_side)?;
    write_tensor(y_path, &y, &y_side)
}

/// Reads a features/target pair back into examples.
pub fn read_examples(x_path: &Path, y_path: &Path) -> Result<Vec<Example>> {
    let (x, x_side) = read_tensor(x_path)?;
    let (y, y_side) = read_tensor(y_path)?;
    if x.ndim() != 5 || y.ndim() != 5 {
        return Err(Error::Contract("example tensors must be 5-dimensional".into()));
    }
    let n = x.shape()[0];
    if y.shape()[0] != n || x.shape()[2..4] != y.shape()[2..4] {
        return Err(Error::Contract(format!(
            "features {:?} and targets {:?} do not pair up",
            x.shape(),
            y.shape()
        )));
    }
    let t0s = x_side.parsed_t0()?;
    if t0s.len() != n || y_side.example_t0 != x_side.example_t0 {
        return Err(Error::Contract("example_t0 lists missing or inconsistent".into()));
    }
    let x = x.into_dimensionality::<ndarray::Ix5>().expect("ndim checked");
    let y = y.into_dimensionality::<ndarray::Ix5>().expect("ndim checked");
    Ok((0..n)
        .map(|i| Example {
            x: x.index_axis(Axis(0), i).to_owned(),
            y: y.index_axis(Axis(0), i).to_owned(),
            t0: t0s[i],
        })
        .collect())
}
