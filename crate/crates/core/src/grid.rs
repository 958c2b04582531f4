//! Region-of-interest geometry.
//!
//! The region is a lat/lon rectangle split uniformly into `n_rows × n_cols`
//! cells. Row 0 is the northernmost band and column 0 the westernmost. Cell
//! bounds are half-open: a cell owns its north and west edges, so a point on a
//! shared edge belongs to the cell to its south or east.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangular region and its cell subdivision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat_north: f64,
    pub lat_south: f64,
    pub lon_east: f64,
    pub lon_west: f64,
    pub n_rows: usize,
    pub n_cols: usize,
}

/// Cell coordinates, `row` counted from the north and `col` from the west.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// A lattice node of the background grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridNode {
    pub lat: f64,
    pub lon: f64,
}

impl GridSpec {
    /// Bounds of the Rio de Janeiro region of interest, 9 × 11 cells.
    pub const RIO: GridSpec = GridSpec {
        lat_north: -21.6998,
        lat_south: -23.8019,
        lon_east: -42.3568,
        lon_west: -45.0529,
        n_rows: 9,
        n_cols: 11,
    };

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lat_north, self.lat_south, self.lon_east, self.lon_west]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("grid bounds must be finite".into()));
        }
        if self.lat_north <= self.lat_south {
            return Err(Error::Config(format!(
                "grid: lat_north ({}) must exceed lat_south ({})",
                self.lat_north, self.lat_south
            )));
        }
        if self.lon_east <= self.lon_west {
            return Err(Error::Config(format!(
                "grid: lon_east ({}) must exceed lon_west ({})",
                self.lon_east, self.lon_west
            )));
        }
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::Config("grid: n_rows and n_cols must be >= 1".into()));
        }
        Ok(())
    }

    pub fn cell_height(&self) -> f64 {
        (self.lat_north - self.lat_south) / self.n_rows as f64
    }

    pub fn cell_width(&self) -> f64 {
        (self.lon_east - self.lon_west) / self.n_cols as f64
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.n_rows).flat_map(move |row| (0..self.n_cols).map(move |col| CellIndex { row, col }))
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        cell.row < self.n_rows && cell.col < self.n_cols
    }

    /// Latitude of the `i`-th horizontal lattice line, `0 ..= n_rows`.
    fn row_edge(&self, i: usize) -> f64 {
        if i == self.n_rows {
            self.lat_south
        } else {
            self.lat_north - i as f64 * self.cell_height()
        }
    }

    /// Longitude of the `j`-th vertical lattice line, `0 ..= n_cols`.
    fn col_edge(&self, j: usize) -> f64 {
        if j == self.n_cols {
            self.lon_east
        } else {
            self.lon_west + j as f64 * self.cell_width()
        }
    }

    /// The cell containing `(lat, lon)`, or `None` outside the region.
    pub fn cell_of(&self, lat: f64, lon: f64) -> Option<CellIndex> {
        if !(lat.is_finite() && lon.is_finite()) {
            return None;
        }
        if lat > self.lat_north || lat <= self.lat_south || lon < self.lon_west || lon >= self.lon_east {
            return None;
        }
        let mut row = (((self.lat_north - lat) / self.cell_height()).floor() as usize).min(self.n_rows - 1);
        let mut col = (((lon - self.lon_west) / self.cell_width()).floor() as usize).min(self.n_cols - 1);
        // the division can land one cell off when the point sits on an edge
        if lat > self.row_edge(row) {
            row -= 1;
        } else if lat <= self.row_edge(row + 1) {
            row += 1;
        }
        if lon < self.col_edge(col) {
            col -= 1;
        } else if lon >= self.col_edge(col + 1) {
            col += 1;
        }
        Some(CellIndex { row, col })
    }

    /// Geographic center of a cell.
    pub fn cell_center(&self, cell: CellIndex) -> GridNode {
        GridNode {
            lat: self.lat_north - (cell.row as f64 + 0.5) * self.cell_height(),
            lon: self.lon_west + (cell.col as f64 + 0.5) * self.cell_width(),
        }
    }

    /// Corner nodes of `cell` in NW, NE, SW, SE order.
    pub fn cell_corners(&self, cell: CellIndex) -> Result<[GridNode; 4]> {
        if !self.contains(cell) {
            return Err(Error::Range(format!(
                "cell ({}, {}) outside {}x{} grid",
                cell.row, cell.col, self.n_rows, self.n_cols
            )));
        }
        let north = self.row_edge(cell.row);
        let south = self.row_edge(cell.row + 1);
        let west = self.col_edge(cell.col);
        let east = self.col_edge(cell.col + 1);
        Ok([
            GridNode { lat: north, lon: west },
            GridNode { lat: north, lon: east },
            GridNode { lat: south, lon: west },
            GridNode { lat: south, lon: east },
        ])
    }
}
