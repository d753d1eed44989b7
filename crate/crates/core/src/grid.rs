//! Regular spatial grids and visit-frequency heatmaps.
//!
//! Coordinates are projected with a local equirectangular approximation:
//! one degree of latitude is 111320 m, one degree of longitude is
//! 111320 · cos(mid-latitude) m. The error is negligible at city scale and
//! keeps cells axis-aligned.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{GeoPoint, Trajectory};

/// Meters per degree of latitude in the local equirectangular projection.
pub const METERS_PER_DEGREE: f64 = 111_320.0;

/// A regular grid over a geographic bounding box at a cell size in meters.
///
/// Row 0 is the southernmost row; column 0 the westernmost column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
    pub cell_size_m: f64,
    rows: usize,
    cols: usize,
}

impl GridSpec {
    pub fn new(
        min_lat: f64,
        max_lat: f64,
        min_lon: f64,
        max_lon: f64,
        cell_size_m: f64,
    ) -> Result<Self> {
        if !(min_lat < max_lat) || !(min_lon < max_lon) || !(cell_size_m > 0.0) {
            return Err(Error::InvalidGridBounds);
        }
        let mid_lat = 0.5 * (min_lat + max_lat);
        let ns_m = (max_lat - min_lat) * METERS_PER_DEGREE;
        let ew_m = (max_lon - min_lon) * METERS_PER_DEGREE * mid_lat.to_radians().cos();
        let rows = (ns_m / cell_size_m).ceil() as usize;
        let cols = (ew_m / cell_size_m).ceil() as usize;
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidGridBounds);
        }
        Ok(GridSpec {
            min_lat,
            max_lat,
            min_lon,
            max_lon,
            cell_size_m,
            rows,
            cols,
        })
    }

    /// Bounding box of a whole cohort, padded by one cell on every side so
    /// no point sits on the box edge. A shared box makes all per-user
    /// heatmaps comparable.
    pub fn cohort<'a, I>(trajectories: I, cell_size_m: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Trajectory>,
    {
        if !(cell_size_m > 0.0) {
            return Err(Error::InvalidGridBounds);
        }
        let mut min_lat = f64::INFINITY;
        let mut max_lat = f64::NEG_INFINITY;
        let mut min_lon = f64::INFINITY;
        let mut max_lon = f64::NEG_INFINITY;
        for t in trajectories {
            for p in t.points() {
                min_lat = min_lat.min(p.lat);
                max_lat = max_lat.max(p.lat);
                min_lon = min_lon.min(p.lon);
                max_lon = max_lon.max(p.lon);
            }
        }
        if !min_lat.is_finite() {
            return Err(Error::InvalidGridBounds);
        }
        let pad_lat = cell_size_m / METERS_PER_DEGREE;
        let mid_lat = 0.5 * (min_lat + max_lat);
        let pad_lon = cell_size_m / (METERS_PER_DEGREE * mid_lat.to_radians().cos().max(1e-9));
        GridSpec::new(
            min_lat - pad_lat,
            max_lat + pad_lat,
            min_lon - pad_lon,
            max_lon + pad_lon,
            cell_size_m,
        )
    }

    /// A synthetic spec with exactly `rows` x `cols` cells, anchored near
    /// the equator. Used where a grid is needed for data that never came
    /// from coordinates (tests, bindings). Extents sit half a cell short of
    /// the full grid so the derived cell counts cannot round upward.
    pub fn from_cells(rows: usize, cols: usize, cell_size_m: f64) -> Result<Self> {
        if rows == 0 || cols == 0 || !(cell_size_m > 0.0) {
            return Err(Error::InvalidGridBounds);
        }
        let lat_extent = (rows as f64 - 0.5) * cell_size_m / METERS_PER_DEGREE;
        let mid_lat = 0.5 * lat_extent;
        let lon_extent =
            (cols as f64 - 0.5) * cell_size_m / (METERS_PER_DEGREE * mid_lat.to_radians().cos());
        let spec = GridSpec::new(0.0, lat_extent, 0.0, lon_extent, cell_size_m)?;
        debug_assert_eq!(spec.rows(), rows);
        debug_assert_eq!(spec.cols(), cols);
        Ok(spec)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn mid_lat(&self) -> f64 {
        0.5 * (self.min_lat + self.max_lat)
    }

    /// Meters north and east of the southwest corner.
    fn meters_from_sw(&self, p: &GeoPoint) -> (f64, f64) {
        let north = (p.lat - self.min_lat) * METERS_PER_DEGREE;
        let east = (p.lon - self.min_lon) * METERS_PER_DEGREE * self.mid_lat().to_radians().cos();
        (north, east)
    }
}

/// Cell index of a point, or `None` when it falls outside the bounding box.
/// Points exactly on the north/east edge clamp into the last row/column.
pub fn project_to_cell(p: &GeoPoint, spec: &GridSpec) -> Option<(usize, usize)> {
    if p.lat < spec.min_lat || p.lat > spec.max_lat || p.lon < spec.min_lon || p.lon > spec.max_lon
    {
        return None;
    }
    let (north, east) = spec.meters_from_sw(p);
    let row = ((north / spec.cell_size_m).floor() as usize).min(spec.rows() - 1);
    let col = ((east / spec.cell_size_m).floor() as usize).min(spec.cols() - 1);
    Some((row, col))
}

/// Gridded visit frequencies of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    spec: GridSpec,
    counts: Vec<u64>,
    excluded: u64,
}

impl Heatmap {
    pub fn from_counts(spec: GridSpec, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != spec.cells() {
            return Err(Error::Internal(format!(
                "count buffer {} does not match grid {}x{}",
                counts.len(),
                spec.rows(),
                spec.cols()
            )));
        }
        Ok(Heatmap {
            spec,
            counts,
            excluded: 0,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.spec.cols() + col]
    }

    /// Number of points that fell outside the bounding box while building.
    pub fn excluded(&self) -> u64 {
        self.excluded
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn nonzero_cells(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Count each trajectory point into its grid cell. Points outside the box
/// are excluded and tallied in the heatmap's diagnostic.
pub fn build_heatmap(traj: &Trajectory, spec: &GridSpec) -> Heatmap {
    let mut counts = vec![0u64; spec.cells()];
    let mut excluded = 0u64;
    for p in traj.points() {
        match project_to_cell(p, spec) {
            Some((r, c)) => counts[r * spec.cols() + c] += 1,
            None => excluded += 1,
        }
    }
    Heatmap {
        spec: spec.clone(),
        counts,
        excluded,
    }
}

/// Element-wise sum of heatmaps sharing one spec: the cohort image that
/// combines all user trajectories.
pub fn integrate_heatmaps(maps: &[Heatmap]) -> Result<Heatmap> {
    let first = maps.first().ok_or(Error::NoHeatmaps)?;
    let mut counts = vec![0u64; first.spec.cells()];
    let mut excluded = 0u64;
    for m in maps {
        if m.spec != first.spec {
            return Err(Error::SpecMismatch);
        }
        for (acc, c) in counts.iter_mut().zip(&m.counts) {
            *acc += c;
        }
        excluded += m.excluded;
    }
    Ok(Heatmap {
        spec: first.spec.clone(),
        counts,
        excluded,
    })
}

/// Write the count matrix as CSV, northernmost row first.
pub fn write_csv_matrix<W: Write>(h: &Heatmap, mut w: W) -> std::io::Result<()> {
    let cols = h.spec.cols();
    for r in (0..h.spec.rows()).rev() {
        let row: Vec<String> = (0..cols).map(|c| h.count(r, c).to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Write an 8-bit binary PGM, north up, intensity scaled to the brightest
/// cell: round(255 * count / max).
pub fn write_pgm<W: Write>(h: &Heatmap, mut w: W) -> std::io::Result<()> {
    let max = h.max_count();
    writeln!(w, "P5")?;
    writeln!(w, "{} {}", h.spec.cols(), h.spec.rows())?;
    writeln!(w, "255")?;
    let mut buf = Vec::with_capacity(h.spec.cells());
    for r in (0..h.spec.rows()).rev() {
        for c in 0..h.spec.cols() {
            let v = if max == 0 {
                0.0
            } else {
                255.0 * h.count(r, c) as f64 / max as f64
            };
            buf.push(v.round() as u8);
        }
    }
    w.write_all(&buf)
}
