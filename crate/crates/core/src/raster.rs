//! Georeferenced population grids and ESRI ASCII grid I/O.

use std::fmt::Write as _;
use std::io::Read;

use thiserror::Error;

use crate::geometry::{coverage_fraction, point_in_polygon, Point, Polygon, Rect};

/// Tag assigned to inputs that carry no CRS of their own.
pub const DEFAULT_CRS: &str = "EPSG:4326";

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("line {line}: malformed header: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("line {line}: expected {expected} values, found {found}")]
    TokenCountMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: non-numeric token {token:?}")]
    NonNumericToken { line: usize, token: String },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("cell ({row}, {col}) outside {nrows}x{ncols} grid")]
    OutOfBounds { row: usize, col: usize, nrows: usize, ncols: usize },
    #[error("CRS mismatch: grid is {grid:?}, mask is {mask:?}")]
    CrsMismatch { grid: String, mask: String },
    #[error("clip threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Zero-based cell address; row 0 is the northernmost row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// A north-up raster of population counts with square cells.
#[derive(Debug, Clone)]
pub struct Grid {
    ncols: usize,
    nrows: usize,
    xll: f64,
    yll: f64,
    cellsize: f64,
    nodata: f64,
    values: Vec<f64>,
    crs_tag: String,
}

impl Grid {
    /// `values` is row-major with the northernmost row first.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ncols: usize,
        nrows: usize,
        xll: f64,
        yll: f64,
        cellsize: f64,
        nodata: f64,
        values: Vec<f64>,
        crs_tag: impl Into<String>,
    ) -> Result<Self, RasterError> {
        if ncols == 0 || nrows == 0 {
            return Err(RasterError::InvalidGrid("ncols and nrows must be positive".into()));
        }
        if !(cellsize.is_finite() && cellsize > 0.0) {
            return Err(RasterError::InvalidGrid(format!("cellsize must be positive, got {cellsize}")));
        }
        if !xll.is_finite() || !yll.is_finite() {
            return Err(RasterError::InvalidGrid("lower-left corner must be finite".into()));
        }
        if nodata >= 0.0 && nodata.is_finite() {
            return Err(RasterError::InvalidGrid(format!(
                "nodata {nodata} collides with valid population values"
            )));
        }
        if values.len() != ncols * nrows {
            return Err(RasterError::InvalidGrid(format!(
                "{} values for a {ncols}x{nrows} grid",
                values.len()
            )));
        }
        let grid = Self {
            ncols,
            nrows,
            xll,
            yll,
            cellsize,
            nodata,
            values,
            crs_tag: crs_tag.into(),
        };
        if let Some(i) = grid.values.iter().position(|&v| !grid.is_nodata(v) && !(v >= 0.0 && v.is_finite())) {
            return Err(RasterError::InvalidGrid(format!(
                "cell {} holds {}, population values must be finite and non-negative",
                i, grid.values[i]
            )));
        }
        Ok(grid)
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }
    pub fn nrows(&self) -> usize {
        self.nrows
    }
    pub fn xll(&self) -> f64 {
        self.xll
    }
    pub fn yll(&self) -> f64 {
        self.yll
    }
    pub fn cellsize(&self) -> f64 {
        self.cellsize
    }
    pub fn nodata(&self) -> f64 {
        self.nodata
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn crs_tag(&self) -> &str {
        &self.crs_tag
    }

    pub fn with_crs(mut self, tag: impl Into<String>) -> Self {
        self.crs_tag = tag.into();
        self
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        if self.nodata.is_nan() {
            v.is_nan()
        } else {
            v == self.nodata
        }
    }

    pub fn value(&self, c: CellIndex) -> Option<f64> {
        (c.row < self.nrows && c.col < self.ncols).then(|| self.values[c.row * self.ncols + c.col])
    }

    /// The value of `c`, or `None` if out of bounds or nodata.
    pub fn population(&self, c: CellIndex) -> Option<f64> {
        self.value(c).filter(|&v| !self.is_nodata(v))
    }

    pub fn bounds(&self) -> Rect {
        Rect {
            min_x: self.xll,
            min_y: self.yll,
            max_x: self.xll + self.ncols as f64 * self.cellsize,
            max_y: self.yll + self.nrows as f64 * self.cellsize,
        }
    }

    /// Footprint of cell `c`.
    pub fn cell_rect(&self, c: CellIndex) -> Result<Rect, RasterError> {
        if c.row >= self.nrows || c.col >= self.ncols {
            return Err(RasterError::OutOfBounds {
                row: c.row,
                col: c.col,
                nrows: self.nrows,
                ncols: self.ncols,
            });
        }
        Ok(self.cell_rect_unchecked(c.row, c.col))
    }

    pub(crate) fn cell_rect_unchecked(&self, row: usize, col: usize) -> Rect {
        let min_x = self.xll + col as f64 * self.cellsize;
        let max_y = self.yll + (self.nrows - row) as f64 * self.cellsize;
        Rect {
            min_x,
            min_y: self.yll + (self.nrows - row - 1) as f64 * self.cellsize,
            max_x: self.xll + (col + 1) as f64 * self.cellsize,
            max_y,
        }
    }

    pub fn cell_center(&self, c: CellIndex) -> Result<Point, RasterError> {
        self.cell_rect(c).map(|r| r.center())
    }

    /// Inclusive row/column window of cells whose footprint can intersect `bb`.
    /// `None` if `bb` lies outside the grid.
    pub(crate) fn window(&self, bb: &Rect) -> Option<(usize, usize, usize, usize)> {
        let b = self.bounds();
        if bb.max_x < b.min_x || bb.min_x > b.max_x || bb.max_y < b.min_y || bb.min_y > b.max_y {
            return None;
        }
        let clamp_col = |x: f64| (((x - self.xll) / self.cellsize).floor().max(0.0) as usize).min(self.ncols - 1);
        let clamp_row =
            |y: f64| (((b.max_y - y) / self.cellsize).floor().max(0.0) as usize).min(self.nrows - 1);
        Some((clamp_row(bb.max_y), clamp_row(bb.min_y), clamp_col(bb.min_x), clamp_col(bb.max_x)))
    }

    /// Sum of all non-nodata values.
    pub fn total(&self) -> f64 {
        self.values.iter().filter(|&&v| !self.is_nodata(v)).sum()
    }

    pub fn valid_cell_count(&self) -> usize {
        self.values.iter().filter(|&&v| !self.is_nodata(v)).count()
    }
}

const HEADER_KEYS: [&str; 6] = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"];

fn parse_number(token: &str, line: usize) -> Result<f64, RasterError> {
    token.parse::<f64>().map_err(|_| RasterError::NonNumericToken {
        line,
        token: token.to_string(),
    })
}

/// Parses an ESRI ASCII grid. Header keys are case-insensitive and may come in
/// any order; the data block is read as a flat stream of exactly
/// `ncols * nrows` numbers. The result carries [`DEFAULT_CRS`].
pub fn read_ascii_grid<R: Read>(mut source: R) -> Result<Grid, RasterError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    parse_ascii_grid(&text)
}

pub fn parse_ascii_grid(text: &str) -> Result<Grid, RasterError> {
    let mut header: [Option<(f64, &str)>; 6] = [None; 6];
    let mut lines = text.lines().enumerate().peekable();
    let mut last_header_line = 0;

    while let Some(&(idx, line)) = lines.peek() {
        let lineno = idx + 1;
        let mut tokens = line.split_whitespace();
        let Some(first) = tokens.next() else {
            lines.next();
            continue;
        };
        if !first.starts_with(|c: char| c.is_ascii_alphabetic()) || first.parse::<f64>().is_ok() {
            break;
        }
        let key = first.to_ascii_lowercase();
        let Some(slot) = HEADER_KEYS.iter().position(|k| *k == key) else {
            let reason = if key == "xllcenter" || key == "yllcenter" {
                format!("{first} is not supported, use xllcorner/yllcorner")
            } else {
                format!("unknown key {first:?}")
            };
            return Err(RasterError::MalformedHeader { line: lineno, reason });
        };
        if header[slot].is_some() {
            return Err(RasterError::MalformedHeader {
                line: lineno,
                reason: format!("duplicate key {first:?}"),
            });
        }
        let (Some(raw), None) = (tokens.next(), tokens.next()) else {
            return Err(RasterError::MalformedHeader {
                line: lineno,
                reason: format!("{first} needs exactly one value"),
            });
        };
        header[slot] = Some((parse_number(raw, lineno)?, raw));
        last_header_line = lineno;
        lines.next();
    }

    let missing: Vec<&str> = HEADER_KEYS
        .iter()
        .zip(&header)
        .filter(|(_, v)| v.is_none())
        .map(|(k, _)| *k)
        .collect();
    if !missing.is_empty() {
        return Err(RasterError::MalformedHeader {
            line: last_header_line + 1,
            reason: format!("missing {}", missing.join(", ")),
        });
    }
    let field = |i: usize| header[i].unwrap();
    let count = |i: usize| -> Result<usize, RasterError> {
        let (_, raw) = field(i);
        raw.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| RasterError::MalformedHeader {
            line: last_header_line,
            reason: format!("{} must be a positive integer, got {raw:?}", HEADER_KEYS[i]),
        })
    };
    let ncols = count(0)?;
    let nrows = count(1)?;
    let expected = ncols * nrows;

    let mut values = Vec::with_capacity(expected);
    let mut last_line = last_header_line;
    for (idx, line) in lines {
        let lineno = idx + 1;
        for token in line.split_whitespace() {
            if values.len() == expected {
                return Err(RasterError::TokenCountMismatch {
                    line: lineno,
                    expected,
                    found: expected + 1 + count_rest(text, idx, token),
                });
            }
            values.push(parse_number(token, lineno)?);
            last_line = lineno;
        }
    }
    if values.len() != expected {
        return Err(RasterError::TokenCountMismatch {
            line: last_line,
            expected,
            found: values.len(),
        });
    }

    Grid::new(ncols, nrows, field(2).0, field(3).0, field(4).0, field(5).0, values, DEFAULT_CRS)
}

// Number of tokens after `token` on line `idx` and all following lines.
fn count_rest(text: &str, idx: usize, token: &str) -> usize {
    let mut lines = text.lines().skip(idx);
    let first = lines.next().unwrap_or_default();
    let after = first
        .split_whitespace()
        .skip_while(|t| !std::ptr::eq(*t, token))
        .skip(1)
        .count();
    after + lines.map(|l| l.split_whitespace().count()).sum::<usize>()
}

/// Serializes `g` with lowercase keys in canonical order. Values use the
/// shortest decimal that round-trips, so re-parsing is bit-exact.
pub fn write_ascii_grid(g: &Grid) -> String {
    let mut out = String::with_capacity(g.values.len() * 8 + 128);
    let _ = writeln!(out, "ncols {}", g.ncols);
    let _ = writeln!(out, "nrows {}", g.nrows);
    let _ = writeln!(out, "xllcorner {}", g.xll);
    let _ = writeln!(out, "yllcorner {}", g.yll);
    let _ = writeln!(out, "cellsize {}", g.cellsize);
    let _ = writeln!(out, "nodata_value {}", g.nodata);
    for row in g.values.chunks(g.ncols) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

/// Polygon mask for [`clip_by_mask`]. Parts are treated as disjoint.
#[derive(Debug, Clone)]
pub struct Mask {
    pub parts: Vec<Polygon>,
    pub crs_tag: String,
}

impl Mask {
    pub fn new(parts: Vec<Polygon>, crs_tag: impl Into<String>) -> Self {
        Self {
            parts,
            crs_tag: crs_tag.into(),
        }
    }

    pub fn from_polygon(p: Polygon, crs_tag: impl Into<String>) -> Self {
        Self::new(vec![p], crs_tag)
    }

    pub fn contains(&self, pt: Point) -> bool {
        self.parts.iter().any(|p| point_in_polygon(pt, p))
    }
}

/// Cell retention rule for [`clip_by_mask`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipMode {
    /// Keep cells whose center is inside the mask.
    Center,
    /// Keep cells whose coverage fraction is at least the threshold.
    Weighted { threshold: f64 },
}

pub const DEFAULT_CLIP_THRESHOLD: f64 = 0.5;

/// Nulls every cell of `g` that the mask does not retain.
pub fn clip_by_mask(g: &Grid, mask: &Mask, mode: ClipMode) -> Result<Grid, RasterError> {
    if mask.crs_tag != g.crs_tag {
        return Err(RasterError::CrsMismatch {
            grid: g.crs_tag.clone(),
            mask: mask.crs_tag.clone(),
        });
    }
    if let ClipMode::Weighted { threshold } = mode {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(RasterError::InvalidThreshold(threshold));
        }
    }
    let mut values = vec![g.nodata; g.values.len()];
    for row in 0..g.nrows {
        for col in 0..g.ncols {
            let i = row * g.ncols + col;
            let v = g.values[i];
            if g.is_nodata(v) {
                continue;
            }
            let rect = g.cell_rect_unchecked(row, col);
            let keep = match mode {
                ClipMode::Center => mask.contains(rect.center()),
                ClipMode::Weighted { threshold } => coverage_fraction(&mask.parts, &rect) >= threshold,
            };
            if keep {
                values[i] = v;
            }
        }
    }
    Ok(Grid { values, ..g.clone() })
}

/// Cell centers and values of every non-nodata cell, north row first.
pub fn raster_to_points(g: &Grid) -> Vec<(Point, f64)> {
    let mut out = Vec::with_capacity(g.valid_cell_count());
    for row in 0..g.nrows {
        for col in 0..g.ncols {
            let v = g.values[row * g.ncols + col];
            if !g.is_nodata(v) {
                out.push((g.cell_rect_unchecked(row, col).center(), v));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 100\nNODATA_value -9999\n5 7\n";

    fn grid(ncols: usize, nrows: usize, values: Vec<f64>) -> Grid {
        Grid::new(ncols, nrows, 0.0, 0.0, 1.0, -9999.0, values, DEFAULT_CRS).unwrap()
    }

    #[test]
    fn parses_minimal_grid() {
        let g = parse_ascii_grid(SMALL).unwrap();
        assert_eq!((g.ncols(), g.nrows()), (2, 1));
        assert_eq!(g.values(), &[5.0, 7.0]);
        assert_eq!(g.cellsize(), 100.0);
    }

    #[test]
    fn header_is_case_insensitive_and_unordered() {
        let text = "NROWS 1\nCellSize 100\nncols 2\nYLLCORNER 0\nxllcorner 0\nnodata_value -1\n5 7\n";
        let g = parse_ascii_grid(text).unwrap();
        assert_eq!(g.values(), &[5.0, 7.0]);
        assert_eq!(g.nodata(), -1.0);
    }

    #[test]
    fn short_data_is_token_count_mismatch() {
        let text = SMALL.replace("5 7", "5");
        match parse_ascii_grid(&text) {
            Err(RasterError::TokenCountMismatch { line, expected, found }) => {
                assert_eq!((line, expected, found), (7, 2, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn extra_data_is_token_count_mismatch() {
        let text = SMALL.replace("5 7", "5 7\n8 9");
        match parse_ascii_grid(&text) {
            Err(RasterError::TokenCountMismatch { line, found, .. }) => assert_eq!((line, found), (8, 4)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nodata_cells() {
        let g = parse_ascii_grid(&SMALL.replace("5 7", "5 -9999")).unwrap();
        assert!(g.is_nodata(g.values()[1]));
        assert_eq!(g.population(CellIndex::new(0, 1)), None);
        assert_eq!(g.total(), 5.0);
    }

    #[test]
    fn header_errors() {
        let missing = SMALL.replace("cellsize 100\n", "");
        assert!(matches!(parse_ascii_grid(&missing), Err(RasterError::MalformedHeader { .. })));
        let dup = SMALL.replace("cellsize 100\n", "cellsize 100\nCELLSIZE 100\n");
        assert!(matches!(parse_ascii_grid(&dup), Err(RasterError::MalformedHeader { line: 6, .. })));
        let center = SMALL.replace("xllcorner", "xllcenter");
        assert!(matches!(parse_ascii_grid(&center), Err(RasterError::MalformedHeader { line: 3, .. })));
        let bad = SMALL.replace("5 7", "5 x");
        match parse_ascii_grid(&bad) {
            Err(RasterError::NonNumericToken { line, token }) => assert_eq!((line, token.as_str()), (7, "x")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_negative_population() {
        assert!(matches!(
            parse_ascii_grid(&SMALL.replace("5 7", "5 -3")),
            Err(RasterError::InvalidGrid(_))
        ));
    }

    #[test]
    fn write_then_read() {
        let g = Grid::new(1, 1, 10.0, 20.0, 100.0, -9999.0, vec![3.5], DEFAULT_CRS).unwrap();
        let back = parse_ascii_grid(&write_ascii_grid(&g)).unwrap();
        assert_eq!(back.values(), &[3.5]);
        assert_eq!((back.xll(), back.yll(), back.cellsize()), (10.0, 20.0, 100.0));

        let g = grid(2, 1, vec![1.0, -9999.0]);
        let back = parse_ascii_grid(&write_ascii_grid(&g)).unwrap();
        assert!(back.is_nodata(back.values()[1]));
    }

    #[test]
    fn nan_nodata() {
        let g = Grid::new(2, 1, 0.0, 0.0, 1.0, f64::NAN, vec![1.0, f64::NAN], DEFAULT_CRS).unwrap();
        assert_eq!(g.valid_cell_count(), 1);
        let back = parse_ascii_grid(&write_ascii_grid(&g)).unwrap();
        assert!(back.is_nodata(back.values()[1]));
    }

    #[test]
    fn cell_rects() {
        let g = Grid::new(1, 1, 0.0, 0.0, 100.0, -9999.0, vec![1.0], DEFAULT_CRS).unwrap();
        assert_eq!(g.cell_rect(CellIndex::new(0, 0)).unwrap(), Rect::new(0.0, 0.0, 100.0, 100.0).unwrap());
        let g = Grid::new(2, 2, 0.0, 0.0, 100.0, -9999.0, vec![1.0; 4], DEFAULT_CRS).unwrap();
        assert_eq!(
            g.cell_rect(CellIndex::new(0, 1)).unwrap(),
            Rect::new(100.0, 100.0, 200.0, 200.0).unwrap()
        );
        assert!(matches!(g.cell_rect(CellIndex::new(5, 0)), Err(RasterError::OutOfBounds { .. })));
    }

    #[test]
    fn clip_identity_and_disjoint() {
        let g = grid(3, 2, vec![1.0, 2.0, 3.0, 4.0, -9999.0, 6.0]);
        let full = Mask::from_polygon(g.bounds().to_polygon(), DEFAULT_CRS);
        let same = clip_by_mask(&g, &full, ClipMode::Center).unwrap();
        assert_eq!(same.values(), g.values());

        let far = Polygon::from_coords(&[(50.0, 50.0), (51.0, 50.0), (51.0, 51.0)], &[]).unwrap();
        let none = clip_by_mask(&g, &Mask::from_polygon(far, DEFAULT_CRS), ClipMode::Center).unwrap();
        assert!(none.values().iter().all(|&v| none.is_nodata(v)));
    }

    #[test]
    fn clip_weighted_threshold() {
        let g = grid(2, 1, vec![1.0, 2.0]);
        // Covers all of cell 0 and 30% of cell 1.
        let mask = Mask::from_polygon(Rect::new(0.0, 0.0, 1.3, 1.0).unwrap().to_polygon(), DEFAULT_CRS);
        let half = clip_by_mask(&g, &mask, ClipMode::Weighted { threshold: 0.5 }).unwrap();
        assert_eq!(half.values(), &[1.0, -9999.0]);
        let low = clip_by_mask(&g, &mask, ClipMode::Weighted { threshold: 0.25 }).unwrap();
        assert_eq!(low.values(), &[1.0, 2.0]);
        assert!(matches!(
            clip_by_mask(&g, &mask, ClipMode::Weighted { threshold: 0.0 }),
            Err(RasterError::InvalidThreshold(_))
        ));
    }

    #[test]
    fn clip_crs_mismatch() {
        let g = grid(1, 1, vec![1.0]);
        let mask = Mask::from_polygon(g.bounds().to_polygon(), "EPSG:32631");
        assert!(matches!(clip_by_mask(&g, &mask, ClipMode::Center), Err(RasterError::CrsMismatch { .. })));
    }

    #[test]
    fn points() {
        let g = grid(2, 1, vec![-9999.0, -9999.0]);
        assert!(raster_to_points(&g).is_empty());
        let g = Grid::new(1, 1, 0.0, 0.0, 100.0, -9999.0, vec![9.0], DEFAULT_CRS).unwrap();
        assert_eq!(raster_to_points(&g), vec![(Point::new(50.0, 50.0), 9.0)]);
    }

    #[test]
    fn window_covers_bbox() {
        let g = grid(4, 4, vec![1.0; 16]);
        let w = g.window(&Rect::new(0.5, 0.5, 2.5, 1.5).unwrap()).unwrap();
        // rows counted from the north: y in [0.5, 1.5] → rows 2..=3
        assert_eq!(w, (2, 3, 0, 2));
        assert!(g.window(&Rect::new(10.0, 10.0, 11.0, 11.0).unwrap()).is_none());
    }
}
