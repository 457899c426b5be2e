//! Per-zone `_count` / `_sum` / `_mean` over a population grid.
//!
//! Two accumulation modes are supported. `Weighted` (the default) weights
//! each cell by the exact fraction of its footprint covered by the zone, which
//! is what yields fractional counts for zones smaller than a cell. `Center`
//! counts a cell iff its center lies inside the zone.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{clipped_area, point_in_polygon, Polygon, Rect};
use crate::raster::{Grid, Mask};

#[derive(Debug, Error)]
pub enum ZonalError {
    #[error("CRS mismatch: grid is {grid:?}, zones are {zones:?}")]
    CrsMismatch { grid: String, zones: String },
    #[error("zone {index}: {reason}")]
    InvalidZone { index: usize, reason: String },
    #[error("CSV schema: {0}")]
    Schema(String),
    #[error("CSV row {row}: {reason}")]
    Parse { row: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Administrative attributes carried through to the CSV output.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneAttrs {
    pub ward_name: String,
    pub lga_code: String,
    pub lga_name: String,
    pub state_code: String,
    pub state_name: String,
}

impl ZoneAttrs {
    pub fn named(ward_name: impl Into<String>) -> Self {
        Self {
            ward_name: ward_name.into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    parts: Vec<Polygon>,
    attrs: ZoneAttrs,
    bbox: Rect,
}

impl Zone {
    pub fn new(parts: Vec<Polygon>, attrs: ZoneAttrs) -> Result<Self, String> {
        if parts.is_empty() {
            return Err("zone has no polygon parts".into());
        }
        if attrs.ward_name.trim().is_empty() {
            return Err("ward_name is empty".into());
        }
        let mut bbox = parts[0].bbox();
        for p in &parts[1..] {
            let b = p.bbox();
            bbox.min_x = bbox.min_x.min(b.min_x);
            bbox.min_y = bbox.min_y.min(b.min_y);
            bbox.max_x = bbox.max_x.max(b.max_x);
            bbox.max_y = bbox.max_y.max(b.max_y);
        }
        Ok(Self { parts, attrs, bbox })
    }

    pub fn parts(&self) -> &[Polygon] {
        &self.parts
    }

    pub fn attrs(&self) -> &ZoneAttrs {
        &self.attrs
    }

    pub fn bbox(&self) -> Rect {
        self.bbox
    }

    pub fn contains(&self, pt: crate::geometry::Point) -> bool {
        self.parts.iter().any(|p| point_in_polygon(pt, p))
    }

    /// Fraction of `cell` covered by this zone's parts.
    pub fn coverage(&self, cell: &Rect) -> f64 {
        let covered: f64 = self.parts.iter().map(|p| clipped_area(p, cell)).sum();
        (covered / cell.area()).min(1.0)
    }
}

/// Zones in input order, sharing one CRS tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneSet {
    pub zones: Vec<Zone>,
    pub crs_tag: String,
}

impl ZoneSet {
    pub fn new(zones: Vec<Zone>, crs_tag: impl Into<String>) -> Self {
        Self {
            zones,
            crs_tag: crs_tag.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    /// All parts of all zones as one clipping mask.
    pub fn to_mask(&self) -> Mask {
        let parts = self.zones.iter().flat_map(|z| z.parts.iter().cloned()).collect();
        Mask::new(parts, self.crs_tag.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZonalMode {
    Center,
    #[default]
    Weighted,
}

impl std::str::FromStr for ZonalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "center" => Ok(Self::Center),
            "weighted" => Ok(Self::Weighted),
            other => Err(format!("unknown mode {other:?}, expected center or weighted")),
        }
    }
}

impl std::fmt::Display for ZonalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Center => "center",
            Self::Weighted => "weighted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneStats {
    pub count: f64,
    pub sum: f64,
    pub mean: Option<f64>,
}

impl ZoneStats {
    pub const EMPTY: Self = Self {
        count: 0.0,
        sum: 0.0,
        mean: None,
    };

    pub fn from_count_sum(count: f64, sum: f64) -> Self {
        if count > 0.0 {
            Self {
                count,
                sum,
                mean: Some(sum / count),
            }
        } else {
            Self::EMPTY
        }
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut k = Self::default();
        iter.into_iter().for_each(|v| k.add(v));
        k
    }
}

/// One output row of [`zonal_stats`].
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneResult {
    pub attrs: ZoneAttrs,
    pub stats: ZoneStats,
}

fn check_crs(g: &Grid, zs: &ZoneSet) -> Result<(), ZonalError> {
    if g.crs_tag() != zs.crs_tag {
        return Err(ZonalError::CrsMismatch {
            grid: g.crs_tag().to_string(),
            zones: zs.crs_tag.clone(),
        });
    }
    Ok(())
}

fn accumulate(g: &Grid, zone: &Zone, mode: ZonalMode, rows: (usize, usize), cols: (usize, usize)) -> ZoneStats {
    let mut count = KahanSum::default();
    let mut sum = KahanSum::default();
    for row in rows.0..=rows.1 {
        for col in cols.0..=cols.1 {
            let v = g.values()[row * g.ncols() + col];
            if g.is_nodata(v) {
                continue;
            }
            let cell = g.cell_rect_unchecked(row, col);
            let w = match mode {
                ZonalMode::Center => {
                    if zone.contains(cell.center()) {
                        1.0
                    } else {
                        0.0
                    }
                }
                ZonalMode::Weighted => zone.coverage(&cell),
            };
            if w > 0.0 {
                count.add(w);
                sum.add(w * v);
            }
        }
    }
    ZoneStats::from_count_sum(count.total(), sum.total())
}

/// Count, sum and mean for every zone, in zone order. Each zone only visits
/// the cells under its bounding box; zones run in parallel.
pub fn zonal_stats(g: &Grid, zs: &ZoneSet, mode: ZonalMode) -> Result<Vec<ZoneResult>, ZonalError> {
    check_crs(g, zs)?;
    Ok(zs
        .zones
        .par_iter()
        .map(|zone| {
            let stats = match g.window(&zone.bbox) {
                Some((r0, r1, c0, c1)) => accumulate(g, zone, mode, (r0, r1), (c0, c1)),
                None => ZoneStats::EMPTY,
            };
            ZoneResult {
                attrs: zone.attrs.clone(),
                stats,
            }
        })
        .collect())
}

/// Reference path for [`zonal_stats`]: visits every cell of the grid for
/// every zone, sequentially.
pub fn zonal_stats_exhaustive(g: &Grid, zs: &ZoneSet, mode: ZonalMode) -> Result<Vec<ZoneResult>, ZonalError> {
    check_crs(g, zs)?;
    Ok(zs
        .zones
        .iter()
        .map(|zone| ZoneResult {
            attrs: zone.attrs.clone(),
            stats: accumulate(g, zone, mode, (0, g.nrows() - 1), (0, g.ncols() - 1)),
        })
        .collect())
}

/// Σ `_sum` over zones in input order.
pub fn aggregate_total(results: &[ZoneResult]) -> f64 {
    results.iter().map(|r| r.stats.sum).collect::<KahanSum>().total()
}

pub const ZONAL_CSV_HEADER: [&str; 8] =
    ["ward_name", "lga_code", "lga_name", "state_code", "state_name", "_count", "_sum", "_mean"];

/// Writes the zonal CSV: fixed header, one row per zone, shortest round-trip
/// numbers and an empty `_mean` for zones without coverage.
pub fn export_zonal_csv<W: Write>(results: &[ZoneResult], destination: W) -> Result<(), ZonalError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(destination);
    w.write_record(ZONAL_CSV_HEADER)?;
    for r in results {
        let a = &r.attrs;
        let mean = r.stats.mean.map(|m| m.to_string()).unwrap_or_default();
        w.write_record([
            a.ward_name.as_str(),
            &a.lga_code,
            &a.lga_name,
            &a.state_code,
            &a.state_name,
            &r.stats.count.to_string(),
            &r.stats.sum.to_string(),
            &mean,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn zonal_csv_string(results: &[ZoneResult]) -> String {
    let mut buf = Vec::new();
    export_zonal_csv(results, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("CSV output is UTF-8")
}

/// Parses a CSV produced by [`export_zonal_csv`].
pub fn read_zonal_csv<R: Read>(source: R) -> Result<Vec<ZoneResult>, ZonalError> {
    let mut r = csv::ReaderBuilder::new().from_reader(source);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ZONAL_CSV_HEADER {
        return Err(ZonalError::Schema(format!(
            "expected header {}, found {}",
            ZONAL_CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let num = |j: usize| -> Result<f64, ZonalError> {
            rec[j].parse::<f64>().map_err(|_| ZonalError::Parse {
                row,
                reason: format!("{} is not a number: {:?}", ZONAL_CSV_HEADER[j], &rec[j]),
            })
        };
        let mean = if rec[7].is_empty() { None } else { Some(num(7)?) };
        out.push(ZoneResult {
            attrs: ZoneAttrs {
                ward_name: rec[0].to_string(),
                lga_code: rec[1].to_string(),
                lga_name: rec[2].to_string(),
                state_code: rec[3].to_string(),
                state_name: rec[4].to_string(),
            },
            stats: ZoneStats {
                count: num(5)?,
                sum: num(6)?,
                mean,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::DEFAULT_CRS;
    use approx::assert_relative_eq;

    fn rect_zone(name: &str, r: (f64, f64, f64, f64)) -> Zone {
        let rect = Rect::new(r.0, r.1, r.2, r.3).unwrap();
        Zone::new(vec![rect.to_polygon()], ZoneAttrs::named(name)).unwrap()
    }

    fn two_by_two() -> Grid {
        // north row [1, 2], south row [3, 4]
        Grid::new(2, 2, 0.0, 0.0, 1.0, -9999.0, vec![1.0, 2.0, 3.0, 4.0], DEFAULT_CRS).unwrap()
    }

    #[test]
    fn whole_cells_either_mode() {
        let g = Grid::new(4, 4, 0.0, 0.0, 1.0, -9999.0, vec![1.0; 16], DEFAULT_CRS).unwrap();
        let zs = ZoneSet::new(vec![rect_zone("a", (1.0, 1.0, 3.0, 4.0))], DEFAULT_CRS);
        for mode in [ZonalMode::Center, ZonalMode::Weighted] {
            let r = zonal_stats(&g, &zs, mode).unwrap();
            assert_eq!(r[0].stats, ZoneStats::from_count_sum(6.0, 6.0));
            assert_eq!(r[0].stats.mean, Some(1.0));
        }
    }

    #[test]
    fn left_column() {
        let zs = ZoneSet::new(vec![rect_zone("left", (0.0, 0.0, 1.0, 2.0))], DEFAULT_CRS);
        let r = zonal_stats(&two_by_two(), &zs, ZonalMode::Weighted).unwrap();
        assert_eq!((r[0].stats.count, r[0].stats.sum, r[0].stats.mean), (2.0, 4.0, Some(2.0)));
    }

    #[test]
    fn partial_cell_gives_fractional_count() {
        let zs = ZoneSet::new(vec![rect_zone("sliver", (0.0, 1.0, 0.25, 1.5))], DEFAULT_CRS);
        let r = zonal_stats(&two_by_two(), &zs, ZonalMode::Weighted).unwrap();
        assert_relative_eq!(r[0].stats.count, 0.125, epsilon = 1e-15);
        assert_relative_eq!(r[0].stats.sum, 0.125, epsilon = 1e-15);
        let c = zonal_stats(&two_by_two(), &zs, ZonalMode::Center).unwrap();
        assert_eq!(c[0].stats, ZoneStats::EMPTY);
    }

    #[test]
    fn nodata_is_skipped() {
        let g = Grid::new(2, 1, 0.0, 0.0, 1.0, -1.0, vec![5.0, -1.0], DEFAULT_CRS).unwrap();
        let zs = ZoneSet::new(vec![rect_zone("all", (0.0, 0.0, 2.0, 1.0))], DEFAULT_CRS);
        for mode in [ZonalMode::Center, ZonalMode::Weighted] {
            let r = zonal_stats(&g, &zs, mode).unwrap();
            assert_eq!((r[0].stats.count, r[0].stats.sum), (1.0, 5.0));
        }
    }

    #[test]
    fn overlapping_zones_are_independent() {
        let zs = ZoneSet::new(
            vec![rect_zone("a", (0.0, 0.0, 2.0, 2.0)), rect_zone("b", (0.0, 0.0, 1.0, 2.0))],
            DEFAULT_CRS,
        );
        let r = zonal_stats(&two_by_two(), &zs, ZonalMode::Weighted).unwrap();
        assert_eq!(r[0].stats.sum, 10.0);
        assert_eq!(r[1].stats.sum, 4.0);
        assert_eq!(aggregate_total(&r), 14.0);
    }

    #[test]
    fn crs_mismatch() {
        let zs = ZoneSet::new(vec![rect_zone("a", (0.0, 0.0, 1.0, 1.0))], "EPSG:32631");
        assert!(matches!(
            zonal_stats(&two_by_two(), &zs, ZonalMode::Center),
            Err(ZonalError::CrsMismatch { .. })
        ));
    }

    #[test]
    fn totals() {
        assert_eq!(aggregate_total(&[]), 0.0);
        let one = ZoneResult {
            attrs: ZoneAttrs::named("x"),
            stats: ZoneStats::from_count_sum(2.0, 7.25),
        };
        assert_eq!(aggregate_total(std::slice::from_ref(&one)), 7.25);
    }

    #[test]
    fn csv_rows() {
        let rows = vec![
            ZoneResult {
                attrs: ZoneAttrs {
                    ward_name: "Ajele".into(),
                    lga_code: "25020".into(),
                    lga_name: "Lagos Island".into(),
                    state_code: "LA".into(),
                    state_name: "Lagos".into(),
                },
                stats: ZoneStats::from_count_sum(8.0, 980.252693176),
            },
            ZoneResult {
                attrs: ZoneAttrs::named("Empty, Ward"),
                stats: ZoneStats::EMPTY,
            },
        ];
        let text = zonal_csv_string(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "ward_name,lga_code,lga_name,state_code,state_name,_count,_sum,_mean");
        assert!(lines[1].ends_with(",8,980.252693176,122.531586647"), "{}", lines[1]);
        assert_eq!(lines[2], "\"Empty, Ward\",,,,,0,0,");
        assert!(!text.contains('\r'));
        let back = read_zonal_csv(text.as_bytes()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn csv_schema_error() {
        let text = "ward_name,_count,_mean\nx,1,2\n";
        assert!(matches!(read_zonal_csv(text.as_bytes()), Err(ZonalError::Schema(_))));
    }

    #[test]
    fn kahan_beats_naive() {
        let mut k = KahanSum::default();
        k.add(1e16);
        for _ in 0..10 {
            k.add(1.0);
        }
        k.add(-1e16);
        assert_eq!(k.total(), 10.0);
    }
}
