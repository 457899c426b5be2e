//! Ward-level population figures from gridded population estimates.
//!
//! * [`geometry`]: polygon area, containment and rectangle clipping.
//! * [`raster`]: georeferenced grids, ESRI ASCII grid I/O, clip-by-mask.
//! * [`zonal`]: per-zone count/sum/mean in cell-center or coverage-weighted mode.
//! * [`geojson`]: ward boundaries from GeoJSON.
//! * [`services`]: facility needs (public toilets) from ward populations.
//! * [`popmodel`]: the Poisson-lognormal model behind the population surface.

pub mod geojson;
pub mod geometry;
pub mod popmodel;
pub mod raster;
pub mod services;
pub mod zonal;

pub use geometry::{Point, Polygon, Rect, Ring};
pub use raster::{CellIndex, ClipMode, Grid, Mask};
pub use zonal::{Zone, ZoneAttrs, ZoneResult, ZoneSet, ZoneStats, ZonalMode};
