//! Planar polygon primitives: shoelace area, even-odd containment and
//! Sutherland-Hodgman clipping against axis-aligned rectangles.
//!
//! These are the kernels beneath cell-coverage fractions. Everything is plain
//! `f64`; rings are stored open (the closing vertex is never repeated).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Clipped pieces with less area than this are treated as empty.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("ring needs at least 3 distinct vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon exterior has zero area")]
    ZeroArea,
    #[error("hole {0} is larger than the exterior ring")]
    HoleTooLarge(usize),
    #[error("invalid rectangle [{min_x}, {max_x}] x [{min_y}, {max_y}]")]
    InvalidRect {
        min_x: f64,
        min_y: f64,
        max_x: f64,
        max_y: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Checked constructor; rejects NaN and infinite coordinates.
    pub fn try_new(x: f64, y: f64) -> Result<Self, GeometryError> {
        if x.is_finite() && y.is_finite() {
            Ok(Self { x, y })
        } else {
            Err(GeometryError::NonFinite(x, y))
        }
    }
}

/// A closed ring stored without its closing vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Ring {
    vertices: Vec<Point>,
}

impl Ring {
    /// Builds a ring, dropping a repeated closing vertex and consecutive
    /// duplicates.
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeometryError> {
        if let Some(p) = vertices.iter().find(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(GeometryError::NonFinite(p.x, p.y));
        }
        let vertices = dedup_ring(vertices);
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Shoelace signed area; positive for counter-clockwise rings.
    pub fn signed_area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn bbox(&self) -> Rect {
        bbox_of(&self.vertices)
    }
}

fn dedup_ring(mut vertices: Vec<Point>) -> Vec<Point> {
    vertices.dedup();
    while vertices.len() > 1 && vertices.first() == vertices.last() {
        vertices.pop();
    }
    vertices
}

fn signed_area(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    // Translate to the first vertex to keep the cross products small.
    let origin = vertices[0];
    let mut twice = 0.0;
    for i in 1..n - 1 {
        let a = vertices[i];
        let b = vertices[i + 1];
        twice += (a.x - origin.x) * (b.y - origin.y) - (b.x - origin.x) * (a.y - origin.y);
    }
    twice * 0.5
}

fn bbox_of(vertices: &[Point]) -> Rect {
    let mut r = Rect {
        min_x: f64::INFINITY,
        min_y: f64::INFINITY,
        max_x: f64::NEG_INFINITY,
        max_y: f64::NEG_INFINITY,
    };
    for p in vertices {
        r.min_x = r.min_x.min(p.x);
        r.min_y = r.min_y.min(p.y);
        r.max_x = r.max_x.max(p.x);
        r.max_y = r.max_y.max(p.y);
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    exterior: Ring,
    holes: Vec<Ring>,
}

impl Polygon {
    pub fn new(exterior: Ring, holes: Vec<Ring>) -> Result<Self, GeometryError> {
        let ext_area = exterior.area();
        if ext_area <= 0.0 {
            return Err(GeometryError::ZeroArea);
        }
        if let Some(i) = holes.iter().position(|h| h.area() > ext_area) {
            return Err(GeometryError::HoleTooLarge(i));
        }
        Ok(Self { exterior, holes })
    }

    /// Convenience constructor from raw coordinate pairs.
    pub fn from_coords(exterior: &[(f64, f64)], holes: &[Vec<(f64, f64)>]) -> Result<Self, GeometryError> {
        let ring = |c: &[(f64, f64)]| Ring::new(c.iter().map(|&(x, y)| Point::new(x, y)).collect());
        let exterior = ring(exterior)?;
        let holes = holes.iter().map(|h| ring(h)).collect::<Result<Vec<_>, _>>()?;
        Self::new(exterior, holes)
    }

    pub fn exterior(&self) -> &Ring {
        &self.exterior
    }

    pub fn holes(&self) -> &[Ring] {
        &self.holes
    }

    pub fn bbox(&self) -> Rect {
        self.exterior.bbox()
    }

    pub fn rings(&self) -> impl Iterator<Item = &Ring> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }
}

/// Axis-aligned rectangle; `max_x > min_x` and `max_y > min_y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self, GeometryError> {
        let finite = [min_x, min_y, max_x, max_y].iter().all(|v| v.is_finite());
        if !finite || max_x <= min_x || max_y <= min_y {
            return Err(GeometryError::InvalidRect {
                min_x,
                min_y,
                max_x,
                max_y,
            });
        }
        Ok(Self {
            min_x,
            min_y,
            max_x,
            max_y,
        })
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.min_x + self.max_x), 0.5 * (self.min_y + self.max_y))
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.min_x < other.max_x && other.min_x < self.max_x && self.min_y < other.max_y && other.min_y < self.max_y
    }

    pub fn to_polygon(&self) -> Polygon {
        let exterior = Ring {
            vertices: vec![
                Point::new(self.min_x, self.min_y),
                Point::new(self.max_x, self.min_y),
                Point::new(self.max_x, self.max_y),
                Point::new(self.min_x, self.max_y),
            ],
        };
        Polygon {
            exterior,
            holes: Vec::new(),
        }
    }
}

/// Exterior area minus hole areas.
pub fn polygon_area(p: &Polygon) -> f64 {
    let holes: f64 = p.holes.iter().map(Ring::area).sum();
    (p.exterior.area() - holes).max(0.0)
}

fn on_segment(pt: Point, a: Point, b: Point) -> bool {
    let cross = (b.x - a.x) * (pt.y - a.y) - (b.y - a.y) * (pt.x - a.x);
    cross == 0.0
        && pt.x >= a.x.min(b.x)
        && pt.x <= a.x.max(b.x)
        && pt.y >= a.y.min(b.y)
        && pt.y <= a.y.max(b.y)
}

/// Even-odd containment. Points lying exactly on any ring edge (exterior or
/// hole) count as inside.
pub fn point_in_polygon(pt: Point, p: &Polygon) -> bool {
    if p.rings().any(|ring| ring.edges().any(|(a, b)| on_segment(pt, a, b))) {
        return true;
    }
    let mut inside = false;
    for ring in p.rings() {
        for (a, b) in ring.edges() {
            if (a.y > pt.y) != (b.y > pt.y) {
                let x_cross = (b.x - a.x) * (pt.y - a.y) / (b.y - a.y) + a.x;
                if pt.x < x_cross {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

#[derive(Clone, Copy)]
enum Side {
    Left(f64),
    Right(f64),
    Bottom(f64),
    Top(f64),
}

impl Side {
    fn inside(self, p: Point) -> bool {
        match self {
            Side::Left(v) => p.x >= v,
            Side::Right(v) => p.x <= v,
            Side::Bottom(v) => p.y >= v,
            Side::Top(v) => p.y <= v,
        }
    }

    // The crossing coordinate on the clip line is pinned to the line value so
    // adjacent cells share bit-identical edge points.
    fn intersect(self, a: Point, b: Point) -> Point {
        match self {
            Side::Left(v) | Side::Right(v) => {
                let t = (v - a.x) / (b.x - a.x);
                Point::new(v, a.y + t * (b.y - a.y))
            }
            Side::Bottom(v) | Side::Top(v) => {
                let t = (v - a.y) / (b.y - a.y);
                Point::new(a.x + t * (b.x - a.x), v)
            }
        }
    }
}

/// Sutherland-Hodgman clip of a single vertex loop against `r`. The output
/// may contain zero-width bridges along the rectangle border when the input
/// is concave; its shoelace area is still exact.
pub(crate) fn clip_ring_vertices(vertices: &[Point], r: &Rect) -> Vec<Point> {
    let mut output: Vec<Point> = vertices.to_vec();
    let sides = [Side::Left(r.min_x), Side::Right(r.max_x), Side::Bottom(r.min_y), Side::Top(r.max_y)];
    for side in sides {
        if output.is_empty() {
            break;
        }
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().unwrap();
        for &cur in &input {
            match (side.inside(prev), side.inside(cur)) {
                (true, true) => output.push(cur),
                (true, false) => output.push(side.intersect(prev, cur)),
                (false, true) => {
                    output.push(side.intersect(prev, cur));
                    output.push(cur);
                }
                (false, false) => {}
            }
            prev = cur;
        }
    }
    dedup_ring(output)
}

/// Area of `ring ∩ r`, without building a polygon.
fn clipped_ring_area(ring: &Ring, r: &Rect) -> f64 {
    let bb = ring.bbox();
    if bb.max_x <= r.min_x || bb.min_x >= r.max_x || bb.max_y <= r.min_y || bb.min_y >= r.max_y {
        return 0.0;
    }
    if bb.min_x >= r.min_x && bb.max_x <= r.max_x && bb.min_y >= r.min_y && bb.max_y <= r.max_y {
        return ring.area();
    }
    signed_area(&clip_ring_vertices(&ring.vertices, r)).abs()
}

/// Intersection of `p` with `r`. Returns `None` when the intersection is empty
/// or thinner than [`DEGENERATE_AREA`].
pub fn clip_polygon_to_rect(p: &Polygon, r: &Rect) -> Option<Polygon> {
    let clip = |ring: &Ring| -> Option<Ring> {
        let vertices = clip_ring_vertices(&ring.vertices, r);
        if vertices.len() < 3 || signed_area(&vertices).abs() < DEGENERATE_AREA {
            None
        } else {
            Some(Ring { vertices })
        }
    };
    let exterior = clip(&p.exterior)?;
    let holes: Vec<Ring> = p.holes.iter().filter_map(clip).collect();
    let result = Polygon { exterior, holes };
    if polygon_area(&result) < DEGENERATE_AREA {
        None
    } else {
        Some(result)
    }
}

/// Area of `p ∩ r`, consistent with [`clip_polygon_to_rect`] but allocation-light.
pub fn clipped_area(p: &Polygon, r: &Rect) -> f64 {
    let ext = clipped_ring_area(&p.exterior, r);
    if ext < DEGENERATE_AREA {
        return 0.0;
    }
    let holes: f64 = p
        .holes
        .iter()
        .map(|h| clipped_ring_area(h, r))
        .filter(|&a| a >= DEGENERATE_AREA)
        .sum();
    let area = (ext - holes).max(0.0);
    if area < DEGENERATE_AREA {
        0.0
    } else {
        area
    }
}

/// Fraction of `r` covered by the union of `parts`, assuming the parts are
/// disjoint. Clamped to `[0, 1]`.
pub fn coverage_fraction(parts: &[Polygon], r: &Rect) -> f64 {
    let covered: f64 = parts.iter().map(|p| clipped_area(p, r)).sum();
    (covered / r.area()).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_square() -> Polygon {
        Polygon::from_coords(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)], &[]).unwrap()
    }

    #[test]
    fn areas() {
        assert_eq!(polygon_area(&unit_square()), 1.0);
        let tri = Polygon::from_coords(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], &[]).unwrap();
        assert_eq!(polygon_area(&tri), 0.5);
        let holed = Polygon::from_coords(
            &[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)],
            &[vec![(4.0, 4.0), (4.0, 6.0), (6.0, 6.0), (6.0, 4.0)]],
        )
        .unwrap();
        assert_eq!(polygon_area(&holed), 96.0);
    }

    #[test]
    fn closing_vertex_is_dropped() {
        let ring = Ring::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 0.0),
        ])
        .unwrap();
        assert_eq!(ring.vertices().len(), 3);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            Ring::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 0.0)]),
            Err(GeometryError::TooFewVertices(2))
        ));
        assert!(matches!(
            Ring::new(vec![Point::new(f64::NAN, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)]),
            Err(GeometryError::NonFinite(..))
        ));
        assert!(Point::try_new(f64::INFINITY, 0.0).is_err());
        assert!(matches!(
            Polygon::from_coords(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)], &[]),
            Err(GeometryError::ZeroArea)
        ));
        assert!(matches!(
            Polygon::from_coords(
                &[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)],
                &[vec![(-1.0, -1.0), (2.0, -1.0), (2.0, 2.0), (-1.0, 2.0)]]
            ),
            Err(GeometryError::HoleTooLarge(0))
        ));
        assert!(Rect::new(1.0, 0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn containment() {
        let sq = unit_square();
        assert!(point_in_polygon(Point::new(0.5, 0.5), &sq));
        assert!(!point_in_polygon(Point::new(2.0, 2.0), &sq));
        assert!(point_in_polygon(Point::new(1.0, 0.5), &sq));
        assert!(point_in_polygon(Point::new(0.0, 0.0), &sq));
    }

    #[test]
    fn holes_exclude_but_their_boundary_is_inside() {
        let holed = Polygon::from_coords(
            &[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)],
            &[vec![(4.0, 4.0), (4.0, 6.0), (6.0, 6.0), (6.0, 4.0)]],
        )
        .unwrap();
        assert!(!point_in_polygon(Point::new(5.0, 5.0), &holed));
        assert!(point_in_polygon(Point::new(4.0, 5.0), &holed));
        assert!(point_in_polygon(Point::new(2.0, 5.0), &holed));
    }

    #[test]
    fn clipping() {
        let sq = unit_square();
        let full = clip_polygon_to_rect(&sq, &Rect::new(-1.0, -1.0, 2.0, 2.0).unwrap()).unwrap();
        assert_eq!(polygon_area(&full), 1.0);
        assert!(clip_polygon_to_rect(&sq, &Rect::new(5.0, 5.0, 6.0, 6.0).unwrap()).is_none());
        let half = clip_polygon_to_rect(&sq, &Rect::new(0.0, 0.0, 0.5, 1.0).unwrap()).unwrap();
        assert_eq!(polygon_area(&half), 0.5);
    }

    #[test]
    fn touching_rect_is_empty() {
        let sq = unit_square();
        assert!(clip_polygon_to_rect(&sq, &Rect::new(1.0, 0.0, 2.0, 1.0).unwrap()).is_none());
        assert_eq!(clipped_area(&sq, &Rect::new(1.0, 0.0, 2.0, 1.0).unwrap()), 0.0);
    }

    #[test]
    fn concave_clip_area() {
        // U shape; the rect cuts both prongs, leaving two disjoint pieces.
        let u = Polygon::from_coords(
            &[(0.0, 0.0), (3.0, 0.0), (3.0, 3.0), (2.0, 3.0), (2.0, 1.0), (1.0, 1.0), (1.0, 3.0), (0.0, 3.0)],
            &[],
        )
        .unwrap();
        assert_eq!(polygon_area(&u), 7.0);
        let r = Rect::new(-1.0, 2.0, 4.0, 4.0).unwrap();
        let clipped = clip_polygon_to_rect(&u, &r).unwrap();
        assert_relative_eq!(polygon_area(&clipped), 2.0, epsilon = 1e-12);
        assert_relative_eq!(clipped_area(&u, &r), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn clipped_holes() {
        let holed = Polygon::from_coords(
            &[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)],
            &[vec![(4.0, 4.0), (4.0, 6.0), (6.0, 6.0), (6.0, 4.0)]],
        )
        .unwrap();
        let r = Rect::new(5.0, 0.0, 10.0, 10.0).unwrap();
        assert_relative_eq!(clipped_area(&holed, &r), 48.0, epsilon = 1e-12);
        let clipped = clip_polygon_to_rect(&holed, &r).unwrap();
        assert_eq!(clipped.holes().len(), 1);
        assert_relative_eq!(polygon_area(&clipped), 48.0, epsilon = 1e-12);
    }

    #[test]
    fn coverage_is_clamped() {
        let sq = unit_square();
        let r = Rect::new(0.0, 0.0, 0.5, 0.5).unwrap();
        assert_eq!(coverage_fraction(&[sq.clone(), sq], &r), 1.0);
    }
}
