//! Planar geometry in projected meters: rings, areas, rectangle fitting,
//! distances, contact predicates and a uniform-grid spatial index.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const AREA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Point) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rotates counter-clockwise about the origin.
    pub fn rotated(self, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

/// Twice the signed area of triangle `a b c`; positive when counter-clockwise.
fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b - a).cross(c - a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: Point,
    pub max: Point,
}

impl BBox {
    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Point>) -> Option<BBox> {
        let mut it = pts.into_iter();
        let first = *it.next()?;
        let mut b = BBox {
            min: first,
            max: first,
        };
        for p in it {
            b.min.x = b.min.x.min(p.x);
            b.min.y = b.min.y.min(p.y);
            b.max.x = b.max.x.max(p.x);
            b.max.y = b.max.y.max(p.y);
        }
        Some(b)
    }

    pub fn around(p: Point, radius: f64) -> BBox {
        BBox {
            min: Point::new(p.x - radius, p.y - radius),
            max: Point::new(p.x + radius, p.y + radius),
        }
    }

    pub fn expanded(self, margin: f64) -> BBox {
        BBox {
            min: Point::new(self.min.x - margin, self.min.y - margin),
            max: Point::new(self.max.x + margin, self.max.y + margin),
        }
    }

    pub fn intersects(&self, o: &BBox) -> bool {
        self.min.x <= o.max.x && o.min.x <= self.max.x && self.min.y <= o.max.y && o.min.y <= self.max.y
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// A closed polygon boundary. Closure is implicit: the first vertex is not
/// repeated at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Ring {
    vertices: Vec<Point>,
}

impl Ring {
    /// Validates and normalizes a vertex list. A trailing copy of the first
    /// vertex is dropped.
    pub fn new(mut vertices: Vec<Point>) -> Result<Ring> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::InvalidRing(format!("{} vertices, need at least 3", vertices.len())));
        }
        if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidRing(format!("non-finite vertex {p:?}")));
        }
        let n = vertices.len();
        if (0..n).any(|i| vertices[i] == vertices[(i + 1) % n]) {
            return Err(Error::InvalidRing("consecutive duplicate vertices".into()));
        }
        Ok(Ring { vertices })
    }

    /// Axis-aligned rectangle with its lower-left corner at `min`.
    pub fn rectangle(min: Point, width: f64, height: f64) -> Result<Ring> {
        Ring::new(vec![
            min,
            Point::new(min.x + width, min.y),
            Point::new(min.x + width, min.y + height),
            Point::new(min.x, min.y + height),
        ])
    }

    /// Rectangle of the given side lengths centered at `center`, long axis at
    /// `angle` radians from the x axis.
    pub fn oriented_rectangle(center: Point, length: f64, width: f64, angle: f64) -> Result<Ring> {
        let (hl, hw) = (length / 2.0, width / 2.0);
        let corners = [(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)];
        Ring::new(
            corners
                .iter()
                .map(|&(x, y)| Point::new(x, y).rotated(angle) + center)
                .collect(),
        )
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Edges as `(start, end)` pairs, including the closing edge.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn bbox(&self) -> BBox {
        BBox::from_points(&self.vertices).expect("ring has vertices")
    }

    pub fn translated(&self, d: Point) -> Ring {
        Ring {
            vertices: self.vertices.iter().map(|&p| p + d).collect(),
        }
    }

    pub fn rotated(&self, angle: f64, about: Point) -> Ring {
        Ring {
            vertices: self.vertices.iter().map(|&p| (p - about).rotated(angle) + about).collect(),
        }
    }

    /// Shoelace signed area; positive for counter-clockwise rings.
    pub fn signed_area(&self) -> f64 {
        // Anchored at the first vertex to limit cancellation for rings far
        // from the origin.
        let o = self.vertices[0];
        self.edges().map(|(a, b)| (a - o).cross(b - o)).sum::<f64>() / 2.0
    }
}

impl TryFrom<Vec<Point>> for Ring {
    type Error = Error;
    fn try_from(v: Vec<Point>) -> Result<Ring> {
        Ring::new(v)
    }
}

impl From<Ring> for Vec<Point> {
    fn from(r: Ring) -> Vec<Point> {
        r.vertices
    }
}

fn degenerate_check(ring: &Ring) -> Result<f64> {
    let a = ring.signed_area();
    let scale = ring.bbox();
    let extent = (scale.max.x - scale.min.x).max(scale.max.y - scale.min.y);
    if a.abs() <= AREA_EPS * extent.max(1.0).powi(2) {
        return Err(Error::DegenerateGeometry("ring encloses zero area".into()));
    }
    Ok(a)
}

pub fn polygon_area(ring: &Ring) -> Result<f64> {
    degenerate_check(ring).map(f64::abs)
}

/// Area-weighted centroid.
pub fn centroid(ring: &Ring) -> Result<Point> {
    let a = degenerate_check(ring)?;
    let o = ring.vertices[0];
    let (mut cx, mut cy) = (0.0, 0.0);
    for (p, q) in ring.edges() {
        let (p, q) = (p - o, q - o);
        let w = p.cross(q);
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
    }
    Ok(Point::new(cx / (6.0 * a), cy / (6.0 * a)) + o)
}

/// Convex hull by monotone chain, counter-clockwise, collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinAreaRect {
    /// Longer side, meters.
    pub length: f64,
    /// Shorter side, meters.
    pub width: f64,
    /// Direction of the long side, radians in `[0, π)`.
    pub angle: f64,
    pub center: Point,
}

impl MinAreaRect {
    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    /// Length over width, always ≥ 1.
    pub fn aspect_ratio(&self) -> f64 {
        self.length / self.width
    }

    pub fn corners(&self) -> [Point; 4] {
        let u = Point::new(self.angle.cos(), self.angle.sin());
        let n = Point::new(-u.y, u.x);
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [
            self.center - u * hl - n * hw,
            self.center + u * hl - n * hw,
            self.center + u * hl + n * hw,
            self.center - u * hl + n * hw,
        ]
    }
}

/// Minimum-area enclosing rectangle via rotating calipers over the convex hull.
pub fn min_area_rect(ring: &Ring) -> Result<MinAreaRect> {
    degenerate_check(ring)?;
    let hull = convex_hull(ring.vertices());
    let h = hull.len();
    if h < 3 {
        return Err(Error::DegenerateGeometry("convex hull has fewer than 3 vertices".into()));
    }
    let at = |i: usize| hull[i % h];

    // Calipers: for edge i, `hi_u` tracks the vertex extreme along the edge
    // direction, `lo_u` the one extreme against it, `far` the one farthest
    // along the inward normal. All three only ever move forward.
    let (mut hi_u, mut lo_u, mut far) = (1usize, 0usize, 1usize);
    let mut best: Option<(f64, usize, f64, f64, f64)> = None;
    for i in 0..h {
        let p = at(i);
        let e = at(i + 1) - p;
        let u = e * (1.0 / e.norm());
        let n = Point::new(-u.y, u.x);
        let proj_u = |k: usize| (at(k) - p).dot(u);
        let proj_n = |k: usize| (at(k) - p).dot(n);

        if i == 0 {
            hi_u = (0..h).max_by(|&a, &b| proj_u(a).total_cmp(&proj_u(b))).unwrap_or(0);
            far = (0..h).max_by(|&a, &b| proj_n(a).total_cmp(&proj_n(b))).unwrap_or(0);
            lo_u = (0..h).min_by(|&a, &b| proj_u(a).total_cmp(&proj_u(b))).unwrap_or(0);
        } else {
            for _ in 0..h {
                if proj_u(hi_u + 1) > proj_u(hi_u) {
                    hi_u += 1;
                } else {
                    break;
                }
            }
            for _ in 0..h {
                if proj_n(far + 1) > proj_n(far) {
                    far += 1;
                } else {
                    break;
                }
            }
            for _ in 0..h {
                if proj_u(lo_u + 1) < proj_u(lo_u) {
                    lo_u += 1;
                } else {
                    break;
                }
            }
        }
        let (umax, umin, nmax) = (proj_u(hi_u), proj_u(lo_u), proj_n(far));
        let area = (umax - umin) * nmax;
        if best.is_none_or(|b| area < b.0) {
            best = Some((area, i, umin, umax, nmax));
        }
    }

    let (_, i, umin, umax, nmax) = best.expect("hull has edges");
    let p = at(i);
    let e = at(i + 1) - p;
    let u = e * (1.0 / e.norm());
    let n = Point::new(-u.y, u.x);
    let center = p + u * ((umin + umax) / 2.0) + n * (nmax / 2.0);
    let along = umax - umin;
    let (length, width, dir) = if along >= nmax {
        (along, nmax, u)
    } else {
        (nmax, along, n)
    };
    if width <= 0.0 {
        return Err(Error::DegenerateGeometry("zero-width rectangle".into()));
    }
    let mut angle = dir.y.atan2(dir.x).rem_euclid(PI);
    if angle >= PI {
        angle = 0.0;
    }
    Ok(MinAreaRect {
        length,
        width,
        angle,
        center,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub fn new(a: Point, b: Point) -> Self {
        Segment { a, b }
    }

    pub fn bbox(&self) -> BBox {
        BBox::from_points([&self.a, &self.b]).expect("two points")
    }

    pub fn distance_to(&self, p: Point) -> f64 {
        point_segment_distance(p, self.a, self.b)
    }
}

pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test: touching endpoints count.
pub fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(p1, q1, q2))
        || (d2 == 0.0 && on_segment(p2, q1, q2))
        || (d3 == 0.0 && on_segment(q1, p1, p2))
        || (d4 == 0.0 && on_segment(q2, p1, p2))
}

/// Intersection point of two non-parallel segments that properly cross.
fn crossing_point(p1: Point, p2: Point, q1: Point, q2: Point) -> Option<Point> {
    let r = p2 - p1;
    let s = q2 - q1;
    let denom = r.cross(s);
    if denom == 0.0 {
        return None;
    }
    let t = (q1 - p1).cross(s) / denom;
    let u = (q1 - p1).cross(r) / denom;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then(|| p1 + r * t)
}

/// Even-odd containment. Points exactly on the boundary may land either way;
/// callers that care about boundary contact test edges separately.
pub fn point_in_ring(p: Point, ring: &Ring) -> bool {
    let mut inside = false;
    for (a, b) in ring.edges() {
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Any contact between two rings: crossing or touching boundaries, or one
/// ring inside the other.
pub fn rings_intersect(a: &Ring, b: &Ring) -> bool {
    if !a.bbox().intersects(&b.bbox()) {
        return false;
    }
    for (p1, p2) in a.edges() {
        for (q1, q2) in b.edges() {
            if segments_intersect(p1, p2, q1, q2) {
                return true;
            }
        }
    }
    point_in_ring(a.vertices[0], b) || point_in_ring(b.vertices[0], a)
}

/// Whether a polyline crosses, touches or lies inside a ring.
pub fn polyline_intersects_ring(line: &[Point], ring: &Ring) -> bool {
    let Some(lb) = BBox::from_points(line) else {
        return false;
    };
    if !lb.intersects(&ring.bbox()) {
        return false;
    }
    for w in line.windows(2) {
        for (q1, q2) in ring.edges() {
            if segments_intersect(w[0], w[1], q1, q2) {
                return true;
            }
        }
    }
    point_in_ring(line[0], ring)
}

/// Inside intervals of a ring along the vertical line `x`, which must not
/// pass through a vertex.
fn vertical_cross_section(ring: &Ring, x: f64) -> Vec<f64> {
    let mut ys: Vec<f64> = ring
        .edges()
        .filter(|(a, b)| (a.x < x) != (b.x < x))
        .map(|(a, b)| a.y + (x - a.x) / (b.x - a.x) * (b.y - a.y))
        .collect();
    ys.sort_by(f64::total_cmp);
    ys
}

/// Whether the interiors of two rings overlap with positive area. Shared
/// boundary alone is not overlap.
///
/// Slab decomposition: between consecutive vertex or crossing abscissae no
/// edge starts, ends or crosses another, so the inside intervals keep their
/// order and sampling each slab's midline is exact.
pub fn interiors_intersect(a: &Ring, b: &Ring) -> bool {
    let (ba, bb) = (a.bbox(), b.bbox());
    if !(ba.min.x < bb.max.x && bb.min.x < ba.max.x && ba.min.y < bb.max.y && bb.min.y < ba.max.y) {
        return false;
    }
    let mut xs: Vec<f64> = a.vertices.iter().chain(&b.vertices).map(|p| p.x).collect();
    for (p1, p2) in a.edges() {
        for (q1, q2) in b.edges() {
            if let Some(c) = crossing_point(p1, p2, q1, q2) {
                xs.push(c.x);
            }
        }
    }
    xs.retain(|&x| x > ba.min.x.max(bb.min.x) && x < ba.max.x.min(bb.max.x));
    xs.push(ba.min.x.max(bb.min.x));
    xs.push(ba.max.x.min(bb.max.x));
    xs.sort_by(f64::total_cmp);
    xs.dedup();

    for w in xs.windows(2) {
        if w[1] - w[0] <= 0.0 {
            continue;
        }
        let xm = 0.5 * (w[0] + w[1]);
        let ia = vertical_cross_section(a, xm);
        let ib = vertical_cross_section(b, xm);
        for sa in ia.chunks_exact(2) {
            for sb in ib.chunks_exact(2) {
                if sa[0].max(sb[0]) < sa[1].min(sb[1]) {
                    return true;
                }
            }
        }
    }
    false
}

/// Uniform-grid bucket index over bounding boxes.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    cell: f64,
    boxes: Vec<BBox>,
    buckets: HashMap<(i64, i64), Vec<u32>>,
    cell_min: (i64, i64),
    cell_max: (i64, i64),
}

impl SpatialIndex {
    pub const DEFAULT_CELL: f64 = 250.0;

    pub fn new(cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        SpatialIndex {
            cell,
            boxes: Vec::new(),
            buckets: HashMap::new(),
            cell_min: (i64::MAX, i64::MAX),
            cell_max: (i64::MIN, i64::MIN),
        }
    }

    pub fn from_boxes(cell: f64, boxes: impl IntoIterator<Item = BBox>) -> Self {
        let mut idx = SpatialIndex::new(cell);
        for b in boxes {
            idx.insert(b);
        }
        idx
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    fn cell_of(&self, p: Point) -> (i64, i64) {
        ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64)
    }

    /// Inserts a box and returns its item id (insertion order).
    pub fn insert(&mut self, b: BBox) -> usize {
        let id = self.boxes.len();
        self.boxes.push(b);
        let (c0, c1) = (self.cell_of(b.min), self.cell_of(b.max));
        for cx in c0.0..=c1.0 {
            for cy in c0.1..=c1.1 {
                self.buckets.entry((cx, cy)).or_default().push(id as u32);
            }
        }
        self.cell_min = (self.cell_min.0.min(c0.0), self.cell_min.1.min(c0.1));
        self.cell_max = (self.cell_max.0.max(c1.0), self.cell_max.1.max(c1.1));
        id
    }

    pub fn bbox(&self, id: usize) -> BBox {
        self.boxes[id]
    }

    /// Ids whose boxes intersect `window`, ascending.
    pub fn query(&self, window: &BBox) -> Vec<usize> {
        if self.boxes.is_empty() {
            return Vec::new();
        }
        let (c0, c1) = (self.cell_of(window.min), self.cell_of(window.max));
        let (x0, y0) = (c0.0.max(self.cell_min.0), c0.1.max(self.cell_min.1));
        let (x1, y1) = (c1.0.min(self.cell_max.0), c1.1.min(self.cell_max.1));
        let mut out = Vec::new();
        for cx in x0..=x1 {
            for cy in y0..=y1 {
                if let Some(ids) = self.buckets.get(&(cx, cy)) {
                    out.extend(
                        ids.iter()
                            .map(|&i| i as usize)
                            .filter(|&i| self.boxes[i].intersects(window)),
                    );
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Nearest item to `p` under `dist`, which must never be smaller than
    /// the Euclidean distance from `p` to the item's box. Ties go to the
    /// lowest id.
    pub fn nearest<F: Fn(usize) -> f64>(&self, p: Point, dist: F) -> Option<(usize, f64)> {
        if self.boxes.is_empty() {
            return None;
        }
        let c = self.cell_of(p);
        let reach = [
            (c.0 - self.cell_min.0).abs(),
            (self.cell_max.0 - c.0).abs(),
            (c.1 - self.cell_min.1).abs(),
            (self.cell_max.1 - c.1).abs(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);
        let mut seen = vec![false; self.boxes.len()];
        let mut best: Option<(usize, f64)> = None;
        let mut visit = |cx: i64, cy: i64, best: &mut Option<(usize, f64)>| {
            if let Some(ids) = self.buckets.get(&(cx, cy)) {
                for &id in ids {
                    let id = id as usize;
                    if std::mem::replace(&mut seen[id], true) {
                        continue;
                    }
                    let d = dist(id);
                    let better = match *best {
                        None => true,
                        Some((bid, bd)) => d < bd || (d == bd && id < bid),
                    };
                    if better {
                        *best = Some((id, d));
                    }
                }
            }
        };
        for r in 0..=reach {
            if r == 0 {
                visit(c.0, c.1, &mut best);
            } else {
                for k in -r..=r {
                    visit(c.0 + k, c.1 - r, &mut best);
                    visit(c.0 + k, c.1 + r, &mut best);
                }
                for k in (-r + 1)..r {
                    visit(c.0 - r, c.1 + k, &mut best);
                    visit(c.0 + r, c.1 + k, &mut best);
                }
            }
            // Every unvisited cell is at least r cells away.
            if let Some((_, d)) = best {
                if d < r as f64 * self.cell {
                    break;
                }
            }
        }
        best
    }
}

/// Road segments with their grid index.
#[derive(Debug, Clone)]
pub struct SegmentIndex {
    segments: Vec<Segment>,
    index: SpatialIndex,
}

impl SegmentIndex {
    pub fn new(segments: Vec<Segment>, cell: f64) -> Self {
        let index = SpatialIndex::from_boxes(cell, segments.iter().map(Segment::bbox));
        SegmentIndex { segments, index }
    }

    pub fn from_polylines<'a>(lines: impl IntoIterator<Item = &'a [Point]>, cell: f64) -> Self {
        let segs = lines
            .into_iter()
            .flat_map(|l| l.windows(2).map(|w| Segment::new(w[0], w[1])))
            .collect();
        SegmentIndex::new(segs, cell)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn nearest_distance(&self, p: Point) -> Option<f64> {
        self.index
            .nearest(p, |i| self.segments[i].distance_to(p))
            .map(|(_, d)| d)
    }
}

/// Distance from the ring's centroid to the closest road segment.
pub fn nearest_road_distance(ring: &Ring, roads: &SegmentIndex) -> Result<f64> {
    if roads.is_empty() {
        return Err(Error::NoRoads);
    }
    let c = centroid(ring)?;
    roads.nearest_distance(c).ok_or(Error::NoRoads)
}

/// All pairwise centroid distances, ascending.
pub fn pairwise_centroid_distances(rings: &[Ring]) -> Result<Vec<f64>> {
    if rings.len() < 2 {
        return Err(Error::InsufficientBarns(rings.len()));
    }
    let cs = rings.iter().map(centroid).collect::<Result<Vec<_>>>()?;
    let mut d = Vec::with_capacity(cs.len() * (cs.len() - 1) / 2);
    for i in 0..cs.len() {
        for j in (i + 1)..cs.len() {
            d.push(cs[i].distance(cs[j]));
        }
    }
    d.sort_by(f64::total_cmp);
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ring(pts: &[(f64, f64)]) -> Ring {
        Ring::new(pts.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
    }

    fn unit_square() -> Ring {
        ring(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])
    }

    #[test]
    fn ring_validation() {
        assert!(Ring::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)]).is_err());
        assert!(Ring::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0)
        ])
        .is_err());
        assert!(Ring::new(vec![Point::new(0.0, 0.0), Point::new(f64::NAN, 0.0), Point::new(0.0, 1.0)]).is_err());
        let closed = ring(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 0.0)]);
        assert_eq!(closed.len(), 3);
    }

    #[test]
    fn area_cases() {
        assert_eq!(polygon_area(&unit_square()).unwrap(), 1.0);
        let r = Ring::rectangle(Point::new(10.0, 5.0), 20.0, 50.0).unwrap();
        assert!((polygon_area(&r).unwrap() - 1000.0).abs() < 1e-9);
        let line = ring(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);
        assert!(matches!(polygon_area(&line), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn area_matches_fan_triangulation() {
        // Star-shaped 12-gon: radial order around the origin keeps it simple,
        // so a fan from the origin is an independent triangulation.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let pts: Vec<Point> = (0..12)
                .map(|i| {
                    let t = i as f64 / 12.0 * 2.0 * PI + rng.gen_range(-0.1..0.1);
                    let r = rng.gen_range(1.0..10.0);
                    Point::new(r * t.cos() + 500.0, r * t.sin() - 300.0)
                })
                .collect();
            let center = Point::new(500.0, -300.0);
            let fan: f64 = (0..12)
                .map(|i| {
                    let (a, b) = (pts[i] - center, pts[(i + 1) % 12] - center);
                    0.5 * a.cross(b).abs()
                })
                .sum();
            let r = Ring::new(pts).unwrap();
            assert!((polygon_area(&r).unwrap() - fan).abs() < 1e-9 * fan);
        }
    }

    #[test]
    fn centroid_cases() {
        let c = centroid(&unit_square()).unwrap();
        assert!((c.x - 0.5).abs() < 1e-12 && (c.y - 0.5).abs() < 1e-12);
        let d = Point::new(1234.5, -77.25);
        let ct = centroid(&unit_square().translated(d)).unwrap();
        assert!((ct.x - 1235.0).abs() < 1e-9 && (ct.y + 76.75).abs() < 1e-9);
    }

    #[test]
    fn centroid_of_l_shape_matches_rasterized_mass() {
        let l = ring(&[(0.0, 0.0), (30.0, 0.0), (30.0, 10.0), (10.0, 10.0), (10.0, 40.0), (0.0, 40.0)]);
        let c = centroid(&l).unwrap();
        let step = 0.05;
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        let mut y = step / 2.0;
        while y < 40.0 {
            let mut x = step / 2.0;
            while x < 30.0 {
                if point_in_ring(Point::new(x, y), &l) {
                    sx += x;
                    sy += y;
                    n += 1.0;
                }
                x += step;
            }
            y += step;
        }
        assert!((c.x - sx / n).abs() < 0.01 && (c.y - sy / n).abs() < 0.01);
    }

    #[test]
    fn rect_axis_aligned_and_rotated() {
        let r = Ring::rectangle(Point::new(0.0, 0.0), 20.0, 50.0).unwrap();
        let m = min_area_rect(&r).unwrap();
        assert!((m.length - 50.0).abs() < 1e-9 && (m.width - 20.0).abs() < 1e-9);
        assert!((m.aspect_ratio() - 2.5).abs() < 1e-9);
        assert!((m.angle - PI / 2.0).abs() < 1e-9);

        let rot = r.rotated(PI / 6.0, Point::new(3.0, 4.0));
        let mr = min_area_rect(&rot).unwrap();
        assert!((mr.length - 50.0).abs() < 1e-9 && (mr.width - 20.0).abs() < 1e-9);
        assert!((mr.angle - (PI / 2.0 + PI / 6.0)).abs() < 1e-9);
    }

    #[test]
    fn rect_contains_vertices() {
        let l = ring(&[(0.0, 0.0), (30.0, 0.0), (30.0, 10.0), (10.0, 10.0), (10.0, 40.0), (0.0, 40.0)]);
        let m = min_area_rect(&l).unwrap();
        let u = Point::new(m.angle.cos(), m.angle.sin());
        let n = Point::new(-u.y, u.x);
        for &p in l.vertices() {
            let d = p - m.center;
            assert!(d.dot(u).abs() <= m.length / 2.0 + 1e-6);
            assert!(d.dot(n).abs() <= m.width / 2.0 + 1e-6);
        }
        assert!(m.area() >= polygon_area(&l).unwrap());
    }

    #[test]
    fn road_distance_cases() {
        let roads = SegmentIndex::new(vec![Segment::new(Point::new(3.0, -10.0), Point::new(3.0, 10.0))], 250.0);
        let sq = ring(&[(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]);
        assert!((nearest_road_distance(&sq, &roads).unwrap() - 3.0).abs() < 1e-12);
        let on = SegmentIndex::new(vec![Segment::new(Point::new(-5.0, 0.0), Point::new(5.0, 0.0))], 250.0);
        assert_eq!(nearest_road_distance(&sq, &on).unwrap(), 0.0);
        let none = SegmentIndex::new(vec![], 250.0);
        assert!(matches!(nearest_road_distance(&sq, &none), Err(Error::NoRoads)));
    }

    #[test]
    fn road_distance_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for cell in [50.0, 250.0, 2000.0] {
            let segs: Vec<Segment> = (0..200)
                .map(|_| {
                    let a = Point::new(rng.gen_range(0.0..5000.0), rng.gen_range(0.0..5000.0));
                    let b = a + Point::new(rng.gen_range(-300.0..300.0), rng.gen_range(-300.0..300.0));
                    Segment::new(a, b)
                })
                .collect();
            let idx = SegmentIndex::new(segs.clone(), cell);
            for _ in 0..200 {
                let c = Point::new(rng.gen_range(-2000.0..7000.0), rng.gen_range(-2000.0..7000.0));
                let sq = Ring::rectangle(c - Point::new(5.0, 5.0), 10.0, 10.0).unwrap();
                let scan = segs.iter().map(|s| s.distance_to(c)).fold(f64::INFINITY, f64::min);
                let got = nearest_road_distance(&sq, &idx).unwrap();
                assert!((got - scan).abs() < 1e-9, "{got} vs {scan}");
            }
        }
    }

    #[test]
    fn pairwise_cases() {
        let sq = |x: f64| Ring::rectangle(Point::new(x - 1.0, -1.0), 2.0, 2.0).unwrap();
        let d = pairwise_centroid_distances(&[sq(0.0), sq(70.0), sq(30.0)]).unwrap();
        assert_eq!(d.len(), 3);
        for (got, want) in d.iter().zip([30.0, 40.0, 70.0]) {
            assert!((got - want).abs() < 1e-9);
        }
        assert_eq!(pairwise_centroid_distances(&[sq(0.0), sq(5.0)]).unwrap().len(), 1);
        assert!(matches!(
            pairwise_centroid_distances(&[sq(0.0)]),
            Err(Error::InsufficientBarns(1))
        ));
    }

    #[test]
    fn pairwise_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rings: Vec<Ring> = (0..10)
            .map(|_| {
                let c = Point::new(rng.gen_range(0.0..400.0), rng.gen_range(0.0..400.0));
                Ring::oriented_rectangle(c, rng.gen_range(20.0..80.0), rng.gen_range(8.0..20.0), rng.gen_range(0.0..PI))
                    .unwrap()
            })
            .collect();
        let cs: Vec<Point> = rings.iter().map(|r| centroid(r).unwrap()).collect();
        let mut oracle = vec![];
        for i in 0..10 {
            for j in 0..10 {
                if i < j {
                    oracle.push(cs[i].distance(cs[j]));
                }
            }
        }
        oracle.sort_by(f64::total_cmp);
        assert_eq!(pairwise_centroid_distances(&rings).unwrap(), oracle);
    }

    #[test]
    fn interiors_vs_contact() {
        let a = Ring::rectangle(Point::new(0.0, 0.0), 2.0, 2.0).unwrap();
        let shared_edge = Ring::rectangle(Point::new(2.0, 0.0), 2.0, 2.0).unwrap();
        let offset = Ring::rectangle(Point::new(1.0, 0.0), 2.0, 2.0).unwrap();
        let inner = Ring::rectangle(Point::new(0.5, 0.5), 1.0, 1.0).unwrap();
        let far = Ring::rectangle(Point::new(5.0, 5.0), 1.0, 1.0).unwrap();
        assert!(interiors_intersect(&a, &a.clone()));
        assert!(!interiors_intersect(&a, &shared_edge));
        assert!(rings_intersect(&a, &shared_edge));
        assert!(interiors_intersect(&a, &offset));
        assert!(interiors_intersect(&a, &inner) && interiors_intersect(&inner, &a));
        assert!(!interiors_intersect(&a, &far) && !rings_intersect(&a, &far));
        let corner = Ring::rectangle(Point::new(2.0, 2.0), 1.0, 1.0).unwrap();
        assert!(!interiors_intersect(&a, &corner) && rings_intersect(&a, &corner));
        let diamond = ring(&[(1.0, -0.5), (2.5, 1.0), (1.0, 2.5), (-0.5, 1.0)]);
        assert!(interiors_intersect(&a, &diamond));
    }

    #[test]
    fn polyline_contact() {
        let a = Ring::rectangle(Point::new(0.0, 0.0), 2.0, 2.0).unwrap();
        assert!(polyline_intersects_ring(&[Point::new(-1.0, 1.0), Point::new(3.0, 1.0)], &a));
        assert!(polyline_intersects_ring(&[Point::new(-1.0, 2.0), Point::new(0.0, 2.0)], &a));
        assert!(polyline_intersects_ring(&[Point::new(0.5, 0.5), Point::new(1.5, 0.5)], &a));
        assert!(!polyline_intersects_ring(&[Point::new(-1.0, 3.0), Point::new(3.0, 3.0)], &a));
    }

    #[test]
    fn index_query_superset_of_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let boxes: Vec<BBox> = (0..300)
            .map(|_| {
                let p = Point::new(rng.gen_range(-1000.0..1000.0), rng.gen_range(-1000.0..1000.0));
                BBox {
                    min: p,
                    max: p + Point::new(rng.gen_range(0.0..150.0), rng.gen_range(0.0..150.0)),
                }
            })
            .collect();
        let idx = SpatialIndex::from_boxes(100.0, boxes.iter().copied());
        for _ in 0..100 {
            let p = Point::new(rng.gen_range(-1200.0..1200.0), rng.gen_range(-1200.0..1200.0));
            let w = BBox {
                min: p,
                max: p + Point::new(rng.gen_range(0.0..400.0), rng.gen_range(0.0..400.0)),
            };
            let scan: Vec<usize> = (0..boxes.len()).filter(|&i| boxes[i].intersects(&w)).collect();
            assert_eq!(idx.query(&w), scan);
        }
    }
}
