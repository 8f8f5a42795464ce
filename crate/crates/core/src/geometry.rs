//! Parametric U-bend channel geometry.
//!
//! The baseline bend is centred on the origin with the turn in the upper
//! half-plane: the inlet leg runs upward along `x ∈ [-R_o, -R_i]`, the outlet
//! leg runs downward along `x ∈ [R_i, R_o]`, and both legs end at `y = -L`.
//! Each wall of the turn is two cubic Bézier segments approximating a
//! semicircle of radius `R_i = width / 2` (inner) or `R_o = R_i + width`
//! (outer). A bend variant displaces the five interior control points of each
//! wall by 2D offsets; the endpoints joining the straight legs stay fixed.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::ops::{Add, Mul, Neg, Sub};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default channel width at the legs, meters.
pub const DEFAULT_WIDTH: f64 = 0.075;

/// Number of displaceable control points per wall.
pub const OFFSETS_PER_WALL: usize = 5;

/// Polyline vertices generated per cubic Bézier segment.
pub const SAMPLES_PER_SEGMENT: usize = 64;

/// Attempts `sample_params` makes before reporting inconsistent bounds.
pub const MAX_SAMPLING_ATTEMPTS: usize = 1000;

/// Control-point distance for a quarter circle of unit radius.
pub const QUARTER_ARC_KAPPA: f64 = 0.552_284_749_830_793_4;

/// Smallest admissible inner-to-outer wall distance, as a fraction of width.
pub const MIN_GAP_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn lerp(self, other: Point2, t: f64) -> Point2 {
        self + (other - self) * t
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub min: Point2,
    pub max: Point2,
}

impl Rect {
    pub fn new(min: Point2, max: Point2) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Point2 {
        self.min.lerp(self.max, 0.5)
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Whether the closed segment `a`-`b` touches this rectangle.
    pub fn intersects_segment(&self, a: Point2, b: Point2) -> bool {
        // Liang-Barsky clipping
        let d = b - a;
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        for (p, q) in [
            (-d.x, a.x - self.min.x),
            (d.x, self.max.x - a.x),
            (-d.y, a.y - self.min.y),
            (d.y, self.max.y - a.y),
        ] {
            if p == 0.0 {
                if q < 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

/// Evaluates a cubic Bézier curve with de Casteljau's algorithm.
pub fn cubic_bezier(ctrl: &[Point2; 4], t: f64) -> Point2 {
    let a = ctrl[0].lerp(ctrl[1], t);
    let b = ctrl[1].lerp(ctrl[2], t);
    let c = ctrl[2].lerp(ctrl[3], t);
    let d = a.lerp(b, t);
    let e = b.lerp(c, t);
    d.lerp(e, t)
}

/// Distance from `p` to the closed segment `a`-`b`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    fn orient(p: Point2, q: Point2, r: Point2) -> f64 {
        (q - p).cross(r - p)
    }
    fn on_segment(p: Point2, q: Point2, r: Point2) -> bool {
        r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    }
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Which part of the turn envelope a variant may occupy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegionPolicy {
    /// The restricted rectangle must stay solid (training and validation).
    Restricted,
    /// Anything admissible (test).
    Unrestricted,
}

/// Bounds of the distortion family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistortionBounds {
    /// Channel width at the legs, meters.
    pub width: f64,
    /// Straight leg length up- and downstream of the turn, meters.
    pub leg_length: f64,
    /// Largest control-point displacement, meters.
    pub max_distortion: f64,
}

impl Default for DistortionBounds {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            leg_length: 4.0 * DEFAULT_WIDTH,
            max_distortion: 0.5 * DEFAULT_WIDTH,
        }
    }
}

impl DistortionBounds {
    pub fn zero() -> Self {
        Self { max_distortion: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) {
            return Err(Error::InvalidParams(format!("width must be positive, got {}", self.width)));
        }
        if !(self.leg_length >= 4.0 * self.width) {
            return Err(Error::InvalidParams(format!(
                "leg length {} is shorter than four widths",
                self.leg_length
            )));
        }
        if !(self.max_distortion >= 0.0 && self.max_distortion <= 0.5 * self.width) {
            return Err(Error::InvalidParams(format!(
                "max distortion {} outside [0, width/2]",
                self.max_distortion
            )));
        }
        Ok(())
    }

    pub fn inner_radius(&self) -> f64 {
        0.5 * self.width
    }

    pub fn outer_radius(&self) -> f64 {
        1.5 * self.width
    }

    /// Box containing every admissible boundary of this family.
    pub fn envelope(&self) -> Rect {
        let reach = self.outer_radius() + self.max_distortion;
        Rect::new(Point2::new(-reach, -self.leg_length), Point2::new(reach, reach))
    }

    /// Upper-left corner of the turn envelope that training geometries may
    /// not enter. The baseline bend stays clear of it.
    pub fn restricted_rect(&self) -> Rect {
        let r = self.outer_radius();
        Rect::new(Point2::new(-2.0 * r, 0.75 * r), Point2::new(-0.75 * r, 2.0 * r))
    }
}

/// Distortion parameters of one U-bend variant.
#[derive(Clone, Debug, PartialEq)]
pub struct BendParams {
    pub inner_offsets: [Point2; OFFSETS_PER_WALL],
    pub outer_offsets: [Point2; OFFSETS_PER_WALL],
    pub width: f64,
    pub leg_length: f64,
    pub seed: u64,
}

impl BendParams {
    /// The conventional, undistorted bend.
    pub fn conventional(width: f64, leg_length: f64) -> Self {
        Self {
            inner_offsets: [Point2::ZERO; OFFSETS_PER_WALL],
            outer_offsets: [Point2::ZERO; OFFSETS_PER_WALL],
            width,
            leg_length,
            seed: 0,
        }
    }

    pub fn max_offset(&self) -> f64 {
        self.inner_offsets
            .iter()
            .chain(&self.outer_offsets)
            .map(|o| o.norm())
            .fold(0.0, f64::max)
    }
}

fn sample_disk(rng: &mut ChaCha8Rng, radius: f64) -> Point2 {
    if radius == 0.0 {
        return Point2::ZERO;
    }
    loop {
        let p = Point2::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
        if p.dot(p) <= 1.0 {
            return p * radius;
        }
    }
}

/// Draws a bend variant with every offset uniform in the disk of radius
/// `bounds.max_distortion`, redrawing inadmissible shapes.
pub fn sample_params(seed: u64, policy: RegionPolicy, bounds: &DistortionBounds) -> Result<BendParams> {
    bounds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let restricted = bounds.restricted_rect();
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let mut params = BendParams::conventional(bounds.width, bounds.leg_length);
        params.seed = seed;
        for o in params.inner_offsets.iter_mut().chain(params.outer_offsets.iter_mut()) {
            *o = sample_disk(&mut rng, bounds.max_distortion);
        }
        let Ok(boundary) = build_boundary(&params) else {
            continue;
        };
        if policy == RegionPolicy::Restricted && boundary.intersects_rect(&restricted) {
            continue;
        }
        return Ok(params);
    }
    Err(Error::SamplingExhausted { seed, attempts: MAX_SAMPLING_ATTEMPTS })
}

/// Control points of the two Bézier segments of one wall, left to right.
fn wall_controls(radius: f64, offsets: &[Point2; OFFSETS_PER_WALL]) -> [[Point2; 4]; 2] {
    let k = QUARTER_ARC_KAPPA * radius;
    let left = [
        Point2::new(-radius, 0.0),
        Point2::new(-radius, k) + offsets[0],
        Point2::new(-k, radius) + offsets[1],
        Point2::new(0.0, radius) + offsets[2],
    ];
    let right = [
        left[3],
        Point2::new(k, radius) + offsets[3],
        Point2::new(radius, k) + offsets[4],
        Point2::new(radius, 0.0),
    ];
    [left, right]
}

/// Samples one wall right to left (`reverse`) or left to right, excluding the
/// final endpoint.
fn wall_polyline(controls: &[[Point2; 4]; 2], reverse: bool, out: &mut Vec<Point2>) {
    let m = SAMPLES_PER_SEGMENT;
    if reverse {
        for seg in controls.iter().rev() {
            for s in 0..m {
                out.push(cubic_bezier(seg, (m - s) as f64 / m as f64));
            }
        }
    } else {
        for seg in controls {
            for s in 0..m {
                out.push(cubic_bezier(seg, s as f64 / m as f64));
            }
        }
    }
}

/// Closed, counter-clockwise polygon bounding the fluid domain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelBoundary {
    /// Vertices in order; edge `k` joins vertex `k` to vertex `k + 1 (mod len)`.
    pub outer_loop: Vec<Point2>,
    /// Edge indices forming the inlet face.
    pub inlet_segment: Range<usize>,
    /// Edge indices forming the outlet face.
    pub outlet_segment: Range<usize>,
    pub bounding_box: Rect,
    /// Vertex ranges of the inner and outer walls (gap diagnostics).
    inner_wall: Range<usize>,
    outer_wall: Range<usize>,
}

/// Builds the boundary polygon of a bend variant.
pub fn build_boundary(params: &BendParams) -> Result<ChannelBoundary> {
    if !(params.width > 0.0) {
        return Err(Error::InvalidParams("width must be positive".into()));
    }
    if !(params.leg_length >= 4.0 * params.width) {
        return Err(Error::InvalidParams("leg length must be at least four widths".into()));
    }
    let ri = 0.5 * params.width;
    let ro = ri + params.width;
    let l = params.leg_length;
    let inner = wall_controls(ri, &params.inner_offsets);
    let outer = wall_controls(ro, &params.outer_offsets);

    let mut pts = Vec::with_capacity(4 * SAMPLES_PER_SEGMENT + 8);
    // right outer leg, bottom to top
    pts.push(Point2::new(ro, -l));
    let outer_start = pts.len();
    wall_polyline(&outer, true, &mut pts);
    pts.push(Point2::new(-ro, 0.0));
    let outer_end = pts.len();
    pts.push(Point2::new(-ro, -l));
    let inlet = pts.len() - 1;
    pts.push(Point2::new(-ri, -l));
    let inner_start = pts.len();
    wall_polyline(&inner, false, &mut pts);
    pts.push(Point2::new(ri, 0.0));
    let inner_end = pts.len();
    pts.push(Point2::new(ri, -l));
    let outlet = pts.len() - 1;

    let boundary = ChannelBoundary::from_loop(pts, inlet..inlet + 1, outlet..outlet + 1)?;
    let boundary = ChannelBoundary {
        inner_wall: inner_start - 1..inner_end + 1,
        outer_wall: outer_start - 1..outer_end + 1,
        ..boundary
    };
    let gap = boundary.wall_gap();
    if gap < MIN_GAP_FRACTION * params.width {
        return Err(Error::InvalidGeometry(format!("wall gap {gap:.4e} m below minimum")));
    }
    Ok(boundary)
}

impl ChannelBoundary {
    /// Wraps a polygon after checking it is closed, simple and
    /// counter-clockwise with straight axis-aligned inlet and outlet faces.
    pub fn from_loop(
        outer_loop: Vec<Point2>,
        inlet_segment: Range<usize>,
        outlet_segment: Range<usize>,
    ) -> Result<Self> {
        let n = outer_loop.len();
        if n < 3 {
            return Err(Error::InvalidGeometry("loop needs at least three vertices".into()));
        }
        if outer_loop.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite vertex".into()));
        }
        for (name, r) in [("inlet", &inlet_segment), ("outlet", &outlet_segment)] {
            if r.is_empty() || r.end > n {
                return Err(Error::InvalidGeometry(format!("{name} range out of bounds")));
            }
            let a = outer_loop[r.start];
            let b = outer_loop[r.end % n];
            if a.x != b.x && a.y != b.y {
                return Err(Error::InvalidGeometry(format!("{name} is not axis-aligned")));
            }
            for k in r.clone() {
                let p = outer_loop[k];
                if (b - a).cross(p - a).abs() > 1e-12 * (b - a).norm().max(1.0) {
                    return Err(Error::InvalidGeometry(format!("{name} is not straight")));
                }
            }
        }
        if inlet_segment.start < outlet_segment.end && outlet_segment.start < inlet_segment.end {
            return Err(Error::InvalidGeometry("inlet and outlet overlap".into()));
        }
        let area2: f64 = (0..n).map(|k| outer_loop[k].cross(outer_loop[(k + 1) % n])).sum();
        if area2 <= 0.0 {
            return Err(Error::InvalidGeometry("loop is not counter-clockwise".into()));
        }
        let mut min = outer_loop[0];
        let mut max = outer_loop[0];
        for p in &outer_loop {
            min = Point2::new(min.x.min(p.x), min.y.min(p.y));
            max = Point2::new(max.x.max(p.x), max.y.max(p.y));
        }
        let boundary = Self {
            inner_wall: 0..0,
            outer_wall: 0..0,
            bounding_box: Rect::new(min, max),
            outer_loop,
            inlet_segment,
            outlet_segment,
        };
        if let Some((i, j)) = boundary.first_self_intersection() {
            return Err(Error::InvalidGeometry(format!("edges {i} and {j} intersect")));
        }
        Ok(boundary)
    }

    /// Straight channel of `width` along +x from `x = 0` to `x = length`,
    /// inlet on the left and outlet on the right.
    pub fn straight(width: f64, length: f64) -> Result<Self> {
        let pts = vec![
            Point2::new(0.0, 0.0),
            Point2::new(length, 0.0),
            Point2::new(length, width),
            Point2::new(0.0, width),
        ];
        Self::from_loop(pts, 3..4, 1..2)
    }

    pub fn edge_count(&self) -> usize {
        self.outer_loop.len()
    }

    pub fn edge(&self, k: usize) -> (Point2, Point2) {
        let n = self.outer_loop.len();
        (self.outer_loop[k % n], self.outer_loop[(k + 1) % n])
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        (0..self.edge_count()).map(move |k| self.edge(k))
    }

    fn first_self_intersection(&self) -> Option<(usize, usize)> {
        let n = self.edge_count();
        for i in 0..n {
            let (a, b) = self.edge(i);
            for j in i + 1..n {
                // neighbouring edges share a vertex
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (c, d) = self.edge(j);
                if segments_intersect(a, b, c, d) {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Whether the polygon is simple (no two non-adjacent edges touch).
    pub fn is_simple(&self) -> bool {
        self.first_self_intersection().is_none()
    }

    /// Minimum distance between the inner and outer walls.
    pub fn wall_gap(&self) -> f64 {
        if self.inner_wall.is_empty() || self.outer_wall.is_empty() {
            return f64::INFINITY;
        }
        let inner = &self.outer_loop[self.inner_wall.clone()];
        let outer = &self.outer_loop[self.outer_wall.clone()];
        let one_way = |from: &[Point2], to: &[Point2]| {
            from.iter()
                .flat_map(|&p| to.windows(2).map(move |w| point_segment_distance(p, w[0], w[1])))
                .fold(f64::INFINITY, f64::min)
        };
        one_way(inner, outer).min(one_way(outer, inner))
    }

    /// Distance from `p` to the nearest boundary edge.
    pub fn distance_to_boundary(&self, p: Point2) -> f64 {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether the fluid domain and `rect` share any point.
    pub fn intersects_rect(&self, rect: &Rect) -> bool {
        self.edges().any(|(a, b)| rect.intersects_segment(a, b))
            || point_in_domain(self, rect.center())
            || rect.contains(self.outer_loop[0])
    }

    /// Writes the loop as `x,y` lines with nine significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut line = String::new();
        for p in &self.outer_loop {
            line.clear();
            let _ = writeln!(line, "{:.8e},{:.8e}", p.x, p.y);
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

/// Even-odd membership test. Points on the polyline count as inside.
pub fn point_in_domain(boundary: &ChannelBoundary, p: Point2) -> bool {
    let bb = &boundary.bounding_box;
    if !bb.contains(p) {
        return false;
    }
    let scale = bb.width().max(bb.height());
    let mut inside = false;
    for (a, b) in boundary.edges() {
        if point_segment_distance(p, a, b) <= 1e-12 * scale {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bernstein(ctrl: &[Point2; 4], t: f64) -> Point2 {
        let s = 1.0 - t;
        ctrl[0] * (s * s * s) + ctrl[1] * (3.0 * s * s * t) + ctrl[2] * (3.0 * s * t * t) + ctrl[3] * (t * t * t)
    }

    #[test]
    fn de_casteljau_midpoint() {
        let c = [Point2::new(0.0, 0.0), Point2::new(0.0, 1.0), Point2::new(1.0, 1.0), Point2::new(1.0, 0.0)];
        let p = cubic_bezier(&c, 0.5);
        let q = bernstein(&c, 0.5);
        assert!((p.x - 0.5).abs() < 1e-15 && (p.y - 0.75).abs() < 1e-15);
        assert!(p.distance(q) < 1e-15);
        assert_eq!(cubic_bezier(&c, 0.0), c[0]);
        assert_eq!(cubic_bezier(&c, 1.0), c[3]);
    }

    #[test]
    fn zero_bounds_give_conventional_shape() {
        let p = sample_params(3, RegionPolicy::Restricted, &DistortionBounds::zero()).unwrap();
        assert_eq!(p.max_offset(), 0.0);
        assert_eq!(p, BendParams { seed: 3, ..BendParams::conventional(DEFAULT_WIDTH, 4.0 * DEFAULT_WIDTH) });
    }

    #[test]
    fn sampling_is_deterministic() {
        let b = DistortionBounds::default();
        let a = sample_params(42, RegionPolicy::Unrestricted, &b).unwrap();
        let c = sample_params(42, RegionPolicy::Unrestricted, &b).unwrap();
        assert_eq!(a, c);
        assert_eq!(build_boundary(&a).unwrap(), build_boundary(&c).unwrap());
        assert!(a.max_offset() <= b.max_distortion);
    }

    #[test]
    fn conventional_turn_is_nearly_circular() {
        let params = BendParams::conventional(DEFAULT_WIDTH, 0.3);
        let b = build_boundary(&params).unwrap();
        let (ri, ro) = (0.5 * DEFAULT_WIDTH, 1.5 * DEFAULT_WIDTH);
        let mut worst: f64 = 0.0;
        for p in b.outer_loop.iter().filter(|p| p.y > 0.0) {
            let r = p.norm();
            let rel = ((r - ri) / ri).abs().min(((r - ro) / ro).abs());
            worst = worst.max(rel);
        }
        assert!(worst <= 0.003, "radial deviation {worst}");
    }

    #[test]
    fn conventional_is_mirror_symmetric() {
        let b = build_boundary(&BendParams::conventional(DEFAULT_WIDTH, 0.3)).unwrap();
        for p in &b.outer_loop {
            let m = Point2::new(-p.x, p.y);
            let d = b.outer_loop.iter().map(|q| q.distance(m)).fold(f64::INFINITY, f64::min);
            assert!(d <= 1e-9, "vertex {p:?} has no mirror image ({d})");
        }
    }

    #[test]
    fn loop_has_expected_structure() {
        let b = build_boundary(&BendParams::conventional(DEFAULT_WIDTH, 0.3)).unwrap();
        assert!(b.outer_loop.len() >= 4 * SAMPLES_PER_SEGMENT);
        let (a, c) = b.edge(b.inlet_segment.start);
        assert_eq!((a.y, c.y), (-0.3, -0.3));
        assert!(a.x < c.x && c.x < 0.0);
        let (a, c) = b.edge(b.outlet_segment.start);
        assert!(a.x > 0.0 && a.y == c.y);
        assert!((b.wall_gap() - DEFAULT_WIDTH).abs() < 1e-3 * DEFAULT_WIDTH);
    }

    #[test]
    fn membership_basics() {
        let b = build_boundary(&BendParams::conventional(DEFAULT_WIDTH, 0.3)).unwrap();
        assert!(!point_in_domain(&b, Point2::new(5.0, 5.0)));
        // centroid of the inlet leg
        assert!(point_in_domain(&b, Point2::new(-DEFAULT_WIDTH, -0.15)));
        // divider between the legs
        assert!(!point_in_domain(&b, Point2::new(0.0, -0.15)));
        // on-boundary point counts as inside
        assert!(point_in_domain(&b, Point2::new(-1.5 * DEFAULT_WIDTH, -0.1)));
    }

    #[test]
    fn crossing_walls_are_rejected() {
        let mut p = BendParams::conventional(DEFAULT_WIDTH, 0.3);
        p.inner_offsets[2] = Point2::new(0.0, 0.07);
        assert!(matches!(build_boundary(&p), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn short_legs_are_rejected() {
        let p = BendParams::conventional(DEFAULT_WIDTH, 0.1);
        assert!(matches!(build_boundary(&p), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn inconsistent_bounds_are_rejected() {
        let bad = DistortionBounds { max_distortion: DEFAULT_WIDTH, ..Default::default() };
        assert!(sample_params(1, RegionPolicy::Restricted, &bad).is_err());
    }

    #[test]
    fn restricted_rect_clears_baseline() {
        let bounds = DistortionBounds::default();
        let b = build_boundary(&BendParams::conventional(bounds.width, bounds.leg_length)).unwrap();
        assert!(!b.intersects_rect(&bounds.restricted_rect()));
    }

    #[test]
    fn csv_has_one_line_per_vertex() {
        let b = ChannelBoundary::straight(1.0, 4.0).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().nth(1).unwrap(), "4.00000000e0,0.00000000e0");
    }

    #[test]
    fn clockwise_loop_is_rejected() {
        let pts = vec![Point2::new(0.0, 0.0), Point2::new(0.0, 1.0), Point2::new(1.0, 1.0), Point2::new(1.0, 0.0)];
        assert!(ChannelBoundary::from_loop(pts, 0..1, 2..3).is_err());
    }
}
