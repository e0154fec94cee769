//! Seabed footprint projection and planar polygon operations.
//!
//! All coordinates are in a single projected CRS, in meters: `x` is easting,
//! `y` is northing. The world frame used for ray casting is east/north/down.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("camera-to-seabed distance must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("corner ray {corner} does not reach the seabed (downward component {down:.6})")]
    RayAboveHorizon { corner: usize, down: f64 },
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(&'static str),
    #[error("invalid attitude: {0}")]
    InvalidAttitude(String),
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned rectangle; closed on all sides for clipping, half-open for
/// point membership (see [`Rect::contains_half_open`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub const fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> Point2 {
        Point2::new(
            0.5 * (self.min_x + self.max_x),
            0.5 * (self.min_y + self.max_y),
        )
    }

    /// `[min_x, max_x) x [min_y, max_y)`, so a point on a shared edge belongs
    /// to exactly one of two adjacent rectangles.
    pub fn contains_half_open(&self, p: Point2) -> bool {
        p.x >= self.min_x && p.x < self.max_x && p.y >= self.min_y && p.y < self.max_y
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.min_x <= other.max_x
            && other.min_x <= self.max_x
            && self.min_y <= other.max_y
            && other.min_y <= self.max_y
    }

    /// Counter-clockwise corner ring starting at the south-west corner.
    pub fn corners(&self) -> [Point2; 4] {
        [
            Point2::new(self.min_x, self.min_y),
            Point2::new(self.max_x, self.min_y),
            Point2::new(self.max_x, self.max_y),
            Point2::new(self.min_x, self.max_y),
        ]
    }
}

/// Camera attitude in degrees.
///
/// `roll` tilts the boresight toward the camera's right, `pitch` toward its
/// forward axis, and `yaw` is the heading of the forward axis measured
/// clockwise from north.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Attitude {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Attitude {
    /// Validates roll and pitch and normalizes yaw into `[0, 360)`.
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Result<Self, GeometryError> {
        for (name, v) in [("roll", roll), ("pitch", pitch)] {
            if !(v > -90.0 && v < 90.0) {
                return Err(GeometryError::InvalidAttitude(format!(
                    "{name} must lie in (-90, 90) degrees, got {v}"
                )));
            }
        }
        if !yaw.is_finite() {
            return Err(GeometryError::InvalidAttitude(format!(
                "yaw must be finite, got {yaw}"
            )));
        }
        Ok(Self {
            roll,
            pitch,
            yaw: normalize_degrees(yaw),
        })
    }

    pub const fn level() -> Self {
        Self {
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
        }
    }
}

/// Wraps an angle into `[0, 360)`.
pub fn normalize_degrees(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Horizontal field of view in degrees, spanning the camera's right axis.
    pub fov_h: f64,
    /// Vertical field of view in degrees, spanning the camera's forward axis.
    pub fov_v: f64,
}

impl CameraModel {
    pub fn new(fov_h: f64, fov_v: f64) -> Result<Self, GeometryError> {
        for (name, v) in [("fov_h", fov_h), ("fov_v", fov_v)] {
            if !(v > 0.0 && v < 180.0) {
                return Err(GeometryError::InvalidCamera(format!(
                    "{name} must lie in (0, 180) degrees, got {v}"
                )));
            }
        }
        Ok(Self { fov_h, fov_v })
    }
}

/// Seabed quadrilateral imaged by one photo, counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub image_id: String,
    pub corners: [Point2; 4],
}

impl Footprint {
    pub fn area(&self) -> Result<f64, GeometryError> {
        polygon_area(&self.corners)
    }

    pub fn bounding_rect(&self) -> Rect {
        bounding_rect(&self.corners)
    }

    /// Closed point-in-convex-polygon test.
    pub fn contains(&self, p: Point2) -> bool {
        convex_contains(&self.corners, p)
    }
}

/// One underwater image: navigation metadata plus teacher probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub timestamp_utc: f64,
    pub camera_position: Point2,
    pub depth: f64,
    pub attitude: Attitude,
    #[serde(default)]
    pub teacher_probs: std::collections::BTreeMap<String, f64>,
}

impl ImageRecord {
    pub fn footprint(&self, cam: &CameraModel) -> Result<Footprint, GeometryError> {
        let mut fp = project_footprint(self.camera_position, self.depth, &self.attitude, cam)?;
        fp.image_id.clone_from(&self.image_id);
        Ok(fp)
    }
}

type Vec3 = [f64; 3];

/// Rotates a camera-frame direction (right, forward, down) into the world
/// frame (east, north, down): roll first, then pitch, then yaw.
fn camera_to_world(v: Vec3, att: &Attitude) -> Vec3 {
    let (sr, cr) = att.roll.to_radians().sin_cos();
    let (sp, cp) = att.pitch.to_radians().sin_cos();
    let (sy, cy) = att.yaw.to_radians().sin_cos();

    // roll: about the forward axis, boresight leans toward +right
    let [x, y, z] = v;
    let (x, z) = (x * cr + z * sr, -x * sr + z * cr);
    // pitch: about the right axis, boresight leans toward +forward
    let (y, z) = (y * cp + z * sp, -y * sp + z * cp);
    // yaw: heading clockwise from north
    let (x, y) = (x * cy + y * sy, -x * sy + y * cy);
    [x, y, z]
}

/// Casts the four field-of-view corner rays onto a flat seabed `depth` meters
/// below the camera.
///
/// With level attitude the result is the axis-aligned rectangle with
/// half-extents `depth * tan(fov_h / 2)` east-west and `depth * tan(fov_v / 2)`
/// north-south. The returned footprint has an empty `image_id`.
pub fn project_footprint(
    pos: Point2,
    depth: f64,
    att: &Attitude,
    cam: &CameraModel,
) -> Result<Footprint, GeometryError> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    let th = (cam.fov_h.to_radians() * 0.5).tan();
    let tv = (cam.fov_v.to_radians() * 0.5).tan();
    // front-right, front-left, back-left, back-right: counter-clockwise seen from above
    let rays: [Vec3; 4] = [[th, tv, 1.0], [-th, tv, 1.0], [-th, -tv, 1.0], [th, -tv, 1.0]];

    let mut corners = [Point2::default(); 4];
    for (i, ray) in rays.into_iter().enumerate() {
        let d = camera_to_world(ray, att);
        if d[2] <= 1e-12 {
            return Err(GeometryError::RayAboveHorizon {
                corner: i,
                down: d[2],
            });
        }
        let t = depth / d[2];
        corners[i] = Point2::new(pos.x + t * d[0], pos.y + t * d[1]);
    }
    Ok(Footprint {
        image_id: String::new(),
        corners,
    })
}

/// Signed shoelace area; positive for counter-clockwise rings.
pub fn signed_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

/// Shoelace area of a simple polygon, orientation-independent.
pub fn polygon_area(poly: &[Point2]) -> Result<f64, GeometryError> {
    if poly.len() < 3 {
        return Err(GeometryError::DegeneratePolygon("fewer than 3 vertices"));
    }
    let area = signed_area(poly).abs();
    if !(area > 0.0) {
        return Err(GeometryError::DegeneratePolygon("zero area"));
    }
    Ok(area)
}

pub fn bounding_rect(poly: &[Point2]) -> Rect {
    poly.iter().fold(
        Rect::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |r, p| Rect::new(r.min_x.min(p.x), r.min_y.min(p.y), r.max_x.max(p.x), r.max_y.max(p.y)),
    )
}

/// Closed containment test for a counter-clockwise convex ring.
pub fn convex_contains(poly: &[Point2], p: Point2) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    (0..n).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) >= 0.0
    })
}

#[derive(Clone, Copy)]
enum Edge {
    Left(f64),
    Right(f64),
    Bottom(f64),
    Top(f64),
}

impl Edge {
    fn inside(self, p: Point2) -> bool {
        match self {
            Edge::Left(x) => p.x >= x,
            Edge::Right(x) => p.x <= x,
            Edge::Bottom(y) => p.y >= y,
            Edge::Top(y) => p.y <= y,
        }
    }

    fn crossing(self, a: Point2, b: Point2) -> Point2 {
        match self {
            Edge::Left(x) | Edge::Right(x) => {
                let t = (x - a.x) / (b.x - a.x);
                Point2::new(x, a.y + t * (b.y - a.y))
            }
            Edge::Bottom(y) | Edge::Top(y) => {
                let t = (y - a.y) / (b.y - a.y);
                Point2::new(a.x + t * (b.x - a.x), y)
            }
        }
    }
}

/// Intersection of a convex polygon with an axis-aligned rectangle by
/// successive half-plane clipping. Returns an empty vector when the overlap
/// has no area.
pub fn clip_convex_to_rect(poly: &[Point2], rect: &Rect) -> Vec<Point2> {
    let mut out: Vec<Point2> = poly.to_vec();
    for edge in [
        Edge::Left(rect.min_x),
        Edge::Right(rect.max_x),
        Edge::Bottom(rect.min_y),
        Edge::Top(rect.max_y),
    ] {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let next = input[(i + 1) % n];
            match (edge.inside(cur), edge.inside(next)) {
                (true, true) => out.push(next),
                (true, false) => out.push(edge.crossing(cur, next)),
                (false, true) => {
                    out.push(edge.crossing(cur, next));
                    out.push(next);
                }
                (false, false) => {}
            }
        }
    }
    out.dedup();
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    if out.len() < 3 || signed_area(&out).abs() == 0.0 {
        return Vec::new();
    }
    out
}

pub fn clip_footprint_to_tile(fp: &Footprint, tile_bounds: &Rect) -> Vec<Point2> {
    clip_convex_to_rect(&fp.corners, tile_bounds)
}

/// Fraction of the footprint area that falls inside the tile, `s(x ∩ t) / s(x)`.
pub fn overlap_ratio(fp: &Footprint, tile_bounds: &Rect) -> Result<f64, GeometryError> {
    let total = fp.area()?;
    let clipped = clip_footprint_to_tile(fp, tile_bounds);
    if clipped.is_empty() {
        return Ok(0.0);
    }
    Ok((signed_area(&clipped).abs() / total).clamp(0.0, 1.0))
}

/// Smallest lattice resolution accepted by [`coverage_fraction`].
pub const MIN_COVERAGE_GRID: usize = 8;

/// Fraction of an `grid_n x grid_n` lattice of cell centers inside the tile
/// that lies in at least one footprint. `grid_n` below
/// [`MIN_COVERAGE_GRID`] is raised to it.
pub fn coverage_fraction(fps: &[&Footprint], tile_bounds: &Rect, grid_n: usize) -> f64 {
    if fps.is_empty() {
        return 0.0;
    }
    let n = grid_n.max(MIN_COVERAGE_GRID);
    let candidates: Vec<&Footprint> = fps
        .iter()
        .copied()
        .filter(|fp| fp.bounding_rect().intersects(tile_bounds))
        .collect();
    if candidates.is_empty() {
        return 0.0;
    }
    let dx = tile_bounds.width() / n as f64;
    let dy = tile_bounds.height() / n as f64;
    let mut covered = 0usize;
    for j in 0..n {
        let y = tile_bounds.min_y + (j as f64 + 0.5) * dy;
        for i in 0..n {
            let p = Point2::new(tile_bounds.min_x + (i as f64 + 0.5) * dx, y);
            if candidates.iter().any(|fp| fp.contains(p)) {
                covered += 1;
            }
        }
    }
    covered as f64 / (n * n) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cam(h: f64, v: f64) -> CameraModel {
        CameraModel::new(h, v).unwrap()
    }

    fn rect_fp(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Footprint {
        Footprint {
            image_id: "r".into(),
            corners: Rect::new(min_x, min_y, max_x, max_y).corners(),
        }
    }

    #[test]
    fn level_footprint_is_closed_form_rectangle() {
        let fp = project_footprint(Point2::new(0.0, 0.0), 2.0, &Attitude::level(), &cam(90.0, 60.0))
            .unwrap();
        let hv = 2.0 * 30f64.to_radians().tan();
        let expected = [(2.0, hv), (-2.0, hv), (-2.0, -hv), (2.0, -hv)];
        for (c, (ex, ey)) in fp.corners.iter().zip(expected) {
            assert!((c.x - ex).abs() < 1e-9 && (c.y - ey).abs() < 1e-9, "{c:?}");
        }
        assert!((hv - 1.154_70).abs() < 1e-5);
        assert_relative_eq!(fp.area().unwrap(), 9.237_604_307_034, max_relative = 1e-12);
    }

    #[test]
    fn yaw_rotates_without_changing_area() {
        let base = project_footprint(Point2::default(), 2.0, &Attitude::level(), &cam(90.0, 60.0))
            .unwrap();
        let yawed = project_footprint(
            Point2::default(),
            2.0,
            &Attitude::new(0.0, 0.0, 90.0).unwrap(),
            &cam(90.0, 60.0),
        )
        .unwrap();
        assert_relative_eq!(base.area().unwrap(), yawed.area().unwrap(), max_relative = 1e-12);
        // facing east, the wide axis now runs north-south
        let r = yawed.bounding_rect();
        assert_relative_eq!(r.height(), 4.0, epsilon = 1e-9);
    }

    #[test]
    fn pitch_shifts_footprint_forward() {
        let fp = project_footprint(
            Point2::default(),
            2.0,
            &Attitude::new(0.0, 30.0, 0.0).unwrap(),
            &cam(90.0, 60.0),
        )
        .unwrap();
        let r = fp.bounding_rect();
        assert!(r.min_y.abs() < 1e-9, "near edge {}", r.min_y);
        assert_relative_eq!(r.max_y, 3.464_101_615_137_754, epsilon = 1e-9);
    }

    #[test]
    fn steep_pitch_is_rejected() {
        let err = project_footprint(
            Point2::default(),
            2.0,
            &Attitude::new(0.0, 80.0, 0.0).unwrap(),
            &cam(90.0, 60.0),
        )
        .unwrap_err();
        assert!(matches!(err, GeometryError::RayAboveHorizon { .. }));
    }

    #[test]
    fn non_positive_depth_is_rejected() {
        let err = project_footprint(Point2::default(), 0.0, &Attitude::level(), &cam(90.0, 60.0))
            .unwrap_err();
        assert_eq!(err, GeometryError::NonPositiveDepth(0.0));
    }

    #[test]
    fn attitude_and_camera_validation() {
        assert!(Attitude::new(90.0, 0.0, 0.0).is_err());
        assert!(Attitude::new(0.0, -90.0, 0.0).is_err());
        assert_eq!(Attitude::new(0.0, 0.0, -90.0).unwrap().yaw, 270.0);
        assert_eq!(Attitude::new(0.0, 0.0, 720.0).unwrap().yaw, 0.0);
        assert!(CameraModel::new(0.0, 10.0).is_err());
        assert!(CameraModel::new(10.0, 180.0).is_err());
    }

    #[test]
    fn shoelace_basics() {
        let sq = Rect::new(0.0, 0.0, 1.0, 1.0).corners();
        assert_eq!(polygon_area(&sq).unwrap(), 1.0);
        let tri = [Point2::new(0.0, 0.0), Point2::new(2.0, 0.0), Point2::new(0.0, 2.0)];
        assert_eq!(polygon_area(&tri).unwrap(), 2.0);
        assert!(polygon_area(&tri[..2]).is_err());
        let line = [Point2::new(0.0, 0.0), Point2::new(1.0, 1.0), Point2::new(2.0, 2.0)];
        assert!(matches!(polygon_area(&line), Err(GeometryError::DegeneratePolygon(_))));
    }

    #[test]
    fn clip_identity_corner_and_disjoint() {
        let tile = Rect::new(0.0, 0.0, 1.5, 1.5);
        let same = clip_footprint_to_tile(&rect_fp(0.0, 0.0, 1.5, 1.5), &tile);
        assert_eq!(polygon_area(&same).unwrap(), tile.area());

        let corner = clip_footprint_to_tile(&rect_fp(-0.5, -0.5, 0.5, 0.5), &tile);
        assert_relative_eq!(polygon_area(&corner).unwrap(), 0.25, max_relative = 1e-12);

        assert!(clip_footprint_to_tile(&rect_fp(5.0, 5.0, 6.0, 6.0), &tile).is_empty());
        // edge contact only has no area
        assert!(clip_footprint_to_tile(&rect_fp(1.5, 0.0, 2.5, 1.0), &tile).is_empty());
    }

    #[test]
    fn overlap_ratio_cases() {
        let tile = Rect::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(overlap_ratio(&rect_fp(0.5, 0.5, 1.0, 1.0), &tile).unwrap(), 1.0);
        assert_relative_eq!(
            overlap_ratio(&rect_fp(1.0, 0.5, 3.0, 1.5), &tile).unwrap(),
            0.5,
            max_relative = 1e-12
        );
        assert_eq!(overlap_ratio(&rect_fp(3.0, 3.0, 4.0, 4.0), &tile).unwrap(), 0.0);
    }

    #[test]
    fn coverage_cases() {
        let tile = Rect::new(0.0, 0.0, 1.5, 1.5);
        let full = rect_fp(-1.0, -1.0, 3.0, 3.0);
        assert_eq!(coverage_fraction(&[&full], &tile, 64), 1.0);
        let half = rect_fp(0.0, 0.0, 0.75, 1.5);
        let c = coverage_fraction(&[&half], &tile, 64);
        assert!((c - 0.5).abs() <= 1.0 / 64.0, "{c}");
        assert_eq!(coverage_fraction(&[], &tile, 64), 0.0);
    }

    fn arb_footprint() -> impl Strategy<Value = Footprint> {
        (
            -5.0..5.0f64,
            -5.0..5.0f64,
            0.5..4.0f64,
            -20.0..20.0f64,
            -20.0..20.0f64,
            0.0..360.0f64,
            20.0..90.0f64,
            20.0..90.0f64,
        )
            .prop_map(|(x, y, d, r, p, yaw, h, v)| {
                project_footprint(
                    Point2::new(x, y),
                    d,
                    &Attitude::new(r, p, yaw).unwrap(),
                    &CameraModel::new(h, v).unwrap(),
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn footprints_are_convex_and_ccw(fp in arb_footprint()) {
            prop_assert!(signed_area(&fp.corners) > 0.0);
            for i in 0..4 {
                let a = fp.corners[i];
                let b = fp.corners[(i + 1) % 4];
                let c = fp.corners[(i + 2) % 4];
                let cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
                prop_assert!(cross > 0.0);
            }
        }

        #[test]
        fn area_is_yaw_invariant(
            d in 0.5..4.0f64, r in -30.0..30.0f64, p in -30.0..30.0f64,
            yaw in 0.0..360.0f64, yaw2 in 0.0..360.0f64,
        ) {
            let c = CameraModel::new(90.0, 60.0).unwrap();
            let a1 = project_footprint(Point2::default(), d, &Attitude::new(r, p, yaw).unwrap(), &c)
                .unwrap().area().unwrap();
            let a2 = project_footprint(Point2::default(), d, &Attitude::new(r, p, yaw2).unwrap(), &c)
                .unwrap().area().unwrap();
            prop_assert!((a1 - a2).abs() <= 1e-9 * a1);
        }

        #[test]
        fn clip_is_bounded_and_idempotent(
            fp in arb_footprint(), x0 in -4.0..4.0f64, y0 in -4.0..4.0f64, side in 0.5..4.0f64,
        ) {
            let tile = Rect::new(x0, y0, x0 + side, y0 + side);
            let clipped = clip_footprint_to_tile(&fp, &tile);
            let area = signed_area(&clipped).abs();
            let fp_area = fp.area().unwrap();
            prop_assert!(area <= fp_area.min(tile.area()) * (1.0 + 1e-12));
            let again = clip_convex_to_rect(&clipped, &tile);
            prop_assert!((signed_area(&again).abs() - area).abs() <= 1e-12 * fp_area);

            let ratio = overlap_ratio(&fp, &tile).unwrap();
            prop_assert!((0.0..=1.0).contains(&ratio));
            let inside = fp.corners.iter().all(|c| {
                c.x >= tile.min_x && c.x <= tile.max_x && c.y >= tile.min_y && c.y <= tile.max_y
            });
            if inside {
                prop_assert!((ratio - 1.0).abs() < 1e-12);
            }
            if !fp.bounding_rect().intersects(&tile) {
                prop_assert_eq!(ratio, 0.0);
            }
        }

        #[test]
        fn coverage_grows_with_more_footprints(
            fps in proptest::collection::vec(arb_footprint(), 1..6),
        ) {
            let tile = Rect::new(-1.0, -1.0, 1.0, 1.0);
            let mut prev = 0.0;
            for k in 1..=fps.len() {
                let refs: Vec<&Footprint> = fps[..k].iter().collect();
                let c = coverage_fraction(&refs, &tile, 32);
                prop_assert!(c >= prev);
                prop_assert!((0.0..=1.0).contains(&c));
                prev = c;
            }
        }
    }
}
