//! Synthetic reef scenes, simulated surveys, and an independent ground-truth
//! oracle for end-to-end checks.
//!
//! The oracle's intersection tests live in [`oracle_geom`] and use none of the
//! pipeline's geometry code, so agreement between the two is evidence rather
//! than a tautology.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{project_footprint, Attitude, CameraModel, ImageRecord, Point2};
use crate::tiling::{OrthophotoMeta, Raster, Tile, TileId};

/// Separating-axis tests on plain coordinate arrays.
pub mod oracle_geom {
    pub type Pt = [f64; 2];

    fn project(poly: &[Pt], axis: Pt) -> (f64, f64) {
        poly.iter()
            .map(|p| p[0] * axis[0] + p[1] * axis[1])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    fn separated_along_edges(a: &[Pt], b: &[Pt]) -> bool {
        let n = a.len();
        (0..n).any(|i| {
            let p = a[i];
            let q = a[(i + 1) % n];
            let axis = [q[1] - p[1], p[0] - q[0]];
            let (a_lo, a_hi) = project(a, axis);
            let (b_lo, b_hi) = project(b, axis);
            a_hi < b_lo || b_hi < a_lo
        })
    }

    /// True when two closed convex polygons share at least one point.
    pub fn convex_polygons_intersect(a: &[Pt], b: &[Pt]) -> bool {
        !(separated_along_edges(a, b) || separated_along_edges(b, a))
    }

    /// True when a closed convex polygon and a closed axis-aligned rectangle
    /// `[x0, x1] x [y0, y1]` share at least one point.
    pub fn convex_intersects_rect(poly: &[Pt], x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
        let rect = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
        convex_polygons_intersect(poly, &rect)
    }

    /// Winding-sign containment for a convex ring of either orientation.
    pub fn point_in_convex(poly: &[Pt], p: Pt) -> bool {
        let n = poly.len();
        let mut sign = 0.0f64;
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            if cross != 0.0 {
                if sign == 0.0 {
                    sign = cross.signum();
                } else if cross.signum() != sign {
                    return false;
                }
            }
        }
        true
    }
}

use oracle_geom::Pt;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneExtent {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl SceneExtent {
    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }
}

/// A convex patch of one class, counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRegion {
    pub class: String,
    pub vertices: Vec<Pt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub seed: u64,
    pub extent: SceneExtent,
    pub classes: Vec<String>,
    pub regions: Vec<ClassRegion>,
}

/// Region radii as fractions of the shorter extent side.
pub const REGION_RADIUS_FRACTION: (f64, f64) = (0.06, 0.16);

/// Places `n_regions` convex class regions inside the extent: half
/// axis-aligned rectangles, half polygons inscribed in an ellipse.
pub fn generate_scene(seed: u64, extent: SceneExtent, n_regions: usize, classes: &[String]) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let short = extent.width().min(extent.height());
    let (rmin, rmax) = (REGION_RADIUS_FRACTION.0 * short, REGION_RADIUS_FRACTION.1 * short);
    let mut regions = Vec::with_capacity(n_regions);
    if !classes.is_empty() {
        for _ in 0..n_regions {
            let class = classes[rng.random_range(0..classes.len())].clone();
            let rx = rng.random_range(rmin..rmax);
            let ry = rng.random_range(rmin..rmax);
            let cx = rng.random_range(extent.min_x + rx..extent.max_x - rx);
            let cy = rng.random_range(extent.min_y + ry..extent.max_y - ry);
            let vertices = if rng.random_bool(0.5) {
                vec![[cx - rx, cy - ry], [cx + rx, cy - ry], [cx + rx, cy + ry], [cx - rx, cy + ry]]
            } else {
                let k = rng.random_range(5..=8);
                let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
                angles.sort_by(f64::total_cmp);
                angles.dedup();
                angles.iter().map(|a| [cx + rx * a.cos(), cy + ry * a.sin()]).collect()
            };
            regions.push(ClassRegion { class, vertices });
        }
    }
    SyntheticScene {
        seed,
        extent,
        classes: classes.to_vec(),
        regions,
    }
}

/// Boustrophedon survey: lanes run north-south, starting at `start` and
/// stepping east by `lane_spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawnmowerTrack {
    pub start: Point2,
    pub n_lanes: usize,
    pub lane_length: f64,
    pub lane_spacing: f64,
    pub image_spacing: f64,
    pub depth: f64,
    pub speed: f64,
    pub start_time: f64,
}

impl LawnmowerTrack {
    /// Lanes covering `extent` with a margin of half a lane spacing.
    pub fn covering(extent: &SceneExtent, lane_spacing: f64, image_spacing: f64, depth: f64) -> Self {
        let n_lanes = ((extent.width() - lane_spacing) / lane_spacing).floor() as usize + 1;
        Self {
            start: Point2::new(extent.min_x + 0.5 * lane_spacing, extent.min_y + 0.5 * image_spacing),
            n_lanes,
            lane_length: extent.height() - image_spacing,
            lane_spacing,
            image_spacing,
            depth,
            speed: 0.5,
            start_time: 1_700_000_000.0,
        }
    }

    /// Nominal camera positions and headings in survey order.
    pub fn waypoints(&self) -> Vec<(Point2, f64)> {
        let per_lane = (self.lane_length / self.image_spacing).floor() as usize + 1;
        let mut out = Vec::with_capacity(per_lane * self.n_lanes);
        for lane in 0..self.n_lanes {
            let x = self.start.x + lane as f64 * self.lane_spacing;
            let northbound = lane % 2 == 0;
            for k in 0..per_lane {
                let s = k as f64 * self.image_spacing;
                let y = if northbound {
                    self.start.y + s
                } else {
                    self.start.y + (per_lane - 1) as f64 * self.image_spacing - s
                };
                out.push((Point2::new(x, y), if northbound { 0.0 } else { 180.0 }));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SurveyNoise {
    /// Standard deviation applied independently to roll, pitch and yaw.
    pub attitude_std_deg: f64,
    pub position_std_m: f64,
    /// Probability of flipping a teacher output `p -> 1 - p`.
    #[serde(default)]
    pub teacher_flip: f64,
    /// Mixing weight toward a uniform random probability.
    #[serde(default)]
    pub teacher_blur: f64,
}

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).expect("positive std").sample(rng)
    } else {
        0.0
    }
}

/// Simulates the survey. Each image's true pose is the nominal pose plus
/// Gaussian noise; the teacher sees the true footprint, while the record
/// carries the nominal pose the navigation would report. A class gets
/// probability 1 when one of its regions touches the true footprint.
///
/// Images whose perturbed footprint cannot be projected are skipped.
pub fn simulate_survey(
    scene: &SyntheticScene,
    track: &LawnmowerTrack,
    cam: &CameraModel,
    noise: &SurveyNoise,
    seed: u64,
) -> Vec<ImageRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (i, (pos, yaw)) in track.waypoints().into_iter().enumerate() {
        let nominal = Attitude { roll: 0.0, pitch: 0.0, yaw };
        let true_att = Attitude {
            roll: (normal(&mut rng, noise.attitude_std_deg)).clamp(-89.0, 89.0),
            pitch: (normal(&mut rng, noise.attitude_std_deg)).clamp(-89.0, 89.0),
            yaw: crate::geometry::normalize_degrees(yaw + normal(&mut rng, noise.attitude_std_deg)),
        };
        let true_pos = Point2::new(
            pos.x + normal(&mut rng, noise.position_std_m),
            pos.y + normal(&mut rng, noise.position_std_m),
        );
        let Ok(fp) = project_footprint(true_pos, track.depth, &true_att, cam) else {
            continue;
        };
        let corners: Vec<Pt> = fp.corners.iter().map(|c| [c.x, c.y]).collect();
        let mut probs: BTreeMap<String, f64> = scene.classes.iter().map(|c| (c.clone(), 0.0)).collect();
        for region in &scene.regions {
            if oracle_geom::convex_polygons_intersect(&region.vertices, &corners) {
                probs.insert(region.class.clone(), 1.0);
            }
        }
        for p in probs.values_mut() {
            if noise.teacher_flip > 0.0 && rng.random_bool(noise.teacher_flip.min(1.0)) {
                *p = 1.0 - *p;
            }
            if noise.teacher_blur > 0.0 {
                let u: f64 = rng.random();
                *p = (1.0 - noise.teacher_blur) * *p + noise.teacher_blur * u;
            }
        }
        out.push(ImageRecord {
            image_id: format!("img_{i:05}"),
            timestamp_utc: track.start_time + i as f64 * track.image_spacing / track.speed,
            camera_position: pos,
            depth: track.depth,
            attitude: nominal,
            teacher_probs: probs,
        });
    }
    out
}

/// Binary presence of every scene class on every tile: 1 when one of the
/// class's regions touches the closed tile rectangle.
pub fn oracle_tile_labels(scene: &SyntheticScene, tiles: &[Tile]) -> BTreeMap<TileId, BTreeMap<String, u8>> {
    tiles
        .iter()
        .map(|t| {
            let b = &t.bounds;
            let mut labels: BTreeMap<String, u8> = scene.classes.iter().map(|c| (c.clone(), 0)).collect();
            for r in &scene.regions {
                if oracle_geom::convex_intersects_rect(&r.vertices, b.min_x, b.min_y, b.max_x, b.max_y) {
                    labels.insert(r.class.clone(), 1);
                }
            }
            (t.tile_id, labels)
        })
        .collect()
}

/// Flat per-class colour derived from the class name.
pub fn class_color(class: &str) -> [u8; 3] {
    let h = class
        .bytes()
        .fold(0x811c_9dc5u32, |h, b| (h ^ u32::from(b)).wrapping_mul(0x0100_0193));
    [
        64 + (h & 0x7f) as u8,
        64 + ((h >> 8) & 0x7f) as u8,
        64 + ((h >> 16) & 0x7f) as u8,
    ]
}

pub const BACKGROUND_COLOR: [u8; 3] = [194, 178, 128];

/// Rasterizes the scene as a north-up RGB orthophoto. Rectangles listed in
/// `black_patches` (world coordinates, `[x0, y0, x1, y1]`) are painted pure
/// black to mimic reconstruction holes.
pub fn render_orthophoto(scene: &SyntheticScene, gsd: f64, crs_id: &str, black_patches: &[[f64; 4]]) -> (Raster, OrthophotoMeta) {
    let e = scene.extent;
    let width = (e.width() / gsd).round() as usize;
    let height = (e.height() / gsd).round() as usize;
    let meta = OrthophotoMeta {
        width_px: width,
        height_px: height,
        gsd,
        origin: Point2::new(e.min_x, e.max_y),
        crs_id: crs_id.to_string(),
    };
    let mut raster = Raster::filled(width, height, 3, 0);
    for row in 0..height {
        let y = e.max_y - (row as f64 + 0.5) * gsd;
        for col in 0..width {
            let x = e.min_x + (col as f64 + 0.5) * gsd;
            let mut color = BACKGROUND_COLOR;
            for r in &scene.regions {
                if oracle_geom::point_in_convex(&r.vertices, [x, y]) {
                    color = class_color(&r.class);
                }
            }
            if black_patches.iter().any(|p| x >= p[0] && x < p[2] && y >= p[1] && y < p[3]) {
                color = [0, 0, 0];
            }
            raster.pixel_mut(col, row).copy_from_slice(&color);
        }
    }
    (raster, meta)
}
