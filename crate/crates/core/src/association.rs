//! Image-to-tile association and usable-tile filtering.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{coverage_fraction, Footprint, ImageRecord, Rect};
use crate::tiling::{Tile, TileId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssociationError {
    #[error("coverage threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("no footprint for image {0:?}")]
    MissingFootprint(String),
}

/// Images whose camera position falls inside each tile.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssociationMap {
    pub by_tile: BTreeMap<TileId, Vec<String>>,
    pub unassigned: Vec<String>,
}

impl AssociationMap {
    pub fn images(&self, tile: TileId) -> &[String] {
        self.by_tile.get(&tile).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn assigned_count(&self) -> usize {
        self.by_tile.values().map(Vec::len).sum()
    }
}

/// Uniform bucket index over tile rectangles.
struct TileIndex<'a> {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<&'a Tile>>,
}

impl<'a> TileIndex<'a> {
    fn new(tiles: &'a [Tile]) -> Self {
        let cell = tiles
            .iter()
            .map(|t| t.bounds.width().max(t.bounds.height()))
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut buckets: HashMap<(i64, i64), Vec<&Tile>> = HashMap::new();
        let mut sorted: Vec<&Tile> = tiles.iter().collect();
        sorted.sort_by_key(|t| t.tile_id);
        for t in sorted {
            let (c0, r0) = Self::key(cell, t.bounds.min_x, t.bounds.min_y);
            let (c1, r1) = Self::key(cell, t.bounds.max_x, t.bounds.max_y);
            for c in c0..=c1 {
                for r in r0..=r1 {
                    buckets.entry((c, r)).or_default().push(t);
                }
            }
        }
        Self { cell, buckets }
    }

    fn key(cell: f64, x: f64, y: f64) -> (i64, i64) {
        ((x / cell).floor() as i64, (y / cell).floor() as i64)
    }

    fn find(&self, x: f64, y: f64) -> Option<&'a Tile> {
        let p = crate::geometry::Point2::new(x, y);
        self.buckets
            .get(&Self::key(self.cell, x, y))?
            .iter()
            .copied()
            .find(|t| t.bounds.contains_half_open(p))
    }
}

/// Assigns each image to the tile containing its camera position under the
/// half-open rule `[min_e, max_e) x [min_n, max_n)`. Images outside every
/// tile are listed as unassigned. Image order within a tile follows input order.
pub fn assign_images_to_tiles(images: &[ImageRecord], tiles: &[Tile]) -> AssociationMap {
    let index = TileIndex::new(tiles);
    let mut map = AssociationMap::default();
    for img in images {
        let p = img.camera_position;
        match index.find(p.x, p.y) {
            Some(t) => map.by_tile.entry(t.tile_id).or_default().push(img.image_id.clone()),
            None => map.unassigned.push(img.image_id.clone()),
        }
    }
    map
}

/// Which footprints count toward a tile's coverage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageSource {
    /// Only images assigned to the tile by the camera-center rule.
    #[default]
    Assigned,
    /// Every footprint that overlaps the tile, including neighbours' images.
    AllOverlapping,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub coverage_threshold: f64,
    pub grid_n: usize,
    pub coverage_source: CoverageSource,
    /// When false, tiles with at least one image are kept regardless of coverage.
    pub require_coverage: bool,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            coverage_threshold: 0.95,
            grid_n: 64,
            coverage_source: CoverageSource::Assigned,
            require_coverage: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Black,
    NoImages,
    LowCoverage,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub retained: Vec<Tile>,
    pub coverage: BTreeMap<TileId, f64>,
    pub dropped: BTreeMap<TileId, DropReason>,
}

impl FilterOutcome {
    pub fn dropped_count(&self, reason: DropReason) -> usize {
        self.dropped.values().filter(|r| **r == reason).count()
    }
}

/// Keeps tiles that are not black-flagged, have at least one assigned image,
/// and whose footprint coverage reaches the threshold. Reasons are checked in
/// that order; output follows tile id order.
pub fn filter_tiles(
    tiles: &[Tile],
    assoc: &AssociationMap,
    footprints: &BTreeMap<String, Footprint>,
    black_flags: &BTreeSet<TileId>,
    params: &FilterParams,
) -> Result<FilterOutcome, AssociationError> {
    let t = params.coverage_threshold;
    if !(t > 0.0 && t <= 1.0) {
        return Err(AssociationError::InvalidThreshold(t));
    }
    for ids in assoc.by_tile.values() {
        if let Some(missing) = ids.iter().find(|id| !footprints.contains_key(*id)) {
            return Err(AssociationError::MissingFootprint(missing.clone()));
        }
    }
    let all: Vec<(&Footprint, Rect)> = match params.coverage_source {
        CoverageSource::AllOverlapping => footprints.values().map(|f| (f, f.bounding_rect())).collect(),
        CoverageSource::Assigned => Vec::new(),
    };

    let mut sorted: Vec<&Tile> = tiles.iter().collect();
    sorted.sort_by_key(|t| t.tile_id);

    let verdicts: Vec<(&Tile, Option<f64>, Option<DropReason>)> = sorted
        .par_iter()
        .map(|tile| {
            if black_flags.contains(&tile.tile_id) {
                return (*tile, None, Some(DropReason::Black));
            }
            let ids = assoc.images(tile.tile_id);
            if ids.is_empty() {
                return (*tile, None, Some(DropReason::NoImages));
            }
            let fps: Vec<&Footprint> = match params.coverage_source {
                CoverageSource::Assigned => ids.iter().map(|id| &footprints[id]).collect(),
                CoverageSource::AllOverlapping => all
                    .iter()
                    .filter(|(_, bb)| bb.intersects(&tile.bounds))
                    .map(|(f, _)| *f)
                    .collect(),
            };
            let cov = coverage_fraction(&fps, &tile.bounds, params.grid_n);
            if params.require_coverage && cov < t {
                (*tile, Some(cov), Some(DropReason::LowCoverage))
            } else {
                (*tile, Some(cov), None)
            }
        })
        .collect();

    let mut out = FilterOutcome::default();
    for (tile, cov, reason) in verdicts {
        if let Some(c) = cov {
            out.coverage.insert(tile.tile_id, c);
        }
        match reason {
            Some(r) => {
                out.dropped.insert(tile.tile_id, r);
            }
            None => out.retained.push(tile.clone()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Attitude, Point2};

    fn tile(row: u32, col: u32) -> Tile {
        let x0 = col as f64 * 1.5;
        let y1 = -(row as f64) * 1.5;
        Tile {
            tile_id: TileId::new(row, col),
            pixel_window: crate::tiling::PixelWindow {
                col0: col as usize * 100,
                row0: row as usize * 100,
                width: 100,
                height: 100,
            },
            bounds: Rect::new(x0, y1 - 1.5, x0 + 1.5, y1),
        }
    }

    fn image(id: &str, x: f64, y: f64) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            timestamp_utc: 0.0,
            camera_position: Point2::new(x, y),
            depth: 1.0,
            attitude: Attitude::level(),
            teacher_probs: Default::default(),
        }
    }

    fn fp(id: &str, r: Rect) -> (String, Footprint) {
        (
            id.to_string(),
            Footprint {
                image_id: id.into(),
                corners: r.corners(),
            },
        )
    }

    #[test]
    fn center_edge_and_outside() {
        let tiles = vec![tile(0, 0), tile(0, 1)];
        let images = vec![
            image("center", 0.75, -0.75),
            image("edge", 1.5, -0.75),
            image("outside", 10.0, 10.0),
        ];
        let map = assign_images_to_tiles(&images, &tiles);
        assert_eq!(map.images(TileId::new(0, 0)), ["center"]);
        assert_eq!(map.images(TileId::new(0, 1)), ["edge"]);
        assert_eq!(map.unassigned, ["outside"]);
        assert_eq!(map.assigned_count(), 2);
    }

    #[test]
    fn filter_reasons() {
        let tiles = vec![tile(0, 0), tile(0, 1), tile(0, 2), tile(0, 3)];
        let images = vec![
            image("full", 0.75, -0.75),
            image("half", 1.5 + 0.3, -0.75),
            image("black", 4.5 + 0.75, -0.75),
        ];
        let assoc = assign_images_to_tiles(&images, &tiles);
        let fps: BTreeMap<_, _> = [
            fp("full", Rect::new(-1.0, -3.0, 3.0, 1.0)),
            fp("half", Rect::new(1.5, -1.5, 2.25, 0.0)),
            fp("black", Rect::new(4.0, -3.0, 7.0, 1.0)),
        ]
        .into_iter()
        .collect();
        let black: BTreeSet<_> = [TileId::new(0, 3)].into_iter().collect();
        let out = filter_tiles(&tiles, &assoc, &fps, &black, &FilterParams::default()).unwrap();
        assert_eq!(out.retained.len(), 1);
        assert_eq!(out.retained[0].tile_id, TileId::new(0, 0));
        assert_eq!(out.dropped[&TileId::new(0, 1)], DropReason::LowCoverage);
        assert_eq!(out.dropped[&TileId::new(0, 2)], DropReason::NoImages);
        assert_eq!(out.dropped[&TileId::new(0, 3)], DropReason::Black);
        assert!((out.coverage[&TileId::new(0, 1)] - 0.5).abs() <= 1.0 / 64.0);
    }

    #[test]
    fn no_coverage_filter_keeps_sparse_tiles() {
        let tiles = vec![tile(0, 0)];
        let images = vec![image("a", 0.2, -0.2)];
        let assoc = assign_images_to_tiles(&images, &tiles);
        let fps: BTreeMap<_, _> = [fp("a", Rect::new(0.0, -0.4, 0.4, 0.0))].into_iter().collect();
        let params = FilterParams {
            require_coverage: false,
            ..Default::default()
        };
        let out = filter_tiles(&tiles, &assoc, &fps, &BTreeSet::new(), &params).unwrap();
        assert_eq!(out.retained.len(), 1);
    }

    #[test]
    fn neighbour_footprints_count_when_requested() {
        let tiles = vec![tile(0, 0), tile(0, 1)];
        // "a" is centered in tile 0 and only covers its left half; "b" sits in
        // tile 1 but its footprint spills over the right half of tile 0.
        let images = vec![image("a", 0.3, -0.75), image("b", 1.6, -0.75)];
        let assoc = assign_images_to_tiles(&images, &tiles);
        let fps: BTreeMap<_, _> = [
            fp("a", Rect::new(0.0, -1.5, 0.75, 0.0)),
            fp("b", Rect::new(0.75, -1.5, 3.0, 0.0)),
        ]
        .into_iter()
        .collect();
        let assigned = filter_tiles(&tiles, &assoc, &fps, &BTreeSet::new(), &FilterParams::default()).unwrap();
        assert_eq!(assigned.dropped[&TileId::new(0, 0)], DropReason::LowCoverage);
        let params = FilterParams {
            coverage_source: CoverageSource::AllOverlapping,
            ..Default::default()
        };
        let all = filter_tiles(&tiles, &assoc, &fps, &BTreeSet::new(), &params).unwrap();
        assert!(all.retained.iter().any(|t| t.tile_id == TileId::new(0, 0)));
    }

    #[test]
    fn threshold_validation_and_missing_footprint() {
        let tiles = vec![tile(0, 0)];
        let assoc = assign_images_to_tiles(&[image("a", 0.1, -0.1)], &tiles);
        let bad = FilterParams {
            coverage_threshold: 0.0,
            ..Default::default()
        };
        assert_eq!(
            filter_tiles(&tiles, &assoc, &BTreeMap::new(), &BTreeSet::new(), &bad),
            Err(AssociationError::InvalidThreshold(0.0))
        );
        assert_eq!(
            filter_tiles(&tiles, &assoc, &BTreeMap::new(), &BTreeSet::new(), &FilterParams::default()),
            Err(AssociationError::MissingFootprint("a".into()))
        );
    }

    #[test]
    fn retained_set_shrinks_as_threshold_rises() {
        let tiles: Vec<Tile> = (0..4).flat_map(|r| (0..4).map(move |c| tile(r, c))).collect();
        let mut images = Vec::new();
        let mut fps = BTreeMap::new();
        for (k, t) in tiles.iter().enumerate() {
            let c = t.bounds.center();
            let id = format!("i{k}");
            images.push(image(&id, c.x, c.y));
            let half = 0.2 + 0.1 * k as f64;
            let (a, b) = fp(&id, Rect::new(c.x - half, c.y - half, c.x + half, c.y + half));
            fps.insert(a, b);
        }
        let assoc = assign_images_to_tiles(&images, &tiles);
        let mut prev = usize::MAX;
        for th in [1e-9, 0.1, 0.3, 0.5, 0.8, 0.95, 1.0] {
            let params = FilterParams {
                coverage_threshold: th,
                ..Default::default()
            };
            let n = filter_tiles(&tiles, &assoc, &fps, &BTreeSet::new(), &params).unwrap().retained.len();
            assert!(n <= prev);
            prev = n;
        }
        let tiny = FilterParams {
            coverage_threshold: 1e-9,
            ..Default::default()
        };
        assert_eq!(filter_tiles(&tiles, &assoc, &fps, &BTreeSet::new(), &tiny).unwrap().retained.len(), 16);
    }
}
