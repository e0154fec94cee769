//! Georeferenced per-class prediction rasters at one cell per tile.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::formats::{georeferenced_png_files, read_orthophoto_meta};
use super::PipelineError;
use crate::geometry::Point2;
use crate::labeling::SoftLabelSet;
use crate::tiling::{Raster, TileGrid, TileId};

/// Cell value for tiles without a score.
pub const NODATA: u8 = 255;

/// Largest value a probability maps to.
pub const MAX_VALUE: u8 = 254;

pub fn encode_probability(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * f64::from(MAX_VALUE)).round() as u8
}

pub fn decode_value(v: u8) -> Option<f64> {
    (v != NODATA).then(|| f64::from(v) / f64::from(MAX_VALUE))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    pub class: String,
    pub n_cols: usize,
    pub n_rows: usize,
    pub cell_size: f64,
    /// Top-left corner of the top-left cell.
    pub origin: Point2,
    pub crs_id: String,
    /// Row-major cell values, row 0 northernmost.
    pub cells: Vec<u8>,
}

impl PredictionMap {
    pub fn value(&self, id: TileId) -> Option<u8> {
        let (r, c) = (id.row as usize, id.col as usize);
        (r < self.n_rows && c < self.n_cols).then(|| self.cells[r * self.n_cols + c])
    }

    /// Decoded scores of every non-nodata cell.
    pub fn scores(&self) -> BTreeMap<TileId, f64> {
        (0..self.n_rows)
            .flat_map(|r| (0..self.n_cols).map(move |c| TileId::new(r as u32, c as u32)))
            .filter_map(|id| decode_value(self.value(id)?).map(|p| (id, p)))
            .collect()
    }

    pub fn raster(&self) -> Raster {
        Raster {
            width: self.n_cols,
            height: self.n_rows,
            channels: 1,
            data: self.cells.clone(),
        }
    }

    /// The PNG, world file and CRS sidecar for this map.
    pub fn files(&self, png_path: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>, PipelineError> {
        georeferenced_png_files(&self.raster(), self.origin, self.cell_size, &self.crs_id, png_path)
    }
}

/// Rasterizes one class of `labels` over `grid`. Tiles without labels get
/// [`NODATA`].
pub fn emit_prediction_map(labels: &SoftLabelSet, grid: &TileGrid, class: &str) -> Result<PredictionMap, PipelineError> {
    if !labels.classes.iter().any(|c| c == class) {
        return Err(PipelineError::UnknownClass(class.to_string()));
    }
    let mut cells = vec![NODATA; grid.n_rows * grid.n_cols];
    for (id, scores) in &labels.labels {
        let (r, c) = (id.row as usize, id.col as usize);
        if r >= grid.n_rows || c >= grid.n_cols {
            return Err(PipelineError::Stage {
                stage: "map",
                source: format!("tile {id} lies outside the {}x{} grid", grid.n_rows, grid.n_cols).into(),
            });
        }
        let p = scores.get(class).copied().ok_or_else(|| PipelineError::Stage {
            stage: "map",
            source: format!("tile {id} has no score for class {class:?}").into(),
        })?;
        cells[r * grid.n_cols + c] = encode_probability(p);
    }
    Ok(PredictionMap {
        class: class.to_string(),
        n_cols: grid.n_cols,
        n_rows: grid.n_rows,
        cell_size: grid.cell_size_m(),
        origin: grid.meta.origin,
        crs_id: grid.meta.crs_id.clone(),
        cells,
    })
}

/// Reads a map written by [`PredictionMap::files`]. The class name is taken
/// from the file stem.
pub fn read_prediction_map(png_path: &Path) -> Result<PredictionMap, PipelineError> {
    let meta = read_orthophoto_meta(png_path, None, None)?;
    let img = image::open(png_path)
        .map_err(|e| PipelineError::Format { path: png_path.to_path_buf(), message: e.to_string() })?
        .to_luma8();
    Ok(PredictionMap {
        class: png_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        n_cols: meta.width_px,
        n_rows: meta.height_px,
        cell_size: meta.gsd,
        origin: meta.origin,
        crs_id: meta.crs_id,
        cells: img.into_raw(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::Method;
    use crate::tiling::{compute_tile_grid, OrthophotoMeta};

    fn grid() -> TileGrid {
        let meta = OrthophotoMeta {
            width_px: 40,
            height_px: 30,
            gsd: 0.1,
            origin: Point2::new(100.0, 200.0),
            crs_id: "EPSG:32740".into(),
        };
        compute_tile_grid(&meta, 1.0).unwrap()
    }

    fn labels(f: impl Fn(TileId) -> Option<f64>) -> SoftLabelSet {
        let g = grid();
        SoftLabelSet {
            method: Method::Distilled,
            classes: vec!["Sand".into()],
            labels: g
                .tiles
                .iter()
                .filter_map(|t| f(t.tile_id).map(|p| (t.tile_id, [("Sand".to_string(), p)].into())))
                .collect(),
        }
    }

    #[test]
    fn encoding_reserves_nodata() {
        assert_eq!(encode_probability(1.0), 254);
        assert_eq!(encode_probability(0.0), 0);
        assert_eq!(decode_value(NODATA), None);
        assert_eq!(decode_value(254), Some(1.0));
    }

    #[test]
    fn uniform_missing_and_checkerboard() {
        let g = grid();
        let full = emit_prediction_map(&labels(|_| Some(1.0)), &g, "Sand").unwrap();
        assert_eq!((full.n_rows, full.n_cols), (3, 4));
        assert!(full.cells.iter().all(|v| *v == MAX_VALUE));
        let holes = emit_prediction_map(&labels(|id| (id != TileId::new(1, 2)).then_some(0.5)), &g, "Sand").unwrap();
        assert_eq!(holes.value(TileId::new(1, 2)), Some(NODATA));
        assert_eq!(holes.value(TileId::new(0, 0)), Some(127));
        let board =
            emit_prediction_map(&labels(|id| Some(f64::from((id.row + id.col) % 2))), &g, "Sand").unwrap();
        for t in &g.tiles {
            let want = if (t.tile_id.row + t.tile_id.col) % 2 == 1 { 254 } else { 0 };
            assert_eq!(board.value(t.tile_id), Some(want));
        }
    }

    #[test]
    fn unknown_class_is_rejected() {
        assert!(matches!(
            emit_prediction_map(&labels(|_| Some(1.0)), &grid(), "Rock"),
            Err(PipelineError::UnknownClass(c)) if c == "Rock"
        ));
    }

    #[test]
    fn files_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid();
        let set = labels(|id| (id.col != 3).then_some(f64::from(id.row * 7 + id.col) / 17.0));
        let map = emit_prediction_map(&set, &g, "Sand").unwrap();
        let path = dir.path().join("Sand.png");
        super::super::formats::write_files_atomic(&map.files(&path).unwrap()).unwrap();
        let back = read_prediction_map(&path).unwrap();
        assert_eq!(back, map);
        let scores = back.scores();
        assert_eq!(scores.len(), set.labels.len());
        for (id, s) in &set.labels {
            assert!((scores[id] - s["Sand"]).abs() <= 1.0 / 255.0);
        }
    }
}
