//! Fixed-ground-area orthophoto tiling and black-tile detection.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point2, Rect};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TilingError {
    #[error("tile side {side_m} m is smaller than two pixels at gsd {gsd} m/px")]
    TileTooSmall { side_m: f64, gsd: f64 },
    #[error("invalid orthophoto metadata: {0}")]
    InvalidMeta(String),
    #[error("raster is empty")]
    EmptyRaster,
    #[error("window {window:?} exceeds raster extent {width}x{height}")]
    WindowOutOfBounds {
        window: PixelWindow,
        width: usize,
        height: usize,
    },
    #[error("raster buffer holds {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
}

/// Georeferencing of a north-up orthophoto with square pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthophotoMeta {
    pub width_px: usize,
    pub height_px: usize,
    /// Ground sample distance in meters per pixel.
    pub gsd: f64,
    /// World position of the top-left corner of the top-left pixel.
    pub origin: Point2,
    pub crs_id: String,
}

impl OrthophotoMeta {
    pub fn validate(&self) -> Result<(), TilingError> {
        if !(self.gsd > 0.0) || !self.gsd.is_finite() {
            return Err(TilingError::InvalidMeta(format!("gsd must be positive, got {}", self.gsd)));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(TilingError::InvalidMeta(format!(
                "raster must be non-empty, got {}x{}",
                self.width_px, self.height_px
            )));
        }
        Ok(())
    }

    pub fn extent(&self) -> Rect {
        Rect::new(
            self.origin.x,
            self.origin.y - self.height_px as f64 * self.gsd,
            self.origin.x + self.width_px as f64 * self.gsd,
            self.origin.y,
        )
    }

    /// World rectangle covered by a pixel window. Rows grow southward.
    pub fn window_bounds(&self, w: &PixelWindow) -> Rect {
        Rect::new(
            self.origin.x + w.col0 as f64 * self.gsd,
            self.origin.y - (w.row0 + w.height) as f64 * self.gsd,
            self.origin.x + (w.col0 + w.width) as f64 * self.gsd,
            self.origin.y - w.row0 as f64 * self.gsd,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelWindow {
    pub col0: usize,
    pub row0: usize,
    pub width: usize,
    pub height: usize,
}

/// Grid position of a tile; orders row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileId {
    pub row: u32,
    pub col: u32,
}

impl TileId {
    pub const fn new(row: u32, col: u32) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for TileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{:04}_c{:04}", self.row, self.col)
    }
}

impl std::str::FromStr for TileId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("malformed tile id {s:?}, expected r<row>_c<col>");
        let (r, c) = s.split_once('_').ok_or_else(bad)?;
        let row = r.strip_prefix('r').and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let col = c.strip_prefix('c').and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        Ok(Self { row, col })
    }
}

impl Serialize for TileId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TileId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub tile_id: TileId,
    pub pixel_window: PixelWindow,
    pub bounds: Rect,
}

/// Full tiles laid row-major from the orthophoto origin.
#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub meta: OrthophotoMeta,
    pub tile_side_m: f64,
    pub tile_px: usize,
    pub n_cols: usize,
    pub n_rows: usize,
    /// Partial tiles at the right and bottom edges that were discarded.
    pub partial_edge_tiles: usize,
    pub tiles: Vec<Tile>,
}

impl TileGrid {
    /// Ground size of one emitted tile; equals `tile_side_m` up to half a pixel.
    pub fn cell_size_m(&self) -> f64 {
        self.tile_px as f64 * self.meta.gsd
    }

    pub fn tile(&self, id: TileId) -> Option<&Tile> {
        let (r, c) = (id.row as usize, id.col as usize);
        if r < self.n_rows && c < self.n_cols {
            self.tiles.get(r * self.n_cols + c)
        } else {
            None
        }
    }

    /// Tile whose half-open bounds contain `p`.
    pub fn locate(&self, p: Point2) -> Option<&Tile> {
        let cell = self.cell_size_m();
        let col = ((p.x - self.meta.origin.x) / cell).floor();
        let row = ((self.meta.origin.y - p.y) / cell).floor();
        if col < 0.0 || row < 0.0 {
            return None;
        }
        // floor can land one cell off near shared edges; check neighbours exactly
        let (row, col) = (row as i64, col as i64);
        for dr in -1..=1i64 {
            for dc in -1..=1i64 {
                let (r, c) = (row + dr, col + dc);
                if r < 0 || c < 0 {
                    continue;
                }
                if let Some(t) = self.tile(TileId::new(r as u32, c as u32)) {
                    if t.bounds.contains_half_open(p) {
                        return Some(t);
                    }
                }
            }
        }
        None
    }
}

/// Splits the orthophoto into square tiles of `round(tile_side_m / gsd)`
/// pixels. Partial tiles along the right and bottom edges are dropped.
pub fn compute_tile_grid(meta: &OrthophotoMeta, tile_side_m: f64) -> Result<TileGrid, TilingError> {
    meta.validate()?;
    if !(tile_side_m >= 2.0 * meta.gsd) {
        return Err(TilingError::TileTooSmall {
            side_m: tile_side_m,
            gsd: meta.gsd,
        });
    }
    let tile_px = (tile_side_m / meta.gsd).round() as usize;
    let n_cols = meta.width_px / tile_px;
    let n_rows = meta.height_px / tile_px;
    let total_cols = meta.width_px.div_ceil(tile_px);
    let total_rows = meta.height_px.div_ceil(tile_px);

    let mut tiles = Vec::with_capacity(n_cols * n_rows);
    for row in 0..n_rows {
        for col in 0..n_cols {
            let pixel_window = PixelWindow {
                col0: col * tile_px,
                row0: row * tile_px,
                width: tile_px,
                height: tile_px,
            };
            tiles.push(Tile {
                tile_id: TileId::new(row as u32, col as u32),
                bounds: meta.window_bounds(&pixel_window),
                pixel_window,
            });
        }
    }
    Ok(TileGrid {
        meta: meta.clone(),
        tile_side_m,
        tile_px,
        n_cols,
        n_rows,
        partial_edge_tiles: total_cols * total_rows - n_cols * n_rows,
        tiles,
    })
}

/// Interleaved 8-bit raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, TilingError> {
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(TilingError::BufferSize {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn pixel(&self, col: usize, row: usize) -> &[u8] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, col: usize, row: usize) -> &mut [u8] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0 || self.channels == 0
    }
}

/// Read access to an orthophoto's pixels.
pub trait RasterSource {
    fn dimensions(&self) -> (usize, usize);
    fn read_window(&self, window: &PixelWindow) -> Result<Raster, TilingError>;
}

impl RasterSource for Raster {
    fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn read_window(&self, w: &PixelWindow) -> Result<Raster, TilingError> {
        if w.col0 + w.width > self.width || w.row0 + w.height > self.height {
            return Err(TilingError::WindowOutOfBounds {
                window: *w,
                width: self.width,
                height: self.height,
            });
        }
        let row_len = w.width * self.channels;
        let mut data = Vec::with_capacity(row_len * w.height);
        for r in w.row0..w.row0 + w.height {
            let start = (r * self.width + w.col0) * self.channels;
            data.extend_from_slice(&self.data[start..start + row_len]);
        }
        Ok(Raster {
            width: w.width,
            height: w.height,
            channels: self.channels,
            data,
        })
    }
}

pub fn extract_tile<S: RasterSource + ?Sized>(ortho: &S, tile: &Tile) -> Result<Raster, TilingError> {
    ortho.read_window(&tile.pixel_window)
}

/// Fraction of pixels whose channels are all zero.
pub fn black_fraction(pixels: &Raster) -> Result<f64, TilingError> {
    if pixels.is_empty() {
        return Err(TilingError::EmptyRaster);
    }
    let black = pixels
        .data
        .chunks_exact(pixels.channels)
        .filter(|px| px.iter().all(|&v| v == 0))
        .count();
    Ok(black as f64 / (pixels.width * pixels.height) as f64)
}

/// True when strictly more than `black_threshold` of the pixels are pure black.
pub fn is_black_tile(pixels: &Raster, black_threshold: f64) -> Result<bool, TilingError> {
    Ok(black_fraction(pixels)? > black_threshold)
}
