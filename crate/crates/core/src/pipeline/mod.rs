//! Configuration, orchestration and outputs of the tile-labeling flow:
//! tiling, black-tile filtering, association, coverage filtering,
//! aggregation and class pruning.

pub mod formats;
pub mod map;
pub mod simulate;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{assign_images_to_tiles, filter_tiles, CoverageSource, DropReason, FilterParams};
use crate::eval::{bce_soft_loss, sigmoid, MetricsReport, PairedScores, ScoreKey};
use crate::geometry::{overlap_ratio, CameraModel, Footprint, ImageRecord, Rect};
use crate::labeling::{aggregate, prune_rare_classes, remap_classes, ClassCatalog, ClassScores, Contribution, Method, SoftLabelSet};
use crate::split::SplitRatios;
use crate::sync::VideoTiming;
use crate::synth::{oracle_tile_labels, SyntheticScene};
use crate::tiling::{black_fraction, compute_tile_grid, extract_tile, is_black_tile, OrthophotoMeta, PixelWindow, Raster, Tile, TileGrid, TileId};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TILES_FILE: &str = "tiles.jsonl";
pub const FOOTPRINTS_FILE: &str = "footprints.geojson";
pub const GRID_FILE: &str = "grid.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

fn at<E: std::error::Error + Send + Sync + 'static>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, source: Box::new(e) }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub orthophoto: Option<PathBuf>,
    /// Defaults to the orthophoto's sibling world file.
    pub world_file: Option<PathBuf>,
    /// Defaults to the orthophoto's sibling `.prj`, if present.
    pub crs_file: Option<PathBuf>,
    pub images_csv: Option<PathBuf>,
    pub predictions_csv: Option<PathBuf>,
    /// Frame list and navigation track, used with `timing` when no images
    /// CSV is given.
    pub frames_csv: Option<PathBuf>,
    pub track_csv: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl PathsConfig {
    fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.orthophoto,
            &mut self.world_file,
            &mut self.crs_file,
            &mut self.images_csv,
            &mut self.predictions_csv,
            &mut self.frames_csv,
            &mut self.track_csv,
            &mut self.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: SplitRatios,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub tile_side_m: f64,
    pub coverage_threshold: f64,
    pub coverage_grid: usize,
    pub coverage_source: CoverageSource,
    /// When false, tiles need at least one image but no minimum coverage.
    pub coverage_filter: bool,
    pub black_threshold: f64,
    pub binarize_threshold: f64,
    pub method: Method,
    pub catalog: ClassCatalog,
    pub min_class_count: usize,
    pub presence_threshold: f64,
    pub split: SplitConfig,
    pub camera: Option<CameraModel>,
    pub timing: Option<VideoTiming>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: PathsConfig::default(),
            tile_side_m: 1.5,
            coverage_threshold: 0.95,
            coverage_grid: 64,
            coverage_source: CoverageSource::Assigned,
            coverage_filter: true,
            black_threshold: 0.5,
            binarize_threshold: 0.5,
            method: Method::Distilled,
            catalog: ClassCatalog::default(),
            min_class_count: 200,
            presence_threshold: 0.5,
            split: SplitConfig::default(),
            camera: None,
            timing: None,
        }
    }
}

fn require(path: &Option<PathBuf>, name: &str) -> Result<PathBuf, PipelineError> {
    path.clone().ok_or_else(|| PipelineError::Config(format!("paths.{name} is required")))
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let mut cfg: Self = serde_json::from_str(&formats::read_text(path)?)
            .map_err(|e| PipelineError::Format { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve_against(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.tile_side_m > 0.0 && self.tile_side_m.is_finite()) {
            return bad(format!("tile_side_m must be positive, got {}", self.tile_side_m));
        }
        if !(self.coverage_threshold > 0.0 && self.coverage_threshold <= 1.0) {
            return bad(format!("coverage_threshold must lie in (0, 1], got {}", self.coverage_threshold));
        }
        if !(0.0..=1.0).contains(&self.black_threshold) {
            return bad(format!("black_threshold must lie in [0, 1], got {}", self.black_threshold));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return bad(format!("binarize_threshold must lie in (0, 1), got {}", self.binarize_threshold));
        }
        if !(0.0..=1.0).contains(&self.presence_threshold) {
            return bad(format!("presence_threshold must lie in [0, 1], got {}", self.presence_threshold));
        }
        self.catalog.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.split.ratios.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if let Some(c) = &self.camera {
            CameraModel::new(c.fov_h, c.fov_v).map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if let Some(t) = &self.timing {
            t.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn camera(&self) -> Result<CameraModel, PipelineError> {
        self.camera.ok_or_else(|| PipelineError::Config("camera field of view (camera.fov_h, camera.fov_v) is required".into()))
    }

    pub fn filter_params(&self) -> FilterParams {
        FilterParams {
            coverage_threshold: self.coverage_threshold,
            grid_n: self.coverage_grid,
            coverage_source: self.coverage_source,
            require_coverage: self.coverage_filter,
        }
    }

    pub fn output_dir(&self) -> Result<PathBuf, PipelineError> {
        require(&self.paths.output_dir, "output_dir")
    }

    pub fn load_orthophoto(&self) -> Result<(Raster, OrthophotoMeta), PipelineError> {
        formats::load_orthophoto(
            &require(&self.paths.orthophoto, "orthophoto")?,
            self.paths.world_file.as_deref(),
            self.paths.crs_file.as_deref(),
        )
    }

    pub fn load_orthophoto_meta(&self) -> Result<OrthophotoMeta, PipelineError> {
        formats::read_orthophoto_meta(
            &require(&self.paths.orthophoto, "orthophoto")?,
            self.paths.world_file.as_deref(),
            self.paths.crs_file.as_deref(),
        )
    }

    /// Image navigation records, from the images CSV or else from frames,
    /// track and timing. Teacher probabilities are not attached.
    pub fn load_images(&self) -> Result<Vec<ImageRecord>, PipelineError> {
        if let Some(p) = &self.paths.images_csv {
            return formats::read_images_csv(p);
        }
        match (&self.paths.frames_csv, &self.paths.track_csv, &self.timing) {
            (Some(f), Some(t), Some(timing)) => {
                formats::images_from_frames(&formats::read_frames_csv(f)?, &formats::read_track_csv(t)?, timing)
            }
            _ => Err(PipelineError::Config(
                "paths.images_csv, or paths.frames_csv with paths.track_csv and timing, is required".into(),
            )),
        }
    }

    /// Images with teacher predictions attached.
    pub fn load_labeled_images(&self) -> Result<Vec<ImageRecord>, PipelineError> {
        let mut images = self.load_images()?;
        let preds = formats::read_predictions_csv(&require(&self.paths.predictions_csv, "predictions_csv")?)?;
        formats::merge_predictions(&mut images, preds)?;
        Ok(images)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageOverlap {
    pub image_id: String,
    pub overlap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TileStatus {
    Kept,
    Black,
    NoImages,
    LowCoverage,
}

impl From<Option<DropReason>> for TileStatus {
    fn from(r: Option<DropReason>) -> Self {
        match r {
            None => TileStatus::Kept,
            Some(DropReason::Black) => TileStatus::Black,
            Some(DropReason::NoImages) => TileStatus::NoImages,
            Some(DropReason::LowCoverage) => TileStatus::LowCoverage,
        }
    }
}

/// Filtering outcome of one tile with its assigned images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub tile_id: TileId,
    pub bounds: Rect,
    pub pixel_window: PixelWindow,
    pub black_fraction: f64,
    pub coverage: Option<f64>,
    pub status: TileStatus,
    pub images: Vec<ImageOverlap>,
}

impl TileRecord {
    pub fn tile(&self) -> Tile {
        Tile { tile_id: self.tile_id, pixel_window: self.pixel_window, bounds: self.bounds }
    }
}

/// One retained tile with its soft labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub tile_id: TileId,
    pub row: u32,
    pub col: u32,
    pub bounds: Rect,
    pub pixel_window: PixelWindow,
    pub labels: ClassScores,
    pub images: Vec<ImageOverlap>,
}

impl ManifestRecord {
    pub fn tile(&self) -> Tile {
        Tile { tile_id: self.tile_id, pixel_window: self.pixel_window, bounds: self.bounds }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub tile_side_m: f64,
    pub tiles_total: usize,
    pub kept: usize,
    pub dropped_black: usize,
    pub dropped_no_images: usize,
    pub dropped_low_coverage: usize,
    pub dropped_partial_edge: usize,
    pub images_total: usize,
    pub images_assigned: usize,
    pub images_unassigned: usize,
    /// Retained classes, in catalog order.
    pub classes: Vec<String>,
    pub pruned_classes: Vec<String>,
    /// Kept tiles with label at or above the presence threshold, per catalog
    /// class, before pruning.
    pub class_counts: BTreeMap<String, usize>,
}

impl Summary {
    pub fn is_conserved(&self) -> bool {
        self.tiles_total
            == self.kept + self.dropped_black + self.dropped_no_images + self.dropped_low_coverage + self.dropped_partial_edge
    }
}

/// Grid description sufficient to rebuild the tiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub meta: OrthophotoMeta,
    pub tile_side_m: f64,
}

impl GridSpec {
    pub fn grid(&self) -> Result<TileGrid, PipelineError> {
        compute_tile_grid(&self.meta, self.tile_side_m).map_err(at("tiling"))
    }
}

/// Tiles the orthophoto and measures each tile's black-pixel fraction.
pub fn tile_stage(
    raster: &Raster,
    meta: &OrthophotoMeta,
    tile_side_m: f64,
    black_threshold: f64,
) -> Result<(TileGrid, BTreeMap<TileId, (f64, bool)>), PipelineError> {
    if (raster.width, raster.height) != (meta.width_px, meta.height_px) {
        return Err(PipelineError::Stage {
            stage: "tiling",
            source: format!(
                "raster is {}x{} but metadata declares {}x{}",
                raster.width, raster.height, meta.width_px, meta.height_px
            )
            .into(),
        });
    }
    let grid = compute_tile_grid(meta, tile_side_m).map_err(at("tiling"))?;
    let black = grid
        .tiles
        .par_iter()
        .map(|t| {
            let px = extract_tile(raster, t)?;
            Ok((t.tile_id, (black_fraction(&px)?, is_black_tile(&px, black_threshold)?)))
        })
        .collect::<Result<BTreeMap<_, _>, crate::tiling::TilingError>>()
        .map_err(at("black filter"))?;
    Ok((grid, black))
}

pub fn footprint_stage(images: &[ImageRecord], cam: &CameraModel) -> Result<Vec<Footprint>, PipelineError> {
    images
        .par_iter()
        .map(|img| {
            img.footprint(cam).map_err(|e| PipelineError::Stage {
                stage: "footprints",
                source: format!("image {:?}: {e}", img.image_id).into(),
            })
        })
        .collect()
}

/// Associates images with tiles and applies the black, no-image and
/// coverage filters. Returns one record per tile in id order.
pub fn association_stage(
    grid: &TileGrid,
    black: &BTreeMap<TileId, (f64, bool)>,
    images: &[ImageRecord],
    footprints: &[Footprint],
    params: &FilterParams,
) -> Result<Vec<TileRecord>, PipelineError> {
    let assoc = assign_images_to_tiles(images, &grid.tiles);
    let fp_map: BTreeMap<String, Footprint> = footprints.iter().map(|f| (f.image_id.clone(), f.clone())).collect();
    let black_flags: BTreeSet<TileId> = black.iter().filter(|(_, (_, b))| *b).map(|(id, _)| *id).collect();
    let outcome = filter_tiles(&grid.tiles, &assoc, &fp_map, &black_flags, params).map_err(at("association"))?;
    let mut tiles: Vec<&Tile> = grid.tiles.iter().collect();
    tiles.sort_by_key(|t| t.tile_id);
    tiles
        .par_iter()
        .map(|t| {
            let images = assoc
                .images(t.tile_id)
                .iter()
                .map(|id| {
                    let overlap = overlap_ratio(&fp_map[id], &t.bounds).map_err(|e| PipelineError::Stage {
                        stage: "association",
                        source: format!("image {id:?}: {e}").into(),
                    })?;
                    Ok(ImageOverlap { image_id: id.clone(), overlap })
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;
            Ok(TileRecord {
                tile_id: t.tile_id,
                bounds: t.bounds,
                pixel_window: t.pixel_window,
                black_fraction: black.get(&t.tile_id).map_or(0.0, |b| b.0),
                coverage: outcome.coverage.get(&t.tile_id).copied(),
                status: outcome.dropped.get(&t.tile_id).copied().into(),
                images,
            })
        })
        .collect()
}

/// Aggregated labels before and after rare-class pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub unpruned: SoftLabelSet,
    pub labels: SoftLabelSet,
    pub pruned_classes: Vec<String>,
    pub manifest: Vec<ManifestRecord>,
}

/// Aggregates teacher probabilities over the kept tiles' images, then prunes
/// rare classes.
pub fn aggregation_stage(
    records: &[TileRecord],
    teacher: &BTreeMap<String, ClassScores>,
    cfg: &PipelineConfig,
) -> Result<Aggregation, PipelineError> {
    let kept: Vec<&TileRecord> = records.iter().filter(|r| r.status == TileStatus::Kept).collect();
    let needed: BTreeSet<&str> = kept.iter().flat_map(|r| r.images.iter().map(|i| i.image_id.as_str())).collect();
    let remapped: BTreeMap<&str, ClassScores> = needed
        .into_iter()
        .map(|id| {
            let probs = teacher.get(id).ok_or_else(|| PipelineError::Stage {
                stage: "aggregation",
                source: format!("image {id:?} has no teacher predictions").into(),
            })?;
            let scores = remap_classes(probs, &cfg.catalog).map_err(|e| PipelineError::Stage {
                stage: "aggregation",
                source: format!("image {id:?}: {e}").into(),
            })?;
            Ok((id, scores))
        })
        .collect::<Result<_, PipelineError>>()?;
    let labels: BTreeMap<TileId, ClassScores> = kept
        .par_iter()
        .map(|r| {
            let contribs: Vec<Contribution> = r
                .images
                .iter()
                .map(|i| Contribution { probs: remapped[i.image_id.as_str()].clone(), overlap: i.overlap })
                .collect();
            let scores = aggregate(cfg.method, &contribs, cfg.binarize_threshold).map_err(at("aggregation"))?;
            Ok((r.tile_id, scores))
        })
        .collect::<Result<_, PipelineError>>()?;
    let unpruned = SoftLabelSet { method: cfg.method, classes: cfg.catalog.aerial_classes.clone(), labels };
    let (pruned, removed) = prune_rare_classes(&unpruned, cfg.min_class_count, cfg.presence_threshold);
    let manifest = kept
        .iter()
        .map(|r| ManifestRecord {
            tile_id: r.tile_id,
            row: r.tile_id.row,
            col: r.tile_id.col,
            bounds: r.bounds,
            pixel_window: r.pixel_window,
            labels: pruned.labels[&r.tile_id].clone(),
            images: r.images.clone(),
        })
        .collect();
    Ok(Aggregation { unpruned, labels: pruned, pruned_classes: removed, manifest })
}

/// Everything a run produces, held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub grid: TileGrid,
    pub footprints: Vec<Footprint>,
    pub tiles: Vec<TileRecord>,
    pub labels: SoftLabelSet,
    pub manifest: Vec<ManifestRecord>,
    pub summary: Summary,
}

impl PipelineOutput {
    pub fn files(&self, dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>, PipelineError> {
        let spec = GridSpec { meta: self.grid.meta.clone(), tile_side_m: self.grid.tile_side_m };
        Ok(vec![
            (dir.join(MANIFEST_FILE), formats::jsonl_bytes(&self.manifest)?),
            (dir.join(SUMMARY_FILE), formats::pretty_json_bytes(&self.summary)?),
            (dir.join(TILES_FILE), formats::jsonl_bytes(&self.tiles)?),
            (dir.join(FOOTPRINTS_FILE), formats::footprints_geojson_bytes(&self.footprints)?),
            (dir.join(GRID_FILE), formats::pretty_json_bytes(&spec)?),
        ])
    }

    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        formats::write_files_atomic(&self.files(dir)?)
    }
}

/// Runs every stage on in-memory inputs. `images` must carry teacher
/// probabilities.
pub fn run_in_memory(
    raster: &Raster,
    meta: &OrthophotoMeta,
    images: &[ImageRecord],
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let cam = cfg.camera()?;
    let (grid, black) = tile_stage(raster, meta, cfg.tile_side_m, cfg.black_threshold)?;
    let footprints = footprint_stage(images, &cam)?;
    let tiles = association_stage(&grid, &black, images, &footprints, &cfg.filter_params())?;
    let teacher: BTreeMap<String, ClassScores> =
        images.iter().map(|i| (i.image_id.clone(), i.teacher_probs.clone())).collect();
    let agg = aggregation_stage(&tiles, &teacher, cfg)?;

    let count = |s: TileStatus| tiles.iter().filter(|t| t.status == s).count();
    let images_assigned: usize = tiles.iter().map(|t| t.images.len()).sum();
    let summary = Summary {
        method: cfg.method,
        tile_side_m: cfg.tile_side_m,
        tiles_total: grid.tiles.len() + grid.partial_edge_tiles,
        kept: count(TileStatus::Kept),
        dropped_black: count(TileStatus::Black),
        dropped_no_images: count(TileStatus::NoImages),
        dropped_low_coverage: count(TileStatus::LowCoverage),
        dropped_partial_edge: grid.partial_edge_tiles,
        images_total: images.len(),
        images_assigned,
        images_unassigned: images.len() - images_assigned,
        classes: agg.labels.classes.clone(),
        pruned_classes: agg.pruned_classes.clone(),
        class_counts: agg
            .unpruned
            .classes
            .iter()
            .map(|c| (c.clone(), agg.unpruned.presence_count(c, cfg.presence_threshold)))
            .collect(),
    };
    Ok(PipelineOutput { grid, footprints, tiles, labels: agg.labels, manifest: agg.manifest, summary })
}

/// Loads inputs named in `cfg`, runs every stage, and writes the outputs to
/// the configured directory. Nothing is written unless every stage succeeds.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let out_dir = cfg.output_dir()?;
    let (raster, meta) = cfg.load_orthophoto()?;
    let images = cfg.load_labeled_images()?;
    let out = run_in_memory(&raster, &meta, &images, cfg)?;
    out.write(&out_dir)?;
    Ok(out)
}

/// Manifest labels keyed by `(tile_id, class)`.
pub fn manifest_scores(manifest: &[ManifestRecord]) -> BTreeMap<ScoreKey, f64> {
    manifest
        .iter()
        .flat_map(|r| r.labels.iter().map(move |(c, v)| ((r.tile_id.to_string(), c.clone()), *v)))
        .collect()
}

/// Oracle presence for every `(tile, class)` key in the manifest. Classes
/// absent from the scene are negative.
pub fn oracle_scores(scene: &SyntheticScene, manifest: &[ManifestRecord]) -> BTreeMap<ScoreKey, f64> {
    let tiles: Vec<Tile> = manifest.iter().map(ManifestRecord::tile).collect();
    let truth = oracle_tile_labels(scene, &tiles);
    manifest
        .iter()
        .flat_map(|r| {
            let t = &truth[&r.tile_id];
            r.labels.keys().map(move |c| {
                ((r.tile_id.to_string(), c.clone()), f64::from(t.get(c).copied().unwrap_or(0)))
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub positive_threshold: f64,
    pub epsilon: f64,
    /// Predictions are logits; the report adds BCE and scores the other
    /// metrics on their sigmoids.
    pub logits: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            positive_threshold: crate::eval::DEFAULT_POSITIVE_THRESHOLD,
            epsilon: crate::eval::DEFAULT_KL_EPSILON,
            logits: false,
        }
    }
}

pub fn evaluate(
    labels: &BTreeMap<ScoreKey, f64>,
    preds: &BTreeMap<ScoreKey, f64>,
    opts: &EvalOptions,
) -> Result<MetricsReport, PipelineError> {
    if !opts.logits {
        let pairs = PairedScores::align(labels, preds).map_err(at("eval"))?;
        return MetricsReport::compute(&pairs, opts.positive_threshold, opts.epsilon).map_err(at("eval"));
    }
    let probs: BTreeMap<ScoreKey, f64> = preds.iter().map(|(k, z)| (k.clone(), sigmoid(*z))).collect();
    let pairs = PairedScores::align(labels, &probs).map_err(at("eval"))?;
    let logits: Vec<f64> = pairs.keys().iter().map(|k| preds[k]).collect();
    let mut report = MetricsReport::compute(&pairs, opts.positive_threshold, opts.epsilon).map_err(at("eval"))?;
    report.bce = Some(bce_soft_loss(pairs.reference(), &logits).map_err(at("eval"))?);
    Ok(report)
}

/// Reads scores from a manifest (`.jsonl`) or a `tile_id,class,score` CSV.
pub fn read_scores(path: &Path) -> Result<BTreeMap<ScoreKey, f64>, PipelineError> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        Ok(manifest_scores(&formats::read_jsonl::<ManifestRecord>(path)?))
    } else {
        formats::read_scores_csv(path)
    }
}
