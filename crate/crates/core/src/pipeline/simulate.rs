//! Synthetic fixture directories: a rendered orthophoto, survey CSVs, the
//! scene itself, and a config that runs the pipeline on them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::formats::{georeferenced_png_files, images_csv_bytes, predictions_csv_bytes, pretty_json_bytes, write_files_atomic};
use super::{PathsConfig, PipelineConfig, PipelineError};
use crate::geometry::{CameraModel, ImageRecord};
use crate::labeling::ClassCatalog;
use crate::synth::{generate_scene, render_orthophoto, simulate_survey, LawnmowerTrack, SceneExtent, SurveyNoise, SyntheticScene};
use crate::tiling::{OrthophotoMeta, Raster};

pub const SCENE_FILE: &str = "scene.json";
pub const CONFIG_FILE: &str = "config.json";
pub const ORTHOPHOTO_FILE: &str = "orthophoto.png";
pub const IMAGES_FILE: &str = "images.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationParams {
    pub seed: u64,
    pub extent_m: f64,
    pub n_regions: usize,
    pub classes: Vec<String>,
    pub gsd: f64,
    pub tile_side_m: f64,
    pub lane_spacing: f64,
    pub image_spacing: f64,
    pub depth: f64,
    pub camera: CameraModel,
    pub noise: SurveyNoise,
    /// World rectangles `[x0, y0, x1, y1]` rendered black.
    pub black_patches: Vec<[f64; 4]>,
    pub crs_id: String,
}

impl Default for SimulationParams {
    fn default() -> Self {
        Self {
            seed: 42,
            extent_m: 30.0,
            n_regions: 24,
            classes: ["Acropore_branched", "Acropore_tabular", "Dead_coral", "Rock", "Rubble", "Algae"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            gsd: 0.05,
            tile_side_m: 1.5,
            lane_spacing: 0.75,
            image_spacing: 0.25,
            depth: 1.0,
            camera: CameraModel { fov_h: 60.0, fov_v: 45.0 },
            noise: SurveyNoise::default(),
            black_patches: vec![[0.0, 27.0, 3.0, 30.0]],
            crs_id: "EPSG:32740".into(),
        }
    }
}

/// A simulated survey held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub scene: SyntheticScene,
    pub images: Vec<ImageRecord>,
    pub raster: Raster,
    pub meta: OrthophotoMeta,
    pub config: PipelineConfig,
}

impl SimulationParams {
    pub fn extent(&self) -> SceneExtent {
        SceneExtent { min_x: 0.0, min_y: 0.0, max_x: self.extent_m, max_y: self.extent_m }
    }

    /// Pipeline settings matching the simulated survey: the catalog is the
    /// scene's class list and no class is pruned.
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            tile_side_m: self.tile_side_m,
            camera: Some(self.camera),
            catalog: ClassCatalog {
                aerial_classes: self.classes.clone(),
                merge_rules: Default::default(),
                drop_list: Default::default(),
            },
            min_class_count: 0,
            split: super::SplitConfig { seed: self.seed, ..Default::default() },
            ..PipelineConfig::default()
        }
    }

    pub fn simulate(&self) -> Simulation {
        let scene = generate_scene(self.seed, self.extent(), self.n_regions, &self.classes);
        let track = LawnmowerTrack::covering(&scene.extent, self.lane_spacing, self.image_spacing, self.depth);
        let images = simulate_survey(&scene, &track, &self.camera, &self.noise, self.seed.wrapping_add(1));
        let (raster, meta) = render_orthophoto(&scene, self.gsd, &self.crs_id, &self.black_patches);
        Simulation { scene, images, raster, meta, config: self.pipeline_config() }
    }
}

impl Simulation {
    /// Writes the fixture into `dir`. The config refers to its inputs by
    /// relative path and writes outputs to `dir/out`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, PipelineError> {
        let config = PipelineConfig {
            paths: PathsConfig {
                orthophoto: Some(ORTHOPHOTO_FILE.into()),
                images_csv: Some(IMAGES_FILE.into()),
                predictions_csv: Some(PREDICTIONS_FILE.into()),
                output_dir: Some("out".into()),
                ..PathsConfig::default()
            },
            ..self.config.clone()
        };
        let mut files =
            georeferenced_png_files(&self.raster, self.meta.origin, self.meta.gsd, &self.meta.crs_id, &dir.join(ORTHOPHOTO_FILE))?;
        files.push((dir.join(IMAGES_FILE), images_csv_bytes(&self.images)?));
        files.push((dir.join(PREDICTIONS_FILE), predictions_csv_bytes(&self.images)?));
        files.push((dir.join(SCENE_FILE), pretty_json_bytes(&self.scene)?));
        let config_path = dir.join(CONFIG_FILE);
        files.push((config_path.clone(), pretty_json_bytes(&config)?));
        write_files_atomic(&files)?;
        Ok(config_path)
    }
}
