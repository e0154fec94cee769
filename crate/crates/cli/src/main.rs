//! `reefscale` command-line interface.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use reefscale::geometry::CameraModel;
use reefscale::labeling::Method;
use reefscale::pipeline::formats::{
    assignment_csv_bytes, footprints_geojson_bytes, jsonl_bytes, pretty_json_bytes, read_json, read_jsonl,
    read_predictions_csv, read_samples_csv, write_files_atomic,
};
use reefscale::pipeline::map::emit_prediction_map;
use reefscale::pipeline::simulate::SimulationParams;
use reefscale::pipeline::{
    aggregation_stage, association_stage, evaluate, footprint_stage, oracle_scores, read_scores,
    run_pipeline, tile_stage, EvalOptions, GridSpec, ManifestRecord, PipelineConfig, Summary, TileRecord, GRID_FILE,
    MANIFEST_FILE, SUMMARY_FILE,
};
use reefscale::split::{split_report, temporal_split, SplitRatios};
use reefscale::synth::{SurveyNoise, SyntheticScene};
use reefscale::tiling::{PixelWindow, TileId};

#[derive(Parser)]
#[command(name = "reefscale", version, about = "Tile-level soft labels from underwater image predictions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project image footprints to GeoJSON.
    Footprints {
        #[command(flatten)]
        common: Common,
    },
    /// Tile the orthophoto and flag black tiles.
    Tile {
        #[command(flatten)]
        common: Common,
    },
    /// Associate images with tiles and apply the tile filters.
    Associate {
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate teacher predictions over associated tiles into a manifest.
    Aggregate {
        #[command(flatten)]
        common: Common,
        /// Tile records written by `associate`.
        #[arg(long)]
        tiles: PathBuf,
    },
    /// Stratified train/val/test split of a samples CSV.
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: PathBuf,
    },
    /// Compare predictions against reference labels.
    Eval(EvalArgs),
    /// Write one georeferenced raster per class from a run directory.
    Map {
        #[command(flatten)]
        common: Common,
        /// Directory holding a run's manifest, summary and grid.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Class to map; repeat for several. Defaults to every retained class.
        #[arg(long = "class")]
        classes: Vec<String>,
    },
    /// Write a synthetic survey fixture with a matching config.
    Simulate(SimulateArgs),
    /// Run the full labeling pipeline.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Default)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    tile_side: Option<f64>,
    #[arg(long)]
    coverage_threshold: Option<f64>,
    #[arg(long)]
    black_threshold: Option<f64>,
    /// Binarization threshold for hard and weighted aggregation.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    ratios: Option<SplitRatios>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep tiles with at least one image regardless of coverage.
    #[arg(long)]
    no_coverage_filter: bool,
    #[arg(long)]
    orthophoto: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    fov_h: Option<f64>,
    #[arg(long)]
    fov_v: Option<f64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(v) = self.tile_side {
            cfg.tile_side_m = v;
        }
        if let Some(v) = self.coverage_threshold {
            cfg.coverage_threshold = v;
        }
        if let Some(v) = self.black_threshold {
            cfg.black_threshold = v;
        }
        if let Some(v) = self.threshold {
            cfg.binarize_threshold = v;
        }
        if let Some(r) = self.ratios {
            cfg.split.ratios = r;
        }
        if let Some(s) = self.seed {
            cfg.split.seed = s;
        }
        if self.no_coverage_filter {
            cfg.coverage_filter = false;
        }
        for (flag, slot) in [
            (&self.orthophoto, &mut cfg.paths.orthophoto),
            (&self.images, &mut cfg.paths.images_csv),
            (&self.predictions, &mut cfg.paths.predictions_csv),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        match (self.fov_h, self.fov_v, cfg.camera) {
            (None, None, _) => {}
            (Some(h), Some(v), _) => cfg.camera = Some(CameraModel::new(h, v)?),
            (h, v, Some(c)) => cfg.camera = Some(CameraModel::new(h.unwrap_or(c.fov_h), v.unwrap_or(c.fov_v))?),
            _ => bail!("--fov-h and --fov-v must be given together when the config has no camera"),
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self) -> Result<&Path> {
        self.out.as_deref().context("--out is required")
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Reference labels: a manifest (.jsonl) or a `tile_id,class,score` CSV.
    #[arg(long, conflicts_with = "scene", required_unless_present = "scene")]
    labels: Option<PathBuf>,
    /// Synthetic scene whose oracle labels serve as the reference.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Predictions: a manifest (.jsonl) or a `tile_id,class,score` CSV.
    #[arg(long)]
    preds: PathBuf,
    /// Reference values at or above this count as positives for AUC.
    #[arg(long, default_value_t = reefscale::eval::DEFAULT_POSITIVE_THRESHOLD)]
    positive_threshold: f64,
    #[arg(long, default_value_t = reefscale::eval::DEFAULT_KL_EPSILON)]
    epsilon: f64,
    /// Predictions are logits rather than probabilities.
    #[arg(long)]
    logits: bool,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Side of the square survey area in meters.
    #[arg(long, default_value_t = 30.0)]
    extent: f64,
    #[arg(long, default_value_t = 24)]
    regions: usize,
    #[arg(long, default_value_t = 0.0)]
    attitude_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    position_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    teacher_flip: f64,
    #[arg(long, default_value_t = 0.0)]
    teacher_blur: f64,
}

#[derive(Serialize)]
struct TileInfo {
    tile_id: TileId,
    bounds: reefscale::geometry::Rect,
    pixel_window: PixelWindow,
    black_fraction: f64,
    black: bool,
}

fn write_one(path: &Path, bytes: Vec<u8>) -> Result<()> {
    write_files_atomic(&[(path.to_path_buf(), bytes)])?;
    Ok(())
}

fn cmd_footprints(c: &Common) -> Result<()> {
    let cfg = c.config()?;
    let images = cfg.load_images()?;
    let fps = footprint_stage(&images, &cfg.camera()?)?;
    write_one(c.out()?, footprints_geojson_bytes(&fps)?)?;
    eprintln!("wrote {} footprints", fps.len());
    Ok(())
}

fn cmd_tile(c: &Common) -> Result<()> {
    let cfg = c.config()?;
    let (raster, meta) = cfg.load_orthophoto()?;
    let (grid, black) = tile_stage(&raster, &meta, cfg.tile_side_m, cfg.black_threshold)?;
    let infos: Vec<TileInfo> = grid
        .tiles
        .iter()
        .map(|t| {
            let (frac, is_black) = black[&t.tile_id];
            TileInfo {
                tile_id: t.tile_id,
                bounds: t.bounds,
                pixel_window: t.pixel_window,
                black_fraction: frac,
                black: is_black,
            }
        })
        .collect();
    write_one(c.out()?, jsonl_bytes(&infos)?)?;
    eprintln!(
        "{} full tiles ({}x{}), {} partial edge tiles, {} black",
        grid.tiles.len(),
        grid.n_rows,
        grid.n_cols,
        grid.partial_edge_tiles,
        infos.iter().filter(|i| i.black).count()
    );
    Ok(())
}

fn associate(cfg: &PipelineConfig) -> Result<Vec<TileRecord>> {
    let (raster, meta) = cfg.load_orthophoto()?;
    let images = cfg.load_images()?;
    let (grid, black) = tile_stage(&raster, &meta, cfg.tile_side_m, cfg.black_threshold)?;
    let fps = footprint_stage(&images, &cfg.camera()?)?;
    Ok(association_stage(&grid, &black, &images, &fps, &cfg.filter_params())?)
}

fn cmd_associate(c: &Common) -> Result<()> {
    let cfg = c.config()?;
    let records = associate(&cfg)?;
    write_one(c.out()?, jsonl_bytes(&records)?)?;
    let kept = records.iter().filter(|r| r.status == reefscale::pipeline::TileStatus::Kept).count();
    eprintln!("{kept} of {} tiles kept", records.len());
    Ok(())
}

fn cmd_aggregate(c: &Common, tiles: &Path) -> Result<()> {
    let cfg = c.config()?;
    let records: Vec<TileRecord> = read_jsonl(tiles)?;
    let preds_path = cfg.paths.predictions_csv.clone().context("predictions CSV is required (--predictions or config)")?;
    let teacher = read_predictions_csv(&preds_path)?;
    let agg = aggregation_stage(&records, &teacher, &cfg)?;
    write_one(c.out()?, jsonl_bytes(&agg.manifest)?)?;
    eprintln!("{} tiles labeled, pruned classes: {:?}", agg.manifest.len(), agg.pruned_classes);
    Ok(())
}

fn cmd_split(c: &Common, samples_path: &Path) -> Result<()> {
    let cfg = c.config()?;
    let samples = read_samples_csv(samples_path)?;
    let assignment = temporal_split(&samples, &cfg.split.ratios, cfg.split.seed)?;
    let report = split_report(&assignment, &samples)?;
    write_one(c.out()?, assignment_csv_bytes(&assignment)?)?;
    println!("class,train,val,test,total");
    for (class, f) in &report {
        println!("{class},{:.4},{:.4},{:.4},{}", f.train, f.val, f.test, f.total);
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let preds = read_scores(&a.preds)?;
    let labels: BTreeMap<(String, String), f64> = match (&a.labels, &a.scene) {
        (Some(l), _) => read_scores(l)?,
        (None, Some(s)) => {
            let scene: SyntheticScene = read_json(s)?;
            let manifest: Vec<ManifestRecord> = read_jsonl(&a.preds)
                .with_context(|| format!("--scene needs a manifest as --preds, got {}", a.preds.display()))?;
            oracle_scores(&scene, &manifest)
        }
        (None, None) => bail!("one of --labels or --scene is required"),
    };
    let opts = EvalOptions { positive_threshold: a.positive_threshold, epsilon: a.epsilon, logits: a.logits };
    let report = evaluate(&labels, &preds, &opts)?.to_string();
    print!("{report}");
    if let Some(out) = &a.out {
        write_one(out, report.into_bytes())?;
    }
    Ok(())
}

fn cmd_map(c: &Common, run_dir: Option<&Path>, classes: &[String]) -> Result<()> {
    let run_dir = match run_dir {
        Some(d) => d.to_path_buf(),
        None => c.config()?.output_dir().context("--run-dir or a config with paths.output_dir is required")?,
    };
    let spec: GridSpec = read_json(&run_dir.join(GRID_FILE))?;
    let summary: Summary = read_json(&run_dir.join(SUMMARY_FILE))?;
    let manifest: Vec<ManifestRecord> = read_jsonl(&run_dir.join(MANIFEST_FILE))?;
    let grid = spec.grid()?;
    let labels = reefscale::labeling::SoftLabelSet {
        method: summary.method,
        classes: summary.classes.clone(),
        labels: manifest.iter().map(|r| (r.tile_id, r.labels.clone())).collect(),
    };
    let wanted = if classes.is_empty() { summary.classes.clone() } else { classes.to_vec() };
    let out_dir = c.out.clone().unwrap_or_else(|| run_dir.join("maps"));
    let mut files = Vec::new();
    for class in &wanted {
        let map = emit_prediction_map(&labels, &grid, class)?;
        files.extend(map.files(&out_dir.join(format!("{class}.png")))?);
    }
    write_files_atomic(&files)?;
    eprintln!("wrote {} maps to {}", wanted.len(), out_dir.display());
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let params = SimulationParams {
        seed: a.seed,
        extent_m: a.extent,
        n_regions: a.regions,
        noise: SurveyNoise {
            attitude_std_deg: a.attitude_noise,
            position_std_m: a.position_noise,
            teacher_flip: a.teacher_flip,
            teacher_blur: a.teacher_blur,
        },
        ..SimulationParams::default()
    };
    if !(a.extent >= 2.0 * params.tile_side_m) {
        bail!("--extent must be at least {} m", 2.0 * params.tile_side_m);
    }
    let sim = params.simulate();
    let config = sim.write(&a.out)?;
    eprintln!("wrote {} images and {}", sim.images.len(), config.display());
    Ok(())
}

fn cmd_run(c: &Common) -> Result<()> {
    let mut cfg = c.config()?;
    if let Some(out) = &c.out {
        cfg.paths.output_dir = Some(out.clone());
    }
    let out = run_pipeline(&cfg)?;
    print!("{}", String::from_utf8(pretty_json_bytes(&out.summary)?)?);
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Footprints { common } => cmd_footprints(common),
        Command::Tile { common } => cmd_tile(common),
        Command::Associate { common } => cmd_associate(common),
        Command::Aggregate { common, tiles } => cmd_aggregate(common, tiles),
        Command::Split { common, samples } => cmd_split(common, samples),
        Command::Eval(a) => cmd_eval(a),
        Command::Map { common, run_dir, classes } => cmd_map(common, run_dir.as_deref(), classes),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Run { common } => cmd_run(common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
