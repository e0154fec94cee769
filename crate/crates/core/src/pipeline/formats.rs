//! Text and raster file formats read and written by the pipeline.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::geometry::{Attitude, Footprint, ImageRecord, Point2};
use crate::labeling::ClassScores;
use crate::split::{SampleLabels, Subset};
use crate::sync::{frame_timestamp, interpolate_track, GpsTrack, NavFix, VideoTiming};
use crate::tiling::{OrthophotoMeta, Raster};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, message: impl Into<String>) -> PipelineError {
    PipelineError::Format { path: path.to_path_buf(), message: message.into() }
}

pub fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Writes every file through a sibling temporary, renaming into place only
/// once all temporaries are written. Temporaries are removed on failure.
pub fn write_files_atomic(files: &[(PathBuf, Vec<u8>)]) -> Result<(), PipelineError> {
    let mut staged: Vec<(PathBuf, &PathBuf)> = Vec::with_capacity(files.len());
    let cleanup = |staged: &[(PathBuf, &PathBuf)]| {
        for (tmp, _) in staged {
            let _ = std::fs::remove_file(tmp);
        }
    };
    for (path, bytes) in files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            if let Err(e) = std::fs::create_dir_all(dir) {
                cleanup(&staged);
                return Err(io_err(dir)(e));
            }
        }
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(format!(".tmp{}", std::process::id()));
        let tmp = path.with_file_name(name);
        if let Err(e) = std::fs::write(&tmp, bytes) {
            cleanup(&staged);
            return Err(io_err(&tmp)(e));
        }
        staged.push((tmp, path));
    }
    for (tmp, path) in &staged {
        if let Err(e) = std::fs::rename(tmp, path) {
            cleanup(&staged);
            return Err(io_err(path)(e));
        }
    }
    Ok(())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, PipelineError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format_err(path, e.to_string()))
}

fn read_csv_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<(u64, T)>, PipelineError> {
    let mut rdr = csv_reader(path)?;
    rdr.deserialize::<T>()
        .enumerate()
        .map(|(i, row)| row.map(|v| (i as u64 + 2, v)).map_err(|e| format_err(path, e.to_string())))
        .collect()
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| PipelineError::Config(format!("csv encoding failed: {e}")))?;
    }
    w.into_inner().map_err(|e| PipelineError::Config(format!("csv encoding failed: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ImageRow {
    image_id: String,
    timestamp_utc: f64,
    easting: f64,
    northing: f64,
    depth_m: f64,
    roll_deg: f64,
    pitch_deg: f64,
    yaw_deg: f64,
}

/// Reads image navigation records; teacher probabilities are left empty.
pub fn read_images_csv(path: &Path) -> Result<Vec<ImageRecord>, PipelineError> {
    let rows: Vec<(u64, ImageRow)> = read_csv_rows(path)?;
    let mut seen = std::collections::BTreeSet::new();
    rows.into_iter()
        .map(|(line, r)| {
            if !seen.insert(r.image_id.clone()) {
                return Err(format_err(path, format!("line {line}: duplicate image_id {:?}", r.image_id)));
            }
            let attitude = Attitude::new(r.roll_deg, r.pitch_deg, r.yaw_deg)
                .map_err(|e| format_err(path, format!("line {line}: {e}")))?;
            Ok(ImageRecord {
                image_id: r.image_id,
                timestamp_utc: r.timestamp_utc,
                camera_position: Point2::new(r.easting, r.northing),
                depth: r.depth_m,
                attitude,
                teacher_probs: BTreeMap::new(),
            })
        })
        .collect()
}

pub fn images_csv_bytes(images: &[ImageRecord]) -> Result<Vec<u8>, PipelineError> {
    csv_bytes(images.iter().map(|r| ImageRow {
        image_id: r.image_id.clone(),
        timestamp_utc: r.timestamp_utc,
        easting: r.camera_position.x,
        northing: r.camera_position.y,
        depth_m: r.depth,
        roll_deg: r.attitude.roll,
        pitch_deg: r.attitude.pitch,
        yaw_deg: r.attitude.yaw,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PredictionRow {
    image_id: String,
    class: String,
    prob: f64,
}

/// Per-image teacher probabilities in long format.
pub fn read_predictions_csv(path: &Path) -> Result<BTreeMap<String, ClassScores>, PipelineError> {
    let rows: Vec<(u64, PredictionRow)> = read_csv_rows(path)?;
    let mut out: BTreeMap<String, ClassScores> = BTreeMap::new();
    for (line, r) in rows {
        if !(0.0..=1.0).contains(&r.prob) {
            return Err(format_err(path, format!("line {line}: probability {} outside [0, 1]", r.prob)));
        }
        let scores = out.entry(r.image_id.clone()).or_default();
        if scores.insert(r.class.clone(), r.prob).is_some() {
            return Err(format_err(
                path,
                format!("line {line}: duplicate prediction for image {:?} class {:?}", r.image_id, r.class),
            ));
        }
    }
    Ok(out)
}

pub fn predictions_csv_bytes(images: &[ImageRecord]) -> Result<Vec<u8>, PipelineError> {
    csv_bytes(images.iter().flat_map(|r| {
        r.teacher_probs.iter().map(|(c, p)| PredictionRow {
            image_id: r.image_id.clone(),
            class: c.clone(),
            prob: *p,
        })
    }))
}

/// Attaches predictions to images. Every image needs predictions and every
/// prediction needs an image.
pub fn merge_predictions(
    images: &mut [ImageRecord],
    mut predictions: BTreeMap<String, ClassScores>,
) -> Result<(), PipelineError> {
    for img in images.iter_mut() {
        img.teacher_probs = predictions.remove(&img.image_id).ok_or_else(|| {
            PipelineError::Stage {
                stage: "inputs",
                source: format!("image {:?} has no teacher predictions", img.image_id).into(),
            }
        })?;
    }
    if let Some(id) = predictions.keys().next() {
        return Err(PipelineError::Stage {
            stage: "inputs",
            source: format!("predictions reference unknown image {id:?}").into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrackRow {
    timestamp_utc: f64,
    easting: f64,
    northing: f64,
    depth_m: f64,
    roll_deg: f64,
    pitch_deg: f64,
    yaw_deg: f64,
}

pub fn read_track_csv(path: &Path) -> Result<GpsTrack, PipelineError> {
    let rows: Vec<(u64, TrackRow)> = read_csv_rows(path)?;
    let fixes = rows
        .into_iter()
        .map(|(line, r)| {
            let attitude = Attitude::new(r.roll_deg, r.pitch_deg, r.yaw_deg)
                .map_err(|e| format_err(path, format!("line {line}: {e}")))?;
            Ok(NavFix {
                timestamp_utc: r.timestamp_utc,
                position: Point2::new(r.easting, r.northing),
                depth: r.depth_m,
                attitude,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    GpsTrack::new(fixes).map_err(|e| format_err(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub image_id: String,
    pub frame_idx: i64,
}

pub fn read_frames_csv(path: &Path) -> Result<Vec<FrameRow>, PipelineError> {
    Ok(read_csv_rows(path)?.into_iter().map(|(_, r)| r).collect())
}

/// Timestamps extracted video frames and looks up their pose on the track.
pub fn images_from_frames(
    frames: &[FrameRow],
    track: &GpsTrack,
    timing: &VideoTiming,
) -> Result<Vec<ImageRecord>, PipelineError> {
    let stage = |e: crate::sync::SyncError| PipelineError::Stage { stage: "sync", source: Box::new(e) };
    timing.validate().map_err(stage)?;
    frames
        .iter()
        .map(|f| {
            let t = frame_timestamp(timing, f.frame_idx);
            let nav = interpolate_track(track, t).map_err(stage)?;
            Ok(ImageRecord {
                image_id: f.image_id.clone(),
                timestamp_utc: t,
                camera_position: nav.position,
                depth: nav.depth,
                attitude: nav.attitude,
                teacher_probs: BTreeMap::new(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SampleRow {
    sample_id: String,
    group_key: String,
    labels: String,
}

/// Samples with `;`-joined labels; an empty field means no labels.
pub fn read_samples_csv(path: &Path) -> Result<Vec<SampleLabels>, PipelineError> {
    let rows: Vec<(u64, SampleRow)> = read_csv_rows(path)?;
    Ok(rows
        .into_iter()
        .map(|(_, r)| SampleLabels {
            sample_id: r.sample_id,
            group_key: r.group_key,
            labels: r.labels.split(';').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
        })
        .collect())
}

pub fn samples_csv_bytes(samples: &[SampleLabels]) -> Result<Vec<u8>, PipelineError> {
    csv_bytes(samples.iter().map(|s| SampleRow {
        sample_id: s.sample_id.clone(),
        group_key: s.group_key.clone(),
        labels: s.labels.iter().cloned().collect::<Vec<_>>().join(";"),
    }))
}

pub fn assignment_csv_bytes(assignment: &BTreeMap<String, Subset>) -> Result<Vec<u8>, PipelineError> {
    #[derive(Serialize)]
    struct Row<'a> {
        sample_id: &'a str,
        subset: &'a str,
    }
    csv_bytes(assignment.iter().map(|(id, s)| Row { sample_id: id, subset: s.as_str() }))
}

/// Long-format scores `tile_id,class,score`.
pub fn read_scores_csv(path: &Path) -> Result<BTreeMap<(String, String), f64>, PipelineError> {
    #[derive(Deserialize)]
    struct Row {
        tile_id: String,
        class: String,
        score: f64,
    }
    let rows: Vec<(u64, Row)> = read_csv_rows(path)?;
    let mut out = BTreeMap::new();
    for (line, r) in rows {
        if out.insert((r.tile_id.clone(), r.class.clone()), r.score).is_some() {
            return Err(format_err(path, format!("line {line}: duplicate key {}/{}", r.tile_id, r.class)));
        }
    }
    Ok(out)
}

pub fn jsonl_bytes<T: Serialize>(items: &[T]) -> Result<Vec<u8>, PipelineError> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).map_err(|e| PipelineError::Config(format!("json encoding failed: {e}")))?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format_err(path, format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn pretty_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, PipelineError> {
    let mut out =
        serde_json::to_vec_pretty(value).map_err(|e| PipelineError::Config(format!("json encoding failed: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| format_err(path, e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct FeatureCollection {
    #[serde(rename = "type")]
    kind: String,
    features: Vec<Feature>,
}

#[derive(Serialize, Deserialize)]
struct Feature {
    #[serde(rename = "type")]
    kind: String,
    properties: FeatureProps,
    geometry: Polygon,
}

#[derive(Serialize, Deserialize)]
struct FeatureProps {
    image_id: String,
}

#[derive(Serialize, Deserialize)]
struct Polygon {
    #[serde(rename = "type")]
    kind: String,
    coordinates: Vec<Vec<[f64; 2]>>,
}

/// Footprints as a GeoJSON FeatureCollection of closed polygon rings.
pub fn footprints_geojson_bytes(footprints: &[Footprint]) -> Result<Vec<u8>, PipelineError> {
    let fc = FeatureCollection {
        kind: "FeatureCollection".into(),
        features: footprints
            .iter()
            .map(|fp| {
                let mut ring: Vec<[f64; 2]> = fp.corners.iter().map(|c| [c.x, c.y]).collect();
                ring.push(ring[0]);
                Feature {
                    kind: "Feature".into(),
                    properties: FeatureProps { image_id: fp.image_id.clone() },
                    geometry: Polygon { kind: "Polygon".into(), coordinates: vec![ring] },
                }
            })
            .collect(),
    };
    pretty_json_bytes(&fc)
}

pub fn read_footprints_geojson(path: &Path) -> Result<Vec<Footprint>, PipelineError> {
    let fc: FeatureCollection = read_json(path)?;
    fc.features
        .into_iter()
        .map(|f| {
            let ring = f.geometry.coordinates.first().ok_or_else(|| format_err(path, "polygon without ring"))?;
            if ring.len() != 5 || ring[0] != ring[4] {
                return Err(format_err(
                    path,
                    format!("footprint {:?} is not a closed quadrilateral", f.properties.image_id),
                ));
            }
            let corners = [0, 1, 2, 3].map(|i| Point2::new(ring[i][0], ring[i][1]));
            Ok(Footprint { image_id: f.properties.image_id, corners })
        })
        .collect()
}

/// Six-line world file for a north-up raster with square pixels.
pub fn world_file_text(origin: Point2, cell: f64) -> String {
    format!(
        "{}\n0\n0\n{}\n{}\n{}\n",
        cell,
        -cell,
        origin.x + cell / 2.0,
        origin.y - cell / 2.0
    )
}

/// Parses a world file into `(origin, cell size)`. Rotated or non-square
/// pixels are rejected.
pub fn parse_world_file(text: &str, path: &Path) -> Result<(Point2, f64), PipelineError> {
    let vals: Vec<f64> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<f64>().map_err(|e| format_err(path, format!("bad world file value {l:?}: {e}"))))
        .collect::<Result<_, _>>()?;
    let [a, d, b, e, c, f] = vals[..] else {
        return Err(format_err(path, format!("world file needs 6 values, got {}", vals.len())));
    };
    if d != 0.0 || b != 0.0 {
        return Err(format_err(path, "rotated world files are not supported"));
    }
    if !(a > 0.0) || (e + a).abs() > 1e-12 * a {
        return Err(format_err(path, format!("pixels must be square and north-up, got A={a} E={e}")));
    }
    Ok((Point2::new(c - a / 2.0, f - e / 2.0), a))
}

/// Sidecar path with the conventional world-file extension (`png` to `pgw`).
pub fn world_file_path(image: &Path) -> PathBuf {
    let ext = image.extension().and_then(|e| e.to_str()).unwrap_or("");
    let chars: Vec<char> = ext.chars().collect();
    let wext = match chars[..] {
        [first, .., last] => format!("{first}{last}w"),
        _ => "wld".to_string(),
    };
    image.with_extension(wext)
}

pub fn crs_file_path(image: &Path) -> PathBuf {
    image.with_extension("prj")
}

/// Loads an RGB orthophoto with its world file and optional CRS sidecar.
pub fn load_orthophoto(
    image: &Path,
    world: Option<&Path>,
    crs: Option<&Path>,
) -> Result<(Raster, OrthophotoMeta), PipelineError> {
    let img = image::open(image).map_err(|e| format_err(image, e.to_string()))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raster = Raster::new(w, h, 3, img.into_raw()).map_err(|e| format_err(image, e.to_string()))?;
    let meta = read_ortho_meta(image, world, crs, w, h)?;
    Ok((raster, meta))
}

/// Georeferencing of an orthophoto without decoding its pixels.
pub fn read_orthophoto_meta(
    image: &Path,
    world: Option<&Path>,
    crs: Option<&Path>,
) -> Result<OrthophotoMeta, PipelineError> {
    let (w, h) = image::image_dimensions(image).map_err(|e| format_err(image, e.to_string()))?;
    read_ortho_meta(image, world, crs, w as usize, h as usize)
}

fn read_ortho_meta(
    image: &Path,
    world: Option<&Path>,
    crs: Option<&Path>,
    width_px: usize,
    height_px: usize,
) -> Result<OrthophotoMeta, PipelineError> {
    let world_path = world.map_or_else(|| world_file_path(image), Path::to_path_buf);
    let (origin, gsd) = parse_world_file(&read_text(&world_path)?, &world_path)?;
    let crs_id = match crs {
        Some(p) => read_text(p)?.trim().to_string(),
        None => {
            let p = crs_file_path(image);
            if p.exists() {
                read_text(&p)?.trim().to_string()
            } else {
                String::new()
            }
        }
    };
    let meta = OrthophotoMeta { width_px, height_px, gsd, origin, crs_id };
    meta.validate().map_err(|e| format_err(image, e.to_string()))?;
    Ok(meta)
}

/// PNG bytes of an 8-bit raster with 1 or 3 channels.
pub fn png_bytes(raster: &Raster) -> Result<Vec<u8>, PipelineError> {
    let color = match raster.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        n => return Err(PipelineError::Config(format!("cannot encode {n}-channel raster as PNG"))),
    };
    let mut out = Cursor::new(Vec::new());
    image::write_buffer_with_format(
        &mut out,
        &raster.data,
        raster.width as u32,
        raster.height as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| PipelineError::Config(format!("png encoding failed: {e}")))?;
    Ok(out.into_inner())
}

/// Files for a georeferenced PNG: the image, its world file and CRS sidecar.
pub fn georeferenced_png_files(
    raster: &Raster,
    origin: Point2,
    cell: f64,
    crs_id: &str,
    png_path: &Path,
) -> Result<Vec<(PathBuf, Vec<u8>)>, PipelineError> {
    Ok(vec![
        (png_path.to_path_buf(), png_bytes(raster)?),
        (world_file_path(png_path), world_file_text(origin, cell).into_bytes()),
        (crs_file_path(png_path), format!("{crs_id}\n").into_bytes()),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_file_round_trip_is_exact() {
        let origin = Point2::new(512_345.125, 7_654_321.75);
        let text = world_file_text(origin, 0.05);
        let (o, cell) = parse_world_file(&text, Path::new("x.pgw")).unwrap();
        assert_eq!(cell, 0.05);
        assert!((o.x - origin.x).abs() < 1e-9 && (o.y - origin.y).abs() < 1e-9);
    }

    #[test]
    fn world_file_rejections() {
        let p = Path::new("x.pgw");
        assert!(parse_world_file("1\n0.1\n0\n-1\n0\n0\n", p).is_err());
        assert!(parse_world_file("1\n0\n0\n-2\n0\n0\n", p).is_err());
        assert!(parse_world_file("1\n0\n0\n-1\n0\n", p).is_err());
        assert!(parse_world_file("1\n0\n0\n-1\n0\nx\n", p).is_err());
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(world_file_path(Path::new("a/ortho.png")), PathBuf::from("a/ortho.pgw"));
        assert_eq!(world_file_path(Path::new("a/ortho.tif")), PathBuf::from("a/ortho.tfw"));
        assert_eq!(crs_file_path(Path::new("a/ortho.png")), PathBuf::from("a/ortho.prj"));
    }

    #[test]
    fn merge_requires_both_sides() {
        let img = |id: &str| ImageRecord {
            image_id: id.into(),
            timestamp_utc: 0.0,
            camera_position: Point2::new(0.0, 0.0),
            depth: 1.0,
            attitude: Attitude::level(),
            teacher_probs: BTreeMap::new(),
        };
        let preds = |ids: &[&str]| -> BTreeMap<String, ClassScores> {
            ids.iter().map(|id| (id.to_string(), [("Sand".to_string(), 0.5)].into())).collect()
        };
        let mut imgs = vec![img("a"), img("b")];
        assert!(merge_predictions(&mut imgs, preds(&["a"])).is_err());
        assert!(merge_predictions(&mut imgs, preds(&["a", "b", "c"])).is_err());
        merge_predictions(&mut imgs, preds(&["a", "b"])).unwrap();
        assert_eq!(imgs[1].teacher_probs["Sand"], 0.5);
    }

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("sub/a.txt");
        let b = dir.path().join("b.txt");
        write_files_atomic(&[(a.clone(), b"1".to_vec()), (b.clone(), b"2".to_vec())]).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), b"1");
        assert_eq!(std::fs::read(&b).unwrap(), b"2");
        // a directory in place of the target makes the rename fail
        let blocked = dir.path().join("blocked");
        std::fs::create_dir_all(blocked.join("inner")).unwrap();
        let c = dir.path().join("c.txt");
        assert!(write_files_atomic(&[(c.clone(), b"3".to_vec()), (blocked, b"4".to_vec())]).is_err());
        let leftovers: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
