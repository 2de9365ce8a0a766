use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::ply::{read_vertices, write_vertices, Property, ScalarType, VertexTable};
use crate::raster::{Camera, Image};

pub const MANIFEST_FORMAT: &str = "frog-manifest v1";
const POSE_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    /// Rig camera this view came from.
    pub camera_id: usize,
    pub camera: Camera,
    pub time: f64,
    pub image: Image,
    pub split: Split,
    /// Path relative to the manifest, when the frame came from disk.
    pub image_path: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitPoint {
    pub position: [f64; 3],
    pub rgb: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub frames: Vec<FrameRecord>,
    pub init_points: Vec<InitPoint>,
}

impl SceneDataset {
    pub fn validate(&self) -> Result<()> {
        if !self.frames.iter().any(|f| f.split == Split::Train) {
            return Err(Error::Dataset("no train frames".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if !(0.0..=1.0).contains(&f.time) {
                return Err(Error::Frame { frame: i, reason: format!("time out of range: {}", f.time) });
            }
            if f.image.width != f.camera.width || f.image.height != f.camera.height {
                return Err(Error::Frame {
                    frame: i,
                    reason: format!("image is {}x{}, camera {}x{}", f.image.width, f.image.height, f.camera.width, f.camera.height),
                });
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&FrameRecord> {
        self.frames.iter().filter(|f| f.split == split).collect()
    }

    /// Number of distinct timestamps.
    pub fn frame_count(&self) -> usize {
        self.frames.iter().map(|f| f.time.to_bits()).collect::<BTreeSet<_>>().len()
    }

    pub fn camera_ids(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.camera_id).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Radius of the sphere around the camera centroid that holds every camera, times 1.1.
    pub fn camera_extent(&self) -> f64 {
        let centers: Vec<_> = self.frames.iter().map(|f| f.camera.center()).collect();
        if centers.is_empty() {
            return 1.0;
        }
        let mean = centers.iter().sum::<nalgebra::Vector3<f64>>() / centers.len() as f64;
        let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
        if r > 0.0 {
            r * 1.1
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Intrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFrame {
    #[serde(default)]
    camera: usize,
    time: f64,
    image: String,
    split: Split,
    camera_to_world: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intrinsics: Option<Intrinsics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intrinsics: Option<Intrinsics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    init_points: Option<String>,
    frames: Vec<ManifestFrame>,
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    svd.u.unwrap() * svd.v_t.unwrap()
}

fn frame_camera(i: usize, f: &ManifestFrame, shared: Option<&Intrinsics>) -> Result<Camera> {
    let bad = |reason: String| Error::Frame { frame: i, reason };
    let k = f.intrinsics.as_ref().or(shared).ok_or_else(|| bad("no intrinsics".into()))?;
    if f.camera_to_world.len() != 16 {
        return Err(bad(format!("camera_to_world has {} entries, expected 16", f.camera_to_world.len())));
    }
    let mut c2w = Matrix4::from_row_slice(&f.camera_to_world);
    if c2w.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite pose".into()));
    }
    let r: Matrix3<f64> = c2w.fixed_view::<3, 3>(0, 0).into_owned();
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > POSE_TOLERANCE || r.determinant() <= 0.0 {
        return Err(bad(format!("rotation is not orthonormal (error {err:.2e})")));
    }
    c2w.fixed_view_mut::<3, 3>(0, 0).copy_from(&nearest_rotation(&r));
    Camera::new(c2w, k.fx, k.fy, k.cx, k.cy, k.width, k.height).map_err(|e| bad(e.to_string()))
}

/// Loads a `frog-manifest v1` JSON dataset with its PNG frames and optional init-points PLY.
pub fn load_dataset(manifest_path: &Path) -> Result<SceneDataset> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::Dataset(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Dataset(format!("unsupported manifest format `{}`", manifest.format)));
    }
    let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let frames = par::map_slice(&manifest.frames.iter().enumerate().collect::<Vec<_>>(), |&(i, f)| -> Result<FrameRecord> {
        if !(0.0..=1.0).contains(&f.time) {
            return Err(Error::Frame { frame: i, reason: format!("time out of range: {}", f.time) });
        }
        let camera = frame_camera(i, f, manifest.intrinsics.as_ref())?;
        let path = root.join(&f.image);
        if !path.is_file() {
            return Err(Error::Frame { frame: i, reason: format!("missing image {}", path.display()) });
        }
        let image = Image::load(&path).map_err(|e| Error::Frame { frame: i, reason: format!("{}: {e}", path.display()) })?;
        Ok(FrameRecord { camera_id: f.camera, camera, time: f.time, image, split: f.split, image_path: Some(f.image.clone()) })
    });
    let frames = frames.into_iter().collect::<Result<Vec<_>>>()?;
    let init_points = match &manifest.init_points {
        Some(p) => read_init_points(&root.join(p))?,
        None => Vec::new(),
    };
    let ds = SceneDataset { frames, init_points };
    ds.validate()?;
    Ok(ds)
}

/// Writes `manifest.json`, `images/*.png` and `points.ply` under `dir`.
pub fn write_dataset(ds: &SceneDataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("images"))?;
    let mut frames = Vec::with_capacity(ds.frames.len());
    for (i, f) in ds.frames.iter().enumerate() {
        let rel = format!("images/c{:02}_{:05}.png", f.camera_id, i);
        f.image.save_png(&dir.join(&rel))?;
        let c = &f.camera;
        frames.push(ManifestFrame {
            camera: f.camera_id,
            time: f.time,
            image: rel,
            split: f.split,
            camera_to_world: c.camera_to_world.transpose().as_slice().to_vec(),
            intrinsics: Some(Intrinsics { fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy, width: c.width, height: c.height }),
        });
    }
    let manifest = Manifest { format: MANIFEST_FORMAT.into(), intrinsics: None, init_points: Some("points.ply".into()), frames };
    write_init_points(&dir.join("points.ply"), &ds.init_points)?;
    let path = dir.join("manifest.json");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.flush()?;
    Ok(path)
}

pub fn write_init_points(path: &Path, points: &[InitPoint]) -> Result<()> {
    let props = ["x", "y", "z"].iter().map(|n| Property::new(*n, ScalarType::F32)).chain(["red", "green", "blue"].iter().map(|n| Property::new(*n, ScalarType::U8)));
    let mut table = VertexTable { properties: props.collect(), values: Vec::with_capacity(points.len() * 6) };
    for p in points {
        table.values.extend_from_slice(&p.position);
        table.values.extend(p.rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round()));
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_vertices(&mut w, &table)?;
    w.flush()?;
    Ok(())
}

/// Reads `x y z` and, if present, `red green blue` (8-bit) vertex properties.
pub fn read_init_points(path: &Path) -> Result<Vec<InitPoint>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let table = read_vertices(std::io::BufReader::new(file))?;
    let (x, y, z) = (table.column("x")?, table.column("y")?, table.column("z")?);
    let colors = match (table.column("red"), table.column("green"), table.column("blue")) {
        (Ok(r), Ok(g), Ok(b)) => Some((r, g, b)),
        _ => None,
    };
    Ok((0..table.len())
        .map(|i| InitPoint {
            position: [x[i], y[i], z[i]],
            rgb: colors.as_ref().map_or([0.5; 3], |(r, g, b)| [r[i] / 255.0, g[i] / 255.0, b[i] / 255.0]),
        })
        .collect())
}
