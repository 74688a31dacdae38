//! Datasets: Blender-style `transforms_<split>.json` scenes, NSVF-style pose
//! folders and a built-in analytic sphere scene with exact ground truth.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::RadianceField;
use crate::raster::Image;
use crate::render::{scene_ray, Camera, SceneTransform};

/// Synthetic Blender scenes live in this box.
pub const BLENDER_AABB: (f64, f64) = (-1.5, 1.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split `{other}` (train, val, test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub scene_transform: SceneTransform,
    pub background: [f32; 3],
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.len() != self.images.len() {
            return Err(Error::Dataset(format!(
                "{} cameras but {} images",
                self.cameras.len(),
                self.images.len()
            )));
        }
        if let Some(first) = self.images.first() {
            for (k, (img, cam)) in self.images.iter().zip(&self.cameras).enumerate() {
                if (img.width, img.height) != (first.width, first.height) {
                    return Err(Error::Dataset(format!(
                        "image {k} is {}x{}, expected {}x{}",
                        img.width, img.height, first.width, first.height
                    )));
                }
                if (cam.width, cam.height) != (img.width, img.height) {
                    return Err(Error::Dataset(format!("camera {k} does not match its image size")));
                }
                cam.validate()?;
            }
        }
        Ok(())
    }

    /// Mean color over every pixel of every image.
    pub fn mean_color(&self) -> [f32; 3] {
        let mut acc = [0.0f64; 3];
        let mut n = 0usize;
        for img in &self.images {
            let m = img.mean_color();
            for c in 0..3 {
                acc[c] += m[c] * img.pixels.len() as f64;
            }
            n += img.pixels.len();
        }
        acc.map(|v| (v / n.max(1) as f64) as f32)
    }
}

#[derive(Debug, Deserialize)]
struct TransformsFile {
    camera_angle_x: f64,
    frames: Vec<Frame>,
}

#[derive(Debug, Deserialize)]
struct Frame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

fn resolve_image(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_some() {
        p
    } else {
        p.with_extension("png")
    }
}

/// Load `dir/transforms_<split>.json` and its images. RGBA images are
/// composited onto `background`; `downsample` > 1 box-filters images and
/// scales the focal length to match.
pub fn load_blender(dir: &Path, split: Split, background: [f32; 3], downsample: usize) -> Result<Dataset> {
    let json_path = dir.join(format!("transforms_{split}.json"));
    let text = std::fs::read_to_string(&json_path).map_err(|source| Error::Read {
        path: json_path.clone(),
        source,
    })?;
    let meta: TransformsFile = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: json_path.clone(),
        source,
    })?;
    if meta.frames.is_empty() {
        return Err(Error::Dataset(format!("{} lists no frames", json_path.display())));
    }
    let images = meta
        .frames
        .par_iter()
        .map(|f| {
            let path = resolve_image(dir, &f.file_path);
            Image::load_png(&path, background).map(|img| img.downsample(downsample.max(1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let cameras = meta
        .frames
        .iter()
        .zip(&images)
        .map(|(f, img)| Camera::from_fov(img.width, img.height, meta.camera_angle_x, f.transform_matrix))
        .collect();
    let ds = Dataset {
        split,
        cameras,
        images,
        scene_transform: SceneTransform::from_aabb(BLENDER_AABB.0, BLENDER_AABB.1),
        background,
    };
    ds.validate()?;
    Ok(ds)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_numbers(path: &Path, text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Dataset(format!("{}: `{t}` is not a number", path.display())))
        })
        .collect()
}

/// Map an axis-aligned box into the unit cube with one uniform scale, centered.
pub fn transform_for_box(min: [f64; 3], max: [f64; 3]) -> SceneTransform {
    let extent = (0..3).map(|a| max[a] - min[a]).fold(0.0, f64::max);
    let scale = 1.0 / extent;
    SceneTransform {
        scale,
        offset: [0, 1, 2].map(|a| 0.5 - 0.5 * (min[a] + max[a]) * scale),
    }
}

/// Load an NSVF-style scene: `intrinsics.txt` (focal length first),
/// `bbox.txt` (min and max corners), and `pose/` and `rgb/` files prefixed
/// `0_` (train), `1_` (val) and `2_` (test). Poses are camera-to-world in the
/// OpenCV convention. Scenes without a `2_` split use `1_` for test.
pub fn load_nsvf(dir: &Path, split: Split, background: [f32; 3], downsample: usize) -> Result<Dataset> {
    let intrinsics_path = dir.join("intrinsics.txt");
    let intrinsics = parse_numbers(&intrinsics_path, &read_text(&intrinsics_path)?)?;
    let focal = *intrinsics
        .first()
        .ok_or_else(|| Error::Dataset(format!("{} is empty", intrinsics_path.display())))?;
    let bbox_path = dir.join("bbox.txt");
    let bbox = parse_numbers(&bbox_path, &read_text(&bbox_path)?)?;
    if bbox.len() < 6 {
        return Err(Error::Dataset(format!("{} needs six bounds", bbox_path.display())));
    }

    let pose_dir = dir.join("pose");
    let mut names: Vec<String> = std::fs::read_dir(&pose_dir)
        .map_err(|source| Error::Read {
            path: pose_dir.clone(),
            source,
        })?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".txt"))
        .collect();
    names.sort();
    let with_prefix = |p: &str| -> Vec<String> { names.iter().filter(|n| n.starts_with(p)).cloned().collect() };
    let frames = match split {
        Split::Train => with_prefix("0_"),
        Split::Val => with_prefix("1_"),
        Split::Test => {
            let test = with_prefix("2_");
            if test.is_empty() {
                with_prefix("1_")
            } else {
                test
            }
        }
    };
    if frames.is_empty() {
        return Err(Error::Dataset(format!("{} has no {split} poses", pose_dir.display())));
    }

    let ds = downsample.max(1);
    let images = frames
        .par_iter()
        .map(|name| {
            let path = dir.join("rgb").join(name.replace(".txt", ".png"));
            Image::load_png(&path, background).map(|img| img.downsample(ds))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cameras = Vec::with_capacity(frames.len());
    for (name, img) in frames.iter().zip(&images) {
        let path = pose_dir.join(name);
        let m = parse_numbers(&path, &read_text(&path)?)?;
        if m.len() < 16 {
            return Err(Error::Dataset(format!("{} needs a 4×4 matrix", path.display())));
        }
        // OpenCV (+z forward, +y down) to OpenGL (-z forward, +y up)
        let pose = std::array::from_fn(|r| std::array::from_fn(|c| if c == 1 || c == 2 { -m[4 * r + c] } else { m[4 * r + c] }));
        cameras.push(Camera {
            width: img.width,
            height: img.height,
            focal: focal / ds as f64,
            pose,
        });
    }
    let dataset = Dataset {
        split,
        cameras,
        images,
        scene_transform: transform_for_box([bbox[0], bbox[1], bbox[2]], [bbox[3], bbox[4], bbox[5]]),
        background,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Blender layout when `transforms_<split>.json` exists or no `pose/`
/// directory is present, NSVF layout otherwise.
pub fn load_dataset(dir: &Path, split: Split, background: [f32; 3], downsample: usize) -> Result<Dataset> {
    if !dir.join(format!("transforms_{split}.json")).exists() && dir.join("pose").is_dir() {
        load_nsvf(dir, split, background, downsample)
    } else {
        load_blender(dir, split, background, downsample)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: [f32; 3],
    pub radius: f32,
    pub density: f32,
    pub albedo: [f32; 3],
}

/// Constant-density colored spheres inside the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleScene {
    pub spheres: Vec<Sphere>,
    pub background: [f32; 3],
}

impl OracleScene {
    /// Three overlapping-free spheres of different sizes and colors.
    pub fn spheres() -> Self {
        Self {
            spheres: vec![
                Sphere { center: [0.5, 0.5, 0.5], radius: 0.2, density: 60.0, albedo: [0.9, 0.25, 0.2] },
                Sphere { center: [0.76, 0.62, 0.36], radius: 0.1, density: 60.0, albedo: [0.2, 0.8, 0.3] },
                Sphere { center: [0.3, 0.32, 0.7], radius: 0.12, density: 60.0, albedo: [0.2, 0.35, 0.9] },
            ],
            background: [1.0; 3],
        }
    }

    pub fn from_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let scene: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, s) in self.spheres.iter().enumerate() {
            let inside = (0..3).all(|a| s.center[a] - s.radius >= 0.0 && s.center[a] + s.radius <= 1.0);
            if !inside || !(s.radius > 0.0) {
                return Err(Error::Dataset(format!("sphere {k} is not inside the unit cube")));
            }
            if !(s.density > 0.0) {
                return Err(Error::Dataset(format!("sphere {k} needs positive density")));
            }
        }
        Ok(())
    }

    /// Density and density-weighted albedo at `p`.
    pub fn sample(&self, p: [f32; 3]) -> (f32, [f32; 3]) {
        let mut sigma = 0.0;
        let mut color = [0.0f32; 3];
        for s in &self.spheres {
            let d2: f32 = (0..3).map(|a| (p[a] - s.center[a]).powi(2)).sum();
            if d2 <= s.radius * s.radius {
                sigma += s.density;
                for c in 0..3 {
                    color[c] += s.density * s.albedo[c];
                }
            }
        }
        if sigma > 0.0 {
            color = color.map(|v| v / sigma);
        }
        (sigma, color)
    }

    /// Ground-truth pixel color by fixed-step midpoint quadrature from the
    /// ray's entry into the unit cube.
    fn trace(&self, origin: [f32; 3], dir: [f32; 3], step: f32) -> [f32; 3] {
        let bg = self.background.map(|v| v as f64);
        let mut t0 = f32::NEG_INFINITY;
        let mut t1 = f32::INFINITY;
        for a in 0..3 {
            if dir[a] == 0.0 {
                if !(0.0..=1.0).contains(&origin[a]) {
                    return self.background;
                }
                continue;
            }
            let (lo, hi) = ((0.0 - origin[a]) / dir[a], (1.0 - origin[a]) / dir[a]);
            t0 = t0.max(lo.min(hi));
            t1 = t1.min(lo.max(hi));
        }
        t0 = t0.max(0.0);
        if t0 >= t1 {
            return self.background;
        }
        let mut trans = 1.0f64;
        let mut acc = [0.0f64; 3];
        let mut k = 0u32;
        loop {
            let a = t0 + k as f32 * step;
            if t1 - a <= step * 1e-3 {
                break;
            }
            let b = (a + step).min(t1);
            let m = 0.5 * (a + b);
            let p = [0, 1, 2].map(|i| origin[i] + m * dir[i]);
            let (sigma, color) = self.sample(p);
            if sigma > 0.0 {
                let alpha = 1.0 - (-(sigma as f64) * (b - a) as f64).exp();
                for c in 0..3 {
                    acc[c] += trans * alpha * color[c] as f64;
                }
                trans *= 1.0 - alpha;
            }
            k += 1;
        }
        [0, 1, 2].map(|c| (acc[c] + trans * bg[c]) as f32)
    }
}

impl RadianceField for OracleScene {
    fn densities(&self, positions: &[[f32; 3]]) -> Vec<f32> {
        positions.iter().map(|&p| self.sample(p).0).collect()
    }

    fn radiance(&self, positions: &[[f32; 3]], _dirs: &[[f32; 3]]) -> (Vec<f32>, Vec<[f32; 3]>) {
        positions.iter().map(|&p| self.sample(p)).unzip()
    }
}

/// Camera rig for oracle scenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRig {
    pub resolution: usize,
    pub camera_angle_x: f64,
    /// Distance from the cube center.
    pub radius: f64,
    /// Quadrature step for ground truth images.
    pub step: f32,
    /// Each pixel averages an n×n stratified grid of rays over its area, so
    /// targets match what jittered training rays see on average. 1 renders
    /// pixel centers only.
    pub supersample: usize,
}

impl Default for OracleRig {
    fn default() -> Self {
        Self {
            resolution: 64,
            camera_angle_x: 0.691_111_5,
            radius: 2.2,
            step: crate::sampler::DEFAULT_STEP,
            supersample: 4,
        }
    }
}

/// Cameras on a Fibonacci sphere around the cube center (up = +y); the seed
/// picks a random azimuthal offset for the whole rig.
pub fn oracle_cameras(n_views: usize, rig: &OracleRig, seed: u64) -> Vec<Camera> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n_views)
        .map(|k| {
            let y = 1.0 - 2.0 * (k as f64 + 0.5) / n_views as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = offset + golden * k as f64;
            let eye = [
                0.5 + rig.radius * r * phi.cos(),
                0.5 + rig.radius * y,
                0.5 + rig.radius * r * phi.sin(),
            ];
            Camera::look_at(rig.resolution, rig.resolution, rig.camera_angle_x, eye, [0.5; 3], [0.0, 1.0, 0.0])
        })
        .collect()
}

fn oracle_pixel(scene: &OracleScene, cam: &Camera, pixel: (usize, usize), rig: &OracleRig) -> Result<[f32; 3]> {
    let n = rig.supersample.max(1);
    if n == 1 {
        let ray = scene_ray(cam, &SceneTransform::IDENTITY, pixel, None)?;
        return Ok(scene.trace(ray.origin, ray.dir, rig.step));
    }
    let mut acc = [0.0f64; 3];
    for sy in 0..n {
        for sx in 0..n {
            let jitter = ((sx as f64 + 0.5) / n as f64 - 0.5, (sy as f64 + 0.5) / n as f64 - 0.5);
            let ray = scene_ray(cam, &SceneTransform::IDENTITY, pixel, Some(jitter))?;
            let c = scene.trace(ray.origin, ray.dir, rig.step);
            for k in 0..3 {
                acc[k] += c[k] as f64;
            }
        }
    }
    Ok(acc.map(|v| (v / (n * n) as f64) as f32))
}

/// Render ground-truth views of an oracle scene. The scene already lives in
/// normalized coordinates, so the scene transform is the identity.
pub fn generate_oracle(scene: &OracleScene, split: Split, n_views: usize, rig: &OracleRig, seed: u64) -> Result<Dataset> {
    scene.validate()?;
    let cameras = oracle_cameras(n_views, rig, seed);
    let images = cameras
        .par_iter()
        .map(|cam| {
            let mut pixels = Vec::with_capacity(cam.width * cam.height);
            for j in 0..cam.height {
                for i in 0..cam.width {
                    pixels.push(oracle_pixel(scene, cam, (i, j), rig)?);
                }
            }
            Ok(Image {
                width: cam.width,
                height: cam.height,
                pixels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        split,
        cameras,
        images,
        scene_transform: SceneTransform::IDENTITY,
        background: scene.background,
    };
    ds.validate()?;
    Ok(ds)
}

/// Rig seed for each split; the splits use disjoint azimuth offsets.
pub fn oracle_split_seed(split: Split, seed: u64) -> u64 {
    const STRIDE: u64 = 0x9E37_79B9;
    match split {
        Split::Train => seed,
        Split::Test => seed.wrapping_add(STRIDE),
        Split::Val => seed.wrapping_add(STRIDE.wrapping_mul(2)),
    }
}

/// Train and test splits with disjoint rigs.
pub fn oracle_splits(scene: &OracleScene, n_train: usize, n_test: usize, rig: &OracleRig, seed: u64) -> Result<(Dataset, Dataset)> {
    let train = generate_oracle(scene, Split::Train, n_train, rig, oracle_split_seed(Split::Train, seed))?;
    let test = generate_oracle(scene, Split::Test, n_test, rig, oracle_split_seed(Split::Test, seed))?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rig(res: usize) -> OracleRig {
        OracleRig {
            resolution: res,
            step: 1.0 / 512.0,
            ..Default::default()
        }
    }

    #[test]
    fn empty_scene_is_background() {
        let scene = OracleScene {
            spheres: vec![],
            background: [0.2, 0.4, 0.6],
        };
        let ds = generate_oracle(&scene, Split::Train, 3, &rig(8), 0).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(ds.images.iter().all(|img| img.pixels.iter().all(|&p| p == [0.2, 0.4, 0.6])));
    }

    #[test]
    fn opaque_center_sphere_shows_albedo() {
        let scene = OracleScene {
            spheres: vec![Sphere { center: [0.5; 3], radius: 0.25, density: 400.0, albedo: [0.1, 0.7, 0.4] }],
            background: [1.0; 3],
        };
        let ds = generate_oracle(&scene, Split::Test, 5, &rig(17), 3).unwrap();
        for img in &ds.images {
            let p = img.get(8, 8);
            for c in 0..3 {
                assert!((p[c] - scene.spheres[0].albedo[c]).abs() < 1.0 / 255.0, "{p:?}");
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let s = OracleScene::spheres();
        let a = generate_oracle(&s, Split::Train, 2, &rig(12), 9).unwrap();
        let b = generate_oracle(&s, Split::Train, 2, &rig(12), 9).unwrap();
        let c = generate_oracle(&s, Split::Train, 2, &rig(12), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.cameras, c.cameras);
    }

    #[test]
    fn rig_sees_the_cube() {
        for cam in oracle_cameras(20, &OracleRig::default(), 1) {
            assert!(cam.rotation_error() < 1e-9);
            let o = cam.origin();
            let r: f64 = (0..3).map(|a| (o[a] - 0.5).powi(2)).sum::<f64>().sqrt();
            assert!((r - 2.2).abs() < 1e-9);
        }
    }

    #[test]
    fn default_scene_valid_and_json_roundtrip() {
        let s = OracleScene::spheres();
        s.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scene.json");
        std::fs::write(&p, serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(OracleScene::from_json(&p).unwrap(), s);
        let mut bad = s.clone();
        bad.spheres[0].radius = 0.7;
        assert!(bad.validate().is_err());
    }

    fn write_blender(dir: &Path, n: usize, skip_image: bool) {
        let frames: Vec<serde_json::Value> = (0..n)
            .map(|k| {
                serde_json::json!({
                    "file_path": format!("./train/r_{k}"),
                    "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,4.0],[0,0,0,1]],
                })
            })
            .collect();
        let doc = serde_json::json!({"camera_angle_x": std::f64::consts::FRAC_PI_2, "frames": frames});
        std::fs::write(dir.join("transforms_train.json"), doc.to_string()).unwrap();
        std::fs::create_dir_all(dir.join("train")).unwrap();
        for k in 0..n {
            if skip_image && k == n - 1 {
                continue;
            }
            let px: Vec<u8> = (0..8 * 8).flat_map(|_| [255u8, 0, 0, 0]).collect();
            image::save_buffer(dir.join(format!("train/r_{k}.png")), &px, 8, 8, image::ColorType::Rgba8).unwrap();
        }
    }

    #[test]
    fn blender_loader() {
        let dir = tempfile::tempdir().unwrap();
        write_blender(dir.path(), 3, false);
        let ds = load_blender(dir.path(), Split::Train, [1.0; 3], 1).unwrap();
        assert_eq!(ds.len(), 3);
        assert!((ds.cameras[0].focal - 4.0).abs() < 1e-9);
        assert_eq!(ds.images[0].pixels[0], [1.0, 1.0, 1.0]);
        assert_eq!(ds.scene_transform.apply([0.0; 3]), [0.5; 3]);
        let half = load_blender(dir.path(), Split::Train, [1.0; 3], 2).unwrap();
        assert_eq!((half.images[0].width, half.cameras[0].width), (4, 4));
        assert!((half.cameras[0].focal - 2.0).abs() < 1e-9);
    }

    #[test]
    fn blender_loader_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_blender(dir.path(), Split::Test, [1.0; 3], 1), Err(Error::Read { .. })));
        std::fs::write(dir.path().join("transforms_test.json"), "{ not json").unwrap();
        assert!(matches!(load_blender(dir.path(), Split::Test, [1.0; 3], 1), Err(Error::Json { .. })));
        write_blender(dir.path(), 2, true);
        assert!(matches!(load_blender(dir.path(), Split::Train, [1.0; 3], 1), Err(Error::Image { .. })));
    }

    #[test]
    fn nsvf_loader() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        std::fs::write(d.join("intrinsics.txt"), "8.0 4.0 4.0 0.\n0. 0. 0.\n0.\n1.\n8 8\n").unwrap();
        std::fs::write(d.join("bbox.txt"), "-1 -2 -1 1 2 1 0.1\n").unwrap();
        std::fs::create_dir_all(d.join("pose")).unwrap();
        std::fs::create_dir_all(d.join("rgb")).unwrap();
        // camera at z = -5 looking along +z in OpenCV convention
        let pose = "1 0 0 0\n0 1 0 0\n0 0 1 -5\n0 0 0 1\n";
        for name in ["0_train_0000", "0_train_0001", "1_test_0000"] {
            std::fs::write(d.join(format!("pose/{name}.txt")), pose).unwrap();
            let px: Vec<u8> = (0..8 * 8).flat_map(|_| [0u8, 255, 0, 255]).collect();
            image::save_buffer(d.join(format!("rgb/{name}.png")), &px, 8, 8, image::ColorType::Rgba8).unwrap();
        }

        let train = load_dataset(d, Split::Train, [1.0; 3], 1).unwrap();
        assert_eq!(train.len(), 2);
        assert_eq!(train.images[0].pixels[0], [0.0, 1.0, 0.0]);
        let (o, dir_c) = crate::render::generate_ray(&train.cameras[0], (4, 4), Some((-0.5, -0.5))).unwrap();
        assert_eq!(o, [0.0, 0.0, -5.0]);
        assert!((dir_c[2] - 1.0).abs() < 1e-12 && dir_c[0].abs() < 1e-12 && dir_c[1].abs() < 1e-12);
        // pixel rows grow downward in image space and along +y in OpenCV
        let (_, below) = crate::render::generate_ray(&train.cameras[0], (4, 7), None).unwrap();
        assert!(below[1] > 0.0);

        let t = train.scene_transform;
        assert_eq!(t.apply([0.0, -2.0, 0.0]), [0.5, 0.0, 0.5]);
        assert_eq!(t.apply([1.0, 2.0, 1.0]), [0.75, 1.0, 0.75]);

        assert_eq!(load_dataset(d, Split::Test, [1.0; 3], 1).unwrap().len(), 1);
        assert_eq!(load_nsvf(d, Split::Val, [1.0; 3], 1).unwrap().len(), 1);
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(load_nsvf(empty.path(), Split::Train, [1.0; 3], 1), Err(Error::Read { .. })));
        let half = load_nsvf(d, Split::Train, [1.0; 3], 2).unwrap();
        assert!((half.cameras[0].focal - 4.0).abs() < 1e-12);
    }
}
