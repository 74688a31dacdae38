//! Camera rays and volumetric compositing.
//!
//! Along a ray with samples `i = 1..N`:
//!
//! ```text
//! α_i = 1 - exp(-σ_i δ_i)     T_i = Π_{j<i} (1 - α_j)     Ĉ = Σ T_i α_i c_i + T_{N+1} · background
//! ```
//!
//! Accumulation is done in `f64`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::RadianceField;
use crate::raster::Image;
use crate::sampler::{march_ray_into, MarchParams, OccupancyGrid, Ray, RaySample};

/// Pinhole camera with an OpenGL-style camera-to-world pose (looking down -z).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub pose: [[f64; 4]; 4],
}

impl Camera {
    pub fn from_fov(width: usize, height: usize, camera_angle_x: f64, pose: [[f64; 4]; 4]) -> Self {
        Self {
            width,
            height,
            focal: focal_from_fov(width, camera_angle_x),
            pose,
        }
    }

    /// Camera at `eye` looking at `target` with the given up vector.
    pub fn look_at(width: usize, height: usize, camera_angle_x: f64, eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Self {
        let back = normalize(sub(eye, target));
        let right = normalize(cross(up, back));
        let true_up = cross(back, right);
        let mut pose = [[0.0; 4]; 4];
        for r in 0..3 {
            pose[r] = [right[r], true_up[r], back[r], eye[r]];
        }
        pose[3] = [0.0, 0.0, 0.0, 1.0];
        Self::from_fov(width, height, camera_angle_x, pose)
    }

    pub fn origin(&self) -> [f64; 3] {
        [self.pose[0][3], self.pose[1][3], self.pose[2][3]]
    }

    /// Largest deviation of the rotation block from orthonormality.
    pub fn rotation_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3).map(|r| self.pose[r][a] * self.pose[r][b]).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::Input("camera needs positive focal length and size".into()));
        }
        if self.rotation_error() > 1e-4 {
            return Err(Error::Input(format!(
                "camera rotation is not orthonormal (error {:.2e})",
                self.rotation_error()
            )));
        }
        Ok(())
    }
}

pub fn focal_from_fov(width: usize, camera_angle_x: f64) -> f64 {
    0.5 * width as f64 / (0.5 * camera_angle_x).tan()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    a.map(|v| v / n)
}

/// Uniform scale plus offset from world coordinates into the unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneTransform {
    pub scale: f64,
    pub offset: [f64; 3],
}

impl SceneTransform {
    pub const IDENTITY: Self = Self {
        scale: 1.0,
        offset: [0.0; 3],
    };

    /// Map the axis-aligned box `[min, max]³` onto `[0, 1]³`.
    pub fn from_aabb(min: f64, max: f64) -> Self {
        let scale = 1.0 / (max - min);
        Self {
            scale,
            offset: [-min * scale; 3],
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| p[a] * self.scale + self.offset[a])
    }

    pub fn invert(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| (p[a] - self.offset[a]) / self.scale)
    }
}

/// World-space ray through pixel `(i, j)`; `jitter` offsets the sample point
/// from the pixel center by up to half a pixel.
pub fn generate_ray(camera: &Camera, pixel: (usize, usize), jitter: Option<(f64, f64)>) -> Result<([f64; 3], [f64; 3])> {
    let (i, j) = pixel;
    if i >= camera.width || j >= camera.height {
        return Err(Error::Input(format!(
            "pixel ({i}, {j}) outside {}x{} image",
            camera.width, camera.height
        )));
    }
    let (jx, jy) = jitter.unwrap_or((0.0, 0.0));
    let local = [
        (i as f64 + 0.5 + jx - camera.width as f64 / 2.0) / camera.focal,
        -(j as f64 + 0.5 + jy - camera.height as f64 / 2.0) / camera.focal,
        -1.0,
    ];
    let p = &camera.pose;
    let d = [0, 1, 2].map(|r| p[r][0] * local[0] + p[r][1] * local[1] + p[r][2] * local[2]);
    Ok((camera.origin(), normalize(d)))
}

/// Camera ray in normalized scene coordinates.
pub fn scene_ray(camera: &Camera, transform: &SceneTransform, pixel: (usize, usize), jitter: Option<(f64, f64)>) -> Result<Ray> {
    let (o, d) = generate_ray(camera, pixel, jitter)?;
    let o = transform.apply(o);
    Ok(Ray {
        origin: o.map(|v| v as f32),
        dir: d.map(|v| v as f32),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeSample {
    pub sigma: f64,
    pub color: [f64; 3],
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeResult {
    pub color: [f64; 3],
    /// `1 - T_final`.
    pub opacity: f64,
    /// `w_i = T_i α_i` for every processed sample.
    pub weights: Vec<f64>,
    /// `T_i` for every processed sample.
    pub transmittance: Vec<f64>,
    pub final_transmittance: f64,
    pub background: [f64; 3],
}

impl CompositeResult {
    /// Samples consumed before early termination.
    pub fn processed(&self) -> usize {
        self.weights.len()
    }
}

/// Front-to-back compositing. Stops once transmittance drops below
/// `stop_transmittance` (pass 0 to consume every sample).
pub fn composite(samples: &[CompositeSample], background: [f64; 3], stop_transmittance: f64) -> CompositeResult {
    let mut t = 1.0f64;
    let mut color = [0.0f64; 3];
    let mut weights = Vec::with_capacity(samples.len());
    let mut transmittance = Vec::with_capacity(samples.len());
    for s in samples {
        if t < stop_transmittance {
            break;
        }
        let alpha = 1.0 - (-s.sigma * s.delta).exp();
        let w = t * alpha;
        for c in 0..3 {
            color[c] += w * s.color[c];
        }
        weights.push(w);
        transmittance.push(t);
        t *= 1.0 - alpha;
    }
    for c in 0..3 {
        color[c] += t * background[c];
    }
    CompositeResult {
        color,
        opacity: 1.0 - t,
        weights,
        transmittance,
        final_transmittance: t,
        background,
    }
}

/// Gradients of `dL/dĈ · Ĉ` with respect to each sample's density and color.
/// Samples beyond early termination get zero.
pub fn composite_backward(
    samples: &[CompositeSample],
    result: &CompositeResult,
    d_color: [f64; 3],
) -> Vec<(f64, [f64; 3])> {
    let n = result.processed();
    let mut out = vec![(0.0, [0.0; 3]); samples.len()];
    // suffix = Σ_{j>i} w_j c_j + T_final · background, walked back to front
    let mut suffix = [0, 1, 2].map(|c| result.final_transmittance * result.background[c]);
    for i in (0..n).rev() {
        let s = &samples[i];
        let w = result.weights[i];
        let t_next = result.transmittance[i] - w;
        let mut d_sigma = 0.0;
        for c in 0..3 {
            d_sigma += d_color[c] * s.delta * (t_next * s.color[c] - suffix[c]);
            suffix[c] += w * s.color[c];
        }
        out[i] = (d_sigma, d_color.map(|g| g * w));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub transform: SceneTransform,
    pub march: MarchParams,
    pub background: [f32; 3],
    pub stop_transmittance: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            transform: SceneTransform::IDENTITY,
            march: MarchParams::default(),
            background: [1.0; 3],
            stop_transmittance: 1e-4,
        }
    }
}

/// Render a batch of normalized-space rays.
pub fn render_rays<F: RadianceField>(field: &F, occ: &OccupancyGrid, rays: &[Ray], options: &RenderOptions) -> Result<Vec<[f32; 3]>> {
    let mut samples: Vec<RaySample> = Vec::new();
    let mut offsets = Vec::with_capacity(rays.len() + 1);
    offsets.push(0);
    for ray in rays {
        march_ray_into(occ, ray, &options.march, &mut samples)?;
        offsets.push(samples.len());
    }
    let positions: Vec<[f32; 3]> = samples.iter().map(|s| s.position).collect();
    let mut dirs = Vec::with_capacity(samples.len());
    for (r, ray) in rays.iter().enumerate() {
        dirs.extend(std::iter::repeat_n(ray.dir, offsets[r + 1] - offsets[r]));
    }
    let (sigma, colors) = field.radiance(&positions, &dirs);
    let bg = options.background.map(|v| v as f64);
    let mut buf = Vec::new();
    Ok((0..rays.len())
        .map(|r| {
            buf.clear();
            buf.extend((offsets[r]..offsets[r + 1]).map(|k| CompositeSample {
                sigma: sigma[k] as f64,
                color: colors[k].map(|v| v as f64),
                delta: samples[k].delta as f64,
            }));
            composite(&buf, bg, options.stop_transmittance).color.map(|v| v as f32)
        })
        .collect())
}

/// Render every pixel of `camera` without jitter. Rows are rendered in
/// parallel; the result does not depend on the thread count.
pub fn render_image<F: RadianceField>(field: &F, occ: &OccupancyGrid, camera: &Camera, options: &RenderOptions) -> Result<Image> {
    let rows: Result<Vec<Vec<[f32; 3]>>> = (0..camera.height)
        .into_par_iter()
        .map(|j| {
            let rays = (0..camera.width)
                .map(|i| scene_ray(camera, &options.transform, (i, j), None))
                .collect::<Result<Vec<_>>>()?;
            render_rays(field, occ, &rays, options)
        })
        .collect();
    Ok(Image {
        width: camera.width,
        height: camera.height,
        pixels: rows?.into_iter().flatten().collect(),
    })
}
