//! Occupancy-grid accelerated ray marching.
//!
//! Rays live in normalized scene coordinates where the scene occupies the
//! unit cube. A coarse grid over that cube tracks an exponential moving
//! maximum of per-cell opacity; marching emits fixed-step samples only inside
//! cells whose opacity is above threshold, so empty space costs no field
//! queries.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binarize::PackedBits;
use crate::error::{Error, Result};
use crate::field::RadianceField;

/// Default marching step: the cube diagonal spans 1024 steps.
pub const DEFAULT_STEP: f32 = 1.732_050_8 / 1024.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f32; 3],
    pub dir: [f32; 3],
}

impl Ray {
    #[inline]
    pub fn at(&self, t: f32) -> [f32; 3] {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }

    /// Entry and exit parameters of the unit cube, if the ray meets it.
    pub fn unit_cube_hit(&self) -> Option<(f32, f32)> {
        let mut t0 = f32::NEG_INFINITY;
        let mut t1 = f32::INFINITY;
        for a in 0..3 {
            let (o, d) = (self.origin[a], self.dir[a]);
            if d == 0.0 {
                if !(0.0..=1.0).contains(&o) {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut lo, mut hi) = ((0.0 - o) * inv, (1.0 - o) * inv);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
        (t0 < t1).then_some((t0, t1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample {
    pub t_start: f32,
    pub t_end: f32,
    pub position: [f32; 3],
    pub delta: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyConfig {
    pub resolution: usize,
    pub update_interval: usize,
    pub decay: f32,
    pub threshold: f32,
    /// Every cell counts as occupied before this iteration.
    pub warmup_iters: usize,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            update_interval: 16,
            decay: 0.95,
            threshold: 0.01,
            warmup_iters: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub config: OccupancyConfig,
    pub occ_values: Vec<f32>,
    pub bitfield: PackedBits,
    /// Interval length used to turn a cell density into an opacity.
    pub alpha_step: f32,
}

/// Fixed-step marching parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchParams {
    pub step: f32,
    pub near: f32,
    pub far: f32,
}

impl Default for MarchParams {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            near: 0.0,
            far: f32::INFINITY,
        }
    }
}

impl OccupancyGrid {
    /// A grid with every cell occupied and zero recorded opacity.
    pub fn new(config: OccupancyConfig, alpha_step: f32) -> Result<Self> {
        if config.resolution == 0 || config.update_interval == 0 {
            return Err(Error::Config("occupancy resolution and update interval must be positive".into()));
        }
        if !(0.0..=1.0).contains(&config.decay) || !(0.0..1.0).contains(&config.threshold) {
            return Err(Error::Config("occupancy decay must be in [0,1] and threshold in [0,1)".into()));
        }
        let cells = config.resolution.pow(3);
        let mut grid = Self {
            config,
            occ_values: vec![0.0; cells],
            bitfield: PackedBits::zeros(cells),
            alpha_step,
        };
        grid.set_all(true);
        Ok(grid)
    }

    pub fn cell_count(&self) -> usize {
        self.occ_values.len()
    }

    pub fn set_all(&mut self, on: bool) {
        let fill = if on { 0xFF } else { 0x00 };
        self.bitfield.bytes.iter_mut().for_each(|b| *b = fill);
        let extra = self.bitfield.bytes.len() * 8 - self.cell_count();
        if on && extra > 0 {
            // keep pad bits zero
            let last = self.bitfield.bytes.len() - 1;
            self.bitfield.bytes[last] >>= extra;
        }
    }

    /// Set bits from the recorded values: occupied iff value > threshold.
    pub fn rebuild_bits(&mut self) {
        let threshold = self.config.threshold;
        for i in 0..self.occ_values.len() {
            let on = self.occ_values[i] > threshold;
            self.bitfield.set(i, on);
        }
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.bitfield.count_ones() as f64 / self.cell_count() as f64
    }

    #[inline]
    pub fn cell_of(&self, p: [f32; 3]) -> usize {
        let r = self.config.resolution;
        let idx = |v: f32| ((v.clamp(0.0, 1.0) * r as f32) as usize).min(r - 1);
        idx(p[0]) + r * (idx(p[1]) + r * idx(p[2]))
    }

    #[inline]
    pub fn is_occupied(&self, p: [f32; 3]) -> bool {
        self.bitfield.get(self.cell_of(p))
    }

    /// Jittered cell centers, in cell order.
    fn jittered_points<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<[f32; 3]> {
        let r = self.config.resolution;
        let inv = 1.0 / r as f32;
        let mut pts = Vec::with_capacity(self.cell_count());
        for z in 0..r {
            for y in 0..r {
                for x in 0..r {
                    let j: [f32; 3] = [rng.random(), rng.random(), rng.random()];
                    pts.push([
                        (x as f32 + j[0]) * inv,
                        (y as f32 + j[1]) * inv,
                        (z as f32 + j[2]) * inv,
                    ]);
                }
            }
        }
        pts
    }

    /// Fold one density evaluation of every cell into the recorded values.
    pub fn refresh<F: RadianceField, R: Rng + ?Sized>(&mut self, field: &F, rng: &mut R) {
        let pts = self.jittered_points(rng);
        let sigma: Vec<f32> = pts
            .par_chunks(8192)
            .flat_map_iter(|c| field.densities(c))
            .collect();
        let decay = self.config.decay;
        for (occ, s) in self.occ_values.iter_mut().zip(sigma) {
            let alpha = 1.0 - (-s * self.alpha_step).exp();
            *occ = (*occ * decay).max(alpha);
        }
    }

    /// Training-time update: refresh on the configured period, then
    /// rebuild the bitfield (all occupied during warmup).
    pub fn update<F: RadianceField, R: Rng + ?Sized>(&mut self, field: &F, iter: usize, rng: &mut R) -> bool {
        if iter % self.config.update_interval != 0 {
            return false;
        }
        self.refresh(field, rng);
        if iter < self.config.warmup_iters {
            self.set_all(true);
        } else {
            self.rebuild_bits();
        }
        true
    }

    /// Build a fresh grid from `passes` refreshes of `field`.
    pub fn rebuild<F: RadianceField, R: Rng + ?Sized>(
        config: OccupancyConfig,
        alpha_step: f32,
        field: &F,
        passes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut grid = Self::new(config, alpha_step)?;
        for _ in 0..passes {
            grid.refresh(field, rng);
        }
        grid.rebuild_bits();
        Ok(grid)
    }
}

/// Fixed-step samples along `ray` that fall in occupied cells.
///
/// The direction is normalized first, so `t` and `delta` are distances in
/// normalized scene units.
pub fn march_ray(occ: &OccupancyGrid, ray: &Ray, params: &MarchParams) -> Result<Vec<RaySample>> {
    let mut out = Vec::new();
    march_ray_into(occ, ray, params, &mut out)?;
    Ok(out)
}

pub fn march_ray_into(
    occ: &OccupancyGrid,
    ray: &Ray,
    params: &MarchParams,
    out: &mut Vec<RaySample>,
) -> Result<()> {
    let d = ray.dir;
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if !(len > 0.0 && len.is_finite()) || ray.origin.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!("degenerate ray direction {d:?}")));
    }
    if !(params.step > 0.0) {
        return Err(Error::Input("marching step must be positive".into()));
    }
    let ray = Ray {
        origin: ray.origin,
        dir: [d[0] / len, d[1] / len, d[2] / len],
    };
    let Some((enter, exit)) = ray.unit_cube_hit() else {
        return Ok(());
    };
    let t0 = enter.max(params.near);
    let t1 = exit.min(params.far);
    if t0 >= t1 {
        return Ok(());
    }
    let step = params.step;
    // drop slivers left over by rounding at the exit face
    let min_tail = step * 1e-3;
    let mut i = 0u32;
    loop {
        let t_start = t0 + i as f32 * step;
        if t1 - t_start <= min_tail {
            break;
        }
        let t_end = (t_start + step).min(t1);
        let position = ray.at(0.5 * (t_start + t_end));
        if occ.is_occupied(position) {
            out.push(RaySample {
                t_start,
                t_end,
                position,
                delta: t_end - t_start,
            });
        }
        i += 1;
    }
    Ok(())
}
