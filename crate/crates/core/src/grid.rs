//! Multi-resolution feature grids over binarized parameters.
//!
//! A [`HybridGrid`] holds one stack of 3D levels plus three stacks of 2D
//! levels for the axis-aligned planes `xy`, `xz` and `yz`. Each level is a
//! virtual lattice of `N + 1` vertices per axis over the unit domain. Small
//! lattices are stored densely; once `(N + 1)^dim` exceeds the table size,
//! vertices are folded into the table with a spatial hash.
//!
//! Feature lookups read `sign(latent)` at the enclosing cell's corners and
//! blend them with (bi/tri)linear weights, so every feature component lies in
//! `[-1, 1]`. The backward pass scatters `weight · upstream` into the latent
//! gradients through the straight-through mask.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binarize::BinaryTensor;
use crate::error::{Error, Result};

/// Per-axis multipliers of the spatial hash (the first axis is unscaled).
pub const HASH_PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

pub const SUPPORTED_FEATURE_DIMS: [usize; 4] = [1, 2, 4, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLevelConfig {
    pub dim: usize,
    pub resolution: u32,
    pub table_size: u32,
    pub feature_dim: usize,
}

impl GridLevelConfig {
    /// `(N + 1)^dim`, saturating.
    pub fn vertex_count(&self) -> u64 {
        (self.resolution as u64 + 1).saturating_pow(self.dim as u32)
    }

    pub fn is_dense(&self) -> bool {
        self.vertex_count() <= self.table_size as u64
    }

    /// Feature vectors actually stored for this level.
    pub fn entries(&self) -> usize {
        self.vertex_count().min(self.table_size as u64) as usize
    }

    pub fn latent_count(&self) -> usize {
        self.entries() * self.feature_dim
    }

    #[inline(always)]
    fn index_unchecked(&self, corner: &[u32]) -> usize {
        if self.is_dense() {
            let stride = self.resolution as usize + 1;
            corner.iter().rev().fold(0, |acc, &c| acc * stride + c as usize)
        } else {
            let h = corner
                .iter()
                .zip(HASH_PRIMES)
                .fold(0u64, |acc, (&c, p)| acc ^ (c as u64).wrapping_mul(p));
            (h & (self.table_size as u64 - 1)) as usize
        }
    }

    fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.dim) {
            return Err(Error::Config(format!("grid dimension must be 2 or 3, got {}", self.dim)));
        }
        if self.resolution < 1 {
            return Err(Error::Config("grid resolution must be at least 1".into()));
        }
        if !self.table_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "hash table size {} is not a power of two",
                self.table_size
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        Ok(())
    }
}

/// Storage index of a lattice vertex: row-major (first axis fastest) when the
/// level is dense, XOR-prime spatial hash modulo the table size otherwise.
pub fn grid_index(level: &GridLevelConfig, corner: &[u32]) -> Result<usize> {
    if corner.len() != level.dim {
        return Err(Error::Dimension {
            what: "grid corner",
            expected: level.dim,
            found: corner.len(),
        });
    }
    if corner.iter().any(|&c| c > level.resolution) {
        return Err(Error::CornerOutOfRange {
            corner: corner.to_vec(),
            resolution: level.resolution,
        });
    }
    Ok(level.index_unchecked(corner))
}

/// `N_l = floor(N_min · b^l)` with `b = exp((ln N_max - ln N_min) / (L - 1))`.
pub fn resolution_schedule(levels: usize, n_min: u32, n_max: u32) -> Vec<u32> {
    if levels == 1 {
        return vec![n_min];
    }
    let b = ((n_max as f64).ln() - (n_min as f64).ln()) / (levels - 1) as f64;
    (0..levels)
        .map(|l| {
            // the tolerance absorbs exp/ln rounding at exact powers
            ((n_min as f64) * (b * l as f64).exp() + 1e-6).floor() as u32
        })
        .collect()
}

/// Shape of a hybrid grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConfig {
    pub levels_3d: Vec<GridLevelConfig>,
    /// Shared by the three planes.
    pub levels_2d: Vec<GridLevelConfig>,
    pub feature_dim: usize,
}

/// Parameters of a geometric resolution stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelStack {
    pub levels: usize,
    pub min_resolution: u32,
    pub max_resolution: u32,
    pub log2_table_size: u32,
}

impl GridConfig {
    pub fn from_stacks(stack_3d: LevelStack, stack_2d: LevelStack, feature_dim: usize) -> Result<Self> {
        let build = |dim: usize, s: LevelStack| -> Result<Vec<GridLevelConfig>> {
            if s.levels == 0 && dim == 3 {
                return Err(Error::Config("the 3D grid needs at least one level".into()));
            }
            if s.min_resolution == 0 || s.max_resolution < s.min_resolution {
                return Err(Error::Config(format!(
                    "invalid {dim}D resolution range {}..{}",
                    s.min_resolution, s.max_resolution
                )));
            }
            if s.log2_table_size > 31 {
                return Err(Error::Config(format!("table size 2^{} too large", s.log2_table_size)));
            }
            Ok(resolution_schedule(s.levels, s.min_resolution, s.max_resolution)
                .into_iter()
                .map(|resolution| GridLevelConfig {
                    dim,
                    resolution,
                    table_size: 1 << s.log2_table_size,
                    feature_dim,
                })
                .collect())
        };
        let config = Self {
            levels_3d: build(3, stack_3d)?,
            levels_2d: if stack_2d.levels == 0 { Vec::new() } else { build(2, stack_2d)? },
            feature_dim,
        };
        config.validate()?;
        Ok(config)
    }

    /// 16 levels 16→1024 with 2^19 entries; 4 plane levels 64→512 with 2^17.
    pub fn base(feature_dim: usize) -> Result<Self> {
        Self::from_stacks(
            LevelStack { levels: 16, min_resolution: 16, max_resolution: 1024, log2_table_size: 19 },
            LevelStack { levels: 4, min_resolution: 64, max_resolution: 512, log2_table_size: 17 },
            feature_dim,
        )
    }

    /// Reduced grid for CPU runs: 8 levels 16→128 with 2^15 entries; 4 plane
    /// levels 16→128 with 2^13.
    pub fn desk(feature_dim: usize) -> Result<Self> {
        Self::from_stacks(
            LevelStack { levels: 8, min_resolution: 16, max_resolution: 128, log2_table_size: 15 },
            LevelStack { levels: 4, min_resolution: 16, max_resolution: 128, log2_table_size: 13 },
            feature_dim,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_FEATURE_DIMS.contains(&self.feature_dim) {
            return Err(Error::Config(format!(
                "feature_dim {} unsupported (supported: 1, 2, 4, 8)",
                self.feature_dim
            )));
        }
        for level in self.levels_3d.iter().chain(&self.levels_2d) {
            level.validate()?;
            if level.feature_dim != self.feature_dim {
                return Err(Error::Config("per-level feature_dim differs from grid feature_dim".into()));
            }
        }
        if self.levels_3d.iter().any(|l| l.dim != 3) || self.levels_2d.iter().any(|l| l.dim != 2) {
            return Err(Error::Config("level dimensions do not match their stack".into()));
        }
        Ok(())
    }

    pub fn width_3d(&self) -> usize {
        self.levels_3d.len() * self.feature_dim
    }

    pub fn width_2d(&self) -> usize {
        self.levels_2d.len() * self.feature_dim
    }

    /// Length of the concatenated feature `f = (f_xyz, f_xy, f_xz, f_yz)`.
    pub fn feature_width(&self) -> usize {
        self.width_3d() + 3 * self.width_2d()
    }
}

/// Number of bits needed to store every grid sign.
pub fn payload_bits(config: &GridConfig) -> u64 {
    let bits = |levels: &[GridLevelConfig]| -> u64 {
        levels.iter().map(|l| l.latent_count() as u64).sum()
    };
    bits(&config.levels_3d) + 3 * bits(&config.levels_2d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plane {
    Xy,
    Xz,
    Yz,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Xy, Plane::Xz, Plane::Yz];

    #[inline(always)]
    pub fn project(self, x: [f32; 3]) -> [f32; 2] {
        match self {
            Plane::Xy => [x[0], x[1]],
            Plane::Xz => [x[0], x[2]],
            Plane::Yz => [x[1], x[2]],
        }
    }
}

/// Corner storage indices and interpolation weights for a 3D query.
#[inline(always)]
fn corners_3d(level: &GridLevelConfig, x: [f32; 3]) -> [(usize, f32); 8] {
    let n = level.resolution;
    let mut base = [0u32; 3];
    let mut frac = [0f32; 3];
    for a in 0..3 {
        let p = x[a].clamp(0.0, 1.0) * n as f32;
        let i = (p.floor() as u32).min(n - 1);
        base[a] = i;
        frac[a] = (p - i as f32).clamp(0.0, 1.0);
    }
    let mut out = [(0usize, 0f32); 8];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut w = 1.0;
        let mut corner = [0u32; 3];
        for a in 0..3 {
            let bit = (c >> a) & 1;
            corner[a] = base[a] + bit as u32;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        *slot = (level.index_unchecked(&corner), w);
    }
    out
}

#[inline(always)]
fn corners_2d(level: &GridLevelConfig, x: [f32; 2]) -> [(usize, f32); 4] {
    let n = level.resolution;
    let mut base = [0u32; 2];
    let mut frac = [0f32; 2];
    for a in 0..2 {
        let p = x[a].clamp(0.0, 1.0) * n as f32;
        let i = (p.floor() as u32).min(n - 1);
        base[a] = i;
        frac[a] = (p - i as f32).clamp(0.0, 1.0);
    }
    let mut out = [(0usize, 0f32); 4];
    for (c, slot) in out.iter_mut().enumerate() {
        let (bx, by) = (c & 1, (c >> 1) & 1);
        let corner = [base[0] + bx as u32, base[1] + by as u32];
        let wx = if bx == 1 { frac[0] } else { 1.0 - frac[0] };
        let wy = if by == 1 { frac[1] } else { 1.0 - frac[1] };
        *slot = (level.index_unchecked(&corner), wx * wy);
    }
    out
}

#[inline(always)]
fn gather(tensor: &BinaryTensor, f: usize, corners: &[(usize, f32)], out: &mut [f32]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for &(idx, w) in corners {
        let base = idx * f;
        for (k, o) in out.iter_mut().enumerate() {
            *o += w * tensor.binary(base + k);
        }
    }
}

#[inline(always)]
fn scatter(tensor: &mut BinaryTensor, f: usize, corners: &[(usize, f32)], upstream: &[f32]) {
    for &(idx, w) in corners {
        let base = idx * f;
        for (k, &u) in upstream.iter().enumerate() {
            if u != 0.0 {
                tensor.accumulate(base + k, (w * u) as f64);
            }
        }
    }
}

/// One 3D grid and three 2D plane grids of binarized features.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridGrid {
    pub config: GridConfig,
    pub grid_3d: Vec<BinaryTensor>,
    pub planes_xy: Vec<BinaryTensor>,
    pub planes_xz: Vec<BinaryTensor>,
    pub planes_yz: Vec<BinaryTensor>,
}

impl HybridGrid {
    pub fn random<R: Rng + ?Sized>(config: GridConfig, rng: &mut R) -> Result<Self> {
        Self::build(config, |shape| BinaryTensor::random(shape, rng))
    }

    pub fn zeros(config: GridConfig) -> Result<Self> {
        Self::build(config, BinaryTensor::zeros)
    }

    fn build(config: GridConfig, mut make: impl FnMut(&[usize]) -> BinaryTensor) -> Result<Self> {
        config.validate()?;
        let f = config.feature_dim;
        let grid_3d = config.levels_3d.iter().map(|l| make(&[l.entries(), f])).collect();
        let mut plane = || -> Vec<BinaryTensor> {
            config.levels_2d.iter().map(|l| make(&[l.entries(), f])).collect()
        };
        let (planes_xy, planes_xz, planes_yz) = (plane(), plane(), plane());
        Ok(Self {
            config,
            grid_3d,
            planes_xy,
            planes_xz,
            planes_yz,
        })
    }

    pub fn plane(&self, p: Plane) -> &[BinaryTensor] {
        match p {
            Plane::Xy => &self.planes_xy,
            Plane::Xz => &self.planes_xz,
            Plane::Yz => &self.planes_yz,
        }
    }

    fn plane_mut(&mut self, p: Plane) -> &mut Vec<BinaryTensor> {
        match p {
            Plane::Xy => &mut self.planes_xy,
            Plane::Xz => &mut self.planes_xz,
            Plane::Yz => &mut self.planes_yz,
        }
    }

    /// All tensors in storage order: 3D levels, then xy, xz, yz planes.
    pub fn tensors(&self) -> impl Iterator<Item = &BinaryTensor> {
        self.grid_3d
            .iter()
            .chain(&self.planes_xy)
            .chain(&self.planes_xz)
            .chain(&self.planes_yz)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut BinaryTensor> {
        self.grid_3d
            .iter_mut()
            .chain(&mut self.planes_xy)
            .chain(&mut self.planes_xz)
            .chain(&mut self.planes_yz)
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().for_each(BinaryTensor::zero_grad);
    }

    /// Interpolated 3D features, `L · F` values. Queries outside the unit
    /// cube are clamped onto it.
    pub fn encode_3d(&self, x: [f32; 3], out: &mut [f32]) {
        let f = self.config.feature_dim;
        debug_assert_eq!(out.len(), self.config.width_3d());
        for ((level, tensor), chunk) in self
            .config
            .levels_3d
            .iter()
            .zip(&self.grid_3d)
            .zip(out.chunks_exact_mut(f))
        {
            gather(tensor, f, &corners_3d(level, x), chunk);
        }
    }

    /// Interpolated features of one plane, `M · F` values.
    pub fn encode_plane(&self, plane: Plane, x: [f32; 3], out: &mut [f32]) {
        let f = self.config.feature_dim;
        debug_assert_eq!(out.len(), self.config.width_2d());
        let p = plane.project(x);
        for ((level, tensor), chunk) in self
            .config
            .levels_2d
            .iter()
            .zip(self.plane(plane))
            .zip(out.chunks_exact_mut(f))
        {
            gather(tensor, f, &corners_2d(level, p), chunk);
        }
    }

    /// `(f_xy, f_xz, f_yz)`.
    pub fn encode_2d(&self, x: [f32; 3]) -> [Vec<f32>; 3] {
        Plane::ALL.map(|p| {
            let mut out = vec![0.0; self.config.width_2d()];
            self.encode_plane(p, x, &mut out);
            out
        })
    }

    /// Full feature `(f_xyz, f_xy, f_xz, f_yz)` written into `out`.
    pub fn encode(&self, x: [f32; 3], out: &mut [f32]) {
        let (w3, w2) = (self.config.width_3d(), self.config.width_2d());
        let (head, mut rest) = out.split_at_mut(w3);
        self.encode_3d(x, head);
        for p in Plane::ALL {
            let (chunk, tail) = rest.split_at_mut(w2);
            self.encode_plane(p, x, chunk);
            rest = tail;
        }
    }

    /// Scatter the gradient of the full feature (same layout as [`encode`])
    /// into the latent gradients.
    ///
    /// [`encode`]: HybridGrid::encode
    pub fn encode_backward(&mut self, x: [f32; 3], upstream: &[f32]) {
        let f = self.config.feature_dim;
        let (w3, w2) = (self.config.width_3d(), self.config.width_2d());
        debug_assert_eq!(upstream.len(), w3 + 3 * w2);
        let (up3, up2) = upstream.split_at(w3);
        for l in 0..self.config.levels_3d.len() {
            let corners = corners_3d(&self.config.levels_3d[l], x);
            scatter(&mut self.grid_3d[l], f, &corners, &up3[l * f..(l + 1) * f]);
        }
        for (pi, p) in Plane::ALL.into_iter().enumerate() {
            let proj = p.project(x);
            let up = &up2[pi * w2..(pi + 1) * w2];
            for l in 0..self.config.levels_2d.len() {
                let corners = corners_2d(&self.config.levels_2d[l], proj);
                let tensors = self.plane_mut(p);
                scatter(&mut tensors[l], f, &corners, &up[l * f..(l + 1) * f]);
            }
        }
    }

    /// Indices (per tensor in storage order) touched by a query at `x`.
    pub fn touched_entries(&self, x: [f32; 3]) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self
            .config
            .levels_3d
            .iter()
            .map(|l| corners_3d(l, x).iter().map(|c| c.0).collect())
            .collect();
        for p in Plane::ALL {
            let proj = p.project(x);
            out.extend(
                self.config
                    .levels_2d
                    .iter()
                    .map(|l| corners_2d(l, proj).iter().map(|c| c.0).collect()),
            );
        }
        out
    }
}

/// Interpolation weights of a 3D query on one level (exposed for property tests).
pub fn interpolation_weights_3d(level: &GridLevelConfig, x: [f32; 3]) -> [f32; 8] {
    corners_3d(level, x).map(|c| c.1)
}

pub fn interpolation_weights_2d(level: &GridLevelConfig, x: [f32; 2]) -> [f32; 4] {
    corners_2d(level, x).map(|c| c.1)
}
