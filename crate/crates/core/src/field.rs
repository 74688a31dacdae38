//! The radiance field: grid features and positional encoding feed a density
//! head whose embedding, together with the view direction, feeds a color head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridConfig, HybridGrid};
use crate::nn::{
    positional_encode, positional_width, sh_encode, Activation, Mlp, MlpCache, MlpSpec,
    ParamView, SH_COEFFS,
};

/// Raw density is clamped to this range before `exp`.
pub const DENSITY_CLAMP: f32 = 15.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub grid: GridConfig,
    pub pe_frequencies: usize,
    pub hidden_width: usize,
    pub embedding_width: usize,
}

impl FieldConfig {
    pub fn new(grid: GridConfig) -> Self {
        Self {
            grid,
            pe_frequencies: 4,
            hidden_width: 128,
            embedding_width: 15,
        }
    }

    pub fn density_spec(&self) -> MlpSpec {
        MlpSpec {
            input_width: positional_width(self.pe_frequencies) + self.grid.feature_width(),
            hidden_width: self.hidden_width,
            hidden_layers: 1,
            output_width: 1 + self.embedding_width,
            output_activation: Activation::None,
        }
    }

    pub fn color_spec(&self) -> MlpSpec {
        MlpSpec {
            input_width: self.embedding_width + SH_COEFFS,
            hidden_width: self.hidden_width,
            hidden_layers: 2,
            output_width: 3,
            output_activation: Activation::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.hidden_width == 0 {
            return Err(Error::Config("hidden_width must be positive".into()));
        }
        if self.pe_frequencies > 20 {
            return Err(Error::Config("pe_frequencies above 20 are not supported".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOutput {
    pub sigma: f32,
    pub color: [f32; 3],
}

/// Anything that can be volume rendered.
pub trait RadianceField: Sync {
    fn densities(&self, positions: &[[f32; 3]]) -> Vec<f32>;

    /// Densities and colors at `positions` seen along `dirs`.
    fn radiance(&self, positions: &[[f32; 3]], dirs: &[[f32; 3]]) -> (Vec<f32>, Vec<[f32; 3]>);
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    pub config: FieldConfig,
    pub grid: HybridGrid,
    pub density: Mlp,
    pub color: Mlp,
    grid_names: Vec<String>,
}

/// Cached density-head evaluation over a batch of points.
#[derive(Debug, Clone)]
pub struct DensityPass {
    pub positions: Vec<[f32; 3]>,
    pub raw: Vec<f32>,
    pub sigma: Vec<f32>,
    cache: MlpCache,
}

impl DensityPass {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn embedding(&self, row: usize) -> &[f32] {
        let w = self.cache.output().len() / self.positions.len().max(1);
        &self.cache.output()[row * w + 1..(row + 1) * w]
    }
}

/// Cached color-head evaluation for a subset of the density pass rows.
#[derive(Debug, Clone)]
pub struct ColorPass {
    pub rows: Vec<usize>,
    pub colors: Vec<[f32; 3]>,
    cache: MlpCache,
}

#[inline(always)]
fn density_activation(raw: f32) -> f32 {
    raw.clamp(-DENSITY_CLAMP, DENSITY_CLAMP).exp()
}

impl FieldModel {
    pub fn new<R: Rng + ?Sized>(config: FieldConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let grid = HybridGrid::random(config.grid.clone(), rng)?;
        let density = Mlp::random("density", config.density_spec(), rng);
        let color = Mlp::random("color", config.color_spec(), rng);
        Ok(Self {
            grid_names: grid_block_names(&config.grid),
            config,
            grid,
            density,
            color,
        })
    }

    pub fn from_parts(config: FieldConfig, grid: HybridGrid, density: Mlp, color: Mlp) -> Result<Self> {
        config.validate()?;
        if grid.config != config.grid {
            return Err(Error::Config("grid does not match field config".into()));
        }
        if density.spec != config.density_spec() || color.spec != config.color_spec() {
            return Err(Error::Config("MLP shapes do not match field config".into()));
        }
        Ok(Self {
            grid_names: grid_block_names(&config.grid),
            config,
            grid,
            density,
            color,
        })
    }

    /// Copy of the model whose grid latents are replaced by their signs.
    pub fn binarized(&self) -> Self {
        let mut m = self.clone();
        for t in m.grid.tensors_mut() {
            t.latent = t.signs();
        }
        m
    }

    pub fn density_input_width(&self) -> usize {
        self.density.spec.input_width
    }

    fn write_density_input(&self, x: [f32; 3], out: &mut [f32]) {
        let pe = positional_width(self.config.pe_frequencies);
        let (head, tail) = out.split_at_mut(pe);
        positional_encode(x, self.config.pe_frequencies, head);
        self.grid.encode(x, tail);
    }

    pub fn query_density(&self, x: [f32; 3]) -> (f32, Vec<f32>) {
        let pass = self.forward_density(&[x]).expect("density input width is consistent");
        (pass.sigma[0], pass.embedding(0).to_vec())
    }

    pub fn query_color(&self, embedding: &[f32], d: [f32; 3]) -> Result<[f32; 3]> {
        let mut input = Vec::with_capacity(self.color.spec.input_width);
        input.extend_from_slice(embedding);
        input.resize(embedding.len() + SH_COEFFS, 0.0);
        sh_encode(d, &mut input[embedding.len()..]);
        let out = self.color.forward_one(&input)?;
        Ok([out[0], out[1], out[2]])
    }

    pub fn query(&self, x: [f32; 3], d: [f32; 3]) -> FieldOutput {
        let (sigma, e) = self.query_density(x);
        let color = self.query_color(&e, d).expect("embedding width is consistent");
        FieldOutput { sigma, color }
    }

    pub fn forward_density(&self, positions: &[[f32; 3]]) -> Result<DensityPass> {
        let width = self.density_input_width();
        let mut input = vec![0.0; positions.len() * width];
        for (x, row) in positions.iter().zip(input.chunks_exact_mut(width)) {
            self.write_density_input(*x, row);
        }
        let cache = self.density.forward(&input, positions.len())?;
        let out_w = self.density.spec.output_width;
        let raw: Vec<f32> = cache.output().chunks_exact(out_w).map(|r| r[0]).collect();
        let sigma = raw.iter().map(|&r| density_activation(r)).collect();
        Ok(DensityPass {
            positions: positions.to_vec(),
            raw,
            sigma,
            cache,
        })
    }

    /// Color head on the given `rows` of a density pass; `dirs[i]` belongs to `rows[i]`.
    pub fn forward_color(&self, pass: &DensityPass, rows: &[usize], dirs: &[[f32; 3]]) -> Result<ColorPass> {
        if rows.len() != dirs.len() {
            return Err(Error::Dimension {
                what: "color rows vs directions",
                expected: rows.len(),
                found: dirs.len(),
            });
        }
        let emb = self.config.embedding_width;
        let width = self.color.spec.input_width;
        let mut input = vec![0.0; rows.len() * width];
        for ((&r, d), chunk) in rows.iter().zip(dirs).zip(input.chunks_exact_mut(width)) {
            chunk[..emb].copy_from_slice(pass.embedding(r));
            sh_encode(*d, &mut chunk[emb..]);
        }
        let cache = self.color.forward(&input, rows.len())?;
        let colors = cache.output().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(ColorPass {
            rows: rows.to_vec(),
            colors,
            cache,
        })
    }

    /// Accumulate gradients of the loss into both heads and the grid latents.
    ///
    /// `d_sigma` has one entry per density-pass row; `d_color` one per
    /// color-pass row.
    pub fn backward(
        &mut self,
        density: &DensityPass,
        color: &ColorPass,
        d_sigma: &[f32],
        d_color: &[[f32; 3]],
    ) -> Result<()> {
        let n = density.len();
        if d_sigma.len() != n || d_color.len() != color.rows.len() || density.cache.rows() != n {
            return Err(Error::Dimension {
                what: "field backward upstream",
                expected: n,
                found: d_sigma.len(),
            });
        }
        let emb = self.config.embedding_width;
        let out_w = 1 + emb;
        let mut d_density_out = vec![0.0f32; n * out_w];
        for (i, row) in d_density_out.chunks_exact_mut(out_w).enumerate() {
            let raw = density.raw[i];
            if raw > -DENSITY_CLAMP && raw < DENSITY_CLAMP {
                row[0] = d_sigma[i] * density.sigma[i];
            }
        }

        if !color.rows.is_empty() {
            let flat: Vec<f32> = d_color.iter().flatten().copied().collect();
            let d_color_in = self.color.backward(&color.cache, &flat)?;
            let w = self.color.spec.input_width;
            for (&r, d_in) in color.rows.iter().zip(d_color_in.chunks_exact(w)) {
                let dst = &mut d_density_out[r * out_w + 1..(r + 1) * out_w];
                for (d, s) in dst.iter_mut().zip(&d_in[..emb]) {
                    *d += s;
                }
            }
        }

        let d_in = self.density.backward(&density.cache, &d_density_out)?;
        let width = self.density_input_width();
        let pe = positional_width(self.config.pe_frequencies);
        for (x, row) in density.positions.iter().zip(d_in.chunks_exact(width)) {
            let up = &row[pe..];
            if up.iter().any(|&v| v != 0.0) {
                self.grid.encode_backward(*x, up);
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.density.zero_grad();
        self.color.zero_grad();
        self.grid.zero_grad();
    }

    /// Every trainable block in a fixed order: density MLP, color MLP, grid
    /// tensors in storage order.
    pub fn param_views(&mut self) -> Vec<ParamView<'_>> {
        let mut views: Vec<ParamView<'_>> = self.density.param_views().collect();
        views.extend(self.color.param_views());
        views.extend(self.grid.tensors_mut().zip(&self.grid_names).map(|(t, name)| ParamView {
            name,
            values: &mut t.latent,
            grads: &mut t.grads,
        }));
        views
    }

    pub fn mark_updated(&mut self) {
        self.density.mark_updated();
        self.color.mark_updated();
    }

    pub fn param_count_mlp(&self) -> usize {
        self.density.spec.param_count() + self.color.spec.param_count()
    }
}

fn grid_block_names(config: &GridConfig) -> Vec<String> {
    let mut names: Vec<String> = (0..config.levels_3d.len()).map(|l| format!("grid.xyz.{l}")).collect();
    for p in ["xy", "xz", "yz"] {
        names.extend((0..config.levels_2d.len()).map(|l| format!("grid.{p}.{l}")));
    }
    names
}

const QUERY_CHUNK: usize = 4096;

impl RadianceField for FieldModel {
    fn densities(&self, positions: &[[f32; 3]]) -> Vec<f32> {
        positions
            .chunks(QUERY_CHUNK)
            .flat_map(|c| self.forward_density(c).expect("consistent widths").sigma)
            .collect()
    }

    fn radiance(&self, positions: &[[f32; 3]], dirs: &[[f32; 3]]) -> (Vec<f32>, Vec<[f32; 3]>) {
        let mut sigma = Vec::with_capacity(positions.len());
        let mut colors = Vec::with_capacity(positions.len());
        for (p, d) in positions.chunks(QUERY_CHUNK).zip(dirs.chunks(QUERY_CHUNK)) {
            let pass = self.forward_density(p).expect("consistent widths");
            let rows: Vec<usize> = (0..p.len()).collect();
            let c = self.forward_color(&pass, &rows, d).expect("consistent widths");
            sigma.extend_from_slice(&pass.sigma);
            colors.extend_from_slice(&c.colors);
        }
        (sigma, colors)
    }
}
