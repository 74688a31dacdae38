//! Batched training: ray sampling, losses, backprop through compositing and
//! the field, Adam updates and occupancy maintenance.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::field::FieldModel;
use crate::metrics::MetricReport;
use crate::nn::{Adam, AdamConfig, LrSchedule};
use crate::render::{composite, composite_backward, scene_ray, CompositeSample};
use crate::sampler::{march_ray_into, MarchParams, OccupancyConfig, OccupancyGrid, Ray, RaySample, DEFAULT_STEP};
use crate::scene::{RenderSettings, SceneModel};

pub const DESK_STEP: f32 = 1.732_050_8 / 256.0;

pub const INIT_STREAM: u64 = 0;
pub const BATCH_STREAM: u64 = 1;
pub const OCCUPANCY_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub rays_per_batch: usize,
    pub lambda_sparsity: f32,
    pub lr_schedule: LrSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
    pub occupancy: OccupancyConfig,
    pub march_step: f32,
    pub stop_transmittance: f64,
    /// Evaluate on the test split every this many iterations (0 disables).
    pub eval_every: usize,
    pub log_every: usize,
    pub rebuild_passes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            rays_per_batch: 4096,
            lambda_sparsity: 2e-5,
            lr_schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            seed: 0,
            occupancy: OccupancyConfig::default(),
            march_step: DEFAULT_STEP,
            stop_transmittance: 1e-4,
            eval_every: 5000,
            log_every: 100,
            rebuild_passes: 4,
        }
    }
}

impl TrainConfig {
    /// Settings for minutes-long CPU runs: smaller batches, a 64³ occupancy
    /// grid with a short all-occupied warmup, a coarser march step and the
    /// learning-rate schedule rescaled to `iterations`.
    pub fn desk(iterations: usize) -> Self {
        Self {
            iterations,
            rays_per_batch: 512,
            lr_schedule: LrSchedule::scaled_to(iterations),
            occupancy: OccupancyConfig {
                resolution: 64,
                warmup_iters: 64,
                ..Default::default()
            },
            march_step: DESK_STEP,
            eval_every: 500,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.rays_per_batch == 0 {
            return bad("rays_per_batch must be positive");
        }
        if !(self.lambda_sparsity >= 0.0 && self.lambda_sparsity.is_finite()) {
            return bad("lambda_sparsity must be a finite non-negative number");
        }
        if !(self.march_step > 0.0 && self.march_step.is_finite()) {
            return bad("march_step must be positive");
        }
        if !(self.lr_schedule.base_lr > 0.0) {
            return bad("lr_schedule.base_lr must be positive");
        }
        if self.iterations > 0 && self.iterations <= self.lr_schedule.warmup_iters {
            return bad("iterations must exceed lr_schedule.warmup_iters");
        }
        if self.occupancy.resolution == 0 || self.occupancy.update_interval == 0 {
            return bad("occupancy resolution and update_interval must be positive");
        }
        Ok(())
    }

    pub fn render_settings(&self, background: [f32; 3]) -> RenderSettings {
        RenderSettings {
            march_step: self.march_step,
            stop_transmittance: self.stop_transmittance,
            background,
            occupancy: self.occupancy,
            rebuild_passes: self.rebuild_passes,
            rebuild_seed: self.seed,
        }
    }
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Rays in normalized scene space with their target colors.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBatch {
    pub rays: Vec<Ray>,
    pub targets: Vec<[f32; 3]>,
}

/// Draws training pixels across all views without replacement: every pixel is
/// visited once per epoch, in a fresh random order each epoch.
#[derive(Debug, Clone)]
pub struct PixelSampler {
    /// Pixel count before each view, plus the total.
    offsets: Vec<usize>,
    order: Vec<u32>,
    cursor: usize,
}

impl PixelSampler {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Dataset("training split has no images".into()));
        }
        let mut offsets = vec![0];
        for img in &dataset.images {
            offsets.push(offsets.last().unwrap() + img.width * img.height);
        }
        let total = *offsets.last().unwrap();
        if total == 0 || total > u32::MAX as usize {
            return Err(Error::Dataset(format!("unsupported training pixel count {total}")));
        }
        Ok(Self {
            offsets,
            order: (0..total as u32).collect(),
            cursor: total,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.order.len()
    }

    fn next_pixel<R: Rng + ?Sized>(&mut self, rng: &mut R) -> (usize, usize) {
        if self.cursor == self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let k = self.order[self.cursor] as usize;
        self.cursor += 1;
        let view = self.offsets.partition_point(|&o| o <= k) - 1;
        (view, k - self.offsets[view])
    }

    /// The next `n` pixels as jittered rays with their target colors.
    pub fn batch<R: Rng + ?Sized>(&mut self, dataset: &Dataset, n: usize, rng: &mut R) -> Result<RayBatch> {
        let mut rays = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let (v, p) = self.next_pixel(rng);
            let img = &dataset.images[v];
            let (i, j) = (p % img.width, p / img.width);
            let jitter = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            rays.push(scene_ray(&dataset.cameras[v], &dataset.scene_transform, (i, j), Some(jitter))?);
            targets.push(img.get(i, j));
        }
        Ok(RayBatch { rays, targets })
    }
}

/// Mean over rays of the squared color error.
pub fn recon_loss(preds: &[[f64; 3]], targets: &[[f32; 3]]) -> f64 {
    let sum: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (0..3).map(|c| (p[c] - t[c] as f64).powi(2)).sum::<f64>())
        .sum();
    sum / preds.len().max(1) as f64
}

/// Mean over samples of `log(1 + 2σ²)`.
pub fn sparsity_loss(sigmas: &[f32]) -> f64 {
    let sum: f64 = sigmas.iter().map(|&s| (1.0 + 2.0 * (s as f64).powi(2)).ln()).sum();
    sum / sigmas.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub sparsity: f64,
    pub total: f64,
    pub rays: usize,
    /// Samples that went through the density head.
    pub samples: usize,
    /// Samples that reached the color head.
    pub shaded: usize,
}

/// Forward and backward over one batch. Gradients are accumulated into the
/// model; nothing is updated.
pub fn forward_backward(
    model: &mut FieldModel,
    occ: &OccupancyGrid,
    batch: &RayBatch,
    lambda_sparsity: f32,
    march: &MarchParams,
    background: [f32; 3],
    stop_transmittance: f64,
) -> Result<LossBreakdown> {
    let n_rays = batch.rays.len();
    let mut samples: Vec<RaySample> = Vec::new();
    let mut offsets = Vec::with_capacity(n_rays + 1);
    offsets.push(0);
    for ray in &batch.rays {
        march_ray_into(occ, ray, march, &mut samples)?;
        offsets.push(samples.len());
    }
    let positions: Vec<[f32; 3]> = samples.iter().map(|s| s.position).collect();
    let density = model.forward_density(&positions)?;

    // Only samples before early termination need color.
    let mut rows = Vec::new();
    let mut dirs = Vec::new();
    let mut kept = Vec::with_capacity(n_rays);
    for (r, ray) in batch.rays.iter().enumerate() {
        let mut t = 1.0f64;
        let mut k = offsets[r];
        while k < offsets[r + 1] && t >= stop_transmittance {
            t *= (-(density.sigma[k] as f64) * samples[k].delta as f64).exp();
            rows.push(k);
            dirs.push(ray.dir);
            k += 1;
        }
        kept.push(k - offsets[r]);
    }
    let color = model.forward_color(&density, &rows, &dirs)?;

    let bg = background.map(|v| v as f64);
    let mut preds = Vec::with_capacity(n_rays);
    let mut d_sigma = vec![0.0f32; samples.len()];
    let mut d_color = vec![[0.0f32; 3]; rows.len()];
    let mut buf = Vec::new();
    let mut color_row = 0;
    let inv_rays = 1.0 / n_rays.max(1) as f64;
    for (r, target) in batch.targets.iter().enumerate() {
        let start = offsets[r];
        buf.clear();
        buf.extend((0..kept[r]).map(|i| CompositeSample {
            sigma: density.sigma[start + i] as f64,
            color: color.colors[color_row + i].map(|v| v as f64),
            delta: samples[start + i].delta as f64,
        }));
        let result = composite(&buf, bg, stop_transmittance);
        let d_pred = [0, 1, 2].map(|c| 2.0 * (result.color[c] - target[c] as f64) * inv_rays);
        for (i, (ds, dc)) in composite_backward(&buf, &result, d_pred).into_iter().enumerate() {
            d_sigma[start + i] = ds as f32;
            d_color[color_row + i] = dc.map(|v| v as f32);
        }
        color_row += kept[r];
        preds.push(result.color);
    }

    let recon = recon_loss(&preds, &batch.targets);
    let sparsity = sparsity_loss(&density.sigma);
    if lambda_sparsity > 0.0 && !samples.is_empty() {
        let scale = lambda_sparsity as f64 / samples.len() as f64;
        for (g, &s) in d_sigma.iter_mut().zip(&density.sigma) {
            let s = s as f64;
            *g += (scale * 4.0 * s / (1.0 + 2.0 * s * s)) as f32;
        }
    }
    model.backward(&density, &color, &d_sigma, &d_color)?;
    Ok(LossBreakdown {
        recon,
        sparsity,
        total: recon + lambda_sparsity as f64 * sparsity,
        rays: n_rays,
        samples: samples.len(),
        shaded: rows.len(),
    })
}

/// Mutable training state for one run.
pub struct Trainer<'a> {
    pub model: FieldModel,
    pub occupancy: OccupancyGrid,
    pub config: TrainConfig,
    pub iter: usize,
    adam: Adam,
    dataset: &'a Dataset,
    batch_rng: ChaCha8Rng,
    pixels: PixelSampler,
    occ_rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(model: FieldModel, dataset: &'a Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let occupancy = OccupancyGrid::new(config.occupancy, config.march_step)?;
        Ok(Self {
            model,
            occupancy,
            adam: Adam::new(config.adam),
            dataset,
            batch_rng: stream_rng(config.seed, BATCH_STREAM),
            pixels: PixelSampler::new(dataset)?,
            occ_rng: stream_rng(config.seed, OCCUPANCY_STREAM),
            iter: 0,
            config,
        })
    }

    pub fn march_params(&self) -> MarchParams {
        MarchParams {
            step: self.config.march_step,
            ..Default::default()
        }
    }

    pub fn lr(&self) -> f32 {
        self.config.lr_schedule.lr_at(self.iter)
    }

    /// One iteration: occupancy maintenance, a batch, and an Adam update.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        self.occupancy.update(&self.model, self.iter, &mut self.occ_rng);
        let batch = self.pixels.batch(self.dataset, self.config.rays_per_batch, &mut self.batch_rng)?;
        let march = self.march_params();
        let loss = forward_backward(
            &mut self.model,
            &self.occupancy,
            &batch,
            self.config.lambda_sparsity,
            &march,
            self.dataset.background,
            self.config.stop_transmittance,
        )?;
        let lr = self.lr();
        if !loss.total.is_finite() {
            self.model.zero_grad();
            return Err(Error::NonFiniteLoss {
                iter: self.iter,
                lr,
                rays: loss.rays,
                samples: loss.samples,
            });
        }
        let mut views = self.model.param_views();
        self.adam.step(&mut views, lr)?;
        drop(views);
        self.model.mark_updated();
        self.iter += 1;
        Ok(loss)
    }

    pub fn scene(&self) -> SceneModel {
        SceneModel {
            field: self.model.clone(),
            transform: self.dataset.scene_transform,
            settings: self.config.render_settings(self.dataset.background),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub loss_recon: f64,
    pub loss_sparsity: f64,
    pub lr: f64,
    pub samples_per_ray: f64,
    pub occ_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_eval: Option<f64>,
    pub wall_ms: u64,
}

pub struct TrainOutcome {
    pub scene: SceneModel,
    pub losses: Vec<LossBreakdown>,
    pub log: Vec<LogRecord>,
    /// Occupancy grid as it stood at the end of training.
    pub occupancy: OccupancyGrid,
    /// Test-split metrics of the final model with rebuilt occupancy.
    pub final_report: Option<MetricReport>,
    pub wall_ms: u64,
}

/// Run the whole schedule. `sink` sees every log record as it is produced.
pub fn train(
    model: FieldModel,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    config: &TrainConfig,
    sink: &mut dyn FnMut(&LogRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut trainer = Trainer::new(model, train_set, config.clone())?;
    let mut losses = Vec::with_capacity(config.iterations);
    let mut log = Vec::new();
    let mut window = (0.0, 0.0, 0usize, 0usize);
    for it in 0..config.iterations {
        let lr = trainer.lr();
        let loss = trainer.step()?;
        losses.push(loss);
        window.0 += loss.recon;
        window.1 += loss.sparsity;
        window.2 += loss.samples;
        window.3 += loss.rays;
        let last = it + 1 == config.iterations;
        let log_now = last || (config.log_every > 0 && (it + 1) % config.log_every == 0);
        let eval_now = test_set.is_some() && config.eval_every > 0 && (it + 1) % config.eval_every == 0 && !last;
        if log_now || eval_now {
            let psnr_eval = match (eval_now, test_set) {
                (true, Some(test)) => {
                    let scene = trainer.scene();
                    let images = scene.render_views(&trainer.occupancy, test)?;
                    Some(MetricReport::evaluate(&images, &test.images)?.mean_psnr_db)
                }
                _ => None,
            };
            let count = (window.3 / config.rays_per_batch).max(1) as f64;
            let record = LogRecord {
                iter: it + 1,
                loss_recon: window.0 / count,
                loss_sparsity: window.1 / count,
                lr: lr as f64,
                samples_per_ray: window.2 as f64 / window.3.max(1) as f64,
                occ_fraction: trainer.occupancy.occupied_fraction(),
                psnr_eval,
                wall_ms: start.elapsed().as_millis() as u64,
            };
            window = (0.0, 0.0, 0, 0);
            if !last {
                sink(&record)?;
            }
            log.push(record);
        }
    }

    let scene = trainer.scene();
    let final_report = match test_set {
        Some(test) => Some(scene.evaluate(test)?.0),
        None => None,
    };
    if let Some(last) = log.last_mut() {
        last.psnr_eval = final_report.as_ref().map(|r| r.mean_psnr_db);
        last.wall_ms = start.elapsed().as_millis() as u64;
        sink(last)?;
    }
    Ok(TrainOutcome {
        scene,
        losses,
        log,
        occupancy: trainer.occupancy,
        final_report,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// PSNR of predicting the training-set mean color for every test pixel.
pub fn mean_color_baseline(train_set: &Dataset, test_set: &Dataset) -> Result<f64> {
    let mean = train_set.mean_color();
    let preds: Vec<_> = test_set
        .images
        .iter()
        .map(|img| crate::raster::Image::filled(img.width, img.height, mean))
        .collect();
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(&test_set.images) {
        total += crate::metrics::psnr(p, t)?;
    }
    Ok(total / test_set.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldConfig;
    use crate::grid::{GridConfig, LevelStack};
    use crate::raster::Image;
    use crate::render::{Camera, SceneTransform};
    use crate::data::Split;

    fn small_config() -> FieldConfig {
        let grid = GridConfig::from_stacks(
            LevelStack {
                levels: 2,
                min_resolution: 4,
                max_resolution: 8,
                log2_table_size: 10,
            },
            LevelStack {
                levels: 1,
                min_resolution: 8,
                max_resolution: 8,
                log2_table_size: 8,
            },
            1,
        )
        .unwrap();
        FieldConfig {
            hidden_width: 16,
            ..FieldConfig::new(grid)
        }
    }

    fn single_pixel_dataset(target: [f32; 3]) -> Dataset {
        let cam = Camera::look_at(1, 1, 0.2, [0.5, 0.5, 2.5], [0.5, 0.5, 0.5], [0.0, 1.0, 0.0]);
        Dataset {
            split: Split::Train,
            cameras: vec![cam],
            images: vec![Image::filled(1, 1, target)],
            scene_transform: SceneTransform::IDENTITY,
            background: [1.0; 3],
        }
    }

    fn quick_config(iters: usize) -> TrainConfig {
        TrainConfig {
            iterations: iters,
            rays_per_batch: 8,
            lr_schedule: LrSchedule::scaled_to(iters),
            occupancy: OccupancyConfig {
                resolution: 8,
                ..Default::default()
            },
            march_step: 1.732_050_8 / 64.0,
            eval_every: 0,
            log_every: 10,
            ..Default::default()
        }
    }

    #[test]
    fn pixel_sampler_covers_each_epoch() {
        let cam = Camera::look_at(3, 2, 0.5, [0.5, 0.5, 2.5], [0.5; 3], [0.0, 1.0, 0.0]);
        let mut data = single_pixel_dataset([0.0; 3]);
        data.cameras = vec![cam; 2];
        data.images = (0..2)
            .map(|v| Image {
                width: 3,
                height: 2,
                pixels: (0..6).map(|p| [v as f32, p as f32, 0.0]).collect(),
            })
            .collect();
        let mut sampler = PixelSampler::new(&data).unwrap();
        assert_eq!(sampler.pixel_count(), 12);
        let mut rng = stream_rng(3, BATCH_STREAM);
        for _ in 0..3 {
            let batch = sampler.batch(&data, 12, &mut rng).unwrap();
            let mut seen: Vec<(u32, u32)> = batch.targets.iter().map(|t| (t[0] as u32, t[1] as u32)).collect();
            seen.sort();
            let all: Vec<(u32, u32)> = (0..2).flat_map(|v| (0..6).map(move |p| (v, p))).collect();
            assert_eq!(seen, all);
        }
    }

    #[test]
    fn losses_match_definitions() {
        assert_eq!(recon_loss(&[[1.0, 0.0, 0.0], [0.0; 3]], &[[0.0; 3], [0.0; 3]]), 0.5);
        assert_eq!(sparsity_loss(&[0.0, 0.0]), 0.0);
        assert!((sparsity_loss(&[1.0]) - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_lambda_gives_zero_sparsity_gradient() {
        let data = single_pixel_dataset([0.2, 0.4, 0.6]);
        let model = FieldModel::new(small_config(), &mut stream_rng(1, INIT_STREAM)).unwrap();
        let occ = OccupancyGrid::new(OccupancyConfig { resolution: 8, ..Default::default() }, 0.02).unwrap();
        let batch = PixelSampler::new(&data).unwrap().batch(&data, 4, &mut stream_rng(1, BATCH_STREAM)).unwrap();
        let march = MarchParams { step: 0.02, ..Default::default() };
        let mut a = model.clone();
        let l = forward_backward(&mut a, &occ, &batch, 0.0, &march, [1.0; 3], 1e-4).unwrap();
        assert_eq!(l.total, l.recon);
        assert!(l.sparsity > 0.0);
        let mut c = model.clone();
        forward_backward(&mut c, &occ, &batch, 1e-2, &march, [1.0; 3], 1e-4).unwrap();
        assert_ne!(a.density.params[0].grads, c.density.params[0].grads);
    }

    #[test]
    fn single_pixel_loss_decreases() {
        let data = single_pixel_dataset([0.1, 0.7, 0.3]);
        let model = FieldModel::new(small_config(), &mut stream_rng(2, INIT_STREAM)).unwrap();
        let config = quick_config(100);
        let mut trainer = Trainer::new(model, &data, config).unwrap();
        let first = trainer.step().unwrap().recon;
        let mut last = first;
        for _ in 0..99 {
            last = trainer.step().unwrap().recon;
        }
        assert!(last < first * 0.1, "{first} -> {last}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = single_pixel_dataset([0.5, 0.2, 0.9]);
        let run = || {
            let model = FieldModel::new(small_config(), &mut stream_rng(3, INIT_STREAM)).unwrap();
            train(model, &data, None, &quick_config(20), &mut |_| Ok(())).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.scene.field, b.scene.field);
        assert_eq!(
            a.losses.iter().map(|l| l.total).collect::<Vec<_>>(),
            b.losses.iter().map(|l| l.total).collect::<Vec<_>>()
        );
        assert_eq!(a.log.len(), 2);
    }

    #[test]
    fn saturated_latents_never_flip() {
        let data = single_pixel_dataset([0.5, 0.2, 0.9]);
        let mut model = FieldModel::new(small_config(), &mut stream_rng(4, INIT_STREAM)).unwrap();
        for t in model.grid.tensors_mut() {
            for (i, v) in t.latent.iter_mut().enumerate() {
                *v = if i % 3 == 0 { -1.5 } else { 2.0 };
            }
        }
        let before: Vec<_> = model.grid.tensors().map(|t| t.pack()).collect();
        let mut trainer = Trainer::new(model, &data, quick_config(30)).unwrap();
        for _ in 0..30 {
            trainer.step().unwrap();
        }
        let after: Vec<_> = trainer.model.grid.tensors().map(|t| t.pack()).collect();
        assert_eq!(before, after);
        let mlp_moved = trainer.model.density.params[0].values != FieldModel::new(small_config(), &mut stream_rng(4, INIT_STREAM)).unwrap().density.params[0].values;
        assert!(mlp_moved);
    }

    #[test]
    fn zero_iterations_leave_model_unchanged() {
        let data = single_pixel_dataset([0.5, 0.2, 0.9]);
        let model = FieldModel::new(small_config(), &mut stream_rng(5, INIT_STREAM)).unwrap();
        let out = train(model.clone(), &data, None, &quick_config(0), &mut |_| Ok(())).unwrap();
        assert_eq!(out.scene.field, model);
        assert!(out.losses.is_empty());
    }

    #[test]
    fn baseline_is_finite() {
        let data = single_pixel_dataset([0.5, 0.2, 0.9]);
        let p = mean_color_baseline(&data, &data).unwrap();
        assert_eq!(p, 100.0);
    }
}
