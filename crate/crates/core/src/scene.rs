//! A trained field together with everything needed to render it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::field::FieldModel;
use crate::metrics::MetricReport;
use crate::raster::Image;
use crate::render::{render_image, RenderOptions, SceneTransform};
use crate::sampler::{MarchParams, OccupancyConfig, OccupancyGrid, DEFAULT_STEP};

/// RNG stream used when rebuilding occupancy for inference.
pub const REBUILD_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub march_step: f32,
    pub stop_transmittance: f64,
    pub background: [f32; 3],
    pub occupancy: OccupancyConfig,
    /// Refresh passes used to rebuild occupancy for a loaded model.
    pub rebuild_passes: usize,
    pub rebuild_seed: u64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            march_step: DEFAULT_STEP,
            stop_transmittance: 1e-4,
            background: [1.0; 3],
            occupancy: OccupancyConfig::default(),
            rebuild_passes: 4,
            rebuild_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub field: FieldModel,
    pub transform: SceneTransform,
    pub settings: RenderSettings,
}

impl SceneModel {
    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            transform: self.transform,
            march: MarchParams {
                step: self.settings.march_step,
                ..Default::default()
            },
            background: self.settings.background,
            stop_transmittance: self.settings.stop_transmittance,
        }
    }

    /// Deterministic occupancy grid for inference, rebuilt from the field.
    pub fn rebuild_occupancy(&self) -> Result<OccupancyGrid> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.settings.rebuild_seed);
        rng.set_stream(REBUILD_STREAM);
        OccupancyGrid::rebuild(
            self.settings.occupancy,
            self.settings.march_step,
            &self.field,
            self.settings.rebuild_passes,
            &mut rng,
        )
    }

    pub fn render_views(&self, occ: &OccupancyGrid, dataset: &Dataset) -> Result<Vec<Image>> {
        let options = self.render_options();
        dataset
            .cameras
            .iter()
            .map(|cam| render_image(&self.field, occ, cam, &options))
            .collect()
    }

    /// Rebuild occupancy, render every view of `dataset` and score it.
    pub fn evaluate(&self, dataset: &Dataset) -> Result<(MetricReport, Vec<Image>)> {
        let occ = self.rebuild_occupancy()?;
        let images = self.render_views(&occ, dataset)?;
        let report = MetricReport::evaluate(&images, &dataset.images)?;
        Ok((report, images))
    }
}
