use std::fmt;
use std::path::{Path, PathBuf};

use birf_core::data::{generate_oracle, load_dataset, oracle_split_seed, OracleRig, OracleScene};
use birf_core::grid::SUPPORTED_FEATURE_DIMS;
use birf_core::{Dataset, FieldConfig, GridConfig, LevelStack, LrSchedule, Split, TrainConfig, WeightPrecision};
use serde::{Deserialize, Serialize};

/// A configuration problem, reported with the key that caused it.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError {
    pub key: String,
    pub message: String,
}

impl UsageError {
    pub fn new(key: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            key: key.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid value for `{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Reduced grid and schedule that train in minutes on a CPU.
    Desk,
    /// The full-size configuration for benchmark scenes.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F16,
}

impl From<Precision> for WeightPrecision {
    fn from(p: Precision) -> Self {
        match p {
            Precision::F32 => WeightPrecision::F32,
            Precision::F16 => WeightPrecision::F16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// `spheres` for the built-in scene or a path to a scene JSON file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<String>,
    /// Dataset directory, Blender or NSVF layout.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub train_views: usize,
    pub test_views: usize,
    pub resolution: usize,
    pub seed: u64,
    pub downsample: usize,
    pub background: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub feature_dim: usize,
    pub levels_3d: usize,
    pub min_resolution_3d: u32,
    pub max_resolution_3d: u32,
    pub log2_table_size_3d: u32,
    pub levels_2d: usize,
    pub min_resolution_2d: u32,
    pub max_resolution_2d: u32,
    pub log2_table_size_2d: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub pe_frequencies: usize,
    pub hidden_width: usize,
    pub embedding_width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    pub precision: Precision,
    pub data: DataConfig,
    pub grid: GridSection,
    pub model: ModelSection,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self {
                out: PathBuf::from("run"),
                precision: Precision::F32,
                data: DataConfig {
                    oracle: Some("spheres".into()),
                    path: None,
                    train_views: 20,
                    test_views: 5,
                    resolution: 64,
                    seed: 7,
                    downsample: 1,
                    background: [1.0; 3],
                },
                grid: GridSection {
                    feature_dim: 2,
                    levels_3d: 8,
                    min_resolution_3d: 16,
                    max_resolution_3d: 128,
                    log2_table_size_3d: 15,
                    levels_2d: 4,
                    min_resolution_2d: 16,
                    max_resolution_2d: 128,
                    log2_table_size_2d: 13,
                },
                model: ModelSection {
                    pe_frequencies: 4,
                    hidden_width: 128,
                    embedding_width: 15,
                },
                train: TrainConfig::desk(2000),
            },
            Preset::Full => Self {
                out: PathBuf::from("run"),
                precision: Precision::F32,
                data: DataConfig {
                    oracle: None,
                    path: None,
                    train_views: 0,
                    test_views: 0,
                    resolution: 800,
                    seed: 0,
                    downsample: 1,
                    background: [1.0; 3],
                },
                grid: GridSection {
                    feature_dim: 2,
                    levels_3d: 16,
                    min_resolution_3d: 16,
                    max_resolution_3d: 1024,
                    log2_table_size_3d: 19,
                    levels_2d: 4,
                    min_resolution_2d: 64,
                    max_resolution_2d: 512,
                    log2_table_size_2d: 17,
                },
                model: ModelSection {
                    pe_frequencies: 4,
                    hidden_width: 128,
                    embedding_width: 15,
                },
                train: TrainConfig::default(),
            },
        }
    }

    /// `base` with every key present in the TOML file replaced.
    pub fn from_toml_over(base: &Self, text: &str) -> Result<Self, UsageError> {
        let overlay: toml::Table = toml::from_str(text).map_err(|e| UsageError::new("config", e.message()))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| UsageError::new("config", e))?;
        // the data source is one of oracle or path; setting one drops the other
        if let (Some(toml::Value::Table(over)), Some(toml::Value::Table(data))) = (overlay.get("data"), merged.get_mut("data")) {
            for (key, other) in [("oracle", "path"), ("path", "oracle")] {
                if over.contains_key(key) {
                    data.remove(other);
                }
            }
        }
        merge(&mut merged, overlay);
        let text = toml::to_string(&merged).map_err(|e| UsageError::new("config", e))?;
        toml::from_str(&text).map_err(|e| UsageError::new("config", e.message()))
    }

    pub fn load(base: &Self, path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError::new("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml_over(base, &text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn grid_config(&self) -> Result<GridConfig, UsageError> {
        let g = &self.grid;
        if !SUPPORTED_FEATURE_DIMS.contains(&g.feature_dim) {
            return Err(UsageError::new(
                "grid.feature_dim",
                format!("{} is not supported (supported: 1, 2, 4, 8)", g.feature_dim),
            ));
        }
        GridConfig::from_stacks(
            LevelStack {
                levels: g.levels_3d,
                min_resolution: g.min_resolution_3d,
                max_resolution: g.max_resolution_3d,
                log2_table_size: g.log2_table_size_3d,
            },
            LevelStack {
                levels: g.levels_2d,
                min_resolution: g.min_resolution_2d,
                max_resolution: g.max_resolution_2d,
                log2_table_size: g.log2_table_size_2d,
            },
            g.feature_dim,
        )
        .map_err(|e| UsageError::new("grid", e))
    }

    pub fn field_config(&self) -> Result<FieldConfig, UsageError> {
        let config = FieldConfig {
            grid: self.grid_config()?,
            pe_frequencies: self.model.pe_frequencies,
            hidden_width: self.model.hidden_width,
            embedding_width: self.model.embedding_width,
        };
        config.validate().map_err(|e| UsageError::new("model", e))?;
        Ok(config)
    }

    /// Check everything before any work is done.
    pub fn validate(&self) -> Result<(), UsageError> {
        self.field_config()?;
        self.train.validate().map_err(|e| UsageError::new("train", e))?;
        let d = &self.data;
        match (&d.oracle, &d.path) {
            (Some(_), Some(_)) => return Err(UsageError::new("data", "set only one of data.oracle and data.path")),
            (None, None) => return Err(UsageError::new("data", "set data.oracle or data.path")),
            (Some(_), None) => {
                if d.train_views == 0 || d.test_views == 0 {
                    return Err(UsageError::new("data.train_views", "oracle scenes need at least one train and one test view"));
                }
                if d.resolution < 11 {
                    return Err(UsageError::new("data.resolution", "must be at least 11 pixels for SSIM"));
                }
            }
            (None, Some(_)) => {}
        }
        if d.downsample == 0 {
            return Err(UsageError::new("data.downsample", "must be at least 1"));
        }
        Ok(())
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.out.join("model.birf")
    }

    pub fn load_split(&self, split: Split) -> anyhow::Result<Dataset> {
        let d = &self.data;
        if let Some(dir) = &d.path {
            return Ok(load_dataset(dir, split, d.background, d.downsample)?);
        }
        let name = d.oracle.as_deref().unwrap_or("spheres");
        let mut scene = if name == "spheres" {
            OracleScene::spheres()
        } else {
            OracleScene::from_json(Path::new(name))?
        };
        scene.background = d.background;
        let rig = OracleRig {
            resolution: d.resolution,
            ..Default::default()
        };
        let views = match split {
            Split::Train => d.train_views,
            Split::Test | Split::Val => d.test_views,
        };
        Ok(generate_oracle(&scene, split, views, &rig, oracle_split_seed(split, d.seed))?)
    }
}

/// Rescale the learning-rate schedule together with the iteration count.
pub fn set_iterations(train: &mut TrainConfig, iterations: usize) {
    train.iterations = iterations;
    train.lr_schedule = LrSchedule {
        base_lr: train.lr_schedule.base_lr,
        ..LrSchedule::scaled_to(iterations)
    };
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_reloads_identically() {
        for preset in [Preset::Desk, Preset::Full] {
            let mut c = RunConfig::preset(preset);
            c.train.lambda_sparsity = 3.3e-5;
            c.data.background = [0.1, 0.2, 0.3];
            if preset == Preset::Full {
                c.data.path = Some("scenes/lego".into());
            }
            let back = RunConfig::from_toml_over(&RunConfig::preset(Preset::Desk), &c.to_toml()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn overlay_keeps_unset_keys() {
        let base = RunConfig::preset(Preset::Desk);
        let c = RunConfig::from_toml_over(&base, "[grid]\nfeature_dim = 4\n[train]\nseed = 9\n").unwrap();
        assert_eq!(c.grid.feature_dim, 4);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.grid.levels_3d, base.grid.levels_3d);
        assert_eq!(c.train.rays_per_batch, base.train.rays_per_batch);
    }

    #[test]
    fn bad_keys_are_named() {
        let base = RunConfig::preset(Preset::Desk);
        let mut c = base.clone();
        c.grid.feature_dim = 3;
        assert_eq!(c.validate().unwrap_err().key, "grid.feature_dim");
        let err = RunConfig::from_toml_over(&base, "[grid]\nfeture_dim = 4\n").unwrap_err();
        assert!(err.message.contains("feture_dim"), "{err}");
        let mut c = base.clone();
        c.data.path = Some("x".into());
        assert_eq!(c.validate().unwrap_err().key, "data");
        let mut c = base;
        c.train.lambda_sparsity = -1.0;
        assert_eq!(c.validate().unwrap_err().key, "train");
    }

    #[test]
    fn iterations_rescale_schedule() {
        let mut t = TrainConfig::default();
        set_iterations(&mut t, 2000);
        assert_eq!(t.lr_schedule.warmup_iters, 100);
        assert_eq!(t.lr_schedule.decay_points, vec![1500, 1800]);
    }
}
