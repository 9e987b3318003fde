//! Pipeline configuration: one TOML file, every seed explicit.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use cvgl::dataset::{ClassSampling, PoseGrid};
use cvgl::descriptors::{FeatureExtractor, FeatureFiles, LitePatch};
use cvgl::eval::BenchmarkConfig;
use cvgl::gcn::TrainConfig;
use cvgl::geometry::{CameraIntrinsics, VisibilityCone};
use cvgl::synthesis::{SynthesisConfig, VirtualViewpointSpec};
use cvgl::synthworld::WorldSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds pose sampling, class sampling and viewpoint jitter.
    pub seed: u64,
    pub world: WorldSection,
    pub dataset: DatasetSection,
    pub synthesis: SynthesisSection,
    pub descriptor: DescriptorSection,
    pub gcn: GcnSection,
    /// N values for `report`'s sweep.
    pub sweep: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub seed: u64,
    pub pool_size: usize,
    pub camera_height: f64,
    pub clearance: f64,
    pub intrinsics: CameraIntrinsics,
    pub spec: WorldSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub k: usize,
    pub grid_cell: f64,
    pub grid_azimuth_deg: f64,
    pub hard: bool,
    pub cone_hfov_deg: f64,
    pub cone_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSection {
    pub n_synth: usize,
    pub radii: Vec<f64>,
    pub height: Option<f64>,
    pub jitter_deg: f64,
    pub min_part_area: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorKind {
    Litepatch,
    /// Precomputed `{id:05}.cvft` files, one per frame.
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorSection {
    pub kind: DescriptorKind,
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnSection {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub class_balanced: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: WorldSection::default(),
            dataset: DatasetSection::default(),
            synthesis: SynthesisSection::default(),
            descriptor: DescriptorSection::default(),
            gcn: GcnSection::default(),
            sweep: vec![0, 5, 10, 20],
        }
    }
}

impl Default for WorldSection {
    fn default() -> Self {
        let b = BenchmarkConfig::default();
        Self {
            seed: b.world_seed,
            pool_size: b.pool_size,
            camera_height: b.camera_height,
            clearance: b.clearance,
            intrinsics: b.intrinsics,
            spec: b.world,
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        let grid = PoseGrid::default();
        let cone = VisibilityCone::default();
        Self {
            k: 20,
            grid_cell: grid.cell,
            grid_azimuth_deg: grid.azimuth_deg,
            hard: false,
            cone_hfov_deg: cone.hfov.to_degrees(),
            cone_range: cone.max_range,
        }
    }
}

impl Default for SynthesisSection {
    fn default() -> Self {
        let v = VirtualViewpointSpec::default();
        Self {
            n_synth: v.count,
            radii: v.radii,
            height: v.height,
            jitter_deg: v.jitter_deg,
            min_part_area: SynthesisConfig::default().min_part_area,
        }
    }
}

impl Default for DescriptorSection {
    fn default() -> Self {
        Self {
            kind: DescriptorKind::Litepatch,
            dir: None,
        }
    }
}

impl Default for GcnSection {
    fn default() -> Self {
        let t = BenchmarkConfig::default().train;
        Self {
            hidden: t.hidden,
            epochs: t.epochs,
            lr: t.lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            class_balanced: t.class_balanced,
            seed: t.seed,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn cone(&self) -> Result<VisibilityCone> {
        Ok(VisibilityCone::new(
            self.dataset.cone_hfov_deg.to_radians(),
            self.dataset.cone_range,
        )?)
    }

    pub fn sampling(&self) -> ClassSampling {
        ClassSampling {
            grid: PoseGrid {
                cell: self.dataset.grid_cell,
                azimuth_deg: self.dataset.grid_azimuth_deg,
            },
            hard: self.dataset.hard,
        }
    }

    pub fn synthesis(&self) -> SynthesisConfig {
        SynthesisConfig {
            viewpoints: VirtualViewpointSpec {
                count: self.synthesis.n_synth,
                radii: self.synthesis.radii.clone(),
                height: self.synthesis.height,
                jitter_deg: self.synthesis.jitter_deg,
            },
            min_part_area: self.synthesis.min_part_area,
        }
    }

    /// Training settings. The network seed is mixed with the pipeline seed
    /// the same way the in-memory benchmark does.
    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.gcn.epochs,
            lr: self.gcn.lr,
            momentum: self.gcn.momentum,
            hidden: self.gcn.hidden,
            class_balanced: self.gcn.class_balanced,
            weight_decay: self.gcn.weight_decay,
            seed: self.gcn.seed ^ self.seed,
        }
    }

    pub fn benchmark(&self) -> Result<BenchmarkConfig> {
        Ok(BenchmarkConfig {
            world_seed: self.world.seed,
            world: self.world.spec.clone(),
            pool_size: self.world.pool_size,
            camera_height: self.world.camera_height,
            clearance: self.world.clearance,
            intrinsics: self.world.intrinsics,
            k: self.dataset.k,
            cone: self.cone()?,
            sampling: self.sampling(),
            synthesis: self.synthesis(),
            train: TrainConfig {
                seed: self.gcn.seed,
                ..self.train()
            },
            seed: self.seed,
        })
    }

    /// The configured local-feature source for the given frames.
    pub fn extractor(&self, frame_ids: &[u32]) -> Result<Arc<dyn FeatureExtractor + Send>> {
        match self.descriptor.kind {
            DescriptorKind::Litepatch => Ok(Arc::new(LitePatch)),
            DescriptorKind::Files => {
                let Some(dir) = &self.descriptor.dir else {
                    bail!("descriptor.kind = \"files\" needs descriptor.dir");
                };
                Ok(Arc::new(FeatureFiles::load_dir(dir, frame_ids).with_context(
                    || format!("loading feature files from {}", dir.display()),
                )?))
            }
        }
    }
}
