//! Scene-graph synthesis at virtual viewpoints.
//!
//! The real frame is described once (appearance RRVs per part). For each
//! virtual viewpoint its depth is back-projected, moved into the virtual
//! camera and Z-buffered; parts and edges are recomputed on the warped label
//! raster while each warped part inherits the RRV of the real part that
//! supplied most of its pixels.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::{
    describe_graph_with, uniform_rrv, FeatureExtractor, NearestTable, Vocabulary,
};
use crate::error::{Error, Result};
use crate::geometry::{
    backproject, is_valid_view, margin_fraction, project_zbuffer, transform_points,
    CameraIntrinsics, PointCloud, Pose,
};
use crate::instrument;
use crate::raster::LabelRaster;
use crate::scene_graph::{
    build_graph, extract_parts_with_map, Bbox, PartMap, SceneGraph, DEFAULT_MIN_PART_AREA,
};
use crate::synthworld::Frame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualViewpointSpec {
    pub count: usize,
    pub radii: Vec<f64>,
    /// Camera height in meters; `None` keeps the real camera's height.
    pub height: Option<f64>,
    /// Maximum azimuth jitter in degrees.
    pub jitter_deg: f64,
}

impl Default for VirtualViewpointSpec {
    fn default() -> Self {
        Self {
            count: 10,
            radii: vec![0.5, 1.0, 1.5],
            height: None,
            jitter_deg: 5.0,
        }
    }
}

impl VirtualViewpointSpec {
    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() || self.radii.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::input("viewpoint radii must be positive"));
        }
        if !(0.0..=180.0).contains(&self.jitter_deg) {
            return Err(Error::input("jitter must be within [0, 180] degrees"));
        }
        Ok(())
    }
}

/// `count` poses around `rep_point`, viewpoint `i` on ring `i mod R` at
/// azimuth `2 pi i / count` plus seeded jitter, each looking straight at the
/// point.
pub fn sample_virtual_viewpoints(
    rep_point: [f64; 2],
    height: f64,
    spec: &VirtualViewpointSpec,
    seed: u64,
) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = spec.jitter_deg.to_radians();
    (0..spec.count)
        .map(|i| {
            let r = spec.radii[i % spec.radii.len()];
            let dj = if jitter > 0.0 {
                rng.gen_range(-jitter..=jitter)
            } else {
                0.0
            };
            let azimuth = 2.0 * PI * i as f64 / spec.count as f64 + dj;
            let x = rep_point[0] + r * azimuth.cos();
            let y = rep_point[1] + r * azimuth.sin();
            let heading = (rep_point[1] - y).atan2(rep_point[0] - x);
            Pose::from_planar(x, y, heading, height)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub viewpoints: VirtualViewpointSpec,
    pub min_part_area: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            viewpoints: VirtualViewpointSpec::default(),
            min_part_area: DEFAULT_MIN_PART_AREA,
        }
    }
}

/// A real frame reduced to what synthesis needs: its world-frame point
/// cloud, its described scene graph and the pixel-to-part map.
#[derive(Debug, Clone)]
pub struct PreparedView {
    intrinsics: CameraIntrinsics,
    pose: Pose,
    world_cloud: PointCloud,
    graph: SceneGraph,
    part_map: PartMap,
    keypoints: Vec<[f64; 2]>,
    min_part_area: usize,
}

/// Extracts parts, builds and describes the scene graph of a real frame.
pub fn real_graph(
    frame: &Frame,
    table: &NearestTable,
    min_part_area: usize,
) -> (SceneGraph, PartMap) {
    let (parts, map) = extract_parts_with_map(&frame.labels, min_part_area);
    let graph = build_graph(&parts, frame.intrinsics.width, frame.intrinsics.height);
    (describe_graph_with(&graph, table), map)
}

impl PreparedView {
    pub fn new(
        frame: &Frame,
        vocab: &Vocabulary,
        extractor: &dyn FeatureExtractor,
        min_part_area: usize,
    ) -> Result<Self> {
        frame.validate()?;
        let full = Bbox::full(frame.intrinsics.width, frame.intrinsics.height);
        let table = NearestTable::new(extractor.extract(frame, &full), vocab);
        let (graph, part_map) = real_graph(frame, &table, min_part_area);
        let cloud = backproject(&frame.depth, &frame.intrinsics, &frame.labels)?;
        Ok(Self {
            intrinsics: frame.intrinsics,
            pose: frame.pose,
            world_cloud: transform_points(&cloud, &frame.pose),
            graph,
            part_map,
            keypoints: table.features().keypoints().to_vec(),
            min_part_area,
        })
    }

    pub fn graph(&self) -> &SceneGraph {
        &self.graph
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn synthesize(&self, virtual_pose: &Pose) -> SynthesisOutcome {
        instrument::record_synthesis();
        let k = self.graph.nodes[0].descriptor.as_ref().map_or(0, Vec::len);
        let cam_cloud = transform_points(&self.world_cloud, &virtual_pose.inverse());
        let proj = project_zbuffer(&cam_cloud, &self.intrinsics);
        let margin = margin_fraction(&proj.labels);
        if !is_valid_view(margin) {
            return SynthesisOutcome::Rejected { margin };
        }
        let (parts, warped_map) = extract_parts_with_map(&proj.labels, self.min_part_area);

        // votes[warped part] -> real part -> pixel count
        let mut votes: Vec<HashMap<usize, usize>> = vec![HashMap::new(); parts.len()];
        let mut target_of: HashMap<(u32, u32), [f64; 2]> = HashMap::new();
        for ((u, v), src) in proj.pixel_map.iter() {
            target_of.insert(src, [u as f64, v as f64]);
            if let (Some(w), Some(r)) = (
                warped_map.part_at(u, v),
                self.part_map.part_at(src.0 as usize, src.1 as usize),
            ) {
                *votes[w].entry(r).or_insert(0) += 1;
            }
        }

        let mut graph = build_graph(&parts, self.intrinsics.width, self.intrinsics.height);
        graph.nodes[0].descriptor = self.graph.nodes[0].descriptor.clone();
        let mut sources = Vec::with_capacity(parts.len());
        for (i, tally) in votes.iter().enumerate() {
            let winner = tally
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&r, _)| r);
            graph.nodes[i + 1].descriptor = Some(match winner {
                Some(r) => self.graph.nodes[r + 1]
                    .descriptor
                    .clone()
                    .unwrap_or_else(|| uniform_rrv(k)),
                None => uniform_rrv(k),
            });
            sources.push(winner);
        }
        graph.class = self.graph.class;

        let keypoints = self
            .keypoints
            .iter()
            .filter_map(|kp| {
                target_of
                    .get(&(kp[0] as u32, kp[1] as u32))
                    .map(|&t| (*kp, t))
            })
            .collect();
        SynthesisOutcome::Valid(Box::new(WarpedView {
            graph,
            margin,
            part_sources: sources,
            keypoints,
            labels: proj.labels,
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpedView {
    pub graph: SceneGraph,
    pub margin: f64,
    /// Real part index each warped part inherited its descriptor from.
    pub part_sources: Vec<Option<usize>>,
    /// Real keypoint and where it landed in the virtual view.
    pub keypoints: Vec<([f64; 2], [f64; 2])>,
    /// The warped label image itself, margin where nothing landed.
    pub labels: LabelRaster,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthesisOutcome {
    Valid(Box<WarpedView>),
    Rejected { margin: f64 },
}

impl SynthesisOutcome {
    pub fn valid(self) -> Option<WarpedView> {
        match self {
            SynthesisOutcome::Valid(v) => Some(*v),
            SynthesisOutcome::Rejected { .. } => None,
        }
    }
}

/// Convenience wrapper: prepares the real frame and synthesizes one view.
pub fn synthesize_scene_graph(
    real: &Frame,
    virtual_pose: &Pose,
    vocab: &Vocabulary,
    extractor: &dyn FeatureExtractor,
    min_part_area: usize,
) -> Result<SynthesisOutcome> {
    Ok(PreparedView::new(real, vocab, extractor, min_part_area)?.synthesize(virtual_pose))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedGraph {
    pub graph: SceneGraph,
    pub class: u32,
    pub pose: Pose,
    /// `None` for the real training graph.
    pub viewpoint: Option<usize>,
    pub margin: f64,
}

impl SynthesizedGraph {
    pub fn is_real(&self) -> bool {
        self.viewpoint.is_none()
    }
}

/// Per-class seed for viewpoint jitter.
pub fn viewpoint_seed(seed: u64, class: u32) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (class as u64).wrapping_add(1)
}

/// Real graph plus every valid synthesized graph for each class, in
/// `(class, viewpoint)` order. `training[i]` is the frame of class `i`.
pub fn synthesize_training_set(
    training: &[&Frame],
    rep_points: &[[f64; 2]],
    vocab: &Vocabulary,
    extractor: &dyn FeatureExtractor,
    config: &SynthesisConfig,
    seed: u64,
) -> Result<Vec<SynthesizedGraph>> {
    if training.len() != rep_points.len() {
        return Err(Error::input("one representative point per training frame"));
    }
    if config.viewpoints.count > 0 {
        config.viewpoints.validate()?;
    }
    let per_class: Vec<Vec<SynthesizedGraph>> = training
        .par_iter()
        .zip(rep_points.par_iter())
        .enumerate()
        .map(|(class, (frame, rep))| {
            let class = class as u32;
            let mut prepared = PreparedView::new(frame, vocab, extractor, config.min_part_area)?;
            prepared.graph.class = Some(class);
            let mut out = vec![SynthesizedGraph {
                graph: prepared.graph.clone(),
                class,
                pose: frame.pose,
                viewpoint: None,
                margin: 0.0,
            }];
            let height = config.viewpoints.height.unwrap_or(frame.pose.translation.z);
            let poses = sample_virtual_viewpoints(
                *rep,
                height,
                &config.viewpoints,
                viewpoint_seed(seed, class),
            );
            for (i, pose) in poses.iter().enumerate() {
                if let Some(view) = prepared.synthesize(pose).valid() {
                    out.push(SynthesizedGraph {
                        graph: view.graph,
                        class,
                        pose: *pose,
                        viewpoint: Some(i),
                        margin: view.margin,
                    });
                }
            }
            if config.viewpoints.count > 0 && out.len() == 1 {
                log::warn!("class {class}: no valid synthesized view, using the real graph only");
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_class.into_iter().flatten().collect())
}
