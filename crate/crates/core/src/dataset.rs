//! Place classes, the pose-grid uniqueness rule and the train/test split.
//!
//! A frame belongs to the class whose representative point lies in its
//! visibility cone; with several candidates the one nearest the camera wins.
//! Frames that see no representative point are excluded.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descriptors::{nbnn_distance, FeatureExtractor, FeatureSet};
use crate::error::{Error, Result};
use crate::geometry::{in_visibility_cone, Pose2, VisibilityCone};
use crate::scene_graph::Bbox;
use crate::synthworld::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseGrid {
    pub cell: f64,
    pub azimuth_deg: f64,
}

impl Default for PoseGrid {
    fn default() -> Self {
        Self {
            cell: 2.0,
            azimuth_deg: 30.0,
        }
    }
}

pub type GridKey = [i64; 3];

impl PoseGrid {
    pub fn key(&self, pose: Pose2) -> GridKey {
        let heading = pose.heading.rem_euclid(2.0 * PI).to_degrees();
        [
            (pose.x / self.cell).floor() as i64,
            (pose.y / self.cell).floor() as i64,
            ((heading / self.azimuth_deg).floor() as i64)
                .rem_euclid((360.0 / self.azimuth_deg).round() as i64),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceClass {
    pub id: u32,
    pub rep_point: [f64; 2],
    pub training_frame: u32,
    pub grid_key: GridKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceClassSet {
    pub classes: Vec<PlaceClass>,
}

impl PlaceClassSet {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn rep_points(&self) -> Vec<[f64; 2]> {
        self.classes.iter().map(|c| c.rep_point).collect()
    }

    pub fn grid_unique(&self) -> bool {
        let mut seen = HashSet::new();
        self.classes.iter().all(|c| seen.insert(c.grid_key))
    }
}

/// Class whose representative point is visible and nearest to the camera;
/// ties go to the lower class index.
pub fn assign_class(pose: Pose2, classes: &PlaceClassSet, cone: VisibilityCone) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, c) in classes.classes.iter().enumerate() {
        if !in_visibility_cone(c.rep_point, pose, cone) {
            continue;
        }
        let d = (c.rep_point[0] - pose.x).hypot(c.rep_point[1] - pose.y);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassSampling {
    pub grid: PoseGrid,
    /// Pick mutually similar training frames (by NBNN distance) from a
    /// larger pool of grid-compatible candidates.
    pub hard: bool,
}

/// Representative point inside the centre frame's cone: a seeded bearing
/// within 90% of the half field of view and a range up to half the distance
/// to the first surface along that bearing (capped by the cone range).
fn sample_rep_point(frame: &Frame, cone: VisibilityCone, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let intr = &frame.intrinsics;
    let half = (cone.hfov.min(intr.hfov()) / 2.0) * 0.9;
    let pose = frame.planar();
    let bearing = rng.gen_range(-half..=half);
    // positive bearing turns left (counter-clockwise), i.e. toward smaller u
    let u = (intr.cx - intr.fx * bearing.tan())
        .round()
        .clamp(0.0, intr.width as f64 - 1.0) as usize;
    let v = (intr.cy.round() as usize).min(intr.height - 1);
    let z = frame.depth.get(u, v);
    let surface = if z > 0.0 {
        z / bearing.cos()
    } else {
        cone.max_range
    };
    // halfway to the surface keeps the place in open space in front of the
    // camera, where the virtual rings mostly see what the frame saw
    let hi = (0.5 * surface).min(cone.max_range).max(1e-3);
    let lo = (0.5 * hi).min(1.0);
    let r = rng.gen_range(lo..=hi);
    let a = pose.heading + bearing;
    [pose.x + r * a.cos(), pose.y + r * a.sin()]
}

pub fn sample_place_classes(
    pool: &[Frame],
    k: usize,
    cone: VisibilityCone,
    sampling: &ClassSampling,
    extractor: Option<&dyn FeatureExtractor>,
    seed: u64,
) -> Result<PlaceClassSet> {
    if k == 0 {
        return Err(Error::Construction("need at least one class".into()));
    }
    let grid = sampling.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng);

    let want = if sampling.hard { 3 * k } else { k };
    let mut used = HashSet::new();
    let mut candidates = Vec::with_capacity(want);
    for &i in &order {
        if candidates.len() == want {
            break;
        }
        if used.insert(grid.key(pool[i].planar())) {
            candidates.push(i);
        }
    }
    if candidates.len() < k {
        return Err(Error::Construction(format!(
            "only {} distinct pose-grid cells in a pool of {}, need {k}",
            candidates.len(),
            pool.len()
        )));
    }

    let centers = if sampling.hard && candidates.len() > k {
        let extractor = extractor.ok_or_else(|| {
            Error::Construction("hard class sampling needs a feature extractor".into())
        })?;
        most_similar_subset(pool, &candidates, k, extractor)
    } else {
        candidates[..k].to_vec()
    };

    let classes = centers
        .iter()
        .enumerate()
        .map(|(id, &i)| {
            let frame = &pool[i];
            PlaceClass {
                id: id as u32,
                rep_point: sample_rep_point(frame, cone, &mut rng),
                training_frame: frame.id,
                grid_key: grid.key(frame.planar()),
            }
        })
        .collect();
    Ok(PlaceClassSet { classes })
}

/// Greedy: start from the first candidate and keep adding the candidate
/// with the smallest mean symmetric NBNN distance to those already chosen.
fn most_similar_subset(
    pool: &[Frame],
    candidates: &[usize],
    k: usize,
    extractor: &dyn FeatureExtractor,
) -> Vec<usize> {
    use rayon::prelude::*;
    let sets: Vec<FeatureSet> = candidates
        .par_iter()
        .map(|&i| {
            let f = &pool[i];
            extractor.extract(f, &Bbox::full(f.intrinsics.width, f.intrinsics.height))
        })
        .collect();
    let n = candidates.len();
    let dist: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            (0..n)
                .map(|b| {
                    0.5 * (nbnn_distance(&sets[a], &sets[b]) + nbnn_distance(&sets[b], &sets[a]))
                })
                .collect()
        })
        .collect();
    let mut chosen = vec![0usize];
    while chosen.len() < k {
        let next = (0..n)
            .filter(|c| !chosen.contains(c))
            .min_by(|&a, &b| {
                let ma: f64 = chosen.iter().map(|&c| dist[a][c]).sum();
                let mb: f64 = chosen.iter().map(|&c| dist[b][c]).sum();
                ma.total_cmp(&mb).then(a.cmp(&b))
            })
            .unwrap();
        chosen.push(next);
    }
    chosen.into_iter().map(|c| candidates[c]).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledSplit {
    /// `(frame id, class)`, one per class in class order.
    pub training: Vec<(u32, usize)>,
    pub test: Vec<(u32, usize)>,
    pub excluded: Vec<u32>,
}

impl LabeledSplit {
    pub fn test_counts(&self, k: usize) -> Vec<usize> {
        let mut counts = vec![0; k];
        for &(_, c) in &self.test {
            counts[c] += 1;
        }
        counts
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("split serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn build_split(pool: &[Frame], classes: &PlaceClassSet, cone: VisibilityCone) -> LabeledSplit {
    let training: Vec<(u32, usize)> = classes
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.training_frame, i))
        .collect();
    let training_ids: HashSet<u32> = training.iter().map(|t| t.0).collect();
    let mut split = LabeledSplit {
        training,
        ..LabeledSplit::default()
    };
    for frame in pool {
        if training_ids.contains(&frame.id) {
            continue;
        }
        match assign_class(frame.planar(), classes, cone) {
            Some(c) => split.test.push((frame.id, c)),
            None => split.excluded.push(frame.id),
        }
    }
    for (c, n) in split.test_counts(classes.len()).iter().enumerate() {
        if *n == 0 {
            log::warn!("class {c} has no test frames");
        }
    }
    log::info!(
        "split: {} training, {} test, {} excluded",
        split.training.len(),
        split.test.len(),
        split.excluded.len()
    );
    split
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub classes: PlaceClassSet,
    pub split: LabeledSplit,
    pub cone: VisibilityCone,
    pub split_hash: String,
}

impl SplitManifest {
    pub fn new(classes: PlaceClassSet, split: LabeledSplit, cone: VisibilityCone) -> Self {
        let split_hash = split.hash();
        Self {
            classes,
            split,
            cone,
            split_hash,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
