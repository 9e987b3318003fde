//! Local features, the prototype vocabulary, NBNN set distance and
//! reciprocal-rank-vector node descriptors.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::IntensityRaster;
use crate::scene_graph::{Bbox, SceneGraph};
use crate::synthworld::Frame;

pub const FEATURE_MAGIC: &[u8; 4] = b"CVFT";

/// A set of local descriptors with their keypoints.
///
/// Each keypoint has a square support of half-size `support` pixels; a
/// feature belongs to a region when its whole support lies inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    data: Vec<f64>,
    keypoints: Vec<[f64; 2]>,
    support: f64,
}

impl FeatureSet {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            keypoints: Vec::new(),
            support: 0.0,
        }
    }

    /// Descriptors are L2-normalized; zero vectors are kept as is.
    pub fn new(dim: usize, descriptors: Vec<Vec<f64>>, keypoints: Vec<[f64; 2]>) -> Result<Self> {
        let mut set = Self::raw(dim, descriptors, keypoints)?;
        for d in set.data.chunks_exact_mut(dim) {
            normalize(d);
        }
        Ok(set)
    }

    /// No normalization; for hand-built test sets.
    pub fn raw(dim: usize, descriptors: Vec<Vec<f64>>, keypoints: Vec<[f64; 2]>) -> Result<Self> {
        if descriptors.len() != keypoints.len() {
            return Err(Error::input(format!(
                "{} descriptors but {} keypoints",
                descriptors.len(),
                keypoints.len()
            )));
        }
        if descriptors.iter().any(|d| d.len() != dim) {
            return Err(Error::input(format!(
                "descriptor length differs from {dim}"
            )));
        }
        Ok(Self {
            dim,
            data: descriptors.concat(),
            keypoints,
            support: 0.0,
        })
    }

    pub fn with_support(mut self, support: f64) -> Self {
        self.support = support;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn keypoints(&self) -> &[[f64; 2]] {
        &self.keypoints
    }

    fn inside(&self, kp: [f64; 2], region: &Bbox) -> bool {
        let s = self.support;
        kp[0] - s >= region.umin as f64
            && kp[0] + s <= region.umax as f64 + 1.0
            && kp[1] - s >= region.vmin as f64
            && kp[1] + s <= region.vmax as f64 + 1.0
    }

    /// Indices of features whose support lies inside `region`.
    pub fn indices_within(&self, region: &Bbox) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.inside(self.keypoints[i], region))
            .collect()
    }

    pub fn restrict(&self, region: &Bbox) -> FeatureSet {
        let idx = self.indices_within(region);
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in &idx {
            data.extend_from_slice(self.descriptor(i));
        }
        FeatureSet {
            dim: self.dim,
            data,
            keypoints: idx.iter().map(|&i| self.keypoints[i]).collect(),
            support: self.support,
        }
    }

    /// Mean descriptor, L2-normalized. Used as a global image descriptor.
    pub fn mean_descriptor(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for d in self.descriptors() {
            for (m, x) in mean.iter_mut().zip(d) {
                *m += x;
            }
        }
        normalize(&mut mean);
        mean
    }

    /// `CVFT` feature file: magic, `u32` dim, `u32` count, then per feature
    /// `f32 u, f32 v` and `dim` f32 values, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.len() * (2 + self.dim) * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for i in 0..self.len() {
            for x in self.keypoints[i].iter().chain(self.descriptor(i)) {
                out.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        out
    }

    /// Parses a feature file and renormalizes each descriptor.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
            return Err(Error::format("feature", "missing CVFT header"));
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let rec = (2 + dim) * 4;
        if dim == 0 || bytes.len() != 12 + count * rec {
            return Err(Error::format(
                "feature",
                format!("expected {} bytes for {count} x {dim}", 12 + count * rec),
            ));
        }
        let values: Vec<f64> = bytes[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let mut keypoints = Vec::with_capacity(count);
        let mut descriptors = Vec::with_capacity(count);
        for r in values.chunks_exact(2 + dim) {
            keypoints.push([r[0], r[1]]);
            descriptors.push(r[2..].to_vec());
        }
        Self::new(dim, descriptors, keypoints)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Produces the local features of a frame restricted to a region.
pub trait FeatureExtractor: Sync {
    fn extract(&self, frame: &Frame, region: &Bbox) -> FeatureSet;
}

/// Built-in patch descriptor: a stride-16 grid of 16x16 patches, each
/// described by the mean and standard deviation of intensity over its 4x4
/// sub-blocks (16 means, then 16 deviations), L2-normalized.
///
/// The grid is anchored at the image origin so that the features of a
/// region are exactly the full-image features whose patch fits inside it.
#[derive(Debug, Clone, Copy, Default)]
pub struct LitePatch;

impl LitePatch {
    pub const PATCH: usize = 16;
    pub const CELL: usize = 4;
    pub const DIM: usize = 32;

    pub fn extract_raster(&self, intensity: &IntensityRaster, region: &Bbox) -> FeatureSet {
        let p = Self::PATCH;
        let (w, h) = intensity.dims();
        let mut set = FeatureSet::empty(Self::DIM).with_support(p as f64 / 2.0);
        let umax = (region.umax as usize).min(w.saturating_sub(1));
        let vmax = (region.vmax as usize).min(h.saturating_sub(1));
        let first = |lo: u32| (lo as usize).div_ceil(p) * p;
        let mut v0 = first(region.vmin);
        while v0 + p <= vmax + 1 {
            let mut u0 = first(region.umin);
            while u0 + p <= umax + 1 {
                let mut d = self.describe(intensity, u0, v0);
                if d.iter().all(|&x| x == 0.0) {
                    // a black patch is as flat as any other constant patch
                    d[..16].iter_mut().for_each(|x| *x = 1.0);
                }
                normalize(&mut d);
                set.data.extend_from_slice(&d);
                set.keypoints
                    .push([(u0 + p / 2) as f64, (v0 + p / 2) as f64]);
                u0 += p;
            }
            v0 += p;
        }
        set
    }

    fn describe(&self, img: &IntensityRaster, u0: usize, v0: usize) -> [f64; 32] {
        let c = Self::CELL;
        let mut d = [0.0; 32];
        for by in 0..4 {
            for bx in 0..4 {
                // integer sums keep flat blocks at exactly zero spread
                let (mut s, mut s2) = (0u64, 0u64);
                for v in v0 + by * c..v0 + (by + 1) * c {
                    for u in u0 + bx * c..u0 + (bx + 1) * c {
                        let x = img.get(u, v) as u64;
                        s += x;
                        s2 += x * x;
                    }
                }
                let n = (c * c) as u64;
                let var = (n * s2 - s * s) as f64 / (n * n) as f64;
                let mean = s as f64 / n as f64 / 255.0;
                d[by * 4 + bx] = mean;
                d[16 + by * 4 + bx] = var.sqrt() / 255.0;
            }
        }
        d
    }
}

impl FeatureExtractor for LitePatch {
    fn extract(&self, frame: &Frame, region: &Bbox) -> FeatureSet {
        self.extract_raster(&frame.intensity, region)
    }
}

/// Features precomputed by an external extractor, one `CVFT` file per frame
/// named `<frame id, 5 digits>.cvft`.
#[derive(Debug, Clone, Default)]
pub struct FeatureFiles {
    by_frame: HashMap<u32, FeatureSet>,
}

impl FeatureFiles {
    pub fn load_dir(dir: &Path, frame_ids: &[u32]) -> Result<Self> {
        let by_frame = frame_ids
            .iter()
            .map(|&id| Ok((id, FeatureSet::load(&dir.join(format!("{id:05}.cvft")))?)))
            .collect::<Result<_>>()?;
        Ok(Self { by_frame })
    }

    pub fn insert(&mut self, frame_id: u32, set: FeatureSet) {
        self.by_frame.insert(frame_id, set);
    }
}

impl FeatureExtractor for FeatureFiles {
    fn extract(&self, frame: &Frame, region: &Bbox) -> FeatureSet {
        match self.by_frame.get(&frame.id) {
            Some(set) => set.restrict(region),
            None => FeatureSet::empty(0),
        }
    }
}

#[inline]
fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Distance from one descriptor to its nearest neighbour in `set`.
pub fn nearest_distance(q: &[f64], set: &FeatureSet) -> f64 {
    set.descriptors()
        .map(|p| squared_l2(q, p))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

fn mean_in_order(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in values {
        sum += x;
        n += 1;
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

/// Naive-Bayes nearest-neighbour set distance: mean over query features of
/// the L2 distance to the nearest prototype feature. Infinite when either
/// set is empty.
pub fn nbnn_distance(query: &FeatureSet, prototype: &FeatureSet) -> f64 {
    if query.is_empty() || prototype.is_empty() {
        return f64::INFINITY;
    }
    assert_eq!(query.dim, prototype.dim, "descriptor dimensions differ");
    mean_in_order(query.descriptors().map(|q| nearest_distance(q, prototype)))
}

/// One prototype feature set per place class.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    prototypes: Vec<FeatureSet>,
}

impl Vocabulary {
    pub fn new(prototypes: Vec<FeatureSet>) -> Result<Self> {
        if prototypes.len() < 2 {
            return Err(Error::input("a vocabulary needs at least two prototypes"));
        }
        Ok(Self { prototypes })
    }

    /// Prototype `i` is the whole-image feature set of class `i`'s frame.
    pub fn from_frames(frames: &[&Frame], extractor: &dyn FeatureExtractor) -> Result<Self> {
        use rayon::prelude::*;
        let prototypes = frames
            .par_iter()
            .map(|f| extractor.extract(f, &full_region(f)))
            .collect();
        Self::new(prototypes)
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn prototype(&self, i: usize) -> &FeatureSet {
        &self.prototypes[i]
    }

    pub fn distances(&self, query: &FeatureSet) -> Vec<f64> {
        self.prototypes
            .iter()
            .map(|p| nbnn_distance(query, p))
            .collect()
    }
}

fn full_region(frame: &Frame) -> Bbox {
    Bbox::full(frame.intrinsics.width, frame.intrinsics.height)
}

/// Class indices in ascending distance; ties go to the lower index.
pub fn rank_ascending(distances: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    order
}

/// Entry `i` is `1 / rank(i)` under ascending distance.
pub fn rrv_from_distances(distances: &[f64]) -> Vec<f64> {
    let mut rrv = vec![0.0; distances.len()];
    for (rank, &i) in rank_ascending(distances).iter().enumerate() {
        rrv[i] = 1.0 / (rank + 1) as f64;
    }
    rrv
}

pub fn rrv(query: &FeatureSet, vocab: &Vocabulary) -> Vec<f64> {
    rrv_from_distances(&vocab.distances(query))
}

/// Descriptor given to nodes with no features: every prototype ranks last.
pub fn uniform_rrv(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Nearest-prototype distances of every full-frame feature, so that the
/// NBNN distance of any region is a mean over a subset of rows.
#[derive(Debug, Clone)]
pub struct NearestTable {
    features: FeatureSet,
    k: usize,
    rows: Vec<f64>,
}

impl NearestTable {
    pub fn new(features: FeatureSet, vocab: &Vocabulary) -> Self {
        let k = vocab.len();
        let mut rows = Vec::with_capacity(features.len() * k);
        for q in features.descriptors().take(features.len()) {
            for j in 0..k {
                let proto = vocab.prototype(j);
                rows.push(if proto.is_empty() {
                    f64::INFINITY
                } else {
                    nearest_distance(q, proto)
                });
            }
        }
        Self { features, k, rows }
    }

    pub fn features(&self) -> &FeatureSet {
        &self.features
    }

    pub fn distances_for(&self, indices: &[usize]) -> Vec<f64> {
        (0..self.k)
            .map(|j| mean_in_order(indices.iter().map(|&i| self.rows[i * self.k + j])))
            .collect()
    }

    /// NBNN distances of the whole frame to every prototype.
    pub fn whole_distances(&self) -> Vec<f64> {
        let all: Vec<usize> = (0..self.features.len()).collect();
        self.distances_for(&all)
    }

    pub fn region_rrv(&self, region: &Bbox) -> Vec<f64> {
        let idx = self.features.indices_within(region);
        if idx.is_empty() {
            return uniform_rrv(self.k);
        }
        rrv_from_distances(&self.distances_for(&idx))
    }
}

/// Fills every node's descriptor slot with the RRV of the features inside
/// its bounding box. The whole-image node uses the full frame.
pub fn describe_graph(
    graph: &SceneGraph,
    frame: &Frame,
    vocab: &Vocabulary,
    extractor: &dyn FeatureExtractor,
) -> SceneGraph {
    let table = NearestTable::new(extractor.extract(frame, &full_region(frame)), vocab);
    describe_graph_with(graph, &table)
}

pub fn describe_graph_with(graph: &SceneGraph, table: &NearestTable) -> SceneGraph {
    let mut out = graph.clone();
    for node in &mut out.nodes {
        node.descriptor = Some(table.region_rrv(&node.bbox));
    }
    out
}
