//! Procedural box worlds and a ray-cast renderer.
//!
//! A world is a rectangular room (floor, ceiling, four walls) filled with
//! axis-aligned boxes standing on the floor. Rendering casts one ray per
//! pixel and returns exact z-depth, a semantic label and a shaded intensity.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, Pose2};
use crate::raster::{DepthRaster, IntensityRaster, LabelRaster, Raster, INVALID_DEPTH, MARGIN};

pub const LABEL_FLOOR: u16 = 1;
pub const LABEL_CEILING: u16 = 2;
/// Walls facing -Y, +X, +Y, -X (south, east, north, west side of the room).
pub const LABEL_WALLS: [u16; 4] = [3, 4, 5, 6];
/// Object kinds (cabinet, table, shelf, ...). Labels are `FIRST_OBJECT_LABEL..`.
pub const FIRST_OBJECT_LABEL: u16 = 7;
pub const OBJECT_KINDS: u16 = 10;

pub fn label_name(label: u16) -> &'static str {
    const OBJECTS: [&str; OBJECT_KINDS as usize] = [
        "cabinet", "table", "shelf", "sofa", "bed", "desk", "plant", "counter", "crate", "column",
    ];
    match label {
        MARGIN => "margin",
        LABEL_FLOOR => "floor",
        LABEL_CEILING => "ceiling",
        3 => "wall-s",
        4 => "wall-e",
        5 => "wall-n",
        6 => "wall-w",
        l if (FIRST_OBJECT_LABEL..FIRST_OBJECT_LABEL + OBJECT_KINDS).contains(&l) => {
            OBJECTS[(l - FIRST_OBJECT_LABEL) as usize]
        }
        _ => "unknown",
    }
}

/// Procedural surface pattern; modulates albedo so that local patches carry
/// texture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    /// Cycles per meter.
    pub frequency: f64,
    /// 0: stripes along the first in-face axis, 1: along the second, 2: checker.
    pub kind: u8,
    /// Relative modulation depth in [0, 1).
    pub contrast: f64,
}

impl Pattern {
    fn value(&self, s: f64, t: f64) -> f64 {
        let a = (s * self.frequency).floor() as i64;
        let b = (t * self.frequency).floor() as i64;
        let on = match self.kind {
            0 => a.rem_euclid(2) == 0,
            1 => b.rem_euclid(2) == 0,
            _ => (a + b).rem_euclid(2) == 0,
        };
        if on {
            1.0
        } else {
            1.0 - self.contrast
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Signed distance: negative inside, zero on the surface.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        let mut outside = 0.0f64;
        let mut inside = f64::NEG_INFINITY;
        for i in 0..3 {
            let d = (self.min[i] - p[i]).max(p[i] - self.max[i]);
            outside += d.max(0.0).powi(2);
            inside = inside.max(d);
        }
        if outside > 0.0 {
            outside.sqrt()
        } else {
            inside
        }
    }

    /// Slab test. Returns `(t_near, t_far, near_axis, far_axis)`.
    #[inline]
    fn slabs(&self, o: &Vector3<f64>, inv: &Vector3<f64>) -> Option<(f64, f64, usize, usize)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        let (mut a0, mut a1) = (0, 0);
        for i in 0..3 {
            let ta = (self.min[i] - o[i]) * inv[i];
            let tb = (self.max[i] - o[i]) * inv[i];
            let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            // NaN from 0 * inf (ray in the slab plane) never tightens
            if lo > t0 {
                t0 = lo;
                a0 = i;
            }
            if hi < t1 {
                t1 = hi;
                a1 = i;
            }
        }
        (t0 <= t1).then_some((t0, t1, a0, a1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub bounds: Aabb,
    pub label: u16,
    pub albedo: f64,
    pub pattern: Pattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub bounds: Aabb,
    /// Albedo and pattern of floor, ceiling, then walls S, E, N, W.
    pub surfaces: [(f64, Pattern); 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub shell: Option<Shell>,
    pub objects: Vec<WorldObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub room_size: [(f64, f64); 2],
    pub room_height: f64,
    /// Inclusive range of object counts; the lower bound is a hard minimum.
    pub objects: (usize, usize),
    pub footprint: (f64, f64),
    pub object_height: (f64, f64),
    /// Free space kept between objects and from the walls.
    pub gap: f64,
    pub max_attempts: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            room_size: [(14.0, 18.0), (10.0, 14.0)],
            room_height: 3.0,
            objects: (14, 22),
            footprint: (0.5, 1.8),
            object_height: (0.4, 2.6),
            gap: 0.8,
            max_attempts: 20_000,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            self.room_size[0],
            self.room_size[1],
            self.footprint,
            self.object_height,
        ];
        if ranges.iter().any(|&(lo, hi)| !(lo > 0.0 && hi >= lo)) || !(self.room_height > 0.0) {
            return Err(Error::Generation("spec ranges must be positive".into()));
        }
        if self.objects.1 < self.objects.0 || self.gap < 0.0 {
            return Err(Error::Generation("bad object count range or gap".into()));
        }
        Ok(())
    }
}

fn random_pattern(rng: &mut ChaCha8Rng) -> Pattern {
    Pattern {
        frequency: rng.gen_range(1.0..6.0),
        kind: rng.gen_range(0..3),
        contrast: rng.gen_range(0.2..0.6),
    }
}

pub fn generate_world(seed: u64, spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sx = rng.gen_range(spec.room_size[0].0..=spec.room_size[0].1);
    let sy = rng.gen_range(spec.room_size[1].0..=spec.room_size[1].1);
    let bounds = Aabb::new([0.0, 0.0, 0.0], [sx, sy, spec.room_height]);
    let surfaces = std::array::from_fn(|_| (rng.gen_range(0.35..0.95), random_pattern(&mut rng)));
    let shell = Shell { bounds, surfaces };

    let target = rng.gen_range(spec.objects.0..=spec.objects.1);
    let mut objects: Vec<WorldObject> = Vec::with_capacity(target);
    let mut attempts = 0;
    while objects.len() < target && attempts < spec.max_attempts {
        attempts += 1;
        let wx = rng.gen_range(spec.footprint.0..=spec.footprint.1);
        let wy = rng.gen_range(spec.footprint.0..=spec.footprint.1);
        let (lo_x, hi_x) = (spec.gap, sx - spec.gap - wx);
        let (lo_y, hi_y) = (spec.gap, sy - spec.gap - wy);
        if hi_x < lo_x || hi_y < lo_y {
            continue;
        }
        let x0 = rng.gen_range(lo_x..=hi_x);
        let y0 = rng.gen_range(lo_y..=hi_y);
        let h = rng
            .gen_range(spec.object_height.0..=spec.object_height.1)
            .min(spec.room_height);
        let candidate = Aabb::new([x0, y0, 0.0], [x0 + wx, y0 + wy, h]);
        let clear = objects.iter().all(|o| {
            let b = &o.bounds;
            candidate.min[0] >= b.max[0] + spec.gap
                || b.min[0] >= candidate.max[0] + spec.gap
                || candidate.min[1] >= b.max[1] + spec.gap
                || b.min[1] >= candidate.max[1] + spec.gap
        });
        if !clear {
            continue;
        }
        objects.push(WorldObject {
            bounds: candidate,
            label: FIRST_OBJECT_LABEL + rng.gen_range(0..OBJECT_KINDS),
            albedo: rng.gen_range(0.2..1.0),
            pattern: random_pattern(&mut rng),
        });
    }
    if objects.len() < spec.objects.0 {
        return Err(Error::Generation(format!(
            "placed {} of at least {} objects after {} attempts",
            objects.len(),
            spec.objects.0,
            attempts
        )));
    }
    Ok(World {
        seed,
        shell: Some(shell),
        objects,
    })
}

impl World {
    /// No shell, no objects: every ray escapes.
    pub fn empty() -> Self {
        Self {
            seed: 0,
            shell: None,
            objects: Vec::new(),
        }
    }

    pub fn distinct_labels(&self) -> Vec<u16> {
        let mut labels: Vec<u16> = self.objects.iter().map(|o| o.label).collect();
        if self.shell.is_some() {
            labels.extend([LABEL_FLOOR, LABEL_CEILING]);
            labels.extend(LABEL_WALLS);
        }
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    /// Whether a camera at `(x, y)` keeps `clearance` meters from every
    /// object footprint and wall.
    pub fn is_free(&self, x: f64, y: f64, clearance: f64) -> bool {
        if let Some(shell) = &self.shell {
            let b = &shell.bounds;
            if x < b.min[0] + clearance
                || x > b.max[0] - clearance
                || y < b.min[1] + clearance
                || y > b.max[1] - clearance
            {
                return false;
            }
        }
        self.objects.iter().all(|o| {
            let b = &o.bounds;
            x < b.min[0] - clearance
                || x > b.max[0] + clearance
                || y < b.min[1] - clearance
                || y > b.max[1] + clearance
        })
    }

    /// Nearest hit along `o + t d` with `t > 0`: `(t, label, shaded intensity)`.
    pub fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, u16, f64)> {
        let inv = Vector3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        let mut best: Option<(f64, usize, usize)> = None;
        if let Some(shell) = &self.shell {
            if let Some((t0, t1, a0, a1)) = shell.bounds.slabs(o, &inv) {
                // from inside the room the exit face is what we see
                let (t, axis) = if t0 > 0.0 { (t0, a0) } else { (t1, a1) };
                if t > 0.0 {
                    best = Some((t, usize::MAX, axis));
                }
            }
        }
        for (i, obj) in self.objects.iter().enumerate() {
            if let Some((t0, _, a0, _)) = obj.bounds.slabs(o, &inv) {
                if t0 > 0.0 && best.is_none_or(|b| t0 < b.0) {
                    best = Some((t0, i, a0));
                }
            }
        }
        let (t, which, axis) = best?;
        let hit = o + d * t;
        let (label, albedo, pattern, normal_sign) = if which == usize::MAX {
            let shell = self.shell.as_ref().unwrap();
            let b = &shell.bounds;
            let upper = (hit[axis] - b.max[axis]).abs() < (hit[axis] - b.min[axis]).abs();
            let (label, surface) = match (axis, upper) {
                (2, false) => (LABEL_FLOOR, 0),
                (2, true) => (LABEL_CEILING, 1),
                (1, false) => (LABEL_WALLS[0], 2),
                (0, true) => (LABEL_WALLS[1], 3),
                (1, true) => (LABEL_WALLS[2], 4),
                _ => (LABEL_WALLS[3], 5),
            };
            let (albedo, pattern) = shell.surfaces[surface];
            // inward-facing normals
            (label, albedo, pattern, if upper { -1.0 } else { 1.0 })
        } else {
            let obj = &self.objects[which];
            let sign = if d[axis] > 0.0 { -1.0 } else { 1.0 };
            (obj.label, obj.albedo, obj.pattern, sign)
        };
        let mut normal = Vector3::<f64>::zeros();
        normal[axis] = normal_sign;
        let light = Vector3::new(0.3, 0.5, 0.81).normalize();
        let shade = 0.35 + 0.65 * normal.dot(&light).abs();
        let (s, t2) = match axis {
            0 => (hit.y, hit.z),
            1 => (hit.x, hit.z),
            _ => (hit.x, hit.y),
        };
        Some((t, label, albedo * shade * pattern.value(s, t2)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: u32,
    pub depth: DepthRaster,
    pub labels: LabelRaster,
    pub intensity: IntensityRaster,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

impl Frame {
    pub fn planar(&self) -> Pose2 {
        self.pose.planar()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = (self.intrinsics.width, self.intrinsics.height);
        for got in [self.depth.dims(), self.labels.dims(), self.intensity.dims()] {
            if got != dims {
                return Err(Error::Dimensions {
                    expected: dims,
                    got,
                });
            }
        }
        self.pose.validate()
    }
}

/// Renders depth, labels and intensity. Depth is camera z, so a ray through
/// pixel `(u, v)` with direction `((u-cx)/fx, (v-cy)/fy, 1)` hits at `t = z`.
pub fn render(world: &World, pose: &Pose, intr: &CameraIntrinsics, id: u32) -> Frame {
    let (w, h) = (intr.width, intr.height);
    let mut depth = Raster::filled(w, h, INVALID_DEPTH);
    let mut labels = Raster::filled(w, h, MARGIN);
    let mut intensity = Raster::filled(w, h, 0u8);
    let origin = pose.translation;
    for v in 0..h {
        for u in 0..w {
            let dir = pose.rotation * intr.ray(u as f64, v as f64);
            if let Some((t, label, shade)) = world.cast(&origin, &dir) {
                depth.set(u, v, t);
                labels.set(u, v, label);
                intensity.set(u, v, (shade * 255.0).round().clamp(1.0, 255.0) as u8);
            }
        }
    }
    Frame {
        id,
        depth,
        labels,
        intensity,
        pose: *pose,
        intrinsics: *intr,
    }
}

/// Seeded camera poses at `height`, uniformly over free floor space with
/// uniform headings.
pub fn sample_camera_poses(
    world: &World,
    count: usize,
    height: f64,
    clearance: f64,
    seed: u64,
) -> Result<Vec<Pose>> {
    let shell = world
        .shell
        .as_ref()
        .ok_or_else(|| Error::Generation("pose sampling needs a room shell".into()))?;
    let b = shell.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut poses = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while poses.len() < count {
        attempts += 1;
        if attempts > 1000 * count.max(1) {
            return Err(Error::Generation("no free space for camera poses".into()));
        }
        let x = rng.gen_range(b.min[0]..b.max[0]);
        let y = rng.gen_range(b.min[1]..b.max[1]);
        let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        if world.is_free(x, y, clearance) {
            poses.push(Pose::from_planar(x, y, heading, height));
        }
    }
    Ok(poses)
}

pub fn render_all(world: &World, poses: &[Pose], intr: &CameraIntrinsics) -> Vec<Frame> {
    use rayon::prelude::*;
    poses
        .par_iter()
        .enumerate()
        .map(|(i, p)| render(world, p, intr, i as u32))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameEntry {
    pub id: u32,
    pub depth: String,
    pub labels: String,
    pub intensity: String,
    /// Pose in the 12-value text format.
    pub pose: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FramesetManifest {
    pub world_seed: u64,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<FrameEntry>,
}

/// Writes `manifest.json` plus three raster files per frame into `dir`.
pub fn save_frameset(dir: &Path, world_seed: u64, frames: &[Frame]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let intrinsics = frames.first().map(|f| f.intrinsics).unwrap_or_default();
    let mut entries = Vec::with_capacity(frames.len());
    for f in frames {
        let entry = FrameEntry {
            id: f.id,
            depth: format!("{:05}_depth.cvr", f.id),
            labels: format!("{:05}_labels.cvr", f.id),
            intensity: format!("{:05}_intensity.cvr", f.id),
            pose: f.pose.to_text().trim_end().to_string(),
        };
        f.depth.save(dir.join(&entry.depth))?;
        f.labels.save(dir.join(&entry.labels))?;
        f.intensity.save(dir.join(&entry.intensity))?;
        entries.push(entry);
    }
    let manifest = FramesetManifest {
        world_seed,
        intrinsics,
        frames: entries,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_frameset(dir: &Path) -> Result<(FramesetManifest, Vec<Frame>)> {
    let manifest: FramesetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let frames = manifest
        .frames
        .iter()
        .map(|e| {
            let frame = Frame {
                id: e.id,
                depth: Raster::load(dir.join(&e.depth))?,
                labels: Raster::load(dir.join(&e.labels))?,
                intensity: Raster::load(dir.join(&e.intensity))?,
                pose: Pose::from_text(&e.pose)?,
                intrinsics: manifest.intrinsics,
            };
            frame.validate()?;
            Ok(frame)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, frames))
}
