//! Browser bindings. Three operations: render the world from a pose,
//! capture that frame as the synthesis source, and warp it to another pose.
//! Images cross the boundary as flat RGBA buffers.

use cvgl::descriptors::{LitePatch, Vocabulary};
use cvgl::geometry::{CameraIntrinsics, Pose};
use cvgl::raster::MARGIN;
use cvgl::scene_graph::DEFAULT_MIN_PART_AREA;
use cvgl::synthesis::{PreparedView, SynthesisOutcome};
use cvgl::synthworld::{generate_world, render, Frame, World, WorldSpec};
use wasm_bindgen::prelude::*;

const CAMERA_HEIGHT: f64 = 1.5;

/// Stable, well-separated color per semantic label; margin is black.
pub fn label_color(label: u16) -> [u8; 3] {
    if label == MARGIN {
        return [0, 0, 0];
    }
    let hue = (label as f64 * 0.618_033_988_75).fract();
    let (r, g, b) = hsv(hue, 0.55, 0.95);
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

fn hsv(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as i32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Label colors modulated by the rendered intensity.
fn frame_rgba(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.labels.len() * 4);
    for (l, i) in frame.labels.as_slice().iter().zip(frame.intensity.as_slice()) {
        let shade = 0.35 + 0.65 * *i as f64 / 255.0;
        let c = label_color(*l);
        out.extend(c.iter().map(|&x| (x as f64 * shade) as u8));
        out.push(255);
    }
    out
}

#[wasm_bindgen]
pub struct Demo {
    world: World,
    intrinsics: CameraIntrinsics,
    source: Option<PreparedView>,
    margin: f64,
    boxes: Vec<u32>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(world_seed: u64, size: usize) -> Result<Demo, String> {
        let world = generate_world(world_seed, &WorldSpec::default()).map_err(|e| e.to_string())?;
        let f = size as f64 / 2.0;
        let intrinsics = CameraIntrinsics {
            width: size,
            height: size,
            fx: f,
            fy: f,
            cx: f,
            cy: f,
        };
        intrinsics.validate().map_err(|e| e.to_string())?;
        Ok(Demo {
            world,
            intrinsics,
            source: None,
            margin: 1.0,
            boxes: Vec::new(),
        })
    }

    /// `[xmin, ymin, xmax, ymax]` of the room floor.
    pub fn room(&self) -> Vec<f64> {
        self.world.shell.as_ref().map_or(vec![0.0; 4], |s| {
            vec![s.bounds.min[0], s.bounds.min[1], s.bounds.max[0], s.bounds.max[1]]
        })
    }

    /// Whether a camera fits at `(x, y)` without clipping an object.
    pub fn is_free(&self, x: f64, y: f64) -> bool {
        self.world.is_free(x, y, 0.3)
    }

    fn frame(&self, x: f64, y: f64, heading_deg: f64) -> Frame {
        let pose = Pose::from_planar(x, y, heading_deg.to_radians(), CAMERA_HEIGHT);
        render(&self.world, &pose, &self.intrinsics, 0)
    }

    /// Ground-truth view at a pose.
    pub fn render(&self, x: f64, y: f64, heading_deg: f64) -> Vec<u8> {
        frame_rgba(&self.frame(x, y, heading_deg))
    }

    /// Uses the view at this pose as the single real frame for synthesis.
    /// Returns its part count.
    pub fn capture(&mut self, x: f64, y: f64, heading_deg: f64) -> Result<usize, String> {
        let frame = self.frame(x, y, heading_deg);
        // RRVs need at least two prototypes; the reverse view is the other
        let behind = self.frame(x, y, heading_deg + 180.0);
        let vocab =
            Vocabulary::from_frames(&[&frame, &behind], &LitePatch).map_err(|e| e.to_string())?;
        let view = PreparedView::new(&frame, &vocab, &LitePatch, DEFAULT_MIN_PART_AREA)
            .map_err(|e| e.to_string())?;
        let parts = view.graph().part_count();
        self.source = Some(view);
        Ok(parts)
    }

    /// Warps the captured frame to a new pose. Rejected views come back as
    /// all margin; `margin()` and `boxes()` describe the last call.
    pub fn synthesize(&mut self, x: f64, y: f64, heading_deg: f64) -> Result<Vec<u8>, String> {
        let source = self.source.as_ref().ok_or("capture a frame first")?;
        let pose = Pose::from_planar(x, y, heading_deg.to_radians(), CAMERA_HEIGHT);
        let n = self.intrinsics.width * self.intrinsics.height;
        self.boxes.clear();
        Ok(match source.synthesize(&pose) {
            SynthesisOutcome::Rejected { margin } => {
                self.margin = margin;
                [0, 0, 0, 255].repeat(n)
            }
            SynthesisOutcome::Valid(view) => {
                self.margin = view.margin;
                for node in view.graph.nodes.iter().skip(1) {
                    let b = node.bbox;
                    self.boxes.extend([b.umin, b.vmin, b.umax, b.vmax]);
                }
                view.labels
                    .as_slice()
                    .iter()
                    .flat_map(|&l| {
                        let [r, g, b] = label_color(l);
                        [r, g, b, 255]
                    })
                    .collect()
            }
        })
    }

    /// Margin fraction of the last synthesized view.
    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Flat `[umin, vmin, umax, vmax]` per synthesized part.
    pub fn boxes(&self) -> Vec<u32> {
        self.boxes.clone()
    }
}
