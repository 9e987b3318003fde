//! Semantic scene parts and the two-level scene graph.
//!
//! Node 0 is always the whole-image node. Every part node hangs off it with
//! one image-to-part edge; two part nodes are joined when their bounding
//! boxes share at least one pixel.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{LabelRaster, MARGIN};

pub const DEFAULT_MIN_PART_AREA: usize = 50;
pub const GRAPH_STORE_MAGIC: &[u8; 4] = b"CVGS";

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Bbox {
    pub umin: u32,
    pub vmin: u32,
    pub umax: u32,
    pub vmax: u32,
}

impl Bbox {
    pub fn new(umin: u32, vmin: u32, umax: u32, vmax: u32) -> Self {
        Self {
            umin,
            vmin,
            umax,
            vmax,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width as u32 - 1, height as u32 - 1)
    }

    fn point(u: usize, v: usize) -> Self {
        Self::new(u as u32, v as u32, u as u32, v as u32)
    }

    fn include(&mut self, u: usize, v: usize) {
        let (u, v) = (u as u32, v as u32);
        self.umin = self.umin.min(u);
        self.vmin = self.vmin.min(v);
        self.umax = self.umax.max(u);
        self.vmax = self.vmax.max(v);
    }

    pub fn width(&self) -> u32 {
        self.umax - self.umin + 1
    }

    pub fn height(&self) -> u32 {
        self.vmax - self.vmin + 1
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        (self.umin..=self.umax).contains(&u) && (self.vmin..=self.vmax).contains(&v)
    }

    /// Number of pixels covered by both boxes.
    pub fn intersection_area(&self, other: &Bbox) -> u64 {
        let w = (self.umax.min(other.umax) + 1).saturating_sub(self.umin.max(other.umin));
        let h = (self.vmax.min(other.vmax) + 1).saturating_sub(self.vmin.max(other.vmin));
        w as u64 * h as u64
    }

    pub fn iou(&self, other: &Bbox) -> f64 {
        let inter = self.intersection_area(other);
        inter as f64 / (self.area() + other.area() - inter) as f64
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.umin + self.umax) as f64 / 2.0,
            (self.vmin + self.vmax) as f64 / 2.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Part {
    pub label: u16,
    pub pixel_count: usize,
    pub bbox: Bbox,
}

/// Connected-component assignment of every pixel: `Some(i)` indexes the
/// returned part list.
#[derive(Debug, Clone, PartialEq)]
pub struct PartMap {
    width: usize,
    ids: Vec<Option<u32>>,
}

impl PartMap {
    pub fn part_at(&self, u: usize, v: usize) -> Option<usize> {
        self.ids[v * self.width + u].map(|i| i as usize)
    }
}

/// Per-label 4-connected components, ordered by their first pixel in raster
/// scan. Components smaller than `min_part_area` are dropped.
pub fn extract_parts(labels: &LabelRaster, min_part_area: usize) -> Vec<Part> {
    extract_parts_with_map(labels, min_part_area).0
}

pub fn extract_parts_with_map(labels: &LabelRaster, min_part_area: usize) -> (Vec<Part>, PartMap) {
    let (w, h) = labels.dims();
    let px = labels.as_slice();
    let mut comp = vec![u32::MAX; w * h];
    let mut parts = Vec::new();
    let mut members: Vec<usize> = Vec::new();
    let mut stack = Vec::new();
    let mut next_id = 0u32;
    let mut keep_ids = Vec::new();
    for start in 0..w * h {
        let label = px[start];
        if label == MARGIN || comp[start] != u32::MAX {
            continue;
        }
        let id = next_id;
        next_id += 1;
        members.clear();
        comp[start] = id;
        stack.push(start);
        let mut bbox = Bbox::point(start % w, start / w);
        while let Some(i) = stack.pop() {
            members.push(i);
            let (u, v) = (i % w, i / w);
            bbox.include(u, v);
            let mut visit = |j: usize| {
                if px[j] == label && comp[j] == u32::MAX {
                    comp[j] = id;
                    stack.push(j);
                }
            };
            if u > 0 {
                visit(i - 1);
            }
            if u + 1 < w {
                visit(i + 1);
            }
            if v > 0 {
                visit(i - w);
            }
            if v + 1 < h {
                visit(i + w);
            }
        }
        if members.len() >= min_part_area {
            keep_ids.push(Some(parts.len() as u32));
            parts.push(Part {
                label,
                pixel_count: members.len(),
                bbox,
            });
        } else {
            keep_ids.push(None);
        }
    }
    let ids = comp
        .into_iter()
        .map(|c| {
            if c == u32::MAX {
                None
            } else {
                keep_ids[c as usize]
            }
        })
        .collect();
    (parts, PartMap { width: w, ids })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Image,
    Part,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    ImageToPart,
    PartToPart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    /// Semantic label; `MARGIN` for the whole-image node.
    pub label: u16,
    pub bbox: Bbox,
    pub descriptor: Option<Vec<f64>>,
}

/// Undirected edge, `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub a: u32,
    pub b: u32,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub width: u32,
    pub height: u32,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub class: Option<u32>,
}

pub fn build_graph(parts: &[Part], width: usize, height: usize) -> SceneGraph {
    let mut nodes = Vec::with_capacity(parts.len() + 1);
    nodes.push(Node {
        kind: NodeKind::Image,
        label: MARGIN,
        bbox: Bbox::full(width, height),
        descriptor: None,
    });
    nodes.extend(parts.iter().map(|p| Node {
        kind: NodeKind::Part,
        label: p.label,
        bbox: p.bbox,
        descriptor: None,
    }));
    let mut edges: Vec<Edge> = (1..nodes.len() as u32)
        .map(|b| Edge {
            a: 0,
            b,
            kind: EdgeKind::ImageToPart,
        })
        .collect();
    for (i, p) in parts.iter().enumerate() {
        for (j, q) in parts.iter().enumerate().skip(i + 1) {
            if p.bbox.intersection_area(&q.bbox) > 0 {
                edges.push(Edge {
                    a: i as u32 + 1,
                    b: j as u32 + 1,
                    kind: EdgeKind::PartToPart,
                });
            }
        }
    }
    SceneGraph {
        width: width as u32,
        height: height as u32,
        nodes,
        edges,
        class: None,
    }
}

impl SceneGraph {
    pub fn part_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn part_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::PartToPart)
    }

    /// Adjacency lists over node indices.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.a as usize].push(e.b as usize);
            adj[e.b as usize].push(e.a as usize);
        }
        adj
    }

    pub fn is_described(&self) -> bool {
        self.nodes.iter().all(|n| n.descriptor.is_some())
    }

    /// Structural checks: one image node at index 0, one image-to-part edge
    /// per part, part edges only between overlapping boxes, no duplicates.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::input(format!("malformed scene graph: {m}")));
        if self.nodes.first().map(|n| n.kind) != Some(NodeKind::Image) {
            return bad("node 0 must be the whole-image node");
        }
        if self.nodes[1..].iter().any(|n| n.kind != NodeKind::Part) {
            return bad("more than one whole-image node");
        }
        let mut seen = std::collections::HashSet::new();
        let mut image_edges = vec![0usize; self.nodes.len()];
        for e in &self.edges {
            if e.a >= e.b || e.b as usize >= self.nodes.len() {
                return bad("edge endpoints out of order or range");
            }
            if !seen.insert((e.a, e.b)) {
                return bad("duplicate edge");
            }
            match e.kind {
                EdgeKind::ImageToPart if e.a == 0 => image_edges[e.b as usize] += 1,
                EdgeKind::PartToPart if e.a > 0 => {
                    let (p, q) = (&self.nodes[e.a as usize], &self.nodes[e.b as usize]);
                    if p.bbox.intersection_area(&q.bbox) == 0 {
                        return bad("part edge between disjoint boxes");
                    }
                }
                _ => return bad("edge kind does not match endpoints"),
            }
        }
        if image_edges[1..].iter().any(|&c| c != 1) {
            return bad("every part needs exactly one image-to-part edge");
        }
        Ok(())
    }

    /// Reorders part nodes by `(label, bbox)` and sorts edges, so that graphs
    /// equal up to part permutation compare equal.
    pub fn canonical(&self) -> SceneGraph {
        let mut order: Vec<usize> = (1..self.nodes.len()).collect();
        order.sort_by(|&i, &j| {
            let (a, b) = (&self.nodes[i], &self.nodes[j]);
            (a.label, a.bbox).cmp(&(b.label, b.bbox)).then_with(|| {
                a.descriptor
                    .partial_cmp(&b.descriptor)
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        let mut remap = vec![0u32; self.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new as u32 + 1;
        }
        let mut nodes = vec![self.nodes[0].clone()];
        nodes.extend(order.iter().map(|&i| self.nodes[i].clone()));
        let mut edges: Vec<Edge> = self
            .edges
            .iter()
            .map(|e| {
                let (a, b) = (remap[e.a as usize], remap[e.b as usize]);
                Edge {
                    a: a.min(b),
                    b: a.max(b),
                    kind: e.kind,
                }
            })
            .collect();
        edges.sort();
        SceneGraph {
            nodes,
            edges,
            ..self.clone()
        }
    }

    /// Length-prefixed binary record: `u32` payload length, then the
    /// payload (header, node table, edge table), all little-endian.
    pub fn write_record(&self, out: &mut Vec<u8>) {
        let mut p = Vec::new();
        p.extend_from_slice(&self.width.to_le_bytes());
        p.extend_from_slice(&self.height.to_le_bytes());
        p.extend_from_slice(&self.class.map_or(-1i64, |c| c as i64).to_le_bytes());
        p.extend_from_slice(&(self.nodes.len() as u32).to_le_bytes());
        for n in &self.nodes {
            p.push(match n.kind {
                NodeKind::Image => 0,
                NodeKind::Part => 1,
            });
            p.extend_from_slice(&n.label.to_le_bytes());
            for x in [n.bbox.umin, n.bbox.vmin, n.bbox.umax, n.bbox.vmax] {
                p.extend_from_slice(&x.to_le_bytes());
            }
            match &n.descriptor {
                None => p.extend_from_slice(&u32::MAX.to_le_bytes()),
                Some(d) => {
                    p.extend_from_slice(&(d.len() as u32).to_le_bytes());
                    for x in d {
                        p.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        p.extend_from_slice(&(self.edges.len() as u32).to_le_bytes());
        for e in &self.edges {
            p.extend_from_slice(&e.a.to_le_bytes());
            p.extend_from_slice(&e.b.to_le_bytes());
            p.push(match e.kind {
                EdgeKind::ImageToPart => 0,
                EdgeKind::PartToPart => 1,
            });
        }
        out.extend_from_slice(&(p.len() as u32).to_le_bytes());
        out.extend_from_slice(&p);
    }

    /// Parses one record from the front of `bytes`, returning the graph and
    /// the number of bytes consumed.
    pub fn read_record(bytes: &[u8]) -> Result<(SceneGraph, usize)> {
        let mut r = Reader { bytes, pos: 0 };
        let len = r.u32()? as usize;
        let end = 4 + len;
        if bytes.len() < end {
            return Err(Error::format("graph record", "truncated record"));
        }
        let width = r.u32()?;
        let height = r.u32()?;
        let class = r.i64()?;
        let n_nodes = r.u32()? as usize;
        let mut nodes = Vec::with_capacity(n_nodes.min(1 << 16));
        for _ in 0..n_nodes {
            let kind = match r.u8()? {
                0 => NodeKind::Image,
                1 => NodeKind::Part,
                k => return Err(Error::format("graph record", format!("node kind {k}"))),
            };
            let label = r.u16()?;
            let bbox = Bbox::new(r.u32()?, r.u32()?, r.u32()?, r.u32()?);
            let dlen = r.u32()?;
            let descriptor = if dlen == u32::MAX {
                None
            } else {
                Some((0..dlen).map(|_| r.f64()).collect::<Result<Vec<_>>>()?)
            };
            nodes.push(Node {
                kind,
                label,
                bbox,
                descriptor,
            });
        }
        let n_edges = r.u32()? as usize;
        let mut edges = Vec::with_capacity(n_edges.min(1 << 16));
        for _ in 0..n_edges {
            let a = r.u32()?;
            let b = r.u32()?;
            let kind = match r.u8()? {
                0 => EdgeKind::ImageToPart,
                1 => EdgeKind::PartToPart,
                k => return Err(Error::format("graph record", format!("edge kind {k}"))),
            };
            edges.push(Edge { a, b, kind });
        }
        if r.pos != end {
            return Err(Error::format("graph record", "length prefix mismatch"));
        }
        let graph = SceneGraph {
            width,
            height,
            nodes,
            edges,
            class: (class >= 0).then_some(class as u32),
        };
        graph.validate()?;
        Ok((graph, end))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + N)
            .ok_or_else(|| Error::format("graph record", "unexpected end of data"))?;
        self.pos += N;
        Ok(s.try_into().unwrap())
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

/// Graph store file: magic `CVGS`, `u32` record count, then the records.
pub fn encode_graph_store(graphs: &[SceneGraph]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(GRAPH_STORE_MAGIC);
    out.extend_from_slice(&(graphs.len() as u32).to_le_bytes());
    for g in graphs {
        g.write_record(&mut out);
    }
    out
}

pub fn decode_graph_store(bytes: &[u8]) -> Result<Vec<SceneGraph>> {
    if bytes.len() < 8 || &bytes[..4] != GRAPH_STORE_MAGIC {
        return Err(Error::format("graph store", "missing CVGS header"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let mut pos = 8;
    let mut graphs = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let (g, used) = SceneGraph::read_record(&bytes[pos..])?;
        graphs.push(g);
        pos += used;
    }
    if pos != bytes.len() {
        return Err(Error::format("graph store", "trailing bytes"));
    }
    Ok(graphs)
}

pub fn save_graph_store(path: &Path, graphs: &[SceneGraph]) -> Result<()> {
    fs::write(path, encode_graph_store(graphs))?;
    Ok(())
}

pub fn load_graph_store(path: &Path) -> Result<Vec<SceneGraph>> {
    decode_graph_store(&fs::read(path)?)
}
