//! Two-layer mean-aggregation graph convolutional classifier.
//!
//! Per layer: `h'_v = relu(W_self h_v + W_nbr mean_{u in N(v)} h_u + b)`, an
//! isolated node contributing a zero neighbour term. The graph embedding is
//! the mean of the second-layer node embeddings and the logits are an affine
//! map of it. Everything runs in f64.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument;
use crate::scene_graph::{NodeKind, SceneGraph};

pub const MODEL_MAGIC: &[u8; 4] = b"CVGN";
pub const DEFAULT_HIDDEN: usize = 64;

/// Extra node-feature columns after the K-dim RRV: kind one-hot (2) and
/// normalized bbox (4).
pub const EXTRA_FEATURES: usize = 6;

pub fn feature_dim(k: usize) -> usize {
    k + EXTRA_FEATURES
}

/// A scene graph turned into dense tensors.
#[derive(Debug, Clone)]
pub struct GraphInput {
    /// n x F node features.
    pub x: DMatrix<f64>,
    /// n x n row-normalized adjacency; isolated rows are zero.
    pub adj: DMatrix<f64>,
}

impl GraphInput {
    pub fn from_graph(graph: &SceneGraph, k: usize) -> Result<Self> {
        let n = graph.nodes.len();
        if n == 0 {
            return Err(Error::input("graph has no nodes"));
        }
        let f = feature_dim(k);
        let (w, h) = (graph.width.max(1) as f64, graph.height.max(1) as f64);
        let mut x = DMatrix::zeros(n, f);
        for (i, node) in graph.nodes.iter().enumerate() {
            let d = node
                .descriptor
                .as_ref()
                .ok_or_else(|| Error::input(format!("node {i} has no descriptor")))?;
            if d.len() != k {
                return Err(Error::input(format!(
                    "node {i} descriptor has {} entries, model expects {k}",
                    d.len()
                )));
            }
            for (j, &v) in d.iter().enumerate() {
                x[(i, j)] = v;
            }
            x[(i, k + if node.kind == NodeKind::Image { 0 } else { 1 })] = 1.0;
            let b = node.bbox;
            x[(i, k + 2)] = b.umin as f64 / w;
            x[(i, k + 3)] = b.vmin as f64 / h;
            x[(i, k + 4)] = (b.umax as f64 + 1.0) / w;
            x[(i, k + 5)] = (b.vmax as f64 + 1.0) / h;
        }
        let mut adj = DMatrix::zeros(n, n);
        for (v, nbrs) in graph.neighbors().iter().enumerate() {
            for &u in nbrs {
                adj[(v, u)] = 1.0 / nbrs.len() as f64;
            }
        }
        Ok(Self { x, adj })
    }

    pub fn nodes(&self) -> usize {
        self.x.nrows()
    }
}

/// Network parameters. Also used as the container for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphNet {
    pub k: usize,
    pub hidden: usize,
    pub features: usize,
    pub w1_self: DMatrix<f64>,
    pub w1_nbr: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2_self: DMatrix<f64>,
    pub w2_nbr: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub w_out: DMatrix<f64>,
    pub b_out: DVector<f64>,
}

struct Activations {
    ax: DMatrix<f64>,
    z1: DMatrix<f64>,
    h1: DMatrix<f64>,
    ah1: DMatrix<f64>,
    z2: DMatrix<f64>,
    readout: DVector<f64>,
    logits: DVector<f64>,
}

fn add_row_bias(m: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut row in m.row_iter_mut() {
        row += b.transpose();
    }
}

fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

impl GraphNet {
    pub fn zeros(k: usize, hidden: usize) -> Self {
        let f = feature_dim(k);
        Self {
            k,
            hidden,
            features: f,
            w1_self: DMatrix::zeros(hidden, f),
            w1_nbr: DMatrix::zeros(hidden, f),
            b1: DVector::zeros(hidden),
            w2_self: DMatrix::zeros(hidden, hidden),
            w2_nbr: DMatrix::zeros(hidden, hidden),
            b2: DVector::zeros(hidden),
            w_out: DMatrix::zeros(k, hidden),
            b_out: DVector::zeros(k),
        }
    }

    /// Uniform in `+-1/sqrt(fan_in)` from a seeded generator.
    pub fn new(k: usize, hidden: usize, seed: u64) -> Self {
        let mut net = Self::zeros(k, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fans = [
            net.features,
            net.features,
            net.features,
            hidden,
            hidden,
            hidden,
            hidden,
            hidden,
        ];
        for (t, fan) in net.tensors_mut().into_iter().zip(fans) {
            let bound = 1.0 / (fan as f64).sqrt();
            t.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
        }
        net
    }

    fn tensors(&self) -> [&[f64]; 8] {
        [
            self.w1_self.as_slice(),
            self.w1_nbr.as_slice(),
            self.b1.as_slice(),
            self.w2_self.as_slice(),
            self.w2_nbr.as_slice(),
            self.b2.as_slice(),
            self.w_out.as_slice(),
            self.b_out.as_slice(),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 8] {
        [
            self.w1_self.as_mut_slice(),
            self.w1_nbr.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2_self.as_mut_slice(),
            self.w2_nbr.as_mut_slice(),
            self.b2.as_mut_slice(),
            self.w_out.as_mut_slice(),
            self.b_out.as_mut_slice(),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All parameters, tensor by tensor (nalgebra column-major order within
    /// each tensor).
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut pos = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[pos..pos + t.len()]);
            pos += t.len();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn activations(&self, g: &GraphInput) -> Activations {
        let n = g.nodes() as f64;
        let ax = &g.adj * &g.x;
        let mut z1 = &g.x * self.w1_self.transpose() + &ax * self.w1_nbr.transpose();
        add_row_bias(&mut z1, &self.b1);
        let h1 = relu(&z1);
        let ah1 = &g.adj * &h1;
        let mut z2 = &h1 * self.w2_self.transpose() + &ah1 * self.w2_nbr.transpose();
        add_row_bias(&mut z2, &self.b2);
        let h2 = relu(&z2);
        let readout = h2.row_sum().transpose() / n;
        let logits = &self.w_out * &readout + &self.b_out;
        Activations {
            ax,
            z1,
            h1,
            ah1,
            z2,
            readout,
            logits,
        }
    }

    pub fn forward_input(&self, g: &GraphInput) -> Result<DVector<f64>> {
        if g.x.ncols() != self.features {
            return Err(Error::input(format!(
                "graph has {} feature columns, model expects {}",
                g.x.ncols(),
                self.features
            )));
        }
        Ok(self.activations(g).logits)
    }

    /// Smallest |pre-activation| over both ReLU layers. Finite differences
    /// straddling a kink disagree with the analytic gradient.
    pub fn relu_margin(&self, g: &GraphInput) -> f64 {
        let act = self.activations(g);
        act.z1
            .iter()
            .chain(act.z2.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    pub fn forward(&self, graph: &SceneGraph) -> Result<DVector<f64>> {
        self.forward_input(&GraphInput::from_graph(graph, self.k)?)
    }

    /// Adds `d loss / d params` for one graph into `grad`, given
    /// `d loss / d logits`.
    fn backward(
        &self,
        g: &GraphInput,
        act: &Activations,
        dlogits: &DVector<f64>,
        grad: &mut GraphNet,
    ) {
        let n = g.nodes();
        grad.w_out += dlogits * act.readout.transpose();
        grad.b_out += dlogits;
        let dread = self.w_out.transpose() * dlogits / n as f64;

        let mut dz2 = DMatrix::zeros(n, self.hidden);
        for i in 0..n {
            for j in 0..self.hidden {
                if act.z2[(i, j)] > 0.0 {
                    dz2[(i, j)] = dread[j];
                }
            }
        }
        grad.w2_self += dz2.transpose() * &act.h1;
        grad.w2_nbr += dz2.transpose() * &act.ah1;
        grad.b2 += dz2.row_sum().transpose();

        let dh1 = &dz2 * &self.w2_self + g.adj.transpose() * (&dz2 * &self.w2_nbr);
        let dz1 = dh1.zip_map(&act.z1, |d, z| if z > 0.0 { d } else { 0.0 });
        grad.w1_self += dz1.transpose() * &g.x;
        grad.w1_nbr += dz1.transpose() * &act.ax;
        grad.b1 += dz1.row_sum().transpose();
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.param_count() * 8);
        out.extend_from_slice(MODEL_MAGIC);
        for v in [self.k, self.hidden, self.features] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        // row-major within each tensor
        let mats = [&self.w1_self, &self.w1_nbr];
        for m in mats {
            push_row_major(&mut out, m);
        }
        push_vec(&mut out, &self.b1);
        push_row_major(&mut out, &self.w2_self);
        push_row_major(&mut out, &self.w2_nbr);
        push_vec(&mut out, &self.b2);
        push_row_major(&mut out, &self.w_out);
        push_vec(&mut out, &self.b_out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MODEL_MAGIC {
            return Err(Error::format("model", "missing CVGN header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (k, hidden, features) = (word(4), word(8), word(12));
        if features != feature_dim(k) {
            return Err(Error::format(
                "model",
                format!("feature dim {features} does not match K = {k}"),
            ));
        }
        let mut net = Self::zeros(k, hidden);
        if bytes.len() != 16 + net.param_count() * 8 {
            return Err(Error::format(
                "model",
                "parameter payload has the wrong size",
            ));
        }
        let mut vals = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut read_mat = |m: &mut DMatrix<f64>| {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    m[(r, c)] = vals.next().unwrap();
                }
            }
        };
        read_mat(&mut net.w1_self);
        read_mat(&mut net.w1_nbr);
        let mut b1 = DMatrix::zeros(hidden, 1);
        read_mat(&mut b1);
        read_mat(&mut net.w2_self);
        read_mat(&mut net.w2_nbr);
        let mut b2 = DMatrix::zeros(hidden, 1);
        read_mat(&mut b2);
        read_mat(&mut net.w_out);
        let mut bo = DMatrix::zeros(k, 1);
        read_mat(&mut bo);
        net.b1 = b1.column(0).into_owned();
        net.b2 = b2.column(0).into_owned();
        net.b_out = bo.column(0).into_owned();
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn push_row_major(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
}

fn push_vec(out: &mut Vec<u8>, v: &DVector<f64>) {
    for x in v.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn softmax_xent(logits: &DVector<f64>, label: usize) -> (f64, DVector<f64>) {
    let max = logits.max();
    let exps = logits.map(|v| (v - max).exp());
    let sum = exps.sum();
    let loss = sum.ln() + max - logits[label];
    let mut d = exps / sum;
    d[label] -= 1.0;
    (loss, d)
}

pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let exps = logits.map(|v| (v - max).exp());
    let sum = exps.sum();
    exps / sum
}

/// Mean softmax cross-entropy over `batch` and its gradient.
pub fn loss_and_gradient(net: &GraphNet, batch: &[(GraphInput, usize)]) -> Result<(f64, GraphNet)> {
    let uniform = vec![1.0 / batch.len().max(1) as f64; batch.len()];
    weighted_loss_and_gradient(net, batch, &uniform)
}

/// Cross-entropy weighted per example; `weights` should sum to one.
pub fn weighted_loss_and_gradient(
    net: &GraphNet,
    batch: &[(GraphInput, usize)],
    weights: &[f64],
) -> Result<(f64, GraphNet)> {
    if batch.is_empty() {
        return Err(Error::input("empty training batch"));
    }
    if weights.len() != batch.len() {
        return Err(Error::Dimensions {
            expected: (batch.len(), 1),
            got: (weights.len(), 1),
        });
    }
    let mut grad = GraphNet::zeros(net.k, net.hidden);
    let mut total = 0.0;
    for ((g, label), &w) in batch.iter().zip(weights) {
        if *label >= net.k {
            return Err(Error::input(format!(
                "label {label} outside [0, {})",
                net.k
            )));
        }
        let act = net.activations(g);
        let (loss, dlogits) = softmax_xent(&act.logits, *label);
        total += w * loss;
        net.backward(g, &act, &(dlogits * w), &mut grad);
    }
    Ok((total, grad))
}

/// Per-example weights giving every class present the same total weight.
pub fn class_balanced_weights(labels: &[usize]) -> Vec<f64> {
    let mut counts = std::collections::BTreeMap::new();
    for &y in labels {
        *counts.entry(y).or_insert(0usize) += 1;
    }
    let classes = counts.len() as f64;
    labels
        .iter()
        .map(|y| 1.0 / (classes * counts[y] as f64))
        .collect()
}

pub fn loss(net: &GraphNet, batch: &[(GraphInput, usize)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::input("empty training batch"));
    }
    let mut total = 0.0;
    for (g, label) in batch {
        total += softmax_xent(&net.forward_input(g)?, *label).0;
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub hidden: usize,
    /// Weight examples so each class contributes equally to the loss;
    /// synthesis yields different numbers of valid views per class.
    pub class_balanced: bool,
    /// L2 penalty `wd/2 * |theta|^2` added to the training objective.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.05,
            momentum: 0.9,
            hidden: DEFAULT_HIDDEN,
            class_balanced: true,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// Full-batch gradient descent with momentum. Returns the parameters with
/// the lowest training loss seen, including the starting point.
pub fn train(
    net: GraphNet,
    batch: &[(GraphInput, usize)],
    config: &TrainConfig,
) -> Result<GraphNet> {
    instrument::record_training();
    let mut params = net.to_flat();
    let mut velocity = vec![0.0; params.len()];
    let mut current = net;
    let mut best = (f64::INFINITY, current.clone());
    let weights = if config.class_balanced {
        class_balanced_weights(&batch.iter().map(|b| b.1).collect::<Vec<_>>())
    } else {
        vec![1.0 / batch.len().max(1) as f64; batch.len()]
    };
    for epoch in 0..=config.epochs {
        let (mut loss, grad) = weighted_loss_and_gradient(&current, batch, &weights)?;
        loss += 0.5 * config.weight_decay * params.iter().map(|p| p * p).sum::<f64>();
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        if loss < best.0 {
            best = (loss, current.clone());
        }
        if epoch == config.epochs {
            break;
        }
        for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(grad.to_flat()) {
            *v = config.momentum * *v - config.lr * (g + config.weight_decay * *p);
            *p += *v;
        }
        current.set_flat(&params);
    }
    Ok(best.1)
}

/// Convenience: builds inputs from labelled graphs, initializes from the
/// config seed and trains.
pub fn train_graphs(
    graphs: &[(&SceneGraph, usize)],
    k: usize,
    config: &TrainConfig,
) -> Result<GraphNet> {
    let batch = graphs
        .iter()
        .map(|(g, y)| Ok((GraphInput::from_graph(g, k)?, *y)))
        .collect::<Result<Vec<_>>>()?;
    train(GraphNet::new(k, config.hidden, config.seed), &batch, config)
}

/// Class indices by descending logit; ties go to the lower index.
pub fn ranking_from_logits(logits: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order
}

pub fn predict_ranking(net: &GraphNet, graph: &SceneGraph) -> Result<Vec<usize>> {
    Ok(ranking_from_logits(net.forward(graph)?.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_graph::{build_graph, Bbox, Part};

    fn graph(k: usize, parts: &[[u32; 4]], seed: u64) -> SceneGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts: Vec<Part> = parts
            .iter()
            .enumerate()
            .map(|(i, b)| Part {
                label: i as u16 + 1,
                pixel_count: 100,
                bbox: Bbox::new(b[0], b[1], b[2], b[3]),
            })
            .collect();
        let mut g = build_graph(&parts, 64, 64);
        for n in &mut g.nodes {
            n.descriptor = Some((0..k).map(|_| rng.gen_range(0.0..1.0)).collect());
        }
        g
    }

    #[test]
    fn zero_net_is_uniform() {
        let net = GraphNet::zeros(5, 8);
        let g = graph(5, &[[0, 0, 10, 10]], 1);
        let logits = net.forward(&g).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
        let p = softmax(&logits);
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let batch = vec![(GraphInput::from_graph(&g, 5).unwrap(), 3)];
        let l = loss(&net, &batch).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance() {
        let net = GraphNet::new(4, 16, 3);
        let g = graph(
            4,
            &[
                [0, 0, 10, 10],
                [5, 5, 20, 20],
                [30, 30, 40, 40],
                [8, 0, 12, 30],
            ],
            2,
        );
        // reverse the part order and remap edges
        let n = g.nodes.len();
        let perm: Vec<usize> = std::iter::once(0).chain((1..n).rev()).collect();
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut h = g.clone();
        h.nodes = perm.iter().map(|&i| g.nodes[i].clone()).collect();
        for e in &mut h.edges {
            let (a, b) = (inv[e.a as usize] as u32, inv[e.b as usize] as u32);
            e.a = a.min(b);
            e.b = a.max(b);
        }
        let a = net.forward(&g).unwrap();
        let b = net.forward(&h).unwrap();
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn single_node_matches_hand_computation() {
        // 2 classes, hidden 2; single node so the neighbour term is zero
        let mut net = GraphNet::zeros(2, 2);
        let g = {
            let mut g = build_graph(&[], 64, 64);
            g.nodes[0].descriptor = Some(vec![1.0, 0.5]);
            g
        };
        // features: [1, 0.5, 1, 0, 0, 0, 1, 1]
        // h1 = relu(1 - 1 + 0.5) = 0.5, relu(2 - 3) = 0
        net.w1_self[(0, 0)] = 1.0;
        net.w1_self[(0, 1)] = -2.0;
        net.b1[0] = 0.5;
        net.w1_self[(1, 2)] = 2.0;
        net.w1_self[(1, 6)] = -3.0;
        net.w1_nbr.fill(100.0); // never used: no neighbours
        // h2 = relu(4 * 0.5) = 2, relu(-0.5 + 0.25) = 0
        net.w2_self[(0, 0)] = 4.0;
        net.w2_self[(1, 0)] = -1.0;
        net.b2[1] = 0.25;
        net.w_out[(0, 0)] = 1.0;
        net.w_out[(1, 0)] = -1.0;
        net.w_out[(1, 1)] = 7.0;
        net.b_out[1] = 0.1;
        let logits = net.forward(&g).unwrap();
        assert!((logits[0] - 2.0).abs() < 1e-15);
        assert!((logits[1] - (-2.0 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn confident_logits_have_tiny_loss() {
        let mut logits = DVector::zeros(3);
        logits[1] = 100.0;
        assert!(softmax_xent(&logits, 1).0 < 1e-10);
    }

    #[test]
    fn empty_batch_and_bad_label() {
        let net = GraphNet::zeros(3, 4);
        assert!(loss_and_gradient(&net, &[]).is_err());
        let g = GraphInput::from_graph(&graph(3, &[], 0), 3).unwrap();
        assert!(loss_and_gradient(&net, &[(g, 3)]).is_err());
    }

    #[test]
    fn missing_descriptor_is_an_input_error() {
        let net = GraphNet::zeros(3, 4);
        let g = build_graph(&[], 64, 64);
        assert!(matches!(net.forward(&g), Err(Error::Input(_))));
    }

    #[test]
    fn overfits_single_graph() {
        let g = graph(2, &[[0, 0, 10, 10], [5, 5, 30, 30]], 4);
        let cfg = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        let net = train_graphs(&[(&g, 1)], 2, &cfg).unwrap();
        assert_eq!(predict_ranking(&net, &g).unwrap()[0], 1);
    }

    #[test]
    fn deterministic_training_and_zero_lr() {
        let gs = [
            graph(3, &[[0, 0, 10, 10]], 5),
            graph(3, &[[4, 4, 9, 40]], 6),
        ];
        let labelled = [(&gs[0], 0), (&gs[1], 2)];
        let cfg = TrainConfig {
            epochs: 30,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train_graphs(&labelled, 3, &cfg).unwrap();
        let b = train_graphs(&labelled, 3, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let frozen = TrainConfig { lr: 0.0, ..cfg };
        let c = train_graphs(&labelled, 3, &frozen).unwrap();
        assert_eq!(c, GraphNet::new(3, cfg.hidden, 9));
    }

    #[test]
    fn divergence_is_reported() {
        let gs = [
            graph(3, &[[0, 0, 10, 10]], 5),
            graph(3, &[[4, 4, 9, 40]], 6),
        ];
        let labelled = [(&gs[0], 0), (&gs[1], 2)];
        let cfg = TrainConfig {
            epochs: 200,
            lr: 1e300,
            ..TrainConfig::default()
        };
        match train_graphs(&labelled, 3, &cfg) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn ranking_ties() {
        assert_eq!(ranking_from_logits(&[0.1, 2.0, -1.0]), vec![1, 0, 2]);
        assert_eq!(ranking_from_logits(&[1.0, 1.0]), vec![0, 1]);
    }

    #[test]
    fn model_file_layout() {
        let net = GraphNet::new(4, 6, 1);
        let bytes = net.to_bytes();
        assert_eq!(&bytes[..4], b"CVGN");
        assert_eq!(bytes.len(), 16 + net.param_count() * 8);
        // first tensor is W1_self row-major
        let first = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let second = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
        assert_eq!(first, net.w1_self[(0, 0)]);
        assert_eq!(second, net.w1_self[(0, 1)]);
        assert_eq!(GraphNet::from_bytes(&bytes).unwrap(), net);
        assert!(GraphNet::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }
}
