//! Mean reciprocal rank, baseline rankers and the benchmark harness.
//!
//! Five methods are scored on one split: a semantic label histogram, a
//! global mean-descriptor L2 ranker, whole-image NBNN, and the graph network
//! trained on real graphs only or on real plus synthesized graphs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    build_split, sample_place_classes, ClassSampling, LabeledSplit, PlaceClassSet,
};
use crate::descriptors::{rank_ascending, FeatureExtractor, LitePatch, NearestTable, Vocabulary};
use crate::error::{Error, Result};
use crate::gcn::{predict_ranking, train_graphs, GraphNet, TrainConfig};
use crate::geometry::{CameraIntrinsics, VisibilityCone};
use crate::instrument;
use crate::raster::{LabelRaster, MARGIN};
use crate::scene_graph::{Bbox, SceneGraph};
use crate::synthesis::{real_graph, synthesize_training_set, SynthesisConfig, SynthesizedGraph};
use crate::synthworld::{generate_world, render_all, sample_camera_poses, Frame, WorldSpec};

/// `100 * mean(1 / rank)` with 1-based ranks.
pub fn mrr(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::input("no ranks to average"));
    }
    if ranks.contains(&0) {
        return Err(Error::input("ranks are 1-based"));
    }
    Ok(100.0 * ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// Expected MRR (percent) of a uniformly random ranking over `k` classes.
pub fn chance_mrr(k: usize) -> f64 {
    100.0 * (1..=k).map(|r| 1.0 / r as f64).sum::<f64>() / k as f64
}

/// 1-based position of `class` in `ranking`.
pub fn rank_of(ranking: &[usize], class: usize) -> usize {
    ranking
        .iter()
        .position(|&c| c == class)
        .map_or(ranking.len() + 1, |p| p + 1)
}

/// Ranks of the true class under uniformly random rankings.
pub fn random_ranking_ranks(k: usize, queries: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..k).collect();
    (0..queries)
        .map(|q| {
            order.shuffle(&mut rng);
            rank_of(&order, q % k)
        })
        .collect()
}

/// Normalized label frequencies over non-margin pixels.
pub fn semantic_histogram(labels: &LabelRaster) -> BTreeMap<u16, f64> {
    let mut h = BTreeMap::new();
    let mut n = 0usize;
    for &l in labels.as_slice() {
        if l != MARGIN {
            *h.entry(l).or_insert(0.0) += 1.0;
            n += 1;
        }
    }
    if n > 0 {
        h.values_mut().for_each(|v| *v /= n as f64);
    }
    h
}

/// `1 - sum_l min(a_l, b_l)`.
pub fn histogram_dissimilarity(a: &BTreeMap<u16, f64>, b: &BTreeMap<u16, f64>) -> f64 {
    let inter: f64 = a
        .iter()
        .filter_map(|(l, &x)| b.get(l).map(|&y| x.min(y)))
        .sum();
    (1.0 - inter).max(0.0)
}

pub fn baseline_semantic_histogram(frame: &Frame, training: &[&Frame]) -> Vec<usize> {
    let q = semantic_histogram(&frame.labels);
    let d: Vec<f64> = training
        .iter()
        .map(|t| histogram_dissimilarity(&q, &semantic_histogram(&t.labels)))
        .collect();
    rank_ascending(&d)
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Global descriptor: the L2-normalized mean of the frame's local features.
pub fn global_descriptor(frame: &Frame, extractor: &dyn FeatureExtractor) -> Vec<f64> {
    let full = Bbox::full(frame.intrinsics.width, frame.intrinsics.height);
    extractor.extract(frame, &full).mean_descriptor()
}

pub fn baseline_global_l2(query: &[f64], training: &[Vec<f64>]) -> Vec<usize> {
    let d: Vec<f64> = training.iter().map(|t| l2(query, t)).collect();
    rank_ascending(&d)
}

pub fn baseline_nbnn(
    frame: &Frame,
    vocab: &Vocabulary,
    extractor: &dyn FeatureExtractor,
) -> Vec<usize> {
    let full = Bbox::full(frame.intrinsics.width, frame.intrinsics.height);
    rank_ascending(&vocab.distances(&extractor.extract(frame, &full)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub world_seed: u64,
    pub world: WorldSpec,
    pub pool_size: usize,
    pub camera_height: f64,
    pub clearance: f64,
    pub intrinsics: CameraIntrinsics,
    pub k: usize,
    pub cone: VisibilityCone,
    pub sampling: ClassSampling,
    pub synthesis: SynthesisConfig,
    pub train: TrainConfig,
    /// Seeds pose sampling, class sampling and viewpoint jitter.
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            world_seed: 7,
            world: WorldSpec::default(),
            pool_size: 400,
            camera_height: 1.5,
            clearance: 0.4,
            intrinsics: CameraIntrinsics::default(),
            k: 20,
            cone: VisibilityCone::default(),
            sampling: ClassSampling::default(),
            synthesis: SynthesisConfig::default(),
            train: TrainConfig {
                epochs: 600,
                weight_decay: 1e-2,
                ..TrainConfig::default()
            },
            seed: 0,
        }
    }
}

/// Everything computed on the online side for one test frame.
#[derive(Debug, Clone)]
pub struct QueryView {
    pub frame_id: u32,
    pub class: usize,
    pub graph: SceneGraph,
    pub nbnn_distances: Vec<f64>,
    pub global: Vec<f64>,
    /// Seconds spent extracting features and building the described graph.
    pub describe_secs: f64,
}

/// Online description of one frame: local features, NBNN table, parts and
/// the described scene graph. Never synthesizes.
pub fn describe_query(
    frame: &Frame,
    class: usize,
    vocab: &Vocabulary,
    extractor: &dyn FeatureExtractor,
    min_part_area: usize,
) -> QueryView {
    let start = Instant::now();
    let full = Bbox::full(frame.intrinsics.width, frame.intrinsics.height);
    let table = NearestTable::new(extractor.extract(frame, &full), vocab);
    let (graph, _) = real_graph(frame, &table, min_part_area);
    let describe_secs = start.elapsed().as_secs_f64();
    QueryView {
        frame_id: frame.id,
        class,
        nbnn_distances: table.whole_distances(),
        global: table.features().mean_descriptor(),
        graph,
        describe_secs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: String,
    pub mrr_percent: f64,
    pub n_queries: usize,
    /// `rank_histogram[class][rank - 1]` counts test queries.
    pub rank_histogram: Vec<Vec<usize>>,
}

impl MethodScore {
    pub fn from_ranks(method: &str, k: usize, ranks: &[(usize, usize)]) -> Result<Self> {
        let mut rank_histogram = vec![vec![0; k]; k];
        for &(class, rank) in ranks {
            rank_histogram[class][rank - 1] += 1;
        }
        let only: Vec<usize> = ranks.iter().map(|r| r.1).collect();
        Ok(Self {
            method: method.to_string(),
            mrr_percent: mrr(&only)?,
            n_queries: ranks.len(),
            rank_histogram,
        })
    }
}

pub const METHOD_HISTOGRAM: &str = "semantic_histogram";
pub const METHOD_GLOBAL_L2: &str = "global_l2";
pub const METHOD_NBNN: &str = "nbnn";
pub const METHOD_GCN_REAL: &str = "gcn_rrv";
pub const METHOD_GCN_VS: &str = "gcn_rrv_vs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub k: usize,
    pub n_synth: usize,
    pub seed: u64,
    pub world_seed: u64,
    pub split_hash: String,
    pub n_train_graphs: usize,
    pub methods: Vec<MethodScore>,
    /// `(n_synth, mrr_percent)` for the synthesized-graph model.
    pub sweep: Vec<(usize, f64)>,
    /// Mean online seconds per query (description + ranking), per N.
    pub online_secs: Vec<(usize, f64)>,
    pub stage_secs: Vec<(String, f64)>,
    /// Synthesis calls made while answering queries; must be zero.
    pub online_synthesis_calls: u64,
}

impl BenchmarkReport {
    pub fn score(&self, method: &str) -> Option<f64> {
        self.methods
            .iter()
            .find(|m| m.method == method)
            .map(|m| m.mrr_percent)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "K = {}, N = {}, seed = {}, split {}",
            self.k,
            self.n_synth,
            self.seed,
            &self.split_hash[..12]
        )
        .unwrap();
        writeln!(s, "{:<22} {:>10} {:>9}", "method", "MRR [%]", "queries").unwrap();
        for m in &self.methods {
            writeln!(
                s,
                "{:<22} {:>10.2} {:>9}",
                m.method, m.mrr_percent, m.n_queries
            )
            .unwrap();
        }
        writeln!(s, "chance {:>25.2}", chance_mrr(self.k)).unwrap();
        for (n, secs) in &self.online_secs {
            writeln!(s, "online latency (N={n}): {:.4} s/query", secs).unwrap();
        }
        s
    }

    /// `method,mrr_percent,n_queries,seed`
    pub fn csv(&self) -> String {
        let mut s = String::from("method,mrr_percent,n_queries,seed\n");
        for m in &self.methods {
            writeln!(
                s,
                "{},{:.4},{},{}",
                m.method, m.mrr_percent, m.n_queries, self.seed
            )
            .unwrap();
        }
        s
    }

    /// `n_synth,mrr_percent`
    pub fn sweep_csv(&self) -> String {
        let mut s = String::from("n_synth,mrr_percent\n");
        for (n, m) in &self.sweep {
            writeln!(s, "{n},{m:.4}").unwrap();
        }
        s
    }
}

/// World, frames, classes, split, vocabulary and described queries: the
/// part of a benchmark that does not depend on the number of synthesized
/// views.
pub struct Benchmark {
    pub config: BenchmarkConfig,
    pub extractor: Arc<dyn FeatureExtractor + Send>,
    pub frames: Vec<Frame>,
    pub classes: PlaceClassSet,
    pub split: LabeledSplit,
    pub vocab: Vocabulary,
    pub queries: Vec<QueryView>,
    pub stage_secs: Vec<(String, f64)>,
}

impl Benchmark {
    /// Generates the world, renders the pool and describes with LitePatch.
    pub fn prepare(config: &BenchmarkConfig) -> Result<Self> {
        let start = Instant::now();
        let world = generate_world(config.world_seed, &config.world)?;
        let poses = sample_camera_poses(
            &world,
            config.pool_size,
            config.camera_height,
            config.clearance,
            config.seed,
        )?;
        let frames = render_all(&world, &poses, &config.intrinsics);
        let render_secs = start.elapsed().as_secs_f64();
        let mut bench = Self::from_frames(config, frames, Arc::new(LitePatch))?;
        bench.stage_secs.insert(0, ("render".into(), render_secs));
        Ok(bench)
    }

    /// Samples classes, splits the given pool and describes the queries.
    pub fn from_frames(
        config: &BenchmarkConfig,
        frames: Vec<Frame>,
        extractor: Arc<dyn FeatureExtractor + Send>,
    ) -> Result<Self> {
        let mut stage_secs = Vec::new();
        let mut t = Instant::now();
        let classes = sample_place_classes(
            &frames,
            config.k,
            config.cone,
            &config.sampling,
            Some(extractor.as_ref()),
            config.seed,
        )?;
        let split = build_split(&frames, &classes, config.cone);
        let training = training_frames(&frames, &split)?;
        let vocab = Vocabulary::from_frames(&training, extractor.as_ref())?;
        stage_secs.push(("dataset".to_string(), t.elapsed().as_secs_f64()));
        t = Instant::now();

        let queries = describe_queries(
            &frames,
            &split,
            &vocab,
            extractor.as_ref(),
            config.synthesis.min_part_area,
        )?;
        stage_secs.push(("describe".to_string(), t.elapsed().as_secs_f64()));
        Ok(Self {
            config: config.clone(),
            extractor,
            frames,
            classes,
            split,
            vocab,
            queries,
            stage_secs,
        })
    }

    pub fn training_frames(&self) -> Vec<&Frame> {
        training_frames(&self.frames, &self.split).expect("split built from these frames")
    }

    /// Real graphs plus valid synthesized graphs for `n` viewpoints per class.
    pub fn training_graphs(&self, n: usize) -> Result<Vec<SynthesizedGraph>> {
        let mut cfg = self.config.synthesis.clone();
        cfg.viewpoints.count = n;
        synthesize_training_set(
            &self.training_frames(),
            &self.classes.rep_points(),
            &self.vocab,
            self.extractor.as_ref(),
            &cfg,
            self.config.seed,
        )
    }

    pub fn train(&self, graphs: &[SynthesizedGraph]) -> Result<GraphNet> {
        let labelled: Vec<(&SceneGraph, usize)> = graphs
            .iter()
            .map(|g| (&g.graph, g.class as usize))
            .collect();
        let cfg = TrainConfig {
            seed: self.config.train.seed ^ self.config.seed,
            ..self.config.train.clone()
        };
        train_graphs(&labelled, self.config.k, &cfg)
    }

    /// Ranks the true class of every query with the network. Returns the
    /// per-query `(class, rank)` pairs and mean seconds per query including
    /// the online description time.
    pub fn evaluate_net(&self, net: &GraphNet) -> Result<(Vec<(usize, usize)>, f64)> {
        let results: Vec<(usize, usize, f64)> = self
            .queries
            .par_iter()
            .map(|q| {
                let start = Instant::now();
                let ranking = predict_ranking(net, &q.graph)?;
                let secs = start.elapsed().as_secs_f64() + q.describe_secs;
                Ok((q.class, rank_of(&ranking, q.class), secs))
            })
            .collect::<Result<_>>()?;
        let mean_secs = results.iter().map(|r| r.2).sum::<f64>() / results.len().max(1) as f64;
        Ok((results.into_iter().map(|r| (r.0, r.1)).collect(), mean_secs))
    }

    pub fn baseline_scores(&self) -> Result<Vec<MethodScore>> {
        let k = self.config.k;
        let training = self.training_frames();
        let train_globals: Vec<Vec<f64>> = training
            .iter()
            .map(|f| global_descriptor(f, self.extractor.as_ref()))
            .collect();
        let by_id = frame_index(&self.frames);
        let mut hist = Vec::new();
        let mut glob = Vec::new();
        let mut nbnn = Vec::new();
        for q in &self.queries {
            let frame = &self.frames[by_id[&q.frame_id]];
            hist.push((
                q.class,
                rank_of(&baseline_semantic_histogram(frame, &training), q.class),
            ));
            glob.push((
                q.class,
                rank_of(&baseline_global_l2(&q.global, &train_globals), q.class),
            ));
            nbnn.push((
                q.class,
                rank_of(&rank_ascending(&q.nbnn_distances), q.class),
            ));
        }
        Ok(vec![
            MethodScore::from_ranks(METHOD_HISTOGRAM, k, &hist)?,
            MethodScore::from_ranks(METHOD_GLOBAL_L2, k, &glob)?,
            MethodScore::from_ranks(METHOD_NBNN, k, &nbnn)?,
        ])
    }
}

pub fn frame_index(frames: &[Frame]) -> std::collections::HashMap<u32, usize> {
    frames.iter().enumerate().map(|(i, f)| (f.id, i)).collect()
}

pub fn training_frames<'a>(frames: &'a [Frame], split: &LabeledSplit) -> Result<Vec<&'a Frame>> {
    let by_id = frame_index(frames);
    split
        .training
        .iter()
        .map(|(id, _)| {
            by_id
                .get(id)
                .map(|&i| &frames[i])
                .ok_or_else(|| Error::input(format!("training frame {id} missing from pool")))
        })
        .collect()
}

pub fn describe_queries(
    frames: &[Frame],
    split: &LabeledSplit,
    vocab: &Vocabulary,
    extractor: &dyn FeatureExtractor,
    min_part_area: usize,
) -> Result<Vec<QueryView>> {
    let by_id = frame_index(frames);
    split
        .test
        .par_iter()
        .map(|&(id, class)| {
            let i = *by_id
                .get(&id)
                .ok_or_else(|| Error::input(format!("test frame {id} missing from pool")))?;
            Ok(describe_query(
                &frames[i],
                class,
                vocab,
                extractor,
                min_part_area,
            ))
        })
        .collect()
}

/// Full benchmark: baselines, the network without synthesis (N = 0) and with
/// `n_synth` views per class, plus an optional sweep over `sweep` values.
pub fn run_benchmark(
    config: &BenchmarkConfig,
    n_synth: usize,
    sweep: &[usize],
) -> Result<BenchmarkReport> {
    Benchmark::prepare(config)?.report(n_synth, sweep)
}

impl Benchmark {
    pub fn report(&self, n_synth: usize, sweep: &[usize]) -> Result<BenchmarkReport> {
        let bench = self;
        let config = &self.config;
        if bench.queries.is_empty() {
            return Err(Error::input("benchmark split has no test frames"));
        }
        let mut stage_secs = bench.stage_secs.clone();
        let mut methods = bench.baseline_scores()?;
        let k = config.k;

        let mut ns = vec![0, n_synth];
        ns.extend_from_slice(sweep);
        ns.sort_unstable();
        ns.dedup();

        let mut by_n = BTreeMap::new();
        let mut online_secs = Vec::new();
        let mut online_calls = 0;
        let mut n_train_graphs = 0;
        for &n in &ns {
            let t = Instant::now();
            let graphs = bench.training_graphs(n)?;
            let net = bench.train(&graphs)?;
            stage_secs.push((format!("offline N={n}"), t.elapsed().as_secs_f64()));
            if n == n_synth {
                n_train_graphs = graphs.len();
            }
            let before = instrument::synthesis_calls();
            let (ranks, secs) = bench.evaluate_net(&net)?;
            online_calls += instrument::synthesis_calls() - before;
            online_secs.push((n, secs));
            by_n.insert(n, ranks);
        }
        methods.push(MethodScore::from_ranks(METHOD_GCN_REAL, k, &by_n[&0])?);
        methods.push(MethodScore::from_ranks(METHOD_GCN_VS, k, &by_n[&n_synth])?);
        let sweep = sweep
            .iter()
            .map(|n| {
                let r: Vec<usize> = by_n[n].iter().map(|x| x.1).collect();
                Ok((*n, mrr(&r)?))
            })
            .collect::<Result<_>>()?;

        Ok(BenchmarkReport {
            k,
            n_synth,
            seed: config.seed,
            world_seed: config.world_seed,
            split_hash: bench.split.hash(),
            n_train_graphs,
            methods,
            sweep,
            online_secs,
            stage_secs,
            online_synthesis_calls: online_calls,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Raster;

    #[test]
    fn mrr_examples() {
        assert_eq!(mrr(&[1, 1, 1]).unwrap(), 100.0);
        assert!((mrr(&[1, 2, 4]).unwrap() - 175.0 / 3.0).abs() < 1e-12);
        assert!(mrr(&[]).is_err());
        assert!(mrr(&[0]).is_err());
    }

    #[test]
    fn chance_level() {
        // 100 * H_100 / 100
        assert!((chance_mrr(100) - 5.187377517639621).abs() < 1e-12);
        assert!((chance_mrr(20) - 17.98869828571841).abs() < 1e-12);
        let r = random_ranking_ranks(100, 20_000, 1);
        assert!((mrr(&r).unwrap() - chance_mrr(100)).abs() < 0.3);
    }

    #[test]
    fn histogram_examples() {
        let a = Raster::from_vec(2, 2, vec![1u16, 1, 2, 2]).unwrap();
        let b = Raster::from_vec(2, 2, vec![3u16, 3, 4, 4]).unwrap();
        let c = Raster::from_vec(2, 2, vec![1u16, 1, 3, 3]).unwrap();
        let ha = semantic_histogram(&a);
        assert_eq!(histogram_dissimilarity(&ha, &ha), 0.0);
        assert_eq!(histogram_dissimilarity(&ha, &semantic_histogram(&b)), 1.0);
        assert_eq!(histogram_dissimilarity(&ha, &semantic_histogram(&c)), 0.5);
        let with_margin = Raster::from_vec(2, 2, vec![1u16, MARGIN, 2, MARGIN]).unwrap();
        assert_eq!(
            histogram_dissimilarity(&ha, &semantic_histogram(&with_margin)),
            0.0
        );
    }

    #[test]
    fn global_l2_ranking() {
        let q = vec![1.0, 0.0];
        let train = vec![vec![0.0, 1.0], vec![1.0, 0.1]];
        assert_eq!(baseline_global_l2(&q, &train), vec![1, 0]);
        assert_eq!(rank_of(&[1, 0], 0), 2);
    }

    #[test]
    fn report_csvs() {
        let report = BenchmarkReport {
            k: 2,
            n_synth: 10,
            seed: 3,
            world_seed: 7,
            split_hash: "0".repeat(64),
            n_train_graphs: 5,
            methods: vec![MethodScore::from_ranks("nbnn", 2, &[(0, 1), (1, 2)]).unwrap()],
            sweep: vec![(0, 50.0), (5, 60.0), (10, 70.0), (20, 70.0)],
            online_secs: vec![],
            stage_secs: vec![],
            online_synthesis_calls: 0,
        };
        assert_eq!(
            report.csv(),
            "method,mrr_percent,n_queries,seed\nnbnn,75.0000,2,3\n"
        );
        assert_eq!(report.sweep_csv().lines().count(), 5);
        assert_eq!(
            report.methods[0].rank_histogram,
            vec![vec![1, 0], vec![0, 1]]
        );
        assert!(report.table().contains("nbnn"));
    }
}
