//! One function per command. Each stage reads its predecessors' artifacts
//! from the run directory and writes its own next to them.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use cvgl::dataset::{build_split, sample_place_classes, SplitManifest};
use cvgl::descriptors::{rank_ascending, Vocabulary};
use cvgl::eval::{
    baseline_global_l2, baseline_semantic_histogram, describe_query, global_descriptor, rank_of,
    training_frames, Benchmark, MethodScore, METHOD_GCN_REAL, METHOD_GCN_VS, METHOD_GLOBAL_L2,
    METHOD_HISTOGRAM, METHOD_NBNN,
};
use cvgl::gcn::{predict_ranking, train_graphs, GraphNet};
use cvgl::instrument;
use cvgl::scene_graph::{decode_graph_store, encode_graph_store, SceneGraph};
use cvgl::synthesis::synthesize_training_set;
use cvgl::synthworld::{generate_world, load_frameset, render_all, sample_camera_poses, save_frameset, Frame};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

pub const CONFIG_FILE: &str = "config.toml";
pub const FRAMES_DIR: &str = "frames";
pub const WORLD_FILE: &str = "world.json";
pub const SPLIT_FILE: &str = "split.json";
pub const SYNTH_DIR: &str = "synth";
pub const STORE_FILE: &str = "graphs.cvgs";
pub const SYNTH_MANIFEST: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.cvgn";
pub const REAL_MODEL_FILE: &str = "model_real.cvgn";
pub const TRAIN_MANIFEST: &str = "train.json";
pub const EVAL_DIR: &str = "eval";
pub const REPORT_DIR: &str = "report";

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn require(path: &Path, what: &str, stage: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {what}: {} (run `cvgl {stage}` first)", path.display());
    }
    Ok(())
}

fn load_frames(out: &Path) -> Result<Vec<Frame>> {
    let dir = out.join(FRAMES_DIR);
    require(&dir.join("manifest.json"), "frameset", "world gen")?;
    Ok(load_frameset(&dir)?.1)
}

fn load_split(out: &Path) -> Result<SplitManifest> {
    let path = out.join(SPLIT_FILE);
    require(&path, "split", "dataset build")?;
    let manifest = SplitManifest::load(&path)?;
    ensure!(
        manifest.split.hash() == manifest.split_hash,
        "{} was edited: split hash does not match",
        path.display()
    );
    Ok(manifest)
}

pub fn world_gen(config: &PipelineConfig, out: &Path) -> Result<()> {
    let w = &config.world;
    let world = generate_world(w.seed, &w.spec)?;
    let poses = sample_camera_poses(&world, w.pool_size, w.camera_height, w.clearance, config.seed)?;
    let frames = render_all(&world, &poses, &w.intrinsics);
    save_frameset(&out.join(FRAMES_DIR), w.seed, &frames)?;
    write(&out.join(WORLD_FILE), serde_json::to_string_pretty(&world)?)?;
    write(&out.join(CONFIG_FILE), config.to_toml()?)?;
    println!(
        "world {}: {} objects, {} frames -> {}",
        w.seed,
        world.objects.len(),
        frames.len(),
        out.join(FRAMES_DIR).display()
    );
    Ok(())
}

pub fn dataset_build(config: &PipelineConfig, out: &Path) -> Result<()> {
    let frames = load_frames(out)?;
    let cone = config.cone()?;
    let ids: Vec<u32> = frames.iter().map(|f| f.id).collect();
    let extractor = config.extractor(&ids)?;
    let classes = sample_place_classes(
        &frames,
        config.dataset.k,
        cone,
        &config.sampling(),
        Some(extractor.as_ref()),
        config.seed,
    )?;
    let split = build_split(&frames, &classes, cone);
    let manifest = SplitManifest::new(classes, split, cone);
    manifest.save(&out.join(SPLIT_FILE))?;
    println!(
        "{} classes, {} test frames, {} excluded; split {}",
        manifest.classes.len(),
        manifest.split.test.len(),
        manifest.split.excluded.len(),
        manifest.split_hash
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub index: usize,
    pub class: u32,
    /// `None` for the real training view.
    pub viewpoint: Option<usize>,
    pub pose: String,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub split_hash: String,
    pub n_synth: usize,
    pub seed: u64,
    pub store: String,
    pub records: Vec<SynthRecord>,
}

pub fn synth(config: &PipelineConfig, out: &Path) -> Result<()> {
    let frames = load_frames(out)?;
    let split = load_split(out)?;
    let training = training_frames(&frames, &split.split)?;
    let ids: Vec<u32> = training.iter().map(|f| f.id).collect();
    let extractor = config.extractor(&ids)?;
    let vocab = Vocabulary::from_frames(&training, extractor.as_ref())?;
    let graphs = synthesize_training_set(
        &training,
        &split.classes.rep_points(),
        &vocab,
        extractor.as_ref(),
        &config.synthesis(),
        config.seed,
    )?;
    let dir = out.join(SYNTH_DIR);
    let store: Vec<SceneGraph> = graphs.iter().map(|g| g.graph.clone()).collect();
    write(&dir.join(STORE_FILE), encode_graph_store(&store))?;
    let manifest = SynthManifest {
        split_hash: split.split_hash.clone(),
        n_synth: config.synthesis.n_synth,
        seed: config.seed,
        store: STORE_FILE.to_string(),
        records: graphs
            .iter()
            .enumerate()
            .map(|(index, g)| SynthRecord {
                index,
                class: g.class,
                viewpoint: g.viewpoint,
                pose: g.pose.to_text().trim_end().to_string(),
                margin: g.margin,
            })
            .collect(),
    };
    write(&dir.join(SYNTH_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    let synthesized = graphs.iter().filter(|g| !g.is_real()).count();
    println!(
        "{} graphs ({} real, {} synthesized of {} attempted) -> {}",
        graphs.len(),
        graphs.len() - synthesized,
        synthesized,
        config.synthesis.n_synth * training.len(),
        dir.join(STORE_FILE).display()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub split_hash: String,
    pub n_synth: usize,
    pub graphs: usize,
    pub real_graphs: usize,
    pub store_bytes: u64,
    pub model_bytes: u64,
    pub seconds: f64,
}

pub fn train(config: &PipelineConfig, out: &Path) -> Result<()> {
    let dir = out.join(SYNTH_DIR);
    let store_path = dir.join(STORE_FILE);
    require(&store_path, "graph store", "synth")?;
    let manifest: SynthManifest = serde_json::from_str(&fs::read_to_string(dir.join(SYNTH_MANIFEST))?)?;
    let graphs = decode_graph_store(&fs::read(&store_path)?)?;
    ensure!(
        graphs.len() == manifest.records.len(),
        "store has {} graphs, manifest lists {}",
        graphs.len(),
        manifest.records.len()
    );
    let k = config.dataset.k;
    let all: Vec<(&SceneGraph, usize)> = graphs
        .iter()
        .zip(&manifest.records)
        .map(|(g, r)| (g, r.class as usize))
        .collect();
    let real: Vec<(&SceneGraph, usize)> = all
        .iter()
        .zip(&manifest.records)
        .filter(|(_, r)| r.viewpoint.is_none())
        .map(|(g, _)| *g)
        .collect();

    let start = Instant::now();
    let cfg = config.train();
    let net = train_graphs(&all, k, &cfg)?;
    // without synthesis the two models coincide
    let real_net = if real.len() == all.len() {
        net.clone()
    } else {
        train_graphs(&real, k, &cfg)?
    };
    let seconds = start.elapsed().as_secs_f64();
    net.save(&out.join(MODEL_FILE))?;
    real_net.save(&out.join(REAL_MODEL_FILE))?;

    let record = TrainManifest {
        split_hash: manifest.split_hash,
        n_synth: manifest.n_synth,
        graphs: all.len(),
        real_graphs: real.len(),
        store_bytes: fs::metadata(&store_path)?.len(),
        model_bytes: fs::metadata(out.join(MODEL_FILE))?.len(),
        seconds,
    };
    write(&out.join(TRAIN_MANIFEST), serde_json::to_string_pretty(&record)?)?;
    println!(
        "trained on {} graphs ({} real) in {:.1} s; model {} bytes, store {} bytes",
        record.graphs, record.real_graphs, seconds, record.model_bytes, record.store_bytes
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split_hash: String,
    pub n_synth: Option<usize>,
    pub methods: Vec<MethodScore>,
    pub mean_latency_ms: f64,
    pub synthesis_calls: u64,
    pub training_calls: u64,
}

/// Online path only: describe each test frame, rank with the model. The
/// baselines are scored on the same queries afterwards.
pub fn eval(config: &PipelineConfig, out: &Path) -> Result<EvalReport> {
    let model_path = out.join(MODEL_FILE);
    if !model_path.exists() {
        bail!("missing model: {} (run `cvgl train` first)", model_path.display());
    }
    let net = GraphNet::load(&model_path)?;
    let real_net = match out.join(REAL_MODEL_FILE) {
        p if p.exists() => Some(GraphNet::load(&p)?),
        _ => None,
    };
    let frames = load_frames(out)?;
    let split = load_split(out)?;
    let k = split.classes.len();
    ensure!(net.k == k, "model has {} classes, split has {k}", net.k);
    let training = training_frames(&frames, &split.split)?;
    let ids: Vec<u32> = frames.iter().map(|f| f.id).collect();
    let extractor = config.extractor(&ids)?;
    let vocab = Vocabulary::from_frames(&training, extractor.as_ref())?;
    let by_id: std::collections::HashMap<u32, &Frame> = frames.iter().map(|f| (f.id, f)).collect();

    // queries run one at a time so each wall time is its own
    let mut rows = Vec::with_capacity(split.split.test.len());
    for &(id, class) in &split.split.test {
        let frame = by_id
            .get(&id)
            .with_context(|| format!("test frame {id} missing from frameset"))?;
        let start = Instant::now();
        let q = describe_query(frame, class, &vocab, extractor.as_ref(), config.synthesis.min_part_area);
        let ranking = predict_ranking(&net, &q.graph)?;
        let latency = start.elapsed().as_secs_f64();
        rows.push((q, rank_of(&ranking, class), latency));
    }
    let synthesis_calls = instrument::synthesis_calls();
    let training_calls = instrument::training_calls();

    let globals: Vec<Vec<f64>> = training
        .iter()
        .map(|f| global_descriptor(f, extractor.as_ref()))
        .collect();
    let mut ranks: Vec<(&str, Vec<(usize, usize)>)> = vec![
        (METHOD_HISTOGRAM, vec![]),
        (METHOD_GLOBAL_L2, vec![]),
        (METHOD_NBNN, vec![]),
        (METHOD_GCN_VS, vec![]),
    ];
    if real_net.is_some() {
        ranks.push((METHOD_GCN_REAL, vec![]));
    }
    let mut queries_csv = String::from("frame_id,class,rank_gcn,latency_ms\n");
    for (q, rank, latency) in &rows {
        let c = q.class;
        let frame = by_id[&q.frame_id];
        ranks[0].1.push((c, rank_of(&baseline_semantic_histogram(frame, &training), c)));
        ranks[1].1.push((c, rank_of(&baseline_global_l2(&q.global, &globals), c)));
        ranks[2].1.push((c, rank_of(&rank_ascending(&q.nbnn_distances), c)));
        ranks[3].1.push((c, *rank));
        if let Some(rn) = &real_net {
            ranks[4].1.push((c, rank_of(&predict_ranking(rn, &q.graph)?, c)));
        }
        queries_csv.push_str(&format!("{},{},{},{:.4}\n", q.frame_id, c, rank, latency * 1e3));
    }
    let methods = ranks
        .iter()
        .map(|(m, r)| MethodScore::from_ranks(m, k, r).map_err(Into::into))
        .collect::<Result<Vec<_>>>()?;
    let train_record: Option<TrainManifest> = fs::read_to_string(out.join(TRAIN_MANIFEST))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok());
    let report = EvalReport {
        split_hash: split.split_hash.clone(),
        n_synth: train_record.map(|t| t.n_synth),
        mean_latency_ms: 1e3 * rows.iter().map(|r| r.2).sum::<f64>() / rows.len().max(1) as f64,
        methods,
        synthesis_calls,
        training_calls,
    };

    let dir = out.join(EVAL_DIR);
    write(&dir.join("queries.csv"), queries_csv)?;
    write(&dir.join("results.csv"), methods_csv(&report.methods, config.seed))?;
    write(&dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    println!("{:<22} {:>10} {:>9}", "method", "MRR [%]", "queries");
    for m in &report.methods {
        println!("{:<22} {:>10.2} {:>9}", m.method, m.mrr_percent, m.n_queries);
    }
    println!("online latency: {:.2} ms/query", report.mean_latency_ms);
    println!("synthesis calls: {}", report.synthesis_calls);
    Ok(report)
}

fn methods_csv(methods: &[MethodScore], seed: u64) -> String {
    let mut s = String::from("method,mrr_percent,n_queries,seed\n");
    for m in methods {
        s.push_str(&format!("{},{:.4},{},{}\n", m.method, m.mrr_percent, m.n_queries, seed));
    }
    s
}

/// The whole benchmark in memory: baselines, both network variants and
/// the N sweep.
pub fn report(config: &PipelineConfig, out: &Path, sweep: &[usize]) -> Result<()> {
    let bench_config = config.benchmark()?;
    let bench = match config.descriptor.kind {
        crate::config::DescriptorKind::Litepatch => Benchmark::prepare(&bench_config)?,
        crate::config::DescriptorKind::Files => {
            let w = &config.world;
            let world = generate_world(w.seed, &w.spec)?;
            let poses = sample_camera_poses(&world, w.pool_size, w.camera_height, w.clearance, config.seed)?;
            let frames = render_all(&world, &poses, &w.intrinsics);
            let ids: Vec<u32> = frames.iter().map(|f| f.id).collect();
            Benchmark::from_frames(&bench_config, frames, config.extractor(&ids)?)?
        }
    };
    let report = bench.report(config.synthesis.n_synth, sweep)?;
    let dir = out.join(REPORT_DIR);
    write(&dir.join("results.csv"), report.csv())?;
    write(&dir.join("sweep.csv"), report.sweep_csv())?;
    write(&dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    print!("{}", report.table());
    for (stage, secs) in &report.stage_secs {
        println!("{stage:<16} {secs:8.2} s");
    }
    if !report.sweep.is_empty() {
        print!("{}", report.sweep_csv());
    }
    Ok(())
}

pub fn run_dir(out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from("run"))
}
