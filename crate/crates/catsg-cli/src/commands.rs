//! Command implementations: each run resolves its full configuration first,
//! derives a config-hash-named run directory, and persists the merged
//! config snapshot next to its outputs.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use catsg_core::checkpoint::{Checkpoint, CheckpointError};
use catsg_core::downstream::{
    self, evaluate_task, train_task, GraphClassifier, Task, TaskConfig,
};
use catsg_core::dynamicgraph::WindowConfig;
use catsg_core::evaluation::render_relation_table;
use catsg_core::ontology::{Ontology, OntologyError};
use catsg_core::relnet::{
    self, predict_video_graphs, RelHeads, RelNetError, RelTrainConfig, Variant,
};
use catsg_core::scenegraph::{
    dataset_stats, read_jsonl, write_jsonl, SceneGraphError, VideoRecord,
};
use catsg_core::synthdata::{
    generate as synth_generate, stratified_split, SimConfig, SynthError, SyntheticQueryProvider,
};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Fingerprint(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Fingerprint(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Io(msg) => write!(f, "{msg}"),
            CliError::Fingerprint(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<OntologyError> for CliError {
    fn from(e: OntologyError) -> Self {
        match e {
            OntologyError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SceneGraphError> for CliError {
    fn from(e: SceneGraphError) -> Self {
        match e {
            SceneGraphError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(e) => CliError::Io(e.to_string()),
            CheckpointError::FingerprintMismatch { .. } => CliError::Fingerprint(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<RelNetError> for CliError {
    fn from(e: RelNetError) -> Self {
        match e {
            RelNetError::Checkpoint(inner) => inner.into(),
            RelNetError::Provider(inner) => inner.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<downstream::DownstreamError> for CliError {
    fn from(e: downstream::DownstreamError) -> Self {
        match e {
            downstream::DownstreamError::Checkpoint(inner) => inner.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn load_ontology(path: Option<PathBuf>) -> Result<Ontology, CliError> {
    match path {
        Some(p) => Ok(Ontology::load(p)?),
        None => Ok(Ontology::shipped_default()),
    }
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("serialization failed: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn config_hash(value: &serde_json::Value) -> String {
    let canonical = value.to_string();
    format!("{:016x}", catsg_core::ontology::fnv1a(canonical.as_bytes()))
}

/// Create `root/<prefix>-<config hash>/` and persist the snapshot inside.
fn run_dir(root: &Path, prefix: &str, snapshot: &serde_json::Value) -> Result<PathBuf, CliError> {
    let dir = root.join(format!("{prefix}-{}", config_hash(snapshot)));
    std::fs::create_dir_all(&dir)?;
    write_json_file(&dir.join("run_config.json"), snapshot)?;
    Ok(dir)
}

fn load_dataset(dir: &Path, ontology: &Ontology) -> Result<Vec<VideoRecord>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|ext| ext == "jsonl")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("video_"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!(
            "no video_*.jsonl files in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| read_jsonl(p, ontology).map_err(CliError::from))
        .collect()
}

fn load_sim_config(data_dir: &Path) -> Result<SimConfig, CliError> {
    let path = data_dir.join("run_config.json");
    let value: serde_json::Value = read_json_file(&path)?;
    serde_json::from_value(value["sim"].clone()).map_err(|e| {
        CliError::Config(format!(
            "{} lacks a simulator config (generated datasets carry one): {e}",
            path.display()
        ))
    })
}

fn split_videos<'a>(videos: &'a [VideoRecord], split: &str) -> Vec<&'a VideoRecord> {
    match split {
        "all" => videos.iter().collect(),
        "train" => stratified_split(videos, 0.7).0,
        _ => stratified_split(videos, 0.7).1,
    }
}

pub fn generate(
    out: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    videos: Option<usize>,
    ontology_path: Option<PathBuf>,
) -> Result<(), CliError> {
    let ontology = load_ontology(ontology_path)?;
    let mut sim: SimConfig = match &config {
        Some(path) => read_json_file(path)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = seed {
        sim.seed = seed;
    }
    if let Some(n) = videos {
        sim.n_videos = n;
    }

    let records = synth_generate(&sim, &ontology)?;
    std::fs::create_dir_all(&out)?;
    for v in &records {
        write_jsonl(v, out.join(format!("{}.jsonl", v.video_id)))?;
    }
    let stats = dataset_stats(&records, &ontology)?;
    write_json_file(&out.join("stats.json"), &stats)?;
    let snapshot = json!({
        "command": "generate",
        "sim": sim,
        "ontology_fingerprint": ontology.fingerprint(),
    });
    write_json_file(&out.join("run_config.json"), &snapshot)?;
    println!("{}", stats.to_table());
    println!("wrote {} videos to {}", records.len(), out.display());
    Ok(())
}

pub fn stats(data: PathBuf, ontology_path: Option<PathBuf>) -> Result<(), CliError> {
    let ontology = load_ontology(ontology_path)?;
    let videos = load_dataset(&data, &ontology)?;
    let stats = dataset_stats(&videos, &ontology)?;
    println!("{}", stats.to_table());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn train_rel(
    data: PathBuf,
    ontology_path: Option<PathBuf>,
    out: PathBuf,
    variant: Variant,
    config: Option<PathBuf>,
    seed: Option<u64>,
    epochs: Option<usize>,
    noise: Option<f64>,
    split: &str,
) -> Result<(), CliError> {
    let ontology = load_ontology(ontology_path)?;
    let videos = load_dataset(&data, &ontology)?;
    let sim = load_sim_config(&data)?;

    let mut cfg: RelTrainConfig = match &config {
        Some(path) => read_json_file(path)?,
        None => RelTrainConfig::default(),
    };
    cfg.variant = variant;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = epochs {
        cfg.epochs = epochs;
    }
    cfg.chunk_size = sim.chunk_size;

    let mut provider = SyntheticQueryProvider::new(&sim, &ontology)?;
    if let Some(sigma) = noise {
        provider = provider.with_noise(sigma);
    }

    let snapshot = json!({
        "command": "train-rel",
        "train": cfg,
        "noise": noise.unwrap_or(sim.noise_sigma),
        "split": split,
        "ontology_fingerprint": ontology.fingerprint(),
    });
    let dir = run_dir(&out, "train-rel", &snapshot)?;

    let train_videos = split_videos(&videos, split);
    let heads = RelHeads::init(sim.embed_dim, &cfg, &ontology, cfg.seed);
    let (heads, log) = relnet::train(heads, &provider, &train_videos, &cfg, &ontology)?;
    for w in &log.warnings {
        eprintln!("warning: {w}");
    }

    let cfg_json = serde_json::to_value(&cfg).unwrap_or_default();
    heads
        .to_checkpoint(&ontology, cfg_json)
        .save(dir.join("checkpoint.json"))?;
    write_json_file(&dir.join("train_log.json"), &log)?;
    println!(
        "trained {} epochs; final existence loss {:.6}, classification loss {:.6}",
        log.existence_loss.len(),
        log.existence_loss.last().copied().unwrap_or(f64::NAN),
        log.classification_loss.last().copied().unwrap_or(f64::NAN),
    );
    println!("run dir: {}", dir.display());
    Ok(())
}

pub fn eval_rel(
    data: PathBuf,
    ontology_path: Option<PathBuf>,
    out: PathBuf,
    checkpoint: PathBuf,
    variant: Variant,
    noise: Option<f64>,
    split: &str,
) -> Result<(), CliError> {
    let ontology = load_ontology(ontology_path)?;
    let videos = load_dataset(&data, &ontology)?;
    let sim = load_sim_config(&data)?;

    let ck = Checkpoint::load(&checkpoint, "relnet", ontology.fingerprint())?;
    let heads = RelHeads::from_checkpoint(&ck, &ontology)?;

    let mut provider = SyntheticQueryProvider::new(&sim, &ontology)?;
    if let Some(sigma) = noise {
        provider = provider.with_noise(sigma);
    }

    let snapshot = json!({
        "command": "eval-rel",
        "checkpoint": checkpoint.display().to_string(),
        "variant": variant,
        "noise": noise.unwrap_or(sim.noise_sigma),
        "split": split,
        "ontology_fingerprint": ontology.fingerprint(),
    });
    let dir = run_dir(&out, "eval-rel", &snapshot)?;

    let eval_videos = split_videos(&videos, split);
    let graphs_dir = dir.join("predicted_graphs");
    std::fs::create_dir_all(&graphs_dir)?;

    let mut all_pred = Vec::new();
    let mut all_gt = Vec::new();
    let mut totals = relnet::PipelineStats::default();
    for video in &eval_videos {
        let (graphs, stats) = predict_video_graphs(
            &heads,
            &provider,
            video,
            variant,
            sim.chunk_size,
            sim.close_gap,
            &ontology,
        )?;
        totals.frames += stats.frames;
        totals.proposals += stats.proposals;
        totals.open_gates += stats.open_gates;
        totals.gate_violations += stats.gate_violations;
        let predicted = VideoRecord {
            video_id: video.video_id.clone(),
            fps: video.fps,
            technique: video.technique,
            frames: graphs.clone(),
        };
        write_jsonl(&predicted, graphs_dir.join(format!("{}.jsonl", video.video_id)))?;
        all_pred.extend(graphs);
        all_gt.extend(video.frames.iter().cloned());
    }
    let report = catsg_core::evaluation::evaluate_relations(&all_pred, &all_gt, &ontology)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let table = render_relation_table(&report, &ontology);
    write_json_file(&dir.join("report.json"), &report)?;
    std::fs::write(dir.join("report.txt"), &table)?;
    write_json_file(&dir.join("pipeline_stats.json"), &totals)?;
    println!("{table}");
    println!(
        "frames {} proposals {} open gates {} gate violations {}",
        totals.frames, totals.proposals, totals.open_gates, totals.gate_violations
    );
    println!("run dir: {}", dir.display());
    Ok(())
}

fn parse_window(name: &str, spatial: bool) -> Result<WindowConfig, CliError> {
    match name {
        "single" => Ok(WindowConfig::single(spatial)),
        "w30s90" => Ok(WindowConfig::w30_s90(spatial)),
        "10s@5fps" => Ok(WindowConfig::tech_10s_5fps(spatial)),
        "50s@1fps" => Ok(WindowConfig::tech_50s_1fps(spatial)),
        other => Err(CliError::Config(format!(
            "unknown window preset {other:?} (single|w30s90|10s@5fps|50s@1fps)"
        ))),
    }
}

fn parse_task(name: &str) -> Result<Task, CliError> {
    match name {
        "phase" => Ok(Task::Phase),
        "technique" => Ok(Task::Technique),
        other => Err(CliError::Config(format!("unknown task {other:?}"))),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn train_task_cmd(
    data: PathBuf,
    ontology_path: Option<PathBuf>,
    out: PathBuf,
    task: &str,
    window: &str,
    no_spatial: bool,
    graphs: Option<PathBuf>,
    seed: Option<u64>,
    epochs: Option<usize>,
    hidden: Option<usize>,
    heads: Option<usize>,
) -> Result<(), CliError> {
    let ontology = load_ontology(ontology_path)?;
    let source = graphs.unwrap_or(data);
    let videos = load_dataset(&source, &ontology)?;

    let task = parse_task(task)?;
    let window_cfg = parse_window(window, !no_spatial)?;
    let mut cfg = TaskConfig::new(task, window_cfg);
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = epochs {
        cfg.epochs = epochs;
    }
    if let Some(hidden) = hidden {
        cfg.hidden = hidden;
    }
    if let Some(heads) = heads {
        cfg.attention_heads = heads;
    }

    let snapshot = json!({
        "command": "train-task",
        "task": cfg,
        "graphs": source.display().to_string(),
        "ontology_fingerprint": ontology.fingerprint(),
    });
    let dir = run_dir(&out, "train-task", &snapshot)?;

    let (train_videos, val_videos) = stratified_split(&videos, 0.7);
    let (model, log) = train_task(&train_videos, &val_videos, &cfg, &ontology)?;

    let cfg_json = serde_json::to_value(&cfg).unwrap_or_default();
    model
        .to_checkpoint(&ontology, cfg_json)
        .save(dir.join("checkpoint.json"))?;
    write_json_file(&dir.join("train_log.json"), &log)?;
    println!(
        "trained {} epochs; final train acc {:.4}, val acc {:.4}",
        log.loss.len(),
        log.train_accuracy.last().copied().unwrap_or(f64::NAN),
        log.val_accuracy.last().copied().unwrap_or(f64::NAN),
    );
    println!("run dir: {}", dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn eval_task_cmd(
    data: PathBuf,
    ontology_path: Option<PathBuf>,
    out: PathBuf,
    checkpoint: PathBuf,
    task: &str,
    window: &str,
    no_spatial: bool,
    graphs: Option<PathBuf>,
    split: &str,
) -> Result<(), CliError> {
    let ontology = load_ontology(ontology_path)?;
    let source = graphs.unwrap_or(data);
    let videos = load_dataset(&source, &ontology)?;

    let task = parse_task(task)?;
    let window_cfg = parse_window(window, !no_spatial)?;
    let cfg = TaskConfig::new(task, window_cfg);

    let ck = Checkpoint::load(&checkpoint, "graph-classifier", ontology.fingerprint())?;
    let model = GraphClassifier::from_checkpoint(&ck)?;

    let snapshot = json!({
        "command": "eval-task",
        "task": cfg,
        "checkpoint": checkpoint.display().to_string(),
        "split": split,
        "ontology_fingerprint": ontology.fingerprint(),
    });
    let dir = run_dir(&out, "eval-task", &snapshot)?;

    let eval_videos = split_videos(&videos, split);
    let eval = evaluate_task(&model, &eval_videos, &cfg, &ontology)?;

    write_json_file(&dir.join("report.json"), &eval)?;
    let mut table = eval.window_report.to_table();
    if let Some(video_report) = &eval.video_report {
        table.push_str("\nper-video majority vote:\n");
        table.push_str(&video_report.to_table());
    }
    std::fs::write(dir.join("report.txt"), &table)?;
    println!("{table}");
    println!("run dir: {}", dir.display());
    Ok(())
}
