//! Graph-attention classifier over dynamic scene graphs for 19-way phase
//! recognition and binary technique recognition.
//!
//! Three stacked attention layers compute per-edge scores
//! `a^T LeakyReLU(W_l x_j + W_r x_i)` (the GATv2 form, multi-head with
//! concatenated heads), aggregate attention-weighted neighbor messages,
//! apply ELU, mean-pool every node of every slot, and finish with a linear
//! head and softmax. Edges are treated as untyped and undirected, with
//! self-loops added so isolated nodes keep a well-defined neighborhood.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::dynamicgraph::{build_window, encode_features, DynGraphError, DynamicSceneGraph, WindowConfig};
use crate::evaluation::{evaluate_classification, EvalError, EvalReport};
use crate::nn::{cross_entropy_with_logits, softmax, Activation, Adam, Linear};
use crate::ontology::{Ontology, PhaseId};
use crate::scenegraph::VideoRecord;

#[derive(Debug, Error)]
pub enum DownstreamError {
    #[error("feature dim mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("train/test video overlap: {0}")]
    SplitOverlap(String),
    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),
    #[error(transparent)]
    Window(#[from] DynGraphError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

const LEAKY: Activation = Activation::LeakyRelu;
const ELU: Activation = Activation::Elu;

/// One multi-head GATv2 layer; output width = heads * head_dim.
#[derive(Debug, Clone)]
pub struct GatLayer {
    pub in_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    w_l: Linear,
    w_r: Linear,
    attn: Vec<f64>,
    bias: Vec<f64>,
}

pub struct GatCache {
    x: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// alphas[i][h] aligns with neighbors[i].
    alphas: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct GatGrads {
    w_l_w: Vec<f64>,
    w_l_b: Vec<f64>,
    w_r_w: Vec<f64>,
    w_r_b: Vec<f64>,
    attn: Vec<f64>,
    bias: Vec<f64>,
}

impl GatLayer {
    pub fn init(in_dim: usize, out_dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(out_dim % heads == 0, "output width must divide into heads");
        let bound = (1.0 / in_dim as f64).sqrt();
        let attn = (0..out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            in_dim,
            heads,
            head_dim: out_dim / heads,
            w_l: Linear::init(in_dim, out_dim, rng),
            w_r: Linear::init(in_dim, out_dim, rng),
            attn,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Attention-weighted aggregation over `neighbors[i]` (in-neighbors,
    /// self-loops included by the graph builder).
    pub fn forward(
        &self,
        x: &[Vec<f64>],
        neighbors: &[Vec<usize>],
        cache: Option<&mut GatCache>,
    ) -> Vec<Vec<f64>> {
        let n = x.len();
        let out_dim = self.out_dim();
        let mut u = vec![Vec::new(); n];
        let mut v = vec![Vec::new(); n];
        for i in 0..n {
            self.w_l.forward(&x[i], &mut u[i]);
            self.w_r.forward(&x[i], &mut v[i]);
        }

        let mut out = vec![vec![0.0; out_dim]; n];
        let mut alphas: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
        for i in 0..n {
            let nbrs = &neighbors[i];
            let mut node_alphas = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let base = h * self.head_dim;
                let mut scores = Vec::with_capacity(nbrs.len());
                for &j in nbrs {
                    let mut s = 0.0;
                    for d in 0..self.head_dim {
                        let pre = u[j][base + d] + v[i][base + d];
                        s += self.attn[base + d] * LEAKY.apply(pre);
                    }
                    scores.push(s);
                }
                let alpha = softmax(&scores);
                for (&j, &a) in nbrs.iter().zip(&alpha) {
                    for d in 0..self.head_dim {
                        out[i][base + d] += a * u[j][base + d];
                    }
                }
                node_alphas.push(alpha);
            }
            for d in 0..out_dim {
                out[i][d] += self.bias[d];
            }
            alphas.push(node_alphas);
        }
        if let Some(cache) = cache {
            cache.x = x.to_vec();
            cache.u = u;
            cache.v = v;
            cache.alphas = alphas;
        }
        out
    }

    pub fn zero_grads(&self) -> GatGrads {
        GatGrads {
            w_l_w: vec![0.0; self.w_l.weight.len()],
            w_l_b: vec![0.0; self.w_l.bias.len()],
            w_r_w: vec![0.0; self.w_r.weight.len()],
            w_r_b: vec![0.0; self.w_r.bias.len()],
            attn: vec![0.0; self.attn.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    /// Accumulates parameter gradients, returns gradient w.r.t. inputs.
    pub fn backward(
        &self,
        cache: &GatCache,
        neighbors: &[Vec<usize>],
        grad_out: &[Vec<f64>],
        grads: &mut GatGrads,
    ) -> Vec<Vec<f64>> {
        let n = cache.x.len();
        let out_dim = self.out_dim();
        let mut grad_u = vec![vec![0.0; out_dim]; n];
        let mut grad_v = vec![vec![0.0; out_dim]; n];

        for i in 0..n {
            let nbrs = &neighbors[i];
            for d in 0..out_dim {
                grads.bias[d] += grad_out[i][d];
            }
            for h in 0..self.heads {
                let base = h * self.head_dim;
                let alpha = &cache.alphas[i][h];
                // d loss / d alpha_j, and the softmax Jacobian reduction.
                let mut dalpha = Vec::with_capacity(nbrs.len());
                for (&j, &a) in nbrs.iter().zip(alpha) {
                    let mut da = 0.0;
                    for d in 0..self.head_dim {
                        da += grad_out[i][base + d] * cache.u[j][base + d];
                        grad_u[j][base + d] += a * grad_out[i][base + d];
                    }
                    dalpha.push(da);
                }
                let weighted: f64 = alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
                for ((&j, &a), &da) in nbrs.iter().zip(alpha).zip(&dalpha) {
                    let dscore = a * (da - weighted);
                    for d in 0..self.head_dim {
                        let pre = cache.u[j][base + d] + cache.v[i][base + d];
                        grads.attn[base + d] += dscore * LEAKY.apply(pre);
                        let dpre = dscore * self.attn[base + d] * LEAKY.derivative(pre);
                        grad_u[j][base + d] += dpre;
                        grad_v[i][base + d] += dpre;
                    }
                }
            }
        }

        let mut grad_x = vec![vec![0.0; self.in_dim]; n];
        for i in 0..n {
            let gl = self
                .w_l
                .backward(&cache.x[i], &grad_u[i], &mut grads.w_l_w, &mut grads.w_l_b);
            let gr = self
                .w_r
                .backward(&cache.x[i], &grad_v[i], &mut grads.w_r_w, &mut grads.w_r_b);
            for d in 0..self.in_dim {
                grad_x[i][d] = gl[d] + gr[d];
            }
        }
        grad_x
    }
}

/// 3-layer graph-attention classifier with mean-pool readout.
#[derive(Debug, Clone)]
pub struct GraphClassifier {
    pub layers: Vec<GatLayer>,
    pub head: Linear,
    pub spatial: bool,
    pub n_classes: usize,
}

pub struct ClassifierCache {
    gat: Vec<GatCache>,
    /// Pre-ELU outputs of each attention layer.
    pre: Vec<Vec<Vec<f64>>>,
    pooled: Vec<f64>,
    n_nodes: usize,
}

impl GraphClassifier {
    /// `k`-way classifier over windows; feature width follows `spatial`.
    pub fn init(
        n_classes: usize,
        spatial: bool,
        hidden: usize,
        heads: usize,
        k: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_dim = if spatial { n_classes + 3 } else { n_classes };
        let layers = vec![
            GatLayer::init(in_dim, hidden, heads, &mut rng),
            GatLayer::init(hidden, hidden, heads, &mut rng),
            GatLayer::init(hidden, hidden, heads, &mut rng),
        ];
        let head = Linear::init(hidden, k, &mut rng);
        Self {
            layers,
            head,
            spatial,
            n_classes,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn k(&self) -> usize {
        self.head.out_dim
    }

    pub fn forward(
        &self,
        features: &[Vec<f64>],
        neighbors: &[Vec<usize>],
        mut cache: Option<&mut ClassifierCache>,
    ) -> Result<Vec<f64>, DownstreamError> {
        if features.is_empty() {
            return Err(DownstreamError::DimensionMismatch {
                expected: self.in_dim(),
                found: 0,
            });
        }
        if features[0].len() != self.in_dim() {
            return Err(DownstreamError::DimensionMismatch {
                expected: self.in_dim(),
                found: features[0].len(),
            });
        }
        let mut h = features.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let out = match cache.as_deref_mut() {
                Some(c) => {
                    let g = &mut c.gat[li];
                    let out = layer.forward(&h, neighbors, Some(g));
                    c.pre[li] = out.clone();
                    out
                }
                None => layer.forward(&h, neighbors, None),
            };
            h = out;
            for row in h.iter_mut() {
                for v in row.iter_mut() {
                    *v = ELU.apply(*v);
                }
            }
        }
        let width = self.layers.last().unwrap().out_dim();
        let mut pooled = vec![0.0; width];
        for row in &h {
            for (p, &v) in pooled.iter_mut().zip(row) {
                *p += v;
            }
        }
        let n = h.len() as f64;
        for p in pooled.iter_mut() {
            *p /= n;
        }
        let mut logits = Vec::new();
        self.head.forward(&pooled, &mut logits);
        if let Some(c) = cache {
            c.pooled = pooled;
            c.n_nodes = features.len();
        }
        Ok(logits)
    }

    pub fn new_cache(&self) -> ClassifierCache {
        ClassifierCache {
            gat: (0..self.layers.len())
                .map(|_| GatCache {
                    x: Vec::new(),
                    u: Vec::new(),
                    v: Vec::new(),
                    alphas: Vec::new(),
                })
                .collect(),
            pre: vec![Vec::new(); self.layers.len()],
            pooled: Vec::new(),
            n_nodes: 0,
        }
    }

    /// Backward pass from the logit gradient; accumulates into `grads`.
    pub fn backward(
        &self,
        cache: &ClassifierCache,
        neighbors: &[Vec<usize>],
        grad_logits: &[f64],
        grads: &mut ClassifierGrads,
    ) {
        let grad_pooled =
            self.head
                .backward(&cache.pooled, grad_logits, &mut grads.head_w, &mut grads.head_b);
        let n = cache.n_nodes;
        let mut grad_h: Vec<Vec<f64>> = (0..n)
            .map(|_| grad_pooled.iter().map(|g| g / n as f64).collect::<Vec<f64>>())
            .collect();
        for li in (0..self.layers.len()).rev() {
            // Through the ELU.
            for (row, pre_row) in grad_h.iter_mut().zip(&cache.pre[li]) {
                for (g, &z) in row.iter_mut().zip(pre_row) {
                    *g *= ELU.derivative(z);
                }
            }
            grad_h = self.layers[li].backward(&cache.gat[li], neighbors, &grad_h, &mut grads.gat[li]);
        }
    }

    pub fn zero_grads(&self) -> ClassifierGrads {
        ClassifierGrads {
            gat: self.layers.iter().map(GatLayer::zero_grads).collect(),
            head_w: vec![0.0; self.head.weight.len()],
            head_b: vec![0.0; self.head.bias.len()],
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.w_l.weight);
            out.extend_from_slice(&l.w_l.bias);
            out.extend_from_slice(&l.w_r.weight);
            out.extend_from_slice(&l.w_r.bias);
            out.extend_from_slice(&l.attn);
            out.extend_from_slice(&l.bias);
        }
        out.extend_from_slice(&self.head.weight);
        out.extend_from_slice(&self.head.bias);
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        let mut take = |dst: &mut Vec<f64>| {
            let len = dst.len();
            dst.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        };
        for l in &mut self.layers {
            take(&mut l.w_l.weight);
            take(&mut l.w_l.bias);
            take(&mut l.w_r.weight);
            take(&mut l.w_r.bias);
            take(&mut l.attn);
            take(&mut l.bias);
        }
        take(&mut self.head.weight);
        take(&mut self.head.bias);
        assert_eq!(offset, flat.len());
    }

    pub fn grads_flat(grads: &ClassifierGrads) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &grads.gat {
            out.extend_from_slice(&g.w_l_w);
            out.extend_from_slice(&g.w_l_b);
            out.extend_from_slice(&g.w_r_w);
            out.extend_from_slice(&g.w_r_b);
            out.extend_from_slice(&g.attn);
            out.extend_from_slice(&g.bias);
        }
        out.extend_from_slice(&grads.head_w);
        out.extend_from_slice(&grads.head_b);
        out
    }

    pub fn to_checkpoint(&self, ontology: &Ontology, mut config: serde_json::Value) -> Checkpoint {
        config["n_classes"] = self.n_classes.into();
        config["spatial"] = self.spatial.into();
        config["hidden"] = self.layers[0].out_dim().into();
        config["heads"] = self.layers[0].heads.into();
        config["k"] = self.k().into();
        let mut ck = Checkpoint::new("graph-classifier", ontology.fingerprint(), config);
        ck.shapes = vec![vec![
            self.in_dim(),
            self.layers[0].out_dim(),
            self.layers.len(),
            self.k(),
        ]];
        ck.params = vec![self.params_flat()];
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let get = |key: &str| -> Result<u64, CheckpointError> {
            ck.config[key]
                .as_u64()
                .ok_or_else(|| CheckpointError::Format(format!("missing {key}")))
        };
        let n_classes = get("n_classes")? as usize;
        let spatial = ck.config["spatial"].as_bool().unwrap_or(true);
        let hidden = get("hidden")? as usize;
        let heads = get("heads")? as usize;
        let k = get("k")? as usize;
        let mut model = Self::init(n_classes, spatial, hidden, heads, k, 0);
        if ck.params.len() != 1 {
            return Err(CheckpointError::Format("expected 1 parameter group".into()));
        }
        model.set_params_flat(&ck.params[0]);
        Ok(model)
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierGrads {
    gat: Vec<GatGrads>,
    head_w: Vec<f64>,
    head_b: Vec<f64>,
}

/// Symmetric adjacency with self-loops from a window's edges.
pub fn adjacency(graph: &DynamicSceneGraph) -> Vec<Vec<usize>> {
    let n = graph.nodes.len();
    let mut sets: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    for &(a, b, _) in &graph.intra_edges {
        sets[a].insert(b);
        sets[b].insert(a);
    }
    for &(a, b) in &graph.temporal_edges {
        sets[a].insert(b);
        sets[b].insert(a);
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Class probabilities for one window; deterministic in eval mode.
pub fn classify(model: &GraphClassifier, graph: &DynamicSceneGraph) -> Result<Vec<f64>, DownstreamError> {
    let features = encode_features(graph, model.spatial, model.n_classes);
    let neighbors = adjacency(graph);
    let logits = model.forward(&features, &neighbors, None)?;
    Ok(softmax(&logits))
}

/// Downstream task selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Phase,
    Technique,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task: Task,
    pub window: WindowConfig,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: usize,
    pub attention_heads: usize,
    /// Frames between consecutive training window ends.
    pub train_stride: usize,
    /// Frames between consecutive evaluation window ends.
    pub eval_stride: usize,
    pub batch: usize,
    /// Phase whose windows carry the technique signal; resolved to
    /// "Nucleus Breaking" when absent.
    pub technique_phase: Option<PhaseId>,
}

impl TaskConfig {
    pub fn new(task: Task, window: WindowConfig) -> Self {
        Self {
            task,
            window,
            epochs: 12,
            lr: 3e-3,
            seed: 0,
            hidden: 64,
            attention_heads: 4,
            train_stride: 5,
            eval_stride: 5,
            batch: 8,
            technique_phase: None,
        }
    }

    fn k(&self, ontology: &Ontology) -> usize {
        match self.task {
            Task::Phase => ontology.phases().len(),
            Task::Technique => ontology.techniques().len(),
        }
    }

    fn resolve_technique_phase(&self, ontology: &Ontology) -> Option<PhaseId> {
        self.technique_phase
            .or_else(|| ontology.phase_by_name("Nucleus Breaking"))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TaskTrainLog {
    pub loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

struct Sample {
    features: Vec<Vec<f64>>,
    neighbors: Vec<Vec<usize>>,
    label: usize,
    video: usize,
}

fn collect_samples(
    videos: &[&VideoRecord],
    cfg: &TaskConfig,
    stride: usize,
    ontology: &Ontology,
) -> Result<Vec<Sample>, DownstreamError> {
    let technique_phase = cfg.resolve_technique_phase(ontology);
    let mut samples = Vec::new();
    for (vi, video) in videos.iter().enumerate() {
        let mut t = 0;
        while t < video.frames.len() {
            let keep = match cfg.task {
                Task::Phase => true,
                Task::Technique => Some(video.frames[t].phase) == technique_phase,
            };
            if keep {
                let graph = build_window(video, t, &cfg.window)?;
                let label = match cfg.task {
                    Task::Phase => graph.phase.0 as usize,
                    Task::Technique => graph.technique.0 as usize,
                };
                samples.push(Sample {
                    features: encode_features(&graph, cfg.window.spatial, ontology.num_classes()),
                    neighbors: adjacency(&graph),
                    label,
                    video: vi,
                });
            }
            t += stride.max(1);
        }
    }
    Ok(samples)
}

fn accuracy_on(model: &GraphClassifier, samples: &[Sample]) -> Result<f64, DownstreamError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for s in samples {
        let logits = model.forward(&s.features, &s.neighbors, None)?;
        let pred = argmax(&logits);
        if pred == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Train a classifier with cross-entropy and Adam; deterministic per seed.
/// The train/validation split must be by video; overlapping ids are
/// rejected before any training step.
pub fn train_task(
    train_videos: &[&VideoRecord],
    val_videos: &[&VideoRecord],
    cfg: &TaskConfig,
    ontology: &Ontology,
) -> Result<(GraphClassifier, TaskTrainLog), DownstreamError> {
    if train_videos.is_empty() {
        return Err(DownstreamError::EmptySplit("train"));
    }
    if val_videos.is_empty() {
        return Err(DownstreamError::EmptySplit("validation"));
    }
    let train_ids: BTreeSet<&str> = train_videos.iter().map(|v| v.video_id.as_str()).collect();
    for v in val_videos {
        if train_ids.contains(v.video_id.as_str()) {
            return Err(DownstreamError::SplitOverlap(v.video_id.clone()));
        }
    }

    let k = cfg.k(ontology);
    let samples = collect_samples(train_videos, cfg, cfg.train_stride, ontology)?;
    if samples.is_empty() {
        return Err(DownstreamError::EmptySplit("train (no qualifying windows)"));
    }
    let val_samples = collect_samples(val_videos, cfg, cfg.eval_stride, ontology)?;

    let mut model = GraphClassifier::init(
        ontology.num_classes(),
        cfg.window.spatial,
        cfg.hidden,
        cfg.attention_heads,
        k,
        cfg.seed,
    );
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9a9a);

    let mut log = TaskTrainLog::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch.max(1)) {
            let mut grads = model.zero_grads();
            let mut batch_loss = 0.0;
            for &si in batch {
                let s = &samples[si];
                let mut cache = model.new_cache();
                let logits = model.forward(&s.features, &s.neighbors, Some(&mut cache))?;
                let (loss, mut grad) = cross_entropy_with_logits(&logits, s.label);
                batch_loss += loss;
                for g in grad.iter_mut() {
                    *g /= batch.len() as f64;
                }
                model.backward(&cache, &s.neighbors, &grad, &mut grads);
            }
            let mut params = model.params_flat();
            adam.step(&mut params, &GraphClassifier::grads_flat(&grads));
            model.set_params_flat(&params);
            epoch_loss += batch_loss;
            seen += batch.len();
        }
        let mean_loss = epoch_loss / seen.max(1) as f64;
        if !mean_loss.is_finite() {
            return Err(DownstreamError::NonFiniteLoss(epoch));
        }
        log.loss.push(mean_loss);
        log.train_accuracy.push(accuracy_on(&model, &samples)?);
        log.val_accuracy.push(accuracy_on(&model, &val_samples)?);
    }
    Ok((model, log))
}

/// Window-level report plus, for the technique task, the per-video
/// majority-vote report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskEvaluation {
    pub window_report: EvalReport,
    pub video_report: Option<EvalReport>,
}

/// Evaluate a trained classifier on held-out videos.
pub fn evaluate_task(
    model: &GraphClassifier,
    videos: &[&VideoRecord],
    cfg: &TaskConfig,
    ontology: &Ontology,
) -> Result<TaskEvaluation, DownstreamError> {
    let samples = collect_samples(videos, cfg, cfg.eval_stride, ontology)?;
    if samples.is_empty() {
        return Err(DownstreamError::EmptySplit("evaluation"));
    }
    let k = cfg.k(ontology);
    let mut preds = Vec::with_capacity(samples.len());
    let mut gts = Vec::with_capacity(samples.len());
    for s in &samples {
        let logits = model.forward(&s.features, &s.neighbors, None)?;
        preds.push(argmax(&logits));
        gts.push(s.label);
    }
    let window_report = evaluate_classification(&preds, &gts, k)?;

    let video_report = if cfg.task == Task::Technique {
        // Majority vote over each video's qualifying windows.
        let mut votes: Vec<Vec<usize>> = vec![vec![0; k]; videos.len()];
        let mut labels: Vec<Option<usize>> = vec![None; videos.len()];
        for (s, &p) in samples.iter().zip(&preds) {
            votes[s.video][p] += 1;
            labels[s.video] = Some(s.label);
        }
        let mut vp = Vec::new();
        let mut vg = Vec::new();
        for (vote, label) in votes.iter().zip(&labels) {
            if let Some(label) = label {
                vp.push(argmax(&vote.iter().map(|&c| c as f64).collect::<Vec<_>>()));
                vg.push(*label);
            }
        }
        Some(evaluate_classification(&vp, &vg, k)?)
    } else {
        None
    };
    Ok(TaskEvaluation {
        window_report,
        video_report,
    })
}
