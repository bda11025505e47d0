//! Semantic relation prediction from query-embedding pairs.
//!
//! Pair proposals concatenate the query vectors of a tool subject and a
//! tool-or-anatomy object. A 2-layer existence head gates a 3-layer
//! multi-label classification head; both use sigmoid outputs, binary
//! cross-entropy training, and a 0.5 decision threshold by default. The
//! base variant reads the last frame of each 8-frame chunk; the `+` variant
//! max-pools same-class queries across the chunk first.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::geometry::infer_close_to;
use crate::nn::{bce_with_logit, sigmoid, Activation, Mlp, SgdMomentum};
use crate::ontology::{ClassId, Ontology, PredicateId};
use crate::scenegraph::{FrameSceneGraph, RelationInstance, VideoRecord};
use crate::synthdata::{QueryProvider, SynthError};

#[derive(Debug, Error)]
pub enum RelNetError {
    #[error("embedding dim mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("inconsistent query dims within a chunk")]
    InconsistentDim,
    #[error("video {0} has no chunk ending in a semantic relation")]
    NoQualifyingChunk(String),
    #[error("non-finite loss at epoch {epoch}: existence {existence}, classification {classification}")]
    NonFiniteLoss {
        epoch: usize,
        existence: f64,
        classification: f64,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Provider(#[from] SynthError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Prediction variant: last-frame queries or chunk-pooled queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    CatSgg,
    CatSggPlus,
}

/// A candidate (tool, tool-or-anatomy) pair with its concatenated embedding.
#[derive(Debug, Clone)]
pub struct PairProposal {
    pub subject_class: ClassId,
    pub object_class: ClassId,
    pub embedding: Vec<f64>,
}

/// Gated prediction for one proposal. `labels` is empty whenever the
/// existence gate stays closed; the classifier is not even evaluated then.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPrediction {
    pub subject_class: ClassId,
    pub object_class: ClassId,
    pub existence: f64,
    pub labels: Vec<PredicateId>,
}

/// Existence gate and multi-label classifier over pair embeddings.
#[derive(Debug, Clone)]
pub struct RelHeads {
    pub existence: Mlp,
    pub classification: Mlp,
    pub tau_e: f64,
    pub tau_c: f64,
    /// Classification output slot k maps to `semantic[k]`.
    pub semantic: Vec<PredicateId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelTrainConfig {
    pub chunks_per_video: usize,
    pub chunk_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Hidden width of the 2-layer existence head.
    pub hidden_existence: usize,
    /// Hidden widths of the 3-layer classification head.
    pub hidden_classification: (usize, usize),
}

impl Default for RelTrainConfig {
    fn default() -> Self {
        Self {
            chunks_per_video: 18,
            chunk_size: 8,
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 40,
            seed: 0,
            variant: Variant::CatSgg,
            hidden_existence: 512,
            hidden_classification: (512, 256),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub existence_loss: Vec<f64>,
    pub classification_loss: Vec<f64>,
    pub warnings: Vec<String>,
}

impl RelHeads {
    /// Fresh heads for query dim `d`, seeded deterministically.
    pub fn init(d: usize, cfg: &RelTrainConfig, ontology: &Ontology, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let semantic = ontology.semantic_predicate_ids();
        let existence = Mlp::init(&[2 * d, cfg.hidden_existence, 1], Activation::Relu, &mut rng);
        let classification = Mlp::init(
            &[
                2 * d,
                cfg.hidden_classification.0,
                cfg.hidden_classification.1,
                semantic.len(),
            ],
            Activation::Relu,
            &mut rng,
        );
        Self {
            existence,
            classification,
            tau_e: 0.5,
            tau_c: 0.5,
            semantic,
        }
    }

    pub fn pair_dim(&self) -> usize {
        self.existence.in_dim()
    }

    pub fn to_checkpoint(&self, ontology: &Ontology, config: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new("relnet", ontology.fingerprint(), config);
        ck.shapes = vec![
            self.existence.layers.iter().map(|l| l.in_dim).collect(),
            self.classification.layers.iter().map(|l| l.in_dim).collect(),
        ];
        ck.params = vec![
            self.existence.params_flat(),
            self.classification.params_flat(),
        ];
        ck.config["tau_e"] = self.tau_e.into();
        ck.config["tau_c"] = self.tau_c.into();
        ck.config["out_dim"] = self.existence.out_dim().into();
        ck.config["dims_existence"] = serde_json::json!(mlp_dims(&self.existence));
        ck.config["dims_classification"] = serde_json::json!(mlp_dims(&self.classification));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, ontology: &Ontology) -> Result<Self, CheckpointError> {
        let dims_e: Vec<usize> = serde_json::from_value(ck.config["dims_existence"].clone())
            .map_err(|e| CheckpointError::Format(format!("missing dims_existence: {e}")))?;
        let dims_c: Vec<usize> = serde_json::from_value(ck.config["dims_classification"].clone())
            .map_err(|e| CheckpointError::Format(format!("missing dims_classification: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut existence = Mlp::init(&dims_e, Activation::Relu, &mut rng);
        let mut classification = Mlp::init(&dims_c, Activation::Relu, &mut rng);
        if ck.params.len() != 2 {
            return Err(CheckpointError::Format("expected 2 parameter groups".into()));
        }
        existence.set_params_flat(&ck.params[0]);
        classification.set_params_flat(&ck.params[1]);
        Ok(Self {
            existence,
            classification,
            tau_e: ck.config["tau_e"].as_f64().unwrap_or(0.5),
            tau_c: ck.config["tau_c"].as_f64().unwrap_or(0.5),
            semantic: ontology.semantic_predicate_ids(),
        })
    }
}

fn mlp_dims(mlp: &Mlp) -> Vec<usize> {
    let mut dims: Vec<usize> = mlp.layers.iter().map(|l| l.in_dim).collect();
    dims.push(mlp.out_dim());
    dims
}

/// Ordered (tool, tool-or-anatomy) pair proposals over the present classes,
/// sorted by (subject id, object id). For T present tools and A present
/// anatomies the count is exactly T * (T - 1 + A).
pub fn build_pair_proposals(
    queries: &BTreeMap<ClassId, Vec<f64>>,
    ontology: &Ontology,
) -> Vec<PairProposal> {
    let mut proposals = Vec::new();
    for (&sub, q_sub) in queries {
        if !ontology.is_tool(sub).unwrap_or(false) {
            continue;
        }
        for (&obj, q_obj) in queries {
            if obj == sub {
                continue;
            }
            let mut embedding = Vec::with_capacity(q_sub.len() + q_obj.len());
            embedding.extend_from_slice(q_sub);
            embedding.extend_from_slice(q_obj);
            proposals.push(PairProposal {
                subject_class: sub,
                object_class: obj,
                embedding,
            });
        }
    }
    proposals
}

/// Run the gate and (conditionally) the classifier on each proposal.
pub fn predict(heads: &RelHeads, proposals: &[PairProposal]) -> Result<Vec<PairPrediction>, RelNetError> {
    let mut out = Vec::with_capacity(proposals.len());
    for p in proposals {
        if p.embedding.len() != heads.pair_dim() {
            return Err(RelNetError::DimensionMismatch {
                expected: heads.pair_dim(),
                found: p.embedding.len(),
            });
        }
        let e = sigmoid(heads.existence.forward(&p.embedding)[0]);
        let labels = if e >= heads.tau_e {
            heads
                .classification
                .forward(&p.embedding)
                .iter()
                .enumerate()
                .filter(|(_, &z)| sigmoid(z) >= heads.tau_c)
                .map(|(k, _)| heads.semantic[k])
                .collect()
        } else {
            Vec::new()
        };
        out.push(PairPrediction {
            subject_class: p.subject_class,
            object_class: p.object_class,
            existence: e,
            labels,
        });
    }
    Ok(out)
}

/// Element-wise max over each class's query vectors across chunk frames.
pub fn pool_chunk_queries(
    slots: &[BTreeMap<ClassId, Vec<f64>>],
) -> Result<BTreeMap<ClassId, Vec<f64>>, RelNetError> {
    let mut pooled: BTreeMap<ClassId, Vec<f64>> = BTreeMap::new();
    for slot in slots {
        for (&class, q) in slot {
            match pooled.get_mut(&class) {
                None => {
                    pooled.insert(class, q.clone());
                }
                Some(acc) => {
                    if acc.len() != q.len() {
                        return Err(RelNetError::InconsistentDim);
                    }
                    for (a, &v) in acc.iter_mut().zip(q) {
                        if v > *a {
                            *a = v;
                        }
                    }
                }
            }
        }
    }
    Ok(pooled)
}

/// Scene graph generation for frame `t` of a video: semantic relations only.
///
/// The chunk ends at `t` and is left-padded by repeating frame 0 when
/// `t < chunk_size - 1`. Entities are copied from the frame (entity
/// localization is out of scope here).
pub fn infer_frame(
    heads: &RelHeads,
    provider: &dyn QueryProvider,
    video: &VideoRecord,
    t: usize,
    variant: Variant,
    chunk_size: usize,
    ontology: &Ontology,
) -> Result<FrameSceneGraph, RelNetError> {
    let (graph, _) = infer_frame_detailed(heads, provider, video, t, variant, chunk_size, ontology)?;
    Ok(graph)
}

/// Like [`infer_frame`] but also returns the raw gated predictions, so
/// callers can audit gate soundness.
pub fn infer_frame_detailed(
    heads: &RelHeads,
    provider: &dyn QueryProvider,
    video: &VideoRecord,
    t: usize,
    variant: Variant,
    chunk_size: usize,
    ontology: &Ontology,
) -> Result<(FrameSceneGraph, Vec<PairPrediction>), RelNetError> {
    let slots = provider.chunk_queries(video, t, chunk_size)?;
    let queries = match variant {
        Variant::CatSgg => slots.last().cloned().unwrap_or_default(),
        Variant::CatSggPlus => pool_chunk_queries(&slots)?,
    };
    let proposals = build_pair_proposals(&queries, ontology);
    let predictions = predict(heads, &proposals)?;

    let frame = &video.frames[t];
    let class_to_instance: BTreeMap<ClassId, u32> =
        frame.entities.iter().map(|e| (e.class, e.id)).collect();
    let mut relations = Vec::new();
    for p in &predictions {
        let (Some(&sub), Some(&obj)) = (
            class_to_instance.get(&p.subject_class),
            class_to_instance.get(&p.object_class),
        ) else {
            continue;
        };
        for &pred in &p.labels {
            relations.push(RelationInstance { sub, obj, pred });
        }
    }
    let graph = FrameSceneGraph {
        video_id: frame.video_id.clone(),
        frame_idx: frame.frame_idx,
        time_s: frame.time_s,
        phase: frame.phase,
        technique: frame.technique,
        entities: frame.entities.clone(),
        relations,
    };
    Ok((graph, predictions))
}

/// Chunk end indices for training: exactly `chunks_per_video` positions
/// whose final frame carries at least one semantic relation. Sampled without
/// replacement when enough positions qualify, with replacement otherwise.
pub fn sample_training_chunks(
    video: &VideoRecord,
    cfg: &RelTrainConfig,
    rng: &mut ChaCha8Rng,
    ontology: &Ontology,
) -> Result<Vec<usize>, RelNetError> {
    let c = cfg.chunk_size;
    let mut qualifying: Vec<usize> = (c.saturating_sub(1)..video.frames.len())
        .filter(|&t| video.frames[t].semantic_relations(ontology).next().is_some())
        .collect();
    if qualifying.is_empty() {
        return Err(RelNetError::NoQualifyingChunk(video.video_id.clone()));
    }
    let k = cfg.chunks_per_video;
    let picks = if qualifying.len() >= k {
        qualifying.shuffle(rng);
        qualifying.truncate(k);
        qualifying
    } else {
        (0..k)
            .map(|_| qualifying[rng.gen_range(0..qualifying.len())])
            .collect()
    };
    Ok(picks)
}

struct ChunkExample {
    proposals: Vec<PairProposal>,
    existence_targets: Vec<f64>,
    class_targets: Vec<Option<Vec<f64>>>,
}

/// Train both heads with binary cross-entropy and SGD with momentum.
///
/// The existence head sees every proposal; the classification head trains
/// only on relation-bearing pairs. Chunks are sampled once up front (the
/// fixed training subsample), and their order is reshuffled each epoch.
/// Fully deterministic given the config seed.
pub fn train(
    heads: RelHeads,
    provider: &dyn QueryProvider,
    videos: &[&VideoRecord],
    cfg: &RelTrainConfig,
    ontology: &Ontology,
) -> Result<(RelHeads, TrainingLog), RelNetError> {
    if videos.is_empty() {
        return Err(RelNetError::EmptyDataset);
    }
    let mut heads = heads;
    let mut log = TrainingLog::default();
    let close_to = ontology.close_to_id();
    let n_semantic = heads.semantic.len();

    // Materialize the training examples.
    let mut examples: Vec<ChunkExample> = Vec::new();
    for (vi, video) in videos.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x5eed ^ (vi as u64) << 17));
        let ends = match sample_training_chunks(video, cfg, &mut rng, ontology) {
            Ok(ends) => ends,
            Err(RelNetError::NoQualifyingChunk(id)) => {
                log.warnings.push(format!("skipping video {id}: no qualifying chunk"));
                continue;
            }
            Err(other) => return Err(other),
        };
        for end in ends {
            let slots = provider.chunk_queries(video, end, cfg.chunk_size)?;
            let queries = match cfg.variant {
                Variant::CatSgg => slots.last().cloned().unwrap_or_default(),
                Variant::CatSggPlus => pool_chunk_queries(&slots)?,
            };
            let proposals = build_pair_proposals(&queries, ontology);

            let frame = &video.frames[end];
            let class_of: BTreeMap<u32, ClassId> =
                frame.entities.iter().map(|e| (e.id, e.class)).collect();
            let mut gt: BTreeMap<(ClassId, ClassId), Vec<f64>> = BTreeMap::new();
            for r in &frame.relations {
                if r.pred == close_to {
                    continue;
                }
                let (Some(&sc), Some(&oc)) = (class_of.get(&r.sub), class_of.get(&r.obj)) else {
                    continue;
                };
                let slot = heads.semantic.iter().position(|p| *p == r.pred);
                if let Some(slot) = slot {
                    gt.entry((sc, oc)).or_insert_with(|| vec![0.0; n_semantic])[slot] = 1.0;
                }
            }

            let mut existence_targets = Vec::with_capacity(proposals.len());
            let mut class_targets = Vec::with_capacity(proposals.len());
            for p in &proposals {
                let key = (p.subject_class, p.object_class);
                match gt.get(&key) {
                    Some(targets) => {
                        existence_targets.push(1.0);
                        class_targets.push(Some(targets.clone()));
                    }
                    None => {
                        existence_targets.push(0.0);
                        class_targets.push(None);
                    }
                }
            }
            examples.push(ChunkExample {
                proposals,
                existence_targets,
                class_targets,
            });
        }
    }
    if examples.is_empty() {
        return Err(RelNetError::EmptyDataset);
    }

    let mut opt_e = SgdMomentum::new(cfg.learning_rate, cfg.momentum);
    let mut opt_c = SgdMomentum::new(cfg.learning_rate, cfg.momentum);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0e70c5);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut epoch_rng);
        let mut sum_e = 0.0;
        let mut n_e = 0usize;
        let mut sum_c = 0.0;
        let mut n_c = 0usize;

        for &i in &order {
            let ex = &examples[i];
            if ex.proposals.is_empty() {
                continue;
            }
            let mut grads_e = heads.existence.zero_grads();
            let mut grads_c = heads.classification.zero_grads();
            let mut cache = Mlp::new_cache();
            let mut chunk_e = 0.0;
            let mut chunk_c = 0.0;
            let mut chunk_c_count = 0usize;

            for (p, (&t_e, t_c)) in ex
                .proposals
                .iter()
                .zip(ex.existence_targets.iter().zip(&ex.class_targets))
            {
                let logits = heads.existence.forward_cached(&p.embedding, &mut cache);
                let (loss, grad) = bce_with_logit(logits[0], t_e);
                chunk_e += loss;
                let scale = grad / ex.proposals.len() as f64;
                heads.existence.backward(&cache, &[scale], &mut grads_e);

                if let Some(targets) = t_c {
                    let logits = heads.classification.forward_cached(&p.embedding, &mut cache);
                    let mut grad_vec = vec![0.0; logits.len()];
                    for (k, (&z, &t)) in logits.iter().zip(targets).enumerate() {
                        let (loss, grad) = bce_with_logit(z, t);
                        chunk_c += loss;
                        grad_vec[k] = grad;
                    }
                    heads.classification.backward(&cache, &grad_vec, &mut grads_c);
                    chunk_c_count += 1;
                }
            }

            let mut params = heads.existence.params_flat();
            opt_e.step(&mut params, &Mlp::grads_flat(&grads_e));
            heads.existence.set_params_flat(&params);
            if chunk_c_count > 0 {
                // Mean over pairs and over the 7 per-predicate outputs.
                let mut flat = Mlp::grads_flat(&grads_c);
                let scale = 1.0 / (chunk_c_count * n_semantic) as f64;
                for g in flat.iter_mut() {
                    *g *= scale;
                }
                let mut params = heads.classification.params_flat();
                opt_c.step(&mut params, &flat);
                heads.classification.set_params_flat(&params);
            }

            sum_e += chunk_e / ex.proposals.len() as f64;
            n_e += 1;
            if chunk_c_count > 0 {
                sum_c += chunk_c / (chunk_c_count * n_semantic) as f64;
                n_c += 1;
            }
        }

        let mean_e = sum_e / n_e.max(1) as f64;
        let mean_c = sum_c / n_c.max(1) as f64;
        if !mean_e.is_finite() || !mean_c.is_finite() {
            return Err(RelNetError::NonFiniteLoss {
                epoch,
                existence: mean_e,
                classification: mean_c,
            });
        }
        log.existence_loss.push(mean_e);
        log.classification_loss.push(mean_c);
    }

    Ok((heads, log))
}

/// Statistics of a full-video prediction run, including the gate audit.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PipelineStats {
    pub frames: usize,
    pub proposals: u64,
    pub open_gates: u64,
    /// Predictions carrying labels despite a closed gate. Zero by
    /// construction; the eval pipeline asserts it stays zero.
    pub gate_violations: u64,
}

/// Predict full scene graphs for every frame of a video: semantic relations
/// from the heads plus geometric close_to from mask adjacency.
pub fn predict_video_graphs(
    heads: &RelHeads,
    provider: &dyn QueryProvider,
    video: &VideoRecord,
    variant: Variant,
    chunk_size: usize,
    close_gap: u32,
    ontology: &Ontology,
) -> Result<(Vec<FrameSceneGraph>, PipelineStats), RelNetError> {
    let mut stats = PipelineStats::default();
    let mut graphs = Vec::with_capacity(video.frames.len());
    for t in 0..video.frames.len() {
        let (mut graph, predictions) =
            infer_frame_detailed(heads, provider, video, t, variant, chunk_size, ontology)?;
        stats.frames += 1;
        stats.proposals += predictions.len() as u64;
        for p in &predictions {
            if p.existence >= heads.tau_e {
                stats.open_gates += 1;
            } else if !p.labels.is_empty() {
                stats.gate_violations += 1;
            }
        }
        let close = infer_close_to(&video.frames[t], close_gap, ontology.close_to_id())
            .map_err(|e| SynthError::Config(format!("close_to inference failed: {e}")))?;
        graph.relations.extend(close);
        graphs.push(graph);
    }
    Ok((graphs, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, SimConfig, SyntheticQueryProvider};

    fn queries_for(classes: &[(u16, Vec<f64>)]) -> BTreeMap<ClassId, Vec<f64>> {
        classes
            .iter()
            .map(|(id, q)| (ClassId(*id), q.clone()))
            .collect()
    }

    #[test]
    fn proposal_count_formula() {
        let ont = Ontology::shipped_default();
        // Two tools (11, 12) and two anatomies (0, 6) present.
        let queries = queries_for(&[
            (11, vec![1.0, 0.0]),
            (12, vec![0.0, 1.0]),
            (0, vec![0.5, 0.5]),
            (6, vec![0.2, 0.8]),
        ]);
        let proposals = build_pair_proposals(&queries, &ont);
        assert_eq!(proposals.len(), 2 * (2 - 1 + 2));
        // Anatomy never appears as subject.
        assert!(proposals
            .iter()
            .all(|p| ont.is_tool(p.subject_class).unwrap()));
        // Deterministic order, sorted by (subject, object).
        let order: Vec<_> = proposals
            .iter()
            .map(|p| (p.subject_class, p.object_class))
            .collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);

        // No tools present: empty.
        let anatomy_only = queries_for(&[(0, vec![1.0]), (6, vec![2.0])]);
        assert!(build_pair_proposals(&anatomy_only, &ont).is_empty());
    }

    #[test]
    fn proposals_match_brute_force_filter() {
        let ont = Ontology::shipped_default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n_present = rng.gen_range(0..8);
            let mut present = std::collections::BTreeSet::new();
            for _ in 0..n_present {
                present.insert(ClassId(rng.gen_range(0..29)));
            }
            let queries: BTreeMap<ClassId, Vec<f64>> = present
                .iter()
                .map(|&c| (c, vec![rng.gen::<f64>(), rng.gen::<f64>()]))
                .collect();
            let got: Vec<_> = build_pair_proposals(&queries, &ont)
                .iter()
                .map(|p| (p.subject_class, p.object_class))
                .collect();
            let mut expected = Vec::new();
            for &i in &present {
                for &j in &present {
                    if i != j && ont.is_tool(i).unwrap() {
                        expected.push((i, j));
                    }
                }
            }
            expected.sort();
            assert_eq!(got, expected);
            let t = present.iter().filter(|c| ont.is_tool(**c).unwrap()).count();
            let a = present.len() - t;
            assert_eq!(got.len(), t * (t.saturating_sub(1) + a));
        }
    }

    #[test]
    fn pooling_is_elementwise_max() {
        let a = queries_for(&[(11, vec![1.0, 4.0])]);
        let b = queries_for(&[(11, vec![3.0, 2.0])]);
        let pooled = pool_chunk_queries(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(pooled[&ClassId(11)], vec![3.0, 4.0]);
        // Class present in one frame only passes through unchanged.
        let c = queries_for(&[(12, vec![7.0, 8.0])]);
        let pooled = pool_chunk_queries(&[a.clone(), c]).unwrap();
        assert_eq!(pooled[&ClassId(12)], vec![7.0, 8.0]);
        // Frame order does not matter.
        assert_eq!(
            pool_chunk_queries(&[a.clone(), b.clone()]).unwrap(),
            pool_chunk_queries(&[b, a]).unwrap()
        );
    }

    #[test]
    fn pooling_rejects_inconsistent_dims() {
        let a = queries_for(&[(11, vec![1.0, 4.0])]);
        let b = queries_for(&[(11, vec![3.0])]);
        assert!(matches!(
            pool_chunk_queries(&[a, b]),
            Err(RelNetError::InconsistentDim)
        ));
    }

    #[test]
    fn gate_closed_means_no_labels() {
        let ont = Ontology::shipped_default();
        let cfg = RelTrainConfig {
            hidden_existence: 8,
            hidden_classification: (8, 8),
            ..Default::default()
        };
        let mut heads = RelHeads::init(4, &cfg, &ont, 1);
        // Force the gate shut: zero weights, very negative bias.
        for l in heads.existence.layers.iter_mut() {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = -10.0);
        }
        // Force the classifier wide open; labels must still stay empty.
        for l in heads.classification.layers.iter_mut() {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 10.0);
        }
        let queries = queries_for(&[(11, vec![1.0; 4]), (0, vec![0.5; 4])]);
        let proposals = build_pair_proposals(&queries, &ont);
        let preds = predict(&heads, &proposals).unwrap();
        assert!(!preds.is_empty());
        for p in &preds {
            assert!(p.existence < 0.5);
            assert!(p.labels.is_empty());
        }
    }

    #[test]
    fn open_gate_thresholds_each_label() {
        let ont = Ontology::shipped_default();
        let cfg = RelTrainConfig {
            hidden_existence: 8,
            hidden_classification: (8, 8),
            ..Default::default()
        };
        let mut heads = RelHeads::init(4, &cfg, &ont, 1);
        for l in heads.existence.layers.iter_mut() {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 10.0);
        }
        // Zero all classification params, then pick biases so exactly
        // Holding (slot 0) and Retracting (slot 6) clear the threshold.
        for l in heads.classification.layers.iter_mut() {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let last = heads.classification.layers.last_mut().unwrap();
        last.bias = vec![2.0, -2.0, -2.0, -2.0, -2.0, -2.0, 2.0];
        let queries = queries_for(&[(11, vec![1.0; 4]), (0, vec![0.5; 4])]);
        let proposals = build_pair_proposals(&queries, &ont);
        let preds = predict(&heads, &proposals).unwrap();
        for p in &preds {
            assert!(p.existence > 0.5);
            assert_eq!(p.labels, vec![PredicateId(0), PredicateId(6)]);
        }
    }

    #[test]
    fn prediction_invariant_to_proposal_order() {
        let ont = Ontology::shipped_default();
        let cfg = RelTrainConfig {
            hidden_existence: 16,
            hidden_classification: (16, 8),
            ..Default::default()
        };
        let heads = RelHeads::init(4, &cfg, &ont, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let queries = queries_for(&[
            (11, (0..4).map(|_| rng.gen()).collect()),
            (12, (0..4).map(|_| rng.gen()).collect()),
            (0, (0..4).map(|_| rng.gen()).collect()),
        ]);
        let mut proposals = build_pair_proposals(&queries, &ont);
        let forward = predict(&heads, &proposals).unwrap();
        proposals.reverse();
        let mut reversed = predict(&heads, &proposals).unwrap();
        reversed.reverse();
        assert_eq!(forward, reversed);
    }

    #[test]
    fn chunk_sampling_respects_constraints() {
        let ont = Ontology::shipped_default();
        let cfg = SimConfig {
            n_videos: 1,
            duration_s: (60, 60),
            ..SimConfig::with_seed(5)
        };
        let videos = generate(&cfg, &ont).unwrap();
        let tcfg = RelTrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ends = sample_training_chunks(&videos[0], &tcfg, &mut rng, &ont).unwrap();
        assert_eq!(ends.len(), 18);
        for &end in &ends {
            assert!(end >= 7);
            assert!(videos[0].frames[end].semantic_relations(&ont).next().is_some());
        }
        // Same seed, same sample.
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            ends,
            sample_training_chunks(&videos[0], &tcfg, &mut rng2, &ont).unwrap()
        );
    }

    #[test]
    fn chunk_sampling_with_replacement_and_empty() {
        let ont = Ontology::shipped_default();
        let cfg = SimConfig {
            n_videos: 1,
            duration_s: (60, 60),
            ..SimConfig::with_seed(5)
        };
        let mut videos = generate(&cfg, &ont).unwrap();
        let close = ont.close_to_id();
        // Strip semantic relations from all but one frame.
        let keep = 200;
        for (i, f) in videos[0].frames.iter_mut().enumerate() {
            if i != keep {
                f.relations.retain(|r| r.pred == close);
            } else {
                f.relations.push(RelationInstance {
                    sub: 13,
                    obj: 0,
                    pred: PredicateId(1),
                });
            }
        }
        let tcfg = RelTrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ends = sample_training_chunks(&videos[0], &tcfg, &mut rng, &ont).unwrap();
        assert_eq!(ends, vec![keep; 18]);

        for f in videos[0].frames.iter_mut() {
            f.relations.retain(|r| r.pred == close);
        }
        assert!(matches!(
            sample_training_chunks(&videos[0], &tcfg, &mut rng, &ont),
            Err(RelNetError::NoQualifyingChunk(_))
        ));
    }

    #[test]
    fn zero_epochs_leaves_heads_unchanged() {
        let ont = Ontology::shipped_default();
        let cfg = SimConfig {
            n_videos: 1,
            duration_s: (60, 60),
            noise_sigma: 0.0,
            ..SimConfig::with_seed(5)
        };
        let videos = generate(&cfg, &ont).unwrap();
        let provider = SyntheticQueryProvider::new(&cfg, &ont).unwrap();
        let tcfg = RelTrainConfig {
            epochs: 0,
            hidden_existence: 16,
            hidden_classification: (16, 8),
            ..Default::default()
        };
        let heads = RelHeads::init(cfg.embed_dim, &tcfg, &ont, 7);
        let before = (
            heads.existence.params_flat(),
            heads.classification.params_flat(),
        );
        let refs: Vec<&VideoRecord> = videos.iter().collect();
        let (after, log) = train(heads, &provider, &refs, &tcfg, &ont).unwrap();
        assert!(log.existence_loss.is_empty());
        assert_eq!(after.existence.params_flat(), before.0);
        assert_eq!(after.classification.params_flat(), before.1);
    }

    #[test]
    fn training_is_deterministic() {
        let ont = Ontology::shipped_default();
        let cfg = SimConfig {
            n_videos: 2,
            duration_s: (60, 70),
            ..SimConfig::with_seed(11)
        };
        let videos = generate(&cfg, &ont).unwrap();
        let provider = SyntheticQueryProvider::new(&cfg, &ont).unwrap();
        let tcfg = RelTrainConfig {
            epochs: 3,
            hidden_existence: 32,
            hidden_classification: (32, 16),
            ..Default::default()
        };
        let refs: Vec<&VideoRecord> = videos.iter().collect();
        let run = || {
            let heads = RelHeads::init(cfg.embed_dim, &tcfg, &ont, 7);
            train(heads, &provider, &refs, &tcfg, &ont).unwrap()
        };
        let (h1, l1) = run();
        let (h2, l2) = run();
        assert_eq!(l1.existence_loss, l2.existence_loss);
        assert_eq!(l1.classification_loss, l2.classification_loss);
        assert_eq!(h1.existence.params_flat(), h2.existence.params_flat());
    }

    #[test]
    fn checkpoint_round_trip() {
        let ont = Ontology::shipped_default();
        let cfg = RelTrainConfig {
            hidden_existence: 16,
            hidden_classification: (16, 8),
            ..Default::default()
        };
        let heads = RelHeads::init(8, &cfg, &ont, 21);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("heads.json");
        heads
            .to_checkpoint(&ont, serde_json::json!({}))
            .save(&path)
            .unwrap();
        let ck = Checkpoint::load(&path, "relnet", ont.fingerprint()).unwrap();
        let back = RelHeads::from_checkpoint(&ck, &ont).unwrap();
        assert_eq!(back.existence.params_flat(), heads.existence.params_flat());
        assert_eq!(
            back.classification.params_flat(),
            heads.classification.params_flat()
        );
    }
}
