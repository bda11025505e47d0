//! Seeded procedural simulator producing CAT-SG-shaped datasets.
//!
//! Videos follow a 19-phase grammar in order. Each phase activates a small
//! tool set, emits episodic semantic relations, and every tool announces
//! itself with an Inserting episode on entry and a Retracting episode on
//! exit. Entity positions follow mean-reverting random walks, masks are
//! rasterized ellipses, and `close_to` ground truth comes from mask
//! adjacency, so predicted geometric relations are exactly recoverable.
//!
//! Two properties are designed in deliberately:
//!
//! * three phase pairs share identical instantaneous tool sets and emission
//!   parameters, so single-frame classifiers cannot separate them while a
//!   temporal window can;
//! * the two nucleus-breaking technique programs differ in their Cutting
//!   burst structure (few long grooves vs. many short ones) and in tool
//!   trajectories (central hold vs. quadrant orbit), so technique labels are
//!   recoverable from sequences and, more strongly, from spatial features.
//!
//! Query embeddings lay out class one-hot, grounding, and the entity's
//! active ground-truth predicates as subject and object, then add Gaussian
//! noise everywhere. At zero noise the relation labels of a pair are a
//! linear threshold of the concatenated embedding; the generator keeps each
//! semantic predicate on at most one relation per frame so that the
//! subject/object signal blocks decode without collisions. This dataset
//! exercises the relation-head machinery, not representation learning.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{grounding_from_mask, infer_close_to, rasterize_ellipse};
use crate::ontology::{fnv1a, ClassId, Ontology, PhaseId, PredicateId, TechniqueId};
use crate::scenegraph::{Entity, FrameSceneGraph, RelationInstance, VideoRecord};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("config error: {0}")]
    Config(String),
    #[error("chunk end {end} out of range for video with {frames} frames")]
    ChunkOutOfRange { end: usize, frames: usize },
    #[error("embedding dim mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no stored queries for video {video} frame {frame}")]
    MissingFrame { video: String, frame: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

fn config_err(msg: impl Into<String>) -> SynthError {
    SynthError::Config(msg.into())
}

/// One episodic relation emitted while a phase is active.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmissionRule {
    pub predicate: String,
    pub subject: String,
    pub object: String,
    /// Fraction of the rule's active window the relation is on.
    pub duty: f64,
    /// On-episode duration range, seconds.
    pub burst_s: (f64, f64),
}

/// One step of the ordered phase grammar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseTemplate {
    pub phase: String,
    /// Base duration range in seconds, rescaled to the drawn video length.
    pub duration_s: (f64, f64),
    pub tools: Vec<String>,
    pub emissions: Vec<EmissionRule>,
    /// Walk anchor for this phase's tools, normalized image coordinates.
    pub tool_center: (f64, f64),
}

/// Nucleus-breaking interaction program; techniques differ only here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TechniqueTemplate {
    pub name: String,
    /// Number of Cutting bursts across the nucleus-breaking segment.
    pub cutting_bursts: (u32, u32),
    /// Cutting burst duration range, seconds.
    pub cutting_burst_s: (f64, f64),
    /// Duty of the Pushing episodes between cutting bursts.
    pub pushing_duty: f64,
    /// True: tool anchors cycle through the four pupil quadrants.
    pub quadrant_orbit: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub n_videos: usize,
    /// Whole-second video duration range, inclusive.
    pub duration_s: (u32, u32),
    pub fps: u32,
    pub frame_width: u32,
    pub frame_height: u32,
    /// Query embedding width D.
    pub embed_dim: usize,
    /// Gaussian noise added to every embedding coordinate.
    pub noise_sigma: f64,
    /// Chunk length C used by relation prediction.
    pub chunk_size: usize,
    /// Pixel tolerance for the close_to adjacency test.
    pub close_gap: u32,
    pub phase_grammar: Vec<PhaseTemplate>,
    pub technique_templates: Vec<TechniqueTemplate>,
    /// Expected per-predicate frequency ordering, most frequent first.
    pub target_frequency_order: Vec<String>,
}

fn rule(pred: &str, sub: &str, obj: &str, duty: f64, burst: (f64, f64)) -> EmissionRule {
    EmissionRule {
        predicate: pred.into(),
        subject: sub.into(),
        object: obj.into(),
        duty,
        burst_s: burst,
    }
}

fn phase(
    name: &str,
    dur: (f64, f64),
    tools: &[&str],
    emissions: Vec<EmissionRule>,
    center: (f64, f64),
) -> PhaseTemplate {
    PhaseTemplate {
        phase: name.into(),
        duration_s: dur,
        tools: tools.iter().map(|s| s.to_string()).collect(),
        emissions,
        tool_center: center,
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        // Ambiguous pairs (identical tools, emissions, and walk anchors):
        //   Viscodilatation        <-> OVD Aspiration
        //   Hydrodissection        <-> Wound Hydration
        //   Irrigation/Aspiration  <-> Manual Aspiration
        let grammar = vec![
            phase(
                "Toric Marking",
                (3.0, 7.0),
                &["Mendez Ring", "Marker"],
                vec![rule("Holding", "Mendez Ring", "Cornea", 0.55, (1.5, 3.0))],
                (0.5, 0.42),
            ),
            phase(
                "Incision",
                (3.0, 7.0),
                &["Primary Knife"],
                vec![rule("Cutting", "Primary Knife", "Cornea", 0.18, (0.6, 1.2))],
                (0.62, 0.5),
            ),
            phase(
                "Viscodilatation",
                (8.0, 16.0),
                &["Viscoelastic Cannula"],
                vec![rule("Activation", "Viscoelastic Cannula", "Pupil", 0.6, (1.5, 3.0))],
                (0.5, 0.5),
            ),
            phase(
                "Capsulorhexis",
                (6.0, 12.0),
                &["Capsulorhexis Cystotome", "Capsulorhexis Forceps"],
                vec![
                    rule("Pulling", "Capsulorhexis Cystotome", "Pupil", 0.62, (1.0, 2.0)),
                    rule("Holding", "Capsulorhexis Forceps", "Pupil", 0.5, (1.0, 2.2)),
                ],
                (0.5, 0.5),
            ),
            phase(
                "Hydrodissection",
                (8.0, 16.0),
                &["Hydrodissection Cannula"],
                vec![rule("Activation", "Hydrodissection Cannula", "Pupil", 0.6, (1.5, 3.0))],
                (0.5, 0.5),
            ),
            phase(
                "Nucleus Breaking",
                (14.0, 22.0),
                &["Phacoemulsification Handpiece", "Micromanipulator"],
                vec![rule(
                    "Activation",
                    "Phacoemulsification Handpiece",
                    "Pupil",
                    0.5,
                    (1.5, 2.5),
                )],
                (0.5, 0.5),
            ),
            phase(
                "Phacoemulsification",
                (8.0, 14.0),
                &["Phacoemulsification Handpiece", "Micromanipulator"],
                vec![
                    rule("Activation", "Phacoemulsification Handpiece", "Pupil", 0.6, (1.5, 3.0)),
                    rule("Pulling", "Micromanipulator", "Pupil", 0.52, (1.0, 2.0)),
                ],
                (0.5, 0.5),
            ),
            phase(
                "Vitrectomy",
                (3.0, 6.0),
                &["Vitrectomy Handpiece"],
                vec![rule("Activation", "Vitrectomy Handpiece", "Pupil", 0.55, (1.0, 2.0))],
                (0.5, 0.5),
            ),
            phase(
                "Irrigation/Aspiration",
                (8.0, 16.0),
                &["Irrigation/Aspiration Handpiece"],
                vec![rule(
                    "Activation",
                    "Irrigation/Aspiration Handpiece",
                    "Pupil",
                    0.6,
                    (1.5, 3.0),
                )],
                (0.5, 0.5),
            ),
            phase(
                "Preparing Implant",
                (3.0, 6.0),
                &["Lens Injector", "Hand"],
                vec![rule("Holding", "Hand", "Lens Injector", 0.5, (1.0, 2.0))],
                (0.3, 0.3),
            ),
            phase(
                "Manual Aspiration",
                (8.0, 16.0),
                &["Irrigation/Aspiration Handpiece"],
                vec![rule(
                    "Activation",
                    "Irrigation/Aspiration Handpiece",
                    "Pupil",
                    0.6,
                    (1.5, 3.0),
                )],
                (0.5, 0.5),
            ),
            phase(
                "Implant Ejection",
                (3.0, 6.0),
                &["Lens Injector"],
                vec![rule("Activation", "Lens Injector", "Pupil", 0.5, (1.0, 2.0))],
                (0.5, 0.5),
            ),
            phase(
                "Implantation",
                (4.0, 8.0),
                &["Lens Injector", "Bonn Forceps"],
                vec![
                    rule("Activation", "Lens Injector", "Pupil", 0.45, (1.0, 2.0)),
                    rule("Holding", "Bonn Forceps", "Cornea", 0.45, (1.0, 2.0)),
                ],
                (0.5, 0.5),
            ),
            phase(
                "Positioning",
                (4.0, 8.0),
                &["Micromanipulator"],
                vec![rule("Pushing", "Micromanipulator", "Pupil", 0.3, (0.8, 1.6))],
                (0.5, 0.5),
            ),
            phase(
                "OVD Aspiration",
                (8.0, 16.0),
                &["Viscoelastic Cannula"],
                vec![rule("Activation", "Viscoelastic Cannula", "Pupil", 0.6, (1.5, 3.0))],
                (0.5, 0.5),
            ),
            phase(
                "Suturing",
                (5.0, 10.0),
                &["Needle Holder", "Suture Needle"],
                vec![rule("Holding", "Needle Holder", "Suture Needle", 0.65, (1.5, 3.0))],
                (0.55, 0.45),
            ),
            phase(
                "Sealing Control",
                (3.0, 6.0),
                &["Rycroft Cannula"],
                vec![rule("Pushing", "Rycroft Cannula", "Cornea", 0.28, (0.6, 1.2))],
                (0.6, 0.5),
            ),
            phase(
                "Wound Hydration",
                (8.0, 16.0),
                &["Hydrodissection Cannula"],
                vec![rule("Activation", "Hydrodissection Cannula", "Pupil", 0.6, (1.5, 3.0))],
                (0.5, 0.5),
            ),
            phase(
                "Antibiotic Injection",
                (3.0, 6.0),
                &["Rycroft Cannula"],
                vec![rule("Activation", "Rycroft Cannula", "Cornea", 0.5, (1.0, 2.0))],
                (0.6, 0.5),
            ),
        ];
        Self {
            seed: 42,
            n_videos: 10,
            duration_s: (60, 240),
            fps: 5,
            frame_width: 64,
            frame_height: 64,
            embed_dim: 64,
            noise_sigma: 0.2,
            chunk_size: 8,
            close_gap: 0,
            phase_grammar: grammar,
            technique_templates: vec![
                TechniqueTemplate {
                    name: "Stop and Chop".into(),
                    cutting_bursts: (2, 2),
                    cutting_burst_s: (1.4, 1.8),
                    pushing_duty: 0.22,
                    quadrant_orbit: false,
                },
                TechniqueTemplate {
                    name: "Divide and Conquer".into(),
                    cutting_bursts: (6, 7),
                    cutting_burst_s: (0.4, 0.6),
                    pushing_duty: 0.22,
                    quadrant_orbit: true,
                },
            ],
            target_frequency_order: vec![
                "close_to".into(),
                "Activation".into(),
                "Inserting".into(),
                "Retracting".into(),
                "Holding".into(),
                "Pulling".into(),
                "Pushing".into(),
                "Cutting".into(),
            ],
        }
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Validate against an ontology and resolve names to ids.
    pub fn resolve(&self, ontology: &Ontology) -> Result<ResolvedConfig, SynthError> {
        if self.fps == 0 {
            return Err(config_err("fps must be > 0"));
        }
        if self.embed_dim < 8 {
            return Err(config_err("embedding dim must be >= 8"));
        }
        if self.n_videos == 0 {
            return Err(config_err("n_videos must be > 0"));
        }
        if self.duration_s.0 == 0 || self.duration_s.0 > self.duration_s.1 {
            return Err(config_err("invalid duration range"));
        }
        if self.chunk_size == 0 {
            return Err(config_err("chunk size must be > 0"));
        }
        if self.frame_width == 0 || self.frame_height == 0 {
            return Err(config_err("frame size must be positive"));
        }
        if self.phase_grammar.len() != ontology.phases().len() {
            return Err(config_err(format!(
                "grammar must cover all {} phases, found {}",
                ontology.phases().len(),
                self.phase_grammar.len()
            )));
        }

        let class_id = |name: &str| -> Result<ClassId, SynthError> {
            ontology
                .class_by_name(name)
                .map(|c| c.id)
                .map_err(|e| config_err(e.to_string()))
        };
        let pred_id = |name: &str| -> Result<PredicateId, SynthError> {
            ontology
                .predicate_by_name(name)
                .map(|p| p.id)
                .ok_or_else(|| config_err(format!("unknown predicate {name:?}")))
        };

        let inserting = pred_id("Inserting")?;
        let retracting = pred_id("Retracting")?;
        let mut phases = Vec::with_capacity(self.phase_grammar.len());
        let mut seen = std::collections::BTreeSet::new();
        for tpl in &self.phase_grammar {
            let phase_id = ontology
                .phase_by_name(&tpl.phase)
                .ok_or_else(|| config_err(format!("unknown phase {:?}", tpl.phase)))?;
            if !seen.insert(phase_id) {
                return Err(config_err(format!("phase {:?} listed twice", tpl.phase)));
            }
            let tools = tpl
                .tools
                .iter()
                .map(|t| {
                    let id = class_id(t)?;
                    if !ontology.is_tool(id).unwrap_or(false) {
                        return Err(config_err(format!("{t:?} is not a tool")));
                    }
                    Ok(id)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut preds_in_phase = std::collections::BTreeSet::new();
            let emissions = tpl
                .emissions
                .iter()
                .map(|r| {
                    let pred = pred_id(&r.predicate)?;
                    if pred == ontology.close_to_id() {
                        return Err(config_err("close_to is derived from masks, not emitted"));
                    }
                    if pred == inserting || pred == retracting {
                        return Err(config_err(
                            "Inserting/Retracting are reserved for tool entry/exit",
                        ));
                    }
                    if !preds_in_phase.insert(pred) {
                        return Err(config_err(format!(
                            "phase {:?} emits predicate {:?} twice; one relation per \
                             predicate per frame is required for query decodability",
                            tpl.phase, r.predicate
                        )));
                    }
                    if !(r.duty > 0.0 && r.duty <= 1.0) {
                        return Err(config_err("rule duty must be in (0, 1]"));
                    }
                    if !(r.burst_s.0 > 0.0 && r.burst_s.1 >= r.burst_s.0) {
                        return Err(config_err("rule burst range must be positive and ordered"));
                    }
                    let sub = class_id(&r.subject)?;
                    if !ontology.is_tool(sub).unwrap_or(false) {
                        return Err(config_err(format!(
                            "semantic subject {:?} must be a tool",
                            r.subject
                        )));
                    }
                    Ok(ResolvedRule {
                        pred,
                        sub,
                        obj: class_id(&r.object)?,
                        duty: r.duty,
                        burst_s: r.burst_s,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            phases.push(ResolvedPhase {
                phase: phase_id,
                duration_s: tpl.duration_s,
                tools,
                emissions,
                tool_center: tpl.tool_center,
            });
        }

        if self.technique_templates.len() != ontology.techniques().len() {
            return Err(config_err("exactly one template per technique required"));
        }
        let mut techniques = Vec::new();
        for (i, name) in ontology.techniques().iter().enumerate() {
            let tpl = self
                .technique_templates
                .iter()
                .find(|t| &t.name == name)
                .ok_or_else(|| config_err(format!("missing technique template {name:?}")))?;
            if tpl.cutting_bursts.0 > tpl.cutting_bursts.1
                || !(tpl.cutting_burst_s.0 > 0.0 && tpl.cutting_burst_s.1 >= tpl.cutting_burst_s.0)
                || !(tpl.pushing_duty > 0.0 && tpl.pushing_duty <= 1.0)
            {
                return Err(config_err(format!("invalid technique template {name:?}")));
            }
            techniques.push((TechniqueId(i as u16), tpl.clone()));
        }

        let nucleus = ontology
            .phase_by_name("Nucleus Breaking")
            .ok_or_else(|| config_err("grammar requires a \"Nucleus Breaking\" phase"))?;

        Ok(ResolvedConfig {
            phases,
            techniques,
            nucleus_phase: nucleus,
            inserting,
            retracting,
            cutting: pred_id("Cutting")?,
            pushing: pred_id("Pushing")?,
            cornea: class_id("Cornea")?,
            anatomy: vec![
                (class_id("Skin")?, 0.62),
                (class_id("Cornea")?, 0.34),
                (class_id("Iris")?, 0.17),
                (class_id("Pupil")?, 0.08),
            ],
        })
    }
}

#[derive(Debug, Clone)]
struct ResolvedRule {
    pred: PredicateId,
    sub: ClassId,
    obj: ClassId,
    duty: f64,
    burst_s: (f64, f64),
}

#[derive(Debug, Clone)]
struct ResolvedPhase {
    phase: PhaseId,
    duration_s: (f64, f64),
    tools: Vec<ClassId>,
    emissions: Vec<ResolvedRule>,
    tool_center: (f64, f64),
}

/// Name-resolved, validated view of a [`SimConfig`].
pub struct ResolvedConfig {
    phases: Vec<ResolvedPhase>,
    techniques: Vec<(TechniqueId, TechniqueTemplate)>,
    nucleus_phase: PhaseId,
    inserting: PredicateId,
    retracting: PredicateId,
    cutting: PredicateId,
    pushing: PredicateId,
    cornea: ClassId,
    /// (class, base area fraction), outermost first.
    anatomy: Vec<(ClassId, f64)>,
}

impl ResolvedConfig {
    pub fn nucleus_phase(&self) -> PhaseId {
        self.nucleus_phase
    }
}

fn mix_seed(parts: &[u64]) -> u64 {
    let mut bytes = Vec::with_capacity(parts.len() * 8);
    for p in parts {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fnv1a(&bytes)
}

/// Generate the full dataset. Deterministic for a fixed config.
pub fn generate(cfg: &SimConfig, ontology: &Ontology) -> Result<Vec<VideoRecord>, SynthError> {
    let resolved = cfg.resolve(ontology)?;
    let mut root = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x7465_6368]));
    // Balanced technique assignment, shuffled.
    let mut techniques: Vec<TechniqueId> = (0..cfg.n_videos)
        .map(|i| resolved.techniques[i % resolved.techniques.len()].0)
        .collect();
    techniques.shuffle(&mut root);

    (0..cfg.n_videos)
        .map(|v| generate_video(cfg, &resolved, ontology, v, techniques[v]))
        .collect()
}

/// Seconds-domain interval: relation `pred` between `sub` and `obj`.
struct Episode {
    pred: PredicateId,
    sub: ClassId,
    obj: ClassId,
    start_s: f64,
    end_s: f64,
}

struct ToolSpan {
    class: ClassId,
    enter_s: f64,
    exit_s: f64,
    /// End of the Inserting episode; rules only schedule after this.
    settled_s: f64,
    /// Start of the Retracting episode; rules only schedule before this.
    winddown_s: f64,
}

fn generate_video(
    cfg: &SimConfig,
    res: &ResolvedConfig,
    ontology: &Ontology,
    index: usize,
    technique: TechniqueId,
) -> Result<VideoRecord, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x7669_6465, index as u64]));
    let video_id = format!("video_{index:03}");
    let fps = cfg.fps as f64;
    let duration = rng.gen_range(cfg.duration_s.0..=cfg.duration_s.1) as usize;
    let n_frames = duration * cfg.fps as usize;

    // Phase spans: draw base durations, rescale to the video length.
    let bases: Vec<f64> = res
        .phases
        .iter()
        .map(|p| rng.gen_range(p.duration_s.0..=p.duration_s.1))
        .collect();
    let scale = duration as f64 / bases.iter().sum::<f64>();
    let mut spans = Vec::with_capacity(bases.len());
    let mut t = 0.0;
    for (i, b) in bases.iter().enumerate() {
        let len = (b * scale).max(3.0 / fps);
        let end = if i + 1 == bases.len() {
            duration as f64
        } else {
            (t + len).min(duration as f64)
        };
        spans.push((t, end));
        t = end;
    }

    // Per-frame phase labels.
    let mut frame_phase = vec![res.phases.last().unwrap().phase; n_frames];
    for (span, p) in spans.iter().zip(&res.phases) {
        let f0 = (span.0 * fps).round() as usize;
        let f1 = ((span.1 * fps).round() as usize).min(n_frames);
        for fp in frame_phase.iter_mut().take(f1).skip(f0) {
            *fp = p.phase;
        }
    }

    // Tool schedules and relation episodes.
    let mut episodes: Vec<Episode> = Vec::new();
    let mut tool_spans: Vec<ToolSpan> = Vec::new();
    let tech_tpl = &res
        .techniques
        .iter()
        .find(|(id, _)| *id == technique)
        .expect("technique resolved")
        .1;

    for (span, p) in spans.iter().zip(&res.phases) {
        let (p0, p1) = *span;
        let len = p1 - p0;
        if len <= 0.2 {
            continue;
        }
        // Entries and exits are scheduled strictly sequentially so that the
        // Inserting (resp. Retracting) episodes of a phase never overlap:
        // each semantic predicate may appear on at most one relation per
        // frame, which keeps relations pair-decodable from query embeddings.
        let n_tools = p.tools.len().max(1) as f64;
        let min_ep = 1.0 / fps;
        let mut entries = Vec::with_capacity(p.tools.len());
        let mut cursor = p0;
        for _ in &p.tools {
            let ins = rng.gen_range(1.2..1.8f64).min(len * 0.22 / n_tools).max(min_ep);
            let enter = cursor.min(p1 - min_ep);
            let settled = (enter + ins).min(p1);
            entries.push((enter, settled));
            cursor = settled + 0.15;
        }
        let mut exits = Vec::with_capacity(p.tools.len());
        let mut end_cursor = p1;
        for k in 0..p.tools.len() {
            let ret = rng.gen_range(0.7..1.1f64).min(len * 0.18 / n_tools).max(min_ep);
            let exit = end_cursor.max(entries[k].1);
            let winddown = (exit - ret).max(entries[k].1);
            exits.push((winddown, exit));
            end_cursor = winddown - 0.15;
        }
        let mut spans_of: BTreeMap<ClassId, usize> = BTreeMap::new();
        for (k, &tool) in p.tools.iter().enumerate() {
            let (enter, settled) = entries[k];
            let (winddown, exit) = exits[k];
            if settled - enter > 0.5 / fps {
                episodes.push(Episode {
                    pred: res.inserting,
                    sub: tool,
                    obj: res.cornea,
                    start_s: enter,
                    end_s: settled,
                });
            }
            if exit - winddown > 0.5 / fps {
                episodes.push(Episode {
                    pred: res.retracting,
                    sub: tool,
                    obj: res.cornea,
                    start_s: winddown,
                    end_s: exit,
                });
            }
            spans_of.insert(tool, tool_spans.len());
            tool_spans.push(ToolSpan {
                class: tool,
                enter_s: enter,
                exit_s: exit,
                settled_s: settled,
                winddown_s: winddown,
            });
        }

        let active_window = |sub: ClassId, obj: ClassId| -> Option<(f64, f64)> {
            let mut start = p0;
            let mut end = p1;
            for class in [sub, obj] {
                if let Some(&i) = spans_of.get(&class) {
                    start = start.max(tool_spans[i].settled_s);
                    end = end.min(tool_spans[i].winddown_s);
                }
            }
            (end - start > 0.4).then_some((start, end))
        };

        for r in &p.emissions {
            if let Some((w0, w1)) = active_window(r.sub, r.obj) {
                schedule_duty_episodes(&mut rng, &mut episodes, r, w0, w1);
            }
        }

        // Technique program inside the nucleus-breaking segment.
        if p.phase == res.nucleus_phase && p.tools.len() >= 2 {
            let phaco = p.tools[0];
            let manipulator = p.tools[1];
            if let Some((w0, w1)) = active_window(phaco, manipulator) {
                let n_bursts =
                    rng.gen_range(tech_tpl.cutting_bursts.0..=tech_tpl.cutting_bursts.1) as usize;
                let cut_spans =
                    schedule_count_bursts(&mut rng, n_bursts, tech_tpl.cutting_burst_s, w0, w1);
                for &(s, e) in &cut_spans {
                    episodes.push(Episode {
                        pred: res.cutting,
                        sub: phaco,
                        obj: res.anatomy.last().unwrap().0,
                        start_s: s,
                        end_s: e,
                    });
                }
                // Pushing fills the gaps between cutting bursts.
                let mut gaps = Vec::new();
                let mut cursor = w0;
                for &(s, e) in &cut_spans {
                    if s - cursor > 0.6 {
                        gaps.push((cursor, s));
                    }
                    cursor = e;
                }
                if w1 - cursor > 0.6 {
                    gaps.push((cursor, w1));
                }
                let push_rule = ResolvedRule {
                    pred: res.pushing,
                    sub: manipulator,
                    obj: res.anatomy.last().unwrap().0,
                    duty: tech_tpl.pushing_duty,
                    burst_s: (0.6, 1.2),
                };
                for (g0, g1) in gaps {
                    schedule_duty_episodes(&mut rng, &mut episodes, &push_rule, g0, g1);
                }
            }
        }
    }

    // Per-frame semantic relations.
    let mut frame_relations: Vec<Vec<RelationInstance>> = vec![Vec::new(); n_frames];
    for ep in &episodes {
        let f0 = (ep.start_s * fps).ceil() as usize;
        let f1 = ((ep.end_s * fps).ceil() as usize).min(n_frames);
        for rels in frame_relations.iter_mut().take(f1).skip(f0) {
            rels.push(RelationInstance {
                sub: ep.sub.0 as u32,
                obj: ep.obj.0 as u32,
                pred: ep.pred,
            });
        }
    }

    // Walk state.
    let eye_anchor = (
        0.5 + rng.gen_range(-0.015..0.015),
        0.5 + rng.gen_range(-0.015..0.015),
    );
    let mut eye = eye_anchor;
    let mut eye_v = (0.0f64, 0.0f64);
    // Sizes are class-determined with only small per-video jitter. Wide
    // per-video size ranges would act as video-identity keys that the
    // downstream classifier memorizes instead of the intended trajectory
    // and context signals.
    let anatomy_scale: Vec<f64> = res
        .anatomy
        .iter()
        .map(|_| rng.gen_range(0.96..1.04))
        .collect();
    let mut tool_area: BTreeMap<ClassId, f64> = BTreeMap::new();
    let mut tool_aspect: BTreeMap<ClassId, f64> = BTreeMap::new();
    for id in ontology.tool_ids() {
        let area_spread = (id.0 as f64 * 0.618_033_988_75).fract();
        let aspect_spread = (id.0 as f64 * 0.414_213_562_37).fract();
        tool_area.insert(*id, (0.012 + 0.014 * area_spread) * rng.gen_range(0.95..1.05));
        tool_aspect.insert(*id, (1.2 + aspect_spread) * rng.gen_range(0.95..1.05));
    }

    struct WalkState {
        pos: (f64, f64),
        vel: (f64, f64),
    }
    let mut walks: BTreeMap<ClassId, WalkState> = BTreeMap::new();

    let phase_index_at = |time: f64| -> usize {
        spans
            .iter()
            .position(|&(s, e)| time >= s && time < e)
            .unwrap_or(spans.len() - 1)
    };
    let orbit_dwell = rng.gen_range(2.2..3.2);

    let close_to = ontology.close_to_id();
    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let time = f as f64 / fps;
        let pi = phase_index_at(time);
        let ptpl = &res.phases[pi];

        // Eye drift, shared by all anatomy.
        eye_v.0 = 0.9 * eye_v.0 + rng.gen_range(-0.0015..0.0015) + 0.02 * (eye_anchor.0 - eye.0);
        eye_v.1 = 0.9 * eye_v.1 + rng.gen_range(-0.0015..0.0015) + 0.02 * (eye_anchor.1 - eye.1);
        eye.0 = (eye.0 + eye_v.0).clamp(0.35, 0.65);
        eye.1 = (eye.1 + eye_v.1).clamp(0.35, 0.65);

        let mut placed: Vec<(ClassId, (f64, f64), f64)> = Vec::new();
        for (layer, &(class, base_area)) in res.anatomy.iter().enumerate() {
            let area = base_area * anatomy_scale[layer];
            placed.push((class, eye, area));
        }

        // Tools present at this frame.
        let mut present_tools: Vec<ClassId> = tool_spans
            .iter()
            .filter(|s| time >= s.enter_s && time < s.exit_s)
            .map(|s| s.class)
            .collect();
        present_tools.sort();
        present_tools.dedup();
        walks.retain(|c, _| present_tools.contains(c));

        let is_nucleus = ptpl.phase == res.nucleus_phase;
        let orbit = is_nucleus && tech_tpl.quadrant_orbit;
        // The anchor sweeps the quadrants continuously (one revolution per
        // four dwells). A smooth sweep keeps the spring from overshooting,
        // so orbiting tools never lose mask adjacency with the pupil: the
        // techniques must differ in positions, not in close_to structure,
        // or the spatial ablation would be moot.
        let sweep = 2.0 * std::f64::consts::PI * time / (4.0 * orbit_dwell);
        let quadrant_offset = (0.12 * sweep.cos(), 0.12 * sweep.sin());

        for (k, &tool) in present_tools.iter().enumerate() {
            let mut anchor = (
                eye.0 + (ptpl.tool_center.0 - 0.5),
                eye.1 + (ptpl.tool_center.1 - 0.5),
            );
            if orbit {
                anchor = (eye.0 + quadrant_offset.0, eye.1 + quadrant_offset.1);
            } else if is_nucleus {
                // Stop-and-chop works a fixed groove slightly below center;
                // the offset separates the techniques' mean positions, not
                // just their variances.
                anchor = (eye.0, eye.1 + 0.08);
            }
            // Slight per-tool separation so paired tools do not stack.
            anchor.0 += 0.03 * k as f64;
            anchor.1 -= 0.02 * k as f64;

            // Nucleus breaking pins tools to their anchors hard with a
            // heavily damped spring: the orbit reaches each quadrant within
            // a fraction of the dwell time without overshooting past the
            // pupil, and the central hold stays tight.
            let (pull, step, damping) = if is_nucleus {
                (0.3, 0.004, 0.55)
            } else {
                (0.05, 0.007, 0.85)
            };
            let state = walks.entry(tool).or_insert_with(|| WalkState {
                pos: (
                    (anchor.0 + rng.gen_range(-0.12..0.12)).clamp(0.05, 0.95),
                    (anchor.1 + rng.gen_range(-0.12..0.12)).clamp(0.05, 0.95),
                ),
                vel: (0.0, 0.0),
            });
            state.vel.0 = damping * state.vel.0
                + rng.gen_range(-step..step)
                + pull * (anchor.0 - state.pos.0);
            state.vel.1 = damping * state.vel.1
                + rng.gen_range(-step..step)
                + pull * (anchor.1 - state.pos.1);
            state.pos.0 = (state.pos.0 + state.vel.0).clamp(0.03, 0.97);
            state.pos.1 = (state.pos.1 + state.vel.1).clamp(0.03, 0.97);
            placed.push((tool, state.pos, tool_area[&tool]));
        }

        // Rasterize masks and derive groundings from them.
        let w = cfg.frame_width;
        let h = cfg.frame_height;
        let mut frame_entities = Vec::with_capacity(placed.len());
        for (class, pos, area) in placed {
            let aspect = tool_aspect.get(&class).copied().unwrap_or(1.0);
            let area_px = area * (w as f64) * (h as f64);
            let rx = (area_px * aspect / std::f64::consts::PI).sqrt();
            let ry = rx / aspect;
            let mask = rasterize_ellipse(w, h, pos.0 * w as f64, pos.1 * h as f64, rx, ry);
            let mut grounding = grounding_from_mask(&mask)
                .map_err(|e| config_err(format!("degenerate mask: {e}")))?;
            grounding.mask = Some(mask);
            frame_entities.push(Entity {
                id: class.0 as u32,
                class,
                grounding,
            });
        }

        // Semantic relations whose endpoints are present, plus mask-derived
        // close_to pairs.
        let present: std::collections::BTreeSet<u32> =
            frame_entities.iter().map(|e| e.id).collect();
        let mut relations: Vec<RelationInstance> = frame_relations[f]
            .iter()
            .filter(|r| present.contains(&r.sub) && present.contains(&r.obj))
            .cloned()
            .collect();
        let mut graph = FrameSceneGraph {
            video_id: video_id.clone(),
            frame_idx: f,
            time_s: f as f64 / fps,
            phase: frame_phase[f],
            technique,
            entities: frame_entities,
            relations: Vec::new(),
        };
        let close = infer_close_to(&graph, cfg.close_gap, close_to)
            .map_err(|e| config_err(format!("close_to inference failed: {e}")))?;
        relations.extend(close);
        graph.relations = relations;
        frames.push(graph);
    }

    Ok(VideoRecord {
        video_id,
        fps,
        technique,
        frames,
    })
}

/// Alternating on/off episodes hitting roughly `rule.duty` within a window.
fn schedule_duty_episodes(
    rng: &mut ChaCha8Rng,
    episodes: &mut Vec<Episode>,
    rule: &ResolvedRule,
    w0: f64,
    w1: f64,
) {
    let mut t = w0 + rng.gen_range(0.0..(rule.burst_s.0 * 0.5));
    while t < w1 {
        let on = rng.gen_range(rule.burst_s.0..=rule.burst_s.1).min(w1 - t);
        if on > 0.05 {
            episodes.push(Episode {
                pred: rule.pred,
                sub: rule.sub,
                obj: rule.obj,
                start_s: t,
                end_s: t + on,
            });
        }
        let gap = on * (1.0 - rule.duty) / rule.duty * rng.gen_range(0.7..1.4);
        t += on + gap.max(0.1);
    }
}

/// Exactly `n` non-overlapping bursts spread across a window.
fn schedule_count_bursts(
    rng: &mut ChaCha8Rng,
    n: usize,
    burst_s: (f64, f64),
    w0: f64,
    w1: f64,
) -> Vec<(f64, f64)> {
    let len = w1 - w0;
    if n == 0 || len <= 0.0 {
        return Vec::new();
    }
    let slot = len / n as f64;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let s0 = w0 + slot * k as f64;
        let dur = rng.gen_range(burst_s.0..=burst_s.1).min(slot * 0.7);
        let start = s0 + rng.gen_range(0.0..(slot - dur).max(1e-9));
        out.push((start, start + dur));
    }
    out
}

// --- Query embeddings ---------------------------------------------------------

/// Supplies per-frame per-class query embeddings for a chunk of frames.
///
/// This is the seam where a real segmentation backbone plugs in; the
/// synthetic provider stands in for it at desk scale.
pub trait QueryProvider {
    fn dim(&self) -> usize;

    /// One map per slot of the padded chunk ending at `end` (length
    /// `chunk_size`; frames before 0 repeat frame 0). Deterministic given
    /// (video, end, seed).
    fn chunk_queries(
        &self,
        video: &VideoRecord,
        end: usize,
        chunk_size: usize,
    ) -> Result<Vec<BTreeMap<ClassId, Vec<f64>>>, SynthError>;
}

/// Synthetic query provider: class one-hot, grounding, and ground-truth
/// relation signal blocks with additive Gaussian noise.
pub struct SyntheticQueryProvider {
    seed: u64,
    dim: usize,
    noise_sigma: f64,
    n_classes: usize,
    semantic: Vec<PredicateId>,
}

impl SyntheticQueryProvider {
    pub fn new(cfg: &SimConfig, ontology: &Ontology) -> Result<Self, SynthError> {
        let n_classes = ontology.num_classes();
        let semantic = ontology.semantic_predicate_ids();
        let needed = n_classes + 3 + 2 * semantic.len();
        if cfg.embed_dim < needed {
            return Err(config_err(format!(
                "embedding dim {} too small for the synthetic layout; need >= {}",
                cfg.embed_dim, needed
            )));
        }
        Ok(Self {
            seed: cfg.seed,
            dim: cfg.embed_dim,
            noise_sigma: cfg.noise_sigma,
            n_classes,
            semantic,
        })
    }

    /// Override the noise level, e.g. for clean-data experiments.
    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    fn frame_queries(
        &self,
        video: &VideoRecord,
        frame_idx: usize,
        chunk_end: usize,
    ) -> BTreeMap<ClassId, Vec<f64>> {
        let frame = &video.frames[frame_idx];
        let video_tag = fnv1a(video.video_id.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
            self.seed,
            0x7175_6572,
            video_tag,
            chunk_end as u64,
            frame_idx as u64,
        ]));

        // Active predicate roles per instance.
        let mut as_sub: BTreeMap<u32, Vec<bool>> = BTreeMap::new();
        let mut as_obj: BTreeMap<u32, Vec<bool>> = BTreeMap::new();
        let k = self.semantic.len();
        for r in &frame.relations {
            if let Some(slot) = self.semantic.iter().position(|p| *p == r.pred) {
                as_sub.entry(r.sub).or_insert_with(|| vec![false; k])[slot] = true;
                as_obj.entry(r.obj).or_insert_with(|| vec![false; k])[slot] = true;
            }
        }

        let mut out = BTreeMap::new();
        let mut entities: Vec<&Entity> = frame.entities.iter().collect();
        entities.sort_by_key(|e| e.class);
        for e in entities {
            let mut q = vec![0.0f64; self.dim];
            q[e.class.0 as usize] = 1.0;
            q[self.n_classes] = e.grounding.cx;
            q[self.n_classes + 1] = e.grounding.cy;
            q[self.n_classes + 2] = e.grounding.area;
            let sub_base = self.n_classes + 3;
            if let Some(flags) = as_sub.get(&e.id) {
                for (i, &on) in flags.iter().enumerate() {
                    if on {
                        q[sub_base + i] = 1.0;
                    }
                }
            }
            let obj_base = sub_base + k;
            if let Some(flags) = as_obj.get(&e.id) {
                for (i, &on) in flags.iter().enumerate() {
                    if on {
                        q[obj_base + i] = 1.0;
                    }
                }
            }
            if self.noise_sigma > 0.0 {
                for v in q.iter_mut() {
                    *v += gaussian(&mut rng) * self.noise_sigma;
                }
            }
            out.insert(e.class, q);
        }
        out
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl QueryProvider for SyntheticQueryProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn chunk_queries(
        &self,
        video: &VideoRecord,
        end: usize,
        chunk_size: usize,
    ) -> Result<Vec<BTreeMap<ClassId, Vec<f64>>>, SynthError> {
        if end >= video.frames.len() {
            return Err(SynthError::ChunkOutOfRange {
                end,
                frames: video.frames.len(),
            });
        }
        let mut slots = Vec::with_capacity(chunk_size);
        let mut cache: BTreeMap<usize, BTreeMap<ClassId, Vec<f64>>> = BTreeMap::new();
        for k in 0..chunk_size {
            let idx = (end + k + 1).saturating_sub(chunk_size);
            let entry = cache
                .entry(idx)
                .or_insert_with(|| self.frame_queries(video, idx, end));
            slots.push(entry.clone());
        }
        Ok(slots)
    }
}

/// Convenience: synthetic queries for one chunk, as specified by the config.
pub fn synthetic_queries(
    video: &VideoRecord,
    chunk_end: usize,
    cfg: &SimConfig,
    ontology: &Ontology,
) -> Result<Vec<BTreeMap<ClassId, Vec<f64>>>, SynthError> {
    SyntheticQueryProvider::new(cfg, ontology)?.chunk_queries(video, chunk_end, cfg.chunk_size)
}

// --- External query files -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct QueryFileHeader {
    format: String,
    version: u32,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct QueryFileRow {
    video_id: String,
    frame_idx: u64,
    class: u16,
    vector: Vec<f64>,
}

/// Query provider backed by a JSONL file of stored per-frame embeddings.
pub struct ExternalQueryProvider {
    dim: usize,
    by_frame: BTreeMap<(String, usize), BTreeMap<ClassId, Vec<f64>>>,
}

/// Load stored query embeddings. The first line is a versioned header
/// (`{"format":"catsg-queries","version":1,"dim":D}`), followed by one row
/// per (video, frame, class).
pub fn load_external_queries(
    path: impl AsRef<Path>,
    expected_dim: usize,
) -> Result<ExternalQueryProvider, SynthError> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| SynthError::Parse("missing header line".into()))??;
    let header: QueryFileHeader = serde_json::from_str(&header_line)
        .map_err(|e| SynthError::Parse(format!("bad header: {e}")))?;
    if header.format != "catsg-queries" || header.version != 1 {
        return Err(SynthError::Parse(format!(
            "unsupported query file format {:?} v{}",
            header.format, header.version
        )));
    }
    if header.dim != expected_dim {
        return Err(SynthError::DimensionMismatch {
            expected: expected_dim,
            found: header.dim,
        });
    }
    let mut by_frame: BTreeMap<(String, usize), BTreeMap<ClassId, Vec<f64>>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: QueryFileRow = serde_json::from_str(&line)
            .map_err(|e| SynthError::Parse(format!("line {}: {e}", i + 2)))?;
        if row.vector.len() != expected_dim {
            return Err(SynthError::DimensionMismatch {
                expected: expected_dim,
                found: row.vector.len(),
            });
        }
        by_frame
            .entry((row.video_id, row.frame_idx as usize))
            .or_default()
            .insert(ClassId(row.class), row.vector);
    }
    Ok(ExternalQueryProvider {
        dim: expected_dim,
        by_frame,
    })
}

/// Write a query file in the documented format (used by tests and tooling).
pub fn write_external_queries(
    path: impl AsRef<Path>,
    dim: usize,
    rows: impl Iterator<Item = (String, usize, ClassId, Vec<f64>)>,
) -> Result<(), SynthError> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = QueryFileHeader {
        format: "catsg-queries".into(),
        version: 1,
        dim,
    };
    writeln!(out, "{}", serde_json::to_string(&header).unwrap())?;
    for (video_id, frame_idx, class, vector) in rows {
        let row = QueryFileRow {
            video_id,
            frame_idx: frame_idx as u64,
            class: class.0,
            vector,
        };
        writeln!(out, "{}", serde_json::to_string(&row).unwrap())?;
    }
    Ok(())
}

impl QueryProvider for ExternalQueryProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn chunk_queries(
        &self,
        video: &VideoRecord,
        end: usize,
        chunk_size: usize,
    ) -> Result<Vec<BTreeMap<ClassId, Vec<f64>>>, SynthError> {
        if end >= video.frames.len() {
            return Err(SynthError::ChunkOutOfRange {
                end,
                frames: video.frames.len(),
            });
        }
        let mut slots = Vec::with_capacity(chunk_size);
        for k in 0..chunk_size {
            let idx = (end + k + 1).saturating_sub(chunk_size);
            let frame_idx = video.frames[idx].frame_idx;
            let stored = self
                .by_frame
                .get(&(video.video_id.clone(), frame_idx))
                .ok_or_else(|| SynthError::MissingFrame {
                    video: video.video_id.clone(),
                    frame: frame_idx,
                })?;
            slots.push(stored.clone());
        }
        Ok(slots)
    }
}

// --- Dataset splitting -----------------------------------------------------------

/// Deterministic video-level split, stratified by technique so both labels
/// appear on each side.
pub fn stratified_split(
    videos: &[VideoRecord],
    train_fraction: f64,
) -> (Vec<&VideoRecord>, Vec<&VideoRecord>) {
    let mut by_technique: BTreeMap<TechniqueId, Vec<&VideoRecord>> = BTreeMap::new();
    for v in videos {
        by_technique.entry(v.technique).or_default().push(v);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for group in by_technique.values() {
        let n_train = if group.len() == 1 {
            1
        } else {
            ((group.len() as f64 * train_fraction).round() as usize).clamp(1, group.len() - 1)
        };
        for (i, v) in group.iter().enumerate() {
            if i < n_train {
                train.push(*v);
            } else {
                test.push(*v);
            }
        }
    }
    train.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    test.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    (train, test)
}
