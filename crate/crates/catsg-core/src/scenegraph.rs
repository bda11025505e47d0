//! Frame-level scene graph data model, JSONL dataset serialization, the
//! text-prompt serializer, and dataset statistics.
//!
//! One JSONL line per frame, with the exact keys:
//!
//! ```text
//! {"video_id": str, "frame_idx": int, "time_s": float, "phase": int,
//!  "technique": int,
//!  "entities": [{"id": int, "class": int, "cx": float, "cy": float,
//!                "area": float, "bbox": [f,f,f,f], "mask_rle": str|null}],
//!  "relations": [{"sub": int, "obj": int, "pred": int}]}
//! ```
//!
//! `mask_rle` values are `"<width>x<height>:<runs>"` where `<runs>` is the
//! comma-joined run-length encoding documented in [`crate::geometry::Mask`];
//! the run string alone does not determine the mask dimensions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{grounding_from_mask, Mask};
use crate::ontology::{ClassId, Ontology, PhaseId, PredicateId, TechniqueId};

/// Assumed sampling rate when a file carries too few frames to recover it.
pub const DEFAULT_FPS: f64 = 5.0;

/// Tolerance for mask-derived grounding consistency checks.
const GROUNDING_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SceneGraphError {
    #[error("schema error at line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(msg: impl Into<String>) -> SceneGraphError {
    SceneGraphError::Invalid(msg.into())
}

/// An entity's spatial footprint: normalized centroid, area fraction, tight
/// bounding box, and optionally the mask they were derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct Grounding {
    pub cx: f64,
    pub cy: f64,
    pub area: f64,
    /// (x0, y0, x1, y1), normalized, x0 <= x1 and y0 <= y1.
    pub bbox: [f64; 4],
    pub mask: Option<Mask>,
}

impl Grounding {
    /// Range/order checks plus mask consistency when a mask is present.
    pub fn validate(&self) -> Result<(), SceneGraphError> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.cx) || !in_unit(self.cy) {
            return Err(invalid(format!("centroid out of range: ({}, {})", self.cx, self.cy)));
        }
        if !in_unit(self.area) {
            return Err(invalid(format!("area out of range: {}", self.area)));
        }
        if !self.bbox.iter().all(|v| in_unit(*v)) || self.bbox[0] > self.bbox[2] || self.bbox[1] > self.bbox[3] {
            return Err(invalid(format!("malformed bbox: {:?}", self.bbox)));
        }
        if let Some(mask) = &self.mask {
            let derived = grounding_from_mask(mask)
                .map_err(|e| invalid(format!("mask inconsistent with grounding: {e}")))?;
            let close = |a: f64, b: f64| (a - b).abs() <= GROUNDING_TOL;
            if !close(derived.cx, self.cx)
                || !close(derived.cy, self.cy)
                || !close(derived.area, self.area)
                || !derived.bbox.iter().zip(&self.bbox).all(|(a, b)| close(*a, *b))
            {
                return Err(invalid("grounding not recomputable from mask within 1e-6"));
            }
        }
        Ok(())
    }
}

/// A detected/annotated object instance in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    /// Unique within the frame. The corpus schema is singleton-per-class, so
    /// generators conventionally reuse the class id here.
    pub id: u32,
    pub class: ClassId,
    pub grounding: Grounding,
}

/// A directed, typed relation between two entity instances of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RelationInstance {
    pub sub: u32,
    pub obj: u32,
    pub pred: PredicateId,
}

/// Scene graph of a single frame, with its frame-level labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSceneGraph {
    pub video_id: String,
    pub frame_idx: usize,
    pub time_s: f64,
    pub phase: PhaseId,
    /// Video-level label, replicated per frame.
    pub technique: TechniqueId,
    pub entities: Vec<Entity>,
    pub relations: Vec<RelationInstance>,
}

impl FrameSceneGraph {
    pub fn entity(&self, id: u32) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// Enforce the frame invariants: unique instance ids, one instance per
    /// class, valid groundings, referential integrity, and the tool-subject
    /// constraint for semantic relations.
    pub fn validate(&self, ontology: &Ontology) -> Result<(), SceneGraphError> {
        let mut ids = BTreeSet::new();
        let mut classes = BTreeSet::new();
        for e in &self.entities {
            if !ids.insert(e.id) {
                return Err(invalid(format!("duplicate instance id {}", e.id)));
            }
            if !classes.insert(e.class) {
                let name = ontology
                    .class(e.class)
                    .map(|c| c.name.clone())
                    .unwrap_or_else(|_| format!("{}", e.class));
                return Err(invalid(format!("multiple instances of class {name}")));
            }
            ontology
                .class(e.class)
                .map_err(|e| invalid(e.to_string()))?;
            e.grounding.validate()?;
        }
        for r in &self.relations {
            if r.sub == r.obj {
                return Err(invalid(format!("self relation on instance {}", r.sub)));
            }
            let sub = self
                .entity(r.sub)
                .ok_or_else(|| invalid(format!("relation references missing instance {}", r.sub)))?;
            self.entity(r.obj)
                .ok_or_else(|| invalid(format!("relation references missing instance {}", r.obj)))?;
            let semantic = ontology
                .is_semantic(r.pred)
                .map_err(|e| invalid(e.to_string()))?;
            if semantic && !ontology.is_tool(sub.class).map_err(|e| invalid(e.to_string()))? {
                return Err(invalid(format!(
                    "semantic relation with anatomy subject (instance {})",
                    r.sub
                )));
            }
        }
        if self.phase.0 as usize >= ontology.phases().len() {
            return Err(invalid(format!("unknown phase id {}", self.phase.0)));
        }
        if self.technique.0 as usize >= ontology.techniques().len() {
            return Err(invalid(format!("unknown technique id {}", self.technique.0)));
        }
        Ok(())
    }

    /// Semantic relations only (close_to filtered out).
    pub fn semantic_relations<'a>(
        &'a self,
        ontology: &'a Ontology,
    ) -> impl Iterator<Item = &'a RelationInstance> {
        let close_to = ontology.close_to_id();
        self.relations.iter().filter(move |r| r.pred != close_to)
    }
}

/// One video's ordered frame graphs plus its video-level labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub fps: f64,
    pub technique: TechniqueId,
    pub frames: Vec<FrameSceneGraph>,
}

impl VideoRecord {
    pub fn validate(&self, ontology: &Ontology) -> Result<(), SceneGraphError> {
        if self.frames.is_empty() {
            return Err(invalid(format!("video {} has no frames", self.video_id)));
        }
        if !(self.fps > 0.0) {
            return Err(invalid(format!("fps must be positive, got {}", self.fps)));
        }
        let mut prev: Option<usize> = None;
        for f in &self.frames {
            if f.video_id != self.video_id {
                return Err(invalid(format!(
                    "frame {} carries video id {:?}, expected {:?}",
                    f.frame_idx, f.video_id, self.video_id
                )));
            }
            if f.technique != self.technique {
                return Err(invalid(format!(
                    "frame {} technique differs from video label",
                    f.frame_idx
                )));
            }
            if let Some(p) = prev {
                if f.frame_idx <= p {
                    return Err(invalid(format!(
                        "frame indices not strictly increasing at {}",
                        f.frame_idx
                    )));
                }
            }
            if (f.time_s - f.frame_idx as f64 / self.fps).abs() > 1e-6 {
                return Err(invalid(format!(
                    "frame {} time {} inconsistent with fps {}",
                    f.frame_idx, f.time_s, self.fps
                )));
            }
            prev = Some(f.frame_idx);
            f.validate(ontology)?;
        }
        Ok(())
    }

    /// Equality up to a float tolerance on the recovered fps.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.video_id == other.video_id
            && self.technique == other.technique
            && (self.fps - other.fps).abs() <= tol
            && self.frames == other.frames
    }
}

// --- JSONL wire format ------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireEntity {
    id: u32,
    class: u16,
    cx: f64,
    cy: f64,
    area: f64,
    bbox: [f64; 4],
    mask_rle: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRelation {
    sub: u32,
    obj: u32,
    pred: u16,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireFrame {
    video_id: String,
    frame_idx: u64,
    time_s: f64,
    phase: u16,
    technique: u16,
    entities: Vec<WireEntity>,
    relations: Vec<WireRelation>,
}

fn mask_to_wire(mask: &Mask) -> String {
    format!("{}x{}:{}", mask.width, mask.height, mask.to_rle_string())
}

fn mask_from_wire(s: &str) -> Result<Mask, String> {
    let (dims, runs) = s
        .split_once(':')
        .ok_or_else(|| format!("mask_rle missing dimension prefix: {s:?}"))?;
    let (w, h) = dims
        .split_once('x')
        .ok_or_else(|| format!("mask_rle dims must be WxH: {dims:?}"))?;
    let width: u32 = w.parse().map_err(|_| format!("bad mask width {w:?}"))?;
    let height: u32 = h.parse().map_err(|_| format!("bad mask height {h:?}"))?;
    Mask::from_rle_string(runs, width, height).map_err(|e| e.to_string())
}

fn frame_to_wire(frame: &FrameSceneGraph) -> WireFrame {
    WireFrame {
        video_id: frame.video_id.clone(),
        frame_idx: frame.frame_idx as u64,
        time_s: frame.time_s,
        phase: frame.phase.0,
        technique: frame.technique.0,
        entities: frame
            .entities
            .iter()
            .map(|e| WireEntity {
                id: e.id,
                class: e.class.0,
                cx: e.grounding.cx,
                cy: e.grounding.cy,
                area: e.grounding.area,
                bbox: e.grounding.bbox,
                mask_rle: e.grounding.mask.as_ref().map(mask_to_wire),
            })
            .collect(),
        relations: frame
            .relations
            .iter()
            .map(|r| WireRelation {
                sub: r.sub,
                obj: r.obj,
                pred: r.pred.0,
            })
            .collect(),
    }
}

fn frame_from_wire(wire: WireFrame) -> Result<FrameSceneGraph, String> {
    let entities = wire
        .entities
        .into_iter()
        .map(|e| {
            let mask = e.mask_rle.as_deref().map(mask_from_wire).transpose()?;
            Ok(Entity {
                id: e.id,
                class: ClassId(e.class),
                grounding: Grounding {
                    cx: e.cx,
                    cy: e.cy,
                    area: e.area,
                    bbox: e.bbox,
                    mask,
                },
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(FrameSceneGraph {
        video_id: wire.video_id,
        frame_idx: wire.frame_idx as usize,
        time_s: wire.time_s,
        phase: PhaseId(wire.phase),
        technique: TechniqueId(wire.technique),
        entities,
        relations: wire
            .relations
            .iter()
            .map(|r| RelationInstance {
                sub: r.sub,
                obj: r.obj,
                pred: PredicateId(r.pred),
            })
            .collect(),
    })
}

/// Serialize a video to JSONL, one frame per line, in frame order.
pub fn write_jsonl(video: &VideoRecord, path: impl AsRef<Path>) -> Result<(), SceneGraphError> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    for frame in &video.frames {
        let line = serde_json::to_string(&frame_to_wire(frame))
            .map_err(|e| invalid(format!("serialization failed: {e}")))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read one video back from JSONL and validate it against the ontology.
///
/// The sampling rate is recovered from the last frame's index/time ratio
/// (exact to well under 1e-9 for data written by [`write_jsonl`]); a
/// single-frame-zero video falls back to [`DEFAULT_FPS`].
pub fn read_jsonl(path: impl AsRef<Path>, ontology: &Ontology) -> Result<VideoRecord, SceneGraphError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut frames: Vec<FrameSceneGraph> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireFrame = serde_json::from_str(&line).map_err(|e| SceneGraphError::Schema {
            line: lineno,
            msg: e.to_string(),
        })?;
        let frame = frame_from_wire(wire).map_err(|msg| SceneGraphError::Schema {
            line: lineno,
            msg,
        })?;
        frames.push(frame);
    }
    let first = frames.first().ok_or(SceneGraphError::Schema {
        line: 0,
        msg: "file contains no frames; videos must be non-empty".into(),
    })?;

    let video_id = first.video_id.clone();
    let technique = first.technique;
    let last = frames.last().expect("non-empty");
    let fps = if last.frame_idx > 0 && last.time_s > 0.0 {
        last.frame_idx as f64 / last.time_s
    } else {
        DEFAULT_FPS
    };
    let video = VideoRecord {
        video_id,
        fps,
        technique,
        frames,
    };
    video.validate(ontology).map_err(|e| match e {
        SceneGraphError::Invalid(msg) => SceneGraphError::Schema { line: 0, msg },
        other => other,
    })?;
    Ok(video)
}

// --- Prompt serialization ----------------------------------------------------

/// Serialize a frame graph (plus history) into the text-prompt format used by
/// LLM downstream baselines.
///
/// Each graph becomes one step block headed by `Step -k:` (history, oldest
/// first) or `Step 0:` (current). Entity lines are
/// `<Object> at (<x>, <y>) with size <size>` with two-decimal fixed-point
/// when `include_grounding`, plain `<Object>` otherwise; relation lines are
/// `<subject> <predicate> <object>`. Output is deterministic: entities sort
/// by class id, relations by (subject class, predicate, object class).
pub fn to_prompt(
    graph: &FrameSceneGraph,
    history: &[FrameSceneGraph],
    include_grounding: bool,
    ontology: &Ontology,
) -> String {
    let mut out = String::new();
    for (i, past) in history.iter().enumerate() {
        let offset = history.len() - i;
        let _ = writeln!(out, "Step -{offset}:");
        write_step(&mut out, past, include_grounding, ontology);
    }
    out.push_str("Step 0:\n");
    write_step(&mut out, graph, include_grounding, ontology);
    out
}

fn write_step(out: &mut String, graph: &FrameSceneGraph, include_grounding: bool, ontology: &Ontology) {
    let class_name = |id: ClassId| -> String {
        ontology
            .class(id)
            .map(|c| c.name.clone())
            .unwrap_or_else(|_| format!("class#{id}"))
    };
    let mut entities: Vec<&Entity> = graph.entities.iter().collect();
    entities.sort_by_key(|e| e.class);
    for e in &entities {
        let name = class_name(e.class);
        if include_grounding {
            let _ = writeln!(
                out,
                "{} at ({:.2}, {:.2}) with size {:.2}",
                name, e.grounding.cx, e.grounding.cy, e.grounding.area
            );
        } else {
            let _ = writeln!(out, "{name}");
        }
    }

    let class_of = |instance: u32| graph.entity(instance).map(|e| e.class).unwrap_or(ClassId(u16::MAX));
    let mut relations: Vec<&RelationInstance> = graph.relations.iter().collect();
    relations.sort_by_key(|r| (class_of(r.sub), r.pred, class_of(r.obj)));
    for r in &relations {
        let pred = ontology
            .predicate(r.pred)
            .map(|p| p.name.clone())
            .unwrap_or_else(|_| format!("pred#{}", r.pred));
        let _ = writeln!(
            out,
            "{} {} {}",
            class_name(class_of(r.sub)),
            pred,
            class_name(class_of(r.obj))
        );
    }
}

// --- Dataset statistics -------------------------------------------------------

/// Corpus-level counts. `close_to` is undirected in spirit but stored as two
/// directed records per pair; counts here are of directed records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub videos: usize,
    pub frames: usize,
    pub relations: u64,
    pub per_predicate: BTreeMap<String, u64>,
    pub unique_objects: usize,
}

impl StatsReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "videos:          {}", self.videos);
        let _ = writeln!(out, "frames:          {}", self.frames);
        let _ = writeln!(out, "relations:       {}", self.relations);
        let _ = writeln!(out, "unique objects:  {}", self.unique_objects);
        let _ = writeln!(out, "per-predicate (directed records):");
        for (name, count) in &self.per_predicate {
            let _ = writeln!(out, "  {name:<24} {count}");
        }
        out
    }
}

/// Count videos, frames, relations per predicate, and distinct classes.
pub fn dataset_stats(
    videos: &[VideoRecord],
    ontology: &Ontology,
) -> Result<StatsReport, SceneGraphError> {
    if videos.is_empty() {
        return Err(SceneGraphError::EmptyDataset);
    }
    let mut per_predicate: BTreeMap<String, u64> = ontology
        .predicates()
        .iter()
        .map(|p| (p.name.clone(), 0))
        .collect();
    let mut frames = 0usize;
    let mut relations = 0u64;
    let mut classes: BTreeSet<ClassId> = BTreeSet::new();
    for video in videos {
        frames += video.frames.len();
        for frame in &video.frames {
            classes.extend(frame.entities.iter().map(|e| e.class));
            relations += frame.relations.len() as u64;
            for r in &frame.relations {
                if let Ok(p) = ontology.predicate(r.pred) {
                    *per_predicate.entry(p.name.clone()).or_insert(0) += 1;
                }
            }
        }
    }
    Ok(StatsReport {
        videos: videos.len(),
        frames,
        relations,
        per_predicate,
        unique_objects: classes.len(),
    })
}
