//! Dynamic surgical scene graph pipeline.
//!
//! The crate covers the full desk-scale loop: a seeded procedural simulator
//! produces CAT-SG-shaped datasets (frame scene graphs with masks, phase and
//! technique labels, and correlated per-instance query embeddings); the
//! relation network predicts semantic tool interactions from query-embedding
//! pairs while geometric proximity comes from mask adjacency; windowed
//! dynamic graphs with same-class temporal edges feed a graph-attention
//! classifier for phase and technique recognition; and the evaluation module
//! scores everything with per-class / micro / macro F1 including the `none`
//! pseudo-class.

pub mod checkpoint;
pub mod downstream;
pub mod dynamicgraph;
pub mod evaluation;
pub mod geometry;
pub mod nn;
pub mod ontology;
pub mod relnet;
pub mod scenegraph;
pub mod synthdata;

pub use ontology::{ClassId, Ontology, PhaseId, PredicateId, TechniqueId};
pub use scenegraph::{Entity, FrameSceneGraph, Grounding, RelationInstance, VideoRecord};
