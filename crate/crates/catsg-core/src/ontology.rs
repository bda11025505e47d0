//! Object classes, relation predicates, and label sets.
//!
//! The ontology is the single source of truth for the 29 object classes with
//! their tool/anatomy partition, the 7 semantic predicates plus the geometric
//! `close_to` predicate, the 19 workflow phases, and the 2 nucleus-breaking
//! techniques. It is loaded from a structured JSON config (a default is
//! shipped with the crate) and validated strictly; everything downstream
//! treats it as immutable.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Expected number of object classes.
pub const NUM_CLASSES: usize = 29;
/// Expected number of semantic predicates.
pub const NUM_SEMANTIC_PREDICATES: usize = 7;
/// Expected number of workflow phases.
pub const NUM_PHASES: usize = 19;
/// Expected number of techniques.
pub const NUM_TECHNIQUES: usize = 2;

/// The shipped default ontology config.
pub const DEFAULT_ONTOLOGY: &str = include_str!("../data/ontology.default");

/// Identifier of an object class (0..28 in the default ontology).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ClassId(pub u16);

/// Identifier of a relation predicate.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct PredicateId(pub u16);

/// Identifier of a workflow phase (0..18).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct PhaseId(pub u16);

/// Identifier of a nucleus-breaking technique (0 or 1).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct TechniqueId(pub u16);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for PredicateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Whether a class is a surgical tool or an anatomical structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Tool,
    Anatomy,
}

/// Whether a predicate is an annotated interaction or derived from geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredicateCategory {
    Semantic,
    Geometric,
}

/// One of the 29 annotated object classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectClass {
    pub id: ClassId,
    pub name: String,
    pub kind: ClassKind,
}

/// A relation predicate. `none` is never a predicate; it exists only as an
/// evaluation pseudo-class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub id: PredicateId,
    pub name: String,
    pub category: PredicateCategory,
}

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown class: {0}")]
    UnknownClass(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Deserialize, Serialize)]
struct OntologyConfig {
    classes: Vec<ObjectClass>,
    predicates: Vec<Predicate>,
    phases: Vec<String>,
    techniques: Vec<String>,
}

/// Validated, immutable ontology.
#[derive(Debug, Clone)]
pub struct Ontology {
    classes: Vec<ObjectClass>,
    predicates: Vec<Predicate>,
    phases: Vec<String>,
    techniques: Vec<String>,
    class_by_name: BTreeMap<String, ClassId>,
    tools: Vec<ClassId>,
    anatomies: Vec<ClassId>,
    close_to: PredicateId,
    fingerprint: u64,
}

impl Ontology {
    /// Load and validate an ontology from a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, OntologyError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_config_str(&text)
    }

    /// The default ontology shipped with the crate.
    pub fn shipped_default() -> Self {
        Self::from_config_str(DEFAULT_ONTOLOGY).expect("shipped default ontology is valid")
    }

    /// Parse and validate an ontology from config text.
    pub fn from_config_str(text: &str) -> Result<Self, OntologyError> {
        let cfg: OntologyConfig = serde_json::from_str(text)?;
        Self::from_config(cfg)
    }

    fn from_config(cfg: OntologyConfig) -> Result<Self, OntologyError> {
        let schema = |msg: String| OntologyError::Schema(msg);

        if cfg.classes.len() != NUM_CLASSES {
            return Err(schema(format!(
                "expected {} classes, found {}",
                NUM_CLASSES,
                cfg.classes.len()
            )));
        }
        for (i, c) in cfg.classes.iter().enumerate() {
            if c.id.0 as usize != i {
                return Err(schema(format!(
                    "class ids must be contiguous 0..{}; position {} has id {}",
                    NUM_CLASSES - 1,
                    i,
                    c.id
                )));
            }
        }
        let mut class_by_name = BTreeMap::new();
        for c in &cfg.classes {
            if class_by_name.insert(c.name.clone(), c.id).is_some() {
                return Err(schema(format!("duplicate class name {:?}", c.name)));
            }
        }

        let n_semantic = cfg
            .predicates
            .iter()
            .filter(|p| p.category == PredicateCategory::Semantic)
            .count();
        let geometric: Vec<_> = cfg
            .predicates
            .iter()
            .filter(|p| p.category == PredicateCategory::Geometric)
            .collect();
        if n_semantic != NUM_SEMANTIC_PREDICATES || geometric.len() != 1 {
            return Err(schema(format!(
                "expected {} semantic predicates and 1 geometric, found {} and {}",
                NUM_SEMANTIC_PREDICATES,
                n_semantic,
                geometric.len()
            )));
        }
        let close_to = geometric[0].id;
        let mut pred_names = BTreeMap::new();
        for (i, p) in cfg.predicates.iter().enumerate() {
            if p.id.0 as usize != i {
                return Err(schema(format!(
                    "predicate ids must be contiguous; position {} has id {}",
                    i, p.id
                )));
            }
            if p.name.eq_ignore_ascii_case("none") {
                return Err(schema(
                    "`none` is an evaluation pseudo-class, not a predicate".into(),
                ));
            }
            if pred_names.insert(p.name.clone(), p.id).is_some() {
                return Err(schema(format!("duplicate predicate name {:?}", p.name)));
            }
        }

        if cfg.phases.len() != NUM_PHASES {
            return Err(schema(format!(
                "expected {} phases, found {}",
                NUM_PHASES,
                cfg.phases.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        if !cfg.phases.iter().all(|p| seen.insert(p.clone())) {
            return Err(schema("duplicate phase name".into()));
        }
        if cfg.techniques.len() != NUM_TECHNIQUES || cfg.techniques[0] == cfg.techniques[1] {
            return Err(schema(format!(
                "expected {} distinct techniques, found {:?}",
                NUM_TECHNIQUES, cfg.techniques
            )));
        }

        let tools = cfg
            .classes
            .iter()
            .filter(|c| c.kind == ClassKind::Tool)
            .map(|c| c.id)
            .collect();
        let anatomies = cfg
            .classes
            .iter()
            .filter(|c| c.kind == ClassKind::Anatomy)
            .map(|c| c.id)
            .collect();

        let fingerprint = fingerprint_of(&cfg);
        Ok(Self {
            classes: cfg.classes,
            predicates: cfg.predicates,
            phases: cfg.phases,
            techniques: cfg.techniques,
            class_by_name,
            tools,
            anatomies,
            close_to,
            fingerprint,
        })
    }

    pub fn classes(&self) -> &[ObjectClass] {
        &self.classes
    }

    pub fn predicates(&self) -> &[Predicate] {
        &self.predicates
    }

    pub fn phases(&self) -> &[String] {
        &self.phases
    }

    pub fn techniques(&self) -> &[String] {
        &self.techniques
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, id: ClassId) -> Result<&ObjectClass, OntologyError> {
        self.classes
            .get(id.0 as usize)
            .ok_or_else(|| OntologyError::UnknownClass(format!("id {}", id)))
    }

    pub fn class_by_name(&self, name: &str) -> Result<&ObjectClass, OntologyError> {
        let id = self
            .class_by_name
            .get(name)
            .ok_or_else(|| OntologyError::UnknownClass(name.to_string()))?;
        self.class(*id)
    }

    /// True iff the class sits in the tool partition (the `N_tool` index set
    /// of pair-proposal construction).
    pub fn is_tool(&self, id: ClassId) -> Result<bool, OntologyError> {
        Ok(self.class(id)?.kind == ClassKind::Tool)
    }

    pub fn is_anatomy(&self, id: ClassId) -> Result<bool, OntologyError> {
        Ok(self.class(id)?.kind == ClassKind::Anatomy)
    }

    pub fn tool_ids(&self) -> &[ClassId] {
        &self.tools
    }

    pub fn anatomy_ids(&self) -> &[ClassId] {
        &self.anatomies
    }

    pub fn predicate(&self, id: PredicateId) -> Result<&Predicate, OntologyError> {
        self.predicates
            .get(id.0 as usize)
            .ok_or_else(|| OntologyError::Schema(format!("unknown predicate id {}", id)))
    }

    pub fn predicate_by_name(&self, name: &str) -> Option<&Predicate> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn semantic_predicate_ids(&self) -> Vec<PredicateId> {
        self.predicates
            .iter()
            .filter(|p| p.category == PredicateCategory::Semantic)
            .map(|p| p.id)
            .collect()
    }

    /// The geometric proximity predicate.
    pub fn close_to_id(&self) -> PredicateId {
        self.close_to
    }

    pub fn is_semantic(&self, id: PredicateId) -> Result<bool, OntologyError> {
        Ok(self.predicate(id)?.category == PredicateCategory::Semantic)
    }

    pub fn phase_by_name(&self, name: &str) -> Option<PhaseId> {
        self.phases
            .iter()
            .position(|p| p == name)
            .map(|i| PhaseId(i as u16))
    }

    pub fn phase_name(&self, id: PhaseId) -> Result<&str, OntologyError> {
        self.phases
            .get(id.0 as usize)
            .map(String::as_str)
            .ok_or_else(|| OntologyError::Schema(format!("unknown phase id {}", id.0)))
    }

    pub fn technique_name(&self, id: TechniqueId) -> Result<&str, OntologyError> {
        self.techniques
            .get(id.0 as usize)
            .map(String::as_str)
            .ok_or_else(|| OntologyError::Schema(format!("unknown technique id {}", id.0)))
    }

    /// Stable hash of the full config; checkpoints embed this and refuse to
    /// load against a different ontology.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

/// FNV-1a over the canonical JSON of the config. Stable across runs and
/// builds, unlike `DefaultHasher`.
fn fingerprint_of(cfg: &OntologyConfig) -> u64 {
    let canonical = serde_json::to_string(cfg).expect("ontology config serializes");
    fnv1a(canonical.as_bytes())
}

/// FNV-1a 64-bit hash; used for config fingerprints and run-dir naming.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
