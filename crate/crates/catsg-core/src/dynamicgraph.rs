//! Windowed dynamic scene graphs: frame graphs sampled at a fixed spacing,
//! joined by untyped temporal edges between same-class nodes in adjacent
//! slots, plus canonical node feature encoding for the graph classifier.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{ClassId, PhaseId, PredicateId, TechniqueId};
use crate::scenegraph::VideoRecord;

#[derive(Debug, Error)]
pub enum DynGraphError {
    #[error("invalid window: {0}")]
    InvalidWindow(String),
}

/// Window geometry:`frames` sampled slots, `spacing_s` seconds apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub frames: usize,
    pub spacing_s: f64,
    pub spatial: bool,
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), DynGraphError> {
        if self.frames == 0 {
            return Err(DynGraphError::InvalidWindow("window needs >= 1 slot".into()));
        }
        if self.frames > 1 && self.spacing_s <= 0.0 {
            return Err(DynGraphError::InvalidWindow(
                "spacing must be positive for multi-slot windows".into(),
            ));
        }
        Ok(())
    }

    /// Single current frame, no temporal context.
    pub fn single(spatial: bool) -> Self {
        Self {
            frames: 1,
            spacing_s: 0.0,
            spatial,
        }
    }

    /// 30 slots spanning 90 s (3 s spacing): the workflow-recognition
    /// windowed configuration.
    pub fn w30_s90(spatial: bool) -> Self {
        Self {
            frames: 30,
            spacing_s: 3.0,
            spatial,
        }
    }

    /// 10 s sampled at 5 fps (50 slots, 0.2 s spacing): the short
    /// technique-recognition window.
    pub fn tech_10s_5fps(spatial: bool) -> Self {
        Self {
            frames: 50,
            spacing_s: 0.2,
            spatial,
        }
    }

    /// 50 s sampled at 1 fps (50 slots, 1 s spacing): the long
    /// technique-recognition window.
    pub fn tech_50s_1fps(spatial: bool) -> Self {
        Self {
            frames: 50,
            spacing_s: 1.0,
            spatial,
        }
    }
}

/// One node of a dynamic graph: an entity observed in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DynNode {
    pub slot: usize,
    pub class: ClassId,
    pub cx: f64,
    pub cy: f64,
    pub area: f64,
}

/// A window of frame graphs with intra-slot relation edges and inter-slot
/// temporal edges.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicSceneGraph {
    /// Canonical order: sorted by (slot, class).
    pub nodes: Vec<DynNode>,
    /// Directed, typed relation edges within a slot (node indices).
    pub intra_edges: Vec<(usize, usize, PredicateId)>,
    /// Undirected same-class edges between adjacent slots, stored once as
    /// (earlier node, later node).
    pub temporal_edges: Vec<(usize, usize)>,
    pub window: WindowConfig,
    /// Phase of the window's final frame.
    pub phase: PhaseId,
    pub technique: TechniqueId,
}

/// Assemble the window ending at `end_t`. Slots before the video start
/// clamp to frame 0, keeping the input topology fixed near boundaries.
pub fn build_window(
    video: &VideoRecord,
    end_t: usize,
    cfg: &WindowConfig,
) -> Result<DynamicSceneGraph, DynGraphError> {
    cfg.validate()?;
    if end_t >= video.frames.len() {
        return Err(DynGraphError::InvalidWindow(format!(
            "end frame {} out of range ({} frames)",
            end_t,
            video.frames.len()
        )));
    }
    let step = if cfg.frames > 1 {
        ((cfg.spacing_s * video.fps).round() as usize).max(1)
    } else {
        0
    };

    let mut nodes = Vec::new();
    let mut intra_edges = Vec::new();
    let mut slot_nodes: Vec<Vec<(ClassId, usize)>> = Vec::with_capacity(cfg.frames);
    for k in 0..cfg.frames {
        let back = (cfg.frames - 1 - k) * step;
        let frame_idx = end_t.saturating_sub(back);
        let frame = &video.frames[frame_idx];

        let mut entities: Vec<_> = frame.entities.iter().collect();
        entities.sort_by_key(|e| e.class);
        let mut this_slot = Vec::with_capacity(entities.len());
        let mut instance_to_node = std::collections::BTreeMap::new();
        for e in entities {
            let node_idx = nodes.len();
            nodes.push(DynNode {
                slot: k,
                class: e.class,
                cx: e.grounding.cx,
                cy: e.grounding.cy,
                area: e.grounding.area,
            });
            this_slot.push((e.class, node_idx));
            instance_to_node.insert(e.id, node_idx);
        }
        for r in &frame.relations {
            if let (Some(&a), Some(&b)) = (instance_to_node.get(&r.sub), instance_to_node.get(&r.obj))
            {
                intra_edges.push((a, b, r.pred));
            }
        }
        slot_nodes.push(this_slot);
    }

    let mut temporal_edges = Vec::new();
    for pair in slot_nodes.windows(2) {
        let (earlier, later) = (&pair[0], &pair[1]);
        for &(class, a) in earlier {
            if let Some(&(_, b)) = later.iter().find(|(c, _)| *c == class) {
                temporal_edges.push((a, b));
            }
        }
    }

    let end_frame = &video.frames[end_t];
    Ok(DynamicSceneGraph {
        nodes,
        intra_edges,
        temporal_edges,
        window: *cfg,
        phase: end_frame.phase,
        technique: video.technique,
    })
}

/// Node feature matrix in canonical node order: class one-hot, plus
/// (cx, cy, area) when spatial encoding is on.
pub fn encode_features(graph: &DynamicSceneGraph, spatial: bool, n_classes: usize) -> Vec<Vec<f64>> {
    graph
        .nodes
        .iter()
        .map(|n| {
            let width = if spatial { n_classes + 3 } else { n_classes };
            let mut row = vec![0.0; width];
            row[n.class.0 as usize] = 1.0;
            if spatial {
                row[n_classes] = n.cx;
                row[n_classes + 1] = n.cy;
                row[n_classes + 2] = n.area;
            }
            row
        })
        .collect()
}

/// Text description of a window, for debugging dumps.
pub fn describe(graph: &DynamicSceneGraph) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "window: {} slots, spacing {} s, phase {}, technique {}",
        graph.window.frames, graph.window.spacing_s, graph.phase.0, graph.technique.0
    );
    for (i, n) in graph.nodes.iter().enumerate() {
        let _ = writeln!(
            out,
            "node {i}: slot {} class {} at ({:.3}, {:.3}) size {:.4}",
            n.slot, n.class, n.cx, n.cy, n.area
        );
    }
    for (a, b, p) in &graph.intra_edges {
        let _ = writeln!(out, "edge {a} -> {b} pred {p}");
    }
    for (a, b) in &graph.temporal_edges {
        let _ = writeln!(out, "temporal {a} -- {b}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::Ontology;
    use crate::synthdata::{generate, SimConfig};

    fn sample_video() -> VideoRecord {
        let ont = Ontology::shipped_default();
        let cfg = SimConfig {
            n_videos: 1,
            duration_s: (120, 120),
            ..SimConfig::with_seed(9)
        };
        generate(&cfg, &ont).unwrap().into_iter().next().unwrap()
    }

    #[test]
    fn single_slot_window() {
        let video = sample_video();
        let cfg = WindowConfig::single(true);
        let g = build_window(&video, 100, &cfg).unwrap();
        assert!(g.temporal_edges.is_empty());
        assert!(g.nodes.iter().all(|n| n.slot == 0));
        assert_eq!(g.phase, video.frames[100].phase);
    }

    #[test]
    fn temporal_edges_count_shared_classes() {
        let video = sample_video();
        let cfg = WindowConfig {
            frames: 4,
            spacing_s: 1.0,
            spatial: true,
        };
        let g = build_window(&video, 300, &cfg).unwrap();
        // Count shared classes per adjacent slot pair directly.
        let mut expected = 0;
        for s in 0..3 {
            let classes = |slot: usize| -> std::collections::BTreeSet<ClassId> {
                g.nodes
                    .iter()
                    .filter(|n| n.slot == slot)
                    .map(|n| n.class)
                    .collect()
            };
            expected += classes(s).intersection(&classes(s + 1)).count();
        }
        assert_eq!(g.temporal_edges.len(), expected);
        for &(a, b) in &g.temporal_edges {
            assert_eq!(g.nodes[a].slot + 1, g.nodes[b].slot);
            assert_eq!(g.nodes[a].class, g.nodes[b].class);
        }
    }

    #[test]
    fn workflow_window_geometry() {
        // 30 slots spaced 3 s at 5 fps native: 15-frame steps, 435 frames
        // (87 s) between the first and last slot.
        let video = sample_video();
        let cfg = WindowConfig::w30_s90(true);
        let end = 500;
        let g = build_window(&video, end, &cfg).unwrap();
        assert_eq!(g.window.frames, 30);
        let first_slot_class = g.nodes[0].class;
        // Recover which frame slot 0 sampled by matching its grounding.
        let expect_frame = end - 29 * 15;
        let e = video.frames[expect_frame]
            .entities
            .iter()
            .find(|e| e.class == first_slot_class)
            .unwrap();
        assert_eq!(g.nodes[0].cx, e.grounding.cx);
        assert_eq!(g.nodes[0].cy, e.grounding.cy);
    }

    #[test]
    fn window_clamps_at_video_start() {
        let video = sample_video();
        let cfg = WindowConfig::w30_s90(true);
        let g = build_window(&video, 3, &cfg).unwrap();
        assert_eq!(g.window.frames, 30);
        // All slots clamp to frame 0 except the last few.
        let slot0: Vec<_> = g.nodes.iter().filter(|n| n.slot == 0).collect();
        let frame0 = &video.frames[0];
        assert_eq!(slot0.len(), frame0.entities.len());
    }

    #[test]
    fn feature_matrix_dimensions() {
        let video = sample_video();
        let g = build_window(&video, 50, &WindowConfig::single(true)).unwrap();
        let spatial = encode_features(&g, true, 29);
        assert!(spatial.iter().all(|row| row.len() == 32));
        let plain = encode_features(&g, false, 29);
        assert!(plain.iter().all(|row| row.len() == 29));
        // One-hot plus grounding layout.
        let node = &g.nodes[0];
        let row = &spatial[0];
        assert_eq!(row[node.class.0 as usize], 1.0);
        assert_eq!(row[29], node.cx);
        assert_eq!(row[30], node.cy);
        assert_eq!(row[31], node.area);
    }

    #[test]
    fn features_invariant_to_entity_order() {
        let mut video = sample_video();
        let cfg = WindowConfig::w30_s90(true);
        let base = build_window(&video, 200, &cfg).unwrap();
        let base_features = encode_features(&base, true, 29);
        for f in video.frames.iter_mut() {
            f.entities.reverse();
        }
        let shuffled = build_window(&video, 200, &cfg).unwrap();
        assert_eq!(encode_features(&shuffled, true, 29), base_features);
        assert_eq!(shuffled.nodes, base.nodes);
    }

    #[test]
    fn build_window_is_pure() {
        let video = sample_video();
        let cfg = WindowConfig::w30_s90(true);
        assert_eq!(
            build_window(&video, 400, &cfg).unwrap(),
            build_window(&video, 400, &cfg).unwrap()
        );
    }

    #[test]
    fn invalid_windows_rejected() {
        let video = sample_video();
        assert!(build_window(&video, 10_000, &WindowConfig::single(true)).is_err());
        let bad = WindowConfig {
            frames: 5,
            spacing_s: 0.0,
            spatial: true,
        };
        assert!(matches!(
            build_window(&video, 10, &bad),
            Err(DynGraphError::InvalidWindow(_))
        ));
        assert!(WindowConfig {
            frames: 0,
            spacing_s: 1.0,
            spatial: false
        }
        .validate()
        .is_err());
    }
}
