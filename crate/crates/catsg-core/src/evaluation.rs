//! Per-class / micro / macro F1 and accuracy, including the `none`
//! pseudo-class for candidate pairs carrying no relation.
//!
//! The relation evaluation universe per frame is: `close_to` over all
//! unordered entity pairs, plus the seven semantic predicates over all
//! ordered tool-subject pairs. Entities are matched across prediction and
//! ground truth by class, which is valid under the singleton-per-class
//! schema. A pair with an empty ground-truth label set contributes
//! `{none}`, likewise for an empty predicted set. Classes that occur in
//! neither ground truth nor predictions are excluded from macro-F1 and
//! reported as undefined.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{ClassId, Ontology, PredicateId};
use crate::scenegraph::FrameSceneGraph;

/// Name of the evaluation pseudo-class.
pub const NONE_CLASS: &str = "none";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("frame alignment error: {0}")]
    Alignment(String),
    #[error("length mismatch: {preds} predictions vs {gts} ground truths")]
    LengthMismatch { preds: usize, gts: usize },
    #[error("label {label} out of range for {k} classes")]
    BadLabel { label: usize, k: usize },
}

/// Per-class true/false positive/negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn f1(&self) -> Option<f64> {
        if self.tp + self.fp + self.fn_ == 0 {
            return None;
        }
        let p = if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        };
        let r = if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        };
        if p + r == 0.0 {
            Some(0.0)
        } else {
            Some(2.0 * p * r / (p + r))
        }
    }
}

/// Evaluation results mirroring the per-class / micro / macro F1 layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Per-class F1; `None` marks classes with no ground truth and no
    /// predictions (undefined, excluded from macro).
    pub per_class_f1: BTreeMap<String, Option<f64>>,
    pub counts: BTreeMap<String, Counts>,
    pub micro_f1: f64,
    pub macro_f1: f64,
    /// Exact-match rate; only meaningful for single-label classification.
    pub accuracy: Option<f64>,
    /// Ground-truth occurrences per class.
    pub support: BTreeMap<String, u64>,
    /// Classes excluded from the macro average.
    pub excluded: Vec<String>,
}

impl EvalReport {
    fn from_counts(
        counts: BTreeMap<String, Counts>,
        macro_classes: &[String],
        accuracy: Option<f64>,
    ) -> Self {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for c in counts.values() {
            tp += c.tp;
            fp += c.fp;
            fn_ += c.fn_;
        }
        let micro = Counts { tp, fp, fn_ }.f1().unwrap_or(0.0);

        let per_class_f1: BTreeMap<String, Option<f64>> =
            counts.iter().map(|(k, c)| (k.clone(), c.f1())).collect();
        let mut macro_sum = 0.0;
        let mut macro_n = 0usize;
        let mut excluded = Vec::new();
        for name in macro_classes {
            match counts.get(name).and_then(Counts::f1) {
                Some(f1) => {
                    macro_sum += f1;
                    macro_n += 1;
                }
                None => excluded.push(name.clone()),
            }
        }
        // Classes outside the macro set are also recorded as excluded.
        for name in counts.keys() {
            if !macro_classes.contains(name) && !excluded.contains(name) {
                excluded.push(name.clone());
            }
        }
        let support = counts
            .iter()
            .map(|(k, c)| (k.clone(), c.tp + c.fn_))
            .collect();
        EvalReport {
            per_class_f1,
            micro_f1: micro,
            macro_f1: if macro_n > 0 { macro_sum / macro_n as f64 } else { 0.0 },
            accuracy,
            support,
            excluded,
            counts,
        }
    }

    /// Human-readable table; relation reports follow the paper's column
    /// order when rendered through [`render_relation_table`].
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:>8} {:>8}", "class", "F1", "support");
        for (name, f1) in &self.per_class_f1 {
            let f1_text = match f1 {
                Some(v) => format!("{v:.4}"),
                None => "--".into(),
            };
            let _ = writeln!(out, "{name:<28} {f1_text:>8} {:>8}", self.support[name]);
        }
        let _ = writeln!(out, "{:<28} {:>8.4}", "micro F1", self.micro_f1);
        let _ = writeln!(out, "{:<28} {:>8.4}", "macro F1", self.macro_f1);
        if let Some(acc) = self.accuracy {
            let _ = writeln!(out, "{:<28} {:>8.4}", "accuracy", acc);
        }
        out
    }
}

/// Render a relation report with the columns in the paper's table order.
pub fn render_relation_table(report: &EvalReport, ontology: &Ontology) -> String {
    let mut order: Vec<String> = vec![ontology
        .predicate(ontology.close_to_id())
        .map(|p| p.name.clone())
        .unwrap_or_else(|_| "close_to".into())];
    for p in ontology.predicates() {
        if p.id != ontology.close_to_id() {
            order.push(p.name.clone());
        }
    }
    order.push(NONE_CLASS.into());

    let mut out = String::new();
    let _ = writeln!(out, "{:<28} {:>8} {:>8}", "relation", "F1", "support");
    for name in &order {
        let f1_text = match report.per_class_f1.get(name) {
            Some(Some(v)) => format!("{v:.4}"),
            _ => "--".into(),
        };
        let support = report.support.get(name).copied().unwrap_or(0);
        let _ = writeln!(out, "{name:<28} {f1_text:>8} {support:>8}");
    }
    let _ = writeln!(out, "{:<28} {:>8.4}", "micro F1", report.micro_f1);
    let _ = writeln!(out, "{:<28} {:>8.4}", "macro F1", report.macro_f1);
    out
}

/// Label sets of one frame, keyed by the evaluation universe items.
fn frame_label_sets(
    frame: &FrameSceneGraph,
    ontology: &Ontology,
) -> (
    BTreeMap<(ClassId, ClassId), bool>,
    BTreeMap<(ClassId, ClassId), BTreeSet<PredicateId>>,
) {
    let close_to = ontology.close_to_id();
    let class_of: BTreeMap<u32, ClassId> = frame.entities.iter().map(|e| (e.id, e.class)).collect();
    let mut close = BTreeMap::new();
    let mut semantic: BTreeMap<(ClassId, ClassId), BTreeSet<PredicateId>> = BTreeMap::new();
    for r in &frame.relations {
        let (Some(&sc), Some(&oc)) = (class_of.get(&r.sub), class_of.get(&r.obj)) else {
            continue;
        };
        if r.pred == close_to {
            let key = if sc <= oc { (sc, oc) } else { (oc, sc) };
            close.insert(key, true);
        } else {
            semantic.entry((sc, oc)).or_default().insert(r.pred);
        }
    }
    (close, semantic)
}

/// Score predicted frame graphs against ground truth.
pub fn evaluate_relations(
    pred: &[FrameSceneGraph],
    gt: &[FrameSceneGraph],
    ontology: &Ontology,
) -> Result<EvalReport, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::Alignment(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let close_name = ontology
        .predicate(ontology.close_to_id())
        .map(|p| p.name.clone())
        .unwrap_or_else(|_| "close_to".into());
    let mut class_names: Vec<String> = vec![close_name.clone()];
    for p in ontology.predicates() {
        if p.id != ontology.close_to_id() {
            class_names.push(p.name.clone());
        }
    }
    class_names.push(NONE_CLASS.into());
    let mut counts: BTreeMap<String, Counts> = class_names
        .iter()
        .map(|n| (n.clone(), Counts::default()))
        .collect();

    let pred_name = |id: PredicateId| -> String {
        ontology
            .predicate(id)
            .map(|p| p.name.clone())
            .unwrap_or_else(|_| format!("pred#{id}"))
    };

    for (pf, gf) in pred.iter().zip(gt) {
        if pf.video_id != gf.video_id || pf.frame_idx != gf.frame_idx {
            return Err(EvalError::Alignment(format!(
                "frame mismatch: {}#{} vs {}#{}",
                pf.video_id, pf.frame_idx, gf.video_id, gf.frame_idx
            )));
        }
        let classes: BTreeSet<ClassId> = pf
            .entities
            .iter()
            .chain(&gf.entities)
            .map(|e| e.class)
            .collect();
        let (pred_close, pred_sem) = frame_label_sets(pf, ontology);
        let (gt_close, gt_sem) = frame_label_sets(gf, ontology);

        // Geometric universe: unordered pairs over all present classes.
        let ordered: Vec<ClassId> = classes.iter().copied().collect();
        for i in 0..ordered.len() {
            for j in (i + 1)..ordered.len() {
                let key = (ordered[i], ordered[j]);
                let in_pred = pred_close.contains_key(&key);
                let in_gt = gt_close.contains_key(&key);
                match (in_pred, in_gt) {
                    (true, true) => counts.get_mut(&close_name).unwrap().tp += 1,
                    (true, false) => {
                        counts.get_mut(&close_name).unwrap().fp += 1;
                        counts.get_mut(NONE_CLASS).unwrap().fn_ += 1;
                    }
                    (false, true) => {
                        counts.get_mut(&close_name).unwrap().fn_ += 1;
                        counts.get_mut(NONE_CLASS).unwrap().fp += 1;
                    }
                    (false, false) => counts.get_mut(NONE_CLASS).unwrap().tp += 1,
                }
            }
        }

        // Semantic universe: ordered tool-subject pairs.
        for &sub in &ordered {
            if !ontology.is_tool(sub).unwrap_or(false) {
                continue;
            }
            for &obj in &ordered {
                if obj == sub {
                    continue;
                }
                let empty = BTreeSet::new();
                let p_set = pred_sem.get(&(sub, obj)).unwrap_or(&empty);
                let g_set = gt_sem.get(&(sub, obj)).unwrap_or(&empty);
                for &label in p_set.union(g_set) {
                    let name = pred_name(label);
                    let c = counts.get_mut(&name).unwrap();
                    match (p_set.contains(&label), g_set.contains(&label)) {
                        (true, true) => c.tp += 1,
                        (true, false) => c.fp += 1,
                        (false, true) => c.fn_ += 1,
                        (false, false) => unreachable!(),
                    }
                }
                let c = counts.get_mut(NONE_CLASS).unwrap();
                match (p_set.is_empty(), g_set.is_empty()) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => {}
                }
            }
        }
    }

    Ok(EvalReport::from_counts(counts, &class_names, None))
}

/// Score single-label classification predictions.
pub fn evaluate_classification(
    preds: &[usize],
    gts: &[usize],
    k: usize,
) -> Result<EvalReport, EvalError> {
    if preds.len() != gts.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            gts: gts.len(),
        });
    }
    for &label in preds.iter().chain(gts) {
        if label >= k {
            return Err(EvalError::BadLabel { label, k });
        }
    }
    let mut counts: BTreeMap<String, Counts> = (0..k)
        .map(|c| (format!("{c}"), Counts::default()))
        .collect();
    let mut correct = 0u64;
    for (&p, &g) in preds.iter().zip(gts) {
        if p == g {
            correct += 1;
            counts.get_mut(&format!("{p}")).unwrap().tp += 1;
        } else {
            counts.get_mut(&format!("{p}")).unwrap().fp += 1;
            counts.get_mut(&format!("{g}")).unwrap().fn_ += 1;
        }
    }
    let accuracy = if preds.is_empty() {
        None
    } else {
        Some(correct as f64 / preds.len() as f64)
    };
    // Macro averages over classes present in the ground truth.
    let gt_classes: BTreeSet<usize> = gts.iter().copied().collect();
    let macro_classes: Vec<String> = gt_classes.iter().map(|c| format!("{c}")).collect();
    Ok(EvalReport::from_counts(counts, &macro_classes, accuracy))
}
