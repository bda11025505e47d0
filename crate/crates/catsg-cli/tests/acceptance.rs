//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! The paper-scale headline numbers need the real dataset and a pretrained
//! video backbone, so acceptance here is property-based plus synthetic-data
//! thresholds on the seeded default dataset (seed 42, 10 videos).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use catsg_core::downstream::{
    evaluate_task, train_task, GraphClassifier, Task, TaskConfig,
};
use catsg_core::dynamicgraph::WindowConfig;
use catsg_core::evaluation::{evaluate_classification, evaluate_relations, Counts, NONE_CLASS};
use catsg_core::geometry::{masks_adjacent, Mask};
use catsg_core::nn::{
    bce_with_logit, cross_entropy_with_logits, max_relative_error, numeric_gradient, Mlp,
};
use catsg_core::ontology::{ClassId, Ontology, PhaseId, PredicateId, TechniqueId};
use catsg_core::relnet::{
    build_pair_proposals, infer_frame, pool_chunk_queries, predict_video_graphs, train, RelHeads,
    RelTrainConfig, Variant,
};
use catsg_core::scenegraph::{
    read_jsonl, to_prompt, write_jsonl, Entity, FrameSceneGraph, Grounding, RelationInstance,
    VideoRecord,
};
use catsg_core::synthdata::{
    generate, stratified_split, QueryProvider, SimConfig, SynthError, SyntheticQueryProvider,
};

fn report(n: u32, desc: &str, pass: bool, details: &str) {
    println!(
        "ACCEPTANCE {n} {}: {desc} — {details}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {details}");
}

static DATASET: OnceLock<(Ontology, SimConfig, Vec<VideoRecord>)> = OnceLock::new();

fn dataset() -> &'static (Ontology, SimConfig, Vec<VideoRecord>) {
    DATASET.get_or_init(|| {
        let ontology = Ontology::shipped_default();
        let cfg = SimConfig::with_seed(42);
        let videos = generate(&cfg, &ontology).unwrap();
        (ontology, cfg, videos)
    })
}

fn random_queries(
    rng: &mut ChaCha8Rng,
    ontology: &Ontology,
    dim: usize,
) -> BTreeMap<ClassId, Vec<f64>> {
    let n_present = rng.gen_range(0..10);
    let mut present = BTreeSet::new();
    for _ in 0..n_present {
        present.insert(ClassId(rng.gen_range(0..ontology.num_classes() as u16)));
    }
    present
        .into_iter()
        .map(|c| (c, (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect()
}

#[test]
fn criterion_1_pair_proposal_formula() {
    let ontology = Ontology::shipped_default();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let start = Instant::now();
    for _ in 0..1000 {
        let queries = random_queries(&mut rng, &ontology, 4);
        let proposals = build_pair_proposals(&queries, &ontology);
        let tools: Vec<ClassId> = queries
            .keys()
            .copied()
            .filter(|c| ontology.is_tool(*c).unwrap())
            .collect();
        let t = tools.len();
        let a = queries.len() - t;
        assert_eq!(proposals.len(), t * (t.saturating_sub(1) + a));

        let mut brute = Vec::new();
        for &i in &tools {
            for &j in queries.keys() {
                if j != i {
                    brute.push((i, j));
                }
            }
        }
        brute.sort();
        let got: Vec<_> = proposals
            .iter()
            .map(|p| (p.subject_class, p.object_class))
            .collect();
        assert_eq!(got, brute);
        for p in &proposals {
            assert_eq!(
                p.embedding,
                [queries[&p.subject_class].clone(), queries[&p.object_class].clone()].concat()
            );
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        "pair-proposal count and set match brute force on 1000 random frames",
        elapsed.as_secs_f64() < 10.0,
        &format!("1000 frames checked in {elapsed:?}"),
    );
}

#[test]
fn criterion_2_pooling_algebra() {
    let ontology = Ontology::shipped_default();
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    for _ in 0..1000 {
        let n_slots = rng.gen_range(1..8);
        let dim = rng.gen_range(1..6);
        let slots: Vec<BTreeMap<ClassId, Vec<f64>>> = (0..n_slots)
            .map(|_| random_queries(&mut rng, &ontology, dim))
            .collect();
        let pooled = pool_chunk_queries(&slots).unwrap();

        let mut shuffled = slots.clone();
        shuffled.shuffle(&mut rng);
        assert_eq!(pool_chunk_queries(&shuffled).unwrap(), pooled, "order");
        assert_eq!(pool_chunk_queries(&[pooled.clone()]).unwrap(), pooled, "idempotent");

        if let Some(class) = slots.iter().flat_map(|s| s.keys()).next().copied() {
            let mut bumped = slots.clone();
            for slot in bumped.iter_mut() {
                if let Some(q) = slot.get_mut(&class) {
                    q[0] += rng.gen_range(0.0..2.0);
                    break;
                }
            }
            let bumped_pool = pool_chunk_queries(&bumped).unwrap();
            for (c, v) in &pooled {
                for (d, &x) in v.iter().enumerate() {
                    assert!(bumped_pool[c][d] >= x, "monotonicity");
                }
            }
        }
    }

    // CatSGG+ equals CatSGG when every chunk frame carries identical queries.
    struct ConstProvider {
        dim: usize,
        queries: BTreeMap<ClassId, Vec<f64>>,
    }
    impl QueryProvider for ConstProvider {
        fn dim(&self) -> usize {
            self.dim
        }
        fn chunk_queries(
            &self,
            _video: &VideoRecord,
            _end: usize,
            chunk_size: usize,
        ) -> Result<Vec<BTreeMap<ClassId, Vec<f64>>>, SynthError> {
            Ok(vec![self.queries.clone(); chunk_size])
        }
    }
    let (ontology, cfg, videos) = dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let queries: BTreeMap<ClassId, Vec<f64>> = videos[0].frames[40]
        .entities
        .iter()
        .map(|e| {
            (
                e.class,
                (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>(),
            )
        })
        .collect();
    let provider = ConstProvider { dim: 8, queries };
    let tcfg = RelTrainConfig {
        hidden_existence: 16,
        hidden_classification: (16, 8),
        ..Default::default()
    };
    let heads = RelHeads::init(8, &tcfg, ontology, 5);
    let a = infer_frame(&heads, &provider, &videos[0], 40, Variant::CatSgg, cfg.chunk_size, ontology).unwrap();
    let b = infer_frame(&heads, &provider, &videos[0], 40, Variant::CatSggPlus, cfg.chunk_size, ontology).unwrap();
    assert_eq!(a, b, "CatSGG+ must equal CatSGG on constant chunks");

    report(
        2,
        "pooling is order-invariant, idempotent, monotone; variants agree on constant chunks",
        true,
        "1000 random chunks plus the constant-query equivalence",
    );
}

#[test]
fn criterion_3_gate_soundness() {
    let (ontology, cfg, videos) = dataset();
    let provider = SyntheticQueryProvider::new(cfg, ontology).unwrap();
    let (train_videos, test_videos) = stratified_split(videos, 0.7);

    // Briefly trained heads so the run exercises both open and closed gates.
    let tcfg = RelTrainConfig {
        epochs: 2,
        seed: 3,
        hidden_existence: 64,
        hidden_classification: (64, 32),
        ..Default::default()
    };
    let heads = RelHeads::init(cfg.embed_dim, &tcfg, ontology, 3);
    let (heads, _) = train(heads, &provider, &train_videos, &tcfg, ontology).unwrap();

    let mut violations = 0;
    let mut open = 0;
    let mut proposals = 0;
    for video in &test_videos {
        let (_, stats) = predict_video_graphs(
            &heads,
            &provider,
            video,
            Variant::CatSgg,
            cfg.chunk_size,
            cfg.close_gap,
            ontology,
        )
        .unwrap();
        violations += stats.gate_violations;
        open += stats.open_gates;
        proposals += stats.proposals;
    }
    report(
        3,
        "no predicted label originates from a pair with existence below threshold",
        violations == 0 && proposals > 0,
        &format!("{proposals} proposals, {open} open gates, {violations} violations"),
    );
}

#[test]
fn criterion_4_geometry_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(1004);

    // Brute-force all-pairs Chebyshev oracle on 200 random 64x64 pairs.
    let random_mask = |rng: &mut ChaCha8Rng, w: u32, h: u32, density: f64| -> Mask {
        let pixels: Vec<u8> = (0..w * h).map(|_| u8::from(rng.gen_bool(density))).collect();
        Mask::encode(&pixels, w, h).unwrap()
    };
    for round in 0..200 {
        let gap = round % 3;
        let density = rng.gen_range(0.001..0.02);
        let a = random_mask(&mut rng, 64, 64, density);
        let b = random_mask(&mut rng, 64, 64, density);
        let fast = masks_adjacent(&a, &b, gap).unwrap();
        let fg = |m: &Mask| -> Vec<(i64, i64)> {
            m.decode()
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0)
                .map(|(i, _)| ((i % 64) as i64, (i / 64) as i64))
                .collect()
        };
        let (fa, fb) = (fg(&a), fg(&b));
        let slow = fa.iter().any(|&(ax, ay)| {
            fb.iter()
                .any(|&(bx, by)| (ax - bx).abs().max((ay - by).abs()) <= (1 + gap) as i64)
        });
        assert_eq!(fast, slow, "adjacency mismatch at round {round}");
    }

    // RLE codec round trip on 1000 random masks plus the degenerate ones.
    for i in 0..1000 {
        let w = rng.gen_range(1..=32);
        let h = rng.gen_range(1..=32);
        let density = match i % 10 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen_range(0.0..=1.0),
        };
        let pixels: Vec<u8> = (0..w * h).map(|_| u8::from(rng.gen_bool(density))).collect();
        let mask = Mask::encode(&pixels, w, h).unwrap();
        assert_eq!(mask.decode(), pixels);
        let parsed = Mask::from_rle_string(&mask.to_rle_string(), w, h).unwrap();
        assert_eq!(parsed, mask);
    }
    report(
        4,
        "mask adjacency matches the pixel-distance oracle; RLE codec round-trips",
        true,
        "200 adjacency pairs exact, 1000 codec round trips incl. all-zero/all-one",
    );
}

#[test]
fn criterion_5_metrics_oracles() {
    let ontology = Ontology::shipped_default();
    let mut rng = ChaCha8Rng::seed_from_u64(1005);

    // 500 random single-label classification instances against a naive
    // confusion-count oracle, plus the micro == accuracy identity.
    for _ in 0..500 {
        let k = rng.gen_range(2..7);
        let n = rng.gen_range(1..40);
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let gts: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let report_ = evaluate_classification(&preds, &gts, k).unwrap();

        let mut oracle = vec![Counts::default(); k];
        let mut correct = 0u64;
        for (&p, &g) in preds.iter().zip(&gts) {
            if p == g {
                oracle[p].tp += 1;
                correct += 1;
            } else {
                oracle[p].fp += 1;
                oracle[g].fn_ += 1;
            }
        }
        for c in 0..k {
            let got = &report_.counts[&format!("{c}")];
            assert_eq!((got.tp, got.fp, got.fn_), (oracle[c].tp, oracle[c].fp, oracle[c].fn_));
            if let (Some(a), Some(b)) = (report_.per_class_f1[&format!("{c}")], oracle[c].f1()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let accuracy = correct as f64 / n as f64;
        assert!((report_.micro_f1 - accuracy).abs() < 1e-9, "micro == accuracy");
    }

    // 500 random relation instances: frames with one tool-anatomy pair and
    // random multi-label sets, checked against explicit set-based counting.
    for _ in 0..500 {
        let n_frames = rng.gen_range(1..8);
        let draw = |rng: &mut ChaCha8Rng| -> BTreeSet<u16> {
            (0..7u16).filter(|_| rng.gen_bool(0.3)).collect()
        };
        let mut spec: Vec<(BTreeSet<u16>, BTreeSet<u16>, bool, bool)> = Vec::new();
        for _ in 0..n_frames {
            spec.push((draw(&mut rng), draw(&mut rng), rng.gen_bool(0.5), rng.gen_bool(0.5)));
        }
        let mk = |pred_side: bool| -> Vec<FrameSceneGraph> {
            spec.iter()
                .enumerate()
                .map(|(i, (p, g, p_close, g_close))| {
                    let labels = if pred_side { p } else { g };
                    let close = if pred_side { *p_close } else { *g_close };
                    let grounding = Grounding {
                        cx: 0.5,
                        cy: 0.5,
                        area: 0.1,
                        bbox: [0.4, 0.4, 0.6, 0.6],
                        mask: None,
                    };
                    let mut relations: Vec<RelationInstance> = labels
                        .iter()
                        .map(|&slot| RelationInstance { sub: 11, obj: 6, pred: PredicateId(slot) })
                        .collect();
                    if close {
                        relations.push(RelationInstance { sub: 6, obj: 11, pred: PredicateId(7) });
                        relations.push(RelationInstance { sub: 11, obj: 6, pred: PredicateId(7) });
                    }
                    FrameSceneGraph {
                        video_id: "m".into(),
                        frame_idx: i,
                        time_s: 0.0,
                        phase: PhaseId(0),
                        technique: TechniqueId(0),
                        entities: vec![
                            Entity { id: 6, class: ClassId(6), grounding: grounding.clone() },
                            Entity { id: 11, class: ClassId(11), grounding },
                        ],
                        relations,
                    }
                })
                .collect()
        };
        let got = evaluate_relations(&mk(true), &mk(false), &ontology).unwrap();

        // Oracle: per frame, one semantic item (11 -> 6) and one close_to
        // item {6, 11}.
        let mut oracle: BTreeMap<String, Counts> = BTreeMap::new();
        for (p, g, p_close, g_close) in &spec {
            for slot in 0..7u16 {
                let name = ontology.predicates()[slot as usize].name.clone();
                let c = oracle.entry(name).or_default();
                match (p.contains(&slot), g.contains(&slot)) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => {}
                }
            }
            let none = oracle.entry(NONE_CLASS.into()).or_default();
            match (p.is_empty(), g.is_empty()) {
                (true, true) => none.tp += 1,
                (true, false) => none.fp += 1,
                (false, true) => none.fn_ += 1,
                (false, false) => {}
            }
            match (*p_close, *g_close) {
                (true, true) => oracle.entry("close_to".into()).or_default().tp += 1,
                (true, false) => {
                    oracle.entry("close_to".into()).or_default().fp += 1;
                    oracle.entry(NONE_CLASS.into()).or_default().fn_ += 1;
                }
                (false, true) => {
                    oracle.entry("close_to".into()).or_default().fn_ += 1;
                    oracle.entry(NONE_CLASS.into()).or_default().fp += 1;
                }
                (false, false) => oracle.entry(NONE_CLASS.into()).or_default().tp += 1,
            }
        }
        for (name, expected) in &oracle {
            let actual = &got.counts[name];
            assert_eq!(
                (actual.tp, actual.fp, actual.fn_),
                (expected.tp, expected.fp, expected.fn_),
                "class {name}"
            );
            if let (Some(a), Some(b)) = (got.per_class_f1[name], expected.f1()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
    report(
        5,
        "relation and classification metrics match naive confusion oracles",
        true,
        "1000 random instances within 1e-9; micro F1 equals accuracy",
    );
}

#[test]
fn criterion_6_gradient_checks() {
    let ontology = Ontology::shipped_default();
    let mut rng = ChaCha8Rng::seed_from_u64(1006);

    // Relation heads at D=8, H=8: joint BCE loss over both heads.
    let tcfg = RelTrainConfig {
        hidden_existence: 8,
        hidden_classification: (8, 8),
        ..Default::default()
    };
    let heads = RelHeads::init(8, &tcfg, &ontology, 6);
    let pair: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let e_target = 1.0;
    let c_targets: Vec<f64> = (0..7).map(|_| f64::from(rng.gen_bool(0.4))).collect();

    let mut rel_err: f64 = 0.0;
    for head in 0..2 {
        let mlp = if head == 0 { &heads.existence } else { &heads.classification };
        let loss_of = |m: &Mlp| -> f64 {
            let logits = m.forward(&pair);
            if head == 0 {
                bce_with_logit(logits[0], e_target).0
            } else {
                logits
                    .iter()
                    .zip(&c_targets)
                    .map(|(&z, &t)| bce_with_logit(z, t).0)
                    .sum()
            }
        };
        let mut cache = Mlp::new_cache();
        let logits = mlp.forward_cached(&pair, &mut cache);
        let grad_logits: Vec<f64> = if head == 0 {
            vec![bce_with_logit(logits[0], e_target).1]
        } else {
            logits
                .iter()
                .zip(&c_targets)
                .map(|(&z, &t)| bce_with_logit(z, t).1)
                .collect()
        };
        let mut grads = mlp.zero_grads();
        mlp.backward(&cache, &grad_logits, &mut grads);
        let analytic = Mlp::grads_flat(&grads);
        let numeric = numeric_gradient(
            |p| {
                let mut m = mlp.clone();
                m.set_params_flat(p);
                loss_of(&m)
            },
            &mlp.params_flat(),
            1e-6,
        );
        rel_err = rel_err.max(max_relative_error(&analytic, &numeric));
    }
    let heads_pass = rel_err <= 1e-4;

    // Tiny graph classifier (hidden 8, 2 heads) on a random window graph.
    let model = GraphClassifier::init(4, false, 8, 2, 3, 11);
    let n = 5;
    let features: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen_bool(0.4) {
                neighbors[i].push(j);
            }
        }
        neighbors[i].sort_unstable();
    }
    let label = 2;
    let mut cache = model.new_cache();
    let logits = model.forward(&features, &neighbors, Some(&mut cache)).unwrap();
    let (_, grad_logits) = cross_entropy_with_logits(&logits, label);
    let mut grads = model.zero_grads();
    model.backward(&cache, &neighbors, &grad_logits, &mut grads);
    let analytic = GraphClassifier::grads_flat(&grads);
    let numeric = numeric_gradient(
        |p| {
            let mut m = model.clone();
            m.set_params_flat(p);
            let logits = m.forward(&features, &neighbors, None).unwrap();
            cross_entropy_with_logits(&logits, label).0
        },
        &model.params_flat(),
        1e-5,
    );
    let gnn_err = max_relative_error(&analytic, &numeric);
    let gnn_pass = gnn_err <= 1e-3;

    report(
        6,
        "finite-difference gradient checks on relation heads and graph classifier",
        heads_pass && gnn_pass,
        &format!("heads max rel err {rel_err:.2e} (<= 1e-4), classifier {gnn_err:.2e} (<= 1e-3)"),
    );
}

#[test]
fn criterion_7_learning_sanity() {
    let (ontology, cfg, videos) = dataset();
    let (train_videos, test_videos) = stratified_split(videos, 0.7);
    let start = Instant::now();

    let run = |sigma: f64| -> (f64, f64) {
        let provider = SyntheticQueryProvider::new(cfg, ontology)
            .unwrap()
            .with_noise(sigma);
        let tcfg = RelTrainConfig {
            seed: 1,
            ..Default::default()
        };
        let heads = RelHeads::init(cfg.embed_dim, &tcfg, ontology, 1);
        let (heads, _) = train(heads, &provider, &train_videos, &tcfg, ontology).unwrap();
        let mut all_pred = Vec::new();
        let mut all_gt = Vec::new();
        for video in &test_videos {
            let (graphs, _) = predict_video_graphs(
                &heads,
                &provider,
                video,
                Variant::CatSgg,
                cfg.chunk_size,
                cfg.close_gap,
                ontology,
            )
            .unwrap();
            all_pred.extend(graphs);
            all_gt.extend(video.frames.iter().cloned());
        }
        let report = evaluate_relations(&all_pred, &all_gt, ontology).unwrap();
        (report.macro_f1, report.micro_f1)
    };

    let (clean, clean_micro) = run(0.0);
    let (noisy, _) = run(cfg.noise_sigma);
    let elapsed = start.elapsed();
    report(
        7,
        "trained CatSGG reaches macro F1 >= 0.90 clean / >= 0.70 at default noise on held-out videos",
        clean >= 0.90 && clean_micro >= 0.99 && noisy >= 0.70 && elapsed.as_secs() < 600,
        &format!(
            "clean macro {clean:.4} micro {clean_micro:.4}, noisy (sigma {}) macro {noisy:.4}, in {elapsed:?}",
            cfg.noise_sigma
        ),
    );
}

#[test]
fn criterion_8_temporal_and_spatial_effects() {
    let (ontology, _, videos) = dataset();
    let (train_videos, test_videos) = stratified_split(videos, 0.7);

    let phase_cfg = |window: WindowConfig, epochs: usize| TaskConfig {
        epochs,
        hidden: 32,
        attention_heads: 2,
        train_stride: 6,
        eval_stride: 6,
        seed: 7,
        ..TaskConfig::new(Task::Phase, window)
    };
    let run_phase = |cfg: &TaskConfig| -> f64 {
        let (model, _) = train_task(&train_videos, &test_videos, cfg, ontology).unwrap();
        evaluate_task(&model, &test_videos, cfg, ontology)
            .unwrap()
            .window_report
            .accuracy
            .unwrap()
    };
    let single_acc = run_phase(&phase_cfg(WindowConfig::single(true), 20));
    let windowed_acc = run_phase(&phase_cfg(WindowConfig::w30_s90(true), 14));

    // Technique training sits on a loss plateau for several epochs before
    // the trajectory signal aligns; 30 epochs at this rate is well past
    // breakthrough.
    let tech_cfg = |spatial: bool| TaskConfig {
        epochs: 30,
        lr: 6e-3,
        hidden: 32,
        attention_heads: 2,
        train_stride: 2,
        eval_stride: 2,
        seed: 1,
        ..TaskConfig::new(Task::Technique, WindowConfig::tech_10s_5fps(spatial))
    };
    let run_tech = |cfg: &TaskConfig| -> f64 {
        let (model, _) = train_task(&train_videos, &test_videos, cfg, ontology).unwrap();
        evaluate_task(&model, &test_videos, cfg, ontology)
            .unwrap()
            .window_report
            .macro_f1
    };
    let spatial_on = run_tech(&tech_cfg(true));
    let spatial_off = run_tech(&tech_cfg(false));

    report(
        8,
        "30-slot window beats single frame on phases; spatial features do not hurt technique F1",
        windowed_acc > single_acc && windowed_acc >= 0.70 && spatial_on >= spatial_off,
        &format!(
            "phase acc single {single_acc:.4} < windowed {windowed_acc:.4}; \
             technique F1 spatial-on {spatial_on:.4} >= off {spatial_off:.4}"
        ),
    );
}

#[test]
fn criterion_9_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let catsg = env!("CARGO_BIN_EXE_catsg");

    // Full default generation, twice, via the binary.
    let out1 = tmp.path().join("d1");
    let out2 = tmp.path().join("d2");
    for out in [&out1, &out2] {
        let status = Command::new(catsg)
            .args(["generate", "--seed", "42", "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let same_data = dir_hash(&out1) == dir_hash(&out2);
    let n_videos = std::fs::read_dir(&out1)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("video_")
        })
        .count();
    assert_eq!(n_videos, 10, "default config writes 10 JSONL videos");
    assert!(out1.join("stats.json").exists());

    // Training twice with one seed yields identical loss logs (small run
    // via the binary so the whole command path is covered).
    let mut sim = SimConfig::with_seed(11);
    sim.n_videos = 2;
    sim.duration_s = (60, 70);
    let sim_path = tmp.path().join("sim.json");
    std::fs::write(&sim_path, serde_json::to_string(&sim).unwrap()).unwrap();
    let small = tmp.path().join("small");
    assert!(Command::new(catsg)
        .args(["generate", "--config"])
        .arg(&sim_path)
        .arg("--out")
        .arg(&small)
        .status()
        .unwrap()
        .success());
    let mut logs = Vec::new();
    for run in ["r1", "r2"] {
        let out = tmp.path().join(run);
        let status = Command::new(catsg)
            .args(["train-rel", "--data"])
            .arg(&small)
            .arg("--out")
            .arg(&out)
            .args(["--seed", "9", "--epochs", "3", "--split", "all"])
            .status()
            .unwrap();
        assert!(status.success());
        let run_dir = std::fs::read_dir(&out).unwrap().next().unwrap().unwrap().path();
        logs.push(std::fs::read(run_dir.join("train_log.json")).unwrap());
    }
    let same_logs = logs[0] == logs[1];

    report(
        9,
        "generation and training are bit-deterministic per seed",
        same_data && same_logs,
        &format!("dataset hashes equal: {same_data}; loss logs identical: {same_logs}"),
    );
}

#[test]
fn criterion_10_serialization() {
    let (ontology, _, videos) = dataset();
    let tmp = tempfile::tempdir().unwrap();
    for video in videos {
        let path = tmp.path().join(format!("{}.jsonl", video.video_id));
        write_jsonl(video, &path).unwrap();
        let back = read_jsonl(&path, ontology).unwrap();
        assert!(back.approx_eq(video, 1e-9), "round trip {}", video.video_id);
    }

    // Exact prompt template.
    let cornea = ontology.class_by_name("Cornea").unwrap().id;
    let frame = FrameSceneGraph {
        video_id: "p".into(),
        frame_idx: 0,
        time_s: 0.0,
        phase: PhaseId(0),
        technique: TechniqueId(0),
        entities: vec![Entity {
            id: 0,
            class: cornea,
            grounding: Grounding {
                cx: 0.5,
                cy: 0.5,
                area: 0.3,
                bbox: [0.2, 0.2, 0.8, 0.8],
                mask: None,
            },
        }],
        relations: vec![],
    };
    let text = to_prompt(&frame, &[], true, ontology);
    let template_ok = text == "Step 0:\nCornea at (0.50, 0.50) with size 0.30\n";

    report(
        10,
        "JSONL round-trip identity over the full dataset; exact prompt template",
        template_ok,
        &format!("{} videos round-tripped; template line verified", videos.len()),
    );
}

fn dir_hash(dir: &Path) -> u64 {
    let mut entries: Vec<(String, Vec<u8>)> = Vec::new();
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    walk(dir, dir, &mut entries);
    entries.sort();
    let mut bytes = Vec::new();
    for (name, content) in entries {
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&content);
    }
    catsg_core::ontology::fnv1a(&bytes)
}
