use std::f64::consts::FRAC_PI_2;

use proptest::prelude::*;

use eta_core::adaptation::{adapt_detector, AdaptationConfig, Adapter};
use eta_core::assessment::{passes_embodied, passes_primary, EmbodiedParams};
use eta_core::detector::{CellGrid, HeuristicDetector, ParametricDetector};
use eta_core::exploration::{run_episode, EpisodeContext, ExplorationConfig, Strategy as Explore};
use eta_core::geometry::{polygon_centroid, GraspRect};
use eta_core::harness::{format_cornell_rects, judge, parse_cornell_str, BenchmarkConfig};
use eta_core::knowledge::{
    FeatureVector, KnowledgePool, KnowledgeSnapshot, OpNet, Retrieval, FEATURE_DIM,
};
use eta_core::scene::{
    generate_scene, is_solvable, render, Family, OracleSegmenter, Scene, SceneSpec, Segmenter,
};

fn family() -> impl proptest::strategy::Strategy<Value = Family> {
    prop_oneof![
        Just(Family::Handle),
        Just(Family::Disk),
        Just(Family::Box),
        Just(Family::Wedge),
        Just(Family::Hexagon),
        Just(Family::Block),
    ]
}

fn strategy() -> impl proptest::strategy::Strategy<Value = Explore> {
    prop::sample::select(Explore::ALL.to_vec())
}

fn scene(f: Family, seed: u64) -> Scene {
    generate_scene(&SceneSpec::single(f), seed).unwrap()
}

fn empty_knowledge() -> (KnowledgePool, OpNet) {
    (
        KnowledgePool::new(FEATURE_DIM, 4),
        OpNet::seeded(FEATURE_DIM, 32, 4, 0),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rendering_is_pure_and_gt_judges_itself(f in family(), seed in 0u64..500, t in 0usize..16) {
        let s = scene(f, seed);
        let a = render(&s, t).unwrap();
        let b = render(&s, t).unwrap();
        prop_assert_eq!(&a, &b);
        for g in s.target().gt_in_view(&a.camera) {
            let j = judge(&g, &[g]).unwrap();
            prop_assert!(j.success);
            prop_assert!((j.iou - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn generated_scenes_are_solvable(f in family(), seed in 0u64..500) {
        prop_assert!(is_solvable(&scene(f, seed), &EmbodiedParams::default()).unwrap());
    }

    #[test]
    fn episodes_terminate_and_leave_detector_frozen(
        f in family(),
        seed in 0u64..300,
        strat in strategy(),
        eps in 1.0..60.0f64,
    ) {
        let s = scene(f, seed);
        let det = ParametricDetector::random(CellGrid::for_resolution(224, 8), 100.0, seed, 0.5);
        let before = det.weights().to_vec();
        let (pool, net) = empty_knowledge();
        let ctx = EpisodeContext { detector: &det, segmenter: &OracleSegmenter, pool: &pool, opnet: &net };
        let cfg = ExplorationConfig { epsilon: eps, ..Default::default() };
        let r = run_episode(&s, &ctx, &cfg, strat, seed).unwrap();
        prop_assert!(r.sg >= 1 && r.sg <= s.trajectory.len());
        prop_assert_eq!(r.ee * r.sg as f64, 100.0);
        prop_assert_eq!(det.weights(), &before[..]);
    }

    #[test]
    fn retained_samples_pass_every_gate(f in family(), seed in 0u64..300, eps in 2.0..8.0f64) {
        let s = scene(f, seed);
        let det = HeuristicDetector::default();
        let (pool, net) = empty_knowledge();
        let ctx = EpisodeContext { detector: &det, segmenter: &OracleSegmenter, pool: &pool, opnet: &net };
        let cfg = ExplorationConfig { epsilon: eps, ..Default::default() };
        let r = run_episode(&s, &ctx, &cfg, Explore::Kr, seed).unwrap();
        for sample in &r.retained {
            let obs = &sample.observation;
            let hull = OracleSegmenter.segment(obs).unwrap();
            let centroid = polygon_centroid(&hull).unwrap();
            for g in &sample.targets {
                prop_assert!(passes_embodied(g, &obs.depth, &obs.camera, &cfg.embodied));
                prop_assert!(passes_primary(g, &obs.mask, &hull));
                prop_assert!(cfg.qa.score(g.center().dist(centroid), g.w) >= eps);
            }
        }
    }

    #[test]
    fn single_view_only_sees_viewpoint_zero(f in family(), seed in 0u64..300, strat in strategy()) {
        let s = scene(f, seed);
        let (pool, net) = empty_knowledge();
        let ctx = EpisodeContext { detector: &HeuristicDetector::default(), segmenter: &OracleSegmenter, pool: &pool, opnet: &net };
        let cfg = ExplorationConfig { single_view: true, epsilon: 1e9, ..Default::default() };
        let r = run_episode(&s, &ctx, &cfg, strat, seed).unwrap();
        prop_assert!(r.trace.iter().all(|row| row.viewpoint == 0));
        prop_assert_eq!(r.sg, 1);
    }

    #[test]
    fn default_adaptation_never_raises_batch_loss(f in family(), seed in 0u64..300) {
        let s = scene(f, seed);
        let mut det = ParametricDetector::random(CellGrid::for_resolution(224, 8), 100.0, seed, 0.3);
        let (pool, net) = empty_knowledge();
        let result = {
            let ctx = EpisodeContext { detector: &HeuristicDetector::default(), segmenter: &OracleSegmenter, pool: &pool, opnet: &net };
            run_episode(&s, &ctx, &ExplorationConfig::default(), Explore::Kr, seed).unwrap()
        };
        prop_assume!(!result.retained.is_empty());
        let cfg = AdaptationConfig::default();
        let r = adapt_detector(&mut det, &result.retained, cfg.steps, cfg.lr).unwrap();
        prop_assert!(r.post_loss <= r.pre_loss + 1e-9);
    }
}

proptest! {
    #[test]
    fn retrieval_is_scale_invariant(
        q in prop::collection::vec(-1.0..1.0f64, FEATURE_DIM),
        entries in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, FEATURE_DIM), 1..8),
        k in 0.01..100.0f64,
        thr in -1.0..1.0f64,
    ) {
        let mut pool = KnowledgePool::new(FEATURE_DIM, 4);
        for (i, e) in entries.iter().enumerate() {
            pool.insert_entry(FeatureVector::new(e.clone()).unwrap(), i % 4, i as u64, None).unwrap();
        }
        let a = pool.retrieve(&FeatureVector::new(q.clone()).unwrap(), thr);
        let b = pool.retrieve(&FeatureVector::new(q.iter().map(|v| v * k).collect()).unwrap(), thr);
        match (a, b) {
            (Retrieval::Known { index: i, similarity: s }, Retrieval::Known { index: j, similarity: t }) => {
                prop_assert_eq!(i, j);
                prop_assert!((s - t).abs() < 1e-9);
            }
            (Retrieval::Novel, Retrieval::Novel) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn opnet_prediction_in_range(x in prop::collection::vec(-5.0..5.0f64, FEATURE_DIM), seed in 0u64..100) {
        let net = OpNet::seeded(FEATURE_DIM, 32, 4, seed);
        prop_assert!(net.predict_observation(&FeatureVector::new(x).unwrap()).unwrap() < 4);
    }

    #[test]
    fn pool_snapshot_round_trips(
        entries in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, FEATURE_DIM), 1..6),
        q in prop::collection::vec(-1.0..1.0f64, FEATURE_DIM),
    ) {
        let mut pool = KnowledgePool::new(FEATURE_DIM, 4);
        for (i, e) in entries.iter().enumerate() {
            pool.insert_entry(FeatureVector::new(e.clone()).unwrap(), i % 4, i as u64, Some(format!("o{i}"))).unwrap();
        }
        let snap = KnowledgeSnapshot::new(pool, OpNet::seeded(FEATURE_DIM, 32, 4, 1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.json");
        snap.save(&path).unwrap();
        let back = KnowledgeSnapshot::load(&path).unwrap();
        prop_assert_eq!(&back, &snap);
        let q = FeatureVector::new(q).unwrap();
        prop_assert_eq!(back.pool.retrieve(&q, 0.5), snap.pool.retrieve(&q, 0.5));
    }

    #[test]
    fn cornell_round_trip(
        rects in prop::collection::vec((0.0..640.0f64, 0.0..480.0f64, 0.5..150.0f64, -FRAC_PI_2..FRAC_PI_2), 1..20),
    ) {
        let rs: Vec<GraspRect> = rects.iter().map(|&(x, y, w, phi)| GraspRect { x, y, w, phi, q: 1.0 }).collect();
        let back = parse_cornell_str(&format_cornell_rects(&rs));
        prop_assert!(back.warnings.is_empty());
        prop_assert_eq!(back.rects.len(), rs.len());
        for (a, b) in rs.iter().zip(&back.rects) {
            prop_assert!((a.x - b.x).abs() < 1e-6 && (a.y - b.y).abs() < 1e-6 && (a.w - b.w).abs() < 1e-6);
            prop_assert!(eta_core::geometry::angle_diff(a.phi, b.phi).unwrap() < 1e-6);
        }
    }

    #[test]
    fn config_survives_toml(eps in 0.5..20.0f64, seeds in prop::collection::vec(0u64..1000, 1..5), every in 1usize..10) {
        let mut cfg = BenchmarkConfig { seeds, ..Default::default() };
        cfg.exploration.epsilon = eps;
        cfg.adaptation.every = every;
        let back = BenchmarkConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn adapted_stream_is_deterministic() {
    let run = || {
        let mut det = ParametricDetector::random(CellGrid::for_resolution(224, 8), 100.0, 4, 0.3);
        let (mut pool, mut net) = empty_knowledge();
        let mut adapter = Adapter::new(AdaptationConfig {
            steps: 20,
            ..Default::default()
        })
        .unwrap();
        let mut out = Vec::new();
        for (i, f) in [Family::Handle, Family::Disk, Family::Handle, Family::Box]
            .into_iter()
            .enumerate()
        {
            let s = scene(f, 70 + i as u64);
            let r = {
                let ctx = EpisodeContext {
                    detector: &HeuristicDetector::default(),
                    segmenter: &OracleSegmenter,
                    pool: &pool,
                    opnet: &net,
                };
                run_episode(
                    &s,
                    &ctx,
                    &ExplorationConfig::default(),
                    Explore::Kr,
                    i as u64,
                )
                .unwrap()
            };
            let rep = adapter.observe(&mut det, &mut pool, &mut net, &r).unwrap();
            assert!(rep.pool_growth <= 1);
            out.push((r.sg, r.start_group, rep.post_loss, rep.opnet_loss));
        }
        (out, det.weights().to_vec(), pool.len())
    };
    assert_eq!(run(), run());
}
