use eta_core::harness::{
    plot_rows, read_episode_rows, run_benchmark, sweep_epsilon, BenchmarkConfig, Method,
};

fn small() -> BenchmarkConfig {
    let mut cfg = BenchmarkConfig {
        seeds: vec![0, 1, 2],
        objects_per_family: 4,
        heldout_per_family: 2,
        ..Default::default()
    };
    cfg.detector.pretrain_scenes = 18;
    cfg.finetune.scenes = 18;
    cfg
}

#[test]
fn method_ordering_and_report_bookkeeping() {
    let cfg = small();
    let report = run_benchmark(&cfg).unwrap();
    let acc = |m| report.accuracy(m).unwrap();
    assert!(acc(Method::Baseline) <= acc(Method::EtaMulti));
    assert!(acc(Method::EtaSingle) <= acc(Method::EtaMulti));
    assert!(acc(Method::EtaMulti) <= acc(Method::FinetuneGt));

    let base = acc(Method::Baseline);
    for s in &report.summaries {
        let rows: Vec<_> = report
            .rows
            .iter()
            .filter(|r| r.method == s.method)
            .collect();
        let successes = rows.iter().filter(|r| r.success).count();
        assert_eq!(s.episodes, rows.len());
        assert_eq!(s.successes, successes);
        assert_eq!(s.accuracy, 100.0 * (successes as f64 / rows.len() as f64));
        assert_eq!(s.delta_vs_baseline, Some(s.accuracy - base));
        if s.method.single_view() {
            assert!(rows.iter().all(|r| r.sg == 1));
        }
        if let (Some(pre), Some(post)) = (s.heldout_pre, s.heldout_post) {
            assert!(post >= pre, "{}: held-out {pre} -> {post}", s.method);
        }
    }
    assert!(report
        .rows
        .iter()
        .filter(|r| !r.method.adapts())
        .all(|r| r.pool_size == 0));

    let dir = tempfile::tempdir().unwrap();
    report.write_to(dir.path()).unwrap();
    let back = read_episode_rows(dir.path().join("episodes.csv")).unwrap();
    assert_eq!(back.len(), report.rows.len());
    assert_eq!(plot_rows(&back), plot_rows(&report.rows));
}

#[test]
fn sweep_varies_only_epsilon() {
    let mut cfg = small();
    cfg.seeds = vec![4];
    cfg.methods = vec![Method::EtaMulti];
    let entries = sweep_epsilon(&cfg, &[3.0, 5.0]).unwrap();
    let (a, b) = (&entries[0].report, &entries[1].report);
    assert_eq!(a.rows.len(), b.rows.len());
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!((x.scene_seed, &x.object), (y.scene_seed, &y.object));
        assert_eq!((x.epsilon, y.epsilon), (3.0, 5.0));
    }
    assert_ne!(a.config_hash, b.config_hash);
    assert!(sweep_epsilon(&cfg, &[]).is_err());
}

#[test]
fn invalid_config_fails_before_any_episode() {
    let mut cfg = small();
    cfg.exploration.epsilon = f64::NAN;
    assert!(run_benchmark(&cfg).is_err());
    cfg = small();
    cfg.methods.clear();
    assert!(run_benchmark(&cfg).is_err());
}
