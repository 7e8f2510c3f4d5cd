"""Smoke test for the eta_grasp extension module.

Build and install first:

    pip install --no-build-isolation ./crates/py
    python python/smoke_test.py
"""

import json
import math
import tempfile
from pathlib import Path

import eta_grasp as eg


def check_geometry():
    a = eg.GraspRect(0.0, 0.0, 10.0, 0.0)
    assert a.vertices() == [(-5.0, -2.5), (5.0, -2.5), (5.0, 2.5), (-5.0, 2.5)]
    assert abs(eg.rect_iou(a, a) - 1.0) < 1e-12
    b = eg.GraspRect(0.0, 0.0, 10.0, math.pi / 2)
    assert abs(a.iou(b) - 1.0 / 3.0) < 1e-9
    assert abs(eg.angle_diff(1.5, -1.5) - (math.pi - 3.0)) < 1e-12
    hull = eg.convex_hull([(0, 0), (2, 0), (2, 2), (0, 2), (1, 1), (1, 0)])
    assert sorted(hull) == [(0, 0), (0, 2), (2, 0), (2, 2)]
    try:
        eg.GraspRect(0, 0, -1, 0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative width accepted")


def check_scoring():
    assert eg.qa_score(30, 61) == 5.0
    assert eg.decide(4.0, 4.0) == "grasp"
    assert eg.decide(3.999, 4.0) == "explore"
    assert eg.decide(None) == "explore"
    assert eg.ee(4) == 25.0
    iou, angle, ok = eg.judge(eg.GraspRect(5, 5, 20, 0.1), [eg.GraspRect(5, 5, 20, 0.0)])
    assert ok and angle < 6.0 and iou > 0.25


def check_cornell():
    rects = [eg.GraspRect(50, 60, 12, 0.4), eg.GraspRect(10, 20, 30, -1.2)]
    back, warnings = eg.parse_cornell(eg.format_cornell(rects))
    assert not warnings
    for r, s in zip(rects, back):
        assert abs(r.x - s.x) < 1e-6 and abs(r.w - s.w) < 1e-6
    parsed, warnings = eg.parse_cornell("1 1\n2 1\n2 2\n1 2\nnan nan\n0 0\n1 0\n1 1\n")
    assert len(parsed) == 1 and len(warnings) == 1


def check_pipeline():
    cfg = eg.Config(
        """
seeds = [0]
objects_per_family = 2
heldout_per_family = 1
methods = ["baseline", "eta_multi"]
[detector]
pretrain_scenes = 6
pretrain_views = [0, 5]
"""
    )
    cfg.validate()
    assert len(cfg.hash()) == 64

    scene = eg.Scene.generate("handle", 3, cfg)
    assert scene.family == "handle" and scene.num_viewpoints == 16
    assert eg.Scene.from_json(scene.to_json()).optimal_observation == scene.optimal_observation
    assert len(scene.depth(0)) == 224 and scene.gt_grasps(5)

    det = eg.Detector.pretrained(cfg)
    preds = det.predict(scene, 5, top_n=3)
    assert len(preds) == 3 and preds[0].q >= preds[-1].q
    with tempfile.TemporaryDirectory() as d:
        path = str(Path(d) / "det.json")
        det.save(path)
        assert eg.Detector.load(path).num_weights == det.num_weights

    agent = eg.Agent(det, cfg, "eta_multi")
    row = agent.episode(scene, 0)
    assert 1 <= row["sg"] <= 16 and abs(row["ee"] * row["sg"] - 100.0) < 1e-9
    assert agent.pool_size <= 1
    assert 0 <= agent.initial_observation(eg.Scene.generate("handle", 4, cfg)) < 4

    report = eg.run_benchmark(cfg)
    summary = json.loads(report.summary_json())
    assert {s["method"] for s in summary["summaries"]} == {"baseline", "eta_multi"}
    assert report.accuracy("eta_multi") is not None
    assert report.episodes_csv().startswith("seed,method,episode")
    assert "family,method" in report.plot_csv()


def main():
    check_geometry()
    check_scoring()
    check_cornell()
    check_pipeline()
    print("eta_grasp smoke test passed")


if __name__ == "__main__":
    main()
