import dataclasses

import pytest

from simip.evaluation import (
    CAUSES,
    ExperimentConfig,
    Level,
    MethodSpec,
    classify_failures,
    run,
    score_plan,
    trend_check,
)
from simip.perception import MILD, CorruptionConfig, perceive, scaled
from simip.planner import PlannerConfig, plan_scene
from simip.scenegen import GenConfig, generate_scene

SMALL = GenConfig(size=(512, 384), initial_in_box=(0, 1), spare_compartments=2)


@pytest.fixture(scope="module")
def small_report():
    cfg = ExperimentConfig(dataset=SMALL, n_scenes=16, steps=[0, 1, 2, 3, 4, 5, 7, 0], repetitions=2,
                           methods=[MethodSpec("oracle", "exhaustive"), MethodSpec("ours"),
                                    MethodSpec("baseline", "baseline")],
                           levels=[Level("clean"), Level("mild", MILD)])
    return run(cfg)


def test_oracle_exhaustive_is_perfect(small_report):
    r = small_report
    for c in range(8):
        rates = r.length_rates("oracle", "clean", c)
        assert all(v == 100.0 for v in rates if v is not None)
    assert r.total("oracle", "clean") == 100.0
    assert classify_failures(r, "oracle", "clean") == {c: 0 for c in CAUSES}
    assert not r.errors()


def test_baseline_zero_step_column_is_dashed(small_report):
    r = small_report
    assert r.length_rates("baseline", "clean", 0) == [None, None]
    row = [ln for ln in r.to_text().splitlines() if ln.startswith("baseline / clean")][0]
    assert row.split()[3] == "--"


def test_tables_are_consistent(small_report):
    r = small_report
    assert sum(r.cases(c) for c in range(8)) == 16 * 2
    for m, lv in r.rows():
        outs = [o for o in r.outcomes if o.method == m and o.level == lv]
        n_steps = sum(len(o.steps) for o in outs)
        assert sum(r.step_cases(m, lv, k) for k in range(1, 8)) == n_steps
        failed = sum(not s.success for o in outs for s in o.steps)
        assert sum(r.failures(m, lv).values()) == failed
        for o in outs:
            if o.success:
                assert all(s.success for s in o.steps) and len(o.steps) >= o.required
            for s in o.steps:
                assert s.success == (s.cause is None)
                assert s.cause is None or s.cause in CAUSES


def test_outcomes_are_deterministic():
    cfg = ExperimentConfig(dataset=SMALL, n_scenes=4, steps=[2, 3], seed=3,
                           methods=[MethodSpec("ours"), MethodSpec("baseline", "baseline")],
                           levels=[Level("mild", scaled(MILD, 2.0))])

    def key(o):
        return (o.rep, o.scene, o.method, o.level, o.success,
                [(s.index, s.success, s.cause) for s in o.steps])

    assert list(map(key, run(cfg).outcomes)) == list(map(key, run(cfg).outcomes))


def test_report_files(small_report, tmp_path):
    small_report.write(tmp_path)
    text = (tmp_path / "report.txt").read_text()
    assert "Success by plan length" in text and "Success by step index" in text
    assert "7+ steps" in text and "Step 7+" in text
    rows = (tmp_path / "report.csv").read_text().splitlines()
    assert rows[0] == "table,method,level,column,cases,mean,sd"
    assert any(r.startswith("length,baseline,clean,0,") and r.endswith(",,") for r in rows)


def test_config_from_dict():
    d = {"dataset": {"size": [512, 384], "stack_prob": 0.3}, "n_scenes": 4, "steps": [1, 2],
         "methods": [{"name": "ours"}, {"name": "nocomp", "completion": False},
                     {"name": "rand", "kind": "baseline"}],
         "levels": [{"name": "oracle", "oracle": True}, {"name": "mild", "strength": 1.0},
                    {"name": "split", "split_prob": 0.3}],
         "planner": {"rotation_step": 30}, "repetitions": 2}
    cfg = ExperimentConfig.from_dict(d)
    assert cfg.dataset.stack_prob == 0.3 and cfg.planner.rotation_step == 30
    assert cfg.levels[0].corruption is None
    assert cfg.levels[1].corruption == scaled(MILD, 1.0)
    assert cfg.levels[2].corruption == CorruptionConfig(split_prob=0.3)
    assert not cfg.methods[1].completion and cfg.methods[2].kind == "baseline"
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"folds": 5})
    with pytest.raises(ValueError):
        MethodSpec("x", kind="astar")


def test_score_plan_attributes_split_to_detection():
    g = generate_scene(dataclasses.replace(SMALL, seed=3, n_objects=(3, 3)), n_outside=3)
    b = perceive(g.scene, g.poses, CorruptionConfig(split_prob=1.0, seed=1))
    _, p = plan_scene(b.scene, b.poses, PlannerConfig(seed=1))
    steps, ok = score_plan(g.scene, g.poses, b, p)
    assert not ok
    assert any(s.cause == "detection" for s in steps)
    assert all(s.cause != "affordance" for s in steps)


def test_score_plan_oracle_belief_reproduces_truth():
    g = generate_scene(dataclasses.replace(SMALL, seed=8, stack_prob=0.5), n_outside=4)
    b = perceive(g.scene, g.poses)
    _, p = plan_scene(b.scene, b.poses, PlannerConfig(mode="exhaustive"))
    steps, ok = score_plan(g.scene, g.poses, b, p)
    assert ok and len(steps) == 4 and all(s.success for s in steps)


def test_completion_matters_without_corruption():
    cfg = ExperimentConfig(dataset=dataclasses.replace(SMALL, stack_prob=0.6, overlap_prob=0.8),
                           n_scenes=24, steps=[3, 4, 5],
                           methods=[MethodSpec("ours"), MethodSpec("nocomp", completion=False)],
                           levels=[Level("clean")], seed=4)
    r = run(cfg)
    assert r.total("nocomp", "clean") < r.total("ours", "clean")


def test_trend_check_reports_every_assertion(small_report):
    res = trend_check(small_report)
    names = [t.name for t in res]
    assert "levels" in names  # only two levels configured
    assert any(n.startswith("baseline <= ours") for n in names)
    for t in res:
        if t.name.startswith("baseline <="):
            assert t.passed
