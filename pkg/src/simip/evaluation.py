"""Experiments over generated datasets: success tables and failure taxonomy.

Plans are made on the perceived (belief) scene and judged on the ground
truth. Every planned step is carried over to the true scene by displacing the
grasped object by the same vector the plan moved its perceived counterpart,
then re-validated there.
"""

from __future__ import annotations

import csv
import dataclasses
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .imagination import ImaginationError, apply_move, make_move, move_flips, move_object, move_rotation, move_target
from .perception import Belief, CorruptionConfig, MILD, perceive, scaled
from .planner import PlannerConfig, baseline_plan, plan_scene, placement_regions, region_candidates
from .raster import iou
from .scene import Affordance, PoseDictionary, Scene, composite, footprint, outside_box
from .scenegen import GenConfig, generate_scene
from .validation import default_threshold, validate

CAUSES = ("detection", "affordance", "search")


@dataclass(frozen=True)
class MethodSpec:
    """``kind`` is ``greedy``, ``exhaustive`` or ``baseline``."""

    name: str
    kind: str = "greedy"
    completion: bool = True

    def __post_init__(self):
        if self.kind not in ("greedy", "exhaustive", "baseline"):
            raise ValueError(f"unknown method kind {self.kind!r}")


@dataclass(frozen=True)
class Level:
    name: str
    corruption: CorruptionConfig | None = None


@dataclass
class ExperimentConfig:
    dataset: GenConfig = field(default_factory=GenConfig)
    n_scenes: int = 20
    steps: list | None = None
    methods: list = field(default_factory=lambda: [MethodSpec("ours")])
    levels: list = field(default_factory=lambda: [Level("oracle")])
    repetitions: int = 1
    seed: int = 0
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    max_column: int = 7
    workers: int = 1
    out_dir: str | None = None

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ValueError("n_scenes must be >= 1")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.methods or not self.levels:
            raise ValueError("need at least one method and one corruption level")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        if "dataset" in d:
            d["dataset"] = GenConfig.from_dict(d["dataset"])
        if "planner" in d:
            d["planner"] = PlannerConfig.from_dict(d["planner"])
        if "methods" in d:
            d["methods"] = [MethodSpec(**m) for m in d["methods"]]
        if "levels" in d:
            lv = []
            for entry in d["levels"]:
                entry = dict(entry)
                name = entry.pop("name")
                if entry.pop("oracle", False) or not entry:
                    lv.append(Level(name))
                elif "strength" in entry:
                    lv.append(Level(name, scaled(MILD, entry["strength"])))
                else:
                    lv.append(Level(name, CorruptionConfig.from_dict(entry)))
            d["levels"] = lv
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        doc = yaml.safe_load(Path(path).read_text())
        if not isinstance(doc, dict):
            raise ValueError(f"{path} does not hold a mapping")
        return cls.from_dict(doc)


# -- scoring ----------------------------------------------------------------

@dataclass
class StepRecord:
    index: int
    success: bool
    cause: str | None = None
    conflict: int | None = None


@dataclass
class Outcome:
    rep: int
    scene: int
    method: str
    level: str
    required: int
    steps: list
    success: bool
    error: str | None = None


def _gt_move(src: Scene, dst: Scene, move, gid: int):
    """Carry ``move`` from ``src`` over to object ``gid`` of ``dst`` as a displacement."""
    pp = move_target(move)
    b = src.get(move_object(move)).anchor
    g = dst.get(gid).anchor
    target = (g[0] + pp.target[0] - b[0], g[1] + pp.target[1] - b[1])
    return make_move(gid, target, pp.region, move_rotation(move), move_flips(move))


def _touches_unmatched(truth: Scene, gid: int, matched: set) -> bool:
    comp = composite(truth, exclude=truth.subtree(gid))
    fp = footprint(truth, gid)
    hit = fp & comp.channel(Affordance.OBSTRUCT)
    owners = set(np.unique(comp.owner[hit]).tolist()) - {-1}
    return bool(owners - matched)


def score_plan(truth: Scene, poses: PoseDictionary | None, belief: Belief, plan,
               threshold: int | None = None, planner_cfg: PlannerConfig | None = None) -> tuple[list, bool]:
    """Judge a belief-space plan on the ground truth; returns ``(steps, success)``."""
    if threshold is None:
        threshold = default_threshold(truth.width, truth.height)
    per_source: dict = {}
    for bid, gid in belief.source.items():
        if gid is not None:
            per_source.setdefault(gid, []).append(bid)
    matched = {g for g, bs in per_source.items() if len(bs) == 1}
    # a detection is wrong when its label, cardinality or initial footprint disagrees
    wrong = set()
    for bid, gid in belief.source.items():
        if gid is None or not truth.has(gid):
            continue
        bobj, gobj = belief.scene.get(bid), truth.get(gid)
        if (bobj.label is not gobj.label or gid not in matched
                or (iou(footprint(belief.scene, bid), footprint(truth, gid)) or 0.0) < 0.5):
            wrong.add(bid)
    steps = []
    cur = truth
    any_mismatch = False
    nodes = plan.nodes
    for k in range(1, len(nodes)):
        bpre = nodes[k - 1].scene
        move = nodes[k].move
        bid = move_object(move)
        gid = belief.source.get(bid)
        if gid is None or not cur.has(gid):
            steps.append(StepRecord(k, False, "detection"))
            any_mismatch = True
            continue
        mismatch = bid in wrong
        try:
            post = apply_move(cur, _gt_move(bpre, cur, move, gid), poses)
        except ImaginationError:
            any_mismatch |= mismatch
            steps.append(StepRecord(k, False, "detection" if mismatch else "affordance"))
            continue
        res = validate(post, gid, threshold)
        if not res.valid and not mismatch and _touches_unmatched(post, gid, matched):
            mismatch = True
        any_mismatch |= mismatch
        ok = res.valid
        steps.append(StepRecord(k, ok, None if ok else ("detection" if mismatch else "affordance"),
                                res.conflict_pixels))
        cur = post
    goal = not outside_box(cur)
    if not goal:
        steps.append(StepRecord(len(nodes), False,
                                _terminal_cause(cur, poses, belief, plan, matched, any_mismatch,
                                                threshold, planner_cfg)))
    success = goal and all(s.success for s in steps)
    return steps, success


def _terminal_cause(truth: Scene, poses, belief: Belief, plan, matched: set, any_mismatch: bool,
                    threshold: int, planner_cfg: PlannerConfig | None) -> str:
    """Why objects are still outside after the plan ended.

    Unperceived objects make it a detection failure. Otherwise the planner's
    own move generator is run on the true scene: if it finds a valid move
    there, perception hid that move (affordance failure, or detection when an
    entity mismatch already occurred); if not, the greedy search itself ran
    into a dead end.
    """
    outside = outside_box(truth)
    if any(g not in matched for o in outside for g in truth.subtree(o)):
        return "detection"
    cfg = dataclasses.replace(planner_cfg or PlannerConfig(), threshold=threshold)
    rng = np.random.default_rng(0)
    for gid in sorted(outside):
        regions, obstruct = placement_regions(truth, gid, cfg.allow_stacking)
        for region in regions:
            for cand in region_candidates(truth, gid, region, obstruct, poses, cfg, rng, threshold):
                if cand.conflict >= threshold:
                    continue
                try:
                    apply_move(truth, cand.move, poses)
                except ImaginationError:
                    continue
                return "detection" if any_mismatch else "affordance"
    return "search"


# -- running ----------------------------------------------------------------

def _seeds(master: int, rep: int, n: int) -> list[int]:
    return [int(v) for v in np.random.SeedSequence([master, rep]).generate_state(n)]


def _scene_task(args):
    cfg, rep, i, scene_seed, run_seed = args
    k = None if not cfg.steps else int(cfg.steps[i % len(cfg.steps)])
    out = []
    try:
        gen = generate_scene(dataclasses.replace(cfg.dataset, seed=scene_seed), n_outside=k)
    except Exception as e:  # recorded, never fatal
        return [Outcome(rep, i, m.name, lv.name, -1, [], False, f"generation: {e}")
                for m in cfg.methods for lv in cfg.levels]
    truth, poses = gen.scene, gen.poses
    required = len(outside_box(truth))
    threshold = cfg.planner.threshold or default_threshold(truth.width, truth.height)
    for lv in cfg.levels:
        corruption = lv.corruption.with_seed(run_seed) if lv.corruption is not None else None
        for m in cfg.methods:
            try:
                belief = perceive(truth, poses, corruption, m.completion)
                pcfg = dataclasses.replace(cfg.planner, seed=run_seed,
                                           mode="exhaustive" if m.kind == "exhaustive" else "greedy")
                if m.kind == "baseline":
                    p = baseline_plan(belief.scene, pcfg, belief.poses)
                else:
                    _, p = plan_scene(belief.scene, belief.poses, pcfg)
                steps, ok = score_plan(truth, poses, belief, p, threshold, pcfg)
                out.append(Outcome(rep, i, m.name, lv.name, required, steps, ok))
            except Exception as e:  # recorded, never fatal
                out.append(Outcome(rep, i, m.name, lv.name, required, [], False, f"{type(e).__name__}: {e}"))
    return out


def run(cfg: ExperimentConfig) -> "Report":
    """Plan and score every scene x method x level x repetition."""
    tasks = []
    for rep in range(cfg.repetitions):
        scene_seeds = _seeds(cfg.seed, rep, cfg.n_scenes)
        run_seeds = _seeds(cfg.seed + 1_000_003, rep, cfg.n_scenes)
        for i in range(cfg.n_scenes):
            tasks.append((cfg, rep, i, scene_seeds[i], run_seeds[i]))
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_scene_task, tasks))
    else:
        results = [_scene_task(t) for t in tasks]
    outcomes = sorted((o for r in results for o in r), key=lambda o: (o.rep, o.scene, o.method, o.level))
    report = Report(cfg, outcomes)
    if cfg.out_dir:
        report.write(cfg.out_dir)
    return report


# -- report -----------------------------------------------------------------

def _mean_sd(values):
    v = [x for x in values if x is not None]
    if not v:
        return None, None
    sd = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
    return float(np.mean(v)), sd


def _fmt(ms):
    m, s = ms
    if m is None:
        return "--"
    return f"{m:.2f}% ({s:.2f})"


@dataclass
class Report:
    config: ExperimentConfig
    outcomes: list

    def rows(self):
        return [(m.name, lv.name) for lv in self.config.levels for m in self.config.methods]

    def _select(self, method, level, rep=None):
        return [o for o in self.outcomes if o.method == method and o.level == level
                and (rep is None or o.rep == rep)]

    def _column(self, required: int) -> int:
        return min(required, self.config.max_column)

    def length_rates(self, method: str, level: str, column: int | str, min_required: int = 0):
        """Per-repetition success rates for one plan-length column or ``"total"``.

        Baseline totals skip 0-step scenes; ``min_required`` restricts any total.
        """
        rates = []
        baseline = self._is_baseline(method)
        floor = max(min_required, 1 if baseline else 0)
        for rep in range(self.config.repetitions):
            sel = [o for o in self._select(method, level, rep) if o.required >= 0]
            if column != "total":
                sel = [o for o in sel if self._column(o.required) == column]
            else:
                sel = [o for o in sel if o.required >= floor]
            if baseline and column == 0:
                rates.append(None)
                continue
            rates.append(100.0 * sum(o.success for o in sel) / len(sel) if sel else None)
        return rates

    def step_rates(self, method: str, level: str, index: int):
        rates = []
        for rep in range(self.config.repetitions):
            st = [s for o in self._select(method, level, rep) for s in o.steps
                  if min(s.index, self.config.max_column) == index]
            rates.append(100.0 * sum(s.success for s in st) / len(st) if st else None)
        return rates

    def _is_baseline(self, method: str) -> bool:
        return any(m.name == method and m.kind == "baseline" for m in self.config.methods)

    def cases(self, column: int) -> int:
        m, lv = self.rows()[0]
        return sum(1 for o in self._select(m, lv) if o.required >= 0 and self._column(o.required) == column)

    def step_cases(self, method, level, index) -> int:
        return sum(1 for o in self._select(method, level) for s in o.steps
                   if min(s.index, self.config.max_column) == index)

    def total(self, method: str, level: str, min_required: int = 0) -> float | None:
        return _mean_sd(self.length_rates(method, level, "total", min_required))[0]

    def _label(self, c: int) -> str:
        return f"{c}+" if c == self.config.max_column else str(c)

    def failures(self, method: str | None = None, level: str | None = None) -> dict:
        counts = {c: 0 for c in CAUSES}
        for o in self.outcomes:
            if (method is None or o.method == method) and (level is None or o.level == level):
                for s in o.steps:
                    if not s.success:
                        counts[s.cause] += 1
        return counts

    def errors(self) -> list:
        return [o for o in self.outcomes if o.error]

    def to_text(self) -> str:
        cols = list(range(self.config.max_column + 1))
        out = io.StringIO()
        names = [f"{m} / {lv}" for m, lv in self.rows()]
        w = max([len(n) for n in names] + [10]) + 2
        head = "".join(f"{(self._label(c) + (' step' if c == 1 else ' steps')):>18}" for c in cols)
        out.write("Success by plan length\n")
        out.write(f"{'':<{w}}{head}{'Total':>18}\n")
        out.write(f"{'cases':<{w}}" + "".join(f"{self.cases(c):>18}" for c in cols)
                  + f"{sum(self.cases(c) for c in cols):>18}\n")
        for (m, lv), n in zip(self.rows(), names):
            vals = [_fmt(_mean_sd(self.length_rates(m, lv, c))) for c in cols]
            vals.append(_fmt(_mean_sd(self.length_rates(m, lv, "total"))))
            out.write(f"{n:<{w}}" + "".join(f"{v:>18}" for v in vals) + "\n")
        out.write("\nSuccess by step index\n")
        steps = list(range(1, self.config.max_column + 1))
        out.write(f"{'':<{w}}" + "".join(f"{'Step ' + self._label(k):>18}" for k in steps) + "\n")
        for (m, lv), n in zip(self.rows(), names):
            out.write(f"{n:<{w}}" + "".join(f"{_fmt(_mean_sd(self.step_rates(m, lv, k))):>18}"
                                             for k in steps) + "\n")
            out.write(f"{'  cases':<{w}}" + "".join(f"{self.step_cases(m, lv, k):>18}" for k in steps) + "\n")
        out.write("\nFailed steps by cause\n")
        for (m, lv), n in zip(self.rows(), names):
            f = self.failures(m, lv)
            total = sum(f.values())
            parts = [f"{c} {f[c]} ({100.0 * f[c] / total:.1f}%)" if total else f"{c} 0" for c in CAUSES]
            out.write(f"{n:<{w}}" + ", ".join(parts) + "\n")
        errs = self.errors()
        if errs:
            out.write(f"\n{len(errs)} runs raised errors, first: {errs[0].error}\n")
        return out.getvalue()

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf)
        wr.writerow(["table", "method", "level", "column", "cases", "mean", "sd"])
        for m, lv in self.rows():
            for c in list(range(self.config.max_column + 1)) + ["total"]:
                mean, sd = _mean_sd(self.length_rates(m, lv, c))
                cases = self.cases(c) if c != "total" else len(self._select(m, lv)) // self.config.repetitions
                wr.writerow(["length", m, lv, c, cases, "" if mean is None else f"{mean:.4f}",
                             "" if sd is None else f"{sd:.4f}"])
            for k in range(1, self.config.max_column + 1):
                mean, sd = _mean_sd(self.step_rates(m, lv, k))
                wr.writerow(["step", m, lv, k, self.step_cases(m, lv, k),
                             "" if mean is None else f"{mean:.4f}", "" if sd is None else f"{sd:.4f}"])
            for c, n in self.failures(m, lv).items():
                wr.writerow(["failures", m, lv, c, n, "", ""])
        return buf.getvalue()

    def write(self, out_dir) -> Path:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.txt").write_text(self.to_text())
        (d / "report.csv").write_text(self.to_csv())
        return d


def classify_failures(report: Report, method: str | None = None, level: str | None = None) -> dict:
    """Failed steps per cause: detection, affordance, search."""
    return report.failures(method, level)


@dataclass(frozen=True)
class TrendResult:
    name: str
    passed: bool
    detail: str


def trend_check(report: Report, oracle_level: str | None = None) -> list[TrendResult]:
    """Monotonicity checks over the report's corruption levels (in config order).

    Returns one result per assertion instead of raising.
    """
    levels = [lv.name for lv in report.config.levels]
    methods = [m for m in report.config.methods if m.kind != "baseline"]
    baselines = [m for m in report.config.methods if m.kind == "baseline"]
    out = []
    if len(levels) < 3:
        out.append(TrendResult("levels", False, "need at least three corruption levels"))
    for m in methods:
        totals = [report.total(m.name, lv) for lv in levels]
        ok = all(a is not None and b is not None and b <= a + 1e-9 for a, b in zip(totals, totals[1:]))
        out.append(TrendResult(f"{m.name}: total non-increasing", ok,
                               " >= ".join("--" if t is None else f"{t:.2f}" for t in totals)))
        oracle = oracle_level or levels[0]
        for lv in levels:
            if lv == oracle:
                continue
            bad = []
            for k in range(1, report.config.max_column + 1):
                a = _mean_sd(report.step_rates(m.name, oracle, k))[0]
                b = _mean_sd(report.step_rates(m.name, lv, k))[0]
                if a is not None and b is not None and b > a + 1e-9:
                    bad.append(k)
            out.append(TrendResult(f"{m.name}/{lv}: per-step <= {oracle}", not bad,
                                   f"violations at steps {bad}" if bad else "ok"))
        for b in baselines:
            for lv in levels:
                mt, bt = report.total(m.name, lv, 1), report.total(b.name, lv, 1)
                ok = mt is not None and bt is not None and bt <= mt + 1e-9
                out.append(TrendResult(f"{b.name} <= {m.name} at {lv}", ok, f"{bt} vs {mt}"))
    return out
