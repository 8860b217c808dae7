"""Experiment harnesses: split evaluation, grasp detection, clutter trials."""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .candidates import DEFAULT_MIN_REGION_POINTS, generate, make_rng, prune
from .cloud_io import Camera, SceneDescription, SceneObject
from .encoding import DEFAULT_POINTS, encode
from .errors import EmptyRegion, EmptySplit, InsufficientSurface, NoFeasibleGrasp, NoVisibleSurface
from .geometry import RigidTransform, axis_angle_matrix
from .gripper import ABLATIONS, ALL_TYPES, GraspType, GripperConfig, standoff_pose
from .network import (EvaluatorModel, NetConfig, TrainConfig, desk_config, parameter_count,
                      plan_for, predict_batch, train)
from .sim import (OracleConfig, capture_scene, default_catalog, evaluate_grasp, instantiate,
                  remove_table, view_cameras)

SPLITS = ("random", "object")
MODES = ("combined", "separate")
TEST_FRACTION = 0.15


# --------------------------------------------------------------------------- #
# metrics
# --------------------------------------------------------------------------- #

def confusion(pred, truth):
    """Per-column (tp, fp, tn, fn) counts for boolean matrices ``(N, n)``."""
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    return ((p & t).sum(0), (p & ~t).sum(0), (~p & ~t).sum(0), (~p & t).sum(0))


def metrics_from_counts(tp, fp, tn, fn):
    """Accuracy, precision, recall and F1 per type.

    Precision with no predicted positives (and recall with no actual
    positives) is undefined; it is reported as 1.0 and flagged in the returned
    warning list.
    """
    tp, fp, tn, fn = (np.asarray(v, dtype=np.float64) for v in (tp, fp, tn, fn))
    total = tp + fp + tn + fn
    acc = np.where(total > 0, (tp + tn) / np.maximum(total, 1), 1.0)
    notes = []
    prec = np.ones_like(tp)
    rec = np.ones_like(tp)
    for i in range(len(tp)):
        if tp[i] + fp[i] > 0:
            prec[i] = tp[i] / (tp[i] + fp[i])
        else:
            notes.append(f"type {i}: precision undefined (no predicted positives), reported as 1.0")
        if tp[i] + fn[i] > 0:
            rec[i] = tp[i] / (tp[i] + fn[i])
        else:
            notes.append(f"type {i}: recall undefined (no positive labels), reported as 1.0")
    denom = prec + rec
    f1 = np.where(denom > 0, 2 * prec * rec / np.where(denom > 0, denom, 1.0), 0.0)
    return acc, prec, rec, f1, notes


def classification_metrics(probs, truth, threshold=0.5):
    pred = np.asarray(probs) >= threshold
    return metrics_from_counts(*confusion(pred, truth))


@dataclass
class EvalReport:
    split: str
    mode: str
    accuracy: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    epochs: list            # per seed: int (combined) or per-type list (separate)
    parameter_count: int
    seeds: tuple
    per_seed: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def avg_accuracy(self):
        return float(np.mean(self.accuracy))

    @property
    def avg_precision(self):
        return float(np.mean(self.precision))

    @property
    def avg_f1(self):
        return float(np.mean(self.f1))

    def to_dict(self):
        def fl(a):
            return [float(v) for v in a]
        return {
            "split": self.split, "mode": self.mode,
            "types": [t.label for t in ALL_TYPES][: len(self.accuracy)],
            "accuracy": fl(self.accuracy), "precision": fl(self.precision),
            "recall": fl(self.recall), "f1": fl(self.f1),
            "avg_accuracy": self.avg_accuracy, "avg_precision": self.avg_precision,
            "avg_f1": self.avg_f1, "epochs": self.epochs,
            "parameter_count": int(self.parameter_count), "seeds": list(self.seeds),
            "per_seed": self.per_seed, "warnings": self.warnings,
        }


# --------------------------------------------------------------------------- #
# splits
# --------------------------------------------------------------------------- #

def random_split(n, fraction=TEST_FRACTION, seed=0):
    """Tag ``round(fraction * n)`` random exemplars (at least one) as test."""
    if n < 2:
        raise EmptySplit("a random split needs at least two exemplars")
    n_test = int(np.clip(round(fraction * n), 1, n - 1))
    split = np.full(n, "train", dtype=object)
    split[make_rng(seed).permutation(n)[:n_test]] = "test"
    return split.astype(str)


def object_split(object_ids, fraction=TEST_FRACTION, seed=0):
    """Hold out every exemplar of ``round(fraction * objects)`` whole objects."""
    object_ids = np.asarray(object_ids)
    objs = np.unique(object_ids)
    if len(objs) < 2:
        raise EmptySplit("an object split needs at least two objects")
    n_test = int(np.clip(round(fraction * len(objs)), 1, len(objs) - 1))
    held = objs[np.sort(make_rng(seed).permutation(len(objs))[:n_test])]
    return np.where(np.isin(object_ids, held), "test", "train")


def make_split(dataset, kind, seed=0, fraction=TEST_FRACTION):
    if kind == "random":
        return random_split(len(dataset.labels), fraction, seed)
    if kind == "object":
        return object_split(dataset.object_ids, fraction, seed)
    raise ValueError(f"unknown split {kind!r}; expected one of {SPLITS}")


class _Split:
    """Light view of a dataset with a different split tag (shares the plan)."""

    def __init__(self, labels, split):
        self.labels = labels
        self.split = split


def _seed_for(seed, member):
    return int(np.random.SeedSequence([int(seed), int(member)]).generate_state(1)[0])


def evaluate_split(dataset, split="random", mode="combined", net_cfg: NetConfig = None,
                   train_cfg: TrainConfig = None, seeds=(0, 1, 2), progress=None) -> EvalReport:
    """Train on an 85/15 split and score the held-out part, averaged over seeds.

    COMBINED trains one model on the summed loss and reports the epoch with the
    best average test accuracy.  SEPARATE trains one model per type (loss masked
    to that type) and takes each type's prediction from that model's own best
    epoch.
    """
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    labels = np.asarray(dataset.labels)
    n_types = labels.shape[1]
    net_cfg = net_cfg or desk_config(n_types, dataset.encodings[0].size)
    train_cfg = train_cfg or TrainConfig()
    plan = dataset.plan(net_cfg) if hasattr(dataset, "plan") else plan_for(dataset.encodings, net_cfg)
    per_seed, epochs, notes = [], [], []
    sums = np.zeros((4, n_types))
    n_params = 0
    for seed in seeds:
        tags = make_split(dataset, split, seed)
        view = _Split(labels, tags)
        te = tags == "test"
        if not te.any() or te.all():
            raise EmptySplit("split produced an empty side")
        if mode == "combined":
            model = EvaluatorModel.initialize(net_cfg, seed=_seed_for(seed, 0))
            res = train(model, view, replace(train_cfg, seed=_seed_for(seed, 100)), plan=plan,
                        progress=progress)
            probs = res.best_predictions
            epochs.append(int(res.best_epoch))
            n_params = parameter_count(model)
        else:
            probs = np.zeros((int(te.sum()), n_types))
            ep, models = [], []
            for t in range(n_types):
                mask = np.zeros(n_types)
                mask[t] = 1.0
                model = EvaluatorModel.initialize(net_cfg, seed=_seed_for(seed, t + 1))
                res = train(model, view, replace(train_cfg, seed=_seed_for(seed, 100 + t + 1)),
                            type_mask=mask, plan=plan, progress=progress)
                probs[:, t] = res.best_predictions[:, t]
                ep.append(int(res.best_epoch))
                models.append(model)
            epochs.append(ep)
            n_params = parameter_count(models)
        acc, prec, rec, f1, w = classification_metrics(probs, labels[te])
        notes += [f"seed {seed}: {m}" for m in w]
        sums += np.stack([acc, prec, rec, f1])
        per_seed.append({"seed": int(seed), "test_count": int(te.sum()),
                         "accuracy": [float(v) for v in acc], "precision": [float(v) for v in prec],
                         "recall": [float(v) for v in rec], "f1": [float(v) for v in f1]})
    for m in notes:
        warnings.warn(m, RuntimeWarning, stacklevel=2)
    mean = sums / len(seeds)
    return EvalReport(split, mode, mean[0], mean[1], mean[2], mean[3], epochs, n_params,
                      tuple(int(s) for s in seeds), per_seed, notes)


# --------------------------------------------------------------------------- #
# detection
# --------------------------------------------------------------------------- #

def resolve_types(allowed):
    """Accept an ablation name, GraspType objects, labels or indices."""
    if allowed is None:
        return ALL_TYPES
    if isinstance(allowed, str):
        key = allowed.lower()
        if key in ABLATIONS:
            return ABLATIONS[key]
        return (GraspType.parse(allowed),)
    out = []
    for a in allowed:
        if isinstance(a, GraspType):
            out.append(a)
        elif isinstance(a, (int, np.integer)):
            out.append(ALL_TYPES[int(a)])
        else:
            out.append(GraspType.parse(a))
    return tuple(sorted(set(out), key=lambda t: t.index))


@dataclass(frozen=True, eq=False)
class GraspDecision:
    candidate: object        # GraspCandidate: centroid and orientation
    gtype: GraspType
    probability: float
    palm: object = None      # GripperPose at the type's standoff

    @property
    def centroid(self):
        return self.candidate.centroid

    @property
    def orientation(self):
        return self.candidate.orientation

    def to_dict(self):
        d = self.candidate.to_dict()
        d.update({"type": self.gtype.label, "type_index": self.gtype.index,
                  "probability": float(self.probability)})
        if self.palm is not None:
            d["palm_center"] = [float(v) for v in self.palm.palm_center]
        return d


def rank_entries(probs, types):
    """Flatten ``probs[candidate, type]`` over the allowed types and sort.

    Ties are broken by candidate then type index, so the order is total.
    Returns a list of ``(candidate_index, type, probability)``.
    """
    probs = np.asarray(probs)
    entries = [(ci, t, float(probs[ci, t.index])) for ci in range(len(probs)) for t in types]
    entries.sort(key=lambda e: (-e[2], e[0], e[1].index))
    return entries


def detect(cloud, model: EvaluatorModel, k=400, cfg: GripperConfig = None, allowed_types=None,
           seed=0, M=None, table_height=None, min_region_points=DEFAULT_MIN_REGION_POINTS,
           margin=None):
    """Rank every (candidate, allowed type) pair by predicted success.

    Candidates are generated, pruned, encoded and scored; pairs whose type
    standoff body collides with the cloud are dropped.  Raises
    :class:`NoFeasibleGrasp` when nothing survives.
    """
    cfg = cfg or GripperConfig()
    types = resolve_types(allowed_types)
    if max(t.index for t in types) >= model.cfg.n_types:
        raise ValueError("model predicts fewer types than requested")
    M = M or model.cfg.input_points
    try:
        cset = generate(cloud, k, cfg, seed, strict=False)
    except InsufficientSurface as e:
        raise NoFeasibleGrasp(str(e)) from e
    kept = prune(cset, cloud, cfg, ALL_TYPES, min_region_points, margin, table_height)
    cands, encs, free = [], [], []
    for ci, c in enumerate(kept.candidates):
        try:
            encs.append(encode(cloud, c, cfg, M, seed, salt=ci))
        except EmptyRegion:
            continue
        cands.append(c)
        free.append(set(kept.collision_free[ci]))
    if not cands:
        raise NoFeasibleGrasp("no candidate survived pruning")
    probs = predict_batch(model, encs)
    out = []
    for ci, t, p in rank_entries(probs, types):
        if t.index in free[ci]:
            out.append(GraspDecision(cands[ci], t, p, standoff_pose(cands[ci], t, cfg)))
    if not out:
        raise NoFeasibleGrasp("every ranked grasp collides at its standoff")
    return out


# --------------------------------------------------------------------------- #
# clutter scenes and trials
# --------------------------------------------------------------------------- #

def _footprint(template):
    """Radius of the template's footprint on the table."""
    d = template.dims
    if template.kind == "box":
        return float(np.hypot(d[0], d[1]) / 2)
    if template.kind in ("cylinder", "sphere", "bottle"):
        return float(d[0])
    if template.kind == "drill":
        return float(max(np.hypot(d[0], d[1]) / 2, d[4] * 0.75))
    if template.kind == "lying_cylinder":
        return float(np.hypot(d[0], d[1] / 2))
    raise ValueError(template.kind)


def clutter_scene(catalog=None, seed=0, n_cluster=10, n_large=3, heavy_mass=0.8,
                  cluster_radius=0.12, ring_radius=0.27, table_height=0.0, max_tries=200):
    """Random tabletop: a tight cluster of small/medium objects ringed by large
    upright ones, at least one of them heavier than ``heavy_mass``.

    The cluster disc widens by 1 cm after every ``max_tries`` rejected draws so
    that all ``n_cluster`` objects always fit; the ring sits outside it.
    """
    catalog = catalog or default_catalog()
    rng = make_rng(seed)
    small = sorted(k for k, t in catalog.items() if t.size_class in ("small", "medium"))
    large = sorted(k for k, t in catalog.items() if t.size_class == "large")
    heavy = [k for k in large if catalog[k].mass > heavy_mass]
    if len(small) < 1 or len(large) < n_large or not heavy:
        raise ValueError("catalog cannot supply the requested clutter scene")
    placed = []  # (shape_id, xy, radius, yaw)

    def fits(xy, r):
        return all(np.linalg.norm(xy - q) >= r + s + 0.005 for _, q, s, _ in placed)

    disc = cluster_radius
    for _ in range(n_cluster):
        sid = str(small[rng.integers(len(small))])
        r = _footprint(catalog[sid])
        while True:
            for _ in range(max_tries):
                ang = rng.uniform(0, 2 * np.pi)
                xy = np.sqrt(rng.uniform()) * max(disc - r, 0.0) * np.array([np.cos(ang), np.sin(ang)])
                if fits(xy, r):
                    break
            else:
                disc += 0.01
                continue
            placed.append((sid, xy, r, rng.uniform(0, 2 * np.pi)))
            break
    extent = max((np.linalg.norm(q) + s for _, q, s, _ in placed), default=0.0)

    first = str(heavy[rng.integers(len(heavy))])
    rest = [k for k in large if k != first]
    bigs = [first] + [str(rest[i]) for i in rng.permutation(len(rest))[: n_large - 1]]
    base = rng.uniform(0, 2 * np.pi)
    for j, sid in enumerate(bigs):
        r = _footprint(catalog[sid])
        ring = max(ring_radius, extent + r + 0.02)
        while True:
            for _ in range(max_tries):
                ang = base + 2 * np.pi * j / n_large + rng.uniform(-0.3, 0.3)
                xy = (ring + rng.uniform(0.0, 0.04)) * np.array([np.cos(ang), np.sin(ang)])
                if fits(xy, r):
                    break
            else:
                ring += 0.01
                continue
            placed.append((sid, xy, r, rng.uniform(0, 2 * np.pi)))
            break
    objects = []
    for sid, xy, _, yaw in placed:
        R = axis_angle_matrix([0.0, 0.0, 1.0], yaw)
        pose = RigidTransform.from_matrix(R, (xy[0], xy[1], table_height))
        objects.append(SceneObject(sid, pose, np.ones(3)))
    cams = trial_cameras(table_height, seed)
    return SceneDescription(tuple(objects), tuple(cams), table_height)


def trial_cameras(table_height=0.0, seed=0, distance=0.75, elevation_deg=55.0):
    az = make_rng(seed + 7919).uniform(0, 2 * np.pi)
    return view_cameras(np.array([0.0, 0.0, table_height]), az, np.radians(elevation_deg), distance)


@dataclass(frozen=True)
class TrialConfig:
    k: int = 400
    top_n: int = 25
    regenerations: int = 2          # each doubles k
    repeat_failures: int = 3
    max_unreachable: int = 3
    workspace_lo: tuple = (-0.6, -0.6, 0.0)
    workspace_hi: tuple = (0.6, 0.6, 0.8)
    min_elevation_deg: float = 15.0
    samples_per_view: int = 40000
    table_threshold: float = 0.003
    max_attempts: int = None        # default 3 * objects * types + 3

    def to_dict(self):
        return asdict(self)


def reachable(decision: GraspDecision, tcfg: TrialConfig, table_height=0.0):
    """Workspace-bounds stand-in for a motion planner."""
    palm = decision.palm.palm_center
    lo = np.asarray(tcfg.workspace_lo, dtype=np.float64) + [0.0, 0.0, table_height]
    hi = np.asarray(tcfg.workspace_hi, dtype=np.float64) + [0.0, 0.0, table_height]
    if np.any(palm < lo) or np.any(palm > hi):
        return False
    elevation = np.degrees(np.arcsin(np.clip(-decision.palm.approach[2], -1.0, 1.0)))
    return bool(elevation >= tcfg.min_elevation_deg)


@dataclass
class TrialReport:
    attempts: int
    successes: int
    objects_removed: int
    objects_total: int
    log: list
    termination: str

    @property
    def success_rate(self):
        return self.successes / self.attempts if self.attempts else 0.0

    @property
    def removal_rate(self):
        return self.objects_removed / self.objects_total if self.objects_total else 0.0

    def to_dict(self):
        return {"attempts": self.attempts, "successes": self.successes,
                "objects_removed": self.objects_removed, "objects_total": self.objects_total,
                "success_rate": self.success_rate, "removal_rate": self.removal_rate,
                "termination": self.termination, "log": self.log}


def _nearest(point, objects):
    d = [float(ob.sdf(np.asarray(point)[None])[0]) for ob in objects]
    return int(np.argmin(d))


def run_trial(scene: SceneDescription, model: EvaluatorModel, ablation="5type", cfg=None,
              seed=0, catalog=None, ocfg: OracleConfig = None, tcfg: TrialConfig = None,
              progress=None) -> TrialReport:
    """Clear a simulated table, one grasp at a time.

    Each round captures the remaining objects, ranks grasps, and executes the
    best reachable one among the top ``top_n``; when none is reachable the
    candidate count is doubled (up to ``regenerations`` times).  A successful
    grasp removes its target, the object nearest the grasp centroid.  The trial
    stops when the table is clear, the same (object, type, failure) repeats
    ``repeat_failures`` times in a row, ``max_unreachable`` rounds in a row find
    nothing reachable, or the attempt cap is hit.
    """
    cfg = cfg or GripperConfig()
    ocfg = ocfg or OracleConfig()
    tcfg = tcfg or TrialConfig()
    catalog = catalog or default_catalog()
    types = resolve_types(ablation)
    objects = instantiate(scene, catalog)
    total = len(objects)
    cap = tcfg.max_attempts or 3 * total * len(types) + 3
    th = scene.table_height
    attempts = successes = 0
    unreachable = 0
    last_key, repeats = None, 0
    log = []
    termination = "attempt_cap"
    rnd = 0
    while True:
        if not objects:
            termination = "cleared"
            break
        if attempts >= cap:
            termination = "attempt_cap"
            break
        rseed = _seed_for(seed, rnd)
        rnd += 1
        live = replace(scene, objects=[])
        try:
            cloud = capture_scene(live, objects, tcfg.samples_per_view, rseed,
                                  include_table=True).cloud
            cloud = remove_table(cloud, th, tcfg.table_threshold)
        except NoVisibleSurface:
            cloud = None
        choice = None
        k = tcfg.k
        for _ in range(tcfg.regenerations + 1):
            if cloud is None or len(cloud) < 8:
                break
            try:
                ranked = detect(cloud, model, k, cfg, types, rseed, table_height=th)
            except NoFeasibleGrasp:
                ranked = []
            choice = next((d for d in ranked[: tcfg.top_n] if reachable(d, tcfg, th)), None)
            if choice is not None:
                break
            k *= 2
        if choice is None:
            unreachable += 1
            log.append({"round": rnd, "outcome": "unreachable", "termination": None})
            if unreachable >= tcfg.max_unreachable:
                termination = "unreachable"
                log[-1]["termination"] = termination
                break
            continue
        unreachable = 0
        target = _nearest(choice.centroid, objects)
        res = evaluate_grasp(choice.candidate, choice.gtype, target, objects, th, cfg, ocfg)
        attempts += 1
        entry = {"round": rnd, "object": objects[target].object_id, **choice.to_dict(),
                 "outcome": res.failure, "termination": None}
        log.append(entry)
        if res.success:
            successes += 1
            objects = objects[:target] + objects[target + 1:]
            last_key, repeats = None, 0
        else:
            key = (objects[target].object_id, choice.gtype.label, res.failure)
            repeats = repeats + 1 if key == last_key else 1
            last_key = key
            if repeats >= tcfg.repeat_failures:
                termination = "repeated_failure"
                entry["termination"] = termination
                break
        if progress:
            progress(entry)
    if not objects:
        termination = "cleared"
    if log and log[-1]["termination"] is None:
        log[-1]["termination"] = termination
    return TrialReport(attempts, successes, total - len(objects), total, log, termination)


def clutter_benchmark(model, trials=10, ablations=("5type", "2type", "1type"), seed=0,
                      cfg=None, catalog=None, ocfg=None, tcfg=None, progress=None):
    """Run the same seeded scenes under each ablation; returns {ablation: [TrialReport]}."""
    catalog = catalog or default_catalog()
    out = {}
    for ab in ablations:
        reports = []
        for i in range(trials):
            scene = clutter_scene(catalog, seed=_seed_for(seed, i))
            reports.append(run_trial(scene, model, ab, cfg, _seed_for(seed, 1000 + i), catalog,
                                     ocfg, tcfg))
            if progress:
                progress(ab, i, reports[-1])
        out[ab] = reports
    return out


def summarize_benchmark(results):
    out = {}
    for ab, reps in results.items():
        att = sum(r.attempts for r in reps)
        suc = sum(r.successes for r in reps)
        rem = sum(r.objects_removed for r in reps)
        tot = sum(r.objects_total for r in reps)
        out[ab] = {"trials": len(reps), "attempts": att, "successes": suc,
                   "success_rate": suc / att if att else 0.0,
                   "removal_rate": rem / tot if tot else 0.0,
                   "terminations": [r.termination for r in reps]}
    return out


def to_json(obj):
    return json.dumps(obj, indent=2, sort_keys=False)
