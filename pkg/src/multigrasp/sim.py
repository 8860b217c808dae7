"""Synthetic stand-in for physics-based grasp labeling.

Provides a procedural object catalog, a ray-casting depth camera, and a
deterministic geometric success test: close the fingers quasi-statically,
then require multi-finger antipodal contact of the right grip style, the
center of mass inside the contact support, and a payload within the grasp
type's lift capacity.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .candidates import GraspCandidate, generate, make_rng, prune
from .cloud_io import Camera, SceneDescription, SceneObject, read_ply_file, write_ply
from .encoding import DEFAULT_POINTS, GraspEncoding, encode
from .errors import EmptyRegion, InsufficientSurface, NoVisibleSurface
from .geometry import PointCloud, RigidTransform, axis_angle_matrix
from .gripper import (ALL_TYPES, FINGERS, GraspType, Grip, GripperConfig, body_set, close_fingers,
                      standoff_pose)
from .shapes import Box, Cylinder, Halfspace, SolidObject, Sphere

TABLE = "table"
SECOND_VIEW_OFFSET = np.radians(54.0)


# --------------------------------------------------------------------------- #
# catalog
# --------------------------------------------------------------------------- #

def _z(h):
    return RigidTransform(translation=(0.0, 0.0, h))


@dataclass(frozen=True)
class ObjectTemplate:
    """Parametric object resting on z = 0 in its own frame."""

    shape_id: str
    kind: str
    dims: tuple
    mass: float
    size_class: str

    def build(self, pose: RigidTransform = None, scale=(1.0, 1.0, 1.0), object_id=None) -> SolidObject:
        sx, sy, sz = np.asarray(scale, dtype=np.float64)
        d = self.dims
        if self.kind == "box":
            parts = [Box(_z(d[2] * sz / 2), (d[0] * sx / 2, d[1] * sy / 2, d[2] * sz / 2))]
        elif self.kind == "cylinder":
            r = d[0] * min(sx, sy)
            parts = [Cylinder(_z(d[1] * sz / 2), r, d[1] * sz / 2)]
        elif self.kind == "sphere":
            r = d[0] * min(sx, sy, sz)
            parts = [Sphere(_z(r), r)]
        elif self.kind == "bottle":
            # body radius, body height, cap radius, cap height
            rb, hb = d[0] * min(sx, sy), d[1] * sz
            rc, hc = d[2] * min(sx, sy), d[3] * sz
            parts = [Cylinder(_z(hb / 2), rb, hb / 2), Cylinder(_z(hb + hc / 2), rc, hc / 2)]
        elif self.kind == "drill":
            # handle box (w, d, h) and a barrel cylinder on top
            w, dep, h, rb, lb = d
            parts = [Box(_z(h * sz / 2), (w * sx / 2, dep * sy / 2, h * sz / 2)),
                     Cylinder(RigidTransform.from_matrix(axis_angle_matrix([0, 1, 0], np.pi / 2),
                                                         (lb * sx / 4, 0.0, h * sz + rb)),
                              rb, lb * sx / 2)]
        elif self.kind == "lying_cylinder":
            r, length = d[0] * min(sy, sz), d[1] * sx
            parts = [Cylinder(RigidTransform.from_matrix(axis_angle_matrix([0, 1, 0], np.pi / 2),
                                                         (0.0, 0.0, r)), r, length / 2)]
        else:
            raise ValueError(f"unknown template kind {self.kind!r}")
        volume_scale = float(sx * sy * sz)
        obj = SolidObject(object_id or self.shape_id, tuple(parts), self.mass * volume_scale,
                          self.size_class)
        return obj if pose is None else obj.transformed(pose)


def default_catalog():
    """24 objects: 5 large, 14 medium, 5 small."""
    T = ObjectTemplate
    items = [
        # large
        T("shampoo", "bottle", (0.04, 0.19, 0.015, 0.03), 1.1, "large"),
        T("detergent", "bottle", (0.055, 0.2, 0.02, 0.04), 1.3, "large"),
        T("cereal_box", "box", (0.07, 0.19, 0.25), 0.45, "large"),
        T("pitcher", "cylinder", (0.06, 0.22), 1.0, "large"),
        T("drill", "drill", (0.04, 0.05, 0.14, 0.025, 0.16), 1.2, "large"),
        # medium
        T("soup_can", "cylinder", (0.034, 0.1), 0.35, "medium"),
        T("coffee_can", "cylinder", (0.05, 0.14), 0.45, "medium"),
        T("rice_box", "box", (0.045, 0.1, 0.15), 0.5, "medium"),
        T("cracker_box", "box", (0.06, 0.16, 0.21), 0.4, "medium"),
        T("sugar_box", "box", (0.038, 0.089, 0.175), 0.45, "medium"),
        T("mustard", "bottle", (0.03, 0.14, 0.012, 0.04), 0.35, "medium"),
        T("mug", "cylinder", (0.04, 0.08), 0.25, "medium"),
        T("soccer_ball", "sphere", (0.07,), 0.35, "medium"),
        T("apple", "sphere", (0.037,), 0.18, "medium"),
        T("tuna_can", "cylinder", (0.043, 0.033), 0.17, "medium"),
        T("jello_box", "box", (0.085, 0.073, 0.035), 0.1, "medium"),
        T("spam_can", "box", (0.1, 0.06, 0.083), 0.37, "medium"),
        T("banana", "lying_cylinder", (0.02, 0.17), 0.12, "medium"),
        T("marker_pack", "box", (0.13, 0.05, 0.025), 0.08, "medium"),
        # small
        T("golf_ball", "sphere", (0.021,), 0.046, "small"),
        T("lego", "box", (0.032, 0.032, 0.024), 0.01, "small"),
        T("duck", "sphere", (0.025,), 0.02, "small"),
        T("dice", "box", (0.025, 0.025, 0.025), 0.02, "small"),
        T("battery", "lying_cylinder", (0.0085, 0.05), 0.025, "small"),
    ]
    return {t.shape_id: t for t in items}


def instantiate(scene: SceneDescription, catalog) -> list:
    """SolidObjects for a scene; object ids are ``<shape_id>#<position>``."""
    out = []
    for i, o in enumerate(scene.objects):
        if o.shape_id not in catalog:
            raise KeyError(f"scene references unknown shape {o.shape_id!r}")
        out.append(catalog[o.shape_id].build(o.pose, o.scale, f"{o.shape_id}#{i}"))
    return out


# --------------------------------------------------------------------------- #
# oracle configuration
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class OracleConfig:
    antipodal_deg: float = 150.0
    retention_margin: float = 0.015
    capacity: dict = field(default_factory=lambda: {
        "wide_power": 2.0, "basic_power": 2.0,
        "wide_precision": 0.8, "basic_precision": 0.8,
        "pincher": 0.4,
    })
    multi_object_fails: bool = True
    table_clearance: float = 0.004

    def capacity_of(self, gtype: GraspType):
        return self.capacity[gtype.label]


# --------------------------------------------------------------------------- #
# depth capture
# --------------------------------------------------------------------------- #

@dataclass(frozen=True, eq=False)
class Capture:
    cloud: PointCloud
    owner: np.ndarray  # per point: object position in the scene, -1 for the table


def _camera_basis(cam: Camera):
    f = cam.look_at - cam.position
    f = f / np.linalg.norm(f)
    up = np.array([0.0, 0.0, 1.0])
    if abs(f @ up) > 0.99:
        up = np.array([0.0, 1.0, 0.0])
    r = np.cross(f, up)
    r /= np.linalg.norm(r)
    u = np.cross(r, f)
    return f, r, u


def capture_scene(scene: SceneDescription, objects, samples_per_view=4096, seed=0,
                  include_table=True, table_threshold=0.003, fov=None, noise=0.0) -> Capture:
    """Ray-cast every camera onto ``objects`` and the table plane.

    Rays form a jittered square grid of ``samples_per_view`` rays whose field of
    view is fitted to the objects' bounding spheres unless ``fov`` (full angle,
    radians) is given.  Table points are dropped when ``include_table`` is
    false (height threshold above the known plane).
    """
    rng = make_rng(seed)
    table = Halfspace(scene.table_height)
    side = max(int(round(np.sqrt(samples_per_view))), 1)
    pts, tags, owners = [], [], []
    for ci, cam in enumerate(scene.cameras):
        f, r, u = _camera_basis(cam)
        if fov is None:
            half = 0.05
            for ob in objects:
                v = ob.center_of_mass - cam.position
                dist = np.linalg.norm(v)
                ang = np.arccos(np.clip(v @ f / dist, -1, 1))
                half = max(half, ang + np.arcsin(min(ob.bounding_radius / dist, 1.0)))
            half = min(half * 1.05, np.radians(60))
        else:
            half = fov / 2
        span = np.tan(half)
        g = (np.arange(side) + 0.5) / side * 2 - 1
        gx, gy = np.meshgrid(g, g, indexing="ij")
        jitter = rng.uniform(-1, 1, size=(2, side, side)) / side
        sx = ((gx + jitter[0]) * span).ravel()
        sy = ((gy + jitter[1]) * span).ravel()
        dirs = f[None] + sx[:, None] * r[None] + sy[:, None] * u[None]
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(cam.position, dirs.shape)
        hits = [ob.raycast(origins, dirs) for ob in objects]
        hits.append(table.raycast(origins, dirs))
        hits = np.stack(hits)
        which = np.argmin(hits, axis=0)
        t = hits[which, np.arange(len(dirs))]
        ok = np.isfinite(t)
        if noise > 0:
            t = t + rng.normal(0.0, noise, size=t.shape)
        p = cam.position + dirs * t[:, None]
        own = np.where(which == len(objects), -1, which)
        keep = ok & (include_table | (own >= 0))
        if not include_table:
            keep &= p[:, 2] > scene.table_height + table_threshold
        pts.append(p[keep])
        owners.append(own[keep])
        tags.append(np.full(int(keep.sum()), ci))
    points = np.concatenate(pts)
    if len(points) == 0:
        raise NoVisibleSurface("no camera ray hit a surface")
    vps = np.array([c.position for c in scene.cameras])
    return Capture(PointCloud(points, None, np.concatenate(tags), vps), np.concatenate(owners))


def capture_views(scene: SceneDescription, catalog, samples_per_view=4096, seed=0,
                  include_table=True, **kw) -> PointCloud:
    """Merged multi-camera cloud of a scene described by ``scene``."""
    objects = instantiate(scene, catalog) if isinstance(catalog, dict) else list(catalog)
    return capture_scene(scene, objects, samples_per_view, seed, include_table, **kw).cloud


def remove_table(cloud: PointCloud, table_height=0.0, threshold=0.003) -> PointCloud:
    return cloud.select(cloud.points[:, 2] > table_height + threshold)


# --------------------------------------------------------------------------- #
# labels
# --------------------------------------------------------------------------- #

@dataclass(frozen=True, eq=False)
class TypeOutcome:
    success: bool
    failure: str           # "success" or the first failed check
    contact_count: int
    antipodal_deg: float
    retained: bool
    objects_touched: tuple


@dataclass(frozen=True, eq=False)
class GraspLabel:
    labels: np.ndarray     # (n,) 0/1
    outcomes: tuple        # TypeOutcome per type

    def __len__(self):
        return len(self.labels)


def _box_samples(box, per_axis=(5, 5, 4)):
    axes = [np.linspace(-1, 1, k) for k in per_axis]
    g = np.array(np.meshgrid(*axes, indexing="ij")).reshape(3, -1).T
    return box.center + (g * box.half_extents) @ box.rotation.T


def hand_collides(pose, gtype, cfg, obstacles, clearance=0.0):
    """Open-hand body boxes intersect any obstacle (sampled SDF test)."""
    bodies = body_set(pose, gtype, cfg)
    pts = np.concatenate([_box_samples(b) for b in bodies.solid()])
    for _, ob in obstacles:
        if np.any(ob.sdf(pts) < -clearance):
            return True
    return False


def _nearest_object(point, objects):
    d = [float(ob.sdf(np.asarray(point)[None])[0]) for ob in objects]
    return int(np.argmin(d))


def _inside_support(points2d, q, margin):
    """Is ``q`` within ``margin`` of the convex hull of ``points2d``?"""
    P = np.unique(np.round(points2d, 12), axis=0)
    if len(P) == 1:
        return np.linalg.norm(q - P[0]) <= margin
    if len(P) >= 3:
        try:
            hull = ConvexHull(P)
            if np.all(hull.equations[:, :2] @ q + hull.equations[:, 2] <= 1e-12):
                return True
            verts = P[hull.vertices]
            edges = list(zip(verts, np.roll(verts, -1, axis=0)))
        except QhullError:  # collinear points make qhull fail; fall back to segments
            edges = [(P[i], P[j]) for i in range(len(P)) for j in range(i + 1, len(P))]
    else:
        edges = [(P[0], P[1])]
    best = np.inf
    for a, b in edges:
        ab = b - a
        t = np.clip((q - a) @ ab / max(ab @ ab, 1e-300), 0, 1)
        best = min(best, np.linalg.norm(q - (a + t * ab)))
    return best <= margin


def _angle(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.degrees(np.arccos(np.clip(a @ b / (na * nb), -1.0, 1.0))))


def opposition_angle(contacts, gtype: GraspType, cfg: GripperConfig) -> float:
    """Largest angle between opposing contact normals.

    Fingers closing along +X form one virtual finger and those closing along
    -X the other; each virtual finger acts through the sum of its contact
    normals.  The angle between the two resultants is compared with the best
    single pair of contacts on distinct fingers, and the larger is returned.
    """
    best = 0.0
    for i, a in enumerate(contacts):
        for b in contacts[i + 1:]:
            if a.finger != b.finger:
                best = max(best, _angle(a.normal, b.normal))
    side = {name: np.sign(np.cos(spec.angle)) for name, spec in zip(FINGERS, cfg.layout(gtype.mode))}
    pos = [c.normal for c in contacts if side[c.finger] > 0]
    neg = [c.normal for c in contacts if side[c.finger] < 0]
    if pos and neg:
        best = max(best, _angle(np.sum(pos, axis=0), np.sum(neg, axis=0)))
    return best


def evaluate_grasp(candidate, gtype: GraspType, target: int, objects, table_height,
                   cfg: GripperConfig, ocfg: OracleConfig) -> TypeOutcome:
    obstacles = [(ob.object_id, ob) for ob in objects] + [(TABLE, Halfspace(table_height))]
    pose = standoff_pose(candidate, gtype, cfg)
    if hand_collides(pose, gtype, cfg, obstacles):
        return TypeOutcome(False, "collision", 0, 0.0, False, ())
    reports = close_fingers(pose, gtype, cfg, obstacles)
    tid = objects[target].object_id
    contacts = [c for r in reports for c in r.contacts if c.obstacle == tid]
    touched = tuple(sorted({c.obstacle for r in reports for c in r.contacts if c.obstacle != TABLE}))
    fingers = {c.finger for c in contacts}
    best = opposition_angle(contacts, gtype, cfg)
    com = objects[target].center_of_mass
    retained = False
    if contacts:
        R = candidate.rotation
        pts2 = np.array([(c.point - pose.palm_center) @ R[:, :2] for c in contacts])
        q = (com - pose.palm_center) @ R[:, :2]
        retained = _inside_support(pts2, q, ocfg.retention_margin)
    n = len(contacts)
    if len(fingers) < 2:
        failure = "contacts"
    elif best < ocfg.antipodal_deg:
        failure = "antipodal"
    elif gtype.grip is Grip.ENCOMPASSING and not any(c.link in ("proximal", "medial") for c in contacts):
        failure = "grip"
    elif gtype.grip is Grip.FINGERTIP and not all(c.link == "distal" for c in contacts):
        failure = "grip"
    elif not retained:
        failure = "retention"
    elif objects[target].mass > ocfg.capacity_of(gtype):
        failure = "capacity"
    elif ocfg.multi_object_fails and len(touched) > 1:
        failure = "multi_object"
    else:
        failure = "success"
    return TypeOutcome(failure == "success", failure, n, best, retained, touched)


def label_candidate(candidate, shapes, table_height=0.0, cfg: GripperConfig = None,
                    ocfg: OracleConfig = None, target=None, types=ALL_TYPES) -> GraspLabel:
    """Simulated outcome of every grasp type at ``candidate``.

    ``shapes`` is a SolidObject or a list of them; ``target`` (index) defaults
    to the object nearest the candidate centroid.
    """
    cfg = cfg or GripperConfig()
    ocfg = ocfg or OracleConfig()
    objects = [shapes] if isinstance(shapes, SolidObject) else list(shapes)
    if not objects:
        zero = TypeOutcome(False, "contacts", 0, 0.0, False, ())
        return GraspLabel(np.zeros(len(types), dtype=np.int64), tuple(zero for _ in types))
    if target is None:
        target = _nearest_object(candidate.centroid, objects)
    outs = tuple(evaluate_grasp(candidate, t, target, objects, table_height, cfg, ocfg) for t in types)
    return GraspLabel(np.array([int(o.success) for o in outs], dtype=np.int64), outs)


# --------------------------------------------------------------------------- #
# dataset
# --------------------------------------------------------------------------- #

@dataclass
class Dataset:
    encodings: list
    labels: np.ndarray
    object_ids: np.ndarray
    candidates: list
    split: np.ndarray = None
    _plans: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(len(self.encodings), -1)
        self.object_ids = np.asarray(self.object_ids)
        if self.split is None:
            self.split = np.full(len(self.encodings), "train", dtype=object)

    def __len__(self):
        return len(self.encodings)

    @property
    def n_types(self):
        return self.labels.shape[1]

    def positive_rates(self):
        return self.labels.mean(axis=0) if len(self) else np.zeros(self.n_types)

    def with_split(self, split):
        ds = Dataset(self.encodings, self.labels, self.object_ids, self.candidates,
                     np.asarray(split, dtype=object))
        ds._plans = self._plans
        return ds

    def plan(self, net_cfg):
        from .network import plan_for
        key = json.dumps(net_cfg.to_dict(), sort_keys=True)
        if key not in self._plans:
            self._plans[key] = plan_for(self.encodings, net_cfg)
        return self._plans[key]

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "index.jsonl"), "w") as idx:
            for i, (enc, lab, oid, cand) in enumerate(zip(self.encodings, self.labels,
                                                          self.object_ids, self.candidates)):
                name = f"enc_{i:06d}.ply"
                with open(os.path.join(directory, name), "wb") as fh:
                    fh.write(write_ply(PointCloud(enc.points[: enc.valid_count])))
                idx.write(json.dumps({"encoding": name, "labels": [int(v) for v in lab],
                                      "object_id": str(oid), "points": int(enc.size),
                                      "region": [list(map(float, enc.region[0])),
                                                 list(map(float, enc.region[1]))],
                                      "candidate": cand.to_dict()}) + "\n")

    @classmethod
    def load(cls, directory):
        encs, labels, oids, cands = [], [], [], []
        with open(os.path.join(directory, "index.jsonl")) as idx:
            for line in idx:
                rec = json.loads(line)
                cloud = read_ply_file(os.path.join(directory, rec["encoding"]))
                pts = np.zeros((rec["points"], 3))
                pts[: len(cloud)] = cloud.points
                region = tuple(np.asarray(r) for r in rec["region"])
                encs.append(GraspEncoding(pts, len(cloud), region))
                labels.append(rec["labels"])
                oids.append(rec["object_id"])
                cands.append(GraspCandidate.from_dict(rec["candidate"]))
        return cls(encs, np.array(labels), np.array(oids), cands)


def view_cameras(center, azimuth, elevation, distance, second_offset=SECOND_VIEW_OFFSET):
    """Two cameras at the same elevation, the second rotated about z by 54 degrees."""
    cams = []
    for az in (azimuth, azimuth + second_offset):
        d = np.array([np.cos(elevation) * np.cos(az), np.cos(elevation) * np.sin(az),
                      np.sin(elevation)])
        cams.append(Camera(np.asarray(center) + distance * d, np.asarray(center, dtype=np.float64)))
    return tuple(cams)


@dataclass
class BuildReport:
    exemplars: int
    candidates_generated: int
    candidates_pruned: int
    dropped_all_collide: int
    positive_rates: np.ndarray


def object_views(template: ObjectTemplate, views, seed):
    """Deterministic singulated-object scenes for dataset generation."""
    rng = make_rng(seed)
    scenes = []
    for v in range(views):
        yaw = rng.uniform(0, 2 * np.pi)
        pose = RigidTransform.from_matrix(axis_angle_matrix([0, 0, 1], yaw), (0.0, 0.0, 0.0))
        obj = template.build(pose)
        center = obj.center_of_mass
        az = rng.uniform(0, 2 * np.pi)
        el = rng.uniform(np.radians(30), np.radians(65))
        dist = rng.uniform(0.45, 0.65)
        cams = view_cameras(center, az, el, dist)
        scenes.append(SceneDescription((SceneObject(template.shape_id, pose),), cams, 0.0))
    return scenes


def build_dataset(catalog, views_per_object=20, candidates_per_view=15, seed=0,
                  cfg: GripperConfig = None, ocfg: OracleConfig = None, M=DEFAULT_POINTS,
                  samples_per_view=2500, min_region_points=20, object_ids=None,
                  report=None) -> Dataset:
    """Capture, propose, prune, encode and label grasps on singulated objects.

    ``candidates_per_view`` is the number of sampled centroids per view; each
    yields two poses before pruning.
    """
    cfg = cfg or GripperConfig()
    ocfg = ocfg or OracleConfig()
    ids = sorted(catalog) if object_ids is None else list(object_ids)
    if len(ids) < 2:
        raise ValueError("dataset generation needs at least two catalog objects")
    encs, labels, oids, cands = [], [], [], []
    generated = pruned_total = dropped = 0
    for oi, sid in enumerate(ids):
        template = catalog[sid]
        scenes = object_views(template, views_per_object, seed * 1000003 + oi)
        for vi, scene in enumerate(scenes):
            objects = instantiate(scene, catalog)
            sub_seed = seed * 1000003 + oi * 1009 + vi
            cap = capture_scene(scene, objects, samples_per_view, sub_seed, include_table=False)
            cloud = cap.cloud
            if len(cloud) < 8:
                continue
            try:
                cset = generate(cloud, candidates_per_view, cfg, sub_seed)
            except InsufficientSurface:
                continue
            generated += len(cset)
            kept = prune(cset, cloud, cfg, ALL_TYPES, min_region_points,
                         table_height=scene.table_height)
            pruned_total += len(cset) - len(kept)
            for ci, cand in enumerate(kept.candidates):
                try:
                    enc = encode(cloud, cand, cfg, M, sub_seed, salt=ci)
                except EmptyRegion:
                    continue
                lab = label_candidate(cand, objects, scene.table_height, cfg, ocfg, target=0)
                if all(o.failure == "collision" for o in lab.outcomes):
                    dropped += 1
                    continue
                encs.append(enc)
                labels.append(lab.labels)
                oids.append(sid)
                cands.append(cand)
    ds = Dataset(encs, np.array(labels).reshape(-1, len(ALL_TYPES)), np.array(oids), cands)
    if report is not None:
        report.append(BuildReport(len(ds), generated, pruned_total, dropped, ds.positive_rates()))
    return ds
