"""Grasp candidate proposal: sample centroids, orient them from local surface
frames, add a 90-degree twin per sample, and prune infeasible poses."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientSurface
from .geometry import DEFAULT_FRAME_RADIUS, PointCloud, SpatialIndex, matrix_to_quat, surface_frames
from .gripper import ALL_TYPES, GripperConfig, local_box_arrays, points_in_boxes

DEFAULT_MIN_REGION_POINTS = 20
_ROT90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def make_rng(seed):
    """Counter-based generator; identical streams on every platform."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    centroid: np.ndarray
    rotation: np.ndarray  # columns: closing (x), binormal (y), approach (z)
    source_point_index: int = -1
    rotated_variant: bool = False

    @property
    def orientation(self):
        return matrix_to_quat(self.rotation)

    @property
    def approach(self):
        return self.rotation[:, 2]

    @property
    def closing(self):
        return self.rotation[:, 0]

    def to_local(self, points):
        return (np.asarray(points) - self.centroid) @ self.rotation

    def transformed(self, T) -> "GraspCandidate":
        R = T.matrix
        return GraspCandidate(T.apply(self.centroid), R @ self.rotation,
                              self.source_point_index, self.rotated_variant)

    def to_dict(self):
        return {"centroid": [float(v) for v in self.centroid],
                "quaternion": [float(v) for v in self.orientation],
                "rotation": [[float(v) for v in row] for row in self.rotation],
                "source_point_index": int(self.source_point_index),
                "rotated_variant": bool(self.rotated_variant)}

    @classmethod
    def from_dict(cls, d):
        from .geometry import quat_to_matrix
        # the exact matrix wins when present; the quaternion alone loses a few ulps
        R = np.asarray(d["rotation"], dtype=np.float64) if "rotation" in d else quat_to_matrix(d["quaternion"])
        return cls(np.asarray(d["centroid"], dtype=np.float64), R,
                   int(d.get("source_point_index", -1)), bool(d.get("rotated_variant", False)))


@dataclass(frozen=True, eq=False)
class CandidateSet:
    candidates: list
    requested_k: int
    feasible: dict = field(default_factory=dict)  # candidate position -> tuple of type indices
    collision_free: dict = field(default_factory=dict)  # same keys, collision test only

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def to_json(self):
        return json.dumps({"requested_k": self.requested_k,
                           "candidates": [c.to_dict() for c in self.candidates]}, indent=2)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        return cls([GraspCandidate.from_dict(c) for c in doc["candidates"]], int(doc["requested_k"]))


def generate(cloud: PointCloud, k: int, cfg: GripperConfig = None, seed: int = 0,
             radius: float = DEFAULT_FRAME_RADIUS, index: SpatialIndex = None,
             strict: bool = True) -> CandidateSet:
    """Propose grasp poses at ``k`` centroids sampled uniformly from ``cloud``.

    Each centroid gets approach = -normal and closing = curvature axis, plus a
    twin rotated 90 degrees about the approach.  Samples whose neighborhood is
    degenerate are skipped; at most ``3k`` points are tried.  Falling short of
    ``k`` raises unless ``strict`` is false, in which case every valid sample
    found is kept.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    n = len(cloud)
    if n < 4:
        raise InsufficientSurface(f"cloud has {n} points (need 4)")
    index = index or SpatialIndex(cloud)
    order = make_rng(seed).permutation(n)[: min(3 * k, n)]
    queries = cloud.points[order]
    viewpoints = np.array([cloud.viewpoint_of(i) for i in order])
    nbrs = index.radius_many(queries, radius)
    normals, axes, binormals, _, ok = surface_frames(cloud.points, nbrs, queries, viewpoints)
    chosen = np.nonzero(ok)[0][:k]
    if len(chosen) < k and (strict or len(chosen) == 0):
        raise InsufficientSurface(f"only {len(chosen)} valid surface frames out of {k} requested")
    out = []
    for j in chosen:
        approach = -normals[j]
        closing = axes[j]
        R = np.column_stack([closing, np.cross(approach, closing), approach])
        src = int(order[j])
        out.append(GraspCandidate(queries[j].copy(), R, src, False))
        out.append(GraspCandidate(queries[j].copy(), R @ _ROT90, src, True))
    out.sort(key=lambda c: (c.source_point_index, c.rotated_variant))
    return CandidateSet(out, int(k))


class FeasibilityChecker:
    """Per-type collision and graspable-region tests in the candidate frame."""

    def __init__(self, cfg: GripperConfig, types=ALL_TYPES, margin=None, table_height=None):
        self.cfg = cfg
        self.types = tuple(types)
        self.margin = cfg.collision_margin if margin is None else margin
        self.table_height = table_height
        self.solid = [local_box_arrays(t, cfg, "solid") for t in self.types]
        self.sweep = [local_box_arrays(t, cfg, "sweep") for t in self.types]
        corners = []
        for c, h, R in self.solid:
            signs = np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1], indexing="ij")).reshape(3, -1).T
            corners.append(np.concatenate([ci + (signs * hi) @ Ri.T for ci, hi, Ri in zip(c, h, R)]))
        self.corners = corners
        allc = np.concatenate(corners)
        pad = self.margin + 1e-9
        self.lo = allc.min(axis=0) - pad
        self.hi = allc.max(axis=0) + pad
        # every point the box filter keeps lies inside this ball around the centroid
        self.reach = float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi)))) + 1e-9

    def local_points(self, candidate, points):
        local = candidate.to_local(points)
        keep = np.all((local >= self.lo) & (local <= self.hi), axis=1)
        return local[keep]

    def check(self, candidate, points):
        """Return per-type ``(collision_free, region_count)`` lists."""
        local = self.local_points(candidate, points)
        free, counts = [], []
        for (c, h, R), (sc, sh, sR), corners in zip(self.solid, self.sweep, self.corners):
            hit = bool(np.any(points_in_boxes(local, c, h, R, self.margin)))
            if not hit and self.table_height is not None:
                world_z = (corners @ candidate.rotation.T + candidate.centroid)[:, 2]
                hit = bool(np.any(world_z < self.table_height))
            free.append(not hit)
            counts.append(int(np.count_nonzero(points_in_boxes(local, sc, sh, sR))))
        return free, counts

    def feasible_types(self, candidate, points, min_region_points=DEFAULT_MIN_REGION_POINTS):
        free, counts = self.check(candidate, points)
        return tuple(t.index for t, f, n in zip(self.types, free, counts)
                     if f and n >= min_region_points)


def prune(cset: CandidateSet, cloud: PointCloud, cfg: GripperConfig, types=ALL_TYPES,
          min_region_points: int = DEFAULT_MIN_REGION_POINTS, margin=None,
          table_height=None) -> CandidateSet:
    """Keep candidates where some grasp type is collision-free at its standoff and
    its finger sweep boxes hold at least ``min_region_points`` cloud points."""
    checker = FeasibilityChecker(cfg, types, margin, table_height)
    kept, feasible, free_types = [], {}, {}
    index = SpatialIndex(cloud) if len(cloud) else None
    for c in cset.candidates:
        near = cloud.points[index.radius(c.centroid, checker.reach)] if index else cloud.points
        free, counts = checker.check(c, near)
        ok = tuple(t.index for t, f, n in zip(checker.types, free, counts)
                   if f and n >= min_region_points)
        if ok:
            feasible[len(kept)] = ok
            free_types[len(kept)] = tuple(t.index for t, f in zip(checker.types, free) if f)
            kept.append(c)
    return CandidateSet(kept, cset.requested_k, feasible, free_types)
