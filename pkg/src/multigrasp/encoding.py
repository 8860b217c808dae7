"""Grasp-frame encodings: the cloud seen from a candidate, cropped to the
region the fingers occupy and resampled to a fixed point count."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyCloud, EmptyRegion
from .gripper import GripperConfig

DEFAULT_POINTS = 512


@dataclass(frozen=True, eq=False)
class GraspEncoding:
    points: np.ndarray      # (M, 3) grasp-frame coordinates, zero padded
    valid_count: int
    region: tuple           # (lo, hi) corners of the crop box

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def mask(self):
        m = np.zeros(self.size, dtype=bool)
        m[: self.valid_count] = True
        return m


def crop_box(cfg: GripperConfig):
    rx, ry, rz = cfg.region_dims
    lo = np.array([-rx / 2, -ry / 2, -cfg.d_encompassing])
    hi = np.array([rx / 2, ry / 2, -cfg.d_encompassing + rz])
    return lo, hi


def crop_mask(local_points, cfg: GripperConfig):
    lo, hi = crop_box(cfg)
    p = np.asarray(local_points)
    return np.all((p >= lo) & (p <= hi), axis=1)


def _rng(seed, salt=0):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(salt)])))


def encode(cloud, candidate, cfg: GripperConfig, M: int = DEFAULT_POINTS, seed: int = 0,
           salt: int = 0) -> GraspEncoding:
    """Express ``cloud`` in ``candidate``'s frame, crop and resample to ``M`` points."""
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud, dtype=np.float64)
    if len(pts) == 0:
        raise EmptyCloud("cannot encode an empty cloud")
    local = candidate.to_local(pts)
    inside = local[crop_mask(local, cfg)]
    n = len(inside)
    if n == 0:
        raise EmptyRegion("no points inside the grasp region")
    if n > M:
        pick = np.sort(_rng(seed, salt).choice(n, size=M, replace=False))
        inside = inside[pick]
        n = M
    out = np.zeros((M, 3))
    out[:n] = inside
    return GraspEncoding(out, n, crop_box(cfg))


def encode_many(cloud, candidates, cfg: GripperConfig, M: int = DEFAULT_POINTS, seed: int = 0):
    """Encode a batch; candidate ``i`` draws its subsample from stream ``(seed, i)``.

    Returns a list with ``None`` for candidates whose region is empty.
    """
    out = []
    for i, c in enumerate(candidates):
        try:
            out.append(encode(cloud, c, cfg, M, seed, salt=i))
        except EmptyRegion:
            out.append(None)
    return out
