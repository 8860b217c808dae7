"""Core geometric types, spatial indexing and local surface estimation.

Points and vectors are plain ``numpy`` arrays of shape ``(3,)`` or ``(N, 3)``
in meters.  Quaternions are ``(w, x, y, z)`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateNeighborhood, EmptyCloud

DEFAULT_FRAME_RADIUS = 0.01


# --------------------------------------------------------------------------- #
# rotations
# --------------------------------------------------------------------------- #

def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize a zero or non-finite quaternion")
    q = q / n
    # canonical hemisphere so that equal rotations compare equal
    if q[0] < 0:
        q = -q
    return q


def quat_to_matrix(q):
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    """Convert a rotation matrix to a unit quaternion (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def axis_angle_matrix(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def random_rotation(rng):
    q = rng.normal(size=4)
    return quat_to_matrix(q)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (unit quaternion, wxyz) followed by translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", quat_normalize(self.rotation))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)):
        return cls(matrix_to_quat(R), np.asarray(t, dtype=np.float64))

    @classmethod
    def random(cls, rng, max_translation=1.0):
        return cls(rng.normal(size=4), rng.uniform(-max_translation, max_translation, size=3))

    @property
    def matrix(self):
        return quat_to_matrix(self.rotation)

    def homogeneous(self):
        H = np.eye(4)
        H[:3, :3] = self.matrix
        H[:3, 3] = self.translation
        return H

    def apply(self, points):
        p = np.asarray(points, dtype=np.float64)
        return p @ self.matrix.T + self.translation

    def apply_vector(self, vectors):
        return np.asarray(vectors, dtype=np.float64) @ self.matrix.T

    def inverse(self):
        R = self.matrix.T
        return RigidTransform.from_matrix(R, -R @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        R = self.matrix @ other.matrix
        return RigidTransform.from_matrix(R, self.matrix @ other.translation + self.translation)

    __matmul__ = compose


# --------------------------------------------------------------------------- #
# point clouds
# --------------------------------------------------------------------------- #

@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered set of 3D points.

    ``view_tag[i]`` identifies the camera that produced point ``i``; when
    ``viewpoints`` is given, ``viewpoints[view_tag[i]]`` is that camera's
    position and is used to orient surface normals.
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    view_tag: Optional[np.ndarray] = None
    viewpoints: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if nrm.shape != pts.shape:
                raise ValueError("normals must match points in length")
            if not np.all(np.isfinite(nrm)):
                raise ValueError("normals must be finite")
            if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > 1e-6:
                raise ValueError("normals must have unit length")
            object.__setattr__(self, "normals", nrm)
        if self.view_tag is not None:
            tag = np.asarray(self.view_tag, dtype=np.int64).reshape(-1)
            if tag.shape[0] != pts.shape[0]:
                raise ValueError("view_tag must match points in length")
            object.__setattr__(self, "view_tag", tag)
        if self.viewpoints is not None:
            vp = np.asarray(self.viewpoints, dtype=np.float64).reshape(-1, 3)
            object.__setattr__(self, "viewpoints", vp)

    def __len__(self):
        return self.points.shape[0]

    def select(self, mask_or_index) -> "PointCloud":
        sel = np.asarray(mask_or_index)
        return PointCloud(
            self.points[sel],
            None if self.normals is None else self.normals[sel],
            None if self.view_tag is None else self.view_tag[sel],
            self.viewpoints,
        )

    def transformed(self, T: RigidTransform) -> "PointCloud":
        return PointCloud(
            T.apply(self.points),
            None if self.normals is None else T.apply_vector(self.normals),
            self.view_tag,
            None if self.viewpoints is None else T.apply(self.viewpoints),
        )

    def viewpoint_of(self, index):
        """Camera position for point ``index``; 1 m above the cloud centroid if unknown."""
        if self.viewpoints is not None and self.view_tag is not None:
            return self.viewpoints[self.view_tag[index]]
        if self.viewpoints is not None and len(self.viewpoints) == 1:
            return self.viewpoints[0]
        return self.points.mean(axis=0) + np.array([0.0, 0.0, 1.0])

    @staticmethod
    def concatenate(clouds) -> "PointCloud":
        """Merge clouds, renumbering view tags so each input keeps its cameras."""
        clouds = list(clouds)
        pts = np.concatenate([c.points for c in clouds])
        has_normals = all(c.normals is not None for c in clouds)
        normals = np.concatenate([c.normals for c in clouds]) if has_normals else None
        if all(c.view_tag is not None and c.viewpoints is not None for c in clouds):
            tags, vps, offset = [], [], 0
            for c in clouds:
                tags.append(c.view_tag + offset)
                vps.append(c.viewpoints)
                offset += len(c.viewpoints)
            return PointCloud(pts, normals, np.concatenate(tags), np.concatenate(vps))
        return PointCloud(pts, normals)


# --------------------------------------------------------------------------- #
# spatial index
# --------------------------------------------------------------------------- #

class SpatialIndex:
    """Immutable balanced k-d tree over a cloud's points."""

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise EmptyCloud("cannot index an empty cloud")
        self.cloud = cloud
        self.points = cloud.points
        self._tree = cKDTree(cloud.points, balanced_tree=True, compact_nodes=True)

    def __len__(self):
        return len(self.points)

    def knn(self, query, k):
        """Indices of the ``min(k, N)`` nearest points, nearest first."""
        k = min(int(k), len(self.points))
        if k <= 0:
            return np.empty(0, dtype=np.int64)
        _, idx = self._tree.query(np.asarray(query, dtype=np.float64), k=k)
        return np.atleast_1d(idx).astype(np.int64)

    def radius(self, query, r):
        """Sorted indices of all points within distance ``r`` (inclusive)."""
        idx = self._tree.query_ball_point(np.asarray(query, dtype=np.float64), r)
        return np.asarray(sorted(idx), dtype=np.int64)

    def radius_many(self, queries, r):
        return [np.asarray(sorted(i), dtype=np.int64)
                for i in self._tree.query_ball_point(np.asarray(queries, dtype=np.float64), r)]


def build_index(cloud: PointCloud) -> SpatialIndex:
    return SpatialIndex(cloud)


# --------------------------------------------------------------------------- #
# surface frames
# --------------------------------------------------------------------------- #

@dataclass(frozen=True, eq=False)
class SurfaceFrame:
    origin: np.ndarray
    normal: np.ndarray
    curvature_axis: np.ndarray
    binormal: np.ndarray
    eigenvalues: np.ndarray

    @property
    def rotation(self):
        """Columns are (curvature_axis, binormal, normal)."""
        return np.column_stack([self.curvature_axis, self.binormal, self.normal])


def surface_frames(points, neighbor_lists, queries, viewpoints):
    """Vectorized frame estimation for many queries.

    Returns ``(normals, axes, binormals, eigenvalues, ok)`` where ``ok`` flags
    queries with a non-degenerate neighborhood; rows with ``ok == False`` are
    undefined.
    """
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    viewpoints = np.broadcast_to(np.asarray(viewpoints, dtype=np.float64), queries.shape)
    m = len(queries)
    counts = np.array([len(n) for n in neighbor_lists], dtype=np.int64)
    ok = counts >= 4
    means = np.zeros((m, 3))
    covs = np.tile(np.eye(3), (m, 1, 1))
    for i in np.nonzero(ok)[0]:
        nb = points[neighbor_lists[i]]
        means[i] = nb.mean(axis=0)
        c = nb - means[i]
        covs[i] = c.T @ c / len(nb)
    evals, evecs = np.linalg.eigh(covs)
    ok &= evals[:, 1] > 1e-12 * np.maximum(evals[:, 2], 1e-300)
    normals = evecs[:, :, 0].copy()
    flip = np.einsum("ij,ij->i", normals, viewpoints - queries) < 0
    normals[flip] *= -1
    axes = evecs[:, :, 1].copy()
    for i in np.nonzero(ok)[0]:
        # eigenvector sign is arbitrary; fix it from the neighborhood itself so
        # the frame moves with the cloud under rigid motions
        proj = (points[neighbor_lists[i]] - means[i]) @ axes[i]
        skew = np.sum(proj ** 3)
        scale = np.sqrt(evals[i, 1]) ** 3 * counts[i]
        if abs(skew) > 1e-6 * scale:
            if skew < 0:
                axes[i] *= -1
        elif (queries[i] - means[i]) @ axes[i] < 0:
            axes[i] *= -1
    binormals = np.cross(normals, axes)
    return normals, axes, binormals, np.maximum(evals, 0.0), ok


def estimate_surface_frame(index: SpatialIndex, query, radius=DEFAULT_FRAME_RADIUS, viewpoint=None):
    """Estimate the local surface frame at ``query`` from neighbors within ``radius``.

    The normal is the smallest-eigenvalue eigenvector of the neighbors' centered
    covariance, flipped to face ``viewpoint``; the curvature axis is the middle
    eigenvector and the binormal completes a right-handed triad.
    """
    query = np.asarray(query, dtype=np.float64)
    if viewpoint is None:
        viewpoint = index.points.mean(axis=0) + np.array([0.0, 0.0, 1.0])
    nbrs = index.radius(query, radius)
    if len(nbrs) < 4:
        raise DegenerateNeighborhood(f"only {len(nbrs)} neighbors within {radius} m (need 4)")
    n, a, b, ev, ok = surface_frames(index.points, [nbrs], query[None], viewpoint)
    if not ok[0]:
        raise DegenerateNeighborhood("neighborhood covariance has rank < 2")
    return SurfaceFrame(query.copy(), n[0], a[0], b[0], ev[0])
