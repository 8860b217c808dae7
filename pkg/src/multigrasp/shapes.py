"""Analytic solids used by the grasp oracle and the virtual depth camera.

Every primitive exposes a signed distance function (negative inside), an
outward normal and a ray intersection routine, all vectorized over points.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import RigidTransform

_NORMAL_STEP = 1e-6


class Primitive:
    pose: RigidTransform

    def _local(self, points):
        p = np.asarray(points, dtype=np.float64)
        return (p - self.pose.translation) @ self.pose.matrix

    def sdf(self, points):
        return self._sdf_local(self._local(points))

    def normal(self, points):
        """Outward unit normal from the central-difference SDF gradient."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        grad = np.empty_like(p)
        for i in range(3):
            e = np.zeros(3)
            e[i] = _NORMAL_STEP
            grad[:, i] = self.sdf(p + e) - self.sdf(p - e)
        n = np.linalg.norm(grad, axis=1, keepdims=True)
        n[n == 0] = 1.0
        return grad / n

    def raycast(self, origins, dirs):
        """Smallest positive hit distance per ray (``inf`` when missed)."""
        R = self.pose.matrix
        o = (np.asarray(origins, dtype=np.float64) - self.pose.translation) @ R
        d = np.asarray(dirs, dtype=np.float64) @ R
        return self._raycast_local(o, d)

    def transformed(self, T: RigidTransform):
        raise NotImplementedError

    @property
    def bounding_radius(self):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Box(Primitive):
    pose: RigidTransform
    half_extents: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if np.any(h <= 0):
            raise ValueError("box half extents must be positive")
        object.__setattr__(self, "half_extents", h)

    def _sdf_local(self, q):
        d = np.abs(q) - self.half_extents
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
        inside = np.minimum(np.max(d, axis=-1), 0.0)
        return outside + inside

    def _raycast_local(self, o, d):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-self.half_extents - o) * inv
            t2 = (self.half_extents - o) * inv
        t1 = np.where(np.isnan(t1), -np.inf, t1)
        t2 = np.where(np.isnan(t2), np.inf, t2)
        tmin = np.max(np.minimum(t1, t2), axis=-1)
        tmax = np.min(np.maximum(t1, t2), axis=-1)
        hit = (tmax >= np.maximum(tmin, 0.0)) & (tmax > 1e-12)
        t = np.where(tmin > 1e-12, tmin, tmax)
        return np.where(hit, t, np.inf)

    def transformed(self, T):
        return Box(T @ self.pose, self.half_extents)

    @property
    def bounding_radius(self):
        return float(np.linalg.norm(self.half_extents))

    @property
    def volume(self):
        return float(np.prod(2 * self.half_extents))


@dataclass(frozen=True, eq=False)
class Cylinder(Primitive):
    """Solid cylinder along the local z axis."""

    pose: RigidTransform
    radius: float
    half_height: float

    def __post_init__(self):
        if self.radius <= 0 or self.half_height <= 0:
            raise ValueError("cylinder dimensions must be positive")

    def _sdf_local(self, q):
        dr = np.linalg.norm(q[..., :2], axis=-1) - self.radius
        dz = np.abs(q[..., 2]) - self.half_height
        outside = np.hypot(np.maximum(dr, 0.0), np.maximum(dz, 0.0))
        inside = np.minimum(np.maximum(dr, dz), 0.0)
        return outside + inside

    def _raycast_local(self, o, d):
        best = np.full(o.shape[0], np.inf)
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = 2 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1])
        c = o[:, 0] ** 2 + o[:, 1] ** 2 - self.radius ** 2
        disc = b * b - 4 * a * c
        ok = (a > 1e-18) & (disc >= 0)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        safe_a = np.where(ok, a, 1.0)
        for t in ((-b - sq) / (2 * safe_a), (-b + sq) / (2 * safe_a)):
            z = o[:, 2] + t * d[:, 2]
            good = ok & (t > 1e-12) & (np.abs(z) <= self.half_height)
            best = np.where(good & (t < best), t, best)
        for zc in (-self.half_height, self.half_height):
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (zc - o[:, 2]) / d[:, 2]
            x = o[:, 0] + t * d[:, 0]
            y = o[:, 1] + t * d[:, 1]
            good = np.isfinite(t) & (t > 1e-12) & (x * x + y * y <= self.radius ** 2)
            best = np.where(good & (t < best), t, best)
        return best

    def transformed(self, T):
        return Cylinder(T @ self.pose, self.radius, self.half_height)

    @property
    def bounding_radius(self):
        return float(np.hypot(self.radius, self.half_height))

    @property
    def volume(self):
        return float(np.pi * self.radius ** 2 * 2 * self.half_height)


@dataclass(frozen=True, eq=False)
class Sphere(Primitive):
    pose: RigidTransform
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    def _sdf_local(self, q):
        return np.linalg.norm(q, axis=-1) - self.radius

    def _raycast_local(self, o, d):
        a = np.sum(d * d, axis=1)
        b = 2 * np.sum(o * d, axis=1)
        c = np.sum(o * o, axis=1) - self.radius ** 2
        disc = b * b - 4 * a * c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0 = (-b - sq) / (2 * a)
        t1 = (-b + sq) / (2 * a)
        t = np.where(t0 > 1e-12, t0, t1)
        return np.where(ok & (t > 1e-12), t, np.inf)

    def transformed(self, T):
        return Sphere(T @ self.pose, self.radius)

    @property
    def bounding_radius(self):
        return float(self.radius)

    @property
    def volume(self):
        return float(4.0 / 3.0 * np.pi * self.radius ** 3)


@dataclass(frozen=True, eq=False)
class Halfspace(Primitive):
    """Everything below the plane z = height (a table top)."""

    height: float = 0.0
    pose: RigidTransform = field(default_factory=RigidTransform)

    def sdf(self, points):
        return np.asarray(points, dtype=np.float64)[..., 2] - self.height

    def normal(self, points):
        p = np.atleast_2d(points)
        return np.tile([0.0, 0.0, 1.0], (p.shape[0], 1))

    def raycast(self, origins, dirs):
        o = np.asarray(origins, dtype=np.float64)
        d = np.asarray(dirs, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.height - o[:, 2]) / d[:, 2]
        return np.where(np.isfinite(t) & (t > 1e-12), t, np.inf)

    def transformed(self, T):
        raise ValueError("a table halfspace cannot be rigidly transformed")


@dataclass(frozen=True, eq=False)
class SolidObject:
    """A graspable object: a union of primitives plus physical tags."""

    object_id: str
    parts: tuple
    mass: float
    size_class: str = "medium"

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass proxy must be positive")
        if self.size_class not in ("small", "medium", "large"):
            raise ValueError(f"unknown size class {self.size_class!r}")
        object.__setattr__(self, "parts", tuple(self.parts))

    def sdf(self, points):
        return np.min([p.sdf(points) for p in self.parts], axis=0)

    def normal(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        d = np.stack([part.sdf(p) for part in self.parts])
        which = np.argmin(d, axis=0)
        out = np.empty_like(p)
        for i, part in enumerate(self.parts):
            sel = which == i
            if np.any(sel):
                out[sel] = part.normal(p[sel])
        return out

    def raycast(self, origins, dirs):
        return np.min([p.raycast(origins, dirs) for p in self.parts], axis=0)

    @property
    def center_of_mass(self):
        vols = np.array([p.volume for p in self.parts])
        cents = np.array([p.pose.translation for p in self.parts])
        return vols @ cents / vols.sum()

    @property
    def bounding_center(self):
        return self.center_of_mass

    @property
    def bounding_radius(self):
        c = self.center_of_mass
        return max(np.linalg.norm(p.pose.translation - c) + p.bounding_radius for p in self.parts)

    def lowest_z(self):
        """Approximate lowest point along world z (sampled on part bounding geometry)."""
        lows = []
        for p in self.parts:
            if isinstance(p, Box):
                signs = np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1])).reshape(3, -1).T
                corners = p.pose.apply(signs * p.half_extents)
                lows.append(corners[:, 2].min())
            elif isinstance(p, Cylinder):
                axis = p.pose.matrix[:, 2]
                tilt = np.sqrt(max(0.0, 1 - axis[2] ** 2))
                lows.append(p.pose.translation[2] - abs(axis[2]) * p.half_height - tilt * p.radius)
            else:
                lows.append(p.pose.translation[2] - p.bounding_radius)
        return min(lows)

    def transformed(self, T: RigidTransform) -> "SolidObject":
        return SolidObject(self.object_id, tuple(p.transformed(T) for p in self.parts),
                           self.mass, self.size_class)
