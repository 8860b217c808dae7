"""Simplified 3-finger underactuated gripper.

Gripper frame: origin at the center of the palm face, +Z is the approach
direction, +X the closing direction.  Each finger is a planar 3-link chain
rooted on the palm face.  A finger curls in the plane spanned by +Z and its
inward direction ``u``; a cumulative joint angle of 0 points a link along +Z,
pi/2 points it along ``u``.

Default dimensions approximate the Robotiq 3-Finger Adaptive Gripper and are
all overridable through :class:`GripperConfig`.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import JointOutOfRange
from .geometry import quat_to_matrix, matrix_to_quat

FINGERS = ("thumb", "finger_a", "finger_b")
LINKS = ("proximal", "medial", "distal")


class Mode(enum.Enum):
    WIDE = "wide"
    BASIC = "basic"
    PINCHER = "pincher"


class Grip(enum.Enum):
    ENCOMPASSING = "encompassing"
    FINGERTIP = "fingertip"


class GraspType(enum.Enum):
    """The five grasp types, in the order used for label and logit indices."""

    WIDE_POWER = (0, Mode.WIDE, Grip.ENCOMPASSING)
    WIDE_PRECISION = (1, Mode.WIDE, Grip.FINGERTIP)
    BASIC_POWER = (2, Mode.BASIC, Grip.ENCOMPASSING)
    BASIC_PRECISION = (3, Mode.BASIC, Grip.FINGERTIP)
    PINCHER = (4, Mode.PINCHER, Grip.FINGERTIP)

    @property
    def index(self) -> int:
        return self.value[0]

    @property
    def mode(self) -> Mode:
        return self.value[1]

    @property
    def grip(self) -> Grip:
        return self.value[2]

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_index(cls, i):
        return ALL_TYPES[i]

    @classmethod
    def parse(cls, name):
        try:
            return cls[str(name).upper().replace("-", "_")]
        except KeyError:
            known = ", ".join(t.label for t in cls)
            raise ValueError(f"unknown grasp type {name!r}; expected one of {known}") from None


ALL_TYPES = tuple(GraspType)
N_TYPES = len(ALL_TYPES)

ABLATIONS = {
    "5type": ALL_TYPES,
    "2type": (GraspType.BASIC_POWER, GraspType.BASIC_PRECISION),
    "1type": (GraspType.PINCHER,),
}


@dataclass(frozen=True)
class FingerSpec:
    base: tuple          # (x, y) on the palm face
    angle: float         # direction of ``u`` in the palm plane, radians
    active: bool = True


def _rot2(xy, a):
    c, s = np.cos(a), np.sin(a)
    return (c * xy[0] - s * xy[1], s * xy[0] + c * xy[1])


def default_layouts(half_span=0.06, finger_offset=0.03, spread=0.45, pinch_half_span=0.035):
    thumb = FingerSpec((-half_span, 0.0), 0.0)
    a = (half_span, finger_offset)
    b = (half_span, -finger_offset)
    return {
        "basic": (thumb, FingerSpec(a, np.pi), FingerSpec(b, np.pi)),
        # non-thumb fingers rotated about the palm normal, away from each other
        "wide": (thumb,
                 FingerSpec(_rot2(a, spread), np.pi + spread),
                 FingerSpec(_rot2(b, -spread), np.pi - spread)),
        # thumb parked inside the palm envelope; two fingers oppose along X
        "pincher": (FingerSpec((-half_span, 0.0), 0.0, active=False),
                    FingerSpec((pinch_half_span, 0.0), np.pi),
                    FingerSpec((-pinch_half_span, 0.0), 0.0)),
    }


@dataclass(frozen=True)
class GripperConfig:
    d_encompassing: float = 0.019
    d_fingertip: float = 0.0822
    palm_dims: tuple = (0.15, 0.12, 0.06)
    link_lengths: tuple = (0.05, 0.033, 0.022)
    link_width: float = 0.022
    link_thickness: float = 0.016
    layouts: dict = field(default_factory=default_layouts)
    # open-hand link tilt relative to the previous link (negative = outward);
    # joint angles are measured from this pose
    open_offsets: tuple = (-0.3, 0.0, 0.0)
    joint_limit: float = np.pi / 2
    close_step: float = np.radians(1.0)
    collision_margin: float = 0.005
    sweep_gap: float = 0.001
    # grasp-frame crop box: closing x binormal x approach, starting at the
    # encompassing palm plane
    region_dims: tuple = (0.12, 0.08, 0.10)

    def __post_init__(self):
        dims = [self.d_encompassing, self.d_fingertip, *self.palm_dims, *self.link_lengths,
                self.link_width, self.link_thickness, self.joint_limit, self.close_step,
                *self.region_dims]
        if any(not np.isfinite(v) or v <= 0 for v in dims):
            raise ValueError("gripper dimensions must be strictly positive")
        if self.d_fingertip <= self.d_encompassing:
            raise ValueError("d_fingertip must exceed d_encompassing")
        if self.collision_margin < 0:
            raise ValueError("collision margin must be non-negative")
        for mode in Mode:
            if len(self.layouts.get(mode.value, ())) != 3:
                raise ValueError(f"layout for mode {mode.value!r} needs 3 fingers")

    def standoff(self, gtype: GraspType) -> float:
        return self.d_encompassing if gtype.grip is Grip.ENCOMPASSING else self.d_fingertip

    @property
    def finger_length(self):
        return float(sum(self.link_lengths))

    @property
    def reach(self):
        """Radius around the palm center that bounds every body box."""
        return float(np.linalg.norm(self.palm_dims) + self.finger_length + 0.1)

    def layout(self, mode: Mode):
        return self.layouts[mode.value]

    def to_dict(self):
        d = asdict(self)
        d["layouts"] = {m: [{"base": list(map(float, f.base)), "angle": float(f.angle),
                             "active": bool(f.active)} for f in fs]
                        for m, fs in self.layouts.items()}
        for k in ("palm_dims", "link_lengths", "region_dims", "open_offsets"):
            d[k] = [float(v) for v in d[k]]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "layouts" in d:
            d["layouts"] = {m: tuple(FingerSpec(tuple(f["base"]), float(f["angle"]),
                                                bool(f.get("active", True))) for f in fs)
                            for m, fs in d["layouts"].items()}
        for k in ("palm_dims", "link_lengths", "region_dims", "open_offsets"):
            if k in d:
                d[k] = tuple(float(v) for v in d[k])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown gripper config fields: {sorted(unknown)}")
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------- #
# poses and bodies
# --------------------------------------------------------------------------- #

@dataclass(frozen=True, eq=False)
class GripperPose:
    palm_center: np.ndarray
    rotation: np.ndarray  # 3x3, columns (closing, binormal, approach)

    @property
    def orientation(self):
        return matrix_to_quat(self.rotation)

    @property
    def approach(self):
        return self.rotation[:, 2]

    @property
    def closing(self):
        return self.rotation[:, 0]

    def to_world(self, local_points):
        return np.asarray(local_points) @ self.rotation.T + self.palm_center

    def to_local(self, world_points):
        return (np.asarray(world_points) - self.palm_center) @ self.rotation


def standoff_pose(candidate, gtype: GraspType, cfg: GripperConfig) -> GripperPose:
    """Palm pose for executing ``gtype`` at ``candidate``: backed off along -approach."""
    R = candidate.rotation
    return GripperPose(np.asarray(candidate.centroid, dtype=np.float64) - R[:, 2] * cfg.standoff(gtype), R)


@dataclass(frozen=True, eq=False)
class OBox:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray
    tag: str
    finger: Optional[str] = None

    def contains(self, points, margin=0.0):
        local = (np.asarray(points) - self.center) @ self.rotation
        return np.all(np.abs(local) <= self.half_extents + margin, axis=-1)

    def corners(self):
        signs = np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1], indexing="ij")).reshape(3, -1).T
        return self.center + (signs * self.half_extents) @ self.rotation.T


@dataclass(frozen=True, eq=False)
class BodySet:
    boxes: tuple

    def solid(self):
        return [b for b in self.boxes if b.tag != "sweep"]

    def sweeps(self):
        return [b for b in self.boxes if b.tag == "sweep"]


def _finger_axes(spec: FingerSpec):
    u = np.array([np.cos(spec.angle), np.sin(spec.angle), 0.0])
    ez = np.array([0.0, 0.0, 1.0])
    w = np.cross(ez, u)
    return u, w, ez


def finger_chain(spec: FingerSpec, joints, cfg: GripperConfig):
    """Local-frame link geometry for one finger.

    Returns a list of ``(start, direction, inward_normal, length)`` per link.
    """
    u, _, ez = _finger_axes(spec)
    start = np.array([spec.base[0], spec.base[1], 0.0])
    phi = 0.0
    out = []
    for theta, off, length in zip(joints, cfg.open_offsets, cfg.link_lengths):
        phi += theta + off
        d = np.cos(phi) * ez + np.sin(phi) * u
        n = -np.sin(phi) * ez + np.cos(phi) * u
        out.append((start, d, n, length))
        start = start + d * length
    return out


def _check_joints(joint_state, cfg):
    js = np.zeros((3, 3)) if joint_state is None else np.asarray(joint_state, dtype=np.float64)
    if js.shape != (3, 3):
        raise JointOutOfRange("joint_state must be 3 fingers x 3 joints")
    if np.any(js < 0) or np.any(js > cfg.joint_limit + 1e-12) or not np.all(np.isfinite(js)):
        raise JointOutOfRange(f"joint angles must lie in [0, {cfg.joint_limit}]")
    return js


def local_body_boxes(gtype: GraspType, cfg: GripperConfig, joint_state=None):
    """Body boxes in the gripper frame (palm center at origin)."""
    js = _check_joints(joint_state, cfg)
    boxes = []
    px, py, pz = cfg.palm_dims
    boxes.append(OBox(np.array([0.0, 0.0, -pz / 2]), np.array([px / 2, py / 2, pz / 2]),
                      np.eye(3), "palm"))
    t = cfg.link_thickness
    for fname, spec, joints in zip(FINGERS, cfg.layout(gtype.mode), js):
        if not spec.active:
            continue
        u, w, ez = _finger_axes(spec)
        for lname, (start, d, n, length) in zip(LINKS, finger_chain(spec, joints, cfg)):
            center = start + d * (length / 2) - n * (t / 2)
            R = np.column_stack([n, w, d])
            if np.linalg.det(R) < 0:
                R[:, 1] = -R[:, 1]
            boxes.append(OBox(center, np.array([t / 2, cfg.link_width / 2, length / 2]), R,
                              lname, fname))
        base = np.array([spec.base[0], spec.base[1], 0.0])
        reach = max(float(-(base @ u)), 0.01)
        height = cfg.finger_length - cfg.sweep_gap
        center = base + u * (reach / 2) + ez * (cfg.sweep_gap + height / 2)
        boxes.append(OBox(center, np.array([reach / 2, cfg.link_width / 2, height / 2]),
                          np.column_stack([u, w, ez]), "sweep", fname))
    return boxes


def body_set(pose: GripperPose, gtype: GraspType, cfg: GripperConfig, joint_state=None) -> BodySet:
    """World-frame palm, link and sweep-region boxes for ``gtype`` at ``pose``."""
    R = pose.rotation
    out = []
    for b in local_body_boxes(gtype, cfg, joint_state):
        out.append(OBox(pose.palm_center + R @ b.center, b.half_extents, R @ b.rotation,
                        b.tag, b.finger))
    return BodySet(tuple(out))


def collides(bodies: BodySet, cloud, margin: Optional[float] = None) -> bool:
    """True iff any cloud point lies inside a non-sweep box inflated by ``margin``."""
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud)
    if len(pts) == 0:
        return False
    margin = 0.0 if margin is None else margin
    for box in bodies.solid():
        if np.any(box.contains(pts, margin)):
            return True
    return False


# --------------------------------------------------------------------------- #
# vectorized checks in the candidate frame (used for pruning large sets)
# --------------------------------------------------------------------------- #

def local_box_arrays(gtype: GraspType, cfg: GripperConfig, tag_filter="solid"):
    """Stacked centers, half extents and rotations of open-hand boxes in the *candidate* frame.

    The candidate frame has its origin at the grasp centroid, so every box is
    shifted by the type's standoff along -Z.
    """
    boxes = local_body_boxes(gtype, cfg)
    if tag_filter == "solid":
        boxes = [b for b in boxes if b.tag != "sweep"]
    elif tag_filter == "sweep":
        boxes = [b for b in boxes if b.tag == "sweep"]
    shift = np.array([0.0, 0.0, -cfg.standoff(gtype)])
    centers = np.array([b.center + shift for b in boxes])
    halves = np.array([b.half_extents for b in boxes])
    rots = np.array([b.rotation for b in boxes])
    return centers, halves, rots


def points_in_boxes(local_points, centers, halves, rots, margin=0.0):
    """Boolean (N,) mask: point inside any of the boxes (all in one frame)."""
    p = np.asarray(local_points)
    if len(p) == 0:
        return np.zeros(0, dtype=bool)
    if len(centers) == 0:
        return np.zeros(len(p), dtype=bool)
    # (p - c_b) @ R_b for every box b in one matmul against the stacked rotations
    rots = np.asarray(rots, dtype=np.float64)
    B = len(rots)
    W = rots.transpose(1, 0, 2).reshape(3, 3 * B)
    offset = np.einsum("bj,bjk->bk", np.asarray(centers, dtype=np.float64), rots).reshape(-1)
    q = np.abs(p @ W - offset).reshape(len(p), B, 3)
    lim = np.asarray(halves, dtype=np.float64) + margin
    inside = (q[..., 0] <= lim[:, 0]) & (q[..., 1] <= lim[:, 1]) & (q[..., 2] <= lim[:, 2])
    return inside.any(axis=1)


# --------------------------------------------------------------------------- #
# quasi-static finger closing
# --------------------------------------------------------------------------- #

@dataclass(frozen=True, eq=False)
class Contact:
    finger: str
    link: str
    point: np.ndarray
    normal: np.ndarray
    obstacle: str
    depth: float


@dataclass(frozen=True, eq=False)
class FingerReport:
    finger: str
    contacts: tuple
    joints: np.ndarray

    @property
    def link_contacted(self):
        return self.contacts[0].link if self.contacts else None

    @property
    def contact_point(self):
        return self.contacts[0].point if self.contacts else None

    @property
    def contact_normal(self):
        return self.contacts[0].normal if self.contacts else None


def _link_samples(cfg):
    """Sample offsets per link in (along-length fraction, lateral, inward depth)."""
    ls = np.linspace(0.0, 1.0, 7)
    lat = np.array([-0.5, 0.0, 0.5]) * cfg.link_width
    dep = np.array([0.0, 0.5, 1.0]) * cfg.link_thickness
    g = np.array(np.meshgrid(ls, lat, dep, indexing="ij")).reshape(3, -1).T
    return g


def _chain_points(spec, cfg, th1, th2, th3, samples):
    """World-independent local sample points for arrays of joint angles.

    Returns an array (A, 3 links, S, 3).
    """
    u, w, ez = _finger_axes(spec)
    base = np.array([spec.base[0], spec.base[1], 0.0])
    A = len(th1)
    o1, o2, o3 = cfg.open_offsets
    phis = np.stack([th1 + o1, th1 + th2 + o1 + o2, th1 + th2 + th3 + o1 + o2 + o3], axis=1)
    d = np.cos(phis)[..., None] * ez + np.sin(phis)[..., None] * u  # (A,3,3)
    n = -np.sin(phis)[..., None] * ez + np.cos(phis)[..., None] * u
    lengths = np.asarray(cfg.link_lengths)
    starts = np.empty((A, 3, 3))
    starts[:, 0] = base
    starts[:, 1] = base + d[:, 0] * lengths[0]
    starts[:, 2] = starts[:, 1] + d[:, 1] * lengths[1]
    frac, lat, dep = samples[:, 0], samples[:, 1], samples[:, 2]
    pts = (starts[:, :, None, :]
           + d[:, :, None, :] * (frac[None, None, :, None] * lengths[None, :, None, None])
           + w[None, None, None, :] * lat[None, None, :, None]
           - n[:, :, None, :] * dep[None, None, :, None])
    return pts


def _sdf_all(obstacles, world_pts):
    flat = world_pts.reshape(-1, 3)
    return np.stack([np.asarray(ob.sdf(flat)) for _, ob in obstacles]).reshape(
        (len(obstacles),) + world_pts.shape[:-1])


def close_fingers(pose: GripperPose, gtype: GraspType, cfg: GripperConfig, obstacles):
    """Quasi-static closing of every active finger against ``obstacles``.

    ``obstacles`` is a sequence of ``(name, solid)`` pairs where each solid has
    ``sdf`` and ``normal`` methods (world frame).  Joints advance one at a time
    in ``close_step`` increments: the proximal joint until some link touches an
    obstacle or hits its limit, then the joint after the touching link, and so
    on down the chain.  The reported joint state is the last penetration-free
    step.
    """
    obstacles = list(obstacles)
    samples = _link_samples(cfg)
    nsteps = int(np.floor(cfg.joint_limit / cfg.close_step + 1e-9))
    grid = np.arange(nsteps + 1) * cfg.close_step
    if grid[-1] < cfg.joint_limit - 1e-12:
        grid = np.append(grid, cfg.joint_limit)
    reports = []
    for fname, spec in zip(FINGERS, cfg.layout(gtype.mode)):
        if not spec.active:
            continue
        joints = np.zeros(3)
        contacts = []
        joint = 0
        while joint < 3:
            angles = np.tile(joints, (len(grid), 1))
            angles[:, joint] = grid
            if not obstacles:
                joints[joint] = grid[-1]
                joint += 1
                continue
            local = _chain_points(spec, cfg, angles[:, 0], angles[:, 1], angles[:, 2], samples)
            world = pose.to_world(local)
            sd = _sdf_all(obstacles, world)  # (O, A, 3, S)
            sd[:, :, :joint, :] = np.inf  # links before the moving joint are parked
            per_step = sd.min(axis=(0, 2, 3))
            hit = np.nonzero(per_step < 0)[0]
            if len(hit) == 0:
                joints[joint] = grid[-1]
                joint += 1
                continue
            a = hit[0]
            joints[joint] = grid[max(a - 1, 0)]
            step_sd = sd[:, a]  # (O, 3, S)
            o_i, link_i, s_i = np.unravel_index(np.argmin(step_sd), step_sd.shape)
            deepest = step_sd[o_i, link_i, s_i]
            # average samples tied at the deepest level so the pick is frame-independent
            ties = step_sd[o_i, link_i] <= deepest + 1e-9
            point = world[a, link_i][ties].mean(axis=0)
            name, ob = obstacles[o_i]
            normal = np.asarray(ob.normal(point[None]))[0]
            contacts.append(Contact(fname, LINKS[link_i], point, normal, name, float(-deepest)))
            joint = link_i + 1
        reports.append(FingerReport(fname, tuple(contacts), joints.copy()))
    return reports
