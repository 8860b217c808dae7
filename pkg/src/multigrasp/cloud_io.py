"""ASCII PLY and scene-JSON readers/writers.

Scene documents look like::

    {
      "table_height": 0.0,
      "objects": [
        {"shape_id": "cereal_box",
         "pose": {"rotation": [1, 0, 0, 0], "translation": [0.1, 0.0, 0.0]},
         "scale": [1.0, 1.0, 1.0]}
      ],
      "cameras": [{"position": [0.5, 0.0, 0.6], "look_at": [0.0, 0.0, 0.0]}]
    }

All lengths are meters and quaternions are (w, x, y, z).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (BadFloat, CountMismatch, EmptyCloud, MalformedHeader, NonPositiveScale,
                     SchemaViolation)
from .geometry import PointCloud, RigidTransform

_FLOAT_TYPES = {"float", "float32", "double", "float64"}
_INT_TYPES = {"char", "uchar", "short", "ushort", "int", "uint", "int8", "uint8", "int16",
              "uint16", "int32", "uint32"}


def _fmt(x):
    return repr(float(x))


# --------------------------------------------------------------------------- #
# PLY
# --------------------------------------------------------------------------- #

def _parse_header(lines):
    if not lines or lines[0].strip() != "ply":
        raise MalformedHeader("missing 'ply' magic line")
    elements = []  # [name, count, [props]]
    fmt_seen = False
    for i, raw in enumerate(lines[1:], start=1):
        tok = raw.split()
        if not tok:
            continue
        key = tok[0]
        if key == "end_header":
            if not fmt_seen:
                raise MalformedHeader("missing format line")
            return elements, i + 1
        if key in ("comment", "obj_info"):
            continue
        if key == "format":
            if len(tok) != 3 or tok[1] != "ascii":
                raise MalformedHeader(f"unsupported format line: {raw.strip()!r}")
            fmt_seen = True
        elif key == "element":
            if len(tok) != 3:
                raise MalformedHeader(f"bad element line: {raw.strip()!r}")
            try:
                count = int(tok[2])
            except ValueError:
                raise MalformedHeader(f"bad element count: {tok[2]!r}") from None
            if count < 0:
                raise MalformedHeader("negative element count")
            elements.append([tok[1], count, []])
        elif key == "property":
            if not elements:
                raise MalformedHeader("property before any element")
            if len(tok) == 3 and (tok[1] in _FLOAT_TYPES or tok[1] in _INT_TYPES):
                elements[-1][2].append((tok[2], tok[1]))
            elif len(tok) == 5 and tok[1] == "list":
                elements[-1][2].append((tok[4], "list"))
            else:
                raise MalformedHeader(f"bad property line: {raw.strip()!r}")
        else:
            raise MalformedHeader(f"unexpected header line: {raw.strip()!r}")
    raise MalformedHeader("missing 'end_header'")


def parse_ply(data) -> PointCloud:
    """Parse an ASCII PLY document (bytes or str) into a :class:`PointCloud`."""
    if isinstance(data, (bytes, bytearray)):
        try:
            text = bytes(data).decode("ascii")
        except UnicodeDecodeError:
            raise MalformedHeader("PLY text is not ASCII") from None
    else:
        text = str(data)
    lines = text.splitlines()
    elements, body_start = _parse_header(lines)
    vertex = [e for e in elements if e[0] == "vertex"]
    if not vertex:
        raise MalformedHeader("no vertex element")
    if elements[0][0] != "vertex":
        raise MalformedHeader("vertex must be the first element")
    _, count, props = vertex[0]
    names = [p[0] for p in props]
    if any(t == "list" for _, t in props):
        raise MalformedHeader("list properties are not allowed on vertices")
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise MalformedHeader(f"vertex element lacks property {axis!r}")
    if len(set(names)) != len(names):
        raise MalformedHeader("duplicate vertex property")

    rows = [ln for ln in lines[body_start:] if ln.strip()]
    only_vertices = len(elements) == 1
    if len(rows) < count or (only_vertices and len(rows) != count):
        raise CountMismatch(f"header declares {count} vertices, found {len(rows)} rows")

    values = np.empty((count, len(names)), dtype=np.float64)
    for r in range(count):
        tok = rows[r].split()
        if len(tok) != len(names):
            raise CountMismatch(f"row {r}: expected {len(names)} fields, got {len(tok)}")
        for c, t in enumerate(tok):
            try:
                v = float(t)
            except ValueError:
                raise BadFloat(f"row {r}: cannot parse {t!r}") from None
            if not math.isfinite(v):
                raise BadFloat(f"row {r}: non-finite value {t!r}")
            values[r, c] = v

    col = {n: i for i, n in enumerate(names)}
    points = values[:, [col["x"], col["y"], col["z"]]]
    normals = None
    if all(a in col for a in ("nx", "ny", "nz")) and count > 0:
        normals = values[:, [col["nx"], col["ny"], col["nz"]]]
        norms = np.linalg.norm(normals, axis=1)
        if np.any(norms == 0):
            raise BadFloat("zero-length normal")
        off = np.abs(norms - 1.0) > 1e-9
        normals[off] /= norms[off, None]
    return PointCloud(points, normals)


def write_ply(cloud: PointCloud, colors=None) -> bytes:
    """Serialize ``cloud`` as ASCII PLY; ``colors`` is an optional (N, 3) uint8 array."""
    n = len(cloud)
    if n == 0:
        raise EmptyCloud("cannot write an empty cloud")
    header = ["ply", "format ascii 1.0", f"element vertex {n}",
              "property float x", "property float y", "property float z"]
    cols = [cloud.points]
    if cloud.normals is not None:
        header += ["property float nx", "property float ny", "property float nz"]
        cols.append(cloud.normals)
    rgb = None
    if colors is not None:
        rgb = np.asarray(colors).reshape(n, 3).astype(np.int64)
        if rgb.min() < 0 or rgb.max() > 255:
            raise ValueError("colors must lie in [0, 255]")
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    floats = np.hstack(cols)
    out = header
    for i in range(n):
        row = " ".join(_fmt(v) for v in floats[i])
        if rgb is not None:
            row += " " + " ".join(str(int(c)) for c in rgb[i])
        out.append(row)
    return ("\n".join(out) + "\n").encode("ascii")


def read_ply_file(path) -> PointCloud:
    with open(path, "rb") as fh:
        return parse_ply(fh.read())


def write_ply_file(path, cloud, colors=None):
    with open(path, "wb") as fh:
        fh.write(write_ply(cloud, colors))


# --------------------------------------------------------------------------- #
# scenes
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class SceneObject:
    shape_id: str
    pose: RigidTransform
    scale: np.ndarray = field(default_factory=lambda: np.ones(3))


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    look_at: np.ndarray


@dataclass(frozen=True)
class SceneDescription:
    objects: tuple
    cameras: tuple
    table_height: float = 0.0

    def to_dict(self):
        return {
            "table_height": float(self.table_height),
            "objects": [
                {"shape_id": o.shape_id,
                 "pose": {"rotation": [float(v) for v in o.pose.rotation],
                          "translation": [float(v) for v in o.pose.translation]},
                 "scale": [float(v) for v in o.scale]}
                for o in self.objects
            ],
            "cameras": [{"position": [float(v) for v in c.position],
                         "look_at": [float(v) for v in c.look_at]} for c in self.cameras],
        }

    def with_objects(self, objects):
        return SceneDescription(tuple(objects), self.cameras, self.table_height)


def _num(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(path, "expected a number")
    if not math.isfinite(value):
        raise SchemaViolation(path, "expected a finite number")
    return float(value)


def _vec(value, n, path):
    if not isinstance(value, list) or len(value) != n:
        raise SchemaViolation(path, f"expected a list of {n} numbers")
    return np.array([_num(v, f"{path}[{i}]") for i, v in enumerate(value)])


def _obj(value, path, required, optional=()):
    if not isinstance(value, dict):
        raise SchemaViolation(path, "expected an object")
    for key in required:
        if key not in value:
            raise SchemaViolation(f"{path}.{key}", "missing required field")
    extra = set(value) - set(required) - set(optional)
    if extra:
        raise SchemaViolation(f"{path}.{sorted(extra)[0]}", "unknown field")
    return value


def scene_from_dict(doc) -> SceneDescription:
    doc = _obj(doc, "$", ("objects", "cameras"), ("table_height",))
    table = _num(doc.get("table_height", 0.0), "$.table_height")
    if not isinstance(doc["objects"], list):
        raise SchemaViolation("$.objects", "expected a list")
    if not isinstance(doc["cameras"], list):
        raise SchemaViolation("$.cameras", "expected a list")
    objects = []
    for i, o in enumerate(doc["objects"]):
        p = f"$.objects[{i}]"
        o = _obj(o, p, ("shape_id", "pose"), ("scale",))
        if not isinstance(o["shape_id"], str) or not o["shape_id"]:
            raise SchemaViolation(f"{p}.shape_id", "expected a non-empty string")
        pose = _obj(o["pose"], f"{p}.pose", ("rotation", "translation"))
        q = _vec(pose["rotation"], 4, f"{p}.pose.rotation")
        if np.linalg.norm(q) < 1e-12:
            raise SchemaViolation(f"{p}.pose.rotation", "zero quaternion")
        t = _vec(pose["translation"], 3, f"{p}.pose.translation")
        scale = _vec(o.get("scale", [1.0, 1.0, 1.0]), 3, f"{p}.scale")
        if np.any(scale <= 0):
            raise NonPositiveScale(f"{p}.scale", "scale components must be strictly positive")
        objects.append(SceneObject(o["shape_id"], RigidTransform(q, t), scale))
    cameras = []
    for i, c in enumerate(doc["cameras"]):
        p = f"$.cameras[{i}]"
        c = _obj(c, p, ("position", "look_at"))
        pos = _vec(c["position"], 3, f"{p}.position")
        at = _vec(c["look_at"], 3, f"{p}.look_at")
        if np.linalg.norm(pos - at) < 1e-9:
            raise SchemaViolation(p, "camera position coincides with look_at")
        cameras.append(Camera(pos, at))
    if not cameras:
        raise SchemaViolation("$.cameras", "at least one camera is required")
    return SceneDescription(tuple(objects), tuple(cameras), table)


def parse_scene(data) -> SceneDescription:
    """Parse and validate a scene JSON document (bytes or str)."""
    try:
        if isinstance(data, (bytes, bytearray)):
            data = bytes(data).decode("utf-8")
        doc = json.loads(data)
    except (UnicodeDecodeError, ValueError, RecursionError) as exc:
        raise SchemaViolation("$", f"not valid JSON: {exc}") from None
    return scene_from_dict(doc)


def write_scene(scene: SceneDescription) -> bytes:
    return (json.dumps(scene.to_dict(), indent=2) + "\n").encode("utf-8")
