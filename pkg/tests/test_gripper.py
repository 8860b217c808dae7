import json
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from multigrasp.candidates import GraspCandidate
from multigrasp.errors import JointOutOfRange
from multigrasp.geometry import PointCloud, RigidTransform, axis_angle_matrix
from multigrasp.gripper import (ALL_TYPES, FINGERS, GraspType, Grip, GripperConfig, Mode, OBox,
                                body_set, close_fingers, collides, finger_chain, standoff_pose)
from multigrasp.shapes import Box, Sphere
from oracles import brute_inside

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CFG = GripperConfig()
seeds = st.integers(0, 2 ** 31 - 1)


def cand(centroid=(0, 0, 0), R=None):
    return GraspCandidate(np.asarray(centroid, dtype=float), np.eye(3) if R is None else R)


# ---- types and config ----

def test_five_types_and_pincher_is_fingertip():
    assert len(ALL_TYPES) == 5
    assert [t.index for t in ALL_TYPES] == [0, 1, 2, 3, 4]
    for t in ALL_TYPES:
        if t.mode is Mode.PINCHER:
            assert t.grip is Grip.FINGERTIP


def test_config_rejects_bad_dimensions():
    with pytest.raises(ValueError):
        GripperConfig(d_encompassing=0.0)
    with pytest.raises(ValueError):
        GripperConfig(d_encompassing=0.1, d_fingertip=0.05)
    with pytest.raises(ValueError):
        GripperConfig(link_lengths=(0.05, -0.01, 0.02))


def test_config_json_round_trip_and_canonical_file():
    assert GripperConfig.from_json(CFG.to_json()).to_dict() == CFG.to_dict()
    with open(os.path.join(ROOT, "configs", "gripper.json")) as fh:
        assert GripperConfig.from_json(fh.read()).to_dict() == CFG.to_dict()
    with pytest.raises(ValueError):
        GripperConfig.from_dict({"palm_width": 0.1})


# ---- standoff ----

def test_standoff_examples():
    assert np.allclose(standoff_pose(cand(), GraspType.BASIC_POWER, CFG).palm_center, [0, 0, -0.019])
    assert np.allclose(standoff_pose(cand(), GraspType.PINCHER, CFG).palm_center, [0, 0, -0.0822])
    flip = np.diag([1.0, -1.0, -1.0])
    for t in ALL_TYPES:
        p = standoff_pose(cand(R=flip), t, CFG)
        assert np.allclose(p.palm_center, [0, 0, CFG.standoff(t)])
        assert abs(p.approach @ p.closing) < 1e-6


# ---- bodies ----

def test_joint_range_enforced():
    pose = standoff_pose(cand(), GraspType.BASIC_POWER, CFG)
    with pytest.raises(JointOutOfRange):
        body_set(pose, GraspType.BASIC_POWER, CFG, np.full((3, 3), -0.1))
    with pytest.raises(JointOutOfRange):
        body_set(pose, GraspType.BASIC_POWER, CFG, np.full((3, 3), 2.0))


def test_body_set_contents():
    pose = standoff_pose(cand(), GraspType.BASIC_POWER, CFG)
    bs = body_set(pose, GraspType.BASIC_POWER, CFG)
    tags = [b.tag for b in bs.boxes]
    assert tags.count("palm") == 1 and tags.count("sweep") == 3
    assert sum(t in ("proximal", "medial", "distal") for t in tags) == 9
    assert all(np.all(b.half_extents > 0) for b in bs.boxes)
    # pincher parks the thumb
    assert len(body_set(pose, GraspType.PINCHER, CFG).solid()) == 7


def _tip_distance(theta1):
    spec = CFG.layout(Mode.BASIC)[0]
    start, d, _, length = finger_chain(spec, [theta1, 0.0, 0.0], CFG)[-1]
    tip = start + d * length
    return np.hypot(tip[0], tip[1]), tip


def test_open_tip_matches_hand_kinematics():
    # thumb at (-0.06, 0) curling toward +x; open pose tilted outward by 0.3 rad
    _, tip = _tip_distance(0.0)
    L = sum(CFG.link_lengths)
    assert np.allclose(tip, [-0.06 - L * np.sin(0.3), 0.0, L * np.cos(0.3)], atol=1e-12)


def test_tip_moves_toward_palm_axis_as_proximal_closes():
    # monotone until the tip crosses the palm axis
    d = [_tip_distance(a)[0] for a in np.linspace(0.0, 0.8, 30)]
    assert d[0] == max(d)
    assert np.all(np.diff(d) < 0)


@given(seeds, st.sampled_from(ALL_TYPES))
def test_body_set_equivariance(seed, gtype):
    g = np.random.Generator(np.random.Philox(seed))
    T = RigidTransform.random(g, 0.5)
    pose = standoff_pose(cand(g.normal(size=3) * 0.1), gtype, CFG)
    moved = standoff_pose(cand(T.apply(pose.palm_center + pose.approach * CFG.standoff(gtype)),
                               T.matrix @ pose.rotation), gtype, CFG)
    joints = g.uniform(0, CFG.joint_limit, size=(3, 3))
    a = body_set(pose, gtype, CFG, joints)
    b = body_set(moved, gtype, CFG, joints)
    for x, y in zip(a.boxes, b.boxes):
        assert np.allclose(T.apply(x.center), y.center, atol=1e-12)
        assert np.allclose(T.matrix @ x.rotation, y.rotation, atol=1e-12)


def test_wide_differs_from_basic_by_spread_rotation():
    pose = standoff_pose(cand(), GraspType.BASIC_POWER, CFG)
    basic = body_set(pose, GraspType.BASIC_POWER, CFG).boxes
    wide = body_set(pose, GraspType.WIDE_POWER, CFG).boxes
    for b, w in zip(basic, wide):
        assert b.tag == w.tag and b.finger == w.finger
        if b.finger in (None, "thumb"):
            assert np.allclose(b.center, w.center) and np.allclose(b.rotation, w.rotation)
            continue
        # one rotation about the palm normal maps the basic box onto the wide box
        pb, pw = b.center - pose.palm_center, w.center - pose.palm_center
        a = np.arctan2(pw[1], pw[0]) - np.arctan2(pb[1], pb[0])
        Rz = axis_angle_matrix([0, 0, 1], a)
        assert np.allclose(Rz @ pb, pw, atol=1e-12)
        assert np.allclose(Rz @ b.rotation, w.rotation, atol=1e-12)
        assert abs(abs(a) - 0.45) < 1e-9


def test_sweeps_disjoint_from_palm_when_open():
    pose = standoff_pose(cand(), GraspType.BASIC_POWER, CFG)
    for t in ALL_TYPES:
        bs = body_set(pose, t, CFG)
        palm = bs.boxes[0]
        for s in bs.sweeps():
            # every sweep corner lies beyond the palm face
            assert np.all((s.corners() - palm.center) @ palm.rotation[:, 2] > palm.half_extents[2])


# ---- collisions ----

def test_collides_examples():
    pose = standoff_pose(cand(), GraspType.BASIC_POWER, CFG)
    bs = body_set(pose, GraspType.BASIC_POWER, CFG)
    assert not collides(bs, PointCloud(np.zeros((0, 3))), 0.005)
    assert collides(bs, PointCloud(bs.boxes[0].center[None]), 0.0)
    # a point inside a sweep box only does not count
    s = bs.sweeps()[0]
    assert not collides(bs, PointCloud(s.center[None]), 0.0)


@given(seeds, st.sampled_from(ALL_TYPES), st.floats(0.0, 0.01))
def test_collides_matches_brute_force(seed, gtype, margin):
    g = np.random.Generator(np.random.Philox(seed))
    pose = standoff_pose(cand(R=axis_angle_matrix(g.normal(size=3), g.uniform(0, np.pi))), gtype, CFG)
    joints = g.uniform(0, CFG.joint_limit, size=(3, 3))
    bs = body_set(pose, gtype, CFG, joints)
    pts = g.uniform(-0.15, 0.15, size=(500, 3))
    for p in pts[:40]:
        expect = any(brute_inside(b, p, margin) for b in bs.solid())
        assert collides(bs, PointCloud(p[None]), margin) == expect
    expect = any(brute_inside(b, p, margin) for b in bs.solid() for p in pts)
    assert collides(bs, PointCloud(pts), margin) == expect


# ---- closing ----

def test_no_obstacle_closes_to_limits():
    for t in ALL_TYPES:
        for r in close_fingers(standoff_pose(cand(), t, CFG), t, CFG, []):
            assert r.contacts == () and r.link_contacted is None
            assert np.allclose(r.joints, CFG.joint_limit)


def test_large_box_gives_proximal_contacts():
    gt = GraspType.BASIC_POWER
    box = Box(RigidTransform(translation=[0, 0, 0.05]), [0.064, 0.04, 0.05])
    reps = close_fingers(standoff_pose(cand(), gt, CFG), gt, CFG, [("box", box)])
    prox = [r for r in reps if r.link_contacted == "proximal"]
    assert len(prox) >= 2
    for r in prox:
        assert abs(abs(r.contact_normal[0]) - 1.0) < 1e-6


def test_small_sphere_pincher_contacts_distal_only():
    gt = GraspType.PINCHER
    ball = Sphere(RigidTransform(), 0.02)
    reps = close_fingers(standoff_pose(cand(), gt, CFG), gt, CFG, [("ball", ball)])
    links = [c.link for r in reps for c in r.contacts]
    assert len(reps) == 2 and links and set(links) == {"distal"}


def test_closing_is_deterministic_and_equivariant():
    g = np.random.Generator(np.random.Philox(5))
    box = Box(RigidTransform(translation=[0.01, 0, 0.05]), [0.03, 0.05, 0.05])
    T = RigidTransform.random(g)
    for gt in ALL_TYPES:
        p = standoff_pose(cand(), gt, CFG)
        a = close_fingers(p, gt, CFG, [("b", box)])
        b = close_fingers(p, gt, CFG, [("b", box)])
        pm = standoff_pose(cand(T.translation, T.matrix), gt, CFG)
        c = close_fingers(pm, gt, CFG, [("b", box.transformed(T))])
        for x, y, z in zip(a, b, c):
            assert np.array_equal(x.joints, y.joints)
            assert [k.link for k in x.contacts] == [k.link for k in z.contacts]
            assert np.allclose(x.joints, z.joints)
            for k1, k2 in zip(x.contacts, z.contacts):
                assert np.allclose(T.apply(k1.point), k2.point, atol=1e-9)
                assert np.allclose(T.matrix @ k1.normal, k2.normal, atol=1e-5)
