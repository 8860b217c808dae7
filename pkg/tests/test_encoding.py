import numpy as np
import pytest
from hypothesis import given, strategies as st

from multigrasp.candidates import GraspCandidate
from multigrasp.encoding import crop_box, crop_mask, encode, encode_many
from multigrasp.errors import EmptyCloud, EmptyRegion
from multigrasp.geometry import PointCloud, RigidTransform, random_rotation
from multigrasp.gripper import GripperConfig
from oracles import brute_crop

CFG = GripperConfig()
seeds = st.integers(0, 2 ** 31 - 1)


def _g(seed):
    return np.random.Generator(np.random.Philox(seed))


def test_single_point_at_origin():
    enc = encode(PointCloud([[0.0, 0.0, 0.0]]), GraspCandidate(np.zeros(3), np.eye(3)), CFG, M=8)
    assert enc.valid_count == 1 and enc.size == 8
    assert np.array_equal(enc.points, np.zeros((8, 3)))


def test_errors():
    c = GraspCandidate(np.zeros(3), np.eye(3))
    with pytest.raises(EmptyCloud):
        encode(PointCloud(np.zeros((0, 3))), c, CFG)
    with pytest.raises(EmptyRegion):
        encode(PointCloud([[1.0, 1.0, 1.0]]), c, CFG)


def test_region_dims_default():
    lo, hi = crop_box(CFG)
    assert np.allclose(hi - lo, [0.12, 0.08, 0.10])
    assert lo[2] == -CFG.d_encompassing


@given(seeds)
def test_crop_matches_brute_force(seed):
    g = _g(seed)
    pts = g.uniform(-0.12, 0.12, size=(300, 3))
    cand = GraspCandidate(g.normal(size=3) * 0.02, random_rotation(g))
    local = cand.to_local(pts)
    assert np.array_equal(crop_mask(local, CFG), brute_crop(local, CFG))


@given(seeds, st.integers(1, 900))
def test_encoding_invariants(seed, n):
    g = _g(seed)
    pts = g.uniform(-0.06, 0.06, size=(n, 3))
    cand = GraspCandidate(np.zeros(3), random_rotation(g))
    try:
        enc = encode(PointCloud(pts), cand, CFG, M=128, seed=seed)
    except EmptyRegion:
        assert not crop_mask(cand.to_local(pts), CFG).any()
        return
    inside = crop_mask(cand.to_local(pts), CFG)
    assert enc.valid_count == min(128, int(inside.sum()))
    lo, hi = crop_box(CFG)
    v = enc.points[:enc.valid_count]
    assert np.all(v >= lo) and np.all(v <= hi)
    assert np.all(enc.points[enc.valid_count:] == 0)
    # every kept point is one of the cropped points, without repeats
    kept = {tuple(p) for p in v}
    assert len(kept) == enc.valid_count
    assert kept <= {tuple(p) for p in cand.to_local(pts)[inside]}


@given(seeds)
def test_frame_invariance(seed):
    g = _g(seed)
    pts = g.normal(scale=0.03, size=(900, 3))
    cand = GraspCandidate(pts[0], random_rotation(g))
    T = RigidTransform.random(g)
    a = encode(PointCloud(pts), cand, CFG, M=256, seed=5)
    b = encode(PointCloud(pts).transformed(T), cand.transformed(T), CFG, M=256, seed=5)
    assert a.valid_count == b.valid_count
    assert np.max(np.abs(a.points - b.points)) < 1e-5


def test_merged_views_equal_concatenation_as_sets():
    g = _g(2)
    a = PointCloud(g.normal(scale=0.02, size=(100, 3)), view_tag=np.zeros(100), viewpoints=[[0, 0, 1]])
    b = PointCloud(g.normal(scale=0.02, size=(80, 3)), view_tag=np.zeros(80), viewpoints=[[1, 0, 1]])
    cand = GraspCandidate(np.zeros(3), np.eye(3))
    ab = encode(PointCloud.concatenate([a, b]), cand, CFG, M=512)
    ba = encode(PointCloud.concatenate([b, a]), cand, CFG, M=512)
    raw = encode(PointCloud(np.vstack([a.points, b.points])), cand, CFG, M=512)
    sets = [{tuple(p) for p in e.points[:e.valid_count]} for e in (ab, ba, raw)]
    assert sets[0] == sets[1] == sets[2]


def test_subsample_is_seeded_and_salted():
    g = _g(1)
    cloud = PointCloud(g.normal(scale=0.02, size=(2000, 3)))
    cand = GraspCandidate(np.zeros(3), np.eye(3))
    assert np.array_equal(encode(cloud, cand, CFG, 64, 3).points, encode(cloud, cand, CFG, 64, 3).points)
    assert not np.array_equal(encode(cloud, cand, CFG, 64, 3).points, encode(cloud, cand, CFG, 64, 4).points)
    many = encode_many(cloud, [cand, cand, GraspCandidate(np.ones(3), np.eye(3))], CFG, 64, 3)
    assert many[2] is None
    assert not np.array_equal(many[0].points, many[1].points)
