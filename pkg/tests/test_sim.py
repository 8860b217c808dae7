import numpy as np
import pytest

from multigrasp.candidates import GraspCandidate
from multigrasp.cloud_io import Camera, SceneDescription, SceneObject
from multigrasp.encoding import crop_mask
from multigrasp.errors import NoVisibleSurface
from multigrasp.geometry import RigidTransform, axis_angle_matrix
from multigrasp.gripper import ALL_TYPES, GripperConfig, body_set, standoff_pose
from multigrasp.shapes import Box, Cylinder, SolidObject, Sphere
from multigrasp.sim import (Dataset, OracleConfig, build_dataset, capture_scene, capture_views,
                            default_catalog, instantiate, label_candidate, object_views,
                            remove_table, view_cameras)

CFG = GripperConfig()
DOWN = np.diag([1.0, -1.0, -1.0])  # approach straight down onto the table
LABELS = [t.label for t in ALL_TYPES]


def scene_of(cams, table=0.0):
    return SceneDescription((), tuple(cams), table)


def upright_box(wx, wy, h, mass, name="box", size="large"):
    return SolidObject(name, (Box(RigidTransform(translation=[0, 0, h / 2]), [wx / 2, wy / 2, h / 2]),),
                       mass, size)


def top_grasp(h):
    return GraspCandidate(np.array([0.0, 0.0, h]), DOWN)


# ---- capture ----

def test_single_sphere_only_facing_hemisphere_visible():
    c = np.array([0.0, 0.0, 0.3])
    ball = SolidObject("ball", (Sphere(RigidTransform(translation=c), 0.05),), 0.2)
    cam = Camera(np.array([0.6, 0.2, 0.5]), c)
    cap = capture_scene(scene_of([cam]), [ball], 1600, seed=3, include_table=False)
    pts = cap.cloud.points
    assert len(pts) > 100
    assert np.all(cap.owner == 0)
    assert np.all((pts - c) @ (cam.position - c) > 0)
    assert np.allclose(np.linalg.norm(pts - c, axis=1), 0.05, atol=1e-9)


def test_two_views_54_degrees_apart_see_more_of_a_box():
    box = upright_box(0.08, 0.12, 0.2, 0.4)
    cams = view_cameras(box.center_of_mass, 0.3, np.radians(40), 0.6)
    a, b = (cam.position - box.center_of_mass for cam in cams)
    ang = np.degrees(np.arccos(a[:2] @ b[:2] / np.linalg.norm(a[:2]) / np.linalg.norm(b[:2])))
    assert ang == pytest.approx(54.0)
    fov = np.radians(40)
    both = capture_scene(scene_of(cams), [box], 2500, 1, include_table=False, fov=fov).cloud
    one = [capture_scene(scene_of([c]), [box], 2500, 1, include_table=False, fov=fov).cloud
           for c in cams]
    assert len(both) > max(len(o) for o in one)
    assert set(np.unique(both.view_tag)) == {0, 1}
    # faces seen: the union sees a face neither single view covers fully
    def faces(cloud):
        q = cloud.points - [0, 0, 0.1]
        return {(i, int(np.sign(q[j, i]))) for j in range(len(q))
                for i in range(3) if abs(abs(q[j, i]) - (0.04, 0.06, 0.1)[i]) < 1e-9}
    assert faces(both) == faces(one[0]) | faces(one[1])


def test_object_hidden_behind_large_box_yields_no_points():
    wall = SolidObject("wall", (Box(RigidTransform(translation=[0.3, 0, 0.15]), [0.05, 0.2, 0.15]),),
                       1.0, "large")
    hidden = SolidObject("hidden", (Sphere(RigidTransform(translation=[0.05, 0, 0.1]), 0.03),), 0.1)
    cam = Camera(np.array([1.0, 0.0, 0.15]), np.array([0.0, 0.0, 0.1]))
    cap = capture_scene(scene_of([cam]), [wall, hidden], 2500, 0)
    assert np.sum(cap.owner == 1) == 0
    assert np.sum(cap.owner == 0) > 0


def test_table_points_are_removable_by_height():
    box = upright_box(0.1, 0.1, 0.1, 0.3)
    cams = view_cameras([0, 0, 0.05], 0.0, np.radians(50), 0.6)
    cap = capture_scene(scene_of(cams), [box], 1600, 0, fov=np.radians(50))
    assert np.any(cap.owner == -1)
    kept = remove_table(cap.cloud, 0.0)
    above = cap.cloud.points[:, 2] > 0.003
    assert len(kept) == np.sum((cap.owner == 0) & above)
    assert not np.any((cap.owner == -1) & above)
    assert np.all(kept.points[:, 2] > 0.003)


def test_capture_errors_and_catalog_lookup():
    away = Camera(np.array([0, 0, 1.0]), np.array([0, 0, 2.0]))  # looking at the sky
    with pytest.raises(NoVisibleSurface):
        capture_scene(scene_of([away]), [], 100, 0)
    scene = SceneDescription((SceneObject("apple", RigidTransform()),),
                             view_cameras([0, 0, 0], 0, 0.8, 0.5), 0.0)
    cloud = capture_views(scene, default_catalog(), 400, 0, include_table=False)
    assert len(cloud) > 0
    bad = SceneDescription((SceneObject("unicorn", RigidTransform()),), scene.cameras, 0.0)
    with pytest.raises(KeyError):
        capture_views(bad, default_catalog(), 400, 0)


def test_catalog_proportions_and_capacities():
    cat = default_catalog()
    sizes = [t.size_class for t in cat.values()]
    assert len(cat) == 24
    assert (sizes.count("large"), sizes.count("medium"), sizes.count("small")) == (5, 14, 5)
    cap = OracleConfig().capacity
    assert cap["pincher"] < min(v for k, v in cap.items() if k != "pincher")
    assert cap["basic_power"] == max(cap.values())


# ---- labels ----

def test_25cm_box_basic_power_succeeds_and_pincher_cannot_span():
    box = upright_box(0.128, 0.25, 0.15, 0.45)
    lab = label_candidate(top_grasp(0.15), box, 0.0)
    out = dict(zip(LABELS, lab.outcomes))
    assert out["basic_power"].failure == "success"
    assert out["basic_power"].contact_count >= 2
    assert out["basic_power"].antipodal_deg >= 150
    assert out["basic_power"].retained
    # the open pincher distal links reach in closer to the axis than the 6.4 cm half width
    pose = standoff_pose(top_grasp(0.15), ALL_TYPES[4], CFG)
    distal = [b for b in body_set(pose, ALL_TYPES[4], CFG).solid() if b.tag == "distal"]
    assert min(np.abs(b.corners()[:, 0]).min() for b in distal) < 0.064
    assert out["pincher"].failure == "collision"
    assert lab.labels[LABELS.index("basic_power")] == 1
    assert lab.labels[LABELS.index("pincher")] == 0
    assert len(lab) == len(ALL_TYPES)


def test_nothing_within_reach_gives_all_zero_label():
    far = SolidObject("far", (Sphere(RigidTransform(translation=[1.0, 1.0, 0.04]), 0.04),), 0.2)
    lab = label_candidate(GraspCandidate(np.array([0, 0, 0.3]), DOWN), far, 0.0)
    assert np.array_equal(lab.labels, np.zeros(5))
    assert all(o.failure == "contacts" and o.contact_count == 0 for o in lab.outcomes)
    empty = label_candidate(top_grasp(0.1), [], 0.0)
    assert np.array_equal(empty.labels, np.zeros(5))


def test_heavy_object_fails_pincher_only_on_capacity():
    cand = top_grasp(0.15)
    heavy = label_candidate(cand, upright_box(0.122, 0.12, 0.15, 1.0), 0.0)
    light = label_candidate(cand, upright_box(0.122, 0.12, 0.15, 0.3), 0.0)
    h = dict(zip(LABELS, heavy.outcomes))
    li = dict(zip(LABELS, light.outcomes))
    assert h["pincher"].failure == "capacity" and not h["pincher"].success
    assert li["pincher"].failure == "success"
    assert h["pincher"].antipodal_deg >= 150 and h["pincher"].retained
    assert h["basic_power"].failure == "success"
    ocfg = OracleConfig(capacity={**OracleConfig().capacity, "pincher": 1.5})
    assert label_candidate(cand, upright_box(0.122, 0.12, 0.15, 1.0), 0.0, ocfg=ocfg).labels[4] == 1


def test_failure_checks_and_oracle_thresholds_are_configurable():
    box = upright_box(0.128, 0.25, 0.15, 0.45)
    strict = OracleConfig(antipodal_deg=180.0 + 1e-6)
    lab = label_candidate(top_grasp(0.15), box, 0.0, ocfg=strict)
    assert lab.labels.sum() == 0
    assert {o.failure for o in lab.outcomes} <= {"collision", "contacts", "antipodal"}


def test_second_object_touched_is_a_multi_object_failure():
    # a thin plate against one face of the 25 cm box: one finger lands on it
    plate = SolidObject("plate", (Box(RigidTransform(translation=[0.067, 0.03, 0.06]), [0.003, 0.02, 0.06]),),
                        0.05, "small")
    objs = [upright_box(0.128, 0.25, 0.15, 0.45, "target"), plate]
    out = label_candidate(top_grasp(0.15), objs, 0.0, target=0).outcomes[2]
    assert out.failure == "multi_object" and out.objects_touched == ("plate", "target")
    lenient = OracleConfig(multi_object_fails=False)
    assert label_candidate(top_grasp(0.15), objs, 0.0, ocfg=lenient, target=0).outcomes[2].success


def planar_transform(g):
    R = axis_angle_matrix([0, 0, 1], g.uniform(0, 2 * np.pi))
    return RigidTransform.from_matrix(R, g.uniform(-0.5, 0.5, 3))


def test_labels_deterministic_and_equivariant():
    # the table is a horizontal plane, so joint motions are yaw plus translation
    g = np.random.Generator(np.random.Philox(11))
    objs = [upright_box(0.128, 0.25, 0.15, 0.45, "big"), upright_box(0.122, 0.12, 0.15, 1.0, "heavy"),
            SolidObject("can", (Cylinder(RigidTransform(translation=[0, 0, 0.07]), 0.04, 0.07),), 0.3)]
    for ob in objs:
        for tilt in (0.0, 0.4):
            R = axis_angle_matrix([1, 0, 0], tilt) @ DOWN
            cand = GraspCandidate(np.array([0.0, 0.0, 0.12]), R)
            a = label_candidate(cand, ob, 0.0)
            b = label_candidate(cand, ob, 0.0)
            assert [o.failure for o in a.outcomes] == [o.failure for o in b.outcomes]
            for _ in range(3):
                T = planar_transform(g)
                c = label_candidate(cand.transformed(T), ob.transformed(T), T.translation[2])
                assert np.array_equal(a.labels, c.labels)
                assert [o.failure for o in a.outcomes] == [o.failure for o in c.outcomes]
                assert [o.contact_count for o in a.outcomes] == [o.contact_count for o in c.outcomes]
                assert np.allclose([o.antipodal_deg for o in a.outcomes],
                                   [o.antipodal_deg for o in c.outcomes], atol=1e-6)


# ---- dataset ----

@pytest.fixture(scope="module")
def small_dataset():
    reports = []
    ds = build_dataset(default_catalog(), 2, 6, 0, object_ids=["cereal_box", "soup_can", "golf_ball"],
                       M=128, samples_per_view=900, report=reports)
    return ds, reports[0]


def test_dataset_exemplars_are_well_formed(small_dataset):
    ds, rep = small_dataset
    assert len(ds) == rep.exemplars > 0
    assert ds.labels.shape == (len(ds), 5)
    assert set(np.unique(ds.labels)) <= {0, 1}
    assert set(ds.object_ids) <= {"cereal_box", "soup_can", "golf_ball"}
    assert np.allclose(rep.positive_rates, ds.labels.mean(axis=0))
    assert rep.candidates_generated >= rep.candidates_pruned + rep.exemplars
    for enc, cand in zip(ds.encodings, ds.candidates):
        assert enc.size == 128 and 1 <= enc.valid_count <= 128
        assert np.all(enc.points[enc.valid_count:] == 0)
        assert np.all(crop_mask(enc.points[: enc.valid_count], CFG))
        lo, hi = enc.region
        v = enc.points[: enc.valid_count]
        assert np.all(v >= lo - 1e-12) and np.all(v <= hi + 1e-12)


def test_no_exemplar_has_every_type_in_collision(small_dataset):
    # each exemplar came from one view of its object; relabel against every view of it
    ds, _ = small_dataset
    cat = default_catalog()
    ids = ["cereal_box", "soup_can", "golf_ball"]
    for oi, sid in enumerate(ids):
        views = [instantiate(s, cat) for s in object_views(cat[sid], 2, oi)]
        for j in np.flatnonzero(ds.object_ids == sid):
            labs = [label_candidate(ds.candidates[j], ob, 0.0, target=0) for ob in views]
            assert any(np.array_equal(lab.labels, ds.labels[j]) for lab in labs)
            assert any(any(o.failure != "collision" for o in lab.outcomes) for lab in labs)


def test_dataset_save_load_round_trip(tmp_path, small_dataset):
    ds, _ = small_dataset
    ds.save(str(tmp_path / "ds"))
    back = Dataset.load(str(tmp_path / "ds"))
    assert len(back) == len(ds)
    assert np.array_equal(back.labels, ds.labels)
    assert list(back.object_ids) == list(ds.object_ids)
    for a, b in zip(ds.encodings, back.encodings):
        assert a.valid_count == b.valid_count
        assert np.array_equal(a.points, b.points)
        assert all(np.array_equal(x, y) for x, y in zip(a.region, b.region))
    for a, b in zip(ds.candidates, back.candidates):
        assert np.array_equal(a.centroid, b.centroid) and np.array_equal(a.rotation, b.rotation)


def test_dataset_build_is_deterministic(small_dataset):
    ds, _ = small_dataset
    again = build_dataset(default_catalog(), 2, 6, 0, object_ids=["cereal_box", "soup_can", "golf_ball"],
                          M=128, samples_per_view=900)
    assert np.array_equal(ds.labels, again.labels)
    assert all(np.array_equal(a.points, b.points) for a, b in zip(ds.encodings, again.encodings))


def test_dataset_needs_two_objects():
    with pytest.raises(ValueError):
        build_dataset(default_catalog(), 1, 2, 0, object_ids=["apple"])


def test_power_types_beat_pincher_on_large_objects():
    cat = default_catalog()
    large = sorted(k for k, t in cat.items() if t.size_class == "large")
    ds = build_dataset(cat, 3, 8, 0, object_ids=large, M=128, samples_per_view=900)
    rates = dict(zip(LABELS, ds.positive_rates()))
    assert len(ds) > 50
    assert rates["wide_power"] >= rates["pincher"]
    assert rates["basic_power"] >= rates["pincher"]
