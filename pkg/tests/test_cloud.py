import itertools

import numpy as np
import pytest

from drokit import (ContractError, DataError, PointCloud, SamplingConfig,
                    cloud_fk, farthest_point_sampling, forward_kinematics,
                    load_model, load_obj, partial_cloud, sample_link_clouds,
                    sample_mesh_surface, sample_object_cloud, save_obj,
                    signed_distances)
from drokit.rng import substream

import hands
from geometry import box_mesh, icosphere


def reference_fps(points, k, start):
    """Direct greedy max-min reference, scalar loops."""
    chosen = [start]
    while len(chosen) < k:
        best_idx, best_dist = None, -1.0
        for i in range(len(points)):
            d = min(np.linalg.norm(points[i] - points[c]) for c in chosen)
            if d > best_dist:
                best_dist, best_idx = d, i
        chosen.append(best_idx)
    return chosen


# ---------------------------------------------------------------- PointCloud

def test_cloud_label_length_checked():
    with pytest.raises(ContractError):
        PointCloud(np.zeros((3, 3)), labels=["a", "b"])


def test_cloud_rejects_non_finite():
    pts = np.zeros((2, 3))
    pts[1, 1] = np.nan
    with pytest.raises(ContractError):
        PointCloud(pts)


def test_segments_require_contiguous_labels():
    cloud = PointCloud(np.zeros((3, 3)), labels=["a", "b", "a"])
    with pytest.raises(ContractError):
        cloud.segments()


def test_by_link_groups_points():
    pts = np.arange(12, dtype=float).reshape(4, 3)
    cloud = PointCloud(pts, labels=["a", "a", "b", "b"])
    groups = cloud.by_link()
    assert list(groups) == ["a", "b"]
    assert np.array_equal(groups["a"], pts[:2])


# ---------------------------------------------------------------- OBJ

def test_obj_round_trip(tmp_path):
    mesh = box_mesh(0.1, 0.2, 0.3)
    path = tmp_path / "box.obj"
    save_obj(mesh, path)
    loaded = load_obj(path.read_text())
    assert np.array_equal(loaded.vertices, mesh.vertices)
    assert np.array_equal(loaded.triangles, mesh.triangles)


def test_obj_accepts_slash_indices_and_filters_degenerate():
    text = """v 0 0 0
v 1 0 0
v 0 1 0
vn 0 0 1
f 1//1 2//1 3//1
f 1//1 2//1 2//1
"""
    mesh = load_obj(text)
    assert len(mesh.triangles) == 1


def test_obj_rejects_quads():
    text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"
    with pytest.raises(DataError):
        load_obj(text)


# ---------------------------------------------------------------- FPS

def test_fps_all_indices_when_k_equals_n():
    pts = np.random.default_rng(0).random((16, 3))
    idx = farthest_point_sampling(pts, 16, seed=1)
    assert sorted(idx) == list(range(16))


def test_fps_k1_returns_seeded_start():
    pts = np.random.default_rng(0).random((16, 3))
    start = int(substream(5, "fps").integers(16))
    assert farthest_point_sampling(pts, 1, seed=5) == [start]


def test_fps_square_corners_beat_center():
    # unit square corners plus center; greedy 4 from a corner = the corners,
    # which also wins the brute-force max-min over all 4-subsets
    pts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0.5, 0.5, 0]],
                   dtype=float)
    seed = next(s for s in range(100)
                if int(substream(s, "fps").integers(5)) != 4)
    idx = farthest_point_sampling(pts, 4, seed=seed)
    assert sorted(idx) == [0, 1, 2, 3]

    def min_pair_dist(subset):
        return min(np.linalg.norm(pts[a] - pts[b])
                   for a, b in itertools.combinations(subset, 2))

    best = max(itertools.combinations(range(5), 4), key=min_pair_dist)
    assert sorted(best) == sorted(idx)


def test_fps_matches_reference_recurrence():
    rng = np.random.default_rng(33)
    pts = rng.random((40, 3))
    for seed in (0, 1, 2):
        start = int(substream(seed, "fps").integers(len(pts)))
        assert farthest_point_sampling(pts, 12, seed=seed) == \
            reference_fps(pts, 12, start)


def test_fps_k_out_of_range():
    pts = np.zeros((4, 3))
    with pytest.raises(ContractError):
        farthest_point_sampling(pts, 0, seed=0)
    with pytest.raises(ContractError):
        farthest_point_sampling(pts, 5, seed=0)


# ---------------------------------------------------------------- link clouds

def test_single_link_all_points_on_surface():
    urdf = hands.single_link_urdf()
    model = load_model(urdf)
    mesh = box_mesh(0.05, 0.04, 0.03)
    cfg = SamplingConfig(n_per_link=512, n_total=512, seed=2)
    clouds = sample_link_clouds(model, {"rotor": mesh}, cfg)
    assert list(clouds) == ["rotor"]
    assert len(clouds["rotor"]) == 512
    dist = np.abs(signed_distances(clouds["rotor"], mesh))
    assert dist.max() < 1e-9


def test_two_identical_links_both_survive_fps():
    urdf, _ = hands.three_finger_hand()
    model = load_model(urdf)
    mesh = box_mesh(0.03, 0.02, 0.01)
    meshes = {"palm": mesh, "f0_seg0": box_mesh(0.03, 0.02, 0.01, center=(0.2, 0, 0))}
    cfg = SamplingConfig(n_per_link=256, n_total=128, seed=4)
    clouds = sample_link_clouds(model, meshes, cfg)
    assert len(clouds["palm"]) > 0
    assert len(clouds["f0_seg0"]) > 0
    assert len(clouds["palm"]) + len(clouds["f0_seg0"]) == 128


def test_link_clouds_deterministic():
    urdf, meshes = hands.three_finger_hand()
    model = load_model(urdf)
    cfg = SamplingConfig(seed=9)
    a = sample_link_clouds(model, meshes, cfg)
    b = sample_link_clouds(model, meshes, cfg)
    assert list(a) == list(b)
    for link in a:
        assert np.array_equal(a[link], b[link])


def test_link_clouds_reserve_minimum_for_registration():
    urdf, meshes = hands.five_finger_hand()
    model = load_model(urdf)
    clouds = sample_link_clouds(model, meshes, SamplingConfig(seed=1))
    assert sum(len(v) for v in clouds.values()) == 512
    assert min(len(v) for v in clouds.values()) >= 4


def test_n_total_bounded_by_available_samples():
    urdf = hands.single_link_urdf()
    model = load_model(urdf)
    mesh = box_mesh(0.05, 0.04, 0.03)
    with pytest.raises(ContractError):
        sample_link_clouds(model, {"rotor": mesh},
                           SamplingConfig(n_per_link=16, n_total=17, seed=0))


def test_empty_mesh_rejected():
    urdf = hands.single_link_urdf()
    model = load_model(urdf)
    empty = load_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\n")
    with pytest.raises(DataError):
        sample_link_clouds(model, {"rotor": empty}, SamplingConfig(seed=0))


def test_surface_sampling_is_area_weighted():
    # two disjoint triangles, one 99x the area of the other
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0],
                      [5, 0, 0], [5.1, 0, 0], [5, 0.2, 0]], dtype=float)
    tris = np.array([[0, 1, 2], [3, 4, 5]])
    from drokit import TriangleMesh
    mesh = TriangleMesh(verts, tris)
    pts = sample_mesh_surface(mesh, 4000, np.random.default_rng(0))
    near_small = (pts[:, 0] > 4.0).sum()
    # small triangle has 2% of the area
    assert 20 < near_small < 240


# ---------------------------------------------------------------- cloud_fk

def test_cloud_fk_zero_configuration():
    urdf = hands.single_link_urdf()
    model = load_model(urdf)
    canonical = {"rotor": np.array([[0.01, 0.0, 0.0], [0.0, 0.02, 0.0]])}
    out = cloud_fk(model, np.zeros(model.n_dof), canonical)
    # rotor sits 0.1 above base via the joint origin
    assert np.allclose(out.points, canonical["rotor"] + [0.0, 0.0, 0.1])
    assert out.labels == ["rotor", "rotor"]


def test_cloud_fk_wrist_translation():
    urdf, meshes = hands.three_finger_hand()
    model = load_model(urdf)
    canonical = sample_link_clouds(model, meshes, SamplingConfig(n_per_link=16, n_total=64, seed=0))
    q0 = np.zeros(model.n_dof)
    qt = q0.copy()
    qt[:3] = [0.3, -0.2, 0.5]
    a = cloud_fk(model, q0, canonical)
    b = cloud_fk(model, qt, canonical)
    assert np.allclose(b.points - a.points, [0.3, -0.2, 0.5], atol=1e-12)


def test_cloud_fk_matches_per_point_pose_application():
    urdf, meshes = hands.three_finger_hand()
    model = load_model(urdf)
    canonical = sample_link_clouds(model, meshes, SamplingConfig(n_per_link=32, n_total=96, seed=1))
    rng = np.random.default_rng(8)
    q = rng.uniform(model.lower, model.upper)
    q[:3] = rng.uniform(-0.3, 0.3, 3)
    out = cloud_fk(model, q, canonical)
    poses = forward_kinematics(model, q)
    expected = []
    for link, sl in out.segments():
        rot = poses.rotation(link)
        trans = poses.translation(link)
        for p in canonical[link]:
            expected.append(rot @ p + trans)
    assert np.allclose(out.points, np.array(expected), atol=1e-12)


def test_cloud_fk_index_correspondence_across_configs():
    urdf, meshes = hands.three_finger_hand()
    model = load_model(urdf)
    canonical = sample_link_clouds(model, meshes, SamplingConfig(n_per_link=32, n_total=96, seed=1))
    rng = np.random.default_rng(12)
    qa = rng.uniform(model.lower, model.upper)
    qb = rng.uniform(model.lower, model.upper)
    a = cloud_fk(model, qa, canonical)
    b = cloud_fk(model, qb, canonical)
    assert a.labels == b.labels
    # intra-link pairwise distances are configuration-invariant
    for link, sl in a.segments():
        pa, pb = a.points[sl], b.points[sl]
        da = np.linalg.norm(pa[:, None] - pa[None, :], axis=2)
        db = np.linalg.norm(pb[:, None] - pb[None, :], axis=2)
        assert np.abs(da - db).max() < 1e-9


def test_cloud_fk_unknown_link():
    model = load_model(hands.single_link_urdf())
    with pytest.raises(ContractError):
        cloud_fk(model, np.zeros(model.n_dof), {"ghost": np.zeros((3, 3))})


# ---------------------------------------------------------------- object cloud

def test_object_cloud_noiseless_on_surface():
    mesh = icosphere(radius=0.05)
    cfg = SamplingConfig(object_noise_sigma=0.0, seed=6)
    cloud = sample_object_cloud(mesh, cfg)
    assert len(cloud) == 512
    assert np.abs(signed_distances(cloud.points, mesh)).max() < 1e-9


def test_object_cloud_noise_scale():
    mesh = icosphere(radius=0.05)
    cfg = SamplingConfig(object_noise_sigma=0.002, seed=6)
    cloud = sample_object_cloud(mesh, cfg)
    mean_dist = np.abs(signed_distances(cloud.points, mesh)).mean()
    assert 0.001 < mean_dist < 0.005


def test_object_cloud_deterministic():
    mesh = icosphere(radius=0.05)
    cfg = SamplingConfig(seed=21)
    a = sample_object_cloud(mesh, cfg)
    b = sample_object_cloud(mesh, cfg)
    assert np.array_equal(a.points, b.points)


def test_object_cloud_pool_bound():
    mesh = icosphere(radius=0.05)
    with pytest.raises(ContractError):
        sample_object_cloud(mesh, SamplingConfig(n_object=100, object_pool=50, seed=0))


# ---------------------------------------------------------------- partial cloud

def _partial_direction(seed):
    rng = substream(seed, "partial")
    v = rng.normal(size=3)
    return -v / np.linalg.norm(v)


def test_partial_cloud_keeps_top_scores():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(64, 3))
    kept = partial_cloud(pts, seed=14)
    r = _partial_direction(14)
    centroid = pts.mean(axis=0)
    d = pts - centroid
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    scores = d @ r
    order = np.argsort(-scores, kind="stable")[:32]
    assert np.array_equal(kept, pts[np.sort(order)])
    # every kept score at or above every dropped score
    kept_scores = scores[np.sort(order)]
    dropped = np.delete(scores, np.sort(order))
    assert kept_scores.min() >= dropped.max() - 1e-12


def test_partial_cloud_hemisphere():
    # symmetric cloud on a sphere: retained points lie in the half-space
    rng = np.random.default_rng(3)
    raw = rng.normal(size=(128, 3))
    pts = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    pts = np.vstack([pts, -pts])  # exactly symmetric, centroid at origin
    seed = 2
    kept = partial_cloud(pts, seed=seed)
    r = _partial_direction(seed)
    assert (kept @ r >= -1e-9).all()


def test_partial_cloud_point_at_centroid_scores_zero():
    # symmetric ring keeps the centroid at the first point exactly
    ring = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0],
                     [0, 0, 1], [0, 0, -1], [0.0, 0.0, 0.0]], dtype=float)
    pts = np.vstack([np.zeros(3), ring])  # centroid = origin = points 0 and 7
    kept = partial_cloud(pts, seed=4)
    r = _partial_direction(4)
    # centroid-coincident points score 0; kept set = top half by score
    scores = np.zeros(len(pts))
    d = pts - pts.mean(axis=0)
    lens = np.linalg.norm(d, axis=1)
    nz = lens > 1e-15
    scores[nz] = (d[nz] / lens[nz, None]) @ r
    order = np.argsort(-scores, kind="stable")[: len(pts) // 2]
    assert np.array_equal(kept, pts[np.sort(order)])


def test_partial_cloud_deterministic_and_even_only():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(32, 3))
    assert np.array_equal(partial_cloud(pts, 7), partial_cloud(pts, 7))
    with pytest.raises(ContractError):
        partial_cloud(pts[:31], 7)
