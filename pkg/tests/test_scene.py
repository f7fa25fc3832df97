import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from prunesim.geometry import nb_ray_capsule, nb_segment_distance, segment_distance
from prunesim.scene import (
    Category,
    PlacementError,
    SceneConfig,
    assemble_scene,
    collision_query,
    collision_query_bruteforce,
    dumps_scene,
    raycast,
    rigid_transform,
    scene_from_doc,
    scene_to_doc,
    translate_tree,
    with_config,
)
from prunesim.treegen import BranchClass, TrellisSpec

SPEC = TrellisSpec()
CFG = SceneConfig()
N_BAY = 2 + SPEC.wire_count


@pytest.fixture(scope="module")
def scene(bank):
    return assemble_scene([(bank[i], CFG.row_transform((i - 1) * SPEC.tree_spacing), i) for i in range(3)])


def test_empty_scene():
    s = assemble_scene([])
    assert s.n_capsules == 0 and len(s.plane_point) == 2
    assert raycast(s, [0, 0, 1], [0, 0, -1]).distance == pytest.approx(1.0)


def test_primitive_count(bank):
    s = assemble_scene([(bank[0], np.eye(4))])
    assert s.n_primitives == len(bank[0].skeleton) + N_BAY + 2


def test_categories(scene, bank):
    tert = sum(int(np.sum(bank[i].segment_class == BranchClass.TERTIARY)) for i in range(3))
    assert int(np.sum(scene.category == Category.SMALL_BRANCH)) == tert
    assert set(np.unique(scene.category)) == {Category.SMALL_BRANCH, Category.RIGID}


def test_wire_heights(bank):
    s = assemble_scene([(bank[0], np.eye(4))])
    wires = s.r == CFG.wire_radius
    np.testing.assert_allclose(np.sort(s.a[wires, 2]), [SPEC.wire_height(k) for k in range(1, 9)], atol=1e-12)


def test_translation_shifts_centroids(bank):
    s0 = assemble_scene([(bank[0], np.eye(4))])
    s1 = assemble_scene([(bank[0], rigid_transform(translation=(0.3, 0, 0)))])
    shift = (s1.a + s1.b) / 2 - (s0.a + s0.b) / 2
    np.testing.assert_allclose(shift, np.broadcast_to([0.3, 0, 0], s0.a.shape), rtol=0, atol=1e-15)


def test_below_ground_rejected(bank):
    with pytest.raises(PlacementError):
        assemble_scene([(bank[0], rigid_transform(translation=(0, 0, -0.3)))])


def test_non_rigid_rejected(bank):
    T = np.eye(4)
    T[0, 0] = 2
    with pytest.raises(ValueError):
        assemble_scene([(bank[0], T)])


def test_translate_tree(scene):
    assert translate_tree(scene, 0, (0, 0, 0)) is scene
    with pytest.raises(PlacementError):
        translate_tree(scene, 0, (0, 0, -0.5))
    moved = translate_tree(scene, 1, (0.1, 0.2, 0))
    tree = scene.trees[1].model
    for br in tree.prunable[:10]:
        np.testing.assert_allclose(moved.cutpoint(1, br.id) - scene.cutpoint(1, br.id), [0.1, 0.2, 0], rtol=0,
                                   atol=1e-15)


def test_far_probe(scene):
    assert collision_query(scene, ([-50, 50, 50], [-51, 50, 50], 0.1)) == []


def test_coaxial_trunk_probe(scene):
    tree = scene.trees[0]
    seg = tree.model.trunk.segments[1]
    a = tree.to_world(tree.model.skeleton.start[seg])
    b = tree.to_world(tree.model.skeleton.end[seg])
    hits = collision_query(scene, (a, b, 0.001))
    trunk = [h for h in hits if h.tree == 0 and h.branch == tree.model.trunk.id]
    assert trunk and all(h.category == Category.RIGID for h in trunk)


def test_hit_points_on_surface(scene, rng):
    for _ in range(50):
        a = rng.uniform([0.2, -1.5, 0.2], [1.2, 1.5, 2.5])
        for h in collision_query(scene, (a, a + rng.normal(size=3) * 0.1, 0.05)):
            if h.primitive < scene.n_capsules:
                d, _, _ = segment_distance(h.point, h.point, scene.a[h.primitive], scene.b[h.primitive])
                assert abs(float(d) - scene.r[h.primitive]) <= 1e-6


def _probes(scene, rng, n):
    lo = np.minimum(scene.a, scene.b).min(0) - 0.1
    hi = np.maximum(scene.a, scene.b).max(0) + 0.1
    a = rng.uniform(lo, hi, size=(n, 3))
    b = a + rng.normal(size=(n, 3)) * rng.uniform(0, 0.2, size=(n, 1))
    return a, b, rng.uniform(0.005, 0.08, n)


def test_collision_query_matches_scan(scene, rng):
    a, b, r = _probes(scene, rng, 1000)
    got = {(h.probe, h.primitive) for h in collision_query(scene, (a, b, r))}
    assert got == oracles.overlapping_pairs(scene, a, b, r)
    assert got == {(h.probe, h.primitive) for h in collision_query_bruteforce(scene, (a, b, r))}


def test_grid_cell_independent(scene, rng):
    a, b, r = _probes(scene, rng, 300)
    ref = {(h.probe, h.primitive) for h in collision_query(scene, (a, b, r))}
    for cell in (0.03, 0.5):
        other = with_config(scene, grid_cell=cell)
        assert {(h.probe, h.primitive) for h in collision_query(other, (a, b, r))} == ref


def test_probe_order_symmetric(scene, rng):
    a, b, r = _probes(scene, rng, 200)
    fwd = {(h.probe, h.primitive) for h in collision_query(scene, (a, b, r))}
    rev = {(199 - h.probe, h.primitive) for h in collision_query(scene, (a[::-1], b[::-1], r[::-1]))}
    assert fwd == rev


def test_ray_down_hits_ground():
    h = raycast(assemble_scene([]), [0.3, 0.1, 2.0], [0, 0, -1])
    assert h.category == Category.GROUND and abs(h.point[2]) < 1e-12


def test_ray_beside_capsule_misses(bank):
    s = assemble_scene([(bank[0], rigid_transform(translation=(5, 0, 0)))])
    # parallel to a post, laterally outside its radius, pointing up: nothing above
    post = int(np.argmax(s.r == CFG.post_radius))
    o = s.a[post] + [0, 0, 0.1] + np.array([0, 1, 0]) * (CFG.post_radius + 0.01)
    h = raycast(s, o + [0, 0, 10], [0, 0, 1])
    assert h is None


def test_raycast_matches_scan(scene, rng):
    for _ in range(300):
        o = rng.uniform([-0.5, -2, 0.1], [1.5, 2, 3])
        j = rng.integers(scene.n_capsules)
        d = (scene.a[j] + scene.b[j]) / 2 - o if rng.random() < 0.7 else rng.normal(size=3)
        h = raycast(scene, o, d)
        t, k = oracles.ray_hit(scene, o, d)
        if h is None:
            assert k == -1
        else:
            assert h.primitive == k and abs(h.distance - t) <= 1e-9


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100))
def test_ray_scale_invariant(scale):
    s = assemble_scene([])
    o, d = np.array([0.2, 0.0, 1.0]), np.array([0.3, 0.1, -1.0])
    assert raycast(s, o, d * scale).distance == pytest.approx(raycast(s, o, d).distance, rel=1e-12)


def test_raycast_zero_direction():
    with pytest.raises(ValueError):
        raycast(assemble_scene([]), [0, 0, 1], [0, 0, 0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=12, max_size=12))
def test_segment_distance_kernels_agree(v):
    p1, q1, p2, q2 = (np.array(v[i:i + 3]) for i in range(0, 12, 3))
    ref = oracles.segment_distance(p1, q1, p2[None], q2[None])[0]
    assert float(segment_distance(p1, q1, p2, q2)[0]) == pytest.approx(ref, abs=1e-9)
    assert nb_segment_distance(p1, q1, p2, q2) == pytest.approx(ref, abs=1e-9)


def test_numba_ray_kernel(scene, rng):
    for _ in range(200):
        o = rng.uniform([-0.5, -2, 0.1], [1.5, 2, 3])
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        j = rng.integers(scene.n_capsules)
        ref = oracles._ray_capsules(o, d, scene.a[j:j + 1], scene.b[j:j + 1], scene.r[j:j + 1])[0]
        got = nb_ray_capsule(*o, *d, scene.a[j], scene.b[j], scene.r[j])
        assert (np.isinf(ref) and np.isinf(got)) or abs(got - ref) <= 1e-9


def test_scene_document_round_trip(scene, bank):
    doc = json.loads(dumps_scene(scene))
    back = scene_from_doc(doc, bank)
    assert scene_to_doc(back) == scene_to_doc(scene)
    np.testing.assert_array_equal(back.a, scene.a)
