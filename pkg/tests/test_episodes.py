import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation
from scipy.stats import kstest

from prunesim.episodes import (
    Episode,
    EpisodeGenerationError,
    NoiseBounds,
    ReachableRegion,
    bank_digest,
    episode_scene,
    fibonacci_directions,
    make_eval_set,
    make_training_episode,
    match_branch,
    random_orientation,
    read_episodes,
    sample_reachable_point,
    write_episodes,
)
from prunesim.scene import SceneConfig
from prunesim.treegen import generate_bank


def in_region(p, lo=0.70, hi=0.95):
    # written out again rather than calling ReachableRegion.contains
    r = math.sqrt(p[0] ** 2 + p[1] ** 2 + p[2] ** 2)
    return lo <= r <= hi and p[0] >= 0.0 and p[2] >= 0.0


# ------------------------------------------------------------------ region


def test_region_points_satisfy_constraints(rng):
    region = ReachableRegion()
    pts = np.array([sample_reachable_point(region, rng) for _ in range(5000)])
    assert all(in_region(p) for p in pts)
    r = np.linalg.norm(pts, axis=1)
    assert r.min() >= 0.70 and not np.any(np.isclose(r, 0.6, atol=0.05))


def test_radial_law_is_uniform_by_volume():
    rng = np.random.default_rng(5)
    region = ReachableRegion()
    r = np.array([np.linalg.norm(sample_reachable_point(region, rng)) for _ in range(100_000)])
    a, b = 0.70, 0.95
    res = kstest(r, lambda x: (np.clip(x, a, b) ** 3 - a**3) / (b**3 - a**3))
    assert res.statistic < 0.01


def test_region_validation():
    with pytest.raises(ValueError):
        ReachableRegion(0.9, 0.8)
    assert not ReachableRegion().contains([0.6, 0, 0.1])
    assert not ReachableRegion().contains([-0.8, 0, 0.1])


# ------------------------------------------------------------------ orientation


def test_shoemake_endpoints():
    assert np.allclose(random_orientation(u=(0, 0, 0)), [0, 1, 0, 0], atol=1e-15)
    for u2 in (0.0, 0.3, 0.9):
        assert np.allclose(random_orientation(u=(1, u2, 0)), [0, 0, 0, 1], atol=1e-15)


@given(st.tuples(*[st.floats(0, 1)] * 3))
def test_quaternion_unit(u):
    assert abs(np.linalg.norm(random_orientation(u=u)) - 1.0) <= 1e-12


def test_rotated_vector_uniform_over_octants():
    rng = np.random.default_rng(21)
    n = 100_000
    q = np.array([random_orientation(rng) for _ in range(n)])
    v = Rotation.from_quat(q).apply([1.0, 0.0, 0.0])
    octant = (v[:, 0] > 0) * 4 + (v[:, 1] > 0) * 2 + (v[:, 2] > 0)
    counts = np.bincount(octant, minlength=8)
    sigma = math.sqrt(n * (1 / 8) * (7 / 8))
    assert np.all(np.abs(counts - n / 8) <= 3 * sigma), counts


# ------------------------------------------------------------------ fibonacci


def test_fibonacci_single():
    assert np.allclose(fibonacci_directions(1), [[1.0, 0.0, 0.0]], atol=1e-15)
    with pytest.raises(ValueError):
        fibonacci_directions(0)


def test_fibonacci_unit_and_spacing():
    d = fibonacci_directions(1000)
    assert np.max(np.abs(np.linalg.norm(d, axis=1) - 1.0)) <= 1e-12
    # brute-force pairwise nearest neighbour
    nn = np.empty(len(d))
    for i, v in enumerate(d):
        c = d @ v
        c[i] = -2.0
        nn[i] = math.degrees(math.acos(min(1.0, c.max())))
    assert 3.0 <= nn.min() and nn.max() <= 8.0


# ------------------------------------------------------------------ matching


def brute_force_matches(bank, d, tol):
    d = np.asarray(d, float) / np.linalg.norm(d)
    out = []
    for t, tree in enumerate(bank):
        for br in tree.prunable:
            ang = min(math.degrees(math.acos(max(-1.0, min(1.0, s * float(br.direction @ d))))) for s in (1, -1))
            if ang <= tol:
                out.append((t, br.id))
    return set(out)


def test_match_exact_branch_first(bank):
    br = bank[3].prunable[2]
    m = match_branch(bank, br.direction)
    assert m[0].error_deg == pytest.approx(0.0, abs=1e-5)
    assert br.direction @ bank[m[0].tree].branches[m[0].branch].direction == pytest.approx(1.0, abs=1e-10)
    assert m[0].sign == 1
    assert [x.error_deg for x in m] == sorted(x.error_deg for x in m)


def test_match_none_when_far():
    bank = generate_bank(1, 0)
    dirs = np.array([b.direction for t in bank for b in t.prunable])
    # search the sphere for a direction 15 degrees or more from every axis
    cand = fibonacci_directions(4000)
    gap = np.degrees(np.arccos(np.clip(np.abs(cand @ dirs.T).max(axis=1), 0, 1)))
    k = int(np.argmax(gap))
    assert gap[k] >= 15.0
    assert match_branch(bank, cand[k]) == []


def test_match_equals_brute_force(bank):
    for d in fibonacci_directions(60):
        got = {(m.tree, m.branch) for m in match_branch(bank, d)}
        assert got == brute_force_matches(bank, d, 10.0)


def test_match_sign_agnostic(bank):
    for d in fibonacci_directions(40):
        a, b = match_branch(bank, d), match_branch(bank, -d)
        assert [(m.tree, m.branch) for m in a] == [(m.tree, m.branch) for m in b]
        assert all(x.sign == -y.sign for x, y in zip(a, b))


def test_match_empty_bank():
    with pytest.raises(ValueError):
        match_branch([], [1, 0, 0])


# ------------------------------------------------------------------ episodes


def test_training_episode_postconditions(bank):
    rng = np.random.default_rng(3)
    cfg = SceneConfig()
    for i in range(40):
        ep = make_training_episode(bank, rng=rng, seed=3, ep_id=f"e{i}")
        assert in_region(ep.p_g)
        assert abs(np.linalg.norm(ep.b) - 1) < 1e-12
        err = math.degrees(math.acos(min(1.0, abs(float(ep.b @ ep.requested)) / np.linalg.norm(ep.requested))))
        assert err <= 10.0 + 1e-9
        # the branch cutpoint really sits at p_g in the nominal base frame
        scene = episode_scene(ep, bank)
        tree = bank[ep.tree_id]
        c = tree.branches[ep.branch].cutpoint(tree.skeleton, 0.25)
        world = ep.transform[:3, :3] @ c + ep.transform[:3, 3]
        assert np.allclose(world - cfg.base_pose()[:3, 3], ep.p_g, atol=1e-12)
        assert scene is not None


def test_training_episode_deterministic(bank):
    a = make_training_episode(bank, seed=17)
    b = make_training_episode(bank, seed=17)
    assert a.to_dict() == b.to_dict()
    assert make_training_episode(bank, seed=18).to_dict() != a.to_dict()


def test_noise_bounds(bank):
    rng = np.random.default_rng(8)
    eps = [make_training_episode(bank, rng=rng) for _ in range(1000)]
    robot = np.degrees(np.abs([e.robot_noise for e in eps]))
    cam = np.degrees(np.abs([e.camera_noise for e in eps]))
    assert robot.max() <= 5.0 and cam.max() <= 2.0
    # uniform, so the extremes are approached
    assert robot.max() > 4.9 and cam.max() > 1.95
    zero = make_training_episode(bank, seed=1, noise=NoiseBounds(0.0, 0.0))
    assert zero.robot_noise == (0.0, 0.0, 0.0) and zero.camera_noise == (0.0, 0.0)


def test_generation_gives_up_with_diagnostics(bank):
    with pytest.raises(EpisodeGenerationError, match="no_match"):
        # a region no branch can be moved to
        make_training_episode(bank, region=ReachableRegion(0.0, 1e-9), seed=0, max_tries=5)


def test_eval_set_small_and_in_region(bank):
    one = make_eval_set(bank, 1, 1, seed=0)
    assert len(one.episodes) <= 1
    s = make_eval_set(bank, 30, 3, seed=2)
    assert len(s.episodes) + 3 * len(s.unmatched) <= 90
    assert all(in_region(e.p_g) for e in s.episodes)
    # every orientation is either placed or listed
    placed = {int(e.id.split("-")[1]) for e in s.episodes}
    assert placed | set(s.unmatched) == set(range(30))
    assert not placed & set(s.unmatched)


def test_eval_set_deterministic(bank, tmp_path):
    a = make_eval_set(bank, 20, 2, seed=4)
    b = make_eval_set(bank, 20, 2, seed=4)
    write_episodes(a.episodes, tmp_path / "a.jsonl", bank_digest(bank))
    write_episodes(b.episodes, tmp_path / "b.jsonl", bank_digest(bank))
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_episode_file_round_trip(bank, tmp_path):
    eps = make_eval_set(bank, 10, 2, seed=6).episodes
    eps.append(make_training_episode(bank, seed=2, floated=True))
    path = tmp_path / "eps.jsonl"
    write_episodes(eps, path, bank_digest(bank), {"note": "x"})
    header, back = read_episodes(path)
    assert header["bank_hash"] == bank_digest(bank) and header["count"] == len(eps) and header["note"] == "x"
    assert [e.to_dict() for e in back] == [e.to_dict() for e in eps]
    assert isinstance(back[0], Episode) and back[-1].floated


def test_episode_file_bad_schema(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"schema": "other"}\n')
    with pytest.raises(ValueError):
        read_episodes(p)
    (tmp_path / "empty.jsonl").write_text("")
    with pytest.raises(ValueError):
        read_episodes(tmp_path / "empty.jsonl")


def test_bank_digest_tracks_content():
    a, b = generate_bank(2, 0), generate_bank(2, 1)
    assert bank_digest(a) == bank_digest(generate_bank(2, 0)) != bank_digest(b)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_sampler_region_property(seed):
    rng = np.random.default_rng(seed)
    region = ReachableRegion(0.5, 0.6)
    for _ in range(50):
        p = sample_reachable_point(region, rng)
        assert in_region(p, 0.5, 0.6)
