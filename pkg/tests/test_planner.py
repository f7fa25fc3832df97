import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import ks_2samp

from prunesim.contact import SMALL, RobotCollider
from prunesim.env import Cutpoint, EnvConfig, PruningEnv, check_success
from prunesim.episodes import make_training_episode
from prunesim.geometry import SpatialGrid
from prunesim.planner import (
    PlanRequest,
    PlanStatus,
    densify,
    goal_configurations,
    ik_solve,
    plan,
    rrt_connect,
    sample_goal_poses,
    shortcut,
    validate_path,
)
from prunesim.robot import CutterFrame, KinematicModel, forward_kinematics, ready_configuration
from prunesim.scene import Category, assemble_scene

from oracles import dh_pose

MODEL = KinematicModel.default()
CUT = Cutpoint(np.array([0.75, 0.1, 0.3]), np.array([0.0, 0.6, 0.8]))


def capsule_scene(a, b, r):
    s = assemble_scene([])
    a, b, r = (np.asarray(x, dtype=float) for x in (a, b, r))
    n = len(a)
    return replace(s, a=a, b=b, r=r, category=np.full(n, int(Category.RIGID)), tree=np.full(n, -1),
                   branch=np.full(n, -1), grid=SpatialGrid.build(a, b, r, cell=0.1))


def fence(zs, az=0.75, r0=0.12, r1=1.1, radius=0.02):
    """Horizontal radial bars stacked in z, in the robot base frame."""
    u = np.array([math.cos(az), math.sin(az), 0.0])
    a = [u * r0 + [0, 0, 0.6 + z] for z in zs]
    b = [u * r1 + [0, 0, 0.6 + z] for z in zs]
    return capsule_scene(a, b, [radius] * len(zs))


def free_fn(scene):
    col = RobotCollider(scene, MODEL, scene.base_pose)
    return lambda q: col.contacts(q) == 0


# ------------------------------------------------------------------ goal poses


def test_goal_poses_pass_success_check():
    rng = np.random.default_rng(0)
    poses = sample_goal_poses(CUT, 200, rng)
    assert len(poses) == 200
    for f in poses:
        assert check_success(f, CUT).passed
        assert np.allclose(f.rotation.T @ f.rotation, np.eye(3), atol=1e-9)


def test_zero_slack_gives_canonical_pose():
    tiny = 1e-9
    (f,) = sample_goal_poses(CUT, 1, np.random.default_rng(1), max_distance=tiny, max_angle_deg=tiny,
                              jaw_half_gap=tiny, approach_spread=0.0, both_signs=False)
    u = CUT.p_g - (CUT.p_g @ CUT.b) * CUT.b
    u /= np.linalg.norm(u)
    assert np.allclose(f.position, CUT.p_g, atol=1e-8)
    assert np.allclose(f.pointing, u, atol=1e-8)
    assert np.allclose(f.lateral, CUT.b, atol=1e-8)


def test_b_flip_gives_same_pose_statistics():
    flipped = Cutpoint(CUT.p_g, -CUT.b)
    a = sample_goal_poses(CUT, 1500, np.random.default_rng(2))
    b = sample_goal_poses(flipped, 1500, np.random.default_rng(3))
    for f in b:
        assert check_success(f, CUT).passed
    ra = [check_success(f, CUT) for f in a]
    rb = [check_success(f, flipped) for f in b]
    for attr in ("distance", "pointing_deg", "perpendicular_deg", "mouth_offset"):
        p = ks_2samp([getattr(r, attr) for r in ra], [getattr(r, attr) for r in rb]).pvalue
        assert p > 1e-3, attr


def test_goal_poses_need_n():
    with pytest.raises(ValueError):
        sample_goal_poses(CUT, 0, np.random.default_rng(0))


# ------------------------------------------------------------------ IK


def test_ik_fixed_point(rng):
    for _ in range(10):
        q0 = rng.uniform(-2, 2, 6)
        q, it = ik_solve(MODEL, forward_kinematics(MODEL, q0), q0)
        assert it == 0 and np.array_equal(q, q0)


def test_ik_perturbed_seed(rng):
    for _ in range(30):
        q0 = rng.uniform(-2, 2, 6)
        target = forward_kinematics(MODEL, q0)
        q, _ = ik_solve(MODEL, target, q0 + rng.uniform(-0.1, 0.1, 6), rng)
        # judged by the independent symbolic kinematics
        T = dh_pose(MODEL, q)
        assert np.linalg.norm(T[:3, 3] - target.position) < 1e-3
        dR = T[:3, :3] @ target.rotation.T
        assert math.acos(min(1.0, (np.trace(dR) - 1) / 2)) < 1e-2


def test_ik_unreachable():
    far = CutterFrame(np.array([1.5, 0.0, 0.2]), np.eye(3))
    assert ik_solve(MODEL, far, np.zeros(6), np.random.default_rng(0)) is None
    with pytest.raises(ValueError):
        ik_solve(MODEL, far, np.zeros(6), tol_pos=0.0)


# ------------------------------------------------------------------ search


def test_densify_resolution(rng):
    for _ in range(50):
        q0, q1 = rng.uniform(-3, 3, (2, 6))
        pts = densify(q0, q1, 0.05)
        assert np.array_equal(pts[0], q0) and np.allclose(pts[-1], q1, atol=1e-15)
        assert np.max(np.abs(np.diff(pts, axis=0))) <= 0.05 + 1e-12


def test_free_space_straight_line():
    scene = capsule_scene(np.zeros((0, 3)), np.zeros((0, 3)), [])
    qs = ready_configuration(MODEL)
    qg = qs + np.array([0.8, 0.2, -0.2, 0.3, 0.1, 0.4])
    res = rrt_connect(qs, [qg], free_fn(scene), PlanRequest(), np.random.default_rng(0))
    assert res.status is PlanStatus.SUCCESS and res.iterations <= 3
    assert np.array_equal(res.path[0], qs) and np.allclose(res.path[-1], qg)
    assert validate_path(res.path, scene, MODEL).valid


def test_all_goals_colliding_is_no_goal():
    calls = []

    def free(q):
        calls.append(q)
        return bool(np.all(q == 0))

    goals = [np.full(6, 0.5 + k) for k in range(100)]
    res = rrt_connect(np.zeros(6), goals, free, PlanRequest(), np.random.default_rng(0))
    assert res.status is PlanStatus.NO_GOAL and res.iterations == 0 and res.path == []
    assert len(calls) == 100  # no search, only the goal checks


def test_start_in_collision_is_an_error():
    with pytest.raises(ValueError):
        rrt_connect(np.zeros(6), [np.ones(6)], lambda q: q[0] > 0.5, PlanRequest())


def test_wall_with_gap():
    gap = (0.7, 1.05)
    zs = np.arange(0.0, 1.6, 0.05)
    qs = ready_configuration(MODEL)
    qg = qs.copy()
    qg[0] += 1.5
    solid = fence(zs)
    open_ = fence([z for z in zs if not gap[0] < z < gap[1]])
    free_solid, free_open = free_fn(solid), free_fn(open_)
    assert free_open(qs) and free_open(qg)
    # the straight joint-space move is blocked by the fence
    assert not all(free_open(q) for q in densify(qs, qg, 0.05))
    req = PlanRequest(max_iterations=3000)
    assert rrt_connect(qs, [qg], free_solid, req, np.random.default_rng(0)).status is PlanStatus.TIMEOUT
    res = rrt_connect(qs, [qg], free_open, req, np.random.default_rng(0))
    assert res.status is PlanStatus.SUCCESS
    assert np.array_equal(res.path[0], qs) and np.allclose(res.path[-1], qg)
    for resolution in (0.05, 0.025):
        rep = validate_path(res.path, open_, MODEL, resolution=resolution)
        assert rep.valid, rep.reason
    short = shortcut(res.path, free_open, 0.05, 50, np.random.default_rng(1))
    assert len(short) <= len(res.path) and validate_path(short, open_, MODEL, resolution=0.025).valid


def test_validate_reports_offending_edge():
    zs = np.arange(0.0, 1.6, 0.05)
    scene = fence(zs)
    qs = ready_configuration(MODEL)
    mid = qs.copy()
    mid[0] += 0.1
    end = qs.copy()
    end[0] += 1.5
    rep = validate_path([qs, mid, end], scene, MODEL)
    assert not rep.valid and rep.edge == 1 and "touches" in rep.reason
    assert validate_path([qs], scene, MODEL).valid
    with pytest.raises(ValueError):
        validate_path([], scene, MODEL)


def test_rrt_deterministic():
    scene = fence([z for z in np.arange(0.0, 1.6, 0.05) if not 0.7 < z < 1.05])
    qs = ready_configuration(MODEL)
    qg = qs.copy()
    qg[0] += 1.5
    free = free_fn(scene)
    a = rrt_connect(qs, [qg], free, PlanRequest(), np.random.default_rng(9))
    b = rrt_connect(qs, [qg], free, PlanRequest(), np.random.default_rng(9))
    assert a.iterations == b.iterations and all(np.array_equal(x, y) for x, y in zip(a.path, b.path))


# ------------------------------------------------------------------ on real episodes


@pytest.fixture(scope="module")
def planned(bank):
    env = PruningEnv(bank, EnvConfig(render=False))
    rng = np.random.default_rng(4)
    req = PlanRequest(n_goal_samples=30, time_budget=20.0)
    out = []
    for k in range(12):
        ep = make_training_episode(bank, rng=rng, ep_id=f"p{k}")
        env.reset(ep)
        res = plan(env.scene, env.cut, ep.start_q, env.model, req, target=(0, ep.branch))
        out.append((ep, env.scene, env.cut, res))
    return out


def test_plans_survive_finer_validation(planned):
    ok = [x for x in planned if x[3].success]
    assert len(ok) >= 3
    for ep, scene, cut, res in ok:
        assert np.array_equal(res.path[0], ep.start_q)
        rep = validate_path(res.path, scene, MODEL, (0, ep.branch), resolution=0.025)
        assert rep.valid, rep.reason
        end = check_success(forward_kinematics(MODEL, res.path[-1]), cut, 0.05 + 2e-3, 30.5, 0.02 + 2e-3)
        assert end.passed, end.failed


def test_plan_deterministic(bank, planned):
    ep, scene, cut, res = next(x for x in planned if x[3].success)
    again = plan(scene, cut, ep.start_q, MODEL, PlanRequest(n_goal_samples=30, time_budget=20.0),
                 target=(0, ep.branch))
    assert again.status is res.status
    assert len(again.path) == len(res.path) and all(np.array_equal(x, y) for x, y in zip(again.path, res.path))


def test_target_branch_only_ignored_for_cutter(bank, planned):
    seen = 0
    for ep, scene, cut, res in planned:
        if not res.success:
            continue
        q = res.path[-1]
        plain = RobotCollider(scene, MODEL, scene.base_pose)
        target = RobotCollider(scene, MODEL, scene.base_pose, (0, ep.branch))
        assert target.contacts(q) == 0
        seen += bool(plain.contacts(q) & SMALL)
    assert seen >= 1


def test_goal_configurations_are_free(bank):
    env = PruningEnv(bank, EnvConfig(render=False))
    ep = make_training_episode(bank, seed=12)
    env.reset(ep)
    rng = np.random.default_rng(0)
    col = RobotCollider(env.scene, MODEL, env.scene.base_pose, (0, ep.branch))
    qs = goal_configurations(MODEL, sample_goal_poses(env.cut, 20, rng), ep.start_q, col, rng)
    for q in qs:
        assert col.contacts(q) == 0 and np.all(np.abs(q - ep.start_q) <= math.pi + 1e-9)
