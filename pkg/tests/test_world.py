import math

import numpy as np
import pytest

from demohlm.robot import camera_pose
from demohlm.se3 import Pose, compose, inverse, pose_distance
from demohlm.tasks import RegionSpec, get_task, region_params
from demohlm.world import (
    HighLevelCommand,
    TrackingConfig,
    UnknownObject,
    default_state,
    object_pose_in_camera,
    object_position_in_camera,
    observation,
    sample_initial_state,
    step,
)

from conftest import pose_matrix_oracle

QUIET = TrackingConfig(time_constant=0.1, tracking_noise_std=0.0, control_dt=0.02)


@pytest.fixture
def state(model):
    return default_state(model, get_task("PressCube"))


def test_zero_command_is_fixed_point(model, state):
    new = step(model, state, HighLevelCommand.hold(state), QUIET)
    assert new.sim_time == pytest.approx(0.02)
    np.testing.assert_array_equal(new.q_robot(), state.q_robot())
    np.testing.assert_array_equal(new.grippers, state.grippers)
    for oid in state.objects:
        np.testing.assert_array_equal(new.objects[oid].to_array(), state.objects[oid].to_array())


def test_constant_velocity_integration(model, state):
    state.base = np.zeros(3)
    x0 = state.base[0]
    for _ in range(50):
        cmd = HighLevelCommand.hold(state)
        state = step(model, state, HighLevelCommand(1.0, 0.0, 0.0, *state.torso, cmd.q_upper, *state.grippers), QUIET)
    assert abs(state.base[0] - x0 - 1.0) <= 1e-9
    assert state.base[1] == 0.0 and state.base[2] == 0.0


def test_velocity_is_in_base_frame(model, state):
    state.base = np.array([0.0, 0.0, math.pi / 2])
    cmd = HighLevelCommand(1.0, 0.0, 0.0, *state.torso, state.q_arms.copy(), *state.grippers)
    new = step(model, state, cmd, QUIET)
    np.testing.assert_allclose(new.base[:2], [0.0, 0.02], atol=1e-15)


def test_first_order_lag_half_life(model, state):
    # with time_constant = dt / ln 2 one tick covers exactly half the gap
    cfg = TrackingConfig(time_constant=0.02 / math.log(2), tracking_noise_std=0.0, control_dt=0.02)
    assert cfg.alpha == pytest.approx(0.5, abs=1e-15)
    state.q_arms = np.zeros(12)
    target = np.zeros(12)
    target[2] = 1.0  # shoulder yaw, well inside its limits
    cmd = HighLevelCommand(0, 0, 0, *state.torso, target, *state.grippers)
    new = step(model, state, cmd, cfg)
    assert abs(new.q_arms[2] - 0.5) <= 1e-12
    assert new.qd_arms[2] == pytest.approx(0.5 / 0.02)


def test_joint_limits_clamped(model, state):
    target = model.arm_upper + 5.0
    cmd = HighLevelCommand(0, 0, 0, 2.0, 1.0, 1.0, 1.0, target, 0, 0)
    rng = np.random.default_rng(0)
    noisy = TrackingConfig(0.05, 0.5, 0.02)
    for _ in range(30):
        state = step(model, state, cmd, noisy, rng)
        assert np.all(state.q_arms <= model.arm_upper) and np.all(state.q_arms >= model.arm_lower)
        assert np.all(state.torso <= model.torso_limits[:, 1]) and np.all(state.torso >= model.torso_limits[:, 0])


def test_rejects_non_finite_command(model, state):
    cmd = HighLevelCommand(float("nan"), 0, 0, *state.torso, state.q_arms.copy(), *state.grippers)
    with pytest.raises(ValueError):
        step(model, state, cmd, QUIET)


def test_rejects_wrong_q_upper_length(model, state):
    cmd = HighLevelCommand(0, 0, 0, *state.torso, np.zeros(10), *state.grippers)
    with pytest.raises(ValueError):
        step(model, state, cmd, QUIET)


def test_noise_requires_rng(model, state):
    with pytest.raises(ValueError):
        step(model, state, HighLevelCommand.hold(state), TrackingConfig(0.1, 0.01, 0.02))


def test_command_vector_round_trip(state):
    cmd = HighLevelCommand(0.1, -0.2, 0.3, *state.torso, state.q_arms.copy(), 0.0, 1.0)
    vec = cmd.to_vector()
    assert vec.shape == (21,)
    np.testing.assert_array_equal(HighLevelCommand.from_vector(vec).to_vector(), vec)


def _grab(model, state, arm="right"):
    """Put the primary object in the hand, then close the gripper."""
    i = 0 if arm == "left" else 1
    eef = state.eef(model)[arm]
    state.objects = dict(state.objects)
    state.objects["cube"] = Pose(eef.translation + np.array([0.0, 0.0, -0.02]), state.objects["cube"].rotation)
    state._eef = None
    grips = state.grippers.copy()
    grips[i] = 0.0
    cmd = HighLevelCommand(0, 0, 0, *state.torso, state.q_arms.copy(), *grips)
    return step(model, state, cmd, QUIET)


def test_grasp_attaches_and_object_rides_rigidly(model, state):
    state = _grab(model, state)
    assert state.attachments["cube"][0] == "right"
    rng = np.random.default_rng(1)
    noisy = TrackingConfig(0.1, 0.01, 0.02)
    target = state.q_arms + 0.3
    for _ in range(40):
        cmd = HighLevelCommand(0.2, 0.0, 0.1, *state.torso, target, *state.grippers)
        state = step(model, state, cmd, noisy, rng)
        arm, rel = state.attachments["cube"]
        expected = compose(rel, state.eef(model)[arm])
        np.testing.assert_array_equal(state.objects["cube"].translation, expected.translation)
        np.testing.assert_array_equal(state.objects["cube"].rotation, expected.rotation)


def test_release_detaches(model, state):
    state = _grab(model, state)
    cmd = HighLevelCommand(0, 0, 0, *state.torso, state.q_arms.copy(), 1.0, 1.0)
    state = step(model, state, cmd, QUIET)
    assert "cube" not in state.attachments
    before = state.objects["cube"].to_array()
    cmd = HighLevelCommand(0, 0, 0, *state.torso, state.q_arms + 0.2, 1.0, 1.0)
    state = step(model, state, cmd, QUIET)
    np.testing.assert_array_equal(state.objects["cube"].to_array(), before)


def test_closing_far_from_object_grabs_nothing(model, state):
    grips = np.array([0.0, 0.0])
    state = step(model, state, HighLevelCommand(0, 0, 0, *state.torso, state.q_arms.copy(), *grips), QUIET)
    assert state.attachments == {}


def test_push_moves_along_contact_normal(model):
    task = get_task("PushCube")
    state = default_state(model, task)
    hand = state.eef(model)["right"].translation
    # cube just beyond the hand along +y (a face normal for an unrotated cube)
    start = hand + np.array([0.0, 0.05, 0.0])
    state.objects = {"cube": Pose(start, [1, 0, 0, 0])}
    state._eef = None
    # slide the whole robot sideways so the hand sweeps into the cube
    for _ in range(10):
        cmd = HighLevelCommand(0.0, 0.5, 0.0, *state.torso, state.q_arms.copy(), *state.grippers)
        state = step(model, state, cmd, QUIET)
    moved = state.objects["cube"].translation - start
    assert moved[1] > 0.0
    assert abs(moved[0]) <= 1e-12 and abs(moved[2]) <= 1e-12
    np.testing.assert_array_equal(state.objects["cube"].rotation, [1, 0, 0, 0])


def test_static_objects_are_not_pushed(model, state):
    hand = state.eef(model)["right"].translation
    start = hand + np.array([0.0, 0.05, 0.0])
    state.objects = {"cube": Pose(start, [1, 0, 0, 0])}
    state._eef = None
    for _ in range(10):
        cmd = HighLevelCommand(0.0, 0.5, 0.0, *state.torso, state.q_arms.copy(), *state.grippers)
        state = step(model, state, cmd, QUIET)
    np.testing.assert_array_equal(state.objects["cube"].translation, start)


def _run(model, state, seed, n=60):
    rng = np.random.default_rng(seed)
    cfg = TrackingConfig(0.1, 0.01, 0.02)
    for k in range(n):
        cmd = HighLevelCommand(0.3, 0.1, 0.2, 0.7, 0.05, 0.1, 0.0, state.q_arms + 0.01 * k, *state.grippers)
        state = step(model, state, cmd, cfg, rng, neck_rate=(0.1, -0.1))
    return state


def test_determinism(model, state):
    a = _run(model, state.copy(), 7)
    b = _run(model, state.copy(), 7)
    c = _run(model, state.copy(), 8)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != c.fingerprint()


def test_sim_time_non_decreasing(model, state):
    t = state.sim_time
    for _ in range(5):
        state = step(model, state, HighLevelCommand.hold(state), QUIET)
        assert state.sim_time > t
        t = state.sim_time


# --- camera frame ---


def test_camera_frame_convention(model, state):
    # neck at zero: optical axis along the robot's heading, image-up along world z
    state.base = np.zeros(3)
    state.torso = np.array([0.75, 0.0, 0.0, 0.0])
    state.neck = np.zeros(2)
    cam = camera_pose(model, state.base, state.torso, state.neck)
    ahead = cam.translation + np.array([2.0, 0.0, 0.0])
    state.objects = {"cube": Pose(ahead, [1, 0, 0, 0])}
    np.testing.assert_allclose(object_position_in_camera(model, state, "cube"), [0, 0, 2.0], atol=1e-12)
    state.objects = {"cube": Pose(ahead + [0, 0, 0.3], [1, 0, 0, 0])}
    assert object_position_in_camera(model, state, "cube")[0] > 0  # above the centre
    state.objects = {"cube": Pose(ahead + [0, -0.3, 0], [1, 0, 0, 0])}
    assert object_position_in_camera(model, state, "cube")[1] > 0  # to the right


def test_object_at_camera_origin(model, state):
    cam = camera_pose(model, state.base, state.torso, state.neck)
    state.objects = {"cube": cam}
    p = object_pose_in_camera(model, state, "cube")
    np.testing.assert_allclose(p.translation, 0.0, atol=1e-12)
    assert pose_distance(p, Pose.identity()).rotation_error <= 1e-9


def test_object_in_camera_matrix_oracle(model, state):
    rng = np.random.default_rng(3)
    for _ in range(30):
        state.base = rng.uniform(-1, 1, 3)
        state.torso = np.array([0.7, 0.1, -0.1, 0.2])
        state.neck = rng.uniform(-0.5, 0.5, 2)
        obj = Pose.from_xyz_rpy(*rng.uniform(-1, 1, 3), *rng.uniform(-1, 1, 3))
        state.objects = {"cube": obj}
        cam = camera_pose(model, state.base, state.torso, state.neck)
        expected = np.linalg.inv(pose_matrix_oracle(cam)) @ pose_matrix_oracle(obj)
        np.testing.assert_allclose(object_pose_in_camera(model, state, "cube").matrix(), expected, atol=1e-9)
        np.testing.assert_allclose(object_position_in_camera(model, state, "cube"), expected[:3, 3], atol=1e-9)
        assert pose_distance(object_pose_in_camera(model, state, "cube"), compose(obj, inverse(cam))).within(1e-12, 1e-9)


def test_unknown_object(model, state):
    with pytest.raises(UnknownObject):
        object_pose_in_camera(model, state, "nope")


def test_observation_layout(model, state):
    obs = observation(model, state, "cube")
    assert obs.shape == (41,)
    assert obs[0] == state.torso[0] and obs[1] == state.torso[3]
    np.testing.assert_array_equal(obs[2:14], state.q_arms)
    np.testing.assert_array_equal(obs[32:34], state.torso[1:3])
    np.testing.assert_allclose(obs[34:37], object_position_in_camera(model, state, "cube"), atol=1e-12)


# --- initial states ---


def test_degenerate_region_gives_default_state(model):
    task = get_task("GraspCube")
    s = sample_initial_state(model, task, RegionSpec.degenerate(task), 123)
    d = default_state(model, task)
    np.testing.assert_array_equal(s.q_robot(), d.q_robot())
    for oid in d.objects:
        np.testing.assert_array_equal(s.objects[oid].to_array(), d.objects[oid].to_array())


def test_region_r1_robot_ranges(model):
    task = get_task("GraspCube")
    r1 = region_params("R1")
    for seed in range(200):
        s = sample_initial_state(model, task, r1, seed)
        assert -0.6 <= s.base[0] <= -0.3
        assert -0.05 <= s.base[1] <= 0.05
        assert abs(s.base[2]) <= math.pi / 16


def test_object_offsets_applied_about_object(model):
    task = get_task("GraspCube")
    r1 = region_params("R1")
    default = default_state(model, task).objects["cube"]
    for seed in range(50):
        obj = sample_initial_state(model, task, r1, seed).objects["cube"]
        d = obj.translation - default.translation
        assert d[0] == pytest.approx(0.0, abs=1e-12)
        assert 0.0 <= d[1] <= 0.02 + 1e-12
        assert -0.05 - 1e-12 <= d[2] <= 0.0
        assert abs(obj.yaw()) <= math.pi / 4 + 1e-12


def test_initial_state_determinism(model):
    task = get_task("Handover")
    r2 = region_params("R2")
    a = sample_initial_state(model, task, r2, 5)
    b = sample_initial_state(model, task, r2, 5)
    c = sample_initial_state(model, task, r2, 6)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != c.fingerprint()
