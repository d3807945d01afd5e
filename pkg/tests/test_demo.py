import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demohlm.demo import (
    DemoFrame,
    DemoTrajectory,
    NoContact,
    ParseError,
    SchemaError,
    detect_contact_time,
    load_demo,
    load_relative,
    save_demo,
    save_relative,
    to_relative,
    validate_demo,
)
from demohlm.robot import ARMS
from demohlm.se3 import Pose, compose, pose_distance
from demohlm.tasks import task_names

from conftest import random_pose

Q_ROBOT = np.concatenate([[-0.4, 0.0, 0.0], [0.75, 0, 0, 0], np.zeros(12), [0.0, 0.45]])


def approach_demo(n=20, start=0.5, flags=None, obj=None, rate=50.0):
    """Right hand moving along -x toward a static object, 'start' metres away at frame 1."""
    obj = obj or Pose.from_xyz_rpy(0.1, -0.2, 0.8, yaw=0.3)
    frames = []
    for k in range(n):
        d = start * (1 - k / (n - 1))
        right = Pose(obj.translation + np.array([-d, 0.0, 0.0]), obj.rotation)
        left = Pose.from_xyz_rpy(0.0, 0.3, 0.5)
        flag = None if flags is None else bool(flags[k])
        frames.append(DemoFrame(k, Q_ROBOT.copy(), left, right, obj, 1.0, 1.0, flag))
    return DemoTrajectory(tuple(frames), "PressCube", rate)


def assert_reconstructs(demo, t_c):
    rel = to_relative(demo, t_c)
    obj = demo.frames[0].obj
    contact = demo.frames[t_c - 1]
    for arm in ARMS:
        for k in range(t_c):
            d = pose_distance(compose(rel.pre[arm][k], obj), demo.frames[k].eef(arm))
            assert d.within(1e-9, 1e-9)
        for k, p in enumerate(rel.post[arm]):
            d = pose_distance(compose(p, contact.eef(arm)), demo.frames[t_c - 1 + k].eef(arm))
            assert d.within(1e-9, 1e-9)
    assert len(rel.pre["left"]) == t_c
    assert len(rel.pre["left"]) + len(rel.post["left"]) == len(demo) + 1


# --- file format ---


def test_two_frame_file(tmp_path):
    demo = approach_demo(n=2)
    path = tmp_path / "d.txt"
    save_demo(demo, path)
    loaded = load_demo(path)
    assert len(loaded) == 2 and loaded.task == "PressCube" and loaded.rate == 50.0


def test_round_trip_is_bit_exact(tmp_path, demo_for):
    for name in ("PressCube", "PourWater"):
        demo = demo_for(name)
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        save_demo(demo, a)
        save_demo(load_demo(a), b)
        assert a.read_bytes() == b.read_bytes()
        loaded = load_demo(a)
        for f, g in zip(demo.frames, loaded.frames):
            np.testing.assert_array_equal(f.q_robot, g.q_robot)
            for arm in ARMS:
                np.testing.assert_array_equal(f.eef(arm).to_array(), g.eef(arm).to_array())


def test_contact_flags_survive_round_trip(tmp_path):
    flags = [0] * 7 + [1] * 13
    demo = approach_demo(flags=flags)
    save_demo(demo, tmp_path / "d.txt")
    loaded = load_demo(tmp_path / "d.txt")
    assert [f.contact_flag for f in loaded.frames] == [bool(v) for v in flags]


def _write_with(tmp_path, mutate):
    demo = approach_demo(n=4)
    path = tmp_path / "d.txt"
    save_demo(demo, path)
    lines = path.read_text().splitlines()
    mutate(lines)
    path.write_text("\n".join(lines) + "\n")
    return path


def test_non_unit_quaternion_names_frame_and_line(tmp_path):
    def bump(lines):
        tok = lines[3].split()
        tok[1 + 21 + 7 + 3] = "0.9"  # eef_right qw of frame 2
        lines[3] = " ".join(tok)

    with pytest.raises(ParseError) as info:
        load_demo(_write_with(tmp_path, bump))
    assert info.value.line == 4
    assert "frame 2" in str(info.value) and "eef_right" in str(info.value)


def test_wrong_field_count(tmp_path):
    def chop(lines):
        lines[2] = " ".join(lines[2].split()[:-3])

    with pytest.raises(ParseError) as info:
        load_demo(_write_with(tmp_path, chop))
    assert info.value.line == 3


def test_non_numeric_field(tmp_path):
    def junk(lines):
        tok = lines[1].split()
        tok[5] = "abc"
        lines[1] = " ".join(tok)

    with pytest.raises(ParseError, match="line 2"):
        load_demo(_write_with(tmp_path, junk))


def test_version_mismatch(tmp_path):
    def v2(lines):
        lines[0] = lines[0].replace(" v1 ", " v2 ")

    with pytest.raises(SchemaError):
        load_demo(_write_with(tmp_path, v2))


def test_missing_header(tmp_path):
    with pytest.raises(ParseError, match="line 1"):
        load_demo(_write_with(tmp_path, lambda lines: lines.pop(0)))


def test_too_few_frames(tmp_path):
    def one(lines):
        del lines[2:]

    with pytest.raises(ParseError):
        load_demo(_write_with(tmp_path, one))


# --- contact detection ---


def test_explicit_flag_wins():
    flags = [0] * 6 + [1] * 14
    assert detect_contact_time(approach_demo(flags=flags, start=0.0), eps_contact=0.05) == 7


def test_distance_detection_matches_linear_scan():
    demo = approach_demo(n=40, start=0.6)
    # oracle: scan every frame for the first one under eps
    dists = [
        min(np.linalg.norm(f.eef(a).translation - f.obj.translation) for a in ARMS) for f in demo.frames
    ]
    expected = next(k + 1 for k, d in enumerate(dists) if d < 0.05)
    assert detect_contact_time(demo, 0.05) == expected
    assert 1 < expected < 40


def test_no_contact():
    demo = approach_demo(n=10, start=1.0)
    frames = tuple(
        DemoFrame(f.t, f.q_robot, f.eef_left, Pose(f.eef_right.translation - [0.5, 0, 0], f.eef_right.rotation),
                  f.obj, 1.0, 1.0)
        for f in demo.frames
    )
    with pytest.raises(NoContact):
        detect_contact_time(DemoTrajectory(frames, "PressCube", 50.0))


def test_all_zero_flags_means_no_contact():
    with pytest.raises(NoContact):
        detect_contact_time(approach_demo(flags=[0] * 20, start=0.0))


# --- relative split ---


def test_relative_trivial_entries():
    obj = Pose.from_xyz_rpy(0.1, -0.2, 0.8, yaw=0.3)
    demo = approach_demo(obj=obj, start=0.0)
    rel = to_relative(demo, 5)
    assert pose_distance(rel.pre["right"][0], Pose.identity()).within(1e-12, 1e-9)
    for arm in ARMS:
        assert pose_distance(rel.post[arm][0], Pose.identity()).within(1e-12, 1e-9)


def test_base_in_object_frame():
    demo = approach_demo()
    rel = to_relative(demo, 10)
    base = Pose.from_planar(*demo.frames[0].base)
    assert pose_distance(compose(rel.demo_base_in_obj, demo.frames[0].obj), base).within(1e-12, 1e-9)


def test_t_c_out_of_range():
    demo = approach_demo()
    for bad in (0, len(demo) + 1):
        with pytest.raises(ValueError):
            to_relative(demo, bad)


@pytest.mark.parametrize("task", task_names())
def test_reconstruction_of_scripted_demos(task, demo_for):
    demo = demo_for(task)
    assert_reconstructs(demo, detect_contact_time(demo))


@st.composite
def random_demos(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(2, 12))
    rng = np.random.default_rng(seed)
    obj = random_pose(rng)
    frames = tuple(
        DemoFrame(k, Q_ROBOT.copy(), random_pose(rng), random_pose(rng), obj, 1.0, 0.0) for k in range(n)
    )
    return DemoTrajectory(frames, "X", 50.0), draw(st.integers(1, n))


@settings(max_examples=100, deadline=None)
@given(random_demos())
def test_reconstruction_property(case):
    demo, t_c = case
    assert_reconstructs(demo, t_c)


def test_relative_json_round_trip(tmp_path, demo_for):
    demo = demo_for("GraspCube")
    rel = to_relative(demo, detect_contact_time(demo))
    save_relative(rel, tmp_path / "r.json", extra={"note": 1})
    back = load_relative(tmp_path / "r.json")
    assert back.t_c == rel.t_c and back.task == rel.task
    for arm in ARMS:
        for a, b in zip(rel.pre[arm] + rel.post[arm], back.pre[arm] + back.post[arm]):
            np.testing.assert_array_equal(a.to_array(), b.to_array())
    np.testing.assert_array_equal(back.grips, rel.grips)


def test_relative_json_schema(tmp_path):
    (tmp_path / "r.json").write_text('{"schema": "other"}')
    with pytest.raises(SchemaError):
        load_relative(tmp_path / "r.json")


# --- diagnostics ---


def test_clean_demo_has_empty_report(demo_for, model):
    assert validate_demo(demo_for("LiftBox"), model) == []


def test_jump_is_reported(model):
    demo = approach_demo()
    frames = list(demo.frames)
    f = frames[10]
    frames[10] = DemoFrame(f.t, f.q_robot, Pose(f.eef_left.translation + [1.0, 0, 0], f.eef_left.rotation),
                           f.eef_right, f.obj, 1.0, 1.0)
    kinds = {(d.kind, d.frame) for d in validate_demo(DemoTrajectory(tuple(frames), "X", 50.0), model)}
    assert ("discontinuity", 10) in kinds and ("discontinuity", 11) in kinds


def test_missing_object_and_gap_reported(model):
    demo = approach_demo(n=5)
    frames = list(demo.frames)
    f = frames[2]
    frames[2] = DemoFrame(f.t, f.q_robot, f.eef_left, f.eef_right, None, 1.0, 1.0)
    f = frames[4]
    frames[4] = DemoFrame(7, f.q_robot, f.eef_left, f.eef_right, f.obj, 1.0, 1.0)
    kinds = {d.kind for d in validate_demo(DemoTrajectory(tuple(frames), "X", 50.0), model)}
    assert {"schema", "rate"} <= kinds


def test_limit_violation_reported(model):
    demo = approach_demo(n=3, start=0.1)
    q = Q_ROBOT.copy()
    q[7] = 10.0
    f = demo.frames[1]
    frames = (demo.frames[0], DemoFrame(f.t, q, f.eef_left, f.eef_right, f.obj, 1.0, 1.0), demo.frames[2])
    diag = validate_demo(DemoTrajectory(frames, "X", 50.0), model)
    assert [d.kind for d in diag] == ["limits"]
    assert "[limits] frame 1" in str(diag[0])


def test_rate_must_be_positive():
    with pytest.raises(SchemaError):
        approach_demo(rate=0.0)
