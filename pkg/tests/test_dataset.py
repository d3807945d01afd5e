import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demohlm.dataset import (
    MANIFEST,
    ChecksumMismatch,
    SchemaError,
    TrajectoryRecord,
    append_trajectory,
    decode_trajectory,
    encode_trajectory,
    export_trend_csv,
    init_dataset,
    read_all,
    read_manifest,
    stats,
    stats_csv,
    verify,
)


def make_traj(seed=0, n=6, success=True, reason="", bounds=None):
    bounds = bounds or (min(1, n), min(3, n))
    rng = np.random.default_rng(seed)
    return TrajectoryRecord(
        task="PushCart",
        region="R1",
        seed=seed,
        success=success,
        failure_reason=reason,
        obs=rng.normal(size=(n, 41)),
        actions=rng.normal(size=(n, 21)),
        steps=np.arange(n, dtype=np.int64) * 5,
        stage_bounds=bounds,
    )


def same(a: TrajectoryRecord, b: TrajectoryRecord) -> bool:
    return encode_trajectory(a) == encode_trajectory(b)


@pytest.fixture
def ds(tmp_path):
    d = tmp_path / "ds"
    init_dataset(d, {"command": "test"})
    return d


def test_append_to_empty(ds):
    assert read_manifest(ds).count == 0
    m = append_trajectory(ds, make_traj())
    assert m.count == 1 and m.successes == 1
    assert read_manifest(ds).config == {"command": "test"}


def test_append_100_read_all_in_order(ds):
    trajs = [make_traj(seed=i, n=3 + i % 5) for i in range(100)]
    for t in trajs:
        append_trajectory(ds, t)
    back = list(read_all(ds))
    assert len(back) == 100
    assert all(same(a, b) for a, b in zip(trajs, back))


def test_success_filter(ds):
    for i, ok in enumerate([1, 0, 1, 0, 1]):
        append_trajectory(ds, make_traj(i) if ok else make_traj(i, success=False, reason="PredicateFalse"))
    assert len(list(read_all(ds))) == 3
    everything = list(read_all(ds, success_only=False))
    assert [t.success for t in everything] == [True, False, True, False, True]
    assert everything[1].failure_reason == "PredicateFalse" and len(everything[1]) == 0
    # failures are tallied only
    assert len(list(ds.glob("traj_*.bin"))) == 3


def test_empty_dataset(ds):
    assert list(read_all(ds)) == []
    s = stats(ds)
    assert s.count == 0 and s.success_rate is None and s.rate_text() == "n/a"
    assert "success_rate,n/a" in stats_csv(s)


def test_reread_is_identical(ds):
    append_trajectory(ds, make_traj(3))
    a, b = list(read_all(ds)), list(read_all(ds))
    assert same(a[0], b[0])


def test_leftover_temp_file_is_ignored(ds):
    append_trajectory(ds, make_traj(1))
    (ds / (MANIFEST + ".tmp")).write_text("half-written garbage")
    (ds / "traj_000001.bin.tmp").write_bytes(b"\x00" * 10)
    assert read_manifest(ds).count == 1
    assert verify(ds) == []
    append_trajectory(ds, make_traj(2))
    assert len(list(read_all(ds))) == 2


def test_init_refuses_existing(ds):
    with pytest.raises(FileExistsError):
        init_dataset(ds)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 12))
def test_encode_round_trip_is_byte_preserving(seed, n):
    t = make_traj(seed, n=n, bounds=(0, n))
    blob = encode_trajectory(t)
    back = decode_trajectory(blob)
    assert encode_trajectory(back) == blob
    assert back.obs.tobytes() == t.obs.tobytes() and back.actions.tobytes() == t.actions.tobytes()


def test_special_floats_survive(ds):
    t = make_traj(0, n=2)
    t.obs[0, :3] = [-0.0, 5e-324, 1.7976931348623157e308]
    append_trajectory(ds, t)
    back = next(read_all(ds))
    assert back.obs.tobytes() == t.obs.tobytes()


def test_every_single_byte_corruption_of_a_payload_is_caught(ds):
    append_trajectory(ds, make_traj(0, n=2))
    path = ds / "traj_000000.bin"
    good = path.read_bytes()
    for i in range(len(good)):
        bad = bytearray(good)
        bad[i] ^= 0x01
        path.write_bytes(bytes(bad))
        assert verify(ds), f"flip at byte {i} not detected"
        with pytest.raises(ChecksumMismatch):
            list(read_all(ds))
    path.write_bytes(good)
    assert verify(ds) == []


@pytest.mark.parametrize("mask", [0x01, 0x80])
def test_every_single_byte_corruption_of_the_manifest_is_caught(ds, mask):
    append_trajectory(ds, make_traj(0, n=2))
    append_trajectory(ds, make_traj(1, success=False, reason="IkNotConverged"))
    path = ds / MANIFEST
    good = path.read_bytes()
    for i in range(len(good)):
        bad = bytearray(good)
        bad[i] ^= mask
        path.write_bytes(bytes(bad))
        with pytest.raises((ChecksumMismatch, SchemaError)):
            read_manifest(ds)
        assert verify(ds)
    path.write_bytes(good)
    assert read_manifest(ds).count == 2


def test_bad_magic_and_length():
    blob = encode_trajectory(make_traj())
    with pytest.raises(SchemaError):
        decode_trajectory(b"XXXXXXXX" + blob[8:])
    with pytest.raises(SchemaError):
        decode_trajectory(blob[:-1])
    with pytest.raises(SchemaError):
        decode_trajectory(blob + b"\x00")


def test_manifest_version_mismatch(ds):
    path = ds / MANIFEST
    path.write_text(path.read_text().replace("demohlm-dataset\t1", "demohlm-dataset\t2"))
    with pytest.raises(SchemaError):
        read_manifest(ds)


def test_record_invariants():
    with pytest.raises(ValueError):
        make_traj(success=True, reason="PredicateFalse")
    with pytest.raises(ValueError):
        make_traj(success=False, reason="Gremlins")
    with pytest.raises(ValueError):
        make_traj(n=4, bounds=(3, 2))
    with pytest.raises(ValueError):
        make_traj(n=4, bounds=(0, 5))


def test_transitions_view():
    t = make_traj(n=3)
    tr = t.transitions
    assert [x.step for x in tr] == [0, 5, 10]
    np.testing.assert_array_equal(tr[1].obs, t.obs[1])
    assert t.stage_lengths() == (1, 2, 0)


def test_stats_counts(ds):
    for i in range(10):
        t = make_traj(i, n=2 + i) if i < 8 else make_traj(i, success=False, reason="LocomotionTimeout")
        append_trajectory(ds, t)
    s = stats(ds)
    assert s.count == 10 and s.successes == 8 and s.success_rate == 0.8
    assert s.failures["LocomotionTimeout"] == 2
    assert sum(c for _, _, c in s.length_hist) == 8
    assert stats(ds) == s
    rows = dict(csv.reader(io.StringIO(stats_csv(s))))
    assert rows["success_rate"] == "0.8000" and rows["count"] == "10"


def test_stats_single_length(ds):
    for i in range(3):
        append_trajectory(ds, make_traj(i, n=4))
    assert sum(c for _, _, c in stats(ds).length_hist) == 3


def read_csv(path):
    return list(csv.reader(path.open()))


def test_trend_csv_sorted(tmp_path):
    p = tmp_path / "t.csv"
    export_trend_csv([(500, 0.7), (100, 0.5)], p)
    assert read_csv(p) == [["dataset_size", "success_rate"], ["100", "0.5"], ["500", "0.7"]]


def test_trend_csv_duplicates_stable(tmp_path):
    p = tmp_path / "t.csv"
    export_trend_csv([(200, 0.3), (100, 0.1), (200, 0.2)], p)
    assert read_csv(p)[1:] == [["100", "0.1"], ["200", "0.3"], ["200", "0.2"]]


def test_trend_csv_requires_rows(tmp_path):
    with pytest.raises(ValueError):
        export_trend_csv([], tmp_path / "t.csv")
