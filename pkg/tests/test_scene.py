import numpy as np
import pytest
from hypothesis import given, strategies as st

from uwbsense.config import AnchorPose, ConfigError, SceneConfig, parse_kv
from uwbsense.scene import (MOVING_SPEED, Activity, OutOfRangeError, Trajectory, build_scene,
                            ground_truth_at, read_truth, sample_trajectory, write_truth)


def test_default_scene_has_twelve_links(scene):
    assert len(scene.anchors) == 4
    links = scene.links()
    assert len(links) == 12
    assert len(set(links)) == 12
    assert all(tx != rx for tx, rx in links)


def test_single_anchor_rejected():
    with pytest.raises(ConfigError):
        build_scene(SceneConfig(anchors=(AnchorPose(0, 1.0, 1.0),)))


@pytest.mark.parametrize("x, y", [(0.0, 1.0), (6.0, 1.0), (1.0, -0.1), (7.0, 7.0)])
def test_anchor_outside_room_rejected(x, y):
    anchors = (AnchorPose(0, 1.0, 1.0), AnchorPose(1, x, y))
    with pytest.raises(ConfigError):
        build_scene(SceneConfig(anchors=anchors))


def test_duplicate_anchor_ids_rejected():
    anchors = (AnchorPose(0, 1.0, 1.0), AnchorPose(0, 2.0, 2.0))
    with pytest.raises(ConfigError):
        build_scene(SceneConfig(anchors=anchors))


def test_reflectivity_range():
    with pytest.raises(ConfigError):
        build_scene(SceneConfig(wall_reflectivity=1.5))


def test_build_scene_deterministic():
    assert build_scene(SceneConfig()) == build_scene(SceneConfig())


def test_scene_config_from_text():
    kv = parse_kv("""
        room_width = 5   # metres
        room_length = 4.5
        anchor.0.x = 0.5
        anchor.0.y = 0.5
        anchor.1.x = 4.5
        anchor.1.y = 4.0
        anchor.1.id = 7
    """)
    sc = build_scene(SceneConfig.from_kv(kv))
    assert sc.room_width == 5.0 and sc.room_length == 4.5
    assert sc.anchor_ids == [0, 7]
    assert SceneConfig.from_kv({k: str(v) for k, v in SceneConfig().to_kv().items()}) == SceneConfig()


def test_moving_trajectory_invariants(scene):
    (tr,) = sample_trajectory(scene, 60.0, "moving", 1, seed=7)
    assert len(tr) == 601
    assert np.all(np.diff(tr.times) > 0)
    assert np.allclose(np.diff(tr.times), tr.sample_period)
    x, y = tr.positions.T
    assert scene.contains(x, y)
    speed = np.hypot(*tr.velocities.T)
    lo, hi = MOVING_SPEED
    assert speed.min() >= lo - 1e-9 and speed.max() <= hi + 1e-9
    # consecutive positions agree with the velocity model
    pred = tr.positions[:-1] + tr.velocities[:-1] * tr.sample_period
    assert np.abs(pred - tr.positions[1:]).max() < 1e-6


@pytest.mark.parametrize("activity", ["standing", "sitting"])
def test_stationary_trajectory(scene, activity):
    (tr,) = sample_trajectory(scene, 60.0, activity, 1, seed=7)
    disp = np.hypot(*(tr.positions - tr.positions[0]).T)
    assert disp.max() < 0.05
    assert np.hypot(*tr.velocities.T).max() <= 0.05
    jitter = tr.positions - tr.positions.mean(axis=0)
    assert np.sqrt((jitter**2).sum(axis=1).mean()) <= 0.01


def test_sitting_rcs_reduced(scene):
    (stand,) = sample_trajectory(scene, 1.0, "standing", 1, seed=1)
    (sit,) = sample_trajectory(scene, 1.0, "sitting", 1, seed=1)
    assert sit.rcs == pytest.approx(stand.rcs * scene.sitting_rcs_factor)


def test_four_people_distinct_paths(scene):
    trs = sample_trajectory(scene, 10.0, "moving", 4, seed=3)
    assert len(trs) == 4
    for i in range(4):
        for j in range(i + 1, 4):
            assert np.abs(trs[i].positions - trs[j].positions).max() > 0


@pytest.mark.parametrize("count", [0, 5])
def test_count_out_of_range(scene, count):
    with pytest.raises(ValueError):
        sample_trajectory(scene, 10.0, "moving", count, seed=0)


def test_zero_duration_rejected(scene):
    with pytest.raises(ValueError):
        sample_trajectory(scene, 0.0, "moving")


def test_trajectories_deterministic(scene):
    a = sample_trajectory(scene, 20.0, "moving", 2, seed=11)
    b = sample_trajectory(scene, 20.0, "moving", 2, seed=11)
    for ta, tb in zip(a, b):
        assert ta.positions.tobytes() == tb.positions.tobytes()


@given(st.integers(0, 2**32 - 1), st.sampled_from(list(Activity)))
def test_containment_and_speed_separation(seed, activity):
    scene = build_scene(SceneConfig())
    (tr,) = sample_trajectory(scene, 20.0, activity, 1, seed=seed)
    assert scene.contains(*tr.positions.T)
    mean_speed = np.hypot(*tr.velocities.T).mean()
    if activity == Activity.MOVING:
        assert mean_speed > 0.3
    else:
        assert mean_speed < 0.3


def _two_sample_trajectory():
    return Trajectory(0, np.array([0.0, 0.1]), np.array([[1.0, 1.0], [1.1, 1.0]]),
                      np.array([[1.0, 0.0], [1.0, 0.0]]), Activity.MOVING, 0.4)


@pytest.mark.parametrize("t, expect", [(0.04, 0.0), (0.05, 0.0), (0.0, 0.0), (0.1, 0.1), (0.06, 0.1)])
def test_ground_truth_nearest(t, expect):
    tr = _two_sample_trajectory()
    (state,) = ground_truth_at([tr], t)
    k = int(round(expect / 0.1))
    assert state.position == tuple(tr.positions[k])


@pytest.mark.parametrize("t", [-0.2, 0.25])
def test_ground_truth_out_of_range(t):
    with pytest.raises(OutOfRangeError):
        ground_truth_at([_two_sample_trajectory()], t)


def test_truth_file_round_trip(scene, tmp_path):
    trs = sample_trajectory(scene, 5.0, "sitting", 3, seed=5)
    write_truth(tmp_path / "truth.csv", trs)
    back = read_truth(tmp_path / "truth.csv")
    assert len(back) == 3
    for a, b in zip(trs, back):
        assert a.person_id == b.person_id and a.activity == b.activity and a.rcs == b.rcs
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.velocities, b.velocities)
