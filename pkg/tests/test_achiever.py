import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alan import simworld as sw
from alan.achiever import (
    AchieveConfig,
    GoalSpec,
    achieve,
    feature,
    knn_retrieve,
    make_goal,
    refine,
    write_results,
)
from alan.simworld import Env

from conftest import random_trajectory, scripted_actions


def test_feature_basics():
    assert not feature(np.zeros((64, 64))).any()
    x = np.random.default_rng(0).random((64, 64))
    assert feature(x).shape == (64,)
    np.testing.assert_array_equal(feature(x), feature(x.copy()))
    assert feature(np.stack([x, x])).shape == (2, 64)
    with pytest.raises(ValueError):
        feature(np.zeros((60, 60)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.sampled_from([32, 64]))
def test_feature_lipschitz_bound(seed, n):
    # mean pooling k x k blocks: |mean(d)|^2 <= sum(d^2) / k^2 per block
    rng = np.random.default_rng(seed)
    x, y = rng.random((n, n)), rng.random((n, n))
    k = n // 8
    assert np.linalg.norm(feature(x) - feature(y)) <= np.linalg.norm(x - y) / k + 1e-12


def brute_force_ranking(replay, goal_image, k):
    """Double loop over trajectories and frames, pooling by hand."""
    g = goal_image.reshape(8, 8, 8, 8).mean(axis=(1, 3)).ravel()
    best = []
    for i, tr in enumerate(replay):
        dmin, jmin = np.inf, -1
        for j in range(len(tr)):
            img = tr.composites[j].astype(np.float64) / 255.0
            f = img.reshape(8, 8, 8, 8).mean(axis=(1, 3)).ravel()
            d = np.sqrt(((f - g) ** 2).sum())
            if d < dmin:
                dmin, jmin = d, j
        best.append((dmin, i, jmin))
    # smaller distance first, newer trajectory first on ties
    best.sort(key=lambda t: (t[0], -t[1]))
    return best[:k]


@pytest.fixture(scope="module")
def buffer30():
    return [random_trajectory("door", s, label=False) for s in range(30)]


def test_retrieval_matches_double_loop(buffer30):
    rng = np.random.default_rng(1)
    for _ in range(5):
        goal_img = buffer30[int(rng.integers(30))].composites[int(rng.integers(20))] / 255.0
        goal_img = np.clip(goal_img + rng.normal(0, 0.05, goal_img.shape), 0, 1)
        got = knn_retrieve(buffer30, GoalSpec(goal_img, "door"), 30)
        want = brute_force_ranking(buffer30, goal_img, 30)
        assert [(m.index, m.frame) for m in got] == [(i, j) for _, i, j in want]
        np.testing.assert_allclose([m.distance for m in got], [d for d, _, _ in want], rtol=1e-9, atol=1e-12)


def test_self_retrieval_and_k(buffer30):
    goal = GoalSpec(buffer30[12].composites[7] / 255.0, "door")
    top = knn_retrieve(buffer30, goal, 1)
    assert len(top) == 1
    assert top[0].index == 12 and top[0].distance == 0.0
    assert len(knn_retrieve(buffer30, goal, 99)) == 30
    with pytest.raises(ValueError):
        knn_retrieve([], goal, 1)


def test_ties_prefer_newer():
    tr = random_trajectory("door", 3, label=False)
    goal = GoalSpec(tr.composites[4] / 255.0, "door")
    assert [m.index for m in knn_retrieve([tr, tr, tr], goal, 3)] == [2, 1, 0]


@pytest.mark.parametrize("task,scene", [("door", sw.kitchen1()), ("knife", sw.kitchen1()), ("pan", sw.kitchen1()), ("pot", sw.kitchen2())])
def test_scripted_goals_satisfy_predicate(task, scene):
    goal = make_goal(scene, task)
    assert goal.goal_image.shape == (scene.raster_size,) * 2


def test_zero_iteration_replay_reproduces_success():
    tr = random_trajectory("door", 5, actions=scripted_actions("door", 5), label=False)
    assert tr.success
    env = Env(sw.kitchen1(), "door")
    best = int(np.argmin(np.linalg.norm(feature(tr.composites / 255.0) - feature(make_goal(env.scene, "door").goal_image), axis=1)))
    goal = GoalSpec(tr.composites[best] / 255.0, "door")
    others = [random_trajectory("door", s, label=False) for s in range(6)]
    res = achieve(env, others + [tr], None, goal, AchieveConfig(iterations=0))
    assert res.matches[0].index == 6
    assert all(r["success"] for r in res.rows if r["retrieved_rank"] == 1)
    assert res.success_rate >= 0.5


def test_success_rate_is_in_tenths(buffer30):
    env = Env(sw.kitchen1(), "door")
    res = achieve(env, buffer30[:5], None, make_goal(env.scene, "door"), AchieveConfig(iterations=0))
    assert len(res.rows) == 10
    assert round(res.success_rate * 10) == pytest.approx(res.success_rate * 10)
    assert [r["trial"] for r in res.rows] == list(range(10))
    assert [r["retrieved_rank"] for r in res.rows] == [1] * 5 + [2] * 5


def test_refine_without_model_or_iterations_is_identity():
    acts = np.random.default_rng(0).uniform(-1, 1, (6, 4))
    obs = Env(sw.kitchen1(), "door").reset(0)
    np.testing.assert_array_equal(refine(None, obs, acts, np.zeros(64), AchieveConfig(), 0), acts)


def test_results_csv(tmp_path):
    rows = [{"task_id": "door", "trial": 0, "retrieved_rank": 1, "success": 1}]
    write_results(tmp_path / "a.csv", rows)
    with open(tmp_path / "a.csv", newline="") as fh:
        assert list(csv.DictReader(fh)) == [{"task_id": "door", "trial": "0", "retrieved_rank": "1", "success": "1"}]


def test_goal_spec_validation():
    with pytest.raises(ValueError):
        GoalSpec(np.zeros((10, 12)), "door")
