import numpy as np
import pytest

from alan.simworld import Env, scene_for_task
from alan.trajectory import Trajectory, label_trajectory


def random_trajectory(task="door", seed=0, length=20, actions=None, label=True, **meta):
    env = Env(scene_for_task(task), task)
    rng = np.random.default_rng([seed, 99])
    obs = [env.reset(seed)]
    acts = []
    success = env.success(task)
    for t in range(length):
        a = rng.uniform(-1, 1, 4) if actions is None else np.asarray(actions[t], dtype=float)
        acts.append(a)
        obs.append(env.step(a))
        success = success or env.success(task)
    traj = Trajectory.from_observations(obs[:length], np.array(acts), seed=seed, region_id=task, success=success, **meta)
    return label_trajectory(traj, seed=seed) if label else traj


@pytest.fixture(scope="session")
def small_dataset():
    """Four labelled random door trajectories, the same for every test."""
    return [random_trajectory("door", s) for s in range(4)]


def max_grad_error(loss_fn, params, rng, masks=None):
    """Largest relative error between analytic and five-point numeric
    directional derivatives, one random direction per parameter tensor."""
    from alan.autodiff import directional_check, relative_error

    worst = 0.0
    for i, p in enumerate(params):
        mask = None if masks is None else masks[i]
        analytic, numeric = directional_check(loss_fn, p, rng, mask=mask)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def tiny_run_config(method="alan", task="door", seed=0, **explorer):
    """A run config small enough for a few-second end-to-end run."""
    from alan import config

    ex = dict(bootstrap=2, budget=5, episodes_per_cycle=5, wm_steps=2, ensemble_steps=2, awr_steps=2)
    ex.update(explorer)
    return config.default().for_run(method, task, seed).with_overrides(
        model=dict(embed_dim=8, hidden=8, head_hidden=8, deter=8, stoch=8),
        ensemble=dict(hidden=8, batch_size=8),
        awr=dict(hidden=8),
        planner=dict(population=20, iterations=1),
        explorer=ex,
    )


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Keep one line per acceptance criterion for the terminal summary."""
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


def scripted_actions(task, seed, length=20):
    """A hand-written controller that solves ``task`` from ``reset(seed)``:
    walk to the handle and sweep it round the hinge (door), or walk to the
    grasp point, close the gripper and lift (knife)."""
    from alan import simworld as sw

    scene = scene_for_task(task)
    obj = scene.get(task)
    s = sw.reset(scene, task, seed)
    acts = []
    for _ in range(length):
        if task == "door":
            hx, hy = sw.handle_position(obj, s.articulations["door"])
            if np.hypot(hx - s.x, hy - s.y) > 0.02 and s.articulations["door"] == 0.0:
                a = np.clip(np.array([hx - s.x, hy - s.y]) / scene.arm.move_scale, -1, 1)
            else:
                lever = np.array([hx, hy]) - np.array(obj.hinge)
                a = np.array([-lever[1], lever[0]]) / np.linalg.norm(lever)
            a = np.array([a[0], a[1], 0.0, 0.0])
        elif task == "knife":
            gx, gy = obj.grasp_point
            if s.held() == task:
                a = np.array([0.0, 1.0, 0.0, 1.0])
            elif np.hypot(gx - s.x, gy - s.y) > 0.01:
                d = np.clip(np.array([gx - s.x, gy - s.y]) / scene.arm.move_scale, -1, 1)
                a = np.array([d[0], d[1], 0.0, 0.0])
            else:
                a = np.array([0.0, 0.0, 0.0, 1.0])
        else:
            raise ValueError(f"no scripted controller for {task!r}")
        acts.append(a)
        s = sw.step(scene, s, a)
    return acts
