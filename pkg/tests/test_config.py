import json

import pytest

from alan import config
from alan import simworld as sw
from alan.explorer import run
from alan.simworld import ConfigError

from conftest import tiny_run_config


def test_default_roundtrips_through_json():
    cfg = config.default()
    assert config.from_json(cfg.to_json()) == cfg
    assert config.from_json(cfg.to_json()).digest() == cfg.digest()


def test_toml_load(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text('[explorer]\nmethod = "ec"\nbudget = 10\n\n[benchmark]\nseeds = [7, 8]\n')
    cfg = config.load(p)
    assert cfg.explorer.method == "ec" and cfg.explorer.budget == 10
    assert cfg.benchmark.seeds == (7, 8)
    assert cfg.model == config.default().model


@pytest.mark.parametrize(
    "text",
    ["[explorer]\nbudgett = 3\n", "[explorerr]\n", '[explorer]\nmethod = "dqn"\n', '[explorer]\ntask = "sink"\n',
     "[explorer]\nbudget = -1\n", "explorer = 3\n", "[explorer\n"],
)
def test_bad_configs_raise(tmp_path, text):
    p = tmp_path / "bad.toml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        config.load(p)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        config.load(tmp_path / "nope.toml")


def test_overrides_change_digest():
    cfg = config.default()
    other = cfg.for_run(seed=3)
    assert other.explorer.seed == 3 and other.digest() != cfg.digest()
    assert cfg.for_run() is cfg


def test_builtin_scene_used_without_file():
    assert config.SceneSection(seed=2).build("knife") == sw.kitchen1(2)


def test_scene_file_must_contain_task(tmp_path):
    p = tmp_path / "k1.toml"
    p.write_text(sw.dump_scene(sw.kitchen1()))
    with pytest.raises(ConfigError):
        config.SceneSection(file=str(p)).build("fridge")


def test_explore_with_scene_file(tmp_path):
    # a one-object scene the built-in task table does not know about
    box = sw.ObjectSpec("box", "freestanding_item", ((0.4, 0.4), (0.55, 0.4), (0.55, 0.55), (0.4, 0.55)))
    p = tmp_path / "box.toml"
    p.write_text(sw.dump_scene(sw.SceneConfig(objects=(box,), name="box")))
    with pytest.raises(ConfigError):
        tiny_run_config("random", "box")
    cfg = tiny_run_config("random").with_overrides(scene={"file": str(p)}, explorer={"task": "box"})
    res = run(cfg, tmp_path / "out")
    assert res.summary["budget_episodes"] == 5
    stored = json.loads((tmp_path / "out" / "config.json").read_text())
    assert stored["scene"]["file"] == str(p.resolve())


def test_shipped_files_match_defaults():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "configs"
    assert config.load(root / "default.toml") == config.default()
    assert sw.load_scene(root / "scenes" / "kitchen1.toml") == sw.kitchen1()
    assert sw.load_scene(root / "scenes" / "kitchen2.toml") == sw.kitchen2()
