"""Scenario config loading and resolution tests."""

import json
import os

import pytest
import yaml

from src.cisslab.errors import ConfigurationError
from src.cisslab.scenario_config import (
    PRESETS,
    apply_overrides,
    load_scenario,
    preset,
    read_config_file,
    save_scenario,
    validate_config,
)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate(name):
    cfg = validate_config(preset(name))
    schedule = cfg.resolved().schedule
    assert schedule.num_tasks == cfg.schedule.num_steps + 1
    assert len(schedule.new_classes(1)) == cfg.schedule.base


def test_s16_shape():
    schedule = load_scenario(preset_name="s16").resolved().schedule
    assert [len(schedule.new_classes(t)) for t in range(1, 6)] == [8, 2, 2, 2, 2]


def test_unknown_preset():
    with pytest.raises(ConfigurationError, match="Unknown preset"):
        preset("s99")


def test_preset_copies_are_independent():
    preset("s8")["schedule"]["base"] = 1
    assert PRESETS["s8"]["schedule"]["base"] == 4


def test_overrides_parse_scalars():
    data = apply_overrides({"train": {"n_epochs": 2}}, ["train.n_epochs=5", "augment.tau=0.3", "method=ssul_m"])
    assert data == {"train": {"n_epochs": 5}, "augment": {"tau": 0.3}, "method": "ssul_m"}


@pytest.mark.parametrize("bad", ["novalue", "=3", "name.inner=1"])
def test_bad_override(bad):
    with pytest.raises(ConfigurationError):
        apply_overrides({"name": "x"}, [bad])


def test_unknown_field_rejected():
    with pytest.raises(ConfigurationError, match="Invalid scenario config"):
        load_scenario(preset_name="s8", overrides=["train.epochs=3"])


def test_out_of_range_tau():
    with pytest.raises(ConfigurationError):
        load_scenario(overrides=["augment.tau=1.5"])


def test_odd_batch_with_memory():
    with pytest.raises(ConfigurationError, match="even"):
        load_scenario(overrides=["method=ssul_m", "train.batch_size=3"])
    assert load_scenario(overrides=["method=ssul", "train.batch_size=3"]).train.batch_size == 3


def test_object_count_order():
    with pytest.raises(ConfigurationError):
        load_scenario(overrides=["data.min_objects=3", "data.max_objects=2"])


def test_missing_file(tmp_path):
    path = str(tmp_path / "absent.yaml")
    with pytest.raises(ConfigurationError, match="Config file not found"):
        read_config_file(path)


def test_yaml_and_json_files(tmp_path):
    data = preset("s8")
    data["augment"] = {"tau": 0.5}
    (tmp_path / "a.yaml").write_text(yaml.safe_dump(data))
    (tmp_path / "a.json").write_text(json.dumps(data))
    a = load_scenario(str(tmp_path / "a.yaml"))
    b = load_scenario(str(tmp_path / "a.json"))
    assert a == b
    assert a.augment.tau == 0.5


def test_unparseable_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigurationError, match="Cannot parse"):
        read_config_file(str(path))


def test_non_mapping_file(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigurationError, match="mapping"):
        read_config_file(str(path))


@pytest.mark.parametrize("suffix", ["yaml", "json"])
def test_save_and_reload(tmp_path, suffix):
    cfg = load_scenario(preset_name="s16", overrides=["seed=3"])
    path = save_scenario(cfg, str(tmp_path / f"cfg.{suffix}"))
    assert load_scenario(path) == cfg


def test_derived_seeds_are_distinct_and_explicit_wins():
    cfg = load_scenario()
    seeds = {tag: cfg.derived_seed(tag) for tag in ("dataset", "eval", "train", "memory", "extractor")}
    assert len(set(seeds.values())) == 5
    assert load_scenario(overrides=["data.dataset_seed=42"]).derived_seed("dataset") == 42
    assert load_scenario(overrides=["seed=1"]).derived_seed("train") != seeds["train"]


def test_ablation_toggles():
    resolved = load_scenario(
        overrides=["ablation.no_freeze=true", "ablation.softmax_ce=true", "ablation.head_init=from_cb"]
    ).resolved()
    assert resolved.train.freeze is False
    assert resolved.train.loss_kind == "softmax_ce"
    assert resolved.train.head_init == "from_cb"


def test_no_unknown_drops_weight_transfer():
    resolved = load_scenario(overrides=["ablation.no_unknown=true"]).resolved()
    assert resolved.augment.use_unknown is False
    assert resolved.train.head_init == "random"


def test_memory_only_for_ssul_m():
    assert load_scenario(overrides=["method=ssul"]).resolved().memory_capacity == 0
    assert load_scenario(overrides=["method=ssul_m"]).resolved().memory_capacity == 16
    assert load_scenario(overrides=["method=ssul_m", "memory.capacity=0"]).uses_memory is False


def test_joint_method_collapses_schedule():
    resolved = load_scenario(overrides=["method=joint"]).resolved()
    assert resolved.schedule.num_tasks == 1
    assert len(resolved.schedule.new_classes(1)) == 8


def test_single_task_schedule():
    resolved = load_scenario(overrides=["schedule.num_steps=0"]).resolved()
    assert resolved.schedule.num_tasks == 1
    assert len(resolved.schedule.new_classes(1)) == 4


def test_fingerprint_ignores_output_dir():
    a = load_scenario(overrides=["output_dir=/tmp/a"])
    b = load_scenario(overrides=["output_dir=/tmp/b"])
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != load_scenario(overrides=["seed=9"]).fingerprint()


@pytest.mark.parametrize("name", ["s8_memory.yaml", "s16_disjoint.json"])
def test_shipped_scenarios_validate(name):
    path = os.path.join(os.path.dirname(__file__), os.pardir, "scenarios", name)
    cfg = load_scenario(path)
    assert cfg.resolved().schedule.num_tasks == cfg.schedule.num_steps + 1
