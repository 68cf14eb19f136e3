"""Smoke tests for the python bindings.

Skips cleanly when the extension has not been installed (`pip install -e .`),
so plain C++ builds still pass ctest.
"""

import pytest

handeye = pytest.importorskip("handeye")


def override_config(cfg: str, overrides: dict) -> str:
    """Rewrite `key = value` lines of an INI config per {(section, key): value}."""
    lines = []
    section = ""
    for line in cfg.splitlines():
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1]
        elif "=" in stripped and not stripped.startswith(("#", ";")):
            key = stripped.split("=")[0].strip()
            if (section, key) in overrides:
                line = f"{key} = {overrides[(section, key)]}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def test_default_config_round_trips():
    cfg = handeye.default_config()
    assert "[run]" in cfg and "seed" in cfg
    assert handeye.round_trip_config(cfg) == cfg
    assert handeye.config_hash(cfg) == handeye.config_hash(cfg)
    # A change to any key must change the hash.
    bumped = override_config(cfg, {("finetune", "beta"): "0.75"})
    assert bumped != cfg
    assert handeye.config_hash(bumped) != handeye.config_hash(cfg)


def test_px_per_cm_constant():
    assert handeye.px_per_cm() == pytest.approx(0.42)


def test_bad_config_raises_usage_error():
    with pytest.raises(handeye.UsageError):
        handeye.round_trip_config("[run]\nbogus = 1\n")


def test_missing_dataset_raises_data_error(tmp_path):
    cfg = override_config(
        handeye.default_config(), {("run", "out"): f"{tmp_path}/nodata"}
    )
    with pytest.raises(handeye.DataError):
        handeye.train_perception(cfg)


def test_tiny_pipeline(tmp_path):
    cfg = override_config(
        handeye.default_config(),
        {
            ("run", "out"): f"{tmp_path}/run",
            ("dataset", "n_sim"): "6",
            ("dataset", "n_pseudo_real"): "40",
            ("control", "seeds"): "2",
            ("eval", "trials"): "3",
            ("perception", "steps"): "3",
            ("perception", "batch_size"): "8",
            ("control", "total_steps"): "400",
            ("control", "warmup"): "50",
            ("control", "batch_size"): "16",
            ("control", "target_sync"): "50",
            ("control", "eval_every"): "200",
            ("control", "eval_episodes"): "2",
            ("finetune", "steps"): "3",
            ("finetune", "task_batch"): "4",
            ("finetune", "perception_batch"): "16",
            ("finetune", "warmup"): "8",
            ("finetune", "replay_capacity"): "64",
        },
    )

    handeye.gen_data(cfg)
    info = handeye.dataset_info(f"{tmp_path}/run/dataset.bin")
    assert info["items"] == 46 and info["n_sim"] == 6

    pckpt = handeye.train_perception(cfg)
    assert handeye.checkpoint_param_count(pckpt) > 0
    cckpt = handeye.train_control(cfg)
    qs = handeye.q_values(cckpt, [0.5, 0.5, 0.5, 0.5, 0.5])
    assert len(qs) == 9

    handeye.train_finetune(cfg)
    rows = handeye.evaluate(cfg)
    assert [r["nets"] for r in rows] == ["Initial", "Fine-tuned", "CR"]
    for r in rows:
        assert r["n"] == 3
        assert 0.0 <= r["rbar"] <= 1.0
    handeye.write_manifest(cfg)
