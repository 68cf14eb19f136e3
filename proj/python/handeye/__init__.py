"""Modular hand-eye reaching stack: Python driver for the C++ pipeline.

The heavy lifting lives in the compiled extension ``handeye._core``; this
package re-exports its surface. Typical use::

    import handeye

    cfg = handeye.default_config()
    cfg = cfg.replace("out = runs/default", "out = /tmp/demo")
    handeye.gen_data(cfg)
    handeye.train_perception(cfg)
    handeye.train_control(cfg)
    handeye.train_finetune(cfg)
    rows = handeye.evaluate(cfg)
"""

from ._core import (
    DataError,
    DivergenceError,
    UsageError,
    checkpoint_param_count,
    config_hash,
    dataset_info,
    default_config,
    evaluate,
    gen_data,
    px_per_cm,
    q_values,
    round_trip_config,
    train_control,
    train_finetune,
    train_perception,
    write_manifest,
)

__all__ = [
    "DataError",
    "DivergenceError",
    "UsageError",
    "checkpoint_param_count",
    "config_hash",
    "dataset_info",
    "default_config",
    "evaluate",
    "gen_data",
    "px_per_cm",
    "q_values",
    "round_trip_config",
    "train_control",
    "train_finetune",
    "train_perception",
    "write_manifest",
]
