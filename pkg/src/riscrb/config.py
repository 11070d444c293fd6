"""TOML experiment files.

Three tables are read: ``[scene]`` (``SceneConfig`` field names, plus the
conveniences ``plate_len_y``/``plate_len_x`` in metres and ``sigma2_dbw``),
``[optimizer]`` (``OptimizerConfig`` fields) and ``[experiment]``
(``ExperimentSpec`` fields).  Unknown keys are errors.

Example::

    [scene]
    agent_position = [0.0, 0.0, 20.0]
    plate_len_y = 0.8
    plate_len_x = 0.8
    sigma2_dbw = -124.0
    emi_flux_dbw_per_m2 = -70.0

    [optimizer]
    memory_depth = 5

    [experiment]
    kind = "sweep_distance"
    sweep_values = [10, 15, 20, 25, 30]
"""

from __future__ import annotations

import dataclasses
import sys

from .errors import ConfigError
from .optimizer import OptimizerConfig
from .scene import SceneConfig, db_to_linear

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCENE_EXTRAS = ("plate_len_y", "plate_len_x", "sigma2_dbw")
TUPLE_FIELDS = ("anchor_positions", "agent_position", "sigma2")


def _field_names(cls):
    return {f.name for f in dataclasses.fields(cls)}


def _check_keys(table, allowed, section):
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(unknown)}")


def scene_from_table(table):
    table = dict(table)
    _check_keys(table, _field_names(SceneConfig) | set(SCENE_EXTRAS), "scene")
    if "sigma2_dbw" in table:
        if "sigma2" in table:
            raise ConfigError("[scene] give sigma2 or sigma2_dbw, not both")
        table["sigma2"] = tuple(float(s) for s in db_to_linear(table.pop("sigma2_dbw")).ravel())
    plate_y = table.pop("plate_len_y", None)
    plate_x = table.pop("plate_len_x", None)
    for key in TUPLE_FIELDS:
        if key in table and isinstance(table[key], list):
            val = table[key]
            table[key] = tuple(tuple(v) if isinstance(v, list) else v for v in val)
    try:
        cfg = SceneConfig(**table)
    except TypeError as exc:
        raise ConfigError(f"[scene] {exc}") from None
    if plate_y is not None or plate_x is not None:
        if plate_y is None or plate_x is None:
            raise ConfigError("[scene] plate_len_y and plate_len_x go together")
        cfg = cfg.with_plate(plate_y, plate_x)
    return cfg


def optimizer_from_table(table):
    _check_keys(table, _field_names(OptimizerConfig), "optimizer")
    return OptimizerConfig(**table)


def load_config(path):
    """Parse ``path`` into a dict with keys ``scene``, ``optimizer``, ``experiment``.

    Missing tables yield defaults; ``experiment`` stays a plain dict so the
    caller can merge command-line overrides before building the spec.
    """
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    _check_keys(data, ("scene", "optimizer", "experiment"), "top level")
    out = {
        "scene": scene_from_table(data["scene"]) if "scene" in data else None,
        "optimizer": optimizer_from_table(data.get("optimizer", {})),
        "experiment": dict(data.get("experiment", {})),
    }
    return out
