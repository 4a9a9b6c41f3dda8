"""Scenario config files.

INI-style text read with :mod:`configparser`::

    [scenario]
    name = restricted_x1
    n_source = 1000
    models = cart, da-cart:ew1, da-cart:tw, target-cart

Overrides use dotted keys, e.g. ``scenario.replications=2``.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import asdict
from importlib import resources

from .boost import BoostParams
from .errors import UserError
from .simlab import GeneratorSpec, Scenario, SelectionSpec
from .tree import FitParams


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _names(s: str) -> tuple:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _trunc(s: str) -> tuple:
    parts = [float(x) for x in s.split(",")]
    if len(parts) != 2:
        raise ValueError("expected 'lo, hi'")
    return tuple(parts)


# section -> {key: (Scenario attribute path, parser)}
SCHEMA = {
    "scenario": {
        "name": ("name", str),
        "n_source": ("n_source", int),
        "n_target_test": ("n_target_test", int),
        "replications": ("replications", int),
        "master_seed": ("master_seed", int),
        "models": ("models", _names),
        "pool_factor": ("pool_factor", int),
        "max_batches": ("max_batches", int),
    },
    "generator": {
        "formula": ("generator.formula", str),
        "noise_sd": ("generator.noise_sd", float),
    },
    "selection": {
        "mechanism": ("selection.mechanism", str),
        "score": ("selection.score", str),
    },
    "weights": {
        "threshold": ("threshold", float),
        "trunc": ("trunc", _trunc),
        "ew1_features": ("ew1_features", _names),
        "ew2_features": ("ew2_features", _names),
        "ew3_features": ("ew3_features", _names),
    },
    "tree": {
        "features": ("tree_features", str),
        "max_depth": ("tree.max_depth", int),
        "min_node_weight": ("tree.min_node_weight", float),
        "min_gain": ("tree.min_gain", float),
        "prune": ("tree.prune", _bool),
        "cv_folds": ("tree.cv_folds", int),
    },
    "boost": {
        "rounds": ("boost.rounds", int),
        "learning_rate": ("boost.learning_rate", float),
        "max_depth": ("boost.max_depth", int),
        "min_node_weight": ("boost.min_node_weight", float),
    },
    "bagging": {
        "n_trees": ("n_trees", int),
    },
}


def _flat(values: dict) -> Scenario:
    nested = {"generator": {}, "selection": {}, "tree": {}, "boost": {}}
    top = {}
    for path, v in values.items():
        head, _, tail = path.partition(".")
        if tail:
            nested[head][tail] = v
        else:
            top[path] = v
    try:
        return Scenario(
            generator=GeneratorSpec(**nested["generator"]),
            selection=SelectionSpec(**nested["selection"]),
            tree=FitParams(**nested["tree"]),
            boost=BoostParams(**nested["boost"]),
            **top,
        )
    except UserError:
        raise
    except (TypeError, ValueError) as exc:
        raise UserError(f"invalid scenario: {exc}") from None


def _parse_value(section: str, key: str, raw: str):
    try:
        path, conv = SCHEMA[section][key]
    except KeyError:
        raise UserError(f"unknown config field {section}.{key}") from None
    try:
        return path, conv(raw.strip())
    except ValueError as exc:
        raise UserError(f"invalid value for {section}.{key}: {exc}") from None


def scenario_from_text(text: str, overrides=()) -> Scenario:
    """Parse config ``text`` then apply ``section.key=value`` overrides in order."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise UserError(f"cannot parse config: {exc}") from None
    values = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise UserError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            path, v = _parse_value(section, key, raw)
            values[path] = v
    for item in overrides:
        lhs, eq, raw = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not eq or not dot:
            raise UserError(f"override must look like section.key=value, got {item!r}")
        path, v = _parse_value(section, key, raw)
        values[path] = v
    return _flat(values)


def load_scenario(path, overrides=()) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UserError(f"cannot read config {path}: {exc}") from None
    return scenario_from_text(text, overrides)


def bundled_configs() -> list:
    return sorted(p.name for p in resources.files("dacart.configs").iterdir() if p.name.endswith(".cfg"))


def bundled_config_text(name: str) -> str:
    if not name.endswith(".cfg"):
        name += ".cfg"
    f = resources.files("dacart.configs") / name
    if not f.is_file():
        raise UserError(f"no bundled config {name!r}; available: {', '.join(bundled_configs())}")
    return f.read_text(encoding="utf-8")


def resolve_config(ref: str, overrides=()) -> Scenario:
    """A file path, or the name of a bundled config such as ``restricted_x1``."""
    if os.path.exists(ref):
        return load_scenario(ref, overrides)
    return scenario_from_text(bundled_config_text(ref), overrides)


def scenario_to_text(sc: Scenario) -> str:
    """Inverse of :func:`scenario_from_text` for every configurable field."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (path, _) in keys.items():
            v = _get(sc, path)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)


def _get(sc, path):
    obj = sc
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def scenario_dict(sc: Scenario) -> dict:
    return asdict(sc)


__all__ = [
    "SCHEMA",
    "bundled_config_text",
    "bundled_configs",
    "load_scenario",
    "resolve_config",
    "scenario_dict",
    "scenario_from_text",
    "scenario_to_text",
]
