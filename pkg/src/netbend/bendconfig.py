"""YAML transform configuration: parse, validate, resolve into hooks.

Schema (this module is its definition):

    seed: 0              # optional; drives every random feature selector
    transforms:
    - layer: 5           # 1-based generator layer
      transform: scale   # any transform kind name
      params: [0.6, 0.6]
      layer_type: cluster            # all | cluster | random
      layer_type_param: 2            # cluster index, or random fraction;
                                     # omitted/null when layer_type is all

``params`` may be omitted for kinds that take none. Records keep file
order; the engine applies same-layer hooks in that order. Random selectors
draw per-feature Bernoulli(fraction) from a PRNG seeded by
(config seed, layer, record position), so resolution is reproducible and
each record gets an independent stream.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .generator import ModelDescriptor
from .transforms import Hook, Transform, TransformError

_LINE_KEY = "__line__"


class ConfigError(ValueError):
    """Malformed or invalid transform configuration; cites line and field."""


class _LineLoader(yaml.SafeLoader):
    """SafeLoader that records the source line of every mapping."""

    def construct_mapping(self, node, deep=False):
        mapping = super().construct_mapping(node, deep=deep)
        mapping[_LINE_KEY] = node.start_mark.line + 1
        return mapping


@dataclass(frozen=True)
class FeatureSelector:
    mode: str  # all | cluster | random
    cluster_index: int | None = None
    fraction: float | None = None


@dataclass(frozen=True)
class TransformSpec:
    layer: int
    transform: Transform
    selector: FeatureSelector
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BendConfig:
    specs: tuple[TransformSpec, ...]
    seed: int = 0


def _fail(index: int, line: int, fieldname: str, message: str):
    raise ConfigError(f"transforms[{index}] (line {line}), field '{fieldname}': {message}")


_RECORD_KEYS = {"layer", "transform", "params", "layer_type", "layer_type_param"}


def _parse_record(index: int, record) -> TransformSpec:
    if not isinstance(record, dict):
        raise ConfigError(f"transforms[{index}]: each transform must be a mapping")
    line = record.pop(_LINE_KEY, 0)
    unknown = set(record) - _RECORD_KEYS
    if unknown:
        _fail(index, line, sorted(unknown)[0], "unknown key")

    for key in ("layer", "transform", "layer_type"):
        if key not in record:
            _fail(index, line, key, "missing")

    layer = record["layer"]
    if not isinstance(layer, int) or isinstance(layer, bool) or layer < 1:
        _fail(index, line, "layer", f"must be a positive integer, got {layer!r}")

    params = record.get("params", [])
    if params is None:
        params = []
    if not isinstance(params, list):
        _fail(index, line, "params", "must be a list")
    try:
        transform = Transform(str(record["transform"]), tuple(params))
    except TransformError as exc:
        _fail(index, line, "params" if "param" in str(exc) else "transform", str(exc))

    mode = record["layer_type"]
    param = record.get("layer_type_param")
    if mode == "all":
        if param is not None:
            _fail(index, line, "layer_type_param", "must be omitted or null for layer_type 'all'")
        selector = FeatureSelector(mode="all")
    elif mode == "cluster":
        if not isinstance(param, int) or isinstance(param, bool) or param < 0:
            _fail(index, line, "layer_type_param", f"cluster index must be >= 0, got {param!r}")
        selector = FeatureSelector(mode="cluster", cluster_index=param)
    elif mode == "random":
        if not isinstance(param, (int, float)) or isinstance(param, bool):
            _fail(index, line, "layer_type_param", f"random fraction must be a number, got {param!r}")
        if not 0.0 <= param <= 1.0:
            _fail(index, line, "layer_type_param", f"random fraction must be in [0,1], got {param}")
        selector = FeatureSelector(mode="random", fraction=float(param))
    else:
        _fail(index, line, "layer_type", f"must be all, cluster or random, got {mode!r}")
    return TransformSpec(layer=layer, transform=transform, selector=selector, line=line)


def parse_config(text: str) -> BendConfig:
    """Parse YAML text into a BendConfig, preserving record order."""
    try:
        doc = yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping with a 'transforms' list")
    doc = dict(doc)
    doc.pop(_LINE_KEY, None)
    unknown = set(doc) - {"transforms", "seed"}
    if unknown:
        raise ConfigError(f"unknown top-level key {sorted(unknown)[0]!r}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    records = doc.get("transforms", [])
    if records is None:
        records = []
    if not isinstance(records, list):
        raise ConfigError("'transforms' must be a list")
    specs = tuple(_parse_record(i, rec) for i, rec in enumerate(records))
    return BendConfig(specs=specs, seed=seed)


def serialize_config(config: BendConfig) -> str:
    """Canonical YAML form; parse(serialize(parse(x))) == parse(x)."""
    records = []
    for spec in config.specs:
        rec = {
            "layer": spec.layer,
            "transform": spec.transform.kind,
            "params": list(spec.transform.params),
            "layer_type": spec.selector.mode,
        }
        if spec.selector.mode == "cluster":
            rec["layer_type_param"] = spec.selector.cluster_index
        elif spec.selector.mode == "random":
            rec["layer_type_param"] = spec.selector.fraction
        records.append(rec)
    return yaml.safe_dump(
        {"seed": config.seed, "transforms": records}, sort_keys=False, default_flow_style=None
    )


def validate_against(
    config: BendConfig, descriptor: ModelDescriptor, clusters=None
) -> BendConfig:
    """Check every spec against the model shape and available cluster models.

    ``clusters`` maps layer index to a ClusterModel; only needed when a
    cluster selector appears. All violations are reported together.
    """
    clusters = clusters or {}
    problems = []
    n_layers = len(descriptor.layers)
    for i, spec in enumerate(config.specs):
        where = f"transforms[{i}] (line {spec.line})"
        if not 1 <= spec.layer <= n_layers:
            problems.append(f"{where}: layer {spec.layer} not in model (1..{n_layers})")
            continue
        if spec.selector.mode == "cluster":
            model = clusters.get(spec.layer)
            if model is None:
                problems.append(f"{where}: cluster model required for layer {spec.layer}")
            elif spec.selector.cluster_index >= model.k:
                problems.append(
                    f"{where}: cluster {spec.selector.cluster_index} out of range, "
                    f"layer {spec.layer} has {model.k} clusters"
                )
    if problems:
        raise ConfigError("; ".join(problems))
    return config


def resolve_selectors(
    config: BendConfig, descriptor: ModelDescriptor, clusters=None
) -> list[Hook]:
    """Turn a validated config into ordered hooks with concrete feature sets."""
    clusters = clusters or {}
    hooks = []
    for position, spec in enumerate(config.specs):
        feature_count = descriptor.layer(spec.layer).feature_count
        sel = spec.selector
        if sel.mode == "all":
            features = tuple(range(feature_count))
        elif sel.mode == "cluster":
            features = clusters[spec.layer].members(sel.cluster_index)
        else:
            rng = np.random.default_rng([config.seed, spec.layer, position])
            mask = rng.random(feature_count) < sel.fraction
            features = tuple(int(i) for i in np.nonzero(mask)[0])
        hooks.append(Hook(layer=spec.layer, features=features, transform=spec.transform))
    return hooks
