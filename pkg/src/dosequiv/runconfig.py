"""Run-configuration parsing and validation for the CLI.

Configs are JSON documents gated by ``schema_version``; unknown keys are
rejected at every level so typos fail loudly instead of silently running a
default.  Reference JSON-Schema documents live next to this module under
``schemas/``; this validator is the enforced source of truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .design import StudyDesign
from .distance import DistanceTarget
from .errors import ConfigError
from .estimate import FamilySpec
from .models import DoseResponseModel, ModelFamily

SCHEMA_VERSION = 1

_FAMILY_NAMES = {f.value: f for f in ModelFamily}


def load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _require_keys(obj, allowed, required, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    missing = set(required) - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing required key(s) {sorted(missing)}")


def _number(obj, where, *, positive=False):
    if not isinstance(obj, (int, float)) or isinstance(obj, bool):
        raise ConfigError(f"{where}: expected a number")
    if positive and not obj > 0:
        raise ConfigError(f"{where}: must be > 0")
    return float(obj)


def _int(obj, where, *, minimum=None):
    if not isinstance(obj, int) or isinstance(obj, bool):
        raise ConfigError(f"{where}: expected an integer")
    if minimum is not None and obj < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}")
    return obj


def check_schema_version(raw, path):
    _require_keys(raw, set(raw) | {"schema_version"}, {"schema_version"}, str(path))
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}")


def parse_design(obj, where="design") -> StudyDesign:
    _require_keys(obj, {"doses", "allocations", "weights", "labels"},
                  {"doses", "allocations", "weights"}, where)
    labels = obj.get("labels")
    if labels is not None:
        labels = tuple(str(x) for x in labels)
    try:
        return StudyDesign(
            doses=np.asarray(obj["doses"], dtype=float),
            allocations=np.asarray(obj["allocations"], dtype=int),
            weights=np.asarray(obj["weights"], dtype=float),
            labels=labels,
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_family(obj, where) -> FamilySpec:
    _require_keys(obj, {"family", "hill", "bounds"}, {"family"}, where)
    name = obj["family"]
    if name not in _FAMILY_NAMES:
        raise ConfigError(f"{where}: unknown family {name!r}; choose from {sorted(_FAMILY_NAMES)}")
    family = _FAMILY_NAMES[name]
    hill = _number(obj.get("hill", 1.0), f"{where}.hill", positive=True)
    bounds = obj.get("bounds")
    if bounds is not None:
        bounds = np.asarray(bounds, dtype=float)
        if bounds.shape != (family.n_params, 2):
            raise ConfigError(f"{where}.bounds: expected shape ({family.n_params}, 2)")
    return FamilySpec(family=family, hill=hill, bounds=bounds)


def parse_families(obj, k, where="families") -> list[FamilySpec]:
    if not isinstance(obj, list) or len(obj) != k:
        raise ConfigError(f"{where}: expected a list with one family spec per subgroup ({k})")
    return [parse_family(f, f"{where}[{i}]") for i, f in enumerate(obj)]


def parse_target(obj, k, where) -> DistanceTarget:
    _require_keys(obj, {"kind", "subgroup", "subgroups"}, {"kind"}, where)
    kind = obj.get("kind")
    if kind == "one":
        sub = _int(obj.get("subgroup", 0), f"{where}.subgroup", minimum=1)
        if sub > k:
            raise ConfigError(f"{where}.subgroup: outside 1..{k}")
        return DistanceTarget.one(sub)
    if kind in ("many", "iu"):
        subs = obj.get("subgroups")
        if not isinstance(subs, list) or not subs:
            raise ConfigError(f"{where}.subgroups: expected a non-empty list")
        subs = [_int(s, f"{where}.subgroups", minimum=1) for s in subs]
        if max(subs) > k:
            raise ConfigError(f"{where}.subgroups: outside 1..{k}")
        return DistanceTarget.many(subs)
    raise ConfigError(f"{where}.kind: expected 'one', 'many', or 'iu', got {kind!r}")


@dataclass(frozen=True)
class TestSection:
    target: DistanceTarget
    iu: bool
    delta: float
    alphas: tuple[float, ...]
    b: int
    seed: int
    include_values: bool


def parse_test_section(obj, k, where="test") -> TestSection:
    _require_keys(
        obj,
        {"target", "delta", "alpha", "b", "seed", "include_values"},
        {"target", "delta", "alpha", "b", "seed"},
        where,
    )
    kind = obj["target"].get("kind") if isinstance(obj["target"], dict) else None
    target = parse_target(obj["target"], k, f"{where}.target")
    alpha_raw = obj["alpha"]
    if isinstance(alpha_raw, list):
        alphas = tuple(_number(a, f"{where}.alpha") for a in alpha_raw)
    else:
        alphas = (_number(alpha_raw, f"{where}.alpha"),)
    if not alphas or any(not 0 < a < 1 for a in alphas):
        raise ConfigError(f"{where}.alpha: levels must lie in (0, 1)")
    return TestSection(
        target=target,
        iu=(kind == "iu"),
        delta=_number(obj["delta"], f"{where}.delta", positive=True),
        alphas=alphas,
        b=_int(obj["b"], f"{where}.b", minimum=1),
        seed=_int(obj["seed"], f"{where}.seed", minimum=0),
        include_values=bool(obj.get("include_values", False)),
    )


@dataclass(frozen=True)
class CalibrateSection:
    target: DistanceTarget
    alpha: float
    b: int
    seed: int
    deltas: tuple[float, ...]


def parse_calibrate_section(obj, k, where="calibrate") -> CalibrateSection:
    _require_keys(obj, {"target", "alpha", "b", "seed", "deltas"},
                  {"target", "alpha", "b", "seed", "deltas"}, where)
    deltas = obj["deltas"]
    if not isinstance(deltas, list) or not deltas:
        raise ConfigError(f"{where}.deltas: expected a non-empty list")
    deltas = tuple(_number(d, f"{where}.deltas", positive=True) for d in deltas)
    if any(b <= a for a, b in zip(deltas, deltas[1:])):
        raise ConfigError(f"{where}.deltas: must be strictly increasing")
    alpha = _number(obj["alpha"], f"{where}.alpha")
    if not 0 < alpha < 1:
        raise ConfigError(f"{where}.alpha: must lie in (0, 1)")
    return CalibrateSection(
        target=parse_target(obj["target"], k, f"{where}.target"),
        alpha=alpha,
        b=_int(obj["b"], f"{where}.b", minimum=1),
        seed=_int(obj["seed"], f"{where}.seed", minimum=0),
        deltas=deltas,
    )


@dataclass(frozen=True)
class AsympSection:
    target: DistanceTarget
    draws: int
    seed: int
    quantiles: tuple[float, ...]
    include_samples: bool


def parse_asymp_section(obj, k, where="asymp") -> AsympSection:
    _require_keys(obj, {"target", "draws", "seed", "quantiles", "include_samples"},
                  {"target", "draws", "seed"}, where)
    quantiles = obj.get("quantiles", [0.05, 0.1, 0.5, 0.9, 0.95])
    if not isinstance(quantiles, list) or not quantiles:
        raise ConfigError(f"{where}.quantiles: expected a non-empty list")
    qs = tuple(_number(q, f"{where}.quantiles") for q in quantiles)
    if any(not 0 < q < 1 for q in qs):
        raise ConfigError(f"{where}.quantiles: probabilities must lie in (0, 1)")
    return AsympSection(
        target=parse_target(obj["target"], k, f"{where}.target"),
        draws=_int(obj["draws"], f"{where}.draws", minimum=1),
        seed=_int(obj["seed"], f"{where}.seed", minimum=0),
        quantiles=qs,
        include_samples=bool(obj.get("include_samples", False)),
    )


def parse_models(obj, design: StudyDesign, where="models") -> tuple[DoseResponseModel, ...]:
    if not isinstance(obj, list) or len(obj) != design.k:
        raise ConfigError(f"{where}: expected one model per subgroup ({design.k})")
    out = []
    for i, entry in enumerate(obj):
        spot = f"{where}[{i}]"
        _require_keys(entry, {"family", "params", "hill", "bounds"}, {"family", "params"}, spot)
        spec = parse_family({k: v for k, v in entry.items() if k != "params"}, spot)
        params = np.asarray(entry["params"], dtype=float)
        if params.shape != (spec.family.n_params,):
            raise ConfigError(f"{spot}.params: expected {spec.family.n_params} values")
        try:
            out.append(spec.model(params, float(design.doses[-1])))
        except ValueError as exc:
            raise ConfigError(f"{spot}: {exc}") from exc
    return tuple(out)
