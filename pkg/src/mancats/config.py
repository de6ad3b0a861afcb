"""Scenario files and simulation report files.

A scenario file is YAML (JSON also parses). It either names a preset and
optionally overrides some of its fields, or lists every field itself::

    preset: table1-I-normal-20-20
    profile: desk
    n_sim: 500
    seed: 7

    # or, without a preset
    name: my-scenario
    group_sizes: [15, 25]
    sigmas: [[[1, 0], [0, 1]], [[4, 1], [1, 2]]]
    distribution: lognormal
    covariates: {second: grid, halves: pooled}
    deltas: [0.5, 1.0]        # power runs only

Malformed files raise :class:`ConfigParse` carrying the offending field path.
"""

import csv
import json
import math
from dataclasses import fields, replace

import numpy as np
import yaml

from .errors import ConfigParse, NumericalError
from .simulation import METHODS, CovariateRule, ErrorDistribution, ScenarioConfig, get_preset

SCHEMA_VERSION = 1

_SCENARIO_FIELDS = {f.name for f in fields(ScenarioConfig)}
_TOP_LEVEL = _SCENARIO_FIELDS | {"preset", "deltas"}


def _number(value, path, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigParse(f"expected a number, got {value!r}", path)
    if integer and int(value) != value:
        raise ConfigParse(f"expected an integer, got {value!r}", path)
    if not math.isfinite(value):
        raise ConfigParse("value must be finite", path)
    return int(value) if integer else float(value)


def _vector(value, path, integer=False):
    if not isinstance(value, (list, tuple)):
        raise ConfigParse(f"expected a list, got {type(value).__name__}", path)
    return [_number(v, f"{path}[{i}]", integer) for i, v in enumerate(value)]


def _matrix(value, path):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigParse("expected a non-empty list of rows", path)
    rows = [_vector(r, f"{path}[{i}]") for i, r in enumerate(value)]
    if any(len(r) != len(rows) for r in rows):
        raise ConfigParse("covariance matrix must be square", path)
    m = np.array(rows)
    if not np.allclose(m, m.T):
        raise ConfigParse("covariance matrix must be symmetric", path)
    return m


def _parse_fields(raw):
    out = {}
    for key, value in raw.items():
        if key not in _TOP_LEVEL:
            raise ConfigParse(f"unknown field {key!r}", key)
        if key in ("preset", "profile", "name"):
            if not isinstance(value, str):
                raise ConfigParse("expected a string", key)
            out[key] = value
        elif key == "group_sizes":
            sizes = _vector(value, key, integer=True)
            if len(sizes) < 2 or min(sizes) < 1:
                raise ConfigParse("need at least two positive group sizes", key)
            out[key] = sizes
        elif key == "sigmas":
            if not isinstance(value, (list, tuple)) or not value:
                raise ConfigParse("expected one covariance matrix per group", key)
            out[key] = [_matrix(s, f"{key}[{i}]") for i, s in enumerate(value)]
        elif key in ("nu", "mu", "shift", "deltas"):
            out[key] = _vector(value, key)
        elif key in ("n_sim", "n_boot", "seed"):
            out[key] = _number(value, key, integer=True)
        elif key == "alpha":
            out[key] = _number(value, key)
        elif key == "distribution":
            try:
                out[key] = ErrorDistribution(value)
            except ValueError:
                raise ConfigParse(f"unknown error distribution {value!r}", key) from None
        elif key == "flavor":
            if value not in ("HC0", "HC4"):
                raise ConfigParse(f"flavor must be HC0 or HC4, got {value!r}", key)
            out[key] = value
        elif key == "methods":
            if not isinstance(value, (list, tuple)) or not value:
                raise ConfigParse("expected a non-empty list of methods", key)
            for i, m in enumerate(value):
                if m not in METHODS:
                    raise ConfigParse(f"unknown method {m!r}; choose from {list(METHODS)}", f"{key}[{i}]")
            out[key] = tuple(value)
        elif key == "covariates":
            if not isinstance(value, dict):
                raise ConfigParse("expected a mapping with 'second' and 'halves'", key)
            extra = set(value) - {"second", "halves"}
            if extra:
                raise ConfigParse(f"unknown field {sorted(extra)[0]!r}", f"{key}.{sorted(extra)[0]}")
            second = value.get("second", "grid")
            halves = value.get("halves", "pooled")
            if second not in ("grid", "normal", "lognormal", "none"):
                raise ConfigParse(f"unknown covariate rule {second!r}", f"{key}.second")
            if halves not in ("pooled", "per-group"):
                raise ConfigParse(f"unknown halves option {halves!r}", f"{key}.halves")
            out[key] = CovariateRule(second=second, halves=halves)
    return out


def scenario_from_mapping(raw, profile=None):
    """Resolve a parsed scenario file into ``(ScenarioConfig, deltas)``.

    ``profile`` overrides the profile given in the file (default ``desk``).
    """
    if not isinstance(raw, dict):
        raise ConfigParse("scenario file must contain a mapping at top level", "<root>")
    kw = _parse_fields(raw)
    deltas = kw.pop("deltas", None)
    preset = kw.pop("preset", None)
    prof = profile or kw.pop("profile", None) or "desk"
    kw.pop("profile", None)
    if preset is not None:
        base = get_preset(preset, prof)
        try:
            return replace(base, **kw), deltas
        except (ValueError, NumericalError) as exc:
            raise ConfigParse(str(exc), "<scenario>") from None
    for required in ("group_sizes", "sigmas"):
        if required not in kw:
            raise ConfigParse("missing required field", required)
    if len(kw["sigmas"]) != len(kw["group_sizes"]):
        raise ConfigParse(
            f"{len(kw['sigmas'])} covariance matrices for {len(kw['group_sizes'])} groups", "sigmas"
        )
    kw.setdefault("name", "custom")
    if profile is not None or "profile" in raw:
        kw["profile"] = prof
    try:
        return ScenarioConfig(**kw), deltas
    except (ValueError, NumericalError) as exc:
        raise ConfigParse(str(exc), "<scenario>") from None


def load_scenario(path, profile=None):
    """Read a YAML or JSON scenario file; see :func:`scenario_from_mapping`."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigParse(f"not valid YAML: {exc}", "<file>") from None
    except OSError as exc:
        raise ConfigParse(f"cannot read scenario file: {exc}", "<file>") from None
    return scenario_from_mapping(raw, profile)


# --- report files --------------------------------------------------------------

REPORT_COLUMNS = {
    "scenario": str,
    "delta": float,
    "method": str,
    "rejections": int,
    "failures": int,
    "n_sim": int,
    "proportion": float,
    "mc_se": float,
    "n_boot": int,
    "alpha": float,
    "seed": int,
    "profile": str,
    "runtime_s": float,
}


def write_report_csv(rows, path):
    """Write report rows; floats use ``repr`` so that reading them back is exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(REPORT_COLUMNS))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if row[k] is None else repr(row[k]) if isinstance(row[k], float) else row[k]
                             for k in REPORT_COLUMNS})


def read_report_csv(path):
    """Inverse of :func:`write_report_csv`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(REPORT_COLUMNS):
            raise ConfigParse(f"unexpected report columns {reader.fieldnames}", "<header>")
        return [{k: (None if v == "" and t is not str else t(v)) for (k, t), v in
                 zip(REPORT_COLUMNS.items(), (r[k] for k in REPORT_COLUMNS))} for r in reader]


def simulation_document(command, config, rows, deltas=None):
    """JSON-ready report including the resolved configuration."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "seed": config.seed,
        "profile": config.profile,
        "config": config.to_dict(),
        "rows": rows,
    }
    if deltas is not None:
        doc["deltas"] = list(deltas)
    return doc


def write_json(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
