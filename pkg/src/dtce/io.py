"""YAML scenario files: parsing with field-path errors and lossless serialization."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .catalog import CatalogError, PiecewiseLinear, from_dict
from .core import (
    Commuting3D,
    ConvexCommon,
    EarlyLate,
    Family,
    GroupSpec,
    Location,
    Scenario,
    TimeGrid,
    ValidationError,
)

SCHEDULE_KINDS = ("convex_common", "early_late", "commuting_3d")


@dataclass
class SolverOptions:
    oracle: bool = False
    verify: bool = False
    tol: float | None = None
    bound_factor: float = 10.0


@dataclass
class ScenarioFile:
    scenario: Scenario
    grid: TimeGrid
    options: SolverOptions = field(default_factory=SolverOptions)
    name: str = ""


class _Collector:
    def __init__(self):
        self.errors: list[tuple[str, str]] = []

    def add(self, path, msg):
        self.errors.append((path, msg))

    def number(self, doc, key, path, default=None, required=True):
        if not isinstance(doc, dict) or key not in doc or doc[key] is None:
            if required and default is None:
                self.add(path, "required")
            return default
        val = doc[key]
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.add(path, f"must be a number, got {val!r}")
            return default
        return float(val)

    def function(self, doc, key, path, required=True):
        if not isinstance(doc, dict) or doc.get(key) is None:
            if required:
                self.add(path, "required")
            return None
        try:
            return from_dict(doc[key])
        except CatalogError as exc:
            self.add(path, str(exc))
            return None


def _family_flags(family: Family) -> tuple[bool, bool]:
    return {
        Family.VOT_EARLY: (True, False),
        Family.VOT_LATE: (False, True),
    }.get(family, (True, True))


def parse_scenario(doc: Any, name: str = "") -> ScenarioFile:
    """Build a ScenarioFile from a parsed YAML mapping.

    Raises ValidationError listing every problem with its field path.
    """
    col = _Collector()
    if not isinstance(doc, dict):
        raise ValidationError([("", "scenario document must be a mapping")])
    fam_raw = doc.get("model_family")
    family = None
    try:
        family = Family(str(fam_raw).upper())
    except ValueError:
        col.add("model_family", f"must be one of {[f.value for f in Family]}, got {fam_raw!r}")
    capacity = col.number(doc, "capacity", "capacity")

    grid = None
    gdoc = doc.get("grid")
    if not isinstance(gdoc, dict):
        col.add("grid", "required mapping with start, end, cells")
    else:
        start = col.number(gdoc, "start", "grid.start")
        end = col.number(gdoc, "end", "grid.end")
        cells = gdoc.get("cells")
        if isinstance(cells, bool) or not isinstance(cells, int) or cells < 1:
            col.add("grid.cells", f"must be a positive integer, got {cells!r}")
        elif start is not None and end is not None:
            if end <= start:
                col.add("grid.end", "must exceed grid.start")
            else:
                grid = TimeGrid(start, end, cells)

    groups = []
    gl = doc.get("groups")
    if not isinstance(gl, list) or not gl:
        col.add("groups", "required non-empty list")
        gl = []
    for i, g in enumerate(gl):
        p = f"groups[{i}]"
        if not isinstance(g, dict):
            col.add(p, "must be a mapping")
            continue
        unknown = set(g) - {"Q", "sigma", "beta", "gamma", "alpha"}
        for key in sorted(unknown):
            col.add(f"{p}.{key}", "unknown field")
        Q = col.number(g, "Q", f"{p}.Q")
        vals = {k: col.number(g, k, f"{p}.{k}", default=d) for k, d in (("sigma", 0.0), ("beta", 1.0), ("gamma", 1.0), ("alpha", 1.0))}
        if Q is not None:
            groups.append(GroupSpec(Q, **vals))

    schedule = None
    sdoc = doc.get("schedule")
    if not isinstance(sdoc, dict):
        col.add("schedule", "required mapping")
    else:
        kind = sdoc.get("kind")
        if kind == "convex_common":
            f = col.function(sdoc, "f", "schedule.f")
            schedule = ConvexCommon(f) if f is not None else None
        elif kind == "early_late":
            de, dl = _family_flags(family) if family else (True, True)
            allow_e = sdoc.get("allow_early", de)
            allow_l = sdoc.get("allow_late", dl)
            fe = col.function(sdoc, "early", "schedule.early", required=bool(allow_e))
            fl = col.function(sdoc, "late", "schedule.late", required=bool(allow_l))
            if not ((allow_e and fe is None) or (allow_l and fl is None)):
                schedule = EarlyLate(fe, fl, bool(allow_e), bool(allow_l))
        elif kind == "commuting_3d":
            f = col.function(sdoc, "f", "schedule.f")
            g = col.function(sdoc, "g", "schedule.g")
            if f is not None and g is not None:
                schedule = Commuting3D(f, g)
        else:
            col.add("schedule.kind", f"must be one of {list(SCHEDULE_KINDS)}, got {kind!r}")

    locations = []
    for j, loc in enumerate(doc.get("locations") or []):
        p = f"locations[{j}]"
        l = col.number(loc, "l", f"{p}.l")
        R = col.number(loc, "R", f"{p}.R")
        if l is not None and R is not None:
            locations.append(Location(l, R))

    toll = None
    tdoc = doc.get("toll")
    if tdoc is not None:
        try:
            knots = tdoc["knots"]
            toll = PiecewiseLinear(tuple(float(k[0]) for k in knots), tuple(float(k[1]) for k in knots))
        except (KeyError, TypeError, IndexError, ValueError, CatalogError) as exc:
            col.add("toll.knots", f"malformed toll knots: {exc}")

    options = SolverOptions()
    odoc = doc.get("solver") or {}
    if not isinstance(odoc, dict):
        col.add("solver", "must be a mapping")
        odoc = {}
    for key in ("oracle", "verify"):
        if key in odoc:
            if not isinstance(odoc[key], bool):
                col.add(f"solver.{key}", "must be true or false")
            else:
                setattr(options, key, odoc[key])
    if odoc.get("tol") is not None:
        options.tol = col.number(odoc, "tol", "solver.tol")
    if odoc.get("bound_factor") is not None:
        options.bound_factor = col.number(odoc, "bound_factor", "solver.bound_factor")
    for key in sorted(set(odoc) - {"oracle", "verify", "tol", "bound_factor"}):
        col.add(f"solver.{key}", "unknown field")

    if col.errors:
        raise ValidationError(col.errors)
    scenario = Scenario(capacity, tuple(groups), schedule, family, tuple(locations), toll)
    return ScenarioFile(scenario, grid, options, name)


def load_scenario(path: str | Path) -> ScenarioFile:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ValidationError([("", f"not valid YAML: {exc}")]) from None
    return parse_scenario(doc, path.stem)


# ---------------------------------------------------------------------------
# serialization


class _Dumper(yaml.SafeDumper):
    pass


def _float_repr(dumper, value: float):
    text = "%.17g" % value
    if text in ("inf", "-inf", "nan"):
        text = {"inf": ".inf", "-inf": "-.inf", "nan": ".nan"}[text]
    elif "." not in text and "e" not in text:
        text += ".0"
    elif "e" in text and "." not in text:
        mant, exp = text.split("e")
        text = f"{mant}.0e{exp}"
    return dumper.represent_scalar("tag:yaml.org,2002:float", text)


_Dumper.add_representer(float, _float_repr)
_Dumper.add_multi_representer(np.floating, lambda d, v: _float_repr(d, float(v)))
_Dumper.add_multi_representer(np.integer, lambda d, v: d.represent_int(int(v)))
_Dumper.add_multi_representer(np.bool_, lambda d, v: d.represent_bool(bool(v)))
_Dumper.add_multi_representer(np.ndarray, lambda d, v: d.represent_list(v.tolist()))


def dump_yaml(doc: Any) -> str:
    return yaml.dump(doc, Dumper=_Dumper, sort_keys=False, default_flow_style=None)


def scenario_to_dict(sf: ScenarioFile) -> dict[str, Any]:
    sc = sf.scenario
    sch = sc.schedule
    if isinstance(sch, ConvexCommon):
        sdoc = {"kind": "convex_common", "f": sch.f.to_dict()}
    elif isinstance(sch, EarlyLate):
        sdoc = {"kind": "early_late", "allow_early": sch.allow_early, "allow_late": sch.allow_late}
        if sch.early is not None:
            sdoc["early"] = sch.early.to_dict()
        if sch.late is not None:
            sdoc["late"] = sch.late.to_dict()
    else:
        sdoc = {"kind": "commuting_3d", "f": sch.f.to_dict(), "g": sch.g.to_dict()}
    doc = {
        "model_family": sc.family.value,
        "capacity": float(sc.capacity),
        "grid": {"start": float(sf.grid.start), "end": float(sf.grid.end), "cells": int(sf.grid.cells)},
        "groups": [
            {"Q": g.Q, "sigma": g.sigma, "beta": g.beta, "gamma": g.gamma, "alpha": g.alpha} for g in sc.groups
        ],
        "schedule": sdoc,
    }
    if sc.locations:
        doc["locations"] = [{"l": loc.l, "R": loc.R} for loc in sc.locations]
    if sc.toll is not None:
        doc["toll"] = {"knots": [[x, y] for x, y in zip(sc.toll.xs, sc.toll.ys)]}
    opts = {"oracle": sf.options.oracle, "verify": sf.options.verify, "bound_factor": sf.options.bound_factor}
    if sf.options.tol is not None:
        opts["tol"] = sf.options.tol
    doc["solver"] = opts
    return _floatify(doc)


def _floatify(obj):
    if isinstance(obj, dict):
        return {k: _floatify(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_floatify(v) for v in obj]
    if isinstance(obj, bool) or isinstance(obj, int):
        return obj
    if isinstance(obj, float):
        return float(obj)
    try:
        return float(obj)
    except (TypeError, ValueError):
        return obj


def dump_scenario(sf: ScenarioFile) -> str:
    return dump_yaml(scenario_to_dict(sf))
