"""Shipped example configurations and the JSON scenario file format.

A scenario file is a JSON object with sections::

    {
      "scenario": {"a": ..., "b_min": ..., "b_max": ..., "x_star": ..., "u_star": ..., "v_star": ...},
      "outflow": {"family": "exp_power", "members": [{"p": ..., "c": ..., "delta": ...}, ...]},
      "gains": {"k1": ..., "k2": ...},
      "h2": {"r": ..., "q": ..., "L": ..., "M": ..., "lambda1": ..., "gamma1": ..., "lambda2": ..., "gamma2": ...}
    }

``h2`` is optional.  The ``linear`` family takes members ``{"kappa": ...}``.
Floats are written in their shortest round-trip decimal form, so a file
written by :func:`dump_scenario_file` reloads to identical values.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

from .dynamics import ExpPowerOutflow, Gains, LinearOutflow, OutflowModel, Scenario
from .errors import ScenarioFileError
from .global_iss import H2Params

SCENARIO_FIELDS = ("a", "b_min", "b_max", "x_star", "u_star", "v_star")
GAIN_FIELDS = ("k1", "k2")
H2_FIELDS = ("r", "q", "L", "M", "lambda1", "gamma1", "lambda2", "gamma2")
FAMILIES = {"exp_power": (ExpPowerOutflow, ("p", "c", "delta")), "linear": (LinearOutflow, ("kappa",))}


@dataclass(frozen=True)
class ScenarioFile:
    scenario: Scenario
    model: OutflowModel
    gains: Gains
    h2: H2Params | None = None


def _example_41() -> ScenarioFile:
    member = ExpPowerOutflow(1.0, 0.1, 1.0)
    x_star, u_star = 10.0, 1.0
    # v* chosen so that the equilibrium balance holds to rounding, not to six digits
    v_star = float(member.value(x_star)) - u_star
    scenario = Scenario(a=16.8, b_min=0.0, b_max=3.1, x_star=x_star, u_star=u_star, v_star=v_star)
    h2 = H2Params(r=-0.98, q=1.0, L=0.99, M=1.025, lambda1=0.82, gamma1=0.17, lambda2=0.6, gamma2=0.39)
    return ScenarioFile(scenario, OutflowModel((member,)), Gains(0.9, 1.08), h2)


def _example_42() -> ScenarioFile:
    member = ExpPowerOutflow(1.0, 0.1, 2.0)
    x_star, v_star = 3.0, 1.0
    u_star = float(member.value(x_star)) - v_star
    scenario = Scenario(a=20.0, b_min=0.0, b_max=3.0, x_star=x_star, u_star=u_star, v_star=v_star)
    return ScenarioFile(scenario, OutflowModel((member,)), Gains(1.0, 1.0))


EXAMPLES = {"4.1": _example_41, "4.2": _example_42}


def example(name: str) -> ScenarioFile:
    try:
        return EXAMPLES[name]()
    except KeyError:
        raise ValueError(f"unknown example {name!r}; choose from {sorted(EXAMPLES)}") from None


def _number(section: dict, key: str, where: str) -> float:
    if key not in section:
        raise ScenarioFileError(f"{where}.{key}", "missing")
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioFileError(f"{where}.{key}", f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ScenarioFileError(f"{where}.{key}", "must be finite")
    return float(value)


def _section(doc: dict, key: str, required: bool = True):
    if key not in doc:
        if required:
            raise ScenarioFileError(key, "missing section")
        return None
    if not isinstance(doc[key], dict):
        raise ScenarioFileError(key, "expected an object")
    return doc[key]


def _build(cls, where: str, **kwargs):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        # constructor messages name the offending parameter first
        name = str(exc).split()[0]
        field = f"{where}.{name}" if name in kwargs else where
        raise ScenarioFileError(field, str(exc)) from None


def parse_scenario(doc) -> ScenarioFile:
    """Build validated objects from a decoded document, naming the first bad field."""
    if not isinstance(doc, dict):
        raise ScenarioFileError("<root>", "expected a JSON object")
    sec = _section(doc, "scenario")
    scenario = _build(Scenario, "scenario", **{k: _number(sec, k, "scenario") for k in SCENARIO_FIELDS})

    out = _section(doc, "outflow")
    family = out.get("family")
    if family not in FAMILIES:
        raise ScenarioFileError("outflow.family", f"expected one of {sorted(FAMILIES)}, got {family!r}")
    cls, keys = FAMILIES[family]
    members = out.get("members")
    if not isinstance(members, list) or not members:
        raise ScenarioFileError("outflow.members", "expected a non-empty list")
    built = []
    for i, m in enumerate(members):
        where = f"outflow.members[{i}]"
        if not isinstance(m, dict):
            raise ScenarioFileError(where, "expected an object")
        built.append(_build(cls, where, **{k: _number(m, k, where) for k in keys}))
    model = OutflowModel(tuple(built))

    g = _section(doc, "gains")
    gains = Gains(*(_number(g, k, "gains") for k in GAIN_FIELDS))

    h = _section(doc, "h2", required=False)
    h2 = None if h is None else H2Params(**{k: _number(h, k, "h2") for k in H2_FIELDS})
    return ScenarioFile(scenario, model, gains, h2)


def load_scenario_file(path) -> ScenarioFile:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioFileError("<root>", f"invalid JSON: {exc}") from None
    return parse_scenario(doc)


def scenario_document(sf: ScenarioFile) -> dict:
    member = sf.model.members[0]
    family = "linear" if isinstance(member, LinearOutflow) else "exp_power"
    doc = {
        "scenario": {k: getattr(sf.scenario, k) for k in SCENARIO_FIELDS},
        "outflow": {"family": family, "members": [asdict(m) for m in sf.model.members]},
        "gains": {k: getattr(sf.gains, k) for k in GAIN_FIELDS},
    }
    if sf.h2 is not None:
        doc["h2"] = {k: getattr(sf.h2, k) for k in H2_FIELDS}
    return doc


def dump_scenario_file(sf: ScenarioFile, path) -> None:
    Path(path).write_text(json.dumps(scenario_document(sf), indent=2) + "\n")
