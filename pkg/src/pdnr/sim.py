"""Scenario engine: timed line faults, restorations and injection changes.

Events are applied between rounds, never inside one. A fault is seen only by
the agents listed as aware: they forbid both arcs of the line in their
arborescence step and zero the corresponding switch entries. Injection
changes rewrite the own-node injection of aware agents and the evaluation
case; the zero-sum balance must survive every change.

Scenario files are JSON::

    {"version": 1,
     "events": [
       {"iteration": 100, "type": "fault", "line": [1, 2], "aware": [1, 2]},
       {"iteration": 200, "type": "injection",
        "buses": [{"id": 3, "rho1_mw": -2.0, "rho2_mvar": 0.0}, {"id": 4, "rho1_mw": 2.0, "rho2_mvar": 0.0}, {"id": 5, "rho1_mw": -3.0, "rho2_mvar": 0.0}]},
       {"iteration": 300, "type": "restore", "line": [1, 2]}
     ]}

Bus ids are the labels of the case file. ``aware`` defaults to the two line
ends for faults and restorations and to the listed buses for injection
changes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import admm_core as ac
from .distributed import RunResult, run, summarize_agents
from .errors import CaseFileError
from .io import load_case
from .model import NetworkCase, brute_force_optimum, injections_from_mapping, open_lines

SCENARIO_VERSION = 1

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["version", "events"],
    "properties": {
        "version": {"const": SCENARIO_VERSION},
        "description": {"type": "string"},
        "events": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["iteration", "type"],
                "properties": {
                    "iteration": {"type": "integer", "minimum": 0},
                    "type": {"enum": ["fault", "restore", "injection"]},
                    "line": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                    "aware": {"type": "array", "items": {"type": "integer"}},
                    "buses": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["id", "rho1_mw", "rho2_mvar"],
                            "properties": {
                                "id": {"type": "integer"},
                                "rho1_mw": {"type": "number"},
                                "rho2_mvar": {"type": "number"},
                            },
                            "additionalProperties": False,
                        },
                    },
                },
                "additionalProperties": False,
            },
        },
    },
}


def _node(case: NetworkCase, label) -> int:
    try:
        return case.node(label)
    except KeyError as err:
        raise ValueError(err.args[0]) from None


def _line_arcs(case: NetworkCase, line) -> tuple[int, int]:
    try:
        return case.line_arcs(tuple(line))
    except KeyError:
        raise ValueError(f"unknown line {tuple(line)}") from None


@dataclass(frozen=True)
class LineFault:
    """Line ``(i, j)`` (bus labels) fails; only ``aware`` agents learn about it."""

    line: tuple
    aware: frozenset

    def apply(self, pool, case: NetworkCase, cfg=None) -> NetworkCase:
        arcs = list(_line_arcs(case, self.line))
        for lab in sorted(self.aware):
            i = _node(case, lab)
            pool.forbidden[i, arcs] = True
            pool.b[i, arcs] = 0.0
        return case


@dataclass(frozen=True)
class LineRestore:
    """Line ``(i, j)`` is back in service for the ``aware`` agents."""

    line: tuple
    aware: frozenset

    def apply(self, pool, case: NetworkCase, cfg=None) -> NetworkCase:
        arcs = list(_line_arcs(case, self.line))
        for lab in sorted(self.aware):
            pool.forbidden[_node(case, lab), arcs] = False
        return case


@dataclass(frozen=True)
class InjectionChange:
    """New ``(rho1, rho2)`` at the listed buses; aware agents update their own rows."""

    injections: tuple  # ((label, rho1, rho2), ...)
    aware: frozenset

    def apply(self, pool, case: NetworkCase, cfg=None) -> NetworkCase:
        mapping = {lab: (r1, r2) for lab, r1, r2 in self.injections}
        new = apply_injections(case, mapping)
        for lab in sorted(self.aware):
            i = _node(case, lab)
            pool.rho[i] = (new.rho1[i], new.rho2[i])
        if cfg is not None and cfg.reset_duals_on_injection:
            pool.reset_duals()
        return new


def apply_injections(case: NetworkCase, mapping: dict) -> NetworkCase:
    """Copy of ``case`` with new injections at the given bus labels; checks the zero sum."""
    try:
        rho1, rho2 = injections_from_mapping(case, mapping)
    except KeyError as err:
        raise ValueError(err.args[0]) from None
    for name, rho in (("active", rho1), ("reactive", rho2)):
        if abs(rho.sum()) > case.balance_tol:
            raise ValueError(f"injection change breaks the {name} balance ({rho.sum():.6g})")
    return case.with_injections(rho1, rho2)


@dataclass
class Scenario:
    """Timed events; ``events`` holds ``(iteration, event)`` pairs in file order."""

    events: list = field(default_factory=list)

    def __post_init__(self):
        its = [it for it, _ in self.events]
        if any(b < a for a, b in zip(its, its[1:])):
            raise ValueError("scenario iterations must be nondecreasing")

    def validate(self, case: NetworkCase) -> None:
        """Check every event against ``case`` (arcs exist, balance preserved)."""
        cur = case
        for _, ev in self.events:
            if isinstance(ev, (LineFault, LineRestore)):
                _line_arcs(case, ev.line)
            else:
                cur = apply_injections(cur, {lab: (r1, r2) for lab, r1, r2 in ev.injections})
            for lab in ev.aware:
                _node(case, lab)


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise CaseFileError(f"{where}: {err.message}") from None
    events = []
    for n, e in enumerate(doc["events"]):
        kind = e["type"]
        if kind in ("fault", "restore"):
            if "line" not in e:
                raise CaseFileError(f"events/{n}: '{kind}' needs 'line'")
            line = tuple(e["line"])
            aware = frozenset(e.get("aware", line))
            events.append((e["iteration"], (LineFault if kind == "fault" else LineRestore)(line, aware)))
        else:
            if "buses" not in e:
                raise CaseFileError(f"events/{n}: 'injection' needs 'buses'")
            inj = tuple((b["id"], float(b["rho1_mw"]), float(b["rho2_mvar"])) for b in e["buses"])
            aware = frozenset(e.get("aware", [b["id"] for b in e["buses"]]))
            events.append((e["iteration"], InjectionChange(inj, aware)))
    return Scenario(events)


def scenario_to_dict(sc: Scenario) -> dict:
    out = []
    for it, ev in sc.events:
        if isinstance(ev, InjectionChange):
            d = {
                "iteration": it,
                "type": "injection",
                "buses": [{"id": lab, "rho1_mw": r1, "rho2_mvar": r2} for lab, r1, r2 in ev.injections],
            }
        else:
            d = {"iteration": it, "type": "fault" if isinstance(ev, LineFault) else "restore", "line": list(ev.line)}
        d["aware"] = sorted(ev.aware)
        out.append(d)
    return {"version": SCENARIO_VERSION, "events": out}


def load_scenario(path) -> Scenario:
    p = Path(path)
    if not p.exists():
        from importlib import resources

        bundled = resources.files("pdnr") / "data" / p.name
        if not bundled.is_file():
            raise FileNotFoundError(path)
        p = Path(str(bundled))
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise CaseFileError(f"invalid JSON: {err}") from None
    return scenario_from_dict(doc)


def apply_event(pool, event, case: NetworkCase, cfg=None) -> NetworkCase:
    """Apply one event to the agents; returns the updated evaluation case."""
    return event.apply(pool, case, cfg)


# --------------------------------------------------------------------------
# phase reports


@dataclass
class PhaseReport:
    """Outcome of one inter-event interval."""

    index: int
    start: int
    end: int
    converged: bool
    consensus: bool
    configuration: np.ndarray
    radial: bool
    loss_kw: float | None
    open_lines: list
    faulted_arcs_used: bool

    @property
    def iterations(self) -> int:
        return self.end - self.start


def phase_reports(result: RunResult) -> list[PhaseReport]:
    """One report per phase of a scenario run.

    The configuration is the agents' common ``b`` when they agree and the
    majority configuration otherwise. ``faulted_arcs_used`` flags a
    configuration that switches on an arc some agent has been told is down.
    """
    out = []
    for n, ph in enumerate(result.phases):
        info = summarize_agents(ph.case, ph.b)
        cfg = info["majority"]
        rep = info["report"]
        down = ph.forbidden.any(axis=0)
        out.append(
            PhaseReport(
                index=n,
                start=ph.start,
                end=ph.end,
                converged=ph.converged_at is not None,
                consensus=info["agreed"],
                configuration=cfg,
                radial=bool(rep is not None and rep.radial),
                loss_kw=info["loss"],
                open_lines=open_lines(ph.case, cfg),
                faulted_arcs_used=bool(np.any(cfg[down] > 0)),
            )
        )
    return out


TOY_PHASE_LENGTH = 100
# Toy resistances are i + j ohm at unit base voltage, about a thousand times
# the 33-bus per-unit values; a penalty near the mean resistance balances the
# loss against the augmented terms.
TOY_DELTA = 10.0
TOY_PHASE3_INJECTIONS = ((3, -2.0, 0.0), (4, 2.0, 0.0), (5, -3.0, 0.0))


def toy_scenario() -> Scenario:
    """Fault on line (1, 2) seen by agents 1 and 2, new injections, restoration."""
    t = TOY_PHASE_LENGTH
    changed = frozenset(lab for lab, _, _ in TOY_PHASE3_INJECTIONS)
    return Scenario(
        [
            (t, LineFault((1, 2), frozenset({1, 2}))),
            (2 * t, InjectionChange(TOY_PHASE3_INJECTIONS, changed)),
            (3 * t, LineRestore((1, 2), frozenset({1, 2}))),
        ]
    )


def toy_phase_oracles(case: NetworkCase | None = None) -> list:
    """Brute-force optimum ``(b, loss)`` of the case seen in each toy phase."""
    case = case or load_case("toy5.json")
    fault = np.zeros(case.n_arcs, dtype=bool)
    fault[list(_line_arcs(case, (1, 2)))] = True
    new = apply_injections(case, {lab: (r1, r2) for lab, r1, r2 in TOY_PHASE3_INJECTIONS})
    return [
        brute_force_optimum(case, None),
        brute_force_optimum(case, fault),
        brute_force_optimum(new, fault),
        brute_force_optimum(new, None),
    ]


def run_toy_protocol(cfg: ac.SolverConfig | None = None, seed: int | None = None, scheduler="vectorized", case=None):
    """Four-phase resilience experiment on the 5-bus toy network.

    Returns
    -------
    reports : list of PhaseReport
    result : RunResult
    """
    cfg = cfg or ac.SolverConfig(delta=TOY_DELTA)
    case = case or load_case("toy5.json")
    sc = toy_scenario()
    sc.validate(case)
    result = run(case, cfg, scenario=sc, seed=seed, scheduler=scheduler)
    return phase_reports(result), result
