"""Command line front end.

Subcommands
-----------
solve     run one algorithm with restarts and print the summary row
evaluate  loss, voltages and feasibility of a configuration given by open lines
sweep     one summary row per penalty value
oracle    brute-force optimum of a small case

Exit codes: 0 success, 1 invalid input or infeasible request, 2 when no
restart reached a common configuration within the iteration limit.
"""

from __future__ import annotations

import argparse
import ast
import io as _io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .admm_core import SolverConfig
from .distributed import CsvTraceSink, RestartSummary, RunResult, summarize
from .errors import PdnrError
from .io import case_hash, load_case
from .model import brute_force_optimum, configuration_from_open_lines, evaluate, open_lines
from .sim import load_scenario, scenario_to_dict
from .variants import ALGORITHMS

RESULT_VERSION = 1

EXIT_OK, EXIT_INVALID, EXIT_NO_CONSENSUS = 0, 1, 2


def parse_lines(text: str) -> list[tuple[int, int]]:
    """Parse ``"(25,29),(18,33)"`` (or ``"25-29 18-33"``) into label pairs."""
    text = text.strip()
    if not text:
        return []
    if "(" in text:
        val = ast.literal_eval(f"[{text}]")
        pairs = [tuple(p) for p in val]
    else:
        pairs = [tuple(int(v) for v in tok.split("-")) for tok in text.replace(",", " ").split()]
    for p in pairs:
        if len(p) != 2:
            raise ValueError(f"bad line {p!r}")
    return [(int(a), int(b)) for a, b in pairs]


def parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


# --------------------------------------------------------------------------
# result bundles


@dataclass
class ResultBundle:
    """Everything a solve or sweep writes: metadata, summary rows, runs, traces."""

    metadata: dict
    rows: list
    runs: list = field(default_factory=list)
    traces: list = field(default_factory=list)  # (label, RunResult)

    def as_dict(self) -> dict:
        return {"version": RESULT_VERSION, "metadata": self.metadata, "summary": self.rows, "runs": self.runs}


def _num(x):
    return None if x is None else float(x)


def run_record(r: RunResult, restart: int) -> dict:
    return {
        "restart": restart,
        "seed": r.seed,
        "status": r.status,
        "iterations": r.iterations,
        "converged": r.converged,
        "feasible": r.feasible,
        "loss_kw": _num(r.loss_kw),
        "open_lines": [list(p) for p in r.open_lines],
        "final_e_k": _num(r.trace[-1].e_k) if r.trace else None,
        "majority_share": float(r.majority_share),
        "majority_loss_kw": _num(r.majority_loss_kw),
    }


def summary_row(summary: RestartSummary, delta: float) -> dict:
    best = summary.best
    return {
        "delta": delta,
        "average_loss_kw": summary.average_loss_kw,
        "min_loss_kw": summary.min_loss_kw,
        "max_loss_kw": summary.max_loss_kw,
        "average_iterations": summary.average_iterations,
        "feasible": summary.feasible_count,
        "restarts": summary.restarts,
        "feasibility_ratio": summary.ratio_text(),
        "best_open_lines": [list(p) for p in best.open_lines] if best else None,
        "best_loss_kw": _num(best.loss_kw) if best else None,
    }


def _trace_text(r: RunResult, per_agent: bool) -> str:
    buf = _io.StringIO()
    sink = CsvTraceSink(buf, per_agent)
    for m in r.trace:
        sink(m)
    if not r.trace:
        buf.write("iteration,e_k\n")
    return buf.getvalue()


def trace_paths(path, labels: list) -> list[Path]:
    """One trace file per run: the given path for a single run, ``stem_<label>`` otherwise."""
    p = Path(path)
    if len(labels) == 1:
        return [p]
    return [p.with_name(f"{p.stem}_{lab}{p.suffix}") for lab in labels]


def write_results(bundle: ResultBundle, trace_out=None, result_out=None, per_agent: bool = False) -> list[Path]:
    """Write CSV traces and the JSON summary; identical runs give identical bytes."""
    written = []
    if trace_out is not None and bundle.traces:
        labels = [lab for lab, _ in bundle.traces]
        for path, (_, r) in zip(trace_paths(trace_out, labels), bundle.traces):
            path.write_text(_trace_text(r, per_agent))
            written.append(path)
    if result_out is not None:
        p = Path(result_out)
        p.write_text(json.dumps(bundle.as_dict(), indent=1, sort_keys=True) + "\n")
        written.append(p)
    return written


def load_results(path) -> dict:
    return json.loads(Path(path).read_text())


# --------------------------------------------------------------------------
# commands


def _config(args, delta=None) -> SolverConfig:
    return SolverConfig(
        delta=args.delta if delta is None else delta,
        eta=args.eta,
        k_max=args.max_iters,
        sigma=args.sigma,
        restarts=args.restarts,
        seed=args.seed,
        reset_duals_on_injection=args.reset_duals,
    )


def _runner(args):
    algo = ALGORITHMS[args.algorithm]
    kw = {}
    if args.algorithm == "relax":
        kw["projection"] = args.projection
    elif args.projection != "mwrap":
        raise ValueError("--projection naive only applies to --algorithm relax")
    if args.algorithm != "centralized":
        kw["scheduler"] = args.scheduler
    return algo, kw


def _solve_rows(args, case, scenario, deltas):
    algo, kw = _runner(args)
    rows, records, traces = [], [], []
    for delta in deltas:
        cfg = _config(args, delta)
        runs = []
        for r in range(cfg.restarts):
            if args.algorithm == "centralized":
                if scenario is not None:
                    raise ValueError("scenarios are not supported by the centralized variant")
                res = algo(case, cfg, seed=cfg.seed + r)
            else:
                res = algo(case, cfg, scenario=scenario, seed=cfg.seed + r, **kw)
            runs.append(res)
            rec = run_record(res, r)
            if len(deltas) > 1:
                rec["delta"] = delta
            records.append(rec)
            label = f"r{r}" if len(deltas) == 1 else f"d{delta:g}_r{r}"
            traces.append((label, res))
        rows.append(summary_row(summarize(runs), delta))
    return rows, records, traces


def _metadata(args, case, scenario, deltas) -> dict:
    return {
        "algorithm": args.algorithm,
        "projection": args.projection,
        "deltas": deltas,
        "eta": args.eta if args.eta is not None else 1e-4 * case.n_nodes,
        "k_max": args.max_iters,
        "sigma": args.sigma,
        "seed": args.seed,
        "restarts": args.restarts,
        "case": case.name,
        "case_hash": case_hash(case),
        "scenario": scenario_to_dict(scenario) if scenario is not None else None,
        "package_version": __version__,
    }


def _fmt(x, nd=2):
    return "-" if x is None else f"{x:.{nd}f}"


def _print_rows(rows, out) -> None:
    print("delta      avg_loss_kw  min-max_kw          avg_iters  feasible", file=out)
    for r in rows:
        rng = "-" if r["min_loss_kw"] is None else f"{r['min_loss_kw']:.2f}-{r['max_loss_kw']:.2f}"
        print(f"{r['delta']:<10g} {_fmt(r['average_loss_kw']):<12} {rng:<19} {r['average_iterations']:<10.1f} {r['feasibility_ratio']}", file=out)


def _finish_solve(args, case, scenario, deltas, out) -> int:
    rows, records, traces = _solve_rows(args, case, scenario, deltas)
    bundle = ResultBundle(_metadata(args, case, scenario, deltas), rows, records, traces)
    write_results(bundle, args.trace_out, args.result_out, per_agent=args.per_agent)
    _print_rows(rows, out)
    for row in rows:
        if row["best_open_lines"] is not None:
            lines = ",".join(f"({a},{b})" for a, b in row["best_open_lines"])
            print(f"best (delta={row['delta']:g}): open {lines}  loss {row['best_loss_kw']:.2f} kW", file=out)
    if all(rec["status"] == "no_consensus" for rec in records):
        print("no restart reached a common configuration", file=sys.stderr)
        return EXIT_NO_CONSENSUS
    return EXIT_OK


def cmd_solve(args, out) -> int:
    case = load_case(args.case)
    scenario = load_scenario(args.scenario) if args.scenario else None
    if scenario is not None:
        scenario.validate(case)
    return _finish_solve(args, case, scenario, [args.delta], out)


def cmd_sweep(args, out) -> int:
    case = load_case(args.case)
    scenario = load_scenario(args.scenario) if args.scenario else None
    if scenario is not None:
        scenario.validate(case)
    return _finish_solve(args, case, scenario, parse_floats(args.deltas), out)


def cmd_evaluate(args, out) -> int:
    case = load_case(args.case)
    b = configuration_from_open_lines(case, parse_lines(args.open_switches))
    f, loss, rep = evaluate(case, b)
    print(f"loss: {loss:.2f} kW", file=out)
    print(f"open lines: {','.join(f'({a},{c})' for a, c in open_lines(case, b))}", file=out)
    for name, ok in rep.as_dict().items():
        if isinstance(ok, bool):
            print(f"{name}: {'ok' if ok else 'violated'}", file=out)
    if args.verbose:
        print("bus  u", file=out)
        for k, lab in enumerate(case.labels):
            print(f"{lab:<4} {f.u[k]:.6f}", file=out)
        print("from to  p_mw  q_mvar", file=out)
        g = case.digraph
        for k in np.flatnonzero(b):
            print(f"{case.labels[g.tails[k]]:<4} {case.labels[g.heads[k]]:<3} {f.p[k]:.6f} {f.q[k]:.6f}", file=out)
    if args.result_out:
        doc = {
            "version": RESULT_VERSION,
            "case_hash": case_hash(case),
            "open_lines": [list(p) for p in open_lines(case, b)],
            "loss_kw": loss,
            "report": rep.as_dict(),
            "u": {str(lab): float(f.u[k]) for k, lab in enumerate(case.labels)},
        }
        Path(args.result_out).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return EXIT_OK if rep.feasible else EXIT_INVALID


def cmd_oracle(args, out) -> int:
    case = load_case(args.case)
    forbidden = np.zeros(case.n_arcs, dtype=bool)
    for pair in parse_lines(args.forbid or ""):
        forbidden[list(case.line_arcs(pair))] = True
    b, loss = brute_force_optimum(case, forbidden)
    print(f"optimum: open {','.join(f'({a},{c})' for a, c in open_lines(case, b))}  loss {loss:.2f} kW", file=out)
    return EXIT_OK


def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--case", required=True, help="case JSON (bundled names such as baran33.json work)")
    p.add_argument("--algorithm", choices=sorted(ALGORITHMS), default="distributed")
    p.add_argument("--projection", choices=["mwrap", "naive"], default="mwrap", help="switch step of the relax variant")
    p.add_argument("--eta", type=float, default=None, help="stopping tolerance (default 1e-4 * |V|)")
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", default=None, help="scenario JSON")
    p.add_argument("--scheduler", choices=["vectorized", "sequential", "threaded"], default="vectorized")
    p.add_argument("--reset-duals", action="store_true", help="zero the multipliers on injection changes")
    p.add_argument("--trace-out", default=None, help="CSV trace path (one file per run)")
    p.add_argument("--per-agent", action="store_true", help="add per-agent s/r columns to traces")
    p.add_argument("--result-out", default=None, help="JSON summary path")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pdnr", description="Radial reconfiguration of distribution networks.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run an algorithm with restarts")
    _solver_flags(p)
    p.add_argument("--delta", type=float, default=1.0)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="summary row per penalty value")
    _solver_flags(p)
    p.add_argument("--deltas", required=True, help="e.g. '0.1,1,10,100,1e8'")
    p.set_defaults(func=cmd_sweep, delta=None)

    p = sub.add_parser("evaluate", help="evaluate a configuration")
    p.add_argument("--case", required=True)
    p.add_argument("--open-switches", required=True, help="e.g. '(25,29),(18,33),(9,15),(8,21),(12,22)'")
    p.add_argument("--verbose", action="store_true", help="print voltages and flows")
    p.add_argument("--result-out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", help="brute-force optimum (at most 10 buses)")
    p.add_argument("--case", required=True)
    p.add_argument("--forbid", default=None, help="lines out of service, e.g. '(1,2)'")
    p.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except (PdnrError, ValueError, KeyError, FileNotFoundError, SyntaxError) as err:
        if isinstance(err, FileNotFoundError):
            msg = f"file not found: {err.filename or err.args[0]}"
        elif isinstance(err, KeyError) and err.args:
            msg = err.args[0]
        else:
            msg = err
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
