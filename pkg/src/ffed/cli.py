"""Command-line front end.

    ffed run       --problem rotcubic --method ffed --h 0.1
    ffed energy    --problem rotcubic --method ffed,avf,avfc,eei --h 0.1,0.05,0.01
    ffed converge  --problem rotcubic --T 1 --method ffed,avf --h 0.05,0.025,0.0125,0.00625
    ffed damping   --lambdas 0,1,10,1e3,1e6 --h 1
    ffed validate  --problem rotcubic

Every flag can also come from ``--config FILE`` (``key=value`` lines, keys
spelled like the long flags); explicit flags win. Exit codes: 0 success,
1 numerical failure, 2 invalid input.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from .errors import FFEDError, NonConvergenceWarning
from .harness import (
    ExperimentSpec,
    run_convergence_experiment,
    run_damping_experiment,
    run_energy_experiment,
    run_single,
)
from .integrators import Method
from .systems import get_problem, validate

log = logging.getLogger("ffed")

DEFAULTS = {
    "problem": "rotcubic",
    "method": "ffed",
    "h": None,
    "T": None,
    "r": 2,
    "quad_points": None,
    "fp_tol": 1e-14,
    "fp_maxiter": 10,
    "solver": "fixed_point",
    "policy": "warn_and_continue",
    "nodes": None,
    "out": "out",
    "jobs": 1,
    "seed": 0,
    "lambdas": "0,1,10,1e3,1e6",
    "samples": 100,
}

H_DEFAULTS = {
    "run": "0.1",
    "energy": "0.1,0.05,0.01",
    "converge": "0.05,0.025,0.0125,0.00625",
    "damping": "1",
}


class InvalidSpec(ValueError):
    pass


def _floats(text) -> list[float]:
    if isinstance(text, (int, float)):
        return [float(text)]
    try:
        return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise InvalidSpec(f"cannot parse number list {text!r}") from exc


def read_config(path: Path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidSpec(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in DEFAULTS:
            raise InvalidSpec(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value file mirroring the flags")
    common.add_argument("--problem", help="problem name, e.g. rotcubic, stiffdemo-n8, "
                        "'stiffdemo:n=8,norm=1e6' (default rotcubic)")
    common.add_argument("--method", help="method name(s), comma separated: "
                        "ffed, ffed-general, effed, ieuler, avf, avfc, eei")
    common.add_argument("--h", help="step size(s), comma separated")
    common.add_argument("--T", type=float, help="horizon (defaults to the problem's)")
    common.add_argument("--r", type=int, help="order parameter r (AVFC degree s); default 2")
    common.add_argument("--quad-points", type=int,
                        help="Gauss-Legendre points (default max(4, r+2), i.e. 4 for r<=2)")
    common.add_argument("--fp-tol", type=float, help="stage iteration tolerance (default 1e-14)")
    common.add_argument("--fp-maxiter", type=int, help="stage iteration cap (default 10)")
    common.add_argument("--solver", choices=["fixed_point", "newton"])
    common.add_argument("--policy", choices=["error", "warn_and_continue"],
                        help="what to do when the stage iteration hits its cap")
    common.add_argument("--nodes", help="r+1 comma-separated nodes 0=c1<...<c_{r+1}=1")
    common.add_argument("--out", help="output directory (default ./out)")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ffed", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="integrate one trajectory")
    sub.add_parser("energy", parents=[common], help="energy traces per method and step size")
    sub.add_parser("converge", parents=[common], help="global errors and fitted orders")
    damp = sub.add_parser("damping", parents=[common], help="amplification on y' = -lam y")
    damp.add_argument("--lambdas", help="comma-separated lambda values")
    val = sub.add_parser("validate", parents=[common], help="check the problem's model assumptions")
    val.add_argument("--samples", type=int)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS)
    opts["h"] = H_DEFAULTS.get(args.command)
    if args.command in ("energy", "converge"):
        opts["method"] = "ffed,avf,avfc,eei"
    if args.config is not None:
        try:
            opts.update(read_config(args.config))
        except OSError as exc:
            raise InvalidSpec(str(exc)) from exc
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    return opts


def _methods(opts) -> list[Method]:
    nodes = _floats(opts["nodes"]) if opts["nodes"] else None
    quad = int(opts["quad_points"]) if opts["quad_points"] else None
    methods = []
    for name in str(opts["method"]).split(","):
        methods.append(Method.from_options(
            name.strip(), r=int(opts["r"]), quad_points=quad, fp_tol=float(opts["fp_tol"]),
            fp_maxiter=int(opts["fp_maxiter"]), solver=opts["solver"], nodes=nodes,
            policy=opts["policy"]))
    return methods


def _spec(opts) -> ExperimentSpec:
    return ExperimentSpec(problem=opts["problem"], methods=_methods(opts),
                          step_sizes=_floats(opts["h"]),
                          T=float(opts["T"]) if opts["T"] is not None else None,
                          outputs=Path(opts["out"]), seed=int(opts["seed"]), jobs=int(opts["jobs"]))


def _execute(command: str, opts: dict) -> int:
    out = Path(opts["out"])
    if command == "run":
        spec = _spec(opts)
        problem = spec.build_problem()
        for method in spec.methods:
            for h in spec.step_sizes:
                path, traj = run_single(problem, method, h, out)
                inc = traj.energy_increments
                print(f"{method.label()} h={h:g}: {len(traj) - 1} steps, U {traj.energies[0]:.12g} -> "
                      f"{traj.energies[-1]:.12g}, max dU {inc.max() if inc.size else 0.0:.3e} -> {path}")
        return 0
    if command == "energy":
        summary = run_energy_experiment(_spec(opts))
        for run in summary["runs"]:
            flag = "monotone" if run["monotone"] else "NOT monotone"
            print(f"{run['method']} h={run['h']:g}: max dU {run['max_increment']:.3e} ({flag})")
        print(f"summary -> {out / 'energy_summary.json'}")
        return 0
    if command == "converge":
        spec = _spec(opts)
        summary = run_convergence_experiment(spec, cache_dir=out / "reference-cache")
        for label, order in sorted(summary["orders"].items()):
            print(f"{label}: fitted order {order:.3f}")
        print(f"errors -> {out / ('errors_' + summary['problem'] + '.csv')}")
        return 0
    if command == "damping":
        result = run_damping_experiment(_floats(opts["lambdas"]), _floats(opts["h"]), out=out)
        for row in result["rows"]:
            print(json.dumps(row))
        print(f"EFFED == exp(-z) and smallest in every row: {result['ok']}")
        return 0
    if command == "validate":
        problem = get_problem(opts["problem"])
        report = validate(problem.system, samples=int(opts["samples"]), seed=int(opts["seed"]))
        for c in report.checks:
            status = "pass" if c.passed else ("info" if c.informational else "FAIL")
            print(f"{c.name:20s} {status:5s} worst={c.worst:.3e}")
        return 0 if report.ok else 1
    raise InvalidSpec(f"unknown command {command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", NonConvergenceWarning)
    try:
        opts = resolve(args)
        return _execute(args.command, opts)
    except FFEDError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except (InvalidSpec, ValueError, KeyError, TypeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
